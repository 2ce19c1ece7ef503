import numpy as np
import pytest

from rrulab import PreconditionError, check_coupling, make_dist, run_coupled, run_path
from rrulab.coupling_lab import COUPLED_CSV_HEADER, shifted_spec, write_coupled_csv
from rrulab.ensemble_engine import ExperimentConfig, geometric_checkpoints
from rrulab.reinforce_dist import point_mass, two_point, uniform_interval


def _cfg(mu, nu, n_steps=2000, seed=24601, paths=1):
    return ExperimentConfig(
        x=1.0, y=1.0, mu_spec=mu, nu_spec=nu, n_steps=n_steps, num_paths=paths,
        master_seed=seed, checkpoints=tuple(geometric_checkpoints(n_steps)),
    )


def test_shifted_spec_support_and_mean():
    base = make_dist(two_point(2, 1))
    shifted = make_dist(shifted_spec(two_point(2, 1), 1.0))
    # support moves to {1, 3}; the bound grows by the shift
    assert shifted.atoms.tolist() == [1.0, 3.0]
    assert shifted.beta == base.beta + 1.0
    assert shifted.mean == base.mean + 1.0
    uni = make_dist(shifted_spec(uniform_interval(0, 2), 0.5))
    assert (uni.a, uni.b, uni.beta) == (0.5, 2.5, 2.5)
    assert shifted_spec(point_mass(1), 0.0) == point_mass(1)
    with pytest.raises(ValueError):
        shifted_spec(point_mass(1), -0.5)


def test_equal_means_urns_coincide():
    # zero shift: the shadow urn replays the primary urn step for step
    cfg = _cfg(two_point(2, 1), two_point(2, 1), n_steps=1000)
    trace = run_coupled(cfg, 0)
    assert np.array_equal(trace.x, trace.x_shadow)
    assert np.array_equal(trace.y, trace.y_shadow)
    assert np.array_equal(trace.delta, trace.delta_shadow)
    assert trace.all_flags_hold


def test_coupled_primary_matches_run_path():
    # the coupled kernel's primary urn is the ordinary urn on the same streams
    mu, nu = point_mass(2), point_mass(1)
    cfg = _cfg(mu, nu, n_steps=512)
    trace = run_coupled(cfg, 3)
    path = run_path(cfg, 3)
    for cp in path.checkpoints:
        if cp.n == 0:
            continue
        assert trace.z[cp.n - 1] == cp.z


def test_dominance_flags_single_path():
    cfg = _cfg(point_mass(2), point_mass(1), n_steps=10_000)
    trace = run_coupled(cfg, 0)
    assert trace.all_flags_hold
    assert np.all(trace.x_shadow <= trace.x)
    assert np.all(trace.y_shadow >= trace.y)
    assert np.all(trace.z >= trace.z_shadow)
    assert np.all(trace.delta >= trace.delta_shadow)
    # shadow white reinforcement is R_Y + 1 = 2 surely here
    assert trace.shadow_white_mean == 2.0


def test_first_step_black_draw_equality():
    # u <= Z_0 on both urns: identical first-step behavior
    cfg = _cfg(point_mass(2), point_mass(1), n_steps=1)
    found = False
    for idx in range(200):
        trace = run_coupled(cfg, idx)
        if trace.delta[0]:
            assert trace.delta_shadow[0]
            assert trace.x[1] == trace.x_shadow[1]
            assert trace.y[1] == trace.y_shadow[1]
            found = True
            break
    assert found


def test_check_coupling_aggregate():
    cfg = _cfg(point_mass(2), two_point(2, 0.5), n_steps=1000)
    check = check_coupling(cfg, num_paths=50)
    assert check.all_hold
    assert check.steps_checked == 50 * 1000
    # shadow white mean equals mean(mu) within 4 standard errors
    mu = make_dist(cfg.mu_spec)
    assert abs(check.shadow_white_mean - mu.mean) <= 4 * check.shadow_white_se


def test_coupling_rejects_wrong_order():
    cfg = _cfg(point_mass(1), point_mass(2))
    with pytest.raises(PreconditionError):
        run_coupled(cfg, 0)


def test_coupled_csv(tmp_path):
    cfg = _cfg(point_mass(2), point_mass(1), n_steps=50)
    trace = run_coupled(cfg, 0)
    out = tmp_path / "coupled.csv"
    write_coupled_csv(out, trace)
    lines = out.read_text().splitlines()
    assert lines[0] == COUPLED_CSV_HEADER
    assert len(lines) == 51
    first = lines[1].split(",")
    assert first[0] == "1"
    assert set(first[3:]) <= {"0", "1"}
