import numpy as np
import pytest

from rrulab.ensemble_engine import (
    ConfigError,
    ExperimentConfig,
    config_from_mapping,
    estimate_moment,
    geometric_checkpoints,
    load_config,
    load_paths_csv,
    load_summary,
    parse_config_text,
    run_ensemble,
)
from rrulab.reinforce_dist import point_mass, two_point

BASE_KV = {
    "x": "1", "y": "1",
    "mu.kind": "point_mass", "mu.mean": "1",
    "nu.kind": "point_mass", "nu.mean": "1",
    "N": "200", "num_paths": "8", "master_seed": "424242",
}


def _cfg(**overrides) -> ExperimentConfig:
    kv = dict(BASE_KV)
    kv.update({k: str(v) for k, v in overrides.items()})
    return config_from_mapping(kv)


def test_parse_config_text_comments_and_blanks():
    kv = parse_config_text("# experiment\nx=1\n\n y = 2 \n")
    assert kv == {"x": "1", "y": "2"}
    with pytest.raises(ConfigError):
        parse_config_text("x 1")


def test_missing_key_named_in_error():
    kv = dict(BASE_KV)
    del kv["mu.kind"]
    with pytest.raises(ConfigError, match="mu.kind"):
        config_from_mapping(kv)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        _cfg(num_paths=0)
    with pytest.raises(ConfigError):
        _cfg(x=-1, y=0)
    with pytest.raises(ConfigError):
        _cfg(checkpoints="500")  # beyond N
    with pytest.raises(ConfigError):
        _cfg(coupling_mode="lower")
    with pytest.raises(ConfigError, match="moments"):
        _cfg(moments="1;2")


def test_geometric_checkpoints_schedule():
    cps = geometric_checkpoints(10_000)
    assert cps[-1] == 10_000 and cps[0] == 1
    assert all(a < b for a, b in zip(cps, cps[1:]))
    # halving from the top: 10000, 5000, 2500, ...
    assert {10_000, 5000, 2500, 1250, 625}.issubset(set(cps))
    assert geometric_checkpoints(1) == (1,)


def test_final_step_always_checkpointed():
    cfg = _cfg(checkpoints="10,50")
    assert cfg.checkpoints == (10, 50, 200)


def test_load_config_file(tmp_path):
    text = "\n".join(f"{k}={v}" for k, v in BASE_KV.items())
    p = tmp_path / "exp.cfg"
    p.write_text(text + "\nmoments=1:1,1:2\n")
    cfg = load_config(p)
    assert cfg.n_steps == 200
    assert cfg.moment_targets == ((1.0, 1.0), (1.0, 2.0))


def test_run_ensemble_reproducible_byte_identical(tmp_path):
    cfg = _cfg(**{"mu.kind": "two_point", "mu.beta": "2", "mu.mean": "1",
                  "nu.kind": "two_point", "nu.beta": "2", "nu.mean": "1"})
    run_ensemble(cfg, tmp_path / "a")
    run_ensemble(cfg, tmp_path / "b")
    assert (tmp_path / "a/paths.csv").read_bytes() == (tmp_path / "b/paths.csv").read_bytes()
    assert (tmp_path / "a/summary.json").read_bytes() == (tmp_path / "b/summary.json").read_bytes()


def test_run_ensemble_worker_count_invariant(tmp_path):
    cfg = _cfg(num_paths=13, N=150)
    run_ensemble(cfg, tmp_path / "w1", workers=1)
    run_ensemble(cfg, tmp_path / "w3", workers=3)
    assert (tmp_path / "w1/paths.csv").read_bytes() == (tmp_path / "w3/paths.csv").read_bytes()
    assert (tmp_path / "w1/summary.json").read_bytes() == (tmp_path / "w3/summary.json").read_bytes()


def test_deterministic_unit_growth_on_every_path(tmp_path):
    cfg = _cfg(num_paths=6, N=100)
    _, table = run_ensemble(cfg, tmp_path)
    for n in table.checkpoint_ns:
        assert np.all(table.at(int(n), "d") == 2.0 + n)


def test_histogram_masses_sum_to_one(tmp_path):
    cfg = _cfg(num_paths=50, N=300, **{"mu.kind": "two_point", "mu.beta": "2",
                                       "mu.mean": "1", "nu.kind": "two_point",
                                       "nu.beta": "2", "nu.mean": "1"})
    summary, _ = run_ensemble(cfg, tmp_path)
    for masses in summary.z_hist:
        assert abs(sum(masses) - 1.0) <= 1e-12


def test_martingale_mean_near_zero(tmp_path):
    cfg = _cfg(num_paths=400, N=400, master_seed=9,
               **{"mu.kind": "two_point", "mu.beta": "2", "mu.mean": "1",
                  "nu.kind": "two_point", "nu.beta": "2", "nu.mean": "1"})
    summary, _ = run_ensemble(cfg, tmp_path)
    for mean, se, n in zip(summary.m_mean, summary.m_se, summary.checkpoint_ns):
        if n == 0:
            continue
        assert abs(mean) <= 4 * se + 1e-15


def test_summary_final_z_matches_table(tmp_path):
    cfg = _cfg(num_paths=10, N=50)
    summary, table = run_ensemble(cfg, tmp_path)
    assert summary.final_z == [float(v) for v in table.final_z]
    assert len(summary.final_z) == cfg.num_paths


def test_estimate_moment_exact_cases(tmp_path):
    # deterministic unit growth: D_n = 2 + n exactly
    cfg = _cfg(num_paths=4, N=98, checkpoints="98", moments="0:1,1:2")
    summary, _ = run_ensemble(cfg, tmp_path)
    assert estimate_moment(summary, 98, 0.0, 1.0) == 1.0 / 100.0
    assert estimate_moment(summary, 98, 1.0, 2.0) == (1.0 + 100.0) ** -2
    assert estimate_moment(summary, 98, 5.0, 0.0) == 1.0  # alpha=0 is exact
    with pytest.raises(ConfigError):
        estimate_moment(summary, 98, 2.0, 1.0)
    with pytest.raises(ConfigError):
        estimate_moment(summary, 97, 1.0, 2.0)


def test_csv_roundtrip(tmp_path):
    cfg = _cfg(num_paths=7, N=120, **{"nu.kind": "two_point", "nu.beta": "2",
                                      "nu.mean": "1"})
    _, table = run_ensemble(cfg, tmp_path)
    loaded = load_paths_csv(tmp_path / "paths.csv")
    assert loaded.num_paths == table.num_paths
    assert loaded.n_steps == table.n_steps
    assert np.array_equal(loaded.checkpoint_ns, table.checkpoint_ns)
    for col in ("z", "d", "a", "m", "sq_qx", "sq_qy", "sqrtk_absda", "k2_q4"):
        for n in table.checkpoint_ns:
            assert np.array_equal(loaded.at(int(n), col), table.at(int(n), col))
    summary = load_summary(tmp_path / "summary.json")
    assert summary.num_paths == cfg.num_paths


def test_decomposition_identity_at_all_checkpoints(tmp_path):
    cfg = _cfg(num_paths=30, N=1000, master_seed=5150,
               **{"mu.kind": "two_point", "mu.beta": "2", "mu.mean": "1",
                  "nu.kind": "uniform_interval", "nu.a": "0", "nu.b": "2"})
    _, table = run_ensemble(cfg, tmp_path)
    z0 = 0.5
    err = np.abs(table.z - z0 - table.a - table.m)
    assert err.max() <= 1e-10
    assert table.decomp_max_err.max() <= 1e-10
    assert table.steps_audited == 30 * 1000
