"""Two-urn coupling with pathwise dominance invariants.

When the black reinforcement mean exceeds the white one, the proportion
process can be compared pathwise to a shadow urn that consumes exactly the
same random streams but whose white reinforcement is shifted up by the
mean gap, R~_Y = R_Y + (mean(mu) - mean(nu)).  The shadow urn is then an
equal-means urn, and induction gives, surely at every step,

    X~ <= X,   Y~ >= Y,   Z >= Z~,   delta >= delta~.

These four flags are asserted exactly (no tolerance): before the first
divergent draw the two urns are bit-identical, and after it the gaps are
macroscopic, so floating point cannot flip a comparison.

Stream sharing is by construction: both urns read the same counter-based
uniforms keyed by (master_seed, path_index, step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytics import PreconditionError
from .reinforce_dist import (
    ReinforcementSpec,
    finite_discrete,
    make_dist,
    point_mass,
    quantile,
    sample_pair,
    uniform_interval,
)
from . import streams

COUPLED_CSV_HEADER = "step,Z,Z_shadow,delta,delta_shadow,flag_x,flag_y,flag_z,flag_delta"


def shifted_spec(spec: ReinforcementSpec, shift: float) -> ReinforcementSpec:
    """The law of R + shift; the support bound becomes beta + shift."""
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    if shift == 0:
        return spec
    dist = make_dist(spec)
    beta = dist.beta + shift
    if dist.kind == "uniform_interval":
        return uniform_interval(dist.a + shift, dist.b + shift, beta)
    if dist.kind == "point_mass":
        return point_mass(dist.mean + shift, beta)
    # two_point shifts off {0, beta}, so it becomes a generic atomic law
    return finite_discrete([v + shift for v in dist.atoms], list(dist.probs), beta)


@dataclass(frozen=True)
class CoupledTrace:
    """Paired trajectories of the primary and shadow urns for one path."""

    path_index: int
    seed: int
    n_steps: int
    x: np.ndarray
    y: np.ndarray
    x_shadow: np.ndarray
    y_shadow: np.ndarray
    z: np.ndarray
    z_shadow: np.ndarray
    delta: np.ndarray
    delta_shadow: np.ndarray
    flags: np.ndarray  # (n_steps, 4): x, y, z, delta dominance
    shadow_white_mean: float

    @property
    def all_flags_hold(self) -> bool:
        return bool(self.flags.all())


@dataclass(frozen=True)
class CouplingCheck:
    """Aggregate dominance audit over a batch of coupled paths."""

    num_paths: int
    n_steps: int
    steps_checked: int
    violations: int
    shadow_white_mean: float
    shadow_white_se: float

    @property
    def all_hold(self) -> bool:
        return self.violations == 0


def _coupled_kernel(cfg, path_indices, record: bool):
    mu = make_dist(cfg.mu_spec)
    nu = make_dist(cfg.nu_spec)
    if mu.mean < nu.mean:
        raise PreconditionError(
            f"coupling requires mean(mu) >= mean(nu), got {mu.mean} vs {nu.mean}"
        )
    shift = mu.mean - nu.mean
    idx = np.asarray(path_indices, dtype=np.uint64)
    b = idx.size
    n_steps = int(cfg.n_steps)

    x = np.full(b, float(cfg.x))
    y = np.full(b, float(cfg.y))
    xs = x.copy()
    ys = y.copy()

    rec = None
    if record:
        rec = {
            "x": np.zeros((n_steps + 1, b)), "y": np.zeros((n_steps + 1, b)),
            "xs": np.zeros((n_steps + 1, b)), "ys": np.zeros((n_steps + 1, b)),
            "z": np.zeros((n_steps, b)), "zs": np.zeros((n_steps, b)),
            "delta": np.zeros((n_steps, b), dtype=bool),
            "deltas": np.zeros((n_steps, b), dtype=bool),
            "flags": np.zeros((n_steps, b, 4), dtype=bool),
        }
        rec["x"][0], rec["y"][0] = x, y
        rec["xs"][0], rec["ys"][0] = xs, ys

    violations = 0
    rsum = 0.0
    rsumsq = 0.0
    for k in range(1, n_steps + 1):
        u, v, w = streams.step_uniforms(cfg.master_seed, idx, k)
        v, w = sample_pair(cfg.coupling_mode, v, w)
        r_x = quantile(mu, v)
        r_y = quantile(nu, w)
        r_y_shadow = r_y + shift

        delta = u <= x / (x + y)
        delta_s = u <= xs / (xs + ys)
        x = x + np.where(delta, r_x, 0.0)
        y = y + np.where(delta, 0.0, r_y)
        xs = xs + np.where(delta_s, r_x, 0.0)
        ys = ys + np.where(delta_s, 0.0, r_y_shadow)

        z = x / (x + y)
        zs = xs / (xs + ys)
        f_x = xs <= x
        f_y = ys >= y
        f_z = z >= zs
        f_d = delta >= delta_s
        ok = f_x & f_y & f_z & f_d
        violations += int(b - ok.sum())
        rsum += float(r_y_shadow.sum())
        rsumsq += float((r_y_shadow * r_y_shadow).sum())

        if record:
            rec["x"][k], rec["y"][k] = x, y
            rec["xs"][k], rec["ys"][k] = xs, ys
            rec["z"][k - 1], rec["zs"][k - 1] = z, zs
            rec["delta"][k - 1], rec["deltas"][k - 1] = delta, delta_s
            rec["flags"][k - 1, :, 0] = f_x
            rec["flags"][k - 1, :, 1] = f_y
            rec["flags"][k - 1, :, 2] = f_z
            rec["flags"][k - 1, :, 3] = f_d

    draws = n_steps * b
    mean = rsum / draws if draws else 0.0
    var = max(0.0, rsumsq / draws - mean * mean) if draws else 0.0
    se = (var / draws) ** 0.5 if draws else 0.0
    return rec, violations, mean, se, n_steps, b


def run_coupled(cfg, path_index: int = 0) -> CoupledTrace:
    """Simulate one coupled pair on shared streams and record every step."""
    rec, violations, mean, _, n_steps, _ = _coupled_kernel(cfg, [path_index], record=True)
    return CoupledTrace(
        path_index=int(path_index),
        seed=int(cfg.master_seed),
        n_steps=n_steps,
        x=rec["x"][:, 0],
        y=rec["y"][:, 0],
        x_shadow=rec["xs"][:, 0],
        y_shadow=rec["ys"][:, 0],
        z=rec["z"][:, 0],
        z_shadow=rec["zs"][:, 0],
        delta=rec["delta"][:, 0],
        delta_shadow=rec["deltas"][:, 0],
        flags=rec["flags"][:, 0, :],
        shadow_white_mean=mean,
    )


def check_coupling(cfg, num_paths: int) -> CouplingCheck:
    """Audit the dominance flags over ``num_paths`` coupled paths."""
    _, violations, mean, se, n_steps, b = _coupled_kernel(
        cfg, np.arange(num_paths, dtype=np.uint64), record=False
    )
    return CouplingCheck(
        num_paths=b,
        n_steps=n_steps,
        steps_checked=n_steps * b,
        violations=violations,
        shadow_white_mean=mean,
        shadow_white_se=se,
    )


def write_coupled_csv(path, trace: CoupledTrace) -> None:
    lines = [COUPLED_CSV_HEADER]
    for k in range(trace.n_steps):
        f = trace.flags[k]
        lines.append(
            f"{k + 1},{trace.z[k]:.17g},{trace.z_shadow[k]:.17g},"
            f"{int(trace.delta[k])},{int(trace.delta_shadow[k])},"
            f"{int(f[0])},{int(f[1])},{int(f[2])},{int(f[3])}"
        )
    lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
