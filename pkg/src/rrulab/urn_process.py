"""Exact single-path dynamics of the two-color randomly reinforced urn.

State is the pair (X, Y) of black and white ball masses.  At step n+1 a
uniform U decides the drawn color (black iff U <= Z_n, with Z_n = X_n / D_n
and D_n = X_n + Y_n), and the drawn color's mass grows by an
inverse-transform sample from its reinforcement law:

    X_{n+1} = X_n + R_X(n+1) * delta_{n+1}
    Y_{n+1} = Y_n + R_Y(n+1) * (1 - delta_{n+1})

Alongside the state, the path carries the Doob decomposition of the
proportion process, Z_n = Z_0 + M_n + A_n: the compensator increment is
previsible and analytic,

    dA_{n+1} = Z_n (1 - Z_n) * drift_factor(mu, nu, D_n),

with drift_factor(mu, nu, d) = E[R_X/(R_X+d)] - E[R_Y/(R_Y+d)], and the
martingale increment is dM = dZ - dA.  Each step also satisfies the exact
algebraic identity

    Z_n - Z_{n+1} = (R_{n+1} / D_{n+1}) * (Z_n - delta_{n+1}),

which the test suite fuzzes at the 1e-12 level, and produces the
normalized reinforcements Q (reinforcement over cumulative realized
reinforcement, with the all-zero convention Q = 1) whose squared tail sums
drive the variance side of the limit theory.

Paths are strictly sequential internally; distinct paths derive their
randomness purely from (master_seed, path_index) and may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .reinforce_dist import Dist, make_dist, quantile, expect_fraction, sample_pair
from . import streams


@dataclass(frozen=True)
class UrnState:
    """Urn composition before the (n+1)-th draw."""

    x: float
    y: float
    n: int = 0

    @property
    def d(self) -> float:
        return self.x + self.y

    @property
    def z(self) -> float:
        return self.x / (self.x + self.y)


def init(x: float, y: float) -> UrnState:
    """Initial state with masses (x, y); requires x >= 0, y >= 0, x + y > 0."""
    x, y = float(x), float(y)
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError("initial masses must be finite")
    if x < 0.0 or y < 0.0:
        raise ValueError(f"initial masses must be nonnegative, got ({x}, {y})")
    if x + y <= 0.0:
        raise ValueError("initial total mass must be positive")
    return UrnState(x=x, y=y, n=0)


class StepRecord(NamedTuple):
    """Everything realized by one draw-and-reinforce transition."""

    delta: int
    r_x: float
    r_y: float
    r: float
    q: float
    q_x: float
    q_y: float
    dA: float
    dM: float
    z_after: float


class Checkpoint(NamedTuple):
    """Per-checkpoint statistics recorded along a path."""

    n: int
    z: float
    d: float
    a: float
    m: float
    prefix_sq_qx: float
    prefix_sq_qy: float
    prefix_sqrtk_absdA: float
    prefix_k2_q4: float


@dataclass(frozen=True)
class PathTrace:
    """One simulated path: seed, checkpointed statistics, final state."""

    path_index: int
    seed: int
    checkpoints: tuple[Checkpoint, ...]
    final_n: int
    final_z: float
    final_d: float

    def __post_init__(self):
        ns = [c.n for c in self.checkpoints]
        if ns != sorted(ns):
            raise ValueError("checkpoints must be sorted by n")


# ---------------------------------------------------------------------------
# drift factor (normalized compensator increment) and its envelope


def drift_factor(mu: Dist, nu: Dist, d):
    """E[R_X/(R_X+d)] - E[R_Y/(R_Y+d)]; zero whenever mu == nu.

    Scales the compensator increment: E(dZ | state) = z(1-z) * drift_factor.
    ``d`` may be a scalar or an ndarray of positive urn sizes.
    """
    return expect_fraction(mu, d) - expect_fraction(nu, d)


def drift_factor_bounds(mu: Dist, nu: Dist, d):
    """Sharp convexity envelope (lo, hi) with lo <= drift_factor <= hi.

    Each expectation obeys mean/(beta+d) <= E[R/(R+d)] <= mean/(mean+d)
    (linear-interpolation bound below, Jensen above, for the concave map
    x -> x/(x+d)), hence

        lo = m_mu/(beta_mu+d) - m_nu/(m_nu+d)
        hi = m_mu/(m_mu+d) - m_nu/(beta_nu+d).

    For equal means m and common bound beta both |lo| and |hi| are at most
    m(beta-m) / ((beta+d)(m+d)).
    """
    arr = np.asarray(d, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("d must be positive")
    # The linear bound m/(beta+d) is evaluated as (m/beta)*(beta/(beta+d)),
    # the exact float sequence expect_fraction produces for the attaining
    # two-point law, so the sandwich stays exact (not merely within an ulp)
    # when a bound is achieved.  The Jensen bound m/(m+d) already matches
    # the point-mass evaluation.
    lo = (mu.mean / mu.beta) * (mu.beta / (mu.beta + arr)) - nu.mean / (nu.mean + arr)
    hi = mu.mean / (mu.mean + arr) - (nu.mean / nu.beta) * (nu.beta / (nu.beta + arr))
    if np.ndim(d) == 0:
        return float(lo), float(hi)
    return lo, hi


def step_identity_residual(z_before, z_after, r, d_after, delta):
    """|(Z_n - Z_{n+1}) - (R_{n+1}/D_{n+1}) (Z_n - delta_{n+1})|, exact form."""
    return np.abs((z_before - z_after) - (r / d_after) * (z_before - delta))


# ---------------------------------------------------------------------------
# one transition, vectorized over a batch of urns


def _advance(x, y, z, u, v, w, mu: Dist, nu: Dist, sum_r):
    """Advance a batch of urns by one step; returns all per-step quantities.

    Inputs are float64 ndarrays of one common shape; (v, w) must already be
    copula-mapped.  The exact operation order here is the single source of
    truth for the dynamics: the scalar ``step`` and the path kernel both
    call it, which keeps their outputs bit-identical.
    """
    r_x = quantile(mu, v)
    r_y = quantile(nu, w)
    d0 = x + y
    da = z * (1.0 - z) * (expect_fraction(mu, d0) - expect_fraction(nu, d0))
    delta = u <= z
    x1 = x + np.where(delta, r_x, 0.0)
    y1 = y + np.where(delta, 0.0, r_y)
    d1 = x1 + y1
    z1 = x1 / d1
    r = np.where(delta, r_x, r_y)
    sum_r1 = sum_r + r
    pos = sum_r1 > 0.0
    q_x = np.divide(r_x, sum_r1, out=np.ones_like(sum_r1), where=pos)
    q_y = np.divide(r_y, sum_r1, out=np.ones_like(sum_r1), where=pos)
    q = np.where(delta, q_x, q_y)
    dm = (z1 - z) - da
    return x1, y1, z1, d1, delta, r_x, r_y, r, q, q_x, q_y, da, dm, sum_r1


def step(
    state: UrnState,
    u: float,
    v: float,
    w: float,
    mu: Dist,
    nu: Dist,
    sum_r: float,
    mode: str = "independent",
) -> tuple[UrnState, StepRecord]:
    """One exact draw-and-reinforce transition from ``state``.

    ``u`` selects the color (black iff u <= Z, inclusive); ``(v, w)`` are
    mapped through ``sample_pair(mode, ...)`` and inverted through the
    reinforcement quantiles.  ``sum_r`` is the cumulative realized
    reinforcement before this step (needed for the Q normalization).
    """
    for name, val in (("u", u), ("v", v), ("w", w)):
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {val}")
    vv, ww = sample_pair(mode, np.float64(v), np.float64(w))
    arr = lambda t: np.array([t], dtype=float)  # noqa: E731
    x1, y1, z1, _, delta, r_x, r_y, r, q, q_x, q_y, da, dm, _ = _advance(
        arr(state.x), arr(state.y), arr(state.z), arr(u), arr(vv), arr(ww), mu, nu, arr(sum_r)
    )
    new_state = UrnState(x=float(x1[0]), y=float(y1[0]), n=state.n + 1)
    record = StepRecord(
        delta=int(delta[0]),
        r_x=float(r_x[0]),
        r_y=float(r_y[0]),
        r=float(r[0]),
        q=float(q[0]),
        q_x=float(q_x[0]),
        q_y=float(q_y[0]),
        dA=float(da[0]),
        dM=float(dm[0]),
        z_after=float(z1[0]),
    )
    return new_state, record


# ---------------------------------------------------------------------------
# whole-path kernel, vectorized across paths


@dataclass
class BlockTrace:
    """Columnar checkpoint statistics for a batch of paths (rows: checkpoint)."""

    path_indices: np.ndarray
    checkpoint_ns: np.ndarray
    z: np.ndarray
    d: np.ndarray
    a: np.ndarray
    m: np.ndarray
    sq_qx: np.ndarray
    sq_qy: np.ndarray
    sqrtk_absda: np.ndarray
    k2_q4: np.ndarray
    final_z: np.ndarray
    final_d: np.ndarray
    decomp_max_err: np.ndarray
    steps_audited: int


def _kahan_add(total: np.ndarray, comp: np.ndarray, inc: np.ndarray) -> None:
    """In-place compensated accumulation total += inc."""
    y = inc - comp
    t = total + y
    comp[:] = (t - total) - y
    total[:] = t


def simulate_block(
    x0: float,
    y0: float,
    mu: Dist,
    nu: Dist,
    mode: str,
    n_steps: int,
    checkpoint_ns: Sequence[int],
    master_seed: int,
    path_indices: Sequence[int],
) -> BlockTrace:
    """Simulate a batch of independent paths and record checkpoint statistics.

    Deterministic given (master_seed, path_indices) regardless of how paths
    are grouped into batches: every uniform is keyed by the absolute path
    index.  Accumulators for A, M and the four prefix sums use compensated
    summation.  The Doob identity |Z_n - Z_0 - A_n - M_n| is audited at
    every step; the per-path maximum comes back in ``decomp_max_err``.
    """
    idx = np.asarray(path_indices, dtype=np.uint64)
    b = idx.size
    cps = sorted({int(n) for n in checkpoint_ns})
    if cps and (cps[0] < 0 or cps[-1] > n_steps):
        raise ValueError("checkpoints must lie in [0, n_steps]")
    cp_rows = {n: i for i, n in enumerate(cps)}

    x = np.full(b, float(x0))
    y = np.full(b, float(y0))
    z = x / (x + y)
    z_start = z.copy()
    sum_r = np.zeros(b)
    acc = {name: (np.zeros(b), np.zeros(b)) for name in
           ("a", "m", "sq_qx", "sq_qy", "sqrtk_absda", "k2_q4")}
    decomp_err = np.zeros(b)

    out = {name: np.zeros((len(cps), b)) for name in
           ("z", "d", "a", "m", "sq_qx", "sq_qy", "sqrtk_absda", "k2_q4")}

    def record(n: int) -> None:
        i = cp_rows[n]
        out["z"][i] = z
        out["d"][i] = x + y
        for name in ("a", "m", "sq_qx", "sq_qy", "sqrtk_absda", "k2_q4"):
            out[name][i] = acc[name][0]

    if 0 in cp_rows:
        record(0)

    for k in range(1, int(n_steps) + 1):
        u, v, w = streams.step_uniforms(master_seed, idx, k)
        v, w = sample_pair(mode, v, w)
        x, y, z1, _, _, _, _, _, q, q_x, q_y, da, dm, sum_r = _advance(
            x, y, z, u, v, w, mu, nu, sum_r
        )
        z = z1
        _kahan_add(*acc["a"], da)
        _kahan_add(*acc["m"], dm)
        _kahan_add(*acc["sq_qx"], q_x * q_x)
        _kahan_add(*acc["sq_qy"], q_y * q_y)
        _kahan_add(*acc["sqrtk_absda"], math.sqrt(k) * np.abs(da))
        qq = q * q
        _kahan_add(*acc["k2_q4"], float((k - 1) * (k - 1)) * (qq * qq))
        np.maximum(
            decomp_err, np.abs(z - z_start - acc["a"][0] - acc["m"][0]), out=decomp_err
        )
        if k in cp_rows:
            record(k)

    return BlockTrace(
        path_indices=idx.astype(np.int64),
        checkpoint_ns=np.asarray(cps, dtype=np.int64),
        z=out["z"],
        d=out["d"],
        a=out["a"],
        m=out["m"],
        sq_qx=out["sq_qx"],
        sq_qy=out["sq_qy"],
        sqrtk_absda=out["sqrtk_absda"],
        k2_q4=out["k2_q4"],
        final_z=z.copy(),
        final_d=x + y,
        decomp_max_err=decomp_err,
        steps_audited=int(n_steps) * b,
    )


def run_path(cfg, path_index: int) -> PathTrace:
    """Simulate one path of an experiment; deterministic in (seed, index).

    ``cfg`` is an ExperimentConfig (any object with the same fields works).
    """
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    mu = make_dist(cfg.mu_spec)
    nu = make_dist(cfg.nu_spec)
    block = simulate_block(
        cfg.x,
        cfg.y,
        mu,
        nu,
        cfg.coupling_mode,
        cfg.n_steps,
        cfg.checkpoints,
        cfg.master_seed,
        [path_index],
    )
    checkpoints = tuple(
        Checkpoint(
            n=int(n),
            z=float(block.z[i, 0]),
            d=float(block.d[i, 0]),
            a=float(block.a[i, 0]),
            m=float(block.m[i, 0]),
            prefix_sq_qx=float(block.sq_qx[i, 0]),
            prefix_sq_qy=float(block.sq_qy[i, 0]),
            prefix_sqrtk_absdA=float(block.sqrtk_absda[i, 0]),
            prefix_k2_q4=float(block.k2_q4[i, 0]),
        )
        for i, n in enumerate(block.checkpoint_ns)
    )
    return PathTrace(
        path_index=int(path_index),
        seed=int(cfg.master_seed),
        checkpoints=checkpoints,
        final_n=int(cfg.n_steps),
        final_z=float(block.final_z[0]),
        final_d=float(block.final_d[0]),
    )
