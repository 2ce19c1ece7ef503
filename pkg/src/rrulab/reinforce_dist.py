"""Reinforcement distributions on a bounded interval [0, beta].

A two-color randomly reinforced urn adds a random number of balls after
every draw; the law of that number lives on [0, beta] and enters the
simulation only through its quantile function (inverse-transform sampling)
and through two exact functionals:

* the first two moments, and
* ``expect_fraction``, the map d -> E[R / (R + d)], which is what the
  analytic compensator of the urn's proportion process needs at every step.

Four families are supported.  ``point_mass`` and ``two_point`` are the two
extreme laws of a given mean on [0, beta] (Jensen's inequality makes them
the envelope of E[R/(R+d)]); ``finite_discrete`` covers arbitrary atomic
laws; ``uniform_interval`` is the one smooth family, for which
``expect_fraction`` is evaluated by a fixed 256-node composite
Gauss-Legendre rule on the quantile domain.

All distribution handles are immutable after construction and safe to share
across concurrently running simulations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

KINDS = ("point_mass", "two_point", "finite_discrete", "uniform_interval")
COUPLING_MODES = ("independent", "comonotone", "antithetic")

#: tolerance on sum(probs) == 1 for finite_discrete specifications
PROB_SUM_TOL = 1e-12


class DistributionError(ValueError):
    """A reinforcement-distribution specification violates its contract."""


@dataclass(frozen=True)
class ReinforcementSpec:
    """Declarative description of a reinforcement law.

    Only the fields relevant to ``kind`` are set:

    * ``point_mass``:   mean (the support point), beta >= mean
    * ``two_point``:    beta and mean; the law of beta * Bernoulli(mean/beta)
    * ``finite_discrete``: values, probs, beta >= max(values)
    * ``uniform_interval``: a, b with 0 <= a < b <= beta
    """

    kind: str
    beta: float
    mean: float | None = None
    values: tuple[float, ...] | None = None
    probs: tuple[float, ...] | None = None
    a: float | None = None
    b: float | None = None


@dataclass(frozen=True, eq=False)
class Dist:
    """Validated reinforcement distribution handle.

    ``atoms``/``probs`` hold the positive-mass support for the discrete
    kinds (sorted, duplicates merged, zero-probability atoms dropped);
    ``cum`` is the matching CDF grid with the last entry pinned to 1.0 so
    the generalized inverse is exact at u = 1.  Instances are immutable.
    """

    kind: str
    beta: float
    mean: float
    second_moment: float
    variance: float
    atoms: np.ndarray | None = None
    probs: np.ndarray | None = None
    cum: np.ndarray | None = None
    a: float | None = None
    b: float | None = None

    @property
    def spec(self) -> ReinforcementSpec:
        if self.kind == "point_mass":
            return ReinforcementSpec(kind=self.kind, beta=self.beta, mean=self.mean)
        if self.kind == "two_point":
            return ReinforcementSpec(kind=self.kind, beta=self.beta, mean=self.mean)
        if self.kind == "finite_discrete":
            return ReinforcementSpec(
                kind=self.kind,
                beta=self.beta,
                values=tuple(float(v) for v in self.atoms),
                probs=tuple(float(p) for p in self.probs),
            )
        return ReinforcementSpec(kind=self.kind, beta=self.beta, a=self.a, b=self.b)


# ---------------------------------------------------------------------------
# construction helpers


def point_mass(mean: float, beta: float | None = None) -> ReinforcementSpec:
    if beta is None:
        beta = mean
    return ReinforcementSpec(kind="point_mass", beta=beta, mean=mean)


def two_point(beta: float, mean: float) -> ReinforcementSpec:
    """Law of beta * Bernoulli(mean/beta): all mass at 0 and beta."""
    return ReinforcementSpec(kind="two_point", beta=beta, mean=mean)


def finite_discrete(
    values: Iterable[float], probs: Iterable[float], beta: float | None = None
) -> ReinforcementSpec:
    values = tuple(float(v) for v in values)
    probs = tuple(float(p) for p in probs)
    if beta is None:
        beta = max(values) if values else 0.0
    return ReinforcementSpec(kind="finite_discrete", beta=beta, values=values, probs=probs)


def uniform_interval(a: float, b: float, beta: float | None = None) -> ReinforcementSpec:
    if beta is None:
        beta = b
    return ReinforcementSpec(kind="uniform_interval", beta=beta, a=a, b=b)


def make_dist(spec: ReinforcementSpec) -> Dist:
    """Validate a specification and return an immutable distribution handle.

    Raises
    ------
    DistributionError
        If beta <= 0, any support point falls outside [0, beta], the
        two_point mean exceeds beta, or finite_discrete probabilities are
        negative or do not sum to 1 within ``PROB_SUM_TOL``.
    """
    if spec.kind not in KINDS:
        raise DistributionError(f"unknown distribution kind: {spec.kind!r}")
    beta = float(spec.beta)
    if not np.isfinite(beta) or beta <= 0.0:
        raise DistributionError(f"beta must be positive, got {spec.beta!r}")

    if spec.kind == "point_mass":
        if spec.mean is None:
            raise DistributionError("point_mass requires a mean")
        m = float(spec.mean)
        if not (0.0 <= m <= beta):
            raise DistributionError(f"point_mass at {m} outside [0, {beta}]")
        return _atomic_dist("point_mass", beta, np.array([m]), np.array([1.0]))

    if spec.kind == "two_point":
        if spec.mean is None:
            raise DistributionError("two_point requires a mean")
        m = float(spec.mean)
        if m > beta:
            raise DistributionError(f"two_point mean {m} exceeds beta {beta}")
        if m < 0.0:
            raise DistributionError(f"two_point mean {m} is negative")
        p = m / beta
        dist = _atomic_dist("two_point", beta, np.array([0.0, beta]), np.array([1.0 - p, p]))
        # exact closed-form moments of the intended law beta*Bernoulli(m/beta):
        # E R = m and E R^2 = m*beta hold as real numbers, so store them
        # rather than the rounded sum over the stored atom probabilities
        second = m * beta
        return replace(dist, mean=m, second_moment=second, variance=second - m * m)

    if spec.kind == "finite_discrete":
        if not spec.values or spec.probs is None:
            raise DistributionError("finite_discrete requires values and probs")
        values = np.asarray(spec.values, dtype=float)
        probs = np.asarray(spec.probs, dtype=float)
        if values.shape != probs.shape:
            raise DistributionError("values and probs must have equal length")
        if np.any(values < 0.0) or np.any(values > beta):
            raise DistributionError(f"support must lie in [0, {beta}]")
        if np.any(probs < 0.0):
            raise DistributionError("probabilities must be nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise DistributionError(f"probabilities sum to {total!r}, not 1")
        return _atomic_dist("finite_discrete", beta, values, probs / total)

    # uniform_interval
    if spec.a is None or spec.b is None:
        raise DistributionError("uniform_interval requires a and b")
    a, b = float(spec.a), float(spec.b)
    if not (0.0 <= a < b <= beta):
        raise DistributionError(f"need 0 <= a < b <= beta, got a={a}, b={b}, beta={beta}")
    mean = 0.5 * (a + b)
    second = (a * a + a * b + b * b) / 3.0
    return Dist(
        kind="uniform_interval",
        beta=beta,
        mean=mean,
        second_moment=second,
        variance=second - mean * mean,
        a=a,
        b=b,
    )


def _atomic_dist(kind: str, beta: float, values: np.ndarray, probs: np.ndarray) -> Dist:
    """Canonicalize an atomic law: sort, merge duplicates, drop null atoms."""
    order = np.argsort(values, kind="stable")
    values, probs = values[order], probs[order]
    merged_v, merged_p = [], []
    for v, p in zip(values, probs):
        if merged_v and v == merged_v[-1]:
            merged_p[-1] += p
        else:
            merged_v.append(v)
            merged_p.append(p)
    values = np.array(merged_v)
    probs = np.array(merged_p)
    keep = probs > 0.0
    values, probs = values[keep], probs[keep]
    if values.size == 0:
        raise DistributionError("distribution has no positive-mass support")
    cum = np.cumsum(probs)
    cum[-1] = 1.0  # exact CDF endpoint; cumsum can round below 1
    mean = float(np.add.reduce(probs * values))
    second = float(np.add.reduce(probs * values * values))
    values.setflags(write=False)
    probs.setflags(write=False)
    cum.setflags(write=False)
    return Dist(
        kind=kind,
        beta=beta,
        mean=mean,
        second_moment=second,
        variance=second - mean * mean,
        atoms=values,
        probs=probs,
        cum=cum,
    )


# ---------------------------------------------------------------------------
# quantile function (generalized inverse)


def quantile(dist: Dist, u):
    """Left-continuous generalized inverse q(u) = inf{x : F(x) >= u}.

    Accepts a scalar or an ndarray of probabilities in [0, 1]; q(0) is taken
    as the smallest positive-mass support point.  Monotone nondecreasing.
    """
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("quantile argument must lie in [0, 1]")
    if dist.kind == "uniform_interval":
        out = dist.a + arr * (dist.b - dist.a)
    else:
        idx = np.searchsorted(dist.cum, arr, side="left")
        out = dist.atoms[np.minimum(idx, dist.atoms.size - 1)]
    if np.ndim(u) == 0:
        return float(out)
    return out


def moments(dist: Dist) -> tuple[float, float, float]:
    """Exact (mean, second moment, variance) of the reinforcement law."""
    return dist.mean, dist.second_moment, dist.variance


# ---------------------------------------------------------------------------
# expectation functional E[R / (R + d)]

# Fixed 256-node composite Gauss-Legendre rule on [0, 1]: 16 panels with 16
# nodes each, panel edges graded geometrically toward 0 (innermost edge
# 2**-40) so the near-pole of x/(x+d) at small d stays resolved.  Measured
# worst absolute error against the closed form over d in [1e-12, 1e12] and
# subintervals of [0, beta]: < 1e-13; documented guarantee: <= 1e-10.
_QUAD_PANELS = 16
_QUAD_NODES_PER_PANEL = 16
_QUAD_INNER_EDGE = 2.0**-40


def _build_quadrature() -> tuple[np.ndarray, np.ndarray]:
    xs, ws = np.polynomial.legendre.leggauss(_QUAD_NODES_PER_PANEL)
    ratio = (1.0 / _QUAD_INNER_EDGE) ** (1.0 / (_QUAD_PANELS - 1))
    edges = [0.0] + [_QUAD_INNER_EDGE * ratio**j for j in range(_QUAD_PANELS)]
    edges[-1] = 1.0
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes.append(mid + half * xs)
        weights.append(half * ws)
    u = np.concatenate(nodes)
    w = np.concatenate(weights)
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


_QUAD_U, _QUAD_W = _build_quadrature()


def expect_fraction(dist: Dist, d):
    """E[R / (R + d)] for d > 0; exact for atomic laws, quadrature for uniform.

    Accepts a scalar or ndarray d.  The result always lies in
    [0, beta / (beta + d)], and within the concave envelope
    mean/(beta + d) <= E[R/(R+d)] <= mean/(mean + d).
    """
    arr = np.asarray(d, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("d must be positive")
    flat = np.atleast_1d(arr).reshape(-1)
    if dist.kind == "uniform_interval":
        x = dist.a + _QUAD_U * (dist.b - dist.a)
        # accumulate node by node in fixed order so results are bit-identical
        # for every batch shape (worker-count invariance, scalar == kernel)
        out = np.zeros_like(flat)
        for xi, wi in zip(x, _QUAD_W):
            out = out + wi * (xi / (xi + flat))
    else:
        out = np.zeros_like(flat)
        for v, p in zip(dist.atoms, dist.probs):  # fixed order, deterministic
            if v > 0.0:
                out = out + p * (v / (v + flat))
    if np.ndim(d) == 0:
        return float(out[0])
    return out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# copula modes for the (V, W) reinforcement-driving pair


def sample_pair(mode: str, u1, u2):
    """Map two uniforms to the dependent pair (V, W) driving (R_X, R_Y).

    independent -> (u1, u2); comonotone -> (u1, u1);
    antithetic -> (u1, 1 - u1).  Marginals stay uniform in every mode.
    """
    if mode == "independent":
        return u1, u2
    if mode == "comonotone":
        return u1, u1
    if mode == "antithetic":
        return u1, 1.0 - u1
    raise ValueError(f"unknown coupling mode: {mode!r}")


# ---------------------------------------------------------------------------
# key-value serialization ("kind=two_point beta=4 mean=1")


def spec_to_kv(spec: ReinforcementSpec) -> str:
    parts = [f"kind={spec.kind}", f"beta={_fmt(spec.beta)}"]
    if spec.kind in ("point_mass", "two_point"):
        parts.append(f"mean={_fmt(spec.mean)}")
    elif spec.kind == "finite_discrete":
        parts.append("values=" + ",".join(_fmt(v) for v in spec.values))
        parts.append("probs=" + ",".join(_fmt(p) for p in spec.probs))
    else:
        parts.append(f"a={_fmt(spec.a)}")
        parts.append(f"b={_fmt(spec.b)}")
    return " ".join(parts)


def spec_from_kv(kv) -> ReinforcementSpec:
    """Parse a spec from 'kind=... beta=...' text or a key/value mapping."""
    if isinstance(kv, str):
        mapping = {}
        for token in kv.split():
            if "=" not in token:
                raise DistributionError(f"bad token in distribution text: {token!r}")
            key, _, val = token.partition("=")
            mapping[key] = val
    else:
        mapping = dict(kv)
    kind = mapping.get("kind")
    if kind is None:
        raise DistributionError("distribution text lacks kind=")
    try:
        if kind == "point_mass":
            mean = float(mapping["mean"])
            beta = float(mapping["beta"]) if "beta" in mapping else None
            return point_mass(mean, beta)
        if kind == "two_point":
            return two_point(float(mapping["beta"]), float(mapping["mean"]))
        if kind == "finite_discrete":
            values = [float(t) for t in mapping["values"].split(",") if t]
            probs = [float(t) for t in mapping["probs"].split(",") if t]
            beta = float(mapping["beta"]) if "beta" in mapping else None
            return finite_discrete(values, probs, beta)
        if kind == "uniform_interval":
            beta = float(mapping["beta"]) if "beta" in mapping else None
            return uniform_interval(float(mapping["a"]), float(mapping["b"]), beta)
    except KeyError as exc:
        raise DistributionError(f"distribution kind {kind} lacks key {exc.args[0]}") from exc
    except ValueError as exc:
        if isinstance(exc, DistributionError):
            raise
        raise DistributionError(f"bad numeric value in distribution text: {exc}") from exc
    raise DistributionError(f"unknown distribution kind: {kind!r}")


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"
