"""Statistical verifiers for the urn's limit theory.

Each verifier is a pure function of persisted ensemble data and returns a
``TestReport`` whose pass flag is, by construction, statistic <= threshold.
The checks cover:

* the conditional central limit theorem for the proportion process under
  equal reinforcement means (standardized cross-ensemble statistic against
  the standard normal, Kolmogorov-Smirnov distance),
* absence of point masses in the limit proportion (bin-mass and
  exact-duplicate scans of the final sample),
* almost-sure dominance when the black mean exceeds the white mean,
* the growth rate of E[(c + D_n)^-alpha] against 1/(c + D_0 + m n)^alpha,
* the squared-Q tail-sum limits n * sum_{k>n} (Q^X_k)^2 -> E[R_X^2]/m^2,
* boundedness (flattening) of the sqrt(k)|dA_k| and k^2 Q_k^4 series,
* D_n / n -> m.

Distributional thresholds derive from the Kolmogorov distribution at a
configured significance plus an explicit allowance for the finite-horizon
proxy (the final proportion Z_N stands in for the limit Z_inf, which costs
a variance deficit of n/N and a lattice discreteness of order sqrt(n)/D_n;
both are folded into the documented default allowance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .reinforce_dist import Dist
from .ensemble_engine import PathsTable

#: reinforcement means must agree to this tolerance for equal-mean theory
MEAN_MATCH_TOL = 1e-12

#: default significance for Kolmogorov-Smirnov thresholds
DEFAULT_KS_SIGNIFICANCE = 1e-3

#: default additive KS allowance for the Z_N-proxy and lattice effects;
#: calibrated by pilot (see README): variance deficit ~0.005 at n/N=0.04,
#: statistic discreteness ~0.004, finite-n residual ~0.002
DEFAULT_KS_ALLOWANCE = 0.0105


class PreconditionError(ValueError):
    """A verifier was invoked outside its stated preconditions."""


@dataclass(frozen=True)
class TestReport:
    """Outcome of one verifier; passed is exactly statistic <= threshold."""

    name: str
    statistic: float
    threshold: float
    sample_sizes: dict = field(default_factory=dict)
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.statistic <= self.threshold

    def machine_line(self) -> str:
        return (
            f"test={self.name} stat={self.statistic:.6g} "
            f"threshold={self.threshold:.6g} pass={1 if self.passed else 0}"
        )

    def block(self) -> str:
        lines = [
            f"[{self.name}]",
            f"  statistic : {self.statistic:.6g}",
            f"  threshold : {self.threshold:.6g}",
            f"  verdict   : {'pass' if self.passed else 'FAIL'}",
        ]
        for key, val in self.sample_sizes.items():
            lines.append(f"  {key:<10}: {val}")
        if self.notes:
            for note in self.notes.split("; "):
                lines.append(f"  note      : {note}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# theory targets


@dataclass(frozen=True)
class TheoryTargets:
    """Variance-side constants of the equal-means limit theory.

    ``var_factor_black`` is E[R_X^2] / m^2 and ``var_factor_white`` is
    E[R_Y^2] / m^2; the limit variance of sqrt(n) (Z_n - Z_inf) given the
    history is var_factor(Z_inf) * Z_inf (1 - Z_inf), where ``var_factor``
    interpolates linearly from the black factor at z=0 to the white factor
    at z=1.  With identical reinforcement laws the factor is constant and
    equals the relative second moment E[R^2] / (E R)^2.
    """

    mean: float
    var_factor_black: float
    var_factor_white: float

    @classmethod
    def from_dists(cls, mu: Dist, nu: Dist) -> "TheoryTargets":
        if abs(mu.mean - nu.mean) > MEAN_MATCH_TOL:
            raise PreconditionError(
                f"reinforcement means differ: {mu.mean} vs {nu.mean}"
            )
        if mu.mean <= 0.0:
            raise PreconditionError("common reinforcement mean must be positive")
        m2 = mu.mean * mu.mean
        return cls(
            mean=mu.mean,
            var_factor_black=mu.second_moment / m2,
            var_factor_white=nu.second_moment / m2,
        )

    def var_factor(self, z):
        return z * self.var_factor_white + (1.0 - z) * self.var_factor_black

    @property
    def shared_var_factor(self) -> float:
        """The constant factor when both laws coincide."""
        return self.var_factor_black


# ---------------------------------------------------------------------------
# probability utilities


def normal_cdf(x):
    """Standard normal CDF via erfc; absolute error well below 1e-7."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    return _erfc_vec(np.negative(x) / math.sqrt(2.0)) * 0.5


_erfc_vec = np.vectorize(math.erfc, otypes=[float])


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """Survival function of the Kolmogorov distribution."""
    if x <= 0.0:
        return 1.0
    total = 0.0
    for k in range(1, terms + 1):
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * x * x)
        total += term
        if abs(term) < 1e-18:
            break
    return min(1.0, max(0.0, total))


def kolmogorov_quantile(alpha: float) -> float:
    """x with P(K > x) = alpha; e.g. alpha=1e-3 gives about 1.9495."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = 1e-3, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kolmogorov_sf(mid) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ks_statistic(samples, cdf) -> float:
    """Sup distance between the empirical CDF and ``cdf``.

    Both one-sided gaps are evaluated at every sample point, so plateaus
    and ties are handled exactly.
    """
    arr = np.sort(np.asarray(samples, dtype=float))
    n = arr.size
    if n == 0:
        raise ValueError("ks_statistic needs a nonempty sample")
    ref = np.asarray(cdf(arr), dtype=float)
    upper = np.abs(np.arange(1, n + 1) / n - ref).max()
    lower = np.abs(np.arange(0, n) / n - ref).max()
    return float(max(upper, lower))


# ---------------------------------------------------------------------------
# verifiers


def clt_test(
    table: PathsTable,
    mu: Dist,
    nu: Dist,
    n: int,
    n_final: int | None = None,
    eps: float = 1e-3,
    ks_threshold: float | None = None,
    significance: float = DEFAULT_KS_SIGNIFICANCE,
    allowance: float = DEFAULT_KS_ALLOWANCE,
    min_retained: int = 100,
    strata: int = 1,
) -> TestReport:
    """Gaussian check of the standardized proportion fluctuation.

    For every path with Z_N (1 - Z_N) >= eps the statistic

        T = sqrt(n) (Z_n - Z_N) / sqrt(var_factor(Z_N) * Z_N (1 - Z_N))

    is formed (Z_N proxies the limit proportion; requires n <= N/10) and
    the pooled sample is compared against the standard normal by KS
    distance.  With ``strata`` > 1 the same distance is also reported per
    Z_N stratum, diagnostics only.
    """
    targets = TheoryTargets.from_dists(mu, nu)
    n_final = table.n_steps if n_final is None else int(n_final)
    if not 0.0 < eps < 0.5:
        raise PreconditionError(f"eps must lie in (0, 0.5), got {eps}")
    if n > n_final / 10:
        raise PreconditionError(f"need n <= N/10 for the Z_N proxy, got n={n}, N={n_final}")
    z_n = table.at(n, "z")
    z_fin = table.at(n_final, "z")
    keep = z_fin * (1.0 - z_fin) >= eps
    retained = int(keep.sum())
    if retained < min_retained:
        raise PreconditionError(
            f"only {retained} paths survive the boundary cutoff (need {min_retained})"
        )
    zf = z_fin[keep]
    t = math.sqrt(n) * (z_n[keep] - zf) / np.sqrt(targets.var_factor(zf) * zf * (1.0 - zf))
    stat = ks_statistic(t, normal_cdf)
    if ks_threshold is None:
        ks_threshold = kolmogorov_quantile(significance) / math.sqrt(retained) + allowance
    notes = [f"mean T={t.mean():.4f}", f"sd T={t.std(ddof=1):.4f}"]
    if strata > 1:
        edges = np.quantile(zf, np.linspace(0, 1, strata + 1))
        for i in range(strata):
            m_lo, m_hi = edges[i], edges[i + 1]
            mask = (zf >= m_lo) & (zf <= m_hi if i == strata - 1 else zf < m_hi)
            if mask.sum() >= 30:
                notes.append(
                    f"stratum {i} ks={ks_statistic(t[mask], normal_cdf):.4f} n={int(mask.sum())}"
                )
    return TestReport(
        name="clt",
        statistic=stat,
        threshold=float(ks_threshold),
        sample_sizes={"paths": table.num_paths, "retained": retained, "n": n, "N": n_final},
        notes="; ".join(notes),
    )


def atom_scan(
    final_samples,
    bins: int = 50,
    max_bin_mass: float = 0.08,
    max_multiplicity: int = 3,
) -> TestReport:
    """Scan the final sample for point masses.

    Reports the maximum mass over ``bins`` equal-width cells of [0, 1] and
    the largest exact-duplicate multiplicity.  The statistic is the worse
    of the two relative to its limit, so the report passes iff both the
    bin-mass and the multiplicity checks do.
    """
    arr = np.asarray(final_samples, dtype=float)
    if arr.size < 1000:
        raise PreconditionError(f"atom_scan needs >= 1000 samples, got {arr.size}")
    if bins < 10:
        raise PreconditionError(f"atom_scan needs >= 10 bins, got {bins}")
    counts, _ = np.histogram(arr, bins=bins, range=(0.0, 1.0))
    top_mass = counts.max() / arr.size
    _, dup_counts = np.unique(arr, return_counts=True)
    top_mult = int(dup_counts.max())
    stat = max(top_mass / max_bin_mass, top_mult / max_multiplicity)
    return TestReport(
        name="atoms",
        statistic=float(stat),
        threshold=1.0,
        sample_sizes={"samples": int(arr.size), "bins": bins},
        notes=(
            f"max bin mass={top_mass:.4f} (limit {max_bin_mass:g}); "
            f"max multiplicity={top_mult} (limit {max_multiplicity})"
        ),
    )


def dominance_test(
    final_samples,
    zstar: float,
    mu: Dist,
    nu: Dist,
    checkpoint_mean_z=None,
    mean_min: float = 0.95,
) -> TestReport:
    """Check that the black proportion is collapsing onto 1.

    Requires the black mean to exceed the white mean.  Passes iff the
    ensemble mean of Z_N is at least ``mean_min`` and, when a trajectory of
    checkpoint means is supplied, the mean is nondecreasing across the last
    five of them (the theorem fixes the limit, not a rate; the bar comes
    from a pilot).  The fraction of paths beyond ``zstar`` is reported.
    """
    if not mu.mean > nu.mean:
        raise PreconditionError(
            f"dominance requires mean(mu) > mean(nu), got {mu.mean} vs {nu.mean}"
        )
    arr = np.asarray(final_samples, dtype=float)
    if arr.size == 0:
        raise PreconditionError("dominance_test needs a nonempty sample")
    mean_z = float(arr.mean())
    frac = float(np.mean(arr > zstar))
    monotone = True
    notes = [f"mean Z_N={mean_z:.5f} (bar {mean_min:g})", f"frac Z_N>{zstar:g}: {frac:.4f}"]
    if checkpoint_mean_z is not None:
        tail = np.asarray(checkpoint_mean_z, dtype=float)[-5:]
        monotone = bool(np.all(np.diff(tail) >= 0.0))
        notes.append(f"last-checkpoint means {np.array2string(tail, precision=5)}")
        if not monotone:
            notes.append("mean Z not monotone over last five checkpoints")
    stat = (1.0 - mean_z) / (1.0 - mean_min) if mean_min < 1.0 else 1.0 - mean_z
    if not monotone:
        stat = math.inf
    return TestReport(
        name="dominance",
        statistic=float(stat),
        threshold=1.0,
        sample_sizes={"paths": int(arr.size)},
        notes="; ".join(notes),
    )


def tail_sum_check(
    table: PathsTable,
    n: int,
    mu: Dist,
    nu: Dist,
    rel_tol: float = 0.10,
) -> TestReport:
    """Compare n * (tail sum of squared Q) against its almost-sure limit.

    Per path the truncated tail n * (prefix(N) - prefix(n)) is formed for
    both colors; the cross-path means must match E[R_X^2]/m^2 and
    E[R_Y^2]/m^2 within ``rel_tol`` relative deviation.  Requires
    N / n >= 100 so truncation bias (about n/N) stays subdominant.
    """
    targets = TheoryTargets.from_dists(mu, nu)
    n = int(n)
    if n <= 0:
        raise PreconditionError("tail checkpoint n must be positive")
    if table.n_steps / n < 100:
        raise PreconditionError(
            f"tail too short: N/n = {table.n_steps / n:.1f} < 100"
        )
    tail_x = n * (table.at(table.n_steps, "sq_qx") - table.at(n, "sq_qx"))
    tail_y = n * (table.at(table.n_steps, "sq_qy") - table.at(n, "sq_qy"))
    mean_x, mean_y = float(tail_x.mean()), float(tail_y.mean())
    dev_x = abs(mean_x / targets.var_factor_black - 1.0)
    dev_y = abs(mean_y / targets.var_factor_white - 1.0)
    return TestReport(
        name="tails",
        statistic=float(max(dev_x, dev_y)),
        threshold=float(rel_tol),
        sample_sizes={"paths": table.num_paths, "n": n, "N": table.n_steps},
        notes=(
            f"mean n*tail_x={mean_x:.4f} vs {targets.var_factor_black:.4f}; "
            f"mean n*tail_y={mean_y:.4f} vs {targets.var_factor_white:.4f}"
        ),
    )


def series_diagnostics(table: PathsTable, max_last_gap: float = 0.10) -> TestReport:
    """Boundedness verdict for the sqrt(k)|dA_k| and k^2 Q_k^4 series.

    The cross-path mean partial sums are read at every checkpoint; the
    statistic is the larger relative increment between the two largest
    checkpoints (0 when a series is identically zero).  Flat partial sums
    certify the summability the limit theory relies on.
    """
    cps = [int(v) for v in table.checkpoint_ns if v > 0]
    if len(cps) < 3:
        raise PreconditionError("series diagnostics need at least 3 checkpoints")
    n_prev, n_last = cps[-2], cps[-1]

    def last_gap(column: str) -> tuple[float, float]:
        total = float(table.at(n_last, column).mean())
        prev = float(table.at(n_prev, column).mean())
        if total == 0.0:
            return 0.0, total
        return (total - prev) / total, total

    gap_a, tot_a = last_gap("sqrtk_absda")
    gap_q, tot_q = last_gap("k2_q4")
    return TestReport(
        name="series",
        statistic=float(max(gap_a, gap_q)),
        threshold=float(max_last_gap),
        sample_sizes={"paths": table.num_paths, "checkpoints": len(cps)},
        notes=(
            f"sum sqrt(k)|dA|: total={tot_a:.6g} last-gap={gap_a:.4%}; "
            f"sum k^2 Q^4: total={tot_q:.6g} last-gap={gap_q:.4%}"
        ),
    )


def dn_growth_check(table: PathsTable, mu: Dist, nu: Dist, d0: float) -> TestReport:
    """Check D_N / N against the common reinforcement mean.

    ``d0`` is the initial total mass x + y.  The exact expectation is
    E[D_N] = D_0 + m N under equal means, so the pass bound is four
    cross-path standard errors plus the deterministic (D_0 + beta) / N
    offset.
    """
    targets = TheoryTargets.from_dists(mu, nu)
    if table.n_steps <= 0:
        raise PreconditionError("growth check needs N >= 1")
    d_fin = table.at(table.n_steps, "d")
    ratio = d_fin / table.n_steps
    stat = abs(float(ratio.mean()) - targets.mean)
    se = float(ratio.std(ddof=1) / math.sqrt(table.num_paths)) if table.num_paths > 1 else 0.0
    threshold = 4.0 * se + (float(d0) + max(mu.beta, nu.beta)) / table.n_steps
    return TestReport(
        name="growth",
        statistic=float(stat),
        threshold=float(threshold),
        sample_sizes={"paths": table.num_paths, "N": table.n_steps},
        notes=f"mean D_N/N={float(ratio.mean()):.6f} vs m={targets.mean:g}; se={se:.3g}",
    )
