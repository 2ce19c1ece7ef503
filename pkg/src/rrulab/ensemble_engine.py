"""Reproducible ensembles of urn paths: execution, aggregation, persistence.

An experiment is a flat key=value config (see ``load_config``).  Running it
produces ``paths.csv`` (one row per path per checkpoint, 17 significant
digits) and ``summary.json`` (cross-path aggregates plus the full final-Z
sample).  Work is partitioned by path index across worker processes;
because every path's randomness is keyed by its absolute index, outputs
are byte-identical for any worker count.  All aggregates are computed in
one canonical pass over the assembled table, never by merging partial
floating-point sums.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .reinforce_dist import (
    DistributionError,
    ReinforcementSpec,
    make_dist,
    spec_from_kv,
    spec_to_kv,
    COUPLING_MODES,
)
from .urn_process import BlockTrace, simulate_block

PATHS_CSV_HEADER = (
    "path_index,n,Z,D,A,M,prefix_sq_qx,prefix_sq_qy,prefix_sqrtk_absdA,prefix_k2_q4"
)
_STAT_NAMES = ("z", "d", "a", "m", "sq_qx", "sq_qy", "sqrtk_absda", "k2_q4")


class ConfigError(ValueError):
    """Experiment configuration is missing a key or violates a constraint."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    ``params`` keeps the raw key=value mapping so verifier thresholds and
    other extensions travel with the config without schema churn.
    """

    x: float
    y: float
    mu_spec: ReinforcementSpec
    nu_spec: ReinforcementSpec
    n_steps: int
    num_paths: int
    master_seed: int
    checkpoints: tuple[int, ...]
    coupling_mode: str = "independent"
    bins: int = 50
    moment_targets: tuple[tuple[float, float], ...] = ()
    params: Mapping[str, str] = field(default_factory=dict)

    def param(self, key: str, default=None, cast=str):
        raw = self.params.get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for config key {key}: {raw!r}") from exc


def geometric_checkpoints(n_steps: int) -> tuple[int, ...]:
    """Default checkpoint schedule: n = ceil(N * 2**-j), descending to 1."""
    out = set()
    j = 0
    while True:
        n = math.ceil(n_steps * 2.0**-j)
        out.add(n)
        if n <= 1:
            break
        j += 1
    return tuple(sorted(out))


def parse_config_text(text: str) -> dict[str, str]:
    """Flat key=value lines; blank lines and '#' comments are ignored."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def config_from_mapping(kv: Mapping[str, str]) -> ExperimentConfig:
    def require(key: str) -> str:
        if key not in kv:
            raise ConfigError(f"missing required config key: {key}")
        return kv[key]

    def number(key: str, cast):
        raw = require(key)
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for config key {key}: {raw!r}") from exc

    x = number("x", float)
    y = number("y", float)
    n_steps = number("N", int)
    num_paths = number("num_paths", int)
    master_seed = number("master_seed", int) & 0xFFFFFFFFFFFFFFFF

    def dist_spec(prefix: str) -> ReinforcementSpec:
        sub = {k[len(prefix) + 1:]: v for k, v in kv.items() if k.startswith(prefix + ".")}
        if "kind" not in sub:
            raise ConfigError(f"missing required config key: {prefix}.kind")
        try:
            return spec_from_kv(sub)
        except DistributionError as exc:
            raise ConfigError(f"bad {prefix} distribution: {exc}") from exc

    mu_spec = dist_spec("mu")
    nu_spec = dist_spec("nu")

    raw_cp = kv.get("checkpoints", "geometric")
    cp_set: set[int] = set()
    for token in raw_cp.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "geometric":
            cp_set.update(geometric_checkpoints(n_steps))
        else:
            try:
                cp_set.add(int(token))
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for config key checkpoints: {raw_cp!r}"
                ) from exc
    checkpoints = tuple(sorted(cp_set))
    if n_steps not in checkpoints:
        checkpoints = tuple(sorted(set(checkpoints) | {n_steps}))

    moment_targets = []
    raw_moments = kv.get("moments", "")
    for token in raw_moments.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            c_str, _, a_str = token.partition(":")
            moment_targets.append((float(c_str), float(a_str)))
        except ValueError as exc:
            raise ConfigError(f"bad moments entry {token!r} (want c:alpha)") from exc

    cfg = ExperimentConfig(
        x=x,
        y=y,
        mu_spec=mu_spec,
        nu_spec=nu_spec,
        n_steps=n_steps,
        num_paths=num_paths,
        master_seed=master_seed,
        checkpoints=checkpoints,
        coupling_mode=kv.get("coupling_mode", "independent"),
        bins=int(kv.get("bins", "50")),
        moment_targets=tuple(moment_targets),
        params=dict(kv),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.x < 0 or cfg.y < 0 or cfg.x + cfg.y <= 0:
        raise ConfigError(f"initial masses invalid: x={cfg.x}, y={cfg.y}")
    if cfg.num_paths < 1:
        raise ConfigError("num_paths must be >= 1")
    if cfg.n_steps < 0:
        raise ConfigError("N must be nonnegative")
    if cfg.checkpoints and max(cfg.checkpoints) > cfg.n_steps:
        raise ConfigError("N must cover every checkpoint")
    if cfg.coupling_mode not in COUPLING_MODES:
        raise ConfigError(f"unknown coupling_mode: {cfg.coupling_mode!r}")
    if cfg.bins < 1:
        raise ConfigError("bins must be >= 1")
    try:
        make_dist(cfg.mu_spec)
        make_dist(cfg.nu_spec)
    except DistributionError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return config_from_mapping(parse_config_text(text))


def config_echo(cfg: ExperimentConfig) -> dict:
    """Plain-dict rendering of a config (manifest / summary echo)."""
    return {
        "x": cfg.x,
        "y": cfg.y,
        "mu": spec_to_kv(cfg.mu_spec),
        "nu": spec_to_kv(cfg.nu_spec),
        "N": cfg.n_steps,
        "num_paths": cfg.num_paths,
        "master_seed": cfg.master_seed,
        "coupling_mode": cfg.coupling_mode,
        "checkpoints": list(cfg.checkpoints),
        "bins": cfg.bins,
        "moments": [f"{c:g}:{a:g}" for c, a in cfg.moment_targets],
    }


# ---------------------------------------------------------------------------
# execution


def _run_block(args) -> BlockTrace:
    cfg, lo, hi = args
    mu = make_dist(cfg.mu_spec)
    nu = make_dist(cfg.nu_spec)
    return simulate_block(
        cfg.x,
        cfg.y,
        mu,
        nu,
        cfg.coupling_mode,
        cfg.n_steps,
        cfg.checkpoints,
        cfg.master_seed,
        np.arange(lo, hi, dtype=np.uint64),
    )


@dataclass
class PathsTable:
    """All checkpoint rows of an ensemble, columnar, sorted by (path, n)."""

    num_paths: int
    n_steps: int
    checkpoint_ns: np.ndarray
    path_index: np.ndarray
    n: np.ndarray
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
    decomp_max_err: np.ndarray | None = None
    steps_audited: int = 0

    _COLS = {
        "z": "z", "d": "d", "a": "a", "m": "m",
        "sq_qx": "sq_qx", "sq_qy": "sq_qy",
        "sqrtk_absda": "sqrtk_absda", "k2_q4": "k2_q4",
    }

    def at(self, n: int, column: str) -> np.ndarray:
        """Column values at checkpoint n, ordered by path index."""
        if column not in self._COLS:
            raise KeyError(column)
        mask = self.n == int(n)
        if not mask.any():
            raise KeyError(f"n={n} is not a recorded checkpoint")
        vals = getattr(self, column)[mask]
        order = np.argsort(self.path_index[mask], kind="stable")
        return vals[order]


def _assemble_table(cfg: ExperimentConfig, blocks: Sequence[BlockTrace]) -> PathsTable:
    cps = blocks[0].checkpoint_ns
    ncp = cps.size
    total = cfg.num_paths * ncp
    cols = {name: np.empty(total) for name in _STAT_NAMES}
    path_col = np.empty(total, dtype=np.int64)
    n_col = np.empty(total, dtype=np.int64)
    final_z = np.empty(cfg.num_paths)
    final_d = np.empty(cfg.num_paths)
    decomp = np.empty(cfg.num_paths)
    audited = 0
    row = 0
    for blk in sorted(blocks, key=lambda blk: int(blk.path_indices[0]) if blk.path_indices.size else 0):
        b = blk.path_indices.size
        lo = int(blk.path_indices[0]) if b else 0
        final_z[lo:lo + b] = blk.final_z
        final_d[lo:lo + b] = blk.final_d
        decomp[lo:lo + b] = blk.decomp_max_err
        audited += blk.steps_audited
        # rows for one block: path-major, checkpoint-minor
        sl = slice(row, row + b * ncp)
        path_col[sl] = np.repeat(blk.path_indices, ncp)
        n_col[sl] = np.tile(cps, b)
        for name in _STAT_NAMES:
            cols[name][sl] = getattr(blk, name).T.reshape(-1)
        row += b * ncp
    return PathsTable(
        num_paths=cfg.num_paths,
        n_steps=cfg.n_steps,
        checkpoint_ns=cps.copy(),
        path_index=path_col,
        n=n_col,
        z=cols["z"],
        d=cols["d"],
        a=cols["a"],
        m=cols["m"],
        sq_qx=cols["sq_qx"],
        sq_qy=cols["sq_qy"],
        sqrtk_absda=cols["sqrtk_absda"],
        k2_q4=cols["k2_q4"],
        final_z=final_z,
        final_d=final_d,
        decomp_max_err=decomp,
        steps_audited=audited,
    )


@dataclass
class EnsembleSummary:
    """Cross-path aggregates at every checkpoint plus the full final-Z sample."""

    num_paths: int
    n_steps: int
    bins: int
    checkpoint_ns: list[int]
    z_mean: list[float]
    z_var: list[float]
    z_hist: list[list[float]]
    d_mean: list[float]
    m_mean: list[float]
    m_se: list[float]
    moment_means: dict[str, list[float]]
    tail_qx_mean: list[float]
    tail_qy_mean: list[float]
    series_sqrtk_absda_mean: list[float]
    series_k2q4_mean: list[float]
    final_z: list[float]

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EnsembleSummary":
        return cls(**json.loads(text))


def moment_key(c: float, alpha: float) -> str:
    return f"{c:g}:{alpha:g}"


def summarize(cfg: ExperimentConfig, table: PathsTable) -> EnsembleSummary:
    cps = [int(n) for n in table.checkpoint_ns]
    z_mean, z_var, z_hist, d_mean, m_mean, m_se = [], [], [], [], [], []
    tail_qx, tail_qy, ser_a, ser_q4 = [], [], [], []
    moment_means: dict[str, list[float]] = {moment_key(c, a): [] for c, a in cfg.moment_targets}
    total_sq_qx = table.at(cfg.n_steps, "sq_qx")
    total_sq_qy = table.at(cfg.n_steps, "sq_qy")
    npaths = table.num_paths
    for n in cps:
        z = table.at(n, "z")
        d = table.at(n, "d")
        m = table.at(n, "m")
        z_mean.append(float(z.mean()))
        z_var.append(float(z.var()))
        counts, _ = np.histogram(z, bins=cfg.bins, range=(0.0, 1.0))
        z_hist.append([c / npaths for c in counts.tolist()])
        d_mean.append(float(d.mean()))
        m_mean.append(float(m.mean()))
        m_se.append(float(m.std(ddof=1) / math.sqrt(npaths)) if npaths > 1 else 0.0)
        for c, a in cfg.moment_targets:
            moment_means[moment_key(c, a)].append(float(np.mean((c + d) ** -a)))
        tail_qx.append(float(np.mean(n * (total_sq_qx - table.at(n, "sq_qx")))))
        tail_qy.append(float(np.mean(n * (total_sq_qy - table.at(n, "sq_qy")))))
        ser_a.append(float(table.at(n, "sqrtk_absda").mean()))
        ser_q4.append(float(table.at(n, "k2_q4").mean()))
    return EnsembleSummary(
        num_paths=npaths,
        n_steps=cfg.n_steps,
        bins=cfg.bins,
        checkpoint_ns=cps,
        z_mean=z_mean,
        z_var=z_var,
        z_hist=z_hist,
        d_mean=d_mean,
        m_mean=m_mean,
        m_se=m_se,
        moment_means=moment_means,
        tail_qx_mean=tail_qx,
        tail_qy_mean=tail_qy,
        series_sqrtk_absda_mean=ser_a,
        series_k2q4_mean=ser_q4,
        final_z=[float(v) for v in table.final_z],
    )


def estimate_moment(summary: EnsembleSummary, n: int, c: float, alpha: float) -> float:
    """Cross-path average of (c + D_n)^-alpha for a configured (c, alpha, n)."""
    if alpha == 0.0:
        return 1.0
    key = moment_key(c, alpha)
    if key not in summary.moment_means:
        raise ConfigError(f"moment (c={c:g}, alpha={alpha:g}) was not configured")
    try:
        row = summary.checkpoint_ns.index(int(n))
    except ValueError:
        raise ConfigError(f"n={n} is not a recorded checkpoint") from None
    return summary.moment_means[key][row]


def run_ensemble(
    cfg: ExperimentConfig, out_dir, workers: int = 1
) -> tuple[EnsembleSummary, PathsTable]:
    """Run all paths, write paths.csv and summary.json, return the aggregates.

    Deterministic for a given master_seed regardless of ``workers``.
    """
    validate_config(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = _partition(cfg, workers)
    if workers <= 1 or len(tasks) == 1:
        blocks = [_run_block(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_run_block, tasks))
    table = _assemble_table(cfg, blocks)
    write_paths_csv(out_dir / "paths.csv", table)
    summary = summarize(cfg, table)
    (out_dir / "summary.json").write_text(summary.to_json() + "\n")
    return summary, table


def _partition(cfg: ExperimentConfig, workers: int) -> list[tuple]:
    chunk = max(1, math.ceil(cfg.num_paths / max(1, workers)))
    tasks = []
    lo = 0
    while lo < cfg.num_paths:
        hi = min(cfg.num_paths, lo + chunk)
        tasks.append((cfg, lo, hi))
        lo = hi
    return tasks


# ---------------------------------------------------------------------------
# persistence


def write_paths_csv(path, table: PathsTable) -> None:
    cols = (table.z, table.d, table.a, table.m,
            table.sq_qx, table.sq_qy, table.sqrtk_absda, table.k2_q4)
    pi, nn = table.path_index, table.n
    lines = [PATHS_CSV_HEADER]
    lines.extend(
        f"{pi[i]},{nn[i]}," + ",".join(f"{col[i]:.17g}" for col in cols)
        for i in range(pi.size)
    )
    lines.append("")  # trailing newline
    Path(path).write_text("\n".join(lines))


def load_paths_csv(path) -> PathsTable:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != PATHS_CSV_HEADER:
            raise ConfigError(f"unexpected paths.csv header in {path}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ConfigError(f"paths.csv is empty: {path}")
    path_index = data[:, 0].astype(np.int64)
    n = data[:, 1].astype(np.int64)
    order = np.lexsort((n, path_index))
    data = data[order]
    path_index, n = path_index[order], n[order]
    cps = np.unique(n)
    num_paths = int(path_index.max()) + 1
    n_steps = int(cps.max())
    final_mask = n == n_steps
    table = PathsTable(
        num_paths=num_paths,
        n_steps=n_steps,
        checkpoint_ns=cps,
        path_index=path_index,
        n=n,
        z=data[:, 2],
        d=data[:, 3],
        a=data[:, 4],
        m=data[:, 5],
        sq_qx=data[:, 6],
        sq_qy=data[:, 7],
        sqrtk_absda=data[:, 8],
        k2_q4=data[:, 9],
        final_z=data[final_mask, 2],
        final_d=data[final_mask, 3],
    )
    return table


def load_summary(path) -> EnsembleSummary:
    return EnsembleSummary.from_json(Path(path).read_text())


def default_workers() -> int:
    return os.cpu_count() or 1
