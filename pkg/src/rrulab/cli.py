"""Experiment runner: ``rrulab simulate`` and ``rrulab verify``.

One config file drives both commands.  ``simulate`` runs the ensemble and
persists paths.csv, summary.json and a run manifest; ``verify <test>``
reads those outputs (resimulating only for the self-contained ``identity``
and ``couple`` checks) and exits 0 iff the named check passes.

Exit codes: 0 ok, 2 config/precondition/unknown-test error, 3 I/O error,
4 test failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics, coupling_lab
from .analytics import PreconditionError, TestReport
from .ensemble_engine import (
    ConfigError,
    ExperimentConfig,
    config_echo,
    default_workers,
    estimate_moment,
    load_config,
    load_paths_csv,
    load_summary,
    run_ensemble,
)
from .reinforce_dist import DistributionError, make_dist, sample_pair
from .urn_process import UrnState, _advance, step, step_identity_residual

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FAIL = 4

VERIFY_TESTS = (
    "clt", "atoms", "dominance", "rates", "tails", "series", "growth",
    "couple", "identity",
)


@dataclass
class RunManifest:
    config: dict
    artifact_version: str
    master_seed: int
    started_utc: str
    finished_utc: str
    outputs: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, sort_keys=True, indent=1) + "\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrulab",
        description="simulate and statistically verify two-color randomly reinforced urns",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key=value experiment config")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: available cores)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master_seed")

    p_sim = sub.add_parser("simulate", help="run the configured ensemble")
    common(p_sim)
    p_ver = sub.add_parser("verify", help="run one statistical verifier")
    p_ver.add_argument("test", help="one of: " + ", ".join(VERIFY_TESTS))
    common(p_ver)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DistributionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = _override_seed(cfg, args.seed)
    workers = args.workers if args.workers is not None else default_workers()
    out_dir = Path(args.out)

    if args.command == "simulate":
        return cmd_simulate(cfg, out_dir, workers)
    return cmd_verify(cfg, args.test, out_dir)


def _override_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    kv = dict(cfg.params)
    kv["master_seed"] = str(seed)
    from .ensemble_engine import config_from_mapping

    return config_from_mapping(kv)


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path, workers: int) -> int:
    started = _now()
    try:
        run_ensemble(cfg, out_dir, workers=workers)
    except (ConfigError, DistributionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    outputs = ["paths.csv", "summary.json", "manifest.json"]
    manifest = RunManifest(
        config=config_echo(cfg),
        artifact_version=__version__,
        master_seed=cfg.master_seed,
        started_utc=started,
        finished_utc=_now(),
        outputs=outputs,
    )
    try:
        manifest.write(out_dir / "manifest.json")
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"simulate: {cfg.num_paths} paths x {cfg.n_steps} steps -> {out_dir}")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, test: str, out_dir: Path) -> int:
    if test not in VERIFY_TESTS:
        print(f"unknown test: {test!r} (choose from {', '.join(VERIFY_TESTS)})",
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = _run_verifier(cfg, test, out_dir)
    except PreconditionError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DistributionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"i/o error: missing simulation output ({exc}); run simulate first",
              file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(report.block())
    print(report.machine_line())
    try:
        reports_dir = out_dir / "reports"
        reports_dir.mkdir(parents=True, exist_ok=True)
        (reports_dir / f"{test}.txt").write_text(
            report.block() + "\n" + report.machine_line() + "\n"
        )
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if report.passed else EXIT_FAIL


def _run_verifier(cfg: ExperimentConfig, test: str, out_dir: Path) -> TestReport:
    mu = make_dist(cfg.mu_spec)
    nu = make_dist(cfg.nu_spec)

    if test == "identity":
        return _identity_report(cfg, mu, nu)
    if test == "couple":
        num_paths = cfg.param("couple.paths", 100, int)
        check = coupling_lab.check_coupling(cfg, num_paths)
        out_dir.mkdir(parents=True, exist_ok=True)
        coupling_lab.write_coupled_csv(
            out_dir / "coupled.csv", coupling_lab.run_coupled(cfg, 0)
        )
        return TestReport(
            name="couple",
            statistic=float(check.violations),
            threshold=0.0,
            sample_sizes={"paths": check.num_paths, "steps": check.steps_checked},
            notes=(
                f"shadow white mean={check.shadow_white_mean:.5f} "
                f"(target {mu.mean:g}, se {check.shadow_white_se:.2g}); "
                "path-0 trace written to coupled.csv"
            ),
        )

    if test == "dominance" and not mu.mean > nu.mean:
        # precondition refused before any output is read
        raise PreconditionError(
            f"dominance requires mean(mu) > mean(nu), got {mu.mean} vs {nu.mean}"
        )

    if test == "clt":
        table = load_paths_csv(out_dir / "paths.csv")
        return analytics.clt_test(
            table,
            mu,
            nu,
            n=cfg.param("clt.n", max(1, cfg.n_steps // 25), int),
            n_final=cfg.n_steps,
            eps=cfg.param("clt.eps", 1e-3, float),
            ks_threshold=cfg.param("clt.ks_threshold", None, float),
            significance=cfg.param("clt.significance", analytics.DEFAULT_KS_SIGNIFICANCE, float),
            allowance=cfg.param("clt.allowance", analytics.DEFAULT_KS_ALLOWANCE, float),
            strata=cfg.param("clt.strata", 1, int),
        )
    if test == "atoms":
        summary = load_summary(out_dir / "summary.json")
        return analytics.atom_scan(
            np.asarray(summary.final_z),
            bins=cfg.bins,
            max_bin_mass=cfg.param("atoms.max_bin_mass", 0.08, float),
            max_multiplicity=cfg.param("atoms.max_multiplicity", 3, int),
        )
    if test == "dominance":
        summary = load_summary(out_dir / "summary.json")
        return analytics.dominance_test(
            np.asarray(summary.final_z),
            zstar=cfg.param("dominance.zstar", 0.95, float),
            mu=mu,
            nu=nu,
            checkpoint_mean_z=summary.z_mean,
            mean_min=cfg.param("dominance.mean_min", 0.95, float),
        )
    if test == "rates":
        summary = load_summary(out_dir / "summary.json")
        n = cfg.param("rates.n", cfg.n_steps, int)
        tol = cfg.param("rates.tol", 0.10, float)
        if not cfg.moment_targets:
            raise PreconditionError("rates needs a moments=c:alpha,... config entry")
        d0 = cfg.x + cfg.y
        worst = 0.0
        parts = []
        for c, alpha in cfg.moment_targets:
            est = estimate_moment(summary, n, c, alpha)
            ref = (c + d0 + mu.mean * n) ** -alpha
            ratio = est / ref
            worst = max(worst, abs(ratio - 1.0))
            parts.append(f"c={c:g} alpha={alpha:g} ratio={ratio:.4f}")
        return TestReport(
            name="rates",
            statistic=float(worst),
            threshold=float(tol),
            sample_sizes={"paths": summary.num_paths, "n": n},
            notes="; ".join(parts),
        )
    if test == "tails":
        return analytics.tail_sum_check(
            load_paths_csv(out_dir / "paths.csv"),
            n=cfg.param("tails.n", max(1, cfg.n_steps // 100), int),
            mu=mu,
            nu=nu,
            rel_tol=cfg.param("tails.rel_tol", 0.10, float),
        )
    if test == "series":
        return analytics.series_diagnostics(
            load_paths_csv(out_dir / "paths.csv"),
            max_last_gap=cfg.param("series.max_last_gap", 0.10, float),
        )
    if test == "growth":
        return analytics.dn_growth_check(
            load_paths_csv(out_dir / "paths.csv"), mu, nu, d0=cfg.x + cfg.y
        )
    raise ConfigError(f"unhandled test {test!r}")  # unreachable


def _identity_report(cfg: ExperimentConfig, mu, nu) -> TestReport:
    """Fuzz the exact one-step identity dZ = -(R/D1)(Z - delta)."""
    rng = np.random.default_rng(cfg.master_seed ^ 0x9E3779B97F4A7C15)
    batches = 10
    per_batch = 100_000
    worst = 0.0
    for _ in range(batches):
        x = rng.uniform(0.0, 50.0, per_batch)
        y = rng.uniform(0.0, 50.0, per_batch)
        keep = x + y > 1e-9
        x, y = x[keep], y[keep]
        z = x / (x + y)
        u = rng.random(x.size)
        v, w = sample_pair(cfg.coupling_mode, rng.random(x.size), rng.random(x.size))
        _, _, z1, d1, delta, _, _, r, _, _, _, _, _, _ = _advance(
            x, y, z, u, v, w, mu, nu, np.zeros(x.size)
        )
        worst = max(worst, float(step_identity_residual(z, z1, r, d1, delta).max()))
    # a scalar-path sample exercises step() itself
    state = UrnState(x=3.0, y=2.0)
    sum_r = 0.0
    for _ in range(1000):
        u, v, w = rng.random(3)
        new_state, recd = step(state, u, v, w, mu, nu, sum_r, mode=cfg.coupling_mode)
        res = step_identity_residual(state.z, recd.z_after, recd.r, new_state.d, recd.delta)
        worst = max(worst, float(res))
        sum_r += recd.r
        state = new_state
    return TestReport(
        name="identity",
        statistic=worst,
        threshold=cfg.param("identity.tol", 1e-12, float),
        sample_sizes={"vector_steps": batches * per_batch, "scalar_steps": 1000},
    )


if __name__ == "__main__":
    sys.exit(main())
