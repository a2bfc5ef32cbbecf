"""Configuration-driven experiment runner.

Subcommands
-----------
simulate   one coupled path bundle -> bundle.csv + bundle.meta.json
lln        strong deviation of the noisy state from the closed loop
           -> rate_report.json, points.csv, plot.csv
clt        strong deviation of the rescaled fluctuation from its limit,
           plus the expansion remainder -> rate_report.json, points.csv,
           plot.csv, remainder.csv
mterms     held-gap decomposition table across the ladder -> mterms.csv
selfcheck  module invariant suite -> selfcheck.json

Every run writes manifest.json with the config checksum and per-file
sha256 digests.  Numeric outputs are byte-identical for identical
config + seed regardless of the worker count (JUMPFLUX_WORKERS).
Exit code 0 means every verdict of the subcommand passed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, analysis, systems
from .config import (
    ExperimentConfig,
    apply_overrides,
    build_config,
    default_config_dict,
)
from .errors import JumpfluxError
from .noise import PathStreams, build_noise_record, sample_prm

LLN_TARGET_SLOPE = 1.8
LLN_MIN_R2 = 0.98
CLT_TARGET_SLOPE = {"R1": 1.6, "R2": 0.8}
RAMP_TARGET_SLOPE = 1.8
RESIDUAL_TOL = 1e-8
MTERM_DEFAULT_PATHS = 32

_PROCESS_TAGS = (
    ("y", "closed_loop"),
    ("y_delta", "sampled_hold"),
    ("Y", "jump_diffusion"),
    ("Z_eps", "fluctuation"),
    ("Z", "limit_fluctuation"),
)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _workers() -> int:
    raw = os.environ.get("JUMPFLUX_WORKERS", "")
    if raw.strip():
        count = int(raw)
        if count < 1:
            raise JumpfluxError("JUMPFLUX_WORKERS must be a positive integer")
        return count
    return os.cpu_count() or 1


def _write_rate_outputs(out: Path, report: analysis.RateReport) -> list[Path]:
    rate_json = out / "rate_report.json"
    _write_json(rate_json, report.to_dict())
    points_csv = out / "points.csv"
    _write_csv(
        points_csv,
        ["epsilon", "delta", "kappa", "paths", "moment", "ci_half_width"],
        [
            (p.epsilon, p.delta, p.kappa, p.paths, p.moment, p.ci_half_width)
            for p in report.points
        ],
    )
    plot_csv = out / "plot.csv"
    _write_csv(
        plot_csv,
        ["log10_epsilon", "log10_moment", "fitted_log10_moment"],
        [
            (
                float(np.log10(p.epsilon)),
                float(np.log10(p.moment)),
                float(report.slope * np.log10(p.epsilon) + report.intercept),
            )
            for p in report.points
        ],
    )
    return [rate_json, points_csv, plot_csv]


def run_simulate(config: ExperimentConfig, out: Path, workers: int, paths=None):
    """Write one bundle (largest ladder epsilon, path index 0) as CSV."""
    model = config.model()
    eps = config.regime.epsilons[0]
    delta = config.regime.delta_of(eps)
    c = config.regime.c
    h = config.step_limit_for(delta)
    bundle = systems.simulate_coupled_bundle(
        model, eps, delta, c, h, config.master_seed, 0
    )
    rows = []
    times = bundle.grid.times
    for tag, attr in _PROCESS_TAGS:
        path = getattr(bundle, attr)
        for i in range(times.size):
            for coord in range(path.shape[1]):
                rows.append((times[i], tag, coord, path[i, coord]))
    bundle_csv = out / "bundle.csv"
    _write_csv(bundle_csv, ["time", "process_tag", "coordinate_index", "value"], rows)
    meta = {
        "epsilon": eps,
        "delta": delta,
        "c": c,
        "seed": config.master_seed,
        "path_index": 0,
        "internal_step": h,
        "jump_times": bundle.noise.jumps.times.tolist(),
        "jump_marks": bundle.noise.jumps.marks.tolist(),
    }
    meta_json = out / "bundle.meta.json"
    _write_json(meta_json, meta)
    return [bundle_csv, meta_json], {"simulate": True}


def run_lln(config: ExperimentConfig, out: Path, workers: int, paths=None):
    """Fit the decay of E[sup |noisy state - closed loop|^2] on the ladder."""
    model = config.model()
    n_paths = paths or config.paths_per_point
    points = []
    for eps, delta, kappa in config.regime.points():
        points.append(
            analysis.mc_moment(
                model,
                eps,
                delta,
                config.regime.c,
                kappa,
                "lln",
                n_paths,
                config.master_seed,
                config.step_limit_for(delta),
                workers=workers,
            )
        )
    report = analysis.fit_loglog_rate(
        points,
        LLN_TARGET_SLOPE,
        r2_min=LLN_MIN_R2,
        note="bound: (epsilon^2 + delta^2) C(T), order 2 when delta ~ epsilon",
    )
    files = _write_rate_outputs(out, report)
    return files, {"lln_rate": report.verdict}


def run_clt(config: ExperimentConfig, out: Path, workers: int, paths=None):
    """Fit the decay of E[sup |fluctuation - limit|^2] plus the expansion
    remainder series E[sup |state - closed - eps * limit|^2] / eps^2."""
    regime = config.regime.regime
    if regime not in CLT_TARGET_SLOPE:
        raise JumpfluxError(
            "clt requires regime R1 or R2; R3-diagnostic has no fluctuation limit"
        )
    model = config.model()
    n_paths = paths or config.paths_per_point
    points, remainder_rows = [], []
    for eps, delta, kappa in config.regime.points():
        got = analysis.mc_points(
            model,
            eps,
            delta,
            config.regime.c,
            kappa,
            ("clt", "remainder"),
            n_paths,
            config.master_seed,
            config.step_limit_for(delta),
            workers=workers,
        )
        points.append(got["clt"])
        rem = got["remainder"]
        remainder_rows.append(
            (
                eps,
                delta,
                rem.paths,
                rem.moment,
                rem.ci_half_width,
                rem.moment / (eps * eps),
                rem.ci_half_width / (eps * eps),
            )
        )
    report = analysis.fit_loglog_rate(
        points,
        CLT_TARGET_SLOPE[regime],
        note=(
            "bound: (c+1)^2 (epsilon^2 + delta + kappa^2) C(T); the dominant "
            "order per regime is tested, the full bound is context"
        ),
    )
    files = _write_rate_outputs(out, report)
    remainder_csv = out / "remainder.csv"
    _write_csv(
        remainder_csv,
        [
            "epsilon",
            "delta",
            "paths",
            "remainder_moment",
            "remainder_ci_half_width",
            "remainder_over_eps2",
            "remainder_ci_over_eps2",
        ],
        remainder_rows,
    )
    files.append(remainder_csv)
    monotone = analysis.monotone_within_ci(points)
    return files, {"clt_rate": report.verdict, "clt_monotone": monotone}


def run_mterms(config: ExperimentConfig, out: Path, workers: int, paths=None):
    """The held-gap decomposition across the ladder: mean sup norms of the
    four terms, the identity residual, and (R2) the held-ramp decay rate."""
    if config.regime.regime == "R3-diagnostic":
        raise JumpfluxError("mterms requires regime R1 or R2")
    model = config.model()
    n_paths = paths or min(MTERM_DEFAULT_PATHS, config.paths_per_point)
    rows = []
    ramp_points = []
    residual_ok = True
    for eps, delta, kappa in config.regime.points():
        h = config.step_limit_for(delta)
        sups = np.zeros((n_paths, 4))
        worst_rel = 0.0
        for idx in range(n_paths):
            bundle = systems.simulate_coupled_bundle(
                model, eps, delta, config.regime.c, h, config.master_seed, idx
            )
            d = analysis.decompose_held_gap(
                bundle, config.system, config.diffusion, config.jump, config.levy
            )
            sups[idx] = (
                d.sup_drift_terms,
                d.sup_held_ramp_gap,
                d.sup_brownian_term,
                d.sup_jump_term,
            )
            worst_rel = max(worst_rel, d.relative_residual)
        residual_ok = residual_ok and worst_rel <= RESIDUAL_TOL
        means = sups.mean(axis=0)
        rows.append(
            (eps, delta, kappa, n_paths, *map(float, means), worst_rel)
        )
        ramp_points.append(
            analysis.ExperimentPoint(
                epsilon=eps,
                delta=delta,
                kappa=kappa,
                paths=n_paths,
                moment=float(np.mean(sups[:, 1] ** 2)),
                ci_half_width=0.0,
            )
        )
    mterms_csv = out / "mterms.csv"
    _write_csv(
        mterms_csv,
        [
            "epsilon",
            "delta",
            "kappa",
            "paths",
            "mean_sup_drift_terms",
            "mean_sup_held_ramp_gap",
            "mean_sup_brownian_term",
            "mean_sup_jump_term",
            "max_relative_residual",
        ],
        rows,
    )
    verdicts = {"mterms_residual": residual_ok}
    if config.regime.regime == "R2":
        # fit the squared ramp gap against delta rather than epsilon
        delta_points = [
            analysis.ExperimentPoint(
                epsilon=p.delta,
                delta=p.delta,
                kappa=p.kappa,
                paths=p.paths,
                moment=p.moment,
                ci_half_width=p.ci_half_width,
            )
            for p in ramp_points
        ]
        ramp_report = analysis.fit_loglog_rate(
            delta_points,
            RAMP_TARGET_SLOPE,
            note="held-ramp gap vs delta; bound delta^2 (c+1)^2 + kappa^2",
        )
        _write_json(out / "mterms_ramp_fit.json", ramp_report.to_dict())
        verdicts["mterms_ramp_rate"] = ramp_report.verdict
        return [mterms_csv, out / "mterms_ramp_fit.json"], verdicts
    return [mterms_csv], verdicts


def _selfcheck_suite(config: ExperimentConfig, workers: int) -> list[tuple[str, bool, str]]:
    from .linalg import expm, mat_one_norm, propagator

    checks: list[tuple[str, bool, str]] = []
    rng = np.random.default_rng(1234)
    model = config.model()
    n = config.system.dim

    # exact-propagator identities
    ok, detail = True, ""
    for _ in range(20):
        a = rng.uniform(-1.0, 1.0, size=(2, 2))
        h1, h2 = rng.uniform(0.05, 0.5, size=2)
        semi = mat_one_norm(expm(a, h1) @ expm(a, h2) - expm(a, h1 + h2))
        p = propagator(a, h1)
        ident = mat_one_norm(p.phi - np.eye(2) - a @ p.psi)
        if semi > 1e-10 or ident > 1e-12:
            ok, detail = False, f"semigroup {semi:g}, identity {ident:g}"
            break
    checks.append(("propagator_identities", ok, detail))

    eps0 = config.regime.epsilons[0]
    delta0 = config.regime.delta_of(eps0)
    h0 = config.step_limit_for(delta0)

    # grid membership of sampling instants and jump times
    rec = build_noise_record(
        config.levy, config.horizon, delta0, h0, config.master_seed, 0, n
    )
    g = rec.grid
    member = all(
        g.times[g.sampling_nodes[k]] == k * delta0
        for k in range(g.sampling_nodes.size)
    ) and all(t in g.times for t in rec.jumps.times)
    gaps_ok = bool((g.dt <= h0 * (1 + 1e-9)).all())
    checks.append(
        ("grid_membership", member and gaps_ok, f"max gap {g.dt.max():g}")
    )

    # replay determinism, coupling, epsilon = 0 degeneration
    b1 = systems.simulate_coupled_bundle(
        model, eps0, delta0, config.regime.c, h0, config.master_seed, 0
    )
    b2 = systems.simulate_coupled_bundle(
        model, eps0, delta0, config.regime.c, h0, config.master_seed, 0
    )
    same = all(
        np.array_equal(getattr(b1, f), getattr(b2, f))
        for f in (
            "closed_loop",
            "sampled_hold",
            "jump_diffusion",
            "fluctuation",
            "limit_fluctuation",
        )
    )
    checks.append(("replay_determinism", same, ""))
    coupling = np.array_equal(
        b1.fluctuation, (b1.jump_diffusion - b1.closed_loop) / b1.epsilon
    )
    checks.append(("fluctuation_definitional", bool(coupling), ""))

    state0, _ = systems.simulate_jump_diffusion(
        config.system, config.diffusion, config.jump, config.levy, 0.0, delta0, rec
    )
    held = systems.solve_sampled_hold(config.system, delta0, rec.grid)
    gap0 = analysis.sup_norm_gap(state0, held)
    checks.append(("epsilon_zero_degeneration", gap0 <= 1e-12, f"gap {gap0:g}"))

    tiny, _ = systems.simulate_jump_diffusion(
        config.system, config.diffusion, config.jump, config.levy, 1e-12, delta0, rec
    )
    gap_tiny = analysis.sup_norm_gap(tiny, held)
    checks.append(
        ("epsilon_continuity", gap_tiny <= 1e-9, f"gap {gap_tiny:g}")
    )

    worst = 0.0
    for idx in range(5):
        b = systems.simulate_coupled_bundle(
            model, eps0, delta0, config.regime.c, h0, config.master_seed, idx
        )
        d = analysis.decompose_held_gap(
            b, config.system, config.diffusion, config.jump, config.levy
        )
        worst = max(worst, d.relative_residual)
    checks.append(
        ("held_gap_identity", worst <= RESIDUAL_TOL, f"relative residual {worst:g}")
    )

    # Poisson layer statistics at 1e4 seeds
    lam = config.levy.total_mass
    horizon = config.horizon
    if lam > 0:
        seeds = 10_000
        counts = np.empty(seeds)
        for i in range(seeds):
            counts[i] = sample_prm(
                config.levy, horizon, PathStreams(config.master_seed + 1, i)
            ).times.size
        mean_rate = lam * horizon
        mean_band = 4.0 * np.sqrt(mean_rate / seeds)
        var_band = 4.0 * np.sqrt((mean_rate + 2 * mean_rate**2) / seeds)
        mean_ok = abs(counts.mean() - mean_rate) <= mean_band
        var_ok = abs(counts.var(ddof=1) - mean_rate) <= var_band
        checks.append(
            (
                "poisson_count_moments",
                bool(mean_ok and var_ok),
                f"mean {counts.mean():.4f} vs {mean_rate}",
            )
        )

        # Ito isometry for a deterministic linear integrand at 1e5 seeds
        seeds = 100_000
        w = np.arange(1, config.levy.dim + 1, dtype=float)
        if config.levy.kind == "atomic":
            g_atoms = config.levy.atom_locations @ w
            mean_g = float(config.levy.atom_masses @ g_atoms)
            second_g = float(config.levy.atom_masses @ g_atoms**2)
            stats = np.empty(seeds)
            for i in range(seeds):
                train = sample_prm(
                    config.levy, horizon, PathStreams(config.master_seed + 2, i)
                )
                stats[i] = float((train.marks @ w).sum()) - horizon * mean_g
            target = horizon * second_g
            sample_var = float(stats.var(ddof=0))
            iso_ok = abs(sample_var - target) <= 0.05 * target
            zero_ok = abs(stats.mean()) <= 4.0 * np.sqrt(target / seeds)
            checks.append(
                (
                    "ito_isometry",
                    bool(iso_ok),
                    f"sample var {sample_var:.5f} vs {target:.5f}",
                )
            )
            checks.append(("compensated_zero_mean", bool(zero_ok), ""))
    return checks


def run_selfcheck(config: ExperimentConfig, out: Path, workers: int, paths=None):
    checks = _selfcheck_suite(config, workers)
    for name, ok, detail in checks:
        line = f"{'PASS' if ok else 'FAIL'} {name}"
        if detail:
            line += f" ({detail})"
        print(line)
    payload = [
        {"check": name, "passed": ok, "detail": detail} for name, ok, detail in checks
    ]
    path = out / "selfcheck.json"
    _write_json(path, payload)
    return [path], {name: ok for name, ok, _ in checks}


_RUNNERS = {
    "simulate": run_simulate,
    "lln": run_lln,
    "clt": run_clt,
    "mterms": run_mterms,
    "selfcheck": run_selfcheck,
}


def run_subcommand(
    command: str,
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    workers: int | None = None,
    paths: int | None = None,
) -> dict:
    """Execute one subcommand and write its manifest; returns the manifest."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers if workers is not None else _workers()
    started = time.monotonic()
    stamp = datetime.now(timezone.utc).isoformat()
    files: list[Path] = []
    status = "ok"
    verdicts: dict[str, bool] = {}
    error = None
    try:
        files, verdicts = _RUNNERS[command](config, out, workers, paths)
    except Exception as exc:  # noqa: BLE001 - the manifest must record it
        status = "error"
        error = f"{type(exc).__name__}: {exc}"
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config_checksum": config.checksum(),
        "timestamp": stamp,
        "duration_seconds": time.monotonic() - started,
        "workers": workers,
        "status": status,
        "error": error,
        "verdicts": verdicts,
        "outputs": [
            {"path": f.name, "sha256": _sha256(f)} for f in files if f.exists()
        ],
    }
    _write_json(out / "manifest.json", manifest)
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
    return manifest


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jumpflux",
        description=(
            "Monte Carlo rate verification for sampled-data systems with "
            "small Brownian and compensated-Poisson noise"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "write one coupled path bundle"),
        ("lln", "deviation rate of the noisy state from the closed loop"),
        ("clt", "deviation rate of the rescaled fluctuation from its limit"),
        ("mterms", "held-gap decomposition diagnostics"),
        ("selfcheck", "run the module invariant suite"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config file (default: built-in)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config field, dotted keys allowed",
        )
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--paths", type=int, help="override paths per point")
        p.add_argument("--out", help="override output directory")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.config:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        else:
            raw = default_config_dict()
        raw = apply_overrides(raw, args.overrides)
        if args.seed is not None:
            raw["master_seed"] = args.seed
        if args.paths is not None:
            raw["paths_per_point"] = args.paths
        config = build_config(raw)
    except (JumpfluxError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    manifest = run_subcommand(
        args.command, config, out_dir=args.out, paths=args.paths
    )
    if manifest["status"] != "ok":
        return 1
    return 0 if all(manifest["verdicts"].values()) else 1


if __name__ == "__main__":
    raise SystemExit(main())
