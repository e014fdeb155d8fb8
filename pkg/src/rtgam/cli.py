"""Command-line pipeline: simulate | ingest | rt | fit | effects | cv | per-province | summary.

Every command writes its outputs atomically (temp file + rename) into the
--out directory together with a `<command>_manifest.json` recording the
content hashes of its inputs, the resolved configuration, and the produced
files.  Each delimited output names its manifest in a leading `#` comment
line, which all readers in this package tolerate.  Given identical inputs,
configuration, and seed, outputs are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BasisError
from .config import ConfigError, RunConfig, config_as_dict, load_config
from .effects import fit_per_province, lopo_cv, partial_effects
from .gam import FitError, fit_from_dict, fit_gam, fit_to_dict
from .panel import (
    CASE_HEADER,
    ENV_HEADER,
    MOBILITY_HEADER,
    Panel,
    PanelError,
    build_panel,
    ingest_sources,
    read_panel_csv,
    summarize_panel,
)
from .rt import EstimatorError, RtSeries, estimate_province_rt
from .synth import ScenarioSpec, SimulationError, simulate_panel

PANEL_HEADER = CASE_HEADER + ENV_HEADER[2:] + MOBILITY_HEADER[2:]

_ERRORS = (PanelError, EstimatorError, FitError, BasisError, SimulationError, ConfigError)


def _fmt(value: float) -> str:
    return repr(float(value))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_name(command: str) -> str:
    return f"{command.replace('-', '_')}_manifest.json"


def _write_manifest(
    out: Path,
    command: str,
    inputs: list[Path],
    config: RunConfig,
    outputs: list[str],
) -> None:
    payload = {
        "command": command,
        "package": "rtgam",
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "config": config_as_dict(config),
        "outputs": sorted(outputs),
    }
    _atomic_write(
        out / _manifest_name(command), json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _csv_text(manifest: str, header: list[str], rows: list[list[str]]) -> str:
    lines = [f"# manifest: {manifest}", ",".join(header)]
    lines.extend(",".join(row) for row in rows)
    return "\n".join(lines) + "\n"


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(getattr(args, "config", None))
    if getattr(args, "jobs", None) is not None:
        config.jobs = args.jobs
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    config.validate()
    return config


def _flag_text(flags: set[str]) -> str:
    return "|".join(sorted(flags)) if flags else "ok"


def _load_rt_csv(path: str) -> dict[str, RtSeries]:
    rows: dict[str, list[tuple[date, float, set[str]]]] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise EstimatorError(f"cannot read rt file: {exc}") from exc
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "date,province,rt,flag":
        raise EstimatorError(f"rt file {path} header mismatch: expected date,province,rt,flag")
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        if len(parts) != 4:
            raise EstimatorError(f"rt file {path} line {lineno}: wrong field count")
        try:
            day = date.fromisoformat(parts[0])
            value = float(parts[2]) if parts[2] != "" else float("nan")
        except ValueError as exc:
            raise EstimatorError(f"rt file {path} line {lineno}: {exc}") from exc
        flags = set() if parts[3] == "ok" else set(parts[3].split("|"))
        rows.setdefault(parts[1], []).append((day, value, flags))
    series: dict[str, RtSeries] = {}
    for province, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        dates = [e[0] for e in entries]
        rt = np.array([e[1] for e in entries])
        nan = np.full(len(entries), np.nan)
        series[province] = RtSeries(
            province, dates, rt, nan.copy(), nan.copy(), [e[2] for e in entries]
        )
    return series


def _estimate_all(panel: Panel, config: RunConfig) -> dict[str, RtSeries]:
    gi = config.generation_interval()
    delay = config.delay_model()

    def _one(province: str) -> tuple[str, RtSeries]:
        data = panel.arrays(province)
        return province, estimate_province_rt(
            province, data.dates, data.new_cases, data.new_tests,
            gi=gi, delay=delay,
            half_width=config.rt_half_width, test_floor=config.rt_test_floor,
        )

    if config.jobs > 1 and len(panel.provinces) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            pairs = list(pool.map(_one, panel.provinces))
    else:
        pairs = [_one(p) for p in panel.provinces]
    return dict(sorted(pairs))


# ---------------------------------------------------------------- commands


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.provinces is not None:
        config.sim_provinces = args.provinces
    if args.days is not None:
        config.sim_days = args.days
    if args.noise_sd is not None:
        config.sim_noise_sd = args.noise_sd
    config.validate()
    out = _out_dir(args)
    manifest = _manifest_name("simulate")

    spec = ScenarioSpec(
        n_provinces=config.sim_provinces,
        days=config.sim_days,
        start=config.window_start,
        noise_sd=config.sim_noise_sd,
        seed=config.seed,
        gi=config.generation_interval(),
        delay=config.delay_model(),
    )
    sim = simulate_panel(spec)

    case_rows, env_rows, mob_rows, truth_rows = [], [], [], []
    for r in sim.panel.rows:
        d = r.date.isoformat()
        case_rows.append([d, r.province, r.region, _fmt(r.new_cases), _fmt(r.new_tests)])
        env_rows.append(
            [d, r.province, _fmt(r.temperature_c), _fmt(r.humidity_pct), _fmt(r.pm25)]
        )
        mob_rows.append([d, r.province, _fmt(r.mobility_decrease_pct)])
    for province in sim.panel.provinces:
        series = sim.true_rt[province]
        for day, value in zip(series.dates, series.rt):
            truth_rows.append([day.isoformat(), province, _fmt(value)])

    effect_rows = []
    for name in sorted(sim.effects):
        pooled = np.concatenate(
            [sim.panel.arrays(p).field(name) for p in sim.panel.provinces]
        )
        grid = np.linspace(pooled.min(), pooled.max(), 200)
        values = sim.effects[name](grid)
        effect_rows.extend(
            [name, _fmt(g), _fmt(v)] for g, v in zip(grid, values)
        )
    intercept_rows = [
        [p, _fmt(sim.intercepts[p])] for p in sim.panel.provinces
    ]

    _atomic_write(out / "cases.csv", _csv_text(manifest, CASE_HEADER, case_rows))
    _atomic_write(out / "environment.csv", _csv_text(manifest, ENV_HEADER, env_rows))
    _atomic_write(out / "mobility.csv", _csv_text(manifest, MOBILITY_HEADER, mob_rows))
    _atomic_write(
        out / "truth_rt.csv", _csv_text(manifest, ["date", "province", "rt"], truth_rows)
    )
    _atomic_write(
        out / "truth_effects.csv",
        _csv_text(manifest, ["term", "grid", "effect"], effect_rows),
    )
    _atomic_write(
        out / "truth_intercepts.csv",
        _csv_text(manifest, ["province", "intercept"], intercept_rows),
    )
    _write_manifest(
        out, "simulate", [], config,
        ["cases.csv", "environment.csv", "mobility.csv",
         "truth_rt.csv", "truth_effects.csv", "truth_intercepts.csv"],
    )
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    manifest = _manifest_name("ingest")

    raw = ingest_sources(args.cases, args.environment, args.mobility, config.window)
    panel, notes = build_panel(
        raw, config.threshold, config.window, config.max_missing_frac, config.gap_limit
    )

    panel_rows = [
        [
            r.date.isoformat(), r.province, r.region,
            _fmt(r.new_cases), _fmt(r.new_tests), _fmt(r.temperature_c),
            _fmt(r.humidity_pct), _fmt(r.pm25), _fmt(r.mobility_decrease_pct),
        ]
        for r in panel.rows
    ]
    diag_rows = [
        ["" if d.line is None else str(d.line), d.source, d.reason]
        for d in raw.diagnostics + notes
    ]
    _atomic_write(out / "panel.csv", _csv_text(manifest, PANEL_HEADER, panel_rows))
    _atomic_write(
        out / "ingest_diagnostics.csv",
        _csv_text(manifest, ["line", "source", "reason"], diag_rows),
    )
    _write_manifest(
        out, "ingest",
        [Path(args.cases), Path(args.environment), Path(args.mobility)],
        config, ["panel.csv", "ingest_diagnostics.csv"],
    )
    return 0


def cmd_rt(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    manifest = _manifest_name("rt")

    panel = read_panel_csv(args.panel)
    series = _estimate_all(panel, config)
    rows = []
    for province in panel.provinces:
        s = series[province]
        for t, day in enumerate(s.dates):
            value = "" if not np.isfinite(s.rt[t]) else _fmt(s.rt[t])
            rows.append([day.isoformat(), province, value, _flag_text(s.flags[t])])
    _atomic_write(
        out / "rt.csv", _csv_text(manifest, ["date", "province", "rt", "flag"], rows)
    )
    _write_manifest(out, "rt", [Path(args.panel)], config, ["rt.csv"])
    return 0


def _model_spec_from(config: RunConfig, basis_dim: int | None):
    if basis_dim is not None:
        config.basis_dim = basis_dim
        config.validate()
    return config.model_spec()


def cmd_fit(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    manifest = _manifest_name("fit")

    panel = read_panel_csv(args.panel)
    rts = _load_rt_csv(args.rt)
    fit = fit_gam(panel, rts, _model_spec_from(config, args.basis_dim))

    payload = fit_to_dict(fit)
    payload["manifest"] = manifest
    _atomic_write(out / "model.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")

    lines = [
        f"# manifest: {manifest}",
        f"observations: {fit.n} (excluded {fit.n_excluded})",
        f"provinces: {len(fit.province_levels)}",
        f"adjusted R^2: {fit.adjusted_r2:.4f}",
        f"GCV: {fit.gcv_score:.6g}",
        f"residual variance: {fit.sigma2:.6g}",
        f"total EDF: {fit.total_edf:.3f}",
        "",
        "term                     lambda        EDF    Wald        p",
    ]
    for name in fit.lambdas:
        stat, rank, p = fit.wald[name]
        lines.append(
            f"{name:<24} {fit.lambdas[name]:<13.6g} {fit.edf[name]:<6.3f} "
            f"{stat:<11.4g} {p:.3g}"
        )
    _atomic_write(out / "fit_summary.txt", "\n".join(lines) + "\n")
    _write_manifest(
        out, "fit", [Path(args.panel), Path(args.rt)], config,
        ["model.json", "fit_summary.txt"],
    )
    return 0


def _read_model(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise FitError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FitError(f"model file {path} is not valid JSON: {exc}") from exc
    return fit_from_dict(payload)


def cmd_effects(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    manifest = _manifest_name("effects")

    fit = _read_model(args.model)
    outputs = []
    for term in fit.terms:
        name = term.spec.covariate
        pe = partial_effects(fit, name, grid_size=args.grid_size)
        rows = [
            [_fmt(g), _fmt(e), _fmt(s), _fmt(lo), _fmt(hi)]
            for g, e, s, lo, hi in zip(pe.grid, pe.effect, pe.se, pe.ci_low, pe.ci_high)
        ]
        fname = f"effect_{name}.csv"
        _atomic_write(
            out / fname, _csv_text(manifest, ["grid", "effect", "se", "lo", "hi"], rows)
        )
        outputs.append(fname)
    _write_manifest(out, "effects", [Path(args.model)], config, outputs)
    return 0


def cmd_cv(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    manifest = _manifest_name("cv")

    panel = read_panel_csv(args.panel)
    rts = _load_rt_csv(args.rt)
    report = lopo_cv(panel, rts, _model_spec_from(config, args.basis_dim), jobs=config.jobs)

    rows = [
        [province, _fmt(report.mse[province]), str(report.n[province])]
        for province in sorted(report.mse)
    ]
    diag = [["", "cv", f"{province}: {reason}"] for province, reason in sorted(report.failures.items())]
    _atomic_write(out / "cv.csv", _csv_text(manifest, ["province", "mse", "n"], rows))
    outputs = ["cv.csv"]
    if diag:
        _atomic_write(
            out / "cv_diagnostics.csv",
            _csv_text(manifest, ["line", "source", "reason"], diag),
        )
        outputs.append("cv_diagnostics.csv")
    _write_manifest(out, "cv", [Path(args.panel), Path(args.rt)], config, outputs)
    return 0


def cmd_per_province(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    manifest = _manifest_name("per-province")

    panel = read_panel_csv(args.panel)
    rts = _load_rt_csv(args.rt)
    fits, skipped = fit_per_province(
        panel, rts, _model_spec_from(config, args.basis_dim), jobs=config.jobs
    )

    outputs = []
    for province, fit in fits.items():
        rows = []
        for term in fit.terms:
            name = term.spec.covariate
            pe = partial_effects(fit, name, grid_size=args.grid_size)
            rows.extend(
                [name, _fmt(g), _fmt(e), _fmt(s), _fmt(lo), _fmt(hi)]
                for g, e, s, lo, hi in zip(pe.grid, pe.effect, pe.se, pe.ci_low, pe.ci_high)
            )
        fname = f"effects_{province}.csv"
        _atomic_write(
            out / fname,
            _csv_text(manifest, ["term", "grid", "effect", "se", "lo", "hi"], rows),
        )
        outputs.append(fname)
    diag = [["", "per-province", f"{p}: {reason}"] for p, reason in sorted(skipped.items())]
    if diag:
        _atomic_write(
            out / "per_province_diagnostics.csv",
            _csv_text(manifest, ["line", "source", "reason"], diag),
        )
        outputs.append("per_province_diagnostics.csv")
    _write_manifest(out, "per-province", [Path(args.panel), Path(args.rt)], config, outputs)
    return 0


def cmd_summary(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    manifest = _manifest_name("summary")

    panel = read_panel_csv(args.panel)
    rts = _load_rt_csv(args.rt) if args.rt else None
    table = summarize_panel(panel, rts)
    rows = [
        [name, *(_fmt(v) for v in table.stats[name])]
        for name in table.variables
    ]
    _atomic_write(
        out / "summary.csv",
        _csv_text(manifest, ["variable", "mean", "sd", "min", "max"], rows),
    )
    inputs = [Path(args.panel)] + ([Path(args.rt)] if args.rt else [])
    _write_manifest(out, "summary", inputs, config, ["summary.csv"])
    return 0


# ---------------------------------------------------------------- parser


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key-value config file (section.key = value)")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--jobs", type=int, help="worker threads for per-province work")
    sub.add_argument("--seed", type=int, help="random seed (simulate only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtgam",
        description="Estimate daily reproductive numbers and fit smooth effect models.",
    )
    parser.add_argument("--version", action="version", version=f"rtgam {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset plus ground truth")
    _add_common(p)
    p.add_argument("--provinces", type=int, help="number of synthetic provinces")
    p.add_argument("--days", type=int, help="number of days")
    p.add_argument("--noise-sd", type=float, help="log-scale noise SD")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="join the three sources into a daily panel")
    _add_common(p)
    p.add_argument("--cases", required=True, help="cases csv (date,province,region,new_cases,new_tests)")
    p.add_argument("--environment", required=True, help="environment csv (date,province,temperature_c,humidity_pct,pm25)")
    p.add_argument("--mobility", required=True, help="mobility csv (date,province,mobility_decrease_pct)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rt", help="estimate daily reproductive numbers per province")
    _add_common(p)
    p.add_argument("--panel", required=True, help="panel csv from ingest")
    p.set_defaults(func=cmd_rt)

    p = sub.add_parser("fit", help="fit the penalized additive model")
    _add_common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--rt", required=True, help="rt csv from the rt command")
    p.add_argument("--basis-dim", type=int, help="override smooth basis dimension")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("effects", help="partial-effect curves with 95%% bands")
    _add_common(p)
    p.add_argument("--model", required=True, help="model.json from fit")
    p.add_argument("--grid-size", type=int, default=200)
    p.set_defaults(func=cmd_effects)

    p = sub.add_parser("cv", help="leave-one-province-out cross-validation")
    _add_common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--rt", required=True)
    p.add_argument("--basis-dim", type=int)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("per-province", help="independent per-province refits")
    _add_common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--rt", required=True)
    p.add_argument("--basis-dim", type=int)
    p.add_argument("--grid-size", type=int, default=200)
    p.set_defaults(func=cmd_per_province)

    p = sub.add_parser("summary", help="pooled summary statistics of the panel")
    _add_common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--rt", help="optional rt csv to add an rt row")
    p.set_defaults(func=cmd_summary)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
