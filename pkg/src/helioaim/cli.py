"""``helioaim`` command-line entry point."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .config import RunConfig, load_config
from .errors import (
    BackendError,
    DomainError,
    HelioAimError,
    InvalidConfigError,
    ShapeError,
    UsageError,
)
from .flux import AimVector, FluxMap
from .milp import make_backend
from .milp.backends import SOLVER_ENV
from .optimizer import (
    AimingProblem,
    equatorial_baseline,
    generate_data,
    read_aim_csv,
    run,
    sweep_baseline,
    write_aim_csv,
)
from .plant import generate_field, read_field_csv, solar_position, write_field_csv
from .scoring import MetricsReport
from .surrogate import Dataset, train

log = logging.getLogger("helioaim")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DOMAIN, EXIT_SOLVER = 0, 1, 2, 3, 4
METRIC_KEYS = ("collected_energy", "distribution_difference", "spl", "max_suns")


# -- shared plumbing ------------------------------------------------------

def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, optimizer=replace(cfg.optimizer, seed=args.seed))
    if getattr(args, "hour", None) is not None:
        cfg = replace(cfg, sun=replace(cfg.sun, hours=(float(args.hour),)))
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    env_path = os.environ.get(SOLVER_ENV)
    if env_path:
        cfg = replace(cfg, solver=replace(cfg.solver, path=env_path))
    return cfg


def _field(cfg: RunConfig):
    if cfg.field_csv:
        try:
            return read_field_csv(cfg.field_csv)
        except (OSError, KeyError, ValueError) as exc:
            raise InvalidConfigError(f"cannot read field file {cfg.field_csv}: {exc}") from exc
    return generate_field(cfg.plant, seed=cfg.layout_seed)


def _hour_dirs(cfg: RunConfig):
    """(hour, output directory) pairs; subdirectories only when several hours are requested."""
    base = Path(cfg.output_dir)
    if len(cfg.sun.hours) == 1:
        return [(cfg.sun.hours[0], base)]
    return [(h, base / f"hour_{h:05.2f}") for h in cfg.sun.hours]


def _problem(cfg: RunConfig, field, hour: float) -> AimingProblem:
    sun = solar_position(cfg.plant.latitude, cfg.sun.day, hour)
    if sun.elevation <= 0:
        raise DomainError(f"sun below horizon at solar hour {hour} (elevation {sun.elevation:.2f} deg)")
    return AimingProblem(field, sun, cfg.plant, cfg.score.lam, cfg.score.central_fraction, cfg.workers)


def _aims(source: str, problem: AimingProblem, cfg: RunConfig) -> AimVector:
    if source == "equatorial":
        return equatorial_baseline(problem.n_groups, cfg.plant.k_max)
    if source == "sweep":
        return sweep_baseline(problem.field, problem.sun, cfg.plant, cfg.baseline.k_step,
                              cfg.baseline.dip_fraction)
    if not Path(source).is_file():
        raise UsageError(f"aim file not found: {source}")
    aims = read_aim_csv(source, problem.n_groups)
    try:
        aims.check_bounds(cfg.plant.k_min, cfg.plant.k_max)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    return aims


def write_profiles(flux: FluxMap, directory: Path) -> None:
    """One CSV per panel with the horizontally averaged vertical profile."""
    directory.mkdir(parents=True, exist_ok=True)
    profiles = flux.vertical_profiles()
    heights = flux.node_positions[0, :, 0, 2]
    for p, profile in enumerate(profiles):
        with open(directory / f"panel_{p:02d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["v", "height", "C_V"])
            for v, (z, c) in enumerate(zip(heights, profile)):
                writer.writerow([v, repr(float(z)), repr(float(c))])


def _write_outputs(problem: AimingProblem, aims: AimVector, out: Path) -> MetricsReport:
    out.mkdir(parents=True, exist_ok=True)
    flux, score, report = problem.evaluate(aims)
    flux.write_csv(out / "flux_map.csv")
    write_profiles(flux, out / "profiles")
    write_aim_csv(aims, out / "aim.csv")
    report.write_json(out / "metrics.json")
    (out / "score.json").write_text(json.dumps(score.to_json(), indent=2))
    return report


def _save_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(yaml.safe_dump(cfg.to_mapping(), sort_keys=False))


# -- commands -------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, aim_source: str = "equatorial") -> int:
    field = _field(cfg)
    for hour, out in _hour_dirs(cfg):
        problem = _problem(cfg, field, hour)
        report = _write_outputs(problem, _aims(aim_source, problem, cfg), out)
        log.info("hour %.2f: %s", hour, report.to_json())
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, aim_source: str = "sweep") -> int:
    if aim_source not in ("sweep", "equatorial"):
        raise UsageError("baseline --aim must be sweep or equatorial")
    field = _field(cfg)
    for hour, out in _hour_dirs(cfg):
        problem = _problem(cfg, field, hour)
        _write_outputs(problem, _aims(aim_source, problem, cfg), out)
        write_field_csv(field, out / "field.csv")
    return EXIT_OK


def cmd_datagen(cfg: RunConfig, samples: int | None = None, aim_source: str | None = None) -> int:
    field = _field(cfg)
    settings = cfg.optimizer
    for hour, out in _hour_dirs(cfg):
        problem = _problem(cfg, field, hour)
        n = samples or settings.sampler.size(1)
        if aim_source:
            # samples around a given aim vector, as in the refinement iterations
            data = generate_data(2, n, _aims(aim_source, problem, cfg), settings.sampler, problem, settings.seed)
        else:
            data = generate_data(1, n, None, settings.sampler, problem, settings.seed)
        out.mkdir(parents=True, exist_ok=True)
        data.write_csv(out / "dataset.csv")
    return EXIT_OK


def cmd_train(cfg: RunConfig, data_path: str) -> int:
    if not Path(data_path).is_file():
        raise UsageError(f"dataset not found: {data_path}")
    try:
        data = Dataset.read_csv(data_path, cfg.plant.k_min, cfg.plant.k_max)
    except ValueError as exc:
        raise UsageError(f"cannot read dataset {data_path}: {exc}") from exc
    model = train(data, replace(cfg.optimizer.train, seed=cfg.optimizer.seed))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    (out / "train_info.json").write_text(json.dumps(model.info, indent=2))
    return EXIT_OK


def cmd_optimize(cfg: RunConfig) -> int:
    backend = make_backend(cfg.solver.backend, cfg.solver.path)
    backend.check()
    field = _field(cfg)
    for hour, out in _hour_dirs(cfg):
        problem = _problem(cfg, field, hour)
        out.mkdir(parents=True, exist_ok=True)
        _save_config(cfg, out)
        best, history = run(problem, cfg.optimizer, backend, log_path=out / "run_log.jsonl")
        _write_outputs(problem, best, out)
    return EXIT_OK


def compare_metrics(a: MetricsReport, b: MetricsReport) -> list[dict]:
    """Rows of (metric, A, B, delta%) with the delta relative to B, one decimal."""
    rows = []
    for key in METRIC_KEYS:
        va, vb = getattr(a, key), getattr(b, key)
        delta = None if vb == 0 else round(100.0 * (va - vb) / abs(vb), 1)
        if delta == 0:
            delta = 0.0  # no negative zero in reports
        rows.append({"metric": key, "a": va, "b": vb, "delta_pct": delta})
    return rows


def cmd_compare(cfg: RunConfig, run_a: str, run_b: str) -> int:
    reports = []
    for directory in (run_a, run_b):
        path = Path(directory) / "metrics.json"
        if not path.is_file():
            raise UsageError(f"missing metrics file: {path}")
        try:
            reports.append(MetricsReport.read_json(path))
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"invalid metrics file {path}: {exc}") from exc
    rows = compare_metrics(*reports)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["metric", "a", "b", "delta_pct"])
        writer.writeheader()
        writer.writerows(rows)
    (out / "comparison.json").write_text(json.dumps({"a": str(run_a), "b": str(run_b), "rows": rows}, indent=2))
    for r in rows:
        delta = "n/a" if r["delta_pct"] is None else f"{r['delta_pct']:+.1f}%"
        print(f"{r['metric']:<24} {r['a']:>12.4g} {r['b']:>12.4g} {delta:>9}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helioaim", description="Heliostat aiming optimization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, aim_default=None):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides optimizer.seed)")
        p.add_argument("--hour", type=float, help="single solar hour (overrides sun.hours)")
        if aim_default is not None:
            p.add_argument("--aim", default=aim_default, help="equatorial, sweep or an aim CSV (group,k)")
        return p

    common(sub.add_parser("simulate", help="flux map, profiles and metrics for one aim vector"), "equatorial")
    common(sub.add_parser("baseline", help="sweep or equatorial baseline aim vector"), "sweep")
    p = common(sub.add_parser("datagen", help="sample aim vectors and label them with the quality score"))
    p.add_argument("--samples", type=int, help="number of samples (default: first schedule size)")
    p.add_argument("--aim", help="sample around this aim vector instead of the whole box")
    p = common(sub.add_parser("train", help="fit the surrogate network to a dataset"))
    p.add_argument("--data", required=True, help="dataset CSV from datagen")
    common(sub.add_parser("optimize", help="iterative surrogate optimization"))
    p = common(sub.add_parser("compare", help="metric table of run A against run B"))
    p.add_argument("run_a")
    p.add_argument("run_b")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.aim)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.aim)
        if args.command == "datagen":
            return cmd_datagen(cfg, args.samples, args.aim)
        if args.command == "train":
            return cmd_train(cfg, args.data)
        if args.command == "optimize":
            return cmd_optimize(cfg)
        if args.command == "compare":
            return cmd_compare(cfg, args.run_a, args.run_b)
    except (InvalidConfigError, UsageError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except BackendError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except HelioAimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
