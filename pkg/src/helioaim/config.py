"""Run configuration: one YAML file with strict sections and keys."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import InvalidConfigError
from .optimizer import DEFAULT_EPS, DEFAULT_HULL_POINTS, RunSettings, SamplerConfig
from .plant import EQUINOX_DAY, PlantConfig, desk_scale, dunhuang
from .surrogate import TrainConfig

PRESETS = {"desk": desk_scale, "dunhuang": dunhuang}


@dataclass(frozen=True)
class SunSettings:
    day: int = EQUINOX_DAY
    hours: tuple = (12.0,)


@dataclass(frozen=True)
class ScoreSettings:
    lam: float = 5000.0
    central_fraction: float = 0.5


@dataclass(frozen=True)
class BaselineSettings:
    k_step: float = 0.1
    dip_fraction: float = 0.01


@dataclass(frozen=True)
class SolverSettings:
    backend: str = "highs"
    path: str | None = None
    gap: float = 1e-4
    time_limit: float = 300.0


@dataclass
class RunConfig:
    plant: PlantConfig = field(default_factory=desk_scale)
    layout_seed: int = 0
    field_csv: str | None = None
    sun: SunSettings = field(default_factory=SunSettings)
    score: ScoreSettings = field(default_factory=ScoreSettings)
    optimizer: RunSettings = field(default_factory=RunSettings)
    workers: int = 1
    baseline: BaselineSettings = field(default_factory=BaselineSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    output_dir: str = "runs/default"

    def to_mapping(self) -> dict:
        opt = self.optimizer
        return {
            "plant": {"preset": None, "layout_seed": self.layout_seed, "field_csv": self.field_csv,
                      **self.plant.to_mapping()},
            "sun": {"day": self.sun.day, "hours": list(self.sun.hours)},
            "score": {"lambda": self.score.lam, "central_fraction": self.score.central_fraction},
            "optimizer": {
                "iterations": opt.iterations, "eps": list(opt.eps), "seed": opt.seed,
                "max_hull_points": opt.max_hull_points, "workers": self.workers,
                "stop": {"tolerance": opt.stop_tolerance, "patience": opt.stop_patience},
                "sampler": {f.name: getattr(opt.sampler, f.name) for f in fields(SamplerConfig)},
                "train": {f.name: (list(getattr(opt.train, f.name)) if f.name == "hidden"
                                   else getattr(opt.train, f.name))
                          for f in fields(TrainConfig) if f.name != "seed"},
            },
            "baseline": {"k_step": self.baseline.k_step, "dip_fraction": self.baseline.dip_fraction},
            "solver": {"backend": self.solver.backend, "path": self.solver.path,
                       "gap": self.solver.gap, "time_limit": self.solver.time_limit},
            "output": {"dir": self.output_dir},
        }


def _section(data: Mapping[str, Any], name: str, allowed: set[str]) -> dict:
    values = data.get(name) or {}
    if not isinstance(values, Mapping):
        raise InvalidConfigError(f"section {name!r} must be a mapping")
    unknown = set(values) - allowed
    if unknown:
        raise InvalidConfigError(f"unknown key(s) in {name}: {', '.join(sorted(map(str, unknown)))}")
    return dict(values)


def _number(value, name: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidConfigError(f"{name} must be a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise InvalidConfigError(f"{name} must be an integer")
        return int(value)
    return float(value)


def _dataclass_from(cls, values: dict, prefix: str, converters: Mapping[str, Any] | None = None):
    converters = converters or {}
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, value in values.items():
        if key not in known:
            raise InvalidConfigError(f"unknown key {prefix}.{key}")
        conv = converters.get(key)
        out[key] = conv(value) if conv and value is not None else value
    try:
        return cls(**out)
    except TypeError as exc:
        raise InvalidConfigError(f"{prefix}: {exc}") from exc


def parse_config(data: Mapping[str, Any] | None) -> RunConfig:
    data = data or {}
    if not isinstance(data, Mapping):
        raise InvalidConfigError("config root must be a mapping")
    sections = {"plant", "sun", "score", "optimizer", "baseline", "solver", "output"}
    unknown = set(data) - sections
    if unknown:
        raise InvalidConfigError(f"unknown section(s): {', '.join(sorted(map(str, unknown)))}")

    plant_raw = _section(data, "plant", {"preset", "layout_seed", "field_csv", *PlantConfig.SECTIONS})
    preset = plant_raw.pop("preset", None) or "desk"
    if preset not in PRESETS:
        raise InvalidConfigError(f"unknown plant preset {preset!r} (choose from {sorted(PRESETS)})")
    layout_seed = _number(plant_raw.pop("layout_seed", 0), "plant.layout_seed", int)
    field_csv = plant_raw.pop("field_csv", None)
    sun_raw = _section(data, "sun", {"day", "hours", "latitude"})
    if "latitude" in sun_raw:
        plant_raw.setdefault("field", {})
        plant_raw["field"] = {**plant_raw["field"], "latitude": sun_raw.pop("latitude")}
    plant = PlantConfig.from_mapping(plant_raw, base=PRESETS[preset]())

    day = _number(sun_raw.get("day", EQUINOX_DAY), "sun.day", int)
    if not 1 <= day <= 366:
        raise InvalidConfigError("sun.day must lie in [1, 366]")
    hours = sun_raw.get("hours", [12.0])
    if isinstance(hours, (int, float)) and not isinstance(hours, bool):
        hours = [hours]
    if not isinstance(hours, list) or not hours:
        raise InvalidConfigError("sun.hours must be a non-empty list of solar hours")
    hours = tuple(_number(h, "sun.hours", float) for h in hours)
    if any(not 0 <= h <= 24 for h in hours):
        raise InvalidConfigError("sun.hours must lie in [0, 24]")

    score_raw = _section(data, "score", {"lambda", "central_fraction"})
    lam = _number(score_raw.get("lambda", 5000.0), "score.lambda")
    frac = _number(score_raw.get("central_fraction", 0.5), "score.central_fraction")
    if lam < 0:
        raise InvalidConfigError("score.lambda must be >= 0")
    if not 0 < frac <= 1:
        raise InvalidConfigError("score.central_fraction must lie in (0, 1]")

    opt_raw = _section(data, "optimizer", {"iterations", "eps", "seed", "sampler", "train", "stop",
                                           "max_hull_points", "workers"})
    sampler = _dataclass_from(SamplerConfig, _section(opt_raw, "sampler", {f.name for f in fields(SamplerConfig)}),
                              "optimizer.sampler")
    train_raw = _section(opt_raw, "train", {f.name for f in fields(TrainConfig)} - {"seed"})
    train_cfg = _dataclass_from(TrainConfig, train_raw, "optimizer.train",
                                {"hidden": lambda v: tuple(_number(x, "optimizer.train.hidden", int)
                                                           for x in (v if isinstance(v, list) else [v]))})
    if any(h < 1 for h in train_cfg.hidden):
        raise InvalidConfigError("optimizer.train.hidden widths must be >= 1")
    stop_raw = _section(opt_raw, "stop", {"tolerance", "patience"})
    patience = stop_raw.get("patience", 2)
    eps = opt_raw.get("eps", list(DEFAULT_EPS))
    if not isinstance(eps, list):
        raise InvalidConfigError("optimizer.eps must be a list")
    hull = opt_raw.get("max_hull_points", DEFAULT_HULL_POINTS)
    settings = RunSettings(
        iterations=_number(opt_raw.get("iterations", 6), "optimizer.iterations", int),
        eps=tuple(_number(e, "optimizer.eps", float) for e in eps),
        sampler=sampler,
        train=train_cfg,
        seed=_number(opt_raw.get("seed", 0), "optimizer.seed", int),
        max_hull_points=None if hull is None else _number(hull, "optimizer.max_hull_points", int),
        stop_tolerance=_number(stop_raw.get("tolerance", 0.005), "optimizer.stop.tolerance"),
        stop_patience=None if patience is None else _number(patience, "optimizer.stop.patience", int),
    )
    workers = _number(opt_raw.get("workers", 1), "optimizer.workers", int)

    base_raw = _section(data, "baseline", {"k_step", "dip_fraction"})
    baseline = BaselineSettings(_number(base_raw.get("k_step", 0.1), "baseline.k_step"),
                                _number(base_raw.get("dip_fraction", 0.01), "baseline.dip_fraction"))
    if not baseline.k_step > 0:
        raise InvalidConfigError("baseline.k_step must be > 0")

    solver_raw = _section(data, "solver", {"backend", "path", "gap", "time_limit"})
    solver = SolverSettings(
        backend=str(solver_raw.get("backend", "highs")),
        path=solver_raw.get("path"),
        gap=_number(solver_raw.get("gap", 1e-4), "solver.gap"),
        time_limit=_number(solver_raw.get("time_limit", 300.0), "solver.time_limit"),
    )
    if solver.backend not in ("highs", "lp-file", "cbc", "enumerate"):
        raise InvalidConfigError(f"unknown solver backend {solver.backend!r}")
    settings = replace(settings, time_limit=solver.time_limit, gap=solver.gap)

    out_raw = _section(data, "output", {"dir"})
    return RunConfig(plant=plant, layout_seed=layout_seed, field_csv=field_csv,
                     sun=SunSettings(day, hours), score=ScoreSettings(lam, frac), optimizer=settings,
                     workers=workers, baseline=baseline, solver=solver,
                     output_dir=str(out_raw.get("dir", "runs/default")))


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(data)
