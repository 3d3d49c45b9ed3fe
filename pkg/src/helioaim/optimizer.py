"""Data generation, the sample-train-encode-solve loop, and the baseline aiming strategies."""
from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import truncnorm

from .errors import BackendError, EncodingError, InvalidConfigError, RunError, UsageError
from .flux import AimVector, FluxMap, FluxModel
from .milp import MilpModel, SolverBackend, TrustRegion, encode, make_backend, solve
from .plant import Heliostat, PlantConfig, SunState, group_sectors, panel_weights
from .scoring import MetricsReport, ScoreBreakdown, metrics_from, quality_score, quality_scores
from .surrogate import Dataset, SurrogateModel, TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_EPS = (0.0, 0.05, 0.1, 0.2, 0.5)
# trust-region rows kept per MILP (k-means centroids); None keeps every sample
DEFAULT_HULL_POINTS = 500


@dataclass(frozen=True)
class SamplerConfig:
    """How aim vectors are drawn for the training set.

    The first iteration draws from ``mode`` (uniform on ``[a, b]`` or a normal
    with ``mu``/``sigma``, truncated to the box). Later iterations draw
    ``N(X*, sigma)`` around the incumbent, truncated to the box.
    """

    mode: str = "uniform"
    a: float | None = None  # defaults to k_min
    b: float | None = None  # defaults to k_max
    mu: float = 1.5
    sigma: float = 0.25
    size_base: int = 3000
    size_step: int = 1000

    def __post_init__(self):
        if self.mode not in ("uniform", "normal"):
            raise InvalidConfigError(f"sampler mode must be uniform or normal, got {self.mode!r}")
        if not self.sigma >= 0:
            raise InvalidConfigError("sampler sigma must be >= 0")
        if self.a is not None and self.b is not None and not self.a < self.b:
            raise InvalidConfigError("sampler needs a < b")
        if self.size_base < 1 or self.size_step < 0:
            raise InvalidConfigError("sample size schedule must be positive and non-decreasing")

    def size(self, t: int) -> int:
        return self.size_base + self.size_step * (t - 1)

    def limits(self, k_min: float, k_max: float) -> tuple[float, float]:
        a = k_min if self.a is None else self.a
        b = k_max if self.b is None else self.b
        if not k_min <= a < b <= k_max:
            raise InvalidConfigError(f"uniform limits [{a}, {b}] must lie inside [{k_min}, {k_max}]")
        return a, b


class AimingProblem:
    """Field, sun and score settings bundled with a reusable flux model."""

    def __init__(self, field: Sequence[Heliostat], sun: SunState, config: PlantConfig,
                 lam: float = 5000.0, central_fraction: float = 0.5, workers: int = 1):
        if lam < 0:
            raise InvalidConfigError("lambda must be >= 0")
        self.field = list(field)
        self.sun = sun
        self.config = config
        self.lam = float(lam)
        self.central_fraction = central_fraction
        self.workers = max(1, int(workers))
        self.model = FluxModel(self.field, sun, config)
        self.n_groups = self.model.n_groups
        self.weights = panel_weights(self.field, config.panel_count)

    @property
    def k_bounds(self) -> tuple[float, float]:
        return self.config.k_min, self.config.k_max

    def with_lambda(self, lam: float) -> "AimingProblem":
        other = object.__new__(AimingProblem)
        other.__dict__.update(self.__dict__)
        other.lam = float(lam)
        return other

    def flux(self, aims) -> FluxMap:
        return self.model.evaluate(AimVector(aims.k if isinstance(aims, AimVector) else aims))

    def score(self, flux: FluxMap) -> ScoreBreakdown:
        return quality_score(flux, self.lam, self.weights, self.central_fraction)

    def metrics(self, flux: FluxMap) -> MetricsReport:
        return metrics_from(flux, self.weights, self.central_fraction)

    def evaluate(self, aims) -> tuple[FluxMap, ScoreBreakdown, MetricsReport]:
        """True quality score and metrics from one flux map."""
        flux = self.flux(aims)
        return flux, self.score(flux), self.metrics(flux)

    def scores(self, K, chunk: int = 16) -> np.ndarray:
        """Quality scores for a batch of aim vectors (B, n_groups)."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        blocks = [K[i:i + chunk * 8] for i in range(0, K.shape[0], chunk * 8)]

        def one(block):
            C, _ = self.model.evaluate_batch(block, chunk=chunk)
            return quality_scores(C, self.model.dv, self.lam, self.weights, self.central_fraction)

        if self.workers > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(one, blocks))
        else:
            parts = [one(b) for b in blocks]
        return np.concatenate(parts) if parts else np.zeros(0)


# -- data generation ------------------------------------------------------

def sample_aims(t: int, n: int, n_groups: int, incumbent: AimVector | None, cfg: SamplerConfig,
                k_bounds: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    if t < 1:
        raise UsageError("iteration index t must be >= 1")
    k_min, k_max = k_bounds
    if t > 1:
        if incumbent is None:
            raise UsageError("sampling around the incumbent needs an incumbent for t > 1")
        center = np.asarray(incumbent.k, dtype=float)
        if center.size != n_groups:
            raise UsageError(f"incumbent has {center.size} factors, expected {n_groups}")
        K = _truncated_normal(center, cfg.sigma, (n, n_groups), k_bounds, rng)
    elif cfg.mode == "uniform":
        a, b = cfg.limits(k_min, k_max)
        K = rng.uniform(a, b, size=(n, n_groups))
    else:
        K = _truncated_normal(np.full(n_groups, cfg.mu), cfg.sigma, (n, n_groups), k_bounds, rng)
    return np.clip(K, k_min, k_max)  # guards round-off only


def _truncated_normal(center, sigma, shape, k_bounds, rng):
    """Normal around ``center`` restricted to the box (not clipped, so the bounds get no extra mass)."""
    center = np.clip(np.broadcast_to(center, shape), *k_bounds)
    if sigma == 0:
        return center.copy()
    lo, hi = (k_bounds[0] - center) / sigma, (k_bounds[1] - center) / sigma
    return truncnorm.rvs(lo, hi, loc=center, scale=sigma, random_state=rng)


def generate_data(t: int, n: int, incumbent: AimVector | None, cfg: SamplerConfig,
                  problem: AimingProblem, seed: int = 0) -> Dataset:
    """Draw ``n`` aim vectors and label each with its true quality score."""
    rng = np.random.default_rng(seed)
    K = sample_aims(t, n, problem.n_groups, incumbent, cfg, problem.k_bounds, rng)
    return Dataset(K, problem.scores(K), *problem.k_bounds)


# -- baselines ------------------------------------------------------------

def equatorial_baseline(n_groups: int, k_max: float = 3.0) -> AimVector:
    return AimVector(np.full(n_groups, float(k_max)))


def is_bimodal(profile, dip_fraction: float = 0.01) -> bool:
    """Two local maxima separated by a dip deeper than ``dip_fraction`` of the peak."""
    profile = np.asarray(profile, dtype=float)
    peak = profile.max(initial=0.0)
    if peak <= 0:
        return False
    peaks, _ = find_peaks(profile, prominence=dip_fraction * peak)
    return peaks.size >= 2


def sweep_baseline(field: Sequence[Heliostat], sun: SunState, config: PlantConfig,
                   k_grid_step: float = 0.1, dip_fraction: float = 0.01) -> AimVector:
    """Downward sweep of k from ``k_max``, with one k chosen per sector.

    All sectors are swept together. Each sector keeps the last k before the
    vertical profile of its own panel (full-field flux) turns bimodal.
    """
    if not k_grid_step > 0:
        raise InvalidConfigError("k_grid_step must be > 0")
    field = list(field)
    model = FluxModel(field, sun, config)
    sectors = group_sectors(field)
    n_steps = int(np.floor((config.k_max - config.k_min) / k_grid_step + 1e-9))
    grid = config.k_max - k_grid_step * np.arange(n_steps + 1)
    C, _ = model.evaluate_batch(np.repeat(grid[:, None], model.n_groups, axis=1))
    profiles = C.mean(axis=-1)  # (steps, P, V)
    k = np.full(model.n_groups, config.k_max)
    for sector in np.unique(sectors):
        chosen = None
        for i in range(grid.size):
            if is_bimodal(profiles[i, sector], dip_fraction):
                chosen = grid[max(i - 1, 0)]
                break
        if chosen is None:
            warnings.warn(f"sector {sector}: profile never became bimodal; using k_min", RuntimeWarning)
            chosen = config.k_min
        k[sectors == sector] = chosen
    return AimVector(k)


# -- iterative optimization -----------------------------------------------

@dataclass
class Candidate:
    eps: float
    status: str
    k: list[float] | None = None
    true_qs: float | None = None
    predicted_qs: float | None = None
    solve_time: float = 0.0

    def to_json(self) -> dict:
        return {"eps": self.eps, "status": self.status, "k": self.k, "true_qs": self.true_qs,
                "predicted_qs": self.predicted_qs, "solve_time": self.solve_time}


@dataclass
class IterationRecord:
    iteration: int
    n_samples: int
    candidates: list[Candidate]
    incumbent: AimVector | None
    incumbent_qs: float | None
    metrics: MetricsReport | None
    wall_time: float
    failed: bool = False
    val_rmse: float | None = None

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "n_samples": self.n_samples,
            "candidates": [c.to_json() for c in self.candidates],
            "incumbent": None if self.incumbent is None else self.incumbent.k.tolist(),
            "incumbent_qs": self.incumbent_qs,
            "metrics": None if self.metrics is None else self.metrics.to_json(),
            "wall_time": self.wall_time,
            "failed": self.failed,
            "val_rmse": self.val_rmse,
        }


@dataclass
class RunSettings:
    iterations: int = 6
    eps: tuple = DEFAULT_EPS
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    time_limit: float = 300.0
    gap: float = 1e-4
    max_hull_points: int | None = DEFAULT_HULL_POINTS
    stop_tolerance: float = 0.005
    stop_patience: int | None = 2  # None disables early stopping

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidConfigError("need at least one iteration")
        if not len(self.eps):
            raise InvalidConfigError("epsilon list must not be empty")
        if any(e < 0 for e in self.eps):
            raise InvalidConfigError("epsilon values must be >= 0")


def _solve_candidates(model: SurrogateModel, data: Dataset, problem: AimingProblem, settings: RunSettings,
                      backend: SolverBackend, seed: int):
    tr = TrustRegion(data.input_scaler().scale(data.X), 0.0)
    if settings.max_hull_points:
        tr = tr.subsample(settings.max_hull_points, seed=seed)
    out = []
    for eps in sorted(settings.eps):
        start = time.perf_counter()
        try:
            milp_model: MilpModel = encode(model, tr.with_eps(eps), problem.k_bounds)
            sol = solve(milp_model, backend, time_limit=settings.time_limit, gap=settings.gap)
        except (BackendError, EncodingError) as exc:
            log.warning("eps=%g: solve failed: %s", eps, exc)
            out.append((Candidate(eps, "error", solve_time=time.perf_counter() - start), None))
            continue
        if not sol.has_solution:
            out.append((Candidate(eps, sol.status, solve_time=time.perf_counter() - start), None))
            continue
        flux, score, report = problem.evaluate(sol.k)
        cand = Candidate(eps, sol.status, sol.k.k.tolist(), score.score, sol.qs, time.perf_counter() - start)
        out.append((cand, (sol.k, report)))
    return out


def run(problem: AimingProblem, settings: RunSettings | None = None, backend: SolverBackend | None = None,
        log_path: str | Path | None = None,
        callback: Callable[[IterationRecord], None] | None = None) -> tuple[AimVector, list[IterationRecord]]:
    """Iterate sample, train, encode and solve; keep the best aim vector by true quality score."""
    settings = settings or RunSettings()
    backend = backend or make_backend("highs")
    backend.check()
    seeds = np.random.SeedSequence(settings.seed).generate_state(settings.iterations * 2)
    history: list[IterationRecord] = []
    incumbent: AimVector | None = None
    incumbent_qs: float | None = None
    incumbent_metrics: MetricsReport | None = None
    stale = 0
    log_file = open(log_path, "w") if log_path else None
    try:
        for t in range(1, settings.iterations + 1):
            start = time.perf_counter()
            n = settings.sampler.size(t)
            data = generate_data(t if incumbent is not None else 1, n, incumbent, settings.sampler,
                                 problem, seed=int(seeds[2 * t - 2]))
            log.info("iteration %d: %d samples labelled (%.1fs)", t, n, time.perf_counter() - start)
            train_seed = int(seeds[2 * t - 1])
            model = train(data, replace(settings.train, seed=train_seed))
            log.info("iteration %d: surrogate trained, validation RMSE %.4g (%.1fs)", t,
                     model.info.get("val_rmse", float("nan")), time.perf_counter() - start)
            results = _solve_candidates(model, data, problem, settings, backend, train_seed)
            previous_qs = incumbent_qs
            solved = [(c, extra) for c, extra in results if extra is not None]
            for cand, (k, report) in solved:
                # strict improvement only, so ties go to the smaller eps solved first
                if incumbent_qs is None or cand.true_qs > incumbent_qs:
                    incumbent, incumbent_qs, incumbent_metrics = k, cand.true_qs, report
            record = IterationRecord(
                iteration=t, n_samples=n, candidates=[c for c, _ in results], incumbent=incumbent,
                incumbent_qs=incumbent_qs, metrics=incumbent_metrics,
                wall_time=time.perf_counter() - start, failed=not solved,
                val_rmse=model.info.get("val_rmse"),
            )
            history.append(record)
            log.info("iteration %d: N=%d incumbent QS=%s (%.1fs)", t, n, incumbent_qs, record.wall_time)
            if log_file:
                log_file.write(json.dumps(record.to_json()) + "\n")
                log_file.flush()
            if callback:
                callback(record)
            if settings.stop_patience is not None and previous_qs is not None and solved:
                gain = (incumbent_qs - previous_qs) / max(abs(previous_qs), 1e-12)
                stale = stale + 1 if gain < settings.stop_tolerance else 0
                if stale >= settings.stop_patience:
                    log.info("stopping: improvement below %.2g%% for %d iterations",
                             100 * settings.stop_tolerance, stale)
                    break
    finally:
        if log_file:
            log_file.close()
    if incumbent is None:
        raise RunError("every iteration failed to produce a solution")
    return incumbent, history


# -- aim files --------------------------------------------------------------

def write_aim_csv(aims: AimVector, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "k"])
        for g, value in enumerate(aims.k):
            writer.writerow([g, repr(float(value))])


def read_aim_csv(path: str | Path, n_groups: int | None = None) -> AimVector:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"group", "k"}:
        raise UsageError(f"{path}: expected columns group,k")
    groups = [int(r["group"]) for r in rows]
    if sorted(groups) != list(range(len(groups))):
        raise UsageError(f"{path}: groups must be 0..{len(groups) - 1} exactly once")
    k = np.zeros(len(rows))
    for g, r in zip(groups, rows):
        k[g] = float(r["k"])
    if n_groups is not None and k.size != n_groups:
        raise UsageError(f"{path}: {k.size} groups, field has {n_groups}")
    return AimVector(k)


def read_run_log(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
