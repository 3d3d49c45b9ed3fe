"""Aiming-strategy quality score and comparison metrics computed from flux maps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidMeshError, ShapeError
from .flux import FluxMap, FluxModel, spillage_from
from .plant import panel_weights as field_panel_weights


@dataclass(frozen=True)
class ScoreBreakdown:
    energy: np.ndarray  # E_p, suns * m
    distribution_difference: np.ndarray  # mean dd over the central window, per panel
    panel_score: np.ndarray  # E_p - lambda * dd_p
    panel_weights: np.ndarray
    score: float
    lam: float

    def to_json(self) -> dict:
        return {
            "qs": self.score,
            "lambda": self.lam,
            "energy": self.energy.tolist(),
            "distribution_difference": self.distribution_difference.tolist(),
            "panel_score": self.panel_score.tolist(),
            "panel_weights": self.panel_weights.tolist(),
        }


@dataclass(frozen=True)
class MetricsReport:
    collected_energy: float
    distribution_difference: float
    spl: float
    max_suns: float

    def to_json(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def read_json(cls, path: str | Path) -> "MetricsReport":
        data = json.loads(Path(path).read_text())
        return cls(**{k: float(data[k]) for k in ("collected_energy", "distribution_difference", "spl", "max_suns")})


def panel_energy(profile, dv: float) -> float:
    """Trapezoidal integral of a vertical profile with uniform spacing ``dv``."""
    profile = np.asarray(profile, dtype=float)
    if profile.shape[-1] < 2:
        raise InvalidMeshError("need at least two vertical nodes to integrate")
    return np.trapezoid(profile, dx=dv, axis=-1)


def central_window(n_vertical: int, central_fraction: float) -> slice:
    """Symmetric block of ``floor(fraction * V)`` central nodes (at least one).

    The count is bumped by one when needed so that the window is centred.
    """
    if not 0 < central_fraction <= 1:
        raise ValueError("central_fraction must lie in (0, 1]")
    count = max(1, int(np.floor(central_fraction * n_vertical + 1e-12)))
    if (n_vertical - count) % 2:
        count += 1
    count = min(count, n_vertical)
    start = (n_vertical - count) // 2
    return slice(start, start + count)


def _profile_terms(profiles: np.ndarray, dv: float, central_fraction: float):
    """Energy and mean distribution difference for profiles of shape (..., P, V)."""
    V = profiles.shape[-1]
    energy = panel_energy(profiles, dv)
    lo = profiles.min(axis=-1, keepdims=True)
    hi = profiles.max(axis=-1, keepdims=True)
    span = hi - lo
    flat = span <= 0
    # a flat profile is the ideal shape: normalize it to 1 everywhere
    normalized = np.where(flat, 1.0, (profiles - lo) / np.where(flat, 1.0, span))
    window = central_window(V, central_fraction)
    dd = (1.0 - normalized[..., window]).mean(axis=-1)
    return energy, dd


def _weighted_mean(values: np.ndarray, weights: np.ndarray):
    total = weights.sum()
    if total <= 0:
        return np.zeros(values.shape[:-1]) if values.ndim > 1 else 0.0
    mask = weights > 0
    return np.sum(values[..., mask] * weights[mask], axis=-1) / total


def quality_score(flux: FluxMap, lam: float, panel_weights, central_fraction: float = 0.5) -> ScoreBreakdown:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    weights = np.asarray(panel_weights, dtype=float)
    if weights.shape != (flux.C.shape[0],):
        raise ShapeError(f"need {flux.C.shape[0]} panel weights, got shape {weights.shape}")
    energy, dd = _profile_terms(flux.C.mean(axis=2), flux.dv, central_fraction)
    panel_score = energy - lam * dd
    return ScoreBreakdown(
        energy=energy,
        distribution_difference=dd,
        panel_score=panel_score,
        panel_weights=weights,
        score=float(_weighted_mean(panel_score, weights)),
        lam=float(lam),
    )


def quality_scores(C: np.ndarray, dv: float, lam: float, panel_weights, central_fraction: float = 0.5) -> np.ndarray:
    """Vectorized quality score for a batch of concentration arrays (B, P, V, H)."""
    energy, dd = _profile_terms(np.asarray(C).mean(axis=-1), dv, central_fraction)
    return _weighted_mean(energy - lam * dd, np.asarray(panel_weights, dtype=float))


def metrics(flux: FluxMap, field, sun, config, central_fraction: float = 0.5) -> MetricsReport:
    """Table-style metrics for a flux map of ``field`` under ``sun``."""
    weights = field_panel_weights(field, config.panel_count)
    cosine_power = flux.cosine_power
    if cosine_power is None and field:
        cosine_power = spillage_denominator(field, sun, config)
    return metrics_from(flux, weights, central_fraction, cosine_power)


def spillage_denominator(field, sun, config) -> float:
    model = FluxModel(field, sun, config)
    return model.cosine_power(np.full(model.n_groups, config.k_max))


def metrics_from(flux: FluxMap, panel_weights, central_fraction: float = 0.5,
                 cosine_power: float | None = None) -> MetricsReport:
    """Collected energy, distribution difference, spillage and peak concentration.

    ``cosine_power`` defaults to the value the flux map was built with.
    """
    breakdown = quality_score(flux, 0.0, panel_weights, central_fraction)
    weights = breakdown.panel_weights
    if cosine_power is None:
        cosine_power = flux.cosine_power
    spl = spillage_from(flux, cosine_power) if cosine_power else 1.0
    return MetricsReport(
        collected_energy=breakdown.score,
        distribution_difference=float(_weighted_mean(breakdown.distribution_difference, weights)),
        spl=float(spl),
        max_suns=float(flux.C.max()) if flux.C.size else 0.0,
    )
