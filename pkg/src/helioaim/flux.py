"""Simplified convolution-projection flux model on a faceted cylindrical receiver.

Each heliostat reflects ``AM * cos(omega) * attenuation`` (DNI normalized to 1)
as a circular Gaussian of standard deviation ``sigma_e * S`` on the plane
normal to its reflected ray. The receiver is a right prism of ``P`` flat
panels, each sampled on a ``V x H`` node grid; a node collects the Gaussian
density at its perpendicular distance from the ray axis times the obliquity
cosine between ray and node normal.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .plant import (
    Heliostat,
    PlantConfig,
    SunState,
    equator_aim_point,
    geometry_arrays,
    group_count,
)


@dataclass(frozen=True)
class AimVector:
    """Per-group aiming factors; one decision variable per (sector, row) group."""

    k: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", np.asarray(self.k, dtype=float).reshape(-1))

    def __len__(self):
        return self.k.size

    def check_bounds(self, k_min: float, k_max: float, tol: float = 1e-9) -> None:
        if np.any(self.k < k_min - tol) or np.any(self.k > k_max + tol):
            raise DomainError(f"aiming factors must lie in [{k_min}, {k_max}]")


@dataclass(frozen=True)
class FluxMap:
    C: np.ndarray  # suns, (P, V, H)
    dA: np.ndarray  # m^2 quadrature weight per node, (P, V, H)
    node_positions: np.ndarray  # (P, V, H, 3)
    dv: float
    cosine_power: float | None = None  # sum of cos(omega) * AM over the field

    @property
    def shape(self):
        return self.C.shape

    def intercepted(self) -> float:
        """Sum of C * dA, i.e. intercepted power in suns * m^2."""
        return float(np.sum(self.C * self.dA))

    def vertical_profiles(self) -> np.ndarray:
        """Mean over horizontal nodes, shape (P, V)."""
        return self.C.mean(axis=2)

    def to_rows(self):
        P, V, H = self.C.shape
        for p in range(P):
            for v in range(V):
                for h in range(H):
                    yield p, v, h, float(self.C[p, v, h])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["panel", "v", "h", "C"])
            for p, v, h, c in self.to_rows():
                writer.writerow([p, v, h, repr(c)])

    def to_json(self) -> dict:
        return {"shape": list(self.C.shape), "dv": self.dv, "C": self.C.tolist(),
                "dA": self.dA.tolist()}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def effective_error(omega, sigma_sun: float, sigma_slope: float, sigma_tracking: float):
    """Combined beam error in mrad from sunshape, slope and tracking errors."""
    return np.sqrt(sigma_sun**2 + 2.0 * (1.0 + np.cos(omega)) * sigma_slope**2 + sigma_tracking**2)


def beam_radius(k, sigma_e, slant_range, eps_r):
    """Beam radius (m) at confidence factor ``k``; ``sigma_e`` in radians."""
    eps_r = np.asarray(eps_r, dtype=float)
    if np.any(eps_r >= math.pi / 2) or np.any(eps_r < 0):
        raise DomainError("receiver incidence angle must lie in [0, pi/2)")
    out = np.asarray(k, dtype=float) * sigma_e * slant_range / np.cos(eps_r)
    return float(out) if out.ndim == 0 else out


def aim_shift(r_k, receiver_height: float, odd_row):
    """Vertical aim offset from the equator: top for odd rows, bottom for even rows."""
    r_k = np.asarray(r_k, dtype=float)
    half = receiver_height / 2.0
    sign = np.where(np.asarray(odd_row, dtype=bool), 1.0, -1.0)
    out = np.where(r_k < half, sign * (half - r_k), 0.0)
    return float(out) if out.ndim == 0 else out


def receiver_mesh(config: PlantConfig):
    """Node positions, outward normals, quadrature weights and vertical spacing.

    Panel ``p`` spans azimuths ``[p, p+1) * 360/P`` so that sector ``p`` of the
    field faces panel ``p``. Vertical and horizontal extreme nodes get half
    weight (trapezoidal rule).
    """
    P, V, H = config.panel_count, config.mesh_vertical, config.mesh_horizontal
    width = config.panel_width
    r = config.receiver_diameter / 2.0
    apothem = r * math.cos(math.pi / P) if P >= 3 else r
    dv = config.receiver_height / (V - 1)
    dh = width / max(H - 1, 1)
    heights = config.tower_optical_height + np.linspace(-config.receiver_height / 2, config.receiver_height / 2, V)
    offsets = np.linspace(-width / 2, width / 2, H) if H > 1 else np.zeros(1)

    wv = np.full(V, dv)
    wv[[0, -1]] *= 0.5
    wh = np.full(H, dh)
    if H > 1:
        wh[[0, -1]] *= 0.5

    pos = np.empty((P, V, H, 3))
    normals = np.empty((P, 3))
    for p in range(P):
        theta = math.radians((p + 0.5) * 360.0 / P)
        n = np.array([math.sin(theta), math.cos(theta), 0.0])
        t = np.array([math.cos(theta), -math.sin(theta), 0.0])
        normals[p] = n
        pos[p, :, :, 0] = apothem * n[0] + offsets[None, :] * t[0]
        pos[p, :, :, 1] = apothem * n[1] + offsets[None, :] * t[1]
        pos[p, :, :, 2] = heights[:, None]
    dA = np.broadcast_to(np.outer(wv, wh), (P, V, H)).copy()
    return pos, normals, dA, dv


class FluxModel:
    """Precomputed field/sun/receiver state for repeated flux evaluations.

    Building one is the expensive part; :meth:`evaluate` and
    :meth:`evaluate_batch` only redo the aim-dependent geometry.
    """

    def __init__(self, field: Sequence[Heliostat], sun: SunState, config: PlantConfig,
                 n_groups: int | None = None):
        if sun.elevation <= 0:
            raise DomainError(f"sun below horizon (elevation {sun.elevation:.3f} deg)")
        self.config = config
        self.sun = sun
        self.field = list(field)
        self.n_groups = group_count(self.field) if n_groups is None else n_groups
        self.node_pos, self.panel_normals, self.dA, self.dv = receiver_mesh(config)
        P, V, H = self.dA.shape
        self.shape = (P, V, H)
        center = np.array([0.0, 0.0, config.tower_optical_height])
        # receiver-centred coordinates keep |X|^2 small in the distance expansion
        self._nodes = self.node_pos.reshape(-1, 3) - center
        self._nodes_sq = np.sum(self._nodes**2, axis=1)
        self._node_normals = np.repeat(self.panel_normals, V * H, axis=0)
        self._center = center

        n = len(self.field)
        self.positions = np.array([h.position for h in self.field], dtype=float).reshape(n, 3)
        self.groups = np.array([h.group for h in self.field], dtype=int)
        self.odd = np.array([h.odd_row for h in self.field], dtype=bool)
        self.sectors = np.array([h.sector for h in self.field], dtype=int)
        if n:
            base = equator_aim_point(self.positions, config)
            slant, _, omega, eps_r, _ = geometry_arrays(self.positions, sun.vector, base, config.attenuation,
                                                        config.panel_count)
            sigma_e = effective_error(omega, config.sigma_sun, config.sigma_slope, config.sigma_tracking) * 1e-3
            # beam radius per unit k, from the equatorial aim geometry
            self.radius_per_k = beam_radius(1.0, sigma_e, slant, eps_r) * np.ones(n)
            self.base_aims = base
        else:
            self.radius_per_k = np.zeros(0)
            self.base_aims = np.zeros((0, 3))

    # -- per-heliostat quantities ----------------------------------------
    def heliostat_k(self, aims) -> np.ndarray:
        k = np.asarray(aims.k if isinstance(aims, AimVector) else aims, dtype=float)
        if k.shape[-1] != self.n_groups:
            raise ShapeError(f"expected {self.n_groups} aiming factors, got {k.shape[-1]}")
        return k[..., self.groups]

    def aim_points(self, aims) -> np.ndarray:
        """Shifted aim points for one aim vector (n, 3) or a batch (B, n, 3)."""
        k = self.heliostat_k(aims)
        shift = aim_shift(k * self.radius_per_k, self.config.receiver_height, self.odd)
        pts = np.broadcast_to(self.base_aims, k.shape + (3,)).copy()
        pts[..., 2] += shift
        return pts

    def reflected_power(self, aims) -> np.ndarray:
        """AM * cos(omega) * attenuation per heliostat at the shifted aim points."""
        _, _, omega, _, atten = geometry_arrays(self.positions, self.sun.vector, self.aim_points(aims),
                                                self.config.attenuation, self.config.panel_count)
        return self.config.mirror_area * np.cos(omega) * atten

    def cosine_power(self, aims) -> float:
        """Denominator of the spillage factor: sum of cos(omega) * AM."""
        _, _, omega, _, _ = geometry_arrays(self.positions, self.sun.vector, self.aim_points(aims),
                                            self.config.attenuation, self.config.panel_count)
        return float(np.sum(np.cos(omega)) * self.config.mirror_area)

    # -- flux -------------------------------------------------------------
    def _contributions(self, aim_pts: np.ndarray) -> np.ndarray:
        """Per-heliostat node flux (..., n, nodes) and the cosine-weighted mirror power."""
        cfg = self.config
        slant, ray, omega, _, atten = geometry_arrays(self.positions, self.sun.vector, aim_pts, cfg.attenuation,
                                                      cfg.panel_count)
        cos_w = np.cos(omega)
        power = cfg.mirror_area * cos_w * atten
        sigma_b = effective_error(omega, cfg.sigma_sun, cfg.sigma_slope, cfg.sigma_tracking) * 1e-3 * slant
        a = aim_pts - self._center
        xa = a @ self._nodes.T
        xd = ray @ self._nodes.T
        ad = np.sum(a * ray, axis=-1)
        aa = np.sum(a * a, axis=-1)
        along = xd - ad[..., None]
        perp2 = self._nodes_sq - 2.0 * xa + aa[..., None] - along**2
        np.maximum(perp2, 0.0, out=perp2)
        obliq = np.maximum(-(ray @ self._node_normals.T), 0.0)
        peak = power / (2.0 * math.pi * sigma_b**2)
        contrib = peak[..., None] * np.exp(-perp2 / (2.0 * sigma_b[..., None] ** 2)) * obliq
        return contrib, cfg.mirror_area * np.sum(cos_w, axis=-1)

    def evaluate(self, aims) -> FluxMap:
        if not self.field:
            C, cos_power = np.zeros(self.shape), 0.0
        else:
            contrib, cos_power = self._contributions(self.aim_points(aims))
            C = _ordered_sum(contrib).reshape(self.shape)
        return FluxMap(C=C, dA=self.dA, node_positions=self.node_pos, dv=self.dv,
                       cosine_power=float(cos_power))

    def evaluate_batch(self, K, chunk: int = 16):
        """Concentrations (B, P, V, H) and cosine powers (B,) for a batch of aim vectors."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        out = np.zeros((K.shape[0],) + self.shape)
        cos_power = np.zeros(K.shape[0])
        if not self.field:
            return out, cos_power
        for start in range(0, K.shape[0], chunk):
            block = K[start:start + chunk]
            contrib, cp = self._contributions(self.aim_points(block))
            out[start:start + chunk] = _ordered_sum(contrib).reshape((block.shape[0],) + self.shape)
            cos_power[start:start + chunk] = cp
        return out, cos_power


def _ordered_sum(contrib: np.ndarray) -> np.ndarray:
    """Sum over the heliostat axis (-2) sequentially, in field order."""
    total = np.zeros(contrib.shape[:-2] + contrib.shape[-1:])
    for i in range(contrib.shape[-2]):
        total += contrib[..., i, :]
    return total


def flux_map(field: Sequence[Heliostat], aims: AimVector, sun: SunState, config: PlantConfig) -> FluxMap:
    model = FluxModel(field, sun, config, n_groups=len(aims) if not field else None)
    if field:
        aims = AimVector(aims.k if isinstance(aims, AimVector) else aims)
        if len(aims) != model.n_groups:
            raise ShapeError(f"expected {model.n_groups} aiming factors, got {len(aims)}")
    return model.evaluate(aims)


def spillage(flux: FluxMap, field: Sequence[Heliostat], sun: SunState, config: PlantConfig,
             aims: AimVector | None = None) -> float:
    """Fraction of cosine-weighted mirror power not intercepted by the receiver.

    The denominator is taken from the flux map when it carries one; otherwise
    it is recomputed at the aim points of ``aims`` (default: all ``k_max``).
    """
    if not field:
        raise DomainError("spillage undefined for an empty field")
    if flux.cosine_power is not None and aims is None:
        return spillage_from(flux, flux.cosine_power)
    model = FluxModel(field, sun, config)
    if aims is None:
        aims = np.full(model.n_groups, config.k_max)
    return spillage_from(flux, model.cosine_power(aims))


def spillage_from(flux: FluxMap, cosine_power: float) -> float:
    if cosine_power <= 0:
        raise DomainError("spillage undefined for zero reflected power")
    return 1.0 - flux.intercepted() / cosine_power
