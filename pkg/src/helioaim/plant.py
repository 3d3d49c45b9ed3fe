"""Plant geometry, synthetic field layout, solar position and heliostat optics.

Coordinates are (east, north, up) in meters with the origin at the tower base.
Azimuths are measured clockwise from north, in degrees.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, InvalidConfigError

# 284 + n convention puts the zero of the declination at day 81.
EQUINOX_DAY = 81


@dataclass(frozen=True)
class PlantConfig:
    """Receiver/field geometry, optical errors and receiver mesh.

    The layout parameters (``first_ring_factor`` onwards) only drive
    :func:`generate_field`; they are not part of the optical model.
    """

    receiver_height: float = 9.2
    receiver_diameter: float = 7.3
    panel_count: int = 18
    panel_width: float = 1.29
    tower_optical_height: float = 121.4
    mirror_area: float = 115.7
    heliostat_count: int = 1525
    latitude: float = 40.08
    sigma_sun: float = 2.09  # mrad
    sigma_slope: float = 2.6  # mrad
    sigma_tracking: float = 0.0  # mrad
    mesh_vertical: int = 23
    mesh_horizontal: int = 5
    k_min: float = 0.0
    k_max: float = 3.0
    first_ring_factor: float = 0.75
    ring_growth: float = 1.05
    azimuthal_spacing: float = 21.0
    radial_spacing: float = 13.0
    position_jitter: float = 0.0
    attenuation: bool = True

    def __post_init__(self):
        positive = ("receiver_height", "receiver_diameter", "panel_width",
                    "tower_optical_height", "mirror_area", "azimuthal_spacing",
                    "radial_spacing", "first_ring_factor", "ring_growth")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.panel_count < 1:
            raise InvalidConfigError("panel_count must be >= 1")
        if self.mesh_vertical < 3:
            raise InvalidConfigError("mesh_vertical must be >= 3")
        if self.mesh_horizontal < 1:
            raise InvalidConfigError("mesh_horizontal must be >= 1")
        if not 0 <= self.k_min < self.k_max:
            raise InvalidConfigError(f"need 0 <= k_min < k_max, got [{self.k_min}, {self.k_max}]")
        for name in ("sigma_sun", "sigma_slope", "sigma_tracking", "position_jitter"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if not -90 <= self.latitude <= 90:
            raise InvalidConfigError("latitude must lie in [-90, 90]")

    @property
    def panel_aperture(self) -> float:
        """Angular width of one panel/sector, degrees."""
        return 360.0 / self.panel_count

    def replace(self, **changes) -> "PlantConfig":
        return dataclasses.replace(self, **changes)

    # -- file format -----------------------------------------------------
    # Nested sections; each key maps to a dataclass field.
    SECTIONS = {
        "receiver": {
            "height": "receiver_height",
            "diameter": "receiver_diameter",
            "panel_count": "panel_count",
            "panel_width": "panel_width",
            "tower_optical_height": "tower_optical_height",
        },
        "field": {
            "heliostat_count": "heliostat_count",
            "mirror_area": "mirror_area",
            "latitude": "latitude",
            "first_ring_factor": "first_ring_factor",
            "ring_growth": "ring_growth",
            "azimuthal_spacing": "azimuthal_spacing",
            "radial_spacing": "radial_spacing",
            "position_jitter": "position_jitter",
            "attenuation": "attenuation",
        },
        "errors": {
            "sigma_sun": "sigma_sun",
            "sigma_slope": "sigma_slope",
            "sigma_tracking": "sigma_tracking",
        },
        "mesh": {
            "vertical": "mesh_vertical",
            "horizontal": "mesh_horizontal",
        },
        "aiming": {
            "k_min": "k_min",
            "k_max": "k_max",
        },
    }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | None, base: "PlantConfig | None" = None) -> "PlantConfig":
        """Build a config from nested sections, rejecting unknown keys."""
        base = base or cls()
        data = data or {}
        changes: dict[str, Any] = {}
        for section, values in data.items():
            if section not in cls.SECTIONS:
                raise InvalidConfigError(f"unknown plant section {section!r}")
            if not isinstance(values, Mapping):
                raise InvalidConfigError(f"plant section {section!r} must be a mapping")
            keys = cls.SECTIONS[section]
            for key, value in values.items():
                if key not in keys:
                    raise InvalidConfigError(f"unknown key {section}.{key}")
                changes[keys[key]] = value
        try:
            return dataclasses.replace(base, **_coerce(changes))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidConfigError):
                raise
            raise InvalidConfigError(str(exc)) from exc

    def to_mapping(self) -> dict[str, dict[str, Any]]:
        return {section: {key: getattr(self, attr) for key, attr in keys.items()}
                for section, keys in self.SECTIONS.items()}


def _coerce(changes: dict[str, Any]) -> dict[str, Any]:
    types = {f.name: f.type for f in dataclasses.fields(PlantConfig)}
    out = {}
    for name, value in changes.items():
        kind = types[name]
        if kind == "int":
            if isinstance(value, bool) or int(value) != value:
                raise InvalidConfigError(f"{name} must be an integer")
            value = int(value)
        elif kind == "float":
            if isinstance(value, bool):
                raise InvalidConfigError(f"{name} must be a number")
            value = float(value)
        elif kind == "bool" and not isinstance(value, bool):
            raise InvalidConfigError(f"{name} must be true/false")
        out[name] = value
    return out


def dunhuang() -> PlantConfig:
    """Dunhuang 10 MWe receiver and field sizing with a synthetic layout."""
    return PlantConfig()


def desk_scale() -> PlantConfig:
    """Small surround field for fast experiments: 200 heliostats, 6 sectors, 3 rings (18 groups).

    The receiver is tall relative to the beam sizes (Dunhuang-like panel
    aspect), so the sweep heuristic stops at a moderate k with ~10% spillage,
    and the rings are spread far enough apart that one k per sector is a poor fit.
    """
    return PlantConfig(
        receiver_height=6.0,
        receiver_diameter=2.5,
        panel_count=6,
        panel_width=1.25,
        tower_optical_height=80.0,
        mirror_area=115.7,
        heliostat_count=200,
        mesh_vertical=23,
        mesh_horizontal=5,
        ring_growth=1.0,
        azimuthal_spacing=6.5,
        radial_spacing=20.0,
    )


@dataclass(frozen=True)
class Heliostat:
    id: int
    position: tuple[float, float, float]
    sector: int
    row: int
    group: int

    @property
    def odd_row(self) -> bool:
        """Rows are numbered from 1 in the aiming rule, so row index 0 is odd."""
        return self.row % 2 == 0


@dataclass(frozen=True)
class SunState:
    azimuth: float
    elevation: float
    unit_vector: tuple[float, float, float]

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.unit_vector, dtype=float)


@dataclass(frozen=True)
class HeliostatGeometry:
    slant_range: float
    incidence_angle: float
    receiver_incident_angle: float
    cosine_factor: float
    attenuation_factor: float


def azimuth_of(east: float, north: float) -> float:
    """Azimuth of a horizontal direction, degrees clockwise from north in [0, 360)."""
    az = math.degrees(math.atan2(east, north)) % 360.0
    return 0.0 if az == 360.0 else az


def sector_of(azimuth: float, panel_count: int) -> int:
    return int(math.floor(azimuth / (360.0 / panel_count))) % panel_count


def _on_boundary(n_ring: int, offset: float, panel_count: int) -> bool:
    ap = 360.0 / panel_count
    for k in range(n_ring):
        frac = ((k + offset) * 360.0 / n_ring) / ap
        if abs(frac - round(frac)) < 1e-9:
            return True
    return False


def _ring_slots(n_ring: int, offset: float, panel_count: int) -> tuple[int, float]:
    """Heliostat count and angular offset for a ring with nobody on a sector boundary.

    Boundary positions would make the sector assignment depend on rounding and
    break the east-west mirror symmetry of the groups. The preferred stagger
    is tried first, then the other one, then one heliostat fewer.
    """
    if n_ring <= 1:
        return n_ring, offset
    for n in range(n_ring, 0, -1):
        for off in (offset, 0.5 - offset):
            if not _on_boundary(n, off, panel_count):
                return n, off
    return n_ring, offset


def generate_field(config: PlantConfig, seed: int = 0) -> list[Heliostat]:
    """Radially staggered surround layout.

    Rings start at ``first_ring_factor * tower_optical_height``; ring gaps grow
    geometrically by ``ring_growth``. Each full ring holds as many heliostats
    as fit at ``azimuthal_spacing``; odd rings are rotated by half a pitch,
    and rings are re-staggered (or lose one slot) so no heliostat sits on a
    sector boundary.
    The last ring spreads whatever is left evenly, so the layout stays
    mirror-symmetric about the north-south axis when jitter is zero.
    """
    n_total = config.heliostat_count
    if n_total <= 0:
        raise InvalidConfigError(f"heliostat_count must be > 0, got {n_total}")
    rng = np.random.default_rng(seed)

    raw: list[tuple[float, float, int]] = []  # (east, north, ring)
    radius = config.first_ring_factor * config.tower_optical_height
    gap = config.radial_spacing
    ring = 0
    while len(raw) < n_total:
        n_ring = max(1, int(math.floor(2 * math.pi * radius / config.azimuthal_spacing)))
        n_ring = min(n_ring, n_total - len(raw))
        n_ring, offset = _ring_slots(n_ring, 0.5 if ring % 2 else 0.0, config.panel_count)
        for k in range(n_ring):
            az = math.radians((k + offset) * 360.0 / n_ring)
            raw.append((radius * math.sin(az), radius * math.cos(az), ring))
        radius += gap
        gap *= config.ring_growth
        ring += 1

    coords = np.array([(e, n) for e, n, _ in raw])
    if config.position_jitter > 0:
        coords = coords + rng.normal(0.0, config.position_jitter, size=coords.shape)

    sectors = [sector_of(azimuth_of(e, n), config.panel_count) for e, n in coords]
    rows = [r for _, _, r in raw]
    groups = {key: i for i, key in enumerate(sorted(set(zip(sectors, rows))))}
    return [
        Heliostat(id=i, position=(float(e), float(n), 0.0), sector=s, row=r, group=groups[(s, r)])
        for i, ((e, n), s, r) in enumerate(zip(coords, sectors, rows))
    ]


def group_count(field: Sequence[Heliostat]) -> int:
    return 0 if not field else max(h.group for h in field) + 1


def panel_weights(field: Sequence[Heliostat], panel_count: int) -> np.ndarray:
    """Number of heliostats assigned (by sector) to each panel."""
    counts = np.zeros(panel_count)
    for h in field:
        counts[h.sector] += 1
    return counts


def group_sectors(field: Sequence[Heliostat]) -> np.ndarray:
    """Sector of every decision-variable group."""
    out = np.full(group_count(field), -1, dtype=int)
    for h in field:
        out[h.group] = h.sector
    return out


FIELD_COLUMNS = ("id", "east", "north", "up", "sector", "row", "group")


def write_field_csv(field: Iterable[Heliostat], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELD_COLUMNS)
        for h in field:
            writer.writerow([h.id, *(repr(c) for c in h.position), h.sector, h.row, h.group])


def read_field_csv(path: str | Path) -> list[Heliostat]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FIELD_COLUMNS:
            raise InvalidConfigError(f"field CSV must have columns {','.join(FIELD_COLUMNS)}")
        return [
            Heliostat(int(r["id"]), (float(r["east"]), float(r["north"]), float(r["up"])),
                      int(r["sector"]), int(r["row"]), int(r["group"]))
            for r in reader
        ]


def declination(day_of_year: int) -> float:
    """Solar declination in degrees (Cooper's formula)."""
    return 23.45 * math.sin(math.radians(360.0 * (284 + day_of_year) / 365.0))


def solar_position(latitude: float, day_of_year: int, solar_hour: float) -> SunState:
    """Sun direction from declination and hour angle; equation of time ignored.

    Below-horizon suns are returned with a negative elevation.
    """
    if not 0 <= solar_hour < 24:
        raise DomainError(f"solar_hour must lie in [0, 24), got {solar_hour}")
    phi = math.radians(latitude)
    delta = math.radians(declination(day_of_year))
    omega = math.radians(15.0 * (solar_hour - 12.0))
    east = -math.cos(delta) * math.sin(omega)
    north = math.sin(delta) * math.cos(phi) - math.cos(delta) * math.sin(phi) * math.cos(omega)
    up = math.sin(delta) * math.sin(phi) + math.cos(delta) * math.cos(phi) * math.cos(omega)
    vec = np.array([east, north, up])
    vec /= np.linalg.norm(vec)
    elevation = math.degrees(math.asin(max(-1.0, min(1.0, vec[2]))))
    if abs(vec[0]) < 1e-15 and abs(vec[1]) < 1e-15:
        azimuth = 180.0 if latitude >= 0 else 0.0
    else:
        azimuth = azimuth_of(vec[0], vec[1])
    return SunState(azimuth=azimuth, elevation=elevation, unit_vector=tuple(float(c) for c in vec))


def attenuation_factor(slant_range):
    """Clear-day atmospheric transmittance over the slant range (meters)."""
    s = np.asarray(slant_range, dtype=float)
    return 0.99321 - 1.176e-4 * s + 1.97e-8 * s**2


def receiver_center(config: PlantConfig) -> np.ndarray:
    return np.array([0.0, 0.0, config.tower_optical_height])


def facet_normals(azimuths, panel_count: int) -> np.ndarray:
    """Outward normal of the receiver facet spanning each azimuth (degrees)."""
    ap = 360.0 / panel_count
    idx = np.floor(np.mod(azimuths, 360.0) / ap)
    theta = np.radians((idx + 0.5) * ap)
    return np.stack([np.sin(theta), np.cos(theta), np.zeros_like(theta)], axis=-1)


def equator_aim_point(position, config: PlantConfig) -> np.ndarray:
    """Where the heliostat's sightline to the tower axis meets the receiver, at equator height.

    With three or more panels the receiver is the prism of flat panels
    inscribed in the cylinder of diameter ``receiver_diameter`` and the
    sightline stops on the panel whose azimuth span contains the heliostat;
    otherwise it stops on the cylinder.
    """
    pos = np.asarray(position, dtype=float)
    horiz = np.hypot(pos[..., 0], pos[..., 1])
    if np.any(horiz == 0):
        raise DomainError("heliostat located on the tower axis")
    r = config.receiver_diameter / 2.0
    u = np.stack([pos[..., 0] / horiz, pos[..., 1] / horiz], axis=-1)
    P = config.panel_count
    if P >= 3:
        n = facet_normals(np.degrees(np.arctan2(u[..., 0], u[..., 1])), P)
        dist = r * math.cos(math.pi / P) / np.sum(u * n[..., :2], axis=-1)
    else:
        dist = np.full(horiz.shape, r)
    out = np.empty(pos.shape)
    out[..., 0] = dist * u[..., 0]
    out[..., 1] = dist * u[..., 1]
    out[..., 2] = config.tower_optical_height
    return out


def geometry_arrays(positions, sun_vector, aim_points, use_attenuation: bool = True,
                    panel_count: int | None = None):
    """Vectorized optical geometry; returns (S, ray_dir, omega, eps_r, atten).

    ``ray_dir`` is the unit vector from heliostat to aim point. The receiver
    normal at the aim point is the normal of the panel containing it when
    ``panel_count`` (>= 3) is given, else the horizontal radial direction.
    """
    pos = np.asarray(positions, dtype=float)
    aim = np.asarray(aim_points, dtype=float)
    sun = np.asarray(sun_vector, dtype=float)
    to_aim = aim - pos
    slant = np.linalg.norm(to_aim, axis=-1)
    ray = to_aim / slant[..., None]
    normal = sun + ray
    normal = normal / np.linalg.norm(normal, axis=-1, keepdims=True)
    omega = np.arccos(np.clip(np.sum(sun * normal, axis=-1), -1.0, 1.0))
    radial = aim.copy()
    radial[..., 2] = 0.0
    # an aim point on the tower axis takes the normal facing the heliostat
    on_axis = np.linalg.norm(radial, axis=-1) == 0
    if np.any(on_axis):
        facing = -to_aim
        facing[..., 2] = 0.0
        radial = np.where(on_axis[..., None], facing, radial)
    radial_norm = np.linalg.norm(radial, axis=-1, keepdims=True)
    if np.any(radial_norm == 0):
        raise DomainError("heliostat directly below an on-axis aim point")
    radial = radial / radial_norm
    if panel_count is not None and panel_count >= 3:
        radial = facet_normals(np.degrees(np.arctan2(radial[..., 0], radial[..., 1])), panel_count)
    cos_eps = np.clip(np.sum(-ray * radial, axis=-1), -1.0, 1.0)
    eps_r = np.arccos(cos_eps)
    atten = attenuation_factor(slant) if use_attenuation else np.ones_like(slant)
    return slant, ray, omega, eps_r, atten


def heliostat_geometry(h: Heliostat, sun: SunState, aim_point, config: PlantConfig) -> HeliostatGeometry:
    if sun.elevation <= 0:
        raise DomainError(f"sun below horizon (elevation {sun.elevation:.3f} deg)")
    slant, _, omega, eps_r, atten = geometry_arrays(
        np.asarray(h.position, dtype=float), sun.vector, np.asarray(aim_point, dtype=float),
        config.attenuation, config.panel_count)
    return HeliostatGeometry(
        slant_range=float(slant),
        incidence_angle=float(omega),
        receiver_incident_angle=float(eps_r),
        cosine_factor=float(math.cos(omega)),
        attenuation_factor=float(atten),
    )
