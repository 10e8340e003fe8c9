"""Pathloss, shadowing, RSRP/SNR and coverage rasters.

Rural-macro (RMa) LoS/NLoS pathloss follows the 3GPP TR 38.901 formulas,
with the carrier frequency given in MHz throughout the public API.  A
free-space mode is available for unobstructed air-to-ground links.

Heights: ``Position3D.z`` is altitude above the common reference datum (the
same datum as terrain elevations).  Pathloss formulas use antenna heights
above the receiver's local ground, so a transmitter 60 m over a receiver
standing on flat zero terrain has ``h_bs_m == 60``.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import stream

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0
SUBCARRIERS_PER_MHZ = 60  # 12 subcarriers per 180 kHz RB at 15 kHz spacing

RMA_MIN_D2D_M = 10.0
RMA_MAX_D2D_M = 10_000.0
RMA_SIGMA_LOS1_DB = 4.0
RMA_SIGMA_LOS2_DB = 6.0
RMA_SIGMA_NLOS_DB = 8.0


class PropagationDomainError(ValueError):
    """Input outside the domain of a propagation formula."""


class CellOffError(RuntimeError):
    """RSRP/SNR requested from a cell that is switched off."""


@dataclass(frozen=True)
class Position3D:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise PropagationDomainError(f"non-finite coordinate in {self!r}")
        if self.z < 0:
            raise PropagationDomainError(f"z must be >= 0, got {self.z}")

    def horizontal_distance(self, other):
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Terrain:
    """Uniform elevation raster.

    ``elevation[row, col]`` covers the square
    ``[origin_x + col*cell, origin_x + (col+1)*cell) x
    [origin_y + row*cell, origin_y + (row+1)*cell)``; row 0 is the southern
    edge.
    """

    origin_x: float
    origin_y: float
    cell_size_m: float
    elevation: np.ndarray

    def __post_init__(self):
        elev = np.asarray(self.elevation, dtype=float)
        if elev.ndim != 2 or elev.size == 0:
            raise PropagationDomainError("terrain elevation must be a non-empty 2-D grid")
        if not np.all(np.isfinite(elev)):
            raise PropagationDomainError("terrain elevations must be finite")
        if not self.cell_size_m > 0:
            raise PropagationDomainError("terrain cell_size_m must be > 0")
        object.__setattr__(self, "elevation", elev)

    @property
    def nrows(self):
        return self.elevation.shape[0]

    @property
    def ncols(self):
        return self.elevation.shape[1]

    @property
    def bbox(self):
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.ncols * self.cell_size_m,
            self.origin_y + self.nrows * self.cell_size_m,
        )

    def contains(self, x, y):
        x0, y0, x1, y1 = self.bbox
        return x0 <= x <= x1 and y0 <= y <= y1

    def index(self, x, y):
        if not self.contains(x, y):
            raise PropagationDomainError(f"point ({x}, {y}) is outside the terrain raster")
        col = min(int((x - self.origin_x) // self.cell_size_m), self.ncols - 1)
        row = min(int((y - self.origin_y) // self.cell_size_m), self.nrows - 1)
        return row, col

    def height_at(self, x, y):
        row, col = self.index(x, y)
        return float(self.elevation[row, col])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            return cls.from_csv_text(fh.read())

    @classmethod
    def from_csv_text(cls, text):
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        expected = ["origin_x", "origin_y", "cell_size_m", "ncols", "nrows"]
        if len(rows) < 2 or [c.strip() for c in rows[0]] != expected:
            raise PropagationDomainError(
                "terrain CSV must start with header 'origin_x,origin_y,cell_size_m,ncols,nrows'"
            )
        try:
            ox, oy, cs = (float(v) for v in rows[1][:3])
            ncols, nrows = int(rows[1][3]), int(rows[1][4])
            grid = np.array([[float(v) for v in r] for r in rows[2:]], dtype=float)
        except (ValueError, IndexError) as exc:
            raise PropagationDomainError(f"malformed terrain CSV: {exc}") from None
        if grid.shape != (nrows, ncols):
            raise PropagationDomainError(
                f"terrain CSV declares {nrows}x{ncols} but holds {grid.shape[0]} rows "
                f"of {grid.shape[1] if grid.ndim == 2 else '?'}"
            )
        return cls(ox, oy, cs, grid)


@dataclass(frozen=True)
class RadioEnvironment:
    building_height_m: float = 5.0
    street_width_m: float = 5.0
    shadowing_mode: str = "deterministic"
    extra_shadowing_db: float = 0.0
    rng_seed: int = 0
    terrain: Optional[Terrain] = None
    pathloss_model: str = "rma"
    strict_range: bool = False

    def __post_init__(self):
        if not self.building_height_m > 0:
            raise PropagationDomainError("building_height_m must be > 0")
        if not self.street_width_m > 0:
            raise PropagationDomainError("street_width_m must be > 0")
        if not self.extra_shadowing_db >= 0:
            raise PropagationDomainError("extra_shadowing_db must be >= 0")
        if self.shadowing_mode not in ("deterministic", "lognormal"):
            raise PropagationDomainError(f"unknown shadowing_mode {self.shadowing_mode!r}")
        if self.pathloss_model not in ("rma", "fspl"):
            raise PropagationDomainError(f"unknown pathloss_model {self.pathloss_model!r}")


@dataclass(frozen=True)
class LinkGeometry:
    d2d_m: float
    d3d_m: float
    h_bs_m: float
    h_ut_m: float
    fc_mhz: float

    def __post_init__(self):
        if not self.fc_mhz > 0:
            raise PropagationDomainError("fc_mhz must be > 0")
        if self.d2d_m < 0 or self.d3d_m < self.d2d_m:
            raise PropagationDomainError("require d3d_m >= d2d_m >= 0")
        expected = self.d2d_m ** 2 + (self.h_bs_m - self.h_ut_m) ** 2
        if not math.isclose(self.d3d_m ** 2, expected, rel_tol=1e-6, abs_tol=1e-9):
            raise PropagationDomainError("d3d_m inconsistent with d2d_m and antenna heights")

    @classmethod
    def from_heights(cls, d2d_m, h_bs_m, h_ut_m, fc_mhz):
        return cls(d2d_m, math.hypot(d2d_m, h_bs_m - h_ut_m), h_bs_m, h_ut_m, fc_mhz)

    @classmethod
    def between(cls, tx, rx, fc_mhz, ground_m=0.0):
        """Geometry from ``tx`` to ``rx``; heights are measured above ``ground_m``."""
        return cls.from_heights(tx.horizontal_distance(rx), tx.z - ground_m, rx.z - ground_m, fc_mhz)

    def with_d2d(self, d2d_m):
        return LinkGeometry.from_heights(d2d_m, self.h_bs_m, self.h_ut_m, self.fc_mhz)


def fspl_db(d_m, fc_mhz):
    """Free-space pathloss ``20 log10(4 pi d f / c)`` in dB."""
    if not (d_m > 0 and fc_mhz > 0):
        raise PropagationDomainError("fspl_db requires d_m > 0 and fc_mhz > 0")
    return 20.0 * math.log10(4.0 * math.pi * d_m * fc_mhz * 1e6 / SPEED_OF_LIGHT)


def breakpoint_distance_m(geom):
    if not (geom.h_bs_m > 0 and geom.h_ut_m > 0):
        raise PropagationDomainError("breakpoint distance needs positive antenna heights")
    return 2.0 * math.pi * geom.h_bs_m * geom.h_ut_m * geom.fc_mhz * 1e6 / SPEED_OF_LIGHT


def _in_range(geom, env):
    if geom.d2d_m < RMA_MIN_D2D_M:
        if env.strict_range:
            raise PropagationDomainError(
                f"d2d {geom.d2d_m:.3f} m below the RMa minimum of {RMA_MIN_D2D_M} m"
            )
        warnings.warn(
            f"d2d below {RMA_MIN_D2D_M} m clamped to {RMA_MIN_D2D_M} m", RuntimeWarning, stacklevel=3
        )
        return geom.with_d2d(RMA_MIN_D2D_M)
    if geom.d2d_m > RMA_MAX_D2D_M and env.strict_range:
        raise PropagationDomainError(
            f"d2d {geom.d2d_m:.1f} m beyond the RMa maximum of {RMA_MAX_D2D_M} m"
        )
    return geom


def _rma_pl1(d3d, fc_ghz, h):
    return (
        20.0 * math.log10(40.0 * math.pi * d3d * fc_ghz / 3.0)
        + min(0.03 * h ** 1.72, 10.0) * math.log10(d3d)
        - min(0.044 * h ** 1.72, 14.77)
        + 0.002 * math.log10(h) * d3d
    )


def _rma_los(geom, h):
    # Branch on slant distance so that the two segments meet exactly at dBP.
    fc_ghz = geom.fc_mhz / 1000.0
    d_bp = breakpoint_distance_m(geom)
    if geom.d3d_m <= d_bp:
        return _rma_pl1(geom.d3d_m, fc_ghz, h), RMA_SIGMA_LOS1_DB
    pl2 = _rma_pl1(d_bp, fc_ghz, h) + 40.0 * math.log10(geom.d3d_m / d_bp)
    return pl2, RMA_SIGMA_LOS2_DB


def _rma_nlos_prime(geom, h, w):
    fc_ghz = geom.fc_mhz / 1000.0
    h_bs, h_ut = geom.h_bs_m, geom.h_ut_m
    return (
        161.04
        - 7.1 * math.log10(w)
        + 7.5 * math.log10(h)
        - (24.37 - 3.7 * (h / h_bs) ** 2) * math.log10(h_bs)
        + (43.42 - 3.1 * math.log10(h_bs)) * (math.log10(geom.d3d_m) - 3.0)
        + 20.0 * math.log10(fc_ghz)
        - (3.2 * math.log10(11.75 * h_ut) ** 2 - 4.97)
    )


def rma_los_pathloss_db(geom, env):
    """RMa LoS pathloss; returns ``(pathloss_db, sigma_sf_db)``."""
    geom = _in_range(geom, env)
    return _rma_los(geom, env.building_height_m)


def rma_nlos_pathloss_db(geom, env):
    """RMa NLoS pathloss ``max(PL_LoS, PL'_NLoS)``; returns ``(pathloss_db, 8.0)``."""
    geom = _in_range(geom, env)
    los, _ = _rma_los(geom, env.building_height_m)
    nlos = _rma_nlos_prime(geom, env.building_height_m, env.street_width_m)
    return max(los, nlos), RMA_SIGMA_NLOS_DB


def pathloss_db(geom, env, los=True):
    """Dispatch on ``env.pathloss_model``; returns ``(pathloss_db, sigma_sf_db)``."""
    if env.pathloss_model == "fspl":
        if los:
            return fspl_db(_in_range(geom, env).d3d_m, geom.fc_mhz), RMA_SIGMA_LOS1_DB
        geom = _in_range(geom, env)
        nlos = _rma_nlos_prime(geom, env.building_height_m, env.street_width_m)
        return max(fspl_db(geom.d3d_m, geom.fc_mhz), nlos), RMA_SIGMA_NLOS_DB
    if los:
        return rma_los_pathloss_db(geom, env)
    return rma_nlos_pathloss_db(geom, env)


def n_subcarriers(bandwidth_mhz):
    return int(round(SUBCARRIERS_PER_MHZ * bandwidth_mhz))


def noise_floor_dbm(bandwidth_hz, noise_figure_db):
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def shadowing_db(cell, rx, env, sigma_db):
    """Shadowing loss for one (cell, receiver) link in dB.

    Deterministic mode gives only ``extra_shadowing_db``.  Lognormal mode adds
    one Gaussian draw per (seed, cell, receiver position), so repeated calls
    for the same link agree.
    """
    if env.shadowing_mode == "deterministic":
        return env.extra_shadowing_db
    coords = np.array([rx.x, rx.y, rx.z], dtype=np.float64).view(np.uint64)
    gen = stream(env.rng_seed, "shadowing", int(cell.id), *(int(c) for c in coords))
    return env.extra_shadowing_db + float(gen.normal(0.0, sigma_db))


def _link(cell, rx, env, los):
    ground = env.terrain.height_at(rx.x, rx.y) if env.terrain is not None else 0.0
    if los is None:
        los = los_check(env.terrain, cell.position, rx)
    geom = LinkGeometry.between(cell.position, rx, cell.fc_mhz, ground_m=ground)
    pl, sigma = pathloss_db(geom, env, los)
    return pl + shadowing_db(cell, rx, env, sigma)


def rsrp_dbm(cell, ue_pos, env, los=None, *, on=True, rx_gain_dbi=0.0):
    """Per-resource-element received power in dBm.

    ``los=None`` decides line of sight from ``env.terrain`` (always LoS
    without terrain).
    """
    if not on:
        raise CellOffError(f"cell {cell.id} is off")
    eirp_per_re = (
        cell.tx_power_dbm - 10.0 * math.log10(n_subcarriers(cell.bandwidth_mhz)) + cell.antenna_gain_dbi
    )
    return eirp_per_re - _link(cell, ue_pos, env, los) + rx_gain_dbi


def snr_db(cell, ue, env, los=None, *, rx_gain_dbi=0.0):
    """Full-band SNR; capacity carriers are disjoint so SINR equals SNR."""
    rx_dbm = cell.tx_power_dbm + cell.antenna_gain_dbi - _link(cell, ue.position, env, los) + rx_gain_dbi
    return rx_dbm - noise_floor_dbm(cell.bandwidth_mhz * 1e6, ue.noise_figure_db)


def los_check(terrain, a, b):
    """True when the straight segment ``a``-``b`` clears the terrain.

    The segment's ground track is walked raster cell by raster cell; a cell
    blocks when its elevation exceeds the lowest segment height over the
    part of the track inside that cell.  This is the limit of sampling the
    segment at ever finer spacing.
    """
    if terrain is None:
        return True
    if not (terrain.contains(a.x, a.y) and terrain.contains(b.x, b.y)):
        raise PropagationDomainError("los_check endpoints must lie inside the terrain raster")
    dx, dy, dz = b.x - a.x, b.y - a.y, b.z - a.z
    cs = terrain.cell_size_m
    # Parameter values where the track crosses raster grid lines.
    cuts = [0.0, 1.0]
    for p0, dp, origin, n in ((a.x, dx, terrain.origin_x, terrain.ncols), (a.y, dy, terrain.origin_y, terrain.nrows)):
        if dp == 0.0:
            continue
        lo, hi = sorted((p0, p0 + dp))
        k0 = math.floor((lo - origin) / cs) + 1
        k1 = math.ceil((hi - origin) / cs) - 1
        for k in range(max(k0, 0), min(k1, n) + 1):
            t = (origin + k * cs - p0) / dp
            if 0.0 < t < 1.0:
                cuts.append(t)
    cuts.sort()
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        if t1 <= t0:
            continue
        tm = 0.5 * (t0 + t1)
        elev = terrain.height_at(a.x + tm * dx, a.y + tm * dy)
        z_min = a.z + (t0 if dz >= 0 else t1) * dz
        if elev > z_min:
            return False
    return True


@dataclass
class CoverageGrid:
    origin: Position3D
    cell_size_m: float
    width: int
    height: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise PropagationDomainError("coverage grid dimensions must be > 0")
        self.values = np.asarray(self.values, dtype=float).reshape(self.height, self.width)

    def coordinates(self):
        xs = self.origin.x + self.cell_size_m * np.arange(self.width)
        ys = self.origin.y + self.cell_size_m * np.arange(self.height)
        return xs, ys

    def to_csv_text(self):
        xs, ys = self.coordinates()
        lines = ["x_m,y_m,rsrp_dbm"]
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                lines.append(f"{x:.6f},{y:.6f},{self.values[j, i]:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())


def coverage_grid(cell, env, bbox, resolution, ue_height_m=1.5):
    """RSRP raster over ``bbox = (xmin, ymin, xmax, ymax)``.

    Grid points start at ``(xmin, ymin)`` and step by ``resolution`` up to
    and including the far edge when it falls on the lattice.  NLoS pathloss
    is used wherever the terrain blocks the direct path.
    """
    if not resolution > 0:
        raise PropagationDomainError("resolution must be > 0")
    xmin, ymin, xmax, ymax = bbox
    if not (xmax >= xmin and ymax >= ymin):
        raise PropagationDomainError(f"empty bbox {bbox}")
    width = int(math.floor((xmax - xmin) / resolution + 1e-9)) + 1
    height = int(math.floor((ymax - ymin) / resolution + 1e-9)) + 1
    values = np.empty((height, width))
    with warnings.catch_warnings():
        # Nadir points trip the short-distance clamp on every call.
        warnings.simplefilter("ignore", RuntimeWarning)
        for j in range(height):
            y = ymin + j * resolution
            for i in range(width):
                x = xmin + i * resolution
                ground = env.terrain.height_at(x, y) if env.terrain is not None else 0.0
                rx = Position3D(x, y, ground + ue_height_m)
                values[j, i] = rsrp_dbm(cell, rx, env)
    return CoverageGrid(Position3D(xmin, ymin, 0.0), float(resolution), width, height, values)
