"""Hourly-tick network world: cells, UEs, traffic, association, throughput, energy.

UEs are static, so all link budgets are computed once when the model is
built; an hour of simulation is then a handful of array operations.  The
same vectorised evaluator scores one on/off configuration (a simulation
step) or all 2^n of them (the exhaustive oracle), which keeps the two paths
numerically identical.
"""

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import propagation as prop
from .config import load_config
from .propagation import Position3D, RadioEnvironment
from .ricbus import KpmReport, RcAction
from .rng import stream

HOURS_PER_DAY = 24
UNATTACHED = -1


class ActionError(ValueError):
    """Control action that cannot be applied."""


@dataclass(frozen=True)
class EnergyModel:
    p_fixed_w: float
    delta_p: float
    p_sleep_w: float

    def __post_init__(self):
        if not self.p_fixed_w > self.p_sleep_w >= 0:
            raise ValueError("need p_fixed_w > p_sleep_w >= 0")

    def power_w(self, on, tx_power_dbm):
        if not on:
            return self.p_sleep_w
        return self.p_fixed_w + self.delta_p * dbm_to_w(tx_power_dbm)


@dataclass(frozen=True)
class CellConfig:
    id: int
    position: Position3D
    tx_power_dbm: float
    fc_mhz: float
    bandwidth_mhz: float
    role: str
    antenna_gain_dbi: float
    switchable: bool
    energy: EnergyModel
    duplex: str = "fdd"
    dl_fraction: float = 1.0

    def __post_init__(self):
        if self.role not in ("coverage", "capacity"):
            raise ValueError(f"unknown cell role {self.role!r}")
        if self.role == "coverage" and self.switchable:
            raise ValueError("coverage cells are always on")
        if not self.bandwidth_mhz > 0:
            raise ValueError("bandwidth_mhz must be > 0")
        if not 0 < self.dl_fraction <= 1:
            raise ValueError("dl_fraction must be in (0, 1]")

    @property
    def band_mhz(self):
        half = self.bandwidth_mhz / 2.0
        return self.fc_mhz - half, self.fc_mhz + half

    def power_w(self, on):
        return self.energy.power_w(on, self.tx_power_dbm)


@dataclass(frozen=True)
class TrafficProfile:
    """Daily activity window ``[start, end)`` (wraps past midnight when end <= start)."""

    active_start_hour: int
    active_end_hour: int
    demand_mbps_by_hour: tuple

    def __post_init__(self):
        demand = tuple(float(d) for d in self.demand_mbps_by_hour)
        object.__setattr__(self, "demand_mbps_by_hour", demand)
        if len(demand) != HOURS_PER_DAY or any(d < 0 for d in demand):
            raise ValueError("demand_mbps_by_hour needs 24 non-negative values")
        if not all(0 <= h < HOURS_PER_DAY for h in (self.active_start_hour, self.active_end_hour)):
            raise ValueError("active hours must be in [0, 24)")
        if any(d > 0 and not self.is_active(h) for h, d in enumerate(demand)):
            raise ValueError("demand must be zero outside the active window")
        if not any(d > 0 for d in demand):
            raise ValueError("a traffic profile needs at least one nonzero hour")

    def is_active(self, hour):
        s, e = self.active_start_hour, self.active_end_hour
        if s < e:
            return s <= hour < e
        return hour >= s or hour < e

    @property
    def window_hours(self):
        return sum(self.is_active(h) for h in range(HOURS_PER_DAY))


@dataclass(frozen=True)
class UeConfig:
    id: int
    position: Position3D
    noise_figure_db: float
    sensitivity_dbm: float
    traffic: TrafficProfile


@dataclass(frozen=True)
class NetworkState:
    day_index: int
    hour_of_day: int
    on: tuple
    assignment: tuple

    def __post_init__(self):
        if not 0 <= self.hour_of_day < HOURS_PER_DAY:
            raise ValueError("hour_of_day must be in 0..23")
        for ue, cell in enumerate(self.assignment):
            if cell != UNATTACHED and not self.on[cell]:
                raise ValueError(f"UE {ue} attached to off cell {cell}")


def dbm_to_w(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def network_efficiency(bits_total, energy_joules_total):
    """Delivered bits per joule."""
    if not energy_joules_total > 0:
        raise ValueError("energy must be > 0 to compute efficiency")
    return bits_total / energy_joules_total


def link_capacity_mbps(snr_db, bandwidth_mhz, dl_fraction=1.0, overhead=0.8, se_cap=5.5):
    """Downlink rate a single UE would get with the whole carrier."""
    se = np.minimum(np.log2(1.0 + 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)), se_cap)
    out = bandwidth_mhz * dl_fraction * overhead * se
    return float(out) if np.ndim(out) == 0 else out


def ue_throughput_mbps(demand_mbps, snr_db, bandwidth_mhz, n_sharing, dl_fraction=1.0,
                       overhead=0.8, se_cap=5.5):
    """Equal-share throughput of one UE, capped by its demand."""
    if n_sharing < 1:
        raise ValueError("n_sharing must be >= 1")
    if demand_mbps <= 0:
        return 0.0
    cap = link_capacity_mbps(snr_db, bandwidth_mhz, dl_fraction, overhead, se_cap)
    return min(demand_mbps, cap / n_sharing)


def _capacity_grid(arena, count):
    side = int(round(math.sqrt(count)))
    coords = [arena * (2 * i + 1) / (2 * side) for i in range(side)]
    return [(x, y) for y in coords for x in coords]


def radio_environment(cfg, seed=0):
    r = cfg["radio"]
    return RadioEnvironment(
        building_height_m=r["building_height_m"],
        street_width_m=r["street_width_m"],
        shadowing_mode=r["shadowing_mode"],
        extra_shadowing_db=r["extra_shadowing_db"],
        rng_seed=seed,
        pathloss_model=r["pathloss_model"],
    )


def build_environment(seed, config=None):
    """Cells and UEs for the 10 km arena.

    Cell 0 is the always-on coverage cell; capacity cells 1..n sit on a
    square grid at mid-points of equal strips, ordered south-west to
    north-east.  UE layout and base traffic come from the seeded stream.
    """
    cfg = config if config is not None else load_config()
    arena = float(cfg["arena_m"])
    cov, cap, en = cfg["coverage_cell"], cfg["capacity_cells"], cfg["energy"]
    tdd = cfg["radio"]["tdd_dl_fraction"]
    cells = [
        CellConfig(
            id=0,
            position=Position3D(cov["x_m"], cov["y_m"], cov["altitude_m"]),
            tx_power_dbm=cov["tx_power_dbm"],
            fc_mhz=cov["fc_mhz"],
            bandwidth_mhz=cov["bandwidth_mhz"],
            role="coverage",
            antenna_gain_dbi=cov["antenna_gain_dbi"],
            switchable=False,
            energy=EnergyModel(**en["coverage"]),
            duplex=cov["duplex"],
            dl_fraction=tdd if cov["duplex"] == "tdd" else 1.0,
        )
    ]
    for k, (x, y) in enumerate(_capacity_grid(arena, cap["count"])):
        cells.append(
            CellConfig(
                id=k + 1,
                position=Position3D(x, y, cap["altitude_m"]),
                tx_power_dbm=cap["tx_power_dbm"],
                fc_mhz=cap["base_fc_mhz"] + cap["carrier_spacing_mhz"] * k,
                bandwidth_mhz=cap["bandwidth_mhz"],
                role="capacity",
                antenna_gain_dbi=cap["antenna_gain_dbi"],
                switchable=True,
                energy=EnergyModel(**en["capacity"]),
                duplex=cap["duplex"],
                dl_fraction=tdd if cap["duplex"] == "tdd" else 1.0,
            )
        )

    u = cfg["ues"]
    layout_seed = seed if u["seed"] is None else u["seed"]
    rng = stream(layout_seed, "ue-layout")
    ues = []
    for i in range(int(u["count"])):
        x, y = rng.uniform(0.0, arena, size=2)
        length = int(rng.integers(u["window_min_h"], u["window_max_h"], endpoint=True))
        span_lo, span_hi = (int(h) for h in u["day_span_h"])
        if (span_lo, span_hi) == (0, HOURS_PER_DAY):
            start = int(rng.integers(0, HOURS_PER_DAY))
        else:
            start = int(rng.integers(span_lo, span_hi - length, endpoint=True))
        end = (start + length) % HOURS_PER_DAY
        demand = [0.0] * HOURS_PER_DAY
        for j in range(length):
            demand[(start + j) % HOURS_PER_DAY] = float(
                rng.uniform(u["demand_min_mbps"], u["demand_max_mbps"])
            )
        if length == HOURS_PER_DAY:
            end = start
        ues.append(
            UeConfig(
                id=i,
                position=Position3D(float(x), float(y), u["height_m"]),
                noise_figure_db=u["noise_figure_db"],
                sensitivity_dbm=u["sensitivity_dbm"],
                traffic=TrafficProfile(start, end, tuple(demand)),
            )
        )
    return cells, ues


def rsrp_matrix(cells, ues, env):
    """RSRP of every (UE, cell) pair in dBm, shape ``(n_ues, n_cells)``."""
    out = np.empty((len(ues), len(cells)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i, ue in enumerate(ues):
            for j, cell in enumerate(cells):
                out[i, j] = prop.rsrp_dbm(cell, ue.position, env)
    return out


def snr_matrix(cells, ues, env):
    out = np.empty((len(ues), len(cells)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i, ue in enumerate(ues):
            for j, cell in enumerate(cells):
                out[i, j] = prop.snr_db(cell, ue, env)
    return out


def associate_configs(rsrp, sensitivity, on_masks, previous, hysteresis_db, sticky=None):
    """Vectorised association for ``K`` on/off masks.

    ``rsrp``: (U, C); ``sensitivity``: (U,); ``on_masks``: (K, C) bool;
    ``previous``: (U,) cell index or -1.  Returns (K, U) cell indices.
    A UE attaches to the strongest on-cell above its sensitivity (lowest
    index on ties).  A UE flagged in ``sticky`` (default: every attached
    UE) leaves its current cell only when the best candidate is stronger by
    more than ``hysteresis_db``; other UEs reselect freely.
    """
    on_masks = np.asarray(on_masks, dtype=bool)
    previous = np.asarray(previous, dtype=int)
    n_ues = rsrp.shape[0]
    audible = rsrp >= sensitivity[:, None]
    eligible = on_masks[:, None, :] & audible[None, :, :]
    masked = np.where(eligible, rsrp[None, :, :], -np.inf)
    best = np.argmax(masked, axis=2)
    best_val = np.take_along_axis(masked, best[..., None], axis=2)[..., 0]
    has_best = np.isfinite(best_val)

    attached = previous >= 0
    if sticky is not None:
        attached = attached & np.asarray(sticky, dtype=bool)
    prev_idx = np.where(attached, previous, 0)
    ue_idx = np.arange(n_ues)
    prev_ok = attached[None, :] & eligible[:, ue_idx, prev_idx]
    prev_val = rsrp[ue_idx, prev_idx]
    switch = best_val > prev_val[None, :] + hysteresis_db
    stay = prev_ok & ~switch
    return np.where(stay, prev_idx[None, :], np.where(has_best, best, UNATTACHED))


def evaluate_configs(assign, demand, capacity_mbps, n_cells):
    """Per-UE and per-cell throughput for (K, U) assignments.

    Returns ``(ue_tp (K, U), cell_tp (K, C), cell_users (K, C))`` where
    ``cell_users`` counts attached UEs with nonzero demand.
    """
    active = demand > 0
    n_cfg = assign.shape[0]
    users = np.empty((n_cfg, n_cells), dtype=np.int64)
    members = []
    for c in range(n_cells):
        m = (assign == c) & active[None, :]
        members.append(m)
        users[:, c] = m.sum(axis=1)
    idx = np.where(assign >= 0, assign, 0)
    share = np.take_along_axis(users, idx, axis=1)
    ue_cap = capacity_mbps[np.arange(assign.shape[1])[None, :], idx]
    served = (assign >= 0) & active[None, :]
    ue_tp = np.where(served, np.minimum(demand[None, :], ue_cap / np.maximum(share, 1)), 0.0)
    # Each (config, cell) total is a reduction over a contiguous row of UEs, so it is
    # bit-identical whether one configuration or all 2^n are evaluated together.
    cell_tp = np.empty((n_cfg, n_cells))
    for c in range(n_cells):
        cell_tp[:, c] = np.where(members[c], ue_tp, 0.0).sum(axis=1)
    return ue_tp, cell_tp, users


class NetworkModel:
    """A built arena: cells, UEs, link budgets and the hourly step.

    Parameters
    ----------
    seed : int
        Experiment seed; drives UE layout (unless the config pins
        ``ues.seed``) and per-day demand jitter.
    config : dict, optional
        Validated configuration (see ``ntnric.config``).
    """

    def __init__(self, seed, config=None):
        self.seed = int(seed)
        self.config = config if config is not None else load_config()
        self.cells, self.ues = build_environment(self.seed, self.config)
        self.env = radio_environment(self.config, self.seed)
        r = self.config["radio"]
        self.hysteresis_db = float(r["hysteresis_db"])
        self.overhead = float(r["overhead"])
        self.se_cap = float(r["se_cap"])
        self.daily_jitter = float(self.config["ues"]["daily_jitter"])

        self.n_cells = len(self.cells)
        self.switchable = tuple(c.id for c in self.cells if c.switchable)
        self.sensitivity = np.array([u.sensitivity_dbm for u in self.ues])
        self.rsrp = rsrp_matrix(self.cells, self.ues, self.env)
        self.snr = snr_matrix(self.cells, self.ues, self.env)
        bw = np.array([c.bandwidth_mhz for c in self.cells])
        dl = np.array([c.dl_fraction for c in self.cells])
        self.capacity_mbps = link_capacity_mbps(self.snr, bw[None, :] * dl[None, :], 1.0,
                                                self.overhead, self.se_cap)
        self.peak_capacity_mbps = bw * dl * self.overhead * self.se_cap
        self.power_on_w = np.array([c.power_w(True) for c in self.cells])
        self.power_off_w = np.array([c.power_w(False) for c in self.cells])
        self.base_demand = np.array([u.traffic.demand_mbps_by_hour for u in self.ues])
        self._demand_cache = {}

    # -- traffic ---------------------------------------------------------
    def demand(self, day_index):
        """(U, 24) demand in Mbps for ``day_index`` with per-day jitter."""
        if day_index not in self._demand_cache:
            rng = stream(self.seed, "day-jitter", int(day_index))
            j = self.daily_jitter
            factor = rng.uniform(1.0 - j, 1.0 + j, size=self.base_demand.shape)
            self._demand_cache[day_index] = self.base_demand * factor
            if len(self._demand_cache) > 64:
                self._demand_cache.pop(next(iter(self._demand_cache)))
        return self._demand_cache[day_index]

    def previous_demand(self, state):
        """Demand of the hour before ``state`` (UEs then in connected mode)."""
        if state.hour_of_day == 0:
            return self.demand(state.day_index - 1)[:, HOURS_PER_DAY - 1]
        return self.demand(state.day_index)[:, state.hour_of_day - 1]

    # -- state -----------------------------------------------------------
    def initial_state(self, day_index=0, on=None):
        """All cells on (or ``on``) at hour 0, UEs freshly associated."""
        on = tuple(True for _ in self.cells) if on is None else tuple(bool(v) for v in on)
        if not all(on[c.id] for c in self.cells if not c.switchable):
            raise ActionError("non-switchable cells must start on")
        prev = np.full(len(self.ues), UNATTACHED)
        assign = associate_configs(self.rsrp, self.sensitivity, np.array([on]), prev, self.hysteresis_db)[0]
        return NetworkState(int(day_index), 0, on, tuple(int(a) for a in assign))

    def apply_actions(self, on, actions):
        """Resolve actions last-writer-wins per cell; returns (new_on, errors)."""
        errors = []
        final = {}
        for action in actions:
            if action.command == "noop":
                continue
            cell = action.target_cell_id
            if cell not in self.switchable:
                errors.append(ActionError(f"cell {cell} is non-switchable"))
                continue
            final[cell] = action.command
        new_on = list(on)
        for cell, command in final.items():
            if command == "toggle":
                new_on[cell] = not on[cell]
            else:
                new_on[cell] = command == "set_on"
        return tuple(new_on), errors

    def hour_outcome(self, state, on_masks):
        """Score on/off masks for the hour in ``state``.

        Returns ``(assign, ue_tp, cell_tp, users, cell_energy_wh)`` with a
        leading configuration axis.
        """
        on_masks = np.atleast_2d(np.asarray(on_masks, dtype=bool))
        demand = self.demand(state.day_index)[:, state.hour_of_day]
        assign = associate_configs(self.rsrp, self.sensitivity, on_masks,
                                   np.array(state.assignment), self.hysteresis_db,
                                   sticky=self.previous_demand(state) > 0)
        ue_tp, cell_tp, users = evaluate_configs(assign, demand, self.capacity_mbps, self.n_cells)
        energy = np.where(on_masks, self.power_on_w[None, :], self.power_off_w[None, :])
        return assign, ue_tp, cell_tp, users, energy

    def step_hour(self, state, pending_actions=()):
        """Apply actions, serve one hour, advance the clock.

        Returns ``(next_state, reports, errors)``; rejected actions appear in
        ``errors`` and leave the state untouched for their cell.
        """
        on, errors = self.apply_actions(state.on, pending_actions)
        assign, _, cell_tp, users, energy = self.hour_outcome(state, [on])
        assign, cell_tp, users, energy = assign[0], cell_tp[0], users[0], energy[0]
        demand = self.demand(state.day_index)[:, state.hour_of_day]
        unserved = int(np.sum((assign == UNATTACHED) & (demand > 0)))
        reports = [
            KpmReport(
                cell_id=c.id,
                day=state.day_index,
                hour=state.hour_of_day,
                on=bool(on[c.id]),
                connected_ues=int(users[c.id]),
                throughput_mbps=float(cell_tp[c.id]),
                energy_wh=float(energy[c.id]),
                unserved_ue_count=unserved if c.role == "coverage" else None,
            )
            for c in self.cells
        ]
        hour = state.hour_of_day + 1
        day = state.day_index + hour // HOURS_PER_DAY
        nxt = NetworkState(day, hour % HOURS_PER_DAY, on, tuple(int(a) for a in assign))
        return nxt, reports, errors

    def previous_hour_reports(self, state):
        """KPMs the RAN would have reported for the hour before ``state``.

        Used as the first observation of an episode: the configuration in
        ``state`` served hour 23 of the previous day.
        """
        hour = (state.hour_of_day - 1) % HOURS_PER_DAY
        day = state.day_index - (1 if state.hour_of_day == 0 else 0)
        prev = replace(state, day_index=day, hour_of_day=hour)
        _, reports, _ = self.step_hour(prev, ())
        return reports

    def nearest_cell_map(self):
        """Strongest-server cell of each UE with every cell on (-1 if none)."""
        all_on = np.ones((1, self.n_cells), dtype=bool)
        prev = np.full(len(self.ues), UNATTACHED)
        return associate_configs(self.rsrp, self.sensitivity, all_on, prev, 0.0)[0]


def associate(ues, cells, env, on=None, previous=None, hysteresis_db=3.0):
    """Assignment (one cell id or -1 per UE) for the given on/off state."""
    on = [True] * len(cells) if on is None else list(on)
    rsrp = rsrp_matrix(cells, ues, env)
    sens = np.array([u.sensitivity_dbm for u in ues])
    prev = np.full(len(ues), UNATTACHED) if previous is None else np.asarray(previous)
    ids = np.array([c.id for c in cells])
    assign = associate_configs(rsrp, sens, np.array([on]), prev_to_index(prev, ids), hysteresis_db)[0]
    return [int(ids[a]) if a >= 0 else UNATTACHED for a in assign]


def prev_to_index(previous, ids):
    lookup = {int(c): i for i, c in enumerate(ids)}
    return np.array([lookup[int(p)] if p >= 0 else UNATTACHED for p in previous])


def step_hour(model, state, pending_actions=()):
    return model.step_hour(state, pending_actions)


def total_energy_wh(reports):
    return math.fsum(r.energy_wh for r in reports)


def total_throughput_mbps(reports):
    return math.fsum(r.throughput_mbps for r in reports)


def hour_efficiency(reports):
    """Bits per joule delivered during the hour described by ``reports``."""
    return network_efficiency(total_throughput_mbps(reports) * 1e6 * 3600.0,
                              total_energy_wh(reports) * 3600.0)


def unserved_count(reports) -> Optional[int]:
    for r in reports:
        if r.unserved_ue_count is not None:
            return r.unserved_ue_count
    return None


__all__ = [
    "ActionError", "CellConfig", "EnergyModel", "NetworkModel", "NetworkState", "RcAction",
    "TrafficProfile", "UeConfig", "associate", "build_environment", "network_efficiency",
    "step_hour", "ue_throughput_mbps",
]
