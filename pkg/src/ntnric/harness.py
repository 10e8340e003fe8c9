"""Episodes, baseline policies, the exhaustive hourly oracle and evaluation."""

import csv
import functools
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .netmodel import HOURS_PER_DAY, NetworkState, network_efficiency
from .ricbus import RcAction, RicBus
from .rng import stream

EVAL_DAY_OFFSET = 100_000
J_PER_WH = 3600.0
BITS_PER_MBPS_HOUR = 1e6 * 3600.0
MAX_EXHAUSTIVE_CELLS = 12


@dataclass(frozen=True)
class HourMetrics:
    hour: int
    energy_wh: float
    bits: float
    efficiency_bits_per_j: float
    unserved_ues: int
    on: tuple


@dataclass(frozen=True)
class EpisodeMetrics:
    day_index: int
    total_energy_wh: float
    total_bits: float
    efficiency_bits_per_j: float
    mean_unserved_ues: float
    hours: tuple = field(repr=False)

    @classmethod
    def from_reports(cls, day_index, reports_by_hour):
        hours = []
        for batch in reports_by_hour:
            energy = math.fsum(r.energy_wh for r in batch)
            bits = math.fsum(r.throughput_mbps for r in batch) * BITS_PER_MBPS_HOUR
            unserved = next((r.unserved_ue_count for r in batch if r.unserved_ue_count is not None), 0)
            on = tuple(r.on for r in sorted(batch, key=lambda r: r.cell_id))
            hours.append(HourMetrics(batch[0].hour, energy, bits,
                                     network_efficiency(bits, energy * J_PER_WH), unserved, on))
        total_energy = math.fsum(h.energy_wh for h in hours)
        total_bits = math.fsum(h.bits for h in hours)
        return cls(
            day_index=day_index,
            total_energy_wh=total_energy,
            total_bits=total_bits,
            efficiency_bits_per_j=total_bits / (total_energy * J_PER_WH),
            mean_unserved_ues=sum(h.unserved_ues for h in hours) / len(hours),
            hours=tuple(hours),
        )


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    final_state: NetworkState
    reports: list
    bus: RicBus
    oracle: list = field(default_factory=list)


# -- policies ----------------------------------------------------------------

class AlwaysOnPolicy:
    name = "always_on"

    def act(self, reports, state):
        for r in sorted(reports, key=lambda r: r.cell_id):
            if not r.on:
                return RcAction(r.cell_id, "set_on")
        return RcAction.noop()


class RandomPolicy:
    """Uniform over no-op and one toggle per switchable cell."""

    name = "random"

    def __init__(self, model, seed):
        self.model = model
        self.rng = stream(seed, "random-policy")

    def act(self, reports, state):
        k = int(self.rng.integers(len(self.model.switchable) + 1))
        if k == 0:
            return RcAction.noop()
        return RcAction(self.model.switchable[k - 1], "toggle")


class GreedyIdlePolicy:
    """Switch off idle capacity cells, wake cells whose UEs want traffic.

    A cell's UEs are those for which it is the strongest server with every
    cell on.  This policy reads the current hour's demand, so it is an
    oracle rather than a deployable xApp.
    """

    name = "greedy_idle"

    def __init__(self, model):
        self.model = model
        self.area = model.nearest_cell_map()

    def act(self, reports, state):
        by_id = {r.cell_id: r for r in reports}
        for cell in self.model.switchable:
            r = by_id[cell]
            if r.on and r.connected_ues == 0:
                return RcAction(cell, "set_off")
        demand = self.model.demand(state.day_index)[:, state.hour_of_day]
        for cell in self.model.switchable:
            if not state.on[cell] and np.any(demand[self.area == cell] > 0):
                return RcAction(cell, "set_on")
        return RcAction.noop()


class ExhaustiveHourlyPolicy:
    """Move one cell per hour toward the hour's exhaustive optimum."""

    name = "exhaustive_hourly"

    def __init__(self, model):
        self.model = model

    def act(self, reports, state):
        best, _ = exhaustive_hour_optimum(self.model, state)
        for cell, want in zip(self.model.switchable, best):
            if bool(want) != state.on[cell]:
                return RcAction(cell, "set_on" if want else "set_off")
        return RcAction.noop()


class ReplayPolicy:
    """Re-issues the control commands found in a recorded stream, hour by hour.

    ``name`` should match the recorded xApp so the subscribe envelope is
    reproduced too.
    """

    def __init__(self, controls_by_hour, name="replay"):
        self.controls = list(controls_by_hour)
        self.name = name
        self._hour = 0

    def act(self, reports, state):
        actions = self.controls[self._hour] if self._hour < len(self.controls) else []
        self._hour += 1
        return list(actions)


# -- episodes ----------------------------------------------------------------

def controls_from_stream(envelopes):
    """Split a recorded stream into what is needed to re-run it.

    Returns ``(policy_name, first_day, n_days, controls_by_hour)``.  Every
    simulated hour is a run of controls followed by that hour's indication
    batch; an indication batch with no controls before it is an initial
    observation.
    """
    name = None
    hours = []
    pending = []
    first_day = None
    for env in envelopes:
        if env.kind == "subscribe" and name is None:
            name = env.subscriber_id.split(":", 1)[-1]
        elif env.kind == "control":
            pending.append(env.to_action())
        elif env.kind == "indication":
            if pending:
                if first_day is None:
                    first_day = env.day
                hours.append(pending)
                pending = []
    if pending:
        raise ValueError("stream ends with controls that were never applied")
    if first_day is None:
        raise ValueError("stream holds no simulated hours")
    if len(hours) % HOURS_PER_DAY:
        raise ValueError(f"stream holds {len(hours)} hours, not whole days")
    return name or "replay", first_day, len(hours) // HOURS_PER_DAY, hours


def run_episode(policy, model, day_index, initial_state=None, oracle_check=False, bus=None):
    """Simulate one day (24 hourly ticks) with ``policy`` in the control loop.

    The policy sees the previous hour's KPM batch through the bus and may
    issue one control (or a list replayed from a record) per hour.  Invalid
    controls come back as error envelopes and are treated as no-ops.
    With ``oracle_check`` the exhaustive optimum of every hour is recorded
    next to the realized efficiency.
    """
    state = initial_state if initial_state is not None else model.initial_state(day_index)
    if state.day_index != day_index or state.hour_of_day != 0:
        raise ValueError("an episode starts at hour 0 of its day")
    bus = bus if bus is not None else RicBus(model.switchable)
    subscriber = f"xapp:{getattr(policy, 'name', 'policy')}"
    sub = bus.find_subscription(subscriber)
    if sub is None:
        sub = bus.subscribe(subscriber, 1)
    inbox = bus.subscription(sub).inbox
    # On a shared bus the last batch already describes the previous hour.
    prev = model.previous_hour_reports(state)
    if not inbox or inbox[-1] != tuple(prev):
        bus.publish_indications(prev)

    all_reports = []
    oracle = []
    for _ in range(HOURS_PER_DAY):
        decision = policy.act(inbox[-1], state)
        for action in decision if isinstance(decision, list) else [decision]:
            bus.submit_control(action)
        actions = bus.drain_controls()
        if oracle_check:
            best_bits, best_eff = exhaustive_hour_optimum(model, state)
        state, reports, _ = model.step_hour(state, actions)
        bus.publish_indications(reports)
        all_reports.append(reports)
        if oracle_check:
            realized = EpisodeMetrics.from_reports(day_index, [reports]).hours[0].efficiency_bits_per_j
            oracle.append((day_index, reports[0].hour, realized, best_eff, best_bits))
    metrics = EpisodeMetrics.from_reports(day_index, all_reports)
    return EpisodeResult(metrics, state, all_reports, bus, oracle)


def run_days(policy, model, day_indices, chain=True, oracle_check=False, bus=None):
    """Run consecutive days; with ``chain`` each day starts in yesterday's on/off state.

    Passing one ``bus`` records all days in a single stream.
    """
    results = []
    state = None
    for day in day_indices:
        if chain and state is not None and state.day_index == day:
            init = state
        else:
            init = model.initial_state(day)
        res = run_episode(policy, model, day, initial_state=init, oracle_check=oracle_check, bus=bus)
        state = res.final_state
        results.append(res)
    return results


def exhaustive_hour_optimum(model, state):
    """Best on/off pattern of the switchable cells for the hour in ``state``.

    All 2^n patterns are scored with the simulator's own association and
    throughput rules, starting from the UE assignment in ``state``.
    Returns ``(pattern, efficiency)`` where ``pattern`` is a tuple of 0/1 in
    ascending cell-id order; ties go to the lexicographically smallest
    pattern.
    """
    return _exhaustive_cached(model, state)


# The exhaustive policy and the oracle check ask about the same state.
@functools.lru_cache(maxsize=32)
def _exhaustive_cached(model, state):
    n = len(model.switchable)
    if n > MAX_EXHAUSTIVE_CELLS:
        raise ValueError(f"exhaustive search supports at most {MAX_EXHAUSTIVE_CELLS} switchable cells")
    patterns = list(itertools.product((0, 1), repeat=n))
    masks = np.ones((len(patterns), model.n_cells), dtype=bool)
    cols = list(model.switchable)
    masks[:, cols] = np.array(patterns, dtype=bool)
    _, _, cell_tp, _, energy = model.hour_outcome(state, masks)
    best, best_eff = None, -math.inf
    # fsum is exact, so these match the per-report sums of a realized hour bit for bit.
    tp_rows, energy_rows = cell_tp.tolist(), energy.tolist()
    for pattern, tp, en in zip(patterns, tp_rows, energy_rows):
        bits = math.fsum(tp) * BITS_PER_MBPS_HOUR
        joules = math.fsum(en) * J_PER_WH
        eff = network_efficiency(bits, joules)
        if eff > best_eff:
            best, best_eff = pattern, eff
    return best, best_eff


def greedy_idle_policy(model):
    return GreedyIdlePolicy(model)


# -- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class PolicySummary:
    policy: str
    mean_daily_energy_wh: float
    mean_efficiency: float
    pct_energy_vs_always_on: float
    pct_efficiency_vs_always_on: float
    days: tuple = field(repr=False, default=())


EVALUATION_HEADER = ["policy", "mean_daily_energy_wh", "mean_efficiency",
                     "pct_energy_vs_always_on", "pct_efficiency_vs_always_on"]


def evaluate(policies, model, n_days, day_offset=EVAL_DAY_OFFSET, chain=True):
    """Compare ``policies`` (name -> factory(model)) against always-on.

    ``mean_efficiency`` is the mean over days of each day's bits/J.
    """
    if not policies:
        raise ValueError("evaluate needs at least one policy")
    days = range(day_offset, day_offset + n_days)
    per_policy = {}
    factories = dict(policies)
    factories.setdefault("always_on", lambda m: AlwaysOnPolicy())
    for name, factory in factories.items():
        per_policy[name] = [r.metrics for r in run_days(factory(model), model, days, chain=chain)]
    base = per_policy["always_on"]
    base_energy = float(np.mean([m.total_energy_wh for m in base]))
    base_eff = float(np.mean([m.efficiency_bits_per_j for m in base]))
    rows = []
    for name in policies:
        ms = per_policy[name]
        energy = float(np.mean([m.total_energy_wh for m in ms]))
        eff = float(np.mean([m.efficiency_bits_per_j for m in ms]))
        rows.append(PolicySummary(name, energy, eff, 100.0 * (energy / base_energy - 1.0),
                                  100.0 * (eff / base_eff - 1.0), tuple(ms)))
    return rows


def evaluation_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVALUATION_HEADER)
    for r in rows:
        w.writerow([r.policy, f"{r.mean_daily_energy_wh:.6f}", f"{r.mean_efficiency:.6f}",
                    f"{r.pct_energy_vs_always_on:.6f}", f"{r.pct_efficiency_vs_always_on:.6f}"])
    return buf.getvalue()


def evaluation_summary(rows):
    lines = [f"{'policy':<20}{'energy Wh/day':>16}{'bits/J (mean over days)':>26}{'dE %':>10}{'dEff %':>10}"]
    for r in rows:
        lines.append(f"{r.policy:<20}{r.mean_daily_energy_wh:>16.1f}{r.mean_efficiency:>26.1f}"
                     f"{r.pct_energy_vs_always_on:>10.1f}{r.pct_efficiency_vs_always_on:>10.1f}")
    return "\n".join(lines) + "\n"


METRICS_HEADER = ["day", "hour", "cell_id", "on", "ue_count", "throughput_mbps", "energy_wh"]


def metrics_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for res in results:
        for batch in res.reports:
            for r in batch:
                w.writerow([r.day, r.hour, r.cell_id, int(r.on), r.connected_ues,
                            f"{r.throughput_mbps:.6f}", f"{r.energy_wh:.6f}"])
    return buf.getvalue()
