import itertools
import math

import numpy as np
import pytest

from ntnric.harness import (
    AlwaysOnPolicy, EpisodeMetrics, ExhaustiveHourlyPolicy, GreedyIdlePolicy, RandomPolicy,
    ReplayPolicy, controls_from_stream, evaluate, evaluation_csv, exhaustive_hour_optimum,
    metrics_csv, run_days, run_episode,
)
from ntnric.netmodel import NetworkModel, NetworkState, network_efficiency
from ntnric.ricbus import KpmReport, RcAction, RicBus


@pytest.fixture(scope="module")
def model():
    return NetworkModel(0)


def on_power(model):
    return float(np.sum(model.power_on_w))


class TestRunEpisode:
    def test_always_on_closed_form(self, model):
        res = run_episode(AlwaysOnPolicy(), model, 0)
        assert all(all(h.on) for h in res.metrics.hours)
        assert res.metrics.total_energy_wh == pytest.approx(24 * on_power(model), rel=1e-12)

    def test_always_on_default_figure(self, model):
        # 24 x (229.62 + 9 x 59.46) with the exact dBm->W conversion.
        energy = run_episode(AlwaysOnPolicy(), model, 0).metrics.total_energy_wh
        assert energy == pytest.approx(18355.2162, abs=1e-3)
        assert energy == pytest.approx(18364.0, rel=1e-3)

    def test_efficiency_arithmetic(self, model):
        m = run_episode(GreedyIdlePolicy(model), model, 2).metrics
        assert m.efficiency_bits_per_j == pytest.approx(m.total_bits / (m.total_energy_wh * 3600), rel=1e-12)
        assert len(m.hours) == 24

    def test_metrics_csv_deterministic(self):
        outs = []
        for _ in range(2):
            m = NetworkModel(4)
            outs.append(metrics_csv(run_days(RandomPolicy(m, 4), m, range(2))))
        assert outs[0] == outs[1]
        assert outs[0].splitlines()[0] == "day,hour,cell_id,on,ue_count,throughput_mbps,energy_wh"

    def test_invalid_action_is_noop(self, model):
        class Bad:
            name = "bad"

            def act(self, reports, state):
                return RcAction(0, "set_off")

        res = run_episode(Bad(), model, 0)
        ref = run_episode(AlwaysOnPolicy(), model, 0)
        assert res.metrics == ref.metrics
        errors = [e for e in res.bus.log if e.kind == "error"]
        assert len(errors) == 24 and all("non-switchable" in e.reason for e in errors)

    def test_must_start_at_hour_zero(self, model):
        s = model.initial_state(0)
        with pytest.raises(ValueError):
            run_episode(AlwaysOnPolicy(), model, 0, NetworkState(0, 5, s.on, s.assignment))


class TestGreedy:
    def reports(self, model, on, users):
        return [KpmReport(c, 0, 0, on[c], users[c], 0.0, 1.0) for c in range(model.n_cells)]

    def test_idle_cells_lowest_first(self, model):
        on = (True,) * 10
        act = GreedyIdlePolicy(model).act(self.reports(model, on, [3] + [0] * 9), model.initial_state(0))
        assert act == RcAction(1, "set_off")

    def test_appropriate_state_is_noop(self, model):
        state = model.initial_state(0)
        state = NetworkState(0, 3, (True,) + (False,) * 9, tuple(a if a == 0 else -1 for a in state.assignment))
        users = [0] * 10
        act = GreedyIdlePolicy(model).act(self.reports(model, state.on, users), state)
        assert act.command == "noop"

    def test_night_turns_everything_off_within_nine_hours(self, model):
        # Night spans 22:00-07:00; start from all-on at the first idle report.
        assert not model.demand(0)[:, 22:].any() and not model.demand(1)[:, :7].any()
        s = model.initial_state(0)
        state = NetworkState(0, 23, s.on, s.assignment)
        reports = model.previous_hour_reports(state)
        policy = GreedyIdlePolicy(model)
        for _ in range(9):
            state, reports, _ = model.step_hour(state, [policy.act(reports, state)])
        assert state.on == (True,) + (False,) * 9


class TestExhaustive:
    def test_zero_demand_all_off(self, model):
        s = model.initial_state(0)
        pattern, eff = exhaustive_hour_optimum(model, NetworkState(0, 2, s.on, s.assignment))
        assert pattern == (0,) * 9 and eff == 0.0

    def test_dominates_every_config(self, model):
        s0 = model.initial_state(3)
        state = NetworkState(3, 12, s0.on, s0.assignment)
        _, best = exhaustive_hour_optimum(model, state)
        for bits in itertools.islice(itertools.product((0, 1), repeat=9), 0, 512, 37):
            on = (True,) + tuple(bool(b) for b in bits)
            _, reports, _ = model.step_hour(state, [RcAction(c, "set_on" if on[c] else "set_off")
                                                    for c in model.switchable])
            hour = EpisodeMetrics.from_reports(3, [reports]).hours[0]
            assert hour.efficiency_bits_per_j <= best

    def test_matches_direct_enumeration(self):
        cfg_model = NetworkModel(0)
        s = cfg_model.initial_state(0)
        hour = int(np.argmax(cfg_model.demand(0).sum(axis=0)))
        state = NetworkState(0, hour, s.on, s.assignment)
        pattern, best = exhaustive_hour_optimum(cfg_model, state)
        masks = np.ones((512, 10), dtype=bool)
        masks[:, 1:] = np.array(list(itertools.product((0, 1), repeat=9)), dtype=bool)
        _, _, cell_tp, _, energy = cfg_model.hour_outcome(state, masks)
        effs = [network_efficiency(math.fsum(t) * 3.6e9, math.fsum(e) * 3600) for t, e in zip(cell_tp, energy)]
        assert best == max(effs)
        assert pattern == tuple(int(b) for b in masks[effs.index(best), 1:])

    def test_policy_moves_toward_optimum(self, model):
        res = run_episode(ExhaustiveHourlyPolicy(model), model, 1)
        base = run_episode(AlwaysOnPolicy(), model, 1)
        assert res.metrics.total_energy_wh < base.metrics.total_energy_wh


class TestEvaluate:
    def test_always_on_zero_delta(self, model):
        rows = evaluate({"always_on": lambda m: AlwaysOnPolicy()}, model, 1)
        assert rows[0].pct_energy_vs_always_on == 0.0 and rows[0].pct_efficiency_vs_always_on == 0.0

    def test_baseline_dominance_and_csv(self, model):
        rows = evaluate({"always_on": lambda m: AlwaysOnPolicy(), "greedy_idle": GreedyIdlePolicy,
                         "random": lambda m: RandomPolicy(m, 0)}, model, 2, day_offset=50)
        base = rows[0].days
        for r in rows[1:]:
            assert all(d.total_energy_wh <= b.total_energy_wh for d, b in zip(r.days, base))
        text = evaluation_csv(rows)
        assert text.splitlines()[0] == ("policy,mean_daily_energy_wh,mean_efficiency,"
                                        "pct_energy_vs_always_on,pct_efficiency_vs_always_on")
        assert len(text.splitlines()) == 4

    def test_needs_a_policy(self, model):
        with pytest.raises(ValueError):
            evaluate({}, model, 1)


class TestReplay:
    def test_controls_roundtrip(self, model):
        bus = RicBus(model.switchable)
        first = run_days(RandomPolicy(model, 9), model, range(2), bus=bus)
        name, day0, n_days, controls = controls_from_stream(bus.log)
        assert (name, day0, n_days, len(controls)) == ("random", 0, 2, 48)
        bus2 = RicBus(model.switchable)
        second = run_days(ReplayPolicy(controls, name), model, range(2), bus=bus2)
        assert [e.to_json() for e in bus.log] == [e.to_json() for e in bus2.log]
        assert [r.metrics for r in first] == [r.metrics for r in second]

    def test_partial_stream_rejected(self, model):
        bus = RicBus(model.switchable)
        run_episode(AlwaysOnPolicy(), model, 0, bus=bus)
        with pytest.raises(ValueError):
            controls_from_stream(bus.log[:-30])
