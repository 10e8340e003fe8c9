"""The energy-saving xApp: KPM state encoding and a DQN estimator.

``KpmStateEncoder`` turns an hour's KPM batch into the 42-feature state
vector.  ``DqnEnergySaver`` wraps the DQN core behind an estimator API:
``fit(model)`` trains on simulated days, ``predict(X)`` returns greedy
actions for encoded states and ``decision_function(X)`` the Q-values.
"""

import csv
import io
import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

from . import dqn
from .harness import AlwaysOnPolicy, EpisodeMetrics, run_days, run_episode
from .netmodel import HOURS_PER_DAY
from .ricbus import RcAction
from .rng import stream

logger = logging.getLogger(__name__)

FEATURES_PER_CELL = 4
BASELINE_DAYS = 7


class KpmStateEncoder(TransformerMixin, BaseEstimator):
    """Encode per-cell KPMs plus time of day.

    Per cell, in ascending id: on flag, connected UEs / total UEs,
    throughput / peak cell capacity, energy / largest on-power; then
    ``sin(2 pi h / 24), cos(2 pi h / 24)``.
    """

    def fit(self, model, y=None):
        self.cell_ids_ = tuple(c.id for c in model.cells)
        self.n_ues_ = len(model.ues)
        self.capacity_cap_ = np.asarray(model.peak_capacity_mbps, dtype=float)
        self.max_cell_energy_ = float(np.max(model.power_on_w))
        return self

    @property
    def n_features(self):
        check_is_fitted(self, "cell_ids_")
        return FEATURES_PER_CELL * len(self.cell_ids_) + 2

    def encode(self, reports, hour):
        check_is_fitted(self, "cell_ids_")
        by_id = {r.cell_id: r for r in reports}
        missing = [c for c in self.cell_ids_ if c not in by_id]
        if missing or len(by_id) != len(self.cell_ids_):
            raise ValueError(f"need exactly one report per cell; missing {missing}")
        out = np.empty(self.n_features)
        for k, cell in enumerate(self.cell_ids_):
            r = by_id[cell]
            out[4 * k: 4 * k + 4] = (
                1.0 if r.on else 0.0,
                r.connected_ues / self.n_ues_,
                r.throughput_mbps / self.capacity_cap_[k],
                r.energy_wh / self.max_cell_energy_,
            )
        angle = 2.0 * math.pi * hour / HOURS_PER_DAY
        out[-2:] = (math.sin(angle), math.cos(angle))
        return out

    def transform(self, X):
        """``X`` is an iterable of ``(reports, hour)`` pairs."""
        return np.array([self.encode(reports, hour) for reports, hour in X])


def encode_state(reports, hour, model):
    return KpmStateEncoder().fit(model).encode(reports, hour)


def action_to_control(action, switchable):
    """Action 0 is a no-op; action k toggles the k-th switchable cell."""
    if action == 0:
        return RcAction.noop()
    return RcAction(switchable[action - 1], "toggle")


class DqnEnergySaver(BaseEstimator):
    """DQN on/off controller for the capacity cells.

    Parameters mirror ``DqnConfig``; ``n_episodes`` simulated days are
    used for training.  Rewards are hourly bits/J divided by the always-on
    policy's mean daily bits/J on the same arena.
    """

    def __init__(self, hidden_sizes=(64, 64, 64), gamma=0.95, learning_rate=1e-3,
                 epsilon_start=1.0, epsilon_end=0.05, epsilon_decay_episodes=200,
                 batch_size=64, target_sync_period=24, replay_capacity=20_000,
                 n_episodes=300, random_state=0):
        self.hidden_sizes = hidden_sizes
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_episodes = epsilon_decay_episodes
        self.batch_size = batch_size
        self.target_sync_period = target_sync_period
        self.replay_capacity = replay_capacity
        self.n_episodes = n_episodes
        self.random_state = random_state

    def dqn_config(self):
        return dqn.DqnConfig(
            hidden_sizes=tuple(self.hidden_sizes), gamma=self.gamma,
            learning_rate=self.learning_rate, epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end, epsilon_decay_episodes=self.epsilon_decay_episodes,
            batch_size=self.batch_size, target_sync_period=self.target_sync_period,
            replay_capacity=self.replay_capacity,
        )

    def _init(self, model):
        cfg = self.dqn_config()
        self.encoder_ = KpmStateEncoder().fit(model)
        self.switchable_ = tuple(model.switchable)
        sizes = (self.encoder_.n_features, *cfg.hidden_sizes, len(self.switchable_) + 1)
        self.net_ = dqn.Mlp.initialize(sizes, stream(self.random_state, "dqn-init"))
        self.target_net_ = self.net_.copy()
        baseline = run_days(AlwaysOnPolicy(), model, range(BASELINE_DAYS), chain=True)
        self.baseline_efficiency_ = float(np.mean([r.metrics.efficiency_bits_per_j for r in baseline]))
        self.learning_curve_ = []
        return cfg

    def fit(self, model, y=None):
        cfg = self._init(model)
        replay = dqn.ReplayBuffer(cfg.replay_capacity)
        sample_rng = stream(self.random_state, "dqn-replay")
        explore_rng = stream(self.random_state, "dqn-explore")
        steps = 0
        state = None
        for episode in range(self.n_episodes):
            eps = cfg.epsilon(episode)
            agent = _LearningAgent(self, eps, explore_rng)
            init = state if state is not None and state.day_index == episode else model.initial_state(episode)
            result = run_episode(agent, model, episode, initial_state=init)
            state = result.final_state
            losses = []
            hours = result.metrics.hours
            for h, (obs, action) in enumerate(agent.trace):
                next_obs = self.encoder_.encode(result.reports[h], (h + 1) % HOURS_PER_DAY)
                reward = hours[h].efficiency_bits_per_j / self.baseline_efficiency_
                replay.push(dqn.Transition(obs, action, reward, next_obs, False))
                steps += 1
                if len(replay) >= cfg.batch_size:
                    batch = replay.sample(cfg.batch_size, sample_rng)
                    losses.append(dqn.train_step(self.net_, self.target_net_, batch, cfg))
                if steps % cfg.target_sync_period == 0:
                    dqn.sync_target(self.net_, self.target_net_)
            mean_loss = float(np.mean(losses)) if losses else math.nan
            self.learning_curve_.append(
                (episode, result.metrics.efficiency_bits_per_j, eps, mean_loss))
            logger.debug("episode %d eff %.1f eps %.3f loss %.4g", episode,
                         result.metrics.efficiency_bits_per_j, eps, mean_loss)
        return self

    def _check(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("DqnEnergySaver is not fitted; call fit or load a checkpoint")

    def decision_function(self, X):
        self._check()
        X = check_array(X)
        return self.net_.forward(X)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def policy(self, model, epsilon=0.0, rng=None):
        """An xApp policy object for ``run_episode``."""
        self._check()
        if not hasattr(self, "encoder_"):
            self.encoder_ = KpmStateEncoder().fit(model)
            self.switchable_ = tuple(model.switchable)
        return _LearningAgent(self, epsilon, rng if rng is not None else stream(0, "dqn-eval"))

    def save(self, path):
        self._check()
        self.net_.save(path)

    @classmethod
    def from_checkpoint(cls, path, **params):
        est = cls(**params)
        est.net_ = dqn.Mlp.load(path)
        est.target_net_ = est.net_.copy()
        return est

    def learning_curve_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "mean_efficiency", "epsilon", "loss"])
        for episode, eff, eps, loss in self.learning_curve_:
            w.writerow([episode, f"{eff:.6f}", f"{eps:.6f}", f"{loss:.9g}"])
        return buf.getvalue()


class _LearningAgent:
    name = "dqn"

    def __init__(self, estimator, epsilon, rng):
        self.est = estimator
        self.epsilon = epsilon
        self.rng = rng
        self.trace = []

    def act(self, reports, state):
        obs = self.est.encoder_.encode(reports, state.hour_of_day)
        q = self.est.net_.forward(obs)
        action = dqn.select_action(q, self.epsilon, self.rng)
        self.trace.append((obs, action))
        return action_to_control(action, self.est.switchable_)


def train(model, n_episodes=300, random_state=0, **params):
    """Train a controller; returns ``(estimator, learning_curve)``."""
    est = DqnEnergySaver(n_episodes=n_episodes, random_state=random_state, **params).fit(model)
    return est, est.learning_curve_


__all__ = ["DqnEnergySaver", "EpisodeMetrics", "KpmStateEncoder", "action_to_control",
           "encode_state", "train"]
