"""Deep Q-network written against numpy only.

The Q-function is a ReLU multilayer perceptron; training uses experience
replay, a periodically synced target network and plain SGD on the squared
TD error.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

CHECKPOINT_MAGIC = "ntnric-mlp"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class DqnConfig:
    hidden_sizes: Tuple[int, ...] = (64, 64, 64)
    gamma: float = 0.95
    learning_rate: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int = 200
    batch_size: int = 64
    target_sync_period: int = 24
    replay_capacity: int = 20_000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("epsilon values must be in [0, 1]")
        if self.batch_size < 1 or self.replay_capacity < 1 or self.target_sync_period < 1:
            raise ValueError("batch_size, replay_capacity and target_sync_period must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    def epsilon(self, episode):
        """Linear decay from ``epsilon_start`` to ``epsilon_end``."""
        if self.epsilon_decay_episodes <= 0:
            return self.epsilon_end
        frac = min(episode / self.epsilon_decay_episodes, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class Mlp:
    """Dense ReLU network with an identity output layer.

    ``weights[i]`` has shape ``(layer_sizes[i+1], layer_sizes[i])``.
    """

    def __init__(self, layer_sizes, weights=None, biases=None):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("need at least an input and an output layer of positive width")
        shapes = list(zip(self.layer_sizes[1:], self.layer_sizes[:-1]))
        if weights is None:
            weights = [np.zeros(s) for s in shapes]
        if biases is None:
            biases = [np.zeros(s[0]) for s in shapes]
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        if [w.shape for w in self.weights] != shapes or [b.shape for b in self.biases] != [
            (s[0],) for s in shapes
        ]:
            raise ValueError("parameter shapes do not match layer_sizes")

    @classmethod
    def initialize(cls, layer_sizes, rng):
        """He-uniform weights, zero biases."""
        sizes = tuple(layer_sizes)
        weights = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / n_in)
            weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        return cls(sizes, weights)

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.layer_sizes[0]:
            raise ValueError(f"expected input width {self.layer_sizes[0]}, got {x.shape[-1]}")
        return x

    def forward(self, x):
        x = self._check_input(x)
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else np.maximum(z, 0.0)
        return a

    def forward_cached(self, x):
        """Forward pass on a batch keeping layer activations for ``backward``."""
        a = np.atleast_2d(self._check_input(x))
        acts = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if i == last else np.maximum(z, 0.0)
            acts.append(a)
        return acts

    def backward(self, acts, grad_out):
        """Parameter gradients given ``dL/d(output)`` for a cached batch."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = delta.T @ acts[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (acts[i] > 0.0)
        return grads_w, grads_b

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    def to_text(self):
        lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
                 "layer_sizes " + " ".join(str(n) for n in self.layer_sizes)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            lines.append(f"weights {i} {w.shape[0]} {w.shape[1]}")
            lines.extend(" ".join(repr(float(v)) for v in row) for row in w)
            lines.append(f"bias {i} {b.shape[0]}")
            lines.append(" ".join(repr(float(v)) for v in b))
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        try:
            magic, version = lines[0].split()
            if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint header {lines[0]!r}")
            head, *sizes = lines[1].split()
            if head != "layer_sizes":
                raise ValueError("missing layer_sizes line")
            sizes = [int(n) for n in sizes]
            pos = 2
            weights, biases = [], []
            for i in range(len(sizes) - 1):
                tag, idx, rows, cols = lines[pos].split()
                if tag != "weights" or int(idx) != i:
                    raise ValueError(f"expected weights {i} at line {pos + 1}")
                rows, cols = int(rows), int(cols)
                w = np.array([[float(v) for v in lines[pos + 1 + r].split()] for r in range(rows)])
                pos += 1 + rows
                tag, idx, n = lines[pos].split()
                if tag != "bias" or int(idx) != i:
                    raise ValueError(f"expected bias {i} at line {pos + 1}")
                b = np.array([float(v) for v in lines[pos + 1].split()])
                pos += 2
                weights.append(w.reshape(rows, cols))
                biases.append(b)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed checkpoint: {exc}") from None
        return cls(sizes, weights, biases)


def forward(net, state):
    return net.forward(state)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool = False


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions):
        return cls(
            np.array([t.state for t in transitions], dtype=float),
            np.array([t.action for t in transitions], dtype=int),
            np.array([t.reward for t in transitions], dtype=float),
            np.array([t.next_state for t in transitions], dtype=float),
            np.array([t.terminal for t in transitions], dtype=bool),
        )


@dataclass
class ReplayBuffer:
    capacity: int
    _items: list = field(default_factory=list, repr=False)
    _next: int = 0

    def __len__(self):
        return len(self._items)

    def push(self, transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size, rng):
        """Uniform sample without replacement (capped at the buffer size)."""
        if not self._items:
            raise ValueError("cannot sample from an empty replay buffer")
        k = min(batch_size, len(self._items))
        idx = rng.choice(len(self._items), size=k, replace=False)
        return Batch.from_transitions([self._items[i] for i in idx])


def td_targets(target_net, batch, gamma):
    next_q = target_net.forward(batch.next_states)
    bootstrap = np.where(batch.terminals, 0.0, next_q.max(axis=1))
    return batch.rewards + gamma * bootstrap


def loss_and_grads(net, states, actions, targets):
    """Mean squared TD error on the taken actions and its parameter gradients."""
    acts = net.forward_cached(states)
    q = acts[-1]
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    loss = float(np.mean(err ** 2))
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * err / len(actions)
    gw, gb = net.backward(acts, grad_out)
    return loss, gw, gb


def train_step(net, target_net, batch, config):
    """One SGD update of ``net`` towards the target network's TD targets."""
    if len(batch) == 0:
        raise ValueError("train_step needs a non-empty batch")
    targets = td_targets(target_net, batch, config.gamma)
    with np.errstate(invalid="ignore", over="ignore"):
        loss, gw, gb = loss_and_grads(net, batch.states, batch.actions, targets)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {loss}; max |target| {np.max(np.abs(targets)):.3g}, "
            f"max |weight| {max(np.max(np.abs(w)) for w in net.weights):.3g}"
        )
    lr = config.learning_rate
    for w, g in zip(net.weights, gw):
        w -= lr * g
    for b, g in zip(net.biases, gb):
        b -= lr * g
    return loss


def select_action(q_values, epsilon, rng):
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    q_values = np.asarray(q_values)
    if rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def sync_target(net, target_net):
    if net.layer_sizes != target_net.layer_sizes:
        raise ValueError("network shapes differ")
    for dst, src in zip(target_net.parameters(), net.parameters()):
        dst[...] = src


def parameter_distance(a, b):
    """Largest absolute parameter difference between two networks."""
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a.parameters(), b.parameters()))
