"""E2-lite message bus between the RAN model and xApps.

KPM indications flow from the simulator to subscribers; RC-style control
actions flow back and are queued for the next simulated hour.  Every
envelope that crosses the bus is appended to an ordered log which can be
written to and read back from newline-delimited JSON.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

logger = logging.getLogger(__name__)

COMMANDS = ("toggle", "set_on", "set_off", "noop")
KINDS = ("subscribe", "indication", "control", "ack", "error")

# Wire field order.  The first block is the fixed record schema; the second
# holds optional extension fields needed for subscribe/ack/error envelopes
# and the network-level unserved count.
WIRE_FIELDS = (
    "seq", "kind", "day", "hour", "cell_id", "on", "connected_ues",
    "throughput_mbps", "energy_wh", "command", "target_cell_id",
    "unserved_ue_count", "subscriber_id", "period_hours", "ref_seq", "reason",
)
_INT_FIELDS = {"seq", "day", "hour", "cell_id", "connected_ues", "target_cell_id",
               "unserved_ue_count", "period_hours", "ref_seq"}
_FLOAT_FIELDS = {"throughput_mbps", "energy_wh"}
_STR_FIELDS = {"kind", "command", "subscriber_id", "reason"}


class RicBusError(RuntimeError):
    pass


class ReplayParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class KpmReport:
    cell_id: int
    day: int
    hour: int
    on: bool
    connected_ues: int
    throughput_mbps: float
    energy_wh: float
    unserved_ue_count: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour must be in 0..23, got {self.hour}")
        if self.throughput_mbps < 0 or self.energy_wh < 0:
            raise ValueError("throughput and energy must be non-negative")


@dataclass(frozen=True)
class RcAction:
    target_cell_id: Optional[int]
    command: str = "toggle"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.command != "noop" and self.target_cell_id is None:
            raise ValueError(f"{self.command} needs a target cell")

    @classmethod
    def noop(cls):
        return cls(None, "noop")


@dataclass(frozen=True)
class RicEnvelope:
    seq: int
    kind: str
    day: Optional[int] = None
    hour: Optional[int] = None
    cell_id: Optional[int] = None
    on: Optional[bool] = None
    connected_ues: Optional[int] = None
    throughput_mbps: Optional[float] = None
    energy_wh: Optional[float] = None
    command: Optional[str] = None
    target_cell_id: Optional[int] = None
    unserved_ue_count: Optional[int] = None
    subscriber_id: Optional[str] = None
    period_hours: Optional[int] = None
    ref_seq: Optional[int] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown envelope kind {self.kind!r}")

    def to_json(self):
        record = {}
        for name in WIRE_FIELDS:
            value = getattr(self, name)
            if value is not None:
                record[name] = value
        return json.dumps(record, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, line):
        record = json.loads(line)
        if not isinstance(record, dict):
            raise ValueError("record is not an object")
        unknown = set(record) - set(WIRE_FIELDS)
        if unknown:
            raise ValueError(f"unknown fields {sorted(unknown)}")
        if "seq" not in record or "kind" not in record:
            raise ValueError("record needs 'seq' and 'kind'")
        for name, value in record.items():
            _check_type(name, value)
        return cls(**record)

    def to_report(self):
        if self.kind != "indication":
            raise RicBusError(f"envelope {self.seq} is a {self.kind}, not an indication")
        return KpmReport(self.cell_id, self.day, self.hour, self.on, self.connected_ues,
                         self.throughput_mbps, self.energy_wh, self.unserved_ue_count)

    def to_action(self):
        if self.kind != "control":
            raise RicBusError(f"envelope {self.seq} is a {self.kind}, not a control")
        return RcAction(self.target_cell_id, self.command)


def _check_type(name, value):
    if name == "on":
        ok = isinstance(value, bool)
    elif name in _INT_FIELDS:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif name in _FLOAT_FIELDS:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ValueError(f"field {name!r} has wrong type {type(value).__name__}")


@dataclass
class Subscription:
    subscription_id: int
    subscriber_id: str
    report_period_hours: int
    inbox: list = field(default_factory=list)
    _pending: list = field(default_factory=list)


class RicBus:
    """In-process, single-queue RIC bus.

    ``switchable_cells`` is the set of cell ids that accept on/off commands.
    All traffic is appended to ``log`` in sequence order.
    """

    def __init__(self, switchable_cells):
        self.switchable_cells = frozenset(switchable_cells)
        self.log = []
        self.conflicts = []
        self._seq = 0
        self._subs = {}
        self._queue = []

    def _emit(self, **fields):
        self._seq += 1
        env = RicEnvelope(seq=self._seq, **fields)
        self.log.append(env)
        return env

    def subscribe(self, subscriber_id, report_period_hours=1):
        if report_period_hours < 1:
            raise RicBusError("report_period_hours must be >= 1")
        if any(s.subscriber_id == subscriber_id for s in self._subs.values()):
            raise RicBusError(f"subscriber {subscriber_id!r} is already subscribed")
        sub_id = len(self._subs) + 1
        self._subs[sub_id] = Subscription(sub_id, subscriber_id, report_period_hours)
        self._emit(kind="subscribe", subscriber_id=subscriber_id, period_hours=report_period_hours)
        return sub_id

    def find_subscription(self, subscriber_id):
        """Subscription id for ``subscriber_id``, or None."""
        for sub_id, sub in self._subs.items():
            if sub.subscriber_id == subscriber_id:
                return sub_id
        return None

    def subscription(self, subscription_id):
        return self._subs[subscription_id]

    def publish_indications(self, reports):
        """Log ``reports`` and fan them out; returns the number of deliveries.

        A subscription with period ``p`` receives its accumulated batch after
        every hour whose absolute index ``day*24 + hour + 1`` is a multiple
        of ``p``.
        """
        reports = list(reports)
        for r in reports:
            self._emit(kind="indication", day=r.day, hour=r.hour, cell_id=r.cell_id, on=r.on,
                       connected_ues=r.connected_ues, throughput_mbps=r.throughput_mbps,
                       energy_wh=r.energy_wh, unserved_ue_count=r.unserved_ue_count)
        if not reports:
            return 0
        tick = reports[-1].day * 24 + reports[-1].hour + 1
        delivered = 0
        for sub_id in sorted(self._subs):
            sub = self._subs[sub_id]
            sub._pending.extend(reports)
            if tick % sub.report_period_hours == 0:
                sub.inbox.append(tuple(sub._pending))
                delivered += len(sub._pending)
                sub._pending = []
        return delivered

    def submit_control(self, action):
        """Queue ``action`` for the next hour; returns the ack or error envelope."""
        ctrl = self._emit(kind="control", command=action.command, target_cell_id=action.target_cell_id)
        if action.command != "noop" and action.target_cell_id not in self.switchable_cells:
            logger.warning("rejected %s on non-switchable cell %s", action.command, action.target_cell_id)
            return self._emit(kind="error", ref_seq=ctrl.seq, target_cell_id=action.target_cell_id,
                              reason=f"cell {action.target_cell_id} is non-switchable")
        if action.command != "noop":
            for queued_seq, queued in self._queue:
                if queued.target_cell_id == action.target_cell_id and queued.command != "noop":
                    self.conflicts.append((queued_seq, ctrl.seq, action.target_cell_id))
                    logger.info("control conflict on cell %s: seq %d overrides seq %d",
                                action.target_cell_id, ctrl.seq, queued_seq)
        self._queue.append((ctrl.seq, action))
        return self._emit(kind="ack", ref_seq=ctrl.seq, target_cell_id=action.target_cell_id)

    def drain_controls(self):
        """Pop queued actions in submission order."""
        actions = [a for _, a in self._queue]
        self._queue = []
        return actions

    def record_stream(self, path):
        write_stream(path, self.log)


def write_stream(path, envelopes):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for env in envelopes:
            fh.write(env.to_json())
            fh.write("\n")


def replay_stream(path):
    """Read an NDJSON envelope stream; raises ``ReplayParseError`` on bad lines."""
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_stream(text)


def parse_stream(text):
    envelopes = []
    lines = text.split("\n")
    for lineno, line in enumerate(lines, start=1):
        if line == "" and lineno == len(lines):
            break
        try:
            env = RicEnvelope.from_json(line)
        except (ValueError, TypeError) as exc:
            raise ReplayParseError(lineno, str(exc)) from None
        if envelopes and env.seq <= envelopes[-1].seq:
            raise ReplayParseError(lineno, f"seq {env.seq} does not increase")
        envelopes.append(env)
    return envelopes
