"""Deterministic aerial 5G network simulator with an O-RAN style RIC loop.

Modules: ``propagation`` (pathloss, link budget, coverage maps),
``netmodel`` (cells, UEs, hourly step), ``ricbus`` (KPM/RC message bus),
``dqn`` and ``training`` (numpy DQN and the energy-saving xApp),
``harness`` (episodes, baselines, oracles, evaluation) and ``cli``.
"""

__version__ = "0.1.0"

from .config import ConfigError, load_config
from .netmodel import NetworkModel, NetworkState
from .ricbus import KpmReport, RcAction, RicBus

__all__ = ["ConfigError", "KpmReport", "NetworkModel", "NetworkState", "RcAction", "RicBus",
           "__version__", "load_config"]
