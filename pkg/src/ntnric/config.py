"""Environment configuration: defaults, YAML loading and validation."""

import copy
import hashlib
import json

import yaml

DEFAULT_CONFIG = {
    "arena_m": 10_000.0,
    "coverage_cell": {
        "x_m": 5000.0,
        "y_m": 5000.0,
        "altitude_m": 1000.0,
        "tx_power_dbm": 36.0,
        "fc_mhz": 3300.0,
        "bandwidth_mhz": 20.0,
        "antenna_gain_dbi": 2.0,
        "duplex": "tdd",
    },
    "capacity_cells": {
        "count": 9,
        "tx_power_dbm": 28.0,
        "altitude_m": 60.0,
        "bandwidth_mhz": 40.0,
        "base_fc_mhz": 3600.0,
        "carrier_spacing_mhz": 40.0,
        "antenna_gain_dbi": 2.0,
        "duplex": "tdd",
    },
    "ues": {
        "count": 50,
        "seed": None,
        "height_m": 1.5,
        "noise_figure_db": 7.0,
        "sensitivity_dbm": -125.0,
        "window_min_h": 6,
        "window_max_h": 12,
        "day_span_h": [7, 22],
        "demand_min_mbps": 1.0,
        "demand_max_mbps": 20.0,
        "daily_jitter": 0.2,
    },
    "energy": {
        "coverage": {"p_fixed_w": 150.0, "delta_p": 20.0, "p_sleep_w": 5.0},
        "capacity": {"p_fixed_w": 50.0, "delta_p": 15.0, "p_sleep_w": 5.0},
    },
    "radio": {
        "pathloss_model": "rma",
        "building_height_m": 5.0,
        "street_width_m": 5.0,
        "shadowing_mode": "deterministic",
        "extra_shadowing_db": 0.0,
        "hysteresis_db": 3.0,
        "overhead": 0.8,
        "se_cap": 5.5,
        "tdd_dl_fraction": 0.7,
        "interference": False,
    },
    "dqn": {
        "hidden_sizes": [64, 64, 64],
        "gamma": 0.95,
        "learning_rate": 1e-3,
        "epsilon_start": 1.0,
        "epsilon_end": 0.05,
        "epsilon_decay_episodes": 200,
        "batch_size": 64,
        "target_sync_period": 24,
        "replay_capacity": 20_000,
        "n_episodes": 300,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _positive(cfg, path):
    node = cfg
    for part in path.split("."):
        node = node[part]
    if not isinstance(node, (int, float)) or isinstance(node, bool) or not node > 0:
        raise ConfigError(f"{path} must be a positive number, got {node!r}")


def validate(cfg):
    for path in (
        "arena_m", "coverage_cell.altitude_m", "coverage_cell.bandwidth_mhz", "coverage_cell.fc_mhz",
        "capacity_cells.count", "capacity_cells.altitude_m", "capacity_cells.bandwidth_mhz",
        "capacity_cells.base_fc_mhz", "ues.count", "ues.height_m", "ues.window_min_h",
        "ues.demand_max_mbps", "radio.building_height_m", "radio.street_width_m",
        "radio.overhead", "radio.se_cap", "radio.tdd_dl_fraction",
    ):
        _positive(cfg, path)
    cap = cfg["capacity_cells"]
    side = int(round(cap["count"] ** 0.5))
    if side * side != cap["count"]:
        raise ConfigError("capacity_cells.count must be a perfect square (cells sit on a square grid)")
    if cap["carrier_spacing_mhz"] < cap["bandwidth_mhz"]:
        raise ConfigError("capacity carriers overlap: carrier_spacing_mhz < bandwidth_mhz")
    ues = cfg["ues"]
    if not 1 <= ues["window_min_h"] <= ues["window_max_h"] <= 24:
        raise ConfigError("need 1 <= ues.window_min_h <= ues.window_max_h <= 24")
    span = ues["day_span_h"]
    if (not isinstance(span, (list, tuple)) or len(span) != 2
            or not 0 <= span[0] < span[1] <= 24 or span[1] - span[0] < ues["window_max_h"]):
        raise ConfigError("ues.day_span_h must be [start, end] with 0 <= start < end <= 24 "
                          "and room for the longest window")
    if not 0 <= ues["demand_min_mbps"] <= ues["demand_max_mbps"]:
        raise ConfigError("need 0 <= ues.demand_min_mbps <= ues.demand_max_mbps")
    if not 0 <= ues["daily_jitter"] < 1:
        raise ConfigError("ues.daily_jitter must be in [0, 1)")
    if ues["seed"] is not None and (not isinstance(ues["seed"], int) or ues["seed"] < 0):
        raise ConfigError("ues.seed must be a non-negative integer or null")
    for role in ("coverage", "capacity"):
        e = cfg["energy"][role]
        if not e["p_fixed_w"] > e["p_sleep_w"] >= 0:
            raise ConfigError(f"energy.{role}: need p_fixed_w > p_sleep_w >= 0")
        if e["delta_p"] < 0:
            raise ConfigError(f"energy.{role}.delta_p must be >= 0")
    for cell in ("coverage_cell", "capacity_cells"):
        if cfg[cell]["duplex"] not in ("fdd", "tdd"):
            raise ConfigError(f"{cell}.duplex must be 'fdd' or 'tdd'")
    d = cfg["dqn"]
    if (not isinstance(d["hidden_sizes"], (list, tuple)) or not d["hidden_sizes"]
            or not all(isinstance(n, int) and n > 0 for n in d["hidden_sizes"])):
        raise ConfigError("dqn.hidden_sizes must be a non-empty list of positive integers")
    for key in ("batch_size", "target_sync_period", "replay_capacity"):
        if not isinstance(d[key], int) or d[key] < 1:
            raise ConfigError(f"dqn.{key} must be a positive integer")
    if not isinstance(d["n_episodes"], int) or d["n_episodes"] < 0:
        raise ConfigError("dqn.n_episodes must be a non-negative integer")
    if not 0 <= d["gamma"] <= 1:
        raise ConfigError("dqn.gamma must be in [0, 1]")
    if not d["learning_rate"] > 0:
        raise ConfigError("dqn.learning_rate must be > 0")
    if not (0 <= d["epsilon_end"] <= 1 and 0 <= d["epsilon_start"] <= 1):
        raise ConfigError("dqn epsilons must be in [0, 1]")
    if cfg["radio"]["interference"]:
        raise ConfigError("radio.interference is reserved; only disjoint carriers are modelled")
    return cfg


def load_config(path=None):
    """Defaults overlaid with the YAML file at ``path`` (if given)."""
    if path is None:
        return validate(copy.deepcopy(DEFAULT_CONFIG))
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return config_from_dict(data or {})


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return validate(_merge(DEFAULT_CONFIG, data))


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
