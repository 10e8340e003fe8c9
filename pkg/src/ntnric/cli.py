"""Command-line entry point: simulate, train, evaluate, coverage, replay.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
error.  Every file a subcommand writes goes under ``--out`` together with
``run_manifest.json``, which records the configuration, its hash, the
seed, the arguments and package versions.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys

import numpy as np
import sklearn
import yaml

from . import __version__
from .config import ConfigError, config_hash, load_config
from .harness import (AlwaysOnPolicy, ExhaustiveHourlyPolicy, GreedyIdlePolicy, RandomPolicy,
                      ReplayPolicy, controls_from_stream, evaluate, evaluation_csv,
                      evaluation_summary, metrics_csv, run_days)
from .netmodel import NetworkModel
from .propagation import PropagationDomainError, Terrain, coverage_grid
from .ricbus import ReplayParseError, RicBus, parse_stream, write_stream

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
MAX_SEED = 2**64 - 1
BASELINES = ("always_on", "random", "greedy_idle", "exhaustive_hourly")
POLICIES = BASELINES + ("dqn",)

logger = logging.getLogger("ntnric")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text):
    try:
        value = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}: expected an unsigned 64-bit integer")
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed {value} outside 0..2^64-1")
    return value


def build_parser():
    parser = _Parser(prog="ntnric", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--config", metavar="PATH", help="YAML file overriding the defaults")
        p.add_argument("--seed", type=_u64, required=True, metavar="U64", help="experiment seed")
        p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = sub.add_parser("simulate", help="run a policy and record KPMs and the RIC stream")
    common(p)
    p.add_argument("--days", type=int, default=1, metavar="N")
    p.add_argument("--policy", default="always_on", choices=POLICIES)
    p.add_argument("--checkpoint", metavar="PATH", help="DQN checkpoint (for --policy dqn)")

    p = sub.add_parser("train", help="train the DQN energy-saving xApp")
    common(p)
    p.add_argument("--episodes", type=int, metavar="N", help="training days (default: dqn.n_episodes)")

    p = sub.add_parser("evaluate", help="compare policies against always-on")
    common(p)
    p.add_argument("--days", type=int, default=30, metavar="N")
    p.add_argument("--policy", metavar="NAME[,NAME...]",
                   help=f"comma-separated subset of {', '.join(POLICIES)} (default: all baselines, "
                        "plus dqn when --checkpoint is given)")
    p.add_argument("--checkpoint", metavar="PATH", help="DQN checkpoint")

    p = sub.add_parser("coverage", help="write RSRP coverage rasters")
    common(p)
    p.add_argument("--resolution", type=float, default=100.0, metavar="METERS")
    p.add_argument("--terrain", metavar="PATH", help="elevation raster CSV")

    p = sub.add_parser("replay", help="re-run a recorded stream and check it reproduces")
    common(p)
    p.add_argument("stream", metavar="STREAM", help="NDJSON stream written by simulate")
    return parser


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class _Run:
    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = args.out
        self.inputs = {}

    def path(self, name):
        # Created on first use so rejected invocations leave no directory behind.
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def write(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def add_input(self, label, path):
        self.inputs[label] = {"path": path, "sha256": _sha256(path)}

    def manifest(self):
        args = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("out", "verbose")}
        record = {
            "command": self.args.command,
            "arguments": args,
            "seed": self.args.seed,
            "config_sha256": config_hash(self.cfg),
            "config": self.cfg,
            "inputs": self.inputs,
            "versions": {
                "ntnric": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scikit-learn": sklearn.__version__,
                "pyyaml": yaml.__version__,
            },
        }
        self.write("run_manifest.json", json.dumps(record, indent=2, sort_keys=True) + "\n")


def _load_dqn(path, run):
    from .training import DqnEnergySaver

    if path is None:
        raise ConfigError("--policy dqn needs --checkpoint")
    try:
        est = DqnEnergySaver.from_checkpoint(path)
    except OSError as exc:
        raise ConfigError(f"--checkpoint: cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"--checkpoint: {exc}") from None
    run.add_input("checkpoint", path)
    return est


def _policy_factory(name, args, run):
    if name == "always_on":
        return lambda m: AlwaysOnPolicy()
    if name == "random":
        return lambda m: RandomPolicy(m, args.seed)
    if name == "greedy_idle":
        return GreedyIdlePolicy
    if name == "exhaustive_hourly":
        return ExhaustiveHourlyPolicy
    est = _load_dqn(args.checkpoint, run)
    return lambda m: est.policy(m)


def _check_dqn_shape(est, model):
    from .training import KpmStateEncoder

    n_in = KpmStateEncoder().fit(model).n_features
    want = (n_in, len(model.switchable) + 1)
    got = (est.net_.layer_sizes[0], est.net_.layer_sizes[-1])
    if got != want:
        raise ConfigError(f"--checkpoint: network maps {got[0]} -> {got[1]} but this arena "
                          f"needs {want[0]} -> {want[1]}")


def cmd_simulate(args, run):
    if args.days < 1:
        raise ConfigError("--days must be >= 1")
    factory = _policy_factory(args.policy, args, run)
    model = NetworkModel(args.seed, run.cfg)
    if args.policy == "dqn":
        _check_dqn_shape(_load_dqn(args.checkpoint, run), model)
    bus = RicBus(model.switchable)
    results = run_days(factory(model), model, range(args.days), chain=True, bus=bus)
    run.write("metrics.csv", metrics_csv(results))
    write_stream(run.path("stream.ndjson"), bus.log)
    for res in results:
        m = res.metrics
        logger.info("day %d energy %.1f Wh efficiency %.1f bits/J", m.day_index,
                    m.total_energy_wh, m.efficiency_bits_per_j)


def cmd_train(args, run):
    from .training import DqnEnergySaver

    d = dict(run.cfg["dqn"])
    default_episodes = d.pop("n_episodes")
    episodes = default_episodes if args.episodes is None else args.episodes
    if episodes < 0:
        raise ConfigError("--episodes must be >= 0")
    d["hidden_sizes"] = tuple(d["hidden_sizes"])
    model = NetworkModel(args.seed, run.cfg)
    est = DqnEnergySaver(n_episodes=episodes, random_state=args.seed, **d).fit(model)
    est.save(run.path("checkpoint.txt"))
    run.write("learning_curve.csv", est.learning_curve_csv())


def cmd_evaluate(args, run):
    if args.days < 1:
        raise ConfigError("--days must be >= 1")
    if args.policy is None:
        names = list(BASELINES) + (["dqn"] if args.checkpoint else [])
    else:
        names = [n.strip() for n in args.policy.split(",") if n.strip()]
        unknown = [n for n in names if n not in POLICIES]
        if unknown or not names:
            raise ConfigError(f"--policy: unknown policy {', '.join(unknown) or '(empty)'}; "
                              f"choose from {', '.join(POLICIES)}")
    policies = {n: _policy_factory(n, args, run) for n in dict.fromkeys(names)}
    model = NetworkModel(args.seed, run.cfg)
    if "dqn" in policies:
        _check_dqn_shape(_load_dqn(args.checkpoint, run), model)
    rows = evaluate(policies, model, args.days)
    run.write("evaluation.csv", evaluation_csv(rows))
    summary = evaluation_summary(rows)
    run.write("summary.txt", summary + "mean_efficiency is the mean over days of daily bits/J.\n")
    sys.stdout.write(summary)


def cmd_coverage(args, run):
    if not args.resolution > 0:
        raise ConfigError(f"--resolution must be > 0, got {args.resolution}")
    model_cfg = run.cfg
    model = NetworkModel(args.seed, model_cfg)
    env = model.env
    arena = float(model_cfg["arena_m"])
    bbox = (0.0, 0.0, arena, arena)
    if args.terrain:
        try:
            terrain = Terrain.from_csv(args.terrain)
        except OSError as exc:
            raise ConfigError(f"--terrain: cannot read {args.terrain}: {exc}") from None
        except PropagationDomainError as exc:
            raise ConfigError(f"--terrain: {exc}") from None
        run.add_input("terrain", args.terrain)
        from dataclasses import replace

        env = replace(env, terrain=terrain)
        x0, y0, x1, y1 = terrain.bbox
        bbox = (max(x0, 0.0), max(y0, 0.0), min(x1, arena), min(y1, arena))
        if bbox[0] > bbox[2] or bbox[1] > bbox[3]:
            raise ConfigError("--terrain: raster does not overlap the arena")
    ue_h = float(model_cfg["ues"]["height_m"])
    grids = []
    for cell in model.cells:
        grid = coverage_grid(cell, env, bbox, args.resolution, ue_height_m=ue_h)
        grid.to_csv(run.path(f"coverage_cell{cell.id}.csv"))
        grids.append(grid)
    stack = np.stack([g.values for g in grids])
    best = np.argmax(stack, axis=0)
    xs, ys = grids[0].coordinates()
    lines = ["x_m,y_m,cell_id,rsrp_dbm"]
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            k = best[j, i]
            lines.append(f"{x:.6f},{y:.6f},{model.cells[k].id},{stack[k, j, i]:.6f}")
    run.write("coverage_best_server.csv", "\n".join(lines) + "\n")


def cmd_replay(args, run):
    try:
        with open(args.stream, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"STREAM: cannot read {args.stream}: {exc}") from None
    run.add_input("stream", args.stream)
    envelopes = parse_stream(text)
    name, first_day, n_days, controls = controls_from_stream(envelopes)
    model = NetworkModel(args.seed, run.cfg)
    bus = RicBus(model.switchable)
    results = run_days(ReplayPolicy(controls, name), model, range(first_day, first_day + n_days),
                       chain=True, bus=bus)
    write_stream(run.path("stream.ndjson"), bus.log)
    run.write("metrics.csv", metrics_csv(results))
    replayed = "".join(env.to_json() + "\n" for env in bus.log)
    if replayed != text:
        mismatch = next((i for i, (a, b) in enumerate(zip(bus.log, envelopes), 1)
                         if a.to_json() != b.to_json()), min(len(bus.log), len(envelopes)) + 1)
        raise RuntimeError(f"replay diverged from the recording at line {mismatch}")
    print(f"replay identical: {len(envelopes)} envelopes, {n_days} day(s)")


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "coverage": cmd_coverage, "replay": cmd_replay}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        run = _Run(args, cfg)
        if args.config:
            run.add_input("config", args.config)
        COMMANDS[args.command](args, run)
        run.manifest()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplayParseError as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
