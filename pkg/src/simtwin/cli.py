"""Command-line entry point: collect, train, simulate, verify, experiment.

All inputs are key-value config files and trajectory CSVs; all outputs are
CSVs plus small sidecar metadata files.  On failure the tool prints a single
machine-parsable line `error: <kind>: <message>` to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import (
    ConfigurationError,
    DataError,
    NormSpec,
    extract_sigma0,
    make_dataset,
    rollout,
)
from .laneworld import (
    CONSTANTS,
    ControllerConfig,
    LaneKeepingController,
    collect_fot_logs,
)
from .nets import GaussianHead, NonFiniteError
from .trainers import (
    BcHyper,
    GailHyper,
    TrainingDiverged,
    make_critic,
    make_discriminator,
    make_env_model,
    train_bc,
    train_bcxgail,
    train_gail,
)
from .verification import BandSpec, verification_accuracy
from . import experiment as exp
from . import storage

log = logging.getLogger(__name__)


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 1):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one-line machine-parsable usage errors
        raise CliError("usage", message, code=2)


def _require_config(path: str | None) -> dict[str, str]:
    if not path:
        raise CliError("config", "a --config file is required", code=2)
    p = Path(path)
    if not p.exists():
        raise CliError("config", f"config file not found: {p}", code=2)
    return storage.read_keyvalues(p)


def _gather_logs(paths: list[str]):
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        elif p.exists():
            files.append(p)
        else:
            raise CliError("input", f"log path not found: {p}")
    if not files:
        raise CliError("input", "no trajectory CSVs found")
    return [storage.load_trajectory(f) for f in files]


def cmd_collect(args) -> int:
    kv = _require_config(args.config)
    try:
        x = float(kv["x"])
        count = int(kv["count"])
        duration = int(kv.get("T", kv.get("duration", 25)))
        noise = float(kv.get("noise_sigma", kv.get("noise", 0.5)))
        seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
    except KeyError as missing:
        raise CliError("config", f"missing config key {missing}", code=2)

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    logs = collect_fot_logs(ControllerConfig(x), count, duration, noise, base_seed=seed)
    names = []
    for i, traj in enumerate(logs):
        name = f"x{x:g}_fot_{i:03d}.csv"
        storage.save_trajectory(out / name, traj)
        names.append(name)
    storage.write_keyvalues(
        out / "manifest.txt",
        {
            "x": x,
            "count": count,
            "T": duration,
            "noise_sigma": noise,
            "seed": seed,
            "files": ",".join(names),
        },
    )
    storage.write_keyvalues(out / "environment_constants.txt", CONSTANTS)
    print(f"wrote {count} logs of {duration + 1} pairs to {out}")
    return 0


def cmd_train(args) -> int:
    algo = (args.algorithm or "").upper()
    if algo not in ("BC", "GAIL", "BCXGAIL"):
        raise CliError("usage", f"unknown algorithm {args.algorithm!r} (expected BC, GAIL, or BCxGAIL)", code=2)
    kv = storage.read_keyvalues(args.config) if args.config else {}
    l = int(kv.get("l", 10))
    seed = args.seed if args.seed is not None else int(kv.get("seed", 0))
    epochs = int(kv.get("epochs", 300))

    logs = _gather_logs(args.logs)
    dataset = make_dataset(logs, l, NormSpec())
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.txt"
    trace_path = out / "trace.csv"

    try:
        if algo == "BC":
            hyper = BcHyper(epochs=epochs, learning_rate=float(kv.get("learning_rate", 5e-5)))
            trained = train_bc(make_env_model(l, seed), dataset, hyper, seed=seed)
        else:
            hyper = GailHyper(
                epochs=epochs,
                model_lr=float(kv.get("model_lr", 5e-5)),
                disc_lr=float(kv.get("disc_lr", 0.01)),
                ppo_policy_iters=int(kv.get("ppo_policy_iters", 10)),
                ppo_disc_iters=int(kv.get("ppo_disc_iters", 10)),
                gamma=float(kv.get("gamma", 0.99)),
                lam=float(kv.get("lambda", kv.get("lam", 0.95))),
                clip_epsilon=float(kv.get("clip_epsilon", 0.2)),
                critic_lr=float(kv.get("critic_lr", 1e-3)),
                log_std_lr=float(kv.get("log_std_lr", 1e-3)),
            )
            controllers = {}
            for i, traj in enumerate(logs):
                if traj.meta.controller_x is None:
                    raise CliError("input", f"log {i} has no controller_x metadata needed for {algo}")
                controllers[i] = LaneKeepingController(traj.meta.controller_x)
            head = GaussianHead(make_env_model(l, seed))
            disc = make_discriminator(l, seed + 1)
            critic = make_critic(l, seed + 2)
            trainer = train_gail if algo == "GAIL" else train_bcxgail
            trained = trainer(head, disc, critic, controllers, dataset, hyper, seed=seed)
    except (TrainingDiverged, NonFiniteError) as exc:
        for partial in (model_path, trace_path):
            partial.unlink(missing_ok=True)
        raise CliError("training", str(exc))

    storage.save_model(model_path, trained)
    storage.save_trace(trace_path, trained.trace)
    print(f"trained {algo} model (input dim {2 * l}) -> {model_path}")
    return 0


def cmd_simulate(args) -> int:
    model = storage.load_model(args.model)
    sources = _gather_logs(args.sources)
    for i, src in enumerate(sources):
        if len(src) < model.l:
            raise CliError(
                "input",
                f"source log {i} has {len(src)} pairs, model needs l={model.l}",
            )
    duration = args.duration if args.duration is not None else len(sources[0]) - 1
    steps = duration + 1 - model.l
    if steps < 1:
        raise CliError("usage", f"duration {duration} leaves no steps beyond l={model.l}", code=2)

    controller = LaneKeepingController(args.x)
    oracle = model.oracle(deterministic=args.deterministic)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    for run in range(args.runs):
        source = sources[run % len(sources)]
        sigma0 = extract_sigma0(source, model.l)
        traj = rollout(oracle, controller, sigma0, steps=steps, seed=exp.stable_seed(seed, "sim", run))
        storage.save_trajectory(out / f"sim_{run:03d}.csv", traj)
    print(f"wrote {args.runs} simulated logs of {duration + 1} pairs to {out}")
    return 0


def cmd_verify(args) -> int:
    real_logs = _gather_logs([args.real])
    virtual_logs = _gather_logs([args.virtual])
    kv = storage.read_keyvalues(args.config) if args.config else {}
    band = BandSpec(
        center=float(kv.get("band_center", 50.0)),
        half_width=float(kv.get("band_half_width", kv.get("half_width", 10.0))),
    )
    report = verification_accuracy(real_logs, virtual_logs, band=band)
    out = Path(args.out or "report.csv")
    if out.is_dir():
        out = out / "report.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    storage.save_report(out, report, band)
    print(f"acc = {report.acc:.4f} ({report.n_real} real vs {report.n_virtual} virtual runs) -> {out}")
    return 0


def cmd_experiment(args) -> int:
    kv = _require_config(args.config)
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    plan = exp.plan_from_keyvalues(kv)
    out = Path(args.out or "experiment")
    summary = exp.run_experiment(plan, out, jobs=args.jobs)
    print(f"summary -> {summary}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simtwin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--seed", type=int, help="root random seed (overrides config)")
        p.add_argument("--out", help="output directory or file")

    p = sub.add_parser("collect", help="run field tests of the synthetic world and save logs")
    common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train an environment model from logs")
    common(p)
    p.add_argument("--algorithm", required=True, help="BC, GAIL, or BCxGAIL")
    p.add_argument("logs", nargs="+", help="trajectory CSVs or directories of them")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run a trained model in closed loop")
    common(p)
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--x", type=float, required=True, help="controller version to simulate")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--duration", type=int, help="ticks per run (default: match sources)")
    p.add_argument("--deterministic", action="store_true", help="force mean predictions")
    p.add_argument("sources", nargs="+", help="logs providing the initial windows")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="compare real and virtual verification results")
    common(p)
    p.add_argument("--real", required=True, help="directory of real logs")
    p.add_argument("--virtual", required=True, help="directory of simulated logs")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="run a full train/verify grid from a plan file")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel cell workers")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, DataError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NonFiniteError) as exc:
        print(f"error: training: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
