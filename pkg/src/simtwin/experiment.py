"""Experiment orchestration: train/verify grids over algorithms, log counts, versions.

A plan names a use case, controller versions for training and verification,
and the grid to sweep.  Every cell (algorithm, log count, repetition) trains
one model, simulates it against each verification version, and records one
accuracy per version.  Cells are independent, resumable through checksummed
artifacts, and all randomness flows from one root seed through a stable
derivation (root -> purpose -> coordinates), so any artifact can be recomputed
in isolation and a rerun is byte-identical.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError, NormSpec, Trajectory, extract_sigma0, make_dataset, rollout
from .laneworld import ControllerConfig, LaneKeepingController, collect_fot_logs
from .nets import GaussianHead
from .trainers import (
    BcHyper,
    GailHyper,
    TrainedModel,
    make_critic,
    make_discriminator,
    make_env_model,
    train_bc,
    train_bcxgail,
    train_gail,
)
from .verification import BandSpec, RandomOracle, verification_accuracy

log = logging.getLogger(__name__)

USE_CASES = ("TOVK", "TMVK", "TMVU")
ALGORITHMS = ("BC", "GAIL", "BCXGAIL", "RANDOM")
DISPLAY_NAMES = {"BC": "BC", "GAIL": "GAIL", "BCXGAIL": "BCxGAIL", "RANDOM": "RANDOM"}


def stable_seed(root: int, *parts) -> int:
    """Deterministic 63-bit seed derived from the root and a label path."""
    text = str(root) + "/" + "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class ExperimentPlan:
    use_case: str
    training_versions: tuple[float, ...]
    verification_versions: tuple[float, ...]
    log_counts: tuple[int, ...] = tuple(range(3, 31, 3))
    algorithms: tuple[str, ...] = ("BC", "GAIL", "BCXGAIL", "RANDOM")
    repetitions: int = 30
    simulation_runs: int = 100
    seed: int = 0
    duration: int = 25
    noise_sigma: float = 0.5
    l: int = 10
    train_pool: int = 30
    eval_pool: int = 100
    epochs: int = 300
    epoch_schedule: dict = field(default_factory=dict)  # log_count -> epochs
    band_half_width: float = 10.0

    def __post_init__(self):
        if self.use_case not in USE_CASES:
            raise ConfigurationError(f"use_case must be one of {USE_CASES}")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigurationError(f"unknown algorithm {name!r}")
        train = set(self.training_versions)
        verify = set(self.verification_versions)
        if not train or not verify:
            raise ConfigurationError("training and verification versions must be non-empty")
        if self.use_case == "TOVK":
            if not (len(train) == 1 and train == verify):
                raise ConfigurationError("TOVK needs one version used for both training and verification")
        elif self.use_case == "TMVK":
            if len(train) < 2 or not verify <= train:
                raise ConfigurationError("TMVK needs multiple training versions covering the verified ones")
        else:  # TMVU
            if train & verify:
                raise ConfigurationError("TMVU verification versions must be unseen during training")
        if self.repetitions < 1 or self.simulation_runs < 1:
            raise ConfigurationError("repetitions and simulation_runs must be >= 1")
        if any(n < 1 for n in self.log_counts):
            raise ConfigurationError("log_counts must be positive")
        if max(self.log_counts, default=0) > self.train_pool:
            raise ConfigurationError("log_counts cannot exceed the training pool size")
        if self.duration < self.l:
            raise ConfigurationError("duration must be at least the history length")

    def epochs_for(self, log_count: int) -> int:
        return int(self.epoch_schedule.get(log_count, self.epochs))


def plan_from_keyvalues(kv: dict[str, str]) -> ExperimentPlan:
    """Build a plan from a parsed key-value config file."""

    def floats(key: str) -> tuple[float, ...]:
        return tuple(float(v) for v in kv[key].split(",") if v.strip())

    def ints(key: str, default) -> tuple[int, ...]:
        if key not in kv:
            return default
        return tuple(int(v) for v in kv[key].split(",") if v.strip())

    schedule: dict[int, int] = {}
    if kv.get("epoch_schedule"):
        for pair in kv["epoch_schedule"].split(","):
            count, epochs = pair.split(":")
            schedule[int(count)] = int(epochs)

    algorithms = tuple(
        a.strip().upper() for a in kv.get("algorithms", "BC,GAIL,BCXGAIL,RANDOM").split(",") if a.strip()
    )
    return ExperimentPlan(
        use_case=kv["use_case"].strip().upper(),
        training_versions=floats("training_versions"),
        verification_versions=floats("verification_versions"),
        log_counts=ints("log_counts", tuple(range(3, 31, 3))),
        algorithms=algorithms,
        repetitions=int(kv.get("repetitions", 30)),
        simulation_runs=int(kv.get("simulation_runs", 100)),
        seed=int(kv.get("seed", 0)),
        duration=int(kv.get("T", kv.get("duration", 25))),
        noise_sigma=float(kv.get("noise_sigma", kv.get("noise", 0.5))),
        l=int(kv.get("l", 10)),
        train_pool=int(kv.get("train_pool", 30)),
        eval_pool=int(kv.get("eval_pool", 100)),
        epochs=int(kv.get("epochs", 300)),
        epoch_schedule=schedule,
        band_half_width=float(kv.get("band_half_width", 10.0)),
    )


def training_pool(plan: ExperimentPlan, version: float) -> list[Trajectory]:
    return collect_fot_logs(
        ControllerConfig(version),
        plan.train_pool,
        plan.duration,
        plan.noise_sigma,
        base_seed=stable_seed(plan.seed, "train-pool", version),
    )


def evaluation_pool(plan: ExperimentPlan, version: float) -> list[Trajectory]:
    return collect_fot_logs(
        ControllerConfig(version),
        plan.eval_pool,
        plan.duration,
        plan.noise_sigma,
        base_seed=stable_seed(plan.seed, "eval-pool", version),
    )


def _train_cell_model(plan: ExperimentPlan, algo: str, n: int, rep: int) -> TrainedModel:
    select_rng = np.random.default_rng(stable_seed(plan.seed, "select", n, rep))
    logs: list[Trajectory] = []
    controllers: dict[int, LaneKeepingController] = {}
    for version in plan.training_versions:
        pool = training_pool(plan, version)
        picks = select_rng.choice(len(pool), size=n, replace=False)
        for i in sorted(picks):
            controllers[len(logs)] = LaneKeepingController(version)
            logs.append(pool[int(i)])
    dataset = make_dataset(logs, plan.l, NormSpec())

    init_seed = stable_seed(plan.seed, "init", algo, n, rep)
    train_seed = stable_seed(plan.seed, "train", algo, n, rep)
    epochs = plan.epochs_for(n)
    if algo == "BC":
        return train_bc(
            make_env_model(plan.l, init_seed), dataset,
            BcHyper(epochs=epochs), seed=train_seed,
        )
    hyper = GailHyper(epochs=epochs)
    head = GaussianHead(make_env_model(plan.l, init_seed))
    disc = make_discriminator(plan.l, stable_seed(plan.seed, "init-disc", algo, n, rep))
    critic = make_critic(plan.l, stable_seed(plan.seed, "init-critic", algo, n, rep))
    trainer = train_gail if algo == "GAIL" else train_bcxgail
    return trainer(head, disc, critic, controllers, dataset, hyper, seed=train_seed)


def simulate_version(
    plan: ExperimentPlan,
    oracle,
    version: float,
    eval_logs: list[Trajectory],
    seed_parts: tuple,
) -> list[Trajectory]:
    controller = LaneKeepingController(version)
    sims = []
    for run in range(plan.simulation_runs):
        source = eval_logs[run % len(eval_logs)]
        sigma0 = extract_sigma0(source, plan.l)
        sims.append(
            rollout(
                oracle,
                controller,
                sigma0,
                steps=len(source) - plan.l,
                seed=stable_seed(plan.seed, "sim", *seed_parts, version, run),
            )
        )
    return sims


def run_cell(plan: ExperimentPlan, algo: str, n: int, rep: int) -> list[tuple[float, float]]:
    """One grid cell: train (unless RANDOM), simulate each version, return (x, acc)."""
    if algo == "RANDOM":
        oracle = RandomOracle()
    else:
        oracle = _train_cell_model(plan, algo, n, rep).oracle()

    band = BandSpec(half_width=plan.band_half_width)
    results = []
    for version in plan.verification_versions:
        eval_logs = evaluation_pool(plan, version)
        sims = simulate_version(plan, oracle, version, eval_logs, (algo, n, rep))
        report = verification_accuracy(eval_logs, sims, band=band)
        results.append((version, report.acc))
    return results


def _cell_path(out_dir: Path, algo: str, n: int, rep: int) -> Path:
    return out_dir / "cells" / f"{algo.lower()}_n{n:02d}_r{rep:02d}.csv"


def _write_cell(path: Path, rows: list[tuple[float, float]]) -> None:
    body = "x,acc\n" + "".join(f"{x!r},{acc!r}\n" for x, acc in rows)
    digest = hashlib.sha256(body.encode()).hexdigest()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(body + f"# sha256={digest}\n")


def _read_cell(path: Path) -> list[tuple[float, float]] | None:
    """Parse a cell artifact; None when missing, corrupt, or checksum-invalid."""
    if not path.exists():
        return None
    text = path.read_text()
    marker = "# sha256="
    head, sep, tail = text.rpartition(marker)
    if not sep or hashlib.sha256(head.encode()).hexdigest() != tail.strip():
        return None
    lines = head.splitlines()
    if not lines or lines[0] != "x,acc":
        return None
    rows = []
    for line in lines[1:]:
        x_str, acc_str = line.split(",")
        rows.append((float(x_str), float(acc_str)))
    return rows


def _cell_task(args) -> tuple[str, int, int, list[tuple[float, float]]]:
    plan, algo, n, rep = args
    return algo, n, rep, run_cell(plan, algo, n, rep)


def run_experiment(plan: ExperimentPlan, out_dir: str | Path, jobs: int = 1) -> Path:
    """Execute the whole grid, resuming finished cells, and write summary.csv.

    The summary is plot-ready: algorithm,log_count,x,acc_mean,acc_std with the
    standard deviation taken over repetitions (population convention).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = [
        (algo, n, rep)
        for algo in plan.algorithms
        for n in plan.log_counts
        for rep in range(plan.repetitions)
    ]
    done: dict[tuple[str, int, int], list[tuple[float, float]]] = {}
    pending = []
    for algo, n, rep in cells:
        cached = _read_cell(_cell_path(out_dir, algo, n, rep))
        if cached is not None:
            done[(algo, n, rep)] = cached
        else:
            pending.append((algo, n, rep))
    log.info("experiment: %d cells (%d cached, %d to run)", len(cells), len(done), len(pending))

    if jobs > 1 and pending:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for algo, n, rep, rows in pool.map(
                _cell_task, [(plan, algo, n, rep) for algo, n, rep in pending]
            ):
                _write_cell(_cell_path(out_dir, algo, n, rep), rows)
                done[(algo, n, rep)] = rows
                log.info("cell %s n=%d rep=%d done", algo, n, rep)
    else:
        for algo, n, rep in pending:
            rows = run_cell(plan, algo, n, rep)
            _write_cell(_cell_path(out_dir, algo, n, rep), rows)
            done[(algo, n, rep)] = rows
            log.info("cell %s n=%d rep=%d done", algo, n, rep)

    lines = ["algorithm,log_count,x,acc_mean,acc_std"]
    for algo in plan.algorithms:
        for n in plan.log_counts:
            per_rep = [dict(done[(algo, n, rep)]) for rep in range(plan.repetitions)]
            for version in plan.verification_versions:
                accs = np.array([r[version] for r in per_rep])
                lines.append(
                    f"{DISPLAY_NAMES[algo]},{n},{version!r},"
                    f"{float(accs.mean())!r},{float(accs.std())!r}"
                )
    summary = out_dir / "summary.csv"
    summary.write_text("\n".join(lines) + "\n")
    return summary


def summary_rows(path: str | Path) -> list[dict]:
    """Parse a summary.csv back into dicts for programmatic use."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        cells = line.split(",")
        rows.append(
            {
                "algorithm": cells[0],
                "log_count": int(cells[1]),
                "x": float(cells[2]),
                "acc_mean": float(cells[3]),
                "acc_std": float(cells[4]),
            }
        )
    assert header[0] == "algorithm"
    return rows
