"""Scratch calibration sweep for the acceptance experiment plans (not part of the package)."""
import time

import numpy as np

from simtwin.core import NormSpec, extract_sigma0, make_dataset, rollout
from simtwin.experiment import ExperimentPlan, evaluation_pool, stable_seed, training_pool
from simtwin.laneworld import LaneKeepingController
from simtwin.nets import GaussianHead
from simtwin.trainers import (GailHyper, make_critic, make_discriminator,
                              make_env_model, train_bcxgail, train_gail)
from simtwin.verification import verification_accuracy

plan = ExperimentPlan(
    use_case="TOVK", training_versions=(30.0,), verification_versions=(30.0,),
    log_counts=(3, 30), algorithms=("GAIL",), repetitions=1, seed=20250808,
)
train_logs = training_pool(plan, 30.0)
eval_logs = evaluation_pool(plan, 30.0)
ctl = LaneKeepingController(30.0)


def evaluate(model, tag):
    oracle = model.oracle()
    sims = []
    for run in range(100):
        src = eval_logs[run % 100]
        sims.append(rollout(oracle, ctl, extract_sigma0(src, 10), len(src) - 10,
                            seed=stable_seed(1, tag, run)))
    return verification_accuracy(eval_logs, sims).acc


for algo, trainer in (("GAIL", train_gail), ("BCXGAIL", train_bcxgail)):
    for n, epochs_grid in ((3, (200, 300)), (30, (30, 40))):
        for epochs in epochs_grid:
            accs, stds = [], []
            t0 = time.perf_counter()
            for seed in (0, 1, 2):
                rng = np.random.default_rng(stable_seed(plan.seed, "cal", n, seed))
                picks = sorted(rng.choice(30, size=n, replace=False))
                ds = make_dataset([train_logs[i] for i in picks], 10, NormSpec())
                head = GaussianHead(make_env_model(10, seed=seed))
                m = trainer(head, make_discriminator(10, seed=seed + 50),
                            make_critic(10, seed=seed + 90), ctl, ds,
                            GailHyper(epochs=epochs), seed=seed + 7)
                accs.append(evaluate(m, f"{algo}{n}e{epochs}s{seed}"))
                stds.append(m.log_std)
            dt = (time.perf_counter() - t0) / 3
            print(f"{algo:8s} n={n:2d} ep={epochs:3d}: acc={np.mean(accs):.4f} "
                  f"(min {min(accs):.4f})  log_std={np.mean(stds):+.2f}  {dt:5.1f}s/run",
                  flush=True)
