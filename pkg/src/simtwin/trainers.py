"""Environment-model generation: behavior cloning, adversarial imitation, and both combined.

All three trainers consume a sliding-window :class:`~simtwin.core.Dataset` and
produce a :class:`TrainedModel` that satisfies the TransitionOracle contract,
so the verification pipeline treats them interchangeably.

Behavior cloning is plain supervised regression: per epoch, per source log,
one full-batch mean-squared-error Adam step.  The adversarial trainer keeps a
discriminator that scores (window, next state) pairs as real or model-made;
its fake set mixes one-step predictions on the logged windows with pairs from
recent simulation traces, so the score stays grounded on the windows the
closed loop actually visits.  The model earns -log(1 - d) for fooling the
discriminator and updates by PPO (clipped surrogate over GAE advantages) on
closed-loop rollouts seeded from each log's first window.  The combined
trainer adds the behavior-cloning step after each PPO update so the model
learns from both the logged data and its own simulations.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import (
    ConfigurationError,
    Controller,
    Dataset,
    HistoryWindow,
    NormSpec,
    clamp_action,
    clamp_state,
)
from .nets import (
    AdamState,
    GaussianHead,
    Mlp,
    ScalarAdam,
    adam_step,
    backward_from_trace,
    clip_grad_norm,
    forward,
    forward_trace,
    mlp,
)

HIDDEN_WIDTH = 256


class TrainingDiverged(RuntimeError):
    """Training hit non-finite losses or gradients and was aborted."""


@dataclass(frozen=True)
class BcHyper:
    epochs: int = 300
    learning_rate: float = 5e-5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass(frozen=True)
class GailHyper:
    epochs: int = 300
    model_lr: float = 5e-5
    disc_lr: float = 0.01
    ppo_policy_iters: int = 10
    ppo_disc_iters: int = 10
    gamma: float = 0.99
    lam: float = 0.95
    clip_epsilon: float = 0.2
    critic_lr: float = 1e-3
    log_std_lr: float = 1e-3
    trace_history: int = 1  # past rollouts per log kept as discriminator fakes
    max_grad_norm: float = 5.0  # PPO global clip, sized to trim only outlier steps
    log_std_min: float = -4.0  # keeps exploration alive once sigma reaches noise scale

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must be in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ConfigurationError("lambda must be in [0, 1]")
        if self.clip_epsilon <= 0:
            raise ConfigurationError("clip_epsilon must be positive")
        if self.trace_history < 0:
            raise ConfigurationError("trace_history must be >= 0")
        if self.max_grad_norm <= 0:
            raise ConfigurationError("max_grad_norm must be positive")
        for name in ("model_lr", "disc_lr", "critic_lr", "log_std_lr"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


def make_env_model(l: int, seed: int = 0, dtype=np.float32) -> Mlp:
    """Environment model: 2l inputs, two 256 tanh hidden layers, tanh output."""
    return mlp([2 * l, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], ["tanh", "tanh", "tanh"], seed, dtype)


def make_discriminator(l: int, seed: int = 0, dtype=np.float32) -> Mlp:
    """Discriminator: window plus predicted state in, sigmoid authenticity score out."""
    return mlp([2 * l + 1, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], ["relu", "relu", "sigmoid"], seed, dtype)


def make_critic(l: int, seed: int = 0, dtype=np.float32) -> Mlp:
    """Value network for PPO; env-model shape with an unbounded linear head."""
    return mlp([2 * l, HIDDEN_WIDTH, HIDDEN_WIDTH, 1], ["tanh", "tanh", "linear"], seed, dtype)


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    loss_bc: float | None = None
    loss_gail: float | None = None
    loss_disc: float | None = None
    mean_reward: float | None = None


@dataclass
class TrainedModel:
    """A trained transition function plus everything needed to run it."""

    mean_net: Mlp
    log_std: float | None  # None for a deterministic (behavior-cloned) model
    norm: NormSpec
    l: int
    provenance: dict
    trace: list[TraceRow] = field(default_factory=list)

    def oracle(self, deterministic: bool = False) -> "ModelOracle":
        return ModelOracle(self, deterministic=deterministic)


class ModelOracle:
    """TransitionOracle view of a trained model.

    A stochastic model samples around its predicted mean with its learned
    standard deviation; `deterministic=True` forces the mean (useful for
    debugging and byte-stable replay).
    """

    def __init__(self, model: TrainedModel, deterministic: bool = False):
        self.model = model
        self.window_len = model.l
        self._force_mean = deterministic or model.log_std is None
        self._rng = np.random.default_rng(0)

    @property
    def deterministic(self) -> bool:
        return self._force_mean

    def reset(self, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def step(self, window: HistoryWindow) -> float:
        x = window.as_vector(self.model.norm)
        y = float(forward(self.model.mean_net, x)[0])
        if not self._force_mean:
            y += math.exp(self.model.log_std) * float(self._rng.standard_normal())
        return float(self.model.norm.denorm_state(y))


def _log_groups(dataset: Dataset) -> list[tuple[int, np.ndarray, np.ndarray]]:
    return [(i, *dataset.log_group(i)) for i in dataset.source_log_ids]


def _controller_for(controller, log_id: int) -> Controller:
    # logs from different controller versions are rolled out under their own
    # version; a plain Controller applies to every log
    if isinstance(controller, Mapping):
        return controller[log_id]
    return controller


def train_bc(net: Mlp, dataset: Dataset, hyper: BcHyper | None = None, seed: int = 0) -> TrainedModel:
    """Supervised regression from windows to next states, one Adam step per log per epoch."""
    hyper = hyper or BcHyper()
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    groups = _log_groups(dataset)
    state = AdamState.for_net(net, hyper.learning_rate)

    rows = []
    for epoch in range(hyper.epochs):
        losses = []
        for _, x, y in groups:
            trace = forward_trace(net, x)
            err = trace[-1][:, 0] - y
            loss = float(np.mean(err * err))
            if not math.isfinite(loss):
                raise TrainingDiverged(f"behavior cloning loss non-finite at epoch {epoch}")
            grads = backward_from_trace(net, trace, (2.0 * err / len(y))[:, None])
            adam_step(net, grads, state)
            losses.append(loss)
        rows.append(TraceRow(epoch=epoch, loss_bc=float(np.mean(losses))))

    return TrainedModel(
        mean_net=net,
        log_std=None,
        norm=dataset.norm,
        l=dataset.l,
        provenance={
            "algorithm": "bc",
            "seed": seed,
            "epochs": hyper.epochs,
            "source_logs": dataset.source_log_ids,
        },
        trace=rows,
    )


def gail_reward(disc: Mlp, window_vec: np.ndarray, predicted: float) -> float:
    """Model reward for one predicted transition: -log(1 - d + 1e-8).

    The more expert-like the discriminator finds the pair, the larger the
    reward; a pair judged certainly fake earns about zero.
    """
    d = float(forward(disc, np.append(window_vec, predicted))[0])
    return -math.log(1.0 - d + 1e-8)


def discriminator_update(
    disc: Mlp,
    real: tuple[np.ndarray, np.ndarray],
    fake: tuple[np.ndarray, np.ndarray],
    lr: float = 0.01,
    iters: int = 10,
    state: AdamState | None = None,
) -> float:
    """`iters` Adam steps of binary cross-entropy, real pairs 1 and fake pairs 0.

    Passing a persistent AdamState keeps optimizer moments across calls, which
    the adversarial trainer does; otherwise a fresh state is used.  Returns
    the loss after the final step.
    """
    (x_real, y_real), (x_fake, y_fake) = real, fake
    if len(y_real) == 0 or len(y_fake) == 0:
        raise ConfigurationError("real and fake sets must both be non-empty")
    batch = np.vstack(
        [
            np.column_stack([x_real, np.asarray(y_real, dtype=float)]),
            np.column_stack([x_fake, np.asarray(y_fake, dtype=float)]),
        ]
    )
    labels = np.concatenate([np.ones(len(y_real)), np.zeros(len(y_fake))])
    n = len(labels)
    state = state or AdamState.for_net(disc, lr)

    def bce(d: np.ndarray) -> float:
        d = np.clip(d.astype(np.float64), 1e-12, 1.0 - 1e-12)
        return float(-np.mean(labels * np.log(d) + (1.0 - labels) * np.log(1.0 - d)))

    for _ in range(iters):
        trace = forward_trace(disc, batch)
        d = trace[-1][:, 0]
        loss = bce(d)
        if not math.isfinite(loss):
            raise TrainingDiverged("discriminator loss non-finite")
        # dBCE/dz of the fused sigmoid + cross-entropy, exact even saturated
        gout = ((d - labels) / n)[:, None]
        adam_step(disc, backward_from_trace(disc, trace, gout, pre_activation=True), state)
    return bce(forward(disc, batch)[:, 0])


def compute_gae(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation with a zero tail beyond the horizon."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(v) != len(r) + 1:
        raise ConfigurationError(f"need len(values) == len(rewards) + 1, got {len(v)} vs {len(r)}")
    adv = np.empty(len(r))
    tail = 0.0
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * v[t + 1] - v[t]
        tail = delta + gamma * lam * tail
        adv[t] = tail
    return adv, adv + v[:-1]


@dataclass
class RolloutBuffer:
    """Per-tick records of one simulated closed-loop run for PPO."""

    windows: np.ndarray  # (n, 2l) model inputs
    samples: np.ndarray  # (n,) sampled normalized next states
    log_probs: np.ndarray  # (n,) under the sampling-time policy
    rewards: np.ndarray  # (n,) discriminator rewards
    values: np.ndarray  # (n+1,) critic estimates, terminal window included
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.samples)


def collect_gail_rollout(
    model: GaussianHead,
    controller: Controller,
    disc: Mlp,
    critic: Mlp,
    first_window: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
    norm: NormSpec,
) -> RolloutBuffer:
    """Simulate `horizon` ticks from a log's first window, collecting PPO records.

    Each tick samples a next state from the model, scores it with the
    discriminator, asks the controller for the action it would take on the
    (clamped, denormalized) state, and slides the window with the sampled
    state and that action.  Advantages are left unset for compute_gae.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1 (log too short for its window length)")
    w = np.asarray(first_window, dtype=float).copy()
    dim = len(w)

    windows = np.empty((horizon, dim))
    samples = np.empty(horizon)
    log_probs = np.empty(horizon)
    rewards = np.empty(horizon)
    values = np.empty(horizon + 1)

    std = model.std
    for t in range(horizon):
        windows[t] = w
        mean = float(forward(model.mean_net, w)[0])
        y = mean + std * float(rng.standard_normal())
        samples[t] = y
        log_probs[t] = GaussianHead.log_prob_parts(mean, model.log_std, y)
        values[t] = float(forward(critic, w)[0])
        rewards[t] = gail_reward(disc, w, y)
        try:
            action = controller.decide(clamp_state(float(norm.denorm_state(y))))
        except Exception as exc:
            raise TrainingDiverged(f"controller failed during rollout: {exc}") from exc
        w = np.concatenate([w[2:], [y, norm.norm_action(clamp_action(action))]])
    values[horizon] = float(forward(critic, w)[0])
    return RolloutBuffer(windows, samples, log_probs, rewards, values)


def ppo_update(
    model: GaussianHead,
    critic: Mlp,
    buffer: RolloutBuffer,
    hyper: GailHyper,
    model_state: AdamState,
    log_std_state: ScalarAdam,
    critic_state: AdamState,
) -> tuple[float, float, int]:
    """Clipped-surrogate updates of the model and squared-error updates of the critic.

    Advantages are normalized over the buffer (skipped below two samples or at
    zero variance).  Iterations whose probability ratio overflows
    (|log ratio| > 20) are skipped and counted in the returned flag.
    """
    if buffer.advantages is None or buffer.returns is None:
        raise ConfigurationError("buffer advantages must be populated (run compute_gae)")
    adv = buffer.advantages
    if len(adv) >= 2:
        spread = float(adv.std())
        if spread > 1e-12:
            adv = (adv - adv.mean()) / spread

    n = len(buffer)
    policy_loss = math.nan
    value_loss = math.nan
    skipped = 0
    for _ in range(hyper.ppo_policy_iters):
        trace = forward_trace(model.mean_net, buffer.windows)
        mean = trace[-1][:, 0]
        sigma = model.std
        z = (buffer.samples - mean) / sigma
        log_prob = -0.5 * z * z - model.log_std - 0.5 * math.log(2.0 * math.pi)
        log_ratio = log_prob - buffer.log_probs
        if float(np.abs(log_ratio).max()) > 20.0:
            skipped += 1
            continue
        ratio = np.exp(log_ratio)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - hyper.clip_epsilon, 1.0 + hyper.clip_epsilon) * adv
        policy_loss = float(-np.minimum(unclipped, clipped).mean())

        active = unclipped <= clipped
        d_log_prob = -(adv * ratio * active) / n
        d_mean = d_log_prob * (z / sigma)
        d_log_std = float(np.sum(d_log_prob * (z * z - 1.0)))
        grads = backward_from_trace(model.mean_net, trace, d_mean[:, None])
        grads, factor = clip_grad_norm(grads, hyper.max_grad_norm, extra=d_log_std)
        adam_step(model.mean_net, grads, model_state)
        model.log_std = max(
            log_std_state.step(model.log_std, d_log_std * factor), hyper.log_std_min
        )

        trace_c = forward_trace(critic, buffer.windows)
        v = trace_c[-1][:, 0]
        v_err = v - buffer.returns
        value_loss = float(np.mean(v_err * v_err))
        critic_grads, _ = clip_grad_norm(
            backward_from_trace(critic, trace_c, (2.0 * v_err / n)[:, None]),
            hyper.max_grad_norm,
        )
        adam_step(critic, critic_grads, critic_state)
    return policy_loss, value_loss, skipped


def _train_adversarial(
    model: GaussianHead,
    disc: Mlp,
    critic: Mlp,
    controller: Controller,
    dataset: Dataset,
    hyper: GailHyper,
    seed: int,
    use_bc: bool,
    use_gail: bool = True,
    algorithm: str = "gail",
) -> TrainedModel:
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    if use_gail and controller is None:
        raise ConfigurationError("adversarial training needs the controller under analysis")
    groups = _log_groups(dataset)

    rng = np.random.default_rng(seed)
    model_state = AdamState.for_net(model.mean_net, hyper.model_lr)
    # the cloning term keeps its own optimizer moments: PPO gradients run two
    # orders of magnitude larger, and sharing second-moment estimates scales
    # supervised steps down until the term has no effect
    bc_state = AdamState.for_net(model.mean_net, hyper.model_lr) if use_bc else None
    log_std_state = ScalarAdam(hyper.log_std_lr)
    disc_state = AdamState.for_net(disc, hyper.disc_lr)
    critic_state = AdamState.for_net(critic, hyper.critic_lr)

    # fakes for the discriminator combine one-step predictions on the real
    # windows with recent simulation-trace pairs; a discriminator that never
    # sees the windows the closed loop actually visits extrapolates arbitrary
    # scores there and the model learns runaway oscillations chasing them
    trace_cache: dict[int, deque] = {}

    rows = []
    for epoch in range(hyper.epochs):
        disc_losses: list[float] = []
        policy_losses: list[float] = []
        bc_losses: list[float] = []
        reward_means: list[float] = []
        for log_id, x, y in groups:
            if use_gail:
                noise = rng.standard_normal(len(y))
                y_fake = forward(model.mean_net, x)[:, 0] + model.std * noise
                cached = trace_cache.get(log_id)
                if cached:
                    fake = (
                        np.vstack([x] + [w for w, _ in cached]),
                        np.concatenate([y_fake] + [s for _, s in cached]),
                    )
                else:
                    fake = (x, y_fake)
                disc_losses.append(
                    discriminator_update(
                        disc, (x, y), fake,
                        lr=hyper.disc_lr, iters=hyper.ppo_disc_iters, state=disc_state,
                    )
                )
                buffer = collect_gail_rollout(
                    model, _controller_for(controller, log_id), disc, critic,
                    x[0], len(y) - 1, rng, dataset.norm,
                )
                if hyper.trace_history > 0:
                    cache = trace_cache.setdefault(log_id, deque(maxlen=hyper.trace_history))
                    cache.append((buffer.windows, buffer.samples))
                buffer.advantages, buffer.returns = compute_gae(
                    buffer.rewards, buffer.values, hyper.gamma, hyper.lam
                )
                p_loss, _, _ = ppo_update(
                    model, critic, buffer, hyper, model_state, log_std_state, critic_state
                )
                policy_losses.append(p_loss)
                reward_means.append(float(buffer.rewards.mean()))
            if use_bc:
                trace = forward_trace(model.mean_net, x)
                err = trace[-1][:, 0] - y
                bc_loss = float(np.mean(err * err))
                if not math.isfinite(bc_loss):
                    raise TrainingDiverged(f"cloning loss non-finite at epoch {epoch}")
                adam_step(
                    model.mean_net,
                    backward_from_trace(model.mean_net, trace, (2.0 * err / len(y))[:, None]),
                    bc_state,
                )
                bc_losses.append(bc_loss)

        row = TraceRow(
            epoch=epoch,
            loss_bc=float(np.mean(bc_losses)) if bc_losses else None,
            loss_gail=float(np.mean(policy_losses)) if policy_losses else None,
            loss_disc=float(np.mean(disc_losses)) if disc_losses else None,
            mean_reward=float(np.mean(reward_means)) if reward_means else None,
        )
        rows.append(row)
        if use_gail and row.mean_reward is not None and not math.isfinite(row.mean_reward):
            raise TrainingDiverged(f"mean reward non-finite at epoch {epoch}")
        if not (model.mean_net.is_finite() and disc.is_finite() and critic.is_finite()):
            raise TrainingDiverged(f"non-finite parameters at epoch {epoch}")

    return TrainedModel(
        mean_net=model.mean_net,
        log_std=model.log_std,
        norm=dataset.norm,
        l=dataset.l,
        provenance={
            "algorithm": algorithm,
            "seed": seed,
            "epochs": hyper.epochs,
            "source_logs": dataset.source_log_ids,
        },
        trace=rows,
    )


def train_gail(
    model: GaussianHead,
    disc: Mlp,
    critic: Mlp,
    controller: Controller,
    dataset: Dataset,
    hyper: GailHyper | None = None,
    seed: int = 0,
) -> TrainedModel:
    """Adversarial imitation with PPO; see the module docstring for the loop."""
    return _train_adversarial(
        model, disc, critic, controller, dataset, hyper or GailHyper(), seed,
        use_bc=False, algorithm="gail",
    )


def train_bcxgail(
    model: GaussianHead,
    disc: Mlp,
    critic: Mlp,
    controller: Controller,
    dataset: Dataset,
    hyper: GailHyper | None = None,
    seed: int = 0,
) -> TrainedModel:
    """GAIL plus a behavior-cloning step on the mean head after each PPO update."""
    return _train_adversarial(
        model, disc, critic, controller, dataset, hyper or GailHyper(), seed,
        use_bc=True, algorithm="bcxgail",
    )
