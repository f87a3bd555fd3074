"""Closed-loop primitives: trajectories, history windows, rollouts, and datasets.

The world under study is one-dimensional on both sides of the loop: the
environment emits a lane color in [0, 100] (0 darkest, 100 brightest) and the
controller answers with a steering angle in degrees (positive turns right).
Everything downstream (the synthetic world, the learned models, verification)
speaks in terms of the types defined here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

STATE_RANGE = (0.0, 100.0)
ACTION_RANGE = (-90.0, 90.0)


class ConfigurationError(ValueError):
    """An input violates a documented precondition."""


class DataError(ValueError):
    """A log, dataset, or file is malformed or unusable."""


def normalize(value: float | np.ndarray, rng: tuple[float, float]):
    """Affine map from [min, max] onto [-1, +1]; out-of-range inputs clamp first."""
    lo, hi = rng
    if not lo < hi:
        raise ConfigurationError(f"degenerate range {rng!r}")
    v = np.clip(value, lo, hi)
    return (v - lo) / (hi - lo) * 2.0 - 1.0


def denormalize(value: float | np.ndarray, rng: tuple[float, float]):
    """Inverse of :func:`normalize` on in-range values."""
    lo, hi = rng
    if not lo < hi:
        raise ConfigurationError(f"degenerate range {rng!r}")
    return (np.asarray(value) + 1.0) / 2.0 * (hi - lo) + lo


@dataclass(frozen=True)
class NormSpec:
    """Scaling applied to states and actions before they reach a network."""

    state_range: tuple[float, float] = STATE_RANGE
    action_range: tuple[float, float] = ACTION_RANGE

    def __post_init__(self):
        for rng in (self.state_range, self.action_range):
            if not rng[0] < rng[1]:
                raise ConfigurationError(f"degenerate range {rng!r}")

    def norm_state(self, v):
        return normalize(v, self.state_range)

    def denorm_state(self, v):
        return denormalize(v, self.state_range)

    def norm_action(self, v):
        return normalize(v, self.action_range)

    def denorm_action(self, v):
        return denormalize(v, self.action_range)


def clamp_state(value: float) -> float:
    return min(max(float(value), STATE_RANGE[0]), STATE_RANGE[1])


def clamp_action(value: float) -> float:
    return min(max(float(value), ACTION_RANGE[0]), ACTION_RANGE[1])


@dataclass(frozen=True)
class TrajectoryMeta:
    """Run provenance carried alongside the raw (state, action) sequence."""

    controller_x: float | None = None
    seed: int | None = None
    origin: str = "virtual"  # "real" (field test) or "virtual" (simulation)
    clamp_count: int = 0


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1).copy()
    if arr.size == 0:
        raise DataError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Ordered (state, action) pairs recorded from one closed-loop run."""

    states: np.ndarray
    actions: np.ndarray
    tick_rate: float = 25.0
    meta: TrajectoryMeta = field(default_factory=TrajectoryMeta)

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen_array(self.states, "states"))
        object.__setattr__(self, "actions", _frozen_array(self.actions, "actions"))
        if len(self.states) != len(self.actions):
            raise DataError(
                f"state/action length mismatch {len(self.states)} != {len(self.actions)}"
            )
        if self.tick_rate <= 0:
            raise DataError("tick_rate must be positive")
        if self.states.min() < STATE_RANGE[0] or self.states.max() > STATE_RANGE[1]:
            raise DataError("states outside [0, 100]")
        if np.abs(self.actions).max() > ACTION_RANGE[1]:
            raise DataError("actions outside [-90, +90]")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.states.tolist(), self.actions.tolist()))


@dataclass(frozen=True)
class HistoryWindow:
    """The trailing l (state, action) pairs fed to a learned transition model."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen_array(self.states, "states"))
        object.__setattr__(self, "actions", _frozen_array(self.actions, "actions"))
        if len(self.states) != len(self.actions):
            raise DataError("window state/action length mismatch")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def last_action(self) -> float:
        return float(self.actions[-1])

    def as_vector(self, norm: NormSpec) -> np.ndarray:
        """Interleaved normalized encoding [s1, a1, ..., sl, al], oldest first."""
        out = np.empty(2 * len(self.states))
        out[0::2] = norm.norm_state(self.states)
        out[1::2] = norm.norm_action(self.actions)
        return out


class TransitionOracle(Protocol):
    """Anything that can play the environment side of the closed loop."""

    deterministic: bool
    window_len: int | None  # required window length, None accepts any

    def reset(self, seed: int) -> None:
        """Prepare for a fresh reproducible run."""

    def step(self, window: HistoryWindow) -> float:
        """Next environment state given the trailing history."""


class Controller(Protocol):
    def decide(self, state: float) -> float:
        """Pure function from observed state to action."""


def rollout(
    oracle: TransitionOracle,
    controller: Controller,
    init: HistoryWindow,
    steps: int,
    seed: int,
    tick_rate: float = 25.0,
    origin: str = "virtual",
) -> Trajectory:
    """Run the closed loop for `steps` ticks starting from `init`.

    The returned trajectory begins with the pairs of `init` and extends by
    `steps` new pairs.  Each new state comes from the oracle on the current
    window, each new action from the controller on that state, and the window
    slides by one pair per tick.  Oracle outputs outside [0, 100] are clamped
    and counted in the trajectory metadata rather than aborting the run.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    expected = getattr(oracle, "window_len", None)
    if expected is not None and len(init) != expected:
        raise ConfigurationError(
            f"init window length {len(init)} does not match oracle window length {expected}"
        )
    oracle.reset(seed)

    l = len(init)
    states = list(init.states)
    actions = list(init.actions)
    clamps = 0
    for _ in range(steps):
        window = HistoryWindow(states[-l:], actions[-l:])
        s = float(oracle.step(window))
        if not math.isfinite(s):
            raise DataError("oracle produced a non-finite state")
        if s < STATE_RANGE[0] or s > STATE_RANGE[1]:
            s = clamp_state(s)
            clamps += 1
        a = clamp_action(controller.decide(s))
        states.append(s)
        actions.append(a)

    meta = TrajectoryMeta(
        controller_x=getattr(controller, "x", None),
        seed=seed,
        origin=origin,
        clamp_count=clamps,
    )
    return Trajectory(states, actions, tick_rate=tick_rate, meta=meta)


def extract_sigma0(trajectory: Trajectory, l: int) -> HistoryWindow:
    """First l pairs of a log, used to seed a virtual simulation."""
    if l < 1:
        raise ConfigurationError("l must be >= 1")
    if len(trajectory) < l:
        raise DataError(f"log has {len(trajectory)} pairs, needs at least {l}")
    return HistoryWindow(trajectory.states[:l], trajectory.actions[:l])


@dataclass(frozen=True)
class Dataset:
    """Sliding-window training samples pooled from one or more logs.

    Each row of `inputs` is a normalized window encoding (see
    :meth:`HistoryWindow.as_vector`) and the matching entry of `targets` is
    the normalized state that followed it.  Samples stay grouped by their
    source log: `log_ids[i]` indexes into the original log list, and rows of
    one log are contiguous and in time order.
    """

    inputs: np.ndarray  # (n_samples, 2*l)
    targets: np.ndarray  # (n_samples,)
    log_ids: np.ndarray  # (n_samples,) int
    l: int
    norm: NormSpec

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def source_log_ids(self) -> list[int]:
        seen: list[int] = []
        for i in self.log_ids.tolist():
            if i not in seen:
                seen.append(i)
        return seen

    def log_group(self, log_id: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.log_ids == log_id
        return self.inputs[mask], self.targets[mask]


def make_dataset(logs: Sequence[Trajectory], l: int, norm: NormSpec | None = None) -> Dataset:
    """Slide a window of length l over each log to build (window, next state) samples.

    A log with T+1 pairs yields exactly T-l+1 samples.  Logs shorter than l+1
    pairs are skipped with a warning; an empty result is an error.
    """
    if l < 1:
        raise ConfigurationError("l must be >= 1")
    norm = norm or NormSpec()

    inputs: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    ids: list[np.ndarray] = []
    for log_id, traj in enumerate(logs):
        n = len(traj) - l
        if n < 1:
            log.warning(
                "skipping log %d: %d pairs is too short for l=%d", log_id, len(traj), l
            )
            continue
        s_norm = norm.norm_state(traj.states)
        a_norm = norm.norm_action(traj.actions)
        win_s = np.lib.stride_tricks.sliding_window_view(s_norm, l)[:n]
        win_a = np.lib.stride_tricks.sliding_window_view(a_norm, l)[:n]
        x = np.empty((n, 2 * l))
        x[:, 0::2] = win_s
        x[:, 1::2] = win_a
        inputs.append(x)
        targets.append(s_norm[l:])
        ids.append(np.full(n, log_id, dtype=int))

    if not inputs:
        raise DataError(f"no log has the {l + 1} pairs needed for l={l}")
    return Dataset(
        inputs=np.concatenate(inputs),
        targets=np.concatenate(targets),
        log_ids=np.concatenate(ids),
        l=l,
        norm=norm,
    )
