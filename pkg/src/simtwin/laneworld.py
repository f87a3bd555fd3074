"""Synthetic lane-keeping world used as the ground-truth environment.

A point vehicle drives along a straight lane.  Its hidden state is the
lateral offset p from the lane center (lane-width units, clamped to
[-0.5, +0.5]) and the heading angle theta (radians).  The observable state is
a lane color: 50 at the center, brighter to the right, darker to the left,
with optional Gaussian sensor noise.  Steering right (positive action)
decreases theta, which drives p back toward center, so the loop under the
bang-bang controller below is self-correcting.

All dynamics constants are frozen here and can be exported to a constants
file for the record.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .core import (
    ConfigurationError,
    HistoryWindow,
    Trajectory,
    clamp_state,
    rollout,
)

K_STEER = 0.6  # heading change per degree of steering, per tick
SPEED = 0.05  # lateral distance covered per tick at full sideways heading
COLOR_GAIN = 100.0  # color units per lane-width unit of offset
INIT_P_RANGE = 0.2  # initial offset drawn uniformly from +/- this
DEFAULT_NOISE_SIGMA = 0.5  # color-unit sensor noise
P_LIMIT = 0.5  # |p| never exceeds half a lane width
GRAY = 50.0

CONSTANTS = {
    "k_s": K_STEER,
    "v": SPEED,
    "color_gain": COLOR_GAIN,
    "init_p_range": INIT_P_RANGE,
    "noise_sigma": DEFAULT_NOISE_SIGMA,
    "p_min": -P_LIMIT,
    "p_max": P_LIMIT,
}


@dataclass(frozen=True)
class ControllerConfig:
    """Unit rotation degree of the bang-bang lane keeper."""

    x: float

    def __post_init__(self):
        if self.x <= 0:
            raise ConfigurationError("unit rotation degree x must be positive")


def controller_decide(color: float, cfg: ControllerConfig) -> float:
    """Bang-bang steering: right of center turn right, left turn left, else straight."""
    if color > GRAY:
        return cfg.x
    if color < GRAY:
        return -cfg.x
    return 0.0


class LaneKeepingController:
    """Controller protocol wrapper around :func:`controller_decide`."""

    def __init__(self, x: float):
        self.cfg = ControllerConfig(x)

    @property
    def x(self) -> float:
        return self.cfg.x

    def decide(self, state: float) -> float:
        return controller_decide(state, self.cfg)


@dataclass
class LaneWorld:
    """Hidden vehicle state plus the seeded sensor-noise generator."""

    p: float = 0.0
    theta: float = 0.0
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    rng: np.random.Generator = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if abs(self.p) > P_LIMIT:
            raise ConfigurationError(f"|p| must be <= {P_LIMIT}")
        if self.rng is None:
            self.rng = np.random.default_rng(0)

    def observe(self) -> float:
        """Emit a color for the current offset without advancing the dynamics."""
        noise = self.rng.normal(0.0, self.noise_sigma) if self.noise_sigma > 0 else 0.0
        return clamp_state(GRAY + COLOR_GAIN * self.p + noise)


def oracle_step(world: LaneWorld, last_action: float) -> tuple[LaneWorld, float]:
    """Advance the world one tick under `last_action` and emit the new color.

    theta' = theta - k_s * a * pi/180
    p'     = clamp(p + v * sin(theta'), -0.5, +0.5)
    c      = clamp(50 + 100 * p' + noise, 0, 100)

    The world is mutated in place and returned for convenience.
    """
    world.theta = world.theta - K_STEER * last_action * math.pi / 180.0
    p = world.p + SPEED * math.sin(world.theta)
    world.p = min(max(p, -P_LIMIT), P_LIMIT)
    return world, world.observe()


class LaneOracle:
    """TransitionOracle adapter keeping a LaneWorld as hidden internal state.

    The history window is ignored except for its most recent action.  reset()
    restores the initial vehicle pose and reseeds the sensor noise, so a
    rollout from a given seed is reproducible regardless of prior use.
    """

    window_len = None

    def __init__(self, p0: float = 0.0, theta0: float = 0.0,
                 noise_sigma: float = DEFAULT_NOISE_SIGMA):
        self.p0 = p0
        self.theta0 = theta0
        self.noise_sigma = noise_sigma
        self.world = LaneWorld(p0, theta0, noise_sigma)

    @property
    def deterministic(self) -> bool:
        return self.noise_sigma == 0.0

    def reset(self, seed: int) -> None:
        self.world = LaneWorld(
            self.p0, self.theta0, self.noise_sigma, np.random.default_rng(seed)
        )

    def step(self, window: HistoryWindow) -> float:
        _, color = oracle_step(self.world, window.last_action)
        return color


def collect_fot_logs(
    cfg: ControllerConfig,
    count: int,
    duration: int,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    base_seed: int = 0,
    tick_rate: float = 25.0,
) -> list[Trajectory]:
    """Run `count` field tests of `duration` ticks each and return their logs.

    Each log uses seed base_seed + i: the initial offset is drawn uniformly
    from [-0.2, +0.2], the initial color observed, and the closed loop run
    from there.  Logs are tagged origin="real" and have duration + 1 pairs.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    if duration < 1:
        raise ConfigurationError("duration must be >= 1")

    controller = LaneKeepingController(cfg.x)
    logs = []
    for i in range(count):
        log_seed = base_seed + i
        rng = np.random.default_rng(log_seed)
        p0 = rng.uniform(-INIT_P_RANGE, INIT_P_RANGE)
        noise0 = rng.normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0
        c0 = clamp_state(GRAY + COLOR_GAIN * p0 + noise0)
        a0 = controller.decide(c0)
        run_seed = int(rng.integers(0, 2**63 - 1))

        oracle = LaneOracle(p0, 0.0, noise_sigma)
        traj = rollout(
            oracle,
            controller,
            HistoryWindow([c0], [a0]),
            steps=duration,
            seed=run_seed,
            tick_rate=tick_rate,
            origin="real",
        )
        # rollout records its own seed; re-tag with the log-level one
        meta = traj.meta
        logs.append(
            Trajectory(
                traj.states,
                traj.actions,
                tick_rate=tick_rate,
                meta=type(meta)(
                    controller_x=cfg.x,
                    seed=log_seed,
                    origin="real",
                    clamp_count=meta.clamp_count,
                ),
            )
        )
    return logs
