"""Driving-quality metrics, requirement evaluation, and verification accuracy.

A trajectory's states are partitioned into maximal runs relative to a lane
center band: inside it (steady), above it (overshoot), below it (undershoot).
Eight metrics summarize the partition, each one normalized against its
analytic extreme to give a requirement value in [0, 1].  The accuracy of a
virtual environment model is one minus the mean absolute difference between
the per-requirement means of real and simulated runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, DataError, HistoryWindow, Trajectory

METRIC_NAMES = ("sc", "sd_sum", "oc", "oa_sum", "od_sum", "uc", "ua_sum", "ud_sum")


@dataclass(frozen=True)
class BandSpec:
    """Lane-center band; states exactly on a threshold count as inside."""

    center: float = 50.0
    half_width: float = 10.0

    def __post_init__(self):
        if not 0 < self.half_width < 50:
            raise ConfigurationError("half_width must be in (0, 50)")

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width


@dataclass(frozen=True)
class DrivingMetrics:
    sc: int  # steady-state episode count
    sd_sum: int  # total steady ticks
    oc: int  # overshoot episode count
    oa_sum: float  # summed overshoot peak amplitudes
    od_sum: int  # total overshoot ticks
    uc: int  # undershoot episode count
    ua_sum: float  # summed undershoot peak amplitudes
    ud_sum: int  # total undershoot ticks

    def value(self, name: str) -> float:
        return float(getattr(self, name))


def compute_metrics(traj: Trajectory, band: BandSpec | None = None) -> DrivingMetrics:
    """Partition the states into maximal steady/overshoot/undershoot runs."""
    band = band or BandSpec()
    states = traj.states
    cat = np.where(states > band.upper, 1, np.where(states < band.lower, -1, 0))

    sc = oc = uc = 0
    sd = od = ud = 0
    oa = ua = 0.0
    i = 0
    n = len(states)
    while i < n:
        j = i + 1
        while j < n and cat[j] == cat[i]:
            j += 1
        length = j - i
        segment = states[i:j]
        if cat[i] == 0:
            sc += 1
            sd += length
        elif cat[i] == 1:
            oc += 1
            od += length
            oa += float(segment.max() - band.upper)
        else:
            uc += 1
            ud += length
            ua += float(band.lower - segment.min())
        i = j
    return DrivingMetrics(sc, sd, oc, oa, od, uc, ua, ud)


@dataclass(frozen=True)
class Requirement:
    metric: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.metric not in METRIC_NAMES:
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if not self.lo < self.hi:
            raise ConfigurationError("requirement bounds must satisfy lo < hi")


@dataclass(frozen=True)
class RequirementSet:
    """The eight goal requirements with their normalization bounds."""

    requirements: tuple[Requirement, ...]

    @classmethod
    def defaults(cls, n_ticks: int) -> "RequirementSet":
        """Analytic extremes for a trajectory of n_ticks states.

        Episode counts can reach ceil(n/2) + 1, durations n, and summed
        amplitudes 50 per tick (the farthest a state can sit from either
        threshold, up to band placement).
        """
        if n_ticks < 1:
            raise ConfigurationError("n_ticks must be >= 1")
        count_hi = math.ceil(n_ticks / 2) + 1
        reqs = []
        for name in METRIC_NAMES:
            if name in ("sc", "oc", "uc"):
                hi = float(count_hi)
            elif name in ("sd_sum", "od_sum", "ud_sum"):
                hi = float(n_ticks)
            else:
                hi = 50.0 * n_ticks
            reqs.append(Requirement(name, 0.0, hi))
        return cls(tuple(reqs))

    def __len__(self) -> int:
        return len(self.requirements)


def evaluate_requirements(metrics: DrivingMetrics, reqs: RequirementSet) -> np.ndarray:
    """Normalized verification value per requirement, clamped to [0, 1]."""
    out = np.empty(len(reqs))
    for i, r in enumerate(reqs.requirements):
        out[i] = min(max((metrics.value(r.metric) - r.lo) / (r.hi - r.lo), 0.0), 1.0)
    return out


@dataclass(frozen=True)
class VerificationReport:
    requirement_names: tuple[str, ...]
    psi_real: np.ndarray
    psi_virtual: np.ndarray
    abs_diff: np.ndarray
    acc: float
    n_real: int
    n_virtual: int


def verification_accuracy(
    real_logs: list[Trajectory],
    virtual_logs: list[Trajectory],
    reqs: RequirementSet | None = None,
    band: BandSpec | None = None,
) -> VerificationReport:
    """Accuracy of the virtual runs' goal verification against the real runs'.

    Per requirement, the normalized value is averaged over each set of logs;
    the accuracy is one minus the mean absolute difference of those averages.
    All logs must share one duration so the normalization bounds agree.
    """
    if not real_logs or not virtual_logs:
        raise DataError("both real and virtual log sets must be non-empty")
    lengths = {len(t) for t in real_logs} | {len(t) for t in virtual_logs}
    if len(lengths) != 1:
        raise DataError(f"logs have mixed lengths {sorted(lengths)}")
    n_ticks = lengths.pop()

    band = band or BandSpec()
    reqs = reqs or RequirementSet.defaults(n_ticks)

    def mean_psi(logs: list[Trajectory]) -> np.ndarray:
        vals = [evaluate_requirements(compute_metrics(t, band), reqs) for t in logs]
        return np.mean(vals, axis=0)

    psi_r = mean_psi(real_logs)
    psi_v = mean_psi(virtual_logs)
    diff = np.abs(psi_r - psi_v)
    return VerificationReport(
        requirement_names=tuple(r.metric for r in reqs.requirements),
        psi_real=psi_r,
        psi_virtual=psi_v,
        abs_diff=diff,
        acc=float(1.0 - diff.mean()),
        n_real=len(real_logs),
        n_virtual=len(virtual_logs),
    )


class RandomOracle:
    """Baseline environment: a fresh uniform state in [0, 100] every tick.

    Ignores the history window entirely, so it reacts to nothing the
    controller does.
    """

    deterministic = False
    window_len = None

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)

    def reset(self, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def step(self, window: HistoryWindow) -> float:
        return float(self._rng.uniform(0.0, 100.0))


def random_baseline(seed: int = 0) -> RandomOracle:
    return RandomOracle(seed)
