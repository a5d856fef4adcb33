"""Knob ladders, the factored metric state space and the joint action set."""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

FPS = "throughput_fps"
PSNR = "quality_psnr_db"
POWER = "power_watts"
METRIC_IDS = (FPS, PSNR, POWER)


class InvalidInput(ValueError):
    """Raised when a metric or index violates an operation's precondition."""


def _strictly_increasing(values: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class KnobLadder:
    threads: tuple[int, ...] = tuple(range(1, 13))
    freq: tuple[float, ...] = (1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0)
    qp: tuple[int, ...] = tuple(range(22, 41))

    def __post_init__(self):
        for name in ("threads", "freq", "qp"):
            values = tuple(getattr(self, name))
            object.__setattr__(self, name, values)
            if not values:
                raise InvalidInput(f"{name} ladder is empty")
            if not _strictly_increasing(values):
                raise InvalidInput(f"{name} ladder must be strictly increasing")
        if self.threads[0] < 1:
            raise InvalidInput("thread counts must be >= 1")
        if self.freq[0] <= 0:
            raise InvalidInput("frequencies must be positive")
        if self.qp[0] < 0 or self.qp[-1] > 51:
            raise InvalidInput("QP values must lie in 0..51")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.threads), len(self.freq), len(self.qp)

    def to_dict(self) -> dict:
        return {"threads": list(self.threads), "freq": list(self.freq), "qp": list(self.qp)}


@dataclass(frozen=True)
class KnobSetting:
    threads_idx: int
    freq_idx: int
    qp_idx: int

    def validate(self, ladder: KnobLadder) -> None:
        for idx, size in zip((self.threads_idx, self.freq_idx, self.qp_idx), ladder.sizes):
            if not 0 <= idx < size:
                raise InvalidInput(f"knob index {idx} outside ladder of {size} rungs")

    def values(self, ladder: KnobLadder) -> tuple[int, float, int]:
        """(threads, freq GHz, QP) for this setting."""
        return (ladder.threads[self.threads_idx], ladder.freq[self.freq_idx],
                ladder.qp[self.qp_idx])

    @classmethod
    def nearest(cls, ladder: KnobLadder, threads: float, freq: float, qp: float) -> "KnobSetting":
        def closest(rungs, v):
            return min(range(len(rungs)), key=lambda i: (abs(rungs[i] - v), i))
        return cls(closest(ladder.threads, threads), closest(ladder.freq, freq),
                   closest(ladder.qp, qp))


class Action(NamedTuple):
    d_threads: int
    d_freq: int
    d_qp: int


ACTIONS: tuple[Action, ...] = tuple(
    Action(*d) for d in itertools.product((-1, 0, 1), repeat=3))
N_ACTIONS = len(ACTIONS)
NOOP = ACTIONS.index(Action(0, 0, 0))


def enumerate_actions() -> list[Action]:
    return list(ACTIONS)


def apply_action(knobs: KnobSetting, a: Action, ladder: KnobLadder) -> KnobSetting:
    """Step each knob along its ladder, saturating at both ends."""
    nt, nf, nq = ladder.sizes
    return KnobSetting(
        min(max(knobs.threads_idx + a.d_threads, 0), nt - 1),
        min(max(knobs.freq_idx + a.d_freq, 0), nf - 1),
        min(max(knobs.qp_idx + a.d_qp, 0), nq - 1),
    )


@dataclass(frozen=True)
class SubStateSpec:
    """Half-open bins over one metric.

    Bin 0 is everything below the first edge, bin ``i`` is
    ``[edges[i-1], edges[i])`` and the last bin is open above.
    """

    metric_id: str
    bin_edges: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "bin_edges", tuple(float(e) for e in self.bin_edges))
        if self.metric_id not in METRIC_IDS:
            raise InvalidInput(f"unknown metric {self.metric_id!r}")
        if not self.bin_edges:
            raise InvalidInput("a sub-state needs at least one edge")
        if not _strictly_increasing(self.bin_edges):
            raise InvalidInput("bin edges must be strictly ascending")

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) + 1

    def bin_of(self, value: float) -> int:
        if not math.isfinite(value):
            raise InvalidInput(f"non-finite {self.metric_id} value: {value}")
        return bisect.bisect_right(self.bin_edges, value)

    def bin_bounds(self, b: int) -> tuple[float, float]:
        """Lower/upper bound of bin ``b`` (infinite for the open bins)."""
        lo = -math.inf if b == 0 else self.bin_edges[b - 1]
        hi = math.inf if b == len(self.bin_edges) else self.bin_edges[b]
        return lo, hi


class State(NamedTuple):
    fps_bin: int
    psnr_bin: int
    power_bin: int


def _arange(start: float, stop: float, step: float) -> tuple[float, ...]:
    n = int(round((stop - start) / step))
    return tuple(round(start + i * step, 10) for i in range(n + 1))


def default_specs() -> tuple[SubStateSpec, SubStateSpec, SubStateSpec]:
    return (
        SubStateSpec(FPS, (24.0, 30.0, 40.0)),
        SubStateSpec(PSNR, _arange(34.0, 46.0, 1.0)),
        SubStateSpec(POWER, _arange(20.0, 120.0, 5.0)),
    )


def discretize(fps: float, psnr: float, power: float, specs) -> State:
    by_metric = {s.metric_id: s for s in specs}
    missing = set(METRIC_IDS) - set(by_metric)
    if missing:
        raise InvalidInput(f"specs do not cover {sorted(missing)}")
    return State(by_metric[FPS].bin_of(fps), by_metric[PSNR].bin_of(psnr),
                 by_metric[POWER].bin_of(power))


def enumerate_states(specs) -> list[State]:
    by_metric = {s.metric_id: s for s in specs}
    return [State(*t) for t in itertools.product(
        *(range(by_metric[m].n_bins) for m in METRIC_IDS))]


@dataclass(frozen=True)
class StateSpace:
    """The three sub-spaces plus a dense integer indexing of their product."""

    fps: SubStateSpec
    psnr: SubStateSpec
    power: SubStateSpec
    _dims: tuple[int, int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for spec, metric in zip((self.fps, self.psnr, self.power), METRIC_IDS):
            if spec.metric_id != metric:
                raise InvalidInput(f"expected {metric} sub-space, got {spec.metric_id}")
        object.__setattr__(self, "_dims", (self.fps.n_bins, self.psnr.n_bins,
                                           self.power.n_bins))

    @classmethod
    def default(cls) -> "StateSpace":
        return cls(*default_specs())

    @classmethod
    def from_edges(cls, fps_edges, psnr_edges, power_edges) -> "StateSpace":
        return cls(SubStateSpec(FPS, fps_edges), SubStateSpec(PSNR, psnr_edges),
                   SubStateSpec(POWER, power_edges))

    @property
    def specs(self) -> tuple[SubStateSpec, SubStateSpec, SubStateSpec]:
        return self.fps, self.psnr, self.power

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._dims

    @property
    def n_states(self) -> int:
        a, b, c = self._dims
        return a * b * c

    def index(self, s: State) -> int:
        _, b, c = self._dims
        return (s.fps_bin * b + s.psnr_bin) * c + s.power_bin

    def state(self, idx: int) -> State:
        _, b, c = self._dims
        rest, power = divmod(idx, c)
        fps, psnr = divmod(rest, b)
        return State(fps, psnr, power)

    def discretize(self, fps: float, psnr: float, power: float) -> State:
        return State(self.fps.bin_of(fps), self.psnr.bin_of(psnr), self.power.bin_of(power))

    def observe_index(self, fps: float, psnr: float, power: float) -> int:
        return self.index(self.discretize(fps, psnr, power))

    def states(self) -> list[State]:
        return enumerate_states(self.specs)

    def to_dict(self) -> dict:
        return {"fps": list(self.fps.bin_edges), "psnr": list(self.psnr.bin_edges),
                "power": list(self.power.bin_edges)}
