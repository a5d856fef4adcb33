"""Admission control and the per-interval control loop for a shared transcoding node.

THREE_TIER moves between three tiers, each mapping user classes to policies:

    S0  regular -> FULL       premium -> FULL
    S1  regular -> MINIMIZED  premium -> FULL
    S2  regular -> MINIMIZED  premium -> MINIMIZED

ONE_POL serves everyone with the regular full-resource policy, TWO_POL picks
the full-resource policy of the client's class. All three strategies share
the same core-count predictor when deciding whether a client may start.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .env_sim import (EncodeSession, EnvParams, Observation, VideoProfile, contention_factor,
                      step_interval)
from .kaas import KnowledgeBase, Mode, UserClass, start_knobs
from .mdp_core import ACTIONS, KnobLadder, apply_action
from .rewards import PI_R_HI, REAL_TIME_FPS


class Tier(str, Enum):
    S0 = "S0"
    S1 = "S1"
    S2 = "S2"


TIERS = (Tier.S0, Tier.S1, Tier.S2)


class Strategy(str, Enum):
    THREE_TIER = "THREE_TIER"
    ONE_POL = "ONE_POL"
    TWO_POL = "TWO_POL"


TIER_POLICY_MAP = {
    Tier.S0: {UserClass.REGULAR: Mode.FULL, UserClass.PREMIUM: Mode.FULL},
    Tier.S1: {UserClass.REGULAR: Mode.MINIMIZED, UserClass.PREMIUM: Mode.FULL},
    Tier.S2: {UserClass.REGULAR: Mode.MINIMIZED, UserClass.PREMIUM: Mode.MINIMIZED},
}


class BookkeepingError(RuntimeError):
    pass


@dataclass
class ClientMetrics:
    intervals: int = 0
    late_intervals: int = 0
    seconds: float = 0.0
    psnr_sum: float = 0.0
    threads_sum: float = 0.0
    freq_sum: float = 0.0
    qp_sum: float = 0.0

    def add(self, obs: Observation, nth: int, freq: float, qp: int) -> None:
        self.intervals += 1
        self.late_intervals += obs.fps < REAL_TIME_FPS
        self.seconds += obs.seconds
        self.psnr_sum += obs.psnr
        self.threads_sum += nth
        self.freq_sum += freq
        self.qp_sum += qp

    def mean(self, attr: str) -> float:
        return getattr(self, attr + "_sum") / self.intervals if self.intervals else math.nan

    @property
    def delta_pct(self) -> float:
        return 100.0 * self.late_intervals / self.intervals if self.intervals else 0.0


@dataclass
class ClientRecord:
    id: int
    user_class: UserClass
    profile: VideoProfile
    arrival_time: float
    seed: int = 0
    start_time: float | None = None
    finish_time: float | None = None
    session: EncodeSession | None = None
    assigned_mode: Mode = Mode.FULL
    metrics: ClientMetrics = field(default_factory=ClientMetrics)

    @property
    def premium(self) -> bool:
        return self.user_class == UserClass.PREMIUM


def policy_name(strategy: Strategy, tier: Tier, user_class: UserClass, kb: KnowledgeBase) -> str:
    if strategy == Strategy.ONE_POL:
        return PI_R_HI
    mode = Mode.FULL if strategy == Strategy.TWO_POL else TIER_POLICY_MAP[tier][user_class]
    return kb.entry(user_class, mode).policy.name


def assigned_mode(strategy: Strategy, tier: Tier, user_class: UserClass) -> Mode:
    if strategy != Strategy.THREE_TIER:
        return Mode.FULL
    return TIER_POLICY_MAP[tier][user_class]


def predicted_cores(tier: Tier, n_reg: int, n_prem: int, kb: KnowledgeBase,
                    strategy: Strategy = Strategy.THREE_TIER) -> float:
    reg = kb.avg_cores(policy_name(strategy, tier, UserClass.REGULAR, kb))
    prem = kb.avg_cores(policy_name(strategy, tier, UserClass.PREMIUM, kb))
    return n_reg * reg + n_prem * prem


def can_run(tier: Tier, incoming: ClientRecord, n_reg: int, n_prem: int, kb: KnowledgeBase,
            physical_cores: float, strategy: Strategy = Strategy.THREE_TIER) -> bool:
    """Would the running clients plus ``incoming`` fit under ``tier``'s policies?"""
    extra = kb.avg_cores(policy_name(strategy, tier, incoming.user_class, kb))
    return predicted_cores(tier, n_reg, n_prem, kb, strategy) + extra <= physical_cores


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # arrive | admit | requeue | tier_change | finish
    client: int | None
    tier: str


class SchedulerCore:
    """Queue, running set and tier of one node; all mutation happens here."""

    def __init__(self, kb: KnowledgeBase, strategy: Strategy = Strategy.THREE_TIER,
                 physical_cores: float | None = None):
        self.kb = kb
        self.strategy = Strategy(strategy)
        self.physical_cores = (kb.params.physical_cores if physical_cores is None
                               else physical_cores)
        self.tier = Tier.S0
        self.queue: deque[ClientRecord] = deque()
        self.running: dict[int, ClientRecord] = {}
        self.n_reg = 0
        self.n_prem = 0
        self.events: list[Event] = []
        self.clock = 0.0
        self.on_start = None  # callback(client) once a client is admitted

    # -- helpers ----------------------------------------------------------

    def _log(self, kind: str, client: int | None) -> None:
        self.events.append(Event(self.clock, kind, client, self.tier.value))

    def _set_tier(self, tier: Tier) -> None:
        if tier != self.tier:
            self.tier = tier
            self._log("tier_change", None)
            for c in self.running.values():
                c.assigned_mode = assigned_mode(self.strategy, tier, c.user_class)

    def _fits(self, tier: Tier, c: ClientRecord) -> bool:
        return can_run(tier, c, self.n_reg, self.n_prem, self.kb, self.physical_cores,
                       self.strategy)

    def _start(self, c: ClientRecord) -> None:
        c.start_time = self.clock
        c.assigned_mode = assigned_mode(self.strategy, self.tier, c.user_class)
        self.running[c.id] = c
        if c.premium:
            self.n_prem += 1
        else:
            self.n_reg += 1
        self._log("admit", c.id)
        if self.on_start is not None:
            self.on_start(c)

    # -- operations -------------------------------------------------------

    def arrive(self, c: ClientRecord) -> None:
        self.queue.append(c)
        self._log("arrive", c.id)
        self.drain()

    def admit(self) -> bool:
        """Try to start the client at the head of the queue."""
        c = self.queue.popleft()
        if self.strategy != Strategy.THREE_TIER:
            if self._fits(self.tier, c):
                self._start(c)
                return True
        elif self._fits(self.tier, c):
            self._start(c)
            return True
        elif self.tier == Tier.S0 and self._fits(Tier.S1, c):
            self._set_tier(Tier.S1)
            self._start(c)
            return True
        elif c.premium and self._fits(Tier.S2, c):
            self._set_tier(Tier.S2)
            self._start(c)
            return True
        self.queue.appendleft(c)
        self._log("requeue", c.id)
        return False

    def drain(self) -> None:
        while self.queue and self.admit():
            pass

    def lowest_fitting_tier(self) -> Tier:
        for t in TIERS:
            if predicted_cores(t, self.n_reg, self.n_prem, self.kb,
                               self.strategy) <= self.physical_cores:
                return t
        return Tier.S2

    def on_finish(self, c: ClientRecord) -> None:
        if c.id not in self.running:
            raise BookkeepingError(f"client {c.id} is not running")
        del self.running[c.id]
        if c.premium:
            self.n_prem -= 1
        else:
            self.n_reg -= 1
        c.finish_time = self.clock
        self._log("finish", c.id)
        if self.strategy == Strategy.THREE_TIER:
            target = self.lowest_fitting_tier()
            if TIERS.index(target) < TIERS.index(self.tier):
                self._set_tier(target)
        self.drain()

    def policy_for(self, c: ClientRecord):
        return self.kb.entries[policy_name(self.strategy, self.tier, c.user_class, self.kb)].policy

    def check(self) -> None:
        if self.n_reg + self.n_prem != len(self.running):
            raise BookkeepingError("class counts disagree with the running set")


# ---------------------------------------------------------------------------
# discrete-event loop

@dataclass
class TraceRow:
    clock_s: float
    client: int
    nth: int
    freq: float
    qp: int
    fps: float
    psnr: float
    power: float


class NodeSimulation:
    """Runs every client of a workload to completion on one node.

    Each running client advances in control intervals of
    ``params.interval_frames`` frames. At the end of an interval the client's
    observation is discretized, the policy of its current tier acts on the
    knobs, and the next interval starts with the contention factor of that
    moment.
    """

    def __init__(self, kb: KnowledgeBase, clients: list[ClientRecord],
                 strategy: Strategy = Strategy.THREE_TIER, params: EnvParams | None = None,
                 physical_cores: float | None = None, trace: bool = False):
        self.kb = kb
        self.params = params or kb.params
        self.ladder: KnobLadder = kb.ladder
        self.core = SchedulerCore(kb, strategy, physical_cores)
        self.core.on_start = self._on_start
        self.clients = sorted(clients, key=lambda c: (c.arrival_time, c.id))
        self.trace: list[TraceRow] | None = [] if trace else None
        self._heap: list = []
        self._seq = 0
        self.tier_time = {t: 0.0 for t in TIERS}

    def _push(self, t: float, kind: int, cid: int) -> None:
        # kind orders simultaneous events: finishes, then interval ends, then arrivals
        heapq.heappush(self._heap, (t, kind, self._seq, cid))
        self._seq += 1

    def _threads_running(self) -> int:
        return sum(c.session.knobs.values(self.ladder)[0] for c in self.core.running.values())

    def _begin_interval(self, c: ClientRecord) -> None:
        factor = contention_factor(self._threads_running(), self.core.physical_cores)
        nth, freq, qp = c.session.knobs.values(self.ladder)
        obs = step_interval(c.session, factor, ladder=self.ladder, params=self.params)
        c.metrics.add(obs, nth, freq, qp)
        end = self.core.clock + obs.seconds
        if self.trace is not None:
            self.trace.append(TraceRow(end, c.id, nth, freq, qp, obs.fps, obs.psnr, obs.power))
        self._push(end, 0 if c.session.finished else 1, c.id)

    def _on_start(self, c: ClientRecord) -> None:
        c.session = EncodeSession(c.profile, start_knobs(self.ladder), seed=c.seed)
        self._begin_interval(c)

    def _advance(self, t: float) -> None:
        self.tier_time[self.core.tier] += t - self.core.clock
        self.core.clock = t

    def run(self) -> "NodeSimulation":
        by_id = {c.id: c for c in self.clients}
        for c in self.clients:
            self._push(c.arrival_time, 2, c.id)
        space = self.kb.space
        while self._heap:
            t, kind, _, cid = heapq.heappop(self._heap)
            self._advance(t)
            c = by_id[cid]
            if kind == 2:
                self.core.arrive(c)
            elif kind == 0:
                self.core.on_finish(c)
            else:
                obs = c.session.last
                s = space.observe_index(obs.fps, obs.psnr, obs.power)
                a = self.core.policy_for(c).act(s)
                c.session.knobs = apply_action(c.session.knobs, ACTIONS[a], self.ladder)
                self._begin_interval(c)
            self.core.check()
        if self.core.queue or self.core.running:
            raise BookkeepingError("simulation ended with unfinished clients")
        return self

    @property
    def events(self) -> list[Event]:
        return self.core.events

    @property
    def makespan(self) -> float:
        return max(c.finish_time for c in self.clients) if self.clients else 0.0
