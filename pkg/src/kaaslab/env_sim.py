"""Synthetic stand-in for a real-time HEVC transcoder running on a multicore node.

Each control interval turns the current knob setting and the scene being
encoded into an Observation of throughput, quality and power.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp_core import ACTIONS, KnobLadder, KnobSetting, apply_action


class SessionFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerModelParams:
    alpha: float = 0.5   # W / GHz^2 per thread
    beta: float = 7.0    # W per active core
    gamma: float = 17.0  # W, machine baseline

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("power model parameters must be >= 0")


def power(nth: int, freq: float, p: PowerModelParams = PowerModelParams()) -> float:
    """Per-application power estimate ``nth*(alpha*freq^2 + beta) + gamma``."""
    if nth < 1:
        raise ValueError("power() needs at least one thread")
    return nth * (p.alpha * freq * freq + p.beta) + p.gamma


def dynamic_power(nth: int, freq: float, p: PowerModelParams = PowerModelParams()) -> float:
    return nth * (p.alpha * freq * freq + p.beta)


def system_power(settings: list[tuple[int, float]], p: PowerModelParams = PowerModelParams()) -> float:
    """Machine-wide draw: every encoder's dynamic share plus one baseline."""
    return sum(dynamic_power(n, f, p) for n, f in settings) + p.gamma


@dataclass(frozen=True)
class EnvParams:
    fps_scale: float = 6.0
    thread_exponent: float = 0.85
    qp_speedup: float = 0.05
    qp_ref: int = 22
    psnr_intercept: float = 53.4
    psnr_slope: float = 0.42
    physical_cores: int = 12
    interval_frames: int = 24
    noise: bool = True
    power_model: PowerModelParams = field(default_factory=PowerModelParams)

    def base_fps(self, nth: int, freq: float, qp: int, complexity: float) -> float:
        return (self.fps_scale * freq * nth ** self.thread_exponent
                * (1.0 + self.qp_speedup * (qp - self.qp_ref)) / complexity)

    def base_psnr(self, qp: int, offset: float = 0.0) -> float:
        return self.psnr_intercept - self.psnr_slope * qp + offset

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "fps_scale", "thread_exponent", "qp_speedup", "qp_ref", "psnr_intercept",
            "psnr_slope", "physical_cores", "interval_frames", "noise")}
        pm = self.power_model
        d["power_model"] = {"alpha": pm.alpha, "beta": pm.beta, "gamma": pm.gamma}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvParams":
        d = dict(d)
        pm = PowerModelParams(**d.pop("power_model", {}))
        return cls(power_model=pm, **d)


@dataclass(frozen=True)
class Scene:
    start_frame: int
    complexity: float
    psnr_offset: float = 0.0


@dataclass(frozen=True)
class VideoProfile:
    id: str
    scenes: tuple[Scene, ...]
    length_frames: int = 2500
    noise_sigma_fps: float = 0.06
    noise_sigma_psnr: float = 0.3

    def __post_init__(self):
        scenes = tuple(self.scenes)
        object.__setattr__(self, "scenes", scenes)
        if not scenes or scenes[0].start_frame != 0:
            raise ValueError(f"{self.id}: scenes must start at frame 0")
        starts = [s.start_frame for s in scenes]
        if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] >= self.length_frames:
            raise ValueError(f"{self.id}: scene starts must be ordered inside the video")
        for s in scenes:
            if not 0.5 <= s.complexity <= 2.0:
                raise ValueError(f"{self.id}: complexity {s.complexity} outside [0.5, 2]")

    def scene_at(self, frame: int) -> Scene:
        starts = [s.start_frame for s in self.scenes]
        return self.scenes[bisect.bisect_right(starts, frame) - 1]

    @property
    def max_complexity(self) -> float:
        return max(s.complexity for s in self.scenes)

    def to_dict(self) -> dict:
        return {"id": self.id, "length_frames": self.length_frames,
                "noise_sigma_fps": self.noise_sigma_fps,
                "noise_sigma_psnr": self.noise_sigma_psnr,
                "scenes": [[s.start_frame, s.complexity, s.psnr_offset] for s in self.scenes]}

    @classmethod
    def from_dict(cls, d: dict) -> "VideoProfile":
        d = dict(d)
        scenes = tuple(Scene(int(a), float(b), float(c)) for a, b, c in d.pop("scenes"))
        return cls(scenes=scenes, **d)


def _profile(pid: str, scenes) -> VideoProfile:
    return VideoProfile(pid, tuple(Scene(*s) for s in scenes))


TRAINING_IDS = ("t1", "t2", "t3")
VALIDATION_IDS = ("v1", "v2", "v3", "v4")


def catalog() -> list[VideoProfile]:
    """Three training and four validation sequences of 2500 frames.

    v1 alternates calm and very busy scenes, so it is the hardest to keep in
    real time.
    """
    return [
        _profile("t1", [(0, 0.95, 1.8), (700, 1.10, -3.6), (1500, 0.85, 2.2), (2100, 1.20, -4.0)]),
        _profile("t2", [(0, 1.05, -3.8), (500, 0.80, 2.4), (1200, 1.25, -4.2), (1900, 1.00, 1.6)]),
        _profile("t3", [(0, 0.90, 2.0), (900, 1.15, -3.9), (1700, 1.00, 1.2)]),
        _profile("v1", [(0, 0.85, 2.4), (600, 1.45, -4.0), (1100, 0.80, 2.6),
                        (1700, 1.40, -3.8), (2200, 0.95, 2.2)]),
        _profile("v2", [(0, 1.00, -4.0), (800, 1.10, 2.0), (1600, 0.95, -3.6)]),
        _profile("v3", [(0, 0.95, 2.2), (1000, 1.05, -4.2), (1800, 1.00, 2.4)]),
        _profile("v4", [(0, 1.05, -3.8), (900, 0.95, 2.0), (1700, 1.10, -4.0)]),
    ]


def catalog_by_id(profiles=None) -> dict[str, VideoProfile]:
    return {p.id: p for p in (profiles or catalog())}


@dataclass(frozen=True)
class Observation:
    fps: float
    psnr: float
    power: float
    interval_frames: int
    seconds: float


@dataclass
class EncodeSession:
    profile: VideoProfile
    knobs: KnobSetting
    seed: int = 0
    frames_done: int = 0
    carry: float = 0.0
    last: Observation | None = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    @property
    def finished(self) -> bool:
        return self.frames_done >= self.profile.length_frames

    @property
    def remaining(self) -> int:
        return self.profile.length_frames - self.frames_done


def step_interval(session: EncodeSession, contention_factor: float = 1.0, *,
                  ladder: KnobLadder = KnobLadder(), params: EnvParams = EnvParams(),
                  seconds: float | None = None) -> Observation:
    """Encode one control interval with the session's current knobs.

    By default an interval is ``params.interval_frames`` frames. With
    ``seconds`` it instead lasts that long and covers however many frames the
    achieved throughput allows (fractional frames carry over).
    """
    if session.finished:
        raise SessionFinished(f"session on {session.profile.id} already finished")
    if not 0.0 < contention_factor <= 1.0:
        raise ValueError(f"contention factor {contention_factor} outside (0, 1]")
    nth, freq, qp = session.knobs.values(ladder)
    scene = session.profile.scene_at(session.frames_done)
    fps = params.base_fps(nth, freq, qp, scene.complexity) * contention_factor
    psnr = params.base_psnr(qp, scene.psnr_offset)
    if params.noise:
        fps *= math.exp(session.profile.noise_sigma_fps * session.rng.standard_normal())
        psnr += session.profile.noise_sigma_psnr * session.rng.standard_normal()
    watts = power(nth, freq, params.power_model)

    if seconds is None:
        frames = min(params.interval_frames, session.remaining)
        elapsed = frames / fps
    else:
        total = fps * seconds + session.carry
        if total >= session.remaining:
            frames = session.remaining
            elapsed = max(frames - session.carry, 0.0) / fps
            session.carry = 0.0
        else:
            frames = int(total)
            session.carry = total - frames
            elapsed = seconds
    session.frames_done += frames
    obs = Observation(fps, psnr, watts, frames, elapsed)
    session.last = obs
    return obs


def contention_factor(total_threads: int, physical_cores: int) -> float:
    """Linear slowdown once the running encoders oversubscribe the cores."""
    if total_threads <= physical_cores:
        return 1.0
    return physical_cores / total_threads


def with_noise(params: EnvParams, noise: bool) -> EnvParams:
    return replace(params, noise=noise)


class TrainingEnv:
    """Single-encoder environment used while learning a policy.

    ``reset`` opens a session on the next training sequence with random knobs
    and returns the state observed after its first interval; ``step`` applies
    an action for one interval. Every encoded interval counts as one
    environment interaction.
    """

    def __init__(self, space, ladder: KnobLadder = KnobLadder(), params: EnvParams = EnvParams(),
                 profiles=None, seed: int = 0):
        self.space = space
        self.ladder = ladder
        self.params = params
        by_id = catalog_by_id()
        self.profiles = list(profiles) if profiles else [by_id[i] for i in TRAINING_IDS]
        self.rng = np.random.default_rng(seed)
        self.interactions = 0
        self.session: EncodeSession | None = None
        self._episode = 0

    def _observe(self) -> int:
        obs = step_interval(self.session, ladder=self.ladder, params=self.params)
        self.interactions += 1
        return self.space.observe_index(obs.fps, obs.psnr, obs.power)

    def random_knobs(self) -> KnobSetting:
        nt, nf, nq = self.ladder.sizes
        r = self.rng.integers(0, [nt, nf, nq])
        return KnobSetting(int(r[0]), int(r[1]), int(r[2]))

    def reset(self, u: float | None = None) -> int:
        # ``u`` is accepted for interface parity with table playback; the
        # environment draws its own randomness
        profile = self.profiles[self._episode % len(self.profiles)]
        self._episode += 1
        return self.reset_to(profile, 0, self.random_knobs())

    def reset_to(self, profile: VideoProfile, frame: int, knobs: KnobSetting) -> int:
        self.session = EncodeSession(profile, knobs, seed=int(self.rng.integers(2**32)),
                                     frames_done=frame)
        return self._observe()

    def step(self, action_idx: int) -> tuple[int, bool]:
        self.session.knobs = apply_action(self.session.knobs, ACTIONS[action_idx], self.ladder)
        s2 = self._observe()
        return s2, self.session.finished
