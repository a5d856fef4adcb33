"""Piecewise sub-rewards, their weighted composition and the built-in policy recipes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mdp_core import FPS, POWER, PSNR, InvalidInput, State, StateSpace, SubStateSpec

QUALITY_FLOOR_DB = 36.0
REAL_TIME_FPS = 24.0
PENALTY = -1.0


class Kind(str, Enum):
    PSNR_LOW = "PSNR_LOW"
    PSNR_MID = "PSNR_MID"
    PSNR_HIGH = "PSNR_HIGH"
    FPS = "FPS"
    POWER = "POWER"
    CUSTOM = "CUSTOM"


_KIND_METRIC = {Kind.PSNR_LOW: PSNR, Kind.PSNR_MID: PSNR, Kind.PSNR_HIGH: PSNR,
                Kind.FPS: FPS, Kind.POWER: POWER}


@dataclass(frozen=True)
class SubReward:
    metric_id: str
    kind: Kind
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise InvalidInput("sub-reward needs one value per bin")
        for v in self.values:
            if not (math.isfinite(v) and -1.0 <= v <= 1.0):
                raise InvalidInput(f"sub-reward value {v} outside [-1, 1]")
        expected = _KIND_METRIC.get(self.kind)
        if expected is not None and expected != self.metric_id:
            raise InvalidInput(f"{self.kind.value} applies to {expected}, not {self.metric_id}")


def eval_sub(sr: SubReward, b: int) -> float:
    if not 0 <= b < len(sr.values):
        raise InvalidInput(f"bin {b} out of range for {sr.kind.value} ({len(sr.values)} bins)")
    return sr.values[b]


@dataclass(frozen=True)
class RewardSpec:
    """Coefficient-weighted sum of sub-rewards, one term per metric."""

    terms: tuple[tuple[float, SubReward], ...]

    def __post_init__(self):
        terms = tuple((float(c), sr) for c, sr in self.terms)
        object.__setattr__(self, "terms", terms)
        metrics = [sr.metric_id for _, sr in terms]
        if len(set(metrics)) != len(metrics):
            raise InvalidInput("a reward spec holds at most one term per metric")
        for c, _ in terms:
            if not math.isfinite(c) or c < 0:
                raise InvalidInput(f"coefficient {c} must be finite and >= 0")

    def coefficient(self, metric_id: str) -> float:
        for c, sr in self.terms:
            if sr.metric_id == metric_id:
                return c
        raise KeyError(metric_id)

    def sub_reward(self, metric_id: str) -> SubReward:
        for _, sr in self.terms:
            if sr.metric_id == metric_id:
                return sr
        raise KeyError(metric_id)

    def scaled(self, k: float) -> "RewardSpec":
        return RewardSpec(tuple((c * k, sr) for c, sr in self.terms))

    def check_covers(self, space: StateSpace) -> None:
        dims = dict(zip((FPS, PSNR, POWER), space.dims))
        for metric in dims:
            try:
                sr = self.sub_reward(metric)
            except KeyError:
                raise InvalidInput(f"reward spec lacks a {metric} term") from None
            if len(sr.values) != dims[metric]:
                raise InvalidInput(f"{metric} sub-reward has {len(sr.values)} values, "
                                   f"state space has {dims[metric]} bins")


def compose(spec: RewardSpec, s: State) -> float:
    bins = {FPS: s.fps_bin, PSNR: s.psnr_bin, POWER: s.power_bin}
    return sum(c * eval_sub(sr, bins[sr.metric_id]) for c, sr in spec.terms)


def reward_vector(spec: RewardSpec, space: StateSpace) -> np.ndarray:
    """compose() for every state index, as a dense array."""
    spec.check_covers(space)
    nf, nq, npw = space.dims
    out = np.zeros((nf, nq, npw))
    for c, sr in spec.terms:
        v = c * np.asarray(sr.values)
        if sr.metric_id == FPS:
            out += v[:, None, None]
        elif sr.metric_id == PSNR:
            out += v[None, :, None]
        else:
            out += v[None, None, :]
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# built-in shapes

def _lerp(a: float, b: float, t: float) -> float:
    return a + (b - a) * t


def _above_floor(spec: SubStateSpec) -> list[int]:
    return [b for b in range(spec.n_bins) if spec.bin_bounds(b)[0] >= QUALITY_FLOOR_DB]


def psnr_low(spec: SubStateSpec) -> SubReward:
    """1.0 just above the quality floor, decaying linearly to 0.1 at the top bin."""
    ok = _above_floor(spec)
    vals = [PENALTY] * spec.n_bins
    for i, b in enumerate(ok):
        vals[b] = _lerp(1.0, 0.1, i / max(len(ok) - 1, 1))
    return SubReward(PSNR, Kind.PSNR_LOW, vals)


def psnr_high(spec: SubStateSpec, saturation_db: float = 44.0) -> SubReward:
    """0.1 just above the floor, rising linearly to 1.0 from ``saturation_db`` up."""
    ok = _above_floor(spec)
    vals = [PENALTY] * spec.n_bins
    top = [b for b in ok if spec.bin_bounds(b)[0] >= saturation_db]
    ramp_end = top[0] if top else ok[-1]
    span = max(ramp_end - ok[0], 1)
    for b in ok:
        vals[b] = 1.0 if b >= ramp_end else _lerp(0.1, 1.0, (b - ok[0]) / span)
    return SubReward(PSNR, Kind.PSNR_HIGH, vals)


def psnr_mid(spec: SubStateSpec, peak_db: tuple[float, float] = (39.0, 41.0),
             edge_value: float = 0.2) -> SubReward:
    """Peak of 1.0 on the bins starting inside ``peak_db``, ``edge_value`` at both ends."""
    ok = _above_floor(spec)
    vals = [PENALTY] * spec.n_bins
    peak = [b for b in ok if peak_db[0] <= spec.bin_bounds(b)[0] < peak_db[1]]
    if not peak:
        raise InvalidInput("no bins inside the PSNR_MID peak window")
    lo, hi = peak[0], peak[-1]
    for b in ok:
        if b < lo:
            vals[b] = _lerp(edge_value, 1.0, (b - ok[0]) / max(lo - ok[0], 1))
        elif b > hi:
            vals[b] = _lerp(1.0, edge_value, (b - hi) / max(ok[-1] - hi, 1))
        else:
            vals[b] = 1.0
    return SubReward(PSNR, Kind.PSNR_MID, vals)


FPS_LEVELS = ((REAL_TIME_FPS, PENALTY), (30.0, 0.6), (40.0, 1.0), (math.inf, 0.7))


def fps_reward(spec: SubStateSpec) -> SubReward:
    """Penalty below real time, 0.6 just above it, peak on [30, 40), 0.7 beyond."""
    vals = []
    for b in range(spec.n_bins):
        lo = spec.bin_bounds(b)[0]
        vals.append(next(v for bound, v in FPS_LEVELS if lo < bound))
    return SubReward(FPS, Kind.FPS, vals)


def power_reward(spec: SubStateSpec) -> SubReward:
    n = spec.n_bins
    return SubReward(POWER, Kind.POWER, [_lerp(1.0, 0.0, b / max(n - 1, 1)) for b in range(n)])


# ---------------------------------------------------------------------------
# recipes

PI_R_HI = "pi_R_hi"
PI_P_HI = "pi_P_hi"
PI_R_LO = "pi_R_lo"
PI_P_LO = "pi_P_lo"
POLICY_NAMES = (PI_R_HI, PI_P_HI, PI_R_LO, PI_P_LO)
DISPLAY_NAMES = {PI_R_HI: "π^R", PI_P_HI: "π^P", PI_R_LO: "π_R", PI_P_LO: "π_P"}

# (quality shape, power coefficient); quality and fps coefficients are shared
_RECIPE_TABLE = {
    PI_R_HI: (Kind.PSNR_LOW, 0.1),
    PI_P_HI: (Kind.PSNR_HIGH, 0.0),
    PI_R_LO: (Kind.PSNR_LOW, 0.5),
    PI_P_LO: (Kind.PSNR_MID, 0.5),
}
QUALITY_COEF = 0.7
FPS_COEF = 0.5


@dataclass(frozen=True)
class PolicyRecipe:
    name: str
    spec: RewardSpec

    @property
    def display(self) -> str:
        return DISPLAY_NAMES.get(self.name, self.name)


def builtin_recipes(space: StateSpace | None = None) -> dict[str, PolicyRecipe]:
    space = space or StateSpace.default()
    quality = {Kind.PSNR_LOW: psnr_low(space.psnr), Kind.PSNR_HIGH: psnr_high(space.psnr),
               Kind.PSNR_MID: psnr_mid(space.psnr)}
    fps, power = fps_reward(space.fps), power_reward(space.power)
    recipes = {}
    for name, (qkind, pcoef) in _RECIPE_TABLE.items():
        spec = RewardSpec(((QUALITY_COEF, quality[qkind]), (pcoef, power), (FPS_COEF, fps)))
        recipes[name] = PolicyRecipe(name, spec)
    return recipes


def recipe_from_config(name: str, terms: list[dict], space: StateSpace) -> PolicyRecipe:
    """Build a recipe from ``[{metric, values, coefficient}, ...]`` entries.

    ``values`` is either an explicit per-bin list or the name of a built-in
    shape (``PSNR_LOW``, ``PSNR_MID``, ``PSNR_HIGH``, ``FPS``, ``POWER``).
    """
    builders = {Kind.PSNR_LOW: lambda: psnr_low(space.psnr),
                Kind.PSNR_MID: lambda: psnr_mid(space.psnr),
                Kind.PSNR_HIGH: lambda: psnr_high(space.psnr),
                Kind.FPS: lambda: fps_reward(space.fps),
                Kind.POWER: lambda: power_reward(space.power)}
    out = []
    for term in terms:
        values = term["values"]
        if isinstance(values, str):
            sr = builders[Kind(values)]()
            if sr.metric_id != term["metric"]:
                raise InvalidInput(f"shape {values} does not apply to {term['metric']}")
        else:
            sr = SubReward(term["metric"], Kind.CUSTOM, values)
        out.append((float(term["coefficient"]), sr))
    spec = RewardSpec(tuple(out))
    spec.check_covers(space)
    return PolicyRecipe(name, spec)


def sweep(spec: RewardSpec, threshold: float, space: StateSpace | None = None):
    """Reward of every state and whether it clears ``threshold`` (a goal state)."""
    space = space or StateSpace.default()
    r = reward_vector(spec, space)
    return [(s, float(r[i]), bool(r[i] >= threshold)) for i, s in enumerate(space.states())]
