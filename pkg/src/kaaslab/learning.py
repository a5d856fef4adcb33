"""Tabular Q-Learning (online and from a transition table) and a value-iteration oracle."""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mdp_core import ACTIONS, N_ACTIONS, NOOP, StateSpace
from .rewards import PolicyRecipe, reward_vector
from .transitions import TransitionTable

log = logging.getLogger(__name__)

ONLINE = "online"
OFFLINE = "offline"
_CHUNK = 1 << 15


class OracleFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.1
    discount: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int | None = None  # None: first 60% of the run
    training_frames: int = 24 * 500
    interval_frames: int = 24
    offline_steps: int = 60_000_000
    episode_length: int = 104
    # 0 keeps the rate constant; otherwise lr*(k/(k+visits))**power
    lr_decay_visits: int = 0
    lr_decay_power: float = 1.0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if not (0 <= self.epsilon_end <= self.epsilon_start <= 1):
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.training_frames <= 0:
            raise ValueError("training_frames must be positive")

    @property
    def decisions(self) -> int:
        return max(1, self.training_frames // self.interval_frames)

    def decay_steps(self, total: int) -> int:
        return self.epsilon_decay_steps or max(1, int(0.6 * total))

    def epsilon(self, step: int, total: int) -> float:
        frac = min(step / self.decay_steps(total), 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac

    def to_dict(self) -> dict:
        return asdict(self)


# Offline playback is cheap, so it explores uniformly and averages every
# sample (rate 3/(3+n)) instead of tracking a moving target.
OFFLINE_HYPERPARAMS = Hyperparams(learning_rate=1.0, epsilon_start=1.0, epsilon_end=1.0,
                                  lr_decay_visits=3)


@dataclass
class QTable:
    q: np.ndarray
    visit: np.ndarray
    mask: np.ndarray | None = None  # actions available per state; None means all

    @classmethod
    def zeros(cls, n_states: int) -> "QTable":
        return cls(np.zeros((n_states, N_ACTIONS)), np.zeros((n_states, N_ACTIONS), dtype=np.int64))

    def copy(self) -> "QTable":
        return QTable(self.q.copy(), self.visit.copy(),
                      None if self.mask is None else self.mask.copy())


def q_update(qt: QTable, s: int, a: int, r: float, s2: int, h: Hyperparams) -> None:
    if not math.isfinite(r):
        raise ValueError(f"non-finite reward {r}")
    if qt.mask is None:
        best = qt.q[s2].max()
    else:
        avail = qt.mask[s2]
        best = qt.q[s2][avail].max() if avail.any() else 0.0
    qt.q[s, a] += _lr(h, qt.visit[s, a]) * (r + h.discount * best - qt.q[s, a])
    qt.visit[s, a] += 1


def extract_greedy(qt, mask: np.ndarray | None = None) -> np.ndarray:
    """Best action per state; ties (to 1e-9 relative) go to the lowest action index.

    For a QTable, states it knows nothing about (no available action, or no
    visits when there is no mask) keep their knobs: they map to NOOP.
    """
    q = qt.q if isinstance(qt, QTable) else np.asarray(qt)
    if mask is None and isinstance(qt, QTable):
        mask = qt.mask
    vals = q if mask is None else np.where(mask, q, -np.inf)
    best = vals.max(axis=1)
    best = np.where(np.isfinite(best), best, 0.0)
    tol = 1e-9 * np.maximum(1.0, np.abs(best))
    near = vals >= (best - tol)[:, None]
    out = near.argmax(axis=1)
    if mask is not None:
        out[~mask.any(axis=1)] = NOOP
    elif isinstance(qt, QTable):
        out[qt.visit.sum(axis=1) == 0] = NOOP
    return out


@dataclass
class Policy:
    name: str
    greedy: np.ndarray
    qtable: QTable
    recipe: str
    trained_with: str
    env_interactions: int = 0
    seed: int | None = None
    hyperparams: dict = field(default_factory=dict)
    signature: str | None = None

    def act(self, s: int) -> int:
        return int(self.greedy[s])

    def to_dict(self) -> dict:
        return {
            "name": self.name, "recipe": self.recipe, "trained_with": self.trained_with,
            "env_interactions": int(self.env_interactions), "seed": self.seed,
            "hyperparams": self.hyperparams, "signature": self.signature,
            "greedy": [int(a) for a in self.greedy],
            "q": self.qtable.q.tolist(), "visit": self.qtable.visit.tolist(),
            "mask": None if self.qtable.mask is None else self.qtable.mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        mask = None if d["mask"] is None else np.array(d["mask"], dtype=bool)
        qt = QTable(np.array(d["q"], dtype=float), np.array(d["visit"], dtype=np.int64), mask)
        return cls(d["name"], np.array(d["greedy"], dtype=np.int64), qt, d["recipe"],
                   d["trained_with"], d["env_interactions"], d["seed"], d["hyperparams"],
                   d["signature"])

    def equals(self, other: "Policy") -> bool:
        a, b = self.to_dict(), other.to_dict()
        return a == b


# ---------------------------------------------------------------------------
# the shared learning loop
#
# Randomness: a policy stream gives two uniforms per decision (explore?, which
# action) and a start stream gives one uniform per decision, consumed only
# when that decision begins a new episode. The compiled offline kernel follows
# the same convention, so both paths agree draw for draw.

GOLDEN = 0.6180339887498949


def _lr(h: Hyperparams, n: int) -> float:
    if not h.lr_decay_visits:
        return h.learning_rate
    k = h.lr_decay_visits
    return h.learning_rate * (k / (k + n)) ** h.lr_decay_power


def _q_learning(qt: QTable, reward: np.ndarray, n_steps: int, h: Hyperparams,
                rng: np.random.Generator, reset, step, allowed=None, on_transition=None) -> int:
    """Run ``n_steps`` epsilon-greedy decisions.

    ``reset(u)`` returns a start state (``u`` is a start-stream uniform it may
    use), ``step(a)`` returns ``(s2, done)``. ``allowed[s]`` (ascending action
    lists) restricts choices and the bootstrap max; without it every action
    is available.
    """
    q = qt.q.tolist()
    visit = qt.visit.tolist()
    rew = reward.tolist()
    all_actions = list(range(N_ACTIONS))
    gamma = h.discount
    e0, e1 = h.epsilon_start, h.epsilon_end
    decay = h.decay_steps(n_steps)
    policy_rng, start_rng = rng.spawn(2)

    s = -1
    i = 0
    while i < n_steps:
        c = min(_CHUNK, n_steps - i)
        draws = policy_rng.random((c, 2)).tolist()
        starts = start_rng.random(c).tolist()
        for j in range(c):
            if s < 0:
                s = reset(starts[j])
            acts = all_actions if allowed is None else allowed[s]
            eps = e0 + (e1 - e0) * min(i / decay, 1.0)
            row = q[s]
            u_eps, u_pick = draws[j]
            if u_eps < eps:
                a = acts[int(u_pick * len(acts))]
            else:
                a = acts[0]
                bv = row[a]
                for b in acts:
                    if row[b] > bv:
                        a, bv = b, row[b]
            s2, done = step(a)
            if on_transition is not None:
                on_transition(s, a, s2)
            nxt = all_actions if allowed is None else allowed[s2]
            best = 0.0
            if nxt:
                r2 = q[s2]
                best = r2[nxt[0]]
                for b in nxt:
                    if r2[b] > best:
                        best = r2[b]
            else:
                done = True
            row[a] += _lr(h, visit[s][a]) * (rew[s2] + gamma * best - row[a])
            visit[s][a] += 1
            i += 1
            s = -1 if done else s2
    qt.q[:] = q
    qt.visit[:] = visit
    return i


def train_online(env, recipe: PolicyRecipe, h: Hyperparams, rng: np.random.Generator,
                 qtable: QTable | None = None, recorder: TransitionTable | None = None,
                 name: str | None = None, seed: int | None = None, signature: str | None = None) -> Policy:
    """Learn by stepping the environment once per control interval.

    When ``recorder`` is given, every observed transition is also added to it,
    so the online run doubles as a transition-table build.
    """
    space: StateSpace = env.space
    qt = qtable.copy() if qtable is not None else QTable.zeros(space.n_states)
    reward = reward_vector(recipe.spec, space)
    before = env.interactions
    on_t = recorder.record if recorder is not None else None
    _q_learning(qt, reward, h.decisions, h, rng, env.reset, env.step, on_transition=on_t)
    return Policy(name or recipe.name, extract_greedy(qt), qt, recipe.name, ONLINE,
                  env.interactions - before, seed, h.to_dict(), signature)


class TableEnv:
    """Plays back a transition table as if it were the environment.

    Successors of each (state, action) pair follow a randomly shifted Weyl
    sequence: the n-th draw uses ``(phase + n*GOLDEN) % 1`` against the
    pair's cumulative counts. Every draw still lands on a successor with
    probability count/total, but the empirical frequencies converge far
    faster than with independent draws.
    """

    def __init__(self, pt: TransitionTable, rng: np.random.Generator, start_states=None,
                 episode_length: int = 104):
        n_pairs = pt.space.n_states * N_ACTIONS
        self.rows = pt.frozen()
        self.phase = rng.random(n_pairs)
        self.nsamp = np.zeros(n_pairs, dtype=np.int64)
        explored = pt.explored_states()
        self.start_states = list(start_states) if start_states is not None else explored
        if not self.start_states:
            raise ValueError("transition table holds no explored states")
        self.episode_length = episode_length
        self.interactions = 0  # never incremented: no environment is touched
        self._t = 0
        self._s = None

    def reset(self, u: float) -> int:
        self._t = 0
        self._s = self.start_states[int(u * len(self.start_states))]
        return self._s

    def step(self, a: int) -> tuple[int, bool]:
        sa = self._s * N_ACTIONS + a
        succ, cum, tot = self.rows[sa]
        if len(succ) == 1:
            s2 = succ[0]
        else:
            n = int(self.nsamp[sa])
            self.nsamp[sa] = n + 1
            u = (float(self.phase[sa]) + n * GOLDEN) % 1.0
            s2 = succ[bisect.bisect_right(cum, u * tot)]
        self._t += 1
        self._s = s2
        return s2, self._t >= self.episode_length

    def packed(self):
        """Flat successor arrays indexed by ``s * N_ACTIONS + a``."""
        n_pairs = len(self.phase)
        ptr = np.zeros(n_pairs + 1, dtype=np.int64)
        for sa, (succ, _, _) in self.rows.items():
            ptr[sa + 1] = len(succ)
        np.cumsum(ptr, out=ptr)
        succ_arr = np.zeros(ptr[-1], dtype=np.int64)
        cum_arr = np.zeros(ptr[-1])
        tot_arr = np.zeros(n_pairs)
        for sa, (succ, cum, tot) in self.rows.items():
            succ_arr[ptr[sa]:ptr[sa + 1]] = succ
            cum_arr[ptr[sa]:ptr[sa + 1]] = cum
            tot_arr[sa] = tot
        return ptr, succ_arr, cum_arr, tot_arr


def allowed_actions(pt: TransitionTable) -> list[list[int]]:
    return [[int(a) for a in np.flatnonzero(row)] for row in pt.explored_mask()]


def _offline_compiled(qt: QTable, reward: np.ndarray, env: TableEnv, h: Hyperparams,
                      rng: np.random.Generator) -> None:
    from ._kernel import offline_chunk, pack_allowed

    allow_ptr, allow_idx = pack_allowed(qt.mask)
    sa_ptr, succ, cum, tot = env.packed()
    starts = np.asarray(env.start_states, dtype=np.int64)
    n_steps = h.offline_steps
    decay = float(h.decay_steps(n_steps))
    policy_rng, start_rng = rng.spawn(2)
    s, t_ep, i = -1, 0, 0
    while i < n_steps:
        c = min(_CHUNK, n_steps - i)
        pol = policy_rng.random((c, 2))
        st = start_rng.random(c)
        s, t_ep = offline_chunk(qt.q, qt.visit, allow_ptr, allow_idx, sa_ptr, succ, cum, tot,
                                env.phase, env.nsamp, reward, starts, pol, st, s, t_ep, i,
                                h.discount, h.epsilon_start, h.epsilon_end, decay,
                                h.learning_rate, h.lr_decay_visits, h.lr_decay_power,
                                env.episode_length, N_ACTIONS)
        i += c


def train_offline(pt: TransitionTable, recipe: PolicyRecipe, h: Hyperparams,
                  rng: np.random.Generator, start_states=None, qtable: QTable | None = None,
                  name: str | None = None, seed: int | None = None,
                  compiled: bool = True) -> Policy:
    """Learn from ``pt`` alone: next states are sampled, never observed.

    Unexplored actions are masked out of both the choice and the bootstrap.
    ``compiled=False`` runs the same loop in plain Python (identical result,
    much slower).
    """
    space = pt.space
    covered = pt.coverage.get("covered_fraction")
    if covered is not None and covered < 0.95:
        log.warning("%s: table covers only %.1f%% of reachable pairs", recipe.name, 100 * covered)
    mask = pt.explored_mask()
    qt = qtable.copy() if qtable is not None else QTable.zeros(space.n_states)
    qt.mask = mask
    reward = reward_vector(recipe.spec, space)
    policy_rng, table_rng = rng.spawn(2)
    env = TableEnv(pt, table_rng, start_states, h.episode_length)
    n_masked = int((~mask[pt.explored_states()]).sum())
    if n_masked:
        log.info("%s: %d unexplored pairs at explored states masked out", recipe.name, n_masked)
    if compiled:
        _offline_compiled(qt, reward, env, h, policy_rng)
    else:
        _q_learning(qt, reward, h.offline_steps, h, policy_rng, env.reset, env.step,
                    allowed=allowed_actions(pt))
    if env.interactions != 0:
        raise AssertionError("offline training touched the environment")
    return Policy(name or recipe.name, extract_greedy(qt), qt, recipe.name, OFFLINE,
                  env.interactions, seed, h.to_dict(), pt.signature)


SUMMARY_COLUMNS = ("action", "d_threads", "d_freq", "d_qp", "states")


def greedy_histogram(policy: Policy, states=None) -> list[dict]:
    """How many states pick each action; ``states`` restricts the count."""
    idx = np.arange(len(policy.greedy)) if states is None else np.asarray(states)
    counts = np.bincount(policy.greedy[idx], minlength=N_ACTIONS)
    return [{"action": a, "d_threads": d[0], "d_freq": d[1], "d_qp": d[2],
             "states": int(counts[a])} for a, d in enumerate(ACTIONS)]


def value_iteration(pt: TransitionTable, recipe, discount: float, tol: float = 1e-9,
                    max_iter: int = 100_000) -> QTable:
    """Fixed point of Q(s,a) = sum_s' P(s'|s,a) (R(s') + discount * max_a' Q(s',a')).

    Only explored pairs carry values; states with no explored action are
    worth 0 as successors. ``recipe`` may be a PolicyRecipe or a reward vector.
    """
    space = pt.space
    reward = (recipe if isinstance(recipe, np.ndarray)
              else reward_vector(getattr(recipe, "spec", recipe), space))
    mat, pairs = pt.transition_matrix()
    mask = pt.explored_mask()
    n = space.n_states
    s_of, a_of = np.divmod(pairs, N_ACTIONS)
    qsa = np.zeros(len(pairs))
    v = np.zeros(n)
    for _ in range(max_iter):
        new = mat @ (reward + discount * v)
        diff = np.max(np.abs(new - qsa)) if len(new) else 0.0
        qsa = new
        full = np.full((n, N_ACTIONS), -np.inf)
        full[s_of, a_of] = qsa
        v = full.max(axis=1)
        v[~np.isfinite(v)] = 0.0
        if diff < tol:
            break
    else:
        raise OracleFailure(f"value iteration did not reach tol={tol} in {max_iter} sweeps")
    q = np.zeros((n, N_ACTIONS))
    q[s_of, a_of] = qsa
    visit = np.zeros((n, N_ACTIONS), dtype=np.int64)
    return QTable(q, visit, mask)


def oracle_agreement(policy: Policy, oracle: QTable, min_visits: int = 50) -> dict:
    """Compare a learned greedy map with value iteration on well-visited states.

    ``optimal`` counts states where the learned action is one of the
    oracle's optimal actions; ``identical`` additionally requires the same
    tie-break, which exact oracle ties make sensitive to sampling noise.
    """
    mask = oracle.mask if oracle.mask is not None else np.ones_like(oracle.q, dtype=bool)
    sel = policy.qtable.visit.sum(axis=1) >= min_visits
    idx = np.flatnonzero(sel)
    ref = extract_greedy(oracle)
    vals = np.where(mask, oracle.q, -np.inf)
    best = vals.max(axis=1)
    tol = 1e-9 * np.maximum(1.0, np.abs(best))
    chosen = vals[idx, policy.greedy[idx]]
    optimal = chosen >= best[idx] - tol[idx]
    n = len(idx)
    return {"states": n,
            "optimal": float(optimal.mean()) if n else 1.0,
            "identical": float((policy.greedy[idx] == ref[idx]).mean()) if n else 1.0}
