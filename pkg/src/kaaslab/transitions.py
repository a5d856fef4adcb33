"""Empirical transition table: exploration, sampling and persistence."""

from __future__ import annotations

import bisect
import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .mdp_core import ACTIONS, N_ACTIONS, Action, KnobLadder, State, StateSpace

log = logging.getLogger(__name__)

FORMAT = "kaaslab-transition-table"
VERSION = 1


class UnexploredPair(KeyError):
    pass


class IncompatibleTable(ValueError):
    pass


def build_signature(space: StateSpace, ladder: KnobLadder, env_params) -> str:
    """Hash of everything that invalidates recorded transitions when changed."""
    payload = {"bins": space.to_dict(), "ladder": ladder.to_dict(),
               "env": env_params.to_dict() if env_params is not None else None}
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TransitionTable:
    space: StateSpace
    signature: str
    seed: int | None = None
    build_date: str | None = None
    coverage: dict = field(default_factory=dict)
    rows: dict[int, dict[int, int]] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- indexing helpers -------------------------------------------------

    def _sa(self, s, a) -> int:
        si = self.space.index(s) if isinstance(s, State) else int(s)
        ai = ACTIONS.index(a) if isinstance(a, Action) else int(a)
        return si * N_ACTIONS + ai

    def _s(self, s) -> int:
        return self.space.index(s) if isinstance(s, State) else int(s)

    # -- counts -----------------------------------------------------------

    def record(self, s, a, s2, n: int = 1) -> None:
        sa = self._sa(s, a)
        row = self.rows.setdefault(sa, {})
        s2i = self._s(s2)
        row[s2i] = row.get(s2i, 0) + n
        self._cache.pop(sa, None)
        self._cache.pop("frozen", None)

    def count(self, s, a, s2) -> int:
        return self.rows.get(self._sa(s, a), {}).get(self._s(s2), 0)

    def total(self, s, a) -> int:
        return sum(self.rows.get(self._sa(s, a), {}).values())

    def probabilities(self, s, a) -> dict[int, float]:
        row = self.rows.get(self._sa(s, a))
        if not row:
            raise UnexploredPair((s, a))
        tot = sum(row.values())
        return {k: v / tot for k, v in row.items()}

    def explored_mask(self) -> np.ndarray:
        mask = np.zeros((self.space.n_states, N_ACTIONS), dtype=bool)
        for sa, row in self.rows.items():
            if row:
                mask.flat[sa] = True
        return mask

    def state_visits(self) -> np.ndarray:
        """Total recorded departures from each state."""
        out = np.zeros(self.space.n_states, dtype=np.int64)
        for sa, row in self.rows.items():
            out[sa // N_ACTIONS] += sum(row.values())
        return out

    def explored_states(self) -> list[int]:
        return sorted({sa // N_ACTIONS for sa, row in self.rows.items() if row})

    def n_transitions(self) -> int:
        return sum(sum(r.values()) for r in self.rows.values())

    # -- sampling ---------------------------------------------------------

    def _cumulative(self, sa: int):
        hit = self._cache.get(sa)
        if hit is None:
            row = self.rows.get(sa)
            if not row:
                raise UnexploredPair(divmod(sa, N_ACTIONS))
            succ = sorted(row)
            cum, acc = [], 0
            for k in succ:
                acc += row[k]
                cum.append(acc)
            hit = (succ, cum, acc)
            self._cache[sa] = hit
        return hit

    def sample_next(self, s, a, rng: np.random.Generator) -> int:
        succ, cum, tot = self._cumulative(self._sa(s, a))
        u = rng.random() * tot
        return succ[bisect.bisect_right(cum, u)]

    def frozen(self):
        """Per-pair successor lists and cumulative counts, keyed by ``sa``."""
        hit = self._cache.get("frozen")
        if hit is None:
            hit = {sa: self._cumulative(sa) for sa, row in self.rows.items() if row}
            self._cache["frozen"] = hit
        return hit

    def transition_matrix(self) -> tuple[sparse.csr_matrix, np.ndarray]:
        """Row-stochastic matrix over explored pairs and the pair indices of its rows."""
        pairs = np.array(sorted(sa for sa, row in self.rows.items() if row), dtype=np.int64)
        indptr, cols, vals = [0], [], []
        for sa in pairs:
            row = self.rows[int(sa)]
            tot = sum(row.values())
            for k in sorted(row):
                cols.append(k)
                vals.append(row[k] / tot)
            indptr.append(len(cols))
        mat = sparse.csr_matrix((np.array(vals, dtype=float), np.array(cols, dtype=np.int64),
                                 np.array(indptr, dtype=np.int64)),
                                shape=(len(pairs), self.space.n_states))
        return mat, pairs

    # -- algebra ----------------------------------------------------------

    def check_compatible(self, other: "TransitionTable") -> None:
        if self.signature != other.signature:
            raise IncompatibleTable(f"signature {self.signature} != {other.signature}")

    def copy(self) -> "TransitionTable":
        return TransitionTable(self.space, self.signature, self.seed, self.build_date,
                               dict(self.coverage), {k: dict(v) for k, v in self.rows.items()})

    def same_counts(self, other: "TransitionTable") -> bool:
        strip = lambda t: {k: v for k, v in t.rows.items() if v}
        return self.signature == other.signature and strip(self) == strip(other)


def record(t: TransitionTable, s, a, s2) -> None:
    t.record(s, a, s2)


def sample_next(t: TransitionTable, s, a, rng: np.random.Generator) -> int:
    return t.sample_next(s, a, rng)


def merge(t1: TransitionTable, t2: TransitionTable) -> TransitionTable:
    t1.check_compatible(t2)
    out = t1.copy()
    for sa, row in t2.rows.items():
        dst = out.rows.setdefault(sa, {})
        for k, v in row.items():
            dst[k] = dst.get(k, 0) + v
    out.coverage = {}
    return out


# ---------------------------------------------------------------------------
# exploration

def explore(env, min_visits: int = 10, budget: int = 2_000_000,
            max_teleports_per_state: int | None = None) -> TransitionTable:
    """Visit every reachable (state, action) pair at least ``min_visits`` times.

    At each state the least-visited action is taken. Once the current state
    is saturated, the explorer jumps back to a recorded context (sequence,
    frame, knobs) where an under-covered state was last seen. States that
    keep failing to reappear are given up on and reported in the coverage
    summary, as are pairs left short when ``budget`` interactions run out.
    """
    if min_visits < 1:
        raise ValueError("min_visits must be >= 1")
    space = env.space
    sig = build_signature(space, env.ladder, env.params)
    table = TransitionTable(space, sig)
    counts = np.zeros((space.n_states, N_ACTIONS), dtype=np.int64)
    contexts: dict[int, list] = {}
    attempts: dict[int, int] = {}
    max_attempts = max_teleports_per_state or 4 * N_ACTIONS * min_visits
    given_up: set[int] = set()

    def remember(s: int):
        sess = env.session
        ctx = contexts.setdefault(s, [])
        entry = (env.profiles.index(sess.profile), sess.frames_done - sess.last.interval_frames,
                 sess.knobs)
        if len(ctx) < 16:
            ctx.append(entry)
        else:
            ctx[int(env.rng.integers(16))] = entry

    start = env.interactions
    s = env.reset()
    remember(s)
    pending: list[int] = []
    while env.interactions - start < budget:
        row = counts[s]
        a = int(np.argmin(row))
        if row[a] >= min_visits:
            if not pending:
                pending = [i for i in np.flatnonzero(counts.min(axis=1) < min_visits)
                           if i in contexts and i not in given_up]
                pending.sort(key=lambda i: (counts[i].sum(), i))
                if not pending:
                    break
            target = pending.pop(0)
            if counts[target].min() >= min_visits or target in given_up:
                continue
            attempts[target] = attempts.get(target, 0) + 1
            if attempts[target] > max_attempts:
                given_up.add(target)
                continue
            ctx = contexts[target]
            pidx, frame, knobs = ctx[attempts[target] % len(ctx)]
            s = env.reset_to(env.profiles[pidx], frame, knobs)
            remember(s)
            if env.session.finished:
                s = env.reset()
                remember(s)
            continue
        s2, done = env.step(a)
        counts[s, a] += 1
        table.record(s, a, s2)
        remember(s2)
        s = env.reset() if done else s2
        if done:
            remember(s)

    observed = sorted(contexts)
    reachable = [si for si in observed if si not in given_up]
    short = [(int(si), int(ai)) for si in reachable for ai in range(N_ACTIONS)
             if counts[si, ai] < min_visits]
    n_pairs = len(reachable) * N_ACTIONS
    table.coverage = {
        "min_visits": min_visits,
        "interactions": int(env.interactions - start),
        "budget_exhausted": bool(env.interactions - start >= budget),
        "observed_states": len(observed),
        "reachable_pairs": n_pairs,
        "covered_pairs": n_pairs - len(short),
        "covered_fraction": (n_pairs - len(short)) / n_pairs if n_pairs else 0.0,
        # seen at least once but never reproducible on demand
        "unreachable_states": sorted(int(i) for i in given_up),
        "undercovered_pairs": short,
    }
    log.info("explored %d states, %d/%d pairs covered in %d interactions",
             len(observed), n_pairs - len(short), n_pairs, table.coverage["interactions"])
    return table


# ---------------------------------------------------------------------------
# persistence

def save(t: TransitionTable, path) -> None:
    cells = [[sa // N_ACTIONS, sa % N_ACTIONS, s2, n]
             for sa in sorted(t.rows) for s2, n in sorted(t.rows[sa].items()) if n]
    doc = {"format": FORMAT, "version": VERSION, "signature": t.signature,
           "seed": t.seed, "build_date": t.build_date, "bins": t.space.to_dict(),
           "coverage": t.coverage, "cells": cells}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load(path, expected_signature: str | None = None) -> TransitionTable:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise IncompatibleTable(f"{path} is not a transition table")
    if doc["version"] != VERSION:
        raise IncompatibleTable(f"unsupported table version {doc['version']}")
    if expected_signature is not None and doc["signature"] != expected_signature:
        raise IncompatibleTable(
            f"table signature {doc['signature']} does not match {expected_signature}; "
            "bins, ladders or environment changed since it was built")
    b = doc["bins"]
    space = StateSpace.from_edges(b["fps"], b["psnr"], b["power"])
    cov = doc["coverage"]
    if "undercovered_pairs" in cov:
        cov["undercovered_pairs"] = [tuple(p) for p in cov["undercovered_pairs"]]
    t = TransitionTable(space, doc["signature"], doc["seed"], doc["build_date"], cov)
    for s, a, s2, n in doc["cells"]:
        t.rows.setdefault(s * N_ACTIONS + a, {})[s2] = n
    return t


def export_csv(t: TransitionTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fps_bin", "psnr_bin", "power_bin", "action", "next_fps_bin",
                    "next_psnr_bin", "next_power_bin", "count", "probability"])
        for sa in sorted(t.rows):
            row = t.rows[sa]
            tot = sum(row.values())
            s, a = divmod(sa, N_ACTIONS)
            for s2, n in sorted(row.items()):
                w.writerow([*t.space.state(s), "%+d%+d%+d" % ACTIONS[a], *t.space.state(s2),
                            n, f"{n / tot:.6f}"])
