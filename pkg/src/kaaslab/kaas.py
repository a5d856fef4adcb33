"""Knowledge base of trained policies, looked up by user class and resource mode."""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .env_sim import (TRAINING_IDS, EncodeSession, EnvParams, TrainingEnv, catalog_by_id,
                      step_interval)
from .learning import (OFFLINE_HYPERPARAMS, Hyperparams, Policy, train_offline, train_online)
from .mdp_core import ACTIONS, KnobLadder, KnobSetting, StateSpace, apply_action
from .rewards import PI_P_HI, PI_P_LO, PI_R_HI, PI_R_LO, POLICY_NAMES, builtin_recipes
from .transitions import TransitionTable, build_signature, explore, merge

log = logging.getLogger(__name__)

FORMAT = "kaaslab-knowledge-base"
VERSION = 1
_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


class KnowledgeMiss(LookupError):
    pass


class IncompatiblePolicy(ValueError):
    pass


class UserClass(str, Enum):
    REGULAR = "REGULAR"
    PREMIUM = "PREMIUM"


class Mode(str, Enum):
    FULL = "FULL"
    MINIMIZED = "MINIMIZED"


ROUTES = {
    (UserClass.REGULAR, Mode.FULL): PI_R_HI,
    (UserClass.PREMIUM, Mode.FULL): PI_P_HI,
    (UserClass.REGULAR, Mode.MINIMIZED): PI_R_LO,
    (UserClass.PREMIUM, Mode.MINIMIZED): PI_P_LO,
}


def start_knobs(ladder: KnobLadder) -> KnobSetting:
    """Where every encode begins before its policy takes over."""
    return KnobSetting.nearest(ladder, 4, 1.6, 32)


@dataclass(frozen=True)
class RunStats:
    threads: float
    freq: float
    qp: float
    psnr: float
    delta: float  # percent of encoding time below real time
    seconds: float


def run_policy(policy: Policy, profile, seed: int, space: StateSpace,
               ladder: KnobLadder = KnobLadder(), params: EnvParams = EnvParams(),
               knobs: KnobSetting | None = None) -> RunStats:
    """Encode ``profile`` start to finish with ``policy`` acting every interval.

    Averages are weighted by encoding time, so a slow interval counts for as
    long as it took.
    """
    sess = EncodeSession(profile, knobs or start_knobs(ladder), seed=seed)
    acc = np.zeros(4)
    late = total = 0.0
    while not sess.finished:
        nth, freq, qp = sess.knobs.values(ladder)
        obs = step_interval(sess, ladder=ladder, params=params)
        acc += obs.seconds * np.array([nth, freq, qp, obs.psnr])
        total += obs.seconds
        if obs.fps < 24.0:
            late += obs.seconds
        s = space.observe_index(obs.fps, obs.psnr, obs.power)
        sess.knobs = apply_action(sess.knobs, ACTIONS[policy.act(s)], ladder)
    t, f, q, p = acc / total
    return RunStats(t, f, q, p, 100.0 * late / total, total)


def average_stats(runs: list[RunStats]) -> RunStats:
    cols = np.array([[r.threads, r.freq, r.qp, r.psnr, r.delta, r.seconds] for r in runs])
    return RunStats(*(float(v) for v in cols.mean(axis=0)))


@dataclass(frozen=True)
class KBEntry:
    policy: Policy
    avg_cores: float
    avg_quality: float
    measured_on: tuple[str, ...]
    avg_freq: float = 0.0
    avg_qp: float = 0.0
    delta: float = 0.0

    def meta(self) -> dict:
        return {"name": self.policy.name, "avg_cores": self.avg_cores,
                "avg_quality": self.avg_quality, "avg_freq": self.avg_freq,
                "avg_qp": self.avg_qp, "delta": self.delta,
                "measured_on": list(self.measured_on)}


@dataclass
class KnowledgeBase:
    signature: str
    space: StateSpace
    ladder: KnobLadder = field(default_factory=KnobLadder)
    params: EnvParams = field(default_factory=EnvParams)
    entries: dict[str, KBEntry] = field(default_factory=dict)

    def register(self, policy: Policy, profiles=None, seeds=(0, 1)) -> KBEntry:
        """Measure ``policy`` on the training sequences and store it.

        Replaces any entry of the same name.
        """
        if policy.signature != self.signature:
            raise IncompatiblePolicy(
                f"policy {policy.name} built for {policy.signature}, knowledge base is "
                f"{self.signature}")
        by_id = catalog_by_id()
        profiles = list(profiles) if profiles else [by_id[i] for i in TRAINING_IDS]
        noisy = replace(self.params, noise=True)
        runs = [run_policy(policy, p, 1000 * k + i, self.space, self.ladder, noisy)
                for i, p in enumerate(profiles) for k in seeds]
        st = average_stats(runs)
        entry = KBEntry(policy, st.threads, st.psnr, tuple(p.id for p in profiles),
                        st.freq, st.qp, st.delta)
        # swap in a new mapping so concurrent readers keep a consistent view
        self.entries = {**self.entries, policy.name: entry}
        return entry

    def lookup(self, user_class, mode) -> Policy:
        return self.entry(user_class, mode).policy

    def entry(self, user_class, mode) -> KBEntry:
        name = ROUTES[(UserClass(user_class), Mode(mode))]
        hit = self.entries.get(name)
        if hit is None:
            raise KnowledgeMiss(f"no policy {name} for {UserClass(user_class).value}/"
                                f"{Mode(mode).value}")
        return hit

    def avg_cores(self, name: str) -> float:
        if name not in self.entries:
            raise KnowledgeMiss(name)
        return self.entries[name].avg_cores

    def missing(self) -> list[str]:
        return [n for n in POLICY_NAMES if n not in self.entries]

    @property
    def provisioned(self) -> bool:
        return not self.missing()

    def table(self) -> list[dict]:
        return [self.entries[n].meta() | {"trained_with": self.entries[n].policy.trained_with,
                                          "env_interactions": self.entries[n].policy.env_interactions}
                for n in sorted(self.entries)]

    def equals(self, other: "KnowledgeBase") -> bool:
        if self.signature != other.signature or set(self.entries) != set(other.entries):
            return False
        return all(self.entries[n].meta() == other.entries[n].meta()
                   and self.entries[n].policy.equals(other.entries[n].policy)
                   for n in self.entries)


# ---------------------------------------------------------------------------
# persistence

def _write(zf: zipfile.ZipFile, name: str, text: str) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, text)


def save(kb: KnowledgeBase, path) -> None:
    manifest = {"format": FORMAT, "version": VERSION, "signature": kb.signature,
                "bins": kb.space.to_dict(), "ladder": kb.ladder.to_dict(),
                "env": kb.params.to_dict(),
                "entries": [kb.entries[n].meta() for n in sorted(kb.entries)],
                "missing": kb.missing()}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for n in sorted(kb.entries):
            _write(zf, f"policies/{n}.json",
                   json.dumps(kb.entries[n].policy.to_dict(), separators=(",", ":")))
    Path(path).write_bytes(buf.getvalue())


def load(path, expected_signature: str | None = None) -> KnowledgeBase:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
            raise IncompatiblePolicy(f"{path} is not a knowledge base this version can read")
        sig = manifest["signature"]
        if expected_signature is not None and sig != expected_signature:
            raise IncompatiblePolicy(
                f"knowledge base signature {sig} does not match {expected_signature}")
        b = manifest["bins"]
        lad = manifest["ladder"]
        kb = KnowledgeBase(sig, StateSpace.from_edges(b["fps"], b["psnr"], b["power"]),
                           KnobLadder(tuple(lad["threads"]), tuple(lad["freq"]), tuple(lad["qp"])),
                           EnvParams.from_dict(manifest["env"]))
        entries = {}
        for m in manifest["entries"]:
            pol = Policy.from_dict(json.loads(zf.read(f"policies/{m['name']}.json")))
            entries[m["name"]] = KBEntry(pol, m["avg_cores"], m["avg_quality"],
                                         tuple(m["measured_on"]), m["avg_freq"], m["avg_qp"],
                                         m["delta"])
        kb.entries = entries
    return kb


# ---------------------------------------------------------------------------
# provisioning

PROVISION_ONLINE = Hyperparams(learning_rate=1.0, lr_decay_visits=3,
                               training_frames=24 * 300_000)


@dataclass
class ProvisionReport:
    table: TransitionTable
    interactions: dict[str, int]
    explore_interactions: int


def provision(space: StateSpace | None = None, ladder: KnobLadder = KnobLadder(),
              params: EnvParams = EnvParams(), seed: int = 0, table: TransitionTable | None = None,
              min_visits: int = 10, online: Hyperparams = PROVISION_ONLINE,
              offline: Hyperparams = OFFLINE_HYPERPARAMS,
              recipes=None) -> tuple[KnowledgeBase, ProvisionReport]:
    """Build all four policies the way the serving system bootstraps.

    pi^R is learned online while every transition it sees is recorded; that
    recording, merged with an exploration pass, then trains the other three
    policies without touching the environment.
    """
    space = space or StateSpace.default()
    recipes = recipes or builtin_recipes(space)
    sig = build_signature(space, ladder, params)
    seeds = np.random.SeedSequence(seed).spawn(4)
    explored = 0
    if table is None:
        env = TrainingEnv(space, ladder, params, seed=int(seeds[0].generate_state(1)[0]))
        table = explore(env, min_visits=min_visits)
        explored = table.coverage["interactions"]
    elif table.signature != sig:
        raise IncompatiblePolicy(f"transition table {table.signature} does not match {sig}")

    kb = KnowledgeBase(sig, space, ladder, params)
    recorder = TransitionTable(space, sig)
    env = TrainingEnv(space, ladder, params, seed=int(seeds[1].generate_state(1)[0]))
    base = train_online(env, recipes[PI_R_HI], online, np.random.default_rng(seeds[2]),
                        recorder=recorder, seed=seed, signature=sig)
    full = merge(table, recorder)
    full.coverage = dict(table.coverage)
    interactions = {PI_R_HI: base.env_interactions}
    kb.register(base)
    off_seeds = seeds[3].spawn(3)
    for name, ss in zip((PI_P_HI, PI_R_LO, PI_P_LO), off_seeds):
        pol = train_offline(full, recipes[name], offline, np.random.default_rng(ss), seed=seed)
        interactions[name] = pol.env_interactions
        kb.register(pol)
    log.info("provisioned %s", ", ".join(f"{n}: {v} interactions" for n, v in interactions.items()))
    return kb, ProvisionReport(full, interactions, explored)
