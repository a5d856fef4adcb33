"""Workloads, experiment runs, the sweep matrix and their CSV outputs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env_sim import VALIDATION_IDS, EnvParams, catalog_by_id
from .kaas import KnowledgeBase, UserClass
from .scheduler import TIERS, ClientRecord, NodeSimulation, Strategy

FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)
INTERVALS = (5.0, 10.0, 15.0)
STRATEGIES = (Strategy.THREE_TIER, Strategy.TWO_POL, Strategy.ONE_POL)


@dataclass(frozen=True)
class WorkloadSpec:
    arrival_interval_s: float = 10.0
    premium_fraction: float = 0.25
    n_clients: int = 10
    profile_ids: tuple[str, ...] = VALIDATION_IDS
    seed: int = 0

    def __post_init__(self):
        if not self.arrival_interval_s > 0:
            raise ValueError("arrival interval must be positive")
        if not 0.0 <= self.premium_fraction <= 1.0:
            raise ValueError("premium fraction must lie in [0, 1]")
        if self.n_clients < 1:
            raise ValueError("need at least one client")


def generate_workload(spec: WorkloadSpec, rng: np.random.Generator | None = None,
                      profiles=None) -> list[ClientRecord]:
    """``floor(fraction * n)`` premium clients in shuffled order, arriving every interval."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    by_id = catalog_by_id(profiles)
    n = spec.n_clients
    n_prem = math.floor(spec.premium_fraction * n + 1e-9)
    classes = [UserClass.PREMIUM] * n_prem + [UserClass.REGULAR] * (n - n_prem)
    order = rng.permutation(n)
    picks = rng.integers(0, len(spec.profile_ids), size=n)
    return [ClientRecord(i, classes[order[i]], by_id[spec.profile_ids[picks[i]]],
                         i * spec.arrival_interval_s)
            for i in range(n)]


def _fresh(clients: list[ClientRecord], seed: int) -> list[ClientRecord]:
    out = []
    for c in clients:
        s = int(np.random.SeedSequence([seed, c.id]).generate_state(1)[0])
        out.append(ClientRecord(c.id, c.user_class, c.profile, c.arrival_time, seed=s))
    return out


@dataclass
class ClientSummary:
    id: int
    user_class: str
    profile: str
    arrival: float
    start: float
    finish: float
    psnr: float
    delta_pct: float
    threads: float
    freq: float
    qp: float
    intervals: int


@dataclass
class MetricsReport:
    strategy: str
    users_per_minute: float
    admissions_per_minute: float
    avg_psnr_regular: float
    avg_psnr_premium: float
    delta_violation_pct: float
    tier_time_pct: dict[str, float]
    total_seconds: float
    clients: list[ClientSummary] = field(default_factory=list)
    events: list = field(default_factory=list, repr=False)
    trace: list | None = field(default=None, repr=False)


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def run_experiment(workload, strategy, kb: KnowledgeBase, env_params: EnvParams | None = None,
                   seed: int = 0, physical_cores: float | None = None,
                   trace: bool = False) -> MetricsReport:
    """Serve ``workload`` (a WorkloadSpec or client list) to completion."""
    clients = generate_workload(workload) if isinstance(workload, WorkloadSpec) else workload
    missing = kb.missing()
    strategy = Strategy(strategy)
    if missing:
        from .kaas import KnowledgeMiss
        raise KnowledgeMiss(f"knowledge base lacks {', '.join(missing)}")
    sim = NodeSimulation(kb, _fresh(clients, seed), strategy, env_params, physical_cores, trace)
    sim.run()
    span = sim.makespan
    minutes = span / 60.0
    starts = [c.start_time for c in sim.clients]
    summaries = []
    for c in sim.clients:
        m = c.metrics
        summaries.append(ClientSummary(c.id, c.user_class.value, c.profile.id, c.arrival_time,
                                       c.start_time, c.finish_time, m.mean("psnr"), m.delta_pct,
                                       m.mean("threads"), m.mean("freq"), m.mean("qp"),
                                       m.intervals))
    late = sum(c.metrics.late_intervals for c in sim.clients)
    total = sum(c.metrics.intervals for c in sim.clients)
    tier_pct = {t.value: (min(100.0, 100.0 * sim.tier_time[t] / span) if span > 0 else
                          (100.0 if t == TIERS[0] else 0.0)) for t in TIERS}
    return MetricsReport(
        strategy=strategy.value,
        users_per_minute=len(sim.clients) / minutes if minutes > 0 else math.inf,
        admissions_per_minute=(len(starts) / (max(starts) / 60.0) if max(starts) > 0
                               else math.inf),
        avg_psnr_regular=_mean([s.psnr for s in summaries if s.user_class == "REGULAR"]),
        avg_psnr_premium=_mean([s.psnr for s in summaries if s.user_class == "PREMIUM"]),
        delta_violation_pct=100.0 * late / total if total else 0.0,
        tier_time_pct=tier_pct,
        total_seconds=span,
        clients=summaries,
        events=sim.events,
        trace=sim.trace,
    )


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = ("interval_s", "premium_fraction", "strategy", "runs", "users_per_minute",
                 "users_per_minute_se", "admissions_per_minute", "avg_psnr_regular",
                 "avg_psnr_premium", "delta_violation_pct", "s0_time_pct", "s1_time_pct",
                 "s2_time_pct", "s2_time_pct_se")


def _se(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def _nanmean(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    return float(v.mean()) if len(v) else math.nan


def sweep(kb: KnowledgeBase, intervals=(10.0,), fractions=FRACTIONS, strategies=STRATEGIES,
          combinations: int = 5, repeats: int = 3, n_clients: int = 10, seed: int = 0,
          env_params: EnvParams | None = None, progress=None) -> list[dict]:
    """Average every (interval, fraction, strategy) cell over workloads and runs.

    Workload ``k`` of a cell uses seed ``seed + k`` for its class order and
    video picks, so all strategies see the same requests; run ``r`` reseeds
    the content noise.
    """
    rows = []
    for interval in intervals:
        for frac in fractions:
            specs = [WorkloadSpec(interval, frac, n_clients, seed=seed + k)
                     for k in range(combinations)]
            for strat in strategies:
                reps = [run_experiment(sp, strat, kb, env_params, seed=1000 * sp.seed + r)
                        for sp in specs for r in range(repeats)]
                upm = [m.users_per_minute for m in reps]
                s2 = [m.tier_time_pct["S2"] for m in reps]
                rows.append({
                    "interval_s": interval, "premium_fraction": frac,
                    "strategy": Strategy(strat).value, "runs": len(reps),
                    "users_per_minute": float(np.mean(upm)), "users_per_minute_se": _se(upm),
                    "admissions_per_minute": float(np.mean([m.admissions_per_minute
                                                            for m in reps])),
                    "avg_psnr_regular": _nanmean([m.avg_psnr_regular for m in reps]),
                    "avg_psnr_premium": _nanmean([m.avg_psnr_premium for m in reps]),
                    "delta_violation_pct": float(np.mean([m.delta_violation_pct for m in reps])),
                    "s0_time_pct": float(np.mean([m.tier_time_pct["S0"] for m in reps])),
                    "s1_time_pct": float(np.mean([m.tier_time_pct["S1"] for m in reps])),
                    "s2_time_pct": float(np.mean(s2)), "s2_time_pct_se": _se(s2),
                })
                if progress is not None:
                    progress(rows[-1])
    return rows


# ---------------------------------------------------------------------------
# CSV writers

def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


REPORT_COLUMNS = ("client", "user_class", "profile", "arrival_s", "start_s", "finish_s",
                  "avg_psnr", "delta_violation_pct", "avg_threads", "avg_freq", "avg_qp",
                  "intervals")


def write_report(report: MetricsReport, path) -> None:
    """Per-client rows followed by one aggregate row (client = ALL)."""
    rows = [{"client": c.id, "user_class": c.user_class, "profile": c.profile,
             "arrival_s": float(c.arrival), "start_s": float(c.start), "finish_s": float(c.finish),
             "avg_psnr": c.psnr, "delta_violation_pct": c.delta_pct, "avg_threads": c.threads,
             "avg_freq": c.freq, "avg_qp": c.qp, "intervals": c.intervals}
            for c in report.clients]
    write_rows(path, REPORT_COLUMNS, rows)
    summary = {"strategy": report.strategy, "users_per_minute": report.users_per_minute,
               "admissions_per_minute": report.admissions_per_minute,
               "avg_psnr_regular": report.avg_psnr_regular,
               "avg_psnr_premium": report.avg_psnr_premium,
               "delta_violation_pct": report.delta_violation_pct,
               "total_seconds": report.total_seconds,
               **{f"{k.lower()}_time_pct": v for k, v in report.tier_time_pct.items()}}
    summary_path = Path(path).with_name(Path(path).stem + "_summary.csv")
    write_rows(summary_path, tuple(summary), [summary])


def write_events(report: MetricsReport, path) -> None:
    rows = [{"time_s": float(e.time), "event": e.kind,
             "client": "" if e.client is None else e.client, "tier": e.tier}
            for e in report.events]
    write_rows(path, ("time_s", "event", "client", "tier"), rows)


TRACE_COLUMNS = ("clock_s", "client", "nth", "freq", "qp", "fps", "psnr", "power")


def write_trace(report: MetricsReport, path) -> None:
    rows = [{k: getattr(t, k) for k in TRACE_COLUMNS} for t in (report.trace or [])]
    write_rows(path, TRACE_COLUMNS, rows)


def tier_time_from_events(events, span: float) -> dict[str, float]:
    """Recompute tier shares from the event log alone."""
    acc = {t.value: 0.0 for t in TIERS}
    tier, last = TIERS[0].value, 0.0
    for e in events:
        if e.kind == "tier_change":
            acc[tier] += e.time - last
            tier, last = e.tier, e.time
    acc[tier] += span - last
    return {k: (100.0 * v / span if span > 0 else (100.0 if k == TIERS[0].value else 0.0))
            for k, v in acc.items()}
