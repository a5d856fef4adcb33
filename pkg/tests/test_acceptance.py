"""Acceptance gate. Each test prints one PASS/FAIL line for its criterion."""

import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from kaaslab import env_sim, harness, kaas, transitions
from kaaslab.env_sim import EnvParams, PowerModelParams, power
from kaaslab.learning import OFFLINE_HYPERPARAMS, extract_greedy, oracle_agreement, train_offline, value_iteration
from kaaslab.mdp_core import N_ACTIONS, KnobLadder
from kaaslab.rewards import PI_P_HI, PI_P_LO, PI_R_HI, PI_R_LO, POLICY_NAMES, builtin_recipes, reward_vector
from kaaslab.scheduler import Strategy

from conftest import verdict

pytestmark = pytest.mark.acceptance

PSNR_WINDOWS = {PI_P_HI: (43.4, 1.5), PI_P_LO: (39.8, 1.5), PI_R_HI: (38.1, 1.0),
                PI_R_LO: (38.0, 1.0)}


@pytest.fixture(scope="module")
def table30(space):
    t0 = time.perf_counter()
    t = transitions.explore(env_sim.TrainingEnv(space, seed=0), min_visits=30)
    return t, time.perf_counter() - t0


def _draw_l1(t, rng, n_pairs=25, draws=10_000):
    # the busiest rows have the most successors, which is where sampling goes wrong
    rows = sorted(t.rows, key=lambda sa: (-len(t.rows[sa]), sa))[:n_pairs]
    worst = 0.0
    for sa in rows:
        s, a = divmod(sa, N_ACTIONS)
        p = t.probabilities(s, a)
        got = np.bincount([t.sample_next(s, a, rng) for _ in range(draws)],
                          minlength=t.space.n_states) / draws
        want = np.zeros(t.space.n_states)
        want[list(p)] = list(p.values())
        worst = max(worst, float(np.abs(got - want).sum()))
    return worst


def _max_row_error(t):
    err = 0.0
    for sa, row in t.rows.items():
        s, a = divmod(sa, N_ACTIONS)
        err = max(err, abs(sum(t.probabilities(s, a).values()) - 1.0))
    return err


def test_c1_transition_tables(space, table30):
    t0 = time.perf_counter()
    t10 = transitions.explore(env_sim.TrainingEnv(space, seed=0), min_visits=10)
    secs10 = time.perf_counter() - t0
    t30, secs30 = table30
    rng = np.random.default_rng(0)
    stoch = max(_max_row_error(t10), _max_row_error(t30))
    l1 = max(_draw_l1(t10, rng), _draw_l1(t30, rng))
    ok = stoch <= 1e-9 and l1 < 0.05 and secs10 < 120 and secs30 < 120
    verdict(1, ok, f"row error {stoch:.1e}, worst L1 {l1:.4f}, "
                   f"explore {secs10:.0f}s/{secs30:.0f}s")
    assert ok


def _agreement(table, space):
    recipes = builtin_recipes(space)
    out = {}
    for i, name in enumerate(POLICY_NAMES):
        pol = train_offline(table, recipes[name], OFFLINE_HYPERPARAMS,
                            np.random.default_rng(i), seed=i)
        oracle = value_iteration(table, recipes[name], OFFLINE_HYPERPARAMS.discount)
        out[name] = oracle_agreement(pol, oracle, min_visits=50)
    return out


def test_c2_offline_matches_oracle(space, table10, table30):
    t0 = time.perf_counter()
    res = {10: _agreement(table10, space), 30: _agreement(table30[0], space)}
    secs = time.perf_counter() - t0
    worst = min(r["optimal"] for per in res.values() for r in per.values())
    ident = min(r["identical"] for per in res.values() for r in per.values())
    ok = worst >= 0.95 and secs < 2 * 300
    verdict(2, ok, f"worst optimal-action agreement {worst:.3f} "
                   f"(strict index {ident:.3f}), {secs:.0f}s for 8 policies")
    assert ok


def test_c3_zero_interactions(provisioned):
    _, rep = provisioned
    counts = [rep.interactions[n] for n in (PI_P_HI, PI_R_LO, PI_P_LO)]
    ok = counts == [0, 0, 0] and rep.interactions[PI_R_HI] > 0
    verdict(3, ok, f"offline interactions {counts}, online pi^R {rep.interactions[PI_R_HI]}")
    assert ok


def test_c4_validation(provisioned):
    kb, _ = provisioned
    assert kb.params.noise
    by_id = env_sim.catalog_by_id()
    t0 = time.perf_counter()
    stats = {n: kaas.average_stats([kaas.run_policy(kb.entries[n].policy, by_id[v], s, kb.space,
                                                    kb.ladder, kb.params)
                                    for v in env_sim.VALIDATION_IDS for s in range(5)])
             for n in POLICY_NAMES}
    secs = time.perf_counter() - t0
    psnr_ok = all(abs(stats[n].psnr - c) <= w for n, (c, w) in PSNR_WINDOWS.items())
    thr_ok = (stats[PI_R_LO].threads < stats[PI_R_HI].threads
              and stats[PI_P_LO].threads < stats[PI_P_HI].threads)
    delta_ok = all(st.delta <= 6.0 for st in stats.values())
    ok = psnr_ok and thr_ok and delta_ok and secs < 600
    detail = ", ".join(f"{n} {st.psnr:.2f}dB {st.threads:.2f}thr d={st.delta:.1f}%"
                       for n, st in stats.items())
    verdict(4, ok, f"{detail}, {secs:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def sweep_rows(provisioned):
    kb, _ = provisioned
    t0 = time.perf_counter()
    rows = harness.sweep(kb, intervals=(10.0,), combinations=5, repeats=3)
    return rows, time.perf_counter() - t0


def _by(rows, strategy):
    return sorted((r for r in rows if r["strategy"] == strategy.value),
                  key=lambda r: r["premium_fraction"])


def test_c5_one_pol_deficit(sweep_rows):
    rows, _ = sweep_rows
    two = _by(rows, Strategy.TWO_POL)[-1]
    one = _by(rows, Strategy.ONE_POL)[-1]
    gap = two["avg_psnr_premium"] - one["avg_psnr_premium"]
    ok = two["premium_fraction"] == 1.0 and 4.0 <= gap <= 6.5
    verdict(5, ok, f"ONE_POL premium PSNR {gap:.2f} dB below TWO_POL at fraction 1.0")
    assert ok


def test_c6_three_tier_throughput(sweep_rows):
    rows, secs = sweep_rows
    three, two = _by(rows, Strategy.THREE_TIER), _by(rows, Strategy.TWO_POL)
    ratios = [a["users_per_minute"] / b["users_per_minute"] for a, b in zip(three, two)]
    at25 = ratios[[r["premium_fraction"] for r in three].index(0.25)]
    gaps = [b["avg_psnr_premium"] - a["avg_psnr_premium"] for a, b in zip(three, two)
            if a["premium_fraction"] > 0]
    ok = min(ratios) >= 1.0 and at25 >= 1.10 and max(gaps) <= 2.9 and secs < 1200
    verdict(6, ok, f"users/min ratios {[round(r, 2) for r in ratios]}, "
                   f"worst premium gap {max(gaps):.2f} dB, sweep {secs:.0f}s")
    assert ok


def test_c7_s2_monotone(sweep_rows):
    rows, _ = sweep_rows
    three = _by(rows, Strategy.THREE_TIER)
    s2 = [r["s2_time_pct"] for r in three]
    se = [r["s2_time_pct_se"] for r in three]
    ok = all(s2[i + 1] + max(se[i], se[i + 1]) >= s2[i] for i in range(len(s2) - 1))
    verdict(7, ok, "S2 time % " + ", ".join(f"{v:.1f}±{e:.1f}" for v, e in zip(s2, se)))
    assert ok


def test_c8_power_model():
    lad, p = KnobLadder(), PowerModelParams()
    worst = 0.0
    for nth in lad.threads:
        for f in lad.freq:
            exact = nth * (Fraction(p.alpha) * Fraction(f) ** 2 + Fraction(p.beta)) + Fraction(p.gamma)
            worst = max(worst, abs(power(nth, f, p) - float(exact)))
    sat = power(lad.threads[-1], lad.freq[-1], p)
    ok = worst <= 1e-12 and sat == 125.0
    verdict(8, ok, f"{len(lad.threads) * len(lad.freq)} ladder points, max error {worst:.1e}, "
                   f"saturated {sat} W")
    assert ok


def test_c9_scaling_invariance(space, table10):
    recipes = builtin_recipes(space)
    changed = []
    for name in POLICY_NAMES:
        spec = recipes[name].spec
        base = extract_greedy(value_iteration(table10, reward_vector(spec, space), 0.9))
        for k in (0.5, 2.0, 10.0):
            g = extract_greedy(value_iteration(table10, reward_vector(spec.scaled(k), space), 0.9))
            if not np.array_equal(g, base):
                changed.append((name, k, int((g != base).sum())))
    verdict(9, not changed, f"greedy maps changed: {changed or 'none'} over k in 0.5, 2, 10")
    assert not changed


def _cli(cwd: Path, *args):
    r = subprocess.run([sys.executable, "-m", "kaaslab", *args], cwd=cwd,
                       capture_output=True, check=True)
    return r.stdout


PIPELINE = (
    ("explore", "--table", "table.json", "--csv", "table.csv"),
    ("train", "--policy", PI_P_HI, "--offline", "--table", "table.json", "--out", "train"),
    ("provision", "--table", "table.json", "--kb", "kb.zip", "--save-table", "merged.json"),
    ("kb", "inspect", "--kb", "kb.zip"),
    ("simulate", "--kb", "kb.zip", "--trace", "--out", "sim"),
    ("sweep", "--kb", "kb.zip", "--combinations", "1", "--repeats", "1", "--out", "sweep"),
    ("reward-sweep", "--out", "landscape"),
)


def test_c10_cli_determinism(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    outs = []
    for d in dirs:
        d.mkdir()
        outs.append([_cli(d, *cmd) for cmd in PIPELINE])
    files = [sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file()) for d in dirs]
    differ = [str(f) for f in files[0] if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes()]
    differ += [c[0] for c, x, y in zip(PIPELINE, *outs) if x != y]
    ok = files[0] == files[1] and not differ
    verdict(10, ok, f"{len(PIPELINE)} commands, {len(files[0])} files, differing: "
                    f"{differ or 'none'}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
