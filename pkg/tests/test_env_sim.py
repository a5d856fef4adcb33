import dataclasses
import itertools

import pytest

from kaaslab.env_sim import (TRAINING_IDS, VALIDATION_IDS, EncodeSession, EnvParams,
                             PowerModelParams, SessionFinished, TrainingEnv, catalog,
                             catalog_by_id, contention_factor, power, step_interval,
                             system_power)
from kaaslab.mdp_core import KnobLadder, KnobSetting, StateSpace

LADDER = KnobLadder()
QUIET = EnvParams(noise=False)
PAPER_POWER = PowerModelParams(alpha=2.0, beta=1.0, gamma=17.0)


def test_saturated_power_default():
    assert power(12, 2.0) == 125.0


def test_power_hand_example():
    assert power(4, 1.5, PAPER_POWER) == 4 * (2.0 * 2.25 + 1.0) + 17 == 39.0
    assert power(4, 1.5) == 4 * (0.5 * 2.25 + 7.0) + 17 == 49.5
    assert power(12, 2.0, PAPER_POWER) == 125.0


def test_idle_baseline():
    assert system_power([]) == 17.0


def test_power_monotone():
    for p in (PowerModelParams(), PAPER_POWER):
        for f in LADDER.freq:
            vals = [power(n, f, p) for n in LADDER.threads]
            assert all(a < b for a, b in zip(vals, vals[1:]))
        for n in LADDER.threads:
            vals = [power(n, f, p) for f in LADDER.freq]
            assert all(a < b for a, b in zip(vals, vals[1:]))


def test_power_rejects_zero_threads():
    with pytest.raises(ValueError):
        power(0, 1.5)


def _session(profile="v2", knobs=None, seed=0, frame=0):
    knobs = knobs or KnobSetting.nearest(LADDER, 4, 1.6, 32)
    return EncodeSession(catalog_by_id()[profile], knobs, seed=seed, frames_done=frame)


def test_regular_operating_point_quality():
    # pi^R sits near QP 37: 53.4 - 0.42*37 = 37.86 dB before content offsets
    s = _session(knobs=KnobSetting.nearest(LADDER, 3.4, 1.4, 37))
    s.profile = dataclasses.replace(s.profile, scenes=(type(s.profile.scenes[0])(0, 1.0, 0.0),))
    obs = step_interval(s, params=QUIET)
    assert obs.psnr == pytest.approx(37.86, abs=0.01)
    assert 24.0 <= obs.fps


def test_premium_operating_point_quality():
    assert QUIET.base_psnr(24) == pytest.approx(43.32)


def test_contention_halves_fps_only():
    a, b = _session(), _session()
    full = step_interval(a, 1.0, params=QUIET)
    half = step_interval(b, 0.5, params=QUIET)
    assert half.fps == pytest.approx(full.fps / 2, rel=1e-15)
    assert half.psnr == full.psnr
    assert half.power == full.power


def test_contention_factor():
    assert contention_factor(10, 12) == 1.0
    assert contention_factor(12, 12) == 1.0
    assert contention_factor(24, 12) == 0.5


def test_bad_contention_rejected():
    with pytest.raises(ValueError):
        step_interval(_session(), 0.0)


def test_finished_session_raises():
    s = _session(frame=2500)
    with pytest.raises(SessionFinished):
        step_interval(s)


def test_noise_free_is_pure():
    a = step_interval(_session(frame=480, seed=1), params=QUIET)
    b = step_interval(_session(frame=480, seed=99), params=QUIET)
    assert a == b


def test_seed_determinism():
    s1, s2 = _session(seed=5), _session(seed=5)
    for _ in range(50):
        assert step_interval(s1) == step_interval(s2)


def test_fps_and_psnr_monotonicity():
    p = QUIET
    for n, q in itertools.product(LADDER.threads, LADDER.qp):
        fs = [p.base_fps(n, f, q, 1.0) for f in LADDER.freq]
        assert all(a <= b for a, b in zip(fs, fs[1:]))
        cs = [p.base_fps(n, 1.6, q, c) for c in (0.5, 1.0, 1.5, 2.0)]
        assert all(a >= b for a, b in zip(cs, cs[1:]))
    ps = [p.base_psnr(q) for q in LADDER.qp]
    assert all(a > b for a, b in zip(ps, ps[1:]))


def test_catalog():
    cat = catalog()
    assert len(cat) == 7
    assert [p.id for p in cat] == list(TRAINING_IDS + VALIDATION_IDS)
    assert all(p.length_frames == 2500 for p in cat)
    by = catalog_by_id()
    assert by["v1"].max_complexity > max(by[v].max_complexity for v in ("v2", "v3", "v4"))
    for p in cat:
        assert all(0.5 <= s.complexity <= 2.0 for s in p.scenes)


def test_interval_frames_and_time():
    s = _session()
    obs = step_interval(s, params=QUIET)
    assert obs.interval_frames == 24 and s.frames_done == 24
    assert obs.seconds == pytest.approx(24 / obs.fps)


def test_training_env_counts_interactions():
    env = TrainingEnv(StateSpace.default(), seed=3)
    env.reset()
    for _ in range(10):
        env.step(13)
    assert env.interactions == 11


def test_env_params_round_trip():
    p = EnvParams(fps_scale=5.5, power_model=PAPER_POWER)
    assert EnvParams.from_dict(p.to_dict()) == p
