import numpy as np
import pytest

from kaaslab.mdp_core import FPS, POWER, PSNR, InvalidInput, State, StateSpace
from kaaslab.rewards import (PI_P_HI, PI_P_LO, PI_R_HI, PI_R_LO, Kind, RewardSpec, SubReward,
                             builtin_recipes, compose, eval_sub, fps_reward, psnr_high,
                             psnr_low, psnr_mid, recipe_from_config, reward_vector, sweep)

SP = StateSpace.default()
RECIPES = builtin_recipes(SP)


def psnr_bin(db):
    return SP.psnr.bin_of(db)


def test_fps_shape():
    sr = fps_reward(SP.fps)
    assert sr.values == (-1.0, 0.6, 1.0, 0.7)
    assert eval_sub(sr, SP.fps.bin_of(35.0)) == 1.0
    assert eval_sub(sr, SP.fps.bin_of(20.0)) == -1.0


def test_psnr_penalty_below_floor():
    for sr in (psnr_low(SP.psnr), psnr_mid(SP.psnr), psnr_high(SP.psnr)):
        for b in range(psnr_bin(36.0)):
            assert eval_sub(sr, b) == -1.0
        assert eval_sub(sr, psnr_bin(36.0)) > -1.0


def test_psnr_shapes_monotone():
    low, high, mid = psnr_low(SP.psnr).values, psnr_high(SP.psnr).values, psnr_mid(SP.psnr).values
    b36 = psnr_bin(36.0)
    assert low[b36] == 1.0 and low[-1] == pytest.approx(0.1)
    assert all(a >= b for a, b in zip(low[b36:], low[b36 + 1:]))
    assert high[b36] == pytest.approx(0.1) and high[psnr_bin(44.0)] == 1.0
    assert all(a <= b for a, b in zip(high[b36:], high[b36 + 1:]))
    assert mid[psnr_bin(39.5)] == mid[psnr_bin(40.5)] == 1.0
    assert mid[b36] == pytest.approx(0.2) and mid[-1] == pytest.approx(0.2)


def test_eval_sub_range():
    with pytest.raises(InvalidInput):
        eval_sub(fps_reward(SP.fps), 4)


def test_sub_reward_bounds():
    with pytest.raises(InvalidInput):
        SubReward(FPS, Kind.CUSTOM, (1.5, 0.0))


def test_compose_example():
    base = RECIPES[PI_R_HI].spec
    # the built-in power ramp has no exact 0.5 rung, so pin one
    flat = SubReward(POWER, Kind.CUSTOM, [0.5] * SP.power.n_bins)
    spec = RewardSpec(((0.7, base.sub_reward(PSNR)), (0.1, flat), (0.5, base.sub_reward(FPS))))
    s = State(SP.fps.bin_of(35.0), psnr_bin(36.0), 7)
    assert compose(spec, s) == pytest.approx(1.25)
    s2 = State(SP.fps.bin_of(35.0), psnr_bin(36.0), 3)
    pw = base.sub_reward(POWER).values[3]
    assert compose(base, s2) == pytest.approx(0.7 + 0.1 * pw + 0.5)


def test_premium_ignores_power():
    spec = RECIPES[PI_P_HI].spec
    assert spec.coefficient(POWER) == 0.0
    r = reward_vector(spec, SP).reshape(SP.dims)
    assert np.all(r == r[:, :, :1])


def test_zero_spec():
    spec = RECIPES[PI_R_HI].spec.scaled(0.0)
    assert np.all(reward_vector(spec, SP) == 0.0)
    assert not any(g for _, _, g in sweep(spec, 0.75, SP))


def test_builtin_coefficients():
    c = {n: tuple(r.spec.coefficient(m) for m in (PSNR, POWER, FPS)) for n, r in RECIPES.items()}
    assert c[PI_R_HI] == (0.7, 0.1, 0.5)
    assert c[PI_P_HI] == (0.7, 0.0, 0.5)
    assert c[PI_R_LO] == (0.7, 0.5, 0.5)
    assert c[PI_P_LO] == (0.7, 0.5, 0.5)
    assert RECIPES[PI_R_HI].spec.sub_reward(PSNR) == RECIPES[PI_R_LO].spec.sub_reward(PSNR)
    assert RECIPES[PI_R_HI].spec.sub_reward(PSNR).kind == Kind.PSNR_LOW
    assert RECIPES[PI_P_HI].spec.sub_reward(PSNR).kind == Kind.PSNR_HIGH
    assert RECIPES[PI_P_LO].spec.sub_reward(PSNR).kind == Kind.PSNR_MID


def test_reward_vector_matches_compose():
    for rec in RECIPES.values():
        r = reward_vector(rec.spec, SP)
        for i, s in enumerate(SP.states()):
            assert r[i] == pytest.approx(compose(rec.spec, s), abs=1e-12)


def test_goal_sets():
    goals = [s for s, _, g in sweep(RECIPES[PI_P_HI].spec, 0.75, SP) if g]
    assert goals
    assert all(s.fps_bin != 0 for s in goals)
    assert any(s.psnr_bin == SP.psnr.n_bins - 1 for s in goals)
    goals_r = [s for s, _, g in sweep(RECIPES[PI_R_HI].spec, 0.75, SP) if g]
    assert goals_r
    assert min(s.psnr_bin for s in goals_r) == psnr_bin(36.0)
    r = reward_vector(RECIPES[PI_R_HI].spec, SP)
    assert SP.state(int(np.argmax(r))).psnr_bin == psnr_bin(36.0)


def test_recipe_from_config():
    rec = recipe_from_config("custom", [
        {"metric": PSNR, "values": "PSNR_HIGH", "coefficient": 1.0},
        {"metric": FPS, "values": [-1, 0, 1, 0], "coefficient": 0.5},
        {"metric": POWER, "values": "POWER", "coefficient": 0.0},
    ], SP)
    assert rec.spec.sub_reward(FPS).values == (-1.0, 0.0, 1.0, 0.0)
    with pytest.raises(InvalidInput):
        recipe_from_config("bad", [{"metric": FPS, "values": "PSNR_LOW", "coefficient": 1}], SP)
    with pytest.raises(InvalidInput):
        recipe_from_config("short", [{"metric": FPS, "values": "FPS", "coefficient": 1}], SP)


def test_spec_rejects_negative_or_duplicate():
    sr = fps_reward(SP.fps)
    with pytest.raises(InvalidInput):
        RewardSpec(((-0.1, sr),))
    with pytest.raises(InvalidInput):
        RewardSpec(((0.1, sr), (0.2, sr)))
