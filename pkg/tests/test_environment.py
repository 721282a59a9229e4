"""Closed-loop environment tests.

Proves:
 Group 1: Constraint signals
   1.  Sum-power signal: sum(alpha) - (1-gamma) * budget by hand
   2.  Region signal: -0.05 inside, 0.95 outside for gamma=0.99, budget 5
   3.  Discounted signal sums fold the budget correctly (brute-force check)
   4.  Penalized cost adds multiplier-weighted signals
 Group 2: Stepping
   5.  Dropped packets leave the plant open loop, delivered ones act
   6.  Stage cost charges the realized (post-switch) input on the current state
   7.  Linear batch transition equals per-plant stepping
   8.  force_delivery short-circuits the lottery
   9.  Bad actions raise (shape, negative power, non-finite)
 Group 3: Observation and reproducibility
  10.  Observation layout: channel entries first, then plant states
  11.  Observation noise has the configured variance; zero noise is exact
  12.  Identical generators give identical trajectories
  13.  reset() honors init kinds
"""
from __future__ import annotations

import numpy as np
import pytest

from wcsrl.dynamics import CostWeights, PlantModel, unstable_drift
from wcsrl.environment import (
    ConstraintSpec,
    JointAction,
    SystemState,
    WirelessControlEnv,
    penalized_cost,
)
from wcsrl.wireless import ChannelModel


def make_env(
    m=2,
    rng_seed=0,
    constraint=None,
    obs_noise=None,
    gamma=0.99,
    force_delivery=False,
    process_noise=0.0,
    init_kind="normal",
):
    plants = [
        PlantModel(
            kind="linear",
            a_mat=unstable_drift(1.05 + 0.02 * i),
            b_mat=np.eye(3),
            process_noise_cov=process_noise * np.eye(3),
        )
        for i in range(m)
    ]
    channel = ChannelModel(distances=np.linspace(1.0, 2.0, m), path_loss_exponent=2.0)
    return WirelessControlEnv(
        plants=plants,
        channel=channel,
        weights=CostWeights(q=np.eye(3), r=np.eye(3)),
        rng=np.random.Generator(np.random.PCG64(rng_seed)),
        gamma=gamma,
        constraint=constraint,
        obs_noise_cov=obs_noise,
        init_kind=init_kind,
        force_delivery=force_delivery,
    )


# Group 1 -------------------------------------------------------------------


def test_sum_power_signal():
    spec = ConstraintSpec(kind="sum_power", power_budget=50.0)
    sig = spec.signal(np.zeros((2, 3)), np.array([1.0, 2.0]), 0.99)
    assert sig.shape == (1,)
    assert sig[0] == pytest.approx(3.0 - 0.5, abs=1e-12)


def test_region_signal_values():
    spec = ConstraintSpec(kind="region", region_half_width=15.0, region_budget=5.0)
    inside = np.array([[1.0, -14.9, 0.0]])
    outside = np.array([[15.1, 0.0, 0.0]])
    assert spec.signal(inside, np.zeros(1), 0.99)[0] == pytest.approx(-0.05, abs=1e-12)
    assert spec.signal(outside, np.zeros(1), 0.99)[0] == pytest.approx(0.95, abs=1e-12)
    # any coordinate outside trips the indicator
    mixed = np.array([[0.0, 0.0, -16.0], [1.0, 1.0, 1.0]])
    assert np.allclose(spec.signal(mixed, np.zeros(2), 0.99), [0.95, -0.05], atol=1e-12)


def test_discounted_folding_brute_force():
    """The per-step signal is built so that sum_t gamma^t l_t equals the
    discounted constraint term minus the budget share accrued so far.
    Verify against an explicit double loop."""
    gamma = 0.9
    budget = 5.0
    spec = ConstraintSpec(kind="region", region_half_width=1.0, region_budget=budget)
    rng = np.random.Generator(np.random.PCG64(13))
    xs = rng.uniform(-2.0, 2.0, size=(40, 1, 3))
    signal_sum = sum(
        gamma**t * spec.signal(xs[t], np.zeros(1), gamma)[0] for t in range(40)
    )
    indicator_sum = sum(
        gamma**t * float((np.abs(xs[t, 0]) > 1.0).any()) for t in range(40)
    )
    budget_share = (1 - gamma) * budget * sum(gamma**t for t in range(40))
    assert signal_sum == pytest.approx(indicator_sum - budget_share, abs=1e-12)
    # infinite-horizon limit of the budget share is exactly the budget
    assert (1 - gamma) * budget * (1 / (1 - gamma)) == pytest.approx(budget, abs=1e-12)


def test_penalized_cost():
    assert penalized_cost(2.0, np.array([1.0, -0.5]), np.array([3.0, 2.0])) == pytest.approx(
        2.0 + 3.0 - 1.0, abs=1e-12
    )
    with pytest.raises(ValueError):
        penalized_cost(1.0, np.zeros(2), np.zeros(3))


# Group 2 -------------------------------------------------------------------


def test_switched_actuation_in_step():
    env = make_env(m=2)
    state = SystemState(x=np.ones((2, 3)), h=np.array([100.0, 0.0]), t=0)
    # plant 0: huge snr, certain delivery; plant 1: zero power, certain drop
    action = JointAction(alpha=np.array([100.0, 0.0]), u=5.0 * np.ones((2, 3)))
    res = env.step(state, action)
    assert res.delivered[0]
    assert not res.delivered[1]
    assert np.array_equal(res.realized_u[0], action.u[0])
    assert np.array_equal(res.realized_u[1], np.zeros(3))
    # open-loop plant follows A x exactly (zero process noise)
    a1 = env.plants[1].a_mat
    assert np.allclose(res.next_state.x[1], a1 @ state.x[1], atol=1e-12)


def test_stage_cost_uses_realized_input():
    env = make_env(m=2)
    state = SystemState(x=np.ones((2, 3)), h=np.array([100.0, 0.0]), t=0)
    action = JointAction(alpha=np.array([100.0, 0.0]), u=2.0 * np.ones((2, 3)))
    res = env.step(state, action)
    # per plant: x'x = 3; delivered adds u'u = 12, dropped adds nothing
    assert res.per_plant_costs[0] == pytest.approx(3.0 + 12.0, abs=1e-12)
    assert res.per_plant_costs[1] == pytest.approx(3.0, abs=1e-12)
    assert res.stage_cost == pytest.approx(res.per_plant_costs.sum(), abs=1e-12)


def test_batch_transition_matches_per_plant():
    env = make_env(m=3, force_delivery=True)
    rng = np.random.Generator(np.random.PCG64(21))
    state = SystemState(x=rng.standard_normal((3, 3)), h=np.ones(3), t=0)
    action = JointAction(alpha=np.ones(3), u=rng.standard_normal((3, 3)))
    res = env.step(state, action)
    for i, plant in enumerate(env.plants):
        expect = plant.a_mat @ state.x[i] + plant.b_mat @ action.u[i]
        assert np.allclose(res.next_state.x[i], expect, atol=1e-12)


def test_force_delivery():
    env = make_env(m=2, force_delivery=True)
    state = SystemState(x=np.zeros((2, 3)), h=np.zeros(2), t=0)
    res = env.step(state, JointAction(alpha=np.zeros(2), u=np.ones((2, 3))))
    assert res.delivered.all()  # even at zero snr
    assert np.array_equal(res.realized_u, np.ones((2, 3)))


def test_bad_actions_raise():
    env = make_env(m=2)
    state = SystemState(x=np.zeros((2, 3)), h=np.ones(2), t=0)
    with pytest.raises(ValueError):
        env.step(state, JointAction(alpha=np.zeros(3), u=np.zeros((2, 3))))
    with pytest.raises(ValueError):
        env.step(state, JointAction(alpha=np.zeros(2), u=np.zeros((3, 3))))
    with pytest.raises(ValueError):
        env.step(state, JointAction(alpha=np.array([-0.1, 0.0]), u=np.zeros((2, 3))))
    with pytest.raises(ValueError):
        env.step(state, JointAction(alpha=np.array([np.nan, 0.0]), u=np.zeros((2, 3))))


# Group 3 -------------------------------------------------------------------


def test_observation_layout():
    env = make_env(m=2)
    state = SystemState(
        x=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), h=np.array([7.0, 8.0]), t=0
    )
    obs = env.observe(state)  # zero obs noise by default here
    assert np.array_equal(obs.channel, [7.0, 8.0])
    assert np.array_equal(obs.plant, state.x)
    stacked = obs.stacked()
    assert np.array_equal(stacked, [7.0, 8.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def test_observation_noise_variance():
    var = np.concatenate([np.full(2, 4.0), np.full(6, 0.25)])
    env = make_env(m=2, obs_noise=var, rng_seed=3)
    state = SystemState(x=np.zeros((2, 3)), h=np.zeros(2), t=0)
    chan = np.array([env.observe(state).channel for _ in range(20_000)])
    plant = np.array([env.observe(state).plant.ravel() for _ in range(20_000)])
    assert abs(chan.var() - 4.0) < 0.15
    assert abs(plant.var() - 0.25) < 0.01
    assert abs(chan.mean()) < 0.05


def test_trajectory_determinism():
    costs = []
    for _ in range(2):
        env = make_env(m=2, rng_seed=77, process_noise=0.1, obs_noise=np.full(8, 1.0))
        state = env.reset()
        total = 0.0
        for t in range(25):
            env.observe(state)  # consumes noise draws, part of the stream
            res = env.step(state, JointAction(alpha=np.ones(2), u=np.zeros((2, 3))))
            total += res.stage_cost
            state = res.next_state
        costs.append(total)
    assert costs[0] == costs[1]


def test_reset_init_kinds():
    env = make_env(m=2, init_kind="zero")
    assert np.array_equal(env.reset().x, np.zeros((2, 3)))
    env_u = make_env(m=2, init_kind="uniform", rng_seed=5)
    env_u.init_scale = 0.05
    x0 = env_u.reset().x
    assert np.all(np.abs(x0) <= 0.05)
    assert np.any(x0 != 0)
