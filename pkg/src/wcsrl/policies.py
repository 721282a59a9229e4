"""Policy objects evaluated against the environment.

A policy maps a noisy observation (plus the step index and a sampling
generator) to a JointAction. Heuristic allocators, Riccati control,
and trained agents all share this surface so evaluation can treat
them uniformly; the allocator/controller callables are also used as
training-time providers for the halves of the action that are not
being learned.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from wcsrl import baselines
from wcsrl.environment import JointAction, Observation
from wcsrl.learner import TrainedAgents, controller_slice
from wcsrl.neuralnet import GaussianActor

Allocator = Callable[[Observation, int], np.ndarray]
Controller = Callable[[Observation, int], np.ndarray]


# ---------------------------------------------------------------------------
# allocator callables


def equal_allocator(m: int, p_total: float) -> Allocator:
    alpha = baselines.equal_power(m, p_total)

    def fn(obs: Observation, t: int) -> np.ndarray:
        return alpha

    return fn


def zero_allocator(m: int) -> Allocator:
    alpha = np.zeros(m)

    def fn(obs: Observation, t: int) -> np.ndarray:
        return alpha

    return fn


def round_robin_allocator(m: int, n_active: int, p_total: float) -> Allocator:
    def fn(obs: Observation, t: int) -> np.ndarray:
        return baselines.round_robin(m, n_active, p_total, t)

    return fn


def channel_aware_allocator(n_active: int, p_total: float) -> Allocator:
    def fn(obs: Observation, t: int) -> np.ndarray:
        return baselines.channel_aware(obs.channel, n_active, p_total)

    return fn


def control_aware_allocator(n_active: int, p_total: float) -> Allocator:
    def fn(obs: Observation, t: int) -> np.ndarray:
        return baselines.control_aware(obs.plant, n_active, p_total)

    return fn


def make_allocator(
    name: str, m: int, n_active: int, p_total: float
) -> Allocator:
    """Baseline allocator registry; all_on is the everyone-transmits alias."""
    if name in ("equal", "all_on"):
        return equal_allocator(m, p_total)
    if name == "zero":
        return zero_allocator(m)
    if name == "round_robin":
        return round_robin_allocator(m, n_active, p_total)
    if name == "channel_aware":
        return channel_aware_allocator(n_active, p_total)
    if name == "control_aware":
        return control_aware_allocator(n_active, p_total)
    raise ValueError(f"unknown allocator {name!r}")


# ---------------------------------------------------------------------------
# controllers


def riccati_controller(
    gains: list[np.ndarray],
    u_low: Optional[float] = None,
    u_high: Optional[float] = None,
) -> Controller:
    """Per-plant state feedback u_i = -K_i x_i on the observed states,
    clipped to the actuator interval when one is configured."""

    def fn(obs: Observation, t: int) -> np.ndarray:
        u = np.stack([baselines.lqr_control(k, x) for k, x in zip(gains, obs.plant)])
        if u_low is not None:
            u = np.clip(u, u_low, u_high)
        return u

    return fn


def zero_controller(m: int, input_dim: int) -> Controller:
    u = np.zeros((m, input_dim))

    def fn(obs: Observation, t: int) -> np.ndarray:
        return u

    return fn


# ---------------------------------------------------------------------------
# evaluation policies


class HeuristicPolicy:
    """Fixed allocator plus fixed controller."""

    def __init__(self, allocator: Allocator, controller: Controller) -> None:
        self.allocator = allocator
        self.controller = controller

    def act(self, obs: Observation, t: int, rng: np.random.Generator) -> JointAction:
        return JointAction(alpha=self.allocator(obs, t), u=self.controller(obs, t))


class AgentPolicy:
    """Trained agents with optional fallbacks for action halves they do not produce.

    stochastic=False acts with the deterministic mean pushed through the
    structural heads; stochastic=True re-samples like during training.
    """

    def __init__(
        self,
        agents: TrainedAgents,
        allocator: Optional[Allocator] = None,
        controller: Optional[Controller] = None,
        stochastic: bool = False,
    ) -> None:
        self.agents = agents
        self.allocator = allocator
        self.controller = controller
        self.stochastic = stochastic

    def _actor_out(
        self, actor: GaussianActor, vec: np.ndarray, rng: np.random.Generator
    ) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        if self.stochastic:
            sample = actor.sample(vec, rng)
            return sample.alpha, sample.u
        return actor.act_mean(vec)

    def act(self, obs: Observation, t: int, rng: np.random.Generator) -> JointAction:
        agents = self.agents
        alpha = None
        u = None
        if agents.topology == "single" and agents.actor is not None:
            a, uu = self._actor_out(agents.actor, obs.stacked()[None, :], rng)
            alpha = None if a is None else a[0]
            u = None if uu is None else uu[0]
        elif agents.actor is not None:
            a, _ = self._actor_out(agents.actor, obs.stacked()[None, :], rng)
            alpha = a[0]
        if alpha is None:
            if self.allocator is None:
                raise ValueError("policy produces no allocation and has no allocator")
            alpha = self.allocator(obs, t)
        if agents.rc_actors:
            cols = []
            for i, actor in enumerate(agents.rc_actors):
                vec = controller_slice([obs], alpha[None, :], i)
                _, uu = self._actor_out(actor, vec, rng)
                cols.append(uu[0, 0, :])
            u = np.stack(cols)
        if u is None:
            if self.controller is None:
                raise ValueError("policy produces no control input and has no controller")
            u = self.controller(obs, t)
        return JointAction(alpha=alpha, u=u)
