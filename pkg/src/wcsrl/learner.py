"""Constrained advantage actor-critic over the lossy-link control system.

The primal-dual scheme: N synchronous workers roll the system under
the current stochastic policy, parameters update every seg_len steps
from pooled worker segments (policy step on advantage-weighted
log-probabilities, value step on squared cost-to-go error), and the
constraint multipliers take a projected ascent step at each episode
end using the discounted constraint-signal sums.

Two agent layouts exist. "single": one actor maps the full noisy
observation to allocations and/or control inputs. "separate": an
access-point actor maps the full observation to allocations, and one
small per-plant controller actor maps that plant's slice
[channel_i, state_i, alpha_i] to its control input; each actor has
its own critic, and only the access-point agent sees the constraint
penalty.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from wcsrl.baselines import control_aware, default_active_count, equal_power
from wcsrl.environment import JointAction, Observation, WirelessControlEnv
from wcsrl.neuralnet import (
    GaussianActor,
    HeadSpec,
    ValueNet,
    clip_global_norm,
    make_optimizer,
)

Provider = Callable[[Observation, int], np.ndarray]


class TrainingDivergedError(RuntimeError):
    """Raised when the Lagrangian estimate blows past the configured ceiling
    or a gradient goes non-finite; carries the episode index for diagnosis."""

    def __init__(self, message: str, episode: int) -> None:
        super().__init__(message)
        self.episode = episode


# ---------------------------------------------------------------------------
# core update math


def compute_cost_to_go(costs: np.ndarray, bootstrap, gamma: float) -> np.ndarray:
    """Discounted cost-to-go R_t = c_t + gamma * R_{t+1} over a segment.

    costs has shape (L,) or (L, N); bootstrap is the tail value estimate
    (zero at an episode boundary) with matching trailing shape.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.ndim not in (1, 2) or costs.shape[0] == 0:
        raise ValueError(f"costs must be (L,) or (L, N) with L >= 1, got {costs.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    running = np.asarray(bootstrap, dtype=float)
    if running.shape != costs.shape[1:]:
        raise ValueError(
            f"bootstrap shape {running.shape} does not match cost rows {costs.shape[1:]}"
        )
    out = np.empty_like(costs)
    for t in reversed(range(costs.shape[0])):
        running = costs[t] + gamma * running
        out[t] = running
    return out


def compute_advantage(returns: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sampled cost-to-go minus the critic's estimate."""
    returns = np.asarray(returns, dtype=float)
    values = np.asarray(values, dtype=float)
    if returns.shape != values.shape:
        raise ValueError(f"shape mismatch {returns.shape} vs {values.shape}")
    return returns - values


def dual_update(multipliers: np.ndarray, violation: np.ndarray, step_size: float) -> np.ndarray:
    """Projected ascent on the multipliers: [lam + step * violation]_+."""
    multipliers = np.asarray(multipliers, dtype=float)
    violation = np.asarray(violation, dtype=float)
    if multipliers.shape != violation.shape:
        raise ValueError(
            f"multiplier shape {multipliers.shape} != violation shape {violation.shape}"
        )
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    return np.maximum(0.0, multipliers + step_size * violation)


def dual_descent(
    primal_minimizer: Callable[[np.ndarray], object],
    constraint_evaluator: Callable[[object], np.ndarray],
    lam0: np.ndarray,
    step_size: float,
    iterations: int,
) -> tuple[np.ndarray, object]:
    """Alternate exact primal minimization with projected dual ascent.

    Returns the final multipliers and the primal solution at those
    multipliers.
    """
    lam = np.atleast_1d(np.asarray(lam0, dtype=float)).copy()
    if iterations < 1:
        raise ValueError("need at least one iteration")
    primal = None
    for _ in range(iterations):
        primal = primal_minimizer(lam)
        violation = np.atleast_1d(np.asarray(constraint_evaluator(primal), dtype=float))
        lam = dual_update(lam, violation, step_size)
    primal = primal_minimizer(lam)
    return lam, primal


@dataclass
class DualState:
    """Multipliers plus their dual-ascent bookkeeping."""

    multipliers: np.ndarray
    step_size: float
    history: list = field(default_factory=list)

    def update(self, violation: np.ndarray) -> None:
        self.multipliers = dual_update(self.multipliers, violation, self.step_size)
        self.history.append(np.asarray(violation, dtype=float).copy())


# ---------------------------------------------------------------------------
# settings and results


@dataclass
class TrainSettings:
    episodes: int
    horizon: int
    n_workers: int = 16
    seg_len: int = 5
    gamma: float = 0.99
    policy_lr: float = 5e-4
    value_lr: float = 5e-4
    dual_lr: float = 1e-4
    optimizer: str = "rmsprop"
    entropy_coef: float = 0.0
    grad_clip: float = 0.0
    hidden: tuple = (64, 64)
    init_log_std: float = float(np.log(0.5))
    topology: str = "single"
    learn_alloc: bool = True
    learn_control: bool = False
    alloc_head: Optional[str] = "simplex"
    alpha_total: Optional[float] = None
    control_low: Optional[float] = None
    control_high: Optional[float] = None
    pretrain_iters: int = 0
    pretrain_lr: float = 1e-2
    pretrain_batch: int = 64
    warm_episodes: int = 0
    lagrangian_ceiling: float = 1e12

    def __post_init__(self) -> None:
        if self.episodes < 1 or self.horizon < 1 or self.n_workers < 1 or self.seg_len < 1:
            raise ValueError("episodes, horizon, n_workers, seg_len must be positive")
        if self.topology not in ("single", "separate"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if not (self.learn_alloc or self.learn_control):
            raise ValueError("nothing to learn: enable learn_alloc and/or learn_control")


@dataclass
class EpisodeRow:
    episode: int
    lagrangian: float
    violations: np.ndarray
    multipliers: np.ndarray


@dataclass
class TrainedAgents:
    """Trained actors/critics for either layout; unused slots stay None/empty."""

    topology: str
    actor: Optional[GaussianActor] = None
    critic: Optional[ValueNet] = None
    rc_actors: list = field(default_factory=list)
    rc_critics: list = field(default_factory=list)


@dataclass
class TrainResult:
    agents: TrainedAgents
    dual: DualState
    log: list


# ---------------------------------------------------------------------------
# one actor-critic pair with segment buffers


class SegmentAgent:
    """Actor-critic pair collecting (obs, raw action, cost) per step for
    one worker batch, updated at segment boundaries by pooled summation."""

    def __init__(self, actor: GaussianActor, critic: ValueNet, settings: TrainSettings) -> None:
        self.actor = actor
        self.critic = critic
        self.settings = settings
        self.opt_actor = make_optimizer(settings.optimizer)
        self.opt_critic = make_optimizer(settings.optimizer)
        self._obs: list[np.ndarray] = []
        self._raw: list[np.ndarray] = []
        self._costs: list[np.ndarray] = []

    def record(self, obs: np.ndarray, raw: np.ndarray, costs: np.ndarray) -> None:
        self._obs.append(obs)
        self._raw.append(raw)
        self._costs.append(np.asarray(costs, dtype=float))

    def update(
        self,
        boot_obs: Optional[np.ndarray],
        at_end: bool,
        episode: int,
        update_actor: bool = True,
    ) -> None:
        if not self._obs:
            return
        s = self.settings
        costs = np.stack(self._costs)
        n_workers = costs.shape[1]
        bootstrap = (
            np.zeros(n_workers) if at_end else self.critic.values(boot_obs)
        )
        returns = compute_cost_to_go(costs, bootstrap, s.gamma).reshape(-1)
        obs_flat = np.concatenate(self._obs, axis=0)
        raw_flat = np.concatenate(self._raw, axis=0)
        values = self.critic.values(obs_flat)
        adv = compute_advantage(returns, values)

        if update_actor:
            grad = self.actor.grad_weighted_log_prob(obs_flat, raw_flat, adv)
            if s.entropy_coef > 0:
                grad = grad - s.entropy_coef * obs_flat.shape[0] * self.actor.grad_entropy()
            grad = clip_global_norm(grad, s.grad_clip)
            if not np.isfinite(grad).all():
                raise TrainingDivergedError("non-finite policy gradient", episode)
            self.actor.set_flat(self.opt_actor.step(self.actor.get_flat(), grad, s.policy_lr))

        vgrad = self.critic.grad_weighted(obs_flat, 2.0 * (values - returns))
        vgrad = clip_global_norm(vgrad, s.grad_clip)
        if not np.isfinite(vgrad).all():
            raise TrainingDivergedError("non-finite value gradient", episode)
        self.critic.set_flat(self.opt_critic.step(self.critic.get_flat(), vgrad, s.value_lr))

        self._obs.clear()
        self._raw.clear()
        self._costs.clear()


# ---------------------------------------------------------------------------
# observation plumbing


def stack_observations(obs_list: list[Observation]) -> np.ndarray:
    return np.stack([o.stacked() for o in obs_list])


def controller_slice(obs_list: list[Observation], alpha: np.ndarray, plant: int) -> np.ndarray:
    """Per-plant controller input [channel_i, state_i, alpha_i] across workers."""
    chan = np.array([o.channel[plant] for o in obs_list])
    states = np.stack([o.plant[plant] for o in obs_list])
    return np.concatenate([chan[:, None], states, alpha[:, plant : plant + 1]], axis=1)


# ---------------------------------------------------------------------------
# training


def _equal_power_provider(m: int, per_step_total: float) -> Provider:
    alloc = equal_power(m, per_step_total) if per_step_total > 0 else np.zeros(m)

    def provider(obs: Observation, t: int) -> np.ndarray:
        return alloc

    return provider


def _build_agents(
    env: WirelessControlEnv, settings: TrainSettings, rng: np.random.Generator
) -> TrainedAgents:
    m, p, q = env.m, env.state_dim, env.input_dim
    if settings.topology == "single":
        head = HeadSpec(
            n_plants=m,
            alloc=settings.alloc_head if settings.learn_alloc else None,
            alpha_total=settings.alpha_total,
            control_dim=q if settings.learn_control else 0,
            control_low=settings.control_low,
            control_high=settings.control_high,
        )
        actor = GaussianActor(env.obs_dim, head, settings.hidden, rng, settings.init_log_std)
        critic = ValueNet(env.obs_dim, settings.hidden, rng)
        return TrainedAgents(topology="single", actor=actor, critic=critic)

    agents = TrainedAgents(topology="separate")
    if settings.learn_alloc:
        head = HeadSpec(
            n_plants=m,
            alloc=settings.alloc_head,
            alpha_total=settings.alpha_total,
        )
        agents.actor = GaussianActor(env.obs_dim, head, settings.hidden, rng, settings.init_log_std)
        agents.critic = ValueNet(env.obs_dim, settings.hidden, rng)
    if settings.learn_control:
        rc_obs_dim = 1 + p + 1
        for _ in range(m):
            head = HeadSpec(
                n_plants=1,
                control_dim=q,
                control_low=settings.control_low,
                control_high=settings.control_high,
            )
            agents.rc_actors.append(
                GaussianActor(rc_obs_dim, head, settings.hidden, rng, settings.init_log_std)
            )
            agents.rc_critics.append(ValueNet(rc_obs_dim, settings.hidden, rng))
    return agents


def pretrain_allocation(
    actor: GaussianActor,
    env: WirelessControlEnv,
    settings: TrainSettings,
    control_provider: Optional[Provider],
    rng: np.random.Generator,
) -> None:
    """Warm-start the allocation head toward the state-norm heuristic.

    Rolls the system under that heuristic to gather observations, then
    fits the deterministic allocation output to the heuristic's choice
    by minibatch MSE steps.
    """
    m = env.m
    p_total = actor.head.alpha_total
    if p_total is None:
        p_total = (1.0 - settings.gamma) * (env.constraint.power_budget if env.constraint else m)
    n_active = default_active_count(m)

    def target_for(obs: Observation) -> np.ndarray:
        return control_aware(obs.plant, n_active, p_total)

    pool_obs: list[np.ndarray] = []
    pool_target: list[np.ndarray] = []
    while len(pool_obs) < max(512, 4 * settings.pretrain_batch):
        state = env.reset()
        for t in range(settings.horizon):
            obs = env.observe(state)
            alpha = target_for(obs)
            u = (
                control_provider(obs, t)
                if control_provider is not None
                else np.zeros((m, env.input_dim))
            )
            pool_obs.append(obs.stacked())
            pool_target.append(alpha)
            state = env.step(state, JointAction(alpha=alpha, u=u)).next_state

    obs_mat = np.stack(pool_obs)
    target_mat = np.stack(pool_target)
    opt = make_optimizer(settings.optimizer)
    for _ in range(settings.pretrain_iters):
        idx = rng.integers(0, obs_mat.shape[0], size=settings.pretrain_batch)
        _, grad = actor.grad_alloc_mse(obs_mat[idx], target_mat[idx])
        actor.set_flat(opt.step(actor.get_flat(), grad, settings.pretrain_lr))


def train(
    env_factory: Callable[[np.random.Generator], WirelessControlEnv],
    settings: TrainSettings,
    seed: int | np.random.SeedSequence,
    control_provider: Optional[Provider] = None,
    alloc_provider: Optional[Provider] = None,
    progress: Optional[Callable[[EpisodeRow], None]] = None,
) -> TrainResult:
    """Run the full primal-dual training loop and return the trained agents.

    env_factory builds one environment per worker around a dedicated
    generator. When allocation (control) is not learned, alloc_provider
    (control_provider) supplies that half of the action; both default
    to zero actions when absent. seed may be a SeedSequence so callers
    can keep training streams separate from scenario or evaluation draws.
    """
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
    else:
        seq = np.random.SeedSequence(seed)
    worker_seqs = seq.spawn(settings.n_workers)
    init_rng = np.random.Generator(np.random.PCG64(seq.spawn(1)[0]))
    sample_rng = np.random.Generator(np.random.PCG64(seq.spawn(1)[0]))
    pretrain_rng = np.random.Generator(np.random.PCG64(seq.spawn(1)[0]))

    envs = [env_factory(np.random.Generator(np.random.PCG64(s))) for s in worker_seqs]
    env0 = envs[0]
    if abs(env0.gamma - settings.gamma) > 1e-12:
        raise ValueError(
            f"environment discount {env0.gamma} does not match settings {settings.gamma}"
        )
    m, q = env0.m, env0.input_dim
    n_sig = env0.n_signals
    n = settings.n_workers

    agents = _build_agents(env0, settings, init_rng)
    seg_agents: list[tuple[str, SegmentAgent]] = []
    ap_agent = None
    if agents.actor is not None:
        ap_agent = SegmentAgent(agents.actor, agents.critic, settings)
        seg_agents.append(("ap", ap_agent))
    rc_agents = [
        SegmentAgent(a, c, settings) for a, c in zip(agents.rc_actors, agents.rc_critics)
    ]
    seg_agents.extend((f"rc{i}", ag) for i, ag in enumerate(rc_agents))

    joint_single = settings.topology == "single" and agents.actor is not None

    if settings.pretrain_iters > 0 and settings.learn_alloc and agents.actor is not None:
        pretrain_allocation(agents.actor, envs[0], settings, control_provider, pretrain_rng)

    warm_alloc = None
    if settings.warm_episodes > 0:
        budget = env0.constraint.power_budget if env0.constraint is not None else float(m)
        warm_alloc = _equal_power_provider(m, (1.0 - settings.gamma) * budget)

    dual = DualState(multipliers=np.zeros(n_sig), step_size=settings.dual_lr)
    log: list[EpisodeRow] = []

    for episode in range(settings.episodes):
        warm = episode < settings.warm_episodes
        states = [env.reset() for env in envs]
        obs_list = [env.observe(s) for env, s in zip(envs, states)]
        disc = 1.0
        ep_pen = np.zeros(n)
        ep_sig = np.zeros((n, n_sig))
        pending_update = False

        for t in range(settings.horizon):
            obs_mat = stack_observations(obs_list)

            if joint_single:
                if pending_update:
                    for _, ag in seg_agents:
                        ag.update(obs_mat, at_end=False, episode=episode)
                    pending_update = False
                sample = agents.actor.sample(obs_mat, sample_rng)
                if settings.learn_alloc:
                    alpha = sample.alpha
                else:
                    alpha = np.stack(
                        [alloc_provider(o, t) if alloc_provider else np.zeros(m) for o in obs_list]
                    )
                if settings.learn_control:
                    u = sample.u
                else:
                    u = np.stack(
                        [
                            control_provider(o, t)
                            if control_provider
                            else np.zeros((m, q))
                            for o in obs_list
                        ]
                    )
                rc_slices = None
                rc_samples = None
                ap_raw = sample.raw
            else:
                # Allocation first (the controllers see it), then the pending
                # segment update, then control sampling. The allocation draw at a
                # boundary step is one update older than its segment's parameters,
                # which the pooled on-policy step tolerates.
                if warm or not settings.learn_alloc or agents.actor is None:
                    provider = warm_alloc if (warm and settings.learn_alloc) else alloc_provider
                    alpha = np.stack(
                        [provider(o, t) if provider else np.zeros(m) for o in obs_list]
                    )
                    ap_raw = None
                else:
                    ap_sample = agents.actor.sample(obs_mat, sample_rng)
                    alpha = ap_sample.alpha
                    ap_raw = ap_sample.raw
                rc_slices = [controller_slice(obs_list, alpha, i) for i in range(m)]
                if pending_update:
                    if ap_agent is not None:
                        ap_agent.update(obs_mat, at_end=False, episode=episode)
                    for i, ag in enumerate(rc_agents):
                        ag.update(rc_slices[i], at_end=False, episode=episode)
                    pending_update = False
                if rc_agents:
                    rc_samples = [
                        agents.rc_actors[i].sample(rc_slices[i], sample_rng) for i in range(m)
                    ]
                    u = np.stack([s.u[:, 0, :] for s in rc_samples], axis=1)
                else:
                    rc_samples = None
                    u = np.stack(
                        [
                            control_provider(o, t)
                            if control_provider
                            else np.zeros((m, q))
                            for o in obs_list
                        ]
                    )

            step_costs = np.empty(n)
            step_sigs = np.empty((n, n_sig))
            per_plant_batch = np.empty((n, m))
            next_states = []
            for i, env in enumerate(envs):
                res = env.step(states[i], JointAction(alpha=alpha[i], u=u[i]))
                next_states.append(res.next_state)
                step_costs[i] = res.stage_cost
                step_sigs[i] = res.signals
                per_plant_batch[i] = res.per_plant_costs

            pen_costs = step_costs + step_sigs @ dual.multipliers
            ep_pen += disc * pen_costs
            ep_sig += disc * step_sigs
            disc *= settings.gamma

            if ap_agent is not None and ap_raw is not None:
                ap_agent.record(obs_mat, ap_raw, pen_costs)
            for i, ag in enumerate(rc_agents):
                ag.record(rc_slices[i], rc_samples[i].raw, per_plant_batch[:, i])

            states = next_states
            at_end = t == settings.horizon - 1
            if at_end:
                for _, ag in seg_agents:
                    ag.update(None, at_end=True, episode=episode)
                pending_update = False
            else:
                obs_list = [env.observe(s) for env, s in zip(envs, states)]
                if (t + 1) % settings.seg_len == 0:
                    pending_update = True

        violation = ep_sig.mean(axis=0)
        if n_sig > 0:
            dual.update(violation)
        lagrangian = float(ep_pen.mean())
        row = EpisodeRow(
            episode=episode,
            lagrangian=lagrangian,
            violations=violation,
            multipliers=dual.multipliers.copy(),
        )
        log.append(row)
        if progress is not None:
            progress(row)
        if not np.isfinite(lagrangian) or abs(lagrangian) > settings.lagrangian_ceiling:
            raise TrainingDivergedError(
                f"Lagrangian estimate {lagrangian:.3e} exceeded ceiling "
                f"{settings.lagrangian_ceiling:.3e} at episode {episode}",
                episode,
            )

    return TrainResult(agents=agents, dual=dual, log=log)
