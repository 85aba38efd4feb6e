"""Episode loop shared by training and evaluation, plus the controllers it can drive."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Protocol

import numpy as np

from .actions import N_ACTIONS, ActionIndex, MaskViolation, action_mask, ground
from .belief import BeliefState
from .encoders import DEFAULT_LAYOUT, FeatureLayout, encode_intent, featurize, summarize
from .env import Environment, Outcome, trace_dict
from .intent import Intent
from .planner import PlannerBackend, PlannerSchedule, ReflectionMemory, ScriptedBackend, plan, reflect
from .ppo import ActorCritic, Rollout, forward, masked_log_probs, sample_action
from .reward import MilestoneTracker, RewardConfig, shape


@dataclass(frozen=True)
class AgentConfig:
    """How the strategic layer is wired to the controller."""

    label: str = "hybrid"
    use_planner: bool = True  # False: null intent embedding, no planner calls
    horizon: int = 20
    replan_on_failure: bool = True
    reflexion: bool = True
    reflexion_capacity: int = 5
    summary_budget: int = 600

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


RL_ONLY = AgentConfig(label="rl_only", use_planner=False, reflexion=False)


class Controller(Protocol):
    def act(
        self,
        features: np.ndarray,
        intent_emb: np.ndarray,
        mask: list[bool],
        rng: np.random.Generator,
        belief: BeliefState,
        intent: Optional[Intent],
    ) -> tuple[int, float, float]:
        """Return (action index, log-prob, value estimate)."""


@dataclass
class PolicyController:
    model: ActorCritic
    greedy: bool = False

    def act(self, features, intent_emb, mask, rng, belief, intent):
        logits, value = forward(features, intent_emb, self.model)
        if self.greedy:
            logp = masked_log_probs(logits, mask)
            a = int(np.argmax(logp))
            return a, float(logp[a]), value
        a, logp = sample_action(logits, mask, rng)
        return a, logp, value


class SleepController:
    def act(self, features, intent_emb, mask, rng, belief, intent):
        return int(ActionIndex.Sleep), 0.0, 0.0


class RandomController:
    """Uniform over the currently valid action indices."""

    def act(self, features, intent_emb, mask, rng, belief, intent):
        return (*sample_action(np.zeros(N_ACTIONS), mask, rng), 0.0)


class IntentFollower:
    """Executes the planner's named action when valid, else samples uniformly (planner-only baseline)."""

    def act(self, features, intent_emb, mask, rng, belief, intent):
        a = intent.action if intent is not None else None
        if a is not None and mask[a]:
            return int(a), 0.0, 0.0
        return (*sample_action(np.zeros(N_ACTIONS), mask, rng), 0.0)


@dataclass
class EpisodeOutput:
    trace: list[dict[str, Any]]
    total_reward: float
    action_counts: list[int]
    planner_sources: Counter = field(default_factory=Counter)
    rollout: Optional[Rollout] = None


def run_episode(
    env: Environment,
    controller: Controller,
    *,
    agent: AgentConfig = AgentConfig(),
    reward_config: RewardConfig = RewardConfig(),
    backend: Optional[PlannerBackend] = None,
    memory: Optional[ReflectionMemory] = None,
    rng: np.random.Generator,
    episode: int = 0,
    env_seed: Optional[int] = None,
    layout: FeatureLayout = DEFAULT_LAYOUT,
    collect: bool = False,
) -> EpisodeOutput:
    """Play one episode to the horizon.

    With ``collect`` the per-decision tensors needed for PPO are kept. The
    trace is a list of JSON-ready step records; metrics are derived from it.
    """
    if agent.use_planner and backend is None:
        backend = ScriptedBackend()
    obs = env.reset(seed=env_seed)
    topo = env.topology
    belief = BeliefState.from_reset(obs, topo.red_entry_host, topo.entry_subnet, topo.max_steps)
    tracker = MilestoneTracker()
    schedule = PlannerSchedule(agent.horizon, agent.replan_on_failure)
    intent: Optional[Intent] = None
    last_failed = False
    trace: list[dict[str, Any]] = []
    counts = [0] * N_ACTIONS
    sources: Counter = Counter()
    rollout = Rollout() if collect else None
    total = 0.0
    host_count = len(topo.hosts)

    while not env.done:
        replanned = False
        if agent.use_planner and schedule.due(belief.step, last_failed):
            reflections = memory.entries() if memory is not None else []
            summary = summarize(belief, reflections, agent.summary_budget)
            intent = plan(summary, reflections, backend, belief)
            schedule.mark(belief.step)
            sources[intent.source] += 1
            replanned = True
        features = featurize(belief, layout)
        z = encode_intent(intent)
        mask = action_mask(belief)
        a, logp, value = controller.act(features, z, mask, rng, belief, intent)
        if not mask[a]:
            raise MaskViolation(f"controller chose masked action {ActionIndex(a).name}")
        ga = ground(a, intent, belief)
        result = env.step(ga)
        belief.update(ga, result.observation)
        rb = shape(result.reward_inputs, intent, tracker, reward_config)
        last_failed = result.observation.action_outcome != Outcome.SUCCESS
        counts[a] += 1
        total += rb.total
        if rollout is not None:
            rollout.add(features, z, mask, a, logp, rb.total, value, result.done)
        trace.append(
            trace_dict(
                episode,
                result,
                {
                    "intent": None if intent is None else intent.to_dict(),
                    "replanned": replanned,
                    "reward": rb.to_dict(),
                    "discovered_count": belief.discovered_count(),
                    "host_count": host_count,
                    "env_seed": env_seed,
                    "mask": mask,
                    "logp": logp,
                },
            )
        )

    if agent.use_planner and agent.reflexion and memory is not None and trace:
        reflect(trace, backend, memory)
    return EpisodeOutput(trace, total, counts, sources, rollout)


def policy_log_prob(model: ActorCritic, features, intent_emb, mask, action: int) -> float:
    logits, _ = forward(features, intent_emb, model)
    return float(masked_log_probs(logits, mask)[action])
