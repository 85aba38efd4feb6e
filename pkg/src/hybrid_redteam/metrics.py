"""Per-episode metrics, aggregation into reports, and the evaluation loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .actions import ATTACK_ACTIONS, N_ACTIONS, ActionIndex
from .agent import AgentConfig, Controller, run_episode
from .env import Environment
from .planner import PlannerBackend, ReflectionMemory
from .reward import RewardConfig
from .topology import Topology, topology_hash

_ATTACK = {int(a) for a in ATTACK_ACTIONS}


@dataclass(frozen=True)
class EpisodeMetrics:
    compromised: bool
    attack_actions: int
    peak_hosts_discovered: int
    total_reward: float
    steps_to_first_compromise: Optional[int]
    attack_successes: int = 0
    host_count: int = 0
    max_steps: int = 0

    def __post_init__(self) -> None:
        if self.host_count and self.peak_hosts_discovered > self.host_count:
            raise ValueError("peak_hosts_discovered exceeds host count")
        if self.max_steps and self.attack_actions > self.max_steps:
            raise ValueError("attack_actions exceeds max_steps")


def metrics_from_trace(trace: Sequence[dict[str, Any]]) -> EpisodeMetrics:
    """Episode metrics computed only from persisted step records.

    A compromise is an exploit-achieved session; the starting foothold never counts.
    """
    compromised = False
    first = None
    attacks = successes = 0
    peak = 1  # the foothold is known from reset
    total = 0.0
    for rec in trace:
        idx = rec["action"]["index"]
        if idx in _ATTACK:
            attacks += 1
            successes += rec["outcome"] == "Success"
        if any(m["kind"] == "compromise" for m in rec["reward_inputs"]["milestones"]):
            if first is None:
                first = rec["step"]
            compromised = True
        peak = max(peak, rec.get("discovered_count", 1))
        total += rec["reward"]["total"]
    host_count = trace[0].get("host_count", 0) if trace else 0
    max_steps = trace[-1]["step"] if trace else 0
    return EpisodeMetrics(compromised, attacks, peak, total, first, successes, host_count, max_steps)


@dataclass
class Report:
    label: str
    n: int
    compromised_count: int
    ecr: float
    aac: int
    attack_successes: int
    ahd: float
    mean_reward: float
    mean_steps_to_first_compromise: Optional[float]
    host_count: int = 0
    action_counts: list[int] = field(default_factory=lambda: [0] * N_ACTIONS)
    hashes: dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def action_entropy(self) -> float:
        total = sum(self.action_counts)
        if total == 0:
            return 0.0
        p = np.asarray(self.action_counts, dtype=np.float64) / total
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    @property
    def modal_action(self) -> Optional[str]:
        if sum(self.action_counts) == 0:
            return None
        return ActionIndex(int(np.argmax(self.action_counts))).name

    @property
    def modal_action_frequency(self) -> float:
        total = sum(self.action_counts)
        return max(self.action_counts) / total if total else 0.0

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["action_entropy"] = self.action_entropy
        d["modal_action"] = self.modal_action
        d["modal_action_frequency"] = self.modal_action_frequency
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Report":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})

    def table(self) -> str:
        stfc = "-" if self.mean_steps_to_first_compromise is None else f"{self.mean_steps_to_first_compromise:.1f}"
        rows = [
            ("agent", self.label),
            ("episodes", str(self.n)),
            ("ECR", f"{self.ecr:.3f} ({self.compromised_count}/{self.n})"),
            ("AAC", f"{self.aac} attempted, {self.attack_successes} succeeded"),
            ("AHD", f"{self.ahd:.2f} of {self.host_count} hosts"),
            ("mean reward", f"{self.mean_reward:.2f}"),
            ("steps to first compromise", stfc),
            ("modal action", f"{self.modal_action} ({self.modal_action_frequency:.2f})"),
            ("action entropy", f"{self.action_entropy:.3f} nats"),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def aggregate(
    metrics: Sequence[EpisodeMetrics],
    label: str = "agent",
    action_counts: Optional[Sequence[int]] = None,
    hashes: Optional[dict[str, str]] = None,
    seed: Optional[int] = None,
) -> Report:
    if not metrics:
        raise ValueError("cannot aggregate an empty metrics list")
    n = len(metrics)
    k = sum(m.compromised for m in metrics)
    firsts = [m.steps_to_first_compromise for m in metrics if m.steps_to_first_compromise is not None]
    return Report(
        label=label,
        n=n,
        compromised_count=k,
        ecr=k / n,
        aac=sum(m.attack_actions for m in metrics),
        attack_successes=sum(m.attack_successes for m in metrics),
        ahd=sum(m.peak_hosts_discovered for m in metrics) / n,
        mean_reward=math.fsum(m.total_reward for m in metrics) / n,
        mean_steps_to_first_compromise=(sum(firsts) / len(firsts)) if firsts else None,
        host_count=max(m.host_count for m in metrics),
        action_counts=list(action_counts) if action_counts is not None else [0] * N_ACTIONS,
        hashes=dict(hashes or {}),
        seed=seed,
    )


def action_counts_from_traces(traces: Iterable[Sequence[dict[str, Any]]]) -> list[int]:
    counts = [0] * N_ACTIONS
    for trace in traces:
        for rec in trace:
            counts[rec["action"]["index"]] += 1
    return counts


def episode_seeds(seed: int, n: int) -> list[int]:
    """Per-episode environment seeds derived from a master seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def evaluate(
    controller: Controller,
    topology: Topology,
    n: int,
    seed: int,
    *,
    agent: AgentConfig = AgentConfig(),
    reward_config: RewardConfig = RewardConfig(),
    backend: Optional[PlannerBackend] = None,
    label: Optional[str] = None,
    hashes: Optional[dict[str, str]] = None,
    trace_dir: Optional[str | Path] = None,
) -> tuple[Report, list[list[dict[str, Any]]]]:
    """Run ``n`` stochastic episodes with seeds derived from ``seed``; reflections start empty."""
    if n < 1:
        raise ValueError("n must be >= 1")
    env = Environment(topology)
    memory = ReflectionMemory(agent.reflexion_capacity)
    traces = []
    for i, env_seed in enumerate(episode_seeds(seed, n)):
        rng = np.random.default_rng([seed, i])
        out = run_episode(
            env, controller, agent=agent, reward_config=reward_config, backend=backend,
            memory=memory, rng=rng, episode=i, env_seed=env_seed,
        )
        traces.append(out.trace)
    all_hashes = {"topology": topology_hash(topology), "reward": reward_config.hash()}
    all_hashes.update(hashes or {})
    report = aggregate(
        [metrics_from_trace(t) for t in traces],
        label=label or agent.label,
        action_counts=action_counts_from_traces(traces),
        hashes=all_hashes,
        seed=seed,
    )
    if trace_dir is not None:
        write_traces(traces, trace_dir)
    return report, traces


def write_traces(traces: Sequence[Sequence[dict[str, Any]]], trace_dir: str | Path) -> Path:
    d = Path(trace_dir)
    d.mkdir(parents=True, exist_ok=True)
    path = d / "traces.jsonl"
    with open(path, "w", encoding="utf-8") as f:
        for trace in traces:
            for rec in trace:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_traces(path: str | Path) -> list[list[dict[str, Any]]]:
    by_episode: dict[int, list[dict[str, Any]]] = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            by_episode.setdefault(rec["episode"], []).append(rec)
    return [by_episode[k] for k in sorted(by_episode)]


def report_from_traces(path: str | Path, label: str, hashes: Optional[dict[str, str]] = None, seed=None) -> Report:
    traces = read_traces(path)
    return aggregate(
        [metrics_from_trace(t) for t in traces],
        label=label,
        action_counts=action_counts_from_traces(traces),
        hashes=hashes,
        seed=seed,
    )
