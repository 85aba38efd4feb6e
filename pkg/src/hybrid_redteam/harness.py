"""Evaluation entry points, baseline agents, the RL-only regression and trace replay."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

from .actions import GroundedAction
from .agent import RL_ONLY, AgentConfig, IntentFollower, PolicyController, RandomController, SleepController
from .env import Environment
from .metrics import Report, evaluate
from .planner import PlannerBackend
from .reward import RewardConfig
from .topology import ConfigError, ScenarioConfig, Topology, generate_scenario
from .trainer import CheckpointMismatch, TrainConfig, load_checkpoint, train

log = logging.getLogger(__name__)

BASELINES = {
    "sleep": (SleepController, RL_ONLY),
    "random": (RandomController, RL_ONLY),
    "planner_only": (IntentFollower, AgentConfig(label="planner_only")),
}


def run_eval(
    checkpoint: str | Path,
    n: int,
    seed: int,
    *,
    topology: Optional[Topology] = None,
    reward_config: Optional[RewardConfig] = None,
    backend: Optional[PlannerBackend] = None,
    expected: Optional[dict[str, str]] = None,
    greedy: bool = False,
    trace_dir: Optional[str | Path] = None,
) -> Report:
    """Evaluate a saved controller.

    The agent wiring and reward config come from the checkpoint manifest.
    ``expected`` maps manifest keys (e.g. ``reward_config_hash``) to values
    the caller requires; any difference refuses the run.
    """
    model, meta, ckpt_topo = load_checkpoint(checkpoint)
    for key, want in (expected or {}).items():
        if meta.get(key) != want:
            raise CheckpointMismatch(f"manifest {key}={meta.get(key)!r} but run expects {want!r}")
    stored_reward = RewardConfig(**meta["reward_config"])
    if reward_config is not None and reward_config.hash() != stored_reward.hash():
        raise CheckpointMismatch("reward config differs from the one the checkpoint was trained with")
    agent = AgentConfig(**meta["agent"])
    if meta.get("scripted_fallback_mode"):
        log.warning("checkpoint was trained in scripted-fallback mode (planner was unreachable)")
    report, _ = evaluate(
        PolicyController(model, greedy=greedy),
        topology or ckpt_topo,
        n,
        seed,
        agent=agent,
        reward_config=stored_reward,
        backend=backend,
        hashes={
            "feature_layout": meta["feature_layout_hash"],
            "train_config": meta["train_config_hash"],
            "reward_config": meta["reward_config_hash"],
        },
        trace_dir=trace_dir,
    )
    return report


def run_baseline(
    name: str,
    topology: Topology,
    n: int,
    seed: int,
    reward_config: RewardConfig = RewardConfig(),
    backend: Optional[PlannerBackend] = None,
    trace_dir: Optional[str | Path] = None,
) -> Report:
    if name not in BASELINES:
        raise ConfigError(f"unknown baseline {name!r}; choose from {sorted(BASELINES)}")
    ctl, agent = BASELINES[name]
    report, _ = evaluate(
        ctl(), topology, n, seed, agent=agent, reward_config=reward_config,
        backend=backend, label=name, trace_dir=trace_dir,
    )
    return report


@dataclass
class RegressionResult:
    report: Report
    diagnostics: dict[str, Any]


def collapse_diagnostics(report: Report) -> dict[str, Any]:
    return {
        "action_entropy": report.action_entropy,
        "modal_action": report.modal_action,
        "modal_action_frequency": report.modal_action_frequency,
        "action_counts": list(report.action_counts),
    }


def rl_only_regression(
    scenario: ScenarioConfig,
    config: TrainConfig,
    n: int = 50,
    seed: int = 2024,
    reward_config: RewardConfig = RewardConfig(),
    out_dir: Optional[str | Path] = None,
) -> RegressionResult:
    """Train a null-intent controller with no planner and evaluate it."""
    result = train(config, agent=RL_ONLY, reward_config=reward_config, scenario=scenario, out_dir=out_dir)
    report, _ = evaluate(
        PolicyController(result.model), result.topology, n, seed,
        agent=RL_ONLY, reward_config=reward_config,
    )
    return RegressionResult(report, collapse_diagnostics(report))


def train_and_eval(
    scenario: ScenarioConfig,
    config: TrainConfig,
    agent: AgentConfig,
    n: int,
    seed: int,
    reward_config: RewardConfig = RewardConfig(),
    backend: Optional[PlannerBackend] = None,
    out_dir: Optional[str | Path] = None,
) -> tuple[Report, Any]:
    result = train(config, agent=agent, reward_config=reward_config, backend=backend, scenario=scenario, out_dir=out_dir)
    report, _ = evaluate(
        PolicyController(result.model), result.topology, n, seed,
        agent=agent, reward_config=reward_config, backend=backend,
    )
    return report, result


# -- replay ---------------------------------------------------------------------


def format_record(rec: dict[str, Any]) -> str:
    a = rec["action"]
    tgt = a["target"] or "-"
    r = rec.get("reward", {})
    parts = [
        f"ep {rec['episode']:>3}",
        f"t {rec.get('start_step', '?'):>3}->{rec['step']:<3}",
        f"{a['name']:<27} {tgt:<4}",
        f"{rec['outcome']:<8}",
    ]
    if rec.get("reason"):
        parts.append(f"({rec['reason']})")
    ms = [m["kind"] for m in rec["reward_inputs"]["milestones"]]
    if ms:
        parts.append("milestones=" + ",".join(ms))
    if rec["reward_inputs"]["restored"]:
        parts.append("restored=" + ",".join(f"h{h}" for h in rec["reward_inputs"]["restored"]))
    if r:
        parts.append(f"r={r['total']:.2f}")
    intent = rec.get("intent")
    if intent and rec.get("replanned"):
        parts.append(f"[intent {intent['category']} {intent['target'] or '-'} via {intent['source']}]")
    return " ".join(parts)


def replay(trace: Sequence[dict[str, Any]], topology: Topology) -> list[str]:
    """Re-execute a trace's actions and return a list of divergences (empty when it reproduces)."""
    problems = []
    if not trace:
        return problems
    env = Environment(topology)
    env.reset(seed=trace[0].get("env_seed"))
    for rec in trace:
        action = GroundedAction.from_dict(rec["action"])
        res = env.step(action)
        got = json.loads(json.dumps(res.observation.to_dict(), sort_keys=True))
        if str(res.observation.action_outcome) != rec["outcome"] or got != rec["observation"]:
            problems.append(f"episode {rec['episode']} step {rec['step']}: observation differs")
    return problems


def load_topology(path: str | Path) -> Topology:
    try:
        return Topology.from_json(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc


def scenario_topology(scenario: ScenarioConfig) -> Topology:
    return generate_scenario(scenario)


def plot_metrics(csv_path: str | Path, out_png: str | Path) -> Path:
    """Static learning-curve figure from a training metrics CSV (needs the ``plot`` extra)."""
    import csv

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover
        raise ConfigError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ConfigError(f"{csv_path} has no rows")
    x = [int(r["episodes"]) for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(x, [float(r["eval_mean_reward"]) for r in rows])
    axes[0].set_xlabel("episodes")
    axes[0].set_ylabel("eval mean reward")
    axes[1].plot(x, [float(r["eval_ecr"]) for r in rows])
    axes[1].set_xlabel("episodes")
    axes[1].set_ylabel("eval ECR")
    axes[1].set_ylim(-0.05, 1.05)
    fig.tight_layout()
    out = Path(out_png)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
