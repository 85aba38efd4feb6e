"""PPO training loop: rollouts, schedule, evaluation windows, curriculum, early stop, checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch

from .agent import AgentConfig, PolicyController, run_episode
from .encoders import DEFAULT_LAYOUT, FeatureLayout
from .env import Environment
from .metrics import Report, evaluate
from .planner import PlannerBackend, ReflectionMemory, ScriptedBackend
from .ppo import ActorCritic, PPOHyper, Rollout, build_batch, ppo_update
from .reward import RewardConfig
from .topology import FINAL_STAGE, ConfigError, ScenarioConfig, Topology, curriculum_stage, generate_scenario, topology_hash

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_COLUMNS = (
    "episodes",
    "stage",
    "lr",
    "eval_ecr",
    "eval_mean_reward",
    "eval_aac",
    "eval_ahd",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_frac",
    "approx_kl",
    "updates",
)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    lr_start: float = 3e-4
    lr_end: float = 3e-5
    lr_schedule: str = "linear"  # linear | cosine
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    minibatch: int = 64
    epochs: int = 8
    episodes_per_rollout: int = 10
    max_grad_norm: float = 0.5
    ent_coef: float = 0.05
    vf_coef: float = 0.5
    normalize_advantages: bool = True
    max_episodes: int = 100_000
    wall_clock_seconds: float = 48 * 3600.0
    # evaluation windows and early stop
    eval_every: int = 1000
    eval_episodes: int = 50
    eval_seed: int = 10_007
    eval_mode: str = "stochastic"  # stochastic | greedy
    early_stop_window: int = 5
    early_stop_threshold: float = 0.005
    early_stop_min_episodes: int = 20_000
    # curriculum
    curriculum: bool = True
    start_stage: int = 0
    final_stage: int = FINAL_STAGE
    advance_threshold: float = 0.8
    scenario_seed: int = 0
    # network
    embed_dim: int = 128
    hidden: int = 256
    dtype: str = "float32"

    def __post_init__(self) -> None:
        positive = ("lr_start", "lr_end", "clip", "gamma", "lam", "minibatch", "epochs",
                    "episodes_per_rollout", "max_grad_norm", "max_episodes", "wall_clock_seconds",
                    "eval_every", "eval_episodes", "early_stop_window", "early_stop_threshold",
                    "embed_dim", "hidden")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("ent_coef", "vf_coef", "early_stop_min_episodes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigError("gamma and lam must lie in (0, 1]")
        if self.lr_schedule not in ("linear", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.eval_mode not in ("stochastic", "greedy"):
            raise ConfigError(f"unknown eval_mode {self.eval_mode!r}")
        if self.eval_every % self.episodes_per_rollout:
            raise ConfigError("eval_every must be a multiple of episodes_per_rollout")
        if not 0 <= self.start_stage <= self.final_stage <= FINAL_STAGE:
            raise ConfigError(f"need 0 <= start_stage <= final_stage <= {FINAL_STAGE}")
        if not 0 <= self.advance_threshold <= 1:
            raise ConfigError("advance_threshold must lie in [0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train settings: {sorted(unknown)}")
        return cls(**data)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def hyper(self) -> PPOHyper:
        return PPOHyper(self.clip, self.epochs, self.minibatch, self.max_grad_norm,
                        self.ent_coef, self.vf_coef, self.normalize_advantages)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


def lr_at(progress: float, start: float, end: float, schedule: str = "linear") -> float:
    """Learning rate at training progress in [0, 1]; endpoints are exact."""
    p = min(max(progress, 0.0), 1.0)
    if schedule == "linear":
        return (1.0 - p) * start + p * end
    if schedule == "cosine":
        w = 0.5 * (1.0 + math.cos(math.pi * p))
        return w * start + (1.0 - w) * end
    raise ValueError(f"unknown schedule {schedule!r}")


def should_early_stop(
    history: Sequence[float],
    episodes: int,
    window: int = 5,
    threshold: float = 0.005,
    min_episodes: int = 20_000,
) -> bool:
    """True once each of the last ``window`` window-to-window gains is below ``threshold`` (relative)."""
    if episodes < min_episodes or len(history) < window + 1:
        return False
    recent = history[-(window + 1):]
    for prev, cur in zip(recent, recent[1:]):
        if (cur - prev) >= threshold * max(abs(prev), 1e-12):
            return False
    return True


def should_advance(ecr: float, stage: int, config: TrainConfig) -> bool:
    """Curriculum rule: move on once evaluation ECR reaches the threshold, until the final stage."""
    return config.curriculum and stage < config.final_stage and ecr >= config.advance_threshold


def total_updates(config: TrainConfig) -> int:
    return math.ceil(config.max_episodes / config.episodes_per_rollout)


@dataclass
class TrainResult:
    model: ActorCritic
    out_dir: Optional[Path]
    episodes: int
    stage: int
    stop_reason: str
    history: list[dict[str, Any]] = field(default_factory=list)
    last_report: Optional[Report] = None
    scripted_fallback_mode: bool = False
    topology: Optional[Topology] = None


def build_model(config: TrainConfig, layout: FeatureLayout = DEFAULT_LAYOUT) -> ActorCritic:
    torch.manual_seed(config.seed)
    model = ActorCritic(feature_dim=layout.dim, embed_dim=config.embed_dim, hidden=config.hidden)
    return model.to(config.torch_dtype)


def _scenario_for(config: TrainConfig, stage: int, scenario: Optional[ScenarioConfig]) -> Topology:
    if scenario is not None and not config.curriculum:
        return generate_scenario(scenario)
    return generate_scenario(curriculum_stage(stage, seed=config.scenario_seed))


def manifest(
    model: ActorCritic,
    config: TrainConfig,
    agent: AgentConfig,
    reward_config: RewardConfig,
    layout: FeatureLayout,
    extra: Optional[dict[str, Any]] = None,
) -> dict[str, Any]:
    m = {
        "version": CHECKPOINT_VERSION,
        "feature_layout": layout.manifest(),
        "feature_layout_hash": layout.hash(),
        "network": model.manifest(),
        "dtype": config.dtype,
        "train_config": config.to_dict(),
        "train_config_hash": config.hash(),
        "agent": agent.to_dict(),
        "reward_config": reward_config.to_dict(),
        "reward_config_hash": reward_config.hash(),
    }
    m.update(extra or {})
    return m


def save_checkpoint(out_dir: Path, model: ActorCritic, meta: dict[str, Any], topology: Topology) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_dir / "model.pt")
    (out_dir / "manifest.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    (out_dir / "scenario.json").write_text(topology.to_json())


class CheckpointMismatch(ConfigError):
    pass


def load_checkpoint(
    ckpt_dir: str | Path, layout: FeatureLayout = DEFAULT_LAYOUT
) -> tuple[ActorCritic, dict[str, Any], Topology]:
    d = Path(ckpt_dir)
    meta = json.loads((d / "manifest.json").read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"checkpoint version {meta.get('version')} is not {CHECKPOINT_VERSION}")
    if meta.get("feature_layout_hash") != layout.hash():
        raise CheckpointMismatch(
            f"feature layout hash {meta.get('feature_layout_hash')} does not match this build ({layout.hash()})"
        )
    net = meta["network"]
    model = ActorCritic(net["feature_dim"], net["intent_dim"], net["embed_dim"], net["hidden"], net["n_actions"])
    model = model.to(torch.float64 if meta.get("dtype") == "float64" else torch.float32)
    state = torch.load(d / "model.pt", weights_only=True)
    shapes = {k: list(v.shape) for k, v in state.items()}
    if shapes != net["shapes"]:
        raise CheckpointMismatch("tensor shapes differ from manifest")
    model.load_state_dict(state)
    topo = Topology.from_json((d / "scenario.json").read_text())
    return model, meta, topo


def _fmt(x: Any) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def train(
    config: TrainConfig,
    *,
    agent: AgentConfig = AgentConfig(),
    reward_config: RewardConfig = RewardConfig(),
    backend: Optional[PlannerBackend] = None,
    scenario: Optional[ScenarioConfig] = None,
    out_dir: Optional[str | Path] = None,
    layout: FeatureLayout = DEFAULT_LAYOUT,
) -> TrainResult:
    """Train the controller.

    With ``config.curriculum`` the scenario follows the curriculum from
    ``start_stage`` and advances when evaluation ECR reaches the threshold;
    otherwise ``scenario`` (or the start stage) is used throughout. Early
    stopping is considered only on the final stage, and its history is
    reset whenever the stage changes.
    """
    t0 = time.monotonic()
    out = Path(out_dir) if out_dir is not None else None
    if agent.use_planner and backend is None:
        backend = ScriptedBackend()
    fallback_mode = False
    fallback_streak = 0

    model = build_model(config, layout)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_start, eps=1e-5)
    rng = np.random.default_rng(config.seed)
    hp = config.hyper

    stage = config.start_stage
    topo = _scenario_for(config, stage, scenario)
    env = Environment(topo, seed=config.seed)
    memory = ReflectionMemory(agent.reflexion_capacity)

    episodes = 0
    updates = 0
    history: list[dict[str, Any]] = []
    eval_rewards: list[float] = []
    window_stats: dict[str, float] = {}
    window_updates = 0
    stop_reason = "max_episodes"
    last_report: Optional[Report] = None
    csv_path = out / "metrics.csv" if out is not None else None
    if csv_path is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(METRIC_COLUMNS)

    def meta() -> dict[str, Any]:
        return manifest(model, config, agent, reward_config, layout, {
            "stage": stage,
            "episodes": episodes,
            "topology_hash": topology_hash(topo),
            "scripted_fallback_mode": fallback_mode,
            "planner_backend": getattr(backend, "name", None),
        })

    while episodes < config.max_episodes:
        if time.monotonic() - t0 > config.wall_clock_seconds:
            stop_reason = "wall_clock"
            break
        rollout = Rollout()
        sources: dict[str, int] = {}
        for _ in range(config.episodes_per_rollout):
            ep = run_episode(
                env, PolicyController(model), agent=agent, reward_config=reward_config,
                backend=backend, memory=memory, rng=rng, episode=episodes,
                env_seed=config.seed * 1_000_003 + episodes, layout=layout, collect=True,
            )
            rollout.extend(ep.rollout)
            for k, v in ep.planner_sources.items():
                sources[k] = sources.get(k, 0) + v
            episodes += 1

        if agent.use_planner and not isinstance(backend, ScriptedBackend):
            if sources.get("fallback", 0) and not sources.get("remote", 0):
                fallback_streak += 1
            else:
                fallback_streak = 0
            if fallback_streak >= 2 and not fallback_mode:
                fallback_mode = True
                log.error("PLANNER UNREACHABLE: continuing in scripted-fallback mode (flag recorded in checkpoint manifest)")
                backend = ScriptedBackend()

        # the first update runs at lr_start and the last possible one at lr_end
        progress = updates / max(total_updates(config) - 1, 1)
        lr = lr_at(progress, config.lr_start, config.lr_end, config.lr_schedule)
        for g in optimizer.param_groups:
            g["lr"] = lr
        batch = build_batch(rollout, config.gamma, config.lam, config.torch_dtype)
        stats = ppo_update(model, optimizer, batch, hp, rng)
        updates += 1
        for k, v in stats.items():
            window_stats[k] = window_stats.get(k, 0.0) + v
        window_updates += 1

        if episodes % config.eval_every == 0:
            report, _ = evaluate(
                PolicyController(model, greedy=config.eval_mode == "greedy"),
                topo, config.eval_episodes, config.eval_seed,
                agent=agent, reward_config=reward_config, backend=backend,
            )
            last_report = report
            row = {
                "episodes": episodes,
                "stage": stage,
                "lr": lr,
                "eval_ecr": report.ecr,
                "eval_mean_reward": report.mean_reward,
                "eval_aac": report.aac,
                "eval_ahd": report.ahd,
                "updates": window_updates,
            }
            for k in ("policy_loss", "value_loss", "entropy", "clip_frac", "approx_kl"):
                row[k] = window_stats.get(k, 0.0) / max(window_updates, 1)
            history.append(row)
            window_stats, window_updates = {}, 0
            if csv_path is not None:
                with open(csv_path, "a", newline="") as f:
                    csv.writer(f, lineterminator="\n").writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
            log.info("episodes=%d stage=%d ecr=%.3f reward=%.2f", episodes, stage, report.ecr, report.mean_reward)
            if out is not None:
                save_checkpoint(out, model, meta(), topo)

            eval_rewards.append(report.mean_reward)
            if should_advance(report.ecr, stage, config):
                stage += 1
                topo = _scenario_for(config, stage, scenario)
                env = Environment(topo, seed=config.seed)
                eval_rewards = []
                log.info("curriculum advanced to stage %d", stage)
            elif (not config.curriculum or stage == config.final_stage) and should_early_stop(
                eval_rewards, episodes, config.early_stop_window,
                config.early_stop_threshold, config.early_stop_min_episodes,
            ):
                stop_reason = "early_stop"
                break

    if out is not None:
        save_checkpoint(out, model, meta() | {"stop_reason": stop_reason}, topo)
        (out / "reflections.jsonl").unlink(missing_ok=True)
        memory.dump_jsonl(out / "reflections.jsonl")
    return TrainResult(model, out, episodes, stage, stop_reason, history, last_report, fallback_mode, topo)
