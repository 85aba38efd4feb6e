"""Four-layer reward: environment, kill-chain milestones, constraint penalties, intent alignment."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Optional

from .actions import ACTION_TACTIC, ActionIndex
from .env import RewardInputs

if TYPE_CHECKING:  # pragma: no cover
    from .intent import Intent

MILESTONE_LABELS = {
    "discover_host": "Discover new host",
    "scan_host": "Scan host",
    "compromise": "Compromise (user access)",
    "escalate_root": "Privilege escalation (root)",
    "impact": "Impact host",
    "discover_subnet": "Discover new subnet",
    "first_compromise_defended": "First compromise (defended subnet)",
}

# milestones that may fire again for a host once blue has restored it
REFIRE_AFTER_RESTORE = frozenset({"compromise", "escalate_root"})


@dataclass(frozen=True)
class RewardConfig:
    discover_host: float = 0.2
    scan_host: float = 0.5
    compromise: float = 5.0
    escalate_root: float = 3.0
    impact: float = 5.0
    discover_subnet: float = 1.0
    first_compromise_defended: float = 8.0
    impact_without_root: float = -0.1
    exploit_without_scan: float = -0.05
    escalate_without_user: float = -0.05
    intent_match: float = 1.0
    intent_diverge: float = -0.3
    env_scale: float = 1.0
    use_env: bool = True
    use_progress: bool = True
    use_constraint: bool = True
    use_alignment: bool = True
    # "strict": category and named target must match; "category_only": tactic category only
    match_mode: str = "strict"

    def __post_init__(self) -> None:
        if self.match_mode not in ("strict", "category_only"):
            raise ValueError(f"unknown match_mode {self.match_mode!r}")

    def milestone_value(self, kind: str) -> float:
        return float(getattr(self, kind))

    def violation_value(self, kind: str) -> float:
        return float(getattr(self, kind))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RewardBreakdown:
    r_env: float = 0.0
    r_progress: float = 0.0
    r_constraint: float = 0.0
    r_alignment: float = 0.0
    milestones_fired: list[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.r_env + self.r_progress + self.r_constraint + self.r_alignment

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["total"] = self.total
        return d


@dataclass
class MilestoneTracker:
    """Per-episode record of which (milestone, host) pairs have already paid out."""

    fired: set[tuple[str, int]] = field(default_factory=set)
    defended_subnets_compromised: set[int] = field(default_factory=set)

    def on_restore(self, host: int) -> None:
        for kind in REFIRE_AFTER_RESTORE:
            self.fired.discard((kind, host))

    def claim(self, kind: str, ref: int) -> bool:
        key = (kind, ref)
        if key in self.fired:
            return False
        self.fired.add(key)
        return True


def intent_matches(action: ActionIndex, target, intent: "Intent", mode: str = "strict") -> bool:
    """Whether the executed action follows the intent.

    ``intent.category`` is either an action name or a tactic name. In strict
    mode a named intent target must also equal the executed target.
    """
    action = ActionIndex(action)
    category = intent.category
    if mode == "category_only":
        from .intent import category_tactic

        return ACTION_TACTIC[action] == category_tactic(category)
    if category in ActionIndex.__members__:
        ok = action.name == category
    else:
        ok = ACTION_TACTIC[action] == category
    if ok and intent.target is not None:
        ok = target == intent.target
    return ok


def shape(
    inputs: RewardInputs,
    intent: Optional["Intent"],
    tracker: MilestoneTracker,
    config: RewardConfig = RewardConfig(),
) -> RewardBreakdown:
    out = RewardBreakdown()
    if config.use_env:
        # r_env = -r_blue, where r_blue is the (non-positive) defender penalty
        out.r_env = -inputs.blue_penalty * config.env_scale + 0.0

    k = inputs.restored_before_red
    for h in inputs.restored[:k]:
        tracker.on_restore(h)

    progress = 0.0
    for m in inputs.milestones:
        if tracker.claim(m.kind, m.ref):
            progress += config.milestone_value(m.kind)
            out.milestones_fired.append(m.kind)
        if m.kind == "compromise" and m.defended and m.subnet not in tracker.defended_subnets_compromised:
            tracker.defended_subnets_compromised.add(m.subnet)
            progress += config.first_compromise_defended
            out.milestones_fired.append("first_compromise_defended")
    if config.use_progress:
        out.r_progress = progress
    for h in inputs.restored[k:]:
        tracker.on_restore(h)

    if config.use_constraint:
        out.r_constraint = sum(config.violation_value(v) for v in inputs.violations)

    if config.use_alignment and intent is not None:
        matched = intent_matches(inputs.action.index, inputs.action.target, intent, config.match_mode)
        out.r_alignment = config.intent_match if matched else config.intent_diverge
    return out
