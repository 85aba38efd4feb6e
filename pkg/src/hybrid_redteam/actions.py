"""The ten-action red space, prerequisite-aware masking and grounding."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:  # pragma: no cover
    from .belief import BeliefState
    from .intent import Intent


class ActionIndex(IntEnum):
    DiscoverRemoteSystems = 0
    AggressiveServiceDiscovery = 1
    StealthServiceDiscovery = 2
    DiscoverDeception = 3
    ExploitRemoteService = 4
    PrivilegeEscalate = 5
    Impact = 6
    DegradeServices = 7
    Withdraw = 8
    Sleep = 9


N_ACTIONS = len(ActionIndex)
ACTION_NAMES = tuple(a.name for a in ActionIndex)

TACTICS = ("Discovery", "Initial Access", "Privilege Escalation", "Impact", "Defense Evasion")

ACTION_TACTIC = {
    ActionIndex.DiscoverRemoteSystems: "Discovery",
    ActionIndex.AggressiveServiceDiscovery: "Discovery",
    ActionIndex.StealthServiceDiscovery: "Discovery",
    ActionIndex.DiscoverDeception: "Discovery",
    ActionIndex.ExploitRemoteService: "Initial Access",
    ActionIndex.PrivilegeEscalate: "Privilege Escalation",
    ActionIndex.Impact: "Impact",
    ActionIndex.DegradeServices: "Impact",
    ActionIndex.Withdraw: "Defense Evasion",
    ActionIndex.Sleep: "Defense Evasion",
}

# environment timesteps consumed by each action
DURATION = {
    ActionIndex.DiscoverRemoteSystems: 1,
    ActionIndex.AggressiveServiceDiscovery: 1,
    ActionIndex.StealthServiceDiscovery: 3,
    ActionIndex.DiscoverDeception: 2,
    ActionIndex.ExploitRemoteService: 2,
    ActionIndex.PrivilegeEscalate: 2,
    ActionIndex.Impact: 2,
    ActionIndex.DegradeServices: 2,
    ActionIndex.Withdraw: 1,
    ActionIndex.Sleep: 1,
}

ATTACK_ACTIONS = frozenset(
    {ActionIndex.ExploitRemoteService, ActionIndex.PrivilegeEscalate, ActionIndex.Impact}
)

_TARGET_RE = re.compile(r"^\s*([hs])\s*[-:_]?\s*(\d+)\s*$", re.IGNORECASE)


@dataclass(frozen=True, order=True)
class Target:
    kind: str  # "host" | "subnet"
    id: int

    def __post_init__(self) -> None:
        if self.kind not in ("host", "subnet"):
            raise ValueError(f"bad target kind {self.kind!r}")
        if self.id < 0:
            raise ValueError("target id must be >= 0")

    def __str__(self) -> str:
        return f"{self.kind[0]}{self.id}"

    @classmethod
    def host(cls, host_id: int) -> "Target":
        return cls("host", host_id)

    @classmethod
    def subnet(cls, subnet_id: int) -> "Target":
        return cls("subnet", subnet_id)

    @classmethod
    def parse(cls, text: str) -> "Target":
        m = _TARGET_RE.match(text)
        if not m:
            raise ValueError(f"unparseable target {text!r}")
        return cls("host" if m.group(1).lower() == "h" else "subnet", int(m.group(2)))


def target_kind(index: ActionIndex) -> Optional[str]:
    if index == ActionIndex.DiscoverRemoteSystems:
        return "subnet"
    if index == ActionIndex.Sleep:
        return None
    return "host"


@dataclass(frozen=True)
class GroundedAction:
    index: ActionIndex
    target: Optional[Target] = None
    source_session: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "index", ActionIndex(self.index))
        kind = target_kind(self.index)
        if kind is None and self.target is not None:
            raise ValueError("Sleep takes no target")
        if kind is not None and (self.target is None or self.target.kind != kind):
            raise ValueError(f"{self.index.name} needs a {kind} target, got {self.target}")

    def to_dict(self) -> dict:
        return {
            "index": int(self.index),
            "name": self.index.name,
            "target": None if self.target is None else str(self.target),
            "source_session": self.source_session,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundedAction":
        target = None if d.get("target") is None else Target.parse(d["target"])
        return cls(ActionIndex(d["index"]), target, d.get("source_session"))


class MaskViolation(RuntimeError):
    """A masked-out action index was passed where a valid one is required."""


def valid_targets(index: ActionIndex, belief: "BeliefState") -> list[Target]:
    """Targets for ``index`` whose prerequisites hold under the belief, sorted by id."""
    index = ActionIndex(index)
    if index == ActionIndex.Sleep:
        return []
    if index == ActionIndex.DiscoverRemoteSystems:
        reach = belief.reachable_subnets()
        return [Target.subnet(s) for s in sorted(belief.known_subnets) if s in reach]

    reach = belief.reachable_subnets()
    out = []
    for hid in sorted(belief.hosts):
        hb = belief.hosts[hid]
        if hid == belief.entry_host:
            continue
        if index in (ActionIndex.AggressiveServiceDiscovery, ActionIndex.StealthServiceDiscovery):
            ok = hb.subnet in reach
        elif index == ActionIndex.DiscoverDeception:
            ok = hb.scanned and hb.subnet in reach
        elif index == ActionIndex.ExploitRemoteService:
            ok = (
                hb.scanned
                and hb.access == "None"
                and hb.exploitable
                and hb.decoy is not True
                and hb.subnet in reach
            )
        elif index == ActionIndex.PrivilegeEscalate:
            ok = hb.access == "User"
        elif index == ActionIndex.Impact:
            ok = hb.access == "Root" and not hb.impacted
        elif index == ActionIndex.DegradeServices:
            ok = hb.access == "Root"
        elif index == ActionIndex.Withdraw:
            ok = hb.access in ("User", "Root")
        else:  # pragma: no cover
            ok = False
        if ok:
            out.append(Target.host(hid))
    return out


def action_mask(belief: "BeliefState") -> list[bool]:
    mask = [bool(valid_targets(ActionIndex(i), belief)) for i in range(N_ACTIONS)]
    mask[ActionIndex.Sleep] = True
    return mask


def ground(index: int, intent: Optional["Intent"], belief: "BeliefState") -> GroundedAction:
    """Turn an action index into a concrete environment action.

    The intent's target is honoured when it is valid for this action;
    otherwise the lowest-id valid target is used.
    """
    index = ActionIndex(index)
    sessions = belief.live_sessions()
    source = min(sessions) if sessions else None
    if index == ActionIndex.Sleep:
        return GroundedAction(index, None, source)
    targets = valid_targets(index, belief)
    if not targets:
        raise MaskViolation(f"{index.name} is masked out under the current belief")
    wanted = getattr(intent, "target", None) if intent is not None else None
    target = wanted if wanted in targets else targets[0]
    return GroundedAction(index, target, source)
