"""The red agent's accumulated partial view, built only from observations."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

from .actions import ActionIndex, GroundedAction
from .env import Observation, Outcome

RECENT_FAILURES = 8


@dataclass
class HostBelief:
    subnet: int
    scanned: bool = False
    services: tuple[tuple[str, bool], ...] = ()
    access: str = "None"
    elevated: bool = False
    impacted: bool = False
    degraded: bool = False
    decoy: Optional[bool] = None
    exploit_failures: int = 0
    times_restored: int = 0
    ever_compromised: bool = False

    @property
    def exploitable(self) -> bool:
        return any(ok for _, ok in self.services)

    @property
    def stage(self) -> str:
        if self.impacted:
            return "impacted"
        if self.access == "Root":
            return "root"
        if self.access == "User":
            return "elevated" if self.elevated else "user"
        if self.scanned:
            return "scanned"
        return "discovered"


@dataclass
class BeliefState:
    entry_host: int
    entry_subnet: int
    max_steps: int
    step: int = 0
    hosts: dict[int, HostBelief] = field(default_factory=dict)
    known_subnets: set[int] = field(default_factory=set)
    swept_subnets: set[int] = field(default_factory=set)
    subnet_edges: dict[int, tuple[int, ...]] = field(default_factory=dict)
    last_action: Optional[int] = None
    last_outcome: Optional[str] = None
    last_target: Optional[str] = None
    recent_failures: list[tuple[int, str, Optional[str]]] = field(default_factory=list)
    lost_session_events: int = 0
    compromises: int = 0

    @classmethod
    def from_reset(cls, obs: Observation, entry_host: int, entry_subnet: int, max_steps: int) -> "BeliefState":
        b = cls(entry_host=entry_host, entry_subnet=entry_subnet, max_steps=max_steps, step=obs.step)
        b.known_subnets.add(entry_subnet)
        for h in obs.newly_discovered_hosts:
            b.hosts[h] = HostBelief(subnet=obs.host_subnets.get(h, entry_subnet))
        for h, level in obs.access_changes:
            b._set_access(h, level)
        return b

    def copy(self) -> "BeliefState":
        return copy.deepcopy(self)

    # -- queries ------------------------------------------------------------

    def live_sessions(self) -> list[int]:
        return sorted(h for h, hb in self.hosts.items() if hb.access in ("User", "Root"))

    def session_subnets(self) -> set[int]:
        return {self.hosts[h].subnet for h in self.live_sessions()}

    def reachable_subnets(self) -> set[int]:
        out: set[int] = set()
        for s in self.session_subnets():
            out.add(s)
            out.update(self.subnet_edges.get(s, ()))
        return out

    def discovered_count(self) -> int:
        return len(self.hosts)

    def hosts_with(self, **flags) -> list[int]:
        return sorted(h for h, hb in self.hosts.items() if all(getattr(hb, k) == v for k, v in flags.items()))

    # -- updates ------------------------------------------------------------

    def _set_access(self, host: int, level: str) -> None:
        hb = self.hosts[host]
        if level == "Elevated":
            hb.access, hb.elevated = "User", True
        else:
            hb.access, hb.elevated = level, False

    def _lose(self, hosts: list[int]) -> None:
        for h in hosts:
            hb = self.hosts[h]
            hb.access, hb.elevated, hb.impacted, hb.degraded = "None", False, False, False
            hb.times_restored += 1
            self.lost_session_events += 1

    def update(self, action: GroundedAction, obs: Observation) -> None:
        """Fold the result of ``action`` into the belief."""
        self.step = obs.step
        self.last_action = int(action.index)
        self.last_outcome = str(obs.action_outcome)
        self.last_target = None if action.target is None else str(action.target)
        self._lose(obs.lost_sessions[: obs.lost_before_red])
        for h in obs.newly_discovered_hosts:
            subnet = obs.host_subnets.get(h)
            if subnet is None and action.target is not None and action.target.kind == "subnet":
                subnet = action.target.id
            self.hosts.setdefault(h, HostBelief(subnet=subnet if subnet is not None else -1))
        if action.index == ActionIndex.DiscoverRemoteSystems and obs.action_outcome == Outcome.SUCCESS:
            self.swept_subnets.add(action.target.id)  # type: ignore[union-attr]
        for r in obs.scan_results:
            hb = self.hosts[r.host]
            hb.scanned = True
            hb.services = tuple(tuple(s) for s in r.services)  # type: ignore[misc]
            if r.decoy_hint is not None:
                hb.decoy = r.decoy_hint
        for s, adj in obs.new_subnets:
            self.known_subnets.add(s)
            self.subnet_edges[s] = tuple(adj)
            for t in adj:
                edges = set(self.subnet_edges.get(t, ()))
                edges.add(s)
                self.subnet_edges[t] = tuple(sorted(edges))
        for h, level in obs.access_changes:
            if level == "User" and self.hosts[h].access == "None" and h != self.entry_host:
                self.hosts[h].ever_compromised = True
                self.compromises += 1
            self._set_access(h, level)
        if action.index == ActionIndex.Impact and obs.action_outcome == Outcome.SUCCESS:
            self.hosts[action.target.id].impacted = True  # type: ignore[union-attr]
        if action.index == ActionIndex.DegradeServices and obs.action_outcome == Outcome.SUCCESS:
            self.hosts[action.target.id].degraded = True  # type: ignore[union-attr]
        if (
            action.index == ActionIndex.ExploitRemoteService
            and obs.action_outcome != Outcome.SUCCESS
            and action.target is not None
            and action.target.id in self.hosts
        ):
            self.hosts[action.target.id].exploit_failures += 1
        self._lose(obs.lost_sessions[obs.lost_before_red :])
        if obs.action_outcome != Outcome.SUCCESS:
            self.recent_failures.append((obs.step, action.index.name, self.last_target))
            del self.recent_failures[:-RECENT_FAILURES]
