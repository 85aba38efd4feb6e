"""Partially observable attack/defense simulator.

Each call to :meth:`Environment.step` executes one red action. Actions take
one or more environment timesteps (see ``actions.DURATION``); the red effect
resolves on the action's last timestep and the defender runs after red on
every timestep.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from .actions import DURATION, ActionIndex, GroundedAction, Target
from .blue import BlueDefender, Restore
from .topology import Topology


class Access(str, Enum):
    NONE = "None"
    USER = "User"
    ROOT = "Root"

    def __str__(self) -> str:
        return self.value


class Outcome(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    BLOCKED = "Blocked"

    def __str__(self) -> str:
        return self.value


class EpisodeOver(RuntimeError):
    pass


@dataclass
class HostState:
    access: Access = Access.NONE
    elevated: bool = False
    scanned: bool = False
    discovered: bool = False
    impacted: bool = False
    degraded: bool = False
    ioc_present: bool = False


@dataclass
class TrueState:
    topology: Topology
    hosts: dict[int, HostState]
    step: int = 0
    red_sessions: set[int] = field(default_factory=set)
    known_subnets: set[int] = field(default_factory=set)

    def check_invariants(self) -> None:
        """Raise AssertionError when the state breaks a kill-chain invariant."""
        for hid, hs in self.hosts.items():
            in_session = hid in self.red_sessions
            assert (hs.access != Access.NONE) == in_session, f"session/access mismatch on h{hid}"
            if hs.elevated:
                assert hs.access == Access.USER, f"h{hid} elevated without user access"
            if hs.access != Access.NONE:
                assert hs.discovered, f"h{hid} accessed but undiscovered"
            if hs.scanned:
                assert hs.discovered, f"h{hid} scanned but undiscovered"
            if hid != self.topology.red_entry_host and hs.access != Access.NONE:
                assert hs.scanned, f"h{hid} compromised without scan"
        assert 0 <= self.step <= self.topology.max_steps


@dataclass(frozen=True)
class ScanResult:
    host: int
    services: tuple[tuple[str, bool], ...]
    decoy_hint: Optional[bool] = None


@dataclass
class Observation:
    step: int
    action_outcome: Outcome = Outcome.SUCCESS
    newly_discovered_hosts: list[int] = field(default_factory=list)
    host_subnets: dict[int, int] = field(default_factory=dict)
    scan_results: list[ScanResult] = field(default_factory=list)
    # levels: "None", "User", "Elevated" (first escalation done), "Root"
    access_changes: list[tuple[int, str]] = field(default_factory=list)
    lost_sessions: list[int] = field(default_factory=list)
    # how many entries of lost_sessions happened before the red action resolved
    lost_before_red: int = 0
    new_subnets: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    def host_ids(self) -> set[int]:
        ids = set(self.newly_discovered_hosts) | set(self.lost_sessions)
        ids |= {r.host for r in self.scan_results}
        ids |= {h for h, _ in self.access_changes}
        return ids

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "action_outcome": str(self.action_outcome),
            "newly_discovered_hosts": list(self.newly_discovered_hosts),
            "host_subnets": {str(k): v for k, v in self.host_subnets.items()},
            "scan_results": [
                {"host": r.host, "services": [list(s) for s in r.services], "decoy_hint": r.decoy_hint}
                for r in self.scan_results
            ],
            "access_changes": [list(c) for c in self.access_changes],
            "lost_sessions": list(self.lost_sessions),
            "lost_before_red": self.lost_before_red,
            "new_subnets": [[s, list(adj)] for s, adj in self.new_subnets],
        }


@dataclass(frozen=True)
class Milestone:
    kind: str  # discover_host | scan_host | compromise | escalate_root | impact | discover_subnet
    ref: int  # host id, or subnet id for discover_subnet
    subnet: int
    defended: bool = False


@dataclass
class RewardInputs:
    action: GroundedAction
    outcome: Outcome
    milestones: list[Milestone] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    blue_penalty: float = 0.0
    restored: list[int] = field(default_factory=list)
    restored_before_red: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action.to_dict(),
            "outcome": str(self.outcome),
            "milestones": [asdict(m) for m in self.milestones],
            "violations": list(self.violations),
            "blue_penalty": self.blue_penalty,
            "restored": list(self.restored),
            "restored_before_red": self.restored_before_red,
        }


@dataclass
class StepResult:
    observation: Observation
    reward_inputs: RewardInputs
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


class Environment:
    """Single-owner simulator instance; ``reset`` and ``step`` must not interleave."""

    def __init__(self, topology: Topology, seed: int = 0) -> None:
        self.topology = topology
        self._seed = seed
        self._rng = np.random.default_rng(seed)
        self.blue = BlueDefender(topology)
        self._state: Optional[TrueState] = None

    # -- lifecycle -------------------------------------------------------

    def reset(self, topology: Optional[Topology] = None, seed: Optional[int] = None) -> Observation:
        if topology is not None:
            self.topology = topology
            self.blue = BlueDefender(topology)
        if seed is not None:
            self._seed = seed
        self._rng = np.random.default_rng(self._seed)
        self.blue.reset()
        topo = self.topology
        hosts = {h.id: HostState() for h in topo.hosts}
        entry = topo.red_entry_host
        hosts[entry].discovered = True
        hosts[entry].access = Access.USER
        self._state = TrueState(
            topology=topo,
            hosts=hosts,
            step=0,
            red_sessions={entry},
            known_subnets={topo.entry_subnet},
        )
        return Observation(
            step=0,
            newly_discovered_hosts=[entry],
            host_subnets={entry: topo.entry_subnet},
            access_changes=[(entry, Access.USER.value)],
        )

    @property
    def state(self) -> TrueState:
        if self._state is None:
            raise RuntimeError("reset() must be called first")
        return self._state

    def true_state(self) -> TrueState:
        return copy.deepcopy(self.state)

    def clone(self) -> "Environment":
        return copy.deepcopy(self)

    @property
    def done(self) -> bool:
        return self.state.step >= self.topology.max_steps

    # -- dynamics ------------------------------------------------------------

    def step(self, action: GroundedAction) -> StepResult:
        st = self.state
        if st.step >= self.topology.max_steps:
            raise EpisodeOver(f"episode finished at step {st.step}")
        duration = DURATION[action.index]
        ticks = min(duration, self.topology.max_steps - st.step)
        obs = Observation(step=st.step)
        inputs = RewardInputs(action=action, outcome=Outcome.SUCCESS)
        info: dict[str, Any] = {"start_step": st.step, "ticks": []}
        reason = None
        for k in range(ticks):
            tick: dict[str, Any] = {"step": st.step, "ioc": [], "restores": []}
            if k == duration - 1:
                before = {h for h, hs in st.hosts.items() if hs.ioc_present}
                obs.lost_before_red = len(obs.lost_sessions)
                inputs.restored_before_red = len(inputs.restored)
                reason = self._resolve(action, obs, inputs)
                tick["ioc"] = sorted(h for h, hs in st.hosts.items() if hs.ioc_present and h not in before)
                tick["red_resolved"] = True
            restores, penalty = self.blue.blue_step(st)
            inputs.blue_penalty += penalty
            for r in restores:
                self._restore(r, obs, inputs)
                tick["restores"].append(r.host)
            info["ticks"].append(tick)
            st.step += 1
        if ticks < duration:
            obs.lost_before_red = len(obs.lost_sessions)
            inputs.restored_before_red = len(inputs.restored)
            inputs.outcome = Outcome.FAILURE
            reason = "truncated"
        obs.action_outcome = inputs.outcome
        obs.step = st.step
        info["reason"] = reason
        info["restored_during_step"] = bool(inputs.restored)
        return StepResult(observation=obs, reward_inputs=inputs, done=self.done, info=info)

    def _restore(self, r: Restore, obs: Observation, inputs: RewardInputs) -> None:
        st = self.state
        hs = st.hosts[r.host]
        had_session = r.host in st.red_sessions
        hs.access = Access.NONE
        hs.elevated = False
        hs.ioc_present = False
        hs.impacted = False
        hs.degraded = False
        st.red_sessions.discard(r.host)
        inputs.restored.append(r.host)
        if had_session:
            obs.lost_sessions.append(r.host)

    def _reachable_subnets(self) -> set[int]:
        st = self.state
        out: set[int] = set()
        for h in st.red_sessions:
            s = self.topology.hosts[h].subnet
            out.add(s)
            out.update(self.topology.subnets[s].adjacent)
        return out

    def _fail(self, inputs: RewardInputs, reason: str, outcome: Outcome = Outcome.FAILURE) -> str:
        inputs.outcome = outcome
        return reason

    def _resolve(self, action: GroundedAction, obs: Observation, inputs: RewardInputs) -> Optional[str]:
        st = self.state
        topo = self.topology
        idx = action.index
        if idx == ActionIndex.Sleep:
            return None

        target: Target = action.target  # type: ignore[assignment]
        if idx == ActionIndex.DiscoverRemoteSystems:
            if not topo.has_subnet(target.id) or target.id not in st.known_subnets:
                return self._fail(inputs, "unknown_target")
            if not st.red_sessions:
                return self._fail(inputs, "no_session", Outcome.BLOCKED)
            if target.id not in self._reachable_subnets():
                return self._fail(inputs, "unreachable", Outcome.BLOCKED)
            defended = topo.subnets[target.id].defended
            for h in topo.hosts_in(target.id):
                hs = st.hosts[h.id]
                if not hs.discovered:
                    hs.discovered = True
                    obs.newly_discovered_hosts.append(h.id)
                    obs.host_subnets[h.id] = h.subnet
                    inputs.milestones.append(Milestone("discover_host", h.id, h.subnet, defended))
            return None

        hid = target.id
        if not topo.has_host(hid) or not st.hosts[hid].discovered:
            return self._fail(inputs, "unknown_target")
        host = topo.hosts[hid]
        hs = st.hosts[hid]
        defended = topo.subnets[host.subnet].defended
        if hid == topo.red_entry_host:
            return self._fail(inputs, "foothold_not_targetable")
        if not st.red_sessions:
            return self._fail(inputs, "no_session", Outcome.BLOCKED)

        if idx in (
            ActionIndex.AggressiveServiceDiscovery,
            ActionIndex.StealthServiceDiscovery,
            ActionIndex.DiscoverDeception,
            ActionIndex.ExploitRemoteService,
        ):
            if idx == ActionIndex.ExploitRemoteService and not hs.scanned:
                inputs.violations.append("exploit_without_scan")
                return self._fail(inputs, "not_scanned")
            if host.subnet not in self._reachable_subnets():
                return self._fail(inputs, "unreachable", Outcome.BLOCKED)

        if idx in (ActionIndex.AggressiveServiceDiscovery, ActionIndex.StealthServiceDiscovery):
            if not hs.scanned:
                hs.scanned = True
                inputs.milestones.append(Milestone("scan_host", hid, host.subnet, defended))
            obs.scan_results.append(
                ScanResult(hid, tuple((s.name, s.exploitable) for s in host.services), None)
            )
            return None

        if idx == ActionIndex.DiscoverDeception:
            if not hs.scanned:
                return self._fail(inputs, "not_scanned")
            obs.scan_results.append(
                ScanResult(hid, tuple((s.name, s.exploitable) for s in host.services), host.is_decoy)
            )
            return None

        if idx == ActionIndex.ExploitRemoteService:
            if hs.access != Access.NONE:
                return self._fail(inputs, "already_compromised")
            if host.is_decoy:
                src = action.source_session if action.source_session in st.red_sessions else min(st.red_sessions)
                st.hosts[src].ioc_present = True
                obs.scan_results.append(
                    ScanResult(hid, tuple((s.name, s.exploitable) for s in host.services), True)
                )
                return self._fail(inputs, "decoy")
            if not host.exploitable:
                return self._fail(inputs, "no_exploitable_service")
            if topo.exploit_failure_prob > 0 and self._rng.random() < topo.exploit_failure_prob:
                return self._fail(inputs, "exploit_failed")
            hs.access = Access.USER
            hs.ioc_present = True
            st.red_sessions.add(hid)
            obs.access_changes.append((hid, Access.USER.value))
            inputs.milestones.append(Milestone("compromise", hid, host.subnet, defended))
            for s in topo.subnets[host.subnet].adjacent:
                if s not in st.known_subnets:
                    st.known_subnets.add(s)
                    obs.new_subnets.append((s, topo.subnets[s].adjacent))
                    inputs.milestones.append(
                        Milestone("discover_subnet", s, s, topo.subnets[s].defended)
                    )
            if not any(s == host.subnet for s, _ in obs.new_subnets):
                # adjacency of the compromised host's own subnet becomes visible
                obs.new_subnets.insert(0, (host.subnet, topo.subnets[host.subnet].adjacent))
            return None

        if idx == ActionIndex.PrivilegeEscalate:
            if hs.access == Access.NONE:
                inputs.violations.append("escalate_without_user")
                return self._fail(inputs, "no_user_access")
            if hs.access == Access.ROOT:
                return self._fail(inputs, "already_root")
            hs.ioc_present = True
            if not hs.elevated:
                hs.elevated = True
                obs.access_changes.append((hid, "Elevated"))
                return None
            hs.elevated = False
            hs.access = Access.ROOT
            obs.access_changes.append((hid, Access.ROOT.value))
            inputs.milestones.append(Milestone("escalate_root", hid, host.subnet, defended))
            return None

        if idx == ActionIndex.Impact:
            if hs.access != Access.ROOT:
                inputs.violations.append("impact_without_root")
                return self._fail(inputs, "no_root")
            if hs.impacted:
                return self._fail(inputs, "already_impacted")
            hs.impacted = True
            inputs.milestones.append(Milestone("impact", hid, host.subnet, defended))
            return None

        if idx == ActionIndex.DegradeServices:
            if hs.access != Access.ROOT:
                return self._fail(inputs, "no_root")
            hs.degraded = True
            return None

        if idx == ActionIndex.Withdraw:
            if hid not in st.red_sessions:
                return self._fail(inputs, "no_session_on_target")
            st.red_sessions.discard(hid)
            hs.access = Access.NONE
            hs.elevated = False
            hs.ioc_present = False
            obs.access_changes.append((hid, Access.NONE.value))
            return None

        raise AssertionError(f"unhandled action {idx}")  # pragma: no cover


def trace_dict(episode: int, result: StepResult, extra: Optional[dict[str, Any]] = None) -> dict[str, Any]:
    """JSON-ready record of one executed step."""
    rec: dict[str, Any] = {
        "episode": episode,
        "step": result.observation.step,
        "start_step": result.info.get("start_step"),
        "action": result.reward_inputs.action.to_dict(),
        "outcome": str(result.observation.action_outcome),
        "reason": result.info.get("reason"),
        "ticks": result.info.get("ticks", []),
        "reward_inputs": result.reward_inputs.to_dict(),
        "observation": result.observation.to_dict(),
        "done": result.done,
    }
    if extra:
        rec.update(extra)
    return rec


def trace_record(episode: int, result: StepResult, extra: Optional[dict[str, Any]] = None) -> str:
    """One line-delimited JSON record for an executed step."""
    return json.dumps(trace_dict(episode, result, extra), sort_keys=True)
