"""Deterministic IOC-driven defender: zone-scoped agents that restore compromised hosts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .topology import DefenderConfig, Topology

if TYPE_CHECKING:  # pragma: no cover
    from .env import TrueState

INVESTIGATE = "Investigate"
RECOVER = "Recover"


@dataclass(frozen=True)
class Restore:
    host: int
    agent: int


@dataclass
class BlueAgentState:
    zone: frozenset[int]
    mode: dict[int, str] = field(default_factory=dict)
    detection_delay_remaining: dict[int, int] = field(default_factory=dict)


def partition_zones(defended: frozenset[int], agent_count: int) -> list[frozenset[int]]:
    """Round-robin the defended subnets over the agents; undefended subnets are unmonitored."""
    zones: list[set[int]] = [set() for _ in range(agent_count)]
    for i, s in enumerate(sorted(defended)):
        zones[i % agent_count].add(s)
    return [frozenset(z) for z in zones]


def blue_penalty(state: "TrueState", config: DefenderConfig) -> float:
    impacted = root = user = 0
    entry = state.topology.red_entry_host
    for hid, hs in state.hosts.items():
        if hid == entry:
            continue
        if hs.impacted:
            impacted += 1
        if hs.access == "Root":
            root += 1
        elif hs.access == "User":
            user += 1
    penalty = config.impacted_weight * impacted + config.root_weight * root + config.user_weight * user
    return -penalty if penalty else 0.0


class BlueDefender:
    def __init__(self, topology: Topology, config: DefenderConfig | None = None) -> None:
        self.topology = topology
        self.config = config or topology.defender
        self.agents: list[BlueAgentState] = []
        self.reset()

    def reset(self) -> None:
        zones = partition_zones(self.topology.defended_subnets, self.config.agent_count)
        self.agents = []
        for zone in zones:
            agent = BlueAgentState(zone=zone)
            for h in self.topology.hosts:
                if h.subnet in zone:
                    agent.mode[h.id] = INVESTIGATE
            self.agents.append(agent)

    def blue_step(self, state: "TrueState") -> tuple[list[Restore], float]:
        """One defender tick over ``state``; the caller applies the returned restores.

        The penalty is measured before any restore takes effect.
        """
        penalty = blue_penalty(state, self.config)
        restores: list[Restore] = []
        for a, agent in enumerate(self.agents):
            countdown = agent.detection_delay_remaining
            for hid in sorted(agent.mode):
                hs = state.hosts[hid]
                if not hs.ioc_present:
                    # withdrawn or already cleaned before detection completed
                    countdown.pop(hid, None)
                    agent.mode[hid] = INVESTIGATE
                    continue
                if hid in countdown:
                    countdown[hid] -= 1
                else:
                    countdown[hid] = self.config.detection_delay
                    agent.mode[hid] = RECOVER
                if countdown[hid] <= 0:
                    restores.append(Restore(hid, a))
                    del countdown[hid]
                    agent.mode[hid] = INVESTIGATE
        return restores, penalty

    def zone_of(self, host_id: int) -> int | None:
        for a, agent in enumerate(self.agents):
            if host_id in agent.mode:
                return a
        return None
