from __future__ import annotations

import pytest

from hybrid_redteam.actions import GroundedAction
from hybrid_redteam.belief import BeliefState
from hybrid_redteam.env import Environment
from hybrid_redteam.topology import ScenarioConfig, curriculum_stage, generate_scenario


def tiny_config(**kw) -> ScenarioConfig:
    base = dict(
        subnet_count=1,
        hosts_per_subnet=(3, 3),
        decoy_fraction=0.0,
        defended_subnets=frozenset(),
        max_steps=100,
        seed=7,
    )
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.fixture
def tiny_topology():
    return generate_scenario(tiny_config())


@pytest.fixture
def stage1_topology():
    return generate_scenario(curriculum_stage(1, seed=0))


class Session:
    """Environment plus a belief kept in sync, for driving tests step by step."""

    def __init__(self, topology, seed: int = 0) -> None:
        self.env = Environment(topology, seed)
        obs = self.env.reset()
        self.belief = BeliefState.from_reset(obs, topology.red_entry_host, topology.entry_subnet, topology.max_steps)
        self.results = []

    def do(self, action: GroundedAction):
        res = self.env.step(action)
        self.belief.update(action, res.observation)
        self.results.append(res)
        return res


@pytest.fixture
def session_factory():
    return Session


def hand_topology(max_steps: int = 60, defended: bool = True, detection_delay: int = 2):
    """s0 = {h0 entry, h1 exploitable, h2 decoy, h3 hardened}; s1 = {h4, h5} exploitable, defended by default."""
    from hybrid_redteam.topology import DefenderConfig, Host, Service, Subnet, Topology

    ok = (Service("ssh", True),)
    hard = (Service("https", False),)
    hosts = (
        Host(0, 0, ok),
        Host(1, 0, ok),
        Host(2, 0, ok, is_decoy=True),
        Host(3, 0, hard),
        Host(4, 1, ok),
        Host(5, 1, (Service("smb", True), Service("rdp", False))),
    )
    topo = Topology(
        subnets=(Subnet(0, (1,)), Subnet(1, (0,), defended)),
        hosts=hosts,
        red_entry_host=0,
        max_steps=max_steps,
        defender=DefenderConfig(detection_delay=detection_delay),
    )
    topo.validate()
    return topo


@pytest.fixture
def hand():
    return hand_topology()


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = getattr(sys.modules.get("test_acceptance"), "ACCEPTANCE", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
