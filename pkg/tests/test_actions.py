from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from hybrid_redteam.actions import (
    ACTION_NAMES,
    ACTION_TACTIC,
    N_ACTIONS,
    ActionIndex as A,
    GroundedAction,
    MaskViolation,
    Target,
    action_mask,
    ground,
    valid_targets,
)
from hybrid_redteam.belief import BeliefState
from hybrid_redteam.env import Environment, Outcome
from hybrid_redteam.intent import Intent
from hybrid_redteam.killchain import all_actions, state_key


TABLE = [
    (0, "DiscoverRemoteSystems", "Discovery"),
    (1, "AggressiveServiceDiscovery", "Discovery"),
    (2, "StealthServiceDiscovery", "Discovery"),
    (3, "DiscoverDeception", "Discovery"),
    (4, "ExploitRemoteService", "Initial Access"),
    (5, "PrivilegeEscalate", "Privilege Escalation"),
    (6, "Impact", "Impact"),
    (7, "DegradeServices", "Impact"),
    (8, "Withdraw", "Defense Evasion"),
    (9, "Sleep", "Defense Evasion"),
]


@pytest.mark.parametrize("value,name,tactic", TABLE)
def test_action_table(value, name, tactic):
    assert A(value).name == name and ACTION_NAMES[value] == name
    assert ACTION_TACTIC[A(value)] == tactic


def test_target_kinds_enforced():
    with pytest.raises(ValueError):
        GroundedAction(A.DiscoverRemoteSystems, Target.host(1))
    with pytest.raises(ValueError):
        GroundedAction(A.Sleep, Target.host(1))
    with pytest.raises(ValueError):
        GroundedAction(A.Impact, None)
    assert Target.parse("h12") == Target.host(12) and Target.parse("S3") == Target.subnet(3)


def test_fresh_belief_allows_only_sweep_and_sleep(session_factory, hand):
    s = session_factory(hand)
    mask = action_mask(s.belief)
    assert [i for i in range(N_ACTIONS) if mask[i]] == [0, 9]


def drive(s, actions):
    for a in actions:
        s.do(a)


def G(idx, t=None):
    if t is None:
        return GroundedAction(idx, None, 0)
    return GroundedAction(idx, Target("subnet" if idx == A.DiscoverRemoteSystems else "host", t), 0)


def test_root_host_enables_impact_and_degrade(session_factory, hand):
    s = session_factory(hand)
    drive(s, [G(A.DiscoverRemoteSystems, 0), G(A.AggressiveServiceDiscovery, 1), G(A.ExploitRemoteService, 1),
              G(A.PrivilegeEscalate, 1), G(A.PrivilegeEscalate, 1)])
    mask = action_mask(s.belief)
    assert mask[A.Impact] and mask[A.DegradeServices]
    assert not mask[A.PrivilegeEscalate]


def test_restored_belief_allows_exploit_not_escalate(session_factory, hand):
    s = session_factory(hand)
    drive(s, [G(A.DiscoverRemoteSystems, 0), G(A.AggressiveServiceDiscovery, 1), G(A.ExploitRemoteService, 1),
              G(A.DiscoverRemoteSystems, 1), G(A.AggressiveServiceDiscovery, 4), G(A.ExploitRemoteService, 4)])
    drive(s, [G(A.Withdraw, 1)] + [G(A.Sleep)] * 4)
    b = s.belief
    assert b.hosts[4].access == "None" and b.hosts[4].times_restored == 1
    assert all(hb.access == "None" for h, hb in b.hosts.items() if h != b.entry_host)
    mask = action_mask(b)
    assert mask[A.ExploitRemoteService] and not mask[A.PrivilegeEscalate]


def test_ground_honours_valid_intent_target(session_factory, hand):
    s = session_factory(hand)
    drive(s, [G(A.DiscoverRemoteSystems, 0), G(A.AggressiveServiceDiscovery, 1), G(A.AggressiveServiceDiscovery, 3),
              G(A.ExploitRemoteService, 1), G(A.DiscoverRemoteSystems, 1), G(A.AggressiveServiceDiscovery, 5),
              G(A.AggressiveServiceDiscovery, 4)])
    intent = Intent("ExploitRemoteService", target=Target.host(5))
    assert ground(A.ExploitRemoteService, intent, s.belief) == GroundedAction(A.ExploitRemoteService, Target.host(5), 0)


def test_ground_falls_back_to_lowest_valid_id(session_factory, hand):
    s = session_factory(hand)
    drive(s, [G(A.DiscoverRemoteSystems, 0), G(A.AggressiveServiceDiscovery, 3), G(A.AggressiveServiceDiscovery, 2),
              G(A.AggressiveServiceDiscovery, 1)])
    intent = Intent("ExploitRemoteService", target=Target.host(9))
    # h9 is unknown, so the lowest valid id wins; h3 has no exploitable service
    assert ground(A.ExploitRemoteService, intent, s.belief).target == Target.host(1)
    assert [t.id for t in valid_targets(A.ExploitRemoteService, s.belief)] == [1, 2]


def test_ground_sleep_and_masked_index(session_factory, hand):
    s = session_factory(hand)
    assert ground(A.Sleep, Intent("Impact"), s.belief) == GroundedAction(A.Sleep, None, 0)
    with pytest.raises(MaskViolation):
        ground(A.Impact, None, s.belief)


def test_grounding_is_deterministic(session_factory, hand):
    s = session_factory(hand)
    drive(s, [G(A.DiscoverRemoteSystems, 0)])
    intent = Intent("Discovery")
    assert ground(A.AggressiveServiceDiscovery, intent, s.belief) == ground(A.AggressiveServiceDiscovery, intent, s.belief.copy())


def _oracle_mask(env: Environment, topology) -> list[bool]:
    """Action i is available iff some concrete target makes the environment report Success."""
    out = [False] * N_ACTIONS
    for a in all_actions(topology):
        if out[a.index]:
            continue
        child = env.clone()
        if child.step(a).observation.action_outcome == Outcome.SUCCESS:
            out[a.index] = True
    return out


def test_mask_matches_brute_force_on_three_host_scenario(tiny_topology):
    """Breadth-first over every reachable (state, belief) of a 3-host network."""
    topo = tiny_topology
    env = Environment(topo)
    obs = env.reset()
    belief = BeliefState.from_reset(obs, topo.red_entry_host, topo.entry_subnet, topo.max_steps)
    actions = all_actions(topo)
    queue = deque([(env, belief)])
    seen = set()
    checked = 0
    while queue:
        env, belief = queue.popleft()
        key = (state_key(env.state), tuple(sorted(belief.swept_subnets)))
        if key in seen or env.state.step > 40:
            continue
        seen.add(key)
        assert action_mask(belief) == _oracle_mask(env, topo), key
        checked += 1
        for a in actions:
            child = env.clone()
            res = child.step(a)
            if res.observation.action_outcome != Outcome.SUCCESS:
                continue
            b = belief.copy()
            b.update(a, res.observation)
            queue.append((child, b))
    assert checked > 20


SAFE_REASONS = {"decoy", "truncated", "exploit_failed"}


def mask_attributable(res, action) -> bool:
    """Failures caused by the mask letting through an invalid action (not decoys, horizon or blue)."""
    if res.observation.action_outcome == Outcome.SUCCESS:
        return False
    if res.info["reason"] in SAFE_REASONS:
        return False
    k = res.reward_inputs.restored_before_red
    if k and (res.observation.lost_before_red or (action.target and action.target.id in res.reward_inputs.restored[:k])):
        return False
    return True


def test_random_masked_policy_is_sound(session_factory, stage1_topology):
    rng = np.random.default_rng(5)
    bad = 0
    for episode in range(10):
        s = session_factory(stage1_topology, seed=episode)
        while not s.env.done:
            mask = action_mask(s.belief)
            idx = int(rng.choice(np.flatnonzero(mask)))
            targets = valid_targets(A(idx), s.belief)
            intent = None
            if targets:
                intent = Intent(A(idx).name, target=targets[int(rng.integers(len(targets)))])
            a = ground(idx, intent, s.belief)
            bad += mask_attributable(s.do(a), a)
    assert bad == 0
