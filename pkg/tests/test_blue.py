from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_redteam.actions import ActionIndex as A, GroundedAction, Target
from hybrid_redteam.blue import BlueDefender, blue_penalty, partition_zones
from hybrid_redteam.env import Access, Environment, Outcome
from hybrid_redteam.topology import DefenderConfig

from conftest import hand_topology


def act(idx, target=None):
    if target is None:
        return GroundedAction(idx, None, 0)
    kind = "subnet" if idx == A.DiscoverRemoteSystems else "host"
    return GroundedAction(idx, Target(kind, target), 0)


REACH_S1 = [
    act(A.DiscoverRemoteSystems, 0),
    act(A.AggressiveServiceDiscovery, 1),
    act(A.ExploitRemoteService, 1),
    act(A.DiscoverRemoteSystems, 1),
    act(A.AggressiveServiceDiscovery, 4),
]


def run(env, actions):
    return [env.step(a) for a in actions]


def test_clean_network_has_no_restores_and_zero_penalty(hand):
    env = Environment(hand)
    env.reset()
    restores, penalty = BlueDefender(hand).blue_step(env.state)
    assert restores == [] and penalty == 0.0


def test_restore_fires_two_ticks_after_ioc(hand):
    env = Environment(hand)
    env.reset()
    run(env, REACH_S1)
    res = env.step(act(A.ExploitRemoteService, 4))
    ticks = res.info["ticks"]
    t = next(tk["step"] for tk in ticks if 4 in tk["ioc"])
    more = run(env, [act(A.Sleep)] * 3)
    all_ticks = ticks + [tk for r in more for tk in r.info["ticks"]]
    restored_at = [tk["step"] for tk in all_ticks if 4 in tk["restores"]]
    assert restored_at == [t + 2]
    hs = env.state.hosts[4]
    assert hs.access == Access.NONE and not hs.ioc_present and 4 not in env.state.red_sessions


def test_undefended_subnet_is_never_restored():
    topo = hand_topology(defended=False)
    env = Environment(topo)
    env.reset()
    results = run(env, REACH_S1 + [act(A.ExploitRemoteService, 4)] + [act(A.Sleep)] * 10)
    assert not any(r.reward_inputs.restored for r in results)
    assert env.state.hosts[4].access == Access.USER


def test_withdraw_before_detection_prevents_restore(hand):
    env = Environment(hand)
    env.reset()
    run(env, REACH_S1)
    env.step(act(A.ExploitRemoteService, 4))
    results = run(env, [act(A.Withdraw, 4)] + [act(A.Sleep)] * 5)
    assert not any(r.reward_inputs.restored for r in results)
    assert env.state.hosts[4].access == Access.NONE and not env.state.hosts[4].ioc_present


def test_penalty_formula_one_impacted_one_root(hand):
    env = Environment(hand)
    env.reset()
    st_ = env.true_state()
    st_.hosts[1].access = Access.ROOT
    st_.hosts[1].impacted = True
    st_.hosts[4].access = Access.ROOT
    st_.red_sessions |= {1, 4}
    # h1 impacted and root, h4 root: one impacted host (5) and two root hosts (1 + 1)
    assert blue_penalty(st_, DefenderConfig()) == -7.0
    st_.hosts[4].access = Access.NONE
    # exactly one impacted and one root host
    assert blue_penalty(st_, DefenderConfig()) == -6.0
    st_.hosts[5].access = Access.USER
    assert blue_penalty(st_, DefenderConfig()) == -6.5


def test_foothold_excluded_from_penalty(hand):
    env = Environment(hand)
    env.reset()
    assert env.state.hosts[0].access == Access.USER
    assert blue_penalty(env.state, DefenderConfig()) == 0.0


def test_zones_partition_defended_subnets():
    zones = partition_zones(frozenset({1, 2, 3, 4, 5, 6, 7}), 5)
    assert len(zones) == 5
    flat = [s for z in zones for s in z]
    assert sorted(flat) == [1, 2, 3, 4, 5, 6, 7]
    assert zones[0] == {1, 6} and zones[4] == {5}


action_ids = st.lists(st.tuples(st.integers(0, 9), st.integers(0, 5)), min_size=5, max_size=60)


def random_action(idx, tid):
    idx = A(idx)
    if idx == A.Sleep:
        return GroundedAction(idx, None, 0)
    if idx == A.DiscoverRemoteSystems:
        return GroundedAction(idx, Target.subnet(tid % 2), 0)
    return GroundedAction(idx, Target.host(tid), 0)


def blue_episode(seq, delay):
    topo = hand_topology(max_steps=80, detection_delay=delay)
    env = Environment(topo)
    env.reset()
    # bias towards reaching the defended subnet so restores actually happen
    steps = [(a, env.step(a)) for a in REACH_S1 + [act(A.ExploitRemoteService, 4)]]
    for idx, tid in seq:
        if env.done:
            break
        a = random_action(idx, tid)
        steps.append((a, env.step(a)))
    return topo, env, steps


def restore_problems(topo, steps, delay):
    """Check restore timing over an episode.

    Returns (restores checked, withdrawals that prevented one, list of problems).
    """
    defended = {h.id for h in topo.hosts if topo.subnets[h.subnet].defended}
    ioc_events, restores, withdrawals = [], {}, {}
    for a, res in steps:
        for tk in res.info["ticks"]:
            restores[tk["step"]] = set(tk["restores"])
            ioc_events += [(tk["step"], h) for h in tk["ioc"] if h in defended]
            if tk.get("red_resolved") and a.index == A.Withdraw and res.observation.action_outcome == Outcome.SUCCESS:
                withdrawals.setdefault(a.target.id, []).append(tk["step"])
    problems, restored, prevented = [], 0, 0
    for t, h in ioc_events:
        due = t + delay
        if due not in restores:  # episode (or generated sequence) ended first
            continue
        if any(t < w <= due for w in withdrawals.get(h, [])):
            prevented += 1
            if h in restores[due]:
                problems.append(f"h{h} restored at {due} despite withdraw")
        elif h in restores[due]:
            restored += 1
        else:
            problems.append(f"IOC on h{h} at {t} not restored at {due}")
    stray = set().union(*restores.values()) - defended
    if stray:
        problems.append(f"undefended hosts restored: {sorted(stray)}")
    return restored, prevented, problems


def presence_problems(actions):
    """Replay ``actions`` and report any restored host that still holds red presence."""
    topo = hand_topology(max_steps=80)
    env = Environment(topo)
    env.reset()
    problems = []
    for a in REACH_S1 + list(actions):
        if env.done:
            break
        res = env.step(a)
        red_tick = next((tk["step"] for tk in res.info["ticks"] if tk.get("red_resolved")), None)
        for tk in res.info["ticks"]:
            for h in tk["restores"]:
                red_after = red_tick is not None and red_tick > tk["step"]
                if red_after and a.target is not None and a.target.kind == "host" and a.target.id == h:
                    continue  # red re-took the host later in the same action
                hs = env.state.hosts[h]
                if hs.access != Access.NONE or hs.ioc_present or hs.impacted or hs.degraded or h in env.state.red_sessions:
                    problems.append(f"h{h} still holds red presence after restore at {tk['step']}")
    return problems


@settings(max_examples=200, deadline=None)
@given(seq=action_ids, delay=st.integers(0, 3))
def test_restore_clears_everything_exactly_d_ticks_after_ioc(seq, delay):
    topo, _, steps = blue_episode(seq, delay)
    assert restore_problems(topo, steps, delay)[2] == []


@settings(max_examples=100, deadline=None)
@given(seq=action_ids)
def test_after_a_restore_the_host_holds_no_red_presence(seq):
    assert presence_problems(random_action(i, t) for i, t in seq) == []


@settings(max_examples=50, deadline=None)
@given(seq=action_ids)
def test_defender_is_deterministic(seq):
    a = blue_episode(seq, 2)[2]
    b = blue_episode(seq, 2)[2]
    assert [r.reward_inputs.restored for _, r in a] == [r.reward_inputs.restored for _, r in b]
    assert [r.reward_inputs.blue_penalty for _, r in a] == [r.reward_inputs.blue_penalty for _, r in b]
