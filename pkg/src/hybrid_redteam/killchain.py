"""Shortest kill-chain search over the simulator itself.

Used as an oracle: it only drives ``Environment.step`` on cloned instances,
never the red-side masking or planning code.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Iterable, Optional

from .actions import ActionIndex, GroundedAction, Target
from .env import Environment, Outcome, TrueState
from .topology import Topology


def state_key(st: TrueState) -> tuple:
    hosts = tuple(
        (h, hs.access.value, hs.elevated, hs.scanned, hs.discovered, hs.impacted, hs.degraded, hs.ioc_present)
        for h, hs in sorted(st.hosts.items())
    )
    return hosts, tuple(sorted(st.red_sessions)), tuple(sorted(st.known_subnets))


def all_actions(topology: Topology, allowed: Iterable[ActionIndex] = tuple(ActionIndex)) -> list[GroundedAction]:
    out = []
    for idx in allowed:
        idx = ActionIndex(idx)
        if idx == ActionIndex.Sleep:
            out.append(GroundedAction(idx, None, topology.red_entry_host))
        elif idx == ActionIndex.DiscoverRemoteSystems:
            out.extend(GroundedAction(idx, Target.subnet(s.id), topology.red_entry_host) for s in topology.subnets)
        else:
            out.extend(GroundedAction(idx, Target.host(h.id), topology.red_entry_host) for h in topology.hosts)
    return out


def shortest_impact_path(
    topology: Topology,
    allowed: Iterable[ActionIndex] = tuple(ActionIndex),
    max_steps: Optional[int] = None,
) -> tuple[int, list[GroundedAction]]:
    """Fewest environment timesteps from reset to a successful Impact.

    Uniform-cost search: actions cost their duration in timesteps. Returns
    ``(steps, actions)``; raises ``LookupError`` when no path exists.
    """
    actions = all_actions(topology, allowed)
    root = Environment(topology)
    root.reset()
    limit = max_steps if max_steps is not None else topology.max_steps
    counter = itertools.count()
    frontier = [(0, next(counter), root, [])]
    seen = {state_key(root.state): 0}
    while frontier:
        cost, _, env, path = heapq.heappop(frontier)
        if env is None:
            # impact entries are ordered by cost with everything else
            return cost, path
        if cost > seen.get(state_key(env.state), cost):
            continue
        for a in actions:
            if env.done:
                break
            child = env.clone()
            res = child.step(a)
            if res.observation.action_outcome != Outcome.SUCCESS:
                continue
            new_cost = child.state.step
            if new_cost > limit:
                continue
            new_path = path + [a]
            if a.index == ActionIndex.Impact:
                heapq.heappush(frontier, (new_cost, next(counter), None, new_path))
                continue
            key = state_key(child.state)
            if key in seen and seen[key] <= new_cost:
                continue
            seen[key] = new_cost
            heapq.heappush(frontier, (new_cost, next(counter), child, new_path))
    raise LookupError("no action sequence reaches a successful Impact")


def golden_trace(topology: Topology, stealth: bool = False) -> list[GroundedAction]:
    """The canonical minimum kill chain against the lowest-id exploitable host."""
    entry = topology.red_entry_host
    subnet = topology.entry_subnet
    target = min(
        h.id for h in topology.hosts_in(subnet)
        if h.id != entry and not h.is_decoy and h.exploitable
    )
    scan = ActionIndex.StealthServiceDiscovery if stealth else ActionIndex.AggressiveServiceDiscovery
    t = Target.host(target)
    return [
        GroundedAction(ActionIndex.DiscoverRemoteSystems, Target.subnet(subnet), entry),
        GroundedAction(scan, t, entry),
        GroundedAction(ActionIndex.ExploitRemoteService, t, entry),
        GroundedAction(ActionIndex.PrivilegeEscalate, t, entry),
        GroundedAction(ActionIndex.PrivilegeEscalate, t, entry),
        GroundedAction(ActionIndex.Impact, t, entry),
    ]
