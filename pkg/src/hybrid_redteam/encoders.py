"""Numeric features for the controller, text summaries for the planner, and intent embeddings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .actions import N_ACTIONS, TACTICS
from .belief import BeliefState
from .intent import CATEGORY_VOCAB, RISK_POSTURES, Intent

HOST_FIELDS = (
    "discovered",
    "scanned",
    "access_none",
    "access_user",
    "access_elevated",
    "access_root",
    "impacted",
    "degraded",
    "decoy_known_true",
    "decoy_known_false",
    "exploitable",
    "is_entry",
    "reachable",
    "service_fraction",
    "exploit_failures",
    "restored_before",
    "subnet_fraction",
    "last_action_target",
    "ever_compromised",
    "session_live",
    "in_swept_subnet",
)

GLOBAL_FIELDS = (
    ("time", 1),
    ("discovered_fraction", 1),
    ("scanned_fraction", 1),
    ("session_fraction", 1),
    ("root_fraction", 1),
    ("impacted_fraction", 1),
    ("known_subnet_fraction", 1),
    ("last_action", N_ACTIONS),
    ("last_outcome", 3),
    ("lost_session", 1),
    ("compromised_any", 1),
    ("unswept_reachable_fraction", 1),
    ("recent_failure_fraction", 1),
    ("elevated_any", 1),
)

OUTCOMES = ("Success", "Failure", "Blocked")
MAX_SERVICES = 10
MAX_SUBNETS = 8
SUMMARY_TEMPLATE_VERSION = "summary-v1"


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureLayout:
    capacity_hosts: int = 20
    max_subnets: int = MAX_SUBNETS

    @property
    def per_host(self) -> int:
        return len(HOST_FIELDS)

    @property
    def global_bits(self) -> int:
        return sum(n for _, n in GLOBAL_FIELDS)

    @property
    def dim(self) -> int:
        return self.capacity_hosts * self.per_host + self.global_bits

    def manifest(self) -> dict:
        return {
            "version": 1,
            "dim": self.dim,
            "capacity_hosts": self.capacity_hosts,
            "max_subnets": self.max_subnets,
            "host_block": list(HOST_FIELDS),
            "global_block": [[name, n] for name, n in GLOBAL_FIELDS],
            "host_block_order": "slot i holds host id i",
        }

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.manifest(), sort_keys=True).encode()).hexdigest()[:16]


DEFAULT_LAYOUT = FeatureLayout()


def featurize(belief: BeliefState, layout: FeatureLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Fixed-size feature vector in [0, 1]; host ``i`` occupies block ``i``.

    The last step's action and outcome are read from the belief, which
    records them on every update.
    """
    cap = layout.capacity_hosts
    too_big = [h for h in belief.hosts if h >= cap]
    if len(belief.hosts) > cap or too_big:
        raise CapacityError(
            f"belief holds {len(belief.hosts)} hosts (max id {max(belief.hosts)}); layout capacity is {cap}"
        )
    per = layout.per_host
    vec = np.zeros(layout.dim, dtype=np.float32)
    reach = belief.reachable_subnets()
    for hid, hb in belief.hosts.items():
        base = hid * per
        row = (
            1.0,
            float(hb.scanned),
            float(hb.access == "None"),
            float(hb.access == "User" and not hb.elevated),
            float(hb.access == "User" and hb.elevated),
            float(hb.access == "Root"),
            float(hb.impacted),
            float(hb.degraded),
            float(hb.decoy is True),
            float(hb.decoy is False),
            float(hb.exploitable),
            float(hid == belief.entry_host),
            float(hb.subnet in reach),
            len(hb.services) / MAX_SERVICES,
            min(hb.exploit_failures, 3) / 3.0,
            float(hb.times_restored > 0),
            min(hb.subnet, layout.max_subnets - 1) / (layout.max_subnets - 1),
            float(belief.last_target == f"h{hid}"),
            float(hb.ever_compromised),
            float(hb.access in ("User", "Root")),
            float(hb.subnet in belief.swept_subnets),
        )
        vec[base : base + per] = row

    g = cap * per
    n = max(len(belief.hosts), 1)
    sessions = belief.live_sessions()
    vec[g] = min(belief.step / belief.max_steps, 1.0)
    vec[g + 1] = len(belief.hosts) / cap
    vec[g + 2] = sum(hb.scanned for hb in belief.hosts.values()) / n
    vec[g + 3] = len(sessions) / n
    vec[g + 4] = sum(hb.access == "Root" for hb in belief.hosts.values()) / n
    vec[g + 5] = sum(hb.impacted for hb in belief.hosts.values()) / n
    vec[g + 6] = len(belief.known_subnets) / layout.max_subnets
    off = g + 7
    if belief.last_action is not None:
        vec[off + belief.last_action] = 1.0
    off += N_ACTIONS
    if belief.last_outcome is not None:
        vec[off + OUTCOMES.index(belief.last_outcome)] = 1.0
    off += 3
    vec[off] = float(belief.lost_session_events > 0)
    vec[off + 1] = float(belief.compromises > 0)
    unswept = [s for s in belief.known_subnets if s in reach and s not in belief.swept_subnets]
    vec[off + 2] = len(unswept) / layout.max_subnets
    vec[off + 3] = len(belief.recent_failures) / 8.0
    vec[off + 4] = float(any(hb.elevated for hb in belief.hosts.values()))
    return vec


# -- intent embedding ------------------------------------------------------

INTENT_DIM = 128
_CAT_OFF = 0
_TAC_OFF = _CAT_OFF + len(CATEGORY_VOCAB)
_NO_TARGET = _TAC_OFF + len(TACTICS)
_HOST_OFF = _NO_TARGET + 1
_HOST_SLOTS = 64
_SUBNET_OFF = _HOST_OFF + _HOST_SLOTS
_SUBNET_SLOTS = 16
_RISK = _SUBNET_OFF + _SUBNET_SLOTS
_CONF = _RISK + 1
assert _CONF < INTENT_DIM


def encode_intent(intent: Optional[Intent]) -> np.ndarray:
    """128-dim embedding; ``None`` (no planner) encodes as all zeros."""
    vec = np.zeros(INTENT_DIM, dtype=np.float32)
    if intent is None:
        return vec
    vec[_CAT_OFF + CATEGORY_VOCAB.index(intent.category)] = 1.0
    vec[_TAC_OFF + TACTICS.index(intent.tactic)] = 1.0
    t = intent.target
    if t is None:
        vec[_NO_TARGET] = 1.0
    elif t.kind == "host":
        vec[_HOST_OFF + min(t.id, _HOST_SLOTS - 1)] = 1.0
    else:
        vec[_SUBNET_OFF + min(t.id, _SUBNET_SLOTS - 1)] = 1.0
    vec[_RISK] = RISK_POSTURES.index(intent.risk_posture) / (len(RISK_POSTURES) - 1)
    vec[_CONF] = float(intent.confidence)
    return vec


# -- text summary -------------------------------------------------------------

TOKEN_BUDGET = 600


def count_tokens(text: str) -> int:
    return len(text.split())


def _lines_within(lines: Sequence[str], budget: int) -> tuple[list[str], int]:
    kept = []
    for line in lines:
        n = count_tokens(line)
        if n > budget:
            break
        kept.append(line)
        budget -= n
    return kept, budget


def summarize(belief: BeliefState, reflections: Iterable = (), budget: int = TOKEN_BUDGET) -> str:
    """Deterministic planner-facing summary, cut to ``budget`` whitespace tokens.

    Sections are admitted in priority order: sessions, recent failures,
    host list, reflections. The header (step counter and foothold) is always kept.
    """
    entry = belief.entry_host
    header = [
        f"Step {belief.step}/{belief.max_steps}",
        f"Foothold: h{entry} in s{belief.entry_subnet} ({belief.hosts[entry].access if entry in belief.hosts else 'None'} access)",
    ]
    remaining = budget - sum(count_tokens(l) for l in header)
    out = list(header)

    sessions = [h for h in belief.live_sessions() if h != entry]
    failures = list(belief.recent_failures)
    hosts = [h for h in sorted(belief.hosts) if h != entry]
    reflections = list(reflections)

    sections = []
    if sessions:
        sections.append(
            ["Sessions:"] + [f"- h{h} s{belief.hosts[h].subnet} {belief.hosts[h].stage}" for h in sessions]
        )
    if failures:
        sections.append(
            ["Recent failures:"] + [f"- step {s}: {name} {tgt or '-'}" for s, name, tgt in failures]
        )
    if hosts:
        lines = ["Hosts:"]
        for h in hosts:
            hb = belief.hosts[h]
            extra = []
            if hb.services:
                extra.append("services=" + ",".join(n + ("*" if ok else "") for n, ok in hb.services))
            if hb.decoy is True:
                extra.append("DECOY")
            if hb.times_restored:
                extra.append(f"restored={hb.times_restored}")
            lines.append(f"- h{h} s{hb.subnet} {hb.stage} " + " ".join(extra))
        known = sorted(belief.known_subnets)
        lines.append("Subnets known: " + " ".join(f"s{s}" + ("(swept)" if s in belief.swept_subnets else "") for s in known))
        sections.append(lines)
    if reflections:
        sections.append(["Reflections:"] + [f"- {getattr(r, 'text', r)}" for r in reflections])

    for lines in sections:
        # a section header is only worth emitting with at least one entry
        if remaining < count_tokens(lines[0]) + count_tokens(lines[1]):
            continue
        kept, remaining = _lines_within(lines, remaining)
        out.extend(kept)
    return "\n".join(out)
