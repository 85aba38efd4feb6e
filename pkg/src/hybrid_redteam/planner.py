"""Strategic layer: intent generation, replanning schedule and cross-episode reflection."""

from __future__ import annotations

import json
import logging
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence

import httpx

from .actions import ACTION_TACTIC, ActionIndex, Target
from .belief import BeliefState
from .intent import INTENT_SCHEMA, Intent, IntentParseError, parse_intent

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"
ENDPOINT_ENV_VAR = "HYBRID_REDTEAM_PLANNER_URL"


def load_prompt(name: str, version: str = PROMPT_VERSION) -> str:
    return resources.files("hybrid_redteam.prompts").joinpath(f"{name}_{version}.txt").read_text()


def _fill(template: str, **values: str) -> str:
    # prompts contain literal JSON braces, so no str.format
    for k, v in values.items():
        template = template.replace("{" + k + "}", v)
    return template


def system_prompt() -> str:
    table = "\n".join(f"{a.value}  {a.name}  ({ACTION_TACTIC[a]})" for a in ActionIndex)
    return _fill(
        load_prompt("planner_system"),
        action_table=table,
        intent_schema=json.dumps(INTENT_SCHEMA, indent=1),
    )


# -- schedule ----------------------------------------------------------------


@dataclass
class PlannerSchedule:
    """Replan at the first decision on or after every multiple of ``horizon``, and after failures."""

    horizon: int = 20
    replan_on_failure: bool = True
    next_boundary: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("planning horizon must be >= 1")

    def reset(self) -> None:
        self.next_boundary = 0

    def due(self, step: int, last_failed: bool) -> bool:
        return step >= self.next_boundary or (self.replan_on_failure and last_failed)

    def mark(self, step: int) -> None:
        self.next_boundary = (step // self.horizon + 1) * self.horizon


# -- reflection memory -------------------------------------------------------------


@dataclass
class ReflectionEntry:
    episode: int
    text: str
    compromised: bool
    hosts_compromised: int
    steps_to_first_compromise: Optional[int]
    source: str = "scripted"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class ReflectionMemory:
    """Bounded FIFO of reflections; the oldest entry is evicted first."""

    def __init__(self, capacity: int = 5) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buf: deque[ReflectionEntry] = deque(maxlen=capacity)

    def push(self, entry: ReflectionEntry) -> None:
        self._buf.append(entry)

    def entries(self) -> list[ReflectionEntry]:
        return list(self._buf)

    def __len__(self) -> int:
        return len(self._buf)

    def dump_jsonl(self, path: str | Path) -> None:
        with open(path, "a", encoding="utf-8") as f:
            for e in self._buf:
                f.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path, capacity: int = 5) -> "ReflectionMemory":
        mem = cls(capacity)
        for line in Path(path).read_text().splitlines():
            if line.strip():
                mem.push(ReflectionEntry(**json.loads(line)))
        return mem


# -- scripted oracle -----------------------------------------------------------


def _subnet_distances(belief: BeliefState) -> dict[int, int]:
    dist = {s: 0 for s in belief.session_subnets()}
    frontier = sorted(dist)
    while frontier:
        nxt = []
        for s in frontier:
            for t in belief.subnet_edges.get(s, ()):
                if t not in dist:
                    dist[t] = dist[s] + 1
                    nxt.append(t)
        frontier = sorted(nxt)
    return dist


def scripted_oracle(belief: BeliefState, risk_posture: str = "balanced") -> Intent:
    """Deterministic rule table standing in for a frozen LLM planner.

    1. a root host not yet impacted -> Impact
    2. a user host -> PrivilegeEscalate
    3. a scanned, exploitable host without access (not a known decoy) -> Exploit
    4. a discovered unscanned host -> scan (stealth under a stealthy posture)
    5. otherwise sweep the nearest reachable unswept subnet, else Sleep
    Ties go to the lowest id.
    """
    entry = belief.entry_host
    reach = belief.reachable_subnets()
    hosts = [(h, belief.hosts[h]) for h in sorted(belief.hosts) if h != entry]

    def make(action: ActionIndex, target: Optional[Target], why: str) -> Intent:
        return Intent(
            category=action.name,
            tactic=ACTION_TACTIC[action],
            target=target,
            risk_posture=risk_posture,
            confidence=1.0,
            rationale=why,
            source="scripted",
        )

    for h, hb in hosts:
        if hb.access == "Root" and not hb.impacted:
            return make(ActionIndex.Impact, Target.host(h), f"root on h{h}; impact it")
    for h, hb in hosts:
        if hb.access == "User":
            return make(ActionIndex.PrivilegeEscalate, Target.host(h), f"user on h{h}; escalate")
    for h, hb in hosts:
        if hb.scanned and hb.access == "None" and hb.exploitable and hb.decoy is not True and hb.subnet in reach:
            return make(ActionIndex.ExploitRemoteService, Target.host(h), f"h{h} scanned and exploitable")
    scan = ActionIndex.StealthServiceDiscovery if risk_posture == "stealthy" else ActionIndex.AggressiveServiceDiscovery
    for h, hb in hosts:
        if not hb.scanned and hb.subnet in reach:
            return make(scan, Target.host(h), f"h{h} not yet scanned")
    dist = _subnet_distances(belief)
    unswept = [s for s in belief.known_subnets if s not in belief.swept_subnets and s in reach]
    if unswept:
        s = min(unswept, key=lambda x: (dist.get(x, 1 << 30), x))
        return make(ActionIndex.DiscoverRemoteSystems, Target.subnet(s), f"sweep s{s}")
    return make(ActionIndex.Sleep, None, "nothing left to do")


# -- backends -------------------------------------------------------------------


class PlannerUnavailable(RuntimeError):
    pass


class PlannerBackend(Protocol):
    name: str

    def propose(self, summary: str, memory: Sequence[ReflectionEntry], belief: BeliefState) -> Intent: ...

    def reflect(self, digest: str) -> str: ...


@dataclass
class ScriptedBackend:
    risk_posture: str = "balanced"
    name: str = "scripted"

    def propose(self, summary: str, memory: Sequence[ReflectionEntry], belief: BeliefState) -> Intent:
        return scripted_oracle(belief, self.risk_posture)

    def reflect(self, digest: str) -> str:
        return digest


@dataclass
class RemoteLLMBackend:
    """Chat-completion client for OpenAI-compatible model servers."""

    endpoint: str
    model: str
    temperature: float = 0.2
    timeout: float = 30.0
    max_attempts: int = 2
    api_key: Optional[str] = None
    transport: Optional[httpx.BaseTransport] = None
    name: str = "remote"
    _client: Optional[httpx.Client] = field(default=None, repr=False)

    def _http(self) -> httpx.Client:
        if self._client is None:
            headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
            self._client = httpx.Client(timeout=self.timeout, transport=self.transport, headers=headers)
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def chat(self, messages: list[dict[str, str]]) -> str:
        url = self.endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        resp = self._http().post(
            url,
            json={"model": self.model, "messages": messages, "temperature": self.temperature},
        )
        resp.raise_for_status()
        body = resp.json()
        content = body["choices"][0]["message"]["content"]
        if not isinstance(content, str):
            raise PlannerUnavailable("response content is not text")
        return content

    def propose(self, summary: str, memory: Sequence[ReflectionEntry], belief: BeliefState) -> Intent:
        reflections = "\n".join(f"- {m.text}" for m in memory) or "(none)"
        messages = [
            {"role": "system", "content": system_prompt()},
            {"role": "user", "content": _fill(load_prompt("planner_user"), summary=summary, reflections=reflections)},
        ]
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                return parse_intent(self.chat(messages)).with_source("remote")
            except (httpx.HTTPError, IntentParseError, KeyError, IndexError, TypeError, ValueError, PlannerUnavailable) as exc:
                log.warning("planner attempt %d failed: %s", attempt + 1, exc)
                last = exc
        raise PlannerUnavailable(f"no valid intent after {self.max_attempts} attempts: {last}")

    def reflect(self, digest: str) -> str:
        messages = [
            {"role": "system", "content": "You review red-team simulation episodes."},
            {"role": "user", "content": _fill(load_prompt("reflect_user"), digest=digest)},
        ]
        try:
            text = self.chat(messages).strip()
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError, PlannerUnavailable) as exc:
            raise PlannerUnavailable(str(exc)) from exc
        if not text:
            raise PlannerUnavailable("empty reflection")
        return text


def plan(
    summary: str,
    memory: Sequence[ReflectionEntry],
    backend: PlannerBackend,
    belief: BeliefState,
    fallback: Optional[ScriptedBackend] = None,
) -> Intent:
    """Ask ``backend`` for an intent; any failure falls back to the scripted oracle."""
    try:
        return backend.propose(summary, memory, belief)
    except Exception as exc:  # never let the planner abort an episode
        log.warning("planner backend %s failed, using scripted fallback: %s", getattr(backend, "name", "?"), exc)
        fb = fallback or ScriptedBackend()
        return fb.propose(summary, memory, belief).with_source("fallback")


# -- reflection ------------------------------------------------------------------


def trace_digest(trace: Sequence[dict[str, Any]]) -> dict[str, Any]:
    """Facts about an episode trace used by reflections and metrics."""
    failures: Counter[str] = Counter()
    restored: list[int] = []
    scanned: set[int] = set()
    compromised: set[int] = set()
    first_compromise: Optional[int] = None
    for rec in trace:
        if rec["outcome"] != "Success":
            failures[rec["action"]["name"]] += 1
        restored.extend(rec["reward_inputs"]["restored"])
        for m in rec["reward_inputs"]["milestones"]:
            if m["kind"] == "scan_host":
                scanned.add(m["ref"])
            elif m["kind"] == "compromise":
                compromised.add(m["ref"])
                if first_compromise is None:
                    first_compromise = rec["step"]
    return {
        "episode": trace[0]["episode"] if trace else -1,
        "failures": failures,
        "restored": restored,
        "unexploited_scanned": sorted(scanned - compromised),
        "compromised": sorted(compromised),
        "first_compromise": first_compromise,
    }


def template_reflection(d: dict[str, Any]) -> str:
    parts = []
    if d["compromised"]:
        parts.append(
            f"Compromised {len(d['compromised'])} host(s), first at step {d['first_compromise']}."
        )
    else:
        parts.append("No host was compromised.")
    top = d["failures"].most_common(3)
    if top:
        parts.append("Most failed actions: " + ", ".join(f"{name} ({n})" for name, n in top) + ".")
    else:
        parts.append("No actions failed.")
    if d["restored"]:
        hosts = ", ".join(f"h{h}" for h in sorted(set(d["restored"])))
        parts.append(f"Defender restored {hosts} ({len(d['restored'])} events); move faster after exploitation there.")
    if d["unexploited_scanned"]:
        parts.append("Scanned but never exploited: " + ", ".join(f"h{h}" for h in d["unexploited_scanned"]) + ".")
    return " ".join(parts)


def reflect(
    trace: Sequence[dict[str, Any]],
    backend: Optional[PlannerBackend] = None,
    memory: Optional[ReflectionMemory] = None,
) -> ReflectionEntry:
    d = trace_digest(trace)
    digest = template_reflection(d)
    text, source = digest, "scripted"
    if backend is not None and not isinstance(backend, ScriptedBackend):
        try:
            text, source = backend.reflect(digest), "remote"
        except Exception as exc:
            log.warning("reflection backend failed, using template: %s", exc)
            source = "fallback"
    entry = ReflectionEntry(
        episode=d["episode"],
        text=text,
        compromised=bool(d["compromised"]),
        hosts_compromised=len(d["compromised"]),
        steps_to_first_compromise=d["first_compromise"],
        source=source,
    )
    if memory is not None:
        memory.push(entry)
    return entry


def backend_from_config(cfg: dict[str, Any]) -> PlannerBackend:
    """Build a backend from a ``planner`` config block; the endpoint env var overrides the file."""
    import os

    kind = cfg.get("backend", "scripted")
    if kind == "scripted":
        return ScriptedBackend(risk_posture=cfg.get("risk_posture", "balanced"))
    if kind == "remote":
        endpoint = os.environ.get(ENDPOINT_ENV_VAR) or cfg.get("endpoint")
        if not endpoint:
            raise ValueError(f"remote planner needs an endpoint (config or ${ENDPOINT_ENV_VAR})")
        return RemoteLLMBackend(
            endpoint=endpoint,
            model=cfg.get("model", "default"),
            temperature=float(cfg.get("temperature", 0.2)),
            timeout=float(cfg.get("timeout", 30.0)),
            max_attempts=int(cfg.get("max_attempts", 2)),
            api_key=os.environ.get("HYBRID_REDTEAM_API_KEY") or cfg.get("api_key"),
        )
    raise ValueError(f"unknown planner backend {kind!r}")
