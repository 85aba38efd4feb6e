"""Enterprise-network scenarios: subnets, hosts, services, decoys and the curriculum ladder."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

import numpy as np

TOPOLOGY_FORMAT_VERSION = 1

SERVICE_NAMES = ("ssh", "http", "https", "smb", "rdp", "mysql", "ftp", "smtp", "dns", "ldap")


class ConfigError(ValueError):
    """Raised for invalid or unsatisfiable configuration."""


@dataclass(frozen=True)
class DefenderConfig:
    detection_delay: int = 2
    agent_count: int = 5
    impacted_weight: float = 5.0
    root_weight: float = 1.0
    user_weight: float = 0.5

    def __post_init__(self) -> None:
        if self.detection_delay < 0:
            raise ConfigError("detection_delay must be >= 0")
        if self.agent_count < 1:
            raise ConfigError("agent_count must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    subnet_count: int = 4
    hosts_per_subnet: tuple[int, int] = (4, 5)
    services_per_host: tuple[int, int] = (1, 3)
    decoy_fraction: float = 0.15
    defended_subnets: frozenset[int] = frozenset({2, 3})
    max_steps: int = 500
    seed: int = 0
    adjacency: str = "line"
    exploit_failure_prob: float = 0.0
    defender: DefenderConfig = field(default_factory=DefenderConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "hosts_per_subnet", tuple(self.hosts_per_subnet))
        object.__setattr__(self, "services_per_host", tuple(self.services_per_host))
        object.__setattr__(self, "defended_subnets", frozenset(self.defended_subnets))
        if self.subnet_count < 1:
            raise ConfigError("subnet_count must be >= 1")
        lo, hi = self.hosts_per_subnet
        if lo < 1 or lo > hi:
            raise ConfigError(f"invalid hosts_per_subnet range {self.hosts_per_subnet}")
        slo, shi = self.services_per_host
        if slo < 1 or slo > shi:
            raise ConfigError(f"invalid services_per_host range {self.services_per_host}")
        if shi > len(SERVICE_NAMES):
            raise ConfigError(f"at most {len(SERVICE_NAMES)} services per host")
        if not 0.0 <= self.decoy_fraction < 1.0:
            raise ConfigError("decoy_fraction must be in [0, 1)")
        if self.max_steps < 12:
            raise ConfigError("max_steps must be >= 12")
        bad = [s for s in self.defended_subnets if not 0 <= s < self.subnet_count]
        if bad:
            raise ConfigError(f"defended subnet ids out of range: {sorted(bad)}")
        if self.adjacency not in ("line", "mesh"):
            raise ConfigError(f"unknown adjacency {self.adjacency!r}")
        if not 0.0 <= self.exploit_failure_prob < 1.0:
            raise ConfigError("exploit_failure_prob must be in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["hosts_per_subnet"] = list(self.hosts_per_subnet)
        d["services_per_host"] = list(self.services_per_host)
        d["defended_subnets"] = sorted(self.defended_subnets)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if "defender" in data and isinstance(data["defender"], dict):
            try:
                data["defender"] = DefenderConfig(**data["defender"])
            except TypeError as exc:
                raise ConfigError(str(exc)) from exc
        return cls(**data)


@dataclass(frozen=True)
class Service:
    name: str
    exploitable: bool


@dataclass(frozen=True)
class Host:
    id: int
    subnet: int
    services: tuple[Service, ...]
    is_decoy: bool = False

    @property
    def exploitable(self) -> bool:
        return any(s.exploitable for s in self.services)


@dataclass(frozen=True)
class Subnet:
    id: int
    adjacent: tuple[int, ...]
    defended: bool = False


@dataclass(frozen=True)
class Topology:
    subnets: tuple[Subnet, ...]
    hosts: tuple[Host, ...]
    red_entry_host: int
    max_steps: int
    defender: DefenderConfig = field(default_factory=DefenderConfig)
    exploit_failure_prob: float = 0.0

    @property
    def entry_subnet(self) -> int:
        return self.hosts[self.red_entry_host].subnet

    def host(self, host_id: int) -> Host:
        return self.hosts[host_id]

    def has_host(self, host_id: int) -> bool:
        return 0 <= host_id < len(self.hosts)

    def has_subnet(self, subnet_id: int) -> bool:
        return 0 <= subnet_id < len(self.subnets)

    def hosts_in(self, subnet_id: int) -> list[Host]:
        return [h for h in self.hosts if h.subnet == subnet_id]

    @property
    def defended_subnets(self) -> frozenset[int]:
        return frozenset(s.id for s in self.subnets if s.defended)

    def validate(self) -> None:
        for i, s in enumerate(self.subnets):
            if s.id != i:
                raise ConfigError("subnet ids must be dense and ordered")
            for t in s.adjacent:
                if s.id not in self.subnets[t].adjacent:
                    raise ConfigError(f"asymmetric adjacency {s.id}-{t}")
        for i, h in enumerate(self.hosts):
            if h.id != i:
                raise ConfigError("host ids must be dense and ordered")
            if not self.has_subnet(h.subnet):
                raise ConfigError(f"host {h.id} in unknown subnet {h.subnet}")
        if not self.has_host(self.red_entry_host):
            raise ConfigError("entry host missing")
        if self.hosts[self.red_entry_host].is_decoy:
            raise ConfigError("entry host is a decoy")
        for s in self.subnets:
            targets = [
                h for h in self.hosts_in(s.id)
                if not h.is_decoy and h.exploitable and h.id != self.red_entry_host
            ]
            if not targets:
                raise ConfigError(f"subnet {s.id} has no exploitable non-decoy host")

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": TOPOLOGY_FORMAT_VERSION,
            "red_entry_host": self.red_entry_host,
            "max_steps": self.max_steps,
            "exploit_failure_prob": self.exploit_failure_prob,
            "defender": asdict(self.defender),
            "subnets": [
                {"id": s.id, "adjacent": list(s.adjacent), "defended": s.defended}
                for s in self.subnets
            ],
            "hosts": [
                {
                    "id": h.id,
                    "subnet": h.subnet,
                    "is_decoy": h.is_decoy,
                    "services": [{"name": v.name, "exploitable": v.exploitable} for v in h.services],
                }
                for h in self.hosts
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Topology":
        version = data.get("version")
        if version != TOPOLOGY_FORMAT_VERSION:
            raise ConfigError(f"unsupported topology version {version!r}")
        topo = cls(
            subnets=tuple(
                Subnet(id=s["id"], adjacent=tuple(s["adjacent"]), defended=bool(s["defended"]))
                for s in data["subnets"]
            ),
            hosts=tuple(
                Host(
                    id=h["id"],
                    subnet=h["subnet"],
                    is_decoy=bool(h["is_decoy"]),
                    services=tuple(Service(v["name"], bool(v["exploitable"])) for v in h["services"]),
                )
                for h in data["hosts"]
            ),
            red_entry_host=data["red_entry_host"],
            max_steps=data["max_steps"],
            defender=DefenderConfig(**data.get("defender", {})),
            exploit_failure_prob=data.get("exploit_failure_prob", 0.0),
        )
        topo.validate()
        return topo

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _adjacency(n: int, mode: str) -> list[tuple[int, ...]]:
    if mode == "mesh":
        return [tuple(j for j in range(n) if j != i) for i in range(n)]
    return [tuple(j for j in (i - 1, i + 1) if 0 <= j < n) for i in range(n)]


def generate_scenario(config: ScenarioConfig) -> Topology:
    """Build a topology deterministically from ``config``.

    Subnet 0 holds the red foothold (host 0). Each subnet gets one guaranteed
    exploitable non-decoy target; decoys are drawn from the remaining hosts.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.hosts_per_subnet
    sizes = [int(rng.integers(lo, hi + 1)) for _ in range(config.subnet_count)]
    # entry subnet needs the foothold plus one real target
    sizes[0] = max(sizes[0], 2)

    host_subnet: list[int] = []
    for s, n in enumerate(sizes):
        host_subnet.extend([s] * n)
    total = len(host_subnet)
    entry = 0

    guaranteed: set[int] = set()
    start = 0
    for s, n in enumerate(sizes):
        members = list(range(start, start + n))
        if s == 0:
            members = [m for m in members if m != entry]
        guaranteed.add(int(rng.choice(members)))
        start += n

    decoy_count = _half_up(config.decoy_fraction * total)
    candidates = [h for h in range(total) if h != entry and h not in guaranteed]
    if decoy_count > len(candidates):
        raise ConfigError(
            f"decoy_fraction {config.decoy_fraction} leaves no exploitable host "
            f"({decoy_count} decoys requested, {len(candidates)} eligible hosts)"
        )
    decoys = set(int(h) for h in rng.choice(candidates, size=decoy_count, replace=False)) if decoy_count else set()

    slo, shi = config.services_per_host
    hosts = []
    for h in range(total):
        k = int(rng.integers(slo, shi + 1))
        names = sorted(rng.choice(len(SERVICE_NAMES), size=k, replace=False).tolist())
        if h in decoys:
            flags = [True] * k
        else:
            flags = [bool(rng.random() < 0.5) for _ in range(k)]
            if h in guaranteed:
                flags[int(rng.integers(k))] = True
        services = tuple(Service(SERVICE_NAMES[i], f) for i, f in zip(names, flags))
        hosts.append(Host(id=h, subnet=host_subnet[h], services=services, is_decoy=h in decoys))

    adjacency = _adjacency(config.subnet_count, config.adjacency)
    subnets = tuple(
        Subnet(id=s, adjacent=adjacency[s], defended=s in config.defended_subnets)
        for s in range(config.subnet_count)
    )
    topo = Topology(
        subnets=subnets,
        hosts=tuple(hosts),
        red_entry_host=entry,
        max_steps=config.max_steps,
        defender=config.defender,
        exploit_failure_prob=config.exploit_failure_prob,
    )
    topo.validate()
    return topo


# (subnet_count, defended subnets, max_steps, decoy_fraction) per stage
CURRICULUM: tuple[tuple[int, frozenset[int], int, float], ...] = (
    (1, frozenset(), 100, 0.0),
    (2, frozenset({1}), 200, 0.15),
    (3, frozenset({2}), 350, 0.15),
    (4, frozenset({2, 3}), 500, 0.15),
)
FINAL_STAGE = len(CURRICULUM) - 1


def curriculum_stage(stage: int, seed: int = 0) -> ScenarioConfig:
    if stage < 0:
        raise ConfigError("curriculum stage must be >= 0")
    subnets, defended, max_steps, decoys = CURRICULUM[min(stage, FINAL_STAGE)]
    return ScenarioConfig(
        subnet_count=subnets,
        defended_subnets=defended,
        max_steps=max_steps,
        decoy_fraction=decoys,
        seed=seed,
    )


def default_scenario(seed: int = 0) -> ScenarioConfig:
    return curriculum_stage(FINAL_STAGE, seed=seed)


def topology_hash(topology: Topology) -> str:
    import hashlib

    return hashlib.sha256(topology.to_json().encode()).hexdigest()[:16]


def iter_subnet_distances(topology: Topology, sources: Iterable[int]) -> dict[int, int]:
    """Hop distance from any of ``sources`` to every reachable subnet."""
    dist = {s: 0 for s in sources}
    frontier = list(dist)
    while frontier:
        nxt = []
        for s in frontier:
            for t in topology.subnets[s].adjacent:
                if t not in dist:
                    dist[t] = dist[s] + 1
                    nxt.append(t)
        frontier = nxt
    return dist
