"""Structured planner intents and their JSON parsing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

from .actions import ACTION_NAMES, ACTION_TACTIC, TACTICS, ActionIndex, Target

RISK_POSTURES = ("stealthy", "balanced", "aggressive")
CATEGORY_VOCAB = ACTION_NAMES + tuple(t for t in TACTICS if t not in ACTION_NAMES)

INTENT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["category"],
    "properties": {
        "category": {"enum": list(CATEGORY_VOCAB)},
        "tactic": {"enum": list(TACTICS)},
        "target": {"type": ["string", "null"], "pattern": "^[hs][0-9]+$"},
        "risk_posture": {"enum": list(RISK_POSTURES)},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "rationale": {"type": "string"},
    },
}


class IntentParseError(ValueError):
    """Raised when planner output cannot be turned into a valid Intent.

    ``kind`` is one of ``not_json``, ``schema`` or ``vocabulary``.
    """

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def category_tactic(category: str) -> str:
    if category in ActionIndex.__members__:
        return ACTION_TACTIC[ActionIndex[category]]
    return category


@dataclass(frozen=True)
class Intent:
    category: str
    tactic: str = ""
    target: Optional[Target] = None
    risk_posture: str = "balanced"
    confidence: float = 1.0
    rationale: str = ""
    source: str = "scripted"  # scripted | remote | fallback

    def __post_init__(self) -> None:
        if self.category not in CATEGORY_VOCAB:
            raise IntentParseError("vocabulary", f"unknown category {self.category!r}")
        if not self.tactic:
            object.__setattr__(self, "tactic", category_tactic(self.category))
        if self.tactic not in TACTICS:
            raise IntentParseError("vocabulary", f"unknown tactic {self.tactic!r}")
        if self.risk_posture not in RISK_POSTURES:
            raise IntentParseError("schema", f"unknown risk_posture {self.risk_posture!r}")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise IntentParseError("schema", f"confidence {self.confidence} outside [0, 1]")

    @property
    def action(self) -> Optional[ActionIndex]:
        return ActionIndex[self.category] if self.category in ActionIndex.__members__ else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "tactic": self.tactic,
            "target": None if self.target is None else str(self.target),
            "risk_posture": self.risk_posture,
            "confidence": self.confidence,
            "rationale": self.rationale,
            "source": self.source,
        }

    def with_source(self, source: str) -> "Intent":
        return Intent(self.category, self.tactic, self.target, self.risk_posture, self.confidence, self.rationale, source)


def _balanced_objects(text: str):
    """Yield every top-level ``{...}`` span, scanning left to right and honouring JSON strings."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escape = False
        end = None
        for i in range(start, len(text)):
            c = text[i]
            if in_str:
                if escape:
                    escape = False
                elif c == "\\":
                    escape = True
                elif c == '"':
                    in_str = False
                continue
            if c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    end = i + 1
                    break
        if end is not None:
            yield text[start:end]
        start = text.find("{", start + 1)


def _load_object(raw: str) -> dict[str, Any]:
    try:
        obj = json.loads(raw)
        if isinstance(obj, dict):
            return obj
    except (json.JSONDecodeError, TypeError):
        pass
    for span in _balanced_objects(raw or ""):
        try:
            obj = json.loads(span)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise IntentParseError("not_json", "no JSON object found in planner output")


def intent_from_dict(obj: dict[str, Any], source: str = "remote") -> Intent:
    if "category" not in obj:
        raise IntentParseError("schema", "missing required field 'category'")
    category = obj["category"]
    if not isinstance(category, str):
        raise IntentParseError("schema", "category must be a string")
    tactic = obj.get("tactic") or ""
    if not isinstance(tactic, str):
        raise IntentParseError("schema", "tactic must be a string")
    raw_target = obj.get("target")
    target = None
    if raw_target is not None:
        if not isinstance(raw_target, str):
            raise IntentParseError("schema", "target must be a string like 'h3' or 's1' or null")
        try:
            target = Target.parse(raw_target)
        except ValueError as exc:
            raise IntentParseError("schema", str(exc)) from exc
    posture = obj.get("risk_posture", "balanced")
    if not isinstance(posture, str):
        raise IntentParseError("schema", "risk_posture must be a string")
    confidence = obj.get("confidence", 0.5)
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise IntentParseError("schema", "confidence must be a number")
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        rationale = json.dumps(rationale)
    return Intent(
        category=category,
        tactic=tactic,
        target=target,
        risk_posture=posture,
        confidence=float(confidence),
        rationale=rationale,
        source=source,
    )


def parse_intent(raw: str) -> Intent:
    """Parse planner text into an Intent; unknown fields are ignored."""
    return intent_from_dict(_load_object(raw))
