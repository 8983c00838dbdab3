"""Deterministic offline stand-in for the VLM endpoint.

The mock reads everything it needs out of the prompt text itself: the query
and, for grounding requests, the object table from the scene description. So
it exercises exactly the same wire contract as a real model.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ResolutionError, ValidationError
from .scene import parse_description, records_matching
from .vlm import ChatRequest, format_grounding_response

_RELATIONS = sorted([
    "next to", "on top of", "under", "underneath", "beneath", "below", "above", "on", "near",
    "beside", "by", "closest to", "nearest to", "close to", "in front of", "behind", "facing",
    "across from", "opposite", "to the left of", "to the right of", "left of", "right of", "in",
    "inside", "against", "between",
], key=len, reverse=True)

_VERB = r"(?:(?:please\s+)?(?:find|identify|locate|select|choose|pick|show\s+me|where\s+is)\s+)?"
_ART = r"(?:the|a|an)\s+"
_NOUN = r"[a-z][a-z \-]*?"
_RELATION_RE = re.compile(
    rf"^\s*{_VERB}{_ART}(?P<target>{_NOUN})\s+(?:(?:that|which)\s+(?:is|are)\s+|that's\s+)?"
    rf"(?P<rel>{'|'.join(re.escape(r) for r in _RELATIONS)})\s+{_ART}(?P<anchor>{_NOUN})\s*[.!?]?\s*$",
    re.IGNORECASE,
)
_PLAIN_RE = re.compile(rf"^\s*{_VERB}{_ART}(?P<target>{_NOUN})\s*[.!?]?\s*$", re.IGNORECASE)

_ANCHOR_QUERY_RE = re.compile(r'^Query: "(?P<q>.*)"\.\s*$', re.MULTILINE)
_GROUNDING_QUERY_RE = re.compile(r'^The given description is: "(?P<q>.*)"\.\s*$', re.MULTILINE)

UNPARSEABLE = "I am not sure what the query refers to."


def split_query(query: str) -> tuple[str, str | None] | None:
    """Target and anchor by the few-shot sentence patterns, or None."""
    m = _RELATION_RE.match(query)
    if m:
        return m.group("target").strip(), m.group("anchor").strip()
    m = _PLAIN_RE.match(query)
    if m:
        return m.group("target").strip(), None
    return None


@dataclass(frozen=True)
class Rule:
    pattern: str
    answer: str | Callable[[str], str]
    kind: str = "any"  # anchor, grounding or any

    def matches(self, kind: str, query: str) -> bool:
        return self.kind in ("any", kind) and re.search(self.pattern, query, re.IGNORECASE) is not None

    def render(self, query: str) -> str:
        return self.answer(query) if callable(self.answer) else self.answer.replace("{query}", query)


class MockVLM:
    """Rulebook-driven VLM: explicit rules first, then the default anchor/grounding rules."""

    def __init__(self, rules: Sequence[Rule] = (), model: str = "mock-vlm"):
        self.rules = tuple(rules)
        self.model = model
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, path) -> "MockVLM":
        doc = json.loads(Path(path).read_text())
        rules = doc.get("rules", doc) if isinstance(doc, dict) else doc
        try:
            return cls([Rule(r["pattern"], r["answer"], r.get("kind", "any")) for r in rules])
        except (KeyError, TypeError):
            raise ValidationError(f"{path}: rules need 'pattern' and 'answer' fields") from None

    def chat(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        text = req.user_text
        m = _ANCHOR_QUERY_RE.search(text)
        if m and "Target: <target object>" in text:
            return self._answer("anchor", m.group("q"), text)
        m = _GROUNDING_QUERY_RE.search(text)
        if m:
            return self._answer("grounding", m.group("q"), text)
        return UNPARSEABLE

    def _answer(self, kind: str, query: str, prompt: str) -> str:
        for rule in self.rules:
            if rule.matches(kind, query):
                return rule.render(query)
        if kind == "anchor":
            return default_anchor_answer(query)
        return default_grounding_answer(query, prompt)


def default_anchor_answer(query: str) -> str:
    parts = split_query(query)
    if parts is None:
        return UNPARSEABLE
    target, anchor = parts
    return f"Target: {target}, Anchor: {anchor or 'none'}"


def default_grounding_answer(query: str, prompt: str) -> str:
    """Pick the target candidate nearest the resolved anchor point (ties to the lower id)."""
    from .viewpoint import resolve_anchor

    parts = split_query(query)
    if parts is None:
        return UNPARSEABLE
    target, anchor = parts
    try:
        olt = parse_description(prompt)
    except ValidationError:
        return UNPARSEABLE
    candidates = records_matching(olt, target)
    if not candidates:
        return UNPARSEABLE
    try:
        res = resolve_anchor(olt, anchor, target)
    except ResolutionError:
        return UNPARSEABLE
    point = np.asarray(res.anchor_point)
    best = min(candidates, key=lambda r: (float(np.linalg.norm(np.asarray(r.center) - point)), r.id))
    return format_grounding_response(best.id, f"the {best.label} closest to the reference point.")
