from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

SUBSET_TAGS = frozenset({"unique", "multiple", "easy", "hard", "view_dep", "view_indep"})

# complementary tag pairs; each evaluated split sums to the queries carrying either tag
PARTITIONS = (("unique", "multiple"), ("easy", "hard"), ("view_dep", "view_indep"))


@dataclass(frozen=True)
class QuerySpec:
    text: str
    scene_id: str
    gt_object_id: int | None = None
    subset_tags: frozenset = field(default_factory=frozenset)
    query_id: str = ""

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError("query text must be non-empty")
        tags = frozenset(self.subset_tags or ())
        unknown = tags - SUBSET_TAGS
        if unknown:
            raise ValidationError(f"unknown subset tags {sorted(unknown)}")
        object.__setattr__(self, "subset_tags", tags)
        if not self.query_id:
            object.__setattr__(self, "query_id", query_hash(self.scene_id, self.text))

    def to_dict(self) -> dict:
        out = {"query_id": self.query_id, "scene_id": self.scene_id, "text": self.text}
        if self.gt_object_id is not None:
            out["gt_id"] = self.gt_object_id
        if self.subset_tags:
            out["tags"] = sorted(self.subset_tags)
        return out

    @classmethod
    def from_dict(cls, d: dict, default_id: str = "") -> "QuerySpec":
        for key in ("scene_id", "text"):
            if key not in d:
                raise ValidationError(f"query record missing {key!r}")
        gt = d.get("gt_id")
        return cls(
            text=d["text"],
            scene_id=str(d["scene_id"]),
            gt_object_id=None if gt is None else int(gt),
            subset_tags=frozenset(d.get("tags") or ()),
            query_id=str(d.get("query_id") or default_id),
        )


def query_hash(scene_id: str, text: str) -> str:
    return hashlib.sha1(f"{scene_id}\x00{text}".encode()).hexdigest()[:12]


def read_jsonl(path) -> list[dict]:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: line {n}: invalid JSON ({e})") from None
    return rows


def write_jsonl(rows, path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_queries(path) -> list[QuerySpec]:
    """Queries from JSONL; ids default to the 1-based line position."""
    return [QuerySpec.from_dict(d, default_id=f"q{n:05d}") for n, d in enumerate(read_jsonl(path), 1)]
