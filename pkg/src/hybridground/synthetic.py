"""Deterministic synthetic room used by the test suite and the demo CLI command."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scene import ObjectLookupTable, ObjectRecord, PointCloud, olt_to_dict, save_ply

SCENE_ID = "synthetic_room"
ROOM = (6.0, 5.0, 3.0)  # x, y extent and ceiling height
SPACING = 0.025

# id, label, center, size, color, parts (None: the whole box surface)
_OBJECTS = [
    (1, "table", (2.0, 2.5, 0.375), (1.6, 0.9, 0.75), (140, 90, 40), "table"),
    (2, "chair", (2.0, 1.6, 0.45), (0.5, 0.5, 0.9), (40, 60, 200), "chair_s"),
    (3, "chair", (2.6, 3.5, 0.45), (0.5, 0.5, 0.9), (40, 60, 200), "chair_n"),
    (4, "chair", (4.8, 4.3, 0.45), (0.5, 0.5, 0.9), (40, 60, 200), "chair_s"),
    (5, "sofa", (4.8, 3.0, 0.4), (0.9, 1.8, 0.8), (30, 150, 60), None),
    (6, "cabinet", (0.3, 4.4, 0.5), (0.5, 1.0, 1.0), (200, 180, 120), None),
    (7, "desk", (5.0, 0.8, 0.375), (1.2, 0.6, 0.75), (120, 70, 30), "table"),
    (8, "lamp", (5.2, 0.8, 0.95), (0.2, 0.2, 0.4), (250, 220, 50), None),
    (9, "lamp", (0.3, 0.4, 0.8), (0.3, 0.3, 1.6), (250, 220, 50), None),
    (10, "wall", (3.5, 1.2, 1.0), (0.1, 2.0, 2.0), (180, 180, 190), None),
    (11, "box", (2.0, 2.5, 0.15), (0.3, 0.3, 0.3), (230, 120, 20), None),
    (12, "trash can", (0.5, 2.0, 0.2), (0.3, 0.3, 0.4), (90, 90, 90), None),
]

# (text, gt_id or None, tags); the first eight follow the mock's nearest-candidate rule
QUERIES = [
    ("Find the chair that is next to the table.", 2, ["multiple", "hard", "view_indep"]),
    ("Find the chair that is next to the sofa.", 4, ["multiple", "hard", "view_indep"]),
    ("Identify the lamp that is on top of the desk.", 8, ["multiple", "hard", "view_indep"]),
    ("Locate the box that is under the table.", 11, ["unique", "easy", "view_indep"]),
    ("Find the cabinet.", 6, ["unique", "easy", "view_indep"]),
    ("Find the lamp that is near the cabinet.", 9, ["multiple", "hard", "view_indep"]),
    ("Find the sofa that is behind the wall.", 5, ["unique", "easy", "view_dep"]),
    ("Find the desk that is next to the lamp.", 7, ["unique", "easy", "view_indep"]),
    ("zzz qqq xyzzy", 1, ["unique", "easy", "view_indep"]),
    ("Find the unicorn that is next to the dragon.", 1, ["unique", "easy", "view_indep"]),
    ("Find the table that is next to the cabinet.", 1, ["unique", "easy", "view_indep"]),
    ("Find the chair that is near the lamp.", 2, ["multiple", "hard", "view_indep"]),
]
EXPECTED_ERRORS = {8: "extraction", 9: "resolution", 10: "unknown_id", 11: "parse"}

MOCK_RULES = [
    {"kind": "grounding", "pattern": r"^Find the table that is next to the cabinet\.$",
     "answer": "Predicted ID: 999 Explanation: forced to an id that does not exist."},
    {"kind": "grounding", "pattern": r"^Find the chair that is near the lamp\.$",
     "answer": "I think it is object twelve"},
]


def _grid(a0, a1, b0, b1, step):
    a = np.arange(a0, a1 + 1e-9, step)
    b = np.arange(b0, b1 + 1e-9, step)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return aa.ravel(), bb.ravel()


def box_surface(lo, hi, step=SPACING) -> np.ndarray:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    faces = []
    for axis in range(3):
        u, v = [k for k in range(3) if k != axis]
        a, b = _grid(lo[u], hi[u], lo[v], hi[v], step)
        for val in (lo[axis], hi[axis]):
            p = np.empty((len(a), 3))
            p[:, axis] = val
            p[:, u] = a
            p[:, v] = b
            faces.append(p)
    return np.unique(np.round(np.concatenate(faces), 6), axis=0)


def _parts(kind, center, size):
    c = np.asarray(center)
    s = np.asarray(size)
    lo, hi = c - s / 2, c + s / 2
    if kind is None:
        return [(lo, hi)]
    if kind == "table":
        top = 0.05
        leg = 0.06
        parts = [((lo[0], lo[1], hi[2] - top), hi)]
        for x in (lo[0], hi[0] - leg):
            for y in (lo[1], hi[1] - leg):
                parts.append(((x, y, lo[2]), (x + leg, y + leg, hi[2] - top)))
        return parts
    # chair: seat slab plus a backrest on the north or south side
    seat_z = lo[2] + 0.45
    parts = [((lo[0], lo[1], lo[2]), (hi[0], hi[1], seat_z))]
    if kind == "chair_s":
        parts.append(((lo[0], lo[1], seat_z), (hi[0], lo[1] + 0.06, hi[2])))
    else:
        parts.append(((lo[0], hi[1] - 0.06, seat_z), (hi[0], hi[1], hi[2])))
    return parts


def build_room() -> tuple[PointCloud, ObjectLookupTable]:
    rng = np.random.default_rng(7)
    pts, cols = [], []
    fx, fy = _grid(0.0, ROOM[0], 0.0, ROOM[1], SPACING * 1.5)
    floor = np.stack([fx, fy, np.zeros_like(fx)], axis=1)
    pts.append(floor)
    cols.append(np.tile((200, 200, 200), (len(floor), 1)))
    cx, cy = _grid(0.0, ROOM[0], 0.0, ROOM[1], 0.1)
    ceiling = np.stack([cx, cy, np.full_like(cx, ROOM[2])], axis=1)
    pts.append(ceiling)
    cols.append(np.tile((240, 240, 240), (len(ceiling), 1)))

    records = []
    for oid, label, center, size, color, kind in _OBJECTS:
        records.append(ObjectRecord(oid, label, center, size))
        for lo, hi in _parts(kind, center, size):
            p = box_surface(lo, hi)
            pts.append(p)
            shade = rng.integers(-12, 13, size=(len(p), 1))
            cols.append(np.clip(np.asarray(color) + shade, 0, 255))
    points = np.concatenate(pts)
    # float32 storage in the PLY; round-trip exactly by quantizing here
    points = points.astype(np.float32).astype(np.float64)
    colors = np.concatenate(cols).astype(np.uint8)
    return PointCloud(points, colors, SCENE_ID), ObjectLookupTable(SCENE_ID, tuple(records))


def query_rows() -> list[dict]:
    return [
        {"query_id": f"q{n:02d}", "scene_id": SCENE_ID, "text": text, "gt_id": gt, "tags": tags}
        for n, (text, gt, tags) in enumerate(QUERIES, 1)
    ]


def write_fixture(out_dir) -> dict:
    """Write <scene>.ply, <scene>.json, queries.jsonl and mock_rules.json; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cloud, olt = build_room()
    paths = {
        "ply": out / f"{SCENE_ID}.ply",
        "detections": out / f"{SCENE_ID}.json",
        "queries": out / "queries.jsonl",
        "rules": out / "mock_rules.json",
    }
    save_ply(cloud, paths["ply"], binary=True)
    paths["detections"].write_text(json.dumps(olt_to_dict(olt), indent=2) + "\n")
    paths["queries"].write_text("".join(json.dumps(r) + "\n" for r in query_rows()))
    paths["rules"].write_text(json.dumps({"rules": MOCK_RULES}, indent=2) + "\n")
    return paths
