"""Scene containers, PLY/detection loaders and the textual scene description."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import PlyError, ValidationError

DEFAULT_COLOR = (128, 128, 128)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) float64, world frame, Z-up
    colors: np.ndarray  # (N, 3) uint8
    scene_id: str = ""

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        cols = np.ascontiguousarray(self.colors, dtype=np.uint8)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must have shape (N, 3), got {pts.shape}")
        if cols.shape != pts.shape:
            raise ValidationError(
                f"colors shape {cols.shape} does not match points shape {pts.shape}"
            )
        if len(pts) < 1:
            raise ValidationError("point cloud is empty")
        bad = ~np.isfinite(pts).all(axis=1)
        if bad.any():
            raise ValidationError(f"non-finite coordinate at point {int(np.argmax(bad))}")
        pts.setflags(write=False)
        cols.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask_or_index) -> "PointCloud":
        return PointCloud(self.points[mask_or_index], self.colors[mask_or_index], self.scene_id)

    def bounds(self) -> "Box":
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return Box.from_min_max(lo, hi)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and (width, length, height) along x, y, z."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]

    @classmethod
    def from_min_max(cls, lo, hi) -> "Box":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return cls(tuple((lo + hi) / 2), tuple(hi - lo))

    @property
    def min(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2

    @property
    def max(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2

    def contains(self, points: np.ndarray, pad: float = 0.0) -> np.ndarray:
        lo = self.min - pad
        hi = self.max + pad
        return np.all((points >= lo) & (points <= hi), axis=1)


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    label: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def __post_init__(self):
        if isinstance(self.id, bool) or not isinstance(self.id, (int, np.integer)) or self.id < 0:
            raise ValidationError(f"object id must be a non-negative integer, got {self.id!r}")
        if not isinstance(self.label, str) or not self.label.strip():
            raise ValidationError(f"object {self.id}: label must be a non-empty string")
        center = _triple(self.center, f"object {self.id}: center")
        size = _triple(self.size, f"object {self.id}: size")
        if any(s <= 0 for s in size):
            raise ValidationError(f"object {self.id}: non-positive size {size}")
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)

    @property
    def box(self) -> Box:
        return Box(self.center, self.size)


def _triple(values, what: str) -> tuple[float, float, float]:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ValidationError(f"{what} must be three numbers, got {values!r}") from None
    if len(out) != 3 or not all(math.isfinite(v) for v in out):
        raise ValidationError(f"{what} must be three finite numbers, got {values!r}")
    return out


@dataclass(frozen=True)
class ObjectLookupTable:
    scene_id: str
    records: tuple[ObjectRecord, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValidationError(f"scene {self.scene_id!r}: object lookup table is empty")
        by_id = {}
        for rec in records:
            if rec.id in by_id:
                raise ValidationError(f"scene {self.scene_id!r}: duplicate object id {rec.id}")
            by_id[rec.id] = rec
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, object_id) -> bool:
        return object_id in self._by_id

    def get(self, object_id: int) -> ObjectRecord:
        try:
            return self._by_id[object_id]
        except KeyError:
            raise KeyError(f"object id {object_id} not in scene {self.scene_id!r}") from None

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.records]


@dataclass(frozen=True)
class SceneDescription:
    text: str
    object_ids: tuple[int, ...]


# --------------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, numpy type) or (name, None) for lists


def _parse_header(fh, path) -> tuple[str, list[_Element], int]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise PlyError(f"{path}: missing 'ply' magic at byte 0")
    fmt = None
    elements: list[_Element] = []
    line_no = 1
    while True:
        offset = fh.tell()
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise PlyError(f"{path}: header not terminated by end_header (byte {offset})")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith(("comment", "obj_info")):
            continue
        parts = line.split()
        where = f"{path}: header line {line_no} (byte {offset})"
        if parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"{where}: unsupported format {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyError(f"{where}: malformed element line {line!r}")
            elements.append(_Element(parts[1], int(parts[2])))
        elif parts[0] == "property":
            if not elements:
                raise PlyError(f"{where}: property before any element")
            if len(parts) == 5 and parts[1] == "list":
                elements[-1].props.append((parts[4], None))
            elif len(parts) == 3 and parts[1] in _PLY_TYPES:
                elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise PlyError(f"{where}: malformed property line {line!r}")
        elif parts[0] == "end_header":
            break
        else:
            raise PlyError(f"{where}: unexpected header keyword {parts[0]!r}")
    if fmt is None:
        raise PlyError(f"{path}: header has no format line")
    return fmt, elements, line_no


def load_scene(path, scene_id: str | None = None) -> PointCloud:
    """Read the vertex element of an ASCII or binary little-endian PLY file."""
    path = Path(path)
    if not path.is_file():
        raise PlyError(f"{path}: file not found")
    if scene_id is None:
        scene_id = path.stem
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh, path)
        names = [e.name for e in elements]
        if "vertex" not in names:
            raise PlyError(f"{path}: no vertex element in header")
        vertex = elements[names.index("vertex")]
        prop_names = [p for p, _ in vertex.props]
        for axis in "xyz":
            if axis not in prop_names:
                raise PlyError(f"{path}: vertex element lacks property {axis!r}")
        if any(t is None for _, t in vertex.props):
            raise PlyError(f"{path}: list properties in the vertex element are not supported")

        if fmt == "ascii":
            data = _read_ascii(fh, path, elements, vertex, header_lines)
        else:
            data = _read_binary(fh, path, elements, vertex)

    points = np.stack([data[a].astype(np.float64) for a in "xyz"], axis=1)
    bad = ~np.isfinite(points).all(axis=1)
    if bad.any():
        raise PlyError(f"{path}: non-finite coordinate in vertex {int(np.argmax(bad))}")
    if all(c in prop_names for c in ("red", "green", "blue")):
        colors = np.stack([data[c] for c in ("red", "green", "blue")], axis=1)
        colors = np.clip(colors, 0, 255).astype(np.uint8)
    else:
        colors = np.tile(np.array(DEFAULT_COLOR, dtype=np.uint8), (len(points), 1))
    if len(points) == 0:
        raise PlyError(f"{path}: vertex element is empty")
    return PointCloud(points, colors, scene_id)


def _read_ascii(fh, path, elements, vertex, header_lines):
    line_no = header_lines
    for el in elements:
        rows = []
        for i in range(el.count):
            raw = fh.readline()
            line_no += 1
            if not raw:
                raise PlyError(f"{path}: unexpected end of file at line {line_no} ({el.name} {i})")
            if el is not vertex:
                continue
            toks = raw.split()
            if len(toks) != len(el.props):
                raise PlyError(
                    f"{path}: line {line_no}: expected {len(el.props)} values for vertex {i}, "
                    f"got {len(toks)}"
                )
            try:
                rows.append([float(t) for t in toks])
            except ValueError:
                raise PlyError(f"{path}: line {line_no}: non-numeric value in vertex {i}") from None
        if el is vertex:
            arr = np.array(rows, dtype=np.float64).reshape(el.count, len(el.props))
            # round floats to their declared width so ASCII and binary files load identically
            return {name: arr[:, k].astype(t) if t[0] == "f" else arr[:, k]
                    for k, (name, t) in enumerate(el.props)}
    raise AssertionError("unreachable")


def _read_binary(fh, path, elements, vertex):
    for el in elements:
        if any(t is None for _, t in el.props):
            raise PlyError(f"{path}: cannot skip list element {el.name!r} preceding vertex data")
        dtype = np.dtype([(name, "<" + t) for name, t in el.props])
        offset = fh.tell()
        buf = fh.read(dtype.itemsize * el.count)
        if len(buf) != dtype.itemsize * el.count:
            got = len(buf) // dtype.itemsize if dtype.itemsize else 0
            raise PlyError(
                f"{path}: truncated binary data at byte {offset + len(buf)} "
                f"({el.name} {got} of {el.count})"
            )
        if el is vertex:
            arr = np.frombuffer(buf, dtype=dtype)
            return {name: arr[name] for name in arr.dtype.names}
    raise AssertionError("unreachable")


def save_ply(cloud: PointCloud, path, binary: bool = False) -> None:
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                              ("red", "u1"), ("green", "u1"), ("blue", "u1")])
            arr = np.empty(len(cloud), dtype=dtype)
            for k, a in enumerate("xyz"):
                arr[a] = cloud.points[:, k]
            for k, c in enumerate(("red", "green", "blue")):
                arr[c] = cloud.colors[:, k]
            fh.write(arr.tobytes())
        else:
            lines = [
                f"{float(np.float32(p[0])):.9g} {float(np.float32(p[1])):.9g} "
                f"{float(np.float32(p[2])):.9g} {c[0]} {c[1]} {c[2]}\n"
                for p, c in zip(cloud.points, cloud.colors)
            ]
            fh.write("".join(lines).encode("ascii"))


# ----------------------------------------------------------------- detections


def load_detections(path) -> ObjectLookupTable:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"{path}: detection file not found") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from None
    return olt_from_dict(doc, source=str(path))


def olt_from_dict(doc: dict, source: str = "<detections>") -> ObjectLookupTable:
    if not isinstance(doc, dict) or "objects" not in doc:
        raise ValidationError(f"{source}: expected an object with an 'objects' list")
    scene_id = str(doc.get("scene_id", ""))
    records = []
    seen = set()
    for i, obj in enumerate(doc["objects"]):
        for key in ("id", "label", "center", "size"):
            if not isinstance(obj, dict) or key not in obj:
                raise ValidationError(f"{source}: record {i} is missing field {key!r}")
        try:
            rec = ObjectRecord(obj["id"], obj["label"], obj["center"], obj["size"])
        except ValidationError as e:
            raise ValidationError(f"{source}: record {i}: {e}") from None
        if rec.id in seen:
            raise ValidationError(f"{source}: record {i}: duplicate object id {rec.id}")
        seen.add(rec.id)
        records.append(rec)
    return ObjectLookupTable(scene_id, tuple(records))


def olt_to_dict(olt: ObjectLookupTable) -> dict:
    return {
        "scene_id": olt.scene_id,
        "objects": [
            {"id": r.id, "label": r.label, "center": list(r.center), "size": list(r.size)}
            for r in olt.records
        ],
    }


# ---------------------------------------------------------------- description

DESCRIPTION_LINE = (
    "Object ID: {id}, Type: {label}, Dimensions: Width {w:.2f}, Length {l:.2f}, "
    "Height {h:.2f}, Center Coordinates: X {x:.2f}, Y {y:.2f}, Z {z:.2f}"
)


def _fmt(v: float) -> float:
    # keep "-0.00" out of the text
    return 0.0 if round(v, 2) == 0 else v


def describe_record(rec: ObjectRecord) -> str:
    w, l, h = rec.size
    x, y, z = rec.center
    return DESCRIPTION_LINE.format(
        id=rec.id, label=rec.label, w=w, l=l, h=h, x=_fmt(x), y=_fmt(y), z=_fmt(z)
    )


def describe_scene(olt: ObjectLookupTable) -> SceneDescription:
    lines = [describe_record(r) for r in olt.records]
    return SceneDescription("\n".join(lines), tuple(r.id for r in olt.records))


_DESCRIPTION_RE = re.compile(
    r"Object ID: (?P<id>\d+), Type: (?P<label>.+?), Dimensions: Width (?P<w>-?[\d.]+), "
    r"Length (?P<l>-?[\d.]+), Height (?P<h>-?[\d.]+), Center Coordinates: "
    r"X (?P<x>-?[\d.]+), Y (?P<y>-?[\d.]+), Z (?P<z>-?[\d.]+)"
)


def parse_description(text: str, scene_id: str = "") -> ObjectLookupTable:
    """Recover an OLT (at 2-decimal precision) from description lines."""
    records = []
    for m in _DESCRIPTION_RE.finditer(text):
        g = m.groupdict()
        records.append(ObjectRecord(
            int(g["id"]), g["label"],
            (float(g["x"]), float(g["y"]), float(g["z"])),
            (float(g["w"]), float(g["l"]), float(g["h"])),
        ))
    return ObjectLookupTable(scene_id, tuple(records))


# ------------------------------------------------------------- point queries


def object_points(cloud: PointCloud, record: ObjectRecord, pad: float = 0.0) -> np.ndarray:
    """Indices of cloud points inside the record's closed box grown by ``pad``."""
    if pad < 0:
        raise ValueError("pad must be >= 0")
    return np.flatnonzero(record.box.contains(cloud.points, pad))


# ------------------------------------------------------------------- labels


def normalize_label(label: str) -> str:
    text = " ".join(label.lower().strip().split())
    if len(text) > 1 and text.endswith("s"):
        text = text[:-1]
    return text


def match_label(query: str, labels: Iterable[str]) -> list[int]:
    """Positions in ``labels`` that match ``query``.

    Exact normalized match first; when nothing matches, fall back to the
    head noun (last word) of the query, so "wooden table" finds "table".
    """
    labels = [normalize_label(l) for l in labels]
    q = normalize_label(query)
    if not q:
        return []
    hits = [i for i, l in enumerate(labels) if l == q]
    if hits or " " not in q:
        return hits
    head = normalize_label(q.split()[-1])
    return [i for i, l in enumerate(labels) if l == head]


def records_matching(olt: ObjectLookupTable, label: str | None) -> list[ObjectRecord]:
    if not label:
        return []
    idx = match_label(label, [r.label for r in olt.records])
    return [olt.records[i] for i in idx]


def centers(records: Sequence[ObjectRecord]) -> np.ndarray:
    return np.array([r.center for r in records], dtype=float).reshape(-1, 3)
