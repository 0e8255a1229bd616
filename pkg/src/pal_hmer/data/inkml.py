"""Minimal InkML reader: trace elements plus the LaTeX truth annotation."""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InkMLParseError, SchemaError


@dataclass
class Stroke:
    points: np.ndarray  # (n, 2) pen coordinates in file order

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) == 0:
            raise SchemaError("stroke with no points")
        if not np.all(np.isfinite(self.points)):
            raise SchemaError("stroke has non-finite coordinates")


@dataclass
class ExpressionRecord:
    strokes: list
    label: str
    id: str = ""
    meta: dict = field(default_factory=dict)


def _local(tag):
    return tag.rsplit("}", 1)[-1]


def _parse_trace(text):
    pts = []
    for chunk in text.strip().split(","):
        vals = chunk.split()
        if not vals:
            continue
        if len(vals) < 2:
            raise SchemaError(f"trace point {chunk.strip()!r} has fewer than two coordinates")
        try:
            # extra channels (time, pressure) are ignored
            pts.append((float(vals[0]), float(vals[1])))
        except ValueError:
            raise SchemaError(f"non-numeric trace point {chunk.strip()!r}") from None
    if not pts:
        raise SchemaError("empty trace element")
    return Stroke(np.array(pts))


def parse_inkml(xml_text, record_id=""):
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else "?"
        raise InkMLParseError(f"malformed InkML at line {line}: {exc}") from None

    label = None
    for el in root.iter():
        if _local(el.tag) == "annotation" and el.get("type") == "truth":
            label = (el.text or "").strip()
            break
    if label is None:
        raise SchemaError(f"{record_id or 'InkML'}: missing <annotation type=\"truth\">")

    strokes = [_parse_trace(el.text or "") for el in root.iter() if _local(el.tag) == "trace"]
    if not strokes:
        raise SchemaError(f"{record_id or 'InkML'}: no trace elements")
    return ExpressionRecord(strokes, label, record_id)


def strip_math_delimiters(label):
    """CROHME truths are usually wrapped in ``$...$``."""
    label = label.strip()
    if len(label) >= 2 and label.startswith("$") and label.endswith("$"):
        return label[1:-1].strip()
    return label


def load_inkml_dir(path):
    files = sorted(Path(path).glob("*.inkml"))
    records = []
    for f in files:
        try:
            records.append(parse_inkml(f.read_text(encoding="utf-8"), f.stem))
        except (InkMLParseError, SchemaError) as exc:
            raise type(exc)(f"{f.name}: {exc}") from None
    return records
