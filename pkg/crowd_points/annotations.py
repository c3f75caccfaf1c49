"""
JSON-lines annotation files.

Ground truth, one image per line::

    {"image_id": "a", "points": [[x, y], ...]}

Predictions add the confidence of every point::

    {"image_id": "a", "points": [[x, y], ...], "confidences": [t, ...]}

Scene files are ground-truth files that also carry integer ``width`` and ``height``. Floats are
written in shortest round-trip form, so write-then-parse reproduces every double exactly.
"""
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from crowd_points.points import InvalidInput, PointMatchError, PointSet, ProposalSet
from crowd_points.synthetic import Scene

logger = logging.getLogger(__name__)

GT_KEYS = {"image_id", "points", "width", "height"}
PRED_KEYS = GT_KEYS | {"confidences"}


class ParseError(PointMatchError):
    """A line is not valid JSON"""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(PointMatchError):
    """A line is valid JSON but not a valid record"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class AnnotationRecord:
    """One line of an annotation file"""

    image_id: str
    points: Tuple[Tuple[float, float], ...]
    confidences: Optional[Tuple[float, ...]] = None
    width: Optional[int] = None
    height: Optional[int] = None

    def to_json(self) -> str:
        record = {"image_id": self.image_id, "points": [[float(x), float(y)] for x, y in self.points]}
        if self.confidences is not None:
            record["confidences"] = [float(t) for t in self.confidences]
        if self.width is not None:
            record["width"] = int(self.width)
            record["height"] = int(self.height)
        return json.dumps(record, allow_nan=False)


def _read_records(path: str, predictions: bool) -> Iterator[Tuple[int, AnnotationRecord]]:
    allowed = PRED_KEYS if predictions else GT_KEYS
    seen = set()
    with open(path, mode="r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(number, e.msg) from e
            record = _to_record(raw, number, allowed, predictions)
            if record.image_id in seen:
                raise SchemaError(f"duplicate image_id {record.image_id!r}", number)
            seen.add(record.image_id)
            yield number, record


def _to_record(raw, number: int, allowed: set, predictions: bool) -> AnnotationRecord:
    if not isinstance(raw, dict):
        raise SchemaError("record must be a JSON object", number)
    unknown = set(raw) - allowed
    if "confidences" in unknown:
        raise SchemaError("ground-truth records must not carry confidences", number)
    if unknown:
        raise SchemaError(f"unknown fields {sorted(unknown)}", number)
    if not isinstance(raw.get("image_id"), str):
        raise SchemaError("image_id must be a string", number)
    points = raw.get("points")
    if not isinstance(points, list) or not all(
        isinstance(p, list) and len(p) == 2 and all(_is_number(v) for v in p) for p in points
    ):
        raise SchemaError("points must be a list of [x, y] numbers", number)

    confidences = None
    if predictions:
        confidences = raw.get("confidences")
        if confidences is None:
            raise SchemaError("prediction records need confidences", number)
        if not isinstance(confidences, list) or not all(_is_number(t) for t in confidences):
            raise SchemaError("confidences must be a list of numbers", number)
        if len(confidences) != len(points):
            raise SchemaError(f"{len(points)} points but {len(confidences)} confidences", number)
        if any(not 0.0 <= t <= 1.0 for t in confidences):
            raise SchemaError("confidences must lie in [0, 1]", number)
        confidences = tuple(float(t) for t in confidences)

    width, height = raw.get("width"), raw.get("height")
    if (width is None) != (height is None):
        raise SchemaError("width and height go together", number)
    if width is not None and not (isinstance(width, int) and isinstance(height, int) and width > 0 and height > 0):
        raise SchemaError("width and height must be positive integers", number)

    return AnnotationRecord(
        image_id=raw["image_id"],
        points=tuple((float(x), float(y)) for x, y in points),
        confidences=confidences,
        width=width,
        height=height,
    )


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def read_ground_truth_records(path: str) -> List[AnnotationRecord]:
    return [record for _, record in _read_records(path, predictions=False)]


def parse_ground_truth(path: str) -> List[Tuple[str, PointSet]]:
    """
    :param path: JSON-lines ground-truth file
    :return: (image_id, PointSet) in file order
    :raises ParseError: malformed JSON, naming the line
    :raises SchemaError: confidences present or malformed fields
    """
    records = read_ground_truth_records(path)
    logger.info("read %d ground-truth images from %s", len(records), path)
    return [(r.image_id, PointSet(np.array(r.points, dtype=np.float64).reshape(-1, 2))) for r in records]


def parse_predictions(path: str) -> List[Tuple[str, ProposalSet]]:
    """
    :param path: JSON-lines prediction file
    :return: (image_id, ProposalSet) in file order
    :raises ParseError: malformed JSON, naming the line
    :raises SchemaError: missing or invalid confidences
    """
    results = []
    for _, r in _read_records(path, predictions=True):
        coords = np.array(r.points, dtype=np.float64).reshape(-1, 2)
        results.append((r.image_id, ProposalSet(coords, np.array(r.confidences, dtype=np.float64))))
    logger.info("read %d prediction images from %s", len(results), path)
    return results


def _write_lines(path: str, lines: Sequence[str]):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, mode="w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def write_ground_truth(path: str, items: Sequence[Tuple[str, PointSet]]):
    _write_lines(path, [AnnotationRecord(i, tuple(map(tuple, p.coords))).to_json() for i, p in items])


def write_predictions(path: str, items: Sequence[Tuple[str, ProposalSet]]):
    _write_lines(
        path,
        [AnnotationRecord(i, tuple(map(tuple, p.coords)), tuple(p.confidences)).to_json() for i, p in items],
    )


def write_scenes(path: str, scenes: Sequence[Scene]):
    """Ground-truth file with the image size on every line"""
    _write_lines(
        path,
        [
            AnnotationRecord(s.image_id, tuple(map(tuple, s.gt.coords)), width=s.width, height=s.height).to_json()
            for s in scenes
        ],
    )


def read_scenes(path: str) -> List[Scene]:
    """
    Scenes from a ground-truth file. Lines without a size get the smallest one that contains
    their points.
    """
    scenes = []
    for record in read_ground_truth_records(path):
        coords = np.array(record.points, dtype=np.float64).reshape(-1, 2)
        width, height = record.width, record.height
        if width is None:
            upper = np.floor(coords.max(axis=0)) + 1 if len(coords) else np.ones(2)
            width, height = int(upper[0]), int(upper[1])
        try:
            scenes.append(Scene(width, height, PointSet(coords), 0, record.image_id))
        except InvalidInput as e:
            raise SchemaError(str(e)) from e
    return scenes
