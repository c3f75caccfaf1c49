import os
import tempfile
from unittest import TestCase

import numpy as np

from crowd_points.annotations import (
    AnnotationRecord,
    ParseError,
    SchemaError,
    parse_ground_truth,
    parse_predictions,
    read_scenes,
    write_ground_truth,
    write_predictions,
    write_scenes,
)
from crowd_points.points import PointSet, ProposalSet
from crowd_points.synthetic import generate_suite


def write_lines(directory, name, lines):
    path = os.path.join(directory, name)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return path


class GroundTruthTests(TestCase):
    def test_empty_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(tmp, "gt.jsonl", [])
            assert parse_ground_truth(path) == []

    def test_parse(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(tmp, "gt.jsonl", ['{"image_id":"a","points":[[1,2],[3,4]]}', ""])
            [(image_id, points)] = parse_ground_truth(path)
            assert image_id == "a"
            assert points == PointSet([[1.0, 2.0], [3.0, 4.0]])

    def test_parse_error_names_line(self):
        lines = ['{"image_id":"%s","points":[]}' % i for i in "abcdef"] + ['{"image_id": "g", "points": [']
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ParseError) as ctx:
                parse_ground_truth(write_lines(tmp, "gt.jsonl", lines))
            assert ctx.exception.line == 7
            assert "line 7" in str(ctx.exception)

    def test_schema_errors(self):
        bad = [
            '{"image_id":"a","points":[[1,2]],"confidences":[0.5]}',
            '{"image_id":"a","points":[[1,2]],"colour":"red"}',
            '{"image_id":1,"points":[]}',
            '{"image_id":"a","points":[[1]]}',
            '["a"]',
        ]
        with tempfile.TemporaryDirectory() as tmp:
            for line in bad:
                with self.assertRaises(SchemaError):
                    parse_ground_truth(write_lines(tmp, "gt.jsonl", [line]))

    def test_duplicate_ids(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(tmp, "gt.jsonl", ['{"image_id":"a","points":[]}'] * 2)
            with self.assertRaises(SchemaError) as ctx:
                parse_ground_truth(path)
            assert ctx.exception.line == 2


class PredictionTests(TestCase):
    def test_confidences_required_and_in_range(self):
        with tempfile.TemporaryDirectory() as tmp:
            for line in [
                '{"image_id":"a","points":[[1,2]]}',
                '{"image_id":"a","points":[[1,2]],"confidences":[1.5]}',
                '{"image_id":"a","points":[[1,2]],"confidences":[0.5,0.5]}',
            ]:
                with self.assertRaises(SchemaError):
                    parse_predictions(write_lines(tmp, "pred.jsonl", [line]))

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        pred = ProposalSet(rng.uniform(0, 100, size=(5, 2)), rng.uniform(0, 1, size=5))
        gt = PointSet(rng.uniform(0, 100, size=(3, 2)) / 3.0)
        with tempfile.TemporaryDirectory() as tmp:
            write_predictions(os.path.join(tmp, "pred.jsonl"), [("x", pred)])
            write_ground_truth(os.path.join(tmp, "sub", "gt.jsonl"), [("x", gt)])
            assert parse_predictions(os.path.join(tmp, "pred.jsonl")) == [("x", pred)]
            assert parse_ground_truth(os.path.join(tmp, "sub", "gt.jsonl")) == [("x", gt)]


class SceneFileTests(TestCase):
    def test_scenes_keep_their_size(self):
        suite = generate_suite(2, 100, 60, 7, seed=0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "scenes.jsonl")
            write_scenes(path, suite)
            scenes = read_scenes(path)
        assert [(s.image_id, s.width, s.height) for s in scenes] == [("scene-0000", 100, 60), ("scene-0001", 100, 60)]
        assert all(a.gt == b.gt for a, b in zip(scenes, suite))

    def test_size_inferred_from_points(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(tmp, "gt.jsonl", ['{"image_id":"a","points":[[3.5,9.0]]}'])
            [scene] = read_scenes(path)
        assert (scene.width, scene.height) == (4, 10)

    def test_width_needs_height(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_lines(tmp, "gt.jsonl", ['{"image_id":"a","points":[],"width":4}'])
            with self.assertRaises(SchemaError):
                read_scenes(path)

    def test_record_json(self):
        record = AnnotationRecord("a", ((0.1, 2.0),), (0.5,))
        assert record.to_json() == '{"image_id": "a", "points": [[0.1, 2.0]], "confidences": [0.5]}'
