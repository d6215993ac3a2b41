import io
import json

import numpy as np
import pytest

from posefields.errors import ParseError
from posefields.ingest import (ImageRecord, Instance, Keypoint,
                               bbox_from_keypoints, format_float,
                               parse_coco_keypoints, parse_culane_lines,
                               parse_openlane_2d, parse_records,
                               quantize_record, records_to_json,
                               write_predictions)
from posefields.schema import builtin_schema


def coco_doc(keypoint_counts=(17,)):
    annotations = []
    for i, count in enumerate(keypoint_counts):
        flat = []
        for k in range(count):
            flat.extend([10.0 + k, 20.0 + k, 2])
        annotations.append({
            "id": i, "image_id": 1, "category_id": 1,
            "keypoints": flat, "bbox": [5.0, 15.0, 40.0, 40.0],
        })
    return {
        "images": [{"id": 1, "width": 200, "height": 100}],
        "annotations": annotations,
        "categories": [{"id": 1, "name": "person"}],
    }


class TestCocoParsing:
    def test_one_person(self):
        records, skipped = parse_coco_keypoints(
            json.dumps(coco_doc()), builtin_schema("human"))
        assert skipped == 0
        assert len(records) == 1
        assert len(records[0].instances) == 1
        inst = records[0].instances[0]
        assert inst.category == "human"
        assert inst.keypoints[0] == Keypoint(10.0, 20.0, 2)
        assert inst.score == 1.0

    def test_wrong_keypoint_count_skipped_and_counted(self):
        records, skipped = parse_coco_keypoints(
            json.dumps(coco_doc(keypoint_counts=(12,))), builtin_schema("human"))
        assert skipped == 1
        assert records[0].instances == ()

    def test_empty_annotations(self):
        doc = coco_doc()
        doc["annotations"] = []
        records, skipped = parse_coco_keypoints(json.dumps(doc), builtin_schema("human"))
        assert len(records) == 1 and records[0].instances == ()

    def test_malformed_json_reports_offset(self):
        with pytest.raises(ParseError) as err:
            parse_coco_keypoints(b'{"images": [', builtin_schema("human"))
        assert err.value.offset is not None

    def test_bbox_expanded_to_cover_keypoints(self):
        doc = coco_doc()
        doc["annotations"][0]["bbox"] = [10.0, 20.0, 1.0, 1.0]
        records, _ = parse_coco_keypoints(json.dumps(doc), builtin_schema("human"))
        x, y, w, h = records[0].instances[0].bbox
        for kp in records[0].instances[0].keypoints:
            assert x - 2 <= kp.x <= x + w + 2
            assert y - 2 <= kp.y <= y + h + 2


class TestCulaneParsing:
    def test_three_point_lane(self):
        lanes = parse_culane_lines(b"10 590 30 540 50 490\n")
        assert len(lanes) == 1
        assert lanes[0].points == ((10.0, 590.0), (30.0, 540.0), (50.0, 490.0))

    def test_empty_file(self):
        assert parse_culane_lines(b"") == []

    def test_odd_token_count(self):
        with pytest.raises(ParseError) as err:
            parse_culane_lines(b"10 590 30\n")
        assert "odd coordinate count, line 1" in str(err.value)

    def test_non_numeric_token(self):
        with pytest.raises(ParseError):
            parse_culane_lines(b"10 590 x 540\n")


class TestOpenLaneParsing:
    def test_four_lanes(self):
        doc = {"lane_lines": [
            {"uv": [[1, 2, 3], [10, 20, 30]], "category": 1, "track_id": k}
            for k in range(4)
        ]}
        lanes, skipped = parse_openlane_2d(json.dumps(doc))
        assert len(lanes) == 4 and skipped == 0
        assert lanes[0].tags == {"category": "1", "track_id": "0"}

    def test_mismatched_uv_lengths(self):
        doc = {"lane_lines": [{"uv": [[1, 2, 3], [10, 20]]}]}
        with pytest.raises(ParseError) as err:
            parse_openlane_2d(json.dumps(doc))
        assert "lane 0" in str(err.value)

    def test_zero_lanes(self):
        lanes, skipped = parse_openlane_2d(b'{"lane_lines": []}')
        assert lanes == [] and skipped == 0

    def test_missing_uv_skipped(self):
        doc = {"lane_lines": [{"xyz": []}, {"uv": [[0, 5], [0, 5]]}]}
        lanes, skipped = parse_openlane_2d(json.dumps(doc))
        assert len(lanes) == 1 and skipped == 1


def random_record(rng, image_id):
    instances = []
    for _ in range(int(rng.integers(0, 4))):
        k = int(rng.integers(1, 7))
        kps = tuple(
            Keypoint(round(float(rng.uniform(0, 99)), 6),
                     round(float(rng.uniform(0, 79)), 6),
                     int(rng.integers(0, 3)))
            for _ in range(k))
        instances.append(Instance(
            category="bicycle",
            keypoints=kps,
            score=round(float(rng.uniform(0, 1)), 6),
            bbox=bbox_from_keypoints(kps),
        ))
    return ImageRecord(image_id=image_id, width=100, height=80,
                       instances=tuple(instances),
                       scenario_tag=None if rng.random() < 0.5 else "night")


class TestCanonicalJson:
    def test_empty_list_serializes_to_brackets(self):
        sink = io.StringIO()
        write_predictions([], sink)
        assert sink.getvalue() == "[]\n"

    def test_fixed_float_formatting(self):
        assert format_float(0.123456789) == "0.123457"
        assert format_float(-0.0) == "0.000000"
        assert format_float(2.0) == "2.000000"
        record = ImageRecord("a", 10, 10, (Instance(
            "lane", (Keypoint(1.0, 2.0, 2), Keypoint(3.0, 4.0, 2)),
            score=0.123456789, bbox=(1.0, 2.0, 2.0, 2.0)),))
        assert '"score":0.123457' in records_to_json([record])

    def test_write_parse_round_trip_on_random_records(self):
        rng = np.random.default_rng(7)
        for trial in range(25):
            records = [random_record(rng, f"img-{i:03d}") for i in range(int(rng.integers(0, 5)))]
            records = [quantize_record(r) for r in records]
            sink = io.BytesIO()
            write_predictions(records, sink)
            again = parse_records(sink.getvalue())
            assert again == sorted(records, key=lambda r: r.image_id)

    def test_quantization_is_idempotent(self):
        rng = np.random.default_rng(8)
        record = quantize_record(random_record(rng, "x"))
        assert quantize_record(record) == record

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            format_float(float("nan"))

    def test_parsers_never_crash_on_arbitrary_bytes(self):
        rng = np.random.default_rng(1234)
        corpora = [bytes(rng.integers(0, 256, size=int(rng.integers(0, 200))).tolist())
                   for _ in range(200)]
        corpora += [b"{", b"[1,", b'{"images": 3}', b"\xff\xfe", b"null", b"[{}]",
                    b'[{"image_id": "a"}]']
        schema = builtin_schema("human")
        for blob in corpora:
            for parser in (lambda b: parse_coco_keypoints(b, schema),
                           parse_culane_lines, parse_openlane_2d, parse_records):
                try:
                    parser(blob)
                except ParseError:
                    pass


class TestRecordInvariants:
    def test_keypoints_must_stay_near_frame(self):
        kp = Keypoint(1000.0, 10.0, 2)
        inst = Instance("lane", (kp, Keypoint(0.0, 0.0, 2)), bbox=(0, 0, 1000, 10))
        with pytest.raises(ValueError):
            ImageRecord("x", 100, 100, (inst,))

    def test_negative_bbox_rejected(self):
        with pytest.raises(ValueError):
            Instance("lane", (Keypoint(0, 0, 2),), bbox=(0, 0, -1, 5))

    def test_score_range_enforced(self):
        with pytest.raises(ValueError):
            Instance("lane", (Keypoint(0, 0, 2),), score=1.5)
