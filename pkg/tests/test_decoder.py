import numpy as np
import pytest

from posefields.decoder import (DecoderConfig, OccupancyMap, SeedCandidate,
                                decode, grow_instance, seed_candidates)
from posefields.errors import FieldShapeError
from posefields.fields_codec import FieldConfig, FieldStack, encode_fields
from posefields.ingest import ImageRecord
from posefields.schema import builtin_schema
from util import make_instance, random_scene

CFG = FieldConfig(stride=16, window=4, sigma_floor=1.0)
DCFG = DecoderConfig()


def stack_for(record, schema):
    return encode_fields(record, schema, CFG)


class TestSeedCandidates:
    def make_cif(self, *peaks, shape=(1, 5, 10, 10)):
        cif = np.zeros(shape)
        for k, i, j, value in peaks:
            cif[k, 0, i, j] = value
        return cif

    def test_single_peak(self):
        cif = self.make_cif((0, 4, 5, 1.0))
        seeds = seed_candidates(cif, DCFG)
        assert seeds == [SeedCandidate(1.0, 0, 4, 5)]

    def test_uniform_zero_map_has_no_seeds(self):
        assert seed_candidates(np.zeros((3, 5, 8, 8)), DCFG) == []

    def test_plateau_yields_single_lexmin_seed(self):
        cif = np.zeros((1, 5, 10, 10))
        cif[0, 0, 3:6, 4:7] = 0.8
        seeds = seed_candidates(cif, DCFG)
        assert seeds == [SeedCandidate(0.8, 0, 3, 4)]

    def test_below_threshold_ignored(self):
        cif = self.make_cif((0, 2, 2, 0.25))
        assert seed_candidates(cif, DCFG) == []

    def test_ordering_by_confidence_then_position(self):
        cif = self.make_cif((0, 5, 5, 0.9), (0, 1, 1, 0.9), (0, 8, 2, 0.95))
        seeds = seed_candidates(cif, DCFG)
        assert [(s.row, s.col) for s in seeds] == [(8, 2), (1, 1), (5, 5)]


class TestDecode:
    def test_all_zero_fields_decode_empty(self):
        schema = builtin_schema("bicycle")
        stack = stack_for(ImageRecord("e", 320, 320, ()), schema)
        assert decode(stack, schema, DCFG) == []

    def test_three_keypoint_round_trip(self):
        schema = builtin_schema("lane", 3)
        inst = make_instance("lane", [(60.0, 250.0), (90.0, 160.0), (80.0, 70.0)])
        record = ImageRecord("a", 320, 320, (inst,))
        out = decode(stack_for(record, schema), schema, DCFG)
        assert len(out) == 1
        for kp, src in zip(out[0].keypoints, inst.keypoints):
            assert kp.v == 2
            assert abs(kp.x - src.x) <= 1.0 and abs(kp.y - src.y) <= 1.0

    def test_two_separated_instances_grouped_correctly(self):
        schema = builtin_schema("lane", 3)
        a = make_instance("lane", [(40.0, 40.0), (60.0, 80.0), (40.0, 120.0)])
        b = make_instance("lane", [(340.0, 340.0), (360.0, 380.0), (340.0, 420.0)])
        record = ImageRecord("a", 480, 480, (a, b))
        out = decode(stack_for(record, schema), schema, DCFG)
        assert len(out) == 2
        # Instances must not mix endpoints across the separation gap.
        for inst in out:
            xs = [kp.x for kp in inst.keypoints]
            assert max(xs) - min(xs) < 100

    def test_shape_mismatch_rejected(self):
        schema3 = builtin_schema("lane", 3)
        schema4 = builtin_schema("lane", 4)
        stack = stack_for(ImageRecord("e", 320, 320, ()), schema3)
        with pytest.raises(FieldShapeError):
            decode(stack, schema4, DCFG)

    def test_instances_sorted_by_descending_score(self):
        rng = np.random.default_rng(3)
        schema = builtin_schema("bicycle")
        record = random_scene(schema, rng)
        out = decode(stack_for(record, schema), schema, DCFG)
        scores = [inst.score for inst in out]
        assert scores == sorted(scores, reverse=True)

    def test_determinism_byte_identical(self):
        rng = np.random.default_rng(4)
        schema = builtin_schema("bicycle")
        record = random_scene(schema, rng)
        stack = stack_for(record, schema)
        assert decode(stack, schema, DCFG) == decode(stack, schema, DCFG)

    def test_seed_threshold_monotonicity(self):
        rng = np.random.default_rng(5)
        schema = builtin_schema("lane", 5)
        record = random_scene(schema, rng)
        stack = stack_for(record, schema)
        counts = []
        for thr in (0.1, 0.3, 0.5, 0.9, 0.999, 1.0):
            cfg = DecoderConfig(seed_threshold=thr)
            counts.append(len(decode(stack, schema, cfg)))
        assert counts == sorted(counts, reverse=True)

    def test_max_instances_cap(self):
        rng = np.random.default_rng(6)
        schema = builtin_schema("bicycle")
        record = random_scene(schema, rng, max_instances=5)
        stack = stack_for(record, schema)
        cfg = DecoderConfig(max_instances=1)
        assert len(decode(stack, schema, cfg)) == 1

    def test_score_is_mean_keypoint_confidence(self):
        schema = builtin_schema("lane", 3)
        inst = make_instance("lane", [(60.0, 250.0), (90.0, 160.0), (80.0, 70.0)])
        record = ImageRecord("a", 320, 320, (inst,))
        out = decode(stack_for(record, schema), schema, DCFG)
        assert out[0].score == pytest.approx(
            np.mean([s for s in out[0].keypoint_scores]))


class TestGrowInstance:
    def test_seed_with_no_passing_edges_yields_single_keypoint(self):
        schema = builtin_schema("lane", 2)
        # Only one endpoint annotated: no association map entries at all.
        inst = make_instance("lane", [(80.0, 80.0), (0.0, 0.0)], visibilities=[2, 0])
        record = ImageRecord("a", 320, 320, (inst,))
        stack = stack_for(record, schema)
        seeds = seed_candidates(np.asarray(stack.cif, dtype=float), DCFG)
        occupancy = OccupancyMap(schema.keypoint_count)
        out = grow_instance(seeds[0], stack, occupancy, DCFG, schema=schema)
        assert sum(1 for kp in out.keypoints if kp.v == 2) == 1

    def test_chain_recovered_in_order(self):
        schema = builtin_schema("lane", 6)
        points = [(50.0, 300.0 - 40.0 * i) for i in range(6)]
        inst = make_instance("lane", points)
        record = ImageRecord("a", 320, 320, (inst,))
        stack = stack_for(record, schema)
        seeds = seed_candidates(np.asarray(stack.cif, dtype=float), DCFG)
        occupancy = OccupancyMap(schema.keypoint_count)
        out = grow_instance(seeds[0], stack, occupancy, DCFG, schema=schema)
        for kp, (x, y) in zip(out.keypoints, points):
            assert kp.v == 2
            assert abs(kp.x - x) <= 1.0 and abs(kp.y - y) <= 1.0

    def test_occupied_seed_skipped_by_decode(self):
        schema = builtin_schema("lane", 2)
        inst = make_instance("lane", [(80.0, 80.0), (80.0, 160.0)])
        record = ImageRecord("a", 320, 320, (inst,))
        stack = stack_for(record, schema)
        out = decode(stack, schema, DCFG)
        assert len(out) == 1  # the second plateau's seed lands occupied


def test_round_trip_all_categories_small():
    rng = np.random.default_rng(11)
    for category in ("human", "animal", "car", "bicycle", "lane"):
        schema = builtin_schema(category)
        for _ in range(3):
            record = random_scene(schema, rng)
            out = decode(stack_for(record, schema), schema, DCFG)
            assert len(out) == len(record.instances)
            matched = match_by_nearest(out, record.instances)
            for pred, gt in matched:
                for pk, gk in zip(pred.keypoints, gt.keypoints):
                    assert abs(pk.x - gk.x) <= 1.0 and abs(pk.y - gk.y) <= 1.0


def match_by_nearest(preds, gts):
    pairs = []
    for gt in gts:
        gx = np.mean([kp.x for kp in gt.keypoints])
        gy = np.mean([kp.y for kp in gt.keypoints])
        best = min(preds, key=lambda p: (np.mean([kp.x for kp in p.keypoints]) - gx) ** 2
                   + (np.mean([kp.y for kp in p.keypoints]) - gy) ** 2)
        pairs.append((best, gt))
    return pairs
