import io

import numpy as np
import pytest

from posefields.errors import FieldShapeError, ParseError
from posefields.fields_codec import (CAF_CHANNELS, CIF_CHANNELS, FieldConfig,
                                     FieldStack, encode_caf, encode_cif,
                                     encode_fields, fields_from_bytes,
                                     fields_to_bytes, read_fields,
                                     rescale_to_long_edge, write_fields)
from posefields.ingest import ImageRecord, Instance, Keypoint
from posefields.schema import builtin_schema
from util import make_instance, random_scene

CFG = FieldConfig(stride=16, window=4, sigma_floor=1.0)
LANE2 = builtin_schema("lane", 2)
BICYCLE = builtin_schema("bicycle")


def empty_record(width=320, height=320):
    return ImageRecord("empty", width, height, ())


class TestEncodeCif:
    def test_empty_record_all_zero(self):
        cif = encode_cif(empty_record(), BICYCLE, CFG)
        assert cif.shape == (6, 5, 20, 20)
        assert not cif.any()

    def test_single_keypoint_window_and_reconstruction(self):
        inst = make_instance("lane", [(40.0, 40.0), (200.0, 200.0)])
        record = ImageRecord("a", 320, 320, (inst,))
        cif = encode_cif(record, LANE2, CFG)
        conf = cif[0, 0]
        assert int(conf.sum()) == 16  # full 4x4 block, interior keypoint
        rows, cols = np.nonzero(conf)
        for i, j in zip(rows, cols):
            x = (j + cif[0, 1, i, j]) * CFG.stride
            y = (i + cif[0, 2, i, j]) * CFG.stride
            assert abs(x - 40.0) <= 1e-6
            assert abs(y - 40.0) <= 1e-6

    def test_identical_keypoints_single_winner_per_cell(self):
        a = make_instance("lane", [(40.0, 40.0), (200.0, 200.0)])
        b = make_instance("lane", [(40.0, 40.0), (208.0, 208.0)])
        record = ImageRecord("a", 320, 320, (a, b))
        cif = encode_cif(record, LANE2, CFG)
        # Cells near (40, 40) all reconstruct exactly (40, 40): one entry won.
        rows, cols = np.nonzero(cif[0, 0])
        for i, j in zip(rows, cols):
            x = (j + cif[0, 1, i, j]) * CFG.stride
            y = (i + cif[0, 2, i, j]) * CFG.stride
            assert (abs(x - 40.0) <= 1e-6) and (abs(y - 40.0) <= 1e-6)

    def test_overlap_resolved_by_smaller_offset(self):
        # Two keypoints of the same type three cells apart: contested cells
        # must hold the entry whose offset magnitude is smaller.
        a = make_instance("lane", [(40.0, 40.0), (300.0, 300.0)])
        b = make_instance("lane", [(88.0, 40.0), (300.0, 308.0)])
        record = ImageRecord("a", 320, 320, (a, b))
        cif = encode_cif(record, LANE2, CFG)
        rows, cols = np.nonzero(cif[0, 0])
        for i, j in zip(rows, cols):
            dx, dy = cif[0, 1, i, j], cif[0, 2, i, j]
            d_here = dx * dx + dy * dy
            for kx in (40.0, 88.0):
                ox, oy = kx / 16.0 - j, 40.0 / 16.0 - i
                alt = ox * ox + oy * oy
                assert d_here <= alt + 1e-12

    def test_keypoint_count_mismatch_rejected(self):
        inst = make_instance("lane", [(40.0, 40.0), (50.0, 50.0)])
        record = ImageRecord("a", 320, 320, (inst,))
        with pytest.raises(FieldShapeError):
            encode_cif(record, BICYCLE, CFG)

    def test_nonzero_cells_bounded_by_window_budget(self):
        rng = np.random.default_rng(5)
        record = random_scene(BICYCLE, rng)
        cif = encode_cif(record, BICYCLE, CFG)
        visible = sum(1 for inst in record.instances for kp in inst.keypoints if kp.labeled)
        assert int((cif[:, 0] > 0).sum()) <= visible * CFG.window ** 2

    def test_translation_equivariance_one_stride(self):
        rng = np.random.default_rng(6)
        base = random_scene(BICYCLE, rng, canvas=(480, 480), max_instances=2)
        # Quantize to 1/8 px so x+stride is exact in floating point; the
        # equivariance guarantee is at stride granularity, not across
        # binade rounding.
        base = ImageRecord("b0", base.width, base.height, tuple(
            Instance(i.category,
                     tuple(Keypoint(round(kp.x * 8) / 8, round(kp.y * 8) / 8, kp.v)
                           for kp in i.keypoints),
                     score=i.score,
                     bbox=tuple(round(c * 8) / 8 for c in i.bbox))
            for i in base.instances))
        shifted_instances = []
        for inst in base.instances:
            shifted_instances.append(Instance(
                category=inst.category,
                keypoints=tuple(Keypoint(kp.x + CFG.stride, kp.y, kp.v)
                                for kp in inst.keypoints),
                score=inst.score,
                bbox=(inst.bbox[0] + CFG.stride, inst.bbox[1], inst.bbox[2], inst.bbox[3]),
            ))
        shifted = ImageRecord("s", 480 + CFG.stride, 480, tuple(shifted_instances))
        base_wide = ImageRecord("b", 480 + CFG.stride, 480, base.instances)
        cif0 = encode_cif(base_wide, BICYCLE, CFG)
        cif1 = encode_cif(shifted, BICYCLE, CFG)
        assert np.array_equal(cif1[:, :, :, 1:], cif0[:, :, :, :-1])
        caf0 = encode_caf(base_wide, BICYCLE, CFG)
        caf1 = encode_caf(shifted, BICYCLE, CFG)
        assert np.array_equal(caf1[:, :, :, 1:], caf0[:, :, :, :-1])


class TestEncodeCaf:
    def test_absent_endpoint_contributes_nothing(self):
        inst = make_instance("lane", [(40.0, 40.0), (200.0, 200.0)],
                             visibilities=[2, 0])
        record = ImageRecord("a", 320, 320, (inst,))
        caf = encode_caf(record, LANE2, CFG)
        assert not caf.any()

    def test_two_keypoint_instance_reconstructs_both_endpoints(self):
        inst = make_instance("lane", [(43.0, 57.0), (201.0, 188.0)])
        record = ImageRecord("a", 320, 320, (inst,))
        caf = encode_caf(record, LANE2, CFG)
        rows, cols = np.nonzero(caf[0, 0])
        assert len(rows) > 0
        for i, j in zip(rows, cols):
            x1 = (j + caf[0, 1, i, j]) * CFG.stride
            y1 = (i + caf[0, 2, i, j]) * CFG.stride
            x2 = (j + caf[0, 3, i, j]) * CFG.stride
            y2 = (i + caf[0, 4, i, j]) * CFG.stride
            assert abs(x1 - 43.0) <= 1e-6 and abs(y1 - 57.0) <= 1e-6
            assert abs(x2 - 201.0) <= 1e-6 and abs(y2 - 188.0) <= 1e-6

    def test_empty_record_all_zero(self):
        caf = encode_caf(empty_record(), BICYCLE, CFG)
        assert caf.shape == (5, 9, 20, 20)
        assert not caf.any()

    def test_spread_and_scale_populated(self):
        inst = make_instance("lane", [(40.0, 40.0), (200.0, 200.0)])
        record = ImageRecord("a", 320, 320, (inst,))
        caf = encode_caf(record, LANE2, CFG)
        rows, cols = np.nonzero(caf[0, 0])
        sigma = np.sqrt(160.0 * 160.0) / 16.0
        assert np.allclose(caf[0, 7, rows, cols], sigma)
        assert np.allclose(caf[0, 5, rows, cols], max(1.0 / 16.0, sigma / 4.0))


class TestFieldStackInvariants:
    def test_grid_shape_uses_ceil(self):
        cfg = FieldConfig(stride=16)
        assert cfg.grid_shape(321, 320) == (20, 21)

    def test_confidence_in_unit_interval_and_scales_nonneg(self):
        rng = np.random.default_rng(7)
        record = random_scene(BICYCLE, rng)
        stack = encode_fields(record, BICYCLE, CFG)
        for arr in (stack.cif, stack.caf):
            conf = arr[:, 0]
            assert conf.min() >= 0.0 and conf.max() <= 1.0
        written = stack.cif[:, 0] > 0
        assert (stack.cif[:, 3][written] >= 0).all()
        assert (stack.cif[:, 4][written] >= 0).all()

    def test_shape_validation(self):
        with pytest.raises(FieldShapeError):
            FieldStack(cif=np.zeros((2, 5, 4, 4)), caf=np.zeros((1, 9, 5, 4)),
                       config=FieldConfig(stride=16), image_size=(64, 64))


class TestRescaleToLongEdge:
    def test_kitti_like_aspect(self):
        record = ImageRecord("a", 1242, 621, ())
        out = rescale_to_long_edge(record, 621)
        assert (out.width, out.height) == (621, 310)

    def test_identity_when_already_sized(self):
        inst = make_instance("lane", [(10.0, 20.0), (200.0, 300.0)])
        record = ImageRecord("a", 621, 400, (inst,))
        out = rescale_to_long_edge(record, 621)
        assert out == record

    def test_keypoint_scaling(self):
        inst = make_instance("lane", [(100.0, 100.0), (400.0, 400.0)])
        record = ImageRecord("a", 1242, 621, (inst,))
        out = rescale_to_long_edge(record, 621)
        assert out.instances[0].keypoints[0] == Keypoint(50.0, 50.0, 2)


class TestFileFormat:
    def test_round_trip_bytes_and_alignment(self):
        rng = np.random.default_rng(8)
        record = random_scene(BICYCLE, rng)
        stack = encode_fields(record, BICYCLE, CFG)
        blob = fields_to_bytes(stack, BICYCLE.hash())
        assert (blob.find(b"\n") + 1) % 4 == 0
        again, header = fields_from_bytes(blob)
        assert header["schema_hash"] == BICYCLE.hash()
        assert np.array_equal(again.cif, stack.cif.astype("<f4"))
        assert np.array_equal(again.caf, stack.caf.astype("<f4"))
        assert fields_to_bytes(FieldStack(
            cif=np.asarray(again.cif, dtype=np.float64),
            caf=np.asarray(again.caf, dtype=np.float64),
            config=again.config, image_size=again.image_size), BICYCLE.hash()) == blob

    def test_write_read_file(self, tmp_path):
        rng = np.random.default_rng(9)
        record = random_scene(LANE2, rng)
        stack = encode_fields(record, LANE2, CFG)
        path = tmp_path / "x.fields"
        write_fields(stack, LANE2.hash(), path)
        again, header = read_fields(path)
        assert header["channel_names"]["cif"] == list(CIF_CHANNELS)
        assert header["channel_names"]["caf"] == list(CAF_CHANNELS)
        assert again.image_size == stack.image_size

    def test_truncated_payload_rejected(self):
        rng = np.random.default_rng(10)
        stack = encode_fields(random_scene(LANE2, rng), LANE2, CFG)
        blob = fields_to_bytes(stack, LANE2.hash())
        with pytest.raises(ParseError):
            fields_from_bytes(blob[:-5])

    def test_missing_header_rejected(self):
        with pytest.raises(ParseError):
            fields_from_bytes(b"\x00\x01\x02\x03" * 8)
        with pytest.raises(ParseError):
            read_fields(io.BytesIO(b"{}\n"))
