import pytest

from posefields.errors import SchemaError
from posefields.schema import (CATEGORIES, SkeletonSchema, builtin_schema,
                               validate_schema)


def test_bicycle_schema_shape():
    schema = builtin_schema("bicycle")
    assert schema.keypoint_names == (
        "rear_wheel_back", "rear_wheel_center", "front_wheel_front",
        "front_wheel_center", "seat", "handlebar_center")
    assert schema.edge_count == 5
    # Chain from the rear wheel through the frame to the front wheel.
    degree = {}
    for a, b in schema.edges:
        degree[a] = degree.get(a, 0) + 1
        degree[b] = degree.get(b, 0) + 1
    assert sorted(degree.values()) == [1, 1, 2, 2, 2, 2]


def test_human_schema_is_coco17():
    schema = builtin_schema("human")
    assert schema.keypoint_count == 17
    assert schema.keypoint_names[0] == "nose"
    assert schema.keypoint_names[16] == "right_ankle"
    assert schema.oks_kappas[0] == pytest.approx(0.052)
    assert len(schema.flip_pairs) == 8


def test_lane_schema_cardinalities():
    lane24 = builtin_schema("lane", 24)
    assert lane24.keypoint_count == 24
    assert lane24.edges == tuple((i, i + 1) for i in range(23))
    lane2 = builtin_schema("lane", 2)
    assert lane2.keypoint_count == 2
    assert lane2.edges == ((0, 1),)


def test_lane_cardinality_must_be_at_least_two():
    with pytest.raises(SchemaError):
        builtin_schema("lane", 1)


def test_unknown_category_rejected():
    with pytest.raises(SchemaError):
        builtin_schema("boat")


def test_builtins_validate_for_all_categories_and_cardinalities():
    for category in CATEGORIES:
        cardinalities = range(2, 257) if category == "lane" else (2, 24, 256)
        for m in cardinalities:
            schema = builtin_schema(category, m)
            assert validate_schema(schema) == []
    # Determinism.
    assert builtin_schema("car") == builtin_schema("car")


def test_duplicate_name_reported():
    schema = SkeletonSchema("animal", ("a", "b", "a"), ((0, 1), (1, 2)), (0.1,) * 3)
    errors = validate_schema(schema)
    assert any("duplicate name" in e for e in errors)


def test_lane_chain_violation_reported():
    schema = SkeletonSchema("lane", ("p0", "p1", "p2"), ((0, 2), (1, 2)), (0.1,) * 3)
    errors = validate_schema(schema)
    assert any("lane must be a chain" in e for e in errors)


def test_disconnected_graph_reported():
    schema = SkeletonSchema("animal", ("a", "b", "c", "d"), ((0, 1), (2, 3)), (0.1,) * 4)
    errors = validate_schema(schema)
    assert any("not connected" in e for e in errors)


def test_edge_out_of_range_reported():
    schema = SkeletonSchema("animal", ("a", "b"), ((0, 5),), (0.1, 0.1))
    assert any("out of range" in e for e in validate_schema(schema))


def test_json_round_trip():
    for category in CATEGORIES:
        schema = builtin_schema(category)
        again = SkeletonSchema.from_json(schema.to_json())
        assert again == schema
        assert again.hash() == schema.hash()


def test_hash_differs_across_schemas():
    hashes = {builtin_schema(c).hash() for c in CATEGORIES}
    assert len(hashes) == len(CATEGORIES)
