import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from drivearea.dataset import (
    ALTERNATIVE,
    DIRECT,
    ConditionKey,
    DatasetIndex,
    ImageRecord,
    PolygonLabel,
    SCENE_TAGS,
    TIMEOFDAY_TAGS,
    WEATHER_TAGS,
    filter_drivable,
    normalize_tag,
    parse_labels,
    stratify_key,
    write_normalized,
)
from drivearea.errors import IoFailure, MalformedInput, SchemaViolation

from conftest import RECT, TRI, bdd_entry, drivable_label


class TestParseBdd:
    def test_three_image_fixture(self, three_image_bdd):
        index = parse_labels(three_image_bdd)
        assert len(index) == 3
        by_id = {r.image_id: r for r in index}
        assert len(by_id["img-a.jpg"].labels) == 2
        assert len(by_id["img-b.jpg"].labels) == 0
        assert len(by_id["img-c.jpg"].labels) == 1
        assert by_id["img-a.jpg"].labels[0].class_id == DIRECT
        assert by_id["img-a.jpg"].labels[1].class_id == ALTERNATIVE

    def test_non_drivable_category_skipped(self):
        raw = json.dumps([bdd_entry("x", [
            {"category": "lane marking", "poly2d": [{"vertices": [[0, 0], [5, 0], [5, 5]]}]}
        ])]).encode()
        index = parse_labels(raw)
        assert index.records[0].labels == ()
        assert index.parse_warnings == 0

    def test_two_vertex_polygon_rejected_with_warning(self):
        raw = json.dumps([bdd_entry("x", [drivable_label("direct", [(0, 0), (1, 1)])])]).encode()
        index = parse_labels(raw)
        assert index.records[0].labels == ()
        assert index.parse_warnings == 1
        assert index.degenerate_ids == ("x",)

    def test_curved_segments_flattened_with_warning(self):
        label = drivable_label("direct", RECT, types="LLCC")
        raw = json.dumps([bdd_entry("x", [label])]).encode()
        index = parse_labels(raw)
        assert len(index.records[0].labels) == 1  # control points kept as vertices
        assert index.parse_warnings == 1
        assert index.degenerate_ids == ()

    def test_drivable_without_geometry_is_warning(self):
        raw = json.dumps([bdd_entry("x", [
            {"category": "drivable area", "attributes": {"areaType": "direct"},
             "box2d": {"x1": 0, "y1": 0, "x2": 5, "y2": 5}}
        ])]).encode()
        index = parse_labels(raw)
        assert index.records[0].labels == ()
        assert index.parse_warnings == 1

    def test_unknown_area_type_skipped_silently(self):
        raw = json.dumps([bdd_entry("x", [drivable_label("median", RECT)])]).encode()
        index = parse_labels(raw)
        assert index.records[0].labels == ()
        assert index.parse_warnings == 0

    def test_missing_name_is_schema_violation(self):
        raw = json.dumps([{"labels": []}]).encode()
        with pytest.raises(SchemaViolation, match="entry 0.*'name'"):
            parse_labels(raw)

    def test_malformed_json(self):
        with pytest.raises(MalformedInput, match="line 1"):
            parse_labels(b"[{not json")

    def test_unsupported_root(self):
        with pytest.raises(SchemaViolation):
            parse_labels(b'{"images": []}')

    def test_default_dims_applied_and_overridable(self, three_image_bdd):
        index = parse_labels(three_image_bdd)
        assert (index.records[0].width, index.records[0].height) == (1280, 720)
        index = parse_labels(three_image_bdd, default_dims=(640, 360))
        assert (index.records[0].width, index.records[0].height) == (640, 360)

    def test_one_label_per_poly2d_entry(self):
        label = {
            "category": "drivable area",
            "attributes": {"areaType": "direct"},
            "poly2d": [{"vertices": [list(v) for v in RECT]},
                       {"vertices": [list(v) for v in TRI]}],
        }
        index = parse_labels(json.dumps([bdd_entry("x", [label])]).encode())
        assert len(index.records[0].labels) == 2

    def test_duplicate_image_id_rejected(self):
        raw = json.dumps([bdd_entry("x"), bdd_entry("x")]).encode()
        with pytest.raises(SchemaViolation, match="duplicate"):
            parse_labels(raw)

    def test_records_sorted_by_image_id(self):
        raw = json.dumps([bdd_entry("zz"), bdd_entry("aa"), bdd_entry("mm")]).encode()
        index = parse_labels(raw)
        assert [r.image_id for r in index] == ["aa", "mm", "zz"]

    def test_parse_is_deterministic(self, three_image_bdd):
        assert parse_labels(three_image_bdd) == parse_labels(three_image_bdd)

    def test_accepts_file_object(self, three_image_bdd):
        assert len(parse_labels(io.BytesIO(three_image_bdd))) == 3


class TestNormalizeTag:
    def test_case_and_whitespace(self):
        assert normalize_tag("Partly   Cloudy", WEATHER_TAGS) == "partly-cloudy"
        assert normalize_tag(" city street ", SCENE_TAGS) == "city-street"

    def test_slash_separator(self):
        assert normalize_tag("dawn/dusk", TIMEOFDAY_TAGS) == "dawn-dusk"

    def test_plural_gas_stations_alias(self):
        assert normalize_tag("gas stations", SCENE_TAGS) == "gas-station"

    def test_unknown_maps_to_undefined(self):
        assert normalize_tag("sharknado", WEATHER_TAGS) == "undefined"
        assert normalize_tag(None, WEATHER_TAGS) == "undefined"
        assert normalize_tag(7, WEATHER_TAGS) == "undefined"


class TestStratifyKey:
    def test_normalized_triple(self, three_image_bdd):
        index = parse_labels(three_image_bdd)
        rec = {r.image_id: r for r in index}["img-a.jpg"]
        assert stratify_key(rec) == ConditionKey("rainy", "city-street", "night")

    def test_absent_attributes(self, three_image_bdd):
        index = parse_labels(three_image_bdd)
        rec = {r.image_id: r for r in index}["img-c.jpg"]
        assert stratify_key(rec) == ConditionKey("undefined", "undefined", "undefined")


def _record(i, n_labels=1):
    labels = tuple(
        PolygonLabel(class_id=DIRECT, vertices=((0.0, 0.0), (5.0, 0.0), (5.0, 5.0)))
        for _ in range(n_labels)
    )
    return ImageRecord(image_id=f"img-{i:03d}", width=64, height=48, labels=labels)


class TestFilterDrivable:
    def test_drop_fraction(self):
        records = tuple(_record(i) for i in range(19)) + (_record(19, n_labels=0),)
        filtered, report = filter_drivable(DatasetIndex(records))
        assert report.total_in == 20
        assert report.kept == 19
        assert report.dropped_ids == ("img-019",)
        assert report.drop_fraction == 0.05
        assert len(filtered) == 19

    def test_all_labeled_identity(self):
        index = DatasetIndex(tuple(_record(i) for i in range(5)))
        filtered, report = filter_drivable(index)
        assert filtered == index
        assert report.dropped_ids == ()
        assert report.drop_fraction == 0.0

    def test_empty_input(self):
        filtered, report = filter_drivable(DatasetIndex(()))
        assert len(filtered) == 0
        assert report.drop_fraction == 0.0

    def test_idempotent(self):
        records = tuple(_record(i) for i in range(4)) + (_record(4, n_labels=0),)
        once, _ = filter_drivable(DatasetIndex(records))
        twice, report = filter_drivable(once)
        assert once == twice
        assert report.dropped_ids == ()

    def test_degenerate_images_counted_separately(self):
        raw = json.dumps([
            bdd_entry("deg", [drivable_label("direct", [(0, 0), (1, 1)])]),
            bdd_entry("empty"),
            bdd_entry("ok", [drivable_label("direct", RECT)]),
        ]).encode()
        _, report = filter_drivable(parse_labels(raw))
        assert report.dropped_all_rejected == 1
        assert report.dropped_unlabeled == 1
        assert set(report.dropped_ids) == {"deg", "empty"}


class TestWriteNormalized:
    def test_roundtrip_fixture(self, three_image_bdd):
        index = parse_labels(three_image_bdd)
        buf = io.BytesIO()
        assert write_normalized(index, buf) == 3
        parsed = parse_labels(buf.getvalue())
        assert parsed.records == index.records
        assert parsed == index

    def test_empty_index(self):
        buf = io.BytesIO()
        assert write_normalized(DatasetIndex(()), buf) == 0
        assert buf.getvalue() == b'{"records":[]}'
        assert len(parse_labels(buf.getvalue())) == 0

    def test_key_order_and_minified(self):
        index = DatasetIndex((_record(0),))
        buf = io.BytesIO()
        write_normalized(index, buf)
        text = buf.getvalue().decode()
        assert text.index('"image_id"') < text.index('"width"') < text.index('"height"')
        assert text.index('"height"') < text.index('"weather"') < text.index('"scene"')
        assert text.index('"scene"') < text.index('"timeofday"') < text.index('"polygons"')
        assert ": " not in text and ", " not in text

    def test_io_failure_wrapped(self):
        class Broken:
            def write(self, _):
                raise OSError("disk full")

        with pytest.raises(IoFailure):
            write_normalized(DatasetIndex(()), Broken())

    def test_condition_partition_sums_to_total(self, three_image_bdd):
        index = parse_labels(three_image_bdd)
        by_key: dict[ConditionKey, int] = {}
        for rec in index:
            key = stratify_key(rec)
            by_key[key] = by_key.get(key, 0) + 1
        assert sum(by_key.values()) == len(index)
        for axis in ("weather", "scene", "timeofday"):
            counts: dict[str, int] = {}
            for rec in index:
                tag = stratify_key(rec).axis(axis)
                counts[tag] = counts.get(tag, 0) + 1
            assert sum(counts.values()) == len(index)


@st.composite
def dataset_indices(draw):
    n = draw(st.integers(0, 4))
    records = []
    for i in range(n):
        n_labels = draw(st.integers(0, 3))
        labels = []
        for _ in range(n_labels):
            n_verts = draw(st.integers(3, 6))
            verts = tuple(
                (
                    draw(st.floats(-10, 1300, allow_nan=False, allow_infinity=False)),
                    draw(st.floats(-10, 730, allow_nan=False, allow_infinity=False)),
                )
                for _ in range(n_verts)
            )
            labels.append(PolygonLabel(class_id=draw(st.sampled_from((1, 2))), vertices=verts))
        records.append(
            ImageRecord(
                image_id=f"frame-{i:04d}",
                width=draw(st.integers(1, 2000)),
                height=draw(st.integers(1, 2000)),
                conditions=ConditionKey(
                    weather=draw(st.sampled_from(WEATHER_TAGS)),
                    scene=draw(st.sampled_from(SCENE_TAGS)),
                    timeofday=draw(st.sampled_from(TIMEOFDAY_TAGS)),
                ),
                labels=tuple(labels),
            )
        )
    return DatasetIndex(tuple(records))


class TestRoundTripProperty:
    @given(dataset_indices())
    @settings(max_examples=200, deadline=None)
    def test_write_parse_roundtrip(self, index):
        buf = io.BytesIO()
        write_normalized(index, buf)
        assert parse_labels(buf.getvalue()) == index
