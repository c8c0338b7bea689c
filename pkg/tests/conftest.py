import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def bdd_entry(name, labels=(), attributes=None):
    entry = {"name": name, "labels": list(labels)}
    if attributes is not None:
        entry["attributes"] = attributes
    return entry


def drivable_label(area_type, vertices, types=None):
    poly = {"vertices": [list(v) for v in vertices]}
    if types is not None:
        poly["types"] = types
    return {
        "category": "drivable area",
        "attributes": {"areaType": area_type},
        "poly2d": [poly],
    }


RECT = [(10.0, 10.0), (60.0, 10.0), (60.0, 40.0), (10.0, 40.0)]
TRI = [(5.0, 5.0), (30.0, 5.0), (5.0, 30.0)]


@pytest.fixture
def three_image_bdd() -> bytes:
    """Three images: two drivable polygons / lane marking only / one polygon."""
    data = [
        bdd_entry(
            "img-a.jpg",
            labels=[drivable_label("direct", RECT), drivable_label("alternative", TRI)],
            attributes={"weather": "rainy", "scene": "city street", "timeofday": "night"},
        ),
        bdd_entry(
            "img-b.jpg",
            labels=[{"category": "lane marking", "poly2d": [{"vertices": [[0, 0], [1, 1], [2, 0]]}]}],
            attributes={"weather": "clear", "scene": "highway", "timeofday": "daytime"},
        ),
        bdd_entry(
            "img-c.jpg",
            labels=[drivable_label("direct", TRI)],
        ),
    ]
    return json.dumps(data).encode()
