"""Detection matching, precision-recall curves, interpolated AP, and reports.

AP uses all-point interpolation: every precision value is replaced by the
maximum precision at any equal-or-higher recall, and the resulting step
function is integrated exactly over recall. The integration runs on exact
rationals (true-positive prefix counts over integer denominators), so small
hand-checkable cases produce the textbook fractions bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, Iterator, Mapping, Sequence

from .dataset import CLASS_NAMES, CONDITION_AXES, DatasetIndex, ImageRecord
from .errors import (
    GeometryMismatch,
    MalformedInput,
    NoGroundTruth,
    SchemaViolation,
)
from .geometry import (
    BitMask,
    Box,
    RleMask,
    box_iou,
    mask_iou,
    mask_to_bbox,
    rasterize_polygon,
    rle_decode,
)

__all__ = [
    "Detection",
    "MatchConfig",
    "MatchResult",
    "PrCurve",
    "StratumResult",
    "EvalReport",
    "match_detections",
    "precision_recall",
    "average_precision",
    "mean_ap",
    "evaluate",
    "report_to_json",
    "report_to_csv",
    "read_predictions",
    "write_predictions",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    """One predicted instance; geometry is a Box or an RLE-encoded mask."""

    image_id: str
    class_id: int
    score: float
    geometry: Box | RleMask

    def __post_init__(self) -> None:
        if self.class_id not in CLASS_NAMES:
            raise ValueError(f"class_id must be 1 or 2, got {self.class_id}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if not isinstance(self.geometry, (Box, RleMask)):
            raise TypeError("geometry must be a Box or RleMask")


@dataclass(frozen=True)
class MatchConfig:
    """How detections are matched to ground truth."""

    iou_threshold: float = 0.5
    iou_kind: str = "box"

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if self.iou_kind not in ("box", "mask"):
            raise ValueError(f"iou_kind must be 'box' or 'mask', got {self.iou_kind!r}")


@dataclass(frozen=True)
class MatchResult:
    """Per-detection TP flags (input order) and per-ground-truth matched flags."""

    det_is_tp: tuple[bool, ...]
    gt_matched: tuple[bool, ...]


def _det_geometry(det: Detection, record: ImageRecord, kind: str) -> Box | BitMask | None:
    """Detection geometry in the requested kind; None for an empty mask."""
    if isinstance(det.geometry, RleMask):
        rle = det.geometry
        if (rle.width, rle.height) != (record.width, record.height):
            raise GeometryMismatch(
                f"detection mask {rle.width}x{rle.height} does not match "
                f"image {record.image_id} ({record.width}x{record.height})"
            )
        mask = rle_decode(rle)
        return mask if kind == "mask" else mask_to_bbox(mask)
    if kind == "mask":
        raise GeometryMismatch(
            f"iou_kind 'mask' needs mask geometry, detection on {det.image_id} has only a box"
        )
    return det.geometry


def _pair_iou(a, b) -> float:
    if a is None or b is None:
        return 0.0
    if isinstance(a, Box):
        return box_iou(a, b)
    return mask_iou(a, b)


def match_detections(
    dets: Sequence[Detection], record: ImageRecord, cfg: MatchConfig
) -> MatchResult:
    """Greedily match one image's detections against its ground truth.

    Detections are processed in descending score order (ties: lower input
    index first). Each detection matches the unmatched same-class ground
    truth with the highest IoU, provided that IoU reaches the threshold;
    otherwise it is a false positive. Each ground truth matches at most once.

    For ``iou_kind == "box"``, mask detections are converted through their
    tight bounding box, and ground-truth polygons through the bounding box
    of their rasterized mask, so both kinds are derived from the same bitmap.
    """
    for det in dets:
        if det.image_id != record.image_id:
            raise ValueError(
                f"detection for {det.image_id!r} matched against record {record.image_id!r}"
            )
    gt_masks = [rasterize_polygon(label, record.width, record.height) for label in record.labels]
    if cfg.iou_kind == "box":
        gt_geoms: list[Box | BitMask | None] = [mask_to_bbox(m) for m in gt_masks]
    else:
        gt_geoms = list(gt_masks)
    det_geoms = [_det_geometry(det, record, cfg.iou_kind) for det in dets]

    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    det_is_tp = [False] * len(dets)
    gt_matched = [False] * len(record.labels)
    for i in order:
        best_iou = 0.0
        best_gt = -1
        for g, label in enumerate(record.labels):
            if gt_matched[g] or label.class_id != dets[i].class_id:
                continue
            iou = _pair_iou(det_geoms[i], gt_geoms[g])
            if iou > best_iou:
                best_iou = iou
                best_gt = g
        if best_gt >= 0 and best_iou >= cfg.iou_threshold:
            det_is_tp[i] = True
            gt_matched[best_gt] = True
    return MatchResult(det_is_tp=tuple(det_is_tp), gt_matched=tuple(gt_matched))


@dataclass(frozen=True)
class PrCurve:
    """Precision-recall sweep for one class.

    ``points`` holds (recall, precision) after each detection in descending
    score order; ``tp_cumulative`` keeps the exact integer prefix counts the
    floats were derived from.
    """

    points: tuple[tuple[float, float], ...]
    n_gt: int
    tp_cumulative: tuple[int, ...] = ()


def precision_recall(
    scores: Sequence[float], tp_flags: Sequence[bool], n_gt: int
) -> PrCurve:
    """Global descending-score sweep over one class's detections.

    After the k-th detection, precision is TP_k / k and recall TP_k / n_gt.
    With no ground truth the curve is empty.
    """
    if len(scores) != len(tp_flags):
        raise ValueError("scores and tp_flags must have the same length")
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    if n_gt == 0:
        return PrCurve(points=(), n_gt=0)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    points = []
    tp_cum = []
    tp = 0
    for k, i in enumerate(order, start=1):
        if tp_flags[i]:
            tp += 1
        tp_cum.append(tp)
        points.append((tp / n_gt, tp / k))
    return PrCurve(points=tuple(points), n_gt=n_gt, tp_cumulative=tuple(tp_cum))


def average_precision(curve: PrCurve) -> float | None:
    """Area under the right-max interpolated precision-recall curve.

    Each recall value takes the maximum precision at that recall or higher,
    and the step function is integrated exactly. Returns None when there is
    no ground truth (AP undefined), 0.0 for no detections.
    """
    if curve.n_gt == 0:
        return None
    m = len(curve.tp_cumulative)
    if m == 0:
        return 0.0
    interp = [Fraction(0)] * m
    running = Fraction(0)
    for k in range(m, 0, -1):
        p = Fraction(curve.tp_cumulative[k - 1], k)
        if p > running:
            running = p
        interp[k - 1] = running
    ap = Fraction(0)
    prev_tp = 0
    for k in range(1, m + 1):
        tp = curve.tp_cumulative[k - 1]
        if tp > prev_tp:
            ap += Fraction(tp - prev_tp, curve.n_gt) * interp[k - 1]
            prev_tp = tp
    return float(ap)


def mean_ap(per_class: Mapping[int, float | None]) -> float:
    """Unweighted mean of the defined per-class APs."""
    defined = [v for v in per_class.values() if v is not None]
    if not defined:
        raise NoGroundTruth("no class has any ground-truth instance")
    return sum(defined) / len(defined)


@dataclass(frozen=True)
class StratumResult:
    map: float | None
    n_images: int
    n_gt: int
    per_class_ap: Mapping[int, float | None]


@dataclass(frozen=True)
class EvalReport:
    """Overall and condition-stratified evaluation results."""

    config: MatchConfig
    strict_orphans: bool
    n_images: int
    n_gt: int
    n_detections: int
    orphan_detections: int
    per_class_ap: Mapping[int, float | None]
    map: float
    strata: Mapping[str, Mapping[str, StratumResult]]


def _class_sweep(
    entries: Mapping[int, list[tuple[float, bool]]], n_gt: Mapping[int, int]
) -> dict[int, float | None]:
    """Per-class AP from (score, tp) lists already in global input order."""
    per_class: dict[int, float | None] = {}
    for cls in sorted(CLASS_NAMES):
        if n_gt.get(cls, 0) == 0:
            per_class[cls] = None
            continue
        scores = [s for s, _ in entries.get(cls, [])]
        flags = [t for _, t in entries.get(cls, [])]
        per_class[cls] = average_precision(precision_recall(scores, flags, n_gt[cls]))
    return per_class


def evaluate(
    index: DatasetIndex,
    dets: Sequence[Detection],
    cfg: MatchConfig = MatchConfig(),
    *,
    strict_orphans: bool = False,
    threads: int = 1,
) -> EvalReport:
    """Match, sweep, and stratify: the full evaluation pipeline.

    Detections whose image_id is not in the index are warned about and
    dropped, or counted as false positives of their class when
    ``strict_orphans`` is set. Stratified results re-rank detections within
    each condition stratum. Matching is independent per image and can run
    on up to ``threads`` workers; results do not depend on thread count.
    """
    by_image: dict[str, list[int]] = {}
    for i, det in enumerate(dets):
        by_image.setdefault(det.image_id, []).append(i)
    known = {r.image_id for r in index.records}
    orphans = [i for i, det in enumerate(dets) if det.image_id not in known]
    if orphans and not strict_orphans:
        log.warning("dropping %d detections for images not in the index", len(orphans))

    records = index.records

    def _match(record: ImageRecord) -> MatchResult:
        idxs = by_image.get(record.image_id, [])
        return match_detections([dets[i] for i in idxs], record, cfg)

    if threads > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_match, records))
    else:
        results = [_match(r) for r in records]

    det_is_tp = [False] * len(dets)
    for record, result in zip(records, results):
        for local, i in enumerate(by_image.get(record.image_id, [])):
            det_is_tp[i] = result.det_is_tp[local]

    def _collect(
        image_ids: set[str], include_orphans: bool
    ) -> tuple[dict[int, list[tuple[float, bool]]], dict[int, int]]:
        entries: dict[int, list[tuple[float, bool]]] = {c: [] for c in sorted(CLASS_NAMES)}
        for i, det in enumerate(dets):
            if det.image_id in image_ids:
                entries[det.class_id].append((det.score, det_is_tp[i]))
            elif include_orphans and det.image_id not in known:
                entries[det.class_id].append((det.score, False))
        n_gt = {c: 0 for c in sorted(CLASS_NAMES)}
        for record in records:
            if record.image_id in image_ids:
                for label in record.labels:
                    n_gt[label.class_id] += 1
        return entries, n_gt

    all_ids = {r.image_id for r in records}
    entries, n_gt = _collect(all_ids, include_orphans=strict_orphans)
    total_gt = sum(n_gt.values())
    if total_gt == 0:
        raise NoGroundTruth("index has no labeled records to evaluate against")
    per_class = _class_sweep(entries, n_gt)
    overall_map = mean_ap(per_class)

    strata: dict[str, dict[str, StratumResult]] = {}
    for axis in CONDITION_AXES:
        by_tag: dict[str, list[ImageRecord]] = {}
        for record in records:
            by_tag.setdefault(record.conditions.axis(axis), []).append(record)
        axis_results: dict[str, StratumResult] = {}
        for tag in sorted(by_tag):
            tag_ids = {r.image_id for r in by_tag[tag]}
            tag_entries, tag_gt = _collect(tag_ids, include_orphans=False)
            tag_per_class = _class_sweep(tag_entries, tag_gt)
            defined = [v for v in tag_per_class.values() if v is not None]
            axis_results[tag] = StratumResult(
                map=(sum(defined) / len(defined)) if defined else None,
                n_images=len(by_tag[tag]),
                n_gt=sum(tag_gt.values()),
                per_class_ap=tag_per_class,
            )
        strata[axis] = axis_results

    return EvalReport(
        config=cfg,
        strict_orphans=strict_orphans,
        n_images=len(records),
        n_gt=total_gt,
        n_detections=len(dets),
        orphan_detections=len(orphans),
        per_class_ap=per_class,
        map=overall_map,
        strata=strata,
    )


def _ap_by_name(per_class: Mapping[int, float | None]) -> dict[str, float | None]:
    return {CLASS_NAMES[c]: per_class[c] for c in sorted(CLASS_NAMES)}


def report_to_json(report: EvalReport, stamp: str | None = None) -> str:
    """Serialize a report to deterministic minified JSON (no timestamps unless given)."""
    doc: dict = {
        "config": {
            "iou_threshold": report.config.iou_threshold,
            "iou_kind": report.config.iou_kind,
            "strict_orphans": report.strict_orphans,
            "stratum_ranking": "re-ranked within stratum",
        },
        "n_images": report.n_images,
        "n_gt": report.n_gt,
        "n_detections": report.n_detections,
        "orphan_detections": report.orphan_detections,
        "per_class_ap": _ap_by_name(report.per_class_ap),
        "map": report.map,
        "strata": {
            axis: {
                tag: {
                    "map": res.map,
                    "n_images": res.n_images,
                    "n_gt": res.n_gt,
                    "per_class_ap": _ap_by_name(res.per_class_ap),
                }
                for tag, res in sorted(report.strata[axis].items())
            }
            for axis in CONDITION_AXES
            if axis in report.strata
        },
    }
    if stamp is not None:
        doc["generated_at"] = stamp
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def report_to_csv(report: EvalReport) -> str:
    """Flat CSV: axis,tag,n_images,n_gt,ap_direct,ap_alternative,map."""

    def fmt(v: float | None) -> str:
        return "" if v is None else repr(v)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis", "tag", "n_images", "n_gt", "ap_direct", "ap_alternative", "map"])
    named = _ap_by_name(report.per_class_ap)
    writer.writerow(
        ["overall", "all", report.n_images, report.n_gt,
         fmt(named["direct"]), fmt(named["alternative"]), fmt(report.map)]
    )
    for axis in CONDITION_AXES:
        for tag, res in sorted(report.strata.get(axis, {}).items()):
            tag_named = _ap_by_name(res.per_class_ap)
            writer.writerow(
                [axis, tag, res.n_images, res.n_gt,
                 fmt(tag_named["direct"]), fmt(tag_named["alternative"]), fmt(res.map)]
            )
    return buf.getvalue()


def _detection_from_obj(n: int, obj: object) -> Detection:
    if not isinstance(obj, Mapping):
        raise SchemaViolation(f"prediction line {n}: expected an object")
    for key in ("image_id", "class_id", "score"):
        if key not in obj:
            raise SchemaViolation(f"prediction line {n}: missing required field {key!r}")
    has_bbox = "bbox" in obj
    has_rle = "rle" in obj
    if has_bbox == has_rle:
        raise SchemaViolation(f"prediction line {n}: exactly one of 'bbox' or 'rle' required")
    try:
        if has_bbox:
            bbox = obj["bbox"]
            if not isinstance(bbox, list) or len(bbox) != 4:
                raise SchemaViolation(f"prediction line {n}: bbox must be [x, y, w, h]")
            geometry: Box | RleMask = Box(*(float(v) for v in bbox))
        else:
            rle = obj["rle"]
            if not isinstance(rle, Mapping):
                raise SchemaViolation(f"prediction line {n}: rle must be an object")
            geometry = RleMask(
                width=int(rle["width"]),
                height=int(rle["height"]),
                runs=tuple(int(r) for r in rle["runs"]),
            )
        return Detection(
            image_id=str(obj["image_id"]),
            class_id=int(obj["class_id"]),
            score=float(obj["score"]),
            geometry=geometry,
        )
    except SchemaViolation:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"prediction line {n}: {exc}") from exc


def read_predictions(source: Iterable[bytes | str]) -> Iterator[Detection]:
    """Stream detections from JSON Lines, one object per line.

    Accepts any iterable of lines (an open file works), so arbitrarily large
    prediction files never need to fit in memory.
    """
    for n, line in enumerate(source, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"prediction line {n}: invalid JSON: {exc.msg}") from exc
        yield _detection_from_obj(n, obj)


def write_predictions(dets: Iterable[Detection], sink: IO[str]) -> int:
    """Write detections as JSON Lines; returns the number written."""
    count = 0
    for det in dets:
        obj: dict = {
            "image_id": det.image_id,
            "class_id": det.class_id,
            "score": det.score,
        }
        if isinstance(det.geometry, Box):
            g = det.geometry
            obj["bbox"] = [g.x, g.y, g.w, g.h]
        else:
            obj["rle"] = {
                "width": det.geometry.width,
                "height": det.geometry.height,
                "runs": list(det.geometry.runs),
            }
        sink.write(json.dumps(obj, separators=(",", ":"), ensure_ascii=False))
        sink.write("\n")
        count += 1
    return count
