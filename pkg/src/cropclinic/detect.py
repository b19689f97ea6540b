"""Lesion detection: YOLO-format parsing, a pluggable detection backend,
and the precision/recall/AP/mAP metric engine.

The detector itself is a backend behind `detect()`; the shipped reference
backend serves precomputed predictions from a TSV file (one line per box:
image_id, category, confidence, cx, cy, w, h). Boxes are center/size
normalized to image dimensions; IoU is computed in normalized space,
which equals pixel-space IoU because axis scaling cancels in the ratio.

AP uses all-points interpolation (precision envelope). mAP@50-95 averages
the per-category mean AP over IoU thresholds 0.50, 0.55, ... 0.95.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .core import DataError, FormatError, ImageRef

_COORD_SLACK = 1e-6

Corners = tuple[float, float, float, float]


@dataclass(frozen=True)
class BBox:
    category: int
    cx: float
    cy: float
    w: float
    h: float
    confidence: Optional[float] = None

    def __post_init__(self):
        if self.category < 0:
            raise DataError(f"negative category id {self.category}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise DataError(f"box center ({self.cx}, {self.cy}) outside [0, 1]")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise DataError(f"box size ({self.w}, {self.h}) outside (0, 1]")
        x0, y0, x1, y1 = self.unit_corners()
        if min(x0, y0) < -_COORD_SLACK or max(x1, y1) > 1.0 + _COORD_SLACK:
            raise DataError("box extends beyond the image")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise DataError(f"confidence {self.confidence} outside [0, 1]")

    def unit_corners(self) -> Corners:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )


def parse_yolo_line(line: str) -> BBox:
    """Parse `<class_id> <x_center> <y_center> <width> <height>`."""
    fields = line.split()
    if len(fields) != 5:
        raise FormatError(f"expected 5 fields, got {len(fields)}: {line!r}")
    try:
        category = int(fields[0])
    except ValueError:
        raise FormatError(f"non-numeric class id {fields[0]!r}") from None
    try:
        cx, cy, w, h = (float(v) for v in fields[1:])
    except ValueError:
        raise FormatError(f"non-numeric coordinate in {line!r}") from None
    if not all(math.isfinite(v) for v in (cx, cy, w, h)):
        raise FormatError(f"non-finite coordinate in {line!r}")
    try:
        return BBox(category, cx, cy, w, h)
    except DataError as exc:
        raise FormatError(str(exc)) from None


def format_yolo_line(box: BBox) -> str:
    return f"{box.category} {box.cx:.6f} {box.cy:.6f} {box.w:.6f} {box.h:.6f}"


def to_corners(box: BBox, img_w: int, img_h: int) -> Corners:
    """Denormalize to pixel corners (x0, y0, x1, y1)."""
    if img_w <= 0 or img_h <= 0:
        raise DataError("image dimensions must be positive")
    x0, y0, x1, y1 = box.unit_corners()
    return (x0 * img_w, y0 * img_h, x1 * img_w, y1 * img_h)


def from_corners(category: int, corners: Corners, img_w: int, img_h: int,
                 confidence: Optional[float] = None) -> BBox:
    x0, y0, x1, y1 = corners
    return BBox(
        category,
        cx=(x0 + x1) / (2 * img_w),
        cy=(y0 + y1) / (2 * img_h),
        w=(x1 - x0) / img_w,
        h=(y1 - y0) / img_h,
        confidence=confidence,
    )


def iou(a: Corners, b: Corners) -> float:
    """Intersection over union of two corner boxes; 0 when the union is empty."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(0.0, ix) * max(0.0, iy)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class PredictionFlag:
    image_id: str
    category: int
    confidence: float
    seq: int  # global insertion order (file order)
    tp: bool


@dataclass
class MatchResult:
    flags: list[PredictionFlag]  # in insertion order
    unmatched_gt: int


BoxesByImage = dict[str, list[BBox]]


def match_detections(preds: BoxesByImage, gts: BoxesByImage,
                     iou_thresh: float) -> MatchResult:
    """Greedy TP/FP assignment within each (image, category): predictions
    in descending confidence (ties by insertion order) each claim the
    unmatched ground truth of maximal IoU when that IoU >= iou_thresh."""
    seqs: dict[tuple[str, int], int] = {}
    seq = 0
    for img, boxes in preds.items():
        for idx in range(len(boxes)):
            seqs[(img, idx)] = seq
            seq += 1

    flags: list[PredictionFlag] = []
    total_gt = sum(len(v) for v in gts.values())
    tp_count = 0
    images = list(dict.fromkeys(list(preds) + list(gts)))
    for img in images:
        img_preds = preds.get(img, [])
        img_gts = gts.get(img, [])
        categories = sorted(
            {b.category for b in img_preds} | {b.category for b in img_gts}
        )
        for cat in categories:
            cat_preds = [
                (box, seqs[(img, idx)])
                for idx, box in enumerate(img_preds)
                if box.category == cat
            ]
            cat_gts = [box.unit_corners() for box in img_gts if box.category == cat]
            taken = [False] * len(cat_gts)
            for box, s in sorted(cat_preds, key=lambda t: (-_conf(t[0]), t[1])):
                corners_p = box.unit_corners()
                best_iou, best_j = -1.0, -1
                for j, g in enumerate(cat_gts):
                    if taken[j]:
                        continue
                    v = iou(corners_p, g)
                    if v > best_iou:
                        best_iou, best_j = v, j
                hit = best_j >= 0 and best_iou >= iou_thresh
                if hit:
                    taken[best_j] = True
                    tp_count += 1
                flags.append(PredictionFlag(img, cat, _conf(box), s, hit))
    flags.sort(key=lambda f: f.seq)
    return MatchResult(flags, total_gt - tp_count)


def _conf(box: BBox) -> float:
    if box.confidence is None:
        raise DataError("prediction box is missing a confidence")
    return box.confidence


def average_precision(records: Sequence[tuple[float, bool]],
                      gt_count: int) -> Optional[float]:
    """Area under the all-points precision envelope.

    records: (confidence, is_tp) pairs; sorted here by descending
    confidence, ties keeping the given order. Returns 0.0 when there are
    predictions but no ground truth, and None (undefined; caller skips
    the category) when both sides are empty.
    """
    if gt_count < 0:
        raise DataError("gt_count must be >= 0")
    if gt_count == 0:
        return 0.0 if records else None
    ordered = sorted(records, key=lambda r: -r[0])
    tp_cum = 0
    recalls = []
    precisions = []
    for k, (_, is_tp) in enumerate(ordered, start=1):
        tp_cum += int(is_tp)
        recalls.append(tp_cum / gt_count)
        precisions.append(tp_cum / k)
    # precision envelope: at each point, the max precision at >= that recall
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, precisions):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return ap


DEFAULT_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))


@dataclass
class DetectionMetrics:
    precision: float
    recall: float
    map50: float
    map50_95: float
    per_category_ap: dict[int, float] = field(default_factory=dict)  # AP at IoU 0.5


def evaluate(preds: BoxesByImage, gts: BoxesByImage,
             thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
             conf_cutoff: Optional[float] = None) -> DetectionMetrics:
    """Full metric sweep. map50 averages per-category AP at IoU 0.5;
    map50_95 additionally averages over the threshold grid. Precision and
    recall are micro-averaged over all predictions at IoU 0.5; an optional
    confidence cutoff drops low-confidence predictions first."""
    if sum(len(v) for v in gts.values()) == 0:
        raise DataError("ground truth is empty")
    if conf_cutoff is not None:
        preds = {
            img: [b for b in boxes if _conf(b) >= conf_cutoff]
            for img, boxes in preds.items()
        }
    thresholds = list(thresholds)
    if 0.5 not in thresholds:
        raise DataError("threshold grid must include 0.5")

    categories = sorted(
        {b.category for boxes in gts.values() for b in boxes}
        | {b.category for boxes in preds.values() for b in boxes}
    )
    gt_counts = {
        cat: sum(1 for boxes in gts.values() for b in boxes if b.category == cat)
        for cat in categories
    }

    ap_by_thresh: dict[float, dict[int, float]] = {}
    pr_at_50: tuple[float, float] = (0.0, 0.0)
    for thresh in thresholds:
        match = match_detections(preds, gts, thresh)
        per_cat: dict[int, float] = {}
        for cat in categories:
            records = [(f.confidence, f.tp) for f in match.flags if f.category == cat]
            ap = average_precision(records, gt_counts[cat])
            if ap is not None:
                per_cat[cat] = ap
        ap_by_thresh[thresh] = per_cat
        if thresh == 0.5:
            tp = sum(1 for f in match.flags if f.tp)
            n_pred = len(match.flags)
            n_gt = sum(gt_counts.values())
            pr_at_50 = (tp / n_pred if n_pred else 0.0, tp / n_gt)

    map50 = _mean(ap_by_thresh[0.5].values())
    map50_95 = _mean(_mean(per_cat.values()) for per_cat in ap_by_thresh.values())
    return DetectionMetrics(
        precision=pr_at_50[0],
        recall=pr_at_50[1],
        map50=map50,
        map50_95=map50_95,
        per_category_ap=dict(ap_by_thresh[0.5]),
    )


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


@dataclass
class DetectionResult:
    image_id: str
    boxes: list[BBox]
    backend: str
    no_predictions: bool = False

    def __post_init__(self):
        for box in self.boxes:
            _conf(box)


def load_ground_truth_dir(path: Union[str, Path]) -> BoxesByImage:
    """One YOLO .txt per image; the file stem is the image id."""
    path = Path(path)
    if not path.is_dir():
        raise FormatError(f"ground-truth directory not found: {path}")
    out: BoxesByImage = {}
    for file in sorted(path.glob("*.txt")):
        boxes = []
        for lineno, line in enumerate(
            file.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                boxes.append(parse_yolo_line(line))
            except FormatError as exc:
                raise FormatError(f"{file}:{lineno}: {exc}") from None
        out[file.stem] = boxes
    return out


def load_predictions(path: Union[str, Path]) -> BoxesByImage:
    """TSV lines `image_id<TAB>category<TAB>confidence<TAB>cx<TAB>cy<TAB>w<TAB>h`."""
    out: BoxesByImage = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 7:
            raise FormatError(f"{path}:{lineno}: expected 7 tab-separated fields")
        image_id = fields[0]
        try:
            category = int(fields[1])
            confidence, cx, cy, w, h = (float(v) for v in fields[2:])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from None
        try:
            box = BBox(category, cx, cy, w, h, confidence)
        except DataError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        out.setdefault(image_id, []).append(box)
    return out


class FilePredictionsBackend:
    """Reference detection backend: precomputed predictions keyed by image id."""

    name = "file"

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._by_image = load_predictions(self.path)

    def detect(self, image: ImageRef) -> DetectionResult:
        key = image.ref or ""
        boxes = self._by_image.get(key)
        if boxes is None and key:
            boxes = self._by_image.get(Path(key).stem)
        if boxes is None:
            return DetectionResult(key, [], self.name, no_predictions=True)
        return DetectionResult(key, list(boxes), self.name)
