"""Independent brute-force oracles used to pin expected values.

These are deliberately naive, written from the metric definitions rather
than sharing any code path with the package. They stay slow and obvious.
"""

import math


def corners(box):
    """(category, cx, cy, w, h[, conf]) -> (x0, y0, x1, y1) in unit space."""
    _, cx, cy, w, h = box[:5]
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def iou_naive(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def greedy_match_naive(preds, gts, thresh):
    """preds: [(conf, corner_box)] for ONE image+category, in file order.
    Returns TP flags in the confidence-sorted order (ties keep file order).
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], i))
    taken = [False] * len(gts)
    flags = []
    for i in order:
        best_iou, best_j = -1.0, -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou_naive(preds[i][1], gt)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= thresh:
            taken[best_j] = True
            flags.append((preds[i][0], True))
        else:
            flags.append((preds[i][0], False))
    return flags


def ap_from_pr_points(flags_sorted, gt_count):
    """All-points interpolated AP computed directly from its definition.

    flags_sorted: [(conf, tp)] already in descending-confidence order
    across the whole category. Enumerates the PR point after every
    prediction, then integrates sum (r_k - r_{k-1}) * max_{j>=k} p_j.
    O(n^2) on purpose.
    """
    if gt_count == 0:
        return 0.0 if flags_sorted else None
    points = []
    tp = 0
    for k, (_, is_tp) in enumerate(flags_sorted, start=1):
        tp += int(is_tp)
        points.append((tp / gt_count, tp / k))
    ap = 0.0
    prev_r = 0.0
    for k, (r, _) in enumerate(points):
        if r > prev_r:
            best_p = max(p for rr, p in points[k:])
            ap += (r - prev_r) * best_p
            prev_r = r
    return ap


def detection_ap_naive(preds_by_image, gts_by_image, category, thresh):
    """AP for one category over many images, straight from the rules.

    preds_by_image / gts_by_image: {image_id: [(cat, cx, cy, w, h, conf?)]}.
    Predictions carry conf at index 5. Insertion order (dict order, then
    list order) is the tie-break everywhere, mirroring file order.
    """
    seqs = {}
    seq = 0
    for img, boxes in preds_by_image.items():
        for idx in range(len(boxes)):
            seqs[(img, idx)] = seq
            seq += 1

    scored = []  # (conf, seq, tp)
    gt_count = 0
    images = list(dict.fromkeys(list(preds_by_image) + list(gts_by_image)))
    for img in images:
        preds = [
            (b[5], corners(b), seqs[(img, idx)])
            for idx, b in enumerate(preds_by_image.get(img, []))
            if b[0] == category
        ]
        gts = [corners(b) for b in gts_by_image.get(img, []) if b[0] == category]
        gt_count += len(gts)
        taken = [False] * len(gts)
        for i in sorted(range(len(preds)), key=lambda i: (-preds[i][0], preds[i][2])):
            conf, box, s = preds[i]
            best_iou, best_j = -1.0, -1
            for j, gt in enumerate(gts):
                if not taken[j]:
                    v = iou_naive(box, gt)
                    if v > best_iou:
                        best_iou, best_j = v, j
            tp = best_j >= 0 and best_iou >= thresh
            if tp:
                taken[best_j] = True
            scored.append((conf, s, tp))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return ap_from_pr_points([(c, f) for c, _, f in scored], gt_count)


def micro_pr_naive(preds_by_image, gts_by_image, thresh):
    """Micro-averaged precision/recall over all categories at one threshold."""
    tp = 0
    n_pred = 0
    n_gt = 0
    categories = set()
    for boxes in list(preds_by_image.values()) + list(gts_by_image.values()):
        categories.update(b[0] for b in boxes)
    for cat in categories:
        for img in set(preds_by_image) | set(gts_by_image):
            preds = [
                (b[5], corners(b))
                for b in preds_by_image.get(img, [])
                if b[0] == cat
            ]
            gts = [corners(b) for b in gts_by_image.get(img, []) if b[0] == cat]
            flags = greedy_match_naive(preds, gts, thresh)
            tp += sum(1 for _, f in flags if f)
            n_pred += len(preds)
            n_gt += len(gts)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return precision, recall


def nearest_neighbors_naive(rows, ids, query, k):
    """Exact k-NN by squared L2, ties by lower id. rows: list of vectors."""
    scored = []
    for vec, ident in zip(rows, ids):
        d = math.fsum((a - b) * (a - b) for a, b in zip(vec, query))
        scored.append((d, ident))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(ident, d) for d, ident in scored[:k]]


def finite_difference_gradient(f, x, h=1e-4):
    """Central finite differences of a scalar function of a vector."""
    grad = []
    for i in range(len(x)):
        hi = list(x)
        lo = list(x)
        hi[i] += h
        lo[i] -= h
        grad.append((f(hi) - f(lo)) / (2 * h))
    return grad
