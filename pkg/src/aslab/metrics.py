"""Pixel and object-based evaluation of binary segmentations.

Pixel metrics come from the confusion counts. Object metrics decompose both
maps into 8-connected components, match reference/segmented objects through
over/under-segmentation errors, and compare matched pairs by contour
curvature and compactness (4*pi*area/perimeter^2).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError

MATCH_THRESHOLD = 0.3
CURV_SMOOTH_WINDOW = 5
ERROR_REPORT_SCALE = 100.0  # dataset-level E_curv / E_shape readability scale

# clockwise Moore neighbourhood, starting north
_NB8 = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _check_binary(m, name: str) -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(np.uint8)


def confusion_counts(pred, ref):
    """Exact (TP, FP, TN, FN) pixel counts."""
    p = _check_binary(pred, "pred")
    r = _check_binary(ref, "ref")
    if p.shape != r.shape:
        raise ShapeError(f"dimension mismatch {p.shape} vs {r.shape}")
    tp = int(np.count_nonzero(p & r))
    fp = int(np.count_nonzero(p & (1 - r)))
    fn = int(np.count_nonzero((1 - p) & r))
    tn = p.size - tp - fp - fn
    return tp, fp, tn, fn


@dataclass
class PixelMetrics:
    precision: float
    recall: float
    f1: float
    oa: float
    iou: float
    flags: tuple = ()


def pixel_metrics(counts) -> PixelMetrics:
    """P, R, F1, OA, IoU with explicit empty-denominator conventions.

    An empty denominator scores 1 when nothing was there to find or flag
    (the prediction is vacuously right) and 0 otherwise; either case is
    flagged in the result.
    """
    tp, fp, tn, fn = counts
    if min(counts) < 0:
        raise ValueError("confusion counts must be non-negative")
    n = tp + fp + tn + fn
    flags = []
    if tp + fp == 0:
        precision = 1.0 if fn == 0 else 0.0
        flags.append("precision_undefined")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 1.0 if fp == 0 else 0.0
        flags.append("recall_undefined")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0.0:
        f1 = 0.0
        flags.append("f1_undefined")
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    oa = (tp + tn) / n if n else 1.0
    iou = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    return PixelMetrics(precision, recall, f1, oa, iou, tuple(flags))


@dataclass
class SegObject:
    """One 8-connected foreground component."""

    id: int
    pixels: frozenset          # set of (row, col)
    area: int
    bbox: tuple                # (r0, c0, r1, c1) inclusive
    contour: tuple = ()        # closed vertex chain through pixel centers
    perimeter: float = 0.0


def connected_components(m) -> list:
    """8-connected components, ids assigned in raster order of first pixel."""
    arr = _check_binary(m, "map")
    H, W = arr.shape
    seen = np.zeros((H, W), dtype=bool)
    objs = []
    for r0, c0 in np.argwhere(arr):
        if seen[r0, c0]:
            continue
        q = deque([(int(r0), int(c0))])
        seen[r0, c0] = True
        pix = []
        while q:
            r, c = q.popleft()
            pix.append((r, c))
            for dr, dc in _NB8:
                rr, cc = r + dr, c + dc
                if 0 <= rr < H and 0 <= cc < W and arr[rr, cc] and not seen[rr, cc]:
                    seen[rr, cc] = True
                    q.append((rr, cc))
        rows = [p[0] for p in pix]
        cols = [p[1] for p in pix]
        obj = SegObject(id=len(objs) + 1, pixels=frozenset(pix), area=len(pix),
                        bbox=(min(rows), min(cols), max(rows), max(cols)))
        obj.contour = trace_contour(obj)
        obj.perimeter = perimeter(obj.contour)
        objs.append(obj)
    return objs


def _object_mask(obj: SegObject):
    r0, c0, r1, c1 = obj.bbox
    mask = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    for r, c in obj.pixels:
        mask[r - r0, c - c0] = True
    return mask, r0, c0


def trace_contour(obj: SegObject) -> tuple:
    """Moore-neighbor trace of the outer boundary through pixel centers.

    Returns a closed chain (first vertex == last). A single pixel yields a
    one-vertex chain.
    """
    mask, r0, c0 = _object_mask(obj)
    H, W = mask.shape

    def fg(r, c):
        return 0 <= r < H and 0 <= c < W and mask[r, c]

    start = None
    for r in range(H):
        for c in range(W):
            if mask[r, c]:
                start = (r, c)
                break
        if start:
            break
    if not any(fg(start[0] + dr, start[1] + dc) for dr, dc in _NB8):
        return ((start[0] + r0, start[1] + c0),)

    # backtrack starts west of the raster-first pixel, which is background
    b = (start[0], start[1] - 1)
    p = start
    chain = [start]
    state0 = (p, b)
    seen_states = set()
    while True:
        d = (b[0] - p[0], b[1] - p[1])
        i0 = _NB8.index(d)
        nxt = prev = None
        for k in range(1, 9):
            idx = (i0 + k) % 8
            q = (p[0] + _NB8[idx][0], p[1] + _NB8[idx][1])
            if fg(*q):
                nxt = q
                pd = _NB8[(idx - 1) % 8]
                prev = (p[0] + pd[0], p[1] + pd[1])
                break
        state = (nxt, prev)
        if state == state0 or state in seen_states:
            break
        seen_states.add(state)
        chain.append(nxt)
        p, b = nxt, prev
    chain.append(chain[0])
    return tuple((r + r0, c + c0) for r, c in chain)


def perimeter(contour) -> float:
    """Chain length: 1 per axis move, sqrt(2) per diagonal move.

    A single-pixel contour gets perimeter 1 by convention.
    """
    if len(contour) <= 1:
        return 1.0
    total = 0.0
    for (r1, c1), (r2, c2) in zip(contour[:-1], contour[1:]):
        total += math.sqrt((r1 - r2) ** 2 + (c1 - c2) ** 2)
    return total


def contour_is_degenerate(contour) -> bool:
    open_len = len(contour) - 1 if len(contour) > 1 else len(contour)
    return open_len < 8


def contour_curvature(contour) -> float:
    """Mean absolute turning rate along the contour, in radians per pixel.

    The closed chain is smoothed with a cyclic centered moving average
    (window 5); turning angles are measured between chords spanning
    k = clamp(n/16, 1, 12) vertices and divided by the mean chord length,
    which keeps the estimate near 1/r on rasterized circles. Degenerate
    contours (< 8 vertices) score 0.
    """
    pts = list(contour[:-1]) if len(contour) > 1 and contour[0] == contour[-1] \
        else list(contour)
    n = len(pts)
    if n < 8:
        return 0.0
    arr = np.asarray(pts, dtype=float)
    hw = CURV_SMOOTH_WINDOW // 2
    idx = (np.arange(n)[:, None] + np.arange(-hw, hw + 1)[None, :]) % n
    sm = arr[idx].mean(axis=1)
    k = max(1, min(12, n // 16))
    fwd = sm[(np.arange(n) + k) % n] - sm
    bwd = sm - sm[(np.arange(n) - k) % n]
    la = np.hypot(bwd[:, 0], bwd[:, 1])
    lb = np.hypot(fwd[:, 0], fwd[:, 1])
    ml = 0.5 * (la + lb)
    cross = bwd[:, 0] * fwd[:, 1] - bwd[:, 1] * fwd[:, 0]
    dot = bwd[:, 0] * fwd[:, 0] + bwd[:, 1] * fwd[:, 1]
    ang = np.abs(np.arctan2(cross, dot))
    ok = ml > 1e-12
    vals = np.where(ok, ang / np.where(ok, ml, 1.0), 0.0)
    return float(vals.mean())


def compactness(obj: SegObject) -> float:
    """4*pi*area/perimeter^2; 1 for an ideal circle, pi/4 for an ideal square."""
    return 4.0 * math.pi * obj.area / (obj.perimeter ** 2)


def overlap_errors(ref: SegObject, seg: SegObject):
    """(e_os, e_us): 1 - |intersection| / |ref| and 1 - |intersection| / |seg|."""
    inter = len(ref.pixels & seg.pixels)
    return 1.0 - inter / ref.area, 1.0 - inter / seg.area


@dataclass
class MatchPair:
    ref_id: int
    seg_id: int
    e_os: float
    e_us: float
    matched: bool


def _bbox_overlap(a, b) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def match_objects(refs, segs, t: float = MATCH_THRESHOLD) -> list:
    """Score every pixel-overlapping (ref, seg) pair; matched iff both
    errors are <= t. Candidates are prefiltered by bbox overlap."""
    if not 0.0 < t < 1.0:
        raise ValueError("match threshold must lie in (0,1)")
    pairs = []
    for ref in refs:
        for seg in segs:
            if not _bbox_overlap(ref.bbox, seg.bbox):
                continue
            e_os, e_us = overlap_errors(ref, seg)
            if e_os >= 1.0 and e_us >= 1.0:
                continue  # no pixel overlap
            pairs.append(MatchPair(ref_id=ref.id, seg_id=seg.id, e_os=e_os,
                                   e_us=e_us,
                                   matched=e_os <= t and e_us <= t))
    return pairs


def matching_rate(refs, pairs):
    """Matched references over all references; None when there are no refs."""
    if not refs:
        return None
    matched_refs = {p.ref_id for p in pairs if p.matched}
    return len(matched_refs) / len(refs)


def curvature_error(ref: SegObject, matched: SegObject) -> float:
    return abs(contour_curvature(matched.contour)
               - contour_curvature(ref.contour))


def shape_error(ref: SegObject, matched: SegObject) -> float:
    return abs(compactness(matched) - compactness(ref))


@dataclass
class MetricsReport:
    oa: float
    precision: float
    recall: float
    f1: float
    iou: float
    mr: float = None            # None when the reference map has no objects
    e_curv: float = None        # scaled mean |curvature diff| over matches
    e_shape: float = None       # scaled mean |compactness diff| over matches
    n_ref_objects: int = 0
    n_seg_objects: int = 0
    n_matched: int = 0
    counts: tuple = (0, 0, 0, 0)
    sum_curv_diff: float = 0.0  # unscaled, for dataset aggregation
    sum_shape_diff: float = 0.0
    flags: tuple = ()


def evaluate_pair(pred_prob, ref, threshold: float = 0.5) -> MetricsReport:
    """All pixel and object metrics for one probability map / label pair."""
    from .train import binarize

    prob = np.asarray(pred_prob, dtype=np.float64)
    ref_arr = _check_binary(ref, "ref")
    if prob.shape != ref_arr.shape:
        raise ShapeError(f"dimension mismatch {prob.shape} vs {ref_arr.shape}")
    pred = binarize(prob, threshold)
    return evaluate_binary_pair(pred, ref_arr)


def evaluate_binary_pair(pred, ref) -> MetricsReport:
    counts = confusion_counts(pred, ref)
    pm = pixel_metrics(counts)
    refs = connected_components(ref)
    segs = connected_components(pred)
    pairs = match_objects(refs, segs)
    mr = matching_rate(refs, pairs)

    ref_by_id = {o.id: o for o in refs}
    seg_by_id = {o.id: o for o in segs}
    flags = list(pm.flags)
    sum_curv = sum_shape = 0.0
    n_matched = 0
    for p in pairs:
        if not p.matched:
            continue
        ro, so = ref_by_id[p.ref_id], seg_by_id[p.seg_id]
        if contour_is_degenerate(ro.contour) or contour_is_degenerate(so.contour):
            flags.append("degenerate_contour")
        sum_curv += curvature_error(ro, so)
        sum_shape += shape_error(ro, so)
        n_matched += 1

    e_curv = ERROR_REPORT_SCALE * sum_curv / n_matched if n_matched else None
    e_shape = ERROR_REPORT_SCALE * sum_shape / n_matched if n_matched else None
    return MetricsReport(oa=pm.oa, precision=pm.precision, recall=pm.recall,
                         f1=pm.f1, iou=pm.iou, mr=mr, e_curv=e_curv,
                         e_shape=e_shape, n_ref_objects=len(refs),
                         n_seg_objects=len(segs), n_matched=n_matched,
                         counts=counts, sum_curv_diff=sum_curv,
                         sum_shape_diff=sum_shape, flags=tuple(flags))


def aggregate_reports(reports) -> MetricsReport:
    """Micro-average: pixel counts summed, MR and errors pooled over objects."""
    counts = tuple(int(sum(r.counts[i] for r in reports)) for i in range(4))
    pm = pixel_metrics(counts)
    n_ref = sum(r.n_ref_objects for r in reports)
    n_seg = sum(r.n_seg_objects for r in reports)
    n_matched = sum(r.n_matched for r in reports)
    sum_curv = sum(r.sum_curv_diff for r in reports)
    sum_shape = sum(r.sum_shape_diff for r in reports)
    flags = tuple(sorted({f for r in reports for f in r.flags}))
    return MetricsReport(
        oa=pm.oa, precision=pm.precision, recall=pm.recall, f1=pm.f1,
        iou=pm.iou, mr=(n_matched / n_ref if n_ref else None),
        e_curv=(ERROR_REPORT_SCALE * sum_curv / n_matched if n_matched else None),
        e_shape=(ERROR_REPORT_SCALE * sum_shape / n_matched if n_matched else None),
        n_ref_objects=n_ref, n_seg_objects=n_seg, n_matched=n_matched,
        counts=counts, sum_curv_diff=sum_curv, sum_shape_diff=sum_shape,
        flags=flags)


def oa_threshold_curve(pred_prob, ref, thresholds):
    """(threshold, OA) per threshold; thresholds must lie in (0,1)."""
    from .train import binarize

    prob = np.asarray(pred_prob, dtype=np.float64)
    ref_arr = _check_binary(ref, "ref")
    out = []
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValueError(f"threshold {t} outside (0,1)")
        counts = confusion_counts(binarize(prob, t), ref_arr)
        out.append((float(t), pixel_metrics(counts).oa))
    return out


CSV_HEADER = ("image,oa,precision,recall,f1,iou,mr,e_curv,e_shape,"
              "n_ref,n_seg,n_matched")


def _fmt(v) -> str:
    return "" if v is None else f"{v:.10g}"


def report_row(name: str, r: MetricsReport) -> str:
    return ",".join([name, _fmt(r.oa), _fmt(r.precision), _fmt(r.recall),
                     _fmt(r.f1), _fmt(r.iou), _fmt(r.mr), _fmt(r.e_curv),
                     _fmt(r.e_shape), str(r.n_ref_objects),
                     str(r.n_seg_objects), str(r.n_matched)])


def reports_to_csv(named_reports) -> str:
    """CSV with one row per image and a trailing micro-averaged TOTAL row."""
    lines = [CSV_HEADER]
    reports = []
    for name, rep in named_reports:
        lines.append(report_row(name, rep))
        reports.append(rep)
    lines.append(report_row("TOTAL", aggregate_reports(reports)))
    return "\n".join(lines) + "\n"
