"""Anomaly-detection metrics: point-adjusted, affiliation, (range) AUC and VUS."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

METRIC_NAMES = {
    "aff_p": "Aff-P",
    "aff_r": "Aff-R",
    "aff_f": "Aff-F",
    "pa_p": "PA-P",
    "pa_r": "PA-R",
    "pa_f": "PA-F",
    "auc_roc": "A-ROC",
    "auc_pr": "A-PR",
    "r_a_r": "R-A-R",
    "r_a_p": "R-A-P",
    "v_roc": "V-ROC",
    "v_pr": "V-PR",
}


class MetricError(ValueError):
    """A metric is undefined for the given labels."""


def _binary(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise MetricError(f"{name} must be 1-D")
    if np.any((x != 0) & (x != 1)):
        raise MetricError(f"{name} must be binary")
    return x.astype(np.int64)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = _binary(pred, "pred"), _binary(truth, "truth")
    if pred.shape != truth.shape:
        raise MetricError(f"length mismatch: pred {len(pred)} vs truth {len(truth)}")
    return pred, truth


def segments(labels) -> list[tuple[int, int]]:
    """Maximal runs of 1s as half-open (start, stop) pairs."""
    y = np.asarray(labels).astype(np.int8)
    edges = np.diff(np.concatenate([[0], y, [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


# -- label-based -------------------------------------------------------------
def point_adjust(pred, truth) -> np.ndarray:
    """Mark a whole truth segment positive when any of its points is predicted."""
    pred, truth = _pair(pred, truth)
    out = pred.copy()
    for s, e in segments(truth):
        if pred[s:e].any():
            out[s:e] = 1
    return out


def prf(pred, truth) -> tuple[float, float, float]:
    """Point-wise precision, recall, F1.  Two all-zero streams score (1, 1, 1)."""
    pred, truth = _pair(pred, truth)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & (1 - truth)))
    fn = int(np.sum((1 - pred) & truth))
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, f1(p, r)


def pa_prf(pred, truth) -> tuple[float, float, float]:
    return prf(point_adjust(pred, truth), truth)


# -- affiliation ---------------------------------------------------------------
def _integrate_pw_linear(f, lo: float, hi: float, points) -> float:
    """Exact integral of a function that is linear between consecutive ``points``."""
    pts = np.unique(np.clip(np.concatenate([[lo, hi], np.asarray(points, dtype=float)]), lo, hi))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            total += f(0.5 * (a + b)) * (b - a)
    return total


def _dist_to_interval(x: float, a: float, b: float) -> float:
    return max(a - x, 0.0, x - b)


def _dist_to_set(y: float, intervals) -> float:
    return min(_dist_to_interval(y, a, b) for a, b in intervals)


def affiliation_zones(gt_events, length: float) -> list[tuple[float, float]]:
    """Zone k spans the midpoints between truth event k and its neighbours."""
    cuts = [0.0]
    for (_, b1), (a2, _) in zip(gt_events[:-1], gt_events[1:]):
        cuts.append(0.5 * (b1 + a2))
    cuts.append(float(length))
    return list(zip(cuts[:-1], cuts[1:]))


def _clip_events(events, lo: float, hi: float):
    return [(max(a, lo), min(b, hi)) for a, b in events if min(b, hi) > max(a, lo)]


def _zone_precision(pieces, J, Z) -> float:
    a, b = J
    z0, z1 = Z
    width = z1 - z0

    def survival(x):
        if a <= x <= b:
            return 1.0
        d = _dist_to_interval(x, a, b)
        return (max(0.0, a - z0 - d) + max(0.0, z1 - b - d)) / width

    kinks = [a, b, a - (z1 - b), b + (a - z0)]
    total = sum(_integrate_pw_linear(survival, s, e, kinks) for s, e in pieces)
    return total / sum(e - s for s, e in pieces)


def _zone_recall(pieces, J, Z) -> float:
    a, b = J
    z0, z1 = Z
    width = z1 - z0

    def survival(y):
        d = _dist_to_set(y, pieces)
        if d == 0.0:
            return 1.0
        return (max(0.0, y - d - z0) + max(0.0, z1 - y - d)) / width

    base = [a, b]
    for s, e in pieces:
        base += [s, e]
    for (_, e1), (s2, _) in zip(pieces[:-1], pieces[1:]):
        base.append(0.5 * (e1 + s2))
    base = np.unique(np.clip(base, a, b))
    kinks = list(base)
    # the distance is linear between base points; add the clipping kinks of the survival
    for lo, hi in zip(base[:-1], base[1:]):
        if hi <= lo:
            continue
        y1, y2 = lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)
        d1, d2 = _dist_to_set(y1, pieces), _dist_to_set(y2, pieces)
        slope = round((d2 - d1) / (y2 - y1))
        icpt = d1 - slope * y1
        if slope != 1:
            kinks.append((z0 + icpt) / (1 - slope))
        if slope != -1:
            kinks.append((z1 - icpt) / (1 + slope))
    return _integrate_pw_linear(survival, a, b, kinks) / (b - a)


def affiliation(pred, truth) -> tuple[float, float, float]:
    """Affiliation precision / recall / F1 on the continuous timeline [0, L).

    Each index i covers [i, i + 1).  Precision averages over zones holding a
    prediction; with no prediction at all it is reported as 0.
    """
    pred, truth = _pair(pred, truth)
    gt = segments(truth)
    if not gt:
        raise MetricError("affiliation metrics need at least one truth segment")
    pr = segments(pred)
    zones = affiliation_zones(gt, len(truth))
    precisions, recalls = [], []
    for J, Z in zip(gt, zones):
        pieces = _clip_events(pr, *Z)
        if not pieces:
            recalls.append(0.0)
            continue
        precisions.append(_zone_precision(pieces, J, Z))
        recalls.append(_zone_recall(pieces, J, Z))
    p = float(np.mean(precisions)) if precisions else 0.0
    r = float(np.mean(recalls))
    return p, r, f1(p, r)


# -- score-based ---------------------------------------------------------------
def _weighted_steps(scores, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (tp, fp, n_pred) at each distinct threshold, high to low."""
    order = np.argsort(-scores, kind="stable")
    s, w = scores[order], weights[order]
    tp = np.cumsum(w)
    fp = np.cumsum(1.0 - w)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    return tp[last], fp[last], (last + 1).astype(float)


def _validate_scores(scores, truth_len: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (truth_len,):
        raise MetricError(f"length mismatch: {len(scores)} scores vs {truth_len} labels")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    return scores


def weighted_roc_auc(scores, weights) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    scores = _validate_scores(scores, len(weights))
    P, N = weights.sum(), (1.0 - weights).sum()
    if P <= 0 or N <= 0:
        raise MetricError("ROC-AUC needs both positive and negative labels")
    tp, fp, _ = _weighted_steps(scores, weights)
    tpr = np.r_[0.0, tp / P]
    fpr = np.r_[0.0, fp / N]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def weighted_average_precision(scores, weights) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    scores = _validate_scores(scores, len(weights))
    P = weights.sum()
    if P <= 0 or (1.0 - weights).sum() <= 0:
        raise MetricError("PR-AUC needs both positive and negative labels")
    tp, _, npred = _weighted_steps(scores, weights)
    recall = np.r_[0.0, tp / P]
    precision = tp / npred
    return float(np.sum(np.diff(recall) * precision))


def auc(scores, truth, curve: str = "roc") -> float:
    truth = _binary(truth, "truth")
    if curve == "roc":
        return weighted_roc_auc(scores, truth)
    if curve == "pr":
        return weighted_average_precision(scores, truth)
    raise ValueError(f"unknown curve {curve!r}")


def range_labels(truth, buffer_l: int) -> np.ndarray:
    """Soft labels: 1 inside segments, sqrt(1 - d / buffer_l) at distance d < buffer_l outside."""
    truth = _binary(truth, "truth")
    out = truth.astype(np.float64)
    if buffer_l <= 0:
        return out
    n = len(truth)
    ramp = np.sqrt(1.0 - np.arange(1, buffer_l) / buffer_l)
    for s, e in segments(truth):
        left = np.arange(s - 1, s - buffer_l, -1)
        right = np.arange(e, e + buffer_l - 1)
        for idx in (left, right):
            ok = (idx >= 0) & (idx < n)
            out[idx[ok]] = np.maximum(out[idx[ok]], ramp[ok])
    return out


def range_auc(scores, truth, buffer_l: int) -> tuple[float, float]:
    """(Range-AUC-ROC, Range-AUC-PR) on boundary-smoothed labels."""
    if buffer_l < 0:
        raise ValueError("buffer_l must be >= 0")
    w = range_labels(truth, buffer_l)
    return weighted_roc_auc(scores, w), weighted_average_precision(scores, w)


def _median_segment(truth) -> float:
    segs = segments(truth)
    return float(np.median([e - s for s, e in segs])) if segs else 0.0


def default_vus_max_l(truth) -> int:
    """4 x median truth-segment length, capped at a quarter of the stream."""
    return int(min(4 * _median_segment(truth), len(truth) // 4))


def default_range_buffer(truth) -> int:
    """Median truth-segment length, capped at a quarter of the stream."""
    return int(min(_median_segment(truth), len(truth) // 4))


def vus(scores, truth, max_l: int | None = None) -> tuple[float, float]:
    """Trapezoid average of range_auc over buffer widths 0..max_l."""
    if max_l is None:
        max_l = default_vus_max_l(truth)
    if max_l < 0:
        raise ValueError("max_l must be >= 0")
    vals = np.array([range_auc(scores, truth, ell) for ell in range(max_l + 1)])
    if max_l == 0:
        return float(vals[0, 0]), float(vals[0, 1])
    w = np.ones(max_l + 1)
    w[[0, -1]] = 0.5
    w /= w.sum()
    return float(w @ vals[:, 0]), float(w @ vals[:, 1])


# -- analysis helpers -------------------------------------------------------
def shift(labels, dt: int) -> np.ndarray:
    """Shift right by dt (left for negative dt), zero-filling."""
    y = np.asarray(labels)
    out = np.zeros_like(y)
    if dt >= 0:
        out[dt:] = y[: len(y) - dt]
    else:
        out[:dt] = y[-dt:]
    return out


def shift_sensitivity(truth, shifts: Sequence[int] = (0, 1, 2, 5, 10)) -> list[dict]:
    """Aff-F and point-wise F1 of the truth stream shifted by each dt."""
    truth = _binary(truth, "truth")
    if not segments(truth):
        raise MetricError("shift simulation needs a non-empty truth stream")
    rows = []
    for dt in shifts:
        if abs(dt) >= len(truth):
            raise ValueError(f"shift {dt} is not smaller than the stream length {len(truth)}")
        pred = shift(truth, dt)
        rows.append({"shift": int(dt), "aff_f": affiliation(pred, truth)[2], "pointwise_f1": prf(pred, truth)[2]})
    return rows


def macro_stats(pred, truth) -> dict:
    pred, truth = _pair(pred, truth)
    n = len(truth)
    return {
        "anomaly_ratio_pred": float(pred.sum() / n) if n else 0.0,
        "anomaly_ratio_truth": float(truth.sum() / n) if n else 0.0,
        "num_segments_pred": len(segments(pred)),
        "num_segments_truth": len(segments(truth)),
    }


# -- report -----------------------------------------------------------------------
@dataclass
class MetricReport:
    aff_p: float = math.nan
    aff_r: float = math.nan
    aff_f: float = math.nan
    pa_p: float = math.nan
    pa_r: float = math.nan
    pa_f: float = math.nan
    auc_roc: float = math.nan
    auc_pr: float = math.nan
    r_a_r: float = math.nan
    r_a_p: float = math.nan
    v_roc: float = math.nan
    v_pr: float = math.nan
    errors: dict = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("errors")
        return d

    @staticmethod
    def csv_header(prefix: Sequence[str] = ()) -> str:
        return ",".join(list(prefix) + list(METRIC_NAMES.values()))

    def csv_row(self, prefix: Sequence[str] = ()) -> str:
        return ",".join(list(prefix) + [f"{v:.6f}" for v in self.values().values()])

    def table(self) -> str:
        return format_table([self])


def format_table(reports: Sequence[MetricReport], row_names: Sequence[str] | None = None) -> str:
    names = list(METRIC_NAMES.values())
    lead = [""] + list(row_names) if row_names else None
    width = max([6] + [len(n) for n in (row_names or [])])
    head = (f"{'':<{width}} " if lead else "") + " ".join(f"{n:>6}" for n in names)
    lines = [head]
    for i, rep in enumerate(reports):
        cells = " ".join(f"{v:6.3f}" for v in rep.values().values())
        lines.append((f"{row_names[i]:<{width}} " if row_names else "") + cells)
    return "\n".join(lines)


def evaluate(scores, pred, truth, vus_max_l: int | None = None, range_buffer: int | None = None) -> MetricReport:
    """All twelve metrics; a metric that is undefined for these labels stays NaN
    and its reason is recorded in ``errors``."""
    truth = _binary(truth, "truth")
    pred = _binary(pred, "pred")
    scores = np.asarray(scores, dtype=np.float64)
    rep = MetricReport()
    if vus_max_l is None:
        vus_max_l = default_vus_max_l(truth)
    if range_buffer is None:
        range_buffer = default_range_buffer(truth)

    def attempt(keys, fn):
        try:
            for k, v in zip(keys, fn()):
                setattr(rep, k, float(v))
        except (MetricError, ValueError) as exc:
            rep.errors["/".join(keys)] = str(exc)

    attempt(("aff_p", "aff_r", "aff_f"), lambda: affiliation(pred, truth))
    attempt(("pa_p", "pa_r", "pa_f"), lambda: pa_prf(pred, truth))
    attempt(("auc_roc",), lambda: (auc(scores, truth, "roc"),))
    attempt(("auc_pr",), lambda: (auc(scores, truth, "pr"),))
    attempt(("r_a_r", "r_a_p"), lambda: range_auc(scores, truth, range_buffer))
    attempt(("v_roc", "v_pr"), lambda: vus(scores, truth, vus_max_l))
    return rep


REPORT_FIELDS = [f.name for f in fields(MetricReport) if f.name != "errors"]
