"""Scene accuracy by majority vote and segment-based event detection metrics."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np


def binarize(pred, threshold: float = 0.9) -> np.ndarray:
    """1 where ``pred >= threshold``."""
    return (np.asarray(pred) >= threshold).astype(np.uint8)


def asc_majority_vote(binary_scene, scores=None) -> int:
    """Scene index with the most active frames; ties go to the lowest index.

    If no frame is active at all, fall back to the argmax of the mean
    (pre-threshold) ``scores`` when given, else class 0.
    """
    binary_scene = np.asarray(binary_scene)
    counts = binary_scene.sum(axis=0)
    if counts.max() == 0 and scores is not None:
        return int(np.argmax(np.asarray(scores).mean(axis=0)))
    return int(np.argmax(counts))


def events_from_frames(binary_events, frame_hop_s: float):
    """Maximal runs of active frames per column as ``(onset, offset, column)``."""
    b = np.asarray(binary_events).astype(bool)
    if b.ndim != 2:
        raise ValueError(f"expected (frames, classes), got {b.shape}")
    padded = np.zeros((b.shape[0] + 2, b.shape[1]), dtype=np.int8)
    padded[1:-1] = b
    diff = np.diff(padded, axis=0)
    events = []
    for col in range(b.shape[1]):
        starts = np.flatnonzero(diff[:, col] == 1)
        stops = np.flatnonzero(diff[:, col] == -1)
        events += [(s * frame_hop_s, e * frame_hop_s, col) for s, e in zip(starts, stops)]
    events.sort(key=lambda e: (e[0], e[2]))
    return events


@dataclass
class SegmentCounts:
    n_ref: int = 0
    n_sys: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    n_segments: int = 0

    def __add__(self, other: "SegmentCounts") -> "SegmentCounts":
        return SegmentCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))


@dataclass
class SegmentMetrics:
    error_rate: float
    f1: float
    precision: float
    recall: float
    counts: SegmentCounts
    # True when the reference has no active segment at all (ER undefined)
    reference_empty: bool = False
    class_wise: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, counts: SegmentCounts, class_counts=None) -> "SegmentMetrics":
        er, f1, p, r, empty = _scores(counts)
        class_wise = {}
        for label, (tp, fp, fn, nref) in (class_counts or {}).items():
            c_p = tp / (tp + fp) if tp + fp else (1.0 if nref == 0 else 0.0)
            c_r = tp / (tp + fn) if tp + fn else 1.0
            denom = 2 * tp + fp + fn
            class_wise[label] = {
                "f1": 2 * tp / denom if denom else 1.0,
                "error_rate": (fn + fp) / nref if nref else float("nan"),
                "precision": c_p, "recall": c_r, "n_ref": nref,
            }
        return cls(er, f1, p, r, counts, empty, class_wise)


def _scores(c: SegmentCounts):
    empty = c.n_ref == 0
    if empty:
        er = 0.0 if c.n_sys == 0 else float("nan")
    else:
        er = (c.substitutions + c.deletions + c.insertions) / c.n_ref
    denom = 2 * c.tp + c.fp + c.fn
    f1 = 2 * c.tp / denom if denom else 1.0
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else (1.0 if empty else 0.0)
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    return er, f1, precision, recall, empty


def segment_activity(events, labels, duration_s: float, segment_s: float = 1.0) -> np.ndarray:
    """Boolean (segments, classes) matrix: class active if any event touches the segment."""
    n_seg = max(1, math.ceil(duration_s / segment_s - 1e-9))
    index = {lab: i for i, lab in enumerate(labels)}
    act = np.zeros((n_seg, len(labels)), dtype=bool)
    for onset, offset, label in events:
        if onset < 0 or offset <= onset:
            raise ValueError(f"invalid event ({onset}, {offset}, {label!r})")
        first = math.floor(onset / segment_s + 1e-9)
        stop = math.ceil(offset / segment_s - 1e-9)
        act[max(first, 0):min(stop, n_seg), index[label]] = True
    return act


def segment_metrics(reference, estimated, segment_s: float = 1.0, duration_s=None,
                    labels=None) -> SegmentMetrics:
    """Segment-based ER / F1 / precision / recall.

    ``reference`` and ``estimated`` are iterables of ``(onset, offset, label)``.
    Per segment, S = min(FN, FP), D = max(0, FN - FP), I = max(0, FP - FN).
    """
    reference, estimated = list(reference), list(estimated)
    for ev in reference + estimated:
        if ev[0] < 0 or ev[1] <= ev[0]:
            raise ValueError(f"invalid event {ev!r}")
    if duration_s is None:
        duration_s = max([ev[1] for ev in reference + estimated], default=segment_s)
    if labels is None:
        labels = sorted({ev[2] for ev in reference + estimated}, key=str)
    ref = segment_activity(reference, labels, duration_s, segment_s)
    est = segment_activity(estimated, labels, duration_s, segment_s)
    counts, class_counts = accumulate_counts(ref, est, labels)
    return SegmentMetrics.from_counts(counts, class_counts)


def accumulate_counts(ref: np.ndarray, est: np.ndarray, labels):
    tp_seg = (ref & est).sum(axis=1)
    fp_seg = (~ref & est).sum(axis=1)
    fn_seg = (ref & ~est).sum(axis=1)
    counts = SegmentCounts(
        n_ref=int(ref.sum()), n_sys=int(est.sum()),
        tp=int(tp_seg.sum()), fp=int(fp_seg.sum()), fn=int(fn_seg.sum()),
        substitutions=int(np.minimum(fn_seg, fp_seg).sum()),
        deletions=int(np.maximum(0, fn_seg - fp_seg).sum()),
        insertions=int(np.maximum(0, fp_seg - fn_seg).sum()),
        n_segments=int(ref.shape[0]),
    )
    class_counts = {
        lab: (int((ref[:, j] & est[:, j]).sum()), int((~ref[:, j] & est[:, j]).sum()),
              int((ref[:, j] & ~est[:, j]).sum()), int(ref[:, j].sum()))
        for j, lab in enumerate(labels)
    }
    return counts, class_counts


class SegmentAccumulator:
    """Sum segment counts over many recordings, then score once."""

    def __init__(self, labels, segment_s: float = 1.0):
        self.labels = list(labels)
        self.segment_s = segment_s
        self.counts = SegmentCounts()
        self.class_counts = {lab: (0, 0, 0, 0) for lab in self.labels}

    def add(self, reference, estimated, duration_s: float):
        ref = segment_activity(reference, self.labels, duration_s, self.segment_s)
        est = segment_activity(estimated, self.labels, duration_s, self.segment_s)
        counts, class_counts = accumulate_counts(ref, est, self.labels)
        self.counts = self.counts + counts
        for lab, c in class_counts.items():
            self.class_counts[lab] = tuple(a + b for a, b in zip(self.class_counts[lab], c))

    def result(self) -> SegmentMetrics:
        return SegmentMetrics.from_counts(self.counts, self.class_counts)


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation, computed with exact rational sums."""
    v = [float(x) for x in values]
    if not v or any(math.isnan(x) for x in v):
        return float("nan"), float("nan")
    return float(statistics.mean(v)), float(statistics.pstdev(v))


@dataclass
class EvalReport:
    """Per-fold metrics and their mean / population std.

    ``sed_f1`` values are percentages, ``sed_er`` ratios.
    """

    task: str
    folds: list = field(default_factory=list)
    asc_accuracy: tuple = None
    sed_f1: tuple = None
    sed_er: tuple = None
    class_wise: dict = field(default_factory=dict)
    epochs_to_converge: tuple = None

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def cross_fold_report(fold_metrics, task: str = "joint") -> EvalReport:
    """Aggregate per-fold dicts with keys among ``asc_accuracy``, ``sed_f1``, ``sed_er``."""
    fold_metrics = list(fold_metrics)
    report = EvalReport(task=task, folds=fold_metrics)
    for key in ("asc_accuracy", "sed_f1", "sed_er", "epochs_to_converge"):
        vals = [m[key] for m in fold_metrics if m.get(key) is not None]
        if vals:
            setattr(report, key, mean_std(vals))
    classes: dict[str, list] = {}
    for m in fold_metrics:
        for lab, d in (m.get("class_wise") or {}).items():
            classes.setdefault(lab, []).append(d)
    report.class_wise = {
        lab: {"f1": mean_std(100 * d["f1"] for d in ds),
              "error_rate": mean_std(d["error_rate"] for d in ds if not math.isnan(d["error_rate"]))}
        for lab, ds in classes.items()
    }
    return report


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def format_table(rows: dict) -> str:
    """Plain-text results table: one row per task, scene accuracy and event F1 / ER.

    ``rows`` maps a row name to an :class:`EvalReport`.
    """
    def cell(stat, fmt):
        if stat is None:
            return "-"
        mean, std = stat
        return fmt.format(mean) + " σ " + fmt.format(std)

    header = ["", "ASC MV Acc", "SED F1 (%)", "SED ER"]
    body = [[name, cell(r.asc_accuracy, "{:.2f}"), cell(r.sed_f1, "{:.2f}"),
             cell(r.sed_er, "{:.2f}")] for name, r in rows.items()]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append(" | ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                for i, (c, w) in enumerate(zip(row, widths))))
        if row is header:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
