"""Frame accuracy, segmental edit score and segmental F1@k.

All scores are percentages. Label sequences are any 1-D integer sequences;
``ignore`` is an optional set of labels (e.g. background) whose segments are
left out of Edit/F1 and whose ground-truth frames are left out of accuracy.
"""
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyInputError, ShapeError

DEFAULT_OVERLAPS = (0.10, 0.25, 0.50)


class Segment(NamedTuple):
    label: int
    start: int  # inclusive
    end: int  # exclusive


def segments_from_labels(labels, ignore=()):
    """Run-length encode ``labels`` into maximal segments."""
    y = np.asarray(labels)
    if y.ndim != 1 or y.size == 0:
        raise EmptyInputError("cannot segment an empty label sequence")
    cuts = np.flatnonzero(y[1:] != y[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [y.size]))
    ignore = set(ignore)
    return [Segment(int(y[s]), int(s), int(e)) for s, e in zip(starts, ends)
            if int(y[s]) not in ignore]


def labels_from_segments(segments):
    return np.concatenate([np.full(s.end - s.start, s.label) for s in segments])


def _pair(pred, gt):
    p, g = np.asarray(pred), np.asarray(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction has {p.size} frames, ground truth {g.size}")
    if p.size == 0:
        raise EmptyInputError("empty sequence")
    return p, g


def frame_accuracy(pred, gt, ignore=()):
    p, g = _pair(pred, gt)
    keep = ~np.isin(g, list(ignore)) if ignore else np.ones(g.shape, bool)
    if not keep.any():
        return 0.0
    return 100.0 * np.count_nonzero(p[keep] == g[keep]) / np.count_nonzero(keep)


def levenshtein(a, b):
    """Edit distance between two sequences (unit insert/delete/substitute)."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_score(pred, gt, ignore=()):
    """100 * (1 - levenshtein(segment labels) / longer segment count)."""
    p = [s.label for s in segments_from_labels(pred, ignore)]
    g = [s.label for s in segments_from_labels(gt, ignore)]
    n = max(len(p), len(g))
    if n == 0:
        return 100.0
    return max(0.0, 100.0 * (1.0 - levenshtein(p, g) / n))


def f1_counts(pred, gt, overlap, ignore=()):
    """(tp, fp, fn) for one IoU threshold.

    Predicted segments are visited in temporal order; each is a hit when the
    same-label ground-truth segment with the highest IoU among those not yet
    matched reaches ``overlap``.
    """
    p_segs = segments_from_labels(pred, ignore)
    g_segs = segments_from_labels(gt, ignore)
    used = [False] * len(g_segs)
    tp = 0
    for ps in p_segs:
        best, best_iou = -1, -1.0
        for k, gs in enumerate(g_segs):
            if used[k] or gs.label != ps.label:
                continue
            inter = min(ps.end, gs.end) - max(ps.start, gs.start)
            if inter <= 0:
                continue
            iou = inter / (max(ps.end, gs.end) - min(ps.start, gs.start))
            if iou > best_iou:
                best, best_iou = k, iou
        if best >= 0 and best_iou >= overlap:
            used[best] = True
            tp += 1
    return tp, len(p_segs) - tp, len(g_segs) - tp


def f1_from_counts(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


def f1_at_k(pred, gt, overlaps=DEFAULT_OVERLAPS, ignore=()):
    """Segmental F1 (percent) per overlap threshold, as a dict keyed by threshold."""
    _pair(pred, gt)
    return {k: f1_from_counts(*f1_counts(pred, gt, k, ignore)) for k in overlaps}


@dataclass
class MetricReport:
    acc: float
    edit: float
    f1_10: float
    f1_25: float
    f1_50: float

    def as_dict(self, digits=4):
        return {k: round(float(v), digits) for k, v in asdict(self).items()}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self):
        return "\n".join(f"{k} = {v:.4f}" for k, v in self.as_dict().items())


def evaluate_video(pred, gt, ignore=()):
    f1 = f1_at_k(pred, gt, DEFAULT_OVERLAPS, ignore)
    return MetricReport(frame_accuracy(pred, gt, ignore), edit_score(pred, gt, ignore),
                        f1[0.10], f1[0.25], f1[0.50])


def evaluate_corpus(pairs, ignore=(), pooled_f1=True):
    """Aggregate metrics over a list of (pred, gt) pairs.

    Accuracy pools frames, Edit is the per-video mean, and F1 is computed
    from TP/FP/FN summed over videos (``pooled_f1``) or averaged per video.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyInputError("evaluate_corpus needs at least one video")
    correct = total = 0
    edits = []
    counts = {k: np.zeros(3, dtype=np.int64) for k in DEFAULT_OVERLAPS}
    per_video_f1 = {k: [] for k in DEFAULT_OVERLAPS}
    for pred, gt in pairs:
        p, g = _pair(pred, gt)
        keep = ~np.isin(g, list(ignore)) if ignore else np.ones(g.shape, bool)
        correct += int(np.count_nonzero(p[keep] == g[keep]))
        total += int(np.count_nonzero(keep))
        edits.append(edit_score(p, g, ignore))
        for k in DEFAULT_OVERLAPS:
            c = f1_counts(p, g, k, ignore)
            counts[k] += c
            per_video_f1[k].append(f1_from_counts(*c))
    if pooled_f1:
        f1 = {k: f1_from_counts(*counts[k]) for k in DEFAULT_OVERLAPS}
    else:
        f1 = {k: float(np.mean(v)) for k, v in per_video_f1.items()}
    acc = 100.0 * correct / total if total else 0.0
    return MetricReport(acc, float(np.mean(edits)), f1[0.10], f1[0.25], f1[0.50])
