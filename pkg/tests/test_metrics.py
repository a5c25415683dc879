import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cetnet.errors import EmptyInputError, ShapeError
from cetnet.metrics import (Segment, edit_score, evaluate_corpus, evaluate_video, f1_at_k, f1_counts,
                            f1_from_counts, frame_accuracy, labels_from_segments, segments_from_labels)

label_seqs = st.lists(st.integers(0, 4), min_size=1, max_size=50)


# ---- independent oracles ----------------------------------------------------

def runs(seq):
    return [(k, sum(1 for _ in g)) for k, g in itertools.groupby(seq)]


def dp_edit(p, g):
    D = np.zeros((len(p) + 1, len(g) + 1))
    D[:, 0] = np.arange(len(p) + 1)
    D[0, :] = np.arange(len(g) + 1)
    for i in range(1, len(p) + 1):
        for j in range(1, len(g) + 1):
            D[i, j] = min(D[i - 1, j] + 1, D[i, j - 1] + 1, D[i - 1, j - 1] + (p[i - 1] != g[j - 1]))
    return (1 - D[-1, -1] / max(len(p), len(g))) * 100


def spans(seq):
    out, t = [], 0
    for k, n in runs(seq):
        out.append((k, t, t + n))
        t += n
    return out


def best_matching(pred, gt, thr):
    """Maximum number of (pred, gt) same-label pairs with IoU >= thr, by exhaustive search."""
    P, G = spans(pred), spans(gt)
    ok = [[P[i][0] == G[j][0] and
           (min(P[i][2], G[j][2]) - max(P[i][1], G[j][1])) /
           (max(P[i][2], G[j][2]) - min(P[i][1], G[j][1])) >= thr
           for j in range(len(G))] for i in range(len(P))]

    def search(i, used):
        if i == len(P):
            return 0
        best = search(i + 1, used)
        for j in range(len(G)):
            if ok[i][j] and not used & (1 << j):
                best = max(best, 1 + search(i + 1, used | (1 << j)))
        return best

    return search(0, 0)


# ---- segments ---------------------------------------------------------------

def test_segments_examples():
    assert segments_from_labels([7, 7, 3]) == [Segment(7, 0, 2), Segment(3, 2, 3)]
    assert segments_from_labels([1] * 5) == [Segment(1, 0, 5)]
    with pytest.raises(EmptyInputError):
        segments_from_labels([])


@given(label_seqs)
def test_segments_round_trip_and_tiling(seq):
    segs = segments_from_labels(seq)
    assert labels_from_segments(segs).tolist() == seq
    assert segs[0].start == 0 and segs[-1].end == len(seq)
    for a, b in zip(segs, segs[1:]):
        assert a.end == b.start and a.label != b.label


# ---- accuracy ---------------------------------------------------------------

def test_accuracy_examples():
    assert frame_accuracy([1, 2, 3], [1, 2, 3]) == 100.0
    assert frame_accuracy([1, 1, 0, 0], [1, 1, 1, 1]) == 50.0
    assert frame_accuracy([0, 0], [1, 1]) == 0.0
    with pytest.raises(ShapeError):
        frame_accuracy([1], [1, 2])


def test_accuracy_ignore():
    assert frame_accuracy([0, 1, 2, 2], [9, 1, 2, 9], ignore={9}) == 100.0


# ---- edit ---------------------------------------------------------------

def test_edit_examples():
    assert edit_score([0, 0, 1, 2], [0, 0, 1, 2]) == 100.0
    assert edit_score([0, 0, 1, 1], [0, 0, 0, 0]) == pytest.approx(50.0)


@settings(max_examples=200)
@given(label_seqs, label_seqs)
def test_edit_matches_dp_oracle(p, g):
    assert edit_score(p, g) == pytest.approx(dp_edit([k for k, _ in runs(p)], [k for k, _ in runs(g)]), abs=1e-12)


# ---- F1 ---------------------------------------------------------------

def test_f1_examples():
    gt = [0] * 10 + [1] * 10
    assert f1_at_k(gt, gt) == {0.10: 100.0, 0.25: 100.0, 0.50: 100.0}
    pred = [0] * 5 + [1] * 15
    # IoU_A = 5/10 = 0.5 (boundary inclusive), IoU_B = 10/15
    assert f1_at_k(pred, gt) == {0.10: 100.0, 0.25: 100.0, 0.50: 100.0}
    assert f1_at_k(pred, gt, overlaps=(0.51,))[0.51] == pytest.approx(100 * 2 * 0.5 * 0.5 / 1.0)


def test_f1_zero_when_nothing_matches():
    assert f1_at_k([0, 0, 0], [1, 1, 1])[0.1] == 0.0
    assert f1_from_counts(0, 0, 0) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=12), st.lists(st.integers(0, 2), min_size=1, max_size=12),
       st.sampled_from([0.1, 0.25, 0.5]))
def test_greedy_never_beats_optimal(p, g, thr):
    n = min(len(p), len(g))
    p, g = p[:n], g[:n]
    tp, _, _ = f1_counts(p, g, thr)
    assert tp <= best_matching(p, g, thr)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_greedy_equals_optimal_without_duplicate_labels(data):
    T = data.draw(st.integers(1, 50))
    labels = list(range(5))

    def draw_seq():
        order = data.draw(st.permutations(labels))
        k = data.draw(st.integers(1, min(5, T)))
        cuts = sorted(data.draw(st.lists(st.integers(1, T - 1), min_size=k - 1, max_size=k - 1, unique=True))) \
            if T > 1 else []
        bounds = [0] + cuts + [T]
        return [order[i] for i in range(len(bounds) - 1) for _ in range(bounds[i + 1] - bounds[i])]

    p, g = draw_seq(), draw_seq()
    for thr in (0.1, 0.25, 0.5):
        assert f1_counts(p, g, thr)[0] == best_matching(p, g, thr)


@settings(max_examples=100)
@given(label_seqs, label_seqs)
def test_f1_monotone_in_threshold(p, g):
    n = min(len(p), len(g))
    f = f1_at_k(p[:n], g[:n], overlaps=(0.1, 0.25, 0.5, 0.75))
    assert f[0.1] >= f[0.25] >= f[0.5] >= f[0.75]


@settings(max_examples=100)
@given(label_seqs, label_seqs, st.integers(2, 4))
def test_upsampling_invariance(p, g, k):
    n = min(len(p), len(g))
    p, g = np.array(p[:n]), np.array(g[:n])
    pu, gu = np.repeat(p, k), np.repeat(g, k)
    assert edit_score(pu, gu) == pytest.approx(edit_score(p, g))
    assert f1_at_k(pu, gu) == pytest.approx(f1_at_k(p, g))


@settings(max_examples=100)
@given(label_seqs, label_seqs)
def test_scores_in_range(p, g):
    n = min(len(p), len(g))
    r = evaluate_video(p[:n], g[:n])
    assert all(0 <= v <= 100 for v in r.as_dict().values())


# ---- corpus -----------------------------------------------------------------

def test_corpus_single_video_equals_per_video():
    rng = np.random.default_rng(0)
    p, g = rng.integers(0, 3, 40), np.repeat(rng.integers(0, 3, 8), 5)
    assert evaluate_corpus([(p, g)]) == evaluate_video(p, g)


def test_corpus_perfect():
    g = [0, 0, 1, 1, 2]
    assert set(evaluate_corpus([(g, g), (g, g)]).as_dict().values()) == {100.0}


def test_corpus_pooled_counts():
    rng = np.random.default_rng(1)
    pairs = [(rng.integers(0, 3, 30), np.repeat(rng.integers(0, 3, 6), 5)) for _ in range(4)]
    r = evaluate_corpus(pairs)
    for thr, got in ((0.1, r.f1_10), (0.25, r.f1_25), (0.5, r.f1_50)):
        tp = fp = fn = 0
        for p, g in pairs:
            a, b, c = f1_counts(p, g, thr)
            tp, fp, fn = tp + a, fp + b, fn + c
        prec, rec = tp / (tp + fp), tp / (tp + fn)
        assert got == pytest.approx(0 if tp == 0 else 200 * prec * rec / (prec + rec))
    assert r.acc == pytest.approx(100 * sum((p == g).sum() for p, g in pairs) / 120)
    assert r.edit == pytest.approx(np.mean([edit_score(p, g) for p, g in pairs]))
    per_video = evaluate_corpus(pairs, pooled_f1=False)
    assert per_video.f1_50 == pytest.approx(np.mean([f1_at_k(p, g)[0.5] for p, g in pairs]))


def test_report_serialisation():
    r = evaluate_video([0, 1, 1], [0, 1, 0])
    d = json.loads(r.to_json())
    assert list(d) == ["acc", "edit", "f1_10", "f1_25", "f1_50"]
    assert d["acc"] == round(200 / 3, 4)
    assert "acc = 66.6667" in r.to_text()
