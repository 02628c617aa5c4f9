"""Explicit-alignment baseline: DTW over note onsets, then rule-based labels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .notes import ErrorLabel, NoteTrack, NoteTriple

ONSET_TOLERANCE = 0.05


@dataclass(frozen=True)
class DtwResult:
    path: tuple[tuple[int, int], ...]
    cost: float


def _abs_dist(x, y) -> float:
    return float(np.sum(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))))


def dtw(a: Sequence, b: Sequence, dist: Callable = _abs_dist) -> DtwResult:
    """Minimal-cost monotone alignment with steps (1,0), (0,1), (1,1).

    On equal accumulated cost the backtrack prefers the diagonal, then a
    step that advances only ``a``.
    """
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty sequences")
    C = np.array([[dist(x, y) for y in b] for x in a], dtype=float).reshape(n, m)
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = C[i - 1, j - 1] + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    i, j = n, m
    path = [(n - 1, m - 1)]
    while (i, j) != (1, 1):
        candidates = ((D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j),
                      (D[i, j - 1], i, j - 1))
        best = min(c[0] for c in candidates)
        _, i, j = next(c for c in candidates if c[0] == best)
        path.append((i - 1, j - 1))
    path.reverse()
    cost = float(sum(C[p] for p in path))
    return DtwResult(tuple(path), cost)


def _normalized_onsets(track: NoteTrack) -> np.ndarray:
    on = np.array([n.onset for n in track], dtype=float)
    span = on[-1] - on[0]
    return (on - on[0]) / span if span > 0 else on - on[0]


def warp_map(score: NoteTrack, practice: NoteTrack, path) -> tuple[np.ndarray, np.ndarray]:
    """Anchor points (practice time, score time) for piecewise-linear warping.

    Each practice onset on the path keeps its closest score onset.
    """
    s_on = [n.onset for n in score]
    p_on = [n.onset for n in practice]
    best: dict[float, float] = {}
    for i, j in path:
        pt, st = p_on[j], s_on[i]
        if pt not in best or abs(st - pt) < abs(best[pt] - pt):
            best[pt] = st
    xs = np.array(sorted(best))
    ys = np.array([best[x] for x in xs])
    # keep the map non-decreasing
    ys = np.maximum.accumulate(ys)
    return xs, ys


def warp(times, xs, ys) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if len(xs) == 1:
        return times + (ys[0] - xs[0])
    # linear extrapolation beyond the anchors
    inner = np.interp(times, xs, ys)
    lo = times < xs[0]
    hi = times > xs[-1]
    slope_lo = (ys[1] - ys[0]) / (xs[1] - xs[0]) if xs[1] > xs[0] else 1.0
    slope_hi = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2]) if xs[-1] > xs[-2] else 1.0
    inner[lo] = ys[0] + (times[lo] - xs[0]) * slope_lo
    inner[hi] = ys[-1] + (times[hi] - xs[-1]) * slope_hi
    return inner


def label_by_alignment(score: NoteTrack, practice: NoteTrack,
                       onset_tol: float = ONSET_TOLERANCE) -> NoteTriple:
    """Label practice notes against the score after DTW time warping.

    Onsets of both tracks are normalised to [0, 1] before DTW so that a
    global tempo change costs nothing. A practice note is correct when a
    still-unmatched score note of the same pitch lies within ``onset_tol``
    of its warped onset; pairs are taken greedily by warped-onset distance.
    """
    score, practice = score.unlabeled(), practice.unlabeled()
    if not len(score) or not len(practice):
        return NoteTriple(NoteTrack(), score.with_label(ErrorLabel.MISSED),
                          practice.with_label(ErrorLabel.EXTRA))
    res = dtw(_normalized_onsets(score), _normalized_onsets(practice))
    xs, ys = warp_map(score, practice, res.path)
    warped = warp([n.onset for n in practice], xs, ys)
    pairs = []
    for j, pn in enumerate(practice):
        for i, sn in enumerate(score):
            d = abs(warped[j] - sn.onset)
            if sn.pitch == pn.pitch and d <= onset_tol:
                pairs.append((d, i, j))
    pairs.sort()
    used_s, used_p = set(), set()
    for _, i, j in pairs:
        if i not in used_s and j not in used_p:
            used_s.add(i)
            used_p.add(j)
    correct = NoteTrack(tuple(practice[j].with_label(ErrorLabel.CORRECT) for j in sorted(used_p)))
    missed = NoteTrack(tuple(score[i].with_label(ErrorLabel.MISSED)
                             for i in range(len(score)) if i not in used_s))
    extra = NoteTrack(tuple(practice[j].with_label(ErrorLabel.EXTRA)
                            for j in range(len(practice)) if j not in used_p))
    return NoteTriple(correct, missed, extra)
