"""Error Detection F1: per-category note matching with a 50 ms onset tolerance."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .notes import ErrorLabel, NoteTrack, NoteTriple

ONSET_TOLERANCE = 0.05
CATEGORIES = tuple(lab.value for lab in ErrorLabel)
# float slack so that a nominal 50 ms gap (e.g. 0.55 - 0.5) still matches
_EPS = 1e-9


def match_notes(ref: NoteTrack, est: NoteTrack, onset_tol: float = ONSET_TOLERANCE
                ) -> list[tuple[int, int]]:
    """Maximum-cardinality matching of (ref, est) index pairs.

    Candidates need equal pitch and onsets at most ``onset_tol`` apart.
    """
    if not len(ref) or not len(est):
        return []
    r_on = np.array([n.onset for n in ref])
    e_on = np.array([n.onset for n in est])
    r_p = np.array([n.pitch for n in ref])
    e_p = np.array([n.pitch for n in est])
    ok = (np.abs(r_on[:, None] - e_on[None, :]) <= onset_tol + _EPS) & (r_p[:, None] == e_p[None, :])
    if not ok.any():
        return []
    match = maximum_bipartite_matching(csr_matrix(ok.astype(np.int8)), perm_type="column")
    return [(i, int(j)) for i, j in enumerate(match) if j >= 0]


def prf(matched: int, ref_total: int, est_total: int, empty: float = 1.0):
    """Precision, recall, F1 with ``empty`` standing in for 0/0."""
    p = matched / est_total if est_total else empty
    r = matched / ref_total if ref_total else empty
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class CategoryScore:
    precision: float
    recall: float
    f1: float
    matched: int
    ref_total: int
    est_total: int


@dataclass
class EvalReport:
    categories: dict[str, CategoryScore]
    tracks: list[dict] = field(default_factory=list)
    empty_value: float = 1.0

    def f1(self, category: str) -> float:
        return self.categories[category].f1

    def to_dict(self) -> dict:
        return {"categories": {k: asdict(v) for k, v in self.categories.items()},
                "tracks": self.tracks}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"{'':10s}{'P':>8s}{'R':>8s}{'F1':>8s}"]
        for name in CATEGORIES:
            c = self.categories[name]
            lines.append(f"{name.capitalize():10s}{c.precision:8.1%}{c.recall:8.1%}{c.f1:8.1%}")
        return "\n".join(lines)

    @classmethod
    def from_counts(cls, counts: dict[str, tuple[int, int, int]], empty: float = 1.0,
                    tracks=None) -> "EvalReport":
        cats = {}
        for name in CATEGORIES:
            m, r, e = counts[name]
            cats[name] = CategoryScore(*prf(m, r, e, empty), m, r, e)
        return cls(cats, list(tracks or []), empty)


def error_detection_f1(ref: NoteTriple, est: NoteTriple, onset_tol: float = ONSET_TOLERANCE,
                       empty: float = 1.0, track_id: str | None = None) -> EvalReport:
    counts = {}
    for name, r, e in zip(CATEGORIES, ref, est):
        counts[name] = (len(match_notes(r, e, onset_tol)), len(r), len(e))
    track = {"id": track_id, **{k: list(v) for k, v in counts.items()}}
    return EvalReport.from_counts(counts, empty, [track])


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    """Micro-average: sum counts across tracks, then recompute P/R/F1."""
    if not reports:
        raise ValueError("need at least one report")
    counts = {}
    for name in CATEGORIES:
        counts[name] = tuple(sum(getattr(rep.categories[name], f) for rep in reports)
                             for f in ("matched", "ref_total", "est_total"))
    tracks = [t for rep in reports for t in rep.tracks]
    return EvalReport.from_counts(counts, reports[0].empty_value, tracks)
