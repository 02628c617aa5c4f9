"""scikit-learn style wrappers around the feature, model and baseline code."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation as V
from .audio import AudioConfig, logmel, patchify, unpatchify
from .baseline import ONSET_TOLERANCE, label_by_alignment
from .evaluation import CATEGORIES, aggregate, error_detection_f1
from .model import ModelConfig
from .notes import NoteTriple
from .pipeline import build_examples, detect
from .train import TrainConfig, train_loop


class LogMelSpectrogram(TransformerMixin, BaseEstimator):
    """Waveform segments -> (n, 512, 256) log-mel matrices."""

    def __init__(self, fmin=20.0, fmax=8000.0, floor=1e-5):
        self.fmin = fmin
        self.fmax = fmax
        self.floor = floor

    def fit(self, X=None, y=None):
        self.config_ = AudioConfig(fmin=self.fmin, fmax=self.fmax, floor=self.floor)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = np.atleast_2d(V.check_finite(X, "X"))
        return np.stack([logmel(V.check_waveform(w, segment=True), self.config_) for w in X])


class Patchifier(TransformerMixin, BaseEstimator):
    """(n, 512, 256) log-mel matrices -> (n, 512, 256) flattened 16x16 patches."""

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def transform(self, X):
        X = V.check_finite(X, "X")
        if X.ndim == 2:
            X = X[None]
        return np.stack([patchify(m) for m in X]).astype(np.float32)

    def inverse_transform(self, X):
        X = V.check_patch_grid(X, "X")
        return np.stack([unpatchify(p) for p in X.reshape(-1, *X.shape[-2:])])


def _score_triples(refs, ests, onset_tol) -> float:
    """Mean of the three category F1 values after micro-averaging."""
    report = aggregate([error_detection_f1(r, e, onset_tol) for r, e in zip(refs, ests)])
    return float(np.mean([report.f1(c) for c in CATEGORIES]))


class ErrorDetector(BaseEstimator):
    """Score-informed error detector.

    ``X`` is a list of (score NoteTrack, practice NoteTrack or waveform) pairs
    and ``y`` the matching list of labeled NoteTriple objects.
    """

    def __init__(self, model_config: ModelConfig | None = None,
                 train_config: TrainConfig | None = None, max_len=None, onset_tol=0.05):
        self.model_config = model_config
        self.train_config = train_config
        self.max_len = max_len
        self.onset_tol = onset_tol

    def fit(self, X, y):
        X = V.check_pairs(X)
        y = list(y)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} pairs but y has {len(y)} triples")
        examples = []
        for (score, practice), triple in zip(X, y):
            if not isinstance(triple, NoteTriple):
                raise TypeError("y must hold NoteTriple objects")
            examples.extend(build_examples(V.check_track(score, "score"), practice, triple))
        self.state_ = train_loop(examples, self.model_config or ModelConfig(),
                                 self.train_config or TrainConfig())
        self.model_ = self.state_.model
        return self

    def predict(self, X) -> list[NoteTriple]:
        check_is_fitted(self, "model_")
        return [detect(self.model_, V.check_track(s, "score"), p, self.max_len)
                for s, p in V.check_pairs(X)]

    def score(self, X, y) -> float:
        return _score_triples(list(y), self.predict(X), self.onset_tol)


class AlignmentBaseline(BaseEstimator):
    """DTW alignment followed by rule-based labeling; nothing to learn."""

    def __init__(self, onset_tol=ONSET_TOLERANCE):
        self.onset_tol = onset_tol

    def fit(self, X=None, y=None):
        if self.onset_tol <= 0:
            raise ValueError("onset_tol must be positive")
        self.fitted_ = True
        return self

    def predict(self, X) -> list[NoteTriple]:
        check_is_fitted(self, "fitted_")
        return [label_by_alignment(V.check_track(s, "score"), V.check_track(p, "practice"),
                                   self.onset_tol) for s, p in V.check_pairs(X)]

    def score(self, X, y) -> float:
        return _score_triples(list(y), self.predict(X), self.onset_tol)
