"""Linear probes on frozen encoder features and attention-map dumps."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .audio import NUM_PATCHES, SEGMENT_SAMPLES, SAMPLE_RATE, logmel, patchify
from .model import ErrorDetectionModel, pitch_average

N_ENERGY_BINS = 12
PROBE_KINDS = ("locality", "globality", "cross_stream")
STREAMS = ("ref", "prac")


@dataclass(frozen=True)
class ProbeTask:
    kind: str
    stream: str
    layer: int

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"kind must be one of {PROBE_KINDS}")
        if self.stream not in STREAMS:
            raise ValueError("stream must be 'ref' or 'prac'")

    @property
    def num_classes(self) -> int:
        return NUM_PATCHES if self.kind == "locality" else N_ENERGY_BINS


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by full-batch gradient descent.

    Features are standardised with statistics of the training data.
    """

    def __init__(self, epochs=25, lr=0.1, random_state=0):
        self.epochs = epochs
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("a probe needs at least two classes")
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        Z = (X - self.mean_) / self.scale_
        n, d = Z.shape
        k = len(self.classes_)
        rng = np.random.default_rng(self.random_state)
        W = rng.normal(0.0, 0.01, size=(d, k))
        b = np.zeros(k)
        onehot = np.eye(k)[yi]
        for _ in range(self.epochs):
            logits = Z @ W + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            g = (p - onehot) / n
            W -= self.lr * (Z.T @ g)
            b -= self.lr * g.sum(axis=0)
        self.coef_, self.intercept_ = W, b
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def train_probe(features, labels, epochs: int = 25, lr: float = 0.1, seed: int = 0,
                test_fraction: float = 0.2) -> tuple[LinearProbe, float]:
    """Fit a probe on a seeded 80/20 split and return it with held-out accuracy."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("a probe needs at least two classes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    n_test = max(1, int(round(test_fraction * len(labels))))
    test, train = order[:n_test], order[n_test:]
    probe = LinearProbe(epochs, lr, seed).fit(features[train], labels[train])
    return probe, float(np.mean(probe.predict(features[test]) == labels[test]))


# -- feature collection ---------------------------------------------------------

def clip_energy(patches: np.ndarray) -> float:
    """Log mean power of the highest-energy patch of a clip."""
    p = np.asarray(patches, dtype=np.float64)
    token_energy = np.log(np.mean(np.exp(p), axis=1))
    return float(token_energy.max())


def energy_bins(energies: np.ndarray, n_bins: int = N_ENERGY_BINS) -> np.ndarray:
    """Equal-width bins over the observed range; returns integer labels."""
    energies = np.asarray(energies, dtype=float)
    lo, hi = energies.min(), energies.max()
    if hi == lo:
        return np.zeros(len(energies), dtype=int)
    edges = np.linspace(lo, hi, n_bins + 1)
    return np.clip(np.searchsorted(edges, energies, side="right") - 1, 0, n_bins - 1)


@dataclass
class ProbeFeatures:
    features: np.ndarray  # (clips * 512, d)
    locality: np.ndarray
    globality: np.ndarray
    cross_stream: np.ndarray
    clip: np.ndarray

    def labels(self, kind: str) -> np.ndarray:
        return getattr(self, kind)


@torch.no_grad()
def collect_features(model: ErrorDetectionModel, dataset: Sequence[tuple[np.ndarray, np.ndarray]],
                     layer: int, stream: str) -> ProbeFeatures:
    """Token features of one stream after encoder layer ``layer`` (0 = embeddings).

    ``dataset`` holds (ref patches, prac patches) pairs. Energy labels are
    binned over the range of both streams across the whole dataset.
    """
    if stream not in STREAMS:
        raise ValueError("stream must be 'ref' or 'prac'")
    if not 0 <= layer <= model.cfg.enc_layers:
        raise ValueError(f"layer must be in [0, {model.cfg.enc_layers}]")
    was_training = model.training
    model.eval()
    energies = np.array([[clip_energy(r), clip_energy(p)] for r, p in dataset])
    bins = energy_bins(energies.ravel()).reshape(energies.shape)
    own, other = (0, 1) if stream == "ref" else (1, 0)
    feats, loc, glob, cross, clip = [], [], [], [], []
    for c, (r, p) in enumerate(dataset):
        out = model.encode(torch.as_tensor(r), torch.as_tensor(p), keep_hidden=True)
        h = out.hidden[layer][own][0]
        feats.append(h.double().numpy())
        loc.append(np.arange(NUM_PATCHES))
        glob.append(np.full(NUM_PATCHES, bins[c, own]))
        cross.append(np.full(NUM_PATCHES, bins[c, other]))
        clip.append(np.full(NUM_PATCHES, c))
    model.train(was_training)
    return ProbeFeatures(np.concatenate(feats), np.concatenate(loc), np.concatenate(glob),
                         np.concatenate(cross), np.concatenate(clip))


def probe_report(model, dataset, layer: int, variant: str = "model", epochs: int = 25,
                 seed: int = 0) -> dict:
    """Accuracies laid out as {variant: {task: {stream: acc}}}."""
    row = {kind: {} for kind in PROBE_KINDS}
    for stream in STREAMS:
        pf = collect_features(model, dataset, layer, stream)
        for kind in PROBE_KINDS:
            y = pf.labels(kind)
            if len(np.unique(y)) < 2:
                row[kind][stream] = None
                continue
            _, acc = train_probe(pf.features, y, epochs=epochs, seed=seed)
            row[kind][stream] = acc
    return {variant: {"layer": layer, **row}}


# -- attention dumps ----------------------------------------------------------------

def _shift_waveform(w: np.ndarray, delta: float) -> np.ndarray:
    """Delay (delta > 0) or advance a waveform, keeping its length."""
    k = int(round(delta * SAMPLE_RATE))
    if k == 0:
        return w.copy()
    out = np.zeros_like(w)
    if k > 0:
        out[k:] = w[:len(w) - k]
    else:
        out[:k] = w[-k:]
    return out


def _stream_quadrants(values: torch.Tensor):
    """Cross-stream blocks of a joint (heads, 1024, 1024) map, row-renormalised."""
    n = NUM_PATCHES
    for name, block in (("ref->prac", values[:, :n, n:]), ("prac->ref", values[:, n:, :n])):
        yield name, block / block.sum(dim=-1, keepdim=True)


@torch.no_grad()
def attention_maps(model: ErrorDetectionModel, ref_wave: np.ndarray, prac_wave: np.ndarray
                   ) -> list[tuple[int, str, np.ndarray]]:
    """(layer, direction, 16x16 time-time map) for every cross-stream attention."""
    for w in (ref_wave, prac_wave):
        if len(w) != SEGMENT_SAMPLES:
            raise ValueError(f"expected one {SEGMENT_SAMPLES}-sample segment")
    ref = torch.from_numpy(patchify(logmel(ref_wave)).astype(np.float32))
    prac = torch.from_numpy(patchify(logmel(prac_wave)).astype(np.float32))
    model.eval()
    out = model.encode(ref, prac, capture=True)
    maps = []
    for m in out.maps:
        vals = m.values[0].double()
        if m.direction in ("ref->prac", "prac->ref"):
            blocks = [(m.direction, vals)]
        elif m.direction == "self":
            blocks = list(_stream_quadrants(vals))
        else:
            continue
        for direction, block in blocks:
            grid = pitch_average(block)
            grid = grid / grid.sum(dim=-1, keepdim=True)
            maps.append((m.layer, direction, grid.numpy()))
    return maps


def _write_maps(maps, out_dir, meta: dict) -> list[dict]:
    os.makedirs(out_dir, exist_ok=True)
    index = []
    for layer, direction, grid in maps:
        fname = f"layer{layer:02d}_{direction.replace('->', '_to_')}.csv"
        with open(os.path.join(out_dir, fname), "w") as fh:
            for row in grid:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        index.append({"layer": layer, "direction": direction, "file": fname,
                      "shape": list(grid.shape), **meta})
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return index


def dump_attention(model: ErrorDetectionModel, ref_wave: np.ndarray, prac_wave: np.ndarray,
                   out_dir, shift: float | None = None) -> dict:
    """Write pitch-averaged cross-stream maps as CSV with an ``index.json`` sidecar.

    With ``shift`` a second set is written to ``shifted/`` from a run where
    the score audio is delayed by ``shift`` seconds.
    """
    result = {"base": _write_maps(attention_maps(model, ref_wave, prac_wave),
                                  os.path.join(out_dir, "base"), {"score_shift_s": 0.0})}
    if shift is not None:
        shifted = _shift_waveform(np.asarray(ref_wave, dtype=float), shift)
        result["shifted"] = _write_maps(attention_maps(model, shifted, prac_wave),
                                        os.path.join(out_dir, "shifted"),
                                        {"score_shift_s": float(shift)})
    return result
