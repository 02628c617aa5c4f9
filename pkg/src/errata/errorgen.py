"""Synthetic practice-error injection.

Each note of a clean track is selected with probability ``lam`` (drawn once
per track) and turned into one of four error types: a missed note, a pitch
change, a timing shift or an inserted extra note. Offsets come from
zero-centred truncated normals.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .notes import ErrorLabel, NoteEvent, NoteTrack, write_jsonl

logger = logging.getLogger(__name__)

ERROR_TYPES = ("missed", "pitch_change", "timing_shift", "extra")

# Onset tolerance of the evaluation metric. Timing shifts within it stay correct.
ONSET_TOLERANCE = 0.05
MAX_REDRAWS = 100


@dataclass(frozen=True)
class ErrorGenConfig:
    lambda_low: float = 0.1
    lambda_high: float = 0.4
    pitch_sigma: float = 1.0
    time_sigma: float = 0.02
    trunc_multiple: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lambda_low <= self.lambda_high <= 1.0:
            raise ValueError("require 0 <= lambda_low <= lambda_high <= 1")
        for name in ("pitch_sigma", "time_sigma", "trunc_multiple"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Edit:
    note: int
    error_type: str
    eps_p: float | None = None
    eps_t: float | None = None
    applied: bool = True


@dataclass(frozen=True)
class AugmentedSample:
    performed: NoteTrack
    correct: NoteTrack
    missed: NoteTrack
    extra: NoteTrack
    lambda_used: float
    edit_log: tuple[Edit, ...] = field(default=())

    def meta(self, seed=None) -> dict:
        return {"seed": seed, "lambda_used": self.lambda_used,
                "edit_log": [asdict(e) for e in self.edit_log]}

    def files(self) -> dict[str, bytes]:
        """JSONL payloads keyed by file name."""
        return {f"{name}.jsonl": write_jsonl(getattr(self, name))
                for name in ("performed", "correct", "missed", "extra")}


def make_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Random stream for track ``index`` of a run seeded with ``seed``.

    Streams are split with ``SeedSequence([seed, index])`` so tracks can be
    processed in any order or in parallel.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def sample_lambda(cfg: ErrorGenConfig, rng) -> float:
    if cfg.lambda_low == cfg.lambda_high:
        return float(cfg.lambda_low)
    return float(rng.uniform(cfg.lambda_low, cfg.lambda_high))


def sample_truncnorm(sigma: float, trunc_multiple: float, rng) -> float:
    """Draw from N(0, sigma^2) conditioned on |x| <= trunc_multiple * sigma."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    bound = trunc_multiple * sigma
    while True:
        x = float(rng.normal(0.0, sigma))
        if abs(x) <= bound:
            return x


class _Book:
    """Bookkeeping of note identities while a track is being edited."""

    def __init__(self, reference: NoteTrack):
        self.by_pitch: dict[int, list[float]] = {}
        for n in reference:
            self.by_pitch.setdefault(n.pitch, []).append(n.onset)
        self.used: set[tuple[float, int]] = {n.key for n in reference}

    def near_reference(self, onset: float, pitch: int) -> bool:
        return any(abs(o - onset) <= ONSET_TOLERANCE for o in self.by_pitch.get(pitch, ()))

    def free(self, onset: float, pitch: int) -> bool:
        return (onset, pitch) not in self.used


def _shift(note: NoteEvent, eps_t: float, index: int) -> tuple[NoteEvent, float]:
    onset = note.onset + eps_t
    if onset < 0:
        logger.info("timing shift of note %d clamped at 0 (eps_t=%.4f)", index, eps_t)
        onset = 0.0
    shift = onset - note.onset
    return NoteEvent(onset, note.offset + shift, note.pitch), shift


def inject_errors(track: NoteTrack, cfg: ErrorGenConfig, rng, *,
                  force_type: str | None = None) -> AugmentedSample:
    """Apply random practice errors to ``track``.

    ``force_type`` pins every selected note to one error type (for tracing
    single edits); the per-note type draw is then skipped.

    Inserted and pitch-changed notes are redrawn until they do not coincide
    with a reference note of the same pitch within the onset tolerance, so
    that every extra note is genuinely absent from the reference. After
    ``MAX_REDRAWS`` failed draws the note is left correct and the edit is
    logged with ``applied=False``.
    """
    if force_type is not None and force_type not in ERROR_TYPES:
        raise ValueError(f"unknown error type {force_type!r}")
    lam = sample_lambda(cfg, rng)
    notes = track.notes
    if not notes:
        empty = NoteTrack((), track.instrument)
        return AugmentedSample(empty, empty, empty, empty, lam, ())

    selected = rng.random(len(notes)) < lam
    book = _Book(track)
    correct, missed, extra, log = [], [], [], []

    def truncnorm(sigma):
        return sample_truncnorm(sigma, cfg.trunc_multiple, rng)

    for i, note in enumerate(notes):
        if not selected[i]:
            correct.append(note)
            continue
        etype = force_type or ERROR_TYPES[int(rng.integers(0, 4))]

        if etype == "missed":
            missed.append(note)
            log.append(Edit(i, etype))

        elif etype == "pitch_change":
            for _ in range(MAX_REDRAWS):
                eps_p = truncnorm(cfg.pitch_sigma)
                new_pitch = note.pitch + int(np.rint(eps_p))
                if (new_pitch != note.pitch and 0 <= new_pitch <= 127
                        and not book.near_reference(note.onset, new_pitch)
                        and book.free(note.onset, new_pitch)):
                    moved = NoteEvent(note.onset, note.offset, new_pitch)
                    missed.append(note)
                    extra.append(moved)
                    book.used.add(moved.key)
                    log.append(Edit(i, etype, eps_p=eps_p))
                    break
            else:
                correct.append(note)
                log.append(Edit(i, etype, applied=False))

        elif etype == "timing_shift":
            for _ in range(MAX_REDRAWS):
                eps_t = truncnorm(cfg.time_sigma)
                moved, shift = _shift(note, eps_t, i)
                if abs(shift) > ONSET_TOLERANCE:
                    ok = (not book.near_reference(moved.onset, moved.pitch)
                          and book.free(*moved.key))
                else:
                    ok = moved.key == note.key or book.free(*moved.key)
                if ok:
                    break
            else:
                correct.append(note)
                log.append(Edit(i, etype, applied=False))
                continue
            if abs(shift) > ONSET_TOLERANCE:
                missed.append(note)
                extra.append(moved)
            else:
                correct.append(moved)
            book.used.add(moved.key)
            log.append(Edit(i, etype, eps_t=eps_t))

        else:  # extra note anchored on this one
            correct.append(note)
            for _ in range(MAX_REDRAWS):
                eps_p = truncnorm(cfg.pitch_sigma)
                eps_t = truncnorm(cfg.time_sigma)
                pitch = note.pitch + int(np.rint(eps_p))
                if not 0 <= pitch <= 127:
                    continue
                onset = max(0.0, note.onset + eps_t)
                if book.near_reference(onset, pitch) or not book.free(onset, pitch):
                    continue
                inserted = NoteEvent(onset, onset + (note.offset - note.onset), pitch)
                extra.append(inserted)
                book.used.add(inserted.key)
                log.append(Edit(i, etype, eps_p=eps_p, eps_t=eps_t))
                break
            else:
                log.append(Edit(i, etype, applied=False))

    inst = track.instrument
    correct_t = NoteTrack(tuple(n.with_label(ErrorLabel.CORRECT) for n in correct), inst)
    missed_t = NoteTrack(tuple(n.with_label(ErrorLabel.MISSED) for n in missed), inst)
    extra_t = NoteTrack(tuple(n.with_label(ErrorLabel.EXTRA) for n in extra), inst)
    performed = NoteTrack(tuple(n.with_label(None) for n in correct + extra), inst)
    return AugmentedSample(performed, correct_t, missed_t, extra_t, lam, tuple(log))
