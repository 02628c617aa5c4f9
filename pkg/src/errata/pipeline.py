"""Glue between note tracks, audio, tokens and the model."""
from __future__ import annotations

import numpy as np
import torch

from .audio import (SEGMENT_SAMPLES, patchify, logmel, segment_index, segment_start,
                    segment_track, segment_waveform, synthesize)
from .model import ErrorDetectionModel, greedy_decode
from .notes import NoteTrack, NoteTriple
from .tokens import build_prompt, decode_tokens, encode_events
from .train import TrainingExample


def _n_segments(*items) -> int:
    n = 0
    for it in items:
        if isinstance(it, NoteTrack):
            if len(it):
                n = max(n, segment_index(max(note.onset for note in it)) + 1)
        elif it is not None:
            n = max(n, int(np.ceil(len(it) / SEGMENT_SAMPLES)))
    return n


def segment_patches(w: np.ndarray, n_segments: int) -> list[np.ndarray]:
    pieces = segment_waveform(w)
    while len(pieces) < n_segments:
        pieces.append(np.zeros(SEGMENT_SAMPLES))
    return [patchify(logmel(p)).astype(np.float32) for p in pieces[:n_segments]]


def build_examples(score: NoteTrack, practice, triple: NoteTriple) -> list[TrainingExample]:
    """One example per 2.145 s segment of a (score, practice, labels) sample.

    ``practice`` is a NoteTrack (synthesized here) or a waveform.
    """
    labeled = NoteTrack(tuple(triple.labeled_notes()))
    score = score.unlabeled()
    n = _n_segments(score, labeled, practice)
    seconds = n * SEGMENT_SAMPLES / 16000
    ref_w = synthesize(score, seconds)
    prac_w = synthesize(practice, seconds) if isinstance(practice, NoteTrack) else practice
    refs, pracs = segment_patches(ref_w, n), segment_patches(prac_w, n)
    score_segs, label_segs = segment_track(score, n), segment_track(labeled, n)
    out = []
    for k in range(n):
        start = segment_start(k)
        prompt = build_prompt(score_segs[k].notes, start).ids
        target = encode_events(label_segs[k].notes, start).ids
        out.append(TrainingExample(refs[k], pracs[k], prompt, target))
    return out


@torch.no_grad()
def detect(model: ErrorDetectionModel, score: NoteTrack, practice,
           max_len: int | None = None) -> NoteTriple:
    """Label a performance segment by segment and stitch the results.

    Segment-local decoded times are offset by ``k * 2.145`` s.
    """
    model.eval()
    score = score.unlabeled()
    n = _n_segments(score, practice)
    seconds = n * SEGMENT_SAMPLES / 16000
    ref_w = synthesize(score, seconds)
    prac_w = synthesize(practice, seconds) if isinstance(practice, NoteTrack) else practice
    refs, pracs = segment_patches(ref_w, n), segment_patches(prac_w, n)
    score_segs = segment_track(score, n)
    notes = []
    for k in range(n):
        start = segment_start(k)
        prompt = build_prompt(score_segs[k].notes, start).ids
        fused = model.encode(torch.from_numpy(refs[k]), torch.from_numpy(pracs[k])).fused
        ids = greedy_decode(model, fused, prompt, max_len)
        notes.extend(decode_tokens(ids, start).notes)
    return NoteTriple.from_notes(notes)
