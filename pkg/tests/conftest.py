import os
import sys

import numpy as np
import pytest
import torch
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from errata.model import ErrorDetectionModel, ModelConfig  # noqa: E402
from errata.notes import ErrorLabel, NoteEvent, NoteTrack  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")
torch.set_num_threads(1)


def random_track(rng, n=6, span=1.8, pitches=(40, 90), dur=(0.05, 0.4), labels=False,
                 grid=None):
    """Random notes with distinct (onset, pitch); optional 10 ms onset grid."""
    notes, keys = [], set()
    while len(notes) < n:
        onset = float(rng.uniform(0, span))
        if grid:
            onset = round(onset / grid) * grid
        pitch = int(rng.integers(*pitches))
        if (onset, pitch) in keys:
            continue
        keys.add((onset, pitch))
        label = ErrorLabel(rng.choice(["correct", "missed", "extra"])) if labels else None
        notes.append(NoteEvent(onset, onset + float(rng.uniform(*dur)), pitch, label))
    return NoteTrack(tuple(notes))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_model():
    m = ErrorDetectionModel(ModelConfig(seed=7))
    m.eval()
    return m


@pytest.fixture(scope="session")
def patch_pair():
    g = torch.Generator().manual_seed(3)
    return torch.randn(512, 256, generator=g) - 6, torch.randn(512, 256, generator=g) - 6


def random_segment(rng, start=0.0, max_notes=12, labeled=True):
    """Random notes with onsets inside one 2.145 s segment.

    Same-pitch notes never overlap, even after 10 ms quantisation: each pitch
    gets a chain of intervals separated by at least 20 ms. Some offsets run
    past the segment end.
    """
    notes = []
    for pitch in rng.choice(np.arange(21, 109), size=int(rng.integers(1, 5)), replace=False):
        t = start + float(rng.uniform(0, 1.0))
        for _ in range(int(rng.integers(1, 4))):
            if t >= start + 2.14 or len(notes) >= max_notes:
                break
            off = t + float(rng.uniform(0.011, 0.9))
            label = ErrorLabel(rng.choice(["correct", "missed", "extra"])) if labeled else None
            notes.append(NoteEvent(t, off, int(pitch), label))
            if off >= start + 2.145:
                break
            t = off + float(rng.uniform(0.02, 0.4))
    return notes


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
