"""Additive synthesis, segmentation, log-mel spectrograms and patch grids."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .notes import NoteEvent, NoteTrack
from .tokens import SEGMENT_SECONDS

SAMPLE_RATE = 16000
SEGMENT_SAMPLES = int(round(SEGMENT_SECONDS * SAMPLE_RATE))  # 34320

N_FFT = 2048
HOP = 128
N_MELS = 512
N_FRAMES = 256
FMIN = 20.0
FMAX = 8000.0
LOG_FLOOR = 1e-5

PATCH = 16
PITCH_PATCHES = N_MELS // PATCH  # 32
TIME_PATCHES = N_FRAMES // PATCH  # 16
NUM_PATCHES = PITCH_PATCHES * TIME_PATCHES  # 512
PATCH_DIM = PATCH * PATCH  # 256

HARMONICS = (1.0, 0.5, 0.25)
RAMP_SECONDS = 0.01


@dataclass(frozen=True)
class AudioConfig:
    n_fft: int = N_FFT
    hop: int = HOP
    n_mels: int = N_MELS
    fmin: float = FMIN
    fmax: float = FMAX
    floor: float = LOG_FLOOR

    def __post_init__(self):
        if self.n_mels != N_MELS or self.n_fft != N_FFT or self.hop != HOP:
            raise ValueError("n_fft/hop/n_mels are fixed by the 512-patch grid "
                             f"({N_FFT}/{HOP}/{N_MELS})")
        if not 0 <= self.fmin < self.fmax <= SAMPLE_RATE / 2:
            raise ValueError("need 0 <= fmin < fmax <= Nyquist")
        if not self.floor > 0:
            raise ValueError("floor must be positive")


def midi_to_hz(pitch) -> float:
    return 440.0 * 2.0 ** ((np.asarray(pitch, dtype=float) - 69.0) / 12.0)


def _render_note(note: NoteEvent, n_samples: int, out: np.ndarray):
    start = int(np.ceil(note.onset * SAMPLE_RATE))
    stop = min(n_samples, int(np.ceil(note.offset * SAMPLE_RATE)))
    if stop <= start:
        return
    t = np.arange(start, stop) / SAMPLE_RATE
    since_on = t - note.onset
    env = np.minimum(1.0, np.minimum(since_on, note.offset - t) / RAMP_SECONDS)
    np.clip(env, 0.0, 1.0, out=env)
    f0 = float(midi_to_hz(note.pitch))
    tone = np.zeros_like(t)
    for k, amp in enumerate(HARMONICS, start=1):
        if k * f0 < SAMPLE_RATE / 2:
            tone += amp * np.sin(2 * np.pi * k * f0 * since_on)
    out[start:stop] += env * tone


def synthesize(track: NoteTrack, duration: float | None = None, *,
               normalize: bool = True) -> np.ndarray:
    """Render a track with a three-harmonic additive voice.

    With ``normalize`` the mix is scaled to a peak of 0.5 and clipped to
    [-1, 1]; otherwise the raw sum is returned.
    """
    if duration is None:
        duration = track.end_time
    n = int(round(duration * SAMPLE_RATE))
    out = np.zeros(n)
    for note in track:
        _render_note(note, n, out)
    if normalize:
        peak = np.max(np.abs(out)) if n else 0.0
        if peak > 0:
            out *= 0.5 / peak
        np.clip(out, -1.0, 1.0, out=out)
    return out


def segment_count(duration: float) -> int:
    return int(np.ceil(round(duration * SAMPLE_RATE) / SEGMENT_SAMPLES))


def segment_waveform(x: np.ndarray) -> list[np.ndarray]:
    """Cut into 2.145 s pieces, zero-padding the last one."""
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(int(np.ceil(len(x) / SEGMENT_SAMPLES))):
        piece = x[k * SEGMENT_SAMPLES:(k + 1) * SEGMENT_SAMPLES]
        if len(piece) < SEGMENT_SAMPLES:
            piece = np.pad(piece, (0, SEGMENT_SAMPLES - len(piece)))
        out.append(piece)
    return out


def segment_track(track: NoteTrack, n_segments: int | None = None) -> list[NoteTrack]:
    """Group notes by the segment containing their onset."""
    if n_segments is None:
        n_segments = (int(max(n.onset for n in track) // SEGMENT_SECONDS) + 1) if len(track) else 0
    groups = [[] for _ in range(n_segments)]
    for n in track:
        k = segment_index(n.onset)
        if k < n_segments:
            groups[k].append(n)
    return [NoteTrack(tuple(g), track.instrument) for g in groups]


def segment_index(t: float) -> int:
    k = int(t // SEGMENT_SECONDS)
    # guard float edge: t slightly below a boundary computed as k * SEGMENT_SECONDS
    if t >= (k + 1) * SEGMENT_SECONDS:
        k += 1
    return k


def segment(x):
    """Segment a waveform (array) or a NoteTrack."""
    if isinstance(x, NoteTrack):
        return segment_track(x)
    return segment_waveform(x)


def segment_start(k: int) -> float:
    return k * SEGMENT_SECONDS


# -- spectrogram ------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """HTK-scale triangular filters, shape (N_MELS, N_FFT // 2 + 1), unnormalised."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), N_MELS + 2))
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_centers(fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), N_MELS + 2))[1:-1]


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def power_stft(x: np.ndarray) -> np.ndarray:
    """Centred, reflect-padded |STFT|^2, shape (N_FFT // 2 + 1, frames)."""
    padded = np.pad(x, N_FFT // 2, mode="reflect")
    n_frames = 1 + (len(padded) - N_FFT) // HOP
    frames = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP][:n_frames]
    spec = np.fft.rfft(frames * _hann(N_FFT), axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def logmel(w: np.ndarray, cfg: AudioConfig | None = None) -> np.ndarray:
    """Log-mel spectrogram of one segment, shape (512, 256)."""
    cfg = cfg or AudioConfig()
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError("expected a mono waveform")
    if not np.all(np.isfinite(w)):
        raise ValueError("waveform contains NaN or Inf")
    if len(w) != SEGMENT_SAMPLES:
        raise ValueError(f"expected {SEGMENT_SAMPLES} samples, got {len(w)}")
    mel = mel_filterbank(cfg.fmin, cfg.fmax) @ power_stft(w)
    n = mel.shape[1]
    if n >= N_FRAMES:
        start = (n - N_FRAMES) // 2
        mel = mel[:, start:start + N_FRAMES]
    else:
        mel = np.pad(mel, ((0, 0), (0, N_FRAMES - n)))
    return np.log(np.maximum(mel, cfg.floor))


def patchify(m: np.ndarray) -> np.ndarray:
    """(512, 256) spectrogram -> (512, 256) patches, pitch-major scan.

    Patch ``i * 16 + j`` holds bands ``16i..16i+15`` and frames
    ``16j..16j+15`` flattened row-major.
    """
    m = np.asarray(m)
    if m.shape != (N_MELS, N_FRAMES):
        raise ValueError(f"expected shape {(N_MELS, N_FRAMES)}, got {m.shape}")
    return (m.reshape(PITCH_PATCHES, PATCH, TIME_PATCHES, PATCH)
             .transpose(0, 2, 1, 3).reshape(NUM_PATCHES, PATCH_DIM))


def unpatchify(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p)
    if p.shape != (NUM_PATCHES, PATCH_DIM):
        raise ValueError(f"expected shape {(NUM_PATCHES, PATCH_DIM)}, got {p.shape}")
    return (p.reshape(PITCH_PATCHES, TIME_PATCHES, PATCH, PATCH)
             .transpose(0, 2, 1, 3).reshape(N_MELS, N_FRAMES))


def patch_grid_index(band: int, frame: int) -> tuple[int, int]:
    """Map a spectrogram cell to ``(patch, offset)``."""
    i, r = divmod(band, PATCH)
    j, c = divmod(frame, PATCH)
    return i * TIME_PATCHES + j, r * PATCH + c


def waveform_patches(w: np.ndarray) -> list[np.ndarray]:
    """Patch grids (float32) for every segment of a waveform."""
    return [patchify(logmel(s)).astype(np.float32) for s in segment_waveform(w)]


# -- WAV --------------------------------------------------------------------------

def write_wav(path, x: np.ndarray):
    pcm = np.clip(np.round(np.asarray(x) * 32767), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> np.ndarray:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError("expected 16-bit mono PCM")
        if fh.getframerate() != SAMPLE_RATE:
            raise ValueError(f"expected {SAMPLE_RATE} Hz, got {fh.getframerate()}")
        data = fh.readframes(fh.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(float) / 32767.0
