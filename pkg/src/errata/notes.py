"""Note events, note tracks and their file formats.

The canonical exchange format is JSONL, one note per line::

    {"onset_s": 0.0, "offset_s": 0.5, "pitch": 60, "label": "correct"}

Standard MIDI Files (format 0 and 1) can be read but not written.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence


class NoteValidationError(ValueError):
    """A note or track violates an invariant."""


class NoteParseError(ValueError):
    """A JSONL line could not be decoded."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class SMFFormatError(ValueError):
    """The bytes are not a readable Standard MIDI File."""


class ErrorLabel(enum.Enum):
    CORRECT = "correct"
    MISSED = "missed"
    EXTRA = "extra"


@dataclass(frozen=True, order=False)
class NoteEvent:
    onset: float
    offset: float
    pitch: int
    label: ErrorLabel | None = None

    def __post_init__(self):
        if isinstance(self.pitch, bool) or not isinstance(self.pitch, int):
            raise NoteValidationError(f"pitch must be an integer, got {self.pitch!r}")
        if not 0 <= self.pitch <= 127:
            raise NoteValidationError(f"pitch out of range: {self.pitch}")
        if not (math.isfinite(self.onset) and math.isfinite(self.offset)):
            raise NoteValidationError("onset/offset must be finite")
        if self.onset < 0:
            raise NoteValidationError(f"onset must be non-negative, got {self.onset}")
        if not self.offset > self.onset:
            raise NoteValidationError(
                f"offset must be greater than onset ({self.offset} <= {self.onset})")
        if self.label is not None and not isinstance(self.label, ErrorLabel):
            raise NoteValidationError(f"label must be an ErrorLabel, got {self.label!r}")

    @property
    def key(self) -> tuple[float, int]:
        """Identity of a note within a track."""
        return (self.onset, self.pitch)

    def sort_key(self) -> tuple[float, int, float]:
        return (self.onset, self.pitch, self.offset)

    def with_label(self, label: ErrorLabel | None) -> "NoteEvent":
        return NoteEvent(self.onset, self.offset, self.pitch, label)


@dataclass(frozen=True)
class NoteTrack:
    """Sorted, duplicate-free sequence of notes.

    Two notes sharing ``(onset, pitch)`` are rejected. ``instrument`` is a
    free-form tag and does not take part in equality.
    """

    notes: tuple[NoteEvent, ...] = ()
    instrument: str = field(default="", compare=False)

    def __post_init__(self):
        notes = tuple(sorted(self.notes, key=NoteEvent.sort_key))
        for a, b in zip(notes, notes[1:]):
            if a.key == b.key:
                raise NoteValidationError(
                    f"duplicate note at onset {a.onset} pitch {a.pitch}")
        object.__setattr__(self, "notes", notes)

    def __len__(self):
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)

    def __getitem__(self, i):
        return self.notes[i]

    @property
    def end_time(self) -> float:
        return max((n.offset for n in self.notes), default=0.0)

    def with_label(self, label: ErrorLabel | None) -> "NoteTrack":
        return NoteTrack(tuple(n.with_label(label) for n in self.notes), self.instrument)

    def unlabeled(self) -> "NoteTrack":
        return self.with_label(None)

    def shifted(self, delta: float) -> "NoteTrack":
        """Move every note by ``delta`` seconds; notes pushed before 0 are dropped."""
        out = [NoteEvent(n.onset + delta, n.offset + delta, n.pitch, n.label)
               for n in self.notes if n.onset + delta >= 0]
        return NoteTrack(tuple(out), self.instrument)


class NoteTriple(NamedTuple):
    """Correct / missed / extra split of a labeled performance."""

    correct: NoteTrack
    missed: NoteTrack
    extra: NoteTrack

    @classmethod
    def from_notes(cls, notes: Iterable[NoteEvent]) -> "NoteTriple":
        """Split labeled notes by label, dropping exact duplicates."""
        buckets = {lab: {} for lab in ErrorLabel}
        for n in notes:
            if n.label is None:
                raise NoteValidationError("unlabeled note in labeled set")
            buckets[n.label].setdefault(n.key, n)
        return cls(*(NoteTrack(tuple(buckets[lab].values())) for lab in ErrorLabel))

    def labeled_notes(self) -> list[NoteEvent]:
        out = []
        for lab, track in zip(ErrorLabel, self):
            out.extend(n.with_label(lab) for n in track)
        return sorted(out, key=NoteEvent.sort_key)


# -- JSONL ---------------------------------------------------------------------

_REQUIRED = ("onset_s", "offset_s", "pitch")
_ALLOWED = set(_REQUIRED) | {"label"}


def _note_from_obj(obj, lineno: int) -> NoteEvent:
    if not isinstance(obj, dict):
        raise NoteParseError(lineno, "expected a JSON object")
    for k in _REQUIRED:
        if k not in obj:
            raise NoteValidationError(f"line {lineno}: missing field {k!r}")
    unknown = set(obj) - _ALLOWED
    if unknown:
        raise NoteValidationError(f"line {lineno}: unknown field(s) {sorted(unknown)}")
    label = obj.get("label")
    if label is not None:
        try:
            label = ErrorLabel(label)
        except ValueError:
            raise NoteValidationError(f"line {lineno}: label {label!r} is not one of "
                                      "correct/missed/extra") from None
    onset, offset = obj["onset_s"], obj["offset_s"]
    for name, v in (("onset_s", onset), ("offset_s", offset)):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise NoteValidationError(f"line {lineno}: {name} must be a number")
    try:
        return NoteEvent(float(onset), float(offset), obj["pitch"], label)
    except NoteValidationError as exc:
        raise NoteValidationError(f"line {lineno}: {exc}") from None


def parse_jsonl(data: bytes | str, instrument: str = "") -> NoteTrack:
    """Parse JSONL note lines into a sorted, validated track."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    notes = []
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise NoteParseError(lineno, f"malformed JSON ({exc.msg})") from None
        notes.append(_note_from_obj(obj, lineno))
    return NoteTrack(tuple(notes), instrument)


def write_jsonl(track: NoteTrack) -> bytes:
    lines = []
    for n in track:
        obj = {"onset_s": n.onset, "offset_s": n.offset, "pitch": n.pitch}
        if n.label is not None:
            obj["label"] = n.label.value
        # json uses repr() for floats, which round-trips exactly
        lines.append(json.dumps(obj, separators=(",", ":")))
    return "".join(line + "\n" for line in lines).encode("utf-8")


def read_track(path) -> NoteTrack:
    """Load a track from ``.jsonl`` or ``.mid``/``.midi`` by extension."""
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if path.lower().endswith((".mid", ".midi", ".smf")):
        return parse_smf(data)
    return parse_jsonl(data)


# -- Standard MIDI File --------------------------------------------------------

DEFAULT_TEMPO = 500000  # microseconds per quarter note


def _read_vlq(buf: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= len(buf):
            raise SMFFormatError("truncated variable-length quantity")
        b = buf[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise SMFFormatError("variable-length quantity longer than 4 bytes")


def _chunks(data: bytes):
    pos = 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise SMFFormatError("truncated chunk header")
        kind = data[pos:pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        pos += 8
        if pos + length > len(data):
            raise SMFFormatError(f"truncated {kind!r} chunk")
        yield kind, data[pos:pos + length]
        pos += length


_CHANNEL_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _track_events(chunk: bytes):
    """Yield ``(abs_tick, kind, payload)`` for the events we care about.

    ``kind`` is "on", "off", "tempo" or "end".
    """
    pos, tick, status = 0, 0, None
    while pos < len(chunk):
        delta, pos = _read_vlq(chunk, pos)
        tick += delta
        if pos >= len(chunk):
            raise SMFFormatError("truncated event")
        b = chunk[pos]
        if b == 0xFF:
            if pos + 2 > len(chunk):
                raise SMFFormatError("truncated meta event")
            mtype = chunk[pos + 1]
            length, pos = _read_vlq(chunk, pos + 2)
            if pos + length > len(chunk):
                raise SMFFormatError("truncated meta event")
            payload = chunk[pos:pos + length]
            pos += length
            if mtype == 0x51:
                if length != 3:
                    raise SMFFormatError("set-tempo event must carry 3 bytes")
                yield tick, "tempo", int.from_bytes(payload, "big")
            elif mtype == 0x2F:
                yield tick, "end", None
                return
            continue
        if b in (0xF0, 0xF7):
            length, pos = _read_vlq(chunk, pos + 1)
            if pos + length > len(chunk):
                raise SMFFormatError("truncated sysex event")
            pos += length
            continue
        if b & 0x80:
            status = b
            pos += 1
        elif status is None:
            raise SMFFormatError("running status without a previous status byte")
        kind = status & 0xF0
        n = _CHANNEL_DATA_LEN.get(kind)
        if n is None:
            raise SMFFormatError(f"unsupported status byte 0x{status:02X}")
        if pos + n > len(chunk):
            raise SMFFormatError("truncated channel event")
        data = chunk[pos:pos + n]
        pos += n
        channel = status & 0x0F
        if kind == 0x90 and data[1] > 0:
            yield tick, "on", (channel, data[0])
        elif kind == 0x80 or kind == 0x90:
            yield tick, "off", (channel, data[0])
    # missing end-of-track meta: treat the last event as the end
    yield tick, "end", None


class _TempoMap:
    def __init__(self, division: int, changes: Sequence[tuple[int, int]]):
        self.division = division
        self.smpte = bool(division & 0x8000)
        if self.smpte:
            fps = 256 - (division >> 8)
            self.sec_per_tick = 1.0 / (fps * (division & 0xFF))
            return
        if division == 0:
            raise SMFFormatError("division must be positive")
        # (tick, seconds at tick, tempo from tick on)
        points = [(0, 0.0, DEFAULT_TEMPO)]
        for tick, tempo in sorted(changes, key=lambda c: c[0]):
            t0, s0, tempo0 = points[-1]
            s = s0 + (tick - t0) * tempo0 / (1e6 * division)
            if tick == t0:
                points[-1] = (t0, s0, tempo)
            else:
                points.append((tick, s, tempo))
        self.points = points

    def seconds(self, tick: int) -> float:
        if self.smpte:
            return tick * self.sec_per_tick
        lo = 0
        for k, p in enumerate(self.points):
            if p[0] <= tick:
                lo = k
            else:
                break
        t0, s0, tempo = self.points[lo]
        return s0 + (tick - t0) * tempo / (1e6 * self.division)


def parse_smf(data: bytes) -> NoteTrack:
    """Read note-on/note-off and tempo events from an SMF (format 0 or 1).

    Ticks are converted with the tempo map collected across all tracks.
    Note-ons left open are closed at their track's end; zero-length notes
    are dropped.
    """
    if data[:4] != b"MThd":
        raise SMFFormatError("bad header magic (expected b'MThd')")
    chunks = list(_chunks(data))
    kind, header = chunks[0]
    if len(header) < 6:
        raise SMFFormatError("header chunk too short")
    fmt, ntrks, division = struct.unpack(">HHH", header[:6])
    if fmt not in (0, 1):
        raise SMFFormatError(f"unsupported SMF format {fmt}")
    tracks = [c for k, c in chunks[1:] if k == b"MTrk"]
    if len(tracks) < ntrks:
        raise SMFFormatError(f"header declares {ntrks} tracks, found {len(tracks)}")

    tempo_changes = []
    per_track = []
    for chunk in tracks:
        events = list(_track_events(chunk))
        tempo_changes.extend((t, v) for t, k, v in events if k == "tempo")
        per_track.append(events)
    tmap = _TempoMap(division, tempo_changes)

    spans = []  # (on_tick, off_tick, pitch)
    for events in per_track:
        open_notes: dict[tuple[int, int], list[int]] = {}
        end_tick = 0
        for tick, kind, payload in events:
            if kind == "on":
                open_notes.setdefault(payload, []).append(tick)
            elif kind == "off":
                stack = open_notes.get(payload)
                if stack:
                    spans.append((stack.pop(0), tick, payload[1]))
            elif kind == "end":
                end_tick = tick
        for (_, pitch), ticks in open_notes.items():
            spans.extend((t, max(end_tick, t), pitch) for t in ticks)

    notes = []
    for on, off, pitch in spans:
        onset, offset = tmap.seconds(on), tmap.seconds(off)
        if offset > onset:
            notes.append(NoteEvent(onset, offset, pitch))
    return NoteTrack(tuple(notes))
