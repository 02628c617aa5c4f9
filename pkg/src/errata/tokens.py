"""MIDI-like event tokens for decoder targets and symbolic score prompts.

Token layout (351 ids)::

    0 PAD, 1 SOS, 2 EOS
    3..217    Time bins, 10 ms each, relative to the segment start
    218..345  Note pitches 0..127
    346 On, 347 Off
    348 Label=Correct, 349 Label=Missed, 350 Label=Extra

A note onset is the group ``[Time, Label, On, Note]`` and its release is
``[Time, Note, Off]``. Time tokens are only emitted when the bin changes.
Prompts use the same grammar without Label, SOS or EOS.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .notes import ErrorLabel, NoteEvent

SEGMENT_SECONDS = 2.145
TIME_STEP = 0.01
NUM_TIME_BINS = 215

PAD, SOS, EOS = 0, 1, 2
TIME_OFFSET = 3
NOTE_OFFSET = TIME_OFFSET + NUM_TIME_BINS  # 218
ON = NOTE_OFFSET + 128  # 346
OFF = ON + 1
LABEL_OFFSET = OFF + 1  # 348
LABEL_IDS = {ErrorLabel.CORRECT: LABEL_OFFSET, ErrorLabel.MISSED: LABEL_OFFSET + 1,
             ErrorLabel.EXTRA: LABEL_OFFSET + 2}
ID_LABELS = {v: k for k, v in LABEL_IDS.items()}
VOCAB_SIZE = LABEL_OFFSET + 3  # 351

ROLES = ("target", "prompt", "decoder-input")


class TokenContractError(ValueError):
    """Input violates the tokenizer's preconditions."""


class MalformedSequenceError(ValueError):
    """Raised by strict decoding on the first malformed group."""


def time_token(b: int) -> int:
    return TIME_OFFSET + b


def note_token(pitch: int) -> int:
    return NOTE_OFFSET + pitch


def token_kind(tok: int) -> tuple[str, object]:
    """Return ``(kind, value)`` for a token id."""
    if tok == PAD:
        return "pad", None
    if tok == SOS:
        return "sos", None
    if tok == EOS:
        return "eos", None
    if TIME_OFFSET <= tok < NOTE_OFFSET:
        return "time", tok - TIME_OFFSET
    if NOTE_OFFSET <= tok < ON:
        return "note", tok - NOTE_OFFSET
    if tok == ON:
        return "on", None
    if tok == OFF:
        return "off", None
    if tok in ID_LABELS:
        return "label", ID_LABELS[tok].value
    raise TokenContractError(f"token id {tok} outside vocabulary of size {VOCAB_SIZE}")


def vocabulary_table() -> dict[str, dict]:
    """``id -> {kind, value}`` mapping for all ids."""
    return {str(i): dict(zip(("kind", "value"), token_kind(i))) for i in range(VOCAB_SIZE)}


def vocabulary_json() -> str:
    return json.dumps(vocabulary_table(), indent=1)


def token_name(tok: int) -> str:
    kind, value = token_kind(tok)
    names = {"pad": "PAD", "sos": "SOS", "eos": "EOS", "on": "On", "off": "Off"}
    if kind in names:
        return names[kind]
    if kind == "label":
        return f"Label={str(value).capitalize()}"
    return f"{kind.capitalize()}={value}"


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    role: str = "target"

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        object.__setattr__(self, "ids", ids)
        if self.role not in ROLES:
            raise TokenContractError(f"unknown role {self.role!r}")
        if any(not 0 <= i < VOCAB_SIZE for i in ids):
            raise TokenContractError("token id out of range")
        if self.role == "target":
            if len(ids) < 2 or ids[0] != SOS or ids[-1] != EOS:
                raise TokenContractError("target must start with SOS and end with EOS")
            inner = ids[1:-1]
            if SOS in inner or EOS in inner or PAD in inner:
                raise TokenContractError("target has interior SOS/EOS/PAD")
        elif self.role == "prompt":
            if any(i in ID_LABELS or i in (SOS, EOS, PAD) for i in ids):
                raise TokenContractError("prompt may not contain Label, SOS, EOS or PAD")

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def names(self) -> list[str]:
        return [token_name(i) for i in self.ids]


# -- quantisation ----------------------------------------------------------------

def time_bin(t: float, segment_start: float) -> int:
    # epsilon guards against 0.03 / 0.01 == 2.9999999999999996
    return int(math.floor((t - segment_start) / TIME_STEP + 1e-6))


def bin_time(b: int, segment_start: float) -> float:
    return segment_start + b * TIME_STEP


def _note_bins(n: NoteEvent, segment_start: float) -> tuple[int, int | None]:
    """Onset bin and offset bin (``None`` if the release is outside the segment)."""
    on = time_bin(n.onset, segment_start)
    off = max(time_bin(n.offset, segment_start), on + 1)
    if n.offset >= segment_start + SEGMENT_SECONDS or off >= NUM_TIME_BINS:
        off = None
    return on, off


def quantize(notes: Iterable[NoteEvent], segment_start: float) -> list[NoteEvent]:
    """The notes exactly as ``decode_tokens(encode_events(...))`` returns them."""
    out = []
    for n in notes:
        on, off = _note_bins(n, segment_start)
        offset = segment_start + SEGMENT_SECONDS if off is None else bin_time(off, segment_start)
        out.append(NoteEvent(bin_time(on, segment_start), offset, n.pitch, n.label))
    return sorted(out, key=_decoded_order)


def _decoded_order(n: NoteEvent):
    return (n.onset, n.pitch, n.offset, LABEL_IDS.get(n.label, 0))


# -- encoding ---------------------------------------------------------------------

def _check_in_segment(n: NoteEvent, segment_start: float):
    if not segment_start - 1e-9 <= n.onset < segment_start + SEGMENT_SECONDS:
        raise TokenContractError(
            f"note onset {n.onset} outside segment starting at {segment_start}")


def _events(notes: Sequence[NoteEvent], segment_start: float, labeled: bool):
    # (bin, 0=release/1=onset, label id, pitch)
    events = []
    for n in notes:
        _check_in_segment(n, segment_start)
        on, off = _note_bins(n, segment_start)
        lab = LABEL_IDS[n.label] if labeled else 0
        events.append((on, 1, lab, n.pitch))
        if off is not None:
            events.append((off, 0, 0, n.pitch))
    events.sort()
    return events


def _emit(events, labeled: bool) -> list[int]:
    ids, current = [], None
    for b, is_onset, lab, pitch in events:
        if b != current:
            ids.append(time_token(b))
            current = b
        if is_onset:
            if labeled:
                ids.append(lab)
            ids.extend((ON, note_token(pitch)))
        else:
            ids.extend((note_token(pitch), OFF))
    return ids


def encode_events(notes: Sequence[NoteEvent], segment_start: float = 0.0) -> TokenSequence:
    """Encode labeled notes whose onsets fall inside one segment."""
    for n in notes:
        if n.label is None:
            raise TokenContractError("every note must carry a label")
    ids = _emit(_events(notes, segment_start, True), True)
    return TokenSequence((SOS, *ids, EOS), "target")


def build_prompt(score_notes: Sequence[NoteEvent], segment_start: float = 0.0) -> TokenSequence:
    """Encode unlabeled score notes as a decoder prompt."""
    for n in score_notes:
        if n.label is not None:
            raise TokenContractError("score notes must be unlabeled")
    return TokenSequence(tuple(_emit(_events(score_notes, segment_start, False), False)),
                         "prompt")


def decoder_input(prompt: Sequence[int], generated: Sequence[int] = ()) -> list[int]:
    """``prompt ++ [SOS] ++ generated``."""
    return [*prompt, SOS, *generated]


# -- decoding ---------------------------------------------------------------------

@dataclass
class DecodeResult:
    notes: list[NoteEvent]
    malformed: int = 0
    diagnostics: list[str] = field(default_factory=list)


def decode_tokens(ids: Sequence[int] | TokenSequence, segment_start: float = 0.0, *,
                  labeled: bool = True, strict: bool = False) -> DecodeResult:
    """Rebuild notes from tokens.

    Malformed fragments are skipped (a run of consecutive unparseable
    tokens counts once) unless ``strict`` is set. Notes still sounding at
    the end are closed at the segment end. Decoding stops at the first EOS;
    a leading SOS is skipped.
    """
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    ids = list(ids)
    res = DecodeResult([])
    seg_end = segment_start + SEGMENT_SECONDS
    active: dict[int, list[tuple[float, ErrorLabel | None]]] = {}
    current = 0
    i = 0
    in_bad_run = False

    def bad(msg):
        nonlocal in_bad_run
        if strict:
            raise MalformedSequenceError(f"position {i}: {msg}")
        if not in_bad_run:
            res.malformed += 1
            res.diagnostics.append(f"position {i}: {msg}")
        in_bad_run = True

    if ids and ids[0] == SOS:
        i = 1
    kinds = []
    for t in ids:
        try:
            kinds.append(token_kind(t))
        except TokenContractError:
            kinds.append(("invalid", t))

    def kind_at(k):
        return kinds[k][0] if k < len(kinds) else None

    while i < len(ids):
        kind, value = kinds[i]
        if kind == "eos":
            break
        if kind == "time":
            current = value
            i += 1
            in_bad_run = False
            continue
        t = bin_time(current, segment_start)
        if labeled and kind == "label" and kind_at(i + 1) == "on" and kind_at(i + 2) == "note":
            active.setdefault(kinds[i + 2][1], []).append((t, ErrorLabel(value)))
            i += 3
            in_bad_run = False
            continue
        if not labeled and kind == "on" and kind_at(i + 1) == "note":
            active.setdefault(kinds[i + 1][1], []).append((t, None))
            i += 2
            in_bad_run = False
            continue
        if kind == "note" and kind_at(i + 1) == "off":
            pitch = value
            stack = active.get(pitch)
            if stack and stack[0][0] < t:
                onset, lab = stack.pop(0)
                res.notes.append(NoteEvent(onset, t, pitch, lab))
                i += 2
                in_bad_run = False
                continue
            bad(f"release of pitch {pitch} without a matching earlier onset")
            i += 2
            continue
        bad(f"unexpected token {token_name(ids[i]) if kind != 'invalid' else ids[i]}")
        i += 1

    for pitch, stack in active.items():
        for onset, lab in stack:
            if onset < seg_end:
                res.notes.append(NoteEvent(onset, seg_end, pitch, lab))
    res.notes.sort(key=_decoded_order)
    return res


# -- augmentation -------------------------------------------------------------------

def token_shuffle(seq: TokenSequence | Sequence[int], rng) -> TokenSequence:
    """Permute same-bin event groups without changing what they decode to.

    Within each Time bin the releases stay ahead of the onsets; the onset
    groups are permuted among themselves, as are the release groups.
    """
    ids = tuple(seq.ids if isinstance(seq, TokenSequence) else seq)
    TokenSequence(ids, "target")
    bins: list[tuple[int, list, list]] = []  # (time token, releases, onsets)
    body = ids[1:-1]
    i = 0
    while i < len(body):
        kind, _ = token_kind(body[i])
        if kind == "time":
            bins.append((body[i], [], []))
            i += 1
        elif not bins:
            raise TokenContractError("event group before the first Time token")
        elif (kind == "label" and body[i + 1:i + 2] == (ON,)
              and i + 2 < len(body) and token_kind(body[i + 2])[0] == "note"):
            bins[-1][2].append(body[i:i + 3])
            i += 3
        elif kind == "note" and i + 1 < len(body) and body[i + 1] == OFF:
            bins[-1][1].append(body[i:i + 2])
            i += 2
        else:
            raise TokenContractError(f"malformed target near position {i + 1}")
    out = [SOS]
    for tok, releases, onsets in bins:
        out.append(tok)
        for groups in (releases, onsets):
            order = rng.permutation(len(groups)) if len(groups) > 1 else range(len(groups))
            for k in order:
                out.extend(groups[k])
    out.append(EOS)
    return TokenSequence(tuple(out), "target")
