"""Score-informed detection of missed and extra notes in music practice."""
from .notes import ErrorLabel, NoteEvent, NoteTrack, NoteTriple, parse_jsonl, parse_smf, write_jsonl
from .errorgen import ErrorGenConfig, inject_errors, make_rng
from .tokens import TokenSequence, decode_tokens, encode_events, build_prompt
from .model import ErrorDetectionModel, ModelConfig
from .train import TrainConfig, train_loop
from .evaluation import error_detection_f1, aggregate
from .baseline import dtw, label_by_alignment
from .config import RunConfig
from .estimators import AlignmentBaseline, ErrorDetector, LogMelSpectrogram, Patchifier

__version__ = "0.1.0"
