"""Command-line entry point: ``errata <subcommand>``.

Seed splitting: every subcommand takes one ``--seed``. Sample ``k`` of a
dataset (in sorted input order) draws from
``numpy.random.default_rng(SeedSequence([seed, k]))``; model initialisation
and the training data order both use ``seed`` directly.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, config_seed

logger = logging.getLogger("errata")

TRACK_SUFFIXES = (".jsonl", ".mid", ".midi", ".smf")
TRIPLE_FILES = ("correct.jsonl", "missed.jsonl", "extra.jsonl")


class CLIError(RuntimeError):
    """A user-facing failure; the message is printed and the exit code is 1."""


# -- small helpers ---------------------------------------------------------------

def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def atomic_write(path, data: bytes):
    from .checkpoint import _atomic_write
    _atomic_write(path, data)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_dir_atomically(final: Path, files: dict[str, bytes]):
    """Materialise ``files`` in a temp dir next to ``final``, then swap it in."""
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=final.parent, prefix=f".tmp-{final.name}-"))
    try:
        for name, data in files.items():
            (tmp / name).write_bytes(data)
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def list_tracks(src) -> list[Path]:
    src = Path(src)
    if src.is_file():
        return [src]
    if not src.is_dir():
        raise CLIError(f"no such file or directory: {src}")
    tracks = sorted(p for p in src.iterdir() if p.suffix.lower() in TRACK_SUFFIXES)
    if not tracks:
        raise CLIError(f"no note files ({', '.join(TRACK_SUFFIXES)}) in {src}")
    return tracks


def _sample_ids(paths: list[Path]) -> list[str]:
    ids, seen = [], {}
    for p in paths:
        stem = p.stem
        seen[stem] = seen.get(stem, 0) + 1
        ids.append(stem if seen[stem] == 1 else f"{stem}-{seen[stem]}")
    return ids


def list_samples(dataset) -> list[Path]:
    """Sample directories of a dataset, i.e. subdirectories holding ``score.jsonl``."""
    root = Path(dataset)
    if not root.is_dir():
        raise CLIError(f"dataset directory not found: {root}")
    dirs = sorted(d for d in root.iterdir() if d.is_dir() and (d / "score.jsonl").exists())
    if not dirs:
        raise CLIError(f"no sample directories under {root}")
    return dirs


def load_practice(path):
    """A practice take: waveform for ``.wav``, NoteTrack otherwise."""
    from .audio import read_wav
    from .notes import read_track
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return read_wav(path)
    return read_track(path)


def load_sample_practice(sample: Path):
    wav = sample / "performed.wav"
    return load_practice(wav if wav.exists() else sample / "performed.jsonl")


def read_triple(d: Path):
    from .notes import NoteTriple, read_track
    missing = [f for f in TRIPLE_FILES if not (d / f).exists()]
    if missing:
        raise CLIError(f"{d} lacks {', '.join(missing)}")
    return NoteTriple(*(read_track(d / f) for f in TRIPLE_FILES))


def triple_files(triple) -> dict[str, bytes]:
    from .notes import write_jsonl
    return {f: write_jsonl(t) for f, t in zip(TRIPLE_FILES, triple)}


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _load_model(checkpoint, cfg: RunConfig | None):
    """Load a checkpoint; with a config, its model section must match."""
    from .checkpoint import CheckpointError, loads, read_header
    from .model import ModelConfig
    with open(checkpoint, "rb") as fh:
        data = fh.read()
    try:
        header, _ = read_header(data)
        expect = None
        if cfg is not None:
            # the init seed is irrelevant once weights exist
            expect = dataclasses.replace(cfg.model, seed=ModelConfig(**header["model_config"]).seed)
        return loads(data, expect).model
    except CheckpointError as exc:
        raise CLIError(f"{checkpoint}: {exc}") from None


def _lock_with_model(cfg: RunConfig | None, model, out, seed: int, **extra):
    """Lock a run that used ``model``; its config replaces the model section."""
    cfg = dataclasses.replace(cfg or RunConfig(), model=model.cfg)
    cfg.lock(out, seed, **extra)


# -- gen ---------------------------------------------------------------------------

def _gen_one(job):
    """Build one sample's files; returns (id, files, summary) or (id, None, error)."""
    from .audio import SEGMENT_SAMPLES, SAMPLE_RATE, synthesize, segment_start, segment_track, write_wav
    from .errorgen import inject_errors, make_rng
    from .notes import NoteTrack, read_track, write_jsonl
    from .tokens import build_prompt, encode_events
    from .pipeline import _n_segments
    index, path, sample_id, cfg_dict, seed, audio, tokens = job
    try:
        cfg = RunConfig.from_dict(cfg_dict)
        score = read_track(path).unlabeled()
        rng = make_rng(seed, index)
        aug = inject_errors(score, cfg.errorgen, rng)
        files = {"score.jsonl": write_jsonl(score), **aug.files()}
        meta = aug.meta(seed)
        meta.update({"id": sample_id, "index": index, "source": Path(path).name})
        files["meta.json"] = _json_bytes(meta)
        labeled = NoteTrack(tuple(aug.correct) + tuple(aug.missed) + tuple(aug.extra))
        n = max(1, _n_segments(score, aug.performed, labeled))
        if tokens:
            segs = []
            for k, (s, t) in enumerate(zip(segment_track(score, n), segment_track(labeled, n))):
                start = segment_start(k)
                segs.append({"segment": k, "start_s": start,
                             "prompt": list(build_prompt(s.notes, start).ids),
                             "target": list(encode_events(t.notes, start).ids)})
            files["tokens.json"] = _json_bytes({"segments": segs})
        if audio:
            seconds = n * SEGMENT_SAMPLES / SAMPLE_RATE
            for name, track in (("score", score), ("performed", aug.performed)):
                fd, tmp = tempfile.mkstemp(suffix=".wav")
                os.close(fd)
                try:
                    write_wav(tmp, synthesize(track, seconds))
                    files[f"{name}.wav"] = Path(tmp).read_bytes()
                finally:
                    os.unlink(tmp)
        summary = {"id": sample_id, "index": index, "n_notes": len(score),
                   "n_performed": len(aug.performed), "lambda_used": aug.lambda_used,
                   "files": {k: _sha256(v) for k, v in sorted(files.items())}}
        return sample_id, files, summary
    except Exception as exc:  # reported in the manifest, sample skipped
        return sample_id, None, f"{type(exc).__name__}: {exc}"


def cmd_gen(src, cfg: RunConfig, seed: int, out, *, jobs: int = 1, audio: bool = False,
            tokens: bool = True) -> dict:
    """Generate an augmented dataset; returns the manifest (also written to disk)."""
    out = Path(out)
    cfg = cfg.with_seed(seed)
    paths = list_tracks(src)
    ids = _sample_ids(paths)
    jobs_in = [(k, str(p), i, cfg.to_dict(), seed, audio, tokens)
               for k, (p, i) in enumerate(zip(paths, ids))]
    samples, failed = [], []
    for sample_id, files, info in _pool_map(_gen_one, jobs_in, jobs):
        if files is None:
            logger.error("sample %s failed: %s", sample_id, info)
            failed.append({"id": sample_id, "error": info})
            continue
        _write_dir_atomically(out / sample_id, files)
        samples.append(info)
        logger.info("wrote sample %s", sample_id)
    manifest = {"seed": seed, "n_samples": len(samples), "samples": samples, "failed": failed,
                "seed_rule": "numpy default_rng(SeedSequence([seed, index]))"}
    atomic_write(out / "manifest.json", _json_bytes(manifest))
    cfg.lock(out, seed)
    return manifest


# -- train -------------------------------------------------------------------------

def _examples_for(sample: str):
    from .notes import read_track
    from .pipeline import build_examples
    d = Path(sample)
    return build_examples(read_track(d / "score.jsonl"), load_sample_practice(d), read_triple(d))


def load_examples(dataset, jobs: int = 1):
    dirs = [str(d) for d in list_samples(dataset)]
    return [ex for exs in _pool_map(_examples_for, dirs, jobs) for ex in exs]


def cmd_train(dataset, cfg: RunConfig, seed: int, out, *, jobs: int = 1, resume: bool = False):
    from .train import TrainState, TrainingDiverged, train_loop
    cfg = cfg.with_seed(seed)
    out = Path(out)
    examples = load_examples(dataset, jobs)
    logger.info("training on %d segments", len(examples))
    state = None
    ckpt = out / "checkpoint.bin"
    if resume:
        if not ckpt.exists():
            raise CLIError(f"--resume given but {ckpt} does not exist")
        state = TrainState.load(ckpt)
    cfg.lock(out, seed, n_segments=len(examples))
    try:
        state = train_loop(examples, cfg.model, cfg.train, out_dir=out, state=state,
                           on_step=lambda r: logger.debug("%s", r))
    except TrainingDiverged as exc:
        raise CLIError(f"training diverged: {exc}; last good weights in {ckpt}") from None
    return state


# -- detect ------------------------------------------------------------------------

def cmd_detect(score, practice, checkpoint, out, cfg: RunConfig | None = None,
               seed: int = 0, max_len: int | None = None):
    """Label ``practice`` against ``score`` and write the JSONL triple into ``out``."""
    from .notes import read_track
    from .pipeline import detect
    model = _load_model(checkpoint, cfg)
    triple = detect(model, read_track(score), load_practice(practice), max_len)
    for name, data in triple_files(triple).items():
        atomic_write(Path(out) / name, data)
    _lock_with_model(cfg, model, out, seed, checkpoint=Path(checkpoint).name)
    return triple


def cmd_detect_dataset(dataset, checkpoint, out, cfg: RunConfig | None = None, seed: int = 0,
                       max_len: int | None = None):
    from .notes import read_track
    from .pipeline import detect
    model = _load_model(checkpoint, cfg)
    out = Path(out)
    for d in list_samples(dataset):
        triple = detect(model, read_track(d / "score.jsonl"), load_sample_practice(d), max_len)
        _write_dir_atomically(out / d.name, triple_files(triple))
    _lock_with_model(cfg, model, out, seed, checkpoint=Path(checkpoint).name)


# -- eval --------------------------------------------------------------------------

def _triple_dirs(root: Path) -> dict[str, Path]:
    if not root.is_dir():
        raise CLIError(f"not a directory: {root}")
    if (root / TRIPLE_FILES[0]).exists():
        return {"": root}
    found = {d.name: d for d in sorted(root.iterdir())
             if d.is_dir() and (d / TRIPLE_FILES[0]).exists()}
    if not found:
        raise CLIError(f"no label triples under {root}")
    return found


def cmd_eval(est, ref, cfg: RunConfig | None = None, out=None):
    from .evaluation import aggregate, error_detection_f1
    cfg = cfg or RunConfig()
    est_dirs, ref_dirs = _triple_dirs(Path(est)), _triple_dirs(Path(ref))
    if set(est_dirs) != set(ref_dirs):
        lines = []
        if set(ref_dirs) - set(est_dirs):
            lines.append(f"missing from estimates: {sorted(set(ref_dirs) - set(est_dirs))}")
        if set(est_dirs) - set(ref_dirs):
            lines.append(f"missing from references: {sorted(set(est_dirs) - set(ref_dirs))}")
        raise CLIError(f"sample sets differ ({len(est_dirs)} estimates vs {len(ref_dirs)} "
                       f"references); " + "; ".join(lines))
    reports = [error_detection_f1(read_triple(ref_dirs[k]), read_triple(est_dirs[k]),
                                  cfg.eval.onset_tol, cfg.eval.empty_value, track_id=k or None)
               for k in sorted(ref_dirs)]
    report = aggregate(reports)
    if out is not None:
        atomic_write(Path(out) / "report.json", report.to_json().encode() + b"\n")
        cfg.lock(out, 0)
    return report


# -- baseline ----------------------------------------------------------------------

def cmd_baseline(score, practice, out, cfg: RunConfig | None = None):
    from .baseline import label_by_alignment
    from .notes import read_track
    cfg = cfg or RunConfig()
    triple = label_by_alignment(read_track(score), read_track(practice), cfg.eval.onset_tol)
    for k, v in triple_files(triple).items():
        atomic_write(Path(out) / k, v)
    cfg.lock(out, 0)
    return triple


def _baseline_one(job):
    from .baseline import label_by_alignment
    from .notes import read_track
    d, tol = job
    d = Path(d)
    return d.name, label_by_alignment(read_track(d / "score.jsonl"),
                                      read_track(d / "performed.jsonl"), tol)


def cmd_baseline_dataset(dataset, out, cfg: RunConfig | None = None, jobs: int = 1):
    cfg = cfg or RunConfig()
    jobs_in = [(str(d), cfg.eval.onset_tol) for d in list_samples(dataset)]
    for name, triple in _pool_map(_baseline_one, jobs_in, jobs):
        _write_dir_atomically(Path(out) / name, triple_files(triple))
    cfg.lock(out, 0)


# -- attn / probe / grad-check ----------------------------------------------------

def _segment_waves(score_path, practice_path, segment: int):
    from .audio import SEGMENT_SAMPLES, SAMPLE_RATE, segment_waveform, synthesize
    from .notes import NoteTrack, read_track
    from .pipeline import _n_segments
    score = read_track(score_path).unlabeled()
    practice = load_practice(practice_path)
    n = max(segment + 1, _n_segments(score, practice))
    seconds = n * SEGMENT_SAMPLES / SAMPLE_RATE
    ref_w = synthesize(score, seconds)
    prac_w = synthesize(practice, seconds) if isinstance(practice, NoteTrack) else practice
    pad = lambda w: np.concatenate([w, np.zeros(max(0, n * SEGMENT_SAMPLES - len(w)))])
    return segment_waveform(pad(ref_w))[segment], segment_waveform(pad(prac_w))[segment]


def cmd_attn(checkpoint, score, practice, out, *, segment: int = 0, shift: float | None = None,
             cfg: RunConfig | None = None):
    from .analysis import dump_attention
    model = _load_model(checkpoint, cfg)
    ref_w, prac_w = _segment_waves(score, practice, segment)
    index = dump_attention(model, ref_w, prac_w, out, shift)
    _lock_with_model(cfg, model, out, 0, segment=segment, shift=shift)
    return index


def cmd_probe(checkpoint, dataset, layer: int, out, *, variant: str | None = None,
              max_clips: int | None = None, cfg: RunConfig | None = None, seed: int = 0):
    from .analysis import probe_report
    from .checkpoint import file_checksum
    before = file_checksum(checkpoint)
    model = _load_model(checkpoint, cfg)
    clips = [(ex.ref, ex.prac) for ex in load_examples(dataset)]
    if max_clips is not None:
        clips = clips[:max_clips]
    report = probe_report(model, clips, layer, variant or model.cfg.fusion, seed=seed)
    after = file_checksum(checkpoint)
    report["checkpoint_sha256"] = {"before": before, "after": after}
    atomic_write(Path(out) / "probe_report.json", _json_bytes(report))
    _lock_with_model(cfg, model, out, seed, layer=layer)
    if before != after:
        raise CLIError("checkpoint changed during probing")
    return report


def _synthetic_examples(seed: int, n: int = 2):
    """Small random (score, errorgen) segments for checks that need some data."""
    from .errorgen import ErrorGenConfig, inject_errors, make_rng
    from .notes import NoteEvent, NoteTrack, NoteTriple
    from .pipeline import build_examples
    out = []
    for k in range(n):
        rng = make_rng(seed, k)
        onsets = np.sort(rng.choice(180, size=4, replace=False)) * 0.01
        score = NoteTrack(tuple(NoteEvent(float(o), float(o) + 0.2, int(rng.integers(48, 84)))
                                for o in onsets))
        aug = inject_errors(score, ErrorGenConfig(lambda_low=0.3, lambda_high=0.3), rng)
        out += build_examples(score, aug.performed, NoteTriple(aug.correct, aug.missed,
                                                               aug.extra))[:1]
    return out


def cmd_grad_check(cfg: RunConfig, seed: int, *, checkpoint=None, dataset=None,
                   n_params: int = 200, epsilon: float = 1e-4, threshold: float = 1e-3, out=None):
    from .model import ErrorDetectionModel
    from .train import collate, grad_check
    cfg = cfg.with_seed(seed)
    model = _load_model(checkpoint, None) if checkpoint else ErrorDetectionModel(cfg.model)
    examples = load_examples(dataset)[:2] if dataset else _synthetic_examples(seed)
    worst, details = grad_check(model, collate(examples), n_params=n_params, epsilon=epsilon,
                                error_weight=cfg.train.error_weight, seed=seed,
                                return_details=True)
    result = {"max_rel_error": worst, "n_params": len(details), "epsilon": epsilon,
              "threshold": threshold, "passed": worst < threshold,
              "coordinates": [{"param": n, "index": i, "analytic": a, "numeric": g, "rel_error": e}
                              for n, i, a, g, e in details]}
    if out is not None:
        atomic_write(Path(out) / "grad_check.json", _json_bytes(result))
        cfg.lock(out, seed)
    return result


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config (unknown keys rejected)")
    common.add_argument("--seed", type=int,
                        help="single source of randomness (default: the config's seed, else 0)")
    common.add_argument("--jobs", type=int, default=1, help="max worker processes")
    common.add_argument("--out", type=Path, help="output directory")

    p = argparse.ArgumentParser(prog="errata", description="Score-informed detection of "
                                "missed and extra notes in practice recordings.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate an augmented dataset")
    g.add_argument("src", type=Path, help="directory of .jsonl/.mid scores, or a single file")
    g.add_argument("--audio", action="store_true", help="also write synthesized WAV files")
    g.add_argument("--no-tokens", dest="tokens", action="store_false")

    t = sub.add_parser("train", parents=[common], help="train a model on a generated dataset")
    t.add_argument("dataset", type=Path)
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.bin")

    d = sub.add_parser("detect", parents=[common], help="label a practice take")
    d.add_argument("--checkpoint", type=Path, required=True)
    d.add_argument("--score", type=Path)
    d.add_argument("--practice", type=Path, help=".jsonl/.mid notes or a 16 kHz .wav")
    d.add_argument("--dataset", type=Path, help="label every sample of a dataset instead")
    d.add_argument("--max-len", type=int)

    e = sub.add_parser("eval", parents=[common], help="Error Detection F1 of estimates")
    e.add_argument("est", type=Path)
    e.add_argument("ref", type=Path)

    b = sub.add_parser("baseline", parents=[common], help="DTW alignment baseline")
    b.add_argument("--score", type=Path)
    b.add_argument("--practice", type=Path)
    b.add_argument("--dataset", type=Path)

    a = sub.add_parser("attn", parents=[common], help="dump cross-stream attention maps")
    a.add_argument("--checkpoint", type=Path, required=True)
    a.add_argument("--score", type=Path, required=True)
    a.add_argument("--practice", type=Path, required=True)
    a.add_argument("--segment", type=int, default=0)
    a.add_argument("--shift", type=float, help="also dump maps with the score delayed by SHIFT s")

    pr = sub.add_parser("probe", parents=[common], help="linear probes on encoder features")
    pr.add_argument("--checkpoint", type=Path, required=True)
    pr.add_argument("--dataset", type=Path, required=True)
    pr.add_argument("--layer", type=int, required=True, help="encoder layer (0 = embeddings)")
    pr.add_argument("--variant")
    pr.add_argument("--max-clips", type=int)

    gc = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check")
    gc.add_argument("--checkpoint", type=Path)
    gc.add_argument("--dataset", type=Path)
    gc.add_argument("--params", type=int, default=200)
    gc.add_argument("--epsilon", type=float, default=1e-4)
    gc.add_argument("--threshold", type=float, default=1e-3)
    return p


def _configure_logging():
    level = os.environ.get("ERRATA_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise CLIError(f"ERRATA_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise CLIError(f"{args.command} requires {', '.join(missing)}")


def run(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else None
    c = cfg or RunConfig()
    if args.seed is None:
        args.seed = (config_seed(args.config) if args.config else None) or 0
    if args.jobs < 1:
        raise CLIError("--jobs must be >= 1")
    cmd = args.command
    if cmd == "gen":
        _need(args, "out")
        manifest = cmd_gen(args.src, c, args.seed, args.out, jobs=args.jobs, audio=args.audio,
                           tokens=args.tokens)
        print(f"{manifest['n_samples']} samples written to {args.out}")
        if manifest["failed"]:
            print(f"{len(manifest['failed'])} samples failed: "
                  f"{[f['id'] for f in manifest['failed']]}", file=sys.stderr)
            return 1
    elif cmd == "train":
        _need(args, "out")
        state = cmd_train(args.dataset, c, args.seed, args.out, jobs=args.jobs, resume=args.resume)
        print(f"trained {state.step} steps; checkpoint at {args.out / 'checkpoint.bin'}")
    elif cmd == "detect":
        _need(args, "out")
        if args.dataset is not None:
            cmd_detect_dataset(args.dataset, args.checkpoint, args.out, cfg, args.seed, args.max_len)
        else:
            _need(args, "score", "practice")
            triple = cmd_detect(args.score, args.practice, args.checkpoint, args.out, cfg,
                                args.seed, args.max_len)
            print(f"correct {len(triple.correct)}  missed {len(triple.missed)}  "
                  f"extra {len(triple.extra)}")
    elif cmd == "eval":
        report = cmd_eval(args.est, args.ref, c, args.out)
        print(report.table())
    elif cmd == "baseline":
        _need(args, "out")
        if args.dataset is not None:
            cmd_baseline_dataset(args.dataset, args.out, c, args.jobs)
        else:
            _need(args, "score", "practice")
            cmd_baseline(args.score, args.practice, args.out, c)
    elif cmd == "attn":
        _need(args, "out")
        cmd_attn(args.checkpoint, args.score, args.practice, args.out, segment=args.segment,
                 shift=args.shift, cfg=cfg)
    elif cmd == "probe":
        _need(args, "out")
        report = cmd_probe(args.checkpoint, args.dataset, args.layer, args.out,
                           variant=args.variant, max_clips=args.max_clips, cfg=cfg, seed=args.seed)
        print(json.dumps({k: v for k, v in report.items() if k != "checkpoint_sha256"},
                         indent=2, sort_keys=True))
    elif cmd == "grad-check":
        result = cmd_grad_check(c, args.seed, checkpoint=args.checkpoint, dataset=args.dataset,
                                n_params=args.params, epsilon=args.epsilon,
                                threshold=args.threshold, out=args.out)
        print(f"max relative error {result['max_rel_error']:.3e} over "
              f"{result['n_params']} coordinates")
        if not result["passed"]:
            return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _configure_logging()
        return run(args)
    except (CLIError, ConfigError) as exc:
        print(f"errata {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"errata {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
