"""Loss, learning-rate schedule, gradient checking and the training loop."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .model import ErrorDetectionModel, ModelConfig
from .tokens import LABEL_IDS, PAD, TokenSequence, token_shuffle
from .notes import ErrorLabel

logger = logging.getLogger(__name__)

ERROR_TOKENS = (LABEL_IDS[ErrorLabel.MISSED], LABEL_IDS[ErrorLabel.EXTRA])


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    max_steps: int | None = None
    lr_start: float = 2e-4
    lr_end: float = 1e-4
    schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch: int = 8
    error_weight: float = 10.0
    shuffle_augment: bool = True
    target_accuracy: float | None = None
    eval_every: int = 1
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("require lr_start >= lr_end > 0")
        if self.error_weight < 1:
            raise ValueError("error_weight must be >= 1")
        if self.schedule != "cosine":
            raise ValueError("only the cosine schedule is supported")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be positive")


@dataclass
class TrainingExample:
    ref: np.ndarray  # (512, 256) score patches
    prac: np.ndarray  # (512, 256) practice patches
    prompt: tuple[int, ...]
    target: tuple[int, ...]


@dataclass
class Batch:
    ref: torch.Tensor
    prac: torch.Tensor
    inputs: torch.Tensor
    targets: torch.Tensor
    prompt_len: torch.Tensor

    def to(self, dtype) -> "Batch":
        return Batch(self.ref.to(dtype), self.prac.to(dtype), self.inputs, self.targets,
                     self.prompt_len)


def collate(examples: Sequence[TrainingExample], rng=None) -> Batch:
    """Stack examples; decoder sequences are ``prompt ++ target`` shifted by one.

    With ``rng`` the targets are token-shuffled first.
    """
    seqs, plens = [], []
    for ex in examples:
        target = ex.target
        if rng is not None:
            target = token_shuffle(TokenSequence(target), rng).ids
        seqs.append(list(ex.prompt) + list(target))
        plens.append(len(ex.prompt))
    T = max(len(s) for s in seqs) - 1
    inputs = torch.full((len(seqs), T), PAD, dtype=torch.long)
    targets = torch.full((len(seqs), T), PAD, dtype=torch.long)
    for b, s in enumerate(seqs):
        inputs[b, :len(s) - 1] = torch.tensor(s[:-1])
        targets[b, :len(s) - 1] = torch.tensor(s[1:])
    ref = torch.from_numpy(np.stack([ex.ref for ex in examples]).astype(np.float32))
    prac = torch.from_numpy(np.stack([ex.prac for ex in examples]).astype(np.float32))
    return Batch(ref, prac, inputs, targets, torch.tensor(plens))


def loss_mask(targets: torch.Tensor, prompt_len) -> torch.Tensor:
    """Positions whose target is a real target token (not prompt, SOS or padding)."""
    T = targets.shape[-1]
    pos = torch.arange(T)
    plen = torch.as_tensor(prompt_len).reshape(-1, 1) if targets.dim() > 1 else torch.as_tensor(prompt_len)
    return (pos >= plen) & (targets != PAD)


def weighted_ce(logits, targets, prompt_len, error_weight: float = 10.0):
    """Mean cross-entropy over unmasked positions; Missed/Extra targets weigh ``error_weight``.

    Position ``t`` predicts ``targets[t]``; positions ``t < prompt_len`` are
    masked, which removes the prompt tokens and the SOS that follows it.
    """
    mask = loss_mask(targets, prompt_len)
    if not mask.any():
        raise ValueError("every position is masked")
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    weight = torch.ones_like(nll)
    for tok in ERROR_TOKENS:
        weight = torch.where(targets == tok, torch.full_like(weight, error_weight), weight)
    return (nll * weight)[mask].sum() / mask.sum()


def token_accuracy(logits, targets, prompt_len) -> float:
    mask = loss_mask(targets, prompt_len)
    hits = (logits.argmax(-1) == targets) & mask
    return float(hits.sum()) / max(1, int(mask.sum()))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    if step == 0:
        return cfg.lr_start
    if step == total_steps:
        return cfg.lr_end
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * (1 + math.cos(math.pi * step / total_steps)) / 2


# -- gradient check --------------------------------------------------------------

def sample_coordinates(model, n: int, rng) -> list[tuple[str, int]]:
    """``n`` distinct (parameter name, flat index) pairs, tensors chosen uniformly."""
    params = [(name, p.numel()) for name, p in model.named_parameters()]
    seen, out = set(), []
    while len(out) < n:
        name, size = params[int(rng.integers(len(params)))]
        coord = (name, int(rng.integers(size)))
        if coord not in seen:
            seen.add(coord)
            out.append(coord)
    return out


def grad_check(model: ErrorDetectionModel, batch: Batch, *, n_params: int = 200,
               epsilon: float = 1e-4, error_weight: float = 10.0, seed: int = 0,
               coords: Sequence[tuple[str, int]] | None = None, return_details=False):
    """Largest relative error between autograd and central finite differences.

    Runs on a float64 copy of ``model``. The step for coordinate ``x`` is
    ``epsilon * max(1, |x|)`` and the error is
    ``|g_a - g_n| / max(1, |g_a|, |g_n|)``.
    """
    m = copy.deepcopy(model).double()
    m.eval()
    b = batch.to(torch.float64)

    def loss_fn():
        logits = m(b.ref, b.prac, b.inputs)
        return weighted_ce(logits, b.targets, b.prompt_len, error_weight)

    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ValueError("non-finite loss")
    m.zero_grad()
    loss.backward()
    params = dict(m.named_parameters())
    if coords is None:
        coords = sample_coordinates(m, n_params, np.random.default_rng(seed))
    details = []
    worst = 0.0
    with torch.no_grad():
        for name, idx in coords:
            p = params[name].view(-1)
            g_a = float(params[name].grad.view(-1)[idx]) if params[name].grad is not None else 0.0
            x0 = float(p[idx])
            h = epsilon * max(1.0, abs(x0))
            p[idx] = x0 + h
            lp = float(loss_fn())
            p[idx] = x0 - h
            lm = float(loss_fn())
            p[idx] = x0
            g_n = (lp - lm) / (2 * h)
            err = abs(g_a - g_n) / max(1.0, abs(g_a), abs(g_n))
            worst = max(worst, err)
            details.append((name, idx, g_a, g_n, err))
    return (worst, details) if return_details else worst


# -- training loop ---------------------------------------------------------------

@dataclass
class TrainState:
    model: ErrorDetectionModel
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    train_cfg: TrainConfig
    step: int = 0
    epoch: int = 0
    total_steps: int = 0
    history: list[dict] = field(default_factory=list)
    # example order of the current epoch and how far into it training got
    order: list[int] | None = None
    cursor: int = 0

    def checkpoint_bytes(self) -> bytes:
        extra = {}
        names = {id(p): n for n, p in self.model.named_parameters()}
        opt_steps = {}
        for p, st in self.optimizer.state.items():
            n = names[id(p)]
            extra[f"optim.exp_avg.{n}"] = st["exp_avg"].detach().numpy()
            extra[f"optim.exp_avg_sq.{n}"] = st["exp_avg_sq"].detach().numpy()
            opt_steps[n] = float(st["step"])
        header = {"train": {"step": self.step, "epoch": self.epoch,
                            "total_steps": self.total_steps,
                            "config": asdict(self.train_cfg),
                            "rng_state": self.rng.bit_generator.state,
                            "optimizer_steps": opt_steps,
                            "history": self.history,
                            "order": self.order, "cursor": self.cursor}}
        return ckpt.dumps(self.model, extra, header)

    def save(self, path):
        ckpt._atomic_write(path, self.checkpoint_bytes())

    @classmethod
    def load(cls, path) -> "TrainState":
        with open(path, "rb") as fh:
            c = ckpt.loads(fh.read())
        info = c.header.get("train")
        if info is None:
            raise ckpt.CheckpointError("checkpoint carries no training state")
        tcfg = TrainConfig(**info["config"])
        model = c.model
        model.train()
        opt = make_optimizer(model, tcfg)
        params = dict(model.named_parameters())
        for name, step in info["optimizer_steps"].items():
            p = params[name]
            opt.state[p] = {"step": torch.tensor(step),
                            "exp_avg": torch.from_numpy(c.extra[f"optim.exp_avg.{name}"].copy()),
                            "exp_avg_sq": torch.from_numpy(c.extra[f"optim.exp_avg_sq.{name}"].copy())}
        rng = np.random.default_rng()
        rng.bit_generator.state = info["rng_state"]
        return cls(model, opt, rng, tcfg, info["step"], info["epoch"], info["total_steps"],
                   list(info["history"]), info.get("order"), info.get("cursor", 0))


def make_optimizer(model, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr_start,
                             betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)


def new_state(model_cfg: ModelConfig, train_cfg: TrainConfig, n_examples: int) -> TrainState:
    model = ErrorDetectionModel(model_cfg)
    model.train()
    steps_per_epoch = math.ceil(n_examples / train_cfg.batch)
    total = train_cfg.epochs * steps_per_epoch
    if train_cfg.max_steps is not None:
        total = min(total, train_cfg.max_steps)
    return TrainState(model, make_optimizer(model, train_cfg),
                      np.random.default_rng(train_cfg.seed), train_cfg, total_steps=total)


@torch.no_grad()
def evaluate_accuracy(model, examples: Sequence[TrainingExample], batch: int = 8) -> float:
    """Teacher-forced token accuracy over the whole set (no augmentation)."""
    was_training = model.training
    model.eval()
    hits = total = 0
    for k in range(0, len(examples), batch):
        b = collate(examples[k:k + batch])
        logits = model(b.ref, b.prac, b.inputs)
        mask = loss_mask(b.targets, b.prompt_len)
        hits += int(((logits.argmax(-1) == b.targets) & mask).sum())
        total += int(mask.sum())
    model.train(was_training)
    return hits / max(1, total)


def train_loop(examples: Sequence[TrainingExample], model_cfg: ModelConfig,
               train_cfg: TrainConfig, *, out_dir=None, state: TrainState | None = None,
               on_step: Callable[[dict], None] | None = None) -> TrainState:
    """Train with AdamW on a cosine schedule.

    Writes ``metrics.jsonl`` and ``checkpoint.bin`` into ``out_dir`` when
    given. Stops early once the epoch-end teacher-forced accuracy reaches
    ``train_cfg.target_accuracy``. A non-finite loss restores the last good
    parameters, saves them and raises :class:`TrainingDiverged`.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("empty training set")
    if state is None:
        state = new_state(model_cfg, train_cfg, len(examples))
    cfg = state.train_cfg
    model, opt = state.model, state.optimizer
    model.train()
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")
        # on resume, replay the checkpointed history so no step is logged twice
        for rec in state.history:
            if "loss" in rec:
                metrics_fh.write(json.dumps(rec) + "\n")
    last_good = copy.deepcopy(model.state_dict())
    try:
        while state.step < state.total_steps:
            if state.order is None:
                state.order = [int(i) for i in state.rng.permutation(len(examples))]
                state.cursor = 0
            while state.cursor < len(state.order) and state.step < state.total_steps:
                idx = state.order[state.cursor:state.cursor + cfg.batch]
                batch = collate([examples[i] for i in idx],
                                state.rng if cfg.shuffle_augment else None)
                lr = lr_at(state.step, state.total_steps, cfg)
                for g in opt.param_groups:
                    g["lr"] = lr
                logits = model(batch.ref, batch.prac, batch.inputs)
                loss = weighted_ce(logits, batch.targets, batch.prompt_len, cfg.error_weight)
                if not torch.isfinite(loss):
                    model.load_state_dict(last_good)
                    if out_dir is not None:
                        state.save(os.path.join(out_dir, "checkpoint.bin"))
                    raise TrainingDiverged(f"non-finite loss at step {state.step}", state)
                last_good = copy.deepcopy(model.state_dict())
                opt.zero_grad()
                loss.backward()
                opt.step()
                rec = {"step": state.step, "lr": lr, "loss": float(loss.detach()),
                       "token_acc": token_accuracy(logits.detach(), batch.targets, batch.prompt_len)}
                state.history.append(rec)
                state.step += 1
                state.cursor += len(idx)
                if metrics_fh:
                    metrics_fh.write(json.dumps(rec) + "\n")
                    metrics_fh.flush()
                if on_step:
                    on_step(rec)
                if out_dir is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                    state.save(os.path.join(out_dir, "checkpoint.bin"))
            if state.cursor < len(state.order):
                break  # step budget ran out mid-epoch
            state.epoch += 1
            state.order = None
            if cfg.target_accuracy is not None and state.epoch % cfg.eval_every == 0:
                acc = evaluate_accuracy(model, examples)
                logger.info("epoch %d step %d accuracy %.4f", state.epoch, state.step, acc)
                state.history.append({"epoch": state.epoch, "step": state.step, "eval_acc": acc})
                if acc >= cfg.target_accuracy:
                    break
    finally:
        if metrics_fh:
            metrics_fh.close()
    if out_dir is not None:
        state.save(os.path.join(out_dir, "checkpoint.bin"))
    return state
