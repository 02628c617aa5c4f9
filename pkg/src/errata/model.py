"""Two-stream spectrogram encoders and the prompted token decoder.

Three encoder topologies share one interface:

* ``ladder``: per-layer cross-attention alignment between the score (ref)
  and practice (prac) streams. Each block first updates ref by attending
  into prac, then updates prac by attending into the *updated* ref::

      ref' = ViT_ref(ref + CA(prac -> ref))
      prac' = ViT_prac(prac + CA(ref' -> prac))

* ``late``: independent per-stream ViT layers followed by ``joint_layers``
  joint self-attention layers over the 1024-token concatenation.
* ``early``: one shared encoder over the concatenation from the first layer.

The two final streams are concatenated along the token axis, normalised
and projected to the decoder width.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import torch
import torch.nn.functional as F
from torch import nn

from .audio import NUM_PATCHES, PATCH_DIM, PITCH_PATCHES, TIME_PATCHES
from .tokens import EOS, PAD, SOS, VOCAB_SIZE

FUSIONS = ("ladder", "late", "early")
INIT_GAIN = 0.02
# fixed input normalisation of log-mel patches (log floor is about -11.5)
INPUT_SHIFT = 6.0
INPUT_SCALE = 4.0


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    d_enc: int = 64
    d_dec: int = 64
    heads: int = 4
    dec_heads: int | None = None
    ff_mult: int = 4
    vocab_size: int = VOCAB_SIZE
    max_target_len: int = 256
    max_prompt_len: int = 256
    fusion: str = "ladder"
    joint_layers: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        if min(self.enc_layers, self.dec_layers, self.ff_mult, self.heads,
               self.decoder_heads) < 1:
            raise ValueError("layer counts, heads and ff_mult must be positive")
        if self.d_enc % self.heads:
            raise ValueError("d_enc must be divisible by heads")
        if self.d_dec % self.decoder_heads:
            raise ValueError("d_dec must be divisible by the decoder head count")
        if self.fusion == "late" and not 0 <= self.joint_layers <= self.enc_layers:
            raise ValueError("late fusion needs 0 <= joint_layers <= enc_layers")
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size must be {VOCAB_SIZE}")

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def paper(cls, **kw) -> "ModelConfig":
        base = dict(enc_layers=12, dec_layers=8, d_enc=768, d_dec=512, heads=12,
                    dec_heads=8, max_target_len=1024, max_prompt_len=1024)
        base.update(kw)
        return cls(**base)

    @property
    def decoder_heads(self) -> int:
        return self.dec_heads or self.heads

    @property
    def n_positions(self) -> int:
        return self.max_prompt_len + self.max_target_len + 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionMap:
    """Post-softmax attention of one layer.

    ``direction`` names query stream then key stream: ``"ref->prac"`` is the
    ref stream attending into prac (which updates ref). Joint layers are
    ``"self"``. ``values`` has shape (heads, Tq, Tk) for one input.
    """

    layer: int
    direction: str
    values: torch.Tensor
    pitch_averaged: torch.Tensor | None = field(default=None)


def pitch_average(values: torch.Tensor) -> torch.Tensor:
    """Collapse a (heads, 512, 512) patch attention to a 16x16 time map.

    Key pitch positions are summed (so rows stay stochastic) and query
    pitch positions and heads are averaged.
    """
    h = values.shape[0]
    v = values.reshape(h, PITCH_PATCHES, TIME_PATCHES, PITCH_PATCHES, TIME_PATCHES)
    return v.sum(dim=3).mean(dim=(0, 1))


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, d_context: int | None = None):
        super().__init__()
        d_context = d_context or d_model
        self.heads = heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_context, d_model)
        self.v = nn.Linear(d_context, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, x, ctx, *, causal=False, need_weights=False):
        B, Tq, D = x.shape
        Tk = ctx.shape[1]
        h = self.heads

        def split(t, T):
            return t.view(B, T, h, D // h).transpose(1, 2)

        q, k, v = split(self.q(x), Tq), split(self.k(ctx), Tk), split(self.v(ctx), Tk)
        weights = None
        if need_weights:
            scores = q @ k.transpose(-1, -2) / math.sqrt(D // h)
            if causal:
                mask = torch.ones(Tq, Tk, dtype=torch.bool, device=x.device).triu(1)
                scores = scores.masked_fill(mask, float("-inf"))
            weights = torch.softmax(scores, dim=-1)
            out = weights @ v
        else:
            out = F.scaled_dot_product_attention(q, k, v, is_causal=causal)
        out = out.transpose(1, 2).reshape(B, Tq, D)
        return self.o(out), weights


class FeedForward(nn.Sequential):
    def __init__(self, d: int, mult: int):
        super().__init__(nn.Linear(d, d * mult), nn.GELU(), nn.Linear(d * mult, d))


class ViTBlock(nn.Module):
    """Pre-norm self-attention + feed-forward with residuals."""

    def __init__(self, d: int, heads: int, ff_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, x, need_weights=False):
        y = self.ln1(x)
        a, w = self.attn(y, y, need_weights=need_weights)
        x = x + a
        return x + self.ff(self.ln2(x)), w


class CrossAttention(nn.Module):
    """Attention from the stream being updated (queries) into the other stream."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.ln_q = nn.LayerNorm(d)
        self.ln_kv = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)

    def forward(self, q_stream, kv_stream, need_weights=False):
        for t in (q_stream, kv_stream):
            if not torch.isfinite(t).all():
                raise ValueError("cross-attention input contains NaN or Inf")
        return self.attn(self.ln_q(q_stream), self.ln_kv(kv_stream), need_weights=need_weights)


class PatchEmbedding(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.proj = nn.Linear(PATCH_DIM, d)
        self.pos = nn.Parameter(torch.zeros(NUM_PATCHES, d))

    def forward(self, patches):
        if patches.shape[-2:] != (NUM_PATCHES, PATCH_DIM):
            raise ValueError(f"expected (..., {NUM_PATCHES}, {PATCH_DIM}) patches, "
                             f"got {tuple(patches.shape)}")
        return self.proj(patches) + self.pos


class EncoderOutput:
    def __init__(self, fused, maps=None, hidden=None):
        self.fused = fused
        self.maps = maps or []
        # hidden[l] = (ref, prac) token features after layer l (0 = embeddings)
        self.hidden = hidden or []


class LadderEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, L = cfg.d_enc, cfg.enc_layers
        self.embed_ref = PatchEmbedding(d)
        self.embed_prac = PatchEmbedding(d)
        self.ca_ref = nn.ModuleList(CrossAttention(d, cfg.heads) for _ in range(L))
        self.vit_ref = nn.ModuleList(ViTBlock(d, cfg.heads, cfg.ff_mult) for _ in range(L))
        self.ca_prac = nn.ModuleList(CrossAttention(d, cfg.heads) for _ in range(L))
        self.vit_prac = nn.ModuleList(ViTBlock(d, cfg.heads, cfg.ff_mult) for _ in range(L))

    def embed(self, ref, prac):
        return self.embed_ref(ref), self.embed_prac(prac)

    def block(self, i, ref, prac, maps=None):
        need = maps is not None
        a, w_ref = self.ca_ref[i](ref, prac, need_weights=need)
        ref, s_ref = self.vit_ref[i](ref + a, need_weights=need)
        a, w_prac = self.ca_prac[i](prac, ref, need_weights=need)
        prac, s_prac = self.vit_prac[i](prac + a, need_weights=need)
        if need:
            maps += [(i, "ref->prac", w_ref), (i, "prac->ref", w_prac),
                     (i, "self-ref", s_ref), (i, "self-prac", s_prac)]
        return ref, prac

    def forward(self, ref, prac, maps=None, hidden=None):
        ref, prac = self.embed(ref, prac)
        if hidden is not None:
            hidden.append((ref, prac))
        for i in range(len(self.vit_ref)):
            ref, prac = self.block(i, ref, prac, maps)
            if hidden is not None:
                hidden.append((ref, prac))
        return torch.cat([ref, prac], dim=1)


class LateFusionEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, shared: bool = False):
        super().__init__()
        d = cfg.d_enc
        self.shared = shared
        if shared:
            self.embed_shared = PatchEmbedding(d)
            n_sep, n_joint = 0, cfg.enc_layers
        else:
            self.embed_ref = PatchEmbedding(d)
            self.embed_prac = PatchEmbedding(d)
            n_joint = cfg.joint_layers
            n_sep = cfg.enc_layers - n_joint
        self.vit_ref = nn.ModuleList(ViTBlock(d, cfg.heads, cfg.ff_mult) for _ in range(n_sep))
        self.vit_prac = nn.ModuleList(ViTBlock(d, cfg.heads, cfg.ff_mult) for _ in range(n_sep))
        self.stream_emb = nn.Parameter(torch.zeros(2, d))
        self.joint = nn.ModuleList(ViTBlock(d, cfg.heads, cfg.ff_mult) for _ in range(n_joint))

    def embed(self, ref, prac):
        if self.shared:
            return self.embed_shared(ref), self.embed_shared(prac)
        return self.embed_ref(ref), self.embed_prac(prac)

    def forward(self, ref, prac, maps=None, hidden=None):
        need = maps is not None
        ref, prac = self.embed(ref, prac)
        if hidden is not None:
            hidden.append((ref, prac))
        for i, (br, bp) in enumerate(zip(self.vit_ref, self.vit_prac)):
            ref, w_r = br(ref, need_weights=need)
            prac, w_p = bp(prac, need_weights=need)
            if need:
                maps += [(i, "self-ref", w_r), (i, "self-prac", w_p)]
            if hidden is not None:
                hidden.append((ref, prac))
        if not len(self.joint):
            return torch.cat([ref, prac], dim=1)
        n = ref.shape[1]
        x = torch.cat([ref + self.stream_emb[0], prac + self.stream_emb[1]], dim=1)
        for k, blk in enumerate(self.joint):
            x, w = blk(x, need_weights=need)
            if need:
                maps.append((len(self.vit_ref) + k, "self", w))
            if hidden is not None:
                hidden.append((x[:, :n], x[:, n:]))
        return x


def build_encoder(cfg: ModelConfig) -> nn.Module:
    if cfg.fusion == "ladder":
        return LadderEncoder(cfg)
    return LateFusionEncoder(cfg, shared=cfg.fusion == "early")


class DecoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, ff_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads)
        self.ln3 = nn.LayerNorm(d)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, x, memory):
        y = self.ln1(x)
        x = x + self.self_attn(y, y, causal=True)[0]
        x = x + self.cross_attn(self.ln2(x), memory)[0]
        return x + self.ff(self.ln3(x))


class ErrorDetectionModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = build_encoder(cfg)
        self.enc_norm = nn.LayerNorm(cfg.d_enc)
        self.enc_proj = nn.Linear(cfg.d_enc, cfg.d_dec)
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_dec)
        self.dec_pos = nn.Parameter(torch.zeros(cfg.n_positions, cfg.d_dec))
        self.dec_layers = nn.ModuleList(
            DecoderLayer(cfg.d_dec, cfg.decoder_heads, cfg.ff_mult) for _ in range(cfg.dec_layers))
        self.dec_norm = nn.LayerNorm(cfg.d_dec)
        self.logits = nn.Linear(cfg.d_dec, cfg.vocab_size)
        init_parameters(self, cfg.seed)

    @staticmethod
    def _prep(patches):
        patches = torch.as_tensor(patches)
        if patches.dim() == 2:
            patches = patches.unsqueeze(0)
        return (patches + INPUT_SHIFT) / INPUT_SCALE

    def _cast(self, x):
        return x.to(self.logits.weight.dtype)

    def embed(self, patches_ref, patches_prac):
        ref, prac = self._prep(patches_ref), self._prep(patches_prac)
        if ref.shape != prac.shape:
            raise ValueError("ref and prac patch grids differ in shape")
        return self.encoder.embed(self._cast(ref), self._cast(prac))

    def encode(self, patches_ref, patches_prac, *, capture=False,
               keep_hidden=False) -> EncoderOutput:
        """Fused context of shape (B, 1024, d_dec), with optional maps/features."""
        ref, prac = self._cast(self._prep(patches_ref)), self._cast(self._prep(patches_prac))
        if ref.shape != prac.shape:
            raise ValueError("ref and prac patch grids differ in shape")
        raw = [] if capture else None
        hidden = [] if keep_hidden else None
        h = self.encoder(ref, prac, maps=raw, hidden=hidden)
        fused = self.enc_proj(self.enc_norm(h))
        maps = []
        for layer, direction, w in raw or []:
            maps.append(AttentionMap(layer, direction, w))
        return EncoderOutput(fused, maps, hidden)

    def decode_step(self, ids, fused):
        """Logits (B, T, vocab) for decoder inputs ``ids`` (B, T)."""
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        if ids.numel() and (ids.max() >= self.cfg.vocab_size or ids.min() < 0):
            raise ValueError("token id outside vocabulary")
        T = ids.shape[1]
        if T > self.cfg.n_positions:
            raise ValueError(f"decoder input of length {T} exceeds {self.cfg.n_positions}")
        x = self.tok_emb(ids) + self.dec_pos[:T]
        for layer in self.dec_layers:
            x = layer(x, fused)
        return self.logits(self.dec_norm(x))

    def forward(self, patches_ref, patches_prac, ids):
        return self.decode_step(ids, self.encode(patches_ref, patches_prac).fused)

    def zero_cross_attention(self):
        """Silence every alignment module (ladder only)."""
        with torch.no_grad():
            for ca in list(self.encoder.ca_ref) + list(self.encoder.ca_prac):
                ca.attn.o.weight.zero_()
                ca.attn.o.bias.zero_()


def init_parameters(model: nn.Module, seed: int):
    """Uniform(-0.02, 0.02) weights, zero biases, unit LayerNorm gains."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if ".ln" in name or "norm" in name:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.copy_((torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 - 1) * INIT_GAIN)


@torch.no_grad()
def greedy_decode(model: ErrorDetectionModel, fused, prompt=(), max_len: int | None = None
                  ) -> list[int]:
    """Argmax decoding from ``prompt ++ [SOS]`` until EOS or ``max_len`` tokens.

    Always returns ``[SOS, ..., EOS]``; SOS and PAD are never generated.
    """
    max_len = model.cfg.max_target_len if max_len is None else max_len
    prompt = list(prompt)[:model.cfg.max_prompt_len]
    if fused.dim() == 2:
        fused = fused.unsqueeze(0)
    seq = prompt + [SOS]
    out = [SOS]
    for _ in range(max_len):
        logits = model.decode_step(torch.tensor([seq]), fused)[0, -1].clone()
        logits[[PAD, SOS]] = float("-inf")
        tok = int(torch.argmax(logits))
        out.append(tok)
        if tok == EOS:
            return out
        seq.append(tok)
    out.append(EOS)
    return out


def config_replace(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw)
