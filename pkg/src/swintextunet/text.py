"""Text-embedding acquisition and the text-guided fusion blocks.

Embeddings come from one of two providers: a deterministic stub (hash-seeded
normal vectors, unit norm) or a CTXE file written by an external exporter
from a real frozen text tower. Providers are read-only; only the projection,
adapters and fusion blocks train.
"""
from __future__ import annotations

import difflib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import macs
from .autodiff import (Tensor, add, broadcast_to, concat, layer_norm, matmul,
                       permute, reshape, scale, softmax)
from .config import ModelConfig
from .errors import FormatError, ResolutionError, ShapeError, UsageError
from .module import Linear, LayerNormParams, Module, parameter, trunc_normal
from .encoder import Mlp

CTXE_MAGIC = b"CTXE"
CTXE_VERSION = 1


# ---------------------------------------------------------------------------
# prompt normalization and the stub encoder
# ---------------------------------------------------------------------------

def normalize_prompt(prompt: str) -> str:
    """Trim, lowercase, collapse internal whitespace runs to single spaces."""
    return " ".join(prompt.split()).lower()


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _splitmix64(state: int, count: int) -> np.ndarray:
    mask = 0xFFFFFFFFFFFFFFFF
    out = np.empty(count, dtype=np.uint64)
    x = state & mask
    for i in range(count):
        x = (x + 0x9E3779B97F4A7C15) & mask
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out[i] = z ^ (z >> 31)
    return out


def _standard_normals(state: int, count: int) -> np.ndarray:
    """Box-Muller over splitmix64-derived uniforms; fully deterministic."""
    pairs = (count + 1) // 2
    words = _splitmix64(state, 2 * pairs)
    u1 = ((words[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) / 2.0 ** 53  # (0, 1]
    u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) / 2.0 ** 53  # [0, 1)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:count]


@dataclass(frozen=True)
class TextEmbedding:
    """Pooled prompt vector plus its single-token sequence form."""

    prompt: str
    pooled: np.ndarray  # (D_t,)

    @property
    def tokens(self) -> np.ndarray:  # (1, D_t); T == 1 throughout
        return self.pooled[None, :]

    @property
    def dim(self) -> int:
        return self.pooled.shape[0]


def stub_encode(prompt: str, dim: int, seed: int = 0) -> TextEmbedding:
    """Deterministic stand-in for a frozen text tower: hash-seeded unit vector."""
    norm = normalize_prompt(prompt)
    if not norm:
        raise UsageError("cannot encode an empty prompt")
    state = fnv1a64(norm.encode("utf-8")) ^ (seed & 0xFFFFFFFFFFFFFFFF)
    vec = _standard_normals(state, dim)
    vec /= np.linalg.norm(vec)
    return TextEmbedding(prompt=norm, pooled=vec)


# ---------------------------------------------------------------------------
# CTXE file format
# ---------------------------------------------------------------------------

def write_ctxe(path, embeddings: dict[str, np.ndarray]) -> None:
    """Write prompt->vector records; prompts are normalized, float32 payload."""
    items = []
    dim = None
    for prompt, vec in embeddings.items():
        norm = normalize_prompt(prompt)
        if not norm:
            raise UsageError("cannot store an empty prompt")
        vec = np.asarray(vec, dtype=np.float32)
        if vec.ndim != 1:
            raise ShapeError(f"embedding for {norm!r} must be 1-D, got shape {vec.shape}")
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise ShapeError(f"embedding dims disagree: {vec.shape[0]} vs {dim}")
        items.append((norm, vec))
    if dim is None:
        dim = 0
    items.sort(key=lambda kv: kv[0])
    with open(path, "wb") as fh:
        fh.write(CTXE_MAGIC)
        fh.write(struct.pack("<III", CTXE_VERSION, len(items), dim))
        for norm, vec in items:
            raw = norm.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(vec.astype("<f4").tobytes())


def load_ctxe(path) -> tuple[int, dict[str, np.ndarray]]:
    """Read a CTXE file; FormatError diagnostics carry the byte offset."""
    blob = Path(path).read_bytes()

    def need(offset: int, count: int, what: str) -> bytes:
        if offset + count > len(blob):
            raise FormatError(f"truncated CTXE file at byte {offset}: expected {what}")
        return blob[offset:offset + count]

    if need(0, 4, "magic") != CTXE_MAGIC:
        raise FormatError(f"bad magic at byte 0: expected {CTXE_MAGIC!r}, got {blob[:4]!r}")
    version, count, dim = struct.unpack("<III", need(4, 12, "header"))
    if version != CTXE_VERSION:
        raise FormatError(f"unsupported CTXE version {version} at byte 4")
    pos = 16
    table: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<I", need(pos, 4, f"record {i} prompt length"))
        pos += 4
        raw = need(pos, nlen, f"record {i} prompt bytes")
        pos += nlen
        try:
            prompt = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {i} prompt at byte {pos - nlen} is not UTF-8: {exc}") from None
        payload = need(pos, 4 * dim, f"record {i} payload ({dim} floats)")
        pos += 4 * dim
        key = normalize_prompt(prompt)
        if key in table:
            raise FormatError(f"duplicate prompt {key!r} in record {i}")
        table[key] = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after record {count - 1} at byte {pos}")
    return dim, table


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------

class StubTextProvider:
    """Prompt -> deterministic unit-norm vector; always resolves."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def get(self, prompt: str) -> np.ndarray:
        return stub_encode(prompt, self.dim, self.seed).pooled


class FileTextProvider:
    """Prompt -> stored vector from a CTXE file; optional L2 normalization."""

    def __init__(self, path, normalize: bool = True):
        self.dim, self._table = load_ctxe(path)
        self.normalize = normalize

    def get(self, prompt: str) -> np.ndarray:
        key = normalize_prompt(prompt)
        vec = self._table.get(key)
        if vec is None:
            near = difflib.get_close_matches(key, self._table.keys(), n=3, cutoff=0.0)
            raise ResolutionError(
                f"prompt {key!r} not found in embedding file; nearest keys: {near}"
            )
        if self.normalize:
            n = np.linalg.norm(vec)
            if n > 0:
                vec = vec / n
        return vec


def embedding_batch(provider, prompts: list[str], dtype) -> Tensor:
    """Stack provider vectors into a frozen (B, 1, D_t) tensor."""
    vecs = [provider.get(p) for p in prompts]
    arr = np.stack(vecs).astype(dtype)[:, None, :]
    return Tensor(arr, requires_grad=False)


# ---------------------------------------------------------------------------
# projection and fusion blocks
# ---------------------------------------------------------------------------

class TextProjector(Module):
    """Trainable map from the frozen embedding space into each stage width."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype):
        dv = cfg.resolved_visual_dim
        self.w_t = parameter(trunc_normal(rng, (cfg.text_dim, dv)), dtype)
        self.adapters = [
            Linear(dv, st.channels, rng, dtype, bias=False) for st in cfg.stages
        ]

    def project(self, text: Tensor, stage_index: int) -> Tensor:
        """(B, 1, D_t) -> (B, 1, C_s)."""
        if text.shape[-1] != self.w_t.shape[0]:
            raise ShapeError(
                f"text dim {text.shape[-1]} != projector input {self.w_t.shape[0]}"
            )
        aligned = matmul(text, self.w_t)
        return self.adapters[stage_index](aligned)


class CrossAttentionBlock(Module):
    """Vision queries attend to the single text token; residual + MLP refine.

    With one key the softmax is exactly 1 for every query, so the attention
    contribution per spatial token equals the (projected) text value vector.
    """

    def __init__(self, dim: int, rng: np.random.Generator, dtype, heads: int | None = None):
        self.dim = dim
        self.heads = heads if heads is not None else max(1, dim // 32)
        if dim % self.heads:
            raise ShapeError(f"cross-attention heads {self.heads} do not divide {dim}")
        self.wq = Linear(dim, dim, rng, dtype, bias=False)
        self.wk = Linear(dim, dim, rng, dtype, bias=False)
        self.wv = Linear(dim, dim, rng, dtype, bias=False)
        self.proj = Linear(dim, dim, rng, dtype)
        self.norm1 = LayerNormParams(dim, dtype)
        self.norm2 = LayerNormParams(dim, dtype)
        self.mlp = Mlp(dim, 4 * dim, rng, dtype)
        self.record_attn = False
        self.last_attn: np.ndarray | None = None

    def forward(self, z: Tensor, text: Tensor) -> Tensor:
        b, n, c = z.shape
        if text.shape != (b, 1, c):
            raise ShapeError(f"text token shape {text.shape} != ({b}, 1, {c})")
        h, d = self.heads, self.dim // self.heads

        q = permute(reshape(self.wq(z), (b, n, h, d)), (0, 2, 1, 3))
        k = permute(reshape(self.wk(text), (b, 1, h, d)), (0, 2, 1, 3))
        v = permute(reshape(self.wv(text), (b, 1, h, d)), (0, 2, 1, 3))

        with macs.scope("cross_attn_matmul"):
            logits = matmul(q, permute(k, (0, 1, 3, 2)))
        attn = softmax(scale(logits, 1.0 / math.sqrt(d)), axis=-1)
        if self.record_attn:
            self.last_attn = attn.data.copy()
        with macs.scope("cross_attn_matmul"):
            ctx = matmul(attn, v)
        ctx = reshape(permute(ctx, (0, 2, 1, 3)), (b, n, c))
        ctx = self.proj(ctx)

        z1 = layer_norm(add(z, ctx), self.norm1.gamma, self.norm1.beta)
        z2 = layer_norm(z1, self.norm2.gamma, self.norm2.beta)
        return add(z1, self.mlp(z2))


class ConcatFusion(Module):
    """Ablation path: broadcast-concatenate the text token, map back to C."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype):
        self.proj = Linear(2 * dim, dim, rng, dtype)

    def forward(self, z: Tensor, text: Tensor) -> Tensor:
        b, n, c = z.shape
        tb = broadcast_to(text, (b, n, c))
        return self.proj(concat([z, tb], axis=2))


class Guidance(Module):
    """Applies per-stage text fusion according to the ablation flags."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype):
        self.cfg = cfg
        self.projector = None
        self.blocks: list[Module] = []
        if cfg.use_text:
            self.projector = TextProjector(cfg, rng, dtype)
            for st in cfg.stages:
                if cfg.use_cross_attention:
                    self.blocks.append(CrossAttentionBlock(st.channels, rng, dtype))
                else:
                    self.blocks.append(ConcatFusion(st.channels, rng, dtype))

    def apply(self, tokens: list[Tensor], text: Tensor | None) -> list[Tensor]:
        if not self.cfg.use_text:
            return tokens
        if text is None:
            raise UsageError("guidance is enabled but no text embedding was provided")
        out = []
        for i, z in enumerate(tokens):
            t = self.projector.project(text, i)
            out.append(self.blocks[i](z, t))
        return out
