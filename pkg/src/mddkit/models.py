"""Desk-scale neural components.

Encoder: input projection, rotary position embedding, conv +
self-attention blocks, plus two heads (per-frame vocabulary logits and
the scalar frame score feeding the transport marginals). Decoder:
autoregressive transformer with causal self-attention and
cross-attention over the encoder states. Teacher: two fusion branches
that cross-attend canonical embeddings over (downsampled) encoder
states and decoder states, a shared conv trunk, and dual heads for
error position and error type. The teacher exists only at training
time; detach_teacher strips it for inference.

Rotary embeddings are applied both to block inputs and to every
attention query/key, which makes cross-attention sensitive to memory
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "EncoderConfig",
    "DecoderConfig",
    "TeacherConfig",
    "Encoder",
    "Decoder",
    "Teacher",
    "Model",
    "rope",
    "detach_teacher",
]

MASK_VALUE = -1e9


@dataclass
class EncoderConfig:
    input_dim: int
    vocab_size: int
    hidden_dim: int = 64
    num_conv_blocks: int = 2
    kernel_size: int = 3
    conv_stride: int = 1
    num_heads: int = 4

    def __post_init__(self):
        if self.hidden_dim < 8:
            raise ValueError("encoder hidden_dim must be at least 8")
        _check_heads(self.hidden_dim, self.num_heads)


@dataclass
class DecoderConfig:
    vocab_size: int
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    bos_id: int = 1
    eos_id: int = 2
    # stride of the non-overlapping mean pool applied to h_enc before
    # cross-attention; 1 keeps the full frame resolution
    memory_pool: int = 1

    def __post_init__(self):
        _check_heads(self.hidden_dim, self.num_heads)
        if self.memory_pool < 1:
            raise ValueError("memory_pool must be >= 1")


@dataclass
class TeacherConfig:
    fun_layers: int = 2
    downsample_factor: int = 4
    trunk_dim: int = 32
    pos_branch_dim: int = 16
    num_heads: int = 4

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ValueError("downsample_factor must be >= 1")


def _check_heads(dim: int, heads: int) -> None:
    if dim % heads != 0:
        raise ValueError(f"hidden_dim {dim} not divisible by num_heads {heads}")
    if (dim // heads) % 2 != 0:
        raise ValueError(f"head dim {dim // heads} must be even for rotary embeddings")


# ---------------------------------------------------------------------------
# rotary position embedding

_ROPE_CACHE: dict = {}


def _rope_tables(length: int, dim: int, base: float):
    key = (length, dim, base)
    hit = _ROPE_CACHE.get(key)
    if hit is not None:
        return hit
    half = dim // 2
    theta = base ** (-2.0 * np.arange(half) / dim)
    ang = np.arange(length)[:, None] * theta[None, :]
    cos = np.repeat(np.cos(ang), 2, axis=1)
    sin = np.repeat(np.sin(ang), 2, axis=1)
    # R maps x to its pairwise quarter-turn: (x0,x1) -> (-x1, x0)
    R = np.zeros((dim, dim))
    idx = np.arange(half)
    R[2 * idx + 1, 2 * idx] = -1.0
    R[2 * idx, 2 * idx + 1] = 1.0
    out = (Tensor(cos), Tensor(sin), Tensor(R))
    _ROPE_CACHE[key] = out
    return out


def rope(x: Tensor, base: float = 10000.0) -> Tensor:
    """Rotate consecutive embedding pairs by position-dependent angles.

    Row p of the output is row p of x rotated by angles p * base^(-2k/D);
    position 0 is the identity and every rotation preserves norm.
    """
    if x.ndim != 2:
        raise ValueError(f"rope expects (length, dim), got shape {x.shape}")
    L, D = x.shape
    if D % 2 != 0:
        raise ValueError(f"rope needs an even embedding dim, got {D}")
    cos, sin, R = _rope_tables(L, D, base)
    return ad.mul(x, cos) + ad.mul(ad.matmul(x, R), sin)


# ---------------------------------------------------------------------------
# parameter plumbing

class ParamStore:
    """Flat name -> Tensor registry shared by one model instance."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        t = Tensor(self.rng.uniform(-bound, bound, size=shape), requires_grad=True)
        self.params[name] = t
        return t

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.zeros(shape), requires_grad=True)
        self.params[name] = t
        return t

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.ones(shape), requires_grad=True)
        self.params[name] = t
        return t


class Linear:
    def __init__(self, store: ParamStore, prefix: str, d_in: int, d_out: int):
        self.W = store.add(f"{prefix}.W", (d_in, d_out), d_in)
        self.b = store.zeros(f"{prefix}.b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.W) + self.b


class LayerNorm:
    def __init__(self, store: ParamStore, prefix: str, dim: int):
        self.gain = store.ones(f"{prefix}.gain", (dim,))
        self.bias = store.zeros(f"{prefix}.bias", (dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention:
    """Scaled dot-product attention with rotary q/k and head-mean map."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, heads: int):
        _check_heads(dim, heads)
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(store, f"{prefix}.q", dim, dim)
        self.k = Linear(store, f"{prefix}.k", dim, dim)
        self.v = Linear(store, f"{prefix}.v", dim, dim)
        self.o = Linear(store, f"{prefix}.o", dim, dim)

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: Tensor | None = None):
        q = self.q(q_in)
        k = self.k(kv_in)
        v = self.v(kv_in)
        scale = Tensor(1.0 / math.sqrt(self.head_dim))
        ctx_parts = []
        attn_sum = None
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            qh = rope(q[:, cols])
            kh = rope(k[:, cols])
            vh = v[:, cols]
            scores = ad.matmul(qh, ad.transpose(kh)) * scale
            if mask is not None:
                scores = scores + mask
            w = ad.softmax(scores, axis=1)
            ctx_parts.append(ad.matmul(w, vh))
            attn_sum = w if attn_sum is None else attn_sum + w
        out = self.o(ad.concat(ctx_parts, axis=1))
        return out, attn_sum * Tensor(1.0 / self.heads)


def causal_mask(length: int) -> Tensor:
    m = np.triu(np.full((length, length), MASK_VALUE), k=1)
    return Tensor(m)


# ---------------------------------------------------------------------------
# encoder

class Encoder:
    """Conv + self-attention stack with vocabulary and frame-score heads."""

    def __init__(self, cfg: EncoderConfig, store: ParamStore, prefix: str = "enc"):
        self.cfg = cfg
        H = cfg.hidden_dim
        self.in_proj = Linear(store, f"{prefix}.in", cfg.input_dim, H)
        self.blocks = []
        for i in range(cfg.num_conv_blocks):
            blk = {
                "conv": store.add(f"{prefix}.block{i}.conv",
                                  (cfg.kernel_size, H, H), cfg.kernel_size * H),
                "ln1": LayerNorm(store, f"{prefix}.block{i}.ln1", H),
                "attn": MultiHeadAttention(store, f"{prefix}.block{i}.attn", H, cfg.num_heads),
                "ln2": LayerNorm(store, f"{prefix}.block{i}.ln2", H),
            }
            self.blocks.append(blk)
        self.vocab_head = Linear(store, f"{prefix}.vocab", H, cfg.vocab_size)
        self.score_head = Linear(store, f"{prefix}.score", H, 1)

    def __call__(self, x):
        """x: (n, input_dim) array or Tensor.

        Returns (h_enc, frame_logits, frame_scores) with one row per
        retained frame (n' = n at the default stride of 1).
        """
        t = x if isinstance(x, Tensor) else Tensor(x)
        if t.ndim != 2 or t.shape[1] != self.cfg.input_dim:
            raise ValueError(f"expected (n, {self.cfg.input_dim}) input, got {t.shape}")
        h = rope(self.in_proj(t))
        for blk in self.blocks:
            c = ad.relu(ad.conv1d(h, blk["conv"], stride=self.cfg.conv_stride))
            h = blk["ln1"](c)
            att, _ = blk["attn"](h, h)
            h = blk["ln2"](h + att)
        frame_logits = self.vocab_head(h)
        frame_scores = self.score_head(h)[:, 0]
        return h, frame_logits, frame_scores


# ---------------------------------------------------------------------------
# decoder

def _pool_rows(x: Tensor, stride: int) -> Tensor:
    """Mean over non-overlapping row windows; the tail window may be short."""
    n = x.shape[0]
    if stride <= 1 or n <= 1:
        return x
    w = (n + stride - 1) // stride
    pool = np.zeros((w, n))
    for i in range(w):
        lo, hi = i * stride, min((i + 1) * stride, n)
        pool[i, lo:hi] = 1.0 / (hi - lo)
    return ad.matmul(Tensor(pool), x)


class Decoder:
    """Autoregressive phoneme decoder with cross-attention over h_enc.

    The decoder sees the encoder states through a coarse temporal pool
    (cfg.memory_pool): it supplies linguistic structure and a soft
    acoustic gist, while frame-level fidelity stays the acoustic path's
    job. With a pool wider than a phoneme segment the decoder's prior
    dominates at decode time, which is what the lambda sweep measures."""

    def __init__(self, cfg: DecoderConfig, store: ParamStore, prefix: str = "dec"):
        self.cfg = cfg
        H = cfg.hidden_dim
        self.embed = store.add(f"{prefix}.embed", (cfg.vocab_size, H), H)
        self.layers = []
        for i in range(cfg.num_layers):
            layer = {
                "self": MultiHeadAttention(store, f"{prefix}.layer{i}.self", H, cfg.num_heads),
                "ln1": LayerNorm(store, f"{prefix}.layer{i}.ln1", H),
                "cross": MultiHeadAttention(store, f"{prefix}.layer{i}.cross", H, cfg.num_heads),
                "ln2": LayerNorm(store, f"{prefix}.layer{i}.ln2", H),
            }
            self.layers.append(layer)
        self.out = Linear(store, f"{prefix}.out", H, cfg.vocab_size)

    def _check_prefix(self, ids: np.ndarray) -> None:
        if ids.size == 0 or ids[0] != self.cfg.bos_id:
            raise ValueError(f"prefix must begin with <bos> id {self.cfg.bos_id}")
        if np.any(ids[1:] == self.cfg.eos_id):
            raise ValueError("prefix must not contain <eos>")
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise ValueError("prefix ids outside vocabulary")

    def forward_hidden(self, h_enc: Tensor, ids) -> tuple[Tensor, Tensor]:
        """Teacher-forced pass; returns (hidden states, logit rows).

        The hidden states are the pre-projection representations the
        teacher fuses against as h_dec."""
        ids = np.asarray(ids, dtype=np.int64)
        self._check_prefix(ids)
        memory = _pool_rows(h_enc, self.cfg.memory_pool)
        x = rope(ad.gather_rows(self.embed, ids))
        mask = causal_mask(ids.shape[0])
        for layer in self.layers:
            sa, _ = layer["self"](x, x, mask)
            x = layer["ln1"](x + sa)
            ca, _ = layer["cross"](x, memory)
            x = layer["ln2"](x + ca)
        return x, self.out(x)

    def forward_full(self, h_enc: Tensor, ids) -> Tensor:
        """Teacher-forced pass; returns one logit row per input position."""
        return self.forward_hidden(h_enc, ids)[1]

    def decode_step(self, h_enc: Tensor, prefix) -> Tensor:
        """Next-token log-probabilities after the given prefix."""
        logits = self.forward_full(h_enc, prefix)
        last = logits[logits.shape[0] - 1 :, :]
        return ad.log_softmax(last, axis=1)[0, :]


# ---------------------------------------------------------------------------
# teacher

class Teacher:
    """Privileged-information branch used only during training."""

    def __init__(self, cfg: TeacherConfig, backbone_dim: int, vocab_size: int,
                 store: ParamStore, prefix: str = "teach"):
        self.cfg = cfg
        H = backbone_dim
        self.embed = store.add(f"{prefix}.embed", (vocab_size, H), H)
        self.ds_conv = store.add(
            f"{prefix}.ds.conv",
            (cfg.downsample_factor, H, H),
            cfg.downsample_factor * H,
        )
        self.branches = {}
        for branch in ("enc", "dec"):
            layers = []
            for i in range(cfg.fun_layers):
                p = f"{prefix}.fun_{branch}.layer{i}"
                layers.append({
                    "self": MultiHeadAttention(store, f"{p}.self", H, cfg.num_heads),
                    "ln1": LayerNorm(store, f"{p}.ln1", H),
                    "cross": MultiHeadAttention(store, f"{p}.cross", H, cfg.num_heads),
                    "ln2": LayerNorm(store, f"{p}.ln2", H),
                })
            self.branches[branch] = layers
        self.trunk = store.add(f"{prefix}.trunk.conv", (3, 2 * H, cfg.trunk_dim),
                               3 * 2 * H)
        self.pos_conv1 = store.add(f"{prefix}.pos.conv1",
                                   (3, cfg.trunk_dim, cfg.pos_branch_dim),
                                   3 * cfg.trunk_dim)
        self.pos_conv2 = store.add(f"{prefix}.pos.conv2",
                                   (3, cfg.pos_branch_dim, 1),
                                   3 * cfg.pos_branch_dim)
        self.cls = Linear(store, f"{prefix}.cls", cfg.trunk_dim, 4)

    def _fuse(self, branch: str, h_can: Tensor, memory: Tensor) -> tuple[Tensor, Tensor]:
        x = h_can
        attn = None
        for layer in self.branches[branch]:
            sa, _ = layer["self"](x, x)
            x = layer["ln1"](x + sa)
            ca, attn = layer["cross"](x, memory)
            x = layer["ln2"](x + ca)
        return x, attn

    def __call__(self, h_enc: Tensor, h_dec: Tensor, canonical):
        """Returns (pos_probs, type_probs, attn_maps) for m canonical ids.

        attn_maps holds the last fusion layer's head-averaged
        cross-attention of each branch, the target of the
        guided-attention loss and the raw material for heatmaps.
        """
        ids = np.asarray(canonical, dtype=np.int64)
        if ids.size < 1:
            raise ValueError("canonical sequence must be nonempty")
        ds = ad.relu(ad.conv1d(h_enc, self.ds_conv, stride=self.cfg.downsample_factor))
        if ds.shape[0] < 1:
            raise ValueError("downsampled encoder memory is empty")
        h_can = rope(ad.gather_rows(self.embed, ids))
        fused_enc, attn_enc = self._fuse("enc", h_can, ds)
        fused_dec, attn_dec = self._fuse("dec", h_can, h_dec)
        h_mis = ad.concat([fused_enc, fused_dec], axis=1)
        u = ad.relu(ad.conv1d(h_mis, self.trunk))
        p = ad.relu(ad.conv1d(u, self.pos_conv1))
        pos_probs = ad.sigmoid(ad.conv1d(p, self.pos_conv2)[:, 0])
        type_probs = ad.softmax(self.cls(u), axis=1)
        return pos_probs, type_probs, {"enc": attn_enc, "dec": attn_dec}


# ---------------------------------------------------------------------------
# full model

class Model:
    """Encoder + decoder, with an optional training-time teacher."""

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
                 teach_cfg: TeacherConfig | None = None, seed: int = 0):
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.teach_cfg = teach_cfg
        self.seed = int(seed)
        store = ParamStore(np.random.default_rng([self.seed, 0x6D6F64]))
        self.encoder = Encoder(enc_cfg, store)
        self.decoder = Decoder(dec_cfg, store)
        self.teacher = None
        if teach_cfg is not None:
            self.teacher = Teacher(teach_cfg, enc_cfg.hidden_dim,
                                   dec_cfg.vocab_size, store)
        self.store = store

    def params(self) -> dict[str, Tensor]:
        return dict(self.store.params)

    def named_subset(self, *prefixes: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.store.params.items()
                if any(k.startswith(p) for p in prefixes)}


def detach_teacher(model: Model) -> Model:
    """Inference view of a trained model: encoder + decoder only.

    Parameters are shared with the input model, not copied; the teacher
    and its parameters are simply absent from the result.
    """
    out = Model.__new__(Model)
    out.enc_cfg = model.enc_cfg
    out.dec_cfg = model.dec_cfg
    out.teach_cfg = None
    out.seed = model.seed
    out.encoder = model.encoder
    out.decoder = model.decoder
    out.teacher = None
    store = ParamStore(np.random.default_rng(0))
    store.params = {k: v for k, v in model.store.params.items()
                    if not k.startswith("teach")}
    out.store = store
    return out
