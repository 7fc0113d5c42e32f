"""LLaMA-style decoder: RMSNorm pre-norm blocks, rotary attention, SwiGLU FFN.

Weights are held as float32; every forward pass runs in float64. Layers may
have different head counts and FFN widths once pruned.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .linalg import silu


@dataclass
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_head: int
    d_ff: int
    vocab_size: int
    rope_base: float = 10000.0
    norm_eps: float = 1e-5
    per_layer_heads: Optional[list] = None
    per_layer_dff: Optional[list] = None

    def __post_init__(self):
        if self.per_layer_heads is None:
            self.per_layer_heads = [self.n_heads] * self.n_layers
        if self.per_layer_dff is None:
            self.per_layer_dff = [self.d_ff] * self.n_layers
        self.per_layer_heads = [int(h) for h in self.per_layer_heads]
        self.per_layer_dff = [int(f) for f in self.per_layer_dff]
        self.validate()

    def validate(self):
        for name in ("n_layers", "d_model", "n_heads", "d_head", "d_ff", "vocab_size"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.n_heads * self.d_head != self.d_model:
            raise InvalidInputError(
                f"n_heads * d_head = {self.n_heads * self.d_head} != d_model = {self.d_model}"
            )
        if self.d_head % 2:
            raise InvalidInputError("d_head must be even for rotary embeddings")
        if len(self.per_layer_heads) != self.n_layers or len(self.per_layer_dff) != self.n_layers:
            raise InvalidInputError("per-layer vectors must have n_layers entries")
        for l, (h, f) in enumerate(zip(self.per_layer_heads, self.per_layer_dff)):
            if not 1 <= h <= self.n_heads:
                raise InvalidInputError(f"layer {l}: {h} heads outside [1, {self.n_heads}]")
            if not 1 <= f <= self.d_ff:
                raise InvalidInputError(f"layer {l}: d_ff {f} outside [1, {self.d_ff}]")


@dataclass
class LayerWeights:
    w_q: np.ndarray  # (heads_l * d_head, d_model)
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # (d_model, heads_l * d_head)
    w_gate: np.ndarray  # (d_ff_l, d_model)
    w_up: np.ndarray
    w_down: np.ndarray  # (d_model, d_ff_l)
    attn_norm: np.ndarray
    ffn_norm: np.ndarray
    d_head: int
    o_bias: Optional[np.ndarray] = None
    down_bias: Optional[np.ndarray] = None
    # Indices into the original (unpruned) layer.
    kept_heads: tuple = ()
    kept_channels: tuple = ()

    def __post_init__(self):
        if not self.kept_heads:
            self.kept_heads = tuple(range(self.n_heads))
        if not self.kept_channels:
            self.kept_channels = tuple(range(self.d_ff))

    @property
    def n_heads(self):
        return self.w_q.shape[0] // self.d_head

    @property
    def d_ff(self):
        return self.w_gate.shape[0]

    def tensors(self):
        out = {
            "attn_norm": self.attn_norm,
            "w_q": self.w_q,
            "w_k": self.w_k,
            "w_v": self.w_v,
            "w_o": self.w_o,
        }
        if self.o_bias is not None:
            out["o_bias"] = self.o_bias
        out.update(ffn_norm=self.ffn_norm, w_gate=self.w_gate, w_up=self.w_up, w_down=self.w_down)
        if self.down_bias is not None:
            out["down_bias"] = self.down_bias
        return out


@dataclass
class Model:
    config: ModelConfig
    tok_embeddings: np.ndarray  # (vocab, d_model)
    layers: list
    final_norm: np.ndarray
    lm_head: np.ndarray  # (vocab, d_model)

    def with_layer(self, index, layer):
        layers = list(self.layers)
        layers[index] = layer
        cfg = replace(
            self.config,
            per_layer_heads=[ly.n_heads for ly in layers],
            per_layer_dff=[ly.d_ff for ly in layers],
        )
        return Model(cfg, self.tok_embeddings, layers, self.final_norm, self.lm_head)

    def forward(self, tokens):
        return forward(self, tokens)


@dataclass
class CaptureSpec:
    """Which layers to record. Per-head outputs cost heads x N x d_model each."""

    layers: frozenset = frozenset()
    head_layers: frozenset = frozenset()

    @classmethod
    def all_layers(cls, n_layers, heads=False):
        ls = frozenset(range(n_layers))
        return cls(ls, ls if heads else frozenset())

    def wants(self, layer):
        return layer in self.layers or layer in self.head_layers


@dataclass
class LayerTrace:
    layer_input: np.ndarray
    layer_output: np.ndarray
    attn_input: np.ndarray  # attn_norm(layer_input)
    mha_preproj_input: np.ndarray
    mha_output: np.ndarray
    ffn_input: np.ndarray  # ffn_norm(residual after attention); feeds w_gate / w_up
    ffn_intermediate: np.ndarray
    ffn_output: np.ndarray
    head_outputs: Optional[np.ndarray] = None  # (heads, N, d_model)


@dataclass
class ActivationTrace:
    layers: dict = field(default_factory=dict)

    def __getitem__(self, layer):
        return self.layers[layer]

    def __len__(self):
        return len(self.layers)

    @property
    def n_tokens(self):
        for t in self.layers.values():
            return t.layer_input.shape[0]
        return 0


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def check_tokens(tokens, vocab_size):
    toks = np.asarray(tokens)
    if toks.ndim != 1 or toks.size < 1:
        raise InvalidInputError("tokens must be a non-empty 1-D sequence")
    if not np.issubdtype(toks.dtype, np.integer):
        raise InvalidInputError(f"token ids must be integers, got {toks.dtype}")
    toks = toks.astype(np.int64)
    bad = (toks < 0) | (toks >= vocab_size)
    if bad.any():
        i = int(np.argmax(bad))
        raise InvalidInputError(f"token id {int(toks[i])} at position {i} outside [0, {vocab_size})")
    return toks


def rmsnorm(x, weight, eps):
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps) * weight.astype(np.float64)


@lru_cache(maxsize=32)
def _rope_tables(n, d_head, base):
    inv = base ** (-np.arange(0, d_head, 2, dtype=np.float64) / d_head)
    ang = np.arange(n, dtype=np.float64)[:, None] * inv[None, :]
    cos = np.concatenate([np.cos(ang), np.cos(ang)], axis=1)
    sin = np.concatenate([np.sin(ang), np.sin(ang)], axis=1)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def apply_rope(x, base):
    """Rotate-half rotary embedding on (..., N, d_head)."""
    n, d = x.shape[-2], x.shape[-1]
    cos, sin = _rope_tables(n, d, float(base))
    half = d // 2
    rot = np.concatenate([-x[..., half:], x[..., :half]], axis=-1)
    return x * cos + rot * sin


def attention_heads(layer, xn, rope_base):
    """Per-head attention outputs before the output projection, shape (h, N, d_head)."""
    n = xn.shape[0]
    h, dh = layer.n_heads, layer.d_head
    q = (xn @ layer.w_q.T.astype(np.float64)).reshape(n, h, dh).transpose(1, 0, 2)
    k = (xn @ layer.w_k.T.astype(np.float64)).reshape(n, h, dh).transpose(1, 0, 2)
    v = (xn @ layer.w_v.T.astype(np.float64)).reshape(n, h, dh).transpose(1, 0, 2)
    q = apply_rope(q, rope_base)
    k = apply_rope(k, rope_base)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
    scores = np.where(np.tri(n, dtype=bool), scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    return p @ v


def mha(layer, xn, rope_base, per_head=False):
    """Returns ``(preproj, output, head_outputs)``; head_outputs is None unless asked."""
    heads = attention_heads(layer, xn, rope_base)
    n = xn.shape[0]
    preproj = heads.transpose(1, 0, 2).reshape(n, -1)
    w_o = layer.w_o.astype(np.float64)
    out = preproj @ w_o.T
    if layer.o_bias is not None:
        out = out + layer.o_bias.astype(np.float64)
    head_out = None
    if per_head:
        w_o3 = w_o.reshape(w_o.shape[0], layer.n_heads, layer.d_head)
        head_out = np.einsum("hnd,mhd->hnm", heads, w_o3)
    return preproj, out, head_out


def ffn_intermediate(layer, fn):
    gate = fn @ layer.w_gate.T.astype(np.float64)
    up = fn @ layer.w_up.T.astype(np.float64)
    return silu(gate) * up


def ffn_project(layer, inter):
    out = inter @ layer.w_down.T.astype(np.float64)
    if layer.down_bias is not None:
        out = out + layer.down_bias.astype(np.float64)
    return out


def layer_forward(layer, x, cfg, capture=False, per_head=False):
    xn = rmsnorm(x, layer.attn_norm, cfg.norm_eps)
    preproj, attn, head_out = mha(layer, xn, cfg.rope_base, per_head=per_head)
    h = x + attn
    fn = rmsnorm(h, layer.ffn_norm, cfg.norm_eps)
    inter = ffn_intermediate(layer, fn)
    ff = ffn_project(layer, inter)
    out = h + ff
    if not capture:
        return out, None
    return out, LayerTrace(
        layer_input=x,
        layer_output=out,
        attn_input=xn,
        mha_preproj_input=preproj,
        mha_output=attn,
        ffn_input=fn,
        ffn_intermediate=inter,
        ffn_output=ff,
        head_outputs=head_out,
    )


def embed(model, tokens):
    toks = check_tokens(tokens, model.config.vocab_size)
    return model.tok_embeddings[toks].astype(np.float64)


def final_logits(model, x):
    xn = rmsnorm(x, model.final_norm, model.config.norm_eps)
    return xn @ model.lm_head.T.astype(np.float64)


def forward(model, tokens):
    """Logits (N x vocab) for one token sequence under causal attention."""
    x = embed(model, tokens)
    for layer in model.layers:
        x, _ = layer_forward(layer, x, model.config)
    return final_logits(model, x)


def forward_with_trace(model, tokens, capture_spec=None):
    capture_spec = capture_spec or CaptureSpec()
    trace = ActivationTrace()
    x = embed(model, tokens)
    for l, layer in enumerate(model.layers):
        if capture_spec.wants(l):
            x, rec = layer_forward(layer, x, model.config, capture=True, per_head=l in capture_spec.head_layers)
            trace.layers[l] = rec
        else:
            x, _ = layer_forward(layer, x, model.config)
    return final_logits(model, x), trace


def hidden_states(model, tokens, upto):
    """Residual stream entering layer ``upto``."""
    x = embed(model, tokens)
    for layer in model.layers[:upto]:
        x, _ = layer_forward(layer, x, model.config)
    return x


# --------------------------------------------------------------------------
# structural pruning
# --------------------------------------------------------------------------


def _check_keep(keep, size, what):
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise InvalidInputError(f"cannot prune every {what}")
    if keep[0] < 0 or keep[-1] >= size:
        raise InvalidInputError(f"{what} index out of range [0, {size})")
    return np.asarray(keep, dtype=np.int64)


def prune_layer_heads(layer, keep):
    """Keep only the heads at positions ``keep`` (indices into the current layer)."""
    idx = _check_keep(keep, layer.n_heads, "head")
    dh = layer.d_head
    rows = (idx[:, None] * dh + np.arange(dh)[None, :]).ravel()
    return replace(
        layer,
        w_q=layer.w_q[rows].copy(),
        w_k=layer.w_k[rows].copy(),
        w_v=layer.w_v[rows].copy(),
        w_o=layer.w_o[:, rows].copy(),
        kept_heads=tuple(layer.kept_heads[i] for i in idx),
    )


def prune_layer_channels(layer, keep):
    """Keep only the FFN channels at positions ``keep``."""
    idx = _check_keep(keep, layer.d_ff, "channel")
    return replace(
        layer,
        w_gate=layer.w_gate[idx].copy(),
        w_up=layer.w_up[idx].copy(),
        w_down=layer.w_down[:, idx].copy(),
        kept_channels=tuple(layer.kept_channels[i] for i in idx),
    )
