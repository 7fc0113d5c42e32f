"""On-disk model format.

A model directory holds three files:

``config.json``
    architecture plus per-layer head/channel bookkeeping.
``manifest.json``
    ``{"entries": [{"name", "dtype": "f32", "shape", "byte_offset"}, ...],
    "total_bytes": int}`` with entries packed back to back.
``weights.bin``
    little-endian float32, row-major, concatenated in manifest order.

Token files (``*.tokens``) are bare little-endian uint32 ids.
"""
import json
import os
from pathlib import Path

import numpy as np

from .errors import (
    InvalidInputError,
    MissingTensorError,
    ModelFormatError,
    NonFiniteWeightError,
    ShapeMismatchError,
    UnexpectedTensorError,
)
from .model import LayerWeights, Model, ModelConfig
from .rng import Xoshiro256

CONFIG_KEYS = (
    "n_layers",
    "d_model",
    "n_heads",
    "d_head",
    "d_ff",
    "vocab_size",
    "rope_base",
    "norm_eps",
    "per_layer_heads",
    "per_layer_dff",
    "has_output_biases",
    "kept_head_indices",
    "kept_channel_indices",
)

_LE_F32 = np.dtype("<f4")
_LE_U32 = np.dtype("<u4")


def expected_shapes(cfg, biases):
    """Ordered ``name -> shape`` for every tensor a config requires.

    ``biases`` is a per-layer list of ``(has_o_bias, has_down_bias)``.
    """
    d = cfg.d_model
    shapes = {"tok_embeddings": (cfg.vocab_size, d)}
    for l in range(cfg.n_layers):
        hd = cfg.per_layer_heads[l] * cfg.d_head
        f = cfg.per_layer_dff[l]
        p = f"layers.{l}."
        shapes[p + "attn_norm"] = (d,)
        shapes[p + "w_q"] = (hd, d)
        shapes[p + "w_k"] = (hd, d)
        shapes[p + "w_v"] = (hd, d)
        shapes[p + "w_o"] = (d, hd)
        if biases[l][0]:
            shapes[p + "o_bias"] = (d,)
        shapes[p + "ffn_norm"] = (d,)
        shapes[p + "w_gate"] = (f, d)
        shapes[p + "w_up"] = (f, d)
        shapes[p + "w_down"] = (d, f)
        if biases[l][1]:
            shapes[p + "down_bias"] = (d,)
    shapes["final_norm"] = (d,)
    shapes["lm_head"] = (cfg.vocab_size, d)
    return shapes


def model_tensors(model):
    out = {"tok_embeddings": model.tok_embeddings}
    for l, layer in enumerate(model.layers):
        for name, arr in layer.tensors().items():
            out[f"layers.{l}.{name}"] = arr
    out["final_norm"] = model.final_norm
    out["lm_head"] = model.lm_head
    return out


def _bias_flags(model):
    return [[ly.o_bias is not None, ly.down_bias is not None] for ly in model.layers]


def build_manifest(tensors):
    entries = []
    offset = 0
    for name, arr in tensors.items():
        entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape), "byte_offset": offset})
        offset += 4 * int(arr.size)
    return {"entries": entries, "total_bytes": offset}


def save_model(model, directory):
    directory = Path(directory)
    cfg = model.config
    tensors = model_tensors(model)
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteWeightError(f"refusing to save non-finite tensor {name}", tensor=name)
    config = {
        "n_layers": cfg.n_layers,
        "d_model": cfg.d_model,
        "n_heads": cfg.n_heads,
        "d_head": cfg.d_head,
        "d_ff": cfg.d_ff,
        "vocab_size": cfg.vocab_size,
        "rope_base": float(cfg.rope_base),
        "norm_eps": float(cfg.norm_eps),
        "per_layer_heads": [ly.n_heads for ly in model.layers],
        "per_layer_dff": [ly.d_ff for ly in model.layers],
        "has_output_biases": _bias_flags(model),
        "kept_head_indices": [list(map(int, ly.kept_heads)) for ly in model.layers],
        "kept_channel_indices": [list(map(int, ly.kept_channels)) for ly in model.layers],
    }
    manifest = build_manifest(tensors)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "config.json", "w", encoding="utf-8") as f:
            json.dump(config, f, indent=1)
        with open(directory / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1)
        with open(directory / "weights.bin", "wb") as f:
            for arr in tensors.values():
                f.write(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    except OSError as e:
        raise OSError(f"failed writing model to {directory}: {e}") from e


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ModelFormatError(f"missing {path.name} in {path.parent}") from e
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path} is not valid JSON: {e}") from e


def _parse_bias_flags(raw, n_layers):
    if isinstance(raw, bool):
        return [[raw, raw] for _ in range(n_layers)]
    if not isinstance(raw, list) or len(raw) != n_layers:
        raise ModelFormatError("has_output_biases must be a bool or one [o, down] pair per layer")
    flags = []
    for pair in raw:
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(b, bool) for b in pair)):
            raise ModelFormatError(f"bad has_output_biases entry {pair!r}")
        flags.append(pair)
    return flags


def load_model(directory):
    directory = Path(directory)
    raw = _read_json(directory / "config.json")
    missing = [k for k in CONFIG_KEYS if k not in raw]
    extra = [k for k in raw if k not in CONFIG_KEYS]
    if missing or extra:
        raise ModelFormatError(f"config.json keys wrong: missing {missing}, unexpected {extra}")
    try:
        cfg = ModelConfig(
            n_layers=int(raw["n_layers"]),
            d_model=int(raw["d_model"]),
            n_heads=int(raw["n_heads"]),
            d_head=int(raw["d_head"]),
            d_ff=int(raw["d_ff"]),
            vocab_size=int(raw["vocab_size"]),
            rope_base=float(raw["rope_base"]),
            norm_eps=float(raw["norm_eps"]),
            per_layer_heads=list(raw["per_layer_heads"]),
            per_layer_dff=list(raw["per_layer_dff"]),
        )
    except InvalidInputError as e:
        raise ModelFormatError(f"invalid config.json: {e}") from e
    biases = _parse_bias_flags(raw["has_output_biases"], cfg.n_layers)
    kept_h = raw["kept_head_indices"]
    kept_c = raw["kept_channel_indices"]
    for l in range(cfg.n_layers):
        if len(kept_h[l]) != cfg.per_layer_heads[l] or len(kept_c[l]) != cfg.per_layer_dff[l]:
            raise ModelFormatError(f"layer {l}: kept index lists disagree with per-layer sizes")

    manifest = _read_json(directory / "manifest.json")
    shapes = expected_shapes(cfg, biases)
    entries = manifest.get("entries", [])
    offset = 0
    seen = {}
    for e in entries:
        name = e["name"]
        if name in seen:
            raise UnexpectedTensorError(f"tensor {name} listed twice", tensor=name)
        if name not in shapes:
            raise UnexpectedTensorError(f"unexpected tensor {name}", tensor=name)
        if e.get("dtype") != "f32":
            raise ModelFormatError(f"tensor {name} has dtype {e.get('dtype')!r}, expected f32", tensor=name)
        if tuple(e["shape"]) != shapes[name]:
            raise ShapeMismatchError(
                f"tensor {name} has shape {tuple(e['shape'])}, config implies {shapes[name]}", tensor=name
            )
        if e["byte_offset"] != offset:
            raise ModelFormatError(f"tensor {name} at offset {e['byte_offset']}, expected {offset}", tensor=name)
        seen[name] = e
        offset += 4 * int(np.prod(shapes[name], dtype=np.int64))
    for name in shapes:
        if name not in seen:
            raise MissingTensorError(f"tensor {name} missing from manifest", tensor=name)
    if manifest.get("total_bytes") != offset:
        raise ModelFormatError(f"manifest total_bytes {manifest.get('total_bytes')} != {offset}")

    blob_path = directory / "weights.bin"
    try:
        blob = np.fromfile(blob_path, dtype=_LE_F32)
    except FileNotFoundError as e:
        raise ModelFormatError(f"missing weights.bin in {directory}") from e
    if 4 * blob.size != offset or os.path.getsize(blob_path) != offset:
        # Name the first tensor that is not fully covered.
        have = os.path.getsize(blob_path)
        culprit = next(
            (e["name"] for e in entries if e["byte_offset"] + 4 * int(np.prod(e["shape"])) > have),
            entries[-1]["name"] if entries else None,
        )
        raise ShapeMismatchError(
            f"weights.bin holds {have} bytes but manifest needs {offset}; tensor {culprit} does not fit",
            tensor=culprit,
        )

    tensors = {}
    for e in entries:
        start = e["byte_offset"] // 4
        size = int(np.prod(e["shape"], dtype=np.int64))
        arr = blob[start:start + size].reshape(e["shape"]).astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteWeightError(f"tensor {e['name']} contains NaN or Inf", tensor=e["name"])
        tensors[e["name"]] = arr

    layers = []
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        layers.append(
            LayerWeights(
                w_q=tensors[p + "w_q"],
                w_k=tensors[p + "w_k"],
                w_v=tensors[p + "w_v"],
                w_o=tensors[p + "w_o"],
                w_gate=tensors[p + "w_gate"],
                w_up=tensors[p + "w_up"],
                w_down=tensors[p + "w_down"],
                attn_norm=tensors[p + "attn_norm"],
                ffn_norm=tensors[p + "ffn_norm"],
                d_head=cfg.d_head,
                o_bias=tensors.get(p + "o_bias"),
                down_bias=tensors.get(p + "down_bias"),
                kept_heads=tuple(int(i) for i in kept_h[l]),
                kept_channels=tuple(int(i) for i in kept_c[l]),
            )
        )
    return Model(cfg, tensors["tok_embeddings"], layers, tensors["final_norm"], tensors["lm_head"])


def gen_toy_model(config, seed):
    """Random dense model: normal(0, 0.02/sqrt(d_model)) weights, unit norms.

    Draw order from a single :class:`~structprune.rng.Xoshiro256` stream:
    tok_embeddings, then per layer w_q, w_k, w_v, w_o, w_gate, w_up, w_down,
    then lm_head. Norm vectors are ones and are not drawn.
    """
    cfg = ModelConfig(
        n_layers=config.n_layers,
        d_model=config.d_model,
        n_heads=config.n_heads,
        d_head=config.d_head,
        d_ff=config.d_ff,
        vocab_size=config.vocab_size,
        rope_base=config.rope_base,
        norm_eps=config.norm_eps,
    )
    rng = Xoshiro256(seed)
    std = 0.02 / np.sqrt(cfg.d_model)
    d = cfg.d_model

    def draw(*shape):
        return rng.normal(int(np.prod(shape)), std).reshape(shape).astype(np.float32)

    emb = draw(cfg.vocab_size, d)
    layers = []
    for _ in range(cfg.n_layers):
        hd = cfg.n_heads * cfg.d_head
        w_q, w_k, w_v = draw(hd, d), draw(hd, d), draw(hd, d)
        w_o = draw(d, hd)
        w_gate, w_up = draw(cfg.d_ff, d), draw(cfg.d_ff, d)
        w_down = draw(d, cfg.d_ff)
        layers.append(
            LayerWeights(
                w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o,
                w_gate=w_gate, w_up=w_up, w_down=w_down,
                attn_norm=np.ones(d, np.float32),
                ffn_norm=np.ones(d, np.float32),
                d_head=cfg.d_head,
            )
        )
    head = draw(cfg.vocab_size, d)
    return Model(cfg, emb, layers, np.ones(d, np.float32), head)


def read_tokens(path):
    data = Path(path).read_bytes()
    if len(data) % 4:
        raise InvalidInputError(f"{path}: token file length {len(data)} is not a multiple of 4")
    return np.frombuffer(data, dtype=_LE_U32).astype(np.int64)


def write_tokens(path, tokens):
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
        raise InvalidInputError("token ids must fit in uint32")
    Path(path).write_bytes(arr.astype(_LE_U32).tobytes())
