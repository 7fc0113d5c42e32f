"""Byte-level tokenization, calibration sampling and trace collection."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .model import CaptureSpec, forward_with_trace
from .model_io import read_tokens
from .rng import Xoshiro256

BOS = 256
BYTE_VOCAB = 257
DEFAULT_N_SAMPLES = 32
DEFAULT_SEQ_LEN = 128


def tokenize_bytes(data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    out = np.empty(len(data) + 1, dtype=np.int64)
    out[0] = BOS
    out[1:] = np.frombuffer(bytes(data), dtype=np.uint8)
    return out


def detokenize_bytes(tokens):
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.size and toks[0] == BOS:
        toks = toks[1:]
    if np.any((toks < 0) | (toks > 255)):
        raise InvalidInputError("only byte ids 0-255 can be detokenized after the leading BOS")
    return toks.astype(np.uint8).tobytes()


def load_corpus(path):
    """Token ids from ``path``: ``.tokens`` files are raw uint32, anything else is text bytes."""
    path = Path(path)
    if path.suffix == ".tokens":
        return read_tokens(path)
    return tokenize_bytes(path.read_bytes())


@dataclass
class CalibrationSet:
    samples: list
    offsets: np.ndarray
    n_samples: int = DEFAULT_N_SAMPLES
    seq_len: int = DEFAULT_SEQ_LEN
    seed: int = 0


def sample_offsets(corpus_len, n_samples, seq_len, seed):
    """Window start offsets: xoshiro256** outputs modulo the number of valid starts."""
    n_starts = corpus_len - seq_len + 1
    return Xoshiro256(seed).integers(n_starts, n_samples)


def sample_calibration(corpus_tokens, n_samples=DEFAULT_N_SAMPLES, seq_len=DEFAULT_SEQ_LEN, seed=0):
    corpus = np.asarray(corpus_tokens, dtype=np.int64)
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    if seq_len < 2:
        raise InvalidInputError("seq_len must be >= 2")
    if corpus.size < seq_len:
        raise InvalidInputError(f"corpus has {corpus.size} tokens, need at least seq_len={seq_len}")
    offsets = sample_offsets(corpus.size, n_samples, seq_len, seed)
    samples = [corpus[o:o + seq_len].copy() for o in offsets]
    return CalibrationSet(samples, offsets, n_samples, seq_len, seed)


def collect_traces(model, calib, capture_spec=None, workers=1):
    """One :class:`ActivationTrace` per sample, always in sample order."""
    capture_spec = capture_spec or CaptureSpec()

    def one(tokens):
        return forward_with_trace(model, tokens, capture_spec)[1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, calib.samples))
    return [one(s) for s in calib.samples]


def concat_field(traces, layer, name):
    """Stack one captured field across traces along the token axis."""
    parts = [getattr(t[layer], name) for t in traces]
    axis = 1 if name == "head_outputs" else 0
    return np.concatenate(parts, axis=axis)
