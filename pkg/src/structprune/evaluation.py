"""Perplexity, parameter count and CPU latency of a model."""
from contextlib import nullcontext
from dataclasses import asdict, dataclass
import time

import numpy as np

from .errors import InvalidInputError
from .model import check_tokens, forward
from .pruner import param_count
from .rng import Xoshiro256

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

DEFAULT_WINDOW = 128
DEFAULT_RUNS = 20
DEFAULT_BENCH_SEQ_LEN = 256
DEFAULT_GEN_TOKENS = 32


@dataclass
class EvalReport:
    perplexity: float
    token_count: int
    params: int
    prefill_seconds: float
    decode_seconds: float
    runs: int

    def to_dict(self):
        return asdict(self)

    def to_lines(self):
        return "\n".join(f"{k}={v}" for k, v in self.to_dict().items())


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def nll_sum(model, tokens, window=DEFAULT_WINDOW):
    """Total negative log-likelihood and number of predicted positions."""
    toks = check_tokens(tokens, model.config.vocab_size)
    if toks.size < 2:
        raise InvalidInputError("perplexity needs at least 2 tokens")
    if window < 2:
        raise InvalidInputError("window must be >= 2")
    total = 0.0
    count = 0
    for start in range(0, toks.size, window):
        chunk = toks[start:start + window]
        if chunk.size < 2:
            continue
        lp = log_softmax(forward(model, chunk[:-1]))
        total -= float(lp[np.arange(chunk.size - 1), chunk[1:]].sum())
        count += chunk.size - 1
    return total, count


def perplexity(model, tokens, window=DEFAULT_WINDOW):
    total, count = nll_sum(model, tokens, window)
    return float(np.exp(total / count))


def _single_thread():
    return threadpool_limits(limits=1) if threadpool_limits is not None else nullcontext()


def bench_latency(model, seq_len=DEFAULT_BENCH_SEQ_LEN, gen_tokens=DEFAULT_GEN_TOKENS, runs=DEFAULT_RUNS, seed=0):
    """Mean prefill and decode wall time over ``runs`` repetitions after one warm-up.

    Decode regenerates ``gen_tokens`` tokens greedily, recomputing the full
    sequence at each step.
    """
    if runs < 1:
        raise InvalidInputError("runs must be >= 1")
    prompt = Xoshiro256(seed).integers(model.config.vocab_size, seq_len)

    def decode():
        toks = list(prompt)
        for _ in range(gen_tokens):
            toks.append(int(np.argmax(forward(model, np.asarray(toks))[-1])))

    with _single_thread():
        forward(model, prompt)
        decode()
        prefill = []
        dec = []
        for _ in range(runs):
            t0 = time.perf_counter()
            forward(model, prompt)
            prefill.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            decode()
            dec.append(time.perf_counter() - t0)
    return float(np.mean(prefill)), float(np.mean(dec))


def evaluate(model, tokens, window=DEFAULT_WINDOW, bench=True, seq_len=DEFAULT_BENCH_SEQ_LEN,
             gen_tokens=DEFAULT_GEN_TOKENS, runs=DEFAULT_RUNS):
    total, count = nll_sum(model, tokens, window)
    prefill = decode = 0.0
    if bench:
        prefill, decode = bench_latency(model, seq_len, gen_tokens, runs)
    return EvalReport(float(np.exp(total / count)), int(count), param_count(model), prefill, decode,
                      runs if bench else 0)
