from dataclasses import replace
import inspect
import json

import numpy as np
import pytest

from structprune import evaluation
from structprune.errors import InvalidInputError
from structprune.evaluation import EvalReport, bench_latency, evaluate, log_softmax, perplexity

from oracles import naive_perplexity


def test_uniform_logits_give_vocab(toy_model):
    m = replace(toy_model, lm_head=np.zeros_like(toy_model.lm_head))
    toks = np.arange(300) % 257
    assert perplexity(m, toks, window=64) == pytest.approx(257.0, rel=1e-6)


def test_one_hot_correct_logits_approach_one(toy_model, monkeypatch):
    toks = np.random.default_rng(0).integers(0, 257, 50)
    pos = {}

    def oracle_forward(model, chunk):
        # logits that put all mass on whatever token actually follows
        start = pos.setdefault("start", 0)
        out = np.zeros((len(chunk), 257))
        out[np.arange(len(chunk)), toks[start + 1:start + 1 + len(chunk)]] = 60.0
        pos["start"] += len(chunk) + 1
        return out

    monkeypatch.setattr(evaluation, "forward", oracle_forward)
    assert perplexity(toy_model, toks, window=10) == pytest.approx(1.0, abs=1e-12)


def test_matches_loop_oracle(tiny_model):
    toks = np.random.default_rng(5).integers(0, 40, 23)
    got = perplexity(tiny_model, toks, window=8)
    assert got == pytest.approx(naive_perplexity(tiny_model, toks, 8), rel=1e-8)
    assert got >= 1.0


def test_trailing_single_token_window_skipped(tiny_model):
    toks = np.arange(17) % 40
    total, count = evaluation.nll_sum(tiny_model, toks, window=8)
    assert count == 7 + 7  # the final 1-token window predicts nothing


def test_perplexity_errors(tiny_model):
    with pytest.raises(InvalidInputError):
        perplexity(tiny_model, [1])
    with pytest.raises(InvalidInputError):
        perplexity(tiny_model, [1, 2, 3], window=1)
    with pytest.raises(InvalidInputError):
        perplexity(tiny_model, [1, 99])


def test_log_softmax_stable():
    lp = log_softmax(np.array([[1000.0, 1000.0]]))
    np.testing.assert_allclose(lp, np.log(0.5))


def test_bench_defaults():
    sig = inspect.signature(bench_latency).parameters
    assert sig["runs"].default == 20 and sig["seq_len"].default == 256


def test_bench_doubling_seq_len(toy_model):
    short, _ = bench_latency(toy_model, seq_len=128, gen_tokens=1, runs=5)
    long, _ = bench_latency(toy_model, seq_len=256, gen_tokens=1, runs=5)
    assert long * 1.1 > short
    assert short > 0


def test_bench_rejects_zero_runs(toy_model):
    with pytest.raises(InvalidInputError):
        bench_latency(toy_model, runs=0)


def test_report(tiny_model):
    rep = evaluate(tiny_model, np.arange(30) % 40, window=16, seq_len=8, gen_tokens=2, runs=2)
    assert rep.token_count == 15 + 13 and rep.runs == 2
    assert rep.prefill_seconds > 0 and rep.decode_seconds > 0
    lines = dict(l.split("=", 1) for l in rep.to_lines().splitlines())
    assert set(lines) == {"perplexity", "token_count", "params", "prefill_seconds", "decode_seconds", "runs"}
    assert json.loads(json.dumps(rep.to_dict()))["params"] == rep.params
    no = evaluate(tiny_model, np.arange(30) % 40, bench=False)
    assert no.prefill_seconds == 0.0 and no.runs == 0
    assert isinstance(no, EvalReport)
