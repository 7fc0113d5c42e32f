import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from structprune.calibration import (
    collect_traces,
    concat_field,
    detokenize_bytes,
    load_corpus,
    sample_calibration,
    sample_offsets,
    tokenize_bytes,
)
from structprune.errors import InvalidInputError
from structprune.model import CaptureSpec
from structprune.model_io import write_tokens

from oracles import RefXoshiro

GOLDEN = json.loads((Path(__file__).parent / "golden" / "toy_seed42.json").read_text())


def test_tokenize_examples():
    assert tokenize_bytes(b"").tolist() == [256]
    assert tokenize_bytes(b"AB").tolist() == [256, 65, 66]
    assert tokenize_bytes("é").tolist() == [256, 0xC3, 0xA9]


@given(st.binary(max_size=200))
def test_tokenize_round_trip(data):
    assert detokenize_bytes(tokenize_bytes(data)) == data


def test_detokenize_rejects_non_bytes():
    with pytest.raises(InvalidInputError):
        detokenize_bytes([256, 300])


def test_load_corpus_by_extension(tmp_path):
    (tmp_path / "a.txt").write_bytes(b"hi")
    write_tokens(tmp_path / "a.tokens", [5, 6, 7])
    assert load_corpus(tmp_path / "a.txt").tolist() == [256, 104, 105]
    assert load_corpus(tmp_path / "a.tokens").tolist() == [5, 6, 7]


def test_corpus_equal_to_seq_len():
    corpus = np.arange(16)
    cal = sample_calibration(corpus, 5, 16, seed=3)
    assert all(s.tolist() == corpus.tolist() for s in cal.samples)


def test_corpus_too_short():
    with pytest.raises(InvalidInputError):
        sample_calibration(np.arange(10), 2, 11)


def test_sampling_deterministic(corpus):
    a = sample_calibration(corpus, 8, 50, seed=11)
    b = sample_calibration(corpus, 8, 50, seed=11)
    c = sample_calibration(corpus, 8, 50, seed=12)
    assert a.offsets.tolist() == b.offsets.tolist() != c.offsets.tolist()
    assert all(len(s) == 50 for s in a.samples)
    for o, s in zip(a.offsets, a.samples):
        assert s.tolist() == corpus[o:o + 50].tolist()


def test_offsets_match_reference_prng():
    ref = RefXoshiro(7)
    expect = [ref.next() % (10000 - 128 + 1) for _ in range(32)]
    got = sample_offsets(10000, 32, 128, 7).tolist()
    assert got == expect
    assert got == GOLDEN["calibration_offsets_seed7_corpus10000_n32_len128"]


def test_single_sample_trace(toy_model, corpus):
    cal = sample_calibration(corpus, 1, 40, seed=0)
    traces = collect_traces(toy_model, cal, CaptureSpec.all_layers(4))
    assert len(traces) == 1 and traces[0][0].layer_input.shape == (40, 64)


@pytest.mark.slow
def test_default_calibration_row_count(toy_model, corpus):
    cal = sample_calibration(corpus)
    traces = collect_traces(toy_model, cal, CaptureSpec(frozenset([0])), workers=4)
    assert concat_field(traces, 0, "layer_input").shape == (32 * 128, 64)


def test_parallel_equals_serial(toy_model, small_calib):
    spec = CaptureSpec(frozenset([0, 2]), frozenset([1]))
    serial = collect_traces(toy_model, small_calib, spec)
    parallel = collect_traces(toy_model, small_calib, spec, workers=4)
    for name in ("layer_input", "ffn_intermediate", "mha_output"):
        assert concat_field(serial, 2, name).tobytes() == concat_field(parallel, 2, name).tobytes()
    assert concat_field(serial, 1, "head_outputs").tobytes() == concat_field(parallel, 1, "head_outputs").tobytes()
    assert concat_field(serial, 1, "head_outputs").shape == (8, 4 * 32, 64)
