"""Head and FFN-channel importance.

Heads are scored by how much the MHA output's linear correlation with itself
drops when one head's contribution is removed, then the kept set is refined
by a greedy one-for-one swap search. FFN channels are scored in the
eigenbasis of the FFN output covariance, combined with activation-weighted
norms of the matching gate/up rows.
"""
from dataclasses import asdict, dataclass, field
import logging

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .linalg import covariance, pearson, sigmoid, sym_eig

log = logging.getLogger(__name__)

PEARSON_MODES = ("flat", "column")


def _column_pearson(x, y):
    """Mean over columns of per-column Pearson (zero-variance columns count as 0)."""
    xm = x - x.mean(axis=0)
    ym = y - y.mean(axis=0)
    n = x.shape[0]
    sxx = np.einsum("ij,ij->j", xm, xm)
    syy = np.einsum("ij,ij->j", ym, ym)
    sxy = np.einsum("ij,ij->j", xm, ym)
    ok = (sxx / n >= kernels.VAR_EPS) & (syy / n >= kernels.VAR_EPS)
    r = np.where(ok, sxy / np.sqrt(np.where(ok, sxx * syy, 1.0)), 0.0)
    return float(np.clip(r, -1.0, 1.0).mean())


def similarity(x, full, mode="flat"):
    if mode == "flat":
        return pearson(x, full)
    if mode == "column":
        return _column_pearson(np.asarray(x, np.float64), np.asarray(full, np.float64))
    raise InvalidInputError(f"unknown pearson mode {mode!r}; choose from {PEARSON_MODES}")


def _heads_and_full(head_outputs, mha_output):
    heads = np.asarray(head_outputs, dtype=np.float64)
    full = np.asarray(mha_output, dtype=np.float64)
    if heads.ndim != 3 or heads.shape[1:] != full.shape:
        raise InvalidInputError(
            f"head outputs {heads.shape} do not match MHA output {full.shape}"
        )
    return heads, full


def head_scores(head_outputs, mha_output, mode="flat"):
    """Score_i = -Pearson(full, full - head_i); lower means less important."""
    heads, full = _heads_and_full(head_outputs, mha_output)
    if full.var() < kernels.VAR_EPS:
        log.warning("MHA output has zero variance; all head scores are 0")
        return np.zeros(heads.shape[0])
    return np.array([-similarity(full - heads[i], full, mode) for i in range(heads.shape[0])])


@dataclass
class HeadScoreReport:
    layer: int
    scores: list
    initial_keep: list
    refined_keep: list
    initial_similarity: float
    refined_similarity: float
    swap_log: list = field(default_factory=list)  # (swapped_in, swapped_out, similarity)

    def to_dict(self):
        return asdict(self)


def top_k(values, k):
    """Indices of the k largest values, ties toward the lower index, returned sorted."""
    order = np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")
    return sorted(int(i) for i in order[:k])


def greedy_refine(scores, k_keep, head_outputs, mha_output, layer=0, greedy=True, mode="flat"):
    """Top-k selection by score followed by the pruned/kept swap search.

    Every initially pruned head (ascending) is tried in place of each
    currently kept head (ascending); the best strictly improving swap is
    committed before moving to the next pruned head.
    """
    heads, full = _heads_and_full(head_outputs, mha_output)
    h = heads.shape[0]
    if not 1 <= k_keep <= h:
        raise InvalidInputError(f"k_keep={k_keep} outside [1, {h}]")
    initial = top_k(scores, k_keep)
    flat = heads.reshape(h, -1)
    full_flat = full.ravel()
    kept = list(initial)
    base = flat[kept].sum(axis=0)

    zero = np.zeros_like(full_flat)

    def sim_of(vec):
        if mode == "flat":
            # same kernel as the swap loop so comparisons share rounding
            return float(kernels.pearson_swap(vec, zero, zero, full_flat))
        return similarity(vec.reshape(full.shape), full, mode)

    sim0 = sim_of(base)
    sim = sim0
    swaps = []
    if greedy:
        pruned = [i for i in range(h) if i not in initial]
        for hi in pruned:
            best = None
            for hj in list(kept):
                if mode == "flat":
                    s = float(kernels.pearson_swap(base, flat[hj], flat[hi], full_flat))
                else:
                    s = sim_of(base - flat[hj] + flat[hi])
                if s > sim:
                    sim = s
                    best = hj
            if best is not None:
                kept = sorted([k for k in kept if k != best] + [hi])
                base = flat[kept].sum(axis=0)
                swaps.append((int(hi), int(best), float(sim)))
    return HeadScoreReport(
        layer=int(layer),
        scores=[float(s) for s in scores],
        initial_keep=initial,
        refined_keep=kept,
        initial_similarity=float(sim0),
        refined_similarity=float(sim),
        swap_log=swaps,
    )


@dataclass
class ChannelScoreReport:
    layer: int
    eigenvalues: np.ndarray
    smoothed: np.ndarray
    directional: np.ndarray
    combined: np.ndarray
    keep: list = field(default_factory=list)

    def to_dict(self):
        return {
            "layer": self.layer,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "smoothed": [float(x) for x in self.smoothed],
            "directional": [float(x) for x in self.directional],
            "combined": [float(x) for x in self.combined],
            "keep": [int(k) for k in self.keep],
        }


def smoothed_eigenvalues(eigenvalues):
    m = np.maximum(np.asarray(eigenvalues, dtype=np.float64), 0.0)
    mean = m.mean()
    if mean <= 0.0:
        return np.full_like(m, 0.5)
    return sigmoid(m / mean)


def directional_importance(w_down, Q, C):
    """Row norms of ``(w_down^T Q) * C``: one score per FFN channel."""
    wp = np.asarray(w_down, dtype=np.float64).T @ Q
    return np.sqrt(np.einsum("jd,jd->j", wp * C, wp * C))


def channel_importance(ffn_intermediate, ffn_output, ffn_input, w_gate, w_up, w_down, layer=0, feature_space=True):
    """Group importance of every FFN channel.

    ``ffn_input`` is the normalized activation that feeds ``w_gate``/``w_up``;
    ``ffn_intermediate`` is the SwiGLU activation that feeds ``w_down``.
    With ``feature_space=False`` the directional term falls back to the plain
    column norm of ``w_down``.
    """
    inter = np.asarray(ffn_intermediate, dtype=np.float64)
    Y = np.asarray(ffn_output, dtype=np.float64)
    Xin = np.asarray(ffn_input, dtype=np.float64)
    w_gate = np.asarray(w_gate, dtype=np.float64)
    w_up = np.asarray(w_up, dtype=np.float64)
    w_down = np.asarray(w_down, dtype=np.float64)
    d_ff = w_gate.shape[0]
    if (
        w_up.shape != w_gate.shape
        or w_down.shape != (w_gate.shape[1], d_ff)
        or inter.shape[1] != d_ff
        or Y.shape[1] != w_down.shape[0]
        or Xin.shape[1] != w_gate.shape[1]
        or not inter.shape[0] == Y.shape[0] == Xin.shape[0]
    ):
        raise InvalidInputError("channel_importance: inconsistent shapes")

    if feature_space:
        eig = sym_eig(covariance(Y))
        M = np.maximum(eig.eigenvalues, 0.0)
        C = smoothed_eigenvalues(M)
        Id = directional_importance(w_down, eig.eigenvectors, C)
    else:
        M = np.zeros(0)
        C = np.zeros(0)
        Id = np.linalg.norm(w_down, axis=0)

    x_j = np.linalg.norm(inter, axis=0)
    x_l2 = np.linalg.norm(Xin, axis=0)
    gate = np.linalg.norm(w_gate * x_l2, axis=1)
    up = np.linalg.norm(w_up * x_l2, axis=1)
    combined = x_j * Id + gate + up
    return ChannelScoreReport(int(layer), M, C, Id, combined)


def select_channels(report, k_keep):
    n = len(report.combined)
    if not 1 <= k_keep <= n:
        raise InvalidInputError(f"k_keep={k_keep} outside [1, {n}]")
    report.keep = top_k(report.combined, k_keep)
    return list(report.keep)
