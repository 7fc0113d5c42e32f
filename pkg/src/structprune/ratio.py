"""Layerwise pruning ratios from input/output cosine similarity.

Layers whose output stays closer to their input are treated as more
redundant and receive a larger share of the pruning budget:
``ratio_l = r0 * softmax(alpha * E_t[cos(x_l,t, x_l+1,t)])`` over the
non-skipped layers, with ``r0 = target * n_layers`` so the all-layer mean
equals the target.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .errors import InvalidInputError
from .linalg import NORM_EPS, softmax_scaled

log = logging.getLogger(__name__)

R_MAX = 0.95


def default_alpha(target_ratio):
    return 10.0 if target_ratio <= 0.35 else 7.0


def parse_skip(spec, n_layers):
    """``"first,last"``, ``"0,5"``, ``"none"`` or ``""`` -> sorted layer indices."""
    if spec is None:
        spec = "first,last"
    if isinstance(spec, (list, tuple, set, frozenset)):
        items = [str(s) for s in spec]
    else:
        items = [s.strip() for s in str(spec).split(",") if s.strip()]
    out = set()
    for item in items:
        if item == "none":
            continue
        if item == "first":
            out.add(0)
        elif item == "last":
            out.add(n_layers - 1)
        else:
            try:
                idx = int(item)
            except ValueError:
                raise InvalidInputError(f"bad skip-layer entry {item!r}") from None
            if idx < 0:
                idx += n_layers
            if not 0 <= idx < n_layers:
                raise InvalidInputError(f"skip layer {item} out of range for {n_layers} layers")
            out.add(idx)
    return sorted(out)


def rowwise_cosine(X, Y):
    """Cosine per row pair; rows where either side has zero norm come back NaN."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    ok = (nx > NORM_EPS) & (ny > NORM_EPS)
    dots = np.einsum("ij,ij->i", X, Y)
    c = np.full(X.shape[0], np.nan)
    c[ok] = np.clip(dots[ok] / (nx[ok] * ny[ok]), -1.0, 1.0)
    return c


def layer_cosines(traces, n_layers=None):
    """Mean token cosine between each layer's input and output rows."""
    if not traces:
        raise InvalidInputError("no traces given")
    layers = sorted(traces[0].layers) if n_layers is None else range(n_layers)
    out = []
    for l in layers:
        c = np.concatenate([rowwise_cosine(t[l].layer_input, t[l].layer_output) for t in traces])
        bad = int(np.isnan(c).sum())
        if bad:
            log.warning("layer %d: %d zero-norm token rows excluded from cosine mean", l, bad)
        good = c[~np.isnan(c)]
        out.append(float(good.mean()) if good.size else 0.0)
    return np.array(out)


@dataclass
class LayerRatioPlan:
    cosine_sims: np.ndarray
    skip: list
    alpha: float
    r0: float
    ratios: np.ndarray
    clamped: bool = False
    target_ratio: float = 0.0
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "cosine_sims": [float(c) for c in self.cosine_sims],
            "skip": [int(s) for s in self.skip],
            "alpha": float(self.alpha),
            "r0": float(self.r0),
            "target_ratio": float(self.target_ratio),
            "ratios": [float(r) for r in self.ratios],
            "clamped": bool(self.clamped),
        }


def allocate(cosine_sims, target_ratio, alpha, skip=(), r_max=R_MAX):
    sims = np.asarray(cosine_sims, dtype=np.float64)
    n = sims.size
    skip = sorted(set(int(s) for s in skip))
    if any(not 0 <= s < n for s in skip):
        raise InvalidInputError(f"skip set {skip} out of range for {n} layers")
    active = [l for l in range(n) if l not in skip]
    if not active:
        raise InvalidInputError("every layer is skipped")
    if not 0.0 <= target_ratio < 1.0:
        raise InvalidInputError(f"target ratio {target_ratio} outside [0, 1)")
    r0 = target_ratio * n
    if r0 > r_max * len(active) + 1e-12:
        raise InvalidInputError(
            f"target {target_ratio} over {n} layers needs r0={r0:.4g}, but {len(active)} "
            f"prunable layers cap at {r_max * len(active):.4g}"
        )
    weights = softmax_scaled(sims[active], alpha)
    ratios_active = r0 * weights
    clamped = np.zeros(len(active), dtype=bool)
    for _ in range(n + 1):
        over = (ratios_active > r_max) & ~clamped
        if not over.any():
            break
        clamped |= over
        free = r0 - r_max * clamped.sum()
        w_free = weights[~clamped]
        ratios_active = np.where(clamped, r_max, 0.0)
        if w_free.size:
            ratios_active[~clamped] = free * w_free / w_free.sum()
    ratios = np.zeros(n)
    ratios[active] = np.minimum(ratios_active, r_max)
    return LayerRatioPlan(sims, skip, float(alpha), float(r0), ratios, bool(clamped.any()), float(target_ratio))


def uniform_allocation(n_layers, target_ratio, skip=(), cosine_sims=None):
    """Equal ratio on every non-skipped layer (``alpha = 0``); cosines kept for reporting."""
    plan = allocate(np.zeros(n_layers), target_ratio, 0.0, skip)
    if cosine_sims is not None:
        plan.cosine_sims = np.asarray(cosine_sims, dtype=np.float64)
    return plan


def _round_half_away(x):
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def ratio_to_counts(ratio, n_heads, d_ff):
    if not 0.0 <= ratio <= R_MAX + 1e-12:
        raise InvalidInputError(f"ratio {ratio} outside [0, {R_MAX}]")
    heads = max(1, _round_half_away(n_heads * (1.0 - ratio)))
    chans = max(1, _round_half_away(d_ff * (1.0 - ratio)))
    return heads, chans
