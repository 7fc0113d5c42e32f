"""Layer-by-layer pruning pipeline.

Layer cosines (and hence per-layer ratios) come from one pass over the dense
model. Layers are then processed in depth order on the current model state:
heads are scored, refined, removed and the output projection refit; then the
FFN channels are scored, removed and the down projection refit. The next
layer sees the pruned and recovered activations.
"""
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .calibration import CalibrationSet
from .errors import InvalidInputError, PipelineError
from .importance import channel_importance, greedy_refine, head_scores, select_channels
from .model import (
    embed,
    ffn_intermediate,
    ffn_project,
    layer_forward,
    mha,
    prune_layer_channels,
    prune_layer_heads,
    rmsnorm,
)
from .model_io import model_tensors
from .ratio import allocate, default_alpha, parse_skip, ratio_to_counts, rowwise_cosine, uniform_allocation
from .recovery import RegressionCoefficients, fit_recovery, fold_recovery

log = logging.getLogger(__name__)

PRUNABLE = ("w_q", "w_k", "w_v", "w_o", "w_gate", "w_up", "w_down")


@dataclass
class PruneOptions:
    greedy: bool = True
    feature_space: bool = True
    recovery: bool = True
    uniform_ratio: bool = False
    one_shot: bool = False
    drop_bias: bool = False
    pearson_mode: str = "flat"

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class LayerPlan:
    layer: int
    ratio: float
    skipped: bool
    kept_heads: list
    kept_channels: list
    head_report: object = None
    channel_report: object = None
    recovery_mha: RegressionCoefficients = None
    recovery_ffn: RegressionCoefficients = None
    # calibration MSE of each sub-layer output vs its pre-pruning output
    mse: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "layer": self.layer,
            "ratio": float(self.ratio),
            "skipped": self.skipped,
            "n_heads_kept": len(self.kept_heads),
            "n_channels_kept": len(self.kept_channels),
            "kept_heads": [int(i) for i in self.kept_heads],
            "kept_channels": [int(i) for i in self.kept_channels],
            "head_report": self.head_report.to_dict() if self.head_report else None,
            "channel_report": self.channel_report.to_dict() if self.channel_report else None,
            "recovery_mha": self.recovery_mha.summary() if self.recovery_mha else None,
            "recovery_ffn": self.recovery_ffn.summary() if self.recovery_ffn else None,
            "mse": {k: float(v) for k, v in self.mse.items()},
        }


@dataclass
class PruningPlan:
    target_ratio: float
    ratio_plan: object
    layers: list
    options: PruneOptions
    calibration: dict

    def to_dict(self):
        return {
            "target_ratio": float(self.target_ratio),
            "ratio_plan": self.ratio_plan.to_dict(),
            "options": self.options.to_dict(),
            "calibration": self.calibration,
            "layers": [lp.to_dict() for lp in self.layers],
        }


def param_count(model):
    return int(sum(a.size for a in model_tensors(model).values()))


def prunable_param_count(model):
    return int(sum(getattr(ly, name).size for ly in model.layers for name in PRUNABLE))


@contextmanager
def _stage(layer, stage):
    try:
        yield
    except Exception as e:
        raise PipelineError(f"layer {layer}, stage {stage}: {e}", layer=layer, stage=stage) from e


def dense_hidden_states(model, calib):
    """Per-layer residual inputs of every calibration sample, plus the final output.

    ``states[l][s]`` is the input to layer ``l`` for sample ``s``.
    """
    xs = [embed(model, s) for s in calib.samples]
    states = [xs]
    for layer in model.layers:
        xs = [layer_forward(layer, x, model.config)[0] for x in xs]
        states.append(xs)
    return states


def cosines_from_states(states):
    sims = []
    for l in range(len(states) - 1):
        c = np.concatenate([rowwise_cosine(x, y) for x, y in zip(states[l], states[l + 1])])
        bad = int(np.isnan(c).sum())
        if bad:
            log.warning("layer %d: %d zero-norm token rows excluded from cosine mean", l, bad)
        good = c[~np.isnan(c)]
        sims.append(float(good.mean()) if good.size else 0.0)
    return np.array(sims)


def _mse(a, b):
    return float(np.mean((a - b) ** 2))


def _f32(x):
    return None if x is None else np.asarray(x, dtype=np.float32)


def _prune_attention(layer, xs, cfg, k_heads, lp, opts):
    xns = [rmsnorm(x, layer.attn_norm, cfg.norm_eps) for x in xs]
    per = [mha(layer, xn, cfg.rope_base, per_head=True) for xn in xns]
    heads = np.concatenate([p[2] for p in per], axis=1)
    full = np.concatenate([p[1] for p in per], axis=0)
    no_bias = full if layer.o_bias is None else full - layer.o_bias.astype(np.float64)
    scores = head_scores(heads, no_bias, mode=opts.pearson_mode)
    report = greedy_refine(scores, k_heads, heads, no_bias, layer=lp.layer, greedy=opts.greedy, mode=opts.pearson_mode)
    lp.head_report = report
    if len(report.refined_keep) == layer.n_heads:
        return layer
    pruned = prune_layer_heads(layer, report.refined_keep)
    O_pruned = np.concatenate([mha(pruned, xn, cfg.rope_base)[1] for xn in xns], axis=0)
    lp.mse["mha_unrecovered"] = _mse(full, O_pruned)
    if opts.recovery:
        coeffs = fit_recovery(full, O_pruned)
        w, b = fold_recovery(pruned.w_o, pruned.o_bias, coeffs, drop_bias=opts.drop_bias)
        pruned = replace(pruned, w_o=_f32(w), o_bias=_f32(b))
        lp.recovery_mha = coeffs
        O_rec = np.concatenate([mha(pruned, xn, cfg.rope_base)[1] for xn in xns], axis=0)
        lp.mse["mha_recovered"] = _mse(full, O_rec)
    return pruned


def _prune_ffn(layer, xs, cfg, k_channels, lp, opts):
    hs = [x + mha(layer, rmsnorm(x, layer.attn_norm, cfg.norm_eps), cfg.rope_base)[1] for x in xs]
    fns = [rmsnorm(h, layer.ffn_norm, cfg.norm_eps) for h in hs]
    inters = [ffn_intermediate(layer, fn) for fn in fns]
    inter = np.concatenate(inters, axis=0)
    Y = np.concatenate([ffn_project(layer, i) for i in inters], axis=0)
    report = channel_importance(
        inter, Y, np.concatenate(fns, axis=0), layer.w_gate, layer.w_up, layer.w_down,
        layer=lp.layer, feature_space=opts.feature_space,
    )
    keep = select_channels(report, k_channels)
    lp.channel_report = report
    if len(keep) == layer.d_ff:
        return layer
    pruned = prune_layer_channels(layer, keep)
    O_pruned = ffn_project(pruned, inter[:, keep])
    lp.mse["ffn_unrecovered"] = _mse(Y, O_pruned)
    if opts.recovery:
        coeffs = fit_recovery(Y, O_pruned)
        w, b = fold_recovery(pruned.w_down, pruned.down_bias, coeffs, drop_bias=opts.drop_bias)
        pruned = replace(pruned, w_down=_f32(w), down_bias=_f32(b))
        lp.recovery_ffn = coeffs
        lp.mse["ffn_recovered"] = _mse(Y, ffn_project(pruned, inter[:, keep]))
    return pruned


def allocate_ratios(model, calib, target_ratio, alpha=None, skip="first,last", options=None, states=None):
    options = options or PruneOptions()
    n = model.config.n_layers
    skip = parse_skip(skip, n)
    alpha = default_alpha(target_ratio) if alpha is None else float(alpha)
    if states is None:
        states = dense_hidden_states(model, calib)
    sims = cosines_from_states(states)
    if options.uniform_ratio:
        plan = uniform_allocation(n, target_ratio, skip, cosine_sims=sims)
        plan.alpha = alpha
        return plan
    return allocate(sims, target_ratio, alpha, skip)


def prune_pipeline(model, calib, target_ratio, alpha=None, skip="first,last", options=None):
    """Prune ``model`` to ``target_ratio`` of its prunable parameters.

    Returns ``(pruned_model, PruningPlan)``; the input model is not modified.
    """
    if not isinstance(calib, CalibrationSet):
        raise InvalidInputError("calib must be a CalibrationSet")
    options = options or PruneOptions()
    cfg = model.config
    with _stage(-1, "ratio allocation"):
        states = dense_hidden_states(model, calib)
        rplan = allocate_ratios(model, calib, target_ratio, alpha, skip, options, states=states)

    current = model
    xs = states[0]
    layer_plans = []
    for l in range(cfg.n_layers):
        layer = current.layers[l]
        ratio = float(rplan.ratios[l])
        lp = LayerPlan(l, ratio, l in rplan.skip, list(layer.kept_heads), list(layer.kept_channels))
        inputs = states[l] if options.one_shot else xs
        if not lp.skipped and ratio > 0.0:
            k_heads, k_channels = ratio_to_counts(ratio, layer.n_heads, layer.d_ff)
            with _stage(l, "attention"):
                layer = _prune_attention(layer, inputs, cfg, k_heads, lp, options)
            with _stage(l, "ffn"):
                layer = _prune_ffn(layer, inputs, cfg, k_channels, lp, options)
            current = current.with_layer(l, layer)
            lp.kept_heads = list(layer.kept_heads)
            lp.kept_channels = list(layer.kept_channels)
        if not options.one_shot:
            xs = [layer_forward(layer, x, cfg)[0] for x in xs]
        layer_plans.append(lp)

    plan = PruningPlan(
        target_ratio=float(target_ratio),
        ratio_plan=rplan,
        layers=layer_plans,
        options=options,
        calibration={
            "n_samples": int(calib.n_samples),
            "seq_len": int(calib.seq_len),
            "seed": int(calib.seed),
            "offsets": [int(o) for o in calib.offsets],
        },
    )
    return current, plan
