"""Command-line entry point: ``structprune {gen-toy,prune,eval,inspect}``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
import argparse
import json
import logging
from pathlib import Path
import sys

from . import calibration, evaluation
from .model import ModelConfig
from .model_io import gen_toy_model, load_model, save_model
from .pruner import PruneOptions, param_count, prunable_param_count, prune_pipeline
from .ratio import R_MAX

log = logging.getLogger("structprune")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_help()}")


def _ratio(value):
    r = float(value)
    if not 0.0 <= r <= R_MAX:
        raise argparse.ArgumentTypeError(f"ratio must be in [0, {R_MAX}]")
    return r


def _positive(minimum):
    def conv(value):
        v = int(value)
        if v < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}")
        return v

    return conv


def build_parser():
    p = _Parser(prog="structprune", description="Structured pruning for toy decoder-only transformers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-toy", help="write a seeded random model")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-layers", type=_positive(1), default=4)
    g.add_argument("--d-model", type=_positive(2), default=64)
    g.add_argument("--n-heads", type=_positive(1), default=8)
    g.add_argument("--d-ff", type=_positive(1), default=256)
    g.add_argument("--vocab-size", type=_positive(1), default=calibration.BYTE_VOCAB)

    pr = sub.add_parser("prune", help="prune a model and write it with plan.json")
    pr.add_argument("--model", required=True)
    pr.add_argument("--calib", required=True, help="text file, or .tokens file of uint32 ids")
    pr.add_argument("--out", required=True)
    pr.add_argument("--ratio", type=_ratio, default=0.2)
    pr.add_argument("--alpha", type=float, default=None, help="default: 10 if ratio <= 0.35 else 7")
    pr.add_argument("--skip-layers", default="first,last", help='comma list of indices, "first", "last" or "none"')
    pr.add_argument("--n-samples", type=_positive(1), default=calibration.DEFAULT_N_SAMPLES)
    pr.add_argument("--seq-len", type=_positive(2), default=calibration.DEFAULT_SEQ_LEN)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--no-greedy", action="store_true", help="top-k heads by score only")
    pr.add_argument("--no-feature-space", action="store_true", help="plain w_down column norms for channels")
    pr.add_argument("--no-recovery", action="store_true", help="skip the regression refit")
    pr.add_argument("--uniform-ratio", action="store_true", help="same ratio on every pruned layer")
    pr.add_argument("--one-shot-scoring", action="store_true", help="score every layer on the dense model")
    pr.add_argument("--drop-bias-b", action="store_true", help="fold only the scale A, not the offset B")
    pr.add_argument("--pearson-mode", choices=("flat", "column"), default="flat")

    ev = sub.add_parser("eval", help="perplexity, parameter count and latency")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", "--calib", dest="data", required=True, help="text or .tokens file")
    ev.add_argument("--window", type=_positive(2), default=evaluation.DEFAULT_WINDOW)
    ev.add_argument("--runs", type=_positive(1), default=evaluation.DEFAULT_RUNS)
    ev.add_argument("--bench-seq-len", type=_positive(1), default=evaluation.DEFAULT_BENCH_SEQ_LEN)
    ev.add_argument("--gen-tokens", type=_positive(0), default=evaluation.DEFAULT_GEN_TOKENS)
    ev.add_argument("--no-bench", action="store_true", help="skip latency measurement")
    ev.add_argument("--json", dest="json_path", default=None, help="also write the report as JSON here")

    ins = sub.add_parser("inspect", help="summarize a plan.json")
    ins.add_argument("--plan", required=True, help="plan.json or a pruned model directory")
    return p


def cmd_gen_toy(args):
    if args.d_model % args.n_heads:
        raise UsageError("structprune gen-toy: error: --d-model must be divisible by --n-heads")
    cfg = ModelConfig(
        n_layers=args.n_layers,
        d_model=args.d_model,
        n_heads=args.n_heads,
        d_head=args.d_model // args.n_heads,
        d_ff=args.d_ff,
        vocab_size=args.vocab_size,
    )
    model = gen_toy_model(cfg, args.seed)
    save_model(model, args.out)
    print(f"wrote {args.out} params={param_count(model)}")


def cmd_prune(args):
    model = load_model(args.model)
    corpus = calibration.load_corpus(args.calib)
    calib = calibration.sample_calibration(corpus, args.n_samples, args.seq_len, args.seed)
    opts = PruneOptions(
        greedy=not args.no_greedy,
        feature_space=not args.no_feature_space,
        recovery=not args.no_recovery,
        uniform_ratio=args.uniform_ratio,
        one_shot=args.one_shot_scoring,
        drop_bias=args.drop_bias_b,
        pearson_mode=args.pearson_mode,
    )
    pruned, plan = prune_pipeline(model, calib, args.ratio, args.alpha, args.skip_layers, opts)
    save_model(pruned, args.out)
    doc = plan.to_dict()
    doc["params_before"] = param_count(model)
    doc["params_after"] = param_count(pruned)
    doc["prunable_before"] = prunable_param_count(model)
    doc["prunable_after"] = prunable_param_count(pruned)
    with open(Path(args.out) / "plan.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
    print(f"ratios={','.join(f'{r:.4f}' for r in plan.ratio_plan.ratios)}")
    print(f"params_before={doc['params_before']}")
    print(f"params_after={doc['params_after']}")


def cmd_eval(args):
    model = load_model(args.model)
    tokens = calibration.load_corpus(args.data)
    report = evaluation.evaluate(
        model, tokens, window=args.window, bench=not args.no_bench,
        seq_len=args.bench_seq_len, gen_tokens=args.gen_tokens, runs=args.runs,
    )
    print(report.to_lines())
    if args.json_path:
        with open(args.json_path, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=1)


def cmd_inspect(args):
    path = Path(args.plan)
    if path.is_dir():
        path = path / "plan.json"
    with open(path, encoding="utf-8") as f:
        plan = json.load(f)
    rp = plan["ratio_plan"]
    out = {
        "cosine_sims": rp["cosine_sims"],
        "ratios": rp["ratios"],
        "skip": rp["skip"],
        "alpha": rp["alpha"],
        "r0": rp["r0"],
        "layers": [
            {
                "layer": lp["layer"],
                "ratio": lp["ratio"],
                "kept_heads": lp["kept_heads"],
                "n_channels_kept": lp["n_channels_kept"],
                "head_report": lp["head_report"],
                "channel_report": lp["channel_report"],
                "recovery_mha": lp["recovery_mha"],
                "recovery_ffn": lp["recovery_ffn"],
            }
            for lp in plan["layers"]
        ],
    }
    json.dump(out, sys.stdout, indent=1)
    sys.stdout.write("\n")


COMMANDS = {"gen-toy": cmd_gen_toy, "prune": cmd_prune, "eval": cmd_eval, "inspect": cmd_inspect}


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except Exception as e:
        print(f"structprune {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
