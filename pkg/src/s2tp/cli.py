"""Command-line interface.

Subcommands: train, evaluate, generate, select-latents, flops,
average-checkpoints, gradcheck. Exit codes: 0 success, 1 unexpected
failure, 2 configuration error, 3 checkpoint error, 4 contract
violation (e.g. k' > n).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import dla, flops as flops_mod, harness, serialize
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DivergenceError,
    ShapeError,
)
from .model import build_network

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_CONTRACT = 4


def _load_config(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config:
        return config_mod.load(args.config, overrides)
    return config_mod.parse_text("", overrides)


def _restore_network(path):
    cfg, tensors = serialize.load_checkpoint(path)
    net = build_network(cfg)
    net.load_state(tensors)
    return net, cfg


def cmd_train(args):
    cfg = _load_config(args)
    task = harness.ToyTask.from_config(cfg)
    train_data = harness.generate_dataset(task, cfg["train_examples"], split=0)
    valid_data = harness.generate_dataset(task, cfg["valid_examples"], split=1)
    net = build_network(cfg)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "metrics.log")
    with open(log_path, "w", encoding="utf-8") as log_fh:
        def log(line):
            print(line)
            log_fh.write(line + "\n")
            log_fh.flush()

        result = harness.train(
            net, train_data, valid_data, harness.TrainConfig.from_config(cfg),
            out_dir=args.out, log=log,
        )
    best = harness.average_checkpoints(result.best_checkpoints(args.average_best))
    net.load_state(best)
    serialize.save_checkpoint(os.path.join(args.out, "best.ckpt"), cfg, best)
    print(f"best epoch {result.best_epoch}; wrote {args.out}/best.ckpt")
    return 0


def cmd_evaluate(args):
    net, cfg = _restore_network(args.checkpoint)
    task = harness.ToyTask.from_config(cfg)
    data = harness.generate_dataset(task, cfg["valid_examples"], split=1)
    k_prime = args.k_prime or (cfg["k_prime"] or None)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg["seed"])
    stats = harness.evaluate(
        net, data, dla_mode=args.dla, k_prime=k_prime,
        beam=args.beam or cfg["beam"], rng=rng,
    )
    print(
        f"dla={args.dla}\tk_prime={k_prime or net.n_latents}"
        f"\ttoken_acc={stats['token_accuracy']:.6f}"
        f"\texact_match={stats['exact_match']:.6f}\tflops={stats['flops']}"
    )
    return 0


def cmd_generate(args):
    net, cfg = _restore_network(args.checkpoint)
    _, tensors = serialize.load_tensors(args.input)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg["seed"])
    k_prime = args.k_prime or (cfg["k_prime"] or None)
    for name in sorted(tensors):
        if not name.startswith("x"):
            continue
        result = net.transcribe(
            tensors[name], mode=args.dla, k_prime=k_prime,
            beam=args.beam or cfg["beam"], rng=rng,
        )
        tokens = " ".join(str(t - 3) for t in result.tokens)
        flag = " (truncated)" if result.truncated else ""
        print(f"{name}\t{tokens}\tscore={result.score:.4f}{flag}")
    return 0


def cmd_select_latents(args):
    Z, A, frame_mask = serialize.load_attention_record(args.record)
    if args.method == "diverse":
        sel = dla.select_diverse(Z, A, args.k_prime, frame_mask)
    else:
        sel = dla.select_random(Z, args.k_prime, np.random.default_rng(args.seed or 0))
    print(" ".join(str(i) for i in sel.ids))
    return 0


def _spec_from_config(cfg, k_prime=None):
    stride = cfg["conv_stride"]
    layers = cfg["self_attn_layers"] if cfg["family"] == "perceiver" else cfg["encoder_layers"]
    return flops_mod.ModelSpec(
        family=cfg["family"], d=cfg["d"], heads=cfg["heads"],
        ffn_hidden=cfg["ffn_hidden"], self_attn_layers=layers,
        decoder_layers=cfg["decoder_layers"], freq_bins=cfg["freq_bins"],
        use_input_processor=cfg["use_input_processor"],
        conv_channels=cfg["conv_channels"], conv_kernel=cfg["conv_kernel"],
        conv_strides=(stride, stride), n_latents=cfg["n_latents"],
        k_prime=k_prime or cfg["k_prime"] or cfg["n_latents"],
        vocab=cfg["vocab"] + 3,
    )


def _transformer_baseline(cfg):
    base = dict(cfg)
    base["family"] = "transformer"
    base["conv_stride"] = 2
    base["use_input_processor"] = True
    return _spec_from_config(base)


def cmd_flops(args):
    cfg = _load_config(args)
    spec = _spec_from_config(cfg, args.k_prime or None)
    if args.baseline:
        baseline = _spec_from_config(config_mod.load(args.baseline))
    else:
        baseline = _transformer_baseline(cfg)
    if args.lengths:
        lengths = flops_mod.read_lengths(args.lengths)
    else:
        lengths = flops_mod.default_lengths(seed=cfg["seed"])
    spec_totals = {c: 0 for c in flops_mod.COMPONENTS}
    base_totals = {c: 0 for c in flops_mod.COMPONENTS}
    for m, t in lengths:
        for key, value in flops_mod.cost(spec, m, t).components.items():
            spec_totals[key] += value
        for key, value in flops_mod.cost(baseline, m, t).components.items():
            base_totals[key] += value
    print(flops_mod.format_report(spec_totals, base_totals))
    ratio = flops_mod.corpus_ratio(spec, baseline, lengths)
    print(f"ratio\t{ratio:.4f}")
    return 0


def cmd_average_checkpoints(args):
    loaded = [serialize.load_checkpoint(path) for path in args.inputs]
    averaged = harness.average_checkpoints([tensors for _, tensors in loaded])
    serialize.save_checkpoint(args.out, loaded[0][0], averaged)
    print(f"averaged {len(loaded)} checkpoints -> {args.out}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import full_report

    failures = 0
    for name, err in full_report(dim=args.d):
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name}\tmax_rel_err={err:.3e}\t{status}")
        failures += status == "FAIL"
    if failures:
        raise ContractError(f"{failures} gradient checks failed")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="s2tp",
        description="Perceiver speech-to-text model with dynamic latent access",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the synthetic task")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--average-best", type=int, default=10,
                   help="how many best checkpoints to average into best.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dla", choices=("full", "diverse", "random"), default="full")
    p.add_argument("--k-prime", type=int, default=0)
    p.add_argument("--beam", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="decode stored inputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True,
                   help="named-tensor file with inputs x0, x1, ...")
    p.add_argument("--dla", choices=("full", "diverse", "random"), default="full")
    p.add_argument("--k-prime", type=int, default=0)
    p.add_argument("--beam", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("select-latents", help="run latent selection on a record")
    p.add_argument("--record", required=True, help="attention record file (Z, A, frame_mask)")
    p.add_argument("--k-prime", type=int, required=True)
    p.add_argument("--method", choices=("diverse", "random"), default="diverse")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_select_latents)

    p = sub.add_parser("flops", help="analytic cost report")
    p.add_argument("--config", help="model spec config")
    p.add_argument("--baseline", help="baseline config (default: stride-4 transformer)")
    p.add_argument("--lengths", help="file of 'm t' pairs")
    p.add_argument("--k-prime", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("average-checkpoints", help="elementwise-mean checkpoints")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_average_checkpoints)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ContractError, ShapeError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
