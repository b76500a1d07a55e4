"""Command-line entry point binding data, training, and evaluation.

Subcommands: ``generate``, ``train``, ``eval``, ``embed``. Every run is
deterministic given its flags and input files; all randomness flows from
the single ``--seed`` flag. A JSON config file with flat keys mirroring
the flag names can set any option; explicitly passed flags override it.

Exit codes: 0 success, 2 usage/config error, 1 runtime error. Failures
print a machine-parsable line starting with ``error:`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import encoders, evaluation, figures, training
from .data import (
    DEFAULT_DELTA,
    SyntheticSpec,
    generate_synthetic,
    import_jsonl,
    load_dataset,
    save_dataset,
)
from .errors import HypercrossError
from .losses import LossConfig
from .training import TrainConfig, derive_seed

CHECKPOINT_NAME = "checkpoint.bin"


class ConfigError(Exception):
    """Flag/config validation failure (exit code 2)."""


def _add_common(parser):
    parser.add_argument("--config", metavar="FILE",
                        help="JSON config file with flat keys mirroring flags")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed; all randomness derives from it")


def _add_model_flags(parser):
    g = parser.add_argument_group("model")
    g.add_argument("--hidden-dim", type=int, default=512)
    g.add_argument("--embed-dim", type=int, default=64,
                   help="hyperbolic dimension d")
    g.add_argument("--brain-depth", type=int, default=3)
    g.add_argument("--text-depth", type=int, default=2)


def _add_train_flags(parser):
    g = parser.add_argument_group("optimization")
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--batch-size", type=int, default=4096)
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--weight-decay", type=float, default=0.05)
    h = parser.add_argument_group("loss")
    h.add_argument("--tau", type=float, default=0.1)
    h.add_argument("--lambda1", type=float, default=0.5)
    h.add_argument("--lambda2", type=float, default=30.0)
    h.add_argument("--p", type=float, default=2.0)
    h.add_argument("--q", type=float, default=0.5)
    h.add_argument("--curvature", type=float, default=1.0)
    h.add_argument("--symmetric", action="store_true", default=False,
                   help="also anchor the InfoNCE softmax on brain candidates")
    h.add_argument("--delta", type=float, default=DEFAULT_DELTA,
                   help="region-count threshold for synthetic/JSONL data")


def _add_synthetic_flags(parser):
    g = parser.add_argument_group("synthetic data")
    g.add_argument("--synthetic", action="store_true", default=False,
                   help="generate the training data in-process")
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--branching", type=int, default=2)
    g.add_argument("--per-node", type=int, default=10)
    g.add_argument("--noise-sigma", type=float, default=0.5)
    g.add_argument("--brain-dim", type=int, default=64)
    g.add_argument("--text-dim", type=int, default=64)


def _parser_generate():
    p = argparse.ArgumentParser(
        prog="hypercross generate",
        description="Write a synthetic hierarchical paired dataset container.",
    )
    _add_common(p)
    _add_synthetic_flags(p)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--out", required=True, metavar="FILE",
                   help="output dataset path")
    return p


def _parser_train():
    p = argparse.ArgumentParser(
        prog="hypercross train",
        description="Train the dual encoders; writes a checkpoint, a loss "
                    "log, and a loss-curve figure.",
    )
    _add_common(p)
    p.add_argument("--dataset", metavar="FILE",
                   help="binary container (.jsonl accepted, counts recomputed)")
    _add_synthetic_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out-dir", default="out", metavar="DIR")
    p.add_argument("--log-file", metavar="FILE",
                   help="extra copy of the per-epoch loss log")
    p.add_argument("--resume", metavar="CKPT",
                   help="start from an existing checkpoint's parameters")
    return p


def _parser_eval():
    p = argparse.ArgumentParser(
        prog="hypercross eval",
        description="Retrieval/hierarchy evaluation; writes report.json and "
                    "optional delimited exports with matching figures.",
    )
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--dataset", required=True, metavar="FILE")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out-dir", default="out", metavar="DIR")
    p.add_argument("--recall-ks", default="5,10,100",
                   help="comma-separated recall cutoffs")
    p.add_argument("--cv", action="store_true", default=False,
                   help="retrain per fold (cross-validated retrieval)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--null-model", action="store_true", default=False,
                   help="score the random-embedding control instead of training")
    p.add_argument("--export-poincare", action="store_true", default=False)
    p.add_argument("--export-hist", action="store_true", default=False)
    p.add_argument("--basis", metavar="FILE",
                   help="dataset whose brain vectors form the activation basis")
    p.add_argument("--top-fraction", type=float, default=0.10)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker cap for per-fold training")
    return p


def _parser_embed():
    p = argparse.ArgumentParser(
        prog="hypercross embed",
        description="Dump per-sample hyperboloid coordinates for both "
                    "modalities as CSV.",
    )
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--dataset", required=True, metavar="FILE")
    p.add_argument("--curvature", type=float, default=1.0)
    p.add_argument("--out-dir", default="out", metavar="DIR")
    return p


_COMMANDS = {
    "generate": _parser_generate,
    "train": _parser_train,
    "eval": _parser_eval,
    "embed": _parser_embed,
}


def _apply_config_file(parser, argv):
    """Merge a --config JSON file under the parser's defaults.

    Precedence: built-in defaults < config file < explicit flags.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {known.config}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {known.config} must hold a JSON object")
    dests = {a.dest for a in parser._actions}
    values, bad = {}, []
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest in dests:
            values[dest] = value
        else:
            bad.append(key)
    if bad:
        raise ConfigError(
            f"unknown config keys for this command: {', '.join(sorted(bad))}"
        )
    parser.set_defaults(**values)


def _effective_config(args, skip=("config",)):
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _echo_config(args):
    print("config: " + json.dumps(_effective_config(args), sort_keys=True))


def _synthetic_spec(args):
    return SyntheticSpec(
        tree_depth=args.depth,
        branching=args.branching,
        samples_per_node=args.per_node,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        brain_dim=args.brain_dim,
        text_dim=args.text_dim,
        delta=args.delta,
    )


def _load_any_dataset(path, delta):
    if str(path).endswith(".jsonl"):
        return import_jsonl(path, delta)
    return load_dataset(path)


def _loss_config(args):
    return LossConfig(
        tau=args.tau,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        p=args.p,
        q=args.q,
        c=args.curvature,
        symmetric=args.symmetric,
    )


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        loss=_loss_config(args),
        seed=args.seed,
    )


def _validated_train_config(args):
    cfg = _train_config(args)
    errs = cfg.validation_errors()
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    return cfg


def cmd_generate(args):
    _echo_config(args)
    try:
        spec = _synthetic_spec(args)
    except ValueError as exc:
        raise ConfigError(str(exc))
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out)
    print(
        f"wrote {args.out}: N={len(dataset)} B={dataset.brain_dim} "
        f"T={dataset.text_dim} nodes={spec.node_count}"
    )
    return 0


def _loss_log_lines(log):
    yield "epoch,angle,centroid,hierarchy,total"
    for epoch, rec in enumerate(log, start=1):
        yield (
            f"{epoch},{rec.angle!r},{rec.centroid!r},"
            f"{rec.hierarchy!r},{rec.total!r}"
        )


def cmd_train(args):
    _echo_config(args)
    if bool(args.dataset) == bool(args.synthetic):
        raise ConfigError(
            "exactly one of --dataset or --synthetic must be given"
        )
    cfg = _validated_train_config(args)

    if args.synthetic:
        try:
            dataset = generate_synthetic(_synthetic_spec(args))
        except ValueError as exc:
            raise ConfigError(str(exc))
    else:
        dataset = _load_any_dataset(args.dataset, args.delta)

    brain_cfg = encoders.EncoderConfig(
        input_dim=dataset.brain_dim, hidden_dim=args.hidden_dim,
        output_dim=args.embed_dim, depth=args.brain_depth,
        seed=derive_seed(args.seed, 1),
    )
    text_cfg = encoders.EncoderConfig(
        input_dim=dataset.text_dim, hidden_dim=args.hidden_dim,
        output_dim=args.embed_dim, depth=args.text_depth,
        seed=derive_seed(args.seed, 2),
    )
    initial = None
    if args.resume:
        brain_cfg, bp, text_cfg, tp = encoders.load_checkpoint(args.resume)
        if brain_cfg.input_dim != dataset.brain_dim or \
                text_cfg.input_dim != dataset.text_dim:
            raise HypercrossError(
                f"resume checkpoint dims (brain {brain_cfg.input_dim}, text "
                f"{text_cfg.input_dim}) do not match dataset "
                f"({dataset.brain_dim}, {dataset.text_dim})"
            )
        initial = (bp, tp)

    os.makedirs(args.out_dir, exist_ok=True)
    print("epoch,angle,centroid,hierarchy,total")

    def progress(epoch, rec):
        print(f"{epoch},{rec.angle!r},{rec.centroid!r},"
              f"{rec.hierarchy!r},{rec.total!r}")

    result = training.train(
        dataset, brain_cfg, text_cfg, cfg, progress=progress, initial=initial
    )

    ckpt_path = os.path.join(args.out_dir, CHECKPOINT_NAME)
    encoders.save_checkpoint(
        ckpt_path, result.brain_cfg, result.brain_params,
        result.text_cfg, result.text_params,
    )
    log_text = "\n".join(_loss_log_lines(result.log)) + "\n"
    log_path = os.path.join(args.out_dir, "loss_log.csv")
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(log_text)
    if args.log_file:
        with open(args.log_file, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(log_text)
    with open(os.path.join(args.out_dir, "run_config.json"), "w",
              encoding="utf-8") as fh:
        json.dump(_effective_config(args), fh, sort_keys=True, indent=2)
        fh.write("\n")
    if result.log:
        figures.plot_loss_curves(
            result.log, os.path.join(args.out_dir, "loss_curves.png")
        )
    print(f"wrote {ckpt_path}")
    return 0


def _parse_ks(text):
    try:
        ks = sorted({int(tok) for tok in str(text).split(",") if tok.strip()})
    except ValueError:
        raise ConfigError(f"recall-ks: cannot parse {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"recall-ks: need positive integers, got {text!r}")
    return ks


def cmd_eval(args):
    _echo_config(args)
    ks = _parse_ks(args.recall_ks)
    if args.cv:
        train_cfg = _validated_train_config(args)
    else:
        train_cfg = _train_config(args)
    dataset = _load_any_dataset(args.dataset, args.delta)
    brain_cfg, brain_params, text_cfg, text_params = encoders.load_checkpoint(
        args.checkpoint
    )
    if brain_cfg.input_dim != dataset.brain_dim or \
            text_cfg.input_dim != dataset.text_dim:
        raise HypercrossError(
            f"checkpoint expects brain_dim={brain_cfg.input_dim}, "
            f"text_dim={text_cfg.input_dim} but dataset has "
            f"brain_dim={dataset.brain_dim}, text_dim={dataset.text_dim}"
        )
    os.makedirs(args.out_dir, exist_ok=True)
    c = args.curvature

    zb, _ = encoders.forward(brain_params, dataset.brain, c)
    zt, _ = encoders.forward(text_params, dataset.text, c)

    report = evaluation.EvalReport()
    single, skipped, degenerate = evaluation.retrieval_recalls(zb, zt, ks, c)
    report.recall = {
        "ks": ks,
        "single": single,
        "single_skipped_ks": skipped,
        "cv": None,
    }
    report.diagnostics = {
        "degenerate_pairs": degenerate,
        "n_samples": len(dataset),
        "dataset": str(args.dataset),
        "checkpoint": str(args.checkpoint),
    }

    times = zb[:, 0]
    try:
        report.tau = evaluation.kendall_tau(times, dataset.region_counts)
    except (evaluation.UndefinedCorrelationError, ValueError) as exc:
        report.tau = None
        report.diagnostics["tau_error"] = str(exc)

    if args.cv:
        report.recall["cv"] = evaluation.cross_validated_retrieval(
            dataset, brain_cfg, text_cfg, train_cfg,
            k_folds=args.folds, ks=ks, null_model=args.null_model,
            threads=max(1, args.threads),
        )

    if args.export_poincare:
        csv_path = os.path.join(args.out_dir, "poincare.csv")
        labels = [int(r) for r in dataset.region_counts]
        evaluation.export_poincare(zb, labels, csv_path, c)
        coords = evaluation.poincare_coords_2d(zb, c)
        figures.plot_poincare(
            coords, labels, os.path.join(args.out_dir, "poincare.png"),
            title="brain embeddings (label = region count)",
        )
        report.diagnostics["poincare_export"] = csv_path

    if args.export_hist:
        csv_path = os.path.join(args.out_dir, "time_hierarchy.csv")
        evaluation.export_time_hierarchy(times, dataset.region_counts, csv_path)
        figures.plot_time_hierarchy(
            times, dataset.region_counts,
            os.path.join(args.out_dir, "time_hierarchy.png"), tau=report.tau,
        )
        report.diagnostics["hist_export"] = csv_path

    if args.basis:
        basis_ds = _load_any_dataset(args.basis, args.delta)
        if basis_ds.brain_dim != brain_cfg.input_dim:
            raise HypercrossError(
                f"basis brain_dim={basis_ds.brain_dim} does not match "
                f"checkpoint brain_dim={brain_cfg.input_dim}"
            )
        basis_pts, _ = encoders.forward(brain_params, basis_ds.brain, c)
        probs = evaluation.basis_similarity_matrix(zt, basis_pts, c)
        mean = probs.mean(axis=0)
        mask = evaluation.top_percentile_mask(mean, args.top_fraction)
        report.basis_scores = {
            "mean": [float(v) for v in mean],
            "top_fraction": args.top_fraction,
            "top_indices": [int(i) for i in np.nonzero(mask)[0]],
        }
        csv_path = os.path.join(args.out_dir, "basis_scores.csv")
        lines = ["sample," + ",".join(f"basis_{m}" for m in range(len(mean)))]
        for i, row in enumerate(probs):
            lines.append(f"{i}," + ",".join(repr(float(v)) for v in row))
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        figures.plot_basis_scores(
            mean, os.path.join(args.out_dir, "basis_scores.png")
        )
        report.diagnostics["basis_export"] = csv_path

    report_path = os.path.join(args.out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    print(f"wrote {report_path}")
    return 0


def _write_embedding_csv(path, points):
    d = points.shape[1] - 1
    header = "time," + ",".join(f"s{i}" for i in range(d))
    lines = [header]
    for row in points:
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_embed(args):
    _echo_config(args)
    dataset = _load_any_dataset(args.dataset, DEFAULT_DELTA)
    brain_cfg, brain_params, text_cfg, text_params = encoders.load_checkpoint(
        args.checkpoint
    )
    if brain_cfg.input_dim != dataset.brain_dim or \
            text_cfg.input_dim != dataset.text_dim:
        raise HypercrossError(
            f"checkpoint expects brain_dim={brain_cfg.input_dim}, "
            f"text_dim={text_cfg.input_dim} but dataset has "
            f"brain_dim={dataset.brain_dim}, text_dim={dataset.text_dim}"
        )
    os.makedirs(args.out_dir, exist_ok=True)
    zb, _ = encoders.forward(brain_params, dataset.brain, args.curvature)
    zt, _ = encoders.forward(text_params, dataset.text, args.curvature)
    bpath = os.path.join(args.out_dir, "brain_embeddings.csv")
    tpath = os.path.join(args.out_dir, "text_embeddings.csv")
    _write_embedding_csv(bpath, zb)
    _write_embedding_csv(tpath, zt)
    print(f"wrote {bpath} and {tpath} ({len(dataset)} rows each)")
    return 0


_HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: hypercross {generate,train,eval,embed} [options]")
        print(__doc__)
        return 0 if argv else 2
    command, rest = argv[0], argv[1:]
    if command not in _COMMANDS:
        print(f"error: unknown command {command!r}; expected one of "
              f"{', '.join(_COMMANDS)}", file=sys.stderr)
        return 2
    parser = _COMMANDS[command]()
    try:
        _apply_config_file(parser, rest)
        args = parser.parse_args(rest)
        return _HANDLERS[command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HypercrossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
