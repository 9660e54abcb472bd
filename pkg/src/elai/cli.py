"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 data / I/O error,
4 numeric failure.  Reports are JSON with sorted keys; plot data is CSV.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import __version__
from .dataset import (
    SyntheticSpec,
    generate_synthetic,
    holdout_category,
    infer_schema,
    load_csv,
    to_csv,
)
from .errors import BadIndex, ElaiError, IoFailure, SchemaMismatch
from .explain import (
    ValueFunctionSpec,
    attention_map,
    rank_attributions,
    shap_exact,
    shap_sampled,
)
from .metrics import evaluate_scores, latency_benchmark, zero_day_eval
from .model import forward, param_count
from .pipeline import (
    PipelineConfig,
    dump_json,
    fit_pipeline,
    load_config,
    run_report,
    scorer_for,
    transform,
)
from .training import checkpoint_bytes, load_checkpoint, save_checkpoint

log = logging.getLogger("elai")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(text):
    v = _nonneg_float(text)
    if v == 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _sibling(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _load_data(path, cfg: PipelineConfig, schema=None):
    s = cfg.schema
    if schema is None:
        schema = infer_schema(path, s.label_column, s.category_column, s.delimiter)
    return load_csv(path, schema, s.positive_labels, s.negative_labels)


def _load_for_checkpoint(path, ckpt, cfg: PipelineConfig):
    """Read data and check its feature columns against the checkpoint."""
    s = cfg.schema
    schema = infer_schema(path, s.label_column, s.category_column, s.delimiter)
    if ckpt.schema is not None and schema.feature_names != ckpt.schema.feature_names:
        raise SchemaMismatch(
            f"data features {list(schema.feature_names)} do not match the model's "
            f"{list(ckpt.schema.feature_names)}"
        )
    return load_csv(path, schema, s.positive_labels, s.negative_labels)


# --- subcommands -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        n_normal=args.normal,
        n_attack=args.attack,
        d=args.dim,
        separation=args.separation,
        noise_std=args.noise,
        n_categories=args.categories,
    )
    ds = generate_synthetic(spec, args.seed)
    to_csv(ds, args.out)
    print(dump_json({"out": str(args.out), **ds.summary()}), end="")
    return 0


def cmd_init_config(args) -> int:
    text = dump_json(PipelineConfig().to_dict())
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ds = _load_data(args.data, cfg)
    result = fit_pipeline(ds, cfg)
    save_checkpoint(result.checkpoint, args.out_model)
    report = run_report(cfg, ds, result)
    if args.ranking:
        result.ranking.to_csv(args.ranking)
    text = dump_json(report)
    if args.summary:
        _write(args.summary, text)
    sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    ckpt = load_checkpoint(args.model)
    ds = _load_for_checkpoint(args.data, ckpt, cfg)
    scores = scorer_for(ckpt)(ds.X)
    report = evaluate_scores(scores, ds.y, args.threshold)
    text = dump_json(report.to_dict())
    if args.report:
        _write(args.report, text)
        report.confusion.to_csv(_sibling(args.report, ".confusion.csv"))
    sys.stdout.write(text)
    return 0


def cmd_explain(args) -> int:
    cfg = load_config(args.config)
    ckpt = load_checkpoint(args.model)
    ds = _load_for_checkpoint(args.data, ckpt, cfg)
    if not 0 <= args.row < ds.n:
        raise BadIndex(f"--row {args.row} out of range 0..{ds.n - 1}")
    z = transform(ckpt, ds.X[args.row : args.row + 1])[0]
    names = (
        ckpt.projection.component_names(ds.schema.feature_names)
        if ckpt.projection is not None
        else list(ds.schema.feature_names)
    )
    spec = ValueFunctionSpec()
    if args.method == "exact":
        attr = shap_exact(ckpt.model, z, spec)
    else:
        attr = shap_sampled(ckpt.model, z, spec, m=args.m, seed=args.seed)
    amap = attention_map(forward(ckpt.model, z))
    out = Path(args.out)
    att_out = Path(args.attention_out) if args.attention_out else _sibling(out, ".attention.csv")
    attr.to_csv(out, names)
    amap.to_csv(att_out)
    summary = {
        "row": args.row,
        "label": int(ds.y[args.row]),
        "method": attr.method,
        "m": attr.m,
        "seed": attr.seed,
        "prediction": attr.value,
        "base": attr.base,
        "efficiency_residual": attr.residual,
        "ranking": [{"index": i, "name": n, "phi": p} for i, n, p in rank_attributions(attr, names)],
        "attention": {"alpha": amap.alpha.tolist(), "argmax_step": amap.argmax},
        "attribution_csv": str(out),
        "attention_csv": str(att_out),
    }
    sys.stdout.write(dump_json(summary))
    return 0


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    try:
        ckpt = load_checkpoint(args.model)
        file_bytes = Path(args.model).stat().st_size
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    ds = _load_for_checkpoint(args.data, ckpt, cfg)
    Z = transform(ckpt, ds.X)
    lat = latency_benchmark(ckpt.model, Z, warmup=args.warmup, reps=args.reps)
    size = len(checkpoint_bytes(ckpt))
    report = {
        "latency": lat.to_dict(),
        "param_count": param_count(ckpt.model),
        "model_size_bytes": size,
        "checkpoint_file_bytes": file_bytes,
    }
    text = dump_json(report)
    if args.report:
        _write(args.report, text)
    sys.stdout.write(text)
    print(f"model size: {size} bytes, {param_count(ckpt.model)} parameters", file=sys.stderr)
    return 0


def cmd_zero_day(args) -> int:
    cfg = load_config(args.config)
    ds = _load_data(args.data, cfg)
    train_ds, held = holdout_category(ds, args.category)
    result = zero_day_eval(train_ds, held, cfg)
    report = {"category": args.category, **result.to_dict(), "tool_version": __version__}
    text = dump_json(report)
    if args.report:
        _write(args.report, text)
    sys.stdout.write(text)
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elai", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"elai {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic labeled flow CSV")
    p.add_argument("--normal", type=_positive_int, default=100)
    p.add_argument("--attack", type=_positive_int, default=100)
    p.add_argument("--dim", type=_positive_int, default=6)
    p.add_argument("--separation", type=_nonneg_float, default=6.0)
    p.add_argument("--noise", type=_positive_float, default=1.0)
    p.add_argument("--categories", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("init-config", help="emit the default pipeline config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("train", help="fit normalization, projection and model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out-model", required=True)
    p.add_argument("--summary", help="also write the run report here")
    p.add_argument("--ranking", help="write the information-gain ranking CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score labeled data with a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report")
    p.add_argument("--config")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="Shapley attributions and attention for one row")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--method", choices=("exact", "sampled"), default="exact")
    p.add_argument("--m", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="attribution CSV")
    p.add_argument("--attention-out", help="attention CSV (default: <out>.attention.csv)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("benchmark", help="per-sample inference latency and model size")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--reps", type=_positive_int, default=1000)
    p.add_argument("--warmup", type=_nonneg_int, default=100)
    p.add_argument("--report")
    p.add_argument("--config")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("zero-day", help="hold out one attack category and measure detection")
    p.add_argument("--data", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--config")
    p.add_argument("--report")
    p.set_defaults(func=cmd_zero_day)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ElaiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
