"""Command-line surface: train, compare-grads, validate-assumptions,
shuffle-eval, rate-stats, profile, verify."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .analysis import assumption_metrics, firing_stats, profile_costs, shuffle_eval
from .bptt import bptt_backward
from .config import ExperimentConfig, load_config
from .network import ce_loss, direct_encode, init_model, load_model, model_forward_bptt
from .oracle import grad_compare
from .rate import rate_backward, rate_forward, rate_logits
from .tensor import RngState
from .train import TrainingDiverged, load_datasets, model_spec_from_config, train
from .verify import run_all


def _add_config_overrides(p: argparse.ArgumentParser, include_method: bool = True):
    p.add_argument("--config", help="config file (flat key = value lines)")
    if include_method:
        p.add_argument("--method", choices=("bptt", "rate_m", "rate_s"))
    p.add_argument("--hidden", help="comma-separated widths, e.g. 256,256")
    p.add_argument("--bn", choices=("none", "tdbn", "spatial"))
    p.add_argument("--T", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-n", type=int, dest="train_n")
    p.add_argument("--test-n", type=int, dest="test_n")
    p.add_argument("--features", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--out", dest="out_dir")


def _resolve_config(args, skip=()) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for name in (
        "method", "bn", "T", "epochs", "batch_size", "lr", "seed",
        "train_n", "test_n", "features", "classes", "separation", "out_dir",
    ):
        if name in skip:
            continue
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "hidden", None):
        cfg.hidden = tuple(int(v) for v in args.hidden.split(","))
    return cfg.validate()


def _fresh_model_and_batch(cfg: ExperimentConfig):
    train_data, test_data = load_datasets(cfg)
    spec = model_spec_from_config(cfg, train_data.images.shape[1], train_data.n_classes)
    model = init_model(spec, RngState(cfg.seed).derive(1))
    xb = train_data.images[: cfg.batch_size]
    yb = train_data.labels[: cfg.batch_size]
    return model, xb, yb, train_data, test_data


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as f:
        f.write(text)
    return path


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    try:
        result = train(cfg)
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"final test accuracy: {result.summary['final_test_accuracy']:.4f}")
    print(f"artifacts written to {cfg.out_dir}")
    return 0


def cmd_compare_grads(args) -> int:
    cfg = _resolve_config(args)
    model, xb, yb, _, _ = _fresh_model_and_batch(cfg)
    encoded = direct_encode(xb, cfg.T)
    outputs, cache = model_forward_bptt(model, encoded, training=True)
    _, dloss = ce_loss(outputs.mean(axis=0), yb)
    gb, _ = bptt_backward(model, cache, dloss)
    mode = "rate_s" if cfg.bn == "spatial" else "rate_m"
    _, rcache = rate_forward(model, encoded, mode)
    _, dloss_r = ce_loss(rate_logits(model, rcache), yb)
    gr = rate_backward(model, rcache, dloss_r)
    report = grad_compare(gr, gb)
    path = _write(cfg.out_dir, "compare_grads.json", json.dumps(report.as_dict(), indent=2) + "\n")
    print(f"median cosine {report.median_cosine:.6f}; report at {path}")
    return 0


def cmd_validate_assumptions(args) -> int:
    cfg = _resolve_config(args)
    model, xb, yb, _, _ = _fresh_model_and_batch(cfg)
    report = assumption_metrics(model, xb, yb)
    path = _write(cfg.out_dir, "assumptions.json", json.dumps(report.as_dict(), indent=2) + "\n")
    for li, layer in enumerate(report.layers):
        print(f"layer {li}: cosA1={layer.cos_a1:.6f} rho={layer.rho_corr:.2e} cosA2={layer.cos_a2:.6f}")
    print(f"report at {path}")
    return 0


def cmd_shuffle_eval(args) -> int:
    cfg = _resolve_config(args)
    _, test_data = load_datasets(cfg)
    if args.checkpoint:
        model = load_model(args.checkpoint)
    else:
        model, _, _, _, _ = _fresh_model_and_batch(cfg)
    plain, shuffled = shuffle_eval(
        model, test_data.images, test_data.labels, seed=cfg.seed,
        batch_size=cfg.batch_size, shuffle_deeper=args.deeper,
    )
    out = {"accuracy": plain, "accuracy_shuffled": shuffled, "delta": plain - shuffled}
    path = _write(cfg.out_dir, "shuffle_eval.json", json.dumps(out, indent=2) + "\n")
    print(f"plain {plain:.4f}, shuffled {shuffled:.4f}; report at {path}")
    return 0


def cmd_rate_stats(args) -> int:
    cfg = _resolve_config(args)
    _, test_data = load_datasets(cfg)
    model = load_model(args.checkpoint) if args.checkpoint else _fresh_model_and_batch(cfg)[0]
    stats = firing_stats(model, test_data.images, batch_size=cfg.batch_size)
    path = _write(cfg.out_dir, "rates.csv", stats.to_csv_text())
    print(f"per-layer temporal means: {np.round(stats.temporal_mean, 4).tolist()}")
    print(f"report at {path}")
    return 0


def cmd_profile(args) -> int:
    cfg = _resolve_config(args, skip=("method",))
    model, xb, yb, _, _ = _fresh_model_and_batch(cfg)
    t_list = [int(v) for v in args.timesteps.split(",")]
    methods = args.method.split(",")
    profile = profile_costs(model, xb, yb, t_list, methods, repeats=args.repeats)
    path = _write(cfg.out_dir, "profile.csv", profile.to_csv_text())
    for row in profile.rows:
        print(
            f"{row.method:7s} T={row.T:<3d} backward {row.backward_seconds * 1e3:8.3f} ms  "
            f"cache {row.cache_bytes / 1e6:8.3f} MB  trace {row.trace_seconds * 1e3:7.3f} ms"
        )
    print(f"report at {path}")
    return 0


def cmd_verify(args) -> int:
    results = run_all()
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status}  {r.name:<{width}}  tol={r.tolerance}  observed={r.observed}")
        failures += 0 if r.ok else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratebp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training experiment")
    _add_config_overrides(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compare-grads", help="rate vs BPTT gradients on one batch")
    _add_config_overrides(p)
    p.set_defaults(fn=cmd_compare_grads)

    p = sub.add_parser("validate-assumptions", help="temporal-independence metrics")
    _add_config_overrides(p)
    p.set_defaults(fn=cmd_validate_assumptions)

    p = sub.add_parser("shuffle-eval", help="accuracy under temporal shuffling")
    _add_config_overrides(p)
    p.add_argument("--checkpoint", help="trained checkpoint (.rbp)")
    p.add_argument("--deeper", action="store_true", help="also shuffle between blocks")
    p.set_defaults(fn=cmd_shuffle_eval)

    p = sub.add_parser("rate-stats", help="firing-rate statistics per layer/timestep")
    _add_config_overrides(p)
    p.add_argument("--checkpoint", help="trained checkpoint (.rbp)")
    p.set_defaults(fn=cmd_rate_stats)

    p = sub.add_parser("profile", help="backward time and cache bytes across T")
    _add_config_overrides(p, include_method=False)
    p.add_argument("--timesteps", default="1,2,4,8")
    p.add_argument("--method", default="rate_m,bptt", help="comma-separated methods")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("verify", help="run the oracle suite; nonzero exit on any breach")
    p.set_defaults(fn=cmd_verify)

    return parser


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code) if err.code is not None else 0
    try:
        return args.fn(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
