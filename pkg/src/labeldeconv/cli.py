"""``labeldeconv`` command line.

Exit codes: 0 success, 1 a check failed, 2 bad configuration, 3 bad or
missing data, 4 numeric failure during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .bundle import load_bundle, save_bundle
from .checks import GRAPH_KINDS, MAX_N, PRECONDITION, run_oracle_checks
from .errors import ConfigError, DataError, NumericError, PreconditionError, SingularMatrixError
from .graph import row_normalize, symmetrize
from .labels import TaskKind, precompute_hop_labels
from .metrics import emit_curves
from .nn import LossKind
from .pipeline import Method, TrainConfig, run_experiment, run_motivating_example
from .synth import SynthConfig, build_counterexample_family, build_motivating_example, generate_assumption1

log = logging.getLogger("labeldeconv")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

BASELINES = [Method.GLEM.value, Method.JOINT.value, Method.JOINT_SAMPLED.value, Method.FROZEN.value]


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(","))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS/OpenMP worker threads; results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")


def _add_training(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--n-hops", type=int, default=None, help="hop labels K_0..K_N; default is the filter degree")
    g.add_argument("--alpha", type=float, default=d.alpha, help="weight of the inverse labels in the encoder target")
    g.add_argument("--epochs-ne", type=int, default=d.ne_epochs, help="encoder-phase epochs")
    g.add_argument("--epochs-gnn", type=int, default=d.gnn_epochs, help="GNN-phase (or joint) epochs")
    g.add_argument("--batch-size", type=int, default=d.batch_size, help="encoder-phase mini-batch size")
    g.add_argument("--filter", default=d.filter, help="GNN filter: gcn:N (fixed Â^N) or poly:N (learnable degree-N polynomial)")
    g.add_argument("--warm-start-head", action="store_true", help="seed the GNN head with the encoder-phase head")
    g.add_argument("--lr", type=float, default=d.lr, help="Adam learning rate")
    g.add_argument("--gnn-lr", type=float, default=None, help="GNN-phase learning rate; defaults to --lr")
    g.add_argument("--lr-final", type=float, default=None, help="anneal the rate linearly to this value")
    g.add_argument("--feature-dim", type=int, default=d.feature_dim, help="encoder output width")
    g.add_argument("--encoder-hidden", type=_ints, default=d.encoder_hidden, help="comma-separated encoder hidden widths")
    g.add_argument("--head-hidden", type=_ints, default=d.head_hidden, help="comma-separated head hidden widths")
    g.add_argument("--no-encoder-bias", action="store_true", help="linear encoder layers without bias")
    g.add_argument("--no-ne-head", action="store_true", help="compare encoder outputs to targets directly")
    g.add_argument("--no-gnn-head", action="store_true", help="GNN is the filter alone")
    g.add_argument("--ne-loss", choices=[k.value for k in LossKind], default=None, help="encoder-phase loss; default follows the task")
    g.add_argument("--gnn-loss", choices=[k.value for k in LossKind], default=None, help="GNN-phase loss; default follows the task")
    g.add_argument("--no-pseudo-labels", action="store_true", help="train the encoder on the train split only")
    g.add_argument("--pseudo-epochs", type=int, default=d.pseudo_epochs, help="epochs of the pseudo-label GNN")
    g.add_argument("--joint-max-nodes", type=int, default=d.joint_max_nodes, help="node cap for full-batch joint training")
    g.add_argument("--symmetrize", action="store_true", help="add reverse edges before normalizing")


def _config(args) -> TrainConfig:
    try:
        cfg = TrainConfig(
            n_hops=args.n_hops,
            alpha=args.alpha,
            ne_epochs=args.epochs_ne,
            gnn_epochs=args.epochs_gnn,
            batch_size=args.batch_size,
            seed=args.seed,
            lr=args.lr,
            gnn_lr=args.gnn_lr,
            lr_final=args.lr_final,
            filter=args.filter,
            warm_start_head=args.warm_start_head,
            feature_dim=args.feature_dim,
            encoder_hidden=args.encoder_hidden,
            encoder_bias=not args.no_encoder_bias,
            head_hidden=args.head_hidden,
            ne_head=not args.no_ne_head,
            gnn_head=not args.no_gnn_head,
            ne_loss=args.ne_loss,
            gnn_loss=args.gnn_loss,
            pseudo_labels=not args.no_pseudo_labels,
            pseudo_epochs=args.pseudo_epochs,
            joint_max_nodes=args.joint_max_nodes,
            symmetrize=args.symmetrize,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="labeldeconv", description="Label deconvolution for node representation learning.",
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset bundle", formatter_class=fmt)
    p.add_argument("--kind", choices=["assumption1", "counterexample", "motivating"], default="assumption1",
                   help="dataset family")
    p.add_argument("--num-nodes", type=int, default=SynthConfig.num_nodes, help="nodes (assumption1)")
    p.add_argument("--attr-dim", type=int, default=SynthConfig.attr_dim, help="attribute width (assumption1)")
    p.add_argument("--num-classes", type=int, default=SynthConfig.num_classes, help="label width")
    p.add_argument("--filter-coeffs", type=_floats, default=SynthConfig.filter_coeffs,
                   help="true filter coefficients, lowest degree first (assumption1)")
    p.add_argument("--duplicates", type=int, default=0, help="planted duplicate attribute rows (assumption1)")
    p.add_argument("--num-pairs", type=int, default=50, help="2-cycles (counterexample)")
    p.add_argument("--split", type=_floats, default=(0.6, 0.2, 0.2), help="train,val,test fractions (assumption1)")
    p.add_argument("--task", choices=[t.value for t in TaskKind], default=None,
                   help="stored labels; regression keeps the continuous targets")
    p.add_argument("--out", required=True, help="bundle directory")
    _add_common(p)

    p = sub.add_parser("preprocess", help="precompute hop labels Â^i Y of the train split", formatter_class=fmt)
    p.add_argument("bundle", help="bundle directory")
    p.add_argument("--n-hops", type=int, default=2, help="highest hop N")
    p.add_argument("--symmetrize", action="store_true", help="add reverse edges before normalizing")
    p.add_argument("--out", required=True, help="output hop-label file")
    _add_common(p)

    for name, methods, default, text in (
        ("train", [m.value for m in Method], Method.LD.value, "run an experiment and write its report"),
        ("baseline", BASELINES, Method.GLEM.value, "run a comparison method and write its report"),
    ):
        p = sub.add_parser(name, help=text, formatter_class=fmt)
        p.add_argument("bundle", help="bundle directory")
        p.add_argument("--method", choices=methods, default=default, help="training scheme")
        p.add_argument("--out", default="report.json", help="report path")
        p.add_argument("--curves", default=None, help="also write curve CSVs into this directory")
        p.add_argument("--record-timing", action="store_true",
                       help="embed wall-clock timing in the report (makes it non-reproducible byte-wise); "
                            "otherwise timing goes to <out>.timing.json")
        _add_training(p)
        _add_common(p)

    p = sub.add_parser("oracle-check", help="check the sparse path against dense linear algebra", formatter_class=fmt)
    p.add_argument("--n", type=int, default=8, help=f"matrix size (2..{MAX_N})")
    p.add_argument("--graph", choices=GRAPH_KINDS, default="random", help="graph used by the graph checks")
    _add_common(p)

    p = sub.add_parser("motivating-example", help="four-node example: label deconvolution vs label-only training",
                       formatter_class=fmt)
    p.add_argument("--alpha", type=float, default=1.0, help="weight of the inverse labels")
    p.add_argument("--epochs-ne", type=int, default=3000, help="encoder epochs")
    _add_common(p)

    p = sub.add_parser("report", help="summarize a report and export its curves", formatter_class=fmt)
    p.add_argument("report", help="report JSON")
    p.add_argument("--out", default=None, help="directory for curve CSVs")
    _add_common(p)
    return parser


def _fmt_matrix(m: np.ndarray) -> str:
    return "\n".join("    [" + ", ".join(f"{v:7.4f}" for v in row) + "]" for row in m)


def cmd_gen(args) -> int:
    if args.kind == "motivating":
        gen = build_motivating_example()
    elif args.kind == "counterexample":
        gen = build_counterexample_family(args.num_pairs, args.num_classes, args.seed)
    else:
        cfg = SynthConfig(num_nodes=args.num_nodes, attr_dim=args.attr_dim, num_classes=args.num_classes,
                          filter_coeffs=args.filter_coeffs, num_duplicates=args.duplicates, split=args.split,
                          seed=args.seed)
        cfg.validate()
        gen = generate_assumption1(cfg)
    path = save_bundle(gen.to_bundle(args.task), args.out)
    print(f"wrote {gen.name} ({gen.num_nodes} nodes, {gen.graph.num_edges} edges) to {path}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    if args.n_hops < 0:
        raise ConfigError("--n-hops must be >= 0")
    ds = load_bundle(args.bundle)
    graph = symmetrize(ds.graph) if args.symmetrize else ds.graph
    y = ds.label_matrix().data.copy()
    y[np.setdiff1d(np.arange(ds.num_nodes), ds.split.train)] = 0.0
    stack = precompute_hop_labels(row_normalize(graph), y, args.n_hops)
    stack.save(args.out)
    print(f"wrote hop labels K_0..K_{args.n_hops} of shape {stack.hops.shape} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)  # fail on bad flags before touching data
    ds = load_bundle(args.bundle)
    report = run_experiment(ds, args.method, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(include_timing=args.record_timing))
    if not args.record_timing:
        Path(f"{out}.timing.json").write_text(json.dumps({"timing_ms": report.timing_ms}, indent=2) + "\n")
    if args.curves:
        emit_curves(report, args.curves)
    parts = [f"{k}={v:.4f}" for k, v in report.metrics.items() if v is not None]
    print(f"{report.method} {report.metric}: {' '.join(parts)}  report: {out}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    results = run_oracle_checks(args.n, args.graph, args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if r.status == "fail"]
    if failed:
        print(f"failed: {', '.join(failed)}")
        return EXIT_CHECK
    skipped = [r.name for r in results if r.status == PRECONDITION]
    print("all checks passed" + (f" (preconditions unmet: {', '.join(skipped)})" if skipped else ""))
    return EXIT_OK


def cmd_motivating_example(args) -> int:
    if not 0.0 <= args.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {args.alpha}")
    r = run_motivating_example(seed=args.seed, alpha=args.alpha, ne_epochs=args.epochs_ne)
    x = build_motivating_example().attrs
    print("node  X     Y     F_LD                       ÂF_LD                      F_GLEM                     ÂF_GLEM")
    for i in range(4):
        cells = [x[i], r.labels[i], r.features_ld[i], r.pred_ld[i], r.features_glem[i], r.pred_glem[i]]
        text = ["e%d" % (np.argmax(c) + 1) for c in cells[:2]]
        text += ["(" + ", ".join(f"{v:6.3f}" for v in c) + ")" for c in cells[2:]]
        print(f"{i:>4}  {text[0]:<5} {text[1]:<5} " + "  ".join(f"{t:<25}" for t in text[2:]))
    print(f"deconvolution weights gamma = ({', '.join(f'{g:.6f}' for g in r.gamma)})")
    print("beta_LD =\n" + _fmt_matrix(r.beta_ld))
    print("beta_GLEM =\n" + _fmt_matrix(r.beta_glem))
    print(f"accuracy  LD: {r.acc_ld:.0%}  GLEM: {r.acc_glem:.0%}")
    if args.alpha == 1.0 and not (r.acc_ld == 1.0 and r.acc_glem == 0.0):
        print(f"mismatch: expected LD 100% / GLEM 0%, got {r.acc_ld:.0%} / {r.acc_glem:.0%}")
        return EXIT_CHECK
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"no report at {args.report}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt report: {exc}") from exc
    if not isinstance(report, dict) or "curves" not in report or "metrics" not in report:
        raise DataError("report lacks curves or metrics")
    metric = report.get("metric", "accuracy")
    print(f"method: {report.get('method')}")
    for split, value in report["metrics"].items():
        print(f"  {split:<5} {metric}: {'n/a' if value is None else f'{value:.4f}'}")
    gamma = report["curves"].get("gamma") or []
    if gamma:
        print("  final gamma: (" + ", ".join(f"{g:.4f}" for g in gamma[-1]) + ")")
    if args.out:
        for path in emit_curves(report, args.out):
            print(f"  wrote {path}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "baseline": cmd_train,
    "oracle-check": cmd_oracle_check,
    "motivating-example": cmd_motivating_example,
    "report": cmd_report,
}


def _thread_limit(n: int):
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads) if args.threads else nullcontext():
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, SingularMatrixError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PreconditionError as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
