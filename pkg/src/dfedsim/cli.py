"""Command-line entry point: ``dfedsim {run,verify,topology,partition-stats}``.

Exit codes: 0 success, 1 verification failure, 2 configuration or input
error, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from dfedsim.config import ExperimentConfig, parse_config
from dfedsim.errors import ConfigError, DfedsimError, DivergenceError, TopologyError
from dfedsim.simulator import build_data, format_csv, Simulation
from dfedsim.topology import KINDS, build_graph, contraction_check, metropolis_weights

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("dfedsim")


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for flag in ("seed", "out", "threads"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    try:
        return cfg.with_overrides(**overrides)
    except ConfigError as exc:
        raise ConfigError(str(exc), key=exc.key, location="command line") from None


def cmd_run(args) -> int:
    cfg = _load_config(args)
    metrics = Simulation(cfg).run()
    text = format_csv(metrics)
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    last = metrics[-1]
    print(
        f"{cfg.algorithm}: round {last.round} eta={last.eta:.6g} psi={last.psi:.6g} "
        f"train_loss={last.train_loss:.6g} test_acc={last.test_acc:.4f} "
        f"grad_norm_sq={last.grad_norm_sq:.3e} consensus_err={last.consensus_err:.3e}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    from dfedsim.verify import CHECKS, run_verify

    names = [name for name, _, _ in CHECKS]
    unknown = [n for n in args.only or [] if n not in names]
    if unknown:
        raise ConfigError(f"unknown check {unknown[0]!r} for --only; available: {', '.join(names)}", key="--only")
    report = run_verify(args.only)
    for check in report.checks:
        print(check.line())
    failed = sum(not c.passed for c in report.checks)
    print(f"{len(report.checks) - failed}/{len(report.checks)} checks passed")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_topology(args) -> int:
    try:
        g = build_graph(args.kind, args.m, k=args.k, seed=args.seed)
    except TopologyError as exc:
        raise ConfigError(str(exc), key="topology") from None
    w = metropolis_weights(g)
    table = contraction_check(w, args.t_max)
    if args.csv:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["t", "norm", "psi_pow_t"])
        for t, norm, bound in table:
            writer.writerow([t, format(norm, ".17g"), format(bound, ".17g")])
        return EXIT_OK
    deg = g.degrees()
    print(f"kind: {args.kind}")
    print(f"m: {g.m}")
    print(f"edges: {len(g.edges)}")
    print(f"degree: min={deg.min()} max={deg.max()} mean={deg.mean():.4g}")
    print("degree histogram: " + ", ".join(f"{d}:{c}" for d, c in g.degree_histogram().items()))
    print(f"psi: {w.psi:.17g}")
    print(f"spectral gap: {1 - w.psi:.17g}")
    print("t  ||W^t - P||_op  psi^t")
    for t, norm, bound in table:
        print(f"{t:<3d}{norm:.6e}  {bound:.6e}")
    return EXIT_OK


def cmd_partition_stats(args) -> int:
    cfg = _load_config(args)
    overrides = {k: v for k, v in (("clients", args.clients), ("alpha", args.alpha)) if v is not None}
    if args.iid:
        overrides["partition"] = "iid"
    cfg = cfg.with_overrides(**overrides)
    if cfg.dataset == "quadratic":
        raise ConfigError("partition-stats needs a classification dataset", key="dataset")
    train, _, part = build_data(cfg)
    counts = part.class_counts(train.targets, train.n_classes)
    rows = [["shard_id", "size"] + [f"class_{c}" for c in range(train.n_classes)]]
    rows += [[i, len(s)] + list(map(int, counts[i])) for i, s in enumerate(part.shards)]
    out = open(cfg.out, "w", newline="") if cfg.out else sys.stdout
    try:
        csv.writer(out, lineterminator="\n").writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfedsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log hyperparameter warnings and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", metavar="PATH", help="key = value experiment file")
        p.add_argument("--seed", type=int, help="override the config's base seed")
        p.add_argument("--out", metavar="PATH", help="write CSV here instead of stdout")
        p.add_argument("--threads", type=int, help="client worker threads")

    p = sub.add_parser("run", help="run one experiment and emit per-round metrics CSV")
    add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the numerical identity checks")
    p.add_argument("--only", nargs="+", metavar="CHECK", help="run only these checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("topology", help="describe a gossip topology and its mixing contraction")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("m", type=int)
    p.add_argument("--k", type=int, default=None, help="partners per node (random)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-max", type=int, default=10)
    p.add_argument("--csv", action="store_true", help="print the contraction table as CSV")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("partition-stats", help="per-shard class histogram CSV")
    add_common(p)
    p.add_argument("--clients", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--iid", action="store_true")
    p.set_defaults(func=cmd_partition_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DfedsimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
