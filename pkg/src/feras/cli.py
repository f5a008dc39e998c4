"""Command line entry point: ``feras generate|run|sweep|certify``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, ExperimentConfig
from .federation import assign_visibility, load_visibility
from .gcn import DivergenceError
from .graph import Graph, GraphFormatError, load_graph
from .synthetic import SyntheticSpec, generate_synthetic, make_sbm
from .theory import (
    Instance,
    SizeGuardError,
    build_linearization,
    certify,
    compare_shared_vs_plain,
    embedding_stack,
    random_nonneg_params,
)
from .trainer import (
    config_dict,
    epochs_to_threshold,
    final_score,
    read_metrics,
    timed_run,
    write_metrics,
    write_summary,
)

log = logging.getLogger("feras")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_SIZE = 0, 2, 3, 4


def load_dataset(exp: ExperimentConfig) -> Graph:
    if isinstance(exp.dataset, SyntheticSpec):
        return make_sbm(exp.dataset)
    path = Path(exp.dataset)
    if not path.is_dir():
        raise ConfigError(f"dataset directory not found: {path}")
    try:
        return load_graph(path)
    except (FileNotFoundError, GraphFormatError) as exc:
        raise ConfigError(str(exc)) from exc


def _with_plan(exp: ExperimentConfig, g: Graph) -> ExperimentConfig:
    if exp.visibility is None:
        return exp
    plan = load_visibility(exp.visibility, g.num_nodes, exp.train.n_hosts)
    return exp.with_train(plan=plan, pi_private=plan.pi_private)


def run_experiment(exp: ExperimentConfig, out_dir: str | Path | None = None, g: Graph | None = None) -> dict:
    """Train one variant and write metrics.csv and summary.json."""
    out = Path(out_dir or exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = g if g is not None else load_dataset(exp)
    exp = _with_plan(exp, g)
    try:
        _, records, wall = timed_run(g, exp.train, exp.variant)
    except DivergenceError as exc:
        records = getattr(exc, "records", [])
        write_metrics(records, out / "metrics.csv")
        (out / "summary.json").write_text(json.dumps({"diverged": str(exc)}, indent=2) + "\n")
        raise
    write_metrics(records, out / "metrics.csv")
    echo = exp.to_dict()
    echo["train_resolved"] = config_dict(exp.train)
    return write_summary(records, out / "summary.json", wall, echo, {"variant": exp.variant})


# -- sweeps --------------------------------------------------------------------


def _axis_override(exp: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    t = exp.train
    if axis == "q":
        return exp.with_train(q=int(value))
    if axis == "n_hosts":
        return exp.with_train(n_hosts=int(value))
    n = t.n_hosts
    if n == 1:
        if value != 0:
            raise ConfigError("kappa > 0 needs at least two hosts")
        return exp.with_train(pi_private=0.0)
    pi = float(value) * n / (n - 1)
    if pi > 1.0 + 1e-12:
        raise ConfigError(f"kappa={value} unreachable with {n} hosts (pi would be {pi:.3f})")
    return exp.with_train(pi_private=min(pi, 1.0))


def sweep_runs(exp: ExperimentConfig, out_dir: Path) -> list[Path]:
    """Run every (value, variant, seed) combination; returns the run directories."""
    spec = exp.sweep
    g = load_dataset(exp)
    dirs = []
    for value in spec.values:
        point = _axis_override(exp, spec.axis, value)
        for variant in spec.variants:
            for seed in spec.seeds:
                run = replace(point.with_train(seed=int(seed)), variant=variant)
                d = out_dir / "runs" / f"{spec.axis}={value}" / variant / f"seed={seed}"
                log.info("sweep run %s", d)
                run_experiment(run, d, g)
                meta = {"axis": spec.axis, "value": value, "variant": variant, "seed": seed}
                (d / "point.json").write_text(json.dumps(meta) + "\n")
                dirs.append(d)
    return dirs


def _mean_ci(xs):
    xs = np.asarray([x for x in xs if x is not None], dtype=float)
    if xs.size == 0:
        return "", ""
    half = 1.96 * xs.std(ddof=1) / np.sqrt(xs.size) if xs.size > 1 else 0.0
    return repr(float(xs.mean())), repr(float(half))


def aggregate(run_dirs, out_csv: str | Path, threshold: float | None = None) -> list[dict]:
    """Mean and 95% CI of final test F1 (and epochs to threshold) per sweep point."""
    groups: dict[tuple, list] = {}
    for d in run_dirs:
        d = Path(d)
        meta = json.loads((d / "point.json").read_text())
        records = read_metrics(d / "metrics.csv")
        key = (meta["axis"], meta["value"], meta["variant"])
        ett = epochs_to_threshold(records, threshold) if threshold is not None else None
        groups.setdefault(key, []).append((final_score(records), ett))
    rows = []
    for (axis, value, variant), runs in groups.items():
        f1_mean, f1_ci = _mean_ci([r[0] for r in runs])
        ett_mean, ett_ci = _mean_ci([r[1] for r in runs])
        rows.append({
            "axis": axis, "value": value, "variant": variant, "n_runs": len(runs),
            "mean_test_f1": f1_mean, "ci95_test_f1": f1_ci,
            "mean_epochs_to_threshold": ett_mean, "ci95_epochs_to_threshold": ett_ci,
            "n_reached_threshold": sum(r[1] is not None for r in runs),
        })
    with open(out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def sweep(exp: ExperimentConfig, out_dir: str | Path | None = None) -> list[dict]:
    if exp.sweep is None:
        raise ConfigError("config has no 'sweep' section")
    out = Path(out_dir or exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dirs = sweep_runs(exp, out)
    return aggregate(dirs, out / "aggregate.csv", exp.sweep.threshold)


# -- certification -------------------------------------------------------------


def certify_experiment(exp: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Certify the contraction constraints with every host holding all training nodes."""
    out = Path(out_dir or exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = load_dataset(exp)
    exp = _with_plan(exp, g)
    t = exp.train
    plan = t.plan or assign_visibility(g, t.n_hosts, t.pi_private, t.seed, t.exact_split)
    train_nodes = g.nodes_with_role("train")
    k = train_nodes.size
    m1, (m2, m3) = g.features.shape[1], t.hidden_dims
    limit = exp.certify.max_dim
    if max(m3 * k, m1 * m2, m2 * m3) > limit:
        raise SizeGuardError(f"instance needs {max(m3 * k, m1 * m2, m2 * m3)} > {limit} dense dims")
    if g.num_classes != m3:
        raise ConfigError(f"certification needs hidden_dims[1] == num_classes ({g.num_classes})")
    inst = Instance(g, plan, tuple(train_nodes for _ in range(plan.n_hosts)))
    params = random_nonneg_params((m1, m2, m3), exp.certify.param_scale, np.random.default_rng(t.seed))
    theta = inst.theta()
    stack = embedding_stack(inst, [params] * plan.n_hosts)
    hosts = []
    for n, sg in enumerate(inst.subgraphs):
        x = inst.masked(n, sg)
        pack = build_linearization(sg, theta, x, params, stack, host=n, max_dim=limit)
        report = certify(pack, t.hyper)
        cmp = compare_shared_vs_plain(sg, theta, x, host=n)
        hosts.append({
            "host": n,
            "report": report.to_dict(),
            "comparison": {"rho_shared": cmp.rho_shared, "rho_plain": cmp.rho_plain,
                           "connected": cmp.connected},
        })
    result = {
        "instance": {"num_nodes": g.num_nodes, "train_nodes": int(k), "n_hosts": plan.n_hosts,
                     "pi_private": plan.pi_private, "kappa": plan.kappa,
                     "dims": [m1, m2, m3], "param_scale": exp.certify.param_scale,
                     "loss_kind": t.hyper.loss_kind},
        "hosts": hosts,
        "all_satisfied": all(all(h["report"]["satisfied"]) for h in hosts),
    }
    (out / "certify.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


# -- argument parsing ----------------------------------------------------------


def _load_cli_config(args) -> ExperimentConfig:
    exp = cfgmod.load(args.config)
    if args.seed is not None:
        exp = exp.with_train(seed=args.seed)
    if getattr(args, "mode", None):
        exp = exp.with_train(mode=args.mode)
    return exp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feras", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic SBM dataset")
    gen.add_argument("--config", help="config whose 'dataset' is a synthetic spec")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int)
    for name, typ in (("blocks", int), ("nodes-per-block", int), ("p-in", float), ("p-out", float),
                      ("feature-dim", int), ("noise", float)):
        gen.add_argument(f"--{name}", type=typ)

    for name, helptext in (("run", "train one configuration"), ("sweep", "sweep kappa, q or n_hosts"),
                           ("certify", "check the contraction constraints")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        if name != "certify":
            p.add_argument("--mode", choices=("sequential", "parallel"))
    return parser


def _generate(args) -> int:
    spec = SyntheticSpec()
    if args.config:
        exp = cfgmod.load(args.config)
        if not isinstance(exp.dataset, SyntheticSpec):
            raise ConfigError("config dataset is not a synthetic spec")
        spec = exp.dataset
    overrides = {k: v for k, v in {
        "blocks": args.blocks, "nodes_per_block": args.nodes_per_block, "p_in": args.p_in,
        "p_out": args.p_out, "feature_dim": args.feature_dim, "noise": args.noise, "seed": args.seed,
    }.items() if v is not None}
    spec = replace(spec, **overrides)
    path = generate_synthetic(spec, args.out)
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            return _generate(args)
        exp = _load_cli_config(args)
        if args.command == "run":
            summary = run_experiment(exp, args.out)
            print(f"final mean test F1: {summary['final_mean_test_f1']:.4f}")
        elif args.command == "sweep":
            rows = sweep(exp, args.out)
            print(f"{len(rows)} sweep points written")
        else:
            result = certify_experiment(exp, args.out)
            print(f"all constraints satisfied: {result['all_satisfied']}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SizeGuardError as exc:
        print(f"instance too large: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
