"""Command-line interface.

Every command resolves its options (flags over ``--config`` over defaults),
writes the resolved options to ``resolved_config.json`` beside its outputs,
and can be replayed from that file. Exit codes: 0 success, 1 failed
validation, 2 usage or input error, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from graphshap import io, subsets, validation
from graphshap.evaluation import aggregate_group, corruption_study, coverage_prefix, normalize
from graphshap.explain import ExplainRequest, RequestError, explain
from graphshap.game import GameError
from graphshap.graph import (
    BinaryAdjacency,
    FeatureGraph,
    GraphError,
    average_graphs,
    binarize,
    correlation_graph,
    detect_communities,
    distance_graph,
    modularity,
)
from graphshap.oracles import (
    ConstantOracle,
    LinearSoftmaxOracle,
    OracleError,
    OrGateOracle,
    SubprocessOracle,
)
from graphshap.value import BackgroundDataset, GameConfig

logger = logging.getLogger("graphshap")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationFailed(Exception):
    pass


DEFAULTS = {
    "explain": {
        "method": "full",
        "oracle": None,
        "weights": None,
        "timeout_ms": 30000,
        "background": None,
        "target": None,
        "target_row": None,
        "adjacency": None,
        "graph": None,
        "threshold": "mean",
        "partition": None,
        "features": None,
        "mc_samples": 1000,
        "exact_cutoff": 12,
        "marginal_samples": "all",
        "log_base": 2.0,
        "prob_floor": 1e-12,
        "batch_size": 256,
        "fused_mc": False,
        "group_sizes": None,
        "seed": 0,
    },
    "graph": {"dataset": None, "graph": None, "centroids": None, "threshold": "mean"},
    "communities": {"dataset": None, "graph": None, "centroids": None, "threshold": "mean", "binary": False},
    "corrupt": {
        "oracle": None,
        "weights": None,
        "timeout_ms": 30000,
        "background": None,
        "target": None,
        "targets": None,
        "attribution": None,
        "coverage": [0.5],
        "target_class": None,
        "labels": None,
        "marginal_samples": "all",
        "seed": 0,
    },
    "validate": {"property": None, "n": 12, "seed": 0},
}

PATH_KEYS = {
    "weights", "background", "adjacency", "graph", "partition", "group_sizes",
    "dataset", "centroids", "targets", "attribution", "labels",
}


# -- option resolution --------------------------------------------------------


def _abspath(v):
    if v is None or str(v).startswith("builtin:"):
        return v
    return str(Path(v).resolve())


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        if loaded.pop("command", command) != command:
            raise UsageError(f"config {args.config} is for a different command")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            cfg[key] = v
    for key in PATH_KEYS & set(cfg):
        if isinstance(cfg[key], list):
            cfg[key] = [_abspath(v) for v in cfg[key]]
        else:
            cfg[key] = _abspath(cfg[key])
    return cfg


def write_resolved(out: Path, command: str, cfg: dict) -> None:
    with open(out / "resolved_config.json", "w") as fh:
        json.dump({"command": command, **cfg}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_run_log(out: Path, **fields) -> None:
    with open(out / "run.log", "w") as fh:
        for k, v in fields.items():
            fh.write(f"{k}={v}\n")


def _parse_threshold(v):
    if v is None or v == "mean":
        return None
    try:
        return float(v)
    except ValueError:
        raise UsageError(f"--threshold must be 'mean' or a real number, got {v!r}") from None


def _parse_ints(text, what):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated integers, got {text!r}") from None


def _parse_reals(text, what):
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated reals, got {text!r}") from None


def _marginal_samples(v):
    if v in (None, "all"):
        return None
    try:
        k = int(v)
    except ValueError:
        raise UsageError(f"--marginal-samples must be 'all' or a positive integer, got {v!r}") from None
    if k < 1:
        raise UsageError("--marginal-samples must be positive")
    return k


# -- builtin demo data --------------------------------------------------------

OR_DOMAIN = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]


def planted_correlation_data(rows: int = 10000, rho: float = 0.8, seed: int = 0) -> np.ndarray:
    """Five standard-normal columns; columns 0 and 1 correlated at ``rho``."""
    cov = np.eye(5)
    cov[0, 1] = cov[1, 0] = rho
    return np.random.default_rng(seed).multivariate_normal(np.zeros(5), cov, size=rows)


def load_background(spec) -> BackgroundDataset:
    if spec is None:
        raise UsageError("a background dataset is required (--background or --dataset)")
    if spec == "builtin:or-domain":
        return BackgroundDataset(OR_DOMAIN, ("x0", "x1"))
    if spec == "builtin:planted-correlation":
        return BackgroundDataset(planted_correlation_data(), tuple(f"x{i}" for i in range(5)))
    if str(spec).startswith("builtin:"):
        raise UsageError(f"unknown builtin dataset {spec!r}")
    return BackgroundDataset.from_csv(spec)


def load_oracle(spec, n_features: int, weights=None, timeout_ms: int = 30000):
    if spec is None:
        raise UsageError("--oracle is required")
    if spec == "builtin:or":
        return OrGateOracle(n_features)
    if spec == "builtin:constant":
        return ConstantOracle(n_features, [0.5, 0.5])
    if spec == "builtin:linear":
        if weights is None:
            raise UsageError("builtin:linear needs --weights (classes x (features + 1), last column bias)")
        w = _read_rows(weights)
        if w.shape[1] != n_features + 1:
            raise UsageError(f"--weights must have {n_features + 1} columns, found {w.shape[1]}")
        return LinearSoftmaxOracle(w[:, :-1], w[:, -1])
    if str(spec).startswith("exec:"):
        cmd = shlex.split(spec[len("exec:"):])
        if not cmd:
            raise UsageError("exec: oracle needs a command")
        return SubprocessOracle(cmd, timeout_ms, n_features=n_features)
    raise UsageError(f"unknown oracle {spec!r}; use builtin:<or|constant|linear> or exec:<command>")


def _read_rows(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    out = []
    for i, row in enumerate(rows, start=1):
        vals = []
        for j, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise io.CSVFormatError(f"{path}: row {i}, column {j}: not a number: {cell!r}") from None
        out.append(vals)
    if not out or len({len(r) for r in out}) != 1:
        raise io.CSVFormatError(f"{path}: rows must be non-empty and of equal length")
    return np.array(out)


def load_graph(cfg: dict) -> FeatureGraph:
    sources = [k for k in ("dataset", "graph", "centroids") if cfg.get(k)]
    if len(sources) != 1:
        raise UsageError("give exactly one of --dataset, --graph, --centroids")
    src = sources[0]
    if src == "dataset":
        return correlation_graph(load_background(cfg["dataset"]).instances)
    if src == "centroids":
        return distance_graph(_read_rows(cfg["centroids"]))
    specs = cfg["graph"] if isinstance(cfg["graph"], list) else [cfg["graph"]]
    graphs = []
    for spec in specs:
        if spec == "builtin:two-cliques":
            graphs.append(validation.two_cliques())
        elif str(spec).startswith("builtin:"):
            raise UsageError(f"unknown builtin graph {spec!r}")
        else:
            graphs.append(FeatureGraph(io.read_matrix(spec)))
    return graphs[0] if len(graphs) == 1 else average_graphs(graphs)


def _target(cfg: dict, bg: BackgroundDataset) -> np.ndarray:
    if cfg["target"] is not None and cfg["target_row"] is not None:
        raise UsageError("give --target or --target-row, not both")
    if cfg["target"] is not None:
        return np.array(_parse_reals(cfg["target"], "--target"))
    if cfg["target_row"] is not None:
        k = int(cfg["target_row"])
        if not 0 <= k < len(bg):
            raise UsageError(f"--target-row {k} out of range 0..{len(bg) - 1}")
        return bg.instances[k]
    raise UsageError("--target or --target-row is required")


# -- commands -----------------------------------------------------------------


def cmd_explain(cfg: dict, out: Path, threads: int) -> int:
    method = cfg["method"]
    if method not in ("full", "csve", "hsve", "single"):
        raise UsageError(f"unknown method {method!r}")
    if method == "csve" and not (cfg["adjacency"] or cfg["graph"]):
        raise UsageError("--method csve requires --adjacency (or --graph to binarize)")
    if method == "hsve" and not (cfg["partition"] or cfg["graph"]):
        raise UsageError("--method hsve requires --partition (or --graph to cluster)")
    bg = load_background(cfg["background"])
    target = _target(cfg, bg)
    gcfg = GameConfig(
        target,
        bg,
        marginal_samples=_marginal_samples(cfg["marginal_samples"]),
        log_base=float(cfg["log_base"]),
        prob_floor=float(cfg["prob_floor"]),
        seed=int(cfg["seed"]),
    )
    n = gcfg.n_features
    adjacency = partition = None
    if method == "csve":
        if cfg["adjacency"]:
            adjacency = BinaryAdjacency(io.read_matrix(cfg["adjacency"]) != 0)
        else:
            adjacency = binarize(load_graph({"graph": cfg["graph"]}), _parse_threshold(cfg["threshold"]))
    if method == "hsve":
        if cfg["partition"]:
            partition = io.read_partition(cfg["partition"])
        else:
            partition = detect_communities(load_graph({"graph": cfg["graph"]}))
    features = None
    if cfg["features"] is not None:
        features = subsets.to_mask(_parse_ints(cfg["features"], "--features"))
    try:
        req = ExplainRequest(
            method,
            adjacency=adjacency,
            partition=partition,
            mc_samples=int(cfg["mc_samples"]),
            exact_cutoff=int(cfg["exact_cutoff"]),
            seed=int(cfg["seed"]),
            features=features,
            fused_mc=bool(cfg["fused_mc"]),
        )
    except RequestError as exc:
        raise UsageError(str(exc)) from None

    oracle = load_oracle(cfg["oracle"], n, cfg["weights"], int(cfg["timeout_ms"]))
    started = time.perf_counter()
    try:
        attr = explain(oracle, gcfg, req, batch_size=int(cfg["batch_size"]), threads=threads)
    finally:
        oracle.close()
    wall = time.perf_counter() - started

    sizes = np.ones(n) if cfg["group_sizes"] is None else io.read_vector(cfg["group_sizes"])
    normalized = normalize(attr, sizes)
    io.write_attribution(out / "attribution.csv", attr)
    io.write_plot_data(out / "normalized.csv", attr, normalized)
    if adjacency is not None:
        io.write_matrix(out / "adjacency.csv", adjacency.bits.astype(int), integer=True)
    if partition is not None:
        io.write_partition(out / "partition.csv", partition)
    write_resolved(out, "explain", cfg)
    write_run_log(
        out,
        command="explain",
        method=attr.method.value,
        value_calls=attr.value_calls,
        mc_samples=attr.mc_samples,
        seed=cfg["seed"],
        threads=threads,
        wall_time_s=f"{wall:.6f}",
    )
    print(f"phi={[float(v) for v in attr.phi]} value_calls={attr.value_calls}")
    return EXIT_OK


def cmd_graph(cfg: dict, out: Path, threads: int) -> int:
    g = load_graph(cfg)
    adj = binarize(g, _parse_threshold(cfg["threshold"]))
    io.write_matrix(out / "weights.csv", g.weights)
    io.write_matrix(out / "adjacency.csv", adj.bits.astype(int), integer=True)
    summary = {"n": g.n, "threshold_used": adj.threshold_used, "n_edges": int(adj.bits.sum() // 2)}
    _write_json(out / "graph.json", summary)
    write_resolved(out, "graph", cfg)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_communities(cfg: dict, out: Path, threads: int) -> int:
    g = load_graph(cfg)
    target = binarize(g, _parse_threshold(cfg["threshold"])) if cfg["binary"] else g
    part = detect_communities(target)
    q = modularity(target, part)
    io.write_matrix(out / "weights.csv", g.weights)
    io.write_partition(out / "partition.csv", part)
    summary = {
        "n": part.n,
        "n_communities": len(part.communities),
        "modularity": q,
        "communities": part.communities,
        "q_trace": list(part.q_trace),
    }
    _write_json(out / "communities.json", summary)
    write_resolved(out, "communities", cfg)
    print(json.dumps({"n_communities": summary["n_communities"], "modularity": q}))
    return EXIT_OK


def cmd_corrupt(cfg: dict, out: Path, threads: int) -> int:
    if not cfg["attribution"]:
        raise UsageError("--attribution is required")
    bg = load_background(cfg["background"])
    attr_paths = cfg["attribution"] if isinstance(cfg["attribution"], list) else [cfg["attribution"]]
    if cfg["targets"]:
        targets = BackgroundDataset.from_csv(cfg["targets"]).instances
    elif cfg["target"] is not None:
        targets = np.array([_parse_reals(cfg["target"], "--target")])
    else:
        raise UsageError("--target or --targets is required")
    if len(attr_paths) != len(targets):
        raise UsageError(f"{len(attr_paths)} attribution files for {len(targets)} target instances")
    attrs = [io.read_attribution(p) for p in attr_paths]
    labels = None
    if cfg["labels"]:
        labels = [int(v) for v in io.read_vector(cfg["labels"])]
    coverages = sorted(float(c) for c in cfg["coverage"])
    n = bg.width
    oracle = load_oracle(cfg["oracle"], n, cfg["weights"], int(cfg["timeout_ms"]))
    cfgs = [
        GameConfig(t, bg, marginal_samples=_marginal_samples(cfg["marginal_samples"]), seed=int(cfg["seed"]))
        for t in targets
    ]
    try:
        if cfg["target_class"] is not None:
            classes = [int(cfg["target_class"])] * len(cfgs)
        else:
            classes = [int(np.argmax(oracle.predict(c.target))) for c in cfgs]
        studies = {c: corruption_study(oracle, cfgs, attrs, c, classes, labels) for c in coverages}
    finally:
        oracle.close()

    nested = all(
        set(coverage_prefix(a.phi, lo)) <= set(coverage_prefix(a.phi, hi))
        for a in attrs
        for lo, hi in zip(coverages, coverages[1:])
    )
    with open(out / "corruption.csv", "w") as fh:
        fh.write("instance,coverage,target_class,corrupted_features,prob_before,prob_after,delta_prob\n")
        for c, study in studies.items():
            for i, r in enumerate(study.reports):
                feats = " ".join(str(f) for f in r.corrupted_features)
                fh.write(
                    f"{i},{io.fmt(c)},{r.target_class},{feats},{io.fmt(r.prob_before)},"
                    f"{io.fmt(r.prob_after)},{io.fmt(r.delta_prob)}\n"
                )
    summary = {
        "instances": len(cfgs),
        "nested_prefixes": nested,
        "by_coverage": {
            io.fmt(c): {
                "mean_delta_prob": s.mean_delta_prob,
                "std_delta_prob": s.std_delta_prob,
                "delta_acc": s.delta_acc,
            }
            for c, s in studies.items()
        },
    }
    if len(attrs) > 1 and len({a.method for a in attrs}) == 1:
        group = aggregate_group(attrs)
        io.write_attribution(out / "group_attribution.csv", group)
    _write_json(out / "corruption_summary.json", summary)
    write_resolved(out, "corrupt", cfg)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_validate(cfg: dict, out, threads: int) -> int:
    names = cfg["property"]
    if names:
        bad = [p for p in names if p not in validation.PROPERTIES]
        if bad:
            raise UsageError(f"unknown properties {bad}; choose from {sorted(validation.PROPERTIES)}")
    results = validation.run(names, n=int(cfg["n"]), seed=int(cfg["seed"]))
    for r in results:
        print(r.line())
    if out is not None:
        with open(out / "validation.csv", "w") as fh:
            fh.write("property,passed,residual,detail\n")
            for r in results:
                fh.write(f"{r.name},{int(r.passed)},{io.fmt(r.residual)},\"{r.detail}\"\n")
        write_resolved(out, "validate", cfg)
    if not all(r.passed for r in results):
        raise ValidationFailed(f"{sum(not r.passed for r in results)} properties failed")
    return EXIT_OK


COMMANDS = {
    "explain": cmd_explain,
    "graph": cmd_graph,
    "communities": cmd_communities,
    "corrupt": cmd_corrupt,
    "validate": cmd_validate,
}


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphshap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON file of options; flags override it")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")

    def oracle_opts(p):
        p.add_argument("--oracle", help="builtin:<or|constant|linear> or exec:<command>")
        p.add_argument("--weights", help="CSV of linear weights, one row per class, bias last")
        p.add_argument("--timeout-ms", type=int)
        p.add_argument("--background", help="CSV with header, or builtin:or-domain")
        p.add_argument("--dataset", dest="background", help="alias of --background")
        p.add_argument("--marginal-samples", help="'all' or a count of background draws")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("explain", help="compute an attribution")
    common(p)
    oracle_opts(p)
    p.add_argument("--method", choices=["full", "csve", "hsve", "single"])
    p.add_argument("--target", help="comma-separated feature values")
    p.add_argument("--target-row", type=int, help="use this background row as the target")
    p.add_argument("--adjacency", help="CSV 0/1 matrix (csve)")
    p.add_argument("--graph", help="CSV weight matrix, binarized (csve) or clustered (hsve)")
    p.add_argument("--threshold", help="'mean' or a real number")
    p.add_argument("--partition", help="CSV node_id,community_id (hsve)")
    p.add_argument("--features", help="comma-separated feature indices to explain")
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--exact-cutoff", type=int)
    p.add_argument("--log-base", type=float)
    p.add_argument("--prob-floor", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--fused-mc", action="store_true", help="one background draw per MC permutation")
    p.add_argument("--group-sizes", help="CSV of per-feature group sizes for normalization")

    for name in ("graph", "communities"):
        p = sub.add_parser(name, help="build a feature graph" if name == "graph" else "detect communities")
        common(p)
        p.add_argument("--dataset", help="CSV with header (Pearson graph), or builtin:planted-correlation")
        p.add_argument("--graph", nargs="+", help="CSV weight matrices (averaged), or builtin:two-cliques")
        p.add_argument("--centroids", help="CSV of coordinates, one row per feature (distance graph)")
        p.add_argument("--threshold", help="'mean' or a real number")
        if name == "communities":
            p.add_argument("--binary", action="store_true", help="cluster the binarized graph")

    p = sub.add_parser("corrupt", help="corruption evaluation of attributions")
    common(p)
    oracle_opts(p)
    p.add_argument("--target", help="comma-separated feature values")
    p.add_argument("--targets", help="CSV of target instances with header")
    p.add_argument("--attribution", nargs="+", help="attribution CSV per target instance")
    p.add_argument("--coverage", type=float, action="append")
    p.add_argument("--target-class", type=int)
    p.add_argument("--labels", help="CSV of true labels, one per target")

    p = sub.add_parser("validate", help="run the self-validation properties")
    common(p, out_required=False)
    p.add_argument("--property", action="append", help=f"one of {', '.join(validation.PROPERTIES)}")
    p.add_argument("--n", type=int, help="largest game size for appendix-identity")
    p.add_argument("--seed", type=int)
    return parser


def _join_negative_values(argv):
    """Let ``--threshold -inf`` through argparse's option detection."""
    out = []
    it = iter(argv)
    for a in it:
        if a == "--threshold":
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    argv = _join_negative_values(sys.argv[1:] if argv is None else list(argv))
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = args.threads or os.cpu_count() or 1
    try:
        cfg = resolve(args.command, args)
        out = io.ensure_dir(args.out) if args.out else None
        return COMMANDS[args.command](cfg, out, threads)
    except UsageError as exc:
        return _fail("UsageError", exc, EXIT_USAGE)
    except ValidationFailed as exc:
        return _fail("ValidationFailed", exc, EXIT_FAILED)
    except OracleError as exc:
        return _fail(type(exc).__name__, exc, EXIT_ORACLE)
    except (GraphError, GameError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_USAGE)


def _fail(kind: str, exc: Exception, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
