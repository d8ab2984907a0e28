"""``csembed`` command line: preprocess, train, eval, recommend, stats, rerun.

Every flag can also come from an environment variable named ``CSEMBED_``
plus the flag's destination in upper case (``--walk-order`` reads
``CSEMBED_WALK_ORDER``). Explicit flags win over the environment.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .evaluator import EvalReport, evaluate, recommend_top_n, split
from .graph import (DEFAULT_THRESHOLDS, DataError, build_graph, canonical, preprocess,
                    read_edge_list, write_edge_list)
from .model import EmbeddingTriplet, load_matrix, save_matrix, vertex_labels
from .trainer import NumericalError, StepReport, TrainConfig, train

ENV_PREFIX = "CSEMBED_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _apply_env(parser: argparse.ArgumentParser, environ) -> None:
    """Turn ``CSEMBED_<DEST>`` variables into flag defaults."""
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        raw = environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = _env_bool(raw)
            else:
                value = action.type(raw) if action.type else raw
                if action.choices is not None and value not in action.choices:
                    raise ValueError(f"expected one of {sorted(action.choices)}")
        except (TypeError, ValueError) as exc:
            parser.error(f"{ENV_PREFIX}{action.dest.upper()}: {exc}")
        action.default = value
        action.required = False


# ── parser ───────────────────────────────────────────────────────────────────

def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--edge-type", choices=["binary", *DEFAULT_THRESHOLDS], default="binary",
                   help="how to read the value column (default: binary, values kept as weights)")
    p.add_argument("--threshold", type=float, default=None,
                   help="binarization cutoff (defaults: five_star 3.5, count 3)")
    p.add_argument("--min-degree", type=int, default=0,
                   help="drop users with fewer distinct items")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--loss", choices=["rate", "rank"], default=d.loss_variant)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--alpha", type=float, default=d.learning_rate, help="initial learning rate")
    p.add_argument("--lambda", dest="lambda_ns", type=float, default=None,
                   help="neighborhood loss weight (default 0.05 rate, 0.1 rank)")
    p.add_argument("--reg", type=float, default=d.lambda_reg, help="L2 weight")
    p.add_argument("--walk-order", type=int, default=d.walk_order)
    p.add_argument("--negatives", type=int, default=d.negatives)
    p.add_argument("--samples-multiplier", type=float, default=d.samples_multiplier,
                   help="total samples as a multiple of the edge count")
    p.add_argument("--workers", type=int, default=d.workers)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--negative-distribution", choices=["degree", "uniform"],
                   default=d.negative_distribution)
    p.add_argument("--lr-schedule", choices=["linear", "constant"], default=d.lr_schedule)
    p.add_argument("--context-init", choices=["zero", "uniform"], default=d.context_init)
    p.add_argument("--quiet", action="store_true", help="no progress lines on stderr")


def build_parser(environ=None) -> argparse.ArgumentParser:
    environ = os.environ if environ is None else environ
    parser = _Parser(prog="csembed", description="Collaborative similarity embeddings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="binarize and filter a raw edge list")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="learn embeddings from an edge list")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="embedding file for phi")
    p.add_argument("--export-context", action="store_true",
                   help="also write <output>.uc and <output>.ic")
    _add_preprocess_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="split, train and score Recall@N / mAP@N")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=None, help="JSON-lines metric records")
    p.add_argument("--ratio", type=float, default=0.8, help="training fraction")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--cutoff", type=int, default=10)
    p.add_argument("--count-cold", action="store_true",
                   help="score test users absent from training as zero instead of skipping")
    _add_preprocess_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="top-N items for one user")
    p.add_argument("embeddings")
    p.add_argument("edges", help="the edge list the embeddings were trained on")
    p.add_argument("user")
    p.add_argument("-n", "--top", type=int, default=10)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("stats", help="print graph statistics")
    p.add_argument("input")
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", default=None, help="write outputs here instead")
    p.set_defaults(func=cmd_rerun)

    for action in sub.choices.values():
        _apply_env(action, environ)
    return parser


# ── helpers ──────────────────────────────────────────────────────────────────

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load(args):
    if args.threshold is not None and args.edge_type == "binary":
        raise UsageError("--threshold needs --edge-type five_star or count")
    if args.min_degree < 0:
        raise UsageError("--min-degree must be >= 0")
    try:
        table = read_edge_list(args.input)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc.strerror or exc}") from None
    table = preprocess(table, args.edge_type, args.threshold, args.min_degree)
    if len(table) == 0:
        raise DataError("no interactions left after preprocessing")
    return canonical(table)


def _config(args) -> TrainConfig:
    cfg = TrainConfig(dim=args.dim, learning_rate=args.alpha, lambda_ns=args.lambda_ns,
                      lambda_reg=args.reg, walk_order=args.walk_order,
                      negatives=args.negatives, samples_multiplier=args.samples_multiplier,
                      loss_variant=args.loss, workers=args.workers, seed=args.seed,
                      negative_distribution=args.negative_distribution,
                      lr_schedule=args.lr_schedule, context_init=args.context_init)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _progress(args):
    if getattr(args, "quiet", False):
        return None

    def emit(report: StepReport) -> None:
        print(report.format(), file=sys.stderr, flush=True)
    return emit


def derive_seed(seed: int, repeat: int) -> int:
    """Independent per-repeat seed; repeat 0 keeps the user's seed."""
    if repeat == 0:
        return seed
    return int(np.random.SeedSequence(seed, spawn_key=(repeat,)).generate_state(1)[0])


def write_manifest(output, args, config: dict | None, timings: dict, extra=None) -> Path:
    record = {k: v for k, v in vars(args).items() if k != "func"}
    inputs = {}
    for key in ("input", "embeddings", "edges"):
        if record.get(key):
            record[key] = os.path.abspath(record[key])
            inputs[key] = {"path": record[key], "sha256": _sha256(record[key])}
    record["output"] = os.path.abspath(output)
    body = {"command": args.command, "args": record, "config": config, "inputs": inputs,
            "seed": record.get("seed"), "version": __version__}
    run_id = hashlib.sha1(json.dumps(body, sort_keys=True).encode()).hexdigest()[:12]
    body.update(run_id=run_id, output=os.path.abspath(output), timings=timings,
                created=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    if extra:
        body.update(extra)
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ── commands ─────────────────────────────────────────────────────────────────

def cmd_preprocess(args) -> int:
    t0 = time.perf_counter()
    table = _load(args)
    write_edge_list(table, args.output)
    stats = build_graph(table).stats()
    print(f"wrote {len(table)} edges to {args.output}")
    for k, v in stats.items():
        print(f"{k}\t{v:.6g}" if k == "density" else f"{k}\t{v}")
    write_manifest(args.output, args, None, {"total": time.perf_counter() - t0},
                   {"stats": stats})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    t0 = time.perf_counter()
    graph = build_graph(_load(args))
    t1 = time.perf_counter()
    triplet = train(graph, cfg, progress=_progress(args))
    t2 = time.perf_counter()
    labels = vertex_labels(graph.user_keys, graph.item_keys)
    save_matrix(args.output, triplet.phi, labels)
    if args.export_context:
        save_matrix(f"{args.output}.uc", triplet.phi_uc, labels)
        save_matrix(f"{args.output}.ic", triplet.phi_ic, labels)
    t3 = time.perf_counter()
    write_manifest(args.output, args, cfg.resolved(graph.edge_count),
                   {"load": t1 - t0, "train": t2 - t1, "write": t3 - t2},
                   {"stats": graph.stats()})
    return EXIT_OK


def run_eval(table, cfg: TrainConfig, ratio: float, repeats: int, cutoff: int,
             count_cold: bool = False, progress=None) -> list[EvalReport]:
    reports = []
    for r in range(repeats):
        seed = derive_seed(cfg.seed, r)
        pair = split(table, ratio, seed)
        graph = build_graph(pair.train)
        run_cfg = TrainConfig(**{**vars(cfg), "seed": seed})
        triplet = train(graph, run_cfg, progress=progress)
        reports.append(evaluate(triplet, graph, pair.test, cutoff, count_cold, seed))
    return reports


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not 0 < args.ratio < 1:
        raise UsageError("--ratio must be in (0, 1)")
    if args.repeats < 1 or args.cutoff < 1:
        raise UsageError("--repeats and --cutoff must be >= 1")
    t0 = time.perf_counter()
    table = _load(args)
    reports = run_eval(table, cfg, args.ratio, args.repeats, args.cutoff,
                       args.count_cold, _progress(args))
    for rep in reports:
        print(f"# split seed {rep.seed}")
        print("\n".join(rep.lines()))
    recall = float(np.mean([r.recall for r in reports]))
    mean_ap = float(np.mean([r.map for r in reports]))
    print(f"mean Recall@{args.cutoff}\t{recall:.6f}")
    print(f"mean mAP@{args.cutoff}\t{mean_ap:.6f}")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            for rep in reports:
                f.write(rep.jsonl() + "\n")
        write_manifest(args.output, args, cfg.resolved(len(table)),
                       {"total": time.perf_counter() - t0},
                       {"recall": recall, "map": mean_ap})
    return EXIT_OK


def load_embeddings(path, graph) -> EmbeddingTriplet:
    """Read an exported ``phi`` and reorder its rows to ``graph``'s ids."""
    try:
        labels, matrix = load_matrix(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    row = {label: r for r, label in enumerate(labels)}
    wanted = vertex_labels(graph.user_keys, graph.item_keys)
    missing = [w for w in wanted if w not in row]
    if missing:
        raise DataError(f"{len(missing)} graph vertices have no embedding, e.g. {missing[0]}")
    phi = matrix[[row[w] for w in wanted]]
    return EmbeddingTriplet(phi, phi, phi)


def cmd_recommend(args) -> int:
    if args.top < 1:
        raise UsageError("-n must be >= 1")
    args.input = args.edges
    graph = build_graph(_load(args))
    user = graph.user_index.get(args.user)
    if user is None:
        raise DataError(f"unknown user {args.user!r}")
    triplet = load_embeddings(args.embeddings, graph)
    items = recommend_top_n(user, triplet, graph, args.top)
    scores = triplet.phi[items] @ triplet.phi[user]
    for v, s in zip(items.tolist(), scores.tolist()):
        print(f"{graph.key_of(v)}\t{s:.6f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    sys.stdout.write(build_graph(_load(args)).format_stats())
    return EXIT_OK


def cmd_rerun(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        recorded = manifest["args"]
        command = manifest["command"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"bad manifest {args.manifest}: {exc}") from None
    if command == "rerun":
        raise DataError("manifest describes a rerun")
    parser = build_parser(environ={})
    defaults = parser.parse_args([command, "_", "-o", "_"] if command != "recommend"
                                 else [command, "_", "_", "_"])
    ns = argparse.Namespace(**{**vars(defaults), **recorded})
    if args.output:
        ns.output = args.output
    return ns.func(ns)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"csembed: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"csembed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"csembed: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
