"""Command-line entry point: convert, train, eval, grid, predict, serve, gen-corpus.

Exit codes: 0 success, 2 usage or input error, 3 training or model error.
Results go to stdout; logs and the effective seed go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

from . import __version__
from .errors import (BindError, BundleLoadError, CorruptBundle, EmptyFile, MalformedRequest,
                     MissingColumn, SchemaViolation, UnmappedLabel, UnsupportedVersion, WafError)

log = logging.getLogger("dualwaf")

EXIT_OK, EXIT_INPUT, EXIT_MODEL = 0, 2, 3
INPUT_ERRORS = (MalformedRequest, SchemaViolation, MissingColumn, UnmappedLabel, EmptyFile,
                CorruptBundle, UnsupportedVersion, BindError, OSError, ValueError)

# flags that never belong in a dumped config
_META = {"config", "dump_config", "command", "func"}


class UsageError(Exception):
    pass


def _ngram(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN,MAX, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid n-gram range {text!r}")
    return lo, hi


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualwaf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=42, help="master seed for every random stream")
    p.add_argument("--config", help="JSON file of flag values; explicit flags win")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective configuration as JSON and exit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    c = sub.add_parser("convert", help="load manifest sources, clean, merge, write JSONL")
    c.add_argument("--manifest")
    c.add_argument("--out")
    c.set_defaults(func=cmd_convert)

    t = sub.add_parser("train", help="train both layers and write a model bundle")
    t.add_argument("--data", help="labeled JSONL used for both layers unless overridden")
    t.add_argument("--l1-data")
    t.add_argument("--l2-data")
    t.add_argument("--split", type=_fraction, default=0.8)
    t.add_argument("--kfold", type=int, default=None, help="also report K-fold CV for layer 1")
    t.add_argument("--max-depth", type=int, default=12)
    t.add_argument("--min-samples-split", type=int, default=2)
    t.add_argument("--min-samples-leaf", type=int, default=1)
    t.add_argument("--ngram", type=_ngram, default=(1, 4))
    t.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    t.add_argument("--gamma", type=float, default=None)
    t.add_argument("--c", type=float, default=10.0)
    t.add_argument("--max-features", type=int, default=50_000)
    t.add_argument("--max-iterations", type=int, default=200_000)
    t.add_argument("--no-balance", action="store_true", help="skip layer-1 class balancing")
    t.add_argument("--created-at", default=None, help="bundle timestamp (default: SOURCE_DATE_EPOCH or epoch)")
    t.add_argument("--out")
    t.add_argument("--report", choices=["json", "table"], default="json")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a bundle: layer-1 only vs dual layer")
    e.add_argument("--bundle")
    e.add_argument("--data")
    e.add_argument("--report", choices=["json", "table", "csv"], default="table")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("grid", help="layer-2 grid search over n-gram ranges and kernels")
    g.add_argument("--data")
    g.add_argument("--ngrams", type=_ngram, nargs="+", default=[(1, 1), (1, 2), (1, 4)])
    g.add_argument("--kernels", nargs="+", choices=["linear", "rbf"], default=["linear", "rbf"])
    g.add_argument("--c", type=float, default=10.0)
    g.add_argument("--split", type=_fraction, default=0.8)
    g.add_argument("--cv", type=int, default=None, help="score each cell by K-fold CV instead")
    g.add_argument("--n-jobs", type=int, default=1)
    g.add_argument("--report", choices=["json", "table"], default="table")
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("predict", help="verdict for one raw HTTP request (stdin or --file)")
    r.add_argument("--bundle")
    r.add_argument("--file")
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("serve", help="run the inspecting reverse proxy")
    s.add_argument("--bundle")
    s.add_argument("--upstream", help="http://host:port of the protected application")
    s.add_argument("--listen", type=int, default=8080)
    s.add_argument("--host", default="0.0.0.0")
    s.add_argument("--fail-mode", choices=["closed", "open"], default="closed")
    s.add_argument("--block-status", type=int, default=403)
    s.add_argument("--max-body-bytes", type=int, default=1 << 20)
    s.add_argument("--audit-log", default=None)
    s.set_defaults(func=cmd_serve)

    gc = sub.add_parser("gen-corpus", help="write the seeded synthetic five-class corpus")
    gc.add_argument("--out")
    gc.add_argument("--size", type=int, default=2000)
    gc.set_defaults(func=cmd_gen_corpus)
    return p


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_records(path):
    from .datasets import from_jsonl
    records = from_jsonl(path)
    if not records:
        raise EmptyFile(f"{path}: no records")
    return records


# --- subcommands -----------------------------------------------------------------------

def cmd_convert(args) -> int:
    from .datasets import clean, load_manifest, load_manifest_sources, merge, to_jsonl
    from .rng import derive_seed
    _require(args, "manifest", "out")
    manifest = load_manifest(args.manifest)
    lists = load_manifest_sources(manifest)
    merged = merge(lists, derive_seed(args.seed, "merge"))
    records, report = clean(merged)
    n = to_jsonl(records, args.out)
    print(json.dumps({"clean": report.to_dict(), "written": n,
                      "sources": {e.name: len(l) for e, l in zip(manifest.sources, lists)}},
                     sort_keys=True), file=sys.stderr)
    _emit({"out": args.out, "records": n})
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import save_bundle
    from .training import LayerError, TrainConfig, train
    l1_path = args.l1_data or args.data
    l2_path = args.l2_data or args.data
    if not l1_path or not l2_path:
        raise UsageError("give --data, or both --l1-data and --l2-data")
    _require(args, "out")
    l1_records = _load_records(l1_path)
    l2_records = l1_records if l2_path == l1_path else _load_records(l2_path)
    try:
        cfg = TrainConfig(seed=args.seed, split=args.split, kfold=args.kfold,
                          balance=not args.no_balance, max_depth=args.max_depth,
                          min_samples_split=args.min_samples_split,
                          min_samples_leaf=args.min_samples_leaf, ngram=tuple(args.ngram),
                          kernel=args.kernel, gamma=args.gamma, C=args.c,
                          max_iterations=args.max_iterations, max_features=args.max_features,
                          created_at=args.created_at)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        result = train(l1_records, l2_records, cfg)
    except LayerError as exc:
        print(f"error: training failed in {exc}", file=sys.stderr)
        return EXIT_MODEL
    save_bundle(result.bundle, args.out)
    if not result.bundle.l2.converged:
        log.warning("layer-2 SMO hit max_iterations for at least one class")
    if args.report == "json":
        _emit(result.to_dict())
    else:
        from .evaluation import format_comparison, format_per_class
        out = [f"bundle {args.out} fingerprint {result.bundle.fingerprint}",
               format_comparison({"L1 holdout": result.l1_holdout}),
               format_per_class(result.l2_holdout.per_class)]
        if result.l1_kfold is not None:
            out.append(f"L1 {len(result.l1_kfold.reports)}-fold accuracy "
                       f"{result.l1_kfold.mean_accuracy:.4f} +/- {result.l1_kfold.std_accuracy:.4f}")
        sys.stdout.write("\n\n".join(out) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import load_bundle
    from .training import evaluate_bundle
    _require(args, "bundle", "data")
    bundle = load_bundle(args.bundle)
    records = _load_records(args.data)
    report = evaluate_bundle(bundle, records)
    if args.report == "json":
        _emit(report.to_dict())
    elif args.report == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall"])
        for name, r in (("l1_only", report.l1_only), ("combined", report.combined)):
            c = r.confusion
            w.writerow([name, c.tp, c.fp, c.tn, c.fn, r.accuracy, r.precision, r.recall])
        for cls, m in (report.combined.per_class or {}).items():
            w.writerow([f"class:{cls}", "", "", "", "", "", m.precision, m.recall])
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(report.table() + "\n")
    return EXIT_OK


def cmd_grid(args) -> int:
    from .datasets import clean, split
    from .evaluation import cv_grid_search, grid_search
    from .rng import derive_seed
    _require(args, "data")
    records = [r for r in _load_records(args.data) if r.attack_class is not None]
    records, _ = clean(records)
    pairs = [(r.text(), r.attack_class) for r in records]
    grid = [(tuple(n), k) for n in args.ngrams for k in args.kernels]
    smo_seed = derive_seed(args.seed, "smo")
    try:
        if args.cv:
            result = cv_grid_search(pairs, args.cv, grid, args.c, smo_seed, n_jobs=args.n_jobs)
        else:
            train, val = split(pairs, args.split, derive_seed(args.seed, "split"))
            result = grid_search(train, val, grid, args.c, smo_seed, n_jobs=args.n_jobs)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    if args.report == "json":
        _emit(result.to_dict())
    else:
        sys.stdout.write(result.table() + "\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .http_model import parse_raw_request
    from .pipeline import classify, load_bundle
    _require(args, "bundle")
    bundle = load_bundle(args.bundle)
    if args.file:
        with open(args.file, "rb") as fh:
            raw = fh.read()
    else:
        raw = sys.stdin.buffer.read()
    req = parse_raw_request(raw)
    _emit(classify(bundle, req).to_dict())
    return EXIT_OK


def cmd_serve(args) -> int:
    from .proxy import ProxyConfig, serve
    _require(args, "bundle", "upstream")
    try:
        cfg = ProxyConfig(upstream_url=args.upstream, bundle_path=args.bundle,
                          listen_port=args.listen, listen_host=args.host,
                          block_status=args.block_status, fail_mode=args.fail_mode,
                          max_body_bytes=args.max_body_bytes, audit_log_path=args.audit_log)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        serve(cfg)
    except BundleLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    from collections import Counter

    from .corpus import generate_corpus, self_test
    from .datasets import to_jsonl
    _require(args, "out")
    records = generate_corpus(args.size, args.seed)
    failures = self_test(records)
    if failures:
        print(f"error: rule check missed {len(failures)} attack records", file=sys.stderr)
        return EXIT_MODEL
    n = to_jsonl(records, args.out)
    counts = Counter(r.attack_class for r in records)
    print(json.dumps({"classes": dict(sorted(counts.items())), "self_test": "pass"}, sort_keys=True),
          file=sys.stderr)
    _emit({"out": args.out, "records": n})
    return EXIT_OK


# --- config handling ---------------------------------------------------------------------

def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _dests(parser: argparse.ArgumentParser) -> set[str]:
    return {a.dest for a in parser._actions
            if a.dest not in (argparse.SUPPRESS, "help", "version")}


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a subcommand is required")
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --config: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("--config must hold a JSON object")
        cfg.pop("command", None)
        sub = _subparser(parser, args.command)
        known = (_dests(parser) | _dests(sub)) - _META
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {unknown}")
        parser.set_defaults(**{k: v for k, v in cfg.items() if k in _dests(parser)})
        sub.set_defaults(**{k: v for k, v in cfg.items() if k in _dests(sub)})
        args = parser.parse_args(argv)
        _coerce(args)
    return args


def _coerce(args) -> None:
    # JSON gives lists where argparse types give tuples
    if isinstance(getattr(args, "ngram", None), list):
        args.ngram = tuple(args.ngram) if not isinstance(args.ngram[0], str) else _ngram(args.ngram[0])
    if getattr(args, "ngrams", None):
        args.ngrams = [tuple(n) if not isinstance(n, str) else _ngram(n) for n in args.ngrams]


def effective_config(args) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in _META}
    out["command"] = args.command
    return json.loads(json.dumps(out))


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.dump_config:
        _emit(effective_config(args))
        return EXIT_OK
    print(f"seed={args.seed}", file=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WafError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
