"""Command-line entry points.

Exit status: 0 on success, 1 on domain errors (bad corpus, corrupt DB,
degenerate data), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date, datetime, timezone
from pathlib import Path

from . import analysis, evaluation, plotting, store, synthetic, tuning
from .ncd import ByteDocument, CompressorKind, Kind, Label, ncd_matrix
from .prototypes import Threshold, classify, extract_prototypes
from .sanitizer import SanitizeError, ingest_corpus, sanitize_html

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("phishsim")

DEFAULTS = {"compressor": "lzma", "threshold": 0.251, "parallel": 1, "strip_attributes": False}


class DomainError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _metadata() -> dict:
    return {"generated_at": datetime.now(timezone.utc).isoformat()}


def _iso_date(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {value!r}") from None


def _threshold(value) -> float:
    try:
        t = float(value)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if not 0 < t < 1:
        raise argparse.ArgumentTypeError(f"threshold must lie in (0, 1), got {t}")
    return t


def _workers(value) -> int:
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"--parallel must be >= 1, got {n}")
    return n


def _settings(args):
    c = CompressorKind.of(args.compressor)
    return c, Threshold(args.threshold), args.parallel


def _corpus(args):
    manifest, docs = ingest_corpus(args.manifest, args.strip_attributes)
    if manifest.drop_count:
        log.warning("dropped %d page(s) during ingestion", manifest.drop_count)
    return manifest, docs


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sanitize(args):
    if args.manifest:
        manifest, docs = _corpus(args)
        out = _out_dir(args)
        for d in docs:
            (out / f"{store.blob_name(d.id)}.html").write_bytes(d.data)
        print(_dump({"documents": len(docs), "dropped": manifest.dropped,
                     "original_bytes": sum(d.original_len for d in docs),
                     "sanitized_bytes": sum(d.sanitized_len for d in docs)}))
        return
    if not args.inputs:
        raise DomainError("sanitize needs --in or --manifest")
    raw = ByteDocument("input", Path(args.inputs[0]).read_bytes())
    data = sanitize_html(raw, args.strip_attributes).data
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data + b"\n")


def cmd_extract(args):
    c, t, workers = _settings(args)
    _, docs = _corpus(args)
    phish = [d for d in docs if d.label is Label.PHISHING]
    if args.cutoff:
        phish = [d for d in phish if d.timestamp < args.cutoff]
    if not phish:
        raise DomainError("no phishing documents to extract from")
    ps, assignment = extract_prototypes(phish, t, c, workers=workers)
    store.save(ps, args.out)
    dists = [m.distance.value for m in assignment.values()]
    print(_dump({
        "k": len(ps), "n": len(phish), "compression_ratio": len(ps) / len(phish),
        "members": len(assignment),
        "max_member_distance": max(dists) if dists else 0.0,
        "mean_member_distance": sum(dists) / len(dists) if dists else 0.0,
        "threshold": t.d, "compressor": c.label, "db": str(args.out),
    }))


def cmd_classify(args):
    ps = store.load(args.db, CompressorKind.of(args.compressor) if args.compressor_set else None)
    if args.threshold_set:
        ps = type(ps)(ps.prototypes, ps.compressor, Threshold(args.threshold), ps.cached_lens,
                      ps.created_at)
    for path in args.inputs:
        raw = ByteDocument(str(path), Path(path).read_bytes())
        v = classify(sanitize_html(raw, args.strip_attributes), ps)
        print(_dump({"id": v.doc_id, "decision": v.decision.value,
                     "min_distance": v.min_distance.value,
                     "nearest_prototype": v.nearest_prototype, "threshold": ps.threshold.d}))


def cmd_tune(args):
    c, _, workers = _settings(args)
    _, docs = _corpus(args)
    phish = [d for d in docs if d.label is Label.PHISHING]
    n = int(round((args.grid_stop - args.grid_start) / args.grid_step)) + 1
    grid = [round(args.grid_start + i * args.grid_step, 10) for i in range(n)]
    sweep = tuning.select_threshold(phish, grid, c, workers=workers)
    out = _out_dir(args)
    sweep.write(out / "sweep.csv", out / "sweep.json")
    plotting.plot_sweep(sweep, out / "sweep.png")
    print(_dump({"selected": sweep.selected.d, "points": len(sweep.grid), "out": str(out)}))


def _write_report(report, out: Path, name: str = "report"):
    report.metadata.update(_metadata())
    _write_json(out / f"{name}.json", report.to_dict())
    report.roc.to_csv(out / "roc.csv")
    plotting.plot_roc(report.roc, out / "roc.png")
    if report.per_iteration:
        report.iterations_to_csv(out / "iterations.csv")
        plotting.plot_iterations(report, out / "iterations.png")


def _summary(report) -> dict:
    m = report.metrics
    return {"tpr": m.tpr, "fpr": m.fpr, "accuracy": m.accuracy, "gmean": m.gmean,
            "auc": report.roc.auc, "prototypes": report.prototypes,
            "compression_ratio": report.compression_ratio}


def cmd_eval(args):
    c, t, workers = _settings(args)
    _, docs = _corpus(args)
    ps = None
    if args.db:
        ps = store.load(args.db, c if args.compressor_set else None)
    report, _ = evaluation.evaluate_split(docs, args.cutoff, t, c, workers=workers, ps=ps)
    out = _out_dir(args)
    _write_report(report, out)
    print(_dump(_summary(report)))


def cmd_incremental(args):
    c, t, workers = _settings(args)
    _, docs = _corpus(args)
    report = evaluation.run_incremental(docs, t, c, workers=workers)
    out = _out_dir(args)
    _write_report(report, out)
    print(_dump(_summary(report)))


def cmd_analyze(args):
    c, _, workers = _settings(args)
    if args.manifest:
        _, docs = _corpus(args)
    else:
        docs = [sanitize_html(ByteDocument(Path(p).stem, Path(p).read_bytes(), str(p)),
                              args.strip_attributes) for p in args.inputs]
    docs = sorted(docs, key=lambda d: d.id)
    m = ncd_matrix(docs, c, workers=workers)
    ids = [d.id for d in docs]
    tree = analysis.agglomerate(m, ids, args.linkage)
    out = _out_dir(args)
    (out / "matrix.csv").write_bytes(analysis.matrix_to_csv(m, ids))
    (out / "tree.nwk").write_bytes(analysis.export(tree, "newick"))
    (out / "linkage.csv").write_bytes(analysis.export(tree, "csv-linkage"))
    plotting.plot_dendrogram(tree, out / "dendrogram.png")
    print(_dump({"documents": len(docs), "linkage": args.linkage, "out": str(out)}))


def cmd_bench(args):
    _, t, workers = _settings(args)
    _, docs = _corpus(args)
    kinds = [CompressorKind.of(k) for k in args.kinds] if args.kinds else None
    rows = evaluation.bench_compressors(docs, args.cutoff, t, kinds, workers=workers)
    out = _out_dir(args)
    evaluation.bench_to_csv(rows, out / "bench.csv")
    _write_json(out / "bench.json", {"rows": [r.__dict__ for r in rows], "metadata": _metadata()})
    plotting.plot_bench(rows, out / "bench.png")
    ordering = sorted(rows, key=lambda r: -r.gmean)
    print(_dump({"gmean_order": [r.compressor for r in ordering], "out": str(out)}))


def cmd_serve(args):
    from .gateway import GatewayConfig, serve

    cfg = GatewayConfig.load(args.gateway_config, db=args.db, port=args.port, host=args.host,
                             spool=args.spool,
                             compressor=args.compressor if args.compressor_set else None,
                             threshold=args.threshold if args.threshold_set else None,
                             strip_attributes=args.strip_attributes or None)
    serve(cfg)


def cmd_db(args):
    if args.action == "stats":
        print(_dump(store.stats(args.db)))
    else:
        problems = store.verify(args.db)
        print(_dump({"ok": not problems, "problems": problems}))
        if problems:
            raise DomainError(f"{len(problems)} problem(s) in {args.db}")


def cmd_synth(args):
    corpus = synthetic.kit_corpus(args.seed, args.templates, args.variants, args.legit,
                                  args.weeks, novel_weeks=args.novel)
    manifest = corpus.write(args.out)
    print(_dump({"manifest": str(manifest), "phishing": len(corpus.phishing()),
                 "legitimate": len(corpus.legitimate()),
                 "first_week": corpus.start.isoformat(),
                 "suggested_cutoff": corpus.week_start(args.weeks - 2).isoformat()}))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of defaults; flags win")
    common.add_argument("--compressor", choices=[k.value for k in Kind])
    common.add_argument("--threshold", type=_threshold)
    common.add_argument("--parallel", type=_workers, metavar="N", help="worker threads")
    common.add_argument("--strip-attributes", action="store_true", default=None,
                        help="drop element attributes when sanitizing")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="phishsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    s = add("sanitize", cmd_sanitize, "reduce HTML to its tag skeleton")
    s.add_argument("--in", dest="inputs", nargs="+")
    s.add_argument("--manifest")
    s.add_argument("--out")

    s = add("extract", cmd_extract, "extract prototypes into a DB")
    s.add_argument("--manifest", required=True)
    s.add_argument("--cutoff", type=_iso_date, help="only phishing pages before this date")
    s.add_argument("--out", required=True)

    s = add("classify", cmd_classify, "classify pages against a DB")
    s.add_argument("--db", required=True)
    s.add_argument("--in", dest="inputs", nargs="+", required=True)

    s = add("tune", cmd_tune, "pick a distance threshold by clustering quality")
    s.add_argument("--manifest", required=True)
    s.add_argument("--grid-start", type=float, default=0.05)
    s.add_argument("--grid-stop", type=float, default=0.60)
    s.add_argument("--grid-step", type=float, default=0.01)
    s.add_argument("--out", required=True)

    s = add("eval", cmd_eval, "temporal-split evaluation")
    s.add_argument("--manifest", required=True)
    s.add_argument("--cutoff", type=_iso_date, required=True)
    s.add_argument("--db", help="use this DB instead of extracting from the training side")
    s.add_argument("--out", required=True)

    s = add("incremental", cmd_incremental, "weekly incremental-learning evaluation")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)

    s = add("analyze", cmd_analyze, "pairwise NCD matrix and dendrogram")
    s.add_argument("--manifest")
    s.add_argument("--in", dest="inputs", nargs="+")
    s.add_argument("--linkage", choices=analysis.LINKAGES, default="average")
    s.add_argument("--out", required=True)

    s = add("bench", cmd_bench, "compare compressors end to end")
    s.add_argument("--manifest", required=True)
    s.add_argument("--cutoff", type=_iso_date, required=True)
    s.add_argument("--kinds", nargs="+", choices=[k.value for k in Kind])
    s.add_argument("--out", required=True)

    s = add("serve", cmd_serve, "run the HTTP gateway")
    s.add_argument("--db")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--spool")
    s.add_argument("--gateway-config", help="gateway TOML (port, db, compressor, ...)")

    s = add("db", cmd_db, "inspect a prototype DB")
    s.add_argument("action", choices=["stats", "verify"])
    s.add_argument("--db", required=True)

    s = add("synth", cmd_synth, "write a seeded synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--templates", type=int, default=20)
    s.add_argument("--variants", type=int, default=30)
    s.add_argument("--legit", type=int, default=2000)
    s.add_argument("--weeks", type=int, default=10)
    s.add_argument("--novel", action="store_true", help="introduce templates week by week")
    return p


def _apply_config(args, parser):
    config = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                config = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            parser.error(f"--config: {exc}")
    config = {k.replace("-", "_"): v for k, v in config.items()}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        setattr(args, f"{key}_set", flag is not None or key in config)
        if flag is None:
            setattr(args, key, config.get(key, default))
    try:
        _threshold(args.threshold)
        _workers(args.parallel)
        CompressorKind.of(args.compressor)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        parser.error(f"--config: {exc}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config(args, parser)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DomainError, SanitizeError, store.CorruptDb, ValueError, OSError) as exc:
        print(f"phishsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
