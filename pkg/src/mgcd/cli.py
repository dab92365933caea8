"""Command-line entry point: ``mgcd <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Configuration precedence: command-line flag > ``--config`` file > built-in default.
The config file holds ``key = <json value>`` lines; ``#`` starts a comment.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__, corpus, discourse, eval as ev, stylemimic as sm, textproc
from . import dtransformer as dt

log = logging.getLogger("mgcd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

GENERAL_KEYS = {
    "seed": 0, "threads": 1, "fracs": "0.6,0.2,0.2", "tagger": "heuristic", "pdtb": "3.0",
    "tagger_url": None, "codes": None, "bpe_size": 1000, "desk": True, "max_inflight": 4,
    "lr.lam": 1e-4, "lr.lr": 0.1, "lr.tol": 1e-8, "lr.max_iter": 10_000, "timing": False,
}
CONFIG_KEYS = set(GENERAL_KEYS) | {f"dt.{f.name}" for f in fields(dt.DTConfig)} \
    | {f"mimic.{f.name}" for f in fields(sm.MimicConfig)}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# ------------------------------------------------------------------ config

def read_config(path) -> dict:
    out = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = <json>'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: unknown config key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{n}: value for {key!r} is not JSON: {exc}") from exc
    return out


class Resolved:
    """Flag > config file > default, for every key in ``CONFIG_KEYS``."""

    def __init__(self, args):
        self.file = read_config(args.config) if getattr(args, "config", None) else {}
        self.flags = {}
        for item in getattr(args, "set", None) or []:
            if "=" not in item:
                raise UsageError(f"--set expects key=<json>, got {item!r}")
            key, value = item.split("=", 1)
            if key not in CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            try:
                self.flags[key] = json.loads(value)
            except json.JSONDecodeError:
                self.flags[key] = value
        for key in GENERAL_KEYS:
            value = getattr(args, key.replace(".", "_"), None)
            if value is not None:
                self.flags[key] = value
        env_threads = os.environ.get("MGCD_THREADS")
        if env_threads and "threads" not in self.flags and "threads" not in self.file:
            self.flags["threads"] = int(env_threads)
        env_url = os.environ.get("MGCD_TAGGER_URL")
        if env_url and "tagger_url" not in self.flags and "tagger_url" not in self.file:
            self.flags["tagger_url"] = env_url

    def get(self, key):
        if key in self.flags:
            return self.flags[key]
        if key in self.file:
            return self.file[key]
        return GENERAL_KEYS.get(key)

    def _section(self, prefix):
        out = {}
        for src in (self.file, self.flags):
            out.update({k[len(prefix):]: v for k, v in src.items() if k.startswith(prefix)})
        return out

    def dt_config(self) -> dt.DTConfig:
        over = self._section("dt.")
        over.setdefault("seed", self.get("seed"))
        try:
            return dt.DTConfig.desk(**over) if self.get("desk") else dt.DTConfig(**over)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid DTransformer config: {exc}") from exc

    def mimic_config(self) -> sm.MimicConfig:
        over = self._section("mimic.")
        over.setdefault("seed", self.get("seed"))
        try:
            return sm.MimicConfig.desk(**over) if self.get("desk") else sm.MimicConfig(**over)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid mimic config: {exc}") from exc

    def as_dict(self) -> dict:
        out = {k: self.get(k) for k in sorted(GENERAL_KEYS)}
        out.update({f"dt.{k}": v for k, v in asdict(self.dt_config()).items()})
        out.update({f"mimic.{k}": v for k, v in asdict(self.mimic_config()).items()})
        return out


def _limit_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=max(1, int(n)))


# ------------------------------------------------------------------ helpers

def _vocab(cfg: Resolved) -> discourse.CodeVocab:
    try:
        return discourse.builtin_vocab(str(cfg.get("pdtb")))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"unknown PDTB version {cfg.get('pdtb')!r}") from exc


def _tagger(cfg: Resolved, vocab=None):
    vocab = vocab or _vocab(cfg)
    kind = cfg.get("tagger")
    if kind not in ("heuristic", "file", "remote", "constant"):
        raise UsageError(f"unknown tagger {kind!r}")
    if kind == "file" and not cfg.get("codes"):
        raise UsageError("--tagger file needs --codes")
    if kind == "remote" and not cfg.get("tagger_url"):
        raise UsageError("--tagger remote needs --tagger-url or MGCD_TAGGER_URL")
    return discourse.make_tagger(kind, vocab, path=cfg.get("codes"), url=cfg.get("tagger_url"),
                                 max_inflight=int(cfg.get("max_inflight")))


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


# ------------------------------------------------------------------ subcommands

def cmd_ingest(args, cfg):
    pairs = corpus.load_pairs(args.inp)
    corpus.write_pairs(args.out, pairs)
    print(f"ingested {len(pairs)} pairs -> {args.out}")


def cmd_clean(args, cfg):
    pairs = corpus.load_pairs(args.inp)
    kept, report = corpus.clean(pairs)
    corpus.write_pairs(args.out, kept)
    if args.report:
        _write_json(args.report, asdict(report))
    print(f"kept {report.kept}, dropped non-Latin {report.dropped_nonlatin}, "
          f"dropped invalid marker {report.dropped_invalid_marker}")


def cmd_split(args, cfg):
    spec = corpus.SplitSpec.parse(str(cfg.get("fracs")), int(cfg.get("seed")))
    pairs = corpus.load_pairs(args.inp)
    train, valid, test = corpus.split(pairs, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        corpus.write_pairs(out / f"{name}.jsonl", part)
    _write_json(out / "manifest.json", corpus.split_manifest(spec.seed, train, valid, test))
    print(f"train {len(train)} / valid {len(valid)} / test {len(test)} pairs -> {out}")


def cmd_stats(args, cfg):
    docs = corpus.load_documents(args.inp)
    stats = textproc.corpus_stats(docs, k=args.k)
    if args.json:
        _write_json(args.json, {k: v.to_json() for k, v in stats.items()})
    print(textproc.render_stats(stats), end="")


def cmd_train_bpe(args, cfg):
    docs = corpus.load_documents(args.inp)
    vocab = textproc.train_bpe([d.text for d in docs], int(cfg.get("bpe_size")))
    vocab.save(args.out)
    print(f"BPE vocabulary of {vocab.size} tokens, {len(vocab.merges)} merges -> {args.out}")


def cmd_tag(args, cfg):
    vocab = _vocab(cfg)
    tagger = _tagger(cfg, vocab)
    docs = corpus.load_documents(args.inp)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            seq = discourse.tag_document(textproc.sentences(d.text), tagger, d.doc_id)
            fh.write(json.dumps({"doc_id": d.doc_id, "codes": [vocab.labels[c] for c in seq.codes]}) + "\n")
    print(f"tagged {len(docs)} documents -> {args.out}")


def _train_dt(args, cfg, hierarchical_only):
    dcfg = cfg.dt_config()
    tagger = _tagger(cfg)
    train_docs = corpus.load_documents(args.train)
    valid_docs = corpus.load_documents(args.valid)
    result = dt.train(dcfg, train_docs, valid_docs, tagger, hierarchical_only=hierarchical_only,
                      timing=bool(cfg.get("timing")))
    dt.save_checkpoint(result, args.out)
    dt.write_log(args.log or str(args.out) + ".log.jsonl", result.log)
    last = result.log[result.best_epoch - 1]
    print(f"best epoch {result.best_epoch}: val_acc {last.val_acc:.4f} -> {args.out}")


def cmd_train_dt(args, cfg):
    _train_dt(args, cfg, False)


def cmd_ablate_dt(args, cfg):
    _train_dt(args, cfg, True)


def cmd_train_mimic(args, cfg):
    mcfg = cfg.mimic_config()
    bpe = textproc.BpeVocab.load(args.bpe)
    train = corpus.load_pairs(args.train)
    valid = corpus.load_pairs(args.valid) if args.valid else None
    res = sm.train_mimic(train, bpe, mcfg, valid, timing=bool(cfg.get("timing")))
    res.mimic.save(args.out)
    with open(args.log or str(args.out) + ".log.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for row in res.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"best epoch {res.best_epoch}: val_loss {res.log[res.best_epoch - 1]['val_loss']:.4f} -> {args.out}")


def _load_mimic(args):
    if args.identity:
        if not args.bpe:
            raise UsageError("--identity needs --bpe for the term-frequency embedder")
        return sm.IdentityMimic(textproc.BpeVocab.load(args.bpe))
    if not args.mimic:
        raise UsageError("features needs --mimic CHECKPOINT or --identity")
    return sm.Mimic.load(args.mimic)


def cmd_features(args, cfg):
    mimic = _load_mimic(args)
    docs = corpus.load_documents(args.inp)
    feats = sm.extract_features_batch([d.text for d in docs], mimic)
    sm.write_features(args.out, docs, feats)
    if args.bleu_report:
        Path(args.bleu_report).write_text(
            ev.bleu_divergence_report([d.doc_id for d in docs], [d.label for d in docs], feats), encoding="utf-8")
    print(f"features for {len(docs)} documents -> {args.out}")


def cmd_train_lr(args, cfg):
    _, labels, feats = sm.read_features(args.features)
    model = sm.train_lr(feats, labels, lam=float(cfg.get("lr.lam")), lr=float(cfg.get("lr.lr")),
                        tol=float(cfg.get("lr.tol")), max_iter=int(cfg.get("lr.max_iter")))
    model.save(args.out)
    print(f"LR trained in {len(model.loss_history) - 1} iterations, loss {model.loss_history[-1]:.6f} -> {args.out}")


def cmd_predict(args, cfg):
    records = []
    if args.kind == "dt":
        if not args.inp:
            raise UsageError("predict --kind dt needs --in DOCS")
        result = dt.load_checkpoint(args.model)
        tagger = _tagger(cfg)
        docs = corpus.load_documents(args.inp)
        for d, p in zip(docs, dt.predict_docs(result, docs, tagger)):
            records.append(ev.PredictionRecord(d.doc_id, d.label, p.score))
    else:
        if not args.features:
            raise UsageError("predict --kind lr needs --features FEATURES")
        model = sm.LrModel.load(args.model)
        ids, labels, feats = sm.read_features(args.features)
        for doc_id, label, p in zip(ids, labels, sm.predict_proba(feats, model)):
            records.append(ev.PredictionRecord(doc_id, label, float(p)))
    ev.write_predictions(args.out, records)
    print(f"{len(records)} predictions -> {args.out}")


def cmd_evaluate(args, cfg):
    records = ev.read_predictions(args.pred)
    out = {"n": len(records), "accuracy": ev.accuracy(records)}
    try:
        out["auc_roc"] = ev.auc_roc(records)
    except ev.EvalError:
        out["auc_roc"] = None
    if args.roc:
        ev.write_roc(args.roc, records)
    if args.json:
        _write_json(args.json, out)
    print(json.dumps(out, sort_keys=True))


def cmd_bench(args, cfg):
    url = args.url or cfg.get("tagger_url")
    if not url:
        raise UsageError("bench needs --url")
    docs = corpus.load_documents(args.inp)
    scores = ev.remote_detector(url, [d.text for d in docs], max_inflight=int(cfg.get("max_inflight")))
    records = [ev.PredictionRecord(d.doc_id, d.label, s) for d, s in zip(docs, scores)]
    ev.write_predictions(args.out, records)
    print(f"{len(records)} remote scores -> {args.out}; accuracy {ev.accuracy(records):.4f}")


def cmd_report(args, cfg):
    results, inputs = {}, {}
    for item in args.pred:
        parts = item.split(":", 2)
        if len(parts) != 3:
            raise UsageError(f"--pred expects MODEL:DATASET:PATH, got {item!r}")
        model, dataset, path = parts
        results[(model, dataset)] = ev.accuracy(ev.read_predictions(path))
        inputs[path] = _sha256(path)
    text, csv_text = ev.report_table(results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(csv_text, encoding="utf-8")
    _write_json(out / "manifest.json", {"command": ["mgcd"] + list(args.argv), "config": cfg.as_dict(),
                                        "input_hashes": inputs, "version": version_string()})
    print(text, end="")


def cmd_selftest(args, cfg):
    from . import selftest
    ok = selftest.run(seed=int(cfg.get("seed")), out=sys.stdout)
    if not ok:
        raise FloatingPointError("self-test failed")


COMMANDS = {
    "ingest": cmd_ingest, "clean": cmd_clean, "split": cmd_split, "stats": cmd_stats,
    "train-bpe": cmd_train_bpe, "tag": cmd_tag, "train-dt": cmd_train_dt, "ablate-dt": cmd_ablate_dt,
    "train-mimic": cmd_train_mimic, "features": cmd_features, "train-lr": cmd_train_lr,
    "predict": cmd_predict, "evaluate": cmd_evaluate, "bench": cmd_bench, "report": cmd_report,
    "selftest": cmd_selftest,
}


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", help="key = <json> config file")
    common.add_argument("--set", action="append", metavar="KEY=JSON", help="override one config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="cap on numeric and worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="mgcd", description="Machine-generated content detection toolkit.")
    p.add_argument("--version", action="version", version=f"mgcd {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    s = add("ingest", "validate a pairs JSONL file and write it in canonical form")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)

    s = add("clean", "drop pairs with non-Latin letters or invalid punctuation markers")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report")

    s = add("split", "pair-aware train/valid/test split")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--fracs")
    s.add_argument("--out", required=True, help="output directory")

    s = add("stats", "per-class linguistic statistics")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--json")
    s.add_argument("--k", type=int, default=20)

    s = add("train-bpe", "train a BPE vocabulary")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--size", dest="bpe_size", type=int)
    s.add_argument("--out", required=True)

    def tagger_flags(s):
        s.add_argument("--tagger", choices=["heuristic", "file", "remote", "constant"])
        s.add_argument("--pdtb", help="sense inventory: 2.0 or 3.0")
        s.add_argument("--codes", help="precomputed codes JSONL for --tagger file")
        s.add_argument("--tagger-url", dest="tagger_url")
        s.add_argument("--max-inflight", dest="max_inflight", type=int)

    s = add("tag", "write one discourse code line per document")
    tagger_flags(s)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)

    for name, help_ in (("train-dt", "train the discourse transformer"),
                        ("ablate-dt", "train the hierarchical-only ablation")):
        s = add(name, help_)
        tagger_flags(s)
        s.add_argument("--train", required=True)
        s.add_argument("--valid", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--log")
        s.add_argument("--timing", action="store_const", const=True)

    s = add("train-mimic", "train the MGC-to-HPC style mimic")
    s.add_argument("--train", required=True)
    s.add_argument("--valid")
    s.add_argument("--bpe", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.add_argument("--timing", action="store_const", const=True)

    s = add("features", "BLEU-1..4 + cosine difference features")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--mimic")
    s.add_argument("--identity", action="store_true", help="use the identity mimic (control)")
    s.add_argument("--bpe")
    s.add_argument("--out", required=True)
    s.add_argument("--bleu-report", dest="bleu_report")

    s = add("train-lr", "logistic regression on difference features")
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)

    s = add("predict", "score documents with a trained model")
    tagger_flags(s)
    s.add_argument("--kind", choices=["dt", "lr"], required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp")
    s.add_argument("--features")
    s.add_argument("--out", required=True)

    s = add("evaluate", "accuracy and AUC-ROC of a predictions file")
    s.add_argument("--pred", required=True)
    s.add_argument("--roc")
    s.add_argument("--json")

    s = add("bench", "score documents with a remote detector")
    s.add_argument("--url")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-inflight", dest="max_inflight", type=int)

    s = add("report", "model x dataset accuracy table plus a run manifest")
    s.add_argument("--pred", action="append", required=True, metavar="MODEL:DATASET:PATH")
    s.add_argument("--out", required=True)

    add("selftest", "gradient checks and metric oracles")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = Resolved(args)
        log.info("resolved config: %s", json.dumps(cfg.as_dict(), sort_keys=True))
        with _limit_threads(cfg.get("threads")) or _Null():
            COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mgcd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, dt.NumericError, sm.NumericError) as exc:
        print(f"mgcd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (corpus.CorpusError, discourse.TaggerError, textproc.BpeError, ev.EvalError, ev.DetectorError,
            sm.UntrainedModel, dt.VocabMismatch, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"mgcd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


if __name__ == "__main__":
    sys.exit(main())
