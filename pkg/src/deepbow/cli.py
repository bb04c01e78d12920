"""Command-line entry point: ``deepbow <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from .config import Config
from .inference import PRODUCT, QUERY, DeepBoW, Truncation
from .scoring import MODES, explain, score
from .store import BoWStore, precompute
from .vocab import Vocabulary, build_vocabulary

log = logging.getLogger("deepbow")


def _read_texts(paths):
    """Yield texts from plain files, or both columns of query/product TSVs."""
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) >= 3 and parts[-1] in ("0", "1"):
                    yield parts[0]
                    yield parts[1]
                else:
                    yield parts[-1]


def _read_id_texts(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            ident, sep, text = line.partition("\t")
            if not sep:
                raise SystemExit(f"{path}:{lineno}: expected 'id<TAB>text'")
            yield ident, text


def _read_pairs(path):
    with open(path, encoding="utf-8") as fh:
        return [tuple(line.rstrip("\n").split("\t")[:2]) for line in fh if line.strip()]


def _truncation(spec: str | None, default: Truncation) -> Truncation:
    if spec is None:
        return default
    if spec == "none":
        return Truncation("none")
    kind, _, val = spec.partition(":")
    if kind == "topk":
        return Truncation("topk", k=int(val))
    if kind == "threshold":
        return Truncation("threshold", tau=float(val))
    raise SystemExit(f"bad truncation {spec!r}; use none, topk:K or threshold:TAU")


def _model(args) -> DeepBoW:
    return DeepBoW.load(args.model, Vocabulary.load(args.vocab))


def cmd_build_vocab(args, cfg: Config):
    vc = cfg.vocab
    voc = build_vocabulary(_read_texts(args.corpus), args.v or vc.v, args.B or vc.B,
                           args.ngram or vc.ngram_order, args.segmenter or vc.segmenter)
    voc.save(args.out)
    print(json.dumps({"out": args.out, "v": voc.v, "B": voc.B, "hash": voc.digest}))


def cmd_train(args, cfg: Config):
    from .model import ModelConfig
    from .training import read_dataset, save_result, train

    voc = Vocabulary.load(args.vocab)
    tc = cfg.train
    overrides = {k: getattr(args, k) for k in ("lr", "epochs", "patience", "loss", "batch_tokens")
                 if getattr(args, k) is not None}
    if args.no_norm:
        overrides["use_norm"] = False
    tc = replace(tc, seed=args.seed if args.seed is not None else tc.seed,
                 deterministic=args.deterministic or tc.deterministic, **overrides)
    m = cfg.model
    mcfg = ModelConfig(voc.size, m.d, m.L, m.heads, m.ffn, m.max_len, m.use_char, m.use_word, tc.seed,
                       m.expansion_bias, m.member_bias)
    result = train(read_dataset(args.data), read_dataset(args.valid), voc, mcfg, tc, metrics_path=args.metrics)
    digest = save_result(result, args.out, voc, tc)
    print(json.dumps({"out": args.out, "best_epoch": result.best_epoch, "best_roc_auc": result.best_auc,
                      "checkpoint_hash": digest}))


def cmd_precompute(args, cfg: Config):
    model = _model(args)
    default = cfg.query_truncation if args.side == QUERY else cfg.truncation
    store = precompute(_read_id_texts(args.input), model, args.side, args.mode, _truncation(args.trunc, default))
    store.save(args.out)
    sizes = store.support_sizes()
    print(json.dumps({"out": args.out, "entries": len(store), "skipped": store.skipped,
                      "duplicates": store.duplicates, "mean_support": float(sizes.mean()) if len(sizes) else 0.0}))


def _pair_reps(args, cfg: Config):
    """Resolve the query/product representations for score and explain."""
    if args.qstore and args.pstore:
        qs, ps = BoWStore.load(args.qstore), BoWStore.load(args.pstore)
        if args.pairs:
            return [(q, p, qs.get(q), ps.get(p)) for q, p in _read_pairs(args.pairs)]
        return [(args.qid, args.pid, qs.get(args.qid), ps.get(args.pid))]
    if not (args.model and args.vocab and args.query is not None and args.product is not None):
        raise SystemExit("give --qstore/--pstore with ids, or --model/--vocab with --query/--product")
    model = _model(args)
    q = model.encode(args.query, QUERY, args.mode, _truncation(args.qtrunc, cfg.query_truncation))
    p = model.encode(args.product, PRODUCT, args.mode, _truncation(args.trunc, cfg.truncation))
    return [(args.query, args.product, q, p)]


def cmd_score(args, cfg: Config):
    for qid, pid, q, p in _pair_reps(args, cfg):
        s = score(q, p, args.mode)
        decision = "good" if s >= cfg.serve.threshold else "bad"
        print(json.dumps({"qid": qid, "pid": pid, "score": s, "decision": decision}, ensure_ascii=False))


def cmd_explain(args, cfg: Config):
    voc = Vocabulary.load(args.vocab) if args.vocab else None
    for qid, pid, q, p in _pair_reps(args, cfg):
        exp = explain(q, p, voc, args.mode)
        if args.json:
            print(json.dumps({"qid": qid, "pid": pid, **exp.to_dict()}, ensure_ascii=False))
        else:
            print(f"# {qid} / {pid}")
            print(exp.format())


def cmd_eval(args, cfg: Config):
    from .metrics import evaluation_report
    from .training import read_dataset

    model = _model(args)
    data = read_dataset(args.data)
    qt = _truncation(args.qtrunc, cfg.query_truncation)
    pt = _truncation(args.trunc, cfg.truncation)
    encoded = model.run([e.query for e in data] + [e.product for e in data])
    n = len(data)
    scores, labels = [], []
    for i, ex in enumerate(data):
        qe, pe = encoded[i], encoded[n + i]
        if qe is None or pe is None:
            continue
        scores.append(score(model.represent(qe, QUERY, args.mode, qt), model.represent(pe, PRODUCT, args.mode, pt),
                            args.mode))
        labels.append(ex.label)
    report = evaluation_report(np.array(scores), np.array(labels))
    text = json.dumps(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_bench(args, cfg: Config):
    from .metrics import bench_latency

    qs, ps = BoWStore.load(args.qstore), BoWStore.load(args.pstore)
    if args.pairs:
        pairs = _read_pairs(args.pairs)
    else:
        rng = np.random.default_rng(args.seed or 0)
        pairs = [(qs.ids[rng.integers(len(qs))], ps.ids[rng.integers(len(ps))]) for _ in range(args.n)]
    print(json.dumps(bench_latency(qs, ps, pairs, args.mode, args.reps)))


def cmd_serve(args, cfg: Config):
    from .service import ServeConfig, serve

    qs = BoWStore.load(args.qstore) if args.qstore else None
    ps = BoWStore.load(args.pstore) if args.pstore else None
    model = _model(args) if args.model else None
    sc = cfg.serve
    conf = ServeConfig(args.port or sc.port, args.host or sc.host, sc.threshold, sc.mode,
                       cfg.query_truncation, cfg.truncation)
    serve(qs, ps, model, conf)


def cmd_synth(args, cfg: Config):
    from pathlib import Path

    from .synthetic import generate
    from .training import write_dataset

    data = generate(n_words=args.words, n_synonym_pairs=args.synonyms, n_train=args.train, n_test=args.test,
                    seed=args.seed or 0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.tsv", data.train)
    write_dataset(out / "test.tsv", data.test)
    with open(out / "synonyms.tsv", "w", encoding="utf-8") as fh:
        for a, b in sorted(data.synonyms.items()):
            if a < b:
                fh.write(f"{a}\t{b}\n")
    print(json.dumps({"out_dir": str(out), "train": len(data.train), "test": len(data.test)}))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deepbow", description="Sparse bag-of-words relevance models.")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--deterministic", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--v", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--ngram", type=int)
    p.add_argument("--segmenter")
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model on a query/product/label TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="JSON-lines metrics log")
    p.add_argument("--loss", choices=("t", "s"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-tokens", dest="batch_tokens", type=int)
    p.add_argument("--no-norm", action="store_true", help="drop the l2 sparsity term")
    p.set_defaults(fn=cmd_train)

    def model_args(p, required=True):
        p.add_argument("--model", required=required)
        p.add_argument("--vocab", required=required)

    p = sub.add_parser("precompute", help="encode id<TAB>text lines into a store")
    model_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--side", choices=(QUERY, PRODUCT), required=True)
    p.add_argument("--mode", choices=MODES, default="q_synonym")
    p.add_argument("--trunc", help="none | topk:K | threshold:TAU")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_precompute)

    for name, fn, helptext in (("score", cmd_score, "score query/product pairs"),
                               ("explain", cmd_explain, "per-term breakdown of a score")):
        p = sub.add_parser(name, help=helptext)
        model_args(p, required=False)
        p.add_argument("--qstore")
        p.add_argument("--pstore")
        p.add_argument("--qid")
        p.add_argument("--pid")
        p.add_argument("--pairs", help="qid<TAB>pid lines")
        p.add_argument("--query")
        p.add_argument("--product")
        p.add_argument("--mode", choices=MODES, default="q_synonym")
        p.add_argument("--trunc")
        p.add_argument("--qtrunc")
        if name == "explain":
            p.add_argument("--json", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="ROC-AUC and Neg PR-AUC on a labelled TSV")
    model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=MODES, default="q_synonym")
    p.add_argument("--trunc")
    p.add_argument("--qtrunc")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="pairwise scoring latency over two stores")
    p.add_argument("--qstore", required=True)
    p.add_argument("--pstore", required=True)
    p.add_argument("--pairs")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--mode", choices=MODES, default="q_synonym")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="newline-delimited JSON service over TCP")
    model_args(p, required=False)
    p.add_argument("--qstore")
    p.add_argument("--pstore")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("synth", help="write a synthetic relevance dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--words", type=int, default=2000)
    p.add_argument("--synonyms", type=int, default=200)
    p.add_argument("--train", type=int, default=20000)
    p.add_argument("--test", type=int, default=2000)
    p.set_defaults(fn=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    cfg = Config.load(args.config) if args.config else Config()
    try:
        args.fn(args, cfg)
    except (KeyError, ValueError, OSError) as exc:
        print(f"deepbow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
