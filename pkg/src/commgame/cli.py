"""Command-line workflow: generate data, train the classifier and
laypeople, produce explanation dumps, evaluate communication metrics,
sweep message sizes, train the joint explainer, and serve annotation
sessions.

Every command writes a resolved-config JSON next to its outputs and is a
pure function of its inputs plus seeds. Failures exit nonzero with a
machine-readable error JSON on stderr: config errors 2, data errors 3,
fingerprint mismatches 4, numeric divergence 5.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import explainers as X
from . import game
from .data import (
    Corpus,
    Vocabulary,
    generate_synthetic,
    load_corpus,
    load_embeddings,
    stopword_mask,
    write_tsv,
)
from .errors import (
    AlignmentError,
    CommgameError,
    ConfigError,
    DataFormatError,
    FingerprintMismatchError,
    InputError,
    LabelError,
    NumericError,
)
from .models import (
    AttentionClassifier,
    BowLayperson,
    CheckpointBundle,
    LaypersonConfig,
    ModelConfig,
    TrainConfig,
    restore_classifier,
    restore_layperson,
    train_classifier,
    train_layperson,
    write_metric_log,
)
from .service import create_app, session_from_dump

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FINGERPRINT = 4
EXIT_NUMERIC = 5

_ERROR_EXIT_CODES = (
    (FingerprintMismatchError, EXIT_FINGERPRINT),
    (NumericError, EXIT_NUMERIC),
    (DataFormatError, EXIT_DATA),
    (LabelError, EXIT_DATA),
    (InputError, EXIT_DATA),
    (AlignmentError, EXIT_DATA),
    (CommgameError, EXIT_CONFIG),
)


def exit_code_for(exc: CommgameError) -> int:
    for klass, code in _ERROR_EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return EXIT_CONFIG


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved_config(out: Path, args) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    path = out / f"{args.command.replace('-', '_')}-config.json"
    path.write_text(json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n")


NLI_FORMATS = ("snli-jsonl", "esnli-jsonl")


def _task_for(fmt: str) -> str:
    return "nli" if fmt in NLI_FORMATS else "textclf"


def _load_model_dir(model_dir: str) -> tuple[AttentionClassifier, Vocabulary, dict]:
    root = Path(model_dir)
    vocab = Vocabulary.from_json((root / "vocab.json").read_text())
    meta = json.loads((root / "meta.json").read_text())
    bundle = CheckpointBundle.load(str(root / "classifier.ckpt"))
    model = restore_classifier(bundle, vocab)
    return model, vocab, meta


def _load_eval_corpus(path: str, fmt: str, vocab: Vocabulary, meta: dict) -> Corpus:
    return load_corpus(
        path,
        fmt,
        vocab=vocab,
        label_names=meta["label_names"],
        keep_labels=meta.get("keep_labels"),
    )


def cmd_generate_synthetic(args) -> int:
    out = _outdir(args)
    syn = generate_synthetic(
        n_train=args.n_train,
        n_test=args.n_test,
        vocab_size=args.vocab_size,
        n_classes=args.n_classes,
        keywords_per_class=args.keywords_per_class,
        noise_len=args.noise_len,
        seed=args.seed,
    )
    write_tsv(syn.train, str(out / "train.tsv"))
    write_tsv(syn.test, str(out / "test.tsv"))
    (out / "keywords.json").write_text(
        json.dumps({str(c): kws for c, kws in syn.keywords.items()}, indent=2) + "\n"
    )
    _write_resolved_config(out, args)
    print(
        json.dumps(
            {
                "train": str(out / "train.tsv"),
                "test": str(out / "test.tsv"),
                "n_train": len(syn.train.examples),
                "n_test": len(syn.test.examples),
            }
        )
    )
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    out = _outdir(args)
    keep = args.keep_labels.split(",") if args.keep_labels else None
    train = load_corpus(args.train, args.fmt, vocab=None, keep_labels=keep)
    dev = load_corpus(
        args.dev, args.fmt, vocab=train.vocab, label_names=train.label_names,
        keep_labels=keep,
    )
    pretrained = None
    if args.embeddings:
        pretrained = load_embeddings(args.embeddings, train.vocab, seed=args.seed)
    cfg = ModelConfig(
        vocab_size=len(train.vocab.id_to_token),
        n_classes=len(train.label_names),
        task=_task_for(args.fmt),
        transform=args.transform,
        alpha=args.alpha,
        emb_dim=args.emb_dim,
        hidden=args.hidden,
        attn_dim=args.attn_dim,
        seed=args.seed,
    )
    model = AttentionClassifier(cfg, pretrained)
    tcfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        patience=args.patience,
        seed=args.seed,
    )
    bundle, log = train_classifier(model, train.examples, dev.examples, tcfg, train.vocab)
    bundle.save(str(out / "classifier.ckpt"))
    (out / "vocab.json").write_text(train.vocab.to_json())
    (out / "meta.json").write_text(
        json.dumps(
            {
                "task": cfg.task,
                "fmt": args.fmt,
                "label_names": train.label_names,
                "keep_labels": keep,
            },
            indent=2,
        )
        + "\n"
    )
    write_metric_log(log, str(out / "classifier-log.jsonl"))
    _write_resolved_config(out, args)
    print(
        json.dumps(
            {
                "checkpoint": str(out / "classifier.ckpt"),
                "dev_metric": bundle.dev_metric,
                "epochs_run": len(log),
            }
        )
    )
    return EXIT_OK


def _build_explain_fn(args, model, vocab, meta):
    joint = None
    if args.kind == "joint":
        if not args.joint:
            raise ConfigError("--joint checkpoint required for kind=joint")
        joint = X.restore_joint(CheckpointBundle.load(args.joint), vocab)
    k = None if args.kind == "human_highlights" else args.k
    cfg = X.ExplainerConfig(args.kind, k=k, seed=args.seed)
    return X.make_explainer(cfg, classifier=model, vocab=vocab, joint=joint)


def cmd_explain(args) -> int:
    out = _outdir(args)
    model, vocab, meta = _load_model_dir(args.model_dir)
    corpus = _load_eval_corpus(args.corpus, args.fmt, vocab, meta)
    examples = corpus.examples
    if args.kind == "human_highlights":
        neutral = (
            meta["label_names"].index("neutral")
            if "neutral" in meta["label_names"]
            else None
        )
        examples = X.highlight_examples(examples, neutral_label=neutral)
        if not examples:
            raise DataFormatError(f"{args.corpus}: no examples carry highlight masks")
    explain = _build_explain_fn(args, model, vocab, meta)
    messages = [explain(ex) for ex in examples]
    y_hats = [model.classify(ex).label for ex in examples]
    dump_path = out / f"messages-{args.kind}.jsonl"
    X.dump_messages(str(dump_path), examples, messages, y_hats, args.kind, vocab)
    _write_resolved_config(out, args)
    print(json.dumps({"dump": str(dump_path), "n_messages": len(messages)}))
    return EXIT_OK


def _dump_to_pairs(records: list[dict], vocab: Vocabulary):
    pairs = []
    for rec in records:
        ids = vocab.encode(rec["message_tokens"])
        hyp = vocab.encode(rec["hypothesis"]) if rec.get("hypothesis") else None
        pairs.append((ids, int(rec["y_hat"]), hyp))
    return pairs


def cmd_train_layperson(args) -> int:
    out = _outdir(args)
    vocab = Vocabulary.from_json(Path(args.vocab).read_text())
    records = X.load_messages(args.dump)
    if args.dev_dump:
        train_records = records
        dev_records = X.load_messages(args.dev_dump)
    else:
        split = max(1, int(len(records) * (1.0 - args.dev_fraction)))
        train_records, dev_records = records[:split], records[split:]
        if not dev_records:
            raise ConfigError(
                f"dev split is empty: {len(records)} records at "
                f"dev_fraction={args.dev_fraction}"
            )
    n_classes = args.n_classes
    lay = BowLayperson(
        LaypersonConfig(
            vocab_size=len(vocab.id_to_token),
            n_classes=n_classes,
            task=args.task,
            emb_dim=args.emb_dim,
            hidden=args.hidden,
            seed=args.seed,
        )
    )
    tcfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        patience=args.patience,
        seed=args.seed,
    )
    bundle, log = train_layperson(
        lay,
        _dump_to_pairs(train_records, vocab),
        _dump_to_pairs(dev_records, vocab),
        tcfg,
        vocab,
    )
    bundle.save(str(out / "layperson.ckpt"))
    write_metric_log(log, str(out / "layperson-log.jsonl"))
    _write_resolved_config(out, args)
    print(
        json.dumps(
            {"checkpoint": str(out / "layperson.ckpt"), "dev_metric": bundle.dev_metric}
        )
    )
    return EXIT_OK


def _report_from_file(records: list[dict], entropy_base: float) -> game.RunReport:
    for i, rec in enumerate(records):
        if "y_tilde" not in rec:
            raise DataFormatError(f"record {i} has no y_tilde field; "
                                  "evaluate needs played rounds or a layperson")
    n = len(records)
    if n == 0:
        raise DataFormatError("empty records file")
    csr = sum(r["y_tilde"] == r["y_hat"] for r in records) / n
    acc = sum(r["y_tilde"] == r["y"] for r in records) / n
    n_classes = max(max(r["y"], r["y_tilde"]) for r in records) + 1
    confusion = [[0] * n_classes for _ in range(n_classes)]
    for r in records:
        confusion[r["y"]][r["y_tilde"]] += 1
    try:
        entropy = game.explanation_entropy(
            [set(r["message_tokens"]) for r in records], entropy_base
        )
    except CommgameError:
        entropy = None
    mean_k = float(np.mean([len(set(r["message_tokens"])) for r in records]))
    explainer_id = records[0].get("explainer", "records")
    return game.RunReport(explainer_id, "from-file", csr, acc, mean_k, confusion, entropy)


def cmd_evaluate(args) -> int:
    out = _outdir(args)
    if args.records:
        report = _report_from_file(X.load_messages(args.records), args.entropy_base)
        records_path = args.records
    else:
        for required in ("model_dir", "layperson", "corpus", "kind"):
            if not getattr(args, required):
                raise ConfigError(f"--{required.replace('_', '-')} is required "
                                  "when --records is not given")
        model, vocab, meta = _load_model_dir(args.model_dir)
        corpus = _load_eval_corpus(args.corpus, args.fmt, vocab, meta)
        lay = restore_layperson(CheckpointBundle.load(args.layperson), vocab)
        explain = _build_explain_fn(args, model, vocab, meta)
        examples = corpus.examples
        if args.kind == "human_highlights":
            neutral = (
                meta["label_names"].index("neutral")
                if "neutral" in meta["label_names"]
                else None
            )
            examples = X.highlight_examples(examples, neutral_label=neutral)
        rounds = game.play(model, explain, lay, examples)
        report = game.run_report(
            rounds, args.kind, Path(args.model_dir).name,
            len(meta["label_names"]), args.entropy_base,
        )
        records_path = out / "records.jsonl"
        with open(records_path, "w", encoding="utf-8") as f:
            for r in rounds:
                f.write(
                    json.dumps(
                        {
                            "example_id": r.example_id,
                            "explainer": args.kind,
                            "k": r.message.k_requested,
                            "message_tokens": sorted(
                                vocab.decode(sorted(r.message.token_ids))
                            ),
                            "y": r.y,
                            "y_hat": r.y_hat,
                            "y_tilde": r.y_tilde,
                        }
                    )
                    + "\n"
                )
    (out / "report.json").write_text(game.report_json([report]) + "\n")
    table = game.report_table([report])
    (out / "report.txt").write_text(table)
    _write_resolved_config(out, args)
    print(table, end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = _outdir(args)
    model, vocab, meta = _load_model_dir(args.model_dir)
    train = _load_eval_corpus(args.train, args.fmt, vocab, meta)
    dev = _load_eval_corpus(args.dev, args.fmt, vocab, meta)
    test = _load_eval_corpus(args.test, args.fmt, vocab, meta)
    ks = [int(k) for k in args.ks.split(",")]
    stop_ids = frozenset()
    if args.kind == "topk_attention":
        stop_ids = frozenset(np.flatnonzero(stopword_mask(vocab)).tolist())
    factories = {
        "random": lambda k: (lambda ex: X.explain_random(ex, k, args.seed)),
        "erasure": lambda k: (lambda ex: X.explain_erasure(model, ex, k)),
        "topk_gradient": lambda k: (lambda ex: X.explain_topk_gradient(model, ex, k)),
        "topk_attention": lambda k: (
            lambda ex: X.explain_topk_attention(model, ex, k, stop_ids)
        ),
    }
    if args.kind not in factories:
        raise ConfigError(
            f"sweep needs a k-parameterized explainer, got {args.kind!r}"
        )
    tcfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    cells = game.k_sweep(
        model,
        factories[args.kind],
        lambda k: BowLayperson(
            LaypersonConfig(
                vocab_size=len(vocab.id_to_token),
                n_classes=len(meta["label_names"]),
                task=meta["task"],
                seed=args.seed,
            )
        ),
        train.examples,
        dev.examples,
        test.examples,
        ks,
        tcfg,
        vocab,
        explainer_id=args.kind,
        classifier_id=Path(args.model_dir).name,
        include_full=not args.no_full,
    )
    (out / "curve.csv").write_text(game.curve_csv(cells))
    (out / "reports.json").write_text(game.report_json([c.report for c in cells]) + "\n")
    table = game.report_table([c.report for c in cells])
    (out / "reports.txt").write_text(table)
    _write_resolved_config(out, args)
    print(table, end="")
    return EXIT_OK


def cmd_joint(args) -> int:
    out = _outdir(args)
    model, vocab, meta = _load_model_dir(args.model_dir)
    train = _load_eval_corpus(args.train, args.fmt, vocab, meta)
    dev = _load_eval_corpus(args.dev, args.fmt, vocab, meta)
    stop_ids = frozenset(np.flatnonzero(stopword_mask(vocab)).tolist())
    jcfg = X.JointConfig(
        vocab_size=len(vocab.id_to_token),
        n_classes=len(meta["label_names"]),
        classifier_state_dim=2 * model.cfg.hidden,
        emb_dim=args.emb_dim,
        hidden=args.hidden,
        attn_dim=args.attn_dim,
        ffn_dim=args.ffn_dim,
        lam=args.lam,
        beta=args.beta,
        seed=args.seed,
    )
    explainer = X.JointExplainer(jcfg)
    lay = BowLayperson(
        LaypersonConfig(
            vocab_size=len(vocab.id_to_token),
            n_classes=len(meta["label_names"]),
            task=meta["task"],
            seed=args.seed,
        )
    )
    tcfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    train_instances = X.prepare_joint_instances(model, train.examples)
    dev_instances = X.prepare_joint_instances(model, dev.examples)
    log = X.train_joint(
        explainer, lay, train_instances, dev_instances, tcfg, stop_ids, eval_k=args.k
    )
    dev_csr = log[-1]["value"] if log else 0.0
    X.joint_bundle(explainer, tcfg, vocab, dev_csr).save(str(out / "joint.ckpt"))
    CheckpointBundle(
        lay.snapshot(),
        {"kind": "layperson", "model": asdict(lay.cfg), "train": asdict(tcfg)},
        vocab.fingerprint,
        {"name": "csr", "value": dev_csr},
    ).save(str(out / "layperson.ckpt"))
    write_metric_log(log, str(out / "joint-log.jsonl"))
    _write_resolved_config(out, args)
    print(
        json.dumps(
            {
                "joint": str(out / "joint.ckpt"),
                "layperson": str(out / "layperson.ckpt"),
                "dev_csr": dev_csr,
            }
        )
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    out = _outdir(args)
    label_names = args.labels.split(",")
    sessions = []
    for path in args.dumps:
        records = X.load_messages(path)
        sessions.append(
            session_from_dump(
                records,
                session_id=Path(path).stem,
                label_names=label_names,
                seed=args.seed,
                size=args.session_size,
                task=args.task,
            )
        )
    app = create_app(sessions, args.answers)
    _write_resolved_config(out, args)
    summary = {
        "sessions": [
            {"session_id": s.session_id, "n_items": len(s.items)} for s in sessions
        ],
        "answers": args.answers,
    }
    print(json.dumps(summary))
    if args.dry_run:
        return EXIT_OK
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _add_train_flags(p, epochs_default=10):
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commgame",
        description="Classifier -> explainer -> layperson communication games.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synthetic", help="write a keyword-planted corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--vocab-size", type=int, default=500)
    p.add_argument("--n-classes", type=int, default=2)
    p.add_argument("--keywords-per-class", type=int, default=3)
    p.add_argument("--noise-len", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate_synthetic)

    p = sub.add_parser("train-classifier", help="train the attention classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--fmt", default="tsv", choices=["tsv", *NLI_FORMATS])
    p.add_argument("--out", required=True)
    p.add_argument("--transform", default="softmax",
                   choices=["softmax", "sparsemax", "entmax"])
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--emb-dim", type=int, default=64)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--attn-dim", type=int, default=64)
    p.add_argument("--keep-labels", default=None,
                   help="comma-separated label subset to keep (tsv only)")
    p.add_argument("--embeddings", default=None,
                   help="pretrained embedding text file; freezes the table")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("explain", help="dump messages for one explainer")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--fmt", default="tsv", choices=["tsv", *NLI_FORMATS])
    p.add_argument("--kind", required=True, choices=list(X.KINDS))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--joint", default=None, help="joint explainer checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("train-layperson", help="fit a layperson on a message dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--dev-dump", default=None)
    p.add_argument("--dev-fraction", type=float, default=0.1)
    p.add_argument("--vocab", required=True)
    p.add_argument("--task", default="textclf", choices=["textclf", "nli"])
    p.add_argument("--n-classes", type=int, required=True)
    p.add_argument("--emb-dim", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_layperson)

    p = sub.add_parser("evaluate", help="score a played game or play one")
    p.add_argument("--records", default=None,
                   help="JSONL of played rounds (with y_tilde); skips model loading")
    p.add_argument("--model-dir", default=None)
    p.add_argument("--layperson", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--fmt", default="tsv", choices=["tsv", *NLI_FORMATS])
    p.add_argument("--kind", default=None, choices=list(X.KINDS))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--joint", default=None)
    p.add_argument("--entropy-base", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="CSR as a function of message size k")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--fmt", default="tsv", choices=["tsv", *NLI_FORMATS])
    p.add_argument("--kind", default="topk_attention")
    p.add_argument("--ks", default="1,2,4,8")
    p.add_argument("--no-full", action="store_true",
                   help="skip the full-length terminal cell")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("joint", help="train the joint explainer+layperson")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--fmt", default="tsv", choices=["tsv", *NLI_FORMATS])
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--k", type=int, default=3, help="message size for dev CSR")
    p.add_argument("--emb-dim", type=int, default=24)
    p.add_argument("--hidden", type=int, default=12)
    p.add_argument("--attn-dim", type=int, default=12)
    p.add_argument("--ffn-dim", type=int, default=32)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_joint)

    p = sub.add_parser("serve", help="serve annotation sessions over HTTP")
    p.add_argument("--dumps", nargs="+", required=True)
    p.add_argument("--labels", required=True, help="comma-separated label names")
    p.add_argument("--task", default="textclf", choices=["textclf", "nli"])
    p.add_argument("--answers", required=True, help="append-only answer log path")
    p.add_argument("--session-size", type=int, default=200)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dry-run", action="store_true",
                   help="build sessions, print the summary, and exit")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommgameError as exc:
        code = exit_code_for(exc)
        print(
            json.dumps(
                {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
            ),
            file=sys.stderr,
        )
        return code


if __name__ == "__main__":
    sys.exit(main())
