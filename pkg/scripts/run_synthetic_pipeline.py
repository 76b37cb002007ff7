"""End-to-end demo on the seeded synthetic corpus.

Generates a keyword-planted corpus, trains the attention classifier, runs
the wrapper/filter explainer baselines at a fixed message size, trains one
bag-of-words layperson per explainer, and prints the communication report
plus a CSR-vs-k sweep for top-k attention.

    python3 scripts/run_synthetic_pipeline.py --out runs/synthetic
    python3 scripts/run_synthetic_pipeline.py --quick   # small & fast
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from commgame import data
from commgame import explainers as X
from commgame import game as G
from commgame.models import (
    AttentionClassifier,
    BowLayperson,
    LaypersonConfig,
    ModelConfig,
    TrainConfig,
    accuracy,
    train_classifier,
    train_layperson,
)


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/synthetic", help="artifact directory")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--vocab-size", type=int, default=500)
    p.add_argument("--noise-len", type=int, default=16)
    p.add_argument("--corpus-seed", type=int, default=7)
    p.add_argument("--transform", default="softmax",
                   choices=["softmax", "sparsemax", "entmax"])
    p.add_argument("--emb-dim", type=int, default=32)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--attn-dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--lay-epochs", type=int, default=8)
    p.add_argument("--lay-lr", type=float, default=5e-2)
    p.add_argument("--k", type=int, default=3, help="message size for baselines")
    p.add_argument("--ks", type=int, nargs="+", default=[1, 2, 4, 8],
                   help="message sizes for the sweep")
    p.add_argument("--quick", action="store_true",
                   help="shrink everything for a fast smoke run")
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    if args.quick:
        args.n_train, args.n_test = 600, 200
        args.vocab_size, args.noise_len = 200, 8
        args.epochs = 4
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    syn = data.generate_synthetic(
        n_train=args.n_train,
        n_test=args.n_test,
        vocab_size=args.vocab_size,
        n_classes=2,
        keywords_per_class=3,
        noise_len=args.noise_len,
        seed=args.corpus_seed,
    )
    vocab = syn.train.vocab
    n_vocab = len(vocab.id_to_token)
    n_dev = args.n_test // 2 if args.quick else 200
    dev = syn.test.examples[:n_dev]
    ev = syn.test.examples[n_dev:]
    print(f"corpus: {len(syn.train.examples)} train / {len(syn.test.examples)} test, "
          f"vocab {n_vocab}, planted keywords {sorted(sum(syn.keywords.values(), []))}")

    model = AttentionClassifier(
        ModelConfig(
            vocab_size=n_vocab,
            n_classes=2,
            transform=args.transform,
            emb_dim=args.emb_dim,
            hidden=args.hidden,
            attn_dim=args.attn_dim,
            seed=1,
        )
    )
    train_classifier(
        model, syn.train.examples, dev,
        TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=16, seed=2,
                    patience=min(5, args.epochs)),
        vocab,
    )
    test_acc = accuracy(model, syn.test.examples)
    print(f"classifier ({args.transform}): test accuracy {test_acc:.4f} "
          f"[{time.time() - t0:.0f}s]")

    explainers = {
        "random": lambda ex: X.explain_random(ex, args.k, seed=0),
        "erasure": lambda ex: X.explain_erasure(model, ex, args.k),
        "topk_gradient": lambda ex: X.explain_topk_gradient(model, ex, args.k),
        "topk_attention": lambda ex: X.explain_topk_attention(model, ex, args.k),
    }
    y_hat = {
        "train": [model.classify(ex).label for ex in syn.train.examples],
        "dev": [model.classify(ex).label for ex in dev],
    }
    lay_cfg = TrainConfig(epochs=args.lay_epochs, lr=args.lay_lr, batch_size=16, seed=12)

    reports = []
    for name, explain in explainers.items():
        pairs = {}
        for split, examples in (("train", syn.train.examples), ("dev", dev)):
            msgs = [explain(ex) for ex in examples]
            pairs[split] = [
                (sorted(m.token_ids), yh, None) for m, yh in zip(msgs, y_hat[split])
            ]
        lay = BowLayperson(LaypersonConfig(n_vocab, 2, seed=10))
        train_layperson(lay, pairs["train"], pairs["dev"], lay_cfg, vocab)
        records = G.play(model, explain, lay, ev)
        reports.append(G.run_report(records, f"{name}@k={args.k}", "classifier", 2))
        print(f"  {name}: CSR {reports[-1].csr:.4f}  ACC_L {reports[-1].acc_l:.4f}")

    print()
    print(G.report_table(reports))
    by_name = {r.explainer_id: r.csr for r in reports}
    gap = by_name[f"topk_attention@k={args.k}"] - by_name[f"random@k={args.k}"]
    print(f"attention-vs-random CSR gap at k={args.k}: {gap:+.4f}")

    cells = G.k_sweep(
        model,
        lambda k: (lambda ex: X.explain_topk_attention(model, ex, k)),
        lambda k: BowLayperson(LaypersonConfig(n_vocab, 2, seed=20)),
        syn.train.examples, dev, ev,
        ks=sorted(args.ks),
        train_cfg=TrainConfig(epochs=args.lay_epochs, lr=args.lay_lr,
                              batch_size=16, seed=21),
        vocab=vocab,
        explainer_id="topk_attention",
    )
    csv_text = G.curve_csv(cells)
    print()
    print("CSR vs message size (topk_attention):")
    print(csv_text)

    (out / "curve.csv").write_text(csv_text)
    (out / "report.json").write_text(G.report_json(reports))
    (out / "config.json").write_text(json.dumps(vars(args), indent=2, sort_keys=True))
    print(f"artifacts in {out}/  [{time.time() - t0:.0f}s total]")
    return 0 if gap > 0 else 1


if __name__ == "__main__":
    sys.exit(main())
