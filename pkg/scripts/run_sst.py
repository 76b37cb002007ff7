"""Published-scale sentence-sentiment run (needs external data).

Expects a directory with train.tsv / dev.tsv / test.tsv (token-splittable
sentence TAB binary label; standard 6920/872/1821 sentence-level split) and
a word-embedding text file (word followed by 300 floats per line). Trains
the BiLSTM-attention classifier with the published hyperparameters, then a
bag-of-words layperson on top-5 attention messages, and prints test
accuracy and CSR.

    python3 scripts/run_sst.py --data-dir data/sst \
        --embeddings data/embeddings.300d.txt --out runs/sst
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
    p.add_argument("--data-dir", default="data/sst")
    p.add_argument("--embeddings", default="data/embeddings.300d.txt")
    p.add_argument("--out", default="runs/sst")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    data_dir = Path(args.data_dir)
    emb_path = Path(args.embeddings)
    missing = [
        str(path)
        for path in (data_dir / "train.tsv", data_dir / "dev.tsv",
                     data_dir / "test.tsv", emb_path)
        if not path.exists()
    ]
    if missing:
        print("missing input files:", ", ".join(missing), file=sys.stderr)
        print("download the sentence-level sentiment split and a 300-d "
              "embedding file, then re-run.", file=sys.stderr)
        return 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    train = data.load_corpus(str(data_dir / "train.tsv"), fmt="tsv")
    vocab = train.vocab
    dev = data.load_corpus(str(data_dir / "dev.tsv"), fmt="tsv", vocab=vocab)
    test = data.load_corpus(str(data_dir / "test.tsv"), fmt="tsv", vocab=vocab)
    if len(train.examples) != 6920 or len(test.examples) != 1821:
        print(f"unexpected split sizes: train {len(train.examples)}, "
              f"test {len(test.examples)} (expected 6920/1821)", file=sys.stderr)
        return 1

    emb = data.load_embeddings(str(emb_path), vocab, seed=args.seed)
    model = AttentionClassifier(
        ModelConfig(
            vocab_size=len(vocab.id_to_token),
            n_classes=2,
            transform="softmax",
            emb_dim=300,
            hidden=128,
            attn_dim=128,
            seed=args.seed,
        ),
        pretrained=emb,
    )
    train_classifier(
        model, train.examples, dev.examples,
        TrainConfig(epochs=10, lr=1e-3, weight_decay=1e-4, batch_size=8,
                    seed=args.seed, patience=5),
        vocab,
    )
    test_acc = accuracy(model, test.examples)
    print(f"classifier test accuracy: {test_acc:.4f}  [{time.time() - t0:.0f}s]")

    explain = lambda ex: X.explain_topk_attention(model, ex, args.k)
    y_hat = {
        "train": [model.classify(ex).label for ex in train.examples],
        "dev": [model.classify(ex).label for ex in dev.examples],
    }
    pairs = {
        split: [
            (sorted(explain(ex).token_ids), yh, None)
            for ex, yh in zip(examples, y_hat[split])
        ]
        for split, examples in (("train", train.examples), ("dev", dev.examples))
    }
    lay = BowLayperson(LaypersonConfig(len(vocab.id_to_token), 2, seed=args.seed + 1))
    train_layperson(
        lay, pairs["train"], pairs["dev"],
        TrainConfig(epochs=10, lr=1e-3, weight_decay=1e-5, batch_size=16,
                    seed=args.seed + 1, patience=3),
        vocab,
    )
    records = G.play(model, explain, lay, test.examples)
    report = G.run_report(records, f"topk_attention@k={args.k}", "classifier", 2)
    print(G.report_table([report]))

    (out / "report.json").write_text(G.report_json([report]))
    (out / "config.json").write_text(json.dumps(vars(args), indent=2, sort_keys=True))
    print(f"artifacts in {out}/  [{time.time() - t0:.0f}s total]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
