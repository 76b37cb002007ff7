"""Explainer contracts: message well-formedness, forward-pass call counts,
determinism, gradient scoring against a closed-form linear probe, stopword
exclusion, and the jointly trained explainer's frozen-classifier guarantee.
"""

import json

import numpy as np
import pytest

from commgame import autodiff as ad
from commgame import explainers as X
from commgame.data import PAD_ID, Example, Vocabulary, stopword_mask
from commgame.errors import ConfigError, ContractError, DataFormatError, InputError
from commgame.models import (
    AttentionClassifier,
    BowLayperson,
    LaypersonConfig,
    ModelConfig,
    TrainConfig,
)


class CountingClassifier:
    """Pass-through wrapper that counts forward() invocations."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def cfg(self):
        return self.inner.cfg

    def forward(self, *args, **kwargs):
        self.calls += 1
        return self.inner.forward(*args, **kwargs)


def jaccard(a, b):
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def assert_well_formed(msg, tokens):
    content = {t for t in tokens if t != PAD_ID}
    assert msg.token_ids <= content
    assert list(msg.positions) == sorted(set(msg.positions))
    for p in msg.positions:
        assert 0 <= p < len(tokens)
        assert tokens[p] != PAD_ID
    assert msg.token_ids == {tokens[p] for p in msg.positions}


class TestRandom:
    def test_deterministic_per_seed(self, syn):
        ex = syn.test.examples[0]
        assert X.explain_random(ex, 3, seed=4) == X.explain_random(ex, 3, seed=4)

    def test_seed_changes_selection_somewhere(self, syn):
        picks = {
            X.explain_random(syn.test.examples[0], 2, seed=s).positions
            for s in range(20)
        }
        assert len(picks) > 1

    def test_examples_do_not_share_one_draw(self, syn):
        msgs = [X.explain_random(ex, 2, seed=0) for ex in syn.test.examples[:30]]
        assert len({m.positions for m in msgs}) > 1

    def test_k_zero_is_empty(self, syn):
        msg = X.explain_random(syn.test.examples[0], 0, seed=0)
        assert msg.token_ids == frozenset() and msg.positions == ()

    def test_k_beyond_length_takes_everything(self):
        msg = X.explain_random([5, 7, 9], 50, seed=1)
        assert msg.positions == (0, 1, 2)
        assert msg.k_requested == 50

    def test_pad_positions_never_sampled(self):
        for seed in range(25):
            msg = X.explain_random([5, PAD_ID, 7, PAD_ID], 4, seed=seed)
            assert set(msg.positions) == {0, 2}

    def test_negative_k_rejected(self):
        with pytest.raises(ConfigError):
            X.explain_random([3, 4], -1, seed=0)


class TestErasure:
    def test_call_count_is_min_k_length_plus_one(self, softmax_model):
        model, _, _ = softmax_model
        ex_tokens = [5, 8, 11, 14, 17]
        counter = CountingClassifier(model)
        msg = X.explain_erasure(counter, ex_tokens, 3)
        assert counter.calls == 4
        assert len(msg.positions) == 3

    def test_k_beyond_length_stops_early(self, softmax_model):
        model, _, _ = softmax_model
        counter = CountingClassifier(model)
        msg = X.explain_erasure(counter, [5, 8, 11, 14], 10)
        assert counter.calls == 5
        assert set(msg.positions) == {0, 1, 2, 3}

    def test_k_one_is_top_attention_of_unmodified_input(self, softmax_model, syn):
        model, _, _ = softmax_model
        for ex in syn.test.examples[:10]:
            erased = X.explain_erasure(model, ex, 1)
            top1 = X.explain_topk_attention(model, ex, 1)
            assert erased.positions == top1.positions

    def test_each_round_erases_a_new_position(self, softmax_model, syn):
        model, _, _ = softmax_model
        ex = syn.test.examples[3]
        msg = X.explain_erasure(model, ex, 4)
        assert len(set(msg.positions)) == 4

    def test_deterministic(self, softmax_model, syn):
        model, _, _ = softmax_model
        ex = syn.test.examples[5]
        assert X.explain_erasure(model, ex, 3) == X.explain_erasure(model, ex, 3)

    def test_rejects_k_below_one(self, softmax_model):
        model, _, _ = softmax_model
        with pytest.raises(ConfigError):
            X.explain_erasure(model, [3, 4], 0)


class LinearProbe:
    """Embedding -> sum -> logits; exposes the ForwardPass fields the
    gradient explainer reads. Position score has the closed form
    |e_i . w_yhat| because d logit_y / d e_i = w[:, y] for every i."""

    def __init__(self, emb_matrix, w):
        self.emb_matrix = emb_matrix  # (V, d)
        self.w = w  # (d, C)

    def forward(self, example, **kwargs):
        tokens = getattr(example, "tokens", example)
        valid = [i for i, t in enumerate(tokens) if t != PAD_ID]
        sub = [tokens[i] for i in valid]
        emb = ad.take_rows(ad.leaf(self.emb_matrix), sub)
        pooled = ad.matmul(ad.leaf(np.ones((1, len(sub)))), emb)
        logits = ad.matmul(pooled, ad.leaf(self.w))

        class FP:
            pass

        fp = FP()
        fp.logits, fp.emb, fp.valid_positions = logits, emb, valid
        fp.label = int(np.argmax(logits.value))
        return fp


class TestTopkGradient:
    def test_matches_linear_probe_closed_form(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(30, 6))
        w = rng.normal(size=(6, 3))
        probe = LinearProbe(emb, w)
        for trial in range(50):
            tokens = rng.integers(2, 30, size=rng.integers(2, 9)).tolist()
            fp = probe.forward(tokens)
            scores = np.abs(emb[tokens] @ w[:, fp.label])
            k = int(rng.integers(1, len(tokens) + 1))
            expect = sorted(
                sorted(range(len(tokens)), key=lambda i: (-scores[i], i))[:k]
            )
            msg = X.explain_topk_gradient(probe, tokens, k)
            assert list(msg.positions) == expect

    def test_all_zero_embeddings_fall_back_to_earliest_positions(self):
        probe = LinearProbe(np.zeros((10, 4)), np.ones((4, 2)))
        msg = X.explain_topk_gradient(probe, [4, 5, 6, 7, 8], 3)
        assert msg.positions == (0, 1, 2)

    def test_runs_on_real_classifier(self, softmax_model, syn):
        model, _, _ = softmax_model
        ex = syn.test.examples[0]
        msg = X.explain_topk_gradient(model, ex, 3)
        assert_well_formed(msg, ex.tokens)
        assert len(msg.positions) == 3
        assert msg == X.explain_topk_gradient(model, ex, 3)

    def test_keyword_outranks_noise_on_trained_model(self, softmax_model, syn):
        model, _, _ = softmax_model
        keywords = {kw for kws in syn.keywords.values() for kw in kws}
        hits = 0
        for ex in syn.test.examples[:30]:
            msg = X.explain_topk_gradient(model, ex, 2)
            words = {syn.train.vocab.id_to_token[t] for t in msg.token_ids}
            hits += bool(words & keywords)
        assert hits >= 24


class TestTopkAttention:
    def test_exactly_one_forward(self, softmax_model, syn):
        model, _, _ = softmax_model
        counter = CountingClassifier(model)
        X.explain_topk_attention(counter, syn.test.examples[0], 3)
        assert counter.calls == 1

    def test_never_selects_zero_probability_positions(self, sparsemax_model, syn):
        model, _, _ = sparsemax_model
        for ex in syn.test.examples[:20]:
            support = set(model.forward(ex).attention.support.tolist())
            msg = X.explain_topk_attention(model, ex, len(ex.tokens))
            assert set(msg.positions) == support

    def test_subset_of_selective_support(self, sparsemax_model, syn):
        model, _, _ = sparsemax_model
        for ex in syn.test.examples[:20]:
            top = X.explain_topk_attention(model, ex, 2)
            sel = X.explain_selective(model, ex)
            assert set(top.positions) <= set(sel.positions)

    def test_ranked_by_probability_then_position(self, softmax_model, syn):
        model, _, _ = softmax_model
        ex = syn.test.examples[7]
        probs = model.forward(ex).attention.probs
        want = sorted(
            sorted(range(len(ex.tokens)), key=lambda p: (-probs[p], p))[:3]
        )
        msg = X.explain_topk_attention(model, ex, 3)
        assert list(msg.positions) == want


def stopword_fixture():
    # vocab built from text with stopwords; untrained model keeps costs nil
    train = Example("e0", [], [], 0)
    words = "the movie was a great and moving story for me".split()
    vocab = Vocabulary.build([words])
    tokens = vocab.encode(words)
    cfg = ModelConfig(
        vocab_size=len(vocab.id_to_token),
        n_classes=2,
        transform="sparsemax",
        emb_dim=8,
        hidden=4,
        attn_dim=4,
        seed=0,
    )
    model = AttentionClassifier(cfg)
    stop_ids = frozenset(np.flatnonzero(stopword_mask(vocab)).tolist())
    return model, vocab, tokens, words, stop_ids


class TestStopwordExclusion:
    def test_attention_messages_are_stopword_free(self):
        model, vocab, tokens, words, stop_ids = stopword_fixture()
        flagged = {w for w, f in zip(words, stopword_mask(vocab)[vocab.encode(words)]) if f}
        assert "the" in flagged and "movie" not in flagged
        for k in (2, 4, 20):
            msg = X.explain_topk_attention(model, tokens, k, stop_ids)
            assert not {vocab.id_to_token[t] for t in msg.token_ids} & flagged
        sel = X.explain_selective(model, tokens, stop_ids)
        chosen = {vocab.id_to_token[t] for t in sel.token_ids}
        assert not chosen & flagged
        assert chosen  # content words survive

    def test_without_stop_ids_nothing_is_masked(self):
        model, vocab, tokens, words, _ = stopword_fixture()
        sel = X.explain_selective(model, tokens)
        # untrained sparsemax over near-uniform scores keeps every position
        assert set(sel.positions) == set(range(len(tokens)))


class TestSelective:
    def test_rejects_softmax_head(self, softmax_model, syn):
        model, _, _ = softmax_model
        with pytest.raises(ConfigError, match="sparse"):
            X.explain_selective(model, syn.test.examples[0])

    def test_message_is_exactly_the_support(self, sparsemax_model, syn):
        model, _, _ = sparsemax_model
        strict = 0
        for ex in syn.test.examples[:30]:
            fp = model.forward(ex)
            msg = X.explain_selective(model, ex)
            assert set(msg.positions) == set(fp.attention.support.tolist())
            assert msg.k_requested is None
            strict += len(msg.positions) < len(ex.tokens)
        assert strict > 0  # sparsity is real on this model

    def test_deterministic(self, sparsemax_model, syn):
        model, _, _ = sparsemax_model
        ex = syn.test.examples[2]
        assert X.explain_selective(model, ex) == X.explain_selective(model, ex)


class TestHumanHighlights:
    def test_reads_mask_positions(self):
        ex = Example(
            "h1",
            ["a", "dog", "runs", "fast"],
            [4, 5, 6, 7],
            0,
            hypothesis_words=["it", "moves"],
            hypothesis_tokens=[8, 9],
            highlight=[False, True, False, True],
        )
        msg = X.explain_human_highlights(ex)
        assert msg.positions == (1, 3)
        assert msg.token_ids == {5, 7}
        assert msg.hypothesis == (8, 9)
        assert msg.k_requested is None

    def test_missing_mask_is_a_data_error(self):
        ex = Example("h2", ["a"], [4], 0)
        with pytest.raises(DataFormatError, match="h2"):
            X.explain_human_highlights(ex)

    def test_upstream_filter_drops_unmarked_and_neutral(self):
        mk = lambda i, label, hl: Example(f"x{i}", ["a"], [4], label, highlight=hl)
        pool = [mk(0, 0, [True]), mk(1, 1, [True]), mk(2, 2, [True]), mk(3, 0, None)]
        kept = X.highlight_examples(pool, neutral_label=1)
        assert [e.example_id for e in kept] == ["x0", "x2"]
        assert len(X.highlight_examples(pool)) == 3


@pytest.fixture(scope="module")
def trained_joint(softmax_model, syn, syn_dev):
    model, _, _ = softmax_model
    jc = X.JointConfig(
        vocab_size=len(syn.train.vocab.id_to_token),
        n_classes=2,
        classifier_state_dim=2 * model.cfg.hidden,
        emb_dim=12,
        hidden=6,
        attn_dim=6,
        ffn_dim=12,
        beta=0.5,
        seed=3,
    )
    explainer = X.JointExplainer(jc)
    lay = BowLayperson(LaypersonConfig(vocab_size=jc.vocab_size, n_classes=2, seed=4))
    train = X.prepare_joint_instances(model, syn.train.examples[:120])
    dev = X.prepare_joint_instances(model, syn_dev[:30])
    before = model.snapshot()
    log = X.train_joint(
        explainer, lay, train, dev, TrainConfig(epochs=3, lr=5e-3, seed=5), eval_k=2
    )
    return model, explainer, lay, dev, before, log


class TestJoint:
    def test_classifier_parameters_untouched(self, trained_joint):
        model, *_, before, _ = trained_joint
        after = model.snapshot()
        assert before.keys() == after.keys()
        for name in before:
            assert np.array_equal(before[name], after[name]), name

    def test_layperson_learns_to_read_messages(self, trained_joint):
        *_, log = trained_joint
        assert log[-1]["value"] >= 0.75
        assert log[-1]["metric"] == "csr"

    def test_faithfulness_gap_shrinks(self, softmax_model, syn, syn_dev, trained_joint):
        _, explainer, *_ = trained_joint
        model, _, _ = softmax_model
        fresh = X.JointExplainer(explainer.cfg)
        dev = X.prepare_joint_instances(model, syn_dev[:20])

        def mean_omega(exp):
            gaps = []
            for inst in dev:
                _, _, states, _ = exp.attention(inst.tokens, frozenset(), None)
                h_tilde = exp.faithfulness_vector(states)
                gaps.append(float(np.sum((h_tilde.value - inst.h_bar) ** 2)))
            return np.mean(gaps)

        assert mean_omega(explainer) < mean_omega(fresh)

    def test_extraction_deterministic_and_well_formed(self, trained_joint, syn):
        _, explainer, *_ = trained_joint
        for ex in syn.test.examples[:10]:
            a = X.extract_joint_message(explainer, ex, 2, y_hat=1, seed=7)
            b = X.extract_joint_message(explainer, ex, 2, y_hat=1, seed=7)
            assert a == b
            assert_well_formed(a, ex.tokens)
            assert len(a.positions) <= 2

    def test_access_coin_respects_beta_endpoints(self, syn):
        jc = X.JointConfig(
            vocab_size=len(syn.train.vocab.id_to_token),
            n_classes=2,
            classifier_state_dim=4,
            emb_dim=8,
            hidden=4,
            attn_dim=4,
            beta=0.0,
            seed=0,
        )
        never = X.JointExplainer(jc)
        never.label_emb.value[:] = 100.0  # access would visibly move attention
        ex = syn.test.examples[0]
        no_access, _, _, _ = never.attention(ex.tokens, frozenset(), None)
        for seed in range(5):
            msg = X.extract_joint_message(never, ex, 3, y_hat=1, seed=seed)
        probs_again, _, _, _ = never.attention(ex.tokens, frozenset(), None)
        assert np.array_equal(no_access.value, probs_again.value)

        import dataclasses

        always = X.JointExplainer(dataclasses.replace(jc, beta=1.0))
        always.label_emb.value[:] = 100.0
        with_access, _, _, _ = always.attention(ex.tokens, frozenset(), 1)
        msg = X.extract_joint_message(always, ex, len(ex.tokens), y_hat=1, seed=0)
        flat = np.zeros(len(ex.tokens))
        flat[[i for i, t in enumerate(ex.tokens) if t != PAD_ID]] = with_access.value[:, 0]
        assert set(msg.positions) == set(np.flatnonzero(flat > 0).tolist())

    def test_label_access_changes_attention(self, trained_joint, syn):
        _, explainer, *_ = trained_joint
        ex = syn.test.examples[4]
        p0, _, _, _ = explainer.attention(ex.tokens, frozenset(), 0)
        p_none, _, _, _ = explainer.attention(ex.tokens, frozenset(), None)
        assert not np.allclose(p0.value, p_none.value)

    def test_state_width_mismatch_rejected(self, softmax_model, syn, syn_dev):
        model, _, _ = softmax_model
        jc = X.JointConfig(
            vocab_size=len(syn.train.vocab.id_to_token),
            n_classes=2,
            classifier_state_dim=2 * model.cfg.hidden + 1,
            seed=0,
        )
        explainer = X.JointExplainer(jc)
        lay = BowLayperson(LaypersonConfig(vocab_size=jc.vocab_size, n_classes=2))
        train = X.prepare_joint_instances(model, syn.train.examples[:4])
        with pytest.raises(ConfigError, match="width"):
            X.train_joint(explainer, lay, train, [], TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ConfigError, match="beta"):
            X.JointConfig(vocab_size=5, n_classes=2, classifier_state_dim=4, beta=1.5)
        with pytest.raises(ConfigError, match="lambda"):
            X.JointConfig(vocab_size=5, n_classes=2, classifier_state_dim=4, lam=-1.0)

    def test_stopword_scores_are_blocked_in_training_path(self):
        model, vocab, tokens, words, stop_ids = stopword_fixture()
        jc = X.JointConfig(
            vocab_size=len(vocab.id_to_token),
            n_classes=2,
            classifier_state_dim=8,
            emb_dim=8,
            hidden=4,
            attn_dim=4,
            seed=1,
        )
        explainer = X.JointExplainer(jc)
        probs, dist, _, valid = explainer.attention(tokens, stop_ids, None)
        flags = stopword_mask(vocab)
        for j, pos in enumerate(valid):
            if flags[tokens[pos]]:
                assert dist.probs[j] == 0.0


class TestExplainerConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown"):
            X.ExplainerConfig("saliency", k=3)

    @pytest.mark.parametrize("kind", X.K_REQUIRED)
    def test_k_required(self, kind):
        with pytest.raises(ConfigError, match="requires k"):
            X.ExplainerConfig(kind)

    def test_selective_refuses_k(self):
        with pytest.raises(ConfigError, match="emergent"):
            X.ExplainerConfig("selective_attention", k=3)
        X.ExplainerConfig("selective_attention")  # fine without k

    def test_dispatch_produces_equivalent_messages(self, sparsemax_model, syn):
        model, _, _ = sparsemax_model
        ex = syn.test.examples[1]
        fn = X.make_explainer(
            X.ExplainerConfig("topk_attention", k=2), classifier=model, vocab=syn.train.vocab
        )
        assert fn(ex) == X.explain_topk_attention(model, ex, 2)

    def test_dispatch_requires_classifier(self):
        with pytest.raises(ConfigError, match="classifier"):
            X.make_explainer(X.ExplainerConfig("erasure", k=2))


class TestMessageInvariants:
    def test_thousand_draws_stay_well_formed(self, softmax_model, sparsemax_model, syn):
        soft, _, _ = softmax_model
        sparse, _, _ = sparsemax_model
        rng = np.random.default_rng(123)
        examples = syn.test.examples
        checked = 0
        for trial in range(320):
            ex = examples[int(rng.integers(len(examples)))]
            k = int(rng.integers(1, 9))
            for msg in (
                X.explain_random(ex, k, seed=trial),
                X.explain_topk_gradient(soft, ex, k) if trial % 5 == 0 else None,
                X.explain_topk_attention(sparse, ex, k),
                X.explain_selective(sparse, ex),
            ):
                if msg is None:
                    continue
                assert_well_formed(msg, ex.tokens)
                if msg.k_requested is not None:
                    assert len(msg.positions) <= msg.k_requested
                checked += 1
        assert checked >= 1000


class TestDeskScaleAgreement:
    def test_erasure_and_topk_attention_mostly_agree(self, softmax_model, syn_dev):
        model, _, _ = softmax_model
        scores = [
            jaccard(
                X.explain_erasure(model, ex, 3).token_ids,
                X.explain_topk_attention(model, ex, 3).token_ids,
            )
            for ex in syn_dev
        ]
        assert np.mean(scores) >= 0.5


class TestDump:
    def test_round_trip_and_schema(self, tmp_path, softmax_model, syn):
        model, _, _ = softmax_model
        vocab = syn.train.vocab
        examples = syn.test.examples[:5]
        messages = [X.explain_topk_attention(model, ex, 2) for ex in examples]
        y_hats = [model.classify(ex).label for ex in examples]
        path = tmp_path / "msgs.jsonl"
        X.dump_messages(str(path), examples, messages, y_hats, "topk_attention", vocab)
        records = X.load_messages(str(path))
        assert len(records) == 5
        for rec, ex, msg, y_hat in zip(records, examples, messages, y_hats):
            assert set(rec) == {"example_id", "explainer", "k", "message_tokens", "y_hat", "y"}
            assert rec["example_id"] == ex.example_id
            assert rec["explainer"] == "topk_attention"
            assert rec["k"] == 2
            assert rec["y_hat"] == y_hat
            assert rec["y"] == ex.gold_label
            assert rec["message_tokens"] == sorted(vocab.decode(sorted(msg.token_ids)))

    def test_hypothesis_field_only_for_nli(self, tmp_path):
        vocab = Vocabulary.build([["a", "dog", "it", "moves"]])
        ex = Example(
            "n1",
            ["a", "dog"],
            vocab.encode(["a", "dog"]),
            0,
            hypothesis_words=["it", "moves"],
            hypothesis_tokens=vocab.encode(["it", "moves"]),
        )
        msg = X.explain_random(ex, 1, seed=0)
        path = tmp_path / "nli.jsonl"
        X.dump_messages(str(path), [ex], [msg], [0], "random", vocab)
        (rec,) = X.load_messages(str(path))
        assert rec["hypothesis"] == ["it", "moves"]

    def test_misaligned_inputs_rejected(self, tmp_path, syn):
        with pytest.raises(ContractError):
            X.dump_messages(str(tmp_path / "x.jsonl"), syn.test.examples[:2], [], [], "random", syn.train.vocab)

    def test_bad_json_line_reported_with_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"ok": 1}\nnot json\n')
        with pytest.raises(DataFormatError, match="line 2"):
            X.load_messages(str(path))
