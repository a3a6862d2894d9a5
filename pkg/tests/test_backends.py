"""Table and n-gram backends, request privacy, perplexity scoring."""

import math

import numpy as np
import pytest

from cogen.backends import (
    ConditioningInput,
    ContextBundle,
    NGramBackend,
    Role,
    TableBackend,
    perplexity,
    train_ngram,
)
from cogen.errors import InvalidConfigError, InvalidInputError, PrivacyContractError
from cogen.tokenizer import build_vocab


class TestConditioningInput:
    def test_context_blocked_for_large_cloud(self):
        ctx = ContextBundle(profile="secret profile text")
        with pytest.raises(PrivacyContractError):
            ConditioningInput("do things", (), ctx, Role.LARGE_CLOUD)

    def test_context_allowed_for_small_device(self):
        ctx = ContextBundle(profile="secret profile text")
        request = ConditioningInput("do things", (), ctx, Role.SMALL_DEVICE)
        assert request.context is ctx

    def test_empty_context_allowed_everywhere(self):
        request = ConditioningInput("do things", (), ContextBundle(), Role.LARGE_CLOUD)
        assert request.context.is_empty()

    def test_waiver_is_explicit(self):
        ctx = ContextBundle(profile="secret profile text")
        request = ConditioningInput(
            "do things", (), ctx, Role.LARGE_CLOUD, context_upload_waiver=True
        )
        assert request.context_upload_waiver


class TestTableBackend:
    def test_rule_lookup(self, abc_vocab):
        backend = TableBackend(abc_vocab, Role.SMALL_DEVICE, rules={("A",): {"B": 1.0}})
        dist = backend.next_distribution(ConditioningInput("x", (0,)))
        assert dist.dense_probs[abc_vocab.id_of("B")] == 1.0

    def test_path_automaton_ends_in_eos(self, abc_vocab):
        backend = TableBackend.from_path(abc_vocab, Role.SMALL_DEVICE, ["A", "B"])
        d0 = backend.next_distribution(ConditioningInput("x", ()))
        d2 = backend.next_distribution(ConditioningInput("x", (0, 1)))
        assert d0.top1()[0] == abc_vocab.id_of("A")
        assert d2.top1()[0] == abc_vocab.eos_id

    def test_keyed_rules_select_by_instruction(self, abc_vocab):
        backend = TableBackend(
            abc_vocab,
            Role.SMALL_DEVICE,
            rules=TableBackend.path_rules(abc_vocab, ["A"]),
            keyed=[("magic words", TableBackend.path_rules(abc_vocab, ["D"]))],
        )
        plain = backend.next_distribution(ConditioningInput("nothing here", ()))
        keyed = backend.next_distribution(ConditioningInput("the magic words appear", ()))
        assert plain.top1()[0] == abc_vocab.id_of("A")
        assert keyed.top1()[0] == abc_vocab.id_of("D")

    def test_large_cloud_table_rejects_context(self, abc_vocab):
        backend = TableBackend.from_path(abc_vocab, Role.LARGE_CLOUD, ["A"])
        request = ConditioningInput("x", (), ContextBundle(profile="p" * 20), Role.SMALL_DEVICE)
        with pytest.raises(PrivacyContractError):
            backend.next_distribution(request)

    def test_invalid_prefix_id(self, abc_vocab):
        backend = TableBackend.from_path(abc_vocab, Role.SMALL_DEVICE, ["A"])
        with pytest.raises(InvalidInputError):
            backend.next_distribution(ConditioningInput("x", (99,)))


class TestTrainNGram:
    def test_direct_count(self):
        model = train_ngram(["x x x"], n=2, alpha=1.0, append_eos=False)
        x = model.vocab.id_of("x")
        assert model.counts[(x,)][x] == 2

    def test_retraining_is_byte_identical(self):
        corpus = ["a b a b a c", "b c a"]
        m1 = train_ngram(corpus, n=2, alpha=0.5)
        m2 = train_ngram(corpus, n=2, alpha=0.5)
        assert m1.to_bytes() == m2.to_bytes()

    def test_smoothed_conditional_matches_hand_count(self):
        # bigrams of "a b a b a c": (a,b) x2, (b,a) x2, (a,c) x1, then the
        # appended end marker gives (c,</s>) x1; vocab is {a, b, c} + markers
        model = train_ngram(["a b a b a c"], n=2, alpha=1.0)
        vocab = model.vocab
        a, b = vocab.id_of("a"), vocab.id_of("b")
        dist = model.conditional([a])
        expected = (2 + 1.0) / (3 + vocab.size * 1.0)
        assert dist[b] == pytest.approx(expected, abs=1e-12)
        assert dist.sum() == pytest.approx(1.0, abs=1e-9)

    def test_unseen_history_is_uniform(self):
        model = train_ngram(["a b"], n=2, alpha=1.0)
        c = model.vocab.id_of("<unk>")
        dist = model.conditional([c])
        assert np.allclose(dist, 1.0 / model.vocab.size)

    def test_conditionals_normalize_for_every_history(self):
        model = train_ngram(["a b a c b b a", "c c a"], n=3, alpha=0.25)
        for h1 in range(model.vocab.size):
            for h2 in range(model.vocab.size):
                assert model.conditional([h1, h2]).sum() == pytest.approx(1.0, abs=1e-9)

    def test_rejects_empty_corpus(self):
        with pytest.raises(InvalidInputError):
            train_ngram([], n=2, alpha=1.0)
        with pytest.raises(InvalidInputError):
            train_ngram(["   "], n=2, alpha=1.0)

    def test_rejects_bad_hyperparameters(self):
        with pytest.raises(InvalidConfigError):
            train_ngram(["a b"], n=0, alpha=1.0)
        with pytest.raises(InvalidConfigError):
            train_ngram(["a b"], n=2, alpha=0.0)


class TestNGramBackend:
    def test_context_changes_prediction(self):
        vocab = build_vocab(["alpha beta", "alpha gamma"])
        model = train_ngram(["alpha beta"], n=2, alpha=0.1, vocab=vocab)
        backend = NGramBackend(model, Role.SMALL_DEVICE)
        plain = backend.next_distribution(ConditioningInput("alpha", ()))
        assert plain.top1()[0] == vocab.id_of("beta")

    def test_referential_transparency(self, world0, world0_backends):
        llm, _ = world0_backends
        record = world0.test_records[0]
        request = ConditioningInput(record.general_task, (1, 2), None, Role.LARGE_CLOUD)
        d1 = llm.next_distribution(request)
        d2 = llm.next_distribution(request)
        assert np.array_equal(d1.dense_probs, d2.dense_probs)


class TestPerplexity:
    def test_certain_path_scores_one(self, abc_vocab):
        backend = TableBackend.from_path(abc_vocab, Role.SMALL_DEVICE, ["A", "B", "C"])
        ids = [abc_vocab.id_of(t) for t in ("A", "B", "C")]
        assert perplexity(backend, ids) == pytest.approx(1.0)

    def test_uniform_backend_scores_vocab_size(self, abc_vocab):
        uniform = {tok: 1.0 for tok in abc_vocab.tokens}
        backend = TableBackend.constant(abc_vocab, Role.SMALL_DEVICE, uniform)
        ids = [abc_vocab.id_of(t) for t in ("A", "B", "C", "D")]
        assert perplexity(backend, ids) == pytest.approx(abc_vocab.size)

    def test_ngram_value_matches_hand_arithmetic(self):
        model = train_ngram(["a b a b a c"], n=2, alpha=1.0)
        vocab = model.vocab
        backend = NGramBackend(model, Role.SMALL_DEVICE)
        a, b = vocab.id_of("a"), vocab.id_of("b")
        v = vocab.size
        # position 1: empty history (unigram fallback over empty key -> uniform);
        # position 2: p(b | a) from the smoothed table
        p1 = model.conditional([])[a]
        p2 = (2 + 1.0) / (3 + v * 1.0)
        expected = math.exp(-(math.log(p1) + math.log(p2)) / 2)
        assert perplexity(backend, [a, b]) == pytest.approx(expected, rel=1e-12)

    def test_zero_probability_reports_infinity(self, abc_vocab):
        backend = TableBackend.from_path(abc_vocab, Role.SMALL_DEVICE, ["A"])
        ids = [abc_vocab.id_of("D")]
        assert perplexity(backend, ids) == math.inf

    def test_own_user_history_beats_other_users(self, world0, world0_backends):
        # a context model trained on the right user scores that user's
        # held-out reference better than one trained on someone else's text
        _, slms = world0_backends
        tok = world0.tokenizer
        record = world0.test_records[0]
        other = next(r for r in world0.test_records if r.user_id != record.user_id)
        ids = tok.tokenize(record.reference)
        own = perplexity(slms[record.user_id], ids, instruction=record.task,
                         context=record.context_bundle())
        foreign = perplexity(slms[other.user_id], ids, instruction=record.task,
                             context=record.context_bundle())
        assert own < foreign
