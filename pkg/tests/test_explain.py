import math

import pytest
import torch

from protomail.encoders import AttentionRecord
from protomail.explain import (
    AttributionError,
    ExplainError,
    attention_keyphrases,
    document_token_attributions,
    explain,
    integrated_gradients,
    sentence_token_attributions,
)
from protomail.parsing import DepEdge, DependencyGraph, Token

from conftest import tiny_model


def sam_eats_red_apples() -> DependencyGraph:
    return DependencyGraph(
        tokens=[
            Token(0, "Sam", "PROPN"), Token(1, "eats", "VERB"),
            Token(2, "red", "ADJ"), Token(3, "apples", "NOUN"),
        ],
        edges=[DepEdge(0, "nsubj", 1), DepEdge(2, "amod", 3), DepEdge(3, "dobj", 1)],
        root_index=1,
    )


class TestExplain:
    def test_unprojected_model_fails_with_instruction(self, small_synth):
        emails, parses, _ = small_synth
        model = tiny_model(seed=0)
        with pytest.raises(ExplainError, match="project"):
            explain(model, emails[0].email, parses)

    def test_prototype_source_ranks_first_with_max_score(self, trained_tiny):
        model, split, _, parses = trained_tiny
        proj = model.banks["document"].projection[0]
        source = next(le for le in split.train if le.email.id == proj.source_id)
        report = explain(model, source.email, parses, top_n=3)
        top = report.evidence["document"][0]
        assert top.source_id == source.email.id
        assert abs(top.similarity - math.log(1e4)) < 1e-3  # zero-distance score
        assert report.probabilities[0] + report.probabilities[1] == pytest.approx(1.0)

    def test_top_n_larger_than_bank_returns_full_bank(self, trained_tiny):
        model, split, _, parses = trained_tiny
        report = explain(model, split.test[0].email, parses, top_n=99)
        for g, bank in model.banks.items():
            assert len(report.evidence[g]) == bank.count

    def test_ranking_equals_brute_force_sort(self, trained_tiny):
        model, split, _, parses = trained_tiny
        email = split.test[1].email
        report = explain(model, email, parses, top_n=4)
        _, out = model.analyze_email(email, parses)
        for g in model.banks:
            if g == "document":
                scores = out.sims[g][0]
            else:
                scores = out.unit_sims[g].max(dim=0).values
            expected = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))[:4]
            got = [e.prototype_index for e in report.evidence[g]]
            assert got == expected

    def test_similarity_vector_fidelity_bit_identical(self, trained_tiny):
        model, split, _, parses = trained_tiny
        email = split.test[2].email
        report = explain(model, email, parses)
        _, out = model.analyze_email(email, parses)
        for g in model.banks:
            assert report.similarity_vector[g] == [float(x) for x in out.sims[g][0]]
            for e in report.evidence[g]:
                assert e.mean_similarity == float(out.sims[g][0][e.prototype_index])

    def test_every_cited_prototype_has_provenance(self, trained_tiny):
        model, split, _, parses = trained_tiny
        report = explain(model, split.test[3].email, parses)
        for rows in report.evidence.values():
            assert all(e.source_id for e in rows)
            similarities = [e.similarity for e in rows]
            assert similarities == sorted(similarities, reverse=True)

    def test_render_text_mentions_prediction_and_sources(self, trained_tiny):
        model, split, _, parses = trained_tiny
        report = explain(model, split.test[0].email, parses)
        text = report.render_text()
        assert "prediction:" in text
        assert "document prototypes" in text
        assert "source" in text


class TestIntegratedGradients:
    def test_linear_function_closed_form(self):
        weights = torch.tensor([[2.0], [3.0]], dtype=torch.float64)

        def score_fn(points):
            return (points * weights).sum(dim=(1, 2))

        inputs = torch.ones(2, 1, dtype=torch.float64)
        baseline = torch.zeros(2, 1, dtype=torch.float64)
        attr = integrated_gradients(score_fn, inputs, baseline, steps=7)
        assert attr.token_scores == pytest.approx([2.0, 3.0], abs=1e-12)
        assert sum(attr.token_scores) == pytest.approx(attr.score_input - attr.score_baseline)

    def test_input_equal_baseline_zero_attributions(self):
        def score_fn(points):
            return points.pow(2).sum(dim=(1, 2))

        x = torch.full((3, 2), 0.7, dtype=torch.float64)
        attr = integrated_gradients(score_fn, x, x.clone(), steps=4)
        assert attr.token_scores == [0.0, 0.0, 0.0]

    def test_completeness_on_nonlinear_toy(self):
        torch.manual_seed(0)
        w1 = torch.randn(6, 8, dtype=torch.float64)
        w2 = torch.randn(8, dtype=torch.float64)

        def score_fn(points):
            h = torch.tanh(points.reshape(points.shape[0], -1) @ w1)
            return h @ w2

        inputs = torch.randn(3, 2, dtype=torch.float64)
        baseline = torch.zeros(3, 2, dtype=torch.float64)
        span = None
        gaps = {}
        for steps in (16, 128):
            attr = integrated_gradients(score_fn, inputs, baseline, steps=steps)
            span = abs(attr.score_input - attr.score_baseline)
            gaps[steps] = attr.completeness_gap()
        assert gaps[128] <= 0.01 * span
        assert gaps[16] <= 0.05 * span
        assert gaps[128] <= gaps[16] + 1e-12

    def test_validations(self):
        score = lambda p: p.sum(dim=(1, 2))
        with pytest.raises(AttributionError):
            integrated_gradients(score, torch.ones(2, 2), torch.zeros(3, 2), steps=4)
        with pytest.raises(AttributionError):
            integrated_gradients(score, torch.ones(2, 2), torch.zeros(2, 2), steps=0)

    def test_model_document_attribution_completeness(self, trained_tiny):
        model, split, _, parses = trained_tiny
        email = split.test[0].email
        attr, tokens = document_token_attributions(model, email, parses, steps=128)
        assert len(attr.token_scores) == len(tokens)
        span = abs(attr.score_input - attr.score_baseline)
        assert attr.completeness_gap() <= 0.01 * max(span, 1e-9)

    def test_model_sentence_attribution_completeness(self, trained_tiny):
        model, split, _, parses = trained_tiny
        email = split.test[0].email
        attr, seq = sentence_token_attributions(model, email, parses, sent_index=0, steps=128)
        assert len(attr.token_scores) == len(seq)
        span = abs(attr.score_input - attr.score_baseline)
        assert attr.completeness_gap() <= 0.01 * max(span, 1e-9)


class TestAttentionKeyphrases:
    def test_noun_with_modifiers(self):
        g = sam_eats_red_apples()
        attention = AttentionRecord(node_indices=[0, 1, 2, 3], scores=[0.5, 0.2, 0.1, 2.0])
        kp = attention_keyphrases(g, attention)
        assert kp.keyword == "apples"
        assert kp.phrase == "red apples"

    def test_single_token_sentence(self):
        g = DependencyGraph(tokens=[Token(0, "Thanks", "NOUN")], edges=[], root_index=0)
        kp = attention_keyphrases(g, AttentionRecord(node_indices=[0], scores=[1.0]))
        assert kp.keyword == "Thanks" and kp.phrase == "Thanks"

    def test_all_verb_sentence_uses_attribution_fallback(self):
        g = DependencyGraph(
            tokens=[Token(0, "Go", "VERB"), Token(1, "run", "VERB"), Token(2, "jump", "VERB")],
            edges=[DepEdge(1, "conj", 0), DepEdge(2, "conj", 0)],
            root_index=0,
        )
        attention = AttentionRecord(node_indices=[0, 1, 2], scores=[9.0, 1.0, 1.0])
        kp = attention_keyphrases(g, attention, attribution=[0.0, 5.0, 1.0])
        assert kp.keyword == "run"  # attribution outranks attention on the fallback path

    def test_attention_tie_broken_by_attribution_then_index(self):
        g = DependencyGraph(
            tokens=[Token(0, "cats", "NOUN"), Token(1, "and", "CCONJ"), Token(2, "dogs", "NOUN")],
            edges=[DepEdge(1, "cc", 2), DepEdge(2, "conj", 0)],
            root_index=0,
        )
        attention = AttentionRecord(node_indices=[0, 1, 2], scores=[1.0, 0.0, 1.0])
        kp = attention_keyphrases(g, attention, attribution=[0.1, 0.0, 0.9])
        assert kp.keyword == "dogs"
        tie = attention_keyphrases(g, attention, attribution=None)
        assert tie.keyword == "cats"  # lowest index wins the full tie

    def test_keyphrase_containment_property(self, small_synth):
        _, parses, _ = small_synth
        for key in list(parses)[:40]:
            g = parses[key]
            n = len(g.tokens)
            attention = AttentionRecord(node_indices=list(range(n)), scores=[1.0] * n)
            kp = attention_keyphrases(g, attention)
            assert kp.keyword_index in kp.phrase_indices
            assert kp.phrase_indices == list(range(min(kp.phrase_indices), max(kp.phrase_indices) + 1))
