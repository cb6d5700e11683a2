import copy

import pytest
import torch

from protomail.corpus import Email
from protomail.edits import (
    EditError,
    classify_positions,
    simulate_edits,
    suggest_edits,
)
from protomail.explain import attention_keyphrases
from protomail.encoders import AttentionRecord
from protomail.parsing import DepEdge, DependencyGraph, Token
from protomail.synthetic import NEGATIVE_TRIGGERS, POSITIVE_TRIGGERS

from conftest import as_id_map, tiny_model

POSITIVE_WORDS = {w for pair in POSITIVE_TRIGGERS for w in pair}
NEGATIVE_WORDS = {w for pair in NEGATIVE_TRIGGERS for w in pair}


class TestClassifyPositions:
    def test_greeting_main_closing(self):
        email = Email(id="x", subject="s", body="Hi Ann. Buy now. Regards.")
        spans = classify_positions(email)
        assert spans.opening.text == "Hi Ann."
        assert [s.text for s in spans.main] == ["Buy now."]
        assert spans.closing.text == "Regards."

    def test_single_sentence_is_main(self):
        email = Email(id="x", subject="s", body="Hi Ann.")
        spans = classify_positions(email)
        assert spans.opening is None and spans.closing is None
        assert [s.text for s in spans.main] == ["Hi Ann."]

    def test_empty_greeting_lexicon_disables_opening(self):
        email = Email(id="x", subject="s", body="Hi Ann. Buy now. Regards.")
        spans = classify_positions(email, greeting_lexicon=())
        assert spans.opening is None
        assert [s.text for s in spans.main] == ["Hi Ann.", "Buy now."]

    def test_subject_is_subject_field(self):
        email = Email(id="x", subject="the subject", body="One. Two.")
        assert classify_positions(email).subject == "the subject"


def predicted_negatives(model, split, parses, limit=5):
    out = []
    for le in split.test:
        if le.label != 0:
            continue
        _, label, _ = model.predict_proba(le.email, parses)
        if label == 0:
            out.append(le)
        if len(out) == limit:
            break
    return out


class TestSuggestEdits:
    def test_main_edit_injects_positive_trigger_and_raises_probability(self, trained_tiny):
        model, split, _, parses = trained_tiny
        sources = as_id_map(split.train)
        negatives = predicted_negatives(model, split, parses, limit=5)
        assert negatives, "synthetic split should contain predicted negatives"
        improved = 0
        for le in negatives:
            suggestions = suggest_edits(model, le.email, parses, "main", sources, seed=0)
            assert suggestions, f"no suggestion for {le.email.id}"
            top = suggestions[0]
            words = set(top.replacement.split())
            assert words & POSITIVE_WORDS, f"replacement {top.replacement!r} carries no positive trigger"
            if top.after_probability > top.before_probability:
                improved += 1
        assert improved >= len(negatives) - 1

    def test_edit_confines_changes_to_target_span(self, trained_tiny):
        model, split, _, parses = trained_tiny
        sources = as_id_map(split.train)
        le = predicted_negatives(model, split, parses, limit=1)[0]
        suggestions = suggest_edits(model, le.email, parses, "main", sources, seed=0)
        top = suggestions[0]
        original_sentences = le.email.sentences
        assert top.sentence_index >= 0
        edited_sentence = top.edited_text
        rebuilt = list(original_sentences)
        rebuilt[top.sentence_index] = edited_sentence
        new_body = le.email.body.replace(original_sentences[top.sentence_index], edited_sentence, 1)
        assert new_body == " ".join(rebuilt)  # synthetic bodies join sentences by spaces
        assert top.original_span in original_sentences[top.sentence_index]
        assert top.replacement in edited_sentence
        assert top.replacement != top.original_span

    def test_deterministic_under_seed_including_random_fallback(self, trained_tiny):
        model, split, _, parses = trained_tiny
        sources = as_id_map(split.train)
        le = predicted_negatives(model, split, parses, limit=1)[0]
        # threshold above 1 forces the random-prototype fallback branch
        runs = [
            [s.to_dict() for s in suggest_edits(
                model, le.email, parses, "main", sources, seed=11, topic_threshold=1.5)]
            for _ in range(2)
        ]
        assert runs[0] == runs[1]
        assert all(s["random_fallback"] for s in runs[0])

    def test_skips_when_prototype_phrase_already_present(self, trained_tiny):
        model, split, _, parses = trained_tiny
        sources = as_id_map(split.train)
        positive = next(le for le in split.test if le.label == 1)
        suggestions = suggest_edits(model, positive.email, parses, "main", sources, seed=0)
        for s in suggestions:
            assert s.replacement != s.original_span
            assert s.replacement not in positive.email.sentences[s.sentence_index]

    def test_missing_position_yields_no_suggestions(self, trained_tiny):
        model, split, _, parses = trained_tiny
        sources = as_id_map(split.train)
        email = Email(id="req", subject="note", body="We prepared the overdue invoice for you .")
        assert suggest_edits(model, email, {}, "closing", sources, seed=0) == []

    def test_unknown_position_rejected(self, trained_tiny):
        model, split, _, parses = trained_tiny
        with pytest.raises(EditError):
            suggest_edits(model, split.test[0].email, parses, "footer", {}, seed=0)

    def test_unprojected_model_rejected(self, small_synth):
        emails, parses, _ = small_synth
        model = tiny_model(seed=0)
        with pytest.raises(EditError, match="project"):
            suggest_edits(model, emails[0].email, parses, "main", {}, seed=0)

    def test_replacement_drawn_from_topic_matched_positive_prototype(self, trained_tiny):
        model, split, _, parses = trained_tiny
        sources = as_id_map(split.train)
        le = predicted_negatives(model, split, parses, limit=1)[0]
        suggestions = suggest_edits(model, le.email, parses, "main", sources, seed=0)
        top = suggestions[0]
        source = sources[top.source_id]
        assert source.label == 1
        assert top.replacement in source.email.body


def test_paper_style_substitution_roundtrip():
    """'register for your free pass' gains material from the positive
    prototype sentence 'get your free pass before the offer expires'."""
    proto_graph = DependencyGraph(
        tokens=[
            Token(0, "get", "VERB"), Token(1, "your", "PRON"), Token(2, "free", "ADJ"),
            Token(3, "pass", "NOUN"), Token(4, "before", "SCONJ"), Token(5, "the", "DET"),
            Token(6, "offer", "NOUN"), Token(7, "expires", "VERB"),
        ],
        edges=[
            DepEdge(1, "det", 3), DepEdge(2, "amod", 3), DepEdge(3, "dobj", 0),
            DepEdge(4, "mark", 7), DepEdge(5, "det", 6), DepEdge(6, "nsubj", 7),
            DepEdge(7, "advcl", 0),
        ],
        root_index=0,
    )
    # attention peaking on "offer" extracts the prototype keyphrase
    proto_kp = attention_keyphrases(
        proto_graph,
        AttentionRecord(node_indices=list(range(8)), scores=[0.1, 0.1, 0.1, 0.4, 0.1, 0.2, 2.0, 0.3]),
    )
    assert proto_kp.phrase == "the offer expires" or proto_kp.phrase == "the offer"
    input_sentence = "register for your free pass"
    input_graph = DependencyGraph(
        tokens=[
            Token(0, "register", "VERB"), Token(1, "for", "ADP"), Token(2, "your", "PRON"),
            Token(3, "free", "ADJ"), Token(4, "pass", "NOUN"),
        ],
        edges=[DepEdge(1, "case", 4), DepEdge(2, "det", 4), DepEdge(3, "amod", 4), DepEdge(4, "dobj", 0)],
        root_index=0,
    )
    input_kp = attention_keyphrases(
        input_graph, AttentionRecord(node_indices=list(range(5)), scores=[0.1, 0.1, 0.3, 0.4, 1.5])
    )
    edited = input_sentence.replace(input_kp.phrase, proto_kp.phrase, 1)
    assert edited != input_sentence
    assert proto_kp.phrase in edited


class TestSimulateEdits:
    def make_constant_model(self, trained_tiny, positive: bool):
        model = copy.deepcopy(trained_tiny[0])
        with torch.no_grad():
            model.head.linear.weight.zero_()
            bias = [ -8.0, 8.0] if positive else [8.0, -8.0]
            model.head.linear.bias.copy_(torch.tensor(bias))
        return model

    def test_constant_negative_model_all_ratios_zero(self, trained_tiny):
        _, split, _, parses = trained_tiny
        model = self.make_constant_model(trained_tiny, positive=False)
        sources = as_id_map(split.train)
        report = simulate_edits(model, split.test[:10], parses, ["main", "closing"], [0, 1], sources)
        for row in report.positions.values():
            assert row["mean"] == 0.0

    def test_zero_negatives_marks_zero_denominator(self, trained_tiny):
        _, split, _, parses = trained_tiny
        model = self.make_constant_model(trained_tiny, positive=True)
        sources = as_id_map(split.train)
        report = simulate_edits(model, split.test[:10], parses, ["main"], [0], sources)
        assert report.zero_denominator
        assert report.n_negatives == 0

    def test_main_flips_at_least_as_often_as_closing(self, trained_tiny):
        model, split, _, parses = trained_tiny
        sources = as_id_map(split.train)
        report = simulate_edits(model, split.test, parses, ["main", "closing"], [0, 1], sources)
        assert report.n_negatives > 0
        assert report.positions["main"]["mean"] >= report.positions["closing"]["mean"]
        text = report.render_text()
        assert "main" in text and "closing" in text
