import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protomail.parsing import (
    DepEdge,
    DependencyGraph,
    ParseError,
    Token,
    dump_parses,
    extract_subgraphs,
    fallback_graph,
    load_parses,
    load_parses_text,
    sentence_segment,
    sentences_for,
    tokenize,
)

from conftest import FIXTURES


def sam_eats_apples() -> DependencyGraph:
    return DependencyGraph(
        tokens=[Token(0, "Sam", "PROPN"), Token(1, "eats", "VERB"), Token(2, "apples", "NOUN")],
        edges=[DepEdge(0, "nsubj", 1), DepEdge(2, "dobj", 1)],
        root_index=1,
        source=("mail-1", 0),
    )


class TestLoadParses:
    def test_single_sentence_block(self):
        text = (
            "# email_id = m1\n# sent_index = 0\n"
            "1\tSam\tNOUN\t2\tnsubj\n2\teats\tVERB\t0\troot\n3\tapples\tNOUN\t2\tdobj\n"
        )
        parses = load_parses_text(text)
        assert set(parses) == {("m1", 0)}
        g = parses[("m1", 0)]
        assert g.tokens[g.root_index].form == "eats"
        assert {(e.dependent, e.relation, e.governor) for e in g.edges} == {(0, "nsubj", 1), (2, "dobj", 1)}

    def test_two_governors_rejected(self, caplog):
        text = (
            "# email_id = m1\n# sent_index = 0\n"
            "1\ta\tX\t2\tdep\n1\ta\tX\t2\tdep\n2\tb\tX\t0\troot\n"
        )
        assert load_parses_text(text) == {}
        assert "dropping parse block" in caplog.text

    def test_cycle_rejected(self, caplog):
        text = "1\ta\tX\t2\tdep\n2\tb\tX\t1\tdep\n3\tc\tX\t0\troot\n"
        assert load_parses_text(text) == {}
        assert "dropping" in caplog.text

    def test_multi_root_rejected(self, caplog):
        text = "1\ta\tX\t0\troot\n2\tb\tX\t0\troot\n"
        assert load_parses_text(text) == {}

    def test_unknown_email_id_dropped(self, caplog):
        text = "# email_id = ghost\n# sent_index = 0\n1\ta\tX\t0\troot\n"
        assert load_parses_text(text, known_ids={"real"}) == {}
        assert "unknown email id" in caplog.text

    def test_fixture_file_matches_hand_checked_graphs(self):
        parses = load_parses(FIXTURES / "enron_parses.conllu")
        g = parses[("allen-p/sent/1", 0)]
        assert [t.form for t in g.tokens] == ["Here", "is", "our", "forecast", "for", "next", "quarter", "."]
        assert g.tokens[g.root_index].form == "forecast"
        g2 = parses[("ward-k/inbox/9", 0)]
        assert g2.tokens[g2.root_index].form == "attached"
        nsubj = [e for e in g2.edges if e.relation == "nsubj"]
        assert len(nsubj) == 1 and g2.tokens[nsubj[0].dependent].form == "update"

    def test_dump_roundtrip(self):
        g = sam_eats_apples()
        parses = {g.source: g}
        again = load_parses_text(dump_parses(parses))
        assert again[g.source].edges == g.edges
        assert again[g.source].tokens == g.tokens

    def test_tree_property_on_accepted_graphs(self):
        parses = load_parses(FIXTURES / "enron_parses.conllu")
        for g in parses.values():
            assert len(g.edges) == len(g.tokens) - 1


class TestExtractSubgraphs:
    def test_nsubj_and_dobj_subgraphs(self):
        subs = extract_subgraphs(sam_eats_apples())
        by_anchor = {s.anchor_relation: s for s in subs}
        assert set(by_anchor) == {"nsubj", "dobj"}
        assert [t.form for t in by_anchor["nsubj"].tokens] == ["Sam", "eats"]
        assert [t.form for t in by_anchor["dobj"].tokens] == ["eats", "apples"]

    def test_dobj_subgraph_carries_modifiers(self):
        # "register for your free pass" parsed with pass as dobj of register
        g = DependencyGraph(
            tokens=[
                Token(0, "register", "VERB"), Token(1, "for", "ADP"),
                Token(2, "your", "PRON"), Token(3, "free", "ADJ"), Token(4, "pass", "NOUN"),
            ],
            edges=[
                DepEdge(1, "case", 4), DepEdge(2, "det", 4),
                DepEdge(3, "amod", 4), DepEdge(4, "dobj", 0),
            ],
            root_index=0,
        )
        subs = extract_subgraphs(g)
        assert len(subs) == 1
        assert subs[0].anchor_relation == "dobj"
        assert subs[0].surface_text == "register for your free pass"
        member_forms = {t.form for t in subs[0].tokens}
        assert {"pass", "your", "free"} <= member_forms

    def test_fallback_for_anchorless_sentence(self):
        g = DependencyGraph(
            tokens=[Token(0, "Thanks", "NOUN"), Token(1, "again", "ADV")],
            edges=[DepEdge(1, "advmod", 0)],
            root_index=0,
        )
        subs = extract_subgraphs(g)
        assert len(subs) == 1
        assert subs[0].anchor_relation == "fallback"
        assert [t.form for t in subs[0].tokens] == ["Thanks", "again"]

    def test_root_only_fallback(self):
        g = DependencyGraph(tokens=[Token(0, "Ok", "INTJ")], edges=[], root_index=0)
        subs = extract_subgraphs(g)
        assert len(subs) == 1
        assert [t.form for t in subs[0].tokens] == ["Ok"]

    def test_subgraph_closure_under_subtree(self):
        g = sam_eats_apples()
        for sg in extract_subgraphs(g):
            nodes = set(sg.node_indices)
            for e in g.edges:
                # every dependent of an included non-root node must be included
                if e.governor in nodes and e.governor != g.root_index:
                    assert e.dependent in nodes

    def test_every_sentence_yields_a_subgraph(self, small_synth):
        _, parses, _ = small_synth
        for g in parses.values():
            assert len(extract_subgraphs(g)) >= 1

    def test_induced_edges_only_connect_members(self, small_synth):
        _, parses, _ = small_synth
        for g in parses.values():
            for sg in extract_subgraphs(g):
                nodes = set(sg.node_indices)
                for e in sg.edges:
                    assert e.dependent in nodes and e.governor in nodes


class TestSentenceSegment:
    def test_basic_split(self):
        assert sentence_segment("Hi. Thanks!") == ["Hi.", "Thanks!"]

    def test_single_sentence_without_terminal(self):
        assert sentence_segment("no punctuation here") == ["no punctuation here"]

    def test_abbreviation_suppresses_split(self):
        assert sentence_segment("See e.g. this example") == ["See e.g. this example"]
        # even with a capital after the abbreviation
        assert sentence_segment("Contact Dr. Smith today") == ["Contact Dr. Smith today"]

    def test_paragraph_break_splits(self):
        got = sentence_segment("first paragraph\n\nsecond paragraph")
        assert got == ["first paragraph", "second paragraph"]

    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=300))
    @settings(max_examples=80, deadline=None)
    def test_concatenation_preserves_text(self, body):
        sentences = sentence_segment(body)
        collapse = lambda s: re.sub(r"\s+", " ", s).strip()
        assert collapse(" ".join(sentences)) == collapse(body)


class TestFallbackGraph:
    def test_flat_structure(self):
        g = fallback_graph("quick note here", "m", 2)
        g.validate()
        assert g.root_index == 0
        assert len(g.edges) == len(g.tokens) - 1
        subs = extract_subgraphs(g)
        assert subs[0].anchor_relation == "fallback"
        assert subs[0].surface_text == "quick note here"

    def test_empty_sentence_placeholder(self):
        g = fallback_graph("   ", "m", 0)
        assert len(g.tokens) == 1


class TestSentencesFor:
    def test_parse_boundaries_win(self, small_synth):
        emails, parses, _ = small_synth
        le = emails[0]
        sentences = sentences_for(le.email.id, le.email.body, parses)
        assert sentences == le.email.sentences

    def test_segmenter_used_without_parses(self):
        assert sentences_for("x", "One. Two.", {}) == ["One.", "Two."]


def test_tokenize_words_and_punctuation():
    assert tokenize("Don't stop; it's fine.") == ["Don't", "stop", ";", "it's", "fine", "."]
