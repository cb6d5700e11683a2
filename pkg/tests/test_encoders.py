import json

import pytest
import torch

from protomail.corpus import Email
from protomail.encoders import (
    CLS_TOKEN,
    SEP_TOKEN,
    EncoderConfig,
    EncoderError,
    HashVocab,
    MultiViewEncoder,
    TinyTextEncoder,
    compose_document_sequence,
    compose_sentence_sequence,
)
from protomail.parsing import DepEdge, DependencyGraph, PhraseSubgraph, Token, extract_subgraphs

from conftest import FIXTURES, tiny_encoder_config


def email_with(subject="a", body="b", org=None, interests=None):
    return Email(id="x", subject=subject, body=body, recipient_org=org, interests=interests)


class TestComposeDocumentSequence:
    def test_subject_and_body_only(self):
        seq = compose_document_sequence(email_with("a", "b"))
        assert seq == [CLS_TOKEN, "a", SEP_TOKEN, "b"]

    def test_all_four_segments_in_order(self):
        seq = compose_document_sequence(
            email_with("subj word", "body word", org="acme.com", interests=["logistics", "retail"])
        )
        assert seq == [
            CLS_TOKEN, "subj", "word",
            SEP_TOKEN, "body", "word",
            SEP_TOKEN, "acme", ".", "com",
            SEP_TOKEN, "logistics", "retail",
        ]

    def test_body_truncated_to_budget_with_subject_intact(self):
        body = " ".join(f"w{i}" for i in range(100))
        seq = compose_document_sequence(email_with("keep me", body, org="acme.com"), max_tokens=32)
        assert len(seq) == 32
        assert seq[1:3] == ["keep", "me"]
        assert seq.count(SEP_TOKEN) == 2  # body and org segments both survive

    def test_component_subset_excludes_segments(self):
        email = email_with("s", "c", org="o.com", interests=["e"])
        seq = compose_document_sequence(email, components="C")
        assert seq == [CLS_TOKEN, "c"]
        seq_sc = compose_document_sequence(email, components="SC")
        assert seq_sc == [CLS_TOKEN, "s", SEP_TOKEN, "c"]

    def test_unknown_interests_marker_included(self):
        seq = compose_document_sequence(email_with("s", "c", org="o.com", interests=["unknown"]))
        assert seq[-1] == "unknown"


class TestHashVocab:
    def test_specials_and_determinism(self):
        v = HashVocab(512, "salt")
        assert v.ids([CLS_TOKEN, SEP_TOKEN]) == [HashVocab.CLS, HashVocab.SEP]
        assert v.id("Hello") == v.id("hello")
        assert v.id("hello") == HashVocab(512, "salt").id("hello")
        assert v.id("hello") != HashVocab(512, "other-salt").id("hello")
        assert all(3 <= v.id(t) < 512 for t in ["alpha", "beta", "gamma"])


class TestTinyTextEncoder:
    def test_eval_determinism_and_dimension(self):
        torch.manual_seed(0)
        enc = TinyTextEncoder(tiny_encoder_config())
        enc.eval()
        seq = compose_sentence_sequence("the quick brown fox", 24)
        with torch.no_grad():
            a = enc.encode_sequences([seq])
            b = enc.encode_sequences([seq])
        assert a.shape == (1, 32)
        assert torch.equal(a, b)

    def test_distinct_sentences_distinct_vectors(self):
        torch.manual_seed(0)
        enc = TinyTextEncoder(tiny_encoder_config())
        enc.eval()
        with torch.no_grad():
            out = enc.encode_sequences(
                [compose_sentence_sequence("totally different words", 24),
                 compose_sentence_sequence("another unrelated sentence", 24)]
            )
        assert not torch.allclose(out[0], out[1])

    def test_padding_does_not_change_output(self):
        torch.manual_seed(0)
        enc = TinyTextEncoder(tiny_encoder_config())
        enc.eval()
        short = compose_sentence_sequence("short one", 24)
        long = compose_sentence_sequence("a much longer sentence with many tokens inside", 24)
        with torch.no_grad():
            alone = enc.encode_sequences([short])
            batched = enc.encode_sequences([short, long])
        assert torch.allclose(alone[0], batched[0], atol=1e-6)

    def test_empty_sequence_fails(self):
        enc = TinyTextEncoder(tiny_encoder_config())
        with pytest.raises(EncoderError):
            enc.encode_sequences([[]])
        with pytest.raises(EncoderError):
            enc.encode_sequences([])


def single_node_subgraph() -> PhraseSubgraph:
    return PhraseSubgraph(
        anchor_relation="fallback", tokens=[Token(0, "Ok", "INTJ")],
        edges=[], root_index=0, source=("m", 0),
    )


def free_pass_graph() -> DependencyGraph:
    return DependencyGraph(
        tokens=[
            Token(0, "register", "VERB"), Token(1, "for", "ADP"),
            Token(2, "your", "PRON"), Token(3, "free", "ADJ"), Token(4, "pass", "NOUN"),
        ],
        edges=[
            DepEdge(1, "case", 4), DepEdge(2, "det", 4),
            DepEdge(3, "amod", 4), DepEdge(4, "dobj", 0),
        ],
        root_index=0,
        source=("golden-mail", 0),
    )


class TestGraphEncoder:
    @pytest.mark.parametrize("kind", ["gcn-style", "gat-style"])
    def test_single_node_graph(self, kind):
        torch.manual_seed(0)
        enc = MultiViewEncoder(tiny_encoder_config(graph_encoder_kind=kind))
        enc.eval()
        with torch.no_grad():
            vec, record = enc.graph_encoder.encode_subgraph(single_node_subgraph())
        assert vec.shape == (32,)
        assert torch.isfinite(vec).all()
        if kind == "gat-style":
            assert record is not None and len(record.scores) == 1

    @pytest.mark.parametrize("kind", ["gcn-style", "gat-style"])
    def test_node_storage_order_invariance(self, kind):
        torch.manual_seed(0)
        enc = MultiViewEncoder(tiny_encoder_config(graph_encoder_kind=kind))
        enc.eval()
        sg = extract_subgraphs(free_pass_graph())[0]
        shuffled = PhraseSubgraph(
            anchor_relation=sg.anchor_relation,
            tokens=list(reversed(sg.tokens)),
            edges=list(reversed(sg.edges)),
            root_index=sg.root_index,
            source=sg.source,
        )
        with torch.no_grad():
            a, _ = enc.graph_encoder.encode_subgraph(sg)
            b, _ = enc.graph_encoder.encode_subgraph(shuffled)
        assert torch.equal(a, b)

    def test_attention_rows_sum_to_one_per_head(self):
        torch.manual_seed(0)
        enc = MultiViewEncoder(tiny_encoder_config(graph_encoder_kind="gat-style"))
        enc.eval()
        graphs = [free_pass_graph(), single_node_subgraph()]
        batch = enc.graph_encoder.graph_batch(graphs)
        with torch.no_grad():
            _, alpha = enc.graph_encoder(batch)
        sums = alpha.sum(dim=-1)  # [G, H, N]
        real = batch.node_mask.unsqueeze(1).expand_as(sums)
        assert torch.allclose(sums[real], torch.ones_like(sums[real]), atol=1e-6)

    def test_attention_record_covers_every_node_nonnegative(self):
        torch.manual_seed(0)
        enc = MultiViewEncoder(tiny_encoder_config(graph_encoder_kind="gat-style"))
        enc.eval()
        g = free_pass_graph()
        with torch.no_grad():
            _, record = enc.graph_encoder.encode_subgraph(g)
        assert record.node_indices == [t.index for t in g.tokens]
        assert all(s >= 0 for s in record.scores)

    def test_golden_subgraph_vector(self):
        doc = json.loads((FIXTURES / "golden" / "expected.json").read_text())
        config = EncoderConfig(**doc["config"])
        encoder = MultiViewEncoder(config)
        encoder.load_state_dict(torch.load(FIXTURES / "golden" / "encoder_weights.pt", weights_only=True))
        encoder.eval()
        sg = extract_subgraphs(free_pass_graph())[0]
        with torch.no_grad():
            vec, _ = encoder.graph_encoder.encode_subgraph(sg)
        expected = torch.tensor(doc["subgraph_vector"])
        assert torch.allclose(vec, expected, atol=1e-5)


class TestEncodeViews:
    def make_email_and_parses(self, small_synth):
        emails, parses, _ = small_synth
        three = next(le for le in emails if len(le.email.sentences) == 3)
        return three.email, parses

    def test_unit_counts(self, small_synth):
        torch.manual_seed(0)
        email, parses = self.make_email_and_parses(small_synth)
        enc = MultiViewEncoder(tiny_encoder_config())
        enc.eval()
        with torch.no_grad():
            mv = enc.encode_views(email, parses)
        n_subgraphs = sum(
            len(extract_subgraphs(parses[(email.id, i)])) for i in range(3)
        )
        assert mv.e_s.shape[0] == 3
        assert mv.e_p.shape[0] == n_subgraphs
        assert mv.e_d.shape == (32,)
        assert not mv.degraded_structural

    def test_unparsed_sentence_uses_fallback(self):
        torch.manual_seed(0)
        enc = MultiViewEncoder(tiny_encoder_config())
        enc.eval()
        email = Email(id="nope", subject="s", body="One sentence. Another one.")
        with torch.no_grad():
            mv = enc.encode_views(email, {})
        assert mv.degraded_structural
        assert mv.e_s.shape[0] == 2
        assert mv.e_p.shape[0] == 2  # one fallback subgraph per sentence
        assert all(ref[2] == "fallback" for ref in mv.phrase_refs)

    def test_golden_multiview(self):
        doc = json.loads((FIXTURES / "golden" / "expected.json").read_text())
        config = EncoderConfig(**doc["config"])
        encoder = MultiViewEncoder(config)
        encoder.load_state_dict(torch.load(FIXTURES / "golden" / "encoder_weights.pt", weights_only=True))
        encoder.eval()
        email = Email(
            id="golden-mail",
            subject="free pass update",
            body="Hi Anna . You can claim your free pass now . Best regards .",
            recipient_org="acme.com",
            interests=["logistics"],
        )
        parses = {("golden-mail", 0): free_pass_graph()}
        with torch.no_grad():
            mv = encoder.encode_views(email, parses)
        assert torch.allclose(mv.e_d, torch.tensor(doc["multiview"]["e_d"]), atol=1e-5)
        assert torch.allclose(mv.e_s, torch.tensor(doc["multiview"]["e_s"]), atol=1e-5)
        assert torch.allclose(mv.e_p, torch.tensor(doc["multiview"]["e_p"]), atol=1e-5)

    def test_dimensional_consistency(self, small_synth):
        torch.manual_seed(0)
        emails, parses, _ = small_synth
        enc = MultiViewEncoder(tiny_encoder_config())
        enc.eval()
        with torch.no_grad():
            mv = enc.encode_views(emails[3].email, parses)
        assert mv.e_d.shape[-1] == 32
        assert mv.e_s.shape[-1] == 32
        assert mv.e_p.shape[-1] == 32
        for t in (mv.e_d, mv.e_s, mv.e_p):
            assert torch.isfinite(t).all()


def test_config_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        EncoderConfig(d=0)
    with pytest.raises(ValueError):
        EncoderConfig(d=30, text_heads=4)
