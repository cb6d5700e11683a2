"""Regenerate the frozen-weights golden records for encoder regression tests.

Run from the repository root:

    python tests/fixtures/regenerate_golden.py

Overwrites golden/ next to this file. Only rerun deliberately: the point of
the record is to catch unintended numeric drift.
"""

import json
from pathlib import Path

import torch

HERE = Path(__file__).parent


def main() -> None:
    from protomail.corpus import Email
    from protomail.encoders import EncoderConfig, GraphEncoder, MultiViewEncoder
    from protomail.parsing import DepEdge, DependencyGraph, Token, extract_subgraphs

    out = HERE / "golden"
    out.mkdir(exist_ok=True)
    config = EncoderConfig(
        d=32, vocab_size=512, pos_tag_vocab_size=16,
        max_document_tokens=64, max_sentence_tokens=24,
        text_layers=2, text_heads=4, graph_layers=2, graph_heads=4,
    )
    torch.manual_seed(1234)
    encoder = MultiViewEncoder(config)
    encoder.eval()
    torch.save(encoder.state_dict(), out / "encoder_weights.pt")

    graph = DependencyGraph(
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
    subgraph = extract_subgraphs(graph)[0]
    with torch.no_grad():
        vec, record = encoder.graph_encoder.encode_subgraph(subgraph)

    email = Email(
        id="golden-mail",
        subject="free pass update",
        body="Hi Anna . You can claim your free pass now . Best regards .",
        recipient_org="acme.com",
        interests=["logistics"],
    )
    parses = {("golden-mail", 0): graph}
    with torch.no_grad():
        mv = encoder.encode_views(email, parses)

    doc = {
        "config": {
            "d": config.d, "vocab_size": config.vocab_size,
            "pos_tag_vocab_size": config.pos_tag_vocab_size,
            "max_document_tokens": config.max_document_tokens,
            "max_sentence_tokens": config.max_sentence_tokens,
            "text_layers": config.text_layers, "text_heads": config.text_heads,
            "graph_layers": config.graph_layers, "graph_heads": config.graph_heads,
        },
        "subgraph_vector": [float(x) for x in vec],
        "subgraph_attention": record.scores if record else None,
        "multiview": {
            "e_d": [float(x) for x in mv.e_d],
            "e_s": [[float(x) for x in row] for row in mv.e_s],
            "e_p": [[float(x) for x in row] for row in mv.e_p],
        },
    }
    (out / "expected.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'encoder_weights.pt'} and {out / 'expected.json'}")


if __name__ == "__main__":
    main()
