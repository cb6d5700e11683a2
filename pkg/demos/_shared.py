"""Shared helpers for the demo scripts: a small trained checkpoint on demand."""

from pathlib import Path

from protomail.corpus import balance_and_split, load_generic_corpus
from protomail.encoders import EncoderConfig
from protomail.parsing import load_parses
from protomail.protonet import load_checkpoint
from protomail.synthetic import GeneratorConfig, write_dataset
from protomail.training import Hyperparams, run_training

OUTPUT = Path(__file__).parent / "output"

DEMO_ENCODER = EncoderConfig(
    d=32, vocab_size=512, pos_tag_vocab_size=16,
    max_document_tokens=64, max_sentence_tokens=24,
)

DEMO_HP = Hyperparams(
    epochs=10, batch_size=32, learning_rate=2e-3, j=6, k=6, m=6,
    projection_period=2, early_stopping_patience=6, seed=0,
)


def ensure_demo_dataset() -> Path:
    data = OUTPUT / "data"
    if not (data / "corpus.jsonl").exists():
        write_dataset(data, GeneratorConfig(n_emails=400, seed=0))
    return data


def ensure_demo_checkpoint():
    """Train once on the small synthetic corpus; reuse on later runs."""
    data = ensure_demo_dataset()
    run_dir = OUTPUT / "run"
    checkpoint = run_dir / "checkpoint"
    if not (checkpoint / "weights.pt").exists():
        corpus = load_generic_corpus(data / "corpus.jsonl")
        parses = load_parses(data / "parses.conllu")
        run_training(corpus, parses, DEMO_HP, run_dir, encoder=DEMO_ENCODER)
    bundle = load_checkpoint(checkpoint)
    corpus = load_generic_corpus(data / "corpus.jsonl")
    parses = load_parses(data / "parses.conllu")
    return bundle, corpus, parses


def demo_split(corpus, seed=0):
    return balance_and_split(corpus, seed=seed)
