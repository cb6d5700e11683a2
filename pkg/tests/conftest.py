import json
from pathlib import Path

import pytest
import torch

from protomail.corpus import LabeledEmail
from protomail.encoders import EncoderConfig
from protomail.protonet import ModelConfig, MultiViewPrototypeModel
from protomail.synthetic import GeneratorConfig, generate
from protomail.training import Hyperparams

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_encoder_config(**overrides) -> EncoderConfig:
    base = dict(
        d=32, vocab_size=512, pos_tag_vocab_size=16,
        max_document_tokens=64, max_sentence_tokens=24,
        text_layers=2, text_heads=4, graph_layers=2, graph_heads=4,
    )
    base.update(overrides)
    return EncoderConfig(**base)


def tiny_model(seed: int = 0, **config_overrides) -> MultiViewPrototypeModel:
    torch.manual_seed(seed)
    encoder = config_overrides.pop("encoder", tiny_encoder_config())
    config = ModelConfig(encoder=encoder, j=4, k=4, m=4, **config_overrides)
    return MultiViewPrototypeModel(config)


def fast_hyperparams(**overrides) -> Hyperparams:
    base = dict(epochs=3, batch_size=16, j=4, k=4, m=4, projection_period=2, seed=0)
    base.update(overrides)
    return Hyperparams(**base)


@pytest.fixture(scope="session")
def small_synth():
    """120 synthetic emails with parses; enough structure for pipeline tests."""
    emails, parses, table = generate(GeneratorConfig(n_emails=120, seed=7))
    return emails, parses, table


@pytest.fixture(scope="session")
def enron_fixture_expected() -> dict:
    return json.loads((FIXTURES / "enron_expected.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def enron_raw_dir() -> Path:
    return FIXTURES / "enron_raw"


@pytest.fixture(scope="session")
def trained_tiny(small_synth):
    """One trained + projected tiny model shared by explain/edit/service tests."""
    from protomail.corpus import balance_and_split
    from protomail.training import train

    emails, parses, _ = small_synth
    split = balance_and_split(emails, seed=0, ratios=(0.7, 0.15, 0.15))
    model = tiny_model(seed=0)
    hp = fast_hyperparams(epochs=12, learning_rate=2e-3, early_stopping_patience=12)
    model, history = train(model, split, hp, parses)
    return model, split, history, parses


def as_id_map(emails: list[LabeledEmail]) -> dict[str, LabeledEmail]:
    return {le.email.id: le for le in emails}
