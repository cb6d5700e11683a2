"""Synthetic marketing-style corpus with class-correlated trigger phrases.

Every email is assembled from templated sentences with hand-specified
dependency parses. Positive emails carry one of the POSITIVE_TRIGGERS
adjective+noun pairs in their main content (and usually the subject);
negative emails carry a NEGATIVE_TRIGGERS pair. Greetings and closings are
class-neutral. Because the label is *caused* by the planted phrase, the
corpus doubles as a ground-truth oracle: a model that learns it is learnable
at desk scale, and replacing a negative trigger phrase with a positive one
must raise the predicted response probability.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import Email, EnrichmentTable, LabeledEmail, write_generic_corpus
from .parsing import DepEdge, DependencyGraph, Token, dump_parses

POSITIVE_TRIGGERS = [
    ("free", "pass"),
    ("bonus", "upgrade"),
    ("exclusive", "offer"),
    ("instant", "discount"),
    ("priority", "invite"),
]

NEGATIVE_TRIGGERS = [
    ("overdue", "invoice"),
    ("mandatory", "audit"),
    ("pending", "paperwork"),
    ("outstanding", "balance"),
    ("routine", "maintenance"),
]

_NAMES = ["Anna", "Ben", "Carla", "Dev", "Elena", "Frank", "Grace", "Hana"]
_ORGS = ["acme.com", "globex.com", "initech.com", "umbrella.org", "stark.net"]
_SUBJECT_TAILS = ["update", "reminder", "note"]
_NEUTRAL_SUBJECTS = ["quick note", "weekly update", "follow up"]

DEFAULT_INTERESTS = {
    "acme.com": ["logistics", "shipping"],
    "globex.com": ["finance"],
    "initech.com": ["software", "it services"],
    "umbrella.org": ["pharma"],
    "stark.net": ["defense", "energy"],
}

# Sentence templates: (form, upos, head 1-based with 0 = root, deprel).
_GREETINGS = [
    lambda name: [("Hi", "INTJ", 0, "root"), (name, "PROPN", 1, "vocative"), (".", "PUNCT", 1, "punct")],
    lambda name: [("Hello", "INTJ", 0, "root"), (name, "PROPN", 1, "vocative"), (",", "PUNCT", 1, "punct")],
    lambda name: [("Dear", "ADJ", 2, "amod"), ("team", "NOUN", 0, "root"), (",", "PUNCT", 2, "punct")],
]

_CLOSINGS = [
    [("Best", "ADJ", 2, "amod"), ("regards", "NOUN", 0, "root"), (".", "PUNCT", 2, "punct")],
    [("Kind", "ADJ", 2, "amod"), ("regards", "NOUN", 0, "root"), (".", "PUNCT", 2, "punct")],
    [("Thanks", "NOUN", 0, "root"), ("again", "ADV", 1, "advmod"), (".", "PUNCT", 1, "punct")],
]

# Main-content templates keep the trigger pair as the only noun phrase, so
# position-level keyphrase extraction has an unambiguous target.
_MAINS = [
    lambda adj, noun: [
        ("You", "PRON", 3, "nsubj"), ("can", "AUX", 3, "aux"), ("claim", "VERB", 0, "root"),
        ("your", "PRON", 6, "det"), (adj, "ADJ", 6, "amod"), (noun, "NOUN", 3, "dobj"),
        ("now", "ADV", 3, "advmod"), (".", "PUNCT", 3, "punct"),
    ],
    lambda adj, noun: [
        ("We", "PRON", 3, "nsubj"), ("will", "AUX", 3, "aux"), ("send", "VERB", 0, "root"),
        ("the", "DET", 6, "det"), (adj, "ADJ", 6, "amod"), (noun, "NOUN", 3, "dobj"),
        ("shortly", "ADV", 3, "advmod"), (".", "PUNCT", 3, "punct"),
    ],
    lambda adj, noun: [
        ("We", "PRON", 2, "nsubj"), ("prepared", "VERB", 0, "root"),
        ("the", "DET", 5, "det"), (adj, "ADJ", 5, "amod"), (noun, "NOUN", 2, "dobj"),
        ("for", "ADP", 7, "case"), ("you", "PRON", 2, "obl"), (".", "PUNCT", 2, "punct"),
    ],
]


@dataclass
class GeneratorConfig:
    n_emails: int = 2000
    positive_fraction: float = 0.5
    seed: int = 0
    greeting_prob: float = 0.85
    closing_prob: float = 0.85
    second_main_prob: float = 0.25
    trigger_subject_prob: float = 0.7
    org_prob: float = 0.8


def _graph(rows: list[tuple[str, str, int, str]], email_id: str, sent_index: int) -> DependencyGraph:
    tokens = [Token(i, form, upos) for i, (form, upos, _, _) in enumerate(rows)]
    root = next(i for i, (_, _, head, _) in enumerate(rows) if head == 0)
    edges = [DepEdge(i, rel, head - 1) for i, (_, _, head, rel) in enumerate(rows) if head != 0]
    return DependencyGraph(tokens=tokens, edges=edges, root_index=root, source=(email_id, sent_index))


def generate(
    config: GeneratorConfig = GeneratorConfig(),
) -> tuple[list[LabeledEmail], dict[tuple[str, int], DependencyGraph], EnrichmentTable]:
    """Build the corpus, its parse map, and the interest table."""
    rng = random.Random(config.seed)
    emails: list[LabeledEmail] = []
    parses: dict[tuple[str, int], DependencyGraph] = {}
    n_pos = round(config.n_emails * config.positive_fraction)
    labels = [1] * n_pos + [0] * (config.n_emails - n_pos)
    rng.shuffle(labels)
    for i, label in enumerate(labels):
        email_id = f"synth-{i:06d}"
        triggers = POSITIVE_TRIGGERS if label == 1 else NEGATIVE_TRIGGERS
        adj, noun = rng.choice(triggers)
        if rng.random() < config.trigger_subject_prob:
            subject = f"{adj} {noun} {rng.choice(_SUBJECT_TAILS)}"
        else:
            subject = rng.choice(_NEUTRAL_SUBJECTS)
        rows_per_sentence: list[list[tuple[str, str, int, str]]] = []
        if rng.random() < config.greeting_prob:
            rows_per_sentence.append(rng.choice(_GREETINGS)(rng.choice(_NAMES)))
        rows_per_sentence.append(rng.choice(_MAINS)(adj, noun))
        if rng.random() < config.second_main_prob:
            adj2, noun2 = rng.choice(triggers)
            rows_per_sentence.append(rng.choice(_MAINS)(adj2, noun2))
        if rng.random() < config.closing_prob:
            rows_per_sentence.append(rng.choice(_CLOSINGS))
        sentences = []
        for si, rows in enumerate(rows_per_sentence):
            g = _graph(rows, email_id, si)
            parses[(email_id, si)] = g
            sentences.append(g.text)
        org = rng.choice(_ORGS) if rng.random() < config.org_prob else None
        mail = Email(
            id=email_id, subject=subject, body=" ".join(sentences),
            recipient_org=org, sentences=list(sentences),
        )
        emails.append(LabeledEmail(email=mail, label=label, source_corpus="generic"))
    return emails, parses, EnrichmentTable.from_mapping(DEFAULT_INTERESTS)


def write_dataset(out_dir: str | Path, config: GeneratorConfig = GeneratorConfig()) -> Path:
    """Materialize corpus.jsonl, parses.conllu, and interests.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emails, parses, table = generate(config)
    write_generic_corpus(emails, out / "corpus.jsonl")
    (out / "parses.conllu").write_text(dump_parses(parses), encoding="utf-8")
    import json

    (out / "interests.json").write_text(
        json.dumps(table.interests, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out
