"""Prototype-driven edit suggestions and the batch flip-ratio simulation.

Edits target four email positions: subject, opening sentence, main content,
and closing sentence. A suggestion replaces the position's top-1
keyword/keyphrase with the keyphrase found at the same position of a
positive-class document prototype's source email, preferring prototypes
whose projected document embedding shares the input's topic (cosine above a
threshold) and falling back to a seeded random positive prototype.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import Email, LabeledEmail
from .explain import Keyphrase, sentence_keyphrase, subject_keyphrase
from .parsing import DependencyGraph, sentences_for
from .protonet import MultiViewPrototypeModel

log = logging.getLogger(__name__)

POSITIONS = ("subject", "opening", "main", "closing")

GREETING_LEXICON = (
    "hi", "hello", "dear", "hey", "greetings", "good morning",
    "good afternoon", "good evening", "hope you",
)
SIGNOFF_LEXICON = (
    "best regards", "kind regards", "warm regards", "regards", "best wishes",
    "best", "thanks", "thank you", "cheers", "sincerely", "yours", "many thanks",
)


class EditError(RuntimeError):
    pass


@dataclass
class Span:
    sentence_index: int
    text: str


@dataclass
class PositionSpans:
    subject: str
    opening: Span | None
    main: list[Span]
    closing: Span | None

    def spans_for(self, position: str) -> list[Span]:
        if position == "opening":
            return [self.opening] if self.opening else []
        if position == "closing":
            return [self.closing] if self.closing else []
        if position == "main":
            return list(self.main)
        raise EditError(f"unknown body position {position!r}")


def classify_positions(
    email: Email,
    sentences: Sequence[str] | None = None,
    greeting_lexicon: Sequence[str] = GREETING_LEXICON,
    signoff_lexicon: Sequence[str] = SIGNOFF_LEXICON,
) -> PositionSpans:
    """Split an email into subject/opening/main/closing spans.

    The opening is the first body sentence when it matches the greeting
    lexicon (and the body has more than one sentence); the closing is the
    last sentence when it matches the sign-off lexicon; everything else is
    main content.
    """
    if sentences is None:
        sentences = email.sentences or sentences_for(email.id, email.body, {})
    opening = closing = None
    used: set[int] = set()
    if len(sentences) >= 2 and _matches(sentences[0], greeting_lexicon):
        opening = Span(0, sentences[0])
        used.add(0)
    last = len(sentences) - 1
    if last not in used and len(sentences) >= 2 and _matches(sentences[last], signoff_lexicon):
        closing = Span(last, sentences[last])
        used.add(last)
    main = [Span(i, s) for i, s in enumerate(sentences) if i not in used]
    return PositionSpans(subject=email.subject, opening=opening, main=main, closing=closing)


def _matches(sentence: str, lexicon: Sequence[str]) -> bool:
    lowered = sentence.strip().lower()
    return any(lowered.startswith(entry) for entry in lexicon)


@dataclass
class EditSuggestion:
    position: str
    sentence_index: int  # -1 for the subject
    original_span: str  # the keyphrase being replaced
    replacement: str  # the prototype keyphrase
    edited_text: str  # full new subject or sentence
    prototype_index: int
    source_id: str
    source_text: str
    before_probability: float
    after_probability: float
    topic_match: float
    random_fallback: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _positive_document_prototypes(model: MultiViewPrototypeModel) -> list[int]:
    if "document" not in model.banks:
        raise EditError("edit suggestions need document prototypes")
    bank = model.banks["document"]
    if not bank.is_projected():
        raise EditError("prototype banks are not projected; project before suggesting edits")
    out = [i for i in range(bank.count) if int(bank.class_of[i]) == 1]
    if not out:
        raise EditError("no positive-class prototypes available")
    return out


def _select_prototypes(
    model: MultiViewPrototypeModel,
    e_d: torch.Tensor,
    threshold: float,
    rng: random.Random,
    max_candidates: int,
) -> tuple[list[int], list[float], bool]:
    """Topic-matched positive prototypes, else one random positive prototype."""
    bank = model.banks["document"]
    positives = _positive_document_prototypes(model)
    vecs = bank.vectors.detach()[positives]
    e = e_d / e_d.norm().clamp(min=1e-12)
    v = vecs / vecs.norm(dim=1, keepdim=True).clamp(min=1e-12)
    cosine_of = dict(zip(positives, (v @ e).tolist()))
    matched = sorted((i for i in positives if cosine_of[i] >= threshold), key=lambda i: -cosine_of[i])
    if matched:
        chosen = matched[:max_candidates]
        return chosen, [cosine_of[i] for i in chosen], False
    pick = rng.choice(positives)
    return [pick], [cosine_of[pick]], True


def _position_keyphrase(
    model: MultiViewPrototypeModel,
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    spans: PositionSpans,
    position: str,
) -> tuple[int, Keyphrase] | None:
    """(sentence index, keyphrase) of the strongest span at a position."""
    if position == "subject":
        kp = subject_keyphrase(model, email, parses)
        return (-1, kp) if kp else None
    best: tuple[int, Keyphrase] | None = None
    for span in spans.spans_for(position):
        kp = sentence_keyphrase(model, email, parses, span.sentence_index, span.text)
        if best is None or kp.score > best[1].score:
            best = (span.sentence_index, kp)
    return best


def _with_sentences(email: Email, parses: Mapping[tuple[str, int], DependencyGraph]) -> Email:
    if email.sentences:
        return email
    return dataclasses.replace(email, sentences=sentences_for(email.id, email.body, dict(parses)))


def _apply_edit(
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    sent_index: int,
    old_phrase: str,
    new_phrase: str,
) -> tuple[Email, dict[tuple[str, int], DependencyGraph], str] | None:
    """Rewrite one span; returns (email, parse overlay, edited text) or None.

    The edited sentence loses its precomputed parse (a fallback subgraph
    takes over); every other position is untouched byte for byte.
    """
    if sent_index == -1:
        if old_phrase == email.subject:
            new_subject = new_phrase
        else:
            at = email.subject.find(old_phrase)
            if at < 0:
                return None
            new_subject = email.subject[:at] + new_phrase + email.subject[at + len(old_phrase):]
        edited = dataclasses.replace(email, subject=new_subject)
        return edited, dict(parses), new_subject
    sentences = list(email.sentences)
    old_sentence = sentences[sent_index]
    at = old_sentence.find(old_phrase)
    if at < 0:
        return None
    new_sentence = old_sentence[:at] + new_phrase + old_sentence[at + len(old_phrase):]
    body_at = email.body.find(old_sentence)
    if body_at < 0:
        return None
    new_body = email.body[:body_at] + new_sentence + email.body[body_at + len(old_sentence):]
    sentences[sent_index] = new_sentence
    overlay = {k: g for k, g in parses.items() if not (k[0] == email.id and k[1] == sent_index)}
    edited = dataclasses.replace(email, body=new_body, sentences=sentences)
    return edited, overlay, new_sentence


def suggest_edits(
    model: MultiViewPrototypeModel,
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    position: str,
    sources: Mapping[str, LabeledEmail],
    seed: int = 0,
    topic_threshold: float = 0.5,
    max_suggestions: int = 3,
    greeting_lexicon: Sequence[str] = GREETING_LEXICON,
    signoff_lexicon: Sequence[str] = SIGNOFF_LEXICON,
) -> list[EditSuggestion]:
    """Prototype-based substitutions for one position, best edit first.

    ``sources`` maps email ids to the training emails referenced by the
    projected document prototypes. Suggestions whose replacement would equal
    the original span are skipped, as are prototypes whose source email has
    no counterpart at the requested position.
    """
    if position not in POSITIONS:
        raise EditError(f"unknown position {position!r}; expected one of {POSITIONS}")
    rng = random.Random(seed)
    email = _with_sentences(email, parses)
    before_prob, _, _ = model.predict_proba(email, parses)
    item, out = model.analyze_email(email, parses)
    e_d = out.unit_embeddings["document"][0].detach().clone()
    chosen, cosines, fallback = _select_prototypes(model, e_d, topic_threshold, rng, max_suggestions)
    spans = classify_positions(email, email.sentences, greeting_lexicon, signoff_lexicon)
    target = _position_keyphrase(model, email, parses, spans, position)
    if target is None:
        return []
    sent_index, input_kp = target
    bank = model.banks["document"]
    suggestions: list[EditSuggestion] = []
    seen_replacements: set[str] = set()
    for proto_idx, cosine in zip(chosen, cosines):
        proj = bank.projection[proto_idx]
        source = sources.get(proj.source_id)
        if source is None:
            log.warning("prototype %d source %r not available; skipping", proto_idx, proj.source_id)
            continue
        src_email = _with_sentences(source.email, parses)
        src_spans = classify_positions(src_email, src_email.sentences, greeting_lexicon, signoff_lexicon)
        src_target = _position_keyphrase(model, src_email, parses, src_spans, position)
        if src_target is None:
            continue
        replacement = src_target[1].phrase
        original = input_kp.phrase
        if replacement == original or replacement in seen_replacements:
            continue
        container = email.subject if sent_index == -1 else email.sentences[sent_index]
        if replacement in container:
            continue
        seen_replacements.add(replacement)
        applied = _apply_edit(email, parses, sent_index, original, replacement)
        if applied is None:
            log.warning("could not locate span %r in email %s; skipping", original, email.id)
            continue
        edited, overlay, edited_text = applied
        after_prob, _, _ = model.predict_proba(edited, overlay)
        suggestions.append(
            EditSuggestion(
                position=position,
                sentence_index=sent_index,
                original_span=original,
                replacement=replacement,
                edited_text=edited_text,
                prototype_index=proto_idx,
                source_id=proj.source_id,
                source_text=proj.surface_text,
                before_probability=before_prob,
                after_probability=after_prob,
                topic_match=float(cosine),
                random_fallback=fallback,
            )
        )
    suggestions.sort(key=lambda s: -s.after_probability)
    return suggestions


# ---------------------------------------------------------------------------
# Batch flip-ratio simulation
# ---------------------------------------------------------------------------

@dataclass
class EditSimulationReport:
    n_negatives: int
    positions: dict[str, dict]  # position -> {per_seed, mean, sd, flipped, edited}
    zero_denominator: bool = False

    def to_dict(self) -> dict:
        return {
            "n_negatives": self.n_negatives,
            "zero_denominator": self.zero_denominator,
            "positions": self.positions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_text(self) -> str:
        lines = ["editing position   flip ratio (mean +/- SD over seeds)"]
        if self.zero_denominator:
            lines.append("(no predicted-negative emails: ratios undefined)")
        for pos, row in self.positions.items():
            lines.append(f"{pos.ljust(18)} {row['mean']:.4f} +/- {row['sd']:.4f}  {row['per_seed']}")
        return "\n".join(lines) + "\n"


def simulate_edits(
    model: MultiViewPrototypeModel,
    emails: Sequence[LabeledEmail],
    parses: Mapping[tuple[str, int], DependencyGraph],
    positions: Sequence[str],
    seeds: Sequence[int],
    sources: Mapping[str, LabeledEmail],
    topic_threshold: float = 0.5,
) -> EditSimulationReport:
    """Apply the best suggestion to every predicted-negative email and count flips.

    The flip ratio is the fraction of predicted negatives whose re-predicted
    label turns positive, reported per position as mean +/- SD across seeds.
    """
    negatives = []
    for le in emails:
        email = _with_sentences(le.email, parses)
        prob, label, _ = model.predict_proba(email, parses)
        if label == 0:
            negatives.append(email)
    if not negatives:
        return EditSimulationReport(
            n_negatives=0,
            positions={p: {"per_seed": [], "mean": 0.0, "sd": 0.0, "flipped": 0, "edited": 0} for p in positions},
            zero_denominator=True,
        )
    report: dict[str, dict] = {}
    for position in positions:
        per_seed = []
        flipped_total = 0
        edited_total = 0
        for seed in seeds:
            flipped = 0
            edited = 0
            for email in negatives:
                suggestions = suggest_edits(
                    model, email, parses, position, sources,
                    seed=seed, topic_threshold=topic_threshold, max_suggestions=1,
                )
                if not suggestions:
                    continue
                edited += 1
                if suggestions[0].after_probability > 0.5:
                    flipped += 1
            per_seed.append(flipped / len(negatives))
            flipped_total += flipped
            edited_total += edited
        arr = np.asarray(per_seed)
        report[position] = {
            "per_seed": [round(float(x), 6) for x in per_seed],
            "mean": float(arr.mean()),
            "sd": float(arr.std(ddof=1)) if len(per_seed) > 1 else 0.0,
            "flipped": flipped_total,
            "edited": edited_total,
        }
    return EditSimulationReport(n_negatives=len(negatives), positions=report)
