"""Prototype-based explanations, integrated gradients, keyphrase extraction.

An explanation ranks document prototypes by their similarity to the input
document and sentence/phrase prototypes by their best-matching unit,
including the matched unit's text and the projected training example behind
every cited prototype. The ``mean_similarity`` fields reproduce the model's
internal aggregated similarity scores exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import torch
from torch import Tensor

from .corpus import Email
from .encoders import AttentionRecord, compose_sentence_sequence
from .parsing import DependencyGraph, fallback_graph, tokenize
from .protonet import ModelOutput, MultiViewPrototypeModel, PreparedEmail, Projection

log = logging.getLogger(__name__)

NOUN_TAGS = ("NOUN", "PROPN")
MODIFIER_RELATIONS = ("amod", "compound", "det", "nummod")


class ExplainError(RuntimeError):
    pass


class AttributionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Explanation reports
# ---------------------------------------------------------------------------

@dataclass
class PrototypeEvidence:
    prototype_index: int
    class_label: int
    similarity: float  # ranking score: best-matching unit (document: direct)
    mean_similarity: float  # the model-internal aggregated score
    contribution: float  # head weight x fused value, for the predicted class
    matched_unit_index: int | None
    matched_unit_text: str | None
    source_id: str
    source_unit_index: int
    source_text: str
    source_distance: float


@dataclass
class ExplanationReport:
    email_id: str
    predicted_label: int
    probabilities: list[float]  # [p(no response), p(response)]
    evidence: dict[str, list[PrototypeEvidence]]  # granularity -> ranked top-N
    similarity_vector: dict[str, list[float]]  # full model-internal scores
    structural_degraded: bool

    def to_dict(self) -> dict:
        return {
            "email_id": self.email_id,
            "predicted_label": self.predicted_label,
            "probabilities": self.probabilities,
            "structural_degraded": self.structural_degraded,
            "similarity_vector": self.similarity_vector,
            "evidence": {
                g: [vars(e) for e in items] for g, items in self.evidence.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_text(self) -> str:
        label = "response" if self.predicted_label == 1 else "no response"
        lines = [
            f"input: {self.email_id}",
            f"prediction: {label} (p(response) = {self.probabilities[1]:.4f})",
        ]
        if self.structural_degraded:
            lines.append("note: structural view degraded (fallback subgraphs in use)")
        for g, items in self.evidence.items():
            lines.append("")
            lines.append(f"-- {g} prototypes --")
            for e in items:
                cls = "response" if e.class_label == 1 else "no response"
                lines.append(
                    f"  [#{e.prototype_index} | {cls}] similarity {e.similarity:.4f} "
                    f"contribution {e.contribution:+.4f}"
                )
                if e.matched_unit_text is not None and g != "document":
                    lines.append(f"    matches input unit {e.matched_unit_index}: {e.matched_unit_text}")
                lines.append(f"    source {e.source_id}[{e.source_unit_index}]: {_one_line(e.source_text)}")
        return "\n".join(lines) + "\n"


def _one_line(text: str, limit: int = 160) -> str:
    flat = " ".join(text.split())
    return flat if len(flat) <= limit else flat[: limit - 3] + "..."


def explain(
    model: MultiViewPrototypeModel,
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    top_n: int = 3,
) -> ExplanationReport:
    """Build the ranked prototype-evidence report for one email."""
    if not model.banks:
        raise ExplainError("model has no prototype layer; nothing to explain")
    if not model.is_projected():
        raise ExplainError("prototype banks are not projected; run projection before explaining")
    item, out = model.analyze_email(email, parses)
    probs = [float(out.probs[0, 0]), float(out.probs[0, 1])]
    predicted = int(out.probs[0].argmax())
    offsets: dict[str, int] = {}
    offset = 0
    for g in model.config.active_granularities():
        offsets[g] = offset
        offset += model.banks[g].count
    evidence: dict[str, list[PrototypeEvidence]] = {}
    similarity_vector: dict[str, list[float]] = {}
    weight = model.head.linear.weight.detach()  # [2, F]
    for g, bank in model.banks.items():
        mean_sims = out.sims[g][0]
        similarity_vector[g] = [float(x) for x in mean_sims]
        unit_sims = out.unit_sims[g]  # [Nu, count]
        if g == "document":
            ranking = mean_sims
            matched_idx = [None] * bank.count
            matched_text = [None] * bank.count
        elif unit_sims.shape[0] == 0:
            ranking = torch.zeros_like(mean_sims)
            matched_idx = [None] * bank.count
            matched_text = [None] * bank.count
        else:
            best_vals, best_idx = unit_sims.max(dim=0)
            ranking = best_vals
            unit_texts = (
                [s for s in item.sentences] if g == "sentence"
                else [sg.surface_text for sg in item.subgraphs]
            )
            matched_idx = [int(i) for i in best_idx]
            matched_text = [unit_texts[i] for i in matched_idx]
        rows = []
        for i in range(bank.count):
            proj: Projection = bank.projection[i]
            pos = offsets[g] + i
            rows.append(
                PrototypeEvidence(
                    prototype_index=i,
                    class_label=int(bank.class_of[i]),
                    similarity=float(ranking[i]),
                    mean_similarity=float(mean_sims[i]),
                    contribution=float(weight[predicted, pos] * out.fused[0, pos]),
                    matched_unit_index=matched_idx[i],
                    matched_unit_text=matched_text[i],
                    source_id=proj.source_id,
                    source_unit_index=proj.unit_index,
                    source_text=proj.surface_text,
                    source_distance=proj.distance,
                )
            )
        rows.sort(key=lambda e: (-e.similarity, e.prototype_index))
        evidence[g] = rows[: min(top_n, bank.count)]
    return ExplanationReport(
        email_id=email.id,
        predicted_label=predicted,
        probabilities=probs,
        evidence=evidence,
        similarity_vector=similarity_vector,
        structural_degraded=item.degraded_structural,
    )


# ---------------------------------------------------------------------------
# Integrated gradients
# ---------------------------------------------------------------------------

@dataclass
class Attribution:
    """Per-token importance along a straight-line path from a baseline."""

    token_scores: list[float]
    matrix: Tensor  # [L, d] per-dimension attributions
    steps: int
    score_input: float
    score_baseline: float
    baseline_description: str = "all-padding embedding sequence"

    def completeness_gap(self) -> float:
        return abs(sum(self.token_scores) - (self.score_input - self.score_baseline))


def integrated_gradients(
    score_fn: Callable[[Tensor], Tensor],
    inputs: Tensor,
    baseline: Tensor,
    steps: int = 50,
    baseline_description: str = "all-padding embedding sequence",
) -> Attribution:
    """Midpoint-rule integrated gradients of a batched scalar score.

    ``score_fn`` maps [B, *inputs.shape] to [B]. The attribution is
    (inputs - baseline) times the mean gradient over the midpoint grid
    alpha_k = (k + 0.5) / steps; a token's score sums its embedding
    dimensions.
    """
    if steps < 1:
        raise AttributionError("steps must be >= 1")
    if baseline.shape != inputs.shape:
        raise AttributionError(f"baseline shape {tuple(baseline.shape)} != input shape {tuple(inputs.shape)}")
    inputs = inputs.detach()
    baseline = baseline.detach()
    alphas = (torch.arange(steps, dtype=inputs.dtype) + 0.5) / steps
    shape_ones = (1,) * inputs.dim()
    points = baseline.unsqueeze(0) + alphas.view(-1, *shape_ones) * (inputs - baseline).unsqueeze(0)
    points = points.clone().requires_grad_(True)
    scores = score_fn(points)
    if scores.shape != (steps,):
        raise AttributionError(f"score_fn must return one scalar per path point, got {tuple(scores.shape)}")
    grads = torch.autograd.grad(scores.sum(), points)[0]
    if not torch.isfinite(grads).all():
        raise AttributionError("non-finite gradients along the integration path")
    avg_grad = grads.mean(dim=0)
    matrix = (inputs - baseline) * avg_grad
    with torch.no_grad():
        ends = score_fn(torch.stack([inputs, baseline]))
    token_scores = matrix.sum(dim=-1)
    return Attribution(
        token_scores=[float(x) for x in token_scores],
        matrix=matrix.detach(),
        steps=steps,
        score_input=float(ends[0]),
        score_baseline=float(ends[1]),
        baseline_description=baseline_description,
    )


def _fixed_similarity_parts(
    model: MultiViewPrototypeModel, out: ModelOutput, vary: str
) -> dict[str, Tensor]:
    """Aggregated per-granularity scores that stay constant while ``vary`` changes."""
    parts = {}
    for g in model.config.active_granularities():
        if g != vary:
            parts[g] = out.sims[g][0].detach()
    return parts


def _positive_logit_fn(
    model: MultiViewPrototypeModel, fixed: dict[str, Tensor], vary: str, n_units_vary: int,
    fixed_unit_sims: Tensor | None = None,
) -> Callable[[Tensor], Tensor]:
    """Positive-class logit as a function of one granularity's embeddings.

    The varying granularity's aggregated score is recomputed from the
    supplied embeddings; all other granularities keep their cached scores.
    For sentence/phrase granularities with several units, the cached
    per-unit scores of the *other* units are combined with the varying one.
    """
    head = model.head

    def score(embs: Tensor) -> Tensor:  # embs: [B, d]
        b = embs.shape[0]
        bank = model.banks[vary]
        sims = bank.similarity_to(embs)  # [B, count]
        if vary != "document" and n_units_vary > 1 and fixed_unit_sims is not None:
            if model.config.aggregation == "max":
                agg = torch.maximum(sims, fixed_unit_sims.max(dim=0).values.unsqueeze(0))
            else:
                agg = (sims + fixed_unit_sims.sum(dim=0).unsqueeze(0)) / n_units_vary
        else:
            agg = sims
        parts = []
        for g in model.config.active_granularities():
            lam = {"document": 1.0, "sentence": head.lambda1, "phrase": head.lambda2}[g]
            vec = agg if g == vary else fixed[g].unsqueeze(0).expand(b, -1)
            parts.append(lam * vec)
        fused = torch.cat(parts, dim=-1)
        logits = head.linear(fused)
        return logits[:, 1]

    return score


def document_token_attributions(
    model: MultiViewPrototypeModel,
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    steps: int = 50,
) -> tuple[Attribution, list[str]]:
    """LIG of the positive-class logit w.r.t. the document token embeddings.

    Sentence- and phrase-view scores are held fixed. Returns the attribution
    and the composed token sequence it aligns with.
    """
    if not model.config.use_semantic:
        raise AttributionError("document attributions need the semantic view")
    if not model.config.use_prototypes:
        raise AttributionError("token attributions are defined for the prototype model")
    item, out = model.analyze_email(email, parses)
    encoder = model.encoder.doc_encoder
    ids, pad_mask = encoder.token_batch([item.doc_tokens])
    emb = encoder.embed(ids)[0].detach()
    base_ids = torch.zeros_like(ids)
    baseline = encoder.embed(base_ids)[0].detach()
    fixed = _fixed_similarity_parts(model, out, "document")
    logit_fn = _positive_logit_fn(model, fixed, "document", 1)

    def score_fn(points: Tensor) -> Tensor:
        e_d = encoder.forward_embedded(points, pad_mask.expand(points.shape[0], -1))
        return logit_fn(e_d)

    return integrated_gradients(score_fn, emb, baseline, steps), item.doc_tokens


def sentence_token_attributions(
    model: MultiViewPrototypeModel,
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    sent_index: int,
    steps: int = 50,
) -> tuple[Attribution, list[str]]:
    """LIG w.r.t. one sentence's token embeddings, other views held fixed."""
    if not model.config.use_semantic:
        raise AttributionError("sentence attributions need the semantic view")
    if not model.config.use_prototypes:
        raise AttributionError("token attributions are defined for the prototype model")
    item, out = model.analyze_email(email, parses)
    if not 0 <= sent_index < len(item.sentences):
        raise AttributionError(f"sentence index {sent_index} out of range")
    seq = compose_sentence_sequence(item.sentences[sent_index], model.config.encoder.max_sentence_tokens)
    encoder = model.encoder.sent_encoder
    ids, pad_mask = encoder.token_batch([seq])
    emb = encoder.embed(ids)[0].detach()
    baseline = encoder.embed(torch.zeros_like(ids))[0].detach()
    fixed = _fixed_similarity_parts(model, out, "sentence")
    n_sent = len(item.sentences)
    others = torch.cat(
        [out.unit_sims["sentence"][:sent_index], out.unit_sims["sentence"][sent_index + 1 :]]
    ).detach() if n_sent > 1 else None
    logit_fn = _positive_logit_fn(model, fixed, "sentence", n_sent, fixed_unit_sims=others)

    def score_fn(points: Tensor) -> Tensor:
        e_s = encoder.forward_embedded(points, pad_mask.expand(points.shape[0], -1))
        return logit_fn(e_s)

    return integrated_gradients(score_fn, emb, baseline, steps), seq


# ---------------------------------------------------------------------------
# Attention-based keyphrase extraction
# ---------------------------------------------------------------------------

@dataclass
class Keyphrase:
    keyword_index: int
    keyword: str
    phrase_indices: list[int]
    phrase: str
    score: float


def attention_keyphrases(
    graph: DependencyGraph,
    attention: AttentionRecord | None,
    attribution: Sequence[float] | None = None,
    noun_tags: Sequence[str] = NOUN_TAGS,
    modifier_relations: Sequence[str] = MODIFIER_RELATIONS,
) -> Keyphrase:
    """Top-1 keyword and keyphrase of one sentence.

    The keyword is the highest-attention noun (ties broken by attribution,
    then by lowest index); the keyphrase extends it with its adjectival,
    compound, determiner, and numeric modifiers, kept contiguous in sentence
    order. Sentences without nouns fall back to the highest-attribution
    token of any POS (highest attention when no attribution is supplied).
    """
    n = len(graph.tokens)
    att = {i: 0.0 for i in range(n)}
    if attention is not None:
        for idx, score in zip(attention.node_indices, attention.scores):
            att[idx] = score
    attr = {i: 0.0 for i in range(n)}
    if attribution is not None:
        for i in range(min(n, len(attribution))):
            attr[i] = float(attribution[i])
    nouns = [t for t in graph.tokens if t.upos in noun_tags]
    if nouns:
        keyword = max(nouns, key=lambda t: (att[t.index], attr[t.index], -t.index))
        score = att[keyword.index]
    else:
        ranking = attr if attribution is not None else att
        keyword = max(graph.tokens, key=lambda t: (ranking[t.index], -t.index))
        score = ranking[keyword.index]
    members = {keyword.index}
    for e in graph.edges:
        if e.governor == keyword.index and e.relation in modifier_relations:
            members.add(e.dependent)
    ordered = sorted(members)
    # Keep the maximal contiguous run around the keyword so the phrase reads
    # as a span of the sentence.
    run = [keyword.index]
    for i in range(ordered.index(keyword.index) - 1, -1, -1):
        if ordered[i] == run[0] - 1:
            run.insert(0, ordered[i])
        else:
            break
    for i in range(ordered.index(keyword.index) + 1, len(ordered)):
        if ordered[i] == run[-1] + 1:
            run.append(ordered[i])
        else:
            break
    phrase = " ".join(graph.tokens[i].form for i in run)
    return Keyphrase(
        keyword_index=keyword.index,
        keyword=keyword.form,
        phrase_indices=run,
        phrase=phrase,
        score=float(score),
    )


def sentence_keyphrase(
    model: MultiViewPrototypeModel,
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    sent_index: int,
    sentence: str,
    attribution_steps: int = 16,
) -> Keyphrase:
    """Keyphrase of one sentence using graph attention when available.

    Falls back to sentence-level integrated gradients when the graph encoder
    has no attention (gcn-style) or the parse carries no POS information.
    """
    graph = parses.get((email.id, sent_index)) or fallback_graph(sentence, email.id, sent_index)
    attention = None
    if model.config.use_structural and model.encoder.graph_encoder.records_attention:
        with torch.no_grad():
            _, record = model.encoder.graph_encoder.encode_subgraph(graph)
        attention = record
    needs_attribution = attention is None or not any(t.upos in NOUN_TAGS for t in graph.tokens)
    attribution = None
    if needs_attribution and model.config.use_semantic and model.config.use_prototypes:
        attr, seq = sentence_token_attributions(model, email, parses, sent_index, steps=attribution_steps)
        # seq is [CLS] t1 .. tn [SEP]; align token i with graph token i.
        attribution = attr.token_scores[1 : 1 + len(graph.tokens)]
    return attention_keyphrases(graph, attention, attribution)


def subject_keyphrase(
    model: MultiViewPrototypeModel,
    email: Email,
    parses: Mapping[tuple[str, int], DependencyGraph],
    attribution_steps: int = 16,
) -> Keyphrase | None:
    """Top-1 subject token by document-level attribution (subjects have no parse)."""
    subject_tokens = tokenize(email.subject)
    if not subject_tokens:
        return None
    if len(subject_tokens) <= 2:
        return Keyphrase(
            keyword_index=0, keyword=subject_tokens[0],
            phrase_indices=list(range(len(subject_tokens))),
            phrase=" ".join(subject_tokens), score=0.0,
        )
    try:
        attr, seq = document_token_attributions(model, email, parses, steps=attribution_steps)
    except AttributionError:
        return Keyphrase(
            keyword_index=0, keyword=subject_tokens[0],
            phrase_indices=[0], phrase=subject_tokens[0], score=0.0,
        )
    # Composed sequence is [CLS] S [SEP] ...; subject tokens sit at 1..len(S).
    scores = attr.token_scores[1 : 1 + len(subject_tokens)]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return Keyphrase(
        keyword_index=best, keyword=subject_tokens[best],
        phrase_indices=[best], phrase=subject_tokens[best], score=float(scores[best]),
    )
