"""Prototype banks, similarity scoring, fusion/classification, projection.

The similarity between a prototype p and an embedding e is

    log((||p - e||^2 + 1) / (||p - e||^2 + epsilon))

which is strictly positive for epsilon < 1, peaks at log(1/epsilon) when
p == e, and decreases monotonically with distance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .corpus import Email, LabeledEmail
from .encoders import (
    EncoderConfig,
    MultiViewEmbedding,
    MultiViewEncoder,
    compose_sentence_sequence,
)
from .parsing import DependencyGraph, PhraseSubgraph, load_parses

log = logging.getLogger(__name__)

GRANULARITIES = ("document", "sentence", "phrase")


class ProtoError(RuntimeError):
    pass


def similarity(p: Tensor, e: Tensor, epsilon: float = 1e-4) -> Tensor:
    """Prototype-embedding similarity; broadcasts over leading dimensions."""
    if p.shape[-1] != e.shape[-1]:
        raise ProtoError(f"dimension mismatch: {p.shape[-1]} vs {e.shape[-1]}")
    if not 0.0 < epsilon < 1.0:
        raise ProtoError(f"epsilon must lie in (0, 1), got {epsilon}")
    sq = (p - e).pow(2).sum(-1)
    # log((sq + 1) / (sq + eps)) in a form that stays strictly positive for
    # all finite distances instead of rounding to 0.
    return torch.log1p((1.0 - epsilon) / (sq + epsilon))


def similarity_matrix(embeddings: Tensor, prototypes: Tensor, epsilon: float) -> Tensor:
    """Pairwise similarities, [N, d] x [K, d] -> [N, K]."""
    return similarity(embeddings.unsqueeze(1), prototypes.unsqueeze(0), epsilon)


@dataclass
class Projection:
    """Provenance of a projected prototype: the training unit it now equals."""

    source_id: str
    unit_index: int
    surface_text: str
    distance: float


@dataclass
class UnitProvenance:
    source_id: str
    unit_index: int
    surface_text: str


@dataclass
class ProjectionPool:
    """Training-unit embeddings available for projecting one bank."""

    embeddings: Tensor  # [N, d]
    labels: Tensor  # [N]
    provenance: list[UnitProvenance]


class PrototypeBank(nn.Module):
    """Trainable prototype vectors of one granularity, half per class."""

    def __init__(self, granularity: str, count: int, d: int, epsilon: float = 1e-4):
        super().__init__()
        if granularity not in GRANULARITIES:
            raise ProtoError(f"unknown granularity {granularity!r}")
        if count <= 0 or count % 2:
            raise ProtoError(f"prototype count must be a positive even integer, got {count}")
        if not 0.0 < epsilon < 1.0:
            raise ProtoError(f"epsilon must lie in (0, 1), got {epsilon}")
        self.granularity = granularity
        self.epsilon = epsilon
        self.vectors = nn.Parameter(torch.randn(count, d) * 0.1)
        self.register_buffer("class_of", torch.tensor([0] * (count // 2) + [1] * (count // 2)))
        self.projection: list[Projection] | None = None

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def similarity_to(self, embeddings: Tensor) -> Tensor:
        return similarity_matrix(embeddings, self.vectors, self.epsilon)

    def is_projected(self) -> bool:
        return self.projection is not None


def project_bank(bank: PrototypeBank, pool: ProjectionPool) -> PrototypeBank:
    """Replace each prototype with the nearest same-class pool embedding.

    Ties break to the lowest pool index, which also makes the operation
    idempotent. Provenance is recorded per prototype.
    """
    with torch.no_grad():
        projections: list[Projection] = []
        for i in range(bank.count):
            cls = int(bank.class_of[i])
            mask = pool.labels == cls
            idxs = torch.nonzero(mask, as_tuple=False).flatten()
            if idxs.numel() == 0:
                raise ProtoError(f"{bank.granularity}: no class-{cls} units available for projection")
            sub = pool.embeddings[idxs]
            d2 = (sub - bank.vectors[i]).pow(2).sum(-1).detach().cpu().numpy()
            local = int(np.argmin(d2))  # first minimum = lowest pool index
            gidx = int(idxs[local])
            bank.vectors.data[i] = pool.embeddings[gidx]
            prov = pool.provenance[gidx]
            projections.append(
                Projection(
                    source_id=prov.source_id,
                    unit_index=prov.unit_index,
                    surface_text=prov.surface_text,
                    distance=float(np.sqrt(d2[local])),
                )
            )
        bank.projection = projections
    return bank


def project_prototypes(banks: Mapping[str, PrototypeBank], pools: Mapping[str, ProjectionPool]) -> None:
    for name, bank in banks.items():
        project_bank(bank, pools[name])


@dataclass
class SimilarityVector:
    """Per-granularity aggregated similarity scores for one email."""

    s_d: Tensor | None = None  # [j]
    s_s: Tensor | None = None  # [k]
    s_p: Tensor | None = None  # [m]

    def by_granularity(self) -> dict[str, Tensor | None]:
        return {"document": self.s_d, "sentence": self.s_s, "phrase": self.s_p}


class ClassifierHead(nn.Module):
    """Fusion weights plus the linear+softmax output layer."""

    def __init__(self, in_features: int, lambda1: float = 0.3, lambda2: float = 0.5):
        super().__init__()
        if lambda1 < 0 or lambda2 < 0:
            raise ProtoError("fusion weights must be nonnegative")
        self.linear = nn.Linear(in_features, 2)
        self.lambda1 = lambda1
        self.lambda2 = lambda2

    def fuse(self, sv: SimilarityVector) -> Tensor:
        parts = []
        if sv.s_d is not None:
            parts.append(sv.s_d)
        if sv.s_s is not None:
            parts.append(self.lambda1 * sv.s_s)
        if sv.s_p is not None:
            parts.append(self.lambda2 * sv.s_p)
        if not parts:
            raise ProtoError("empty similarity vector")
        return torch.cat(parts, dim=-1)

    def forward(self, fused: Tensor) -> Tensor:
        return torch.softmax(self.linear(fused), dim=-1)


def granularity_scores(
    mv: MultiViewEmbedding,
    banks: Mapping[str, PrototypeBank],
    aggregation: str = "mean",
) -> SimilarityVector:
    """Aggregate unit similarities per prototype for one email.

    Document scores are direct similarities; sentence and phrase scores
    average (or, configurably, max) over that email's units. A granularity
    with zero units contributes a zero vector.
    """
    out = SimilarityVector()
    for name, bank in banks.items():
        if name == "document":
            out.s_d = similarity_matrix(mv.e_d.unsqueeze(0), bank.vectors, bank.epsilon)[0]
            continue
        units = mv.e_s if name == "sentence" else mv.e_p
        if units.shape[0] == 0:
            scores = torch.zeros(bank.count, dtype=mv.e_d.dtype)
        else:
            sims = bank.similarity_to(units)  # [units, count]
            scores = sims.mean(dim=0) if aggregation == "mean" else sims.max(dim=0).values
        if name == "sentence":
            out.s_s = scores
        else:
            out.s_p = scores
    return out


def fuse_and_classify(sv: SimilarityVector, head: ClassifierHead) -> Tensor:
    """Weighted fusion followed by the linear layer and softmax."""
    return head(head.fuse(sv))


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    j: int = 10  # document prototypes
    k: int = 10  # sentence prototypes
    m: int = 10  # phrase prototypes
    lambda1: float = 0.3
    lambda2: float = 0.5
    epsilon: float = 1e-4
    use_semantic: bool = True
    use_structural: bool = True
    use_prototypes: bool = True
    components: str = "SCOE"
    anchor_relations: tuple[str, ...] = ("nsubj", "dobj")
    aggregation: str = "mean"  # or "max"

    def __post_init__(self) -> None:
        if not (self.use_semantic or self.use_structural):
            raise ProtoError("at least one view must be enabled")
        if not 0.0 < self.epsilon < 1.0:
            raise ProtoError("epsilon must lie in (0, 1)")

    def active_granularities(self) -> list[str]:
        out = []
        if self.use_semantic:
            out += ["document", "sentence"]
        if self.use_structural:
            out += ["phrase"]
        return out

    def prototype_count(self, granularity: str) -> int:
        return {"document": self.j, "sentence": self.k, "phrase": self.m}[granularity]

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["anchor_relations"] = list(self.anchor_relations)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["encoder"] = EncoderConfig(**doc["encoder"])
        doc["anchor_relations"] = tuple(doc.get("anchor_relations", ("nsubj", "dobj")))
        return cls(**doc)


@dataclass
class PreparedEmail:
    """Tokenized tensors-in-waiting for one email (hashing done once).

    The id/array fields are fast-path caches for the tiny trainable
    encoders; they stay None under a pretrained text encoder.
    """

    email: Email
    label: int
    doc_tokens: list[str]
    sentences: list[str]
    subgraphs: list[PhraseSubgraph]
    degraded_structural: bool
    doc_ids: list[int] | None = None
    sent_ids: list[list[int]] | None = None
    graph_arrays: list | None = None


@dataclass
class PreparedBatch:
    items: list[PreparedEmail]
    labels: Tensor  # [B]


@dataclass
class ModelOutput:
    probs: Tensor  # [B, 2]
    logits: Tensor  # [B, 2]
    fused: Tensor  # [B, F]
    sims: dict[str, Tensor]  # granularity -> [B, count] (prototype mode only)
    unit_embeddings: dict[str, Tensor]  # granularity -> [Nu, d]
    unit_owner: dict[str, Tensor]  # granularity -> [Nu]
    unit_sims: dict[str, Tensor]  # granularity -> [Nu, count]


def _segment_mean(values: Tensor, owner: Tensor, n_groups: int) -> Tensor:
    out = torch.zeros(n_groups, values.shape[1], dtype=values.dtype, device=values.device)
    counts = torch.zeros(n_groups, dtype=values.dtype, device=values.device)
    out.index_add_(0, owner, values)
    counts.index_add_(0, owner, torch.ones(len(owner), dtype=values.dtype, device=values.device))
    return out / counts.clamp(min=1.0).unsqueeze(1)


def _segment_max(values: Tensor, owner: Tensor, n_groups: int) -> Tensor:
    out = torch.full((n_groups, values.shape[1]), float("-inf"), dtype=values.dtype, device=values.device)
    out.scatter_reduce_(0, owner.unsqueeze(1).expand(-1, values.shape[1]), values, reduce="amax")
    return torch.where(torch.isinf(out), torch.zeros_like(out), out)


class MultiViewPrototypeModel(nn.Module):
    """The full classifier: encoders, prototype banks, fusion head.

    With ``use_prototypes`` off it degrades to a direct linear head over the
    concatenated view embeddings (the non-interpretable ablation variant).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = MultiViewEncoder(
            config.encoder,
            use_semantic=config.use_semantic,
            use_structural=config.use_structural,
            components=config.components,
            anchor_relations=config.anchor_relations,
        )
        d = config.encoder.d
        if config.use_prototypes:
            self.banks = nn.ModuleDict(
                {
                    g: PrototypeBank(g, config.prototype_count(g), d, config.epsilon)
                    for g in config.active_granularities()
                }
            )
            in_features = sum(config.prototype_count(g) for g in config.active_granularities())
            self.head = ClassifierHead(in_features, config.lambda1, config.lambda2)
        else:
            self.banks = nn.ModuleDict()
            blocks = (2 if config.use_semantic else 0) + (1 if config.use_structural else 0)
            self.head = ClassifierHead(blocks * d, config.lambda1, config.lambda2)

    # -- data preparation ---------------------------------------------------

    def prepare_email(
        self, labeled: LabeledEmail, parses: Mapping[tuple[str, int], DependencyGraph]
    ) -> PreparedEmail:
        from .encoders import TinyTextEncoder

        email = labeled.email
        sentences, subgraphs, degraded = self.encoder.email_units(email, dict(parses))
        item = PreparedEmail(
            email=email,
            label=labeled.label,
            doc_tokens=self.encoder.document_sequence(email),
            sentences=sentences,
            subgraphs=subgraphs if self.config.use_structural else [],
            degraded_structural=degraded,
        )
        if self.config.use_semantic and isinstance(self.encoder.doc_encoder, TinyTextEncoder):
            item.doc_ids = self.encoder.doc_encoder.vocab.ids(item.doc_tokens)
            max_sent = self.config.encoder.max_sentence_tokens
            item.sent_ids = [
                self.encoder.sent_encoder.vocab.ids(compose_sentence_sequence(s, max_sent))
                for s in sentences
            ]
        if self.config.use_structural:
            item.graph_arrays = [self.encoder.graph_encoder.graph_arrays(sg) for sg in item.subgraphs]
        return item

    def collate(self, items: Sequence[PreparedEmail]) -> PreparedBatch:
        labels = torch.tensor([it.label for it in items], dtype=torch.long)
        return PreparedBatch(items=list(items), labels=labels)

    # -- forward ------------------------------------------------------------

    def forward_batch(self, batch: PreparedBatch) -> ModelOutput:
        items = batch.items
        n = len(items)
        d = self.config.encoder.d
        dtype = self.head.linear.weight.dtype
        unit_embeddings: dict[str, Tensor] = {}
        unit_owner: dict[str, Tensor] = {}
        if self.config.use_semantic:
            if all(it.doc_ids is not None for it in items):
                e_d = self.encoder.doc_encoder.encode_id_lists([it.doc_ids for it in items])
            else:
                e_d = self.encoder.doc_encoder.encode_sequences([it.doc_tokens for it in items])
            unit_embeddings["document"] = e_d
            unit_owner["document"] = torch.arange(n)
            sent_owner = [i for i, it in enumerate(items) for _ in it.sentences]
            if sent_owner:
                if all(it.sent_ids is not None for it in items):
                    e_s = self.encoder.sent_encoder.encode_id_lists(
                        [ids for it in items for ids in it.sent_ids]
                    )
                else:
                    max_sent = self.config.encoder.max_sentence_tokens
                    e_s = self.encoder.sent_encoder.encode_sequences(
                        [compose_sentence_sequence(s, max_sent) for it in items for s in it.sentences]
                    )
            else:
                e_s = torch.zeros(0, d, dtype=dtype)
            unit_embeddings["sentence"] = e_s
            unit_owner["sentence"] = torch.tensor(sent_owner, dtype=torch.long)
        if self.config.use_structural:
            owner = [i for i, it in enumerate(items) for _ in it.subgraphs]
            if owner:
                arrays = [a for it in items for a in (it.graph_arrays or [])]
                if len(arrays) == len(owner):
                    batch_g = self.encoder.graph_encoder.batch_from_arrays(arrays)
                else:
                    batch_g = self.encoder.graph_encoder.graph_batch(
                        [sg for it in items for sg in it.subgraphs]
                    )
                e_p, _ = self.encoder.graph_encoder(batch_g)
            else:
                e_p = torch.zeros(0, d, dtype=dtype)
            unit_embeddings["phrase"] = e_p
            unit_owner["phrase"] = torch.tensor(owner, dtype=torch.long)

        sims: dict[str, Tensor] = {}
        unit_sims: dict[str, Tensor] = {}
        if self.config.use_prototypes:
            sv_parts: dict[str, Tensor] = {}
            for g in self.config.active_granularities():
                bank = self.banks[g]
                units = unit_embeddings[g]
                if g == "document":
                    scores = bank.similarity_to(units)
                    unit_sims[g] = scores
                    sv_parts[g] = scores
                else:
                    if units.shape[0] == 0:
                        unit_sims[g] = torch.zeros(0, bank.count, dtype=dtype)
                        sv_parts[g] = torch.zeros(n, bank.count, dtype=dtype)
                    else:
                        per_unit = bank.similarity_to(units)
                        unit_sims[g] = per_unit
                        if self.config.aggregation == "max":
                            sv_parts[g] = _segment_max(per_unit, unit_owner[g], n)
                        else:
                            sv_parts[g] = _segment_mean(per_unit, unit_owner[g], n)
                sims[g] = sv_parts[g]
            sv = SimilarityVector(
                s_d=sv_parts.get("document"), s_s=sv_parts.get("sentence"), s_p=sv_parts.get("phrase")
            )
            fused = self.head.fuse(sv)
        else:
            feats = []
            if self.config.use_semantic:
                feats.append(unit_embeddings["document"])
                feats.append(_segment_mean(unit_embeddings["sentence"], unit_owner["sentence"], n)
                             if unit_embeddings["sentence"].shape[0] else torch.zeros(n, d, dtype=dtype))
            if self.config.use_structural:
                feats.append(_segment_mean(unit_embeddings["phrase"], unit_owner["phrase"], n)
                             if unit_embeddings["phrase"].shape[0] else torch.zeros(n, d, dtype=dtype))
            fused = torch.cat(feats, dim=-1)
        logits = self.head.linear(fused)
        probs = torch.softmax(logits, dim=-1)
        return ModelOutput(
            probs=probs, logits=logits, fused=fused, sims=sims,
            unit_embeddings=unit_embeddings, unit_owner=unit_owner, unit_sims=unit_sims,
        )

    def analyze_email(
        self, labeled: LabeledEmail | Email, parses: Mapping[tuple[str, int], DependencyGraph]
    ) -> tuple[PreparedEmail, ModelOutput]:
        """Single-email forward through the exact batch code path."""
        if isinstance(labeled, Email):
            labeled = LabeledEmail(email=labeled, label=0)
        item = self.prepare_email(labeled, parses)
        with torch.no_grad():
            out = self.forward_batch(self.collate([item]))
        return item, out

    def predict_proba(
        self, email: Email, parses: Mapping[tuple[str, int], DependencyGraph]
    ) -> tuple[float, int, bool]:
        """(probability of response, predicted label, structural degraded?)."""
        item, out = self.analyze_email(email, parses)
        p = float(out.probs[0, 1])
        return p, int(p > 0.5), item.degraded_structural

    def is_projected(self) -> bool:
        return bool(self.banks) and all(b.is_projected() for b in self.banks.values())


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(
    model: MultiViewPrototypeModel,
    out_dir: str | Path,
    sources: Sequence[LabeledEmail] | None = None,
    parses_text: str | None = None,
) -> Path:
    """Write config, weights, and the human-inspectable prototype bank file.

    ``sources``/``parses_text`` optionally bundle the training emails and
    parses referenced by prototype provenance, which the edit-suggestion
    engine and the HTTP service need at inference time.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(model.config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    torch.save(model.state_dict(), out / "weights.pt")
    banks_doc = {}
    for g, bank in model.banks.items():
        banks_doc[g] = {
            "epsilon": bank.epsilon,
            "class_of": [int(c) for c in bank.class_of],
            "vectors": [[float(x) for x in row] for row in bank.vectors.detach()],
            "projection": [dataclasses.asdict(p) for p in bank.projection] if bank.projection else None,
        }
    (out / "banks.json").write_text(json.dumps(banks_doc, indent=2) + "\n", encoding="utf-8")
    if sources is not None:
        from .corpus import write_generic_corpus

        write_generic_corpus(sources, out / "sources.jsonl")
    if parses_text is not None:
        (out / "parses.conllu").write_text(parses_text, encoding="utf-8")
    return out


@dataclass
class CheckpointBundle:
    model: MultiViewPrototypeModel
    model_version: str
    sources: list[LabeledEmail] = field(default_factory=list)
    parses: dict[tuple[str, int], DependencyGraph] = field(default_factory=dict)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    path = Path(path)
    config = ModelConfig.from_dict(json.loads((path / "config.json").read_text(encoding="utf-8")))
    model = MultiViewPrototypeModel(config)
    state = torch.load(path / "weights.pt", map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    banks_doc = json.loads((path / "banks.json").read_text(encoding="utf-8"))
    for g, doc in banks_doc.items():
        if doc.get("projection") and g in model.banks:
            model.banks[g].projection = [Projection(**p) for p in doc["projection"]]
    model.eval()
    digest = hashlib.sha256()
    digest.update((path / "weights.pt").read_bytes())
    digest.update((path / "config.json").read_bytes())
    sources: list[LabeledEmail] = []
    parses: dict[tuple[str, int], DependencyGraph] = {}
    if (path / "sources.jsonl").exists():
        from .corpus import load_generic_corpus

        sources = load_generic_corpus(path / "sources.jsonl")
    if (path / "parses.conllu").exists():
        parses = load_parses(path / "parses.conllu")
    return CheckpointBundle(model=model, model_version=digest.hexdigest()[:12], sources=sources, parses=parses)
