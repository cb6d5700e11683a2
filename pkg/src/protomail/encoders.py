"""Multi-view encoders: document/sentence text encoders and graph encoders.

Two text-encoder tiers exist. The "tiny-trainable" tier is a 2-layer
self-attention encoder trained from scratch over a salted hash vocabulary;
it is what tests and desk-scale experiments use. The "pretrained-transformer"
tier wraps a transformers checkpoint selected by name and needs the weights
available locally.

Graph encoders come in a gcn-style and a gat-style flavor; the gat-style one
also reports per-node aggregated attention (mean over heads, sum of incoming
attention, final layer only).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .corpus import Email
from .parsing import (
    DependencyGraph,
    PhraseSubgraph,
    extract_subgraphs,
    graphs_for,
    sentences_for,
    tokenize,
)

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"


class EncoderError(RuntimeError):
    pass


@dataclass
class EncoderConfig:
    text_encoder_kind: str = "tiny-trainable"  # or "pretrained-transformer"
    graph_encoder_kind: str = "gat-style"  # or "gcn-style"
    d: int = 64
    max_document_tokens: int = 512
    max_sentence_tokens: int = 128
    vocab_size: int = 2048
    pos_tag_vocab_size: int = 32
    hash_salt: str = "protomail-v1"
    text_layers: int = 2
    text_heads: int = 4
    graph_layers: int = 2
    graph_heads: int = 4
    pretrained_name: str | None = None

    def __post_init__(self) -> None:
        if self.d <= 0:
            raise ValueError("embedding dimension d must be positive")
        if self.d % self.text_heads or self.d % self.graph_heads:
            raise ValueError("d must be divisible by text_heads and graph_heads")


class HashVocab:
    """Salted hashing vocabulary: no OOV, deterministic across processes."""

    PAD, CLS, SEP = 0, 1, 2
    _RESERVED = 3

    def __init__(self, size: int, salt: str):
        if size <= self._RESERVED:
            raise ValueError("vocab size too small")
        self.size = size
        self.salt = salt

    def id(self, token: str) -> int:
        if token == CLS_TOKEN:
            return self.CLS
        if token == SEP_TOKEN:
            return self.SEP
        h = zlib.crc32(f"{self.salt}|tok|{token.lower()}".encode("utf-8"))
        return self._RESERVED + h % (self.size - self._RESERVED)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def pos_id(self, upos: str, pos_vocab_size: int) -> int:
        return zlib.crc32(f"{self.salt}|pos|{upos}".encode("utf-8")) % pos_vocab_size


def compose_document_sequence(
    email: Email,
    max_tokens: int = 512,
    components: str = "SCOE",
) -> list[str]:
    """[CLS] S [SEP] C [SEP] O [SEP] E with absent segments (and their
    separators) omitted.

    ``components`` restricts which of subject/content/organization/interests
    enter the sequence (ablation hook). When the sequence exceeds
    ``max_tokens`` the body loses tokens from its tail first; other segments
    are only trimmed if the body alone cannot absorb the excess.
    """
    segments: list[tuple[str, list[str]]] = []
    if "S" in components and email.subject.strip():
        segments.append(("S", tokenize(email.subject)))
    if "C" in components and email.body.strip():
        segments.append(("C", tokenize(email.body)))
    if "O" in components and email.recipient_org:
        segments.append(("O", tokenize(email.recipient_org)))
    if "E" in components and email.interests:
        segments.append(("E", tokenize(" ".join(email.interests))))

    def build(segs: list[tuple[str, list[str]]]) -> list[str]:
        seq = [CLS_TOKEN]
        for i, (_, toks) in enumerate(segs):
            if i > 0:
                seq.append(SEP_TOKEN)
            seq.extend(toks)
        return seq

    seq = build(segments)
    if len(seq) > max_tokens:
        body_at = next((i for i, (name, _) in enumerate(segments) if name == "C"), None)
        if body_at is not None:
            excess = len(seq) - max_tokens
            body = segments[body_at][1]
            keep = max(0, len(body) - excess)
            if keep > 0:
                segments[body_at] = ("C", body[:keep])
            else:
                del segments[body_at]
            seq = build(segments)
    return seq[:max_tokens]


def compose_sentence_sequence(sentence: str, max_tokens: int = 128) -> list[str]:
    """[CLS] sentence tokens [SEP], truncated to the sentence budget."""
    toks = tokenize(sentence)[: max(1, max_tokens - 2)]
    return [CLS_TOKEN] + toks + [SEP_TOKEN]


# ---------------------------------------------------------------------------
# Text encoders
# ---------------------------------------------------------------------------

class _SelfAttentionBlock(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(d, heads, dropout=0.0, batch_first=True)
        self.norm1 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, 2 * d), nn.GELU(), nn.Linear(2 * d, d))
        self.norm2 = nn.LayerNorm(d)

    def forward(self, h: Tensor, pad_mask: Tensor) -> Tensor:
        a, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        h = self.norm1(h + a)
        return self.norm2(h + self.ff(h))


class TinyTextEncoder(nn.Module):
    """2-layer self-attention encoder over the hash vocabulary.

    The representation at the [CLS] position is the sequence embedding.
    Deterministic in eval mode (no dropout anywhere).
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.vocab = HashVocab(config.vocab_size, config.hash_salt)
        max_len = max(config.max_document_tokens, config.max_sentence_tokens)
        self.tok_emb = nn.Embedding(config.vocab_size, config.d, padding_idx=HashVocab.PAD)
        self.pos_emb = nn.Embedding(max_len, config.d)
        self.blocks = nn.ModuleList(
            _SelfAttentionBlock(config.d, config.text_heads) for _ in range(config.text_layers)
        )

    def _device(self) -> torch.device:
        return self.tok_emb.weight.device

    def token_batch(self, seqs: Sequence[Sequence[str]]) -> tuple[Tensor, Tensor]:
        """Pad token sequences into (ids [B, L], pad_mask [B, L])."""
        return self.id_batch([self.vocab.ids(s) for s in seqs])

    def id_batch(self, id_lists: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor]:
        if not id_lists:
            raise EncoderError("cannot encode an empty batch")
        if any(len(s) == 0 for s in id_lists):
            raise EncoderError("cannot encode an empty token sequence")
        max_len = max(len(s) for s in id_lists)
        arr = np.full((len(id_lists), max_len), HashVocab.PAD, dtype=np.int64)
        for i, s in enumerate(id_lists):
            arr[i, : len(s)] = s
        ids = torch.from_numpy(arr).to(self._device())
        pad_mask = ids == HashVocab.PAD
        return ids, pad_mask

    def embed(self, ids: Tensor) -> Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device)
        return self.tok_emb(ids) + self.pos_emb(positions)[None, :, :]

    def forward_embedded(self, h: Tensor, pad_mask: Tensor) -> Tensor:
        for block in self.blocks:
            h = block(h, pad_mask)
        return h[:, 0]

    def forward(self, ids: Tensor, pad_mask: Tensor) -> Tensor:
        return self.forward_embedded(self.embed(ids), pad_mask)

    def encode_sequences(self, seqs: Sequence[Sequence[str]]) -> Tensor:
        ids, pad_mask = self.token_batch(seqs)
        return self(ids, pad_mask)

    def encode_id_lists(self, id_lists: Sequence[Sequence[int]]) -> Tensor:
        ids, pad_mask = self.id_batch(id_lists)
        return self(ids, pad_mask)


class PretrainedTextEncoder(nn.Module):
    """Wrapper around a transformers checkpoint selected by name.

    Sequences composed by compose_document_sequence are mapped onto the
    checkpoint tokenizer's own special tokens ([SEP]-separated segments).
    Uses the first-token representation when the model has a CLS-style
    token, the last non-pad token otherwise (autoregressive checkpoints),
    projected to dimension d when the hidden size differs.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        if not config.pretrained_name:
            raise EncoderError("pretrained-transformer kind requires pretrained_name")
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as err:  # pragma: no cover - optional dependency
            raise EncoderError("install the 'pretrained' extra to use pretrained encoders") from err
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.pretrained_name)
        self.model = AutoModel.from_pretrained(config.pretrained_name)
        hidden = self.model.config.hidden_size
        self.proj = nn.Linear(hidden, config.d) if hidden != config.d else nn.Identity()

    def encode_sequences(self, seqs: Sequence[Sequence[str]]) -> Tensor:
        texts = []
        for seq in seqs:
            toks = [t for t in seq if t != CLS_TOKEN]
            segments, cur = [], []
            for t in toks:
                if t == SEP_TOKEN:
                    segments.append(" ".join(cur))
                    cur = []
                else:
                    cur.append(t)
            segments.append(" ".join(cur))
            sep = self.tokenizer.sep_token or "\n"
            texts.append(f" {sep} ".join(s for s in segments if s))
        enc = self.tokenizer(
            texts, return_tensors="pt", padding=True, truncation=True,
            max_length=self.config.max_document_tokens,
        )
        out = self.model(**enc).last_hidden_state
        if self.tokenizer.cls_token_id is not None:
            pooled = out[:, 0]
        else:
            last = enc["attention_mask"].sum(dim=1) - 1
            pooled = out[torch.arange(out.shape[0]), last]
        return self.proj(pooled)


def make_text_encoder(config: EncoderConfig) -> nn.Module:
    if config.text_encoder_kind == "tiny-trainable":
        return TinyTextEncoder(config)
    if config.text_encoder_kind == "pretrained-transformer":
        return PretrainedTextEncoder(config)
    raise EncoderError(f"unknown text encoder kind {config.text_encoder_kind!r}")


# ---------------------------------------------------------------------------
# Graph encoders
# ---------------------------------------------------------------------------

@dataclass
class AttentionRecord:
    """Aggregated attention per node of one encoded graph."""

    node_indices: list[int]  # original sentence token indices
    scores: list[float]  # nonnegative, one per node


@dataclass
class GraphBatch:
    tok_ids: Tensor  # [G, N]
    pos_ids: Tensor  # [G, N]
    adj: Tensor  # [G, N, N] bool, undirected + self-loops
    node_mask: Tensor  # [G, N] bool


@dataclass
class GraphArrays:
    """Pre-hashed node features and localized edges of one graph."""

    tok_ids: np.ndarray  # [N]
    pos_ids: np.ndarray  # [N]
    edges: np.ndarray  # [E, 2] local node positions


def _as_graph(g: DependencyGraph | PhraseSubgraph) -> tuple[list, list]:
    return list(g.tokens), list(g.edges)


class _GCNLayer(nn.Module):
    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.lin = nn.Linear(d_in, d_out)

    def forward(self, h: Tensor, adj: Tensor) -> Tensor:
        a = adj.to(h.dtype)
        deg = a.sum(-1).clamp(min=1.0)
        dinv = deg.pow(-0.5)
        a_norm = dinv.unsqueeze(2) * a * dinv.unsqueeze(1)
        return torch.relu(a_norm @ self.lin(h))


class _GATLayer(nn.Module):
    def __init__(self, d_in: int, d_out: int, heads: int):
        super().__init__()
        if d_out % heads:
            raise EncoderError("graph dimension must be divisible by graph_heads")
        self.heads = heads
        self.dh = d_out // heads
        self.lin = nn.Linear(d_in, d_out, bias=False)
        self.a_src = nn.Parameter(torch.empty(heads, self.dh))
        self.a_dst = nn.Parameter(torch.empty(heads, self.dh))
        nn.init.xavier_uniform_(self.lin.weight)
        nn.init.xavier_uniform_(self.a_src)
        nn.init.xavier_uniform_(self.a_dst)

    def forward(self, h: Tensor, adj: Tensor) -> tuple[Tensor, Tensor]:
        g, n, _ = h.shape
        z = self.lin(h).view(g, n, self.heads, self.dh)
        s_src = torch.einsum("gnhf,hf->gnh", z, self.a_src)
        s_dst = torch.einsum("gnhf,hf->gnh", z, self.a_dst)
        scores = s_src.permute(0, 2, 1).unsqueeze(3) + s_dst.permute(0, 2, 1).unsqueeze(2)
        scores = torch.nn.functional.leaky_relu(scores, 0.2)  # [G, H, N, N]
        scores = scores.masked_fill(~adj.unsqueeze(1), float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        out = torch.einsum("ghij,gjhf->gihf", alpha, z).reshape(g, n, -1)
        return torch.nn.functional.elu(out), alpha


class GraphEncoder(nn.Module):
    """Dependency-(sub)graph encoder with mean readout.

    Node features concatenate a learned POS-tag embedding with a learned
    embedding of the hashed lowercased surface form. Edges are treated as
    undirected and every node gets a self-loop. Nodes are processed in token
    order, so node storage order never affects the output.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.vocab = HashVocab(config.vocab_size, config.hash_salt)
        d_pos = config.d // 2
        self.pos_emb = nn.Embedding(config.pos_tag_vocab_size, d_pos)
        self.tok_emb = nn.Embedding(config.vocab_size, config.d - d_pos)
        if config.graph_encoder_kind == "gcn-style":
            self.layers = nn.ModuleList(_GCNLayer(config.d, config.d) for _ in range(config.graph_layers))
        elif config.graph_encoder_kind == "gat-style":
            self.layers = nn.ModuleList(
                _GATLayer(config.d, config.d, config.graph_heads) for _ in range(config.graph_layers)
            )
        else:
            raise EncoderError(f"unknown graph encoder kind {config.graph_encoder_kind!r}")

    @property
    def records_attention(self) -> bool:
        return self.config.graph_encoder_kind == "gat-style"

    def _device(self) -> torch.device:
        return self.tok_emb.weight.device

    def graph_arrays(self, g: DependencyGraph | PhraseSubgraph) -> GraphArrays:
        """Hash one graph's node features once; reusable across batches."""
        tokens, edges = _as_graph(g)
        tokens = sorted(tokens, key=lambda t: t.index)
        local = {t.index: li for li, t in enumerate(tokens)}
        tok_ids = np.array([self.vocab.id(t.form) for t in tokens], dtype=np.int64)
        pos_ids = np.array(
            [self.vocab.pos_id(t.upos, self.config.pos_tag_vocab_size) for t in tokens], dtype=np.int64
        )
        pairs = np.array(
            [[local[e.dependent], local[e.governor]] for e in edges], dtype=np.int64
        ).reshape(-1, 2)
        return GraphArrays(tok_ids=tok_ids, pos_ids=pos_ids, edges=pairs)

    def batch_from_arrays(self, arrays: Sequence[GraphArrays]) -> GraphBatch:
        if not arrays:
            raise EncoderError("cannot encode an empty graph batch")
        device = self._device()
        gcount = len(arrays)
        n = max(len(a.tok_ids) for a in arrays)
        tok = np.zeros((gcount, n), dtype=np.int64)
        pos = np.zeros((gcount, n), dtype=np.int64)
        adj = np.zeros((gcount, n, n), dtype=bool)
        mask = np.zeros((gcount, n), dtype=bool)
        adj[:, range(n), range(n)] = True  # self-loops (pads attend to themselves)
        for gi, a in enumerate(arrays):
            k = len(a.tok_ids)
            tok[gi, :k] = a.tok_ids
            pos[gi, :k] = a.pos_ids
            mask[gi, :k] = True
            if len(a.edges):
                adj[gi, a.edges[:, 0], a.edges[:, 1]] = True
                adj[gi, a.edges[:, 1], a.edges[:, 0]] = True
        return GraphBatch(
            tok_ids=torch.from_numpy(tok).to(device),
            pos_ids=torch.from_numpy(pos).to(device),
            adj=torch.from_numpy(adj).to(device),
            node_mask=torch.from_numpy(mask).to(device),
        )

    def graph_batch(self, graphs: Sequence[DependencyGraph | PhraseSubgraph]) -> GraphBatch:
        if not graphs:
            raise EncoderError("cannot encode an empty graph batch")
        return self.batch_from_arrays([self.graph_arrays(g) for g in graphs])

    def forward(self, batch: GraphBatch) -> tuple[Tensor, Tensor | None]:
        """Returns (graph embeddings [G, d], final-layer attention or None)."""
        h = torch.cat([self.pos_emb(batch.pos_ids), self.tok_emb(batch.tok_ids)], dim=-1)
        alpha = None
        for layer in self.layers:
            if isinstance(layer, _GATLayer):
                h, alpha = layer(h, batch.adj)
            else:
                h = layer(h, batch.adj)
        mask = batch.node_mask.to(h.dtype).unsqueeze(-1)
        pooled = (h * mask).sum(1) / mask.sum(1).clamp(min=1.0)
        return pooled, alpha

    def encode_graphs(
        self, graphs: Sequence[DependencyGraph | PhraseSubgraph]
    ) -> tuple[Tensor, list[AttentionRecord] | None]:
        batch = self.graph_batch(graphs)
        pooled, alpha = self(batch)
        if alpha is None:
            return pooled, None
        records = []
        mean_alpha = alpha.detach().mean(dim=1)  # over heads
        incoming = (mean_alpha * batch.node_mask.to(mean_alpha.dtype).unsqueeze(2)).sum(dim=1)
        for gi, g in enumerate(graphs):
            tokens = sorted(_as_graph(g)[0], key=lambda t: t.index)
            scores = incoming[gi, : len(tokens)]
            records.append(
                AttentionRecord(
                    node_indices=[t.index for t in tokens],
                    scores=[float(s) for s in scores],
                )
            )
        return pooled, records

    def encode_subgraph(self, sg: PhraseSubgraph | DependencyGraph) -> tuple[Tensor, AttentionRecord | None]:
        pooled, records = self.encode_graphs([sg])
        return pooled[0], records[0] if records else None


# ---------------------------------------------------------------------------
# Multi-view assembly
# ---------------------------------------------------------------------------

@dataclass
class MultiViewEmbedding:
    """Document, sentence, and phrase vectors for one email, with provenance."""

    e_d: Tensor  # [d]
    e_s: Tensor  # [S, d]
    e_p: Tensor  # [P, d]
    sentence_refs: list[tuple[str, int, str]] = field(default_factory=list)  # (id, sent idx, text)
    phrase_refs: list[tuple[str, int, str, str]] = field(default_factory=list)  # (id, sent idx, anchor, text)
    phrase_attention: list[AttentionRecord] | None = None
    degraded_structural: bool = False  # True when fallback subgraphs were used


class MultiViewEncoder(nn.Module):
    """Bundles the document, sentence, and graph encoders of one model."""

    def __init__(
        self,
        config: EncoderConfig,
        use_semantic: bool = True,
        use_structural: bool = True,
        components: str = "SCOE",
        anchor_relations: Sequence[str] = ("nsubj", "dobj"),
    ):
        super().__init__()
        self.config = config
        self.use_semantic = use_semantic
        self.use_structural = use_structural
        self.components = components
        self.anchor_relations = tuple(anchor_relations)
        if use_semantic:
            self.doc_encoder = make_text_encoder(config)
            self.sent_encoder = make_text_encoder(config)
        if use_structural:
            self.graph_encoder = GraphEncoder(config)

    def document_sequence(self, email: Email) -> list[str]:
        return compose_document_sequence(email, self.config.max_document_tokens, self.components)

    def encode_documents(self, emails: Sequence[Email]) -> Tensor:
        return self.doc_encoder.encode_sequences([self.document_sequence(e) for e in emails])

    def encode_sentences(self, sentences: Sequence[str]) -> Tensor:
        seqs = [compose_sentence_sequence(s, self.config.max_sentence_tokens) for s in sentences]
        return self.sent_encoder.encode_sequences(seqs)

    def email_units(
        self, email: Email, parses: dict[tuple[str, int], DependencyGraph]
    ) -> tuple[list[str], list[PhraseSubgraph], bool]:
        """Sentences and phrase subgraphs for one email (with fallback)."""
        sentences = email.sentences or sentences_for(email.id, email.body, parses)
        graphs = graphs_for(email.id, sentences, parses)
        degraded = any((email.id, i) not in parses for i in range(len(sentences)))
        subgraphs: list[PhraseSubgraph] = []
        for g in graphs:
            subgraphs.extend(extract_subgraphs(g, self.anchor_relations))
        return sentences, subgraphs, degraded

    def encode_views(self, email: Email, parses: dict[tuple[str, int], DependencyGraph]) -> MultiViewEmbedding:
        sentences, subgraphs, degraded = self.email_units(email, parses)
        d = self.config.d
        zero = torch.zeros(0, d)
        e_d = torch.zeros(d)
        e_s, e_p = zero, zero
        attn = None
        try:
            if self.use_semantic:
                e_d = self.encode_documents([email])[0]
                if sentences:
                    e_s = self.encode_sentences(sentences)
            if self.use_structural and subgraphs:
                e_p, attn = self.graph_encoder.encode_graphs(subgraphs)
        except EncoderError as err:
            raise EncoderError(f"email {email.id}: {err}") from err
        return MultiViewEmbedding(
            e_d=e_d,
            e_s=e_s,
            e_p=e_p,
            sentence_refs=[(email.id, i, s) for i, s in enumerate(sentences)],
            phrase_refs=[(sg.source[0], sg.source[1], sg.anchor_relation, sg.surface_text) for sg in subgraphs],
            phrase_attention=attn,
            degraded_structural=degraded,
        )
