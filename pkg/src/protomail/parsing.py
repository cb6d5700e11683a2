"""Dependency-parse ingestion and phrase-subgraph extraction.

Parsing itself is an offline preprocessing step: this module only consumes
parse files in a CoNLL-U subset (columns ID, FORM, UPOS, HEAD, DEPREL;
blocks separated by blank lines; ``# email_id = …`` / ``# sent_index = …``
comments). It never calls a parser in-process.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

DEFAULT_ANCHOR_RELATIONS = ("nsubj", "dobj")
FALLBACK_RELATION = "fallback"


class ParseError(ValueError):
    """Raised for parse blocks that violate the tree invariants."""


@dataclass(frozen=True)
class Token:
    index: int  # 0-based position within the sentence
    form: str
    upos: str


@dataclass(frozen=True)
class DepEdge:
    dependent: int
    relation: str
    governor: int


@dataclass
class DependencyGraph:
    """One sentence's dependency tree (0-based token indices)."""

    tokens: list[Token]
    edges: list[DepEdge]  # excludes the root's self-edge
    root_index: int
    source: tuple[str, int] = ("", 0)  # (email id, sentence index)

    @property
    def text(self) -> str:
        return " ".join(t.form for t in self.tokens)

    def validate(self) -> None:
        n = len(self.tokens)
        if n == 0:
            raise ParseError("empty sentence")
        if not 0 <= self.root_index < n:
            raise ParseError(f"root index {self.root_index} out of range")
        governor_of: dict[int, int] = {}
        for e in self.edges:
            if not (0 <= e.dependent < n and 0 <= e.governor < n):
                raise ParseError(f"edge {e} references token out of range")
            if e.dependent in governor_of:
                raise ParseError(f"token {e.dependent} has two governors")
            governor_of[e.dependent] = e.governor
        if self.root_index in governor_of:
            raise ParseError("root token has a governor")
        if len(governor_of) != n - 1:
            missing = [i for i in range(n) if i != self.root_index and i not in governor_of]
            raise ParseError(f"tokens without a governor: {missing}")
        # Every governor chain must reach the root without cycling.
        for start in governor_of:
            seen = {start}
            node = start
            while node != self.root_index:
                node = governor_of[node]
                if node in seen:
                    raise ParseError(f"cycle through token {node}")
                seen.add(node)

    def children(self, index: int) -> list[int]:
        return [e.dependent for e in self.edges if e.governor == index]

    def subtree(self, index: int) -> set[int]:
        """Token index plus all transitive dependents."""
        out = {index}
        frontier = [index]
        while frontier:
            node = frontier.pop()
            for child in self.children(node):
                if child not in out:
                    out.add(child)
                    frontier.append(child)
        return out


@dataclass
class PhraseSubgraph:
    """A dependency subgraph anchored at one relation, plus the ROOT token."""

    anchor_relation: str
    tokens: list[Token]  # sorted by sentence index
    edges: list[DepEdge]  # induced on the token subset (original indices)
    root_index: int
    source: tuple[str, int] = ("", 0)

    @property
    def node_indices(self) -> list[int]:
        return [t.index for t in self.tokens]

    @property
    def surface_text(self) -> str:
        return " ".join(t.form for t in self.tokens)


def extract_subgraphs(
    g: DependencyGraph,
    anchor_relations: Sequence[str] = DEFAULT_ANCHOR_RELATIONS,
) -> list[PhraseSubgraph]:
    """One subgraph per anchor-relation edge; a fallback when none exist.

    Each anchor subgraph contains the ROOT token, the anchor dependent, and
    the dependent's full modifier subtree, with the edges induced on that
    node set. Sentences with no anchor relation yield a single fallback
    subgraph of ROOT plus its direct dependents.
    """
    out: list[PhraseSubgraph] = []
    for e in g.edges:
        if e.relation in anchor_relations:
            nodes = g.subtree(e.dependent) | {g.root_index}
            out.append(_induced(g, nodes, e.relation))
    if not out:
        nodes = {g.root_index} | set(g.children(g.root_index))
        out.append(_induced(g, nodes, FALLBACK_RELATION))
    return out


def _induced(g: DependencyGraph, nodes: set[int], anchor: str) -> PhraseSubgraph:
    tokens = [g.tokens[i] for i in sorted(nodes)]
    edges = [e for e in g.edges if e.dependent in nodes and e.governor in nodes]
    return PhraseSubgraph(
        anchor_relation=anchor, tokens=tokens, edges=edges,
        root_index=g.root_index, source=g.source,
    )


def fallback_graph(sentence: str, email_id: str = "", sent_index: int = 0) -> DependencyGraph:
    """Flat stand-in parse for a sentence with no precomputed parse.

    The first token acts as root and every other token attaches to it. POS is
    unknown ("X"). Running extract_subgraphs on it yields the fallback
    subgraph covering the whole sentence.
    """
    forms = tokenize(sentence) or ["[EMPTY]"]
    tokens = [Token(i, f, "X") for i, f in enumerate(forms)]
    edges = [DepEdge(i, "dep", 0) for i in range(1, len(tokens))]
    return DependencyGraph(tokens=tokens, edges=edges, root_index=0, source=(email_id, sent_index))


# ---------------------------------------------------------------------------
# CoNLL-U subset loader
# ---------------------------------------------------------------------------

def _parse_block(lines: list[str], block_no: int) -> tuple[tuple[str, int], DependencyGraph]:
    email_id, sent_index = "", 0
    rows: list[tuple[int, str, str, int, str]] = []
    for line in lines:
        if line.startswith("#"):
            m = re.match(r"#\s*(\w+)\s*=\s*(.*)", line)
            if m and m.group(1) == "email_id":
                email_id = m.group(2).strip()
            elif m and m.group(1) == "sent_index":
                sent_index = int(m.group(2).strip())
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ParseError(f"block {block_no}: expected 5 columns, got {len(cols)}: {line!r}")
        idx, form, upos, head, deprel = cols
        rows.append((int(idx), form, upos, int(head), deprel))
    if not rows:
        raise ParseError(f"block {block_no}: no token rows")
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
        raise ParseError(f"block {block_no}: token ids must be 1..n")
    tokens = [Token(i, form, upos) for i, (_, form, upos, _, _) in enumerate(rows)]
    roots = [i for i, (_, _, _, head, rel) in enumerate(rows) if head == 0 or rel == "root"]
    edges = []
    for i, (_, _, _, head, rel) in enumerate(rows):
        if head == 0 or rel == "root":
            if head != 0 or rel != "root":
                raise ParseError(f"block {block_no}: root row must have HEAD=0 and DEPREL=root")
            continue
        edges.append(DepEdge(dependent=i, relation=rel, governor=head - 1))
    if len(roots) != 1:
        raise ParseError(f"block {block_no}: expected exactly one root, found {len(roots)}")
    g = DependencyGraph(tokens=tokens, edges=edges, root_index=roots[0], source=(email_id, sent_index))
    g.validate()
    return (email_id, sent_index), g


def load_parses_text(
    text: str,
    known_ids: set[str] | None = None,
) -> dict[tuple[str, int], DependencyGraph]:
    """Parse CoNLL-U-subset text into (email id, sentence index) -> graph.

    Invalid blocks (cycles, multiple roots/governors, malformed columns) and
    blocks referencing unknown email ids are dropped with a diagnostic.
    """
    out: dict[tuple[str, int], DependencyGraph] = {}
    block: list[str] = []
    block_no = 0

    def flush() -> None:
        nonlocal block_no
        if not any(not ln.startswith("#") for ln in block):
            block.clear()
            return
        block_no += 1
        try:
            key, g = _parse_block(block, block_no)
        except (ParseError, ValueError) as err:
            log.warning("dropping parse block %d: %s", block_no, err)
        else:
            if known_ids is not None and key[0] not in known_ids:
                log.warning("dropping parse block %d: unknown email id %r", block_no, key[0])
            elif key in out:
                log.warning("dropping parse block %d: duplicate key %r", block_no, key)
            else:
                out[key] = g
        block.clear()

    for line in text.split("\n"):
        if line.strip() == "":
            flush()
        else:
            block.append(line)
    flush()
    return out


def load_parses(path: str | Path, known_ids: set[str] | None = None) -> dict[tuple[str, int], DependencyGraph]:
    return load_parses_text(Path(path).read_text(encoding="utf-8"), known_ids=known_ids)


def dump_parses(parses: dict[tuple[str, int], DependencyGraph]) -> str:
    """Serialize graphs back to the CoNLL-U subset format."""
    blocks = []
    for (email_id, sent_index), g in parses.items():
        lines = [f"# email_id = {email_id}", f"# sent_index = {sent_index}"]
        governor_of = {e.dependent: (e.governor, e.relation) for e in g.edges}
        for t in g.tokens:
            if t.index == g.root_index:
                head, rel = 0, "root"
            else:
                gov, rel = governor_of[t.index]
                head = gov + 1
            lines.append(f"{t.index + 1}\t{t.form}\t{t.upos}\t{head}\t{rel}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# Sentence segmentation and tokenization
# ---------------------------------------------------------------------------

# Words that end with '.' without ending a sentence.
ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc",
    "e.g", "i.e", "eg", "ie", "no", "dept", "inc", "corp", "approx", "fig",
}

_SENTENCE_END = re.compile(r"[.!?]+[\"')\]]*\s+")
_PARAGRAPH = re.compile(r"\n\s*\n")


def sentence_segment(body: str) -> list[str]:
    """Split a body into sentences without dropping any text.

    Splits after terminal punctuation followed by whitespace and an
    upper-case/digit start, unless the preceding word is a known
    abbreviation. Paragraph breaks always split. The concatenation of the
    returned sentences equals the body modulo collapsed whitespace.
    """
    text = body.strip()
    if not text:
        return []
    cuts = {m.end() for m in _PARAGRAPH.finditer(text)}
    for m in _SENTENCE_END.finditer(text):
        nxt = m.end()
        if nxt >= len(text):
            continue
        if not (text[nxt].isupper() or text[nxt].isdigit() or text[nxt] in "\"'("):
            continue
        prev = re.search(r"([A-Za-z][\w.]*?)[.!?]+[\"')\]]*\s+$", text[: m.end()])
        if prev and prev.group(1).lower().rstrip(".") in ABBREVIATIONS:
            continue
        cuts.add(nxt)
    bounds = sorted(cuts | {0, len(text)})
    sentences = []
    for a, b in zip(bounds, bounds[1:]):
        chunk = text[a:b].strip()
        if chunk:
            sentences.append(chunk)
    return sentences


_TOKEN = re.compile(r"\w+(?:'\w+)?|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Whitespace/punctuation tokenizer used for unparsed text."""
    return _TOKEN.findall(text)


def sentences_for(email_id: str, body: str, parses: dict[tuple[str, int], DependencyGraph]) -> list[str]:
    """Sentence list for an email: parse-file boundaries when present, else the segmenter."""
    indexed = sorted((k[1], g) for k, g in parses.items() if k[0] == email_id)
    if indexed:
        return [g.text for _, g in indexed]
    return sentence_segment(body)


def graphs_for(
    email_id: str,
    sentences: Sequence[str],
    parses: dict[tuple[str, int], DependencyGraph],
) -> list[DependencyGraph]:
    """Per-sentence graphs, substituting a flat fallback where no parse exists."""
    out = []
    for i, sent in enumerate(sentences):
        g = parses.get((email_id, i))
        out.append(g if g is not None else fallback_graph(sent, email_id, i))
    return out
