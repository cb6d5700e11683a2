"""Email corpus handling: raw-message parsing, response labels, balanced splits.

Raw messages are plain RFC-822-ish text files (maildir layout).  The on-disk
corpus store is line-delimited JSON with the fields id, subject, body,
recipient_org, interests, label.
"""

from __future__ import annotations

import dataclasses
import email.utils
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

#: Marker returned for organizations with no known interests.
INTERESTS_UNKNOWN = ("unknown",)


class CorpusError(ValueError):
    """Raised for unrecoverable ingestion problems (bad file, bad split)."""


@dataclass
class Email:
    """One email record. ``sentences`` is filled in by the parsing stage."""

    id: str
    subject: str
    body: str
    recipient_org: str | None = None
    interests: list[str] | None = None
    sentences: list[str] = field(default_factory=list)


@dataclass
class LabeledEmail:
    email: Email
    label: int  # 1 = responded (reply/forward/click/view), 0 = no response
    source_corpus: str = "generic"  # "enron" | "generic"


@dataclass
class SplitCorpus:
    train: list[LabeledEmail]
    val: list[LabeledEmail]
    test: list[LabeledEmail]
    seed: int
    ratios: tuple[float, float, float]

    def split(self, name: str) -> list[LabeledEmail]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


@dataclass
class MarkerConfig:
    """Reply/forward heuristics used to label the Enron archive."""

    subject_prefixes: tuple[str, ...] = ("re:", "fw:", "fwd:")
    body_markers: tuple[str, ...] = (
        "-----Original Message-----",
        "---------------------- Forwarded by",
    )


DEFAULT_MARKERS = MarkerConfig()

_HEADER_LINE = re.compile(r"^[A-Za-z][A-Za-z0-9_-]*:")


def _split_headers(raw: str) -> tuple[dict[str, str], str]:
    """Split a raw message into (headers, body) at the first blank line.

    Header continuation lines (leading whitespace) are folded into the
    previous header. The body is returned verbatim.
    """
    lines = raw.split("\n")
    headers: dict[str, str] = {}
    current: str | None = None
    body_start = len(lines)
    for i, line in enumerate(lines):
        if line.strip() == "":
            body_start = i + 1
            break
        if line[:1] in (" ", "\t") and current is not None:
            headers[current] += " " + line.strip()
        elif _HEADER_LINE.match(line):
            key, _, value = line.partition(":")
            current = key.strip().lower()
            headers[current] = value.strip()
        else:
            # Not header-shaped: headers end here, body starts at this line.
            body_start = i
            break
    return headers, "\n".join(lines[body_start:])


def _org_of(to_header: str) -> str | None:
    """Domain of the first To-address, or None."""
    for _, addr in email.utils.getaddresses([to_header]):
        if "@" in addr:
            return addr.rsplit("@", 1)[1].strip().lower() or None
    return None


def parse_raw_email(raw: str, email_id: str, headerless: bool = False) -> Email:
    """Parse one raw message into an Email.

    Subject and the first To-address domain are pulled from the headers; the
    body is everything after the first blank line, kept verbatim (including
    quoted-printable artifacts and signature separators). ``headerless``
    treats the whole input as body.
    """
    if headerless:
        subject, org, body = "", None, raw
    else:
        headers, body = _split_headers(raw)
        if "subject" not in headers:
            raise CorpusError(f"{email_id}: no Subject header (pass headerless=True for bare text)")
        subject = headers.get("subject", "")
        org = _org_of(headers.get("to", ""))
    if not body.strip():
        raise CorpusError(f"{email_id}: empty body after normalization")
    return Email(id=email_id, subject=subject, body=body, recipient_org=org)


def label_enron(email_rec: Email, markers: MarkerConfig = DEFAULT_MARKERS) -> LabeledEmail:
    """Assign the reply/forward response label to a parsed Enron email.

    Label 1 iff the subject carries a reply/forward prefix or the body
    contains a quoted/forwarded-message marker line. When a body marker is
    present the body is truncated to the text after that line (a suffix of
    the original body); otherwise the body is kept whole.
    """
    subject_hit = email_rec.subject.strip().lower().startswith(markers.subject_prefixes)
    body = email_rec.body
    marker_at = None
    for line_start in _line_starts(body):
        for marker in markers.body_markers:
            if body.startswith(marker, line_start):
                marker_at = line_start
                break
        if marker_at is not None:
            break
    label = 1 if (subject_hit or marker_at is not None) else 0
    if marker_at is not None:
        line_end = body.find("\n", marker_at)
        body = "" if line_end < 0 else body[line_end + 1 :]
    out = dataclasses.replace(email_rec, body=body) if label else email_rec
    return LabeledEmail(email=out, label=label, source_corpus="enron")


def _line_starts(text: str) -> Iterable[int]:
    yield 0
    pos = text.find("\n")
    while pos >= 0:
        yield pos + 1
        pos = text.find("\n", pos + 1)


def ingest_enron_dir(root: str | Path, markers: MarkerConfig = DEFAULT_MARKERS) -> list[LabeledEmail]:
    """Walk a maildir-style directory, parse and label every message file.

    Files that fail to parse (no body, no subject) are skipped with a
    diagnostic. Labeled emails whose body was truncated to nothing are
    likewise dropped at ingestion.
    """
    root = Path(root)
    out: list[LabeledEmail] = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        try:
            parsed = parse_raw_email(path.read_text(encoding="utf-8", errors="replace"), email_id=rel)
            labeled = label_enron(parsed, markers)
        except CorpusError as err:
            log.warning("skipping %s: %s", rel, err)
            continue
        if not labeled.email.body.strip():
            log.warning("skipping %s: body empty after reply-marker truncation", rel)
            continue
        out.append(labeled)
    return out


# ---------------------------------------------------------------------------
# Generic (line-delimited) corpus format
# ---------------------------------------------------------------------------

def _validate_record(rec: object, seen_ids: set[str]) -> tuple[LabeledEmail | None, str | None]:
    if not isinstance(rec, dict):
        return None, "record is not an object"
    rid = rec.get("id")
    if not isinstance(rid, str) or not rid:
        return None, "missing or non-string id"
    if rid in seen_ids:
        return None, f"duplicate id {rid!r}"
    body = rec.get("body")
    if not isinstance(body, str) or not body.strip():
        return None, "missing or empty body"
    subject = rec.get("subject", "")
    if not isinstance(subject, str):
        return None, "subject is not a string"
    label = rec.get("label")
    if label not in (0, 1):
        return None, f"label {label!r} not in {{0, 1}}"
    org = rec.get("recipient_org")
    if org is not None and not isinstance(org, str):
        return None, "recipient_org is not a string"
    interests = rec.get("interests")
    if interests is not None and not (
        isinstance(interests, list) and all(isinstance(x, str) for x in interests)
    ):
        return None, "interests is not a list of strings"
    mail = Email(id=rid, subject=subject, body=body, recipient_org=org, interests=interests)
    return LabeledEmail(email=mail, label=label, source_corpus="generic"), None


def load_generic_corpus(path: str | Path, max_invalid_fraction: float = 0.10) -> list[LabeledEmail]:
    """Load a line-delimited corpus file, skipping invalid records.

    Each invalid line is reported with its line number. More than
    ``max_invalid_fraction`` invalid lines aborts the load, since the file is
    then most likely malformed as a whole.
    """
    path = Path(path)
    out: list[LabeledEmail] = []
    seen: set[str] = set()
    n_lines = 0
    errors: list[str] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            n_lines += 1
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                errors.append(f"line {lineno}: invalid JSON ({err.msg})")
                continue
            labeled, problem = _validate_record(rec, seen)
            if labeled is None:
                errors.append(f"line {lineno}: {problem}")
                continue
            seen.add(labeled.email.id)
            out.append(labeled)
    for msg in errors:
        log.warning("%s: %s", path.name, msg)
    if n_lines and len(errors) > max_invalid_fraction * n_lines:
        raise CorpusError(
            f"{path}: {len(errors)}/{n_lines} invalid lines exceeds "
            f"{max_invalid_fraction:.0%}; corpus likely malformed"
        )
    return out


def write_generic_corpus(emails: Iterable[LabeledEmail], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for le in emails:
            rec = {
                "id": le.email.id,
                "subject": le.email.subject,
                "body": le.email.body,
                "recipient_org": le.email.recipient_org,
                "interests": list(le.email.interests) if le.email.interests is not None else None,
                "label": le.label,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Balancing and splitting
# ---------------------------------------------------------------------------

def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items over ratios."""
    raw = [n * r for r in ratios]
    counts = [int(x) for x in raw]
    leftovers = sorted(range(len(ratios)), key=lambda i: (raw[i] - counts[i], -ratios[i]), reverse=True)
    for i in range(n - sum(counts)):
        counts[leftovers[i % len(ratios)]] += 1
    return counts


def balance_and_split(
    corpus: Sequence[LabeledEmail],
    seed: int,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> SplitCorpus:
    """Downsample the majority class and split into train/val/test.

    The minority-class count is preserved; the majority class is sampled
    uniformly at random under ``seed``. Every split ends up exactly
    class-balanced, and the whole operation is deterministic for a fixed
    (corpus, seed, ratios).
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise CorpusError(f"ratios {ratios} must be nonnegative and sum to 1")
    by_class = {0: [le for le in corpus if le.label == 0], 1: [le for le in corpus if le.label == 1]}
    if min(len(v) for v in by_class.values()) < 2:
        raise CorpusError("need at least 2 examples of each class")
    rng = random.Random(seed)
    n = min(len(by_class[0]), len(by_class[1]))
    counts = _allocate(n, ratios)
    if any(c == 0 for c in counts):
        raise CorpusError(f"ratios {ratios} leave a split with zero examples of a class (n={n} per class)")
    parts: dict[str, list[LabeledEmail]] = {"train": [], "val": [], "test": []}
    for cls in (0, 1):
        pool = list(by_class[cls])
        rng.shuffle(pool)
        pool = pool[:n]
        offset = 0
        for name, c in zip(("train", "val", "test"), counts):
            parts[name].extend(pool[offset : offset + c])
            offset += c
    for name in parts:
        rng.shuffle(parts[name])
    return SplitCorpus(train=parts["train"], val=parts["val"], test=parts["test"], seed=seed, ratios=ratios)


def split_manifest(split: SplitCorpus) -> str:
    """Canonical JSON manifest (ids per split + seed + ratios) for exact replay."""
    doc = {
        "seed": split.seed,
        "ratios": list(split.ratios),
        "splits": {name: [le.email.id for le in split.split(name)] for name in ("train", "val", "test")},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_split_manifest(split: SplitCorpus, path: str | Path) -> None:
    Path(path).write_text(split_manifest(split), encoding="utf-8")


def load_split_manifest(path: str | Path, corpus: Sequence[LabeledEmail]) -> SplitCorpus:
    """Rebuild a SplitCorpus from a manifest against the same corpus."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    by_id: dict[str, LabeledEmail] = {le.email.id: le for le in corpus}
    parts = {}
    for name in ("train", "val", "test"):
        missing = [i for i in doc["splits"][name] if i not in by_id]
        if missing:
            raise CorpusError(f"manifest references unknown email ids: {missing[:5]}")
        parts[name] = [by_id[i] for i in doc["splits"][name]]
    return SplitCorpus(
        train=parts["train"], val=parts["val"], test=parts["test"],
        seed=doc["seed"], ratios=tuple(doc["ratios"]),
    )


# ---------------------------------------------------------------------------
# Organization-interest enrichment (offline table)
# ---------------------------------------------------------------------------

@dataclass
class EnrichmentTable:
    """Maps a normalized organization name to its list of interest strings."""

    interests: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "EnrichmentTable":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(interests={k.strip().lower(): list(v) for k, v in doc.items()})

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]]) -> "EnrichmentTable":
        return cls(interests={k.strip().lower(): list(v) for k, v in mapping.items()})

    def lookup(self, org: str) -> list[str]:
        """Interests for an organization; the unknown marker if absent."""
        return self.interests.get(org.strip().lower(), list(INTERESTS_UNKNOWN))


def enrich_interests(email_rec: Email, table: EnrichmentTable) -> Email:
    """Attach interests from the table. Emails without an organization pass through."""
    if email_rec.recipient_org is None:
        return email_rec
    return dataclasses.replace(email_rec, interests=table.lookup(email_rec.recipient_org))
