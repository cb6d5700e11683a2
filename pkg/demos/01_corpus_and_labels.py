"""From raw mail files to a balanced, reproducible split.

Walks the bundled Enron-style fixture messages, shows how the reply/forward
rule assigns response labels (and truncates quoted bodies), then builds a
class-balanced train/val/test split whose manifest replays exactly.
"""

from pathlib import Path

from protomail.corpus import (
    balance_and_split,
    ingest_enron_dir,
    label_enron,
    parse_raw_email,
    split_manifest,
)

FIXTURES = Path(__file__).parent.parent / "tests" / "fixtures" / "enron_raw"

print("== parsing one raw message ==")
raw = (FIXTURES / "allen-p/sent/4").read_text()
email = parse_raw_email(raw, email_id="allen-p/sent/4")
print("subject:       ", email.subject)
print("recipient org: ", email.recipient_org)
print("body:")
print(email.body)

print("== labeling: the body marker truncates to the quoted part ==")
labeled = label_enron(email)
print("label:", labeled.label, "(1 = this email got a response)")
print("kept body:")
print(labeled.email.body)

print("== ingesting the whole fixture directory ==")
corpus = ingest_enron_dir(FIXTURES)
for le in corpus:
    print(f"  {le.email.id:<22} label={le.label} subject={le.email.subject!r}")

print("== balancing and splitting ==")
split = balance_and_split(corpus, seed=7, ratios=(0.6, 0.2, 0.2))
for name in ("train", "val", "test"):
    part = split.split(name)
    pos = sum(le.label for le in part)
    print(f"  {name}: {len(part)} emails ({pos} response / {len(part) - pos} no-response)")

print("== the manifest pins the split byte-for-byte ==")
print(split_manifest(split))
