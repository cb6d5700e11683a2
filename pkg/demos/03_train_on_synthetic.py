"""Train the full multi-view prototype model on the planted-trigger corpus.

The synthetic generator plants class-correlated phrases ("free pass" vs
"overdue invoice"), so a tiny trainable encoder reaches high validation F1
within a few epochs. The run directory ends up with a split manifest,
per-epoch history, metrics, and a projected checkpoint.
"""

import json

from _shared import OUTPUT, ensure_demo_checkpoint

bundle, corpus, parses = ensure_demo_checkpoint()

history = (OUTPUT / "run" / "history.jsonl").read_text().splitlines()
print("== per-epoch validation weighted F1 ==")
for line in history:
    rec = json.loads(line)
    marker = " <- projected" if rec["projected"] else ""
    print(f"  epoch {rec['epoch']:>2}: {rec['val']['weighted_f1']:.4f}{marker}")

metrics = json.loads((OUTPUT / "run" / "metrics.json").read_text())
print("== final (projected) model ==")
print(f"  val  weighted F1: {metrics['val']['weighted_f1']:.4f}")
print(f"  test weighted F1: {metrics['test']['weighted_f1']:.4f}")
print(f"  confusion (test): {metrics['test']['confusion']}")

print("== prototype banks are projected onto real training units ==")
for granularity, bank in bundle.model.banks.items():
    example = bank.projection[0]
    print(f"  {granularity}: {bank.count} prototypes; #0 <- {example.source_id} "
          f"({example.surface_text[:60]!r})")
