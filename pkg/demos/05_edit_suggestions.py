"""Prototype-driven edit suggestions and the flip-ratio simulation.

Takes predicted-negative drafts, replaces the main-content keyphrase with
one from a topic-matched positive prototype, and re-predicts. The batch
simulation then echoes the position effect: editing main content flips far
more negatives than editing the closing line.
"""

from _shared import demo_split, ensure_demo_checkpoint

from protomail.edits import simulate_edits, suggest_edits

bundle, corpus, parses = ensure_demo_checkpoint()
model = bundle.model
split = demo_split(corpus)
sources = {le.email.id: le for le in split.train}

negatives = [le for le in split.test if le.label == 0]
target = negatives[0].email
print(f"== draft {target.id} ==")
print("body:", target.body)

suggestions = suggest_edits(model, target, parses, "main", sources, seed=0)
print("== suggestions (best first) ==")
for s in suggestions:
    print(f"  replace {s.original_span!r} -> {s.replacement!r}")
    print(f"    edited sentence: {s.edited_text}")
    print(f"    p(response): {s.before_probability:.3f} -> {s.after_probability:.3f} "
          f"(topic match {s.topic_match:.2f}{', random fallback' if s.random_fallback else ''})")

print("== flip-ratio simulation over predicted negatives ==")
report = simulate_edits(
    model, negatives[:25], parses, ["subject", "opening", "main", "closing"],
    seeds=[0, 1, 2], sources=sources,
)
print(report.render_text())
