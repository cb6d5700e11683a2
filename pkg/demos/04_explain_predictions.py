"""Why did the model predict that? Prototype evidence at three granularities.

Explains one test email against the projected banks: the most similar
document, sentence, and phrase prototypes, each backed by a real training
example, plus token-level importance from integrated gradients.
"""

from _shared import demo_split, ensure_demo_checkpoint

from protomail.explain import document_token_attributions, explain

bundle, corpus, parses = ensure_demo_checkpoint()
model = bundle.model
split = demo_split(corpus)

target = next(le for le in split.test if le.label == 0)
print(f"== input email {target.email.id} ==")
print("subject:", target.email.subject)
print("body:   ", target.email.body)

report = explain(model, target.email, parses, top_n=2)
print()
print(report.render_text())

print("== token importance toward 'response' (integrated gradients) ==")
attr, tokens = document_token_attributions(model, target.email, parses, steps=64)
ranked = sorted(zip(tokens, attr.token_scores), key=lambda pair: -abs(pair[1]))[:8]
for token, score in ranked:
    print(f"  {token:<12} {score:+.4f}")
print(f"completeness gap: {attr.completeness_gap():.2e}")
