"""The HTTP inference service, exercised in-process.

Builds the FastAPI app over the demo checkpoint and walks the endpoints the
web client uses: /health, /predict (with and without a parse block),
/explain, /suggest, and /prototypes. To serve over a real socket instead:

    protomail serve --checkpoint demos/output/run/checkpoint --port 8000
"""

from _shared import ensure_demo_checkpoint

from fastapi.testclient import TestClient
from protomail.service import create_app

bundle, corpus, parses = ensure_demo_checkpoint()
client = TestClient(create_app(bundle))

print("== GET /health ==")
print(client.get("/health").json())

draft = {
    "subject": "overdue invoice reminder",
    "body": "Hi Anna . We will send the overdue invoice shortly . Best regards .",
}

print("== POST /predict (no parse block: structural view degraded) ==")
print(client.post("/predict", json=draft).json())

parse_block = """# email_id = request
# sent_index = 0
1\tHi\tINTJ\t0\troot
2\tAnna\tPROPN\t1\tvocative
3\t.\tPUNCT\t1\tpunct

# email_id = request
# sent_index = 1
1\tWe\tPRON\t3\tnsubj
2\twill\tAUX\t3\taux
3\tsend\tVERB\t0\troot
4\tthe\tDET\t6\tdet
5\toverdue\tADJ\t6\tamod
6\tinvoice\tNOUN\t3\tdobj
7\tshortly\tADV\t3\tadvmod
8\t.\tPUNCT\t3\tpunct

# email_id = request
# sent_index = 2
1\tBest\tADJ\t2\tamod
2\tregards\tNOUN\t0\troot
3\t.\tPUNCT\t2\tpunct
"""

print("== POST /predict (with a full parse block) ==")
print(client.post("/predict", json={**draft, "parse_block": parse_block}).json())

print("== POST /explain (top document prototype) ==")
doc = client.post("/explain", json={**draft, "parse_block": parse_block, "top_n": 1}).json()
top = doc["evidence"]["document"][0]
print(f"  predicted label {doc['predicted_label']}, top prototype from {top['source_id']} "
      f"(similarity {top['similarity']:.3f})")

print("== POST /suggest (main content) ==")
doc = client.post("/suggest", json={**draft, "parse_block": parse_block, "position": "main", "seed": 0}).json()
for s in doc["suggestions"][:2]:
    print(f"  {s['original_span']!r} -> {s['replacement']!r} "
          f"(p {s['before_probability']:.3f} -> {s['after_probability']:.3f})")

print("== GET /prototypes (first document prototype) ==")
doc = client.get("/prototypes").json()
print(doc["prototypes"]["document"][0])
