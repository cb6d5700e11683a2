"""Dependency parses in, phrase subgraphs out.

Loads a CoNLL-U-subset parse file, extracts the nsubj/dobj-anchored
subgraphs the structural view consumes, and shows the fallback subgraph for
sentences without either anchor.
"""

from protomail.parsing import extract_subgraphs, fallback_graph, load_parses_text

PARSES = """\
# email_id = demo
# sent_index = 0
1\tSam\tPROPN\t2\tnsubj
2\teats\tVERB\t0\troot
3\tred\tADJ\t4\tamod
4\tapples\tNOUN\t2\tdobj
5\t.\tPUNCT\t2\tpunct

# email_id = demo
# sent_index = 1
1\tregister\tVERB\t0\troot
2\tfor\tADP\t5\tcase
3\tyour\tPRON\t5\tdet
4\tfree\tADJ\t5\tamod
5\tpass\tNOUN\t1\tdobj
"""

parses = load_parses_text(PARSES)
for (email_id, sent_index), graph in parses.items():
    print(f"== {email_id}[{sent_index}]: {graph.text}")
    print(f"   root: {graph.tokens[graph.root_index].form}")
    for sg in extract_subgraphs(graph):
        print(f"   {sg.anchor_relation:<9} -> {sg.surface_text}")

print("== a sentence with no nsubj/dobj gets a fallback subgraph ==")
greeting = fallback_graph("Best regards .", "demo", 2)
for sg in extract_subgraphs(greeting):
    print(f"   {sg.anchor_relation:<9} -> {sg.surface_text}")
