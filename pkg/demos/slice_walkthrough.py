"""Walk one C function through parsing, the dependence graph and slicing.

Run from the repository root:  python3 demos/slice_walkthrough.py
"""
import os
import warnings

from vulnassess.pdg import build_pdg, parse_source
from vulnassess.slicer import build_idg, find_pois, render_idg

HERE = os.path.dirname(os.path.abspath(__file__))
SOURCE = os.path.join(HERE, "..", "tests", "fixtures", "copy_name.c")

with open(SOURCE, encoding="utf-8") as fh:
    src = fh.read()
with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # the #include line is skipped with a warning
    models, failures = parse_source(src)

f = next(m for m in models if m.name == "copy_name")
pdg = build_pdg(f)

print("statements")
for s in f.statements:
    print(f"  n{s.id:<3} line {s.line:<3} {s.kind:<8} {s.text}")

print("\ndata edges (def -> use)")
for u, v in sorted(pdg.data_edges):
    print(f"  n{u} -> n{v}")
print("control edges")
for u, v in sorted(pdg.control_edges):
    print(f"  n{u} -> n{v}")

pois = find_pois(pdg)
print("\npoints of interest")
for p in pois:
    print(f"  n{p.node} {p.kind} {p.detail}" + (f" ({p.category})" if p.category else ""))

idg = build_idg(pdg, pois)
print("\nretained statements by provenance")
for node in sorted(idg.retained_nodes):
    print(f"  n{node:<3} {idg.provenance[node]}")

print("\nslice handed to the language model\n")
print(render_idg(idg, f))
