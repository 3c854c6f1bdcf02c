"""End-to-end assessment of the shipped fixture with the offline mock provider,
then the metric report for the shipped prediction file.

Run from the repository root:  python3 demos/pipeline.py
"""
import json
import os
import tempfile
import warnings

from vulnassess.assessor import assess, load_checkpoint
from vulnassess.evaluation import PredictionSet, evaluate, report_table
from vulnassess.pdg import split_functions
from vulnassess.vir import MockProvider, ProviderConfig, VirGenerator, render_vir

FIX = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests", "fixtures")

with open(os.path.join(FIX, "copy_name.c"), encoding="utf-8") as fh:
    src = fh.read()
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    functions = split_functions(src)

params, bank, header = load_checkpoint(os.path.join(FIX, "model.npz"))
print("checkpoint", header["meta"])

provider = MockProvider()
with tempfile.TemporaryDirectory() as cache:
    gen = VirGenerator(ProviderConfig(cache_dir=cache), provider=provider)
    for name, text, _ in functions:
        a = assess(text, params, bank, gen)
        print(f"\n== {name}: severity {a.severity} (confidence {a.confidence:.3f})")
        print("slice:\n" + a.code)
        print("intention report:\n" + render_vir(a.vir))
        print("suggestion:", a.suggestion)
    before = provider.calls
    for _, text, _ in functions:
        assess(text, params, bank, gen)
    print(f"\nprovider calls: first pass {before}, second pass {provider.calls - before}")

with open(os.path.join(FIX, "predictions.jsonl"), encoding="utf-8") as fh:
    rows = [json.loads(line) for line in fh]
report = evaluate(PredictionSet.from_items((r["label"], r["distribution"]) for r in rows))
print("\n" + report_table(report))
