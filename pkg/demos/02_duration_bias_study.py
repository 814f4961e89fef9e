"""End-to-end duration-bias study on a synthetic corpus.

Writes a 120-recording corpus, then runs prepare -> run -> audit for the
Boost and logistic families in both modes and prints the headline numbers.
Takes well under a minute on one core.

    python3 demos/02_duration_bias_study.py [output_dir]
"""

import json
import sys
import tempfile
from pathlib import Path

from wheezebias import experiment
from wheezebias.synth import SynthConfig, write_corpus

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="wheezebias_"))
data, manifest = write_corpus(root / "corpus", SynthConfig(n_recordings=120, seed=0))

cfg = experiment.load_config(text=f"""
[data]
data_dir = {data}
split_manifest = {manifest}
[experiment]
output_dir = {root / "out"}
families = logistic, boost
n_runs = 5
search_budget = 10
""")

prep = experiment.cmd_prepare(cfg)
for mode, info in prep["modes"].items():
    print(f"{mode}: {info['total']} events, wheeze fraction {info['wheeze_fraction']:.2f}")

run = experiment.cmd_run(cfg)
print(f"trained {run['trained']} models, {len(run['failures'])} failures")

audit = experiment.cmd_audit(cfg)
report = json.loads((cfg.output_dir / "report" / "report.json").read_text())

print("\nmean test MCC        FD      VD     gap")
for fam in report["families"]:
    fd = report["summary"]["fd"][fam]["mcc"]["mean"]
    vd = report["summary"]["vd"][fam]["mcc"]["mean"]
    print(f"  {fam:<12}  {fd:6.3f}  {vd:6.3f}  {fd - vd:6.3f}")

probe = report["extras"]["padding_probe_mcc"]
print(f"\npadding-fraction-only probe: FD MCC {probe['fd']:.3f}, VD MCC {probe['vd']:.3f}")
short = report["extras"]["fn_fraction_below_0325"]
print(f"Boost false negatives shorter than 325 ms: FD {short['fd']['boost']:.0%}, VD {short['vd']['boost']:.0%}")
print(f"\nreport files in {audit['report_dir']}")
