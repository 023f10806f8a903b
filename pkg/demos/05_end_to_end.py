"""Full pipeline on generated toy models: float vs fixed vs simulated
hardware, with the cycle and memory report."""

import tempfile

from qasr.container import ModelContainer
from qasr.engine import RunConfig, decode, write_report
from qasr.frontend import read_feature_file
from qasr.toy import gen_toy
from qasr.wordlm import parse_arpa_file
import sys

with tempfile.TemporaryDirectory() as tmp:
    paths = gen_toy("tiny,frames=150,seed=5,blank_bias=1.0,out_gain=2.0", tmp)
    am = ModelContainer.read(paths["am"])
    lm = ModelContainer.read(paths["lm"])
    arpa = parse_arpa_file(paths["arpa"])
    feats, _ = read_feature_file(paths["features"])

    print(f"acoustic model: {am.layer_dims} -> {am.labels} labels")
    print(f"character LM:   {lm.layer_dims} -> {lm.labels} labels")
    print(f"stream:         {feats.shape[0]} frames\n")

    results = {}
    for mode in ("float", "fixed", "hwsim"):
        res = decode(am, lm, arpa, feats, RunConfig(mode=mode, beam_width=8, prune_period=25))
        results[mode] = res
        print(f"{mode:6s}: transcript {res.transcript!r}  "
              f"({res.report['wall.seconds']:.2f}s)")

    same = results["fixed"].transcript == results["hwsim"].transcript
    print(f"\nfixed and hwsim transcripts identical: {same}")
    print("\n== hwsim report ==")
    write_report(results["hwsim"].report, sys.stdout)
