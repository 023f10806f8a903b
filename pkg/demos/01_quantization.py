"""Fixed-point quantization walkthrough.

Shows the symmetric power-of-two quantizer: how a step size is searched per
tensor, what the rounding error looks like, and why the scheme survives
round trips unchanged.
"""

import numpy as np

from qasr.quant import QuantScheme, dequantize, quantize, search_step

rng = np.random.default_rng(0)

print("== a 6-bit scheme with step 1/16 ==")
s = QuantScheme(bits=6, step=0.0625)
print(f"levels span [{-s.max_level}, {s.max_level}], max value {s.max_value}")
for v in (0.0, 0.1234, 0.5, 10.0):
    q = quantize(v, s)
    print(f"  {v:8.4f} -> level {int(q.levels):4d} -> {float(dequantize(q)):8.4f}")

print("\n== step search minimizes squared error ==")
weights = rng.normal(0, 0.25, size=4096)
for bits in (4, 6, 8):
    scheme = search_step(weights, bits)
    err = weights - dequantize(quantize(weights, scheme))
    print(
        f"  {bits}-bit: step 2^{scheme.step_exp:<3d} "
        f"rms error {np.sqrt(np.mean(err**2)):.5f} max {np.abs(err).max():.5f}"
    )

print("\n== round trips are stable ==")
s = search_step(weights, 6)
once = quantize(weights, s)
twice = quantize(dequantize(once), s)
print(f"  levels identical after re-quantization: {np.array_equal(once.levels, twice.levels)}")

print("\n== negation is exact ==")
print(f"  q(-x) == -q(x): {np.array_equal(quantize(-weights, s).levels, -once.levels)}")
