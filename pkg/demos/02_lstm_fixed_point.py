"""Float vs fixed-point LSTM forward passes.

Builds a random 3x256 stack, quantizes it at several weight widths and
tracks how far the integer datapath drifts from the double-precision
reference. More weight bits, less drift.
"""

import numpy as np

from qasr.rnn import (
    build_lut,
    default_format,
    lstm_step,
    quantize_layer,
    zero_state,
)
from qasr.toy import _random_layer

rng = np.random.default_rng(7)
layers = [_random_layer(123, 256, rng), _random_layer(256, 256, rng), _random_layer(256, 256, rng)]
xs = rng.uniform(-1, 1, size=(20, 123))

print("== activation lookup tables ==")
lut = build_lut("sigmoid")
print(f"sigmoid LUT: {lut.n} entries over [{lut.lo}, {lut.hi}], sigmoid(0) -> {lut.apply_real(0.0)}")
tanh = build_lut("tanh")
print(f"tanh odd symmetry exact: {np.array_equal(tanh.entries[1:], -tanh.entries[1:][::-1])}")

print("\n== float vs fixed drift by weight width ==")
for bits in (4, 5, 6, 8):
    for li, p in enumerate(layers):
        fmt = default_format(sig_in_exp=-7)
        p.quantized = quantize_layer(p, fmt, weight_bits=bits)
    stf = [zero_state(256) for _ in layers]
    stq = [zero_state(256) for _ in layers]
    worst = 0.0
    for x in xs:
        hf, hq = x, x
        for li, p in enumerate(layers):
            hf, stf[li] = lstm_step(p, hf, stf[li], mode="float")
            hq, stq[li] = lstm_step(p, hq, stq[li], mode="fixed")
        worst = max(worst, np.abs(hf - hq).max())
    print(f"  {bits}-bit weights, 8-bit signals, 16-bit cells: worst |h_f - h_q| = {worst:.4f}")
