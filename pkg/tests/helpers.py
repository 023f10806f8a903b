"""Shared test fixtures: random model builders and the straight-line LSTM
oracle the engine is checked against.

The oracle was written first, directly from the six recurrence equations,
and deliberately avoids every helper the engine uses.
"""

import warnings

import numpy as np

from qasr.rnn import (
    LstmLayerParams,
    OutputLayerParams,
    default_format,
    quantize_layer,
    quantize_output,
)


def straight_line_lstm_step(p, x, h_prev, c_prev):
    """Independent reference for one peephole-LSTM step, element by element."""
    H = p.b_i.shape[0]
    i = np.empty(H)
    f = np.empty(H)
    o = np.empty(H)
    c_tilde = np.empty(H)
    c_new = np.empty(H)
    h_new = np.empty(H)
    for n in range(H):
        z_i = np.dot(p.W_xi[n], x) + np.dot(p.W_hi[n], h_prev) + p.w_ci[n] * c_prev[n] + p.b_i[n]
        z_f = np.dot(p.W_xf[n], x) + np.dot(p.W_hf[n], h_prev) + p.w_cf[n] * c_prev[n] + p.b_f[n]
        z_c = np.dot(p.W_xc[n], x) + np.dot(p.W_hc[n], h_prev) + p.b_c[n]
        i[n] = 1.0 / (1.0 + np.exp(-z_i))
        f[n] = 1.0 / (1.0 + np.exp(-z_f))
        c_tilde[n] = np.tanh(z_c)
        c_new[n] = f[n] * c_prev[n] + i[n] * c_tilde[n]
    for n in range(H):
        z_o = np.dot(p.W_xo[n], x) + np.dot(p.W_ho[n], h_prev) + p.w_co[n] * c_new[n] + p.b_o[n]
        o[n] = 1.0 / (1.0 + np.exp(-z_o))
        h_new[n] = o[n] * np.tanh(c_new[n])
    return h_new, c_new


def make_layer(d, h, rng, weight_scale=1.0):
    def mat(rows, cols, fan):
        return rng.normal(0.0, weight_scale / np.sqrt(fan), size=(rows, cols))

    return LstmLayerParams(
        W_xi=mat(h, d, d), W_xf=mat(h, d, d), W_xo=mat(h, d, d), W_xc=mat(h, d, d),
        W_hi=mat(h, h, h), W_hf=mat(h, h, h), W_ho=mat(h, h, h), W_hc=mat(h, h, h),
        w_ci=rng.normal(0.0, 0.1, size=h),
        w_cf=rng.normal(0.0, 0.1, size=h),
        w_co=rng.normal(0.0, 0.1, size=h),
        b_i=rng.normal(0.0, 0.1, size=h),
        b_f=rng.normal(0.0, 0.1, size=h),
        b_o=rng.normal(0.0, 0.1, size=h),
        b_c=rng.normal(0.0, 0.1, size=h),
    )


def make_output(h, labels, rng):
    return OutputLayerParams(
        W=rng.normal(0.0, 1.0 / np.sqrt(h), size=(labels, h)),
        b=rng.normal(0.0, 0.1, size=labels),
    )


def zero_layer(d, h):
    z = LstmLayerParams(
        W_xi=np.zeros((h, d)), W_xf=np.zeros((h, d)), W_xo=np.zeros((h, d)),
        W_xc=np.zeros((h, d)),
        W_hi=np.zeros((h, h)), W_hf=np.zeros((h, h)), W_ho=np.zeros((h, h)),
        W_hc=np.zeros((h, h)),
        w_ci=np.zeros(h), w_cf=np.zeros(h), w_co=np.zeros(h),
        b_i=np.zeros(h), b_f=np.zeros(h), b_o=np.zeros(h), b_c=np.zeros(h),
    )
    return z


def quantize_model(layers, output, weight_bits=6, sig_in_exp=-7, **fmt_kw):
    """Attach quantized twins: first layer uses sig_in_exp, the rest chain
    on the default hidden-signal scheme."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # zero test layers trip the all-zero fallback
        for li, p in enumerate(layers):
            fmt = default_format(sig_in_exp=sig_in_exp if li == 0 else -7, **fmt_kw)
            p.quantized = quantize_layer(p, fmt, weight_bits=weight_bits)
        if output is not None:
            output.quantized = quantize_output(
                output, layers[-1].quantized.fmt.sig_out, weight_bits=weight_bits
            )
    return layers, output
