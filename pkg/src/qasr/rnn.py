"""LSTM engine with peephole connections, in float and fixed-point modes.

The float path is the numerical reference. The fixed path evaluates the same
six recurrence equations on integer levels: matrix-vector products accumulate
in wide integers (held exactly in float64, every intermediate < 2^53), the
accumulated pre-activation is re-quantized to a 16-bit scheme, activations go
through lookup tables, the cell is kept in a 16-bit scheme and the layer
output in an 8-bit signal scheme. Those are the only rounding points, which
is what makes a separate hardware emulation able to reproduce the exact same
bits (see hwsim).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .quant import QuantScheme, quantize, round_half_away, search_step

__all__ = [
    "LstmLayerParams",
    "OutputLayerParams",
    "LstmState",
    "ActivationLut",
    "build_lut",
    "LayerFixedFormat",
    "default_format",
    "QuantizedLstmLayer",
    "QuantizedOutputLayer",
    "quantize_layer",
    "quantize_output",
    "lstm_step",
    "fixed_step_levels",
    "stack_forward",
    "count_params",
    "softmax",
]

GATE_NAMES = ("i", "f", "o", "c")
PEEP_NAMES = ("ci", "cf", "co")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class LstmLayerParams:
    """One layer of the peephole LSTM: eight matrices, three diagonal
    peephole vectors and four biases, with an optional quantized twin."""

    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xo: np.ndarray
    W_xc: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_ho: np.ndarray
    W_hc: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray
    quantized: Optional["QuantizedLstmLayer"] = None

    def __post_init__(self):
        h, d = self.W_xi.shape
        for name in ("W_xf", "W_xo", "W_xc"):
            if getattr(self, name).shape != (h, d):
                raise ValueError(f"{name} shape mismatch")
        for name in ("W_hi", "W_hf", "W_ho", "W_hc"):
            if getattr(self, name).shape != (h, h):
                raise ValueError(f"{name} shape mismatch")
        for name in ("w_ci", "w_cf", "w_co", "b_i", "b_f", "b_o", "b_c"):
            if getattr(self, name).shape != (h,):
                raise ValueError(f"{name} shape mismatch")

    @property
    def hidden(self) -> int:
        return self.W_xi.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_xi.shape[1]

    def input_mats(self):
        return (self.W_xi, self.W_xf, self.W_xo, self.W_xc)

    def recurrent_mats(self):
        return (self.W_hi, self.W_hf, self.W_ho, self.W_hc)

    def peepholes(self):
        return (self.w_ci, self.w_cf, self.w_co)

    def biases(self):
        return (self.b_i, self.b_f, self.b_o, self.b_c)

    def n_params(self) -> int:
        h, d = self.hidden, self.input_dim
        return 4 * h * (d + h) + 7 * h


@dataclass
class OutputLayerParams:
    """Fully connected output layer feeding the softmax."""

    W: np.ndarray
    b: np.ndarray
    quantized: Optional["QuantizedOutputLayer"] = None

    def __post_init__(self):
        if self.W.shape[0] != self.b.shape[0]:
            raise ValueError("output bias length must match label count")

    @property
    def labels(self) -> int:
        return self.W.shape[0]

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    def n_params(self) -> int:
        return self.W.size + self.b.size


@dataclass
class LstmState:
    """Previous output h and cell c. In fixed mode both hold integer levels
    (h in the layer's output signal scheme, c in the 16-bit cell scheme)."""

    h: np.ndarray
    c: np.ndarray


def zero_state(hidden: int, batch: Optional[int] = None) -> LstmState:
    shape = (hidden,) if batch is None else (hidden, batch)
    return LstmState(h=np.zeros(shape), c=np.zeros(shape))


# ---------------------------------------------------------------------------
# Lookup-table activations
# ---------------------------------------------------------------------------


@dataclass
class ActivationLut:
    """Uniformly sampled activation table with round-to-nearest indexing.

    The grid is mid-tread: x_k = lo + k * h with a sample exactly at zero,
    so sigmoid(0) = 0.5 and tanh(0) = 0 are table entries and a zero input
    passes through the fixed datapath without bias. tanh entries for x > 0
    are mirrored into x < 0 during construction, making entry(-x_k) ==
    -entry(x_k) exact. Entries are integer levels at step 2**out_exp with
    |level| <= 2**-out_exp, so +-1.0 is representable exactly. Out-of-range
    inputs clamp to the end entries.
    """

    kind: str
    entries: np.ndarray
    lo: float
    hi: float
    out_exp: int

    def __post_init__(self):
        if np.any(np.diff(self.entries) < 0):
            raise ValueError("LUT entries must be monotone non-decreasing")

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.n

    def grid(self) -> np.ndarray:
        return self.lo + np.arange(self.n) * self.spacing

    def _index(self, u):
        idx = np.floor(u + 0.5)
        return np.clip(idx, 0, self.n - 1).astype(np.int64)

    def apply_real(self, x):
        """Table lookup for real inputs; returns real outputs."""
        u = (np.asarray(x, dtype=np.float64) - self.lo) / self.spacing
        return self.entries[self._index(u)] * 2.0**self.out_exp

    def apply_levels(self, levels, in_exp: int):
        """Table lookup for integer levels at scale 2**in_exp.

        Returns integer entry levels (at scale 2**out_exp). The index
        computation is exact: levels times a power of two, offset by a
        dyadic constant.
        """
        u = (np.asarray(levels, dtype=np.float64) * 2.0**in_exp - self.lo) / self.spacing
        return self.entries[self._index(u)].astype(np.float64)


def build_lut(
    kind: str,
    resolution: int = 1024,
    input_range: tuple = (-8.0, 8.0),
    out_exp: int = -8,
) -> ActivationLut:
    """Sample sigmoid or tanh into a fixed-point table.

    resolution must be a power of two (it maps to a BRAM address width).
    """
    if resolution < 2 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two, got {resolution}")
    if kind not in ("sigmoid", "tanh"):
        raise ValueError(f"unknown activation kind {kind!r}")
    lo, hi = float(input_range[0]), float(input_range[1])
    if not lo < hi:
        raise ValueError("empty input range")
    h = (hi - lo) / resolution
    x = lo + np.arange(resolution) * h
    max_level = int(round(2.0**-out_exp))

    def q(vals):
        return np.clip(round_half_away(vals * 2.0**-out_exp), -max_level, max_level)

    if kind == "sigmoid":
        lev = q(1.0 / (1.0 + np.exp(-x)))
    else:
        lev = q(np.tanh(x))
        # force exact odd symmetry about the zero sample
        half = resolution // 2
        if x[half] == 0.0:
            lev[1:half] = -lev[resolution - 1 : half : -1]
            lev[half] = 0
    return ActivationLut(kind=kind, entries=lev.astype(np.int32), lo=lo, hi=hi, out_exp=out_exp)


# ---------------------------------------------------------------------------
# Quantized layer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerFixedFormat:
    """Signal, cell and pre-activation schemes plus the activation tables
    shared by the fixed-point datapath of one layer."""

    sig_in: QuantScheme
    sig_out: QuantScheme
    cell: QuantScheme
    pre: QuantScheme
    lut_sigmoid: ActivationLut
    lut_tanh: ActivationLut

    @property
    def act_exp(self) -> int:
        return self.lut_sigmoid.out_exp


@dataclass
class QuantizedLstmLayer:
    """Integer-level twin of LstmLayerParams.

    Gate matrices are stacked (i, f, o, c) into (4H, D) / (4H, H) blocks so a
    whole step is two matrix products. Levels are stored as float64 holding
    exact integers; construction verifies the worst-case accumulator stays
    below 2^52 so all arithmetic is exact.
    """

    wx_lev: np.ndarray
    wh_lev: np.ndarray
    peep_lev: np.ndarray
    bias_lev: np.ndarray
    wx_exp: tuple
    wh_exp: tuple
    peep_exp: tuple
    bias_exp: tuple
    weight_bits: int
    bias_bits: int
    fmt: LayerFixedFormat
    gate_acc_exp: tuple = field(init=False)

    def __post_init__(self):
        ex = self.fmt.sig_in.step_exp
        eh = self.fmt.sig_out.step_exp
        ec = self.fmt.cell.step_exp
        accs = []
        for g in range(4):
            scales = [self.wx_exp[g] + ex, self.wh_exp[g] + eh, self.bias_exp[g]]
            if g < 3:  # i, f, o carry a peephole term
                scales.append(self.peep_exp[g] + ec)
            accs.append(min(scales))
        object.__setattr__(self, "gate_acc_exp", tuple(accs))
        self._check_accumulator_bound()

    @property
    def hidden(self) -> int:
        return self.wh_lev.shape[1]

    @property
    def input_dim(self) -> int:
        return self.wx_lev.shape[1]

    def _check_accumulator_bound(self):
        h, d = self.hidden, self.input_dim
        max_w = (1 << (self.weight_bits - 1)) - 1
        max_b = (1 << (self.bias_bits - 1)) - 1
        ex = self.fmt.sig_in.step_exp
        eh = self.fmt.sig_out.step_exp
        ec = self.fmt.cell.step_exp
        for g in range(4):
            e = self.gate_acc_exp[g]
            bound = max_w * self.fmt.sig_in.max_level * d * 2.0 ** (self.wx_exp[g] + ex - e)
            bound += max_w * self.fmt.sig_out.max_level * h * 2.0 ** (self.wh_exp[g] + eh - e)
            bound += max_b * 2.0 ** (self.bias_exp[g] - e)
            if g < 3:
                bound += max_w * self.fmt.cell.max_level * 2.0 ** (self.peep_exp[g] + ec - e)
            if bound >= 2.0**52:
                raise ValueError("fixed-point accumulator would exceed exact float64 range")

    def gate_rows(self, g: int) -> slice:
        h = self.hidden
        return slice(g * h, (g + 1) * h)


def default_format(
    sig_in_exp: int = -7,
    sig_out_exp: int = -7,
    signal_bits: int = 8,
    cell_bits: int = 16,
    cell_exp: int = -8,
    pre_exp: int = -8,
    lut_resolution: int = 1024,
    lut_range: tuple = (-8.0, 8.0),
    act_exp: int = -8,
) -> LayerFixedFormat:
    """Fixed formats used when nothing better is known: 8-bit signals,
    16-bit cells and pre-activations, 1024-entry tables over [-8, 8]."""
    return LayerFixedFormat(
        sig_in=QuantScheme(bits=signal_bits, step=2.0**sig_in_exp),
        sig_out=QuantScheme(bits=signal_bits, step=2.0**sig_out_exp),
        cell=QuantScheme(bits=cell_bits, step=2.0**cell_exp),
        pre=QuantScheme(bits=16, step=2.0**pre_exp),
        lut_sigmoid=build_lut("sigmoid", lut_resolution, lut_range, act_exp),
        lut_tanh=build_lut("tanh", lut_resolution, lut_range, act_exp),
    )


def quantize_layer(
    params: LstmLayerParams,
    fmt: LayerFixedFormat,
    weight_bits: int = 6,
    bias_bits: Optional[int] = None,
) -> QuantizedLstmLayer:
    """Direct quantization of one layer: per-matrix step search, then rounding."""
    if bias_bits is None:
        bias_bits = weight_bits
    h = params.hidden

    def q_group(tensors, bits):
        levs, exps = [], []
        for t in tensors:
            scheme = search_step(t, bits)
            levs.append(quantize(t, scheme).levels.astype(np.float64))
            exps.append(scheme.step_exp)
        return levs, tuple(exps)

    wx, wx_exp = q_group(params.input_mats(), weight_bits)
    wh, wh_exp = q_group(params.recurrent_mats(), weight_bits)
    peep, peep_exp = q_group(params.peepholes(), weight_bits)
    bias, bias_exp = q_group(params.biases(), bias_bits)
    return QuantizedLstmLayer(
        wx_lev=np.vstack(wx),
        wh_lev=np.vstack(wh),
        peep_lev=np.vstack(peep),
        bias_lev=np.vstack(bias),
        wx_exp=wx_exp,
        wh_exp=wh_exp,
        peep_exp=peep_exp,
        bias_exp=bias_exp,
        weight_bits=weight_bits,
        bias_bits=bias_bits,
        fmt=fmt,
    )


@dataclass
class QuantizedOutputLayer:
    w_lev: np.ndarray
    b_lev: np.ndarray
    w_exp: int
    b_exp: int
    weight_bits: int
    bias_bits: int
    sig_in: QuantScheme

    def logits(self, h_lev: np.ndarray) -> np.ndarray:
        """Dequantized logits; this is where data leaves the fixed datapath."""
        acc = self.w_lev @ np.asarray(h_lev, dtype=np.float64)
        z = acc * 2.0 ** (self.w_exp + self.sig_in.step_exp)
        b = self.b_lev * 2.0**self.b_exp
        return z + (b[:, None] if z.ndim == 2 else b)


def quantize_output(
    params: OutputLayerParams,
    sig_in: QuantScheme,
    weight_bits: int = 6,
    bias_bits: Optional[int] = None,
) -> QuantizedOutputLayer:
    if bias_bits is None:
        bias_bits = weight_bits
    ws = search_step(params.W, weight_bits)
    bs = search_step(params.b, bias_bits)
    return QuantizedOutputLayer(
        w_lev=quantize(params.W, ws).levels.astype(np.float64),
        b_lev=quantize(params.b, bs).levels.astype(np.float64),
        w_exp=ws.step_exp,
        b_exp=bs.step_exp,
        weight_bits=weight_bits,
        bias_bits=bias_bits,
        sig_in=sig_in,
    )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _float_step(p: LstmLayerParams, x, h, c):
    i = _sigmoid(p.W_xi @ x + p.W_hi @ h + _peep(p.w_ci, c) + _col(p.b_i, x))
    f = _sigmoid(p.W_xf @ x + p.W_hf @ h + _peep(p.w_cf, c) + _col(p.b_f, x))
    c_tilde = np.tanh(p.W_xc @ x + p.W_hc @ h + _col(p.b_c, x))
    c_new = f * c + i * c_tilde
    o = _sigmoid(p.W_xo @ x + p.W_ho @ h + _peep(p.w_co, c_new) + _col(p.b_o, x))
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def _peep(w, c):
    return (w[:, None] if c.ndim == 2 else w) * c


def _col(b, x):
    return b[:, None] if x.ndim == 2 else b


def _requant(acc, from_exp: int, scheme: QuantScheme):
    scaled = acc * 2.0 ** (from_exp - scheme.step_exp)
    m = scheme.max_level
    return np.clip(round_half_away(scaled), -m, m)


def fixed_step_levels(q: QuantizedLstmLayer, x_lev, h_lev, c_lev):
    """One fixed-point step on integer levels.

    x_lev is in sig_in, h_lev in sig_out, c_lev in the cell scheme. Returns
    (h_lev', c_lev') in the same schemes. Shapes (D,)/(H,) or (D,B)/(H,B).
    """
    fmt = q.fmt
    ex, eh, ec = fmt.sig_in.step_exp, fmt.sig_out.step_exp, fmt.cell.step_exp
    e_act = fmt.act_exp
    x_lev = np.asarray(x_lev, dtype=np.float64)
    h_lev = np.asarray(h_lev, dtype=np.float64)
    c_lev = np.asarray(c_lev, dtype=np.float64)

    ax = q.wx_lev @ x_lev
    ah = q.wh_lev @ h_lev

    def gate_acc(g, c_term_lev=None):
        e = q.gate_acc_exp[g]
        acc = ax[q.gate_rows(g)] * 2.0 ** (q.wx_exp[g] + ex - e)
        acc = acc + ah[q.gate_rows(g)] * 2.0 ** (q.wh_exp[g] + eh - e)
        bias = q.bias_lev[g] * 2.0 ** (q.bias_exp[g] - e)
        acc = acc + (bias[:, None] if acc.ndim == 2 else bias)
        if c_term_lev is not None:
            peep = q.peep_lev[g][:, None] if acc.ndim == 2 else q.peep_lev[g]
            acc = acc + peep * c_term_lev * 2.0 ** (q.peep_exp[g] + ec - e)
        return acc, e

    acc_i, e_i = gate_acc(0, c_lev)
    acc_f, e_f = gate_acc(1, c_lev)
    acc_ct, e_ct = gate_acc(3)
    i_lev = fmt.lut_sigmoid.apply_levels(_requant(acc_i, e_i, fmt.pre), fmt.pre.step_exp)
    f_lev = fmt.lut_sigmoid.apply_levels(_requant(acc_f, e_f, fmt.pre), fmt.pre.step_exp)
    ct_lev = fmt.lut_tanh.apply_levels(_requant(acc_ct, e_ct, fmt.pre), fmt.pre.step_exp)

    # c_t = f*c_{t-1} + i*c~ ; align the two products before re-quantizing
    e_fc = e_act + ec
    e_ic = 2 * e_act
    e_cell = min(e_fc, e_ic)
    cell_acc = f_lev * c_lev * 2.0 ** (e_fc - e_cell) + i_lev * ct_lev * 2.0 ** (e_ic - e_cell)
    c_new = _requant(cell_acc, e_cell, fmt.cell)

    acc_o, e_o = gate_acc(2, c_new)
    o_lev = fmt.lut_sigmoid.apply_levels(_requant(acc_o, e_o, fmt.pre), fmt.pre.step_exp)
    tanh_c = fmt.lut_tanh.apply_levels(c_new, ec)
    h_new = _requant(o_lev * tanh_c, 2 * e_act, fmt.sig_out)
    return h_new, c_new


def lstm_step(params: LstmLayerParams, x, state: LstmState, mode: str = "float"):
    """One step of the six-equation recurrence.

    mode "float": x and state are real-valued; returns (h, LstmState).
    mode "fixed": x is real (quantized to the layer's input signal scheme);
    state holds integer levels; the returned h is the dequantized layer
    output while the state keeps the exact levels.
    """
    if mode == "float":
        x = np.asarray(x, dtype=np.float64)
        _check_dims(params, x, state)
        h_new, c_new = _float_step(params, x, state.h, state.c)
        return h_new, LstmState(h=h_new, c=c_new)
    if mode == "fixed":
        q = params.quantized
        if q is None:
            raise ValueError("fixed mode requires quantized parameters")
        x = np.asarray(x, dtype=np.float64)
        _check_dims(params, x, state)
        x_lev = quantize(x, q.fmt.sig_in).levels.astype(np.float64)
        h_lev, c_lev = fixed_step_levels(q, x_lev, state.h, state.c)
        h_real = h_lev * q.fmt.sig_out.step
        return h_real, LstmState(h=h_lev, c=c_lev)
    raise ValueError(f"unknown mode {mode!r}")


def _check_dims(params, x, state):
    if x.shape[0] != params.input_dim:
        raise ValueError(
            f"input dim {x.shape[0]} does not match layer input {params.input_dim}"
        )
    if state.h.shape[0] != params.hidden:
        raise ValueError("state dimension mismatch")


def stack_forward(
    layers: Sequence[LstmLayerParams],
    output: OutputLayerParams,
    x_seq,
    mode: str = "float",
    states: Optional[list] = None,
):
    """Run the layer stack frame by frame and softmax the output tile.

    Returns (probs, states) where probs has one row per input frame; states
    persist across calls so a long stream can be fed in chunks.
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    _check_chain(layers, output, x_seq.shape[-1] if x_seq.size else None)
    if states is None:
        states = [zero_state(p.hidden) for p in layers]
    rows = []
    for x in x_seq:
        h = x
        for li, p in enumerate(layers):
            h, states[li] = lstm_step(p, h, states[li], mode=mode)
        if mode == "float":
            logits = output.W @ h + output.b
        else:
            qo = output.quantized
            if qo is None:
                raise ValueError("fixed mode requires a quantized output layer")
            # h is real but exactly on the signal grid; requantizing is exact
            h_lev = round_half_away(h / qo.sig_in.step)
            logits = qo.logits(h_lev)
        rows.append(softmax(logits))
    probs = np.array(rows) if rows else np.zeros((0, output.labels))
    return probs, states


def _check_chain(layers, output, feat_dim):
    prev = None
    for li, p in enumerate(layers):
        if li == 0:
            if feat_dim is not None and p.input_dim != feat_dim:
                raise ValueError(
                    f"first layer expects {p.input_dim}-dim input, got {feat_dim}"
                )
        elif p.input_dim != prev:
            raise ValueError(f"layer {li} input {p.input_dim} != previous hidden {prev}")
        prev = p.hidden
    if layers and output.hidden != prev:
        raise ValueError("output layer width does not match last hidden size")


def count_params(layers: Sequence[LstmLayerParams], output: Optional[OutputLayerParams]) -> int:
    total = sum(p.n_params() for p in layers)
    if output is not None:
        total += output.n_params()
    return total


def count_params_dims(layer_dims: Sequence[tuple], output_dims: Optional[tuple]) -> int:
    """Same count from (input, hidden) pairs, without materializing weights."""
    total = 0
    for d, h in layer_dims:
        total += 4 * h * (d + h) + 7 * h
    if output_dims is not None:
        h, labels = output_dims
        total += labels * h + labels
    return total
