"""Binary model container: quantized tensors with their schemes, the network
shape and alphabet, and optional float shadow copies.

Layout: magic, version, a canonical-JSON header describing every tensor
(name, shape, bits, step exponent, payload offset), then the payload blobs,
then a CRC32 trailer over everything before it. Levels are bit-packed, so
fifteen 6-bit values occupy ceil(15*6/8) = 12 bytes. Writing is fully
deterministic: write -> read -> write reproduces the bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decoder import Alphabet
from .quant import QuantScheme, quantize, search_step
from .rnn import (
    LayerFixedFormat,
    LstmLayerParams,
    OutputLayerParams,
    QuantizedLstmLayer,
    QuantizedOutputLayer,
    build_lut,
)

__all__ = [
    "ContainerError",
    "FloatModel",
    "ModelContainer",
    "quantize_model",
    "pack_levels",
    "unpack_levels",
    "save_float_model",
    "load_float_model",
]

MAGIC = b"QRNN"
VERSION = 1

LAYER_TENSORS = (
    "W_xi", "W_xf", "W_xo", "W_xc",
    "W_hi", "W_hf", "W_ho", "W_hc",
    "w_ci", "w_cf", "w_co",
    "b_i", "b_f", "b_o", "b_c",
)

DEFAULT_FORMATS = {
    "weight_bits": 6,
    "bias_bits": 6,
    "signal_bits": 8,
    "cell_bits": 16,
    "sig_in_exp": -4,   # feature inputs; one-hot LM inputs use -6
    "sig_exp": -7,      # hidden-layer signals
    "cell_exp": -8,
    "pre_exp": -8,
    "act_exp": -8,
    "lut_resolution": 1024,
    "lut_lo": -8.0,
    "lut_hi": 8.0,
}


class ContainerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Bit packing
# ---------------------------------------------------------------------------


def pack_levels(levels, bits: int) -> bytes:
    """Pack signed levels into a little-endian bitstream, offset-binary."""
    lev = np.asarray(levels, dtype=np.int64).ravel()
    offset = (1 << (bits - 1)) - 1
    vals = (lev + offset).astype(np.uint64)
    if np.any(vals >= (1 << bits)):
        raise ContainerError("level out of range for the declared bit width")
    bit_matrix = ((vals[:, None] >> np.arange(bits, dtype=np.uint64)) & 1).astype(np.uint8)
    return np.packbits(bit_matrix.ravel(), bitorder="little").tobytes()


def unpack_levels(data: bytes, count: int, bits: int) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8)
    bit_stream = np.unpackbits(raw, bitorder="little", count=count * bits)
    bit_matrix = bit_stream.reshape(count, bits).astype(np.int64)
    vals = (bit_matrix << np.arange(bits, dtype=np.int64)).sum(axis=1)
    offset = (1 << (bits - 1)) - 1
    return (vals - offset).astype(np.float64)


# ---------------------------------------------------------------------------
# Float model
# ---------------------------------------------------------------------------


@dataclass
class FloatModel:
    """Unquantized network plus its alphabet, the input to quantization."""

    kind: str  # "am" | "lm"
    alphabet: Alphabet
    layers: list
    output: OutputLayerParams

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def hidden(self):
        return [p.hidden for p in self.layers]

    @property
    def labels(self) -> int:
        return self.output.labels

    def check(self):
        expect = self.alphabet.posterior_dim if self.kind == "am" else self.alphabet.n_labels
        if self.labels != expect:
            raise ContainerError(
                f"{self.kind} output dim {self.labels} does not match alphabet ({expect})"
            )


def save_float_model(model: FloatModel, path):
    arrays = {}
    for li, p in enumerate(model.layers):
        for name in LAYER_TENSORS:
            arrays[f"layer{li}.{name}"] = getattr(p, name)
    arrays["output.W"] = model.output.W
    arrays["output.b"] = model.output.b
    meta = {
        "kind": model.kind,
        "n_layers": len(model.layers),
        "symbols": list(model.alphabet.symbols),
        "delimiter": model.alphabet.delimiter,
        "eos": model.alphabet.eos,
    }
    np.savez(path, _meta=json.dumps(meta, sort_keys=True), **arrays)


def load_float_model(path) -> FloatModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["_meta"]))
        layers = []
        for li in range(meta["n_layers"]):
            kw = {name: z[f"layer{li}.{name}"] for name in LAYER_TENSORS}
            layers.append(LstmLayerParams(**kw))
        output = OutputLayerParams(W=z["output.W"], b=z["output.b"])
    alphabet = Alphabet(
        symbols=tuple(meta["symbols"]), delimiter=meta["delimiter"], eos=meta["eos"]
    )
    model = FloatModel(kind=meta["kind"], alphabet=alphabet, layers=layers, output=output)
    model.check()
    return model


# ---------------------------------------------------------------------------
# Quantized container
# ---------------------------------------------------------------------------


@dataclass
class ModelContainer:
    kind: str
    alphabet: Alphabet
    formats: dict
    qlayers: list
    qoutput: QuantizedOutputLayer
    float_layers: Optional[list] = None
    float_output: Optional[OutputLayerParams] = None

    @property
    def input_dim(self) -> int:
        return self.qlayers[0].input_dim

    @property
    def hidden(self):
        return [q.hidden for q in self.qlayers]

    @property
    def labels(self) -> int:
        return self.qoutput.w_lev.shape[0]

    @property
    def layer_dims(self):
        return [self.input_dim] + self.hidden

    @property
    def feature_scheme(self) -> QuantScheme:
        return self.qlayers[0].fmt.sig_in

    def has_float(self) -> bool:
        return self.float_layers is not None

    def float_model(self) -> FloatModel:
        if not self.has_float():
            raise ContainerError("container carries no float shadow copies")
        return FloatModel(
            kind=self.kind,
            alphabet=self.alphabet,
            layers=self.float_layers,
            output=self.float_output,
        )

    # -- serialization -------------------------------------------------

    def write(self, path):
        records = []
        payload = bytearray()

        def add(name, arr, bits=None, step_exp=None):
            if bits is None:
                blob = np.asarray(arr, dtype="<f4").tobytes()
                dtype = "f32"
            else:
                blob = pack_levels(arr, bits)
                dtype = "levels"
            records.append(
                {
                    "name": name,
                    "shape": list(np.asarray(arr).shape),
                    "bits": bits,
                    "step_exp": step_exp,
                    "offset": len(payload),
                    "nbytes": len(blob),
                    "dtype": dtype,
                }
            )
            payload.extend(blob)

        for li, q in enumerate(self.qlayers):
            H = q.hidden
            for g, name in enumerate(("W_xi", "W_xf", "W_xo", "W_xc")):
                add(f"layer{li}.{name}", q.wx_lev[g * H : (g + 1) * H], q.weight_bits, q.wx_exp[g])
            for g, name in enumerate(("W_hi", "W_hf", "W_ho", "W_hc")):
                add(f"layer{li}.{name}", q.wh_lev[g * H : (g + 1) * H], q.weight_bits, q.wh_exp[g])
            for g, name in enumerate(("w_ci", "w_cf", "w_co")):
                add(f"layer{li}.{name}", q.peep_lev[g], q.weight_bits, q.peep_exp[g])
            for g, name in enumerate(("b_i", "b_f", "b_o", "b_c")):
                add(f"layer{li}.{name}", q.bias_lev[g], q.bias_bits, q.bias_exp[g])
        add("output.W", self.qoutput.w_lev, self.qoutput.weight_bits, self.qoutput.w_exp)
        add("output.b", self.qoutput.b_lev, self.qoutput.bias_bits, self.qoutput.b_exp)
        if self.float_layers is not None:
            for li, p in enumerate(self.float_layers):
                for name in LAYER_TENSORS:
                    add(f"float.layer{li}.{name}", getattr(p, name))
            add("float.output.W", self.float_output.W)
            add("float.output.b", self.float_output.b)

        header = {
            "kind": self.kind,
            "alphabet": {
                "symbols": list(self.alphabet.symbols),
                "delimiter": self.alphabet.delimiter,
                "eos": self.alphabet.eos,
            },
            "dims": {
                "input": self.input_dim,
                "hidden": self.hidden,
                "labels": self.labels,
            },
            "formats": self.formats,
            "tensors": records,
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        body = MAGIC + struct.pack("<HI", VERSION, len(head)) + head + bytes(payload)
        crc = zlib.crc32(body) & 0xFFFFFFFF
        with open(path, "wb") as fh:
            fh.write(body + struct.pack("<I", crc))

    @classmethod
    def read(cls, path) -> "ModelContainer":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 14 or blob[:4] != MAGIC:
            raise ContainerError(f"{path}: not a model container")
        body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise ContainerError(f"{path}: checksum mismatch")
        version, head_len = struct.unpack("<HI", body[4:10])
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported version {version}")
        header = json.loads(body[10 : 10 + head_len].decode("utf-8"))
        payload = body[10 + head_len :]

        tensors = {}
        for rec in header["tensors"]:
            raw = payload[rec["offset"] : rec["offset"] + rec["nbytes"]]
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            try:
                if rec["dtype"] == "levels":
                    arr = unpack_levels(raw, count, rec["bits"]).reshape(shape)
                else:
                    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            except ValueError as exc:
                raise ContainerError(
                    f"{path}: tensor {rec['name']}: payload does not match shape ({exc})"
                )
            tensors[rec["name"]] = (arr, rec)

        fmts = header["formats"]
        alphabet = Alphabet(
            symbols=tuple(header["alphabet"]["symbols"]),
            delimiter=header["alphabet"]["delimiter"],
            eos=header["alphabet"]["eos"],
        )
        luts = _luts_from_formats(fmts)
        n_layers = len(header["dims"]["hidden"])
        qlayers = []
        for li in range(n_layers):
            def t(name):
                try:
                    return tensors[f"layer{li}.{name}"]
                except KeyError:
                    raise ContainerError(f"{path}: layer {li} is missing tensor {name}")

            fmt = _layer_format(fmts, first=(li == 0), luts=luts)
            wx = [t(n) for n in ("W_xi", "W_xf", "W_xo", "W_xc")]
            wh = [t(n) for n in ("W_hi", "W_hf", "W_ho", "W_hc")]
            peep = [t(n) for n in ("w_ci", "w_cf", "w_co")]
            bias = [t(n) for n in ("b_i", "b_f", "b_o", "b_c")]
            qlayers.append(
                QuantizedLstmLayer(
                    wx_lev=np.vstack([a for a, _ in wx]),
                    wh_lev=np.vstack([a for a, _ in wh]),
                    peep_lev=np.vstack([a for a, _ in peep]),
                    bias_lev=np.vstack([a for a, _ in bias]),
                    wx_exp=tuple(r["step_exp"] for _, r in wx),
                    wh_exp=tuple(r["step_exp"] for _, r in wh),
                    peep_exp=tuple(r["step_exp"] for _, r in peep),
                    bias_exp=tuple(r["step_exp"] for _, r in bias),
                    weight_bits=fmts["weight_bits"],
                    bias_bits=fmts["bias_bits"],
                    fmt=fmt,
                )
            )
        ow, owr = tensors["output.W"]
        ob, obr = tensors["output.b"]
        qoutput = QuantizedOutputLayer(
            w_lev=ow,
            b_lev=ob,
            w_exp=owr["step_exp"],
            b_exp=obr["step_exp"],
            weight_bits=fmts["weight_bits"],
            bias_bits=fmts["bias_bits"],
            sig_in=qlayers[-1].fmt.sig_out,
        )
        float_layers = float_output = None
        if "float.output.W" in tensors:
            float_layers = []
            for li in range(n_layers):
                kw = {n: tensors[f"float.layer{li}.{n}"][0] for n in LAYER_TENSORS}
                float_layers.append(LstmLayerParams(**kw))
            float_output = OutputLayerParams(
                W=tensors["float.output.W"][0], b=tensors["float.output.b"][0]
            )
            for p, q in zip(float_layers, qlayers):
                p.quantized = q
            float_output.quantized = qoutput
        return cls(
            kind=header["kind"],
            alphabet=alphabet,
            formats=fmts,
            qlayers=qlayers,
            qoutput=qoutput,
            float_layers=float_layers,
            float_output=float_output,
        )


def _luts_from_formats(fmts):
    rng = (fmts["lut_lo"], fmts["lut_hi"])
    return (
        build_lut("sigmoid", fmts["lut_resolution"], rng, fmts["act_exp"]),
        build_lut("tanh", fmts["lut_resolution"], rng, fmts["act_exp"]),
    )


def _layer_format(fmts, first: bool, luts) -> LayerFixedFormat:
    sig_in_exp = fmts["sig_in_exp"] if first else fmts["sig_exp"]
    return LayerFixedFormat(
        sig_in=QuantScheme(bits=fmts["signal_bits"], step=2.0**sig_in_exp),
        sig_out=QuantScheme(bits=fmts["signal_bits"], step=2.0 ** fmts["sig_exp"]),
        cell=QuantScheme(bits=fmts["cell_bits"], step=2.0 ** fmts["cell_exp"]),
        pre=QuantScheme(bits=16, step=2.0 ** fmts["pre_exp"]),
        lut_sigmoid=luts[0],
        lut_tanh=luts[1],
    )


def quantize_model(
    model: FloatModel,
    weight_bits: int = 6,
    bias_bits: Optional[int] = None,
    signal_bits: int = 8,
    cell_bits: int = 16,
    sig_in_exp: Optional[int] = None,
    include_float: bool = True,
) -> ModelContainer:
    """Direct quantization of a float model into a container.

    Every matrix, peephole and bias gets its own power-of-two step from
    search_step; signal/cell/pre-activation schemes come from the format
    block. One-hot LM inputs default to step 2^-6 so the 1.0 input is exact;
    feature inputs default to 2^-4.
    """
    model.check()
    fmts = dict(DEFAULT_FORMATS)
    fmts["weight_bits"] = weight_bits
    fmts["bias_bits"] = weight_bits if bias_bits is None else bias_bits
    fmts["signal_bits"] = signal_bits
    fmts["cell_bits"] = cell_bits
    if sig_in_exp is None:
        sig_in_exp = -6 if model.kind == "lm" else -4
    fmts["sig_in_exp"] = sig_in_exp

    luts = _luts_from_formats(fmts)
    qlayers = []
    for li, p in enumerate(model.layers):
        fmt = _layer_format(fmts, first=(li == 0), luts=luts)
        q = _quantize_layer_into(p, fmt, fmts)
        p.quantized = q
        qlayers.append(q)
    qoutput = _quantize_output_into(model.output, qlayers[-1].fmt.sig_out, fmts)
    model.output.quantized = qoutput
    return ModelContainer(
        kind=model.kind,
        alphabet=model.alphabet,
        formats=fmts,
        qlayers=qlayers,
        qoutput=qoutput,
        float_layers=model.layers if include_float else None,
        float_output=model.output if include_float else None,
    )


def _quantize_layer_into(p, fmt, fmts) -> QuantizedLstmLayer:
    def q_group(tensors, bits):
        levs, exps = [], []
        for t in tensors:
            scheme = search_step(t, bits)
            levs.append(quantize(t, scheme).levels.astype(np.float64))
            exps.append(scheme.step_exp)
        return levs, tuple(exps)

    wx, wx_exp = q_group(p.input_mats(), fmts["weight_bits"])
    wh, wh_exp = q_group(p.recurrent_mats(), fmts["weight_bits"])
    peep, peep_exp = q_group(p.peepholes(), fmts["weight_bits"])
    bias, bias_exp = q_group(p.biases(), fmts["bias_bits"])
    return QuantizedLstmLayer(
        wx_lev=np.vstack(wx),
        wh_lev=np.vstack(wh),
        peep_lev=np.vstack(peep),
        bias_lev=np.vstack(bias),
        wx_exp=wx_exp,
        wh_exp=wh_exp,
        peep_exp=peep_exp,
        bias_exp=bias_exp,
        weight_bits=fmts["weight_bits"],
        bias_bits=fmts["bias_bits"],
        fmt=fmt,
    )


def _quantize_output_into(out, sig_in, fmts) -> QuantizedOutputLayer:
    ws = search_step(out.W, fmts["weight_bits"])
    bs = search_step(out.b, fmts["bias_bits"])
    return QuantizedOutputLayer(
        w_lev=quantize(out.W, ws).levels.astype(np.float64),
        b_lev=quantize(out.b, bs).levels.astype(np.float64),
        w_exp=ws.step_exp,
        b_exp=bs.step_exp,
        weight_bits=fmts["weight_bits"],
        bias_bits=fmts["bias_bits"],
        sig_in=sig_in,
    )
