"""Command-line drivers.

asr-quantize builds model containers: either from a float model file or via
the toy generator (--gen-toy), which also emits a word list and a synthetic
feature stream so decoding is runnable from a cold clone.

asr-decode runs the pipeline on a feature file or a WAV, prints the
transcript to stdout and writes the key/value report next to it when asked.

Exit codes: 0 success, 2 input problems, 3 internal failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .container import (
    ContainerError,
    ModelContainer,
    load_float_model,
    quantize_model,
)
from .engine import RunConfig, decode, write_report
from .frontend import extract_features, read_feature_file, read_wav
from .hwsim import HwConfig
from .toy import gen_toy
from .wordlm import ArpaParseError, parse_arpa_file

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

_INPUT_ERRORS = (ContainerError, ArpaParseError, FileNotFoundError, ValueError, OSError)


def main_quantize(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="asr-quantize", description="Build quantized model containers."
    )
    ap.add_argument("--float-model", help="float model .npz to quantize")
    ap.add_argument("--out", help="output container path")
    ap.add_argument("--gen-toy", metavar="SPEC",
                    help="generate toy models instead: tiny|small[,frames=N,seed=N]")
    ap.add_argument("--out-dir", default="toy", help="output directory for --gen-toy")
    ap.add_argument("--weight-bits", type=int, default=6)
    ap.add_argument("--bias-bits", type=int, default=None)
    ap.add_argument("--signal-bits", type=int, default=8)
    ap.add_argument("--cell-bits", type=int, default=16)
    ap.add_argument("--no-float-shadow", action="store_true",
                    help="omit float copies (disables float-mode decoding)")
    args = ap.parse_args(argv)

    try:
        if args.gen_toy:
            paths = gen_toy(args.gen_toy, args.out_dir, include_float=not args.no_float_shadow)
            for k, v in paths.items():
                print(f"{k} {v}")
            return EXIT_OK
        if not args.float_model or not args.out:
            ap.error("need --float-model and --out (or --gen-toy)")
        model = load_float_model(args.float_model)
        container = quantize_model(
            model,
            weight_bits=args.weight_bits,
            bias_bits=args.bias_bits,
            signal_bits=args.signal_bits,
            cell_bits=args.cell_bits,
            include_float=not args.no_float_shadow,
        )
        container.write(args.out)
        print(f"wrote {args.out}")
        return EXIT_OK
    except _INPUT_ERRORS as exc:
        print(f"asr-quantize: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - report and map to the internal code
        print(f"asr-quantize: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main_decode(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="asr-decode", description="Decode audio or features to text."
    )
    ap.add_argument("--am", help="acoustic model container")
    ap.add_argument("--lm", help="character-LM container")
    ap.add_argument("--arpa", help="word-level ARPA file (optionally .gz)")
    ap.add_argument("--beam", type=int, default=128)
    ap.add_argument("--alpha", type=float, default=1.0, help="character-LM weight")
    ap.add_argument("--lambda", dest="lam", type=float, default=1.0, help="word-LM weight")
    ap.add_argument("--beta", type=float, default=0.0, help="word insertion bonus")
    ap.add_argument("--mode", choices=("float", "fixed", "hwsim"), default="fixed")
    ap.add_argument("--features", help="feature file input")
    ap.add_argument("--wav", help="16 kHz mono 16-bit WAV input")
    ap.add_argument("--report", help="write the key/value report here")
    ap.add_argument("--prune-period", type=int, default=100,
                    help="frames between depth prunes (0 disables)")
    ap.add_argument("--pe-arrays", type=int, default=2)
    ap.add_argument("--pes-per-array", type=int, default=256)
    ap.add_argument("--gen-toy", metavar="SPEC",
                    help="generate toy inputs into --toy-dir and decode them")
    ap.add_argument("--toy-dir", default="toy")
    args = ap.parse_args(argv)

    try:
        if args.gen_toy:
            paths = gen_toy(args.gen_toy, args.toy_dir)
            args.am = args.am or paths["am"]
            args.lm = args.lm or paths["lm"]
            args.arpa = args.arpa or paths["arpa"]
            args.features = args.features or paths["features"]
        if not args.am:
            ap.error("need --am (or --gen-toy)")
        if bool(args.features) == bool(args.wav):
            ap.error("need exactly one of --features or --wav")

        am = ModelContainer.read(args.am)
        lm = ModelContainer.read(args.lm) if args.lm else None
        arpa = parse_arpa_file(args.arpa) if args.arpa else None
        if args.wav:
            feats = extract_features(read_wav(args.wav))
        else:
            feats, _ = read_feature_file(args.features)

        cfg = RunConfig(
            mode=args.mode,
            beam_width=args.beam,
            alpha=args.alpha,
            lam=args.lam,
            beta=args.beta,
            prune_period=args.prune_period,
            hw=HwConfig(pe_arrays=args.pe_arrays, pes_per_array=args.pes_per_array),
        )
        emitted = []
        result = decode(am, lm, arpa, feats, cfg, emit=emitted.append)
        print(result.transcript)
        if args.report:
            write_report(result.report, args.report)
        return EXIT_OK
    except _INPUT_ERRORS as exc:
        print(f"asr-decode: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"asr-decode: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv=None) -> int:
    """python -m qasr {decode|quantize} ..."""
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] not in ("decode", "quantize"):
        print("usage: python -m qasr {decode|quantize} [options]", file=sys.stderr)
        return EXIT_INPUT
    if argv[0] == "decode":
        return main_decode(argv[1:])
    return main_quantize(argv[1:])


if __name__ == "__main__":
    sys.exit(main())
