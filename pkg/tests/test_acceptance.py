"""Acceptance suite: one test per criterion, each printing a PASS line.

Expected constants come from the accelerator's design-point arithmetic (246, 512, 758,
1024, 2806, 572, 1596, 6,409,240 cycles/s) and from the parameter-count
formula (2,278,461 for the small geometry, within 3% of the rounded 2.3 M).
Error-rate reproduction is out of reach without the trained models, so
accuracy is covered by the oracle and invariant suites below, and the
direction of quantization degradation is checked as a property.
"""

import io
import time

import numpy as np
import pytest

import qasr.rnn as rnn
from qasr.container import ModelContainer
from qasr.decoder import Alphabet, BeamConfig, BeamSearch, TableCharLm, brute_force_decode
from qasr.engine import RunConfig, decode
from qasr.frontend import extract_features, sliding_normalize
from qasr.hwsim import HwConfig, layer_cycles, network_cycles, realtime_budget, simulate_layer
from qasr.quant import QuantScheme, dequantize, quantize
from qasr.rnn import LstmState, count_params_dims, fixed_step_levels, lstm_step, zero_state
from qasr.toy import ToySpec, build_toy_models, gen_toy
from qasr.wordlm import ArpaParseError, log_prob, parse_arpa

from helpers import make_layer, quantize_model


def _ok(n, text):
    line = f"[criterion {n}] PASS - {text}"
    print(line)
    from conftest import ACCEPTANCE_LINES

    ACCEPTANCE_LINES.append(line)


def test_criterion_1_cycle_fixtures():
    t0 = time.perf_counter()
    assert layer_cycles(123, 256).input_path == 246
    assert layer_cycles(256, 256).input_path == 512
    assert layer_cycles(123, 256).total == 758
    assert layer_cycles(256, 256).total == 1024
    am = network_cycles([123, 256, 256, 256])
    assert [lc.total for lc in am.layers] == [758, 1024, 1024]
    assert am.total == 2806
    lm = network_cycles([30, 256, 256])
    assert lm.layers[0].total == 572
    assert lm.total == 1596
    assert realtime_budget(100, 3840, am, lm) == 6409240
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _ok(1, f"cycle fixtures exact (758/1024/2806/572/1596, budget 6409240) in {elapsed:.3f}s")


def test_criterion_2_parameter_count():
    am = count_params_dims([(123, 256), (256, 256), (256, 256)], (256, 31))
    lm = count_params_dims([(30, 256), (256, 256)], (256, 30))
    total = am + lm
    assert total == 2278461
    rel = abs(total - 2.3e6) / 2.3e6
    assert rel < 0.03
    _ok(2, f"small-model parameters {total:,} ({rel * 100:.2f}% from 2.3 M)")


def test_criterion_3_ctc_oracle_equivalence():
    t0 = time.perf_counter()
    checked = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n_labels = int(rng.integers(1, 4))
        T = int(rng.integers(1, 7))
        alphabet = Alphabet(symbols=tuple(chr(ord("A") + i) for i in range(n_labels)))
        y = rng.uniform(0.05, 1.0, size=(T, alphabet.posterior_dim))
        y /= y.sum(axis=1, keepdims=True)
        reachable = sum(n_labels**t for t in range(1, T + 1)) + 1
        cfg = BeamConfig(beam_width=max(reachable, 8), prune_period=0)
        for char_lm, alpha in ((None, 1.0), (TableCharLm.random(n_labels, rng), 0.7)):
            seq, score = brute_force_decode(y, alphabet, char_lm=char_lm, alpha=alpha)
            bs = BeamSearch(alphabet, BeamConfig(
                beam_width=cfg.beam_width, prune_period=0, alpha=alpha
            ), char_lm=char_lm)
            for row in y:
                bs.step(row)
            labels, bscore = bs.best_hypothesis()
            assert labels == seq, f"seed {seed}: {labels} != {seq}"
            assert abs(bscore - score) < 1e-9, f"seed {seed}: score gap {bscore - score}"
            checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _ok(3, f"{checked} beam-vs-enumeration decodes identical (1e-9) in {elapsed:.1f}s")


def test_criterion_4_bit_exactness():
    rng = np.random.default_rng(77)
    for trial in range(50):
        d = int(rng.integers(3, 16))
        h1 = int(rng.integers(4, 24))
        h2 = int(rng.integers(4, 24))
        layers = [make_layer(d, h1, rng), make_layer(h1, h2, rng)]
        quantize_model(layers, None)
        cfg = HwConfig(fast_mac=bool(trial % 2))
        ref_states = [zero_state(h1), zero_state(h2)]
        hw_states = [zero_state(h1), zero_state(h2)]
        for _ in range(3):
            x = rng.uniform(-1, 1, size=d)
            lev = np.round(x / layers[0].quantized.fmt.sig_in.step)
            ref_in = hw_in = lev
            for li, p in enumerate(layers):
                q = p.quantized
                rh, rc = fixed_step_levels(q, ref_in, ref_states[li].h, ref_states[li].c)
                ref_states[li] = LstmState(h=rh, c=rc)
                hw_h, hw_states[li], _ = simulate_layer(q, hw_in, hw_states[li], cfg)
                np.testing.assert_array_equal(hw_h, rh)
                np.testing.assert_array_equal(hw_states[li].c, rc)
                ref_in, hw_in = rh, hw_h
    _ok(4, "50 random 2-layer models bit-identical between hwsim and fixed rnn")


def test_criterion_5_quantization_properties():
    rng = np.random.default_rng(88)
    # (a) idempotence, symmetry, half-step bound at each deployed width
    for bits, exp in ((6, -4), (8, -6), (16, -8)):
        s = QuantScheme(bits=bits, step=2.0**exp)
        x = rng.uniform(-0.9 * s.max_value, 0.9 * s.max_value, size=100_000)
        q1 = quantize(x, s)
        q2 = quantize(dequantize(q1), s)
        np.testing.assert_array_equal(q1.levels, q2.levels)
        np.testing.assert_array_equal(quantize(-x, s).levels, -q1.levels)
        assert np.abs(x - dequantize(q1)).max() <= s.step / 2 + 1e-15

    # (b) more weight bits, less error; 6/8/16 stays under 0.08 per frame
    widths = (4, 5, 6, 8)
    frames = 12
    mean_err = {w: [] for w in widths}
    worst_668 = 0.0
    for m in range(30):
        mrng = np.random.default_rng(3000 + m)
        layers = [make_layer(123, 256, mrng), make_layer(256, 256, mrng), make_layer(256, 256, mrng)]
        xs = mrng.uniform(-1, 1, size=(frames, 123))
        h_float = _float_h_stream(layers, xs)
        for w in widths:
            quantize_model(layers, None, weight_bits=w)
            h_fixed = _fixed_h_stream(layers, xs)
            err = np.abs(h_float - h_fixed)
            mean_err[w].append(err.mean())
            if w == 6:
                worst_668 = max(worst_668, err.max())
    means = [float(np.mean(mean_err[w])) for w in widths]
    assert all(a > b for a, b in zip(means, means[1:])), f"not monotone: {means}"
    assert worst_668 <= 0.08, f"6/8/16 worst frame error {worst_668}"
    _ok(
        5,
        "quantizer invariants on 3x100k values; mean LSTM error "
        + " > ".join(f"{m:.4f}" for m in means)
        + f" over 4/5/6/8 bits, 6-bit max {worst_668:.3f} <= 0.08",
    )


def _float_h_stream(layers, xs):
    states = [zero_state(p.hidden) for p in layers]
    out = []
    for x in xs:
        h = x
        for li, p in enumerate(layers):
            h, states[li] = lstm_step(p, h, states[li], mode="float")
        out.append(h)
    return np.array(out)


def _fixed_h_stream(layers, xs):
    states = [zero_state(p.hidden) for p in layers]
    out = []
    for x in xs:
        h = x
        for li, p in enumerate(layers):
            h, states[li] = lstm_step(p, h, states[li], mode="fixed")
        out.append(h)
    return np.array(out)


ACCEPT_ARPA = """\
\\data\\
ngram 1=4
ngram 2=3
ngram 3=2

\\1-grams:
-0.5\tA\t-0.30103
-0.6\tB\t-0.2
-0.9\tC\t-0.1
-2.5\t<unk>

\\2-grams:
-0.3\tA B\t-0.1
-0.5\tB C
-0.7\tA C

\\3-grams:
-0.2\tA B A
-0.35\tA B C

\\end\\
"""


def test_criterion_6_arpa_correctness():
    m = parse_arpa(io.StringIO(ACCEPT_ARPA))
    assert sum(m.counts().values()) <= 20
    # direct lookups are exact table values
    assert log_prob(m, "A", ("A", "B")) == -0.2
    assert log_prob(m, "C", ("A", "B")) == -0.35
    assert log_prob(m, "B") == -0.6
    # back-off recursion against hand evaluation:
    # P(B|A,B) = bow(A,B) + bow(B) + P(B) = -0.1 + -0.2 + -0.6
    assert log_prob(m, "B", ("A", "B")) == pytest.approx(-0.9, abs=1e-12)
    # P(C|B,A): (B,A) has no entry so bow is 0, then bigram (A,C) hits
    assert log_prob(m, "C", ("B", "A")) == pytest.approx(-0.7, abs=1e-12)
    # P(A|C,B): two zero bows, then bow(B) + P(A) = -0.2 + -0.5
    assert log_prob(m, "A", ("C", "B")) == pytest.approx(-0.7, abs=1e-12)
    assert log_prob(m, "Q", ()) == -2.5
    # malformed files carry line numbers
    bad = ACCEPT_ARPA.replace("-0.5\tA\t-0.30103\n", "")
    with pytest.raises(ArpaParseError, match=r"line \d+"):
        parse_arpa(io.StringIO(bad))
    with pytest.raises(ArpaParseError, match="line 7"):
        parse_arpa(io.StringIO(ACCEPT_ARPA.replace("-0.5\tA", "x\tA")))
    _ok(6, "handcrafted tri-gram lookups exact, back-off to 1e-12, errors carry lines")


def test_criterion_7_frontend():
    rng = np.random.default_rng(99)
    audio = rng.uniform(-0.5, 0.5, size=16000)
    feats = extract_features(audio)
    assert feats.shape == (98, 123)
    # constant input: zero deltas, zero normalized output
    const = extract_features(np.full(16000, 0.125), norm="none")
    assert np.all(const[:, 41:] == 0.0)
    np.testing.assert_array_equal(extract_features(np.full(16000, 0.125)), np.zeros((98, 123)))
    # interior window statistics
    x = rng.normal(1.5, 2.0, size=(900, 123))
    out = sliding_normalize(x, window=300)
    t, half = 450, 149
    win = x[t - half : t + half + 1]
    z = (win - win.mean(axis=0)) / win.std(axis=0)
    assert np.abs(z.mean(axis=0)).max() < 1e-6
    assert np.abs(z.var(axis=0) - 1.0).max() < 1e-3
    np.testing.assert_allclose(out[t], z[half], atol=1e-9)
    _ok(7, "98x123 frames, constant input exactly zero, window stats |mean|<1e-6, var ~ 1")


def test_criterion_8_end_to_end_smoke(tmp_path):
    t0 = time.perf_counter()
    paths = gen_toy("tiny,frames=100,seed=21", tmp_path)
    am = ModelContainer.read(paths["am"])
    lm = ModelContainer.read(paths["lm"])
    from qasr.frontend import read_feature_file
    from qasr.wordlm import parse_arpa_file

    arpa = parse_arpa_file(paths["arpa"])
    feats, _ = read_feature_file(paths["features"])
    results = {}
    for mode in ("float", "fixed", "hwsim"):
        cfg = RunConfig(mode=mode, beam_width=16, prune_period=25)
        r1 = decode(am, lm, arpa, feats, cfg)
        r2 = decode(am, lm, arpa, feats, cfg)
        assert r1.transcript == r2.transcript, f"{mode} not deterministic"
        rep1 = {k: v for k, v in r1.report.items() if k != "wall.seconds"}
        rep2 = {k: v for k, v in r2.report.items() if k != "wall.seconds"}
        assert rep1 == rep2
        results[mode] = r1
    assert results["fixed"].transcript == results["hwsim"].transcript
    rep = results["hwsim"].report
    assert rep["cycles.total"] == (
        rep["am.lstm_cycles.total"] + rep["am.output_tile.total"]
        + rep["lm.lstm_cycles.total"] + rep["lm.output_tile.total"]
    )
    assert rep["hw.am.cycles.measured"] == rep["am.lstm_cycles.total"]
    assert rep["hw.lm.cycles.measured"] == rep["lm.lstm_cycles.total"]
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _ok(8, f"three modes deterministic, fixed == hwsim, reports consistent, {elapsed:.1f}s")


def test_criterion_9_throughput_sanity(tmp_path):
    # 60 s of 10 ms frames; zero blank bias and a peaked output keep the
    # character-LM busy instead of letting the blank swallow the stream
    spec = ToySpec("small", frames=6000, seed=31, blank_bias=0.0, out_gain=3.0)
    am_f, lm_f = build_toy_models(spec)
    from qasr.container import quantize_model as qm
    from qasr.frontend import read_feature_file
    from qasr.toy import gen_toy as _gen

    am = qm(am_f, include_float=False)
    lm = qm(lm_f, include_float=False)
    paths = _gen(spec, tmp_path, include_float=False)
    feats, _ = read_feature_file(paths["features"])
    cfg = RunConfig(mode="hwsim", beam_width=128, prune_period=100)
    t0 = time.perf_counter()
    res = decode(am, lm, None, feats, cfg)
    elapsed = time.perf_counter() - t0
    assert res.report["frames"] == 6000
    assert res.report["am.lstm_cycles.total"] == 6000 * 2806
    assert res.report["budget.cycles_per_second"] == 6409240
    assert elapsed < 60.0, f"60 s stream took {elapsed:.1f}s"
    _ok(
        9,
        f"60 s stream, beam 128, hwsim decoded in {elapsed:.1f}s "
        f"({60.0 / elapsed:.2f}x real time), {res.report['lm.advances']} LM advances",
    )
