"""Acceptance gate: one test per headline guarantee of the package.

Each test prints a single ``ACCEPTANCE <n> <PASS|FAIL>`` line with the
measured quantities; the lines are echoed in a terminal summary section at
the end of the pytest run. Criteria 8-11 train desk-scale networks on the
cached digit data (roughly ten to fifteen minutes together) and carry the
``slow`` marker, so ``-m 'not slow'`` keeps only the sub-minute checks.

Desk-scale learning rates are frozen grid winners: every (estimator, M,
variant) cell below was swept over LR_GRID at three seeds beforehand and the
best validation value picked. Re-running the sweep inside the gate would
multiply its cost ninefold without changing the comparisons.
"""

import csv

import numpy as np
import pytest

from sfnn import (
    Architecture,
    EnumerationBudget,
    RngStream,
    TaskSplit,
    TrainConfig,
    apply_estimator,
    criterion_hat,
    evaluate,
    exact_criterion,
    exact_gradient,
    expected_estimator,
    finite_difference_gradient,
    forward_sample,
    score_function_expectation,
    train,
)
from sfnn.analysis import (
    draw_samples,
    load_pgm,
    pairwise_distances,
    particle_curve,
    scan_centering,
)
from sfnn.cli import main
from sfnn.mathutils import log_sum_exp, sigmoid
from sfnn.network import save_checkpoint, zero_params
from sfnn.oracle import (
    ToyGame,
    estimator_draw_moments,
    mc_consistency,
    toy_ascend_marginal,
    toy_ascend_sampled_c1,
)

from conftest import CACHE_DIR, scaled_params

REPORT_LINES = []

SEEDS = (0, 1, 2)
M_TEST = 100
EVAL_N = 2000

CLS_LAYERS = (784, 100, 100, 10)
CLS_EPOCHS = 15
CLS_NOISE = 0.4
# grid winners per cell; g1 diverges at 1.0 and does worse at 0.5
CLS_RUNS = {
    "g3": dict(estimator="g3", m=1, lr=1.0, variant="stochastic"),
    "g5": dict(estimator="g5", m=20, lr=1.0, variant="stochastic"),
    "g1": dict(estimator="g1", m=20, lr=0.3, variant="stochastic"),
    "det": dict(estimator="backprop", m=1, lr=1.0, variant="deterministic"),
}

STR_LAYERS = (392, 100, 100, 392)
STR_EPOCHS = 20
STR_LR = 1e-1  # grid winner for every structured cell
STR_SPLIT = ((60, 40), (60, 40))


def _report(num, ok, detail):
    line = f"ACCEPTANCE {num:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT_LINES.append(line)
    print(line, flush=True)
    assert ok, line


def _log_py_given_h(kind, v, c, h, y):
    """Output log-likelihood for a fixed hidden vector, written out by hand."""
    o = v @ h + c
    if kind == "softmax":
        return float(o[int(y)] - log_sum_exp(o))
    if kind == "bernoulli":
        p = sigmoid(o)
        return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
    return float(-0.5 * np.sum((y - o) ** 2 + np.log(2.0 * np.pi)))


def _random_target(kind, n_out, rng):
    if kind == "softmax":
        return int(rng.integers(0, n_out, ()))
    if kind == "bernoulli":
        return (rng.uniform((n_out,)) > 0.5).astype(np.float64)
    return rng.normal((n_out,))


# ---------------------------------------------------------------------------
# 1. Two-point game: the two criteria prefer different solutions.
# ---------------------------------------------------------------------------

def test_01_toy_game_reaches_both_modes(tmp_path):
    game = ToyGame()
    marg = toy_ascend_marginal(game)
    samp = toy_ascend_sampled_c1(game, RngStream(0))
    corner_value = 0.5 * np.log(0.9) + 0.5 * np.log(0.1)
    rc = main(["oracle-check", "--check", "theorem1", "--out-dir", str(tmp_path / "oc")])
    ok = (
        rc == 0
        and bool(np.all(np.abs(marg.probs - 0.5) <= 0.01))
        and abs(marg.value - np.log(0.5)) <= 1e-3
        and samp.corner
        and abs(samp.value - corner_value) <= 1e-3
    )
    _report(1, ok, (
        f"marginal ascent probs {np.round(marg.probs, 4)} value {marg.value:.6f} "
        f"(ln 0.5 = {np.log(0.5):.6f}); sampled ascent corner={samp.corner} "
        f"value {samp.value:.6f} (target {corner_value:.6f})"
    ))


# ---------------------------------------------------------------------------
# 2. E[d log P(h|x) / d theta] = 0 under enumeration.
# ---------------------------------------------------------------------------

def test_02_score_expectation_is_zero():
    budget = EnumerationBudget()
    kinds = ("softmax", "bernoulli", "gaussian")
    rng = RngStream(21)
    worst = 0.0
    for i in range(20):
        sub = rng.substream("net", i)
        n_in = 2 + i % 3
        n_out = 2 + i % 2
        kind = kinds[i % 3]
        if i % 5 == 4:
            n_h = 3 + i % 2
            arch = Architecture((n_in, n_h + 2, n_out), kind, "hybrid",
                                hybrid_split=((n_h, 2),))
        elif i % 2 == 0:
            arch = Architecture((n_in, 2 + i % 3, 3, n_out), kind, "stochastic")
        else:
            arch = Architecture((n_in, 3 + i % 2, n_out), kind, "stochastic")
        params = scaled_params(arch, sub.substream("init"), 1.5)
        x = sub.substream("x").normal((n_in,))
        grads = score_function_expectation(params, arch, x, budget)
        worst = max(worst, max(float(np.max(np.abs(g))) for g in grads.values()))
    ok = worst < 1e-12
    _report(2, ok, f"max |E[score]| over 20 nets = {worst:.3e} (< 1e-12)")


# ---------------------------------------------------------------------------
# 3. Single-unit G1 expectation equals sigma'(a) (L(1) - L(0)).
# ---------------------------------------------------------------------------

def test_03_g1_single_unit_closed_form():
    budget = EnumerationBudget()
    kinds = ("softmax", "bernoulli", "gaussian")
    rng = RngStream(33)
    worst = 0.0
    for i in range(100):
        sub = rng.substream("case", i)
        kind = kinds[i % 3]
        n_in, n_out = 3, 2
        arch = Architecture((n_in, 1, n_out), kind, "stochastic")
        params = scaled_params(arch, sub.substream("init"), 2.0)
        x = sub.substream("x").normal((n_in,))
        y = _random_target(kind, n_out, sub.substream("y"))
        a = float((params["W1"] @ x + params["b1"])[0])
        sig = sigmoid(np.array([a]))[0]
        l0 = _log_py_given_h(kind, params["V"], params["c"], np.zeros(1), y)
        l1 = _log_py_given_h(kind, params["V"], params["c"], np.ones(1), y)
        want = sig * (1.0 - sig) * (l1 - l0)
        grads = expected_estimator(params, arch, x, y, "g1", 1, budget)
        worst = max(
            worst,
            abs(float(grads["b1"][0]) - want),
            float(np.max(np.abs(grads["W1"][0] - want * x))),
        )
    ok = worst < 1e-12
    _report(3, ok, f"max |E[g1] - sigma'(a)(L1-L0)| over 100 nets = {worst:.3e} (< 1e-12)")


# ---------------------------------------------------------------------------
# 4. Centering does not move the expectation: E[g5] = E[g4] over M-tuples.
# ---------------------------------------------------------------------------

def test_04_centered_estimator_keeps_expectation():
    budget = EnumerationBudget()
    kinds = ("softmax", "bernoulli", "gaussian")
    layer_choices = ((2, 2, 1, 2), (3, 4, 2), (2, 3, 1, 3), (3, 2, 2, 2), (2, 4, 3))
    rng = RngStream(44)
    worst = 0.0
    for i in range(10):
        sub = rng.substream("net", i)
        kind = kinds[i % 3]
        layers = layer_choices[i % 5]
        arch = Architecture(layers, kind, "stochastic")
        params = scaled_params(arch, sub.substream("init"), 1.5)
        x = sub.substream("x").normal((layers[0],))
        y = _random_target(kind, layers[-1], sub.substream("y"))
        g4 = expected_estimator(params, arch, x, y, "g4", 2, budget)
        g5 = expected_estimator(params, arch, x, y, "g5", 2, budget)
        worst = max(worst, max(float(np.max(np.abs(g4[k] - g5[k]))) for k in g4))
    ok = worst < 1e-10
    _report(4, ok, f"max |E[g5] - E[g4]| over 10 nets (M=2) = {worst:.3e} (< 1e-10)")


# ---------------------------------------------------------------------------
# 5. Centering shrinks the variance, and the scan finds the trough.
# ---------------------------------------------------------------------------

def test_05_variance_reduction_and_centering_scan(tmp_path):
    arch = Architecture((3, 4, 4, 3), "bernoulli", "stochastic")
    rng = RngStream(0)
    params = scaled_params(arch, rng.substream("init"), 2.0)
    x = rng.substream("x").normal((3,))
    y = (rng.substream("y").uniform((3,)) > 0.5).astype(np.float64)
    moments = estimator_draw_moments(
        params, arch, x, y, ("g4", "g5"), 5, 10_000, rng.substream("draws")
    )
    wins = total = 0
    for k in params:
        if k[0] not in "Wb":
            continue  # output weights are shared between the two estimators
        v4 = moments["g4"][1][k].ravel()
        v5 = moments["g5"][1][k].ravel()
        wins += int(np.sum(v5 < v4))
        total += v4.size
    frac = wins / total

    synth = ["--task", "synthetic", "--groups-train", "12", "--groups-test", "4",
             "--dim", "16", "--modes", "2", "--examples-per-group", "5"]
    run_dir = tmp_path / "run"
    rc1 = main(["train", *synth, "--hidden", "12", "--estimator", "g5", "--m", "5",
                "--m-test", "20", "--epochs", "8", "--max-lr", "0.05",
                "--batch-size", "10", "--eval-every", "8", "--out-dir", str(run_dir)])
    scan_dir = tmp_path / "scan"
    rc2 = main(["scan-c", *synth, "--checkpoint", str(run_dir / "final.ckpt"),
                "--m", "5", "--cm-grid", "0:3:0.25", "--n-examples", "20",
                "--out-dir", str(scan_dir)])
    with open(scan_dir / "scan_c.csv", newline="") as fh:
        rows = [(float(r["cm"]), float(r["mean_norm"])) for r in csv.DictReader(fh)]
    best_cm = min(rows, key=lambda r: r[1])[0]

    ok = frac >= 0.90 and rc1 == 0 and rc2 == 0 and 0.5 <= best_cm <= 2.0
    _report(5, ok, (
        f"var(g5) < var(g4) on {frac:.1%} of hidden parameters ({wins}/{total}, "
        f"10^4 paired draws); scan minimum at cM = {best_cm}"
    ))


# ---------------------------------------------------------------------------
# 6. Deterministic backprop and the enumerated gradient match differences.
# ---------------------------------------------------------------------------

def _max_rel_err(grads, ref):
    worst = 0.0
    for k, g in ref.items():
        denom = max(float(np.max(np.abs(g))), 1e-12)
        worst = max(worst, float(np.max(np.abs(grads[k] - g))) / denom)
    return worst


def test_06_gradients_match_finite_differences():
    budget = EnumerationBudget()
    rng = RngStream(66)

    arch_det = Architecture((3, 4, 3, 2), "softmax", "deterministic")
    params_det = scaled_params(arch_det, rng.substream("init-det"), 1.5)
    x = rng.substream("x").normal((3,))
    y_cls = np.asarray([1])

    def det_criterion(p):
        trace = forward_sample(p, arch_det, x[None, :], 1, RngStream(0), y=y_cls)
        return float(criterion_hat(trace)[0])

    trace = forward_sample(params_det, arch_det, x[None, :], 1, RngStream(0), y=y_cls)
    bp, _ = apply_estimator("backprop", params_det, arch_det, trace)
    rel_bp = _max_rel_err(bp, finite_difference_gradient(det_criterion, params_det))

    arch_st = Architecture((3, 4, 2), "bernoulli", "stochastic")
    params_st = scaled_params(arch_st, rng.substream("init-st"), 1.5)
    y_vec = (rng.substream("y").uniform((2,)) > 0.5).astype(np.float64)
    exact = exact_gradient(params_st, arch_st, x, y_vec, budget)
    fd = finite_difference_gradient(
        lambda p: exact_criterion(p, arch_st, x, y_vec, budget), params_st
    )
    rel_exact = _max_rel_err(exact, fd)

    ok = rel_bp < 1e-6 and rel_exact < 1e-6
    _report(6, ok, (
        f"relative error vs central differences: backprop {rel_bp:.3e}, "
        f"enumerated gradient {rel_exact:.3e} (< 1e-6)"
    ))


# ---------------------------------------------------------------------------
# 7. C_hat_M -> C at the Monte Carlo rate.
# ---------------------------------------------------------------------------

def test_07_mixture_criterion_mc_rate():
    budget = EnumerationBudget()
    arch = Architecture((3, 4, 3, 2), "bernoulli", "stochastic")
    rng = RngStream(0)
    params = scaled_params(arch, rng.substream("init"), 1.5)
    x = rng.substream("x").normal((3,))
    y = (rng.substream("y").uniform((2,)) > 0.5).astype(np.float64)
    rows = mc_consistency(
        params, arch, x, y, (100, 1_000, 10_000, 100_000), 200, rng.substream("mc"), budget
    )
    ms = np.log([r[0] for r in rows])
    errs = np.log([r[1] for r in rows])
    slope = float(np.polyfit(ms, errs, 1)[0])
    ok = -0.6 <= slope <= -0.4
    _report(7, ok, f"log-log RMSE slope over M=10^2..10^5: {slope:.4f} (target -0.5 +/- 0.1)")


# ---------------------------------------------------------------------------
# 8. Digit classification: estimator ordering at desk scale.
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def classification_errors(classify_splits):
    tr, te = classify_splits
    errors = {}
    for name, spec in CLS_RUNS.items():
        for seed in SEEDS:
            arch = Architecture(CLS_LAYERS, "softmax", spec["variant"])
            config = TrainConfig(
                estimator=spec["estimator"], m_train=spec["m"], m_test=M_TEST,
                epochs=CLS_EPOCHS, max_lr=spec["lr"], batch_size=100,
                input_noise_sd=CLS_NOISE, seed=seed,
                eval_every=CLS_EPOCHS, eval_examples=EVAL_N,
            )
            res = train(arch, config, tr, te)
            assert not res.diverged, f"{name} seed {seed} diverged"
            errors[(name, seed)] = res.final_metrics["error_rate"]
    return errors


@pytest.mark.slow
def test_08_classification_estimator_ordering(classification_errors):
    def stats(name):
        vals = np.array([classification_errors[(name, s)] for s in SEEDS])
        return float(vals.mean()), float(vals.std(ddof=1))

    g3_m, g3_s = stats("g3")
    g5_m, g5_s = stats("g5")
    g1_m, g1_s = stats("g1")
    det_m, _ = stats("det")
    gap_53, sig_53 = g5_m - g3_m, 2.0 * max(g3_s, g5_s)
    gap_15, sig_15 = g1_m - g5_m, 2.0 * max(g5_s, g1_s)
    ok = (
        g3_m < 0.06
        and gap_53 > sig_53
        and gap_15 > sig_15
        and det_m <= g3_m + 0.015
    )
    _report(8, ok, (
        f"test error g3(M=1) {g3_m:.4f} (< 0.06), g5(M=20) {g5_m:.4f}, "
        f"g1(M=20) {g1_m:.4f}, deterministic {det_m:.4f}; "
        f"gaps {gap_53:.4f} > {sig_53:.4f} and {gap_15:.4f} > {sig_15:.4f}; "
        f"det <= g3 + 1.5pp"
    ))


# ---------------------------------------------------------------------------
# 9. Half-image completion: more particles help; hybrids behave.
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def structured_runs(halves_splits, tmp_path_factory):
    tr, te = halves_splits
    out = {"neg": {}}

    def run(key, estimator, m, variant, seed, split=None):
        arch = Architecture(STR_LAYERS, "bernoulli", variant, hybrid_split=split)
        config = TrainConfig(
            estimator=estimator, m_train=m, m_test=M_TEST, epochs=STR_EPOCHS,
            max_lr=STR_LR, batch_size=100, seed=seed,
            eval_every=STR_EPOCHS, eval_examples=EVAL_N,
        )
        res = train(arch, config, tr, te)
        assert not res.diverged, f"{key} seed {seed} diverged"
        out["neg"][(key, seed)] = res.final_metrics["neg_criterion"]
        return res

    for seed in SEEDS:
        res = run("m20", "g3", 20, "stochastic", seed)
        if seed == 0:
            out["model_m20"] = (res.params, res.arch)
        run("m1", "g3", 1, "stochastic", seed)
    run("hybrid", "g4", 20, "hybrid", 0, STR_SPLIT)
    run("hybrid_fixed", "backprop", 20, "hybrid-fixed", 0, STR_SPLIT)
    res_det = run("det", "backprop", 1, "deterministic", 0)
    out["model_det"] = (res_det.params, res_det.arch)

    ckpt = tmp_path_factory.mktemp("acceptance-ckpt") / "m20.ckpt"
    save_checkpoint(ckpt, out["model_m20"][1], out["model_m20"][0])
    out["ckpt"] = ckpt
    return out


@pytest.mark.slow
def test_09_structured_particle_ordering(structured_runs, halves_splits):
    neg = structured_runs["neg"]
    m20 = np.array([neg[("m20", s)] for s in SEEDS])
    m1 = np.array([neg[("m1", s)] for s in SEEDS])
    gap = float(m1.mean() - m20.mean())
    sig = 2.0 * max(float(m20.std(ddof=1)), float(m1.std(ddof=1)))
    c_val = neg[("hybrid", 0)]
    d_val = neg[("hybrid_fixed", 0)]

    _, te = halves_splits
    arch = Architecture(STR_LAYERS, "bernoulli", "stochastic")
    base = evaluate(zero_params(arch), arch, te, M_TEST, RngStream(1234),
                    max_examples=EVAL_N)["neg_criterion"]
    target = float(STR_LAYERS[-1]) * float(np.log(2.0))

    ok = gap > sig and d_val <= c_val and abs(base - target) / target < 0.01
    _report(9, ok, (
        f"neg criterion g3 M=20 {m20.mean():.2f} vs M=1 {m1.mean():.2f} "
        f"(gap {gap:.2f} > {sig:.2f}); fixed-hybrid {d_val:.2f} <= hybrid {c_val:.2f}; "
        f"zero-weight baseline {base:.2f} vs {target:.2f} (within 1%)"
    ))


# ---------------------------------------------------------------------------
# 10. Sampled completions are multimodal; deterministic ones collapse.
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_10_completions_multimodal(structured_runs, halves_splits, tmp_path):
    _, te = halves_splits
    rng = RngStream(2026)

    def mean_distance(params, arch):
        dists = []
        for i in range(8):
            samples = draw_samples(params, arch, te.inputs[i], 16, rng.substream("draw", i))
            dists.append(float(pairwise_distances(samples).mean()))
        return float(np.mean(dists))

    s_dist = mean_distance(*structured_runs["model_m20"])
    a_dist = mean_distance(*structured_runs["model_det"])

    out_dir = tmp_path / "samples"
    rc = main(["sample", "--task", "halves", "--data-dir", str(CACHE_DIR),
               "--checkpoint", str(structured_runs["ckpt"]),
               "--count", "4", "--n-samples", "6", "--out-dir", str(out_dir)])
    grid = load_pgm(out_dir / "samples.pgm")

    ok = (
        a_dist == 0.0
        and s_dist > 10.0 * a_dist
        and s_dist > 0.0
        and rc == 0
        and grid.ndim == 2
        and grid.size > 0
    )
    _report(10, ok, (
        f"mean pairwise completion distance: sampled {s_dist:.3f}, "
        f"deterministic {a_dist:.1f} (exactly 0); sample grid {grid.shape} written"
    ))


# ---------------------------------------------------------------------------
# 11. The mixture criterion improves with M and flattens by M = 40.
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_11_particle_curve_flattens(structured_runs, halves_splits):
    params, arch = structured_runs["model_m20"]
    _, te = halves_splits
    curve = particle_curve(params, arch, te, (1, 2, 5, 10, 20, 40, 100),
                           RngStream(515), max_examples=EVAL_N)
    pe = curve.per_example
    n = pe.shape[0]
    worst_margin = np.inf
    for k in range(pe.shape[1] - 1):
        diff = pe[:, k + 1] - pe[:, k]
        se = float(diff.std(ddof=1)) / np.sqrt(n)
        worst_margin = min(worst_margin, float(diff.mean()) + se)
    i40 = curve.m_values.index(40)
    rel_gap = abs(curve.mean[-1] - curve.mean[i40]) / abs(curve.mean[-1])
    ok = worst_margin >= 0.0 and rel_gap < 0.01
    _report(11, ok, (
        f"criterion per M {np.round(curve.mean, 3)}; min paired step "
        f"{worst_margin:+.4f} nats (>= -se); |C_100 - C_40|/|C_100| = {rel_gap:.5f} (< 1%)"
    ))
