import numpy as np
import pytest

from tvdml import validate
from tvdml.dml import solve_beta_t
from tvdml.simlab import (
    FpcSpec,
    ScenarioSpec,
    apply_missingness,
    compute_metrics,
    gen_fpc_covariate,
    generate,
    replicate_rng,
    run_monte_carlo,
    simulate,
    structural_outcome,
    true_beta,
)


def test_true_beta_closed_forms():
    b = true_beta(4)
    rho = np.arange(1, 5) / 4
    np.testing.assert_allclose(b[:, 0], -0.3 * (1 - rho / 2))
    np.testing.assert_allclose(b[:, 1:3], [[0.05, -0.05]] * 4)
    np.testing.assert_allclose(b[:, 3], 0.05 + 0.1 * rho ** 2)
    np.testing.assert_allclose(b[:, 4], -0.05 - 0.1 * rho ** 2)
    assert b[-1, 0] == pytest.approx(-0.15)
    assert not true_beta(4, effect_scale=0.0).any()


def test_fpc_degenerate_spectrum():
    spec = FpcSpec(nu_scale=1e-300, sigma_eps=0.0)
    x = gen_fpc_covariate(spec, 20, np.random.default_rng(0), size=5)
    np.testing.assert_allclose(x, 0.0, atol=1e-140)


def test_fpc_moments():
    spec = FpcSpec()
    T, t = 100, 37
    x = gen_fpc_covariate(spec, T, np.random.default_rng(1), size=100_000)[:, t]
    assert abs(x.mean()) < 0.01
    assert x.var() == pytest.approx(spec.variance(T)[t], rel=0.02)


def test_case1_treated_fraction():
    data, truth = generate(ScenarioSpec(case="I", n=10_000, T=5, seed=2))
    for t in range(5):
        assert abs(data.A[:, t].mean() - truth.pi[:, t].mean()) < 0.02


def test_case2_structure():
    sc = ScenarioSpec(case="II", n=10_000, T=5, seed=3)
    data, truth = generate(sc)
    np.testing.assert_allclose(np.unique(np.round(truth.pi, 12)), np.round([1 / (1 + np.e), 1 / (1 + np.exp(-1))], 12))
    assert np.all(np.abs(truth.delta[:, 1:]) == 0.15)
    assert not truth.delta[:, 0].any()
    # covariate-law oracle for P(nu = +1), from fresh independent draws
    rng = np.random.default_rng(99)
    x1 = gen_fpc_covariate(sc.fpc, sc.T, rng, size=200_000)[:, 2]
    u1 = gen_fpc_covariate(sc.fpc, sc.T, rng, size=200_000)[:, 2]
    p_plus = np.mean((x1 > 1.0) | (u1 > 0.2))
    assert abs((truth.delta[:, 2] > 0).mean() - p_plus) < 0.02


def test_structural_outcome_gamma_zero_ignores_past_treatment():
    sc = ScenarioSpec(case="I", n=50, T=6, gamma=0.0, seed=4)
    data, truth = generate(sc)
    Xt = np.concatenate([np.ones((50, 6, 1)), np.repeat(data.Z[:, None], 6, axis=1), data.X], axis=2)
    g_part = truth.g[:, None] + truth.noise
    Y, off = structural_outcome(np.asarray(data.A, float), Xt, truth.beta, 0.0, g_part, truth.delta)
    flipped = np.asarray(data.A, float).copy()
    flipped[:, :-1] = 1 - flipped[:, :-1]
    Y2, off2 = structural_outcome(flipped, Xt, truth.beta, 0.0, g_part, truth.delta)
    assert not off.any() and not off2.any()
    np.testing.assert_array_equal(Y[:, -1], Y2[:, -1])
    np.testing.assert_allclose(Y, data.Y, atol=1e-12)


def test_structural_outcome_offset_recursion():
    A = np.array([[1.0, 1.0, 0.0]])
    Xt = np.ones((1, 3, 1))
    beta = np.ones((3, 1))
    Y, off = structural_outcome(A, Xt, beta, 0.5, np.zeros((1, 3)), np.zeros((1, 3)))
    np.testing.assert_allclose(off, [[0.0, 0.5, 0.75]])
    np.testing.assert_allclose(Y, [[1.0, 1.5, 0.75]])


def test_oracle_decomposition_recovers_beta():
    sc = ScenarioSpec(case="I", n=20_000, T=3, gamma=0.3, missing_prob=0.0, seed=5)
    data, truth = generate(sc)
    for t in range(1, 4):
        treated = data.A[:, t - 1] == 1
        Xt = np.column_stack([np.ones(sc.n), data.Z, data.X[:, t - 1]])[treated]
        resid = (data.Y[:, t - 1] - truth.h0[:, t - 1])[treated]
        coef, *_ = np.linalg.lstsq(Xt, resid, rcond=None)
        np.testing.assert_allclose(coef, truth.beta[t - 1], atol=0.01)
        # the DML moment with oracle nuisances agrees
        beta, _, _ = solve_beta_t(data, t, truth.h0[:, t - 1], truth.pi[:, t - 1])
        np.testing.assert_allclose(beta, truth.beta[t - 1], atol=0.02)


def test_missingness():
    sc = ScenarioSpec(case="I", n=200, T=100, seed=6)
    data, _ = simulate(sc)
    assert abs(data.M.mean() - 0.70) < 0.01
    full, _ = generate(sc)
    same = apply_missingness(full, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(same.M, full.M)
    np.testing.assert_array_equal(data.A, full.A)
    sparse = apply_missingness(full, 0.999, np.random.default_rng(0))
    assert len(validate(sparse).flagged_times()) >= 0.95 * sc.T
    with pytest.raises(ValueError):
        apply_missingness(full, 1.0, np.random.default_rng(0))


def test_generation_is_deterministic():
    sc = ScenarioSpec(case="II", n=40, T=8, seed=7)
    a, ta = simulate(sc)
    b, tb = simulate(sc)
    for name in ("Y", "A", "Z", "X", "U", "M"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_array_equal(ta.h0, tb.h0)
    r0, _ = simulate(sc, replicate_rng(sc.seed, 0))
    r1, _ = simulate(sc, replicate_rng(sc.seed, 1))
    assert not np.array_equal(r0.Y, r1.Y)


def test_scenario_validation_and_round_trip():
    sc = ScenarioSpec(case="II", n=10, T=3)
    assert sc.R == 2 and ScenarioSpec().R == 8
    assert ScenarioSpec.from_dict(sc.to_dict()) == sc
    for bad in ({"case": "III"}, {"gamma": 1.5}, {"missing_prob": 1.0}, {"n": 0}, {"g_noise": "never"}):
        with pytest.raises(ValueError):
            ScenarioSpec(**bad)


def test_metrics_exact_truth_and_two_replicates():
    truth = true_beta(3)
    est = np.stack([truth, truth])
    m = compute_metrics(est, np.full_like(est, 0.1), truth, method="m").frame
    assert np.all(m["bias"] == 0) and np.all(m["sd"] == 0) and np.all(m["cp"] == 100)
    h = 0.02
    pair = np.stack([truth, truth + 2 * h])
    m2 = compute_metrics(pair, np.full_like(pair, 1.0), truth).frame
    np.testing.assert_allclose(m2["bias"], h, atol=1e-15)
    np.testing.assert_allclose(m2["sd"], h * np.sqrt(2), atol=1e-15)


def test_metrics_single_replicate_and_display():
    truth = true_beta(2)
    est = truth[None] + 0.001
    table = compute_metrics(est, np.full_like(est, 0.01), truth, method="m")
    assert table.frame["sd"].isna().all()
    np.testing.assert_allclose(table.frame["bias"], 0.001)
    shown = table.display()
    np.testing.assert_allclose(shown["bias_e-3"], 1.0)
    np.testing.assert_allclose(shown["se_e-2"], 1.0)
    with pytest.raises(ValueError):
        compute_metrics(est, est[:, :1], truth)


def test_monte_carlo_serial_equals_parallel():
    sc = ScenarioSpec(case="I", n=120, T=5, seed=8)
    methods = ("proposed-known", "no-dml")
    a = run_monte_carlo(sc, 3, methods=methods, jobs=1)
    b = run_monte_carlo(sc, 3, methods=methods, jobs=2)
    for m in methods:
        np.testing.assert_array_equal(a.estimates[m], b.estimates[m])
        np.testing.assert_array_equal(a.ses[m], b.ses[m])
    assert a.metrics.frame.equals(b.metrics.frame)
    assert a.failure_counts() == {m: 0 for m in methods}
    assert len(a.raw) == 2 * 3 * 5 * 5

