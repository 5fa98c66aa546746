import math

import numpy as np
import pytest

from rctpred import core
from rctpred.core import (
    DesignSpec,
    PopulationSummary,
    PredictionModel,
    TrialData,
    VarianceSpec,
)
from rctpred.errors import (
    DegenerateReferenceError,
    DomainError,
    InsufficientDataError,
    InvalidWeightError,
    SingularMatrixError,
    UnbalancedDesignError,
)


# ---------------------------------------------------------------------------
# standardize / summarize
# ---------------------------------------------------------------------------


def test_standardize_centering_identity():
    ref = PopulationSummary(mu=[2.0, -1.0], sigma=[[4.0, 0.0], [0.0, 9.0]], n_units=10)
    data = np.tile([2.0, -1.0], (5, 1))
    assert np.all(standard := core.standardize(data, ref) == 0.0), standard


def test_standardize_unit_variance_shift():
    ref = PopulationSummary(mu=[1.0], sigma=[[1.0]], n_units=2)
    out = core.standardize(np.array([[0.0], [2.0]]), ref)
    assert np.allclose(out.ravel(), [-1.0, 1.0])


def test_standardize_self_summary_gives_zero_mean_unit_variance():
    rng = np.random.default_rng(7)
    data = rng.normal(size=(200, 3)) * [1.5, 0.2, 4.0] + [3.0, -1.0, 0.5]
    out = core.standardize(data, core.summarize(data))
    resummary = core.summarize(out)
    assert np.allclose(resummary.mu, 0.0, atol=1e-12)
    assert np.allclose(np.diag(resummary.sigma), 1.0, atol=1e-12)


def test_standardize_idempotent_against_standard_summary():
    rng = np.random.default_rng(8)
    data = rng.normal(size=(50, 2))
    once = core.standardize(data, core.summarize(data))
    twice = core.standardize(once, PopulationSummary.standard(2))
    assert np.allclose(once, twice)


def test_standardize_zero_variance_column_names_it():
    ref = PopulationSummary(mu=[0.0, 0.0], sigma=[[1.0, 0.0], [0.0, 0.0]], n_units=5)
    with pytest.raises(DegenerateReferenceError, match="column 1"):
        core.standardize(np.zeros((3, 2)), ref)


def test_summarize_two_point():
    summary = core.summarize(np.array([[0.0, 0.0], [2.0, 2.0]]))
    assert np.allclose(summary.mu, [1.0, 1.0])
    assert np.allclose(summary.sigma, [[1.0, 1.0], [1.0, 1.0]])
    assert summary.n_units == 2


def test_summarize_identical_rows_zero_sigma():
    summary = core.summarize(np.tile([3.0, 1.0, 2.0], (6, 1)))
    assert np.allclose(summary.sigma, 0.0)


def test_summarize_matches_streaming_oracle():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(100, 3))
    # Streaming (Welford-style) recomputation, independent of the two-pass path.
    mean = np.zeros(3)
    m2 = np.zeros((3, 3))
    for i, row in enumerate(data, start=1):
        delta = row - mean
        mean += delta / i
        m2 += np.outer(delta, row - mean)
    summary = core.summarize(data)
    assert np.allclose(summary.mu, mean, atol=1e-10)
    assert np.allclose(summary.sigma, m2 / data.shape[0], atol=1e-10)


def test_summarize_needs_two_rows():
    with pytest.raises(InsufficientDataError):
        core.summarize(np.ones((1, 2)))


def test_population_summary_validates():
    with pytest.raises(DomainError):
        PopulationSummary(mu=[0.0, 0.0], sigma=[[1.0, 0.5], [0.4, 1.0]], n_units=3)
    with pytest.raises(DomainError):
        PopulationSummary(mu=[0.0], sigma=[[-1.0]], n_units=3)
    with pytest.raises(DomainError):
        PopulationSummary(mu=[0.0, 1.0], sigma=[[1.0]], n_units=3)


# ---------------------------------------------------------------------------
# ols_fit
# ---------------------------------------------------------------------------


def test_ols_interpolates_noiseless_line():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 2))
    y = 1.5 + x @ np.array([2.0, -0.5])
    fit = core.ols_fit(x, y)
    assert np.allclose(fit.coefficients, [1.5, 2.0, -0.5], atol=1e-10)
    assert fit.residual_variance == pytest.approx(0.0, abs=1e-18)


def test_ols_constant_weights_match_unweighted():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    plain = core.ols_fit(x, y)
    scaled = core.ols_fit(x, y, w=np.full(40, 3.7))
    assert np.allclose(plain.coefficients, scaled.coefficients, atol=1e-12)
    # Weighted RSS scales with the weights; coefficients do not.
    assert scaled.residual_variance == pytest.approx(3.7 * plain.residual_variance)


def test_ols_matches_explicit_normal_equations():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(60, 2))
    y = 0.3 + x @ np.array([1.0, 2.0]) + rng.normal(size=60)
    design = np.column_stack([np.ones(60), x])
    a = design.T @ design
    # Hand-rolled 3x3 inversion via cofactors.
    det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
           - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
           + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            cof[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1]
                                           - minor[0, 1] * minor[1, 0])
    inv = cof.T / det
    expected = inv @ (design.T @ y)
    fit = core.ols_fit(x, y)
    assert np.allclose(fit.coefficients, expected, atol=1e-9)


def test_ols_residuals_orthogonal_to_design():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(50, 3))
    y = rng.normal(size=50)
    w = rng.uniform(0.2, 2.0, size=50)
    fit = core.ols_fit(x, y, w=w)
    design = np.column_stack([np.ones(50), x])
    resid = y - design @ fit.coefficients
    inner = design.T @ (w * resid)
    assert np.all(np.abs(inner) < 1e-8 * np.linalg.norm(y))


def test_ols_singular_design_raises():
    x = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(SingularMatrixError):
        core.ols_fit(x, np.arange(10.0))


def test_ols_negative_weight_raises():
    with pytest.raises(InvalidWeightError):
        core.ols_fit(np.ones((5, 1)) * np.arange(5)[:, None], np.arange(5.0),
                     w=np.array([1, 1, -1, 1, 1.0]))


def test_ols_needs_residual_dof():
    with pytest.raises(InsufficientDataError):
        core.ols_fit(np.array([[1.0], [2.0]]), np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# tau_squared
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("s0,s1,rho,expected", [
    (1.0, 1.0, 1.0, 0.0),
    (1.0, 1.0, 0.0, 2.0),
    (1.0, 2.0, 0.5, 3.0),
])
def test_tau_squared_values(s0, s1, rho, expected):
    assert core.tau_squared(s0, s1, rho) == pytest.approx(expected)


def test_tau_squared_nonnegative_and_zero_only_at_degenerate_point():
    rng = np.random.default_rng(9)
    for _ in range(500):
        s0, s1 = rng.uniform(0, 3, size=2)
        rho = rng.uniform(-1, 1)
        value = core.tau_squared(s0, s1, rho)
        assert value >= 0.0
        if abs(s0 - s1) > 1e-9 or rho < 1.0 - 1e-12:
            if s0 > 1e-6 and s1 > 1e-6:
                assert value > 0.0
    assert core.tau_squared(1.7, 1.7, 1.0) == 0.0


def test_tau_squared_domain_errors():
    with pytest.raises(DomainError):
        core.tau_squared(1.0, 1.0, 1.5)
    with pytest.raises(DomainError):
        core.tau_squared(-0.1, 1.0, 0.0)


# ---------------------------------------------------------------------------
# ate_estimate
# ---------------------------------------------------------------------------


def test_ate_constant_arms_reports_undefined_t():
    trial = TrialData(x=np.zeros((4, 0)), y=[1.0, 1.0, 1.0, 1.0], t=[0, 0, 1, 1])
    res = core.ate_estimate(trial)
    assert res.delta_hat == 0.0
    assert res.se == 0.0
    assert math.isnan(res.t)


def test_ate_hand_computation():
    trial = TrialData(x=np.zeros((4, 0)), y=[3.0, 5.0, 1.0, 1.0], t=[1, 1, 0, 0])
    res = core.ate_estimate(trial)
    assert res.delta_hat == pytest.approx(3.0)
    assert res.se == pytest.approx(1.0)
    assert res.t == pytest.approx(3.0)
    assert res.df == pytest.approx(1.0)


def test_ate_satterthwaite_formula():
    rng = np.random.default_rng(10)
    y = rng.normal(size=30)
    t = np.array([0] * 12 + [1] * 18)
    res = core.ate_estimate(TrialData(x=np.zeros((30, 0)), y=y, t=t))
    v0 = np.var(y[t == 0], ddof=1) / 12
    v1 = np.var(y[t == 1], ddof=1) / 18
    expected = (v0 + v1) ** 2 / (v0 ** 2 / 11 + v1 ** 2 / 17)
    assert res.df == pytest.approx(expected)


def test_ate_single_unit_arm_raises():
    with pytest.raises(InsufficientDataError):
        core.ate_estimate(TrialData(x=np.zeros((3, 0)), y=[1.0, 2.0, 3.0],
                                    t=[0, 1, 1]))


# ---------------------------------------------------------------------------
# quantiles (frozen 30-digit reference values)
# ---------------------------------------------------------------------------

NORMAL_REFERENCE = {
    0.95: 1.6448536269514727,
    0.975: 1.9599639845400542,
    0.8: 0.84162123357291421,
    0.005: -2.5758293035489008,
    0.3: -0.52440051270804078,
    0.9999: 3.7190164854556806,
}

T_REFERENCE = {
    (0.975, 77): 1.991254395388385,
    (0.8, 77): 0.84631423698739486,
    (0.999, 3): 10.214531852407387,
    (0.2, 12.5): -0.87132970440529159,
    (0.975, 1): 12.706204736174705,
    (0.95, 5): 2.0150483733330242,
    (0.6, 2): 0.28867513459481288,
}


def test_quantile_normal_against_reference():
    for prob, expected in NORMAL_REFERENCE.items():
        assert core.quantile_normal(prob) == pytest.approx(expected, abs=1e-12)


def test_quantile_t_against_reference():
    for (prob, df), expected in T_REFERENCE.items():
        assert core.quantile_t(prob, df) == pytest.approx(expected, abs=1e-8)


def test_quantile_t_median_is_zero():
    for df in (1, 2.5, 30, 1e6):
        assert core.quantile_t(0.5, df) == 0.0


def test_quantile_t_normal_limit():
    assert core.quantile_t(0.975, 1e9) == pytest.approx(1.9600, abs=1e-4)


def test_quantile_t_monotone_and_antisymmetric():
    probs = np.linspace(0.01, 0.99, 25)
    values = [core.quantile_t(p, 7.3) for p in probs]
    assert np.all(np.diff(values) > 0)
    for p in probs:
        assert core.quantile_t(p, 7.3) == pytest.approx(
            -core.quantile_t(1 - p, 7.3), abs=1e-10)


def test_quantile_domain_errors():
    for bad in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(DomainError):
            core.quantile_normal(bad)
        with pytest.raises(DomainError):
            core.quantile_t(bad, 5)
    with pytest.raises(DomainError):
        core.quantile_t(0.5, 0.0)


# ---------------------------------------------------------------------------
# spec dataclasses
# ---------------------------------------------------------------------------


def test_variance_spec_links_tau_and_tau_star():
    var = VarianceSpec(sigma0_sq=4.0, tau_sq=1.0)
    assert var.tau_star_sq == pytest.approx(0.25)
    var2 = VarianceSpec(sigma0_sq=4.0, tau_star_sq=0.25)
    assert var2.tau_sq == pytest.approx(1.0)
    with pytest.raises(DomainError):
        VarianceSpec(sigma0_sq=4.0, tau_star_sq=0.5, tau_sq=1.0)


def test_variance_spec_conditional_pieces():
    var = VarianceSpec(sigma0_sq=1.0, r0p_sq=0.8, rtaup_sq=0.4,
                       tau_star_sq=0.0625, rho0eta=0.0)
    assert var.sigma0_cond_sq == pytest.approx(0.2)
    assert var.tau_cond_sq == pytest.approx(0.0375)
    assert var.sigma1_cond_sq == pytest.approx(0.2375)
    assert var.sigma1_sq_derived == pytest.approx(1.0625)


def test_variance_spec_range_checks():
    with pytest.raises(DomainError):
        VarianceSpec(rho01=1.5)
    with pytest.raises(DomainError):
        VarianceSpec(r0p_sq=1.2)
    with pytest.raises(DomainError):
        VarianceSpec(sigma0_sq=-1.0)


def test_design_spec_pi_consistency():
    design = DesignSpec(n0=30, n1=10)
    assert design.pi_treat == pytest.approx(0.25)
    with pytest.raises(DomainError):
        DesignSpec(n0=30, n1=10, pi_treat=0.5)
    with pytest.raises(UnbalancedDesignError):
        DesignSpec(n0=30, n1=10).require_balanced()


def test_trial_data_validation():
    with pytest.raises(DomainError):
        TrialData(x=np.zeros((3, 1)), y=[1.0, 2.0], t=[0, 1])
    with pytest.raises(DomainError):
        TrialData(x=np.zeros((2, 1)), y=[1.0, 2.0], t=[0, 2])
    with pytest.raises(DomainError):
        TrialData(x=np.zeros((2, 1)), y=[1.0, 2.0], t=[1, 1])


def test_prediction_model_predict_shapes():
    model = PredictionModel(ate=0.5, moderator=[1.0, -1.0],
                            resid_var0=1.0, resid_var1=1.0)
    assert model.predict(np.array([1.0, 0.0])) == pytest.approx(1.5)
    batch = model.predict(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(batch, [1.5, -0.5])
