import time

import numpy as np
import pandas as pd
import pytest

from app.errors import (
    ConfigError,
    DegenerateMissingnessError,
    FitError,
    IdentifiabilityRefusal,
    SeparationError,
)
from app.models.bases import LinearBasis
from app.models.dataset import Dataset
from app.models.links import LinkFunction
from app.models.outcome import OutcomeModel
from app.models.response import ResponseModel
from app.numerics.quadrature import integrate_over_y
from app.numerics.rng import rng_stream
from app.services.estimate import (
    EstimatorConfig,
    MeanScorePipeline,
    MeanScoreSystem,
    OraclePipeline,
    bootstrap,
    estimates_table,
    fit_logistic,
    fit_mean_score,
    fit_outcome_mle,
    ipw_mean,
    markdown_table,
    score_s0,
    score_s1,
    solve_mean_score,
    write_table_csv,
)
from app.services.simulate import generate, scenario, true_mean


def _constant_response(alpha0=0.0, beta=0.0, link="logistic"):
    return ResponseModel(LinkFunction.parse(link), LinearBasis(), LinearBasis(), alpha=[alpha0], beta=[beta])


def _s1_skeleton():
    return scenario("S1").response_skeleton


def _s1_outcome_spec():
    return OutcomeModel("normal", LinearBasis(("u", "z")), np.zeros(3), 1.0)


def _small_frame():
    return pd.DataFrame(
        {"u": [0.0, 0.0, 0.0, 0.0], "z": [0.0, 1.0, 0.0, 1.0], "y": [1.0, 3.0, np.nan, np.nan], "delta": [1, 1, 0, 0]}
    )


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------


def test_s1_score_at_zero_predictor():
    response = ResponseModel(LinkFunction("logistic"), LinearBasis(("u",)), LinearBasis(), alpha=[0.0, 0.0], beta=[0.0])
    np.testing.assert_allclose(score_s1(response, {"u": 1.0}, 0.0), [0.5, 0.5, 0.0], atol=1e-15)


def test_s0_without_mnar_term():
    outcome = OutcomeModel("normal", LinearBasis(), [0.8], 1.0)
    s0 = score_s0(_constant_response(), outcome, {"u": 0.0})
    np.testing.assert_allclose(s0, [-0.5, -0.4], atol=1e-12)


def test_s0_fractional_imputation_tracks_quadrature():
    response = _constant_response(0.3, 0.5)
    outcome = OutcomeModel("normal", LinearBasis(), [0.8], 1.0)
    quadrature = score_s0(response, outcome, {"u": 0.0})
    imputed = score_s0(response, outcome, {"u": 0.0}, method="fi", rng=rng_stream(3, 0), n_imputations=20000)
    np.testing.assert_allclose(imputed, quadrature, atol=0.03)


def _s0_imputation_se(response, outcome, s0):
    # delta method for the ratio of draw means: sd of s1 + s0 (1/pi - 1) over E1[1/pi - 1]
    def spread(k):
        def f(Y):
            t = response.alpha[0] + response.beta[0] * Y
            s1 = response.link.dlog_cdf(t) * (1.0 if k == 0 else Y)
            return (s1 + s0[k] * response.link.odds_against(t)) ** 2

        return f

    def odds(Y):
        return response.link.odds_against(response.alpha[0] + response.beta[0] * Y)

    denominator = integrate_over_y(odds, outcome, {"u": 0.0})
    return np.array([np.sqrt(integrate_over_y(spread(k), outcome, {"u": 0.0})) for k in (0, 1)]) / denominator


def test_s0_fractional_imputation_converges_on_random_configs():
    rng = np.random.default_rng(20)
    M = 10 ** 5
    ratios = []
    for i in range(20):
        link = "logistic" if i % 2 == 0 else "cauchy"
        response = _constant_response(rng.uniform(-0.5, 1.0), rng.uniform(-0.8, 0.8), link)
        outcome = OutcomeModel("normal", LinearBasis(), [rng.uniform(-1.0, 1.0)], rng.uniform(0.25, 1.5))
        quadrature = score_s0(response, outcome, {"u": 0.0})
        imputed = score_s0(response, outcome, {"u": 0.0}, method="fi", rng=rng_stream(5, i), n_imputations=M)
        se = _s0_imputation_se(response, outcome, quadrature) / np.sqrt(M)
        ratios.extend(np.abs(imputed - quadrature) / se)
    # 40 components: the typical error is one SE, none beyond four
    assert np.median(ratios) < 1.5
    assert max(ratios) < 4.0


def test_s0_needs_draws_or_generator():
    outcome = OutcomeModel("normal", LinearBasis(), [0.8], 1.0)
    with pytest.raises(ConfigError):
        score_s0(_constant_response(), outcome, {"u": 0.0}, method="fi")
    with pytest.raises(ConfigError):
        score_s0(_constant_response(), outcome, {"u": 0.0}, method="newton")


def test_vanishing_nonresponse_is_degenerate():
    outcome = OutcomeModel("normal", LinearBasis(), [0.0], 1.0)
    with pytest.raises(DegenerateMissingnessError, match="row 0"):
        score_s0(_constant_response(alpha0=40.0), outcome, {"u": 0.0})


def test_mean_score_system_is_zero_at_truth_in_large_samples(s1_data):
    spec = scenario("S1")
    system = MeanScoreSystem(s1_data, spec.response, spec.outcome, EstimatorConfig(n_bootstrap=0))
    # sqrt(n) scaling: the mean score at the truth is O(1/sqrt(n))
    assert np.max(np.abs(system(spec.response.phi))) < 5.0 / np.sqrt(s1_data.n)


# ---------------------------------------------------------------------------
# respondents' model
# ---------------------------------------------------------------------------


def test_logistic_fit_rejects_constant_response():
    X = np.column_stack([np.ones(4), [0.1, 0.2, 0.3, 0.4]])
    with pytest.raises(SeparationError):
        fit_logistic(X, np.ones(4))


def test_logistic_fit_recovers_coefficients():
    rng = np.random.default_rng(0)
    u = rng.normal(size=20000)
    X = np.column_stack([np.ones_like(u), u])
    y = (rng.random(u.size) < 1.0 / (1.0 + np.exp(-(0.5 - 1.0 * u)))).astype(float)
    coef, n_iter = fit_logistic(X, y)
    np.testing.assert_allclose(coef, [0.5, -1.0], atol=0.06)
    assert n_iter < 20


def test_outcome_fit_flags_zero_variance():
    frame = pd.DataFrame({"u": [0.1, 0.5, -0.3, 0.9, 1.4], "z": [0.0, 1.0, 1.0, 0.0, 1.0]})
    frame["y"] = 1.0 + 2.0 * frame["u"] - frame["z"]
    frame["delta"] = 1
    frame.loc[4, "y"] = np.nan
    frame.loc[4, "delta"] = 0
    fit = fit_outcome_mle(Dataset(frame, ("u", "z"), ("z",)), _s1_outcome_spec())
    assert fit.degenerate
    np.testing.assert_allclose(fit.model.kappa, [1.0, 2.0, -1.0], atol=1e-10)
    assert fit.model.sigma2 > 0.0


def test_outcome_fit_needs_enough_rows():
    with pytest.raises(FitError):
        fit_outcome_mle(Dataset(_small_frame(), ("u", "z"), ("z",)), _s1_outcome_spec())


def test_outcome_fit_reports_information_criteria(s1_data):
    fit = fit_outcome_mle(s1_data, _s1_outcome_spec())
    assert fit.n_obs == s1_data.n_observed
    assert fit.aic == pytest.approx(-2.0 * fit.loglik + 8.0)
    assert fit.bic > fit.aic
    np.testing.assert_allclose(fit.model.kappa, [0.3, 0.4, 1.0], atol=0.2)
    assert fit.residual_frame(s1_data).shape[0] == s1_data.n_observed


# ---------------------------------------------------------------------------
# mean score and inverse probability weighting
# ---------------------------------------------------------------------------


def test_horvitz_thompson_by_hand():
    data = Dataset(_small_frame(), ("u", "z"), ("z",))
    assert ipw_mean(data, _constant_response()) == pytest.approx(2.0)
    assert ipw_mean(data, _constant_response(), hajek=True) == pytest.approx(2.0)


def test_hajek_differs_from_horvitz_thompson():
    data = Dataset(_small_frame(), ("u", "z"), ("z",))
    response = _constant_response(alpha0=0.0, beta=0.5)
    pi = 1.0 / (1.0 + np.exp(-0.5 * np.array([1.0, 3.0])))
    ht = (1.0 / pi[0] + 3.0 / pi[1]) / 4.0
    hajek = (1.0 / pi[0] + 3.0 / pi[1]) / (1.0 / pi[0] + 1.0 / pi[1])
    assert ipw_mean(data, response) == pytest.approx(ht)
    assert ipw_mean(data, response, hajek=True) == pytest.approx(hajek)


def test_fully_observed_data_is_refused():
    frame = pd.DataFrame({"u": [0.1, 0.2, 0.3], "z": [0.0, 1.0, 0.0], "y": [1.0, 2.0, 3.0], "delta": [1, 1, 1]})
    data = Dataset(frame, ("u", "z"), ("z",))
    outcome = OutcomeModel("normal", LinearBasis(), [2.0], 1.0)
    with pytest.raises(DegenerateMissingnessError):
        solve_mean_score(data, outcome, _s1_skeleton())


def test_probit_response_is_refused(s1_data):
    response = _s1_skeleton().with_link(LinkFunction("probit"))
    with pytest.raises(IdentifiabilityRefusal) as excinfo:
        fit_mean_score(s1_data, _s1_outcome_spec(), response, EstimatorConfig(n_bootstrap=0))
    assert excinfo.value.verdict.failed == ("C7",)
    assert excinfo.value.exit_code == 1


def test_refusal_can_be_overridden(s1_data):
    response = _s1_skeleton().with_link(LinkFunction("probit"))
    config = EstimatorConfig(n_bootstrap=0, check_identifiability=False)
    result = fit_mean_score(s1_data, _s1_outcome_spec(), response, config)
    assert result.converged


def test_s1_fit_recovers_mean(s1_data):
    result = fit_mean_score(s1_data, _s1_outcome_spec(), _s1_skeleton(), EstimatorConfig(n_bootstrap=0))
    assert result.converged
    assert result.residual_norm <= 1e-8
    assert result.phi_names == ("alpha0", "alpha1", "beta")
    assert result.method == "Quadrature"
    assert result.link == "Logistic"
    assert abs(result.mean_estimate - true_mean(scenario("S1"))) < 0.2
    assert set(result.estimates()) >= {"E[y]", "beta", "kappa[z]", "sigma2"}


def test_standardization_is_equivariant(s1_data):
    config = EstimatorConfig(n_bootstrap=0, check_identifiability=False)
    raw = MeanScorePipeline(_s1_outcome_spec(), _s1_skeleton(), config, standardize=False)(s1_data)
    scaled = MeanScorePipeline(_s1_outcome_spec(), _s1_skeleton(), config, standardize=True)(s1_data)
    assert scaled.on_data_scale
    assert scaled.mean == pytest.approx(raw.mean, abs=1e-6)
    np.testing.assert_allclose(scaled.phi, raw.phi, atol=1e-5)
    np.testing.assert_allclose(scaled.gamma, raw.gamma, atol=1e-8)
    np.testing.assert_allclose(scaled.outcome_fit.residuals, raw.outcome_fit.residuals, atol=1e-8)


def test_fractional_imputation_close_to_quadrature(s1_data):
    quadrature = fit_mean_score(
        s1_data, _s1_outcome_spec(), _s1_skeleton(), EstimatorConfig(n_bootstrap=0, check_identifiability=False)
    )
    fi = fit_mean_score(
        s1_data,
        _s1_outcome_spec(),
        _s1_skeleton(),
        EstimatorConfig(method="fi", n_imputations=500, n_bootstrap=0, check_identifiability=False),
        seed=4,
    )
    assert fi.method == "FI(500)"
    assert fi.mean_estimate == pytest.approx(quadrature.mean_estimate, abs=0.05)


# ---------------------------------------------------------------------------
# bootstrap and output
# ---------------------------------------------------------------------------


def _constant_outcome_data():
    frame = pd.DataFrame(
        {"u": np.linspace(-1.0, 1.0, 12), "z": np.tile([0.0, 1.0], 6), "y": 3.0, "delta": 1}
    )
    frame.loc[[2, 5, 9], "y"] = np.nan
    frame.loc[[2, 5, 9], "delta"] = 0
    return Dataset(frame, ("u", "z"), ("z",))


def test_bootstrap_of_constant_hajek_mean_has_zero_se():
    pipeline = OraclePipeline(_constant_response(0.2, 0.1), hajek=True)
    result = bootstrap(_constant_outcome_data(), pipeline, B=25, seed=1)
    assert result.n_failed == 0
    assert not result.unstable
    np.testing.assert_allclose(result.se, 0.0, atol=1e-12)
    np.testing.assert_allclose(result.estimates[:, -1], 3.0, atol=1e-12)


def test_bootstrap_is_reproducible():
    data = _constant_outcome_data()
    pipeline = OraclePipeline(_constant_response(0.2, 0.1))
    first = bootstrap(data, pipeline, B=10, seed=8)
    second = bootstrap(data, pipeline, B=10, seed=8)
    np.testing.assert_array_equal(first.estimates, second.estimates)
    assert first.se[-1] > 0.0
    np.testing.assert_allclose(first.se, first.estimates.std(axis=0, ddof=1))


def test_percentile_intervals_cover_replicates():
    pipeline = OraclePipeline(_constant_response(0.2, 0.1))
    result = bootstrap(_constant_outcome_data(), pipeline, B=40, seed=2, percentile=True)
    assert result.ci_low[-1] <= np.median(result.estimates[:, -1]) <= result.ci_high[-1]


def test_bootstrap_and_config_validation():
    with pytest.raises(ConfigError):
        bootstrap(_constant_outcome_data(), OraclePipeline(_constant_response()), B=1, seed=0)
    with pytest.raises(ConfigError):
        EstimatorConfig(n_bootstrap=1)
    with pytest.raises(ConfigError):
        EstimatorConfig(method="em")
    assert EstimatorConfig(method="FI(M)").method == "fi"


def test_fit_with_bootstrap_reports_intervals(s1_data):
    config = EstimatorConfig(n_bootstrap=4, check_identifiability=False)
    result = fit_mean_score(s1_data, _s1_outcome_spec(), _s1_skeleton(), config, seed=3)
    low, high = result.ci["E[y]"]
    assert low < result.mean_estimate < high
    assert result.se["beta"] > 0.0
    frame = result.to_frame()
    assert list(frame.columns) == ["Method", "Parameter", "Estimate", "SE", "CI_low", "CI_high"]


def test_estimates_table_and_markdown(s1_data, tmp_path):
    result = fit_mean_score(
        s1_data, _s1_outcome_spec(), _s1_skeleton(), EstimatorConfig(n_bootstrap=0, check_identifiability=False)
    )
    table = estimates_table([result], s1_data)
    assert table.iloc[-1]["Method"] == "CC"
    assert table.iloc[-1]["Estimate"] == pytest.approx(np.nanmean(s1_data.y))
    assert set(table["Method"]) == {"FI (Logistic)", "CC"}
    text = markdown_table(table)
    assert text.splitlines()[0] == "| Method | Parameter | Estimate | SE | CI_low | CI_high |"
    assert "n/a" in text
    write_table_csv(table, tmp_path / "estimates.csv")
    assert "NA" in (tmp_path / "estimates.csv").read_text()


# ---------------------------------------------------------------------------
# cost and large-sample behaviour
# ---------------------------------------------------------------------------


def _solve_seconds(name):
    spec = scenario(name)
    data = generate(spec, 2000, seed=13)
    config = EstimatorConfig(n_bootstrap=0, check_identifiability=False)
    runs = []
    for _ in range(2):
        start = time.perf_counter()
        solve_mean_score(data, spec.outcome, spec.response_skeleton, config)
        runs.append(time.perf_counter() - start)
    return min(runs)


def test_cauchy_fit_costs_a_small_multiple_of_logistic():
    assert _solve_seconds("S2") < 10.0 * _solve_seconds("S1")


@pytest.mark.slow
def test_s3_estimates_are_consistent():
    spec = scenario("S3")
    data = generate(spec, 10 ** 5, seed=31)
    fit = fit_outcome_mle(data, OutcomeModel("bernoulli", LinearBasis(("u", "z")), np.zeros(3)))
    np.testing.assert_allclose(fit.model.kappa, [-0.21, 3.8, 1.0], atol=0.1)
    solution = solve_mean_score(data, fit.model, spec.response_skeleton, EstimatorConfig(n_bootstrap=0))
    assert solution.result.converged
    np.testing.assert_allclose(solution.response.phi, [0.4, 0.39, 0.3], atol=0.15)
