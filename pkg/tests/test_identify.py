import numpy as np
import pandas as pd
import pytest
from scipy import special

from app.errors import ConfigError
from app.models.bases import LinearBasis
from app.models.dataset import Dataset
from app.models.links import LinkFunction
from app.models.outcome import OutcomeModel
from app.models.response import ResponseModel
from app.services.identify import (
    IDENTIFIABLE,
    INCONCLUSIVE,
    NOT_IDENTIFIABLE,
    CategoricalModel,
    CategoricalRespondentTable,
    JointModel,
    categorical_table_from_data,
    check_categorical,
    check_completeness_counterexample,
    check_mlr,
    check_tail_condition,
    identifiability_checklist,
    observed_loglik,
    phi_functional,
    verify_equal_observed_likelihood,
)
from app.services.simulate import generate, scenario

TABLE_3X2 = [[0.4, 0.2], [0.2, 0.4], [0.4, 0.4]]


def _example_one(alpha1, beta):
    response = ResponseModel(LinkFunction("logistic"), LinearBasis(("x",)), LinearBasis(), alpha=[0.0, alpha1], beta=[beta])
    outcome = OutcomeModel("normal", LinearBasis(("x",)), [0.0, 1.0], 1.0)
    return JointModel(response, outcome)


X_GRID = pd.DataFrame({"x": np.round(np.arange(-3.0, 3.0 + 1e-9, 0.1), 10)})


# ---------------------------------------------------------------------------
# identified functional
# ---------------------------------------------------------------------------


def test_phi_without_missingness_is_p1():
    response = ResponseModel(LinkFunction("logistic"), LinearBasis(), LinearBasis(), alpha=[30.0], beta=[0.0])
    outcome = OutcomeModel("normal", LinearBasis(), [0.2], 1.5)
    y = np.array([-1.0, 0.5, 2.0])
    phi = phi_functional(response, outcome, {"u": 0.0}, y)
    np.testing.assert_allclose(phi, outcome.density(pd.DataFrame({"u": [0.0] * 3}), y), rtol=1e-6)


def test_categorical_denominators_are_two():
    table = CategoricalRespondentTable(TABLE_3X2)
    base = CategoricalModel(table, 0.5)
    alternative = CategoricalModel(table, [2.0 / 3.0, 2.0 / 3.0, 4.0 / 11.0])
    np.testing.assert_allclose(base.denominators(), [2.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(alternative.denominators(), [2.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(base.phi_grid(), np.array(TABLE_3X2).T / 2.0, atol=1e-15)
    check = verify_equal_observed_likelihood(base, alternative)
    assert check.equal and check.distance <= 1e-8


def test_example_one_models_are_equivalent():
    check = verify_equal_observed_likelihood(_example_one(1.0, 1.0), _example_one(3.0, -1.0), X_GRID)
    assert check.equal
    assert check.distance <= 1e-8


def test_identical_models_have_zero_distance():
    model = _example_one(1.0, 1.0)
    assert verify_equal_observed_likelihood(model, model, X_GRID).distance == 0.0


def test_perturbed_beta_is_detected():
    check = verify_equal_observed_likelihood(_example_one(1.0, 1.1), _example_one(3.0, -1.0), X_GRID)
    assert not check.equal
    assert check.distance > 1e-3


def test_observed_loglik_under_constant_response():
    rng = np.random.default_rng(9)
    n = 50
    delta = (rng.random(n) < 0.6).astype(float)
    delta[0] = 1.0
    y = np.where(delta == 1.0, rng.normal(1.0, 1.0, n), np.nan)
    frame = pd.DataFrame({"u": rng.normal(size=n), "z": rng.integers(0, 2, n).astype(float), "y": y, "delta": delta})
    data = Dataset(frame, ("u", "z"), ("z",))
    response = ResponseModel(LinkFunction("logistic"), LinearBasis(), LinearBasis(), alpha=[0.4], beta=[0.0])
    outcome = OutcomeModel("normal", LinearBasis(), [1.0], 1.0)
    p = special.expit(0.4)
    obs = delta == 1.0
    expected = outcome.log_density(data.observed, y[obs]).sum() + obs.sum() * np.log(p) + (~obs).sum() * np.log(1.0 - p)
    assert observed_loglik(response, outcome, data) == pytest.approx(expected, rel=1e-10)


# ---------------------------------------------------------------------------
# categorical rank test
# ---------------------------------------------------------------------------


def test_three_by_two_table_is_not_identifiable():
    verdict = check_categorical(CategoricalRespondentTable(TABLE_3X2))
    assert verdict.status == NOT_IDENTIFIABLE
    assert verdict.label == "NotIdentifiable"
    witness = verdict.witness
    assert witness is not None
    assert witness.distance <= 1e-8
    assert np.all(witness.pi_alt >= 0.05 - 1e-12) and np.all(witness.pi_alt <= 0.95 + 1e-12)
    assert not np.allclose(witness.pi_alt, 0.5)
    frame = verdict.witness_frame()
    assert list(frame.columns) == ["y_level", "pi", "pi_alt"]
    assert len(frame) == 3


def test_single_level_is_identifiable():
    assert check_categorical(CategoricalRespondentTable([[1.0, 1.0]])).status == IDENTIFIABLE


def test_rank_deficient_square_table_is_inconclusive():
    verdict = check_categorical(CategoricalRespondentTable([[0.3, 0.3], [0.7, 0.7]]))
    assert verdict.status == INCONCLUSIVE
    assert any("rank(p1)=1" in note for note in verdict.notes)


def test_two_by_two_identifiable_by_grid_search():
    p1 = np.array([[0.3, 0.8], [0.7, 0.2]])
    table = CategoricalRespondentTable(p1)
    assert check_categorical(table).status == IDENTIFIABLE

    phi = CategoricalModel(table, 0.5).phi_grid()
    grid = np.round(np.arange(1, 1000) * 1e-3, 3)
    pi1, pi2 = np.meshgrid(grid, grid, indexing="ij")
    w = np.stack([1.0 / pi1.ravel(), 1.0 / pi2.ravel()])
    denominators = p1.T @ w
    candidates = p1.T[:, :, None] / denominators[:, None, :]
    distance = np.max(np.abs(candidates - phi[:, :, None]), axis=(0, 1))
    matches = np.flatnonzero(distance <= 1e-9)
    assert len(matches) == 1
    assert pi1.ravel()[matches[0]] == pytest.approx(0.5)
    assert pi2.ravel()[matches[0]] == pytest.approx(0.5)


def _random_table(rng, m_y):
    # keep entries and the 2x2 determinant away from zero so 1e-3 grid steps resolve the answer
    while True:
        p1 = rng.dirichlet(2.0 * np.ones(m_y), size=2).T
        if p1.min() < 0.05:
            continue
        if m_y == 2 and abs(p1[0, 0] - p1[0, 1]) < 0.4:
            continue
        return p1


def _closest_alternative(p1, pi=0.5, away=0.05):
    """Smallest phi distance to any mechanism at least `away` from pi, on a 1e-3 grid.

    All but the last pi'(y) run over the grid; the last is solved so the first
    instrument level matches exactly.
    """
    m_y = p1.shape[0]
    grid = np.arange(1, 1001) * 1e-3
    axes = np.meshgrid(*([grid] * (m_y - 1)), indexing="ij")
    w_free = np.stack([1.0 / axis.ravel() for axis in axes])
    D = p1.T @ np.full(m_y, 1.0 / pi)
    w_last = (D[0] - p1[:-1, 0] @ w_free) / p1[-1, 0]
    w = np.vstack([w_free, w_last])[:, w_last >= 1.0]
    w = w[:, np.max(np.abs(1.0 / w - pi), axis=0) >= away]
    phi = p1.T / D[:, None]
    phi_alt = p1.T[:, :, None] / (p1.T @ w)[:, None, :]
    return float(np.max(np.abs(phi_alt - phi[:, :, None]), axis=(0, 1)).min())


@pytest.mark.parametrize("m_y", [2, 3])
def test_random_tables_agree_with_grid_search(m_y):
    rng = np.random.default_rng(20 + m_y)
    for _ in range(5):
        p1 = _random_table(rng, m_y)
        verdict = check_categorical(CategoricalRespondentTable(p1))
        distance = _closest_alternative(p1)
        assert (distance <= 5e-4) == (verdict.status == NOT_IDENTIFIABLE)
        assert verdict.status == (IDENTIFIABLE if m_y == 2 else NOT_IDENTIFIABLE)


def test_malformed_tables_rejected():
    with pytest.raises(ConfigError):
        CategoricalRespondentTable([[0.5, 0.2], [0.6, 0.8]])
    with pytest.raises(ConfigError):
        CategoricalRespondentTable([[1.2, 1.0], [-0.2, 0.0]])
    with pytest.raises(ConfigError):
        CategoricalRespondentTable([0.5, 0.5])


def test_table_from_data():
    frame = pd.DataFrame(
        {
            "z": [1, 1, 1, 2, 2, 2, 2, 1],
            "y": [1, 2, 2, 1, 3, 3, 3, np.nan],
            "delta": [1, 1, 1, 1, 1, 1, 1, 0],
        }
    )
    data = Dataset(frame, ("z",), ("z",), categorical=("z",))
    table = categorical_table_from_data(data)
    assert table.m_y == 3 and table.m_z == 2
    np.testing.assert_allclose(table.p1[:, 0], [1 / 3, 2 / 3, 0.0])
    np.testing.assert_allclose(table.p1[:, 1], [0.25, 0.0, 0.75])
    assert check_categorical(table).status == NOT_IDENTIFIABLE


# ---------------------------------------------------------------------------
# tail condition, likelihood ratio, completeness
# ---------------------------------------------------------------------------


def test_logistic_tail_holds_at_one():
    tail = check_tail_condition(LinkFunction("logistic"))
    assert tail.holds and tail.analytic
    assert tail.s == 1.0


def test_probit_tail_fails():
    tail = check_tail_condition(LinkFunction("probit"))
    assert not tail.holds
    assert tail.s is None


@pytest.mark.parametrize("link", [LinkFunction("cauchy"), LinkFunction("student_t", 3)])
def test_polynomial_tails_hold(link):
    tail = check_tail_condition(link, s_grid=(1.0,))
    assert tail.holds
    assert tail.scan[1.0]


def test_tail_exponents_validated():
    with pytest.raises(ConfigError):
        check_tail_condition(LinkFunction("logistic"), s_grid=(2.0,))


def test_mlr_follows_instrument_strength():
    u, z1, z2 = {"u": 0.0}, {"z": 0.0}, {"z": 1.0}
    assert check_mlr(scenario("S1").outcome, u, z1, z2)
    assert not check_mlr(scenario("S1", kappa2=0.0).outcome, u, z1, z2)
    assert check_mlr(scenario("S3").outcome, u, z1, z2)
    with pytest.raises(ConfigError):
        check_mlr(scenario("S1").outcome, u, z1, z1)


def test_completeness_counterexample():
    assert check_completeness_counterexample([0.0], z_levels=(0.0,)) == pytest.approx(0.0, abs=1e-12)
    assert check_completeness_counterexample([2.5], z_levels=(1.0,)) < 1e-8
    assert check_completeness_counterexample(np.linspace(-3.0, 3.0, 13)) < 1e-8
    assert check_completeness_counterexample([0.0, 2.5], quadratic=2.0) > 0.5


# ---------------------------------------------------------------------------
# condition checklist
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def s1_pilot():
    return generate(scenario("S1"), 400, seed=5)


def test_s1_is_identifiable(s1_pilot):
    spec = scenario("S1")
    verdict = identifiability_checklist(spec.response, spec.outcome, s1_pilot)
    assert verdict.status == IDENTIFIABLE
    assert verdict.label == "Identifiable"
    assert all(verdict.checks.values())
    assert "status=Identifiable" in verdict.to_report()


def test_probit_fails_tail_condition(s1_pilot):
    spec = scenario("S1")
    verdict = identifiability_checklist(spec.response.with_link(LinkFunction("probit")), spec.outcome, s1_pilot)
    assert verdict.failed == ("C7",)
    assert verdict.label == "ConditionFailed(C7)"


def test_irrelevant_instrument_fails_likelihood_ratio_condition():
    spec = scenario("S1", kappa2=0.0)
    data = generate(spec, 400, seed=5)
    verdict = identifiability_checklist(spec.response, spec.outcome, data)
    assert verdict.failed == ("C6",)


def test_instrument_in_response_fails_exclusion(s1_pilot):
    spec = scenario("S1")
    response = ResponseModel(LinkFunction("logistic"), LinearBasis(("u", "z")), LinearBasis(), alpha=[0.7, -0.2, 0.1], beta=[0.29])
    verdict = identifiability_checklist(response, spec.outcome, s1_pilot)
    assert "C1" in verdict.failed


def test_bernoulli_outcome_passes_tail_condition_automatically():
    spec = scenario("S3")
    data = generate(spec, 400, seed=5)
    verdict = identifiability_checklist(spec.response, spec.outcome, data)
    assert verdict.checks["C7"]
    assert verdict.status == IDENTIFIABLE


def test_checklist_is_deterministic(s1_pilot):
    spec = scenario("S1")
    first = identifiability_checklist(spec.response, spec.outcome, s1_pilot)
    second = identifiability_checklist(spec.response, spec.outcome, s1_pilot)
    assert first.to_report() == second.to_report()
