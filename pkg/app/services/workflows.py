"""Config-driven diagnose and fit runs shared by the CLI and the HTTP router."""
import logging
from typing import List, Optional, Tuple

import pandas as pd

from app.errors import ConfigError
from app.models.dataset import Dataset
from app.models.model_config import ModelConfig
from app.services.estimate import EstimatorConfig, FitResult, estimates_table, fit_mean_score, fit_outcome_mle
from app.services.identify import (
    CategoricalRespondentTable,
    IdentifiabilityVerdict,
    categorical_table_from_data,
    check_categorical,
    identifiability_checklist,
)
from app.services.simulate import ScenarioSpec, generate, scenario

logger = logging.getLogger(__name__)

PILOT_N = 2000


def _fmt(value: float) -> str:
    return format(float(value), ".12g")


def scenario_config(spec: ScenarioSpec) -> ModelConfig:
    """Explicit config describing a generated dataset and its truth."""
    response = spec.response
    link = response.link
    values = {
        "SCENARIO": spec.name,
        "LINK": f"robit{link.df}" if link.kind == "student_t" else link.kind,
        "COVARIATES": ",".join(spec.covariates),
        "INSTRUMENTS": ",".join(spec.instruments),
        "CATEGORICAL": ",".join(spec.categorical),
        "RESPONSE_COLUMNS": ",".join(response.h_basis.columns),
        "ALPHA": ",".join(_fmt(a) for a in response.alpha),
        "BETA": ",".join(_fmt(b) for b in response.beta),
        "OUTCOME_FAMILY": spec.outcome.family,
        "OUTCOME_COLUMNS": ",".join(spec.estimation_outcome.columns),
    }
    if spec.kappa2 is not None:
        values["KAPPA2"] = _fmt(spec.kappa2)
    if spec.estimation_outcome is spec.outcome:
        values["OUTCOME_BASIS"] = "linear"
        values["KAPPA"] = ",".join(_fmt(k) for k in spec.outcome.kappa)
        if spec.outcome.sigma2 is not None:
            values["SIGMA2"] = _fmt(spec.outcome.sigma2)
    else:
        values["OUTCOME_BASIS"] = "spline"
    return ModelConfig(values)


def scenario_from_config(config: ModelConfig) -> ScenarioSpec:
    name = config.scenario.upper()
    kappa2 = config.number("KAPPA2") if name in ("S1", "S2") else None
    link = config.links()[0].kind if name == "S4" else None
    return scenario(name, kappa2=kappa2, link=link)


def diagnose_model_config(
    config: ModelConfig, data: Optional[Dataset] = None, pilot_n: int = PILOT_N, seed: int = 0
) -> IdentifiabilityVerdict:
    """Categorical rank test when outcome and instrument are categorical, the checklist otherwise.

    Without data, a SCENARIO key supplies a pilot sample from the preset;
    the model is the config's when it carries parameters, the preset's truth
    otherwise.
    """
    if config.is_categorical:
        if data is not None:
            table = categorical_table_from_data(data)
        else:
            table = CategoricalRespondentTable(config.table())
        return check_categorical(table, config.base_pi())
    if data is not None:
        outcome = fit_outcome_mle(data, config.outcome(), config.spline_criterion).model
        response = config.response()
    elif config.scenario:
        spec = scenario_from_config(config)
        data = generate(spec, pilot_n, seed)
        outcome = config.outcome() if config.get("KAPPA") else spec.outcome
        response = config.response() if config.get("ALPHA") else spec.response
    else:
        raise ConfigError("diagnose needs data or a SCENARIO key for non-categorical models")
    return identifiability_checklist(response, outcome, data)


def fit_model_config(
    config: ModelConfig, data: Dataset, estimator: EstimatorConfig, seed: int = 0
) -> Tuple[List[FitResult], pd.DataFrame]:
    """One mean-score fit per configured link, plus the combined estimates table."""
    results = []
    for link in config.links():
        logger.info(f"fitting {link.label} response model")
        results.append(
            fit_mean_score(
                data,
                config.outcome(),
                config.response(link),
                estimator,
                seed=seed,
                standardize=config.standardize,
            )
        )
    return results, estimates_table(results, data)
