import io
import json
import logging
from typing import Any, Dict, List, Optional

import pandas as pd
from dotenv import dotenv_values
from fastapi import APIRouter, Depends, File, Form, HTTPException, UploadFile
from pydantic import BaseModel
from sqlalchemy.orm import Session

from app.config import settings
from app.errors import MnarError, NumericalError, UserInputError
from app.models.database import get_db
from app.models.model_config import ModelConfig
from app.services.estimate import EstimatorConfig, markdown_table
from app.services.run_ledger import list_runs, record_run
from app.services.simulate import run_monte_carlo, scenario
from app.services.workflows import PILOT_N, diagnose_model_config, fit_model_config

logger = logging.getLogger(__name__)

router = APIRouter()


class DiagnoseRequest(BaseModel):
    config: Dict[str, Any]
    n: int = PILOT_N
    seed: int = 0


class DiagnoseResponse(BaseModel):
    status: str
    failed: List[str]
    checks: Dict[str, bool]
    notes: List[str]
    witness: Optional[List[Dict[str, Any]]] = None


class SimulateRequest(BaseModel):
    scenario: str
    n: int = 500
    R: int = 10
    seed: int = 0
    kappa2: Optional[float] = None
    link: Optional[str] = None
    B: int = 0
    method: str = "quadrature"
    oracle: bool = False


class TableResponse(BaseModel):
    rows: List[Dict[str, Any]]
    markdown: str
    notes: List[str] = []


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    # to_json maps NaN to null
    return json.loads(frame.to_json(orient="records"))


def _http_error(e: MnarError) -> HTTPException:
    if isinstance(e, UserInputError):
        return HTTPException(status_code=400, detail=str(e))
    if isinstance(e, NumericalError):
        return HTTPException(status_code=422, detail=str(e))
    return HTTPException(status_code=400, detail=str(e))


def _parse_config_text(text: str) -> ModelConfig:
    return ModelConfig(dict(dotenv_values(stream=io.StringIO(text))), "uploaded config")


@router.get("/health")
def health_check():
    return {"status": "healthy"}


@router.post("/diagnose", response_model=DiagnoseResponse)
def diagnose(request: DiagnoseRequest, db: Session = Depends(get_db)):
    try:
        config = ModelConfig.from_mapping(request.config)
        verdict = diagnose_model_config(config, None, request.n, request.seed)
    except MnarError as e:
        record_run(db, "diagnose", "error", e.exit_code, seed=request.seed, message=str(e))
        raise _http_error(e)
    record_run(db, "diagnose", "ok", 0, scenario=config.scenario, seed=request.seed, config_digest=config.digest(), message=verdict.label)
    witness = verdict.witness_frame()
    return DiagnoseResponse(
        status=verdict.label,
        failed=list(verdict.failed),
        checks=dict(verdict.checks),
        notes=list(verdict.notes),
        witness=None if witness is None else _records(witness),
    )


@router.post("/fit", response_model=TableResponse)
def fit(
    file: UploadFile = File(...),
    config: str = Form(...),
    seed: int = Form(0),
    B: int = Form(0),
    method: str = Form("quadrature"),
    override_identifiability: bool = Form(False),
    db: Session = Depends(get_db),
):
    try:
        model_config = _parse_config_text(config)
        data = model_config.load_dataset(io.BytesIO(file.file.read()), source=file.filename or "upload")
        estimator = EstimatorConfig(method=method, n_bootstrap=B, check_identifiability=not override_identifiability)
        results, table = fit_model_config(model_config, data, estimator, seed)
    except MnarError as e:
        record_run(db, "fit", "error", e.exit_code, seed=seed, message=str(e))
        raise _http_error(e)
    record_run(db, "fit", "ok", 0, seed=seed, config_digest=model_config.digest())
    notes = [note for result in results for note in result.notes]
    return TableResponse(rows=_records(table), markdown=markdown_table(table), notes=notes)


@router.post("/simulate", response_model=TableResponse)
def simulate(request: SimulateRequest, db: Session = Depends(get_db)):
    if request.R > settings.api_max_replicates:
        raise HTTPException(
            status_code=400,
            detail=f"R={request.R} exceeds the API limit of {settings.api_max_replicates}; use the command line",
        )
    try:
        spec = scenario(request.scenario, kappa2=request.kappa2, link=request.link)
        estimator = EstimatorConfig(
            method=request.method, n_bootstrap=request.B, check_identifiability=False, oracle=request.oracle
        )
        report = run_monte_carlo(spec, request.n, request.R, estimator, request.seed)
    except MnarError as e:
        record_run(db, "simulate", "error", e.exit_code, scenario=request.scenario, seed=request.seed, message=str(e))
        raise _http_error(e)
    record_run(db, "simulate", "ok", 0, scenario=spec.name, seed=request.seed)
    return TableResponse(rows=_records(report.summary), markdown=report.to_markdown())


@router.get("/runs")
def runs(limit: int = 50, command: Optional[str] = None, db: Session = Depends(get_db)):
    return [record.to_dict() for record in list_runs(db, limit, command)]
