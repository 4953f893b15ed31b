import pandas as pd
import pytest
from fastapi.testclient import TestClient
from sqlalchemy.orm import sessionmaker

from app.config import settings
from app.main import app
from app.models.database import get_db, make_engine
from app.models.init_db import init_db
from app.services.simulate import generate, scenario

CATEGORICAL_3X2 = {
    "OUTCOME_FAMILY": "categorical",
    "COVARIATES": "z",
    "INSTRUMENTS": "z",
    "CATEGORICAL": "z",
    "TABLE": "0.4,0.2,0.4;0.2,0.4,0.4",
    "PI": 0.5,
}


@pytest.fixture()
def client(tmp_path):
    engine = make_engine(f"sqlite:///{tmp_path / 'runs.db'}")
    init_db(engine)
    TestingSession = sessionmaker(autocommit=False, autoflush=False, bind=engine)

    def override_get_db():
        db = TestingSession()
        try:
            yield db
        finally:
            db.close()

    app.dependency_overrides[get_db] = override_get_db
    yield TestClient(app)
    app.dependency_overrides.clear()
    engine.dispose()


def test_health(client):
    response = client.get("/api/health")
    assert response.status_code == 200
    assert response.json() == {"status": "healthy"}


def test_diagnose_categorical(client):
    response = client.post("/api/diagnose", json={"config": CATEGORICAL_3X2})
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "NotIdentifiable"
    assert body["witness"]


def test_diagnose_probit(client):
    config = {
        "SCENARIO": "S1",
        "KAPPA2": 1,
        "LINK": "probit",
        "COVARIATES": ["u", "z"],
        "INSTRUMENTS": "z",
        "CATEGORICAL": "z",
        "RESPONSE_COLUMNS": "u",
        "ALPHA": [0.7, -0.2],
        "BETA": 0.29,
        "OUTCOME_FAMILY": "normal",
        "OUTCOME_BASIS": "linear",
        "OUTCOME_COLUMNS": "u,z",
        "KAPPA": [0.3, 0.4, 1],
        "SIGMA2": 0.5,
    }
    response = client.post("/api/diagnose", json={"config": config, "n": 300})
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ConditionFailed(C7)"
    assert body["failed"] == ["C7"]
    assert body["checks"]["C7"] is False
    assert body["witness"] is None


def test_diagnose_bad_config(client):
    response = client.post("/api/diagnose", json={"config": {"OUTCOME_FAMILY": "poisson"}})
    assert response.status_code == 400


def test_simulate_over_limit(client):
    response = client.post("/api/simulate", json={"scenario": "S1", "R": settings.api_max_replicates + 1})
    assert response.status_code == 400
    assert "command line" in response.json()["detail"]


def test_simulate_unknown_scenario(client):
    response = client.post("/api/simulate", json={"scenario": "S7", "R": 2})
    assert response.status_code == 400


def test_simulate_small(client):
    response = client.post("/api/simulate", json={"scenario": "S1", "n": 300, "R": 2, "seed": 1})
    assert response.status_code == 200
    body = response.json()
    methods = {(row["parameter"], row["method"]) for row in body["rows"]}
    assert ("E[y]", "CC") in methods
    assert ("beta", "FI") in methods
    assert body["markdown"].startswith("| Scenario |")


def test_fit_upload(client, config_dir, tmp_path):
    path = tmp_path / "data.csv"
    generate(scenario("S1"), 400, seed=5).to_csv(path)
    config = (config_dir / "s1.env").read_text()
    with open(path, "rb") as handle:
        response = client.post(
            "/api/fit",
            files={"file": ("data.csv", handle, "text/csv")},
            data={"config": config, "B": "0"},
        )
    assert response.status_code == 200
    body = response.json()
    parameters = {row["Parameter"] for row in body["rows"]}
    assert {"E[y]", "beta"} <= parameters


def test_fit_refusal_is_a_user_error(client, config_dir, tmp_path):
    path = tmp_path / "data.csv"
    generate(scenario("S1"), 400, seed=5).to_csv(path)
    config = (config_dir / "s1_probit.env").read_text()
    with open(path, "rb") as handle:
        response = client.post(
            "/api/fit",
            files={"file": ("data.csv", handle, "text/csv")},
            data={"config": config, "B": "0"},
        )
    assert response.status_code == 400


def test_runs_are_recorded(client):
    client.post("/api/diagnose", json={"config": CATEGORICAL_3X2})
    client.post("/api/simulate", json={"scenario": "S7", "R": 2})
    runs = client.get("/api/runs").json()
    assert [run["command"] for run in runs] == ["simulate", "diagnose"]
    assert runs[0]["status"] == "error"
    assert runs[0]["exit_code"] == 1
    assert runs[1]["message"] == "NotIdentifiable"
    only = client.get("/api/runs", params={"command": "diagnose"}).json()
    assert len(only) == 1


def test_fit_schema_error_names_the_upload(client, config_dir, tmp_path):
    path = tmp_path / "survey.csv"
    generate(scenario("S1"), 100, seed=5).to_csv(path)
    pd.read_csv(path).drop(columns=["delta"]).to_csv(path, index=False)
    config = (config_dir / "s1.env").read_text()
    with open(path, "rb") as handle:
        response = client.post(
            "/api/fit",
            files={"file": ("survey.csv", handle, "text/csv")},
            data={"config": config, "B": "0"},
        )
    assert response.status_code == 400
    detail = response.json()["detail"]
    assert detail.startswith("survey.csv: missing column 'delta'")
    assert "BytesIO" not in detail
