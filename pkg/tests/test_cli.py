import pandas as pd
import pytest

from app.cli import main


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("generated")
    assert main(["generate", "S1", "--n", "400", "--seed", "5", "--out", str(out)]) == 0
    return out


def test_generate_writes_data_and_config(generated):
    frame = pd.read_csv(generated / "data.csv")
    assert list(frame.columns) == ["u", "z", "y", "delta"]
    assert len(frame) == 400
    assert (frame["y"].isna() == (frame["delta"] == 0)).all()
    config = (generated / "model.env").read_text()
    assert "SCENARIO=S1" in config
    assert "BETA=0.29" in config


def test_generate_is_byte_identical(generated, tmp_path):
    assert main(["generate", "S1", "--n", "400", "--seed", "5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "data.csv").read_bytes() == (generated / "data.csv").read_bytes()
    assert (tmp_path / "model.env").read_bytes() == (generated / "model.env").read_bytes()


def test_generate_needs_seed(tmp_path):
    assert main(["generate", "S1", "--out", str(tmp_path)]) == 1


def test_unknown_scenario(tmp_path):
    assert main(["generate", "S9", "--seed", "1", "--out", str(tmp_path)]) == 1


def test_fit_without_bootstrap(generated, tmp_path):
    code = main(
        ["fit", str(generated / "data.csv"), "--config", str(generated / "model.env"), "--B", "0", "--out", str(tmp_path)]
    )
    assert code == 0
    for name in ("estimates.csv", "estimates.md", "residuals.csv", "fit_diagnostics.txt"):
        assert (tmp_path / name).exists()
    table = pd.read_csv(tmp_path / "estimates.csv")
    assert set(table["Parameter"]) >= {"E[y]", "beta"}
    assert table.loc[table["Method"] != "CC", "SE"].isna().all()
    assert table.loc[table["Method"] == "CC", "SE"].notna().all()
    assert "logistic.converged=true" in (tmp_path / "fit_diagnostics.txt").read_text()


def test_fit_with_bootstrap_needs_seed(generated, tmp_path):
    code = main(
        ["fit", str(generated / "data.csv"), "--config", str(generated / "model.env"), "--B", "10", "--out", str(tmp_path)]
    )
    assert code == 1


def test_fit_refuses_probit(generated, config_dir, tmp_path, capsys):
    code = main(
        ["fit", str(generated / "data.csv"), "--config", str(config_dir / "s1_probit.env"), "--B", "0", "--out", str(tmp_path)]
    )
    assert code == 1
    err = capsys.readouterr().err
    assert "refused" in err
    assert "status=ConditionFailed(C7)" in err


def test_fit_reports_schema_error(generated, tmp_path):
    broken = tmp_path / "broken.csv"
    pd.read_csv(generated / "data.csv").drop(columns=["delta"]).to_csv(broken, index=False)
    code = main(["fit", str(broken), "--config", str(generated / "model.env"), "--B", "0", "--out", str(tmp_path / "out")])
    assert code == 1


def test_diagnose_categorical(config_dir, tmp_path):
    assert main(["diagnose", "--config", str(config_dir / "categorical_3x2.env"), "--out", str(tmp_path)]) == 0
    assert "status=NotIdentifiable" in (tmp_path / "verdict.txt").read_text()
    witness = pd.read_csv(tmp_path / "witness.csv")
    assert len(witness) > 0


def test_diagnose_probit_scenario(config_dir, tmp_path):
    code = main(["diagnose", "--config", str(config_dir / "s1_probit.env"), "--n", "300", "--out", str(tmp_path)])
    assert code == 0
    report = (tmp_path / "verdict.txt").read_text()
    assert "status=ConditionFailed(C7)" in report
    assert "check.C7=fail" in report
    assert not (tmp_path / "witness.csv").exists()


def test_diagnose_bernoulli_scenario(config_dir, tmp_path):
    assert main(["diagnose", "--config", str(config_dir / "s3.env"), "--n", "400", "--out", str(tmp_path)]) == 0
    report = (tmp_path / "verdict.txt").read_text()
    assert report.startswith("status=Identifiable\n")
    assert "check.C7=pass" in report


def test_simulate_then_report(tmp_path):
    first = tmp_path / "sim"
    code = main(["simulate", "S1", "--n", "300", "--R", "2", "--B", "0", "--seed", "1", "--out", str(first)])
    assert code == 0
    for name in ("summary.csv", "replicates.csv", "report.md"):
        assert (first / name).exists()

    second = tmp_path / "report"
    assert main(["report", str(first / "replicates.csv"), "--out", str(second)]) == 0
    pd.testing.assert_frame_equal(
        pd.read_csv(first / "summary.csv"), pd.read_csv(second / "summary.csv"), check_exact=False, rtol=1e-8
    )
    assert (second / "report.md").read_text().startswith("| Scenario |")


def test_report_missing_file(tmp_path):
    assert main(["report", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 1


def test_fit_is_byte_identical(generated, tmp_path):
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(
            [
                "fit",
                str(generated / "data.csv"),
                "--config",
                str(generated / "model.env"),
                "--B",
                "5",
                "--seed",
                "3",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        runs.append(out)
    for name in ("estimates.csv", "estimates.md", "residuals.csv", "fit_diagnostics.txt"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()


def test_simulate_is_byte_identical(tmp_path):
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["simulate", "S1", "--n", "300", "--R", "3", "--B", "5", "--seed", "2", "--out", str(out)]) == 0
        runs.append(out)
    for name in ("summary.csv", "replicates.csv", "report.md"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
