import json

import pytest

from lipode.resnet import save_weights, smooth_init
from lipode.spec_store import save_spec
from lipode.types import ParamClassSpec, WeightClassSpec
from lipode_cli.main import dispatch

UNIT_WEIGHTS = WeightClassSpec(
    d=1, L=10, r_w=1.0, k_w=1.0, k_sigma=1.0, r_x=1.0, r_y=1.0, k_loss=1.0
)


@pytest.fixture
def env(tmp_path, monkeypatch):
    monkeypatch.setenv("LIPODE_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("LIPODE_OUTPUT_DIR", str(tmp_path / "output"))
    monkeypatch.setenv("LIPODE_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("LIPODE_PROFILE", "desk")
    monkeypatch.setenv("LIPODE_JOBS", "1")
    return tmp_path


def _json_from(out):
    return json.loads(out[out.index("{") :])


def test_help_and_usage_errors(env, capsys):
    assert dispatch(["--help"]) == 0
    assert dispatch([]) == 2
    assert dispatch(["certify", "--bound", "resnet"]) == 2
    assert dispatch(["fig2", "--lambdas", "0,-1"]) == 2
    assert dispatch(["train", "--epochs", "0"]) == 2


@pytest.mark.parametrize(
    "name, value", [("LIPODE_PROFILE", "laptop"), ("LIPODE_JOBS", "many")]
)
def test_bad_environment_is_a_usage_error(env, monkeypatch, capsys, name, value):
    monkeypatch.setenv(name, value)
    assert dispatch(["cover", "--R", "1", "--K", "1", "--eps", "1"]) == 2
    assert name in capsys.readouterr().err


def test_certify_unit_resnet_class(env, capsys):
    spec = save_spec(UNIT_WEIGHTS, env / "unit.json")
    out = env / "reports" / "unit_report.json"
    argv = ["certify", "--bound", "resnet", "--spec", str(spec)]
    argv += ["--n", "1e6", "--delta", "0.1", "--output", str(out)]
    assert dispatch(argv) == 0
    doc = _json_from(capsys.readouterr().out)
    assert doc["B"] == pytest.approx(85.76403, rel=1e-6)
    assert json.loads(out.read_text())["total"] == pytest.approx(doc["total"])
    manifest = json.loads((out.parent / "unit_report.manifest.json").read_text())
    assert manifest["command"] == "certify"


def test_certify_failures(env, capsys):
    param = ParamClassSpec(
        m=1, r_theta=1.0, k_theta=1.0, k_f=1.0, sup_f=1.0, r_x=1.0, r_y=1.0, k_loss=1.0
    )
    spec = save_spec(param, env / "param.json")
    argv = ["certify", "--bound", "param-ode", "--spec", str(spec), "--delta", "0.1"]
    assert dispatch(argv + ["--n", "8"]) == 1
    assert "n_threshold" in capsys.readouterr().out
    # a param_ode spec is not a resnet spec
    wrong = ["certify", "--bound", "resnet", "--spec", str(spec)]
    assert dispatch(wrong + ["--n", "1e6", "--delta", "0.1"]) == 1
    assert "InvalidArgumentError" in capsys.readouterr().err


def test_missing_input_files_exit_with_error(env, capsys):
    missing = env / "nowhere.json"
    argv = ["certify", "--bound", "resnet", "--spec", str(missing)]
    assert dispatch(argv + ["--n", "1e6", "--delta", "0.1"]) == 1
    captured = capsys.readouterr()
    assert "FileNotFoundError" in captured.err
    assert "nowhere.json" in captured.out
    assert "FileNotFoundError" in (env / "logs" / "lipode.log").read_text()
    spec = save_spec(UNIT_WEIGHTS, env / "unit.json")
    argv = ["certify", "--bound", "bartlett", "--spec", str(spec)]
    argv += ["--weights", str(env / "nowhere.odrn")]
    assert dispatch(argv) == 1


def test_certify_bartlett_from_weights(env, capsys):
    spec = save_spec(UNIT_WEIGHTS, env / "unit.json")
    weights = save_weights(smooth_init(10, 1, seed=0), env / "w.odrn")
    argv = ["certify", "--bound", "bartlett", "--spec", str(spec)]
    argv += ["--weights", str(weights), "--n", "1e4", "--delta", "0.1"]
    dispatch(argv)
    doc = _json_from(capsys.readouterr().out)
    assert doc["bound_name"] == "bartlett"
    assert doc["inputs_echo"]["A"] > 0


def test_cover_command(env, capsys):
    out = env / "cover.txt"
    argv = ["cover", "--R", "1", "--K", "1", "--eps", "1", "--verify", "20"]
    assert dispatch(argv + ["--output", str(out)]) == 0
    text = capsys.readouterr().out
    assert "cover: 32 members" in text
    assert "within eps" in text
    assert out.exists()
    assert (env / "cover.manifest.json").exists()
    assert (env / "logs" / "lipode.log").exists()


def test_verify_props_command(env, capsys):
    argv = ["verify-props", "--suite", "cover", "--samples", "5"]
    assert dispatch(argv) == 0
    doc = _json_from(capsys.readouterr().out)
    assert doc["passed"] is True and doc["samples"] == 5


def test_train_command_writes_a_certificate(env, capsys):
    out = env / "run"
    argv = ["train", "--epochs", "1", "--d", "3", "--L", "4"]
    argv += ["--train-size", "40", "--test-size", "20", "--output", str(out)]
    assert dispatch(argv) == 0
    for name in ("weights.odrn", "record.csv", "certificate.json", "manifest.json"):
        assert (out / name).exists(), name
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["bound_name"] == "resnet"
    assert any("cross-entropy" in note for note in cert["notes"])
    assert len((out / "record.csv").read_text().splitlines()) == 3


def test_weight_tied_training_from_the_command_line(env, capsys):
    out = env / "tied"
    argv = ["train", "--epochs", "1", "--d", "2", "--L", "3", "--lam", "inf"]
    argv += ["--train-size", "20", "--test-size", "10", "--output", str(out)]
    assert dispatch(argv) == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["inputs_echo"]["spec"]["k_w"] == 0.0


def test_fig2_then_plot(env, capsys):
    out = env / "fig2"
    argv = ["fig2", "--epochs", "1", "--d", "2", "--L", "3", "--repeats", "1"]
    argv += ["--train-size", "20", "--test-size", "10", "--lambdas", "0,inf"]
    assert dispatch(argv + ["--output", str(out)]) == 0
    assert "fig2: 2 rows" in capsys.readouterr().out
    assert dispatch(["plot", "--csv", str(out / "fig2.csv")]) == 0
    assert (out / "fig2.svg").exists()
    assert (out / "fig2.manifest.json").exists()
