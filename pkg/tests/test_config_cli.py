import json
from pathlib import Path

import numpy as np
import pytest

from pathsplit.brownian import load_increments
from pathsplit.cli import main
from pathsplit.config import experiment_from_values, load_config, parse_config_text, parse_n_list
from pathsplit.errors import ConfigurationError
from pathsplit.harness import build_model, strong_error


def test_parse_config_text():
    vals = parse_config_text("""
        # oscillator run
        model = cir
        model.a = 2.0      # comment after a value
        fine-factor = 32
        tol.nsig = 5
    """)
    assert vals == {"model": "cir", "model.a": "2.0", "fine_factor": "32", "tol.nsig": "5"}
    cfg = experiment_from_values(vals)
    assert cfg.model == "cir" and cfg.fine_factor == 32
    assert cfg.model_params == {"a": "2.0"} and cfg.tolerances == {"nsig": 5.0}


@pytest.mark.parametrize("text,lineno", [("model = a\nnonsense\n", 2), ("a = 1\na = 2\n", 2),
                                         ("= 3\n", 1)])
def test_config_errors_report_line(text, lineno):
    with pytest.raises(ConfigurationError, match=f":{lineno}:"):
        parse_config_text(text)


def test_parse_n_list():
    assert parse_n_list("8,16, 32") == [8, 16, 32]
    assert parse_n_list("2^3..2^6") == [8, 16, 32, 64]
    assert parse_n_list("4..16") == [4, 8, 16]
    for bad in ("8..2", "x", "2^a"):
        with pytest.raises(ConfigurationError):
            parse_n_list(bad)


def test_experiment_value_errors():
    with pytest.raises(ConfigurationError):
        experiment_from_values({"format": "xml"})
    with pytest.raises(ConfigurationError):
        experiment_from_values({"fine_factor": "many"})
    cfg = experiment_from_values({"paths": "1e4", "y0": "1,2", "unknown": "x"})
    assert cfg.paths == 10_000 and cfg.y0 == [1.0, 2.0]


def test_cli_convergence_with_config_and_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model = oscillator\nscheme = sra1\nN = 2^3..2^5\npaths = 300\nseed = 9\n")
    out = tmp_path / "r.json"
    code = main(["convergence", "--config", str(cfg), "--paths", "200", "--batch-size", "100",
                 "--out", str(out), "--format", "json"])
    assert code == 0
    body = json.loads(out.read_text())
    assert [r["M"] for r in body["rows"]] == [200, 200, 200]
    assert body["metadata"]["scheme"] == "sra1"
    assert "slope" in capsys.readouterr().err


def test_cli_ratio_csv(capsys):
    code = main(["ratio", "--scheme", "shifted-ralston", "--scheme-b", "euler-maruyama", "--N", "8,16",
                 "--paths", "200"])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("N,h,S_a") and len(lines) == 3


def test_cli_simulate_trajectory_and_dump(tmp_path, capsys):
    dump = tmp_path / "inc.csv"
    code = main(["simulate", "--model", "cir", "--scheme", "cir-splitting", "--N", "4", "--paths", "3",
                 "--trajectory", "--dump-increments", str(dump)])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "path,t,y0" and len(lines) == 1 + 3 * 5
    assert all(float(l.split(",")[2]) >= 0.0 for l in lines[1:])
    inc = load_increments(dump, 1)
    assert inc.shape == (3, 4, 1)


def test_cli_simulate_is_reproducible(capsys):
    main(["simulate", "--model", "fhn", "--scheme", "fhn-splitting", "--N", "8", "--paths", "4"])
    a = capsys.readouterr().out
    main(["simulate", "--model", "fhn", "--scheme", "fhn-splitting", "--N", "8", "--paths", "4"])
    assert capsys.readouterr().out == a


def test_cli_verify_paths_expected_failure(tmp_path, capsys):
    out = tmp_path / "v.csv"
    code = main(["verify-paths", "--samples", "20000", "--out", str(out), "HS1", "Strang"])
    assert code == 0
    text = capsys.readouterr().out
    assert "expected fail" in text and "overall: PASS" in text
    assert out.read_text().startswith("check,category")


def test_cli_verify_moments_and_brownian(capsys):
    assert main(["verify-moments", "--samples", "200000"]) == 0
    assert main(["verify-brownian", "--samples", "100000"]) == 0
    assert main(["verify-estimators", "--samples", "100000", "--oracle-paths", "2000",
                 "--substeps", "512"]) == 0


def test_cli_errors_exit_two(tmp_path, capsys):
    assert main(["convergence", "--model", "nope"]) == 2
    assert main(["convergence", "--fine-factor", "3"]) == 2
    assert main(["convergence", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["simulate", "--model", "cir", "--scheme", "cir-splitting", "--param", "sigma=5",
                 "--param", "a=1", "--param", "b=1"]) == 2
    err = capsys.readouterr().err
    assert "pathsplit: error:" in err


def test_cli_param_and_threads_do_not_change_output(tmp_path):
    args = ["convergence", "--model", "cir", "--scheme", "cir-splitting", "--param", "a=2",
            "--N", "8,16,32", "--paths", "300", "--batch-size", "100"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--threads", "1", "--out", str(a)]) == 0
    assert main(args + ["--threads", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    s = np.loadtxt(a, delimiter=",", skiprows=1)
    assert s.shape == (3, 5)


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.cfg")))
def test_shipped_configs_load(name, tmp_path):
    vals = load_config(CONFIG_DIR / name)
    cfg = experiment_from_values(vals).validate()
    if cfg.model == "uld-logistic":
        data = tmp_path / "d.csv"
        data.write_text("1,0.5,-1\n-1,0.2,0.3\n1,-0.4,1.1\n")
        cfg.model_params["dataset"] = str(data)
    model, y0 = build_model(cfg.model, cfg.model_params)
    assert y0.shape == (model.dim_state,)
    cfg.paths, cfg.T = 10, 0.1
    s, _ = strong_error(cfg, 2)
    assert np.isfinite(s)
