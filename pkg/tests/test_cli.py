import json
import subprocess
import sys

import pytest

from cfcond.analysis import validate_report
from cfcond.cli import main, read_config

CONDENSE = ["condense", "--b", "3.5", "--phi-c", "2", "--rho-over-rhoc", "1.0", "--V", "200",
            "--n", "1000", "--seed", "7"]


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_verify_quick(capsys):
    code, out, _ = run(["verify", "--quick"], capsys)
    assert code == 0
    for rep in json.loads(out):
        validate_report(rep)
        assert rep["verdict"] == "pass"


def test_missing_family_exits_1(capsys):
    code, _, err = run(["exact", "--V", "1", "--M", "3"], capsys)
    assert code == 1
    assert "usage:" in err


@pytest.mark.parametrize("args", [
    [],
    ["nonsense"],
    ["exact", "--b", "3.5", "--phi-c", "2", "--M", "3"],
    ["exact", "--b", "3.5", "--phi-c", "2", "--V", "1", "--M", "3", "--rho", "1"],
    ["exact", "--b", "3.5", "--V", "1", "--M", "3"],
    ["exact", "--b", "0.5", "--phi-c", "2", "--V", "1", "--M", "3"],
    ["sample", "--z", "0.5", "--V", "1", "--M", "3", "--bogus"],
])
def test_validation_failures_exit_1(args, capsys):
    assert run(args, capsys)[0] == 1


def test_condense_deterministic(capsys):
    _, first, _ = run(CONDENSE, capsys)
    _, second, _ = run(CONDENSE, capsys)
    assert first == second
    reports = json.loads(first)
    assert [r["experiment"] for r in reports][:3] == ["lln", "marginal_clt", "bulk_equivalence"]
    for rep in reports:
        validate_report(rep)


def test_condense_subprocess_byte_identical(tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        subprocess.run([sys.executable, "-m", "cfcond", *CONDENSE, "--out", str(path)], check=True)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_seed_from_environment(capsys, monkeypatch):
    args = ["sample", "--b", "3.5", "--phi-c", "2", "--V", "5", "--M", "30", "--n-samples", "5"]
    monkeypatch.setenv("CFCOND_SEED", "11")
    _, env_out, _ = run(args, capsys)
    _, flag_out, _ = run(args + ["--seed", "11"], capsys)
    _, other, _ = run(args + ["--seed", "12"], capsys)
    assert env_out == flag_out != other


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# pair weights\nhead = 1, 1\nV = 1\nM = 2\nwhat = pi\n", encoding="utf-8")
    code, out, _ = run(["--config", str(cfg), "exact"], capsys)
    assert code == 0
    rows = dict(line.split(",") for line in out.strip().splitlines()[1:])
    assert float(rows["2:1"]) == pytest.approx(2 / 3)
    code, out, _ = run(["exact", "--config", str(cfg), "--M", "3"], capsys)
    rows = dict(line.split(",") for line in out.strip().splitlines()[1:])
    assert float(rows["1:1 2:1"]) == pytest.approx(6 / 7)


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n", encoding="utf-8")
    assert run(["--config", str(cfg), "exact"], capsys)[0] == 1


def test_read_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("phi-c = 2  # radius\n\nt_end=5\n", encoding="utf-8")
    assert read_config(str(cfg)) == {"phi_c": "2", "t_end": "5"}


def test_rates_csv(capsys):
    code, out, _ = run(["rates", "--b", "3.5", "--phi-c", "2", "--rho-over-rhoc", "0.8",
                        "--j-max", "64"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "j,J_rho_j"
    vals = [float(line.split(",")[1]) for line in lines[1:-1]]
    sup = float(lines[-1].split(",")[1])
    assert all(b >= a - 1e-10 for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - sup) < 1e-6


def test_sample_lines_conserve_mass(capsys):
    code, out, _ = run(["sample", "--z", "0.5", "--V", "3", "--M", "12", "--n-samples", "20",
                        "--seed", "1"], capsys)
    assert code == 0
    for line in out.strip().splitlines():
        assert sum(int(r) * int(c) for r, c in (p.split(":") for p in line.split())) == 12


def test_sample_summary(capsys):
    code, out, _ = run(["sample", "--b", "3.5", "--phi-c", "2", "--V", "20", "--M", "60",
                        "--n-samples", "50", "--summary"], capsys)
    assert code == 0 and json.loads(out)["n"] == 50


def test_dynamics_csv(tmp_path, capsys):
    summary = tmp_path / "s.json"
    code, out, _ = run(["dynamics", "--kernel", "bd", "--V", "20", "--M", "40", "--t-end", "10",
                        "--seed", "3", "--summary", str(summary)], capsys)
    assert code == 0
    assert out.startswith("r,mean_count,mean_density")
    assert json.loads(summary.read_text())["mass_check"] == pytest.approx(40)


def test_dynamics_from_balance_needs_family(capsys):
    code, _, _ = run(["dynamics", "--from-balance", "--V", "2", "--M", "4"], capsys)
    assert code == 1


def test_ode_csv(capsys):
    code, out, _ = run(["ode", "--R", "40", "--t-end", "2", "--dt", "0.01", "--save-dt", "1",
                        "--show", "5"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "t,mass,c_1,c_2,c_3,c_4,c_5"
    assert len(lines) == 4


def test_diagnose(capsys):
    code, out, _ = run(["diagnose", "--z", "0.5", "--what", "assumptions"], capsys)
    assert code == 0
    (rep,) = json.loads(out)
    assert rep["verdict"] == "fail"


@pytest.mark.parametrize("what", ["pi", "marginal", "largest", "compound", "total"])
def test_exact_outputs(what, capsys):
    code, out, _ = run(["exact", "--b", "3.5", "--phi-c", "2", "--V", "2", "--M", "8",
                        "--what", what], capsys)
    assert code == 0 and out


def test_verify_failure_exits_2(monkeypatch, capsys):
    from cfcond import verify
    from cfcond.analysis import Report

    monkeypatch.setattr(verify, "run_suite", lambda quick: [Report("x", {}, 1.0, None, "fail")])
    code, _, err = run(["verify", "--quick"], capsys)
    assert code == 2
    assert "x" in err
