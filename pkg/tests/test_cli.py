import json
import subprocess
import sys

import pytest
import yaml

from gapdecomp.cli import main
from gapdecomp.dataio import write_csv
from gapdecomp.report import decomposition_from_json
from gapdecomp.synth import DgpSpec, GroupDgp, generate

CATS = {"occ": {"farm": 0.3, "wage": 0.5, "self": 0.2}}


def _spec(sizes=(400, 250, 250, 300), seed=0):
    groups = {}
    for label, n, m in zip(["Others", "ST", "SC", "OBC"], sizes, [1.0, 0.0, 0.3, 0.6]):
        groups[label] = GroupDgp(n, {"age": {"mean": 30 + 5 * m, "sd": 8}, "urban": {"p": 0.2 + 0.3 * m}}, CATS)
    return DgpSpec(groups, {"(intercept)": -2.0, "age": 0.03, "urban": 0.5, "occ=wage": 0.3},
                   outcome="cor", group="caste", seed=seed, weights=("uniform", 0.5, 2.0))


@pytest.fixture
def workspace(tmp_path):
    write_csv(generate(_spec()), tmp_path / "data.csv")
    cfg = {
        "data": "data.csv",
        "filter": "age >= 15 and age <= 59",
        "outcomes": ["cor"],
        "labels": {"cor": "COR"},
        "group": "caste",
        "reference_group": "Others",
        "comparison_groups": ["ST", "SC", "OBC"],
        "weight": "weight",
        "covariates": [{"name": "age", "label": "Age"}, {"name": "urban"},
                       {"name": "occ", "kind": "categorical", "reference": "farm", "label": "Occupation"}],
        "decomposition": {"iterations": 20, "bootstrap_reps": 10, "seed": 11,
                          "blocks": {"Place of residence": ["urban"]}},
    }
    return tmp_path, cfg


def _write(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_validate_clean(workspace, capsys):
    path = _write(*workspace)
    assert main(["validate", "--config", path]) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_validate_unknown_column(workspace, capsys):
    tmp, cfg = workspace
    cfg["covariates"].append({"name": "education"})
    assert main(["validate", "--config", _write(tmp, cfg)]) == 3
    assert "column not found: education" in capsys.readouterr().out


def test_validate_tiny_group(workspace, capsys):
    tmp, cfg = workspace
    text = (tmp / "data.csv").read_text().splitlines()
    header, rows = text[0], text[1:]
    caste = header.split(",").index("caste")
    keep = [r for r in rows if r.split(",")[caste] != "ST"]
    one = next(r for r in rows if r.split(",")[caste] == "ST")
    (tmp / "data.csv").write_text("\n".join([header, *keep, one]) + "\n")
    assert main(["validate", "--config", _write(tmp, cfg)]) == 3
    assert "group too small: ST" in capsys.readouterr().out


def test_run_text_layout(workspace, capsys):
    path = _write(*workspace)
    assert main(["run", "--config", path]) == 0
    out, err = capsys.readouterr()
    assert "seed=11" in err
    assert "Others-ST" in out and "Others-SC" in out and "Others-OBC" in out
    assert "Gap in COR" in out and "Place of residence" in out and "Occupation" in out
    assert out.count("Nonlinear decomposition") == 1
    assert "Average marginal effects" in out and "Summary statistics" in out


def test_run_json_round_trip_and_three_tables(workspace, tmp_path):
    tmp, cfg = workspace
    out = tmp / "r.json"
    assert main(["run", "--config", _write(tmp, cfg), "--format", "json", "--out", str(out)]) == 0
    text = out.read_text()
    data = json.loads(text)
    results = decomposition_from_json(text)
    assert [r.comparison for r in results] == ["ST", "SC", "OBC"]
    assert {r.reference for r in results} == {"Others"}
    assert [r.to_dict() for r in results] == data["decompositions"]
    assert data["decompositions"][0]["units"]["total_gap"] == "proportion"
    assert data["config"]["decomposition"]["seed"] == 11


def test_printed_values_match_export_up_to_rounding(workspace):
    tmp, cfg = workspace
    path = _write(tmp, cfg)
    main(["run", "--config", path, "--format", "json", "--out", str(tmp / "r.json")])
    main(["run", "--config", path, "--format", "text", "--out", str(tmp / "r.txt")])
    res = decomposition_from_json((tmp / "r.json").read_text())[0]
    text = (tmp / "r.txt").read_text()
    c = res.contribution("Age")
    cell = f"{c.estimate:.3f}{c.stars} ({c.se:.3f})"
    assert cell.lstrip("-") in text.replace("-0.000", "0.000")
    assert f"{100 * res.total_gap:.1f}" in text


def test_run_csv(workspace, tmp_path):
    tmp, cfg = workspace
    cfg["output"] = {"format": "csv", "path": "r.csv"}
    assert main(["run", "--config", _write(tmp, cfg)]) == 0
    lines = (tmp / "r.csv").read_text().splitlines()
    assert lines[0] == "table,outcome,comparison,row,field,value"
    assert any(l.startswith("decomposition,cor,OBC,Age,estimate,") for l in lines)


def test_seed_override_changes_draws_only(workspace):
    tmp, cfg = workspace
    path = _write(tmp, cfg)
    main(["run", "--config", path, "--format", "json", "--out", str(tmp / "a.json")])
    main(["run", "--config", path, "--format", "json", "--out", str(tmp / "b.json"), "--seed", "12"])
    a = json.loads((tmp / "a.json").read_text())
    b = json.loads((tmp / "b.json").read_text())
    assert b["config"]["decomposition"]["seed"] == 12
    assert a["summary"] == b["summary"] and a["marginal_effects"] == b["marginal_effects"]
    assert a["decompositions"] != b["decompositions"]


def test_threads_byte_identical(workspace):
    tmp, cfg = workspace
    path = _write(tmp, cfg)
    for t in (1, 8):
        assert main(["run", "--config", path, "--format", "json", "--threads", str(t),
                     "--out", str(tmp / f"t{t}.json")]) == 0
    assert (tmp / "t1.json").read_bytes() == (tmp / "t8.json").read_bytes()


def test_exit_codes(workspace, capsys):
    tmp, cfg = workspace
    assert main(["run", "--config", str(tmp / "missing.yaml")]) == 2
    bad = dict(cfg, decomposition={"iterations": 0})
    assert main(["run", "--config", _write(tmp, bad, "bad.yaml")]) == 2
    assert main(["run", "--config", _write(tmp, dict(cfg, bogus=1), "bogus.yaml")]) == 2
    err = capsys.readouterr().err
    assert json.loads(err.strip().splitlines()[-1])["module"] == "cli"

    nodata = dict(cfg, comparison_groups=["Muslim"])
    assert main(["run", "--config", _write(tmp, nodata, "nd.yaml")]) == 3
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert "Muslim" in json.loads(err)["message"]

    (tmp / "sep.csv").write_text("cor,caste,age,urban,occ,weight\n" + "".join(
        f"{int(i >= 10)},{'Others' if i % 2 else 'ST'},{20 + i},{i % 3 == 0:d},farm,1\n" for i in range(20)))
    sep = dict(cfg, data="sep.csv", comparison_groups=["ST"], filter=None,
               covariates=[{"name": "age"}, {"name": "urban"}])
    assert main(["run", "--config", _write(tmp, sep, "sep.yaml")]) == 4
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["module"] == "probit" and "separation" in err["message"]


def test_synth_subcommand(tmp_path):
    dgp = {"groups": {"A": {"size": 20, "numeric": {"x": {"mean": 0, "sd": 1}}},
                      "B": {"size": 10, "numeric": {"x": {"mean": 1, "sd": 1}}}},
           "beta": {"x": 0.5}, "seed": 3}
    (tmp_path / "dgp.yaml").write_text(yaml.safe_dump(dgp))
    assert main(["synth", "--config", str(tmp_path / "dgp.yaml"), "--out", str(tmp_path / "s.csv")]) == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 31


def test_console_script_entry_point(workspace):
    path = _write(*workspace)
    proc = subprocess.run([sys.executable, "-m", "gapdecomp.cli", "validate", "--config", path],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "ok"
