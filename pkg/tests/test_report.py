import json
import math

import pytest

from gapdecomp.decomp import Contribution, DecompositionResult
from gapdecomp.report import (Report, decomposition_cell, decomposition_from_json, decomposition_text,
                              estimate_cell, pct_explained)


def _result(comparison="ST", gap=0.153):
    cs = [Contribution("Log(income)", 0.070, 0.002, "***", pct_explained(0.070, gap)),
          Contribution("State", -0.00004, 0.0001, "", pct_explained(-0.00004, gap))]
    return DecompositionResult("cor", "Others", comparison, 100, 80, gap, 0.06996, gap - 0.06996, cs,
                               pct_explained(0.06996, gap), explained_se=0.002, explained_stars="***",
                               bootstrap_reps=1000)


def test_decomposition_cell_layout():
    assert decomposition_cell(0.070, 0.002, "***", 45.75) == "0.070*** (0.002)  45.8"


def test_negative_zero_printed_without_sign():
    assert estimate_cell(-0.0004, 0.0001) == "0.000 (0.000)"
    assert estimate_cell(-0.005, 0.002, "**") == "-0.005** (0.002)"


def test_pct_explained_zero_gap():
    assert pct_explained(0.1, 0.0) is None


def test_json_round_trip():
    rep = Report({"seed": 1}, decompositions=[_result("ST"), _result("SC", 0.142)])
    back = decomposition_from_json(rep.to_json())
    assert back == rep.decompositions
    assert json.loads(rep.to_json())["decompositions"][0]["units"]["contributions"] == "proportion"


def test_text_matches_export_up_to_printed_digit():
    r = _result()
    text = decomposition_text([r], "COR")
    assert "Gap in COR" in text and "15.3" in text
    assert "0.070*** (0.002)" in text and "45.8" in text
    c = r.contribution("Log(income)")
    assert abs(round(c.estimate, 3) - c.estimate) <= 0.0005
    assert "Others-ST" in text and "1000 replications" in text


def test_csv_keeps_full_precision():
    rep = Report({}, decompositions=[_result()])
    rows = [l.split(",") for l in rep.to_csv().splitlines()]
    pct = next(r for r in rows if r[3] == "Log(income)" and r[4] == "pct_explained")
    assert float(pct[5]) == pytest.approx(100 * 0.070 / 0.153, rel=1e-15)


def test_nan_cleaned_in_json():
    rep = Report({"x": math.nan})
    assert json.loads(rep.to_json())["config"]["x"] is None
