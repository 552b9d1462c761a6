import json

import numpy as np
from pydantic import BaseModel

from src.capacity.capacity_measures import GammaReport, GammaRow, NodalMeasure
from src.experiments.writers import _cell, write_csv, write_gamma_csv, write_json, write_solution_csv
from src.fem.core_fe import FeFunction, Mesh1D


def test_cell_formatting():
    assert _cell(0.1) == "0.10000000000000001"
    assert _cell(np.float64(2.0)) == "2"
    assert _cell(float("inf")) == "inf"
    assert _cell(True) == "true"
    assert _cell(np.bool_(False)) == "false"
    assert _cell(np.int64(7)) == "7"
    assert _cell("middle") == "middle"


def test_csv_uses_lf_line_endings(tmp_path):
    path = write_csv(tmp_path / "nested" / "t.csv", ["a", "b"], [(1, 0.5), (2, 1.5)])
    assert path.read_bytes() == b"a,b\n1,0.5\n2,1.5\n"


def test_solution_csv_marks_infinite_nodes(tmp_path):
    mesh = Mesh1D(0.0, 1.0, 4)
    w = FeFunction(mesh, [1.0, 0.0, 1.0])
    z = FeFunction(mesh, [0.1, 0.0, 0.1])
    mu = NodalMeasure(mesh, [2.0, 0.0, 2.0], [False, True, False])
    path = write_solution_csv(tmp_path / "solution.csv", w, z, np.array([0.0, 0.5, 0.0]), mu)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,w,z,lambda,mu"
    assert lines[2].split(",") == ["0.5", "0", "0", "0.5", "inf"]
    assert lines[1].split(",")[-1] == "2"


def test_gamma_csv_has_one_column_per_rhs(tmp_path):
    report = GammaReport(
        rows=[GammaRow(k=1, z_diff_l2=0.25, w_diff_l2=[0.5, 0.125], z_l2=1.0, apriori_ok=True)],
        rhs_labels=["1", "x"],
        z_cauchy=True,
        all_f_cauchy=True,
        verdict=True,
        empirical_constant=0.3,
    )
    lines = write_gamma_csv(tmp_path / "gamma.csv", report).read_text().splitlines()
    assert lines == ["k,z_diff_l2,w_diff_l2_1,w_diff_l2_x", "1,0.25,0.5,0.125"]


def test_json_reports_end_with_a_newline(tmp_path):
    class _Report(BaseModel):
        run: str
        value: float

    path = write_json(tmp_path / "r.json", _Report(run="solve", value=1.5))
    text = path.read_text()
    assert text.endswith("}\n")
    assert json.loads(text) == {"run": "solve", "value": 1.5}
