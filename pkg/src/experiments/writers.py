from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel

from src.capacity.capacity_measures import GammaReport, NodalMeasure
from src.fem.core_fe import FeFunction

SOLUTION_HEADER = ("x", "w", "z", "lambda", "mu")


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Fixed header, 17 significant digits, LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_json(path: str | Path, model: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def write_solution_csv(
    path: str | Path, w: FeFunction, z: FeFunction, lam: np.ndarray, mu: NodalMeasure
) -> Path:
    x = w.mesh.interior_nodes
    mu_col = np.where(mu.infinite_set, np.inf, mu.weights)
    return write_csv(path, SOLUTION_HEADER, zip(x, w.values, z.values, lam, mu_col))


def gamma_header(report: GammaReport) -> list[str]:
    return ["k", "z_diff_l2", *(f"w_diff_l2_{label}" for label in report.rhs_labels)]


def write_gamma_csv(path: str | Path, report: GammaReport) -> Path:
    rows = ([r.k, r.z_diff_l2, *r.w_diff_l2] for r in report.rows)
    return write_csv(path, gamma_header(report), rows)
