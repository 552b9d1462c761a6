"""Embedded configurations of the one-dimensional reproduction runs."""

from __future__ import annotations

from typing import Dict

from src.experiments.config_models import ExperimentConfig, parse_config

# Once ε reaches eps_min the fine-mesh runs still shed nodes near the support
# boundary for a few hundred iterations, hence the larger iteration budgets.
SUPPORT_COINCIDENCE = {
    "mesh": {"a": 0.0, "b": 1.0},
    "space": {"kind": "IntegralTilde", "s": 0.1},
    "problem": {"alpha": 1.0, "beta": 1.0, "p": 0.5, "w_d_expression": "20*(x-0.5)**2"},
    "schedule": {"eps0": 1.0, "factor": 0.5, "eps_min": 1e-8, "tol": 1e-10, "max_iter": 3000},
}

SPACE_COMPARISON = {
    "mesh": {"a": 0.0, "b": 1.0},
    "space": {"kind": "IntegralTilde", "s": 0.1},
    "problem": {"alpha": 1.0, "beta": 1.0, "p": 0.05, "w_d_expression": "1.5*sin(3*pi*x)"},
    "schedule": {"eps0": 1.0, "factor": 0.5, "eps_min": 1e-8, "tol": 1e-10, "max_iter": 3000},
}

# p = 0 with the two ε-schedules 0.4^k and 0.9^k plus a p = 0.1 baseline on 0.4^k.
ZERO_NORM = {
    "mesh": {"a": 0.0, "b": 1.0},
    "space": {"kind": "IntegralTilde", "s": 0.1},
    "problem": {"alpha": 1.0, "beta": 0.5, "p": 0.0, "w_d_expression": "10*x*(x-1)"},
    "schedule": {"eps0": 1.0, "factor": 0.4, "eps_min": 1e-8, "tol": 1e-10, "max_iter": 400},
    "continuation": {"p_list": [0.5, 0.25, 0.1, 0.05, 0.01]},
}

ZERO_NORM_SCHEDULES = (0.4, 0.9)
ZERO_NORM_BASELINE_P = 0.1

PRESETS: Dict[str, dict] = {
    "reproduce-1d": SUPPORT_COINCIDENCE,
    "reproduce-spaces": SPACE_COMPARISON,
    "reproduce-p0": ZERO_NORM,
}


def preset(name: str) -> ExperimentConfig:
    """Preset document; the mesh size is left to the settings default or the --n flag."""
    if name not in PRESETS:
        raise KeyError(name)
    return parse_config(PRESETS[name])
