import json

import pytest

from src.errors import ConfigError
from src.experiments.config_models import apply_overrides, load_config, parse_config
from src.experiments.presets import PRESETS, preset
from src.fem.frac_gram import SpaceKind


def test_empty_document_gets_the_defaults():
    cfg = parse_config("{}")
    assert cfg.mesh.a == 0.0 and cfg.mesh.b == 1.0 and cfg.mesh.n is None
    assert cfg.space.kind is SpaceKind.INTEGRAL_TILDE
    assert cfg.space.s == 0.1
    assert cfg.problem.p == 0.5
    assert cfg.schedule.eps0 == 1.0 and cfg.schedule.factor == 0.5
    assert cfg.output.formats == ["csv", "json"]
    assert cfg.capacity is None and cfg.gamma is None and cfg.continuation is None


@pytest.mark.parametrize(
    "doc,field",
    [
        ({"mesh": {"n": 1}}, "mesh.n"),
        ({"mesh": {"a": 1.0, "b": 0.0}}, "mesh"),
        ({"space": {"s": 0.5}}, "space"),
        ({"space": {"kind": "IntegralOmega", "s": 1.0}}, "space"),
        ({"space": {"kind": "Fourier"}}, "space.kind"),
        ({"problem": {"p": 1.0}}, "problem.p"),
        ({"problem": {"alpha": 0.0}}, "problem.alpha"),
        ({"schedule": {"factor": 1.5}}, "schedule.factor"),
        ({"output": {"formats": ["xml"]}}, "output.formats.0"),
        ({"extra": True}, "extra"),
        ({"gamma": {"exponents": [1]}}, "gamma.exponents"),
        ({"capacity": {"sets": {"bad": [[0.5, 0.2]]}}}, "capacity.sets"),
    ],
)
def test_invalid_documents_name_the_field(doc, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert exc.value.field == field


def test_spectral_accepts_s_equal_one():
    cfg = parse_config({"space": {"kind": "Spectral", "s": 1.0}})
    assert cfg.space.s == 1.0


def test_load_config_reads_json_files(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"mesh": {"n": 64}, "problem": {"w_d_expression": "x"}}), encoding="utf-8")
    cfg = load_config(path)
    assert cfg.mesh.n == 64
    assert cfg.problem.w_d_expression == "x"


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        load_config(broken)
    assert exc.value.field == "config"


def test_overrides_win_and_default_n_fills_the_gap():
    cfg = parse_config({"mesh": {"n": 64}})
    assert apply_overrides(cfg, n=128, s=0.3, out="o").mesh.n == 128
    assert apply_overrides(cfg, s=0.3).space.s == 0.3
    assert apply_overrides(cfg, out="o").output.dir == "o"
    assert apply_overrides(cfg, default_n=256).mesh.n == 64
    assert apply_overrides(parse_config({}), default_n=256).mesh.n == 256


def test_overrides_are_validated():
    with pytest.raises(ConfigError):
        apply_overrides(parse_config({}), n=0)
    with pytest.raises(ConfigError):
        apply_overrides(parse_config({}), s=0.5)


def test_presets_parse_and_carry_their_parameters():
    assert set(PRESETS) == {"reproduce-1d", "reproduce-spaces", "reproduce-p0"}
    one_d = preset("reproduce-1d")
    assert (one_d.problem.alpha, one_d.problem.beta, one_d.problem.p) == (1.0, 1.0, 0.5)
    assert one_d.problem.w_d_expression == "20*(x-0.5)**2"
    p0 = preset("reproduce-p0")
    assert p0.problem.p == 0.0 and p0.problem.beta == 0.5
    assert p0.continuation.p_list == [0.5, 0.25, 0.1, 0.05, 0.01]
    assert preset("reproduce-spaces").problem.p == 0.05
    assert one_d.schedule.max_iter >= 2000
    assert preset("reproduce-spaces").schedule.max_iter >= 2000
    with pytest.raises(KeyError):
        preset("reproduce-2d")
