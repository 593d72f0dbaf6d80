import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from retromfg.cli import main
from retromfg.config import ConfigError, parse_config
from retromfg.expr import Expression, ExpressionError, field_from_expr
from retromfg.grid import ScalarField, build_grid
from retromfg.io import FieldFormatError, read_csv, read_field, write_csv, write_field, write_field_csv
from retromfg.report import svg_plot, to_jsonable, write_json

DEMO_CONFIGS = Path(__file__).resolve().parents[1] / "demos" / "configs"
G = build_grid((1.0, 0.5), 2.0, (5, 4), 3)


@given(vals=arrays(float, G.spacetime_shape, elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_field_container_roundtrip(vals, tmp_path_factory):
    path = tmp_path_factory.mktemp("f") / "u.field"
    f = ScalarField(G, vals)
    back = read_field(write_field(path, f))
    assert back.grid == G and back.is_spacetime
    assert np.array_equal(back.values, vals)


def test_field_container_rejects_damage(tmp_path):
    path = write_field(tmp_path / "u.field", ScalarField.zeros(G))
    raw = path.read_bytes()
    (tmp_path / "bad.field").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FieldFormatError, match="magic"):
        read_field(tmp_path / "bad.field")
    (tmp_path / "short.field").write_bytes(raw[:-8])
    with pytest.raises(FieldFormatError, match="expected 20 values"):
        read_field(tmp_path / "short.field")
    (tmp_path / "head.field").write_bytes(raw[:12])
    with pytest.raises(FieldFormatError, match="truncated"):
        read_field(tmp_path / "head.field")


def test_csv_format(tmp_path):
    x = 0.1 + 0.2
    path = write_csv(tmp_path / "t.csv", [dict(a=x, b=True, c=3), dict(a=1e-300, b=False, d="s,t")])
    text = path.read_bytes().decode()
    assert text.split("\r\n")[0] == "a,b,c,d"
    assert text.count("\r\n") == 3
    rows = read_csv(path)
    assert float(rows[0]["a"]) == x
    assert rows[0]["b"] == "true" and rows[1]["b"] == "false"
    assert rows[1]["d"] == "s,t" and rows[1]["c"] == ""


def test_field_csv_columns(tmp_path):
    rows = read_csv(write_field_csv(tmp_path / "u.csv", ScalarField.zeros(G, spacetime=True)))
    assert list(rows[0]) == ["t", "x1", "x2", "value"]
    assert len(rows) == 4 * 5 * 4


@pytest.mark.parametrize("text", ["__import__('os')", "x1.real", "open(1)", "[x1]", "x1 if 1 else 2", "x3", "t", "'a'", "cos(x1, x1)"])
def test_expressions_outside_grammar_fail(text):
    with pytest.raises(ExpressionError):
        Expression(text, 2)


def test_expression_evaluation():
    e = Expression("2^3 + cos(pi*x1) - t", 1, allow_t=True)
    assert e(1.0, np.array([0.0]))[0] == pytest.approx(8.0)
    assert e.uses_t
    assert np.all(field_from_expr(G, "3").values == 3.0)
    with pytest.raises(ExpressionError, match="on the grid"):
        field_from_expr(G, "log(x1 - 5)")


def _write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_config_defaults_are_filled():
    cfg = parse_config(DEMO_CONFIGS / "forward.yaml")
    assert cfg.kind == "solve-forward" and cfg.seed == 0 and cfg.workers == 1
    assert cfg.block("grid")["T"] == 1.0
    assert cfg.block("problem")["damping"] == 0.5


def test_config_suggests_nearest_key(tmp_path):
    p = _write(tmp_path, "kind: solve-retro\ngrid:\n  nodes: 9\nproblem: {}\nweight:\n  lamda: 2\n")
    with pytest.raises(ConfigError) as info:
        parse_config(p)
    assert any("line 6" in e and "did you mean 'lambda'?" in e for e in info.value.errors)


def test_config_collects_several_errors(tmp_path):
    p = _write(tmp_path, "kind: stability-sweep\ngrid:\n  nodes: many\nproblem: {}\nweight: {}\nsweep:\n  seeds: [1]\n")
    with pytest.raises(ConfigError) as info:
        parse_config(p)
    errs = info.value.errors
    assert any("sweep block incomplete" in e and "delta_grid" in e for e in errs)
    assert any("line 3" in e and "grid.nodes" in e for e in errs)


def test_config_missing_block_and_file(tmp_path):
    with pytest.raises(ConfigError, match="missing block 'problem'"):
        parse_config(_write(tmp_path, "kind: solve-forward\n"))
    with pytest.raises(ConfigError, match="no such file"):
        parse_config(tmp_path / "nope.yaml")


def test_overrides_apply_and_are_checked():
    cfg = parse_config(DEMO_CONFIGS / "forward.yaml", overrides=["problem.beta=0.25", "seed=9"])
    assert cfg.block("problem")["beta"] == 0.25 and cfg.seed == 9
    with pytest.raises(ConfigError, match="override"):
        parse_config(DEMO_CONFIGS / "forward.yaml", overrides=["problem.beta"])
    with pytest.raises(ConfigError, match="override: unknown key 'problem.bta'"):
        parse_config(DEMO_CONFIGS / "forward.yaml", overrides=["problem.bta=1"])


def test_cli_success_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    assert main(["--config", str(DEMO_CONFIGS / "forward.yaml"), "--out", str(out), "--override", "grid.nodes=17",
                 "--override", "grid.time_steps=16"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["kind"] == "solve-forward"
    assert (out / "config.resolved.yaml").exists()
    assert read_field(out / "m.field").values.shape == (17, 17)
    for svg in out.glob("*.svg"):
        assert ET.parse(svg).getroot().tag.endswith("svg")


def test_cli_runtime_failure_names_module(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["--config", str(DEMO_CONFIGS / "forward.yaml"), "--out", str(out), "--override", "problem.max_iter=1"])
    assert code == 1
    fail = json.loads((out / "failure.json").read_text())
    assert fail["module"] == "forward" and fail["error"] == "PicardDiverged"
    assert not (out / "summary.json").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    code = main(["--config", str(_write(tmp_path, "kind: nonsense\n")), "--out", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "config-error"


def test_json_handles_non_finite(tmp_path):
    data = dict(a=math.inf, b=[np.float64("nan"), -math.inf], c=np.arange(2), d=np.bool_(True))
    assert to_jsonable(data) == dict(a="inf", b=["nan", "-inf"], c=[0, 1], d=True)
    assert json.loads(write_json(tmp_path / "s.json", data).read_text())["a"] == "inf"


def test_svg_is_well_formed_with_log_axes(tmp_path):
    p = svg_plot(tmp_path / "p.svg", {"a<b": ([1e-3, 1e-2, 0.0], [1.0, 10.0, 5.0])}, title="t & u", logx=True, logy=True)
    root = ET.parse(p).getroot()
    assert root.tag.endswith("svg")
    assert any("a<b" in (el.text or "") for el in root.iter())
