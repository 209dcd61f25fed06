import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvarexec.cli import Scenario, ScenarioError, main
from cvarexec.schedules import UPS_EXP_VWAP
from cvarexec.sim import SimConfig

SMALL = {
    "q_list": [0.5],
    "sim": {"dt": 0.05, "n_paths": 32, "master_seed": 11, "horizon_cap": 600.0,
            "policy_set": ["opt", "exp", "vwap"]},
}


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), stdout=buf)
    return code, buf.getvalue()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def test_scenario_roundtrip_is_byte_identical():
    sc = Scenario()
    text = sc.dumps()
    again = Scenario.loads(text)
    assert again == sc and again.dumps() == text
    assert list(json.loads(text)) == sorted(json.loads(text))


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5), st.integers(0, 2**64 - 1),
       st.floats(1e-4, 1.0))
def test_scenario_roundtrip_property(qs, seed, dt):
    sc = Scenario.from_dict({"q_list": qs, "sim": {"master_seed": seed, "dt": dt}})
    assert Scenario.loads(sc.dumps()).dumps() == sc.dumps()


@pytest.mark.parametrize("doc, where", [
    ({"q_list": []}, "q_list"),
    ({"q_list": [0.5, 1.0]}, "q_list[1]"),
    ({"q_list": "0.5"}, "q_list"),
    ({"market": {"sigma": -1}}, "market.sigma"),
    ({"x0": 2.0}, "x0"),
    ({"sim": {"dt": 0}}, "sim.dt"),
    ({"sim": {"n_paths": 1.5}}, "sim.n_paths"),
    ({"sim": {"q_floor": 0.5}}, "sim.q_floor"),
    ({"sim": {"completion_threshold": 2.0}}, "sim.completion_threshold"),
    ({"sim": {"policy_set": ["opt", "twap"]}}, "sim.policy_set[1]"),
    ({"colour": 1}, "colour"),
])
def test_scenario_errors_name_the_field(doc, where):
    with pytest.raises(ScenarioError) as e:
        Scenario.from_dict(doc)
    assert e.value.path == where
    assert str(e.value).startswith(where + ":")


def test_invalid_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"q_list": []}))
    code, out = run("simulate", "--scenario", str(bad))
    assert code == 2 and out == ""
    assert "q_list" in capsys.readouterr().err
    bad.write_text("{not json")
    assert run("value", "--scenario", str(bad))[0] == 2


def test_constants_text_and_json():
    code, out = run("constants")
    assert code == 0
    assert "theta_bar = 2.3834466125" in out and "junction_q = 0.1362374304" in out
    code, out = run("constants", "--json")
    doc = json.loads(out)
    assert doc["a"] == pytest.approx(0.2910113169582231, abs=1e-12)
    assert doc["b"] == pytest.approx(0.17626755226399599, abs=1e-12)
    assert doc["tolerances"]["abs_Z_R_at_theta_bar"] < 1e-12


def test_constants_bad_bracket(capsys):
    code, _ = run("constants", "--bracket", "0.1", "1.0")
    assert code == 2
    assert "not bracketed" in capsys.readouterr().err


def test_phi_table_csv():
    code, out = run("phi-table", "--n-left", "256", "--n-right", "256")
    r = rows(out)
    assert code == 0
    assert list(r[0]) == ["q", "phi", "theta", "branch", "residual"]
    assert float(r[0]["q"]) == 0.0 and float(r[0]["phi"]) == 0.0
    assert float(r[-1]["q"]) == 1.0 and float(r[-1]["phi"]) == 0.0
    q = np.array([float(v["q"]) for v in r])
    assert np.all(np.diff(q) >= 0)  # 6 significant digits merge knots near q = 1
    res = np.array([float(v["residual"]) if v["residual"] else np.nan for v in r])
    assert np.nanmax(res) < 1e-2  # coarse grid; the 1e-4 gate applies to the default table


def test_phi_table_default_residual(tmp_path):
    code, _ = run("phi-table", "--json", "--out", str(tmp_path))
    summary = json.loads((tmp_path / "phi_table.json").read_text())
    assert code == 0 and summary["max_residual"] < 1e-4
    assert summary["knots"] == len(rows((tmp_path / "phi_table.csv").read_text()))
    full = np.array([r[:2] for r in summary["rows"]], dtype=float)
    assert np.all(np.diff(full[:, 0]) > 0)  # JSON keeps full precision


def test_value_and_policy_eval():
    code, out = run("value", "--x", "0.5,1", "--q", "0.5")
    r = rows(out)
    assert code == 0 and len(r) == 2
    v = [float(x["V"]) for x in r]
    assert v[1] == pytest.approx(v[0] * 2 ** (4 / 3), rel=1e-5)
    assert float(r[1]["cvar"]) == pytest.approx(v[1] / 0.5, rel=1e-5)
    code, out = run("policy-eval", "--x=-1,1", "--q", "0.3")
    a, b = rows(out)
    assert float(a["f_star"]) == pytest.approx(-float(b["f_star"]))
    assert float(a["g_star"]) == pytest.approx(-float(b["g_star"]))
    assert float(b["g_star"]) < 0 < float(b["f_star"])
    assert run("value", "--q", "1.5")[0] == 2
    assert run("value", "--x", "a,b")[0] == 2


def test_compare():
    code, out = run("compare", "--q", "0.1,0.5,0.9")
    r = rows(out)
    assert code == 0 and [float(x["q"]) for x in r] == [0.1, 0.5, 0.9]
    ups = [float(x["ups_exp_vwap"]) for x in r]
    assert ups == pytest.approx([UPS_EXP_VWAP] * 3, rel=1e-5)
    assert UPS_EXP_VWAP == pytest.approx(0.100642, abs=1e-6)
    oe = [float(x["ups_opt_exp"]) for x in r]
    assert oe == sorted(oe)
    code, out = run("compare")
    assert len(rows(out)) == 99


def test_simulate_table(small, tmp_path):
    code, out = run("simulate", "--scenario", small, "--seed", "5")
    r = rows(out)
    assert code == 0 and [x["policy"] for x in r] == ["opt", "exp", "vwap"]
    for x in r:
        assert float(x["cvar"]) > float(x["mean"])
        assert float(x["cvar_theo"]) > 0 and int(float(x["n"])) == 32
    # same seed, same bytes; another seed differs
    assert run("simulate", "--scenario", small, "--seed", "5")[1] == out
    assert run("simulate", "--scenario", small, "--seed", "6")[1] != out


def test_simulate_outputs_and_trace(small, tmp_path):
    code, out = run("simulate", "--scenario", small, "--trace", "2", "--paths", "8", "--out", str(tmp_path))
    assert code == 0 and out == ""
    doc = json.loads((tmp_path / "results.json").read_text())
    assert doc["scenario"]["sim"]["n_paths"] == 8
    assert {d["policy"] for d in doc["results"]} == {"opt", "exp", "vwap"}
    tr = rows((tmp_path / "trace_q0.5_opt.csv").read_text())
    assert {x["path"] for x in tr} == {"0", "1"}
    assert float(tr[0]["x"]) == 1.0 and float(tr[0]["t"]) == 0.0
    assert (tmp_path / "table.csv").exists()


def test_trace_needs_out(small):
    assert run("simulate", "--scenario", small, "--trace", "1")[0] == 2


def test_simulate_json_to_stdout(small):
    code, out = run("simulate", "--scenario", small, "--paths", "4", "--json")
    assert code == 0
    head, _, tail = out.partition("{")
    assert head.startswith("q,policy,cvar,cvar_theo")
    assert json.loads("{" + tail)["scenario"]["sim"]["n_paths"] == 4


def test_frontier(small, tmp_path):
    sc = json.loads(open(small).read())
    sc["q_list"] = [0.3, 0.7]
    path = tmp_path / "f.json"
    path.write_text(json.dumps(sc))
    code, out = run("frontier", "--scenario", str(path), "--out", str(tmp_path / "o"))
    assert code == 0
    pts = rows((tmp_path / "o" / "frontier_points.csv").read_text())
    assert len(pts) == 6
    tail = rows((tmp_path / "o" / "frontier_tail.csv").read_text())
    assert len(tail) == 201 and "min_tail_opt" in tail[0]
    doc = json.loads((tmp_path / "o" / "frontier.json").read_text())
    assert "opt_vs_exp" in doc["median_gain"]


def test_overrides():
    from cvarexec.cli import _scenario, build_parser
    args = build_parser().parse_args(["simulate", "--seed", "3", "--paths", "10", "--dt", "0.5",
                                      "--workers", "2"])
    sc = _scenario(args)
    assert sc.sim == SimConfig(dt=0.5, n_paths=10, master_seed=3, workers=2)
    for bad in (["--seed", "-1"], ["--paths", "0"], ["--dt", "0"]):
        assert run("simulate", *bad)[0] == 2


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "cvarexec", "compare", "--q", "0.5"],
                       capture_output=True, text=True, timeout=300)
    assert p.returncode == 0 and p.stdout.startswith("q,")
