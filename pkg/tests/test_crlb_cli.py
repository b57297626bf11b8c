import math

import numpy as np
import pytest
import yaml

from leofim import efim_engine as E
from leofim.crlb_cli import (DEFAULT_CONFIG, SWEEP_COLUMNS, ConfigError, SweepSpec, crlb,
                             evaluate_point, load_config, main, read_csv, run_sweep,
                             sweep_scenario, write_csv)

N_U = (4, 9, 16, 25, 36, 49, 64, 81, 100)


def cfg_with(**sections):
    return load_config(None, sections)


def sweep(metric="position", axis="N_U", values=N_U, cfg=None, **kw):
    cfg = cfg or load_config()
    spec = SweepSpec(axis=axis, values=tuple(values), metric=metric, **kw)
    rows = run_sweep(spec, cfg)
    return [float(r["bound"]) for r in rows], rows


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


# bound scalarisation

def test_identity_bound():
    assert crlb(np.eye(3)) == pytest.approx(math.sqrt(3), rel=1e-15)


@pytest.mark.parametrize("s", [1e-6, 0.5, 4.0, 1e12])
def test_scaled_identity_bound(s):
    assert crlb(s * np.eye(3)) == pytest.approx(math.sqrt(3 / s), rel=1e-14)


def test_doubling_snr_divides_bound_by_root_two():
    spec = SweepSpec(axis="N_U", values=(4,))
    cfg = load_config()
    scn = sweep_scenario(spec, spec.point(4), cfg)
    twice = E.Scenario(scn.rx, scn.cs, scn.spec.scaled(2.0), scn.offsets)
    for w in E.PARAMS:
        others = [p for p in E.PARAMS if p != w]
        a = crlb(E.sqrt_efim(scn, [w], others))
        b = crlb(E.sqrt_efim(twice, [w], others))
        assert a / b == pytest.approx(math.sqrt(2), rel=1e-9)


def test_non_pd_bound_is_an_error():
    with pytest.raises(ValueError):
        crlb(np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        crlb(np.ones((2, 3)))


def test_infeasible_point_is_flagged_not_fatal():
    spec = SweepSpec(axis="N_U", values=(1, 4), metric="orientation", mode="phi", n_sats=2,
                     n_slots=1, n_antennas=1)
    rows = run_sweep(spec, load_config())
    assert [r["feasible"] for r in rows] == [0, 1]
    assert rows[0]["bound"] == "inf"


# figure trends

def test_position_bound_decreases_with_array_size():
    bounds, _ = sweep()
    assert all(b > a for a, b in zip(bounds[1:], bounds[:-1]))
    assert 1.0 < bounds[0] < 100.0
    assert bounds[-1] < bounds[0] / 3


def test_bounds_decrease_with_snr():
    for metric in ("position", "velocity", "orientation"):
        bounds, _ = sweep(metric, axis="SNR", values=(-20, 0, 20, 40))
        assert all(b > a for a, b in zip(bounds[1:], bounds[:-1]))
        np.testing.assert_allclose(np.array(bounds[:-1]) / bounds[1:], 10.0, rtol=1e-9)


def test_orientation_does_not_depend_on_carrier():
    lo, _ = sweep("orientation", f_c=1e9)
    hi, _ = sweep("orientation", f_c=40e9)
    np.testing.assert_allclose(hi, lo, rtol=1e-6)


def test_longer_slot_spacing_tightens_position_bound():
    # reference anchors: ~25 m at 25 ms against ~8 m at 100 ms
    (short,), _ = sweep(values=(4,), dt=0.025)
    (long,), _ = sweep(values=(4,), dt=0.1)
    assert long < short
    assert 3.0 / 1.5 <= short / long <= 3.0 * 1.5


def test_velocity_bound_falls_with_slot_spacing_when_delays_dominate():
    cfg = cfg_with(signal={"t2_eff": 1e-9}, geometry={"kind": "random"})
    bounds, _ = sweep("velocity", axis="Delta_t", values=(0.025, 0.05, 0.1, 0.2), cfg=cfg)
    assert all(b > a for a, b in zip(bounds[1:], bounds[:-1]))


# sweep specification

@pytest.mark.parametrize("kw", [
    dict(axis="N_U", values=(4, 4)), dict(axis="N_U", values=(9, 4)),
    dict(axis="N_U", values=(4.5, 9)), dict(axis="Delta_t", values=(0.0, 0.1)),
    dict(axis="nope", values=(1,)), dict(axis="N_U", values=(4,), metric="speed"),
    dict(axis="N_U", values=(4,), metric="velocity", mode="p+phi"),
    dict(axis="N_U", values=()),
])
def test_sweep_spec_validation(kw):
    with pytest.raises(ValueError):
        SweepSpec(**kw)


def test_snr_axis_may_be_negative():
    assert SweepSpec(axis="SNR", values=(-20, 0)).values == (-20.0, 0.0)


# configuration

def test_defaults_validate():
    cfg = load_config()
    assert cfg["defaults"] == DEFAULT_CONFIG["defaults"]


def test_yaml_exponents_are_numbers(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("signal:\n  t2_eff: 3.0e4\n  alpha1: 1e5\n")
    cfg = load_config(p)
    assert cfg["signal"]["t2_eff"] == 3.0e4 and cfg["signal"]["alpha1"] == 1e5


@pytest.mark.parametrize("bad", [
    {"bogus": 1}, {"seed": -1}, {"jobs": 0}, {"signal": {"alpha2": 2.0}},
    {"defaults": {"offsets": "clock"}}, {"sweeps": [{"axis": "N_U", "values": [4]}]},
    {"tables": {"draws": 0}}, {"geometry": {"kind": "sphere"}},
])
def test_schema_violations(tmp_path, bad):
    p = write_yaml(tmp_path / "bad.yaml", bad)
    with pytest.raises(ConfigError):
        load_config(p)
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_unreadable_config(tmp_path):
    assert main(["tables", "--config", str(tmp_path / "missing.yaml")]) == 2
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    assert main(["tables", "--config", str(tmp_path / "list.yaml")]) == 2


def test_semantic_sweep_error_exits_nonzero(tmp_path, capsys):
    p = write_yaml(tmp_path / "c.yaml", {"sweeps": [
        {"axis": "N_U", "values": [9, 4], "metric": "position"}]})
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "strictly increasing" in capsys.readouterr().err


# outputs

SMALL = {"seed": 3, "sweeps": [
    {"name": "a", "axis": "N_U", "values": [4, 9, 16], "metric": "position"},
    {"name": "b", "axis": "SNR", "values": [-20, 0], "metric": "velocity", "f_c": 4.0e10},
    {"name": "c", "axis": "Delta_t", "values": [0.025, 0.1], "metric": "orientation",
     "mode": "p+phi"},
]}


def test_csv_round_trip(tmp_path):
    cfg = cfg_with(**SMALL)
    from leofim.crlb_cli import sweeps_from_config
    rows = run_sweep(sweeps_from_config(cfg), cfg)
    write_csv(tmp_path / "s.csv", rows, SWEEP_COLUMNS)
    back = read_csv(tmp_path / "s.csv")
    assert back == [{k: str(r[k]) for k in SWEEP_COLUMNS} for r in rows]
    assert [float(r["bound"]) for r in back] == [float(r["bound"]) for r in rows]


def test_sweep_output_is_identical_across_worker_counts(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", SMALL)
    outs = []
    for jobs in (1, 3):
        out = tmp_path / f"j{jobs}"
        assert main(["sweep", "--config", str(p), "--out", str(out), "--jobs", str(jobs)]) == 0
        outs.append((out / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]
    header = outs[0].decode().splitlines()[0].split(",")
    assert header == list(SWEEP_COLUMNS)


def test_seed_flag_overrides_config(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", SMALL)
    main(["sweep", "--config", str(p), "--out", str(tmp_path / "a"), "--seed", "11"])
    rows = read_csv(tmp_path / "a" / "sweep.csv")
    assert {r["seed"] for r in rows} == {"11"}


def test_empty_table_grid(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", {"tables": {"published": False, "modes": []}})
    assert main(["tables", "--config", str(p), "--out", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "feasibility.csv") == []
    assert (tmp_path / "feasibility.txt").read_text() == ""


def test_custom_table_grid(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", {"tables": {
        "published": False, "modes": ["p", "9d"], "n_sats": [3], "n_slots": [1, 3],
        "n_antennas": [4], "draws": 4}})
    assert main(["tables", "--config", str(p), "--out", str(tmp_path), "--jobs", "2"]) == 0
    rows = read_csv(tmp_path / "feasibility.csv")
    assert len(rows) == (2 * 4) * 1 + (2 * 4) * 3
    text = (tmp_path / "feasibility.txt").read_text()
    assert text.splitlines()[0].split()[:3] == ["mode", "cell", "target"]


def test_table_seed_changes_statistics_not_verdicts(tmp_path):
    data = {"tables": {"published": False, "modes": ["p+v"], "n_sats": [1, 3], "n_slots": [1, 4],
                       "n_antennas": [1], "draws": 8}}
    p = write_yaml(tmp_path / "c.yaml", data)
    for seed in ("0", "5"):
        main(["tables", "--config", str(p), "--out", str(tmp_path / seed), "--seed", seed])
    a = read_csv(tmp_path / "0" / "feasibility.csv")
    b = read_csv(tmp_path / "5" / "feasibility.csv")
    assert [r["verdict"] for r in a] == [r["verdict"] for r in b]
    assert [r["margin_min"] for r in a] != [r["margin_min"] for r in b]


def test_validate_command(tmp_path, capsys):
    p = write_yaml(tmp_path / "c.yaml", {"validate": {"scenarios": 4}})
    assert main(["validate", "--config", str(p)]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3


def test_validate_fails_on_impossible_tolerance(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", {"validate": {"scenarios": 2, "tolerance": 1e-300}})
    assert main(["validate", "--config", str(p)]) == 1


def test_explain_command(capsys):
    assert main(["explain", "--cell", "p+v|K1B3U1|time"]) == 0
    out = capsys.readouterr().out
    assert "joint: infeasible" in out
    assert "[FAIL] velocity Schur complement positive definite" in out
    assert main(["explain", "--cell", "garbage"]) == 2


def test_evaluate_point_row_layout():
    spec = SweepSpec(axis="f_c", values=(1e9,), metric="orientation", seed=2, name="x")
    row = evaluate_point(spec, 1e9, load_config())
    assert list(row) == list(SWEEP_COLUMNS)
    assert row["unit"] == "rad" and row["f_c"] == "1000000000.0" and row["feasible"] == 1
