import json
import math
import re

import numpy as np
import pytest

from nfmimo import cli
from nfmimo.bench import (
    CSV_HEADER,
    ConfigError,
    ResultRow,
    ScenarioConfig,
    emit_csv,
    emit_plot,
    format_csv,
    load_config,
    render_svg,
    run_scenario,
    scenario_array,
)
from nfmimo.estimation import NO_NOISE, add_noise
from nfmimo.geometry import rectangular_room
from nfmimo.propagation import Transmitter, channel_from_sources, enumerate_virtual_sources


def small_cfg(**kw):
    base = dict(
        antenna_spacings_lambda=[8.0],
        input_evm_sweep_db=[-10.0, 0.0],
        trials=2,
        final_step_lambda=1 / 16,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def row(est="multisink", evm=0.0, mean=-5.0, scenario="s"):
    return ResultRow(scenario, 16, 8.0, evm, est, mean, mean, 0.0, 0.1, 3)


# -- config -------------------------------------------------------------------------


def test_default_config_matches_reference_setup():
    cfg = ScenarioConfig()
    assert (cfg.room_width_m, cfg.room_depth_m, cfg.wavelength_m) == (6.4, 6.4, 0.2)
    assert cfg.num_sources == 5 and cfg.max_order == 1
    assert cfg.input_evm_sweep_db == [-30, -25, -20, -15, -10, -5, 0, 5, 10]
    assert cfg.margin == pytest.approx(0.1)
    assert [len(scenario_array(cfg, s)) for s in cfg.antenna_spacings_lambda] == [256, 64, 16]


@pytest.mark.parametrize(
    "field,value",
    [
        ("trials", 0),
        ("room_width_m", -1.0),
        ("antenna_placement", "ring"),
        ("estimators", ["antenna", "music"]),
        ("input_evm_sweep_db", ["loud"]),
        ("wall_reflection_coefficient", 1.5),
        ("tx_amplitude", [0, 0]),
        ("amplitude_mode", "median"),
    ],
)
def test_config_errors_name_field(field, value):
    with pytest.raises(ConfigError, match=rf"^{field}:"):
        ScenarioConfig.from_dict({field: value})


def test_unknown_config_field():
    with pytest.raises(ConfigError, match="^colour: unknown field"):
        ScenarioConfig.from_dict({"colour": "red"})


def test_config_round_trip_with_no_noise(tmp_path):
    cfg = small_cfg(input_evm_sweep_db=["-inf", 0])
    assert cfg.input_evm_sweep_db[0] == NO_NOISE
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert json.loads(path.read_text())["input_evm_sweep_db"][0] == "-inf"
    assert load_config(path) == cfg


# -- runner ---------------------------------------------------------------------------


def test_row_count_arithmetic():
    cfg = ScenarioConfig(estimators=["antenna"], trials=1)
    rows, records = run_scenario(cfg)
    assert len(rows) == 3 * 9 * 1
    assert [r.M for r in rows[::9]] == [256, 64, 16]
    assert len(records) == 3 * 9


def test_antenna_identity():
    cfg = small_cfg(estimators=["antenna"], trials=5, input_evm_sweep_db=[-30, -12.5, 0, 10])
    _, records = run_scenario(cfg)
    for r in records:
        assert abs(r.output_evm_db["antenna"] - r.input_evm_db) <= 1e-9


def test_no_noise_multisink_floor():
    cfg = ScenarioConfig(
        antenna_spacings_lambda=[2.0], estimators=["multisink"], input_evm_sweep_db=["-inf"], trials=1
    )
    rows, records = run_scenario(cfg)
    assert records[0].output_evm_db["multisink"] <= -25
    assert records[0].location_error_m["multisink"] <= cfg.wavelength_m / 32


def test_trial_matches_manual_pipeline():
    cfg = small_cfg(estimators=["antenna"], trials=1, input_evm_sweep_db=[-10.0])
    _, records = run_scenario(cfg)
    r = records[0]
    rng = np.random.default_rng(cfg.master_seed)
    m = cfg.wavelength_m / 2
    expected = [rng.uniform(m, 6.4 - m), rng.uniform(m, 6.4 - m)]
    np.testing.assert_array_equal(r.ue_location[:2], expected)
    assert np.all((r.ue_location[:2] >= cfg.margin) & (r.ue_location[:2] <= 6.4 - cfg.margin))


def test_workers_do_not_change_results():
    a, _ = run_scenario(small_cfg(workers=1))
    b, _ = run_scenario(small_cfg(workers=3))
    assert format_csv(a) == format_csv(b)


def test_clamp_at_floor():
    cfg = small_cfg(estimators=["antenna"], input_evm_sweep_db=["-inf"])
    rows, _ = run_scenario(cfg)
    assert rows[0].mean_output_evm_db == -100.0


def test_multisource_strongest_source_is_the_ue():
    cfg = small_cfg(
        antenna_spacings_lambda=[2.0], estimators=["multisource"], input_evm_sweep_db=["-inf"], trials=1
    )
    _, records = run_scenario(cfg)
    assert records[0].location_error_m["multisource"] <= cfg.wavelength_m / 8


# -- CSV and SVG -------------------------------------------------------------------------


def test_csv_header_and_rows(tmp_path):
    path = tmp_path / "r.csv"
    emit_csv([row(evm=NO_NOISE, mean=-100.0)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 2
    assert lines[1].split(",")[3] == "-inf"


def test_csv_empty_table():
    with pytest.raises(ValueError):
        format_csv([])


def test_csv_unwritable_path(tmp_path):
    with pytest.raises(OSError, match="cannot write"):
        emit_csv([row()], tmp_path / "missing" / "r.csv")


def test_svg_polylines():
    rows = [row(est, e, e - k) for k, est in enumerate(["antenna", "multisink", "multisource"])
            for e in (-10.0, 0.0, 10.0)]
    svg = render_svg(rows, "t")
    assert svg.count("<polyline") == 4
    assert 'data-series="identity"' in svg


def test_svg_monotone_pass_through():
    rows = [row("multisink", e, m) for e, m in [(-10.0, -20.0), (0.0, -12.0), (10.0, -1.0)]]
    svg = render_svg(rows, "t")
    pts = re.search(r'data-series="multisink" points="([^"]+)"', svg).group(1)
    ys = [float(p.split(",")[1]) for p in pts.split()]
    assert ys == sorted(ys, reverse=True)  # SVG y grows downward


def test_plot_needs_rows(tmp_path):
    with pytest.raises(ValueError):
        emit_plot([], tmp_path)
    with pytest.raises(ValueError):
        render_svg([], "t")


def test_emit_plot_one_file_per_scenario(tmp_path):
    rows = [row(scenario=s, evm=e) for s in ("a", "b") for e in (0.0, 5.0)]
    paths = emit_plot(rows, tmp_path)
    assert [p.rsplit("/", 1)[1] for p in paths] == ["a.svg", "b.svg"]


# -- CLI ----------------------------------------------------------------------------------


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    assert cli.main(["scenario", "init", "--out", str(path)]) == 0
    doc = json.loads(path.read_text())
    doc.update(antenna_spacings_lambda=[8.0], input_evm_sweep_db=[-10, 0], final_step_lambda=1 / 16)
    path.write_text(json.dumps(doc))
    return path


def test_cli_init_then_run(tmp_path, small_config_file):
    out = tmp_path / "out"
    assert cli.main(["bench", "run", "--config", str(small_config_file), "--out", str(out),
                     "--trials", "2"]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 1 + 2 * 3
    assert (out / "perimeter-8lambda.svg").exists()


def test_cli_byte_identical_reruns(tmp_path, small_config_file):
    outs = []
    for i, workers in enumerate(["1", "2"]):
        out = tmp_path / f"o{i}"
        cli.main(["bench", "run", "--config", str(small_config_file), "--out", str(out),
                  "--trials", "2", "--seed", "7", "--workers", workers, "--no-plot"])
        outs.append((out / "results.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_malformed_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"trials": "many"}))
    assert cli.main(["bench", "run", "--config", str(path)]) == 2
    assert "trials:" in capsys.readouterr().err
    path.write_text("{oops")
    assert cli.main(["bench", "run", "--config", str(path)]) == 2


def test_cli_usage_errors(capsys):
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["bench", "run"]) == 2
    assert cli.main(["bench", "run", "--config", "x", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_runtime_error(tmp_path):
    assert cli.main(["db", "inspect", str(tmp_path / "missing.json")]) == 1


def test_cli_db_build_inspect(tmp_path, small_config_file, capsys):
    db = tmp_path / "db.json"
    assert cli.main(["db", "build", "--config", str(small_config_file), "--out", str(db),
                     "--spacing-lambda", "2"]) == 0
    capsys.readouterr()
    assert cli.main(["db", "inspect", str(db)]) == 0
    out = capsys.readouterr().out
    assert "M: 64" in out and "sinks per antenna: 5" in out and "walls: 4" in out


def test_cli_estimate(tmp_path, small_config_file, capsys):
    db = tmp_path / "db.json"
    cli.main(["db", "build", "--config", str(small_config_file), "--out", str(db), "--spacing-lambda", "2"])
    cfg = load_config(small_config_file)
    arr = scenario_array(cfg, 2.0)
    env = rectangular_room()
    tx = Transmitter([4.213, 1.877, 0])
    h = channel_from_sources(tx, enumerate_virtual_sources(tx.location, env, 1), arr, env, 0.2)
    hb = add_noise(h, -20, 0)
    snap = tmp_path / "snap.json"
    snap.write_text(json.dumps({
        "wavelength": 0.2,
        "arrayLocations": arr.tolist(),
        "coefficients": [[z.real, z.imag] for z in hb],
        "truth": [[z.real, z.imag] for z in h],
    }))
    capsys.readouterr()
    assert cli.main(["estimate", "--db", str(db), "--snapshot", str(snap), "--method", "multisink"]) == 0
    out = capsys.readouterr().out
    x, y = map(float, re.search(r"location=\(([-\d.]+), ([-\d.]+)\)", out).groups())
    assert math.hypot(x - 4.213, y - 1.877) < 0.05
    assert float(re.search(r"output EVM: ([-\d.]+) dB", out).group(1)) < -20
    assert cli.main(["estimate", "--db", str(db), "--snapshot", str(snap), "--method", "multisource",
                     "--sources", "2"]) == 0
    assert capsys.readouterr().out.count("source ") == 2
    snap.write_text(json.dumps({"wavelength": 0.2}))
    assert cli.main(["estimate", "--db", str(db), "--snapshot", str(snap), "--method", "multisink"]) == 2
