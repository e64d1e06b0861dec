import json
import subprocess
import sys

import numpy as np
import pytest

from polyvem.cli import CONFIG_KEYS, INVERSE_HEADER, main


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_forward_table_layout(capsys):
    code, out, _ = run(["--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "4,8,16"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "level,h,ndof,err1,rate1,err0,rate0"
    assert len(lines) == 4
    rows = [l.split(",") for l in lines[1:]]
    assert [r[1] for r in rows] == ["0.35355", "0.17678", "0.08839"]
    assert float(rows[1][4]) == pytest.approx(1.0, abs=0.1)
    assert float(rows[1][6]) == pytest.approx(2.0, abs=0.15)
    assert rows[-1][4] == "-" and rows[-1][6] == "-"


def test_zero_source_gives_zero_errors_and_no_rates(capsys):
    code, out, _ = run(["--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "2,4", "--source", "zero"], capsys)
    assert code == 0
    for row in out.strip().splitlines()[1:]:
        f = row.split(",")
        assert float(f[3]) == 0 and float(f[5]) == 0
        assert f[4] == "-" and f[6] == "-"


def test_point_load_successive_reference(capsys):
    code, out, _ = run(
        ["--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "4,8,16", "--source", "delta(0.5,0.5)", "--q", "j",
         "--reference", "successive"],
        capsys,
    )
    assert code == 0
    rows = [l.split(",") for l in out.strip().splitlines()[1:]]
    assert rows[-1][3:] == ["-"] * 4
    assert float(rows[0][3]) > float(rows[1][3]) > 0


@pytest.mark.parametrize(
    "args",
    [
        ["--cmd", "forward", "--mesh-kind", "hexagons", "--levels", "2"],
        ["--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "a,b"],
        ["--cmd", "forward", "--mesh-kind", "uniform_square"],
        ["--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "2", "--source", "cosh"],
        ["--cmd", "inverse", "--mesh-kind", "uniform_square", "--levels", "2"],
        ["--preset", "no-such-study"],
        ["--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "2", "--alpha", "-1"],
    ],
)
def test_usage_errors_exit_2(args, capsys):
    code, _, err = run(args, capsys)
    assert code == 2
    assert err.strip()


def test_numerical_error_exits_1(capsys, tmp_path):
    m = tmp_path / "m.json"
    m.write_text(json.dumps([{"type": "point", "xy": [2.0, 0.5]}]))
    code, _, err = run(["--cmd", "inverse", "--mesh-kind", "uniform_square", "--levels", "2", "--measurements", str(m)], capsys)
    assert code == 1 and "PointOutside" in err
    args = ["--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "2", "--source", "delta(0.5,0.5)", "--q", "pik"]
    code, _, err = run(args, capsys)
    assert code == 1 and "IncompatibleQ" in err


def test_malformed_and_unknown_config(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{levels: [2,")
    assert run(["--config", str(bad)], capsys)[0] == 2
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"command": "forward", "colour": "red"}))
    code, _, err = run(["--config", str(unknown)], capsys)
    assert code == 2 and "colour" in err


def test_empty_measurement_set_is_a_usage_error(capsys, tmp_path):
    m = tmp_path / "m.json"
    m.write_text("[]")
    code, _, _ = run(["--cmd", "inverse", "--mesh-kind", "uniform_square", "--levels", "2", "--measurements", str(m)], capsys)
    assert code == 2


def test_config_and_flag_priority(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "forward", "mesh_kind": "uniform_square", "levels": [2, 4, 8], "source": "zero"}))
    code, out, _ = run(["--config", str(cfg), "--levels", "2,4"], capsys)
    assert code == 0 and len(out.strip().splitlines()) == 3
    assert set(json.loads(cfg.read_text())) <= set(CONFIG_KEYS)


def test_mesh_command(capsys, tmp_path):
    out = tmp_path / "m.json"
    code, text, _ = run(["--cmd", "mesh", "--mesh-kind", "uniform_square", "--levels", "4", "--out", str(out)], capsys)
    assert code == 0
    assert len(json.loads(out.read_text())["cells"]) == 16
    summary = json.loads(text)
    assert summary["cells"] == 16 and summary["star_shaped"]


def test_voronoi_mesh_files_are_reproducible(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(["--cmd", "mesh", "--mesh-kind", "voronoi_lloyd", "--levels", "100", "--seed", "42", "--out", str(p)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_inverse_run_writes_sidecars(capsys, tmp_path):
    m = tmp_path / "m.json"
    m.write_text(json.dumps([{"type": "average", "box": [0.25, 0.75, 0.25, 0.75]}, {"type": "point", "xy": [0.5, 0.5]}]))
    out = tmp_path / "inv.csv"
    code, _, _ = run(
        ["--cmd", "inverse", "--mesh-kind", "uniform_square", "--levels", "4,8,16", "--measurements", str(m),
         "--noise", "0.01", "--seed", "3", "--out", str(out)],
        capsys,
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == INVERSE_HEADER and len(lines) == 4
    md = (tmp_path / "inv.m.csv").read_text().splitlines()
    assert md[0] == "i,m,noise,m_noisy" and len(md) == 3
    fh = np.loadtxt(tmp_path / "inv.fh.csv", delimiter=",", skiprows=1)
    assert fh.shape[1] == 3 and np.all(np.isfinite(fh))


def test_point_value_preset_layout(capsys, tmp_path):
    out = tmp_path / "p.csv"
    code, _, _ = run(["--preset", "5.6", "--levels", "2,4", "--out", str(out)], capsys)
    assert code == 0
    main_rows = out.read_text().strip().splitlines()
    assert main_rows[0] == "N," + INVERSE_HEADER
    assert len(main_rows) == 1 + 4 * 2
    probes = (tmp_path / "p.probes.csv").read_text().strip().splitlines()
    assert probes[0] == "h,N=1,N=3,N=5,N=7" and len(probes) == 3
    assert probes[1].startswith("0.70711,")


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "polyvem", "--cmd", "forward", "--mesh-kind", "uniform_square", "--levels", "2"],
        capture_output=True, text=True, check=False,
    )
    assert res.returncode == 0 and res.stdout.startswith("level,h,ndof")
