import json

import pytest

from ffarray.cli import main, read_columns
from ffarray.experiments import read_csv
from ffarray.noise import NoiseTrace


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("kind,text", [("LA", "3.287 r0^-3"), ("SA", "4.707 r0^-3"), ("STA", "3.577 r0^-3")])
def test_delta(capsys, kind, text):
    code, out, _ = run(capsys, "delta", "--geometry", kind)
    assert code == 0 and text in out
    assert out.count("term =") == 6
    assert ("3.51" in out) == (kind == "STA")


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["delta", "--geometry", "hex"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


def test_geometry(capsys):
    code, out, _ = run(capsys, "geometry", "--geometry", "STA")
    assert code == 0 and "TwoQubit x2: (none)" in out and "OneQubit x3: c123 c134" in out


def test_noise_sample_round_trip(capsys, tmp_path):
    path = tmp_path / "n.dat"
    code, _, _ = run(capsys, "noise-sample", "--alpha", "50", "--duration-ns", "2", "-o", str(path))
    assert code == 0
    assert len(NoiseTrace.from_text(path.read_text()).samples) == 201
    code, _, err = run(capsys, "noise-sample", "--alpha", "50", "--dt-ps", "100")
    assert code == 2 and "resolve" in err


def test_calibrate_cache(capsys, tmp_path):
    code, out, _ = run(capsys, "calibrate", "--out", str(tmp_path))
    assert code == 0 and out.count("residual") == 3
    cache = tmp_path / "calibration.txt"
    first = cache.read_text()
    assert run(capsys, "calibrate", "--out", str(tmp_path))[0] == 0
    assert cache.read_text() == first
    cache.write_text("Rz.duration = oops\n")
    code, out, err = run(capsys, "calibrate", "--out", str(tmp_path), "--gate", "rx")
    assert code == 0 and "recalibrating" in err
    assert "Rx" in out and "Rz" not in out
    assert run(capsys, "calibrate", "--out", str(tmp_path), "--gate", "cnot")[0] == 1


def test_config_errors(capsys, tmp_path):
    assert run(capsys, "calibrate", "--config", str(tmp_path / "missing.cfg"))[0] == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("alpha = 3\n")
    assert run(capsys, "sweep", "--config", str(bad))[0] == 1
    bad.write_text("n_instances = 0\n")
    assert run(capsys, "sweep", "--config", str(bad))[0] == 1


def _single_gate_config(tmp_path, name="run.cfg"):
    cfg = tmp_path / name
    cfg.write_text(
        "# isolated-equivalent: couplings scaled to nothing\n"
        "gates = Rz,Rx\nparallelism = 1\nalpha_V_per_m = 0\nn_instances = 1\ng_scale = 1e-9\n"
    )
    return cfg


def test_sweep_outputs(capsys, tmp_path):
    out = tmp_path / "out"
    code, stdout, _ = run(capsys, "sweep", "--config", str(_single_gate_config(tmp_path)), "--out", str(out), "-q")
    assert code == 0
    ncols = {}
    for geo in ("LA", "SA", "STA"):
        recs = read_csv((out / f"results_{geo}.csv").read_text())
        assert all(r.mean_infidelity <= 1e-6 for r in recs)
        for gate in ("Rz", "Rx"):
            names, data = read_columns((out / f"curves_{geo}_{gate}.dat").read_text())
            ncols[geo] = (len(names) - 1) // 2
            assert data.shape == (1, len(names))
    assert ncols == {"LA": 2, "SA": 1, "STA": 2}
    names, _ = read_columns((out / "summary_Rz.dat").read_text())
    assert names == ["alpha_V_per_m", "parallelism", "LA", "SA", "STA"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_records"] == 10 and manifest["errors"] == []


def test_sweep_is_reproducible(capsys, tmp_path, monkeypatch):
    cfg = _single_gate_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("alpha_V_per_m = 0", "alpha_V_per_m = 0,80").replace(
        "n_instances = 1", "n_instances = 2").replace("g_scale = 1e-9", "geometries = SA"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "sweep", "--config", str(cfg), "--out", str(a), "-q")[0] == 0
    monkeypatch.setenv("FFARRAY_OUTPUT_DIR", str(b))
    assert run(capsys, "sweep", "--config", str(cfg), "--workers", "2", "-q")[0] == 0
    for name in ("results_SA.csv", "curves_SA_Rz.dat", "curves_SA_Rx.dat", "summary_Rx.dat"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    code, out, _ = run(capsys, "report", "--alpha", "80")
    assert code == 0 and "Rx alpha=80" in out


def test_report_without_results(capsys, tmp_path):
    assert run(capsys, "report", "--out", str(tmp_path))[0] == 2
