import json
import os

import pytest
from click.testing import CliRunner

from ndthermo.cli import main


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def last_json(result):
    return json.loads(result.stdout.strip().splitlines()[-1])


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    res = run("simulate", "--out", out, "--seed", 5)
    assert res.exit_code == 0, res.stderr
    return out


def files_of(d):
    return {name: (d / name).read_bytes() for name in sorted(os.listdir(d))}


def test_simulate_layout(dataset):
    names = os.listdir(dataset)
    assert len([n for n in names if n.endswith(".csv")]) == 22
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["noise"]["seed"] == 5 and len(manifest["files"]) == 22


def test_simulate_is_byte_identical(tmp_path, dataset):
    res = run("simulate", "--out", tmp_path / "again", "--seed", 5)
    assert res.exit_code == 0
    assert files_of(tmp_path / "again") == files_of(dataset)
    other = run("simulate", "--out", tmp_path / "other", "--seed", 6)
    assert other.exit_code == 0
    assert (tmp_path / "other" / "spectrum_T280.000K_rep1.csv").read_bytes() != \
        (dataset / "spectrum_T280.000K_rep1.csv").read_bytes()


@pytest.mark.parametrize("cfg", [
    {"noise": {"sigma_per_sweep": -1}},
    {"unknown": 1},
    {"temperatures_k": "hot"},
])
def test_simulate_bad_config_writes_nothing(tmp_path, cfg):
    out = tmp_path / "out"
    res = run("simulate", "--config", write(tmp_path / "c.json", cfg), "--out", out)
    assert res.exit_code == 2
    assert res.stderr.startswith("error: config:")
    assert not out.exists()


def test_malformed_json_is_a_config_error(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    res = run("simulate", "--config", bad, "--out", tmp_path / "o")
    assert res.exit_code == 2 and not (tmp_path / "o").exists()


def test_missing_config_is_io_error(tmp_path):
    res = run("simulate", "--config", tmp_path / "nope.json", "--out", tmp_path / "o")
    assert res.exit_code == 1


def test_gpr_train_and_estimate(tmp_path, dataset):
    cfg = write(tmp_path / "train.json", {"data": {"manifest": str(dataset / "manifest.json")}})
    res = run("train-gpr", "--config", cfg, "--out", tmp_path / "m.json")
    assert res.exit_code == 0, res.stderr
    assert last_json(res)["n_train"] == 11 and last_json(res)["dim"] == 321
    # a training spectrum comes back at its label
    res = run("estimate", "--method", "gpr", tmp_path / "m.json",
              dataset / "spectrum_T282.000K_rep1.csv")
    out = last_json(res)
    assert res.exit_code == 0
    assert abs(out["temperature_k"] - 282.0) < 0.05 and out["std_k"] >= 0
    res = run("estimate", "--method", "gpr", tmp_path / "m.json",
              dataset / "spectrum_T282.000K_rep2.csv")
    assert abs(last_json(res)["temperature_k"] - 282.0) < 1.5


def test_gpr_pattern_model_accepts_full_sweep(tmp_path, dataset):
    cfg = write(tmp_path / "t.json", {"data": {"manifest": str(dataset / "manifest.json")},
                                      "pattern_index": 10})
    assert run("train-gpr", "--config", cfg, "--out", tmp_path / "m4.json").exit_code == 0
    res = run("estimate", "--method", "gpr", tmp_path / "m4.json",
              dataset / "spectrum_T283.000K_rep2.csv")
    assert res.exit_code == 0 and abs(last_json(res)["temperature_k"] - 283.0) < 3


def test_fourpoint_calibrate_and_estimate(tmp_path, dataset):
    cfg = write(tmp_path / "c.json", {"data": {"manifest": str(dataset / "manifest.json")}})
    res = run("calibrate-4point", "--config", cfg, "--out", tmp_path / "fp.json")
    assert res.exit_code == 0, res.stderr
    assert last_json(res)["t_ref_k"] == 280.0
    res = run("estimate", "--method", "fourpoint", tmp_path / "fp.json",
              dataset / "spectrum_T284.000K_rep2.csv")
    assert res.exit_code == 0
    assert abs(last_json(res)["temperature_k"] - 284.0) < 3


def test_fit_calibrate_and_estimate(tmp_path, dataset):
    cfg = write(tmp_path / "c.json", {"data": {"manifest": str(dataset / "manifest.json")}})
    res = run("calibrate-fit", "--config", cfg, "--out", tmp_path / "fit.json")
    assert res.exit_code == 0, res.stderr
    assert abs(last_json(res)["alpha_khz_per_k"] + 74) < 6
    res = run("estimate", "--method", "fit", tmp_path / "fit.json",
              dataset / "spectrum_T281.500K_rep2.csv")
    assert res.exit_code == 0 and abs(last_json(res)["temperature_k"] - 281.5) < 2


def test_fit_on_four_point_csv_is_under_determined(tmp_path, dataset):
    cfg = write(tmp_path / "c.json", {"data": {"manifest": str(dataset / "manifest.json")}})
    run("calibrate-fit", "--config", cfg, "--out", tmp_path / "fit.json")
    lines = (dataset / "spectrum_T281.500K_rep2.csv").read_text().splitlines()
    keep = [l for l in lines[2:] if float(l.split(",")[0]) in (2854, 2856, 2884, 2886)]
    small = tmp_path / "four.csv"
    small.write_text("\n".join(lines[:2] + keep) + "\n")
    res = run("estimate", "--method", "fit", tmp_path / "fit.json", small)
    assert res.exit_code == 1
    assert "UnderDetermined" in res.stderr


def test_estimate_rejects_wrong_file_kind(tmp_path, dataset):
    cfg = write(tmp_path / "c.json", {"data": {"manifest": str(dataset / "manifest.json")}})
    run("calibrate-4point", "--config", cfg, "--out", tmp_path / "fp.json")
    res = run("estimate", "--method", "gpr", tmp_path / "fp.json",
              dataset / "spectrum_T280.000K_rep1.csv")
    assert res.exit_code == 2


@pytest.mark.parametrize("cfg", [
    {},
    {"data": {"manifest": "m.json", "spectra": ["a.csv"]}},
    {"data": {"spectra": []}},
    {"data": {"manifest": "m.json"}, "n_p": 1},
    {"data": {"manifest": "m.json"}, "n_p": 41, "pattern_index": 3},
    {"data": {"manifest": "m.json"}, "pattern_index": 16},
    {"data": {"manifest": "m.json"}, "bogus": True},
])
def test_train_config_errors(tmp_path, cfg):
    res = run("train-gpr", "--config", write(tmp_path / "c.json", cfg), "--out", tmp_path / "m")
    assert res.exit_code == 2
    assert not (tmp_path / "m").exists()


def test_patterns_command():
    res = run("patterns")
    rows = json.loads(res.stdout)
    with open(os.path.join(os.path.dirname(__file__), "fixtures", "patterns.json")) as fh:
        assert rows == json.load(fh)


def small_bench(tmp_path, **extra):
    cfg = {"scenario": {"temperatures_k": [280, 281, 282, 283, 284, 285]}, "n_seeds": 1,
           "pattern_study": False, "sweep": {"gpr": [4, 41], "fourpoint": [4]}}
    cfg.update(extra)
    return write(tmp_path / "bench.json", cfg)


def test_benchmark_success_and_determinism(tmp_path):
    a = run("benchmark", "--config", small_bench(tmp_path), "--out", tmp_path / "a")
    b = run("benchmark", "--config", small_bench(tmp_path), "--out", tmp_path / "b")
    assert a.exit_code == 0 and b.exit_code == 0, a.stderr
    assert last_json(a)["failed_cells"] == []
    assert files_of(tmp_path / "a") == files_of(tmp_path / "b")
    for name in ("report.json", "rmse_vs_np.csv", "pattern_rmse.csv", "histogram.csv"):
        assert (tmp_path / "a" / name).exists()


def test_benchmark_with_failed_cell_exits_3(tmp_path):
    cfg = small_bench(tmp_path, sweep={"fit": [4, 41]})
    res = run("benchmark", "--config", cfg, "--out", tmp_path / "r")
    assert res.exit_code == 3
    assert last_json(res)["failed_cells"] == ["fit@4"]
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    cell = report["sweep"]["reports"][0][0]
    assert cell["failures"] == ["UnderDetermined"] * 6 and cell["rmse_k"] is None


@pytest.mark.parametrize("extra", [
    {"sweep": {"fourpoint": [11]}},
    {"sweep": {"magic": [4]}},
    {"sweep": {"gpr": [400]}},
    {"n_seeds": 0},
    {"histogram_bin_width_k": 0},
    {"typo": 1},
])
def test_benchmark_config_errors(tmp_path, extra):
    res = run("benchmark", "--config", small_bench(tmp_path, **extra), "--out", tmp_path / "r")
    assert res.exit_code == 2
    assert not (tmp_path / "r").exists()
