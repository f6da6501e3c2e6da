"""``ndthermo`` command line.

Results go to stdout as JSON lines, diagnostics to stderr. Exit codes:
0 success, 1 runtime or I/O error, 2 configuration error, 3 benchmark
completed with failed cells.
"""
from __future__ import annotations

import json
import math
import os
import sys

import click

from . import gpr
from .benchmark import (DEFAULT_BIN_WIDTH_K, MethodId, run_pattern_study, run_sweep_study,
                        study_seeds, write_study)
from .classical import (FourPointCalibration, FourPointPattern, calibrate_fit,
                        calibrate_four_point, enumerate_four_point_patterns, estimate_fit,
                        estimate_four_point)
from .errors import ThermometryError
from .spectrum import CalibrationModel, read_spectrum_csv, restrict_to_grid
from .synth import ConfigFieldError, ScenarioConfig, load_manifest, write_dataset

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_FAILED_CELLS = 3
FILE_VERSION = 1

DEFAULT_SWEEP = {
    "gpr": [4, 11, 21, 41, 81, 161, 321],
    "fit": [21, 41, 81, 161, 321],
    "fourpoint": [4],
}


class ConfigError(Exception):
    pass


def _emit(obj) -> None:
    click.echo(json.dumps(obj))


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_json(path, what="config"):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {what} {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _run(fn):
    """Map exceptions onto the exit-code contract."""
    try:
        return fn()
    except (ConfigError, ConfigFieldError) as exc:
        _fail(EXIT_CONFIG, f"config: {exc}")
    except ThermometryError as exc:
        _fail(EXIT_RUNTIME, f"{exc.name}: {exc}")
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"IOError: {exc}")
    except ValueError as exc:
        _fail(EXIT_RUNTIME, f"ValueError: {exc}")


def _expect(cfg: dict, key: str, types, required=False, default=None):
    if key not in cfg:
        if required:
            raise ConfigError(f"{key}: missing required field")
        return default
    v = cfg[key]
    if isinstance(v, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{key}: unexpected boolean")
    if not isinstance(v, types):
        raise ConfigError(f"{key}: unexpected value {v!r}")
    return v


def _check_keys(cfg: dict, allowed, where=""):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where or '<root>'}: expected a JSON object")
    for k in cfg:
        if k not in allowed:
            raise ConfigError(f"{where}{k}: unknown field")


def _data_spec(cfg: dict, base_dir: str):
    """Validate a ``data`` section; returns a loader to call after validation."""
    data = _expect(cfg, "data", dict, required=True)
    _check_keys(data, {"manifest", "replicate", "spectra"}, "data.")
    if ("manifest" in data) == ("spectra" in data):
        raise ConfigError("data: give exactly one of 'manifest' or 'spectra'")
    if "manifest" in data:
        path = _expect(data, "manifest", str)
        rep = _expect(data, "replicate", int, default=1)
        path = os.path.join(base_dir, path)

        def load():
            _, entries = load_manifest(path)
            spectra = [s for r, s in entries if r == rep]
            if not spectra:
                raise ValueError(f"manifest has no spectra for replicate {rep}")
            return spectra
        return load
    paths = _expect(data, "spectra", list)
    if not paths or not all(isinstance(p, str) for p in paths):
        raise ConfigError("data.spectra: expected a non-empty list of paths")
    return lambda: [read_spectrum_csv(os.path.join(base_dir, p)) for p in paths]


def _pattern_from(cfg: dict):
    if "pattern_index" in cfg and "offsets_mhz" in cfg:
        raise ConfigError("give either pattern_index or offsets_mhz")
    center = float(_expect(cfg, "center_mhz", (int, float), default=2870.0))
    if "offsets_mhz" in cfg:
        offs = _expect(cfg, "offsets_mhz", list)
        try:
            return FourPointPattern(tuple(float(o) for o in offs), center)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"offsets_mhz: {exc}") from None
    idx = _expect(cfg, "pattern_index", int, default=10)
    if not 1 <= idx <= 15:
        raise ConfigError("pattern_index: must be in 1..15")
    return enumerate_four_point_patterns(center)[idx - 1]


def _selection_from(cfg: dict):
    keys = [k for k in ("n_p", "frequencies_mhz", "pattern_index", "offsets_mhz") if k in cfg]
    if len(keys) > 1:
        raise ConfigError(f"conflicting point selections: {', '.join(keys)}")
    if not keys:
        return None
    if keys[0] == "n_p":
        n_p = _expect(cfg, "n_p", int)
        if n_p < 2:
            raise ConfigError("n_p: must be >= 2")
        return n_p
    if keys[0] == "frequencies_mhz":
        freqs = _expect(cfg, "frequencies_mhz", list)
        if len(freqs) < 2 or not all(isinstance(f, (int, float)) for f in freqs):
            raise ConfigError("frequencies_mhz: expected >= 2 numbers")
        return [float(f) for f in freqs]
    return _pattern_from(cfg)


def _write_json(path, doc) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


@click.group()
def main():
    """Nanodiamond ODMR thermometry: simulate, calibrate, estimate, benchmark."""


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Scenario JSON (defaults to the built-in 11 x 2 scenario).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override the noise seed.")
def simulate(config_path, out_dir, seed):
    """Write a synthetic dataset: one CSV per spectrum plus manifest.json."""
    def go():
        raw = _read_json(config_path) if config_path else {}
        cfg = ScenarioConfig.from_dict(raw)
        if seed is not None:
            try:
                cfg = cfg.with_seed(seed)
            except ValueError as exc:
                raise ConfigError(f"--seed: {exc}") from None
        path = write_dataset(cfg, out_dir)
        click.echo(f"wrote {len(cfg.temperatures_k) * cfg.replicates} spectra to {out_dir}",
                   err=True)
        _emit({"manifest": path})
    _run(go)


@main.command("train-gpr")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def train_gpr(config_path, out_path):
    """Train a GPR model on labelled spectra and save it as JSON."""
    def go():
        cfg = _read_json(config_path)
        _check_keys(cfg, {"data", "n_p", "frequencies_mhz", "pattern_index", "offsets_mhz",
                          "center_mhz"})
        load = _data_spec(cfg, os.path.dirname(os.path.abspath(config_path)))
        sel = _selection_from(cfg)
        spectra = load()
        model = gpr.train(spectra) if sel is None else gpr.train_subsampled(spectra, sel)
        model.save(out_path)
        _emit({"model": out_path, "n_train": model.n_train, "dim": model.dim,
               "log_marginal_likelihood": model.log_marginal_likelihood})
    _run(go)


@main.command("calibrate-4point")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def calibrate_4point(config_path, out_path):
    """Calibrate the 4-point method for one pattern."""
    def go():
        cfg = _read_json(config_path)
        _check_keys(cfg, {"data", "pattern_index", "offsets_mhz", "center_mhz", "t_ref_k"})
        load = _data_spec(cfg, os.path.dirname(os.path.abspath(config_path)))
        pattern = _pattern_from(cfg)
        t_ref = _expect(cfg, "t_ref_k", (int, float))
        fp = calibrate_four_point(load(), pattern, t_ref_k=t_ref)
        _write_json(out_path, {"version": FILE_VERSION, **fp.to_dict()})
        _emit({"calibration": out_path, **fp.cal.to_dict(), "t_ref_k": fp.t_ref_k})
    _run(go)


@main.command("calibrate-fit")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def calibrate_fit_cmd(config_path, out_path):
    """Regress fitted ZFS against temperature for the fitting method."""
    def go():
        cfg = _read_json(config_path)
        _check_keys(cfg, {"data"})
        load = _data_spec(cfg, os.path.dirname(os.path.abspath(config_path)))
        zc = calibrate_fit(load())
        se = zc.alpha_stderr_khz_per_k
        doc = {"version": FILE_VERSION, "method": "fit", "calibration": zc.cal.to_dict(),
               "alpha_stderr_khz_per_k": se if math.isfinite(se) else None,
               "fits": zc.to_dict()}
        _write_json(out_path, doc)
        _emit({"calibration": out_path, **zc.cal.to_dict(),
               "alpha_stderr_khz_per_k": doc["alpha_stderr_khz_per_k"]})
    _run(go)


@main.command()
@click.option("--method", type=click.Choice([m.value for m in MethodId]), required=True)
@click.argument("model_path", type=click.Path(dir_okay=False))
@click.argument("spectrum_path", type=click.Path(dir_okay=False))
def estimate(method, model_path, spectrum_path):
    """Estimate the temperature of one spectrum CSV."""
    def go():
        doc = _read_json(model_path, "model")
        if not isinstance(doc, dict) or doc.get("method") != method:
            raise ConfigError(f"{model_path}: not a '{method}' model/calibration file")
        s = read_spectrum_csv(spectrum_path)
        out = {"method": method, "spectrum": spectrum_path}
        if method == "gpr":
            m = gpr.GprModel.from_dict(doc)
            if len(s) > m.dim:
                try:
                    s = restrict_to_grid(s, m.frequencies_mhz)
                except ValueError:
                    pass
            mean, std = gpr.predict(m, s)
            out.update(temperature_k=mean, std_k=std)
        elif method == "fourpoint":
            fp = FourPointCalibration.from_dict(doc)
            out.update(temperature_k=estimate_four_point(fp, s))
        else:
            cal = CalibrationModel.from_dict(doc["calibration"])
            t, fr = estimate_fit(cal, s)
            out.update(temperature_k=t, d_mhz=fr.d_mhz)
        if s.true_temperature_k is not None:
            out["true_temperature_k"] = s.true_temperature_k
        _emit(out)
    _run(go)


BENCH_KEYS = {"scenario", "seed", "n_seeds", "sweep", "pattern_study", "histogram_bin_width_k"}


def parse_benchmark_config(raw: dict, seed_override=None) -> dict:
    _check_keys(raw, BENCH_KEYS)
    scenario = ScenarioConfig.from_dict(_expect(raw, "scenario", dict, default={}))
    seed = _expect(raw, "seed", int, default=0) if seed_override is None else seed_override
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    n_seeds = _expect(raw, "n_seeds", int, default=20)
    if n_seeds < 1:
        raise ConfigError("n_seeds: must be >= 1")
    sweep = _expect(raw, "sweep", dict, default=DEFAULT_SWEEP)
    plan = {}
    for name, values in sweep.items():
        try:
            method = MethodId(name)
        except ValueError:
            raise ConfigError(f"sweep.{name}: unknown method") from None
        if not isinstance(values, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) and v >= 2 for v in values):
            raise ConfigError(f"sweep.{name}: expected a list of integers >= 2")
        if method is MethodId.FOUR_POINT and any(v != 4 for v in values):
            raise ConfigError("sweep.fourpoint: the 4-point method only supports N_p = 4")
        if any(v > scenario.grid.n_points for v in values):
            raise ConfigError(f"sweep.{name}: N_p exceeds the grid size")
        plan[method] = list(values)
    patterns = _expect(raw, "pattern_study", bool, default=True)
    width = float(_expect(raw, "histogram_bin_width_k", (int, float), default=DEFAULT_BIN_WIDTH_K))
    if not width > 0:
        raise ConfigError("histogram_bin_width_k: must be positive")
    return {"scenario": scenario, "seeds": study_seeds(seed, n_seeds), "plan": plan,
            "pattern_study": patterns, "bin_width": width,
            "echo": {"seed": seed, "n_seeds": n_seeds,
                     "sweep": {m.value: v for m, v in plan.items()},
                     "pattern_study": patterns, "histogram_bin_width_k": width}}


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override the base seed.")
def benchmark(config_path, out_dir, seed):
    """Run the N_p sweep and the 15-pattern study over several noise seeds."""
    def go():
        raw = _read_json(config_path) if config_path else {}
        study = parse_benchmark_config(raw, seed)
        sweep = (run_sweep_study(study["scenario"], study["seeds"], study["plan"])
                 if study["plan"] else None)
        patterns = (run_pattern_study(study["scenario"], study["seeds"])
                    if study["pattern_study"] else None)
        write_study(out_dir, study["scenario"], study["echo"], sweep, patterns,
                    study["bin_width"])
        failed = []
        if sweep is not None:
            for j, ref in enumerate(sweep.reports[0]):
                if any(rs[j].failed for rs in sweep.reports):
                    failed.append(f"{ref.method}@{ref.n_p}")
        for row in ([] if sweep is None else sweep.table()):
            click.echo(f"{row[0]:>9} N_p={row[1]:>3}  RMSE {row[2]:.4f} +/- {row[3]:.4f} K",
                       err=True)
        _emit({"report": os.path.join(out_dir, "report.json"), "failed_cells": failed})
        if failed:
            sys.exit(EXIT_FAILED_CELLS)
    _run(go)


@main.command()
def patterns():
    """Print the 15 four-point patterns (offsets from 2870 MHz) as JSON."""
    rows = [{"index": p.index, "offsets_mhz": [int(o) if o == int(o) else o
                                               for o in p.offsets_mhz]}
            for p in enumerate_four_point_patterns()]
    _emit(rows)


if __name__ == "__main__":
    main()
