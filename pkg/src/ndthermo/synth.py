"""Synthetic ODMR datasets with known temperatures.

Temperature moves both dips rigidly along the linear ZFS law; noise is
additive i.i.d. Gaussian with std ``sigma_per_sweep / sqrt(n_sweeps)``.
Random streams come from numpy's PCG64 keyed on (seed, replicate, temperature
bits), so every spectrum is reproducible on its own.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from .spectrum import (CalibrationModel, DoubleLorentzianParams, Spectrum, SweepGrid,
                       double_lorentzian, temperature_to_zfs, write_spectrum_csv)

MANIFEST_NAME = "manifest.json"
CONFIG_VERSION = 1


@dataclass(frozen=True)
class NoiseModel:
    sigma_per_sweep: float = 1e-3
    n_sweeps: int = 100
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.sigma_per_sweep) and self.sigma_per_sweep >= 0):
            raise ValueError("sigma_per_sweep must be finite and >= 0")
        if int(self.n_sweeps) != self.n_sweeps or self.n_sweeps < 1:
            raise ValueError("n_sweeps must be a positive integer")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def effective_std(self) -> float:
        return self.sigma_per_sweep / math.sqrt(self.n_sweeps)


def default_temperatures() -> List[float]:
    return [280.0 + 0.5 * i for i in range(11)]


# D(280 K) = 2870.185 puts the mid-range (282.5 K) centre at 2870.0 MHz. The
# default noise (1e-4 effective) gives a fitted-slope standard error of about
# 1.4 kHz/K over the 11-point grid.
DEFAULT_CAL = CalibrationModel(alpha_khz_per_k=-74.0, t0_k=280.0, d_t0_mhz=2870.185)
DEFAULT_LINE = DoubleLorentzianParams(
    baseline=1.0, contrast_minus=0.022, contrast_plus=0.018,
    f_minus_mhz=2864.185, f_plus_mhz=2876.185, fwhm_minus_mhz=10.0, fwhm_plus_mhz=10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    grid: SweepGrid = field(default_factory=SweepGrid)
    line_shape: DoubleLorentzianParams = DEFAULT_LINE
    cal: CalibrationModel = DEFAULT_CAL
    temperatures_k: Tuple[float, ...] = field(default_factory=lambda: tuple(default_temperatures()))
    noise: NoiseModel = field(default_factory=NoiseModel)
    replicates: int = 2

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures_k)
        if not temps:
            raise ValueError("temperatures_k must be non-empty")
        if not all(math.isfinite(t) for t in temps):
            raise ValueError("temperatures must be finite")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ValueError("replicates must be a positive integer")
        object.__setattr__(self, "temperatures_k", temps)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, noise=replace(self.noise, seed=int(seed)))

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "grid": {"f_start_mhz": float(self.grid.f_start_mhz),
                     "f_stop_mhz": float(self.grid.f_stop_mhz),
                     "n_points": int(self.grid.n_points)},
            "line_shape": self.line_shape.to_dict(),
            "calibration": self.cal.to_dict(),
            "temperatures_k": list(self.temperatures_k),
            "noise": {"sigma_per_sweep": float(self.noise.sigma_per_sweep),
                      "n_sweeps": int(self.noise.n_sweeps),
                      "seed": int(self.noise.seed)},
            "replicates": int(self.replicates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        """Build from a (possibly partial) dict; missing sections take defaults.

        Raises ``ConfigFieldError`` naming the offending field.
        """
        base = cls()
        known = {"version", "grid", "line_shape", "calibration", "temperatures_k",
                 "noise", "replicates", "files", "seed"}
        if not isinstance(d, dict):
            raise ConfigFieldError("<root>", "expected a JSON object")
        for key in d:
            if key not in known:
                raise ConfigFieldError(key, "unknown field")
        if "version" in d and d["version"] != CONFIG_VERSION:
            raise ConfigFieldError("version", f"unsupported version {d['version']!r}")

        def section(name, default: dict, build):
            raw = d.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigFieldError(name, "expected an object")
            for k in raw:
                if k not in default:
                    raise ConfigFieldError(f"{name}.{k}", "unknown field")
            merged = {**default, **raw}
            for k, v in merged.items():
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigFieldError(f"{name}.{k}", f"expected a number, got {v!r}")
            try:
                return build(merged)
            except (ValueError, TypeError) as exc:
                raise ConfigFieldError(name, str(exc)) from None

        defaults = base.to_dict()
        grid = section("grid", defaults["grid"], lambda m: SweepGrid(**m))
        line = section("line_shape", defaults["line_shape"], DoubleLorentzianParams.from_dict)
        cal = section("calibration", defaults["calibration"], CalibrationModel.from_dict)
        noise = section("noise", defaults["noise"], lambda m: NoiseModel(**m))
        if "seed" in d:
            try:
                noise = replace(noise, seed=d["seed"])
            except (ValueError, TypeError) as exc:
                raise ConfigFieldError("seed", str(exc)) from None
        temps = d.get("temperatures_k", list(base.temperatures_k))
        if not isinstance(temps, list) or not all(
                isinstance(t, (int, float)) and not isinstance(t, bool) for t in temps):
            raise ConfigFieldError("temperatures_k", "expected a list of numbers")
        reps = d.get("replicates", base.replicates)
        if isinstance(reps, bool) or not isinstance(reps, int):
            raise ConfigFieldError("replicates", "expected an integer")
        try:
            return cls(grid, line, cal, tuple(temps), noise, reps)
        except ValueError as exc:
            raise ConfigFieldError("<scenario>", str(exc)) from None


class ConfigFieldError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


def _rng(seed: int, t_k: float, replicate_index: int) -> np.random.Generator:
    t_bits = int(np.float64(t_k).view(np.uint64))
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(seed), int(replicate_index), t_bits])))


def noiseless_params(cfg: ScenarioConfig, t_k: float) -> DoubleLorentzianParams:
    delta = temperature_to_zfs(cfg.cal, t_k) - temperature_to_zfs(cfg.cal, cfg.cal.t0_k)
    return cfg.line_shape.shifted(delta)


def synth_spectrum(cfg: ScenarioConfig, t_k: float, replicate_index: int = 0) -> Spectrum:
    f = cfg.grid.frequencies()
    y = double_lorentzian(noiseless_params(cfg, t_k).as_array(), f)
    std = cfg.noise.effective_std
    if std > 0:
        y = y + std * _rng(cfg.noise.seed, t_k, replicate_index).standard_normal(f.size)
    return Spectrum(f, y, float(t_k))


def synth_dataset(cfg: ScenarioConfig) -> List[Spectrum]:
    """All spectra, temperature-major and replicate-minor."""
    return [synth_spectrum(cfg, t, r)
            for t in cfg.temperatures_k for r in range(cfg.replicates)]


def split_replicates(cfg: ScenarioConfig, dataset: Sequence[Spectrum]) -> List[List[Spectrum]]:
    """Regroup a flat dataset into one list per replicate (Data #1, Data #2, ...)."""
    return [list(dataset[r::cfg.replicates]) for r in range(cfg.replicates)]


def spectrum_filename(t_k: float, replicate_index: int) -> str:
    return f"spectrum_T{t_k:.3f}K_rep{replicate_index + 1}.csv"


def write_dataset(cfg: ScenarioConfig, out_dir) -> str:
    """Write every spectrum as CSV plus a JSON manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for t in cfg.temperatures_k:
        for r in range(cfg.replicates):
            name = spectrum_filename(t, r)
            write_spectrum_csv(synth_spectrum(cfg, t, r), os.path.join(out_dir, name))
            files.append({"file": name, "true_temperature_k": t, "replicate": r + 1})
    manifest = cfg.to_dict()
    manifest["noise"]["effective_std"] = cfg.noise.effective_std
    manifest["files"] = files
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_manifest(path):
    """Return ``(config, [(replicate, spectrum), ...])`` from a manifest written by
    :func:`write_dataset`. Replicates are numbered from 1."""
    from .spectrum import read_spectrum_csv

    with open(path) as fh:
        manifest = json.load(fh)
    noise = dict(manifest.get("noise", {}))
    noise.pop("effective_std", None)
    cfg = ScenarioConfig.from_dict({**manifest, "noise": noise})
    base = os.path.dirname(os.path.abspath(path))
    entries = [(int(e["replicate"]), read_spectrum_csv(os.path.join(base, e["file"])))
               for e in manifest.get("files", [])]
    return cfg, entries
