"""Temperature estimation from nanodiamond ODMR spectra.

Three estimators (4-point, double-Lorentzian fit, Gaussian process regression)
plus a synthetic data generator and the benchmark protocol comparing them.
"""
from .spectrum import (CalibrationModel, DoubleLorentzianParams, Spectrum, SweepGrid,
                       eval_double_lorentzian, select_frequencies, subsample_equally_spaced,
                       temperature_to_zfs, zfs_from_params, zfs_to_temperature)
from .synth import NoiseModel, ScenarioConfig, synth_dataset, synth_spectrum
from .classical import (FourPointPattern, auto_initialize, calibrate_fit, calibrate_four_point,
                        enumerate_four_point_patterns, estimate_four_point,
                        fit_double_lorentzian)
from .gpr import GprHyperparams, GprModel, predict, train, train_subsampled
from .benchmark import MethodId, histogram, pattern_study, rmse, run_method, sweep_np

__version__ = "0.1.0"

__all__ = [
    "CalibrationModel",
    "DoubleLorentzianParams",
    "Spectrum",
    "SweepGrid",
    "eval_double_lorentzian",
    "select_frequencies",
    "subsample_equally_spaced",
    "temperature_to_zfs",
    "zfs_from_params",
    "zfs_to_temperature",
    "NoiseModel",
    "ScenarioConfig",
    "synth_dataset",
    "synth_spectrum",
    "FourPointPattern",
    "auto_initialize",
    "calibrate_fit",
    "calibrate_four_point",
    "enumerate_four_point_patterns",
    "estimate_four_point",
    "fit_double_lorentzian",
    "GprHyperparams",
    "GprModel",
    "predict",
    "train",
    "train_subsampled",
    "MethodId",
    "histogram",
    "pattern_study",
    "rmse",
    "run_method",
    "sweep_np",
]
