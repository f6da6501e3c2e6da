"""Evaluation protocol: calibrate or train on one replicate, estimate the other,
score by RMSE; sweeps over the number of analysis points and the 15-pattern
4-point robustness study, with seed-replicated Monte-Carlo wrappers.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import gpr
from .classical import (FourPointPattern, ZfsCalibration, calibrate_fit, calibrate_four_point,
                        default_pattern, enumerate_four_point_patterns, estimate_fit,
                        estimate_four_point)
from .errors import AllEstimatesFailed, ThermometryError
from .spectrum import Spectrum, select_frequencies, subsample_equally_spaced
from .synth import ScenarioConfig, split_replicates, synth_dataset

DEFAULT_BIN_WIDTH_K = 0.25

# Experimental RMSEs (K) reported for the 15 patterns as (GPR, 4-point); kept
# as reference context only, the raw spectra behind them are not available.
EXPERIMENTAL_PATTERN_RMSE_K = {
    1: (1.5960, 3.8031), 2: (1.2137, 3.4996), 3: (1.0409, 2.3711), 4: (0.8251, 2.5814),
    5: (1.3989, 3.8989), 6: (1.5120, 1.0629), 7: (0.8915, 0.3540), 8: (0.8109, 0.6848),
    9: (1.3751, 1.3421), 10: (0.6561, 0.8920), 11: (0.7113, 0.9174), 12: (1.2496, 1.3424),
    13: (0.7879, 0.9265), 14: (0.9715, 1.0014), 15: (0.7055, 1.1040),
}


class MethodId(str, enum.Enum):
    FOUR_POINT = "fourpoint"
    LORENTZ_FIT = "fit"
    GPR = "gpr"


Selection = Union[int, FourPointPattern, Sequence[float]]


def rmse(pairs) -> float:
    """Root-mean-square of (estimate - truth) over ``(t_true, t_est)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("rmse of an empty list")
    err = np.array([float(e) - float(t) for t, e in pairs])
    if not np.all(np.isfinite(err)):
        raise ValueError("non-finite temperature in rmse input")
    return math.sqrt(float(np.mean(err ** 2)))


@dataclass
class BenchmarkReport:
    method: str
    n_p: Optional[int]
    pattern: Optional[List[float]]
    t_true: List[float]
    t_est: List[Optional[float]]
    failures: List[Optional[str]]
    rmse_k: Optional[float]
    n_success: int
    config: dict = field(default_factory=dict)
    pred_std: Optional[List[Optional[float]]] = None

    @property
    def failed(self) -> bool:
        return any(f is not None for f in self.failures)

    def pairs(self):
        return [(t, e) for t, e in zip(self.t_true, self.t_est) if e is not None]

    def validate(self) -> None:
        pairs = self.pairs()
        if len(pairs) != self.n_success:
            raise ValueError("success count does not match stored estimates")
        expected = rmse(pairs) if pairs else None
        if expected != self.rmse_k:
            raise ValueError(f"stored rmse {self.rmse_k!r} != recomputed {expected!r}")

    def to_dict(self) -> dict:
        return {
            "method": self.method, "n_p": self.n_p, "pattern": self.pattern,
            "t_true": self.t_true, "t_est": self.t_est, "failures": self.failures,
            "rmse_k": self.rmse_k, "n_success": self.n_success, "n_total": len(self.t_true),
            "pred_std": self.pred_std, "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls(d["method"], d["n_p"], d["pattern"], list(d["t_true"]), list(d["t_est"]),
                   list(d["failures"]), d["rmse_k"], d["n_success"], d.get("config", {}),
                   d.get("pred_std"))


def _resolve(selection: Selection):
    """Map an N_p request to a reduction: N_p = 4 means the default 4-point pattern."""
    if isinstance(selection, FourPointPattern):
        return selection
    if isinstance(selection, (int, np.integer)):
        if int(selection) == 4:
            return default_pattern()
        return int(selection)
    return [float(f) for f in selection]


def _reduce(s: Spectrum, sel) -> Spectrum:
    if isinstance(sel, int):
        return subsample_equally_spaced(s, sel)
    return select_frequencies(s, getattr(sel, "frequencies_mhz", sel))


def _finish(method, sel, t_true, t_est, failures, config, pred_std=None) -> BenchmarkReport:
    pairs = [(t, e) for t, e in zip(t_true, t_est) if e is not None]
    report = BenchmarkReport(
        method=MethodId(method).value,
        n_p=sel if isinstance(sel, int) else (4 if isinstance(sel, FourPointPattern) else len(sel)),
        pattern=(sel.to_json() if isinstance(sel, FourPointPattern)
                 else None if isinstance(sel, int) else list(sel)),
        t_true=list(t_true), t_est=list(t_est), failures=list(failures),
        rmse_k=rmse(pairs) if pairs else None, n_success=len(pairs),
        config=dict(config or {}), pred_std=pred_std)
    if not pairs:
        raise AllEstimatesFailed(f"{report.method} produced no estimate", report)
    return report


def run_method(method: MethodId, train_set: Sequence[Spectrum], test_set: Sequence[Spectrum],
               n_p_or_pattern: Selection, config: Optional[dict] = None,
               zfs_cal: Optional[ZfsCalibration] = None) -> BenchmarkReport:
    """Calibrate/train on ``train_set`` and estimate every spectrum of ``test_set``.

    Per-spectrum estimator failures are recorded in ``failures`` and left out of
    the RMSE. Raises ``AllEstimatesFailed`` (carrying the report) when nothing
    succeeded.
    """
    method = MethodId(method)
    sel = _resolve(n_p_or_pattern)
    t_true = [s.true_temperature_k for s in test_set]
    if any(t is None for t in t_true):
        raise ValueError("test spectra must carry temperature labels")
    config = dict(config or {})
    n = len(test_set)

    if method is MethodId.GPR:
        model = gpr.train([_reduce(s, sel) for s in train_set])
        out = [gpr.predict(model, _reduce(s, sel)) for s in test_set]
        config["gpr_hyperparameters"] = {
            "log_lengthscale": model.hyper.log_lengthscale,
            "log_signal_variance": model.hyper.log_signal_variance,
            "log_noise_variance": model.hyper.log_noise_variance}
        return _finish(method, sel, t_true, [m for m, _ in out], [None] * n, config,
                       [sd for _, sd in out])

    if method is MethodId.LORENTZ_FIT:
        try:
            zc = calibrate_fit([_reduce(s, sel) for s in train_set])
        except ThermometryError as exc:
            return _finish(method, sel, t_true, [None] * n, [exc.name] * n, config)
        config["calibration"] = zc.cal.to_dict()
        se = zc.alpha_stderr_khz_per_k
        config["alpha_stderr_khz_per_k"] = se if math.isfinite(se) else None
        t_est, failures = [], []
        for s in test_set:
            try:
                t_est.append(estimate_fit(zc.cal, _reduce(s, sel))[0])
                failures.append(None)
            except ThermometryError as exc:
                t_est.append(None)
                failures.append(exc.name)
        return _finish(method, sel, t_true, t_est, failures, config)

    if not isinstance(sel, FourPointPattern):
        raise ValueError("the 4-point method needs N_p = 4 or an explicit pattern")
    fp = calibrate_four_point(train_set, sel, zfs_cal)
    config["calibration"] = fp.cal.to_dict()
    config["t_ref_k"] = fp.t_ref_k
    t_est = [estimate_four_point(fp, s) for s in test_set]
    return _finish(method, sel, t_true, t_est, [None] * n, config)


def sweep_np(methods: Sequence[MethodId], train, test, np_values: Sequence[int],
             config: Optional[dict] = None) -> List[BenchmarkReport]:
    """One report per (method, N_p); failed cells are kept with their flags."""
    reports = []
    for method in methods:
        for n_p in np_values:
            if int(n_p) < 2:
                raise ValueError(f"N_p must be >= 2, got {n_p}")
            try:
                reports.append(run_method(method, train, test, int(n_p), config))
            except AllEstimatesFailed as exc:
                reports.append(exc.report)
    return reports


@dataclass
class PatternResult:
    pattern: FourPointPattern
    rmse_gpr: float
    rmse_fourpoint: float
    gpr_report: BenchmarkReport
    fourpoint_report: BenchmarkReport


def pattern_study(train, test, zfs_cal: Optional[ZfsCalibration] = None,
                  config: Optional[dict] = None) -> List[PatternResult]:
    """GPR and 4-point RMSE for every one of the 15 patterns.

    A single ZFS calibration (fitted from ``train`` unless given) is shared by
    all 4-point calibrations.
    """
    if zfs_cal is None:
        zfs_cal = calibrate_fit(train)
    results = []
    for p in enumerate_four_point_patterns():
        cfg = {**(config or {}), "pattern_index": p.index}
        g = run_method(MethodId.GPR, train, test, p, cfg)
        f = run_method(MethodId.FOUR_POINT, train, test, p, cfg, zfs_cal=zfs_cal)
        results.append(PatternResult(p, g.rmse_k, f.rmse_k, g, f))
    return results


def histogram(values: Sequence[float], bin_width: float = DEFAULT_BIN_WIDTH_K):
    """Counts per occupied bin as ``(bin_lower_edge, count)``, bins aligned to
    multiples of ``bin_width``; a value on an edge belongs to the upper bin."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("histogram of an empty list")
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    counts: Dict[int, int] = {}
    for v in values:
        k = math.floor(v / bin_width)
        # guard against v/w rounding just below an exact edge
        if (k + 1) * bin_width <= v:
            k += 1
        elif k * bin_width > v:
            k -= 1
        counts[k] = counts.get(k, 0) + 1
    return [(k * bin_width, counts[k]) for k in sorted(counts)]


# -- Monte-Carlo studies ---------------------------------------------------------------

def study_seeds(base_seed: int, n_seeds: int) -> List[int]:
    return [int(base_seed) + k for k in range(int(n_seeds))]


def replicate_split(scenario: ScenarioConfig, seed: int):
    """(Data #1, Data #2) for one synthetic realisation."""
    if scenario.replicates < 2:
        raise ValueError("the protocol needs at least two replicates")
    cfg = scenario.with_seed(seed)
    reps = split_replicates(cfg, synth_dataset(cfg))
    return reps[0], reps[1]


def _mean_std(values):
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class SweepStudy:
    seeds: List[int]
    reports: List[List[BenchmarkReport]]      # per seed

    def table(self):
        """Rows ``(method, n_p, rmse_mean, rmse_std)`` in plan order."""
        rows = []
        for j, ref in enumerate(self.reports[0]):
            vals = [rs[j].rmse_k for rs in self.reports]
            m, s = _mean_std(vals)
            rows.append((ref.method, ref.n_p, m, s))
        return rows

    def rmse_matrix(self, method: MethodId, n_p: int) -> np.ndarray:
        j = next(j for j, r in enumerate(self.reports[0])
                 if r.method == MethodId(method).value and r.n_p == n_p)
        return np.array([np.nan if rs[j].rmse_k is None else rs[j].rmse_k
                         for rs in self.reports])


def run_sweep_study(scenario: ScenarioConfig, seeds: Sequence[int],
                    plan: Dict[MethodId, Sequence[int]]) -> SweepStudy:
    per_seed = []
    for seed in seeds:
        d1, d2 = replicate_split(scenario, seed)
        reports = []
        for method, np_values in plan.items():
            reports.extend(sweep_np([method], d1, d2, np_values, {"seed": seed}))
        per_seed.append(reports)
    return SweepStudy(list(seeds), per_seed)


@dataclass
class PatternStudy:
    seeds: List[int]
    results: List[List[PatternResult]]        # per seed

    def mean_rmse(self):
        g = np.array([[r.rmse_gpr for r in rs] for rs in self.results])
        f = np.array([[r.rmse_fourpoint for r in rs] for rs in self.results])
        return g.mean(axis=0), f.mean(axis=0)

    def table(self):
        """Rows ``(index, offsets, rmse_gpr, rmse_fourpoint)`` averaged over seeds."""
        g, f = self.mean_rmse()
        return [(r.pattern.index, r.pattern.to_json(), float(gv), float(fv))
                for r, gv, fv in zip(self.results[0], g, f)]


def run_pattern_study(scenario: ScenarioConfig, seeds: Sequence[int]) -> PatternStudy:
    out = []
    for seed in seeds:
        d1, d2 = replicate_split(scenario, seed)
        out.append(pattern_study(d1, d2, config={"seed": seed}))
    return PatternStudy(list(seeds), out)


# -- output ------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def _num(v):
    return None if v is None or not math.isfinite(v) else float(v)


def write_study(out_dir, scenario: ScenarioConfig, study_config: dict,
                sweep: Optional[SweepStudy], patterns: Optional[PatternStudy],
                bin_width: float = DEFAULT_BIN_WIDTH_K) -> dict:
    """Write ``report.json`` and the plot-data CSVs; returns the JSON document."""
    os.makedirs(out_dir, exist_ok=True)
    doc = {"scenario": scenario.to_dict(), "study": study_config,
           "sweep": None, "pattern_study": None}

    with open(os.path.join(out_dir, "rmse_vs_np.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "n_p", "rmse_mean", "rmse_std"])
        if sweep is not None:
            for method, n_p, m, s in sweep.table():
                w.writerow([method, n_p, _fmt(m), _fmt(s)])
            doc["sweep"] = {
                "seeds": sweep.seeds,
                "summary": [{"method": a, "n_p": b, "rmse_mean": _num(c), "rmse_std": _num(d)}
                            for a, b, c, d in sweep.table()],
                "reports": [[r.to_dict() for r in rs] for rs in sweep.reports],
            }

    hist_rows = []
    with open(os.path.join(out_dir, "pattern_rmse.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "offsets", "rmse_gpr", "rmse_fourpoint"])
        if patterns is not None:
            table = patterns.table()
            for idx, offs, g, f in table:
                w.writerow([idx, " ".join(f"{o:g}" for o in offs), _fmt(g), _fmt(f)])
            for method, col in (("gpr", 2), ("fourpoint", 3)):
                for lower, count in histogram([row[col] for row in table], bin_width):
                    hist_rows.append((method, lower, count))
            doc["pattern_study"] = {
                "seeds": patterns.seeds,
                "summary": [{"index": i, "offsets_mhz": o, "rmse_gpr": g, "rmse_fourpoint": f}
                            for i, o, g, f in table],
                "histogram_bin_width_k": bin_width,
                "histogram": [{"method": m, "bin_lower": b, "count": c} for m, b, c in hist_rows],
                "experimental_reference_rmse_k": {
                    str(k): {"gpr": v[0], "fourpoint": v[1]}
                    for k, v in EXPERIMENTAL_PATTERN_RMSE_K.items()},
                "reports": [[{"gpr": r.gpr_report.to_dict(),
                              "fourpoint": r.fourpoint_report.to_dict()} for r in rs]
                            for rs in patterns.results],
            }

    with open(os.path.join(out_dir, "histogram.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "bin_lower", "count"])
        for m, b, c in hist_rows:
            w.writerow([m, _fmt(b), c])

    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
    return doc
