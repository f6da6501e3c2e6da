"""Model-based thermometry: double-Lorentzian fitting and the 4-point method.

Both follow a calibrate-then-estimate pattern. Calibration fits every labelled
spectrum, regresses the fitted ZFS against temperature to get the linear law,
and (for the 4-point method) records reference intensities and line-shape
slopes at the four probe frequencies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (DegenerateRegression, DipDetectionFailed, FitDiverged,
                     NotPositiveDefinite, ThermometryError, UnderDetermined)
from .numerics import ConvergenceReport, LeastSquaresProblem, cholesky, least_squares, solve_chol
from .spectrum import (KHZ_PER_MHZ, CalibrationModel, DoubleLorentzianParams, Spectrum,
                       double_lorentzian, double_lorentzian_jacobian, double_lorentzian_slope,
                       frequency_indices, restrict_to_grid, temperature_to_zfs,
                       zfs_from_params, zfs_to_temperature)

N_PARAMS = 7
MIN_FIT_POINTS = N_PARAMS + 1
MIN_DIP_SEPARATION_MHZ = 5.0
FALLBACK_FWHM_MHZ = 8.0
FWHM_BOUNDS_MHZ = (0.5, 40.0)
CONTRAST_BOUNDS = (1e-9, 0.5)
DEFAULT_CENTER_MHZ = 2870.0
# pre-smoothing span for dip detection; well below a typical dip width so
# that coarse grids are not smoothed at all
SMOOTHING_SPAN_MHZ = 2.0


@dataclass(frozen=True)
class FitResult:
    params: DoubleLorentzianParams
    d_mhz: float
    stderr: Tuple[float, ...]
    sse: float
    report: ConvergenceReport

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "d_mhz": self.d_mhz,
            "stderr": dict(zip(DoubleLorentzianParams.NAMES, self.stderr)),
            "sse": self.sse,
            "convergence": self.report.to_dict(),
        }


def _moving_average(y: np.ndarray, window: int) -> np.ndarray:
    left = (window - 1) // 2
    right = window - 1 - left
    padded = np.concatenate([np.full(left, y[0]), y, np.full(right, y[-1])])
    return np.convolve(padded, np.ones(window) / window, mode="valid")


def _half_width(f, sm, i_min, level, direction):
    """Distance from the dip minimum to where ``sm`` first rises above ``level``."""
    j = i_min
    while 0 <= j + direction < f.size:
        j += direction
        if sm[j] >= level:
            # linear interpolation between j - direction and j
            k = j - direction
            frac = (level - sm[k]) / (sm[j] - sm[k]) if sm[j] != sm[k] else 0.0
            return abs(f[k] + frac * (f[j] - f[k]) - f[i_min])
    return None


def auto_initialize(s: Spectrum) -> DoubleLorentzianParams:
    """Data-driven starting point for the double-Lorentzian fit."""
    L = len(s)
    if L < MIN_FIT_POINTS:
        raise UnderDetermined(f"{L} points cannot initialise a {N_PARAMS}-parameter fit")
    f, y = s.frequencies_mhz, s.intensities
    top = np.sort(y)[-max(1, L // 4):]
    baseline = float(np.median(top))
    pitch = (f[-1] - f[0]) / (L - 1)
    sm = _moving_average(y, max(1, int(round(SMOOTHING_SPAN_MHZ / pitch))))

    interior = np.arange(1, L - 1)
    is_min = (sm[interior] < sm[interior - 1]) & (sm[interior] <= sm[interior + 1])
    minima = [int(i) for i in interior[is_min] if sm[i] < baseline]
    if not minima:
        raise DipDetectionFailed("no dips found")
    minima.sort(key=lambda i: (sm[i], i))
    first = minima[0]
    second = next((i for i in minima[1:]
                   if abs(f[i] - f[first]) >= MIN_DIP_SEPARATION_MHZ), None)
    if second is None:
        raise DipDetectionFailed(
            f"fewer than two minima separated by >= {MIN_DIP_SEPARATION_MHZ} MHz")
    lo_i, hi_i = sorted((first, second))

    def dip(i, outward):
        depth = baseline - sm[i]
        contrast = float(np.clip(depth / baseline, 1e-3, CONTRAST_BOUNDS[1]))
        hw = _half_width(f, sm, i, baseline - 0.5 * depth, outward)
        fwhm = FALLBACK_FWHM_MHZ if hw is None or hw == 0 else 2.0 * hw
        return contrast, float(np.clip(fwhm, *FWHM_BOUNDS_MHZ))

    cm, wm = dip(lo_i, -1)
    cp, wp = dip(hi_i, +1)
    return DoubleLorentzianParams(baseline, cm, cp, float(f[lo_i]), float(f[hi_i]), wm, wp)


def fit_bounds(s: Spectrum):
    f = s.frequencies_mhz
    ymax = float(np.max(np.abs(s.intensities)))
    lower = np.array([1e-12 * ymax, CONTRAST_BOUNDS[0], CONTRAST_BOUNDS[0], f[0], f[0],
                      FWHM_BOUNDS_MHZ[0], FWHM_BOUNDS_MHZ[0]])
    upper = np.array([10.0 * ymax, CONTRAST_BOUNDS[1], CONTRAST_BOUNDS[1], f[-1], f[-1],
                      FWHM_BOUNDS_MHZ[1], FWHM_BOUNDS_MHZ[1]])
    return lower, upper


def fit_double_lorentzian(s: Spectrum, init: Optional[DoubleLorentzianParams] = None,
                          max_iter: int = 200) -> FitResult:
    """Least-squares fit of the 7-parameter double-Lorentzian model to ``s``."""
    if len(s) < MIN_FIT_POINTS:
        raise UnderDetermined(
            f"{len(s)} points for {N_PARAMS} parameters (need >= {MIN_FIT_POINTS})")
    if init is None:
        init = auto_initialize(s)
    f, y = s.frequencies_mhz, s.intensities
    lower, upper = fit_bounds(s)
    x0 = np.clip(init.as_array(), lower, upper)

    problem = LeastSquaresProblem(
        residual=lambda th: double_lorentzian(th, f) - y,
        jacobian=lambda th: double_lorentzian_jacobian(th, f),
        x0=x0, lower=lower, upper=upper, max_iter=max_iter)
    theta, sse, report = least_squares(problem)
    if not report.converged:
        raise FitDiverged(f"no convergence after {report.n_iter} iterations")
    try:
        params = DoubleLorentzianParams.from_array(theta)
    except ValueError as exc:
        raise FitDiverged(f"degenerate fit: {exc}") from None

    J = double_lorentzian_jacobian(params.as_array(), f)
    dof = len(s) - N_PARAMS
    try:
        fac = cholesky(J.T @ J, max_jitter=1e-6 * float(np.max(np.diag(J.T @ J))))
        cov = solve_chol(fac, np.eye(N_PARAMS)) * (sse / dof)
        stderr = tuple(float(v) for v in np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    except NotPositiveDefinite:
        stderr = (math.nan,) * N_PARAMS
    return FitResult(params, zfs_from_params(params), stderr, sse, report)


# -- ZFS calibration (shared by the fitting and 4-point methods) ---------------------

@dataclass(frozen=True, eq=False)
class ZfsCalibration:
    """Linear ZFS law regressed from fitted calibration spectra.

    ``fits`` is aligned with ``temperatures_k``; entries are ``None`` for
    spectra whose fit failed (their error names are in ``failures``).
    """

    cal: CalibrationModel
    alpha_stderr_khz_per_k: float
    temperatures_k: Tuple[float, ...] = ()
    fits: Tuple[Optional[FitResult], ...] = ()
    failures: Tuple[Optional[str], ...] = ()

    def fit_for(self, t_k: float) -> Optional[FitResult]:
        for t, fr in zip(self.temperatures_k, self.fits):
            if t == t_k:
                return fr
        return None

    def to_dict(self) -> dict:
        return {
            "calibration": self.cal.to_dict(),
            "alpha_stderr_khz_per_k": self.alpha_stderr_khz_per_k,
            "temperatures_k": list(self.temperatures_k),
            "d_mhz": [None if fr is None else fr.d_mhz for fr in self.fits],
            "failures": list(self.failures),
        }


def regress_zfs(temperatures_k: Sequence[float], d_mhz: Sequence[float]):
    """Ordinary least squares of D against T.

    Returns the calibration (T0 = lowest temperature, D(T0) from the line) and
    the 1-sigma standard error of the slope in kHz/K.
    """
    t = np.asarray(temperatures_k, dtype=float)
    d = np.asarray(d_mhz, dtype=float)
    if t.size < 2 or np.ptp(t) == 0:
        raise DegenerateRegression("need at least two distinct temperatures")
    tm = t.mean()
    sxx = float(np.sum((t - tm) ** 2))
    slope = float(np.sum((t - tm) * (d - d.mean())) / sxx)
    t0 = float(t.min())
    d_t0 = float(d.mean() + slope * (t0 - tm))
    if t.size > 2:
        resid = d - (d.mean() + slope * (t - tm))
        se = math.sqrt(float(resid @ resid) / (t.size - 2) / sxx) * KHZ_PER_MHZ
    else:
        se = math.nan
    if slope == 0:
        raise DegenerateRegression("fitted ZFS does not vary with temperature")
    return CalibrationModel(slope * KHZ_PER_MHZ, t0, d_t0), se


def calibrate_fit(spectra: Sequence[Spectrum], inits=None) -> ZfsCalibration:
    """Fit every labelled spectrum and regress ZFS against temperature."""
    if any(s.true_temperature_k is None for s in spectra):
        raise ValueError("calibration spectra must carry temperature labels")
    temps, fits, failures = [], [], []
    for k, s in enumerate(spectra):
        temps.append(s.true_temperature_k)
        try:
            fits.append(fit_double_lorentzian(s, None if inits is None else inits[k]))
            failures.append(None)
        except ThermometryError as exc:
            fits.append(None)
            failures.append(exc.name)
    ok = [(t, fr.d_mhz) for t, fr in zip(temps, fits) if fr is not None]
    if not ok:
        first = next(f for f in failures if f is not None) if failures else None
        if first == "UnderDetermined":
            raise UnderDetermined("every calibration fit is under-determined")
        raise DegenerateRegression(f"no calibration spectrum could be fitted ({first})")
    cal, se = regress_zfs(*zip(*ok))
    return ZfsCalibration(cal, se, tuple(temps), tuple(fits), tuple(failures))


def estimate_fit(cal: CalibrationModel, s: Spectrum, init=None) -> Tuple[float, FitResult]:
    fr = fit_double_lorentzian(s, init)
    return zfs_to_temperature(cal, fr.d_mhz), fr


# -- 4-point method ------------------------------------------------------------------

@dataclass(frozen=True)
class FourPointPattern:
    """Four probe frequencies given as offsets (MHz) from ``center_mhz``."""

    offsets_mhz: Tuple[float, float, float, float]
    center_mhz: float = DEFAULT_CENTER_MHZ
    index: Optional[int] = None

    def __post_init__(self):
        off = tuple(float(o) for o in self.offsets_mhz)
        if len(off) != 4:
            raise ValueError("a 4-point pattern needs exactly four offsets")
        if not (off[0] < off[1] < 0 < off[2] < off[3]):
            raise ValueError("offsets must satisfy o1 < o2 < 0 < o3 < o4")
        object.__setattr__(self, "offsets_mhz", off)

    @property
    def frequencies_mhz(self) -> Tuple[float, ...]:
        return tuple(self.center_mhz + o for o in self.offsets_mhz)

    @property
    def is_symmetric(self) -> bool:
        o = self.offsets_mhz
        return o[0] == -o[3] and o[1] == -o[2]

    def label(self) -> str:
        return " ".join(f"{o:g}" for o in self.offsets_mhz)

    def to_json(self) -> list:
        return [float(o) for o in self.offsets_mhz]


def enumerate_four_point_patterns(center_mhz: float = DEFAULT_CENTER_MHZ) -> List[FourPointPattern]:
    """The 15 symmetric patterns with points 10-20 MHz from the centre on a 2 MHz raster.

    Ordered by outer offset, then inner offset, both descending (indices 1-15).
    """
    patterns = []
    for outer in range(20, 11, -2):
        for inner in range(outer - 2, 9, -2):
            patterns.append(FourPointPattern(
                (-outer, -inner, inner, outer), center_mhz, index=len(patterns) + 1))
    return patterns


def default_pattern(center_mhz: float = DEFAULT_CENTER_MHZ) -> FourPointPattern:
    """Index 10, the (-16, -14, 14, 16) pattern used for the headline 4-point results."""
    return enumerate_four_point_patterns(center_mhz)[9]


@dataclass(frozen=True, eq=False)
class FourPointCalibration:
    pattern: FourPointPattern
    frequencies_mhz: Tuple[float, ...]
    i_ref: Tuple[float, ...]
    slopes: Tuple[float, ...]
    cal: CalibrationModel
    t_ref_k: float

    def __post_init__(self):
        s = self.slopes
        if not (np.sign(s[0]) == np.sign(s[1]) != 0 and np.sign(s[2]) == np.sign(s[3]) != 0
                and np.sign(s[0]) != np.sign(s[2])):
            raise ValueError(f"pattern points do not sit on opposing slopes: {s}")

    @property
    def d_ref_mhz(self) -> float:
        return temperature_to_zfs(self.cal, self.t_ref_k)

    def to_dict(self) -> dict:
        return {
            "method": "fourpoint",
            "pattern": {"offsets_mhz": self.pattern.to_json(),
                        "center_mhz": self.pattern.center_mhz, "index": self.pattern.index},
            "frequencies_mhz": list(self.frequencies_mhz),
            "i_ref": list(self.i_ref),
            "slopes": list(self.slopes),
            "calibration": self.cal.to_dict(),
            "t_ref_k": self.t_ref_k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FourPointCalibration":
        p = d["pattern"]
        return cls(FourPointPattern(tuple(p["offsets_mhz"]), p["center_mhz"], p.get("index")),
                   tuple(d["frequencies_mhz"]), tuple(d["i_ref"]), tuple(d["slopes"]),
                   CalibrationModel.from_dict(d["calibration"]), float(d["t_ref_k"]))


def calibrate_four_point(calibration_spectra: Sequence[Spectrum], pattern: FourPointPattern,
                         zfs_cal: Optional[ZfsCalibration] = None,
                         t_ref_k: Optional[float] = None) -> FourPointCalibration:
    """Reference intensities and slopes at the pattern frequencies.

    The linear ZFS law comes from ``zfs_cal`` when given (so several patterns
    can share one slope), otherwise from fitting ``calibration_spectra``.
    The reference temperature defaults to the lowest calibration temperature.
    When it is not a measured temperature, reference intensities are taken
    from the nearest spectrum's fitted line shape shifted along the ZFS law.
    """
    if len(calibration_spectra) < 2:
        raise DegenerateRegression("need at least two calibration spectra")
    if any(s.true_temperature_k is None for s in calibration_spectra):
        raise ValueError("calibration spectra must carry temperature labels")
    if zfs_cal is None:
        zfs_cal = calibrate_fit(calibration_spectra)
    temps = np.array([s.true_temperature_k for s in calibration_spectra])
    if t_ref_k is None:
        t_ref_k = float(temps.min())
    ref = calibration_spectra[int(np.argmin(np.abs(temps - t_ref_k)))]
    idx = frequency_indices(ref.frequencies_mhz, pattern.frequencies_mhz)
    freqs = ref.frequencies_mhz[idx]

    fr = zfs_cal.fit_for(ref.true_temperature_k)
    if fr is None:
        fr = fit_double_lorentzian(ref)
    shift = (temperature_to_zfs(zfs_cal.cal, t_ref_k)
             - temperature_to_zfs(zfs_cal.cal, ref.true_temperature_k))
    theta = fr.params.shifted(shift).as_array()
    if ref.true_temperature_k == t_ref_k:
        i_ref = ref.intensities[idx]
    else:
        i_ref = double_lorentzian(theta, freqs)
    slopes = double_lorentzian_slope(theta, freqs)
    return FourPointCalibration(pattern, tuple(float(v) for v in freqs),
                                tuple(float(v) for v in i_ref),
                                tuple(float(v) for v in slopes), zfs_cal.cal, float(t_ref_k))


def four_point_shift(cal: FourPointCalibration, intensities) -> float:
    """Least-squares rigid shift (MHz) explaining the intensity change at the four points."""
    s = np.asarray(cal.slopes)
    d_i = np.asarray(cal.i_ref) - np.asarray(intensities, dtype=float)
    return float(s @ d_i / (s @ s))


def estimate_four_point(cal: FourPointCalibration, s: Spectrum) -> float:
    try:
        pts = restrict_to_grid(s, cal.frequencies_mhz)
    except ValueError:
        raise ValueError("spectrum lacks one or more 4-point frequencies") from None
    delta = four_point_shift(cal, pts.intensities)
    return cal.t_ref_k + delta * KHZ_PER_MHZ / cal.cal.alpha_khz_per_k
