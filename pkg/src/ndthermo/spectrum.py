"""ODMR spectrum data model, double-Lorentzian line shape and the linear
ZFS-temperature law.

Units: frequencies and ZFS in MHz, slope ``alpha`` in kHz/K, temperatures in K.
The kHz/MHz conversion lives only in :func:`zfs_to_temperature` and
:func:`temperature_to_zfs`.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

KHZ_PER_MHZ = 1000.0
CSV_HEADER = "frequency_mhz,intensity"
LABEL_KEY = "true_temperature_k"


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """A frequency-swept PL intensity trace with an optional temperature label."""

    frequencies_mhz: np.ndarray
    intensities: np.ndarray
    true_temperature_k: Optional[float] = None

    def __post_init__(self):
        f = _frozen_array(self.frequencies_mhz)
        y = _frozen_array(self.intensities)
        if f.ndim != 1 or y.ndim != 1:
            raise ValueError("frequencies and intensities must be 1-D")
        if f.size != y.size:
            raise ValueError(f"length mismatch: {f.size} frequencies, {y.size} intensities")
        if f.size < 2:
            raise ValueError("a spectrum needs at least 2 points")
        if not (np.all(np.isfinite(f)) and np.all(f > 0)):
            raise ValueError("frequencies must be finite and positive")
        if not np.all(np.diff(f) > 0):
            raise ValueError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(y)):
            raise ValueError("intensities must be finite")
        t = self.true_temperature_k
        if t is not None:
            t = float(t)
            if not math.isfinite(t):
                raise ValueError("temperature label must be finite")
        object.__setattr__(self, "frequencies_mhz", f)
        object.__setattr__(self, "intensities", y)
        object.__setattr__(self, "true_temperature_k", t)

    def __len__(self):
        return self.frequencies_mhz.size

    def take(self, indices) -> "Spectrum":
        idx = np.asarray(indices, dtype=int)
        return Spectrum(self.frequencies_mhz[idx], self.intensities[idx], self.true_temperature_k)

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(self.frequencies_mhz, self.intensities * factor, self.true_temperature_k)

    def same_grid(self, other: "Spectrum") -> bool:
        return np.array_equal(self.frequencies_mhz, other.frequencies_mhz)


@dataclass(frozen=True)
class SweepGrid:
    f_start_mhz: float = 2830.0
    f_stop_mhz: float = 2910.0
    n_points: int = 321

    def __post_init__(self):
        if not self.f_start_mhz < self.f_stop_mhz:
            raise ValueError("f_start_mhz must be below f_stop_mhz")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError("n_points must be an integer >= 2")
        if self.f_start_mhz <= 0:
            raise ValueError("frequencies must be positive")

    def frequencies(self) -> np.ndarray:
        return np.linspace(self.f_start_mhz, self.f_stop_mhz, int(self.n_points))

    @property
    def pitch_mhz(self) -> float:
        return (self.f_stop_mhz - self.f_start_mhz) / (self.n_points - 1)


@dataclass(frozen=True)
class DoubleLorentzianParams:
    """Two Lorentzian dips hanging from a positive baseline.

    Widths are full widths at half maximum.
    """

    baseline: float
    contrast_minus: float
    contrast_plus: float
    f_minus_mhz: float
    f_plus_mhz: float
    fwhm_minus_mhz: float
    fwhm_plus_mhz: float

    NAMES = ("baseline", "contrast_minus", "contrast_plus", "f_minus_mhz",
             "f_plus_mhz", "fwhm_minus_mhz", "fwhm_plus_mhz")

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError("line-shape parameters must be finite")
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        for c in (self.contrast_minus, self.contrast_plus):
            if not 0 < c < 1:
                raise ValueError("contrasts must lie in (0, 1)")
        if self.fwhm_minus_mhz <= 0 or self.fwhm_plus_mhz <= 0:
            raise ValueError("widths must be positive")
        if not self.f_minus_mhz < self.f_plus_mhz:
            raise ValueError("f_minus_mhz must be below f_plus_mhz")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.NAMES], dtype=float)

    @classmethod
    def from_array(cls, theta) -> "DoubleLorentzianParams":
        """Build from a 7-vector, swapping the dip triples if they come out reversed."""
        b, cm, cp, fm, fp, wm, wp = (float(v) for v in theta)
        if fm > fp:
            cm, cp, fm, fp, wm, wp = cp, cm, fp, fm, wp, wm
        return cls(b, cm, cp, fm, fp, wm, wp)

    def shifted(self, delta_mhz: float) -> "DoubleLorentzianParams":
        return DoubleLorentzianParams(
            self.baseline, self.contrast_minus, self.contrast_plus,
            self.f_minus_mhz + delta_mhz, self.f_plus_mhz + delta_mhz,
            self.fwhm_minus_mhz, self.fwhm_plus_mhz)

    def to_dict(self) -> dict:
        return {n: float(getattr(self, n)) for n in self.NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "DoubleLorentzianParams":
        return cls(**{n: float(d[n]) for n in cls.NAMES})


@dataclass(frozen=True)
class CalibrationModel:
    """Linear ZFS law D(T) = alpha (T - T0) + D(T0)."""

    alpha_khz_per_k: float
    t0_k: float
    d_t0_mhz: float

    def __post_init__(self):
        for v in (self.alpha_khz_per_k, self.t0_k, self.d_t0_mhz):
            if not math.isfinite(v):
                raise ValueError("calibration constants must be finite")
        if self.alpha_khz_per_k == 0:
            raise ValueError("alpha must be non-zero")

    def to_dict(self) -> dict:
        return {"alpha_khz_per_k": float(self.alpha_khz_per_k), "t0_k": float(self.t0_k),
                "d_t0_mhz": float(self.d_t0_mhz)}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        return cls(float(d["alpha_khz_per_k"]), float(d["t0_k"]), float(d["d_t0_mhz"]))


def _dips(theta, f):
    """Lorentzian dip profiles (unit height) for both dips: shape (2, len(f))."""
    _, _, _, fm, fp, wm, wp = theta
    hm2 = (0.5 * wm) ** 2
    hp2 = (0.5 * wp) ** 2
    lm = hm2 / ((f - fm) ** 2 + hm2)
    lp = hp2 / ((f - fp) ** 2 + hp2)
    return lm, lp


def double_lorentzian(theta, f):
    """Vectorised line shape on a raw 7-vector ``theta`` (parameter order as
    :attr:`DoubleLorentzianParams.NAMES`)."""
    f = np.asarray(f, dtype=float)
    b, cm, cp = theta[0], theta[1], theta[2]
    lm, lp = _dips(theta, f)
    return b * (1.0 - cm * lm - cp * lp)


def double_lorentzian_jacobian(theta, f):
    """Analytic Jacobian of :func:`double_lorentzian`, shape (len(f), 7)."""
    f = np.asarray(f, dtype=float)
    b, cm, cp, fm, fp, wm, wp = theta
    lm, lp = _dips(theta, f)
    J = np.empty((f.size, 7))
    J[:, 0] = 1.0 - cm * lm - cp * lp
    J[:, 1] = -b * lm
    J[:, 2] = -b * lp
    # d/dfk of h²/((f-fk)²+h²) = 2 (f-fk) L² / h²; d/dw with h = w/2: 2 L (1-L) / w
    J[:, 3] = -b * cm * 2.0 * (f - fm) * lm ** 2 / (0.5 * wm) ** 2
    J[:, 4] = -b * cp * 2.0 * (f - fp) * lp ** 2 / (0.5 * wp) ** 2
    J[:, 5] = -b * cm * 2.0 * lm * (1.0 - lm) / wm
    J[:, 6] = -b * cp * 2.0 * lp * (1.0 - lp) / wp
    return J


def double_lorentzian_slope(theta, f):
    """dI/df of the line shape (intensity per MHz)."""
    f = np.asarray(f, dtype=float)
    b, cm, cp, fm, fp, wm, wp = theta
    lm, lp = _dips(theta, f)
    dm = -2.0 * (f - fm) * lm ** 2 / (0.5 * wm) ** 2
    dp = -2.0 * (f - fp) * lp ** 2 / (0.5 * wp) ** 2
    return -b * (cm * dm + cp * dp)


def eval_double_lorentzian(params: DoubleLorentzianParams, f_mhz):
    """Intensity of the double-Lorentzian model at ``f_mhz`` (scalar or array)."""
    out = double_lorentzian(params.as_array(), f_mhz)
    return float(out) if np.ndim(out) == 0 else out


def zfs_from_params(params: DoubleLorentzianParams) -> float:
    return 0.5 * (params.f_minus_mhz + params.f_plus_mhz)


def zfs_to_temperature(cal: CalibrationModel, d_mhz: float) -> float:
    d_mhz = float(d_mhz)
    if not math.isfinite(d_mhz):
        raise ValueError(f"non-finite ZFS value {d_mhz!r}")
    return cal.t0_k + (d_mhz - cal.d_t0_mhz) * KHZ_PER_MHZ / cal.alpha_khz_per_k


def temperature_to_zfs(cal: CalibrationModel, t_k: float) -> float:
    t_k = float(t_k)
    if not math.isfinite(t_k):
        raise ValueError(f"non-finite temperature {t_k!r}")
    return cal.alpha_khz_per_k / KHZ_PER_MHZ * (t_k - cal.t0_k) + cal.d_t0_mhz


def subsample_indices(length: int, n_p: int) -> np.ndarray:
    if int(n_p) != n_p or not 2 <= n_p <= length:
        raise ValueError(f"n_p must be an integer in [2, {length}], got {n_p!r}")
    j = np.arange(n_p)
    # round half away from zero; exact integer arithmetic for the numerator
    num = j * (length - 1)
    return (2 * num + (n_p - 1)) // (2 * (n_p - 1))


def subsample_equally_spaced(s: Spectrum, n_p: int) -> Spectrum:
    """Keep ``n_p`` points spread evenly over the sweep, endpoints included."""
    return s.take(subsample_indices(len(s), n_p))


def frequency_indices(frequencies_mhz: np.ndarray, targets_mhz: Iterable[float]) -> np.ndarray:
    """Nearest-grid-point index for every target; ties resolve to the lower frequency."""
    f = np.asarray(frequencies_mhz, dtype=float)
    out = []
    for t in targets_mhz:
        t = float(t)
        if not f[0] <= t <= f[-1]:
            raise ValueError(f"target {t} MHz outside the spectrum range [{f[0]}, {f[-1]}]")
        hi = int(np.searchsorted(f, t, side="left"))
        if hi == 0 or f[hi] == t:
            out.append(hi)
            continue
        lo = hi - 1
        out.append(hi if (f[hi] - t) < (t - f[lo]) else lo)
    idx = np.array(out, dtype=int)
    if np.unique(idx).size != idx.size:
        raise ValueError("two targets resolve to the same grid point")
    return np.sort(idx)


def select_frequencies(s: Spectrum, targets_mhz: Sequence[float]) -> Spectrum:
    return s.take(frequency_indices(s.frequencies_mhz, targets_mhz))


def restrict_to_grid(s: Spectrum, frequencies_mhz) -> Spectrum:
    """Pick the points of ``s`` lying exactly on ``frequencies_mhz``.

    Used to feed a full sweep into a model trained on a reduced grid. Raises
    ``ValueError`` if any requested frequency is not present.
    """
    want = np.asarray(frequencies_mhz, dtype=float)
    idx = np.searchsorted(s.frequencies_mhz, want)
    idx = np.clip(idx, 0, len(s) - 1)
    if not np.array_equal(s.frequencies_mhz[idx], want):
        raise ValueError("spectrum does not contain every requested frequency")
    return s.take(idx)


# -- CSV ---------------------------------------------------------------------

def format_spectrum_csv(s: Spectrum) -> str:
    lines = []
    if s.true_temperature_k is not None:
        lines.append(f"# {LABEL_KEY}={s.true_temperature_k!r}")
    lines.append(CSV_HEADER)
    for f, y in zip(s.frequencies_mhz.tolist(), s.intensities.tolist()):
        lines.append(f"{f!r},{y!r}")
    return "\n".join(lines) + "\n"


def parse_spectrum_csv(text: str) -> Spectrum:
    label = None
    rows = []
    seen_header = False
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if not seen_header:
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith(LABEL_KEY + "="):
                    label = float(body.split("=", 1)[1])
                continue
            if line != CSV_HEADER:
                raise ValueError(f"line {lineno}: expected header {CSV_HEADER!r}, got {line!r}")
            seen_header = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 2 columns, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value in {line!r}") from None
    if not seen_header:
        raise ValueError(f"missing header {CSV_HEADER!r}")
    if not rows:
        raise ValueError("no data rows")
    f, y = zip(*rows)
    return Spectrum(np.array(f), np.array(y), label)


def write_spectrum_csv(s: Spectrum, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_spectrum_csv(s))


def read_spectrum_csv(path) -> Spectrum:
    with open(os.fspath(path)) as fh:
        return parse_spectrum_csv(fh.read())
