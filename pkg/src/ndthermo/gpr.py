"""Exact Gaussian process regression from ODMR intensity vectors to temperature.

Inputs are z-scored per frequency, targets are z-scored, and an isotropic
squared-exponential kernel is used. The three log-hyperparameters are set by
maximising the log marginal likelihood from a fixed 3x3x3 grid of starts.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (DegenerateTargets, GridMismatch, InternalConsistencyError,
                     NotPositiveDefinite)
from .numerics import CholeskyFactor, cholesky, log_det, maximize, solve_chol
from .spectrum import Spectrum, select_frequencies, subsample_equally_spaced

MODEL_VERSION = 1
NOISE_FLOOR = 1e-10
LOG_BOUND = 12.0
MAX_JITTER = 1e-6
GTOL = 5e-4
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GprHyperparams:
    log_lengthscale: float
    log_signal_variance: float
    log_noise_variance: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("hyperparameters must be finite")

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def noise_variance(self) -> float:
        """Noise variance including the fixed numerical floor."""
        return math.exp(self.log_noise_variance) + NOISE_FLOOR

    def as_array(self) -> np.ndarray:
        return np.array([self.log_lengthscale, self.log_signal_variance,
                         self.log_noise_variance], dtype=float)

    @classmethod
    def from_array(cls, v) -> "GprHyperparams":
        return cls(*(float(x) for x in v))


def kernel(x1, x2, h: GprHyperparams) -> float:
    """Squared-exponential covariance between two input vectors."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    r2 = float(np.sum((x1 - x2) ** 2))
    return h.signal_variance * math.exp(-r2 / (2.0 * h.lengthscale ** 2))


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def kernel_matrix(a, b, h: GprHyperparams) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return h.signal_variance * np.exp(-sq_dist(a, b) / (2.0 * h.lengthscale ** 2))


class _Objective:
    """Log marginal likelihood and its analytic gradient on fixed training data."""

    def __init__(self, d2: np.ndarray, y: np.ndarray):
        self.d2 = d2
        self.y = y
        self.n = y.size
        self._cache_key = None
        self._cache = None

    def _pieces(self, theta):
        key = tuple(float(v) for v in theta)
        if key == self._cache_key:
            return self._cache
        ell2 = math.exp(2.0 * theta[0])
        sf2 = math.exp(theta[1])
        sn2 = math.exp(theta[2])
        kse = sf2 * np.exp(-self.d2 / (2.0 * ell2))
        K = kse + (sn2 + NOISE_FLOOR) * np.eye(self.n)
        fac = cholesky(K, MAX_JITTER)
        alpha = solve_chol(fac, self.y)
        self._cache_key, self._cache = key, (ell2, sn2, kse, fac, alpha)
        return self._cache

    def value(self, theta) -> float:
        try:
            _, _, _, fac, alpha = self._pieces(theta)
        except NotPositiveDefinite:
            return -math.inf
        return float(-0.5 * self.y @ alpha - 0.5 * log_det(fac) - 0.5 * self.n * LOG_2PI)

    def gradient(self, theta) -> np.ndarray:
        ell2, sn2, kse, fac, alpha = self._pieces(theta)
        W = np.outer(alpha, alpha) - solve_chol(fac, np.eye(self.n))
        return 0.5 * np.array([
            np.sum(W * (kse * self.d2 / ell2)),
            np.sum(W * kse),
            sn2 * np.trace(W),
        ])


def default_starts(d: int):
    root = math.sqrt(d)
    grid = itertools.product(
        (math.log(0.5 * root), math.log(root), math.log(2.0 * root)),
        (-2.0, 0.0, 2.0),
        (-6.0, -3.0, -1.0))
    return [np.array(p) for p in grid]


@dataclass(frozen=True, eq=False)
class GprModel:
    x_train: np.ndarray          # standardised, n x d
    y_train: np.ndarray          # standardised, n
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    hyper: GprHyperparams
    chol: CholeskyFactor
    weights: np.ndarray
    frequencies_mhz: np.ndarray
    log_marginal_likelihood: float = math.nan

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]

    def standardize(self, s: Spectrum) -> np.ndarray:
        if not np.array_equal(s.frequencies_mhz, self.frequencies_mhz):
            raise GridMismatch(
                f"spectrum grid ({len(s)} points) differs from the model grid ({self.dim} points)")
        return (s.intensities - self.x_mean) / self.x_std

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "method": "gpr",
            "kernel": "squared_exponential",
            "hyperparameters": {
                "log_lengthscale": self.hyper.log_lengthscale,
                "log_signal_variance": self.hyper.log_signal_variance,
                "log_noise_variance": self.hyper.log_noise_variance,
                "noise_floor": NOISE_FLOOR,
            },
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "frequencies_mhz": self.frequencies_mhz.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "x_train": self.x_train.tolist(),
            "y_train": self.y_train.tolist(),
            "cholesky_lower": self.chol.lower.tolist(),
            "jitter_used": self.chol.jitter_used,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GprModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        h = d["hyperparameters"]
        arr = lambda k: np.array(d[k], dtype=float)  # noqa: E731
        return cls(
            x_train=arr("x_train"), y_train=arr("y_train"),
            x_mean=arr("x_mean"), x_std=arr("x_std"),
            y_mean=float(d["y_mean"]), y_std=float(d["y_std"]),
            hyper=GprHyperparams(h["log_lengthscale"], h["log_signal_variance"],
                                 h["log_noise_variance"]),
            chol=CholeskyFactor(arr("cholesky_lower"), float(d["jitter_used"])),
            weights=arr("weights"), frequencies_mhz=arr("frequencies_mhz"),
            log_marginal_likelihood=float(d.get("log_marginal_likelihood", math.nan)))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GprModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train(spectra: Sequence[Spectrum], h0: Optional[GprHyperparams] = None,
          optimize: bool = True) -> GprModel:
    """Fit a GPR model mapping spectra to their temperature labels.

    With ``h0`` given, optimisation starts from ``h0`` alone; with
    ``optimize=False`` the hyperparameters are used exactly as given.
    """
    if len(spectra) < 2:
        raise ValueError("need at least two training spectra")
    grid = spectra[0].frequencies_mhz
    for s in spectra[1:]:
        if not np.array_equal(s.frequencies_mhz, grid):
            raise GridMismatch("training spectra are not on one frequency grid")
    if any(s.true_temperature_k is None for s in spectra):
        raise ValueError("training spectra must carry temperature labels")
    if not optimize and h0 is None:
        raise ValueError("optimize=False requires h0")

    X = np.array([s.intensities for s in spectra])
    t = np.array([s.true_temperature_k for s in spectra])
    # canonical row order makes the fit independent of input order
    order = np.lexsort(tuple(X.T[::-1]) + (t,))
    X, t = X[order], t[order]

    y_mean, y_std = float(t.mean()), float(t.std())
    if y_std == 0:
        raise DegenerateTargets("all training temperatures are equal")
    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    x_std[x_std == 0] = 1.0
    Xs = (X - x_mean) / x_std
    ys = (t - y_mean) / y_std

    obj = _Objective(sq_dist(Xs, Xs), ys)
    if optimize:
        starts = default_starts(X.shape[1]) if h0 is None else [h0.as_array()]
        res = maximize(obj.value, starts, [-LOG_BOUND] * 3, [LOG_BOUND] * 3,
                       gradient=obj.gradient, gtol=GTOL)
        hyper = GprHyperparams.from_array(res.x)
    else:
        hyper = h0
    theta = hyper.as_array()
    _, _, _, fac, weights = obj._pieces(theta)
    return GprModel(Xs, ys, x_mean, x_std, y_mean, y_std, hyper, fac, weights,
                    grid.copy(), obj.value(theta))


def predict(m: GprModel, s: Spectrum):
    """Posterior predictive mean and standard deviation of the temperature (K).

    The variance includes the learned observation noise.
    """
    x = m.standardize(s)
    ks = kernel_matrix(x, m.x_train, m.hyper)[0]
    mean = float(ks @ m.weights)
    v = solve_chol(m.chol, ks)
    var = m.hyper.signal_variance + m.hyper.noise_variance - float(ks @ v)
    if var < -1e-8:
        raise InternalConsistencyError(f"predictive variance {var:g} is negative")
    var = max(var, 0.0)
    return m.y_mean + m.y_std * mean, m.y_std * math.sqrt(var)


Selection = Union[int, Sequence[float]]


def reduce_spectrum(s: Spectrum, n_p: Selection) -> Spectrum:
    if isinstance(n_p, (int, np.integer)):
        return subsample_equally_spaced(s, int(n_p))
    freqs = list(getattr(n_p, "frequencies_mhz", n_p))
    if len(freqs) < 2:
        raise ValueError("need at least two explicit frequencies")
    return select_frequencies(s, freqs)


def train_subsampled(spectra: Sequence[Spectrum], n_p: Selection,
                     h0: Optional[GprHyperparams] = None) -> GprModel:
    """Train on a reduced grid: ``n_p`` evenly spaced points, or an explicit
    frequency list (or 4-point pattern)."""
    return train([reduce_spectrum(s, n_p) for s in spectra], h0)
