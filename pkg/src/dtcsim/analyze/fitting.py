"""Curve fits: super-Gaussian phase boundary, decay rates, stretched
exponentials, saturation of the stretch exponent, quadratic rate law and
rate histograms."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .spectral import AnalysisError, PeakHeightSeries

Z95 = 1.959963984540054
NOISE_FACTOR = 3.0
LATE_TIME_STARTS = tuple(range(15, 21))


class FitError(AnalysisError):
    """Fit failed to converge or data are degenerate."""


@dataclass
class FitResult:
    params: dict
    stderr: dict
    residual_norm: float
    converged: bool
    ci95: Optional[dict] = None
    cov: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "ci95": None if self.ci95 is None else {k: [float(a), float(b)] for k, (a, b) in self.ci95.items()},
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "flags": list(self.flags),
        }


def _covariance(jac: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """Gauss-Newton covariance scaled by the reduced chi-square."""
    n, k = jac.shape
    dof = max(n - k, 1)
    s2 = float(resid @ resid) / dof
    _, sv, vt = np.linalg.svd(jac, full_matrices=False)
    keep = sv > sv[0] * 1e-12 if sv.size else sv
    inv = (vt[keep].T / sv[keep] ** 2) @ vt[keep]
    return inv * s2


def _least_squares(fun, jac, x0s, names, bounds=(-np.inf, np.inf), **kw) -> FitResult:
    """Multi-start least squares; returns the lowest-cost converged result."""
    method = "lm" if np.all(np.isinf(bounds[0])) and np.all(np.isinf(bounds[1])) else "trf"
    best = None
    for x0 in x0s:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = optimize.least_squares(fun, x0, jac=jac, bounds=bounds, method=method,
                                             xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000, **kw)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.cost):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("least-squares fit failed from every starting point")
    cov = _covariance(best.jac, best.fun)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(
        params=dict(zip(names, map(float, best.x))),
        stderr=dict(zip(names, map(float, se))),
        residual_norm=float(np.linalg.norm(best.fun)),
        converged=bool(best.status > 0),
        cov=cov,
    )


# --------------------------------------------------------------------------
# super-Gaussian crystalline fraction

def super_gaussian(eps, fmax, eps0, sigma, p):
    eps = np.asarray(eps, dtype=float)
    return fmax * np.exp(-0.5 * (np.abs(eps - eps0) / sigma) ** p)


def fit_super_gaussian(eps: Sequence[float], f: Sequence[float]) -> FitResult:
    """Fit ``f(eps) = fmax exp(-|eps - eps0|^p / (2 sigma^p))``."""
    x = np.asarray(eps, dtype=float)
    y = np.asarray(f, dtype=float)
    if x.size != y.size or x.size < 6:
        raise FitError("super-Gaussian fit needs at least 6 (eps, f) points")
    if np.ptp(y) <= 1e-14 * max(1.0, np.abs(y).max()):
        raise FitError("degenerate data: all f values are equal")

    def model_parts(q):
        fmax, e0, s, p = q
        d = x - e0
        a = np.abs(d) / s
        ap = np.where(a > 0, a ** p, 0.0)
        g = np.exp(-0.5 * ap)
        return fmax, d, a, ap, g, s, p

    def fun(q):
        fmax, *_, g, _s, _p = model_parts(q)
        return fmax * g - y

    def jac(q):
        fmax, d, a, ap, g, s, p = model_parts(q)
        m = fmax * g
        la = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), 0.0)
        out = np.empty((x.size, 4))
        out[:, 0] = g
        out[:, 1] = m * 0.5 * p * np.where(a > 0, ap / np.where(d != 0, d, 1.0), 0.0)
        out[:, 2] = m * 0.5 * p * ap / s
        out[:, 3] = -m * 0.5 * ap * la
        return out

    fmax0 = float(y.max())
    w = np.clip(y, 0, None)
    e00 = float(np.sum(w * x) / np.sum(w)) if w.sum() > 0 else float(x[np.argmax(y)])
    above = x[y >= fmax0 * math.exp(-0.5)]
    s0 = float(max(np.abs(above - e00).max(initial=0.0), np.ptp(x) / 20, 1e-12))
    starts = [(fmax0, e00, s0 * k, p) for p in (2.0, 4.0, 6.0, 10.0) for k in (0.7, 1.0, 1.4)]
    lo = [0.0, x.min() - np.ptp(x), 1e-12, 0.2]
    hi = [np.inf, x.max() + np.ptp(x), np.inf, 60.0]
    return _least_squares(fun, jac, starts, ["fmax", "eps0", "sigma", "p"], bounds=(lo, hi), x_scale="jac")


@dataclass
class BoundaryPoint:
    period: float
    epsilon: Optional[float]
    ci95: Optional[tuple]
    present: bool

    def to_dict(self) -> dict:
        return {"T": self.period, "epsilon": self.epsilon,
                "ci95": None if self.ci95 is None else list(self.ci95), "present": self.present}


def boundary_from_fit(fit: FitResult, threshold: float = 0.1, side: int = 1) -> tuple[Optional[float], Optional[tuple]]:
    """Invert the fitted super-Gaussian at ``threshold`` on one side of eps0."""
    fmax, e0, s, p = (fit.params[k] for k in ("fmax", "eps0", "sigma", "p"))
    if not fmax > threshold:
        return None, None
    lr = math.log(fmax / threshold)
    u = (2 * lr) ** (1 / p)
    b = e0 + side * s * u
    ci = None
    if fit.cov is not None:
        grad = np.array([
            side * s * u / (p * lr * fmax),
            1.0,
            side * u,
            -side * s * u * math.log(2 * lr) / p ** 2,
        ])
        se = math.sqrt(max(float(grad @ fit.cov @ grad), 0.0))
        ci = (b - Z95 * se, b + Z95 * se)
    return b, ci


def phase_boundary(fits: Mapping[float, FitResult], threshold: float = 0.1, side: int = 1) -> list[BoundaryPoint]:
    """One row per period with the perturbation where the fraction drops to ``threshold``."""
    rows = []
    for t in sorted(fits):
        b, ci = boundary_from_fit(fits[t], threshold, side)
        rows.append(BoundaryPoint(float(t), b, ci, b is not None))
    return rows


# --------------------------------------------------------------------------
# exponential decays of peak-height series

@dataclass
class NoiseFloor:
    level: float
    threshold: float


def estimate_noise_floor(values: Sequence[float], tail: float = 0.1, factor: float = NOISE_FACTOR) -> NoiseFloor:
    """Median of the final ``tail`` fraction of the series, cut at ``factor`` times it."""
    y = np.asarray(values, dtype=float)
    k = max(int(math.ceil(tail * y.size)), 1)
    level = float(np.median(y[-k:]))
    return NoiseFloor(level, factor * level)


def _series_arrays(series) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(series, PeakHeightSeries):
        return np.asarray(series.n_sweep, dtype=float), np.asarray(series.heights, dtype=float)
    if isinstance(series, tuple) and len(series) == 2:
        return np.asarray(series[0], dtype=float), np.asarray(series[1], dtype=float)
    y = np.asarray(series, dtype=float)
    return np.arange(y.size, dtype=float), y


def fit_exponential(n: np.ndarray, y: np.ndarray) -> FitResult:
    """``y = A exp(-gamma n)`` by linear regression of ``log y``."""
    if n.size < 3 or np.any(y <= 0):
        raise FitError("exponential fit needs >= 3 positive samples")
    reg = stats.linregress(n, np.log(y))
    resid = np.log(y) - (reg.intercept + reg.slope * n)
    return FitResult(
        params={"A": float(math.exp(reg.intercept)), "gamma": float(-reg.slope)},
        stderr={"A": float(math.exp(reg.intercept) * reg.intercept_stderr), "gamma": float(reg.stderr)},
        residual_norm=float(np.linalg.norm(resid)),
        converged=bool(np.isfinite(reg.slope)),
    )


def _above_floor_end(y: np.ndarray, start: int, threshold: float) -> int:
    """Index one past the last sample above threshold, scanning from ``start``."""
    above = np.nonzero(y[start:] > threshold)[0]
    return start + int(above[-1]) + 1 if above.size else start


@dataclass
class DecayRate:
    rate: float
    error: float
    rates: list
    errors: list
    floor: Optional[NoiseFloor] = None
    flags: list = field(default_factory=list)

    def __iter__(self):
        yield self.rate
        yield self.error


def late_time_decay_rate(series, starts: Iterable[int] = LATE_TIME_STARTS, noise_floor: Optional[NoiseFloor] = None,
                         use_floor: bool = True) -> DecayRate:
    """Mean of single-exponential rates fitted from each start point to the last above-floor sample.

    The error is the larger of the mean individual standard error and the
    sample standard deviation of the individual rates.
    """
    n, y = _series_arrays(series)
    starts = list(starts)
    if n.size < max(starts) + 3:
        raise AnalysisError(f"series of length {n.size} too short for start points up to {max(starts)}")
    floor = None
    threshold = 0.0
    if use_floor:
        floor = noise_floor or estimate_noise_floor(y)
        threshold = floor.threshold
    rates, errs, flags = [], [], []
    for s in starts:
        i0 = int(np.searchsorted(n, s))
        end = _above_floor_end(y, i0, threshold)
        seg = slice(i0, end)
        try:
            fit = fit_exponential(n[seg], y[seg])
        except FitError as exc:
            flags.append(f"start {s}: {exc}")
            continue
        rates.append(fit.params["gamma"])
        errs.append(fit.stderr["gamma"])
    if not rates:
        raise FitError("no late-time fit converged")
    if flags:
        warnings.warn(f"late-time fits dropped: {flags}", RuntimeWarning, stacklevel=2)
    spread = float(np.std(rates, ddof=1)) if len(rates) > 1 else 0.0
    err = max(float(np.mean(errs)), spread)
    return DecayRate(float(np.mean(rates)), err, rates, errs, floor, flags)


def trace_decay_rate(trace, order: int = 2, min_cycle: int = 40) -> float:
    """Decay rate per cycle of the subharmonic envelope of one trace.

    Fits ``log|v_n|`` over cycles ``n > min_cycle`` that are multiples of
    ``order``.
    """
    v = np.asarray(getattr(trace, "values", trace), dtype=float)
    n = np.arange(v.size)
    mask = (n % order == 0) & (n > min_cycle) & (np.abs(v) > 0)
    if mask.sum() < 3:
        raise AnalysisError("trace too short for a late-time envelope fit")
    return fit_exponential(n[mask], np.abs(v[mask])).params["gamma"]


# --------------------------------------------------------------------------
# stretched exponential and its saturation

def stretched_exponential(n, a, n_tau, beta):
    return a * np.exp(-(np.asarray(n, dtype=float) / n_tau) ** beta)


def fit_stretched_exponential(series, use_floor: bool = True, noise_floor: Optional[NoiseFloor] = None) -> FitResult:
    """Fit ``A exp(-(n / n_tau)^beta)`` with ``0 < beta <= 2``."""
    n, y = _series_arrays(series)
    if use_floor:
        floor = noise_floor or estimate_noise_floor(y)
        end = _above_floor_end(y, 0, floor.threshold)
        n, y = n[:end], y[:end]
    if n.size < 10:
        raise FitError("stretched-exponential fit needs >= 10 points above the noise floor")
    if np.any(n < 0):
        raise FitError("sweep positions must be nonnegative")

    def fun(q):
        return stretched_exponential(n, *q) - y

    def jac(q):
        a, nt, b = q
        r = n / nt
        lr = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
        rb = r ** b
        g = np.exp(-rb)
        return np.column_stack([g, a * g * rb * b / nt, -a * g * rb * lr])

    a0 = float(y.max())
    pos = y > 0
    target = a0 / math.e
    cross = n[pos & (y <= target)]
    nt0 = float(cross[0]) if cross.size else float(n.max() * 2 or 1.0)
    nt0 = max(nt0, 1e-3)
    starts = [(a0, nt0 * k, b) for b in (0.5, 1.0, 1.5) for k in (0.5, 1.0, 2.0)]
    res = _least_squares(fun, jac, starts, ["A", "n_tau", "beta"],
                         bounds=([0.0, 1e-9, 1e-3], [np.inf, np.inf, 2.0]), x_scale="jac")
    return res


def mean_beta(fits: Iterable[FitResult]) -> tuple[float, float]:
    """Mean stretch exponent and the standard error of that mean."""
    b = np.array([f.params["beta"] for f in fits], dtype=float)
    if b.size == 0:
        raise AnalysisError("no stretch exponents to average")
    err = float(np.std(b, ddof=1) / math.sqrt(b.size)) if b.size > 1 else 0.0
    return float(b.mean()), err


def saturation_curve(t, c1, c2):
    return 1.0 / (1.0 + (c1 / np.asarray(t, dtype=float)) ** c2)


@dataclass
class SaturationResult:
    t_star: Optional[float]
    error: Optional[float]
    fit: FitResult
    present: bool

    def __iter__(self):
        yield self.t_star
        yield self.error


def fit_saturation(periods: Sequence[float], betas: Sequence[float], level: float = 0.9,
                   max_extrapolation: float = 10.0) -> SaturationResult:
    """Fit ``beta = 1 / (1 + (c1/T)^c2)`` and locate where it reaches ``level``.

    The crossing is reported absent when it lies beyond ``max_extrapolation``
    times the longest period sampled.
    """
    t = np.asarray(periods, dtype=float)
    y = np.asarray(betas, dtype=float)
    if t.size != y.size or t.size < 5:
        raise FitError("saturation fit needs at least 5 (T, beta) points")
    if np.any(t <= 0):
        raise FitError("periods must be positive")

    def fun(q):
        return saturation_curve(t, *q) - y

    def jac(q):
        c1, c2 = q
        r = (c1 / t) ** c2
        d = -1.0 / (1.0 + r) ** 2
        return np.column_stack([d * r * c2 / c1, d * r * np.log(c1 / t)])

    tg = float(np.exp(np.mean(np.log(t))))
    starts = [(tg * k, c) for k in (0.1, 0.5, 1.0, 2.0) for c in (0.5, 1.0, 2.0, 4.0)]
    fit = _least_squares(fun, jac, starts, ["c1", "c2"], bounds=([1e-12, 1e-3], [np.inf, 50.0]), x_scale="jac")
    c1, c2 = fit.params["c1"], fit.params["c2"]
    ratio = level / (1 - level)
    t_star = c1 * ratio ** (1 / c2)
    grad = np.array([ratio ** (1 / c2), -c1 * ratio ** (1 / c2) * math.log(ratio) / c2 ** 2])
    err = math.sqrt(max(float(grad @ fit.cov @ grad), 0.0))
    present = bool(fit.converged and np.isfinite(t_star) and t_star <= max_extrapolation * t.max())
    if not present:
        return SaturationResult(None, None, fit, False)
    return SaturationResult(float(t_star), err, fit, True)


# --------------------------------------------------------------------------
# quadratic rate law and rate histograms

def fit_quadratic_rate(eps: Sequence[float], rates: Sequence[float]) -> FitResult:
    """Linear least squares for ``Gamma = Gamma0 + a eps^2``."""
    x = np.asarray(eps, dtype=float) ** 2
    y = np.asarray(rates, dtype=float)
    if x.size != y.size or x.size < 4:
        raise FitError("quadratic rate fit needs at least 4 points")
    design = np.column_stack([np.ones_like(x), x])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 2:
        raise FitError("rank-deficient design: all epsilon values coincide")
    resid = y - design @ coef
    cov = _covariance(design, resid)
    se = np.sqrt(np.diag(cov))
    return FitResult({"gamma0": float(coef[0]), "a": float(coef[1])},
                     {"gamma0": float(se[0]), "a": float(se[1])},
                     float(np.linalg.norm(resid)), True, cov=cov)


def asymmetric_gaussian(x, amp, mode, sl, sr):
    x = np.asarray(x, dtype=float)
    s = np.where(x < mode, sl, sr)
    return amp * np.exp(-0.5 * ((x - mode) / s) ** 2)


@dataclass
class RateHistogram:
    mode: float
    spread: float
    sigma_left: float
    sigma_right: float
    fallback: bool
    edges: np.ndarray
    counts: np.ndarray

    def __iter__(self):
        yield self.mode
        yield self.spread

    def to_dict(self) -> dict:
        return {"mode": self.mode, "spread": self.spread, "sigma_left": self.sigma_left,
                "sigma_right": self.sigma_right, "fallback": self.fallback,
                "edges": self.edges.tolist(), "counts": self.counts.tolist()}


MIN_HISTOGRAM_RATES = 30


def rate_histogram(rates: Sequence[float], bins="auto") -> RateHistogram:
    """Most probable rate and spread from an asymmetric-Gaussian fit to the histogram.

    Falls back to the fullest bin and the interquartile range (as a
    Gaussian-equivalent width) when the fit fails or lands outside the data.
    """
    r = np.asarray(rates, dtype=float)
    r = r[np.isfinite(r)]
    if r.size < MIN_HISTOGRAM_RATES:
        raise AnalysisError(f"rate histogram needs at least {MIN_HISTOGRAM_RATES} rates, got {r.size}")
    if np.ptp(r) == 0:
        return RateHistogram(float(r[0]), 0.0, 0.0, 0.0, False, np.array([r[0], r[0]]), np.array([r.size]))
    counts, edges = np.histogram(r, bins=bins)
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    k = int(np.argmax(counts))
    q1, q3 = np.percentile(r, [25, 75])
    iqr_sigma = float((q3 - q1) / 1.3489795003921634)

    weight = 1.0 / np.sqrt(np.maximum(counts, 1.0))  # Poisson counting errors

    def fun(q):
        return (asymmetric_gaussian(centers, *q) - counts) * weight

    s0 = max(iqr_sigma, width)
    starts = [(float(counts[k]), float(centers[k]), s0, s0),
              (float(counts[k]), float(np.median(r)), s0, s0)]
    lo = [0.0, r.min(), width * 1e-3, width * 1e-3]
    hi = [np.inf, r.max(), 10 * np.ptp(r), 10 * np.ptp(r)]
    try:
        fit = _least_squares(fun, "2-point", starts, ["amp", "mode", "sl", "sr"], bounds=(lo, hi))
        mode, sl, sr = fit.params["mode"], fit.params["sl"], fit.params["sr"]
        ok = fit.converged and r.min() <= mode <= r.max()
    except FitError:
        ok = False
    if not ok:
        return RateHistogram(float(centers[k]), iqr_sigma, iqr_sigma, iqr_sigma, True, edges, counts)
    return RateHistogram(float(mode), float(0.5 * (sl + sr)), float(sl), float(sr), False, edges, counts)
