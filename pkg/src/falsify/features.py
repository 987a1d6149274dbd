"""Stateless per-bar estimators consumed by the signal families.

Every rolling estimator here uses strictly prior bars (the window ends
at index i-1), so a value at index i can be acted on at the open of bar
i+1 with no same-bar leakage. ``ou_zscore`` and regime labels describe
the just-closed bar; the execution layer guarantees next-bar-open entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .bars import Bar


class FeatureError(ValueError):
    pass


class Statistic(Enum):
    MEAN_RANGE = "MEAN_RANGE"
    VOLUME_MEAN = "VOLUME_MEAN"
    VOLUME_STD = "VOLUME_STD"
    ATR = "ATR"


@dataclass(frozen=True)
class RollingSpec:
    window: int
    statistic: Statistic

    def __post_init__(self) -> None:
        if self.window < 2:
            raise FeatureError("rolling window must be >= 2")


def _prior_mean(x: np.ndarray, window: int) -> np.ndarray:
    """out[i] = mean(x[i-window:i]); NaN during warm-up."""
    n = len(x)
    out = np.full(n, np.nan)
    if n < window + 1:
        return out
    csum = np.concatenate(([0.0], np.cumsum(x)))
    out[window:] = (csum[window:-1] - csum[:-window - 1]) / window
    return out


def _prior_std(x: np.ndarray, window: int) -> np.ndarray:
    """Population std of x[i-window:i]; NaN during warm-up."""
    n = len(x)
    out = np.full(n, np.nan)
    if n < window + 1:
        return out
    csum = np.concatenate(([0.0], np.cumsum(x)))
    csum2 = np.concatenate(([0.0], np.cumsum(x * x)))
    m = (csum[window:-1] - csum[:-window - 1]) / window
    m2 = (csum2[window:-1] - csum2[:-window - 1]) / window
    var = np.maximum(m2 - m * m, 0.0)
    out[window:] = np.sqrt(var)
    return out


def true_ranges(bars: Sequence[Bar]) -> np.ndarray:
    """True range per bar; first bar falls back to high-low."""
    h = np.array([b.high for b in bars])
    lo = np.array([b.low for b in bars])
    c = np.array([b.close for b in bars])
    tr = h - lo
    if len(bars) > 1:
        pc = c[:-1]
        tr[1:] = np.maximum(tr[1:], np.maximum(np.abs(h[1:] - pc), np.abs(lo[1:] - pc)))
    return tr


def rolling_stat(bars: Sequence[Bar], spec: RollingSpec) -> np.ndarray:
    """Rolling statistic over strictly prior bars. NaN marks warm-up."""
    if spec.statistic is Statistic.MEAN_RANGE:
        x = np.array([b.range for b in bars])
        return _prior_mean(x, spec.window)
    if spec.statistic is Statistic.VOLUME_MEAN:
        x = np.array([float(b.volume) for b in bars])
        return _prior_mean(x, spec.window)
    if spec.statistic is Statistic.VOLUME_STD:
        x = np.array([float(b.volume) for b in bars])
        return _prior_std(x, spec.window)
    if spec.statistic is Statistic.ATR:
        return _prior_mean(true_ranges(bars), spec.window)
    raise FeatureError(f"unknown statistic {spec.statistic}")


def volume_zscore(bars: Sequence[Bar], window: int) -> np.ndarray:
    """z_i = (v_i - mean(prior window)) / std(prior window); NaN if std == 0."""
    if window < 2:
        raise FeatureError("window must be >= 2")
    v = np.array([float(b.volume) for b in bars])
    m = _prior_mean(v, window)
    s = _prior_std(v, window)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (v - m) / s
    z[~np.isfinite(z)] = np.nan
    return z


def kalman_velocity(closes: Sequence[float], q: float = 1e-3, r: float = 1.0,
                    return_cov: bool = False):
    """Constant-velocity (level + slope) Kalman filter; returns per-bar velocity.

    The estimate at index i uses closes 0..i only. Initial state is
    (first close, 0) with a large prior covariance. With ``return_cov``
    also returns the per-bar (p00, p01, p11) covariance entries.
    """
    x = np.asarray(closes, dtype=float)
    if len(x) == 0:
        raise FeatureError("empty series")
    if not np.all(np.isfinite(x)):
        raise FeatureError("non-finite value in input series")
    if q <= 0 or r <= 0:
        raise FeatureError("q and r must be positive")

    # scalar form of the 2-state filter; the 2x2 covariance is unrolled
    # (p00, p01, p11) and kept symmetric by construction
    q00, q01, q11 = 0.25 * q, 0.5 * q, 1.0 * q  # dt = 1 bar
    level, vel = x[0], 0.0
    p00, p01, p11 = 1e6, 0.0, 1e6
    out = np.empty(len(x))
    covs = np.empty((len(x), 3)) if return_cov else None
    for i in range(len(x)):
        if i > 0:
            level += vel
            p00 = p00 + 2.0 * p01 + p11 + q00
            p01 = p01 + p11 + q01
            p11 = p11 + q11
        s = p00 + r
        k0, k1 = p00 / s, p01 / s
        resid = x[i] - level
        level += k0 * resid
        vel += k1 * resid
        p11 -= k1 * p01
        p01 *= 1.0 - k0
        p00 *= 1.0 - k0
        out[i] = vel
        if covs is not None:
            covs[i] = (p00, p01, p11)
    if covs is not None:
        return out, covs
    return out


def hurst_exponent(returns: Sequence[float], min_chunk: int = 16) -> float:
    """Rescaled-range Hurst estimate with the Anis-Lloyd small-sample correction.

    Log-log regression of mean R/S against dyadic chunk sizes from
    ``min_chunk`` up to half the series length; the expected iid R/S is
    subtracted per chunk size so an iid series regresses to ~0.5.
    """
    x = np.asarray(returns, dtype=float)
    if len(x) < 100:
        raise FeatureError("need at least 100 observations")
    if np.std(x) == 0:
        raise FeatureError("constant series has no dispersion")

    sizes = []
    s = min_chunk
    while s <= len(x) // 2:
        sizes.append(s)
        s *= 2
    if len(sizes) < 2:
        raise FeatureError("series too short for chosen min_chunk")

    log_rs = []
    for size in sizes:
        k = len(x) // size
        chunks = x[: k * size].reshape(k, size)
        dev = chunks - chunks.mean(axis=1, keepdims=True)
        cum = np.cumsum(dev, axis=1)
        rng = cum.max(axis=1) - cum.min(axis=1)
        std = chunks.std(axis=1)
        ok = std > 0
        if not np.any(ok):
            raise FeatureError("degenerate chunk dispersion")
        log_rs.append(math.log(np.mean(rng[ok] / std[ok])))

    log_n = np.log(sizes)
    slope = np.polyfit(log_n, log_rs, 1)[0]
    expected = np.log([_expected_rs(s) for s in sizes])
    null_slope = np.polyfit(log_n, expected, 1)[0]
    return 0.5 + slope - null_slope


def _expected_rs(n: int) -> float:
    """Anis-Lloyd expected R/S of an iid series of length n."""
    i = np.arange(1, n)
    s = float(np.sum(np.sqrt((n - i) / i)))
    if n <= 340:
        return (math.gamma((n - 1) / 2) / (math.sqrt(math.pi) * math.gamma(n / 2))) * s
    return s / math.sqrt(n * math.pi / 2)


@dataclass(frozen=True)
class OuFit:
    """AR(1)-on-levels fit; half_life is None when phi is outside (0, 1)."""

    phi: float
    mu: float
    sigma_eps: float
    half_life: Optional[float]

    @property
    def stationary_std(self) -> Optional[float]:
        if self.half_life is None:
            return None
        return self.sigma_eps / math.sqrt(1.0 - self.phi**2)


# One-sided Dickey-Fuller 1% critical value (intercept, large n). Plain
# OLS gives phi-hat < 1 on most random walks, so a significance check is
# needed before trusting a finite half-life.
_UNIT_ROOT_CRIT = -3.43


def ou_fit(prices: Sequence[float]) -> OuFit:
    """Least-squares AR(1) on levels: x[t+1] = c + phi * x[t] + eps.

    half_life is None (signals disabled) unless phi is in (0, 1) and
    significantly below 1 at the 1% unit-root level; a random walk or
    explosive series never raises.
    """
    x = np.asarray(prices, dtype=float)
    if len(x) < 30:
        raise FeatureError("need at least 30 observations")
    lag, cur = x[:-1], x[1:]
    var = np.var(lag)
    if var == 0:
        raise FeatureError("constant series")
    phi = float(np.cov(lag, cur, ddof=0)[0, 1] / var)
    c = float(np.mean(cur) - phi * np.mean(lag))
    resid = cur - (c + phi * lag)
    sigma_eps = float(np.std(resid, ddof=2)) if len(resid) > 2 else float(np.std(resid))
    ss_lag = float(np.sum((lag - np.mean(lag)) ** 2))
    se_phi = sigma_eps / math.sqrt(ss_lag) if ss_lag > 0 else float("inf")
    t_unit = (phi - 1.0) / se_phi if se_phi > 0 else 0.0
    if 0.0 < phi < 1.0 and t_unit < _UNIT_ROOT_CRIT:
        half_life = math.log(2) / (-math.log(phi))
        mu = c / (1.0 - phi)
    else:
        half_life = None
        mu = float(np.mean(x))
    return OuFit(phi=phi, mu=mu, sigma_eps=sigma_eps, half_life=half_life)


def ou_zscore(prices: Sequence[float], fit: OuFit) -> np.ndarray:
    """Deviation from the OU long-run mean in stationary-std units."""
    if fit.half_life is None:
        raise FeatureError("OU fit has undefined half-life")
    sd = fit.stationary_std
    if sd is None or sd == 0:
        raise FeatureError("degenerate stationary std")
    return (np.asarray(prices, dtype=float) - fit.mu) / sd


class GmmDegenerateError(RuntimeError):
    """EM collapsed a component's variance even after restarts."""


class RegimeGMM:
    """Diagonal-covariance 3-regime Gaussian mixture, sklearn-style.

    Inputs are standardized on the fit window. After fitting, components
    are relabeled so Regime 0 has the lowest mean of feature 0 (bar
    return) and Regime 2 the highest; Regime 1 is the remainder.
    """

    def __init__(self, k: int = 3, seed: int = 0, max_iter: int = 500,
                 tol: float = 1e-8, restarts: int = 5):
        self.k = k
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.restarts = restarts

    def get_params(self) -> dict:
        return {"k": self.k, "seed": self.seed, "max_iter": self.max_iter,
                "tol": self.tol, "restarts": self.restarts}

    def fit(self, X: np.ndarray) -> "RegimeGMM":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise FeatureError("X must be 2-d")
        if len(X) < 50 * self.k:
            raise FeatureError(f"need >= {50 * self.k} observations, got {len(X)}")
        if not np.all(np.isfinite(X)):
            raise FeatureError("non-finite feature value")

        self.scale_mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_std_ = np.where(sd > 0, sd, 1.0)
        Z = (X - self.scale_mean_) / self.scale_std_

        last_err: Exception | None = None
        for attempt in range(self.restarts):
            try:
                self._em(Z, self.seed + attempt, quantile_init=(attempt == 0))
                return self
            except GmmDegenerateError as exc:
                last_err = exc
        raise GmmDegenerateError(f"EM degenerate after {self.restarts} restarts") from last_err

    def _em(self, Z: np.ndarray, seed: int, quantile_init: bool = True) -> None:
        n, d = Z.shape
        rng = np.random.default_rng(seed)
        if quantile_init:
            # deterministic: hard-partition rows into feature-0 quantile
            # bands and start from their moments, so EM begins inside the
            # basin whose components are ordered by bar return (the
            # all-means-zero volume split is a worse local optimum that
            # broad shared-variance inits sometimes slide into)
            order_0 = np.argsort(Z[:, 0], kind="stable")
            parts = np.array_split(order_0, self.k)
            means = np.array([Z[p].mean(axis=0) for p in parts])
            variances = np.array([np.maximum(Z[p].var(axis=0), 1e-6)
                                  for p in parts])
        else:
            idx = rng.choice(n, size=self.k, replace=False)
            means = Z[idx].copy()
            variances = np.tile(np.maximum(Z.var(axis=0), 1e-6), (self.k, 1))
        weights = np.full(self.k, 1.0 / self.k)

        Z2 = Z * Z
        history: list[float] = []
        prev_ll = -np.inf
        for _ in range(self.max_iter):
            log_resp = self._log_prob(Z, means, variances, weights, Z2=Z2)
            ll_per = _logsumexp(log_resp)
            ll = float(np.sum(ll_per))
            resp = np.exp(log_resp - ll_per[:, None])

            nk = resp.sum(axis=0)
            if np.any(nk < 1e-10):
                raise GmmDegenerateError("empty component")
            means = (resp.T @ Z) / nk[:, None]
            variances = (resp.T @ Z2) / nk[:, None] - means**2
            if np.any(variances < 1e-10):
                raise GmmDegenerateError("variance collapse")
            weights = nk / n

            history.append(ll)
            if ll - prev_ll < self.tol and np.isfinite(prev_ll):
                break
            prev_ll = ll

        # fix regime semantics by mean of feature 0
        order = np.argsort(means[:, 0], kind="stable")
        self.means_ = means[order]
        self.variances_ = variances[order]
        self.weights_ = weights[order]
        self.label_order_ = order
        self.loglik_history_ = history

    @staticmethod
    def _log_prob(Z: np.ndarray, means: np.ndarray, variances: np.ndarray,
                  weights: np.ndarray, Z2: Optional[np.ndarray] = None) -> np.ndarray:
        # expand the quadratic form so the n x k work is two matmuls
        inv = 1.0 / variances
        const = (np.log(weights)
                 - 0.5 * np.sum(np.log(2 * np.pi * variances), axis=1)
                 - 0.5 * np.sum(means * means * inv, axis=1))
        if Z2 is None:
            Z2 = Z * Z
        return const + Z @ (means * inv).T - 0.5 * (Z2 @ inv.T)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.scale_mean_) / self.scale_std_
        log_p = self._log_prob(Z, self.means_, self.variances_, self.weights_)
        return np.exp(log_p - _logsumexp(log_p)[:, None])

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Posterior argmax regime labels; ties break toward the lower index."""
        return np.argmax(self.predict_proba(X), axis=1)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))


def gmm_fit(features: np.ndarray, k: int = 3, seed: int = 0) -> RegimeGMM:
    return RegimeGMM(k=k, seed=seed).fit(features)


def regime_labels(model: RegimeGMM, features: np.ndarray) -> np.ndarray:
    return model.predict(features)


def regime_features(bars: Sequence[Bar], vol_window: int = 50) -> np.ndarray:
    """Feature vector per bar: (bar return, bar range, volume z-score).

    Warm-up volume z-scores are filled with 0 so every bar gets a label;
    callers fitting a model should drop the first ``vol_window`` rows.
    """
    ret = np.array([b.body for b in bars])
    rng = np.array([b.range for b in bars])
    vz = volume_zscore(bars, vol_window)
    vz = np.where(np.isfinite(vz), vz, 0.0)
    return np.column_stack([ret, rng, vz])


def markov_transition_prob(labels: Sequence[int], window: int, frm: int, to: int) -> np.ndarray:
    """Rolling empirical P(to | frm) from label pairs in bars i-window..i-1.

    NaN when warm-up or when no ``frm`` occurrence starts a pair inside
    the window.
    """
    if window < 10:
        raise FeatureError("window must be >= 10")
    lab = np.asarray(labels, dtype=int)
    n = len(lab)
    out = np.full(n, np.nan)
    if n < 2:
        return out
    starts = (lab[:-1] == frm).astype(float)
    hits = ((lab[:-1] == frm) & (lab[1:] == to)).astype(float)
    cs = np.concatenate(([0.0], np.cumsum(starts)))
    ch = np.concatenate(([0.0], np.cumsum(hits)))
    for i in range(window, n):
        # pairs (j, j+1) fully inside [i-window, i-1]
        lo, hi = i - window, i - 1
        denom = cs[hi] - cs[lo]
        if denom > 0:
            out[i] = (ch[hi] - ch[lo]) / denom
    return out
