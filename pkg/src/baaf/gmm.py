"""Score normalization, nominal-biased weighted mixture fitting, and the
crossover threshold between the two fitted components.

Cross-bag predictions are min-max normalized to [0, 1], a two-component
1-D Gaussian mixture is fitted with per-sample weights (one minus the
predicted anomaly value, so outliers barely pull the fit), and the score at
which the two weighted component densities are equal becomes the filter
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, DegenerateError, ParameterError

VARIANCE_FLOOR = 1e-6  # on [0, 1]-normalized data
LOGLIK_TOL = 1e-8
MAX_ITER = 500

NORMALIZATION_MODES = ("global", "per_model")


@dataclass(frozen=True)
class NormalizedScores:
    """Min-max normalized scores plus the groups that collapsed to zero."""

    values: np.ndarray
    constant_groups: tuple[int, ...]


def normalize_scores(raw, mode: str = "global", mask=None) -> NormalizedScores:
    """Min-max transform scores into [0, 1].

    ``global`` normalizes over every present value at once; ``per_model``
    normalizes each row (one trained model's prediction vector) separately.
    ``mask`` marks which entries are present (True); absent entries come
    back as NaN. A constant group maps to all zeros and its index is
    reported in ``constant_groups``.
    """
    if mode not in NORMALIZATION_MODES:
        raise ParameterError(f"unknown normalization mode {mode!r}")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ParameterError("cannot normalize an empty score collection")
    if mask is None:
        mask = np.ones(raw.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != raw.shape:
            raise ParameterError("mask shape must match the score shape")
    if not np.all(np.isfinite(raw[mask])):
        raise DataError("scores contain non-finite values")

    was_1d = raw.ndim == 1
    if was_1d:
        raw = raw[None, :]
        mask = mask[None, :]
    if raw.ndim != 2:
        raise ParameterError("scores must be 1-D or 2-D")

    out = np.full(raw.shape, np.nan)
    constant: list[int] = []
    if mode == "global":
        groups = [(0, mask)]
    else:
        groups = [(i, np.zeros_like(mask)) for i in range(raw.shape[0])]
        for i, (_, g) in enumerate(groups):
            g[i] = mask[i]

    for index, g in groups:
        vals = raw[g]
        if vals.size < 2:
            raise ParameterError(
                f"normalization group {index} has {vals.size} values, needs >= 2"
            )
        lo, hi = vals.min(), vals.max()
        if hi == lo:
            out[g] = 0.0
            constant.append(index)
        else:
            out[g] = (raw[g] - lo) / (hi - lo)

    if was_1d:
        out = out[0]
    return NormalizedScores(values=out, constant_groups=tuple(constant))


@dataclass(frozen=True)
class GmmFit:
    """Two weighted 1-D Gaussian components, ordered so means[0] <= means[1],
    plus the crossover threshold once solved."""

    mixing: tuple[float, float]
    means: tuple[float, float]
    variances: tuple[float, float]
    converged: bool
    iterations: int
    final_weighted_loglik: float
    threshold: float | None = None
    threshold_clamped: bool = False
    loglik_path: tuple[float, ...] = ()

    def __post_init__(self):
        if abs(self.mixing[0] + self.mixing[1] - 1.0) > 1e-12:
            raise ParameterError("mixing weights must sum to 1")
        if self.means[0] > self.means[1]:
            raise ParameterError("components must be ordered by mean")
        if min(self.variances) <= 0.0:
            raise ParameterError("variances must be positive")


def _component_logpdf(x: np.ndarray, mixing, means, variances) -> np.ndarray:
    """Weighted log densities, shape (len(x), 2)."""
    mixing = np.asarray(mixing, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_pi = np.log(mixing)
    return (
        log_pi
        - 0.5 * np.log(2.0 * np.pi * variances)
        - (x[:, None] - means) ** 2 / (2.0 * variances)
    )


def _weighted_quantile(x_sorted: np.ndarray, w_sorted: np.ndarray, q: float) -> float:
    cw = np.cumsum(w_sorted)
    idx = int(np.searchsorted(cw, q * cw[-1], side="left"))
    return float(x_sorted[min(idx, len(x_sorted) - 1)])


def fit_weighted_gmm(values, weights) -> GmmFit:
    """Weighted EM for a two-component 1-D Gaussian mixture.

    Every E- and M-step sum is weighted by the per-sample weight, so
    zero-weight samples have no effect. Converges when the weighted
    log-likelihood improves by less than 1e-8, or after 500 iterations.
    The returned components are relabeled so the lower mean comes first.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    if x.size < 4:
        raise ParameterError(f"need at least 4 values to fit a mixture, got {x.size}")
    if w.shape != x.shape:
        raise ParameterError("weights must align with values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        raise DataError("values and weights must be finite")
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise ParameterError("weights must lie in [0, 1]")
    total_w = w.sum()
    if total_w <= 0.0:
        raise ParameterError("total weight must be positive")
    if np.all(x == x[0]):
        raise DegenerateError("all values identical; no mixture structure to fit")

    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    mu = np.array([
        _weighted_quantile(xs, ws, 0.25),
        _weighted_quantile(xs, ws, 0.75),
    ])
    if mu[0] == mu[1]:
        # weight mass is too concentrated for the quartiles to separate;
        # fall back to the value range so EM can still break symmetry
        mu = np.array([float(xs[0]), float(xs[-1])])
    wmean = float(np.sum(w * x) / total_w)
    wvar = max(float(np.sum(w * (x - wmean) ** 2) / total_w), VARIANCE_FLOOR)
    var = np.array([wvar, wvar])
    pi = np.array([0.5, 0.5])

    def loglik(pi, mu, var) -> float:
        lp = _component_logpdf(x, pi, mu, var)
        return float(np.sum(w * logsumexp(lp, axis=1)))

    path = [loglik(pi, mu, var)]
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        lp = _component_logpdf(x, pi, mu, var)
        log_mix = logsumexp(lp, axis=1)
        resp = np.exp(lp - log_mix[:, None])
        wr = w[:, None] * resp
        nc = wr.sum(axis=0)
        nc_safe = np.maximum(nc, 1e-300)
        mu = wr.T @ x / nc_safe
        var = np.maximum((wr * (x[:, None] - mu) ** 2).sum(axis=0) / nc_safe,
                         VARIANCE_FLOOR)
        pi = nc / total_w
        path.append(loglik(pi, mu, var))
        if abs(path[-1] - path[-2]) < LOGLIK_TOL:
            converged = True
            break

    if mu[0] > mu[1]:
        mu, var, pi = mu[::-1], var[::-1], pi[::-1]
    return GmmFit(
        mixing=(float(pi[0]), float(pi[1])),
        means=(float(mu[0]), float(mu[1])),
        variances=(float(var[0]), float(var[1])),
        converged=converged,
        iterations=iterations,
        final_weighted_loglik=path[-1],
        loglik_path=tuple(path),
    )


def crossover_point(pi1: float, mu1: float, var1: float,
                    pi2: float, mu2: float, var2: float) -> tuple[float, bool]:
    """Score at which the two weighted component densities are equal.

    Equating log densities gives a quadratic in x; returns the root in the
    open interval (mu1, mu2) when one exists. Otherwise the root nearest
    that interval is clamped to the closest endpoint and flagged. Returns
    (threshold, clamped).
    """
    if mu2 - mu1 <= 1e-9:
        raise DegenerateError("component means coincide; no unique crossover")
    k = math.log(pi1 / pi2) + 0.5 * math.log(var2 / var1)
    a = 0.5 / var2 - 0.5 / var1
    b = mu1 / var1 - mu2 / var2
    c = mu2**2 / (2.0 * var2) - mu1**2 / (2.0 * var1) + k

    if a == 0.0:
        if b == 0.0:
            raise DegenerateError("identical components; crossover undefined")
        roots = [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            # one density dominates everywhere between the means; clamp to
            # the side it dominates from
            mid = 0.5 * (mu1 + mu2)
            diff = (-(mid - mu1) ** 2 / (2 * var1) + (mid - mu2) ** 2 / (2 * var2) + k)
            return (mu2, True) if diff > 0.0 else (mu1, True)
        sq = math.sqrt(disc)
        q = -0.5 * (b + math.copysign(sq, b)) if b != 0.0 else 0.5 * sq
        roots = [q / a]
        if q != 0.0:
            roots.append(c / q)

    inside = [r for r in roots if mu1 < r < mu2]
    if inside:
        return min(inside), False

    def gap(r: float) -> float:
        return mu1 - r if r < mu1 else r - mu2

    nearest = min(roots, key=gap)
    return (mu1 if nearest < mu1 else mu2), True


def crossover_threshold(fit: GmmFit) -> GmmFit:
    """Solve for the threshold of a fitted mixture; returns a copy with
    ``threshold`` and ``threshold_clamped`` filled in."""
    t, clamped = crossover_point(
        fit.mixing[0], fit.means[0], fit.variances[0],
        fit.mixing[1], fit.means[1], fit.variances[1],
    )
    return replace(fit, threshold=t, threshold_clamped=clamped)
