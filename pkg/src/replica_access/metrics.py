"""Closed-form detection and channel-estimation predictions at a state-evolution fixed point."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, special

from .model import CorrelatedGroup, IsotropicGroup


@dataclass(frozen=True)
class DetectionOperatingPoint:
    threshold: float
    transformed_threshold: float
    p_md: float
    p_fa: float


@dataclass(frozen=True)
class HypoExpRates:
    active_rates: np.ndarray
    null_rates: np.ndarray


# -- special functions ------------------------------------------------------------------------

def _poisson_terms(M, x, ks):
    x = np.asarray(x, float)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = -x + ks * np.log(x) - special.gammaln(ks + 1)
    logt = np.where((x == 0) & (ks == 0), 0.0, logt)
    return np.exp(logt)


def reg_upper_gamma(M: int, x):
    """Q(M, x) = e^{-x} sum_{k<M} x^k / k!  for integer M >= 1."""
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    q = _poisson_terms(M, x, np.arange(int(M))).sum(axis=-1)
    q = np.where(np.isinf(x), 0.0, q)
    return q[()] if q.ndim == 0 else q


def reg_lower_gamma(M: int, x):
    """P(M, x) = 1 - e^{-x} sum_{k<M} x^k / k!  for integer M >= 1.

    Below x = M the complementary tail sum_{k>=M} is used so that small values keep their
    relative accuracy.
    """
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    p = 1.0 - reg_upper_gamma(M, x)
    small = x < M
    if np.any(small):
        xs = np.where(small, x, 0.0)
        tail = _poisson_terms(M, xs, np.arange(int(M), int(M) + 400)).sum(axis=-1)
        p = np.where(small, tail, p)
    p = np.clip(p, 0.0, 1.0)
    return p[()] if np.ndim(p) == 0 else p


def _partial_fraction_weights(rates):
    w = np.empty_like(rates)
    for m in range(rates.size):
        others = np.delete(rates, m)
        w[m] = np.prod(others / (others - rates[m]))
    return w


def hypoexp_survival_expm(rates, l):
    """Survival of a sum of exponentials via the phase-type generator (valid with ties)."""
    rates = np.asarray(rates, float)
    r = rates.size
    Q = np.diag(-rates) + np.diag(rates[:-1], 1)
    ls = np.atleast_1d(np.asarray(l, float))
    out = np.array([linalg.expm(Q * max(t, 0.0))[0].sum() if t > 0 else 1.0 for t in ls])
    out = np.clip(out, 0.0, 1.0)
    return out[0] if np.ndim(l) == 0 else out.reshape(np.shape(l))


def hypoexp_survival(rates, l, tie_rtol=1e-9, max_weight=1e4):
    """P(sum_m Exp(rate_m) > l).

    Uses the partial-fraction form when the rates are well separated. Near-equal rates (relative
    gap below ``tie_rtol``) or weights large enough to cancel catastrophically switch to the
    matrix exponential of the bidiagonal generator.
    """
    rates = np.sort(np.asarray(rates, float))
    if np.any(rates <= 0):
        raise ValueError("rates must be positive")
    l_arr = np.asarray(l, float)
    if rates.size == 1:
        out = np.exp(-rates[0] * np.maximum(l_arr, 0.0))
        return out[()] if out.ndim == 0 else out
    gaps = np.diff(rates) / rates[1:]
    w = _partial_fraction_weights(rates) if np.all(gaps > tie_rtol) else None
    if w is None or np.sum(np.abs(w)) > max_weight:
        return hypoexp_survival_expm(rates, l)
    lc = np.maximum(l_arr, 0.0)[..., None]
    out = np.clip(np.sum(w * np.exp(-rates * lc), axis=-1), 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


# -- isotropic groups -------------------------------------------------------------------------

def _iso_parts(tau_star, group, config):
    g = config.groups[group] if isinstance(group, (int, np.integer)) else group
    if not isinstance(g, IsotropicGroup):
        raise TypeError("expected an isotropic group")
    v = config.noise_var + float(tau_star) / config.alpha
    return g.variance, v, config.n_antennas


def isotropic_llr_offset(tau_star, group, config):
    """Constant part of the LLR: LLR = ||s_hat||^2 s2 / (v (v + s2)) + offset."""
    s2, v, M = _iso_parts(tau_star, group, config)
    return -M * np.log1p(s2 / v)


def isotropic_detection(tau_star, group, config, threshold, on="llr") -> DetectionOperatingPoint:
    """P_M = P(||s_hat||^2 < l' | active), P_F = P(||s_hat||^2 >= l' | inactive).

    ``threshold`` is an LLR value by default; ``on="statistic"`` takes l' directly.
    """
    s2, v, M = _iso_parts(tau_star, group, config)
    if on == "llr":
        lp = v * (v + s2) / s2 * (threshold + M * np.log1p(s2 / v))
    elif on == "statistic":
        lp = float(threshold)
    else:
        raise ValueError("on must be 'llr' or 'statistic'")
    x = max(lp, 0.0)
    if np.isinf(x):
        p_md, p_fa = 1.0, 0.0
    else:
        p_md = float(reg_lower_gamma(M, x / (s2 + v)))
        p_fa = float(reg_upper_gamma(M, x / v))
    return DetectionOperatingPoint(float(threshold), float(lp), p_md, p_fa)


def isotropic_llr_midpoint(tau_star, group, config):
    """Average of the mean LLR under the active and the inactive hypothesis."""
    s2, v, M = _iso_parts(tau_star, group, config)
    x = s2 / v
    return 0.5 * M * ((x - np.log1p(x)) + (x / (1 + x) - np.log1p(x)))


def isotropic_ce_error(tau_star, group, config):
    """Per-antenna error of the posterior-mean channel estimate for an active user."""
    s2, v, _ = _iso_parts(tau_star, group, config)
    return 1.0 / (1.0 / v + 1.0 / s2)


# -- correlated groups ------------------------------------------------------------------------

def _corr_parts(xi_star, group, config):
    g = config.groups[group] if isinstance(group, (int, np.integer)) else group
    if isinstance(g, CorrelatedGroup):
        lam = g.eigvals
    else:
        lam = g.eigvals(config.n_antennas)
    xi = np.broadcast_to(np.asarray(xi_star, float), lam.shape)
    v = config.noise_var + xi / config.alpha
    return lam, v


def hypoexp_rates(xi_star, group, config) -> HypoExpRates:
    lam, v = _corr_parts(xi_star, group, config)
    w = v / lam
    return HypoExpRates(w, w + 1.0)


def correlated_detection(xi_star, group, config, threshold, on="llr") -> DetectionOperatingPoint:
    """Detection through the statistic T = sum_m |y_m|^2 lam_m / (v_m (v_m + lam_m)).

    Under activity T is hypoexponential with rates v/lam, otherwise with rates v/lam + 1.
    """
    lam, v = _corr_parts(xi_star, group, config)
    if on == "llr":
        lt = threshold + np.sum(np.log1p(lam / v))
    elif on == "statistic":
        lt = float(threshold)
    else:
        raise ValueError("on must be 'llr' or 'statistic'")
    rates = hypoexp_rates(xi_star, group, config)
    if np.isinf(lt) and lt > 0:
        return DetectionOperatingPoint(float(threshold), float(lt), 1.0, 0.0)
    p_d = float(hypoexp_survival(rates.active_rates, lt))
    p_fa = float(hypoexp_survival(rates.null_rates, lt))
    return DetectionOperatingPoint(float(threshold), float(lt), 1.0 - p_d, p_fa)


def correlated_llr_midpoint(xi_star, group, config):
    lam, v = _corr_parts(xi_star, group, config)
    x = lam / v
    return 0.5 * np.sum((x - np.log1p(x)) + (x / (1 + x) - np.log1p(x)))


@dataclass(frozen=True)
class CeError:
    per_mode: np.ndarray
    nmse: float


def correlated_ce_error(xi_star, group, config) -> CeError:
    """Per-eigenmode error (1/lam_m + 1/v_m)^{-1} and the group NMSE sum(e) / sum(lam)."""
    lam, v = _corr_parts(xi_star, group, config)
    with np.errstate(divide="ignore"):
        e = np.where(v == 0, 0.0, 1.0 / (1.0 / lam + 1.0 / np.where(v == 0, 1.0, v)))
    return CeError(e, float(e.sum() / lam.sum()))


# -- ROC export -------------------------------------------------------------------------------

def roc(detect, thresholds):
    """Operating points of ``detect(threshold)`` over ``thresholds``."""
    return [detect(float(t)) for t in thresholds]


def write_roc_csv(path, points, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if meta:
            fh.write("# " + json.dumps(meta, sort_keys=True, default=str) + "\n")
        w.writerow(["threshold", "transformed_threshold", "p_md", "p_fa"])
        for p in points:
            w.writerow([p.threshold, p.transformed_threshold, p.p_md, p.p_fa])
    return path
