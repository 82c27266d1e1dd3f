"""Scalar free entropy and state evolution for isotropic Rayleigh groups.

State: tau = sum over groups of the per-antenna MSE, equivalent noise v = noise_var + tau / alpha.
The M-dimensional Gaussian integrals depend on ||z||^2 only and become Gamma(M, 1) expectations.
"""

from __future__ import annotations

import numpy as np

from ..errors import NotConvergedError
from .quadrature import bump_term, gamma_expect, sp_term


def _params(config, alpha=None, noise_var=None):
    s2 = config.variances()
    return (s2, config.n_antennas, config.alpha if alpha is None else alpha,
            config.activity_prob, config.noise_var if noise_var is None else noise_var)


def equivalent_noise(tau, config):
    return config.noise_var + np.asarray(tau, float) / config.alpha


def phi_isotropic(tau, config, nodes=64, method="panel", noise_var=None):
    """Free entropy Phi(tau); vectorised over ``tau``."""
    s2, M, alpha, rho, nw = _params(config, noise_var=noise_var)
    tau = np.asarray(tau, float)
    if np.any(tau < 0):
        raise ValueError("tau must be nonnegative")
    t = np.atleast_1d(tau)[:, None]
    v = nw + t / alpha
    out = -alpha * M * (nw / v[:, 0] + np.log(v[:, 0]))
    lr = np.log(v / (v + s2))
    xa, xb = s2 / v, s2 / (s2 + v)
    g = M * (1 - rho) * s2 / (s2 + v)
    if rho <= 0:
        # log(exp(-x u)) integrates to -x M
        g = g - M * xb
    elif rho >= 1:
        g = g + M * lr
    else:
        b = np.log((1 - rho) / rho) - M * lr
        base = np.log(rho) + M * lr
        ea = gamma_expect(sp_term, b, xa, M, nodes, method)
        eb = gamma_expect(sp_term, b, xb, M, nodes, method)
        g = g + rho * (base + ea) + (1 - rho) * (base + eb)
    out = out + g.sum(axis=1)
    return out.reshape(tau.shape)


def group_mse(tau, config, nodes=64, method="panel"):
    """Per-antenna MSE of each group's MMSE denoiser at noise v(tau); shape tau.shape + (G,)."""
    s2, M, alpha, rho, nw = _params(config)
    tau = np.asarray(tau, float)
    t = np.atleast_1d(tau)[:, None]
    v = nw + t / alpha
    vpost = s2 * v / (s2 + v)
    if rho <= 0:
        mse = np.zeros(np.broadcast_shapes(v.shape, s2.shape))
    elif rho >= 1:
        mse = vpost
    else:
        b = np.log((1 - rho) / rho) + M * np.log1p(s2 / v)
        c = s2 / (s2 + v)
        ea = gamma_expect(bump_term, b, s2 / v, M, nodes, method)
        eb = gamma_expect(bump_term, b, s2 / (s2 + v), M, nodes, method)
        mse = rho * vpost + c**2 / M * (rho * (s2 + v) * ea + (1 - rho) * v * eb)
    return mse.reshape(tau.shape + (s2.size,))


def se_map_isotropic(tau, config, nodes=64, method="panel"):
    """One state-evolution step tau -> sum_g mse_g(tau)."""
    return group_mse(tau, config, nodes, method).sum(axis=-1)


def dphi_isotropic(tau, config, nodes=64, method="panel"):
    """Analytic dPhi/dtau = M (f(tau) - tau) / (alpha v^2)."""
    tau = np.asarray(tau, float)
    v = equivalent_noise(tau, config)
    return config.n_antennas * (se_map_isotropic(tau, config, nodes, method) - tau) / (config.alpha * v**2)


def prior_tau(config):
    return config.activity_prob * float(np.sum(config.variances()))


# -- large-M limit ----------------------------------------------------------------------------

def phi_asymptotic(tau, config):
    s2, _, alpha, rho, nw = _params(config)
    tau = np.asarray(tau, float)
    v = nw + tau / alpha
    val = -alpha * nw / v - alpha * np.log(v) - rho * np.sum(np.log1p(s2 / v[..., None]), axis=-1)
    return val


def dphi_asymptotic(tau, config):
    s2, _, alpha, rho, nw = _params(config)
    tau = np.asarray(tau, float)
    v = nw + tau / alpha
    return (rho * np.sum(s2 / (v[..., None] + s2), axis=-1) - tau / v) / (tau + alpha * nw)


def se_map_asymptotic(tau, config):
    s2, _, alpha, rho, nw = _params(config)
    v = nw + np.asarray(tau, float)[..., None] / alpha
    return rho * np.sum(s2 * v / (s2 + v), axis=-1)


def fixed_point_asymptotic(config, rtol=1e-12, max_iters=10_000):
    """Unique root of tau = rho sum_g (1/s2_g + 1/v(tau))^{-1}.

    The map is increasing and concave, so Newton steps on f(tau) - tau started from the prior
    trace stay to the right of the root and decrease monotonically onto it.
    """
    s2, _, alpha, rho, nw = _params(config)
    if rho <= 0:
        return 0.0
    tau = rho * float(np.sum(s2))
    trace = [tau]
    for _ in range(max_iters):
        v = nw + tau / alpha
        g = rho * np.sum(s2 * v / (s2 + v)) - tau
        dg = rho * np.sum((s2 / (s2 + v)) ** 2) / alpha - 1.0
        if dg >= 0:  # flat map near the root: fall back to a plain fixed-point step
            new = tau + g
        else:
            new = tau - g / dg
        new = min(max(new, 0.0), tau)
        trace.append(new)
        if abs(new - tau) <= rtol * max(new, 1e-300) or new == 0.0:
            return float(new)
        tau = new
    raise NotConvergedError("asymptotic fixed point did not converge", trace)


def iterate_isotropic(config, tau0=None, tol=1e-6, patience=3, max_iters=5000, nodes=64,
                      method="panel"):
    """SE iteration from ``tau0`` (default: prior trace); returns (tau, trace, converged)."""
    tau = prior_tau(config) if tau0 is None else float(tau0)
    trace = [tau]
    if config.activity_prob <= 0:
        return 0.0, [tau, 0.0], True
    calm = 0
    for _ in range(max_iters):
        new = float(se_map_isotropic(tau, config, nodes, method))
        trace.append(new)
        change = abs(new - tau) / max(abs(new), 1e-300)
        tau = new
        calm = calm + 1 if change < tol else 0
        if calm >= patience:
            return tau, trace, True
    return tau, trace, False


def nmse_db(tau, config):
    """Pooled NMSE of a state tau relative to the prior trace."""
    with np.errstate(divide="ignore"):
        return float(10 * np.log10(np.asarray(tau) / prior_tau(config)))


__all__ = ["phi_isotropic", "group_mse", "se_map_isotropic", "dphi_isotropic", "phi_asymptotic",
           "dphi_asymptotic", "se_map_asymptotic", "fixed_point_asymptotic", "iterate_isotropic",
           "prior_tau", "equivalent_noise", "nmse_db"]
