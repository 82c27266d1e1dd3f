"""Per-group free entropy and state evolution for low-rank correlated groups.

State: xi (length r), the MSE per eigenmode; mode noise v_m = noise_var + xi_m / alpha.
Rank-one groups use the exact gamma quadrature; higher ranks use Monte Carlo over
u_m = |z_m|^2 ~ Exp(1) with draws shared by every evaluation (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import NotConvergedError
from ..model import group_eigvals
from .quadrature import bump_term, gamma_expect, sp_term


@dataclass(frozen=True)
class MonteCarlo:
    samples: int = 40_000
    seed: int = 0

    def __post_init__(self):
        if self.samples < 10_000:
            raise ValueError("Monte Carlo needs at least 1e4 samples")


class CorrelatedModel:
    """Evaluator bound to one group; draws are fixed at construction."""

    def __init__(self, eigvals, noise_var, alpha, rho, mc: MonteCarlo = MonteCarlo(), nodes=64):
        self.lam = np.asarray(eigvals, float)
        self.nw, self.alpha, self.rho = float(noise_var), float(alpha), float(rho)
        self.mc, self.nodes = mc, nodes
        self.exact = self.lam.size == 1
        if not self.exact:
            rng = np.random.default_rng(mc.seed)
            self.u = rng.standard_exponential((mc.samples, self.lam.size))

    @classmethod
    def for_group(cls, config, group_index=0, mc: MonteCarlo = MonteCarlo(), nodes=64):
        g = config.groups[group_index]
        return cls(group_eigvals(g, config.n_antennas), config.noise_var, config.alpha,
                   config.activity_prob, mc, nodes)

    def prior_state(self):
        return self.rho * self.lam

    def noise(self, xi):
        return self.nw + np.asarray(xi, float) / self.alpha

    def _bias(self, v):
        with np.errstate(divide="ignore"):
            return np.log1p(-self.rho) - np.log(self.rho) + np.sum(np.log1p(self.lam / v))

    def se_map(self, xi):
        """Per-mode MSE of the MMSE denoiser at noise v(xi)."""
        xi = np.asarray(xi, float)
        lam, rho = self.lam, self.rho
        v = self.noise(xi)
        vpost = lam * v / (lam + v)
        if rho <= 0:
            return np.zeros_like(lam)
        if rho >= 1:
            return vpost
        c = lam / (lam + v)
        b = self._bias(v)
        if self.exact:
            ea = gamma_expect(bump_term, b, lam / v, 1, self.nodes)
            eb = gamma_expect(bump_term, b, lam / (lam + v), 1, self.nodes)
        else:
            xa, xb = lam / v, lam / (lam + v)
            ta, tb = self.u @ xa - b, self.u @ xb - b
            wa = special.expit(ta) * special.expit(-ta)
            wb = special.expit(tb) * special.expit(-tb)
            ea = (wa[:, None] * self.u).mean(axis=0)
            eb = (wb[:, None] * self.u).mean(axis=0)
        return rho * vpost + c**2 * (rho * (lam + v) * ea + (1 - rho) * v * eb)

    def phi(self, xi):
        """(value, standard error) of the group free entropy at ``xi``."""
        xi = np.asarray(xi, float)
        if np.any(xi < 0):
            raise ValueError("xi must be nonnegative")
        lam, rho, alpha, nw = self.lam, self.rho, self.alpha, self.nw
        v = self.noise(xi)
        lr = np.sum(np.log(v / (v + lam)))
        xa, xb = lam / v, lam / (lam + v)
        val = -alpha * np.sum(nw / v + np.log(v)) + np.sum((1 - rho) * lam / (lam + v))
        if rho <= 0:
            return float(val - np.sum(xb)), 0.0
        if rho >= 1:
            return float(val + lr), 0.0
        b = np.log((1 - rho) / rho) - lr
        base = np.log(rho) + lr
        if self.exact:
            ea = gamma_expect(sp_term, b, xa[0], 1, self.nodes)
            eb = gamma_expect(sp_term, b, xb[0], 1, self.nodes)
            return float(val + base + rho * ea + (1 - rho) * eb), 0.0
        fa = np.logaddexp(0.0, b - self.u @ xa)
        fb = np.logaddexp(0.0, b - self.u @ xb)
        f = rho * fa + (1 - rho) * fb
        return float(val + base + f.mean()), float(f.std(ddof=1) / np.sqrt(f.size))

    def _integrand(self, xi):
        v = self.noise(xi)
        lr = np.sum(np.log(v / (v + self.lam)))
        b = np.log((1 - self.rho) / self.rho) - lr
        fa = np.logaddexp(0.0, b - self.u @ (self.lam / v))
        fb = np.logaddexp(0.0, b - self.u @ (self.lam / (self.lam + v)))
        return self.rho * fa + (1 - self.rho) * fb

    def phi_difference(self, xi1, xi2):
        """Phi(xi1) - Phi(xi2) and its paired standard error."""
        d = self.phi(xi1)[0] - self.phi(xi2)[0]
        if self.exact or not 0 < self.rho < 1:
            return d, 0.0
        diff = self._integrand(xi1) - self._integrand(xi2)
        return d, float(diff.std(ddof=1) / np.sqrt(diff.size))

    def iterate(self, xi0=None, tol=1e-6, patience=3, max_iters=20_000):
        """SE iteration; returns (xi, trace of sum(xi), converged)."""
        xi = self.prior_state() if xi0 is None else np.asarray(xi0, float).copy()
        trace = [float(xi.sum())]
        if self.rho <= 0:
            xi = np.zeros_like(self.lam)
            trace.append(0.0)
            return xi, trace, True
        calm = 0
        for _ in range(max_iters):
            new = self.se_map(xi)
            trace.append(float(new.sum()))
            change = np.max(np.abs(new - xi) / np.maximum(np.abs(new), 1e-300))
            xi = new
            calm = calm + 1 if change < tol else 0
            if calm >= patience:
                return xi, trace, True
        return xi, trace, False

    def nmse_db(self, xi):
        with np.errstate(divide="ignore"):
            return float(10 * np.log10(np.sum(xi) / np.sum(self.prior_state())))


def phi_correlated(xi, config, group_index=0, mc: MonteCarlo = MonteCarlo(), nodes=64):
    """Free entropy of one correlated group at ``xi``; returns (value, standard error)."""
    return CorrelatedModel.for_group(config, group_index, mc, nodes).phi(xi)


def se_map_correlated(xi, config, group_index=0, mc: MonteCarlo = MonteCarlo(), nodes=64):
    return CorrelatedModel.for_group(config, group_index, mc, nodes).se_map(xi)


def iterate_correlated(model: CorrelatedModel, xi0=None, **kw):
    xi, trace, ok = model.iterate(xi0, **kw)
    if not ok:
        raise NotConvergedError("correlated state evolution did not converge", trace)
    return xi, trace
