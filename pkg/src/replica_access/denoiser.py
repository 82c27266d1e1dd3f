"""Bernoulli-Gaussian posterior for the decoupled per-user channel  s_hat = s + Sigma^{1/2} z.

Everything is computed in the group's eigen-coordinates ``y = U^H s_hat`` where both the prior
covariance and the equivalent noise are diagonal. Isotropic groups use the antenna basis.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .model import CorrelatedGroup, IsotropicGroup, group_eigvals


@dataclass(frozen=True, eq=False)
class EquivalentNoise:
    """Noise of the decoupled model.

    kind ``"iso"``: one scalar for every antenna and group.
    kind ``"diagonal"``: one value per antenna (isotropic groups only).
    kind ``"eigen"``: per-group arrays in the group's eigenbasis, ordered like its eigenvalues.
    """

    kind: str
    values: object

    @classmethod
    def iso(cls, value: float) -> "EquivalentNoise":
        if not value > 0:
            raise ValueError("noise must be positive")
        return cls("iso", float(value))

    @classmethod
    def diagonal(cls, values) -> "EquivalentNoise":
        v = np.asarray(values, dtype=float)
        if np.any(v <= 0):
            raise ValueError("noise must be positive")
        return cls("diagonal", v)

    @classmethod
    def eigen(cls, per_group) -> "EquivalentNoise":
        arrs = tuple(np.asarray(v, dtype=float) for v in per_group)
        if any(np.any(a <= 0) for a in arrs):
            raise ValueError("noise must be positive")
        return cls("eigen", arrs)

    def for_group(self, group, n_antennas: int, index: int = 0) -> np.ndarray:
        """Per-mode noise aligned with ``group``'s eigenbasis."""
        r = group.rank(n_antennas)
        if self.kind == "iso":
            return np.full(r, self.values)
        if self.kind == "diagonal":
            if not isinstance(group, IsotropicGroup):
                raise ValueError("antenna-diagonal noise is not diagonal in a correlated group's basis")
            if self.values.size != n_antennas:
                raise ValueError("diagonal noise length must equal n_antennas")
            return self.values
        v = self.values[index] if len(self.values) > 1 else self.values[0]
        if v.size == 1 and r > 1:
            return np.full(r, float(v[0]))
        if v.size != r:
            raise ValueError(f"eigen noise for group {index} has {v.size} entries, expected {r}")
        return v

    def min_value(self) -> float:
        if self.kind == "iso":
            return self.values
        if self.kind == "diagonal":
            return float(self.values.min())
        return float(min(v.min() for v in self.values))


@dataclass(frozen=True, eq=False)
class DenoiseOutput:
    """Posterior summaries; for a batch of observations every field gains a leading axis.

    ``error_cov_diag`` is the conditional second moment of ``s - mean`` per eigenmode (per
    antenna for isotropic groups).
    """

    mean: np.ndarray
    activity_posterior: np.ndarray
    error_cov_diag: np.ndarray

    @property
    def error_trace(self):
        return np.sum(self.error_cov_diag, axis=-1)


def log_odds(y, lam, v, rho):
    """log P(active | y) - log P(inactive | y) for eigen-coordinates ``y`` (..., r)."""
    y = np.asarray(y)
    with np.errstate(divide="ignore"):
        prior = np.log(rho) - np.log1p(-rho) if 0 < rho < 1 else (np.inf if rho >= 1 else -np.inf)
    return prior + llr(y, lam, v)


def llr(y, lam, v):
    """Log-likelihood ratio log N(y; 0, lam + v) - log N(y; 0, v), summed over modes."""
    energy = np.abs(y) ** 2
    return np.sum(energy * (lam / (v * (v + lam))) - np.log1p(lam / v), axis=-1)


def posterior_coords(y, lam, v, rho):
    """Posterior mean, activity probability and error second moment in eigen-coordinates."""
    y = np.asarray(y, dtype=complex)
    lam = np.asarray(lam, dtype=float)
    v = np.asarray(v, dtype=float)
    if rho <= 0:
        zero = np.zeros(y.shape[:-1])
        return np.zeros_like(y), zero, np.zeros(y.shape, dtype=float)
    rho_hat = special.expit(log_odds(y, lam, v, rho))
    c = lam / (lam + v)
    wiener = c * y
    mean = rho_hat[..., None] * wiener
    # mixture of (active: N(wiener, lam v/(lam+v))) and (inactive: point mass at 0)
    var = rho_hat[..., None] * (lam * v / (lam + v)) + (rho_hat * (1 - rho_hat))[..., None] * np.abs(wiener) ** 2
    return mean, rho_hat, var


def _coords(obs, group, n_antennas):
    U = group.basis(n_antennas)
    return obs if U is None else obs @ U.conj()


def _to_antenna(coords, group, n_antennas):
    U = group.basis(n_antennas)
    return coords if U is None else coords @ U.T


def _check(obs, n_antennas):
    obs = np.asarray(obs, dtype=complex)
    if obs.shape[-1] != n_antennas:
        raise ValueError(f"observation has {obs.shape[-1]} antennas, expected {n_antennas}")
    return obs


def _n_antennas(obs, group):
    if isinstance(group, CorrelatedGroup):
        return group.eigvecs.shape[0]
    return np.asarray(obs).shape[-1]


def activity_posterior(obs, group, noise: EquivalentNoise, rho: float, group_index: int = 0):
    """P(active | s_hat) for one observation (length M) or a batch (n, M)."""
    M = _n_antennas(obs, group)
    obs = _check(obs, M)
    lam = group_eigvals(group, M)
    v = noise.for_group(group, M, group_index)
    if rho <= 0:
        return np.zeros(obs.shape[:-1])[()] * 1.0
    if rho >= 1:
        return np.ones(obs.shape[:-1])[()] * 1.0
    return special.expit(log_odds(_coords(obs, group, M), lam, v, rho))[()]


def mmse_denoise(obs, group, noise: EquivalentNoise, rho: float, group_index: int = 0) -> DenoiseOutput:
    """Posterior mean E[s | s_hat]; components outside the group's subspace are annihilated."""
    M = _n_antennas(obs, group)
    obs = _check(obs, M)
    lam = group_eigvals(group, M)
    v = noise.for_group(group, M, group_index)
    mean_c, rho_hat, var = posterior_coords(_coords(obs, group, M), lam, v, rho)
    return DenoiseOutput(_to_antenna(mean_c, group, M), rho_hat[()], var)


def linear_mmse(obs, group, noise: EquivalentNoise, rho: float, group_index: int = 0):
    """Wiener filter rho C (rho C + Sigma)^{-1} s_hat, the best linear estimator."""
    M = _n_antennas(obs, group)
    obs = _check(obs, M)
    lam = group_eigvals(group, M)
    v = noise.for_group(group, M, group_index)
    y = _coords(obs, group, M)
    return _to_antenna(rho * lam / (rho * lam + v) * y, group, M)


@dataclass(frozen=True)
class MseEstimate:
    mse: np.ndarray
    stderr: np.ndarray


def _draw_decoupled(rng, n, lam, v, rho):
    r = lam.size
    active = rng.random(n) < rho
    s = np.sqrt(lam / 2) * (rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r)))
    s *= active[:, None]
    z = np.sqrt(v / 2) * (rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r)))
    return s, s + z, active


def mse_of_denoiser(group, noise: EquivalentNoise, rho: float, n_samples: int, seed=0,
                    n_antennas: int | None = None, group_index: int = 0, workers: int = 1,
                    chunk: int = 200_000) -> MseEstimate:
    """Monte Carlo per-eigenmode MSE of the MMSE denoiser, with standard errors.

    Samples are split into fixed chunks with seeds spawned from ``seed``; chunk results are
    reduced in chunk order, so the estimate does not depend on ``workers``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    M = n_antennas if n_antennas is not None else (
        group.eigvecs.shape[0] if isinstance(group, CorrelatedGroup) else 1)
    lam = group_eigvals(group, M)
    v = noise.for_group(group, M, group_index)
    sizes = [min(chunk, n_samples - i) for i in range(0, n_samples, chunk)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def work(k):
        rng = np.random.default_rng(seeds[k])
        s, y, _ = _draw_decoupled(rng, sizes[k], lam, v, rho)
        mean, _, _ = posterior_coords(y, lam, v, rho)
        err = np.abs(mean - s) ** 2
        return err.sum(axis=0), (err**2).sum(axis=0)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(work, range(len(sizes))))
    else:
        parts = [work(k) for k in range(len(sizes))]
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mse = s1 / n_samples
    var = np.maximum(s2 / n_samples - mse**2, 0.0)
    return MseEstimate(mse, np.sqrt(var / max(n_samples - 1, 1)))
