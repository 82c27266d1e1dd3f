"""MMV-AMP recovery of the row-sparse S from Y = F S + W with row-wise MMSE denoisers.

Per iteration:
    R = X + F^H Z                                 pseudo-data, one noisy copy of each row
    X' = eta(R; Sigma)                            group-wise posterior mean
    Z' = Y - F X' + Z J^T,  J = (1/T) sum_n Cov_n Sigma^{-1}   (Onsager term)
    Sigma' = noise_var I + (1/T) sum_n Cov_n      (empirical state evolution)
Cov_n is the posterior covariance of row n; everything is handled in the group eigenbases.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import EquivalentNoise, llr, posterior_coords
from .errors import DataContractError, DivergedError
from .model import CorrelatedGroup, group_eigvals


@dataclass(frozen=True)
class AmpConfig:
    max_iters: int = 50
    damping: float = 1.0
    stop_tol: float = 1e-6
    noise_model: str | None = None      # "iso" | "eigen"; None picks iso for isotropic configs
    noise_update: str = "empirical"     # "empirical" | "residual" | "oracle"
    onsager: bool = True                # test hook

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if self.noise_model not in (None, "iso", "eigen"):
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        if self.noise_update not in ("empirical", "residual", "oracle"):
            raise ValueError(f"unknown noise update {self.noise_update!r}")


@dataclass(eq=False)
class AmpRunResult:
    """``mse_trace`` has one row per iteration: per-group MSE per entry, then their sum."""

    estimate: np.ndarray
    mse_trace: np.ndarray
    nmse_trace: np.ndarray
    tau_hat_trace: np.ndarray
    final_noise: EquivalentNoise
    iterations_run: int
    converged: bool
    pseudo_data: np.ndarray = field(repr=False)

    @property
    def final_nmse_db(self):
        return float(10 * np.log10(self.nmse_trace[-1]))

    def write_trace(self, path, n_groups):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "group", "mse"])
            for t, row in enumerate(self.mse_trace):
                for g in range(n_groups):
                    w.writerow([t, g, row[g]])
        return path


def _group_setup(config):
    M = config.n_antennas
    out = []
    for g in config.groups:
        U = g.basis(M) if isinstance(g, CorrelatedGroup) else None
        out.append((U, group_eigvals(g, M)))
    return out


def _to_coords(block, U):
    return block if U is None else block @ U.conj()


def _from_coords(coords, U):
    return coords if U is None else coords @ U.T


def _lift(mat, U):
    return mat if U is None else U @ mat @ U.conj().T


def _mode_noise(Sigma_err, setup, config, model):
    """Noise per group and mode from the antenna-domain error covariance."""
    nw, M = config.noise_var, config.n_antennas
    if model == "iso":
        v = nw + np.real(np.trace(Sigma_err)) / M
        return [np.full(lam.size, v) for _, lam in setup]
    out = []
    for U, _ in setup:
        d = np.real(np.diag(Sigma_err)) if U is None else np.real(np.einsum("mi,mn,ni->i", U.conj(), Sigma_err, U))
        out.append(nw + np.maximum(d, 0.0))
    return out


class _OracleSE:
    """Replica state evolution run alongside AMP to supply the noise."""

    def __init__(self, config, model):
        from .replica import isotropic as iso
        from .replica.correlated import CorrelatedModel

        self.config, self.model, self.iso = config, model, iso
        if config.is_isotropic:
            self.state = iso.prior_tau(config)
        else:
            self.models = [CorrelatedModel.for_group(config, g) for g in range(config.n_groups)]
            self.state = [m.prior_state() for m in self.models]

    def noise(self):
        cfg = self.config
        if cfg.is_isotropic:
            v = cfg.noise_var + self.state / cfg.alpha
            return [np.full(cfg.n_antennas, v) for _ in cfg.groups]
        return [m.noise(x) for m, x in zip(self.models, self.state)]

    def advance(self):
        if self.config.is_isotropic:
            self.state = float(self.iso.se_map_isotropic(self.state, self.config))
        else:
            self.state = [m.se_map(x) for m, x in zip(self.models, self.state)]


def run_amp(scene, config, amp_cfg: AmpConfig = AmpConfig()) -> AmpRunResult:
    F, Y, S = scene.pilots, scene.received, scene.signal
    T, N, M, K = config.pilot_length, config.n_users, config.n_antennas, config.users_per_group
    if F.shape != (T, N) or Y.shape != (T, M) or S.shape != (N, M):
        raise DataContractError(f"scene shapes {F.shape}, {Y.shape} do not match the config (T={T}, N={N}, M={M})")
    model = amp_cfg.noise_model or ("iso" if config.is_isotropic else "eigen")
    setup = _group_setup(config)
    rho = config.activity_prob
    blocks = [slice(g * K, (g + 1) * K) for g in range(config.n_groups)]

    oracle = _OracleSE(config, model) if amp_cfg.noise_update == "oracle" else None
    Sigma0 = sum(_lift(np.diag(K * rho * lam).astype(complex), U) for U, lam in setup) / T
    noise = oracle.noise() if oracle else _mode_noise(Sigma0, setup, config, model)

    X = np.zeros((N, M), dtype=complex)
    Z = Y.copy()
    s_energy = [np.sum(np.abs(S[b]) ** 2) for b in blocks]
    total_energy = max(sum(s_energy), np.finfo(float).tiny)
    mse_rows, nmse_rows, tau_rows = [], [], []
    prev_est, converged, R = None, False, None
    for it in range(amp_cfg.max_iters):
        R = X + F.conj().T @ Z
        X_new = np.empty_like(X)
        Sigma_err = np.zeros((M, M), dtype=complex)
        J = np.zeros((M, M), dtype=complex)
        for (U, lam), b, v in zip(setup, blocks, noise):
            y = _to_coords(R[b], U)
            mean, rho_hat, _ = posterior_coords(y, lam, v, rho)
            X_new[b] = _from_coords(mean, U)
            # sum_n Cov_n in coordinates: diagonal active-branch part plus rank-one mixture parts
            w = (lam / (lam + v)) * y
            d = rho_hat * (1 - rho_hat)
            C = np.diag(np.full(lam.size, rho_hat.sum()) * lam * v / (lam + v)).astype(complex)
            C += (w * d[:, None]).T @ w.conj()
            Sigma_err += _lift(C, U)
            J += _lift(C / v[None, :], U)
        Sigma_err /= T
        J /= T
        X = amp_cfg.damping * X_new + (1 - amp_cfg.damping) * X
        Z_next = Y - F @ X
        if amp_cfg.onsager:
            Z_next += Z @ J.T
        Z = Z_next
        used_noise = noise
        if oracle:
            oracle.advance()
            noise = oracle.noise()
        elif amp_cfg.noise_update == "residual":
            noise = _mode_noise(Z.T @ Z.conj() / T - config.noise_var * np.eye(M), setup, config, model)
        else:
            noise = _mode_noise(Sigma_err, setup, config, model)

        err = [np.sum(np.abs(X[b] - S[b]) ** 2) / (K * M) for b in blocks]
        mse_rows.append(err + [sum(err)])
        nmse_rows.append(sum(e * K * M for e in err) / total_energy)
        est = np.real(np.trace(Sigma_err)) * config.alpha / M
        tau_rows.append(est)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z)) and np.isfinite(est)):
            raise DivergedError(f"AMP diverged at iteration {it}", np.array(mse_rows))
        if prev_est is not None and abs(est - prev_est) <= amp_cfg.stop_tol * max(abs(est), 1e-300):
            converged = True
            break
        prev_est = est

    final = EquivalentNoise.eigen(used_noise) if model == "eigen" or not config.is_isotropic \
        else EquivalentNoise.iso(float(used_noise[0][0]))
    return AmpRunResult(X, np.array(mse_rows), np.array(nmse_rows), np.array(tau_rows), final,
                        len(mse_rows), converged, R)


@dataclass(frozen=True)
class DetectionCounts:
    p_md: float
    p_fa: float
    n_active: int
    n_inactive: int

    @property
    def se_md(self):
        return float(np.sqrt(self.p_md * (1 - self.p_md) / self.n_active)) if self.n_active else float("nan")

    @property
    def se_fa(self):
        return float(np.sqrt(self.p_fa * (1 - self.p_fa) / self.n_inactive)) if self.n_inactive else float("nan")


def group_llrs(result: AmpRunResult, config):
    """Per-user LLR of the final pseudo-data under the final noise, as a list per group."""
    K, M = config.users_per_group, config.n_antennas
    out = []
    for g, (U, lam) in enumerate(_group_setup(config)):
        y = _to_coords(result.pseudo_data[g * K:(g + 1) * K], U)
        v = result.final_noise.for_group(config.groups[g], M, g)
        out.append(llr(y, lam, v))
    return out


def empirical_detection(result: AmpRunResult, scene, config, thresholds) -> list:
    """Per-group error rates of the rule  LLR >= l_g  against the true activity."""
    th = np.broadcast_to(np.asarray(thresholds, float), (config.n_groups,))
    K = config.users_per_group
    out = []
    for g, l in enumerate(group_llrs(result, config)):
        act = scene.activity[g * K:(g + 1) * K].astype(bool)
        det = l >= th[g]
        na, ni = int(act.sum()), int((~act).sum())
        p_md = float(np.mean(~det[act])) if na else float("nan")
        p_fa = float(np.mean(det[~act])) if ni else float("nan")
        out.append(DetectionCounts(p_md, p_fa, na, ni))
    return out


def empirical_ce_error(result: AmpRunResult, scene, config, threshold=None) -> list:
    """Per-group NMSE of the posterior-mean channel estimate on active users.

    With ``threshold`` only users that are active and detected count; otherwise detection is
    taken as perfect. Groups without such users give None.
    """
    K, M = config.users_per_group, config.n_antennas
    llrs = group_llrs(result, config) if threshold is not None else None
    th = None if threshold is None else np.broadcast_to(np.asarray(threshold, float), (config.n_groups,))
    out = []
    for g, (U, lam) in enumerate(_group_setup(config)):
        b = slice(g * K, (g + 1) * K)
        keep = scene.activity[b].astype(bool)
        if llrs is not None:
            keep &= llrs[g] >= th[g]
        if not keep.any():
            out.append(None)
            continue
        v = result.final_noise.for_group(config.groups[g], M, g)
        y = _to_coords(result.pseudo_data[b][keep], U)
        h_hat = _from_coords((lam / (lam + v)) * y, U)
        h = scene.channels[b][keep]
        out.append(float(np.sum(np.abs(h - h_hat) ** 2) / np.sum(np.abs(h) ** 2)))
    return out
