"""Scenario configuration, channel covariances and synthetic scenes for grouped massive access.

Users are ordered group-major: user ``n`` belongs to group ``n // users_per_group``.
Signals are stored row-wise, so ``S[n] = a_n * h_n^T`` and ``Y = F @ S + W``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

# Drawn once from U[0.1, 1] km (numpy default_rng(164)), sorted and rounded.
REFERENCE_DISTANCES_KM = (0.166, 0.245, 0.257, 0.420, 0.430)
# Single-group distance used for the spatially correlated reference setting.
CORRELATED_REFERENCE_DISTANCE_KM = 0.5


class CovarianceQuadratureError(RuntimeError):
    """Raised when the angular integral of the local-scattering model does not converge."""


def pathloss_db(distance_km):
    """Large-scale path loss in dB for a distance in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError(f"distance must be positive, got {distance_km!r}")
    out = -128.1 - 36.7 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def noise_variance(bandwidth_hz: float, psd_dbm_per_hz: float = -169.0) -> float:
    """AWGN power in watts over ``bandwidth_hz`` for a PSD given in dBm/Hz."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return 10 ** ((psd_dbm_per_hz - 30.0) / 10.0) * bandwidth_hz


def dbm_to_watt(p_dbm):
    return 10 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def group_gain(pt_dbm: float, distance_km: float) -> float:
    """Per-antenna channel power P_t * PL_g in linear scale."""
    return float(dbm_to_watt(pt_dbm) * 10 ** (pathloss_db(distance_km) / 10.0))


def draw_distances(n_groups: int, seed: int, low: float = 0.1, high: float = 1.0) -> tuple:
    rng = np.random.default_rng(seed)
    return tuple(float(d) for d in np.sort(rng.uniform(low, high, n_groups)))


@dataclass(frozen=True)
class IsotropicGroup:
    """Rayleigh group, h ~ CN(0, variance * I)."""

    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("isotropic variance must be positive")

    def rank(self, n_antennas: int) -> int:
        return n_antennas

    def basis(self, n_antennas: int):
        return None

    def eigvals(self, n_antennas: int) -> np.ndarray:
        return np.full(n_antennas, float(self.variance))

    def covariance(self, n_antennas: int) -> np.ndarray:
        return self.variance * np.eye(n_antennas)


@dataclass(frozen=True, eq=False)
class CorrelatedGroup:
    """Low-rank group, h ~ CN(0, U diag(eigvals) U^H) with orthonormal U (M x r)."""

    eigvecs: np.ndarray
    eigvals: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.eigvecs, dtype=complex)
        lam = np.asarray(self.eigvals, dtype=float)
        if U.ndim != 2 or U.shape[1] != lam.size:
            raise ValueError("eigvecs must be M x r with r == len(eigvals)")
        if U.shape[1] > U.shape[0]:
            raise ValueError("rank cannot exceed the number of antennas")
        if np.any(lam <= 0):
            raise ValueError("eigenvalues must be positive")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be in descending order")
        if np.max(np.abs(U.conj().T @ U - np.eye(lam.size))) > 1e-10:
            raise ValueError("eigvecs must be orthonormal")
        U.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "eigvecs", U)
        object.__setattr__(self, "eigvals", lam)

    def rank(self, n_antennas: int | None = None) -> int:
        return self.eigvals.size

    def basis(self, n_antennas: int | None = None) -> np.ndarray:
        return self.eigvecs

    def covariance(self, n_antennas: int | None = None) -> np.ndarray:
        return (self.eigvecs * self.eigvals) @ self.eigvecs.conj().T


GroupChannelModel = Union[IsotropicGroup, CorrelatedGroup]


def group_eigvals(group: GroupChannelModel, n_antennas: int) -> np.ndarray:
    if isinstance(group, IsotropicGroup):
        return group.eigvals(n_antennas)
    return group.eigvals


def _wrapped_normal_pdf(theta, mu, sd):
    """Density of a normal angle wrapped onto [mu - pi, mu + pi)."""
    if sd < 1.0:
        k = np.arange(-8, 9)
        z = (theta[:, None] - mu + 2 * np.pi * k) / sd
        return np.exp(-0.5 * z**2).sum(axis=1) / (sd * np.sqrt(2 * np.pi))
    # Fourier form converges fast for wide spreads.
    k = np.arange(1, int(np.ceil(12.0 / sd)) + 2)
    series = np.exp(-0.5 * (k * sd) ** 2)[None, :] * np.cos(k[None, :] * (theta[:, None] - mu))
    return (1 + 2 * series.sum(axis=1)) / (2 * np.pi)


def local_scattering_covariance(n_antennas, center_angle_deg, angular_spread_deg, gain=1.0,
                                tol=1e-12, max_points=1 << 21):
    """Half-wavelength ULA covariance with a Gaussian angular spread around the center angle.

    The periodic angular integral uses the trapezoid rule, doubling the node count until
    two successive estimates agree to ``tol``.
    """
    if n_antennas < 1:
        raise ValueError("need at least one antenna")
    if not angular_spread_deg > 0:
        raise ValueError("angular spread must be positive")
    mu, sd = np.deg2rad(center_angle_deg), np.deg2rad(angular_spread_deg)
    lags = np.arange(n_antennas)
    n = 4096
    prev = None
    while n <= max_points:
        theta = mu + np.linspace(-np.pi, np.pi, n, endpoint=False)
        w = _wrapped_normal_pdf(theta, mu, sd) * (2 * np.pi / n)
        r = np.exp(1j * np.pi * np.outer(lags, np.sin(theta))) @ w
        if prev is not None and np.max(np.abs(r - prev)) < tol:
            break
        prev = r
        n *= 2
    else:
        raise CovarianceQuadratureError(
            f"angular quadrature did not converge: M={n_antennas}, center={center_angle_deg}, "
            f"spread={angular_spread_deg}, last change={np.max(np.abs(r - prev)):.3e}")
    idx = lags[:, None] - lags[None, :]
    R = np.where(idx >= 0, r[np.abs(idx)], np.conj(r[np.abs(idx)]))
    return gain * R


def build_correlated_covariance(n_antennas, center_angle_deg, angular_spread_deg, gain=1.0,
                                rank_energy_fraction=0.999) -> CorrelatedGroup:
    """Eigen-truncated local-scattering covariance as a CorrelatedGroup.

    Keeps the smallest rank capturing ``rank_energy_fraction`` of the trace and rescales the
    kept eigenvalues so that they sum to ``gain * n_antennas``.
    """
    if not 0 < rank_energy_fraction <= 1:
        raise ValueError("rank_energy_fraction must lie in (0, 1]")
    R = local_scattering_covariance(n_antennas, center_angle_deg, angular_spread_deg, 1.0)
    w, V = np.linalg.eigh(R)
    w, V = w[::-1], V[:, ::-1]
    w = np.clip(w, 0.0, None)
    energy = np.cumsum(w) / w.sum()
    r = int(min(np.searchsorted(energy, rank_energy_fraction - 1e-12) + 1, n_antennas))
    lam = w[:r] * (gain * n_antennas / w[:r].sum())
    # eigh may return tiny positive eigenvalues that are not strictly ordered after clipping
    lam = np.maximum(np.sort(lam)[::-1], np.finfo(float).tiny)
    U, _ = np.linalg.qr(V[:, :r])
    U = U * np.sign(np.real(np.diag(U.conj().T @ V[:, :r])))  # keep eigenvector phases
    return CorrelatedGroup(U, lam)


def orthogonal_groups(n_antennas, eigvals_per_group: Sequence[Sequence[float]], seed=0,
                      overlap: float = 0.0) -> list:
    """Correlated groups on disjoint column blocks of a random unitary matrix.

    With ``overlap > 0`` the first basis vector of each later group is tilted towards the
    first group's leading vector, so that ||U_0^H U_g|| equals ``overlap`` (negative controls).
    """
    ranks = [len(e) for e in eigvals_per_group]
    if sum(ranks) > n_antennas:
        raise ValueError("total rank exceeds the number of antennas")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_antennas, n_antennas)) + 1j * rng.standard_normal((n_antennas, n_antennas))
    Q, _ = np.linalg.qr(A)
    groups, start = [], 0
    for g, lam in enumerate(eigvals_per_group):
        U = Q[:, start:start + len(lam)].copy()
        if overlap and g > 0:
            u0 = Q[:, 0]
            U[:, 0] = overlap * u0 + np.sqrt(1 - overlap**2) * U[:, 0]
        groups.append(CorrelatedGroup(U, np.sort(np.asarray(lam, float))[::-1]))
        start += len(lam)
    return groups


def max_subspace_overlap(groups, n_antennas) -> float:
    """Largest spectral norm ||U_g^H U_j|| over pairs of distinct groups (0 for one group)."""
    worst = 0.0
    for g in range(len(groups)):
        for j in range(g + 1, len(groups)):
            Ug = groups[g].basis(n_antennas)
            Uj = groups[j].basis(n_antennas)
            Ug = np.eye(n_antennas) if Ug is None else Ug
            Uj = np.eye(n_antennas) if Uj is None else Uj
            worst = max(worst, float(np.linalg.norm(Ug.conj().T @ Uj, 2)))
    return worst


@dataclass(frozen=True)
class SystemConfig:
    """Global parameters of the grouped access model.

    ``undersampling_ratio`` is authoritative for the large-system analysis, ``pilot_length``
    for simulation; they must agree up to rounding of ``alpha * K``.
    """

    n_groups: int
    users_per_group: int
    n_antennas: int
    pilot_length: int
    undersampling_ratio: float
    activity_prob: float
    noise_var: float
    groups: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        for name in ("n_groups", "users_per_group", "n_antennas", "pilot_length"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if len(self.groups) != self.n_groups:
            raise ValueError(f"expected {self.n_groups} group models, got {len(self.groups)}")
        if not 0.0 <= self.activity_prob <= 1.0:
            raise ValueError("activity_prob must lie in [0, 1]")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if not self.undersampling_ratio > 0:
            raise ValueError("undersampling_ratio must be positive")
        if abs(self.pilot_length - self.undersampling_ratio * self.users_per_group) > 0.5 + 1e-9:
            raise ValueError("pilot_length must equal round(alpha * users_per_group)")
        for g in self.groups:
            if isinstance(g, CorrelatedGroup) and g.eigvecs.shape[0] != self.n_antennas:
                raise ValueError("correlated group basis does not match n_antennas")

    @classmethod
    def from_alpha(cls, *, alpha, users_per_group, groups, n_antennas, activity_prob, noise_var):
        groups = tuple(groups)
        return cls(n_groups=len(groups), users_per_group=users_per_group, n_antennas=n_antennas,
                   pilot_length=max(1, int(round(alpha * users_per_group))),
                   undersampling_ratio=float(alpha), activity_prob=activity_prob,
                   noise_var=noise_var, groups=groups)

    @property
    def n_users(self) -> int:
        return self.n_groups * self.users_per_group

    @property
    def alpha(self) -> float:
        return self.undersampling_ratio

    @property
    def is_isotropic(self) -> bool:
        return all(isinstance(g, IsotropicGroup) for g in self.groups)

    def variances(self) -> np.ndarray:
        """Per-antenna powers of isotropic groups."""
        if not self.is_isotropic:
            raise TypeError("variances() needs an all-isotropic configuration")
        return np.array([g.variance for g in self.groups], dtype=float)

    def group_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_groups), self.users_per_group)

    def with_alpha(self, alpha: float) -> "SystemConfig":
        return replace(self, undersampling_ratio=float(alpha),
                       pilot_length=max(1, int(round(alpha * self.users_per_group))))

    def with_pilot_length(self, pilot_length: int) -> "SystemConfig":
        return replace(self, pilot_length=int(pilot_length),
                       undersampling_ratio=pilot_length / self.users_per_group)

    def describe(self) -> dict:
        """JSON-friendly echo; correlated bases are summarised by their eigenvalues."""
        groups = []
        for g in self.groups:
            if isinstance(g, IsotropicGroup):
                groups.append({"kind": "isotropic", "variance": g.variance})
            else:
                groups.append({"kind": "correlated", "rank": g.rank(), "eigvals": g.eigvals.tolist()})
        return {"n_groups": self.n_groups, "users_per_group": self.users_per_group,
                "n_antennas": self.n_antennas, "pilot_length": self.pilot_length,
                "undersampling_ratio": self.undersampling_ratio,
                "activity_prob": self.activity_prob, "noise_var": self.noise_var, "groups": groups}


@dataclass(frozen=True)
class Scenario:
    """Physical description of a run in human units; ``build()`` turns it into a SystemConfig."""

    kind: str = "isotropic"
    n_groups: int = 5
    users_per_group: int = 2000
    n_antennas: int = 2
    alpha: float = 0.575
    activity_prob: float = 0.1
    pt_dbm: float = 33.0
    distances_km: tuple = REFERENCE_DISTANCES_KM
    bandwidth_hz: float = 1e6
    psd_dbm_per_hz: float = -169.0
    center_angles_deg: tuple = (45.0,)
    angular_spread_deg: float = 1.0
    rank_energy_fraction: float = 0.999
    distance_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "distances_km", tuple(float(d) for d in self.distances_km))
        object.__setattr__(self, "center_angles_deg", tuple(float(a) for a in self.center_angles_deg))
        if self.kind not in ("isotropic", "correlated"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")

    def distances(self) -> tuple:
        if self.distance_seed is not None:
            return draw_distances(self.n_groups, self.distance_seed)
        if len(self.distances_km) != self.n_groups:
            raise ValueError(f"need {self.n_groups} distances, got {len(self.distances_km)}")
        return self.distances_km

    def build(self) -> SystemConfig:
        noise = noise_variance(self.bandwidth_hz, self.psd_dbm_per_hz)
        gains = [group_gain(self.pt_dbm, d) for d in self.distances()]
        if self.kind == "isotropic":
            groups = [IsotropicGroup(g) for g in gains]
        else:
            angles = self.center_angles_deg
            if len(angles) == 1:
                angles = angles * self.n_groups
            if len(angles) != self.n_groups:
                raise ValueError("need one center angle per group")
            groups = [build_correlated_covariance(self.n_antennas, a, self.angular_spread_deg, g,
                                                  self.rank_energy_fraction)
                      for a, g in zip(angles, gains)]
        return SystemConfig.from_alpha(alpha=self.alpha, users_per_group=self.users_per_group,
                                       groups=groups, n_antennas=self.n_antennas,
                                       activity_prob=self.activity_prob, noise_var=noise)

    def replace(self, **kw) -> "Scenario":
        return replace(self, **kw)


def reference_isotropic(pt_dbm=33.0, n_antennas=2, alpha=0.575, users_per_group=2000) -> Scenario:
    """Five Rayleigh groups, rho = 0.1, 1 MHz, -169 dBm/Hz."""
    return Scenario(kind="isotropic", n_groups=5, users_per_group=users_per_group,
                    n_antennas=n_antennas, alpha=alpha, pt_dbm=pt_dbm)


def reference_correlated(pt_dbm=18.0, alpha=0.13, users_per_group=2000,
                         distance_km=CORRELATED_REFERENCE_DISTANCE_KM) -> Scenario:
    """One 64-antenna group at 45 deg with 1 deg spread, truncated to its two dominant modes."""
    return Scenario(kind="correlated", n_groups=1, users_per_group=users_per_group, n_antennas=64,
                    alpha=alpha, pt_dbm=pt_dbm, distances_km=(distance_km,),
                    center_angles_deg=(45.0,), angular_spread_deg=1.0, rank_energy_fraction=0.9)


@dataclass(frozen=True, eq=False)
class Scene:
    """One synthetic slot. Arrays are read-only."""

    pilots: np.ndarray
    activity: np.ndarray
    channels: np.ndarray
    signal: np.ndarray
    noise: np.ndarray
    received: np.ndarray
    rng_seed: int

    def __post_init__(self):
        for name in ("pilots", "activity", "channels", "signal", "noise", "received"):
            getattr(self, name).setflags(write=False)


def _complex_normal(rng, shape, var=1.0):
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channels(config: SystemConfig, rng, n_per_group=None) -> np.ndarray:
    K = config.users_per_group if n_per_group is None else n_per_group
    M = config.n_antennas
    blocks = []
    for g in config.groups:
        if isinstance(g, IsotropicGroup):
            blocks.append(_complex_normal(rng, (K, M), g.variance))
        else:
            a = _complex_normal(rng, (K, g.rank())) * np.sqrt(g.eigvals)
            blocks.append(a @ g.eigvecs.T)
    return np.concatenate(blocks, axis=0)


def generate_scene(config: SystemConfig, seed: int) -> Scene:
    """Draw pilots, activity, channels and noise deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    T, N, M = config.pilot_length, config.n_users, config.n_antennas
    F = _complex_normal(rng, (T, N), 1.0 / T)
    activity = (rng.random(N) < config.activity_prob).astype(np.int8)
    H = draw_channels(config, rng)
    S = activity[:, None] * H
    W = _complex_normal(rng, (T, M), config.noise_var)
    Y = F @ S + W
    return Scene(F, activity, H, S, W, Y, int(seed))


# -- scene I/O -----------------------------------------------------------------------------

_ARRAYS = ("pilots", "activity", "channels", "signal", "noise", "received")


def _group_to_json(g, idx, directory):
    if isinstance(g, IsotropicGroup):
        return {"kind": "isotropic", "variance": g.variance}
    name = f"group{idx}_eigvecs.bin"
    _write_matrix(directory / name, g.eigvecs)
    return {"kind": "correlated", "eigvals": g.eigvals.tolist(), "eigvecs": name,
            "shape": list(g.eigvecs.shape)}


def _write_matrix(path, arr):
    np.ascontiguousarray(np.asarray(arr, dtype=complex)).astype("<c16").tofile(path)


def _read_matrix(path, shape):
    return np.fromfile(path, dtype="<c16").reshape(shape)


def save_scene(scene: Scene, config: SystemConfig, directory) -> Path:
    """Write every matrix as little-endian (re, im) float64 pairs, row-major, plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name in _ARRAYS:
        arr = getattr(scene, name)
        _write_matrix(directory / f"{name}.bin", arr)
        arrays[name] = {"file": f"{name}.bin", "shape": list(arr.shape)}
    cfg = {k: v for k, v in asdict(config).items() if k != "groups"}
    cfg["groups"] = [_group_to_json(g, i, directory) for i, g in enumerate(config.groups)]
    manifest = {"format": "complex128-le-rowmajor", "seed": scene.rng_seed, "arrays": arrays,
                "config": cfg}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_scene(directory) -> tuple:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    cfg = dict(manifest["config"])
    groups = []
    for g in cfg.pop("groups"):
        if g["kind"] == "isotropic":
            groups.append(IsotropicGroup(g["variance"]))
        else:
            U = _read_matrix(directory / g["eigvecs"], tuple(g["shape"]))
            groups.append(CorrelatedGroup(U, np.array(g["eigvals"])))
    config = SystemConfig(groups=tuple(groups), **cfg)
    arrs = {}
    for name in _ARRAYS:
        meta = manifest["arrays"][name]
        arrs[name] = _read_matrix(directory / meta["file"], tuple(meta["shape"]))
    arrs["activity"] = arrs["activity"].real.astype(np.int8)
    return Scene(rng_seed=int(manifest["seed"]), **arrs), config
