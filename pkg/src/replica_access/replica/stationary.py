"""Locate and classify local maxima of the free entropy, run SE to its fixed points, sweep."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from ..errors import NotConvergedError, NumericalError
from ..model import CorrelatedGroup, Scenario, SystemConfig, max_subspace_overlap
from . import isotropic as iso
from .correlated import CorrelatedModel, MonteCarlo


@dataclass(frozen=True)
class FreeEntropySpec:
    """Which free entropy to analyse: ``"isotropic"``, ``"asymptotic"`` or ``"correlated"``."""

    kind: str
    config: SystemConfig
    group_index: int = 0
    nodes: int = 64
    method: str = "panel"
    mc: MonteCarlo = MonteCarlo()

    def __post_init__(self):
        if self.kind not in ("isotropic", "asymptotic", "correlated"):
            raise ValueError(f"unknown free entropy kind {self.kind!r}")
        if self.nodes < 16:
            raise ValueError("quadrature needs at least 16 nodes")

    @classmethod
    def for_config(cls, config, **kw):
        return cls("isotropic" if config.is_isotropic else "correlated", config, **kw)


@dataclass(frozen=True)
class StationaryPoint:
    state: object
    value: float
    stderr: float
    mse: float
    nmse_db: float
    kind: str = "local-max"


@dataclass
class StationaryPointReport:
    points: list
    mmse_point: int | None
    amp_point: int | None
    gap: bool | None  # None: the two candidates cannot be ranked within numerical error
    unachievable: list = field(default_factory=list)

    @property
    def n_maxima(self):
        return len(self.points)

    @property
    def amp(self):
        return None if self.amp_point is None else self.points[self.amp_point]

    @property
    def mmse(self):
        return None if self.mmse_point is None else self.points[self.mmse_point]


@dataclass(frozen=True)
class FixedPoint:
    state: object
    trace: list
    iterations: int
    converged: bool


def se_fixed_point(config, basis="isotropic", init="prior", tol=1e-6, max_iters=None,
                   nodes=64, mc: MonteCarlo = MonteCarlo()) -> FixedPoint:
    """Iterate state evolution to a fixed point.

    ``basis`` is ``"isotropic"`` or a group index for a correlated group. ``init`` is
    ``"prior"`` (E0 = rho C) or an explicit state.
    """
    if basis == "isotropic":
        tau0 = None if isinstance(init, str) else float(np.asarray(init))
        tau, trace, ok = iso.iterate_isotropic(config, tau0, tol=tol, nodes=nodes,
                                               max_iters=max_iters or 5000)
        if not ok:
            raise NotConvergedError("isotropic state evolution did not converge", trace)
        return FixedPoint(tau, trace, len(trace) - 1, ok)
    model = CorrelatedModel.for_group(config, int(basis), mc, nodes)
    xi0 = None if isinstance(init, str) else init
    xi, trace, ok = model.iterate(xi0, tol=tol, max_iters=max_iters or 20_000)
    if not ok:
        raise NotConvergedError("correlated state evolution did not converge", trace)
    return FixedPoint(xi, trace, len(trace) - 1, ok)


def _scan_roots(h, lo, hi, n):
    """Sign changes of h from + to - on a log grid, refined by Brent's method."""
    grid = np.geomspace(lo, hi, n)
    vals = h(grid)
    idx = np.where((vals[:-1] > 0) & (vals[1:] <= 0))[0]
    roots = []
    for i in idx:
        a, b = grid[i], grid[i + 1]
        if vals[i + 1] == 0:
            roots.append(float(b))
            continue
        roots.append(optimize.brentq(lambda t: float(h(np.array([t]))[0]), a, b,
                                     xtol=1e-15 * b, rtol=1e-14, maxiter=200))
    return roots


def _scan_range(config):
    s2 = config.variances()
    rho, nw = config.activity_prob, config.noise_var
    hi = 1.05 * rho * s2.sum()
    lo = 0.01 * rho * np.sum(s2 * nw / (s2 + nw))
    return max(lo, hi * 1e-15), hi


def _classify(points, amp_index, tie):
    """Fill in the MMSE/AMP/unachievable roles; ``tie(i, j)`` says whether i and j are unrankable."""
    if not points:
        return StationaryPointReport([], None, None, None, [])
    values = [p.value for p in points]
    best = int(np.argmax(values))
    if best == amp_index:
        gap = False
        if any(tie(best, j) for j in range(len(points)) if j != best):
            gap = None
    else:
        gap = None if tie(best, amp_index) else True
    rest = [i for i in range(len(points)) if i not in (best, amp_index)]
    return StationaryPointReport(points, best, amp_index, gap, rest)


def find_stationary_points(spec: FreeEntropySpec, n_grid=2000, lo=None, hi=None,
                           scales=(1.0, 0.3, 0.1, 0.03, 0.01, 1e-3, 1e-4, 1e-6),
                           tol=1e-6) -> StationaryPointReport:
    """Local maxima of the free entropy with their classification.

    Scalar free entropies: the sign of dPhi/dtau equals the sign of f(tau) - tau, so maxima are
    the + to - crossings of the SE residual on a log grid. Correlated groups: distinct SE fixed
    points reached from scaled copies of rho * Lambda.
    """
    cfg = spec.config
    if spec.kind in ("isotropic", "asymptotic"):
        lo0, hi0 = _scan_range(cfg)
        lo, hi = lo or lo0, hi or hi0
        if cfg.activity_prob <= 0:
            phi = iso.phi_asymptotic if spec.kind == "asymptotic" else iso.phi_isotropic
            pt = StationaryPoint(0.0, float(phi(0.0, cfg)), 0.0, 0.0, -np.inf)
            return StationaryPointReport([pt], 0, 0, False, [])
        if spec.kind == "asymptotic":
            h = lambda t: iso.se_map_asymptotic(t, cfg) - t
            phi = lambda t: iso.phi_asymptotic(t, cfg)
        else:
            h = lambda t: iso.se_map_isotropic(t, cfg, spec.nodes, spec.method) - t
            phi = lambda t: iso.phi_isotropic(t, cfg, spec.nodes, spec.method)
        roots = _scan_roots(h, lo, hi, n_grid)
        pts = [StationaryPoint(t, float(phi(t)), 0.0, t, iso.nmse_db(t, cfg)) for t in roots]
        if not pts:
            return StationaryPointReport([], None, None, None, [])
        amp = int(np.argmax([p.mse for p in pts]))
        scale = max(abs(p.value) for p in pts)
        tie = lambda i, j: abs(pts[i].value - pts[j].value) <= 1e-10 * max(scale, 1.0)
        return _classify(pts, amp, tie)

    model = CorrelatedModel.for_group(cfg, spec.group_index, spec.mc, spec.nodes)
    prior = model.prior_state()
    states = []
    for s in scales:
        xi, trace, ok = model.iterate(prior * s, tol=tol)
        if not ok:
            continue
        if any(np.max(np.abs(xi - other) / np.maximum(other, 1e-300)) < 1e-3 for other in states):
            continue
        states.append(xi)
    if not states:
        return StationaryPointReport([], None, None, None, [])
    pts = []
    for xi in states:
        val, se = model.phi(xi)
        pts.append(StationaryPoint(xi, val, se, float(xi.sum()), model.nmse_db(xi)))
    amp = int(np.argmax([p.mse for p in pts]))

    def tie(i, j):
        d, se = model.phi_difference(pts[i].state, pts[j].state)
        return abs(d) <= 3 * se
    return _classify(pts, amp, tie)


# -- sweeps ---------------------------------------------------------------------------------

@dataclass
class PhaseCell:
    alpha: float
    axis2: float | None
    n_maxima: int
    gap: bool | None
    amp_mse: float
    mmse: float
    amp_nmse_db: float
    mmse_nmse_db: float
    error: str = ""


@dataclass
class PhaseDiagram:
    axis2_name: str | None
    cells: list
    settings: dict

    def rows(self, axis2=None):
        return [c for c in self.cells if axis2 is None or c.axis2 == axis2]

    def transitions(self, min_drop_db=10.0, axis2=None):
        """Adjacent alpha cells where the AMP-achievable NMSE falls by more than ``min_drop_db``."""
        cells = sorted(self.rows(axis2), key=lambda c: c.alpha)
        out = []
        for a, b in zip(cells, cells[1:]):
            if np.isfinite(a.amp_nmse_db) and np.isfinite(b.amp_nmse_db) \
                    and a.amp_nmse_db - b.amp_nmse_db > min_drop_db:
                out.append((a.alpha, b.alpha, a.amp_nmse_db - b.amp_nmse_db))
        return out

    def write(self, path, extra_meta=None):
        """CSV grid plus a JSON sidecar with the settings."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["axis1", "axis2", "n_maxima", "gap", "amp_mse_db", "mmse_db",
                        "amp_nmse_db", "mmse_nmse_db", "error"])
            for c in self.cells:
                w.writerow([c.alpha, "" if c.axis2 is None else c.axis2, c.n_maxima,
                            {True: "true", False: "false", None: "indeterminate"}[c.gap],
                            _db(c.amp_mse), _db(c.mmse), c.amp_nmse_db, c.mmse_nmse_db, c.error])
        meta = {"axis1": "alpha", "axis2": self.axis2_name, **self.settings, **(extra_meta or {})}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=str))
        return path


def _db(x):
    with np.errstate(divide="ignore"):
        return float(10 * np.log10(x)) if np.isfinite(x) else float("nan")


_AXES = {"pt_dbm": "pt_dbm", "power_dbm": "pt_dbm", "n_antennas": "n_antennas", "antennas": "n_antennas"}


def phase_diagram(scenario: Scenario, alphas, axis2=None, values2=(None,), nodes=64,
                  mc: MonteCarlo = MonteCarlo(), n_grid=2000, asymptotic=False) -> PhaseDiagram:
    """Classify every (alpha, axis2) cell; failures are stored in the cell and the sweep goes on."""
    alphas = list(alphas)
    values2 = list(values2)
    if not alphas or not values2:
        raise ValueError("sweep ranges must be non-empty")
    field2 = _AXES.get(axis2) if axis2 else None
    if axis2 and field2 is None:
        raise ValueError(f"unknown second axis {axis2!r}")
    cells = []
    for v2 in values2:
        base = scenario if field2 is None else scenario.replace(**{field2: type(getattr(scenario, field2))(v2)})
        for a in alphas:
            try:
                cfg = base.replace(alpha=float(a)).build()
                kind = "asymptotic" if asymptotic else ("isotropic" if cfg.is_isotropic else "correlated")
                rep = find_stationary_points(FreeEntropySpec(kind, cfg, nodes=nodes, mc=mc), n_grid=n_grid)
                if not rep.points:
                    raise NumericalError("no local maximum found in the scan range")
                cells.append(PhaseCell(float(a), v2, rep.n_maxima, rep.gap, rep.amp.mse, rep.mmse.mse,
                                       rep.amp.nmse_db, rep.mmse.nmse_db))
            except (NumericalError, ValueError, FloatingPointError) as exc:
                nan = float("nan")
                cells.append(PhaseCell(float(a), v2, 0, None, nan, nan, nan, nan, f"{type(exc).__name__}: {exc}"))
    settings = {"nodes": nodes, "mc_samples": mc.samples, "mc_seed": mc.seed, "n_grid": n_grid,
                "scenario": {k: getattr(scenario, k) for k in scenario.__dataclass_fields__}}
    return PhaseDiagram(axis2, cells, settings)


# -- decoupling across orthogonal groups ----------------------------------------------------

class JointStateEvolution:
    """Monte Carlo SE of the full M-dimensional model with a matrix-valued error E_g per group.

    The posterior is written for an arbitrary (non-diagonal) noise covariance, so nothing in
    this oracle assumes the groups decouple.
    """

    def __init__(self, config: SystemConfig, samples=20_000, seed=0):
        self.cfg = config
        rng = np.random.default_rng(seed)
        M = config.n_antennas
        self.draws = []
        for g in config.groups:
            U = g.basis(M) if isinstance(g, CorrelatedGroup) else np.eye(M)
            lam = g.eigvals if isinstance(g, CorrelatedGroup) else g.eigvals(M)
            r = lam.size
            act = rng.random(samples) < config.activity_prob
            c = np.sqrt(lam / 2) * (rng.standard_normal((samples, r)) + 1j * rng.standard_normal((samples, r)))
            z = np.sqrt(0.5) * (rng.standard_normal((samples, M)) + 1j * rng.standard_normal((samples, M)))
            s = (act[:, None] * c) @ U.T
            self.draws.append((U, lam, s, z))

    def noise(self, errs):
        return self.cfg.noise_var * np.eye(self.cfg.n_antennas) + sum(errs) / self.cfg.alpha

    def step(self, errs):
        Sigma = self.noise(errs)
        L = np.linalg.cholesky(Sigma)
        Sinv = np.linalg.inv(Sigma)
        rho = self.cfg.activity_prob
        out = []
        for U, lam, s, z in self.draws:
            obs = s + z @ L.T
            P = np.diag(1 / lam) + U.conj().T @ Sinv @ U
            A = np.linalg.inv(P)
            q = obs @ (Sinv @ U).conj()
            mu = q @ A.T
            quad = np.real(np.einsum("ni,ij,nj->n", q.conj(), A, q))
            _, logdet = np.linalg.slogdet(np.diag(lam) @ P)
            logit = np.log(rho) - np.log1p(-rho) + quad - logdet
            p = 1 / (1 + np.exp(-np.clip(logit, -700, 700)))
            err = (p[:, None] * mu) @ U.T - s
            out.append(err.T @ err.conj() / err.shape[0])
        return out

    def run(self, tol=1e-6, patience=3, max_iters=5000):
        rho = self.cfg.activity_prob
        errs = [rho * (U * lam) @ U.conj().T for U, lam, _, _ in self.draws]
        calm, prev = 0, np.array([np.real(np.trace(e)) for e in errs])
        for _ in range(max_iters):
            errs = self.step(errs)
            cur = np.array([np.real(np.trace(e)) for e in errs])
            calm = calm + 1 if np.max(np.abs(cur - prev) / np.maximum(cur, 1e-300)) < tol else 0
            prev = cur
            if calm >= patience:
                return errs
        raise NotConvergedError("joint state evolution did not converge", prev.tolist())


@dataclass
class DecouplingReport:
    orthogonal: bool
    max_overlap: float
    per_group: list
    per_group_se: list
    joint: list
    joint_se: list
    off_subspace_residual: float
    agree: bool
    passed: bool


def decoupling_check(config: SystemConfig, batches=8, samples=20_000, seed=0, z=3.0,
                     orth_tol=1e-10) -> DecouplingReport:
    """Compare per-group SE fixed points with the joint matrix-valued SE of the full model."""
    M = config.n_antennas
    overlap = max_subspace_overlap(config.groups, M)
    if overlap >= orth_tol:
        return DecouplingReport(False, overlap, [], [], [], [], float("nan"), False, False)
    seeds = np.random.SeedSequence(seed).generate_state(2 * batches)
    per, joint, resid = [], [], 0.0
    for b in range(batches):
        mc = MonteCarlo(samples, int(seeds[b]))
        per.append([CorrelatedModel.for_group(config, g, mc).iterate()[0] for g in range(config.n_groups)])
        errs = JointStateEvolution(config, samples, int(seeds[batches + b])).run()
        modes = []
        total = sum(errs)
        proj = np.zeros_like(total)
        for g, E in zip(config.groups, errs):
            U = g.basis(M) if isinstance(g, CorrelatedGroup) else np.eye(M)
            modes.append(np.real(np.diag(U.conj().T @ E @ U)))
            Pg = U @ U.conj().T
            proj = proj + Pg @ total @ Pg
        resid = max(resid, float(np.linalg.norm(total - proj) / np.linalg.norm(total)))
        joint.append(modes)

    def stats(runs):
        means, ses = [], []
        for g in range(config.n_groups):
            arr = np.array([r[g] for r in runs])
            means.append(arr.mean(axis=0))
            ses.append(arr.std(axis=0, ddof=1) / np.sqrt(len(runs)) if len(runs) > 1 else np.zeros(arr.shape[1]))
        return means, ses

    pm, pse = stats(per)
    jm, jse = stats(joint)
    agree = all(np.all(np.abs(a - b) <= z * np.sqrt(sa**2 + sb**2) + 1e-12 * np.abs(a))
                for a, b, sa, sb in zip(pm, jm, pse, jse))
    return DecouplingReport(True, overlap, pm, pse, jm, jse, resid, agree, agree and resid < 1e-6)
