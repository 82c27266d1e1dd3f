"""Monte Carlo experiments: replica predictions next to AMP runs on synthetic scenes."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .amp import AmpConfig, empirical_ce_error, empirical_detection, run_amp
from .errors import DivergedError, NumericalError
from .metrics import correlated_ce_error, correlated_detection, isotropic_ce_error, isotropic_detection
from .model import CorrelatedGroup, Scene, Scenario, SystemConfig, generate_scene
from .replica.correlated import MonteCarlo
from .replica.stationary import FreeEntropySpec, find_stationary_points

AXES = ("alpha", "pilot_length", "power_dbm", "antennas")
METRICS = ("nmse", "p_md", "p_fa", "ce_nmse")


def map_threshold(rho):
    """LLR threshold of the MAP rule (posterior activity >= 1/2)."""
    if rho <= 0:
        return float("inf")
    if rho >= 1:
        return float("-inf")
    return float(np.log((1 - rho) / rho))


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: Scenario
    sweep_axis: str = "alpha"
    sweep_values: tuple = (0.575,)
    n_trials: int = 20
    seed: int = 0
    amp: AmpConfig = AmpConfig(max_iters=200)
    threshold: float | None = None      # LLR units; None uses the MAP threshold
    predict: bool = True
    nodes: int = 64
    mc: MonteCarlo = MonteCarlo()
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.sweep_axis not in AXES:
            raise ValueError(f"sweep_axis must be one of {AXES}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be non-empty")
        if list(self.sweep_values) != sorted(self.sweep_values):
            raise ValueError("sweep_values must be sorted")

    def scenario_at(self, value) -> Scenario:
        s = self.scenario
        if self.sweep_axis == "alpha":
            return s.replace(alpha=float(value))
        if self.sweep_axis == "pilot_length":
            return s.replace(alpha=float(value) / s.users_per_group)
        if self.sweep_axis == "power_dbm":
            return s.replace(pt_dbm=float(value))
        return s.replace(n_antennas=int(value))

    def digest(self) -> str:
        plain = _plain(self)
        plain.pop("workers")        # results do not depend on the worker count
        blob = json.dumps(plain, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


@dataclass
class Prediction:
    amp_nmse_db: float
    mmse_nmse_db: float
    p_md: float
    p_fa: float
    ce_nmse: float
    n_maxima: int
    gap: bool | None
    branches_nmse_db: tuple = ()


@dataclass
class SweepPoint:
    value: float
    config: dict
    prediction: Prediction | None
    mean: dict
    stderr: dict
    per_trial: dict
    n_ok: int
    n_diverged: int
    failed: bool = False


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    points: list
    metadata: dict = field(default_factory=dict)

    def nmse_db(self, i):
        return float(10 * np.log10(self.points[i].mean["nmse"]))

    def write(self, out_dir) -> Path:
        """Long-format CSV (one row per sweep value and metric) plus a JSON manifest."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = self.plan.digest()
        path = out / f"experiment-{tag}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["axis", "value", "metric", "mean", "stderr", "n", "config_hash"])
            for p in self.points:
                for m in METRICS:
                    w.writerow([self.plan.sweep_axis, p.value, m, p.mean.get(m), p.stderr.get(m), p.n_ok, tag])
                if p.mean.get("nmse", 0) > 0:
                    se_db = 10 / np.log(10) * p.stderr["nmse"] / p.mean["nmse"]
                    w.writerow([self.plan.sweep_axis, p.value, "nmse_db", 10 * np.log10(p.mean["nmse"]),
                                se_db, p.n_ok, tag])
                if p.prediction is not None:
                    pr = p.prediction
                    for m, v in (("predicted_nmse_db", pr.amp_nmse_db), ("predicted_mmse_db", pr.mmse_nmse_db),
                                 ("predicted_pmd", pr.p_md), ("predicted_pfa", pr.p_fa),
                                 ("predicted_ce_nmse", pr.ce_nmse), ("n_maxima", pr.n_maxima),
                                 ("gap", {True: 1, False: 0, None: ""}[pr.gap])):
                        w.writerow([self.plan.sweep_axis, p.value, m, v, "", "", tag])
        manifest = {"plan": _plain(self.plan), "config_hash": tag, "csv": path.name, **self.metadata,
                    "points": [{"value": p.value, "n_ok": p.n_ok, "n_diverged": p.n_diverged,
                                "failed": p.failed, "config": p.config} for p in self.points]}
        (out / f"experiment-{tag}.json").write_text(json.dumps(manifest, indent=2, default=str))
        return path


def stationary_reports(config: SystemConfig, nodes=64, mc: MonteCarlo = MonteCarlo()) -> list:
    """One report for an isotropic config, one per group otherwise."""
    if config.is_isotropic:
        return [find_stationary_points(FreeEntropySpec("isotropic", config, nodes=nodes))]
    return [find_stationary_points(FreeEntropySpec("correlated", config, group_index=g, nodes=nodes, mc=mc))
            for g in range(config.n_groups)]


def predict(config: SystemConfig, threshold=None, nodes=64, mc: MonteCarlo = MonteCarlo(),
            reports=None) -> Prediction:
    """Replica prediction of pooled NMSE, detection rates and CE error at the AMP point."""
    rho = config.activity_prob
    th = map_threshold(rho) if threshold is None else threshold
    reports = stationary_reports(config, nodes, mc) if reports is None else reports
    if any(r.amp_point is None for r in reports):
        raise NumericalError("no local maximum of the free entropy was found")
    if config.is_isotropic:
        rep = reports[0]
        tau = rep.amp.state
        ops = [isotropic_detection(tau, g, config, th) for g in range(config.n_groups)]
        s2 = config.variances()
        ce = float(np.sum([isotropic_ce_error(tau, g, config) for g in range(config.n_groups)]) / s2.sum())
        return Prediction(rep.amp.nmse_db, rep.mmse.nmse_db, float(np.mean([o.p_md for o in ops])),
                          float(np.mean([o.p_fa for o in ops])), ce, rep.n_maxima, rep.gap,
                          tuple(p.nmse_db for p in rep.points))
    amp_mse = mmse = prior = 0.0
    pmd, pfa, ce_num, ce_den, nmax, gaps, branches = [], [], 0.0, 0.0, 0, [], ()
    for g in range(config.n_groups):
        rep = reports[g]
        xi = rep.amp.state
        lam = config.groups[g].eigvals if isinstance(config.groups[g], CorrelatedGroup) \
            else config.groups[g].eigvals(config.n_antennas)
        amp_mse += xi.sum()
        mmse += rep.mmse.state.sum()
        prior += rho * lam.sum()
        op = correlated_detection(xi, g, config, th)
        pmd.append(op.p_md)
        pfa.append(op.p_fa)
        e = correlated_ce_error(xi, g, config)
        ce_num += e.per_mode.sum()
        ce_den += lam.sum()
        nmax = max(nmax, rep.n_maxima)
        gaps.append(rep.gap)
        if config.n_groups == 1:
            branches = tuple(p.nmse_db for p in rep.points)
    gap = True if any(x is True for x in gaps) else (None if any(x is None for x in gaps) else False)
    db = lambda x: float(10 * np.log10(x / prior)) if x > 0 else float("-inf")
    return Prediction(db(amp_mse), db(mmse), float(np.mean(pmd)), float(np.mean(pfa)), ce_num / ce_den,
                      nmax, gap, branches)


def trial_seed(base, index, trial):
    return int(np.random.SeedSequence([base, index, trial]).generate_state(1, np.uint64)[0])


def _trial(config, seed, amp_cfg, threshold):
    scene = generate_scene(config, seed)
    try:
        res = run_amp(scene, config, amp_cfg)
    except DivergedError:
        return None
    det = empirical_detection(res, scene, config, threshold)
    na = sum(d.n_active for d in det)
    ni = sum(d.n_inactive for d in det)
    p_md = sum(d.p_md * d.n_active for d in det if d.n_active) / na if na else float("nan")
    p_fa = sum(d.p_fa * d.n_inactive for d in det if d.n_inactive) / ni if ni else float("nan")
    ce = empirical_ce_error(res, scene, config)
    ce_vals = [c for c in ce if c is not None]
    return {"nmse": float(res.nmse_trace[-1]), "p_md": p_md, "p_fa": p_fa,
            "ce_nmse": float(np.mean(ce_vals)) if ce_vals else float("nan")}


def _summary(values):
    arr = np.array(values, float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return float("nan"), float("nan")
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se


def run_experiment(plan: ExperimentPlan, on_point=None) -> ExperimentResult:
    """Predictions once per sweep value, then ``n_trials`` independent AMP runs.

    ``on_point(result_so_far)`` is called after each sweep value (used to flush partial output).
    """
    start = time.time()
    points = []
    for idx, value in enumerate(plan.sweep_values):
        scen = plan.scenario_at(value)
        cfg = scen.build()
        th = map_threshold(cfg.activity_prob) if plan.threshold is None else plan.threshold
        pred = predict(cfg, plan.threshold, plan.nodes, plan.mc) if plan.predict else None
        seeds = [trial_seed(plan.seed, idx, t) for t in range(plan.n_trials)]
        if plan.workers > 1:
            with ThreadPoolExecutor(plan.workers) as ex:
                outs = list(ex.map(lambda s: _trial(cfg, s, plan.amp, th), seeds))
        else:
            outs = [_trial(cfg, s, plan.amp, th) for s in seeds]
        ok = [o for o in outs if o is not None]
        n_div = len(outs) - len(ok)
        mean, se, per = {}, {}, {}
        for m in METRICS:
            per[m] = [o[m] for o in ok]
            mean[m], se[m] = _summary(per[m])
        points.append(SweepPoint(float(value), cfg.describe(), pred, mean, se, per, len(ok), n_div,
                                 failed=n_div > plan.n_trials / 2))
        if on_point is not None:
            on_point(ExperimentResult(plan, list(points), _meta(plan, start)))
    return ExperimentResult(plan, points, _meta(plan, start))


def _meta(plan, start):
    return {"runtime_s": round(time.time() - start, 3), "base_seed": plan.seed, "version": __version__,
            "python": platform.python_version(), "numpy": np.__version__}


# -- per-group processing -------------------------------------------------------------------

@dataclass
class PgpReport:
    joint_nmse: np.ndarray        # trials x groups
    pgp_nmse: np.ndarray
    joint_pe: np.ndarray          # p_md + p_fa, trials x groups
    pgp_pe: np.ndarray
    mean_diff_db: np.ndarray      # PGP minus joint, per group
    diff_se_db: np.ndarray
    joint_better: list            # per group: joint beats PGP by > 3 standard errors

    @property
    def consistent(self):
        return not any(self.joint_better)


def project_scene(scene: Scene, config: SystemConfig, g: int):
    """Sub-model of group g: Y conj(U_g) = F_g S_g conj(U_g) + W conj(U_g) + leakage."""
    grp = config.groups[g]
    U = grp.basis(config.n_antennas)
    K = config.users_per_group
    b = slice(g * K, (g + 1) * K)
    sub_cfg = replace(config, n_groups=1, n_antennas=U.shape[1],
                      groups=(CorrelatedGroup(np.eye(U.shape[1]), grp.eigvals),))
    H = scene.channels[b] @ U.conj()
    S = scene.signal[b] @ U.conj()
    Wp = scene.noise @ U.conj()
    Y = scene.received @ U.conj()
    sub = Scene(np.array(scene.pilots[:, b]), np.array(scene.activity[b]), H, S, Wp, Y, scene.rng_seed)
    return sub, sub_cfg


def pgp_experiment(config: SystemConfig, seed=0, trials=10, amp_cfg: AmpConfig = AmpConfig(max_iters=200),
                   threshold=None) -> PgpReport:
    """Joint AMP on Y against independent AMP runs on each group's projected sub-model."""
    G, K = config.n_groups, config.users_per_group
    th = map_threshold(config.activity_prob) if threshold is None else threshold
    jn, pn, jp, pp = (np.zeros((trials, G)) for _ in range(4))
    for t in range(trials):
        scene = generate_scene(config, trial_seed(seed, 0, t))
        res = run_amp(scene, config, amp_cfg)
        det = empirical_detection(res, scene, config, th)
        for g in range(G):
            b = slice(g * K, (g + 1) * K)
            jn[t, g] = np.sum(np.abs(res.estimate[b] - scene.signal[b]) ** 2) / np.sum(np.abs(scene.signal[b]) ** 2)
            jp[t, g] = det[g].p_md + det[g].p_fa
            if G == 1:
                pn[t, g], pp[t, g] = jn[t, g], jp[t, g]
                continue
            sub, sub_cfg = project_scene(scene, config, g)
            r = run_amp(sub, sub_cfg, amp_cfg)
            pn[t, g] = np.sum(np.abs(r.estimate - sub.signal) ** 2) / np.sum(np.abs(sub.signal) ** 2)
            d = empirical_detection(r, sub, sub_cfg, th)[0]
            pp[t, g] = d.p_md + d.p_fa
    diff = 10 * np.log10(pn) - 10 * np.log10(jn)
    mean = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(G)
    better = [bool(m > 3 * s) if s > 0 else bool(m > 0) for m, s in zip(mean, se)]
    return PgpReport(jn, pn, jp, pp, mean, se, better)
