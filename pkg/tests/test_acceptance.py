"""End-to-end acceptance criteria. Each test records one PASS/FAIL line shown in the terminal summary."""

import time

import numpy as np
import pytest
from scipy import integrate, special

from replica_access.amp import AmpConfig
from replica_access.denoiser import llr
from replica_access.metrics import (correlated_detection, correlated_llr_midpoint, hypoexp_survival,
                                    hypoexp_survival_expm, isotropic_detection, isotropic_llr_midpoint,
                                    reg_lower_gamma)
from replica_access.model import (IsotropicGroup, SystemConfig, orthogonal_groups, reference_correlated,
                                  reference_isotropic)
from replica_access.replica.correlated import CorrelatedModel
from replica_access.replica.isotropic import fixed_point_asymptotic
from replica_access.replica.stationary import (FreeEntropySpec, decoupling_check, find_stationary_points,
                                               phase_diagram)
from replica_access.sim import ExperimentPlan, pgp_experiment, predict, run_experiment, stationary_reports

from conftest import record

pytestmark = pytest.mark.acceptance


def _grid(lo, hi, step):
    return [round(x, 6) for x in np.arange(lo, hi + step / 2, step)]


def _finish(n, name, ok, detail, start, budget_s):
    elapsed = time.time() - start
    ok = ok and elapsed < budget_s
    record(n, name, ok, f"{detail}; {elapsed:.1f}s (budget {budget_s:g}s)")
    assert ok, detail


def _cn(rng, shape):
    return np.sqrt(0.5) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def test_c01_asymptotic_uniqueness():
    start = time.time()
    rng = np.random.default_rng(2024)
    counts, worst = [], 0.0
    for _ in range(100):
        G = int(rng.integers(1, 6))
        cfg = SystemConfig.from_alpha(alpha=rng.uniform(0.05, 1.0), users_per_group=1000,
                                      groups=[IsotropicGroup(v) for v in 10 ** rng.uniform(-1, 1, G)],
                                      n_antennas=int(rng.integers(1, 9)), activity_prob=rng.uniform(0.01, 0.5),
                                      noise_var=10 ** rng.uniform(-3, 0))
        rep = find_stationary_points(FreeEntropySpec("asymptotic", cfg))
        counts.append(rep.n_maxima)
        if rep.n_maxima == 1:
            tau = fixed_point_asymptotic(cfg)
            worst = max(worst, abs(rep.amp.state - tau) / tau)
    ok = all(c == 1 for c in counts) and worst <= 1e-9
    _finish(1, "asymptotic free entropy has one maximum", ok,
            f"maxima counts {sorted(set(counts))}, worst rel. error vs fixed point {worst:.1e}", start, 10)


def test_c02_isotropic_region_structure():
    start = time.time()
    alphas = (0.525, 0.550, 0.575, 0.600, 0.675)
    d = phase_diagram(reference_isotropic(), alphas, nodes=64)
    got = [(c.n_maxima, c.gap) for c in d.cells]
    want = [(1, False), (2, False), (2, True), (1, False), (1, False)]
    _finish(2, "isotropic M=2 region structure", got == want,
            "  ".join(f"a={a}: {n} max, gap={g}" for a, (n, g) in zip(alphas, got)), start, 120)


def test_c03_no_gap_with_eight_antennas():
    start = time.time()
    d = phase_diagram(reference_isotropic(n_antennas=8), _grid(0.5, 0.7, 0.0125),
                      axis2="pt_dbm", values2=(18.0, 23.0, 33.0))
    gaps = [(c.axis2, c.alpha) for c in d.cells if c.gap is True]
    errors = [c.error for c in d.cells if c.error]
    _finish(3, "no gap at M=8", not gaps and not errors,
            f"{len(d.cells)} cells, gap cells {gaps or 'none'}, failed cells {len(errors)}", start, 300)


def test_c04_transition_thresholds():
    start = time.time()
    iso = phase_diagram(reference_isotropic(), _grid(0.5, 0.75, 0.0125)).transitions()
    corr = phase_diagram(reference_correlated(), _grid(0.10, 0.20, 0.005)).transitions()
    ok = (len(iso) >= 1 and abs(iso[0][1] - 0.625) <= 0.05 + 1e-9
          and len(corr) >= 1 and abs(corr[0][1] - 0.14) <= 0.02 + 1e-9)
    fmt = lambda t: f"{t[0][0]:g}->{t[0][1]:g} ({t[0][2]:.1f} dB)" if t else "none"
    _finish(4, "transition thresholds", ok, f"isotropic {fmt(iso)}, correlated {fmt(corr)}", start, 600)


def test_c05_prediction_vs_simulation():
    start = time.time()
    plan = ExperimentPlan(reference_correlated(users_per_group=2000), sweep_axis="pilot_length",
                          sweep_values=(220, 260, 300), n_trials=10, seed=7, amp=AmpConfig(max_iters=200))
    res = run_experiment(plan)
    parts, ok = [], True
    for i, p in enumerate(res.points):
        emp = res.nmse_db(i)
        pred = p.prediction
        if p.value == 260:
            targets = pred.branches_nmse_db or (pred.amp_nmse_db,)
            good = min(abs(emp - b) for b in targets) <= 1.0
            parts.append(f"T=260 emp {emp:.2f} dB vs branches {', '.join(f'{b:.2f}' for b in targets)}")
        else:
            good = abs(emp - pred.amp_nmse_db) <= 1.0
            parts.append(f"T={p.value:g} emp {emp:.2f} dB vs pred {pred.amp_nmse_db:.2f}")
        ok &= good
    _finish(5, "correlated prediction vs AMP", ok, "; ".join(parts), start, 1800)


def test_c06_detection_oracle():
    start = time.time()
    n = 1_000_000
    rng = np.random.default_rng(0)
    worst = 0.0

    def check(p, emp):
        se = np.sqrt(max(p * (1 - p), 1 / n) / n)
        return abs(p - emp) / se

    # isotropic group: M=4, unit variance, equivalent noise 0.05, thresholds on ||y||^2
    cfg = SystemConfig.from_alpha(alpha=1.0, users_per_group=100, groups=[IsotropicGroup(1.0)],
                                  n_antennas=4, activity_prob=0.1, noise_var=0.05)
    e1 = np.sum(np.abs(_cn(rng, (n, 4))) ** 2, axis=1) * 1.05
    e0 = np.sum(np.abs(_cn(rng, (n, 4))) ** 2, axis=1) * 0.05
    for lp in np.geomspace(0.05, 5.0, 20):
        op = isotropic_detection(0.0, 0, cfg, lp, on="statistic")
        worst = max(worst, check(op.p_md, np.mean(e1 < lp)), check(op.p_fa, np.mean(e0 >= lp)))
    iso_worst = worst

    # rank-2 correlated group at its AMP fixed point, thresholds on the LLR
    ccfg = reference_correlated(pt_dbm=13.0, alpha=0.15).build()
    xi = stationary_reports(ccfg)[0].amp.state
    lam = ccfg.groups[0].eigvals
    v = CorrelatedModel.for_group(ccfg).noise(xi)
    t1 = llr(_cn(rng, (n, lam.size)) * np.sqrt(lam + v), lam, v)
    t0 = llr(_cn(rng, (n, lam.size)) * np.sqrt(v), lam, v)
    mid = correlated_llr_midpoint(xi, 0, ccfg)
    worst = 0.0
    for l in np.linspace(mid - 2 * max(abs(mid), 5), mid + 2 * max(abs(mid), 5), 20):
        op = correlated_detection(xi, 0, ccfg, l)
        worst = max(worst, check(op.p_md, np.mean(t1 < l)), check(op.p_fa, np.mean(t0 >= l)))
    ok = iso_worst <= 3 and worst <= 3
    _finish(6, "detection formulas vs direct simulation", ok,
            f"max |dev| isotropic {iso_worst:.2f} SE, correlated {worst:.2f} SE", start, 300)


def _gamma_by_quad(m, x):
    f = lambda t: np.exp((m - 1) * np.log(t) - t - special.gammaln(m)) if t > 0 else float(m == 1)
    pts = [p for p in (m - 1.0,) if 0 < p < x]
    return integrate.quad(f, 0, x, points=pts or None, epsabs=1e-15, epsrel=1e-13, limit=400)[0]


def test_c07_special_functions():
    start = time.time()
    gam = 0.0
    for m in (1, 2, 3, 5, 8, 16, 32, 48, 64):
        for x in (0.01, 0.5, 1.0, 5.0, 20.0, 50.0, 63.0, 64.0, 100.0, 200.0):
            gam = max(gam, abs(reg_lower_gamma(m, x) - _gamma_by_quad(m, x)))

    rates, l, n = np.array([1.0, 2.0, 3.0]), 0.7, 10_000_000
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(10):
        hits += int(np.sum(rng.exponential(1 / rates, size=(n // 10, 3)).sum(axis=1) > l))
    p_mc = hits / n
    p = hypoexp_survival(rates, l)
    z = abs(p - p_mc) / np.sqrt(p * (1 - p) / n)

    r2 = np.random.default_rng(8)
    expm = 0.0
    for _ in range(50):
        r = np.sort(r2.uniform(0.1, 10.0, int(r2.integers(2, 7))))
        if np.min(np.diff(r)) < 0.05:
            continue
        for x in (0.1, 1.0, 3.0):
            expm = max(expm, abs(hypoexp_survival(r, x) - hypoexp_survival_expm(r, x)))
    ok = gam < 1e-12 and z <= 3 and expm < 1e-9
    _finish(7, "special functions", ok,
            f"gamma max abs err {gam:.1e}, hypoexp vs MC {z:.2f} SE, vs expm {expm:.1e}", start, 120)


def test_c08_decoupling():
    start = time.time()
    rng = np.random.default_rng(88)
    reports = []
    for i in range(10):
        M = int(rng.choice([4, 8]))
        G = int(rng.integers(2, 4)) if M == 8 else 2
        ranks = [int(rng.integers(1, M // G + 1)) for _ in range(G)]
        eig = [np.sort(rng.uniform(0.3, 3.0, r))[::-1] for r in ranks]
        cfg = SystemConfig.from_alpha(alpha=rng.uniform(0.2, 0.8), users_per_group=1000,
                                      groups=orthogonal_groups(M, eig, seed=i), n_antennas=M,
                                      activity_prob=rng.uniform(0.05, 0.3), noise_var=10 ** rng.uniform(-2, -0.5))
        reports.append(decoupling_check(cfg, seed=i))
    gs = orthogonal_groups(8, [[3.0, 1.0], [2.0, 1.5]], seed=1)
    pcfg = SystemConfig.from_alpha(alpha=0.3, users_per_group=1000, groups=gs, n_antennas=8,
                                   activity_prob=0.1, noise_var=0.05)
    pgp = pgp_experiment(pcfg, seed=0, trials=6, amp_cfg=AmpConfig(max_iters=100))
    n_pass = sum(r.passed for r in reports)
    resid = max(r.off_subspace_residual for r in reports)
    ok = n_pass == len(reports) and pgp.consistent
    _finish(8, "decoupling of orthogonal groups", ok,
            f"{n_pass}/{len(reports)} decoupling checks, max off-subspace {resid:.1e}, "
            f"PGP-joint {np.round(pgp.mean_diff_db, 4).tolist()} dB +- {np.round(3 * pgp.diff_se_db, 4).tolist()}",
            start, 1200)


def test_c09_many_antenna_detection():
    start = time.time()
    pe = []
    for M in (8, 16, 32, 64, 128, 256):
        cfg = reference_isotropic(n_antennas=M).build()
        tau = stationary_reports(cfg)[0].amp.state
        ops = [isotropic_detection(tau, g, cfg, isotropic_llr_midpoint(tau, g, cfg)) for g in range(cfg.n_groups)]
        pe.append(float(np.mean([o.p_md + o.p_fa for o in ops])))
    ok = all(a > b for a, b in zip(pe, pe[1:])) and pe[-1] < 1e-6
    _finish(9, "detection error vanishes with M", ok,
            "  ".join(f"M={M}: {p:.1e}" for M, p in zip((8, 16, 32, 64, 128, 256), pe)), start, 60)


def test_c10_finite_size_offset():
    start = time.time()
    step = 0.025
    alphas = _grid(0.525, 0.725, step)
    scen = reference_isotropic(users_per_group=500)
    preds = [predict(scen.replace(alpha=a).build()) for a in alphas]
    ip = next((i for i in range(1, len(alphas))
               if preds[i - 1].amp_nmse_db - preds[i].amp_nmse_db > 10), None)
    assert ip is not None, "no predicted transition on the grid"
    a_p = alphas[ip]
    pe = lambda p: p.p_md + p.p_fa
    thr = float(np.sqrt(pe(preds[ip - 1]) * pe(preds[ip])))
    res = run_experiment(ExperimentPlan(scen, sweep_values=alphas, n_trials=10, seed=10, predict=False,
                                        amp=AmpConfig(max_iters=200)))
    emp = [p.mean["p_md"] + p.mean["p_fa"] for p in res.points]
    ie = next((i for i in range(len(alphas)) if all(e <= thr for e in emp[i:])), None)
    a_e = alphas[ie] if ie is not None else float("inf")
    ok = a_e - a_p <= 0.05 + 1e-9
    _finish(10, "finite-size detection transition offset", ok,
            f"predicted {a_p:g}, empirical {a_e:g} (P_e threshold {thr:.3g}; "
            f"empirical P_e {', '.join(f'{e:.3g}' for e in emp)})", start, 1200)
