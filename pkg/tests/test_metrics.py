import csv

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import integrate, special

from replica_access.metrics import (correlated_ce_error, correlated_detection, hypoexp_rates,
                                    hypoexp_survival, hypoexp_survival_expm, isotropic_ce_error,
                                    isotropic_detection, isotropic_llr_midpoint, reg_lower_gamma,
                                    reg_upper_gamma, roc, write_roc_csv)
from replica_access.metrics import _partial_fraction_weights
from replica_access.model import CorrelatedGroup, IsotropicGroup, SystemConfig

from conftest import small_iso


def _iso_cfg(s2=1.0, M=4, noise_var=0.05):
    # alpha large and tau = 0 pin the equivalent noise to noise_var
    return small_iso(variances=(s2,), M=M, noise_var=noise_var, alpha=1.0)


def _corr_cfg(lam, noise_var=0.05, alpha=1.0, M=None):
    lam = np.asarray(lam, float)
    M = M or lam.size
    U = np.eye(M, dtype=complex)[:, :lam.size]
    return SystemConfig.from_alpha(alpha=alpha, users_per_group=100, groups=[CorrelatedGroup(U, lam)],
                                   n_antennas=M, activity_prob=0.1, noise_var=noise_var)


# -- special functions ------------------------------------------------------------------------

def test_reg_lower_gamma_examples():
    for x in (0.0, 0.3, 2.0, 9.0):
        assert reg_lower_gamma(1, x) == pytest.approx(1 - np.exp(-x), abs=1e-15)
    assert reg_lower_gamma(1, 0.0) == 0.0
    assert reg_lower_gamma(5, 1e4) == 1.0
    ref = integrate.quad(lambda t: t**2 * np.exp(-t) / 2, 0, 2.5, epsabs=1e-14, epsrel=1e-12)[0]
    assert abs(reg_lower_gamma(3, 2.5) - ref) < 1e-12


def test_reg_gamma_complement():
    x = np.linspace(0, 80, 50)
    np.testing.assert_allclose(reg_lower_gamma(7, x) + reg_upper_gamma(7, x), 1.0, atol=1e-14)
    with pytest.raises(ValueError):
        reg_lower_gamma(2.5, 1.0)
    with pytest.raises(ValueError):
        reg_lower_gamma(2, -1.0)


def test_reg_lower_gamma_small_values_keep_relative_accuracy():
    assert reg_lower_gamma(20, 0.5) == pytest.approx(special.gammainc(20, 0.5), rel=1e-12)


def test_hypoexp_single_rate_and_origin():
    assert hypoexp_survival([2.0], 0.8) == pytest.approx(np.exp(-1.6), rel=1e-15)
    assert hypoexp_survival([1.0, 2.5, 7.0], 0.0) == pytest.approx(1.0, abs=1e-12)


def test_hypoexp_tie_fallback():
    near = hypoexp_survival([1.0, 1.0 + 1e-12, 3.0], 0.7)
    exact = hypoexp_survival_expm([1.0, 1.0, 3.0], 0.7)
    assert near == pytest.approx(exact, rel=1e-9)
    # Erlang(2, 1) survival
    assert hypoexp_survival([1.0, 1.0], 1.3) == pytest.approx(np.exp(-1.3) * 2.3, rel=1e-12)


def test_hypoexp_rejects_nonpositive():
    with pytest.raises(ValueError):
        hypoexp_survival([1.0, 0.0], 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.05, 50.0), min_size=2, max_size=8, unique=True))
def test_partial_fraction_weights_sum_to_one(rates):
    r = np.sort(np.array(rates))
    assume(np.all(np.diff(r) / r[1:] > 1e-3))
    w = _partial_fraction_weights(r)
    assume(np.sum(np.abs(w)) < 1e6)
    assert abs(w.sum() - 1.0) < 1e-10 * max(1.0, np.abs(w).sum() / 1e3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=5), st.floats(0.0, 10.0))
def test_hypoexp_partial_fraction_vs_expm(rates, l):
    r = np.sort(np.array(rates))
    assume(np.all(np.diff(r) / r[1:] > 0.05))
    assert hypoexp_survival(r, l) == pytest.approx(hypoexp_survival_expm(r, l), abs=1e-9)


# -- isotropic detection ----------------------------------------------------------------------

def test_isotropic_detection_extremes():
    cfg = _iso_cfg()
    op = isotropic_detection(0.0, 0, cfg, 0.0, on="statistic")
    assert op.p_md == 0.0 and op.p_fa == 1.0
    op = isotropic_detection(0.0, 0, cfg, np.inf, on="statistic")
    assert op.p_md == 1.0 and op.p_fa == 0.0
    op = isotropic_detection(0.0, 0, cfg, -1.0, on="statistic")
    assert op.p_md == 0.0 and op.p_fa == 1.0
    with pytest.raises(ValueError):
        isotropic_detection(0.0, 0, cfg, 0.0, on="bogus")


def test_isotropic_llr_mapping_consistent():
    # LLR >= l  <=>  ||y||^2 >= l'
    cfg = _iso_cfg(s2=1.0, M=4, noise_var=0.05)
    v, s2, M = 0.05, 1.0, 4
    for l in (-3.0, 0.0, 2.2, 10.0):
        op = isotropic_detection(0.0, 0, cfg, l)
        stat = op.transformed_threshold
        llr_at = stat * s2 / (v * (v + s2)) - M * np.log1p(s2 / v)
        assert llr_at == pytest.approx(l, abs=1e-9)


def test_isotropic_roc_vs_simulation():
    rng = np.random.default_rng(0)
    cfg = _iso_cfg(s2=1.0, M=4, noise_var=0.05)
    n = 200_000
    z = lambda var: np.sum(np.abs(np.sqrt(var / 2) * (rng.standard_normal((n, 4))
                                                      + 1j * rng.standard_normal((n, 4)))) ** 2, axis=1)
    e1, e0 = z(1.05), z(0.05)
    for lp in np.linspace(0.05, 3.0, 12):
        op = isotropic_detection(0.0, 0, cfg, lp, on="statistic")
        for p, emp in ((op.p_md, np.mean(e1 < lp)), (op.p_fa, np.mean(e0 >= lp))):
            assert abs(p - emp) <= 3 * np.sqrt(max(p * (1 - p), 1 / n) / n)


def test_isotropic_ce_error_examples():
    assert isotropic_ce_error(0.0, 0, _iso_cfg(s2=1.0, noise_var=1e-300)) < 1e-290
    assert isotropic_ce_error(0.0, 0, _iso_cfg(s2=1.0, noise_var=1e12)) == pytest.approx(1.0, rel=1e-10)
    assert isotropic_ce_error(0.0, 0, _iso_cfg(s2=1.0, noise_var=1.0)) == pytest.approx(0.5)


def test_isotropic_requires_isotropic_group():
    with pytest.raises(TypeError):
        isotropic_detection(0.0, 0, _corr_cfg([1.0]), 0.0)


# -- correlated detection ---------------------------------------------------------------------

def test_rank_one_reduces_to_isotropic():
    iso = _iso_cfg(s2=2.0, M=1, noise_var=0.1)
    corr = _corr_cfg([2.0], noise_var=0.1)
    for l in (-2.0, 0.0, 1.5, 4.0):
        a = isotropic_detection(0.0, 0, iso, l)
        b = correlated_detection(0.0, 0, corr, l)
        assert a.p_md == pytest.approx(b.p_md, rel=1e-12, abs=1e-15)
        assert a.p_fa == pytest.approx(b.p_fa, rel=1e-12, abs=1e-15)


def test_correlated_detection_at_zero_statistic():
    op = correlated_detection(0.0, 0, _corr_cfg([3.0, 1.0]), 0.0, on="statistic")
    assert op.p_md == pytest.approx(0.0, abs=1e-14) and op.p_fa == pytest.approx(1.0)


def test_hypoexp_rates_ordering():
    r = hypoexp_rates(np.array([0.1, 0.2]), 0, _corr_cfg([3.0, 1.0]))
    assert np.all(r.null_rates > r.active_rates) and np.all(r.active_rates > 0)


def test_correlated_ce_error_examples():
    lam = np.array([3.0, 1.0])
    cfg = _corr_cfg(lam, noise_var=1e-300)
    np.testing.assert_allclose(correlated_ce_error(np.array([1e15, 1e15]), 0, cfg).per_mode, lam, rtol=1e-12)
    assert np.all(correlated_ce_error(np.zeros(2), 0, cfg).per_mode < 1e-290)
    eq = correlated_ce_error(np.zeros(1), 0, _corr_cfg([1.0], noise_var=1.0))
    assert eq.per_mode[0] == pytest.approx(0.5) and eq.nmse == pytest.approx(0.5)


# -- ROC properties ---------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.floats(0.01, 10.0), st.floats(1e-3, 1.0))
def test_isotropic_roc_monotone(M, s2, v):
    cfg = _iso_cfg(s2=s2, M=M, noise_var=v)
    pts = roc(lambda t: isotropic_detection(0.0, 0, cfg, t), np.linspace(-20, 60, 60))
    md = np.array([p.p_md for p in pts])
    fa = np.array([p.p_fa for p in pts])
    assert np.all(np.diff(md) >= -1e-13) and np.all(np.diff(fa) <= 1e-13)
    assert np.all((md >= 0) & (md <= 1) & (fa >= 0) & (fa <= 1))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.05, 5.0), min_size=1, max_size=4), st.floats(1e-3, 1.0))
def test_correlated_roc_monotone(lam, v):
    lam = np.sort(np.array(lam))[::-1]
    cfg = _corr_cfg(lam, noise_var=v)
    pts = roc(lambda t: correlated_detection(0.0, 0, cfg, t), np.linspace(-20, 60, 60))
    md = np.array([p.p_md for p in pts])
    fa = np.array([p.p_fa for p in pts])
    assert np.all(np.diff(md) >= -1e-9) and np.all(np.diff(fa) <= 1e-9)
    assert md[0] < 1e-3 and fa[-1] < 1e-3


def test_midpoint_detection_improves_with_antennas():
    pe = []
    for M in (8, 16, 32):
        cfg = _iso_cfg(s2=1.0, M=M, noise_var=0.3)
        op = isotropic_detection(0.0, 0, cfg, isotropic_llr_midpoint(0.0, 0, cfg))
        pe.append(op.p_md + op.p_fa)
    assert pe[0] > pe[1] > pe[2]


def test_write_roc_csv(tmp_path):
    cfg = _iso_cfg()
    pts = roc(lambda t: isotropic_detection(0.0, 0, cfg, t), [0.0, 1.0])
    path = write_roc_csv(tmp_path / "roc.csv", pts, {"alpha": 1.0})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["threshold", "transformed_threshold", "p_md", "p_fa"] and len(rows) == 3
