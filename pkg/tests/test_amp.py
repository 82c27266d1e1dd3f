import csv

import numpy as np
import pytest

from replica_access.amp import AmpConfig, empirical_ce_error, empirical_detection, run_amp
from replica_access.errors import DataContractError, DivergedError
from replica_access.model import Scene, generate_scene, reference_isotropic
from replica_access.replica.isotropic import iterate_isotropic
from replica_access.sim import predict

from conftest import small_iso


def test_zero_activity_scene():
    cfg = small_iso(rho=0.0, M=2)
    sc = generate_scene(cfg, 0)
    res = run_amp(sc, cfg, AmpConfig(max_iters=5))
    assert not np.any(res.estimate)
    assert np.all(res.mse_trace == 0)


def test_noiseless_overdetermined_recovery():
    cfg = small_iso(M=2, alpha=1.2, rho=0.1, noise_var=1e-12, K=500)
    res = run_amp(generate_scene(cfg, 1), cfg, AmpConfig(max_iters=200))
    assert res.final_nmse_db <= -40


def test_matches_prediction_above_transition():
    cfg = reference_isotropic(alpha=0.675, users_per_group=500).build()
    nmse = [run_amp(generate_scene(cfg, s), cfg, AmpConfig(max_iters=200)).nmse_trace[-1] for s in range(4)]
    assert abs(10 * np.log10(np.mean(nmse)) - predict(cfg).amp_nmse_db) <= 0.5


def test_tracks_state_evolution():
    cfg = small_iso(variances=(1.0, 0.5), M=2, alpha=0.5, rho=0.1, noise_var=0.01, K=4000)
    _, se, _ = iterate_isotropic(cfg)
    runs = [run_amp(generate_scene(cfg, s), cfg, AmpConfig(max_iters=12)).mse_trace[:, -1] for s in (1, 2)]
    emp = np.mean(runs, axis=0)
    np.testing.assert_allclose(emp, se[1:13], rtol=0.25)


def test_onsager_term_is_needed():
    cfg = small_iso(variances=(1.0, 0.5), M=2, alpha=0.5, rho=0.1, noise_var=0.01, K=1000)
    sc = generate_scene(cfg, 3)
    good = run_amp(sc, cfg, AmpConfig(max_iters=50)).final_nmse_db
    try:
        bad = run_amp(sc, cfg, AmpConfig(max_iters=50, onsager=False)).final_nmse_db
    except DivergedError:
        bad = np.inf
    assert bad > good + 10


def test_permutation_equivariance():
    cfg = small_iso(M=2, alpha=0.5, rho=0.1, noise_var=0.01, K=300)
    sc = generate_scene(cfg, 4)
    perm = np.random.default_rng(0).permutation(cfg.n_users)
    sp = Scene(sc.pilots[:, perm].copy(), sc.activity[perm].copy(), sc.channels[perm].copy(),
               sc.signal[perm].copy(), sc.noise.copy(), sc.received.copy(), sc.rng_seed)
    a = run_amp(sc, cfg, AmpConfig(max_iters=20))
    b = run_amp(sp, cfg, AmpConfig(max_iters=20))
    np.testing.assert_allclose(b.estimate, a.estimate[perm], atol=1e-10)


def test_shape_mismatch_is_data_contract_error():
    cfg = small_iso(M=2, K=200)
    sc = generate_scene(small_iso(M=2, K=100), 0)
    with pytest.raises(DataContractError):
        run_amp(sc, cfg)


def test_detection_at_infinite_thresholds():
    cfg = small_iso(M=2, alpha=0.6, rho=0.2, K=400)
    sc = generate_scene(cfg, 5)
    res = run_amp(sc, cfg, AmpConfig(max_iters=30))
    low = empirical_detection(res, sc, cfg, -np.inf)[0]
    high = empirical_detection(res, sc, cfg, np.inf)[0]
    assert low.p_md == 0 and low.p_fa == 1
    assert high.p_md == 1 and high.p_fa == 0
    assert low.n_active == int(sc.activity.sum())


def test_detection_high_snr_is_nearly_perfect():
    cfg = small_iso(M=8, alpha=0.8, rho=0.1, noise_var=1e-4, K=500)
    sc = generate_scene(cfg, 6)
    res = run_amp(sc, cfg, AmpConfig(max_iters=100))
    d = empirical_detection(res, sc, cfg, np.log(9.0))[0]
    assert d.p_md + d.p_fa < 0.01
    assert 0 <= d.se_md < 0.05


def test_ce_error_limits():
    cfg = small_iso(M=2, alpha=1.2, rho=0.1, noise_var=1e-12, K=400)
    sc = generate_scene(cfg, 7)
    res = run_amp(sc, cfg, AmpConfig(max_iters=100))
    assert empirical_ce_error(res, sc, cfg)[0] < 1e-6
    # nobody passes an infinite threshold
    assert empirical_ce_error(res, sc, cfg, threshold=np.inf) == [None]


def test_config_validation():
    with pytest.raises(ValueError):
        AmpConfig(max_iters=0)
    with pytest.raises(ValueError):
        AmpConfig(damping=0.0)
    with pytest.raises(ValueError):
        AmpConfig(noise_update="guess")


def test_trace_csv(tmp_path):
    cfg = small_iso(variances=(1.0, 0.5), M=2, K=200)
    res = run_amp(generate_scene(cfg, 8), cfg, AmpConfig(max_iters=4))
    with res.write_trace(tmp_path / "trace.csv", cfg.n_groups).open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "group", "mse"]
    assert len(rows) == 1 + res.iterations_run * 2
