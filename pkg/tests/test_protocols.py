import math
from dataclasses import replace

import numpy as np
import pytest

from beamaid.array import CONTINUOUS, DISCRETE, codebook_directions, hpbw, make_beam
from beamaid.channel import WaveformConfig, calibrated
from beamaid.fim import ETA, ETA_PRIME, FisherMatrix, accumulate, fim_batch, peb, to_eta_prime
from beamaid.geometry import LocationState, Scenario, eta_prime_vector, jacobian_T, scene_paths
from beamaid.protocols import (
    CBS,
    C_JPBS,
    D_JPBS,
    ProtocolConfig,
    _planning_objective,
    aod_coverage,
    aod_stats,
    cbs_transactions,
    child_directions,
    estimator_surrogate,
    optimize_beam_directions,
    read_trace,
    run_cbs,
    run_jpbs,
    run_protocol,
    select_active_antennas,
    write_trace,
)

SCENE = calibrated(Scenario())


def _trace(kind, pos=(10.0, 0.0), seed=0, scene=SCENE, **kw):
    return run_protocol(scene.with_rx(pos), ProtocolConfig(kind=kind, rng_seed=seed, **kw))


def test_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(kind="nope")
    with pytest.raises(ValueError):
        ProtocolConfig(initial_active=3)
    with pytest.raises(ValueError):
        ProtocolConfig(feedback="oracle")
    assert ProtocolConfig(kind=C_JPBS).codebook == CONTINUOUS
    assert ProtocolConfig(kind=D_JPBS).codebook == DISCRETE


# --- conventional search


def test_cbs_schedule():
    t = _trace(CBS)
    assert [r.n_active for r in t.iterations] == [2, 4, 8, 16, 32, 64]
    assert [r.n_beams for r in t.iterations] == [2, 3, 3, 3, 3, 3]
    assert t.transactions_approx == 17 == cbs_transactions(64)
    assert t.transactions_exact == 17 + 2 * 6 + 1
    assert 15 <= t.transactions_approx <= 18


def test_cbs_counts_position_independent():
    a, b = _trace(CBS, (5, 0)), _trace(CBS, (30, 20))
    assert (a.transactions_approx, a.transactions_exact) == (b.transactions_approx, b.transactions_exact)


def test_cbs_single_path_alignment():
    # the 64-beam codebook has no beam at exactly 0 rad, so the best achievable is
    # the nearest codebook direction, at most 1/64 away in sin-space
    s = calibrated(Scenario(scatterers=()))
    cb = codebook_directions(64)
    for y in (0.0, 0.5, -1.0, 4.0):
        t = _trace(CBS, (15.0, y), scene=s)
        u = math.sin(math.atan2(y, 15.0))
        d = np.abs(np.sin(cb) - u)
        assert abs(math.sin(t.f_sel.pointing) - u) == pytest.approx(d.min(), abs=1e-12)
        assert d.min() <= 1 / 64 + 1e-12


def test_cbs_children_bracket_parent():
    for n in (4, 8, 16, 32, 64):
        for parent in codebook_directions(n // 2):
            kids = child_directions(parent, None, n)
            assert len(kids) == 3
            assert min(kids) <= parent <= max(kids) or abs(math.sin(parent)) > 1 - 1 / n


def test_cbs_tie_breaks_toward_runner_up():
    # from sin = 1/4 the 8-beam candidates at 1/8 and 3/8 are nearest, -1/8 and 5/8 tie
    parent = math.asin(0.25)
    up = np.sin(child_directions(parent, math.pi / 2, 8))
    down = np.sin(child_directions(parent, -math.pi / 2, 8))
    np.testing.assert_allclose(up, [1 / 8, 3 / 8, 5 / 8])
    np.testing.assert_allclose(down, [-1 / 8, 1 / 8, 3 / 8])


# --- estimator surrogate


def _jprime(pos=(10.0, 0.0), n=8, thetas=(-0.2, 0.0, 0.2)):
    s = SCENE.with_rx(pos)
    paths = scene_paths(s)
    W = np.stack([make_beam(t, n, s, DISCRETE).weights for t in thetas], axis=1)
    J = FisherMatrix(fim_batch(W, paths, s, WaveformConfig.from_scene(s)).sum(axis=0), ETA, len(paths))
    return to_eta_prime(J, jacobian_T(paths, s)), eta_prime_vector(paths, s)


def test_surrogate_degenerate_limit():
    Jp, truth = _jprime()
    big = FisherMatrix(Jp.entries * 1e12, ETA_PRIME, Jp.path_count)
    est = estimator_surrogate(big, truth, np.random.default_rng(0))
    np.testing.assert_allclose(est.beta, truth[:3], atol=1e-4)


def test_surrogate_mean_mode_returns_truth():
    Jp, truth = _jprime()
    est = estimator_surrogate(Jp, truth, None)
    np.testing.assert_allclose(est.beta, truth[:3])
    np.testing.assert_allclose(est.nuisance, truth[3:])


def test_surrogate_sample_covariance():
    Jp, truth = _jprime()
    rng = np.random.default_rng(7)
    draws = np.array([estimator_surrogate(Jp, truth, rng).beta - truth[:3] for _ in range(10_000)])
    draws[:, 2] = (draws[:, 2] + np.pi) % (2 * np.pi) - np.pi  # orientation is reported mod 2 pi
    est = estimator_surrogate(Jp, truth, rng)
    C = est.covariance
    S = np.cov(draws.T)
    scale = np.sqrt(np.outer(np.diag(C), np.diag(C)))
    assert np.all(np.abs(S - C) <= 0.05 * scale)
    np.testing.assert_allclose(np.diag(S), np.diag(C), rtol=0.05)
    assert np.allclose(C, C.T) and np.linalg.eigvalsh(C).min() >= 0


def test_surrogate_rms_matches_peb():
    Jp, truth = _jprime()
    rng = np.random.default_rng(11)
    err = np.array([estimator_surrogate(Jp, truth, rng).position - truth[:2] for _ in range(10_000)])
    assert math.sqrt(np.mean(np.sum(err**2, axis=1))) == pytest.approx(peb(Jp), rel=0.03)


def test_surrogate_unobservable():
    J = FisherMatrix(np.zeros((5, 5)), ETA_PRIME, 1)
    assert estimator_surrogate(J, np.zeros(5), np.random.default_rng(0)) is None


# --- AOD statistics


def _state(pos, cov):
    return LocationState(position=np.array(pos, float), orientation=0.0, covariance=np.asarray(cov, float))


def test_aod_stats_zero_covariance():
    th, sd = aod_stats(_state((10, 0), np.zeros((3, 3))), SCENE)
    assert th == 0.0 and sd == 0.0


def test_aod_stats_isotropic():
    for pos in ((10, 0), (3, 4), (-6, 8)):
        r = math.hypot(*pos)
        _, sd = aod_stats(_state(pos, np.diag([0.04, 0.04, 1e-3])), SCENE)
        assert sd == pytest.approx(0.2 / r, rel=1e-12)


def test_aod_stats_monte_carlo():
    rng = np.random.default_rng(5)
    for pos, sig in (((10, 0), 0.5), ((6, 8), 1.0), ((3, -4), 0.2)):
        r = math.hypot(*pos)
        A = rng.standard_normal((2, 2))
        cov2 = A @ A.T
        cov2 *= (sig / math.sqrt(np.trace(cov2) / 2)) ** 2
        cov = np.zeros((3, 3))
        cov[:2, :2] = cov2
        assert sig / r <= 0.1
        th, sd = aod_stats(_state(pos, cov), SCENE)
        pts = rng.multivariate_normal(pos, cov2, 10_000)
        bearings = np.arctan2(pts[:, 1], pts[:, 0])
        assert np.std(bearings) == pytest.approx(sd, rel=0.1)


def test_aod_stats_at_transmitter():
    with pytest.raises(ValueError):
        aod_stats(_state((0, 0), np.eye(3)), SCENE)


# --- antenna selection


def test_select_zero_sigma_hits_cap():
    assert select_active_antennas(0.1, 0.0, 2, SCENE) == (64, False)


def test_select_large_sigma_hierarchical():
    sig = 10 * hpbw(8, 0.2, SCENE)
    assert select_active_antennas(0.2, sig, 4, SCENE) == (8, True)


def test_select_no_estimate_hierarchical():
    assert select_active_antennas(None, None, 8, SCENE) == (16, True)


def test_select_rule_definition():
    for th in (0.0, 0.7, 1.3):
        for sig in (0.01, 0.05, 0.2):
            n, hier = select_active_antennas(th, sig, 2, SCENE)
            if not hier:
                assert 3 * hpbw(n, th, SCENE) >= sig
                assert n == 64 or 3 * hpbw(2 * n, th, SCENE) < sig


def test_select_endfire_allows_more_antennas():
    # wider beams toward endfire mean a given AOD spread is covered with more antennas
    sig = 0.2
    n0, _ = select_active_antennas(0.0, sig, 2, SCENE)
    n1, _ = select_active_antennas(1.3, sig, 2, SCENE)
    assert n1 > n0


# --- beam direction optimization


def _planning_setup(pos=(12.0, 3.0)):
    s = SCENE.with_rx(pos)
    paths = scene_paths(s)
    wf = WaveformConfig.from_scene(s)
    W = np.stack([make_beam(t, 4, s, DISCRETE).weights for t in codebook_directions(4)[1:]], axis=1)
    J = FisherMatrix(fim_batch(W, paths, s, wf).sum(axis=0), ETA, len(paths))
    return s, paths, wf, J


def test_zero_offset_equals_triple_beam():
    s, paths, wf, J = _planning_setup()
    th = paths[0].aod
    obj = _planning_objective([[th, th, th]], 16, CONTINUOUS, J, paths, s, wf)[0]
    one = fim_batch(make_beam(th, 16, s).weights[:, None], paths, s, wf)[0]
    Jp = to_eta_prime(FisherMatrix(J.entries + 3 * one, ETA, len(paths)), jacobian_T(paths, s))
    assert obj == pytest.approx(peb(Jp) ** 2, rel=1e-9)


def test_continuous_optimum_is_grid_minimum():
    s, paths, wf, J = _planning_setup()
    th, sig = paths[0].aod, 0.05
    grid = np.round(np.arange(0, 0.3 + 1e-12, 0.0025), 6)
    out = optimize_beam_directions(th, sig, J, paths, s, 16, CONTINUOUS, grid, wf, coverage_slack=None)
    sets = np.stack([np.full_like(grid, th), th + grid, th - grid], axis=1)
    obj = _planning_objective(sets, 16, CONTINUOUS, J, paths, s, wf)
    best = sets[np.argmin(obj)]
    np.testing.assert_allclose(out, best)
    # a ten times finer grid lands within one coarse step
    fine = np.arange(0, 0.3 + 1e-12, 0.00025)
    out_f = optimize_beam_directions(th, sig, J, paths, s, 16, CONTINUOUS, fine, wf, coverage_slack=None)
    assert abs(out_f[1] - out[1]) <= 0.0025 + 1e-9


def test_continuous_beams_feasible():
    s, paths, wf, J = _planning_setup()
    th, sig = paths[0].aod, 0.02
    out = optimize_beam_directions(th, sig, J, paths, s, 16, CONTINUOUS, wf=wf)
    assert out[0] == pytest.approx(th)
    assert all(abs(t - th) <= max(sig, 0.3) + 1e-12 for t in out)


def test_discrete_beams_from_codebook():
    s, paths, wf, J = _planning_setup()
    th, sig = paths[0].aod, 0.1
    out = optimize_beam_directions(th, sig, J, paths, s, 16, DISCRETE, wf=wf)
    cb = codebook_directions(16)
    assert all(np.min(np.abs(cb - t)) < 1e-12 for t in out)
    assert out[0] == pytest.approx(cb[np.argmin(np.abs(cb - th))])
    spacing = np.max(np.diff(cb))
    assert all(abs(t - th) <= max(sig, spacing) + 2 * spacing for t in out)


def test_coverage_prefers_spread_beams():
    cov = aod_coverage([[0, 0, 0], [0, 0.1, -0.1]], 0.0, 0.1, 0.1)
    assert cov[1] > cov[0]
    assert aod_coverage([[0, 0, 0]], 0.0, 0.0, 0.1)[0] == 1.0
    # single interval of width w around the mean holds erf(w / (2 sqrt 2 sigma))
    assert aod_coverage([[0.0]], 0.0, 1.0, 2.0)[0] == pytest.approx(math.erf(1 / math.sqrt(2)))


# --- full protocol runs


def test_jpbs_close_range_saves_transactions():
    for kind in (D_JPBS, C_JPBS):
        t = _trace(kind, (2.0, 0.0))
        assert t.transactions_approx <= 0.5 * cbs_transactions(64)


@pytest.mark.parametrize("kind", [D_JPBS, C_JPBS])
@pytest.mark.parametrize("pos", [(2.0, 0.0), (9.0, -7.0), (25.0, 15.0), (3.0, 5.0)])
def test_trace_invariants(kind, pos):
    t = _trace(kind, pos, seed=4)
    I = len(t.iterations)
    assert t.transactions_exact - t.transactions_approx == 2 * I + 1
    assert t.iterations[-1].n_active == 64
    assert t.iterations[0].hierarchical
    # replay equivalence: snapshot i is the sum of all per-beam FIMs so far
    seen = []
    for r in t.iterations:
        seen += r.beam_fims
        np.testing.assert_allclose(r.fim.entries, accumulate(seen).entries, rtol=1e-12)
        assert len(r.beam_fims) == r.n_beams
    assert t.f_sel in t.iterations[-1].beams.beams
    assert t.peb == t.iterations[-1].peb


def test_peb_non_increasing_without_scatterer():
    s = calibrated(Scenario(scatterers=()))
    for pos in ((4.0, 1.0), (12.0, -5.0), (20.0, 10.0)):
        for kind in (D_JPBS, C_JPBS):
            t = _trace(kind, pos, seed=2, scene=s)
            pebs = [r.peb for r in t.iterations if math.isfinite(r.peb)]
            assert all(b <= a * (1 + 1e-9) for a, b in zip(pebs, pebs[1:]))


def test_seeded_runs_are_reproducible():
    for kind in (CBS, D_JPBS, C_JPBS):
        a, b = _trace(kind, (14, -6), seed=9), _trace(kind, (14, -6), seed=9)
        assert a.snr_db == b.snr_db
        assert np.array_equal([a.peb, a.reb], [b.peb, b.reb], equal_nan=True)
        assert [r.n_active for r in a.iterations] == [r.n_active for r in b.iterations]


def test_single_path_broadside_same_final_beam():
    s = calibrated(Scenario(scatterers=()))
    for x in (3.0, 8.0, 15.0):
        c = _trace(CBS, (x, 0.0), scene=s)
        d = _trace(D_JPBS, (x, 0.0), scene=s, feedback="mean")
        np.testing.assert_allclose(c.f_sel.weights, d.f_sel.weights)


def test_wrong_kind_rejected():
    with pytest.raises(ValueError):
        run_cbs(SCENE, ProtocolConfig(kind=D_JPBS))
    with pytest.raises(ValueError):
        run_jpbs(SCENE, ProtocolConfig(kind=CBS))


def test_trace_round_trip(tmp_path):
    t = _trace(D_JPBS, (7.0, 2.0))
    path = tmp_path / "trace.csv"
    write_trace(t, path)
    rows = read_trace(path)
    assert len(rows) == len(t.iterations)
    for row, rec in zip(rows, t.iterations):
        assert int(row["n_active"]) == rec.n_active
        assert int(row["n_beams"]) == rec.n_beams
        assert float(row["peb_m"]) == pytest.approx(rec.peb, rel=1e-8)
        pts = [float(v) for v in row["pointing_rad"].split(";")]
        np.testing.assert_allclose(pts, [b.pointing for b in rec.beams], rtol=1e-8)
