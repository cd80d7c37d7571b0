import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamaid.geometry import (
    SPEED_OF_LIGHT,
    InvalidSceneError,
    PathParams,
    Scenario,
    beta_from_los,
    eta_prime_layout,
    eta_prime_vector,
    eta_vector,
    jacobian_T,
    merge_unresolvable,
    path_params_from_scene,
    paths_from_eta_prime,
    scene_paths,
    wrap_angle,
)

from conftest import random_scene


def test_los_delay_and_broadside_aod():
    paths = path_params_from_scene(Scenario(rx_pos=(10, 0), scatterers=()))
    assert len(paths) == 1
    assert paths[0].delay == pytest.approx(10 / SPEED_OF_LIGHT, rel=1e-12)
    assert paths[0].delay * 1e9 == pytest.approx(33.3564, abs=1e-4)
    assert paths[0].aod == 0.0


def test_scatterer_delay():
    paths = path_params_from_scene(Scenario())
    assert paths[1].delay * 1e9 == pytest.approx(47.1731, abs=1e-4)
    assert paths[1].delay == pytest.approx(2 * math.sqrt(50) / SPEED_OF_LIGHT, rel=1e-12)
    assert paths[1].aod == pytest.approx(math.pi / 4)


def test_los_path_loss():
    h0 = path_params_from_scene(Scenario())[0].gain
    lam = SPEED_OF_LIGHT / 60e9
    assert 20 * math.log10(abs(h0)) == pytest.approx(-81.99, abs=5e-3)
    assert abs(h0) ** 2 == pytest.approx(1 / (2 * math.pi * 10 / lam) ** 2, rel=1e-12)


@pytest.mark.parametrize(
    "kw",
    [dict(rx_pos=(0, 0)), dict(rx_pos=(5, 5)), dict(tx_pos=(5, 5))],
)
def test_coincident_points_rejected(kw):
    with pytest.raises(InvalidSceneError):
        path_params_from_scene(Scenario(**kw))


def test_aoa_is_relative_to_orientation():
    s = Scenario(rx_pos=(10, 0), rx_orientation=0.3, scatterers=())
    pa = path_params_from_scene(s)[0]
    assert pa.aoa == pytest.approx(wrap_angle(math.pi - 0.3))


# --- merging


def _pair(dtau, aoa_b=0.1, h=(1e-4 + 2e-4j)):
    a = PathParams(delay=30e-9, aod=0.0, aoa=0.1, gain=h)
    b = PathParams(delay=30e-9 + dtau, aod=0.5, aoa=aoa_b, gain=h, scatterer=0)
    return [a, b]


def test_time_resolvable_pair_unchanged():
    paths = _pair(20e-9)
    assert merge_unresolvable(paths, Scenario()) == paths


def test_duplicate_pair_merges_to_double_gain():
    h = 3e-5 - 1e-5j
    out = merge_unresolvable(_pair(0.0, h=h), Scenario())
    assert len(out) == 1
    assert out[0].gain == pytest.approx(2 * h)


def test_merge_keeps_stronger_member():
    a = PathParams(delay=30e-9, aod=0.0, aoa=0.1, gain=1e-4)
    b = PathParams(delay=31e-9, aod=0.5, aoa=0.1 + 1e-3, gain=5e-4j, scatterer=0)
    (m,) = merge_unresolvable([a, b], Scenario())
    assert m.scatterer == 0 and m.delay == b.delay and m.aod == b.aod
    assert m.gain == pytest.approx(1e-4 + 5e-4j)


def test_angle_resolvable_pair_unchanged():
    paths = _pair(0.0, aoa_b=0.6)
    assert len(merge_unresolvable(paths, Scenario())) == 2


def test_literal_rule_is_selectable():
    s = Scenario()
    # separation in sin(aoa) of 0.01: above the literal threshold d/(N_r lam) = 1/128,
    # below the standard one lam/(N_r d) = 1/32
    a = PathParams(delay=30e-9, aod=0.0, aoa=0.0, gain=1e-4)
    b = PathParams(delay=30e-9, aod=0.4, aoa=math.asin(0.01), gain=1e-4, scatterer=0)
    assert len(merge_unresolvable([a, b], s, "standard")) == 1
    assert len(merge_unresolvable([a, b], s, "literal")) == 2
    with pytest.raises(ValueError):
        merge_unresolvable([a, b], s, "bogus")


def test_default_scene_paths_not_merged():
    paths = scene_paths(Scenario())
    assert len(paths) == 2
    assert paths[1].delay - paths[0].delay == pytest.approx(13.8167e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(10e-9, 40e-9),
            st.floats(-1.5, 1.5),
            st.floats(1e-6, 1e-3),
            st.floats(-math.pi, math.pi),
        ),
        min_size=1,
        max_size=6,
    )
)
def test_merge_idempotent_and_pairwise_resolvable(raw):
    s = Scenario()
    paths = [
        PathParams(delay=t, aod=0.0, aoa=a, gain=m * complex(math.cos(ph), math.sin(ph)), scatterer=None if i == 0 else i - 1)
        for i, (t, a, m, ph) in enumerate(raw)
    ]
    once = merge_unresolvable(paths, s)
    assert merge_unresolvable(once, s) == once
    for i in range(len(once)):
        for j in range(i + 1, len(once)):
            a, b = once[i], once[j]
            assert abs(a.delay - b.delay) > 1 / s.bandwidth or abs(math.sin(a.aoa) - math.sin(b.aoa)) > s.wavelength / (
                s.n_rx * s.element_spacing
            )
    # total gain is conserved
    assert sum(p.gain for p in once) == pytest.approx(sum(p.gain for p in paths), abs=1e-12)


# --- LOS equivalence


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-40, 40), st.floats(-40, 40), st.floats(0, 2 * math.pi, exclude_max=True)
)
def test_orientation_identity(px, py, alpha):
    if math.hypot(px, py) < 0.1 or math.hypot(px - 5, py - 5) < 0.1:
        return
    s = Scenario(rx_pos=(px, py), rx_orientation=alpha)
    los = path_params_from_scene(s)[0]
    assert wrap_angle(math.pi + los.aod - los.aoa - s.rx_orientation) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.floats(-40, 40), st.floats(-40, 40), st.floats(0, 2 * math.pi, exclude_max=True))
def test_los_round_trip(px, py, alpha):
    if math.hypot(px, py) < 0.1:
        return
    s = Scenario(rx_pos=(px, py), rx_orientation=alpha, scatterers=())
    los = path_params_from_scene(s)[0]
    beta = beta_from_los(los.delay, los.aod, los.aoa)
    s2 = s.with_rx(beta[:2], beta[2])
    los2 = path_params_from_scene(s2)[0]
    assert los2.delay == pytest.approx(los.delay, rel=1e-9)
    assert wrap_angle(los2.aod - los.aod) == pytest.approx(0, abs=1e-9)
    assert wrap_angle(los2.aoa - los.aoa) == pytest.approx(0, abs=1e-9)
    assert los2.gain == pytest.approx(los.gain, rel=1e-6)


# --- parameter vectors and Jacobian


def test_layout_dimensions():
    paths = scene_paths(Scenario())
    lay = eta_prime_layout(paths)
    assert len(lay) == 3 + 2 + 4 * (len(paths) - 1)
    assert len(eta_vector(paths)) == 5 * len(paths)
    T = jacobian_T(paths, Scenario())
    assert T.shape == (10, 9)


def test_paths_from_eta_prime_inverts_eta_prime_vector(rng):
    for _ in range(20):
        s = random_scene(rng, n_scat=2)
        paths = path_params_from_scene(s)
        rebuilt, s2 = paths_from_eta_prime(eta_prime_vector(paths, s), paths, s)
        np.testing.assert_allclose(eta_vector(rebuilt), eta_vector(paths), rtol=1e-12, atol=1e-15)
        assert s2.rx_pos == pytest.approx(s.rx_pos)


def test_jacobian_los_delay_row():
    s = Scenario()
    T = jacobian_T(scene_paths(s), s)
    np.testing.assert_allclose(T[0, :2], [1 / SPEED_OF_LIGHT, 0.0], atol=1e-20)


def test_jacobian_los_rows_ignore_scatterer():
    s = Scenario()
    paths = scene_paths(s)
    T = jacobian_T(paths, s)
    cols = [j for j, (k, name) in enumerate(eta_prime_layout(paths)) if name in ("s_x", "s_y")]
    assert np.all(T[:5, cols] == 0)


def test_jacobian_gain_blocks_identity():
    s = Scenario()
    paths = scene_paths(s)
    T = jacobian_T(paths, s)
    lay = eta_prime_layout(paths)
    for k in range(len(paths)):
        jr, ji = lay.index((k, "h_re")), lay.index((k, "h_im"))
        np.testing.assert_array_equal(T[5 * k + 3 : 5 * k + 5][:, [jr, ji]], np.eye(2))


def finite_difference_T(paths, scene, step=1e-6):
    x0 = eta_prime_vector(paths, scene)
    cols = []
    layout = eta_prime_layout(paths)
    for j in range(len(x0)):
        # gains are tiny, so their step is relative; geometry steps are in meters/radians
        h = step * abs(x0[j]) if layout[j][1] in ("h_re", "h_im") and x0[j] else step
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        ep = eta_vector(paths_from_eta_prime(xp, paths, scene)[0])
        em = eta_vector(paths_from_eta_prime(xm, paths, scene)[0])
        d = ep - em
        for k in range(len(paths)):  # angle rows: wrap the difference
            d[5 * k + 1 : 5 * k + 3] = wrap_angle(d[5 * k + 1 : 5 * k + 3])
        cols.append(d / (2 * h))
    return np.array(cols).T


def jacobian_rel_error(paths, scene):
    T = jacobian_T(paths, scene)
    F = finite_difference_T(paths, scene)
    norms = np.linalg.norm(T, axis=1)
    return float(np.max(np.linalg.norm(T - F, axis=1) / norms))


def test_jacobian_matches_finite_differences_default_scene():
    s = Scenario()
    assert jacobian_rel_error(scene_paths(s), s) < 1e-5


def test_jacobian_zero_length_segment():
    s = Scenario()
    paths = path_params_from_scene(s)
    with pytest.raises(InvalidSceneError):
        jacobian_T(paths, Scenario(rx_pos=(10, 0), tx_pos=(10, 0), scatterers=((5, 5),)))
