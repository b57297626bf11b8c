import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leofim.geometry import (C, ConstellationState, ReceiverState, antenna_position,
                             rotation_matrix, satellite_position, snapshot)

angles = st.floats(-np.pi * 0.999, np.pi, allow_nan=False)
coords = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = st.tuples(coords, coords, coords).map(np.array)


def receiver(p=(0, 0, 0), phi=(0, 0, 0), v=(0, 0, 0), s=((0, 0, 0),)):
    return ReceiverState(p=p, phi=phi, v=v, s_tilde=s)


def test_rotation_identity():
    assert np.array_equal(rotation_matrix([0, 0, 0]), np.eye(3))


def test_rotation_quarter_turn_about_z_maps_x_to_y():
    np.testing.assert_allclose(rotation_matrix([np.pi / 2, 0, 0]) @ [1, 0, 0], [0, 1, 0],
                               atol=1e-15)


def test_rotation_orthogonal():
    Q = rotation_matrix([0.3, -0.2, 0.7])
    assert np.linalg.norm(Q.T @ Q - np.eye(3)) < 1e-12


def test_rotation_order_is_yaw_pitch_roll():
    a, p, r = 0.4, -0.3, 1.1
    rz = rotation_matrix([a, 0, 0])
    ry = rotation_matrix([0, p, 0])
    rx = rotation_matrix([0, 0, r])
    np.testing.assert_allclose(rotation_matrix([a, p, r]), rz @ ry @ rx, atol=1e-15)


@given(angles, angles, angles)
def test_rotation_is_proper(a, p, r):
    Q = rotation_matrix([a, p, r])
    assert np.linalg.norm(Q.T @ Q - np.eye(3)) < 1e-12
    assert abs(np.linalg.det(Q) - 1) < 1e-12


def test_centroid_antenna_sits_at_p():
    rx = receiver(p=(1, 2, 3))
    np.testing.assert_array_equal(antenna_position(rx, 0, 0, 0.1), [1, 2, 3])


def test_antenna_offset_with_identity_rotation():
    rx = receiver(p=(1, 2, 3), s=((1, 0, 0),))
    np.testing.assert_array_equal(antenna_position(rx, 0, 0, 0.1), [2, 2, 3])


def test_antenna_linear_propagation():
    # third slot is k = 2 with 0-based indexing
    rx = receiver(v=(10, 0, 0))
    np.testing.assert_allclose(antenna_position(rx, 0, 2, 0.1), [2, 0, 0])


def test_satellite_reference_slot():
    cs = ConstellationState.linear([[1e6, 0, 5e5]], [[0, 7500, 0]], 3, 1.0)
    np.testing.assert_array_equal(satellite_position(cs, 0, 0), [1e6, 0, 5e5])


def test_satellite_one_second_later():
    cs = ConstellationState.linear([[1e6, 0, 5e5]], [[0, 7500, 0]], 3, 1.0)
    np.testing.assert_allclose(satellite_position(cs, 0, 1), [1e6, 7500, 5e5])


def test_satellite_displacement_after_three_steps():
    cs = ConstellationState.linear([[0, 0, 5.5e5]], [[7500, 0, 0]], 4, 0.025)
    disp = satellite_position(cs, 0, 3) - satellite_position(cs, 0, 0)
    assert np.linalg.norm(disp) == pytest.approx(562.5, rel=1e-12)
    np.testing.assert_allclose(disp / np.linalg.norm(disp), [1, 0, 0])


def test_no_relative_velocity_gives_zero_doppler():
    v = np.array([10.0, -3.0, 2.0])
    cs = ConstellationState.linear([[1e5, 0, 5.5e5], [0, 2e5, 6e5]], [v, v], 3, 0.5)
    snap = snapshot(receiver(v=v), cs)
    np.testing.assert_array_equal(snap.nu, 0.0)


def test_approaching_satellite_doppler_sign():
    cs = ConstellationState.linear([[0, 0, 550e3]], [[0, 0, -C / 1000]], 1, 1.0)
    snap = snapshot(receiver(), cs)
    assert snap.nu[0, 0] == pytest.approx(1e-3, rel=1e-12)


def test_zenith_delay():
    cs = ConstellationState.linear([[0, 0, 550e3]], [[7500, 0, 0]], 1, 1.0)
    snap = snapshot(receiver(), cs)
    assert snap.tau[0, 0, 0] == pytest.approx(550e3 / 299792458, rel=1e-15)
    assert snap.tau[0, 0, 0] == pytest.approx(1.834e-3, abs=1e-6)


@given(vec3, st.tuples(angles, angles, angles), vec3, st.integers(1, 3))
def test_snapshot_directions_and_ranges(p, phi, v, n_k):
    s = np.array([[0.1, 0, 0], [0, -0.2, 0.05]])
    rx = ReceiverState(p=p, phi=phi, v=v, s_tilde=s)
    cs = ConstellationState.linear([[3e5, -1e5, 5.5e5], [-2e5, 4e5, 6e5]],
                                   [[0, 7500, 0], [7000, 0, 100]], n_k, 0.2)
    snap = snapshot(rx, cs)
    np.testing.assert_allclose(np.linalg.norm(snap.delta, axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(snap.delta_bU, axis=-1), 1.0, atol=1e-12)
    diff = snap.antenna_positions[None] - cs.positions[:, :, None, :]
    np.testing.assert_allclose(C * snap.tau, np.linalg.norm(diff, axis=-1), rtol=1e-15)


@given(st.tuples(angles, angles, angles))
def test_rotation_can_move_into_the_array(phi):
    s = np.array([[0.1, 0.2, 0.0], [-0.3, 0.05, 0.02]])
    rx = ReceiverState(p=[5, 6, 7], phi=phi, v=[1, 2, 3], s_tilde=s)
    turned = ReceiverState(p=[5, 6, 7], phi=[0, 0, 0], v=[1, 2, 3],
                           s_tilde=s @ rotation_matrix(phi).T)
    for u in range(2):
        np.testing.assert_allclose(antenna_position(rx, u, 2, 0.3),
                                   antenna_position(turned, u, 2, 0.3), atol=1e-12)


@given(vec3, vec3)
def test_doppler_bounded_by_relative_speed(v_u, v_b):
    cs = ConstellationState.linear([[1e5, 2e5, 5.5e5]], [v_b], 2, 0.5)
    snap = snapshot(receiver(v=v_u), cs)
    bound = np.linalg.norm(v_b - v_u) / C
    assert np.all(np.abs(snap.nu) <= bound * (1 + 1e-12) + 1e-300)


def test_radial_relative_velocity_attains_doppler_bound():
    cs = ConstellationState.linear([[3e5, 0, 4e5]], [[-3, 0, -4]], 1, 1.0)
    snap = snapshot(receiver(), cs)
    assert snap.nu[0, 0] == pytest.approx(5 / C, rel=1e-12)


def test_snapshot_is_pure():
    rx = receiver(p=(1, 2, 3), phi=(0.1, 0.2, 0.3), v=(1, 0, 0), s=((0.1, 0, 0), (0, 0.1, 0)))
    cs = ConstellationState.linear([[1e5, 0, 5.5e5]], [[0, 7500, 0]], 3, 0.1)
    a, b = snapshot(rx, cs), snapshot(rx, cs)
    for name in ("d", "delta", "tau", "nu", "delta_bU"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_zero_range_is_rejected():
    cs = ConstellationState.linear([[0, 0, 0]], [[1, 0, 0]], 1, 1.0)
    with pytest.raises(ValueError, match="degenerate"):
        snapshot(receiver(), cs)


@pytest.mark.parametrize("bad", [dict(phi=(4.0, 0, 0)), dict(phi=(-np.pi, 0, 0)),
                                 dict(s=np.zeros((0, 3))), dict(p=(np.nan, 0, 0))])
def test_receiver_validation(bad):
    with pytest.raises(ValueError):
        receiver(**bad)


def test_constellation_validation():
    with pytest.raises(ValueError):
        ConstellationState.linear([[0, 0, 1e6]], [[0, 0, 0]], 2, 0.0)
    with pytest.raises(ValueError):
        ConstellationState.linear([[0, 0, 1e6]], [[0, 0, 0]], 0, 1.0)
