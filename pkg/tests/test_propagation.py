import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfmimo._validation import GeometryError, TooCloseError
from nfmimo.geometry import Environment, Wall, mirror_point, rectangular_room
from nfmimo.propagation import (
    Transmitter,
    channel_from_sinks,
    channel_from_sources,
    enumerate_virtual_sinks,
    enumerate_virtual_sources,
    linear_array,
    perimeter_array,
    sink_response,
    sink_response_matrix,
    steering,
    steering_matrix,
    wall_paths,
)

LAM = 0.2


def str_oracle(d, lam):
    x = d / lam
    return cmath.exp(2j * math.pi * x) / (4 * math.pi * x) ** 2


def first_order_channel_oracle(tx, amp, array, walls, lam):
    """Order-1 channel from explicit specular bounce points, independent of the package."""
    h = []
    for m in array:
        acc = str_oracle(math.dist(tx, m), lam)
        for w in walls:
            a, b = np.asarray(w.a[:2]), np.asarray(w.b[:2])
            t = (b - a) / np.linalg.norm(b - a)
            n = np.array([-t[1], t[0]])
            dp, dq = np.dot(tx[:2] - a, n), np.dot(m[:2] - a, n)
            if dp * dq <= 0:
                continue
            sp, sq = np.dot(tx[:2] - a, t), np.dot(m[:2] - a, t)
            s = sp + (sq - sp) * abs(dp) / (abs(dp) + abs(dq))
            if not 0 < s < np.linalg.norm(b - a):
                continue
            bounce = a + s * t
            d = np.linalg.norm(tx[:2] - bounce) + np.linalg.norm(m[:2] - bounce)
            acc += w.reflection_coefficient * str_oracle(d, lam)
        h.append(amp * acc)
    return np.array(h)


# -- steering ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "d,expected",
    [(LAM, 1 / (4 * math.pi) ** 2), (LAM / 2, -1 / (2 * math.pi) ** 2)],
)
def test_steering_examples(d, expected):
    v = steering([0, 0, 0], [d, 0, 0], LAM)
    assert v.real == pytest.approx(expected, rel=1e-12)
    assert abs(v.imag) < 1e-12 * abs(expected)


def test_steering_345():
    v = steering([3, 4, 0], [0, 0, 0], 1.0)
    assert v.real == pytest.approx(1 / (20 * math.pi) ** 2, rel=1e-12)
    assert abs(v.imag) < 1e-12 * abs(v.real)


def test_steering_guard():
    with pytest.raises(TooCloseError):
        steering([0, 0, 0], [LAM / 101, 0, 0], LAM)
    steering([0, 0, 0], [LAM / 99, 0, 0], LAM)


def test_steering_modes():
    d = 1.37
    x = d / LAM
    ph = cmath.exp(2j * math.pi * x)
    assert steering([0, 0, 0], [d, 0, 0], LAM, "free_space") == pytest.approx(ph / (4 * math.pi * x))
    assert steering([0, 0, 0], [d, 0, 0], LAM, "phase") == pytest.approx(ph)
    with pytest.raises(ValueError):
        steering([0, 0, 0], [d, 0, 0], LAM, "bogus")


@given(st.floats(0.01, 50), st.floats(0.01, 50))
def test_steering_magnitude_law(d1, d2):
    v1 = abs(steering([0, 0, 0], [d1, 0, 0], LAM))
    assert v1 == pytest.approx((LAM / (4 * math.pi * d1)) ** 2, rel=1e-12)
    if d1 < d2 * (1 - 1e-9):
        assert v1 > abs(steering([0, 0, 0], [d2, 0, 0], LAM))


def test_steering_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 5, (4, 2)), np.zeros(4)])
    arr = perimeter_array(6.4, 6.4, 1.6)
    S = steering_matrix(pts, arr, LAM)
    for i, p in enumerate(pts):
        for m, q in enumerate(arr):
            assert S[i, m] == pytest.approx(steering(p, q, LAM), rel=1e-14)


# -- enumeration ---------------------------------------------------------------------


def test_wall_paths():
    assert wall_paths(3, 0) == [()]
    assert wall_paths(2, 2) == [(), (0,), (1,), (0, 1), (1, 0)]
    paths = wall_paths(4, 3)
    assert len(paths) == 1 + 4 + 12 + 36
    assert all(p[i] != p[i + 1] for p in paths for i in range(len(p) - 1))


def test_sources_reference_room_count():
    env = rectangular_room()
    srcs = enumerate_virtual_sources([1.3, 2.2, 0], env, 1)
    assert len(srcs) == 5
    assert srcs[0].order == 0 and srcs[0].amplitude == 1
    assert [s.path for s in srcs] == [(), (0,), (1,), (2,), (3,)]
    assert len(enumerate_virtual_sources([1.3, 2.2, 0], env, 0)) == 1


def test_source_amplitude_product():
    env = Environment((Wall([0, 0, 0], [5, 0, 0], 0.5), Wall([5, 0, 0], [5, 5, 0], 0.8)), 5, 5)
    srcs = enumerate_virtual_sources([1, 1, 0], env, 2)
    amps = {s.path: s.amplitude for s in srcs}
    assert amps[(0, 1)] == pytest.approx(0.4)
    assert amps[(1,)] == pytest.approx(0.8)


def test_hallway_channel_keeps_three_sources():
    env = Environment((Wall([0, 0, 0], [10, 0, 0]), Wall([0, 2, 0], [3, 2, 0])), 10, 2)
    tx = Transmitter([1, 1, 0])
    ap = np.array([[9.0, 1.5, 0.0]])
    srcs = enumerate_virtual_sources(tx.location, env, 2)
    h = channel_from_sources(tx, srcs, ap, env, LAM)
    keep = [s for s in srcs if s.path in [(), (0,), (1, 0)]]
    expected = sum(s.amplitude * steering(s.location, ap[0], LAM) for s in keep)
    assert h[0] == pytest.approx(expected, rel=1e-12)


def test_sinks_mirror_each_wall():
    env = rectangular_room()
    arr = perimeter_array(6.4, 6.4, 1.6)
    sinks = enumerate_virtual_sinks(arr, env, 1)
    for m, per in enumerate(sinks):
        assert len(per) == 5
        assert per[0].order == 0 and per[0].gain == 1
        np.testing.assert_array_equal(per[0].location, arr[m])
        for s in per[1:]:
            np.testing.assert_allclose(s.location, mirror_point(arr[m], env.wall(s.path[0]).line))
    assert all(len(p) == 1 for p in enumerate_virtual_sinks(arr, env, 0))


# -- channel synthesis ------------------------------------------------------------------


def test_single_direct_source():
    arr = perimeter_array(6.4, 6.4, 1.6)
    tx = Transmitter([2.1, 3.3, 0], 0.5 - 1j)
    srcs = enumerate_virtual_sources(tx.location, rectangular_room(), 0)
    h = channel_from_sources(tx, srcs, arr, rectangular_room(), LAM)
    expected = [(0.5 - 1j) * str_oracle(math.dist(tx.location, m), LAM) for m in arr]
    np.testing.assert_allclose(h, expected, rtol=1e-12)


def test_empty_source_list():
    arr = perimeter_array(6.4, 6.4, 1.6)
    h = channel_from_sources(Transmitter([1, 1, 0]), [], arr, rectangular_room(), LAM)
    assert np.all(h == 0) and len(h) == len(arr)


def test_order1_matches_bounce_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        W, D = rng.uniform(2, 10, 2)
        r = rng.uniform(0.2, 1.0)
        env = rectangular_room(W, D, r)
        arr = perimeter_array(W, D, rng.uniform(0.3, 2.0))
        tx = Transmitter(np.append(rng.uniform([0.2, 0.2], [W - 0.2, D - 0.2]), 0.0))
        srcs = enumerate_virtual_sources(tx.location, env, 1)
        h = channel_from_sources(tx, srcs, arr, env, LAM)
        expected = first_order_channel_oracle(tx.location, 1.0, arr, env.walls, LAM)
        np.testing.assert_allclose(h, expected, rtol=1e-9)


def test_duality_random_first_order():
    rng = np.random.default_rng(6)
    for _ in range(200):
        W, D = rng.uniform(1, 10, 2)
        env = rectangular_room(W, D, rng.uniform(0.1, 1.0))
        arr = perimeter_array(W, D, (2 * (W + D)) / rng.integers(4, 65))
        tx = Transmitter(np.append(rng.uniform([0.05, 0.05], [W - 0.05, D - 0.05]), 0.0),
                         complex(*rng.normal(size=2)))
        hs = channel_from_sources(tx, enumerate_virtual_sources(tx.location, env, 1), arr, env, LAM)
        hk = channel_from_sinks(tx, enumerate_virtual_sinks(arr, env, 1), env, LAM)
        assert np.max(np.abs(hs - hk) / np.abs(hs)) <= 1e-10


def test_duality_second_order_generic_tx():
    env = rectangular_room(6.4, 6.4, 0.7)
    arr = perimeter_array(6.4, 6.4, 0.8)
    # a generic point: no bounce chain grazes a corner
    tx = Transmitter([2.345, 4.012, 0])
    hs = channel_from_sources(tx, enumerate_virtual_sources(tx.location, env, 2), arr, env, LAM)
    hk = channel_from_sinks(tx, enumerate_virtual_sinks(arr, env, 2), env, LAM)
    np.testing.assert_allclose(hs, hk, rtol=1e-10)


def test_reciprocal_path_length():
    rng = np.random.default_rng(7)
    env = rectangular_room()
    arr = perimeter_array(6.4, 6.4, 0.4)
    for _ in range(1000):
        tx = np.append(rng.uniform(0.1, 6.3, 2), 0)
        for w in env.walls:
            d1 = np.linalg.norm(mirror_point(tx, w.line) - arr, axis=1)
            d2 = np.linalg.norm(tx - mirror_point(arr, w.line), axis=1)
            assert np.max(np.abs(d1 - d2)) <= 1e-12


def test_sink_only_direct_is_free_space():
    env = rectangular_room()
    arr = perimeter_array(6.4, 6.4, 1.6)
    tx = Transmitter([3.1, 1.7, 0])
    hk = channel_from_sinks(tx, enumerate_virtual_sinks(arr, env, 0), env, LAM)
    hs = channel_from_sources(tx, enumerate_virtual_sources(tx.location, env, 0), arr, env, LAM)
    np.testing.assert_array_equal(hk, hs)


def test_sink_outside_every_sector_is_direct_only():
    # a short wall far off to the side; no bounce reaches the array
    env = Environment((Wall([20, 20, 0], [21, 20, 0]),), 30, 30)
    arr = perimeter_array(6.4, 6.4, 1.6)
    tx = Transmitter([3.1, 1.7, 0])
    hk = channel_from_sinks(tx, enumerate_virtual_sinks(arr, env, 1), env, LAM)
    direct = [str_oracle(math.dist(tx.location, m), LAM) for m in arr]
    np.testing.assert_allclose(hk, direct, rtol=1e-12)


def test_sink_response_matrix_matches_loop():
    env = rectangular_room()
    arr = perimeter_array(6.4, 6.4, 1.6)
    sinks = enumerate_virtual_sinks(arr, env, 1)
    rng = np.random.default_rng(8)
    pts = np.column_stack([rng.uniform(0.2, 6.2, (30, 2)), np.zeros(30)])
    R, close = sink_response_matrix(pts, sinks, env, LAM)
    assert not close.any()
    for i, p in enumerate(pts):
        np.testing.assert_allclose(R[i], sink_response(p, sinks, env, LAM), rtol=1e-12)


def test_sink_response_matrix_close_points():
    env = rectangular_room()
    arr = perimeter_array(6.4, 6.4, 1.6)
    sinks = enumerate_virtual_sinks(arr, env, 1)
    pts = np.array([arr[3], [3.0, 3.0, 0.0]])
    with pytest.raises(TooCloseError):
        sink_response_matrix(pts, sinks, env, LAM)
    R, close = sink_response_matrix(pts, sinks, env, LAM, exclude_close=True)
    assert close.tolist() == [True, False]
    assert np.all(R[0] == 0)


@settings(max_examples=50)
@given(st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_channel_linear_in_tx_amplitude(c):
    env = rectangular_room()
    arr = perimeter_array(6.4, 6.4, 1.6)
    loc = [1.9, 4.4, 0]
    srcs = enumerate_virtual_sources(loc, env, 1)
    h1 = channel_from_sources(Transmitter(loc), srcs, arr, env, LAM)
    hc = channel_from_sources(Transmitter(loc, c), srcs, arr, env, LAM)
    np.testing.assert_allclose(hc, c * h1, rtol=1e-15, atol=0)


# -- arrays ------------------------------------------------------------------------------


@pytest.mark.parametrize("spacing,M", [(0.5, 256), (2.0, 64), (8.0, 16)])
def test_perimeter_counts(spacing, M):
    arr = perimeter_array(6.4, 6.4, spacing * LAM)
    assert len(arr) == M
    np.testing.assert_array_equal(arr[0], [0, 0, 0])
    on_wall = (arr[:, 0] == 0) | (arr[:, 0] == 6.4) | (arr[:, 1] == 0) | (arr[:, 1] == 6.4)
    assert on_wall.all()
    steps = np.linalg.norm(np.diff(np.vstack([arr, arr[:1]]), axis=0), axis=1)
    # equal spacing except across corners
    assert np.median(steps) == pytest.approx(spacing * LAM, rel=1e-9)


def test_perimeter_counterclockwise():
    arr = perimeter_array(6.4, 6.4, 1.6)
    assert arr[1, 1] == 0 and arr[1, 0] > 0
    assert arr[4, 0] == 6.4


def test_linear_array_centered():
    arr = linear_array(6.4, 6.4, 0.4)
    assert np.mean(arr[:, 0]) == pytest.approx(3.2)
    assert np.all(arr[:, 1] == 0)


def test_transmitter_rejects_zero_amplitude():
    with pytest.raises(ValueError):
        Transmitter([1, 1, 0], 0)


def test_array_rejects_duplicates():
    with pytest.raises(GeometryError):
        channel_from_sources(Transmitter([1, 1, 0]), [], [[0, 0, 0], [0, 0, 0]], rectangular_room(), LAM)


@pytest.mark.parametrize("spacing", [0.5, 2.0, 8.0])
def test_perimeter_corners_exact(spacing):
    arr = perimeter_array(6.4, 6.4, spacing * LAM)
    rows = {tuple(p) for p in arr[:, :2].tolist()}
    assert {(0.0, 0.0), (6.4, 0.0), (6.4, 6.4), (0.0, 6.4)} <= rows
