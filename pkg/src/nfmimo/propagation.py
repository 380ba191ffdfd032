"""Near-field steering, image sources/sinks and ground-truth channel synthesis."""

from dataclasses import dataclass

import numpy as np

from ._validation import (
    TooCloseError,
    check_array,
    check_location,
    check_nonneg_int,
    check_positive,
)
from .geometry import (
    Environment,
    mirror_point,
    rectangular_room,
    visibility_mask,
    visibility_matrix,
)

__all__ = [
    "STEERING_MODES",
    "VirtualSource",
    "VirtualSink",
    "Transmitter",
    "Environment",
    "rectangular_room",
    "steering",
    "steering_matrix",
    "steering_from_distance",
    "sink_response",
    "sink_response_matrix",
    "wall_paths",
    "enumerate_virtual_sources",
    "enumerate_virtual_sinks",
    "channel_from_sources",
    "channel_from_sinks",
    "perimeter_array",
    "linear_array",
]

#: ``squared``: exp(j 2 pi d / lam) / (4 pi d / lam)^2
#: ``free_space``: exp(j 2 pi d / lam) / (4 pi d / lam)
#: ``phase``: exp(j 2 pi d / lam)
STEERING_MODES = ("squared", "free_space", "phase")

_GUARD = 0.01  # minimum distance in wavelengths


@dataclass(frozen=True)
class VirtualSource:
    location: np.ndarray
    amplitude: complex
    order: int
    path: tuple


@dataclass(frozen=True)
class VirtualSink:
    antenna_index: int
    location: np.ndarray
    gain: complex
    order: int
    path: tuple

    def __eq__(self, other):
        if not isinstance(other, VirtualSink):
            return NotImplemented
        return (
            self.antenna_index == other.antenna_index
            and np.array_equal(self.location, other.location)
            and self.gain == other.gain
            and self.order == other.order
            and tuple(self.path) == tuple(other.path)
        )


@dataclass(frozen=True)
class Transmitter:
    location: np.ndarray
    amplitude: complex = 1.0 + 0.0j

    def __post_init__(self):
        object.__setattr__(self, "location", check_location(self.location, "transmitter"))
        if abs(self.amplitude) == 0:
            raise ValueError("transmitter amplitude must be non-zero")
        object.__setattr__(self, "amplitude", complex(self.amplitude))


def steering_from_distance(d, wavelength, mode="squared"):
    """Steering value as a function of distance, without the near-field guard."""
    if mode not in STEERING_MODES:
        raise ValueError(f"unknown steering mode {mode!r}; expected one of {STEERING_MODES}")
    x = np.asarray(d, dtype=float) / wavelength
    phase = np.exp(2j * np.pi * x)
    if mode == "squared":
        return phase / (4.0 * np.pi * x) ** 2
    if mode == "free_space":
        return phase / (4.0 * np.pi * x)
    return phase


def _steer(d, wavelength, mode):
    if np.any(d < _GUARD * wavelength):
        raise TooCloseError(
            f"steering distance {np.min(d):.3g} m below guard {_GUARD * wavelength:.3g} m"
        )
    return steering_from_distance(d, wavelength, mode)


def steering(src, dst, wavelength, mode="squared"):
    """Line-of-sight response between two points.

    Parameters
    ----------
    src, dst : array_like
        Points (or broadcast-compatible batches of points), meters.
    wavelength : float
        Carrier wavelength, meters.
    mode : {"squared", "free_space", "phase"}
        Path-loss law. ``"squared"`` divides by the squared normalized distance.

    Raises
    ------
    TooCloseError
        If any distance is below ``wavelength / 100``.
    """
    diff = np.asarray(src, dtype=float) - np.asarray(dst, dtype=float)
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    out = _steer(d, wavelength, mode)
    return complex(out) if np.ndim(out) == 0 else out


def steering_matrix(points, array, wavelength, mode="squared"):
    """``S[i, m] = steering(points[i], array[m])`` for batches of points."""
    points = np.asarray(points, dtype=float)
    array = np.asarray(array, dtype=float)
    diff = points[:, None, :] - array[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return _steer(d, wavelength, mode)


def wall_paths(n_walls, max_order):
    """All wall sequences of length <= ``max_order`` without immediate repeats.

    Sorted by length, then lexicographically.
    """
    paths = [()]
    frontier = [()]
    for _ in range(max_order):
        nxt = []
        for p in frontier:
            for w in range(n_walls):
                if p and p[-1] == w:
                    continue
                nxt.append(p + (w,))
        paths.extend(nxt)
        frontier = nxt
    return paths


def _images(point, env, max_order):
    out = []
    for path in wall_paths(len(env.walls), max_order):
        loc = point
        gain = 1.0
        for w in path:
            wall = env.walls[w]
            loc = mirror_point(loc, wall.line)
            gain *= wall.reflection_coefficient
        out.append((path, loc, gain))
    return out


def enumerate_virtual_sources(tx, env, max_order):
    """The direct source at ``tx`` plus every image up to ``max_order``.

    Amplitudes exclude the transmitter amplitude, which is applied at
    synthesis time.
    """
    tx = check_location(tx, "tx")
    max_order = check_nonneg_int(max_order, "max_order")
    return [
        VirtualSource(loc, complex(gain), len(path), path)
        for path, loc, gain in _images(tx, env, max_order)
    ]


def enumerate_virtual_sinks(array, env, max_order):
    """Per-antenna lists of virtual sinks (the antenna itself comes first)."""
    array = check_array(array)
    max_order = check_nonneg_int(max_order, "max_order")
    return [
        [
            VirtualSink(m, loc, complex(gain), len(path), path)
            for path, loc, gain in _images(loc_m, env, max_order)
        ]
        for m, loc_m in enumerate(array)
    ]


def channel_from_sources(tx, sources, array, env, wavelength, mode="squared"):
    """Sum of image-source contributions at each antenna, visibility pruned.

    ``tx`` is a :class:`Transmitter` (its amplitude scales the channel).
    """
    array = check_array(array)
    wavelength = check_positive(wavelength, "wavelength")
    h = np.zeros(len(array), dtype=complex)
    for src in sources:
        visible = visibility_mask(src.location, src.path, env, array)
        if not visible.any():
            continue
        s = steering(src.location[np.newaxis, :], array[visible], wavelength, mode)
        h[visible] += src.amplitude * s
    return tx.amplitude * h


def sink_response(tx_location, sinks, env, wavelength, mode="squared"):
    """Composite sink response ``sum_k g_mk Cvs(tx, s_mk) Str(tx, l_mk)`` per antenna."""
    tx_location = check_location(tx_location, "tx")
    h = np.zeros(len(sinks), dtype=complex)
    for m, per_antenna in enumerate(sinks):
        acc = 0.0j
        for sink in per_antenna:
            if sink.path and not visibility_mask(sink.location, sink.path, env, tx_location)[0]:
                continue
            acc += sink.gain * steering(tx_location, sink.location, wavelength, mode)
        h[m] = acc
    return h


def sink_response_matrix(points, sinks, env, wavelength, mode="squared", exclude_close=False):
    """Composite sink responses for a batch of candidate transmitter points.

    Returns ``(R, close)`` where ``R[i, m]`` sums the visible sinks of
    antenna ``m`` for a transmitter at ``points[i]`` and ``close`` flags points
    within ``wavelength / 100`` of any sink. Close points raise
    :class:`TooCloseError` unless ``exclude_close`` is set, in which case
    their row is left at zero.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    R = np.zeros((len(points), len(sinks)), dtype=complex)
    close = np.zeros(len(points), dtype=bool)
    groups = {}
    for per_antenna in sinks:
        for sink in per_antenna:
            groups.setdefault(tuple(sink.path), []).append(sink)
    for path, group in groups.items():
        locs = np.array([s.location for s in group])
        gains = np.array([s.gain for s in group], dtype=complex)
        ant = np.array([s.antenna_index for s in group])
        diff = locs[:, None, :] - points[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        near = d < _GUARD * wavelength
        close |= near.any(axis=0)
        vis = visibility_matrix(locs, path, env, points) if path else 1.0
        contrib = gains[:, None] * vis * steering_from_distance(
            np.where(near, wavelength, d), wavelength, mode
        )
        np.add.at(R.T, ant, contrib)
    if close.any():
        if not exclude_close:
            raise TooCloseError("candidate point within the steering guard of a virtual sink")
        R[close] = 0.0
    return R, close


def channel_from_sinks(tx, sinks, env, wavelength, mode="squared"):
    """Channel synthesized from per-antenna virtual sinks."""
    wavelength = check_positive(wavelength, "wavelength")
    return tx.amplitude * sink_response(tx.location, sinks, env, wavelength, mode)


def perimeter_array(width, depth, spacing):
    """Antennas equally spaced along the room boundary.

    Starts at corner (0, 0) and walks counterclockwise; the antenna count is
    ``round(2 (width + depth) / spacing)``.
    """
    perimeter = 2.0 * (width + depth)
    n = int(round(perimeter / spacing))
    if n < 1:
        raise ValueError("spacing larger than the room perimeter")
    out = np.zeros((n, 3))
    for i in range(n):
        s = i * perimeter / n
        # each antenna gets the exact coordinate of the wall it sits on
        if s < width - 1e-12:
            out[i, :2] = (s, 0.0)
        elif s < width + depth - 1e-12:
            out[i, :2] = (width, max(s - width, 0.0))
        elif s < 2 * width + depth - 1e-12:
            out[i, :2] = (max(width - (s - width - depth), 0.0), depth)
        else:
            out[i, :2] = (0.0, max(depth - (s - 2 * width - depth), 0.0))
    # arc-length rounding can leave a corner antenna 1 ulp off its wall
    for axis, edge in ((0, width), (1, depth)):
        col = out[:, axis]
        col[np.abs(col - edge) < 1e-9 * max(edge, 1.0)] = edge
        col[np.abs(col) < 1e-9 * max(edge, 1.0)] = 0.0
    return out


def linear_array(width, depth, spacing, count=None):
    """Uniform linear array along the bottom wall, centered."""
    if count is None:
        count = int(np.floor(width / spacing)) + 1
    x = (np.arange(count) - (count - 1) / 2.0) * spacing + width / 2.0
    return np.column_stack([x, np.zeros(count), np.zeros(count)])
