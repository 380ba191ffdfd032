"""Input validation helpers shared by the public functions and estimators."""

import numbers

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate geometric input (coincident points, bad walls)."""


class TooCloseError(ValueError):
    """Raised when a steering evaluation falls inside the near-singular zone."""


def check_location(p, name="location"):
    """Return ``p`` as a float array of shape (3,).

    Two-element input is promoted to the z = 0 plane.
    """
    arr = np.asarray(p, dtype=float)
    if arr.shape == (2,):
        arr = np.array([arr[0], arr[1], 0.0])
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 2 or 3 coordinates, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_locations(points, name="locations", min_count=0):
    """Return ``points`` as a float array of shape (N, 3)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError(f"{name} must have shape (N, 2) or (N, 3), got {arr.shape}")
    if arr.shape[1] == 2:
        arr = np.column_stack([arr, np.zeros(len(arr))])
    if len(arr) < min_count:
        raise ValueError(f"{name} needs at least {min_count} entries")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_array(locations, min_separation=1e-6):
    """Validate antenna locations: at least one antenna, pairwise distinct."""
    arr = check_locations(locations, name="array locations", min_count=1)
    if len(arr) > 1:
        diff = arr[:, None, :] - arr[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        d[np.diag_indices_from(d)] = np.inf
        if d.min() < min_separation:
            raise GeometryError(
                f"antennas closer than {min_separation} m: min separation {d.min():.3g} m"
            )
    return arr


def check_channel(h, n_antennas=None, name="channel"):
    """Return ``h`` as a 1-D complex array, optionally checking its length."""
    arr = np.asarray(h, dtype=complex)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n_antennas is not None and arr.shape[0] != n_antennas:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n_antennas}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_nonneg_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def check_snapshots(X, n_antennas=None):
    """Return ``X`` as a 2-D complex array of shape (n_snapshots, n_antennas).

    scikit-learn's own ``check_array`` rejects complex input, hence this.
    A single 1-D snapshot is promoted to one row.
    """
    arr = np.asarray(X, dtype=complex)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array of snapshots, got shape {arr.shape}")
    if n_antennas is not None and arr.shape[1] != n_antennas:
        raise ValueError(f"X has {arr.shape[1]} antennas per snapshot, expected {n_antennas}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("snapshots must be finite")
    return arr
