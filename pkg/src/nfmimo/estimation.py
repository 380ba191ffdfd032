"""Noisy snapshots, EVM, coarse-to-fine peak search and the two estimators.

The multisource estimator extracts virtual-source locations one at a time
from correlation peaks and cancels each one from the residual. The multisink
estimator searches only the user location against a channel database.

By default the correlation is normalized by the norm of the candidate
response (``normalize=True``), which is the maximum-likelihood location
metric for a single path with unknown complex gain. The raw, unnormalized
correlation is available with ``normalize=False``; with distance-dependent
path loss it is biased toward points next to the antennas.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    check_array,
    check_channel,
    check_nonneg_int,
    check_positive,
)
from .propagation import (
    _GUARD,
    sink_response_matrix,
    steering_from_distance,
    steering_matrix,
)

__all__ = [
    "AMPLITUDE_MODES",
    "NO_NOISE",
    "SearchRegion",
    "SearchParams",
    "SourceEstimate",
    "MultisourceResult",
    "MultisinkResult",
    "add_noise",
    "evm_db",
    "coarse_grid",
    "grid_peak_search",
    "multisource_objective",
    "multisink_objective",
    "estimate_multisource",
    "estimate_multisink",
    "SteeringDictionary",
    "EmptyRegionError",
    "multisource_dictionary",
    "multisink_dictionary",
]

AMPLITUDE_MODES = ("ls", "mean")

#: Input-EVM sentinel meaning "noiseless snapshot".
NO_NOISE = -math.inf


class EmptyRegionError(ValueError):
    """Raised when a search region holds no admissible candidate."""


@dataclass(frozen=True)
class SearchRegion:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.xmax, self.ymin, self.ymax)
        if not all(np.isfinite(v) for v in vals):
            raise EmptyRegionError("search region bounds must be finite")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise EmptyRegionError(f"empty search region {vals}")

    def contains(self, p, tol=1e-9):
        p = np.asarray(p, dtype=float)
        return bool(
            self.xmin - tol <= p[0] <= self.xmax + tol
            and self.ymin - tol <= p[1] <= self.ymax + tol
        )


@dataclass(frozen=True)
class SearchParams:
    """Coarse-to-fine schedule; all steps in meters."""

    coarse_step: float
    final_step: float
    zoom_window: int = 2
    step_shrink: float = 2.0

    def __post_init__(self):
        if not 0 < self.final_step <= self.coarse_step:
            raise ValueError("need 0 < final_step <= coarse_step")
        if int(self.zoom_window) < 1:
            raise ValueError("zoom_window must be >= 1")
        if not self.step_shrink > 1:
            raise ValueError("step_shrink must be > 1")

    @classmethod
    def for_wavelength(cls, wavelength, coarse=1 / 4, final=1 / 64, zoom_window=2, step_shrink=2.0):
        """Steps given as fractions of the wavelength (defaults lam/4 and lam/64)."""
        return cls(coarse * wavelength, final * wavelength, zoom_window, step_shrink)


@dataclass(frozen=True)
class SourceEstimate:
    location: np.ndarray
    amplitude: complex
    peak_metric: float


@dataclass
class MultisourceResult:
    sources: list
    reconstruction: np.ndarray

    @property
    def strongest(self):
        """Source with the largest received energy, or None."""
        if not self.sources:
            return None
        return max(self.sources, key=lambda s: s.peak_metric)


@dataclass
class MultisinkResult:
    location: np.ndarray
    amplitude: complex
    reconstruction: np.ndarray
    peak_metric: float = field(default=0.0)


# -- noise and metric ---------------------------------------------------------


def add_noise(h, target_evm_db, seed):
    """Add complex white Gaussian noise rescaled to an exact input EVM.

    ``target_evm_db = NO_NOISE`` (minus infinity) returns a copy of ``h``.
    """
    h = check_channel(h)
    norm_h = np.linalg.norm(h)
    if norm_h == 0:
        raise ValueError("cannot add relative noise to an all-zero channel")
    if target_evm_db == -math.inf:
        return h.copy()
    if not np.isfinite(target_evm_db):
        raise ValueError(f"target EVM must be finite or -inf, got {target_evm_db}")
    rng = np.random.default_rng(seed)
    n = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    n *= norm_h * 10.0 ** (target_evm_db / 20.0) / np.linalg.norm(n)
    return h + n


def evm_db(estimate, truth):
    """Normalized error in dB: ``20 log10(||estimate - truth|| / ||truth||)``.

    Returns ``-inf`` for a perfect estimate.
    """
    truth = check_channel(truth, name="truth")
    estimate = check_channel(estimate, len(truth), name="estimate")
    norm_t = np.linalg.norm(truth)
    if norm_t == 0:
        raise ValueError("EVM undefined for an all-zero reference channel")
    err = np.linalg.norm(estimate - truth)
    if err == 0:
        return -math.inf
    return 20.0 * math.log10(err / norm_t)


# -- peak search --------------------------------------------------------------


def _axis(lo, hi, step):
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    xs = lo + step * np.arange(n)
    if xs[-1] < hi - 1e-9 * step:
        xs = np.append(xs, hi)
    return xs


def coarse_grid(region, step):
    """Candidate points of the coarse grid, anchored at the region minimum.

    The maximum edge is appended when the extent is not a multiple of
    ``step``. Points are ordered by x, then y, as an ``(N, 3)`` array.
    """
    xs = _axis(region.xmin, region.xmax, step)
    ys = _axis(region.ymin, region.ymax, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])


def _argmax_tiebreak(points, values):
    """Index of the max; ties go to smallest x, then smallest y."""
    best = np.max(values)
    if not np.isfinite(best):
        return -1
    idx = np.flatnonzero(values == best)
    if len(idx) == 1:
        return int(idx[0])
    order = np.lexsort((points[idx, 1], points[idx, 0]))
    return int(idx[order[0]])


def _evaluate(objective, points, chunk=4096):
    return np.concatenate(
        [np.asarray(objective(points[i : i + chunk]), dtype=float) for i in range(0, len(points), chunk)]
    )


def _peak_search(objective, region, params, coarse_values=None):
    points = coarse_grid(region, params.coarse_step)
    values = (
        _evaluate(objective, points)
        if coarse_values is None
        else np.asarray(coarse_values, dtype=float)
    )
    if values.shape != (len(points),):
        raise ValueError("coarse values do not match the coarse grid")
    i = _argmax_tiebreak(points, values)
    if i < 0:
        raise EmptyRegionError("no admissible candidate in the search region")
    best, best_val = points[i], values[i]
    step = params.coarse_step
    r = int(params.zoom_window)
    while step > params.final_step * (1 + 1e-9):
        # window of +-r old cells at the finer step
        half = r * step
        step = step / params.step_shrink
        n = int(math.floor(half / step + 1e-9))
        offs = step * np.arange(-n, n + 1)
        xs = best[0] + offs
        ys = best[1] + offs
        xs = xs[(xs >= region.xmin - 1e-12) & (xs <= region.xmax + 1e-12)]
        ys = ys[(ys >= region.ymin - 1e-12) & (ys <= region.ymax + 1e-12)]
        gx, gy = np.meshgrid(np.clip(xs, region.xmin, region.xmax),
                             np.clip(ys, region.ymin, region.ymax), indexing="ij")
        cand = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
        vals = np.asarray(objective(cand), dtype=float)
        j = _argmax_tiebreak(cand, vals)
        if j >= 0:
            best, best_val = cand[j], vals[j]
    return best.copy(), float(best_val)


def grid_peak_search(objective, region, params, vectorized=True):
    """Maximize ``objective`` over a rectangle by coarse-to-fine grid search.

    Parameters
    ----------
    objective : callable
        Maps an ``(N, 3)`` array of candidate points to ``N`` real values
        (or a single point to a float when ``vectorized=False``). ``-inf``
        marks inadmissible candidates.
    region : SearchRegion
    params : SearchParams

    Returns
    -------
    numpy.ndarray
        The final incumbent, shape ``(3,)``.
    """
    if not vectorized:
        scalar = objective

        def objective(pts):
            return np.fromiter((scalar(p) for p in pts), dtype=float, count=len(pts))

    return _peak_search(objective, region, params)[0]


# -- correlation objectives ---------------------------------------------------


class SteeringDictionary:
    """Conjugated candidate responses on a fixed point set, for fast correlation.

    ``responses(points)`` must return ``(R, close)`` where ``R[i, m]`` is the
    response of antenna ``m`` to a source at ``points[i]`` and ``close``
    flags points inside the steering guard (those are never selected).
    Stored as complex64 to keep large grids in memory.
    """

    def __init__(self, points, responses, chunk=4096):
        self.points = np.asarray(points, dtype=float)
        conj, norms, ok = [], [], []
        for start in range(0, len(self.points), chunk):
            R, close = responses(self.points[start : start + chunk])
            conj.append(np.conj(R).astype(np.complex64))
            norms.append(np.linalg.norm(R, axis=1))
            ok.append(~close)
        self.matrix = np.concatenate(conj)
        self.norms = np.concatenate(norms)
        self.admissible = np.concatenate(ok) & (self.norms > 0)

    def values(self, h, normalize=True):
        c = np.abs(self.matrix @ np.asarray(h, dtype=np.complex64)).astype(float)
        if normalize:
            c = np.divide(c, self.norms, out=np.zeros_like(c), where=self.norms > 0)
        c[~self.admissible] = -np.inf
        return c


def _array_responses(array, wavelength, mode):
    def responses(points):
        diff = points[:, None, :] - array[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        close = np.any(d < _GUARD * wavelength, axis=1)
        d = np.where(close[:, None], wavelength, d)
        return steering_from_distance(d, wavelength, mode), close

    return responses


def _sink_responses(sinks, env, wavelength, mode):
    def responses(points):
        return sink_response_matrix(points, sinks, env, wavelength, mode, exclude_close=True)

    return responses


def _correlate(R, h, normalize):
    c = np.abs(np.conj(R) @ h)
    if normalize:
        n = np.linalg.norm(R, axis=1)
        c = np.divide(c, n, out=np.zeros_like(c), where=n > 0)
    return c


def _as_points(l):
    pts = np.asarray(l, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    return pts, single


def multisource_objective(l, h, array, wavelength, steering_mode="squared", normalize=False):
    """Correlation magnitude ``|sum_m h_m conj(Str(l, l_m))|``.

    ``l`` may be one point or an ``(N, 3)`` batch. With ``normalize=True``
    the value is divided by the response norm ``||Str(l, .)||``.

    Raises
    ------
    TooCloseError
        If ``l`` lies within ``wavelength / 100`` of an antenna.
    """
    array = check_array(array)
    h = check_channel(h, len(array))
    pts, single = _as_points(l)
    R = steering_matrix(pts, array, wavelength, steering_mode)
    c = _correlate(R, h, normalize)
    return float(c[0]) if single else c


def multisink_objective(l, h, db, steering_mode="squared", normalize=False):
    """Correlation of ``h`` with the database composite response at ``l``."""
    h = check_channel(h, db.n_antennas)
    pts, single = _as_points(l)
    R, _ = sink_response_matrix(pts, db.sinks, db.environment, db.wavelength, steering_mode)
    c = _correlate(R, h, normalize)
    return float(c[0]) if single else c


def _safe_objective(responses, h, normalize):
    def objective(points):
        R, close = responses(points)
        c = _correlate(R, h, normalize)
        c[close] = -np.inf
        return c

    return objective


def _amplitude(a, r, mode):
    num = np.vdot(a, r)
    if mode == "ls":
        return complex(num / np.vdot(a, a).real)
    if mode == "mean":
        return complex(num / len(a))
    raise ValueError(f"unknown amplitude mode {mode!r}; expected one of {AMPLITUDE_MODES}")


# -- estimators ---------------------------------------------------------------


def estimate_multisource(
    h,
    array,
    n_sources,
    region,
    params,
    wavelength,
    amplitude_mode="ls",
    steering_mode="squared",
    normalize=True,
    joint_refit=False,
    dictionary=None,
):
    """Successive-cancellation multisource channel estimate.

    Each round finds the correlation peak of the current residual, estimates
    that source's amplitude (least squares or the 1/M rule) and subtracts its
    contribution. The channel is rebuilt from the ``n_sources`` estimates.

    ``dictionary`` may hold a precomputed :class:`SteeringDictionary` on the
    coarse grid of ``region``; it only speeds up the first search stage.
    """
    array = check_array(array)
    h = check_channel(h, len(array))
    n_sources = check_nonneg_int(n_sources, "n_sources")
    wavelength = check_positive(wavelength, "wavelength")
    if amplitude_mode not in AMPLITUDE_MODES:
        raise ValueError(f"unknown amplitude mode {amplitude_mode!r}")
    if n_sources > len(array):
        warnings.warn(
            f"requested {n_sources} sources from {len(array)} antennas", RuntimeWarning
        )
    responses = _array_responses(array, wavelength, steering_mode)
    residual = h.copy()
    sources, columns = [], []
    for _ in range(n_sources):
        coarse = None if dictionary is None else dictionary.values(residual, normalize)
        loc, _ = _peak_search(
            _safe_objective(responses, residual, normalize), region, params, coarse
        )
        a = steering_matrix(loc[None, :], array, wavelength, steering_mode)[0]
        g = _amplitude(a, residual, amplitude_mode)
        residual = residual - g * a
        energy = abs(g) ** 2 * float(np.vdot(a, a).real)
        sources.append(SourceEstimate(loc, g, energy))
        columns.append(a)
    if joint_refit and columns:
        A = np.column_stack(columns)
        g_all = np.linalg.lstsq(A, h, rcond=None)[0]
        sources = [
            SourceEstimate(s.location, complex(g), abs(g) ** 2 * float(np.vdot(a, a).real))
            for s, g, a in zip(sources, g_all, columns)
        ]
    recon = np.zeros(len(array), dtype=complex)
    for s, a in zip(sources, columns):
        recon += s.amplitude * a
    return MultisourceResult(sources, recon)


def estimate_multisink(
    h,
    db,
    region,
    params,
    amplitude_mode="ls",
    steering_mode="squared",
    normalize=True,
    dictionary=None,
):
    """Estimate user location and amplitude against a channel database."""
    if db.n_antennas == 0 or not any(db.sinks):
        raise ValueError("channel database is empty")
    h = check_channel(h, db.n_antennas)
    if amplitude_mode not in AMPLITUDE_MODES:
        raise ValueError(f"unknown amplitude mode {amplitude_mode!r}")
    responses = _sink_responses(db.sinks, db.environment, db.wavelength, steering_mode)
    coarse = None if dictionary is None else dictionary.values(h, normalize)
    loc, val = _peak_search(_safe_objective(responses, h, normalize), region, params, coarse)
    b = responses(loc[None, :])[0][0]
    g = _amplitude(b, h, amplitude_mode)
    return MultisinkResult(loc, g, g * b, float(val))


def multisource_dictionary(array, region, params, wavelength, steering_mode="squared"):
    """Precompute the coarse-grid dictionary for :func:`estimate_multisource`."""
    array = check_array(array)
    return SteeringDictionary(
        coarse_grid(region, params.coarse_step), _array_responses(array, wavelength, steering_mode)
    )


def multisink_dictionary(db, region, params, steering_mode="squared"):
    """Precompute the coarse-grid dictionary for :func:`estimate_multisink`."""
    return SteeringDictionary(
        coarse_grid(region, params.coarse_step),
        _sink_responses(db.sinks, db.environment, db.wavelength, steering_mode),
    )
