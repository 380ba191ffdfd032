"""scikit-learn style wrappers around the channel estimators.

Each estimator maps noisy antenna-domain snapshots ``X`` of shape
``(n_snapshots, n_antennas)`` to reconstructed channels of the same shape
through ``transform``. ``fit`` only precomputes the coarse search dictionary
(it depends on the geometry, not on the data), so a fitted estimator can be
reused across any number of snapshots.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_array, check_snapshots
from .estimation import (
    SearchParams,
    SearchRegion,
    estimate_multisink,
    estimate_multisource,
    evm_db,
    multisink_dictionary,
    multisource_dictionary,
)

__all__ = ["AntennaDomainEstimator", "MultisourceEstimator", "MultisinkEstimator"]


def _params(wavelength, coarse_step, final_step, zoom_window, step_shrink):
    return SearchParams(
        wavelength / 4 if coarse_step is None else coarse_step,
        wavelength / 64 if final_step is None else final_step,
        zoom_window,
        step_shrink,
    )


class _ChannelScoreMixin:
    def score(self, X, y):
        """Negative mean output EVM (dB) against the true channels ``y``."""
        est = self.transform(X)
        y = check_snapshots(y, est.shape[1])
        return -float(np.mean([max(evm_db(e, t), -100.0) for e, t in zip(est, y)]))


class AntennaDomainEstimator(_ChannelScoreMixin, TransformerMixin, BaseEstimator):
    """Identity baseline: the noisy snapshot is the estimate."""

    def fit(self, X=None, y=None):
        if X is not None:
            self.n_features_in_ = check_snapshots(X).shape[1]
        self.is_fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self, "is_fitted_")
        return check_snapshots(X, getattr(self, "n_features_in_", None)).copy()


class MultisourceEstimator(_ChannelScoreMixin, TransformerMixin, BaseEstimator):
    """Virtual-source estimator (successive cancellation of correlation peaks).

    Parameters
    ----------
    array_locations : array-like of shape (n_antennas, 3)
    wavelength : float
    n_sources : int
        Number of correlation peaks to extract.
    region : SearchRegion or tuple, optional
        ``(xmin, xmax, ymin, ymax)``. Defaults to three times the bounding box
        of the array in each direction, i.e. ``[-W, 2W] x [-D, 2D]`` for an
        array lining a ``W`` x ``D`` room.
    coarse_step, final_step : float, optional
        Default to ``wavelength / 4`` and ``wavelength / 64``.
    amplitude_mode : {"ls", "mean"}
    steering_mode : {"squared", "free_space", "phase"}
    normalize : bool
        Normalize the correlation by the candidate response norm.
    joint_refit : bool
        Re-solve all amplitudes jointly once the locations are fixed.
    """

    def __init__(
        self,
        array_locations,
        wavelength=0.2,
        n_sources=5,
        region=None,
        coarse_step=None,
        final_step=None,
        zoom_window=2,
        step_shrink=2.0,
        amplitude_mode="ls",
        steering_mode="squared",
        normalize=True,
        joint_refit=False,
    ):
        self.array_locations = array_locations
        self.wavelength = wavelength
        self.n_sources = n_sources
        self.region = region
        self.coarse_step = coarse_step
        self.final_step = final_step
        self.zoom_window = zoom_window
        self.step_shrink = step_shrink
        self.amplitude_mode = amplitude_mode
        self.steering_mode = steering_mode
        self.normalize = normalize
        self.joint_refit = joint_refit

    def fit(self, X=None, y=None):
        array = check_array(self.array_locations)
        if X is not None:
            check_snapshots(X, len(array))
        if self.region is None:
            lo, hi = array[:, :2].min(axis=0), array[:, :2].max(axis=0)
            ext = np.maximum(hi - lo, self.wavelength)
            region = SearchRegion(lo[0] - ext[0], hi[0] + ext[0], lo[1] - ext[1], hi[1] + ext[1])
        elif isinstance(self.region, SearchRegion):
            region = self.region
        else:
            region = SearchRegion(*self.region)
        self.array_ = array
        self.region_ = region
        self.params_ = _params(
            self.wavelength, self.coarse_step, self.final_step, self.zoom_window, self.step_shrink
        )
        self.dictionary_ = multisource_dictionary(
            array, region, self.params_, self.wavelength, self.steering_mode
        )
        self.n_features_in_ = len(array)
        return self

    def estimate(self, X):
        """Full :class:`MultisourceResult` for every snapshot."""
        check_is_fitted(self, "dictionary_")
        X = check_snapshots(X, self.n_features_in_)
        return [
            estimate_multisource(
                x,
                self.array_,
                self.n_sources,
                self.region_,
                self.params_,
                self.wavelength,
                amplitude_mode=self.amplitude_mode,
                steering_mode=self.steering_mode,
                normalize=self.normalize,
                joint_refit=self.joint_refit,
                dictionary=self.dictionary_,
            )
            for x in X
        ]

    def transform(self, X):
        return np.array([r.reconstruction for r in self.estimate(X)])

    def predict(self, X):
        """Location of the strongest extracted source per snapshot."""
        return np.array([r.strongest.location for r in self.estimate(X)])


class MultisinkEstimator(_ChannelScoreMixin, TransformerMixin, BaseEstimator):
    """Channel-database estimator: one location and one amplitude per snapshot.

    ``region`` defaults to the bounding box of the array, i.e. the room
    ``[0, W] x [0, D]`` for an array lining the room.
    """

    def __init__(
        self,
        database,
        region=None,
        coarse_step=None,
        final_step=None,
        zoom_window=2,
        step_shrink=2.0,
        amplitude_mode="ls",
        steering_mode="squared",
        normalize=True,
    ):
        self.database = database
        self.region = region
        self.coarse_step = coarse_step
        self.final_step = final_step
        self.zoom_window = zoom_window
        self.step_shrink = step_shrink
        self.amplitude_mode = amplitude_mode
        self.steering_mode = steering_mode
        self.normalize = normalize

    def fit(self, X=None, y=None):
        db = self.database
        if X is not None:
            check_snapshots(X, db.n_antennas)
        if self.region is None:
            lo = db.array_locations[:, :2].min(axis=0)
            hi = db.array_locations[:, :2].max(axis=0)
            region = SearchRegion(lo[0], hi[0], lo[1], hi[1])
        elif isinstance(self.region, SearchRegion):
            region = self.region
        else:
            region = SearchRegion(*self.region)
        self.region_ = region
        self.params_ = _params(
            db.wavelength, self.coarse_step, self.final_step, self.zoom_window, self.step_shrink
        )
        self.dictionary_ = multisink_dictionary(db, region, self.params_, self.steering_mode)
        self.n_features_in_ = db.n_antennas
        return self

    def estimate(self, X):
        check_is_fitted(self, "dictionary_")
        X = check_snapshots(X, self.n_features_in_)
        return [
            estimate_multisink(
                x,
                self.database,
                self.region_,
                self.params_,
                amplitude_mode=self.amplitude_mode,
                steering_mode=self.steering_mode,
                normalize=self.normalize,
                dictionary=self.dictionary_,
            )
            for x in X
        ]

    def transform(self, X):
        return np.array([r.reconstruction for r in self.estimate(X)])

    def predict(self, X):
        """Estimated user location per snapshot."""
        return np.array([r.location for r in self.estimate(X)])
