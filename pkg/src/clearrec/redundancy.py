"""Cross-modal redundancy localization and removal.

Fits a pair of soft null-space projectors from the cross-covariance of two
encoded modality matrices and applies them. :class:`CrossModalProjector`
wraps the same steps as a scikit-learn transformer.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import spectral
from .exceptions import ConfigError, DimensionError

FIXED = "fixed"
DYNAMIC_RATIO = "dynamic_ratio"


@dataclass(frozen=True)
class RedundancyConfig:
    rank_k: int = 4
    strength_lambda: float = 0.9
    refresh_interval_tau: int = 1
    rank_mode: str = FIXED
    energy_threshold: float = 0.5
    center_before_project: bool = False
    # False reproduces the "w/o null-space" ablation: projection skipped entirely
    enabled: bool = True

    def __post_init__(self):
        if self.rank_mode not in (FIXED, DYNAMIC_RATIO):
            raise ConfigError(f"unknown rank_mode {self.rank_mode!r}")
        if self.rank_k < 0:
            raise ConfigError(f"rank_k must be >= 0, got {self.rank_k}")
        if not 0.0 <= self.strength_lambda <= 1.0:
            raise ConfigError(f"strength_lambda must lie in [0, 1], got {self.strength_lambda}")
        if self.refresh_interval_tau < 1:
            raise ConfigError(f"refresh_interval_tau must be >= 1, got {self.refresh_interval_tau}")
        if self.rank_mode == DYNAMIC_RATIO and not 0.0 < self.energy_threshold < 1.0:
            raise ConfigError(f"energy_threshold must lie in (0, 1), got {self.energy_threshold}")

    def should_refresh(self, epoch):
        """Refresh guard for 1-based ``epoch``."""
        return epoch == 1 or epoch % self.refresh_interval_tau == 0


@dataclass(frozen=True)
class ProjectionPair:
    visual: spectral.ProjectionOperator
    textual: spectral.ProjectionOperator
    epoch_built: int
    spectrum: np.ndarray
    mean_visual: np.ndarray = field(repr=False)
    mean_textual: np.ndarray = field(repr=False)

    @property
    def rank(self):
        return self.visual.rank

    @property
    def strength(self):
        return self.visual.strength

    @property
    def is_identity(self):
        return self.visual.is_identity and self.textual.is_identity


def select_rank_dynamic(spectrum, energy_threshold):
    """Smallest k whose leading singular values hold ``energy_threshold`` of
    the total squared energy; 0 for an all-zero spectrum."""
    energy = np.asarray(spectrum, dtype=np.float64) ** 2
    total = energy.sum()
    if total <= 0.0:
        return 0
    cumulative = np.cumsum(energy)
    return int(np.searchsorted(cumulative, energy_threshold * total, side="left") + 1)


@dataclass(frozen=True)
class CrossModalDecomposition:
    """SVD of the centered cross-covariance plus the column means used to
    center. Projectors for any (k, lambda) can be built from it without
    refitting."""

    svd: spectral.SvdResult
    mean_visual: np.ndarray
    mean_textual: np.ndarray


def decompose(v_encoded, t_encoded):
    v = spectral.as_matrix(v_encoded, "v_encoded")
    t = spectral.as_matrix(t_encoded, "t_encoded")
    if v.shape != t.shape:
        raise DimensionError(f"encoded modalities differ in shape: {v.shape} vs {t.shape}")
    # np.array copies: nothing downstream keeps a reference to the caller's buffers
    v_bar, mu_v = spectral.mean_center(np.array(v))
    t_bar, mu_t = spectral.mean_center(np.array(t))
    dec = spectral.svd(spectral.cross_covariance(v_bar, t_bar))
    return CrossModalDecomposition(svd=dec, mean_visual=mu_v, mean_textual=mu_t)


def projectors_from(decomposition, cfg, epoch=0):
    dec = decomposition.svd
    d = dec.singular_values.shape[0]
    if cfg.rank_mode == DYNAMIC_RATIO:
        k = select_rank_dynamic(dec.singular_values, cfg.energy_threshold)
    else:
        if cfg.rank_k > d:
            raise spectral.InvalidRankError(f"rank_k={cfg.rank_k} exceeds feature dimension {d}")
        k = cfg.rank_k
    lam = cfg.strength_lambda if cfg.enabled else 0.0
    return ProjectionPair(
        visual=spectral.build_projector(dec.left_vectors, k, lam, spectral.VISUAL),
        textual=spectral.build_projector(dec.right_vectors, k, lam, spectral.TEXTUAL),
        epoch_built=epoch,
        spectrum=dec.singular_values,
        mean_visual=decomposition.mean_visual,
        mean_textual=decomposition.mean_textual,
    )


def fit_projectors(v_encoded, t_encoded, cfg, epoch=0):
    """Fit the projector pair for ``cfg`` on encoded features (rows are items)."""
    return projectors_from(decompose(v_encoded, t_encoded), cfg, epoch)


def _project_one(x, p, mean, center):
    if p.is_identity:
        return np.array(x, dtype=np.float64)
    if center:
        return spectral.apply_projection(x - mean, p) + mean
    return spectral.apply_projection(x, p)


def project_features(v, t, pair, cfg):
    """Apply ``pair`` to both modalities.

    With ``cfg.center_before_project`` the stored fit-time means are removed
    before projecting and added back afterwards; otherwise raw rows are
    projected directly.
    """
    v = spectral.as_matrix(v, "v")
    t = spectral.as_matrix(t, "t")
    center = cfg.center_before_project
    return (
        _project_one(v, pair.visual, pair.mean_visual, center),
        _project_one(t, pair.textual, pair.mean_textual, center),
    )


class ProjectionCache:
    """Holds the current :class:`ProjectionPair` between refreshes."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.pair: Optional[ProjectionPair] = None

    def update(self, epoch, v_encoded, t_encoded):
        """Refit if ``epoch`` is a refresh epoch. Returns True when refit."""
        if self.pair is not None and not self.cfg.should_refresh(epoch):
            return False
        self.pair = fit_projectors(v_encoded, t_encoded, self.cfg, epoch=epoch)
        return True


class CrossModalProjector(TransformerMixin, BaseEstimator):
    """Remove the dominant shared visual/textual subspace from item features.

    Parameters
    ----------
    rank : int
        Number of leading cross-covariance directions treated as redundant.
    strength : float
        Soft projection strength in [0, 1]; components along the redundant
        directions are scaled by ``1 - strength``.
    rank_mode : {"fixed", "dynamic_ratio"}
    energy_threshold : float
        Used only with ``rank_mode="dynamic_ratio"``.
    center : bool
        Project mean-centered features and add the means back.
    n_visual : int, optional
        Column split when ``fit``/``transform`` receive one concatenated
        ``[visual | textual]`` matrix. Defaults to half the columns.

    Attributes
    ----------
    pair_ : ProjectionPair
    spectrum_ : ndarray
    rank_ : int
    """

    def __init__(self, rank=4, strength=0.9, rank_mode=FIXED, energy_threshold=0.5,
                 center=False, n_visual=None):
        self.rank = rank
        self.strength = strength
        self.rank_mode = rank_mode
        self.energy_threshold = energy_threshold
        self.center = center
        self.n_visual = n_visual

    def _config(self):
        return RedundancyConfig(
            rank_k=self.rank,
            strength_lambda=self.strength,
            rank_mode=self.rank_mode,
            energy_threshold=self.energy_threshold,
            center_before_project=self.center,
        )

    def _split(self, X, T):
        X = check_array(X, dtype=np.float64)
        if T is not None:
            return X, check_array(T, dtype=np.float64), False
        n_visual = self.n_visual if self.n_visual is not None else X.shape[1] // 2
        if not 0 < n_visual < X.shape[1]:
            raise DimensionError(f"n_visual={n_visual} does not split {X.shape[1]} columns")
        return X[:, :n_visual], X[:, n_visual:], True

    def fit(self, X, T=None):
        """Fit on visual features ``X`` and textual features ``T``, or on a
        single concatenated matrix when ``T`` is None."""
        v, t, _ = self._split(X, T)
        self.pair_ = fit_projectors(v, t, self._config())
        self.spectrum_ = self.pair_.spectrum
        self.rank_ = self.pair_.rank
        self.n_features_in_ = v.shape[1] + t.shape[1]
        return self

    def transform(self, X, T=None):
        check_is_fitted(self, "pair_")
        v, t, stacked = self._split(X, T)
        pv, pt = project_features(v, t, self.pair_, self._config())
        if stacked:
            return np.hstack([pv, pt])
        return pv, pt

    def fit_transform(self, X, T=None):
        return self.fit(X, T).transform(X, T)
