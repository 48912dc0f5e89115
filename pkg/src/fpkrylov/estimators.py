"""scikit-learn style wrappers around the score pre-computation.

``ScorePrecomputer.fit`` solves the seed image and harvests its bases;
``transform`` then produces score tensors for a batch, warm-starting every
image from those bases when ``mode="recycled"``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ValidationError
from .grid import DiffusionParams, make_grid
from .krylov import RecycleConfig
from .pipeline import MODES, RULES, SolveMode, embed_scores, march


def check_images(X, square: bool = True) -> np.ndarray:
    """Validate a stack of single-channel images ``(N, H, W)`` with values in ``[0, 1]``."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1, ensure_min_features=1)
    if X.ndim != 3:
        raise ValidationError(f"expected images of shape (N, H, W), got {X.shape}")
    if square and X.shape[1] != X.shape[2]:
        raise ValidationError(f"only square images are supported, got {X.shape[1]}x{X.shape[2]}")
    if X.min() < 0 or X.max() > 1:
        raise ValidationError("pixel values must lie in [0, 1]")
    return X


class ScorePrecomputer(TransformerMixin, BaseEstimator):
    """Pre-compute log-density scores for a batch of grayscale images.

    Parameters
    ----------
    timesteps : int
        Number of implicit timesteps ``T``.
    g : float or callable
        Diffusion coefficient, constant or ``n -> g^n``.
    drift : None, 2-tuple or callable
        Drift field; ``None`` means zero.
    mode : {"direct", "iterative", "recycled"}
    krylov_dim, target_tol, target_max_iter
        Recycling settings (only used when ``mode="recycled"``).
    divide_by_h : bool
        Divide the halved central differences by the grid spacing.

    Attributes
    ----------
    grid_ : GridSpec
    bases_ : list or None
        Per-timestep bases from the seed image (recycled mode).
    seed_stats_ : list of StepStats
    """

    def __init__(self, timesteps=100, g=0.5, drift=None, mode="recycled", lin_tol=1e-8, lin_max_iter=1000,
                 nl_tol=1e-6, nl_max_iter=50, krylov_dim=20, target_tol=1e-8, target_max_iter=1000,
                 floor=1e-4, divide_by_h=False):
        self.timesteps = timesteps
        self.g = g
        self.drift = drift
        self.mode = mode
        self.lin_tol = lin_tol
        self.lin_max_iter = lin_max_iter
        self.nl_tol = nl_tol
        self.nl_max_iter = nl_max_iter
        self.krylov_dim = krylov_dim
        self.target_tol = target_tol
        self.target_max_iter = target_max_iter
        self.floor = floor
        self.divide_by_h = divide_by_h

    def _params(self):
        return DiffusionParams(g=self.g, drift=self.drift, nl_tol=self.nl_tol, nl_max_iter=self.nl_max_iter,
                               lin_tol=self.lin_tol, lin_max_iter=self.lin_max_iter)

    def _mode(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "recycled":
            return SolveMode.recycled(RecycleConfig(a_max=self.krylov_dim, target_tol=self.target_tol,
                                                    target_max_iter=self.target_max_iter))
        return SolveMode(self.mode)

    def fit(self, X, y=None):
        """Fix the grid from ``X`` and, in recycled mode, harvest bases from ``X[0]``."""
        X = check_images(X)
        self.grid_ = make_grid(X.shape[1], X.shape[2], self.timesteps)
        self.params_ = self._params()
        self.mode_ = self._mode()
        self.n_features_in_ = X.shape[1] * X.shape[2]
        self.bases_ = None
        self.seed_stats_ = []
        if self.mode_.kind == "recycled":
            traj = march(X[0], self.params_, self.grid_, SolveMode.iterative(),
                         harvest_a_max=self.krylov_dim, floor=self.floor, image_id="seed")
            self.bases_ = traj.bases
            self.seed_stats_ = traj.stats
        return self

    def precompute(self, X):
        """Like :meth:`transform` but returns the full :class:`Trajectory` per image."""
        check_is_fitted(self, "grid_")
        X = check_images(X)
        if X.shape[1:] != self.grid_.shape:
            raise ValidationError(f"images are {X.shape[1:]}, estimator was fitted on {self.grid_.shape}")
        return [march(img, self.params_, self.grid_, self.mode_, self.bases_, floor=self.floor) for img in X]

    def transform(self, X):
        """Scores of shape ``(N, T, H, W, 2)``."""
        trajs = self.precompute(X)
        return np.stack([t.scores(self.grid_, self.divide_by_h).values for t in trajs])


class ScoreEmbedder(TransformerMixin, BaseEstimator):
    """Embed pre-computed scores into the images by explicit transport.

    ``transform`` returns ``(N, T + 1, H, W)`` sequences whose first frame is
    the input image.
    """

    def __init__(self, precomputer=None, rule="sum"):
        self.precomputer = precomputer
        self.rule = rule

    def fit(self, X, y=None):
        if self.rule not in RULES:
            raise ValidationError(f"rule must be one of {RULES}, got {self.rule!r}")
        pre = clone(self.precomputer) if self.precomputer is not None else ScorePrecomputer()
        self.precomputer_ = pre.fit(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "precomputer_")
        X = check_images(X)
        pre = self.precomputer_
        trajs = pre.precompute(X)
        out = []
        for img, traj in zip(X, trajs):
            scores = traj.scores(pre.grid_, pre.divide_by_h)
            out.append(embed_scores(img, scores, pre.params_, pre.grid_, self.rule).values)
        return np.stack(out)
