"""Scikit-learn style estimator over the full pose pipeline.

SpherePoseEstimator packages model construction, training, and grid
readout behind fit/predict/score so the pipeline composes with standard
tooling (clone, get_params, grid search). X is an (n, 3, s, s) image
batch; y is an (n, 4) array of unit quaternions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import head as hd
from . import metrics as mt
from .grids import healpix_so3, nearest_index
from .model import Model, ModelConfig
from .trainer import TrainConfig, train
from .validation import check_images, check_rotations

__all__ = ["SpherePoseEstimator"]


@dataclass
class _ArrayDataset:
    """Just enough of the dataset interface for the training loop."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.images)


class SpherePoseEstimator(BaseEstimator):
    """Pose-distribution model with a scikit-learn interface.

    Parameters mirror the model and trainer configs; see ModelConfig and
    TrainConfig for semantics. predict() returns the most probable
    rotation per sample on the prediction grid; predict_proba() returns
    the full cell-probability matrix; score() is the mean log density
    assigned to the true rotations (higher is better).
    """

    def __init__(
        self,
        band_limit: int = 6,
        channels: int = 8,
        n_so3_convs: int = 1,
        projection: str = "spatial",
        s2_filter_mode: str = "fourier",
        proj_recursion: int = 2,
        n_keep: int = 20,
        grid_recursion: int = 3,
        predict_recursion: int = 3,
        image_size: int = 32,
        encoder_channels: tuple = (16, 32),
        final_filter_scale: float = 0.01,
        dtype: str = "float32",
        lr: float = 0.015,
        momentum: float = 0.9,
        batch_size: int = 64,
        epochs: int = 16,
        lr_decay: float = 0.1,
        decay_every: int = 8,
        max_steps: int | None = None,
        grad_clip: float | None = None,
        seed: int = 0,
    ):
        self.band_limit = band_limit
        self.channels = channels
        self.n_so3_convs = n_so3_convs
        self.projection = projection
        self.s2_filter_mode = s2_filter_mode
        self.proj_recursion = proj_recursion
        self.n_keep = n_keep
        self.grid_recursion = grid_recursion
        self.predict_recursion = predict_recursion
        self.image_size = image_size
        self.encoder_channels = encoder_channels
        self.final_filter_scale = final_filter_scale
        self.dtype = dtype
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.grad_clip = grad_clip
        self.max_steps = max_steps
        self.seed = seed

    # -- config assembly -------------------------------------------------

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            band_limit=self.band_limit,
            channels=self.channels,
            n_so3_convs=self.n_so3_convs,
            projection=self.projection,
            s2_filter_mode=self.s2_filter_mode,
            proj_recursion=self.proj_recursion,
            n_keep=self.n_keep,
            grid_recursion=self.grid_recursion,
            image_size=self.image_size,
            encoder_channels=tuple(self.encoder_channels),
            final_filter_scale=self.final_filter_scale,
            dtype=self.dtype,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr_decay=self.lr_decay,
            decay_every=self.decay_every,
            seed=self.seed,
            max_steps=self.max_steps,
            grad_clip=self.grad_clip,
        )

    # -- estimator API ----------------------------------------------------

    def fit(self, X, y) -> "SpherePoseEstimator":
        X = check_images(X, self.image_size)
        y = check_rotations(y)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        self.model_ = Model(self._model_config(), np.random.default_rng(self.seed))
        self.history_ = train(
            self.model_, _ArrayDataset(X, y), self._train_config()
        )
        return self

    def _coeffs(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")
        X = check_images(X, self.image_size)
        out = []
        for lo in range(0, len(X), self.batch_size):
            sig, _ = self.model_.forward_coeffs(X[lo : lo + self.batch_size], None)
            out.append(sig[:, 0].astype(np.float64))
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        """Most probable rotation per sample, (n, 4) unit quaternions."""
        grid = healpix_so3(self.predict_recursion)
        coeffs = self._coeffs(X)
        _, best, _ = mt._stream_scores(coeffs, grid)
        return grid.quats[best]

    def predict_proba(self, X) -> np.ndarray:
        """Cell probabilities on the prediction grid, (n, n_cells)."""
        grid = healpix_so3(self.predict_recursion)
        coeffs = self._coeffs(X)
        if len(grid) > mt.MATERIALIZE_LIMIT:
            raise ValueError(
                "predict_proba materializes the full grid; lower predict_recursion"
            )
        logits = coeffs @ hd.grid_basis(grid, self.band_limit).T
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def score(self, X, y) -> float:
        """Mean log density (nats) at the true rotations; uniform = -2.29."""
        y = check_rotations(y)
        grid = healpix_so3(self.predict_recursion)
        coeffs = self._coeffs(X)
        if len(y) != len(coeffs):
            raise ValueError(f"X has {len(coeffs)} samples but y has {len(y)}")
        lse, _, _ = mt._stream_scores(coeffs, grid)
        cells = nearest_index(grid, y)
        vals = np.array(
            [mt._cell_logits(c, grid, np.atleast_1d(i))[0] for c, i in zip(coeffs, cells)]
        )
        floor = np.log(hd.PROB_FLOOR)
        ll = np.maximum(vals - lse, floor) + np.log(len(grid) / np.pi**2)
        return float(ll.mean())
