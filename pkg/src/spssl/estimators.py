"""Scikit-learn style wrappers around pretraining and linear probing.

``SpatialPretrainer`` exposes the self-supervised training loop as a
transformer: ``fit(X)`` pretrains the backbone on images, ``transform(X)``
returns frozen class-token features. ``FrozenLinearProbe`` is a plain
classifier over any fixed feature matrix. Both inherit ``get_params`` /
``set_params`` for grid search and cloning.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from spssl.encoder import EncoderConfig
from spssl.evaluation import (eval_spatial, extract_class_features,
                              probe_predict, resize_batch, train_linear_probe)
from spssl.trainer import TrainConfig, train


def _as_images(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise ValueError(f"expected images (N, H, W, C), got shape {X.shape}")
    if X.max() > 1.5:
        X = X / 255.0
    return X


class SpatialPretrainer(BaseEstimator, TransformerMixin):
    """Self-supervised backbone pretraining with the spatial-relation branch.

    Setting ``lambda_p = lambda_s = 0`` disables the branch and reproduces
    the plain baseline objective bit for bit.
    """

    def __init__(self, objective="contrastive", epochs=50, batch_size=64,
                 base_lr=1.5e-4, lambda_p=0.1, lambda_s=0.1, seed=0,
                 image_side=32, patch_size=8, depth=2, dim=64, heads=4):
        self.objective = objective
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lambda_p = lambda_p
        self.lambda_s = lambda_s
        self.seed = seed
        self.image_side = image_side
        self.patch_size = patch_size
        self.depth = depth
        self.dim = dim
        self.heads = heads

    def _config(self) -> TrainConfig:
        return TrainConfig(
            objective=self.objective, epochs=self.epochs, batch_size=self.batch_size,
            base_lr=self.base_lr, lambda_p=self.lambda_p, lambda_s=self.lambda_s,
            seed=self.seed,
            warmup_epochs=min(5, max(self.epochs - 1, 1)),
            encoder=EncoderConfig(image_side=self.image_side, patch_size=self.patch_size,
                                  depth=self.depth, dim=self.dim, heads=self.heads),
        )

    def fit(self, X, y=None):
        cfg = self._config()
        images = _as_images(X)
        if images.shape[1] != cfg.encoder.image_side:
            images = resize_batch(images, cfg.encoder.image_side)
        result = train(cfg, images)
        self.config_ = cfg
        self.params_ = result.params
        self.teacher_ = result.teacher
        self.metrics_ = result.metrics
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        images = resize_batch(_as_images(X), self.config_.encoder.image_side)
        return extract_class_features(images, self.params_, self.config_.encoder)

    def spatial_eval(self, X_train, X_eval, seed: int | None = None):
        """Frozen-feature relative-pose regression report on held-out images."""
        self._check_fitted()
        cfg = self.config_
        tr = resize_batch(_as_images(X_train), cfg.encoder.image_side)
        ev = resize_batch(_as_images(X_eval), cfg.encoder.image_side)
        return eval_spatial(self.params_, cfg.encoder, tr, ev, cfg.sampler,
                            seed=self.seed if seed is None else seed,
                            backbone_id=cfg.hash())

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit first")


class FrozenLinearProbe(BaseEstimator, ClassifierMixin):
    """Linear classifier on fixed features; LR picked on a validation split."""

    def __init__(self, seed=0, epochs=30, batch=256, weight_decay=0.0):
        self.seed = seed
        self.epochs = epochs
        self.batch = batch
        self.weight_decay = weight_decay

    def fit(self, X, y):
        result = train_linear_probe(np.asarray(X, dtype=np.float32), np.asarray(y),
                                    seed=self.seed, epochs=self.epochs,
                                    batch=self.batch, weight_decay=self.weight_decay)
        self.result_ = result
        self.classes_ = np.arange(result.w.shape[1])
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise RuntimeError("probe is not fitted; call fit first")
        return probe_predict(np.asarray(X, dtype=np.float32), self.result_.w, self.result_.b)

    def score(self, X, y) -> float:
        return float((self.predict(X) == np.asarray(y)).mean())
