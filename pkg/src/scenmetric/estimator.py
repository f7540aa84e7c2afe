"""Estimator-style wrapper around the training loop.

ScenarioMetricLearner follows the familiar fit/transform protocol: fit
trains the encoder/decoder on a Dataset, transform maps scenarios to
latent vectors.  All hyperparameters are plain constructor arguments so
get_params/set_params/clone work as usual.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .losses import LossWeights, MarginParams
from .network import NetworkConfig, embed_dataset, forward_encode, train
from .scenario import Dataset, Scenario

__all__ = ["ScenarioMetricLearner"]


class ScenarioMetricLearner(BaseEstimator, TransformerMixin):
    """Metric-learning embedder for traffic scenarios.

    fit(X) expects a Dataset; transform(X) accepts a Dataset or a
    sequence of Scenario objects and returns an (M, latent) array.
    """

    def __init__(
        self,
        epochs=30,
        lr=1e-3,
        strategy="random",
        seed=0,
        image_size=64,
        latent_i=64,
        latent_t=16,
        latent=64,
        conv_channels=(8, 16, 16, 16),
        attn_width=16,
        attn_heads=1,
        alpha_g=1.0,
        alpha_r=1.0,
        alpha_t=1.0,
        beta_m=1.0,
        beta_g=1.0,
        beta_r=1.0,
        beta_t=1.0,
        beta_rec=10.0,
        gamma_i=5.0,
        gamma_i_bar=10.0,
        gamma_t=5.0,
        gamma_t_bar=20.0,
    ):
        self.epochs = epochs
        self.lr = lr
        self.strategy = strategy
        self.seed = seed
        self.image_size = image_size
        self.latent_i = latent_i
        self.latent_t = latent_t
        self.latent = latent
        self.conv_channels = conv_channels
        self.attn_width = attn_width
        self.attn_heads = attn_heads
        self.alpha_g = alpha_g
        self.alpha_r = alpha_r
        self.alpha_t = alpha_t
        self.beta_m = beta_m
        self.beta_g = beta_g
        self.beta_r = beta_r
        self.beta_t = beta_t
        self.beta_rec = beta_rec
        self.gamma_i = gamma_i
        self.gamma_i_bar = gamma_i_bar
        self.gamma_t = gamma_t
        self.gamma_t_bar = gamma_t_bar

    def _network_config(self) -> NetworkConfig:
        return NetworkConfig(
            image_size=self.image_size,
            latent_i=self.latent_i,
            latent_t=self.latent_t,
            latent=self.latent,
            conv_channels=tuple(self.conv_channels),
            attn_width=self.attn_width,
            attn_heads=self.attn_heads,
            seed=self.seed,
        )

    def _margins(self) -> MarginParams:
        return MarginParams(alpha_g=self.alpha_g, alpha_r=self.alpha_r, alpha_t=self.alpha_t)

    def _weights(self) -> LossWeights:
        return LossWeights(
            beta_m=self.beta_m,
            beta_g=self.beta_g,
            beta_r=self.beta_r,
            beta_t=self.beta_t,
            beta_rec=self.beta_rec,
            gamma_i=self.gamma_i,
            gamma_i_bar=self.gamma_i_bar,
            gamma_t=self.gamma_t,
            gamma_t_bar=self.gamma_t_bar,
        )

    def fit(self, X, y=None):
        """Train on a Dataset; y is ignored."""
        if not isinstance(X, Dataset):
            raise TypeError(f"fit expects a Dataset, got {type(X).__name__}")
        state, log = train(
            X,
            network=self._network_config(),
            margins=self._margins(),
            weights=self._weights(),
            epochs=self.epochs,
            lr=self.lr,
            strategy=self.strategy,
            seed=self.seed,
        )
        self.state_ = state
        self.log_ = log
        return self

    def transform(self, X) -> np.ndarray:
        """Latent vectors for a Dataset or a sequence of scenarios."""
        if not hasattr(self, "state_"):
            raise NotFittedError(
                "this ScenarioMetricLearner instance is not fitted yet"
            )
        if isinstance(X, Dataset):
            return embed_dataset(self.state_, X)
        entries = list(X)
        if not entries:
            raise ValueError("no scenarios to transform")
        for s in entries:
            if not isinstance(s, Scenario):
                raise TypeError(f"expected Scenario, got {type(s).__name__}")
        return np.stack([forward_encode(self.state_, s) for s in entries])
