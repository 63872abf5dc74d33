"""Scikit-learn style estimator wrappers around the trainers.

Each estimator is fitted on an InteractionLog (the training side of a
temporal split) and afterwards exposes ``predict`` / ``score_items`` for
ranking candidate items per user. Hyperparameters follow the sklearn
``get_params`` / ``set_params`` convention so the estimators compose with
model-selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import InteractionLog
from .evaluate import rank_for_user
from .memory import MemoryConfig
from .pipeline import compose_scoring_model, filter_users, run_mosaic
from .trainer import TrainConfig, train_bpr, train_snape


def _check_log(X) -> InteractionLog:
    if not isinstance(X, InteractionLog):
        raise TypeError(f"expected an InteractionLog, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError("cannot fit on an empty interaction log")
    return X


class _RankingMixin:
    """Shared prediction surface; subclasses set ``model_`` in fit."""

    def _fitted_model(self):
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError(
                f"{type(self).__name__} is not fitted yet; call fit first"
            )
        return model

    def score_items(self, user: int, items) -> np.ndarray:
        model = self._fitted_model()
        return model.V[list(items)] @ model.U[user]

    def predict(self, user: int, candidates, k: int = 10) -> list:
        """Top-k candidate items for one user, best first."""
        ranked = rank_for_user(self._fitted_model(), user, candidates)
        return ranked[:k]

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            dim_k=self.dim_k,
            reg_lambda=self.reg_lambda,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=self.seed,
            snapshot_every=getattr(self, "snapshot_every", 1),
        )


class SnapeRecommender(_RankingMixin, BaseEstimator):
    """Sequential block-wise pairwise ranking trainer.

    Fitting walks every user's interaction stream in time order, forms blocks
    of non-preferred items followed by preferred ones, and applies one SGD
    step of the averaged regularized logistic ranking loss per block. The
    per-user embedding trajectory recorded along the way is available as
    ``trajectories_``.
    """

    def __init__(self, dim_k=4, reg_lambda=0.0, learning_rate=0.05, epochs=1,
                 seed=0, snapshot_every=1):
        self.dim_k = dim_k
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.snapshot_every = snapshot_every

    def fit(self, X, y=None):
        X = _check_log(X)
        self.model_, self.trajectories_ = train_snape(X, self._train_config())
        return self


class BprRecommender(_RankingMixin, BaseEstimator):
    """Bootstrap-sampled pairwise ranking baseline.

    Draws ``n_samples`` (user, positive, negative) triplets uniformly, the
    negative from the user's own viewed-but-unclicked items, and applies one
    SGD step per triplet.
    """

    def __init__(self, dim_k=4, reg_lambda=0.0, learning_rate=0.05, epochs=1,
                 seed=0, n_samples=100_000):
        self.dim_k = dim_k
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.n_samples = n_samples

    def fit(self, X, y=None):
        X = _check_log(X)
        self.model_ = train_bpr(X, self._train_config(), self.n_samples)
        return self


class MosaicRecommender(_RankingMixin, BaseEstimator):
    """Two-stage trainer with the long-memory user filter in between.

    After fitting, ``model_`` is the composed scoring model (stage-2 rows for
    surviving users and their items, stage-1 fallbacks elsewhere);
    ``report_`` carries the filter-stage counts.
    """

    def __init__(self, dim_k=4, reg_lambda=0.0, learning_rate=0.05, epochs=1,
                 seed=0, snapshot_every=1, min_length=32, level=0.05, m_rule="sqrt"):
        self.dim_k = dim_k
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.snapshot_every = snapshot_every
        self.min_length = min_length
        self.level = level
        self.m_rule = m_rule

    def fit(self, X, y=None):
        X = _check_log(X)
        mem_cfg = MemoryConfig(min_length=self.min_length, level=self.level, m_rule=self.m_rule)
        stage1, stage2, trajectories, reports, report = run_mosaic(X, self._train_config(), mem_cfg)
        self.stage1_model_ = stage1
        self.stage2_model_ = stage2
        self.trajectories_ = trajectories
        self.memory_reports_ = reports
        self.report_ = report
        self.survivors_ = filter_users(reports)
        self.model_ = compose_scoring_model(stage1, stage2, self.survivors_, X)
        return self
