"""Scikit-learn style facade over world generation, training, and evaluation.

SusaNavigator wraps the full pipeline behind fit/predict/score so it can
sit in the usual estimator tooling (get_params grids, cloning, etc.).
"""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics
from .model import ModelConfig, SusaModel
from .trainer import TrainConfig, evaluate, make_training_worlds, train
from .world import Episode, World, WorldParams


def _check_pairs(X):
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("expected a non-empty list of (World, Episode) pairs")
    for item in X:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or not isinstance(item[0], World) or not isinstance(item[1], Episode)):
            raise ValueError("each item must be a (World, Episode) pair")
    return list(X)


class SusaNavigator(BaseEstimator):
    """Instruction-following navigation agent on procedural graph worlds.

    fit() trains on procedurally generated worlds; predict() returns one
    trajectory (node list) per (world, episode) pair; score() is the mean
    success rate.
    """

    def __init__(self, d=32, delta=0.5, temperature=0.07, iterations=2000,
                 batch_size=8, lr=0.05, momentum=0.9, lambda1=0.2, lambda2=0.8,
                 n_train_worlds=6, node_count_min=15, node_count_max=30,
                 n_views=8, max_steps=15, seed=0):
        self.d = d
        self.delta = delta
        self.temperature = temperature
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.n_train_worlds = n_train_worlds
        self.node_count_min = node_count_min
        self.node_count_max = node_count_max
        self.n_views = n_views
        self.max_steps = max_steps
        self.seed = seed

    def _configs(self):
        world = WorldParams(node_count_min=self.node_count_min,
                            node_count_max=self.node_count_max,
                            n_views=self.n_views, d_v=self.d, seed=self.seed)
        model = ModelConfig(d=self.d, delta=self.delta, temperature=self.temperature,
                            max_steps=self.max_steps, seed=self.seed)
        tr = TrainConfig(iterations=self.iterations, batch_size=self.batch_size,
                         lr=self.lr, momentum=self.momentum, seed=self.seed,
                         lambda1=self.lambda1, lambda2=self.lambda2,
                         n_train_worlds=self.n_train_worlds)
        return world, model, tr

    def fit(self, X=None, y=None):
        """Train on procedural worlds. X/y are ignored (self-supervised by
        the simulator); pass X as (World, Episode) pairs to eval via score()."""
        world_params, model_cfg, train_cfg = self._configs()
        self.worlds_ = make_training_worlds(train_cfg, world_params)
        self.model_ = SusaModel(model_cfg, self.worlds_[0].vocab)
        self.log_ = train(self.model_, self.worlds_, train_cfg)
        return self

    def predict(self, X):
        """Trajectories (node-id lists) for (World, Episode) pairs."""
        self._check_fitted()
        pairs = _check_pairs(X)
        return [self.model_.rollout(w, ep, mode="greedy").path for w, ep in pairs]

    def score(self, X, y=None):
        """Mean success rate over (World, Episode) pairs."""
        self._check_fitted()
        pairs = _check_pairs(X)
        _, summary = evaluate(self.model_, pairs)
        return summary["SR"] / 100.0

    def evaluate_metrics(self, X) -> dict:
        """Full aggregate metric table over (World, Episode) pairs."""
        self._check_fitted()
        _, summary = evaluate(self.model_, _check_pairs(X))
        return summary

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("SusaNavigator is not fitted; call fit() first")
