"""scikit-learn style wrapper around model building, training and evaluation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import KnowledgeGraph, build_filter_index
from .evaluation import evaluate
from .models import embed_entity, score
from .training import ModelSpec, TrainConfig, lr_grid_search

__all__ = ["KGEEstimator", "check_triples", "check_entity_ids"]


def check_triples(X, entity_count=None, relation_count=None) -> np.ndarray:
    """Validate ``X`` as an ``(n, 3)`` array of integer ``(head, relation, tail)`` ids."""
    arr = np.asarray(X)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected triples of shape (n, 3), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("triple ids must be integers")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise ValueError(f"negative id {arr.min()} in triples")
    if entity_count is not None and arr[:, [0, 2]].max() >= entity_count:
        raise ValueError(f"entity id {arr[:, [0, 2]].max()} out of range for {entity_count} entities")
    if relation_count is not None and arr[:, 1].max() >= relation_count:
        raise ValueError(f"relation id {arr[:, 1].max()} out of range for {relation_count} relations")
    return arr


def check_entity_ids(X, entity_count) -> np.ndarray:
    ids = np.asarray(X).reshape(-1)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("entity ids must be integers")
    ids = ids.astype(np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= entity_count):
        raise ValueError(f"entity id out of range for {entity_count} entities")
    return ids


class KGEEstimator(BaseEstimator):
    """Link-prediction model with the usual ``fit``/``predict``/``transform``.

    ``fit`` takes a :class:`KnowledgeGraph` (its valid split drives checkpoint
    selection) or a bare ``(n, 3)`` array of training triples.  ``predict``
    returns raw scores, ``transform`` maps entity ids to their score-space
    vectors and ``score`` is the filtered MRR on the given triples.
    """

    def __init__(
        self,
        model="TransE",
        dim=512,
        entity_dim=None,
        liftnet="none",
        layers=2,
        p=2,
        learning_rate=0.01,
        lr_grid=None,
        max_epochs=500,
        batch_size=256,
        margin=4.0,
        loss=None,
        l2_reg=1e-5,
        negatives_per_positive=1,
        eval_every=10,
        seed=0,
        dtype="float64",
        tie_policy="optimistic",
    ):
        self.model = model
        self.dim = dim
        self.entity_dim = entity_dim
        self.liftnet = liftnet
        self.layers = layers
        self.p = p
        self.learning_rate = learning_rate
        self.lr_grid = lr_grid
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.margin = margin
        self.loss = loss
        self.l2_reg = l2_reg
        self.negatives_per_positive = negatives_per_positive
        self.eval_every = eval_every
        self.seed = seed
        self.dtype = dtype
        self.tie_policy = tie_policy

    def _spec(self) -> ModelSpec:
        return ModelSpec(self.model, self.dim, self.entity_dim, self.liftnet, self.layers, self.p)

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            lr_grid=self.lr_grid,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            margin=self.margin,
            loss=self.loss,
            l2_reg=self.l2_reg,
            negatives_per_positive=self.negatives_per_positive,
            eval_every=self.eval_every,
            seed=self.seed,
            dtype=self.dtype,
            tie_policy=self.tie_policy,
        )

    def fit(self, X, y=None):
        if isinstance(X, KnowledgeGraph):
            kg = X
        else:
            arr = check_triples(X)
            if not len(arr):
                raise ValueError("cannot fit on zero triples")
            kg = KnowledgeGraph(int(arr[:, [0, 2]].max()) + 1, int(arr[:, 1].max()) + 1, arr)
        self.kg_ = kg
        self.filter_ = build_filter_index(kg)
        self.best_lr_, self.params_, self.records_ = lr_grid_search(kg, self._spec(), self._config(), self.filter_)
        self.record_ = self.records_[self.best_lr_]
        self.n_entities_ = kg.entity_count
        self.n_relations_ = kg.relation_count
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        arr = check_triples(X, self.n_entities_, self.n_relations_)
        return score(self.params_, arr)[0].data.copy()

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return embed_entity(self.params_, check_entity_ids(X, self.n_entities_)).data.copy()

    def evaluate(self, X, split="test", ks=(1, 3, 10)):
        check_is_fitted(self, "params_")
        arr = check_triples(X, self.n_entities_, self.n_relations_)
        return evaluate(self.params_, arr, self.filter_, split, ks, self.tie_policy)

    def score(self, X, y=None) -> float:
        return self.evaluate(X).mrr
