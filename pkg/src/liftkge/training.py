"""Losses, Adam, the epoch loop and learning-rate grid search."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GradStore, Tape, Tensor
from .data import KnowledgeGraph, FilterIndex, batch_iter, build_filter_index, corrupt
from .evaluation import evaluate
from .liftnet import FCVariantConfig, LiftNetConfig, default_config, plan_liftnet
from .models import (
    ModelKind,
    ModelParams,
    ScoreConvention,
    embed_entity,
    init_params,
    normalize_constraints,
    score_embedded,
)

__all__ = [
    "ModelSpec",
    "TrainConfig",
    "AdamState",
    "TrainRecord",
    "TrainingDiverged",
    "margin_loss",
    "logistic_loss",
    "adam_step",
    "build_model",
    "train",
    "lr_grid_search",
]

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (0.01, 0.05, 0.1, 0.5)


class TrainingDiverged(RuntimeError):
    """A non-finite loss was produced."""


@dataclass(frozen=True)
class ModelSpec:
    """What to build: model family, dimensions and the optional lifting network."""

    kind: str = "TransE"
    dim: int = 512
    entity_dim: Optional[int] = None
    lift: str = "none"  # none | tc | fc
    layers: int = 2
    p: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind).value)
        if self.lift not in ("none", "tc", "fc"):
            raise ValueError(f"lift must be 'none', 'tc' or 'fc', got {self.lift!r}")
        if self.lift == "none" and self.entity_dim not in (None, self.dim):
            raise ValueError("without lifting the entity dim must equal dim")

    @property
    def input_dim(self) -> int:
        return self.dim if self.entity_dim is None else self.entity_dim

    def lift_config(self):
        if self.lift == "none":
            return None
        if self.lift == "fc":
            return FCVariantConfig.geometric(self.input_dim, self.dim, self.layers)
        if (self.input_dim, self.dim, self.layers) == (16, 512, 2):
            return default_config()
        return plan_liftnet(self.input_dim, self.dim, self.layers)

    @property
    def label(self) -> str:
        prefix = {"none": "", "tc": "LN-", "fc": f"FC{self.layers}-"}[self.lift]
        return f"{prefix}{self.kind} ({self.input_dim})"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    lr_grid: Optional[tuple] = None
    max_epochs: int = 500
    batch_size: int = 256
    margin: float = 4.0
    loss: Optional[str] = None  # margin | logistic; None picks by model family
    l2_reg: float = 1e-5
    negatives_per_positive: int = 1
    eval_every: int = 10
    seed: int = 0
    lazy_adam: bool = True
    tie_policy: str = "optimistic"
    dtype: str = "float64"

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.margin <= 0 and self.loss != "logistic":
            raise ValueError("margin must be > 0")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.loss not in (None, "margin", "logistic"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.lr_grid is not None:
            object.__setattr__(self, "lr_grid", tuple(float(x) for x in self.lr_grid))
            if not self.lr_grid:
                raise ValueError("lr_grid must not be empty")

    def loss_for(self, kind: ModelKind) -> str:
        if self.loss is not None:
            return self.loss
        return "margin" if kind.translational else "logistic"


# ---------------------------------------------------------------- losses


def _pair(pos: Tensor, neg: Tensor) -> Tensor:
    """Repeat each positive score to line up with its block of negatives."""
    n, m = pos.shape[0], neg.shape[0]
    if n == m:
        return pos
    if n == 0 or m % n:
        raise ad.ShapeError(f"{m} negative scores cannot be paired with {n} positives")
    return ad.gather_rows(pos, np.repeat(np.arange(n), m // n))


def margin_loss(pos: Tensor, neg: Tensor, margin: float, convention=ScoreConvention.LOWER) -> Tensor:
    """Mean hinge ``max(0, margin + d_pos - d_neg)`` (signs flipped for similarities)."""
    pos = _pair(pos, neg)
    gap = pos - neg if ScoreConvention(convention) is ScoreConvention.LOWER else neg - pos
    return ad.mean(ad.relu(ad.add_scalar(gap, margin)))


def logistic_loss(pos: Tensor, neg: Tensor, l2: float = 0.0, embeddings: Sequence[Tensor] = ()) -> Tensor:
    """Mean of ``softplus(-pos) + softplus(neg)`` plus an L2 penalty.

    The penalty is ``l2`` times the mean squared L2 norm over all rows of
    ``embeddings``.
    """
    pos = _pair(pos, neg)
    loss = ad.mean(ad.softplus(ad.scale(pos, -1.0)) + ad.softplus(neg))
    if l2 > 0 and embeddings:
        rows = sum(e.shape[0] for e in embeddings)
        sq = ad.sum_squares(embeddings[0])
        for e in embeddings[1:]:
            sq = sq + ad.sum_squares(e)
        loss = loss + ad.scale(sq, l2 / rows)
    return loss


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _nonzero_rows(g: np.ndarray) -> np.ndarray:
    if g.ndim == 1:
        return np.flatnonzero(g)
    return np.flatnonzero(np.any(g.reshape(g.shape[0], -1) != 0, axis=1))


def adam_step(arrays: dict, grads: GradStore, state: AdamState, lr: float, lazy: bool = True) -> dict:
    """One Adam update in place; returns the row ids that changed per parameter.

    In lazy mode only rows (slices along axis 0) with a nonzero gradient are
    updated, moments included.  Dense mode updates every entry of every
    parameter, treating a missing gradient as zero.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    changed = {}
    for name, p in arrays.items():
        g = grads.get(name)
        if g is not None and g.shape != p.shape:
            raise ad.ShapeError(f"adam_step: grad for {name} has shape {g.shape}, param {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if not lazy:
            g = np.zeros_like(p) if g is None else g
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            changed[name] = None
            continue
        if g is None:
            continue
        touched = grads.touched_rows.get(name)
        if touched is None:
            rows = _nonzero_rows(g)
        else:
            rows = touched[_nonzero_rows(g[touched])]
        if rows.size == 0:
            continue
        gr = g[rows]
        mr = b1 * m[rows] + (1 - b1) * gr
        vr = b2 * v[rows] + (1 - b2) * gr * gr
        m[rows] = mr
        v[rows] = vr
        p[rows] -= lr * (mr / c1) / (np.sqrt(vr / c2) + state.eps)
        changed[name] = rows
    return changed


# ---------------------------------------------------------------- training loop


@dataclass
class TrainRecord:
    learning_rate: float
    epoch_losses: list = field(default_factory=list)
    valid_mrr: list = field(default_factory=list)  # (epoch, mrr)
    best_epoch: int = 0
    best_valid_mrr: float = float("-inf")
    diverged: Optional[str] = None

    def to_csv(self) -> str:
        evals = dict(self.valid_mrr)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "valid_mrr"])
        for epoch, loss in enumerate(self.epoch_losses, start=1):
            mrr = evals.get(epoch)
            w.writerow([epoch, repr(loss), "" if mrr is None else repr(mrr)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)


def build_model(kg: KnowledgeGraph, spec: ModelSpec, seed: int = 0, dtype: str = "float64") -> ModelParams:
    params = init_params(
        spec.kind,
        kg.entity_count,
        kg.relation_count,
        spec.dim,
        entity_dim=spec.input_dim,
        lift=spec.lift_config(),
        p=spec.p,
        seed=seed,
    )
    if dtype != "float64":
        params.arrays = {k: v.astype(dtype) for k, v in params.arrays.items()}
    return params


def _batch_loss(params: ModelParams, pos: np.ndarray, neg: np.ndarray, cfg: TrainConfig, leaves: dict) -> Tensor:
    triples = np.concatenate([pos, neg], axis=0)
    n = len(triples)
    h = embed_entity(params, triples[:, 0], leaves)
    t = embed_entity(params, triples[:, 2], leaves)
    scores = score_embedded(params, h, triples[:, 1], t, leaves)
    b = len(pos)
    pos_s = ad.slice_rows(scores, 0, b)
    neg_s = ad.slice_rows(scores, b, n)
    if cfg.loss_for(params.kind) == "margin":
        return margin_loss(pos_s, neg_s, cfg.margin, params.convention)
    r = ad.gather_rows(leaves["relation"], triples[:, 1])
    return logistic_loss(pos_s, neg_s, cfg.l2_reg, (h, r, t))


def train(
    kg: KnowledgeGraph,
    spec: ModelSpec,
    cfg: TrainConfig,
    filt: Optional[FilterIndex] = None,
    on_epoch: Optional[Callable] = None,
) -> tuple:
    """Train one model; returns ``(best ModelParams, TrainRecord)``.

    Validation MRR (filtered) is measured every ``cfg.eval_every`` epochs and
    after the last one; the parameters with the highest value are returned.
    Without a validation split the final parameters are returned.
    """
    params = build_model(kg, spec, cfg.seed, cfg.dtype)
    filt = build_filter_index(kg) if filt is None else filt
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 7919])
    record = TrainRecord(cfg.learning_rate)
    best = params.copy()
    k = cfg.negatives_per_positive
    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        for bi, pos in enumerate(batch_iter(kg.train, cfg.batch_size, cfg.seed, epoch)):
            neg = corrupt(pos, kg.entity_count, k, rng)
            with Tape() as tape:
                leaves = params.leaves()
                loss = _batch_loss(params, pos, neg, cfg, leaves)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch {bi} (lr={cfg.learning_rate})"
                )
            grads = ad.backward(loss, tape)
            changed = adam_step(params.arrays, grads, state, cfg.learning_rate, cfg.lazy_adam)
            normalize_constraints(params, {n: r for n, r in changed.items() if r is not None})
            total += value * len(pos)
            count += len(pos)
        record.epoch_losses.append(total / max(count, 1))
        if len(kg.valid) and (epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs):
            mrr = evaluate(params, kg.valid, filt, "valid", tie_policy=cfg.tie_policy).mrr
            record.valid_mrr.append((epoch, mrr))
            if mrr > record.best_valid_mrr:
                record.best_valid_mrr, record.best_epoch = mrr, epoch
                best = params.copy()
            log.debug("epoch %d loss %.6f valid mrr %.4f", epoch, record.epoch_losses[-1], mrr)
        if on_epoch is not None:
            on_epoch(epoch, record)
    if not len(kg.valid):
        best, record.best_epoch = params, cfg.max_epochs
    return best, record


def lr_grid_search(
    kg: KnowledgeGraph,
    spec: ModelSpec,
    cfg: TrainConfig,
    filt: Optional[FilterIndex] = None,
) -> tuple:
    """Train once per learning rate and keep the best validation MRR.

    Returns ``(best_lr, best_params, records)`` where ``records`` maps each
    learning rate to its :class:`TrainRecord`.  Ties go to the smaller rate.
    A rate whose run diverges is recorded and skipped; if every rate
    diverges the last error is raised.
    """
    grid = sorted(cfg.lr_grid or (cfg.learning_rate,))
    filt = build_filter_index(kg) if filt is None else filt
    records = {}
    best = None
    last_err = None
    for lr in grid:
        run_cfg = replace(cfg, learning_rate=lr, lr_grid=None)
        try:
            params, rec = train(kg, spec, run_cfg, filt)
        except TrainingDiverged as err:
            log.warning("lr=%g diverged: %s", lr, err)
            records[lr] = TrainRecord(lr, diverged=str(err))
            last_err = err
            continue
        records[lr] = rec
        if best is None or rec.best_valid_mrr > best[2].best_valid_mrr:
            best = (lr, params, rec)
    if best is None:
        raise last_err
    return best[0], best[1], records
