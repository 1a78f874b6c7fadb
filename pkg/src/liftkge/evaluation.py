"""Filtered link-prediction ranking: MRR and Hits@k over both query directions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import FilterIndex, Triple
from .models import ModelParams, candidate_scores, entity_matrix

__all__ = ["RankResult", "EvalReport", "rank_candidates", "ranks", "evaluate", "summarize"]

TIE_POLICIES = ("optimistic", "average")
DEFAULT_KS = (1, 3, 10)


@dataclass(frozen=True)
class RankResult:
    triple: Triple
    direction: str
    rank: float


@dataclass
class EvalReport:
    split: str
    mrr: float
    hits: dict
    count: int
    per_direction: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hits"] = {str(k): v for k, v in self.hits.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["split"], d["mrr"], {int(k): v for k, v in d["hits"].items()}, d["count"], d.get("per_direction", {}))

    def row(self) -> dict:
        """The headline columns: mrr, h1, h10."""
        return {"mrr": self.mrr, "h1": self.hits.get(1), "h10": self.hits.get(10)}


def _rank_row(scores: np.ndarray, gold: int, exclude, convention, tie_policy: str) -> float:
    better = convention.better(scores, scores[gold])
    ties = scores == scores[gold]
    ties[gold] = False
    if exclude:
        idx = np.fromiter(exclude, dtype=np.int64)
        better[idx] = False
        ties[idx] = False
    rank = 1.0 + float(better.sum())
    if tie_policy == "average":
        rank += ties.sum() / 2.0
    return rank


def _excluded(filt: Optional[FilterIndex], h: int, r: int, t: int, direction: str) -> list:
    if filt is None:
        return []
    if direction == "tail":
        return [x for x in filt.true_tails(h, r) if x != t]
    return [x for x in filt.true_heads(r, t) if x != h]


def rank_candidates(
    params: ModelParams,
    triple,
    direction: str,
    filt: Optional[FilterIndex] = None,
    tie_policy: str = "optimistic",
    entities: Optional[np.ndarray] = None,
) -> float:
    """Rank of the gold entity among all substitutions in one slot.

    With ``filt`` given, other known true triples are removed from the
    candidate list; passing ``None`` yields the raw rank.
    """
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")
    h, r, t = map(int, triple)
    row = candidate_scores(params, [(h, r, t)], direction, entities)[0]
    gold = t if direction == "tail" else h
    return _rank_row(row, gold, _excluded(filt, h, r, t, direction), params.convention, tie_policy)


def ranks(
    params: ModelParams,
    triples,
    direction: str,
    filt: Optional[FilterIndex] = None,
    tie_policy: str = "optimistic",
    entities: Optional[np.ndarray] = None,
    chunk: int = 256,
) -> np.ndarray:
    """Vectorised :func:`rank_candidates` over many queries."""
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    E = entity_matrix(params) if entities is None else entities
    conv = params.convention
    out = np.empty(len(arr))
    gold_col = 2 if direction == "tail" else 0
    for s in range(0, len(arr), chunk):
        block = arr[s:s + chunk]
        sc = candidate_scores(params, block, direction, E)
        gold = block[:, gold_col]
        gold_scores = sc[np.arange(len(block)), gold]
        if filt is not None:
            for i, (h, r, t) in enumerate(block.tolist()):
                ex = _excluded(filt, h, r, t, direction)
                if ex:
                    sc[i, ex] = conv.worst
        sc[np.arange(len(block)), gold] = gold_scores
        better = conv.better(sc, gold_scores[:, None]).sum(axis=1)
        rk = 1.0 + better
        if tie_policy == "average":
            ties = (sc == gold_scores[:, None]).sum(axis=1) - 1
            rk = rk + ties / 2.0
        out[s:s + chunk] = rk
    return out


def summarize(rank_values, ks: Sequence[int] = DEFAULT_KS) -> tuple:
    """``(mrr, {k: hits@k})`` for an array of ranks."""
    r = np.asarray(rank_values, dtype=np.float64)
    if r.size == 0:
        raise ValueError("cannot summarise an empty set of ranks")
    mrr = float(np.mean(1.0 / r))
    return mrr, {int(k): float(np.mean(r <= k)) for k in ks}


def evaluate(
    params: ModelParams,
    triples,
    filt: Optional[FilterIndex] = None,
    split: str = "test",
    ks: Sequence[int] = DEFAULT_KS,
    tie_policy: str = "optimistic",
) -> EvalReport:
    """MRR and Hits@k over head and tail queries for every triple."""
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(arr) == 0:
        raise ValueError(f"split {split!r} is empty")
    E = entity_matrix(params)
    tail = ranks(params, arr, "tail", filt, tie_policy, E)
    head = ranks(params, arr, "head", filt, tie_policy, E)
    mrr, hits = summarize(np.concatenate([tail, head]), ks)
    per_direction = {}
    for name, rk in (("tail", tail), ("head", head)):
        m, h = summarize(rk, ks)
        per_direction[name] = {"mrr": m, "hits": {str(k): v for k, v in h.items()}}
    return EvalReport(split, mrr, hits, 2 * len(arr), per_direction)
