"""Triple datasets: loading, saving, the filter index and training batches."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

__all__ = [
    "Triple",
    "KnowledgeGraph",
    "FilterIndex",
    "NegSampleConfig",
    "DatasetError",
    "load_dataset",
    "save_dataset",
    "build_filter_index",
    "negative_sample",
    "corrupt",
    "batch_iter",
]

SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def _as_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DatasetError(f"triples must have shape (n, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Integer-id facts with train/valid/test splits.

    Splits are stored as ``(n, 3)`` int64 arrays in ``(head, relation, tail)``
    column order.
    """

    entity_count: int
    relation_count: int
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    entity_names: Optional[tuple] = None
    relation_names: Optional[tuple] = None

    def __post_init__(self):
        for name in SPLITS:
            arr = _as_array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if arr.size == 0:
                continue
            ents = arr[:, [0, 2]]
            if ents.min() < 0 or ents.max() >= self.entity_count:
                bad = ents[(ents < 0) | (ents >= self.entity_count)][0]
                raise DatasetError(f"{name}: entity id {bad} out of range [0, {self.entity_count})")
            rels = arr[:, 1]
            if rels.min() < 0 or rels.max() >= self.relation_count:
                bad = rels[(rels < 0) | (rels >= self.relation_count)][0]
                raise DatasetError(f"{name}: relation id {bad} out of range [0, {self.relation_count})")

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def triples(self, name: str) -> list:
        return [Triple(*map(int, row)) for row in self.split(name)]

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)

    def overlapping_triples(self) -> set:
        """Triples that occur in more than one split."""
        seen: dict = {}
        shared = set()
        for name in SPLITS:
            for t in set(map(tuple, self.split(name).tolist())):
                if t in seen and seen[t] != name:
                    shared.add(t)
                seen.setdefault(t, name)
        return shared

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entity_count == other.entity_count
            and self.relation_count == other.relation_count
            and all(np.array_equal(self.split(s), other.split(s)) for s in SPLITS)
            and self.entity_names == other.entity_names
            and self.relation_names == other.relation_names
        )


# ---------------------------------------------------------------- file formats


def _read_vocab(path: str) -> tuple:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}:1: empty file")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise DatasetError(f"{path}:1: expected a count, got {lines[0]!r}") from None
    names: list = [None] * count
    body = [(i, ln) for i, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != count:
        raise DatasetError(f"{path}: header says {count} entries, found {len(body)}")
    for lineno, line in body:
        parts = line.rsplit("\t", 1) if "\t" in line else line.rsplit(None, 1)
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'name<TAB>id', got {line!r}")
        try:
            idx = int(parts[1])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: bad id {parts[1]!r}") from None
        if not 0 <= idx < count or names[idx] is not None:
            raise DatasetError(f"{path}:{lineno}: id {idx} out of bounds or repeated")
        names[idx] = parts[0]
    return tuple(names)


def _read_openke_triples(path: str, n_ent: int, n_rel: int) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}:1: empty file")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise DatasetError(f"{path}:1: expected a count, got {lines[0]!r}") from None
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DatasetError(f"{path}:{lineno}: expected 'head tail relation', got {line!r}")
        try:
            h, t, r = (int(v) for v in parts)
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-integer id in {line!r}") from None
        if not (0 <= h < n_ent and 0 <= t < n_ent):
            raise DatasetError(f"{path}:{lineno}: entity id out of bounds in {line!r}")
        if not 0 <= r < n_rel:
            raise DatasetError(f"{path}:{lineno}: relation id out of bounds in {line!r}")
        rows.append((h, r, t))
    if len(rows) != count:
        raise DatasetError(f"{path}: header says {count} triples, found {len(rows)}")
    return _as_array(rows)


def _read_tsv(path: str) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 'head<TAB>relation<TAB>tail', got {line!r}")
            rows.append(tuple(parts))
    return rows


def load_dataset(path: str, format: str = "openke") -> KnowledgeGraph:
    """Read a dataset directory in OpenKE or tsv layout."""
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset directory not found: {path}")
    if format == "openke":
        ents = _read_vocab(os.path.join(path, "entity2id.txt"))
        rels = _read_vocab(os.path.join(path, "relation2id.txt"))
        splits = {}
        for name in SPLITS:
            fpath = os.path.join(path, f"{name}2id.txt")
            if name == "train" or os.path.exists(fpath):
                splits[name] = _read_openke_triples(fpath, len(ents), len(rels))
        kg = KnowledgeGraph(len(ents), len(rels), entity_names=ents, relation_names=rels, **splits)
    elif format == "tsv":
        raw = {}
        for name in SPLITS:
            candidates = [os.path.join(path, f"{name}.{ext}") for ext in ("txt", "tsv")]
            found = [c for c in candidates if os.path.exists(c)]
            if found:
                raw[name] = _read_tsv(found[0])
            elif name == "train":
                raise FileNotFoundError(f"no train.txt or train.tsv in {path}")
        ent_names = sorted({x for rows in raw.values() for h, _, t in rows for x in (h, t)})
        rel_names = sorted({r for rows in raw.values() for _, r, _ in rows})
        eid = {n: i for i, n in enumerate(ent_names)}
        rid = {n: i for i, n in enumerate(rel_names)}
        splits = {k: _as_array([(eid[h], rid[r], eid[t]) for h, r, t in rows]) for k, rows in raw.items()}
        kg = KnowledgeGraph(
            len(ent_names), len(rel_names), entity_names=tuple(ent_names), relation_names=tuple(rel_names), **splits
        )
    else:
        raise ValueError(f"unknown dataset format {format!r}; expected 'openke' or 'tsv'")
    shared = kg.overlapping_triples()
    if shared:
        raise DatasetError(f"{path}: {len(shared)} triples appear in more than one split, e.g. {min(shared)}")
    return kg


def save_dataset(kg: KnowledgeGraph, path: str) -> None:
    """Write ``kg`` in OpenKE layout (``head tail relation`` column order)."""
    os.makedirs(path, exist_ok=True)
    ents = kg.entity_names or tuple(str(i) for i in range(kg.entity_count))
    rels = kg.relation_names or tuple(str(i) for i in range(kg.relation_count))
    for fname, names in (("entity2id.txt", ents), ("relation2id.txt", rels)):
        with open(os.path.join(path, fname), "w", encoding="utf-8") as fh:
            fh.write(f"{len(names)}\n")
            fh.writelines(f"{n}\t{i}\n" for i, n in enumerate(names))
    for name in SPLITS:
        arr = kg.split(name)
        with open(os.path.join(path, f"{name}2id.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"{len(arr)}\n")
            fh.writelines(f"{h} {t} {r}\n" for h, r, t in arr.tolist())


# ---------------------------------------------------------------- filtering


@dataclass(frozen=True)
class FilterIndex:
    """Known true tails per ``(head, relation)`` and heads per ``(relation, tail)``."""

    tails: dict
    heads: dict

    def true_tails(self, head: int, relation: int) -> frozenset:
        return self.tails.get((head, relation), frozenset())

    def true_heads(self, relation: int, tail: int) -> frozenset:
        return self.heads.get((relation, tail), frozenset())

    def triples(self) -> set:
        return {(h, r, t) for (h, r), ts in self.tails.items() for t in ts}


def build_filter_index(kg: KnowledgeGraph) -> FilterIndex:
    tails: dict = {}
    heads: dict = {}
    for h, r, t in kg.all_triples().tolist():
        tails.setdefault((h, r), set()).add(t)
        heads.setdefault((r, t), set()).add(h)
    return FilterIndex(
        tails={k: frozenset(v) for k, v in tails.items()},
        heads={k: frozenset(v) for k, v in heads.items()},
    )


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class NegSampleConfig:
    negatives_per_positive: int = 1
    corruption: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.corruption != "uniform":
            raise ValueError(f"unsupported corruption scheme {self.corruption!r}")


def corrupt(positives: np.ndarray, entity_count: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` corrupted copies of each positive, as an ``(n*k, 3)`` array.

    Row ``i*k + j`` is the ``j``-th negative for positive ``i``.  Head or tail
    is chosen with probability 1/2 and replaced by an entity drawn uniformly
    from the other ``entity_count - 1`` entities.
    """
    if entity_count < 2:
        raise ValueError("negative sampling needs at least 2 entities")
    pos = _as_array(positives)
    neg = np.repeat(pos, k, axis=0)
    m = len(neg)
    slot = np.where(rng.random(m) < 0.5, 0, 2)
    draw = rng.integers(0, entity_count - 1, size=m)
    current = neg[np.arange(m), slot]
    # skip over the current entity: uniform over the remaining ones
    draw = draw + (draw >= current)
    neg[np.arange(m), slot] = draw
    return neg


def negative_sample(batch: Sequence, cfg: NegSampleConfig, rng: np.random.Generator, entity_count: int) -> list:
    """Pairs of ``(positive, [negatives])`` as :class:`Triple` values."""
    pos = _as_array([tuple(t) for t in batch])
    k = cfg.negatives_per_positive
    neg = corrupt(pos, entity_count, k, rng)
    return [
        (Triple(*map(int, p)), [Triple(*map(int, n)) for n in neg[i * k:(i + 1) * k]])
        for i, p in enumerate(pos)
    ]


def batch_iter(triples: np.ndarray, batch_size: int, seed: Optional[int], epoch: int = 0) -> Iterator[np.ndarray]:
    """Yield consecutive batches of a per-``(seed, epoch)`` permutation."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    arr = _as_array(triples)
    if seed is None:
        order = np.arange(len(arr))
    else:
        order = np.random.default_rng([seed, epoch]).permutation(len(arr))
    for start in range(0, len(arr), batch_size):
        yield arr[order[start:start + batch_size]]
