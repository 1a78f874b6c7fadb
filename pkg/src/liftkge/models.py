"""Scoring functions and model parameters for TransE, TransH, DistMult, ComplEx.

Each model can keep entity vectors directly in the scoring dimension, or keep
narrow vectors that a LiftNet (or its dense FC variant) lifts before scoring.
Only entities are lifted; relations and TransH normals live in the scoring
dimension.  ComplEx tables hold ``[real | imag]`` halves side by side.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .liftnet import (
    FCVariantConfig,
    LiftNetConfig,
    LiftNetParams,
    fc_variant_forward,
    init_fc_weights,
    init_liftnet_params,
    lift_forward,
)

__all__ = [
    "ModelKind",
    "ScoreConvention",
    "ModelParams",
    "CheckpointError",
    "init_params",
    "embed_entity",
    "entity_matrix",
    "score_transe",
    "score_transh",
    "score_distmult",
    "score_complex",
    "score",
    "candidate_scores",
    "normalize_constraints",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class ModelKind(str, Enum):
    TRANSE = "TransE"
    TRANSH = "TransH"
    DISTMULT = "DistMult"
    COMPLEX = "ComplEx"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        for k in cls:
            if k.value.lower() == str(value).lower():
                return k
        raise ValueError(f"unknown model kind {value!r}; expected one of {[k.value for k in cls]}")

    @property
    def translational(self) -> bool:
        return self in (ModelKind.TRANSE, ModelKind.TRANSH)

    @property
    def convention(self) -> "ScoreConvention":
        return ScoreConvention.LOWER if self.translational else ScoreConvention.HIGHER

    @property
    def width(self) -> int:
        """Real numbers stored per nominal dimension."""
        return 2 if self is ModelKind.COMPLEX else 1


class ScoreConvention(str, Enum):
    LOWER = "lower_is_better"
    HIGHER = "higher_is_better"

    def better(self, a: np.ndarray, b) -> np.ndarray:
        """Elementwise: is ``a`` strictly better than ``b``?"""
        return a < b if self is ScoreConvention.LOWER else a > b

    @property
    def worst(self) -> float:
        return math.inf if self is ScoreConvention.LOWER else -math.inf


Lift = Union[LiftNetConfig, FCVariantConfig, None]


@dataclass
class ModelParams:
    kind: ModelKind
    dim: int
    entity_dim: int
    arrays: dict
    lift: Lift = None
    p: int = 2
    seed: int = 0

    @property
    def entity_count(self) -> int:
        return self.arrays["entity"].shape[0]

    @property
    def relation_count(self) -> int:
        return self.arrays["relation"].shape[0]

    @property
    def lifted(self) -> bool:
        return self.lift is not None

    @property
    def convention(self) -> ScoreConvention:
        return self.kind.convention

    def lift_names(self) -> list:
        if isinstance(self.lift, LiftNetConfig):
            return [f"lift.{i}" for i in range(len(self.lift.layers))]
        if isinstance(self.lift, FCVariantConfig):
            n = len(self.lift.layer_dims) - 1
            return [x for i in range(n) for x in (f"fc.{i}.weight", f"fc.{i}.bias")]
        return []

    def leaves(self) -> dict:
        """Fresh trainable leaf tensors sharing memory with ``arrays``."""
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.kind, self.dim, self.entity_dim, {k: v.copy() for k, v in self.arrays.items()}, self.lift, self.p, self.seed
        )


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


def init_params(
    kind,
    entity_count: int,
    relation_count: int,
    dim: int,
    entity_dim: Optional[int] = None,
    lift: Lift = None,
    p: int = 2,
    seed: int = 0,
) -> ModelParams:
    """Random initial parameters.

    Embedding tables are uniform in ``+-sqrt(6 / (2 * width))`` (Glorot over
    the vector itself, independent of the table height so that large graphs
    do not start near zero).
    """
    kind = ModelKind.parse(kind)
    if p not in (1, 2):
        raise ValueError(f"norm order p must be 1 or 2, got {p}")
    entity_dim = dim if entity_dim is None else entity_dim
    if lift is None and entity_dim != dim:
        raise ValueError(f"without a LiftNet the entity dim ({entity_dim}) must equal dim ({dim})")
    if lift is not None and (lift.input_dim != entity_dim or lift.output_dim != dim):
        raise ValueError(
            f"LiftNet maps {lift.input_dim}->{lift.output_dim}, model needs {entity_dim}->{dim}"
        )
    rng = np.random.default_rng(seed)
    w = kind.width
    arrays = {
        "entity": _uniform(rng, math.sqrt(3.0 / entity_dim), (entity_count, w * entity_dim)),
        "relation": _uniform(rng, math.sqrt(3.0 / dim), (relation_count, w * dim)),
    }
    if kind is ModelKind.TRANSH:
        normals = rng.normal(size=(relation_count, dim))
        arrays["hyperplane"] = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    if isinstance(lift, LiftNetConfig):
        for i, k in enumerate(init_liftnet_params(lift, rng).kernels):
            arrays[f"lift.{i}"] = k
    elif isinstance(lift, FCVariantConfig):
        for i, (wt, b) in enumerate(init_fc_weights(lift, rng)):
            arrays[f"fc.{i}.weight"] = wt
            arrays[f"fc.{i}.bias"] = b
    params = ModelParams(kind, dim, entity_dim, arrays, lift, p, seed)
    normalize_constraints(params)
    return params


def _leaves(params: ModelParams, leaves: Optional[dict]) -> dict:
    if leaves is not None:
        return leaves
    return {k: Tensor(v, name=k) for k, v in params.arrays.items()}


def _lift(params: ModelParams, x: Tensor, leaves: dict) -> Tensor:
    if isinstance(params.lift, LiftNetConfig):
        kernels = [leaves[f"lift.{i}"] for i in range(len(params.lift.layers))]
        return lift_forward(x, params.lift, LiftNetParams(kernels))
    n = len(params.lift.layer_dims) - 1
    weights = [(leaves[f"fc.{i}.weight"], leaves[f"fc.{i}.bias"]) for i in range(n)]
    return fc_variant_forward(x, params.lift, weights)


def embed_entity(params: ModelParams, ids, leaves: Optional[dict] = None) -> Tensor:
    """Score-space entity vectors for ``ids`` (lifted when a LiftNet is present).

    For ComplEx the result is ``batch x 2*dim`` with real then imaginary halves.
    """
    leaves = _leaves(params, leaves)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if not params.lifted:
        return ad.gather_rows(leaves["entity"], ids)
    uniq, inverse = np.unique(ids, return_inverse=True)
    rows = ad.gather_rows(leaves["entity"], uniq)
    if params.kind is ModelKind.COMPLEX:
        d = params.entity_dim
        re = _lift(params, ad.slice_cols(rows, 0, d), leaves)
        im = _lift(params, ad.slice_cols(rows, d, 2 * d), leaves)
        lifted = ad.concat_cols([re, im])
    else:
        lifted = _lift(params, rows, leaves)
    return ad.gather_rows(lifted, inverse)


def entity_matrix(params: ModelParams) -> np.ndarray:
    """All entities in score space, computed without recording gradients."""
    return embed_entity(params, np.arange(params.entity_count)).data


# ---------------------------------------------------------------- score functions


def _check_dims(*ts: Tensor) -> None:
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ad.ShapeError(f"dimension mismatch among {[t.shape for t in ts]}")


def score_transe(h: Tensor, r: Tensor, t: Tensor, p: int = 2) -> Tensor:
    """``||h + r - t||_p`` per row; lower is better."""
    _check_dims(h, r, t)
    return ad.lp_norm(h + r - t, p)


def project_hyperplane(e: Tensor, w: Tensor) -> Tensor:
    """``e - (w . e) w`` row by row."""
    _check_dims(e, w)
    ed, wd = e.data, w.data
    dot = (ed * wd).sum(axis=1, keepdims=True)

    def bw(g):
        gw_dot = (g * wd).sum(axis=1, keepdims=True)
        return g - gw_dot * wd, -(gw_dot * ed + dot * g)

    return ad.function(ed - dot * wd, (e, w), bw)


def score_transh(h: Tensor, r: Tensor, w: Tensor, t: Tensor, p: int = 2) -> Tensor:
    """TransE distance between hyperplane projections; ``w`` rows are unit normals."""
    _check_dims(h, r, w, t)
    return ad.lp_norm(project_hyperplane(h - t, w) + r, p)


def score_distmult(h: Tensor, r: Tensor, t: Tensor) -> Tensor:
    _check_dims(h, r, t)
    return ad.sum_rows(h * r * t)


def score_complex(h: Tensor, r: Tensor, t: Tensor) -> Tensor:
    """``Re(sum h * r * conj(t))`` with ``[real | imag]`` halves; higher is better."""
    _check_dims(h, r, t)
    if h.shape[1] % 2:
        raise ad.ShapeError(f"ComplEx vectors need an even width, got {h.shape[1]}")
    d = h.shape[1] // 2
    hr, hi = h.data[:, :d], h.data[:, d:]
    rr, ri = r.data[:, :d], r.data[:, d:]
    tr, ti = t.data[:, :d], t.data[:, d:]
    # Re((hr + i hi)(rr + i ri)(tr - i ti)) = hr (rr tr + ri ti) + hi (rr ti - ri tr)
    dh_r, dh_i = rr * tr + ri * ti, rr * ti - ri * tr
    out = (hr * dh_r + hi * dh_i).sum(axis=1)

    def bw(g):
        g = g[:, None]
        gh, gr, gt = (np.empty_like(x.data) for x in (h, r, t))
        np.multiply(dh_r, g, out=gh[:, :d])
        np.multiply(dh_i, g, out=gh[:, d:])
        hr_g, hi_g = hr * g, hi * g
        np.multiply(hr_g, tr, out=gr[:, :d])
        gr[:, :d] += hi_g * ti
        np.multiply(hr_g, ti, out=gr[:, d:])
        gr[:, d:] -= hi_g * tr
        np.multiply(hr_g, rr, out=gt[:, :d])
        gt[:, :d] -= hi_g * ri
        np.multiply(hr_g, ri, out=gt[:, d:])
        gt[:, d:] += hi_g * rr
        return gh, gr, gt

    return ad.function(out, (h, r, t), bw)


def _triples(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    return arr.reshape(-1, 3) if arr.size else np.zeros((0, 3), dtype=np.int64)


def score(params: ModelParams, triples, leaves: Optional[dict] = None):
    """Raw scores for ``(head, relation, tail)`` rows and their convention."""
    leaves = _leaves(params, leaves)
    arr = _triples(triples)
    n = len(arr)
    ents = embed_entity(params, np.concatenate([arr[:, 0], arr[:, 2]]), leaves)
    h = ad.slice_rows(ents, 0, n)
    t = ad.slice_rows(ents, n, 2 * n)
    return score_embedded(params, h, arr[:, 1], t, leaves), params.convention


def score_embedded(params: ModelParams, h: Tensor, rel_ids, t: Tensor, leaves: dict) -> Tensor:
    r = ad.gather_rows(leaves["relation"], rel_ids)
    kind = params.kind
    if kind is ModelKind.TRANSE:
        return score_transe(h, r, t, params.p)
    if kind is ModelKind.TRANSH:
        w = ad.gather_rows(leaves["hyperplane"], rel_ids)
        return score_transh(h, r, w, t, params.p)
    if kind is ModelKind.DISTMULT:
        return score_distmult(h, r, t)
    return score_complex(h, r, t)


def candidate_scores(
    params: ModelParams, triples, direction: str, entities: Optional[np.ndarray] = None, chunk: int = 2_000_000
) -> np.ndarray:
    """Scores of every entity substituted into one slot of each query triple.

    ``direction`` is ``"tail"`` (replace the tail) or ``"head"``.  Returns a
    ``len(triples) x entity_count`` array.  Pure numpy, no tape.
    """
    if direction not in ("head", "tail"):
        raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")
    arr = _triples(triples)
    E = entity_matrix(params) if entities is None else entities
    a = params.arrays
    rel = a["relation"][arr[:, 1]]
    anchor = E[arr[:, 0]] if direction == "tail" else E[arr[:, 2]]
    n_ent = E.shape[0]
    kind = params.kind
    out = np.empty((len(arr), n_ent))
    if kind is ModelKind.DISTMULT:
        out[:] = (anchor * rel) @ E.T
        return out
    if kind is ModelKind.COMPLEX:
        d = params.dim
        ar, ai = anchor[:, :d], anchor[:, d:]
        rr, ri = rel[:, :d], rel[:, d:]
        Er, Ei = E[:, :d], E[:, d:]
        if direction == "tail":
            # Re(x * conj(t)) with x = h * r
            xr, xi = ar * rr - ai * ri, ar * ri + ai * rr
            out[:] = xr @ Er.T + xi @ Ei.T
        else:
            # Re(h * y) with y = r * conj(t)
            yr, yi = rr * ar + ri * ai, ri * ar - rr * ai
            out[:] = yr @ Er.T - yi @ Ei.T
        return out
    # translational: chunk the (queries x entities x dim) difference tensor
    step = max(1, chunk // max(1, n_ent * E.shape[1]))
    w = a["hyperplane"][arr[:, 1]] if kind is ModelKind.TRANSH else None
    for s in range(0, len(arr), step):
        sl = slice(s, s + step)
        anc, r = anchor[sl], rel[sl]
        if w is None:
            cand = E[None, :, :]
        else:
            ws = w[sl]
            anc = anc - (anc * ws).sum(axis=1, keepdims=True) * ws
            cand = E[None, :, :] - (E @ ws.T).T[:, :, None] * ws[:, None, :]
        if direction == "tail":
            diff = (anc + r)[:, None, :] - cand
        else:
            diff = cand + (r - anc)[:, None, :]
        if params.p == 1:
            out[sl] = np.abs(diff).sum(axis=2)
        else:
            out[sl] = np.sqrt((diff * diff).sum(axis=2))
    return out


# ---------------------------------------------------------------- constraints


def normalize_constraints(params: ModelParams, rows: Optional[dict] = None) -> None:
    """Project parameters back onto their constraint sets, in place.

    TransH normals are rescaled to unit length.  Non-lifted TransE/TransH
    entity rows are shrunk to L2 norm at most 1.  ``rows`` optionally limits
    the work to the given row ids per parameter name.
    """
    rows = rows or {}
    a = params.arrays
    if params.kind is ModelKind.TRANSH:
        _rescale(a["hyperplane"], rows.get("hyperplane"), exact=True)
    if params.kind.translational and not params.lifted:
        _rescale(a["entity"], rows.get("entity"), exact=False)


def _rescale(table: np.ndarray, ids, exact: bool) -> None:
    view = table if ids is None else table[ids]
    norms = np.linalg.norm(view, axis=1, keepdims=True)
    if exact:
        factor = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    else:
        factor = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1.0), 1.0)
    if ids is None:
        table *= factor
    else:
        table[ids] = view * factor


# ---------------------------------------------------------------- checkpoints


class CheckpointError(ValueError):
    pass


def _lift_to_dict(lift: Lift):
    if lift is None:
        return None
    kind = "tc" if isinstance(lift, LiftNetConfig) else "fc"
    return {"type": kind, **lift.to_dict()}


def _lift_from_dict(d) -> Lift:
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("type")
    return LiftNetConfig.from_dict(d) if kind == "tc" else FCVariantConfig.from_dict(d)


def save_checkpoint(params: ModelParams, path, extra: Optional[dict] = None) -> None:
    """Write an ``.npz`` archive with a JSON header and every parameter array."""
    header = {
        "format": "liftkge-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": params.kind.value,
        "dim": params.dim,
        "entity_dim": params.entity_dim,
        "p": params.p,
        "seed": params.seed,
        "lift": _lift_to_dict(params.lift),
        "arrays": sorted(params.arrays),
        "extra": extra or {},
    }
    payload = {f"param/{k}": v for k, v in params.arrays.items()}
    payload["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    if isinstance(path, (str, bytes)) or hasattr(path, "__fspath__"):
        with open(path, "wb") as fh:
            np.savez(fh, **payload)
    else:
        np.savez(path, **payload)


def load_checkpoint(path) -> tuple:
    """Return ``(ModelParams, extra)`` from a file written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        if "header" not in z.files:
            raise CheckpointError(f"{path}: not a liftkge checkpoint")
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != "liftkge-checkpoint":
            raise CheckpointError(f"{path}: unrecognised format {header.get('format')!r}")
        if header["version"] > CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {header['version']} is newer than supported")
        arrays = {k: np.array(z[f"param/{k}"]) for k in header["arrays"]}
    params = ModelParams(
        ModelKind.parse(header["kind"]),
        header["dim"],
        header["entity_dim"],
        arrays,
        _lift_from_dict(header["lift"]),
        header["p"],
        header["seed"],
    )
    return params, header.get("extra", {})
