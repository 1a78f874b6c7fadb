"""Parameter accounting and table output (markdown, csv, json)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence, Union

from .liftnet import FCVariantConfig, LiftNetConfig, param_count_fc, param_count_liftnet
from .models import ModelKind, ModelParams

__all__ = [
    "DATASET_SIZES",
    "ParamReport",
    "count_params",
    "count_model_params",
    "efficiency_percentage",
    "round_half_up",
    "emit_table",
    "COLUMNS",
]

# |E|, |R| of the standard benchmarks
DATASET_SIZES = {
    "UMLS": (135, 46),
    "WN18RR": (40943, 11),
    "FB15K237": (14541, 237),
}

COLUMNS = (
    "dataset",
    "model",
    "dim",
    "axis",
    "axis_value",
    "status",
    "lr",
    "mrr",
    "h1",
    "h3",
    "h10",
    "params_exact",
    "params_millions",
    "percentage",
)
TABLE_COLUMNS = ("dataset", "model", "dim", "mrr", "h1", "h10", "params_exact", "params_millions", "percentage")


def round_half_up(x, places: int) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(str(x)).quantize(q, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class ParamReport:
    exact_count: int
    breakdown: dict = field(default_factory=dict)
    percentage_vs_baseline: Optional[float] = None

    @property
    def millions(self) -> float:
        return float((Decimal(self.exact_count) / Decimal(10**6)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))

    def to_dict(self) -> dict:
        return {
            "params_exact": self.exact_count,
            "params_millions": self.millions,
            "breakdown": dict(self.breakdown),
            "percentage": self.percentage_vs_baseline,
        }


def count_params(
    kind,
    entity_count: int,
    relation_count: int,
    entity_dim: int,
    dim: int,
    lift: Union[LiftNetConfig, FCVariantConfig, int, None] = None,
) -> ParamReport:
    """Exact trainable-parameter count of a model.

    entity ``|E| * entity_dim``, relation ``|R| * dim``, both doubled for
    ComplEx; TransH adds ``|R| * dim`` hyperplane normals; a lifting network
    adds its own weights (``lift`` may also be a precomputed count).
    """
    kind = ModelKind.parse(kind)
    w = kind.width
    if isinstance(lift, LiftNetConfig):
        p_net = param_count_liftnet(lift)
    elif isinstance(lift, FCVariantConfig):
        p_net = param_count_fc(lift)
    else:
        p_net = int(lift or 0)
    breakdown = {
        "entity": w * entity_count * entity_dim,
        "relation": w * relation_count * dim,
        "hyperplane": relation_count * dim if kind is ModelKind.TRANSH else 0,
        "liftnet": p_net,
    }
    return ParamReport(sum(breakdown.values()), breakdown)


def count_model_params(params: ModelParams) -> ParamReport:
    return count_params(
        params.kind, params.entity_count, params.relation_count, params.entity_dim, params.dim, params.lift
    )


def efficiency_percentage(lifted: ParamReport, baseline: ParamReport) -> float:
    """``100 * lifted / baseline`` rounded half-up to one decimal."""
    if baseline.exact_count == 0:
        raise ZeroDivisionError("baseline has zero parameters")
    return round_half_up(Decimal(100 * lifted.exact_count) / Decimal(baseline.exact_count), 1)


# ---------------------------------------------------------------- tables


def _columns(rows: Sequence[dict], default: Sequence[str]) -> list:
    if not rows:
        return list(default)
    keys = list(rows[0])
    for i, r in enumerate(rows[1:], start=1):
        if set(r) != set(keys):
            raise ValueError(f"row {i} has columns {sorted(r)}, expected {sorted(keys)}")
    known = [c for c in COLUMNS if c in keys]
    return known + [k for k in keys if k not in COLUMNS]


_MD_PLACES = {"mrr": 3, "h1": 3, "h3": 3, "h10": 3, "params_millions": 3, "percentage": 1}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_table(rows: Sequence[dict], format: str = "markdown", columns: Sequence[str] = TABLE_COLUMNS) -> str:
    """Render rows with a stable column order.

    Known columns come first in :data:`COLUMNS` order, any others follow in
    the order of the first row.  ``columns`` is only used for the header of
    an empty table.
    """
    cols = _columns(rows, columns)
    if format == "json":
        return json.dumps([{c: r[c] for c in cols} for r in rows], indent=2)
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
        return buf.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
        for r in rows:
            cells = []
            for c in cols:
                v = r[c]
                if isinstance(v, float) and c in _MD_PLACES:
                    cells.append(f"{v:.{_MD_PLACES[c]}f}")
                else:
                    cells.append(_fmt(v))
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {format!r}; expected markdown, csv or json")
