import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from liftkge.liftnet import default_config
from liftkge.reporting import (
    DATASET_SIZES,
    ParamReport,
    count_params,
    efficiency_percentage,
    emit_table,
    round_half_up,
)

LN = default_config()


def baseline(kind, dataset):
    e, r = DATASET_SIZES[dataset]
    return count_params(kind, e, r, 512, 512)


def lifted(kind, dataset):
    e, r = DATASET_SIZES[dataset]
    return count_params(kind, e, r, 16, 512, LN)


class TestCountParams:
    def test_transe_wn18rr(self):
        rep = baseline("TransE", "WN18RR")
        assert rep.exact_count == 20_968_448
        assert rep.millions == 20.968

    def test_lifted_transe_wn18rr(self):
        rep = lifted("TransE", "WN18RR")
        assert rep.exact_count == 661_044
        assert rep.millions == 0.661
        assert rep.breakdown == {"entity": 655_088, "relation": 5_632, "hyperplane": 0, "liftnet": 324}

    def test_lifted_complex_fb15k237(self):
        rep = lifted("ComplEx", "FB15K237")
        assert rep.exact_count == 708_324
        assert rep.millions == 0.708

    def test_transh_adds_hyperplanes(self):
        rep = baseline("TransH", "UMLS")
        assert rep.breakdown["hyperplane"] == rep.breakdown["relation"] == 46 * 512

    def test_precomputed_liftnet_count(self):
        assert count_params("DistMult", 10, 2, 4, 8, 100).exact_count == 40 + 16 + 100

    @given(kind=st.sampled_from(["TransE", "TransH", "DistMult", "ComplEx"]),
           e=st.integers(1, 10**5), r=st.integers(1, 10**3), de=st.integers(1, 64), n=st.integers(1, 1024))
    def test_breakdown_sums_and_rounds(self, kind, e, r, de, n):
        rep = count_params(kind, e, r, de, n, 7)
        assert rep.exact_count == sum(rep.breakdown.values())
        assert rep.millions == round_half_up(rep.exact_count / 1e6, 3)
        assert abs(rep.millions - rep.exact_count / 1e6) <= 0.0005 + 1e-12


class TestPercentage:
    def test_wn18rr_transe(self):
        assert efficiency_percentage(lifted("TransE", "WN18RR"), baseline("TransE", "WN18RR")) == 3.2

    def test_fb15k237_transe(self):
        lo, hi = lifted("TransE", "FB15K237"), baseline("TransE", "FB15K237")
        assert (lo.exact_count, hi.exact_count) == (354_324, 7_566_336)
        assert efficiency_percentage(lo, hi) == 4.7

    def test_identical_is_hundred(self):
        rep = baseline("DistMult", "UMLS")
        assert efficiency_percentage(rep, rep) == 100.0

    def test_zero_baseline(self):
        with pytest.raises(ZeroDivisionError):
            efficiency_percentage(ParamReport(5), ParamReport(0))

    # published percentage rows; the UMLS TransH and ComplEx entries do not
    # follow from the published counts themselves and are checked separately
    PUBLISHED = {
        ("UMLS", "TransE"): 28.2, ("UMLS", "DistMult"): 28.2,
        ("WN18RR", "TransE"): 3.1, ("WN18RR", "TransH"): 3.2, ("WN18RR", "DistMult"): 3.1,
        ("WN18RR", "ComplEx"): 3.1, ("FB15K237", "TransE"): 4.7, ("FB15K237", "TransH"): 6.2,
        ("FB15K237", "DistMult"): 4.7, ("FB15K237", "ComplEx"): 4.7,
    }

    @pytest.mark.parametrize("key", sorted(PUBLISHED))
    def test_published_within_a_tenth(self, key):
        dataset, kind = key
        got = efficiency_percentage(lifted(kind, dataset), baseline(kind, dataset))
        assert abs(got - self.PUBLISHED[key]) <= 0.1 + 1e-9

    @pytest.mark.parametrize("kind,printed,exact", [("TransH", 42.2, 42.7), ("ComplEx", 27.5, 27.9)])
    def test_umls_rows_off_by_more(self, kind, printed, exact):
        got = efficiency_percentage(lifted(kind, "UMLS"), baseline(kind, "UMLS"))
        assert got == exact
        assert abs(got - printed) > 0.1


ROWS = [
    {"dataset": "UMLS", "model": "LN-TransE", "dim": 16, "mrr": 0.7451, "h1": 0.585, "h10": 0.972,
     "params_exact": 25_620, "params_millions": 0.026, "percentage": 26.0},
    {"dataset": "UMLS", "model": "TransE", "dim": 16, "mrr": 0.641, "h1": 0.483, "h10": 0.898,
     "params_exact": 2_896, "params_millions": 0.003, "percentage": None},
]


class TestEmitTable:
    @pytest.mark.parametrize("fmt", ["markdown", "csv"])
    def test_empty_is_header_only(self, fmt):
        out = emit_table([], fmt)
        assert len(out.strip().splitlines()) == (2 if fmt == "markdown" else 1)
        assert "params_exact" in out

    def test_empty_json(self):
        assert json.loads(emit_table([], "json")) == []

    def test_csv_round_trip(self):
        parsed = list(csv.DictReader(io.StringIO(emit_table(ROWS[:1], "csv"))))
        assert len(parsed) == 1
        assert {k: str(v) for k, v in ROWS[0].items()} == parsed[0]

    def test_json_exact(self):
        assert json.loads(emit_table(ROWS, "json")) == ROWS

    def test_column_order_is_stable(self):
        shuffled = [dict(reversed(list(r.items()))) for r in ROWS]
        assert emit_table(shuffled, "csv") == emit_table(ROWS, "csv")
        header = emit_table(ROWS, "csv").splitlines()[0].split(",")
        assert header == ["dataset", "model", "dim", "mrr", "h1", "h10", "params_exact", "params_millions", "percentage"]

    def test_markdown_rounds_metrics(self):
        out = emit_table(ROWS, "markdown")
        assert "| 0.745 |" in out and "| 26.0 |" in out

    def test_schema_mismatch(self):
        with pytest.raises(ValueError, match="row 1"):
            emit_table([ROWS[0], {"dataset": "UMLS"}], "csv")

    def test_unknown_format(self):
        with pytest.raises(ValueError, match="format"):
            emit_table(ROWS, "xml")


def test_round_half_up():
    assert round_half_up(0.0495, 3) == 0.050
    assert round_half_up(3.15, 1) == 3.2
    assert round_half_up(2.5, 0) == 3.0
