from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liftkge.data import (
    DatasetError,
    KnowledgeGraph,
    NegSampleConfig,
    Triple,
    batch_iter,
    build_filter_index,
    corrupt,
    load_dataset,
    negative_sample,
    save_dataset,
)


def write_openke(path, ents=("a", "b", "c"), rels=("r",), train="1\n0 1 0\n", valid="0\n", test="0\n"):
    path.mkdir(parents=True, exist_ok=True)
    (path / "entity2id.txt").write_text(f"{len(ents)}\n" + "".join(f"{n}\t{i}\n" for i, n in enumerate(ents)))
    (path / "relation2id.txt").write_text(f"{len(rels)}\n" + "".join(f"{n}\t{i}\n" for i, n in enumerate(rels)))
    (path / "train2id.txt").write_text(train)
    (path / "valid2id.txt").write_text(valid)
    (path / "test2id.txt").write_text(test)
    return path


class TestLoad:
    def test_openke_column_order(self, tmp_path):
        kg = load_dataset(str(write_openke(tmp_path, train="1\n0 2 0\n")))
        assert kg.triples("train") == [Triple(0, 0, 2)]
        assert kg.entity_names == ("a", "b", "c")

    def test_umls_statistics(self, umls_dir):
        kg = load_dataset(str(umls_dir))
        assert (kg.entity_count, kg.relation_count) == (135, 46)
        assert len(kg.train) + len(kg.valid) + len(kg.test) == 6529
        assert (len(kg.train), len(kg.valid), len(kg.test)) == (5216, 652, 661)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nowhere"):
            load_dataset(str(tmp_path / "nowhere"))

    def test_malformed_line_names_file_and_line(self, tmp_path):
        write_openke(tmp_path, train="2\n0 1 0\n0 1\n")
        with pytest.raises(DatasetError, match=r"train2id.txt:3"):
            load_dataset(str(tmp_path))

    def test_id_out_of_bounds(self, tmp_path):
        write_openke(tmp_path, train="1\n0 9 0\n")
        with pytest.raises(DatasetError, match="out of bounds"):
            load_dataset(str(tmp_path))

    def test_count_mismatch(self, tmp_path):
        write_openke(tmp_path, train="3\n0 1 0\n")
        with pytest.raises(DatasetError, match="header says 3"):
            load_dataset(str(tmp_path))

    def test_overlapping_splits_rejected(self, tmp_path):
        write_openke(tmp_path, train="1\n0 1 0\n", test="1\n0 1 0\n")
        with pytest.raises(DatasetError, match="more than one split"):
            load_dataset(str(tmp_path))

    def test_tsv(self, tmp_path):
        (tmp_path / "train.txt").write_text("x\tlikes\ty\ny\tlikes\tz\n")
        (tmp_path / "test.txt").write_text("x\thates\tz\n")
        kg = load_dataset(str(tmp_path), "tsv")
        assert kg.entity_names == ("x", "y", "z")
        assert kg.relation_names == ("hates", "likes")
        assert kg.triples("test") == [Triple(0, 0, 2)]

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError, match="format"):
            load_dataset(str(write_openke(tmp_path)), "rdf")

    def test_round_trip(self, small_kg, tmp_path):
        save_dataset(small_kg, str(tmp_path / "kg"))
        again = load_dataset(str(tmp_path / "kg"))
        assert again == KnowledgeGraph(8, 3, small_kg.train, small_kg.valid, small_kg.test,
                                       tuple(map(str, range(8))), tuple(map(str, range(3))))

    def test_umls_round_trip(self, umls_dir, tmp_path):
        kg = load_dataset(str(umls_dir))
        save_dataset(kg, str(tmp_path))
        assert load_dataset(str(tmp_path)) == kg

    def test_constructor_bounds(self):
        with pytest.raises(DatasetError, match="entity id 5"):
            KnowledgeGraph(3, 1, [(0, 0, 5)])
        with pytest.raises(DatasetError, match="relation id 2"):
            KnowledgeGraph(3, 1, [(0, 2, 1)])

    def test_splits_read_only(self, small_kg):
        with pytest.raises(ValueError):
            small_kg.train[0, 0] = 1


class TestFilterIndex:
    def test_single_triple(self):
        f = build_filter_index(KnowledgeGraph(2, 1, [(0, 0, 1)]))
        assert f.true_tails(0, 0) == {1}
        assert f.true_heads(0, 1) == {0}

    def test_duplicate_across_splits_stored_once(self):
        f = build_filter_index(KnowledgeGraph(2, 1, [(0, 0, 1)], [(0, 0, 1)]))
        assert f.triples() == {(0, 0, 1)}
        assert len(f.true_tails(0, 0)) == 1

    def test_matches_brute_force_scan(self, small_kg):
        f = build_filter_index(small_kg)
        everything = {tuple(t) for s in ("train", "valid", "test") for t in small_kg.split(s).tolist()}
        assert f.triples() == everything
        for h in range(8):
            for r in range(3):
                assert f.true_tails(h, r) == {t for (a, b, t) in everything if (a, b) == (h, r)}
                assert f.true_heads(r, h) == {a for (a, b, t) in everything if (b, t) == (r, h)}


class TestNegativeSampling:
    def test_two_entities_forced(self):
        rng = np.random.default_rng(0)
        neg = corrupt(np.array([(0, 0, 1)] * 50), 2, 1, rng)
        for h, r, t in neg.tolist():
            assert (h, t) in ((1, 1), (0, 0))

    def test_too_few_entities(self):
        with pytest.raises(ValueError):
            corrupt(np.array([(0, 0, 0)]), 1, 1, np.random.default_rng(0))

    def test_deterministic(self, small_kg):
        a = corrupt(small_kg.train, 8, 3, np.random.default_rng(4))
        b = corrupt(small_kg.train, 8, 3, np.random.default_rng(4))
        assert np.array_equal(a, b)

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(11)
        pos = np.array([(0, 0, 1)] * 10_000)
        neg = corrupt(pos, 5, 1, rng)
        tail_slot = neg[:, 0] == 0
        counts = Counter(neg[tail_slot, 2].tolist())
        assert set(counts) == {0, 2, 3, 4}
        expected = tail_slot.sum() / 4
        assert all(abs(c - expected) / expected < 0.05 for c in counts.values())
        assert abs(tail_slot.mean() - 0.5) < 0.02

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 12), k=st.integers(1, 4))
    def test_exactly_one_slot_changes(self, seed, n, k):
        rng = np.random.default_rng(seed)
        pos = np.stack([rng.integers(0, n, 20), rng.integers(0, 3, 20), rng.integers(0, n, 20)], axis=1)
        neg = corrupt(pos, n, k, rng)
        diff = (np.repeat(pos, k, axis=0) != neg).sum(axis=1)
        assert np.all(diff == 1)
        assert neg[:, [0, 2]].max() < n

    def test_negative_sample_pairs(self):
        cfg = NegSampleConfig(negatives_per_positive=2)
        out = negative_sample([Triple(0, 0, 1), Triple(1, 0, 2)], cfg, np.random.default_rng(0), 3)
        assert [p for p, _ in out] == [Triple(0, 0, 1), Triple(1, 0, 2)]
        assert all(len(n) == 2 and p not in n for p, n in out)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NegSampleConfig(negatives_per_positive=0)
        with pytest.raises(ValueError):
            NegSampleConfig(corruption="bernoulli")


class TestBatches:
    def test_sizes(self):
        sizes = [len(b) for b in batch_iter(np.array([(i, 0, i) for i in range(10)]), 4, 0)]
        assert sizes == [4, 4, 2]

    def test_same_seed_same_order(self, small_kg):
        a = list(batch_iter(small_kg.train, 7, 3, 2))
        b = list(batch_iter(small_kg.train, 7, 3, 2))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = list(batch_iter(small_kg.train, 7, 3, 3))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    @settings(max_examples=30, deadline=None)
    @given(bs=st.integers(1, 60), seed=st.integers(0, 100), epoch=st.integers(0, 100))
    def test_partition(self, bs, seed, epoch):
        train = np.array([(i, i % 3, (i * 7) % 50) for i in range(50)])
        got = np.concatenate(list(batch_iter(train, bs, seed, epoch)))
        assert sorted(map(tuple, got.tolist())) == sorted(map(tuple, train.tolist()))

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            list(batch_iter(np.zeros((3, 3), dtype=int), 0, 0))
