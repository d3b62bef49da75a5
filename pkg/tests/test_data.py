"""Core data model and file formats."""
import json
import math
import struct

import numpy as np
import pytest

from typelink.data import (DataError, EmbeddingTable, load_dataset,
                           load_embeddings, load_type_map, log_prior,
                           save_dataset, split_document, write_embeddings,
                           write_type_map, EMB_MAGIC, PRIOR_FLOOR)


def _write_dataset(path, docs):
    path.write_text(json.dumps({"documents": docs}), encoding="utf-8")


def _mention(mid="m0", prior=0.5, gold="E1", cands=None, long_ctx=None):
    if cands is None:
        cands = [{"entity": "E1", "prior": prior}, {"entity": "E2", "prior": 0.1}]
    return {"id": mid, "surface": ["x"], "left_ctx": [], "right_ctx": ["y"],
            "long_ctx": long_ctx if long_ctx is not None else ["a", "b"],
            "candidates": cands, "gold": gold}


class TestDatasetLoad:
    def test_one_document_two_mentions(self, tmp_path):
        _write_dataset(tmp_path / "d.json",
                       [{"id": "doc", "mentions": [_mention("m0"), _mention("m1")]}])
        docs = load_dataset(tmp_path / "d.json")
        assert len(docs) == 1
        assert len(docs[0].mentions) == 2
        assert docs[0].mentions[0].candidates[0].entity == "E1"
        assert docs[0].mentions[0].gold == "E1"

    def test_prior_out_of_range(self, tmp_path):
        _write_dataset(tmp_path / "d.json",
                       [{"id": "doc", "mentions": [_mention(prior=1.5)]}])
        with pytest.raises(DataError, match=r"prior out of range"):
            load_dataset(tmp_path / "d.json")
        _write_dataset(tmp_path / "d.json",
                       [{"id": "doc", "mentions": [_mention(prior=-0.1)]}])
        with pytest.raises(DataError, match=r"prior out of range"):
            load_dataset(tmp_path / "d.json")

    def test_error_carries_position(self, tmp_path):
        _write_dataset(tmp_path / "d.json", [
            {"id": "ok", "mentions": [_mention()]},
            {"id": "bad", "mentions": [_mention(), _mention(prior=2.0)]},
        ])
        with pytest.raises(DataError, match=r"documents\[1\].mentions\[1\].candidates\[0\]"):
            load_dataset(tmp_path / "d.json")

    def test_empty_candidates_rejected(self, tmp_path):
        _write_dataset(tmp_path / "d.json",
                       [{"id": "doc", "mentions": [_mention(cands=[])]}])
        with pytest.raises(DataError, match="empty candidate list"):
            load_dataset(tmp_path / "d.json")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "d.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(DataError, match="malformed JSON"):
            load_dataset(tmp_path / "d.json")

    def test_long_ctx_cap_enforced(self, tmp_path):
        _write_dataset(tmp_path / "d.json",
                       [{"id": "doc", "mentions": [_mention(long_ctx=["w"] * 101)]}])
        with pytest.raises(DataError, match="exceeds cap"):
            load_dataset(tmp_path / "d.json")
        docs = load_dataset(tmp_path / "d.json", max_long_ctx=200)
        assert len(docs[0].mentions[0].long_ctx) == 101

    def test_gold_absent_from_candidates_is_allowed(self, tmp_path):
        _write_dataset(tmp_path / "d.json",
                       [{"id": "doc", "mentions": [_mention(gold="Nowhere")]}])
        docs = load_dataset(tmp_path / "d.json")
        assert docs[0].mentions[0].gold == "Nowhere"
        assert docs[0].mentions[0].gold_index() is None

    def test_three_doc_fixture_round_trip(self, tmp_path, fixtures_dir):
        docs = load_dataset(fixtures_dir / "small" / "dataset.json")
        assert [d.id for d in docs] == ["doc0", "doc1", "doc2"]
        save_dataset(docs, tmp_path / "again.json")
        assert load_dataset(tmp_path / "again.json") == docs


class TestEmbeddingTable:
    def test_write_load_lookup(self, tmp_path):
        table = EmbeddingTable(["a", "b"], np.array([[1, 0], [0, 1]], dtype=np.float32))
        write_embeddings(table, tmp_path / "t.emb", tmp_path / "t.ids")
        loaded = load_embeddings(tmp_path / "t.emb", tmp_path / "t.ids")
        assert loaded.ids == ("a", "b")
        np.testing.assert_array_equal(loaded.row("a"), np.array([1, 0], dtype=np.float32))

    def test_count_mismatch(self, tmp_path):
        table = EmbeddingTable(["a", "b"], np.eye(2, dtype=np.float32))
        write_embeddings(table, tmp_path / "t.emb", tmp_path / "t.ids")
        with open(tmp_path / "t.ids", "a", encoding="utf-8") as fh:
            fh.write("c\n")
        with pytest.raises(DataError, match="3 ids but header says 2"):
            load_embeddings(tmp_path / "t.emb", tmp_path / "t.ids")

    def test_magic_mismatch(self, tmp_path):
        (tmp_path / "t.emb").write_bytes(b"NOPE" + b"\x00" * 16)
        (tmp_path / "t.ids").write_text("a\n")
        with pytest.raises(DataError, match="bad magic"):
            load_embeddings(tmp_path / "t.emb", tmp_path / "t.ids")

    def test_nan_row_rejected(self, tmp_path):
        payload = struct.pack("<4f", 1.0, 2.0, float("nan"), 4.0)
        (tmp_path / "t.emb").write_bytes(EMB_MAGIC + struct.pack("<II", 2, 2) + payload)
        (tmp_path / "t.ids").write_text("a\nb\n")
        with pytest.raises(DataError, match="non-finite"):
            load_embeddings(tmp_path / "t.emb", tmp_path / "t.ids")

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "t.emb").write_bytes(EMB_MAGIC + struct.pack("<II", 2, 2) + b"\x00" * 8)
        (tmp_path / "t.ids").write_text("a\nb\n")
        with pytest.raises(DataError, match="payload size"):
            load_embeddings(tmp_path / "t.emb", tmp_path / "t.ids")

    def test_10k_rows_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        matrix = rng.normal(size=(10_000, 16)).astype(np.float32)
        ids = [f"id{i}" for i in range(10_000)]
        write_embeddings(EmbeddingTable(ids, matrix), tmp_path / "t.emb", tmp_path / "t.ids")
        loaded = load_embeddings(tmp_path / "t.emb", tmp_path / "t.ids")
        assert loaded.matrix.tobytes() == matrix.tobytes()
        assert loaded.ids == tuple(ids)

    def test_unknown_id_fails_explicitly(self):
        table = EmbeddingTable(["a"], np.ones((1, 2), dtype=np.float32))
        with pytest.raises(KeyError, match="unknown embedding id"):
            table.row("zzz")
        assert "a" in table and "zzz" not in table

    def test_duplicate_id_rejected(self):
        with pytest.raises(DataError, match="duplicate id"):
            EmbeddingTable(["a", "a"], np.eye(2, dtype=np.float32))

    def test_matrix_immutable(self):
        table = EmbeddingTable(["a"], np.ones((1, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            table.matrix[0, 0] = 5.0


class TestTypeMap:
    def test_single_line(self, tmp_path):
        (tmp_path / "t.ndjson").write_text('{"entity":"E1","types":["person"]}\n')
        tm = load_type_map(tmp_path / "t.ndjson")
        assert tm == {"E1": frozenset({"person"})}

    def test_duplicate_entity_rejected(self, tmp_path):
        (tmp_path / "t.ndjson").write_text(
            '{"entity":"E1","types":["a"]}\n{"entity":"E1","types":["b"]}\n')
        with pytest.raises(DataError, match="duplicate entity"):
            load_type_map(tmp_path / "t.ndjson")

    def test_empty_type_set_allowed(self, tmp_path):
        (tmp_path / "t.ndjson").write_text('{"entity":"E1","types":[]}\n')
        assert load_type_map(tmp_path / "t.ndjson") == {"E1": frozenset()}

    def test_100_entity_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        tm = {f"E{i}": frozenset(rng.choice(["a", "b", "c", "d"],
                                            size=rng.integers(0, 4), replace=False))
              for i in range(100)}
        write_type_map(tm, tmp_path / "t.ndjson")
        assert load_type_map(tmp_path / "t.ndjson") == tm


class TestSplitting:
    def test_small_doc_unchanged(self, small_corpus):
        doc = small_corpus.train_docs[0]
        assert split_document(doc) == [doc]

    def test_split_preserves_order_and_count(self, small_corpus):
        base = small_corpus.train_docs[0].mentions[0]
        mentions = tuple(
            base.__class__(**{**base.__dict__, "id": f"m{i}"}) for i in range(150))
        from typelink.data import Document
        doc = Document(id="big", mentions=mentions)
        chunks = split_document(doc, cap=64)
        assert [len(c) for c in chunks] == [64, 64, 22]
        flat = [m.id for c in chunks for m in c.mentions]
        assert flat == [m.id for m in mentions]
        assert [c.id for c in chunks] == ["big#0", "big#1", "big#2"]


def test_log_prior_floor():
    assert log_prior(0.0) == math.log(PRIOR_FLOOR)
    assert log_prior(0.5) == math.log(0.5)
    assert math.isfinite(log_prior(0.0))
