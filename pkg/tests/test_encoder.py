import json

import pytest
import torch

from config import DTYPE
from conftest import make_segments
from encoder import (
    HashEncoder, SegmentInteraction, SegmentMatrix, encode_segments, hash_ngram, interact, load_precomputed,
    ngrams, write_precomputed,
)
from errors import ConfigurationError, FormatError, SegmentLookupError, ValidationError


class TestHashEncoder:

    def test_hash_is_stable_and_seeded(self):
        assert hash_ngram("the cat", 0, 1 << 20) == hash_ngram("the cat", 0, 1 << 20)
        values = {hash_ngram("the cat", seed, 1 << 30) for seed in range(5)}
        assert len(values) > 1
        assert all(0 <= hash_ngram(f"w{i}", 3, 7) < 7 for i in range(50))

    def test_ngrams(self):
        assert ngrams(["a", "b", "c"], (1, 2)) == ["a", "b", "c", "a b", "b c"]
        # Сегмент короче всех порядков
        assert ngrams(["a"], (2, 3)) == ["a"]

    def test_single_bucket_row_equals_embedding(self):
        encoder = HashEncoder(buckets=1, hidden=4)
        rows = encoder(make_segments("d", [["x", "y", "z"]]))
        assert torch.allclose(rows[0], encoder.embedding.weight[0], atol=1e-15)

    def test_zero_table_gives_zero_rows(self):
        encoder = HashEncoder(buckets=64, hidden=4)
        with torch.no_grad():
            encoder.embedding.weight.zero_()
        rows = encoder(make_segments("d", [["a", "b"], ["c"]]))
        assert torch.count_nonzero(rows) == 0

    def test_rows_match_hash_and_average(self):
        encoder = HashEncoder(buckets=97, hidden=4, ngram_orders=(1, 2), hash_seed=5)
        token_lists = [["the", "cat", "sat"], ["on", "mats"]]
        matrix = encode_segments(make_segments("d", token_lists), encoder)
        table = encoder.embedding.weight.detach()
        for k, tokens in enumerate(token_lists):
            ids = [hash_ngram(gram, 5, 97) for gram in ngrams(tokens, (1, 2))]
            expected = table[ids].mean(dim=0)
            assert torch.allclose(matrix.rows[k], expected, atol=1e-12)
        assert (matrix.m, matrix.h) == (2, 4)
        assert matrix.rows.dtype == DTYPE

    def test_table_starts_small(self):
        encoder = HashEncoder(buckets=512, hidden=16)
        assert encoder.embedding.weight.abs().max().item() <= 1.0 / 16
        assert encoder.embedding.weight.std().item() > 0.0

    def test_invalid_orders(self):
        with pytest.raises(ConfigurationError):
            HashEncoder(buckets=8, hidden=4, ngram_orders=(0,))


class TestSegmentMatrix:

    def test_rejects_empty_and_non_finite(self):
        with pytest.raises(ValidationError):
            SegmentMatrix("d", torch.zeros(0, 4, dtype=DTYPE))
        with pytest.raises(ValidationError):
            SegmentMatrix("d", torch.tensor([[1.0, float("nan")]], dtype=DTYPE))


class TestPrecomputed:

    def _write(self, path, lines):
        path.write_text("\n".join(json.dumps(line) for line in lines) + "\n", encoding='utf-8')
        return str(path)

    def test_parse(self, tmp_path):
        path = self._write(tmp_path / "v.jsonl", [{"h": 8}, {"doc_id": "d", "vectors": [[0.5] * 8] * 3}])
        store = load_precomputed(path)
        assert store.h == 8
        assert (store["d"].m, store["d"].h) == (3, 8)

    def test_dimension_mismatch(self, tmp_path):
        path = self._write(tmp_path / "v.jsonl", [{"h": 8}, {"doc_id": "d", "vectors": [[0.0] * 8, [0.0] * 9]}])
        with pytest.raises(FormatError) as info:
            load_precomputed(path)
        assert info.value.line == 2

    def test_empty_file_then_lookup_error(self, tmp_path):
        path = tmp_path / "v.jsonl"
        path.write_text("", encoding='utf-8')
        store = load_precomputed(str(path))
        assert len(store) == 0
        with pytest.raises(SegmentLookupError):
            store["missing"]

    def test_write_then_load(self, tmp_path):
        rows = torch.randn(2, 3, dtype=DTYPE)
        path = str(tmp_path / "v.jsonl")
        write_precomputed({"d": SegmentMatrix("d", rows)}, path)
        assert torch.equal(load_precomputed(path)["d"].rows, rows)


class TestInteraction:

    def test_zero_layers_is_identity(self):
        rows = torch.randn(5, 8, dtype=DTYPE)
        assert torch.equal(SegmentInteraction(8, num_layers=0)(rows), rows)

    def test_single_row_shape(self):
        out = SegmentInteraction(8, num_layers=2, heads=2)(torch.randn(1, 8, dtype=DTYPE))
        assert out.shape == (1, 8)
        assert torch.isfinite(out).all()

    def test_permutation_equivariant_without_positions(self):
        layers = SegmentInteraction(8, num_layers=2, heads=2).eval()
        rows = torch.randn(6, 8, dtype=DTYPE)
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        with torch.no_grad():
            assert torch.allclose(layers(rows[perm]), layers(rows)[perm], atol=1e-10)

    def test_positions_break_equivariance(self):
        layers = SegmentInteraction(8, num_layers=1, heads=2, positions=True, max_segments=16).eval()
        rows = torch.randn(4, 8, dtype=DTYPE)
        perm = torch.tensor([1, 0, 3, 2])
        with torch.no_grad():
            assert not torch.allclose(layers(rows[perm]), layers(rows)[perm], atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            SegmentInteraction(8, num_layers=1)(torch.randn(3, 4, dtype=DTYPE))
        with pytest.raises(ConfigurationError):
            SegmentInteraction(6, num_layers=1, heads=4)

    def test_too_many_segments_for_positions(self):
        layers = SegmentInteraction(4, num_layers=1, heads=1, positions=True, max_segments=2)
        with pytest.raises(ConfigurationError):
            layers(torch.randn(3, 4, dtype=DTYPE))

    def test_interact_keeps_doc_id(self):
        matrix = SegmentMatrix("d", torch.randn(3, 4, dtype=DTYPE))
        assert interact(matrix, SegmentInteraction(4, num_layers=1, heads=1)).doc_id == "d"
