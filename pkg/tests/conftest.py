import json

import pytest
import torch

from corpus import SyntheticSpec, TaskKind, generate_synthetic, split_corpus
from truncator import Segment


def write_records(path, records):
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return str(path)


def make_segments(doc_id, token_lists):
    return [Segment(doc_id, k, tuple(tokens), (k, k + 1)) for k, tokens in enumerate(token_lists)]


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def small_jsonl(tmp_path):
    records = [
        {"id": "d1", "text": "Cats purr. Dogs bark loudly!", "labels": ["a"]},
        {"id": "d2", "text": "The market fell today.", "labels": ["b"]},
        {"id": "d3", "text": "A kitten sleeps.", "labels": ["a"], "split": "test"},
    ]
    return write_records(tmp_path / "small.jsonl", records)


@pytest.fixture(scope="session")
def planted_corpus():
    """Синтетический многометочный корпус с разбиением 0.8/0.1/0.1 и картой ключей"""
    spec = SyntheticSpec(num_docs=300, labels=2, task_kind=TaskKind.MULTI_LABEL, seed=13)
    corpus, key_map = generate_synthetic(spec)
    return split_corpus(corpus, (0.8, 0.1, 0.1), seed=7), key_map
