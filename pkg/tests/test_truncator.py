import pytest

from corpus import Document
from errors import ConfigurationError, ValidationError
from truncator import (
    EMPTY_UNIT_TOKEN, TruncationConfig, tokenize, truncate, truncate_auto, truncate_punct, truncate_struct,
)


def _doc(n_tokens):
    return Document("d", " ".join(f"t{i}" for i in range(n_tokens)), ("a",))


def _sizes(segments):
    return [len(segment.tokens) for segment in segments]


class TestTokenize:

    @pytest.mark.parametrize("text, expected", [
        ("The cat sat.", ["the", "cat", "sat", "."]),
        ("", []),
        ("A  b\tc", ["a", "b", "c"]),
        ("Hi, there!", ["hi", ",", "there", "!"]),
    ])
    def test_examples(self, text, expected):
        assert tokenize(text) == expected


class TestAuto:

    def test_no_overlap(self):
        assert _sizes(truncate_auto(_doc(10), TruncationConfig(window_len=4))) == [4, 4, 2]

    def test_overlap_starts_every_stride(self):
        segments = truncate_auto(_doc(10), TruncationConfig(window_len=4, overlap=2))
        assert len(segments) == 5
        assert [segment.tokens[0] for segment in segments] == ["t0", "t2", "t4", "t6", "t8"]

    def test_short_document(self):
        segments = truncate_auto(_doc(3), TruncationConfig(window_len=4))
        assert _sizes(segments) == [3]

    def test_window_not_longer_than_overlap(self):
        with pytest.raises(ConfigurationError):
            truncate_auto(_doc(10), TruncationConfig(window_len=2, overlap=2))

    def test_indices_and_spans(self):
        doc = Document("d", "alpha beta gamma", ("a",))
        segments = truncate_auto(doc, TruncationConfig(window_len=2))
        assert [segment.index for segment in segments] == [0, 1]
        assert doc.text[slice(*segments[1].char_span)] == "gamma"

    def test_concatenation_without_overlap_restores_tokens(self):
        doc = _doc(23)
        segments = truncate_auto(doc, TruncationConfig(window_len=5))
        assert [token for segment in segments for token in segment.tokens] == tokenize(doc.text)


class TestPunct:

    def test_sentences_not_merged_past_limit(self):
        doc = Document("d", "A b. C d. E f.", ("a",))
        segments = truncate_punct(doc, TruncationConfig(strategy="punct", max_seg_len=4))
        assert [list(segment.tokens) for segment in segments] == [["a", "b", "."], ["c", "d", "."], ["e", "f", "."]]

    def test_short_sentences_merged(self):
        doc = Document("d", "A. B. C d e f.", ("a",))
        segments = truncate_punct(doc, TruncationConfig(strategy="punct", max_seg_len=4))
        assert [list(segment.tokens) for segment in segments] == [["a", ".", "b", "."], ["c", "d", "e", "f"], ["."]]

    def test_long_sentence_hard_split(self):
        segments = truncate_punct(_doc(10), TruncationConfig(strategy="punct", max_seg_len=4))
        assert _sizes(segments) == [4, 4, 2]

    def test_no_terminators_is_one_sentence(self):
        segments = truncate_punct(_doc(3), TruncationConfig(strategy="punct", max_seg_len=8))
        assert _sizes(segments) == [3]


class TestStructure:

    def test_one_segment_per_unit(self):
        units = tuple(f"turn {i} words" for i in range(5))
        doc = Document("d", " ".join(units), ("a",), units)
        segments = truncate_struct(doc, TruncationConfig(strategy="structure"))
        assert [segment.index for segment in segments] == [0, 1, 2, 3, 4]
        assert segments[3].tokens == ("turn", "3", "words")

    def test_empty_unit_keeps_alignment(self):
        doc = Document("d", "hello bye", ("a",), ("hello", "   ", "bye"))
        segments = truncate_struct(doc, TruncationConfig(strategy="structure"))
        assert len(segments) == 3
        assert segments[1].tokens == (EMPTY_UNIT_TOKEN,)

    def test_missing_units(self):
        with pytest.raises(ValidationError):
            truncate_struct(_doc(5), TruncationConfig(strategy="structure"))


class TestDispatcher:

    def test_unknown_strategy(self):
        with pytest.raises(ConfigurationError):
            TruncationConfig(strategy="paragraph")

    def test_no_tokens_left(self):
        doc = Document("d", "   ", ("a",), ("   ",))
        with pytest.raises(ValidationError):
            truncate(doc, TruncationConfig(strategy="auto"))

    @pytest.mark.parametrize("strategy", ["auto", "punct"])
    def test_every_segment_non_empty(self, strategy):
        doc = Document("d", "One two three. Four! Five six seven eight nine? Ten", ("a",))
        segments = truncate(doc, TruncationConfig(strategy=strategy, window_len=3, max_seg_len=3))
        assert all(segment.tokens for segment in segments)
        assert [segment.index for segment in segments] == list(range(len(segments)))
