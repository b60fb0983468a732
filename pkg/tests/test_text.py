import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graftlm.errors import ContractError, SchemaError
from graftlm.rng import RngState
from graftlm.text import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    RESERVED,
    UNK_ID,
    Vocabulary,
    build_vocab,
    load_dataset,
    split_dataset,
    tokenize,
)


class TestBuildVocab:
    def test_frequency_then_lexicographic(self):
        # oracle: count by hand -> a appears twice, b once
        vocab = build_vocab(["a b a"], max_size=10)
        assert "a" in vocab.token_to_id and "b" in vocab.token_to_id
        assert vocab.token_to_id["a"] < vocab.token_to_id["b"]

    def test_tie_break_is_lexicographic(self):
        vocab = build_vocab(["zebra apple zebra apple"], max_size=10)
        assert vocab.token_to_id["apple"] < vocab.token_to_id["zebra"]

    def test_max_size_four_leaves_reserved_only(self):
        vocab = build_vocab(["a b c"], max_size=4)
        assert vocab.size == 4
        assert vocab.id_to_token == list(RESERVED)

    def test_rebuild_is_deterministic(self):
        corpus = ["the cat sat on the mat", "a cat"]
        v1 = build_vocab(corpus, max_size=20)
        v2 = build_vocab(corpus, max_size=20)
        assert v1.id_to_token == v2.id_to_token

    def test_empty_corpus_rejected(self):
        with pytest.raises(SchemaError):
            build_vocab([], max_size=10)

    def test_reserved_ids(self):
        assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)


class TestEncodeDecode:
    def test_empty_string(self):
        vocab = build_vocab(["a b"], max_size=10)
        assert vocab.encode("") == []

    def test_unknown_word_maps_to_unk(self):
        vocab = build_vocab(["a b"], max_size=10)
        assert vocab.encode("zzz") == [UNK_ID]

    def test_round_trip_without_oov(self):
        vocab = build_vocab(["the cat sat"], max_size=10)
        text = "the cat sat"
        assert vocab.decode(vocab.encode(text)) == text

    def test_decode_out_of_range_rejected(self):
        vocab = build_vocab(["a"], max_size=10)
        with pytest.raises(ContractError):
            vocab.decode([vocab.size])

    @given(st.text(alphabet="abc xyz", max_size=40))
    @settings(max_examples=50, deadline=None)
    def test_encode_is_pure(self, text):
        vocab = build_vocab(["a b c x y z ab xyz"], max_size=30)
        assert vocab.encode(text) == vocab.encode(text)

    def test_normalization_round_trip(self):
        vocab = build_vocab(["the cat sat"], max_size=10)
        assert vocab.decode(vocab.encode("The  CAT, sat!")) == "the cat sat"


class TestVocabFile:
    def test_save_load_round_trip(self, tmp_path):
        vocab = build_vocab(["gamma beta alpha alpha beta beta"], max_size=10)
        vocab.save(tmp_path / "vocab.txt")
        loaded = Vocabulary.load(tmp_path / "vocab.txt")
        assert loaded.id_to_token == vocab.id_to_token
        # line number = id minus reserved offset
        lines = (tmp_path / "vocab.txt").read_text().splitlines()
        for lineno, token in enumerate(lines):
            assert vocab.token_to_id[token] == lineno + len(RESERVED)


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


class TestLoadDataset:
    def test_single_line_tokenized_by_hand(self, tmp_path):
        vocab = build_vocab(["what is the code of item1 the code of item1 is code2"], max_size=50)
        path = tmp_path / "data.jsonl"
        _write_jsonl(
            path,
            [{"question": "what is the code of item1", "knowledge": "the code of item1 is code2", "right_answer": "code2"}],
        )
        samples = load_dataset(path, vocab)
        assert len(samples) == 1
        assert len(samples[0].question) == len(tokenize("what is the code of item1")) == 6
        assert len(samples[0].knowledge) == len(tokenize("the code of item1 is code2")) == 6
        assert samples[0].answer == vocab.encode("code2")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        vocab = build_vocab(["a"], max_size=10)
        assert load_dataset(path, vocab) == []

    def test_missing_field_reports_line(self, tmp_path):
        vocab = build_vocab(["a"], max_size=10)
        path = tmp_path / "bad.jsonl"
        _write_jsonl(
            path,
            [
                {"question": "a", "knowledge": "a", "right_answer": "a"},
                {"question": "a", "knowledge": "a"},
            ],
        )
        with pytest.raises(SchemaError) as err:
            load_dataset(path, vocab)
        assert ":2:" in str(err.value)
        assert "right_answer" in str(err.value)

    def test_malformed_json_reports_line(self, tmp_path):
        vocab = build_vocab(["a"], max_size=10)
        path = tmp_path / "bad.jsonl"
        path.write_text('{"question": "a", "knowledge": "a", "right_answer": "a"}\n{oops\n')
        with pytest.raises(SchemaError) as err:
            load_dataset(path, vocab)
        assert ":2:" in str(err.value)

    def test_bodies_never_contain_reserved_ids(self, tmp_path):
        vocab = build_vocab(["alpha beta gamma delta"], max_size=20)
        path = tmp_path / "data.jsonl"
        _write_jsonl(
            path,
            [{"question": "alpha <bos> beta", "knowledge": "<pad> gamma", "right_answer": "delta <eos>"}],
        )
        samples = load_dataset(path, vocab)
        reserved = {PAD_ID, BOS_ID, EOS_ID}
        body = samples[0].question + samples[0].knowledge + samples[0].answer
        assert not reserved & set(body)


class TestSplitDataset:
    def _samples(self, tmp_path, n):
        vocab = build_vocab([" ".join(f"w{i}" for i in range(n))], max_size=n + 10)
        path = tmp_path / "d.jsonl"
        _write_jsonl(
            path,
            [{"question": f"w{i}", "knowledge": "", "right_answer": f"w{i}"} for i in range(n)],
        )
        return load_dataset(path, vocab)

    def test_eight_two_split(self, tmp_path):
        samples = self._samples(tmp_path, 10)
        train, test = split_dataset(samples, 0.8, RngState(1))
        assert (len(train), len(test)) == (8, 2)

    def test_same_seed_same_split(self, tmp_path):
        samples = self._samples(tmp_path, 12)
        t1, e1 = split_dataset(samples, 0.7, RngState(9))
        t2, e2 = split_dataset(samples, 0.7, RngState(9))
        assert [s.sample_id for s in t1] == [s.sample_id for s in t2]
        assert [s.sample_id for s in e1] == [s.sample_id for s in e2]

    def test_union_is_input_multiset(self, tmp_path):
        samples = self._samples(tmp_path, 11)
        train, test = split_dataset(samples, 0.5, RngState(2))
        got = sorted(s.sample_id for s in train + test)
        assert got == [s.sample_id for s in samples]

    def test_too_few_samples_rejected(self, tmp_path):
        samples = self._samples(tmp_path, 2)
        with pytest.raises(ContractError):
            split_dataset(samples[:1], 0.5, RngState(0))

    def test_fraction_validated(self, tmp_path):
        samples = self._samples(tmp_path, 4)
        with pytest.raises(ContractError):
            split_dataset(samples, 1.0, RngState(0))
