import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickgraph.data import (
    MISSING,
    N_CAT,
    N_FIELDS,
    N_INT,
    DataError,
    EmptyCorpusError,
    EncodedBatch,
    FormatVersionError,
    MalformedRecordError,
    RawRecord,
    SingleClassError,
    TooSmallError,
    TruncatedFileError,
    build_vocabulary,
    encode,
    encode_all,
    format_line,
    load_encoded,
    parse_line,
    read_tsv,
    rebalance,
    rebalance_split,
    save_encoded,
    split_and_partition,
    transform_numeric,
    write_tsv,
)
from clickgraph.synthetic import criteo_like_records


def blank_record(label=0, **cats):
    cat = [None] * N_CAT
    for key, token in cats.items():
        cat[int(key[1:])] = token
    return RawRecord(label, (None,) * N_INT, tuple(cat))


def labelled_batch(n_neg, n_pos):
    labels = np.array([0] * n_neg + [1] * n_pos)
    idx = np.arange(len(labels))[:, None] + np.zeros((1, N_FIELDS), dtype=int)
    return EncodedBatch(idx, labels)


# hypothesis strategies for well-formed records
tokens = st.text(alphabet="0123456789abcdef", min_size=1, max_size=8)
records = st.builds(
    RawRecord,
    st.sampled_from([0, 1]),
    st.tuples(*[st.one_of(st.none(), st.integers(0, 10**9))] * N_INT),
    st.tuples(*[st.one_of(st.none(), tokens)] * N_CAT),
)


class TestParse:
    def test_slot_by_slot(self):
        cols = ["1", "5", ""] + ["7"] * (N_INT - 2) + ["68fd1e64"] + ["x"] * (N_CAT - 1)
        rec = parse_line("\t".join(cols))
        assert rec.label == 1
        assert rec.int_feats[0] == 5
        assert rec.int_feats[1] is None
        assert rec.int_feats[2] == 7
        assert rec.cat_feats[0] == "68fd1e64"

    def test_all_missing(self):
        rec = parse_line("0" + "\t" * N_FIELDS)
        assert rec.label == 0
        assert all(v is None for v in rec.int_feats + rec.cat_feats)

    def test_wrong_field_count_reports_line(self):
        with pytest.raises(MalformedRecordError) as info:
            parse_line("\t" * (N_FIELDS - 1), has_label=True, line_number=17)
        assert info.value.line_number == 17

    def test_unlabeled(self):
        rec = parse_line("\t" * (N_FIELDS - 1), has_label=False)
        assert rec.label is None

    def test_non_integer_in_integer_slot(self):
        cols = ["1", "abc"] + [""] * (N_FIELDS - 1)
        with pytest.raises(MalformedRecordError):
            parse_line("\t".join(cols))

    def test_bad_label(self):
        with pytest.raises(MalformedRecordError):
            parse_line("2" + "\t" * N_FIELDS)

    @given(records)
    def test_format_parse_roundtrip(self, rec):
        assert parse_line(format_line(rec)) == rec

    def test_read_tsv_tolerates_bad_lines(self, tmp_path):
        path = tmp_path / "x.tsv"
        good = format_line(blank_record(1, c0="a"))
        path.write_text(f"{good}\nbroken\n{good}\n")
        recs, bad = read_tsv(path, max_bad_lines=1)
        assert len(recs) == 2 and len(bad) == 1 and bad[0].line_number == 2
        with pytest.raises(MalformedRecordError):
            read_tsv(path, max_bad_lines=0)

    def test_write_read_roundtrip(self, tmp_path):
        recs = criteo_like_records(50, seed=3)
        write_tsv(recs, tmp_path / "r.tsv")
        assert read_tsv(tmp_path / "r.tsv")[0] == recs


class TestTransformNumeric:
    def test_missing(self):
        assert transform_numeric(None) == MISSING

    @pytest.mark.parametrize("v", [0, 1, 2])
    def test_small_pass_through(self, v):
        assert transform_numeric(v) == str(v)

    def test_hundred(self):
        assert transform_numeric(100) == "21"

    @given(st.integers(3, 10**12), st.integers(0, 10**6))
    def test_monotone(self, v, dv):
        assert int(transform_numeric(v)) <= int(transform_numeric(v + dv))


class TestVocabulary:
    def test_single_token_corpus(self):
        rec = RawRecord(1, (5,) * N_INT, ("t",) * N_CAT)
        vocab = build_vocabulary([rec] * 5, min_frequency=1)
        assert vocab.field_sizes == (2,) * N_FIELDS

    def test_threshold_boundary(self):
        recs = [blank_record(c0="a")] * 3 + [blank_record()] * 5
        vocab = build_vocabulary(recs, min_frequency=4)
        assert encode(blank_record(c0="a"), vocab).field_indices[N_INT] == vocab.field_offsets[N_INT]

    def test_counts_then_threshold(self):
        recs = [blank_record(c0="a")] * 5 + [blank_record(c0="b")] * 2
        vocab = build_vocabulary(recs, min_frequency=3)
        assert vocab.per_field[N_INT] == {"a": 1}
        off = vocab.field_offsets[N_INT]
        assert encode(blank_record(c0="a"), vocab).field_indices[N_INT] == off + 1
        assert encode(blank_record(c0="b"), vocab).field_indices[N_INT] == off

    def test_offsets_are_cumulative(self):
        vocab = build_vocabulary(criteo_like_records(300, seed=1), min_frequency=2)
        assert vocab.field_offsets[0] == 0
        for f in range(1, N_FIELDS):
            assert vocab.field_offsets[f] == vocab.field_offsets[f - 1] + vocab.field_sizes[f - 1]
        assert vocab.total_features == sum(vocab.field_sizes)

    def test_empty(self):
        with pytest.raises(EmptyCorpusError):
            build_vocabulary([])

    def test_missing_never_retained(self):
        vocab = build_vocabulary([blank_record()] * 10, min_frequency=1)
        assert all(MISSING not in m for m in vocab.per_field)


class TestEncode:
    def test_in_vocabulary(self):
        recs = [blank_record(c0="a")] * 5 + [blank_record(c0="b")] * 2
        vocab = build_vocabulary(recs, min_frequency=1)
        ex = encode(blank_record(c0="b"), vocab)
        assert ex.field_indices[N_INT] == vocab.field_offsets[N_INT] + vocab.per_field[N_INT]["b"]
        assert ex.field_values == (1.0,) * N_FIELDS

    def test_all_missing_maps_to_offsets(self):
        vocab = build_vocabulary(criteo_like_records(200, seed=0), min_frequency=1)
        assert encode(blank_record(), vocab).field_indices == vocab.field_offsets

    def test_unlabeled_rejected(self):
        vocab = build_vocabulary([blank_record()], min_frequency=1)
        unlabeled = RawRecord(None, (None,) * N_INT, (None,) * N_CAT)
        with pytest.raises(DataError):
            encode(unlabeled, vocab)
        assert encode(unlabeled, vocab, require_label=False).field_indices == vocab.field_offsets

    @settings(max_examples=50, deadline=None)
    @given(st.lists(records, min_size=1, max_size=20), records, st.integers(1, 3))
    def test_indices_in_field_range(self, corpus, rec, min_freq):
        vocab = build_vocabulary(corpus, min_frequency=min_freq)
        for f, idx in enumerate(encode(rec, vocab).field_indices):
            assert vocab.field_offsets[f] <= idx < vocab.field_offsets[f] + vocab.field_sizes[f]


class TestSplit:
    def test_ten_thousand(self):
        split = split_and_partition(labelled_batch(7000, 3000), seed=0)
        assert split.sizes() == [1000] * 10

    def test_minimum(self):
        split = split_and_partition(labelled_batch(5, 5), seed=0)
        assert split.sizes() == [1] * 10

    def test_remainder_goes_first(self):
        assert split_and_partition(labelled_batch(10, 3), seed=0).sizes() == [2, 2, 2] + [1] * 7

    def test_too_small(self):
        with pytest.raises(TooSmallError):
            split_and_partition(labelled_batch(5, 4), seed=0)

    def test_seed_changes_order_not_content(self):
        batch = labelled_batch(60, 40)
        a, b = split_and_partition(batch, 1), split_and_partition(batch, 2)
        rows = lambda s: [int(e.field_indices[0]) for p in s.partitions for e in p]  # noqa: E731
        assert rows(a) != rows(b)
        assert sorted(rows(a)) == sorted(rows(b)) == list(range(100))

    def test_same_seed_same_split(self):
        batch = labelled_batch(60, 40)
        assert split_and_partition(batch, 5) == split_and_partition(batch, 5)

    @given(st.integers(10, 400), st.integers(0, 2**31))
    def test_is_a_partition(self, n, seed):
        batch = labelled_batch(n, 0)
        split = split_and_partition(batch, seed)
        seen = np.concatenate([p.indices[:, 0] for p in split.partitions])
        assert sorted(seen.tolist()) == list(range(n))
        assert max(split.sizes()) - min(split.sizes()) <= 1


class TestRebalance:
    def test_undersample(self):
        out = rebalance(labelled_batch(80, 20), "undersample", seed=0)
        assert Counter(out.labels.tolist()) == {0: 20, 1: 20}

    def test_oversample(self):
        out = rebalance(labelled_batch(80, 20), "oversample", seed=0)
        assert Counter(out.labels.tolist()) == {0: 80, 1: 80}

    @pytest.mark.parametrize("mode", ["undersample", "oversample"])
    def test_balanced_unchanged(self, mode):
        out = rebalance(labelled_batch(50, 50), mode, seed=0)
        assert Counter(out.labels.tolist()) == {0: 50, 1: 50}

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            rebalance(labelled_batch(10, 0), "undersample", seed=0)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            rebalance(labelled_batch(10, 2), "smote", seed=0)

    @given(st.integers(1, 60), st.integers(1, 60), st.sampled_from(["undersample", "oversample"]), st.integers(0, 1000))
    def test_always_balanced(self, n_neg, n_pos, mode, seed):
        out = rebalance(labelled_batch(n_neg, n_pos), mode, seed)
        assert 2 * int(out.labels.sum()) == len(out)

    def test_split_rebalances_train_only(self):
        split = split_and_partition(labelled_batch(800, 200), seed=0)
        out = rebalance_split(split, "undersample", seed=0)
        assert 2 * int(out.train.labels.sum()) == len(out.train)
        assert out.val_partition == split.val_partition
        assert out.test_partition == split.test_partition
        assert len(out.train_partitions) == 8


class TestEncodedFile:
    def _split(self):
        recs = criteo_like_records(120, seed=4)
        vocab = build_vocabulary(recs, min_frequency=2)
        return split_and_partition(encode_all(recs, vocab), seed=9, vocab=vocab)

    def test_roundtrip_bit_exact(self, tmp_path):
        split = self._split()
        save_encoded(split, tmp_path / "a.ctrf")
        loaded = load_encoded(tmp_path / "a.ctrf")
        assert loaded == split
        save_encoded(loaded, tmp_path / "b.ctrf")
        assert (tmp_path / "a.ctrf").read_bytes() == (tmp_path / "b.ctrf").read_bytes()

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.ctrf").write_bytes(b"")
        with pytest.raises(TruncatedFileError):
            load_encoded(tmp_path / "e.ctrf")

    def test_cut_short(self, tmp_path):
        save_encoded(self._split(), tmp_path / "a.ctrf")
        data = (tmp_path / "a.ctrf").read_bytes()
        (tmp_path / "t.ctrf").write_bytes(data[: len(data) - 7])
        with pytest.raises(TruncatedFileError):
            load_encoded(tmp_path / "t.ctrf")

    def test_bad_magic(self, tmp_path):
        save_encoded(self._split(), tmp_path / "a.ctrf")
        data = bytearray((tmp_path / "a.ctrf").read_bytes())
        data[:4] = b"XXXX"
        (tmp_path / "m.ctrf").write_bytes(bytes(data))
        with pytest.raises(FormatVersionError):
            load_encoded(tmp_path / "m.ctrf")

    def test_bad_version(self, tmp_path):
        save_encoded(self._split(), tmp_path / "a.ctrf")
        data = bytearray((tmp_path / "a.ctrf").read_bytes())
        data[4] = 99
        (tmp_path / "v.ctrf").write_bytes(bytes(data))
        with pytest.raises(FormatVersionError):
            load_encoded(tmp_path / "v.ctrf")


def test_batch_sequence_behaviour():
    batch = labelled_batch(3, 2)
    assert len(batch) == 5
    assert batch[4].label == 1
    assert isinstance(batch[1:3], EncodedBatch) and len(batch[1:3]) == 2
    assert EncodedBatch.from_examples(list(batch)) == batch
    assert len(EncodedBatch.concat([batch, batch])) == 10
    assert math.isclose(sum(e.label for e in batch) / 3, 2 / 3)
