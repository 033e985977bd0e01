"""Criteo-format ingestion: parsing, numeric discretisation, vocabularies,
encoding, the 80/10/10 split into ten partitions, class rebalancing, and the
binary ``CTRF`` dataset file.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

N_INT = 13
N_CAT = 26
N_FIELDS = N_INT + N_CAT
MISSING = "<na>"

MAGIC = b"CTRF"
FORMAT_VERSION = 1
N_TRAIN_PARTITIONS = 8
N_PARTITIONS = 10


class DataError(ValueError):
    """Base class for data problems (bad input, bad files)."""


class MalformedRecordError(DataError):
    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        where = f"line {line_number}: " if line_number is not None else ""
        super().__init__(where + message)


class EmptyCorpusError(DataError):
    pass


class TooSmallError(DataError):
    pass


class SingleClassError(DataError):
    pass


class FormatVersionError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


# --------------------------------------------------------------------------
# raw records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RawRecord:
    """One impression as read from a TSV line; ``None`` marks a missing slot."""

    label: int | None
    int_feats: tuple[int | None, ...]
    cat_feats: tuple[str | None, ...]

    def __post_init__(self):
        if len(self.int_feats) != N_INT or len(self.cat_feats) != N_CAT:
            raise MalformedRecordError(
                f"expected {N_INT} integer and {N_CAT} categorical slots, "
                f"got {len(self.int_feats)} and {len(self.cat_feats)}"
            )


def parse_line(line: str, has_label: bool = True, line_number: int | None = None) -> RawRecord:
    """Parse one tab-separated Criteo line (40 columns labeled, 39 unlabeled)."""
    cols = line.rstrip("\r\n").split("\t")
    expected = N_FIELDS + 1 if has_label else N_FIELDS
    if len(cols) != expected:
        raise MalformedRecordError(f"expected {expected} fields, found {len(cols)}", line_number)
    label = None
    if has_label:
        if cols[0] not in ("0", "1"):
            raise MalformedRecordError(f"label must be 0 or 1, got {cols[0]!r}", line_number)
        label = int(cols[0])
        cols = cols[1:]
    ints = []
    for j, text in enumerate(cols[:N_INT]):
        if text == "":
            ints.append(None)
            continue
        try:
            ints.append(int(text, 10))
        except ValueError:
            raise MalformedRecordError(
                f"integer column I{j + 1} holds non-integer text {text!r}", line_number
            ) from None
    cats = tuple(text if text != "" else None for text in cols[N_INT:])
    return RawRecord(label, tuple(ints), cats)


def format_line(record: RawRecord) -> str:
    """Inverse of :func:`parse_line` (without trailing newline)."""
    cols = [] if record.label is None else [str(record.label)]
    cols += ["" if v is None else str(v) for v in record.int_feats]
    cols += ["" if v is None else v for v in record.cat_feats]
    return "\t".join(cols)


def read_tsv(path, has_label: bool = True, max_bad_lines: int = 0) -> tuple[list[RawRecord], list[MalformedRecordError]]:
    """Parse a whole file; malformed lines are collected up to ``max_bad_lines``.

    Raises the first excess :class:`MalformedRecordError` once more than
    ``max_bad_lines`` lines fail.
    """
    records, bad = [], []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip("\r\n"):
                continue
            try:
                records.append(parse_line(line, has_label, number))
            except MalformedRecordError as err:
                bad.append(err)
                if len(bad) > max_bad_lines:
                    raise
    return records, bad


def write_tsv(records: Iterable[RawRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(format_line(record) + "\n")


def transform_numeric(v: int | None) -> str:
    """Discretise an integer feature into a categorical token.

    Values above 2 are bucketed as ``floor(ln(v)^2)``; small values (and the
    negative values that occur in the second integer column of real Criteo
    data) pass through unchanged.
    """
    if v is None:
        return MISSING
    if v > 2:
        return str(int(math.floor(math.log(v) ** 2)))
    return str(v)


def record_tokens(record: RawRecord) -> list[str]:
    """The 39 per-field tokens of a record; missing categoricals become ``<na>``."""
    tokens = [transform_numeric(v) for v in record.int_feats]
    tokens += [MISSING if v is None else v for v in record.cat_feats]
    return tokens


# --------------------------------------------------------------------------
# vocabulary and encoding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureVocabulary:
    """Per-field token maps; local index 0 is the out-of-vocabulary slot."""

    per_field: tuple[dict[str, int], ...]
    min_frequency: int

    def __post_init__(self):
        if len(self.per_field) != N_FIELDS:
            raise ValueError(f"need {N_FIELDS} field maps, got {len(self.per_field)}")

    @cached_property
    def field_sizes(self) -> tuple[int, ...]:
        return tuple(len(m) + 1 for m in self.per_field)

    @cached_property
    def field_offsets(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.field_sizes)[:-1]]))

    @property
    def total_features(self) -> int:
        return sum(self.field_sizes)

    def global_index(self, field_id: int, token: str | None) -> int:
        local = self.per_field[field_id].get(token, 0) if token is not None else 0
        return self.field_offsets[field_id] + local

    def __eq__(self, other):
        if not isinstance(other, FeatureVocabulary):
            return NotImplemented
        return self.min_frequency == other.min_frequency and list(self.per_field) == list(other.per_field)

    __hash__ = None


def build_vocabulary(records: Sequence[RawRecord], min_frequency: int = 4) -> FeatureVocabulary:
    """Count tokens per field and keep those seen at least ``min_frequency`` times.

    Retained tokens get local indices 1.. in order of decreasing count, ties
    broken by token text.  The missing marker is never retained: missing
    values always share the OOV slot.
    """
    if min_frequency < 1:
        raise ValueError("min_frequency must be positive")
    if len(records) == 0:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    counters = [Counter() for _ in range(N_FIELDS)]
    for record in records:
        for counter, token in zip(counters, record_tokens(record)):
            counter[token] += 1
    maps = []
    for counter in counters:
        counter.pop(MISSING, None)
        kept = sorted((t for t, c in counter.items() if c >= min_frequency), key=lambda t: (-counter[t], t))
        maps.append({token: i for i, token in enumerate(kept, start=1)})
    return FeatureVocabulary(tuple(maps), min_frequency)


@dataclass(frozen=True)
class EncodedExample:
    label: int
    field_indices: tuple[int, ...]
    field_values: tuple[float, ...] = (1.0,) * N_FIELDS


def encode(record: RawRecord, vocab: FeatureVocabulary, require_label: bool = True) -> EncodedExample:
    """Map a record to 39 global indices; unseen or missing tokens hit the OOV slot."""
    if record.label is None and require_label:
        raise DataError("record has no label but a labeled example was requested")
    offsets = vocab.field_offsets
    indices = tuple(
        offsets[f] + vocab.per_field[f].get(tok, 0) for f, tok in enumerate(record_tokens(record))
    )
    return EncodedExample(record.label if record.label is not None else 0, indices)


class EncodedBatch(Sequence):
    """A block of encoded examples stored column-wise.

    Behaves as a sequence of :class:`EncodedExample` (indexing with an int
    yields one example, slicing or fancy indexing yields a sub-batch) while
    exposing the ``indices`` ``(n, 39)``, ``values`` ``(n, 39)`` and
    ``labels`` ``(n,)`` arrays the models consume.
    """

    def __init__(self, indices, labels, values=None):
        self.indices = np.ascontiguousarray(indices, dtype=np.int64).reshape(-1, N_FIELDS)
        self.labels = np.ascontiguousarray(labels, dtype=np.int64).reshape(-1)
        if values is None:
            values = np.ones(self.indices.shape, dtype=np.float64)
        self.values = np.ascontiguousarray(values, dtype=np.float64).reshape(self.indices.shape)
        if self.labels.shape[0] != self.indices.shape[0]:
            raise ValueError("labels and indices disagree on the number of examples")

    @classmethod
    def from_examples(cls, examples: Iterable[EncodedExample]) -> "EncodedBatch":
        examples = list(examples)
        if not examples:
            return cls.empty()
        return cls(
            [e.field_indices for e in examples],
            [e.label for e in examples],
            [e.field_values for e in examples],
        )

    @classmethod
    def empty(cls) -> "EncodedBatch":
        return cls(np.zeros((0, N_FIELDS)), np.zeros(0))

    @classmethod
    def concat(cls, batches: Sequence["EncodedBatch"]) -> "EncodedBatch":
        batches = [as_batch(b) for b in batches]
        if not batches:
            return cls.empty()
        return cls(
            np.concatenate([b.indices for b in batches]),
            np.concatenate([b.labels for b in batches]),
            np.concatenate([b.values for b in batches]),
        )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, item):
        if isinstance(item, (int, np.integer)):
            return EncodedExample(
                int(self.labels[item]),
                tuple(int(i) for i in self.indices[item]),
                tuple(float(v) for v in self.values[item]),
            )
        return EncodedBatch(self.indices[item], self.labels[item], self.values[item])

    def __iter__(self) -> Iterator[EncodedExample]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EncodedBatch):
            return NotImplemented
        return (
            np.array_equal(self.indices, other.indices)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"EncodedBatch(n={len(self)}, positives={int(self.labels.sum())})"


def as_batch(examples) -> EncodedBatch:
    if isinstance(examples, EncodedBatch):
        return examples
    return EncodedBatch.from_examples(examples)


def encode_all(records: Sequence[RawRecord], vocab: FeatureVocabulary) -> EncodedBatch:
    return EncodedBatch.from_examples(encode(r, vocab) for r in records)


# --------------------------------------------------------------------------
# split / rebalance
# --------------------------------------------------------------------------


@dataclass
class DatasetSplit:
    """Eight training partitions, one validation and one test partition."""

    train_partitions: list[EncodedBatch]
    val_partition: EncodedBatch
    test_partition: EncodedBatch
    seed: int
    vocab: FeatureVocabulary | None = None

    @property
    def partitions(self) -> list[EncodedBatch]:
        return [*self.train_partitions, self.val_partition, self.test_partition]

    @property
    def train(self) -> EncodedBatch:
        return EncodedBatch.concat(self.train_partitions)

    def sizes(self) -> list[int]:
        return [len(p) for p in self.partitions]

    def __eq__(self, other):
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return self.seed == other.seed and self.vocab == other.vocab and self.partitions == other.partitions


def partition_sizes(n: int, parts: int = N_PARTITIONS) -> list[int]:
    """Near-equal sizes; the remainder goes to the earliest parts."""
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def split_and_partition(examples, seed: int, vocab: FeatureVocabulary | None = None) -> DatasetSplit:
    """Shuffle under ``seed`` and cut into ten near-equal partitions (8 train, val, test)."""
    batch = as_batch(examples)
    n = len(batch)
    if n < N_PARTITIONS:
        raise TooSmallError(f"need at least {N_PARTITIONS} examples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0, *partition_sizes(n)])
    parts = [batch[order[lo:hi]] for lo, hi in zip(bounds[:-1], bounds[1:])]
    return DatasetSplit(parts[:N_TRAIN_PARTITIONS], parts[8], parts[9], seed, vocab)


def rebalance(examples, mode: str, seed: int) -> EncodedBatch:
    """Equalise class counts by random undersampling or oversampling.

    Undersampling keeps the surviving examples in their original order;
    oversampling returns the whole input plus minority duplicates, shuffled.
    """
    batch = as_batch(examples)
    if mode not in ("undersample", "oversample"):
        raise ValueError(f"unknown rebalance mode {mode!r}")
    pos = np.flatnonzero(batch.labels == 1)
    neg = np.flatnonzero(batch.labels == 0)
    if pos.size == 0 or neg.size == 0:
        raise SingleClassError("rebalancing needs both classes present")
    rng = np.random.default_rng(seed)
    minority, majority = (pos, neg) if pos.size <= neg.size else (neg, pos)
    if mode == "undersample":
        keep = np.sort(np.concatenate([minority, rng.choice(majority, minority.size, replace=False)]))
        return batch[keep]
    extra = rng.choice(minority, majority.size - minority.size, replace=True)
    idx = np.concatenate([np.arange(len(batch)), extra])
    return batch[rng.permutation(idx)]


def rebalance_split(split: DatasetSplit, mode: str, seed: int) -> DatasetSplit:
    """Rebalance the training portion only and re-cut it into eight partitions.

    Validation and test keep the natural class ratio so evaluation stays honest.
    """
    train = rebalance(split.train, mode, seed)
    bounds = np.cumsum([0, *partition_sizes(len(train), N_TRAIN_PARTITIONS)])
    parts = [train[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
    return DatasetSplit(parts, split.val_partition, split.test_partition, split.seed, split.vocab)


# --------------------------------------------------------------------------
# CTRF binary file
# --------------------------------------------------------------------------
#
# magic "CTRF" | u16 version | u64 seed | u32 min_frequency | u8 has_vocab
# vocabulary: 39 x (u32 count, count x (u32 len, utf-8 token, u32 local index))
# u8 n_partitions, then per partition: u32 n, n x (u8 label, 39 x u32 index)
# All integers little-endian.

_RECORD = np.dtype([("label", "<u1"), ("idx", "<u4", (N_FIELDS,))])


def save_encoded(split: DatasetSplit, path) -> None:
    chunks = [MAGIC, struct.pack("<HQI?", FORMAT_VERSION, split.seed, split.vocab.min_frequency if split.vocab else 0, split.vocab is not None)]
    if split.vocab is not None:
        for mapping in split.vocab.per_field:
            chunks.append(struct.pack("<I", len(mapping)))
            for token, local in mapping.items():
                raw = token.encode("utf-8")
                chunks.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", local))
    chunks.append(struct.pack("<B", N_PARTITIONS))
    for part in split.partitions:
        if not np.all(part.values == 1.0):
            raise DataError("the CTRF format stores unit field values only")
        rec = np.empty(len(part), dtype=_RECORD)
        rec["label"] = part.labels
        rec["idx"] = part.indices
        chunks.append(struct.pack("<I", len(part)))
        chunks.append(rec.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_encoded(path) -> DatasetSplit:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC):
        raise TruncatedFileError(f"{path}: file too short to hold a header")
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise FormatVersionError(f"{path}: not a CTRF file (bad magic)")
    version, seed, min_freq, has_vocab = reader.unpack("<HQI?")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    vocab = None
    if has_vocab:
        maps = []
        for _ in range(N_FIELDS):
            (count,) = reader.unpack("<I")
            mapping = {}
            for _ in range(count):
                (length,) = reader.unpack("<I")
                token = reader.take(length).decode("utf-8")
                (mapping[token],) = reader.unpack("<I")
            maps.append(mapping)
        vocab = FeatureVocabulary(tuple(maps), min_freq)
    (n_parts,) = reader.unpack("<B")
    if n_parts != N_PARTITIONS:
        raise DataError(f"{path}: expected {N_PARTITIONS} partitions, found {n_parts}")
    parts = []
    for _ in range(n_parts):
        (n,) = reader.unpack("<I")
        rec = np.frombuffer(reader.take(n * _RECORD.itemsize), dtype=_RECORD)
        parts.append(EncodedBatch(rec["idx"].astype(np.int64), rec["label"].astype(np.int64)))
    if reader.pos != len(data):
        raise DataError(f"{path}: {len(data) - reader.pos} trailing bytes")
    return DatasetSplit(parts[:N_TRAIN_PARTITIONS], parts[8], parts[9], seed, vocab)


def class_ratio(batch: EncodedBatch) -> float:
    """Positives divided by negatives (``inf`` without negatives)."""
    pos = int(batch.labels.sum())
    neg = len(batch) - pos
    return pos / neg if neg else math.inf
