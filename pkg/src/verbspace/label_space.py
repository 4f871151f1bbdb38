"""Verb vocabulary and the three annotation-derived label schemes.

Crowdsourced annotations arrive per action class as a count of how many
annotators picked each verb.  From those counts we derive

* ``SL``   -- a one-hot single-verb label (majority vote),
* ``ML``   -- a binary multi-verb label (verbs picked by >= threshold of annotators),
* ``SAML`` -- a soft assigned multi-label (fraction of annotators per verb).

Annotation file grammar (one record per line, ``#`` starts a comment)::

    pour-oil  9  pour:9 fill:6 hold:3
    {"class_id": "pour-oil", "annotator_count": 9, "votes": {"pour": 9, "fill": 6}}

Both forms may be mixed in a single file.  Vocabulary files hold one verb per
line; line order defines the verb index.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyLabelError,
    EmptyVotesError,
    MalformedFileError,
    VerbspaceError,
    VocabularyMismatchError,
)

__all__ = [
    "Scheme",
    "VerbVocabulary",
    "VoteRecord",
    "LabelVector",
    "build_sl",
    "build_ml",
    "build_saml",
    "build_label",
    "relevant_verbs",
    "verb_vertex",
    "load_vocabulary",
    "save_vocabulary",
    "parse_votes",
    "load_votes",
    "save_votes",
    "save_labels",
    "load_labels",
]

ML_THRESHOLD = 0.5


class Scheme(str, enum.Enum):
    SL = "SL"
    ML = "ML"
    SAML = "SAML"
    PREDICTED = "PREDICTED"


@dataclass(frozen=True)
class VerbVocabulary:
    """Ordered verb set; the position of a verb is its label-vector index."""

    verbs: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verbs = tuple(self.verbs)
        object.__setattr__(self, "verbs", verbs)
        if len(verbs) < 2:
            raise VerbspaceError(f"vocabulary needs at least 2 verbs, got {len(verbs)}")
        for v in verbs:
            if not isinstance(v, str) or not v.strip() or v != v.strip():
                raise VerbspaceError(f"invalid verb {v!r}")
        if len(set(verbs)) != len(verbs):
            dupes = sorted({v for v in verbs if verbs.count(v) > 1})
            raise VerbspaceError(f"duplicate verbs in vocabulary: {dupes}")
        object.__setattr__(self, "_index", {v: j for j, v in enumerate(verbs)})

    def __len__(self) -> int:
        return len(self.verbs)

    def __iter__(self):
        return iter(self.verbs)

    def __contains__(self, verb) -> bool:
        return verb in self._index

    def index(self, verb: str) -> int:
        try:
            return self._index[verb]
        except KeyError:
            raise VocabularyMismatchError(f"verb {verb!r} is not in the vocabulary") from None

    @property
    def fingerprint(self) -> str:
        """Short content hash, used to tie model files to a vocabulary."""
        digest = hashlib.sha256("\n".join(self.verbs).encode("utf-8")).hexdigest()
        return digest[:16]


@dataclass(frozen=True)
class VoteRecord:
    """Per-class annotation counts: how many of ``annotator_count`` people chose each verb."""

    class_id: str
    verb_counts: Mapping[str, int]
    annotator_count: int

    def __post_init__(self):
        if not self.class_id or any(c.isspace() for c in self.class_id):
            raise VerbspaceError(f"invalid class id {self.class_id!r}")
        if int(self.annotator_count) != self.annotator_count or self.annotator_count < 1:
            raise VerbspaceError(
                f"{self.class_id}: annotator_count must be a positive integer, "
                f"got {self.annotator_count!r}"
            )
        counts = {}
        for verb, count in dict(self.verb_counts).items():
            if int(count) != count or count < 0:
                raise VerbspaceError(f"{self.class_id}: bad count {count!r} for verb {verb!r}")
            if count > self.annotator_count:
                raise VerbspaceError(
                    f"{self.class_id}: verb {verb!r} has {count} votes "
                    f"but only {self.annotator_count} annotators"
                )
            counts[verb] = int(count)
        object.__setattr__(self, "verb_counts", counts)
        object.__setattr__(self, "annotator_count", int(self.annotator_count))

    def counts(self, vocab: VerbVocabulary, ignore_unknown: bool = False) -> np.ndarray:
        """Vote counts laid out over ``vocab`` as an integer array."""
        out = np.zeros(len(vocab), dtype=np.int64)
        for verb, count in self.verb_counts.items():
            if verb not in vocab:
                if ignore_unknown:
                    continue
                raise VocabularyMismatchError(
                    f"{self.class_id}: verb {verb!r} is not in the vocabulary"
                )
            out[vocab.index(verb)] = count
        return out


@dataclass(frozen=True, eq=False)
class LabelVector:
    """A length-D vector over the vocabulary, tagged with the scheme it obeys."""

    scheme: Scheme
    values: np.ndarray

    def __post_init__(self):
        scheme = Scheme(self.scheme)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 1 or values.size < 1:
            raise VerbspaceError(f"label values must be a non-empty 1-D vector, got {values.shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise VerbspaceError("label values must lie in [0, 1]")
        if scheme is Scheme.SL:
            if np.count_nonzero(values == 1.0) != 1 or np.count_nonzero(values) != 1:
                raise VerbspaceError("SL label must be one-hot")
        elif scheme is Scheme.ML:
            if not np.all((values == 0.0) | (values == 1.0)) or not values.any():
                raise VerbspaceError("ML label must be binary with at least one verb set")
        elif scheme is Scheme.SAML:
            if not values.any():
                raise VerbspaceError("SAML label must have at least one positive verb")
        values.setflags(write=False)
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, LabelVector):
            return NotImplemented
        return self.scheme is other.scheme and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.scheme, self.values.tobytes()))


def _nonzero_counts(votes: VoteRecord, vocab: VerbVocabulary, ignore_unknown: bool) -> np.ndarray:
    counts = votes.counts(vocab, ignore_unknown=ignore_unknown)
    if not counts.any():
        raise EmptyVotesError(f"{votes.class_id}: no verb received a vote")
    return counts


def build_sl(votes: VoteRecord, vocab: VerbVocabulary, ignore_unknown: bool = False) -> LabelVector:
    """Majority-vote one-hot label; ties go to the lowest vocabulary index."""
    counts = _nonzero_counts(votes, vocab, ignore_unknown)
    values = np.zeros(len(vocab))
    values[int(np.argmax(counts))] = 1.0  # argmax returns the first maximum
    return LabelVector(Scheme.SL, values)


def build_ml(
    votes: VoteRecord,
    vocab: VerbVocabulary,
    threshold: float = ML_THRESHOLD,
    ignore_unknown: bool = False,
) -> LabelVector:
    """Binary label marking each verb chosen by at least ``threshold`` of the annotators.

    Raises :class:`EmptyLabelError` rather than returning an all-zero vector
    when no verb reaches the threshold.
    """
    if not 0.0 < threshold <= 1.0:
        raise VerbspaceError(f"threshold must be in (0, 1], got {threshold}")
    counts = votes.counts(vocab, ignore_unknown=ignore_unknown)
    values = (counts / votes.annotator_count >= threshold).astype(np.float64)
    if not values.any():
        raise EmptyLabelError(
            f"{votes.class_id}: no verb reaches the ML threshold {threshold:g}"
        )
    return LabelVector(Scheme.ML, values)


def build_saml(votes: VoteRecord, vocab: VerbVocabulary, ignore_unknown: bool = False) -> LabelVector:
    """Soft label: per-verb vote count divided by the class's annotator count."""
    counts = _nonzero_counts(votes, vocab, ignore_unknown)
    return LabelVector(Scheme.SAML, counts / votes.annotator_count)


def build_label(
    scheme: Scheme | str,
    votes: VoteRecord,
    vocab: VerbVocabulary,
    ml_threshold: float = ML_THRESHOLD,
    ignore_unknown: bool = False,
) -> LabelVector:
    scheme = Scheme(scheme)
    if scheme is Scheme.SL:
        return build_sl(votes, vocab, ignore_unknown=ignore_unknown)
    if scheme is Scheme.ML:
        return build_ml(votes, vocab, threshold=ml_threshold, ignore_unknown=ignore_unknown)
    if scheme is Scheme.SAML:
        return build_saml(votes, vocab, ignore_unknown=ignore_unknown)
    raise VerbspaceError(f"cannot build a label of scheme {scheme.value}")


def relevant_verbs(y, alpha: float) -> frozenset[int]:
    """Indices ``j`` with ``y[j] >= alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise VerbspaceError(f"alpha must be in (0, 1], got {alpha}")
    values = np.asarray(y, dtype=np.float64)
    return frozenset(int(j) for j in np.flatnonzero(values >= alpha))


def verb_vertex(j: int, vocab: VerbVocabulary | int) -> LabelVector:
    """The one-hot point of verb ``j`` in label space."""
    size = vocab if isinstance(vocab, int) else len(vocab)
    if not 0 <= j < size:
        raise IndexError(f"verb index {j} out of range for {size} verbs")
    values = np.zeros(size)
    values[j] = 1.0
    return LabelVector(Scheme.PREDICTED, values)


# ---------------------------------------------------------------------------
# file formats


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def load_vocabulary(path) -> VerbVocabulary:
    verbs = [line for _, line in _content_lines(path)]
    try:
        return VerbVocabulary(tuple(verbs))
    except VerbspaceError as exc:
        raise MalformedFileError(f"{path}: {exc}") from None


def save_vocabulary(vocab: VerbVocabulary, path) -> None:
    Path(path).write_text("".join(v + "\n" for v in vocab.verbs), encoding="utf-8")


def _parse_vote_line(line: str) -> VoteRecord:
    if line.startswith("{"):
        obj = json.loads(line)
        missing = {"class_id", "annotator_count", "votes"} - obj.keys()
        if missing:
            raise ValueError(f"missing keys {sorted(missing)}")
        return VoteRecord(str(obj["class_id"]), obj["votes"], obj["annotator_count"])
    fields = line.split()
    if len(fields) < 2:
        raise ValueError("expected: class_id annotator_count verb:count ...")
    counts = {}
    for pair in fields[2:]:
        verb, sep, count = pair.rpartition(":")
        if not sep or not verb:
            raise ValueError(f"bad verb:count pair {pair!r}")
        if verb in counts:
            raise ValueError(f"verb {verb!r} listed twice")
        counts[verb] = int(count)
    return VoteRecord(fields[0], counts, int(fields[1]))


def parse_votes(lines: Iterable[str], source: str = "<votes>") -> list[VoteRecord]:
    """Parse vote records from text lines; errors carry ``source:line`` context."""
    records, seen = [], set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = _parse_vote_line(line)
        except (ValueError, TypeError) as exc:
            raise MalformedFileError(f"{source}:{lineno}: {exc}") from None
        if record.class_id in seen:
            raise MalformedFileError(f"{source}:{lineno}: class {record.class_id!r} listed twice")
        seen.add(record.class_id)
        records.append(record)
    return records


def load_votes(path) -> list[VoteRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_votes(fh, source=str(path))


def save_votes(records: Sequence[VoteRecord], path) -> None:
    lines = []
    for rec in records:
        pairs = " ".join(f"{v}:{c}" for v, c in rec.verb_counts.items())
        lines.append(f"{rec.class_id}\t{rec.annotator_count}\t{pairs}".rstrip() + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def save_labels(labels: Mapping[str, LabelVector], vocab: VerbVocabulary, path) -> None:
    """Write per-class labels: a ``scheme=.. D=.. vocab=..`` header, then one row per class."""
    schemes = {lab.scheme for lab in labels.values()}
    if len(schemes) > 1:
        raise VerbspaceError("all labels in one file must share a scheme")
    scheme = schemes.pop().value if schemes else Scheme.PREDICTED.value
    out = [f"scheme={scheme} D={len(vocab)} vocab={vocab.fingerprint}\n"]
    out.append("class_id\t" + "\t".join(vocab.verbs) + "\n")
    for class_id, lab in labels.items():
        if len(lab) != len(vocab):
            raise VocabularyMismatchError(f"{class_id}: label length {len(lab)} != {len(vocab)}")
        out.append(class_id + "\t" + "\t".join(repr(float(x)) for x in lab.values) + "\n")
    Path(path).write_text("".join(out), encoding="utf-8")


def load_labels(path, vocab: VerbVocabulary) -> dict[str, LabelVector]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise MalformedFileError(f"{path}: missing header")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        scheme, dim = Scheme(header["scheme"]), int(header["D"])
    except (ValueError, KeyError):
        raise MalformedFileError(f"{path}: bad header {lines[0]!r}") from None
    if dim != len(vocab) or header.get("vocab") != vocab.fingerprint:
        raise VocabularyMismatchError(f"{path}: labels were built for a different vocabulary")
    labels = {}
    for lineno, line in enumerate(lines[2:], start=3):
        fields = line.split("\t")
        if len(fields) != dim + 1:
            raise MalformedFileError(f"{path}:{lineno}: expected {dim + 1} fields")
        labels[fields[0]] = LabelVector(scheme, [float(x) for x in fields[1:]])
    return labels
