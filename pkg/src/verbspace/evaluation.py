"""Recognition and retrieval metrics over verb label space.

Predictions and ground truth are length-D vectors (``LabelVector`` or plain
arrays).  Verbs are the one-hot vertices of label space, so every retrieval
task here is an exact L2 nearest-neighbour ranking:

* video-to-text: rank verb vertices by distance to a video's prediction,
* text-to-video: rank videos by distance to a (multi-)verb query vector,
* video-to-video: rank corpus predictions by distance to a query prediction.

Distance ties are always broken by index / ingestion order.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, EmptyCorpusError, UndefinedMetricError, VerbspaceError
from .label_space import LabelVector, Scheme, VerbVocabulary, relevant_verbs

__all__ = [
    "QueryVector",
    "RankedList",
    "EvalReport",
    "average_precision",
    "overlap_report",
    "overlap_accuracy",
    "rank_verbs",
    "v2t_map",
    "enumerate_queries",
    "t2v_map",
    "v2v_retrieve",
    "reports_to_json",
    "reports_to_tsv",
    "curve_to_tsv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QueryVector:
    """Binary text query with ``n`` verbs switched on."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 1 or not np.all((values == 0) | (values == 1)) or not values.any():
            raise VerbspaceError("query must be a binary vector with at least one verb set")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_verbs(cls, verbs: Sequence[int], size: int) -> "QueryVector":
        values = np.zeros(size)
        values[list(verbs)] = 1.0
        return cls(values)

    @property
    def n(self) -> int:
        return int(self.values.sum())

    @property
    def verbs(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.values))

    def name(self, vocab: VerbVocabulary | None = None) -> str:
        if vocab is None:
            return "+".join(str(j) for j in self.verbs)
        return "+".join(vocab.verbs[j] for j in self.verbs)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, QueryVector) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.verbs)


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        entries = tuple((str(i), float(d)) for i, d in self.entries)
        ids = [i for i, _ in entries]
        dists = [d for _, d in entries]
        if len(set(ids)) != len(ids):
            raise VerbspaceError("ranked item ids must be unique")
        if any(d < 0 for d in dists) or any(a > b for a, b in zip(dists, dists[1:])):
            raise VerbspaceError("ranked distances must be non-negative and non-decreasing")
        object.__setattr__(self, "entries", entries)

    @property
    def item_ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    def to_tsv(self) -> str:
        rows = [f"# query={self.query_id}\nrank\titem_id\tdistance\n"]
        rows += [f"{r}\t{i}\t{d!r}\n" for r, (i, d) in enumerate(self.entries, start=1)]
        return "".join(rows)


@dataclass
class EvalReport:
    """Per-query values of one metric plus their mean.

    ``relevance`` spells out which ground truth defined relevance
    (``"SL"`` for the single-verb row, ``"SAML>=0.5"`` for a thresholded row).
    """

    metric: str
    alpha: float | None
    scheme: str | None
    per_query: list[float]
    query_ids: list[str]
    relevance: str | None = None
    n: int | None = None
    excluded: int = 0
    aggregate: float = field(init=False)

    def __post_init__(self):
        if not self.per_query:
            raise UndefinedMetricError(f"{self.metric}: no query could be scored")
        if len(self.per_query) != len(self.query_ids):
            raise VerbspaceError("per-query values and ids must align")
        self.per_query = [float(v) for v in self.per_query]
        self.aggregate = sum(self.per_query) / len(self.per_query)

    @property
    def query_count(self) -> int:
        return len(self.per_query)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "alpha": self.alpha,
            "scheme": self.scheme,
            "relevance": self.relevance,
            "n": self.n,
            "aggregate": self.aggregate,
            "query_count": self.query_count,
            "excluded": self.excluded,
            "per_query": dict(zip(self.query_ids, self.per_query)),
        }


def _as_matrix(rows, name: str) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        m = np.asarray(rows, dtype=np.float64)
    else:
        m = np.asarray([np.asarray(r, dtype=np.float64) for r in rows], dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise VerbspaceError(f"{name} must be a non-empty list of vectors")
    return m


def _aligned(ground_truth, predicted):
    gt = _as_matrix(ground_truth, "ground_truth")
    pred = _as_matrix(predicted, "predicted")
    if gt.shape != pred.shape:
        raise DimensionMismatchError(f"ground truth {gt.shape} and predictions {pred.shape} differ")
    return gt, pred


def _scheme_of(rows) -> str | None:
    first = rows[0] if len(rows) else None
    return first.scheme.value if isinstance(first, LabelVector) else None


def _ids(ids, count, prefix):
    if ids is None:
        return [f"{prefix}{i}" for i in range(count)]
    ids = [str(i) for i in ids]
    if len(ids) != count:
        raise VerbspaceError(f"expected {count} ids, got {len(ids)}")
    return ids


def average_precision(relevance) -> float:
    """Uninterpolated AP of a ranked list of binary relevance flags.

    Mean of precision@r over the ranks r that hold a relevant item.

    >>> average_precision([1, 0, 1, 0])
    0.8333333333333333
    """
    hits, total = 0, 0.0
    for rank, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            total += hits / rank
    if not hits:
        raise UndefinedMetricError("average precision needs at least one relevant item")
    return total / hits


def _top_k(values: np.ndarray, k: int) -> set[int]:
    order = np.argsort(-values, kind="stable")
    return {int(j) for j in order[:k]}


def overlap_report(ground_truth, predicted, alpha: float, scheme: str | None = None,
                   ids=None) -> EvalReport:
    """Per-video overlap ``|V ∩ top_k(pred)| / |V|`` with ``V`` the verbs scoring >= alpha.

    ``k = |V|``; videos whose relevance set is empty are excluded.
    """
    gt, pred = _aligned(ground_truth, predicted)
    ids = _ids(ids, len(gt), "video")
    scores, kept = [], []
    for vid, g, p in zip(ids, gt, pred):
        relevant = relevant_verbs(g, alpha)
        if not relevant:
            continue
        hits = len(relevant & _top_k(p, len(relevant)))
        scores.append(hits / len(relevant))
        kept.append(vid)
    excluded = len(gt) - len(kept)
    if excluded:
        log.info("overlap accuracy at alpha=%g: %d videos with no relevant verb excluded",
                 alpha, excluded)
    return EvalReport("accuracy", alpha, scheme or _scheme_of(ground_truth), scores, kept,
                      relevance=None, excluded=excluded)


def overlap_accuracy(ground_truth, predicted, alpha: float) -> float:
    return overlap_report(ground_truth, predicted, alpha).aggregate


def _vertex_distances(p: np.ndarray) -> np.ndarray:
    # ||p - e_j||^2 = ||p||^2 - 2 p_j + 1; equal p_j give bitwise-equal distances
    sq = float(p @ p) - 2.0 * p + 1.0
    return np.sqrt(np.maximum(sq, 0.0))


def _verb_order(p: np.ndarray) -> np.ndarray:
    return np.argsort(_vertex_distances(p), kind="stable")


def rank_verbs(predicted, vocab: VerbVocabulary | None = None, query_id: str = "query") -> RankedList:
    """Verbs from nearest to furthest vertex of the prediction."""
    p = np.asarray(predicted, dtype=np.float64)
    if vocab is not None and p.size != len(vocab):
        raise DimensionMismatchError(f"prediction has {p.size} values for {len(vocab)} verbs")
    dist = _vertex_distances(p)
    names = vocab.verbs if vocab is not None else [str(j) for j in range(p.size)]
    return RankedList(query_id, tuple((names[j], dist[j]) for j in _verb_order(p)))


def v2t_map(ground_truth, predicted, alpha: float = 1.0, relevance_scheme: str | None = None,
            scheme: str | None = None, ids=None) -> EvalReport:
    """Video-to-text mAP: each video's verb ranking scored against its relevant verbs.

    ``ground_truth`` defines relevance; pass SL labels for the single-verb
    protocol (any alpha selects the hot verb) or SAML labels with the
    threshold ``alpha``.  ``scheme`` names the model being evaluated.
    """
    gt, pred = _aligned(ground_truth, predicted)
    relevance_scheme = relevance_scheme or _scheme_of(ground_truth) or "GT"
    relevance = relevance_scheme if relevance_scheme == Scheme.SL.value else f"{relevance_scheme}>={alpha:g}"
    ids = _ids(ids, len(gt), "video")
    aps, kept = [], []
    for vid, g, p in zip(ids, gt, pred):
        relevant = relevant_verbs(g, alpha)
        if not relevant:
            continue
        aps.append(average_precision([int(j) in relevant for j in _verb_order(p)]))
        kept.append(vid)
    excluded = len(gt) - len(kept)
    if excluded:
        log.info("v2t (%s): %d videos with no relevant verb excluded", relevance, excluded)
    return EvalReport("v2t_map", alpha, scheme, aps, kept, relevance=relevance, excluded=excluded)


def enumerate_queries(ground_truth, n: int, alpha: float = 0.5) -> list[QueryVector]:
    """All n-verb sets that co-occur (every verb >= alpha) in at least one video.

    Returned in lexicographic order of their verb indices.
    """
    if n < 1:
        raise VerbspaceError(f"n must be >= 1, got {n}")
    gt = _as_matrix(ground_truth, "ground_truth")
    combos = set()
    for g in gt:
        combos.update(itertools.combinations(sorted(relevant_verbs(g, alpha)), n))
    return [QueryVector.from_verbs(c, gt.shape[1]) for c in sorted(combos)]


def t2v_map(queries: Sequence[QueryVector], predicted, ground_truth, alpha: float = 0.5,
            scheme: str | None = None, vocab: VerbVocabulary | None = None) -> EvalReport:
    """Text-to-video mAP over (multi-)verb queries.

    A video is relevant to a query when its ground truth reaches ``alpha`` on
    every queried verb.  Queries without any relevant video are skipped.
    """
    gt, pred = _aligned(ground_truth, predicted)
    if not queries:
        raise UndefinedMetricError("t2v: no queries")
    aps, names, sizes = [], [], set()
    excluded = 0
    for q in queries:
        u = np.asarray(q, dtype=np.float64)
        if u.size != gt.shape[1]:
            raise DimensionMismatchError(f"query has {u.size} values for {gt.shape[1]} verbs")
        verbs = list(np.flatnonzero(u))
        sizes.add(len(verbs))
        relevant = np.all(gt[:, verbs] >= alpha, axis=1)
        if not relevant.any():
            excluded += 1
            log.warning("t2v: query %s has no relevant video; excluded", verbs)
            continue
        dist = np.sqrt(((pred - u) ** 2).sum(axis=1))
        order = np.argsort(dist, kind="stable")
        aps.append(average_precision(relevant[order]))
        names.append(q.name(vocab) if isinstance(q, QueryVector) else "+".join(map(str, verbs)))
    n = sizes.pop() if len(sizes) == 1 else None
    return EvalReport("t2v_map", alpha, scheme, aps, names, relevance=f"SAML>={alpha:g}",
                      n=n, excluded=excluded)


def v2v_retrieve(query, corpus, corpus_ids: Sequence[str], corpus_tags: Sequence[str] | None = None,
                 exclude_tag: str | None = None, query_id: str = "query") -> RankedList:
    """Rank corpus videos by L2 distance between predicted label vectors.

    With ``exclude_tag`` set (normally the query video's own dataset tag)
    every corpus video carrying that tag is dropped first.
    """
    q = np.asarray(query, dtype=np.float64)
    c = _as_matrix(corpus, "corpus")
    if c.shape[1] != q.size:
        raise DimensionMismatchError(f"query has {q.size} values, corpus vectors {c.shape[1]}")
    ids = _ids(corpus_ids, len(c), "video")
    keep = np.ones(len(c), dtype=bool)
    if exclude_tag is not None:
        if corpus_tags is None or len(corpus_tags) != len(c):
            raise VerbspaceError("corpus_tags must align with the corpus to exclude by tag")
        keep = np.array([t != exclude_tag for t in corpus_tags])
    if not keep.any():
        raise EmptyCorpusError(f"no corpus video left after excluding dataset {exclude_tag!r}")
    idx = np.flatnonzero(keep)
    dist = np.sqrt(((c[idx] - q) ** 2).sum(axis=1))
    order = np.argsort(dist, kind="stable")
    return RankedList(query_id, tuple((ids[idx[i]], dist[i]) for i in order))


# ---------------------------------------------------------------------------
# export


def reports_to_json(reports: Sequence[EvalReport], **extra) -> str:
    return json.dumps({**extra, "reports": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"


def reports_to_tsv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["metric", "scheme", "relevance", "alpha", "n", "query_id", "value"])
    for r in reports:
        common = [r.metric, r.scheme or "", r.relevance or "", "" if r.alpha is None else repr(r.alpha),
                  "" if r.n is None else r.n]
        for qid, v in zip(r.query_ids, r.per_query):
            writer.writerow(common + [qid, repr(v)])
        writer.writerow(common + ["*", repr(r.aggregate)])
    return buf.getvalue()


def curve_to_tsv(reports: Sequence[EvalReport]) -> str:
    """``scheme, n, mAP`` rows from text-to-video reports, for plotting mAP against query size."""
    rows = sorted(
        ((r.scheme or "", r.n, r.aggregate) for r in reports if r.metric == "t2v_map" and r.n),
        key=lambda row: (row[0], row[1]),
    )
    return "scheme\tn\tmap\n" + "".join(f"{s}\t{n}\t{m!r}\n" for s, n, m in rows)
