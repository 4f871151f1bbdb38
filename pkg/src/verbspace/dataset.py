"""Video instances, feature files, synthetic data and stratified folds.

Feature file layout (tab separated, text so that runs diff cleanly)::

    d=4 n=2
    vid-000  BEOID  pour-oil  0.1  -0.25  1.0  3.5
    vid-001  CMU    stir-egg  ...

Fold file layout: one ``video_id fold_index`` pair per line.

Random numbers come from numpy's PCG64 bit generator, which produces the same
stream on every platform for a given seed.
"""
from __future__ import annotations

import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    MalformedFileError,
    MissingVotesError,
    VerbspaceError,
)
from .label_space import LabelVector, Scheme, VerbVocabulary, VoteRecord, build_label

__all__ = [
    "VideoInstance",
    "FoldAssignment",
    "SyntheticSpec",
    "make_rng",
    "ingest_features",
    "write_features",
    "generate_synthetic",
    "stratified_folds",
    "save_folds",
    "load_folds",
    "attach_labels",
    "feature_matrix",
]

log = logging.getLogger(__name__)

MAX_FEATURE_FILE_BYTES = 512 * 1024 * 1024


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally split into an independent sub-stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *stream])))


@dataclass(frozen=True, eq=False)
class VideoInstance:
    video_id: str
    dataset_tag: str
    class_id: str
    features: np.ndarray

    def __post_init__(self):
        for name in ("video_id", "dataset_tag", "class_id"):
            value = getattr(self, name)
            if not value or any(c.isspace() for c in value):
                raise VerbspaceError(f"{name} must be non-empty without whitespace: {value!r}")
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim != 1 or feats.size == 0:
            raise DimensionMismatchError(f"{self.video_id}: features must be a non-empty vector")
        if not np.all(np.isfinite(feats)):
            raise VerbspaceError(f"{self.video_id}: non-finite feature value")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def dim(self) -> int:
        return self.features.size

    def __eq__(self, other):
        if not isinstance(other, VideoInstance):
            return NotImplemented
        return (
            (self.video_id, self.dataset_tag, self.class_id)
            == (other.video_id, other.dataset_tag, other.class_id)
            and np.array_equal(self.features, other.features)
        )

    def __hash__(self):
        return hash(self.video_id)


def feature_matrix(instances: Sequence[VideoInstance]) -> np.ndarray:
    """Stack instance features into an ``(n, d)`` array."""
    if not instances:
        raise VerbspaceError("no instances")
    dims = {inst.dim for inst in instances}
    if len(dims) != 1:
        raise DimensionMismatchError(f"instances have mixed feature dimensions {sorted(dims)}")
    return np.stack([inst.features for inst in instances])


def _check_unique(instances: Iterable[VideoInstance]) -> None:
    seen = set()
    for inst in instances:
        if inst.video_id in seen:
            raise DuplicateIdError(f"duplicate video_id {inst.video_id!r}")
        seen.add(inst.video_id)


def write_features(instances: Sequence[VideoInstance], path) -> None:
    dims = {inst.dim for inst in instances}
    if len(dims) > 1:
        raise DimensionMismatchError(f"instances have mixed feature dimensions {sorted(dims)}")
    _check_unique(instances)
    d = dims.pop() if dims else 0
    lines = [f"d={d} n={len(instances)}\n"]
    for inst in instances:
        values = "\t".join(repr(float(x)) for x in inst.features)
        lines.append(f"{inst.video_id}\t{inst.dataset_tag}\t{inst.class_id}\t{values}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def ingest_features(path, max_bytes: int = MAX_FEATURE_FILE_BYTES) -> list[VideoInstance]:
    """Read a feature file into instances, in file order.

    Raises :class:`DimensionMismatchError` for rows that disagree with the
    header's ``d``, :class:`DuplicateIdError` for repeated ids and
    :class:`MalformedFileError` for anything else that does not parse,
    including non-finite values.
    """
    size = os.path.getsize(path)
    if size > max_bytes:
        raise MalformedFileError(f"{path}: {size} bytes exceeds the {max_bytes} byte limit")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        try:
            fields = dict(tok.split("=", 1) for tok in header.split())
            d, n = int(fields["d"]), int(fields["n"])
        except (ValueError, KeyError):
            raise MalformedFileError(f"{path}:1: expected header 'd=<int> n=<int>'") from None
        if d < 1 or n < 0:
            raise MalformedFileError(f"{path}:1: invalid header values d={d} n={n}")
        instances, seen = [], set()
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != d + 3:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: expected {d} feature values, found {len(parts) - 3}"
                )
            video_id, tag, class_id = parts[:3]
            try:
                values = np.array([float(x) for x in parts[3:]])
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise MalformedFileError(f"{path}:{lineno}: non-finite feature value")
            if video_id in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate video_id {video_id!r}")
            seen.add(video_id)
            instances.append(VideoInstance(video_id, tag, class_id, values))
    if len(instances) != n:
        raise MalformedFileError(f"{path}: header declares n={n} but found {len(instances)} rows")
    return instances


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a desk-scale synthetic dataset.

    Every class gets a random unit-norm centroid; videos are centroid plus
    isotropic Gaussian noise.  Videos of a class are spread round-robin over
    ``dataset_tags`` so that cross-dataset retrieval can be exercised.
    """

    class_count: int
    videos_per_class: int
    feature_dim: int
    noise_scale: float
    vote_profile: tuple[VoteRecord, ...]
    seed: int = 0
    dataset_tags: tuple[str, ...] = ("synth",)

    def __post_init__(self):
        object.__setattr__(self, "vote_profile", tuple(self.vote_profile))
        object.__setattr__(self, "dataset_tags", tuple(self.dataset_tags))
        for name in ("class_count", "videos_per_class", "feature_dim"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise VerbspaceError(f"{name} must be a positive integer, got {value!r}")
        if not np.isfinite(self.noise_scale) or self.noise_scale < 0:
            raise VerbspaceError(f"noise_scale must be >= 0, got {self.noise_scale!r}")
        if len(self.vote_profile) != self.class_count:
            raise VerbspaceError(
                f"vote_profile has {len(self.vote_profile)} records for {self.class_count} classes"
            )
        if len({v.class_id for v in self.vote_profile}) != self.class_count:
            raise VerbspaceError("vote_profile class ids must be unique")
        if not self.dataset_tags:
            raise VerbspaceError("dataset_tags must not be empty")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SyntheticSpec":
        profile = tuple(
            VoteRecord(str(rec["class_id"]), rec["votes"], rec["annotator_count"])
            for rec in obj["vote_profile"]
        )
        return cls(
            class_count=obj.get("class_count", len(profile)),
            videos_per_class=obj["videos_per_class"],
            feature_dim=obj["feature_dim"],
            noise_scale=float(obj["noise_scale"]),
            vote_profile=profile,
            seed=int(obj.get("seed", 0)),
            dataset_tags=tuple(obj.get("dataset_tags", ("synth",))),
        )

    @classmethod
    def load(cls, path) -> "SyntheticSpec":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
            return cls.from_dict(obj)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise MalformedFileError(f"{path}: invalid synthetic spec ({exc!r})") from None

    def to_dict(self) -> dict:
        return {
            "class_count": self.class_count,
            "videos_per_class": self.videos_per_class,
            "feature_dim": self.feature_dim,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "dataset_tags": list(self.dataset_tags),
            "vote_profile": [
                {"class_id": v.class_id, "annotator_count": v.annotator_count,
                 "votes": dict(v.verb_counts)}
                for v in self.vote_profile
            ],
        }


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[VideoInstance], list[VoteRecord]]:
    if spec.feature_dim < spec.class_count:
        log.warning(
            "feature_dim %d < class_count %d: class centroids may nearly coincide",
            spec.feature_dim, spec.class_count,
        )
    rng = make_rng(spec.seed)
    instances = []
    for votes in spec.vote_profile:
        centroid = rng.standard_normal(spec.feature_dim)
        centroid /= np.linalg.norm(centroid)
        noise = rng.standard_normal((spec.videos_per_class, spec.feature_dim)) * spec.noise_scale
        for k in range(spec.videos_per_class):
            tag = spec.dataset_tags[k % len(spec.dataset_tags)]
            instances.append(
                VideoInstance(f"{votes.class_id}-{k:04d}", tag, votes.class_id, centroid + noise[k])
            )
    return instances, list(spec.vote_profile)


@dataclass(frozen=True)
class FoldAssignment:
    fold_count: int
    assignment: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.fold_count < 2:
            raise VerbspaceError(f"fold_count must be >= 2, got {self.fold_count}")
        bad = {vid: k for vid, k in self.assignment.items() if not 0 <= k < self.fold_count}
        if bad:
            raise VerbspaceError(f"fold indices out of range: {bad}")
        object.__setattr__(self, "assignment", dict(self.assignment))

    def fold(self, k: int) -> list[str]:
        return [vid for vid, f in self.assignment.items() if f == k]

    def split(self, k: int) -> tuple[list[str], list[str]]:
        """``(train_ids, test_ids)`` for held-out fold ``k``."""
        train = [vid for vid, f in self.assignment.items() if f != k]
        return train, self.fold(k)


def stratified_folds(instances: Sequence[VideoInstance], fold_count: int, seed: int) -> FoldAssignment:
    """Shuffle each class with ``seed`` and deal its videos round-robin over the folds.

    The dealing position carries over from one class to the next, which keeps
    the total fold sizes balanced as well.
    """
    if fold_count < 2:
        raise VerbspaceError(f"fold_count must be >= 2, got {fold_count}")
    _check_unique(instances)
    by_class: dict[str, list[str]] = defaultdict(list)
    for inst in instances:
        by_class[inst.class_id].append(inst.video_id)
    rng = make_rng(seed)
    assignment, cursor = {}, 0
    for class_id in sorted(by_class):
        ids = by_class[class_id]
        for pos in rng.permutation(len(ids)):
            assignment[ids[pos]] = cursor % fold_count
            cursor += 1
    # keep the caller's instance order in the mapping
    return FoldAssignment(fold_count, {inst.video_id: assignment[inst.video_id] for inst in instances})


def save_folds(folds: FoldAssignment, path) -> None:
    lines = [f"{vid} {k}\n" for vid, k in folds.assignment.items()]
    Path(path).write_text(f"# folds={folds.fold_count}\n" + "".join(lines), encoding="utf-8")


def load_folds(path) -> FoldAssignment:
    assignment, fold_count = {}, None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line.startswith("# folds="):
                fold_count = int(line.split("=", 1)[1])
                continue
            if not line or line.startswith("#"):
                continue
            try:
                vid, k = line.split()
                assignment[vid] = int(k)
            except ValueError:
                raise MalformedFileError(f"{path}:{lineno}: expected 'video_id fold_index'") from None
    if fold_count is None:
        fold_count = max(assignment.values(), default=0) + 1
    return FoldAssignment(fold_count, assignment)


def attach_labels(
    instances: Sequence[VideoInstance],
    votes: Sequence[VoteRecord] | Mapping[str, VoteRecord],
    vocab: VerbVocabulary,
    scheme: Scheme | str,
    ml_threshold: float = 0.5,
    ignore_unknown: bool = False,
) -> list[tuple[VideoInstance, LabelVector]]:
    """Pair every instance with its class-level label under ``scheme``."""
    if not isinstance(votes, Mapping):
        votes = {v.class_id: v for v in votes}
    cache: dict[str, LabelVector] = {}
    pairs = []
    for inst in instances:
        if inst.class_id not in cache:
            if inst.class_id not in votes:
                raise MissingVotesError(f"class {inst.class_id!r} has no vote record")
            cache[inst.class_id] = build_label(
                scheme, votes[inst.class_id], vocab,
                ml_threshold=ml_threshold, ignore_unknown=ignore_unknown,
            )
        pairs.append((inst, cache[inst.class_id]))
    return pairs
