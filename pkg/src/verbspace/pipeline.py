"""Experiment orchestration behind the ``verbspace`` command line.

Every ``cmd_*`` function takes an :class:`ExperimentConfig`, writes its
outputs below ``config.out`` and returns what it wrote.  All randomness is
derived from ``config.seed`` through :func:`stage_seed`, so reruns with the
same inputs produce byte-identical files (wall-clock timings go to a separate
``timings.json`` that is excluded from that guarantee).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    SyntheticSpec,
    attach_labels,
    feature_matrix,
    generate_synthetic,
    ingest_features,
    load_folds,
    save_folds,
    stratified_folds,
    write_features,
)
from .errors import VerbspaceError
from .evaluation import (
    QueryVector,
    enumerate_queries,
    overlap_report,
    rank_verbs,
    reports_to_json,
    reports_to_tsv,
    t2v_map,
    v2t_map,
    v2v_retrieve,
)
from .label_space import (
    Scheme,
    VerbVocabulary,
    load_vocabulary,
    load_votes,
    save_labels,
    save_vocabulary,
    save_votes,
)
from .regressor import TrainConfig, check_vocabulary, forward, load_model, save_model, train

__all__ = [
    "OUT_ENV",
    "ExperimentConfig",
    "StageError",
    "stage_seed",
    "load_config",
    "cmd_synth",
    "cmd_build_labels",
    "cmd_split",
    "cmd_train",
    "cmd_eval",
    "cmd_retrieve",
    "cmd_run",
]

log = logging.getLogger(__name__)

OUT_ENV = "VERBSPACE_OUT"
_LIST_FIELDS = {"schemes": str, "alphas": float, "hidden": int}
_PATH_FIELDS = ("vocab", "votes", "features", "folds_file", "out")


class StageError(VerbspaceError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    vocab: str | None = None
    votes: str | None = None
    features: str | None = None
    folds_file: str | None = None
    out: str | None = None
    schemes: tuple[str, ...] = ("SL", "ML", "SAML")
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.05
    momentum: float = 0.9
    hidden: tuple[int, ...] = ()
    seed: int = 0
    alphas: tuple[float, ...] = (0.3, 0.5)
    fold_count: int = 5
    n_min: int = 1
    n_max: int = 5
    t2v_alpha: float = 0.5
    ml_threshold: float = 0.5
    ignore_unknown: bool = False

    def __post_init__(self):
        allowed = (Scheme.SL.value, Scheme.ML.value, Scheme.SAML.value)
        self.schemes = tuple(str(getattr(s, "value", s)) for s in self.schemes)
        if not self.schemes or not set(self.schemes) <= set(allowed):
            raise VerbspaceError("schemes must be a non-empty subset of SL, ML, SAML")
        self.alphas = tuple(float(a) for a in self.alphas)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not all(0 < a <= 1 for a in (*self.alphas, self.t2v_alpha)):
            raise VerbspaceError(f"alphas must lie in (0, 1]: {self.alphas}")
        if self.fold_count < 2:
            raise VerbspaceError(f"fold_count must be >= 2, got {self.fold_count}")
        if not 1 <= self.n_min <= self.n_max:
            raise VerbspaceError(f"need 1 <= n_min <= n_max, got {self.n_min}..{self.n_max}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "verbspace-out")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, momentum=self.momentum,
                           seed=seed, hidden=self.hidden)

    def snapshot(self) -> dict:
        # the output location is not an input; leaving it out keeps manifests comparable
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items() if k != "out"}

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise VerbspaceError(f"missing required setting '{name}'")
            if not Path(value).is_file():
                raise VerbspaceError(f"{name} file not found: {value}")


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise VerbspaceError(f"unknown config key {name!r}")
    if name in _LIST_FIELDS:
        return tuple(_LIST_FIELDS[name](x) for x in raw.split(",") if x.strip())
    if name == "ignore_unknown":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise VerbspaceError(f"{name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    default = getattr(ExperimentConfig, name, None)
    if isinstance(default, bool):
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines; relative paths resolve against the file's directory."""
    base = Path(path).parent
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise VerbspaceError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().replace("-", "_")
            try:
                values[key] = _coerce(key, raw.strip())
            except ValueError as exc:
                raise VerbspaceError(f"{path}:{lineno}: {exc}") from None
            if key in _PATH_FIELDS and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    return values


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Defaults, then the config file, then non-None ``overrides``."""
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def stage_seed(seed: int, stage: str, *parts) -> int:
    """Derive an independent 32-bit seed for a named stage (and e.g. scheme/fold)."""
    key = [int(seed), zlib.crc32(stage.encode())]
    key += [zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Stage:
    """Context manager re-raising any failure as :class:`StageError`."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, (VerbspaceError, OSError)):
            raise StageError(self.name, exc) from exc
        return False


# ---------------------------------------------------------------------------
# synth


def cmd_synth(spec_path, out_dir=None) -> dict[str, Path]:
    """Write features, votes, vocabulary and a ready-to-run config from a synthetic spec.

    The spec is JSON with the :class:`SyntheticSpec` fields plus an optional
    ``vocabulary`` list (default: all voted verbs in first-seen order).
    """
    with _Stage("synth"):
        spec = SyntheticSpec.load(spec_path)
        with open(spec_path, encoding="utf-8") as fh:
            verbs = json.load(fh).get("vocabulary")
        if verbs is None:
            verbs = list(dict.fromkeys(v for rec in spec.vote_profile for v in rec.verb_counts))
        vocab = VerbVocabulary(tuple(verbs))
        for rec in spec.vote_profile:
            rec.counts(vocab)  # unknown verbs fail here
        instances, votes = generate_synthetic(spec)
        out = Path(out_dir or os.environ.get(OUT_ENV) or "verbspace-out")
        out.mkdir(parents=True, exist_ok=True)
        paths = {"features": out / "features.tsv", "votes": out / "votes.txt",
                 "vocab": out / "vocab.txt", "config": out / "experiment.cfg"}
        write_features(instances, paths["features"])
        save_votes(votes, paths["votes"])
        save_vocabulary(vocab, paths["vocab"])
        _write(paths["config"], "vocab = vocab.txt\nvotes = votes.txt\nfeatures = features.tsv\n"
                                f"seed = {spec.seed}\n")
    return paths


# ---------------------------------------------------------------------------
# shared loading


@dataclass
class _Inputs:
    vocab: VerbVocabulary
    votes: dict
    instances: list
    labels: dict = field(default_factory=dict)  # scheme -> class_id -> LabelVector

    def label_matrix(self, scheme: str, instances) -> list:
        table = self.labels[scheme]
        return [table[inst.class_id] for inst in instances]


def _load_inputs(config: ExperimentConfig, schemes, need_features=True) -> _Inputs:
    required = ("vocab", "votes", "features") if need_features else ("vocab", "votes")
    with _Stage("load"):
        config.require(*required)
        vocab = load_vocabulary(config.vocab)
        votes = {rec.class_id: rec for rec in load_votes(config.votes)}
        instances = ingest_features(config.features) if need_features else []
    inputs = _Inputs(vocab, votes, instances)
    with _Stage("labels"):
        classes = sorted({i.class_id for i in instances}) if need_features else list(votes)
        for scheme in schemes:
            pairs = attach_labels(
                [_ClassProbe(c) for c in classes], votes, vocab, scheme,
                ml_threshold=config.ml_threshold, ignore_unknown=config.ignore_unknown,
            )
            inputs.labels[scheme] = {probe.class_id: lab for probe, lab in pairs}
    return inputs


@dataclass(frozen=True)
class _ClassProbe:
    class_id: str


def _select(instances, ids):
    wanted = set(ids)
    return [inst for inst in instances if inst.video_id in wanted]


# ---------------------------------------------------------------------------
# build-labels / split / train / eval


def cmd_build_labels(config: ExperimentConfig) -> dict[str, Path]:
    """One label file per scheme in ``config.schemes``, one row per voted class."""
    inputs = _load_inputs(config, config.schemes, need_features=False)
    out = config.out_dir
    paths = {}
    with _Stage("write"):
        for scheme in config.schemes:
            path = out / f"labels_{scheme}.tsv"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_labels(inputs.labels[scheme], inputs.vocab, path)
            paths[scheme] = path
    return paths


def _folds(config: ExperimentConfig, instances):
    if config.folds_file:
        folds = load_folds(config.folds_file)
        missing = {i.video_id for i in instances} - folds.assignment.keys()
        if missing:
            raise VerbspaceError(f"fold file lacks {len(missing)} videos, e.g. {sorted(missing)[0]}")
        return folds
    return stratified_folds(instances, config.fold_count, stage_seed(config.seed, "folds"))


def cmd_split(config: ExperimentConfig) -> Path:
    with _Stage("load"):
        config.require("features")
        instances = ingest_features(config.features)
    with _Stage("split"):
        folds = stratified_folds(instances, config.fold_count, stage_seed(config.seed, "folds"))
        path = config.out_dir / "folds.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_folds(folds, path)
    return path


def _train_log_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", encoding="utf-8")

    def on_epoch(epoch, loss, seconds):
        fh.write(f"{epoch}\t{loss!r}\t{seconds:.6f}\n")

    return fh, on_epoch


def _fit(inputs: _Inputs, config: ExperimentConfig, scheme: str, train_set, seed: int, log_path: Path):
    pairs = list(zip(train_set, inputs.label_matrix(scheme, train_set)))
    fh, on_epoch = _train_log_writer(log_path)
    try:
        params = train(pairs, config.train_config(seed), on_epoch=on_epoch)
    finally:
        fh.close()
    params.vocab_fingerprint = inputs.vocab.fingerprint
    return params


def cmd_train(config: ExperimentConfig, scheme: str | None = None, fold: int | None = None) -> Path:
    """Train one model; with ``fold`` given, the videos of that fold are held out."""
    scheme = Scheme(scheme or config.schemes[0]).value
    inputs = _load_inputs(config, [scheme])
    instances = inputs.instances
    tag = scheme
    if fold is not None:
        with _Stage("split"):
            train_ids, _ = _folds(config, instances).split(fold)
            instances = _select(instances, train_ids)
        tag = f"{scheme}_fold{fold}"
    with _Stage("train"):
        params = _fit(inputs, config, scheme, instances, stage_seed(config.seed, "train", scheme, fold),
                      config.out_dir / f"train_{tag}.log")
        path = config.out_dir / f"model_{tag}.txt"
        save_model(params, path)
    return path


def _evaluate(inputs: _Inputs, config: ExperimentConfig, scheme: str, test_set, predicted) -> list:
    ids = [i.video_id for i in test_set]
    own = inputs.label_matrix(scheme, test_set)
    sl = inputs.label_matrix("SL", test_set)
    saml = inputs.label_matrix("SAML", test_set)
    reports = [overlap_report(own, predicted, a, scheme=scheme, ids=ids) for a in config.alphas]
    reports.append(v2t_map(sl, predicted, 1.0, relevance_scheme="SL", scheme=scheme, ids=ids))
    for a in sorted(config.alphas, reverse=True):
        reports.append(v2t_map(saml, predicted, a, relevance_scheme="SAML", scheme=scheme, ids=ids))
    for n in range(config.n_min, config.n_max + 1):
        queries = enumerate_queries(saml, n, config.t2v_alpha)
        if queries:
            reports.append(t2v_map(queries, predicted, saml, config.t2v_alpha, scheme=scheme,
                                   vocab=inputs.vocab))
    return reports


def _metric_key(report) -> str:
    if report.metric == "accuracy":
        return f"accuracy@{report.alpha:g}"
    if report.metric == "v2t_map":
        return f"v2t:{report.relevance}"
    return f"t2v:n={report.n}"


def _eval_schemes(scheme: str) -> list[str]:
    return list(dict.fromkeys([scheme, "SL", "SAML"]))


def cmd_eval(config: ExperimentConfig, model_path, scheme: str | None = None,
             fold: int | None = None) -> dict[str, Path]:
    """Evaluate a trained model on all videos, or on held-out ``fold`` only."""
    scheme = Scheme(scheme or config.schemes[0]).value
    inputs = _load_inputs(config, _eval_schemes(scheme))
    with _Stage("eval"):
        params = load_model(model_path)
        check_vocabulary(params, inputs.vocab)
        test_set = inputs.instances
        if fold is not None:
            _, test_ids = _folds(config, test_set).split(fold)
            test_set = _select(test_set, test_ids)
        predicted = forward(params, feature_matrix(test_set))
        reports = _evaluate(inputs, config, scheme, test_set, predicted)
        out = config.out_dir
        suffix = scheme if fold is None else f"{scheme}_fold{fold}"
        return {
            "json": _write(out / f"eval_{suffix}.json", reports_to_json(reports, scheme=scheme)),
            "tsv": _write(out / f"eval_{suffix}.tsv", reports_to_tsv(reports)),
        }


# ---------------------------------------------------------------------------
# retrieve


def cmd_retrieve(model_path, mode: str, query: str, feature_paths, vocab_path,
                 out_path=None, cross_dataset: bool = False) -> Path:
    """Rank verbs (``v2t``) or videos (``t2v``, ``v2v``) for one query.

    ``query`` is a video id for v2t/v2v and comma-separated verb names for
    t2v.  In v2v mode the query video itself is never returned, and with
    ``cross_dataset`` no video sharing its dataset tag is either.
    """
    if mode not in ("v2t", "t2v", "v2v"):
        raise VerbspaceError(f"unknown retrieval mode {mode!r}")
    with _Stage("load"):
        vocab = load_vocabulary(vocab_path)
        params = load_model(model_path)
        check_vocabulary(params, vocab)
        if isinstance(feature_paths, (str, Path)):
            feature_paths = [feature_paths]
        corpus = [inst for p in feature_paths for inst in ingest_features(p)]
    with _Stage("retrieve"):
        if len({i.video_id for i in corpus}) != len(corpus):
            raise VerbspaceError("video ids repeat across corpus files")
        predicted = forward(params, feature_matrix(corpus))
        by_id = {inst.video_id: k for k, inst in enumerate(corpus)}
        if mode == "t2v":
            verbs = [v.strip() for v in query.split(",") if v.strip()]
            if not verbs:
                raise VerbspaceError("empty t2v query")
            u = QueryVector.from_verbs([vocab.index(v) for v in verbs], len(vocab))
            ranked = v2v_retrieve(u, predicted, [i.video_id for i in corpus], query_id=query)
        else:
            if query not in by_id:
                raise VerbspaceError(f"query video {query!r} not found in the corpus")
            q = by_id[query]
            if mode == "v2t":
                ranked = rank_verbs(predicted[q], vocab, query_id=query)
            else:
                rest = [k for k in range(len(corpus)) if k != q]
                if not rest:
                    raise VerbspaceError("corpus holds only the query video")
                ranked = v2v_retrieve(
                    predicted[q], predicted[rest], [corpus[k].video_id for k in rest],
                    [corpus[k].dataset_tag for k in rest],
                    exclude_tag=corpus[q].dataset_tag if cross_dataset else None, query_id=query,
                )
        out = Path(out_path or Path(os.environ.get(OUT_ENV) or "verbspace-out") / f"retrieve_{mode}.tsv")
        return _write(out, ranked.to_tsv())


# ---------------------------------------------------------------------------
# run


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.3f}"


def _text_report(config: ExperimentConfig, aggregate: dict) -> str:
    schemes = list(config.schemes)
    width = 2 + max(len("Single-Verb only"), *(len(f"alpha>={a:g} ranking") for a in config.alphas))
    head = "".ljust(width) + "".join(s.rjust(8) for s in schemes) + "\n"
    lines = ["Recognition accuracy (overlap of top-|V| verbs)\n", head]
    for a in config.alphas:
        key = f"accuracy@{a:g}"
        lines.append(f"alpha>={a:g}".ljust(width)
                     + "".join(_fmt(aggregate[s].get(key)).rjust(8) for s in schemes) + "\n")
    lines += ["\nVideo-to-text retrieval (mAP)\n", head]
    rows = [("Single-Verb only", "v2t:SL")]
    rows += [(f"alpha>={a:g} ranking", f"v2t:SAML>={a:g}") for a in sorted(config.alphas, reverse=True)]
    rows.append(("Avg. mAP", "v2t:avg"))
    for name, key in rows:
        lines.append(name.ljust(width) + "".join(_fmt(aggregate[s].get(key)).rjust(8) for s in schemes) + "\n")
    lines += [f"\nText-to-video retrieval (mAP, SAML>={config.t2v_alpha:g} relevance)\n", head]
    for n in range(config.n_min, config.n_max + 1):
        key = f"t2v:n={n}"
        lines.append(f"n={n}".ljust(width) + "".join(_fmt(aggregate[s].get(key)).rjust(8) for s in schemes) + "\n")
    return "".join(lines)


def cmd_run(config: ExperimentConfig) -> dict:
    """Cross-validated train + evaluate for every scheme; returns the manifest.

    Writes ``manifest.json``, ``report.txt``, ``report.json``, ``report.tsv``,
    ``t2v_curve.tsv`` and ``timings.json`` to ``config.out``, and a model and
    training log per fold under ``fold<k>/``.  While running, a ``STALE``
    marker sits in the output directory; it stays behind (naming the failed
    stage) if the run aborts.
    """
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "STALE"
    stale.write_text("running\n", encoding="utf-8")
    started = time.time()
    try:
        manifest = _run(config, out)
    except StageError as exc:
        stale.write_text(f"failed in stage {exc.stage}: {exc.cause}\n", encoding="utf-8")
        raise
    _write(out / "timings.json", json.dumps(
        {"started": started, "finished": time.time(), "seconds": time.time() - started}, indent=2) + "\n")
    stale.unlink()
    return manifest


def _run(config: ExperimentConfig, out: Path) -> dict:
    schemes = list(dict.fromkeys([*config.schemes, "SL", "SAML"]))
    inputs = _load_inputs(config, schemes)
    with _Stage("split"):
        folds = _folds(config, inputs.instances)
    fold_entries, all_reports = [], []
    per_fold_metrics: dict[str, dict[str, list]] = {s: defaultdict(list) for s in config.schemes}
    for k in range(folds.fold_count):
        train_ids, test_ids = folds.split(k)
        if set(train_ids) & set(test_ids):
            raise StageError("split", VerbspaceError(f"fold {k}: train and test overlap"))
        train_set = _select(inputs.instances, train_ids)
        test_set = _select(inputs.instances, test_ids)
        entry = {
            "fold": k,
            "train_count": len(train_set),
            "test_count": len(test_set),
            "train_test_disjoint": True,
            "test_ids_sha256": hashlib.sha256("\n".join(sorted(test_ids)).encode()).hexdigest(),
            "metrics": {},
        }
        for scheme in config.schemes:
            with _Stage(f"train fold {k} {scheme}"):
                params = _fit(inputs, config, scheme, train_set, stage_seed(config.seed, "train", scheme, k),
                              out / f"fold{k}" / f"train_{scheme}.log")
                save_model(params, out / f"fold{k}" / f"model_{scheme}.txt")
            with _Stage(f"eval fold {k} {scheme}"):
                predicted = forward(params, feature_matrix(test_set))
                reports = _evaluate(inputs, config, scheme, test_set, predicted)
            metrics = {}
            for r in reports:
                metrics[_metric_key(r)] = r.aggregate
                per_fold_metrics[scheme][_metric_key(r)].append(r.aggregate)
                all_reports.append((k, r))
            entry["metrics"][scheme] = metrics
        fold_entries.append(entry)

    aggregate = {}
    for scheme in config.schemes:
        agg = {key: float(np.mean(vals)) for key, vals in per_fold_metrics[scheme].items()}
        v2t_rows = [agg[key] for key in agg if key.startswith("v2t:")]
        if v2t_rows:
            agg["v2t:avg"] = float(np.mean(v2t_rows))
        aggregate[scheme] = dict(sorted(agg.items()))

    with _Stage("write"):
        manifest = {
            "tool": "verbspace",
            "tool_version": __version__,
            "seed": config.seed,
            "config": config.snapshot(),
            "inputs": {name: _sha256(getattr(config, name)) for name in ("vocab", "votes", "features")},
            "fold_count": folds.fold_count,
            "folds": fold_entries,
            "aggregate": aggregate,
        }
        _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        _write(out / "report.txt", _text_report(config, aggregate))
        _write(out / "report.json", json.dumps(
            {"aggregate": aggregate,
             "folds": [{"fold": k, **r.to_dict()} for k, r in all_reports]},
            indent=2, sort_keys=True) + "\n")
        tsv = []
        for k, r in all_reports:
            body = reports_to_tsv([r]).splitlines(keepends=True)[1:]
            tsv += [f"{k}\t{line}" for line in body]
        _write(out / "report.tsv", "fold\tmetric\tscheme\trelevance\talpha\tn\tquery_id\tvalue\n" + "".join(tsv))
        curve = ["scheme\tn\tmap\n"]
        for scheme in config.schemes:
            for n in range(config.n_min, config.n_max + 1):
                value = aggregate[scheme].get(f"t2v:n={n}")
                if value is not None:
                    curve.append(f"{scheme}\t{n}\t{value!r}\n")
        _write(out / "t2v_curve.tsv", "".join(curve))
    return manifest
