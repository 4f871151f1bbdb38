"""Multi-output regression head mapping video features to verb scores.

A stack of affine layers with rectifier activations in between, topped by
a softmax (single-verb labels) or an element-wise sigmoid (multi-verb and
soft labels).  Training is plain mini-batch SGD with momentum, fully
determined by the config seed.

Model file layout::

    verbspace-model 1
    layer_dims=16,4
    activation=sigmoid
    vocab=<fingerprint or ->
    W0 4 16
    <4 rows of 16 values>
    b0 4
    <1 row of 4 values>
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .dataset import make_rng
from .errors import (
    DimensionMismatchError,
    MalformedFileError,
    NumericError,
    SchemeMismatchError,
    VerbspaceError,
    VocabularyMismatchError,
)
from .label_space import LabelVector, Scheme, VerbVocabulary

__all__ = [
    "EPS",
    "ModelParams",
    "TrainConfig",
    "init_params",
    "forward",
    "loss_softmax_ce",
    "loss_sigmoid_bce",
    "batch_loss",
    "grad",
    "loss_for_scheme",
    "train",
    "save_model",
    "load_model",
    "check_vocabulary",
    "predict",
]

log = logging.getLogger(__name__)

EPS = 1e-7
LOSSES = ("softmax_ce", "sigmoid_bce")
_ACTIVATION_FOR_LOSS = {"softmax_ce": "softmax", "sigmoid_bce": "sigmoid"}
_LOSS_FOR_SCHEME = {Scheme.SL: "softmax_ce", Scheme.ML: "sigmoid_bce", Scheme.SAML: "sigmoid_bce"}


@dataclass(eq=False)
class ModelParams:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "sigmoid"
    vocab_fingerprint: str | None = None

    def __post_init__(self):
        self.layer_dims = tuple(int(x) for x in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise VerbspaceError(f"bad layer_dims {self.layer_dims}")
        if self.output_activation not in ("softmax", "sigmoid"):
            raise VerbspaceError(f"unknown output activation {self.output_activation!r}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise DimensionMismatchError("one weight matrix and bias per layer expected")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k + 1], self.layer_dims[k])
            if w.shape != shape or b.shape != shape[:1]:
                raise DimensionMismatchError(
                    f"layer {k}: expected W{shape} b{shape[:1]}, got W{w.shape} b{b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"layer {k}: non-finite parameter")

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.layer_dims, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.output_activation,
                           self.vocab_fingerprint)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.layer_dims == other.layer_dims
            and self.output_activation == other.output_activation
            and self.vocab_fingerprint == other.vocab_fingerprint
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    loss: str | None = None  # derived from the label scheme when None
    hidden: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 1:
            raise VerbspaceError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise VerbspaceError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise VerbspaceError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise VerbspaceError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.loss is not None and self.loss not in LOSSES:
            raise VerbspaceError(f"unknown loss {self.loss!r}")
        if any(h < 1 for h in self.hidden):
            raise VerbspaceError(f"hidden layer sizes must be positive, got {self.hidden}")


def init_params(layer_dims: Sequence[int], output_activation: str = "sigmoid", seed: int = 0,
                rng: np.random.Generator | None = None) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = make_rng(seed) if rng is None else rng
    dims = tuple(int(x) for x in layer_dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(dims, weights, biases, output_activation)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward_all(params: ModelParams, x: np.ndarray):
    """Return (pre-activations, activations) of every layer for a 2-D batch."""
    pre, acts = [], [x]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        with np.errstate(over="ignore", invalid="ignore"):
            z = acts[-1] @ w.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation in layer {k}")
        pre.append(z)
        if k < last:
            acts.append(np.maximum(z, 0.0))
        elif params.output_activation == "softmax":
            acts.append(_softmax(z))
        else:
            acts.append(expit(z))
        if not np.all(np.isfinite(acts[-1])):
            raise NumericError(f"non-finite activation in layer {k}")
    return pre, acts


def forward(params: ModelParams, features) -> np.ndarray:
    """Predicted verb scores for one feature vector ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] != params.layer_dims[0]:
        raise DimensionMismatchError(
            f"features of width {x2.shape[-1]} do not match model input {params.layer_dims[0]}"
        )
    out = _forward_all(params, x2)[1][-1]
    return out[0] if single else out


def predict(params: ModelParams, features) -> LabelVector:
    return LabelVector(Scheme.PREDICTED, forward(params, np.asarray(features, dtype=np.float64).ravel()))


def _pair(predicted, target):
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise DimensionMismatchError(f"prediction shape {p.shape} != target shape {t.shape}")
    return p, t


def loss_softmax_ce(predicted, target) -> float:
    """Cross entropy ``-sum_j t_j ln p_j`` with p clamped to [EPS, 1-EPS]; batch mean."""
    p, t = _pair(predicted, target)
    q = np.clip(p, EPS, 1.0 - EPS)
    return float(np.mean(-(t * np.log(q)).sum(axis=1)))


def loss_sigmoid_bce(predicted, target) -> float:
    """Binary cross entropy averaged over verbs (and over the batch); soft targets allowed."""
    p, t = _pair(predicted, target)
    q = np.clip(p, EPS, 1.0 - EPS)
    per = -(t * np.log(q) + (1.0 - t) * np.log1p(-q))
    return float(np.mean(per.mean(axis=1)))


def batch_loss(predicted, target, loss: str) -> float:
    if loss == "softmax_ce":
        return loss_softmax_ce(predicted, target)
    if loss == "sigmoid_bce":
        return loss_sigmoid_bce(predicted, target)
    raise VerbspaceError(f"unknown loss {loss!r}")


def loss_for_scheme(scheme: Scheme | str) -> str:
    try:
        return _LOSS_FOR_SCHEME[Scheme(scheme)]
    except KeyError:
        raise SchemeMismatchError(f"no training loss for scheme {scheme}") from None


def _check_targets(t: np.ndarray, loss: str) -> None:
    if np.any((t < 0) | (t > 1)):
        raise SchemeMismatchError("targets must lie in [0, 1]")
    if loss == "softmax_ce":
        one_hot = np.all((t == 0) | (t == 1), axis=1) & (t.sum(axis=1) == 1)
        if not one_hot.all():
            raise SchemeMismatchError("softmax_ce needs one-hot (SL) targets")


def _target_array(targets) -> tuple[np.ndarray, set]:
    rows = list(targets) if not isinstance(targets, np.ndarray) else None
    schemes = {r.scheme for r in rows if isinstance(r, LabelVector)} if rows else set()
    return np.atleast_2d(np.asarray(targets if rows is None else [np.asarray(r) for r in rows],
                                    dtype=np.float64)), schemes


def grad(params: ModelParams, batch, loss: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradient of the mean batch loss, as ``(weight_grads, bias_grads)``.

    ``batch`` is ``(features, targets)``; targets may be an array or a
    sequence of :class:`LabelVector`.  The gradient is that of the clamped
    loss, so components that sit in the clamped region contribute nothing.
    """
    return _loss_and_grad(params, batch, loss)[1:]


def _loss_and_grad(params: ModelParams, batch, loss: str):
    features, targets = batch
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t, schemes = _target_array(targets)
    if x.shape[0] == 0:
        raise VerbspaceError("empty batch")
    if x.shape[0] != t.shape[0]:
        raise DimensionMismatchError(f"{x.shape[0]} feature rows but {t.shape[0]} targets")
    if x.shape[1] != params.layer_dims[0] or t.shape[1] != params.output_dim:
        raise DimensionMismatchError("batch does not match model dimensions")
    if loss not in LOSSES:
        raise VerbspaceError(f"unknown loss {loss!r}")
    if _ACTIVATION_FOR_LOSS[loss] != params.output_activation:
        raise SchemeMismatchError(f"{loss} needs a {_ACTIVATION_FOR_LOSS[loss]} output layer")
    for s in schemes:
        if s is not Scheme.PREDICTED and loss_for_scheme(s) != loss:
            raise SchemeMismatchError(f"{s.value} targets cannot be trained with {loss}")
    _check_targets(t, loss)

    pre, acts = _forward_all(params, x)
    p = acts[-1]
    n, d_out = p.shape
    inside = (p > EPS) & (p < 1.0 - EPS)
    if loss == "softmax_ce":
        value = loss_softmax_ce(p, t)
        tm = t * inside
        delta = p * tm.sum(axis=1, keepdims=True) - tm
    else:
        value = loss_sigmoid_bce(p, t)
        delta = (p - t) * inside / d_out
    delta /= n

    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ params.weights[k]) * (pre[k - 1] > 0)
    return value, gw, gb


def _momentum_step(params, gw, gb, velocity_w, velocity_b, lr, mu):
    for k in range(len(params.weights)):
        velocity_w[k] = mu * velocity_w[k] - lr * gw[k]
        velocity_b[k] = mu * velocity_b[k] - lr * gb[k]
        params.weights[k] += velocity_w[k]
        params.biases[k] += velocity_b[k]


def train(
    pairs: Sequence[tuple[object, LabelVector]],
    config: TrainConfig,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> ModelParams:
    """Fit a model on ``(instance, label)`` pairs.

    ``instance`` is anything with a ``features`` attribute or a plain feature
    vector.  ``on_epoch(epoch, mean_loss, seconds)`` is called after every
    epoch; the same information is logged at INFO level.
    """
    if not pairs:
        raise VerbspaceError("no training data")
    schemes = {lab.scheme for _, lab in pairs}
    if len(schemes) != 1:
        raise SchemeMismatchError(f"mixed label schemes {sorted(s.value for s in schemes)}")
    scheme = schemes.pop()
    loss = config.loss or loss_for_scheme(scheme)
    if loss_for_scheme(scheme) != loss:
        raise SchemeMismatchError(f"{scheme.value} labels cannot be trained with {loss}")

    x = np.stack([np.asarray(getattr(item, "features", item), dtype=np.float64) for item, _ in pairs])
    t = np.stack([lab.values for _, lab in pairs])
    _check_targets(t, loss)
    dims = (x.shape[1], *config.hidden, t.shape[1])
    params = init_params(dims, _ACTIVATION_FOR_LOSS[loss], rng=make_rng(config.seed, 0))
    shuffle_rng = make_rng(config.seed, 1)
    velocity_w = [np.zeros_like(w) for w in params.weights]
    velocity_b = [np.zeros_like(b) for b in params.biases]
    lr, mu = config.learning_rate, config.momentum

    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = shuffle_rng.permutation(len(x))
        total = 0.0
        for lo in range(0, len(x), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            try:
                value, gw, gb = _loss_and_grad(params, (x[idx], t[idx]), loss)
            except NumericError as exc:
                raise NumericError(f"training diverged in epoch {epoch}: {exc}") from None
            if not np.isfinite(value):
                raise NumericError(f"training diverged in epoch {epoch}: loss is {value}")
            total += value * len(idx)
            if lr == 0:
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                _momentum_step(params, gw, gb, velocity_w, velocity_b, lr, mu)
        mean_loss = total / len(x)
        elapsed = time.perf_counter() - start
        log.info("epoch %d loss %.6f time %.4fs", epoch, mean_loss, elapsed)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, elapsed)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError(f"training diverged: layer {k} has non-finite parameters")
    return params


def check_vocabulary(params: ModelParams, vocab: VerbVocabulary) -> None:
    """Raise if a model cannot be used with ``vocab``."""
    if params.output_dim != len(vocab):
        raise DimensionMismatchError(
            f"model predicts {params.output_dim} verbs but the vocabulary has {len(vocab)}"
        )
    if params.vocab_fingerprint is not None and params.vocab_fingerprint != vocab.fingerprint:
        raise VocabularyMismatchError("model was trained against a different vocabulary")


def _fmt_row(row) -> str:
    return " ".join(repr(float(x)) for x in row)


def save_model(params: ModelParams, path) -> None:
    lines = [
        "verbspace-model 1",
        "layer_dims=" + ",".join(str(d) for d in params.layer_dims),
        f"activation={params.output_activation}",
        f"vocab={params.vocab_fingerprint or '-'}",
    ]
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"W{k} {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt_row(r) for r in w)
        lines.append(f"b{k} {b.shape[0]}")
        lines.append(_fmt_row(b))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MalformedFileError(f"{path}: file ends early (line {pos + 1})")
        pos += 1
        return lines[pos - 1]

    def key_value(expected):
        key, sep, value = take().partition("=")
        if key != expected or not sep:
            raise MalformedFileError(f"{path}:{pos}: expected '{expected}=...'")
        return value

    def matrix(tag, rows, cols):
        out = np.empty((rows, cols))
        for r in range(rows):
            try:
                vals = [float(v) for v in take().split()]
            except ValueError:
                raise MalformedFileError(f"{path}:{pos}: non-numeric value") from None
            if len(vals) != cols:
                raise MalformedFileError(f"{path}:{pos}: {tag} row has {len(vals)} values, expected {cols}")
            out[r] = vals
        return out

    if take() != "verbspace-model 1":
        raise MalformedFileError(f"{path}: not a verbspace model file")
    try:
        dims = tuple(int(v) for v in key_value("layer_dims").split(","))
    except ValueError:
        raise MalformedFileError(f"{path}:{pos}: bad layer_dims") from None
    activation = key_value("activation")
    fingerprint = key_value("vocab")
    weights, biases = [], []
    for k in range(len(dims) - 1):
        if take().split() != [f"W{k}", str(dims[k + 1]), str(dims[k])]:
            raise MalformedFileError(f"{path}:{pos}: weight header disagrees with layer_dims")
        weights.append(matrix(f"W{k}", dims[k + 1], dims[k]))
        if take().split() != [f"b{k}", str(dims[k + 1])]:
            raise MalformedFileError(f"{path}:{pos}: bias header disagrees with layer_dims")
        biases.append(matrix(f"b{k}", 1, dims[k + 1])[0])
    if any(line.strip() for line in lines[pos:]):
        raise MalformedFileError(f"{path}:{pos + 1}: trailing content")
    try:
        return ModelParams(dims, weights, biases, activation,
                           None if fingerprint == "-" else fingerprint)
    except VerbspaceError as exc:
        raise MalformedFileError(f"{path}: {exc}") from None
