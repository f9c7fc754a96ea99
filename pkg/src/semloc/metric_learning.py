"""Normalized linear embedding trained with a triplet hinge loss.

A raw descriptor ``x`` is embedded as ``e = W x / ||W x||``. For a
triplet of embeddings the loss is::

    L = max(0, ||e_a - e_p||^2 - ||e_a - e_n||^2 + margin)

and ``W`` is fitted by plain mini-batch gradient descent. The gradient
is propagated through the normalization: for ``v = W x`` and upstream
gradient ``g = dL/de``, ``dL/dv = (g - e (e . g)) / ||v||`` and
``dL/dW = dL/dv x^T``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateNormError, FormatError, NumericError
from .geo import Triplet

logger = logging.getLogger(__name__)

DEFAULT_D_OUT = 64
DEFAULT_MARGIN = 0.2
DEFAULT_NORM_EPSILON = 1e-12

MODEL_HEADER = "semloc-embedding-model"
MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class EmbeddingModel:
    W: NDArray[np.float64]
    margin: float = DEFAULT_MARGIN
    norm_epsilon: float = DEFAULT_NORM_EPSILON

    def __post_init__(self) -> None:
        W = np.array(self.W, dtype=np.float64, order="C")
        if W.ndim != 2 or W.shape[0] < 1:
            raise ValueError(f"W must be a non-empty matrix, got shape {W.shape}")
        if W.shape[0] > W.shape[1]:
            raise ValueError(f"d_out ({W.shape[0]}) must not exceed d_in ({W.shape[1]})")
        if not np.all(np.isfinite(W)):
            raise ValueError("W contains non-finite entries")
        if not self.margin > 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if not self.norm_epsilon > 0:
            raise ValueError(f"norm_epsilon must be > 0, got {self.norm_epsilon}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "margin", float(self.margin))
        object.__setattr__(self, "norm_epsilon", float(self.norm_epsilon))

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingModel):
            return NotImplemented
        return (self.margin == other.margin and self.norm_epsilon == other.norm_epsilon
                and self.W.shape == other.W.shape and bool(np.array_equal(self.W, other.W)))

    __hash__ = None


def identity_model(dim: int, margin: float = DEFAULT_MARGIN) -> EmbeddingModel:
    """Model that only L2-normalizes raw descriptors."""
    return EmbeddingModel(np.eye(dim), margin)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    init_scale: float = 1.0
    d_out: int = DEFAULT_D_OUT
    norm_epsilon: float = DEFAULT_NORM_EPSILON

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.init_scale > 0:
            raise ValueError(f"init_scale must be > 0, got {self.init_scale}")
        if self.d_out < 1:
            raise ValueError(f"d_out must be >= 1, got {self.d_out}")


@dataclass
class TrainLog:
    mean_loss: list[float] = field(default_factory=list)
    active_fraction: list[float] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# forward / backward


def _project(W: NDArray, x: NDArray, eps: float) -> tuple[NDArray, float]:
    v = W @ x
    with np.errstate(over="ignore", invalid="ignore"):
        norm = math.sqrt(float(v @ v))
    if not math.isfinite(norm):
        raise NumericError("projection norm is not finite; weights have diverged")
    if norm < eps:
        raise DegenerateNormError(f"||W x|| = {norm:.3g} is below norm_epsilon {eps:.3g}")
    return v / norm, norm


def _check_input(model: EmbeddingModel, x) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d_in,):
        raise ValueError(f"descriptor has shape {x.shape}, model expects ({model.d_in},)")
    return x


def embed(model: EmbeddingModel, x) -> NDArray[np.float64]:
    """Project and L2-normalize one raw descriptor."""
    e, _ = _project(model.W, _check_input(model, x), model.norm_epsilon)
    return e


def embed_many(model: EmbeddingModel, X) -> NDArray[np.float64]:
    """Row-wise :func:`embed`; rows are processed independently."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2D descriptor matrix, got shape {X.shape}")
    return np.stack([embed(model, x) for x in X]) if len(X) else np.empty((0, model.d_out))


def triplet_loss(e_a, e_p, e_n, margin: float) -> float:
    e_a, e_p, e_n = (np.asarray(e, dtype=np.float64) for e in (e_a, e_p, e_n))
    if not (e_a.shape == e_p.shape == e_n.shape):
        raise ValueError(f"dimension mismatch: {e_a.shape}, {e_p.shape}, {e_n.shape}")
    if not margin > 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    d_ap = float(np.sum((e_a - e_p) ** 2))
    d_an = float(np.sum((e_a - e_n) ** 2))
    return max(0.0, d_ap - d_an + margin)


def _loss_and_grad(W, x_a, x_p, x_n, margin, eps):
    e_a, n_a = _project(W, x_a, eps)
    e_p, n_p = _project(W, x_p, eps)
    e_n, n_n = _project(W, x_n, eps)
    loss = triplet_loss(e_a, e_p, e_n, margin)
    if loss <= 0.0:
        return 0.0, None
    grad = np.zeros_like(W)
    for e, norm, x, g in ((e_a, n_a, x_a, 2.0 * (e_n - e_p)),
                          (e_p, n_p, x_p, 2.0 * (e_p - e_a)),
                          (e_n, n_n, x_n, 2.0 * (e_a - e_n))):
        grad += np.outer((g - e * float(e @ g)) / norm, x)
    return loss, grad


def loss_gradient(model: EmbeddingModel, x_a, x_p, x_n) -> NDArray[np.float64]:
    """Gradient of the triplet loss with respect to ``W``.

    Zero wherever the hinge is inactive, including the boundary.
    """
    x_a, x_p, x_n = (_check_input(model, x) for x in (x_a, x_p, x_n))
    _, grad = _loss_and_grad(model.W, x_a, x_p, x_n, model.margin, model.norm_epsilon)
    return np.zeros_like(model.W) if grad is None else grad


# ---------------------------------------------------------------------------
# training


def init_weights(d_in: int, cfg: TrainConfig) -> NDArray[np.float64]:
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(0.0, cfg.init_scale / math.sqrt(d_in), size=(cfg.d_out, d_in))


def train(raw, triplets: Sequence[Triplet], cfg: TrainConfig = TrainConfig(),
          margin: float = DEFAULT_MARGIN) -> tuple[EmbeddingModel, TrainLog]:
    """Fit ``W`` by mini-batch gradient descent on the triplet loss.

    Each epoch reshuffles the triplets with a generator seeded by
    ``(cfg.seed, epoch)``. Inside a batch, per-triplet gradients are summed
    in ascending triplet order and the mean is applied with the fixed
    learning rate. Triplets whose projection is degenerate are skipped.
    """
    X = np.asarray(raw, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"raw descriptors must form a 2D matrix, got shape {X.shape}")
    if not triplets:
        raise ValueError("no triplets to train on")
    if cfg.d_out > X.shape[1]:
        raise ValueError(f"d_out ({cfg.d_out}) exceeds descriptor dimension ({X.shape[1]})")
    T = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if T.min() < 0 or T.max() >= len(X):
        raise ValueError(f"triplet index out of range for {len(X)} descriptors")
    if not margin > 0:
        raise ValueError(f"margin must be > 0, got {margin}")

    W = init_weights(X.shape[1], cfg)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(T))
        total_loss, active, used, skipped = 0.0, 0, 0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = np.sort(order[start:start + cfg.batch_size])
            grad_sum = np.zeros_like(W)
            n_batch = 0
            for a, p, n in T[batch]:
                try:
                    loss, grad = _loss_and_grad(W, X[a], X[p], X[n], margin, cfg.norm_epsilon)
                except DegenerateNormError:
                    skipped += 1
                    continue
                if not math.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss in epoch {epoch}; learning rate "
                        f"{cfg.learning_rate} is likely too large")
                n_batch += 1
                total_loss += loss
                if grad is not None:
                    active += 1
                    grad_sum += grad
            if n_batch:
                W = W - cfg.learning_rate * (grad_sum / n_batch)
            used += n_batch
        if used == 0:
            raise NumericError(f"no usable triplets in epoch {epoch}: all projections degenerate")
        if not np.all(np.isfinite(W)):
            raise NumericError(f"weights diverged in epoch {epoch}")
        log.mean_loss.append(total_loss / used)
        log.active_fraction.append(active / used)
        log.skipped.append(skipped)
        logger.debug("epoch %d mean_loss %.6f active %.3f", epoch, log.mean_loss[-1],
                     log.active_fraction[-1])
    return EmbeddingModel(W, margin, cfg.norm_epsilon), log


# ---------------------------------------------------------------------------
# model file
#
#   semloc-embedding-model
#   version 1
#   d_in <int>
#   d_out <int>
#   margin <float>
#   norm_epsilon <float>
#   W
#   <d_out lines of d_in space-separated floats>
#
# Floats are written with 17 significant digits.


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_model(model: EmbeddingModel) -> bytes:
    lines = [MODEL_HEADER, f"version {MODEL_VERSION}", f"d_in {model.d_in}",
             f"d_out {model.d_out}", f"margin {_fmt(model.margin)}",
             f"norm_epsilon {_fmt(model.norm_epsilon)}", "W"]
    lines.extend(" ".join(_fmt(v) for v in row) for row in model.W)
    return ("\n".join(lines) + "\n").encode("ascii")


def load_model(data: bytes) -> EmbeddingModel:
    lines = data.decode("ascii").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MODEL_HEADER:
        raise FormatError(f"not a model file (expected first line {MODEL_HEADER!r})", 1, "line")
    fields = {}
    for lineno, key in enumerate(("version", "d_in", "d_out", "margin", "norm_epsilon"), 2):
        parts = lines[lineno - 1].split(" ") if len(lines) >= lineno else []
        if len(parts) != 2 or parts[0] != key:
            raise FormatError(f"expected '{key} <value>'", lineno, "line")
        fields[key] = parts[1]
    try:
        version = int(fields["version"])
        d_in, d_out = int(fields["d_in"]), int(fields["d_out"])
        margin, eps = float(fields["margin"]), float(fields["norm_epsilon"])
    except ValueError as exc:
        raise FormatError(f"bad header value: {exc}", None) from exc
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version} (expected {MODEL_VERSION})", 2,
                          "line")
    if d_in < 1 or d_out < 1 or d_out > d_in:
        raise FormatError(f"inconsistent shape d_out={d_out}, d_in={d_in}", 4, "line")
    if len(lines) < 7 or lines[6] != "W":
        raise FormatError("expected 'W'", 7, "line")
    rows = lines[7:]
    if len(rows) != d_out:
        raise FormatError(f"expected {d_out} weight rows, got {len(rows)}", 8, "line")
    W = np.empty((d_out, d_in))
    for i, row in enumerate(rows):
        values = row.split(" ")
        if len(values) != d_in:
            raise FormatError(f"expected {d_in} values, got {len(values)}", 8 + i, "line")
        try:
            W[i] = [float(v) for v in values]
        except ValueError as exc:
            raise FormatError(str(exc), 8 + i, "line") from exc
    try:
        return EmbeddingModel(W, margin, eps)
    except ValueError as exc:
        raise FormatError(str(exc), None) from exc
