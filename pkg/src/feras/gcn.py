"""Two graph-convolution layers split at the embedding share point, plus a dense head.

The forward pass is cut in two so the Aggregation Server can sit between
the first convolution (``forward_pre``) and the rest (``forward_post``)::

    x_hat   = relu(A x w1)                 # pushed to the server
    x_tilde = server average of x_hat      # pulled back
    logits  = relu(A x_tilde w2) @ w_dense

Gradients are exact and hand-derived. A host only differentiates through
its own contribution to ``x_tilde``: rows averaged in from other hosts are
constants, and the host's own row enters with its averaging weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import spmm

LOSS_KINDS = ("squared", "bce_multilabel", "ce_singlelabel")

# Lipschitz constant of dL/dlogits per logit, used by the theory module
C_STAR = {"squared": 1.0, "bce_multilabel": 0.25, "ce_singlelabel": 1.0}


class DivergenceError(FloatingPointError):
    """Non-finite values appeared during training."""


class StaleTapeError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModelParams:
    w1: np.ndarray
    w2: np.ndarray
    w_dense: np.ndarray | None = None

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def matrices(self) -> list[np.ndarray]:
        return [w for w in (self.w1, self.w2, self.w_dense) if w is not None]

    def map(self, fn) -> "ModelParams":
        return ModelParams(
            fn(self.w1), fn(self.w2), None if self.w_dense is None else fn(self.w_dense)
        )

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.matrices()])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w * w) for w in self.matrices())))

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        return all(
            np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip(self.matrices(), other.matrices())
        )


def init_params(
    m1: int,
    hidden_dims: tuple[int, int],
    num_classes: int | None,
    rng: np.random.Generator,
) -> ModelParams:
    """Glorot-uniform initialization. ``num_classes=None`` drops the dense head."""
    m2, m3 = hidden_dims

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    w1 = glorot(m1, m2)
    w2 = glorot(m2, m3)
    wd = glorot(m3, num_classes) if num_classes is not None else None
    return ModelParams(w1, w2, wd)


@dataclass(frozen=True)
class Hyper:
    eta: float = 0.1
    lam: float = 0.0
    loss_kind: str = "ce_singlelabel"

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError("eta must be a positive finite number")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and >= 0")

    @property
    def c_star(self) -> float:
        return C_STAR[self.loss_kind]


@dataclass(eq=False)
class ForwardTape:
    """Cached intermediates of one forward pass, consumed by ``backward``."""

    params: ModelParams
    norm_adj: sp.spmatrix
    visible_mask: np.ndarray
    ax: np.ndarray
    h1: np.ndarray
    x_hat: np.ndarray
    own_weight: np.ndarray | None = None
    x_tilde: np.ndarray | None = None
    ax_tilde: np.ndarray | None = None
    h2: np.ndarray | None = None
    z: np.ndarray | None = None
    logits: np.ndarray | None = None
    consumed: bool = field(default=False)


def relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


def forward_pre(
    params: ModelParams,
    norm_adj: sp.spmatrix,
    features: np.ndarray,
    visible_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardTape]:
    """First convolution: returns the embeddings to share and a tape."""
    k = norm_adj.shape[0]
    if features.shape != (k, params.w1.shape[0]):
        raise ValueError(
            f"features {features.shape} incompatible with adjacency {k} and w1 {params.w1.shape}"
        )
    ax = spmm(norm_adj, features)
    h1 = ax @ params.w1
    x_hat = relu(h1)
    if not np.isfinite(x_hat).all():
        raise DivergenceError("non-finite embeddings in first layer")
    mask = np.ones(k, dtype=bool) if visible_mask is None else np.asarray(visible_mask, dtype=bool)
    return x_hat, ForwardTape(params, norm_adj, mask, ax, h1, x_hat)


def forward_post(
    params: ModelParams,
    norm_adj: sp.spmatrix,
    shared_embeddings: np.ndarray,
    tape: ForwardTape,
    own_weight: np.ndarray | float = 1.0,
) -> np.ndarray:
    """Second convolution and dense head on the pulled embeddings.

    ``own_weight[i]`` is d x_tilde[i] / d x_hat[i] for the host's own row;
    1 when the host uses its local embeddings directly.
    """
    if shared_embeddings.shape != tape.x_hat.shape:
        raise ValueError(
            f"shared embeddings {shared_embeddings.shape} != pushed {tape.x_hat.shape}"
        )
    ax_t = spmm(norm_adj, shared_embeddings)
    h2 = ax_t @ params.w2
    z = relu(h2)
    logits = z @ params.w_dense if params.w_dense is not None else z
    tape.own_weight = np.broadcast_to(np.asarray(own_weight, dtype=np.float64), (tape.x_hat.shape[0],))
    tape.x_tilde = shared_embeddings
    tape.ax_tilde = ax_t
    tape.h2 = h2
    tape.z = z
    tape.logits = logits
    return logits


def forward_local(params: ModelParams, norm_adj, features, visible_mask=None):
    """Full pass with the server replaced by the identity on own embeddings."""
    x_hat, tape = forward_pre(params, norm_adj, features, visible_mask)
    return forward_post(params, norm_adj, x_hat, tape), tape


# -- loss ----------------------------------------------------------------------


def _log_sigmoid(a):
    return -np.logaddexp(0.0, -a)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _log_softmax(a):
    shifted = a - a.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def data_loss(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray, loss_kind: str) -> float:
    """Mean per-node loss over the rows where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("loss over an all-masked batch")
    z, y = logits[mask], labels[mask]
    if loss_kind == "squared":
        per_node = 0.5 * np.sum((z - y) ** 2, axis=1)
    elif loss_kind == "bce_multilabel":
        per_node = -np.sum(y * _log_sigmoid(z) + (1.0 - y) * _log_sigmoid(-z), axis=1)
    elif loss_kind == "ce_singlelabel":
        per_node = -np.sum(y * _log_softmax(z), axis=1)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return float(per_node.sum() / n)


def regularizer(params: ModelParams, lam: float) -> float:
    return 0.5 * lam * sum(float(np.sum(w * w)) for w in params.matrices())


def loss(
    logits: np.ndarray,
    labels: np.ndarray,
    visible_mask: np.ndarray,
    params: ModelParams,
    hyper: Hyper,
) -> float:
    """Regularized cost lambda/2 * ||w||^2 + mean masked loss."""
    return data_loss(logits, labels, visible_mask, hyper.loss_kind) + regularizer(params, hyper.lam)


def loss_grad_logits(logits, labels, mask, loss_kind) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("loss over an all-masked batch")
    if loss_kind == "squared":
        g = logits - labels
    elif loss_kind == "bce_multilabel":
        g = _sigmoid(logits) - labels
    else:
        g = np.exp(_log_softmax(logits)) - labels
    return np.where(mask[:, None], g, 0.0) / n


def backward(tape: ForwardTape, labels: np.ndarray, hyper: Hyper) -> ModelParams:
    """Gradients of the regularized cost with respect to every weight matrix."""
    if tape.consumed:
        raise StaleTapeError("tape already used for a backward pass")
    if tape.logits is None:
        raise StaleTapeError("forward_post has not been run on this tape")
    tape.consumed = True
    p = tape.params
    g_out = loss_grad_logits(tape.logits, labels, tape.visible_mask, hyper.loss_kind)
    if p.w_dense is not None:
        g_dense = tape.z.T @ g_out
        g_z = g_out @ p.w_dense.T
    else:
        g_dense = None
        g_z = g_out
    g_h2 = g_z * (tape.h2 > 0)
    g_w2 = tape.ax_tilde.T @ g_h2
    g_x_tilde = spmm(tape.norm_adj.T, g_h2 @ p.w2.T)
    g_h1 = (tape.own_weight[:, None] * g_x_tilde) * (tape.h1 > 0)
    g_w1 = tape.ax.T @ g_h1
    lam = hyper.lam
    return ModelParams(
        g_w1 + lam * p.w1,
        g_w2 + lam * p.w2,
        None if g_dense is None else g_dense + lam * p.w_dense,
    )


def sgd_step(params: ModelParams, grads: ModelParams, eta: float) -> ModelParams:
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if not all(np.isfinite(g).all() for g in grads.matrices()):
        raise DivergenceError("non-finite gradient")
    new = [w - eta * g for w, g in zip(params.matrices(), grads.matrices())]
    return ModelParams(new[0], new[1], new[2] if len(new) == 3 else None)


# -- metrics -------------------------------------------------------------------


def predict(logits: np.ndarray, task: str) -> np.ndarray:
    if task == "multilabel":
        return logits > 0
    pred = np.zeros(logits.shape, dtype=bool)
    pred[np.arange(logits.shape[0]), np.argmax(logits, axis=1)] = True
    return pred


def f1_micro(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray, task: str) -> float:
    """Micro-averaged F1 over all (node, class) decisions of the masked rows."""
    mask = np.asarray(mask, dtype=bool)
    pred = predict(logits[mask], task)
    truth = labels[mask] > 0.5
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp == fp == fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)

