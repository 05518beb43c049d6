"""Attention fusion of the two feature views with a softmax head.

Per sample, with view vectors ``f_pca`` and ``f_tf`` (length ``D``)::

    h_v   = tanh(W f_v)                 (d,)   one shared W
    alpha = softmax([w.h_pca, w.h_tf])  (2,)
    F     = alpha_0 f_pca + alpha_1 f_tf
    z     = V F + c                     (C,)

and the loss is the mean cross-entropy of ``softmax(z)``. Inputs may be
dense arrays or scipy sparse matrices with one row per sample; the fused
``F`` is never materialized.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .classifier import mean_row_norm
from .errors import InvalidArgument, NumericFailure


@dataclass
class AttentionModel:
    W: np.ndarray
    w: np.ndarray
    V: np.ndarray
    c: np.ndarray
    input_scale: float = 1.0

    @property
    def dims(self):
        """``(D, d, C)``."""
        return self.W.shape[1], self.W.shape[0], self.V.shape[0]

    def copy(self):
        return AttentionModel(self.W.copy(), self.w.copy(), self.V.copy(), self.c.copy(), self.input_scale)


@dataclass
class Gradients:
    W: np.ndarray
    w: np.ndarray
    V: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """``optimizer`` is ``'adam'`` (default) or ``'sgd'`` (fixed rate).

    ``scale_inputs`` divides both views by the mean training row norm
    (stored on the model so prediction applies the same factor).
    """

    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 15
    tolerance: float = 1e-4
    seed: int = 0
    optimizer: str = "adam"
    scale_inputs: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidArgument("learning rate, batch size and epochs must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")


def init_model(D, d, n_classes, seed=0):
    """Uniform(-s, s) init with ``s = sqrt(6 / (fan_in + fan_out))``."""
    if not 1 <= d < D:
        raise InvalidArgument(f"context dim d={d} must satisfy 1 <= d < D={D}")
    if n_classes < 2:
        raise InvalidArgument("need at least two classes")
    rng = np.random.default_rng(seed)

    def glorot(shape, fan_in, fan_out):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=shape)

    return AttentionModel(
        W=glorot((d, D), D, d),
        w=glorot(d, d, 1),
        V=glorot((n_classes, D), D, n_classes),
        c=np.zeros(n_classes),
    )


def _rows(x, D):
    if sp.issparse(x):
        x = x.tocsr()
    else:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != D:
        raise InvalidArgument(f"feature width {x.shape[1]} does not match model D={D}")
    return x


def _mul(x, m):
    """``x @ m`` as a dense ndarray for dense or sparse ``x``."""
    return np.asarray(x @ m)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model, f_pca, f_tf):
    D = model.dims[0]
    views = [_rows(f_pca, D) * model.input_scale, _rows(f_tf, D) * model.input_scale]
    if views[0].shape[0] != views[1].shape[0]:
        raise InvalidArgument("view batches differ in length")
    hidden = [np.tanh(_mul(f, model.W.T)) for f in views]
    scores = np.stack([h @ model.w for h in hidden], axis=1)
    alpha = _softmax(scores)
    partial = [_mul(f, model.V.T) for f in views]
    logits = alpha[:, :1] * partial[0] + alpha[:, 1:] * partial[1] + model.c
    return views, hidden, alpha, partial, logits


def attn_forward(model, f_pca, f_tf):
    """Returns ``(F_attn, alpha, logits)``; rows are samples.

    A single pair of vectors gives ``(D,)``, ``(2,)`` and ``(C,)`` outputs.
    """
    single = np.ndim(f_pca) == 1 and not sp.issparse(f_pca)
    views, _, alpha, _, logits = _forward(model, f_pca, f_tf)
    fused = [_dense(v) for v in views]
    F = (alpha[:, :1] * fused[0] + alpha[:, 1:] * fused[1]) / model.input_scale
    if single:
        return F[0], alpha[0], logits[0]
    return F, alpha, logits


def _dense(x):
    return x.toarray() if sp.issparse(x) else x


def loss(model, f_pca, f_tf, labels):
    _, _, _, _, logits = _forward(model, f_pca, f_tf)
    return _cross_entropy(logits, np.asarray(labels, dtype=np.int64))


def _cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(labels.size), labels].mean())


def attn_backward(model, f_pca, f_tf, labels):
    """Mean cross-entropy and its exact gradient w.r.t. ``W, w, V, c``."""
    labels = np.asarray(labels, dtype=np.int64)
    C = model.dims[2]
    if labels.size == 0:
        raise InvalidArgument("empty batch")
    if labels.min() < 0 or labels.max() >= C:
        raise InvalidArgument(f"labels must lie in [0, {C})")
    views, hidden, alpha, partial, logits = _forward(model, f_pca, f_tf)
    n = labels.size
    if views[0].shape[0] != n:
        raise InvalidArgument("labels and features differ in length")
    probs = _softmax(logits)
    value = _cross_entropy(logits, labels)

    dz = probs
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    dc = dz.sum(axis=0)
    dV = sum(_mul(f.T, alpha[:, v:v + 1] * dz).T for v, f in enumerate(views))
    dalpha = np.stack([np.sum(dz * p, axis=1) for p in partial], axis=1)
    dscore = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    dw = sum(h.T @ dscore[:, v] for v, h in enumerate(hidden))
    dW = np.zeros_like(model.W)
    for v, (h, f) in enumerate(zip(hidden, views)):
        dpre = dscore[:, v:v + 1] * model.w[None, :] * (1.0 - h * h)
        dW += _mul(f.T, dpre).T
    return value, Gradients(W=dW, w=dw, V=dV, c=dc)


@dataclass
class TrainResult:
    model: AttentionModel
    loss_history: list = field(default_factory=list)
    acc_history: list = field(default_factory=list)
    epochs: int = 0


def train(f_pca, f_tf, labels, d=50, cfg=TrainConfig(), n_classes=None):
    """Mini-batch training until the epoch loss improves by less than
    ``cfg.tolerance`` or ``cfg.max_epochs`` is reached."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if f_pca.shape != f_tf.shape or f_pca.shape[0] != n:
        raise InvalidArgument("views and labels must agree in shape")
    C = int(n_classes or labels.max() + 1)
    model = init_model(f_pca.shape[1], d, C, cfg.seed)
    if cfg.scale_inputs:
        norm = 0.5 * (mean_row_norm(f_pca) + mean_row_norm(f_tf))
        model.input_scale = 1.0 / norm if norm > 0 else 1.0
    if sp.issparse(f_pca):
        f_pca, f_tf = f_pca.tocsr(), f_tf.tocsr()
    rng = np.random.default_rng(cfg.seed + 1)
    names = ("W", "w", "V", "c")
    moments = {k: (np.zeros_like(getattr(model, k)), np.zeros_like(getattr(model, k))) for k in names}
    step = 0
    result = TrainResult(model=model)
    prev = np.inf
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            value, grads = attn_backward(model, f_pca[idx], f_tf[idx], labels[idx])
            if not np.isfinite(value):
                raise NumericFailure(f"attention training diverged (loss {value}) in epoch {epoch}")
            total += value * idx.size
            step += 1
            for k in names:
                g = getattr(grads, k)
                p = getattr(model, k)
                if cfg.optimizer == "sgd":
                    p -= cfg.learning_rate * g
                else:
                    m, v = moments[k]
                    m *= 0.9
                    m += 0.1 * g
                    v *= 0.999
                    v += 0.001 * g * g
                    mh = m / (1 - 0.9 ** step)
                    vh = v / (1 - 0.999 ** step)
                    p -= cfg.learning_rate * mh / (np.sqrt(vh) + 1e-8)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise NumericFailure(f"attention training diverged in epoch {epoch}")
        pred, _ = predict(model, f_pca, f_tf)
        result.loss_history.append(epoch_loss)
        result.acc_history.append(float(np.mean(pred == labels)))
        result.epochs = epoch + 1
        if prev - epoch_loss < cfg.tolerance:
            break
        prev = epoch_loss
    return result


def predict(model, f_pca, f_tf, batch_size=1024):
    """Labels (argmax, lowest index on ties) and per-sample ``alpha``."""
    n = f_pca.shape[0]
    labels, alphas = [], []
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        _, _, alpha, _, logits = _forward(model, f_pca[sl], f_tf[sl])
        labels.append(np.argmax(logits, axis=1))
        alphas.append(alpha)
    return np.concatenate(labels), np.concatenate(alphas)


def write_loss_csv(result, path):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,train_acc\n")
        for e, (l, a) in enumerate(zip(result.loss_history, result.acc_history), start=1):
            fh.write(f"{e},{float(l)!r},{float(a)!r}\n")


def write_alpha_csv(alphas, labels, preds, path):
    with open(path, "w") as fh:
        fh.write("sample_id,alpha_pca,alpha_tf,label,pred\n")
        for i, (a, y, p) in enumerate(zip(alphas, labels, preds)):
            fh.write(f"{i},{float(a[0])!r},{float(a[1])!r},{int(y)},{int(p)}\n")
