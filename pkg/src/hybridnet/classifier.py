"""One-vs-rest linear hinge-loss classifiers.

Two solvers minimize the same L2-regularized hinge objective per class:
dual coordinate descent (``"dcd"``, the default) and mini-batch
subgradient descent with ``1 / (reg * t)`` steps (``"sgd"``).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import backend
from .errors import InvalidArgument

SOLVERS = ("dcd", "sgd")
CHUNK = 2048


@dataclass
class LinearModel:
    """``C x D`` weights and ``C`` biases. ``mean``/``scale`` are set when
    the model standardizes its inputs. ``bias_penalty`` records whether the
    bias entered the regularizer (it does for ``"dcd"``)."""

    weights: np.ndarray
    bias: np.ndarray
    reg: float
    epochs: int = 0
    seed: int = 0
    objective_history: list = field(default_factory=list)
    mean: np.ndarray = None
    scale: np.ndarray = None
    input_scale: float = 1.0
    bias_penalty: bool = False

    @property
    def n_classes(self):
        return self.weights.shape[0]

    def scores(self, x):
        x = _prepare(x, self.weights.shape[1])
        s = _dot(x, self.weights) + self.bias
        if self.mean is not None:
            # weights already carry the 1/scale factor
            s = s - self.mean @ self.weights.T
        return s


def _prepare(x, dims=None):
    if sp.issparse(x):
        x = x.tocsr()
        if x.dtype not in (np.float32, np.float64):
            x = x.astype(np.float64)
    else:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if dims is not None and x.shape[1] != dims:
        raise InvalidArgument(f"features have {x.shape[1]} columns, model expects {dims}")
    return x


def _dot(x, w):
    """``x @ w.T`` in row chunks, so sparse float32 inputs are never upcast whole."""
    out = np.empty((x.shape[0], w.shape[0]))
    for lo in range(0, x.shape[0], CHUNK):
        out[lo:lo + CHUNK] = np.asarray(x[lo:lo + CHUNK] @ w.T)
    return out


def row_sq_norms(x):
    """Squared Euclidean norm of every row, in float64."""
    if sp.issparse(x):
        x = x.tocsr()
        out = np.zeros(x.shape[0])
        for lo in range(0, x.shape[0], CHUNK):
            part = x[lo:lo + CHUNK]
            v = part.data.astype(np.float64)
            out[lo:lo + part.shape[0]] = np.bincount(
                np.repeat(np.arange(part.shape[0]), np.diff(part.indptr)), weights=v * v, minlength=part.shape[0])
        return out
    x = np.asarray(x, dtype=np.float64)
    return np.einsum("ij,ij->i", x, x)


def mean_row_norm(x):
    return float(np.mean(np.sqrt(row_sq_norms(x))))


def _signs(labels, n_classes):
    y = -np.ones((labels.shape[0], n_classes))
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def hinge_objective(model, x, labels):
    """``sum_c [reg/2 ||w_c||^2 + mean_i max(0, 1 - y_ic s_ic)]``.

    ``w`` is taken in the coordinates the model was trained in (after any
    standardization or input scaling) and includes the bias when
    ``bias_penalty`` is set, matching ``objective_history``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    s = model.scores(x)
    y = _signs(labels, model.n_classes)
    hinge = np.maximum(0.0, 1.0 - y * s).mean(axis=0)
    w = model.weights / model.input_scale
    if model.scale is not None:
        w = w * model.scale
    sq = np.sum(w ** 2, axis=1)
    if model.bias_penalty:
        sq = sq + model.bias ** 2
    return float(np.sum(0.5 * model.reg * sq + hinge))


def svm_train(x, labels, reg=1e-4, epochs=10, seed=0, batch_size=128, standardize=False, n_classes=None,
              scale_inputs=True, solver="dcd", tol=1e-3):
    """Train ``C`` one-vs-rest hinge models.

    Parameters
    ----------
    x : ndarray or sparse matrix, shape (N, D)
        Feature rows. Sparse float32 input is used without a float64 copy.
    labels : ndarray of int, shape (N,)
    reg : float
        Weight of ``||w||^2 / 2`` against the mean hinge loss.
    epochs : int
        Passes over the data (an upper bound for ``"dcd"``, which also
        stops once the largest projected gradient falls below ``tol``).
    solver : {"dcd", "sgd"}
        ``"dcd"`` runs dual coordinate descent with box ``1 / (reg * N)``
        and treats the bias as a constant unit feature (so it is
        regularized). ``"sgd"`` takes mini-batch subgradient steps of size
        ``1 / (reg * t)`` with an unregularized bias.
    scale_inputs : bool
        Divide rows by their mean Euclidean norm before training; the
        objective and ``reg`` then refer to the scaled inputs and the factor
        is folded into the returned weights. Raw histogram rows have norms
        in the thousands.

    Returns
    -------
    LinearModel
        The iterate with the lowest objective over the epochs.
        ``objective_history`` starts with the all-zero model and records the
        best value so far after every epoch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    x = _prepare(x)
    n, d = x.shape
    if labels.shape != (n,):
        raise InvalidArgument(f"{n} feature rows but {labels.shape[0]} labels")
    classes = np.unique(labels)
    if classes.size < 2:
        raise InvalidArgument("svm_train needs at least two classes")
    if labels.min() < 0:
        raise InvalidArgument("labels must be non-negative class ids")
    if reg <= 0 or epochs < 1 or batch_size < 1:
        raise InvalidArgument("reg, epochs and batch_size must be positive")
    if solver not in SOLVERS:
        raise InvalidArgument(f"solver must be one of {SOLVERS}, got {solver!r}")
    c = int(n_classes or labels.max() + 1)

    mean = scale = None
    if standardize:
        dense = x.toarray() if sp.issparse(x) else x
        mean = dense.mean(axis=0)
        scale = dense.std(axis=0)
        scale[scale == 0] = 1.0
        x = (dense - mean) / scale
        # stored parameters act on raw inputs; see LinearModel.scores
    input_scale = 1.0
    if scale_inputs and not standardize:
        norm = mean_row_norm(x)
        if norm > 0:
            input_scale = 1.0 / norm
    y = _signs(labels, c)
    penalize_bias = solver == "dcd"

    def objective(w, b):
        s = _dot(x, w) * input_scale + b
        sq = np.sum(w ** 2, axis=1) + (b ** 2 if penalize_bias else 0.0)
        return float(np.sum(0.5 * reg * sq + np.maximum(0.0, 1.0 - y * s).mean(axis=0)))

    fit = _fit_dcd if solver == "dcd" else _fit_sgd
    w, b, history, ran = fit(x, y, reg, epochs, seed, batch_size, input_scale, tol, objective)
    if standardize:
        w = w / scale
    w = w * input_scale
    return LinearModel(w, b, reg, ran, seed, history, mean, scale if standardize else None, input_scale,
                       penalize_bias)


def _fit_sgd(x, y, reg, epochs, seed, batch_size, input_scale, tol, objective):
    n, c = y.shape
    w = np.zeros((c, x.shape[1]))
    b = np.zeros(c)
    rng = np.random.default_rng(seed)
    best = (objective(w, b), w.copy(), b.copy())
    history = [best[0]]
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = x[idx], y[idx]
            t += 1
            eta = 1.0 / (reg * t)
            s = np.asarray(xb @ w.T) * input_scale + b
            g = yb * (yb * s < 1.0)
            step = np.asarray(xb.T @ g).T * (input_scale / idx.size)
            w = (1.0 - eta * reg) * w + eta * step
            b = b + eta * g.sum(axis=0) / idx.size
        obj = objective(w, b)
        if obj < best[0]:
            best = (obj, w.copy(), b.copy())
        history.append(best[0])
    return best[1], best[2], history, epochs


def _fit_dcd(x, y, reg, epochs, seed, batch_size, input_scale, tol, objective):
    n, c = y.shape
    if not sp.issparse(x):
        x = sp.csr_matrix(x)
    x.sum_duplicates()
    indptr = x.indptr.astype(np.int64, copy=False)
    indices = x.indices.astype(np.int32, copy=False)
    data = x.data
    qdiag = row_sq_norms(x) * input_scale ** 2 + 1.0
    upper = 1.0 / (reg * n)
    k = backend.kernels
    w = np.zeros((c, x.shape[1]))
    b = np.zeros((c, 1))
    alpha = np.zeros((c, n))
    ys = np.ascontiguousarray(y.T)
    rng = np.random.default_rng(seed)
    best = (objective(w, b[:, 0]), w.copy(), b[:, 0].copy())
    history = [best[0]]
    ran = 0
    for _ in range(epochs):
        order = rng.permutation(n).astype(np.int64)
        worst = 0.0
        for j in range(c):
            worst = max(worst, k.dcd_epoch(indptr, indices, data, order, ys[j], alpha[j], w[j], b[j], qdiag,
                                           upper, input_scale, 1.0))
        ran += 1
        obj = objective(w, b[:, 0])
        if obj < best[0]:
            best = (obj, w.copy(), b[:, 0].copy())
        history.append(best[0])
        if worst < tol:
            break
    return best[1], best[2], history, ran


def svm_predict(model, x):
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(model.scores(x), axis=1)
