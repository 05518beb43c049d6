"""Left-one-mode-out orthogonal iteration.

Tucker-style alternating factorization in which one mode (for patch
tensors, the sample mode) keeps its full size and gets no factor matrix.
Two equivalent routes are provided:

* :func:`lomoi` works on the dense tensor.
* :func:`lomoi_from_gram` works from the second-moment matrix of the
  vectorized slabs when the excluded mode is the last one. Every quantity
  the dense iteration needs (the mode Gram matrices of the partially
  projected tensor and the core norm) is an exact contraction of that
  matrix, so patch tensors with millions of slabs never materialize.
"""

import string
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .errors import InvalidArgument
from .tensor_core import as_tensor, frobenius_norm, multi_mode_product, unfold

DEFAULT_MAX_ITER = 50
DEFAULT_REL_TOL = 1e-6


@dataclass(frozen=True)
class LomoiConfig:
    """Ranks are listed for the factorized modes in ascending mode order.

    ``tolerance=None`` means ``1e-6 * ||x||``; ``excluded_mode=None`` means
    the last mode.
    """

    ranks: tuple
    excluded_mode: int = None
    tolerance: float = None
    max_iter: int = DEFAULT_MAX_ITER

    def resolve(self, shape):
        n = len(shape)
        m = n - 1 if self.excluded_mode is None else self.excluded_mode
        if not 0 <= m < n:
            raise InvalidArgument(f"excluded mode {m} out of range for {n} modes")
        modes = [k for k in range(n) if k != m]
        ranks = tuple(int(r) for r in self.ranks)
        if len(ranks) != len(modes):
            raise InvalidArgument(f"need {len(modes)} ranks for shape {tuple(shape)}, got {ranks}")
        for k, r in zip(modes, ranks):
            if not 1 <= r <= shape[k]:
                raise InvalidArgument(f"rank {r} invalid for mode {k} of size {shape[k]}")
        if self.max_iter < 1:
            raise InvalidArgument("max_iter must be positive")
        if self.tolerance is not None and self.tolerance < 0:
            raise InvalidArgument("tolerance must be non-negative")
        return m, modes, ranks


@dataclass
class LomoiResult:
    factors: list
    singular_values: list
    loss_history: list
    core_norm_history: list
    excluded_mode: int
    core: np.ndarray = None
    reconstruction: np.ndarray = None
    input_norm: float = 0.0
    sweeps: int = 0
    modes: tuple = field(default_factory=tuple)

    @property
    def loss(self):
        return self.loss_history[-1]


def core_norm(result):
    """Frobenius norm of the core tensor of a finished decomposition."""
    if result.core is not None:
        return frobenius_norm(result.core)
    return result.core_norm_history[-1]


def _svd_factor(mat, rank):
    eig = spectral.left_singular_vectors(mat, rank)
    return eig.vectors, np.sqrt(np.clip(eig.values, 0.0, None))


def lomoi(x, cfg):
    """Factorize every mode of ``x`` except ``cfg.excluded_mode``.

    Initialization is the truncated HOSVD. Each sweep refits every factor
    to the leading left singular vectors of the tensor projected on all
    other factors, then recomputes core, reconstruction and loss. Sweeps
    continue while ``loss >= tolerance`` and fewer than ``max_iter`` sweeps
    have run; an exact zero loss also stops them.
    """
    x = as_tensor(x)
    m, modes, ranks = cfg.resolve(x.shape)
    x_norm = frobenius_norm(x)
    tol = DEFAULT_REL_TOL * x_norm if cfg.tolerance is None else cfg.tolerance

    factors = [None] * x.ndim
    svals = [None] * x.ndim
    for k, r in zip(modes, ranks):
        factors[k], svals[k] = _svd_factor(unfold(x, k), r)

    def reconstruct():
        core = multi_mode_product(x, factors, skip=m, transpose=True)
        return core, multi_mode_product(core, factors, skip=m)

    core, xhat = reconstruct()
    loss = frobenius_norm(x - xhat)
    losses, cores = [loss], [frobenius_norm(core)]
    count = 0
    while loss >= tol and loss > 0.0 and count < cfg.max_iter:
        for k, r in zip(modes, ranks):
            others = [None if j == k else f for j, f in enumerate(factors)]
            y = multi_mode_product(x, others, skip=m, transpose=True)
            factors[k], svals[k] = _svd_factor(unfold(y, k), r)
        core, xhat = reconstruct()
        loss = frobenius_norm(x - xhat)
        losses.append(loss)
        cores.append(frobenius_norm(core))
        count += 1

    return LomoiResult(
        factors=[factors[k] for k in modes],
        singular_values=[svals[k] for k in modes],
        loss_history=losses,
        core_norm_history=cores,
        excluded_mode=m,
        core=core,
        reconstruction=xhat,
        input_norm=x_norm,
        sweeps=count,
        modes=tuple(modes),
    )


def _mode_gram(moment, k, projectors):
    """Contract the slab moment tensor down to the mode-``k`` Gram matrix.

    ``moment`` has shape ``patch_shape + patch_shape``; ``projectors[j]`` is
    ``U_j U_j^T`` (or ``None`` for identity, i.e. a partial trace).
    """
    n = len(projectors)
    left = string.ascii_lowercase[:n]
    right = string.ascii_uppercase[:n]
    operands, subs = [moment], [left + right]
    rl, rr = list(left), list(right)
    for j, proj in enumerate(projectors):
        if j == k:
            continue
        if proj is None:
            rr[j] = rl[j]
        else:
            operands.append(proj)
            subs.append(left[j] + right[j])
    expr = "".join(rl) + "".join(rr)
    spec = ",".join([expr] + subs[1:]) + "->" + left[k] + right[k]
    return np.einsum(spec, *operands, optimize=True)


def _kron_all(mats):
    out = mats[0]
    for mat in mats[1:]:
        out = np.kron(out, mat)
    return out


def lomoi_from_gram(moment, patch_shape, ranks, tolerance=None, max_iter=DEFAULT_MAX_ITER):
    """Run the iteration of :func:`lomoi` on a tensor known only through
    the second moments of its slabs along the (excluded) last mode.

    Parameters
    ----------
    moment : ndarray, shape (p, p)
        ``sum_s vec(P_s) vec(P_s)^T`` over all slabs ``P_s`` of the tensor,
        with ``vec`` row-major over ``patch_shape``.
    patch_shape : tuple of int
        Shape of one slab (the factorized modes).
    ranks : tuple of int
        One rank per factorized mode.

    Returns
    -------
    LomoiResult
        ``core`` and ``reconstruction`` are ``None``; losses and core norms
        are exact up to rounding (``loss**2 = ||x||**2 - ||core||**2``).
    """
    patch_shape = tuple(int(s) for s in patch_shape)
    moment = np.asarray(moment, dtype=np.float64)
    p = int(np.prod(patch_shape))
    if moment.shape != (p, p):
        raise InvalidArgument(f"moment shape {moment.shape} does not match slab shape {patch_shape}")
    cfg = LomoiConfig(ranks=tuple(ranks), tolerance=tolerance, max_iter=max_iter)
    _, modes, ranks = cfg.resolve(patch_shape + (1,))
    n = len(patch_shape)
    sym = 0.5 * (moment + moment.T)
    mt = sym.reshape(patch_shape + patch_shape)
    sq_norm = float(np.trace(sym))
    x_norm = float(np.sqrt(max(sq_norm, 0.0)))
    tol = DEFAULT_REL_TOL * x_norm if tolerance is None else tolerance

    def eig_factor(k, projectors, r):
        eig = spectral.leading_eigs(_mode_gram(mt, k, projectors), r)
        return eig.vectors, np.sqrt(np.clip(eig.values, 0.0, None))

    factors, svals = [None] * n, [None] * n
    for k in range(n):
        factors[k], svals[k] = eig_factor(k, [None] * n, ranks[k])

    def loss_and_core():
        kr = _kron_all(factors)
        core_sq = float(np.einsum("ij,ik,kj->", kr, sym, kr))
        return float(np.sqrt(max(sq_norm - core_sq, 0.0))), float(np.sqrt(max(core_sq, 0.0)))

    loss, cn = loss_and_core()
    losses, cores = [loss], [cn]
    count = 0
    while loss >= tol and loss > 0.0 and count < max_iter:
        for k in range(n):
            projectors = [None if j == k else factors[j] @ factors[j].T for j in range(n)]
            factors[k], svals[k] = eig_factor(k, projectors, ranks[k])
        loss, cn = loss_and_core()
        losses.append(loss)
        cores.append(cn)
        count += 1

    return LomoiResult(
        factors=factors,
        singular_values=svals,
        loss_history=losses,
        core_norm_history=cores,
        excluded_mode=n,
        input_norm=x_norm,
        sweeps=count,
        modes=tuple(modes),
    )


def write_diagnostics_csv(result, path):
    """One ``sweep,loss,core_norm`` row per recorded sweep (sweep 0 = init)."""
    with open(path, "w") as fh:
        fh.write("sweep,loss,core_norm\n")
        for s, (loss, cn) in enumerate(zip(result.loss_history, result.core_norm_history)):
            fh.write(f"{s},{float(loss)!r},{float(cn)!r}\n")
