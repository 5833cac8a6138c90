"""Smallest eigenpairs of the symmetric definite pencil ``(K, M)``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.sparse import issparse
from scipy.sparse.linalg import LinearOperator, eigsh, splu


class IndefinitePencil(RuntimeError):
    pass


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float
    normalized: bool = True
    converged: bool = True


@dataclass
class SolverOptions:
    k: int = 2
    tol: float = 1e-8
    max_iter: int = 5000
    shift: float = 0.0
    block_size: Optional[int] = None
    seed: int = 0
    dense_below: int = 600

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


def _relative_residual(K, M, lam, y) -> float:
    Ky = K @ y
    r = Ky - lam * (M @ y)
    scale = np.linalg.norm(Ky)
    if scale == 0.0:
        scale = np.linalg.norm(M @ y)
    return float(np.linalg.norm(r) / scale)


def _dense(A):
    return A.toarray() if issparse(A) else np.asarray(A, dtype=float)


def _finish(K, M, vals, vecs, opts, deflation) -> List[EigenPair]:
    order = np.argsort(vals)
    out = []
    for j in order[: opts.k]:
        y = np.array(vecs[:, j], dtype=float)
        if deflation is not None:
            u, w = deflation
            y = y - u * (w @ y) / (w @ u)
        y /= math.sqrt(float(y @ (M @ y)))
        i = int(np.argmax(np.abs(y)))
        if y[i] < 0:
            y = -y
        lam = float(y @ (K @ y))  # Rayleigh quotient, y is M-normalized
        res = _relative_residual(K, M, lam, y)
        out.append(EigenPair(lam, y, res, True, res <= max(opts.tol, 1e-12) * 10))
    # M-orthonormalize clusters (degenerate eigenvalues)
    Y = np.column_stack([p.vector for p in out])
    G = Y.T @ (M @ Y)
    if np.max(np.abs(G - np.eye(len(out)))) > 1e-10:
        L = np.linalg.cholesky(G)
        Y = np.linalg.solve(L, Y.T).T
        for p, y in zip(out, Y.T):
            p.vector = y
            p.value = float(y @ (K @ y))
            p.residual = _relative_residual(K, M, p.value, y)
    return out


def smallest_eigenpairs(K, M, opts: Optional[SolverOptions] = None,
                        deflation: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> List[EigenPair]:
    """``k`` smallest eigenpairs of ``K y = lambda M y``, ascending.

    ``deflation = (u, w)`` removes the direction ``u`` (with ``K u = 0`` and
    ``w = M u``) by restricting to ``w . y = 0``.  Large problems use ARPACK
    in shift-invert mode with the projection folded into the operator;
    small ones fall back to a dense solve.
    """
    opts = opts or SolverOptions()
    n = K.shape[0]
    k = opts.k
    if n - (deflation is not None) < k:
        raise ValueError("problem smaller than the number of requested pairs")
    if n <= opts.dense_below or k >= n - 2:
        Kd, Md = _dense(K), _dense(M)
        if deflation is not None:
            u, w = deflation
            Q = sla.null_space(w.reshape(1, -1))
            Kq, Mq = Q.T @ Kd @ Q, Q.T @ Md @ Q
        else:
            Q, Kq, Mq = None, Kd, Md
        try:
            vals, vecs = sla.eigh(Kq, Mq, subset_by_index=[0, k - 1])
        except np.linalg.LinAlgError as exc:
            raise IndefinitePencil(str(exc)) from exc
        if Q is not None:
            vecs = Q @ vecs
        if vals[0] < -1e-8 * max(1.0, abs(vals[-1])):
            raise IndefinitePencil(f"negative eigenvalue {vals[0]:.3e}")
        return _finish(K, M, vals, vecs, opts, deflation)

    sigma = opts.shift
    if deflation is not None and sigma == 0.0:
        sigma = -0.1  # K is singular on the full space
    A = (K - sigma * M).tocsc()
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise IndefinitePencil(f"factorization failed: {exc}") from exc
    if deflation is not None:
        u, w = deflation
        wu = float(w @ u)

        def op(x):
            z = lu.solve(x)
            return z - u * (w @ z) / wu
    else:
        def op(x):
            return lu.solve(x)
    OPinv = LinearOperator((n, n), matvec=op, dtype=float)
    rng = np.random.default_rng(opts.seed)
    v0 = rng.standard_normal(n)
    if deflation is not None:
        v0 = v0 - u * (w @ v0) / wu
    ncv = opts.block_size or min(n, max(2 * k + 1, 20))
    try:
        vals, vecs = eigsh(K, k=k, M=M, sigma=sigma, which="LM", OPinv=OPinv, v0=v0,
                           tol=opts.tol * 1e-2, maxiter=opts.max_iter, ncv=ncv)
        converged = True
    except Exception as exc:  # ArpackNoConvergence carries partial results
        vals = getattr(exc, "eigenvalues", None)
        vecs = getattr(exc, "eigenvectors", None)
        if vals is None or len(vals) == 0:
            raise
        converged = False
    pairs = _finish(K, M, np.asarray(vals), np.asarray(vecs), opts, deflation)
    if not converged:
        for p in pairs:
            p.converged = False
    if pairs[0].value < -1e-8:
        raise IndefinitePencil(f"negative eigenvalue {pairs[0].value:.3e}")
    return pairs
