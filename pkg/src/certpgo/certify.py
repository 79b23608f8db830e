"""Dual certificate for the lifted pose-graph relaxation.

At a first-order critical point ``X`` the Lagrange multipliers of the frame
constraints are ``Lambda_i = sym(Y_i^T (X L)_i)`` and the dual matrix is
``S = L - blockdiag(Lambda)`` (multipliers on rotation diagonal blocks only).
``S`` is PSD iff ``X`` is globally optimal for the relaxation; the rows of
``X`` lie in its kernel. The translation columns carry an extra structural
kernel (a common shift of all translations in a sigma-connected component),
which is deflated explicitly along with the rows of ``X``; the test is then
on the smallest eigenvalue left over.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .errors import StationarityViolation
from .graph import components
from .quadratic import ConnectionLaplacian, LiftedState, cost, riemannian_gradient, split_blocks, times_laplacian

log = logging.getLogger(__name__)


class Verdict(str, enum.Enum):
    CERTIFIED = "certified"
    NOT_CERTIFIED = "not_certified"
    INDETERMINATE = "indeterminate"


@dataclass
class Certificate:
    lambda_small: np.ndarray  # d+1 smallest eigenvalues of S (structural kernel removed), ascending
    verdict: Verdict
    tol_used: float
    escape_eigvec: np.ndarray | None = None
    iterations: int = 0
    diagnostic: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    @property
    def lambda_d_plus_1(self) -> float:
        return float(self.lambda_small[-1]) if len(self.lambda_small) else float("nan")

    @property
    def lambda_min(self) -> float:
        return float(self.lambda_small[0])


def multipliers(L: ConnectionLaplacian, state: LiftedState) -> np.ndarray:
    """``Lambda_i = sym(Y_i^T G_i)`` with ``G = X L``; shape ``(n, d, d)``."""
    y, _ = split_blocks(state.X, state.d)
    gy, _ = split_blocks(times_laplacian(L, state.X), state.d)
    lam = np.einsum("nrd,nre->nde", y, gy)
    return 0.5 * (lam + lam.transpose(0, 2, 1))


def assemble_dual(L: ConnectionLaplacian, state: LiftedState, stationarity_tol: float = 1e-5) -> sp.csr_matrix:
    f = cost(L, state)
    gnorm = float(np.linalg.norm(riemannian_gradient(L, state)))
    if gnorm > stationarity_tol * (1.0 + f):
        raise StationarityViolation(
            f"Riemannian gradient norm {gnorm:.3e} exceeds {stationarity_tol:g} * (1 + cost) = "
            f"{stationarity_tol * (1.0 + f):.3e}"
        )
    d, n = state.d, state.n
    lam = multipliers(L, state)
    base = (d + 1) * np.arange(n)
    rows = (base[:, None, None] + np.arange(d)[None, :, None]) + np.zeros((1, 1, d), dtype=np.int64)
    cols = (base[:, None, None] + np.arange(d)[None, None, :]) + np.zeros((1, d, 1), dtype=np.int64)
    blk = sp.coo_matrix((lam.ravel(), (rows.ravel(), cols.ravel())), shape=L.matrix.shape)
    s = (L.matrix - blk).tocsr()
    return ((s + s.T) * 0.5).tocsr()


def structural_kernel(L: ConnectionLaplacian) -> np.ndarray:
    """Orthonormal columns: one common-translation vector per sigma-connected component."""
    keep = L.sigma > 0
    labels = components(L.n, L.src[keep], L.dst[keep])
    ncomp = int(labels.max()) + 1 if L.n else 0
    out = np.zeros((L.dim, ncomp))
    tcols = (L.d + 1) * np.arange(L.n) + L.d
    out[tcols, labels] = 1.0
    return out / np.sqrt(np.maximum(out.sum(axis=0), 1.0))


def kernel_candidates(L: ConnectionLaplacian, state: LiftedState):
    """Orthonormal bases ``(structural, solution)`` for the expected kernel of S."""
    struct = structural_kernel(L)
    _, _, vt = np.linalg.svd(state.X, full_matrices=False)
    rows = vt[: state.d].T
    rows = rows - struct @ (struct.T @ rows)
    q, _ = np.linalg.qr(rows)
    return struct, q


def _gershgorin_upper(s: sp.csr_matrix) -> float:
    diag = s.diagonal()
    off = np.asarray(abs(s).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.max(diag + off)) if s.shape[0] else 0.0


def lanczos_smallest(s: sp.csr_matrix, deflate: np.ndarray, max_iter: int, tol: float, seed: int = 0):
    """Smallest eigenpair of ``s`` on the orthogonal complement of ``deflate``.

    Lanczos with full reorthogonalization on the shifted operator
    ``c I - P s P`` (``c`` = Gershgorin bound), whose top eigenvalue maps to
    the bottom of the spectrum of ``s``. Returns ``(value, vector, iterations, converged)``.
    """
    dim = s.shape[0]
    free = dim - deflate.shape[1]
    if free <= 0:
        return np.inf, None, 0, True
    shift = _gershgorin_upper(s) + 1e-12

    def project(v):
        return v - deflate @ (deflate.T @ v)

    def apply(v):
        return shift * v - project(s @ v)

    rng = np.random.default_rng(seed)
    v = project(rng.normal(size=dim))
    v /= np.linalg.norm(v)
    max_iter = int(min(max_iter, free))
    basis = np.zeros((max_iter + 1, dim))
    basis[0] = v
    alphas, betas = [], []
    theta, vec, converged = None, None, False
    k = 0
    for k in range(1, max_iter + 1):
        w = apply(basis[k - 1])
        a = float(basis[k - 1] @ w)
        w = w - a * basis[k - 1] - (betas[-1] * basis[k - 2] if betas else 0.0)
        # full reorthogonalization (twice is enough) plus re-deflation
        for _ in range(2):
            w = w - basis[:k].T @ (basis[:k] @ w)
            w = project(w)
        b = float(np.linalg.norm(w))
        alphas.append(a)
        exhausted = b <= 1e-13 * max(shift, 1.0) or k == max_iter
        if k % 10 == 0 or exhausted:
            vals, vecs = eigh_tridiagonal(np.array(alphas), np.array(betas), select="i",
                                          select_range=(k - 1, k - 1))
            theta = float(vals[0])
            resid = abs(b * vecs[-1, 0])
            vec = basis[:k].T @ vecs[:, 0]
            if resid <= tol or exhausted:
                converged = resid <= tol or b <= 1e-13 * max(shift, 1.0) or k == free
                break
        betas.append(b)
        basis[k] = w / b
    return shift - theta, vec, k, converged


def verify(s: sp.csr_matrix, state: LiftedState, L: ConnectionLaplacian, tol_rel: float = 1e-6,
           max_iter: int | None = None, seed: int = 0) -> Certificate:
    d = state.d
    tol = tol_rel * L.inf_norm()
    struct, rows = kernel_candidates(L, state)
    kernel_vals = np.linalg.eigvalsh(rows.T @ (s @ rows)) if rows.shape[1] else np.zeros(0)
    deflate = np.hstack([struct, rows])
    max_iter = max_iter if max_iter is not None else max(10 * state.n, 50)
    lam, vec, iters, converged = lanczos_smallest(s, deflate, max_iter, 1e-3 * tol, seed)
    values = np.sort(np.concatenate([kernel_vals, [lam]]))[: d + 1]
    kernel_ok = np.all(np.abs(kernel_vals) <= tol)
    if not converged:
        verdict, diag = Verdict.INDETERMINATE, f"Lanczos did not converge in {iters} iterations"
    elif lam < -tol:
        verdict, diag = Verdict.NOT_CERTIFIED, "negative curvature beyond the solution kernel"
    elif lam > tol and kernel_ok:
        verdict, diag = Verdict.CERTIFIED, ""
    elif not kernel_ok:
        verdict, diag = Verdict.INDETERMINATE, "solution rows are not in the kernel of S"
    else:
        verdict, diag = Verdict.INDETERMINATE, "lambda_{d+1} within tolerance of zero"
    eigvec = vec if verdict is Verdict.NOT_CERTIFIED else None
    log.debug("certificate: %s, lambda_{d+1}=%.4g tol=%.3g (%d Lanczos steps)", verdict.value,
              values[-1], tol, iters)
    return Certificate(values, verdict, tol, eigvec, iters, diag)
