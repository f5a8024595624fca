"""Galerkin assembly on multi-patch discretizations and the linear solvers.

Element integrals use tensor Gauss rules on the solution mesh of each patch.
Physical derivatives are obtained by pulling back through the geometry map:
``grad_x = J^{-T} grad_xi`` and, for second derivatives,
``H_x = J^{-T} (H_xi - sum_k (d_k N) H(F_k)) J^{-1}``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from .errors import ConfigurationError, ConvergenceError
from .spline import gauss_rule

DENSE_EIGEN_LIMIT = 5000


@dataclass
class ElementBatch:
    """Quadrature data for a group of elements of one patch.

    Shapes use ``ne`` elements, ``nq`` points per element and ``nl`` local
    functions: ``idx`` (ne, nl) global dofs, ``w`` (ne, nq) weights times
    ``|det J|``, ``x`` (ne, nq, 2) physical points, ``N`` (ne, nq, nl),
    ``grad`` (ne, nq, nl, 2), ``hess`` (ne, nq, nl, 3) ordered xx, xy, yy.
    """
    idx: np.ndarray
    w: np.ndarray
    x: np.ndarray
    N: np.ndarray
    grad: np.ndarray = None
    hess: np.ndarray = None

    @property
    def lap(self):
        return self.hess[..., 0] + self.hess[..., 2]


def element_batches(disc, nder=2, extra_points=0):
    """Yield :class:`ElementBatch` objects, one per row of elements of each patch."""
    for patch, space, off in zip(disc.model.patches, disc.spaces, disc.offsets):
        pq = max(space.u.degree, space.v.degree) + 1 + extra_points
        rule = gauss_rule(pq - 1)
        xu, wu = rule.on_elements(space.u.breaks)       # (neu, nq)
        xv, wv = rule.on_elements(space.v.breaks)
        neu = xu.shape[0]
        for ev in range(xv.shape[0]):
            # points ordered (element u, point v, point u)
            XI = np.broadcast_to(xu[:, None, :], (neu, pq, pq)).ravel()
            ETA = np.broadcast_to(xv[ev][None, :, None], (neu, pq, pq)).ravel()
            W = (wu[:, None, :] * wv[ev][None, :, None]).reshape(neu, -1)
            yield _batch(patch, space, off, XI, ETA, W, neu, nder)


def _batch(patch, space, off, XI, ETA, W, ne, nder):
    vals, idx = space.evaluate(XI, ETA, nder)
    geo = patch.map(XI, ETA, 2 if nder == 2 else 1)
    x, J = geo[0], geo[1]
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0], Jinv[:, 1, 1] = J[:, 1, 1] / det, J[:, 0, 0] / det
    Jinv[:, 0, 1], Jinv[:, 1, 0] = -J[:, 0, 1] / det, -J[:, 1, 0] / det
    m, _, nl = vals.shape
    nq = m // ne
    out = ElementBatch(idx=idx.reshape(ne, nq, nl)[:, 0, :] + off,
                       w=W * np.abs(det).reshape(ne, nq), x=x.reshape(ne, nq, 2),
                       N=vals[:, 0].reshape(ne, nq, nl))
    if nder >= 1:
        gxi = vals[:, 1:3].transpose(0, 2, 1)                    # (m, nl, 2)
        grad = np.einsum('mbk,mlb->mlk', Jinv, gxi)               # dN/dx_k
        out.grad = grad.reshape(ne, nq, nl, 2)
    if nder == 2:
        H = geo[2]                                                # (m, 2, 3)
        hxi = vals[:, 3:6]                                        # (m, 3, nl)
        corr = np.einsum('mlk,mkc->mcl', grad, H)                 # sum_k d_k N * F_k''
        h = hxi - corr
        Hm = np.empty((m, nl, 2, 2))
        Hm[..., 0, 0] = h[:, 0]
        Hm[..., 0, 1] = Hm[..., 1, 0] = h[:, 1]
        Hm[..., 1, 1] = h[:, 2]
        Hx = np.einsum('mai,mlab,mbj->mlij', Jinv, Hm, Jinv)
        out.hess = np.stack([Hx[..., 0, 0], Hx[..., 0, 1], Hx[..., 1, 1]], axis=-1).reshape(ne, nq, nl, 3)
    return out


def _accumulate(n, blocks):
    rows, cols, data = [], [], []
    for idx, Ke in blocks:
        nl = idx.shape[1]
        rows.append(np.repeat(idx, nl, axis=1).ravel())
        cols.append(np.tile(idx, (1, nl)).ravel())
        data.append(Ke.ravel())
    if not rows:
        return sp.csr_matrix((n, n))
    A = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _load(n, batch_loads):
    F = np.zeros(n)
    for idx, fe in batch_loads:
        np.add.at(F, idx.ravel(), fe.ravel())
    return F


@dataclass
class AssembledSystem:
    K: sp.csr_matrix
    F: np.ndarray = None
    M: sp.csr_matrix = None


def _rhs_values(f, b):
    return np.asarray(f(b.x[..., 0], b.x[..., 1]), dtype=float) * np.ones(b.w.shape)


def assemble_biharmonic(disc, f=None):
    """``K_ij = int lap N_i lap N_j`` and ``F_i = int f N_i`` over all patches."""
    n = disc.ndofs
    kb, fb = [], []
    for b in element_batches(disc, 2):
        L = b.lap
        kb.append((b.idx, np.einsum('eq,eqi,eqj->eij', b.w, L, L)))
        if f is not None:
            fb.append((b.idx, np.einsum('eq,eqi->ei', b.w * _rhs_values(f, b), b.N)))
    return AssembledSystem(_accumulate(n, kb), _load(n, fb) if f is not None else None)


def assemble_laplace_and_mass(disc, f=None):
    """Stiffness ``int grad N_i . grad N_j`` and mass ``int N_i N_j``."""
    n = disc.ndofs
    kb, mb, fb = [], [], []
    for b in element_batches(disc, 1):
        kb.append((b.idx, np.einsum('eq,eqik,eqjk->eij', b.w, b.grad, b.grad)))
        mb.append((b.idx, np.einsum('eq,eqi,eqj->eij', b.w, b.N, b.N)))
        if f is not None:
            fb.append((b.idx, np.einsum('eq,eqi->ei', b.w * _rhs_values(f, b), b.N)))
    return AssembledSystem(_accumulate(n, kb), _load(n, fb) if f is not None else None,
                           _accumulate(n, mb))


def assemble_h2_gram(disc):
    """Gram matrix of the broken H2 inner product (L2 + H1 + H2 seminorms)."""
    n = disc.ndofs
    blocks = []
    for b in element_batches(disc, 2):
        H = b.hess * np.array([1.0, np.sqrt(2.0), 1.0])
        Ke = (np.einsum('eq,eqi,eqj->eij', b.w, b.N, b.N)
              + np.einsum('eq,eqik,eqjk->eij', b.w, b.grad, b.grad)
              + np.einsum('eq,eqik,eqjk->eij', b.w, H, H))
        blocks.append((b.idx, Ke))
    return _accumulate(n, blocks)


def assemble_h2_rhs(disc, solution):
    """``<N_i, u>_{H2*}`` for a manufactured solution."""
    loads = []
    for b in element_batches(disc, 2, extra_points=1):
        d = solution.derivatives(b.x[..., 0], b.x[..., 1])       # (6, ne, nq)
        fe = (np.einsum('eq,eqi->ei', b.w * d[0], b.N)
              + np.einsum('eq,eqik,keq->ei', b.w, b.grad, d[1:3])
              + np.einsum('eq,eqik,keq->ei', b.w, b.hess * np.array([1.0, 2.0, 1.0]), d[3:6]))
        loads.append((b.idx, fe))
    return _load(disc.ndofs, loads)


def error_norms(disc, u, solution):
    """L2 and broken H2 errors of the dof vector ``u`` against ``solution``.

    Uses ``p + 2`` Gauss points per direction.
    """
    l2 = h1 = h2 = 0.0
    u = np.asarray(u, dtype=float)
    for b in element_batches(disc, 2, extra_points=1):
        d = solution.derivatives(b.x[..., 0], b.x[..., 1])
        coef = u[b.idx]                                            # (ne, nl)
        e0 = d[0] - np.einsum('eqi,ei->eq', b.N, coef)
        eg = d[1:3] - np.einsum('eqik,ei->keq', b.grad, coef)
        eh = d[3:6] - np.einsum('eqik,ei->keq', b.hess, coef)
        l2 += np.sum(b.w * e0 ** 2)
        h1 += np.sum(b.w * (eg ** 2).sum(axis=0))
        h2 += np.sum(b.w * (eh[0] ** 2 + 2 * eh[1] ** 2 + eh[2] ** 2))
    return float(np.sqrt(l2)), float(np.sqrt(l2 + h1 + h2))


def interpolate(disc, func):
    """Spline coefficients matching ``func(x, y)`` at the Greville points of each patch."""
    u = np.zeros(disc.ndofs)
    for patch, space, off in zip(disc.model.patches, disc.spaces, disc.offsets):
        gu, gv = _greville(space.u), _greville(space.v)
        Au, Av = space.u.collocation(gu), space.v.collocation(gv)
        XI, ETA = np.meshgrid(gu, gv)                     # (nv, nu)
        X = patch.map(XI.ravel(), ETA.ravel())[0]
        vals = np.asarray(func(X[:, 0], X[:, 1]), dtype=float) * np.ones(X.shape[0])
        coef = np.linalg.solve(Av, np.linalg.solve(Au, vals.reshape(XI.shape).T).T)
        u[off:off + space.dim] = coef.ravel()
    return u


def _greville(space):
    p, kv = space.degree, space.knots
    return np.array([kv[i + 1:i + p + 1].mean() for i in range(space.dim)])


def evaluate_field(disc, u, pid, xi, eta):
    """Value of the dof vector ``u`` on patch ``pid`` at parametric points."""
    space = disc.space(pid)
    vals, idx = space.evaluate(np.atleast_1d(xi), np.atleast_1d(eta), 0)
    return np.sum(vals[:, 0] * np.asarray(u)[idx + disc.offset(pid)], axis=1)


# ------------------------------------------------------------------- solvers

def solve_cg(A, b, tol=1e-12, max_iters=None, x0=None):
    """Jacobi-preconditioned conjugate gradients on an SPD system.

    Raises:
        ConvergenceError: the relative residual stays above ``tol``; the
            exception carries the residual history.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iters = max_iters or max(10 * n, 100)
    d = A.diagonal()
    if np.any(d <= 0):
        raise ConfigurationError('matrix diagonal must be positive for Jacobi CG')
    Minv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    z = Minv * r
    pdir = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / bnorm]
    for _ in range(max_iters):
        if hist[-1] <= tol:
            # the recursive residual drifts; confirm with the true one
            r = b - A @ x
            hist[-1] = np.linalg.norm(r) / bnorm
            if hist[-1] <= tol:
                return x
            z = Minv * r
            pdir = z.copy()
            rz = r @ z
        Ap = A @ pdir
        alpha = rz / (pdir @ Ap)
        x += alpha * pdir
        r -= alpha * Ap
        hist.append(np.linalg.norm(r) / bnorm)
        z = Minv * r
        rz_new = r @ z
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    if np.linalg.norm(b - A @ x) / bnorm <= tol:
        return x
    raise ConvergenceError('CG did not converge: relative residual %.3e after %d iterations'
                           % (hist[-1], len(hist) - 1), hist)


def solve_direct(A, b):
    """Sparse LU solve."""
    return spla.spsolve(sp.csc_matrix(A), np.asarray(b, dtype=float))


def solve_generalized_eigen(K, M, which='full', k=6, dense_limit=DENSE_EIGEN_LIMIT):
    """Eigenvalues of ``K x = lam M x`` sorted ascending.

    ``which`` is ``'full'``, ``'largest'`` (one value) or ``'smallest'``
    (``k`` values).  Problems up to ``dense_limit`` unknowns use a dense
    Cholesky-reduced solve; larger ones use Lanczos (shift-invert at zero
    for the smallest values).
    """
    n = K.shape[0]
    if which not in ('full', 'largest', 'smallest'):
        raise ConfigurationError('which must be full, largest or smallest')
    if which == 'full' or n <= dense_limit:
        try:
            lam = eigh(_dense(K), _dense(M), eigvals_only=True)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError('mass matrix is not positive definite') from exc
        if which == 'largest':
            return lam[-1:]
        if which == 'smallest':
            return lam[:k]
        return lam
    K, M = sp.csc_matrix(K), sp.csc_matrix(M)
    if which == 'largest':
        lam = spla.eigsh(K, k=1, M=M, which='LA', return_eigenvectors=False, tol=1e-10)
    else:
        lam = spla.eigsh(K, k=k, M=M, sigma=0.0, which='LM', return_eigenvectors=False)
    return np.sort(lam)


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def h2star_projection(disc, ns, solution, gram=None):
    """Best approximation of ``solution`` in the condensed space, broken H2 product."""
    G = assemble_h2_gram(disc) if gram is None else gram
    rhs = assemble_h2_rhs(disc, solution)
    Gm = (ns.C.T @ G[ns.free][:, ns.free] @ ns.C).tocsc()
    coeffs = spla.spsolve(Gm, ns.C.T @ rhs[ns.free])
    return np.atleast_1d(coeffs)
