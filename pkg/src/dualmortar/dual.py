"""Dual bases of univariate B-spline spaces.

Every dual function is stored piecewise: on each element of the primal space
it is a polynomial given by Bernstein coefficients.  This single representation
serves the global dual, the element-local Bezier dual and their coarsened
variants used near vertices.
"""
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .errors import MeshTooCoarseError
from .spline import bernstein, gauss_rule, remove_knots_near_ends


class DualKind(str, Enum):
    GLOBAL = 'Global'
    BEZIER = 'Bezier'
    GLOBAL_COARSENED = 'GlobalCoarsened'
    BEZIER_MODIFIED = 'BezierModified'

    @property
    def coarsened(self):
        return self in (DualKind.GLOBAL_COARSENED, DualKind.BEZIER_MODIFIED)


class DualBasis:
    """Dual functions of ``source`` with element-wise Bernstein coefficients.

    Dual function ``i`` is biorthogonal to primal function ``i + offset``;
    ``offset`` is 0 for the plain kinds and 2 for the coarsened ones.

    Attributes:
        kind (DualKind): construction used.
        source (SplineSpace1D): primal space.
        bern (ndarray): shape ``(dim, n_elements, p+1)``.
        coefficients (ndarray or None): B-spline coefficients of global kinds
            (rows are dual functions; columns refer to ``coefficient_space``).
        coefficient_space (SplineSpace1D or None): space of those coefficients.
        weights (ndarray or None): Bezier projection weights, ``(n_elements, p+1)``.
        operators (list or None): per-element Bezier dual operators.
    """

    def __init__(self, kind, source, bern, offset=0, coefficients=None,
                 coefficient_space=None, weights=None, operators=None):
        self.kind = DualKind(kind)
        self.source = source
        self.bern = np.asarray(bern, dtype=float)
        self.bern.setflags(write=False)
        self.offset = int(offset)
        self.coefficients = coefficients
        self.coefficient_space = coefficient_space
        self.weights = weights
        self.operators = operators

    def __repr__(self):
        return 'DualBasis(%s, dim=%d)' % (self.kind.value, self.dim)

    @property
    def dim(self):
        return self.bern.shape[0]

    @property
    def degree(self):
        return self.source.degree

    def partner(self, i):
        """Primal index paired with dual function ``i``."""
        return np.asarray(i) + self.offset

    def unpaired(self):
        """Primal indices without a dual partner (the ends of coarsened kinds)."""
        n = self.source.dim
        return sorted(set(range(n)) - set(range(self.offset, self.offset + self.dim)))

    def support(self, i, tol=0.0):
        """Union of elements on which dual ``i`` is not identically zero."""
        active = np.flatnonzero(np.abs(self.bern[i]).max(axis=1) > tol)
        br = self.source.breaks
        return float(br[active[0]]), float(br[active[-1] + 1])

    def active(self, e, tol=0.0):
        """Dual indices that do not vanish on element ``e``."""
        return np.flatnonzero(np.abs(self.bern[:, e, :]).max(axis=1) > tol)

    def evaluate(self, x):
        """Values of all dual functions at ``x``, shape ``(len(x), dim)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self.source.find_span(x)  # domain check
        br = self.source.breaks
        e = self.source.element_index(x)
        t = (x - br[e]) / (br[e + 1] - br[e])
        B = bernstein(self.degree, t)[:, 0, :]
        return np.einsum('mk,dmk->md', B, self.bern[:, e, :])

    def primal_pairing(self):
        """Exact matrix ``P[i, j] = <dual_i, N_j>`` from element Gramians."""
        space = self.source
        P = np.zeros((self.dim, space.dim))
        p = space.degree
        for el in space.extraction_operators():
            P[:, el.first:el.first + p + 1] += self.bern[:, el.index, :] @ el.G @ el.C.T
        return P

    def quasi_interpolate(self, f, n_quad=None):
        """Coefficients ``<dual_i, f>`` by Gauss quadrature on each element."""
        rule = gauss_rule((n_quad or self.degree + 1) - 1)
        x, w = rule.on_elements(self.source.breaks)
        B = bernstein(self.degree, rule.points)[:, 0, :]
        fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
        # sum over elements e, points q, Bernstein k
        return np.einsum('eq,qk,dek->d', fx * w, B, self.bern)

    def gram(self):
        """Exact Gramian ``<dual_i, dual_j>`` of the dual functions."""
        p = self.degree
        out = np.zeros((self.dim, self.dim))
        for el in self.source.extraction_operators():
            act = self.active(el.index)
            b = self.bern[act, el.index, :]
            out[np.ix_(act, act)] += b @ el.G @ b.T
        return out

    def l2_projection(self, f, n_quad=None):
        """Coefficients of the L2-orthogonal projection of ``f`` onto the dual span."""
        rhs = self.quasi_interpolate(f, n_quad)
        return cho_solve(cho_factor(self.gram()), rhs)

    def l2_error(self, coeffs, f, n_quad=None):
        """L2 norm of ``f - sum_i coeffs[i] dual_i``."""
        rule = gauss_rule((n_quad or self.degree + 3) - 1)
        x, w = rule.on_elements(self.source.breaks)
        B = bernstein(self.degree, rule.points)[:, 0, :]
        approx = np.einsum('d,dek,qk->eq', np.asarray(coeffs), self.bern, B)
        fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
        return float(np.sqrt(np.sum(w * (fx - approx) ** 2)))

    def projection(self, f, n_quad=None):
        """Spline coefficients of the quasi-interpolant in the source space."""
        c = np.zeros(self.source.dim)
        c[self.offset:self.offset + self.dim] = self.quasi_interpolate(f, n_quad)
        return c


def spline_l2_error(space, coeffs, f, n_quad=None):
    """L2 norm of ``f - sum_i coeffs[i] N_i`` on the parametric interval."""
    p = space.degree
    rule = gauss_rule((n_quad or p + 3) - 1)
    x, w = rule.on_elements(space.breaks)
    x, w = x.ravel(), w.ravel()
    ders, first = space.eval_ders(x, 0)
    idx = first[:, None] + np.arange(p + 1)
    uh = np.sum(ders[:, 0, :] * np.asarray(coeffs)[idx], axis=1)
    return float(np.sqrt(np.sum(w * (np.asarray(f(x), dtype=float) - uh) ** 2)))


def _element_bernstein(space):
    """Bernstein coefficients of every primal function on every element."""
    p = space.degree
    out = np.zeros((space.dim, space.n_elements, p + 1))
    for el in space.extraction_operators():
        out[el.first:el.first + p + 1, el.index, :] = el.C
    return out


def _restricted_bernstein(coarse, fine):
    """Bernstein coefficients of ``coarse`` functions on the elements of ``fine``.

    ``coarse`` must be nested in ``fine`` (its breakpoints are a subset).
    """
    p = fine.degree
    t = (np.arange(p + 1) + 0.5) / (p + 1)
    V = lu_factor(bernstein(p, t)[:, 0, :])
    out = np.zeros((coarse.dim, fine.n_elements, p + 1))
    for e, (a, b) in enumerate(fine.element_spans()):
        x = a + (b - a) * t
        span = np.full(p + 1, coarse.find_span(0.5 * (a + b)))
        vals, first = coarse.eval_ders(x, 0, span=span)
        out[first[0]:first[0] + p + 1, e, :] = lu_solve(V, vals[:, 0, :]).T
    return out


def _gramian(space):
    p = space.degree
    G = np.zeros((space.dim, space.dim))
    for el in space.extraction_operators():
        s = slice(el.first, el.first + p + 1)
        G[s, s] += el.C @ el.G @ el.C.T
    return G


def build_global_dual(space):
    """Global dual: rows of the inverse Gramian, supported on the whole interval."""
    G = _gramian(space)
    try:
        Ginv = cho_solve(cho_factor(G), np.eye(space.dim))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - valid spaces are SPD
        raise ArithmeticError('singular Gramian') from exc
    bern = np.einsum('ij,jek->iek', Ginv, _element_bernstein(space))
    return DualBasis(DualKind.GLOBAL, space, bern, coefficients=Ginv,
                     coefficient_space=space)


def bezier_weights(space):
    """Projection weights ``w[e, a]`` of the local function ``a`` on element ``e``."""
    p = space.degree
    total = space.integrals()
    w = np.zeros((space.n_elements, p + 1))
    for el in space.extraction_operators():
        # integral of each Bernstein polynomial is L/(p+1)
        w[el.index] = el.C.sum(axis=1) * el.length / (p + 1) / total[el.first:el.first + p + 1]
    return w


def build_bezier_dual(space):
    """Element-local Bezier dual with ``D = diag(w) R^T G^{-1}`` per element."""
    p = space.degree
    w = bezier_weights(space)
    bern = np.zeros((space.dim, space.n_elements, p + 1))
    ops = []
    for el in space.extraction_operators():
        D = w[el.index][:, None] * np.linalg.solve(el.G, el.R).T
        ops.append(D)
        bern[el.first:el.first + p + 1, el.index, :] = D
    return DualBasis(DualKind.BEZIER, space, bern, weights=w, operators=ops)


def build_global_dual_coarsened(space):
    """Global dual of the end-coarsened space, paired with primal ``i + 2``.

    The coefficients solve ``A M = I`` with the mixed Gramian
    ``M[k, j] = <Nc_k, N_{j+2}>``.
    """
    coarse = remove_knots_near_ends(space)
    bc = _restricted_bernstein(coarse, space)
    n = space.dim
    M = np.zeros((coarse.dim, n))
    p = space.degree
    for el in space.extraction_operators():
        M[:, el.first:el.first + p + 1] += bc[:, el.index, :] @ el.G @ el.C.T
    M = M[:, 2:n - 2]
    A = np.linalg.solve(M.T, np.eye(coarse.dim)).T
    bern = np.einsum('ij,jek->iek', A, bc)
    return DualBasis(DualKind.GLOBAL_COARSENED, space, bern, offset=2,
                     coefficients=A, coefficient_space=coarse)


def build_bezier_dual_modified(space):
    """Bezier dual with the three functions nearest each end lumped together."""
    n = space.dim
    if n < 8:
        raise MeshTooCoarseError('space too small for the modified Bezier dual '
                                 '(dimension %d, need 8)' % n)
    plain = build_bezier_dual(space)
    b = plain.bern
    bern = np.concatenate([b[0:3].sum(axis=0, keepdims=True),
                           b[3:n - 3],
                           b[n - 3:n].sum(axis=0, keepdims=True)])
    return DualBasis(DualKind.BEZIER_MODIFIED, space, bern, offset=2,
                     weights=plain.weights, operators=plain.operators)


_BUILDERS = {
    DualKind.GLOBAL: build_global_dual,
    DualKind.BEZIER: build_bezier_dual,
    DualKind.GLOBAL_COARSENED: build_global_dual_coarsened,
    DualKind.BEZIER_MODIFIED: build_bezier_dual_modified,
}


def build_dual(space, kind):
    """Dispatch on :class:`DualKind` (or its string value)."""
    return _BUILDERS[DualKind(kind)](space)
