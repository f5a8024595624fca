"""Univariate and tensor-product B-spline spaces.

Evaluation uses the Cox-de Boor recursion with derivatives, vectorized over
points. Bezier extraction follows the knot-insertion algorithm, so that on
element ``e`` the active B-splines satisfy ``N = C @ B`` with ``B`` the
Bernstein polynomials of the element.
"""
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DomainError, MeshTooCoarseError

MAX_DEGREE = 5


class SplineSpace1D:
    """Open knot vector together with a polynomial degree.

    Args:
        degree (int): spline degree ``p``, between 1 and :data:`MAX_DEGREE`.
        knots (array_like): non-decreasing open knot vector whose first and
            last entries are repeated ``p + 1`` times.
    """

    def __init__(self, degree, knots):
        p = int(degree)
        if not 1 <= p <= MAX_DEGREE:
            raise ValueError('degree must be between 1 and %d, got %d' % (MAX_DEGREE, p))
        kv = np.array(knots, dtype=float)
        if kv.ndim != 1 or kv.size < 2 * (p + 1):
            raise ValueError('knot vector too short for degree %d' % p)
        if np.any(np.diff(kv) < 0):
            raise ValueError('knots must be non-decreasing')
        if np.any(kv[:p + 1] != kv[0]) or np.any(kv[-p - 1:] != kv[-1]):
            raise ValueError('knot vector must be open (end knots repeated p+1 times)')
        inner = kv[p + 1:-p - 1]
        if inner.size:
            _, mult = np.unique(inner, return_counts=True)
            if mult.max() > p:
                raise ValueError('interior knot multiplicity exceeds degree')
        kv.setflags(write=False)
        self.degree = p
        self.knots = kv
        self.breaks = np.unique(kv)
        self.breaks.setflags(write=False)

    def __repr__(self):
        return 'SplineSpace1D(%d, %s)' % (self.degree, list(self.knots))

    def __eq__(self, other):
        return (isinstance(other, SplineSpace1D) and self.degree == other.degree
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    @property
    def dim(self):
        return self.knots.size - self.degree - 1

    @property
    def n_elements(self):
        return self.breaks.size - 1

    @property
    def interval(self):
        return float(self.knots[0]), float(self.knots[-1])

    def element_spans(self):
        """Return an ``(n_elements, 2)`` array of element endpoints."""
        return np.column_stack([self.breaks[:-1], self.breaks[1:]])

    def element_first_index(self):
        """Index of the first active basis function on each element."""
        mids = 0.5 * (self.breaks[:-1] + self.breaks[1:])
        return self.find_span(mids) - self.degree

    def element_index(self, x):
        """Index of the element containing ``x`` (right end goes to the last one)."""
        x = np.asarray(x, dtype=float)
        e = np.searchsorted(self.breaks, x, side='right') - 1
        return np.clip(e, 0, self.n_elements - 1)

    def support(self, i):
        return float(self.knots[i]), float(self.knots[i + self.degree + 1])

    def find_span(self, x):
        """Knot span index ``mu`` with ``knots[mu] <= x < knots[mu+1]``.

        The right end of the interval is assigned to the last nonempty span,
        i.e. evaluation there is the limit from inside.
        """
        x = np.asarray(x, dtype=float)
        a, b = self.interval
        tol = 1e-12 * max(1.0, b - a)
        if np.any(x < a - tol) or np.any(x > b + tol):
            raise DomainError('parameter outside knot range [%g, %g]' % (a, b))
        span = np.searchsorted(self.knots, x, side='right') - 1
        return np.clip(span, self.degree, self.dim - 1)

    def eval_basis(self, x, deriv_order=0):
        """Evaluate the ``p+1`` active basis functions (or a derivative) at ``x``.

        Returns:
            tuple: ``(values, first)`` where ``values`` has length ``p+1`` and
            ``first`` is the global index of the first active function.
        """
        if deriv_order > self.degree:
            raise ValueError('derivative order exceeds degree')
        ders, first = self.eval_ders(np.atleast_1d(float(x)), deriv_order)
        return ders[0, deriv_order], int(first[0])

    def eval_ders(self, x, nder=0, span=None):
        """Vectorized evaluation of active basis functions and derivatives.

        Args:
            x (ndarray): parameter values, shape ``(m,)``.
            nder (int): highest derivative order.
            span (ndarray, optional): precomputed knot spans; use this to force
                one-sided evaluation at element boundaries.

        Returns:
            tuple: ``ders`` of shape ``(m, nder+1, p+1)`` and ``first`` of
            shape ``(m,)``.
        """
        x = np.asarray(x, dtype=float)
        if span is None:
            span = self.find_span(x)
        ders = _ders_basis(self.knots, self.degree, span, x, nder)
        return ders, span - self.degree

    def collocation(self, x, deriv_order=0):
        """Dense matrix ``A[k, i] = N_i^{(d)}(x_k)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ders, first = self.eval_ders(x, deriv_order)
        A = np.zeros((x.size, self.dim))
        rows = np.arange(x.size)[:, None]
        cols = first[:, None] + np.arange(self.degree + 1)
        A[rows, cols] = ders[:, deriv_order, :]
        return A

    def integrals(self):
        """Integrals of all basis functions over the parametric interval."""
        p = self.degree
        return (self.knots[p + 1:] - self.knots[:-p - 1]) / (p + 1)

    def refine(self, levels=1):
        """Uniform refinement: bisect every nonempty span ``levels`` times."""
        kv = self.knots
        for _ in range(levels):
            br = np.unique(kv)
            kv = np.sort(np.concatenate([kv, 0.5 * (br[:-1] + br[1:])]))
        return SplineSpace1D(self.degree, kv)

    def with_degree(self, degree):
        """Same breakpoints (single interior knots) with a different degree."""
        br = self.breaks
        return SplineSpace1D(degree, np.r_[[br[0]] * degree, br, [br[-1]] * degree])

    def extraction_operators(self):
        """Bezier extraction of every element, see :func:`extraction_operators`."""
        return extraction_operators(self)

    def remove_knots_near_ends(self):
        """Coarsened space without the two interior knots nearest each end."""
        return remove_knots_near_ends(self)


def uniform_space(degree, n_elements, a=0.0, b=1.0):
    """Open uniform knot vector on ``[a, b]`` with single interior knots."""
    br = np.linspace(a, b, n_elements + 1)
    return SplineSpace1D(degree, np.r_[[a] * degree, br, [b] * degree])


def _ders_basis(knots, p, span, x, nder):
    # Cox-de Boor with derivatives, vectorized over the points
    m = x.size
    ndu = np.zeros((m, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((m, nder + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    for r in range(p + 1):
        a = np.zeros((m, 2, p + 1))
        a[:, 0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, nder + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nder + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return ders


def bernstein(p, t, nder=0):
    """Bernstein polynomials of degree ``p`` on ``[0, 1]`` and derivatives.

    Returns an array of shape ``(len(t), nder+1, p+1)``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((t.size, nder + 1, p + 1))
    for d in range(nder + 1):
        q = p - d
        if q < 0:
            break
        # d-th derivative: p!/(p-d)! * sum_k (-1)^(d-k) C(d,k) B^{p-d}_{i-k}
        scale = np.prod(np.arange(p, p - d, -1), dtype=float) if d else 1.0
        low = np.zeros((t.size, q + 1))
        for i in range(q + 1):
            low[:, i] = comb(q, i) * t ** i * (1 - t) ** (q - i)
        for i in range(p + 1):
            acc = np.zeros(t.size)
            for k in range(d + 1):
                j = i - k
                if 0 <= j <= q:
                    acc += (-1) ** (d - k) * comb(d, k) * low[:, j]
            out[:, d, i] = scale * acc
    return out


def bernstein_gramian(p, span_length=1.0):
    """Closed-form Gramian of the degree-``p`` Bernstein basis on a span."""
    if p < 1 or span_length <= 0:
        raise ValueError('need p >= 1 and a positive span length')
    i = np.arange(p + 1)
    binom = np.array([comb(p, k) for k in i], dtype=float)
    binom2 = np.array([comb(2 * p, k) for k in range(2 * p + 1)], dtype=float)
    G = np.outer(binom, binom) / binom2[i[:, None] + i[None, :]] / (2 * p + 1)
    return span_length * G


@dataclass(frozen=True)
class BezierElement1D:
    index: int
    span: tuple
    first: int
    C: np.ndarray
    R: np.ndarray
    G: np.ndarray

    @property
    def length(self):
        return self.span[1] - self.span[0]


def extraction_operators(space):
    """Bezier extraction operators of all nonempty spans.

    Computed by successive knot insertion; each reconstruction operator is
    the inverse of the element operator.
    """
    ops = _extraction_matrices(space)
    p = space.degree
    spans = space.element_spans()
    firsts = space.element_first_index()
    elements = []
    for e, Ce in enumerate(ops):
        Ce.setflags(write=False)
        L = float(spans[e, 1] - spans[e, 0])
        if not np.linalg.cond(Ce) < 1e14:
            raise ArithmeticError('singular extraction operator on element %d' % e)
        R = np.linalg.inv(Ce)
        if not np.all(np.isfinite(R)):
            raise ArithmeticError('singular extraction operator on element %d' % e)
        elements.append(BezierElement1D(e, (float(spans[e, 0]), float(spans[e, 1])),
                                        int(firsts[e]), Ce, R, bernstein_gramian(p, L)))
    return elements


def _extraction_matrices(space):
    p, U = space.degree, space.knots
    m = U.size
    ops = [np.eye(p + 1)]
    a, b = p + 1, p + 2          # 1-based positions
    while b < m:
        ops.append(np.eye(p + 1))
        i = b
        while b < m and U[b] == U[b - 1]:
            b += 1
        mult = b - i + 1
        if mult < p:
            numer = U[b - 1] - U[a - 1]
            alphas = np.zeros(p + 1)
            for j in range(p, mult, -1):
                alphas[j - mult] = numer / (U[a + j - 1] - U[a - 1])
            r = p - mult
            cur, nxt = ops[-2], ops[-1]
            for j in range(1, r + 1):
                save = r - j + 1
                s = mult + j
                for k in range(p + 1, s, -1):
                    alpha = alphas[k - s]
                    cur[:, k - 1] = alpha * cur[:, k - 1] + (1 - alpha) * cur[:, k - 2]
                if b < m:
                    nxt[save - 1:j + save, save - 1] = cur[p - j:p + 1, p]
        if b < m:
            a = b
            b += 1
    return ops[:space.n_elements]


def remove_knots_near_ends(space):
    p = space.degree
    inner = space.knots[p + 1:-p - 1]
    if inner.size < 4 or np.unique(inner).size < 4:
        raise MeshTooCoarseError('mesh too coarse for vertex modification '
                                 '(%d interior knots, need 4)' % inner.size)
    kv = np.r_[space.knots[:p + 1], inner[2:-2], space.knots[-p - 1:]]
    return SplineSpace1D(p, kv)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference interval ``[0, 1]``."""
    points: np.ndarray
    weights: np.ndarray

    @property
    def order(self):
        return self.points.size

    def on_interval(self, a, b):
        return a + (b - a) * self.points, (b - a) * self.weights

    def on_elements(self, breaks):
        """Points and weights for all spans of ``breaks``, shape ``(ne, nq)``."""
        br = np.asarray(breaks, dtype=float)
        h = np.diff(br)[:, None]
        return br[:-1, None] + h * self.points[None, :], h * self.weights[None, :]


def gauss_rule(p):
    """``p + 1`` point Gauss-Legendre rule, exact for degree ``2p + 1``."""
    if p < 1:
        raise ValueError('p must be at least 1')
    x, w = np.polynomial.legendre.leggauss(p + 1)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w)


class TensorSpace2D:
    """Tensor product of two univariate spaces, ``u`` index running fastest."""

    def __init__(self, u_space, v_space):
        self.u = u_space
        self.v = v_space

    def __repr__(self):
        return 'TensorSpace2D(%r, %r)' % (self.u, self.v)

    @property
    def shape(self):
        return self.u.dim, self.v.dim

    @property
    def dim(self):
        return self.u.dim * self.v.dim

    def index(self, iu, iv):
        return np.asarray(iv) * self.u.dim + np.asarray(iu)

    def multi_index(self, k):
        k = np.asarray(k)
        return k % self.u.dim, k // self.u.dim

    def refine(self, levels=1):
        return TensorSpace2D(self.u.refine(levels), self.v.refine(levels))

    def evaluate(self, xi, eta, nder=1):
        """Active functions at points ``(xi, eta)`` with derivatives up to ``nder``.

        Returns:
            tuple: ``(vals, idx)`` where ``vals[k, d]`` for
            ``d in (N, N_xi, N_eta, N_xixi, N_xieta, N_etaeta)`` (truncated to
            ``nder``) has shape ``(m, (p_u+1)*(p_v+1))`` and ``idx`` the global
            indices of shape ``(m, nloc)``.
        """
        du, fu = self.u.eval_ders(xi, nder)
        dv, fv = self.v.eval_ders(eta, nder)
        return _tensor_combine(du, dv, nder), self._local_indices(fu, fv)

    def _local_indices(self, fu, fv):
        pu, pv = self.u.degree, self.v.degree
        iu = fu[:, None] + np.arange(pu + 1)[None, :]
        iv = fv[:, None] + np.arange(pv + 1)[None, :]
        return (iv[:, :, None] * self.u.dim + iu[:, None, :]).reshape(len(fu), -1)


_DERIV_PAIRS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def _tensor_combine(du, dv, nder):
    n_out = {0: 1, 1: 3, 2: 6}[nder]
    m = du.shape[0]
    out = np.empty((m, n_out, dv.shape[2] * du.shape[2]))
    for k, (a, b) in enumerate(_DERIV_PAIRS[:n_out]):
        out[:, k] = (dv[:, b, :, None] * du[:, a, None, :]).reshape(m, -1)
    return out
