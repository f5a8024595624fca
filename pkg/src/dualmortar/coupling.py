"""Mortar constraints between patches and the sparse null-space basis.

Constraints are tested in the slave edge parameter ``t``.  For every
interface the C0 rows read ``int lam_j [u_s - u_m] dt`` and the C1 rows
``(1/c) int lam_j d/dxi_n [u_s - u_m o E] dt`` with ``xi_n`` the slave
parametric direction normal to the edge and ``c`` the derivative of the
second univariate function at the edge, so that the slave blocks become
identities.  The jump convention is slave minus master.

The null space is built in two stages.  Rows whose partner slave dof is
available form a unit upper-triangular block and are eliminated directly.
The remaining rows (vertex rows and rows whose partner sits in a vertex
corner block) only touch a handful of columns of that first basis, which
are recombined with a small pivoted QR factorization.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import qr, solve_triangular

from .dual import DualKind, build_dual
from .errors import AssemblyError, ConfigurationError
from .model import (edge_normal_dir, edge_side, gluing_jacobian, gluing_map,
                    interface_quadrature)

STRATEGIES = {
    'MG': DualKind.GLOBAL_COARSENED,
    'MB': DualKind.BEZIER_MODIFIED,
    'OG': DualKind.GLOBAL,
    'OB': DualKind.BEZIER,
    'G': DualKind.GLOBAL,
    'B': DualKind.BEZIER,
}
SNAP_TOL = 1e-13
QR_RANK_TOL = 1e-10
BC_LAYERS = {'clamped': 2, 'fixed': 1}


def strategy_kind(strategy):
    try:
        return STRATEGIES[strategy]
    except KeyError:
        raise ConfigurationError('unknown strategy %r (choose from %s)'
                                 % (strategy, ', '.join(STRATEGIES))) from None


def multiplier_scaling(space, edge):
    """Derivative of the second (or second-to-last) normal function at ``edge``."""
    normal = space.u if edge_normal_dir(edge) == 0 else space.v
    if edge_side(edge) == 0:
        ders, first = normal.eval_ders(np.array([normal.interval[0]]), 1)
        c = ders[0, 1, 1 - first[0]]
    else:
        ders, first = normal.eval_ders(np.array([normal.interval[1]]), 1)
        c = ders[0, 1, normal.dim - 2 - first[0]]
    if c == 0:  # pragma: no cover - impossible for open knot vectors
        raise AssemblyError('zero multiplier scaling')
    return float(c)


def trace_space(space, edge):
    return space.v if edge_normal_dir(edge) == 0 else space.u


def _edge_dof(disc, pid, edge, layer, j):
    """Global dof at normal ``layer`` and trace index ``j`` of ``edge``."""
    return disc.offset(pid) + int(disc.edge_dofs(pid, edge, layer)[j])


# ------------------------------------------------------------ classification

@dataclass
class DofClassification:
    """Index sets of the basis-function types around interfaces and vertices.

    Per interface: ``i`` slave functions one layer off the interface, ``ii``
    slave functions on it, ``iii``/``iv`` the master counterparts and ``v``
    the rest of the two patches.  ``vi`` collects the 2x2 corner blocks of
    every patch at a junction vertex; it is removed from the other sets.
    """
    per_interface: list
    vi: set


def junction_vertices(model):
    """Vertices needing vertex treatment: interior ones or those joining ≥2 interfaces."""
    out = []
    for v in model.vertices:
        touching = 0
        for itf in model.interfaces:
            for pid, edge in ((itf.slave, itf.slave_edge),):
                for cu, cv in _edge_corners(edge):
                    if (pid, (cu, cv)) in v.incidences:
                        touching += 1
        if v.interior or touching >= 2:
            out.append(v)
    return out


def _edge_corners(edge):
    s = edge_side(edge)
    return [(s, 0), (s, 1)] if edge_normal_dir(edge) == 0 else [(0, s), (1, s)]


def corner_block(disc, pid, corner):
    """Global dofs of the 2x2 block at parametric ``corner`` of patch ``pid``."""
    sp_ = disc.space(pid)
    nu, nv = sp_.shape
    cu, cv = corner
    iu = [0, 1] if cu == 0 else [nu - 2, nu - 1]
    iv = [0, 1] if cv == 0 else [nv - 2, nv - 1]
    return {disc.offset(pid) + int(sp_.index(a, b)) for a in iu for b in iv}


def classify_dofs(disc):
    model = disc.model
    vi = set()
    for v in junction_vertices(model):
        for pid, corner in v.incidences:
            vi |= corner_block(disc, pid, corner)
    per = []
    for itf in model.interfaces:
        sets = {}
        sets['ii'] = set((disc.offset(itf.slave) + disc.edge_dofs(itf.slave, itf.slave_edge, 0)).tolist())
        sets['i'] = set((disc.offset(itf.slave) + disc.edge_dofs(itf.slave, itf.slave_edge, 1)).tolist())
        sets['iii'] = set((disc.offset(itf.master) + disc.edge_dofs(itf.master, itf.master_edge, 0)).tolist())
        sets['iv'] = set((disc.offset(itf.master) + disc.edge_dofs(itf.master, itf.master_edge, 1)).tolist())
        both = set()
        for pid in (itf.slave, itf.master):
            o = disc.offset(pid)
            both |= set(range(o, o + disc.space(pid).dim))
        sets['v'] = both - sets['i'] - sets['ii'] - sets['iii'] - sets['iv']
        per.append({k: s - vi for k, s in sets.items()})
    return DofClassification(per, vi)


# ------------------------------------------------------------ assembly

@dataclass
class RowInfo:
    interface: int          # -1 for vertex rows
    kind: str               # 'B0', 'B1' or 'Bv'
    index: int              # multiplier index or vertex number
    pivot: int = -1         # global dof eliminated by this row, -1 if none


@dataclass
class ConstraintSystem:
    """Assembled constraint rows over all dofs of a discretization.

    ``B`` has one column per dof (boundary dofs included); ``free`` lists the
    dofs left after strong boundary conditions.
    """
    disc: object
    strategy: str
    continuity: str
    B: sp.csr_matrix
    rows: list
    free: np.ndarray
    eliminated: np.ndarray
    scaling: list
    duals: list
    classification: DofClassification
    dropped: int = 0

    def block(self, kind):
        idx = [k for k, r in enumerate(self.rows) if r.kind == kind]
        return self.B[idx]

    @property
    def B0(self):
        return self.block('B0')

    @property
    def B1(self):
        return self.block('B1')

    @property
    def Bv(self):
        return self.block('Bv')

    @property
    def B_free(self):
        """Constraint matrix restricted to the free dofs."""
        return self.B[:, self.free]

    def counts(self):
        out = []
        for k in range(len(self.disc.model.interfaces)):
            rows = [r for r in self.rows if r.interface == k]
            out.append({'B0': sum(r.kind == 'B0' for r in rows),
                        'B1': sum(r.kind == 'B1' for r in rows)})
        return out


def _point_matrix(vals, idx, ncols):
    m, nloc = vals.shape
    rows = np.repeat(np.arange(m), nloc)
    return sp.csr_matrix((vals.ravel(), (rows, idx.ravel())), shape=(m, ncols))


def _snap(M):
    M = sp.csr_matrix(M)
    M.data[np.abs(M.data) < SNAP_TOL] = 0.0
    M.eliminate_zeros()
    return M


def _interface_rows(disc, k, itf, dual, continuity):
    model = disc.model
    S, M = disc.space(itf.slave), disc.space(itf.master)
    n = disc.ndofs
    ds = edge_normal_dir(itf.slave_edge)
    nq = max(S.u.degree, S.v.degree, M.u.degree, M.v.degree) + 1
    t, w = interface_quadrature(model, disc, itf, nq)
    xs, xm = gluing_map(model, itf, t)
    lam = dual.evaluate(t) * w[:, None]                       # (nq, nd)
    vs, ids = S.evaluate(xs[:, 0], xs[:, 1], 1)
    vm, idm = M.evaluate(xm[:, 0], xm[:, 1], 1)
    ids = ids + disc.offset(itf.slave)
    idm = idm + disc.offset(itf.master)
    jump = _point_matrix(vs[:, 0], ids, n) - _point_matrix(vm[:, 0], idm, n)
    blocks = [('B0', _snap(sp.csr_matrix(lam.T) @ jump))]
    c = multiplier_scaling(S, itf.slave_edge)
    if continuity == 'C1':
        gE = gluing_jacobian(model, itf, t)
        dm = vm[:, 1] * gE[:, 0, ds][:, None] + vm[:, 2] * gE[:, 1, ds][:, None]
        djump = _point_matrix(vs[:, 1 + ds], ids, n) - _point_matrix(dm, idm, n)
        blocks.append(('B1', _snap(sp.csr_matrix(lam.T) @ djump / c)))
    ntr = trace_space(S, itf.slave_edge).dim
    out = []
    for kind, mat in blocks:
        layer = 0 if kind == 'B0' else 1
        for j in range(dual.dim):
            jt = int(dual.partner(j))
            piv = _edge_dof(disc, itf.slave, itf.slave_edge, layer, jt) if jt < ntr else -1
            out.append((RowInfo(k, kind, j, piv), mat[j]))
    return out, c


def _vertex_rows(disc, continuity):
    model = disc.model
    n = disc.ndofs
    out = []
    for iv, v in enumerate(junction_vertices(model)):
        for k, itf in enumerate(model.interfaces):
            for t_end, corner in zip((0.0, 1.0), _edge_corners(itf.slave_edge)):
                if (itf.slave, corner) not in v.incidences:
                    continue
                S, M = disc.space(itf.slave), disc.space(itf.master)
                xs, xm = gluing_map(model, itf, np.array([t_end]))
                vs, ids = S.evaluate(xs[:, 0], xs[:, 1], 1)
                vm, idm = M.evaluate(xm[:, 0], xm[:, 1], 1)
                ids = ids + disc.offset(itf.slave)
                idm = idm + disc.offset(itf.master)
                row = _point_matrix(vs[:, 0], ids, n) - _point_matrix(vm[:, 0], idm, n)
                out.append((RowInfo(-1, 'Bv', iv), _snap(row)))
                if continuity == 'C1':
                    ds = edge_normal_dir(itf.slave_edge)
                    gE = gluing_jacobian(model, itf, np.array([t_end]))
                    dm = vm[:, 1] * gE[:, 0, ds][:, None] + vm[:, 2] * gE[:, 1, ds][:, None]
                    c = multiplier_scaling(S, itf.slave_edge)
                    row = (_point_matrix(vs[:, 1 + ds], ids, n) - _point_matrix(dm, idm, n)) / c
                    out.append((RowInfo(-1, 'Bv', iv), _snap(row)))
    return out


def assemble_constraints(disc, strategy, continuity='C1', bc=None, duals=None):
    """Constraint system of a discretization for one coupling strategy.

    Args:
        disc (Discretization): patch spaces at a fixed degree and level.
        strategy (str): one of ``MG, MB, OG, OB`` (or ``G, B`` for models
            without junction vertices).
        continuity (str): ``'C1'`` (value and normal derivative) or ``'C0'``.
        bc (str): ``'clamped'`` or ``'fixed'``; defaults to the model's.
        duals (list, optional): prebuilt multiplier bases per interface.
    """
    model = disc.model
    kind = strategy_kind(strategy)
    if continuity not in ('C0', 'C1'):
        raise ConfigurationError('continuity must be C0 or C1')
    junctions = junction_vertices(model)
    if strategy in ('G', 'B') and junctions:
        raise ConfigurationError('strategy %s applies to models without interior vertices'
                                 % strategy)
    bc = bc or model.bc
    if bc not in BC_LAYERS:
        raise ConfigurationError('unknown bc %r' % bc)
    eliminated = disc.boundary_dofs(BC_LAYERS[bc])
    if duals is None:
        duals = [build_dual(trace_space(disc.space(itf.slave), itf.slave_edge), kind)
                 for itf in model.interfaces]
    for d in duals:
        if d.kind != kind:
            raise ConfigurationError('strategy %s needs %s duals, got %s'
                                     % (strategy, kind.value, d.kind.value))
    elim_set = set(eliminated.tolist())
    entries, scaling, dropped = [], [], 0
    for k, (itf, dual) in enumerate(zip(model.interfaces, duals)):
        rows, c = _interface_rows(disc, k, itf, dual, continuity)
        scaling.append(c)
        for info, row in rows:
            if info.pivot in elim_set:
                dropped += 1            # multiplier paired with a constrained slave dof
                continue
            entries.append((info, row))
    if strategy in ('MG', 'MB'):
        entries += _vertex_rows(disc, continuity)
    cls = classify_dofs(disc)
    if entries:
        B = sp.vstack([r for _, r in entries]).tocsr()
    else:
        B = sp.csr_matrix((0, disc.ndofs))
    free = np.setdiff1d(np.arange(disc.ndofs), eliminated)
    return ConstraintSystem(disc, strategy, continuity, B, [i for i, _ in entries], free,
                            eliminated, scaling, duals, cls, dropped)


# ------------------------------------------------------------ null space

@dataclass
class NullSpaceBasis:
    """Columns of ``C`` span the kernel of the constraints on the free dofs."""
    C: sp.csr_matrix
    free: np.ndarray
    ndofs: int
    n_pivot_rows: int = 0
    n_c2: int = 0
    qr_rank: int = 0
    qr_tol: float = QR_RANK_TOL
    diagnostics: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.C.shape

    def expand(self, coeffs):
        """Full dof vector from condensed coefficients."""
        u = np.zeros(self.ndofs)
        u[self.free] = self.C @ coeffs
        return u


def eliminate_pivots(B, pivot_rows, pivot_cols):
    """Kernel basis of ``B[pivot_rows]`` when its pivot block is unit upper triangular.

    Returns a sparse matrix with one column per non-pivot column of ``B``:
    non-pivot coordinates form the identity, pivot coordinates hold ``-X``
    with ``B_D X = B_F``.
    """
    B = sp.csr_matrix(B)
    n = B.shape[1]
    pivot_rows = np.asarray(pivot_rows, dtype=int)
    pivot_cols = np.asarray(pivot_cols, dtype=int)
    rest = np.setdiff1d(np.arange(n), pivot_cols)
    Bp = B[pivot_rows]
    BD = Bp[:, pivot_cols].tocsr()
    BF = Bp[:, rest].tocsc()
    if BD.shape[0]:
        diag = BD.diagonal()
        lower = sp.tril(BD, -1)
        low = np.abs(lower.data).max() if lower.nnz else 0.0
        if np.abs(diag - 1.0).max() > 1e-10 or low > 1e-10:
            raise AssemblyError('pivot block is not unit upper triangular '
                                '(diag dev %.2e, lower %.2e)' % (np.abs(diag - 1).max(), low))
    U = sp.triu(BD, 1).tocsr()
    # B_D = I + U with U nilpotent: X = sum_k (-U)^k B_F
    X = BF.copy()
    term = BF
    for _ in range(max(1, BD.shape[0])):
        term = _snap(-(U @ term))
        if term.nnz == 0:
            break
        X = X + term
    X = sp.csr_matrix(X)
    C = sp.vstack([-X, sp.identity(rest.size, format='csr')]).tocsr()
    order = np.argsort(np.r_[pivot_cols, rest])
    return C[order]


def _qr_kernel(Bbar, tol=QR_RANK_TOL):
    """Kernel of a small dense matrix from a column-pivoted QR factorization."""
    k = Bbar.shape[1]
    if Bbar.shape[0] == 0 or k == 0:
        return np.eye(k), 0
    _, R, perm = qr(Bbar, mode='economic', pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * d.max())) if d.size and d.max() > 0 else 0
    R1, R2 = R[:rank, :rank], R[:rank, rank:]
    K = np.zeros((k, k - rank))
    K[rank:] = np.eye(k - rank)
    if rank:
        K[:rank] = -solve_triangular(R1, R2)
    out = np.zeros_like(K)
    out[perm] = K
    return out, rank


def null_space_multipatch(cs, strategy=None):
    """Sparse kernel basis ``C_b`` of the constraints restricted to free dofs."""
    free = cs.free
    pos = -np.ones(cs.disc.ndofs, dtype=int)
    pos[free] = np.arange(free.size)
    Bf = cs.B_free.tocsr()
    vi = cs.classification.vi
    used = set()
    piv_rows, piv_cols, other = [], [], []
    order = sorted(range(len(cs.rows)), key=lambda r: (cs.rows[r].kind != 'B1', r))
    for r in order:
        info = cs.rows[r]
        p = info.pivot
        if info.kind != 'Bv' and p >= 0 and pos[p] >= 0 and p not in vi and p not in used:
            used.add(p)
            piv_rows.append(r)
            piv_cols.append(pos[p])
        else:
            other.append(r)
    C_inter = eliminate_pivots(Bf, piv_rows, piv_cols)
    n_c2, rank = 0, 0
    if other:
        G = _snap(Bf[other] @ C_inter).tocsc()
        colmax = np.zeros(G.shape[1])
        nz = np.diff(G.indptr) > 0
        if nz.any():
            colmax[nz] = [np.abs(G.data[G.indptr[j]:G.indptr[j + 1]]).max()
                          for j in np.flatnonzero(nz)]
        c2 = np.flatnonzero(colmax > 0)
        c1 = np.flatnonzero(colmax == 0)
        Cbar, rank = _qr_kernel(G[:, c2].toarray())
        Cb = sp.hstack([C_inter[:, c1], _snap(C_inter[:, c2] @ sp.csr_matrix(Cbar))]).tocsr()
        n_c2 = c2.size
    else:
        Cb = C_inter
    ns = NullSpaceBasis(Cb, free, cs.disc.ndofs, len(piv_rows), n_c2, rank)
    ns.diagnostics = {'pivot_rows': len(piv_rows), 'other_rows': len(other),
                      'c2_columns': n_c2, 'qr_rank': rank, 'qr_tol': QR_RANK_TOL}
    return ns


def null_space_two_patch(cs):
    """Block elimination for a single interface without vertex rows."""
    if len(cs.disc.model.interfaces) != 1 or junction_vertices(cs.disc.model):
        raise ConfigurationError('two-patch elimination needs exactly one interface '
                                 'and no junction vertices')
    ns = null_space_multipatch(cs)
    if ns.diagnostics['other_rows']:
        raise AssemblyError('%d constraint rows without an identity pivot'
                            % ns.diagnostics['other_rows'])
    return ns


def null_space(cs):
    """Dispatch to the two-patch or multi-patch construction."""
    if len(cs.disc.model.interfaces) == 1 and not junction_vertices(cs.disc.model):
        return null_space_two_patch(cs)
    return null_space_multipatch(cs)


def condense(K, F, ns):
    """Condensed operator ``C^T K C`` and load ``C^T F`` on the free dofs."""
    K = sp.csr_matrix(K)
    if K.shape != (ns.ndofs, ns.ndofs):
        raise ValueError('K has shape %s, expected %d dofs' % (K.shape, ns.ndofs))
    Kf = K[ns.free][:, ns.free]
    C = ns.C
    Km = (C.T @ Kf @ C).tocsr()
    Fm = None
    if F is not None:
        F = np.asarray(F, dtype=float)
        if F.shape[0] != ns.ndofs:
            raise ValueError('F has length %d, expected %d' % (F.shape[0], ns.ndofs))
        Fm = C.T @ F[ns.free]
    return Km, Fm


def coupling_matrices(disc, strategy, continuity='C1', bc=None):
    """Convenience: constraints and null-space basis in one call."""
    cs = assemble_constraints(disc, strategy, continuity, bc)
    return cs, null_space(cs)
