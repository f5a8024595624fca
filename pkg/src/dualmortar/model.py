"""Multi-patch planar domains: patches, interfaces, vertices and gluing maps.

Each patch carries a polynomial B-spline geometry map ``F`` on the parametric
square ``[0, 1]^2`` and a description of its solution mesh.  Patch edges are
named ``u0`` (xi = 0), ``u1`` (xi = 1), ``v0`` (eta = 0) and ``v1`` (eta = 1).
"""
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, GeometryError
from .spline import SplineSpace1D, TensorSpace2D, gauss_rule

EDGES = ('u0', 'u1', 'v0', 'v1')
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
COINCIDENCE_TOL = 1e-10


def edge_normal_dir(edge):
    """Parametric direction (0 = xi, 1 = eta) normal to ``edge``."""
    return 0 if edge[0] == 'u' else 1


def edge_side(edge):
    return int(edge[1])


def edge_point(edge, t):
    """Parametric points on ``edge`` at tangential coordinate ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    fixed = np.full_like(t, float(edge_side(edge)))
    if edge_normal_dir(edge) == 0:
        return np.column_stack([fixed, t])
    return np.column_stack([t, fixed])


@dataclass
class Patch:
    """Tensor-product patch with geometry map and base solution mesh.

    ``breaks_u``/``breaks_v`` are the breakpoints of the refine-0 solution
    mesh; ``degree_offset`` raises the solution degree of this patch relative
    to the study degree.
    """
    id: int
    geometry: TensorSpace2D
    control_points: np.ndarray
    breaks_u: np.ndarray
    breaks_v: np.ndarray
    degree_offset: int = 0

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float)
        if self.control_points.shape != (self.geometry.dim, 2):
            raise ConfigurationError(
                'patch %d: expected %d control points, got %d'
                % (self.id, self.geometry.dim, len(self.control_points)))
        for sp, br in ((self.geometry.u, self.breaks_u), (self.geometry.v, self.breaks_v)):
            if sp.interval != (0.0, 1.0):
                raise ConfigurationError('patch %d: knot vectors must span [0, 1]' % self.id)
            missing = [b for b in sp.breaks if np.min(np.abs(br - b)) > 1e-14]
            if missing:
                raise ConfigurationError('patch %d: solution mesh must contain the '
                                         'geometry breakpoints %s' % (self.id, missing))

    def solution_space(self, degree, refine=0):
        """Tensor spline space of degree ``degree + degree_offset``, refined ``refine`` times."""
        p = degree + self.degree_offset
        spaces = []
        for br in (self.breaks_u, self.breaks_v):
            kv = np.r_[[0.0] * p, br, [1.0] * p]
            spaces.append(SplineSpace1D(p, kv).refine(refine))
        return TensorSpace2D(*spaces)

    def n_elements(self, direction):
        return (self.breaks_u if direction == 0 else self.breaks_v).size - 1

    def map(self, xi, eta, nder=1):
        """Geometry map and derivatives.

        Returns:
            tuple: ``x`` (m, 2); ``J`` (m, 2, 2) with ``J[:, a, b] = dx_a/dxi_b``;
            for ``nder == 2`` also ``H`` (m, 2, 3) holding the second
            derivatives in the order (xixi, xieta, etaeta).
        """
        vals, idx = self.geometry.evaluate(np.atleast_1d(xi), np.atleast_1d(eta), nder)
        P = self.control_points[idx]                       # (m, nloc, 2)
        x = np.einsum('ml,mlc->mc', vals[:, 0], P)
        J = np.stack([np.einsum('ml,mlc->mc', vals[:, 1], P),
                      np.einsum('ml,mlc->mc', vals[:, 2], P)], axis=2)
        if nder < 2:
            return x, J
        H = np.stack([np.einsum('ml,mlc->mc', vals[:, k], P) for k in (3, 4, 5)], axis=2)
        return x, J, H

    def corners(self):
        """Physical points of the corners ordered (0,0), (1,0), (0,1), (1,1)."""
        c = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        return self.map(c[:, 0], c[:, 1])[0]


@dataclass(frozen=True)
class Interface:
    slave: int
    master: int
    slave_edge: str
    master_edge: str
    reversed: bool = False

    def __post_init__(self):
        if self.slave_edge not in EDGES or self.master_edge not in EDGES:
            raise ConfigurationError('edge names must be one of %s' % (EDGES,))
        if self.slave == self.master:
            raise ConfigurationError('interface joins patch %d with itself' % self.slave)


@dataclass
class VertexJunction:
    point: np.ndarray
    incidences: list = field(default_factory=list)   # (patch id, (cu, cv))
    interior: bool = False

    @property
    def valence(self):
        return len(self.incidences)


@dataclass
class Diagnostic:
    severity: str          # 'info', 'warning' or 'error'
    check: str
    message: str


class ValidationReport(list):
    @property
    def ok(self):
        return not any(d.severity == 'error' for d in self)

    def of(self, severity):
        return [d for d in self if d.severity == severity]


class MultiPatchModel:
    """Patches, interfaces and derived vertex topology.

    Args:
        patches (list[Patch]): patches with unique ids.
        interfaces (list[Interface]): slave/master edge pairings.
        bc (str): ``'clamped'`` or ``'fixed'``.
        name (str): label used in reports.
    """

    def __init__(self, patches, interfaces, bc='clamped', name='model'):
        self.patches = list(patches)
        self.interfaces = list(interfaces)
        self.bc = bc
        self.name = name
        self._by_id = {p.id: p for p in self.patches}
        if len(self._by_id) != len(self.patches):
            raise ConfigurationError('duplicate patch ids')
        seen = set()
        for itf in self.interfaces:
            for pid, e in ((itf.slave, itf.slave_edge), (itf.master, itf.master_edge)):
                if pid not in self._by_id:
                    raise ConfigurationError('interface refers to unknown patch %d' % pid)
                if (pid, e) in seen:
                    raise ConfigurationError('edge %s of patch %d used twice' % (e, pid))
                seen.add((pid, e))
        self.vertices = self._derive_vertices()

    def __repr__(self):
        return 'MultiPatchModel(%r, %d patches, %d interfaces)' % (
            self.name, len(self.patches), len(self.interfaces))

    def patch(self, pid):
        return self._by_id[pid]

    def patch_position(self, pid):
        return self.patches.index(self._by_id[pid])

    def interface_edges(self):
        out = set()
        for itf in self.interfaces:
            out.add((itf.slave, itf.slave_edge))
            out.add((itf.master, itf.master_edge))
        return out

    def boundary_edges(self):
        inner = self.interface_edges()
        return [(p.id, e) for p in self.patches for e in EDGES if (p.id, e) not in inner]

    def scale(self):
        pts = np.concatenate([p.control_points for p in self.patches])
        return float(np.ptp(pts, axis=0).max())

    def _derive_vertices(self):
        tol = COINCIDENCE_TOL * max(1.0, self.scale())
        corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
        verts = []
        for p in self.patches:
            for (cu, cv), X in zip(corners, p.corners()):
                for v in verts:
                    if np.linalg.norm(v.point - X) <= tol:
                        v.incidences.append((p.id, (cu, cv)))
                        break
                else:
                    verts.append(VertexJunction(X.copy(), [(p.id, (cu, cv))]))
        inner = self.interface_edges()
        for v in verts:
            edges = [(pid, 'u%d' % cu) for pid, (cu, cv) in v.incidences]
            edges += [(pid, 'v%d' % cv) for pid, (cu, cv) in v.incidences]
            v.interior = all(e in inner for e in edges)
        return verts

    def interior_vertices(self):
        return [v for v in self.vertices if v.interior]

    def discretize(self, degree, refine=0):
        return Discretization(self, degree, refine)


class Discretization:
    """Solution spaces of all patches at one degree and refinement level.

    Global dof numbering concatenates the patches in model order.
    """

    def __init__(self, model, degree, refine=0):
        self.model = model
        self.degree = int(degree)
        self.refine = int(refine)
        self.spaces = [p.solution_space(self.degree, self.refine) for p in model.patches]
        sizes = [s.dim for s in self.spaces]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def ndofs(self):
        return int(self.offsets[-1])

    def space(self, pid):
        return self.spaces[self.model.patch_position(pid)]

    def offset(self, pid):
        return int(self.offsets[self.model.patch_position(pid)])

    def edge_dofs(self, pid, edge, layer):
        """Local dof indices of ``layer``-th row of coefficients parallel to ``edge``."""
        sp = self.space(pid)
        nu, nv = sp.shape
        if edge_normal_dir(edge) == 0:
            iu = layer if edge_side(edge) == 0 else nu - 1 - layer
            return sp.index(iu, np.arange(nv))
        iv = layer if edge_side(edge) == 0 else nv - 1 - layer
        return sp.index(np.arange(nu), iv)

    def boundary_dofs(self, layers):
        """Sorted global dofs within ``layers`` rows of the physical boundary."""
        out = set()
        for pid, edge in self.model.boundary_edges():
            for k in range(layers):
                out.update((self.offset(pid) + self.edge_dofs(pid, edge, k)).tolist())
        return np.array(sorted(out), dtype=int)


# ---------------------------------------------------------------- gluing map

def _edge_tangent_space(patch_space, edge):
    return patch_space.v if edge_normal_dir(edge) == 0 else patch_space.u


def gluing_map(model, iface, t):
    """Map slave edge parameters ``t`` to (slave point, master point).

    The master edge coordinate is found by Gauss-Newton on the master edge
    curve, seeded with the orientation-aware linear guess.

    Returns:
        tuple: ``(xs, xm)`` parametric points, each of shape (m, 2).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    S, M = model.patch(iface.slave), model.patch(iface.master)
    xs = edge_point(iface.slave_edge, t)
    target = S.map(xs[:, 0], xs[:, 1])[0]
    tau = _invert_edge(M, iface.master_edge, target, 1.0 - t if iface.reversed else t.copy())
    return xs, edge_point(iface.master_edge, tau)


def _invert_edge(patch, edge, target, tau):
    d = 1 - edge_normal_dir(edge)    # tangential direction
    for _ in range(NEWTON_MAXIT):
        pts = edge_point(edge, tau)
        X, J = patch.map(pts[:, 0], pts[:, 1])
        T = J[:, :, d]
        r = X - target
        step = np.einsum('mc,mc->m', T, r) / np.einsum('mc,mc->m', T, T)
        tau = np.clip(tau - step, 0.0, 1.0)
        if np.all(np.abs(step) < NEWTON_TOL):
            break
    else:
        bad = np.argmax(np.abs(step))
        raise GeometryError('gluing map Newton iteration did not converge at t index %d' % bad)
    pts = edge_point(edge, tau)
    res = np.linalg.norm(patch.map(pts[:, 0], pts[:, 1])[0] - target, axis=1)
    scale = max(1.0, float(np.ptp(patch.control_points, axis=0).max()))
    if np.any(res > COINCIDENCE_TOL * scale):
        bad = int(np.argmax(res))
        raise GeometryError('edges do not coincide (residual %.3e at sample %d)'
                            % (res[bad], bad))
    return tau


def gluing_jacobian(model, iface, t):
    """``(grad F_m)^{-1} grad F_s`` at the glued points, shape (m, 2, 2)."""
    xs, xm = gluing_map(model, iface, t)
    Js = model.patch(iface.slave).map(xs[:, 0], xs[:, 1])[1]
    Jm = model.patch(iface.master).map(xm[:, 0], xm[:, 1])[1]
    det = np.linalg.det(Jm)
    if np.any(np.abs(det) < 1e-14):
        raise GeometryError('singular master Jacobian on interface')
    return np.linalg.solve(Jm, Js)


def master_edge_coordinate(iface, xm):
    return xm[:, 1 - edge_normal_dir(iface.master_edge)]


def interface_breaks(model, disc, iface):
    """Slave edge parameters of the merged slave and master trace meshes."""
    ts = _edge_tangent_space(disc.space(iface.slave), iface.slave_edge).breaks
    tm = _edge_tangent_space(disc.space(iface.master), iface.master_edge).breaks

    def tau_of(t):
        return master_edge_coordinate(iface, gluing_map(model, iface, t)[1])[0]

    pts = list(ts)
    for b in tm[1:-1]:
        pts.append(brentq(lambda t: tau_of(t) - b, 0.0, 1.0, xtol=1e-14, rtol=1e-14))
    pts = np.unique(np.round(np.array(pts), 14))
    keep = np.r_[True, np.diff(pts) > 1e-12]
    return pts[keep]


def interface_quadrature(model, disc, iface, n_points):
    """Gauss points and weights in the slave edge parameter on merged segments."""
    br = interface_breaks(model, disc, iface)
    rule = gauss_rule(n_points - 1)
    t, w = rule.on_elements(br)
    return t.ravel(), w.ravel()


# ---------------------------------------------------------------- validation

def validate_model(model, samples=20):
    """Check bijectivity, interface coincidence, vertices and slave/master roles."""
    report = ValidationReport()
    rule = gauss_rule(3)
    for p in model.patches:
        gu, wu = rule.on_elements(np.union1d(p.geometry.u.breaks, p.breaks_u))
        gv, wv = rule.on_elements(np.union1d(p.geometry.v.breaks, p.breaks_v))
        U, V = np.meshgrid(gu.ravel(), np.r_[0.0, gv.ravel(), 1.0])
        U = np.r_[U.ravel(), 0.0, 1.0, 0.0, 1.0]
        V = np.r_[V.ravel(), 0.0, 0.0, 1.0, 1.0]
        det = np.linalg.det(p.map(U, V)[1])
        if np.any(det <= 0):
            report.append(Diagnostic('error', 'bijectivity',
                                     'patch %d: det(grad F) <= 0 (min %.3e)' % (p.id, det.min())))
    t = np.linspace(0.0, 1.0, samples)
    for k, itf in enumerate(model.interfaces):
        label = 'interface %d (%d/%d)' % (k, itf.slave, itf.master)
        try:
            _, xm = gluing_map(model, itf, t)
        except GeometryError as exc:
            report.append(Diagnostic('error', 'coincidence', '%s: %s' % (label, exc)))
            continue
        tau = master_edge_coordinate(itf, gluing_map(model, itf, np.linspace(0, 1, 100))[1])
        dtau = np.diff(tau)
        if not (np.all(dtau > 0) or np.all(dtau < 0)):
            report.append(Diagnostic('error', 'monotonicity', '%s: gluing map folds' % label))
        ns = model.patch(itf.slave).n_elements(1 - edge_normal_dir(itf.slave_edge))
        nm = model.patch(itf.master).n_elements(1 - edge_normal_dir(itf.master_edge))
        if ns < nm:
            report.append(Diagnostic('warning', 'slave-finer',
                                     '%s: slave trace mesh (%d elements) is coarser than '
                                     'master (%d)' % (label, ns, nm)))
        elif ns == nm and itf.slave > itf.master:
            report.append(Diagnostic('info', 'slave-finer',
                                     '%s: equal trace meshes; convention picks the lower '
                                     'patch id as slave' % label))
    tol = COINCIDENCE_TOL * max(1.0, model.scale())
    for v in model.vertices:
        for pid, (cu, cv) in v.incidences:
            X = model.patch(pid).map(np.array([float(cu)]), np.array([float(cv)]))[0][0]
            if np.linalg.norm(X - v.point) > tol:
                report.append(Diagnostic('error', 'vertex', 'vertex at %s inconsistent' % v.point))
        if v.interior and v.valence < 2:
            report.append(Diagnostic('error', 'vertex', 'interior vertex with one patch'))
    return report


# ---------------------------------------------------------------- model files

_BLOCK = re.compile(r'(\w+)\s*\{([^}]*)\}', re.S)


def _numbers(text):
    return [float(Fraction(tok)) for tok in re.split(r'[\s,]+', text.strip()) if tok]


def _parse_block(body):
    out = {}
    for line in re.split(r'[\n;]', body):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError('expected key = value, got %r' % line)
        key, val = (s.strip() for s in line.split('=', 1))
        out[key] = val
    return out


def parse_model(text, name='model'):
    """Parse the block-structured model format (see the README)."""
    text = re.sub(r'#[^\n]*', '', text)
    patches, interfaces, vertex_points = [], [], []
    bc = 'clamped'
    for kind, body in _BLOCK.findall(text):
        kv = _parse_block(body)
        if kind == 'patch':
            patches.append(_patch_from_fields(kv))
        elif kind == 'interface':
            try:
                interfaces.append(Interface(
                    slave=int(kv['slave']), master=int(kv['master']),
                    slave_edge=kv['slave_edge'], master_edge=kv['master_edge'],
                    reversed=kv.get('reversed', 'false').lower() in ('1', 'true', 'yes')))
            except KeyError as exc:
                raise ConfigurationError('interface block missing field %s' % exc) from None
            except ValueError as exc:
                raise ConfigurationError('bad interface block: %s' % exc) from None
        elif kind == 'vertex':
            vertex_points.append(_numbers(kv['point']))
        elif kind == 'bc':
            bc = kv.get('type', 'clamped')
            if bc not in ('clamped', 'fixed'):
                raise ConfigurationError('unknown bc type %r' % bc)
        elif kind == 'model':
            name = kv.get('name', name)
        else:
            raise ConfigurationError('unknown block %r' % kind)
    if not patches:
        raise ConfigurationError('model defines no patches')
    model = MultiPatchModel(patches, interfaces, bc=bc, name=name)
    for pt in vertex_points:
        if not any(np.linalg.norm(v.point - pt) < 1e-9 for v in model.vertices):
            raise ConfigurationError('declared vertex %s is not a patch corner' % pt)
    return model


def _patch_from_fields(kv):
    try:
        pid = int(kv['id'])
        pu, pv = int(kv['degree_u']), int(kv['degree_v'])
        su = SplineSpace1D(pu, _numbers(kv['knots_u']))
        sv = SplineSpace1D(pv, _numbers(kv['knots_v']))
        cp = np.array(_numbers(kv['control_points'])).reshape(-1, 2)
    except KeyError as exc:
        raise ConfigurationError('patch block missing field %s' % exc) from None
    breaks = []
    for axis, sp in (('u', su), ('v', sv)):
        if 'breaks_' + axis in kv:
            br = np.array(_numbers(kv['breaks_' + axis]))
        else:
            n = int(kv.get('elements_' + axis, 1))
            br = np.union1d(np.linspace(0.0, 1.0, n + 1), sp.breaks)
        breaks.append(br)
    return Patch(pid, TensorSpace2D(su, sv), cp, breaks[0], breaks[1],
                 degree_offset=int(kv.get('degree_offset', 0)))


def load_model(path):
    """Load a model from a file path or the name of a bundled model."""
    p = Path(path)
    if p.suffix == '' and not p.exists():
        p = Path(str(resources.files('dualmortar') / 'models' / (str(path) + '.txt')))
    if not p.exists():
        raise ConfigurationError('model file not found: %s' % path)
    return parse_model(p.read_text(), name=p.stem)


def bundled_models():
    root = resources.files('dualmortar') / 'models'
    return sorted(f.name[:-4] for f in root.iterdir() if f.name.endswith('.txt'))
