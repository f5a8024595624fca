"""Refinement sweeps and their CSV outputs.

A :class:`StudyConfig` names a model, a coupling strategy, a problem and the
degree/refinement matrix.  :func:`run_study` walks that matrix, records one
row per (degree, refine) pair and, when an output directory is given, writes
``results.csv`` and ``meta.txt`` there.  Errors raised for a single row are
caught and stored in its ``status`` so the rest of the sweep still runs.
"""
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .coupling import assemble_constraints, condense, coupling_matrices, null_space
from .dual import DualKind, build_dual
from .errors import ConfigurationError
from .fem import (assemble_biharmonic, assemble_h2_gram, assemble_laplace_and_mass,
                  error_norms, h2star_projection, solve_cg, solve_direct,
                  solve_generalized_eigen)
from .manufactured import DEFAULT_FOR_MODEL, get_solution
from .model import load_model, validate_model
from .spline import uniform_space

PROBLEMS = ('l2-projection-1d', 'legendre-reproduction', 'biharmonic', 'h2-projection',
            'membrane-eigen', 'verify')
STRATEGY_NAMES = ('MG', 'MB', 'OG', 'OB', 'G', 'B')
COLUMNS = ('degree', 'refine', 'dofs', 'condensed_dofs', 'nnz', 'l2_err', 'h2_err',
           'l2_rate', 'h2_rate', 'omega_max', 'omega_min', 'seconds',
           'l2_slope', 'h2_slope', 'config_hash', 'status')
SLOPE_LEVELS = 3
PROJECTION_BASE_ELEMENTS = 8
RANK_ORACLE_LIMIT = 2000

_ONE_D_KIND = {'G': DualKind.GLOBAL, 'OG': DualKind.GLOBAL, 'B': DualKind.BEZIER,
               'OB': DualKind.BEZIER, 'MG': DualKind.GLOBAL_COARSENED,
               'MB': DualKind.BEZIER_MODIFIED}


@dataclass(frozen=True)
class StudyConfig:
    """One experiment.

    ``solution`` names a manufactured case (defaults to the model's own);
    ``solver`` is ``'cg'`` or ``'direct'``; ``tol`` is the CG tolerance.
    ``timing`` fills the ``seconds`` column, which otherwise stays empty so
    that repeated runs give byte-identical files.
    """
    model: str = 'two_patch_basic'
    strategy: str = 'B'
    degrees: tuple = (2, 3)
    refines: tuple = (0, 1, 2, 3)
    problem: str = 'biharmonic'
    out: str = None
    tol: float = 1e-12
    solver: str = 'cg'
    solution: str = None
    continuity: str = 'C1'
    bc: str = None
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'degrees', tuple(int(d) for d in self.degrees))
        object.__setattr__(self, 'refines', tuple(int(r) for r in self.refines))

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError('unknown problem %r' % self.problem)
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigurationError('unknown strategy %r' % self.strategy)
        if not self.degrees or any(not 2 <= d <= 5 for d in self.degrees):
            raise ConfigurationError('degrees must lie in 2..5')
        if not self.refines or any(not 0 <= r <= 8 for r in self.refines):
            raise ConfigurationError('refinement levels must lie in 0..8')
        if self.solver not in ('cg', 'direct'):
            raise ConfigurationError('solver must be cg or direct')
        if self.continuity not in ('C0', 'C1'):
            raise ConfigurationError('continuity must be C0 or C1')
        if not self.tol > 0:
            raise ConfigurationError('tol must be positive')
        return self

    def hash(self):
        """Short digest of every field that influences the numbers."""
        d = asdict(self)
        d.pop('out')
        d.pop('timing')
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_file(cls, path, **overrides):
        """Read a JSON config; keyword arguments that are not None override it."""
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError('unknown config keys: %s' % ', '.join(sorted(unknown)))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(r['status'] == 'ok' for r in self.rows)

    def select(self, degree):
        return [r for r in self.rows if r['degree'] == degree]

    def column(self, degree, name):
        return np.array([r[name] for r in self.select(degree)], dtype=float)


# ---------------------------------------------------------------- rates

def observed_rate(e_coarse, e_fine):
    """log2 quotient of errors on consecutive bisection levels."""
    if not (e_coarse and e_fine) or e_coarse <= 0 or e_fine <= 0:
        return None
    return math.log2(e_coarse / e_fine)


def ls_slope(levels, errors):
    """Least-squares slope of ``-log2(error)`` against the refinement level."""
    lv = np.asarray(levels, dtype=float)
    le = np.log2(np.asarray(errors, dtype=float))
    if lv.size < 2:
        return None
    return float(-np.polyfit(lv, le, 1)[0])


def _fill_rates(rows):
    """Rates only between successful rows at consecutive levels of one degree."""
    by_degree = {}
    for r in rows:
        by_degree.setdefault(r['degree'], []).append(r)
    for seq in by_degree.values():
        seq.sort(key=lambda r: r['refine'])
        for key in ('l2', 'h2'):
            run = []
            for r in seq:
                e = r.get(key + '_err')
                if r['status'] != 'ok' or e is None:
                    run = []
                    continue
                if run and run[-1]['refine'] == r['refine'] - 1:
                    r[key + '_rate'] = observed_rate(run[-1][key + '_err'], e)
                else:
                    run = []
                run.append(r)
                if len(run) >= SLOPE_LEVELS:
                    tail = run[-SLOPE_LEVELS:]
                    r[key + '_slope'] = ls_slope([t['refine'] for t in tail],
                                                 [t[key + '_err'] for t in tail])


# ---------------------------------------------------------------- row drivers

def _model_solution(cfg, model):
    name = cfg.solution or DEFAULT_FOR_MODEL.get(model.name)
    if name is None:
        raise ConfigurationError('model %r has no default manufactured solution; set one'
                                 % model.name)
    return get_solution(name)


def _solve(cfg, K, F):
    if cfg.solver == 'direct':
        return solve_direct(K, F)
    return solve_cg(K, F, tol=cfg.tol)


def _row_biharmonic(cfg, model, p, r):
    sol = _model_solution(cfg, model)
    disc = model.discretize(p, r)
    _, ns = coupling_matrices(disc, cfg.strategy, cfg.continuity, cfg.bc)
    A = assemble_biharmonic(disc, sol.bilaplacian)
    Km, Fm = condense(A.K, A.F, ns)
    u = ns.expand(_solve(cfg, Km, Fm))
    l2, h2 = error_norms(disc, u, sol)
    return dict(dofs=disc.ndofs, condensed_dofs=Km.shape[0], nnz=Km.nnz, l2_err=l2, h2_err=h2)


def _row_h2_projection(cfg, model, p, r):
    sol = _model_solution(cfg, model)
    disc = model.discretize(p, r)
    _, ns = coupling_matrices(disc, cfg.strategy, cfg.continuity, cfg.bc)
    G = assemble_h2_gram(disc)
    u = ns.expand(h2star_projection(disc, ns, sol, gram=G))
    l2, h2 = error_norms(disc, u, sol)
    nnz = (ns.C.T @ G[ns.free][:, ns.free] @ ns.C).nnz
    return dict(dofs=disc.ndofs, condensed_dofs=ns.C.shape[1], nnz=nnz, l2_err=l2, h2_err=h2)


def membrane_matrices(model, p, r, strategy='OB', continuity='C1', bc=None):
    """Condensed stiffness and mass of the membrane problem."""
    disc = model.discretize(p, r)
    _, ns = coupling_matrices(disc, strategy, continuity, bc or 'fixed')
    A = assemble_laplace_and_mass(disc)
    K, _ = condense(A.K, None, ns)
    M, _ = condense(A.M, None, ns)
    return disc, K, M


def _row_membrane(cfg, model, p, r):
    disc, K, M = membrane_matrices(model, p, r, cfg.strategy, cfg.continuity, cfg.bc)
    hi = solve_generalized_eigen(K, M, 'largest')[-1]
    lo = solve_generalized_eigen(K, M, 'smallest', k=1)[0]
    return dict(dofs=disc.ndofs, condensed_dofs=K.shape[0], nnz=K.nnz,
                omega_max=math.sqrt(hi), omega_min=math.sqrt(max(lo, 0.0)))


def _projection_target(x):
    return np.sin(4 * np.pi * x)


def _row_projection(cfg, model, p, r):
    space = uniform_space(p, PROJECTION_BASE_ELEMENTS * 2 ** r)
    dual = build_dual(space, _ONE_D_KIND[cfg.strategy])
    coeffs = dual.l2_projection(_projection_target)
    return dict(dofs=space.dim, condensed_dofs=dual.dim, nnz=None,
                l2_err=dual.l2_error(coeffs, _projection_target))


def legendre_errors(degree, strategy='B', orders=None, n_elements=2):
    """L2 errors of projecting Legendre polynomials onto the dual span on [-1, 1]."""
    space = uniform_space(degree, n_elements, -1.0, 1.0)
    dual = build_dual(space, _ONE_D_KIND[strategy])
    out = []
    for k in (range(degree + 1) if orders is None else orders):
        P = np.polynomial.legendre.Legendre.basis(k)
        out.append(dual.l2_error(dual.l2_projection(P), P))
    return out


def _row_legendre(cfg, model, p, r):
    errs = legendre_errors(p, cfg.strategy, n_elements=2 * 2 ** r)
    return dict(dofs=p + 2 * 2 ** r, condensed_dofs=None, nnz=None,
                l2_err=errs[0], legendre=errs)


def verify_discretization(disc, strategy, continuity='C1', bc=None, tol=1e-10):
    """Invariant checks of one constraint system; returns (summary, failures)."""
    cs = assemble_constraints(disc, strategy, continuity, bc)
    ns = null_space(cs)
    failures = []
    Bf = cs.B_free
    resid = abs(Bf @ ns.C).max() if Bf.shape[0] and ns.C.shape[1] else 0.0
    if resid >= tol:
        failures.append('null-space residual %.2e' % resid)
    nfree = len(cs.free)
    if nfree <= RANK_ORACLE_LIMIT:
        rank = np.linalg.matrix_rank(Bf.toarray()) if Bf.shape[0] else 0
        if ns.C.shape[1] != nfree - rank:
            failures.append('dimension %d != %d' % (ns.C.shape[1], nfree - rank))
    for itf, dual in zip(disc.model.interfaces, cs.duals):
        P = dual.primal_pairing()
        target = np.zeros_like(P)
        target[np.arange(dual.dim), np.arange(dual.dim) + dual.offset] = 1.0
        if dual.kind.coarsened:
            # only the shifted block is biorthogonal
            P = P[:, dual.offset:dual.offset + dual.dim]
            target = target[:, dual.offset:dual.offset + dual.dim]
        err = abs(P - target).max()
        if err >= tol:
            failures.append('biorthogonality %.2e on interface %d-%d'
                            % (err, itf.slave, itf.master))
    summary = dict(dofs=disc.ndofs, condensed_dofs=ns.C.shape[1], nnz=cs.B.nnz,
                   residual=float(resid))
    return summary, failures


def _row_verify(cfg, model, p, r):
    summary, failures = verify_discretization(model.discretize(p, r), cfg.strategy,
                                              cfg.continuity, cfg.bc)
    if failures:
        raise _VerifyFailure('; '.join(failures))
    summary.pop('residual')
    return summary


class _VerifyFailure(Exception):
    pass


_DRIVERS = {
    'biharmonic': _row_biharmonic,
    'h2-projection': _row_h2_projection,
    'membrane-eigen': _row_membrane,
    'l2-projection-1d': _row_projection,
    'legendre-reproduction': _row_legendre,
    'verify': _row_verify,
}
_ONE_D = ('l2-projection-1d', 'legendre-reproduction')


# ---------------------------------------------------------------- driver

def _load_checked(cfg):
    model = load_model(cfg.model)
    report = validate_model(model)
    if not report.ok:
        raise ConfigurationError('model %s is invalid: %s' % (
            cfg.model, '; '.join(d.message for d in report.of('error'))))
    return model


def run_study(cfg):
    """Execute the sweep of ``cfg``; writes CSV files when ``cfg.out`` is set."""
    cfg.validate()
    model = None if cfg.problem in _ONE_D else _load_checked(cfg)
    digest = cfg.hash()
    driver = _DRIVERS[cfg.problem]
    result = StudyResult(cfg)
    for p in cfg.degrees:
        for r in sorted(cfg.refines):
            row = dict.fromkeys(COLUMNS)
            row.update(degree=p, refine=r, config_hash=digest)
            t0 = time.perf_counter()
            try:
                values = driver(cfg, model, p, r)
                row['status'] = 'ok'
            except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError,
                    _VerifyFailure) as exc:
                values = {}
                row['status'] = 'error: %s: %s' % (type(exc).__name__, exc)
            if 'legendre' in values:
                result.extra.setdefault('legendre', {})[(p, r)] = values.pop('legendre')
            row.update(values)
            if cfg.timing:
                row['seconds'] = time.perf_counter() - t0
            result.rows.append(row)
    _fill_rates(result.rows)
    if cfg.out:
        write_results(result, cfg.out)
    return result


# ---------------------------------------------------------------- output

def _fmt(v):
    if v is None:
        return ''
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return str(v)


def write_results(result, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / 'results.csv', 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(COLUMNS)
        for row in result.rows:
            w.writerow([_fmt(row[c]) for c in COLUMNS])
    cfg = result.config
    meta = ['config_hash: %s' % cfg.hash()]
    meta += ['%s: %s' % (k, v) for k, v in sorted(asdict(cfg).items()) if k != 'out']
    (out / 'meta.txt').write_text('\n'.join(meta) + '\n')
    if 'legendre' in result.extra:
        with open(out / 'legendre.csv', 'w', newline='') as fh:
            w = csv.writer(fh, lineterminator='\n')
            w.writerow(('degree', 'refine', 'order', 'l2_err'))
            for (p, r), errs in sorted(result.extra['legendre'].items()):
                for k, e in enumerate(errs):
                    w.writerow((p, r, k, _fmt(e)))


def _write_triplets(path, A):
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(('row', 'col', 'value'))
        for i in order:
            w.writerow((int(A.row[i]), int(A.col[i]), repr(float(A.data[i]))))


def row_bandwidth(A):
    """Per-row span ``max col - min col + 1`` of the stored entries."""
    A = sp.csr_matrix(A)
    out = np.zeros(A.shape[0], dtype=int)
    for i in range(A.shape[0]):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        if cols.size:
            out[i] = cols.max() - cols.min() + 1
    return out


def sparsity_matrices(model, degree, refine):
    """Uncoupled stiffness and the global/Bezier condensed stiffness matrices."""
    disc = model.discretize(degree, refine)
    K = assemble_biharmonic(disc).K
    multi = bool(model.interior_vertices())
    out = {'uncoupled': sp.csr_matrix(K)}
    for label, strategy in (('global', 'OG' if multi else 'G'),
                            ('bezier', 'OB' if multi else 'B')):
        _, ns = coupling_matrices(disc, strategy)
        out[label] = condense(K, None, ns)[0]
    for A in out.values():
        A.eliminate_zeros()
    return out


def emit_sparsity(cfg):
    """Write sorted (row, col, value) dumps; returns nnz per matrix."""
    cfg.validate()
    model = _load_checked(cfg)
    mats = sparsity_matrices(model, cfg.degrees[0], cfg.refines[0])
    out = Path(cfg.out) if cfg.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        for label, A in mats.items():
            _write_triplets(out / ('sparsity_%s.csv' % label), A)
    return {label: A.nnz for label, A in mats.items()}


def exact_membrane_frequencies(n, length):
    """The ``n`` smallest ``pi sqrt((m/L)^2 + (k/L)^2)``, m, k >= 1."""
    side = int(math.ceil(math.sqrt(n))) + 1
    while True:
        m, k = np.meshgrid(np.arange(1, side + 1), np.arange(1, side + 1))
        w = np.sort((np.pi / length * np.sqrt(m ** 2 + k ** 2)).ravel())
        # every pair with m or k above side has omega > pi*side/L
        if w.size >= n and w[n - 1] <= np.pi * side / length:
            return w[:n]
        side *= 2


def normalized_spectrum(model, degree, refine, strategy='OB', continuity='C1', length=None):
    """Pairs (k/N, omega_h/omega_exact) in ascending order."""
    _, K, M = membrane_matrices(model, degree, refine, strategy, continuity)
    lam = solve_generalized_eigen(K, M, 'full')
    omega = np.sqrt(np.clip(lam, 0.0, None))
    exact = exact_membrane_frequencies(omega.size, length or model.scale())
    frac = np.arange(1, omega.size + 1) / omega.size
    return np.column_stack([frac, omega / exact])


def emit_spectrum(cfg):
    """Write ``spectrum.csv`` for the first degree and refinement of ``cfg``."""
    cfg.validate()
    model = _load_checked(cfg)
    data = normalized_spectrum(model, cfg.degrees[0], cfg.refines[0], cfg.strategy,
                               cfg.continuity)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / 'spectrum.csv', 'w', newline='') as fh:
            w = csv.writer(fh, lineterminator='\n')
            w.writerow(('mode_fraction', 'omega_ratio'))
            for f, v in data:
                w.writerow((repr(float(f)), repr(float(v))))
    return data


def shipped_configs():
    """Bundled example study configs, keyed by file stem."""
    root = Path(__file__).with_name('configs')
    return {f.stem: f for f in sorted(root.glob('*.json'))}


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
