"""Closed-form solutions used by the convergence studies.

Each case is written once as a sympy expression; derivatives through second
order and the bi-Laplacian are generated symbolically and compiled with
``lambdify``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sym

from .errors import ConfigurationError

_x, _y = sym.symbols('x y', real=True)
_pi = sym.pi

_CASES = {
    # two-patch square, clamped
    'two_patch': sym.sin(2 * _pi * _x) * sym.sin(2 * _pi * _y)
    * (_x * _y * (_x - 1) * (_y - 1)) ** 2,
    # triangle (0,0), (3,0), (1,3), clamped
    'three_patch': sym.sin(2 * _pi * _x) * sym.sin(2 * _pi * _y)
    * (_y * (3 * _x - _y) * (3 * _x + 2 * _y - 9)) ** 2,
    # unit square, clamped
    'five_patch': sym.sin(2 * _pi * _x) ** 2 * sym.sin(2 * _pi * _y) ** 2,
    'sine': sym.sin(2 * _pi * _x) * sym.sin(2 * _pi * _y),
    'harmonic_quadratic': _x ** 2 - _y ** 2 + _x * _y + 2 * _x - _y + 1,
    'biharmonic_cubic': _x ** 3 + _x * _y ** 2 - 2 * _x ** 2 * _y + _y ** 2,
}

DEFAULT_FOR_MODEL = {
    'two_patch_basic': 'two_patch',
    'two_patch_degree': 'two_patch',
    'two_patch_distorted': 'two_patch',
    'two_patch_nonmatch': 'two_patch',
    'three_patch': 'three_patch',
    'five_patch': 'five_patch',
}


@dataclass(frozen=True)
class ManufacturedSolution:
    """Vectorized callables for ``u``, its derivatives and ``f = lap^2 u``."""
    name: str
    expr: object
    u: object
    ux: object
    uy: object
    uxx: object
    uxy: object
    uyy: object
    laplacian: object
    bilaplacian: object

    def derivatives(self, x, y):
        """Array of shape (6, m): u, u_x, u_y, u_xx, u_xy, u_yy."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.stack([g(x, y) for g in (self.u, self.ux, self.uy, self.uxx, self.uxy,
                                           self.uyy)])


def _broadcasting(fn):
    def call(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.broadcast_to(fn(x, y), x.shape).astype(float)
    return call


def _compile(expr, name='custom'):
    fs = [expr, sym.diff(expr, _x), sym.diff(expr, _y), sym.diff(expr, _x, 2),
          sym.diff(expr, _x, _y), sym.diff(expr, _y, 2)]
    lap = fs[3] + fs[5]
    bilap = sym.diff(lap, _x, 2) + sym.diff(lap, _y, 2)
    fns = [_broadcasting(sym.lambdify((_x, _y), sym.simplify(f) if f.is_polynomial() else f,
                                      'numpy'))
           for f in fs + [lap, bilap]]
    return ManufacturedSolution(name, expr, *fns)


@lru_cache(maxsize=None)
def get_solution(name):
    """Registered solution by name (see :func:`available_solutions`)."""
    try:
        return _compile(_CASES[name], name)
    except KeyError:
        raise ConfigurationError('unknown manufactured solution %r' % name) from None


def from_expression(text, name='custom'):
    """Compile a solution from a sympy-parsable expression in ``x`` and ``y``."""
    return _compile(sym.sympify(text, locals={'x': _x, 'y': _y}), name)


def available_solutions():
    return sorted(_CASES)
