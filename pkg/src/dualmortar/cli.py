"""Command line front end: ``dualmortar <command> [options]``."""
import argparse
import sys

from .errors import ConfigurationError
from .model import load_model, validate_model
from .study import StudyConfig, emit_sparsity, emit_spectrum, run_study

_PROBLEM = {
    'verify': 'verify',
    'project': 'l2-projection-1d',
    'legendre': 'legendre-reproduction',
    'solve-biharmonic': 'biharmonic',
    'h2-project': 'h2-projection',
    'eigen': 'membrane-eigen',
    'sparsity': 'biharmonic',
}
_DEFAULT_STRATEGY = {'project': 'B', 'legendre': 'B', 'eigen': 'OB'}


def _int_list(text):
    try:
        return tuple(int(t) for t in text.split(',') if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError('expected comma separated integers: %r' % text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='dualmortar', description='Run dual mortar studies and write CSV results.')
    sub = parser.add_subparsers(dest='command', required=True)
    for name in _PROBLEM:
        p = sub.add_parser(name)
        p.add_argument('--config', help='JSON file with StudyConfig fields')
        p.add_argument('--model', help='bundled model name or path to a model file')
        p.add_argument('--strategy', choices=('MG', 'MB', 'OG', 'OB', 'G', 'B'))
        p.add_argument('--degrees', type=_int_list)
        p.add_argument('--refines', type=_int_list)
        p.add_argument('--out', help='output directory')
        p.add_argument('--tol', type=float, help='CG tolerance')
        p.add_argument('--solver', choices=('cg', 'direct'))
        p.add_argument('--solution', help='manufactured solution name')
        p.add_argument('--continuity', choices=('C0', 'C1'))
        p.add_argument('--bc', choices=('clamped', 'fixed'))
        p.add_argument('--timing', action='store_true', default=None,
                       help='record wall time per row')
        if name == 'eigen':
            p.add_argument('--spectrum', action='store_true',
                           help='also write the normalized spectrum')
    return parser


def _config(args):
    overrides = dict(model=args.model, strategy=args.strategy, degrees=args.degrees,
                     refines=args.refines, out=args.out, tol=args.tol, solver=args.solver,
                     solution=args.solution, continuity=args.continuity, bc=args.bc,
                     timing=args.timing, problem=_PROBLEM[args.command])
    if args.config:
        return StudyConfig.from_file(args.config, **overrides)
    if overrides['strategy'] is None:
        overrides['strategy'] = _DEFAULT_STRATEGY.get(args.command)
    if args.command == 'eigen' and args.model is None:
        overrides['model'] = 'nine_patch'
    return StudyConfig(**{k: v for k, v in overrides.items() if v is not None})


def _print_rows(result, out):
    cols = ('degree', 'refine', 'dofs', 'condensed_dofs', 'l2_err', 'h2_err', 'l2_rate',
            'h2_rate', 'omega_max', 'omega_min', 'status')
    out.write(' '.join('%-12s' % c for c in cols).rstrip() + '\n')
    for row in result.rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append('%-12s' % ('' if v is None else
                                    ('%.4g' % v if isinstance(v, float) else v)))
        out.write(' '.join(cells).rstrip() + '\n')


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args).validate()
        if args.command == 'verify':
            report = validate_model(load_model(cfg.model))
            for d in report:
                out.write('%s: %s: %s\n' % (d.severity, d.check, d.message))
            if not report.ok:
                return 1
        if args.command == 'sparsity':
            for label, nnz in emit_sparsity(cfg).items():
                out.write('%s nnz %d\n' % (label, nnz))
            return 0
        result = run_study(cfg)
        _print_rows(result, out)
        if args.command == 'eigen' and args.spectrum:
            emit_spectrum(cfg)
    except ConfigurationError as exc:
        sys.stderr.write('error: %s\n' % exc)
        return 2
    return 0 if result.ok else 1


if __name__ == '__main__':
    sys.exit(main())
