import csv

import numpy as np
import pytest

from dualmortar.cli import main
from dualmortar.errors import ConfigurationError
from dualmortar.study import (COLUMNS, StudyConfig, emit_sparsity, emit_spectrum,
                              exact_membrane_frequencies, ls_slope, observed_rate, run_study)


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_rate_helpers():
    assert observed_rate(4.0, 1.0) == 2.0
    assert observed_rate(0.0, 1.0) is None
    assert abs(ls_slope([0, 1, 2], [1.0, 0.25, 0.0625]) - 2.0) < 1e-12


def test_config_validation():
    for bad in (dict(degrees=(1,)), dict(refines=(9,)), dict(problem='heat'),
                dict(strategy='Q'), dict(tol=0.0)):
        with pytest.raises(ConfigurationError):
            StudyConfig(**bad).validate()


def test_hash_ignores_output_location():
    a = StudyConfig(out='/tmp/a')
    assert a.hash() == StudyConfig(out='/tmp/b').hash()
    assert a.hash() != StudyConfig(degrees=(3,)).hash()


def test_biharmonic_study_writes_reproducible_csv(tmp_path):
    cfg = StudyConfig(model='two_patch_basic', strategy='B', degrees=(2,), refines=(0, 1, 2),
                      out=str(tmp_path / 'a'))
    res = run_study(cfg)
    assert res.ok
    run_study(StudyConfig(**{**cfg.__dict__, 'out': str(tmp_path / 'b')}))
    a = (tmp_path / 'a' / 'results.csv').read_bytes()
    assert a == (tmp_path / 'b' / 'results.csv').read_bytes()
    rows = _read(tmp_path / 'a' / 'results.csv')
    assert list(rows[0]) == list(COLUMNS)
    assert all(r['config_hash'] == cfg.hash() for r in rows)
    assert rows[0]['l2_rate'] == '' and rows[1]['l2_rate'] != ''
    assert rows[2]['l2_slope'] != '' and rows[0]['seconds'] == ''
    meta = (tmp_path / 'a' / 'meta.txt').read_text()
    assert 'config_hash: %s' % cfg.hash() in meta


def test_failed_rows_are_recorded_and_sweep_continues():
    res = run_study(StudyConfig(model='three_patch', strategy='MG', degrees=(2,),
                                refines=(0, 1)))
    assert not res.ok
    assert res.rows[0]['status'].startswith('error: MeshTooCoarseError')
    assert res.rows[1]['status'] == 'ok'
    assert res.rows[1]['l2_rate'] is None


def test_timing_column(tmp_path):
    res = run_study(StudyConfig(problem='l2-projection-1d', degrees=(2,), refines=(0,),
                                timing=True))
    assert res.rows[0]['seconds'] > 0


def test_projection_and_legendre_studies():
    res = run_study(StudyConfig(problem='l2-projection-1d', strategy='G', degrees=(3,),
                                refines=(0, 1, 2, 3)))
    assert abs(res.rows[-1]['l2_slope'] - 4) < 0.3
    res = run_study(StudyConfig(problem='legendre-reproduction', degrees=(3,), refines=(0,)))
    errs = res.extra['legendre'][(3, 0)]
    assert errs[0] < 1e-10 and min(errs[1:]) > 1e-3


def test_membrane_and_h2_rows():
    res = run_study(StudyConfig(model='nine_patch', strategy='OB', problem='membrane-eigen',
                                degrees=(2,), refines=(0,)))
    row = res.rows[0]
    assert row['omega_max'] > row['omega_min'] > 0
    res = run_study(StudyConfig(model='two_patch_basic', problem='h2-projection',
                                degrees=(2,), refines=(0, 1)))
    assert res.ok and res.rows[1]['h2_err'] < res.rows[0]['h2_err']


def test_verify_problem():
    res = run_study(StudyConfig(model='five_patch', strategy='OB', problem='verify',
                                degrees=(2, 3), refines=(1,)))
    assert res.ok


def test_sparsity_dumps(tmp_path):
    cfg = StudyConfig(model='two_patch_basic', degrees=(2,), refines=(1,), out=str(tmp_path))
    nnz = emit_sparsity(cfg)
    rows = _read(tmp_path / 'sparsity_uncoupled.csv')
    assert len(rows) == nnz['uncoupled']
    assert nnz['bezier'] <= nnz['global']
    first = (tmp_path / 'sparsity_bezier.csv').read_bytes()
    emit_sparsity(cfg)
    assert first == (tmp_path / 'sparsity_bezier.csv').read_bytes()
    keys = [(int(r['row']), int(r['col'])) for r in rows]
    assert keys == sorted(keys)


def test_uncoupled_nnz_is_sum_over_patches():
    from dualmortar.model import load_model
    from dualmortar.study import sparsity_matrices
    model = load_model('two_patch_basic')
    K = sparsity_matrices(model, 2, 1)['uncoupled']
    d = model.discretize(2, 1)
    per = 0
    for pid in (1, 2):
        o, n = d.offset(pid), d.space(pid).dim
        per += K[o:o + n][:, o:o + n].nnz
    assert K.nnz == per


def test_spectrum(tmp_path):
    cfg = StudyConfig(model='square', strategy='OB', problem='membrane-eigen', degrees=(3,),
                      refines=(2,), out=str(tmp_path))
    data = emit_spectrum(cfg)
    rows = _read(tmp_path / 'spectrum.csv')
    assert len(rows) == data.shape[0]
    assert abs(data[:5, 1] - 1).max() < 5e-3
    assert np.all(np.diff(data[:, 0]) > 0)


def test_exact_frequencies():
    w = exact_membrane_frequencies(4, 3.0)
    np.testing.assert_allclose(w, np.pi / 3 * np.sqrt([2, 5, 5, 8]))


def test_cli_commands(tmp_path, capsys):
    assert main(['project', '--degrees', '2', '--refines', '0,1', '--out', str(tmp_path / 'p')]) == 0
    assert (tmp_path / 'p' / 'results.csv').exists()
    assert main(['solve-biharmonic', '--model', 'three_patch', '--strategy', 'MG',
                 '--degrees', '2', '--refines', '0,1']) == 1
    assert main(['verify', '--model', 'two_patch_basic', '--strategy', 'B',
                 '--degrees', '2', '--refines', '0']) == 0
    assert main(['sparsity', '--model', 'two_patch_basic', '--degrees', '2', '--refines', '0',
                 '--out', str(tmp_path / 's')]) == 0
    assert main(['eigen', '--degrees', '2', '--refines', '0', '--continuity', 'C0']) == 0
    assert main(['solve-biharmonic', '--model', 'missing_model']) == 2
    out = capsys.readouterr().out
    assert 'uncoupled nnz' in out


def test_cli_config_file(tmp_path):
    cfg = tmp_path / 'c.json'
    cfg.write_text('{"model": "two_patch_basic", "strategy": "G", "degrees": [2], "refines": [0]}')
    assert main(['h2-project', '--config', str(cfg), '--out', str(tmp_path / 'o')]) == 0
    assert _read(tmp_path / 'o' / 'results.csv')[0]['status'] == 'ok'
    cfg.write_text('{"colour": 1}')
    with pytest.raises(ConfigurationError):
        StudyConfig.from_file(cfg)


def test_shipped_configs_validate():
    from dualmortar.study import shipped_configs
    configs = shipped_configs()
    assert {'two_patch_bezier', 'nine_patch_membrane', 'dual_projection'} <= set(configs)
    for path in configs.values():
        StudyConfig.from_file(path).validate()


def test_shipped_projection_config_runs():
    from dualmortar.study import shipped_configs
    cfg = StudyConfig.from_file(shipped_configs()['dual_projection'], degrees=(2,))
    rows = run_study(cfg).rows
    assert abs(rows[-1]['l2_slope'] - 1) < 0.3
