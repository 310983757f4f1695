import json
from argparse import Namespace
from pathlib import Path

import pytest

from krylovsketch.cli import build_config, main, parse_args
from krylovsketch.matfun import Variant
from krylovsketch.models import AssertionRecord, ConfigError, ExperimentResult, ReferenceMode
from krylovsketch.sketch import SketchKind


def test_parse_args_run_defaults(monkeypatch):
    monkeypatch.setattr('sys.argv', ['krylovsketch', 'run', '--gen', 'condiff'])
    args = parse_args()
    assert isinstance(args, Namespace)
    assert args.command == 'run'
    assert args.gen == 'condiff'
    assert args.matrix is None
    assert args.dmax == 50
    assert args.trunc_k == 2
    assert args.sketch_kind == 'sparse-sign'
    assert args.sketch_dim is None
    assert args.seed == 0
    assert args.variant == 'all'
    assert args.func == 'exp'
    assert args.ref == 'auto'
    assert args.out == 'trace.csv'
    assert args.diag_stride == 10
    assert args.agreement_window == 0
    assert args.benchmark is False
    assert args.no_cache is False
    assert args.verbose == 0


def test_parse_args_run_options(monkeypatch):
    monkeypatch.setattr(
        'sys.argv',
        ['krylovsketch', '-vv', '--no-color', 'run', '--matrix', 'A.mtx', '--dmax', '80', '--trunc-k', '0',
         '--sketch-kind', 'srdct', '--sketch-dim', '200', '--seed', '7', '--variant', 'fom,sfom-whitened',
         '--func', 'nexp', '--ref', 'long-fom', '--benchmark', '--no-cache'],
    )
    args = parse_args()
    assert args.verbose == 2
    assert args.no_color is True
    assert args.matrix == 'A.mtx'
    assert args.dmax == 80
    assert args.sketch_kind == 'srdct'
    assert args.ref == 'long-fom'
    assert args.benchmark is True


@pytest.mark.parametrize(
    "argv",
    [
        ['krylovsketch', 'run'],
        ['krylovsketch', 'run', '--gen', 'condiff', '--matrix', 'A.mtx'],
        ['krylovsketch', 'run', '--gen', 'laplace'],
        ['krylovsketch', 'run', '--gen', 'condiff', '--seed', '-1'],
        ['krylovsketch'],
    ],
)
def test_parse_args_rejects(monkeypatch, argv):
    monkeypatch.setattr('sys.argv', argv)
    with pytest.raises(SystemExit) as exc:
        parse_args()
    assert exc.value.code == 2


@pytest.mark.parametrize(
    "command, out",
    [
        ('experiment-toeplitz-bound', 'toeplitz_bound.csv'),
        ('experiment-eigvec-growth', 'eigvec_growth.csv'),
        ('experiment-condiff', 'condiff.csv'),
    ],
)
def test_parse_args_experiment_defaults(monkeypatch, command, out):
    monkeypatch.setattr('sys.argv', ['krylovsketch', command])
    args = parse_args()
    assert args.command == command
    assert args.out == out


def test_build_config(monkeypatch):
    monkeypatch.setattr(
        'sys.argv',
        ['krylovsketch', 'run', '--gen', 'condiff', '--gen-args', 'N=20,nu=1e-2', '--variant', 'trfom,sfom_pinv',
         '--sketch-kind', 'gaussian', '--ref', 'dense'],
    )
    config = build_config(parse_args(), threads=3)
    assert config.gen_args == {'N': 20, 'nu': 0.01}
    assert config.variants == [Variant.TRFOM, Variant.SFOM_PINV]
    assert config.sketch_kind is SketchKind.GAUSSIAN
    assert config.reference is ReferenceMode.DENSE
    assert config.out == Path('trace.csv')
    assert config.threads == 3


@pytest.mark.parametrize(
    "extra, message",
    [
        (['--gen-args', 'N'], 'malformed'),
        (['--variant', 'gmres'], "unknown variant 'gmres'"),
        (['--dmax', '0'], 'd_max must be at least 1'),
    ],
)
def test_build_config_errors(monkeypatch, extra, message):
    monkeypatch.setattr('sys.argv', ['krylovsketch', 'run', '--gen', 'condiff', *extra])
    with pytest.raises(ConfigError) as exc:
        build_config(parse_args())
    assert message in str(exc.value)


def test_main_run(monkeypatch, tmp_path: Path, capsys):
    out = tmp_path / 'trace.csv'
    monkeypatch.setenv('KRYLOV_CACHE_DIR', str(tmp_path / 'cache'))
    monkeypatch.setattr(
        'sys.argv',
        ['krylovsketch', 'run', '--gen', 'toeplitz', '--gen-args', 'd=40', '--dmax', '10', '--sketch-dim', '30',
         '--out', str(out)],
    )
    main()
    assert out.exists()
    assert f'Wrote 60 rows to {out}' in capsys.readouterr().out


def test_main_reports_configuration_errors(monkeypatch, capsys):
    monkeypatch.setattr('sys.argv', ['krylovsketch', 'run', '--gen', 'condiff', '--gen-args', 'N=2', '--no-cache'])
    with pytest.raises(SystemExit) as exc:
        main()
    assert exc.value.code == 2
    assert capsys.readouterr().out.startswith('Error:')


def test_main_writes_failure_report(monkeypatch, tmp_path: Path, mocker, capsys):
    out = tmp_path / 'toeplitz_bound.csv'
    result = ExperimentResult(
        'experiment-toeplitz-bound',
        outputs=[out],
        assertions=[AssertionRecord('bound holds at d=5', True), AssertionRecord('bound decreases', False, 'x')],
    )
    run = mocker.patch('krylovsketch.cli.cmd_experiment_toeplitz_bound', return_value=result)
    monkeypatch.setattr('sys.argv', ['krylovsketch', 'experiment-toeplitz-bound', '--out', str(out), '--seed', '3'])

    with pytest.raises(SystemExit) as exc:
        main()

    assert exc.value.code == 1
    run.assert_called_once_with(out, seed=3)
    report = json.loads(Path(f'{out}.failures.json').read_text())
    assert report['command'] == 'experiment-toeplitz-bound'
    assert report['checked'] == 2
    assert [failure['name'] for failure in report['failures']] == ['bound decreases']
    assert '1 assertion(s) failed' in capsys.readouterr().out


def test_main_passes_condiff_options(monkeypatch, tmp_path: Path, mocker):
    result = ExperimentResult('experiment-condiff', assertions=[AssertionRecord('ok', True)])
    run = mocker.patch('krylovsketch.cli.cmd_experiment_condiff', return_value=result)
    monkeypatch.delenv('KRYLOV_SKETCH_THREADS', raising=False)
    monkeypatch.setattr(
        'sys.argv',
        ['krylovsketch', 'experiment-condiff', '--out', str(tmp_path / 'c.csv'), '--sketch-kind', 'gaussian',
         '--dmax', '100', '--no-cache'],
    )
    main()
    run.assert_called_once_with(
        tmp_path / 'c.csv',
        seed=0,
        sketch_kind=SketchKind.GAUSSIAN,
        sketch_dim=400,
        d_max=100,
        use_cache=False,
        threads=None,
    )
