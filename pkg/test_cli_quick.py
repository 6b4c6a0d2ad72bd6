#!/usr/bin/env python3
"""
БЫСТРЫЙ ТЕСТ КОМАНДНОЙ СТРОКИ: ОТЧЕТЫ, КОДЫ ВЫХОДА, СЕТКА GAMMA
"""

import json
import math
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from data_utils import DEFAULT_CONFIG, DataProcessor, deep_merge
from errors import UsageError
from main import DoseSensitivityAnalyzer, check_gammas, gamma_sweep, main, parse_gammas
from matched_design import MatchedDataset, MatchedSet
from report_generator import SensitivityReportGenerator, load_report

GAMMAS = [1.0, 1.05, 1.10, 1.15, 1.20, 1.25, 1.30]


@pytest.fixture
def sample_csv(tmp_path):
    return DataProcessor().generate_sample_data(tmp_path / "sample.csv", n_sets=30, seed=11)


def _run(tmp_path, *argv):
    """Без config.yaml в tmp_path действуют значения по умолчанию"""
    return main([argv[0], *argv[1:], '--config', str(tmp_path / "missing.yaml"), '--quiet'])


def test_sharp_test_json(tmp_path, sample_csv):
    out = tmp_path / "sharp.json"
    assert _run(tmp_path, 'sharp-test', str(sample_csv), '--gamma', '1.2', '--out', str(out)) == 0

    report = load_report(out)
    assert {'manifest', 'gamma', 'V_F', 'S', 'p_bound', 'per_set'} <= set(report)
    assert report['gamma'] == pytest.approx(1.2)
    assert report['log_gamma'] == pytest.approx(math.log(1.2))
    assert len(report['per_set']) == 30
    assert 0.0 <= report['p_bound'] <= 1.0
    assert report['manifest']['command'] == 'sharp-test'


def test_ci_sweep_csv(tmp_path, sample_csv):
    out = tmp_path / "ci.csv"
    code = _run(tmp_path, 'ci', str(sample_csv), '--gammas', '1,1.1', '--format', 'csv',
                '--on-degenerate', 'drop', '--out', str(out))
    assert code == 0
    header = out.read_text(encoding='utf-8').splitlines()[0]
    assert header == "gamma,lower,upper,p_value"
    frame = pd.read_csv(out)
    assert len(frame) == 2
    assert np.all(frame['lower'] <= frame['upper'])


def test_estimate_and_exact(tmp_path, sample_csv):
    out = tmp_path / "estimate.json"
    assert _run(tmp_path, 'estimate', str(sample_csv), '--on-degenerate', 'drop', '--out', str(out)) == 0
    estimate = load_report(out)
    assert estimate['ci']['lower'] <= estimate['V_N'] <= estimate['ci']['upper']

    exact = tmp_path / "exact.json"
    assert _run(tmp_path, 'exact-test', str(sample_csv), '--draws', '500', '--seed', '4', '--out', str(exact)) == 0
    assert 0.0 < load_report(exact)['p_value'] <= 1.0


def test_unsorted_gammas_is_usage_error(tmp_path, sample_csv, capsys):
    code = _run(tmp_path, 'sharp-test', str(sample_csv), '--gammas', '1.2,1.0', '--out', str(tmp_path / "x.json"))
    assert code == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error['error'] == 'UsageError'
    assert not (tmp_path / "x.json").exists()


def test_degenerate_sets_error_by_default(tmp_path, capsys):
    path = tmp_path / "pairs.csv"
    rows = ["set_id,unit_id,dose,outcome"]
    for i in range(4):
        rows += [f"s{i},a,0.6,1.0", f"s{i},b,0.9,2.0"]
    path.write_text("\n".join(rows) + "\n", encoding='utf-8')
    assert _run(tmp_path, 'weak-test', str(path), '--out', str(tmp_path / "w.json")) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])['error'] == 'DegenerateThreshold'


def test_malformed_csv_is_input_error(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding='utf-8')
    assert _run(tmp_path, 'sharp-test', str(path), '--gamma', '1.0', '--out', str(tmp_path / "e.json")) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])['error'] == 'MalformedInput'


def test_unwritable_output_is_io_error(tmp_path, sample_csv, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("x", encoding='utf-8')
    code = _run(tmp_path, 'sharp-test', str(sample_csv), '--gamma', '1.0', '--out', str(blocker / "sub" / "r.json"))
    assert code == 2
    assert 'error' in json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_missing_input_is_io_error(tmp_path):
    assert _run(tmp_path, 'sharp-test', str(tmp_path / "absent.csv"), '--gamma', '1.0') == 2


def test_simulate_command(tmp_path):
    sim = tmp_path / "sim.yaml"
    sim.write_text("protocol: sharp\nn_sets: 5\nreps: 2\nseed: 1\nbox_random_starts: 1\n", encoding='utf-8')
    out = tmp_path / "sim.json"
    assert main(['simulate', '--config', str(sim), '--out', str(out), '--quiet', '--keep-reps']) == 0
    report = load_report(out)
    assert report['protocol'] == 'sharp'
    assert len(report['records']) == 2
    assert report['manifest']['seed'] == 1


# =====================================================================
# СЕТКА GAMMA
# =====================================================================

def test_parse_and_check_gammas():
    assert parse_gammas("1, 1.1,1.3") == [1.0, 1.1, 1.3]
    with pytest.raises(UsageError):
        parse_gammas("1,a")
    with pytest.raises(UsageError):
        check_gammas([1.0, 0.8])
    with pytest.raises(UsageError):
        check_gammas([1.1, 1.0])
    with pytest.raises(UsageError):
        check_gammas([])


def _quiet_config(**weak):
    return deep_merge(DEFAULT_CONFIG, {'debug': {'verbose': False}, 'weak': weak})


def test_sharp_sweep_rows(sample_csv):
    dataset = DataProcessor().load_dataset(sample_csv)
    sweep = gamma_sweep('sharp-test', GAMMAS, dataset, _quiet_config())
    assert [row['gamma'] for row in sweep['rows']] == GAMMAS
    assert 'p_crossing_gamma' in sweep
    V = [row['V_F'] for row in sweep['rows']]
    assert all(b <= a + 1e-9 for a, b in zip(V, V[1:]))
    if sweep['p_crossing_gamma'] is not None:
        first = next(row for row in sweep['rows'] if row['gamma'] == sweep['p_crossing_gamma'])
        assert first['p_value'] > sweep['alpha']


def test_ci_sweep_monotone_on_pairs():
    """Пары с дозами (0.2, 0.8): p и ширина интервала не убывают по Gamma"""
    sets = tuple(MatchedSet(set_id=f"p{i}", doses=[0.2, 0.8], outcomes=[0.0, 1.0 if i % 2 else 0.0])
                 for i in range(20))
    sweep = gamma_sweep('ci', GAMMAS, MatchedDataset(sets), _quiet_config())
    rows = sweep['rows']
    p = [row['p_value'] for row in rows]
    width = [row['upper'] - row['lower'] for row in rows]
    assert all(b >= a - 1e-9 for a, b in zip(p, p[1:]))
    assert all(b >= a - 1e-8 for a, b in zip(width, width[1:]))
    assert 'ci_crosses_zero_gamma' in sweep
    assert set(rows[0]) == {'gamma', 'lower', 'upper', 'p_value'}
    assert len(sweep['searches']) == len(GAMMAS)
    assert 'V_N' in sweep

    text = "\n".join(SensitivityReportGenerator().sweep_lines(sweep))
    assert "Gamma" in text
    assert "1.3" in text


def test_sweep_rejects_other_commands(sample_csv):
    dataset = DataProcessor().load_dataset(sample_csv)
    with pytest.raises(UsageError):
        gamma_sweep('weak-test', GAMMAS, dataset, _quiet_config())


def test_full_analysis_pipeline(tmp_path, sample_csv):
    config = deep_merge(DEFAULT_CONFIG, {
        'debug': {'verbose': False},
        'weak': {'on_degenerate': 'drop'},
        'sweep': {'gammas': [1.0, 1.2]},
        'exact': {'draws': 300},
        'reporting': {'results_dir': str(tmp_path / "results")},
    })
    result = DoseSensitivityAnalyzer(config=config).run_full_analysis(sample_csv)
    assert result['status'] == 'success'
    assert result['files_created'] == 7
    assert (result['results_folder'] / "ci_sweep.csv").exists()

    failed = DoseSensitivityAnalyzer(config=config).run_full_analysis(tmp_path / "absent.csv")
    assert failed['status'] == 'error'


def test_runner_arguments(tmp_path, monkeypatch):
    import runner

    monkeypatch.setattr(sys, 'argv', ['runner.py'])
    assert runner.main() == 1
    monkeypatch.setattr(sys, 'argv', ['runner.py', str(tmp_path / "absent.csv")])
    assert runner.main() == 1
