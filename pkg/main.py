#!/usr/bin/env python3
"""
Анализ чувствительности для сопоставленных исследований с дозами воздействия.

Команды:
  sharp-test   - ограничивающее p-значение острой гипотезы (одно Gamma или сетка)
  exact-test   - рандомизационное p-значение при Gamma = 1
  estimate     - оценка V_N, S_N(Q) и интервал при Gamma = 1
  weak-test    - ограничивающее p-значение слабой гипотезы theta = theta0
  ci           - доверительный интервал обращением тестов (одно Gamma или сетка)
  simulate     - Монте-Карло проверка размера тестов

Gamma = exp(gamma) задается пользователем; внутри используется gamma = ln Gamma.
Коды выхода: 0 - успех, 1 - ошибка анализа (JSON в stderr), 2 - ошибка ввода/вывода.
"""

import argparse
import copy
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from data_utils import DEFAULT_CONFIG, DataProcessor, DatasetSchema, load_yaml_config
from errors import DoseSensError, UsageError
from matched_design import MatchedDataset
from report_generator import RunManifest, SensitivityReportGenerator, emit_report
from sensitivity_simulator import load_sim_config, run_sim_grid
from sharp_analyzer import SharpNullAnalyzer
from weak_analyzer import WeakNullAnalyzer

SWEEP_COMMANDS = ('sharp-test', 'ci')


def parse_gammas(text: str) -> List[float]:
    try:
        return [float(g) for g in str(text).split(',') if g.strip()]
    except ValueError:
        raise UsageError(f"❌ Не удалось разобрать список Gamma '{text}'") from None


def check_gammas(gammas: Sequence[float]) -> List[float]:
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise UsageError("❌ Пустая сетка Gamma")
    if any(not math.isfinite(g) or g < 1 for g in gammas):
        raise UsageError("❌ Все значения Gamma должны быть >= 1")
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise UsageError("❌ Сетка Gamma должна быть отсортирована по возрастанию")
    return gammas


def gamma_sweep(command: str, gammas: Sequence[float], dataset: MatchedDataset, config: Dict,
                sharp: Optional[SharpNullAnalyzer] = None, weak: Optional[WeakNullAnalyzer] = None) -> Dict:
    """
    Одна строка на Gamma. sharp-test: p; ci: интервал и p-значение теста theta0.
    Отмечает наименьшее Gamma, где p > alpha, и (для ci) где нижняя граница <= 0.
    """
    if command not in SWEEP_COMMANDS:
        raise UsageError(f"❌ Сетка поддерживается для {SWEEP_COMMANDS}, получено '{command}'")
    gammas = check_gammas(gammas)
    alpha = config['analysis']['alpha']
    rows, extras = [], {}

    if command == 'sharp-test':
        sharp = sharp or SharpNullAnalyzer(config=config)
        for Gamma in gammas:
            result = sharp.analyze(dataset, Gamma)
            rows.append({'gamma': Gamma, 'p_value': result.p_bound, 'V_F': result.V_F, 'S': result.S})
    else:
        weak = weak or WeakNullAnalyzer(config=config)
        searches = []
        for Gamma in gammas:
            interval = weak.ci(dataset, Gamma)
            test = weak.test(dataset, Gamma)
            rows.append({'gamma': Gamma, 'lower': interval.lower, 'upper': interval.upper,
                         'p_value': test.p_bound})
            searches.append(interval.search)
            extras['V_N'] = interval.V_N
        extras['searches'] = searches

    crossing = next((row['gamma'] for row in rows if row['p_value'] > alpha), None)
    sweep = {'command': command, 'alpha': alpha, 'rows': rows, 'p_crossing_gamma': crossing}
    sweep.update(extras)
    if command == 'ci':
        sweep['ci_alpha'] = config['weak']['ci_alpha']
        sweep['ci_crosses_zero_gamma'] = next((row['gamma'] for row in rows if row['lower'] <= 0), None)
    return sweep


class DoseSensitivityAnalyzer:
    """
    Полный анализ CSV файла: рандомизационный тест, острая гипотеза
    по сетке Gamma, оценка и интервалы слабой гипотезы по сетке Gamma.
    """

    def __init__(self, config_path="config.yaml", config: Optional[Dict] = None):
        self.config = config if config is not None else self._load_config(config_path)
        self.processor = DataProcessor(DatasetSchema.from_config(self.config['data']))
        self.sharp = SharpNullAnalyzer(config=self.config)
        self.weak = WeakNullAnalyzer(config=self.config)
        self.results_dir = Path(self.config['reporting']['results_dir'])
        self.reporter = SensitivityReportGenerator(self.results_dir)

    def _load_config(self, config_path):
        return load_yaml_config(config_path, DEFAULT_CONFIG)

    def run_full_analysis(self, file_path):
        """Все шаги подряд; результат - словарь со статусом"""
        print("🎯 ЗАПУСК АНАЛИЗА ЧУВСТВИТЕЛЬНОСТИ")
        print("=" * 70)
        try:
            print(f"🔍 Загрузка {file_path}")
            dataset = self.processor.load_dataset(file_path)
            print(f"   Наборов: {dataset.I}, объектов: {dataset.N}, ковариат: {dataset.K}")

            gammas = self.config['sweep']['gammas']
            exact = self.sharp.exact(dataset)
            sharp_sweep = gamma_sweep('sharp-test', gammas, dataset, self.config, sharp=self.sharp)
            estimate = self.weak.estimate(dataset)
            ci_sweep = gamma_sweep('ci', gammas, dataset, self.config, weak=self.weak)

            folder = self.results_dir / Path(file_path).stem
            manifest = RunManifest.create('full-analysis', self.config, file_path, self.config['runtime']['seed'])
            files = [
                emit_report(exact, 'json', folder / 'exact_test.json', manifest),
                emit_report(sharp_sweep, 'json', folder / 'sharp_sweep.json', manifest),
                emit_report(sharp_sweep, 'csv', folder / 'sharp_sweep.csv'),
                emit_report(estimate, 'json', folder / 'estimate.json', manifest),
                emit_report(ci_sweep, 'json', folder / 'ci_sweep.json', manifest),
                emit_report(ci_sweep, 'csv', folder / 'ci_sweep.csv'),
            ]
            self.reporter.results_dir = folder
            files.append(self.reporter.save_text_report(ci_sweep, 'АНАЛИЗ_ЧУВСТВИТЕЛЬНОСТИ.txt'))
            self.reporter.print_report(sharp_sweep)
            self.reporter.print_report(ci_sweep)

            return {
                'status': 'success',
                'results_folder': folder,
                'files_created': len(files),
                'p_crossing_gamma': sharp_sweep['p_crossing_gamma'],
                'ci_crosses_zero_gamma': ci_sweep['ci_crosses_zero_gamma'],
                'estimate': estimate['V_N'],
            }
        except (DoseSensError, OSError) as e:
            print(f"❌ Ошибка: {e}")
            return {'status': 'error', 'message': str(e)}


# =====================================================================
# КОМАНДНАЯ СТРОКА
# =====================================================================

def _add_common(parser: argparse.ArgumentParser, data: bool = True):
    if data:
        parser.add_argument('data', help='CSV с колонками set_id, unit_id, dose, outcome[, ковариаты]')
    parser.add_argument('--config', default='config.yaml', help='YAML конфигурация')
    parser.add_argument('--out', default=None, help='Файл отчета (по умолчанию results/<команда>.<формат>)')
    parser.add_argument('--format', choices=['json', 'csv'], default=None)
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--threads', type=int, default=None)
    parser.add_argument('--quiet', action='store_true', help='Без промежуточного вывода')


def _add_variance(parser: argparse.ArgumentParser):
    parser.add_argument('--alpha', type=float, default=None)
    parser.add_argument('--q-covariates', choices=['none', 'means'], default=None)
    parser.add_argument('--weights', choices=['size', 'unit'], default=None)


def _add_estimand(parser: argparse.ArgumentParser):
    parser.add_argument('--estimand', default=None,
                        choices=['sate', 'effect-ratio', 'tsate', 'avg-slope', 'stochastic-contrast'])
    parser.add_argument('--threshold', type=float, default=None)
    parser.add_argument('--lambda0', type=float, default=None)
    parser.add_argument('--interventions', default=None, help="Два вмешательства через запятую: above,baseline")
    parser.add_argument('--intervention-weights', default=None, help='CSV set_id, position, weight')
    parser.add_argument('--on-degenerate', choices=['error', 'drop'], default=None)
    parser.add_argument('--method', choices=['vc', 'vn'], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Анализ чувствительности сопоставленных исследований с дозами')
    commands = parser.add_subparsers(dest='command', required=True)

    sharp = commands.add_parser('sharp-test', help='Острая гипотеза Фишера')
    _add_common(sharp)
    _add_variance(sharp)
    sharp.add_argument('--gamma', type=float, default=None, help='Gamma >= 1')
    sharp.add_argument('--gammas', default=None, help='Сетка Gamma через запятую')
    sharp.add_argument('--statistic', default=None)

    exact = commands.add_parser('exact-test', help='Рандомизационный тест при Gamma = 1')
    _add_common(exact)
    exact.add_argument('--statistic', default=None)
    exact.add_argument('--draws', type=int, default=None)

    estimate = commands.add_parser('estimate', help='Оценка V_N и интервал при Gamma = 1')
    _add_common(estimate)
    _add_variance(estimate)
    _add_estimand(estimate)

    weak = commands.add_parser('weak-test', help='Слабая гипотеза theta = theta0')
    _add_common(weak)
    _add_variance(weak)
    _add_estimand(weak)
    weak.add_argument('--gamma', type=float, default=1.0)
    weak.add_argument('--theta0', type=float, default=None)
    weak.add_argument('--side', choices=['greater', 'less'], default=None)

    ci = commands.add_parser('ci', help='Доверительный интервал')
    _add_common(ci)
    _add_variance(ci)
    _add_estimand(ci)
    ci.add_argument('--gamma', type=float, default=None)
    ci.add_argument('--gammas', default=None)
    ci.add_argument('--theta0', type=float, default=None)
    ci.add_argument('--side', choices=['greater', 'less'], default=None)

    simulate = commands.add_parser('simulate', help='Монте-Карло симуляция')
    _add_common(simulate, data=False)
    simulate.add_argument('--reps', type=int, default=None)
    simulate.add_argument('--keep-reps', action='store_true')
    return parser


def apply_overrides(config: Dict, args: argparse.Namespace) -> Dict:
    """Флаги командной строки поверх YAML"""
    config = copy.deepcopy(config)

    def put(section, key, value):
        if value is not None:
            config[section][key] = value

    if args.seed is not None:
        put('runtime', 'seed', args.seed)
        put('box', 'seed', args.seed)
    put('runtime', 'threads', args.threads)
    put('reporting', 'format', args.format)
    if args.quiet:
        config['debug']['verbose'] = False

    options = vars(args)
    put('variance', 'covariates', options.get('q_covariates'))
    put('variance', 'weights', options.get('weights'))
    put('analysis', 'statistic', options.get('statistic'))
    put('exact', 'draws', options.get('draws'))
    put('weak', 'estimand', options.get('estimand'))
    put('weak', 'threshold', options.get('threshold'))
    put('weak', 'lambda0', options.get('lambda0'))
    put('weak', 'intervention_weights', options.get('intervention_weights'))
    put('weak', 'on_degenerate', options.get('on_degenerate'))
    put('weak', 'method', options.get('method'))
    put('weak', 'theta0', options.get('theta0'))
    put('weak', 'side', options.get('side'))
    if options.get('interventions'):
        config['weak']['interventions'] = [s.strip() for s in options['interventions'].split(',')]
    if options.get('alpha') is not None:
        # для ci --alpha задает уровень интервала, для тестов - уровень теста
        put('weak' if args.command in ('ci', 'estimate') else 'analysis',
            'ci_alpha' if args.command in ('ci', 'estimate') else 'alpha', options['alpha'])
    return config


def _gammas_for(args, config) -> Optional[List[float]]:
    if getattr(args, 'gammas', None):
        return parse_gammas(args.gammas)
    if getattr(args, 'gamma', None) is None:
        return list(config['sweep']['gammas'])
    return None


def run_command(args: argparse.Namespace) -> Path:
    base = load_yaml_config(args.config, DEFAULT_CONFIG) if args.command != 'simulate' else DEFAULT_CONFIG
    config = apply_overrides(base, args)
    fmt = config['reporting']['format']
    out = Path(args.out) if args.out else Path(config['reporting']['results_dir']) / f"{args.command}.{fmt}"

    if args.command == 'simulate':
        sim_config, grid = load_sim_config(args.config, reps=args.reps, seed=args.seed, threads=args.threads,
                                           keep_reps=True if args.keep_reps else None,
                                           verbose=False if args.quiet else None)
        frame, reports = run_sim_grid(sim_config, grid)
        manifest = RunManifest.create('simulate', sim_config.to_dict(), args.config, sim_config.seed)
        if len(reports) == 1 and fmt == 'json':
            return emit_report(reports[0], fmt, out, manifest)
        result = {'rows': frame.to_dict(orient='records'), 'reports': [r.to_dict() for r in reports]}
        return emit_report(result, fmt, out, manifest)

    dataset = DataProcessor(DatasetSchema.from_config(config['data'])).load_dataset(args.data)
    manifest = RunManifest.create(args.command, config, args.data, config['runtime']['seed'])
    reporter = SensitivityReportGenerator(config['reporting']['results_dir'])

    if args.command == 'exact-test':
        result = SharpNullAnalyzer(config=config).exact(dataset)
    elif args.command == 'estimate':
        result = WeakNullAnalyzer(config=config).estimate(dataset)
    elif args.command == 'weak-test':
        result = WeakNullAnalyzer(config=config).test(dataset, args.gamma)
    else:
        gammas = _gammas_for(args, config)
        if gammas is not None:
            result = gamma_sweep(args.command, gammas, dataset, config)
        elif args.command == 'sharp-test':
            check_gammas([args.gamma])
            result = SharpNullAnalyzer(config=config).analyze(dataset, args.gamma)
        else:
            check_gammas([args.gamma])
            result = WeakNullAnalyzer(config=config).ci(dataset, args.gamma)

    if config['debug']['verbose']:
        reporter.print_report(result)
    return emit_report(result, fmt, out, manifest)


def _fail(error: Exception, code: int) -> int:
    print(json.dumps({'error': type(error).__name__, 'message': str(error)}, ensure_ascii=False), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = run_command(args)
    except DoseSensError as e:
        return _fail(e, 1)
    except OSError as e:
        return _fail(e, 2)
    print(f"✅ Отчет сохранен: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
