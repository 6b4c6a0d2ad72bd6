#!/usr/bin/env python3
"""
Утилиты для работы с данными сопоставленных исследований
Загрузка CSV, валидация, экспорт, генерация тестовых данных
"""

import argparse
import copy
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed

from errors import (
    ConfigError,
    DoseSensError,
    InconsistentCovariateDim,
    MalformedInput,
    MissingColumn,
    NonFiniteValue,
    SingletonSet,
)
from matched_design import MatchedDataset, MatchedSet, make_rng


@dataclass
class DatasetSchema:
    """Соответствие колонок CSV полям модели"""

    set_col: str = 'set_id'
    unit_col: Optional[str] = 'unit_id'
    dose_col: str = 'dose'
    outcome_col: str = 'outcome'
    # None - все остальные колонки считаются ковариатами
    covariate_cols: Optional[List[str]] = None

    @classmethod
    def from_config(cls, config: Optional[Dict]) -> 'DatasetSchema':
        config = config or {}
        return cls(
            set_col=config.get('set_col', 'set_id'),
            unit_col=config.get('unit_col', 'unit_id'),
            dose_col=config.get('dose_col', 'dose'),
            outcome_col=config.get('outcome_col', 'outcome'),
            covariate_cols=config.get('covariate_cols'),
        )

    def required_columns(self) -> List[str]:
        columns = [self.set_col, self.dose_col, self.outcome_col]
        if self.unit_col:
            columns.insert(1, self.unit_col)
        return columns

    def resolve_covariates(self, columns: Sequence[str]) -> List[str]:
        if self.covariate_cols is not None:
            return list(self.covariate_cols)
        reserved = set(self.required_columns())
        return [c for c in columns if c not in reserved]


# Значения по умолчанию; config.yaml перекрывает их рекурсивно
DEFAULT_CONFIG = {
    'data': {
        'set_col': 'set_id',
        'unit_col': 'unit_id',
        'dose_col': 'dose',
        'outcome_col': 'outcome',
        'covariate_cols': None,
    },
    'analysis': {
        'statistic': 'double-rank',
        'dose_rank_scope': 'global',
        'dose_scores': None,
        'outcome_scores': None,
        'alpha': 0.1,
    },
    'enumeration': {'max_set_size': 5},
    'lp': {'tol': 1e-9, 'max_iter': 50000},
    'box': {'tol': 1e-10, 'max_iter': 10000, 'random_starts': 20, 'seed': 0},
    'variance': {'covariates': 'none', 'weights': 'size', 'rank_tol': 1e-10, 'drop_dependent': False},
    'weak': {
        'estimand': 'tsate',
        'threshold': 0.5,
        'lambda0': 0.0,
        'interventions': ['above', 'baseline'],
        'intervention_weights': None,
        'method': 'vc',
        'side': 'greater',
        'theta0': 0.0,
        'on_degenerate': 'error',
        'ci_alpha': 0.1,
        'ci_grid_points': 400,
    },
    'exact': {'draws': 10000, 'max_enumeration': 1000000},
    'sweep': {'gammas': [1.0, 1.05, 1.10, 1.15, 1.20, 1.25, 1.30]},
    'runtime': {'seed': 0, 'threads': 1},
    'reporting': {'results_dir': 'results', 'format': 'json'},
    'debug': {'verbose': True},
}


def deep_merge(base: Dict, override: Optional[Dict]) -> Dict:
    """Рекурсивное слияние словарей конфигурации (override побеждает)"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_yaml_config(config_path, defaults: Dict) -> Dict:
    """Значения по умолчанию + пользовательский YAML (если файл есть)"""
    config_file = Path(config_path) if config_path else None
    if config_file is not None and config_file.exists():
        with open(config_file, 'r', encoding='utf-8') as f:
            user_config = yaml.safe_load(f) or {}
        return deep_merge(defaults, user_config)
    return copy.deepcopy(defaults)


def resolve_n_jobs(requested: int = 1) -> int:
    """Число процессов: runtime.threads (<= 0 - все ядра), ограниченное DOSESENS_THREADS"""
    n_jobs = int(requested) if requested and int(requested) > 0 else (os.cpu_count() or 1)
    cap = os.environ.get('DOSESENS_THREADS')
    if cap:
        try:
            n_jobs = min(n_jobs, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"❌ DOSESENS_THREADS должен быть целым числом, получено '{cap}'") from None
    return n_jobs


def parallel_map(func: Callable, argument_tuples: Iterable[tuple], n_jobs: int = 1) -> list:
    """Порядок результатов совпадает с порядком аргументов при любом n_jobs"""
    argument_tuples = list(argument_tuples)
    if n_jobs == 1 or len(argument_tuples) < 2:
        return [func(*args) for args in argument_tuples]
    return Parallel(n_jobs=n_jobs)(delayed(func)(*args) for args in argument_tuples)


class DataProcessor:
    """Класс для загрузки и валидации данных сопоставленных наборов"""

    def __init__(self, schema: Optional[DatasetSchema] = None):
        self.schema = schema or DatasetSchema()
        self.supported_formats = ['.csv']

    def load_dataset(self, file_path) -> MatchedDataset:
        """
        Чтение CSV: наборы группируются по set_id в порядке первого появления,
        объекты внутри набора идут в порядке строк файла.
        """
        schema = self.schema
        try:
            frame = pd.read_csv(file_path, encoding='utf-8')
        except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
            raise MalformedInput(f"❌ Не удалось прочитать {file_path}: {e}") from e
        frame.columns = [str(c).strip() for c in frame.columns]

        missing = [c for c in schema.required_columns() if c not in frame.columns]
        covariate_cols = schema.resolve_covariates(frame.columns)
        missing += [c for c in covariate_cols if c not in frame.columns]
        if missing:
            raise MissingColumn(f"❌ В файле {file_path} нет колонок: {', '.join(missing)}")

        numeric = {}
        for column in [schema.dose_col, schema.outcome_col, *covariate_cols]:
            values = pd.to_numeric(frame[column], errors='coerce').to_numpy(dtype=float)
            numeric[column] = values
        for column in (schema.dose_col, schema.outcome_col):
            bad = ~np.isfinite(numeric[column])
            if bad.any():
                row = int(np.flatnonzero(bad)[0]) + 2
                raise NonFiniteValue(f"❌ Нечисловое значение в колонке '{column}' (строка {row})")

        covariates = np.column_stack([numeric[c] for c in covariate_cols]) if covariate_cols else None
        set_keys = frame[schema.set_col].astype(str).to_numpy()
        unit_keys = frame[schema.unit_col].astype(str).to_numpy() if schema.unit_col else None

        sets = []
        for set_id, rows in pd.Series(np.arange(len(frame))).groupby(set_keys, sort=False):
            rows = rows.to_numpy()
            if len(rows) < 2:
                raise SingletonSet(f"❌ Набор {set_id} содержит один объект")
            set_covariates = None
            if covariates is not None:
                set_covariates = covariates[rows]
                self._check_covariates(set_id, set_covariates, covariate_cols)
            sets.append(MatchedSet(
                set_id=set_id,
                doses=numeric[schema.dose_col][rows],
                outcomes=numeric[schema.outcome_col][rows],
                covariates=set_covariates,
                unit_ids=tuple(unit_keys[rows]) if unit_keys is not None else (),
            ))
        return MatchedDataset(tuple(sets))

    @staticmethod
    def _check_covariates(set_id, values: np.ndarray, columns: List[str]):
        absent = ~np.isfinite(values)
        if not absent.any():
            return
        whole_columns = absent.all(axis=0)
        if whole_columns.any():
            names = [columns[k] for k in np.flatnonzero(whole_columns)]
            raise InconsistentCovariateDim(
                f"❌ Набор {set_id}: нет ковариат {', '.join(names)}, размерность отличается от остальных"
            )
        raise NonFiniteValue(f"❌ Набор {set_id}: пропуск в ковариатах")

    def save_dataset(self, dataset: MatchedDataset, output_file) -> Path:
        """Экспорт датасета в CSV той же схемы"""
        schema = self.schema
        covariate_names = schema.covariate_cols or [f"x{k + 1}" for k in range(dataset.K)]
        rows = []
        for s in dataset:
            for j in range(s.n):
                row = {
                    schema.set_col: s.set_id,
                    schema.unit_col or 'unit_id': s.unit_ids[j],
                    schema.dose_col: s.doses[j],
                    schema.outcome_col: s.outcomes[j],
                }
                for k, name in enumerate(covariate_names[:s.K]):
                    row[name] = s.covariates[j, k]
                rows.append(row)
        output_file = Path(output_file)
        output_file.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(output_file, index=False)
        return output_file

    def validate_dataset_file(self, file_path) -> Dict:
        """Валидация CSV без исключений: словарь с найденными проблемами"""
        print(f"🔍 Валидация файла: {file_path}")

        validation_results = {
            'file_exists': False,
            'loaded': False,
            'n_sets': 0,
            'n_units': 0,
            'errors': [],
            'warnings': [],
        }

        file_path = Path(file_path)
        if not file_path.exists():
            validation_results['errors'].append("Файл не найден")
            return validation_results
        validation_results['file_exists'] = True

        try:
            dataset = self.load_dataset(file_path)
        except DoseSensError as e:
            validation_results['errors'].append(f"{type(e).__name__}: {e}")
        except Exception as e:
            validation_results['errors'].append(f"Ошибка чтения файла: {e}")
        else:
            validation_results['loaded'] = True
            validation_results['n_sets'] = dataset.I
            validation_results['n_units'] = dataset.N
            summary = self.dataset_summary(dataset)
            validation_results['summary'] = summary
            if summary['max_set_size'] > 5:
                validation_results['warnings'].append(
                    f"Наборы размера {summary['max_set_size']}: нужен enumeration.max_set_size"
                )
            if summary['sets_with_constant_doses'] > 0:
                validation_results['warnings'].append(
                    f"{summary['sets_with_constant_doses']} наборов без вариации доз не дают информации"
                )

        if validation_results['errors']:
            print("❌ Найдены ошибки:")
            for error in validation_results['errors']:
                print(f"   - {error}")
        else:
            print(f"✅ Файл валиден: {validation_results['n_sets']} наборов, {validation_results['n_units']} объектов")
        for warning in validation_results['warnings']:
            print(f"⚠️ {warning}")

        return validation_results

    @staticmethod
    def dataset_summary(dataset: MatchedDataset) -> Dict:
        sizes = dataset.set_sizes
        constant = sum(1 for s in dataset if np.ptp(s.doses) == 0)
        tied = sum(1 for s in dataset if len(np.unique(s.doses)) < s.n)
        return {
            'I': dataset.I,
            'N': dataset.N,
            'K': dataset.K,
            'size_distribution': {int(n): int((sizes == n).sum()) for n in np.unique(sizes)},
            'max_set_size': int(sizes.max()),
            'dose_range': [float(dataset.sorted_doses[0]), float(dataset.sorted_doses[-1])],
            'sets_with_constant_doses': constant,
            'sets_with_tied_doses': tied,
        }

    def generate_sample_data(self, output_file, n_sets=200, seed=0, effect=0.5, n_covariates=2):
        """Синтетические наборы: n_i = min(2 + Poisson(0.6), 4), исход = effect * доза + шум"""
        print(f"🎲 Генерация {n_sets} тестовых наборов")

        rng = make_rng(seed)
        sizes = np.minimum(2 + rng.poisson(0.6, size=n_sets), 4)
        sets = []
        for i, n in enumerate(sizes):
            center = rng.normal(size=n_covariates)
            covariates = center + 0.1 * rng.normal(size=(n, n_covariates))
            doses = rng.uniform(0.0, 1.0, size=n)
            outcomes = effect * doses + 0.3 * center.sum() + rng.normal(size=n)
            sets.append(MatchedSet(
                set_id=f"S{i + 1:04d}",
                doses=np.round(doses, 6),
                outcomes=np.round(outcomes, 6),
                covariates=np.round(covariates, 6) if n_covariates else None,
            ))
        dataset = MatchedDataset(tuple(sets))
        output_file = self.save_dataset(dataset, output_file)

        print(f"✅ Тестовые данные созданы: {output_file}")
        print(f"   Наборов: {dataset.I}, объектов: {dataset.N}")
        return output_file


def load_dataset(path, schema: Optional[DatasetSchema] = None) -> MatchedDataset:
    return DataProcessor(schema).load_dataset(path)


def main():
    """Главная функция для запуска утилит из командной строки"""
    parser = argparse.ArgumentParser(description='Утилиты для данных сопоставленных исследований')
    parser.add_argument('command', choices=['validate', 'sample', 'summary'], help='Команда для выполнения')
    parser.add_argument('input', help='Входной (или для sample - выходной) CSV файл')
    parser.add_argument('-n', '--num-sets', type=int, default=200,
                        help='Количество наборов для генерации (по умолчанию: 200)')
    parser.add_argument('--seed', type=int, default=0, help='Seed генератора')

    args = parser.parse_args()
    processor = DataProcessor()

    try:
        if args.command == 'validate':
            result = processor.validate_dataset_file(args.input)
            return 0 if result['loaded'] else 1
        if args.command == 'sample':
            processor.generate_sample_data(args.input, args.num_sets, args.seed)
        elif args.command == 'summary':
            summary = processor.dataset_summary(processor.load_dataset(args.input))
            print("\n📋 СВОДКА ПО ДАННЫМ:")
            for key, value in summary.items():
                print(f"   {key}: {value}")
    except Exception as e:
        print(f"❌ Ошибка выполнения команды: {e}")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
