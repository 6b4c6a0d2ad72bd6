#!/usr/bin/env python3
"""
Каталог оценок (estimands) для слабой гипотезы Неймана.

theta = (1/N) sum_i sum_j sum_k f_i^(k)(z_(k), r_ij^(k)),
где k - номер порядковой статистики дозы в наборе.

Все оценки каталога линейны: f_i^(k)(z, r) = a_ik * r + b_ik * z.
  sate                 - бинарные дозы, a = 1/m или -1/(n - m)
  effect-ratio         - пары, a = (-1, 1), b = (lambda0, -lambda0)
  tsate                - a = 1/m при z_(k) > c, иначе -1/(n - m)
  avg-slope            - a = (z_(k) - z_bar) / (n * var(z))
  stochastic-contrast  - a = s1_(k) - s2_(k) для двух стохастических вмешательств
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from errors import (
    BadEstimandParams,
    BadWeights,
    ConfigError,
    DegenerateThreshold,
    DoseSensError,
    TiedDoseCoefficients,
    UnknownKind,
)
from matched_design import MatchedDataset, MatchedSet, order_index

ESTIMAND_KINDS = ('sate', 'effect-ratio', 'tsate', 'avg-slope', 'stochastic-contrast')
NAMED_INTERVENTIONS = ('above', 'below', 'baseline')
DEGENERATE_POLICIES = ('error', 'drop')
WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SetCoefficients:
    """Коэффициенты f_i^(k) одного набора по порядковым позициям k"""

    set_id: str
    sorted_doses: np.ndarray
    outcome_coef: np.ndarray
    dose_coef: np.ndarray

    def f(self, k: int, z: float, r: float) -> float:
        return float(self.outcome_coef[k] * r + self.dose_coef[k] * z)


@dataclass(frozen=True, eq=False)
class EstimandSpec:
    kind: str
    params: Dict
    coefficients: Dict[str, SetCoefficients]
    dropped: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = ()

    @property
    def set_ids(self) -> Tuple[str, ...]:
        return tuple(self.coefficients)

    def f(self, set_id: str, k: int, z: float, r: float) -> float:
        return self.coefficients[set_id].f(k, z, r)

    def select(self, dataset: MatchedDataset) -> MatchedDataset:
        """Наборы датасета, для которых оценка определена, в порядке датасета"""
        kept = [s for s in dataset if s.set_id in self.coefficients]
        if not kept:
            raise DoseSensError("❌ После отбора не осталось ни одного набора")
        for s in kept:
            expected = self.coefficients[s.set_id].sorted_doses
            if s.n != len(expected) or not np.array_equal(s.sorted_doses, expected):
                raise DoseSensError(f"❌ Дозы набора {s.set_id} не совпадают с построенной оценкой")
        return MatchedDataset(tuple(kept))

    def set_contribution(self, matched_set: MatchedSet) -> float:
        """V_{N,i} = sum_j f_i^(k(j))(Z_ij, R_ij)"""
        coef = self.coefficients[matched_set.set_id]
        k = order_index(matched_set)
        return float(coef.outcome_coef[k] @ matched_set.outcomes + coef.dose_coef[k] @ matched_set.doses)

    def set_theta(self, set_id: str, potential_outcomes: np.ndarray) -> float:
        """
        theta_i = n^-1 sum_j sum_k f(z_(k), r_jk); potential_outcomes[j, k] -
        исход объекта j при дозе z_(k).
        """
        coef = self.coefficients[set_id]
        table = np.asarray(potential_outcomes, dtype=float)
        n = len(coef.sorted_doses)
        if table.shape != (n, n):
            raise DoseSensError(f"❌ Таблица потенциальных исходов {table.shape}, ожидалось {(n, n)}")
        total = np.sum(table * coef.outcome_coef[None, :]) + n * float(coef.dose_coef @ coef.sorted_doses)
        return float(total / n)

    def permutation_contributions(self, set_id: str, potential_outcomes: np.ndarray,
                                  perms: np.ndarray) -> np.ndarray:
        """
        V_{N,i} для каждой перестановки: строка perms[pi] - позиции доз,
        которые получают объекты при назначении pi.
        """
        coef = self.coefficients[set_id]
        table = np.asarray(potential_outcomes, dtype=float)
        perms = np.asarray(perms)
        units = np.arange(perms.shape[1])[None, :]
        outcomes = table[units, perms]
        return ((coef.outcome_coef[perms] * outcomes).sum(axis=1)
                + (coef.dose_coef[perms] * coef.sorted_doses[perms]).sum(axis=1))

    def to_dict(self) -> Dict:
        return {'kind': self.kind, 'params': dict(self.params), 'n_sets': len(self.coefficients),
                'dropped_sets': list(self.dropped)}


def estimand_value(estimand: EstimandSpec, potential_outcomes: Mapping[str, np.ndarray]) -> float:
    """theta = sum_i (n_i / N) theta_i по полным таблицам потенциальных исходов"""
    sizes = {sid: len(c.sorted_doses) for sid, c in estimand.coefficients.items()}
    N = sum(sizes.values())
    return float(sum(sizes[sid] / N * estimand.set_theta(sid, potential_outcomes[sid])
                     for sid in estimand.coefficients))


def load_intervention_weights(path) -> Dict[str, np.ndarray]:
    """CSV set_id, position (1..n_i), weight -> веса s_(k) по наборам"""
    frame = pd.read_csv(Path(path))
    missing = {'set_id', 'position', 'weight'} - set(frame.columns)
    if missing:
        raise ConfigError(f"❌ В файле весов {path} нет колонок: {', '.join(sorted(missing))}")
    weights = {}
    for set_id, rows in frame.groupby(frame['set_id'].astype(str), sort=False):
        rows = rows.sort_values('position')
        weights[set_id] = rows['weight'].to_numpy(dtype=float)
    return weights


def _threshold_split(z: np.ndarray, c: float, set_id: str) -> Tuple[np.ndarray, int]:
    above = z > c
    m = int(above.sum())
    if m == 0 or m == len(z):
        raise DegenerateThreshold(f"Набор {set_id}: все дозы по одну сторону порога c = {c}")
    return above, m


def _intervention(name, z: np.ndarray, c, set_id: str, explicit: Optional[Mapping[str, np.ndarray]]):
    """Веса s_(k) стохастического вмешательства"""
    n = len(z)
    if isinstance(name, str) and name in NAMED_INTERVENTIONS:
        if name == 'baseline':
            return np.full(n, 1.0 / n)
        if c is None:
            raise BadEstimandParams(f"❌ Для вмешательства '{name}' нужен порог threshold")
        above, m = _threshold_split(z, c, set_id)
        return np.where(above, 1.0 / m, 0.0) if name == 'above' else np.where(~above, 1.0 / (n - m), 0.0)

    table = explicit if explicit is not None else name
    if not isinstance(table, Mapping):
        raise BadEstimandParams(f"❌ Неизвестное вмешательство '{name}'")
    if set_id not in table:
        raise BadWeights(f"❌ Нет весов вмешательства для набора {set_id}")
    s = np.asarray(table[set_id], dtype=float)
    if s.shape != (n,) or np.any(s < 0) or abs(s.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise BadWeights(f"❌ Веса вмешательства набора {set_id} должны быть n_i неотрицательными числами с суммой 1")
    return s


def _set_coefficients(kind: str, params: Dict, z: np.ndarray, set_id: str):
    n = len(z)
    dose_coef = np.zeros(n)

    if kind == 'sate':
        if not np.all(np.isin(z, (0.0, 1.0))):
            raise BadEstimandParams(f"❌ SATE требует бинарных доз, набор {set_id}")
        m = int(z.sum())
        if m == 0 or m == n:
            raise DegenerateThreshold(f"Набор {set_id}: нет обеих групп воздействия")
        return np.where(z == 1.0, 1.0 / m, -1.0 / (n - m)), dose_coef

    if kind == 'effect-ratio':
        if n != 2:
            raise BadEstimandParams(f"❌ Effect ratio определен только для пар, набор {set_id} размера {n}")
        if z[0] == z[1]:
            raise TiedDoseCoefficients(f"Набор {set_id}: равные дозы в паре")
        lam = float(params.get('lambda0', 0.0))
        return np.array([-1.0, 1.0]), np.array([lam, -lam])

    if kind == 'tsate':
        above, m = _threshold_split(z, float(params['threshold']), set_id)
        return np.where(above, 1.0 / m, -1.0 / (n - m)), dose_coef

    if kind == 'avg-slope':
        spread = np.mean(z ** 2) - np.mean(z) ** 2
        if spread <= 1e-12 * max(1.0, np.mean(z ** 2)):
            raise DegenerateThreshold(f"Набор {set_id}: нет вариации доз для наклона")
        return (z - z.mean()) / (n * spread), dose_coef

    if kind == 'stochastic-contrast':
        first, second = params['interventions']
        c = params.get('threshold')
        explicit = params.get('intervention_weights')
        s1 = _intervention(first, z, c, set_id, explicit if first == 'weights' else None)
        s2 = _intervention(second, z, c, set_id, explicit if second == 'weights' else None)
        return s1 - s2, dose_coef

    raise UnknownKind(f"❌ Неизвестная оценка '{kind}', доступны: {', '.join(ESTIMAND_KINDS)}")


def _check_ties(z: np.ndarray, outcome_coef: np.ndarray, dose_coef: np.ndarray, set_id: str):
    for value in np.unique(z):
        tied = z == value
        if tied.sum() > 1 and (np.ptp(outcome_coef[tied]) > 1e-12 or np.ptp(dose_coef[tied]) > 1e-12):
            raise TiedDoseCoefficients(f"Набор {set_id}: коэффициенты различаются на совпадающих дозах {value}")


def build_estimand(kind: str, params: Optional[Dict], dataset: MatchedDataset,
                   on_degenerate: str = 'error') -> EstimandSpec:
    """
    Коэффициенты f_i^(k) по наборам. Наборы, где оценка не определена
    (все дозы по одну сторону порога, равные дозы в паре), либо вызывают
    ошибку, либо отбрасываются при on_degenerate='drop'.
    """
    if kind not in ESTIMAND_KINDS:
        raise UnknownKind(f"❌ Неизвестная оценка '{kind}', доступны: {', '.join(ESTIMAND_KINDS)}")
    if on_degenerate not in DEGENERATE_POLICIES:
        raise ConfigError(f"❌ on_degenerate должен быть одним из {DEGENERATE_POLICIES}")
    params = dict(params or {})
    if kind == 'tsate' and params.get('threshold') is None:
        raise BadEstimandParams("❌ Для tsate нужен порог threshold")
    if kind in ('tsate', 'stochastic-contrast') and params.get('threshold') is not None:
        if not np.isfinite(float(params['threshold'])):
            raise BadEstimandParams("❌ Порог threshold должен быть конечным")
    if kind == 'stochastic-contrast':
        interventions = params.get('interventions')
        if not interventions or len(interventions) != 2:
            raise BadEstimandParams("❌ stochastic-contrast требует двух вмешательств")
        params['interventions'] = tuple(interventions)

    coefficients: Dict[str, SetCoefficients] = {}
    dropped: List[str] = []
    warnings: List[str] = []
    for s in dataset:
        z = np.asarray(s.sorted_doses, dtype=float)
        try:
            outcome_coef, dose_coef = _set_coefficients(kind, params, z, s.set_id)
            _check_ties(z, outcome_coef, dose_coef, s.set_id)
        except (DegenerateThreshold, TiedDoseCoefficients) as e:
            if on_degenerate == 'error':
                raise type(e)(f"❌ {e}") from None
            dropped.append(s.set_id)
            warnings.append(str(e))
            continue
        coefficients[s.set_id] = SetCoefficients(
            set_id=s.set_id, sorted_doses=z, outcome_coef=outcome_coef, dose_coef=dose_coef)

    if dropped:
        print(f"⚠️ Отброшено наборов: {len(dropped)} ({kind})")
    if not coefficients:
        raise DegenerateThreshold("❌ Оценка не определена ни в одном наборе")

    stored = {k: v for k, v in params.items() if k != 'intervention_weights'}
    return EstimandSpec(kind=kind, params=stored, coefficients=coefficients,
                        dropped=tuple(dropped), warnings=tuple(warnings))
