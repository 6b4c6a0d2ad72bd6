#!/usr/bin/env python3
"""
Статистики класса T: T = I^-1 * sum_i T_i, T_i = sum_j q1(Z_ij) * q2(R_ij).

permutational-t - q1 = q2 = тождество
wilcoxon        - q1 = тождество, q2 = ранг исхода
double-rank     - q1 = ранг дозы, q2 = ранг исхода
custom          - табличные баллы value -> score из CSV

Ранги считаются по формуле "сколько значений <= r" без средних рангов.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from errors import ConfigError, DoseSensError, UnknownKind, UnknownScoreValue
from matched_design import MatchedDataset, MatchedSet, PermutationTable

STATISTIC_SCORES = {
    'permutational-t': ('identity', 'identity'),
    'wilcoxon': ('identity', 'rank'),
    'double-rank': ('rank', 'rank'),
    'custom': ('table', 'table'),
}

KIND_ALIASES = {
    'perm-t': 'permutational-t',
    't': 'permutational-t',
    'rank-sum': 'wilcoxon',
    'double_rank': 'double-rank',
}

DOSE_RANK_SCOPES = ('global', 'within-set')


@dataclass(frozen=True)
class StatisticSpec:
    """Описание статистики: тип, область ранжирования доз, таблицы баллов"""

    kind: str = 'double-rank'
    rank_scope_dose: str = 'global'
    dose_score_table: Optional[Mapping[float, float]] = None
    outcome_score_table: Optional[Mapping[float, float]] = None

    def __post_init__(self):
        kind = KIND_ALIASES.get(self.kind, self.kind)
        if kind not in STATISTIC_SCORES:
            raise UnknownKind(
                f"❌ Неизвестная статистика '{self.kind}', доступны: {', '.join(STATISTIC_SCORES)}"
            )
        if self.rank_scope_dose not in DOSE_RANK_SCOPES:
            raise ConfigError(f"❌ rank_scope_dose должен быть одним из {DOSE_RANK_SCOPES}")
        if kind == 'custom' and self.dose_score_table is None and self.outcome_score_table is None:
            raise ConfigError("❌ Для custom нужна хотя бы одна таблица баллов")
        object.__setattr__(self, 'kind', kind)

    @property
    def q1(self) -> str:
        if self.kind == 'custom':
            return 'table' if self.dose_score_table is not None else 'identity'
        return STATISTIC_SCORES[self.kind][0]

    @property
    def q2(self) -> str:
        if self.kind == 'custom':
            return 'table' if self.outcome_score_table is not None else 'identity'
        return STATISTIC_SCORES[self.kind][1]


def load_score_table(path) -> Dict[float, float]:
    """CSV с колонками value,score"""
    frame = pd.read_csv(Path(path))
    missing = {'value', 'score'} - set(frame.columns)
    if missing:
        raise ConfigError(f"❌ В таблице баллов {path} нет колонок: {', '.join(sorted(missing))}")
    return dict(zip(frame['value'].astype(float), frame['score'].astype(float)))


def _rank_counts(sorted_values: np.ndarray, r) -> np.ndarray:
    return np.searchsorted(sorted_values, np.asarray(r, dtype=float), side='right').astype(float)


def outcome_rank(dataset: MatchedDataset, r):
    """q2(r) = число исходов в датасете, не превосходящих r"""
    ranks = _rank_counts(dataset.sorted_outcomes, r)
    return float(ranks) if ranks.ndim == 0 else ranks


def dose_rank(dataset: MatchedDataset, z, set_index: Optional[int] = None, scope: str = 'global'):
    """q1(z) = число доз (во всем датасете или в наборе), не превосходящих z"""
    if scope == 'within-set':
        if set_index is None:
            raise DoseSensError("❌ Для ранга внутри набора нужен set_index")
        reference = dataset[set_index].sorted_doses
    else:
        reference = dataset.sorted_doses
    ranks = _rank_counts(reference, z)
    return float(ranks) if ranks.ndim == 0 else ranks


def _lookup(table: Mapping[float, float], values: np.ndarray, what: str) -> np.ndarray:
    scores = np.empty(len(values))
    for j, value in enumerate(values):
        try:
            scores[j] = table[float(value)]
        except KeyError:
            raise UnknownScoreValue(f"❌ Нет балла для {what} {value!r}") from None
    return scores


@dataclass(frozen=True, eq=False)
class CompiledStatistic:
    """Статистика с заранее вычисленными баллами q1, q2 для каждого объекта"""

    spec: StatisticSpec
    dose_scores: Tuple[np.ndarray, ...]
    outcome_scores: Tuple[np.ndarray, ...]

    @property
    def kind(self) -> str:
        return self.spec.kind

    def set_scores(self, set_index: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.dose_scores[set_index], self.outcome_scores[set_index]

    def set_statistic(self, set_index: int) -> float:
        q1, q2 = self.set_scores(set_index)
        return float(q1 @ q2)


@dataclass(frozen=True, eq=False)
class SetTValues:
    """Значения T_i для всех перестановок набора, в порядке таблицы перестановок"""

    set_index: int
    t: np.ndarray
    t_observed: float


def build_statistic(spec: StatisticSpec, dataset: MatchedDataset) -> CompiledStatistic:
    """Баллы считаются один раз по всему датасету"""
    dose_scores, outcome_scores = [], []
    for i, s in enumerate(dataset):
        if spec.q1 == 'rank':
            q1 = dose_rank(dataset, s.doses, set_index=i, scope=spec.rank_scope_dose)
        elif spec.q1 == 'table':
            q1 = _lookup(spec.dose_score_table, s.doses, 'дозы')
        else:
            q1 = s.doses.astype(float)

        if spec.q2 == 'rank':
            q2 = outcome_rank(dataset, s.outcomes)
        elif spec.q2 == 'table':
            q2 = _lookup(spec.outcome_score_table, s.outcomes, 'исхода')
        else:
            q2 = s.outcomes.astype(float)

        q1, q2 = np.array(q1, dtype=float), np.array(q2, dtype=float)
        q1.setflags(write=False)
        q2.setflags(write=False)
        dose_scores.append(q1)
        outcome_scores.append(q2)
    return CompiledStatistic(spec=spec, dose_scores=tuple(dose_scores), outcome_scores=tuple(outcome_scores))


def t_values(matched_set: MatchedSet, statistic: CompiledStatistic, perms: PermutationTable) -> SetTValues:
    """
    t_pi = sum_j q1(доза, которую объект j получает при pi) * q2(R_j).
    Исходы фиксированы (острая нулевая гипотеза).
    """
    q1, q2 = statistic.set_scores(perms.set_index)
    if len(q1) != matched_set.n or perms.n != matched_set.n:
        raise DoseSensError(f"❌ Набор {matched_set.set_id} не совпадает с таблицей перестановок")
    t = q1[perms.perms] @ q2
    return SetTValues(set_index=perms.set_index, t=t, t_observed=float(t[0]))


def observed_T(dataset: MatchedDataset, statistic: CompiledStatistic) -> float:
    return float(np.mean([statistic.set_statistic(i) for i in range(dataset.I)]))
