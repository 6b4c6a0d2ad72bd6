#!/usr/bin/env python3
"""
Модель сопоставленного дизайна с дозами воздействия.

MatchedSet / MatchedDataset - неизменяемые контейнеры наборов,
order_index - порядковые позиции доз (стабильная сортировка),
enumerate_assignments - все n_i! перестановок набора,
sample_assignment - выбор перестановки по вероятностям,
assignment_probabilities - модель назначения доз с ненаблюдаемым u.

ВАЖНО: дозы не масштабируются. gamma работает в единицах доз пользователя,
поэтому Gamma = exp(gamma * разность доз).
"""

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from errors import (
    ConfigError,
    DoseSensError,
    InconsistentCovariateDim,
    InvalidWeights,
    NonFiniteValue,
    SetTooLarge,
    SingletonSet,
)

DEFAULT_MAX_SET_SIZE = 5
HARD_MAX_SET_SIZE = 6
WEIGHT_SUM_TOL = 1e-9

_memory_warning_shown = False


def _frozen(values, dtype=float):
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class MatchedSet:
    """Один сопоставленный набор: дозы, исходы и (опционально) ковариаты"""

    set_id: str
    doses: np.ndarray
    outcomes: np.ndarray
    covariates: Optional[np.ndarray] = None
    unit_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        doses = _frozen(self.doses)
        outcomes = _frozen(self.outcomes)

        if doses.ndim != 1 or outcomes.ndim != 1:
            raise DoseSensError(f"❌ Набор {self.set_id}: дозы и исходы должны быть векторами")
        if len(doses) < 2:
            raise SingletonSet(f"❌ Набор {self.set_id} содержит {len(doses)} объект(ов), нужно минимум 2")
        if len(outcomes) != len(doses):
            raise DoseSensError(
                f"❌ Набор {self.set_id}: {len(doses)} доз, но {len(outcomes)} исходов"
            )
        if not np.all(np.isfinite(doses)):
            raise NonFiniteValue(f"❌ Набор {self.set_id}: нечисловая доза")
        if not np.all(np.isfinite(outcomes)):
            raise NonFiniteValue(f"❌ Набор {self.set_id}: нечисловой исход")

        covariates = None
        if self.covariates is not None:
            covariates = _frozen(self.covariates)
            if covariates.ndim == 1:
                covariates = _frozen(covariates.reshape(len(doses), -1))
            if covariates.shape[0] != len(doses):
                raise InconsistentCovariateDim(
                    f"❌ Набор {self.set_id}: ковариаты заданы для {covariates.shape[0]} из {len(doses)} объектов"
                )
            if not np.all(np.isfinite(covariates)):
                raise NonFiniteValue(f"❌ Набор {self.set_id}: нечисловая ковариата")

        unit_ids = tuple(str(u) for u in self.unit_ids) or tuple(str(j + 1) for j in range(len(doses)))
        if len(unit_ids) != len(doses):
            raise DoseSensError(f"❌ Набор {self.set_id}: число unit_id не совпадает с числом доз")

        object.__setattr__(self, 'set_id', str(self.set_id))
        object.__setattr__(self, 'doses', doses)
        object.__setattr__(self, 'outcomes', outcomes)
        object.__setattr__(self, 'covariates', covariates)
        object.__setattr__(self, 'unit_ids', unit_ids)

    @property
    def n(self) -> int:
        return len(self.doses)

    @property
    def K(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]

    @cached_property
    def sorted_doses(self) -> np.ndarray:
        """Порядковые статистики z_(1) <= ... <= z_(n)"""
        return _frozen(np.sort(self.doses, kind='stable'))

    def covariate_mean(self) -> np.ndarray:
        if self.covariates is None:
            return np.zeros(0)
        return self.covariates.mean(axis=0)

    def with_assignment(self, perm: Sequence[int], outcomes=None) -> 'MatchedSet':
        """Объект j получает дозу объекта perm[j]; исходы заменяются, если переданы"""
        perm = np.asarray(perm, dtype=np.intp)
        return MatchedSet(
            set_id=self.set_id,
            doses=self.doses[perm],
            outcomes=self.outcomes if outcomes is None else outcomes,
            covariates=self.covariates,
            unit_ids=self.unit_ids,
        )


@dataclass(frozen=True, eq=False)
class MatchedDataset:
    """Неизменяемый набор сопоставленных групп"""

    sets: Tuple[MatchedSet, ...]

    def __post_init__(self):
        sets = tuple(self.sets)
        if not sets:
            raise DoseSensError("❌ Датасет не содержит ни одного набора")
        dims = {s.K for s in sets}
        if len(dims) > 1:
            raise InconsistentCovariateDim(f"❌ Разная размерность ковариат у наборов: {sorted(dims)}")
        object.__setattr__(self, 'sets', sets)

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)

    def __getitem__(self, index):
        return self.sets[index]

    @property
    def I(self) -> int:
        return len(self.sets)

    @cached_property
    def set_sizes(self) -> np.ndarray:
        return _frozen([s.n for s in self.sets], dtype=int)

    @property
    def N(self) -> int:
        return int(self.set_sizes.sum())

    @property
    def K(self) -> int:
        return self.sets[0].K

    @property
    def set_ids(self) -> Tuple[str, ...]:
        return tuple(s.set_id for s in self.sets)

    @cached_property
    def sorted_outcomes(self) -> np.ndarray:
        return _frozen(np.sort(np.concatenate([s.outcomes for s in self.sets])))

    @cached_property
    def sorted_doses(self) -> np.ndarray:
        return _frozen(np.sort(np.concatenate([s.doses for s in self.sets])))

    def covariate_means(self) -> np.ndarray:
        """Матрица I x K средних ковариат по наборам"""
        return np.vstack([s.covariate_mean() for s in self.sets]) if self.K else np.zeros((self.I, 0))

    def subset(self, indices: Sequence[int]) -> 'MatchedDataset':
        return MatchedDataset(tuple(self.sets[i] for i in indices))

    def replace_sets(self, sets: Sequence[MatchedSet]) -> 'MatchedDataset':
        return MatchedDataset(tuple(sets))


@dataclass(frozen=True, eq=False)
class PermutationTable:
    """Все n_i! перестановок набора в лексикографическом порядке (первая - тождественная)"""

    set_index: int
    perms: np.ndarray
    max_n: int = DEFAULT_MAX_SET_SIZE

    @property
    def size(self) -> int:
        return len(self.perms)

    @property
    def n(self) -> int:
        return self.perms.shape[1]

    def dose_matrix(self, doses: np.ndarray) -> np.ndarray:
        """Строка pi: доза, которую получает каждый объект при перестановке pi"""
        return np.asarray(doses)[self.perms]


def order_index(matched_set: MatchedSet) -> np.ndarray:
    """
    Позиция k(j) дозы каждого объекта среди порядковых статистик (с нуля).
    Совпадающие дозы упорядочиваются по индексу объекта.
    """
    positions = np.empty(matched_set.n, dtype=np.intp)
    positions[np.argsort(matched_set.doses, kind='stable')] = np.arange(matched_set.n)
    return positions


def check_set_size_cap(cap: int) -> int:
    cap = int(cap)
    if cap < 2 or cap > HARD_MAX_SET_SIZE:
        raise ConfigError(
            f"❌ Лимит размера набора {cap} вне диапазона [2, {HARD_MAX_SET_SIZE}]"
        )
    return cap


@lru_cache(maxsize=None)
def permutation_matrix(n: int) -> np.ndarray:
    """Матрица (n!, n) перестановок {0..n-1} в лексикографическом порядке"""
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    perms.setflags(write=False)
    return perms


def enumerate_assignments(matched_set: MatchedSet, cap: int = DEFAULT_MAX_SET_SIZE,
                          set_index: int = 0) -> PermutationTable:
    """Все n_i! назначений доз; совпадающие дозы считаются разными перестановками"""
    global _memory_warning_shown

    cap = check_set_size_cap(cap)
    if matched_set.n > cap:
        raise SetTooLarge(
            f"❌ Набор {matched_set.set_id}: n_i = {matched_set.n} больше лимита {cap}"
        )
    if matched_set.n == HARD_MAX_SET_SIZE and not _memory_warning_shown:
        print("⚠️ Набор из 6 объектов: 720 перестановок, LP и память растут квадратично")
        _memory_warning_shown = True
    return PermutationTable(set_index=set_index, perms=permutation_matrix(matched_set.n), max_n=cap)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Счетчиковый генератор Philox, ключ (seed, повтор, набор, ...)"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def as_generator(rng_seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return make_rng(rng_seed)


def sample_assignment(weights: Sequence[float], rng_seed: Union[int, np.random.Generator],
                      table: Optional[PermutationTable] = None):
    """
    Выбор перестановки из категориального распределения.

    Возвращает индекс в таблице перестановок, либо саму перестановку,
    если передана таблица.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidWeights("❌ Вероятности должны быть непустым вектором")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidWeights("❌ Вероятности должны быть конечными и неотрицательными")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidWeights(f"❌ Сумма вероятностей {w.sum():.12g} != 1")
    if table is not None and table.size != w.size:
        raise InvalidWeights(f"❌ {w.size} вероятностей для {table.size} перестановок")

    cumulative = np.cumsum(w)
    draw = as_generator(rng_seed).random() * cumulative[-1]
    index = min(int(np.searchsorted(cumulative, draw, side='right')), w.size - 1)
    return index if table is None else table.perms[index]


def assignment_probabilities(dose_matrix: np.ndarray, u: np.ndarray, gamma: float) -> np.ndarray:
    """
    p_pi(u) = exp(gamma * z_pi . u) / sum exp(gamma * z_pi' . u).

    u может быть матрицей (k, n): тогда строки - отдельные точки.
    """
    u = np.asarray(u, dtype=float)
    logits = gamma * (u @ np.asarray(dose_matrix, dtype=float).T)
    return softmax(logits, axis=-1)
