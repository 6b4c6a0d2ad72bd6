#!/usr/bin/env python3
"""
Консервативная оценка дисперсии S^2(Q) по hat-матрице плана Q (I x L).

y_i = v_i / sqrt(1 - h_ii),  S^2 = I^-2 * (W y)^T (E - H_Q) (W y)

Одна и та же оценка используется для V_F (острая гипотеза) и для V_N
и ограничивающих статистик (слабая гипотеза).
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import qr

from errors import ConfigError, DoseSensError, LeverageOne, RankDeficientQ, TooFewSets
from matched_design import MatchedDataset

DEFAULT_RANK_TOL = 1e-10
LEVERAGE_TOL = 1e-12
NEGATIVE_TOL = 1e-12
WEIGHT_SCHEMES = ('size', 'unit')
COVARIATE_MODES = ('none', 'means')


@dataclass(frozen=True, eq=False)
class DesignQ:
    """Матрица плана Q: первая колонка - единицы, далее средние ковариат по наборам"""

    matrix: np.ndarray
    column_names: Tuple[str, ...] = ()

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        if not np.all(np.isfinite(matrix)):
            raise DoseSensError("❌ Нечисловые значения в матрице Q")
        matrix.setflags(write=False)
        names = tuple(self.column_names) or tuple(f"q{k}" for k in range(matrix.shape[1]))
        object.__setattr__(self, 'matrix', matrix)
        object.__setattr__(self, 'column_names', names)

    @property
    def I(self) -> int:
        return self.matrix.shape[0]

    @property
    def L(self) -> int:
        return self.matrix.shape[1]

    def with_column(self, values: Sequence[float], name: str) -> 'DesignQ':
        return DesignQ(np.column_stack([self.matrix, values]), self.column_names + (name,))


@dataclass(frozen=True, eq=False)
class HatMatrix:
    H: np.ndarray
    leverage: np.ndarray
    rank: int
    kept_columns: Tuple[int, ...]


@dataclass
class VarianceInputs:
    """Значения v_i по наборам и веса w_i (по умолчанию I * n_i / N)"""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.shape != self.weights.shape or self.values.ndim != 1:
            raise DoseSensError("❌ values и weights должны быть векторами одной длины")
        if np.any(self.weights <= 0):
            raise DoseSensError("❌ Веса наборов должны быть положительными")

    @classmethod
    def for_sets(cls, values, set_sizes, scheme: str = 'size') -> 'VarianceInputs':
        return cls(values=values, weights=set_weights(set_sizes, scheme))


def set_weights(set_sizes, scheme: str = 'size') -> np.ndarray:
    sizes = np.asarray(set_sizes, dtype=float)
    if scheme == 'size':
        return len(sizes) * sizes / sizes.sum()
    if scheme == 'unit':
        return np.ones_like(sizes)
    raise ConfigError(f"❌ Неизвестная схема весов '{scheme}', доступны: {WEIGHT_SCHEMES}")


def build_design(dataset: MatchedDataset, covariates: str = 'none') -> DesignQ:
    """Q = [1] или Q = [1, средние ковариат]"""
    ones = np.ones((dataset.I, 1))
    if covariates == 'none':
        return DesignQ(ones, ('intercept',))
    if covariates == 'means':
        if dataset.K == 0:
            raise ConfigError("❌ В данных нет ковариат для Q = means")
        names = ('intercept',) + tuple(f"mean_x{k + 1}" for k in range(dataset.K))
        return DesignQ(np.hstack([ones, dataset.covariate_means()]), names)
    raise ConfigError(f"❌ Неизвестный режим ковариат '{covariates}', доступны: {COVARIATE_MODES}")


def hat_matrix(design: DesignQ, tol: float = DEFAULT_RANK_TOL, drop_dependent: bool = False) -> HatMatrix:
    """
    H = Q (Q^T Q)^-1 Q^T через QR с выбором ведущего элемента.
    Ранг определяется по |R_kk| > tol * |R_00|.
    """
    Q = design.matrix
    I, L = Q.shape
    if L >= I:
        raise RankDeficientQ(f"❌ Q имеет {L} колонок при {I} наборах, нужно L < I")

    q, r, pivots = qr(Q, mode='economic', pivoting=True)
    diagonal = np.abs(np.diag(r))
    if diagonal.size == 0 or diagonal[0] == 0:
        raise RankDeficientQ("❌ Матрица Q нулевая")
    rank = int(np.sum(diagonal > tol * diagonal[0]))
    if rank < L and not drop_dependent:
        dependent = [design.column_names[k] for k in pivots[rank:]]
        raise RankDeficientQ(f"❌ Q не полного ранга ({rank} < {L}), зависимые колонки: {', '.join(dependent)}")

    basis = q[:, :rank]
    H = basis @ basis.T
    leverage = np.einsum('ij,ij->i', basis, basis)
    return HatMatrix(H=H, leverage=leverage, rank=rank, kept_columns=tuple(sorted(int(k) for k in pivots[:rank])))


def variance_estimate(inputs: VarianceInputs, design: Union[DesignQ, HatMatrix],
                      diagnostics: Optional[List[str]] = None) -> float:
    """S^2(Q) >= 0; отрицательный результат округления обрезается до нуля"""
    hat = design if isinstance(design, HatMatrix) else hat_matrix(design)
    v = inputs.values
    I = v.size
    if I < 2:
        raise TooFewSets("❌ Для оценки дисперсии нужно минимум два набора")
    if hat.H.shape != (I, I):
        raise DoseSensError(f"❌ Q рассчитана на {hat.H.shape[0]} наборов, значений {I}")
    if np.any(hat.leverage >= 1.0 - LEVERAGE_TOL):
        raise LeverageOne("❌ h_ii = 1: оценка дисперсии не определена")

    y = v / np.sqrt(1.0 - hat.leverage)
    weighted = inputs.weights * y
    residual = weighted - hat.H @ weighted
    S2 = float(weighted @ residual) / I ** 2
    if S2 < -NEGATIVE_TOL:
        message = f"S^2 = {S2:.3g} < 0 обрезано до 0"
        print(f"⚠️ {message}")
        if diagnostics is not None:
            diagnostics.append(message)
    return max(S2, 0.0)
