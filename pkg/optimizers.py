#!/usr/bin/env python3
"""
Два небольших решателя для анализа чувствительности:

simplex_solve - плотный двухфазный симплекс-метод (таблица), правило Данцига
                с переходом на правило Бленда при серии вырожденных шагов.
                Задачи с числом ограничений намного больше числа переменных
                решаются через двойственную задачу.
box_optimize  - проекционный градиентный подъем/спуск на [0,1]^n
                с поиском шага Армихо из всех вершин куба и случайных точек.
"""

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from errors import DoseSensError, Infeasible, NonFiniteObjective, SetTooLarge, Unbounded
from matched_design import HARD_MAX_SET_SIZE, make_rng

DEGENERATE_RUN_LIMIT = 50
ARMIJO_SIGMA = 1e-4
MAX_BACKTRACKS = 60
MAX_STEP = 1e8


# =====================================================================
# ЛИНЕЙНОЕ ПРОГРАММИРОВАНИЕ
# =====================================================================

@dataclass
class LinearProgram:
    """
    max (или min) c^T p  при  A_ub p <= b_ub,  A_eq p = b_eq,  p >= 0
    """

    c: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    sense: str = 'max'

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).ravel()
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()

        if self.sense not in ('max', 'min'):
            raise DoseSensError(f"❌ Неизвестное направление оптимизации: {self.sense}")
        if len(self.b_ub) != len(self.A_ub) or len(self.b_eq) != len(self.A_eq):
            raise DoseSensError("❌ Размеры ограничений LP не согласованы")
        for name in ('c', 'A_ub', 'b_ub', 'A_eq', 'b_eq'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DoseSensError(f"❌ Нечисловые коэффициенты LP в {name}")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @classmethod
    def ratio_program(cls, values: np.ndarray, upper: np.ndarray) -> 'LinearProgram':
        """
        max sum p_pi * values_pi на симплексе при p_pi <= U[pi, pi'] * p_pi'
        для каждой упорядоченной пары pi != pi'.
        """
        values = np.asarray(values, dtype=float)
        size = values.size
        rows, cols = np.nonzero(~np.eye(size, dtype=bool))
        A = np.zeros((rows.size, size))
        line = np.arange(rows.size)
        A[line, rows] = 1.0
        A[line, cols] = -upper[rows, cols]
        return cls(c=values, A_ub=A, b_ub=np.zeros(rows.size),
                   A_eq=np.ones((1, size)), b_eq=np.ones(1), sense='max')


@dataclass
class LPResult:
    value: float
    x: np.ndarray
    duals_ub: np.ndarray
    duals_eq: np.ndarray
    iterations: int
    method: str


def _pivot(T: np.ndarray, row: int, col: int):
    T[row] /= T[row, col]
    column = T[:, col].copy()
    column[row] = 0.0
    T -= np.outer(column, T[row])


def _run_simplex(T, basis, cost, allowed, tol, max_iter):
    """Итерации симплекс-метода на максимум; возвращает число шагов"""
    m = T.shape[0]
    bland = False
    degenerate_run = 0
    for iteration in range(max_iter):
        reduced = cost - cost[basis] @ T[:, :-1]
        reduced[~allowed] = 0.0
        reduced[basis] = 0.0
        candidates = np.flatnonzero(reduced > tol)
        if candidates.size == 0:
            return iteration

        col = candidates[0] if bland else candidates[np.argmax(reduced[candidates])]
        column = T[:, col]
        positive = column > tol
        if not positive.any():
            raise Unbounded("❌ Целевая функция LP не ограничена")

        ratios = np.full(m, np.inf)
        ratios[positive] = np.maximum(T[positive, -1], 0.0) / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol)
        row = ties[np.argmin(basis[ties])]

        if best <= tol:
            degenerate_run += 1
            if degenerate_run >= DEGENERATE_RUN_LIMIT:
                bland = True
        else:
            degenerate_run = 0

        _pivot(T, row, col)
        basis[row] = col
    raise DoseSensError(f"❌ Симплекс-метод не сошелся за {max_iter} итераций")


def _tableau_max(c, A_ub, b_ub, A_eq, b_eq, tol, max_iter):
    """
    Двухфазный симплекс для max c^T x, A_ub x <= b_ub, A_eq x = b_eq, x >= 0.
    Возвращает (x, value, duals_ub, duals_eq, iterations).
    """
    m1, n = A_ub.shape
    m2 = A_eq.shape[0]
    m = m1 + m2

    ub_sign = np.where(b_ub < 0, -1.0, 1.0)
    eq_sign = np.where(b_eq < 0, -1.0, 1.0)
    row_sign = np.concatenate([ub_sign, eq_sign])
    needs_artificial = np.concatenate([b_ub < 0, np.ones(m2, dtype=bool)])
    art_rows = np.flatnonzero(needs_artificial)
    n_art = art_rows.size
    n_cols = n + m1 + n_art

    T = np.zeros((m, n_cols + 1))
    T[:m1, :n] = A_ub * ub_sign[:, None]
    T[np.arange(m1), n + np.arange(m1)] = ub_sign
    T[m1:, :n] = A_eq * eq_sign[:, None]
    T[:, -1] = np.concatenate([b_ub * ub_sign, b_eq * eq_sign])
    art_cols = n + m1 + np.arange(n_art)
    T[art_rows, art_cols] = 1.0

    basis = np.empty(m, dtype=np.intp)
    basis[:m1] = n + np.arange(m1)
    basis[art_rows] = art_cols
    unit_cols = basis.copy()

    is_artificial = np.zeros(n_cols, dtype=bool)
    is_artificial[art_cols] = True
    iterations = 0

    # Фаза 1: минимизация суммы искусственных переменных
    if n_art:
        cost1 = np.zeros(n_cols)
        cost1[art_cols] = -1.0
        iterations += _run_simplex(T, basis, cost1, np.ones(n_cols, dtype=bool), tol, max_iter)
        infeasibility = -(cost1[basis] @ T[:, -1])
        scale = max(1.0, np.abs(T[:, -1]).max(initial=0.0))
        if infeasibility > 1e-8 * scale:
            raise Infeasible(f"❌ LP несовместна (невязка {infeasibility:.3g})")
        for row in np.flatnonzero(is_artificial[basis]):
            entries = np.abs(T[row, :n_cols])
            entries[is_artificial] = 0.0
            col = int(np.argmax(entries))
            if entries[col] > tol:
                _pivot(T, row, col)
                basis[row] = col
            # иначе строка линейно зависима и искусственная переменная остается нулевой

    # Фаза 2
    cost2 = np.zeros(n_cols)
    cost2[:n] = c
    iterations += _run_simplex(T, basis, cost2, ~is_artificial, tol, max_iter)

    x_full = np.zeros(n_cols)
    x_full[basis] = np.maximum(T[:, -1], 0.0)
    duals = (cost2[basis] @ T[:, unit_cols]) * row_sign
    return x_full[:n], float(cost2 @ x_full), duals[:m1], duals[m1:], iterations


def simplex_solve(lp: LinearProgram, tol: float = 1e-9, max_iter: int = 50_000,
                  dualize='auto') -> LPResult:
    """
    Оптимум LP в вершине. dualize='auto' переходит к двойственной задаче,
    когда ограничений-неравенств больше чем вдвое больше переменных.
    Двойственные оценки относятся к задаче в форме максимизации.
    """
    sign = 1.0 if lp.sense == 'max' else -1.0
    scale = np.abs(lp.c).max(initial=0.0)
    scale = scale if scale > 0 else 1.0
    c = sign * lp.c / scale

    use_dual = (lp.A_ub.shape[0] > 2 * lp.n_vars) if dualize == 'auto' else bool(dualize)
    if use_dual:
        A, b, E, d = lp.A_ub, lp.b_ub, lp.A_eq, lp.b_eq
        m1, m2 = A.shape[0], E.shape[0]
        # min b^T y + d^T v,  A^T y + E^T v >= c,  y >= 0,  v = v+ - v-
        G = np.hstack([-A.T, -E.T, E.T])
        g = np.concatenate([-b, -d, d])
        empty = np.zeros((0, G.shape[1]))
        w, dual_value, multipliers, _, iterations = _tableau_max(g, G, -c, empty, np.zeros(0), tol, max_iter)
        x = np.maximum(multipliers, 0.0)
        value = -dual_value
        duals_ub = w[:m1]
        duals_eq = w[m1:m1 + m2] - w[m1 + m2:]
        method = 'dual'
    else:
        x, value, duals_ub, duals_eq, iterations = _tableau_max(
            c, lp.A_ub, lp.b_ub, lp.A_eq, lp.b_eq, tol, max_iter)
        method = 'primal'

    return LPResult(
        value=float(sign * value * scale),
        x=x,
        duals_ub=duals_ub * scale,
        duals_eq=duals_eq * scale,
        iterations=iterations,
        method=method,
    )


# =====================================================================
# ОПТИМИЗАЦИЯ НА КУБЕ [0,1]^n
# =====================================================================

@dataclass
class BoxProblem:
    """
    Гладкая функция на [0,1]^n. fun и grad принимают матрицу точек (k, n)
    и возвращают (k,) и (k, n) соответственно.
    """

    dim: int
    fun: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    sense: str = 'max'


@dataclass(frozen=True)
class MultiStart:
    random: int = 20
    seed: int = 0
    include_vertices: bool = True
    max_dim: int = HARD_MAX_SET_SIZE


@dataclass
class BoxResult:
    value: float
    u: np.ndarray
    kkt_residual: float
    converged: bool
    n_starts: int
    iterations: int


def _checked(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteObjective("❌ Целевая функция или градиент вернули NaN/inf")
    return values


def start_points(dim: int, starts: MultiStart) -> np.ndarray:
    blocks = []
    if starts.include_vertices:
        blocks.append(np.array(list(itertools.product((0.0, 1.0), repeat=dim))))
    if starts.random > 0:
        blocks.append(make_rng(starts.seed, dim).random((starts.random, dim)))
    if not blocks:
        blocks.append(np.full((1, dim), 0.5))
    return np.vstack(blocks)


def _projected_residual(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.abs(np.clip(x + g, 0.0, 1.0) - x).max(axis=1)


def box_optimize(problem: BoxProblem, starts: Optional[MultiStart] = None, tol: float = 1e-10,
                 max_iter: int = 10_000) -> BoxResult:
    """
    Мультистарт проекционного градиента. Все старты обновляются одновременно,
    сошедшиеся (невязка проекционного градиента <= tol) выбывают.
    """
    starts = starts or MultiStart()
    n = problem.dim
    if n > starts.max_dim:
        raise SetTooLarge(f"❌ Размерность {n} больше лимита {starts.max_dim}")
    sign = 1.0 if problem.sense == 'max' else -1.0

    def f(points):
        return sign * _checked(problem.fun(points))

    def grad(points):
        return sign * _checked(problem.grad(points))

    x = start_points(n, starts)
    fx = f(x)
    step = np.ones(len(x))
    active = np.ones(len(x), dtype=bool)
    iterations = 0

    while iterations < max_iter:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa = x[idx]
        ga = grad(xa)
        done = _projected_residual(xa, ga) <= tol
        active[idx[done]] = False
        idx, xa, ga = idx[~done], xa[~done], ga[~done]
        if idx.size == 0:
            break

        fa = fx[idx]
        alpha = step[idx].copy()
        new_x, new_f = xa.copy(), fa.copy()
        accepted = np.zeros(idx.size, dtype=bool)
        for _ in range(MAX_BACKTRACKS):
            pending = np.flatnonzero(~accepted)
            if pending.size == 0:
                break
            candidate = np.clip(xa[pending] + alpha[pending, None] * ga[pending], 0.0, 1.0)
            fc = f(candidate)
            gain = np.sum(ga[pending] * (candidate - xa[pending]), axis=1)
            ok = fc >= fa[pending] + ARMIJO_SIGMA * gain
            good = pending[ok]
            new_x[good] = candidate[ok]
            new_f[good] = fc[ok]
            accepted[good] = True
            alpha[pending[~ok]] *= 0.5

        moved = np.abs(new_x - xa).max(axis=1)
        stalled = ~accepted | ((moved <= 1e-15) & (new_f - fa <= 1e-16 * (1.0 + np.abs(fa))))
        x[idx] = new_x
        fx[idx] = new_f
        step[idx] = np.minimum(alpha * 2.0, MAX_STEP)
        active[idx[stalled]] = False
        iterations += 1

    best = int(np.argmax(fx))
    u = x[best].copy()
    residual = float(_projected_residual(u[None, :], grad(u[None, :]))[0])
    is_vertex = bool(np.all((u == 0.0) | (u == 1.0)))
    return BoxResult(
        value=float(sign * fx[best]),
        u=u,
        kkt_residual=residual,
        converged=residual <= tol or is_vertex,
        n_starts=len(x),
        iterations=iterations,
    )


def check_gradient(problem: BoxProblem, points: np.ndarray, h: float = 1e-6) -> float:
    """Максимальная относительная ошибка аналитического градиента против центральных разностей"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    analytic = _checked(problem.grad(points))
    numeric = np.empty_like(analytic)
    for j in range(problem.dim):
        shift = np.zeros(problem.dim)
        shift[j] = h
        numeric[:, j] = (problem.fun(points + shift) - problem.fun(points - shift)) / (2.0 * h)
    scale = np.maximum(np.abs(numeric).max(axis=1), 1e-12)
    return float((np.abs(analytic - numeric).max(axis=1) / scale).max())
