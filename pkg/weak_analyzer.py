#!/usr/bin/env python3
"""
Анализ чувствительности для слабой гипотезы H_N: theta = theta0.

  V_N = sum (n_i / N) V_{N,i}                     - несмещенная оценка theta
  l, h                                            - мин/макс вероятность одной перестановки
  Gamma* = h / l, Gamma^p                         - отношения вероятностей перестановок
  vn: c_i * (d_i - kappa*_i |d_i|), c_i = (1 + Gamma*) / (2 n_i! h)
  vc: d_i - kappa_i |d_i|,  kappa = (Gamma^p - 1) / (Gamma^p + 1)
  d_i = V_{N,i} - theta0

p = 1 - Phi(V / S(Q)), S^2(Q) по тем же наборным значениям.
Доверительный интервал - обращение двух односторонних тестов на уровне alpha/2.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax
from scipy.stats import norm

from data_utils import DEFAULT_CONFIG, load_yaml_config, parallel_map, resolve_n_jobs
from errors import ConfigError, DoseSensError, EmptyInterval, TooFewSets
from estimands import EstimandSpec, build_estimand, load_intervention_weights
from matched_design import DEFAULT_MAX_SET_SIZE, MatchedDataset, MatchedSet, enumerate_assignments
from optimizers import BoxProblem, MultiStart, box_optimize
from sharp_analyzer import bounding_p_value
from variance_estimator import (
    DesignQ,
    HatMatrix,
    VarianceInputs,
    build_design,
    hat_matrix,
    set_weights,
    variance_estimate,
)

METHODS = ('vc', 'vn')
SIDES = ('greater', 'less')
BRACKET_WIDTH = 20.0
MAX_EXPANSIONS = 60
MAX_BISECTIONS = 200
MONOTONE_CHECK_POINTS = 25

UNVERIFIED_ASSUMPTION = (
    "vc: валидность требует, чтобы theta в среднем (веса n_i/N * kappa_i) была не ближе "
    "к медиане V_{N,i}, чем theta_i; по данным это не проверяется"
)


@dataclass(frozen=True)
class SetSensitivity:
    """
    Величины чувствительности набора. Для метода vc l и h не нужны
    и остаются None.
    """

    l: Optional[float]
    h: Optional[float]
    gamma_p: float
    n_perms: int

    @property
    def gamma_star(self) -> Optional[float]:
        if self.l is None or self.h is None:
            return None
        return self.h / self.l

    def to_dict(self) -> Dict:
        return {'l': self.l, 'h': self.h, 'gamma_star': self.gamma_star, 'gamma_p': self.gamma_p}


# =====================================================================
# ВЕЛИЧИНЫ ЧУВСТВИТЕЛЬНОСТИ НАБОРА
# =====================================================================

def identity_probability_problem(sorted_doses: np.ndarray, perms: np.ndarray, gamma: float) -> BoxProblem:
    """
    f(u) = p_id(u) = exp(gamma z_id . u) / sum_pi exp(gamma z_pi . u),
    grad f = gamma * p_id * (z_id - sum_pi p_pi z_pi).
    """
    Z = np.asarray(sorted_doses, dtype=float)[perms]

    def probabilities(points):
        return softmax(gamma * (points @ Z.T), axis=1)

    def fun(points):
        return probabilities(points)[:, 0]

    def grad(points):
        p = probabilities(points)
        return gamma * p[:, :1] * (Z[0][None, :] - p @ Z)

    return BoxProblem(dim=Z.shape[1], fun=fun, grad=grad)


def l_h(matched_set: MatchedSet, gamma: float, starts: Optional[MultiStart] = None,
        tol: float = 1e-10, max_iter: int = 10_000, cap: int = DEFAULT_MAX_SET_SIZE) -> Tuple[float, float]:
    """Минимальная и максимальная вероятность перестановки по u в [0,1]^n"""
    if gamma < 0:
        raise DoseSensError(f"❌ gamma = {gamma} < 0")
    table = enumerate_assignments(matched_set, cap)
    uniform = 1.0 / table.size
    z = matched_set.sorted_doses
    if gamma == 0 or np.ptp(z) == 0:
        return uniform, uniform
    if matched_set.n == 2:
        gamma_d = math.exp(gamma * abs(z[1] - z[0]))
        return 1.0 / (1.0 + gamma_d), gamma_d / (1.0 + gamma_d)

    problem = identity_probability_problem(z, table.perms, gamma)
    high = box_optimize(problem, starts, tol=tol, max_iter=max_iter).value
    problem.sense = 'min'
    low = box_optimize(problem, starts, tol=tol, max_iter=max_iter).value
    return min(low, uniform), max(high, uniform)


def gamma_p(matched_set: MatchedSet, gamma: float) -> float:
    """exp(gamma * (сумма верхней половины доз - сумма нижней половины))"""
    z = matched_set.sorted_doses
    n = len(z)
    spread = z[n - n // 2:].sum() - z[:n // 2].sum()
    return float(math.exp(gamma * spread))


def set_sensitivity(matched_set: MatchedSet, gamma: float, method: str = 'vc',
                    starts: Optional[MultiStart] = None, tol: float = 1e-10, max_iter: int = 10_000,
                    cap: int = DEFAULT_MAX_SET_SIZE) -> SetSensitivity:
    n_perms = math.factorial(matched_set.n)
    if method == 'vn':
        low, high = l_h(matched_set, gamma, starts, tol, max_iter, cap)
    else:
        low = high = None
    return SetSensitivity(l=low, h=high, gamma_p=gamma_p(matched_set, gamma), n_perms=n_perms)


def set_sensitivities(dataset: MatchedDataset, gamma: float, method: str = 'vc',
                      starts: Optional[MultiStart] = None, tol: float = 1e-10, max_iter: int = 10_000,
                      cap: int = DEFAULT_MAX_SET_SIZE, n_jobs: int = 1) -> List[SetSensitivity]:
    return parallel_map(
        set_sensitivity,
        ((s, gamma, method, starts, tol, max_iter, cap) for s in dataset),
        n_jobs=n_jobs,
    )


# =====================================================================
# ОЦЕНКА И ОГРАНИЧИВАЮЩИЕ СТАТИСТИКИ
# =====================================================================

def v_n(dataset: MatchedDataset, estimand: EstimandSpec) -> Tuple[float, np.ndarray]:
    """V_N и вклады наборов V_{N,i} (только наборы, где оценка определена)"""
    retained = estimand.select(dataset)
    per_set = np.array([estimand.set_contribution(s) for s in retained])
    weights = retained.set_sizes / retained.N
    return float(weights @ per_set), per_set


def bounded_values(per_set: np.ndarray, theta0: float, sensitivities: Sequence[SetSensitivity],
                   method: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Наборные ограничивающие значения для d_i = V_{N,i} - theta0.
    Возвращает (значения, множители c_i, kappa_i).
    """
    d = np.asarray(per_set, dtype=float) - theta0
    if method == 'vc':
        gp = np.array([s.gamma_p for s in sensitivities])
        kappa = (gp - 1.0) / (gp + 1.0)
        coef = np.ones_like(kappa)
    elif method == 'vn':
        if any(s.h is None for s in sensitivities):
            raise DoseSensError("❌ Для метода vn нужны l и h каждого набора")
        star = np.array([s.gamma_star for s in sensitivities])
        h = np.array([s.h for s in sensitivities])
        n_perms = np.array([s.n_perms for s in sensitivities], dtype=float)
        kappa = (star - 1.0) / (star + 1.0)
        coef = (1.0 + star) / (2.0 * n_perms * h)
    else:
        raise ConfigError(f"❌ Неизвестный метод '{method}', доступны: {METHODS}")
    return coef * (d - kappa * np.abs(d)), coef, kappa


def bounded_statistic(dataset: MatchedDataset, estimand: EstimandSpec, gamma: float, theta0: float,
                      method: str = 'vc', sensitivities: Optional[Sequence[SetSensitivity]] = None,
                      cap: int = DEFAULT_MAX_SET_SIZE) -> Dict:
    """Наборные значения V_{N|C,Gamma,theta0,i} и агрегат sum (n_i / N) * значение"""
    retained = estimand.select(dataset)
    _, per_set = v_n(retained, estimand)
    if sensitivities is None:
        sensitivities = set_sensitivities(retained, gamma, method, cap=cap)
    values, coef, kappa = bounded_values(per_set, theta0, sensitivities, method)
    weights = retained.set_sizes / retained.N
    return {'per_set': values, 'aggregate': float(weights @ values), 'coef': coef, 'kappa': kappa}


@dataclass
class WeakResult:
    gamma: float
    theta0: float
    method: str
    side: str
    estimand: str
    V_N: float
    S_N: float
    V_bounded: float
    S_bounded: float
    p_bound: float
    set_ids: tuple
    V_N_per_set: np.ndarray
    bounded_per_set: np.ndarray
    sensitivities: List[SetSensitivity]
    dropped_sets: tuple = ()
    assumptions: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    ci: Optional['ConfidenceInterval'] = None

    @property
    def Gamma(self) -> float:
        return math.exp(self.gamma)

    def to_dict(self) -> Dict:
        return {
            'gamma': self.Gamma,
            'log_gamma': self.gamma,
            'estimand': self.estimand,
            'method': self.method,
            'side': self.side,
            'theta0': self.theta0,
            'V_N': self.V_N,
            'S_N': self.S_N,
            'V_bounded': self.V_bounded,
            'S_bounded': self.S_bounded,
            'p_bound': self.p_bound,
            'ci': self.ci.to_dict() if self.ci is not None else None,
            'per_set': [
                {'set_id': sid, 'V_N_i': float(v), 'bounded': float(b), **sens.to_dict()}
                for sid, v, b, sens in zip(self.set_ids, self.V_N_per_set, self.bounded_per_set,
                                           self.sensitivities)
            ],
            'dropped_sets': list(self.dropped_sets),
            'assumptions': list(self.assumptions),
            'warnings': list(self.warnings),
        }


class BoundedTest:
    """
    Все, что не зависит от theta0: вклады наборов, величины
    чувствительности и hat-матрица. Один объект обслуживает тест,
    перебор theta0 и поиск границ интервала.
    """

    def __init__(self, dataset: MatchedDataset, estimand: EstimandSpec, gamma: float, method: str = 'vc',
                 design: Union[str, DesignQ, HatMatrix] = 'none', *, weights: str = 'size',
                 sensitivities: Optional[Sequence[SetSensitivity]] = None,
                 starts: Optional[MultiStart] = None, box_tol: float = 1e-10, box_max_iter: int = 10_000,
                 cap: int = DEFAULT_MAX_SET_SIZE, n_jobs: int = 1):
        if gamma < 0:
            raise DoseSensError(f"❌ gamma = {gamma} < 0")
        if method not in METHODS:
            raise ConfigError(f"❌ Неизвестный метод '{method}', доступны: {METHODS}")
        self.dataset = estimand.select(dataset)
        if self.dataset.I < 2:
            raise TooFewSets("❌ Для теста нужно минимум два набора")
        self.estimand = estimand
        self.gamma = gamma
        self.method = method
        self.warnings: List[str] = list(estimand.warnings)
        self.V_N, self.per_set = v_n(self.dataset, estimand)

        if isinstance(design, str):
            design = build_design(self.dataset, design)
        self.hat = design if isinstance(design, HatMatrix) else hat_matrix(design)
        self.weights = set_weights(self.dataset.set_sizes, weights)
        # V всегда агрегируется с n_i/N, схема весов влияет только на S^2
        self.mix = set_weights(self.dataset.set_sizes, 'size')
        self.S_N = math.sqrt(variance_estimate(VarianceInputs(self.per_set, self.weights), self.hat,
                                               self.warnings))

        if sensitivities is None:
            sensitivities = set_sensitivities(self.dataset, gamma, method, starts, box_tol, box_max_iter,
                                              cap, n_jobs)
        if len(sensitivities) != self.dataset.I:
            raise DoseSensError(f"❌ {len(sensitivities)} наборов чувствительности для {self.dataset.I} наборов")
        self.sensitivities = list(sensitivities)

    def evaluate(self, theta0: float, side: str = 'greater') -> Tuple[float, float, float, np.ndarray]:
        """(V_bounded, S^2, p, наборные значения) для одного theta0"""
        if side not in SIDES:
            raise ConfigError(f"❌ side должен быть одним из {SIDES}")
        sign = 1.0 if side == 'greater' else -1.0
        values, _, _ = bounded_values(sign * self.per_set, sign * theta0, self.sensitivities, self.method)
        V = float(self.mix @ values) / self.dataset.I
        S2 = variance_estimate(VarianceInputs(values, self.weights), self.hat)
        return V, S2, bounding_p_value(V, S2), values

    def p_value(self, theta0: float, side: str = 'greater') -> float:
        return self.evaluate(theta0, side)[2]

    def result(self, theta0: float, side: str = 'greater') -> WeakResult:
        diagnostics = list(self.warnings)
        sign = 1.0 if side == 'greater' else -1.0
        values, _, _ = bounded_values(sign * self.per_set, sign * theta0, self.sensitivities, self.method)
        V = float(self.mix @ values) / self.dataset.I
        S2 = variance_estimate(VarianceInputs(values, self.weights), self.hat, diagnostics)
        return WeakResult(
            gamma=self.gamma,
            theta0=theta0,
            method=self.method,
            side=side,
            estimand=self.estimand.kind,
            V_N=self.V_N,
            S_N=self.S_N,
            V_bounded=V,
            S_bounded=math.sqrt(S2),
            p_bound=bounding_p_value(V, S2),
            set_ids=self.dataset.set_ids,
            V_N_per_set=self.per_set,
            bounded_per_set=values,
            sensitivities=self.sensitivities,
            dropped_sets=self.estimand.dropped,
            assumptions=[UNVERIFIED_ASSUMPTION] if self.method == 'vc' and self.gamma > 0 else [],
            warnings=diagnostics,
        )


def weak_test(dataset: MatchedDataset, estimand: EstimandSpec, gamma: float, theta0: float = 0.0,
              method: str = 'vc', side: str = 'greater', design: Union[str, DesignQ, HatMatrix] = 'none',
              **options) -> WeakResult:
    """
    Ограничивающее p-значение для H_N: theta = theta0 при gamma = ln Gamma.
    side='less' меняет знак вкладов V_{N,i} и theta0.
    """
    return BoundedTest(dataset, estimand, gamma, method, design, **options).result(theta0, side)


# =====================================================================
# ДОВЕРИТЕЛЬНЫЙ ИНТЕРВАЛ
# =====================================================================

@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    alpha: float
    gamma: float
    method: str
    search: str
    V_N: float
    S_N: float
    warnings: List[str] = field(default_factory=list)

    @property
    def Gamma(self) -> float:
        return math.exp(self.gamma)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper

    def to_dict(self) -> Dict:
        return {
            'gamma': self.Gamma,
            'log_gamma': self.gamma,
            'alpha': self.alpha,
            'method': self.method,
            'lower': self.lower,
            'upper': self.upper,
            'V_N': self.V_N,
            'S_N': self.S_N,
            'search': self.search,
            'warnings': list(self.warnings),
        }


def _bisect(accepted: Callable[[float], bool], inside: float, outside: float, tol: float) -> float:
    """Граница области принятия между принятой точкой inside и отвергнутой outside"""
    for _ in range(MAX_BISECTIONS):
        if abs(outside - inside) <= tol:
            break
        mid = 0.5 * (inside + outside)
        if accepted(mid):
            inside = mid
        else:
            outside = mid
    return inside


def _expand(accepted: Callable[[float], bool], center: float, direction: float, scale: float):
    """Геометрическое расширение от center до первой отвергнутой точки (или None)"""
    step = BRACKET_WIDTH * scale
    for _ in range(MAX_EXPANSIONS):
        point = center + direction * step
        if not accepted(point):
            return point
        step *= 2.0
    return None


def _is_monotone(test: BoundedTest, lower: float, upper: float) -> bool:
    grid = np.linspace(lower, upper, MONOTONE_CHECK_POINTS)
    p_greater = np.array([test.p_value(t, 'greater') for t in grid])
    p_less = np.array([test.p_value(t, 'less') for t in grid])
    return bool(np.all(np.diff(p_greater) >= -1e-12) and np.all(np.diff(p_less) <= 1e-12))


def ci_invert(dataset: MatchedDataset, estimand: EstimandSpec, gamma: float, alpha: float = 0.1,
              method: str = 'vc', design: Union[str, DesignQ, HatMatrix] = 'none',
              grid_points: int = 400, test: Optional[BoundedTest] = None, **options) -> ConfidenceInterval:
    """
    gamma = 0: V_N -/+ Phi^-1(1 - alpha/2) S_N.
    gamma > 0: множество theta0, где оба односторонних теста на уровне
    alpha/2 не отвергают; границы - бисекцией, при немонотонном
    p-значении - выпуклая оболочка принятых точек сетки.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"❌ alpha = {alpha} вне (0, 1)")
    test = test or BoundedTest(dataset, estimand, gamma, method, design, **options)
    warnings = list(test.warnings)
    V_N, S_N = test.V_N, test.S_N

    if gamma == 0:
        half = norm.ppf(1.0 - alpha / 2.0) * S_N
        return ConfidenceInterval(V_N - half, V_N + half, alpha, gamma, method, 'closed-form', V_N, S_N, warnings)

    level = alpha / 2.0

    def accepted(theta0):
        return test.p_value(theta0, 'greater') >= level and test.p_value(theta0, 'less') >= level

    scale = S_N if S_N > 0 else max(abs(V_N), 1.0) * 1e-3
    tol = 1e-10 * max(1.0, abs(V_N), scale)
    search = 'bisection'
    outer_low = _expand(accepted, V_N, -1.0, scale)
    outer_high = _expand(accepted, V_N, 1.0, scale)

    if accepted(V_N) and outer_low is not None and outer_high is not None \
            and _is_monotone(test, outer_low, outer_high):
        lower = _bisect(accepted, V_N, outer_low, tol)
        upper = _bisect(accepted, V_N, outer_high, tol)
    elif outer_low is None or outer_high is None:
        lower = -math.inf if outer_low is None else _bisect(accepted, V_N, outer_low, tol)
        upper = math.inf if outer_high is None else _bisect(accepted, V_N, outer_high, tol)
        message = "граница интервала не найдена при расширении, интервал неограничен"
        print(f"⚠️ {message}")
        warnings.append(message)
    else:
        search = 'grid'
        message = "p-значение немонотонно по theta0, используется сетка"
        print(f"⚠️ {message}")
        warnings.append(message)
        grid = np.linspace(outer_low, outer_high, grid_points)
        inside = grid[[accepted(t) for t in grid]]
        if inside.size == 0:
            raise EmptyInterval(f"❌ Ни одно theta0 не принято при Gamma = {math.exp(gamma):.4g}")
        lower, upper = float(inside.min()), float(inside.max())

    return ConfidenceInterval(float(lower), float(upper), alpha, gamma, method, search, V_N, S_N, warnings)


# =====================================================================
# ОБЕРТКА С КОНФИГУРАЦИЕЙ
# =====================================================================

class WeakNullAnalyzer:
    """
    Слабая гипотеза с параметрами из config.yaml (секции weak, box,
    variance, enumeration). Величины чувствительности кэшируются по
    (датасет, gamma, метод).
    """

    def __init__(self, config_path="config.yaml", config: Optional[Dict] = None):
        self.config = config if config is not None else self._load_config(config_path)
        self.verbose = self.config['debug']['verbose']
        self._estimand_cache = None
        self._sensitivity_cache: Dict[Tuple, List[SetSensitivity]] = {}
        self._sensitivity_owner = None

    def _load_config(self, config_path):
        return load_yaml_config(config_path, DEFAULT_CONFIG)

    def estimand(self, dataset: MatchedDataset) -> EstimandSpec:
        if self._estimand_cache is not None and self._estimand_cache[0] is dataset:
            return self._estimand_cache[1]
        weak = self.config['weak']
        params = {
            'threshold': weak.get('threshold'),
            'lambda0': weak.get('lambda0', 0.0),
            'interventions': weak.get('interventions'),
        }
        if weak.get('intervention_weights'):
            params['intervention_weights'] = load_intervention_weights(weak['intervention_weights'])
        estimand = build_estimand(weak['estimand'], params, dataset, weak['on_degenerate'])
        self._estimand_cache = (dataset, estimand)
        return estimand

    def _starts(self) -> MultiStart:
        box = self.config['box']
        return MultiStart(random=box['random_starts'], seed=box['seed'])

    def bounded_test(self, dataset: MatchedDataset, Gamma: float, method: Optional[str] = None) -> BoundedTest:
        if Gamma < 1:
            raise DoseSensError(f"❌ Gamma = {Gamma} < 1")
        method = method or self.config['weak']['method']
        gamma = math.log(Gamma)
        estimand = self.estimand(dataset)
        cap = self.config['enumeration']['max_set_size']
        n_jobs = resolve_n_jobs(self.config['runtime']['threads'])
        if self._sensitivity_owner is not dataset:
            self._sensitivity_cache.clear()
            self._sensitivity_owner = dataset
        key = (gamma, method)
        if key not in self._sensitivity_cache:
            if self.verbose and method == 'vn':
                print(f"🔍 Поиск l/h по {len(estimand.set_ids)} наборам (Gamma = {Gamma:.4g})")
            self._sensitivity_cache[key] = set_sensitivities(
                estimand.select(dataset), gamma, method, self._starts(),
                self.config['box']['tol'], self.config['box']['max_iter'], cap, n_jobs)
        variance = self.config['variance']
        design = hat_matrix(build_design(estimand.select(dataset), variance['covariates']),
                            tol=variance['rank_tol'], drop_dependent=variance['drop_dependent'])
        return BoundedTest(dataset, estimand, gamma, method, design, weights=variance['weights'],
                           sensitivities=self._sensitivity_cache[key], cap=cap)

    def test(self, dataset: MatchedDataset, Gamma: float, theta0: Optional[float] = None,
             method: Optional[str] = None, side: Optional[str] = None) -> WeakResult:
        weak = self.config['weak']
        theta0 = weak['theta0'] if theta0 is None else theta0
        result = self.bounded_test(dataset, Gamma, method).result(theta0, side or weak['side'])
        if self.verbose:
            print(f"📊 Слабая гипотеза ({result.estimand}, {result.method}): Gamma = {Gamma:.4g}, "
                  f"theta0 = {theta0:.4g}, V_N = {result.V_N:.6g}, p = {result.p_bound:.4g}")
            for note in result.assumptions:
                print(f"⚠️ {note}")
        return result

    def ci(self, dataset: MatchedDataset, Gamma: float, alpha: Optional[float] = None,
           method: Optional[str] = None) -> ConfidenceInterval:
        weak = self.config['weak']
        alpha = weak['ci_alpha'] if alpha is None else alpha
        test = self.bounded_test(dataset, Gamma, method)
        interval = ci_invert(dataset, test.estimand, test.gamma, alpha, test.method,
                             grid_points=weak['ci_grid_points'], test=test)
        if self.verbose:
            print(f"🎯 {100 * (1 - alpha):.0f}% ДИ при Gamma = {Gamma:.4g}: "
                  f"[{interval.lower:.4f}, {interval.upper:.4f}] ({interval.search})")
        return interval

    def estimate(self, dataset: MatchedDataset, alpha: Optional[float] = None) -> Dict:
        """Точечная оценка V_N, S_N(Q) и интервал при Gamma = 1"""
        interval = self.ci(dataset, 1.0, alpha)
        estimand = self.estimand(dataset)
        return {
            'estimand': estimand.to_dict(),
            'V_N': interval.V_N,
            'S_N': interval.S_N,
            'ci': interval.to_dict(),
            'n_sets': len(estimand.set_ids),
        }
