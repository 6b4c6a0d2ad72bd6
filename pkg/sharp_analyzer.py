#!/usr/bin/env python3
"""
Анализ чувствительности для острой нулевой гипотезы Фишера H_F.

Для каждого набора: границы отношений вероятностей перестановок,
линейная программа для mu_i* (верхняя граница ожидания T_i),
затем V_F = I^-1 sum (T_i - mu_i*) и ограничивающее p-значение
1 - Phi(V_F / S_F(Q)).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from data_utils import load_yaml_config, parallel_map, resolve_n_jobs, DEFAULT_CONFIG
from errors import DoseSensError, TooFewSets
from matched_design import (
    DEFAULT_MAX_SET_SIZE,
    MatchedDataset,
    MatchedSet,
    PermutationTable,
    enumerate_assignments,
    make_rng,
)
from optimizers import LinearProgram, simplex_solve
from rank_statistics import (
    CompiledStatistic,
    SetTValues,
    StatisticSpec,
    build_statistic,
    load_score_table,
    t_values,
)
from variance_estimator import (
    DesignQ,
    HatMatrix,
    VarianceInputs,
    build_design,
    hat_matrix,
    variance_estimate,
)


@dataclass(frozen=True, eq=False)
class RatioBounds:
    """
    U[a, b] = exp(gamma * sum_j (z_a(j) - z_b(j))_+) - верхняя граница p_a / p_b.
    Нижняя граница для (a, b) равна 1 / U[b, a].
    """

    set_index: int
    gamma: float
    perms: np.ndarray
    upper: np.ndarray

    def interval(self, a: int, b: int):
        return 1.0 / self.upper[b, a], self.upper[a, b]


def dose_excess(dose_matrix: np.ndarray) -> np.ndarray:
    """D[a, b] = sum_j max(z_a(j) - z_b(j), 0)"""
    diff = dose_matrix[:, None, :] - dose_matrix[None, :, :]
    return np.clip(diff, 0.0, None).sum(axis=-1)


def ratio_bounds(matched_set: MatchedSet, gamma: float, perms: Optional[PermutationTable] = None,
                 set_index: int = 0, cap: int = DEFAULT_MAX_SET_SIZE) -> RatioBounds:
    if gamma < 0:
        raise DoseSensError(f"❌ gamma = {gamma} < 0")
    table = perms or enumerate_assignments(matched_set, cap, set_index)
    upper = np.exp(gamma * dose_excess(table.dose_matrix(matched_set.doses)))
    return RatioBounds(set_index=table.set_index, gamma=gamma, perms=table.perms, upper=upper)


def mu_star(matched_set: MatchedSet, values: Union[SetTValues, Sequence[float]], gamma: float,
            bounds: Optional[RatioBounds] = None, lp_tol: float = 1e-9,
            cap: int = DEFAULT_MAX_SET_SIZE) -> float:
    """Максимум sum p_pi t_pi по симплексу с ограничениями на отношения"""
    t = values.t if isinstance(values, SetTValues) else np.asarray(values, dtype=float)
    if np.ptp(t) == 0:
        return float(t[0])
    if gamma == 0:
        return float(t.mean())
    if matched_set.n == 2:
        # пара: вес Gamma_d / (1 + Gamma_d) на большее значение
        gamma_d = math.exp(gamma * abs(matched_set.doses[1] - matched_set.doses[0]))
        return float((gamma_d * t.max() + t.min()) / (1.0 + gamma_d))
    bounds = bounds or ratio_bounds(matched_set, gamma, cap=cap)
    return simplex_solve(LinearProgram.ratio_program(t, bounds.upper), tol=lp_tol).value


def bounding_p_value(V: float, S2: float) -> float:
    """1 - Phi(V / S); при S = 0: 1, если V <= 0, иначе 0"""
    if S2 <= 0:
        return 1.0 if V <= 0 else 0.0
    return float(norm.sf(V / math.sqrt(S2)))


@dataclass
class SharpResult:
    gamma: float
    statistic: str
    T: float
    t_observed: np.ndarray
    mu_star: np.ndarray
    V_F: float
    V_F_per_set: np.ndarray
    S2: float
    p_bound: float
    set_ids: tuple
    warnings: List[str] = field(default_factory=list)

    @property
    def Gamma(self) -> float:
        return math.exp(self.gamma)

    @property
    def S(self) -> float:
        return math.sqrt(self.S2)

    def to_dict(self) -> Dict:
        return {
            'gamma': self.Gamma,
            'log_gamma': self.gamma,
            'statistic': self.statistic,
            'T': self.T,
            'V_F': self.V_F,
            'S': self.S,
            'S2': self.S2,
            'p_bound': self.p_bound,
            'per_set': [
                {'set_id': sid, 't_obs': float(t), 'mu_star': float(mu)}
                for sid, t, mu in zip(self.set_ids, self.t_observed, self.mu_star)
            ],
            'warnings': list(self.warnings),
        }


def set_t_values(dataset: MatchedDataset, statistic: CompiledStatistic,
                 cap: int = DEFAULT_MAX_SET_SIZE) -> List[SetTValues]:
    return [
        t_values(s, statistic, enumerate_assignments(s, cap, set_index=i))
        for i, s in enumerate(dataset)
    ]


def _set_mu_star(matched_set, t, gamma, cap, lp_tol):
    return mu_star(matched_set, t, gamma, lp_tol=lp_tol, cap=cap)


def assemble_sharp_result(gamma: float, statistic_kind: str, t_observed, mu, set_sizes, set_ids,
                          design: Union[DesignQ, HatMatrix], weights: str = 'size') -> SharpResult:
    """V_F, S_F^2 и p-значение по готовым T_i и mu_i*"""
    t_observed = np.asarray(t_observed, dtype=float)
    mu = np.asarray(mu, dtype=float)
    per_set = t_observed - mu
    diagnostics: List[str] = []
    S2 = variance_estimate(VarianceInputs.for_sets(per_set, set_sizes, weights), design, diagnostics)
    V_F = float(per_set.mean())
    return SharpResult(
        gamma=gamma,
        statistic=statistic_kind,
        T=float(t_observed.mean()),
        t_observed=t_observed,
        mu_star=mu,
        V_F=V_F,
        V_F_per_set=per_set,
        S2=S2,
        p_bound=bounding_p_value(V_F, S2),
        set_ids=tuple(set_ids),
        warnings=diagnostics,
    )


def sharp_analysis(dataset: MatchedDataset, statistic: Union[StatisticSpec, CompiledStatistic],
                   gamma: float, design: Optional[Union[DesignQ, HatMatrix]] = None, *,
                   weights: str = 'size', cap: int = DEFAULT_MAX_SET_SIZE, lp_tol: float = 1e-9,
                   n_jobs: int = 1, tables: Optional[List[SetTValues]] = None) -> SharpResult:
    """Ограничивающее p-значение для H_F при чувствительности gamma = ln Gamma"""
    if dataset.I < 2:
        raise TooFewSets("❌ Для анализа нужно минимум два набора")
    if gamma < 0:
        raise DoseSensError(f"❌ gamma = {gamma} < 0")
    compiled = statistic if isinstance(statistic, CompiledStatistic) else build_statistic(statistic, dataset)
    design = design if design is not None else build_design(dataset)
    tables = tables or set_t_values(dataset, compiled, cap)

    mu = parallel_map(
        _set_mu_star,
        ((s, tables[i].t, gamma, cap, lp_tol) for i, s in enumerate(dataset)),
        n_jobs=n_jobs,
    )
    return assemble_sharp_result(
        gamma, compiled.kind, [tv.t_observed for tv in tables], mu,
        dataset.set_sizes, dataset.set_ids, design, weights,
    )


@dataclass
class ExactPValue:
    p_value: float
    method: str
    n_assignments: int
    observed: float

    def to_dict(self) -> Dict:
        return {
            'p_value': self.p_value,
            'method': self.method,
            'n_assignments': self.n_assignments,
            'T': self.observed,
        }


def exact_sharp_pvalue(dataset: MatchedDataset, statistic: Union[StatisticSpec, CompiledStatistic],
                       draws: int = 10000, seed: int = 0, max_enumeration: int = 1_000_000,
                       cap: int = DEFAULT_MAX_SET_SIZE) -> ExactPValue:
    """
    P(T >= t) при равновероятных назначениях (Gamma = 1).
    Полный перебор, если prod n_i! <= max_enumeration, иначе Монте-Карло
    с поправкой (count + 1) / (draws + 1).
    """
    compiled = statistic if isinstance(statistic, CompiledStatistic) else build_statistic(statistic, dataset)
    tables = set_t_values(dataset, compiled, cap)
    observed = sum(tv.t_observed for tv in tables)
    slack = 1e-9 * max(1.0, abs(observed))
    total_assignments = math.prod(len(tv.t) for tv in tables)

    if total_assignments <= max_enumeration:
        totals = np.zeros(1)
        for tv in tables:
            totals = (totals[:, None] + tv.t[None, :]).ravel()
        count = int(np.sum(totals >= observed - slack))
        return ExactPValue(count / totals.size, 'exact', totals.size, observed / dataset.I)

    rng = make_rng(seed)
    totals = np.zeros(draws)
    for tv in tables:
        totals += tv.t[rng.integers(len(tv.t), size=draws)]
    count = int(np.sum(totals >= observed - slack))
    return ExactPValue((count + 1) / (draws + 1), 'monte-carlo', draws, observed / dataset.I)


class SharpNullAnalyzer:
    """
    Обертка с конфигурацией: статистика, Q, лимиты и допуски из config.yaml.
    Таблицы t-значений и hat-матрица кэшируются для серии значений Gamma.
    """

    def __init__(self, config_path="config.yaml", config: Optional[Dict] = None):
        self.config = config if config is not None else self._load_config(config_path)
        self.verbose = self.config['debug']['verbose']
        self._cache_key = None
        self._tables = None
        self._compiled = None
        self._hat = None

    def _load_config(self, config_path):
        return load_yaml_config(config_path, DEFAULT_CONFIG)

    def statistic_spec(self) -> StatisticSpec:
        analysis = self.config['analysis']
        dose_table = analysis.get('dose_scores')
        outcome_table = analysis.get('outcome_scores')
        return StatisticSpec(
            kind=analysis['statistic'],
            rank_scope_dose=analysis['dose_rank_scope'],
            dose_score_table=load_score_table(dose_table) if dose_table else None,
            outcome_score_table=load_score_table(outcome_table) if outcome_table else None,
        )

    def _prepare(self, dataset: MatchedDataset):
        if self._cache_key is dataset:
            return
        cap = self.config['enumeration']['max_set_size']
        variance = self.config['variance']
        self._compiled = build_statistic(self.statistic_spec(), dataset)
        self._tables = set_t_values(dataset, self._compiled, cap)
        self._hat = hat_matrix(build_design(dataset, variance['covariates']),
                               tol=variance['rank_tol'], drop_dependent=variance['drop_dependent'])
        self._cache_key = dataset

    def analyze(self, dataset: MatchedDataset, Gamma: float) -> SharpResult:
        """Анализ при одном значении Gamma >= 1"""
        if Gamma < 1:
            raise DoseSensError(f"❌ Gamma = {Gamma} < 1")
        self._prepare(dataset)
        if self.verbose:
            print(f"📊 Острая гипотеза: Gamma = {Gamma:.4g}, статистика {self._compiled.kind}")
        result = sharp_analysis(
            dataset, self._compiled, math.log(Gamma), self._hat,
            weights=self.config['variance']['weights'],
            cap=self.config['enumeration']['max_set_size'],
            lp_tol=self.config['lp']['tol'],
            n_jobs=resolve_n_jobs(self.config['runtime']['threads']),
            tables=self._tables,
        )
        if self.verbose:
            print(f"   V_F = {result.V_F:.6g}, S = {result.S:.6g}, p = {result.p_bound:.4g}")
        return result

    def exact(self, dataset: MatchedDataset, seed: Optional[int] = None) -> ExactPValue:
        exact = self.config['exact']
        result = exact_sharp_pvalue(
            dataset, self.statistic_spec(),
            draws=exact['draws'],
            seed=self.config['runtime']['seed'] if seed is None else seed,
            max_enumeration=exact['max_enumeration'],
            cap=self.config['enumeration']['max_set_size'],
        )
        if self.verbose:
            print(f"🎯 Рандомизационное p-значение ({result.method}): {result.p_value:.4g}")
        return result
