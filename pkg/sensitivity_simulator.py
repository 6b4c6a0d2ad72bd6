#!/usr/bin/env python3
"""
Монте-Карло проверка размера тестов при наихудшем ненаблюдаемом u.

Острая гипотеза: r_ij(z) = r_ij, n_i ~ min{2 + Poisson(0.6), 4}.
Слабая гипотеза: r_jk = eps_jk + z_(k) * beta_i, n_i ~ min{2 + Poisson(1), 5},
дозы перетягиваются, пока в наборе нет доз по обе стороны порога c.

В каждом повторе для каждого набора ищется u, максимизирующий ожидание
статистики, назначение доз выбирается из p(u), затем считается тест.
"""

import argparse
import math
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed
from scipy.special import softmax
from tqdm import tqdm

from data_utils import resolve_n_jobs
from errors import ConfigError, RedrawLimitExceeded
from estimands import build_estimand, estimand_value
from matched_design import (
    MatchedDataset,
    MatchedSet,
    enumerate_assignments,
    make_rng,
    sample_assignment,
)
from optimizers import BoxProblem, MultiStart, box_optimize
from rank_statistics import StatisticSpec, build_statistic, t_values
from sharp_analyzer import assemble_sharp_result, mu_star
from variance_estimator import build_design, hat_matrix
from weak_analyzer import METHODS, BoundedTest, bounded_values, set_sensitivity

PROTOCOLS = ('sharp', 'weak')
MAX_REDRAWS = 100_000

_DISTRIBUTION = re.compile(
    r'^\s*(?P<sign>[+-])?\s*(?P<family>N|Normal|Exp|Unif|Uniform|Beta)\s*'
    r'[\(\[](?P<params>[^\)\]]*)[\)\]]\s*(?P<shift>[+-]\s*[0-9./]+)?\s*$'
)


# =====================================================================
# РАСПРЕДЕЛЕНИЯ
# =====================================================================

def _number(text: str) -> float:
    return float(Fraction(text.replace(' ', '')))


@dataclass(frozen=True)
class DistributionSpec:
    """
    sign * X + shift, X из N(mu, sd), Exp(rate), Unif[a, b] или Beta(a, b).
    Примеры записи: 'N(0,5)', 'Exp(1)-1', '-Exp(1/5)+5', 'Beta(2,2)'.
    """

    family: str
    params: Tuple[float, ...]
    sign: float = 1.0
    shift: float = 0.0
    label: str = ''

    @classmethod
    def parse(cls, text: str) -> 'DistributionSpec':
        match = _DISTRIBUTION.match(str(text))
        if not match:
            raise ConfigError(f"❌ Не удалось разобрать распределение '{text}'")
        family = {'Normal': 'N', 'Uniform': 'Unif'}.get(match['family'], match['family'])
        try:
            params = tuple(_number(p) for p in match['params'].split(',') if p.strip())
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"❌ Некорректные параметры распределения '{text}'") from None
        expected = {'N': 2, 'Exp': 1, 'Unif': 2, 'Beta': 2}[family]
        if len(params) != expected:
            raise ConfigError(f"❌ {family} требует {expected} параметр(а), '{text}'")
        if family == 'N' and params[1] < 0:
            raise ConfigError(f"❌ Отрицательное стандартное отклонение в '{text}'")
        if family == 'Exp' and params[0] <= 0:
            raise ConfigError(f"❌ Интенсивность Exp должна быть положительной, '{text}'")
        if family == 'Unif' and params[0] >= params[1]:
            raise ConfigError(f"❌ Unif[a,b] требует a < b, '{text}'")
        if family == 'Beta' and min(params) <= 0:
            raise ConfigError(f"❌ Параметры Beta должны быть положительными, '{text}'")
        sign = -1.0 if match['sign'] == '-' else 1.0
        shift = _number(match['shift']) if match['shift'] else 0.0
        return cls(family=family, params=params, sign=sign, shift=shift, label=str(text).strip())

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == 'N':
            base = rng.normal(self.params[0], self.params[1], size)
        elif self.family == 'Exp':
            base = rng.exponential(1.0 / self.params[0], size)
        elif self.family == 'Unif':
            base = rng.uniform(self.params[0], self.params[1], size)
        else:
            base = rng.beta(self.params[0], self.params[1], size)
        return self.sign * base + self.shift

    def __str__(self):
        return self.label or f"{self.family}{self.params}"


# =====================================================================
# КОНФИГУРАЦИЯ И ОТЧЕТ
# =====================================================================

_PROTOCOL_DEFAULTS = {
    'sharp': {'set_size_rate': 0.6, 'set_size_max': 4, 'gamma': 1.8, 'dose': 'Unif[0,1]'},
    'weak': {'set_size_rate': 1.0, 'set_size_max': 5, 'gamma': 1.0, 'dose': 'Beta(2,5)'},
}


@dataclass
class SimConfig:
    protocol: str = 'sharp'
    n_sets: int = 400
    reps: int = 500
    seed: int = 0
    gamma: Optional[float] = None          # Gamma >= 1
    alpha: float = 0.1
    set_size_min: int = 2
    set_size_rate: Optional[float] = None
    set_size_max: Optional[int] = None
    dose: Optional[str] = None
    noise: str = 'N(0,1)'                   # F_eps
    noise0: str = 'N(0,5)'                  # F_eps0, исход при минимальной дозе
    effect: str = 'N(0,1)'                  # F_beta
    sign_b: int = 1
    statistic: str = 'double-rank'
    threshold: float = 0.5
    methods: Tuple[str, ...] = METHODS
    weights: str = 'size'
    max_set_size: int = 5
    box_random_starts: int = 5
    box_tol: float = 1e-10
    box_max_iter: int = 2000
    threads: int = 1
    keep_reps: bool = False
    verbose: bool = True

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"❌ Неизвестный протокол '{self.protocol}', доступны: {PROTOCOLS}")
        for key, value in _PROTOCOL_DEFAULTS[self.protocol].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if int(self.reps) < 1:
            raise ConfigError("❌ reps должен быть >= 1")
        if int(self.n_sets) < 2:
            raise ConfigError("❌ n_sets должен быть >= 2")
        if self.gamma < 1:
            raise ConfigError(f"❌ Gamma = {self.gamma} < 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"❌ alpha = {self.alpha} вне (0, 1)")
        if self.set_size_rate < 0 or self.set_size_min < 2 or self.set_size_max < self.set_size_min:
            raise ConfigError("❌ Некорректный закон размера наборов")
        if self.set_size_max > self.max_set_size:
            raise ConfigError(f"❌ set_size_max = {self.set_size_max} больше лимита {self.max_set_size}")
        if self.sign_b not in (1, -1):
            raise ConfigError("❌ sign_b должен быть 1 или -1")
        self.methods = tuple(self.methods)
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"❌ Неизвестные методы {sorted(unknown)}, доступны: {METHODS}")
        self.reps, self.n_sets = int(self.reps), int(self.n_sets)
        # разбор сразу, чтобы ошибки записи всплыли до запуска
        for name in ('dose', 'noise', 'noise0', 'effect'):
            DistributionSpec.parse(getattr(self, name))

    @classmethod
    def from_dict(cls, values: Dict) -> 'SimConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known - {'grid'}
        if unknown:
            raise ConfigError(f"❌ Неизвестные ключи симуляции: {', '.join(sorted(unknown))}")
        return cls(**{k: v for k, v in values.items() if k in known})

    @property
    def log_gamma(self) -> float:
        return math.log(self.gamma)

    def distributions(self) -> Dict[str, DistributionSpec]:
        return {name: DistributionSpec.parse(getattr(self, name))
                for name in ('dose', 'noise', 'noise0', 'effect')}

    def starts(self) -> MultiStart:
        return MultiStart(random=self.box_random_starts, seed=self.seed)

    def to_dict(self) -> Dict:
        values = asdict(self)
        values['methods'] = list(self.methods)
        return values


@dataclass
class MethodSummary:
    method: str
    reps: int
    rejection_rate: float
    rejection_se: float
    bias: float
    sd: float
    est_sd: float

    @classmethod
    def from_records(cls, method: str, records: Sequence[Dict]) -> 'MethodSummary':
        reject = np.array([r['reject'] for r in records], dtype=float)
        V = np.array([r['V'] for r in records])
        S = np.array([r['S'] for r in records])
        rate = float(reject.mean())
        return cls(
            method=method,
            reps=len(records),
            rejection_rate=rate,
            rejection_se=math.sqrt(rate * (1.0 - rate) / len(records)),
            bias=float(V.mean()),
            sd=float(V.std(ddof=1)) if len(V) > 1 else 0.0,
            est_sd=float(S.mean()),
        )


@dataclass
class SimReport:
    protocol: str
    config: Dict
    summaries: Dict[str, MethodSummary]
    records: List[Dict] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def rejection_rate(self) -> float:
        """Для острого протокола - единственный метод, для слабого - первый из config.methods"""
        return next(iter(self.summaries.values())).rejection_rate

    def to_dict(self) -> Dict:
        return {
            'protocol': self.protocol,
            'config': self.config,
            'summaries': {k: asdict(v) for k, v in self.summaries.items()},
            'records': list(self.records),
            'warnings': list(self.warnings),
        }

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for summary in self.summaries.values():
            row = {
                'F_z': self.config['dose'],
                'Gamma': self.config['gamma'],
            }
            if self.protocol == 'sharp':
                row['F_eps'] = self.config['noise']
            else:
                row.update({'F_beta': self.config['effect'], 'F_eps0': self.config['noise0'],
                            'F_eps': self.config['noise'], 'B_sign': '+' if self.config['sign_b'] > 0 else '-'})
            row.update(asdict(summary))
            rows.append(row)
        return pd.DataFrame(rows)


# =====================================================================
# НАИХУДШИЙ u
# =====================================================================

@dataclass
class WorstCase:
    u: np.ndarray
    probabilities: np.ndarray
    expectation: float


def expectation_problem(dose_matrix: np.ndarray, values: np.ndarray, gamma: float) -> BoxProblem:
    """
    F(u) = sum_pi p_pi(u) v_pi,
    grad F = gamma * (sum_pi p_pi v_pi z_pi - F * sum_pi p_pi z_pi).
    """
    Z = np.asarray(dose_matrix, dtype=float)
    v = np.asarray(values, dtype=float)

    def fun(points):
        return softmax(gamma * (points @ Z.T), axis=1) @ v

    def grad(points):
        p = softmax(gamma * (points @ Z.T), axis=1)
        F = p @ v
        return gamma * ((p * v[None, :]) @ Z - F[:, None] * (p @ Z))

    return BoxProblem(dim=Z.shape[1], fun=fun, grad=grad)


def worst_case_u(matched_set: MatchedSet, values: Sequence[float], gamma: float,
                 starts: Optional[MultiStart] = None, tol: float = 1e-10, max_iter: int = 10_000,
                 cap: int = 5) -> WorstCase:
    """
    u в [0,1]^n, максимизирующий ожидание values по перестановкам набора
    (порядок values - порядок таблицы перестановок над наблюдаемыми дозами).
    """
    table = enumerate_assignments(matched_set, cap)
    v = np.asarray(values, dtype=float)
    if v.shape != (table.size,):
        raise ConfigError(f"❌ Ожидалось {table.size} значений, получено {v.size}")
    Z = table.dose_matrix(matched_set.doses)
    if gamma == 0 or np.ptp(v) == 0 or np.ptp(Z) == 0:
        uniform = np.full(table.size, 1.0 / table.size)
        return WorstCase(u=np.zeros(matched_set.n), probabilities=uniform, expectation=float(v.mean()))
    best = box_optimize(expectation_problem(Z, v, gamma), starts, tol=tol, max_iter=max_iter)
    probabilities = softmax(gamma * (Z @ best.u))
    return WorstCase(u=best.u, probabilities=probabilities, expectation=float(probabilities @ v))


# =====================================================================
# ГЕНЕРАЦИЯ ДАННЫХ
# =====================================================================

def draw_set_sizes(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    sizes = config.set_size_min + rng.poisson(config.set_size_rate, config.n_sets)
    return np.minimum(sizes, config.set_size_max)


def draw_doses(config: SimConfig, dose: DistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Упорядоченные дозы; в слабом протоколе - с перетягиванием до доз по обе стороны порога"""
    if config.protocol == 'sharp':
        return np.sort(dose.sample(rng, n))
    for _ in range(MAX_REDRAWS):
        z = dose.sample(rng, n)
        above = int(np.sum(z > config.threshold))
        if 0 < above < n:
            return np.sort(z)
    raise RedrawLimitExceeded(
        f"❌ За {MAX_REDRAWS} попыток не получены дозы по обе стороны порога {config.threshold}"
    )


def weak_potential_outcomes(sorted_doses: np.ndarray, dists: Dict[str, DistributionSpec], sign_b: int,
                            rng: np.random.Generator) -> np.ndarray:
    """
    Таблица r[j, k] - исход объекта j при дозе z_(k).
    Шум при минимальной дозе умножается на sign_b * B_i, B_i = 2 * 1{beta_i >= 0} - 1.
    """
    n = len(sorted_doses)
    beta = float(dists['effect'].sample(rng, 1)[0])
    B = 1.0 if beta >= 0 else -1.0
    eps = np.empty((n, n))
    eps[:, 0] = dists['noise0'].sample(rng, n) * sign_b * B
    eps[:, 1:] = dists['noise'].sample(rng, (n, n - 1))
    return eps + sorted_doses[None, :] * beta


def _observed_set(set_id: str, sorted_doses: np.ndarray, perm: np.ndarray, outcomes: np.ndarray) -> MatchedSet:
    return MatchedSet(set_id=set_id, doses=sorted_doses[perm], outcomes=outcomes)


# =====================================================================
# ПОВТОРЫ
# =====================================================================

def _sharp_replicate(config: SimConfig, rep: int) -> Dict:
    rng = make_rng(config.seed, rep, 0)
    sample_rng = make_rng(config.seed, rep, 1)
    dists = config.distributions()
    gamma = config.log_gamma
    sizes = draw_set_sizes(config, rng)

    base = []
    for i, n in enumerate(sizes):
        z = draw_doses(config, dists['dose'], int(n), rng)
        base.append(MatchedSet(set_id=f"s{i + 1}", doses=z, outcomes=dists['noise'].sample(rng, int(n))))
    dataset = MatchedDataset(tuple(base))
    compiled = build_statistic(StatisticSpec(kind=config.statistic), dataset)

    t_obs, mu = [], []
    for i, s in enumerate(dataset):
        table = enumerate_assignments(s, config.max_set_size, set_index=i)
        tv = t_values(s, compiled, table)
        worst = worst_case_u(s, tv.t, gamma, config.starts(), config.box_tol, config.box_max_iter,
                             config.max_set_size)
        index = sample_assignment(worst.probabilities, sample_rng)
        t_obs.append(tv.t[index])
        mu.append(mu_star(s, tv, gamma, cap=config.max_set_size))

    result = assemble_sharp_result(gamma, compiled.kind, t_obs, mu, dataset.set_sizes, dataset.set_ids,
                                   hat_matrix(build_design(dataset)), config.weights)
    return {
        'sharp': {'rep': rep, 'V': result.V_F, 'S': result.S, 'p': result.p_bound,
                  'reject': bool(result.p_bound <= config.alpha), 'warnings': list(result.warnings)},
    }


def _weak_replicate(config: SimConfig, rep: int) -> Dict:
    rng = make_rng(config.seed, rep, 0)
    dists = config.distributions()
    gamma = config.log_gamma
    sizes = draw_set_sizes(config, rng)

    base, tables = [], {}
    for i, n in enumerate(sizes):
        set_id = f"s{i + 1}"
        z = draw_doses(config, dists['dose'], int(n), rng)
        tables[set_id] = weak_potential_outcomes(z, dists, config.sign_b, rng)
        base.append(MatchedSet(set_id=set_id, doses=z, outcomes=np.diag(tables[set_id])))
    base_dataset = MatchedDataset(tuple(base))
    estimand = build_estimand('stochastic-contrast',
                              {'threshold': config.threshold, 'interventions': ('above', 'baseline')},
                              base_dataset)
    theta = estimand_value(estimand, tables)
    hat = hat_matrix(build_design(base_dataset))

    records = {}
    for m, method in enumerate(config.methods):
        sample_rng = make_rng(config.seed, rep, 1 + m)
        sensitivities, observed = [], []
        for s in base_dataset:
            sens = set_sensitivity(s, gamma, method, config.starts(), config.box_tol, config.box_max_iter,
                                   config.max_set_size)
            perms = enumerate_assignments(s, config.max_set_size).perms
            contributions = estimand.permutation_contributions(s.set_id, tables[s.set_id], perms)
            values, _, _ = bounded_values(contributions, theta, [sens] * len(perms), method)
            worst = worst_case_u(s, values, gamma, config.starts(), config.box_tol, config.box_max_iter,
                                 config.max_set_size)
            perm = sample_assignment(worst.probabilities, sample_rng, enumerate_assignments(s, config.max_set_size))
            outcomes = tables[s.set_id][np.arange(s.n), perm]
            observed.append(_observed_set(s.set_id, s.sorted_doses, perm, outcomes))
            sensitivities.append(sens)

        test = BoundedTest(MatchedDataset(tuple(observed)), estimand, gamma, method, hat,
                           weights=config.weights, sensitivities=sensitivities, cap=config.max_set_size)
        result = test.result(theta, 'greater')
        records[method] = {'rep': rep, 'theta': theta, 'V': result.V_bounded, 'S': result.S_bounded,
                           'V_N': result.V_N, 'p': result.p_bound,
                           'reject': bool(result.p_bound <= config.alpha), 'warnings': list(result.warnings)}
    return records


def _run_replicates(config: SimConfig, replicate) -> List[Dict]:
    n_jobs = resolve_n_jobs(config.threads)
    reps = tqdm(range(config.reps), desc=f"🎲 {config.protocol}", disable=not config.verbose)
    if n_jobs == 1:
        return [replicate(config, rep) for rep in reps]
    # порядок результатов совпадает с порядком повторов
    return Parallel(n_jobs=n_jobs)(delayed(replicate)(config, rep) for rep in reps)


def _report(config: SimConfig, outputs: List[Dict]) -> SimReport:
    methods = list(outputs[0])
    summaries, records, warnings = {}, [], []
    for method in methods:
        method_records = [out[method] for out in outputs]
        summaries[method] = MethodSummary.from_records(method, method_records)
        for record in method_records:
            warnings.extend(record.pop('warnings'))
            if config.keep_reps:
                records.append({'method': method, **record})
    if config.verbose:
        for summary in summaries.values():
            print(f"   {summary.method}: Type-I = {summary.rejection_rate:.3f} ± {summary.rejection_se:.3f}, "
                  f"Bias = {summary.bias:.4g}, SD = {summary.sd:.4g}, Est.SD = {summary.est_sd:.4g}")
    return SimReport(protocol=config.protocol, config=config.to_dict(), summaries=summaries,
                     records=records, warnings=sorted(set(warnings)))


def run_sharp_sim(config: SimConfig) -> SimReport:
    if config.protocol != 'sharp':
        raise ConfigError("❌ run_sharp_sim требует protocol = sharp")
    if config.verbose:
        print(f"🎲 Острая гипотеза: I = {config.n_sets}, Gamma = {config.gamma}, F_z = {config.dose}, "
              f"F_eps = {config.noise}, повторов {config.reps}")
    return _report(config, _run_replicates(config, _sharp_replicate))


def run_weak_sim(config: SimConfig) -> SimReport:
    if config.protocol != 'weak':
        raise ConfigError("❌ run_weak_sim требует protocol = weak")
    if config.verbose:
        print(f"🎲 Слабая гипотеза: I = {config.n_sets}, Gamma = {config.gamma}, F_z = {config.dose}, "
              f"F_beta = {config.effect}, F_eps0 = {config.noise0}, F_eps = {config.noise}, "
              f"B = {'+' if config.sign_b > 0 else '-'}, повторов {config.reps}")
    return _report(config, _run_replicates(config, _weak_replicate))


def run_simulation(config: SimConfig) -> SimReport:
    return run_sharp_sim(config) if config.protocol == 'sharp' else run_weak_sim(config)


def load_sim_config(path, **overrides) -> Tuple[SimConfig, List[Dict]]:
    """YAML: ключи SimConfig и необязательный список grid с переопределениями"""
    with open(Path(path), 'r', encoding='utf-8') as f:
        values = yaml.safe_load(f) or {}
    if not isinstance(values, dict):
        raise ConfigError(f"❌ {path}: ожидался словарь ключей симуляции")
    grid = values.get('grid') or []
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SimConfig.from_dict(values), list(grid)


def run_sim_grid(config: SimConfig, grid: Sequence[Dict]) -> Tuple[pd.DataFrame, List[SimReport]]:
    """Сетка настроек (распределения, Gamma, знак B); одна строка на метод и настройку"""
    reports = []
    for k, override in enumerate(grid or [{}]):
        point = replace(config, **override)
        if config.verbose:
            print(f"\n📊 Настройка {k + 1}/{max(len(grid), 1)}: {override}")
        reports.append(run_simulation(point))
    frame = pd.concat([r.to_frame() for r in reports], ignore_index=True)
    return frame, reports


def main():
    parser = argparse.ArgumentParser(description='Монте-Карло проверка размера тестов чувствительности')
    parser.add_argument('config', help='YAML с ключами симуляции')
    parser.add_argument('--reps', type=int, default=None)
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--out', default='results/simulation.csv')
    args = parser.parse_args()

    config, grid = load_sim_config(args.config, reps=args.reps, seed=args.seed)
    frame, _ = run_sim_grid(config, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format='%.6g')
    print(f"✅ Таблица сохранена: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
