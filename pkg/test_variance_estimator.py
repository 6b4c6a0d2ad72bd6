#!/usr/bin/env python3
"""
ТЕСТ ОЦЕНКИ ДИСПЕРСИИ S^2(Q): HAT-МАТРИЦА, ПРИМЕРЫ, КОНСЕРВАТИВНОСТЬ ПЕРЕБОРОМ
"""

import itertools
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from errors import ConfigError, LeverageOne, RankDeficientQ
from matched_design import MatchedDataset, MatchedSet, enumerate_assignments, make_rng
from rank_statistics import StatisticSpec, build_statistic, t_values
from variance_estimator import (
    DesignQ,
    VarianceInputs,
    build_design,
    hat_matrix,
    set_weights,
    variance_estimate,
)


def test_intercept_hat_matrix():
    hat = hat_matrix(DesignQ(np.ones(4)))
    assert np.allclose(hat.H, np.full((4, 4), 0.25))
    assert np.allclose(hat.leverage, 0.25)
    assert hat.rank == 1


def test_projection_properties():
    Q = DesignQ(np.column_stack([np.ones(12), make_rng(3).normal(size=(12, 3))]))
    H = hat_matrix(Q).H
    assert np.allclose(H, H.T)
    assert np.abs(H @ H - H).max() <= 1e-8
    assert abs(np.trace(H) - 4) < 1e-10


def test_rank_deficient_design():
    x = make_rng(0).normal(size=5)
    design = DesignQ(np.column_stack([np.ones(5), x, 2.0 * x]), ('intercept', 'x', 'x2'))
    with pytest.raises(RankDeficientQ):
        hat_matrix(design)
    assert hat_matrix(design, drop_dependent=True).rank == 2

    with pytest.raises(RankDeficientQ):
        hat_matrix(DesignQ(np.ones((2, 2))))


def test_leverage_one():
    """Индикатор одного набора дает h_ii = 1"""
    Q = DesignQ(np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(LeverageOne):
        variance_estimate(VarianceInputs(np.array([1.0, 2.0, 3.0]), np.ones(3)), Q)


def test_two_set_example():
    """v = (1, 3), W = E, Q = 1: S^2 = 1"""
    inputs = VarianceInputs(np.array([1.0, 3.0]), np.ones(2))
    assert abs(variance_estimate(inputs, DesignQ(np.ones(2))) - 1.0) < 1e-12


def test_constant_values_give_zero():
    inputs = VarianceInputs(np.full(6, 2.5), np.ones(6))
    assert variance_estimate(inputs, DesignQ(np.ones(6))) == 0.0


def test_span_column_and_order_invariance():
    rng = make_rng(8)
    x = rng.normal(size=9)
    v = rng.normal(size=9)
    w = set_weights(rng.integers(2, 5, size=9))
    base = DesignQ(np.column_stack([np.ones(9), x]))
    S2 = variance_estimate(VarianceInputs(v, w), base)

    extended = hat_matrix(base.with_column(3.0 * x - 1.0, 'combo'), drop_dependent=True)
    assert abs(variance_estimate(VarianceInputs(v, w), extended) - S2) < 1e-12

    order = rng.permutation(9)
    shuffled = DesignQ(base.matrix[order])
    assert abs(variance_estimate(VarianceInputs(v[order], w[order]), shuffled) - S2) < 1e-12


def test_weight_schemes():
    assert np.allclose(set_weights([2, 2, 4]), [0.75, 0.75, 1.5])
    assert np.allclose(set_weights([2, 2, 4], 'unit'), 1.0)
    with pytest.raises(ConfigError):
        set_weights([2, 3], 'median')


def test_design_from_covariates():
    sets = tuple(MatchedSet(set_id=f"s{i}", doses=[0.1, 0.9], outcomes=[0.0, 1.0],
                            covariates=[[i, 1.0], [i + 2.0, 3.0]]) for i in range(4))
    design = build_design(MatchedDataset(sets), 'means')
    assert design.column_names == ('intercept', 'mean_x1', 'mean_x2')
    assert np.allclose(design.matrix[:, 1], [1.0, 2.0, 3.0, 4.0])


def _enumeration_moments(dataset, design):
    """E[S^2] и Var(V) по всем назначениям при Gamma = 1, v_i = T_i - E T_i"""
    compiled = build_statistic(StatisticSpec('permutational-t'), dataset)
    centered = []
    for i, s in enumerate(dataset):
        t = t_values(s, compiled, enumerate_assignments(s, set_index=i)).t
        centered.append(t - t.mean())
    weights = set_weights(dataset.set_sizes)
    hat = hat_matrix(design)

    S2, V = [], []
    for combo in itertools.product(*centered):
        v = np.array(combo)
        S2.append(variance_estimate(VarianceInputs(v, weights), hat))
        V.append(weights @ v / dataset.I)
    return float(np.mean(S2)), float(np.var(V))


@pytest.mark.parametrize("seed", range(10))
def test_conservative_on_average_intercept(seed):
    """Два набора размера 2-3: E[S^2] >= Var(V) полным перебором"""
    rng = make_rng(seed)
    sets = tuple(
        MatchedSet(set_id=f"s{i}", doses=rng.random(n), outcomes=rng.normal(size=n))
        for i, n in enumerate(rng.integers(2, 4, size=2))
    )
    dataset = MatchedDataset(sets)
    mean_S2, var_V = _enumeration_moments(dataset, build_design(dataset))
    assert mean_S2 >= var_V - 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_conservative_on_average_covariate(seed):
    """Q = [1, x]: нужно L < I, поэтому три набора"""
    rng = make_rng(100 + seed)
    sets = tuple(
        MatchedSet(set_id=f"s{i}", doses=rng.random(n), outcomes=rng.normal(size=n),
                   covariates=rng.normal(size=(n, 1)))
        for i, n in enumerate(rng.integers(2, 4, size=3))
    )
    dataset = MatchedDataset(sets)
    mean_S2, var_V = _enumeration_moments(dataset, build_design(dataset, 'means'))
    assert mean_S2 >= var_V - 1e-10
