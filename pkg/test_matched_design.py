#!/usr/bin/env python3
"""
БЫСТРЫЙ ТЕСТ МОДЕЛИ НАБОРОВ: ПОРЯДКОВЫЕ ПОЗИЦИИ, ПЕРЕСТАНОВКИ, ВЫБОР НАЗНАЧЕНИЙ
"""

import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from errors import ConfigError, InvalidWeights, NonFiniteValue, SetTooLarge, SingletonSet
from matched_design import (
    MatchedDataset,
    MatchedSet,
    assignment_probabilities,
    check_set_size_cap,
    enumerate_assignments,
    make_rng,
    order_index,
    sample_assignment,
)


def _set(doses, outcomes=None, set_id="s1"):
    outcomes = np.zeros(len(doses)) if outcomes is None else outcomes
    return MatchedSet(set_id=set_id, doses=doses, outcomes=outcomes)


def test_order_index():
    """Позиции доз среди порядковых статистик, совпадения - по индексу объекта"""
    assert order_index(_set([0.7, 0.2, 0.5])).tolist() == [2, 0, 1]
    assert order_index(_set([0.5, 0.5])).tolist() == [0, 1]


def test_matched_set_validation():
    with pytest.raises(SingletonSet):
        _set([0.3])
    with pytest.raises(NonFiniteValue):
        _set([0.3, np.nan])
    with pytest.raises(NonFiniteValue):
        _set([0.3, 0.4], [1.0, np.inf])


def test_dataset_shape():
    dataset = MatchedDataset((_set([0.1, 0.2], set_id="a"), _set([0.3, 0.4, 0.5], set_id="b")))
    assert dataset.I == 2
    assert dataset.N == 5
    assert dataset.set_ids == ("a", "b")
    assert dataset.set_sizes.tolist() == [2, 3]


def test_enumerate_assignments():
    """n! перестановок, первая - тождественная"""
    table = enumerate_assignments(_set([0.1, 0.2, 0.3]))
    assert table.size == 6
    assert table.perms[0].tolist() == [0, 1, 2]
    assert len({tuple(p) for p in table.perms}) == 6

    pair = enumerate_assignments(_set([0.1, 0.2]))
    assert pair.perms.tolist() == [[0, 1], [1, 0]]


def test_set_size_cap():
    with pytest.raises(SetTooLarge):
        enumerate_assignments(_set(np.linspace(0, 1, 7)), cap=5)
    with pytest.raises(ConfigError):
        check_set_size_cap(7)


def test_sample_assignment_degenerate():
    rng = make_rng(1)
    assert all(sample_assignment([1.0, 0.0], rng) == 0 for _ in range(200))

    table = enumerate_assignments(_set([0.1, 0.2]))
    assert sample_assignment([0.0, 1.0], 5, table).tolist() == [1, 0]


def test_sample_assignment_uniform_frequencies():
    """60000 равновероятных выборов из 6 перестановок: частоты 1/6 +- 0.01"""
    rng = make_rng(2024)
    weights = np.full(6, 1.0 / 6.0)
    draws = np.array([sample_assignment(weights, rng) for _ in range(60_000)])
    freq = np.bincount(draws, minlength=6) / draws.size
    assert np.all(np.abs(freq - 1.0 / 6.0) < 0.01)


def test_sample_assignment_rejects_bad_weights():
    with pytest.raises(InvalidWeights):
        sample_assignment([0.5, 0.4], 0)
    with pytest.raises(InvalidWeights):
        sample_assignment([1.5, -0.5], 0)
    with pytest.raises(InvalidWeights):
        sample_assignment([0.5, 0.5], 0, enumerate_assignments(_set([0.1, 0.2, 0.3])))


def test_make_rng_streams():
    """Один ключ - одна последовательность, разные ключи - разные"""
    assert make_rng(7, 3, 1).random() == make_rng(7, 3, 1).random()
    assert make_rng(7, 3, 1).random() != make_rng(7, 3, 2).random()


def test_assignment_probabilities():
    s = _set([0.0, 0.4, 1.0])
    table = enumerate_assignments(s)
    Z = table.dose_matrix(s.sorted_doses)

    uniform = assignment_probabilities(Z, np.array([0.3, 0.9, 0.1]), 0.0)
    assert np.allclose(uniform, 1.0 / 6.0)

    u = make_rng(0).random((10, 3))
    p = assignment_probabilities(Z, u, np.log(2.0))
    assert p.shape == (10, 6)
    assert np.allclose(p.sum(axis=1), 1.0)
