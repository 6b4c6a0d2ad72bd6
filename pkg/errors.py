#!/usr/bin/env python3
"""
Исключения анализатора чувствительности.
Все ошибки анализа наследуются от DoseSensError, поэтому CLI ловит их одним
обработчиком и печатает JSON с именем класса.
"""


class DoseSensError(ValueError):
    """Базовая ошибка анализа"""


# --- Загрузка и валидация данных ---

class MalformedInput(DoseSensError):
    """CSV не читается: пустой файл или битая структура строк"""


class MissingColumn(DoseSensError):
    """В CSV нет обязательной колонки"""


class NonFiniteValue(DoseSensError):
    """NaN / inf в дозах, исходах или ковариатах"""


class SingletonSet(DoseSensError):
    """Сопоставленный набор из одного объекта"""


class InconsistentCovariateDim(DoseSensError):
    """У наборов разная размерность ковариат"""


# --- Перестановки ---

class SetTooLarge(DoseSensError):
    """n_i больше лимита перечисления перестановок"""


class InvalidWeights(DoseSensError):
    """Вероятности перестановок отрицательны или не суммируются в 1"""


# --- Статистики ---

class UnknownKind(DoseSensError):
    """Неизвестный тип статистики или оценки"""


class UnknownScoreValue(DoseSensError):
    """Значения нет в таблице пользовательских баллов"""


# --- Оптимизация ---

class Infeasible(DoseSensError):
    """Линейная программа несовместна"""


class Unbounded(DoseSensError):
    """Целевая функция линейной программы не ограничена"""


class NonFiniteObjective(DoseSensError):
    """Целевая функция вернула NaN / inf"""


# --- Дисперсия ---

class RankDeficientQ(DoseSensError):
    """Матрица Q не полного столбцового ранга (или L >= I)"""


class LeverageOne(DoseSensError):
    """Диагональ hat-матрицы равна 1, деление на ноль"""


class TooFewSets(DoseSensError):
    """Для оценки дисперсии нужно минимум два набора"""


# --- Слабая нулевая гипотеза ---

class DegenerateThreshold(DoseSensError):
    """В наборе все дозы по одну сторону порога"""


class BadWeights(DoseSensError):
    """Веса стохастического вмешательства не суммируются в 1"""


class BadEstimandParams(DoseSensError):
    """Параметры оценки не подходят к данным"""


class TiedDoseCoefficients(DoseSensError):
    """Коэффициенты f различаются на совпадающих дозах"""


class EmptyInterval(DoseSensError):
    """Область принятия пуста"""


# --- Конфигурация и CLI ---

class ConfigError(DoseSensError):
    """Некорректная конфигурация"""


class UsageError(DoseSensError):
    """Некорректные аргументы командной строки"""


class RedrawLimitExceeded(DoseSensError):
    """Симуляция не смогла получить дозы по обе стороны порога"""
