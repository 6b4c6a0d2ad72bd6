#!/usr/bin/env python3
"""
Запуск полного анализа чувствительности для одного CSV файла
"""

import sys
from pathlib import Path


def main():
    if len(sys.argv) != 2:
        print("Использование: python runner.py <путь_к_csv>")
        print("Пример: python runner.py data/sample_matched.csv")
        return 1

    data_file = sys.argv[1]

    if not Path(data_file).exists():
        print(f"❌ Файл не найден: {data_file}")
        return 1

    from main import DoseSensitivityAnalyzer

    analyzer = DoseSensitivityAnalyzer()
    results = analyzer.run_full_analysis(data_file)

    if results['status'] != 'success':
        print(f"❌ Ошибка: {results['message']}")
        return 1

    print("\n" + "=" * 70)
    print("🎊 АНАЛИЗ ЧУВСТВИТЕЛЬНОСТИ ЗАВЕРШЕН!")
    print("=" * 70)
    print(f"📁 Все результаты: {results['results_folder']}")
    print(f"📋 Главный отчет: {results['results_folder']}/АНАЛИЗ_ЧУВСТВИТЕЛЬНОСТИ.txt")
    print(f"📊 Оценка V_N: {results['estimate']:.4f}")
    if results['p_crossing_gamma'] is not None:
        print(f"⚠️ Острая гипотеза перестает отвергаться при Gamma = {results['p_crossing_gamma']}")
    if results['ci_crosses_zero_gamma'] is not None:
        print(f"⚠️ Интервал накрывает 0 начиная с Gamma = {results['ci_crosses_zero_gamma']}")
    print("=" * 70)
    return 0


if __name__ == "__main__":
    sys.exit(main())
