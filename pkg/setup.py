#!/usr/bin/env python3
"""
Настройка проекта "Анализ чувствительности с дозами воздействия".

python setup.py           - проверка окружения, структура папок, тестовые данные
pip install . / -e .      - обычная установка через setuptools
"""

import importlib
import subprocess
import sys
from pathlib import Path

PACKAGE_NAME = "dose-sensitivity"
VERSION = "1.0.0"
MODULES = [
    'errors', 'matched_design', 'data_utils', 'rank_statistics', 'optimizers',
    'variance_estimator', 'sharp_analyzer', 'estimands', 'weak_analyzer',
    'sensitivity_simulator', 'report_generator', 'main', 'runner',
]
REQUIREMENTS = [
    'numpy>=1.21.0',
    'pandas>=1.5.0',
    'scipy>=1.9.0',
    'PyYAML>=6.0',
    'tqdm>=4.64.0',
    'joblib>=1.2.0',
]
TEST_REQUIREMENTS = ['pytest>=7.0']
SETUPTOOLS_COMMANDS = {'install', 'develop', 'egg_info', 'sdist', 'bdist_wheel', 'build', 'dist_info',
                       'editable_wheel', 'build_py'}


class ProjectSetup:
    """Проверка окружения и подготовка рабочих папок"""

    def __init__(self):
        self.python_version = sys.version_info
        self.project_dir = Path(__file__).resolve().parent
        self.errors = []
        self.warnings = []

    def check_python_version(self):
        print("🐍 Проверка версии Python...")
        if self.python_version < (3, 8):
            self.errors.append(f"Требуется Python 3.8+, установлен {sys.version}")
            print(f"❌ Python {sys.version}")
            return False
        print(f"✅ Python {sys.version.split()[0]}")
        return True

    def create_requirements_file(self):
        print("📦 requirements.txt...")
        path = self.project_dir / "requirements.txt"
        if path.exists():
            print("   ⚠️ requirements.txt уже существует, пропускаю")
            return True
        lines = ["# Вычисления и данные", *REQUIREMENTS[:3], "", "# Конфигурация, прогресс, параллельность",
                 *REQUIREMENTS[3:], "", "# Тесты", *TEST_REQUIREMENTS]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print("   📄 requirements.txt")
        return True

    def install_dependencies(self):
        print("📚 Установка зависимостей...")
        try:
            subprocess.run([sys.executable, '-m', 'pip', 'install', '-r',
                            str(self.project_dir / "requirements.txt")], check=True, capture_output=True)
        except (subprocess.CalledProcessError, OSError) as e:
            self.errors.append(f"Ошибка установки зависимостей: {e}")
            print("❌ Ошибка установки зависимостей")
            return False
        print("✅ Зависимости установлены")
        return True

    def verify_imports(self):
        print("🔍 Проверка импорта библиотек...")
        failed = []
        for package in ['numpy', 'pandas', 'scipy', 'yaml', 'tqdm', 'joblib']:
            try:
                importlib.import_module(package)
                print(f"   ✅ {package}")
            except ImportError:
                failed.append(package)
                print(f"   ❌ {package}")
        if failed:
            self.errors.append(f"Не удалось импортировать: {', '.join(failed)}")
            return False
        return True

    def create_project_structure(self):
        print("📁 Создание структуры проекта...")
        for directory in ["data", "results", "configs"]:
            (self.project_dir / directory).mkdir(exist_ok=True)
            print(f"   📁 {directory}")
        return True

    def create_sample_data(self):
        print("🎲 Создание тестовых данных...")
        sample_file = self.project_dir / "data" / "sample_matched.csv"
        if sample_file.exists():
            print("   ⚠️ Тестовые данные уже существуют")
            return True
        try:
            sys.path.insert(0, str(self.project_dir))
            from data_utils import DataProcessor
            DataProcessor().generate_sample_data(sample_file, n_sets=200, seed=0)
            return True
        except Exception as e:
            self.warnings.append(f"Не удалось создать тестовые данные: {e}")
            print(f"   ⚠️ Ошибка: {e}")
            return False

    def validate_installation(self):
        print("🔍 Финальная валидация...")
        missing = [m for m in MODULES if not (self.project_dir / f"{m}.py").exists()]
        missing += [f for f in ("config.yaml", "requirements.txt") if not (self.project_dir / f).exists()]
        if missing:
            self.errors.append(f"Отсутствуют файлы: {', '.join(missing)}")
            return False
        try:
            sys.path.insert(0, str(self.project_dir))
            importlib.import_module('main')
            print("   ✅ main.py импортируется")
        except ImportError as e:
            self.errors.append(f"Ошибка импорта main.py: {e}")
            return False
        return True

    def run_setup(self):
        print("🛠️ НАСТРОЙКА ПРОЕКТА")
        print("=" * 50)
        steps = [
            ("Проверка Python", self.check_python_version),
            ("requirements.txt", self.create_requirements_file),
            ("Установка зависимостей", self.install_dependencies),
            ("Проверка импорта", self.verify_imports),
            ("Создание структуры", self.create_project_structure),
            ("Создание тестовых данных", self.create_sample_data),
            ("Финальная валидация", self.validate_installation),
        ]
        completed = 0
        for step_name, step_function in steps:
            print(f"\n📋 {step_name}...")
            try:
                if step_function():
                    completed += 1
                else:
                    print(f"❌ {step_name} не выполнен")
            except Exception as e:
                self.errors.append(f"Ошибка в {step_name}: {e}")
                print(f"❌ {step_name}: {e}")

        print("\n" + "=" * 50)
        print("📊 ИТОГОВЫЙ ОТЧЕТ")
        print("=" * 50)
        print(f"✅ Выполнено шагов: {completed}/{len(steps)}")
        for warning in self.warnings:
            print(f"⚠️ {warning}")
        for error in self.errors:
            print(f"❌ {error}")
        if not self.errors:
            print("\n🎉 УСТАНОВКА ЗАВЕРШЕНА УСПЕШНО!")
            print("\n🚀 Следующие шаги:")
            print("   1. python runner.py data/sample_matched.csv")
            print("   2. python main.py weak-test data/sample_matched.csv --gamma 1.2")
            print("   3. python main.py simulate --config configs/sharp_scaled.yaml")
            print("   4. pytest")
        return completed == len(steps) and not self.errors


def setuptools_setup():
    from setuptools import setup

    setup(
        name=PACKAGE_NAME,
        version=VERSION,
        description="Randomization inference and sensitivity analysis for matched studies with treatment doses",
        py_modules=MODULES,
        python_requires=">=3.8",
        install_requires=REQUIREMENTS,
        extras_require={'test': TEST_REQUIREMENTS},
        entry_points={'console_scripts': ['dose-sensitivity=main:main']},
    )


def main():
    if SETUPTOOLS_COMMANDS & set(sys.argv[1:]):
        setuptools_setup()
        return
    setup = ProjectSetup()
    try:
        success = setup.run_setup()
        sys.exit(0 if success else 1)
    except KeyboardInterrupt:
        print("\n⏹️ Установка прервана пользователем")
        sys.exit(1)


if __name__ == "__main__":
    main()
