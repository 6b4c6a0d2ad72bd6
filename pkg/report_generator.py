#!/usr/bin/env python3
"""
Отчеты: манифест запуска, JSON/CSV файлы и консольные таблицы
в форме таблицы чувствительности (Gamma, p, ДИ).

JSON хранит числа с полной точностью (повторное чтение дает те же значения),
CSV и консоль печатают 6 значащих цифр.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from errors import ConfigError

TOOL_VERSION = "1.0.0"
REPORT_FORMATS = ('json', 'csv')
SWEEP_COLUMNS = ('gamma', 'lower', 'upper', 'p_value')


@dataclass
class RunManifest:
    command: str
    config: Dict
    input_sha256: Optional[str]
    version: str
    seed: Optional[int]
    timestamp: str

    @classmethod
    def create(cls, command: str, config: Dict, input_path=None, seed: Optional[int] = None) -> 'RunManifest':
        return cls(
            command=command,
            config=config,
            input_sha256=file_sha256(input_path) if input_path else None,
            version=TOOL_VERSION,
            seed=seed,
            timestamp=datetime.now(timezone.utc).isoformat(timespec='seconds'),
        )


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _plain(value: Any) -> Any:
    """numpy и dataclass значения -> обычные типы JSON"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, 'to_dict'):
        return _plain(value.to_dict())
    return value


def result_payload(result: Any) -> Dict:
    payload = _plain(result)
    if not isinstance(payload, dict):
        raise ConfigError("❌ Результат для отчета должен быть словарем или объектом с to_dict()")
    return payload


def result_table(payload: Dict) -> pd.DataFrame:
    """Плоская таблица: строки прогона по Gamma, иначе наборы, иначе одна строка скаляров"""
    if payload.get('rows'):
        frame = pd.DataFrame(payload['rows'])
        ordered = [c for c in SWEEP_COLUMNS if c in frame.columns]
        return frame[ordered + [c for c in frame.columns if c not in ordered]]
    if payload.get('per_set'):
        return pd.DataFrame(payload['per_set'])
    scalars = {k: v for k, v in payload.items() if not isinstance(v, (dict, list))}
    return pd.DataFrame([scalars])


def emit_report(result: Any, fmt: str, path, manifest: Optional[RunManifest] = None) -> Path:
    """
    json: {'manifest': ..., **результат}; csv: плоская таблица, 6 значащих цифр.
    Ошибки записи (OSError) пробрасываются вызывающему.
    """
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"❌ Неизвестный формат '{fmt}', доступны: {REPORT_FORMATS}")
    payload = result_payload(result)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if fmt == 'json':
        document = {'manifest': _plain(asdict(manifest)) if manifest else None, **payload}
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2, ensure_ascii=False)
    else:
        result_table(payload).to_csv(path, index=False, float_format='%.6g')
    return path


def load_report(path) -> Dict:
    with open(Path(path), 'r', encoding='utf-8') as f:
        return json.load(f)


def _g6(value) -> str:
    if value is None:
        return '-'
    if isinstance(value, (bool, np.bool_)):
        return 'да' if value else 'нет'
    if isinstance(value, (int, float, np.floating, np.integer)):
        return f"{float(value):.6g}"
    return str(value)


class SensitivityReportGenerator:
    """Текстовые отчеты по результатам в results/"""

    def __init__(self, results_dir="results"):
        self.results_dir = Path(results_dir)

    def sweep_lines(self, sweep: Dict) -> List[str]:
        rows = sweep.get('rows', [])
        lines = [
            "🎯 АНАЛИЗ ЧУВСТВИТЕЛЬНОСТИ ПО GAMMA",
            "=" * 60,
            f"📅 Дата: {datetime.now().strftime('%Y-%m-%d %H:%M')}",
            f"Команда: {sweep.get('command', '-')}, alpha = {_g6(sweep.get('alpha'))}",
            "",
            f"{'Gamma':>8} {'p':>12} {'нижняя':>12} {'верхняя':>12}",
        ]
        for row in rows:
            lines.append(f"{_g6(row.get('gamma')):>8} {_g6(row.get('p_value')):>12} "
                         f"{_g6(row.get('lower')):>12} {_g6(row.get('upper')):>12}")
        lines.append("")
        crossing = sweep.get('p_crossing_gamma')
        if crossing is not None:
            lines.append(f"⚠️ p > alpha начиная с Gamma = {_g6(crossing)}")
        elif 'p_crossing_gamma' in sweep:
            lines.append("✅ p <= alpha на всей сетке Gamma")
        zero = sweep.get('ci_crosses_zero_gamma')
        if zero is not None:
            lines.append(f"⚠️ Нижняя граница ДИ <= 0 начиная с Gamma = {_g6(zero)}")
        return lines

    def result_lines(self, payload: Dict) -> List[str]:
        lines = ["📊 РЕЗУЛЬТАТ", "=" * 60]
        for key, value in payload.items():
            if key in ('manifest', 'per_set', 'rows', 'records') or isinstance(value, dict):
                continue
            if isinstance(value, list):
                if value:
                    lines.append(f"   {key}:")
                    lines.extend(f"      - {item}" for item in value)
                continue
            lines.append(f"   {key}: {_g6(value)}")
        return lines

    def print_report(self, result: Any):
        payload = result_payload(result)
        lines = self.sweep_lines(payload) if 'rows' in payload else self.result_lines(payload)
        print("\n".join(lines))

    def save_text_report(self, result: Any, name: str = "sensitivity_report.txt") -> Path:
        payload = result_payload(result)
        lines = self.sweep_lines(payload) if 'rows' in payload else self.result_lines(payload)
        self.results_dir.mkdir(parents=True, exist_ok=True)
        path = self.results_dir / name
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        return path
