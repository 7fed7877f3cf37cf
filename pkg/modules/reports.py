#!/usr/bin/env python3
"""
残差レポートモジュール - 検証結果の集計・JSON化・スキーマ検証

各検証は標本点ごとの残差（成分の最大絶対値）を集計し、ResidualReport にまとめます。
複数の方程式からなる検証はブロックを持つ結合レポートになります。

主な機能:
- 標本格子上の残差集計（最大値・平均値・最悪点）
- ブロックの結合（全ブロック合格で合格）
- JSON文書の組み立てとスキーマ検証（jsonschema）
- 人間向けの表形式出力
"""

import json
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import jsonschema

from modules import ConlabError


class ReportError(ConlabError):
    """レポートの組み立て・検証エラー"""
    pass


# JSONで表現できない値の代わりに使う上限値
_NONFINITE_STANDIN = 1.0e308

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "residual_report.schema.json"
DOCUMENT_SCHEMA_ID = "conlab.report/1"


def _finite(value: float) -> float:
    value = float(value)
    if math.isfinite(value):
        return value
    return _NONFINITE_STANDIN


@dataclass
class ResidualReport:
    """1つの検証の残差集計"""
    equation: str                      # 検証名
    max: float                         # 残差の最大値
    mean: float                        # 残差の平均値
    tolerance: float                   # 許容誤差
    points: int                        # 標本点数
    passed: bool                       # 合否
    worst_point: List[float]           # 最大残差の標本点
    blocks: List["ResidualReport"] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """JSON用の辞書に変換"""
        result: Dict[str, Any] = {
            "equation": self.equation,
            "max": _finite(self.max),
            "mean": _finite(self.mean),
            "tolerance": float(self.tolerance),
            "points": int(self.points),
            "pass": bool(self.passed),
            "worst_point": [_finite(x) for x in self.worst_point],
        }
        if self.blocks:
            result["blocks"] = [block.to_dict() for block in self.blocks]
        if self.details:
            result["details"] = _jsonable(self.details)
        return result

    def block(self, equation: str) -> "ResidualReport":
        """名前でブロックを取得"""
        for block in self.blocks:
            if block.equation == equation:
                return block
        raise ReportError(f"ブロックがありません: {equation}")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _finite(value)
    if isinstance(value, ResidualReport):
        return value.to_dict()
    return value


def pointwise_residual(values: Any) -> float:
    """残差成分の最大絶対値（非有限値は無限大）"""
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        return 0.0
    if not np.all(np.isfinite(array)):
        return math.inf
    return float(np.max(np.abs(array)))


def collect_residuals(equation: str,
                      residual_fn: Callable[[np.ndarray], Any],
                      points: np.ndarray,
                      tolerance: float,
                      workers: int = 1,
                      details: Optional[Dict[str, Any]] = None) -> ResidualReport:
    """
    標本点ごとの残差を集計してレポートを作成

    Args:
        equation: 検証名
        residual_fn: 標本点 -> 残差成分
        points: 標本点の配列 (N, n)
        tolerance: 許容誤差
        workers: 並列数（結果の順序は入力順で固定）
        details: 付加情報

    Returns:
        ResidualReport: 集計結果
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        raise ReportError(f"標本点がありません: {equation}")

    def evaluate(p: np.ndarray) -> float:
        return pointwise_residual(residual_fn(p))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            residuals = np.array(list(pool.map(evaluate, points)), dtype=float)
    else:
        residuals = np.array([evaluate(p) for p in points], dtype=float)

    worst = int(np.argmax(residuals))
    maximum = float(residuals[worst])
    mean = float(np.mean(residuals)) if np.all(np.isfinite(residuals)) else math.inf
    report = ResidualReport(
        equation=equation,
        max=maximum,
        mean=mean,
        tolerance=tolerance,
        points=len(points),
        passed=bool(maximum <= tolerance),
        worst_point=[float(x) for x in points[worst]],
        details=dict(details or {}),
    )
    logging.getLogger(__name__).debug(
        f"{equation}: max={maximum:.3e} mean={mean:.3e} tol={tolerance:.1e} "
        f"{'合格' if report.passed else '不合格'}")
    return report


def single_value_report(equation: str, value: float, tolerance: float,
                        point: Sequence[float] = (),
                        details: Optional[Dict[str, Any]] = None) -> ResidualReport:
    """単一の残差値からレポートを作成"""
    value = abs(float(value)) if math.isfinite(value) else math.inf
    return ResidualReport(
        equation=equation, max=value, mean=value, tolerance=tolerance, points=1,
        passed=bool(value <= tolerance), worst_point=[float(x) for x in point],
        details=dict(details or {}),
    )


def combine_reports(equation: str, blocks: Sequence[ResidualReport],
                    details: Optional[Dict[str, Any]] = None) -> ResidualReport:
    """
    複数ブロックを結合したレポート

    全ブロックが合格のとき合格。最悪点は許容誤差に対する比が最大のブロックから取ります。
    """
    if not blocks:
        raise ReportError(f"結合するブロックがありません: {equation}")

    def ratio(block: ResidualReport) -> float:
        return block.max / block.tolerance if block.tolerance > 0 else (math.inf if block.max > 0 else 0.0)

    worst_block = max(blocks, key=ratio)
    return ResidualReport(
        equation=equation,
        max=max(block.max for block in blocks),
        mean=float(np.mean([block.mean for block in blocks])),
        tolerance=max(block.tolerance for block in blocks),
        points=max(block.points for block in blocks),
        passed=all(block.passed for block in blocks),
        worst_point=list(worst_block.worst_point),
        blocks=list(blocks),
        details=dict(details or {}),
    )


def load_schema() -> Dict[str, Any]:
    """レポート文書のJSONスキーマを読み込む"""
    try:
        with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ReportError(f"スキーマを読み込めません: {SCHEMA_PATH}: {e}") from e


def validate_document(document: Dict[str, Any]) -> None:
    """
    レポート文書をスキーマで検証

    Raises:
        ReportError: スキーマ違反
    """
    try:
        jsonschema.validate(instance=document, schema=load_schema())
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path)
        raise ReportError(f"レポートがスキーマに適合しません ({path}): {e.message}") from e


def build_document(command: str, reports: Iterable[ResidualReport],
                   extras: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """CLI出力用のレポート文書を組み立てる"""
    report_list = [r.to_dict() for r in reports]
    document: Dict[str, Any] = {
        "schema": DOCUMENT_SCHEMA_ID,
        "command": command,
        "pass": all(r["pass"] for r in report_list),
        "reports": report_list,
    }
    if extras:
        document["extras"] = _jsonable(extras)
    return document


def dumps_document(document: Dict[str, Any]) -> str:
    """決定的なJSON文字列に変換（キー順固定・NaN禁止）"""
    try:
        return json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    except ValueError as e:
        raise ReportError(f"JSONに変換できません: {e}") from e


def render_human(document: Dict[str, Any]) -> str:
    """人間向けの表形式テキスト"""
    lines = [f"command: {document.get('command', '')}",
             f"result : {'PASS' if document.get('pass') else 'FAIL'}",
             "-" * 72,
             f"{'equation':<32} {'max':>11} {'mean':>11} {'tol':>8}  pass"]

    def emit(report: Dict[str, Any], indent: int) -> None:
        name = ("  " * indent + report["equation"])[:32]
        mark = "✓" if report["pass"] else "✗"
        lines.append(f"{name:<32} {report['max']:>11.3e} {report['mean']:>11.3e} "
                     f"{report['tolerance']:>8.1e}  {mark}")
        for block in report.get("blocks", []):
            emit(block, indent + 1)

    for report in document.get("reports", []):
        emit(report, 0)
    extras = document.get("extras")
    if extras:
        lines.append("-" * 72)
        for key in sorted(extras):
            lines.append(f"{key}: {json.dumps(extras[key], sort_keys=True, ensure_ascii=False)}")
    return "\n".join(lines)
