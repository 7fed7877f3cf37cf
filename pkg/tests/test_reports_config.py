#!/usr/bin/env python3
"""
レポート・設定モジュールのテストモジュール

テスト項目:
- 残差の集計（最大値・平均・最悪点・非有限値・並列評価）
- ブロックの結合と取得
- 文書の組み立て・スキーマ検証・JSON化・表形式
- RunConfig の検証と許容誤差の差し替え
- 環境変数・.env ファイルからの設定読み込み
"""

import unittest
import sys
import os
import json
import logging
import math
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np

# プロジェクトルートをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from modules.config import DEFAULT_TOLERANCES, ConfigError, RunConfig, load_run_config  # noqa: E402
from modules.reports import (  # noqa: E402
    ReportError,
    ResidualReport,
    build_document,
    collect_residuals,
    combine_reports,
    dumps_document,
    pointwise_residual,
    render_human,
    single_value_report,
    validate_document,
)


class TestResiduals(unittest.TestCase):
    """残差集計のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.points = np.array([[0.0, 0.0], [1.0, 0.5], [-0.5, 2.0]])

    def test_collect(self):
        """最大値・平均・最悪点"""
        report = collect_residuals("demo", lambda p: [p[0], -p[1]], self.points, 3.0)
        self.assertEqual(report.max, 2.0)
        self.assertAlmostEqual(report.mean, (0.0 + 1.0 + 2.0) / 3)
        self.assertEqual(report.worst_point, [-0.5, 2.0])
        self.assertEqual(report.points, 3)
        self.assertTrue(report.passed)

    def test_tolerance_boundary(self):
        """許容誤差を超えると不合格"""
        report = collect_residuals("demo", lambda p: p[1], self.points, 1.5)
        self.assertFalse(report.passed)

    def test_nonfinite_residual_fails(self):
        """非有限値を含む残差は不合格"""
        report = collect_residuals("demo", lambda p: math.nan if p[0] > 0 else 0.0, self.points, 1.0)
        self.assertFalse(report.passed)
        self.assertEqual(report.max, math.inf)
        self.assertEqual(pointwise_residual([1.0, math.inf]), math.inf)
        self.assertEqual(pointwise_residual([]), 0.0)

    def test_workers_keep_order(self):
        """並列評価でも結果は同じ"""
        serial = collect_residuals("demo", lambda p: p[0] * p[1], self.points, 1.0)
        parallel = collect_residuals("demo", lambda p: p[0] * p[1], self.points, 1.0, workers=3)
        self.assertEqual(serial.to_dict(), parallel.to_dict())

    def test_empty_points(self):
        """標本点がない"""
        with self.assertRaises(ReportError):
            collect_residuals("demo", lambda p: 0.0, np.zeros((0, 2)), 1.0)

    def test_single_value(self):
        """単一値のレポート"""
        report = single_value_report("one", -0.25, 0.5, point=[1, 2])
        self.assertEqual(report.max, 0.25)
        self.assertTrue(report.passed)
        self.assertEqual(report.worst_point, [1.0, 2.0])


class TestCombine(unittest.TestCase):
    """ブロック結合のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.small = single_value_report("small", 1e-3, 1e-2, point=[0.0])
        self.large = single_value_report("large", 5e-7, 1e-8, point=[1.0])

    def test_combine(self):
        """全ブロック合格で合格、最悪点は許容誤差比が最大のブロック"""
        report = combine_reports("both", [self.small, self.large])
        self.assertFalse(report.passed)
        self.assertEqual(report.max, 1e-3)
        self.assertEqual(report.worst_point, [1.0])
        self.assertIs(report.block("large"), self.large)
        with self.assertRaises(ReportError):
            report.block("missing")

    def test_combine_empty(self):
        """ブロックがない"""
        with self.assertRaises(ReportError):
            combine_reports("none", [])


class TestDocument(unittest.TestCase):
    """文書のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        block = single_value_report("inner", 1e-12, 1e-9, point=[0.5, 0.5])
        self.report = combine_reports("outer", [block], details={"F": np.eye(2), "flag": np.bool_(True)})

    def test_build_and_validate(self):
        """文書の組み立てとスキーマ検証"""
        document = build_document("verify demo", [self.report], {"K": np.float64(-1.0)})
        validate_document(document)
        self.assertTrue(document["pass"])
        self.assertEqual(document["schema"], "conlab.report/1")
        self.assertEqual(document["reports"][0]["details"]["F"], [[1.0, 0.0], [0.0, 1.0]])
        self.assertIs(document["reports"][0]["details"]["flag"], True)
        self.assertEqual(document["extras"]["K"], -1.0)

    def test_nonfinite_values_are_serializable(self):
        """無限大の残差もJSONに書ける"""
        bad = single_value_report("bad", math.inf, 1.0)
        text = dumps_document(build_document("verify demo", [bad]))
        parsed = json.loads(text)
        self.assertFalse(parsed["pass"])
        self.assertEqual(parsed["reports"][0]["max"], 1.0e308)

    def test_schema_violation(self):
        """スキーマに適合しない文書"""
        document = build_document("verify demo", [self.report])
        document["unexpected"] = 1
        with self.assertRaises(ReportError):
            validate_document(document)
        document = build_document("verify demo", [self.report])
        document["reports"][0]["points"] = 0
        with self.assertRaises(ReportError):
            validate_document(document)

    def test_deterministic_text(self):
        """同じ文書は同じ文字列"""
        document = build_document("verify demo", [self.report])
        self.assertEqual(dumps_document(document), dumps_document(json.loads(dumps_document(document))))

    def test_render_human(self):
        """表形式"""
        text = render_human(build_document("verify demo", [self.report], {"e": 1}))
        self.assertIn("result : PASS", text)
        self.assertIn("  inner", text)
        self.assertIn("e: 1", text)


class TestRunConfig(unittest.TestCase):
    """実行設定のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)

    def test_defaults(self):
        """既定値"""
        config = RunConfig()
        self.assertEqual((config.seed, config.random_points, config.lattice_per_axis), (42, 200, 8))
        self.assertEqual(config.tolerance("concircular"), DEFAULT_TOLERANCES["concircular"])

    def test_required_tolerance_bars(self):
        """許容誤差の既定値が要求水準より緩くない"""
        required = {
            "cone-inverse": 1e-12,
            "inverse-consistency": 1e-12,
            "metricity": 1e-10,
            "isomorphism": 1e-9,
            "vn0-sinyukov": 1e-12,
            "vn0-lambda": 1e-12,
            "vn0-mu-constant": 1e-12,
            "cone-mixed-connection": 1e-10,
            "concircular": 1e-9,
            "closure": 1e-8,
            "jordan-identity": 1e-8,
            "levi-civita": 1e-8,
            "geodesic-map": 1e-8,
            "ideal-projection": 1e-7,
            "fd-oracle": 1e-6,
        }
        config = RunConfig()
        for name, bar in required.items():
            self.assertLessEqual(config.tolerance(name), bar, msg=name)

    def test_invalid_values(self):
        """不正な設定値"""
        for kwargs in ({"random_points": -1}, {"random_points": 0, "lattice_per_axis": 0}, {"inset": 0.5},
                       {"workers": 0}, {"quadrature_nodes": 1}, {"tolerances": {"sinyukov": 0.0}}):
            with self.assertRaises(ConfigError, msg=str(kwargs)):
                RunConfig(**kwargs)

    def test_tolerance_lookup(self):
        """許容誤差の取得と差し替え"""
        config = RunConfig()
        changed = config.with_tolerance("sinyukov", 1e-3)
        self.assertEqual(changed.tolerance("sinyukov"), 1e-3)
        self.assertEqual(config.tolerance("sinyukov"), DEFAULT_TOLERANCES["sinyukov"])
        with self.assertRaises(ConfigError):
            config.tolerance("nonsense")
        with self.assertRaises(ConfigError):
            config.with_tolerance("sinyukov", -1.0)

    @patch.dict(os.environ, {"CONLAB_SEED": "7", "CONLAB_LATTICE": "4"})
    def test_environment(self):
        """環境変数と明示的な上書き"""
        with tempfile.TemporaryDirectory() as tmp:
            config = load_run_config(Path(tmp) / "missing.env", workers=None, random_points=10)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.lattice_per_axis, 4)
        self.assertEqual(config.random_points, 10)
        self.assertEqual(config.workers, 1)

    @patch.dict(os.environ, {"CONLAB_WORKERS": "many"})
    def test_environment_not_integer(self):
        """整数でない環境変数"""
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_run_config(Path(tmp) / "missing.env")

    @patch.dict(os.environ, {}, clear=False)
    def test_env_file(self):
        """.env ファイルの読み込み"""
        os.environ.pop("CONLAB_RANDOM_POINTS", None)
        with tempfile.TemporaryDirectory() as tmp:
            env_file = Path(tmp) / ".env"
            env_file.write_text("CONLAB_RANDOM_POINTS=33\n", encoding="utf-8")
            config = load_run_config(env_file)
        self.assertEqual(config.random_points, 33)


def run_all_tests():
    """全テストの実行"""
    print("レポート・設定モジュール テスト実行")
    print("=" * 50)

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    suite.addTests(loader.loadTestsFromTestCase(TestResiduals))
    suite.addTests(loader.loadTestsFromTestCase(TestCombine))
    suite.addTests(loader.loadTestsFromTestCase(TestDocument))
    suite.addTests(loader.loadTestsFromTestCase(TestRunConfig))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    print("\n" + "=" * 50)
    print(f"実行テスト数: {result.testsRun}")
    print(f"失敗: {len(result.failures)}")
    print(f"エラー: {len(result.errors)}")
    return result.wasSuccessful()


if __name__ == "__main__":
    success = run_all_tests()
    if success:
        print("\n✓ 全てのテストが成功しました！")
        exit(0)
    else:
        print("\n✗ 一部のテストが失敗しました。")
        exit(1)
