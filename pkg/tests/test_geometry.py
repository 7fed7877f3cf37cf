#!/usr/bin/env python3
"""
計量チャート・局所幾何モジュールのテストモジュール

テスト項目:
- 計量チャートの入力検証（次元・対称性・未束縛変数）
- 逆計量とクリストッフェル記号（球面の解析解と比較）
- 特異な計量の検出
- 共変微分と添字の上げ下げ
- 標本格子の決定性と内側余白
- 線積分によるポテンシャル
- 測地線の積分（直線・エネルギー保存・領域外での打ち切り・TSV出力）
- 測地的写像の確認（同値な組は合格、共形変形は不合格）
- 記号微分と中心差分の照合
- 計量の整合性（∇g = 0 と g·g^{-1} = I を全標本点で確認）
"""

import unittest
import sys
import os
import logging
import math

import numpy as np

# プロジェクトルートをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from modules.catalog import get_entry, list_entries  # noqa: E402
from modules.config import RunConfig  # noqa: E402
from modules.dsl import UnboundVariableError  # noqa: E402
from modules.geometry import (  # noqa: E402
    CovectorField,
    GeometryError,
    SamplePolicy,
    ScalarField,
    SingularMetricError,
    build_sample_grid,
    check_metric_consistency,
    christoffel,
    covariant_derivative_covector,
    create_metric_chart,
    exterior_derivative,
    finite_difference_report,
    geodesic_energy_report,
    geodesic_map_check,
    grid_from_points,
    integrate_geodesic,
    inverse_metric,
    lower_index,
    potential_along_segment,
    raise_index,
)

SMALL = RunConfig(random_points=20, lattice_per_axis=3)


class TestMetricChart(unittest.TestCase):
    """計量チャートのテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.sphere = get_entry("sphere2").chart()

    def test_dimension_must_be_at_least_two(self):
        """1次元は受け付けない"""
        with self.assertRaises(GeometryError):
            create_metric_chart(["x"], [(0.0, 1.0)], [["1"]])

    def test_asymmetric_metric(self):
        """非対称な計量"""
        with self.assertRaises(GeometryError):
            create_metric_chart(["x", "y"], [(0, 1), (0, 1)], [["1", "x"], ["y", "1"]])

    def test_unbound_variable_in_metric(self):
        """未束縛の変数"""
        with self.assertRaises(UnboundVariableError):
            create_metric_chart(["x", "y"], [(0, 1), (0, 1)], [["1", "0"], ["0", "w"]])

    def test_constants_are_bound(self):
        """名前付き定数を使った計量"""
        chart = create_metric_chart(["x", "y"], [(0, 1), (0, 1)], [["c", "0"], ["0", "1"]], {"c": 4.0})
        np.testing.assert_allclose(chart.metric_at([0.5, 0.5]), [[4.0, 0.0], [0.0, 1.0]])

    def test_inverse_metric(self):
        """逆計量"""
        theta = 1.1
        ginv = inverse_metric(self.sphere, [theta, 0.3])
        np.testing.assert_allclose(ginv, [[1.0, 0.0], [0.0, 1.0 / math.sin(theta) ** 2]], rtol=1e-14)

    def test_sphere_christoffel(self):
        """球面のクリストッフェル記号"""
        theta = 0.9
        gamma = christoffel(self.sphere, [theta, -1.0])
        self.assertAlmostEqual(gamma[0, 1, 1], -math.sin(theta) * math.cos(theta), places=14)
        self.assertAlmostEqual(gamma[1, 0, 1], math.cos(theta) / math.sin(theta), places=14)
        self.assertAlmostEqual(gamma[1, 1, 0], gamma[1, 0, 1], places=15)
        self.assertAlmostEqual(gamma[0, 0, 0], 0.0, places=15)

    def test_singular_metric(self):
        """行列式が0の点"""
        chart = create_metric_chart(["x", "y"], [(-1, 1), (-1, 1)], [["x^2", "0"], ["0", "1"]])
        with self.assertRaises(SingularMetricError):
            chart.local([0.0, 0.2])
        # 特異点以外では問題なく計算できる
        self.assertEqual(chart.local([0.5, 0.2]).inverse[0, 0], 4.0)

    def test_contains_and_center(self):
        """閉領域の判定と中心"""
        self.assertTrue(self.sphere.contains([0.3, 3.0]))
        self.assertFalse(self.sphere.contains([0.29, 0.0]))
        np.testing.assert_allclose(self.sphere.center(), [1.55, 0.0])


class TestTensorOperations(unittest.TestCase):
    """共変微分・添字操作のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.sphere = get_entry("sphere2").chart()

    def test_hessian_of_height_function(self):
        """∇d(cosθ) = -cosθ·g"""
        phi = CovectorField(["-sin(theta)", "0"])
        p = [1.2, 0.4]
        hessian = covariant_derivative_covector(self.sphere, phi, p)
        np.testing.assert_allclose(hessian, -math.cos(1.2) * self.sphere.metric_at(p), atol=1e-14)

    def test_closed_form_has_zero_exterior_derivative(self):
        """完全形式の外微分は0"""
        phi = CovectorField(["cos(theta)*cos(phi)", "-sin(theta)*sin(phi)"])
        np.testing.assert_allclose(exterior_derivative(self.sphere, phi, [0.7, 0.2]), 0.0, atol=1e-15)

    def test_raise_then_lower(self):
        """添字の上げ下げは互いに逆"""
        p = [0.8, 1.0]
        omega = np.array([0.3, -1.2])
        np.testing.assert_allclose(lower_index(self.sphere, raise_index(self.sphere, omega, p), p), omega,
                                   rtol=1e-14)

    def test_scalar_field_partials(self):
        """スカラー場の偏微分の形"""
        values, partials = ScalarField("sin(theta)*phi").evaluate(self.sphere, [0.5, 2.0])
        self.assertAlmostEqual(values, math.sin(0.5) * 2.0, places=15)
        self.assertEqual(partials.shape, (2,))
        self.assertAlmostEqual(partials[0], math.cos(0.5) * 2.0, places=15)


class TestSampleGrid(unittest.TestCase):
    """標本格子のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.chart = get_entry("flat2").chart()

    def test_deterministic(self):
        """同じシードなら同じ点列"""
        a = build_sample_grid(self.chart, SMALL)
        b = build_sample_grid(self.chart, SMALL)
        np.testing.assert_array_equal(a.points, b.points)
        c = build_sample_grid(self.chart, RunConfig(seed=7, random_points=20, lattice_per_axis=3))
        self.assertFalse(np.array_equal(a.points, c.points))

    def test_size_and_inset(self):
        """点数と内側余白"""
        grid = build_sample_grid(self.chart, SMALL)
        self.assertEqual(len(grid), 20 + 3 * 3)
        inner = 0.6 - 0.05 * 1.2
        self.assertTrue(np.all(np.abs(grid.points) <= inner + 1e-12))

    def test_policies(self):
        """ランダムのみ・格子のみ"""
        self.assertEqual(len(build_sample_grid(self.chart, SMALL, SamplePolicy.RANDOM)), 20)
        self.assertEqual(len(build_sample_grid(self.chart, SMALL, SamplePolicy.LATTICE)), 9)

    def test_grid_from_points(self):
        """任意の点列"""
        grid = grid_from_points([0.1, 0.2])
        self.assertEqual(grid.points.shape, (1, 2))


class TestGeodesics(unittest.TestCase):
    """測地線と線積分のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.flat = get_entry("flat2").chart()
        self.sphere = get_entry("sphere2").chart()

    def test_potential_along_segment(self):
        """φ = d(r²/2) の線積分"""
        phi = CovectorField(["x", "y"])
        value = potential_along_segment(self.flat, phi, [0.0, 0.0], [0.3, 0.4])
        self.assertAlmostEqual(value, 0.125, places=14)

    def test_flat_geodesic_is_straight(self):
        """平面の測地線は直線"""
        traj = integrate_geodesic(self.flat, [0.0, 0.0], [0.1, 0.2], steps=100, dt=0.01)
        self.assertFalse(traj.truncated)
        self.assertEqual(traj.steps_taken, 100)
        np.testing.assert_allclose(traj.positions[-1], [0.1, 0.2], atol=1e-12)

    def test_energy_is_conserved(self):
        """球面上での g(ẋ, ẋ) の保存"""
        traj = integrate_geodesic(self.sphere, [1.0, 0.0], [0.3, 0.5], steps=200, dt=0.01)
        report = geodesic_energy_report(self.sphere, traj, 1e-6)
        self.assertTrue(report.passed, report.max)
        self.assertEqual(report.details["steps"], 200)

    def test_truncation_when_leaving_domain(self):
        """領域外に出たら打ち切り"""
        traj = integrate_geodesic(self.flat, [0.5, 0.0], [1.0, 0.0], steps=1000, dt=0.01)
        self.assertTrue(traj.truncated)
        self.assertLess(traj.steps_taken, 1000)
        self.assertTrue(all(self.flat.contains(x) for x in traj.positions))
        self.assertEqual(traj.requested_steps, 1000)

    def test_tsv_output(self):
        """TSV出力の行数と列数"""
        traj = integrate_geodesic(self.flat, [0.0, 0.0], [0.1, 0.0], steps=5, dt=0.1)
        lines = traj.to_tsv().strip().split("\n")
        self.assertEqual(len(lines), 6)
        self.assertEqual(len(lines[0].split("\t")), 1 + 2 + 2)

    def test_start_outside_domain(self):
        """初期点が領域外"""
        with self.assertRaises(GeometryError):
            integrate_geodesic(self.flat, [0.9, 0.0], [1.0, 0.0], steps=10, dt=0.01)

    def test_klein_geodesics_are_flat_geodesics(self):
        """円板モデルと平面は測地的に同値"""
        klein = get_entry("klein2").chart()
        report = geodesic_map_check(self.flat, klein, [-0.5, -0.2], [0.8, 0.3])
        self.assertTrue(report.passed, report.max)

    def test_conformal_deformation_is_rejected(self):
        """共形変形 e^x δ は測地的写像ではない"""
        conformal = get_entry("conformal2").chart()
        report = geodesic_map_check(self.flat, conformal, [-0.5, -0.2], [0.8, 0.3])
        self.assertFalse(report.passed)
        self.assertGreater(report.max, 1e-2)


class TestFiniteDifferenceOracle(unittest.TestCase):
    """記号微分と中心差分の照合テスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)

    def test_sphere_metric_and_field(self):
        """球面の計量と共円場"""
        entry = get_entry("sphere2")
        chart = entry.chart()
        candidate = entry.field_file("sphere2.conc", 2).value
        grid = build_sample_grid(chart, SMALL)
        report = finite_difference_report(chart, grid, 1e-6, fields=[("phi", candidate.phi), ("rho", candidate.rho)])
        self.assertTrue(report.passed, report.max)
        self.assertEqual(len(report.blocks), 3)

    def test_klein_metric(self):
        """円板モデルの計量（有理式）"""
        chart = get_entry("klein2").chart()
        report = finite_difference_report(chart, build_sample_grid(chart, SMALL), 1e-6)
        self.assertTrue(report.passed, report.max)


class TestMetricConsistency(unittest.TestCase):
    """計量の整合性のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)

    def test_catalog_metrics(self):
        """全カタログ計量で ∇g = 0 と g·g^{-1} = I"""
        for name in list_entries():
            chart = get_entry(name).chart()
            report = check_metric_consistency(chart, build_sample_grid(chart, SMALL), SMALL)
            self.assertTrue(report.passed, f"{name}: {report.max}")
            metricity = report.block("metricity")
            inverse = report.block("inverse-consistency")
            self.assertEqual(metricity.tolerance, 1e-10)
            self.assertEqual(inverse.tolerance, 1e-12)
            self.assertEqual(inverse.points, len(build_sample_grid(chart, SMALL)))

    def test_default_grid(self):
        """既定の標本点数でも合格"""
        chart = get_entry("klein2").chart()
        grid = build_sample_grid(chart, RunConfig())
        report = check_metric_consistency(chart, grid)
        self.assertTrue(report.passed, report.max)
        self.assertEqual(report.points, len(grid))

    def test_point_array(self):
        """標本点の配列も受け付ける"""
        chart = create_metric_chart(["theta", "phi"], [(0.3, 2.8), (-3.0, 3.0)],
                                    [["1", "0"], ["0", "sin(theta)^2"]])
        report = check_metric_consistency(chart, np.array([[0.5, 0.0], [1.5, 1.0]]), SMALL)
        self.assertTrue(report.passed, report.max)
        self.assertEqual(report.points, 2)

    def test_singular_point(self):
        """特異な点では例外"""
        chart = create_metric_chart(["x", "y"], [(-1.0, 1.0), (-1.0, 1.0)], [["x^2", "0"], ["0", "1"]])
        with self.assertRaises(SingularMetricError):
            check_metric_consistency(chart, np.array([[0.0, 0.5]]), SMALL)

    def test_workers_share_local_cache(self):
        """複数スレッドで同じチャートを評価しても結果は直列と同じ"""
        serial_chart = get_entry("sphere2").chart()
        threaded_chart = get_entry("sphere2").chart()
        serial_config = RunConfig(random_points=400, lattice_per_axis=3)
        threaded_config = RunConfig(random_points=400, lattice_per_axis=3, workers=8)
        grid = build_sample_grid(serial_chart, serial_config)
        points = np.concatenate([grid.points, grid.points])
        serial = check_metric_consistency(serial_chart, points, serial_config)
        threaded = check_metric_consistency(threaded_chart, points, threaded_config)
        self.assertEqual(serial.to_dict(), threaded.to_dict())
        for p in grid.points[:10]:
            local = threaded_chart.local(p)
            np.testing.assert_array_equal(local.metric, serial_chart.local(p).metric)
            self.assertIs(threaded_chart.local(p), local)


def run_all_tests():
    """全テストの実行"""
    print("計量チャート・局所幾何モジュール テスト実行")
    print("=" * 50)

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    suite.addTests(loader.loadTestsFromTestCase(TestMetricChart))
    suite.addTests(loader.loadTestsFromTestCase(TestTensorOperations))
    suite.addTests(loader.loadTestsFromTestCase(TestSampleGrid))
    suite.addTests(loader.loadTestsFromTestCase(TestGeodesics))
    suite.addTests(loader.loadTestsFromTestCase(TestFiniteDifferenceOracle))
    suite.addTests(loader.loadTestsFromTestCase(TestMetricConsistency))

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
