#!/usr/bin/env python3
"""
錐空間モジュールのテストモジュール

テスト項目:
- 錐の構成（K = 0 の拒否、座標名、補助JSON）
- 逆計量の閉形式とクリストッフェル記号の閉形式
- 収束場 ∂_0 の検証（負ノルム・正ノルム）
- 共円場と V_n(K) 解の持ち上げと平行性
- 持ち上げの前提条件（K の不一致、特殊でない場）
"""

import unittest
import sys
import os
import logging
import math
from dataclasses import replace

import numpy as np

# プロジェクトルートをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from modules.catalog import get_entry  # noqa: E402
from modules.cone import (  # noqa: E402
    ConeError,
    build_cone,
    check_cone,
    check_convergent_field,
    check_parallel_bilinear,
    check_parallel_covector,
    cone_christoffel_oracle,
    lift_concircular,
    lift_solution,
)
from modules.config import RunConfig  # noqa: E402
from modules.fields import PreconditionError  # noqa: E402
from modules.geometry import BilinearField, build_sample_grid, create_metric_chart  # noqa: E402

SMALL = RunConfig(random_points=20, lattice_per_axis=3)


class TestConeConstruction(unittest.TestCase):
    """錐の構成のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.sphere = get_entry("sphere2").chart()
        self.hyperbolic = get_entry("hyperbolic2").chart()

    def test_zero_K_is_rejected(self):
        """K = 0 では錐を作れない"""
        with self.assertRaises(ConeError):
            build_cone(self.sphere, 0.0)

    def test_dimension_and_coordinate(self):
        """次元と追加座標"""
        cone = build_cone(self.sphere, -1.0)
        self.assertEqual(cone.dim, 3)
        self.assertEqual(cone.chart.coordinates, ("x0", "theta", "phi"))
        self.assertEqual(cone.sidecar("sphere2.metric")["base"], "sphere2.metric")

    def test_coordinate_name_collision(self):
        """底の座標に x0 があれば別名を使う"""
        base = create_metric_chart(["x0", "y"], [(-1, 1), (-1, 1)], [["1", "0"], ["0", "1"]])
        cone = build_cone(base, 1.0)
        self.assertEqual(cone.x0, "x0_")

    def test_metric_blocks(self):
        """G = e^{2Kx⁰}·diag(-1, g/K)"""
        cone = build_cone(self.sphere, -1.0)
        p = [0.2, 1.1, 0.4]
        G = cone.chart.metric_at(p)
        factor = math.exp(-0.4)
        self.assertAlmostEqual(G[0, 0], -factor, places=14)
        self.assertAlmostEqual(G[2, 2], -factor * math.sin(1.1) ** 2, places=14)
        self.assertEqual(G[0, 1], 0.0)
        self.assertLess(cone.metric_block_check(p), 1e-14)

    def test_inverse_closed_form(self):
        """逆計量の閉形式"""
        cone = build_cone(self.hyperbolic, 1.0)
        p = [-0.3, 0.9, 1.0]
        np.testing.assert_allclose(cone.inverse_closed_form(p), np.linalg.inv(cone.chart.metric_at(p)),
                                   rtol=1e-12)

    def test_christoffel_closed_forms(self):
        """錐のクリストッフェル記号の閉形式"""
        cone = build_cone(self.hyperbolic, 1.0)
        oracle = cone_christoffel_oracle(cone, [0.1, 1.3, -0.5])
        for key in ("gamma_000", "gamma_00j", "gamma_0ij", "gamma_kij", "mixed", "mixed_unit_scaled"):
            self.assertLess(abs(oracle[key]), 1e-12, key)

    def test_unit_scaled_mixed_block_differs_for_negative_K(self):
        """K = -1 では Γ̃^i_0j = -δ^i_j となる"""
        cone = build_cone(self.sphere, -1.0)
        oracle = cone_christoffel_oracle(cone, [0.1, 1.3, -0.5])
        self.assertLess(abs(oracle["mixed"]), 1e-12)
        self.assertAlmostEqual(oracle["mixed_unit_scaled"], 2.0, places=12)

    def test_check_cone(self):
        """錐の検証レポート"""
        for base, K in ((self.sphere, -1.0), (self.hyperbolic, 1.0)):
            cone = build_cone(base, K)
            report = check_cone(cone, build_sample_grid(cone.chart, SMALL), SMALL)
            self.assertTrue(report.passed, report.max)
            self.assertEqual(report.details["K"], K)
            inverse = report.block("cone-inverse")
            self.assertEqual(inverse.tolerance, 1e-12)
            self.assertTrue(inverse.passed, inverse.max)

    def test_wrong_grid_dimension(self):
        """底の標本点では錐を検証できない"""
        cone = build_cone(self.sphere, -1.0)
        with self.assertRaises(ConeError):
            check_cone(cone, build_sample_grid(self.sphere, SMALL), SMALL)


class TestConvergentField(unittest.TestCase):
    """収束場のテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.sphere = get_entry("sphere2").chart()

    def test_negative_norm_cone(self):
        """負ノルム錐では G(∂0, ∂0) < 0"""
        cone = build_cone(self.sphere, -1.0)
        grid = build_sample_grid(cone.chart, SMALL)
        report = check_convergent_field(cone, grid, SMALL)
        self.assertTrue(report.passed, report.max)
        self.assertEqual(report.details["expected_norm"], "negative")

    def test_positive_norm_cone(self):
        """正ノルム錐では符号が反転する"""
        cone = build_cone(self.sphere, -1.0, positive_norm=True)
        grid = build_sample_grid(cone.chart, SMALL)
        self.assertTrue(check_convergent_field(cone, grid, SMALL).passed)
        self.assertFalse(check_convergent_field(cone, grid, SMALL, expect_negative=True).passed)


class TestLifts(unittest.TestCase):
    """持ち上げのテスト"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.entry = get_entry("sphere2")
        self.sphere = self.entry.chart()
        self.cone = build_cone(self.sphere, -1.0)
        self.base_grid = build_sample_grid(self.sphere, SMALL)
        self.cone_grid = build_sample_grid(self.cone.chart, SMALL)

    def test_lifted_concircular_is_parallel(self):
        """特殊共円場の持ち上げは平行"""
        candidate = self.entry.field_file("sphere2.conc2", 2).value
        lifted = lift_concircular(self.cone, candidate, self.base_grid, SMALL)
        report = check_parallel_covector(self.cone, lifted, self.cone_grid, SMALL)
        self.assertTrue(report.passed, report.max)
        rho, phi = lifted.unlift_at([0.3, 1.0, 0.5])
        self.assertAlmostEqual(rho, -math.sin(1.0) * math.cos(0.5), places=13)
        self.assertAlmostEqual(phi[0], math.cos(1.0) * math.cos(0.5), places=13)

    def test_lifted_solution_is_parallel(self):
        """V_n(K) 解の持ち上げは平行"""
        for filename in ("sphere2.sin", "sphere2.square"):
            sol = self.entry.field_file(filename, 2).value
            lifted = lift_solution(self.cone, sol, self.base_grid, SMALL)
            report = check_parallel_bilinear(self.cone, lifted, self.cone_grid, SMALL)
            self.assertTrue(report.passed, f"{filename}: {report.max}")
        a, lam, mu = lifted.unlift_at([-0.2, 0.8, 0.1])
        self.assertAlmostEqual(mu, math.cos(0.8) ** 2 - math.sin(0.8) ** 2, places=13)
        self.assertAlmostEqual(a[1, 1], -math.sin(0.8) ** 2, places=13)

    def test_non_parallel_form(self):
        """錐の計量と無関係な形式は平行でない"""
        form = BilinearField([["1", "0", "0"], ["0", "theta", "0"], ["0", "0", "1"]])
        report = check_parallel_bilinear(self.cone, form, self.cone_grid, SMALL)
        self.assertFalse(report.passed)

    def test_K_mismatch(self):
        """共円場の K と錐の K が異なる"""
        candidate = self.entry.field_file("sphere2.conc", 2).value
        other = build_cone(self.sphere, 1.0)
        with self.assertRaises(ConeError):
            lift_concircular(other, candidate, self.base_grid, SMALL)

    def test_non_special_field(self):
        """∇ρ = Kφ が成り立たなければ前提条件エラー"""
        candidate = replace(self.entry.field_file("sphere2.conc", 2).value, K=None)
        other = build_cone(self.sphere, 1.0)
        with self.assertRaises(PreconditionError) as ctx:
            lift_concircular(other, candidate, self.base_grid, SMALL)
        self.assertEqual(ctx.exception.equation, "special")

    def test_solution_with_wrong_K(self):
        """V_n(K) が成り立たない解は持ち上げられない"""
        sol = replace(self.entry.field_file("sphere2.sin", 2).value, K=None)
        other = build_cone(self.sphere, 1.0)
        with self.assertRaises(PreconditionError):
            lift_solution(other, sol, self.base_grid, SMALL)


def run_all_tests():
    """全テストの実行"""
    print("錐空間モジュール テスト実行")
    print("=" * 50)

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    suite.addTests(loader.loadTestsFromTestCase(TestConeConstruction))
    suite.addTests(loader.loadTestsFromTestCase(TestConvergentField))
    suite.addTests(loader.loadTestsFromTestCase(TestLifts))

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
