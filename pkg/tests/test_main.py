#!/usr/bin/env python3
"""
コマンドラインのテストモジュール

テスト項目:
- 各サブコマンドの終了コード（合格 0・不合格 1・引数/ファイルエラー 2・特異計量 3）
- 標準出力のJSON文書とスキーマ
- 書き出したファイル（錐の補助JSON、持ち上げた場、軌道TSV）の再利用
- 人間向けの表形式出力と --output
"""

import unittest
import sys
import os
import io
import json
import logging
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

# プロジェクトルートをパスに追加
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from main import EXIT_FAIL, EXIT_PASS, EXIT_SINGULAR, EXIT_USAGE, run  # noqa: E402
from modules.reports import validate_document  # noqa: E402

# テスト用に標本点を減らす
_FAST = ["--points", "20", "--lattice", "3", "--log-level", "ERROR"]

_SINGULAR_METRIC = """\
dim = 2
coord 0 = x
coord 1 = y
domain 0 = -1 1
domain 1 = -1 1
g 0 0 = x^2
g 1 1 = 1
"""

_CONSTANT_SOLUTION = """\
kind = sinyukov
a 0 0 = 1
"""


class CliTestBase(unittest.TestCase):
    """作業ディレクトリにカタログ項目を書き出す基底クラス"""

    def setUp(self):
        """テスト前の準備"""
        logging.getLogger().setLevel(logging.WARNING)
        self.tmp = tempfile.TemporaryDirectory()
        self.work = Path(self.tmp.name)
        for name in ("flat2", "sphere2", "conformal2", "flat-vn0"):
            code, _ = self.invoke("catalog", "emit", name, str(self.work))
            self.assertEqual(code, EXIT_PASS)

    def tearDown(self):
        """テスト後の片付け"""
        self.tmp.cleanup()

    def path(self, name: str) -> str:
        return str(self.work / name)

    def invoke(self, *argv: str):
        """run() を実行して (終了コード, 標準出力) を返す"""
        out = io.StringIO()
        with redirect_stdout(out), redirect_stderr(io.StringIO()):
            code = run(list(argv) + _FAST)
        return code, out.getvalue()

    def invoke_json(self, *argv: str):
        code, text = self.invoke(*argv)
        document = json.loads(text)
        validate_document(document)
        return code, document


class TestVerifyCommands(CliTestBase):
    """verify サブコマンドのテスト"""

    def test_concircular(self):
        """共円場の検証と分類"""
        code, doc = self.invoke_json("verify", "concircular", "--metric", self.path("sphere2.metric"),
                                     "--field", self.path("sphere2.conc"))
        self.assertEqual(code, EXIT_PASS)
        self.assertTrue(doc["pass"])
        self.assertEqual(doc["command"], "verify concircular")
        self.assertEqual(doc["extras"]["classification"]["class"], "basic")

    def test_vnk(self):
        """V_n(K) の検証"""
        code, doc = self.invoke_json("verify", "vnk", "--metric", self.path("sphere2.metric"),
                                     "--field", self.path("sphere2.sin"))
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["extras"]["K"], -1.0)
        self.assertEqual([b["equation"] for b in doc["reports"][0]["blocks"]], ["vnk-lambda", "vnk-mu"])

    def test_square_alias(self):
        """corollary1 は square の別名"""
        code, doc = self.invoke_json("verify", "corollary1", "--metric", self.path("sphere2.metric"),
                                     "--field", self.path("sphere2.square"), "--e", "1")
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["command"], "verify square")

    def test_square_selects_constant(self):
        """e を省略すると総当たりで選ぶ"""
        code, doc = self.invoke_json("verify", "square", "--metric", self.path("sphere2.metric"),
                                     "--field", self.path("sphere2.square"))
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["extras"]["e"], 1)

    def test_levicivita_failure(self):
        """測地的に同値でない計量は不合格（終了コード 1、文書は出力）"""
        code, doc = self.invoke_json("verify", "levicivita", "--g", self.path("flat2.metric"),
                                     "--gbar", self.path("conformal2.metric"))
        self.assertEqual(code, EXIT_FAIL)
        self.assertFalse(doc["pass"])

    def test_oracle_entry(self):
        """カタログ項目の差分参照"""
        code, doc = self.invoke_json("verify", "oracle", "--entry", "sphere2")
        self.assertEqual(code, EXIT_PASS)
        self.assertIn("sphere2.conc:rho", doc["extras"]["fields"])
        self.assertEqual([r["equation"] for r in doc["reports"]], ["fd-oracle", "metric-consistency"])
        consistency = doc["reports"][1]
        self.assertEqual([b["equation"] for b in consistency["blocks"]], ["metricity", "inverse-consistency"])
        self.assertTrue(consistency["pass"])

    def test_wrong_field_kind(self):
        """kind が合わない場ファイルは終了コード 2"""
        code, _ = self.invoke("verify", "vnk", "--metric", self.path("sphere2.metric"),
                              "--field", self.path("sphere2.conc"))
        self.assertEqual(code, EXIT_USAGE)

    def test_singular_metric(self):
        """特異な計量に当たると終了コード 3 で、その点を不合格レポートに残す"""
        metric = self.work / "singular.metric"
        metric.write_text(_SINGULAR_METRIC, encoding="utf-8")
        solution = self.work / "constant.sin"
        solution.write_text(_CONSTANT_SOLUTION, encoding="utf-8")
        code, doc = self.invoke_json("verify", "sinyukov", "--metric", str(metric), "--field", str(solution))
        self.assertEqual(code, EXIT_SINGULAR)
        self.assertFalse(doc["pass"])
        self.assertEqual(doc["command"], "verify sinyukov")
        report = doc["reports"][0]
        self.assertEqual(report["equation"], "singular-metric")
        self.assertFalse(report["pass"])
        self.assertEqual(len(report["worst_point"]), 2)
        self.assertEqual(report["worst_point"][0], 0.0)
        self.assertEqual(report["details"]["determinant"], 0.0)
        self.assertIn("error", doc["extras"])

    def test_singular_metric_human_output(self):
        """特異点のレポートは --output にも書き出す"""
        metric = self.work / "singular.metric"
        metric.write_text(_SINGULAR_METRIC, encoding="utf-8")
        solution = self.work / "constant.sin"
        solution.write_text(_CONSTANT_SOLUTION, encoding="utf-8")
        out = self.work / "singular.txt"
        code, text = self.invoke("verify", "sinyukov", "--metric", str(metric), "--field", str(solution),
                                 "--human", "--output", str(out))
        self.assertEqual(code, EXIT_SINGULAR)
        self.assertEqual(text, "")
        self.assertIn("singular-metric", out.read_text(encoding="utf-8"))


class TestUsageErrors(CliTestBase):
    """引数・ファイルエラーのテスト"""

    def test_missing_file(self):
        """存在しないファイル"""
        code, text = self.invoke("verify", "sinyukov", "--metric", self.path("none.metric"),
                                 "--field", self.path("sphere2.sin"))
        self.assertEqual(code, EXIT_USAGE)
        self.assertEqual(text, "")

    def test_missing_subcommand(self):
        """サブコマンドがない"""
        self.assertEqual(self.invoke()[0], EXIT_USAGE)
        self.assertEqual(self.invoke("verify")[0], EXIT_USAGE)

    def test_unknown_tolerance(self):
        """未知の検証名の --tol"""
        code, _ = self.invoke("verify", "sinyukov", "--metric", self.path("sphere2.metric"),
                              "--field", self.path("sphere2.sin"), "--tol", "nonsense=1e-3")
        self.assertEqual(code, EXIT_USAGE)

    def test_tolerance_override(self):
        """--tol で許容誤差を差し替える"""
        code, doc = self.invoke_json("verify", "sinyukov", "--metric", self.path("sphere2.metric"),
                                     "--field", self.path("sphere2.sin"), "--tol", "sinyukov=0.5")
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["reports"][0]["tolerance"], 0.5)

    def test_unknown_catalog_entry(self):
        """カタログにない項目"""
        self.assertEqual(self.invoke("catalog", "emit", "torus2", str(self.work))[0], EXIT_USAGE)


class TestConeCommands(CliTestBase):
    """cone サブコマンドのテスト"""

    def test_build_lift_and_check(self):
        """錐を作り、持ち上げた場をファイル経由で再検証"""
        cone_metric = self.path("sphere-cone.metric")
        code, doc = self.invoke_json("cone", "build", "--metric", self.path("sphere2.metric"), "--K", "-1",
                                     "--out", cone_metric)
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["extras"]["dim"], 3)
        sidecar = self.work / "sphere-cone.cone.json"
        self.assertEqual(json.loads(sidecar.read_text(encoding="utf-8"))["base"], "sphere2.metric")

        lifted = self.path("conc2.lifted")
        code, _ = self.invoke_json("cone", "lift-field", "--cone", str(sidecar),
                                   "--field", self.path("sphere2.conc2"), "--out", lifted)
        self.assertEqual(code, EXIT_PASS)
        code, doc = self.invoke_json("cone", "check-parallel", "--cone", str(sidecar), "--field", lifted)
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["reports"][0]["equation"], "parallel-covector")

        code, _ = self.invoke_json("cone", "check-convergent", "--cone", str(sidecar), "--expect", "negative")
        self.assertEqual(code, EXIT_PASS)
        code, _ = self.invoke_json("cone", "check-convergent", "--cone", str(sidecar), "--expect", "positive")
        self.assertEqual(code, EXIT_FAIL)

    def test_lift_solution(self):
        """解の持ち上げ"""
        self.invoke_json("cone", "build", "--metric", self.path("sphere2.metric"), "--K", "-1",
                         "--out", self.path("c.metric"))
        code, doc = self.invoke_json("cone", "lift-solution", "--cone", self.path("c.cone.json"),
                                     "--field", self.path("sphere2.square"))
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["reports"][0]["equation"], "parallel-bilinear")


class TestOtherCommands(CliTestBase):
    """jordan・geodesic・fields・catalog サブコマンドのテスト"""

    def test_jordan_multiply(self):
        """積の閉性"""
        code, doc = self.invoke_json("jordan", "multiply", "--metric", self.path("sphere2.metric"),
                                     "--first", self.path("sphere2.sin"), "--second", self.path("sphere2.square"))
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["reports"][0]["equation"], "closure")
        self.assertEqual(doc["extras"]["product"], "(sphere2.sin∘sphere2.square)")

    def test_jordan_axioms_with_unit(self):
        """単位元を含めた公理の検証"""
        code, doc = self.invoke_json("jordan", "check-axioms", "--metric", self.path("sphere2.metric"),
                                     "--element", self.path("sphere2.square"), "--with-unit")
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["extras"]["elements"], ["unit", "sphere2.square"])

    def test_jordan_ideal(self):
        """共円場3つから生成される部分空間"""
        code, doc = self.invoke_json("jordan", "check-ideal", "--metric", self.path("sphere2.metric"),
                                     "--conc", self.path("sphere2.conc"), self.path("sphere2.conc2"),
                                     self.path("sphere2.conc3"))
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(len(doc["extras"]["F"]), 3)

    def test_geodesic_integrate(self):
        """測地線のTSV出力"""
        out = self.work / "traj" / "flat.tsv"
        code, doc = self.invoke_json("geodesic", "integrate", "--metric", self.path("flat2.metric"),
                                     "--v0", "0.1", "0.2", "--steps", "50", "--dt", "0.01", "--out", str(out))
        self.assertEqual(code, EXIT_PASS)
        self.assertFalse(doc["extras"]["truncated"])
        lines = out.read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(lines), 51)
        self.assertEqual(len(lines[0].split("\t")), 5)

    def test_geodesic_wrong_point_dimension(self):
        """初期点の成分数が次元と異なる"""
        code, _ = self.invoke("geodesic", "map-check", "--g", self.path("flat2.metric"),
                              "--gbar", self.path("conformal2.metric"), "--v0", "1", "0", "0")
        self.assertEqual(code, EXIT_USAGE)

    def test_build_sequence(self):
        """V_n(0) の平行余ベクトル列"""
        code, doc = self.invoke_json("fields", "build-sequence", "--metric", self.path("flat-vn0.metric"),
                                     "--solution", self.path("flat-vn0.sin"), "--covector", self.path("flat-vn0.w"))
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["extras"]["length"], 2)

    def test_catalog_list(self):
        """項目の一覧"""
        code, doc = self.invoke_json("catalog", "list")
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["reports"], [])
        self.assertIn("klein2", doc["extras"]["entries"])

    def test_catalog_check(self):
        """項目の自己検証"""
        code, doc = self.invoke_json("catalog", "check", "flat2", "conformal2")
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(doc["extras"]["entries"], {"flat2": True, "conformal2": True})

    def test_human_output_to_file(self):
        """表形式を --output に書き出す"""
        out = self.work / "report.txt"
        code, text = self.invoke("verify", "sinyukov", "--metric", self.path("sphere2.metric"),
                                 "--field", self.path("sphere2.sin"), "--human", "--output", str(out))
        self.assertEqual(code, EXIT_PASS)
        self.assertEqual(text, "")
        written = out.read_text(encoding="utf-8")
        self.assertIn("result : PASS", written)
        self.assertIn("sinyukov", written)


def run_all_tests():
    """全テストの実行"""
    print("コマンドライン テスト実行")
    print("=" * 50)

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    suite.addTests(loader.loadTestsFromTestCase(TestVerifyCommands))
    suite.addTests(loader.loadTestsFromTestCase(TestUsageErrors))
    suite.addTests(loader.loadTestsFromTestCase(TestConeCommands))
    suite.addTests(loader.loadTestsFromTestCase(TestOtherCommands))

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
