#!/usr/bin/env python3
"""
錐空間モジュール - V_n(K) 空間上の (n+1) 次元錐計量と持ち上げ

底チャートの計量 g と定数 K ≠ 0 から、x⁰ を先頭に加えた錐計量
G = e^{2Kx⁰}·diag(−1, g/K) を式として構成します。
特殊共円場とシニュコフ解を錐に持ち上げ、絶対平行性を検証します。

主な機能:
- 錐計量の構成（正ノルム版は両ブロックの符号を反転）
- 逆計量の閉形式と接続の閉形式による照合（混合ブロック Γ̃^I_0J = Kδ）
- 収束ベクトル場 φ̃^I = δ^I_0 の検証（∇̃φ̃ = K·id、ノルムの符号）
- 共円場の持ち上げ φ̃ = e^{Kx⁰}(ρ, φ) と逆変換
- シニュコフ解の持ち上げ ã = e^{2Kx⁰}[[μ, λ], [λ, a]] と逆変換
- 持ち上げた余ベクトル・双線形形式の平行性検証
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from modules import ConlabError
from modules.config import PRECONDITION_TOLERANCE, RunConfig
from modules.dsl import Expr, ZERO, div, exp, mul, neg, number, var
from modules.fields import (
    ConcircularCandidate, PreconditionError, SinyukovSolution, check_concircular, check_sinyukov, check_vnk,
)
from modules.geometry import (
    BilinearField, CovectorField, Field, FieldKind, MetricChart, SampleGrid, ScalarField,
    covariant_derivative_bilinear, covariant_derivative_covector, covariant_derivative_vector,
)
from modules.reports import ResidualReport, collect_residuals, combine_reports


class ConeError(ConlabError):
    """錐空間の構成・持ち上げエラー"""
    pass


# x⁰ の既定区間
DEFAULT_X0_DOMAIN = (-0.5, 0.5)


def _cone_coordinate(base: Sequence[str], constants: Sequence[str]) -> str:
    name = "x0"
    taken = set(base) | set(constants)
    while name in taken:
        name += "_"
    return name


class ConeSpace:
    """
    錐空間

    chart は (x⁰, x¹, ..., xⁿ) の (n+1) 次元チャートで、G_{00} = ∓e^{2Kx⁰}、
    G_{0i} = 0、G_{ij} = ±e^{2Kx⁰} g_ij / K を式として持ちます。
    """

    def __init__(self, base: MetricChart, K: float,
                 x0_domain: Tuple[float, float] = DEFAULT_X0_DOMAIN,
                 positive_norm: bool = False):
        self.logger = logging.getLogger(f"{__name__}.{base.name}")
        if not math.isfinite(K) or K == 0.0:
            raise ConeError(f"錐の構成には K ≠ 0 が必要です: K={K}")
        self.base = base
        self.K = float(K)
        self.positive_norm = bool(positive_norm)
        self.x0_domain = (float(x0_domain[0]), float(x0_domain[1]))
        self.x0 = _cone_coordinate(base.coordinates, base.constants)

        n = base.dim
        x0 = var(self.x0)
        self.scale_expr: Expr = exp(mul(number(self.K), x0))
        factor = exp(mul(number(2.0 * self.K), x0))
        sign = -1.0 if self.positive_norm else 1.0
        rows: List[List[Expr]] = [[ZERO] * (n + 1) for _ in range(n + 1)]
        rows[0][0] = neg(factor) if sign > 0 else factor
        for i in range(n):
            for j in range(i, n):
                entry = mul(factor, div(base.metric_exprs[i][j], number(self.K)))
                if sign < 0:
                    entry = neg(entry)
                rows[i + 1][j + 1] = entry
                rows[j + 1][i + 1] = entry

        self.chart = MetricChart(
            (self.x0,) + base.coordinates,
            [self.x0_domain] + base.domain.tolist(),
            rows,
            base.constants,
            name=f"cone({base.name})",
        )
        self.logger.info(f"錐空間を構成しました: K={self.K}, 次元={n + 1}, "
                         f"{'正ノルム' if self.positive_norm else '負ノルム'}")

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def metric_exprs(self) -> List[List[Expr]]:
        return self.chart.metric_exprs

    def split(self, p: Sequence[float]) -> Tuple[float, np.ndarray]:
        """錐の点を (x⁰, 底の点) に分ける"""
        p = np.asarray(p, dtype=float)
        return float(p[0]), p[1:]

    def inverse_closed_form(self, p: Sequence[float]) -> np.ndarray:
        """G^{-1} = e^{−2Kx⁰}·diag(−1, K g^{-1})（正ノルム版は符号反転）"""
        x0, q = self.split(p)
        n = self.base.dim
        inverse = np.zeros((n + 1, n + 1))
        inverse[0, 0] = -1.0
        inverse[1:, 1:] = self.K * self.base.local(q).inverse
        if self.positive_norm:
            inverse = -inverse
        return math.exp(-2.0 * self.K * x0) * inverse

    def metric_block_check(self, p: Sequence[float]) -> float:
        """評価した G と閉形式のブロック構造の差（最大絶対値）"""
        x0, q = self.split(p)
        factor = math.exp(2.0 * self.K * x0)
        expected = np.zeros((self.dim, self.dim))
        expected[0, 0] = -factor
        expected[1:, 1:] = factor * self.base.metric_at(q) / self.K
        if self.positive_norm:
            expected = -expected
        return float(np.max(np.abs(self.chart.metric_at(p) - expected)))

    def sidecar(self, base_filename: str = "") -> Dict[str, Any]:
        """錐計量ファイルに添えるJSON"""
        return {
            "K": self.K,
            "base": base_filename,
            "x0_domain": list(self.x0_domain),
            "x0_name": self.x0,
            "positive_norm": self.positive_norm,
        }


def build_cone(chart: MetricChart, K: float, x0_domain: Tuple[float, float] = DEFAULT_X0_DOMAIN,
               positive_norm: bool = False) -> ConeSpace:
    """ConeSpace のファクトリ関数"""
    return ConeSpace(chart, K, x0_domain, positive_norm)


def _cone_points(cone: ConeSpace, grid: Union[SampleGrid, np.ndarray]) -> np.ndarray:
    points = grid.points if isinstance(grid, SampleGrid) else np.atleast_2d(np.asarray(grid, dtype=float))
    if points.shape[1] != cone.dim:
        raise ConeError(f"標本点の次元 {points.shape[1]} が錐の次元 {cone.dim} と一致しません")
    return points


# ===== 接続の照合 =====

def cone_christoffel_oracle(cone: ConeSpace, p: Sequence[float]) -> Dict[str, Any]:
    """
    錐のクリストッフェル記号を一般式で計算し、閉形式と照合

    Returns:
        Dict[str, Any]: christoffel（一般式の値）と各閉形式との差
            gamma_000: Γ̃⁰₀₀ − K
            gamma_00j: max|Γ̃⁰₀ⱼ|
            gamma_0ij: max|Γ̃⁰ᵢⱼ − g_ij|
            gamma_kij: max|Γ̃^k_ij − Γ^k_ij|
            mixed: max|Γ̃^I_0J − K δ^I_J|
            mixed_unit_scaled: max|Γ̃^i_0j − δ^i_j|（K = 1 以外では0にならない）
    """
    x0, q = cone.split(p)
    gamma = cone.chart.local(p).christoffel
    base_local = cone.base.local(q)
    n = cone.base.dim
    identity = np.eye(n + 1)
    return {
        "christoffel": gamma,
        "gamma_000": float(gamma[0, 0, 0] - cone.K),
        "gamma_00j": float(np.max(np.abs(gamma[0, 0, 1:]))),
        "gamma_0ij": float(np.max(np.abs(gamma[0, 1:, 1:] - base_local.metric))),
        "gamma_kij": float(np.max(np.abs(gamma[1:, 1:, 1:] - base_local.christoffel))),
        "mixed": float(np.max(np.abs(gamma[:, 0, :] - cone.K * identity))),
        "mixed_unit_scaled": float(np.max(np.abs(gamma[1:, 0, 1:] - np.eye(n)))),
    }


def check_cone(cone: ConeSpace, grid: Union[SampleGrid, np.ndarray],
               config: Optional[RunConfig] = None) -> ResidualReport:
    """
    錐の構成を検証

    ブロック cone-inverse は G·G^{-1}（閉形式）− I、cone-mixed-connection は Γ̃^I_0J − Kδ^I_J。
    他の閉形式との差と単位スケール版の差は details に記録します。
    """
    config = config or RunConfig()
    points = _cone_points(cone, grid)

    def inverse_residual(p: np.ndarray) -> np.ndarray:
        return cone.chart.metric_at(p) @ cone.inverse_closed_form(p) - np.eye(cone.dim)

    def mixed_residual(p: np.ndarray) -> float:
        return cone_christoffel_oracle(cone, p)["mixed"]

    closed = {"gamma_000": 0.0, "gamma_00j": 0.0, "gamma_0ij": 0.0, "gamma_kij": 0.0,
              "mixed_unit_scaled": 0.0, "block_structure": 0.0}
    for p in points:
        oracle = cone_christoffel_oracle(cone, p)
        for key in ("gamma_000", "gamma_00j", "gamma_0ij", "gamma_kij", "mixed_unit_scaled"):
            closed[key] = max(closed[key], abs(oracle[key]))
        closed["block_structure"] = max(closed["block_structure"], cone.metric_block_check(p))

    blocks = [
        collect_residuals("cone-inverse", inverse_residual, points, config.tolerance("cone-inverse"),
                          config.workers),
        collect_residuals("cone-mixed-connection", mixed_residual, points,
                          config.tolerance("cone-mixed-connection"), config.workers),
    ]
    if closed["mixed_unit_scaled"] > config.tolerance("cone-mixed-connection"):
        cone.logger.debug(f"単位スケールの混合ブロックとの差: {closed['mixed_unit_scaled']:.3e}")
    return combine_reports("cone", blocks, details={"K": cone.K, "closed_form": closed})


def check_convergent_field(cone: ConeSpace, grid: Union[SampleGrid, np.ndarray],
                           config: Optional[RunConfig] = None,
                           expect_negative: Optional[bool] = None) -> ResidualReport:
    """
    φ̃^I = δ^I_0 が ∇̃_J φ̃^I = K δ^I_J を満たし、G(φ̃, φ̃) の符号が期待どおりかを検証

    expect_negative の既定は負ノルム錐で True、正ノルム錐で False です。
    """
    config = config or RunConfig()
    points = _cone_points(cone, grid)
    if expect_negative is None:
        expect_negative = not cone.positive_norm
    tolerance = config.tolerance("cone-convergent")
    values = np.zeros(cone.dim)
    values[0] = 1.0
    partials = np.zeros((cone.dim, cone.dim))

    def derivative_residual(p: np.ndarray) -> np.ndarray:
        return covariant_derivative_vector(cone.chart, values, partials, p) - cone.K * np.eye(cone.dim)

    def norm_residual(p: np.ndarray) -> float:
        norm = float(cone.chart.metric_at(p)[0, 0])
        return max(0.0, norm) if expect_negative else max(0.0, -norm)

    blocks = [
        collect_residuals("cone-convergent", derivative_residual, points, tolerance, config.workers),
        collect_residuals("cone-convergent:norm", norm_residual, points, tolerance, config.workers),
    ]
    return combine_reports("cone-convergent", blocks,
                           details={"expected_norm": "negative" if expect_negative else "positive"})


# ===== 持ち上げ =====

@dataclass
class LiftedCovector:
    """持ち上げた余ベクトル φ̃_I = e^{Kx⁰}(ρ, φ_i)"""
    cone: ConeSpace
    field: CovectorField

    def unlift_at(self, p: Sequence[float]) -> Tuple[float, np.ndarray]:
        """(ρ, φ) を1点で復元"""
        values = np.asarray(self.field.values_at(self.cone.chart, p), dtype=float)
        scale = math.exp(self.cone.K * float(p[0]))
        return float(values[0] / scale), values[1:] / scale


@dataclass
class LiftedBilinear:
    """持ち上げた双線形形式 ã = e^{2Kx⁰}[[μ, λ_j], [λ_i, a_ij]]"""
    cone: ConeSpace
    field: BilinearField

    def unlift_at(self, p: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, float]:
        """(a, λ, μ) を1点で復元"""
        values = np.asarray(self.field.values_at(self.cone.chart, p), dtype=float)
        scale = math.exp(2.0 * self.cone.K * float(p[0]))
        return values[1:, 1:] / scale, values[0, 1:] / scale, float(values[0, 0] / scale)


def lift_concircular(cone: ConeSpace, candidate: ConcircularCandidate,
                     grid: Union[SampleGrid, np.ndarray],
                     config: Optional[RunConfig] = None) -> LiftedCovector:
    """
    特殊共円場を錐の平行余ベクトルに持ち上げる

    Args:
        grid: 前提条件を確認する底チャートの標本点

    Raises:
        PreconditionError: 共円場の方程式または ∇ρ = Kφ が成り立たない
    """
    config = config or RunConfig()
    if not isinstance(candidate.phi, CovectorField) or not isinstance(candidate.rho, ScalarField):
        raise ConeError("持ち上げには式で与えた φ と ρ が必要です")
    if candidate.K is not None and candidate.K != cone.K:
        raise ConeError(f"共円場の K={candidate.K} が錐の K={cone.K} と一致しません")
    checked = ConcircularCandidate(phi=candidate.phi, rho=candidate.rho, K=cone.K)
    local = config.with_tolerance("concircular", PRECONDITION_TOLERANCE).with_tolerance(
        "special", PRECONDITION_TOLERANCE)
    report = check_concircular(cone.base, checked, grid, local)
    for block in report.blocks:
        if not block.passed:
            raise PreconditionError(block.equation, block.max, block.tolerance, context="共円場の持ち上げ")

    scale = cone.scale_expr
    components = [mul(scale, candidate.rho.expr)] + [mul(scale, c) for c in candidate.phi.components]
    return LiftedCovector(cone=cone, field=CovectorField(components))


def lift_solution(cone: ConeSpace, sol: SinyukovSolution, grid: Union[SampleGrid, np.ndarray],
                  config: Optional[RunConfig] = None) -> LiftedBilinear:
    """
    V_n(K) 方程式の解を錐の平行双線形形式に持ち上げる

    Raises:
        PreconditionError: シニュコフ系または V_n(K) 方程式が成り立たない
    """
    config = config or RunConfig()
    if sol.mu is None or not isinstance(sol.mu, ScalarField):
        raise ConeError("持ち上げには式で与えた μ が必要です")
    if not isinstance(sol.a, BilinearField) or not isinstance(sol.lam, CovectorField):
        raise ConeError("持ち上げには式で与えた a と λ が必要です")
    if sol.K is not None and sol.K != cone.K:
        raise ConeError(f"解の K={sol.K} が錐の K={cone.K} と一致しません")
    local = config
    for tag in ("sinyukov", "vnk-lambda", "vnk-mu"):
        local = local.with_tolerance(tag, PRECONDITION_TOLERANCE)
    sinyukov = check_sinyukov(cone.base, sol, grid, local)
    if not sinyukov.passed:
        raise PreconditionError("sinyukov", sinyukov.max, sinyukov.tolerance, context="解の持ち上げ")
    vnk = check_vnk(cone.base, sol, grid, local, K=cone.K)
    for block in vnk.blocks:
        if not block.passed:
            raise PreconditionError(block.equation, block.max, block.tolerance, context="解の持ち上げ")

    n = cone.base.dim
    factor = exp(mul(number(2.0 * cone.K), var(cone.x0)))
    rows: List[List[Expr]] = [[ZERO] * (n + 1) for _ in range(n + 1)]
    rows[0][0] = mul(factor, sol.mu.expr)
    for i in range(n):
        entry = mul(factor, sol.lam.components[i])
        rows[0][i + 1] = entry
        rows[i + 1][0] = entry
        for j in range(i, n):
            inner = mul(factor, sol.a.components[i][j])
            rows[i + 1][j + 1] = inner
            rows[j + 1][i + 1] = inner
    return LiftedBilinear(cone=cone, field=BilinearField(rows))


# ===== 平行性 =====

def _as_field(obj: Union[Field, LiftedCovector, LiftedBilinear]) -> Field:
    if isinstance(obj, (LiftedCovector, LiftedBilinear)):
        return obj.field
    return obj


def check_parallel_covector(cone: ConeSpace, phi: Union[Field, LiftedCovector],
                            grid: Union[SampleGrid, np.ndarray],
                            config: Optional[RunConfig] = None) -> ResidualReport:
    """∇̃_J φ̃_I の全成分"""
    config = config or RunConfig()
    fld = _as_field(phi)
    if fld.kind is not FieldKind.COVECTOR:
        raise ConeError("余ベクトル場が必要です")
    points = _cone_points(cone, grid)
    return collect_residuals("parallel-covector",
                             lambda p: covariant_derivative_covector(cone.chart, fld, p),
                             points, config.tolerance("parallel-covector"), config.workers)


def check_parallel_bilinear(cone: ConeSpace, form: Union[Field, LiftedBilinear],
                            grid: Union[SampleGrid, np.ndarray],
                            config: Optional[RunConfig] = None) -> ResidualReport:
    """∇̃_K ã_IJ の全成分"""
    config = config or RunConfig()
    fld = _as_field(form)
    if fld.kind is not FieldKind.BILINEAR:
        raise ConeError("双線形形式が必要です")
    points = _cone_points(cone, grid)
    return collect_residuals("parallel-bilinear",
                             lambda p: covariant_derivative_bilinear(cone.chart, fld, p),
                             points, config.tolerance("parallel-bilinear"), config.workers)


if __name__ == "__main__":
    # モジュール単体テスト用
    from modules.geometry import create_metric_chart

    logging.basicConfig(level=logging.INFO)

    print("錐空間モジュール単体テスト")
    print("=" * 40)

    sphere = create_metric_chart(["theta", "phi"], [(0.3, 2.8), (-3.0, 3.0)],
                                 [["1", "0"], ["0", "sin(theta)^2"]], name="sphere")
    for positive_norm in (False, True):
        cone = build_cone(sphere, -1.0, positive_norm=positive_norm)
        print(f"\n錐 K={cone.K} 正ノルム={positive_norm} 座標={cone.chart.coordinates}")
        oracle = cone_christoffel_oracle(cone, [0.1, 1.2, 0.4])
        for key, value in oracle.items():
            if key == "christoffel":
                continue
            print(f"  {key}: {value}")
