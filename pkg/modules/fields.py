#!/usr/bin/env python3
"""
場の検証モジュール - 測地写像・シニュコフ系・共円場の残差検証

底空間上の方程式を標本格子で評価し、残差レポートを返します。
判定が必要な二択（基本型/例外型など）は 1e-9 のしきい値で決め、
しきい値付近では「判定不能」を返します。

主な機能:
- レヴィ＝チヴィタ方程式の検証と ψ の復元（行列式比の対数ポテンシャル）
- 計量の組からシニュコフ解 (a, λ) を構成
- シニュコフ系・V_n(K) 方程式・V_n(0) 方程式の検証と K の最小二乗推定
- 共円場の検証と分類（基本/例外・特殊・収束）
- 共円場の移送（ḡ 上の共円場の式を構成）
- 二乗恒等式（単位元の構造）の検証と定数 e の選択
- 平行余ベクトル列の構成（V_n(0) 空間）

検証名（レポートの equation）:
- levi-civita, sinyukov, vnk-lambda, vnk-mu, concircular, special,
  square-bilinear, square-covector, square-scalar,
  vn0-sinyukov, vn0-lambda, vn0-mu-constant,
  sequence-parallel, sequence-orthogonality, sequence-power-orthogonality
"""

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss, legint, legval, legvander

from modules import ConlabError
from modules.config import BASIC_THRESHOLD, RunConfig
from modules.dsl import (
    Expr, ZERO, add, differentiate, div, exp, log, mul, neg, number, sum_exprs,
)
from modules.geometry import (
    BilinearField, CovectorField, Field, FieldKind, MetricChart, PointwiseField,
    SampleGrid, ScalarField, build_sample_grid, covariant_derivative_bilinear,
    covariant_derivative_covector, exterior_derivative,
)
from modules.reports import ResidualReport, collect_residuals, combine_reports


class FieldsError(ConlabError):
    """場の検証の基底例外"""
    pass


class PreconditionError(FieldsError):
    """前提条件となる方程式が成り立たない"""

    def __init__(self, equation: str, residual: float, tolerance: float, context: str = ""):
        self.equation = equation
        self.residual = float(residual)
        self.tolerance = float(tolerance)
        prefix = f"{context}: " if context else ""
        super().__init__(f"{prefix}前提条件 {equation} が成り立ちません "
                         f"(残差 {self.residual:.3e} > 許容 {self.tolerance:.1e})")


class DegenerateFitError(FieldsError):
    """最小二乗推定が退化している"""
    pass


class ConcircularClass(Enum):
    """共円場の型"""
    BASIC = "basic"
    EXCEPTIONAL = "exceptional"
    INDETERMINATE = "indeterminate"


class SequenceStop(Enum):
    """平行余ベクトル列の停止理由"""
    MAX_LENGTH = "max-length"
    DEPENDENT = "dependent"
    OBSTRUCTION = "obstruction"
    NOT_PARALLEL = "not-parallel"


@dataclass
class ConcircularCandidate:
    """共円場の候補 (φ, ρ, K)"""
    phi: Field
    rho: Field
    K: Optional[float] = None


@dataclass
class SinyukovSolution:
    """シニュコフ系の解の候補 (a, λ, μ, K)"""
    a: Field
    lam: Field
    mu: Optional[Field] = None
    K: Optional[float] = None


@dataclass
class GeodesicPair:
    """
    測地写像の候補となる計量の組

    psi が None のときは行列式比の対数ポテンシャルから ψ を求めます。
    joint_g / joint_gbar は両チャートの定数を合わせたチャートです。
    """
    chart_g: MetricChart
    chart_gbar: MetricChart
    psi: Optional[Field] = None
    joint_g: MetricChart = field(init=False)
    joint_gbar: MetricChart = field(init=False)

    def __post_init__(self):
        if self.chart_g.coordinates != self.chart_gbar.coordinates:
            raise FieldsError(f"座標が一致しません: {self.chart_g.coordinates} != {self.chart_gbar.coordinates}")
        self.joint_g = self.chart_g.with_constants(self.chart_gbar.constants)
        self.joint_gbar = self.chart_gbar.with_constants(self.chart_g.constants)
        self._potential: Optional[Expr] = None
        self._psi_auto: Optional[CovectorField] = None

    @property
    def dim(self) -> int:
        return self.chart_g.dim

    def potential(self) -> Expr:
        """Ψ = ln((det ḡ / det g)^2) / (4(n+1)) = ln|det ḡ / det g| / (2(n+1))"""
        if self._potential is None:
            ratio = div(self.chart_gbar.determinant_expr(), self.chart_g.determinant_expr())
            self._potential = div(log(mul(ratio, ratio)), number(4 * (self.dim + 1)))
        return self._potential

    def psi_field(self) -> Field:
        """ψ の場（指定がなければ Ψ の記号微分）"""
        if self.psi is not None:
            return self.psi
        if self._psi_auto is None:
            potential = self.potential()
            self._psi_auto = CovectorField([differentiate(potential, c) for c in self.chart_g.coordinates])
        return self._psi_auto


@dataclass
class Classification:
    """共円場の分類結果"""
    concircular_class: ConcircularClass
    special: bool
    K: Optional[float]
    convergent: bool
    max_abs_rho: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "class": self.concircular_class.value,
            "special": self.special,
            "K": self.K,
            "convergent": self.convergent,
            "max_abs_rho": self.max_abs_rho,
        }


def _points(grid: Union[SampleGrid, np.ndarray]) -> np.ndarray:
    if isinstance(grid, SampleGrid):
        return grid.points
    return np.atleast_2d(np.asarray(grid, dtype=float))


def _require(kind: FieldKind, fld: Field, label: str) -> None:
    if fld.kind is not kind:
        raise FieldsError(f"{label} は {kind.value} である必要があります（実際: {fld.kind.value}）")


# ===== レヴィ＝チヴィタ方程式 =====

def psi_from_pair(pair: GeodesicPair, p: Sequence[float]) -> np.ndarray:
    """ψ_i(p)（両計量の非退化を確認してから評価）"""
    pair.joint_g.local(p)
    pair.joint_gbar.local(p)
    return np.asarray(pair.psi_field().values_at(pair.joint_g, p), dtype=float)


def check_levi_civita(pair: GeodesicPair, grid: Union[SampleGrid, np.ndarray],
                      config: Optional[RunConfig] = None) -> ResidualReport:
    """
    R_ijk = ∇_k ḡ_ij − 2ψ_k ḡ_ij − ψ_i ḡ_jk − ψ_j ḡ_ik（∇ は g のレヴィ＝チヴィタ接続）
    """
    config = config or RunConfig()
    chart = pair.joint_g
    gbar = BilinearField(pair.chart_gbar.metric_exprs)
    psi = pair.psi_field()
    auto = pair.psi is None

    def residual(p: np.ndarray) -> np.ndarray:
        if auto:
            pair.joint_gbar.local(p)
        nabla = covariant_derivative_bilinear(chart, gbar, p)
        gb = gbar.values_at(chart, p)
        s = np.asarray(psi.values_at(chart, p), dtype=float)
        return (nabla
                - 2.0 * np.einsum("k,ij->ijk", s, gb)
                - np.einsum("i,jk->ijk", s, gb)
                - np.einsum("j,ik->ijk", s, gb))

    return collect_residuals("levi-civita", residual, _points(grid), config.tolerance("levi-civita"),
                             config.workers, details={"psi": "auto" if auto else "supplied"})


def solution_from_metrics(pair: GeodesicPair) -> SinyukovSolution:
    """
    計量の組からシニュコフ解を構成

    a_ij = e^{2Ψ} ḡ^{αβ} g_αi g_βj,  λ_i = −e^{2Ψ} ψ_α ḡ^{αβ} g_βi（= −a^s_i ψ_s）。
    μ と K は決まらないので None のままです。評価は pair.joint_g で行います。
    """
    n = pair.dim
    g = pair.chart_g.metric_exprs
    gbar_inv, _ = pair.joint_gbar.inverse_exprs()
    scale = exp(mul(number(2.0), pair.potential()))
    psi = pair.psi_field()
    if not isinstance(psi, CovectorField):
        raise FieldsError("ψ が式で与えられていないため解を構成できません")

    # B^β_i = ḡ^{βα} g_αi
    mixed = [[sum_exprs(mul(gbar_inv[b][al], g[al][i]) for al in range(n)) for i in range(n)] for b in range(n)]
    rows: List[List[Expr]] = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            entry = mul(scale, sum_exprs(mul(g[b][j], mixed[b][i]) for b in range(n)))
            rows[i][j] = entry
            rows[j][i] = entry
    lam = [neg(mul(scale, sum_exprs(mul(psi.components[b], mixed[b][i]) for b in range(n)))) for i in range(n)]
    return SinyukovSolution(a=BilinearField(rows), lam=CovectorField(lam), mu=None, K=None)


# ===== シニュコフ系・V_n(K) =====

def check_sinyukov(chart: MetricChart, sol: SinyukovSolution, grid: Union[SampleGrid, np.ndarray],
                   config: Optional[RunConfig] = None, equation: str = "sinyukov") -> ResidualReport:
    """∇_k a_ij − λ_i g_jk − λ_j g_ik"""
    config = config or RunConfig()
    _require(FieldKind.BILINEAR, sol.a, "a")
    _require(FieldKind.COVECTOR, sol.lam, "λ")

    def residual(p: np.ndarray) -> np.ndarray:
        nabla = covariant_derivative_bilinear(chart, sol.a, p)
        lam = np.asarray(sol.lam.values_at(chart, p), dtype=float)
        g = chart.local(p).metric
        return nabla - np.einsum("i,jk->ijk", lam, g) - np.einsum("j,ik->ijk", lam, g)

    return collect_residuals(equation, residual, _points(grid), config.tolerance(equation), config.workers)


def fit_vnk_constant(chart: MetricChart, sol: SinyukovSolution, grid: Union[SampleGrid, np.ndarray]) -> float:
    """∇λ − μg − K a を最小にする K（最小二乗）"""
    if sol.mu is None:
        raise FieldsError("μ がないため K を推定できません")
    numerator = 0.0
    denominator = 0.0
    for p in _points(grid):
        target = covariant_derivative_covector(chart, sol.lam, p) - sol.mu.values_at(chart, p) * chart.local(p).metric
        a = np.asarray(sol.a.values_at(chart, p), dtype=float)
        numerator += float(np.sum(target * a))
        denominator += float(np.sum(a * a))
    if denominator < 1e-18:
        raise DegenerateFitError("a が標本上でほぼ0のため K を推定できません")
    return numerator / denominator


def check_vnk(chart: MetricChart, sol: SinyukovSolution, grid: Union[SampleGrid, np.ndarray],
              config: Optional[RunConfig] = None, K: Optional[float] = None) -> ResidualReport:
    """
    ∇_j λ_i − K a_ij − μ g_ij と ∇_k μ − 2K λ_k を別ブロックで検証

    K は引数、解の K、最小二乗推定の順に決めます。
    """
    config = config or RunConfig()
    if sol.mu is None:
        raise FieldsError("μ がない解は V_n(K) 方程式を検証できません")
    fitted = False
    if K is None:
        K = sol.K
    if K is None:
        K = fit_vnk_constant(chart, sol, grid)
        fitted = True
    points = _points(grid)

    def lambda_residual(p: np.ndarray) -> np.ndarray:
        a = np.asarray(sol.a.values_at(chart, p), dtype=float)
        mu = float(sol.mu.values_at(chart, p))
        return covariant_derivative_covector(chart, sol.lam, p) - K * a - mu * chart.local(p).metric

    def mu_residual(p: np.ndarray) -> np.ndarray:
        _, grad = sol.mu.evaluate(chart, p)
        lam = np.asarray(sol.lam.values_at(chart, p), dtype=float)
        return np.asarray(grad, dtype=float) - 2.0 * K * lam

    blocks = [
        collect_residuals("vnk-lambda", lambda_residual, points, config.tolerance("vnk-lambda"), config.workers),
        collect_residuals("vnk-mu", mu_residual, points, config.tolerance("vnk-mu"), config.workers),
    ]
    return combine_reports("vnk", blocks, details={"K": K, "K_fitted": fitted})


def check_vn0(chart: MetricChart, sol: SinyukovSolution, grid: Union[SampleGrid, np.ndarray],
              config: Optional[RunConfig] = None) -> ResidualReport:
    """
    V_n(0) 方程式: ∇_k a_ij = λ_i g_jk + λ_j g_ik、∇_k λ_i = μ g_ik、μ は定数
    """
    config = config or RunConfig()
    if sol.mu is None:
        raise FieldsError("μ がない解は V_n(0) 方程式を検証できません")
    if sol.K not in (None, 0, 0.0):
        raise FieldsError(f"V_n(0) の検証には K = 0 が必要です: K={sol.K}")
    points = _points(grid)

    def lambda_residual(p: np.ndarray) -> np.ndarray:
        mu = float(sol.mu.values_at(chart, p))
        return covariant_derivative_covector(chart, sol.lam, p) - mu * chart.local(p).metric

    def mu_residual(p: np.ndarray) -> np.ndarray:
        return sol.mu.evaluate(chart, p)[1]

    blocks = [
        check_sinyukov(chart, sol, points, config, equation="vn0-sinyukov"),
        collect_residuals("vn0-lambda", lambda_residual, points, config.tolerance("vn0-lambda"), config.workers),
        collect_residuals("vn0-mu-constant", mu_residual, points, config.tolerance("vn0-mu-constant"),
                          config.workers),
    ]
    return combine_reports("vn0", blocks)


# ===== 共円場 =====

def fit_special_constant(chart: MetricChart, candidate: ConcircularCandidate,
                         grid: Union[SampleGrid, np.ndarray]) -> Tuple[float, float]:
    """
    Σ|∇_j ρ − K φ_j|² を最小にする K

    Returns:
        Tuple[float, float]: (K, 推定後の最大残差)
    """
    points = _points(grid)
    samples = []
    numerator = 0.0
    denominator = 0.0
    for p in points:
        _, grad = candidate.rho.evaluate(chart, p)
        phi = np.asarray(candidate.phi.values_at(chart, p), dtype=float)
        grad = np.asarray(grad, dtype=float)
        samples.append((grad, phi))
        numerator += float(grad @ phi)
        denominator += float(phi @ phi)
    if denominator < 1e-18:
        raise DegenerateFitError("φ が標本上でほぼ0のため K を推定できません")
    K = numerator / denominator
    residual = max(float(np.max(np.abs(grad - K * phi))) for grad, phi in samples)
    return K, residual


def check_concircular(chart: MetricChart, candidate: ConcircularCandidate,
                      grid: Union[SampleGrid, np.ndarray],
                      config: Optional[RunConfig] = None) -> ResidualReport:
    """
    ∇_j φ_i − ρ g_ij を検証し、型を分類

    K が与えられていれば ∇_j ρ − K φ_j も合否に含めます。
    与えられていなければ K を推定して分類にだけ使います。
    """
    logger = logging.getLogger(__name__)
    config = config or RunConfig()
    _require(FieldKind.COVECTOR, candidate.phi, "φ")
    _require(FieldKind.SCALAR, candidate.rho, "ρ")
    points = _points(grid)

    def concircular_residual(p: np.ndarray) -> np.ndarray:
        rho = float(candidate.rho.values_at(chart, p))
        return covariant_derivative_covector(chart, candidate.phi, p) - rho * chart.local(p).metric

    blocks = [collect_residuals("concircular", concircular_residual, points,
                                config.tolerance("concircular"), config.workers)]

    max_rho = 0.0
    max_grad = 0.0
    for p in points:
        value, grad = candidate.rho.evaluate(chart, p)
        max_rho = max(max_rho, abs(float(value)))
        max_grad = max(max_grad, float(np.max(np.abs(grad))) if np.size(grad) else 0.0)

    if BASIC_THRESHOLD / 10.0 <= max_rho <= BASIC_THRESHOLD * 10.0:
        kind = ConcircularClass.INDETERMINATE
        logger.warning(f"ρ の最大値 {max_rho:.3e} がしきい値付近のため型を判定できません")
    elif max_rho > BASIC_THRESHOLD:
        kind = ConcircularClass.BASIC
    else:
        kind = ConcircularClass.EXCEPTIONAL

    special_tolerance = config.tolerance("special")
    if candidate.K is not None:
        K: Optional[float] = float(candidate.K)

        def special_residual(p: np.ndarray) -> np.ndarray:
            _, grad = candidate.rho.evaluate(chart, p)
            return np.asarray(grad, dtype=float) - K * np.asarray(candidate.phi.values_at(chart, p), dtype=float)

        special_block = collect_residuals("special", special_residual, points, special_tolerance, config.workers)
        blocks.append(special_block)
        special = special_block.passed
    else:
        try:
            K, fit_residual = fit_special_constant(chart, candidate, points)
            special = fit_residual <= special_tolerance
            if not special:
                K = None
        except DegenerateFitError:
            # φ ≡ 0 は任意の K で特殊
            K, special = None, max_grad <= special_tolerance

    classification = Classification(
        concircular_class=kind,
        special=bool(special),
        K=K,
        convergent=bool(max_grad <= config.tolerance("convergent")),
        max_abs_rho=max_rho,
    )
    report = combine_reports("concircular", blocks, details={"classification": classification.to_dict()})
    if not report.passed:
        logger.warning(f"共円場の検証に失敗しました: max={report.max:.3e}")
    return report


def classification_of(report: ResidualReport) -> Dict[str, Any]:
    """check_concircular のレポートから分類を取り出す"""
    return dict(report.details.get("classification", {}))


def transfer_field(pair: GeodesicPair, candidate: ConcircularCandidate) -> ConcircularCandidate:
    """
    g の共円場を ḡ の共円場に移す（式として構成）

    φ̄^h = e^{−Ψ} φ^h、φ̄_i = ḡ_ih φ̄^h、ρ̄ = e^{−Ψ}(ρ + g^{ij} φ_i ψ_j)。
    Ψ は行列式比の対数ポテンシャルです。評価は pair.joint_gbar で行います。
    """
    if not isinstance(candidate.phi, CovectorField) or not isinstance(candidate.rho, ScalarField):
        raise FieldsError("移送には式で与えた φ と ρ が必要です")
    n = pair.dim
    ginv, _ = pair.joint_g.inverse_exprs()
    gbar = pair.chart_gbar.metric_exprs
    potential = pair.potential()
    damping = exp(neg(potential))
    psi = [differentiate(potential, c) for c in pair.chart_g.coordinates]
    phi = candidate.phi.components

    raised = [sum_exprs(mul(ginv[h][s], phi[s]) for s in range(n)) for h in range(n)]
    transferred = [mul(damping, raised[h]) for h in range(n)]
    phi_bar = [sum_exprs(mul(gbar[i][h], transferred[h]) for h in range(n)) for i in range(n)]
    contraction = sum_exprs(mul(raised[j], psi[j]) for j in range(n))
    rho_bar = mul(damping, add(candidate.rho.expr, contraction))
    return ConcircularCandidate(phi=CovectorField(phi_bar), rho=ScalarField(rho_bar), K=None)


def transfer_rho(pair: GeodesicPair, candidate: ConcircularCandidate, p: Sequence[float]) -> float:
    """移送後の ρ̄(p)"""
    pair.joint_g.local(p)
    pair.joint_gbar.local(p)
    transferred = transfer_field(pair, candidate)
    return float(transferred.rho.values_at(pair.joint_gbar, p))


def check_transfer(pair: GeodesicPair, candidate: ConcircularCandidate, grid: Union[SampleGrid, np.ndarray],
                   config: Optional[RunConfig] = None) -> ResidualReport:
    """移送した場が ḡ 上で共円場になることを確認"""
    config = config or RunConfig()
    transferred = transfer_field(pair, candidate)
    tolerance = config.tolerance("transfer")
    local = config.with_tolerance("concircular", tolerance)
    report = check_concircular(pair.joint_gbar, transferred, grid, local)
    report.equation = "transfer"
    return report


def classify_mapping_closure(pair: GeodesicPair, candidate: ConcircularCandidate,
                             p: Sequence[float]) -> Dict[str, Any]:
    """
    移送前後の型を1点で比較

    g 上で例外型（ρ = 0）なのに ḡ 上で基本型になるのは φ^t ψ_t ≠ 0 のときだけです。
    """
    chart = pair.joint_g
    rho = float(candidate.rho.values_at(chart, p))
    phi = np.asarray(candidate.phi.values_at(chart, p), dtype=float)
    psi = psi_from_pair(pair, p)
    contraction = float(phi @ chart.local(p).inverse @ psi)
    rho_bar = transfer_rho(pair, candidate, p)
    exceptional_on_g = abs(rho) <= BASIC_THRESHOLD
    basic_on_gbar = abs(rho_bar) > BASIC_THRESHOLD
    return {
        "rho": rho,
        "phi_psi": contraction,
        "rho_bar": rho_bar,
        "exceptional_on_g": exceptional_on_g,
        "basic_on_gbar": basic_on_gbar,
        "consistent": bool(not (exceptional_on_g and basic_on_gbar) or abs(contraction) > BASIC_THRESHOLD),
    }


def solution_from_concircular(candidates: Sequence[ConcircularCandidate], coefficients: Any,
                              K: Optional[float] = None) -> SinyukovSolution:
    """
    共円場の対称積から解を構成

    a = Σ C_αβ φ^α⊗φ^β、λ = Σ C_αβ ρ_α φ^β、μ = Σ C_αβ ρ_α ρ_β（C は対称行列）。
    """
    C = np.asarray(coefficients, dtype=float)
    m = len(candidates)
    if C.shape != (m, m):
        raise FieldsError(f"係数行列の形が不正です: {C.shape} (期待 {m}×{m})")
    if not np.array_equal(C, C.T):
        raise FieldsError("係数行列が対称ではありません")
    for c in candidates:
        if not isinstance(c.phi, CovectorField) or not isinstance(c.rho, ScalarField):
            raise FieldsError("式で与えた共円場が必要です")
    if K is None:
        ks = {c.K for c in candidates}
        K = ks.pop() if len(ks) == 1 else None
    n = len(candidates[0].phi.components)
    phis = [c.phi.components for c in candidates]
    rhos = [c.rho.expr for c in candidates]

    def pair_terms(build) -> Expr:
        terms = []
        for al in range(m):
            for be in range(al, m):
                if C[al, be] == 0.0:
                    continue
                terms.append(mul(number(C[al, be]), build(al, be)))
        return sum_exprs(terms)

    rows: List[List[Expr]] = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            entry = pair_terms(lambda al, be: mul(phis[al][i], phis[be][j]) if al == be else
                               add(mul(phis[al][i], phis[be][j]), mul(phis[be][i], phis[al][j])))
            rows[i][j] = entry
            rows[j][i] = entry
    lam = [pair_terms(lambda al, be: mul(rhos[al], phis[be][j]) if al == be else
                      add(mul(rhos[al], phis[be][j]), mul(rhos[be], phis[al][j])))
           for j in range(n)]
    mu = pair_terms(lambda al, be: mul(rhos[al], rhos[be]) if al == be else
                    mul(number(2.0), mul(rhos[al], rhos[be])))
    return SinyukovSolution(a=BilinearField(rows), lam=CovectorField(lam), mu=ScalarField(mu), K=K)


# ===== 二乗恒等式 =====

def check_square_identities(chart: MetricChart, sol: SinyukovSolution, e: int,
                            grid: Union[SampleGrid, np.ndarray],
                            config: Optional[RunConfig] = None) -> ResidualReport:
    """
    解の二乗が e 倍の単位元になるかを3ブロックで検証

    K a(AX,Y) − λ⊗λ(X,Y) − e g(X,Y)/K、K λ(AX) − μ λ(X)、K g⁻¹(λ,λ) − μ² + e。
    """
    config = config or RunConfig()
    if e not in (-1, 0, 1):
        raise FieldsError(f"e は -1, 0, 1 のいずれかです: {e}")
    if sol.mu is None or sol.K is None or sol.K == 0.0:
        raise FieldsError("二乗恒等式の検証には μ と K ≠ 0 が必要です")
    K = float(sol.K)
    points = _points(grid)

    def local_values(p: np.ndarray):
        local = chart.local(p)
        a = np.asarray(sol.a.values_at(chart, p), dtype=float)
        lam = np.asarray(sol.lam.values_at(chart, p), dtype=float)
        mu = float(sol.mu.values_at(chart, p))
        return local, a, lam, mu

    def bilinear_residual(p: np.ndarray) -> np.ndarray:
        local, a, lam, _ = local_values(p)
        return K * (a @ local.inverse @ a) - np.outer(lam, lam) - e * local.metric / K

    def covector_residual(p: np.ndarray) -> np.ndarray:
        local, a, lam, mu = local_values(p)
        return K * (a @ local.inverse @ lam) - mu * lam

    def scalar_residual(p: np.ndarray) -> float:
        local, _, lam, mu = local_values(p)
        return K * float(lam @ local.inverse @ lam) - mu * mu + e

    blocks = [
        collect_residuals("square-bilinear", bilinear_residual, points, config.tolerance("square-bilinear"),
                          config.workers),
        collect_residuals("square-covector", covector_residual, points, config.tolerance("square-covector"),
                          config.workers),
        collect_residuals("square-scalar", scalar_residual, points, config.tolerance("square-scalar"),
                          config.workers),
    ]
    return combine_reports("square", blocks, details={"e": e, "K": K})


def select_square_constant(chart: MetricChart, sol: SinyukovSolution, grid: Union[SampleGrid, np.ndarray],
                           config: Optional[RunConfig] = None) -> Tuple[Optional[int], Dict[int, ResidualReport]]:
    """
    e ∈ {−1, 0, 1} を総当たりし、合格するものがちょうど1つならそれを返す

    Returns:
        Tuple[Optional[int], Dict[int, ResidualReport]]: (e または None, e ごとのレポート)
    """
    reports = {e: check_square_identities(chart, sol, e, grid, config) for e in (-1, 0, 1)}
    passing = [e for e, report in reports.items() if report.passed]
    if len(passing) == 1:
        return passing[0], reports
    logging.getLogger(__name__).warning(f"e を一意に決められません: 合格 {passing}")
    return None, reports


# ===== ψ の復元 =====

def recover_psi_from_solution(chart: MetricChart, sol: SinyukovSolution, p: Sequence[float]) -> np.ndarray:
    """
    λ_i = −a^s_i ψ_s を解いて ψ を求める（A = g⁻¹a が正則な点のみ）
    """
    local = chart.local(p)
    A = local.inverse @ np.asarray(sol.a.values_at(chart, p), dtype=float)
    det = float(np.linalg.det(A))
    if abs(det) <= 1e-10:
        raise PreconditionError("regular-operator", abs(det), 1e-10, context="A が正則ではありません")
    lam = np.asarray(sol.lam.values_at(chart, p), dtype=float)
    return -np.linalg.solve(A.T, lam)


# ===== 平行余ベクトル列 =====

class _RayIntegrator:
    """基準点から p への線分上の累積積分（ガウス・ルジャンドル節点上のスペクトル積分）"""

    def __init__(self, nodes: int):
        t, w = leggauss(nodes)
        self.s = 0.5 * (t + 1.0)
        self.weights = 0.5 * w
        # 節点値 -> ルジャンドル係数（求積の直交性を使う）
        vander = legvander(t, nodes - 1)
        to_coefficients = ((2.0 * np.arange(nodes) + 1.0) / 2.0)[:, None] * (vander.T * w[None, :])
        integrated = np.empty((nodes, nodes))
        for degree in range(nodes):
            basis = np.zeros(nodes)
            basis[degree] = 1.0
            integrated[:, degree] = legval(t, legint(basis, lbnd=-1.0))
        # ds = dt / 2
        self.cumulative = 0.5 * integrated @ to_coefficients

    def partial_integrals(self, integrand: np.ndarray) -> np.ndarray:
        return self.cumulative @ integrand

    def total(self, integrand: np.ndarray) -> float:
        return float(self.weights @ integrand)


class _SequenceEvaluator:
    """
    φ^{α+1}_i = A^t_i φ^α_t − f^α λ_i を点ごとに評価

    f^α は基準点で0となる φ^α のポテンシャルで、線分上の節点値から累積積分で求めます。
    """

    def __init__(self, chart: MetricChart, sol: SinyukovSolution, phi: Field,
                 base_point: np.ndarray, nodes: int):
        self.chart = chart
        self.sol = sol
        self.phi = phi
        self.base_point = np.asarray(base_point, dtype=float)
        self.ray = _RayIntegrator(nodes)
        self._cache: Dict[Tuple[Tuple[float, ...], int], List[Tuple[np.ndarray, np.ndarray]]] = {}
        self._cache_lock = threading.Lock()

    def _operator(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        local = self.chart.local(p)
        a = np.asarray(self.sol.a.values_at(self.chart, p), dtype=float)
        lam = np.asarray(self.sol.lam.values_at(self.chart, p), dtype=float)
        return local.inverse @ a, lam

    def evaluate_all(self, p: np.ndarray, levels: int) -> List[Tuple[np.ndarray, np.ndarray]]:
        key = (tuple(np.asarray(p, dtype=float).tolist()), levels)
        with self._cache_lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        chart = self.chart
        p = np.asarray(p, dtype=float)
        delta = p - self.base_point

        # 線分上の節点で各段の値とポテンシャルを求める
        ray_points = [self.base_point + s * delta for s in self.ray.s]
        operators = [self._operator(x) for x in ray_points]
        ray_values = np.array([np.asarray(self.phi.values_at(chart, x), dtype=float) for x in ray_points])
        potentials_at_p: List[float] = []
        for level in range(levels):
            integrand = ray_values @ delta
            potentials_at_p.append(self.ray.total(integrand))
            if level + 1 == levels:
                break
            partial = self.ray.partial_integrals(integrand)
            ray_values = np.array([A.T @ v - f * lam
                                   for (A, lam), v, f in zip(operators, ray_values, partial)])

        # p での値と偏微分（積の微分）
        local = chart.local(p)
        a, da = self.sol.a.evaluate(chart, p)
        lam, dlam = self.sol.lam.evaluate(chart, p)
        a = np.asarray(a, dtype=float)
        lam = np.asarray(lam, dtype=float)
        ginv = local.inverse
        dginv = -np.einsum("ts,jsu,uv->tvj", ginv, local.metric_partials, ginv)
        A = ginv @ a
        dA = np.einsum("tsj,si->tij", dginv, a) + np.einsum("ts,sij->tij", ginv, da)

        values, partials = self.phi.evaluate(chart, p)
        values = np.asarray(values, dtype=float)
        partials = np.asarray(partials, dtype=float)
        result = [(values, partials)]
        for level in range(1, levels):
            f = potentials_at_p[level - 1]
            next_values = A.T @ values - f * lam
            next_partials = (np.einsum("tij,t->ij", dA, values)
                             + np.einsum("ti,tj->ij", A, partials)
                             - np.outer(lam, values)
                             - f * dlam)
            values, partials = next_values, next_partials
            result.append((values, partials))
        with self._cache_lock:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = result
        return result

    def element(self, level: int) -> PointwiseField:
        """第 level 段（1始まり）の場"""
        def evaluate(chart: MetricChart, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            if chart.uid != self.chart.uid:
                raise FieldsError("列の要素は構成したチャートでのみ評価できます")
            return self.evaluate_all(p, level)[level - 1]
        return PointwiseField(FieldKind.COVECTOR, self.chart.dim, evaluate)


@dataclass
class ParallelSequence:
    """平行余ベクトル列の構成結果"""
    elements: List[Field]
    samples: List[np.ndarray]
    report: ResidualReport
    stop_reason: SequenceStop
    obstruction: bool
    base_point: List[float]

    def __len__(self) -> int:
        return len(self.elements)


def _numeric_rank(matrix: np.ndarray, threshold: float) -> int:
    """列ピボット付きQR分解による数値ランク"""
    if matrix.size == 0:
        return 0
    _, r, _ = scipy.linalg.qr(matrix, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    if diagonal.size == 0 or diagonal[0] == 0.0:
        return 0
    return int(np.sum(diagonal > threshold * max(1.0, diagonal[0])))


def build_parallel_sequence(chart: MetricChart, sol: SinyukovSolution, phi: Field,
                            base_point: Optional[Sequence[float]] = None,
                            max_len: Optional[int] = None,
                            grid: Optional[Union[SampleGrid, np.ndarray]] = None,
                            config: Optional[RunConfig] = None) -> ParallelSequence:
    """
    平行余ベクトル列 φ¹ = φ, φ^{α+1} = φ^α(A·) − f^α λ を構成

    各段で φ^α(λ*) = 0 を確認し（破れていれば障害として停止）、新しい段の平行性を
    再検証し、既存の段の張る空間に入ったら停止します。

    Raises:
        PreconditionError: φ または λ が平行でない、φ が閉じていない
    """
    logger = logging.getLogger(__name__)
    config = config or RunConfig()
    _require(FieldKind.COVECTOR, phi, "φ")
    points = _points(grid) if grid is not None else build_sample_grid(chart, config).points
    base = np.asarray(base_point, dtype=float) if base_point is not None else chart.center()
    if not chart.contains(base):
        raise FieldsError(f"基準点が領域外です: {base.tolist()}")
    max_len = max_len or chart.dim
    parallel_tolerance = config.tolerance("sequence-parallel")
    orthogonality_tolerance = config.tolerance("sequence-orthogonality")

    def max_over(fn) -> float:
        return max(float(np.max(np.abs(fn(p)))) for p in points)

    input_parallel = max_over(lambda p: covariant_derivative_covector(chart, phi, p))
    if input_parallel > 1e-9:
        raise PreconditionError("parallel-input", input_parallel, 1e-9, context="φ")
    lam_parallel = max_over(lambda p: covariant_derivative_covector(chart, sol.lam, p))
    if lam_parallel > 1e-9:
        raise PreconditionError("parallel-input", lam_parallel, 1e-9, context="λ")
    closedness = max_over(lambda p: exterior_derivative(chart, phi, p))
    if closedness > 1e-9:
        raise PreconditionError("closed", closedness, 1e-9, context="φ")

    evaluator = _SequenceEvaluator(chart, sol, phi, base, config.quadrature_nodes)
    rng = np.random.default_rng(config.seed + 1)
    width = chart.domain[:, 1] - chart.domain[:, 0]
    lo = chart.domain[:, 0] + config.inset * width
    rank_points = lo + (width * (1.0 - 2.0 * config.inset)) * rng.random((4 * chart.dim, chart.dim))

    elements: List[Field] = [phi]
    samples = [np.concatenate([np.asarray(phi.values_at(chart, q), dtype=float) for q in rank_points])]
    obstruction = False
    while True:
        level = len(elements)
        current = elements[-1]

        def orthogonality(p: np.ndarray, current=current) -> float:
            value = np.asarray(current.values_at(chart, p), dtype=float)
            lam = np.asarray(sol.lam.values_at(chart, p), dtype=float)
            return float(value @ chart.local(p).inverse @ lam)

        if max_over(orthogonality) > orthogonality_tolerance:
            obstruction = True
            stop = SequenceStop.OBSTRUCTION
            logger.warning(f"第{level}段で φ(λ*) = 0 が破れているため列を延長できません")
            break
        if level >= max_len:
            stop = SequenceStop.MAX_LENGTH
            break
        candidate = evaluator.element(level + 1)
        parallel = max_over(lambda p: covariant_derivative_covector(chart, candidate, p))
        if parallel > parallel_tolerance:
            stop = SequenceStop.NOT_PARALLEL
            logger.warning(f"第{level + 1}段が平行ではありません: {parallel:.3e}")
            break
        sample = np.concatenate([np.asarray(candidate.values_at(chart, q), dtype=float) for q in rank_points])
        if _numeric_rank(np.stack(samples + [sample], axis=1), 1e-8) < level + 1:
            stop = SequenceStop.DEPENDENT
            break
        elements.append(candidate)
        samples.append(sample)

    report = _sequence_report(chart, sol, elements, points, config)
    logger.info(f"平行余ベクトル列: 長さ {len(elements)}, 停止理由 {stop.value}")
    return ParallelSequence(elements=elements, samples=samples, report=report, stop_reason=stop,
                            obstruction=obstruction, base_point=base.tolist())


def _sequence_report(chart: MetricChart, sol: SinyukovSolution, elements: Sequence[Field],
                     points: np.ndarray, config: RunConfig) -> ResidualReport:
    """各段の平行性・φ^α(λ*)・φ(A^k λ*) と λ(A^k φ*) の残差"""
    first = elements[0]

    def parallel_residual(p: np.ndarray) -> np.ndarray:
        return np.concatenate([covariant_derivative_covector(chart, e, p).ravel() for e in elements])

    def orthogonality_residual(p: np.ndarray) -> np.ndarray:
        ginv = chart.local(p).inverse
        lam = np.asarray(sol.lam.values_at(chart, p), dtype=float)
        return np.array([float(np.asarray(e.values_at(chart, p), dtype=float) @ ginv @ lam) for e in elements])

    def power_residual(p: np.ndarray) -> np.ndarray:
        ginv = chart.local(p).inverse
        A = ginv @ np.asarray(sol.a.values_at(chart, p), dtype=float)
        lam_star = ginv @ np.asarray(sol.lam.values_at(chart, p), dtype=float)
        phi = np.asarray(first.values_at(chart, p), dtype=float)
        phi_star = ginv @ phi
        lam = np.asarray(sol.lam.values_at(chart, p), dtype=float)
        out = []
        v, w = lam_star, phi_star
        for _ in range(len(elements)):
            out.extend([float(phi @ v), float(lam @ w)])
            v, w = A @ v, A @ w
        return np.array(out)

    blocks = [
        collect_residuals("sequence-parallel", parallel_residual, points,
                          config.tolerance("sequence-parallel"), config.workers),
        collect_residuals("sequence-orthogonality", orthogonality_residual, points,
                          config.tolerance("sequence-orthogonality"), config.workers),
        collect_residuals("sequence-power-orthogonality", power_residual, points,
                          config.tolerance("sequence-orthogonality"), config.workers),
    ]
    return combine_reports("sequence", blocks, details={"length": len(elements)})
