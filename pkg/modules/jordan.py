#!/usr/bin/env python3
"""
ジョルダン代数モジュール - V_n(K) 空間のシニュコフ解がなす特殊ジョルダン代数

V_n(K) 方程式の解 (a, λ, μ) の積と、錐上の平行対称双線形形式の
ジョルダン括弧を実装し、両者が持ち上げで対応することを検証します。

主な機能:
- 要素の受理（シニュコフ系・V_n(K) 方程式の検証）と単位元 (g/K, 0, −1)
- ジョルダン積（n ≤ 3 は式として構成、それ以上は点ごとに評価）と積の閉性検証
- 錐上の平行形式のジョルダン括弧 {ã; b̃} = ½(ã G⁻¹ b̃ + 転置)
- 同型の検証: lift(e1∘e2) = {lift e1; lift e2}
- 可換性とジョルダン恒等式 (x∘y)∘(x∘x) = x∘(y∘(x∘x)) の検証
- 共円場から生成される部分空間がイデアルであることの検証と係数行列 F の復元

積は 1 と 2 を入れ替えても式の評価結果がビット単位で一致するように組み立てます。
"""

import logging
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from modules import ConlabError
from modules.cone import ConeSpace, LiftedBilinear, check_parallel_bilinear
from modules.config import PRECONDITION_TOLERANCE, RunConfig
from modules.dsl import Expr, ZERO, add, div, mul, number, sub, sum_exprs
from modules.fields import (
    ConcircularCandidate, SinyukovSolution, check_sinyukov, check_vnk, solution_from_concircular,
)
from modules.geometry import (
    BilinearField, CovectorField, ExprField, Field, FieldKind, LocalGeometry, MetricChart, PointwiseField,
    SampleGrid, ScalarField,
)
from modules.reports import ResidualReport, collect_residuals, combine_reports


class JordanError(ConlabError):
    """ジョルダン代数の基底例外"""
    pass


class ClosureError(JordanError):
    """積が解にならない（閉性の検証に失敗）"""

    def __init__(self, message: str, report: ResidualReport):
        self.report = report
        super().__init__(message)


# これより大きい次元では積を点ごとに評価する
SYMBOLIC_PRODUCT_MAX_DIM = 3

Triple = Tuple[np.ndarray, np.ndarray, float]


def _grid_points(grid: Union[SampleGrid, np.ndarray]) -> np.ndarray:
    if isinstance(grid, SampleGrid):
        return grid.points
    return np.atleast_2d(np.asarray(grid, dtype=float))


@dataclass
class JordanElement:
    """代数の要素（チャートと K を伴う解）"""
    chart: MetricChart
    K: float
    solution: SinyukovSolution
    label: str = ""
    admission: Optional[ResidualReport] = None

    @property
    def symbolic(self) -> bool:
        sol = self.solution
        return all(isinstance(f, ExprField) for f in (sol.a, sol.lam, sol.mu))

    def values_at(self, p: Sequence[float]) -> Triple:
        sol = self.solution
        return (np.asarray(sol.a.values_at(self.chart, p), dtype=float),
                np.asarray(sol.lam.values_at(self.chart, p), dtype=float),
                float(sol.mu.values_at(self.chart, p)))

    def evaluate(self, p: Sequence[float]) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
        """((a, ∂a), (λ, ∂λ), (μ, ∂μ))"""
        sol = self.solution
        a, da = sol.a.evaluate(self.chart, p)
        lam, dlam = sol.lam.evaluate(self.chart, p)
        mu, dmu = sol.mu.evaluate(self.chart, p)
        return ((np.asarray(a, dtype=float), np.asarray(da, dtype=float)),
                (np.asarray(lam, dtype=float), np.asarray(dlam, dtype=float)),
                (float(mu), np.asarray(dmu, dtype=float)))


def verify_solution(chart: MetricChart, sol: SinyukovSolution, K: float, grid: Union[SampleGrid, np.ndarray],
                    tolerance: float, config: Optional[RunConfig] = None) -> ResidualReport:
    """シニュコフ系と V_n(K) 方程式を同じ許容誤差で検証"""
    config = config or RunConfig()
    local = config
    for tag in ("sinyukov", "vnk-lambda", "vnk-mu"):
        local = local.with_tolerance(tag, tolerance)
    blocks = [check_sinyukov(chart, sol, grid, local)]
    blocks.extend(check_vnk(chart, sol, grid, local, K=K).blocks)
    return combine_reports("solution", blocks, details={"K": K})


def admit_element(chart: MetricChart, sol: SinyukovSolution, grid: Union[SampleGrid, np.ndarray],
                  config: Optional[RunConfig] = None, label: str = "") -> JordanElement:
    """
    解を代数の要素として受理

    Raises:
        JordanError: μ・K がない、K = 0、または方程式が成り立たない
    """
    if sol.mu is None or sol.K is None:
        raise JordanError("要素には μ と K が必要です")
    if sol.K == 0.0:
        raise JordanError("ジョルダン代数は K ≠ 0 の空間でのみ定義されます")
    report = verify_solution(chart, sol, float(sol.K), grid, PRECONDITION_TOLERANCE, config)
    if not report.passed:
        raise JordanError(f"要素 {label or '(無名)'} は解ではありません: 残差 {report.max:.3e}")
    return JordanElement(chart=chart, K=float(sol.K), solution=sol, label=label, admission=report)


def unit_solution(chart: MetricChart, K: float) -> SinyukovSolution:
    """単位元 (g/K, 0, −1)"""
    n = chart.dim
    k = number(K)
    rows = [[div(chart.metric_exprs[i][j], k) for j in range(n)] for i in range(n)]
    return SinyukovSolution(a=BilinearField(rows), lam=CovectorField([ZERO] * n), mu=ScalarField(number(-1.0)),
                            K=float(K))


def unit_element(chart: MetricChart, K: float, grid: Union[SampleGrid, np.ndarray],
                 config: Optional[RunConfig] = None) -> JordanElement:
    return admit_element(chart, unit_solution(chart, K), grid, config, label="unit")


def linear_combination(elements: Sequence[JordanElement], weights: Sequence[float],
                       grid: Union[SampleGrid, np.ndarray], config: Optional[RunConfig] = None,
                       label: str = "") -> JordanElement:
    """要素の線形結合（式で与えた要素のみ）"""
    if not elements or len(elements) != len(weights):
        raise JordanError("要素と重みの数が一致しません")
    _require_compatible(elements)
    if not all(e.symbolic for e in elements):
        raise JordanError("線形結合は式で与えた要素に限ります")
    n = elements[0].chart.dim
    scaled = [(number(w), e.solution) for w, e in zip(weights, elements) if w != 0.0]
    rows = [[sum_exprs(mul(w, s.a.components[i][j]) for w, s in scaled) for j in range(n)] for i in range(n)]
    lam = [sum_exprs(mul(w, s.lam.components[i]) for w, s in scaled) for i in range(n)]
    mu = sum_exprs(mul(w, s.mu.expr) for w, s in scaled)
    sol = SinyukovSolution(a=BilinearField(rows), lam=CovectorField(lam), mu=ScalarField(mu), K=elements[0].K)
    return admit_element(elements[0].chart, sol, grid, config, label=label)


def _require_compatible(elements: Sequence[JordanElement]) -> None:
    first = elements[0]
    for other in elements[1:]:
        if other.chart.uid != first.chart.uid:
            raise JordanError("要素のチャートが一致しません")
        if other.K != first.K:
            raise JordanError(f"要素の K が一致しません: {first.K} != {other.K}")


# ===== 積 =====

def product_values(inverse: np.ndarray, K: float, first: Triple, second: Triple) -> Triple:
    """
    1点での積 (a³, λ³, μ³)

    a³ = ½K(a¹g⁻¹a² + a²g⁻¹a¹) − ½(λ¹⊗λ² + λ²⊗λ¹)
    λ³ = ½[K(a²g⁻¹λ¹ + a¹g⁻¹λ²) − (μ¹λ² + μ²λ¹)]
    μ³ = ½K(λ¹g⁻¹λ² + λ²g⁻¹λ¹) − μ¹μ²
    """
    a1, l1, m1 = first
    a2, l2, m2 = second
    forward = a1 @ inverse @ a2
    backward = a2 @ inverse @ a1
    mixed = np.outer(l1, l2)
    mixed_t = np.outer(l2, l1)
    a3 = 0.5 * K * (forward + backward) - 0.5 * (mixed + mixed_t)
    a3 = np.triu(a3) + np.triu(a3, 1).T
    l3 = 0.5 * (K * (a2 @ inverse @ l1 + a1 @ inverse @ l2) - (m1 * l2 + m2 * l1))
    m3 = 0.5 * K * (float(l1 @ inverse @ l2) + float(l2 @ inverse @ l1)) - m1 * m2
    return a3, l3, m3


def _symbolic_product(e1: JordanElement, e2: JordanElement) -> SinyukovSolution:
    chart = e1.chart
    n = chart.dim
    ginv, _ = chart.inverse_exprs()
    k = number(e1.K)
    half = number(0.5)
    s1, s2 = e1.solution, e2.solution
    a1, a2 = s1.a.components, s2.a.components
    l1, l2 = s1.lam.components, s2.lam.components
    m1, m2 = s1.mu.expr, s2.mu.expr

    def sandwich(left: List[List[Expr]], right: List[List[Expr]], i: int, j: int) -> Expr:
        return sum_exprs(mul(mul(left[i][s], ginv[s][t]), right[t][j]) for s in range(n) for t in range(n))

    def apply(op: List[List[Expr]], vec: List[Expr], i: int) -> Expr:
        return sum_exprs(mul(mul(op[i][s], ginv[s][t]), vec[t]) for s in range(n) for t in range(n))

    def pairing(u: List[Expr], v: List[Expr]) -> Expr:
        return sum_exprs(mul(mul(u[s], ginv[s][t]), v[t]) for s in range(n) for t in range(n))

    rows: List[List[Expr]] = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            quadratic = mul(mul(half, k), add(sandwich(a1, a2, i, j), sandwich(a2, a1, i, j)))
            cross = mul(half, add(mul(l1[i], l2[j]), mul(l2[i], l1[j])))
            entry = sub(quadratic, cross)
            rows[i][j] = entry
            rows[j][i] = entry
    lam = [mul(half, sub(mul(k, add(apply(a2, l1, i), apply(a1, l2, i))),
                         add(mul(m1, l2[i]), mul(m2, l1[i]))))
           for i in range(n)]
    mu = sub(mul(mul(half, k), add(pairing(l1, l2), pairing(l2, l1))), mul(m1, m2))
    return SinyukovSolution(a=BilinearField(rows), lam=CovectorField(lam), mu=ScalarField(mu), K=e1.K)


def _inverse_partials(local: LocalGeometry) -> np.ndarray:
    """dginv[s, t, k] = ∂_k g^st"""
    ginv = local.inverse
    return -np.einsum("su,kuv,vt->stk", ginv, local.metric_partials, ginv)


def _pointwise_product(e1: JordanElement, e2: JordanElement) -> SinyukovSolution:
    chart = e1.chart
    K = e1.K
    n = chart.dim

    def full(p: np.ndarray):
        local = chart.local(p)
        G = local.inverse
        dG = _inverse_partials(local)
        (a1, da1), (l1, dl1), (m1, dm1) = e1.evaluate(p)
        (a2, da2), (l2, dl2), (m2, dm2) = e2.evaluate(p)
        a3, l3, m3 = product_values(G, K, (a1, l1, m1), (a2, l2, m2))

        def d_sandwich(x, dx, y, dy):
            return (np.einsum("isk,st,tj->ijk", dx, G, y)
                    + np.einsum("is,stk,tj->ijk", x, dG, y)
                    + np.einsum("is,st,tjk->ijk", x, G, dy))

        def d_apply(x, dx, v, dv):
            return (np.einsum("isk,st,t->ik", dx, G, v)
                    + np.einsum("is,stk,t->ik", x, dG, v)
                    + np.einsum("is,st,tk->ik", x, G, dv))

        def d_pairing(u, du, v, dv):
            return (np.einsum("sk,st,t->k", du, G, v)
                    + np.einsum("s,stk,t->k", u, dG, v)
                    + np.einsum("s,st,tk->k", u, G, dv))

        da3 = (0.5 * K * (d_sandwich(a1, da1, a2, da2) + d_sandwich(a2, da2, a1, da1))
               - 0.5 * (np.einsum("ik,j->ijk", dl1, l2) + np.einsum("i,jk->ijk", l1, dl2)
                        + np.einsum("ik,j->ijk", dl2, l1) + np.einsum("i,jk->ijk", l2, dl1)))
        dl3 = 0.5 * (K * (d_apply(a2, da2, l1, dl1) + d_apply(a1, da1, l2, dl2))
                     - (np.outer(l2, dm1) + m1 * dl2 + np.outer(l1, dm2) + m2 * dl1))
        dm3 = (0.5 * K * (d_pairing(l1, dl1, l2, dl2) + d_pairing(l2, dl2, l1, dl1))
               - (m1 * dm2 + m2 * dm1))
        return (a3, da3), (l3, dl3), (m3, dm3)

    def component(index: int, kind: FieldKind) -> PointwiseField:
        def evaluate(target: MetricChart, p: np.ndarray):
            if target.uid != chart.uid:
                raise JordanError("点ごとの積は構成したチャートでのみ評価できます")
            return full(p)[index]

        def values(target: MetricChart, p: np.ndarray):
            if target.uid != chart.uid:
                raise JordanError("点ごとの積は構成したチャートでのみ評価できます")
            return product_values(chart.local(p).inverse, K, e1.values_at(p), e2.values_at(p))[index]
        return PointwiseField(kind, n, evaluate, values)

    return SinyukovSolution(a=component(0, FieldKind.BILINEAR), lam=component(1, FieldKind.COVECTOR),
                            mu=component(2, FieldKind.SCALAR), K=K)


def jordan_product(e1: JordanElement, e2: JordanElement,
                   grid: Optional[Union[SampleGrid, np.ndarray]] = None,
                   config: Optional[RunConfig] = None) -> JordanElement:
    """
    ジョルダン積 e1∘e2

    grid を与えると積が解であることを closure の許容誤差で検証し、
    失敗すれば ClosureError を送出します。

    Raises:
        JordanError: チャートまたは K が一致しない
        ClosureError: 積が解にならない
    """
    logger = logging.getLogger(__name__)
    config = config or RunConfig()
    _require_compatible([e1, e2])
    label = f"({e1.label or '?'}∘{e2.label or '?'})"
    if e1.chart.dim <= SYMBOLIC_PRODUCT_MAX_DIM and e1.symbolic and e2.symbolic:
        sol = _symbolic_product(e1, e2)
    else:
        logger.warning(f"{label}: 積を点ごとに評価します（次元 {e1.chart.dim}）")
        sol = _pointwise_product(e1, e2)

    product = JordanElement(chart=e1.chart, K=e1.K, solution=sol, label=label)
    if grid is not None:
        report = verify_solution(e1.chart, sol, e1.K, grid, config.tolerance("closure"), config)
        report.equation = "closure"
        product.admission = report
        if not report.passed:
            raise ClosureError(f"{label} が解になりません: 残差 {report.max:.3e}", report)
    return product


# ===== 錐上の平行形式 =====

@dataclass
class ParallelForm:
    """錐上の平行対称双線形形式"""
    cone: ConeSpace
    field: Field
    report: Optional[ResidualReport] = None

    def values_at(self, p: Sequence[float]) -> np.ndarray:
        return np.asarray(self.field.values_at(self.cone.chart, p), dtype=float)


def parallel_form(cone: ConeSpace, form: Union[Field, LiftedBilinear],
                  grid: Optional[Union[SampleGrid, np.ndarray]] = None,
                  config: Optional[RunConfig] = None) -> ParallelForm:
    """
    平行形式を作成（grid を与えると平行性を検証）

    Raises:
        JordanError: 平行でない
    """
    fld = form.field if isinstance(form, LiftedBilinear) else form
    if fld.kind is not FieldKind.BILINEAR:
        raise JordanError("双線形形式が必要です")
    report = None
    if grid is not None:
        report = check_parallel_bilinear(cone, fld, grid, config)
        if not report.passed:
            raise JordanError(f"形式が平行ではありません: 残差 {report.max:.3e}")
    return ParallelForm(cone=cone, field=fld, report=report)


def bracket_values(inverse: np.ndarray, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """{ã; b̃} = ½(ã G⁻¹ b̃ + (ã G⁻¹ b̃)ᵀ)"""
    product = first @ inverse @ second
    return 0.5 * (product + product.T)


def jordan_bracket(f1: ParallelForm, f2: ParallelForm,
                   grid: Optional[Union[SampleGrid, np.ndarray]] = None,
                   config: Optional[RunConfig] = None) -> ParallelForm:
    """
    平行形式のジョルダン括弧（点ごとに評価）

    Raises:
        JordanError: 錐が異なる、または結果が平行でない
    """
    if f1.cone is not f2.cone:
        raise JordanError("異なる錐の形式は括弧を取れません")
    cone = f1.cone
    chart = cone.chart

    def evaluate(target: MetricChart, p: np.ndarray):
        local = target.local(p)
        x, dx = f1.field.evaluate(target, p)
        y, dy = f2.field.evaluate(target, p)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        G = local.inverse
        dG = _inverse_partials(local)
        d_product = (np.einsum("isk,st,tj->ijk", dx, G, y)
                     + np.einsum("is,stk,tj->ijk", x, dG, y)
                     + np.einsum("is,st,tjk->ijk", x, G, dy))
        return bracket_values(G, x, y), 0.5 * (d_product + np.transpose(d_product, (1, 0, 2)))

    def values(target: MetricChart, p: np.ndarray):
        return bracket_values(target.local(p).inverse, f1.values_at(p), f2.values_at(p))

    field = PointwiseField(FieldKind.BILINEAR, chart.dim, evaluate, values)
    return parallel_form(cone, field, grid, config)


def lifted_values(cone: ConeSpace, values: Triple, x0: float) -> np.ndarray:
    """(a, λ, μ) の持ち上げ e^{2Kx⁰}[[μ, λ], [λ, a]] の値"""
    a, lam, mu = values
    n = len(lam)
    out = np.empty((n + 1, n + 1))
    out[0, 0] = mu
    out[0, 1:] = lam
    out[1:, 0] = lam
    out[1:, 1:] = a
    return np.exp(2.0 * cone.K * x0) * out


def check_isomorphism(e1: JordanElement, e2: JordanElement, cone: ConeSpace,
                      grid: Union[SampleGrid, np.ndarray],
                      config: Optional[RunConfig] = None) -> ResidualReport:
    """
    lift(e1∘e2) と {lift e1; lift e2} の差を錐の標本点で評価

    左辺は積の要素を底で評価して持ち上げ、右辺は錐の逆計量（一般式）で括弧を取ります。
    """
    config = config or RunConfig()
    _require_compatible([e1, e2])
    if cone.base.coordinates != e1.chart.coordinates:
        raise JordanError("錐の底チャートが要素のチャートと一致しません")
    if cone.K != e1.K:
        raise JordanError(f"錐の K={cone.K} が要素の K={e1.K} と一致しません")
    product = jordan_product(e1, e2)
    sign = -1.0 if cone.positive_norm else 1.0

    def residual(p: np.ndarray) -> np.ndarray:
        x0, q = cone.split(p)
        left = sign * lifted_values(cone, product.values_at(q), x0)
        lift1 = sign * lifted_values(cone, e1.values_at(q), x0)
        lift2 = sign * lifted_values(cone, e2.values_at(q), x0)
        right = bracket_values(cone.chart.local(p).inverse, lift1, lift2)
        return left - right

    return collect_residuals("isomorphism", residual, _grid_points(grid), config.tolerance("isomorphism"),
                             config.workers, details={"product": product.label})


def check_jordan_axioms(elements: Sequence[JordanElement], grid: Union[SampleGrid, np.ndarray],
                        config: Optional[RunConfig] = None) -> ResidualReport:
    """
    全ての組について可換性と (x∘y)∘(x∘x) = x∘(y∘(x∘x)) を点ごとに検証
    """
    config = config or RunConfig()
    if not elements:
        raise JordanError("要素が1つ以上必要です")
    _require_compatible(elements)
    chart = elements[0].chart
    K = elements[0].K
    pairs = [(i, j) for i in range(len(elements)) for j in range(len(elements))]

    def commutativity(p: np.ndarray) -> np.ndarray:
        G = chart.local(p).inverse
        values = [e.values_at(p) for e in elements]
        out = []
        for i, j in pairs:
            left = product_values(G, K, values[i], values[j])
            right = product_values(G, K, values[j], values[i])
            out.extend([np.max(np.abs(left[0] - right[0])), np.max(np.abs(left[1] - right[1])),
                        abs(left[2] - right[2])])
        return np.array(out)

    def identity(p: np.ndarray) -> np.ndarray:
        G = chart.local(p).inverse
        values = [e.values_at(p) for e in elements]
        out = []
        for i, j in pairs:
            x, y = values[i], values[j]
            xx = product_values(G, K, x, x)
            left = product_values(G, K, product_values(G, K, x, y), xx)
            right = product_values(G, K, x, product_values(G, K, y, xx))
            out.extend([np.max(np.abs(left[0] - right[0])), np.max(np.abs(left[1] - right[1])),
                        abs(left[2] - right[2])])
        return np.array(out)

    points = _grid_points(grid)
    blocks = [
        collect_residuals("commutativity", commutativity, points, config.tolerance("commutativity"),
                          config.workers),
        collect_residuals("jordan-identity", identity, points, config.tolerance("jordan-identity"),
                          config.workers),
    ]
    return combine_reports("jordan-axioms", blocks,
                           details={"elements": [e.label for e in elements], "pairs": len(pairs)})


# ===== イデアル =====

def _candidate_values(chart: MetricChart, candidates: Sequence[ConcircularCandidate],
                      p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(ρ_α) と (φ^α_i) の値"""
    rho = np.array([float(c.rho.values_at(chart, p)) for c in candidates])
    phi = np.array([np.asarray(c.phi.values_at(chart, p), dtype=float) for c in candidates])
    return rho, phi


def _stack(values: Triple) -> np.ndarray:
    a, lam, mu = values
    upper = a[np.triu_indices(len(lam))]
    return np.concatenate([upper, lam, [mu]])


def _triple_from_coefficients(S: np.ndarray, rho: np.ndarray, phi: np.ndarray) -> Triple:
    """a = Σ S φ⊗φ、λ = Σ S ρ φ、μ = Σ S ρ ρ"""
    return phi.T @ S @ phi, phi.T @ S @ rho, float(rho @ S @ rho)


def generator_basis(count: int) -> List[Tuple[Tuple[int, int], np.ndarray]]:
    """sym(φ^α⊗φ^β) (α ≤ β) に対応する対称係数行列"""
    basis = []
    for al, be in combinations_with_replacement(range(count), 2):
        C = np.zeros((count, count))
        if al == be:
            C[al, al] = 1.0
        else:
            C[al, be] = C[be, al] = 0.5
        basis.append(((al, be), C))
    return basis


def generator_elements(chart: MetricChart, candidates: Sequence[ConcircularCandidate],
                       grid: Union[SampleGrid, np.ndarray], config: Optional[RunConfig] = None,
                       K: Optional[float] = None) -> List[JordanElement]:
    """共円場から生成元 sym(φ^α⊗φ^β) を要素として構成"""
    elements = []
    for (al, be), C in generator_basis(len(candidates)):
        sol = solution_from_concircular(candidates, C, K=K)
        elements.append(admit_element(chart, sol, grid, config, label=f"b{al}{be}"))
    return elements


def recover_coefficients(chart: MetricChart, candidates: Sequence[ConcircularCandidate], e: JordanElement,
                         points: np.ndarray) -> Tuple[np.ndarray, float, int]:
    """
    Φ^β = (−ρ_β μ + K φ^β(λ*), −ρ_β λ + K a(φ^β*, ·)) を (ρ_γ, φ^γ) で最小二乗展開

    Returns:
        Tuple[np.ndarray, float, int]: (F[β, γ], 展開の最大残差, 生成系のランク)
    """
    m = len(candidates)
    K = e.K
    design_rows = []
    target_rows = []
    for p in points:
        G = chart.local(p).inverse
        rho, phi = _candidate_values(chart, candidates, p)
        a, lam, mu = e.values_at(p)
        # 列 γ: (ρ_γ, φ^γ)
        design_rows.append(np.concatenate([rho[None, :], phi.T], axis=0))
        targets = np.empty((1 + chart.dim, m))
        for beta in range(m):
            targets[0, beta] = -rho[beta] * mu + K * float(phi[beta] @ G @ lam)
            targets[1:, beta] = -rho[beta] * lam + K * (phi[beta] @ G @ a)
        target_rows.append(targets)
    design = np.concatenate(design_rows, axis=0)
    target = np.concatenate(target_rows, axis=0)
    solution, _, rank, _ = scipy.linalg.lstsq(design, target)
    fit = float(np.max(np.abs(design @ solution - target))) if target.size else 0.0
    return solution.T, fit, int(rank)


def check_ideal_membership(candidates: Sequence[ConcircularCandidate], e: JordanElement,
                           grid: Union[SampleGrid, np.ndarray], config: Optional[RunConfig] = None,
                           generators: Optional[Sequence[np.ndarray]] = None) -> ResidualReport:
    """
    共円場から生成される部分空間が e との積で閉じるかを検証

    ideal-projection: e∘b を全生成元の張る空間に最小二乗射影した残差
    ideal-reproduction: 係数 S = ½(FᵀC + CF) から組み立てた解と e∘b の差

    Args:
        generators: b の係数行列 C のリスト（省略時は sym(φ^α⊗φ^β) の全て）
    """
    logger = logging.getLogger(__name__)
    config = config or RunConfig()
    chart = e.chart
    points = _grid_points(grid)
    m = len(candidates)
    if m == 0:
        raise JordanError("共円場が1つ以上必要です")
    basis = generator_basis(m)
    targets = [np.asarray(C, dtype=float) for C in generators] if generators is not None else [C for _, C in basis]
    for C in targets:
        if C.shape != (m, m) or not np.array_equal(C, C.T):
            raise JordanError(f"係数行列が不正です: 形 {C.shape}")

    F, fit, rank = recover_coefficients(chart, candidates, e, points)

    span_columns = []
    products = []
    reproductions = []
    G_cache = []
    for p in points:
        G = chart.local(p).inverse
        G_cache.append(G)
        rho, phi = _candidate_values(chart, candidates, p)
        span_columns.append(np.stack([_stack(_triple_from_coefficients(C, rho, phi)) for _, C in basis], axis=1))
        e_values = e.values_at(p)
        row_products = []
        row_reproductions = []
        for C in targets:
            b_values = _triple_from_coefficients(C, rho, phi)
            row_products.append(_stack(product_values(G, e.K, e_values, b_values)))
            S = 0.5 * (F.T @ C + C @ F)
            row_reproductions.append(_stack(_triple_from_coefficients(S, rho, phi)))
        products.append(np.stack(row_products, axis=1))
        reproductions.append(np.stack(row_reproductions, axis=1))

    span = np.concatenate(span_columns, axis=0)
    stacked_products = np.concatenate(products, axis=0)
    span_rank = int(np.linalg.matrix_rank(span, tol=1e-8 * max(1.0, float(np.max(np.abs(span))))))
    if span_rank < len(basis):
        logger.warning(f"生成系のランクが不足しています: {span_rank} < {len(basis)}")
    coefficients, _, _, _ = scipy.linalg.lstsq(span, stacked_products)
    projection_error = span @ coefficients - stacked_products
    width = stacked_products.shape[0] // len(points)
    per_point_projection = np.abs(projection_error).reshape(len(points), width, -1).max(axis=(1, 2))
    per_point_reproduction = np.array([
        float(np.max(np.abs(prod - rep))) for prod, rep in zip(products, reproductions)
    ])

    lookup_projection = {tuple(p.tolist()): r for p, r in zip(points, per_point_projection)}
    lookup_reproduction = {tuple(p.tolist()): r for p, r in zip(points, per_point_reproduction)}
    blocks = [
        collect_residuals("ideal-projection", lambda p: lookup_projection[tuple(p.tolist())], points,
                          config.tolerance("ideal-projection")),
        collect_residuals("ideal-reproduction", lambda p: lookup_reproduction[tuple(p.tolist())], points,
                          config.tolerance("ideal-reproduction")),
    ]
    details: Dict[str, Any] = {
        "F": F,
        "fit_residual": fit,
        "rank": rank,
        "span_rank": span_rank,
        "generators": len(targets),
        "element": e.label,
    }
    return combine_reports("ideal", blocks, details=details)
