#!/usr/bin/env python3
"""
解析例カタログモジュール - 閉形式が分かっている計量・場の組

各項目は計量ファイルと場ファイルの内容（導出をコメントで記載）と、
自己検証のための検証項目（期待する合否と分類）を持ちます。

主な機能:
- 項目の一覧・取得・ファイル出力
- 各項目の検証項目の実行（期待どおりの合否・分類かを判定）
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from modules import ConlabError
from modules.cone import (
    ConeSpace, build_cone, check_cone, check_convergent_field, check_parallel_bilinear, check_parallel_covector,
    lift_concircular, lift_solution,
)
from modules.config import RunConfig
from modules.fields import (
    GeodesicPair, build_parallel_sequence, check_concircular, check_levi_civita, check_sinyukov,
    check_square_identities, check_transfer, check_vn0, check_vnk, classification_of, solution_from_metrics,
)
from modules.fileio import FieldFile, format_metric, parse_field_text, parse_metric_text, write_json, write_text
from modules.geometry import (
    MetricChart, build_sample_grid, check_metric_consistency, finite_difference_report, geodesic_map_check,
)
from modules.reports import ResidualReport


class CatalogError(ConlabError):
    """カタログ項目が見つからない・不正"""
    pass


@dataclass
class DeclaredCheck:
    """項目が宣言する検証"""
    kind: str
    args: Dict[str, Any] = field(default_factory=dict)
    expect_pass: bool = True


@dataclass
class CatalogEntry:
    """カタログ項目"""
    name: str
    note: str
    metric_text: str = ""
    files: Dict[str, str] = field(default_factory=dict)
    checks: List[DeclaredCheck] = field(default_factory=list)
    cone_of: Optional[str] = None
    cone_K: Optional[float] = None

    def chart(self) -> MetricChart:
        if self.cone_of is not None:
            return self.cone().chart
        return parse_metric_text(self.metric_text, source=f"{self.name}.metric", name=self.name)

    def cone(self) -> ConeSpace:
        if self.cone_of is None or self.cone_K is None:
            raise CatalogError(f"{self.name} は錐の項目ではありません")
        return build_cone(get_entry(self.cone_of).chart(), self.cone_K)

    def field_file(self, filename: str, dim: int) -> FieldFile:
        if filename not in self.files:
            raise CatalogError(f"{self.name} に場ファイル {filename} がありません")
        return parse_field_text(self.files[filename], dim, source=filename)


# ===== 計量・場ファイルの内容 =====

_FLAT2_METRIC = """\
# 2次元ユークリッド平面（円板モデルと同じ領域）
# Γ = 0 なので測地線は直線
dim = 2
coord 0 = x
coord 1 = y
domain 0 = -0.6 0.6
domain 1 = -0.6 0.6
g 0 0 = 1
g 1 1 = 1
"""

_FLAT2_CONC = """\
# 位置ベクトル場 φ = d(r²/2) = (x, y)
# ∂_j x_i = δ_ij = 1·g_ij なので ρ = 1（基本型・収束・K = 0 で特殊）
kind = concircular
phi 0 = x
phi 1 = y
rho = 1
K = 0
"""

_FLAT2_PARALLEL = """\
# 平行場 φ = dx（例外型 ρ = 0、収束、K = 0 で特殊）
# 円板モデルへ移すと ρ̄ = x/sqrt(1 - x² - y²) ≠ 0 となり基本型になる
kind = concircular
phi 0 = 1
rho = 0
K = 0
"""

_FLAT2_SIN = """\
# a_ij = x_i c_j + x_j c_i（c = (1, 0)）
# ∂_k a_ij = c_i δ_jk + c_j δ_ik なので λ = c、∇λ = 0 より μ = 0（V_n(0) の解）
kind = sinyukov
a 0 0 = 2*x
a 0 1 = y
lambda 0 = 1
mu = 0
K = 0
"""

_SPHERE2_METRIC = """\
# 単位球面 g = dθ² + sin²θ dφ²（極を避けた座標領域）
# 埋め込み座標 f = (cosθ, sinθcosφ, sinθsinφ) の微分が特殊共円場（K = -1）
dim = 2
coord 0 = theta
coord 1 = phi
domain 0 = 0.3 2.8
domain 1 = -3 3
g 0 0 = 1
g 1 1 = sin(theta)^2
"""

_SPHERE2_CONC = """\
# φ = d(cosθ)、∇dφ = -cosθ·g なので ρ = -cosθ
# ∇ρ = sinθ dθ = -φ より K = -1
kind = concircular
phi 0 = -sin(theta)
rho = -cos(theta)
K = -1
"""

_SPHERE2_CONC2 = """\
# φ = d(sinθ cosφ)、ρ = -sinθ cosφ、K = -1
kind = concircular
phi 0 = cos(theta)*cos(phi)
phi 1 = -sin(theta)*sin(phi)
rho = -sin(theta)*cos(phi)
K = -1
"""

_SPHERE2_CONC3 = """\
# φ = d(sinθ sinφ)、ρ = -sinθ sinφ、K = -1
kind = concircular
phi 0 = cos(theta)*sin(phi)
phi 1 = sin(theta)*cos(phi)
rho = -sin(theta)*sin(phi)
K = -1
"""

_SPHERE2_SIN = """\
# a = φ⊗φ、λ = ρφ、μ = ρ²（φ = d(cosθ)、ρ = -cosθ）
# ∇λ = ∇ρ⊗φ + ρ∇φ = Kφ⊗φ + ρ²g = K a + μ g、∇μ = 2ρKφ = 2Kλ
kind = sinyukov
a 0 0 = sin(theta)^2
lambda 0 = sin(theta)*cos(theta)
mu = cos(theta)^2
K = -1
"""

_SPHERE2_SQUARE = """\
# C = diag(1, -1, -1) による a = Σ C φ^α⊗φ^β、λ = Σ C ρ_α φ^β、μ = Σ C ρ_α ρ_β
# 展開すると a = diag(sin²θ - cos²θ, -sin²θ)、λ = (2 sinθ cosθ, 0)、μ = cos²θ - sin²θ
# C² = I なので e∘e は単位元、二乗恒等式は e = 1 で成り立つ
kind = sinyukov
a 0 0 = sin(theta)^2 - cos(theta)^2
a 1 1 = -sin(theta)^2
lambda 0 = 2*sin(theta)*cos(theta)
mu = cos(theta)^2 - sin(theta)^2
K = -1
"""

_HYPERBOLIC2_METRIC = """\
# 双曲平面の測地極座標 g = dr² + sinh²r dφ²（原点を避けた領域）
dim = 2
coord 0 = r
coord 1 = phi
domain 0 = 0.2 2.0
domain 1 = -3 3
g 0 0 = 1
g 1 1 = sinh(r)^2
"""

_HYPERBOLIC2_CONC = """\
# φ = d(cosh r)、∇dφ = cosh r·g なので ρ = cosh r
# ∇ρ = sinh r dr = φ より K = +1
kind = concircular
phi 0 = sinh(r)
rho = cosh(r)
K = 1
"""

_HYPERBOLIC2_SIN = """\
# a = φ⊗φ、λ = ρφ、μ = ρ²（φ = d(cosh r)、ρ = cosh r、K = 1）
kind = sinyukov
a 0 0 = sinh(r)^2
lambda 0 = cosh(r)*sinh(r)
mu = cosh(r)^2
K = 1
"""

_KLEIN2_METRIC = """\
# 円板モデル（クライン模型）の双曲計量
# ḡ_ij = δ_ij/(1 - |x|²) + x_i x_j/(1 - |x|²)²、測地線はユークリッドの直線
# 平面と測地的に同値: Ψ = -ln(1 - |x|²)/2、ψ = x/(1 - |x|²)
dim = 2
coord 0 = x
coord 1 = y
domain 0 = -0.6 0.6
domain 1 = -0.6 0.6
g 0 0 = 1/(1 - x^2 - y^2) + x^2/(1 - x^2 - y^2)^2
g 0 1 = x*y/(1 - x^2 - y^2)^2
g 1 1 = 1/(1 - x^2 - y^2) + y^2/(1 - x^2 - y^2)^2
"""

_KLEIN2_SIN = """\
# 平面と円板モデルの組から作る解（平面上の解）
# a = e^{2Ψ} ḡ^{-1} = I - x⊗x、λ = -a ψ = -x、∇λ = -g より μ = -1（K = 0）
kind = sinyukov
a 0 0 = 1 - x^2
a 0 1 = -x*y
a 1 1 = 1 - y^2
lambda 0 = -x
lambda 1 = -y
mu = -1
K = 0
"""

_CONFORMAL2_METRIC = """\
# 平面の共形変形 ḡ = e^x δ（平面と測地的に同値ではない負の対照例）
dim = 2
coord 0 = x
coord 1 = y
domain 0 = -0.6 0.6
domain 1 = -0.6 0.6
g 0 0 = exp(x)
g 1 1 = exp(x)
"""

_FLAT_VN0_METRIC = """\
# ローレンツ符号の3次元平坦空間 g = 2 du dv + dz²
dim = 3
coord 0 = u
coord 1 = v
coord 2 = z
domain 0 = -1 1
domain 1 = -1 1
domain 2 = -1 1
g 0 1 = 1
g 2 2 = 1
"""

_FLAT_VN0_SIN = """\
# 零的な平行場 λ = du（λ* = ∂_v、λ(λ*) = 0）と X = g x = (v, u, z) から
# a = λ⊗X + X⊗λ + B（B_uz = B_zu = 1）、∇a = λ⊗g + g⊗λ、∇λ = 0 より μ = 0
kind = sinyukov
a 0 0 = 2*v
a 0 1 = u
a 0 2 = z + 1
lambda 0 = 1
mu = 0
K = 0
"""

_FLAT_VN0_COVECTOR = """\
# 平行場 φ¹ = dz（φ¹(λ*) = 0）
# φ² = φ¹(A·) - f¹λ = (1 + z₀) du は λ に比例し、φ³ = 0 で列が止まる（長さ2）
kind = covector
w 2 = 1
"""


def _conc(field_name: str, expected: Dict[str, Any]) -> DeclaredCheck:
    return DeclaredCheck("concircular", {"field": field_name, "expected": expected})


_ENTRIES: Dict[str, CatalogEntry] = {}


def _register(entry: CatalogEntry) -> None:
    _ENTRIES[entry.name] = entry


_register(CatalogEntry(
    name="flat2",
    note="2次元平面: 位置ベクトル場（基本型）と平行場（例外型）、V_n(0) の解",
    metric_text=_FLAT2_METRIC,
    files={"flat2.conc": _FLAT2_CONC, "flat2.parallel": _FLAT2_PARALLEL, "flat2.sin": _FLAT2_SIN},
    checks=[
        _conc("flat2.conc", {"class": "basic", "special": True, "K": 0.0, "convergent": True}),
        _conc("flat2.parallel", {"class": "exceptional", "special": True, "K": 0.0, "convergent": True}),
        DeclaredCheck("sinyukov", {"field": "flat2.sin"}),
        DeclaredCheck("vn0", {"field": "flat2.sin"}),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": ["flat2.conc", "flat2.sin"]}),
    ],
))

_register(CatalogEntry(
    name="sphere2",
    note="単位球面（K = -1）: 3つの特殊共円場、V_n(K) の解、二乗恒等式の例",
    metric_text=_SPHERE2_METRIC,
    files={
        "sphere2.conc": _SPHERE2_CONC, "sphere2.conc2": _SPHERE2_CONC2, "sphere2.conc3": _SPHERE2_CONC3,
        "sphere2.sin": _SPHERE2_SIN, "sphere2.square": _SPHERE2_SQUARE,
    },
    checks=[
        _conc("sphere2.conc", {"class": "basic", "special": True, "K": -1.0, "convergent": False}),
        _conc("sphere2.conc2", {"class": "basic", "special": True, "K": -1.0, "convergent": False}),
        _conc("sphere2.conc3", {"class": "basic", "special": True, "K": -1.0, "convergent": False}),
        DeclaredCheck("sinyukov", {"field": "sphere2.sin"}),
        DeclaredCheck("vnk", {"field": "sphere2.sin"}),
        DeclaredCheck("vnk", {"field": "sphere2.square"}),
        DeclaredCheck("square", {"field": "sphere2.square", "e": 1}),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": ["sphere2.conc", "sphere2.conc2", "sphere2.sin"]}),
    ],
))

_register(CatalogEntry(
    name="hyperbolic2",
    note="双曲平面の測地極座標（K = +1）: 特殊共円場 d(cosh r) と V_n(K) の解",
    metric_text=_HYPERBOLIC2_METRIC,
    files={"hyperbolic2.conc": _HYPERBOLIC2_CONC, "hyperbolic2.sin": _HYPERBOLIC2_SIN},
    checks=[
        _conc("hyperbolic2.conc", {"class": "basic", "special": True, "K": 1.0, "convergent": False}),
        DeclaredCheck("sinyukov", {"field": "hyperbolic2.sin"}),
        DeclaredCheck("vnk", {"field": "hyperbolic2.sin"}),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": ["hyperbolic2.conc", "hyperbolic2.sin"]}),
    ],
))

_register(CatalogEntry(
    name="klein2",
    note="円板モデル: 平面 flat2 と測地的に同値（ψ は行列式比から自動計算）",
    metric_text=_KLEIN2_METRIC,
    files={"klein2.sin": _KLEIN2_SIN},
    checks=[
        DeclaredCheck("levicivita", {"partner": "flat2"}),
        DeclaredCheck("geodesic-map", {"partner": "flat2", "x0": [-0.5, -0.2], "v0": [0.8, 0.3]}),
        DeclaredCheck("sinyukov", {"field": "klein2.sin", "chart": "flat2"}),
        DeclaredCheck("vn0", {"field": "klein2.sin", "chart": "flat2"}),
        DeclaredCheck("solution-from-metrics", {"partner": "flat2"}),
        DeclaredCheck("transfer", {"partner": "flat2", "field": "flat2.conc"}),
        DeclaredCheck("transfer", {"partner": "flat2", "field": "flat2.parallel"}),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": []}),
    ],
))

_register(CatalogEntry(
    name="conformal2",
    note="平面の共形変形 e^x δ: flat2 と同値でない負の対照例（検証が失敗することを確認）",
    metric_text=_CONFORMAL2_METRIC,
    checks=[
        DeclaredCheck("levicivita", {"partner": "flat2"}, expect_pass=False),
        DeclaredCheck("geodesic-map", {"partner": "flat2", "x0": [-0.5, -0.2], "v0": [0.8, 0.3]},
                      expect_pass=False),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": []}),
    ],
))

_register(CatalogEntry(
    name="flat-vn0",
    note="ローレンツ符号の平坦空間: 零的な λ をもつ V_n(0) の解と平行余ベクトル列（長さ2）",
    metric_text=_FLAT_VN0_METRIC,
    files={"flat-vn0.sin": _FLAT_VN0_SIN, "flat-vn0.w": _FLAT_VN0_COVECTOR},
    checks=[
        DeclaredCheck("vn0", {"field": "flat-vn0.sin"}),
        DeclaredCheck("sequence", {"field": "flat-vn0.sin", "covector": "flat-vn0.w", "min_length": 2}),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": ["flat-vn0.sin"]}),
    ],
))

_register(CatalogEntry(
    name="cone-of-hyperbolic2",
    note="hyperbolic2 の錐（K = 1）: 収束場、持ち上げた共円場と解の平行性",
    cone_of="hyperbolic2",
    cone_K=1.0,
    checks=[
        DeclaredCheck("cone"),
        DeclaredCheck("cone-convergent"),
        DeclaredCheck("lift-concircular", {"field": "hyperbolic2.conc"}),
        DeclaredCheck("lift-solution", {"field": "hyperbolic2.sin"}),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": []}),
    ],
))

_register(CatalogEntry(
    name="cone-of-sphere2",
    note="sphere2 の錐（K = -1）: 収束場、持ち上げた共円場と解の平行性",
    cone_of="sphere2",
    cone_K=-1.0,
    checks=[
        DeclaredCheck("cone"),
        DeclaredCheck("cone-convergent"),
        DeclaredCheck("lift-concircular", {"field": "sphere2.conc"}),
        DeclaredCheck("lift-concircular", {"field": "sphere2.conc2"}),
        DeclaredCheck("lift-solution", {"field": "sphere2.sin"}),
        DeclaredCheck("lift-solution", {"field": "sphere2.square"}),
        DeclaredCheck("metric-consistency"),
        DeclaredCheck("fd-oracle", {"fields": []}),
    ],
))


# ===== 取得・出力 =====

def list_entries() -> List[str]:
    return list(_ENTRIES)


def get_entry(name: str) -> CatalogEntry:
    try:
        return _ENTRIES[name]
    except KeyError:
        raise CatalogError(f"カタログに {name!r} はありません（{', '.join(_ENTRIES)}）") from None


def find_field_text(filename: str) -> Tuple[CatalogEntry, str]:
    """全項目から場ファイルを探す"""
    for entry in _ENTRIES.values():
        if filename in entry.files:
            return entry, entry.files[filename]
    raise CatalogError(f"カタログに場ファイル {filename!r} はありません")


def metric_text(entry: CatalogEntry) -> str:
    """項目の計量ファイル内容（錐は底から生成）"""
    if entry.cone_of is None:
        return entry.metric_text
    cone = entry.cone()
    return format_metric(cone.chart, comments=[
        f"{entry.cone_of} の錐 G = e^(2Kx0)·diag(-1, g/K)、K = {entry.cone_K}",
    ])


def emit_entry(name: str, directory: Union[str, Path]) -> List[Path]:
    """項目の計量・場ファイル（錐は補助JSONも）を書き出す"""
    entry = get_entry(name)
    directory = Path(directory)
    written = [write_text(directory / f"{entry.name}.metric", metric_text(entry))]
    for filename, text in entry.files.items():
        written.append(write_text(directory / filename, text))
    if entry.cone_of is not None:
        written.append(write_json(directory / f"{entry.name}.cone.json",
                                  entry.cone().sidecar(f"{entry.cone_of}.metric")))
    logging.getLogger(__name__).info(f"{name}: {len(written)} ファイルを書き出しました")
    return written


# ===== 自己検証 =====

def _compare_classification(report: ResidualReport, expected: Dict[str, Any]) -> ResidualReport:
    actual = classification_of(report)
    mismatches = {}
    for key, value in expected.items():
        got = actual.get(key)
        if key == "K":
            ok = got is not None and abs(float(got) - float(value)) <= 1e-8
        else:
            ok = got == value
        if not ok:
            mismatches[key] = {"expected": value, "actual": got}
    if mismatches:
        report.passed = False
        report.details["classification_mismatch"] = mismatches
    return report


def _run_check(entry: CatalogEntry, check: DeclaredCheck, config: RunConfig) -> ResidualReport:
    args = check.args
    kind = check.kind

    if kind == "metric-consistency":
        chart = entry.chart()
        return check_metric_consistency(chart, build_sample_grid(chart, config), config)

    if entry.cone_of is not None:
        cone = entry.cone()
        base = get_entry(entry.cone_of)
        cone_grid = build_sample_grid(cone.chart, config)
        base_grid = build_sample_grid(cone.base, config)
        if kind == "cone":
            return check_cone(cone, cone_grid, config)
        if kind == "cone-convergent":
            return check_convergent_field(cone, cone_grid, config)
        if kind == "lift-concircular":
            candidate = base.field_file(args["field"], cone.base.dim).value
            lifted = lift_concircular(cone, candidate, base_grid, config)
            return check_parallel_covector(cone, lifted, cone_grid, config)
        if kind == "lift-solution":
            sol = base.field_file(args["field"], cone.base.dim).value
            lifted = lift_solution(cone, sol, base_grid, config)
            return check_parallel_bilinear(cone, lifted, cone_grid, config)
        if kind == "fd-oracle":
            return finite_difference_report(cone.chart, cone_grid, config.tolerance("fd-oracle"),
                                            workers=config.workers)
        raise CatalogError(f"未知の検証です: {kind}")

    chart = entry.chart()
    if "chart" in args:
        chart = get_entry(args["chart"]).chart()
    grid = build_sample_grid(chart, config)

    def field_value(filename: str) -> Any:
        _, text = find_field_text(filename)
        return parse_field_text(text, chart.dim, source=filename).value

    def pair() -> GeodesicPair:
        return GeodesicPair(get_entry(args["partner"]).chart(), chart)

    if kind == "concircular":
        report = check_concircular(chart, field_value(args["field"]), grid, config)
        return _compare_classification(report, args.get("expected", {}))
    if kind == "sinyukov":
        return check_sinyukov(chart, field_value(args["field"]), grid, config)
    if kind == "vnk":
        return check_vnk(chart, field_value(args["field"]), grid, config)
    if kind == "vn0":
        return check_vn0(chart, field_value(args["field"]), grid, config)
    if kind == "square":
        return check_square_identities(chart, field_value(args["field"]), int(args["e"]), grid, config)
    if kind == "levicivita":
        return check_levi_civita(pair(), grid, config)
    if kind == "geodesic-map":
        partner = get_entry(args["partner"]).chart()
        return geodesic_map_check(partner, chart, args["x0"], args["v0"],
                                  tolerance=config.tolerance("geodesic-map"))
    if kind == "solution-from-metrics":
        geodesic_pair = pair()
        sol = solution_from_metrics(geodesic_pair)
        return check_sinyukov(geodesic_pair.joint_g, sol, build_sample_grid(geodesic_pair.joint_g, config), config)
    if kind == "transfer":
        geodesic_pair = pair()
        candidate = field_value(args["field"])
        return check_transfer(geodesic_pair, candidate, grid, config)
    if kind == "sequence":
        sequence = build_parallel_sequence(chart, field_value(args["field"]), field_value(args["covector"]),
                                           grid=grid, config=config)
        report = sequence.report
        report.details.update({"stop_reason": sequence.stop_reason.value, "obstruction": sequence.obstruction})
        minimum = int(args.get("min_length", 1))
        if len(sequence) < minimum:
            report.passed = False
            report.details["length_short"] = {"expected_min": minimum, "actual": len(sequence)}
        return report
    if kind == "fd-oracle":
        fields: List[Tuple[str, Any]] = []
        for filename in args.get("fields", []):
            value = field_value(filename)
            for label, component in field_components(filename, value):
                fields.append((label, component))
        return finite_difference_report(chart, grid, config.tolerance("fd-oracle"), fields=fields,
                                        workers=config.workers)
    raise CatalogError(f"未知の検証です: {kind}")


def field_components(filename: str, value: Any) -> List[Tuple[str, Any]]:
    """場ファイルの値から微分を確認する成分を取り出す"""
    parts: List[Tuple[str, Any]] = []
    for attr in ("phi", "rho", "a", "lam", "mu"):
        component = getattr(value, attr, None)
        if component is not None:
            parts.append((f"{filename}:{attr}", component))
    if not parts:
        parts.append((filename, value))
    return parts


def _expect_failure(report: ResidualReport) -> ResidualReport:
    """失敗を期待する検証（負の対照例）を、失敗したとき合格となるレポートで包む"""
    return ResidualReport(
        equation=f"expect-fail:{report.equation}", max=report.max, mean=report.mean,
        tolerance=report.tolerance, points=report.points, passed=not report.passed,
        worst_point=list(report.worst_point), blocks=[report], details={"expected_pass": False},
    )


def run_declared_checks(name: str, config: Optional[RunConfig] = None,
                        progress: Optional[Callable[[str], None]] = None) -> Tuple[List[ResidualReport], bool]:
    """
    項目の検証を全て実行

    失敗を期待する検証は、期待どおり失敗したとき合格となるレポートで返します。

    Returns:
        Tuple[List[ResidualReport], bool]: (レポート, 全ての検証が期待どおりか)
    """
    logger = logging.getLogger(__name__)
    config = config or RunConfig()
    entry = get_entry(name)
    reports = []
    for check in entry.checks:
        if progress is not None:
            progress(f"{name}: {check.kind} {check.args.get('field', '')}".rstrip())
        report = _run_check(entry, check, config)
        if not check.expect_pass:
            report = _expect_failure(report)
        if not report.passed:
            logger.warning(f"{name}: {check.kind} が期待と異なります（最大残差 {report.max:.3e}）")
        reports.append(report)
    return reports, all(report.passed for report in reports)
