#!/usr/bin/env python3
"""
幾何計算モジュール - 計量チャート・接続・共変微分・測地線

座標チャート上で式として与えた計量から、逆計量・クリストッフェル記号・
共変微分・添字の上げ下げ・測地線積分を数値的に計算します。
微分は全て数式言語の記号微分から得るため、数値差分は検証用の参照値にだけ使います。

主な機能:
- MetricChart: 座標名・領域・計量成分・名前付き定数を持つチャート
- 式で与える場（スカラー・余ベクトル・対称双線形形式）と点ごとに計算する場
- クリストッフェル記号 Γ^k_ij（i,j について鏡映で厳密に対称）
- 余ベクトル・双線形形式・ベクトルの共変微分
- 標本格子（乱数シード固定のランダム点＋等間隔格子）
- 古典的4次ルンゲ＝クッタ法による測地線積分と測地写像チェック
- 中心差分による微分の参照チェック

配列の添字規約:
- 計量の偏微分: dg[k, i, j] = ∂_k g_ij
- クリストッフェル記号: gamma[k, i, j] = Γ^k_ij
- 余ベクトルの偏微分: partials[i, j] = ∂_j φ_i
- 双線形形式の偏微分: partials[i, j, k] = ∂_k a_ij
"""

import itertools
import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from modules import ConlabError
from modules.config import RunConfig
from modules.dsl import (
    CompiledExpression, Expr, RESERVED_NAMES, UnboundVariableError,
    as_expr, differentiate, free_variables, is_zero, parse, symbolic_determinant, symbolic_inverse,
)
from modules.reports import ResidualReport, collect_residuals, combine_reports


class GeometryError(ConlabError):
    """幾何計算の基底例外"""
    pass


class SingularMetricError(GeometryError):
    """計量が特異（逆行列が存在しない）"""

    def __init__(self, point: Sequence[float], determinant: float):
        self.point = [float(x) for x in point]
        self.determinant = float(determinant)
        super().__init__(f"計量が特異です: 点 {self.point}, det={self.determinant:.3e}")


class SamplePolicy(Enum):
    """標本点の取り方"""
    LATTICE = "lattice"
    RANDOM = "random"
    MIXED = "mixed"


class FieldKind(Enum):
    """場の種類"""
    SCALAR = "scalar"
    COVECTOR = "covector"
    BILINEAR = "bilinear"


# 行列式がこれ以下（スケール込み）なら特異とみなす
SINGULAR_TOLERANCE = 1e-12
# 格子点数の上限（高次元チャートで格子が爆発しないように）
MAX_LATTICE_POINTS = 4096
# 局所幾何量キャッシュの上限
_LOCAL_CACHE_LIMIT = 8192

ExprSource = Union[Expr, str, float, int]


def _to_expr(source: ExprSource) -> Expr:
    if isinstance(source, str):
        return parse(source)
    return as_expr(source)


class _CompiledArray:
    """式の配列をコンパイルし、値と座標偏微分を返す"""

    def __init__(self, exprs: Sequence[Expr], shape: Tuple[int, ...], coordinates: Sequence[str]):
        self.shape = shape
        self.dim = len(coordinates)
        compiled: Dict[int, CompiledExpression] = {}
        derivative_cache: Dict[Tuple[int, int], Optional[CompiledExpression]] = {}
        self._values: List[Tuple[int, CompiledExpression]] = []
        self._partials: List[Tuple[int, int, CompiledExpression]] = []
        for index, expr in enumerate(exprs):
            if is_zero(expr):
                continue
            key = id(expr)
            if key not in compiled:
                compiled[key] = CompiledExpression(expr)
            self._values.append((index, compiled[key]))
            for axis, name in enumerate(coordinates):
                cache_key = (key, axis)
                if cache_key not in derivative_cache:
                    derivative = differentiate(expr, name)
                    derivative_cache[cache_key] = None if is_zero(derivative) else CompiledExpression(derivative)
                if derivative_cache[cache_key] is not None:
                    self._partials.append((index, axis, derivative_cache[cache_key]))

    def values(self, env: Mapping[str, float]) -> np.ndarray:
        flat = np.zeros(int(np.prod(self.shape)) if self.shape else 1)
        for index, fn in self._values:
            flat[index] = fn(env)
        return flat.reshape(self.shape) if self.shape else flat[0]

    def partials(self, env: Mapping[str, float]) -> np.ndarray:
        size = int(np.prod(self.shape)) if self.shape else 1
        flat = np.zeros((size, self.dim))
        for index, axis, fn in self._partials:
            flat[index, axis] = fn(env)
        return flat.reshape(self.shape + (self.dim,))


@dataclass
class LocalGeometry:
    """1点における計量・逆計量・計量の偏微分・クリストッフェル記号"""
    point: np.ndarray
    metric: np.ndarray
    inverse: np.ndarray
    metric_partials: np.ndarray
    christoffel: np.ndarray


class MetricChart:
    """
    計量チャート

    座標名・各座標の閉区間・計量成分（式）・名前付き定数を保持します。
    計量は対称で、(i,j) と (j,i) に異なる式を与えるとエラーになります。
    """

    _uids = itertools.count()

    def __init__(self,
                 coordinates: Sequence[str],
                 domain: Sequence[Tuple[float, float]],
                 metric: Sequence[Sequence[ExprSource]],
                 constants: Optional[Mapping[str, float]] = None,
                 name: str = "chart"):
        """
        チャート初期化

        Args:
            coordinates: 座標名（n個）
            domain: 各座標の閉区間 (lo, hi)
            metric: n×n の計量成分（式または文字列）
            constants: 名前付き定数
            name: チャート名（ログ用）

        Raises:
            GeometryError: 次元・名前・領域・対称性が不正
            UnboundVariableError: 計量に未束縛の変数がある
        """
        self.name = name
        self.uid = next(MetricChart._uids)
        self.logger = logging.getLogger(f"{__name__}.{name}")

        self.coordinates: Tuple[str, ...] = tuple(coordinates)
        n = len(self.coordinates)
        if n < 2:
            raise GeometryError(f"次元は2以上である必要があります: {n}")
        if len(set(self.coordinates)) != n:
            raise GeometryError(f"座標名が重複しています: {self.coordinates}")
        self.constants: Dict[str, float] = {str(k): float(v) for k, v in (constants or {}).items()}
        for label in self.coordinates + tuple(self.constants):
            if not label.isidentifier() or label in RESERVED_NAMES:
                raise GeometryError(f"使用できない名前です: {label!r}")
        clash = set(self.coordinates) & set(self.constants)
        if clash:
            raise GeometryError(f"座標名と定数名が衝突しています: {sorted(clash)}")
        for label, value in self.constants.items():
            if not np.isfinite(value):
                raise GeometryError(f"定数 {label} が有限ではありません")

        if len(domain) != n:
            raise GeometryError(f"領域の数が次元と一致しません: {len(domain)} != {n}")
        self.domain = np.array([[float(lo), float(hi)] for lo, hi in domain])
        if not np.all(np.isfinite(self.domain)) or np.any(self.domain[:, 0] >= self.domain[:, 1]):
            raise GeometryError(f"領域が不正です: {self.domain.tolist()}")

        if len(metric) != n or any(len(row) != n for row in metric):
            raise GeometryError(f"計量は {n}×{n} である必要があります")
        rows = [[_to_expr(entry) for entry in row] for row in metric]
        for i in range(n):
            for j in range(i + 1, n):
                if rows[i][j] != rows[j][i]:
                    raise GeometryError(f"計量が対称ではありません: g[{i}][{j}] != g[{j}][{i}]")
        # 上三角の式を鏡映して同一オブジェクトを共有する
        self.metric_exprs: List[List[Expr]] = [
            [rows[min(i, j)][max(i, j)] for j in range(n)] for i in range(n)
        ]
        self.check_bound(e for row in self.metric_exprs for e in row)

        self._metric = _CompiledArray([e for row in self.metric_exprs for e in row], (n, n), self.coordinates)
        self._local_cache: Dict[Tuple[float, ...], LocalGeometry] = {}
        self._cache_lock = threading.Lock()
        self._inverse_exprs: Optional[Tuple[List[List[Expr]], Expr]] = None
        self.logger.debug(f"チャートを作成しました: dim={n}, 座標={self.coordinates}")

    @property
    def dim(self) -> int:
        return len(self.coordinates)

    def check_bound(self, exprs) -> None:
        """式の自由変数が座標名か定数名であることを確認"""
        known = set(self.coordinates) | set(self.constants)
        for expr in exprs:
            unknown = free_variables(expr) - known
            if unknown:
                raise UnboundVariableError(sorted(unknown)[0])

    def compile_array(self, exprs: Sequence[Expr], shape: Tuple[int, ...]) -> _CompiledArray:
        self.check_bound(exprs)
        return _CompiledArray(exprs, shape, self.coordinates)

    def environment(self, p: Sequence[float]) -> Dict[str, float]:
        """評価用の変数環境（定数＋座標値）"""
        env = dict(self.constants)
        for label, value in zip(self.coordinates, p):
            env[label] = float(value)
        return env

    def contains(self, p: Sequence[float]) -> bool:
        """点が閉領域に含まれるか"""
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.domain[:, 0]) and np.all(p <= self.domain[:, 1]))

    def center(self) -> np.ndarray:
        return self.domain.mean(axis=1)

    def metric_at(self, p: Sequence[float]) -> np.ndarray:
        return self._metric.values(self.environment(p))

    def metric_partials_at(self, p: Sequence[float]) -> np.ndarray:
        """dg[k, i, j] = ∂_k g_ij"""
        return np.transpose(self._metric.partials(self.environment(p)), (2, 0, 1))

    def local(self, p: Sequence[float]) -> LocalGeometry:
        """1点の局所幾何量（キャッシュ付き）"""
        point = np.asarray(p, dtype=float)
        key = tuple(point.tolist())
        with self._cache_lock:
            cached = self._local_cache.get(key)
        if cached is not None:
            return cached
        g = self.metric_at(point)
        ginv = _invert(g, point)
        dg = self.metric_partials_at(point)
        gamma = _christoffel_from(ginv, dg)
        local = LocalGeometry(point=point, metric=g, inverse=ginv, metric_partials=dg, christoffel=gamma)
        with self._cache_lock:
            if len(self._local_cache) >= _LOCAL_CACHE_LIMIT:
                self._local_cache.clear()
            self._local_cache[key] = local
        return local

    def inverse_exprs(self) -> Tuple[List[List[Expr]], Expr]:
        """逆計量の式と行列式の式（余因子展開・初回のみ計算）"""
        if self._inverse_exprs is None:
            self._inverse_exprs = symbolic_inverse(self.metric_exprs)
        return self._inverse_exprs

    def determinant_expr(self) -> Expr:
        return symbolic_determinant(self.metric_exprs)

    def with_constants(self, extra: Mapping[str, float], name: Optional[str] = None) -> "MetricChart":
        """定数を追加したチャートを返す（同じ値の重複は許す）"""
        merged = dict(self.constants)
        for label, value in extra.items():
            if label in merged and merged[label] != float(value):
                raise GeometryError(f"定数 {label} の値が一致しません: {merged[label]} != {value}")
            merged[label] = float(value)
        return MetricChart(self.coordinates, self.domain.tolist(), self.metric_exprs, merged,
                           name=name or self.name)


def _invert(g: np.ndarray, point: np.ndarray) -> np.ndarray:
    n = g.shape[0]
    det = float(np.linalg.det(g))
    scale = max(1.0, float(np.max(np.abs(g)))) ** n
    if not np.isfinite(det) or abs(det) <= SINGULAR_TOLERANCE * scale:
        raise SingularMetricError(point, det)
    try:
        inverse = np.linalg.solve(g, np.eye(n))
    except np.linalg.LinAlgError:
        raise SingularMetricError(point, det) from None
    return 0.5 * (inverse + inverse.T)


def _christoffel_from(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    n = ginv.shape[0]
    gamma = np.empty((n, n, n))
    for i in range(n):
        for j in range(i, n):
            # ∂_i g_sj + ∂_j g_si − ∂_s g_ij
            t = dg[i, :, j] + dg[j, :, i] - dg[:, i, j]
            column = 0.5 * (ginv @ t)
            gamma[:, i, j] = column
            gamma[:, j, i] = column
    return gamma


def inverse_metric(chart: MetricChart, p: Sequence[float]) -> np.ndarray:
    """逆計量 g^ij（特異なら SingularMetricError）"""
    return chart.local(p).inverse


def christoffel(chart: MetricChart, p: Sequence[float]) -> np.ndarray:
    """クリストッフェル記号 gamma[k, i, j] = Γ^k_ij"""
    return chart.local(p).christoffel


# ===== 場 =====

class ExprField:
    """式で与える場の基底クラス"""

    kind: FieldKind = FieldKind.SCALAR

    def __init__(self, flat: Sequence[Expr], shape: Tuple[int, ...]):
        self._flat = list(flat)
        self.shape = shape
        self._compiled: Dict[int, _CompiledArray] = {}

    @property
    def dim(self) -> Optional[int]:
        return self.shape[0] if self.shape else None

    def _compiled_for(self, chart: MetricChart) -> _CompiledArray:
        compiled = self._compiled.get(chart.uid)
        if compiled is None:
            if self.shape and self.shape[0] != chart.dim:
                raise GeometryError(f"場の次元 {self.shape[0]} がチャートの次元 {chart.dim} と一致しません")
            compiled = chart.compile_array(self._flat, self.shape)
            self._compiled[chart.uid] = compiled
        return compiled

    def evaluate(self, chart: MetricChart, p: Sequence[float]) -> Tuple[Any, np.ndarray]:
        """値と座標偏微分を返す"""
        env = chart.environment(p)
        compiled = self._compiled_for(chart)
        return compiled.values(env), compiled.partials(env)

    def values_at(self, chart: MetricChart, p: Sequence[float]) -> Any:
        return self._compiled_for(chart).values(chart.environment(p))


class ScalarField(ExprField):
    """スカラー場 f"""

    kind = FieldKind.SCALAR

    def __init__(self, expr: ExprSource):
        self.expr = _to_expr(expr)
        super().__init__([self.expr], ())


class CovectorField(ExprField):
    """余ベクトル場 φ_i"""

    kind = FieldKind.COVECTOR

    def __init__(self, components: Sequence[ExprSource]):
        self.components: List[Expr] = [_to_expr(c) for c in components]
        super().__init__(self.components, (len(self.components),))


class BilinearField(ExprField):
    """対称双線形形式の場 a_ij"""

    kind = FieldKind.BILINEAR

    def __init__(self, components: Sequence[Sequence[ExprSource]]):
        rows = [[_to_expr(c) for c in row] for row in components]
        n = len(rows)
        if any(len(row) != n for row in rows):
            raise GeometryError("双線形形式は正方行列である必要があります")
        for i in range(n):
            for j in range(i + 1, n):
                if rows[i][j] != rows[j][i]:
                    raise GeometryError(f"双線形形式が対称ではありません: ({i},{j})")
        self.components: List[List[Expr]] = [[rows[min(i, j)][max(i, j)] for j in range(n)] for i in range(n)]
        super().__init__([e for row in self.components for e in row], (n, n))


class PointwiseField:
    """
    点ごとに数値計算する場

    式として持てない場（列の要素・高次元の積など）に使います。
    evaluate は ExprField と同じく (値, 偏微分) を返します。
    """

    def __init__(self, kind: FieldKind, dim: int,
                 evaluator: Callable[[MetricChart, np.ndarray], Tuple[Any, np.ndarray]],
                 values_evaluator: Optional[Callable[[MetricChart, np.ndarray], Any]] = None):
        self.kind = kind
        self.shape: Tuple[int, ...] = () if kind is FieldKind.SCALAR else (
            (dim,) if kind is FieldKind.COVECTOR else (dim, dim))
        self._evaluator = evaluator
        self._values_evaluator = values_evaluator

    @property
    def dim(self) -> Optional[int]:
        return self.shape[0] if self.shape else None

    def evaluate(self, chart: MetricChart, p: Sequence[float]) -> Tuple[Any, np.ndarray]:
        return self._evaluator(chart, np.asarray(p, dtype=float))

    def values_at(self, chart: MetricChart, p: Sequence[float]) -> Any:
        if self._values_evaluator is not None:
            return self._values_evaluator(chart, np.asarray(p, dtype=float))
        return self.evaluate(chart, p)[0]


Field = Union[ExprField, PointwiseField]


# ===== 共変微分・添字操作 =====

def covariant_derivative_covector(chart: MetricChart, phi: Field, p: Sequence[float]) -> np.ndarray:
    """D[i, j] = ∇_j φ_i = ∂_j φ_i − Γ^s_ij φ_s"""
    values, partials = phi.evaluate(chart, p)
    gamma = chart.local(p).christoffel
    return partials - np.einsum("sij,s->ij", gamma, values)


def covariant_derivative_bilinear(chart: MetricChart, a: Field, p: Sequence[float]) -> np.ndarray:
    """D[i, j, k] = ∇_k a_ij = ∂_k a_ij − Γ^s_ki a_sj − Γ^s_kj a_is"""
    values, partials = a.evaluate(chart, p)
    gamma = chart.local(p).christoffel
    return (partials
            - np.einsum("ski,sj->ijk", gamma, values)
            - np.einsum("skj,is->ijk", gamma, values))


def covariant_derivative_vector(chart: MetricChart, values: np.ndarray, partials: np.ndarray,
                                p: Sequence[float]) -> np.ndarray:
    """D[i, j] = ∇_j v^i = ∂_j v^i + Γ^i_js v^s（partials[i, j] = ∂_j v^i）"""
    gamma = chart.local(p).christoffel
    return partials + np.einsum("ijs,s->ij", gamma, values)


def raise_index(chart: MetricChart, omega: Sequence[float], p: Sequence[float]) -> np.ndarray:
    """ω^i = g^ij ω_j"""
    return chart.local(p).inverse @ np.asarray(omega, dtype=float)


def lower_index(chart: MetricChart, vector: Sequence[float], p: Sequence[float]) -> np.ndarray:
    """v_i = g_ij v^j"""
    return chart.local(p).metric @ np.asarray(vector, dtype=float)


def exterior_derivative(chart: MetricChart, phi: Field, p: Sequence[float]) -> np.ndarray:
    """(dφ)_ij = ∂_i φ_j − ∂_j φ_i"""
    _, partials = phi.evaluate(chart, p)
    return partials.T - partials


# ===== 標本格子 =====

@dataclass
class SampleGrid:
    """検証に使う標本点の集合"""
    points: np.ndarray
    policy: SamplePolicy
    seed: int
    description: str = ""

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def build_sample_grid(chart: MetricChart, config: Optional[RunConfig] = None,
                      policy: SamplePolicy = SamplePolicy.MIXED) -> SampleGrid:
    """
    チャートの領域内に標本点を生成

    領域を区間幅の inset 倍だけ内側に縮めた箱から、シード固定のランダム点と
    等間隔格子の点を取ります。同じ設定なら常に同じ点列になります。
    """
    config = config or RunConfig()
    width = chart.domain[:, 1] - chart.domain[:, 0]
    lo = chart.domain[:, 0] + config.inset * width
    hi = chart.domain[:, 1] - config.inset * width
    parts: List[np.ndarray] = []

    if policy in (SamplePolicy.RANDOM, SamplePolicy.MIXED) and config.random_points > 0:
        rng = np.random.default_rng(config.seed)
        parts.append(lo + (hi - lo) * rng.random((config.random_points, chart.dim)))

    if policy in (SamplePolicy.LATTICE, SamplePolicy.MIXED) and config.lattice_per_axis > 0:
        per_axis = config.lattice_per_axis
        while per_axis > 1 and per_axis ** chart.dim > MAX_LATTICE_POINTS:
            per_axis -= 1
        axes = [np.linspace(lo[i], hi[i], per_axis) if per_axis > 1 else np.array([(lo[i] + hi[i]) / 2])
                for i in range(chart.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        parts.append(np.stack([m.ravel() for m in mesh], axis=1))

    if not parts:
        raise GeometryError(f"標本点がありません: policy={policy.value}")
    points = np.concatenate(parts, axis=0)
    return SampleGrid(points=points, policy=policy, seed=config.seed,
                      description=f"{chart.name}: {len(points)} 点 ({policy.value})")


def grid_from_points(points: Sequence[Sequence[float]], seed: int = 0) -> SampleGrid:
    """任意の点列から標本格子を作る"""
    array = np.atleast_2d(np.asarray(points, dtype=float))
    return SampleGrid(points=array, policy=SamplePolicy.LATTICE, seed=seed, description="explicit")


# ===== 線積分 =====

def potential_along_segment(chart: MetricChart, phi: Field, start: Sequence[float], end: Sequence[float],
                            nodes: int = 64) -> float:
    """
    閉じた余ベクトル場のポテンシャル f(end) − f(start)

    線分 start→end 上の φ(x)·(end−start) をガウス・ルジャンドル求積で積分します。
    """
    start = np.asarray(start, dtype=float)
    delta = np.asarray(end, dtype=float) - start
    t, w = leggauss(nodes)
    s = 0.5 * (t + 1.0)
    total = 0.0
    for node, weight in zip(s, w):
        values = np.asarray(phi.values_at(chart, start + node * delta), dtype=float)
        total += 0.5 * weight * float(values @ delta)
    return total


# ===== 測地線 =====

@dataclass
class Trajectory:
    """測地線の離散軌道"""
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    truncated: bool = False
    requested_steps: int = 0

    @property
    def steps_taken(self) -> int:
        return len(self.times) - 1

    def to_tsv(self) -> str:
        """1行に t x.. v.. をタブ区切りで出力"""
        lines = []
        for t, x, v in zip(self.times, self.positions, self.velocities):
            fields = [repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(c)) for c in v]
            lines.append("\t".join(fields))
        return "\n".join(lines) + "\n"


def geodesic_acceleration(chart: MetricChart, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """ẍ^k = −Γ^k_ij ẋ^i ẋ^j"""
    gamma = chart.local(x).christoffel
    return -np.einsum("kij,i,j->k", gamma, v, v)


def geodesic_step(chart: MetricChart, x: Sequence[float], v: Sequence[float],
                  dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """古典的4次ルンゲ＝クッタ法の1ステップ"""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    k1x, k1v = v, geodesic_acceleration(chart, x, v)
    x2, v2 = x + 0.5 * dt * k1x, v + 0.5 * dt * k1v
    k2x, k2v = v2, geodesic_acceleration(chart, x2, v2)
    x3, v3 = x + 0.5 * dt * k2x, v + 0.5 * dt * k2v
    k3x, k3v = v3, geodesic_acceleration(chart, x3, v3)
    x4, v4 = x + dt * k3x, v + dt * k3v
    k4x, k4v = v4, geodesic_acceleration(chart, x4, v4)
    x_next = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v_next = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return x_next, v_next


def integrate_geodesic(chart: MetricChart, x0: Sequence[float], v0: Sequence[float],
                       steps: int, dt: float) -> Trajectory:
    """
    測地線を積分

    軌道が閉領域を出た時点で打ち切り、truncated を立てます。
    """
    logger = logging.getLogger(__name__)
    x = np.asarray(x0, dtype=float)
    v = np.asarray(v0, dtype=float)
    if x.shape != (chart.dim,) or v.shape != (chart.dim,):
        raise GeometryError(f"初期値の次元が不正です: x0={x.shape}, v0={v.shape}")
    if not chart.contains(x):
        raise GeometryError(f"初期点が領域外です: {x.tolist()}")
    if steps < 0 or not dt > 0.0:
        raise GeometryError(f"ステップ数・刻み幅が不正です: steps={steps}, dt={dt}")

    times, positions, velocities = [0.0], [x], [v]
    truncated = False
    for step in range(1, steps + 1):
        x_next, v_next = geodesic_step(chart, x, v, dt)
        if not chart.contains(x_next):
            truncated = True
            logger.warning(f"軌道が領域を出たため {step - 1} ステップで打ち切りました")
            break
        x, v = x_next, v_next
        times.append(step * dt)
        positions.append(x)
        velocities.append(v)
    return Trajectory(times=np.array(times), positions=np.array(positions), velocities=np.array(velocities),
                      truncated=truncated, requested_steps=steps)


def geodesic_energy_report(chart: MetricChart, trajectory: Trajectory, tolerance: float) -> ResidualReport:
    """g(ẋ, ẋ) の相対ドリフト"""
    energies = np.array([chart.metric_at(x) @ v @ v for x, v in zip(trajectory.positions, trajectory.velocities)])
    reference = max(abs(float(energies[0])), 1e-300)
    drift = np.abs(energies - energies[0]) / reference
    worst = int(np.argmax(drift))
    return ResidualReport(
        equation="geodesic-energy", max=float(drift[worst]), mean=float(np.mean(drift)), tolerance=tolerance,
        points=len(drift), passed=bool(drift[worst] <= tolerance),
        worst_point=[float(c) for c in trajectory.positions[worst]],
        details={"initial_energy": float(energies[0]), "steps": trajectory.steps_taken,
                 "truncated": trajectory.truncated},
    )


def geodesic_map_check(chart_g: MetricChart, chart_gbar: MetricChart,
                       x0: Sequence[float], v0: Sequence[float],
                       steps: int = 1000, dt: float = 1e-3,
                       tolerance: float = 1e-8) -> ResidualReport:
    """
    g の測地線が ḡ でも（径数を除いて）測地線かを確認

    軌道上で A^k = (Γ̄ − Γ)^k_ij ẋ^i ẋ^j を求め、ẋ に ḡ-直交な成分の比
    |A⊥| / |A| を残差とします（|A| が0なら残差0）。
    ḡ が正定値でない点ではユークリッドノルムで比を取ります。
    """
    if chart_g.coordinates != chart_gbar.coordinates:
        raise GeometryError("2つのチャートの座標が一致しません")
    trajectory = integrate_geodesic(chart_g, x0, v0, steps, dt)
    residuals = []
    for x, v in zip(trajectory.positions, trajectory.velocities):
        gamma = chart_g.local(x).christoffel
        local_bar = chart_gbar.local(x)
        accel = np.einsum("kij,i,j->k", local_bar.christoffel - gamma, v, v)
        gbar = local_bar.metric
        vv = float(v @ gbar @ v)
        if abs(vv) > 1e-14:
            orthogonal = accel - (float(accel @ gbar @ v) / vv) * v
        else:
            orthogonal = accel - (float(accel @ v) / float(v @ v)) * v
        if np.min(np.linalg.eigvalsh(gbar)) > 0.0:
            norm = lambda u: float(np.sqrt(abs(u @ gbar @ u)))  # noqa: E731
        else:
            norm = lambda u: float(np.linalg.norm(u))  # noqa: E731
        total = norm(accel)
        scale = 1e-14 * (1.0 + float(v @ v))
        residuals.append(0.0 if total <= scale else norm(orthogonal) / total)
    residuals = np.array(residuals)
    worst = int(np.argmax(residuals))
    return ResidualReport(
        equation="geodesic-map", max=float(residuals[worst]), mean=float(np.mean(residuals)),
        tolerance=tolerance, points=len(residuals), passed=bool(residuals[worst] <= tolerance),
        worst_point=[float(c) for c in trajectory.positions[worst]],
        details={"steps": trajectory.steps_taken, "truncated": trajectory.truncated},
    )


# ===== 数値差分による参照チェック =====

def central_difference(func: Callable[[np.ndarray], Any], p: Sequence[float], axis: int,
                       step: float = 1e-5) -> np.ndarray:
    """中心差分 (f(p+h e_axis) − f(p−h e_axis)) / 2h"""
    p = np.asarray(p, dtype=float)
    offset = np.zeros_like(p)
    offset[axis] = step
    forward = np.asarray(func(p + offset), dtype=float)
    backward = np.asarray(func(p - offset), dtype=float)
    return (forward - backward) / (2.0 * step)


def finite_difference_report(chart: MetricChart, grid: SampleGrid, tolerance: float = 1e-6,
                             fields: Sequence[Tuple[str, Field]] = (), step: float = 1e-5,
                             workers: int = 1) -> ResidualReport:
    """
    記号微分と中心差分の一致を確認

    計量と与えた場の全成分について、相対誤差 |記号 − 差分| / max(1, |記号|) を残差とします。
    """
    def metric_residual(p: np.ndarray) -> np.ndarray:
        symbolic = chart.metric_partials_at(p)
        numeric = np.stack([central_difference(chart.metric_at, p, k, step) for k in range(chart.dim)])
        return (symbolic - numeric) / np.maximum(1.0, np.abs(symbolic))

    blocks = [collect_residuals("fd-oracle:metric", metric_residual, grid.points, tolerance, workers)]
    for label, fld in fields:
        def field_residual(p: np.ndarray, fld=fld) -> np.ndarray:
            _, symbolic = fld.evaluate(chart, p)
            numeric = np.stack([central_difference(lambda q: fld.values_at(chart, q), p, k, step)
                                for k in range(chart.dim)], axis=-1)
            return (symbolic - numeric) / np.maximum(1.0, np.abs(symbolic))
        blocks.append(collect_residuals(f"fd-oracle:{label}", field_residual, grid.points, tolerance, workers))

    return combine_reports("fd-oracle", blocks)


def check_metric_consistency(chart: MetricChart, grid: Union[SampleGrid, np.ndarray],
                             config: Optional[RunConfig] = None) -> ResidualReport:
    """
    計量の整合性を標本点ごとに確認

    ブロック metricity は ∇_k g_ij、inverse-consistency は g·g^{-1} − I。
    """
    config = config or RunConfig()
    points = grid.points if isinstance(grid, SampleGrid) else np.atleast_2d(np.asarray(grid, dtype=float))
    metric = BilinearField(chart.metric_exprs)
    identity = np.eye(chart.dim)

    def metricity_residual(p: np.ndarray) -> np.ndarray:
        return covariant_derivative_bilinear(chart, metric, p)

    def inverse_residual(p: np.ndarray) -> np.ndarray:
        local = chart.local(p)
        return local.metric @ local.inverse - identity

    blocks = [
        collect_residuals("metricity", metricity_residual, points, config.tolerance("metricity"), config.workers),
        collect_residuals("inverse-consistency", inverse_residual, points,
                          config.tolerance("inverse-consistency"), config.workers),
    ]
    return combine_reports("metric-consistency", blocks)


def create_metric_chart(coordinates: Sequence[str], domain: Sequence[Tuple[float, float]],
                        metric: Sequence[Sequence[ExprSource]],
                        constants: Optional[Mapping[str, float]] = None,
                        name: str = "chart") -> MetricChart:
    """MetricChart のファクトリ関数"""
    return MetricChart(coordinates, domain, metric, constants, name)


if __name__ == "__main__":
    # モジュール単体テスト用
    import math

    logging.basicConfig(level=logging.INFO)

    print("幾何計算モジュール単体テスト")
    print("=" * 40)

    sphere = create_metric_chart(["theta", "phi"], [(0.3, 2.8), (-3.0, 3.0)],
                                 [["1", "0"], ["0", "sin(theta)^2"]], name="sphere")
    p = [1.0, 0.5]
    print(f"\n点 {p} の計量:\n{sphere.metric_at(p)}")
    gamma = christoffel(sphere, p)
    print(f"Γ^θ_φφ = {gamma[0, 1, 1]:.6f}（-sinθcosθ = {-math.sin(1.0) * math.cos(1.0):.6f}）")
    print(f"Γ^φ_θφ = {gamma[1, 0, 1]:.6f}（cotθ = {1.0 / math.tan(1.0):.6f}）")

    trajectory = integrate_geodesic(sphere, [1.2, 0.0], [0.3, 0.4], steps=200, dt=0.01)
    report = geodesic_energy_report(sphere, trajectory, 1e-6)
    print(f"\n測地線 {trajectory.steps_taken} ステップ: エネルギー変動 {report.max:.3e} "
          f"({'合格' if report.passed else '不合格'})")
