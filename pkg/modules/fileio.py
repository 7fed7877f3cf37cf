#!/usr/bin/env python3
"""
ファイル入出力モジュール - 計量ファイル・場ファイル・軌道TSV

行単位の UTF-8 テキスト形式（`#` 以降はコメント）で計量と場を読み書きします。

計量ファイル:
    dim = N
    coord I = NAME
    domain I = LO HI
    const NAME = REAL
    g I J = EXPRESSION

場ファイル（kind で種類を指定）:
    kind = concircular     phi I = EXPR / rho = EXPR / K = REAL
    kind = sinyukov        a I J = EXPR / lambda I = EXPR / mu = EXPR / K = REAL
    kind = covector        w I = EXPR
    kind = sinyukov-lifted a I J = EXPR（(n+1) 次元の成分そのまま）/ K = REAL

主な機能:
- 計量ファイル・場ファイルの解析（行番号付きのエラー）
- 計量・場のテキスト出力（parse と往復可能）
- 軌道のTSV出力とJSON補助ファイルの出力
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from modules import ConlabError
from modules.dsl import DslError, Expr, ZERO, parse, to_text
from modules.fields import ConcircularCandidate, SinyukovSolution
from modules.geometry import BilinearField, CovectorField, MetricChart, ScalarField, Trajectory


class FileFormatError(ConlabError):
    """ファイル形式エラー"""

    def __init__(self, message: str, line: int = 0, source: str = ""):
        self.line = line
        self.source = source
        location = f"{source}:" if source else ""
        location += f"{line}: " if line else (": " if source else "")
        super().__init__(f"{location}{message}")


class FieldFileKind(Enum):
    """場ファイルの種類"""
    CONCIRCULAR = "concircular"
    SINYUKOV = "sinyukov"
    COVECTOR = "covector"
    SINYUKOV_LIFTED = "sinyukov-lifted"


@dataclass
class FieldFile:
    """読み込んだ場ファイル"""
    kind: FieldFileKind
    value: Any
    K: Optional[float] = None
    comments: List[str] = field(default_factory=list)


@dataclass
class _Line:
    number: int
    key: List[str]
    value: str


def _lines(text: str, source: str) -> Tuple[List[_Line], List[str]]:
    """キー行とコメントに分解"""
    entries: List[_Line] = []
    comments: List[str] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        body, _, comment = raw.partition("#")
        if comment.strip() and not body.strip():
            comments.append(comment.strip())
        if not body.strip():
            continue
        if "=" not in body:
            raise FileFormatError("'=' がありません", number, source)
        key, _, value = body.partition("=")
        words = key.split()
        if not words:
            raise FileFormatError("キーがありません", number, source)
        entries.append(_Line(number=number, key=words, value=value.strip()))
    return entries, comments


def _int(text: str, line: _Line, source: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise FileFormatError(f"整数ではありません: {text!r}", line.number, source) from None


def _real(text: str, line: _Line, source: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FileFormatError(f"実数ではありません: {text!r}", line.number, source) from None


def _expr(text: str, line: _Line, source: str) -> Expr:
    if not text:
        raise FileFormatError("式がありません", line.number, source)
    try:
        return parse(text)
    except DslError as e:
        raise FileFormatError(f"式を解析できません: {e}", line.number, source) from e


def _index(text: str, size: int, line: _Line, source: str) -> int:
    value = _int(text, line, source)
    if not 0 <= value < size:
        raise FileFormatError(f"添字が範囲外です: {value} (0..{size - 1})", line.number, source)
    return value


def _expect_arity(line: _Line, count: int, source: str) -> None:
    if len(line.key) != count:
        raise FileFormatError(f"キー '{' '.join(line.key)}' の形式が不正です", line.number, source)


def _symmetric_entries(entries: Dict[Tuple[int, int], Tuple[str, Expr, int]], size: int,
                       label: str, source: str) -> List[List[Expr]]:
    """(I,J) と (J,I) の一方だけ、または同じ文字列の指定を許して対称行列にする"""
    rows: List[List[Expr]] = [[ZERO] * size for _ in range(size)]
    for (i, j), (text, expr, number) in entries.items():
        mirror = entries.get((j, i))
        if mirror is not None and mirror[0] != text:
            raise FileFormatError(f"{label} {i} {j} と {label} {j} {i} の式が異なります", number, source)
        lo, hi = min(i, j), max(i, j)
        rows[lo][hi] = expr
        rows[hi][lo] = expr
    return rows


# ===== 計量ファイル =====

def parse_metric_text(text: str, source: str = "", name: Optional[str] = None) -> MetricChart:
    """
    計量ファイルの内容から MetricChart を作成

    Raises:
        FileFormatError: 形式エラー
    """
    logger = logging.getLogger(__name__)
    entries, _ = _lines(text, source)
    dim: Optional[int] = None
    for line in entries:
        if line.key == ["dim"]:
            if dim is not None:
                raise FileFormatError("dim が重複しています", line.number, source)
            dim = _int(line.value, line, source)
    if dim is None:
        raise FileFormatError("dim がありません", 0, source)
    if dim < 2:
        raise FileFormatError(f"次元は2以上である必要があります: {dim}", 0, source)

    coords: Dict[int, str] = {}
    domain: Dict[int, Tuple[float, float]] = {}
    constants: Dict[str, float] = {}
    metric: Dict[Tuple[int, int], Tuple[str, Expr, int]] = {}
    for line in entries:
        head = line.key[0]
        if head == "dim":
            continue
        if head == "coord":
            _expect_arity(line, 2, source)
            i = _index(line.key[1], dim, line, source)
            if i in coords:
                raise FileFormatError(f"coord {i} が重複しています", line.number, source)
            coords[i] = line.value
        elif head == "domain":
            _expect_arity(line, 2, source)
            i = _index(line.key[1], dim, line, source)
            bounds = line.value.split()
            if len(bounds) != 2:
                raise FileFormatError("domain には LO HI の2値が必要です", line.number, source)
            if i in domain:
                raise FileFormatError(f"domain {i} が重複しています", line.number, source)
            domain[i] = (_real(bounds[0], line, source), _real(bounds[1], line, source))
        elif head == "const":
            _expect_arity(line, 2, source)
            if line.key[1] in constants:
                raise FileFormatError(f"定数 {line.key[1]} が重複しています", line.number, source)
            constants[line.key[1]] = _real(line.value, line, source)
        elif head == "g":
            _expect_arity(line, 3, source)
            key = (_index(line.key[1], dim, line, source), _index(line.key[2], dim, line, source))
            if key in metric:
                raise FileFormatError(f"g {key[0]} {key[1]} が重複しています", line.number, source)
            metric[key] = (line.value, _expr(line.value, line, source), line.number)
        else:
            raise FileFormatError(f"未知のキーです: {head!r}", line.number, source)

    missing = [i for i in range(dim) if i not in coords or i not in domain]
    if missing:
        raise FileFormatError(f"coord/domain がない座標があります: {missing}", 0, source)
    rows = _symmetric_entries(metric, dim, "g", source)
    chart_name = name or (Path(source).stem if source else "chart")
    try:
        chart = MetricChart([coords[i] for i in range(dim)], [domain[i] for i in range(dim)], rows,
                            constants, name=chart_name)
    except DslError:
        raise
    except ConlabError as e:
        raise FileFormatError(str(e), 0, source) from e
    logger.debug(f"計量ファイルを読み込みました: {source or '(文字列)'} dim={dim}")
    return chart


def format_metric(chart: MetricChart, comments: Sequence[str] = ()) -> str:
    """MetricChart を計量ファイル形式に変換（上三角の非ゼロ成分のみ）"""
    lines = [f"# {c}" if c else "#" for c in comments]
    lines.append(f"dim = {chart.dim}")
    for i, name in enumerate(chart.coordinates):
        lines.append(f"coord {i} = {name}")
    for i, (lo, hi) in enumerate(chart.domain.tolist()):
        lines.append(f"domain {i} = {lo!r} {hi!r}")
    for label in sorted(chart.constants):
        lines.append(f"const {label} = {chart.constants[label]!r}")
    for i in range(chart.dim):
        for j in range(i, chart.dim):
            entry = chart.metric_exprs[i][j]
            if entry != ZERO:
                lines.append(f"g {i} {j} = {to_text(entry)}")
    return "\n".join(lines) + "\n"


# ===== 場ファイル =====

def parse_field_text(text: str, dim: int, source: str = "") -> FieldFile:
    """
    場ファイルの内容を解析

    Args:
        dim: 底チャートの次元（sinyukov-lifted では dim+1 成分を読む）

    Raises:
        FileFormatError: 形式エラー
    """
    entries, comments = _lines(text, source)
    kind: Optional[FieldFileKind] = None
    declared_dim: Optional[int] = None
    for line in entries:
        if line.key == ["kind"]:
            if kind is not None:
                raise FileFormatError("kind が重複しています", line.number, source)
            try:
                kind = FieldFileKind(line.value)
            except ValueError:
                raise FileFormatError(f"未知の kind です: {line.value!r}", line.number, source) from None
        elif line.key == ["dim"]:
            declared_dim = _int(line.value, line, source)
    if kind is None:
        raise FileFormatError("kind がありません", 0, source)
    size = dim + 1 if kind is FieldFileKind.SINYUKOV_LIFTED else dim
    if declared_dim is not None and declared_dim != size:
        raise FileFormatError(f"dim={declared_dim} が期待される次元 {size} と一致しません", 0, source)

    allowed = {
        FieldFileKind.CONCIRCULAR: {"phi", "rho", "K"},
        FieldFileKind.SINYUKOV: {"a", "lambda", "mu", "K"},
        FieldFileKind.COVECTOR: {"w"},
        FieldFileKind.SINYUKOV_LIFTED: {"a", "K"},
    }[kind]
    vectors: Dict[str, Dict[int, Expr]] = {"phi": {}, "lambda": {}, "w": {}}
    matrix: Dict[Tuple[int, int], Tuple[str, Expr, int]] = {}
    scalars: Dict[str, Expr] = {}
    K: Optional[float] = None
    for line in entries:
        head = line.key[0]
        if head in ("kind", "dim"):
            continue
        if head not in allowed:
            raise FileFormatError(f"kind={kind.value} では使えないキーです: {head!r}", line.number, source)
        if head in vectors:
            _expect_arity(line, 2, source)
            i = _index(line.key[1], size, line, source)
            if i in vectors[head]:
                raise FileFormatError(f"{head} {i} が重複しています", line.number, source)
            vectors[head][i] = _expr(line.value, line, source)
        elif head == "a":
            _expect_arity(line, 3, source)
            key = (_index(line.key[1], size, line, source), _index(line.key[2], size, line, source))
            if key in matrix:
                raise FileFormatError(f"a {key[0]} {key[1]} が重複しています", line.number, source)
            matrix[key] = (line.value, _expr(line.value, line, source), line.number)
        elif head == "K":
            _expect_arity(line, 1, source)
            K = _real(line.value, line, source)
        else:
            _expect_arity(line, 1, source)
            if head in scalars:
                raise FileFormatError(f"{head} が重複しています", line.number, source)
            scalars[head] = _expr(line.value, line, source)

    def vector(label: str) -> List[Expr]:
        return [vectors[label].get(i, ZERO) for i in range(size)]

    if kind is FieldFileKind.CONCIRCULAR:
        if "rho" not in scalars:
            raise FileFormatError("rho がありません", 0, source)
        value: Any = ConcircularCandidate(phi=CovectorField(vector("phi")), rho=ScalarField(scalars["rho"]), K=K)
    elif kind is FieldFileKind.SINYUKOV:
        rows = _symmetric_entries(matrix, size, "a", source)
        mu = ScalarField(scalars["mu"]) if "mu" in scalars else None
        value = SinyukovSolution(a=BilinearField(rows), lam=CovectorField(vector("lambda")), mu=mu, K=K)
    elif kind is FieldFileKind.COVECTOR:
        value = CovectorField(vector("w"))
    else:
        value = BilinearField(_symmetric_entries(matrix, size, "a", source))
    return FieldFile(kind=kind, value=value, K=K, comments=comments)


def field_kind_of(text: str, source: str = "") -> FieldFileKind:
    """場ファイルの kind だけを読む"""
    entries, _ = _lines(text, source)
    for line in entries:
        if line.key == ["kind"]:
            try:
                return FieldFileKind(line.value)
            except ValueError:
                raise FileFormatError(f"未知の kind です: {line.value!r}", line.number, source) from None
    raise FileFormatError("kind がありません", 0, source)


def _header(kind: FieldFileKind, comments: Sequence[str]) -> List[str]:
    lines = [f"# {c}" if c else "#" for c in comments]
    lines.append(f"kind = {kind.value}")
    return lines


def _vector_lines(label: str, components: Sequence[Expr]) -> List[str]:
    return [f"{label} {i} = {to_text(c)}" for i, c in enumerate(components) if c != ZERO]


def _matrix_lines(label: str, rows: Sequence[Sequence[Expr]]) -> List[str]:
    lines = []
    for i in range(len(rows)):
        for j in range(i, len(rows)):
            if rows[i][j] != ZERO:
                lines.append(f"{label} {i} {j} = {to_text(rows[i][j])}")
    return lines


def format_concircular(candidate: ConcircularCandidate, comments: Sequence[str] = ()) -> str:
    if not isinstance(candidate.phi, CovectorField) or not isinstance(candidate.rho, ScalarField):
        raise FileFormatError("式で与えた場だけを書き出せます")
    lines = _header(FieldFileKind.CONCIRCULAR, comments)
    lines += _vector_lines("phi", candidate.phi.components)
    lines.append(f"rho = {to_text(candidate.rho.expr)}")
    if candidate.K is not None:
        lines.append(f"K = {candidate.K!r}")
    return "\n".join(lines) + "\n"


def format_solution(sol: SinyukovSolution, comments: Sequence[str] = ()) -> str:
    if not isinstance(sol.a, BilinearField) or not isinstance(sol.lam, CovectorField):
        raise FileFormatError("式で与えた解だけを書き出せます")
    lines = _header(FieldFileKind.SINYUKOV, comments)
    lines += _matrix_lines("a", sol.a.components)
    lines += _vector_lines("lambda", sol.lam.components)
    if sol.mu is not None:
        if not isinstance(sol.mu, ScalarField):
            raise FileFormatError("式で与えた μ だけを書き出せます")
        lines.append(f"mu = {to_text(sol.mu.expr)}")
    if sol.K is not None:
        lines.append(f"K = {sol.K!r}")
    return "\n".join(lines) + "\n"


def format_covector(covector: CovectorField, comments: Sequence[str] = ()) -> str:
    lines = _header(FieldFileKind.COVECTOR, comments)
    lines += _vector_lines("w", covector.components)
    return "\n".join(lines) + "\n"


def format_lifted(form: BilinearField, K: Optional[float] = None, comments: Sequence[str] = ()) -> str:
    lines = _header(FieldFileKind.SINYUKOV_LIFTED, comments)
    lines += _matrix_lines("a", form.components)
    if K is not None:
        lines.append(f"K = {K!r}")
    return "\n".join(lines) + "\n"


# ===== ファイル =====

def read_text(path: Union[str, Path]) -> str:
    """UTF-8 テキストを読み込む（デコード失敗は FileFormatError）"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FileFormatError(f"読み込めません: {e.strerror}", 0, str(path)) from e
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FileFormatError(f"UTF-8ではありません（位置 {e.start}）", 0, str(path)) from None


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise FileFormatError(f"書き込めません: {e.strerror}", 0, str(path)) from e
    logging.getLogger(__name__).debug(f"書き込みました: {path}")
    return path


def load_metric(path: Union[str, Path]) -> MetricChart:
    return parse_metric_text(read_text(path), source=str(path))


def load_field(path: Union[str, Path], dim: int) -> FieldFile:
    return parse_field_text(read_text(path), dim, source=str(path))


def write_trajectory(path: Union[str, Path], trajectory: Trajectory) -> Path:
    """軌道をTSVで書き出す（1行 t x.. v..）"""
    return write_text(path, trajectory.to_tsv())


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    return write_text(path, json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
