#!/usr/bin/env python3
"""
数式言語モジュール - 計量成分・場成分を記述する小さな式言語

このモジュールは座標の関数として計量テンソルや場の成分を記述するための
式言語を実装します。構文解析・評価・記号微分・簡約・文字列化を提供し、
幾何計算モジュールは全ての微分をここで得た記号微分から計算します。

文法:
    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | atom ("^" factor)?
    atom   := number | ident | ident "(" expr ")" | "(" expr ")"

演算子の優先順位:
- "^" が最も強く、右結合（2^3^2 = 2^9）
- 単項マイナスは "^" より弱い（-x^2 = -(x^2)）
- 指数部には単項マイナスを書ける（2^-1）

主な機能:
- 字句解析・再帰下降構文解析（エラー位置と期待トークン付き）
- 命令列へのコンパイルと高速評価（部分木の共有に対応）
- 記号微分（連鎖律・積の微分・商の微分）
- 定数畳み込みと恒等式による簡約
- 記号行列式・余因子による逆行列（小次元用）

注意事項:
- log(x<=0)、sqrt(x<0)、0除算は評価時に DslDomainError になります
- 0/x の簡約は x が非ゼロ定数のときだけ行います
"""

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from modules import ConlabError


class DslError(ConlabError):
    """数式言語の基底例外"""
    pass


class DslSyntaxError(DslError):
    """構文エラー（位置と期待トークン集合を保持）"""

    def __init__(self, message: str, offset: int, expected: Iterable[str] = ()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f" (期待: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message}: 位置 {offset}{detail}")


class UnknownFunctionError(DslError):
    """未知の関数名"""

    def __init__(self, name: str, offset: int = -1):
        self.name = name
        self.offset = offset
        super().__init__(f"未知の関数です: {name}")


class UnboundVariableError(DslError):
    """束縛されていない変数"""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"未束縛の変数です: {name}")


class DslDomainError(DslError):
    """定義域外の評価（問題の部分式を保持）"""

    def __init__(self, reason: str, subexpression: str):
        self.reason = reason
        self.subexpression = subexpression
        super().__init__(f"{reason}: {subexpression}")


# 使用可能な組み込み関数
FUNCTION_NAMES: Tuple[str, ...] = (
    "sin", "cos", "tan", "sinh", "cosh", "tanh", "exp", "log", "sqrt",
)
CONSTANT_NAMES: Tuple[str, ...] = ("pi",)
RESERVED_NAMES: FrozenSet[str] = frozenset(FUNCTION_NAMES + CONSTANT_NAMES)

# ネストの上限（Pythonの再帰制限内に収める）
MAX_NESTING = 200


# ===== 構文木 =====

class Expr:
    """式ノードの基底クラス（演算子で式を組み立てられる）"""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, eq=True)
class Number(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Const(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True, eq=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    func: str
    arg: Expr


ZERO = Number(0.0)
ONE = Number(1.0)

ExprLike = Union[Expr, float, int]


def as_expr(value: ExprLike) -> Expr:
    """数値を Number に変換"""
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return Number(float(value))
    raise TypeError(f"式に変換できません: {value!r}")


def children(node: Expr) -> Tuple[Expr, ...]:
    """子ノードの一覧"""
    if isinstance(node, (Number, Var, Const)):
        return ()
    if isinstance(node, Neg):
        return (node.operand,)
    if isinstance(node, Pow):
        return (node.base, node.exponent)
    if isinstance(node, Call):
        return (node.arg,)
    return (node.left, node.right)


def _postorder(root: Expr) -> List[Expr]:
    """共有部分木を一度だけ含む後順走査（反復実装）"""
    order: List[Expr] = []
    seen = set()
    stack: List[Tuple[Expr, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            if key not in seen:
                seen.add(key)
                order.append(node)
            continue
        if key in seen:
            continue
        stack.append((node, True))
        for child in reversed(children(node)):
            if id(child) not in seen:
                stack.append((child, False))
    return order


def free_variables(expr: Expr) -> FrozenSet[str]:
    """式に現れる変数名の集合"""
    return frozenset(node.name for node in _postorder(expr) if isinstance(node, Var))


def node_count(expr: Expr) -> int:
    """共有を考慮した一意ノード数"""
    return len(_postorder(expr))


def is_zero(expr: Expr) -> bool:
    return isinstance(expr, Number) and expr.value == 0.0


def is_one(expr: Expr) -> bool:
    return isinstance(expr, Number) and expr.value == 1.0


# ===== 字句解析 =====

class TokenKind(Enum):
    """トークン種別"""
    NUMBER = "number"
    IDENT = "identifier"
    PLUS = "+"
    MINUS = "-"
    STAR = "*"
    SLASH = "/"
    CARET = "^"
    LPAREN = "("
    RPAREN = ")"
    END = "end"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    offset: int


_NUMBER_RE = re.compile(r"[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_SINGLE = {
    "+": TokenKind.PLUS, "-": TokenKind.MINUS, "*": TokenKind.STAR,
    "/": TokenKind.SLASH, "^": TokenKind.CARET,
    "(": TokenKind.LPAREN, ")": TokenKind.RPAREN,
}
_ATOM_START = frozenset({"number", "identifier", "(", "-"})


def tokenize(source: str) -> List[Token]:
    """文字列をトークン列に分解"""
    tokens: List[Token] = []
    pos = 0
    length = len(source)
    while pos < length:
        char = source[pos]
        if char in " \t\r\n":
            pos += 1
            continue
        if char in _SINGLE:
            tokens.append(Token(_SINGLE[char], char, pos))
            pos += 1
            continue
        match = _NUMBER_RE.match(source, pos)
        if match:
            tokens.append(Token(TokenKind.NUMBER, match.group(), pos))
            pos = match.end()
            continue
        match = _IDENT_RE.match(source, pos)
        if match:
            tokens.append(Token(TokenKind.IDENT, match.group(), pos))
            pos = match.end()
            continue
        raise DslSyntaxError(f"不正な文字 {char!r}", pos, _ATOM_START | {"+", "*", "/", "^", ")"})
    tokens.append(Token(TokenKind.END, "", length))
    return tokens


# ===== 構文解析 =====

class _Parser:
    """再帰下降パーサー"""

    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.index = 0
        self.depth = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.tokens[self.index]
        if token.kind is not TokenKind.END:
            self.index += 1
        return token

    def enter(self) -> None:
        self.depth += 1
        if self.depth > MAX_NESTING:
            raise DslSyntaxError("ネストが深すぎます", self.current.offset)

    def leave(self) -> None:
        self.depth -= 1

    def parse(self) -> Expr:
        expr = self.parse_expr()
        if self.current.kind is not TokenKind.END:
            raise DslSyntaxError(
                f"余分なトークン {self.current.text!r}", self.current.offset,
                {"+", "-", "*", "/", "^", "end"},
            )
        return expr

    def parse_expr(self) -> Expr:
        self.enter()
        left = self.parse_term()
        while self.current.kind in (TokenKind.PLUS, TokenKind.MINUS):
            op = self.advance().kind
            right = self.parse_term()
            left = Add(left, right) if op is TokenKind.PLUS else Sub(left, right)
        self.leave()
        return left

    def parse_term(self) -> Expr:
        left = self.parse_factor()
        while self.current.kind in (TokenKind.STAR, TokenKind.SLASH):
            op = self.advance().kind
            right = self.parse_factor()
            left = Mul(left, right) if op is TokenKind.STAR else Div(left, right)
        return left

    def parse_factor(self) -> Expr:
        self.enter()
        if self.current.kind is TokenKind.MINUS:
            self.advance()
            result: Expr = Neg(self.parse_factor())
        else:
            base = self.parse_atom()
            if self.current.kind is TokenKind.CARET:
                self.advance()
                result = Pow(base, self.parse_factor())
            else:
                result = base
        self.leave()
        return result

    def parse_atom(self) -> Expr:
        token = self.current
        if token.kind is TokenKind.NUMBER:
            self.advance()
            return Number(float(token.text))
        if token.kind is TokenKind.IDENT:
            self.advance()
            if self.current.kind is TokenKind.LPAREN:
                if token.text not in FUNCTION_NAMES:
                    raise UnknownFunctionError(token.text, token.offset)
                self.advance()
                arg = self.parse_expr()
                self.expect(TokenKind.RPAREN)
                return Call(token.text, arg)
            if token.text in FUNCTION_NAMES:
                raise DslSyntaxError(f"関数 {token.text} に引数がありません", self.current.offset, {"("})
            if token.text in CONSTANT_NAMES:
                return Const(token.text)
            return Var(token.text)
        if token.kind is TokenKind.LPAREN:
            self.advance()
            inner = self.parse_expr()
            self.expect(TokenKind.RPAREN)
            return inner
        found = "入力終端" if token.kind is TokenKind.END else repr(token.text)
        raise DslSyntaxError(f"予期しない {found}", token.offset, _ATOM_START)

    def expect(self, kind: TokenKind) -> None:
        if self.current.kind is not kind:
            raise DslSyntaxError(f"{kind.value!r} がありません", self.current.offset, {kind.value})
        self.advance()


def parse(source: Union[str, bytes]) -> Expr:
    """
    式文字列を構文木に変換

    Args:
        source: 式の文字列（bytesの場合はUTF-8として解釈）

    Returns:
        Expr: 構文木

    Raises:
        DslSyntaxError: 構文エラー
        UnknownFunctionError: 未知の関数呼び出し
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DslSyntaxError("UTF-8として解釈できないバイト列", e.start) from None
    return _Parser(source).parse()


# ===== 評価 =====

def _domain_checked(name: str) -> Callable[[float], float]:
    func = getattr(math, name)
    if name == "log":
        def checked(x: float) -> float:
            if x <= 0.0:
                raise ValueError("logの引数が正ではありません")
            return func(x)
        return checked
    if name == "sqrt":
        def checked(x: float) -> float:
            if x < 0.0:
                raise ValueError("sqrtの引数が負です")
            return func(x)
        return checked
    return func


_FUNCTIONS: Dict[str, Callable[[float], float]] = {name: _domain_checked(name) for name in FUNCTION_NAMES}
_CONSTANTS: Dict[str, float] = {"pi": math.pi}


class CompiledExpression:
    """
    命令列にコンパイルされた式

    一意ノードを後順に並べ、各ノードの値を配列に順に格納して評価します。
    共有部分木は一度だけ評価されます。
    """

    def __init__(self, expr: Expr):
        self.expr = expr
        self.variables = free_variables(expr)
        nodes = _postorder(expr)
        slot = {id(node): index for index, node in enumerate(nodes)}
        self._nodes = nodes
        self._ops: List[Tuple[int, Tuple]] = [self._instruction(node, slot) for node in nodes]

    @staticmethod
    def _instruction(node: Expr, slot: Dict[int, int]) -> Tuple[int, Tuple]:
        if isinstance(node, Number):
            return (0, (node.value,))
        if isinstance(node, Var):
            return (1, (node.name,))
        if isinstance(node, Const):
            return (0, (_CONSTANTS[node.name],))
        if isinstance(node, Neg):
            return (2, (slot[id(node.operand)],))
        if isinstance(node, Add):
            return (3, (slot[id(node.left)], slot[id(node.right)]))
        if isinstance(node, Sub):
            return (4, (slot[id(node.left)], slot[id(node.right)]))
        if isinstance(node, Mul):
            return (5, (slot[id(node.left)], slot[id(node.right)]))
        if isinstance(node, Div):
            return (6, (slot[id(node.left)], slot[id(node.right)]))
        if isinstance(node, Pow):
            return (7, (slot[id(node.base)], slot[id(node.exponent)]))
        if isinstance(node, Call):
            return (8, (_FUNCTIONS[node.func], slot[id(node.arg)]))
        raise DslError(f"未知のノード型です: {type(node).__name__}")

    def __call__(self, env: Mapping[str, float]) -> float:
        values: List[float] = [0.0] * len(self._ops)
        for index, (code, args) in enumerate(self._ops):
            if code == 0:
                values[index] = args[0]
            elif code == 1:
                try:
                    values[index] = env[args[0]]
                except KeyError:
                    raise UnboundVariableError(args[0]) from None
            elif code == 2:
                values[index] = -values[args[0]]
            elif code == 3:
                values[index] = values[args[0]] + values[args[1]]
            elif code == 4:
                values[index] = values[args[0]] - values[args[1]]
            elif code == 5:
                values[index] = values[args[0]] * values[args[1]]
            elif code == 6:
                denominator = values[args[1]]
                if denominator == 0.0:
                    raise DslDomainError("0除算", to_text(self._nodes[index]))
                values[index] = values[args[0]] / denominator
            elif code == 7:
                try:
                    values[index] = math.pow(values[args[0]], values[args[1]])
                except (ValueError, OverflowError) as e:
                    raise DslDomainError(f"べき乗が定義域外です ({e})", to_text(self._nodes[index])) from None
            else:
                try:
                    values[index] = args[0](values[args[1]])
                except (ValueError, OverflowError) as e:
                    raise DslDomainError(f"関数が定義域外です ({e})", to_text(self._nodes[index])) from None
        return values[-1]


def compile_expression(expr: Expr) -> CompiledExpression:
    """式を評価関数にコンパイル"""
    return CompiledExpression(expr)


def evaluate(expr: Expr, point: Mapping[str, float],
             bindings: Optional[Mapping[str, float]] = None) -> float:
    """
    式を評価

    Args:
        expr: 式
        point: 座標名から値への対応
        bindings: 名前付き定数の束縛

    Returns:
        float: 評価値
    """
    env: Dict[str, float] = dict(bindings or {})
    env.update(point)
    return CompiledExpression(expr)(env)


# ===== 記号操作用コンストラクタ（その場で簡約） =====

def _finite_number(value: float) -> Optional[Number]:
    if math.isfinite(value):
        return Number(value)
    return None


def number(value: float) -> Number:
    return Number(float(value))


def var(name: str) -> Var:
    return Var(name)


def neg(a: Expr) -> Expr:
    if isinstance(a, Number):
        return Number(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    if isinstance(a, Number) and isinstance(b, Number):
        return _finite_number(a.value + b.value) or Add(a, b)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if is_zero(b):
        return a
    if is_zero(a):
        return neg(b)
    if isinstance(a, Number) and isinstance(b, Number):
        return _finite_number(a.value - b.value) or Sub(a, b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if is_zero(a) or is_zero(b):
        return ZERO
    if is_one(a):
        return b
    if is_one(b):
        return a
    if isinstance(a, Number) and isinstance(b, Number):
        return _finite_number(a.value * b.value) or Mul(a, b)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if is_one(b):
        return a
    if isinstance(b, Number) and b.value != 0.0:
        if is_zero(a):
            return ZERO
        if isinstance(a, Number):
            return _finite_number(a.value / b.value) or Div(a, b)
    return Div(a, b)


def power(a: Expr, b: Expr) -> Expr:
    if is_zero(b):
        return ONE
    if is_one(b):
        return a
    if isinstance(a, Number) and isinstance(b, Number):
        try:
            return _finite_number(math.pow(a.value, b.value)) or Pow(a, b)
        except (ValueError, OverflowError):
            return Pow(a, b)
    return Pow(a, b)


def call(name: str, a: Expr) -> Expr:
    if name not in _FUNCTIONS:
        raise UnknownFunctionError(name)
    if isinstance(a, Number):
        try:
            folded = _finite_number(_FUNCTIONS[name](a.value))
        except (ValueError, OverflowError):
            folded = None
        if folded is not None:
            return folded
    return Call(name, a)


def sum_exprs(terms: Iterable[Expr]) -> Expr:
    """式の総和（左から順に加算）"""
    total: Expr = ZERO
    for term in terms:
        total = add(total, term)
    return total


def exp(a: ExprLike) -> Expr:
    return call("exp", as_expr(a))


def log(a: ExprLike) -> Expr:
    return call("log", as_expr(a))


# ===== 簡約 =====

def _rebuild(node: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(node, Neg):
        return neg(kids[0])
    if isinstance(node, Add):
        return add(kids[0], kids[1])
    if isinstance(node, Sub):
        return sub(kids[0], kids[1])
    if isinstance(node, Mul):
        return mul(kids[0], kids[1])
    if isinstance(node, Div):
        return div(kids[0], kids[1])
    if isinstance(node, Pow):
        return power(kids[0], kids[1])
    if isinstance(node, Call):
        return call(node.func, kids[0])
    return node


def simplify(expr: Expr) -> Expr:
    """
    定数畳み込みと恒等式による簡約

    x+0, x*1, x*0, x^1, x^0, --x などを除去し、定数部分式を畳み込みます。
    評価値は変わりません（1ulp以内）。
    """
    memo: Dict[int, Expr] = {}
    for node in _postorder(expr):
        kids = [memo[id(child)] for child in children(node)]
        memo[id(node)] = _rebuild(node, kids)
    return memo[id(expr)]


# ===== 記号微分 =====

def differentiate(expr: Expr, name: str) -> Expr:
    """
    変数 name による偏微分

    Args:
        expr: 式
        name: 微分する変数名

    Returns:
        Expr: 簡約済みの導関数
    """
    memo: Dict[int, Expr] = {}
    depends: Dict[int, bool] = {}
    for node in _postorder(expr):
        key = id(node)
        kids = children(node)
        depends[key] = (isinstance(node, Var) and node.name == name) or any(depends[id(c)] for c in kids)
        if not depends[key]:
            memo[key] = ZERO
            continue
        d = [memo[id(c)] for c in kids]
        if isinstance(node, Var):
            memo[key] = ONE
        elif isinstance(node, Neg):
            memo[key] = neg(d[0])
        elif isinstance(node, Add):
            memo[key] = add(d[0], d[1])
        elif isinstance(node, Sub):
            memo[key] = sub(d[0], d[1])
        elif isinstance(node, Mul):
            memo[key] = add(mul(d[0], node.right), mul(node.left, d[1]))
        elif isinstance(node, Div):
            numerator = sub(mul(d[0], node.right), mul(node.left, d[1]))
            memo[key] = div(numerator, power(node.right, Number(2.0)))
        elif isinstance(node, Pow):
            memo[key] = _differentiate_pow(node, d[0], d[1], depends[id(node.exponent)])
        elif isinstance(node, Call):
            memo[key] = mul(_call_derivative(node.func, node.arg), d[0])
        else:
            memo[key] = ZERO
    return memo[id(expr)]


def _differentiate_pow(node: Pow, d_base: Expr, d_exp: Expr, exponent_varies: bool) -> Expr:
    u, v = node.base, node.exponent
    if not exponent_varies:
        # n u^(n-1) u'
        return mul(mul(v, power(u, sub(v, ONE))), d_base)
    if is_zero(d_base):
        # a^v ln(a) v'
        return mul(mul(node, call("log", u)), d_exp)
    # u^v (v' ln u + v u'/u)
    return mul(node, add(mul(d_exp, call("log", u)), div(mul(v, d_base), u)))


def _call_derivative(func: str, u: Expr) -> Expr:
    if func == "sin":
        return call("cos", u)
    if func == "cos":
        return neg(call("sin", u))
    if func == "tan":
        return div(ONE, power(call("cos", u), Number(2.0)))
    if func == "sinh":
        return call("cosh", u)
    if func == "cosh":
        return call("sinh", u)
    if func == "tanh":
        return div(ONE, power(call("cosh", u), Number(2.0)))
    if func == "exp":
        return call("exp", u)
    if func == "log":
        return div(ONE, u)
    if func == "sqrt":
        return div(ONE, mul(Number(2.0), call("sqrt", u)))
    raise UnknownFunctionError(func)


# ===== 文字列化 =====

def _precedence(node: Expr) -> int:
    if isinstance(node, (Add, Sub)):
        return 1
    if isinstance(node, (Mul, Div)):
        return 2
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Number) and (node.value < 0.0 or math.copysign(1.0, node.value) < 0.0):
        return 3
    if isinstance(node, Pow):
        return 4
    return 5


def _number_text(value: float) -> str:
    if math.isnan(value):
        return "(0/0)"
    if math.isinf(value):
        return "1e999" if value > 0 else "-1e999"
    if value < 0.0 or math.copysign(1.0, value) < 0.0:
        return "-" + repr(-value)
    return repr(value)


def to_text(expr: Expr) -> str:
    """
    構文木を文字列化

    parse(to_text(e)) は e と同じ値に評価されます（非負の数値のみの木なら構造も一致）。
    """
    memo: Dict[int, str] = {}

    def wrap(child: Expr, needs_parens: bool) -> str:
        text = memo[id(child)]
        return f"({text})" if needs_parens else text

    for node in _postorder(expr):
        if isinstance(node, Number):
            text = _number_text(node.value)
        elif isinstance(node, (Var, Const)):
            text = node.name
        elif isinstance(node, Neg):
            text = "-" + wrap(node.operand, _precedence(node.operand) < 3)
        elif isinstance(node, (Add, Sub)):
            op = "+" if isinstance(node, Add) else "-"
            text = f"{wrap(node.left, False)} {op} {wrap(node.right, _precedence(node.right) <= 1)}"
        elif isinstance(node, (Mul, Div)):
            op = "*" if isinstance(node, Mul) else "/"
            text = f"{wrap(node.left, _precedence(node.left) < 2)}{op}{wrap(node.right, _precedence(node.right) <= 2)}"
        elif isinstance(node, Pow):
            text = f"{wrap(node.base, _precedence(node.base) < 5)}^{wrap(node.exponent, _precedence(node.exponent) < 3)}"
        elif isinstance(node, Call):
            text = f"{node.func}({memo[id(node.arg)]})"
        else:
            raise DslError(f"未知のノード型です: {type(node).__name__}")
        memo[id(node)] = text
    return memo[id(expr)]


# ===== 記号行列 =====

ExprMatrix = List[List[Expr]]


def symbolic_determinant(matrix: Sequence[Sequence[Expr]]) -> Expr:
    """余因子展開による記号行列式（小次元用）"""
    size = len(matrix)
    if size == 1:
        return matrix[0][0]
    if size == 2:
        return sub(mul(matrix[0][0], matrix[1][1]), mul(matrix[0][1], matrix[1][0]))
    terms: List[Expr] = []
    for column in range(size):
        entry = matrix[0][column]
        if is_zero(entry):
            continue
        minor = [row[:column] + row[column + 1:] for row in (list(r) for r in matrix[1:])]
        cofactor = mul(entry, symbolic_determinant(minor))
        terms.append(cofactor if column % 2 == 0 else neg(cofactor))
    return sum_exprs(terms)


def symbolic_inverse(matrix: Sequence[Sequence[Expr]]) -> Tuple[ExprMatrix, Expr]:
    """
    余因子行列による記号逆行列

    Returns:
        Tuple[ExprMatrix, Expr]: (逆行列, 行列式)
    """
    size = len(matrix)
    rows = [list(r) for r in matrix]
    det = symbolic_determinant(rows)
    if size == 1:
        return [[div(ONE, det)]], det
    inverse: ExprMatrix = [[ZERO] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(rows) if k != i]
            cofactor = symbolic_determinant(minor)
            if (i + j) % 2 == 1:
                cofactor = neg(cofactor)
            # 転置して格納
            inverse[j][i] = div(cofactor, det)
    return inverse, det


def create_expression(source: Union[str, Expr, float, int]) -> Expr:
    """文字列・数値・式から式を作成するファクトリ関数"""
    if isinstance(source, str):
        return parse(source)
    return as_expr(source)




if __name__ == "__main__":
    # モジュール単体テスト用
    import logging

    logging.basicConfig(level=logging.INFO)

    print("数式言語モジュール単体テスト")
    print("=" * 40)

    for text in ["sin(theta)^2", "exp(-x^2/2)", "log(1 - x^2 - y^2)/2", "2^3^2"]:
        expr = parse(text)
        print(f"\n式: {text}")
        print(f"  文字列化: {to_text(expr)}")
        print(f"  自由変数: {sorted(free_variables(expr))}")
        for name in sorted(free_variables(expr)):
            print(f"  ∂/∂{name}: {to_text(differentiate(expr, name))}")
        point = {name: 0.3 for name in free_variables(expr)}
        print(f"  値 (全変数 0.3): {evaluate(expr, point):.6f}")
