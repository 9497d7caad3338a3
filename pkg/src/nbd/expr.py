""" 系数表达式

递归下降解析器与求值器。文法：

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' factor)?
    base   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')'
            | '(' expr ')' | '-' base

`**` 与 `^` 等价。求值同时支持标量和 numpy 数组，网格采样和蒙特卡罗都走这一条路径。
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple, Union

import numpy as np

from .exceptions import DomainError, ExprSyntaxError, UnknownIdentifier

# 函数名 -> (最少参数个数, 最多参数个数)
FUNCTIONS = {
    'sin': (1, 1),
    'cos': (1, 1),
    'exp': (1, 1),
    'sqrt': (1, 1),
    'abs': (1, 1),
    'min': (2, None),
    'max': (2, None),
}
CONSTANTS = {'pi': math.pi}
DEFAULT_VARIABLES = ('x', 'y', 'zx', 'zy')

_TOKEN_RE = re.compile(
    r'''
    (?P<space>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
    ''', re.VERBOSE
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: 'Expr'


@dataclass(frozen=True)
class BinOp:
    op: str
    left: 'Expr'
    right: 'Expr'


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple['Expr', ...]


Expr = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int


def tokenize(source: str):
    """ 切分记号，offset 为 UTF-8 字节偏移
    """
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        offset = len(source[:pos].encode('utf-8'))
        if not match:
            raise ExprSyntaxError(f'unexpected character {source[pos]!r}', offset)
        kind = match.lastgroup
        if kind != 'space':
            text = match.group()
            if text == '**':
                text = '^'
            tokens.append(Token(kind, text, offset))
        pos = match.end()
    tokens.append(Token('end', '', len(source.encode('utf-8'))))
    return tokens


class Parser:
    def __init__(self, source: str, variables: Sequence[str]):
        self.tokens = tokenize(source)
        self.variables = frozenset(variables)
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def _advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _accept(self, *texts) -> Token:
        if self.current.kind == 'op' and self.current.text in texts:
            return self._advance()
        return None

    def _expect(self, text):
        if not self._accept(text):
            raise ExprSyntaxError(
                f'expected {text!r}, got {self._describe()}', self.current.offset
            )

    def _describe(self):
        if self.current.kind == 'end':
            return 'end of input'
        return repr(self.current.text)

    def parse(self) -> Expr:
        if self.current.kind == 'end':
            raise ExprSyntaxError('empty expression', self.current.offset)
        node = self.expr()
        if self.current.kind != 'end':
            raise ExprSyntaxError(
                f'unexpected {self._describe()}', self.current.offset
            )
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            token = self._accept('+', '-')
            if not token:
                return node
            node = BinOp(token.text, node, self.term())

    def term(self) -> Expr:
        node = self.factor()
        while True:
            token = self._accept('*', '/')
            if not token:
                return node
            node = BinOp(token.text, node, self.factor())

    def factor(self) -> Expr:
        node = self.base()
        if self._accept('^'):
            # 右结合
            return BinOp('^', node, self.factor())
        return node

    def base(self) -> Expr:
        token = self.current
        if token.kind == 'number':
            self._advance()
            return Num(float(token.text))

        if token.kind == 'ident':
            self._advance()
            if self._accept('('):
                return self._call(token)
            if token.text in CONSTANTS:
                return Num(CONSTANTS[token.text])
            if token.text in FUNCTIONS:
                raise ExprSyntaxError(
                    f'function {token.text!r} needs arguments', token.offset
                )
            if token.text not in self.variables:
                raise UnknownIdentifier(token.text, token.offset)
            return Var(token.text)

        if self._accept('('):
            node = self.expr()
            self._expect(')')
            return node

        if self._accept('-'):
            return Neg(self.base())

        raise ExprSyntaxError(f'unexpected {self._describe()}', token.offset)

    def _call(self, name: Token) -> Expr:
        if name.text not in FUNCTIONS:
            raise UnknownIdentifier(name.text, name.offset)
        args = [self.expr()]
        while self._accept(','):
            args.append(self.expr())
        self._expect(')')

        low, high = FUNCTIONS[name.text]
        if len(args) < low or (high is not None and len(args) > high):
            raise ExprSyntaxError(
                f'{name.text} takes {low if low == high else f"at least {low}"} '
                f'argument(s), got {len(args)}', name.offset
            )
        return Call(name.text, tuple(args))


def parse_expr(source: str, variables: Sequence[str] = DEFAULT_VARIABLES) -> Expr:
    """ 解析表达式

    `variables` 为允许出现的变量名，其它名字会引发 UnknownIdentifier
    """
    if not source or not source.strip():
        raise ExprSyntaxError('empty expression', 0)
    return Parser(source, variables).parse()


def to_source(e: Expr) -> str:
    """ 打印成完全加括号的形式，再次解析得到同一棵树
    """
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f'(-{to_source(e.operand)})'
    if isinstance(e, BinOp):
        return f'({to_source(e.left)} {e.op} {to_source(e.right)})'
    return f'{e.name}({", ".join(to_source(a) for a in e.args)})'


def free_variables(e: Expr) -> frozenset:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    return frozenset().union(*(free_variables(a) for a in e.args))


def _power(base, exponent):
    base, exponent = np.broadcast_arrays(
        np.asarray(base, dtype=float), np.asarray(exponent, dtype=float)
    )
    if np.any((base < 0) & (exponent != np.round(exponent))):
        raise DomainError('negative base with non-integer exponent')
    if np.any((base == 0) & (exponent < 0)):
        raise DomainError('zero raised to a negative power')
    return np.power(base, exponent)


def evaluate(e: Expr, env: Mapping[str, object]):
    """ 在 `env` 上求值，变量可以是标量或同形状的数组
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise DomainError(f'variable {e.name!r} is not bound') from None
    if isinstance(e, Neg):
        return -np.asarray(evaluate(e.operand, env), dtype=float)

    with np.errstate(all='ignore'):
        if isinstance(e, BinOp):
            left = np.asarray(evaluate(e.left, env), dtype=float)
            right = np.asarray(evaluate(e.right, env), dtype=float)
            if e.op == '+':
                value = left + right
            elif e.op == '-':
                value = left - right
            elif e.op == '*':
                value = left * right
            elif e.op == '/':
                if np.any(right == 0):
                    raise DomainError('division by zero')
                value = left / right
            else:
                value = _power(left, right)
        else:
            args = [np.asarray(evaluate(a, env), dtype=float) for a in e.args]
            if e.name == 'sqrt':
                if np.any(args[0] < 0):
                    raise DomainError('sqrt of a negative number')
                value = np.sqrt(args[0])
            elif e.name == 'min':
                value = np.minimum.reduce(np.broadcast_arrays(*args))
            elif e.name == 'max':
                value = np.maximum.reduce(np.broadcast_arrays(*args))
            else:
                value = getattr(np, e.name)(args[0])

    if not np.all(np.isfinite(value)):
        raise DomainError(f'non-finite value in {to_source(e)}')
    return value


def coordinates_env(point) -> dict:
    """ 坐标转换成变量表，支持 (x,) (x, y) 或者映射
    """
    if isinstance(point, Mapping):
        return dict(point)
    point = np.atleast_1d(np.asarray(point, dtype=float))
    env = {'x': point[0]}
    if len(point) > 1:
        env['y'] = point[1]
    return env


def eval_expr(e: Expr, point) -> float:
    """ 单点求值
    """
    return float(evaluate(e, coordinates_env(point)))


def sample(e: Expr, coords: np.ndarray, **extra) -> np.ndarray:
    """ 在一组坐标（N×d）上求值，返回长度 N 的数组
    """
    coords = np.asarray(coords, dtype=float)
    env = {'x': coords[:, 0]}
    if coords.shape[1] > 1:
        env['y'] = coords[:, 1]
    env.update(extra)
    value = evaluate(e, env)
    return np.broadcast_to(np.asarray(value, dtype=float), coords.shape[:1]).copy()
