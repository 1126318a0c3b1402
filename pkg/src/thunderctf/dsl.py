"""The handler mini-language executed by emulated functions and container
web apps.

It is a total-by-construction string language: no loops, no recursion, no
variables.  Statements are ``if/else``, ``respond(e)``, ``error(e)`` and
``log(e)``; expressions are string literals, ``env("K")``, ``param("k")``,
``header("H")``, concatenation ``+``, equality ``==`` (producing ``"true"``
or ``"false"``), and ``fetch(url, header)`` -- the server-side GET that is
only observable inside the emulator network.

Execution is bounded: at most 1000 executed statements and at most 4
fetches per run.  ``error(e)`` writes an ERROR log entry whose message is
``e`` and aborts the run; the serving layer maps that to a generic 500 so
the details are only visible to whoever can read the logs.

Grammar (EBNF):

    program    = { statement } ;
    statement  = if_stmt | action ;
    if_stmt    = "if" expr block [ "else" ( block | if_stmt ) ] ;
    block      = "{" { statement } "}" ;
    action     = ( "respond" | "error" | "log" ) "(" expr ")" ;
    expr       = concat [ "==" concat ] ;
    concat     = term { "+" term } ;
    term       = STRING | call | "(" expr ")" ;
    call       = ( "env" | "param" | "header" ) "(" expr ")"
               | "fetch" "(" expr "," expr ")" ;

String literals use double quotes with ``\\"``, ``\\\\``, ``\\n`` and
``\\t`` escapes; ``#`` starts a comment running to end of line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .errors import HandlerError, LimitExceeded, ParseError

MAX_STATEMENTS = 1000
MAX_FETCHES = 4

KEYWORDS = {"if", "else", "respond", "error", "log", "env", "param", "header", "fetch"}


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Builtin:
    name: str  # env | param | header | fetch
    args: tuple


@dataclass(frozen=True)
class BinOp:
    op: str  # "+" | "=="
    left: "Expr"
    right: "Expr"


Expr = Union[Str, Builtin, BinOp]


@dataclass(frozen=True)
class Action:
    name: str  # respond | error | log
    expr: Expr
    line: int


@dataclass(frozen=True)
class If:
    cond: Expr
    then_block: tuple
    else_block: tuple
    line: int


Statement = Union[Action, If]


@dataclass(frozen=True)
class Program:
    statements: tuple


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str  # NAME | STRING | SYMBOL | EOF
    value: str
    line: int
    column: int


_SYMBOLS = ("==", "{", "}", "(", ")", ",", "+")
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


def _lex(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if ch == '"':
            start_line, start_col = line, col
            i += 1
            col += 1
            buf: list[str] = []
            while True:
                if i >= n or source[i] == "\n":
                    raise ParseError("unterminated string literal", start_line, start_col)
                c = source[i]
                if c == "\\":
                    if i + 1 >= n:
                        raise ParseError("dangling escape", line, col)
                    esc = source[i + 1]
                    if esc not in _ESCAPES:
                        raise ParseError(f"unknown escape: \\{esc}", line, col)
                    buf.append(_ESCAPES[esc])
                    i += 2
                    col += 2
                    continue
                if c == '"':
                    i += 1
                    col += 1
                    break
                buf.append(c)
                i += 1
                col += 1
            tokens.append(Token("STRING", "".join(buf), start_line, start_col))
            continue
        if ch.isalpha() or ch == "_":
            start_col = col
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            col += j - i
            i = j
            tokens.append(Token("NAME", word, line, start_col))
            continue
        matched = False
        for sym in _SYMBOLS:
            if source.startswith(sym, i):
                tokens.append(Token("SYMBOL", sym, line, col))
                i += len(sym)
                col += len(sym)
                matched = True
                break
        if not matched:
            raise ParseError(f"unexpected character: {ch!r}", line, col)
    tokens.append(Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_symbol(self, sym: str) -> Token:
        tok = self.next()
        if tok.kind != "SYMBOL" or tok.value != sym:
            raise ParseError(f"expected {sym!r}, found {tok.value!r}", tok.line, tok.column)
        return tok

    def parse_program(self) -> Program:
        statements = []
        while self.peek().kind != "EOF":
            statements.append(self.parse_statement())
        return Program(tuple(statements))

    def parse_statement(self) -> Statement:
        tok = self.peek()
        if tok.kind != "NAME":
            raise ParseError(f"expected a statement, found {tok.value!r}", tok.line, tok.column)
        if tok.value == "if":
            return self.parse_if()
        if tok.value in ("respond", "error", "log"):
            self.next()
            self.expect_symbol("(")
            expr = self.parse_expr()
            self.expect_symbol(")")
            return Action(tok.value, expr, tok.line)
        raise ParseError(f"unknown statement: {tok.value!r}", tok.line, tok.column)

    def parse_if(self) -> If:
        tok = self.next()  # "if"
        cond = self.parse_expr()
        then_block = self.parse_block()
        else_block: tuple = ()
        nxt = self.peek()
        if nxt.kind == "NAME" and nxt.value == "else":
            self.next()
            after = self.peek()
            if after.kind == "NAME" and after.value == "if":
                else_block = (self.parse_if(),)
            else:
                else_block = self.parse_block()
        return If(cond, then_block, else_block, tok.line)

    def parse_block(self) -> tuple:
        self.expect_symbol("{")
        statements = []
        while not (self.peek().kind == "SYMBOL" and self.peek().value == "}"):
            if self.peek().kind == "EOF":
                tok = self.peek()
                raise ParseError("unterminated block", tok.line, tok.column)
            statements.append(self.parse_statement())
        self.expect_symbol("}")
        return tuple(statements)

    def parse_expr(self) -> Expr:
        left = self.parse_concat()
        tok = self.peek()
        if tok.kind == "SYMBOL" and tok.value == "==":
            self.next()
            right = self.parse_concat()
            return BinOp("==", left, right)
        return left

    def parse_concat(self) -> Expr:
        expr = self.parse_term()
        while self.peek().kind == "SYMBOL" and self.peek().value == "+":
            self.next()
            right = self.parse_term()
            expr = BinOp("+", expr, right)
        return expr

    def parse_term(self) -> Expr:
        tok = self.next()
        if tok.kind == "STRING":
            return Str(tok.value)
        if tok.kind == "SYMBOL" and tok.value == "(":
            expr = self.parse_expr()
            self.expect_symbol(")")
            return expr
        if tok.kind == "NAME":
            if tok.value in ("env", "param", "header"):
                self.expect_symbol("(")
                arg = self.parse_expr()
                self.expect_symbol(")")
                return Builtin(tok.value, (arg,))
            if tok.value == "fetch":
                self.expect_symbol("(")
                url = self.parse_expr()
                self.expect_symbol(",")
                headers = self.parse_expr()
                self.expect_symbol(")")
                return Builtin("fetch", (url, headers))
            raise ParseError(f"unknown function: {tok.value!r}", tok.line, tok.column)
        raise ParseError(f"expected an expression, found {tok.value!r}", tok.line, tok.column)


def parse(source: str) -> Program:
    """Parse handler source, raising ParseError with line/column on failure."""
    parser = _Parser(_lex(source))
    return parser.parse_program()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class Runtime:
    """Everything a handler run may observe.

    ``fetcher(url, header_line)`` performs the emulator-internal GET and
    returns the response body; it raises HandlerError for anything outside
    the emulator network.  ``log_sink(severity, message)`` appends to the
    project log.
    """

    env: dict[str, str] = field(default_factory=dict)
    params: dict[str, str] = field(default_factory=dict)
    headers: dict[str, str] = field(default_factory=dict)
    fetcher: Optional[Callable[[str, str], str]] = None
    log_sink: Optional[Callable[[str, str], None]] = None


@dataclass
class HandlerResponse:
    status: int
    body: str


class _Halt(Exception):
    def __init__(self, response: HandlerResponse):
        self.response = response


class _Evaluator:
    def __init__(self, runtime: Runtime):
        self.runtime = runtime
        self.statements_run = 0
        self.fetches = 0

    def run(self, program: Program) -> HandlerResponse:
        try:
            self._run_block(program.statements)
        except _Halt as halt:
            return halt.response
        return HandlerResponse(200, "")

    def _run_block(self, statements: tuple) -> None:
        for stmt in statements:
            self._run_statement(stmt)

    def _run_statement(self, stmt: Statement) -> None:
        self.statements_run += 1
        if self.statements_run > MAX_STATEMENTS:
            raise LimitExceeded(f"statement budget exceeded ({MAX_STATEMENTS})")
        if isinstance(stmt, If):
            if self._eval(stmt.cond) == "true":
                self._run_block(stmt.then_block)
            else:
                self._run_block(stmt.else_block)
            return
        value = self._eval(stmt.expr)
        if stmt.name == "respond":
            raise _Halt(HandlerResponse(200, value))
        if stmt.name == "error":
            self._log("ERROR", value)
            raise HandlerError(value)
        self._log("INFO", value)

    def _log(self, severity: str, message: str) -> None:
        if self.runtime.log_sink is not None:
            self.runtime.log_sink(severity, message)

    def _eval(self, expr: Expr) -> str:
        if isinstance(expr, Str):
            return expr.value
        if isinstance(expr, BinOp):
            left = self._eval(expr.left)
            right = self._eval(expr.right)
            if expr.op == "+":
                return left + right
            return "true" if left == right else "false"
        if isinstance(expr, Builtin):
            if expr.name == "env":
                return self.runtime.env.get(self._eval(expr.args[0]), "")
            if expr.name == "param":
                return self.runtime.params.get(self._eval(expr.args[0]), "")
            if expr.name == "header":
                return _header_lookup(self.runtime.headers, self._eval(expr.args[0]))
            if expr.name == "fetch":
                url = self._eval(expr.args[0])
                header_line = self._eval(expr.args[1])
                self.fetches += 1
                if self.fetches > MAX_FETCHES:
                    raise LimitExceeded(f"fetch budget exceeded ({MAX_FETCHES})")
                if self.runtime.fetcher is None:
                    raise HandlerError("fetch is not available in this context")
                return self.runtime.fetcher(url, header_line)
        raise HandlerError(f"unknown expression node: {expr!r}")


def _header_lookup(headers: dict[str, str], name: str) -> str:
    lowered = name.lower()
    for key, value in headers.items():
        if key.lower() == lowered:
            return value
    return ""


def execute(program: Program, runtime: Runtime) -> HandlerResponse:
    """Run a parsed handler.  Raises HandlerError / LimitExceeded on abort."""
    return _Evaluator(runtime).run(program)


def evaluate(source: str, runtime: Runtime) -> HandlerResponse:
    return execute(parse(source), runtime)
