"""Parser and evaluator for flow vector fields and scalar observables.

Grammar (recursive descent, precedence low to high):

    expr   := term   (('+'|'-') term)*
    term   := unary  (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

so '^' binds tighter than unary minus ("-x^2" is -(x^2)) and function
application binds tighter than everything. Variables are x, y, z with
aliases x1, x2, x3; functions are sin, cos, exp.

Evaluation is plain IEEE double arithmetic and is vectorized: points may be
scalars or numpy arrays, which is how operator assembly caches coefficient
fields in one pass over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DivisionByZero,
    DomainMismatch,
    ExprSyntaxError,
    UnknownFlow,
    UnknownIdentifier,
    ValidationError,
)

VAR_NAMES = {"x": 0, "y": 1, "z": 2, "x1": 0, "x2": 1, "x3": 2}
CANONICAL = {0: "x", 1: "y", 2: "z"}
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Neg:
    child: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


FieldExpr = (Num, Var, Neg, BinOp, Call)


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------

class _Tokenizer:
    def __init__(self, src):
        self.src = src
        self.pos = 0
        self.tokens = []
        self._scan()
        self.i = 0

    def _scan(self):
        s, n = self.src, len(self.src)
        pos = 0
        while pos < n:
            c = s[pos]
            if c.isspace():
                pos += 1
                continue
            if c in "+-*/^()":
                self.tokens.append((c, c, pos))
                pos += 1
                continue
            if c.isdigit() or c == ".":
                start = pos
                while pos < n and (s[pos].isdigit() or s[pos] == "."):
                    pos += 1
                # exponent part: 1e-3, 2.5E+4
                if pos < n and s[pos] in "eE":
                    mark = pos
                    pos += 1
                    if pos < n and s[pos] in "+-":
                        pos += 1
                    if pos < n and s[pos].isdigit():
                        while pos < n and s[pos].isdigit():
                            pos += 1
                    else:
                        pos = mark  # bare 'e' is an identifier boundary, not ours
                text = s[start:pos]
                try:
                    val = float(text)
                except ValueError:
                    raise ExprSyntaxError(f"bad number {text!r}", start)
                self.tokens.append(("num", val, start))
                continue
            if c.isalpha() or c == "_":
                start = pos
                while pos < n and (s[pos].isalnum() or s[pos] == "_"):
                    pos += 1
                self.tokens.append(("name", s[start:pos], start))
                continue
            raise ExprSyntaxError(f"unexpected character {c!r}", pos)
        self.tokens.append(("end", None, n))

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok


class _Parser:
    def __init__(self, src):
        self.tk = _Tokenizer(src)

    def parse(self):
        node = self.expr()
        kind, _, pos = self.tk.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {kind!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.tk.peek()[0] in ("+", "-"):
            op, _, _ = self.tk.next()
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tk.peek()[0] in ("*", "/"):
            op, _, _ = self.tk.next()
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tk.peek()[0] == "-":
            self.tk.next()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.tk.peek()[0] == "^":
            self.tk.next()
            return BinOp("^", base, self.unary())  # right-assoc, exponent may carry unary minus
        return base

    def atom(self):
        kind, val, pos = self.tk.next()
        if kind == "num":
            return Num(val)
        if kind == "name":
            if self.tk.peek()[0] == "(":
                if val not in FUNCTIONS:
                    raise UnknownIdentifier(val, pos)
                self.tk.next()
                arg = self.expr()
                k2, _, p2 = self.tk.next()
                if k2 != ")":
                    raise ExprSyntaxError("expected ')'", p2)
                return Call(val, arg)
            if val in VAR_NAMES:
                return Var(VAR_NAMES[val])
            raise UnknownIdentifier(val, pos)
        if kind == "(":
            node = self.expr()
            k2, _, p2 = self.tk.next()
            if k2 != ")":
                raise ExprSyntaxError("expected ')'", p2)
            return node
        raise ExprSyntaxError(f"unexpected token {kind!r}", pos)


def parse(src):
    """Parse an expression string into a FieldExpr AST."""
    if not isinstance(src, str) or not src.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(expr, point):
    """Evaluate an AST at a point (sequence of scalars or numpy arrays)."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        if expr.index >= len(point):
            raise DomainMismatch(
                f"expression uses variable {CANONICAL[expr.index]!r} but point has dimension {len(point)}"
            )
        return point[expr.index]
    if isinstance(expr, Neg):
        return -evaluate(expr.child, point)
    if isinstance(expr, Call):
        return FUNCTIONS[expr.fn](evaluate(expr.arg, point))
    # BinOp
    a = evaluate(expr.left, point)
    b = evaluate(expr.right, point)
    if expr.op == "+":
        return a + b
    if expr.op == "-":
        return a - b
    if expr.op == "*":
        return a * b
    if expr.op == "/":
        if np.any(np.asarray(b) == 0):
            raise DivisionByZero("division by zero during evaluation")
        return a / b
    if expr.op == "^":
        with np.errstate(invalid="ignore"):
            out = np.power(a, b, dtype=float) if isinstance(a, np.ndarray) or isinstance(b, np.ndarray) else a ** b
        return out
    raise ValidationError(f"unknown operator {expr.op!r}")


def eval_on_grids(expr, grids):
    """Evaluate on raveled coordinate arrays, returning an (n_grid,) float array."""
    out = evaluate(expr, grids)
    return np.broadcast_to(np.asarray(out, dtype=float), grids[0].shape).copy()


def variables_used(expr):
    """Set of variable indices appearing in the AST."""
    if isinstance(expr, Var):
        return {expr.index}
    if isinstance(expr, Neg):
        return variables_used(expr.child)
    if isinstance(expr, Call):
        return variables_used(expr.arg)
    if isinstance(expr, BinOp):
        return variables_used(expr.left) | variables_used(expr.right)
    return set()


# ---------------------------------------------------------------------------
# pretty printing (parse . pretty . parse is AST-identical)
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node):
    if isinstance(node, (Num, Var, Call)):
        return _PREC_ATOM
    if isinstance(node, Neg):
        return _PREC_UNARY
    return _PREC_POW if node.op == "^" else (_PREC_MUL if node.op in "*/" else _PREC_ADD)


def pretty(node):
    """Render an AST back to source with minimal parentheses."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return CANONICAL[node.index]
    if isinstance(node, Neg):
        s = pretty(node.child)
        if _prec(node.child) < _PREC_UNARY:
            s = f"({s})"
        return f"-{s}"
    if isinstance(node, Call):
        return f"{node.fn}({pretty(node.arg)})"
    p = _prec(node)
    ls, rs = pretty(node.left), pretty(node.right)
    if node.op == "^":
        if _prec(node.left) < _PREC_ATOM:  # left operand of ^ must be an atom
            ls = f"({ls})"
        if _prec(node.right) < _PREC_UNARY:
            rs = f"({rs})"
    else:
        if _prec(node.left) < p:
            ls = f"({ls})"
        if _prec(node.right) <= p:  # left-associative
            rs = f"({rs})"
    return f"{ls} {node.op} {rs}" if node.op in "+-" else f"{ls}{node.op}{rs}"


# ---------------------------------------------------------------------------
# flow specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowSpec:
    """A flow vector field on T^D plus noise temperature and constant vielbein."""

    components: tuple
    temperature: float
    vielbein: tuple = None
    sources: tuple = None  # original expression strings, for config echo

    def __post_init__(self):
        D = len(self.components)
        if self.temperature < 0:
            raise ValidationError(f"noise temperature must be >= 0, got {self.temperature}")
        vb = self.vielbein if self.vielbein is not None else tuple(1.0 for _ in range(D))
        vb = tuple(float(v) for v in vb)
        if len(vb) != D or any(v <= 0 for v in vb):
            raise ValidationError(f"vielbein must be {D} positive reals, got {vb}")
        object.__setattr__(self, "vielbein", vb)
        for i, comp in enumerate(self.components):
            bad = [v for v in variables_used(comp) if v >= D]
            if bad:
                raise DomainMismatch(
                    f"component {i} references variable index {max(bad)} but flow dimension is {D}"
                )

    @property
    def dim(self):
        return len(self.components)

    def component_values(self, grids):
        """Cache-friendly: each F^i evaluated once over the raveled grid."""
        return [eval_on_grids(c, grids) for c in self.components]


def flow_from_strings(sources, T, vielbein=None):
    sources = tuple(str(s) for s in sources)
    return FlowSpec(
        components=tuple(parse(s) for s in sources),
        temperature=float(T),
        vielbein=tuple(vielbein) if vielbein is not None else None,
        sources=sources,
    )


# registry of test systems; component templates take the flow parameters
_BUILTIN_FLOWS = {
    "diffusion": {"params": {"D": 1}, "components": lambda p: ["0"] * int(p["D"])},
    "drift1d": {"params": {"v": 1.0}, "components": lambda p: [repr(float(p["v"]))]},
    "pendulum1d": {"params": {}, "components": lambda p: ["-sin(x)"]},
    "shear2d": {"params": {}, "components": lambda p: ["sin(y)", "0"]},
    "abc": {
        "params": {"A": 1.0, "B": 1.0, "C": 1.0},
        "components": lambda p: [
            f"{float(p['A'])!r}*sin(z) + {float(p['C'])!r}*cos(y)",
            f"{float(p['B'])!r}*sin(x) + {float(p['A'])!r}*cos(z)",
            f"{float(p['C'])!r}*sin(y) + {float(p['B'])!r}*cos(x)",
        ],
    },
}


def builtin_flow(name, params):
    """Look up a named flow; params must carry T plus the flow's own knobs."""
    if name not in _BUILTIN_FLOWS:
        raise UnknownFlow(f"unknown builtin flow {name!r} (have {sorted(_BUILTIN_FLOWS)})")
    entry = _BUILTIN_FLOWS[name]
    params = dict(params)
    if "T" not in params:
        raise ValidationError(f"builtin flow {name!r} requires a noise temperature T")
    T = float(params.pop("T"))
    vielbein = params.pop("vielbein", None)
    merged = dict(entry["params"])
    for key, val in params.items():
        if key not in merged:
            raise ValidationError(f"flow {name!r} does not take parameter {key!r}")
        merged[key] = val
    return flow_from_strings(entry["components"](merged), T, vielbein)
