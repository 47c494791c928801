"""JSON problem files and the tiny convex expression grammar.

A problem file is a JSON object::

    {
      "agents": [
        {"dim": 2,
         "objective": "abs(x1 - 1) + (x2 - 1.5)^2",
         "constraints": ["exp(x2) - 5"],
         "box": [[1, 2], [1, 2]]},
        ...
      ],
      "laplacian": [[1, -1, 0], [-1, 2, -1], [0, -1, 1]],
      "consensus_depth": 1,
      "solver": {"h": 0.001, "method": "rk4", "t_max": 100.0, "kkt_tol": 1e-6},
      "init": {"x": [...], "lambda": [...], "mu": [...]}
    }

``solver`` and ``init`` are optional, as are per-agent ``objective``
(defaults to 0), ``constraints`` and ``box`` (defaults to the whole
space; box entries may be null for an unbounded side).

Expression strings use variables x1..x{dim} of the owning agent,
numeric literals, ``+``, ``-``, ``*`` by constants, ``abs(...)``,
``exp(xk)`` and squares ``(...)^2`` of single-variable affine terms.
Anything outside this vocabulary is rejected loudly: this parser
prefers a clear error over silently accepting a nonconvex formula.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import convex
from .convex import Box, ConstraintMap, ConvexExpr, no_constraints, whole_space
from .dynamics import AgentProblem, ProblemInstance, SolverState
from .errors import ConvexityError, ExpressionError, InvalidInputError

_TOKEN_RE = re.compile(
    r"(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<var>x\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^()])"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", position=pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive-descent parser producing ConvexExpr normal forms."""

    def __init__(self, text, dim):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.next()
        if text != value:
            raise ExpressionError(f"expected {value!r}, found {text or 'end of input'!r}", position=pos)

    def parse(self) -> ConvexExpr:
        expr = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing {text!r}", position=pos)
        return expr

    def expr(self) -> ConvexExpr:
        negate = False
        if self.peek()[1] == "-":
            self.next()
            negate = True
        try:
            total = self.term()
            if negate:
                total = -total
            while self.peek()[1] in ("+", "-"):
                op = self.next()[1]
                rhs = self.term()
                total = total + rhs if op == "+" else total - rhs
        except ConvexityError as exc:
            raise ExpressionError(f"non-convex atom: {exc}") from exc
        return total

    def term(self) -> ConvexExpr:
        factors = [self.factor()]
        while self.peek()[1] == "*":
            self.next()
            factors.append(self.factor())
        scalars = [f for f in factors if f.is_affine and not f.lin.any()]
        others = [f for f in factors if not (f.is_affine and not f.lin.any())]
        if len(others) > 1:
            raise ExpressionError(
                "products of non-constant expressions are outside the supported vocabulary"
            )
        coeff = 1.0
        for s in scalars:
            coeff *= s.const
        if not others:
            return convex.affine(np.zeros(self.dim), coeff)
        try:
            return coeff * others[0]
        except ConvexityError as exc:
            raise ExpressionError(f"non-convex atom: {exc}") from exc

    def factor(self) -> ConvexExpr:
        base, base_pos = self.primary()
        if self.peek()[1] == "^":
            self.next()
            kind, text, pos = self.next()
            if kind != "num":
                raise ExpressionError(f"expected an exponent, found {text!r}", position=pos)
            power = float(text)
            if power != 2.0:
                raise ExpressionError(
                    f"non-convex atom: power ^{text} (only squares are supported)",
                    position=pos,
                )
            return self._square(base, base_pos)
        return base

    def primary(self):
        kind, text, pos = self.next()
        if kind == "num":
            return convex.affine(np.zeros(self.dim), float(text)), pos
        if kind == "var":
            coord = int(text[1:]) - 1
            if not 0 <= coord < self.dim:
                raise ExpressionError(
                    f"variable {text} outside x1..x{self.dim}", position=pos
                )
            c = np.zeros(self.dim)
            c[coord] = 1.0
            return convex.affine(c), pos
        if kind == "name":
            if text not in ("abs", "exp"):
                raise ExpressionError(f"unknown function {text!r}", position=pos)
            self.expect("(")
            inner = self.expr()
            self.expect(")")
            if text == "abs":
                return self._absolute(inner, pos), pos
            return self._exponential(inner, pos), pos
        if text == "(":
            inner = self.expr()
            self.expect(")")
            return inner, pos
        raise ExpressionError(f"unexpected {text or 'end of input'!r}", position=pos)

    def _single_variable_affine(self, e: ConvexExpr, pos, what):
        if not e.is_affine:
            raise ExpressionError(
                f"{what} of a nonlinear expression is outside the supported vocabulary",
                position=pos,
            )
        nz = np.flatnonzero(e.lin)
        if len(nz) > 1:
            raise ExpressionError(
                f"{what} of a multi-variable expression is outside the supported vocabulary",
                position=pos,
            )
        if len(nz) == 0:
            return None, 0.0, e.const
        k = int(nz[0])
        return k, float(e.lin[k]), e.const

    def _square(self, e: ConvexExpr, pos) -> ConvexExpr:
        k, slope, const = self._single_variable_affine(e, pos, "a square")
        if k is None:
            return convex.affine(np.zeros(self.dim), const * const)
        return convex.quadratic(self.dim, k, center=-const / slope, weight=slope * slope)

    def _absolute(self, e: ConvexExpr, pos) -> ConvexExpr:
        k, slope, const = self._single_variable_affine(e, pos, "an absolute value")
        if k is None:
            return convex.affine(np.zeros(self.dim), abs(const))
        return convex.absolute(self.dim, k, center=-const / slope, weight=abs(slope))

    def _exponential(self, e: ConvexExpr, pos) -> ConvexExpr:
        k, slope, const = self._single_variable_affine(e, pos, "an exponential")
        if k is None or slope != 1.0 or const != 0.0:
            raise ExpressionError(
                "exp(...) supports a bare variable argument only", position=pos
            )
        return convex.exponential(self.dim, k)


def parse_expression(text: str, dim: int) -> ConvexExpr:
    """Parse one expression string over x1..x{dim}."""
    return _Parser(text, int(dim)).parse()


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _shifted_var(coord, center):
    name = f"x{coord + 1}"
    if center == 0:
        return name
    if center > 0:
        return f"{name} - {_fmt(center)}"
    return f"{name} + {_fmt(-center)}"


def format_expression(e: ConvexExpr) -> str:
    """Canonical string form; reparsing yields an equal expression."""
    parts = []  # (negative, text)
    for k, c, w in zip(e.quad_idx, e.quad_center, e.quad_weight):
        text = f"({_shifted_var(k, c)})^2"
        if w != 1.0:
            text = f"{_fmt(w)}*{text}"
        parts.append((False, text))
    for k, c, w in zip(e.abs_idx, e.abs_center, e.abs_weight):
        text = f"abs({_shifted_var(k, c)})"
        if w != 1.0:
            text = f"{_fmt(w)}*{text}"
        parts.append((False, text))
    for k, w in zip(e.exp_idx, e.exp_weight):
        text = f"exp(x{k + 1})"
        if w != 1.0:
            text = f"{_fmt(w)}*{text}"
        parts.append((False, text))
    for k in np.flatnonzero(e.lin):
        a = e.lin[k]
        text = f"x{k + 1}" if abs(a) == 1.0 else f"{_fmt(abs(a))}*x{k + 1}"
        parts.append((a < 0, text))
    if e.const != 0.0 or not parts:
        parts.append((e.const < 0, _fmt(abs(e.const))))
    out = []
    for i, (neg, text) in enumerate(parts):
        if i == 0:
            out.append(f"-{text}" if neg else text)
        else:
            out.append(f" - {text}" if neg else f" + {text}")
    return "".join(out)


# -- problem files -----------------------------------------------------------


@dataclass
class SolverSettings:
    h: float = 1e-3
    method: str = "rk4"
    t_max: float = 100.0
    kkt_tol: float = 1e-6


@dataclass
class LoadedProblem:
    problem: ProblemInstance
    settings: SolverSettings
    init: SolverState = None


def _bound(v, default):
    if v is None:
        return default
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return np.inf
        if s in ("-inf", "-infinity"):
            return -np.inf
        raise ExpressionError(f"bad box bound {v!r}")
    return float(v)


def _parse_agent(entry, index):
    where = f"agents[{index}]"
    if not isinstance(entry, dict):
        raise ExpressionError(f"{where} must be an object")
    if "dim" not in entry:
        raise ExpressionError(f"{where} is missing 'dim'")
    dim = int(entry["dim"])
    if dim < 1:
        raise ExpressionError(f"{where}.dim must be >= 1")
    known = {"dim", "objective", "constraints", "box"}
    unknown = set(entry) - known
    if unknown:
        raise ExpressionError(f"{where} has unknown keys {sorted(unknown)}")
    objective = parse_expression(str(entry.get("objective", "0")), dim)
    rows = entry.get("constraints", [])
    constraints = (
        ConstraintMap(tuple(parse_expression(str(r), dim) for r in rows))
        if rows
        else no_constraints()
    )
    if "box" in entry and entry["box"] is not None:
        pairs = entry["box"]
        if len(pairs) != dim:
            raise ExpressionError(
                f"{where}.box has {len(pairs)} pairs for dimension {dim}"
            )
        if any(not isinstance(p, (list, tuple)) or len(p) != 2 for p in pairs):
            raise ExpressionError(f"{where}.box entries must be [lower, upper] pairs")
        lower = np.array([_bound(p[0], -np.inf) for p in pairs])
        upper = np.array([_bound(p[1], np.inf) for p in pairs])
        box = Box(lower, upper)
    else:
        box = whole_space(dim)
    return AgentProblem(objective=objective, constraints=constraints, box=box)


def parse_problem_dict(doc: dict, slater_probe: bool = True) -> LoadedProblem:
    if not isinstance(doc, dict):
        raise ExpressionError("problem file must contain a JSON object")
    for key in ("agents", "laplacian", "consensus_depth"):
        if key not in doc:
            raise ExpressionError(f"problem file is missing {key!r}")
    unknown = set(doc) - {"agents", "laplacian", "consensus_depth", "solver", "init"}
    if unknown:
        raise ExpressionError(f"problem file has unknown keys {sorted(unknown)}")
    agents = [_parse_agent(a, i) for i, a in enumerate(doc["agents"])]
    problem = ProblemInstance(
        agents,
        np.asarray(doc["laplacian"], dtype=float),
        int(doc["consensus_depth"]),
        slater_probe=slater_probe,
    )

    settings = SolverSettings()
    if "solver" in doc and doc["solver"] is not None:
        block = doc["solver"]
        unknown = set(block) - {"h", "method", "t_max", "kkt_tol"}
        if unknown:
            raise ExpressionError(f"solver block has unknown keys {sorted(unknown)}")
        settings = SolverSettings(
            h=float(block.get("h", settings.h)),
            method=str(block.get("method", settings.method)),
            t_max=float(block.get("t_max", settings.t_max)),
            kkt_tol=float(block.get("kkt_tol", settings.kkt_tol)),
        )

    init = None
    if "init" in doc and doc["init"] is not None:
        init = _parse_init(doc["init"], problem)
    return LoadedProblem(problem=problem, settings=settings, init=init)


def _parse_init(block, problem) -> SolverState:
    unknown = set(block) - {"x", "lambda", "mu"}
    if unknown:
        raise ExpressionError(f"init block has unknown keys {sorted(unknown)}")
    n, m = problem.total_dim, problem.multiplier_dim
    x = np.asarray(block.get("x", np.zeros(n)), dtype=float)
    lam = np.asarray(block.get("lambda", np.zeros(n)), dtype=float)
    mu = np.asarray(block.get("mu", np.zeros(m)), dtype=float)
    for name, arr, want in (("x", x, n), ("lambda", lam, n), ("mu", mu, m)):
        if arr.shape != (want,):
            raise ExpressionError(f"init.{name} must have length {want}")
    return SolverState(x, lam, mu, 0.0)


def parse_problem(path, slater_probe: bool = True) -> LoadedProblem:
    """Load and validate a problem file; see the module docstring for the schema."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ExpressionError(
                f"invalid JSON in {path}: {exc.msg} (line {exc.lineno}, column {exc.colno})"
            ) from exc
    return parse_problem_dict(doc, slater_probe=slater_probe)


def serialize_problem(problem: ProblemInstance, settings: SolverSettings = None) -> dict:
    """Inverse of ``parse_problem_dict`` (round-trips to an equal instance)."""
    agents = []
    for a in problem.agents:
        entry = {"dim": a.dim, "objective": format_expression(a.objective)}
        if a.constraints.size:
            entry["constraints"] = [format_expression(c) for c in a.constraints.components]
        if not (np.all(np.isneginf(a.box.lower)) and np.all(np.isposinf(a.box.upper))):
            entry["box"] = [
                [None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi]
                for lo, hi in zip(a.box.lower, a.box.upper)
            ]
        agents.append(entry)
    doc = {
        "agents": agents,
        "laplacian": problem.laplacian.tolist(),
        "consensus_depth": problem.depth,
    }
    if settings is not None:
        doc["solver"] = {
            "h": settings.h,
            "method": settings.method,
            "t_max": settings.t_max,
            "kkt_tol": settings.kkt_tol,
        }
    return doc


def fixture_path(name: str):
    """Path of a packaged example problem file."""
    path = resources.files("pcons").joinpath("fixtures", name)
    if not path.is_file():
        raise InvalidInputError(f"no packaged fixture named {name!r}")
    return path
