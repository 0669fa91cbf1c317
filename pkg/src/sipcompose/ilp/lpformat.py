"""CPLEX LP text export and a parser for the subset this module writes."""

from __future__ import annotations

import math
import re

from ..errors import ParseError
from .model import INF, IlpModel, LinearConstraint

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_TOKEN = re.compile(r"[+-]|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[A-Za-z_][\w.]*|\S")


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def _expr(coeffs) -> str:
    parts = []
    for k, (v, c) in enumerate(coeffs):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        term = v if mag == 1 else f"{_num(mag)} {v}"
        if k == 0:
            parts.append(f"- {term}" if sign == "-" else term)
        else:
            parts.append(f"{sign} {term}")
    return " ".join(parts) if parts else "0"


def export_lp(model: IlpModel) -> str:
    """CPLEX LP text; double-bounded rows become two one-sided rows."""
    lines = ["\\ manifest selection model", "Minimize" if model.sense == "minimize" else "Maximize"]
    obj = [(v, model.objective[v]) for v in model.vars if model.objective.get(v, 0) != 0]
    lines.append(f" obj: {_expr(obj)}" if obj else " obj:")
    lines.append("Subject To")
    for c in model.constraints:
        body = _expr(c.coeffs)
        if c.lo == c.hi:
            lines.append(f" {c.name}: {body} = {_num(c.lo)}")
        elif math.isfinite(c.lo) and math.isfinite(c.hi):
            lines.append(f" {c.name}_lo: {body} >= {_num(c.lo)}")
            lines.append(f" {c.name}_hi: {body} <= {_num(c.hi)}")
        elif math.isfinite(c.hi):
            lines.append(f" {c.name}: {body} <= {_num(c.hi)}")
        elif math.isfinite(c.lo):
            lines.append(f" {c.name}: {body} >= {_num(c.lo)}")
    lines.append("Binary")
    if model.vars:
        lines.append(" " + " ".join(model.vars))
    lines.append("End")
    return "\n".join(lines) + "\n"


def _parse_expr(text: str, where: str) -> list[tuple[str, float]]:
    tokens = _TOKEN.findall(text)
    out: list[tuple[str, float]] = []
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in "+-":
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            coef = float(tok)
            continue
        except ValueError:
            pass
        if not _NAME.match(tok):
            raise ParseError(f"{where}: bad token {tok!r}")
        out.append((tok, sign * (1.0 if coef is None else coef)))
        sign, coef = 1.0, None
    if coef is not None and not (out == [] and coef == 0):
        raise ParseError(f"{where}: dangling coefficient")
    return out


def parse_lp(text: str) -> IlpModel:
    """Parse LP text produced by ``export_lp`` into a model of one-sided rows."""
    section = None
    sense = "minimize"
    obj_text = ""
    rows: list[tuple[str, str, str, float]] = []
    binaries: list[str] = []
    ended = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        key = line.lower()
        if key in ("minimize", "maximize", "minimum", "maximum", "min", "max"):
            section, sense = "obj", "minimize" if key.startswith("min") else "maximize"
            continue
        if key in ("subject to", "such that", "st", "s.t."):
            section = "st"
            continue
        if key in ("binary", "binaries", "bin"):
            section = "bin"
            continue
        if key == "end":
            ended = True
            break
        where = f"line {lineno}"
        if section == "obj":
            obj_text += " " + line.split(":", 1)[-1] if ":" in line else " " + line
        elif section == "st":
            m = re.match(r"^(?:([^:]+):)?\s*(.*?)\s*(<=|>=|=<|=>|=)\s*([-+]?[0-9.eE+-]+)$", line)
            if not m:
                raise ParseError(f"{where}: malformed constraint {line!r}")
            name, body, op, rhs = m.groups()
            try:
                rows.append(((name or f"r{len(rows)}").strip(), body, op, float(rhs)))
            except ValueError:
                raise ParseError(f"{where}: bad right-hand side {rhs!r}") from None
        elif section == "bin":
            binaries += line.split()
        else:
            raise ParseError(f"{where}: content outside any section")
    if not ended:
        raise ParseError("missing End")
    model = IlpModel(vars=list(dict.fromkeys(binaries)))
    model.sense = sense
    known = set(model.vars)
    for v, c in _parse_expr(obj_text, "objective"):
        if v not in known:
            raise ParseError(f"objective uses undeclared variable {v}")
        model.objective[v] = model.objective.get(v, 0.0) + c
    for name, body, op, rhs in rows:
        coeffs = _parse_expr(body, name)
        for v, _ in coeffs:
            if v not in known:
                raise ParseError(f"{name}: undeclared variable {v}")
        if op in ("<=", "=<"):
            lo, hi = -INF, rhs
        elif op in (">=", "=>"):
            lo, hi = rhs, INF
        else:
            lo = hi = rhs
        model.constraints.append(LinearConstraint(tuple(coeffs), lo, hi, name))
    return model


def one_sided_rows(model: IlpModel) -> set[tuple]:
    """Canonical set of one-sided rows, for comparing models up to row splitting."""
    out = set()
    for c in model.constraints:
        key = tuple(sorted((v, float(a)) for v, a in c.coeffs if a != 0))
        if math.isfinite(c.hi):
            out.add((key, "<=", float(c.hi)))
        if math.isfinite(c.lo):
            out.add((key, ">=", float(c.lo)))
    return out
