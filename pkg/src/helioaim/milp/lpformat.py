"""CPLEX LP-format writer and solution-file readers for external solvers."""
from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from ..errors import BackendError
from .encoding import MilpModel

_TERMS_PER_LINE = 8


def _num(value: float) -> str:
    return repr(float(value))


def _expr(terms) -> list[str]:
    parts = []
    for col_name, coef in terms:
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {_num(abs(coef))} {col_name}")
    if parts and parts[0].startswith("+ "):
        parts[0] = parts[0][2:]
    lines = [" ".join(parts[i:i + _TERMS_PER_LINE]) for i in range(0, len(parts), _TERMS_PER_LINE)]
    return lines or ["0 " + "qs"]


def lp_text(model: MilpModel) -> str:
    names = model.names
    out = ["\\ surrogate aiming problem", "Maximize"]
    obj_terms = [(names[i], model.objective[i]) for i in np.flatnonzero(model.objective)]
    obj = _expr(obj_terms)
    out.append(" obj: " + obj[0])
    out.extend("   " + line for line in obj[1:])
    out.append("Subject To")
    A = model.A.tocsr()
    for r, row_name in enumerate(model.row_names):
        start, stop = A.indptr[r], A.indptr[r + 1]
        terms = [(names[c], v) for c, v in zip(A.indices[start:stop], A.data[start:stop])]
        lo, hi = model.row_lo[r], model.row_hi[r]
        body = _expr(terms)
        if lo == hi:
            sense = f"= {_num(hi)}"
        elif math.isinf(lo):
            sense = f"<= {_num(hi)}"
        elif math.isinf(hi):
            sense = f">= {_num(lo)}"
        else:
            # ranged rows are not produced by the encoder
            raise BackendError(f"ranged row {row_name} cannot be written")
        body[-1] = body[-1] + " " + sense
        out.append(f" {row_name}: " + body[0])
        out.extend("   " + line for line in body[1:])
    out.append("Bounds")
    binaries = []
    for i, name in enumerate(names):
        lo, hi = model.lb[i], model.ub[i]
        if model.integrality[i]:
            binaries.append(name)
            if lo != 0.0 or hi != 1.0:
                out.append(f" {_num(lo)} <= {name} <= {_num(hi)}")
            continue
        if math.isinf(lo) and math.isinf(hi):
            out.append(f" {name} free")
        elif math.isinf(hi):
            if lo != 0.0:
                out.append(f" {name} >= {_num(lo)}")
        elif math.isinf(lo):
            out.append(f" -inf <= {name} <= {_num(hi)}")
        else:
            out.append(f" {_num(lo)} <= {name} <= {_num(hi)}")
    if binaries:
        out.append("Binaries")
        for i in range(0, len(binaries), _TERMS_PER_LINE):
            out.append(" " + " ".join(binaries[i:i + _TERMS_PER_LINE]))
    out.append("End")
    return "\n".join(out) + "\n"


def write_lp(model: MilpModel, path: str | Path) -> None:
    Path(path).write_text(lp_text(model))


_CBC_STATUS = [
    ("optimal", "optimal"),
    ("infeasible", "infeasible"),
    ("integer infeasible", "infeasible"),
    ("unbounded", "unbounded"),
    ("stopped on time", "timeout"),
    ("stopped on iterations", "timeout"),
    ("stopped on ratio", "feasible"),
    ("stopped on gap", "feasible"),
    ("stopped on solutions", "feasible"),
]


def read_cbc_solution(path: str | Path, names: list[str]):
    """Parse a CBC ``solu`` file into (status, values, objective).

    Variables absent from the file are zero. A timeout that still printed
    values is reported as ``feasible``.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise BackendError("empty solution file")
    header = lines[0].strip().lower()
    status = None
    for prefix, value in _CBC_STATUS:
        if header.startswith(prefix):
            status = value
            break
    if status is None:
        raise BackendError(f"unrecognized solution header: {lines[0]!r}")
    match = re.search(r"objective value\s+(\S+)", lines[0], re.IGNORECASE)
    objective = float(match.group(1)) if match else math.nan
    position = {n: i for i, n in enumerate(names)}
    values = np.zeros(len(names))
    seen = 0
    for line in lines[1:]:
        fields = line.replace("**", " ").split()
        if len(fields) < 3:
            continue
        name = fields[1]
        if name in position:
            values[position[name]] = float(fields[2])
            seen += 1
    if status == "timeout" and seen:
        status = "feasible"
    if status in ("infeasible", "unbounded") or (status == "timeout" and not seen):
        return status, None, objective
    return status, values, objective


def read_sol_file(path: str | Path, names: list[str]):
    """Parse a plain ``name value`` solution file (Gurobi/HiGHS style, '#' comments)."""
    position = {n: i for i, n in enumerate(names)}
    values = np.zeros(len(names))
    objective = math.nan
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            match = re.search(r"objective value\s*=\s*(\S+)", line, re.IGNORECASE)
            if match:
                objective = float(match.group(1))
            continue
        fields = line.split()
        if len(fields) >= 2 and fields[0] in position:
            values[position[fields[0]]] = float(fields[1])
    return "feasible", values, objective
