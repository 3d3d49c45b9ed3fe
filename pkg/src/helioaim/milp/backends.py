"""Solver backends. A backend turns a :class:`MilpModel` into a raw assignment."""
from __future__ import annotations

import os
import platform
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from ..errors import BackendError
from .encoding import MilpModel
from .lpformat import read_cbc_solution, read_sol_file, write_lp

SOLVER_ENV = "HELIO_SOLVER_PATH"


@dataclass
class BackendResult:
    status: str  # optimal | feasible | infeasible | timeout | unbounded
    values: np.ndarray | None
    objective: float
    gap: float
    wall_time: float = 0.0


class SolverBackend:
    name = "abstract"

    def check(self) -> None:
        """Raise :class:`BackendError` if the backend cannot run at all."""

    def solve(self, model: MilpModel, time_limit: float = 300.0, gap: float = 1e-4) -> BackendResult:
        raise NotImplementedError


class HighsBackend(SolverBackend):
    """In-process HiGHS branch-and-bound through :func:`scipy.optimize.milp`."""

    name = "highs"

    def solve(self, model, time_limit=300.0, gap=1e-4):
        start = time.perf_counter()
        if not model.box_feasible():
            return BackendResult("infeasible", None, np.nan, np.nan, 0.0)
        res = milp(
            c=-model.objective,
            constraints=LinearConstraint(model.A, model.row_lo, model.row_hi),
            integrality=model.integrality,
            bounds=Bounds(model.lb, model.ub),
            options={"time_limit": float(time_limit), "mip_rel_gap": float(gap), "disp": False},
        )
        elapsed = time.perf_counter() - start
        mip_gap = float(getattr(res, "mip_gap", np.nan) or 0.0)
        if res.status == 0:
            return BackendResult("optimal", res.x, -res.fun, mip_gap, elapsed)
        if res.status == 1:
            if res.x is not None:
                return BackendResult("feasible", res.x, -res.fun, mip_gap, elapsed)
            return BackendResult("timeout", None, np.nan, np.nan, elapsed)
        if res.status == 2:
            return BackendResult("infeasible", None, np.nan, np.nan, elapsed)
        if res.status == 3:
            return BackendResult("unbounded", None, np.nan, np.nan, elapsed)
        raise BackendError(f"HiGHS failed: {res.message}")


def find_solver(path: str | None = None) -> str:
    """Locate a CBC-compatible executable.

    Order: explicit path, ``$HELIO_SOLVER_PATH``, ``cbc`` on PATH, then the
    binary bundled with the ``pulp`` package if it is installed.
    """
    for candidate in (path, os.environ.get(SOLVER_ENV)):
        if candidate:
            resolved = shutil.which(candidate) or (candidate if Path(candidate).is_file() else None)
            if resolved is None:
                raise BackendError(f"solver executable not found: {candidate}")
            return resolved
    found = shutil.which("cbc")
    if found:
        return found
    try:
        import importlib.util

        spec = importlib.util.find_spec("pulp")
    except (ImportError, ValueError):
        spec = None
    if spec and spec.origin:
        system = {"Linux": "linux", "Darwin": "osx"}.get(platform.system(), "win")
        arch = {"x86_64": "i64", "AMD64": "i64", "aarch64": "arm64", "arm64": "arm64"}.get(
            platform.machine(), platform.machine())
        hit = Path(spec.origin).parent / "solverdir" / "cbc" / system / arch / "cbc"
        if hit.is_file() and os.access(hit, os.X_OK):
            return str(hit)
    raise BackendError(f"no MILP solver executable found (set {SOLVER_ENV} or solver.path)")


class LpFileBackend(SolverBackend):
    """Write the model in LP format, run an external solver, read its solution file.

    ``flavor="cbc"`` runs ``<exe> model.lp sec T ratio G solve solu out.sol``;
    ``flavor="sol"`` runs ``<exe> model.lp`` followed by ``args`` and expects a
    ``name value`` file at ``out.sol`` (use ``{lp}``, ``{sol}``, ``{time}`` and
    ``{gap}`` placeholders in ``args``).
    """

    name = "lp-file"

    def __init__(self, path: str | None = None, flavor: str = "cbc", args: list[str] | None = None,
                 workdir: str | None = None, keep_files: bool = False):
        self.path = path
        self.flavor = flavor
        self.args = args
        self.workdir = workdir
        self.keep_files = keep_files

    def executable(self) -> str:
        return find_solver(self.path)

    def check(self) -> None:
        self.executable()

    def _command(self, exe, lp, sol, time_limit, gap):
        if self.args is not None:
            fmt = {"lp": lp, "sol": sol, "time": time_limit, "gap": gap}
            return [exe] + [a.format(**fmt) for a in self.args]
        if self.flavor == "cbc":
            return [exe, lp, "sec", str(time_limit), "ratio", repr(gap), "solve", "solu", sol]
        raise BackendError(f"no default command line for solver flavor {self.flavor!r}")

    def solve(self, model, time_limit=300.0, gap=1e-4):
        exe = self.executable()
        start = time.perf_counter()
        tmp = tempfile.mkdtemp(prefix="helioaim-", dir=self.workdir)
        lp = os.path.join(tmp, "model.lp")
        sol = os.path.join(tmp, "out.sol")
        try:
            write_lp(model, lp)
            cmd = self._command(exe, lp, sol, time_limit, gap)
            try:
                proc = subprocess.run(cmd, capture_output=True, text=True,
                                      timeout=time_limit + 60)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise BackendError(f"solver process failed: {exc}") from exc
            if not os.path.exists(sol):
                raise BackendError(f"solver wrote no solution file (exit {proc.returncode}): "
                                   f"{proc.stdout[-500:]}{proc.stderr[-500:]}")
            if self.flavor == "cbc":
                status, values, objective = read_cbc_solution(sol, model.names)
            else:
                status, values, objective = read_sol_file(sol, model.names)
        finally:
            if not self.keep_files:
                shutil.rmtree(tmp, ignore_errors=True)
        return BackendResult(status, values, objective, np.nan, time.perf_counter() - start)


def make_backend(name: str = "highs", path: str | None = None) -> SolverBackend:
    if name == "highs":
        return HighsBackend()
    if name in ("lp-file", "cbc"):
        return LpFileBackend(path)
    if name == "enumerate":
        from .oracle import EnumerationBackend
        return EnumerationBackend()
    raise BackendError(f"unknown solver backend {name!r}")
