"""Conic subproblem container, incremental builder, and interior-point solve.

The subproblem class of this package is: convex quadratic objective, linear
equalities, scalar upper bounds, and second-order cones.  Problems are held
in the standard embedded form (minimize (1/2) x'Px + q'x subject to
Ax + s = b, s in K) with constraint rows ordered zero cone, nonnegative
cone, then second-order cones.  `SubproblemBuilder` assembles that form
from named variables and affine expressions; `solve_subproblem` hands it to
an interior-point solver with a tight duality-gap tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

Expr = tuple[np.ndarray, np.ndarray, float]
"""Affine expression: (variable indices, coefficients, constant)."""


@dataclass(frozen=True)
class ConicSubproblem:
    """One assembled conic program.

    Attributes:
        p_mat: Upper-triangular quadratic objective matrix (csc).
        q_vec: Linear objective coefficients.
        a_mat: Constraint matrix, rows ordered by cone section (csc).
        b_vec: Constraint offsets (Ax + s = b).
        n_equalities: Leading rows pinned to the zero cone.
        n_nonneg: Rows in the nonnegative cone after the equalities.
        soc_dims: Sizes of the trailing second-order-cone blocks.
        variables: Name to index-range mapping for unpacking solutions.
        objective_offset: Constant added to the reported objective.
    """

    p_mat: sparse.csc_matrix
    q_vec: np.ndarray
    a_mat: sparse.csc_matrix
    b_vec: np.ndarray
    n_equalities: int
    n_nonneg: int
    soc_dims: tuple[int, ...]
    variables: dict[str, slice]
    objective_offset: float = 0.0

    @property
    def n_variables(self) -> int:
        return self.q_vec.size

    @property
    def n_rows(self) -> int:
        return self.b_vec.size


@dataclass(frozen=True)
class ConicSolution:
    """Primal solution and solver diagnostics.

    Status is one of "optimal", "infeasible", "unbounded", or
    "numerical-failure"; the primal vector is meaningful only for
    "optimal".
    """

    status: str
    x: np.ndarray
    objective: float
    iterations: int
    solve_time_s: float

    def value(self, sub: ConicSubproblem, name: str) -> np.ndarray:
        """Slice one named variable out of the primal vector."""
        return self.x[sub.variables[name]]


class SubproblemBuilder:
    """Incremental assembly of a `ConicSubproblem`.

    Variables are registered by name; constraints and costs reference them
    through global indices.  Rows are buffered per cone section so callers
    can interleave equality, bound, and cone statements freely.
    """

    def __init__(self) -> None:
        self._n = 0
        self._vars: dict[str, slice] = {}
        self._q_diag: dict[int, float] = {}
        self._lin: dict[int, float] = {}
        self._eq: list[tuple[np.ndarray, np.ndarray, float]] = []
        self._ineq: list[tuple[np.ndarray, np.ndarray, float]] = []
        self._soc: list[list[Expr]] = []
        self._offset = 0.0

    def add_variables(self, name: str, count: int) -> np.ndarray:
        """Register a named block of decision variables; returns indices."""
        if name in self._vars:
            raise ValueError(f"variable block {name!r} already defined")
        if count < 1:
            raise ValueError("variable block must have positive size")
        idx = np.arange(self._n, self._n + count)
        self._vars[name] = slice(self._n, self._n + count)
        self._n += count
        return idx

    def indices(self, name: str) -> np.ndarray:
        """Indices of a previously registered block."""
        s = self._vars[name]
        return np.arange(s.start, s.stop)

    def add_linear_cost(self, idx, coeffs) -> None:
        """Accumulate linear objective terms sum(coeffs * x[idx])."""
        for i, c in zip(np.atleast_1d(idx), np.atleast_1d(coeffs)):
            self._lin[int(i)] = self._lin.get(int(i), 0.0) + float(c)

    def add_quadratic_cost(self, idx, weights) -> None:
        """Accumulate diagonal quadratic terms sum(w/2 * x[idx]**2).

        `weights` are the full second-derivative coefficients w, so a
        weight w contributes (w/2) x**2 to the objective.
        """
        for i, w in zip(np.atleast_1d(idx), np.atleast_1d(weights)):
            if w < 0.0:
                raise ValueError("quadratic weights must be nonnegative")
            self._q_diag[int(i)] = self._q_diag.get(int(i), 0.0) + float(w)

    def add_constant_cost(self, value: float) -> None:
        """Accumulate a constant objective offset (reporting only)."""
        self._offset += float(value)

    def add_equality(self, idx, coeffs, rhs: float) -> None:
        """Add the row sum(coeffs * x[idx]) == rhs."""
        self._eq.append((np.atleast_1d(idx).astype(np.int64),
                         np.atleast_1d(coeffs).astype(float), float(rhs)))

    def add_upper_bound(self, idx, coeffs, rhs: float) -> None:
        """Add the row sum(coeffs * x[idx]) <= rhs."""
        self._ineq.append((np.atleast_1d(idx).astype(np.int64),
                           np.atleast_1d(coeffs).astype(float), float(rhs)))

    def add_box(self, idx, center, radius) -> None:
        """Add elementwise |x[idx] - center| <= radius rows."""
        idx = np.atleast_1d(idx)
        center = np.broadcast_to(np.atleast_1d(center), idx.shape)
        radius = np.broadcast_to(np.atleast_1d(radius), idx.shape)
        for i, c, r in zip(idx, center, radius):
            if r < 0.0:
                raise ValueError("box radius must be nonnegative")
            self.add_upper_bound([i], [1.0], c + r)
            self.add_upper_bound([i], [-1.0], r - c)

    def add_second_order_cone(self, exprs: list[Expr]) -> None:
        """Add head(x) >= norm(tail(x)) for affine expressions.

        The first expression is the cone head; the rest stack into the
        norm argument.  Each expression is (indices, coefficients,
        constant).
        """
        if len(exprs) < 2:
            raise ValueError("a second-order cone needs a head and a tail")
        block: list[Expr] = []
        for idx, coeffs, const in exprs:
            block.append((np.atleast_1d(idx).astype(np.int64),
                          np.atleast_1d(coeffs).astype(float), float(const)))
        self._soc.append(block)

    def build(self) -> ConicSubproblem:
        """Freeze the accumulated statements into solver form."""
        n = self._n
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        b: list[float] = []
        r = 0
        for idx, coeffs, rhs in self._eq:
            rows.extend([r] * idx.size)
            cols.extend(idx.tolist())
            vals.extend(coeffs.tolist())
            b.append(rhs)
            r += 1
        for idx, coeffs, rhs in self._ineq:
            rows.extend([r] * idx.size)
            cols.extend(idx.tolist())
            vals.extend(coeffs.tolist())
            b.append(rhs)
            r += 1
        soc_dims: list[int] = []
        for block in self._soc:
            soc_dims.append(len(block))
            for idx, coeffs, const in block:
                rows.extend([r] * idx.size)
                cols.extend(idx.tolist())
                vals.extend((-coeffs).tolist())
                b.append(const)
                r += 1
        a_mat = sparse.csc_matrix(
            (vals, (rows, cols)), shape=(r, n))
        q = np.zeros(n)
        for i, c in self._lin.items():
            q[i] = c
        p_rows = list(self._q_diag.keys())
        p_vals = [self._q_diag[i] for i in p_rows]
        p_mat = sparse.csc_matrix((p_vals, (p_rows, p_rows)), shape=(n, n))
        return ConicSubproblem(
            p_mat=p_mat, q_vec=q, a_mat=a_mat, b_vec=np.array(b),
            n_equalities=len(self._eq), n_nonneg=len(self._ineq),
            soc_dims=tuple(soc_dims), variables=dict(self._vars),
            objective_offset=self._offset)


_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def solve_subproblem(sub: ConicSubproblem,
                     gap_tol: float = 1.0e-9,
                     max_iter: int = 200,
                     verbose: bool = False) -> ConicSolution:
    """Solve with the interior-point conic solver.

    Args:
        sub: Assembled subproblem.
        gap_tol: Absolute and relative duality-gap tolerance.
        max_iter: Interior-point iteration cap.
        verbose: Stream solver iterations to stdout.

    Returns:
        Solution with mapped status; any unexpected solver state maps to
        "numerical-failure" with the best primal iterate attached.
    """
    cones = []
    if sub.n_equalities:
        cones.append(clarabel.ZeroConeT(sub.n_equalities))
    if sub.n_nonneg:
        cones.append(clarabel.NonnegativeConeT(sub.n_nonneg))
    for dim in sub.soc_dims:
        cones.append(clarabel.SecondOrderConeT(dim))
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.tol_gap_abs = gap_tol
    settings.tol_gap_rel = gap_tol
    settings.max_iter = max_iter
    solver = clarabel.DefaultSolver(sub.p_mat, sub.q_vec, sub.a_mat,
                                    sub.b_vec, cones, settings)
    raw = solver.solve()
    status = _STATUS_MAP.get(str(raw.status), "numerical-failure")
    return ConicSolution(
        status=status,
        x=np.asarray(raw.x, dtype=float),
        objective=float(raw.obj_val) + sub.objective_offset,
        iterations=int(raw.iterations),
        solve_time_s=float(raw.solve_time))


def write_subproblem(sub: ConicSubproblem, path) -> None:
    """Dump a subproblem as delimited text for external cross-checking.

    Format (one section per line group, all indices zero-based):
    `variables name,start,stop`; `sizes n_vars,n_eq,n_nonneg,soc...`;
    `p row,col,value` triplets; `q index,value`; `a row,col,value`
    triplets; `b row,value`.
    """
    p_coo = sub.p_mat.tocoo()
    a_coo = sub.a_mat.tocoo()
    with open(path, "w", encoding="utf-8") as f:
        f.write("section,fields\n")
        for name, s in sub.variables.items():
            f.write(f"variables,{name},{s.start},{s.stop}\n")
        soc = ";".join(str(d) for d in sub.soc_dims)
        f.write(f"sizes,{sub.n_variables},{sub.n_equalities},"
                f"{sub.n_nonneg},{soc}\n")
        for i, j, v in zip(p_coo.row, p_coo.col, p_coo.data):
            f.write(f"p,{i},{j},{float(v)!r}\n")
        for i, v in enumerate(sub.q_vec):
            if v != 0.0:
                f.write(f"q,{i},{float(v)!r}\n")
        for i, j, v in zip(a_coo.row, a_coo.col, a_coo.data):
            f.write(f"a,{i},{j},{float(v)!r}\n")
        for i, v in enumerate(sub.b_vec):
            f.write(f"b,{i},{float(v)!r}\n")
