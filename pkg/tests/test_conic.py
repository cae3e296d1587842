"""Conic builder and interior-point adapter against closed-form oracles."""

from __future__ import annotations

import numpy as np
import pytest

from halokeep import conic


def test_free_norm_epigraph_minimizes_to_zero() -> None:
    b = conic.SubproblemBuilder()
    u = b.add_variables("u", 3)
    t = b.add_variables("t", 1)
    b.add_linear_cost(t, [1.0])
    b.add_second_order_cone([
        (t, [1.0], 0.0),
        (u, np.eye(3)[0], 0.0),
        (u, np.eye(3)[1], 0.0),
        (u, np.eye(3)[2], 0.0),
    ])
    sol = conic.solve_subproblem(b.build())
    assert sol.status == "optimal"
    assert np.linalg.norm(sol.x[:3]) < 1e-8
    assert sol.objective == pytest.approx(0.0, abs=1e-8)


def test_linear_objective_pins_to_box_bound() -> None:
    b = conic.SubproblemBuilder()
    x = b.add_variables("x", 1)
    b.add_linear_cost(x, [1.0])
    b.add_box(x, 2.0, 0.5)
    sub = b.build()
    assert sub.n_nonneg == 2
    sol = conic.solve_subproblem(sub)
    assert sol.status == "optimal"
    assert sol.value(sub, "x")[0] == pytest.approx(1.5, abs=1e-8)


def test_equality_constrained_quadratic_matches_kkt_oracle() -> None:
    rng = np.random.default_rng(3)
    n, m = 7, 3
    a = rng.normal(size=(m, n))
    rhs = rng.normal(size=m)
    center = rng.normal(size=n)
    weights = rng.uniform(1.0, 4.0, n)
    # minimize sum w_i/2 (x_i - c_i)^2 subject to a x = rhs
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = np.diag(weights)
    kkt[:n, n:] = a.T
    kkt[n:, :n] = a
    oracle = np.linalg.solve(kkt, np.concatenate([weights * center, rhs]))[:n]

    b = conic.SubproblemBuilder()
    x = b.add_variables("x", n)
    b.add_quadratic_cost(x, weights)
    b.add_linear_cost(x, -weights * center)
    for k in range(m):
        b.add_equality(x, a[k], rhs[k])
    sol = conic.solve_subproblem(b.build())
    assert sol.status == "optimal"
    assert np.linalg.norm(sol.x[:n] - oracle) < 1e-7


def test_socp_projection_matches_pseudoinverse_oracle() -> None:
    rng = np.random.default_rng(8)
    n, m = 6, 2
    a = rng.normal(size=(m, n))
    rhs = rng.normal(size=m)
    point = rng.normal(size=n)
    # minimize ||x - point|| subject to a x = rhs: affine projection
    correction = a.T @ np.linalg.solve(a @ a.T, a @ point - rhs)
    x_star = point - correction

    b = conic.SubproblemBuilder()
    x = b.add_variables("x", n)
    t = b.add_variables("t", 1)
    b.add_linear_cost(t, [1.0])
    exprs = [(t, [1.0], 0.0)]
    for k in range(n):
        exprs.append((x[k:k + 1], [1.0], -point[k]))
    b.add_second_order_cone(exprs)
    for k in range(m):
        b.add_equality(x, a[k], rhs[k])
    sub = b.build()
    sol = conic.solve_subproblem(sub)
    assert sol.status == "optimal"
    assert np.linalg.norm(sol.value(sub, "x") - x_star) < 1e-6
    assert sol.objective == pytest.approx(np.linalg.norm(x_star - point),
                                          abs=1e-6)


def test_contradictory_rows_report_infeasible() -> None:
    b = conic.SubproblemBuilder()
    x = b.add_variables("x", 1)
    b.add_equality(x, [1.0], 1.0)
    b.add_upper_bound(x, [1.0], 0.0)
    sol = conic.solve_subproblem(b.build())
    assert sol.status == "infeasible"


def test_descent_without_floor_reports_unbounded() -> None:
    b = conic.SubproblemBuilder()
    x = b.add_variables("x", 1)
    b.add_linear_cost(x, [1.0])
    b.add_upper_bound(x, [1.0], 0.0)
    sol = conic.solve_subproblem(b.build())
    assert sol.status == "unbounded"


def test_solver_is_deterministic() -> None:
    rng = np.random.default_rng(12)
    b = conic.SubproblemBuilder()
    x = b.add_variables("x", 5)
    b.add_quadratic_cost(x, np.ones(5))
    b.add_linear_cost(x, rng.normal(size=5))
    b.add_box(x, 0.0, 1.0)
    sub = b.build()
    first = conic.solve_subproblem(sub)
    second = conic.solve_subproblem(sub)
    assert first.status == "optimal"
    assert np.array_equal(first.x, second.x)


def test_duplicate_variable_name_rejected() -> None:
    b = conic.SubproblemBuilder()
    b.add_variables("x", 2)
    with pytest.raises(ValueError):
        b.add_variables("x", 1)


def test_objective_offset_added_to_report() -> None:
    b = conic.SubproblemBuilder()
    x = b.add_variables("x", 1)
    b.add_quadratic_cost(x, [2.0])
    b.add_constant_cost(5.0)
    sol = conic.solve_subproblem(b.build())
    assert sol.objective == pytest.approx(5.0, abs=1e-9)


def test_dump_reproduces_matrices(tmp_path) -> None:
    b = conic.SubproblemBuilder()
    x = b.add_variables("x", 2)
    t = b.add_variables("t", 1)
    b.add_quadratic_cost(x, [1.0, 2.0])
    b.add_linear_cost(t, [1.0])
    b.add_equality(x, [1.0, -1.0], 0.25)
    b.add_upper_bound(x, [1.0, 0.0], 2.0)
    b.add_second_order_cone([(t, [1.0], 0.0), (x, [1.0, 1.0], -0.5)])
    sub = b.build()
    path = tmp_path / "sub.csv"
    conic.write_subproblem(sub, path)
    a_rebuilt = np.zeros((sub.n_rows, sub.n_variables))
    b_rebuilt = np.zeros(sub.n_rows)
    sizes_line = None
    for line in path.read_text().splitlines()[1:]:
        parts = line.split(",")
        if parts[0] == "a":
            a_rebuilt[int(parts[1]), int(parts[2])] = float(parts[3])
        elif parts[0] == "b":
            b_rebuilt[int(parts[1])] = float(parts[2])
        elif parts[0] == "sizes":
            sizes_line = parts[1:]
    assert np.allclose(a_rebuilt, sub.a_mat.toarray())
    assert np.allclose(b_rebuilt, sub.b_vec)
    assert sizes_line == ["3", "1", "1", "2"]
