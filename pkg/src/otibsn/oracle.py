"""Exact LP references for desk-scale instances.

Two independent routes to ground truth: the closed-form monotone coupling,
optimal whenever the cost satisfies the Monge condition (convex functions
of index difference, such as squared index distance with sorted
marginals), and a transportation simplex over a spanning-tree basis for
arbitrary small costs.  Both are used to certify solver output in tests.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import OtProblem
from .errors import OracleFailed, OracleTooLarge
from .feasibility import FeasiblePlan, kkt_residual

ORACLE_CELL_CAP = 4096

# Entering-arc tolerance on reduced costs; potentials are built by O(m+n)
# subtraction chains, so their rounding noise stays well below this.
_OPT_TOL = 1e-12

_CERT_TOL = 1e-10


def northwest_monotone(a: np.ndarray, b: np.ndarray) -> FeasiblePlan:
    """Greedy corner fill producing the unique monotone coupling."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.size, b.size
    plan = np.zeros((m, n))
    remaining_a = a.copy()
    remaining_b = b.copy()
    i = j = 0
    while i < m and j < n:
        move = min(remaining_a[i], remaining_b[j])
        plan[i, j] = move
        # Subtracting the min zeroes at least one side exactly, so every
        # iteration advances an index and the walk terminates.
        remaining_a[i] -= move
        remaining_b[j] -= move
        exhausted_row = remaining_a[i] == 0.0
        if remaining_b[j] == 0.0:
            j += 1
        if exhausted_row:
            i += 1
    return FeasiblePlan(plan)


@dataclass(frozen=True)
class SimplexCertificate:
    """Optimal plan with the dual potentials of its final basis."""

    plan: np.ndarray = field(repr=False)
    value: float = 0.0
    row_potentials: np.ndarray = field(repr=False, default=None)
    col_potentials: np.ndarray = field(repr=False, default=None)


def _northwest_basis(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    """Corner-walk basis: m + n - 1 cells forming a spanning tree."""
    m, n = a.size, b.size
    cells = []
    ra = a.copy()
    rb = b.copy()
    i = j = 0
    while True:
        cells.append((i, j))
        if i == m - 1 and j == n - 1:
            break
        move = min(ra[i], rb[j])
        ra[i] -= move
        rb[j] -= move
        # Advance exactly one index per step so the cell count is fixed.
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return cells


def _adjacency(basis: list[tuple[int, int]], m: int, n: int) -> list[list[tuple[int, int]]]:
    """Tree adjacency over nodes 0..m-1 (rows) and m..m+n-1 (columns).

    Each entry is (neighbor node, arc index into the basis list).
    """
    adj: list[list[tuple[int, int]]] = [[] for _ in range(m + n)]
    for idx, (i, j) in enumerate(basis):
        adj[i].append((m + j, idx))
        adj[m + j].append((i, idx))
    return adj


def _tree_flows(
    basis: list[tuple[int, int]], a: np.ndarray, b: np.ndarray
) -> np.ndarray:
    """Unique arc flows balancing the marginals, by leaf elimination."""
    m, n = a.size, b.size
    adj = _adjacency(basis, m, n)
    need = np.concatenate((a, b))
    degree = np.array([len(neighbors) for neighbors in adj])
    done_arc = np.zeros(len(basis), dtype=bool)
    done_node = np.zeros(m + n, dtype=bool)
    flows = np.zeros(len(basis))
    leaves = deque(np.flatnonzero(degree == 1))
    processed = 0
    while leaves and processed < len(basis):
        node = leaves.popleft()
        if done_node[node]:
            continue
        arc_idx = next((idx for nb, idx in adj[node] if not done_arc[idx]), None)
        if arc_idx is None:
            continue
        other = basis[arc_idx][0] if node >= m else m + basis[arc_idx][1]
        flows[arc_idx] = need[node]
        need[other] -= need[node]
        need[node] = 0.0
        done_arc[arc_idx] = True
        done_node[node] = True
        processed += 1
        degree[other] -= 1
        if degree[other] == 1 and not done_node[other]:
            leaves.append(other)
    if processed != len(basis):
        raise OracleFailed("basis is not a spanning tree")
    return flows


def _tree_potentials(
    basis: list[tuple[int, int]], cost: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Dual potentials with u[0] = 0, satisfying u_i + v_j = C_ij on the tree."""
    m, n = cost.shape
    adj = _adjacency(basis, m, n)
    u = np.zeros(m)
    v = np.zeros(n)
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for neighbor, arc_idx in adj[node]:
            if seen[neighbor]:
                continue
            i, j = basis[arc_idx]
            if neighbor >= m:
                v[j] = cost[i, j] - u[i]
            else:
                u[i] = cost[i, j] - v[j]
            seen[neighbor] = True
            queue.append(neighbor)
    if not seen.all():
        raise OracleFailed("basis tree does not span all nodes")
    return u, v


def _tree_path(
    basis: list[tuple[int, int]], m: int, n: int, start: int, goal: int
) -> list[int]:
    """Arc indices along the unique tree path from node start to node goal."""
    adj = _adjacency(basis, m, n)
    parent_arc: dict[int, tuple[int, int]] = {start: (-1, -1)}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for neighbor, arc_idx in adj[node]:
            if neighbor not in parent_arc:
                parent_arc[neighbor] = (node, arc_idx)
                queue.append(neighbor)
    arcs = []
    node = goal
    while node != start:
        prev, arc_idx = parent_arc[node]
        arcs.append(arc_idx)
        node = prev
    arcs.reverse()
    return arcs


def transportation_simplex(
    cost: np.ndarray, a: np.ndarray, b: np.ndarray, max_pivots: int | None = None
) -> SimplexCertificate:
    """Solve the balanced transportation LP on a spanning-tree basis.

    Supplies receive a strictly increasing tiny perturbation (balanced on
    the last demand) so the corner-walk start is nondegenerate and pivots
    make strict progress; the perturbation moves the optimum by far less
    than the certification tolerance.  Flows are recomputed on the final
    basis with the unperturbed marginals, so the returned plan is feasible
    for the original data.
    """
    cost = np.asarray(cost, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = cost.shape
    if max_pivots is None:
        max_pivots = 20 * m * n + 1000

    eps = 1e-12 / (m * (m + 1))
    delta = eps * np.arange(1, m + 1)
    a_pert = a + delta
    b_pert = b.copy()
    b_pert[-1] += delta.sum()

    basis = _northwest_basis(a_pert, b_pert)
    enter_tol = _OPT_TOL * max(1.0, float(np.abs(cost).max()))

    for _ in range(max_pivots):
        u, v = _tree_potentials(basis, cost)
        reduced = cost - u[:, None] - v[None, :]
        flat = int(np.argmin(reduced))
        enter = (flat // n, flat % n)
        if reduced[enter] >= -enter_tol:
            break
        flows = _tree_flows(basis, a_pert, b_pert)
        # Entering arc closes one cycle; the path cells alternate signs
        # starting with a decrease on the arc sharing the entering row.
        path_arcs = _tree_path(basis, m, n, enter[0], m + enter[1])
        minus_arcs = path_arcs[0::2]
        theta_idx = min(minus_arcs, key=lambda idx: flows[idx])
        basis[theta_idx] = enter
    else:
        raise OracleFailed(f"pivot cap {max_pivots} exceeded (cycling guard)")

    flows = _tree_flows(basis, a, b)
    if flows.min() < -1e-9:
        raise OracleFailed(f"final basis infeasible for unperturbed data ({flows.min():.3g})")
    plan = np.zeros((m, n))
    for (i, j), f in zip(basis, flows):
        plan[i, j] = max(f, 0.0)
    u, v = _tree_potentials(basis, cost)
    return SimplexCertificate(
        plan=plan, value=float((cost * plan).sum()), row_potentials=u, col_potentials=v
    )


def exact_small_lp(problem: OtProblem) -> tuple[FeasiblePlan, float]:
    """Exact optimum of a desk-scale instance, self-certified before return.

    Raises
    ------
    OracleTooLarge
        More than the supported number of cells.
    OracleFailed
        Pivot cap exceeded or the result fails its own KKT certificate.
    """
    m, n = problem.shape
    if m * n > ORACLE_CELL_CAP:
        raise OracleTooLarge(f"{m}x{n} exceeds the {ORACLE_CELL_CAP}-cell oracle cap")
    cert = transportation_simplex(problem.cost, problem.source_marginal, problem.target_marginal)
    report = kkt_residual(
        cert.plan, cert.col_potentials, problem.cost,
        problem.source_marginal, problem.target_marginal,
    )
    if report.delta_kkt > _CERT_TOL:
        raise OracleFailed(f"self-certification failed: KKT residual {report.delta_kkt:.3g}")
    return FeasiblePlan(cert.plan), cert.value
