"""Desired bearing sets, target points and bearing-rigidity diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import AgentCollision, InfeasibleBearings, ParallelBearings, SingularSystem
from .geom import EPS_ZERO, bearings_batch, min_eigenvalues_sym, projection_matrices
from .graph import FormationGraph, incidence_matrix, validate_acyclic

EPS_COL = 1e-6
FEASIBILITY_TOL = 1e-9
UNIT_TOL = 1e-12
KERNEL_RTOL = 1e-8
CONGRUENCE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BearingSpec:
    """Desired bearings g*_ij, one row per edge of ``graph`` (same order)."""

    graph: FormationGraph
    desired_bearings: np.ndarray
    target_config: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.desired_bearings.shape[1]

    def desired(self, i: int) -> np.ndarray:
        return self.desired_bearings[self.graph.edge_ids(i)]

    @cached_property
    def desired_projections(self) -> np.ndarray:
        return projection_matrices(self.desired_bearings)

    @cached_property
    def follower_lambda1(self) -> np.ndarray:
        """lambda_1(sum_j P_{g*_ij}) for every follower, in follower order."""
        S = self.graph.follower_edge_matrix
        M = np.einsum("fe,eab->fab", S, self.desired_projections)
        return min_eigenvalues_sym(M)

    @cached_property
    def target_map(self) -> np.ndarray:
        """Linear map T (n*d x l*d) with vec(p*) = T vec(p_leaders).

        Desired bearings are constant, so the cascade of target points is a
        fixed linear function of the leader positions.
        """
        g, d = self.graph, self.d
        T = np.zeros((g.n * d, g.l * d))
        T[: g.l * d] = np.eye(g.l * d)
        P = self.desired_projections
        for i in validate_acyclic(g):
            if i <= g.l:
                continue
            eids = g.edge_ids(i)
            M = P[eids].sum(axis=0)
            Minv = np.linalg.inv(M)
            row = np.zeros((d, g.l * d))
            for e in eids:
                j = g.edges[e][1]
                row += Minv @ P[e] @ T[(j - 1) * d : j * d]
            T[(i - 1) * d : i * d] = row
        return T

    def targets_from_leaders(self, leader_positions) -> np.ndarray:
        """Full target configuration attached to the given leader positions, shape (n, d)."""
        pl = np.asarray(leader_positions, dtype=float).reshape(-1)
        return (self.target_map @ pl).reshape(self.graph.n, self.d)


def _check_assumption3(graph: FormationGraph, spec: BearingSpec) -> None:
    lam = spec.follower_lambda1
    for k, i in enumerate(graph.followers):
        if not lam[k] > EPS_COL:
            raise ParallelBearings(
                f"Assumption 3: desired bearings of follower {i} are all parallel "
                f"(lambda_1 = {lam[k]:.3e} <= {EPS_COL:g})",
                follower=i,
                lambda1=float(lam[k]),
            )


def spec_from_target_config(graph: FormationGraph, p_star) -> BearingSpec:
    """Build Gamma by evaluating the bearings of a target configuration (always feasible)."""
    p_star = np.array(p_star, dtype=float)
    if p_star.shape[0] != graph.n:
        raise ValueError(f"target configuration has {p_star.shape[0]} points, graph has {graph.n}")
    try:
        g_star, _ = bearings_batch(p_star[graph.tails], p_star[graph.heads])
    except AgentCollision:
        dist = np.linalg.norm(p_star[graph.heads] - p_star[graph.tails], axis=1)
        e = int(np.argmin(dist))
        raise AgentCollision(f"edge {graph.edges[e]} has coincident endpoints", agents=graph.edges[e]) from None
    p_star.setflags(write=False)
    spec = BearingSpec(graph=graph, desired_bearings=g_star, target_config=p_star)
    _check_assumption3(graph, spec)
    return spec


def spec_from_bearings(graph: FormationGraph, bearings, leader_positions=None) -> BearingSpec:
    """Build Gamma from explicit unit vectors.

    When leader positions are supplied the cascade target configuration is
    computed and Gamma is rejected unless that configuration reproduces every
    desired bearing to 1e-9.
    """
    g_star = np.array(bearings, dtype=float)
    if g_star.shape[0] != graph.m:
        raise ValueError(f"{g_star.shape[0]} bearings given for {graph.m} edges")
    norms = np.linalg.norm(g_star, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
    if bad.size:
        e = int(bad[0])
        raise InfeasibleBearings(f"desired bearing of edge {graph.edges[e]} has norm {norms[e]!r}, expected 1")
    spec = BearingSpec(graph=graph, desired_bearings=g_star)
    _check_assumption3(graph, spec)
    if leader_positions is None:
        return spec
    p = spec.targets_from_leaders(leader_positions)
    res = bearing_residuals(spec, p)
    worst = int(np.argmax(res))
    if res[worst] > FEASIBILITY_TOL:
        raise InfeasibleBearings(
            f"desired bearings are infeasible for the given leaders: edge {graph.edges[worst]} "
            f"misses by {res[worst]:.3e} (max residual), residuals={np.round(res, 12).tolist()}"
        )
    p.setflags(write=False)
    return BearingSpec(graph=graph, desired_bearings=g_star, target_config=p)


def bearing_residuals(spec: BearingSpec, p) -> np.ndarray:
    """|g_ij(p) - g*_ij| per edge."""
    p = np.asarray(p, dtype=float)
    g, _ = bearings_batch(p[spec.graph.tails], p[spec.graph.heads])
    return np.linalg.norm(g - spec.desired_bearings, axis=1)


def target_position(neighbor_positions, desired_bearings) -> np.ndarray:
    """Least-squares point x minimising sum_j |P_{g*_j}(x - p_j)|^2.

    Exact solution of P_{g*_j}(x - p_j) = 0 whenever the inputs are consistent.
    """
    pj = np.asarray(neighbor_positions, dtype=float)
    gs = np.asarray(desired_bearings, dtype=float)
    gs = gs / np.linalg.norm(gs, axis=1, keepdims=True)
    P = projection_matrices(gs)
    M = P.sum(axis=0)
    lam = float(min_eigenvalues_sym(M))
    if not lam > EPS_COL:
        raise SingularSystem(f"desired bearings are all parallel (lambda_1 = {lam:.3e})")
    return np.linalg.solve(M, np.einsum("jab,jb->a", P, pj))


def target_residuals(x, neighbor_positions, desired_bearings) -> np.ndarray:
    """|P_{g*_j}(x - p_j)| for each neighbor j."""
    pj = np.asarray(neighbor_positions, dtype=float)
    P = projection_matrices(np.asarray(desired_bearings, dtype=float))
    r = np.einsum("jab,jb->ja", P, np.asarray(x, dtype=float) - pj)
    return np.linalg.norm(r, axis=1)


def cascade_targets(spec: BearingSpec, leader_positions) -> np.ndarray:
    """Reconstruct every follower's target point in topological order via target_position."""
    g = spec.graph
    pl = np.asarray(leader_positions, dtype=float)
    p = np.zeros((g.n, spec.d))
    p[: g.l] = pl
    for i in validate_acyclic(g):
        if i <= g.l:
            continue
        nbrs = [j - 1 for j in g.neighbors(i)]
        p[i - 1] = target_position(p[nbrs], spec.desired(i))
    return p


# --- rigidity -------------------------------------------------------------


def rigidity_matrix(graph: FormationGraph, p) -> np.ndarray:
    """Augmented bearing rigidity matrix diag(P_{g_k}) (H kron I_d), shape (d m, d n)."""
    p = np.asarray(p, dtype=float)
    d = p.shape[1]
    try:
        g, _ = bearings_batch(p[graph.tails], p[graph.heads])
    except AgentCollision:
        raise AgentCollision("rigidity matrix undefined for coincident edge endpoints") from None
    P = projection_matrices(g)
    H = incidence_matrix(graph)
    m = graph.m
    blockdiag = np.zeros((d * m, d * m))
    for k in range(m):
        blockdiag[k * d : (k + 1) * d, k * d : (k + 1) * d] = P[k]
    return blockdiag @ np.kron(H, np.eye(d))


def kernel_dimension(R: np.ndarray, rtol: float = KERNEL_RTOL) -> int:
    """dim ker(R) with singular values below rtol * sigma_max treated as zero."""
    ncols = R.shape[1]
    if R.size == 0:
        return ncols
    s = np.linalg.svd(R, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return ncols
    rank = int(np.sum(s > rtol * s[0]))
    return ncols - rank


def is_infinitesimally_bearing_rigid(graph: FormationGraph, p) -> bool:
    """True iff the only bearing-preserving motions are translations and uniform scaling."""
    p = np.asarray(p, dtype=float)
    return kernel_dimension(rigidity_matrix(graph, p)) == p.shape[1] + 1


def bearing_laplacian(graph: FormationGraph, p) -> np.ndarray:
    R = rigidity_matrix(graph, p)
    return R.T @ R


def follower_laplacian_block(graph: FormationGraph, p) -> np.ndarray:
    """Follower-follower block of the bearing Laplacian (rows/cols of agents l+1..n)."""
    d = np.asarray(p).shape[1]
    L = bearing_laplacian(graph, p)
    k = graph.l * d
    return L[k:, k:]


def _pair_residual(p, q, i: int, j: int) -> float:
    z = p[i] - p[j]
    nrm = np.linalg.norm(z)
    if not nrm > EPS_ZERO:
        raise AgentCollision(f"agents {i + 1} and {j + 1} coincide in the reference configuration", agents=(i + 1, j + 1))
    g = z / nrm
    w = q[i] - q[j]
    return float(np.linalg.norm(w - g * (g @ w)))


def bearing_equivalent(p, q, graph: FormationGraph, tol: float = CONGRUENCE_TOL) -> bool:
    """P_{p_i - p_j}(q_i - q_j) = 0 on every edge."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return all(_pair_residual(p, q, i - 1, j - 1) <= tol for i, j in graph.edges)


def bearing_congruent(p, q, tol: float = CONGRUENCE_TOL) -> bool:
    """P_{p_i - p_j}(q_i - q_j) = 0 for every pair of distinct agents."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = p.shape[0]
    return all(_pair_residual(p, q, i, j) <= tol for i in range(n) for j in range(i + 1, n))
