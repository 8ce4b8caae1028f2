"""Potential theory on finite transient weighted graphs.

Everything here is driven by the killed Laplacian ``M = diag(lambda) - W``
(``W`` the symmetric weight matrix, ``lambda_x = kappa_x + sum_y w_xy``),
whose inverse is the Green matrix, i.e. the covariance of the Gaussian free
field.  Capacities come in two independent flavours: the equilibrium-measure
sum (Dirichlet solve on the complement) and ``1^T (G|_A)^{-1} 1`` (Green
submatrix inverse); agreement of the two is a standing self-check.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graphs import NotTransient


class IllConditioned(Exception):
    """Green submatrix too ill-conditioned for a trustworthy inverse."""


def _as_indices(graph, vertices):
    idx = graph.index
    try:
        out = np.array([idx[v] for v in vertices], dtype=np.int64)
    except KeyError as err:
        raise KeyError(f"unknown vertex id {err.args[0]!r}")
    if out.size == 0:
        raise ValueError("vertex set must be non-empty")
    if len(set(out.tolist())) != out.size:
        raise ValueError("vertex set contains duplicates")
    return out


class GreenOperator:
    """Factorization of the killed Laplacian with Green-value queries.

    Small graphs (``n <= dense_limit``) use a dense Cholesky factor and keep
    the full Green matrix available; larger graphs use a sparse LU in
    symmetric mode; graphs above ``cg_threshold`` fall back to conjugate
    gradients with a Jacobi preconditioner (solves only, no exact sampling).

    All query methods are read-only after construction, so one operator can
    be shared freely across worker processes.
    """

    def __init__(self, graph, dense_limit=2048, cg_threshold=50_000, tol=1e-12):
        graph.require_transient()
        self.graph = graph
        n = graph.n
        ex, ey, w = graph.edge_arrays
        lam = graph.lambda_total
        rows = np.concatenate([np.arange(n), ex, ey])
        cols = np.concatenate([np.arange(n), ey, ex])
        vals = np.concatenate([lam, -w, -w])
        self.M = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
        self.W = sp.csc_matrix(
            (np.concatenate([w, w]), (np.concatenate([ex, ey]), np.concatenate([ey, ex]))),
            shape=(n, n),
        )
        self.tol = tol
        self.mode = "dense" if n <= dense_limit else ("sparse" if n <= cg_threshold else "cg")
        self._column_cache = OrderedDict()
        self._cache_limit = 64
        self._green_dense = None
        if self.mode == "dense":
            dense = self.M.toarray()
            try:
                self._chol = sla.cholesky(dense, lower=True)
            except sla.LinAlgError:
                raise NotTransient("killed Laplacian is not positive definite")
        elif self.mode == "sparse":
            try:
                self._lu = spla.splu(
                    self.M,
                    permc_spec="NATURAL",
                    diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True),
                )
            except RuntimeError as err:
                raise NotTransient(f"sparse factorization failed: {err}")
            if np.any(self._lu.U.diagonal() <= 0):
                raise NotTransient("killed Laplacian is not positive definite")
        else:
            self._jacobi = 1.0 / lam

    # -- linear solves -----------------------------------------------------

    def solve(self, b):
        """Solve M x = b; b may be a vector or a matrix of columns."""
        if self.mode == "dense":
            return sla.cho_solve((self._chol, True), b)
        if self.mode == "sparse":
            return self._lu.solve(np.asarray(b, dtype=float))
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            x, info = spla.cg(
                self.M, b, rtol=self.tol, atol=0.0, M=sp.diags(self._jacobi)
            )
            if info != 0:
                raise NotTransient(f"conjugate gradient did not converge (info={info})")
            return x
        return np.column_stack([self.solve(b[:, j]) for j in range(b.shape[1])])

    def sampling_factor(self):
        """Lower-triangular L with L L^T = M, for exact field sampling."""
        if self.mode == "dense":
            return self._chol
        raise NotTransient(
            "exact sampling requires a direct factorization; graph too large"
        )

    # -- Green values --------------------------------------------------------

    def green_column(self, i):
        """Green column for vertex index ``i`` (LRU-cached)."""
        col = self._column_cache.get(i)
        if col is None:
            e = np.zeros(self.graph.n)
            e[i] = 1.0
            col = self.solve(e)
            self._column_cache[i] = col
            if len(self._column_cache) > self._cache_limit:
                self._column_cache.popitem(last=False)
        else:
            self._column_cache.move_to_end(i)
        return col

    def g(self, x, y):
        """Green value g(x, y) for vertex ids."""
        i, j = self.graph.index[x], self.graph.index[y]
        return float(self.green_column(j)[i])

    def green_dense(self):
        """Full Green matrix (dense mode only; computed once, then cached)."""
        if self.mode != "dense":
            raise NotTransient("full Green matrix only materialized in dense mode")
        if self._green_dense is None:
            self._green_dense = sla.cho_solve((self._chol, True), np.eye(self.graph.n))
        return self._green_dense

    def green_submatrix(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if self.mode == "dense":
            G = self.green_dense()
            return G[np.ix_(indices, indices)]
        cols = np.column_stack([self.green_column(int(j)) for j in indices])
        return cols[indices, :]

    # -- Dirichlet problems --------------------------------------------------

    def dirichlet_solve(self, boundary, values):
        """Harmonic extension of ``values`` on ``boundary`` (ids), zero at killing.

        Returns the full vector h with h = values on the boundary and
        ``M_CC h_C = W_CB values`` on the complement; probabilistically
        ``h(x) = E_x[f(X_{H_B}); H_B < zeta]``.
        """
        b_idx = _as_indices(self.graph, boundary)
        values = np.asarray(values, dtype=float)
        n = self.graph.n
        mask = np.zeros(n, dtype=bool)
        mask[b_idx] = True
        comp = np.flatnonzero(~mask)
        h = np.zeros(n)
        h[b_idx] = values
        if comp.size:
            rhs = self.W[comp][:, b_idx] @ values
            h[comp] = _solve_sub(self, comp, rhs)
        return h

    def solve_on_complement(self, interior_idx, rhs):
        """Solve ``M_CC x = rhs`` on the given complement indices."""
        return _solve_sub(self, interior_idx, rhs)


def _solve_sub(green, comp, rhs):
    """Solve the principal submatrix system M[comp, comp] x = rhs."""
    n = green.graph.n
    m = comp.size
    if m == 0:
        return np.zeros(0)
    if m == n:
        return green.solve(rhs)
    sub = green.M[comp][:, comp]
    if m <= 400 or green.mode == "dense":
        return sla.cho_solve((sla.cholesky(sub.toarray(), lower=True), True), rhs)
    lu = spla.splu(sub.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    return lu.solve(rhs)


def green_operator(g, **kwargs):
    """Factorize the killed Laplacian of ``g``; raises NotTransient if singular."""
    return GreenOperator(g, **kwargs)


# ---------------------------------------------------------------------------
# equilibrium measures and capacities
# ---------------------------------------------------------------------------


@dataclass
class EquilibriumResult:
    """Equilibrium measure of a vertex set and its total mass (the capacity)."""

    vertices: tuple
    measure: np.ndarray
    capacity: float
    method: str = "equilibrium"
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(zip(self.vertices, self.measure))


def equilibrium_measure(green, A):
    """Equilibrium measure e_A and capacity via the complement Dirichlet solve.

    ``e_A(x) = kappa_x + sum_{y not in A} w_xy h(y)`` with h the probability,
    started from the complement, of never hitting A before getting killed.
    """
    a_idx = _as_indices(green.graph, A)
    n = green.graph.n
    mask = np.zeros(n, dtype=bool)
    mask[a_idx] = True
    comp = np.flatnonzero(~mask)
    kappa = green.graph.kappa_array
    if comp.size:
        h_comp = _solve_sub(green, comp, kappa[comp])
        h = np.zeros(n)
        h[comp] = h_comp
        e = kappa[a_idx] + np.asarray(green.W[a_idx][:, comp] @ h_comp).ravel()
    else:
        e = kappa[a_idx].copy()
    cap = float(e.sum())
    return EquilibriumResult(tuple(A), e, cap)


def capacity_green_inverse(green, A):
    """Capacity as ``1^T (G|_A)^{-1} 1``, the optimizer of the variational problem.

    Raises :class:`IllConditioned` when the reciprocal condition estimate of
    the Green submatrix falls below 1e-13.
    """
    a_idx = _as_indices(green.graph, A)
    G_A = green.green_submatrix(a_idx)
    if a_idx.size == 1:
        return 1.0 / float(G_A[0, 0])
    rcond = _rcond_spd(G_A)
    if rcond < 1e-13:
        raise IllConditioned(
            f"Green submatrix reciprocal condition estimate {rcond:.2e} < 1e-13"
        )
    try:
        chol = sla.cholesky(G_A, lower=True)
    except sla.LinAlgError:
        raise IllConditioned("Green submatrix not numerically positive definite")
    ones = np.ones(a_idx.size)
    return float(ones @ sla.cho_solve((chol, True), ones))


def _rcond_spd(A):
    if A.shape[0] <= 1500:
        ev = sla.eigvalsh(A)
        if ev[-1] <= 0:
            return 0.0
        return max(ev[0], 0.0) / ev[-1]
    d = np.sqrt(np.abs(np.diag(A)))
    return float((d.min() / d.max()) ** 2)


def capacity_of_indices(green, indices, dense_M=None, dense_W=None, dense_G=None):
    """Fast dual-route capacity for an index set (hot path for cluster sizes).

    Uses the Green-inverse route when the set is small and the complement
    Schur route when it covers most of the graph; the two agree by the
    variational identity.  Optional dense M/W/G arrays avoid sparse overhead
    in tight Monte Carlo loops.
    """
    indices = np.asarray(indices, dtype=np.int64)
    m = indices.size
    n = green.graph.n
    if m == 0:
        return 0.0
    if m == 1:
        if dense_G is not None:
            return 1.0 / float(dense_G[indices[0], indices[0]])
        return 1.0 / float(green.green_column(int(indices[0]))[indices[0]])
    if m <= n - m or n - m == 0:
        if dense_G is not None:
            G_A = dense_G[np.ix_(indices, indices)]
        else:
            G_A = green.green_submatrix(indices)
        chol = sla.cholesky(G_A, lower=True)
        ones = np.ones(m)
        return float(ones @ sla.cho_solve((chol, True), ones))
    mask = np.zeros(n, dtype=bool)
    mask[indices] = True
    comp = np.flatnonzero(~mask)
    kappa = green.graph.kappa_array
    if dense_M is not None and dense_W is not None:
        t = dense_W[np.ix_(comp, indices)].sum(axis=1)
        head = kappa[indices].sum() + t.sum()
        M_CC = dense_M[np.ix_(comp, comp)]
        chol = sla.cholesky(M_CC, lower=True)
        return float(head - t @ sla.cho_solve((chol, True), t))
    t = np.asarray(green.W[comp][:, indices].sum(axis=1)).ravel()
    head = kappa[indices].sum() + t.sum()
    return float(head - t @ _solve_sub(green, comp, t))


# ---------------------------------------------------------------------------
# hitting distributions, sweeping, growth profiles
# ---------------------------------------------------------------------------


def hitting_distribution(green, K, x):
    """Entrance law of K from x plus the explicit killed mass.

    Returns ``(probs, killed)`` where ``probs[y] = P_x(hit K first at y before
    killing)``; the killed mass is computed by its own Dirichlet solve rather
    than as 1 - sum, so normalization is a genuine test.
    """
    k_idx = _as_indices(green.graph, K)
    xi = green.graph.index[x]
    if xi in set(k_idx.tolist()):
        return {v: (1.0 if v == x else 0.0) for v in K}, 0.0
    n = green.graph.n
    mask = np.zeros(n, dtype=bool)
    mask[k_idx] = True
    comp = np.flatnonzero(~mask)
    pos = {c: j for j, c in enumerate(comp.tolist())}
    e = np.zeros(comp.size)
    e[pos[xi]] = 1.0
    q = _solve_sub(green, comp, e)
    probs_vec = np.asarray(q @ green.W[comp][:, k_idx]).ravel()
    killed = float(q @ green.graph.kappa_array[comp])
    return dict(zip(K, probs_vec)), killed


def sweeping_residual(green, K, K_prime):
    """Max deviation in the sweeping identity for K inside K'.

    ``sum_{y in K'} e_{K'}(y) P_y(X_{H_K} = x) = e_K(x)`` holds exactly; the
    returned residual is floating-point noise only.
    """
    k_set = set(K)
    if not k_set.issubset(set(K_prime)):
        raise ValueError("K must be a subset of K_prime")
    e_K = equilibrium_measure(green, K)
    e_Kp = equilibrium_measure(green, K_prime)
    ep = e_Kp.as_dict()
    k_idx = _as_indices(green.graph, K)
    n = green.graph.n
    mask = np.zeros(n, dtype=bool)
    mask[k_idx] = True
    comp = np.flatnonzero(~mask)
    a = np.zeros(comp.size)
    pos = {c: j for j, c in enumerate(comp.tolist())}
    for y in K_prime:
        if y not in k_set:
            a[pos[green.graph.index[y]]] = ep[y]
    if comp.size:
        q = _solve_sub(green, comp, a)
        swept = np.asarray(q @ green.W[comp][:, k_idx]).ravel()
    else:
        swept = np.zeros(k_idx.size)
    lhs = np.array([ep.get(v, 0.0) for v in K]) + swept
    return float(np.max(np.abs(lhs - e_K.measure)))


def ball(graph, x0, radius):
    """Vertices within the given graph distance of x0, in BFS order."""
    indptr, nbr, _ = graph.adjacency
    start = graph.index[x0]
    dist = {start: 0}
    order = [start]
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        if dist[v] == radius:
            continue
        for u in nbr[indptr[v]:indptr[v + 1]]:
            if int(u) not in dist:
                dist[int(u)] = dist[v] + 1
                order.append(int(u))
    return tuple(graph.vertices[i] for i in order)


def geodesic_path(graph, x0, length):
    """A shortest path of the given length starting at x0 (BFS tree branch)."""
    indptr, nbr, _ = graph.adjacency
    start = graph.index[x0]
    parent = {start: None}
    dist = {start: 0}
    order = [start]
    head = 0
    target = start
    while head < len(order):
        v = order[head]
        head += 1
        if dist[v] == length:
            target = v
            break
        for u in nbr[indptr[v]:indptr[v + 1]]:
            if int(u) not in dist:
                dist[int(u)] = dist[v] + 1
                parent[int(u)] = v
                order.append(int(u))
    else:
        raise ValueError(f"no vertex at distance {length} from {x0}")
    path = []
    v = target
    while v is not None:
        path.append(graph.vertices[v])
        v = parent[v]
    return tuple(reversed(path))


def capacity_growth_profile(green, x0, radii):
    """Capacities of balls and geodesic paths around x0, per radius.

    A finite-truncation diagnostic for whether capacities of connected sets
    grow without bound; the ball series is nondecreasing by monotonicity.
    """
    rows = []
    for r in radii:
        b = ball(green.graph, x0, r)
        p = geodesic_path(green.graph, x0, r)
        rows.append(
            {
                "radius": int(r),
                "cap_ball": capacity_green_inverse(green, b),
                "cap_path": capacity_green_inverse(green, p),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------


def dump_green_csv(green, path):
    """Write the full Green matrix as (x, y, g) rows."""
    vs = green.graph.vertices
    with open(path, "w") as fh:
        fh.write("x,y,g\n")
        for j, y in enumerate(vs):
            col = green.green_column(j)
            for i, x in enumerate(vs):
                fh.write(f"{x},{y},{col[i]!r}\n")


def dump_equilibrium_csv(result, path):
    with open(path, "w") as fh:
        fh.write("x,e_A\n")
        for v, e in zip(result.vertices, result.measure):
            fh.write(f"{v},{e!r}\n")
