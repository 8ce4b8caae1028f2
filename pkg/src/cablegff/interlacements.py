"""Random interlacements on finite transient graphs, via killing-boundary excursions.

On a finite transient graph the interlacement point process at level u prints
as a Poisson number, with mean ``u * sum(kappa)``, of independent excursions:
each starts at a vertex chosen proportionally to its killing rate, performs
the jump chain (rate ``w_xy`` to neighbours, killed at rate ``kappa_x``) and
accumulates exponential holding times as local time until the killing event.

The module also builds the coupled field of the discrete isomorphism: given a
field phi and local times ell, extra edges and vertices join the interlacement
print conditionally independently with the closed-form probabilities below,
and signs are constant on the resulting clusters, forced positive wherever the
interlacement touches.
"""

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng


class ExcursionOverflow(RuntimeError):
    """An excursion exceeded the step cap; indicates a misconfigured graph."""


@dataclass
class InterlacementSample:
    """Excursions of one interlacement draw plus their accumulated statistics.

    ``crossed_edges``/``killed_at`` together form the edge-and-vertex print of
    the process (the set I_E^u); ``visited`` marks vertices with positive
    local time.
    """

    graph: object
    u: float
    excursions: list
    ell: np.ndarray
    visited: np.ndarray
    crossed_edges: np.ndarray
    killed_at: np.ndarray

    @property
    def n_excursions(self):
        return len(self.excursions)

    def visited_vertices(self):
        return tuple(
            v for v, hit in zip(self.graph.vertices, self.visited) if hit
        )


def _walk_tables(graph):
    return graph.jump_tables


def sample_interlacement(graph, green, u, key, max_steps=10**6):
    """Draw one interlacement sample at level u > 0 on a finite transient graph.

    Trajectories carry full per-visit holding times, so the crossed-edge set
    and killed-at set are exact.  Deterministic given the stream key.
    """
    if u <= 0:
        raise ValueError("interlacement level u must be positive")
    graph.require_transient()
    gen = _rng.stream(0, key, "ri")
    return _sample_with(graph, u, gen, max_steps)


def _sample_with(graph, u, gen, max_steps):
    kappa = graph.kappa_array
    total_kappa = float(kappa.sum())
    tables = _walk_tables(graph)
    starts_cum = np.cumsum(kappa)
    n = graph.n
    ell = np.zeros(n)
    visited = np.zeros(n, dtype=bool)
    crossed = np.zeros(len(graph.edges), dtype=bool)
    killed = np.zeros(n, dtype=bool)
    excursions = []
    count = gen.poisson(u * total_kappa)
    for _ in range(count):
        r = gen.random() * total_kappa
        v = int(np.searchsorted(starts_cum, r, side="right"))
        path = []
        holds = []
        for _step in range(max_steps):
            cum, nbrs, lam_v, kap_v = tables[v]
            hold = gen.exponential(1.0 / lam_v)
            path.append(v)
            holds.append(hold)
            ell[v] += hold
            visited[v] = True
            r = gen.random() * lam_v
            if r >= lam_v - kap_v:
                killed[v] = True
                break
            j = min(bisect_right(cum, r), len(nbrs) - 1)
            crossed[nbrs[j][1]] = True
            v = nbrs[j][0]
        else:
            raise ExcursionOverflow(
                f"excursion exceeded {max_steps} steps; graph misconfigured?"
            )
        excursions.append((tuple(path), tuple(holds)))
    return InterlacementSample(
        graph=graph,
        u=u,
        excursions=excursions,
        ell=ell,
        visited=visited,
        crossed_edges=crossed,
        killed_at=killed,
    )


def sample_local_times(graph, green, u, key, max_steps=10**6):
    """Gamma-aggregation fast path: local times only, no trajectories.

    Walks the discrete skeleton accumulating visit counts, then draws one
    Gamma(count, 1/lambda_v) per vertex; equal in law to the per-visit
    exponential accumulation.
    """
    if u <= 0:
        raise ValueError("interlacement level u must be positive")
    graph.require_transient()
    gen = _rng.stream(0, key, "ri-ell")
    kappa = graph.kappa_array
    lam = graph.lambda_total
    total_kappa = float(kappa.sum())
    tables = _walk_tables(graph)
    starts_cum = np.cumsum(kappa)
    counts = np.zeros(graph.n, dtype=np.int64)
    for _ in range(gen.poisson(u * total_kappa)):
        r = gen.random() * total_kappa
        v = int(np.searchsorted(starts_cum, r, side="right"))
        for _step in range(max_steps):
            counts[v] += 1
            cum, nbrs, lam_v, kap_v = tables[v]
            r = gen.random() * lam_v
            if r >= lam_v - kap_v:
                break
            v = nbrs[min(bisect_right(cum, r), len(nbrs) - 1)][0]
        else:
            raise ExcursionOverflow(
                f"excursion exceeded {max_steps} steps; graph misconfigured?"
            )
    return gen.gamma(counts, 1.0 / lam)


# ---------------------------------------------------------------------------
# isomorphism couplings
# ---------------------------------------------------------------------------


def inclusion_prob(graph, phi, ell, u, edge=None, vertex=None):
    """Probability of conditional inclusion in the coupled edge/vertex set.

    For an edge {x, y} with weight w:
        1 - exp(-w (phi_x phi_y + sqrt((phi_x^2 + 2 ell_x)(phi_y^2 + 2 ell_y))))
    For a vertex x with killing rate kappa_x:
        1 - exp(-kappa_x sqrt(2 u (phi_x^2 + 2 ell_x)))
    """
    if (edge is None) == (vertex is None):
        raise ValueError("pass exactly one of edge= or vertex=")
    phi = np.asarray(phi, dtype=float)
    ell = np.asarray(ell, dtype=float)
    idx = graph.index
    if edge is not None:
        x, y = edge
        i, j = idx[x], idx[y]
        w = None
        for a, b, wt in graph.edges:
            if {a, b} == {x, y}:
                w = wt
                break
        if w is None:
            raise KeyError(f"no edge between {x!r} and {y!r}")
        expo = w * (
            phi[i] * phi[j]
            + math.sqrt((phi[i] ** 2 + 2 * ell[i]) * (phi[j] ** 2 + 2 * ell[j]))
        )
        return -math.expm1(-expo)
    i = idx[vertex]
    kap = graph.kappa_array[i]
    return -math.expm1(-kap * math.sqrt(2.0 * u * (phi[i] ** 2 + 2.0 * ell[i])))


@dataclass
class CoupledField:
    """The signed coupled field of the discrete isomorphism.

    ``psi_x = sigma_x sqrt(2 ell_x + phi_x^2)`` has the law of
    ``phi'_x + sqrt(2u)`` when the base field and interlacement are
    independent.
    """

    phi: np.ndarray
    sample: InterlacementSample
    u: float
    included_edges: np.ndarray
    included_vertices: np.ndarray
    sigma: np.ndarray
    psi: np.ndarray
    meta: dict = field(default_factory=dict)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def build_coupled_field(phi_sample, inter_sample, u, key):
    """Couple a field and an interlacement sample into the signed shifted field.

    The included set always contains the interlacement print (crossed edges
    and killed-at vertices); every other edge and vertex joins conditionally
    independently with :func:`inclusion_prob`.  Signs are constant on the
    clusters induced by the included edges, +1 on every cluster touching the
    interlacement or an included vertex, i.i.d. uniform elsewhere.
    """
    graph = inter_sample.graph
    if phi_sample.graph is not graph and phi_sample.graph != graph:
        raise ValueError("field and interlacement live on different graphs")
    phi = phi_sample.phi
    ell = inter_sample.ell
    gen = _rng.stream(0, key, "couple")
    ex, ey, w = graph.edge_arrays
    q = phi * phi + 2.0 * ell
    expo = w * (phi[ex] * phi[ey] + np.sqrt(q[ex] * q[ey]))
    p_edge = -np.expm1(-expo)
    included_edges = inter_sample.crossed_edges | (
        gen.random(len(w)) < p_edge
    )
    kappa = graph.kappa_array
    p_vertex = -np.expm1(-kappa * np.sqrt(2.0 * u * q))
    included_vertices = inter_sample.killed_at | (gen.random(graph.n) < p_vertex)

    uf = _UnionFind(graph.n)
    for e in np.flatnonzero(included_edges):
        uf.union(int(ex[e]), int(ey[e]))
    forced = inter_sample.visited | included_vertices
    n = graph.n
    root_forced = np.zeros(n, dtype=bool)
    for v in range(n):
        if forced[v]:
            root_forced[uf.find(v)] = True
    sigma = np.empty(n)
    root_sign = {}
    for v in range(n):
        r = uf.find(v)
        if root_forced[r]:
            sigma[v] = 1.0
        else:
            s = root_sign.get(r)
            if s is None:
                s = 1.0 if gen.random() < 0.5 else -1.0
                root_sign[r] = s
            sigma[v] = s

    assert bool(np.all(included_edges >= inter_sample.crossed_edges))
    assert bool(np.all(included_vertices >= inter_sample.killed_at))
    psi = sigma * np.sqrt(q)
    return CoupledField(
        phi=phi,
        sample=inter_sample,
        u=u,
        included_edges=included_edges,
        included_vertices=included_vertices,
        sigma=sigma,
        psi=psi,
    )


def squared_iso_pair(phi_sample, inter_sample):
    """Left-hand field of the unsigned isomorphism: ell_x + phi_x^2 / 2."""
    if (
        phi_sample.graph is not inter_sample.graph
        and phi_sample.graph != inter_sample.graph
    ):
        raise ValueError("field and interlacement live on different graphs")
    return inter_sample.ell + 0.5 * phi_sample.phi**2


# ---------------------------------------------------------------------------
# CSV / JSONL dumps
# ---------------------------------------------------------------------------


def dump_local_times_csv(samples, path):
    with open(path, "w") as fh:
        fh.write("sample_id,vertex,ell\n")
        for sid, s in enumerate(samples):
            for v, val in zip(s.graph.vertices, s.ell):
                fh.write(f"{sid},{v},{val!r}\n")


def dump_psi_csv(fields, vertices, path):
    with open(path, "w") as fh:
        fh.write("sample_id,vertex,psi\n")
        for sid, c in enumerate(fields):
            for v, val in zip(vertices, c.psi):
                fh.write(f"{sid},{v},{val!r}\n")


def dump_excursions_jsonl(sample, path):
    import json

    with open(path, "w") as fh:
        for path_vertices, holds in sample.excursions:
            fh.write(
                json.dumps(
                    {
                        "vertices": [repr(sample.graph.vertices[v]) for v in path_vertices],
                        "holding_times": list(holds),
                    }
                )
                + "\n"
            )
