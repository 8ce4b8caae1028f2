"""Exact Gaussian free field sampling and cable-level cluster exploration.

Vertex values are exact ``N(0, M^{-1})`` draws via a triangular solve against
the Cholesky factor of the killed Laplacian.  Everything happening on the
cables between vertices is resolved by closed-form Brownian-bridge
functionals: the probability that an edge stays above a level given its
endpoint values, and the probability that an entire killing cable does.
Cluster exploration therefore samples the exact connectivity law of the
level set on the cable system restricted to the vertex skeleton.

Crossing indicators are sampled lazily and memoized per (edge, level) inside
one FieldSample, so repeated queries on one sample are mutually consistent;
distinct levels use independent randomness.  Joint consistency across
different levels on the same edge is not modeled: single-level experiments
only.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import rng as _rng
from .potential import capacity_of_indices


def level_crossing_prob(a, b, lam, h):
    """Probability that an open edge stays strictly above level h.

    Given endpoint values a, b and edge weight lam, the field on the edge is
    a Brownian bridge; the whole edge exceeds h with probability
    ``1 - exp(-2 lam (a-h)(b-h))`` when both endpoints do, and 0 otherwise.
    """
    if lam <= 0:
        raise ValueError("edge weight must be positive")
    if a <= h or b <= h:
        return 0.0
    return -math.expm1(-2.0 * lam * (a - h) * (b - h))


def cable_escape_prob(a, kappa, h):
    """Probability that the entire killing cable of a vertex stays above h.

    The cable runs from the vertex value ``a`` to the value 0 at its far end,
    so the probability vanishes for h >= 0 and equals
    ``1 - exp(-2 kappa (a-h)(-h))`` for h < 0.
    """
    if kappa <= 0:
        raise ValueError("cable escape is only defined for kappa > 0")
    if a <= h:
        raise ValueError("vertex value must exceed the level")
    if h >= 0:
        return 0.0
    return -math.expm1(-2.0 * kappa * (a - h) * (-h))


@dataclass
class ClusterReport:
    """Explored level-set cluster of one root vertex.

    ``capacity`` is the discrete capacity of the member set (``math.inf``
    exactly when the cluster is non-compact, i.e. some member's killing
    cable survived entirely above the level).
    """

    root: object
    level: float
    members: tuple
    crossed_edges: tuple
    cable_survived: tuple
    compact: bool
    capacity: float
    refinement: int = 1


class FieldSample:
    """One GFF realization: vertex values plus lazy cable crossing decisions.

    Decisions are keyed Bernoulli draws derived from the sample's stream key,
    hence frozen (re-querying the same edge and level gives the same answer)
    and independent across edges and levels.  A FieldSample is confined to
    one worker; graphs and Green operators are safe to share.
    """

    def __init__(self, graph, phi, key, green=None):
        self.graph = graph
        self.phi = np.asarray(phi, dtype=float)
        self.key = key
        self.green = green
        self._edge_memo = {}
        self._cable_memo = {}

    def value(self, v):
        return float(self.phi[self.graph.index[v]])

    def crossing_decision(self, edge_idx, h):
        """Frozen indicator: does edge ``edge_idx`` stay above level h."""
        memo_key = (edge_idx, h)
        hit = self._edge_memo.get(memo_key)
        if hit is None:
            ex, ey, w = self.graph.edge_arrays
            p = level_crossing_prob(
                self.phi[ex[edge_idx]], self.phi[ey[edge_idx]], w[edge_idx], h
            )
            u = _rng.uniform(0, self.key, "edge", edge_idx, repr(float(h)))
            hit = u < p
            self._edge_memo[memo_key] = hit
        return hit

    def cable_decision(self, vertex_idx, h):
        """Frozen indicator: does the killing cable at this vertex survive above h."""
        memo_key = (vertex_idx, h)
        hit = self._cable_memo.get(memo_key)
        if hit is None:
            kappa = self.graph.kappa_array[vertex_idx]
            p = cable_escape_prob(self.phi[vertex_idx], kappa, h)
            u = _rng.uniform(0, self.key, "cable", vertex_idx, repr(float(h)))
            hit = u < p
            self._cable_memo[memo_key] = hit
        return hit


def sample_field(green, key):
    """Draw an exact N(0, M^{-1}) field; deterministic given the stream key.

    The sample solves ``L^T phi = z`` with ``L L^T = M`` and z i.i.d.
    standard normal from the keyed stream.
    """
    L = green.sampling_factor()
    gen = _rng.stream(0, key, "gff")
    z = gen.standard_normal(green.graph.n)
    phi = sla.solve_triangular(L, z, lower=True, trans=1)
    return FieldSample(green.graph, phi, key, green=green)


def chain_fluctuation_factor(k):
    """Cholesky factor of tridiag(2, -1) of size k, for conditional chain fills."""
    if k == 0:
        return np.zeros((0, 0))
    T = 2.0 * np.eye(k) - np.eye(k, k=1) - np.eye(k, k=-1)
    return sla.cholesky(T, lower=True)


def sample_refined_field(coarse, refined, key):
    """Fill a refined graph's interior vertices conditionally on the coarse field.

    Edge interiors are Gaussian given the two endpoint values (tridiagonal
    Dirichlet covariance, linear-interpolation mean); cable chains are
    Gaussian given the vertex value with zero boundary at the killed end.
    The joint law equals direct sampling on the refined graph.
    """
    if refined.base is not coarse.graph and refined.base != coarse.graph:
        raise ValueError("coarse sample was not drawn on refined.base")
    rg = refined.refined
    base = refined.base
    phi = np.zeros(rg.n)
    phi[: base.n] = coarse.phi
    gen = _rng.stream(0, key, "refine")
    n_e, n_c = refined.n_edge, refined.n_cable
    idx = rg.index
    if n_e > 1:
        Lf = chain_fluctuation_factor(n_e - 1)
        frac = np.arange(1, n_e) / n_e
        for x, y, w in base.edges:
            a, b = coarse.value(x), coarse.value(y)
            mean = a + (b - a) * frac
            z = gen.standard_normal(n_e - 1)
            fluct = sla.solve_triangular(Lf, z, lower=True, trans=1) / math.sqrt(
                n_e * w
            )
            for j in range(1, n_e):
                phi[idx[((x, y), j)]] = mean[j - 1] + fluct[j - 1]
    if n_c >= 1:
        Lf = chain_fluctuation_factor(n_c)
        frac = 1.0 - np.arange(1, n_c + 1) / (n_c + 1)
        for v, kap in zip(base.vertices, base.kappa):
            if kap <= 0:
                continue
            a = coarse.value(v)
            mean = a * frac
            z = gen.standard_normal(n_c)
            fluct = sla.solve_triangular(Lf, z, lower=True, trans=1) / math.sqrt(
                (n_c + 1) * kap
            )
            for j in range(1, n_c + 1):
                phi[idx[(v, j)]] = mean[j - 1] + fluct[j - 1]
    return FieldSample(rg, phi, key)


# ---------------------------------------------------------------------------
# cluster exploration
# ---------------------------------------------------------------------------


class _StreamDecisions:
    """Crossing decisions drawn sequentially from a generator (resampling mode)."""

    def __init__(self, graph, gen, h):
        self.graph = graph
        self.gen = gen
        self.h = h
        _, _, self.w = graph.edge_arrays
        self.kappa = graph.kappa_array

    def edge(self, e, a, b):
        return self.gen.random() < level_crossing_prob(a, b, self.w[e], self.h)

    def cable(self, v, a):
        return self.gen.random() < cable_escape_prob(a, self.kappa[v], self.h)


class _KeyedDecisions:
    """Crossing decisions delegated to the sample's frozen keyed draws."""

    def __init__(self, sample, h):
        self.sample = sample
        self.h = h

    def edge(self, e, a, b):
        return self.sample.crossing_decision(e, self.h)

    def cable(self, v, a):
        return self.sample.cable_decision(v, self.h)


def explore_indices(graph, phi, h, root_idx, decisions):
    """BFS the level-h cluster of the root; returns (members, crossed, survived).

    Each incident edge with both endpoints at or above the level is crossed
    with the Brownian-bridge probability (decided at most once); for every
    member with positive killing rate and h < 0, the full-cable survival is
    sampled.  Members and crossings come back in deterministic BFS order.
    """
    if phi[root_idx] < h:
        return [], [], []
    adj = graph.adjacency_lists
    visited = {root_idx}
    members = [root_idx]
    crossed = []
    queue = [root_idx]
    head = 0
    while head < len(queue):
        v = queue[head]
        head += 1
        a = phi[v]
        for y, e in adj[v]:
            if y in visited or phi[y] < h:
                continue
            if decisions.edge(e, a, phi[y]):
                visited.add(y)
                members.append(y)
                queue.append(y)
                crossed.append(e)
    survived = []
    if h < 0:
        kappa = graph.kappa_array
        for v in members:
            if kappa[v] > 0 and decisions.cable(v, phi[v]):
                survived.append(v)
    return members, crossed, survived


def explore_cluster(field, x0, h, stream=None, green=None):
    """Explore the level-h cluster of x0 in one field sample.

    With ``stream=None`` the sample's frozen keyed decisions are used, so the
    report is reproducible per sample; passing a stream key resamples the
    crossing indicators (the vertex values stay fixed).  The report capacity
    is the discrete capacity of the member set, ``inf`` if non-compact.
    """
    graph = field.graph
    green = green if green is not None else field.green
    root_idx = graph.index[x0]
    if stream is None:
        decisions = _KeyedDecisions(field, h)
    else:
        decisions = _StreamDecisions(graph, _rng.stream(0, stream, "explore"), h)
    members, crossed, survived = explore_indices(
        graph, field.phi, h, root_idx, decisions
    )
    compact = not survived
    if not members:
        capacity = 0.0
    elif not compact:
        capacity = math.inf
    else:
        if green is None:
            raise ValueError("a Green operator is required to report capacities")
        capacity = capacity_of_indices(green, np.array(members, dtype=np.int64))
    ex, ey, _ = graph.edge_arrays
    return ClusterReport(
        root=x0,
        level=h,
        members=tuple(graph.vertices[i] for i in members),
        crossed_edges=tuple(
            (graph.vertices[ex[e]], graph.vertices[ey[e]]) for e in crossed
        ),
        cable_survived=tuple(graph.vertices[i] for i in survived),
        compact=compact,
        capacity=capacity,
        refinement=1,
    )


def cluster_capacity(report, refined, refined_field, green_refined):
    """Cluster capacity recomputed on a refined graph.

    Non-compact reports have infinite capacity outright.  Otherwise the
    cluster is re-explored on the refined graph (vertex condition on refined
    values, bridge crossings on sub-edges) and the discrete capacity of the
    refined member set is returned; it converges to the cable capacity as the
    refinement grows.  If the refined pass itself detects a surviving cable
    stub (possible for negative levels, where base and refined cable
    randomness are independent), the refined verdict wins and inf is
    returned.
    """
    if refined_field.graph is not refined.refined and refined_field.graph != refined.refined:
        raise ValueError("refined field was not drawn on refined.refined")
    if report.root not in refined.base.index:
        raise ValueError("report root is not a base vertex of the refinement")
    if not report.compact:
        return math.inf
    if not report.members:
        return 0.0
    h = report.level
    root_idx = refined.refined.index[report.root]
    decisions = _KeyedDecisions(refined_field, h)
    members, _, survived = explore_indices(
        refined.refined, refined_field.phi, h, root_idx, decisions
    )
    if survived:
        return math.inf
    if not members:
        return 0.0
    return capacity_of_indices(green_refined, np.array(members, dtype=np.int64))


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------


def dump_field_csv(samples, path):
    """Write fields as (sample_id, vertex, phi) rows."""
    with open(path, "w") as fh:
        fh.write("sample_id,vertex,phi\n")
        for sid, s in enumerate(samples):
            for v, val in zip(s.graph.vertices, s.phi):
                fh.write(f"{sid},{v},{val!r}\n")


def dump_cluster_csv(reports, path):
    """Write cluster reports as (sample_id, level, n_vertices, compact, capacity)."""
    with open(path, "w") as fh:
        fh.write("sample_id,level,n_vertices,compact,capacity\n")
        for sid, r in enumerate(reports):
            cap = "inf" if math.isinf(r.capacity) else repr(r.capacity)
            fh.write(f"{sid},{r.level!r},{len(r.members)},{r.compact},{cap}\n")
