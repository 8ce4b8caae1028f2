"""Weighted graphs with killing: the discrete skeleton of a cable system.

A graph is a triple (vertices, symmetric edge weights, per-vertex killing
rates).  Killing rates may be ``inf`` before :func:`induce_finite_killing`
replaces every Dirichlet vertex by mid-points on its incident edges.
:func:`refine` subdivides edges and killing cables at equal resistance
spacing without changing the law of the process traced on the original
vertices, which is the workhorse for cable-level capacity computations.

Resistance conventions: an edge of weight ``w`` has resistance ``1/(2w)``;
a vertex with killing rate ``k > 0`` carries a killing cable of resistance
``1/(2k)`` toward an implicit zero-boundary point.
"""

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INF = math.inf


class GraphSpecError(ValueError):
    """Raised for malformed or inconsistent graph specifications."""


@dataclass(frozen=True)
class WeightedGraph:
    """Immutable weighted graph with killing measure.

    Parameters
    ----------
    vertices : tuple
        Vertex ids in a fixed deterministic order (row-major for grids,
        BFS order for trees).
    edges : tuple of (x, y, w)
        Each undirected edge listed once with strictly positive weight ``w``.
    kappa : tuple of float
        Killing rate per vertex, aligned with ``vertices``; entries in
        ``[0, inf]``.
    """

    vertices: tuple
    edges: tuple
    kappa: tuple

    def __post_init__(self):
        if not self.vertices:
            raise GraphSpecError("empty vertex set")
        if len(set(self.vertices)) != len(self.vertices):
            raise GraphSpecError("duplicate vertex ids")
        if len(self.kappa) != len(self.vertices):
            raise GraphSpecError("kappa length does not match vertex count")
        idx = {v: i for i, v in enumerate(self.vertices)}
        seen = set()
        for x, y, w in self.edges:
            if x not in idx or y not in idx:
                raise GraphSpecError(f"edge ({x},{y}) references unknown vertex")
            if x == y:
                raise GraphSpecError(f"self-loop at {x}")
            if not (w > 0):
                raise GraphSpecError(f"non-positive weight on edge ({x},{y})")
            key = (idx[x], idx[y]) if idx[x] < idx[y] else (idx[y], idx[x])
            if key in seen:
                raise GraphSpecError(f"duplicate edge ({x},{y})")
            seen.add(key)
        for v, k in zip(self.vertices, self.kappa):
            if not (k >= 0):
                raise GraphSpecError(f"negative killing rate at {v}")
        if not self._connected():
            raise GraphSpecError("graph is not connected")

    # -- index-based views ------------------------------------------------

    @cached_property
    def index(self):
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def n(self):
        return len(self.vertices)

    @cached_property
    def edge_arrays(self):
        """(ex, ey, w) integer/float arrays, one entry per edge."""
        if self.edges:
            ex = np.array([self.index[e[0]] for e in self.edges], dtype=np.int64)
            ey = np.array([self.index[e[1]] for e in self.edges], dtype=np.int64)
            w = np.array([e[2] for e in self.edges], dtype=float)
        else:
            ex = np.empty(0, dtype=np.int64)
            ey = np.empty(0, dtype=np.int64)
            w = np.empty(0, dtype=float)
        return ex, ey, w

    @cached_property
    def kappa_array(self):
        return np.array(self.kappa, dtype=float)

    @cached_property
    def lambda_total(self):
        """Total rate per vertex: kappa_x + sum of incident edge weights."""
        ex, ey, w = self.edge_arrays
        lam = self.kappa_array.copy()
        np.add.at(lam, ex, w)
        np.add.at(lam, ey, w)
        return lam

    @cached_property
    def adjacency(self):
        """CSR-style neighbour lists: (indptr, nbr_vertex, nbr_edge)."""
        ex, ey, _ = self.edge_arrays
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, ex, 1)
        np.add.at(deg, ey, 1)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        nbr = np.empty(indptr[-1], dtype=np.int64)
        nbr_edge = np.empty(indptr[-1], dtype=np.int64)
        cursor = indptr[:-1].copy()
        for k in range(len(ex)):
            a, b = ex[k], ey[k]
            nbr[cursor[a]], nbr_edge[cursor[a]] = b, k
            cursor[a] += 1
            nbr[cursor[b]], nbr_edge[cursor[b]] = a, k
            cursor[b] += 1
        return indptr, nbr, nbr_edge

    @cached_property
    def adjacency_lists(self):
        """Per-vertex list of (neighbour index, edge index) as plain ints."""
        out = [[] for _ in range(self.n)]
        for k, (x, y, _) in enumerate(self.edges):
            i, j = self.index[x], self.index[y]
            out[i].append((j, k))
            out[j].append((i, k))
        return out

    @cached_property
    def jump_tables(self):
        """Per-vertex (cumulative neighbour weights, adjacency, lambda, kappa).

        Jump-chain transition tables: from v, jump to neighbour j when a
        uniform draw on [0, lambda_v) falls in the j-th weight slot, killed
        when it lands in the trailing kappa_v slot.
        """
        tables = []
        lam = self.lambda_total
        kap = self.kappa_array
        for v in range(self.n):
            nbrs = self.adjacency_lists[v]
            cum = []
            acc = 0.0
            for y, e in nbrs:
                acc += self.edges[e][2]
                cum.append(acc)
            tables.append((cum, nbrs, float(lam[v]), float(kap[v])))
        return tables

    def _connected(self):
        n = len(self.vertices)
        if n == 1:
            return True
        idx = {v: i for i, v in enumerate(self.vertices)}
        nbrs = [[] for _ in range(n)]
        for x, y, _ in self.edges:
            nbrs[idx[x]].append(idx[y])
            nbrs[idx[y]].append(idx[x])
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        count = 1
        while stack:
            v = stack.pop()
            for u in nbrs[v]:
                if not seen[u]:
                    seen[u] = True
                    count += 1
                    stack.append(u)
        return count == n

    # -- properties --------------------------------------------------------

    @property
    def has_infinite_killing(self):
        return any(k == INF for k in self.kappa)

    @property
    def transient(self):
        """A finite connected graph is transient iff some killing is positive."""
        return any(k > 0 for k in self.kappa)

    def require_finite(self):
        if self.has_infinite_killing:
            raise GraphSpecError(
                "graph carries infinite killing; apply induce_finite_killing first"
            )

    def require_transient(self):
        self.require_finite()
        if not self.transient:
            raise NotTransient("killing measure vanishes everywhere")

    def degree(self, v):
        indptr, _, _ = self.adjacency
        i = self.index[v]
        return int(indptr[i + 1] - indptr[i])


class NotTransient(Exception):
    """The killed Laplacian is singular: no killing anywhere."""


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def generate_graph(family, params):
    """Build a validated graph from one of the supported families.

    ``family`` is one of ``"grid"``, ``"regular_tree"``, ``"edge_list"``.
    Grid vertices are flat row-major integers ``0 .. side**d - 1``; tree
    vertices are BFS-ordered integers with root 0.
    """
    if family == "grid":
        g = _grid(**params)
    elif family == "regular_tree":
        g = _regular_tree(**params)
    elif family == "edge_list":
        g = _edge_list(**params)
    else:
        raise GraphSpecError(f"unknown graph family {family!r}")
    if not g.has_infinite_killing and not g.transient:
        raise NotTransient("graph has no killing anywhere, hence is recurrent")
    return g


def _as_kappa(kappa, vertices):
    if isinstance(kappa, dict):
        missing = [v for v in vertices if v not in kappa and str(v) not in kappa]
        if missing:
            raise GraphSpecError(f"kappa missing for vertices {missing[:5]}")
        return tuple(
            _parse_rate(kappa[v] if v in kappa else kappa[str(v)]) for v in vertices
        )
    if np.isscalar(kappa):
        return (float(kappa),) * len(vertices)
    if len(kappa) != len(vertices):
        raise GraphSpecError("kappa list length does not match vertex count")
    return tuple(_parse_rate(k) for k in kappa)


def _parse_rate(value):
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return INF
        return float(value)
    return float(value)


def _grid(d, side, lam=1.0, kappa=0.0):
    if d < 1 or side < 1:
        raise GraphSpecError("grid needs d >= 1 and side >= 1")
    shape = (side,) * d
    n = side**d
    vertices = tuple(range(n))
    edges = []
    for flat in range(n):
        coord = np.unravel_index(flat, shape)
        for axis in range(d):
            if coord[axis] + 1 < side:
                nb = list(coord)
                nb[axis] += 1
                edges.append((flat, int(np.ravel_multi_index(nb, shape)), float(lam)))
    return WeightedGraph(vertices, tuple(edges), _as_kappa(kappa, vertices))


def _regular_tree(degree, depth, lam=1.0, kappa=0.0):
    """Rooted tree where every internal vertex has total degree ``degree``."""
    if degree < 1 or depth < 0:
        raise GraphSpecError("regular_tree needs degree >= 1 and depth >= 0")
    vertices = [0]
    edges = []
    frontier = [0]
    next_id = 1
    for level in range(depth):
        children_per = degree if level == 0 else degree - 1
        new_frontier = []
        for parent in frontier:
            for _ in range(children_per):
                edges.append((parent, next_id, float(lam)))
                vertices.append(next_id)
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    vertices = tuple(vertices)
    return WeightedGraph(vertices, tuple(edges), _as_kappa(kappa, vertices))


def _edge_list(edges, kappa, vertices=None):
    edges = tuple((x, y, float(w)) for x, y, w in edges)
    if vertices is None:
        seen = []
        for x, y, _ in edges:
            for v in (x, y):
                if v not in seen:
                    seen.append(v)
        if isinstance(kappa, dict):
            for v in kappa:
                if v not in seen:
                    seen.append(v)
        vertices = tuple(seen)
    else:
        vertices = tuple(vertices)
    return WeightedGraph(vertices, edges, _as_kappa(kappa, vertices))


def grid_center(g, side, d=2):
    """Flat index of the central vertex of a row-major grid."""
    c = (side - 1) // 2
    return int(np.ravel_multi_index((c,) * d, (side,) * d))


# ---------------------------------------------------------------------------
# graph spec files
# ---------------------------------------------------------------------------


def from_spec(spec):
    """Build a graph from a JSON-style dict.

    Two forms are accepted::

        {"family": "grid", "params": {"d": 2, "side": 8, "lam": 1, "kappa": 0.25}}
        {"vertices": [...], "edges": [[x, y, w], ...], "kappa": {"v": 1.0, "w": "inf"}}

    The token ``"inf"`` denotes an infinite killing rate.
    """
    if "family" in spec:
        return generate_graph(spec["family"], spec.get("params", {}))
    if "edges" in spec:
        return generate_graph(
            "edge_list",
            {
                "edges": [tuple(e) for e in spec["edges"]],
                "kappa": spec.get("kappa", 0.0),
                "vertices": tuple(spec["vertices"]) if "vertices" in spec else None,
            },
        )
    raise GraphSpecError("graph spec needs either 'family' or 'edges'")


def load_graph(path):
    with open(path) as fh:
        return from_spec(json.load(fh))


# ---------------------------------------------------------------------------
# induction of finite killing (mid-points)
# ---------------------------------------------------------------------------


def induce_finite_killing(g):
    """Replace every vertex with infinite killing by mid-points.

    Vertices with ``kappa = inf`` are removed.  Each edge {x, y} with
    ``kappa_x = inf`` and ``kappa_y < inf`` becomes a pendant mid-point ``a``
    with ``lambda_{y,a} = 2 w`` and ``kappa_a = 2 w`` where ``w`` was the edge
    weight; ``y`` keeps its own killing rate.  Edges between two infinite
    vertices carry no field and are dropped silently.  Returns ``g`` itself
    when the killing measure is already finite everywhere.
    """
    if not g.has_infinite_killing:
        return g
    finite = [v for v, k in zip(g.vertices, g.kappa) if k != INF]
    if not finite:
        raise GraphSpecError("all vertices carry infinite killing: empty graph")
    kap = {v: k for v, k in zip(g.vertices, g.kappa) if k != INF}
    edges = []
    mids = []
    counter = {}
    for x, y, w in g.edges:
        kx, ky = g.kappa[g.index[x]], g.kappa[g.index[y]]
        if kx == INF and ky == INF:
            continue
        if kx == INF or ky == INF:
            keep = y if kx == INF else x
            m = counter.get(keep, 0)
            counter[keep] = m + 1
            a = ("mid", keep, m)
            mids.append(a)
            edges.append((keep, a, 2.0 * w))
            kap[a] = 2.0 * w
        else:
            edges.append((x, y, w))
    vertices = tuple(finite) + tuple(mids)
    try:
        return WeightedGraph(vertices, tuple(edges), tuple(kap[v] for v in vertices))
    except GraphSpecError as err:
        raise GraphSpecError(f"graph degenerate after removing Dirichlet vertices: {err}")


# ---------------------------------------------------------------------------
# refinement (network-equivalent subdivision)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefinedGraph:
    """A graph together with its equal-spacing subdivision.

    ``locus`` maps every refined vertex to ``(kind, parent, t)`` where
    ``kind`` is ``"vertex"``, ``"edge"`` or ``"cable"``, ``parent`` is the
    original vertex or edge pair and ``t`` the resistance distance from the
    first endpoint.  Original vertices appear with identity locus, occupying
    the leading positions of ``refined.vertices`` in base order.
    """

    base: WeightedGraph
    refined: WeightedGraph
    locus: dict = field(compare=False)
    n_edge: int = 1
    n_cable: int = 0

    @cached_property
    def cable_chains(self):
        """Chain vertex ids per base vertex with kappa > 0 (may be empty)."""
        chains = {}
        for v, k in zip(self.base.vertices, self.base.kappa):
            if k > 0 and self.n_cable >= 1:
                chains[v] = tuple((v, j) for j in range(1, self.n_cable + 1))
            else:
                chains[v] = ()
        return chains


def refine(g, n_edge=1, n_cable=0):
    """Subdivide edges and killing cables at equal resistance spacing.

    Every edge of weight ``w`` becomes ``n_edge`` sub-edges of weight
    ``n_edge * w``.  Every killing cable of a vertex with rate ``k > 0``
    becomes (when ``n_cable >= 1``) a pendant chain of ``n_cable`` vertices
    with consecutive weights ``(n_cable + 1) * k`` and terminal killing
    ``(n_cable + 1) * k``; the base vertex then carries no killing itself.
    The trace of the process on the original vertices is unchanged, so Green
    values and capacities of original-vertex sets are invariant.
    """
    g.require_finite()
    if n_edge < 1:
        raise GraphSpecError("n_edge must be >= 1")
    if n_cable < 0:
        raise GraphSpecError("n_cable must be >= 0")

    vertices = list(g.vertices)
    locus = {v: ("vertex", v, 0.0) for v in g.vertices}
    edges = []
    kap = {v: k for v, k in zip(g.vertices, g.kappa)}

    for x, y, w in g.edges:
        if n_edge == 1:
            edges.append((x, y, w))
            continue
        rho = 1.0 / (2.0 * w)
        sub_w = n_edge * w
        prev = x
        for j in range(1, n_edge):
            z = ((x, y), j)
            vertices.append(z)
            locus[z] = ("edge", (x, y), j * rho / n_edge)
            kap[z] = 0.0
            edges.append((prev, z, sub_w))
            prev = z
        edges.append((prev, y, sub_w))

    if n_cable >= 1:
        for v, k in zip(g.vertices, g.kappa):
            if k <= 0:
                continue
            rho = 1.0 / (2.0 * k)
            sub_w = (n_cable + 1) * k
            kap[v] = 0.0
            prev = v
            for j in range(1, n_cable + 1):
                z = (v, j)
                vertices.append(z)
                locus[z] = ("cable", v, j * rho / (n_cable + 1))
                edges.append((prev, z, sub_w))
                kap[z] = sub_w if j == n_cable else 0.0
                prev = z

    refined = WeightedGraph(
        tuple(vertices), tuple(edges), tuple(kap[v] for v in vertices)
    )
    return RefinedGraph(g, refined, locus, n_edge, n_cable)
