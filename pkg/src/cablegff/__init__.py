"""Gaussian free field and random interlacements on finite metric graphs.

Library layout mirrors the pipeline: build a weighted graph with killing
(:mod:`~cablegff.graphs`), factorize its killed Laplacian for Green values,
equilibrium measures and capacities (:mod:`~cablegff.potential`), sample the
field and explore level-set clusters on the cable system
(:mod:`~cablegff.gff`), sample interlacements and isomorphism couplings
(:mod:`~cablegff.interlacements`), and compare Monte Carlo output against the
closed-form capacity law (:mod:`~cablegff.law`).  The experiment suites and
their command-line entry points live in :mod:`~cablegff.experiments` and
:mod:`~cablegff.cli`.
"""

from .graphs import (
    GraphSpecError,
    NotTransient,
    RefinedGraph,
    WeightedGraph,
    from_spec,
    generate_graph,
    grid_center,
    induce_finite_killing,
    load_graph,
    refine,
)
from .potential import (
    EquilibriumResult,
    GreenOperator,
    IllConditioned,
    ball,
    capacity_green_inverse,
    capacity_growth_profile,
    capacity_of_indices,
    equilibrium_measure,
    geodesic_path,
    green_operator,
    hitting_distribution,
    sweeping_residual,
)
from .gff import (
    ClusterReport,
    FieldSample,
    cable_escape_prob,
    cluster_capacity,
    explore_cluster,
    level_crossing_prob,
    sample_field,
    sample_refined_field,
)
from .interlacements import (
    CoupledField,
    InterlacementSample,
    build_coupled_field,
    inclusion_prob,
    sample_interlacement,
    sample_local_times,
    squared_iso_pair,
)
from .law import (
    CapacityLaw,
    TestReport,
    binomial_ztest,
    chi_square_poisson,
    ks_one_sample,
    ks_two_sample,
    laplace_rhs,
    laplace_selfcheck,
    law_cdf,
    law_mass,
    rho_density,
)

__version__ = "0.1.0"
