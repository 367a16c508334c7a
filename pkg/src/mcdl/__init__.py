"""Minimum conditional description length estimation for pairwise MRFs.

Estimate the exponential parameters of a subset of a spin-valued Markov
random field from observations of the subset and its boundary, by
minimizing the empirical conditional cross entropy (equivalently, the
conditional coding rate).  Ships exact tree inference, a Gibbs sampler, the
convex estimator with temporal and spatial modes, and a conditional
arithmetic coder that realizes the description-length reading.
"""

from .graph import (
    Graph,
    GridMeta,
    SubsetGeometry,
    Tractability,
    build_grid,
    grid_interior_nodes,
    grid_row_nodes,
    make_graph,
    resolve_subset,
    row_subsets,
    subset_geometry,
)
from .model import (
    PairwiseModel,
    ParameterTying,
    component_params,
    enumerate_spin_configs,
    free_tying,
    homogeneous_model,
    homogeneous_tying,
    joint_log_prob_bruteforce,
    load_model,
    make_tying,
    restricted_statistic,
    save_model,
    site_conditional,
)
from .inference import (
    ConditionalModel,
    IntractableSubsetError,
    SequentialConditioner,
    brute_force_conditional,
    conditional_log_partition,
    conditional_log_prob,
    conditional_moments,
    fold_boundary,
    sequential_conditionals,
)
from .sampler import SampleSequence, gibbs_sweep, read_samples, sample_sequence, write_samples
from .estimator import (
    EstimateReport,
    EvalTask,
    SweepResult,
    cross_entropy,
    cross_entropy_gradient,
    cross_entropy_moment_form,
    empirical_moment,
    minimize_mcdl,
    pseudo_log_likelihood,
    spatial_objective,
    sweep_scalar,
    tasks_from_configuration,
    tasks_from_samples,
    write_sweep_csv,
)
from .codec import (
    Bitstream,
    DigestMismatchError,
    decode_conditional,
    encode_conditional,
    read_bitstream,
    write_bitstream,
)
from .oracle import run_oracle_suite

__version__ = "0.1.0"
