"""Globally optimal rigid point-cloud registration with certified accuracy.

The search subdivides the motion space into cubes and eliminates cubes by
comparing bound values against the best energy seen so far.  With the
default quadratic quasi-lower bounds the number of evaluations needed for an
epsilon-certificate grows like log(1/epsilon); the linear Lipschitz bounds
provide the classical baseline for comparison.
"""

from .bounds import (
    BoundParams,
    linear_lb_bijective,
    linear_lb_cp,
    psi,
    quasi_lb_bijective,
    quasi_lb_cp,
    quasi_lb_cp_rotation,
    quasi_lb_cp_translation,
)
from .correspondence import (
    Correspondence,
    CPIndex,
    EnergyEval,
    build_cp_index,
    eval_F_bi,
    eval_F_cp,
    icp_refine,
    procrustes,
    solve_assignment,
)
from .geometry import (
    Cube,
    DegenerateCloudError,
    PointCloud,
    RigidMotion,
    XYZFormatError,
    cloud_norms,
    exp_rotation,
    format_xyz,
    log_rotation,
    normalize_cloud,
    parse_xyz,
    rotation_dim,
    skew,
    subdivide,
)
from .search import (
    GenerationRecord,
    InnerResult,
    SearchAborted,
    SearchConfig,
    SearchResult,
    best_first_qbnb,
    bfs_qbnb,
    inner_translation_search,
    nested_cp_search,
    register,
    register_bijective,
    register_cp,
)
from .synth import (
    GenStats,
    PairwiseResult,
    SynthSpec,
    SynthTruth,
    farthest_point_subsample,
    gen_synthetic,
    pairwise_matrix,
    per_generation_stats,
    random_rigid,
)

__version__ = "0.1.0"
