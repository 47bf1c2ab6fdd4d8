"""Budget-constrained map-point selection for sparse visual SLAM.

Selects a subset of map points that preserves localisation and
loop-closure quality by greedily maximizing submodular information and
coverage utilities, with a synthetic-world generator and a bundle-
adjustment evaluator to score selections against ground truth.
"""

from .errors import (
    BudgetError,
    CombinatorialBlowupError,
    ConfigurationError,
    DataError,
    DegenerateProblemError,
    DuplicateSelectionError,
    EmptyProblemError,
    FactorizationError,
    GenerationError,
    MapSelectError,
    NumericalBreakdownError,
    NumericalError,
    RankDeficiencyError,
    UnderConstrainedError,
    UnknownIdError,
    UsageError,
    ValidationError,
)
from .geometry import (
    CameraIntrinsics,
    SE3,
    observation_jacobian,
    project_mono,
    project_stereo,
    se3_perturb,
)
from .map_model import (
    Keyframe,
    MapPoint,
    Observation,
    SelectionProblem,
    SlamMap,
    covisibility_count,
    covisible_frames,
    forced_set,
    pairing,
    validate,
)
from .greedy import (
    Selection,
    brute_force_opt,
    classic_greedy,
    lazy_greedy,
    random_select,
    stochastic_greedy,
    stochastic_sample_size,
)
from .utilities import (
    DEFAULT_B_COVER,
    UTILITY_KINDS,
    GainResult,
    UtilityState,
    make_combined_state,
    make_cover_state,
    make_local_state,
    make_odom_state,
    make_slam_state,
    make_state,
)
from .coverage_ip import IpModel, IpResult, build_ip, ip_objective, solve_ip_exact, solve_ip_greedy
from .simeval import (
    CSV_HEADER,
    BaResult,
    EvalReport,
    GroundTruth,
    WorldSpec,
    ape,
    budget_sweep,
    evaluate_selection,
    gauss_newton_ba,
    generate_world,
    parse_budget,
    recall_proxy,
    report_csv_row,
    rpe,
    select_subset,
)
from .mapfile import load_map, load_selection, save_map, save_selection

__version__ = "1.0.0"

__all__ = [name for name in dir() if not name.startswith("_")]
