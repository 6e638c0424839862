"""Satellite stereo photogrammetry pipeline.

Modules build on each other roughly in pipeline order: RPC geometry,
pair selection, feature matching, relative orientation with bias
compensation, least squares refinement, epipolar rectification, semi
global matching, DSM gridding, and evaluation against reference surfaces.
The harness ties the stages together over a manifest of image tiles.
"""

from .errors import (
    CoregistrationError,
    DegenerateGeometryError,
    EmptyOverlapError,
    InsufficientDataError,
    MatchFileError,
    NonConvergenceError,
    RectificationError,
    RpcDomainWarning,
    SatStereoError,
    SingularProjectionError,
    TexturelessPatchError,
    UndefinedMetricError,
)
from .frames import LocalFrame, meters_per_degree
from .rpc import (
    GroundPoint,
    ImagePoint,
    RpcModel,
    epipolar_curve,
    intersection_angle,
    inverse_project,
    load_rpc,
    point_to_curve_distance,
    save_rpc_json,
    save_rpc_text,
    triangulate,
    triangulate_arrays,
)
from .pairs import (
    ImageMeta,
    PairCandidate,
    SelectionConfig,
    enumerate_pairs,
    month_diff,
    rank_score,
    sun_angle_diff,
)
from .features import FeatureConfig, Keypoint, detect_and_describe
from .matching import (
    MatchSet,
    load_matches,
    match_ratio_test,
    ratio_test_indices,
    save_matches,
)
from .orientation import (
    BiasCorrection,
    Orientation,
    OrientationConfig,
    epipolar_error,
    load_orientation,
    ransac_bias,
    save_orientation,
)
from .lsm import LsmConfig, LsmResult, lsm_refine, refine_matchset
from .rectify import GroundRect, RectificationMap, rectify
from .sgm import DisparityMap, census_transform, cost_volume, sgm
from .dsm import DsmStats, GridSpec, dsm_from_disparity
from .rasters import DsmGrid, load_image, read_asc, save_image, write_asc
from .evaluation import (
    CoregResult,
    DsmEvaluation,
    completeness,
    coregister,
    dsm_rmse,
    evaluate_dsm,
    relative_change,
    resample_to_grid,
)
from .harness import RunConfig, aggregate, derive_seed, run_pipeline, tukey_five
from .synthetic import (
    RampFlatTerrain,
    SmoothTexture,
    affine_rpc,
    perspective_rpc,
    render_pair,
    render_view,
)

__version__ = "0.1.0"

__all__ = [
    "BiasCorrection",
    "CoregResult",
    "CoregistrationError",
    "DegenerateGeometryError",
    "DisparityMap",
    "DsmEvaluation",
    "DsmGrid",
    "DsmStats",
    "EmptyOverlapError",
    "FeatureConfig",
    "GridSpec",
    "GroundPoint",
    "GroundRect",
    "ImageMeta",
    "ImagePoint",
    "InsufficientDataError",
    "Keypoint",
    "LocalFrame",
    "LsmConfig",
    "LsmResult",
    "MatchFileError",
    "MatchSet",
    "NonConvergenceError",
    "Orientation",
    "OrientationConfig",
    "PairCandidate",
    "RampFlatTerrain",
    "RectificationError",
    "RectificationMap",
    "RpcDomainWarning",
    "RpcModel",
    "RunConfig",
    "SatStereoError",
    "SelectionConfig",
    "SingularProjectionError",
    "SmoothTexture",
    "TexturelessPatchError",
    "UndefinedMetricError",
    "affine_rpc",
    "aggregate",
    "census_transform",
    "completeness",
    "coregister",
    "cost_volume",
    "derive_seed",
    "detect_and_describe",
    "dsm_from_disparity",
    "dsm_rmse",
    "enumerate_pairs",
    "epipolar_curve",
    "epipolar_error",
    "evaluate_dsm",
    "intersection_angle",
    "inverse_project",
    "load_matches",
    "load_orientation",
    "load_rpc",
    "load_image",
    "lsm_refine",
    "match_ratio_test",
    "meters_per_degree",
    "month_diff",
    "perspective_rpc",
    "point_to_curve_distance",
    "rank_score",
    "ransac_bias",
    "ratio_test_indices",
    "read_asc",
    "rectify",
    "refine_matchset",
    "relative_change",
    "render_pair",
    "render_view",
    "resample_to_grid",
    "run_pipeline",
    "save_image",
    "save_matches",
    "save_orientation",
    "save_rpc_json",
    "save_rpc_text",
    "sgm",
    "sun_angle_diff",
    "triangulate",
    "triangulate_arrays",
    "tukey_five",
    "write_asc",
]
