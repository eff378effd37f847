"""Transfer learning for slope estimation in functional linear regression.

Core surface: grid-based functional data (`funcore`), the two-step
transfer estimator and target-only baseline (`regress`), cross-validated
tuning (`modelsel`), adaptive source selection with sparse or
Q-aggregation (`adaptive`), synthetic benchmark generators (`synth`), CSV
ingestion (`dataio`), and the Monte Carlo harness (`bench`).
"""

from .adaptive import (
    AggregationResult,
    CandidateSets,
    QAggWeights,
    SplitSpec,
    adaptive_fit,
    build_candidate_sets,
    q_aggregate,
    sparse_aggregate,
    zeta_statistic,
)
from .bench import ResultRow, RunConfig, run_benchmark, run_realdata
from .dataio import (
    load_curves_csv,
    load_sector_dataset,
    load_stock_csv,
    save_curves_csv,
    stock_transform,
)
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    IllConditionedError,
    InvariantError,
    ParseError,
    TlflrError,
    ValidationError,
)
from .funcore import (
    CovMatrix,
    EigenSystem,
    FunctionalDataset,
    Grid,
    GridFunction,
    ScoreMatrix,
    compute_scores,
    covariance_estimate,
    eigendecompose,
    inner_product,
    mean_function,
    pooled_covariance,
    source_weights,
)
from .modelsel import CVConfig, CVReport, cross_validate, make_folds
from .regress import (
    LassoSolution,
    SlopeEstimate,
    fit_flr,
    fit_initial,
    fit_tlflr,
    lasso_cd,
    predict,
    soft_threshold,
)
from .synth import (
    SourceInfo,
    SyntheticConfig,
    SyntheticTruth,
    cosine_basis,
    generate_sources,
    generate_target,
    haar_basis,
    mise,
    sample_scores,
    slope_coefficients,
)

__version__ = "0.1.0"
