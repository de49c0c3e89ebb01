"""windfuse: probabilistic wind-speed forecasting on top of NWP output.

A hierarchical space-time Gaussian model ties gridded forecast output to
station measurements: the forecast layer gets its own mean/covariance,
stations get a conditional layer whose mean is a learned linear image of
the forecast block.  The package covers the whole loop — data ingest,
power transform, exact likelihood, quasi-Newton fitting, kriging-style
prediction, scenario sampling, and forecast verification — plus a CLI.
"""

__version__ = "0.1.0"

from .core import (BoxCoxSpec, DayBlock, Panel, PanelFormatError,
                   StationMeta, block_slice, complete_block_indices,
                   devectorize, read_panel, vectorize, write_panel)
from .estimate import (BfgsResult, FitResult, StdErrResult,
                       finite_diff_hessian, fit_mle, init_least_squares,
                       minimize_bfgs, standard_errors)
from .ingest import (build_obs_panel, cluster_stations, parse_asos_minute,
                     parse_speed_csv, read_nwp_csv, read_station_csv)
from .likelihood import numerical_gradient, per_block_logliks, total_loglik
from .model import (CovarianceMatrix, Geometry, JointMoments,
                    SingularModelError, assemble_joint, build_A,
                    build_lambda, cov_marginal, gamma_matrix,
                    harmonic_basis, mean_cond_vector, mean_nwp_vector)
from .params import (CondMeanParams, CovParams, MeanParams, ModelStructure,
                     Theta, ThetaCodec, read_theta, write_theta)
from .pipeline import (PipelineResult, RotationPlan, rolling_thirds,
                       run_pipeline, subset_blocks)
from .predict import (PredictiveDistribution, ScenarioSet,
                      conditional_forecast, extend_for_stations, krige,
                      predictive_mean_forecast, read_scenarios,
                      sample_scenarios, write_scenarios)
from .synth import make_test_geometry, random_theta, simulate_panel
from .transform import (boxcox, default_lambda_grid, detransform_values,
                        estimate_lambda, inv_boxcox, transform_panel)
from .verify import (RankHistogram, ScoreReport, average_periodogram, dss,
                     empirical_st_correlation, energy_score, periodogram,
                     rank_histogram, read_score_report, rmse,
                     variogram_score, write_score_report)

__all__ = [
    "__version__",
    # core
    "BoxCoxSpec", "DayBlock", "Panel", "PanelFormatError", "StationMeta",
    "block_slice", "complete_block_indices", "devectorize", "read_panel",
    "vectorize", "write_panel",
    # params
    "CondMeanParams", "CovParams", "MeanParams", "ModelStructure", "Theta",
    "ThetaCodec", "read_theta", "write_theta",
    # model
    "CovarianceMatrix", "Geometry", "JointMoments", "SingularModelError",
    "assemble_joint", "build_A", "build_lambda", "cov_marginal",
    "gamma_matrix", "harmonic_basis", "mean_cond_vector",
    "mean_nwp_vector",
    # likelihood
    "numerical_gradient", "per_block_logliks", "total_loglik",
    # transform
    "boxcox", "default_lambda_grid", "detransform_values",
    "estimate_lambda", "inv_boxcox", "transform_panel",
    # ingest
    "build_obs_panel", "cluster_stations", "parse_asos_minute",
    "parse_speed_csv", "read_nwp_csv", "read_station_csv",
    # estimate
    "BfgsResult", "FitResult", "StdErrResult", "finite_diff_hessian",
    "fit_mle", "init_least_squares", "minimize_bfgs", "standard_errors",
    # predict
    "PredictiveDistribution", "ScenarioSet", "conditional_forecast",
    "extend_for_stations", "krige", "predictive_mean_forecast",
    "read_scenarios", "sample_scenarios", "write_scenarios",
    # synth
    "make_test_geometry", "random_theta", "simulate_panel",
    # verify
    "RankHistogram", "ScoreReport", "average_periodogram", "dss",
    "empirical_st_correlation", "energy_score", "periodogram",
    "rank_histogram", "read_score_report", "rmse", "variogram_score",
    "write_score_report",
    # pipeline
    "PipelineResult", "RotationPlan", "rolling_thirds", "run_pipeline",
    "subset_blocks",
]
