"""randflux: statistics of scalar conservation laws with random initial data.

The solution of w_t + H(w)_x = 0 for convex H is represented through the
Hopf-Lax/Lax-Oleinik minimization of g(y) + t L((x - y)/t) over y, where
g is the integral of the initial data and L the convex conjugate of H.
For polygonal H the minimization is finite-dimensional, and with
Gaussian-process data the location and value statistics of the minimizer
(segment probabilities, expected solution, minimum cdfs, shock
densities) have closed forms evaluated here by nested quadrature, with
seeded Monte Carlo and finite-difference twins for every quantity.
"""

__version__ = "0.1.0"

from .flux_calculus import (
    FluxSpec,
    LegendreTransform,
    eval_shifted,
    legendre,
    polygonalize,
)
from .process_models import (
    CovarianceModel,
    DyadicWalk,
    ProcessSpec,
    build_covariance_model,
    build_joint_model,
    covariance,
    cross_covariance,
    discretize_bm,
    sample_joint,
    sup_integral_difference,
)
from .hopf_lax_core import (
    MinimizerLocation,
    MinimizerResult,
    SamplePath,
    ScanProfile,
    VariationalGrid,
    build_grid,
    make_sample_path,
    sample_path_from_callables,
    scan_x,
    solve_path,
    solve_power_law,
)
from .probability_engine import (
    CdfCurve,
    ConvergenceTable,
    MonotonicityTable,
    SegmentProbabilities,
    ShockDensityResult,
    SpectrumReport,
    TruncatedSpectrumResult,
    VarianceLawResult,
    class_labels,
    convergence_study,
    expected_solution,
    minimum_cdf,
    segment_probabilities_mc,
    segment_probabilities_quadrature,
    shock_density,
    shock_monotonicity_study,
    spectrum_report,
    truncated_spectrum_probability,
    variance_law,
)
from .fd_oracle import (
    EnsembleComparison,
    FdComparison,
    FdConfig,
    cell_centers,
    compare_with_hopf_lax,
    evolve,
)

__all__ = [
    "__version__",
    "FluxSpec",
    "LegendreTransform",
    "eval_shifted",
    "legendre",
    "polygonalize",
    "CovarianceModel",
    "DyadicWalk",
    "ProcessSpec",
    "build_covariance_model",
    "build_joint_model",
    "covariance",
    "cross_covariance",
    "discretize_bm",
    "sample_joint",
    "sup_integral_difference",
    "MinimizerLocation",
    "MinimizerResult",
    "SamplePath",
    "ScanProfile",
    "VariationalGrid",
    "build_grid",
    "make_sample_path",
    "sample_path_from_callables",
    "scan_x",
    "solve_path",
    "solve_power_law",
    "CdfCurve",
    "ConvergenceTable",
    "MonotonicityTable",
    "SegmentProbabilities",
    "ShockDensityResult",
    "SpectrumReport",
    "TruncatedSpectrumResult",
    "VarianceLawResult",
    "class_labels",
    "convergence_study",
    "expected_solution",
    "minimum_cdf",
    "segment_probabilities_mc",
    "segment_probabilities_quadrature",
    "shock_density",
    "shock_monotonicity_study",
    "spectrum_report",
    "truncated_spectrum_probability",
    "variance_law",
    "EnsembleComparison",
    "FdComparison",
    "FdConfig",
    "cell_centers",
    "compare_with_hopf_lax",
    "evolve",
]
