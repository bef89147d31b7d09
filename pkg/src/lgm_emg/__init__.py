"""Laplacian-Gaussian mixture modelling of sEMG amplitude distributions."""

__version__ = "0.1.0"

from .analysis import ParameterTable, TrendSeries, aggregate, gamma_L, rho_L, slope_f_test  # noqa: E402
from .empirical import EmpiricalPdf, HistogramConfig, bin_model, build_histogram  # noqa: E402
from .metrics import LrtResult, area_difference, chi_square_sf, kl_divergence, likelihood_ratio_test  # noqa: E402
from .models import (  # noqa: E402
    EmConfig,
    Family,
    FitResult,
    GaussianParams,
    LaplacianParams,
    LgmParams,
    ScaleMixtureParams,
    fit_gaussian_mle,
    fit_laplacian_mle,
    fit_lgm_em,
    fit_sm_em,
    lgm_pdf,
    log_likelihood,
    sm_pdf,
)
from .recording import (  # noqa: E402
    SampleSeries,
    Segment,
    SegmentationConfig,
    TrialMetadata,
    extract_segment,
    load_recording,
    segment_action,
)
from .synth import TrialProfile, make_trial, sample_lgm, sample_sm  # noqa: E402
