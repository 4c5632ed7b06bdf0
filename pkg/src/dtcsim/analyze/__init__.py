"""Signal analysis: spectra, crystalline fraction, decay-rate and boundary fits."""
from .spectral import (
    AnalysisError,
    PeakHeightSeries,
    Spectrum,
    crystalline_fraction,
    peak_height_series,
    spectrum,
)
from .fitting import (
    BoundaryPoint,
    DecayRate,
    FitError,
    FitResult,
    NoiseFloor,
    RateHistogram,
    SaturationResult,
    asymmetric_gaussian,
    boundary_from_fit,
    estimate_noise_floor,
    fit_exponential,
    fit_quadratic_rate,
    fit_saturation,
    fit_stretched_exponential,
    fit_super_gaussian,
    late_time_decay_rate,
    mean_beta,
    phase_boundary,
    rate_histogram,
    saturation_curve,
    stretched_exponential,
    super_gaussian,
    trace_decay_rate,
)
