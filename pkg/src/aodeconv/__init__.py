"""Blind deconvolution of adaptive-optics images.

Joint recovery of a sharp object and the full PSF (core and faint
wings) from a single frame, with robust weighting that pushes moons,
cosmic rays and defective pixels into the residual map.
"""

from .corefit import CoreFitResult, core_cost, fit_core, simplex_search
from .deconv import (
    DeconvConfig,
    RobustConfig,
    cauchy_rho,
    cauchy_weight,
    deconvolve_object,
    deconvolve_psf,
    reg_obj_cost_grad,
    reg_psf_cost_grad,
    robust_cost,
    vmlmb_minimize,
    wls_cost_grad,
)
from .image import (
    connected_component_of,
    convolve,
    dilate,
    finite_diff,
    grid_center,
    median_filter,
    shift_image,
    threshold_mask,
)
from .imgio import read_img1, write_img1, write_pgm
from .moffat import MoffatParams, fit_moffat_to_image, moffat_eval, radial_profile
from .noise import (
    ArcStats,
    NoiseModel,
    arc_statistics,
    fit_noise_model,
    robust_affine_fit,
    weights_from_intensity,
)
from .pipeline import (
    PipelineResult,
    RecoveryMetrics,
    SegmentationConfig,
    apply_outlier_exclusion,
    evaluate_recovery,
    halo_residuals,
    run_pipeline,
    save_pipeline_result,
    segment_object,
    update_robust_weights,
)
from .simulate import (
    NuisanceSpec,
    SyntheticPsfSpec,
    TruthBundle,
    make_dataset,
    make_synthetic_psf,
    reference_configs,
    reference_scenario,
    save_truth_bundle,
)

__version__ = "0.1.0"
