"""Double-helix PSF toolkit: mode engineering, Fourier-optics simulation,
synthetic data generation and 3D emitter localization."""

__version__ = "0.1.0"

from .lgmodes import (
    BeamGeometry,
    LGIndex,
    LGSuperposition,
    RotationLaw,
    check_rigid_rotation,
    lg_field,
    lg_normalization,
    rotation_angle,
    superposition_field,
    superposition_intensity,
    wrap_half_pi,
)
from .fourier_optics import (
    AliasingError,
    ComplexField,
    GridSpec,
    OpticalTrain,
    PSFStack,
    ZernikeTerm,
    dh_fidelity,
    dh_phase_mask,
    focal_shift,
    fresnel_propagate,
    holographic_lens_phase,
    ideal_pupil_field,
    propagate_to_image,
    psf_stack,
    pupil_field,
    zernike_phase,
    zernike_value,
)
from .ensemble_synth import (
    AtomSet,
    LatticeSpec,
    NoiseModel,
    hop_atoms,
    match_to_truth,
    sample_atoms,
    synthesize_frame,
)
from .localization import (
    Detection,
    DegenerateAngleError,
    DegenerateFitError,
    FitConvergenceError,
    LocalizationError,
    OutOfBranchError,
    PipelineConfig,
    find_peaks,
    fit_double_gaussian,
    localize_frame,
    pair_peaks,
    preprocess,
    radon_angle,
    z_from_angle,
)
from .calibration import (
    AnglePairDataset,
    CalibrationError,
    CalibrationResult,
    ModelDomainError,
    UnidentifiableError,
    fit_calibration,
    lattice_spectrum,
    make_angle_pairs,
    post_select,
    shifted_angle_model,
)
from .fisher import (
    FisherCurve,
    NormalizationError,
    StepSensitivityError,
    fisher_curves_dh,
    fisher_fundamental_analytic,
    fisher_numeric,
    fisher_numeric_mode,
)
from .aberration_study import (
    RotationCurve,
    RotationFit,
    ZernikeScanResult,
    fit_rotation_curve,
    fit_z_shift,
    measure_rotation_curve,
    na_scan,
    zernike_scan,
)
from .config import ConfigError, RunConfig, config_hash, load_config, save_config

__all__ = [
    "__version__",
    # lgmodes
    "BeamGeometry", "LGIndex", "LGSuperposition", "RotationLaw",
    "check_rigid_rotation", "lg_field", "lg_normalization", "rotation_angle",
    "superposition_field", "superposition_intensity", "wrap_half_pi",
    # fourier_optics
    "AliasingError", "ComplexField", "GridSpec", "OpticalTrain", "PSFStack",
    "ZernikeTerm", "dh_fidelity", "dh_phase_mask", "focal_shift",
    "fresnel_propagate", "holographic_lens_phase", "ideal_pupil_field",
    "propagate_to_image", "psf_stack", "pupil_field", "zernike_phase",
    "zernike_value",
    # ensemble_synth
    "AtomSet", "LatticeSpec", "NoiseModel", "hop_atoms", "match_to_truth",
    "sample_atoms", "synthesize_frame",
    # localization
    "Detection", "DegenerateAngleError", "DegenerateFitError",
    "FitConvergenceError", "LocalizationError", "OutOfBranchError",
    "PipelineConfig", "find_peaks", "fit_double_gaussian", "localize_frame",
    "pair_peaks", "preprocess", "radon_angle", "z_from_angle",
    # calibration
    "AnglePairDataset", "CalibrationError", "CalibrationResult",
    "ModelDomainError", "UnidentifiableError", "fit_calibration",
    "lattice_spectrum", "make_angle_pairs", "post_select", "shifted_angle_model",
    # fisher
    "FisherCurve", "NormalizationError", "StepSensitivityError",
    "fisher_curves_dh", "fisher_fundamental_analytic", "fisher_numeric",
    "fisher_numeric_mode",
    # aberration_study
    "RotationCurve", "RotationFit", "ZernikeScanResult", "fit_rotation_curve",
    "fit_z_shift", "measure_rotation_curve", "na_scan", "zernike_scan",
    # config
    "ConfigError", "RunConfig", "config_hash", "load_config", "save_config",
]
