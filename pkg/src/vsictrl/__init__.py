"""Robust single-loop voltage control toolkit for grid-forming inverters."""

from .lti import (
    FrequencyResponse,
    StateSpace,
    TransferFunction,
    c2d_tustin,
    feedback,
    freq_response,
    interconnect,
    parallel,
    poles,
    series,
    tf_to_ss,
)
from .synthesis import (
    GeneralizedPlant,
    RobustStabilityVerdict,
    SynthesisError,
    SynthesisReport,
    allpass_delta,
    balanced_truncate,
    close_lower,
    close_upper,
    hankel_singular_values,
    hinf_norm,
    hinfsyn,
    reduce_controller,
    robust_stability_check,
    solve_care,
    solve_lyapunov,
)
from .vsi import (
    ChannelScales,
    LoadModel,
    TargetReport,
    VsiParameters,
    WeightConfig,
    assemble_generalized_plant,
    build_plant,
    build_weights,
    closed_loop_targets,
    default_load,
    design_voltage_controller,
    nominal_load,
    perturbed_plant,
)

__version__ = "0.1.0"
