"""tipcam: pose and tilt estimation from a camera embedded in a
robot tool tip, with a synthetic world to exercise the full
peek/pick/place/inspect loop.

The estimation stack is pure (geometry, masks, knobs, tilt); the
simulator owns all mutable state; servo and experiments drive the two
together. The teleop bridge (tipcam.teleop) is imported on demand so
the core stays light.
"""

from .configio import AppConfig, FitOptions, TeleopOptions, default_config, load_config, load_noise
from .errors import (
    CircleFitError,
    DegenerateMaskError,
    MaskFormatError,
    MotionError,
    ObservationError,
    PairingError,
    RenderError,
    TipcamError,
    WorldStateError,
)
from .geometry import (
    BrickSpec,
    CameraModel,
    PlanarOffset,
    TiltAngles,
    expected_knob_radius_px,
    mm_to_px,
    normalize_angle_deg,
    project_point,
    px_to_mm,
    rot2d,
    vec_yaw_deg,
)
from .knobs import (
    BoundingLines,
    FittedKnob,
    FitWeights,
    compute_offset,
    eval_cost,
    find_bounding_lines,
    fit_circle,
    fit_observation_masks,
    measure_planar_offset,
    select_target_pair,
)
from .masks import (
    KnobMask,
    Observation,
    ObservationProvider,
    ReplayProvider,
    decode_observation,
    encode_observation,
    read_observation,
    write_observation,
)
from .servo import (
    Calibration,
    InspectionReport,
    PhaseReport,
    ServoConfig,
    ServoReport,
    ServoRunner,
    ServoStep,
    TrialRecord,
    calibrate,
)
from .simworld import (
    NOISE_FREE,
    ZERO_OFFSET,
    ZERO_TILT,
    AttemptResult,
    Brick,
    NoiseModel,
    PairSite,
    SimulatorProvider,
    ToleranceModel,
    ToolPose,
    WorldConfig,
    WorldState,
    render_observation,
)
from .tilt import (
    ReflectionMeasurement,
    max_observable_tilt,
    reflection_target_site,
    tilt_from_reflection,
)

__version__ = "0.1.0"

__all__ = [
    "AppConfig",
    "AttemptResult",
    "BoundingLines",
    "Brick",
    "BrickSpec",
    "Calibration",
    "CameraModel",
    "CircleFitError",
    "DegenerateMaskError",
    "FitOptions",
    "FitWeights",
    "FittedKnob",
    "InspectionReport",
    "KnobMask",
    "MaskFormatError",
    "MotionError",
    "NOISE_FREE",
    "NoiseModel",
    "Observation",
    "ObservationError",
    "ObservationProvider",
    "PairSite",
    "PairingError",
    "PhaseReport",
    "PlanarOffset",
    "RenderError",
    "ReflectionMeasurement",
    "ReplayProvider",
    "ServoConfig",
    "ServoReport",
    "ServoRunner",
    "ServoStep",
    "SimulatorProvider",
    "TeleopOptions",
    "TiltAngles",
    "TipcamError",
    "ToleranceModel",
    "ToolPose",
    "TrialRecord",
    "WorldConfig",
    "WorldState",
    "ZERO_OFFSET",
    "ZERO_TILT",
    "calibrate",
    "compute_offset",
    "decode_observation",
    "default_config",
    "encode_observation",
    "eval_cost",
    "expected_knob_radius_px",
    "find_bounding_lines",
    "fit_circle",
    "fit_observation_masks",
    "load_config",
    "load_noise",
    "max_observable_tilt",
    "measure_planar_offset",
    "mm_to_px",
    "normalize_angle_deg",
    "project_point",
    "px_to_mm",
    "read_observation",
    "reflection_target_site",
    "rot2d",
    "select_target_pair",
    "tilt_from_reflection",
    "vec_yaw_deg",
    "write_observation",
]
