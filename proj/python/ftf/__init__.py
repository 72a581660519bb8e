from ._core import (
    CalibrationCurve,
    ConfigError,
    ContractError,
    DegeneracyError,
    DomainError,
    Error,
    KeypointLayout,
    ParseError,
    control_linear,
    decode_rotation6d,
    encode_rotation6d,
    fit_calibration,
    kabsch,
    keypoints_to_pose,
    pose_to_keypoints,
    project,
    run_cli,
    triangulate,
)

__all__ = [
    "CalibrationCurve",
    "ConfigError",
    "ContractError",
    "DegeneracyError",
    "DomainError",
    "Error",
    "KeypointLayout",
    "ParseError",
    "control_linear",
    "decode_rotation6d",
    "encode_rotation6d",
    "fit_calibration",
    "kabsch",
    "keypoints_to_pose",
    "pose_to_keypoints",
    "project",
    "run_cli",
    "triangulate",
]
