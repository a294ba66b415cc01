"""Dual-gyroscope rotational-extrinsics and scale-factor calibration."""

from .geometry import (
    nearest_orthonormal,
    rotation_error,
    scale_error,
    skew,
    so3_exp,
    so3_log,
)
from .preprocess import AlignedPairs, GyroStream, SelectionPolicy, align, center
from .direct import CalibrateOptions, CalibrationResult, calibrate
from .iterative import iterate_calibrate
from .analysis import mitigate_and_recalibrate

__all__ = [
    "AlignedPairs",
    "CalibrateOptions",
    "CalibrationResult",
    "GyroStream",
    "SelectionPolicy",
    "align",
    "calibrate",
    "center",
    "iterate_calibrate",
    "mitigate_and_recalibrate",
    "nearest_orthonormal",
    "rotation_error",
    "scale_error",
    "skew",
    "so3_exp",
    "so3_log",
]
