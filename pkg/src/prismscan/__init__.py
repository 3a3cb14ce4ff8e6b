"""Rotating wedge-prism lidar scanning: simulation and analysis toolkit."""

from .se3 import Pose, Twist, exp_se3, log_se3, LogBranchError

__all__ = ["Pose", "Twist", "exp_se3", "log_se3", "LogBranchError"]

__version__ = "0.1.0"
