"""Learning calibration trajectories for visual-inertial rigs with model-based RL."""

__version__ = "0.1.0"
