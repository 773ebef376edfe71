"""MPPI path tracking for a kinematic bicycle, with per-sample influence
estimated by datamodels and predicted online by a small network."""

__version__ = "0.1.0"
