"""Synthetic multi-view hand/ultrasound-probe grasp frames and keypoint metrics."""

__version__ = "0.1.0"
