"""Trajectory diffusion for sparsely detected targets.

Generates multimodal future-track hypotheses for one or more moving
targets from a sparse history of detections, with constraint-guided
sampling against motion and obstacle penalties, plus the simulator and
evaluation harness used to exercise the model end to end.
"""

__version__ = "0.1.0"
