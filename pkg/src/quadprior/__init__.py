"""Synthetic quadruped pose data tools.

A dense-network pose prior over joint angles with statistical pose filtering,
forward-kinematics keypoint annotation, boundary-map conditioning preparation
for an external diffusion model, and PCK / t-SNE evaluation utilities.
"""

__version__ = "0.1.0"
