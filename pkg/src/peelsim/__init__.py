"""Soft-body dressing peeling simulator with an MPC trajectory optimizer."""
from .scene import SceneConfig, build_scene
from .sim import ConstraintSet, ParticleSystem, SolverParams, step

__all__ = ["SceneConfig", "build_scene", "ConstraintSet", "ParticleSystem", "SolverParams", "step"]
__version__ = "0.1.0"
