"""Quadcopter drone-racing simulator and RL training/evaluation toolkit."""

from .params import ModelParams, load_params, save_params
from .track import Gate, Track, default_figure8, load_track, save_track
from .dynamics import QuadState, integrate_step, state_derivative
from .env import RaceEnv, VecRaceEnv, DoneReason
from .policy import Policy
from .ppo import PpoConfig, train

__all__ = [
    "ModelParams", "load_params", "save_params",
    "Gate", "Track", "default_figure8", "load_track", "save_track",
    "QuadState", "integrate_step", "state_derivative",
    "RaceEnv", "VecRaceEnv", "DoneReason",
    "Policy", "PpoConfig", "train",
]

__version__ = "0.1.0"
