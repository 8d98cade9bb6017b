"""Continuous space-time video super-resolution."""

from .checkpoint import Checkpoint
from .data import FrameSequence, degrade, ground_truth, ingest
from .estimator import BicubicBaseline, SpaceTimeSR
from .model import STVSRNet, output_plan
from .pipeline import evaluate, pseudo_dump, run_inference, train
from .profiling import profile_memory

__all__ = [
    "BicubicBaseline", "Checkpoint", "FrameSequence", "STVSRNet", "SpaceTimeSR",
    "degrade", "evaluate", "ground_truth", "ingest", "output_plan", "profile_memory",
    "pseudo_dump", "run_inference", "train",
]
