"""Graph-based reward models and multi-objective A2-threshold tuning on a synthetic cellular network."""

from .actions import ActionGrid, ActionPlan, recommend
from .config import ExperimentConfig, load_config
from .network import NetworkGraph, SyntheticNetworkConfig, build_graph, generate_synthetic
from .reward import RewardModels, TrainConfig, train
from .simulator import Simulator, SimulatorConfig

__version__ = "0.1.0"

__all__ = [
    "ActionGrid", "ActionPlan", "ExperimentConfig", "NetworkGraph", "RewardModels", "Simulator",
    "SimulatorConfig", "SyntheticNetworkConfig", "TrainConfig", "build_graph", "generate_synthetic",
    "load_config", "recommend", "train",
]
