"""High-order social recommendation: GCN-style propagation over a social graph,
attentive layer aggregation, BPR training, and top-K evaluation."""
from .data import InteractionSet, EdgeList, SplitPair, load_dataset, split, synth_dataset
from .graph import SocialGraph, build_graph, korder_neighbors, propagation_matrix
from .model import ModelParams, forward, init_params
from .train import TrainConfig, train
from .evaluation import EvalReport, evaluate

__version__ = "0.1.0"
