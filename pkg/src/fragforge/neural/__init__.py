"""Minimal differentiable core: tensors, layers, embedder, optimizer, checkpoints."""
from fragforge.neural.io import CheckpointError, load_params, read_checkpoint, save_params
from fragforge.neural.nn import (
    MLP, Dense, Embedder, EmbedderConfig, Graph, Module, cloud_graph, collate, cosine_cutoff,
    embed_atoms, mlp_apply, orthogonal, rbf_expand,
)
from fragforge.neural.optim import Adam, clip_grad_norm
from fragforge.neural.tensor import Tensor, backward, no_grad

__all__ = [
    "Adam", "CheckpointError", "Dense", "Embedder", "EmbedderConfig", "Graph", "MLP", "Module",
    "Tensor", "backward", "clip_grad_norm", "cloud_graph", "collate", "cosine_cutoff",
    "embed_atoms", "load_params", "mlp_apply", "no_grad", "orthogonal", "rbf_expand",
    "read_checkpoint", "save_params",
]
