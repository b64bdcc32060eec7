"""Layers: dense/MLP heads and the continuous-filter convolution embedder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fragforge import kernels
from fragforge.chem import SYMBOLS, AtomCloud
from fragforge.neural import tensor as T
from fragforge.neural.tensor import Tensor


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0) -> np.ndarray:
    """(Semi-)orthogonal ``n_in x n_out`` matrix."""
    a = rng.normal(size=(max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q


class Module:
    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{prefix}{key}."))
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 gain: float = 1.0):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Tensor(orthogonal(rng, n_in, n_out, gain), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Dense expects {self.n_in} input features, got {x.shape[-1]}")
        y = T.matmul(x, self.weight)
        return y if self.bias is None else T.add(y, self.bias)


class MLP(Module):
    """Dense layers with ReLU between them and no activation on the output."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, hidden: int = 128,
                 depth: int = 2, out_gain: float = 1.0):
        dims = [n_in] + [hidden] * depth + [n_out]
        self.layers = [Dense(a, b, rng, gain=math.sqrt(2.0)) for a, b in zip(dims[:-2], dims[1:-1])]
        self.layers.append(Dense(dims[-2], dims[-1], rng, gain=out_gain))

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = T.relu(layer(x))
        return self.layers[-1](x)


def mlp_apply(mlp: MLP, x, rescale: tuple[float, float] | None = None) -> np.ndarray:
    """Evaluate ``mlp`` on a vector or row batch without recording gradients.

    With ``rescale=(lo, hi)`` outputs are squashed into ``[lo, hi]`` through a
    sigmoid, as the continuous-action heads do.
    """
    x = np.asarray(x, dtype=np.float64)
    with T.no_grad():
        out = mlp(Tensor(np.atleast_2d(x)))
        if rescale is not None:
            lo, hi = rescale
            out = T.add(lo, T.mul(hi - lo, T.sigmoid(out)))
    return out.data[0] if x.ndim == 1 else out.data


# -- radial features --------------------------------------------------------

def rbf_centers(n_basis: int = 64, cutoff: float = 5.0) -> tuple[np.ndarray, float]:
    mu = np.linspace(0.0, cutoff, n_basis)
    gamma = 1.0 / (2.0 * (mu[1] - mu[0]) ** 2)
    return mu, gamma


def rbf_expand(d, n_basis: int = 64, cutoff: float = 5.0) -> np.ndarray:
    """Gaussian expansion exp(-gamma (d - mu_k)^2) on evenly spaced centers in [0, cutoff]."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    mu, gamma = rbf_centers(n_basis, cutoff)
    return np.exp(-gamma * (d[..., None] - mu) ** 2)


def cosine_cutoff(d, cutoff: float = 5.0) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    return np.where(d < cutoff, 0.5 * (np.cos(np.pi * d / cutoff) + 1.0), 0.0)


@dataclass
class Graph:
    """Atoms of one or more clouds with their within-cutoff neighbour pairs."""

    species: np.ndarray   # (N,) element index
    src: np.ndarray       # (P,) receiving atom
    dst: np.ndarray       # (P,) sending atom
    dist: np.ndarray      # (P,)
    batch: np.ndarray     # (N,) cloud index per atom
    n_graphs: int

    @property
    def n_atoms(self) -> int:
        return len(self.species)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(np.bincount(self.batch, minlength=self.n_graphs))])


def cloud_graph(cloud: AtomCloud, cutoff: float = 5.0) -> Graph:
    src, dst, dist = kernels.radius_pairs(cloud.positions, cutoff)
    return Graph(cloud.element_indices, src, dst, dist, np.zeros(len(cloud), dtype=np.int64), 1)


def collate(graphs: list[Graph]) -> Graph:
    species, src, dst, dist, batch = [], [], [], [], []
    offset = 0
    for k, g in enumerate(graphs):
        species.append(g.species)
        src.append(g.src + offset)
        dst.append(g.dst + offset)
        dist.append(g.dist)
        batch.append(np.full(g.n_atoms, k, dtype=np.int64))
        offset += g.n_atoms
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa: E731
    return Graph(cat(species, np.int64), cat(src, np.int64), cat(dst, np.int64),
                 cat(dist, np.float64), cat(batch, np.int64), len(graphs))


@dataclass(frozen=True)
class EmbedderConfig:
    n_atom_basis: int = 64
    n_filters: int = 128
    n_interactions: int = 3
    cutoff: float = 5.0
    n_rbf: int = 64


class Interaction(Module):
    def __init__(self, cfg: EmbedderConfig, rng):
        self.filter1 = Dense(cfg.n_rbf, cfg.n_filters, rng)
        self.filter2 = Dense(cfg.n_filters, cfg.n_filters, rng)
        self.in2f = Dense(cfg.n_atom_basis, cfg.n_filters, rng, bias=False)
        self.f2out = Dense(cfg.n_filters, cfg.n_atom_basis, rng)
        self.dense = Dense(cfg.n_atom_basis, cfg.n_atom_basis, rng)

    def __call__(self, h: Tensor, graph: Graph, rbf: np.ndarray, fcut: np.ndarray) -> Tensor:
        w = self.filter2(T.shifted_softplus(self.filter1(T.Tensor(rbf))))
        w = T.mul(w, fcut[:, None])
        x = self.in2f(h)
        msg = T.mul(T.take(x, graph.dst), w)
        agg = T.segment_sum(msg, graph.src, graph.n_atoms)
        return self.dense(T.shifted_softplus(self.f2out(agg)))


class Embedder(Module):
    """Continuous-filter convolution network producing per-atom embeddings.

    Element embeddings are refined by residual interaction blocks whose filters
    are generated from Gaussian-expanded distances and smoothly switched off at
    the cutoff.  Inputs are distances only, so outputs are invariant to rigid
    motions and permute with the atoms.
    """

    def __init__(self, cfg: EmbedderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = Tensor(rng.normal(size=(len(SYMBOLS), cfg.n_atom_basis)), requires_grad=True)
        self.interactions = [Interaction(cfg, rng) for _ in range(cfg.n_interactions)]

    def __call__(self, graph: Graph) -> Tensor:
        rbf = rbf_expand(graph.dist, self.cfg.n_rbf, self.cfg.cutoff)
        fcut = cosine_cutoff(graph.dist, self.cfg.cutoff)
        h = T.take(self.embedding, graph.species)
        for block in self.interactions:
            h = T.add(h, block(h, graph, rbf, fcut))
        return h


def embed_atoms(cloud: AtomCloud, embedder: Embedder) -> np.ndarray:
    with T.no_grad():
        return embedder(cloud_graph(cloud, embedder.cfg.cutoff)).data
