"""Hierarchical actor (and critic head) over fragment-placement actions.

Sub-actions are drawn in order: a hydrogen on the molecule, a fragment from
the multiset, a hydrogen on that fragment, then the bond distance, the
absolute torsion and its sign.  The joint log-probability is the sum of the
six head terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fragforge.chem import FragmentMultiset, anchorable_hydrogens
from fragforge.env import DISTANCE_RANGE, Action, EnvState
from fragforge.neural import tensor as T
from fragforge.neural.nn import MLP, Embedder, EmbedderConfig, Graph, Module, cloud_graph, collate
from fragforge.neural.tensor import Tensor

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class PolicyError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 128
    depth: int = 2
    multiset_dim: int = 64
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    sigma_d: float = 0.05
    sigma_phi: float = 0.2
    distance_range: tuple[float, float] = DISTANCE_RANGE
    head_gain: float = 0.01
    max_rejections: int = 100


@dataclass
class Observation:
    """Distance-only view of a state: what the networks actually consume."""

    graph: Graph
    h_mask: np.ndarray
    counts: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.graph.n_atoms


def observe(state: EnvState, cutoff: float = 5.0) -> Observation:
    if state.done:
        raise PolicyError("terminal state cannot be observed for acting")
    return Observation(cloud_graph(state.molecule, cutoff), anchorable_hydrogens(state.molecule),
                       np.array(state.remaining, dtype=np.float64))


@dataclass
class SampledAction:
    action: Action
    log_prob: float
    head_log_probs: dict[str, float]
    value: float = 0.0


@dataclass
class Evaluation:
    log_prob: Tensor
    entropy: Tensor
    value: Tensor
    heads: dict[str, Tensor]


def _normal_logpdf(x, mean: Tensor, sigma: float) -> Tensor:
    z = T.mul(T.sub(x, mean), 1.0 / sigma)
    return T.sub(T.mul(T.square(z), -0.5), math.log(sigma) + _LOG_SQRT_2PI)


def _sample_truncated(rng: np.random.Generator, mean: float, sigma: float, lo: float, hi: float,
                      tries: int) -> float:
    for _ in range(tries):
        x = rng.normal(mean, sigma)
        if lo <= x <= hi:
            return float(x)
    return float(np.clip(rng.normal(mean, sigma), lo, hi))


def _sample_index(rng: np.random.Generator, logp: np.ndarray) -> int:
    p = np.exp(logp)
    c = np.cumsum(p)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    k = min(k, len(p) - 1)
    while p[k] == 0.0:  # never land on a masked entry through rounding at the edges
        k -= 1
    return k


class PolicyNet(Module):
    """Actor heads plus the value head, sharing the molecule embedder.

    Parameters are tied to one fragment library because the fragment head has
    one logit per library entry and ``x_f`` is a one-hot over the library.
    """

    def __init__(self, library: FragmentMultiset, config: PolicyConfig | None = None, seed: int = 0):
        cfg = config or PolicyConfig()
        self.config = cfg
        self.library = library
        m = len(library)
        self.n_fragments = m
        rng = np.random.default_rng(seed)
        e = cfg.embedder.n_atom_basis
        kw = dict(hidden=cfg.hidden, depth=cfg.depth)
        self.molnet = Embedder(cfg.embedder, rng)
        self.fragnet = Embedder(cfg.embedder, rng)
        self.mlp_multiset = MLP(m, cfg.multiset_dim, rng, out_gain=1.0, **kw)
        self.mlp_atom = MLP(e + cfg.multiset_dim, 1, rng, out_gain=cfg.head_gain, **kw)
        self.mlp_fragment = MLP(e + cfg.multiset_dim, m, rng, out_gain=cfg.head_gain, **kw)
        cont_in = 2 * e + cfg.multiset_dim + m
        self.mlp_frag_atom = MLP(cont_in, 1, rng, out_gain=cfg.head_gain, **kw)
        self.mlp_distance = MLP(cont_in, 1, rng, out_gain=cfg.head_gain, **kw)
        self.mlp_angle = MLP(cont_in, 1, rng, out_gain=cfg.head_gain, **kw)
        self.mlp_sign = MLP(cont_in, 1, rng, out_gain=cfg.head_gain, **kw)
        self.mlp_value = MLP(e + cfg.multiset_dim, 1, rng, out_gain=1.0, **kw)
        frags = library.fragments
        self._lib_graph = collate([cloud_graph(f.cloud, cfg.embedder.cutoff) for f in frags])
        sizes = np.array([len(f.cloud) for f in frags])
        self._lib_offsets = np.concatenate([[0], np.cumsum(sizes)])
        self._lib_masks = [f.anchor_mask for f in frags]
        self._onehot = np.eye(m)

    # -- staged computation shared by sampling and evaluation ---------------

    def _encode(self, obs: list[Observation]):
        graph = collate([o.graph for o in obs])
        h_v = self.molnet(graph)
        counts = np.stack([o.counts for o in obs])
        h_set = self.mlp_multiset(Tensor(counts))
        return graph, h_v, h_set, counts

    def _atom_logp(self, graph: Graph, h_v: Tensor, h_set: Tensor, mask: np.ndarray) -> Tensor:
        feats = T.concat([h_v, T.take(h_set, graph.batch)], axis=1)
        logits = T.reshape(self.mlp_atom(feats), (graph.n_atoms,))
        return T.segment_log_softmax(logits, graph.batch, graph.n_graphs, mask)

    def _fragment_logp(self, h_vm: Tensor, h_set: Tensor, counts: np.ndarray) -> Tensor:
        b, m = counts.shape
        logits = T.reshape(self.mlp_fragment(T.concat([h_vm, h_set], axis=1)), (b * m,))
        seg = np.repeat(np.arange(b), m)
        return T.segment_log_softmax(logits, seg, b, (counts > 0).reshape(-1))

    def _fragment_atoms(self, frag_idx: np.ndarray):
        idx = [np.arange(self._lib_offsets[f], self._lib_offsets[f + 1]) for f in frag_idx]
        seg = np.concatenate([np.full(len(ix), k) for k, ix in enumerate(idx)]).astype(np.int64)
        mask = np.concatenate([self._lib_masks[f] for f in frag_idx])
        starts = np.concatenate([[0], np.cumsum([len(ix) for ix in idx])])
        return np.concatenate(idx), seg, mask, starts

    def _frag_atom_logp(self, h_lib: Tensor, frag_idx, h_vm, h_set):
        lib_idx, seg, mask, starts = self._fragment_atoms(frag_idx)
        h_u = T.take(h_lib, lib_idx)
        xf = self._onehot[frag_idx]
        feats = T.concat([h_u, T.take(h_vm, seg), T.take(h_set, seg), Tensor(xf[seg])], axis=1)
        logits = T.reshape(self.mlp_frag_atom(feats), (len(lib_idx),))
        logp = T.segment_log_softmax(logits, seg, len(frag_idx), mask)
        return logp, h_u, starts

    def _continuous(self, h_uf: Tensor, h_vm: Tensor, h_set: Tensor, frag_idx):
        b = len(frag_idx)
        feats = T.concat([h_uf, h_vm, h_set, Tensor(self._onehot[frag_idx])], axis=1)
        lo, hi = self.config.distance_range
        mean_d = T.add(lo, T.mul(hi - lo, T.sigmoid(T.reshape(self.mlp_distance(feats), (b,)))))
        mean_phi = T.mul(math.pi, T.sigmoid(T.reshape(self.mlp_angle(feats), (b,))))
        sign_logit = T.reshape(self.mlp_sign(feats), (b,))
        return mean_d, mean_phi, sign_logit

    def _value(self, graph: Graph, h_v: Tensor, h_set: Tensor) -> Tensor:
        pooled = T.segment_sum(h_v, graph.batch, graph.n_graphs)
        return T.reshape(self.mlp_value(T.concat([pooled, h_set], axis=1)), (graph.n_graphs,))

    def _check(self, obs: list[Observation]):
        for o in obs:
            if not o.h_mask.any():
                raise PolicyError("state has no anchorable hydrogen on the molecule")
            if not (o.counts > 0).any():
                raise PolicyError("fragment multiset is exhausted")

    # -- public API ---------------------------------------------------------

    def evaluate(self, obs: list[Observation], actions: list[Action]) -> Evaluation:
        """Log-probabilities, categorical entropy and values for a batch (differentiable)."""
        self._check(obs)
        graph, h_v, h_set, counts = self._encode(obs)
        b, m = counts.shape
        offsets = graph.offsets
        v_idx = np.array([offsets[k] + a.mol_h for k, a in enumerate(actions)])
        f_idx = np.array([a.fragment for a in actions], dtype=np.int64)
        mask_v = np.concatenate([o.h_mask for o in obs])
        if not mask_v[v_idx].all() or not (counts[np.arange(b), f_idx] > 0).all():
            raise PolicyError("action selects a masked atom or an exhausted fragment")

        logp_v_all = self._atom_logp(graph, h_v, h_set, mask_v)
        h_vm = T.take(h_v, v_idx)
        logp_f_all = self._fragment_logp(h_vm, h_set, counts)
        h_lib = self.fragnet(self._lib_graph)
        logp_u_all, h_u, starts = self._frag_atom_logp(h_lib, f_idx, h_vm, h_set)
        lib_idx, seg, mask_u, _ = self._fragment_atoms(f_idx)
        u_idx = np.array([starts[k] + a.frag_h for k, a in enumerate(actions)])
        if not mask_u[u_idx].all():
            raise PolicyError("action selects a masked fragment atom")
        mean_d, mean_phi, sign_logit = self._continuous(T.take(h_u, u_idx), h_vm, h_set, f_idx)

        d = np.array([a.distance for a in actions])
        phi = np.array([a.phi_abs for a in actions])
        sgn = np.array([a.sign for a in actions], dtype=np.float64)
        heads = {
            "atom": T.take(logp_v_all, v_idx),
            "fragment": T.take(logp_f_all, np.arange(b) * m + f_idx),
            "fragment_atom": T.take(logp_u_all, u_idx),
            "distance": _normal_logpdf(d, mean_d, self.config.sigma_d),
            "angle": _normal_logpdf(phi, mean_phi, self.config.sigma_phi),
            "sign": T.log_sigmoid(T.mul(sign_logit, sgn)),
        }
        total = heads["atom"]
        for key in ("fragment", "fragment_atom", "distance", "angle", "sign"):
            total = T.add(total, heads[key])
        entropy = T.segment_entropy(logp_v_all, graph.batch, b, mask_v)
        entropy = T.add(entropy, T.segment_entropy(logp_f_all, np.repeat(np.arange(b), m), b,
                                                   (counts > 0).reshape(-1)))
        entropy = T.add(entropy, T.segment_entropy(logp_u_all, seg, b, mask_u))
        value = self._value(graph, h_v, h_set)
        return Evaluation(total, entropy, value, heads)

    def act(self, obs: list[Observation], rngs: list[np.random.Generator]) -> list[SampledAction]:
        """Sample one action per observation, each with its own generator."""
        self._check(obs)
        cfg = self.config
        lo, hi = cfg.distance_range
        with T.no_grad():
            graph, h_v, h_set, counts = self._encode(obs)
            b, m = counts.shape
            offsets = graph.offsets
            mask_v = np.concatenate([o.h_mask for o in obs])
            logp_v = self._atom_logp(graph, h_v, h_set, mask_v).data
            v_loc = [_sample_index(rngs[k], logp_v[offsets[k]:offsets[k + 1]]) for k in range(b)]
            v_idx = offsets[:-1] + np.array(v_loc)
            h_vm = T.take(h_v, v_idx)
            logp_f = self._fragment_logp(h_vm, h_set, counts).data.reshape(b, m)
            f_idx = np.array([_sample_index(rngs[k], logp_f[k]) for k in range(b)], dtype=np.int64)
            h_lib = self.fragnet(self._lib_graph)
            logp_u, h_u, starts = self._frag_atom_logp(h_lib, f_idx, h_vm, h_set)
            logp_u = logp_u.data
            u_loc = [_sample_index(rngs[k], logp_u[starts[k]:starts[k + 1]]) for k in range(b)]
            u_idx = starts[:-1] + np.array(u_loc)
            mean_d, mean_phi, sign_logit = self._continuous(T.take(h_u, u_idx), h_vm, h_set, f_idx)
            value = self._value(graph, h_v, h_set).data
        out = []
        for k in range(b):
            rng = rngs[k]
            d = _sample_truncated(rng, mean_d.data[k], cfg.sigma_d, lo, hi, cfg.max_rejections)
            phi = _sample_truncated(rng, mean_phi.data[k], cfg.sigma_phi, 0.0, math.pi, cfg.max_rejections)
            p_plus = float(np.exp(-np.logaddexp(0.0, -sign_logit.data[k])))
            sign = 1 if rng.random() < p_plus else -1
            l = sign * sign_logit.data[k]
            heads = {
                "atom": float(logp_v[v_idx[k]]),
                "fragment": float(logp_f[k, f_idx[k]]),
                "fragment_atom": float(logp_u[u_idx[k]]),
                "distance": float(-0.5 * ((d - mean_d.data[k]) / cfg.sigma_d) ** 2
                                  - math.log(cfg.sigma_d) - _LOG_SQRT_2PI),
                "angle": float(-0.5 * ((phi - mean_phi.data[k]) / cfg.sigma_phi) ** 2
                               - math.log(cfg.sigma_phi) - _LOG_SQRT_2PI),
                "sign": float(-np.logaddexp(0.0, -l)),
            }
            action = Action(int(v_loc[k]), int(f_idx[k]), int(u_loc[k]), d, phi, sign)
            out.append(SampledAction(action, sum(heads.values()), heads, float(value[k])))
        return out

    def values(self, obs: list[Observation]) -> np.ndarray:
        with T.no_grad():
            graph, h_v, h_set, _ = self._encode(obs)
            return self._value(graph, h_v, h_set).data

    def value_tensor(self, obs: list[Observation]) -> Tensor:
        graph, h_v, h_set, _ = self._encode(obs)
        return self._value(graph, h_v, h_set)

    # -- per-head distributions for inspection ------------------------------

    def molecule_hydrogen_distribution(self, obs: Observation) -> np.ndarray:
        if not obs.h_mask.any():
            raise PolicyError("no anchorable hydrogen on the molecule")
        with T.no_grad():
            graph, h_v, h_set, _ = self._encode([obs])
            return np.exp(self._atom_logp(graph, h_v, h_set, obs.h_mask).data)

    def fragment_distribution(self, obs: Observation, mol_h: int) -> np.ndarray:
        if not (obs.counts > 0).any():
            raise PolicyError("fragment multiset is exhausted")
        with T.no_grad():
            graph, h_v, h_set, counts = self._encode([obs])
            return np.exp(self._fragment_logp(T.take(h_v, [mol_h]), h_set, counts).data)

    def fragment_hydrogen_distribution(self, obs: Observation, mol_h: int, fragment: int) -> np.ndarray:
        with T.no_grad():
            graph, h_v, h_set, _ = self._encode([obs])
            h_lib = self.fragnet(self._lib_graph)
            logp, _, _ = self._frag_atom_logp(h_lib, np.array([fragment]), T.take(h_v, [mol_h]), h_set)
            return np.exp(logp.data)

    def continuous_parameters(self, obs: Observation, mol_h: int, fragment: int,
                              frag_h: int) -> tuple[float, float, float]:
        """(mean distance, mean |phi|, probability of a positive sign)."""
        with T.no_grad():
            graph, h_v, h_set, _ = self._encode([obs])
            h_lib = self.fragnet(self._lib_graph)
            start = self._lib_offsets[fragment]
            h_uf = T.take(h_lib, [start + frag_h])
            md, mp, sl = self._continuous(h_uf, T.take(h_v, [mol_h]), h_set, np.array([fragment]))
        return float(md.data[0]), float(mp.data[0]), float(1.0 / (1.0 + np.exp(-sl.data[0])))


def sample_action(state: EnvState, policy: PolicyNet, rng: np.random.Generator) -> SampledAction:
    return policy.act([observe(state, policy.config.embedder.cutoff)], [rng])[0]


def evaluate_action(state: EnvState, policy: PolicyNet, action: Action) -> tuple[float, float]:
    """(log-probability, categorical entropy) of ``action`` in ``state``."""
    with T.no_grad():
        ev = policy.evaluate([observe(state, policy.config.embedder.cutoff)], [action])
    return float(ev.log_prob.data[0]), float(ev.entropy.data[0])
