"""Fragment-placement MDP: reset, legality masks and deterministic steps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fragforge.chem import AtomCloud, FragmentMultiset, anchorable_hydrogens
from fragforge.energy import EnergyBackend, EnergyError, step_reward
from fragforge.geometry import AnchorPair, GeometryError, attach_fragment, min_cross_distance

PENALTY_REWARD = -10.0
MIN_CONTACT = 0.6
MAX_CONTACT = 2.0
DISTANCE_RANGE = (1.10, 2.10)


class EnvError(RuntimeError):
    pass


class IllegalActionError(EnvError):
    """Action violates the masks; a caller bug, distinct from the placement penalty."""


@dataclass(frozen=True)
class Action:
    mol_h: int
    fragment: int
    frag_h: int
    distance: float
    phi_abs: float
    sign: int

    @property
    def phi(self) -> float:
        return self.sign * self.phi_abs


@dataclass(frozen=True, eq=False)
class EnvState:
    molecule: AtomCloud
    multiset: FragmentMultiset
    step: int = 0
    done: bool = False
    reason: str | None = None

    @property
    def remaining(self) -> tuple[int, ...]:
        return self.multiset.remaining

    @property
    def horizon(self) -> int:
        return self.step + sum(self.remaining)

    @property
    def episode_length(self) -> int:
        """Fragments in the molecule, counting the starting block placed by reset."""
        return self.step + 1


@dataclass
class StepOutcome:
    state: EnvState
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Masks:
    molecule: np.ndarray
    fragments: np.ndarray
    fragment_hydrogens: tuple[np.ndarray, ...]


def _centered(cloud: AtomCloud) -> AtomCloud:
    heavy = ~cloud.is_hydrogen
    ref = cloud.positions[heavy] if heavy.any() else cloud.positions
    return cloud.with_positions(cloud.positions - ref.mean(axis=0))


def reset(ms: FragmentMultiset, start="random", seed: int | None = None) -> EnvState:
    """Start an episode.

    ``start`` is a fragment index or id (placed with its heavy-atom centroid at
    the origin and consumed from the multiset), ``"random"`` (a copy drawn
    uniformly from the multiset using ``seed``), or an AtomCloud to extend.
    """
    ms = ms.fresh()
    if isinstance(start, AtomCloud):
        if ms.exhausted:
            raise EnvError("nothing to place: multiset is empty")
        mol = start if start.provenance is not None else start.with_provenance(0)
        return EnvState(mol, ms, 0, False)
    if ms.exhausted:
        raise EnvError("cannot reset with an empty multiset")
    if isinstance(start, str) and start == "random":
        rng = np.random.default_rng(seed)
        counts = np.array(ms.remaining, dtype=float)
        index = int(rng.choice(len(ms), p=counts / counts.sum()))
    elif isinstance(start, str):
        index = ms.index_of(start)
    else:
        index = int(start)
    mol = _centered(ms.fragments[index].cloud).with_provenance(0)
    return EnvState(mol, ms.take(index), 0, False)


def action_masks(state: EnvState) -> Masks:
    if state.done:
        raise EnvError("terminal state has no legal actions")
    return Masks(
        molecule=anchorable_hydrogens(state.molecule),
        fragments=np.array(state.remaining, dtype=np.int64) > 0,
        fragment_hydrogens=tuple(f.anchor_mask for f in state.multiset.fragments),
    )


def check_action(state: EnvState, action: Action, masks: Masks | None = None,
                 distance_range=DISTANCE_RANGE) -> None:
    masks = masks or action_masks(state)
    if not 0 <= action.mol_h < len(masks.molecule) or not masks.molecule[action.mol_h]:
        raise IllegalActionError(f"molecule atom {action.mol_h} is not an anchorable hydrogen")
    if not 0 <= action.fragment < len(masks.fragments) or not masks.fragments[action.fragment]:
        raise IllegalActionError(f"fragment {action.fragment} is not available")
    fmask = masks.fragment_hydrogens[action.fragment]
    if not 0 <= action.frag_h < len(fmask) or not fmask[action.frag_h]:
        raise IllegalActionError(f"fragment atom {action.frag_h} is not an anchorable hydrogen")
    if action.sign not in (1, -1):
        raise IllegalActionError("sign must be +1 or -1")
    if not (distance_range[0] <= action.distance <= distance_range[1]):
        raise IllegalActionError(f"distance {action.distance} outside {distance_range}")
    if not 0.0 <= action.phi_abs <= np.pi:
        raise IllegalActionError(f"|phi| {action.phi_abs} outside [0, pi]")


def step(state: EnvState, action: Action, backend: EnergyBackend,
         distance_range=DISTANCE_RANGE, min_contact=MIN_CONTACT, max_contact=MAX_CONTACT) -> StepOutcome:
    """Place one fragment; pure function of (state, action) for deterministic backends."""
    masks = action_masks(state)
    check_action(state, action, masks, distance_range)
    mol = state.molecule
    frag = state.multiset.fragments[action.fragment].cloud
    try:
        anchors = AnchorPair.resolve(mol, frag, action.mol_h, action.frag_h)
        placement = attach_fragment(mol, frag, anchors, action.distance, action.phi_abs, action.sign)
    except GeometryError as exc:
        raise IllegalActionError(str(exc)) from None
    ms_next = state.multiset.take(action.fragment)
    mol_rest = mol.without(action.mol_h)
    new_atoms = placement.fragment.with_provenance(state.step + 1)
    next_mol = AtomCloud(placement.molecule.symbols, placement.molecule.positions,
                         mol_rest.provenance + new_atoms.provenance)
    contact = min_cross_distance(new_atoms, mol_rest)
    info = {
        "min_contact": contact,
        "rotation_applied": placement.rotation_applied,
        "fragment_id": state.multiset.fragments[action.fragment].id,
    }
    t = state.step + 1

    def penalized(reason: str) -> StepOutcome:
        info["penalty"] = reason
        return StepOutcome(EnvState(next_mol, ms_next, t, True, reason), PENALTY_REWARD, True, info)

    if contact < min_contact:
        return penalized("clash")
    if contact > max_contact:
        return penalized("too-far")
    try:
        reward = step_reward(mol_rest, frag.without(action.frag_h), next_mol, backend)
    except EnergyError as exc:
        info["error"] = str(exc)
        return penalized("energy-failure")
    info["energy"] = backend.evaluate(next_mol)
    if ms_next.exhausted:
        return StepOutcome(EnvState(next_mol, ms_next, t, True, "complete"), reward, True, info)
    if not anchorable_hydrogens(next_mol).any():
        return penalized("no-anchor")
    return StepOutcome(EnvState(next_mol, ms_next, t, False), reward, False, info)


class FragmentEnv:
    """Stateful wrapper around :func:`reset` / :func:`step` for rollout workers."""

    def __init__(self, multiset: FragmentMultiset, backend: EnergyBackend, start="random",
                 seed: int = 0, distance_range=DISTANCE_RANGE):
        self.multiset = multiset
        self.backend = backend
        self.start = start
        self.distance_range = tuple(distance_range)
        self.rng = np.random.default_rng(seed)
        self.state: EnvState | None = None

    def reset(self) -> EnvState:
        seed = int(self.rng.integers(2**63))
        self.state = reset(self.multiset, self.start, seed)
        return self.state

    def step(self, action: Action) -> StepOutcome:
        if self.state is None or self.state.done:
            raise EnvError("call reset() before step()")
        out = step(self.state, action, self.backend, self.distance_range)
        self.state = out.state
        return out
