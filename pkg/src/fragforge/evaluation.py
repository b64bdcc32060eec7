"""Structure validity checks, cumulative validity ratios and evaluation snapshots."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from fragforge.chem import ELEMENTS, AtomCloud, FragmentMultiset, hill_formula, perceive_bonds, write_xyz
from fragforge.energy import EnergyBackend, EnergyError
from fragforge.env import MIN_CONTACT, EnvState, FragmentEnv

REASONS = ("ok", "disconnected", "valence-exceeded", "clash")


@dataclass(frozen=True)
class ValidityReport:
    rotation_valid: bool
    bond_valid: bool
    reason: str
    formulas: tuple[str, ...] = ()

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown validity reason {self.reason!r}")
        if self.bond_valid and not self.rotation_valid:
            raise ValueError("bond-valid structure must also be rotation-valid")


def _components(neighbors) -> list[list[int]]:
    n = len(neighbors)
    label = [-1] * n
    comps = []
    for s in range(n):
        if label[s] >= 0:
            continue
        label[s] = len(comps)
        comp, stack = [s], [s]
        while stack:
            i = stack.pop()
            for j in neighbors[i]:
                if label[j] < 0:
                    label[j] = label[s]
                    comp.append(j)
                    stack.append(j)
        comps.append(sorted(comp))
    return comps


def classify_validity(cloud: AtomCloud, min_distance: float = MIN_CONTACT) -> ValidityReport:
    """Connectivity, valence and clash checks standing in for a full bond-order perception.

    A structure is rotation-valid when no atom exceeds its maximum valence and
    no two atoms are closer than ``min_distance``; it is bond-valid when it is
    also a single connected component.
    """
    if len(cloud) == 0:
        raise ValueError("cannot classify an empty cloud")
    graph = perceive_bonds(cloud)
    comps = _components(graph.neighbors)
    formulas = tuple(hill_formula(Counter(cloud.symbols[i] for i in c)) for c in comps)
    caps = np.array([ELEMENTS[s].max_valence for s in cloud.symbols])
    if len(cloud) > 1:
        pos = cloud.positions
        d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)
        if d.min() < min_distance:
            return ValidityReport(False, False, "clash", formulas)
    if np.any(graph.degree > caps):
        return ValidityReport(False, False, "valence-exceeded", formulas)
    if len(comps) > 1:
        return ValidityReport(True, False, "disconnected", formulas)
    return ValidityReport(True, True, "ok", formulas)


def classify_state(state: EnvState) -> ValidityReport:
    """Validity of a terminal state, folding in how the episode ended.

    Clash, energy-failure and aborted episodes are invalid with reason
    ``clash``.  A too-far placement cannot be bond-valid and is reported as
    disconnected.
    """
    report = classify_validity(state.molecule)
    if state.reason in ("clash", "energy-failure", "error"):
        return ValidityReport(False, False, "clash", report.formulas)
    if state.reason == "too-far" and report.bond_valid:
        return ValidityReport(True, False, "disconnected", report.formulas)
    return report


@dataclass
class ValidityCounter:
    """Streaming valid/total counts; equal to the batch ratio for any chunking."""

    total: int = 0
    rotation: int = 0
    bond: int = 0

    def update(self, reports: Iterable[ValidityReport]) -> "ValidityCounter":
        for r in reports:
            self.total += 1
            self.rotation += bool(r.rotation_valid)
            self.bond += bool(r.bond_valid)
        return self

    @property
    def ratios(self) -> tuple[float, float]:
        if self.total == 0:
            return 0.0, 0.0
        return self.rotation / self.total, self.bond / self.total


def cumulative_valid_ratio(history: Iterable[ValidityReport]) -> tuple[float, float]:
    """(rotation ratio, bond ratio); both 0 for an empty history."""
    return ValidityCounter().update(history).ratios


@dataclass
class EvalSnapshot:
    step: int
    structures: list[AtomCloud] = field(default_factory=list)
    energies: list[float | None] = field(default_factory=list)
    reports: list[ValidityReport] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    rotation_ratio: float = 0.0
    bond_ratio: float = 0.0
    n_history: int = 0

    def metadata(self) -> dict:
        return {
            "step": self.step,
            "n_samples": len(self.structures),
            "energies_kcal_mol": self.energies,
            "rewards": self.rewards,
            "validity": [
                {"rotation_valid": r.rotation_valid, "bond_valid": r.bond_valid, "reason": r.reason,
                 "formulas": list(r.formulas)} for r in self.reports
            ],
            "cumulative_rotation_validity": self.rotation_ratio,
            "cumulative_bond_validity": self.bond_ratio,
            "cumulative_count": self.n_history,
        }


def rollout_episode(policy, env: FragmentEnv, rng: np.random.Generator) -> tuple[EnvState, float]:
    from fragforge.policy import sample_action

    state = env.reset()
    total = 0.0
    while not state.done:
        out = env.step(sample_action(state, policy, rng).action)
        total += out.reward
        state = out.state
    return state, total


def evaluation_snapshot(policy, library: FragmentMultiset, backend: EnergyBackend, n_samples: int,
                        step: int, seed: int = 0, history: list[ValidityReport] | None = None,
                        start="random", out_dir=None) -> EvalSnapshot:
    """Sample ``n_samples`` full episodes and record their terminal structures.

    ``history`` (when given) is extended in place with the new reports and the
    cumulative ratios are computed over it.  With ``out_dir`` each structure is
    written as ``{step}_{episode}.xyz`` next to ``{step}_meta.json``.
    """
    snap = EvalSnapshot(step)
    rng = np.random.default_rng(seed)
    env = FragmentEnv(library, backend, start, seed, policy.config.distance_range)
    for _ in range(n_samples):
        try:
            state, total = rollout_episode(policy, env, rng)
            report = classify_state(state)
        except RuntimeError:  # EnvError, PolicyError
            state, total = env.state, float("nan")
            report = ValidityReport(False, False, "clash", classify_validity(state.molecule).formulas)
        try:
            energy = float(backend.evaluate(state.molecule))
        except EnergyError:
            energy = None
        snap.structures.append(state.molecule)
        snap.energies.append(energy)
        snap.reports.append(report)
        snap.rewards.append(total)
    hist = history if history is not None else []
    hist.extend(snap.reports)
    snap.rotation_ratio, snap.bond_ratio = cumulative_valid_ratio(hist)
    snap.n_history = len(hist)
    if out_dir is not None:
        write_snapshot(snap, out_dir)
    return snap


def write_snapshot(snap: EvalSnapshot, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, (cloud, rep) in enumerate(zip(snap.structures, snap.reports)):
        (out / f"{snap.step}_{k}.xyz").write_text(write_xyz(cloud, f"step={snap.step} valid={rep.reason}"))
    (out / f"{snap.step}_meta.json").write_text(json.dumps(snap.metadata(), indent=1))
