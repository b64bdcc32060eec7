import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragforge.chem import AtomCloud, FragmentMultiset, anchorable_hydrogens
from fragforge.energy import ConstantBackend, SurrogateBackend
from fragforge.env import (
    PENALTY_REWARD, Action, EnvError, FragmentEnv, IllegalActionError, action_masks, reset, step,
)

from conftest import METHANE


def random_action(state, rng, distance_range=(1.10, 2.10)):
    m = action_masks(state)
    mh = int(rng.choice(np.flatnonzero(m.molecule)))
    f = int(rng.choice(np.flatnonzero(m.fragments)))
    fh = int(rng.choice(np.flatnonzero(m.fragment_hydrogens[f])))
    return Action(mh, f, fh, float(rng.uniform(*distance_range)), float(rng.uniform(0, math.pi)),
                  int(rng.choice([-1, 1])))


def test_reset_fixed_start(drug1):
    s = reset(drug1, "methylimidazole")
    assert len(s.molecule) == 12 and s.molecule.formula() == "C4H6N2"
    assert s.remaining == (0, 1, 1, 1)
    assert s.step == 0 and not s.done
    heavy = ~s.molecule.is_hydrogen
    np.testing.assert_allclose(s.molecule.positions[heavy].mean(axis=0), 0, atol=1e-12)
    assert set(s.molecule.provenance) == {0}


def test_reset_random_reproducible(drug1):
    picks = {reset(drug1, "random", seed=s).molecule.formula() for s in range(40)}
    assert len(picks) > 1
    for s in range(10):
        assert reset(drug1, "random", seed=s).molecule == reset(drug1, "random", seed=s).molecule


def test_reset_empty_multiset():
    empty = FragmentMultiset((), ())
    with pytest.raises(EnvError):
        reset(empty, "random")
    with pytest.raises(EnvError):
        reset(empty, METHANE)


def test_reset_given_cloud_keeps_counts(toy):
    s = reset(toy, METHANE)
    assert s.remaining == (1, 1, 1)
    assert s.molecule == METHANE


def test_masks(toy):
    s = reset(toy, "methane")
    m = action_masks(s)
    assert list(m.molecule) == [False, True, True, True, True]
    assert list(m.fragments) == [False, True, True]
    assert [list(x) for x in m.fragment_hydrogens][2] == [False, True, True]


def test_masks_remaining_pattern(drug1):
    s = reset(drug1, "methylimidazole")
    s2 = step(s, Action(int(np.flatnonzero(anchorable_hydrogens(s.molecule))[0]), 2,
                        int(np.flatnonzero(drug1.fragments[2].anchor_mask)[0]), 1.54, 1.0, 1),
              ConstantBackend()).state
    assert list(action_masks(s2).fragments) == [False, True, False, True]


def test_terminal_has_no_masks(toy):
    rng = np.random.default_rng(0)
    s = reset(toy, 0)
    while not s.done:
        s = step(s, random_action(s, rng), ConstantBackend()).state
    with pytest.raises(EnvError):
        action_masks(s)
    with pytest.raises(EnvError):
        step(s, Action(1, 1, 1, 1.5, 1.0, 1), ConstantBackend())


def test_constant_backend_reward_zero(toy):
    s = reset(toy, "methane")
    out = step(s, Action(1, 1, 1, 1.47, 2.0, 1), ConstantBackend())
    assert out.reward == 0.0
    assert out.done == (sum(out.state.remaining) == 0)
    assert out.state.step == 1


def test_clash_penalty():
    # a stray hydrogen sits 0.3 A from where the fragment carbon will land
    e = METHANE.positions[1] / np.linalg.norm(METHANE.positions[1])
    perp = np.cross(e, [1.0, 0, 0])
    perp /= np.linalg.norm(perp)
    stray = 1.5 * e + 0.3 * perp
    mol = AtomCloud(METHANE.symbols + ("H",), np.vstack([METHANE.positions, stray]))
    ms = FragmentMultiset.from_clouds([("methane", METHANE, 2)])
    s = reset(ms, mol)
    out = step(s, Action(1, 0, 1, 1.5, 0.5, 1), SurrogateBackend())
    assert out.reward == PENALTY_REWARD == -10.0
    assert out.done and out.state.done and out.state.reason == "clash"
    assert out.info["min_contact"] == pytest.approx(0.3, abs=1e-9)


def test_no_anchor_penalty():
    hf = AtomCloud(("F", "H"), np.array([[0, 0, 0], [0.92, 0, 0]]))
    ms = FragmentMultiset.from_clouds([("hf", hf, 3)])
    s = reset(ms, 0)
    out = step(s, Action(1, 0, 1, 1.45, 0.0, 1), ConstantBackend())
    assert out.state.molecule.formula() == "F2"
    assert out.done and out.reward == -10.0 and out.state.reason == "no-anchor"


def test_illegal_actions(toy):
    s = reset(toy, "methane")
    bad = [
        Action(0, 1, 1, 1.5, 1.0, 1),    # carbon
        Action(1, 0, 1, 1.5, 1.0, 1),    # exhausted fragment
        Action(1, 1, 0, 1.5, 1.0, 1),    # fragment heavy atom
        Action(1, 1, 1, 2.5, 1.0, 1),    # distance out of range
        Action(1, 1, 1, 1.5, 4.0, 1),    # |phi| > pi
        Action(1, 1, 1, 1.5, 1.0, 0),    # sign
        Action(9, 1, 1, 1.5, 1.0, 1),    # out of bounds
    ]
    for a in bad:
        with pytest.raises(IllegalActionError):
            step(s, a, ConstantBackend())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_episode_accounting(drug1, seed):
    rng = np.random.default_rng(seed)
    s = reset(drug1, "random", seed=seed)
    length = 0
    while not s.done:
        out = step(s, random_action(s, rng), SurrogateBackend())
        length += 1
        if out.state.reason not in (None, "complete"):
            assert out.reward == PENALTY_REWARD
        s = out.state
    assert length <= drug1.total_fragments - 1
    assert s.episode_length == length + 1
    if s.reason == "complete":
        assert s.episode_length == drug1.total_fragments
        atoms, _ = drug1.assembled_atom_count()
        assert len(s.molecule) == atoms
        assert sorted(set(s.molecule.provenance)) == list(range(drug1.total_fragments))


def test_transitions_deterministic(drug1):
    rng = np.random.default_rng(5)
    s = reset(drug1, 1)
    a = random_action(s, rng)
    o1, o2 = step(s, a, SurrogateBackend()), step(s, a, SurrogateBackend())
    assert o1.reward == o2.reward
    assert np.array_equal(o1.state.molecule.positions, o2.state.molecule.positions)


def test_env_wrapper(toy):
    env = FragmentEnv(toy, ConstantBackend(), seed=3)
    with pytest.raises(EnvError):
        env.step(Action(1, 1, 1, 1.5, 1.0, 1))
    s = env.reset()
    rng = np.random.default_rng(0)
    n = 0
    while not s.done:
        s = env.step(random_action(s, rng)).state
        n += 1
    assert n <= 2
    assert s.reason != "complete" or n == 2
