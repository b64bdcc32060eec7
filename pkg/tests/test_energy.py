import math
import sys
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragforge.chem import ELEMENTS, AtomCloud
from fragforge.energy import (
    AdapterConfig, CachedBackend, ConstantBackend, EnergyError, EnergyTimeout, ExternalBackend,
    SurrogateBackend, SurrogateParams, external_backend_evaluate, step_reward, surrogate_energy,
)
from fragforge.geometry import AnchorPair, attach_fragment, random_rotation

from conftest import METHANE


def oracle_energy(symbols, pos, k=100.0, eps=0.1, scale=0.9, offset=1.5, tol=1.3):
    """Independent double loop over pairs, written straight from the formula."""
    total = 0.0
    n = len(symbols)
    for i in range(n):
        for j in range(i + 1, n):
            r0 = ELEMENTS[symbols[i]].covalent_radius + ELEMENTS[symbols[j]].covalent_radius
            r = math.dist(pos[i], pos[j])
            if r <= tol * r0:
                total += k * (r - r0) ** 2
            else:
                s = scale * (r0 + offset)
                total += 4 * eps * ((s / r) ** 12 - (s / r) ** 6)
    return total


def test_single_atom_zero():
    assert surrogate_energy(AtomCloud(("C",), np.zeros((1, 3)))) == 0.0


def test_cc_at_minimum():
    c2 = AtomCloud(("C", "C"), np.array([[0, 0, 0], [1.52, 0, 0]]))
    assert surrogate_energy(c2) == pytest.approx(0.0, abs=1e-24)


def test_cc_stretched():
    c2 = AtomCloud(("C", "C"), np.array([[0, 0, 0], [1.62, 0, 0]]))
    assert surrogate_energy(c2) == pytest.approx(1.0, rel=1e-12)
    assert surrogate_energy(c2) == pytest.approx(oracle_energy(c2.symbols, c2.positions), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 14))
    cloud = AtomCloud(tuple(rng.choice(list(ELEMENTS), n)), rng.normal(scale=1.6, size=(n, 3)))
    want = oracle_energy(cloud.symbols, cloud.positions)
    assert surrogate_energy(cloud) == pytest.approx(want, rel=1e-10, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 10
    cloud = AtomCloud(tuple(rng.choice(list(ELEMENTS), n)), rng.normal(scale=1.8, size=(n, 3)))
    e = surrogate_energy(cloud)
    moved = cloud.with_positions(cloud.positions @ random_rotation(rng).T + rng.normal(size=3) * 4)
    assert abs(surrogate_energy(moved) - e) <= 1e-9 * max(1.0, abs(e))
    assert surrogate_energy(cloud.subset(rng.permutation(n))) == e


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_linear_in_force_constants(seed, c):
    # k_bond and epsilon enter linearly; sigma and the bond tolerance are length scales
    rng = np.random.default_rng(seed)
    cloud = AtomCloud(tuple(rng.choice(list(ELEMENTS), 8)), rng.normal(scale=1.5, size=(8, 3)))
    base = SurrogateParams()
    scaled = SurrogateParams(k_bond=c * base.k_bond, lj_epsilon=c * base.lj_epsilon)
    e, es = surrogate_energy(cloud, base), surrogate_energy(cloud, scaled)
    assert es == pytest.approx(c * e, rel=1e-12, abs=1e-12)


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        SurrogateParams(k_bond=0.0)
    with pytest.raises(ValueError):
        SurrogateParams(lj_epsilon=-1.0)


def test_reward_constant_backend_is_zero():
    anchors = AnchorPair.resolve(METHANE, METHANE, 1, 1)
    p = attach_fragment(METHANE, METHANE, anchors, 1.54, 1.0, 1)
    assert step_reward(METHANE.without(1), METHANE.without(1), p.molecule, ConstantBackend(0.0)) == 0.0
    assert step_reward(METHANE.without(1), METHANE.without(1), p.molecule, ConstantBackend(3.5)) == 3.5


def test_reward_zero_for_additive_backend():
    class Additive(SurrogateBackend):
        # per-atom constants: exactly additive, no interaction
        def evaluate(self, cloud):
            return 0.25 * len(cloud) + 2.0 * cloud.n_heavy

    anchors = AnchorPair.resolve(METHANE, METHANE, 1, 1)
    p = attach_fragment(METHANE, METHANE, anchors, 1.54, 1.0, 1)
    assert step_reward(METHANE.without(1), METHANE.without(1), p.molecule, Additive()) == 0.0


def test_reward_methane_methane_hand_evaluated():
    anchors = AnchorPair.resolve(METHANE, METHANE, 2, 3)
    p = attach_fragment(METHANE, METHANE, anchors, 1.50, 0.7, -1)
    mol_m = METHANE.without(2)
    frag_m = METHANE.without(3)
    want = -(oracle_energy(p.molecule.symbols, p.molecule.positions)
             - oracle_energy(mol_m.symbols, mol_m.positions)
             - oracle_energy(frag_m.symbols, frag_m.positions))
    got = step_reward(mol_m, frag_m, p.molecule, SurrogateBackend())
    assert got == pytest.approx(want, rel=1e-10, abs=1e-10)
    # the only new bonded term is C-C at 1.50 vs r0 = 1.52
    assert got < 0


def test_cached_backend_counts_and_threads():
    inner = SurrogateBackend()
    cache = CachedBackend(inner)
    e1 = cache.evaluate(METHANE)
    e2 = cache.evaluate(METHANE.with_positions(METHANE.positions + 1e-9))
    assert e1 == e2 == inner.evaluate(METHANE)
    assert (cache.hits, cache.misses) == (1, 1)
    rng = np.random.default_rng(0)
    clouds = [METHANE.with_positions(METHANE.positions @ random_rotation(rng).T) for _ in range(20)]
    out = {}

    def work(k):
        out[k] = [cache.evaluate(c) for c in clouds]

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(v == out[0] for v in out.values())


def _script(tmp_path, body):
    p = tmp_path / "prog.py"
    p.write_text(body)
    return f"{sys.executable} {p} {{xyz}}"


def test_external_stub(tmp_path):
    cmd = _script(tmp_path, "import sys\nopen(sys.argv[1]).read()\nprint('42.0')\n")
    assert external_backend_evaluate(METHANE, AdapterConfig(cmd)) == 42.0
    assert ExternalBackend(AdapterConfig(cmd, unit_factor=627.509)).evaluate(METHANE) == pytest.approx(42.0 * 627.509)


def test_external_reads_structure(tmp_path):
    cmd = _script(tmp_path, "import sys\nprint(int(open(sys.argv[1]).readline()))\n")
    assert external_backend_evaluate(METHANE, AdapterConfig(cmd)) == 5.0


def test_external_timeout(tmp_path):
    cmd = _script(tmp_path, "import time\ntime.sleep(5)\n")
    with pytest.raises(EnergyTimeout):
        external_backend_evaluate(METHANE, AdapterConfig(cmd, timeout=0.3))


def test_external_garbage(tmp_path):
    cmd = _script(tmp_path, "print('not a number')\n")
    with pytest.raises(EnergyError, match="parse"):
        external_backend_evaluate(METHANE, AdapterConfig(cmd))


def test_external_failure(tmp_path):
    cmd = _script(tmp_path, "import sys\nsys.exit(3)\n")
    with pytest.raises(EnergyError, match="exited with 3"):
        external_backend_evaluate(METHANE, AdapterConfig(cmd))
    with pytest.raises(EnergyError, match="could not start"):
        external_backend_evaluate(METHANE, AdapterConfig("/nonexistent/program {xyz}"))
