import numpy as np
import pytest

from fragforge.chem import AtomCloud, bundled_manifest, load_fragment_library

# tetrahedral methane, C-H 1.09 A
_T = 1.09 / np.sqrt(3.0)
METHANE = AtomCloud(("C", "H", "H", "H", "H"),
                    np.array([[0, 0, 0], [_T, _T, _T], [-_T, -_T, _T], [-_T, _T, -_T], [_T, -_T, -_T]]))

# staggered ethane: C-C 1.54, C-H 1.09, tetrahedral angles
def _ethane():
    cc, ch = 1.54, 1.09
    theta = np.deg2rad(109.47)
    pos = [[0, 0, 0], [0, 0, cc]]
    for k in range(3):
        a = 2 * np.pi * k / 3
        r = ch * np.sin(np.pi - theta)
        pos.append([r * np.cos(a), r * np.sin(a), -ch * np.cos(np.pi - theta)])
        b = a + np.pi / 3
        pos.append([r * np.cos(b), r * np.sin(b), cc + ch * np.cos(np.pi - theta)])
    return AtomCloud(("C", "C") + ("H",) * 6, np.array(pos))


ETHANE = _ethane()


@pytest.fixture(scope="session")
def toy():
    return load_fragment_library(bundled_manifest("toy"))


@pytest.fixture(scope="session")
def drug1():
    return load_fragment_library(bundled_manifest("drug1"))


@pytest.fixture
def methane():
    return METHANE


@pytest.fixture
def ethane():
    return ETHANE
