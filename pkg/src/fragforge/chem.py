"""Point-cloud molecules, fragment libraries, XYZ I/O and bond perception."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from fragforge import kernels

BOND_TOLERANCE = 1.3


class ChemError(ValueError):
    """Raised for malformed molecules, XYZ text or fragment manifests."""


@dataclass(frozen=True)
class Element:
    symbol: str
    atomic_number: int
    covalent_radius: float
    max_valence: int


# Cordero et al. (2008) single-bond covalent radii; C uses the sp3 value.
ELEMENTS: dict[str, Element] = {
    "C": Element("C", 6, 0.76, 4),
    "H": Element("H", 1, 0.31, 1),
    "N": Element("N", 7, 0.71, 3),
    "O": Element("O", 8, 0.66, 2),
    "F": Element("F", 9, 0.57, 1),
    "S": Element("S", 16, 1.05, 6),
}
SYMBOLS: tuple[str, ...] = tuple(ELEMENTS)
ELEMENT_INDEX = {s: i for i, s in enumerate(SYMBOLS)}


def element(symbol: str) -> Element:
    try:
        return ELEMENTS[symbol]
    except KeyError:
        raise ChemError(f"unknown element symbol {symbol!r}") from None


@dataclass(frozen=True, eq=False)
class AtomCloud:
    """An ordered set of atoms with Cartesian positions in Angstrom.

    ``provenance`` optionally tags every atom with the placement step that
    introduced it (0 for the starting fragment).
    """

    symbols: tuple[str, ...]
    positions: np.ndarray
    provenance: tuple[int, ...] | None = None

    def __post_init__(self):
        symbols = tuple(self.symbols)
        for s in symbols:
            element(s)
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(pos) != len(symbols):
            raise ChemError(f"{len(symbols)} symbols but {len(pos)} positions")
        if not np.all(np.isfinite(pos)):
            raise ChemError("atom positions must be finite")
        if len(pos) > 1 and len(np.unique(pos, axis=0)) != len(pos):
            raise ChemError("two atoms share identical coordinates")
        if self.provenance is not None and len(self.provenance) != len(symbols):
            raise ChemError("provenance length does not match atom count")
        pos.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "positions", pos)
        if self.provenance is not None:
            object.__setattr__(self, "provenance", tuple(int(p) for p in self.provenance))

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AtomCloud):
            return NotImplemented
        return self.symbols == other.symbols and np.array_equal(self.positions, other.positions)

    __hash__ = None

    @property
    def is_hydrogen(self) -> np.ndarray:
        return np.array([s == "H" for s in self.symbols], dtype=bool)

    @property
    def element_indices(self) -> np.ndarray:
        return np.array([ELEMENT_INDEX[s] for s in self.symbols], dtype=np.int64)

    @property
    def radii(self) -> np.ndarray:
        return np.array([ELEMENTS[s].covalent_radius for s in self.symbols])

    @property
    def n_heavy(self) -> int:
        return sum(s != "H" for s in self.symbols)

    def formula(self) -> str:
        return hill_formula(Counter(self.symbols))

    def one_hot(self) -> np.ndarray:
        out = np.zeros((len(self), len(SYMBOLS)))
        out[np.arange(len(self)), self.element_indices] = 1.0
        return out

    def without(self, index: int) -> "AtomCloud":
        keep = [i for i in range(len(self)) if i != index]
        return self.subset(keep)

    def subset(self, indices: Sequence[int]) -> "AtomCloud":
        idx = list(indices)
        prov = None if self.provenance is None else [self.provenance[i] for i in idx]
        return AtomCloud(tuple(self.symbols[i] for i in idx), self.positions[idx], prov)

    def with_positions(self, positions: np.ndarray) -> "AtomCloud":
        return AtomCloud(self.symbols, positions, self.provenance)

    def with_provenance(self, tag: int) -> "AtomCloud":
        return AtomCloud(self.symbols, self.positions, (tag,) * len(self))

    def content_hash(self, resolution: float = 1e-6) -> str:
        """Digest of symbols and positions quantized to ``resolution``."""
        q = np.round(self.positions / resolution).astype(np.int64)
        h = hashlib.sha1(" ".join(self.symbols).encode())
        h.update(q.tobytes())
        return h.hexdigest()


def concat_clouds(a: AtomCloud, b: AtomCloud) -> AtomCloud:
    prov = None
    if a.provenance is not None and b.provenance is not None:
        prov = a.provenance + b.provenance
    return AtomCloud(a.symbols + b.symbols, np.vstack([a.positions, b.positions]), prov)


def hill_formula(counts: Counter | dict) -> str:
    counts = {k: v for k, v in counts.items() if v}
    order = []
    if "C" in counts:
        order = ["C"] + (["H"] if "H" in counts else [])
    order += sorted(k for k in counts if k not in order)
    return "".join(f"{s}{counts[s] if counts[s] > 1 else ''}" for s in order)


def parse_formula(formula: str) -> Counter:
    import re

    out: Counter = Counter()
    for sym, num in re.findall(r"([A-Z][a-z]?)(\d*)", formula):
        out[sym] += int(num) if num else 1
    return out


# -- XYZ --------------------------------------------------------------------

def parse_xyz(text: str) -> AtomCloud:
    lines = text.splitlines()
    if not lines:
        raise ChemError("empty XYZ text")
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise ChemError(f"first XYZ line must be an atom count, got {lines[0]!r}") from None
    body = [ln for ln in lines[2:] if ln.strip()]
    if len(body) != n:
        raise ChemError(f"XYZ declares {n} atoms but has {len(body)} atom lines")
    symbols, coords = [], []
    for ln in body:
        parts = ln.split()
        if len(parts) < 4:
            raise ChemError(f"malformed atom line {ln!r}")
        sym = parts[0].capitalize()
        element(sym)
        try:
            coords.append([float(x) for x in parts[1:4]])
        except ValueError:
            raise ChemError(f"unparsable coordinate in {ln!r}") from None
        symbols.append(sym)
    return AtomCloud(tuple(symbols), np.array(coords).reshape(-1, 3))


def write_xyz(cloud: AtomCloud, comment: str = "") -> str:
    if len(cloud) == 0:
        raise ChemError("cannot write an empty cloud")
    if "\n" in comment:
        raise ChemError("XYZ comment must be a single line")
    out = [str(len(cloud)), comment]
    for s, (x, y, z) in zip(cloud.symbols, cloud.positions):
        out.append(f"{s} {x:.6f} {y:.6f} {z:.6f}")
    return "\n".join(out)


def read_xyz(path) -> AtomCloud:
    return parse_xyz(Path(path).read_text())


# -- bonds ------------------------------------------------------------------

@dataclass(frozen=True)
class BondGraph:
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def degree(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors], dtype=np.int64)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nb in enumerate(self.neighbors) for j in nb if i < j]

    def n_components(self) -> int:
        n = len(self.neighbors)
        seen = np.zeros(n, dtype=bool)
        comps = 0
        for start in range(n):
            if seen[start]:
                continue
            comps += 1
            stack = [start]
            seen[start] = True
            while stack:
                i = stack.pop()
                for j in self.neighbors[i]:
                    if not seen[j]:
                        seen[j] = True
                        stack.append(j)
        return comps


def bond_matrix(cloud: AtomCloud, tolerance: float = BOND_TOLERANCE) -> np.ndarray:
    d = kernels.pairwise_distances(cloud.positions)
    r = cloud.radii
    adj = d <= tolerance * (r[:, None] + r[None, :])
    np.fill_diagonal(adj, False)
    return adj


def perceive_bonds(cloud: AtomCloud, tolerance: float = BOND_TOLERANCE) -> BondGraph:
    """Connectivity from covalent radii: i-j bonded iff d_ij <= tolerance * (r_i + r_j)."""
    adj = bond_matrix(cloud, tolerance)
    return BondGraph(tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in adj))


def heavy_anchor_of(cloud: AtomCloud, h_index: int, tolerance: float = BOND_TOLERANCE) -> int:
    """Heavy atom bonded to hydrogen ``h_index``; the nearest one (lowest index on ties)."""
    if not 0 <= h_index < len(cloud) or cloud.symbols[h_index] != "H":
        raise ChemError(f"atom {h_index} is not a hydrogen")
    pos = cloud.positions
    d = np.sqrt(((pos - pos[h_index]) ** 2).sum(axis=1))
    r = cloud.radii
    ok = (d <= tolerance * (r + r[h_index])) & ~cloud.is_hydrogen
    ok[h_index] = False
    cand = np.flatnonzero(ok)
    if len(cand) == 0:
        raise ChemError(f"hydrogen {h_index} has no heavy neighbour")
    # argmin returns the first minimum, i.e. the lowest index on ties
    return int(cand[np.argmin(d[cand])])


def anchorable_hydrogens(cloud: AtomCloud, tolerance: float = BOND_TOLERANCE) -> np.ndarray:
    """Boolean mask of hydrogens bonded to at least one heavy atom."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=bool)
    adj = bond_matrix(cloud, tolerance)
    heavy = ~cloud.is_hydrogen
    return cloud.is_hydrogen & (adj & heavy[None, :]).any(axis=1)


# -- fragment libraries -----------------------------------------------------

@dataclass(frozen=True)
class Fragment:
    id: str
    cloud: AtomCloud
    count: int
    anchor_mask: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True, eq=False)
class FragmentMultiset:
    """Distinct fragments in manifest order with their remaining counts."""

    fragments: tuple[Fragment, ...]
    remaining: tuple[int, ...]
    name: str = ""
    reference: dict | None = None

    def __post_init__(self):
        if len(self.remaining) != len(self.fragments):
            raise ChemError("remaining vector does not match fragment count")
        for frag, left in zip(self.fragments, self.remaining):
            if not 0 <= left <= frag.count:
                raise ChemError(f"remaining count {left} out of range for {frag.id}")

    @classmethod
    def from_clouds(cls, entries: Iterable[tuple[str, AtomCloud, int]], name: str = "",
                    reference: dict | None = None) -> "FragmentMultiset":
        frags = []
        for fid, cloud, count in entries:
            count = int(count)
            if count < 1:
                raise ChemError(f"fragment {fid}: count must be >= 1, got {count}")
            if len(cloud) < 2:
                raise ChemError(f"fragment {fid} needs at least two atoms")
            mask = anchorable_hydrogens(cloud)
            if not mask.any():
                raise ChemError(f"fragment {fid} has no hydrogen bonded to a heavy atom")
            mask.setflags(write=False)
            frags.append(Fragment(fid, cloud, count, mask))
        ids = [f.id for f in frags]
        if len(set(ids)) != len(ids):
            raise ChemError("duplicate fragment ids in manifest")
        return cls(tuple(frags), tuple(f.count for f in frags), name, reference)

    def __len__(self) -> int:
        return len(self.fragments)

    @property
    def ids(self) -> list[str]:
        return [f.id for f in self.fragments]

    def index_of(self, fid: str) -> int:
        try:
            return self.ids.index(fid)
        except ValueError:
            raise ChemError(f"unknown fragment id {fid!r}") from None

    @property
    def initial_counts(self) -> tuple[int, ...]:
        return tuple(f.count for f in self.fragments)

    @property
    def total_fragments(self) -> int:
        return sum(self.initial_counts)

    @property
    def exhausted(self) -> bool:
        return sum(self.remaining) == 0

    def take(self, index: int) -> "FragmentMultiset":
        if self.remaining[index] <= 0:
            raise ChemError(f"fragment {self.fragments[index].id} is exhausted")
        rem = list(self.remaining)
        rem[index] -= 1
        return FragmentMultiset(self.fragments, tuple(rem), self.name, self.reference)

    def fresh(self) -> "FragmentMultiset":
        return FragmentMultiset(self.fragments, self.initial_counts, self.name, self.reference)

    def total_formula(self) -> str:
        c: Counter = Counter()
        for f in self.fragments:
            for s in f.cloud.symbols:
                c[s] += f.count
        return hill_formula(c)

    def fragment_atom_count(self) -> tuple[int, int]:
        """(atoms, heavy atoms) summed over all fragment copies."""
        atoms = sum(len(f.cloud) * f.count for f in self.fragments)
        heavy = sum(f.cloud.n_heavy * f.count for f in self.fragments)
        return atoms, heavy

    def assembled_atom_count(self) -> tuple[int, int]:
        """(atoms, heavy atoms) of a complete molecule: two H lost per bond formed."""
        atoms, heavy = self.fragment_atom_count()
        return atoms - 2 * (self.total_fragments - 1), heavy

    def digest(self) -> str:
        h = hashlib.sha1()
        for f in self.fragments:
            h.update(f"{f.id}:{f.count}:{f.cloud.content_hash()};".encode())
        return h.hexdigest()


def multiset_count_vector(ms: FragmentMultiset) -> np.ndarray:
    return np.array(ms.remaining, dtype=np.int64)


def load_fragment_library(manifest_path) -> FragmentMultiset:
    """Load a YAML manifest listing fragment XYZ files and their counts.

    Manifest layout::

        name: drug1
        reference: {formula: C14H22N4OS, atoms: 42, heavy_atoms: 20}   # optional
        fragments:
          - {id: methylimidazole, path: ../fragments/methylimidazole.xyz, count: 1}

    Paths are relative to the manifest.  Entry order fixes fragment indices.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ChemError(f"manifest not found: {manifest_path}")
    doc = yaml.safe_load(manifest_path.read_text()) or {}
    entries = doc.get("fragments")
    if not entries:
        raise ChemError(f"manifest {manifest_path} lists no fragments")
    clouds = []
    for entry in entries:
        try:
            fid, rel, count = str(entry["id"]), entry["path"], entry.get("count", 1)
        except (KeyError, TypeError):
            raise ChemError(f"manifest entry needs id and path: {entry!r}") from None
        path = (manifest_path.parent / rel).resolve()
        if not path.is_file():
            raise ChemError(f"fragment file not found: {path}")
        if not isinstance(count, int):
            raise ChemError(f"fragment {fid}: count must be an integer")
        clouds.append((fid, read_xyz(path), count))
    ms = FragmentMultiset.from_clouds(clouds, name=str(doc.get("name", manifest_path.stem)),
                                      reference=doc.get("reference"))
    declared = doc.get("total_formula")
    if declared is not None and parse_formula(declared) != parse_formula(ms.total_formula()):
        raise ChemError(f"manifest total {declared} != summed fragments {ms.total_formula()}")
    return ms


DATA_DIR = Path(__file__).parent / "data"


def bundled_manifest(name: str) -> Path:
    path = DATA_DIR / "manifests" / f"{name}.yaml"
    if not path.is_file():
        raise ChemError(f"no bundled multiset named {name!r}")
    return path


def bundled_multisets() -> list[str]:
    return sorted(p.stem for p in (DATA_DIR / "manifests").glob("*.yaml"))
