"""Rigid placement of fragments from (distance, dihedral, sign) actions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fragforge import kernels
from fragforge.chem import AtomCloud, ChemError, concat_clouds, heavy_anchor_of

_DEGENERATE = 1e-8


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-10) or np.linalg.det(rot) < 0:
            raise GeometryError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """self after inner."""
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Right-handed rotation matrix (Rodrigues)."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction ``a`` onto direction ``b``."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    c = float(np.dot(a, b))
    v = np.cross(a, b)
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis perpendicular to a
        trial = np.eye(3)[np.argmin(np.abs(a))]
        perp = np.cross(a, trial)
        return rotation_about_axis(perp, math.pi)
    return rotation_about_axis(v, math.atan2(s, c))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rigid_transform_apply(t: RigidTransform, cloud: AtomCloud) -> AtomCloud:
    return cloud.with_positions(t.apply(cloud.positions))


def measure_dihedral(p1, p2, p3, p4) -> float:
    """Signed torsion p1-p2-p3-p4 in [-pi, pi], cis = 0."""
    p1, p2, p3, p4 = (np.asarray(p, dtype=np.float64) for p in (p1, p2, p3, p4))
    b1, b2, b3 = p2 - p1, p3 - p2, p4 - p3
    nb2 = np.linalg.norm(b2)
    if nb2 < _DEGENERATE:
        raise GeometryError("dihedral axis has zero length")
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    if np.linalg.norm(n1) < _DEGENERATE * nb2 or np.linalg.norm(n2) < _DEGENERATE * nb2:
        raise GeometryError("dihedral undefined: outer point collinear with axis")
    angle = math.atan2(nb2 * float(np.dot(b1, n2)), float(np.dot(n1, n2)))
    return math.pi if angle == -math.pi else angle


def min_cross_distance(a: AtomCloud, b: AtomCloud) -> float:
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("min_cross_distance needs two non-empty clouds")
    return kernels.min_cross_distance(a.positions, b.positions)


@dataclass(frozen=True)
class AnchorPair:
    mol_h: int
    mol_heavy: int
    mol_h_position: np.ndarray
    frag_h: int
    frag_heavy: int
    frag_h_position: np.ndarray

    @classmethod
    def resolve(cls, mol: AtomCloud, fragment: AtomCloud, mol_h: int, frag_h: int) -> "AnchorPair":
        try:
            a_m = heavy_anchor_of(mol, mol_h)
            a_f = heavy_anchor_of(fragment, frag_h)
        except ChemError as exc:
            raise GeometryError(f"invalid anchors: {exc}") from None
        return cls(mol_h, a_m, mol.positions[mol_h].copy(), frag_h, a_f, fragment.positions[frag_h].copy())


@dataclass
class Placement:
    """Result of :func:`attach_fragment`.

    ``molecule`` holds the molecule atoms (minus its anchor hydrogen) followed by
    the transformed fragment atoms (minus its anchor hydrogen).
    """

    molecule: AtomCloud
    fragment: AtomCloud
    transform: RigidTransform
    mol_heavy: int
    frag_heavy: int
    mol_reference: int | None
    frag_reference: int | None
    rotation_applied: bool
    info: dict = field(default_factory=dict)


def _reference_neighbor(positions: np.ndarray, is_h: np.ndarray, anchor: int, exclude: set[int]) -> int | None:
    """Nearest heavy atom to ``anchor``, else nearest hydrogen; lowest index on ties."""
    d = np.sqrt(((positions - positions[anchor]) ** 2).sum(axis=1))
    ok = np.ones(len(positions), dtype=bool)
    ok[list(exclude | {anchor})] = False
    for pool in (ok & ~is_h, ok & is_h):
        cand = np.flatnonzero(pool)
        if len(cand):
            return int(cand[np.argmin(d[cand])])
    return None


def attach_fragment(mol: AtomCloud, fragment: AtomCloud, anchors: AnchorPair, d: float,
                    phi_abs: float, sign: int, distance_range: tuple[float, float] | None = None) -> Placement:
    """Bond ``fragment`` onto ``mol`` replacing the two anchor hydrogens.

    The fragment heavy anchor goes to ``a_M + d * e`` where ``e`` points from the
    molecule heavy anchor to its removed hydrogen.  The fragment is turned so its
    own vacated valence points back along ``-e``, then spun about the new bond
    until the torsion (n_M, a_M, a_f, n_f) equals ``sign * phi_abs``.  When that
    torsion is undefined the spin is skipped and ``rotation_applied`` is False.
    """
    if sign not in (1, -1):
        raise GeometryError("sign must be +1 or -1")
    if not 0.0 <= phi_abs <= math.pi:
        raise GeometryError(f"|phi| must lie in [0, pi], got {phi_abs}")
    if d <= 0 or (distance_range is not None and not distance_range[0] <= d <= distance_range[1]):
        raise GeometryError(f"distance {d} outside allowed range {distance_range}")
    a_m, a_f = anchors.mol_heavy, anchors.frag_heavy
    r_am = mol.positions[a_m]
    e = anchors.mol_h_position - r_am
    e = e / np.linalg.norm(e)
    target = r_am + d * e

    # align fragment valence (a_f -> u_f) with -e, then put a_f on target
    frag_pos = fragment.positions
    valence = anchors.frag_h_position - frag_pos[a_f]
    rot = rotation_between(valence, -e)
    base = RigidTransform(rot, target - rot @ frag_pos[a_f])
    placed = base.apply(frag_pos)

    mol_keep = [i for i in range(len(mol)) if i != anchors.mol_h]
    frag_keep = [i for i in range(len(fragment)) if i != anchors.frag_h]
    n_m = _reference_neighbor(mol.positions, mol.is_hydrogen, a_m, {anchors.mol_h})
    n_f = _reference_neighbor(frag_pos, fragment.is_hydrogen, a_f, {anchors.frag_h})

    transform = base
    applied = False
    info: dict = {}
    if n_m is None or n_f is None:
        info["rotation_skipped"] = "anchor has no reference neighbour"
    else:
        try:
            current = measure_dihedral(mol.positions[n_m], r_am, target, placed[n_f])
        except GeometryError as exc:
            info["rotation_skipped"] = str(exc)
        else:
            spin = rotation_about_axis(e, sign * phi_abs - current)
            spin_t = RigidTransform(spin, target - spin @ target)
            transform = spin_t.compose(base)
            applied = True
    new_pos = transform.apply(frag_pos)
    frag_cloud = fragment.with_positions(new_pos).subset(frag_keep)
    mol_rest = mol.subset(mol_keep)
    if mol_rest.provenance is not None and frag_cloud.provenance is None:
        tag = max(mol_rest.provenance, default=-1) + 1
        frag_cloud = frag_cloud.with_provenance(tag)
    combined = concat_clouds(mol_rest, frag_cloud)
    shift = lambda i, keep: None if i is None else keep.index(i)  # noqa: E731
    return Placement(
        molecule=combined,
        fragment=frag_cloud,
        transform=transform,
        mol_heavy=mol_keep.index(a_m),
        frag_heavy=len(mol_keep) + frag_keep.index(a_f),
        mol_reference=shift(n_m, mol_keep),
        frag_reference=None if n_f is None else len(mol_keep) + frag_keep.index(n_f),
        rotation_applied=applied,
        info=info,
    )
