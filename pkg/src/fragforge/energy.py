"""Energy backends (kcal/mol) and the bond-formation reward."""
from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, fields

from fragforge import kernels
from fragforge.chem import BOND_TOLERANCE, AtomCloud, write_xyz

HARTREE_TO_KCAL = 627.509


class EnergyError(RuntimeError):
    """Backend failed to produce an energy."""


class EnergyTimeout(EnergyError):
    pass


@dataclass(frozen=True)
class SurrogateParams:
    """Harmonic bonds plus Lennard-Jones between non-bonded pairs.

    sigma_ij = lj_sigma_scale * (r0_ij + sigma_offset) where r0_ij is the sum of
    covalent radii.
    """

    k_bond: float = 100.0
    lj_epsilon: float = 0.1
    lj_sigma_scale: float = 0.9
    sigma_offset: float = 1.5
    bond_tolerance: float = BOND_TOLERANCE

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"SurrogateParams.{f.name} must be positive")


def surrogate_pair_terms(cloud: AtomCloud, params: SurrogateParams = SurrogateParams()):
    return kernels.surrogate_terms(cloud.positions, cloud.radii, params.bond_tolerance,
                                   params.k_bond, params.lj_epsilon, params.lj_sigma_scale,
                                   params.sigma_offset)


def surrogate_energy(cloud: AtomCloud, params: SurrogateParams = SurrogateParams()) -> float:
    # fsum is exactly rounded, so the total does not depend on atom order
    return math.fsum(surrogate_pair_terms(cloud, params))


class EnergyBackend:
    name = "abstract"
    deterministic = True

    def evaluate(self, cloud: AtomCloud) -> float:
        raise NotImplementedError

    def __call__(self, cloud: AtomCloud) -> float:
        return self.evaluate(cloud)


class SurrogateBackend(EnergyBackend):
    name = "surrogate"

    def __init__(self, params: SurrogateParams | None = None):
        self.params = params or SurrogateParams()

    def evaluate(self, cloud):
        return surrogate_energy(cloud, self.params)


class ConstantBackend(EnergyBackend):
    """Returns the same energy for every cloud; useful for exercising the env."""

    name = "constant"

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def evaluate(self, cloud):
        return self.value


class CachedBackend(EnergyBackend):
    """Memoizes a backend on the cloud's content hash (positions quantized to 1e-6 A)."""

    def __init__(self, inner: EnergyBackend, max_entries: int = 100_000):
        self.inner = inner
        self.name = inner.name
        self.deterministic = inner.deterministic
        self.max_entries = max_entries
        self._cache: dict[str, float] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def evaluate(self, cloud):
        key = cloud.content_hash()
        with self._lock:
            if key in self._cache:
                self.hits += 1
                return self._cache[key]
        value = self.inner.evaluate(cloud)
        with self._lock:
            self.misses += 1
            if len(self._cache) >= self.max_entries:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = value
        return value


@dataclass(frozen=True)
class AdapterConfig:
    """External program adapter.

    ``command`` is a shell-style template; ``{xyz}`` is replaced with the path
    of a temporary XYZ file.  The program must print one number on stdout,
    which is multiplied by ``unit_factor`` (e.g. 627.509 for hartree).
    """

    command: str
    unit_factor: float = 1.0
    timeout: float = 60.0


def external_backend_evaluate(cloud: AtomCloud, config: AdapterConfig) -> float:
    with tempfile.TemporaryDirectory(prefix="fragforge-") as tmp:
        path = os.path.join(tmp, "input.xyz")
        with open(path, "w") as fh:
            fh.write(write_xyz(cloud, "fragforge energy request") + "\n")
        argv = [part.replace("{xyz}", path) for part in shlex.split(config.command)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=config.timeout)
        except subprocess.TimeoutExpired:
            raise EnergyTimeout(f"energy program exceeded {config.timeout}s") from None
        except OSError as exc:
            raise EnergyError(f"could not start energy program: {exc}") from None
    if proc.returncode != 0:
        raise EnergyError(f"energy program exited with {proc.returncode}: {proc.stderr.strip()[:200]}")
    text = proc.stdout.strip()
    try:
        value = float(text)
    except ValueError:
        raise EnergyError(f"cannot parse energy from output {text[:80]!r}") from None
    if not math.isfinite(value):
        raise EnergyError(f"energy program returned {value}")
    return value * config.unit_factor


class ExternalBackend(EnergyBackend):
    name = "external"

    def __init__(self, config: AdapterConfig):
        self.config = config
        self._lock = threading.Lock()  # one in-flight process per backend instance

    def evaluate(self, cloud):
        with self._lock:
            return external_backend_evaluate(cloud, self.config)


def step_reward(mol_without_h: AtomCloud, fragment_without_h: AtomCloud, mol_next: AtomCloud,
                backend: EnergyBackend) -> float:
    """Negative energy of forming the new bond from two non-interacting blocks.

    Both blocks have their anchor hydrogen removed; the fragment is evaluated at
    its prior (library) geometry.
    """
    e_next = backend.evaluate(mol_next)
    e_parts = backend.evaluate(mol_without_h) + backend.evaluate(fragment_without_h)
    return -(e_next - e_parts)
