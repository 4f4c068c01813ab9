"""Spin-1/2 operators, pair projectors and expectation values.

Conventions: hbar = 1, site 0 is the slowest-varying tensor index and
basis kets are enumerated with up = 0, down = 1.  For two spins the
product basis is |uu>, |ud>, |du>, |dd>, so |T-> = |dd> is index 3.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

ELECTRON_ROLES = ("electron-CE", "electron-db", "electron-P")
NUCLEUS_ROLES = ("nucleus-P",)

SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)
_PAULI_HALF = {"x": SX, "y": SY, "z": SZ}

UP = np.array([1, 0], dtype=complex)
DOWN = np.array([0, 1], dtype=complex)

HERMITIAN_TOL = 1e-12
EIGEN_TOL = 1e-9
TRACE_TOL = 1e-9
IMAG_TOL = 1e-10


class SpinAlgebraError(ValueError):
    pass


@dataclass(frozen=True)
class SpinSystem:
    """Ordered spin-1/2 sites, identified by unique role tags."""

    sites: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if len(self.sites) not in (2, 3):
            raise SpinAlgebraError(f"expected 2 or 3 sites, got {len(self.sites)}")
        if len(set(self.sites)) != len(self.sites):
            raise SpinAlgebraError(f"site roles must be unique: {self.sites}")
        for role in self.sites:
            if role not in ELECTRON_ROLES + NUCLEUS_ROLES:
                raise SpinAlgebraError(f"unknown site role {role!r}")

    @property
    def dim(self) -> int:
        return 2 ** len(self.sites)

    def index(self, role: str) -> int:
        try:
            return self.sites.index(role)
        except ValueError:
            raise SpinAlgebraError(f"no site with role {role!r} in {self.sites}") from None

    def is_electron(self, site: int) -> bool:
        return self.sites[site] in ELECTRON_ROLES


PAIR = SpinSystem(("electron-CE", "electron-db"))
READOUT = SpinSystem(("electron-P", "electron-db", "nucleus-P"))


@functools.lru_cache(maxsize=None)
def _embedded(system: SpinSystem, site: int, axis: str) -> np.ndarray:
    factors = [_PAULI_HALF[axis] if k == site else np.eye(2, dtype=complex) for k in range(len(system.sites))]
    op = functools.reduce(np.kron, factors)
    op.setflags(write=False)
    return op


def spin_operator(system: SpinSystem, site: int, axis: str) -> np.ndarray:
    """S_axis of one site, tensored with identities elsewhere."""
    if not 0 <= site < len(system.sites):
        raise SpinAlgebraError(f"site {site} out of range for {len(system.sites)} sites")
    if axis not in _PAULI_HALF:
        raise SpinAlgebraError(f"axis must be one of x, y, z; got {axis!r}")
    return _embedded(system, site, axis).copy()


def spin_vector(system: SpinSystem, site: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return tuple(spin_operator(system, site, ax) for ax in "xyz")


def dot(system: SpinSystem, site_a: int, site_b: int) -> np.ndarray:
    """S_a . S_b."""
    return sum(a @ b for a, b in zip(spin_vector(system, site_a), spin_vector(system, site_b)))


def total_sz(system: SpinSystem) -> np.ndarray:
    """Total z-projection over all sites (electrons and nuclei alike)."""
    return sum(spin_operator(system, k, "z") for k in range(len(system.sites)))


def pair_states() -> dict[str, np.ndarray]:
    """Singlet and triplet kets of a bare two-spin pair."""
    uu, ud, du, dd = np.eye(4, dtype=complex)
    return {
        "S": (ud - du) / np.sqrt(2),
        "T+": uu,
        "T0": (ud + du) / np.sqrt(2),
        "T-": dd,
    }


def _pair_restricted(system: SpinSystem, site_a: int, site_b: int, pair_op: np.ndarray) -> np.ndarray:
    # Permute a 4x4 operator on (a, b) into the full site order, identity elsewhere.
    n = len(system.sites)
    others = [k for k in range(n) if k not in (site_a, site_b)]
    full = np.kron(pair_op, np.eye(2 ** len(others), dtype=complex))
    order = [site_a, site_b] + others
    perm = np.argsort(order)
    t = full.reshape([2] * (2 * n))
    t = t.transpose(list(perm) + [n + p for p in perm])
    return t.reshape(system.dim, system.dim)


def pair_projectors(system: SpinSystem, site_a: int, site_b: int):
    """Singlet and triplet projectors (P_S, P_T+, P_T0, P_T-) of two electron sites.

    P_S is built as 1/4 - S_a.S_b; the triplet projectors come from the
    explicit kets.  The two routes are cross-checked in the tests.
    """
    n = len(system.sites)
    if site_a == site_b:
        raise SpinAlgebraError("pair projectors need two distinct sites")
    for s in (site_a, site_b):
        if not 0 <= s < n:
            raise SpinAlgebraError(f"site {s} out of range for {n} sites")
        if not system.is_electron(s):
            raise SpinAlgebraError(f"site {s} ({system.sites[s]}) is not an electron site")
    p_s = 0.25 * np.eye(system.dim, dtype=complex) - dot(system, site_a, site_b)
    kets = pair_states()
    trip = tuple(
        _pair_restricted(system, site_a, site_b, np.outer(kets[k], kets[k].conj()))
        for k in ("T+", "T0", "T-")
    )
    return (p_s,) + trip


def product_ket(*spins: str) -> np.ndarray:
    """Product ket from a string of 'u'/'d' per site, e.g. product_ket('d', 'd')."""
    vecs = {"u": UP, "d": DOWN}
    return functools.reduce(np.kron, [vecs[s] for s in spins])


def ket_to_dm(ket: np.ndarray) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def is_hermitian(op: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    op = np.asarray(op)
    scale = max(1.0, float(np.max(np.abs(op)))) if op.size else 1.0
    return bool(np.max(np.abs(op - op.conj().T)) <= tol * scale)


def check_density(rho: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Validate a density matrix; returns it as a complex array.

    Trace below 1 is allowed and encodes pairs lost to recombination or
    dissociation.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise SpinAlgebraError(f"density matrix must be square, got shape {rho.shape}")
    if dim is not None and rho.shape[0] != dim:
        raise SpinAlgebraError(f"density matrix has dim {rho.shape[0]}, expected {dim}")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise SpinAlgebraError("density matrix is not Hermitian")
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -EIGEN_TOL:
        raise SpinAlgebraError(f"density matrix has negative eigenvalue {evals.min():.3e}")
    tr = float(np.trace(rho).real)
    if not -TRACE_TOL <= tr <= 1 + TRACE_TOL:
        raise SpinAlgebraError(f"density matrix trace {tr} outside [0, 1]")
    return rho


def expectation(rho: np.ndarray, obs: np.ndarray) -> float:
    """Tr(rho obs) for a Hermitian observable."""
    rho = np.asarray(rho)
    obs = np.asarray(obs)
    if rho.shape != obs.shape:
        raise SpinAlgebraError(f"dimension mismatch: rho {rho.shape} vs obs {obs.shape}")
    if not is_hermitian(obs):
        raise SpinAlgebraError("observable is not Hermitian")
    val = np.trace(rho @ obs)
    if abs(val.imag) > IMAG_TOL:
        raise SpinAlgebraError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex) / dim
