"""Rotating-frame pair Hamiltonians and the three-spin readout Hamiltonian.

All coefficients are angular frequencies (rad/s), hbar = 1.

Model choices: rotating-wave drive acting on both electron spins (any
selectivity comes from detuning), isotropic exchange and hyperfine, no
dipolar terms.  The nuclear Zeeman term enters as -omega_n * I_z, so with
the default basis the nucleus-"up" state is the one whose flip-flop with
the donor electron opens the singlet channel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .spin import PAIR, READOUT, SpinSystem, dot, pair_projectors, spin_operator, total_sz

TWO_PI = 2 * math.pi


def mhz(f: float) -> float:
    """Frequency in MHz to angular frequency in rad/s."""
    return TWO_PI * 1e6 * f


@dataclass(frozen=True)
class PairParams:
    detuning_a: float = mhz(300.0)  # CE offset from the microwave frequency
    detuning_b: float = 0.0  # db offset
    exchange_J: float = 0.0

    def __post_init__(self):
        for name in ("detuning_a", "detuning_b", "exchange_J"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.exchange_J < 0:
            raise ValueError("exchange_J must be >= 0")


@dataclass(frozen=True)
class DriveParams:
    rabi_omega1: float = mhz(10.0)
    phase_deg: float = 0.0

    def __post_init__(self):
        if not self.rabi_omega1 >= 0:
            raise ValueError("rabi_omega1 must be >= 0")
        object.__setattr__(self, "phase_deg", float(self.phase_deg) % 360.0)


@dataclass(frozen=True)
class ReadoutSpinParams:
    # Non-literature-exact defaults: X-band electrons split by 30 MHz,
    # 31P hyperfine 117.53 MHz, nuclear Zeeman at the 60 MHz scale.
    omega_P: float = mhz(9700.0)
    omega_db: float = mhz(9730.0)
    omega_n: float = mhz(60.0)
    hyperfine_A: float = mhz(117.53)

    def __post_init__(self):
        if not (self.omega_P > 0 and self.omega_db > 0):
            raise ValueError("electron Zeeman frequencies must be > 0")
        if self.hyperfine_A < 0:
            raise ValueError("hyperfine_A must be >= 0")
        if self.omega_n < 0:
            raise ValueError("omega_n must be >= 0")


@dataclass(frozen=True)
class ExchangeRamp:
    j_max: float = mhz(20000.0)
    tau_slope: float = 5e-6
    shape: str = "raised-cosine"
    hold: float = 1e-6

    def __post_init__(self):
        if self.j_max < 0:
            raise ValueError("j_max must be >= 0")
        if not self.tau_slope > 0:
            raise ValueError("tau_slope must be > 0")
        if self.hold < 0:
            raise ValueError("hold must be >= 0")
        if self.shape not in ("linear", "raised-cosine"):
            raise ValueError(f"unknown ramp shape {self.shape!r}")

    @property
    def duration(self) -> float:
        return self.tau_slope + self.hold


_PAIR_OPS = {
    "sx": spin_operator(PAIR, 0, "x") + spin_operator(PAIR, 1, "x"),
    "sy": spin_operator(PAIR, 0, "y") + spin_operator(PAIR, 1, "y"),
    "sza": spin_operator(PAIR, 0, "z"),
    "szb": spin_operator(PAIR, 1, "z"),
    "sa.sb": dot(PAIR, 0, 1),
}


def rotating_pair_hamiltonian(p: PairParams, d: DriveParams) -> np.ndarray:
    o = _PAIR_OPS
    phi = math.radians(d.phase_deg)
    h = p.detuning_a * o["sza"] + p.detuning_b * o["szb"]
    h = h + d.rabi_omega1 * (math.cos(phi) * o["sx"] + math.sin(phi) * o["sy"])
    return h + p.exchange_J * o["sa.sb"]


def readout_operators(system: SpinSystem = READOUT) -> dict[str, np.ndarray]:
    ip, idb, inuc = (system.index(r) for r in ("electron-P", "electron-db", "nucleus-P"))
    return {
        "SzP": spin_operator(system, ip, "z"),
        "Szdb": spin_operator(system, idb, "z"),
        "Iz": spin_operator(system, inuc, "z"),
        "SP.I": dot(system, ip, inuc),
        "SP.Sdb": dot(system, ip, idb),
        "Jz": total_sz(system),
    }


_OPS = readout_operators()


def readout_hamiltonian(s: ReadoutSpinParams, j: float) -> np.ndarray:
    if j < 0:
        raise ValueError("exchange j must be >= 0")
    o = _OPS
    return (
        s.omega_P * o["SzP"]
        + s.omega_db * o["Szdb"]
        - s.omega_n * o["Iz"]
        + s.hyperfine_A * o["SP.I"]
        + j * o["SP.Sdb"]
    )


def readout_sectors() -> list[np.ndarray]:
    """Index sets of constant total m (product basis), highest m first."""
    m = np.real(np.diag(_OPS["Jz"]))
    return [np.flatnonzero(np.isclose(m, val)) for val in sorted(set(np.round(m, 6)), reverse=True)]


def ramp_value(r: ExchangeRamp, t: float) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    if t >= r.tau_slope:
        return r.j_max
    x = t / r.tau_slope
    if r.shape == "linear":
        return r.j_max * x
    return r.j_max * 0.5 * (1.0 - math.cos(math.pi * x))


def ramp_rate(r: ExchangeRamp, t: float) -> float:
    """dJ/dt of the ramp."""
    if t < 0 or t >= r.tau_slope:
        return 0.0
    if r.shape == "linear":
        return r.j_max / r.tau_slope
    return r.j_max * 0.5 * math.pi / r.tau_slope * math.sin(math.pi * t / r.tau_slope)


def ramp_values(r: ExchangeRamp, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    x = np.clip(t / r.tau_slope, 0.0, 1.0)
    if r.shape == "linear":
        return r.j_max * x
    return r.j_max * 0.5 * (1.0 - np.cos(np.pi * x))


@dataclass
class LevelDiagram:
    """Adiabatically tracked eigenbranches of the readout Hamiltonian.

    ``energies[k, b]`` and ``vectors[k, :, b]`` belong to branch ``b`` at
    grid point ``k``.  ``flagged`` lists (grid index, branch) pairs where
    the overlap match was ambiguous.
    """

    j: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    singlet_character: np.ndarray
    sector: np.ndarray
    flagged: list[tuple[int, int]] = field(default_factory=list)

    def branch_from(self, ket: np.ndarray) -> int:
        """Branch with largest overlap with ``ket`` at the first grid point."""
        ov = np.abs(self.vectors[0].conj().T @ ket) ** 2
        return int(np.argmax(ov))

    def write_csv(self, path) -> None:
        n = self.energies.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["j"] + [f"E_{b + 1}" for b in range(n)] + [f"singlet_character_{b + 1}" for b in range(n)])
            for k in range(len(self.j)):
                row = [self.j[k], *self.energies[k], *self.singlet_character[k]]
                w.writerow([f"{v:.17g}" for v in row])


AMBIGUITY_TOL = 1e-6


def instantaneous_spectrum(s: ReadoutSpinParams, j_grid) -> LevelDiagram:
    """Eigenvalues and continuity-tracked eigenvectors over an exchange grid.

    Diagonalization is done per conserved total-m sector so that exact
    crossings between sectors never mix eigenvectors; within a sector
    branches are matched to the previous grid point by maximum overlap
    (assignment problem on |<v_prev|v>|^2).
    """
    j_grid = np.asarray(j_grid, dtype=float)
    if j_grid.ndim != 1 or len(j_grid) == 0:
        raise ValueError("j_grid must be a non-empty 1-d sequence")
    if np.any(np.diff(j_grid) <= 0):
        raise ValueError("j_grid must be strictly increasing")
    p_s = pair_projectors(READOUT, READOUT.index("electron-P"), READOUT.index("electron-db"))[0]
    sectors = readout_sectors()
    dim = READOUT.dim
    nk = len(j_grid)
    energies = np.empty((nk, dim))
    vectors = np.zeros((nk, dim, dim), dtype=complex)
    sector_of = np.empty(dim, dtype=int)
    flagged: list[tuple[int, int]] = []

    col = 0
    cols = []
    for si, idx in enumerate(sectors):
        cols.append(np.arange(col, col + len(idx)))
        sector_of[col:col + len(idx)] = si
        col += len(idx)

    for k, j in enumerate(j_grid):
        h = readout_hamiltonian(s, j)
        for si, idx in enumerate(sectors):
            w, v = np.linalg.eigh(h[np.ix_(idx, idx)])
            if k == 0:
                order = np.arange(len(idx))
            else:
                prev = vectors[k - 1][np.ix_(idx, cols[si])]
                ov = np.abs(prev.conj().T @ v) ** 2  # [prev branch, new eigvec]
                rows, order = linear_sum_assignment(-ov)
                for b in range(len(idx)):
                    srt = np.sort(ov[b])[::-1]
                    if len(srt) > 1 and srt[0] - srt[1] < AMBIGUITY_TOL:
                        flagged.append((k, int(cols[si][b])))
            for b, e in enumerate(order):
                c = cols[si][b]
                vec = np.zeros(dim, dtype=complex)
                vec[idx] = v[:, e]
                if k > 0:
                    # fix the gauge so consecutive vectors have real positive overlap
                    ph = np.vdot(vectors[k - 1][:, c], vec)
                    if abs(ph) > 0:
                        vec = vec * (abs(ph) / ph)
                vectors[k][:, c] = vec
                energies[k, c] = w[e]

    sc = np.einsum("kib,ij,kjb->kb", vectors.conj(), p_s, vectors).real
    return LevelDiagram(j_grid, energies, vectors, sc, sector_of.copy(), flagged)
