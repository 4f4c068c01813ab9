"""Recombination readout of a 31P nuclear spin.

Sequence per shot: thermal initialization with the exchange off, a slow
exchange ramp that turns |T-, up_n> adiabatically into the singlet (while
|T-, down_n> is an exact eigenstate and stays put), a recombination window
at constant exchange, a weak laser flash, and a threshold decision on the
photoconductivity left after tau_decay.

Bit convention: 1 <=> charged <=> singlet-forming nuclear orientation
(nucleus "up" with the default Hamiltonian signs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants
from scipy.optimize import minimize_scalar

from .hamiltonians import (
    ExchangeRamp,
    ReadoutSpinParams,
    _OPS,
    ramp_rate,
    ramp_values,
    readout_hamiltonian,
    readout_sectors,
)
from .propagator import KsmRates, StepControl, evolve, kinetics_for
from .spin import READOUT, check_density

HBAR_OVER_KB = constants.hbar / constants.k


class ReadoutError(ValueError):
    pass


@dataclass(frozen=True)
class FlashParams:
    photon_energy: float = 2.0  # eV
    power: float = 3.2e-9  # W
    duration: float = 1e-9  # s
    quantum_efficiency: float = 1.0

    def __post_init__(self):
        for name in ("photon_energy", "power", "duration", "quantum_efficiency"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.quantum_efficiency > 1:
            raise ValueError("quantum_efficiency must be <= 1")
        if self.photon_energy == 0:
            raise ValueError("photon_energy must be > 0")


def geometric_threshold(k_slow: float, k_trap: float, tau_decay: float) -> float:
    """Geometric mean of the neutral and charged deterministic levels at tau_decay."""
    return math.exp(-(k_slow + 0.5 * k_trap) * tau_decay)


@dataclass(frozen=True)
class ClassifierParams:
    k_slow: float = 1e4
    k_trap: float = 2e6
    tau_decay: float = 2e-6
    threshold: float | None = None  # None: calibrated geometric mean

    def __post_init__(self):
        if not self.k_trap > 0:
            raise ValueError("k_trap must be > 0")
        if self.k_slow < 0:
            raise ValueError("k_slow must be >= 0")
        if not self.tau_decay > 0:
            raise ValueError("tau_decay must be > 0")
        if self.threshold is None:
            object.__setattr__(self, "threshold", geometric_threshold(self.k_slow, self.k_trap, self.tau_decay))
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")


def default_readout_rates() -> KsmRates:
    return KsmRates(r_S=5e6, r_T=0.0, d=0.0, G=0.0)


@dataclass(frozen=True)
class ReadoutParams:
    spins: ReadoutSpinParams = field(default_factory=ReadoutSpinParams)
    ramp: ExchangeRamp = field(default_factory=ExchangeRamp)
    rates: KsmRates = field(default_factory=default_readout_rates)
    tau_life: float = 1e-6
    temperature: float = 0.02
    flash: FlashParams = field(default_factory=FlashParams)
    classifier: ClassifierParams = field(default_factory=ClassifierParams)
    decay_mode: str = "stochastic"

    def __post_init__(self):
        if not self.tau_life > 0:
            raise ValueError("tau_life must be > 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.rates.d != 0:
            raise ValueError("dissociation must be 0 in readout mode")
        if self.decay_mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown decay_mode {self.decay_mode!r}")


# -- initialization ---------------------------------------------------------

def _bit_ket(bit: str) -> np.ndarray:
    if bit not in ("up", "down"):
        raise ReadoutError(f"nuclear bit must be 'up' or 'down', got {bit!r}")
    return np.array([1, 0], dtype=complex) if bit == "up" else np.array([0, 1], dtype=complex)


def thermal_initial_state(spins: ReadoutSpinParams, temperature: float, nuclear_bit: str) -> np.ndarray:
    """Boltzmann electron pair (Zeeman terms only) times a pure nuclear state."""
    if not temperature > 0:
        raise ReadoutError("temperature must be > 0")
    nuc = _bit_ket(nuclear_bit)
    # electron Zeeman energies in rad/s for |uu>, |ud>, |du>, |dd>
    e = np.array([
        0.5 * (spins.omega_P + spins.omega_db),
        0.5 * (spins.omega_P - spins.omega_db),
        0.5 * (-spins.omega_P + spins.omega_db),
        -0.5 * (spins.omega_P + spins.omega_db),
    ])
    beta = HBAR_OVER_KB / temperature
    logw = -beta * (e - e.min())
    w = np.exp(logw)
    w /= w.sum()
    rho_el = np.diag(w).astype(complex)
    return np.kron(rho_el, np.outer(nuc, nuc.conj()))


# -- adiabatic sweep --------------------------------------------------------

@dataclass(frozen=True)
class SweepControl:
    """Step rule for the exchange ramp.

    Each step uses the exact propagator of H at the step midpoint.  The
    step is chosen so the leading error of that approximation, an
    effective energy shift h^2 (||[H, dH/dt]|| / 12 + ||d2H/dt2|| / 24),
    stays below ``rel_tol`` times the smallest coupled gap (or 1/T).
    """

    rel_tol: float = 1e-4
    min_steps: int = 200
    max_steps: int = 4_000_000
    chunk: int = 65536


@dataclass
class SweepResult:
    rho: np.ndarray
    min_gap: float
    final_singlet_content: float
    j_cross: float
    sweep_rate: float  # slope of the diabatic energy difference at the crossing
    adiabatic_population: float
    n_steps: int

    @property
    def diabatic_survival(self) -> float:
        return 1.0 - self.adiabatic_population

    @property
    def landau_zener(self) -> float:
        if not (math.isfinite(self.min_gap) and self.sweep_rate > 0):
            return math.nan
        return math.exp(-2 * math.pi * (self.min_gap / 2) ** 2 / self.sweep_rate)


_SECTORS = readout_sectors()
_X = _OPS["SP.Sdb"]


def _sector_of(state: int) -> int:
    for si, idx in enumerate(_SECTORS):
        if state in idx:
            return si
    raise AssertionError


def _dominant_state(rho0: np.ndarray) -> tuple[int, np.ndarray]:
    w, v = np.linalg.eigh(rho0)
    ket = v[:, -1]
    # sector with the dominant weight of that ket
    weights = [np.sum(np.abs(ket[idx]) ** 2) for idx in _SECTORS]
    return int(np.argmax(weights)), ket


def _sector_levels(spins, j, si):
    idx = _SECTORS[si]
    h = readout_hamiltonian(spins, j)[np.ix_(idx, idx)]
    return np.linalg.eigh(h)


def _branch_gap(spins, j, si, b):
    w, _ = _sector_levels(spins, j, si)
    gaps = [abs(w[b] - w[k]) for k in (b - 1, b + 1) if 0 <= k < len(w)]
    return min(gaps) if gaps else math.inf


def _branch_index(spins, j, si, ket):
    idx = _SECTORS[si]
    w, v = _sector_levels(spins, j, si)
    ov = np.abs(v.conj().T @ ket[idx]) ** 2
    return int(np.argmax(ov))


def branch_crossing(spins: ReadoutSpinParams, j_max: float, si: int, b: int, n_grid: int = 2001):
    """(min gap, j at min gap, diabatic slope difference d(dE)/dj) for a sector branch.

    Levels inside one conserved sector never cross, so the branch keeps its
    sorted index.  The diabatic slope difference is the eigenvalue spread
    of dH/dj = S_P.S_db projected on the two levels at the avoided crossing.
    """
    if len(_SECTORS[si]) == 1:
        return math.inf, math.nan, math.nan
    grid = np.linspace(0.0, j_max, n_grid)
    gaps = np.array([_branch_gap(spins, j, si, b) for j in grid])
    k = int(np.argmin(gaps))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    if hi > lo:
        res = minimize_scalar(lambda j: _branch_gap(spins, j, si, b), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-9 * max(j_max, 1.0)})
        j_c, g = float(res.x), float(res.fun)
        if gaps[k] < g:
            j_c, g = float(grid[k]), float(gaps[k])
    else:
        j_c, g = float(grid[k]), float(gaps[k])
    w, v = _sector_levels(spins, j_c, si)
    partner = b + 1 if b + 1 < len(w) and (b == 0 or abs(w[b + 1] - w[b]) <= abs(w[b] - w[b - 1])) else b - 1
    idx = _SECTORS[si]
    x = _X[np.ix_(idx, idx)]
    two = v[:, [b, partner]]
    xe = two.conj().T @ x @ two
    slopes = np.linalg.eigvalsh(xe)
    return g, j_c, float(abs(slopes[1] - slopes[0]))


def _ramp_time_at(ramp: ExchangeRamp, j: float) -> float:
    x = min(max(j / ramp.j_max, 0.0), 1.0) if ramp.j_max > 0 else 0.0
    if ramp.shape == "linear":
        return x * ramp.tau_slope
    return ramp.tau_slope * math.acos(1.0 - 2.0 * x) / math.pi


def _commutator_norm(spins: ReadoutSpinParams) -> float:
    h0 = readout_hamiltonian(spins, 0.0)
    return float(np.linalg.norm(h0 @ _X - _X @ h0, 2))


def _step_size(spins, ramp, ctrl, gap_scale):
    jdot = ramp.j_max / ramp.tau_slope * (1.0 if ramp.shape == "linear" else math.pi / 2)
    jddot = 0.0 if ramp.shape == "linear" else ramp.j_max * math.pi**2 / (2 * ramp.tau_slope**2)
    coeff = jdot * _commutator_norm(spins) / 12 + jddot * np.linalg.norm(_X, 2) / 24
    if coeff == 0:
        return ramp.tau_slope / ctrl.min_steps
    return math.sqrt(ctrl.rel_tol * gap_scale / coeff)


def _block_unitaries(spins, j_mid, h, idx):
    o = {k: v[np.ix_(idx, idx)] for k, v in _OPS.items()}
    base = (spins.omega_P * o["SzP"] + spins.omega_db * o["Szdb"] - spins.omega_n * o["Iz"]
            + spins.hyperfine_A * o["SP.I"])
    hb = base[None] + j_mid[:, None, None] * o["SP.Sdb"][None]
    w, v = np.linalg.eigh(hb)
    return np.einsum("bij,bj,bkj->bik", v, np.exp(-1j * w * h), v.conj())


def _ordered_product(us: np.ndarray) -> np.ndarray:
    """u[n-1] @ ... @ u[1] @ u[0] by pairwise reduction."""
    while us.shape[0] > 1:
        if us.shape[0] % 2:
            us = np.concatenate([us, np.eye(us.shape[1], dtype=complex)[None]], axis=0)
        us = np.matmul(us[1::2], us[0::2])
    return us[0]


def sweep_unitary(spins: ReadoutSpinParams, ramp: ExchangeRamp, n_steps: int, chunk: int = 65536) -> np.ndarray:
    """Block-diagonal propagator over the ramp (and hold) with n_steps midpoint steps."""
    h = ramp.tau_slope / n_steps
    u = np.zeros((READOUT.dim, READOUT.dim), dtype=complex)
    for idx in _SECTORS:
        ub = np.eye(len(idx), dtype=complex)
        for lo in range(0, n_steps, chunk):
            hi = min(n_steps, lo + chunk)
            t_mid = (np.arange(lo, hi) + 0.5) * h
            ub = _ordered_product(_block_unitaries(spins, ramp_values(ramp, t_mid), h, idx)) @ ub
        if ramp.hold > 0:
            ub = _block_unitaries(spins, np.array([ramp.j_max]), ramp.hold, idx)[0] @ ub
        u[np.ix_(idx, idx)] = ub
    return u


def adiabatic_sweep(rho0: np.ndarray, spins: ReadoutSpinParams, ramp: ExchangeRamp,
                    ctrl: SweepControl = SweepControl(), n_steps: int | None = None) -> SweepResult:
    """Unitary evolution through the exchange ramp (and hold).

    Diagnostics refer to the branch carrying the dominant eigenvector of
    rho0: its minimum gap to a coupled level, the diabatic sweep rate at
    that avoided crossing, and its final adiabatic population.
    """
    rho0 = check_density(rho0, READOUT.dim)
    si, ket = _dominant_state(rho0)
    b = _branch_index(spins, 0.0, si, ket)
    gap, j_c, slope = branch_crossing(spins, ramp.j_max, si, b)
    if math.isfinite(gap) and ramp.j_max > 0:
        t_c = _ramp_time_at(ramp, j_c)
        rate = slope * max(ramp_rate(ramp, min(t_c, ramp.tau_slope * (1 - 1e-12))), 0.0)
    else:
        rate = math.nan

    if n_steps is None and not math.isfinite(gap):
        # isolated branch: an exact eigenstate at every j, no step error
        n_steps = ctrl.min_steps
    elif n_steps is None:
        h = _step_size(spins, ramp, ctrl, max(gap, 1.0 / ramp.tau_slope))
        n_steps = max(ctrl.min_steps, math.ceil(ramp.tau_slope / h))
        if n_steps > ctrl.max_steps:
            raise ReadoutError(f"exchange ramp needs {n_steps} steps, above the limit of {ctrl.max_steps}")
    u = sweep_unitary(spins, ramp, n_steps, ctrl.chunk)
    rho = u @ rho0 @ u.conj().T
    rho = 0.5 * (rho + rho.conj().T)

    kin = kinetics_for(READOUT)
    sc = float(np.trace(kin.P_S @ rho).real)
    w, v = _sector_levels(spins, ramp.j_max, si)
    idx = _SECTORS[si]
    vec = np.zeros(READOUT.dim, dtype=complex)
    vec[idx] = v[:, b]
    p_ad = float(np.real(vec.conj() @ rho @ vec)) / float(np.trace(rho).real)
    return SweepResult(rho, gap, sc, j_c, rate, p_ad, n_steps)


# -- recombination window ---------------------------------------------------

def recombination_window(rho: np.ndarray, rates: KsmRates, tau_life: float, spins: ReadoutSpinParams,
                         j_hold: float) -> tuple[float, np.ndarray]:
    """Probability that the pair recombined (charging P+/db-) within tau_life.

    Returns (p_charged, surviving density matrix).  Generation is switched
    off; dissociation is rejected because it would conflate escape with a
    readout event.
    """
    if not tau_life > 0:
        raise ReadoutError("tau_life must be > 0")
    if rates.d != 0:
        raise ReadoutError("dissociation d must be 0 in readout mode")
    rho = check_density(rho, READOUT.dim)
    kin = kinetics_for(READOUT)
    h = readout_hamiltonian(spins, j_hold)
    if rates.dephasing:
        traj = evolve(rho, h, replace(rates, G=0.0), 0.0, tau_life, StepControl(samples=1))
        out = traj.states[-1]
    else:
        heff = h - 0.5j * (rates.r_S * kin.P_S + rates.r_T * kin.P_T)
        w, v = np.linalg.eig(heff)
        u = v @ np.diag(np.exp(-1j * w * tau_life)) @ np.linalg.inv(v)
        out = u @ rho @ u.conj().T
        out = 0.5 * (out + out.conj().T)
    p = 1.0 - float(np.trace(out).real) / float(np.trace(rho).real)
    return min(max(p, 0.0), 1.0), out


# -- flash and classification -----------------------------------------------

def photon_budget(f: FlashParams) -> int:
    """Electron-hole pairs generated by a flash."""
    joules = f.photon_energy * constants.e
    return int(round(f.power * f.duration * f.quantum_efficiency / joules))


@dataclass(frozen=True)
class ConductivityTrace:
    times: np.ndarray
    level: np.ndarray  # sigma(t) / sigma(0)


def decay_rate(charged: bool, c: ClassifierParams) -> float:
    return c.k_slow + (c.k_trap if charged else 0.0)


def flash_decay(charged: bool, n_pairs: int, c: ClassifierParams, horizon: float,
                mode: str = "deterministic", rng: np.random.Generator | None = None,
                n_points: int = 401) -> ConductivityTrace:
    """Normalized photoconductivity after the flash.

    The stochastic mode draws one exponential lifetime per carrier and
    returns the surviving fraction; with no carriers nothing decays and
    the trace stays at 1.
    """
    if n_pairs < 0:
        raise ReadoutError("n_pairs must be >= 0")
    if not horizon > 0:
        raise ReadoutError("horizon must be > 0")
    t = np.linspace(0.0, horizon, n_points)
    if c.tau_decay <= horizon and c.tau_decay not in t:
        t = np.sort(np.append(t, c.tau_decay))
    k = decay_rate(charged, c)
    if mode == "deterministic":
        return ConductivityTrace(t, np.exp(-k * t))
    if mode != "stochastic":
        raise ReadoutError(f"unknown mode {mode!r}")
    if n_pairs == 0:
        return ConductivityTrace(t, np.ones_like(t))
    if rng is None:
        raise ReadoutError("stochastic mode needs an rng")
    life = lifetimes(rng, n_pairs, k)
    return ConductivityTrace(t, surviving_fraction(life, t))


def lifetimes(rng: np.random.Generator, n: int, k: float) -> np.ndarray:
    if k == 0:
        return np.full(n, np.inf)
    return rng.exponential(1.0 / k, size=n)


def surviving_fraction(life: np.ndarray, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return (life[:, None] > t.ravel()[None, :]).mean(axis=0).reshape(t.shape)


def classify_readout(trace: ConductivityTrace, c: ClassifierParams) -> int:
    """1 if sigma(tau_decay)/sigma(0) fell below the threshold, else 0."""
    if not trace.times[0] <= c.tau_decay <= trace.times[-1]:
        raise ReadoutError("tau_decay lies outside the trace")
    level = float(np.interp(c.tau_decay, trace.times, trace.level)) / float(trace.level[0])
    return int(level < c.threshold)


def classifier_error_free(c: ClassifierParams) -> bool:
    """Both deterministic traces classified correctly."""
    horizon = 2 * c.tau_decay
    return (classify_readout(flash_decay(True, 1, c, horizon), c) == 1
            and classify_readout(flash_decay(False, 1, c, horizon), c) == 0)


# -- full pipeline ----------------------------------------------------------

@dataclass
class ShotPreparation:
    bit: str
    sweep: SweepResult
    p_charged: float


def prepare(p: ReadoutParams, bit: str, ctrl: SweepControl = SweepControl()) -> ShotPreparation:
    """Deterministic part of a shot: thermal state, exchange ramp, window.

    The ramp's own ``hold`` is not propagated here; the exchange plateau
    is the recombination window of length tau_life.
    """
    rho0 = thermal_initial_state(p.spins, p.temperature, bit)
    sw = adiabatic_sweep(rho0, p.spins, replace(p.ramp, hold=0.0), ctrl)
    pc, _ = recombination_window(sw.rho, replace(p.rates, G=0.0), p.tau_life, p.spins, p.ramp.j_max)
    return ShotPreparation(bit, sw, pc)


def trial_rng(seed: int, bit: str, trial: int) -> np.random.Generator:
    """Counter-based stream for one trial, independent of execution order."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[trial, 0 if bit == "down" else 1, 0, 0]))


def simulate_shots(prep: ShotPreparation, p: ReadoutParams, n_trials: int, seed: int,
                   n_pairs: int | None = None) -> np.ndarray:
    """Bits read in ``n_trials`` shots of one prepared nuclear state."""
    c = p.classifier
    n = photon_budget(p.flash) if n_pairs is None else int(n_pairs)
    out = np.empty(n_trials, dtype=np.int8)
    det_level = {ch: math.exp(-decay_rate(ch, c) * c.tau_decay) for ch in (False, True)}
    for trial in range(n_trials):
        rng = trial_rng(seed, prep.bit, trial)
        charged = bool(rng.random() < prep.p_charged)
        if p.decay_mode == "deterministic" or n == 0:
            level = det_level[charged] if p.decay_mode == "deterministic" else 1.0
        else:
            level = float(surviving_fraction(lifetimes(rng, n, decay_rate(charged, c)), c.tau_decay))
        out[trial] = level < c.threshold
    return out


@dataclass
class FidelityResult:
    p_read1_given_up: float
    p_read1_given_down: float
    n_pairs: int
    p_charged_up: float
    p_charged_down: float

    @property
    def contrast(self) -> float:
        return self.p_read1_given_up - self.p_read1_given_down

    @property
    def fidelity(self) -> float:
        return 0.5 * (1.0 + self.contrast)


def readout_fidelity(p: ReadoutParams, n_trials: int, seed: int, n_pairs: int | None = None,
                     preps: dict | None = None) -> FidelityResult:
    """Monte Carlo over the whole readout pipeline for both nuclear states."""
    if n_trials < 1:
        raise ReadoutError("n_trials must be >= 1")
    preps = preps or {bit: prepare(p, bit) for bit in ("up", "down")}
    up = simulate_shots(preps["up"], p, n_trials, seed, n_pairs)
    down = simulate_shots(preps["down"], p, n_trials, seed, n_pairs)
    n = photon_budget(p.flash) if n_pairs is None else int(n_pairs)
    return FidelityResult(float(up.mean()), float(down.mean()), n, preps["up"].p_charged, preps["down"].p_charged)


def nuclear_polarization(rho: np.ndarray) -> float:
    """<I_z> of the surviving ensemble (normalized by its trace)."""
    return float(np.trace(_OPS["Iz"] @ rho).real / np.trace(rho).real)
