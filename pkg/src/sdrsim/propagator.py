"""Density-matrix propagation with KSM recombination kinetics.

Equation of motion (Haberkorn-type, not trace preserving):

    drho/dt = -i[H, rho] - (r_S/2){P_S, rho} - (r_T/2){P_T, rho} - d rho + (G/dim) I

optionally plus pure dephasing of each electron at rate ``dephasing``.
The trace of rho is the surviving pair population.

Piecewise-constant Hamiltonians are propagated by exact exponentiation of
the vectorized generator, augmented by one row/column carrying the
constant generation source.  Column-stacking vectorization is used:
vec(A X B) = (B^T kron A) vec(X).
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .spin import PAIR, SpinSystem, check_density, pair_projectors, spin_operator


class StepControlError(RuntimeError):
    def __init__(self, t: float, step: float, min_step: float):
        super().__init__(f"required step {step:.3e} s below minimum {min_step:.3e} s at t = {t:.6e} s")
        self.t = t


class SelfCheckError(RuntimeError):
    pass


class SteadyStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class KsmRates:
    """Pair kinetics: recombination r_S, r_T, dissociation d (1/s), generation G (pairs/s)."""

    r_S: float = 1e7
    r_T: float = 1e3
    d: float = 1e4
    G: float = 1e4
    dephasing: float = 0.0

    def __post_init__(self):
        for name in ("r_S", "r_T", "d", "G", "dephasing"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.r_S < self.r_T:
            raise ValueError("r_S must be >= r_T (spin selection rule)")

    @property
    def total(self) -> float:
        return self.r_S + self.r_T + self.d + self.dephasing


OFF = KsmRates(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StepControl:
    """Step policy for time-dependent Hamiltonians.

    ``eps`` bounds (||H|| + r_S + r_T + d) * h; ``samples`` is the number of
    output intervals; ``self_check`` repeats the run at half step and
    raises if any final-state entry moves by more than ``check_tol``.
    """

    samples: int = 100
    eps: float = 0.05
    min_step: float = 1e-18
    max_step: float = math.inf
    self_check: bool = False
    check_tol: float = 1e-8


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, dim, dim)
    observables: dict[str, np.ndarray] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        cols = ["trace", "pop_S", "pop_T-", "pop_T0", "pop_T+", "recomb_rate"]
        names = ["time", "trace", "pop_S", "pop_Tminus", "pop_T0", "pop_Tplus", "recomb_rate"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for k, t in enumerate(self.times):
                w.writerow([f"{t:.17g}"] + [f"{self.observables[c][k]:.17g}" for c in cols])


class Kinetics:
    """Cached projectors and superoperator pieces for one spin system and pair.

    For the pair system the recombining electrons are sites 0 and 1; for the
    readout system they are the P and db electrons.
    """

    def __init__(self, system: SpinSystem = PAIR, site_a: int = 0, site_b: int = 1):
        self.system = system
        self.dim = system.dim
        p = pair_projectors(system, site_a, site_b)
        self.P_S = p[0]
        self.P_Tp, self.P_T0, self.P_Tm = p[1:]
        self.P_T = self.P_Tp + self.P_T0 + self.P_Tm
        self.electron_sz = [spin_operator(system, k, "z") for k in range(len(system.sites)) if system.is_electron(k)]
        n = self.dim
        self._eye = np.eye(n, dtype=complex)
        self._vec_eye = self._eye.reshape(-1, order="F")

    def vec(self, rho: np.ndarray) -> np.ndarray:
        return np.asarray(rho).reshape(-1, order="F")

    def unvec(self, v: np.ndarray) -> np.ndarray:
        n = self.dim
        return v.reshape(v.shape[:-1] + (n, n), order="F") if v.ndim > 1 else v.reshape(n, n, order="F")

    def liouvillian(self, h: np.ndarray, rates: KsmRates) -> np.ndarray:
        """Homogeneous generator (no source) acting on vec(rho); h may be batched."""
        h = np.asarray(h, dtype=complex)
        eye = self._eye
        k = 0.5 * (rates.r_S * self.P_S + rates.r_T * self.P_T) + 0.5 * rates.d * eye
        heff = h - 1j * k  # non-Hermitian effective Hamiltonian
        # d rho = -i heff rho + i rho heff^dagger
        left = np.kron(eye, heff) if h.ndim == 2 else np.einsum("ij,bkl->bikjl", eye, heff).reshape(h.shape[0], self.dim**2, self.dim**2)
        right = np.kron(heff.conj(), eye) if h.ndim == 2 else np.einsum("bij,kl->bikjl", heff.conj(), eye).reshape(h.shape[0], self.dim**2, self.dim**2)
        gen = -1j * left + 1j * right
        if rates.dephasing:
            n2 = self.dim**2
            deph = np.zeros((n2, n2), dtype=complex)
            for sz in self.electron_sz:
                deph += rates.dephasing * (2.0 * np.kron(sz.T, sz) - 0.5 * np.eye(n2))
            gen = gen + deph
        return gen

    def augmented(self, h: np.ndarray, rates: KsmRates) -> np.ndarray:
        """[[L, s], [0, 0]] with s = vec(G/dim * I); exp(t M) propagates (vec rho, 1)."""
        gen = self.liouvillian(h, rates)
        n2 = self.dim**2
        batch = gen.shape[:-2]
        m = np.zeros(batch + (n2 + 1, n2 + 1), dtype=complex)
        m[..., :n2, :n2] = gen
        m[..., :n2, n2] = rates.G / self.dim * self._vec_eye
        return m

    def propagator(self, h: np.ndarray, rates: KsmRates, dt) -> np.ndarray:
        """exp(M dt); h and dt may be batched (broadcast over leading axes)."""
        m = self.augmented(h, rates)
        dt = np.asarray(dt, dtype=float)
        return expm(m * dt[..., None, None]) if dt.ndim else expm(m * float(dt))

    def propagator_with_rate_integral(self, h: np.ndarray, rates: KsmRates, dt, functional: np.ndarray):
        """(exp(M dt), int_0^dt c exp(M s) ds) for a row functional c.

        Uses the block exponential exp([[M, 0], [c, 0]] dt), whose last row
        carries the integral; batched like :meth:`propagator`.
        """
        m = self.augmented(h, rates)
        n = m.shape[-1]
        big = np.zeros(m.shape[:-2] + (n + 1, n + 1), dtype=complex)
        big[..., :n, :n] = m
        big[..., n, :n] = functional
        dt = np.asarray(dt, dtype=float)
        e = expm(big * (dt[..., None, None] if dt.ndim else float(dt)))
        return e[..., :n, :n], e[..., n, :n]

    def apply(self, prop: np.ndarray, rho: np.ndarray) -> np.ndarray:
        v = np.append(self.vec(rho), 1.0)
        out = prop @ v
        return self.unvec(out[:-1])

    def observables(self, states: np.ndarray, rates: KsmRates) -> dict[str, np.ndarray]:
        states = np.asarray(states)

        def tr(op):
            return np.einsum("ij,...ji->...", op, states).real

        pops = {
            "pop_S": tr(self.P_S),
            "pop_T+": tr(self.P_Tp),
            "pop_T0": tr(self.P_T0),
            "pop_T-": tr(self.P_Tm),
        }
        pops["trace"] = np.einsum("...ii->...", states).real
        pops["recomb_rate"] = rates.r_S * pops["pop_S"] + rates.r_T * (pops["pop_T+"] + pops["pop_T0"] + pops["pop_T-"])
        return pops

    def rate_functional(self, rates: KsmRates) -> np.ndarray:
        """Row vector c with recombination_rate = c . (vec rho, 1)."""
        op = rates.r_S * self.P_S + rates.r_T * self.P_T
        # Tr(op rho) = sum_ij op_ji rho_ij = vec(op^T) . vec(rho)
        return np.append(self.vec(op.T), 0.0)


_KIN: dict[tuple, Kinetics] = {}


def kinetics_for(system: SpinSystem) -> Kinetics:
    key = system.sites
    if key not in _KIN:
        if system.sites == PAIR.sites:
            _KIN[key] = Kinetics(system, 0, 1)
        else:
            _KIN[key] = Kinetics(system, system.index("electron-P"), system.index("electron-db"))
    return _KIN[key]


def _system_for(dim: int) -> SpinSystem:
    from .spin import READOUT

    if dim == PAIR.dim:
        return PAIR
    if dim == READOUT.dim:
        return READOUT
    raise ValueError(f"no spin system of dimension {dim}")


def recombination_rate(rho: np.ndarray, rates: KsmRates) -> float:
    """r_S Tr(P_S rho) + r_T Tr(P_T rho)."""
    kin = kinetics_for(_system_for(np.shape(rho)[0]))
    obs = kin.observables(np.asarray(rho)[None], rates)
    return float(obs["recomb_rate"][0])


def _hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + rho.conj().swapaxes(-1, -2))


def evolve(
    rho0: np.ndarray,
    h_of_t: np.ndarray | Callable[[float], np.ndarray],
    rates: KsmRates,
    t0: float,
    t1: float,
    ctrl: StepControl = StepControl(),
) -> Trajectory:
    """Propagate rho0 from t0 to t1 and sample ``ctrl.samples`` intervals.

    A constant Hamiltonian (array) is propagated exactly.  A callable is
    discretized at step midpoints with h chosen so that
    (||H(t)|| + rates) * h <= ctrl.eps.
    """
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    rho0 = check_density(rho0)
    kin = kinetics_for(_system_for(rho0.shape[0]))
    times = np.linspace(t0, t1, ctrl.samples + 1)
    states = np.empty((len(times), kin.dim, kin.dim), dtype=complex)
    states[0] = rho0

    if not callable(h_of_t):
        prop = kin.propagator(np.asarray(h_of_t), rates, (t1 - t0) / ctrl.samples)
        v = np.append(kin.vec(rho0), 1.0)
        for k in range(1, len(times)):
            v = prop @ v
            states[k] = kin.unvec(v[:-1])
    else:
        final = _evolve_tdep(kin, rho0, h_of_t, rates, times, ctrl, states)
        if ctrl.self_check:
            fine = StepControl(ctrl.samples, ctrl.eps / 2, ctrl.min_step, ctrl.max_step / 2)
            ref = _evolve_tdep(kin, rho0, h_of_t, rates, times, fine, None)
            diff = float(np.max(np.abs(ref - final)))
            if diff > ctrl.check_tol:
                raise SelfCheckError(f"step halving moved the final state by {diff:.3e} > {ctrl.check_tol:.1e}")

    states = _hermitize(states)
    return Trajectory(times, states, kin.observables(states, rates))


def _plan_steps(h_of_t, rates, t_start, t_end, ctrl):
    """Midpoint Hamiltonians and step lengths covering [t_start, t_end]."""
    hs, dts = [], []
    t = t_start
    while t < t_end - 1e-15 * max(1.0, abs(t_end)):
        h = min(t_end - t, ctrl.max_step)
        while True:
            hm = h_of_t(t + 0.5 * h)
            bound = ctrl.eps / (np.linalg.norm(hm, 2) + rates.total + 1e-300)
            if h <= bound * (1 + 1e-12):
                break
            h = min(bound, h / 2)
            if h < ctrl.min_step:
                raise StepControlError(t, h, ctrl.min_step)
        hs.append(hm)
        dts.append(h)
        t += h
    return hs, dts


def _evolve_tdep(kin, rho0, h_of_t, rates, times, ctrl, states, chunk=4096):
    v = np.append(kin.vec(rho0), 1.0)
    for k in range(1, len(times)):
        hs, dts = _plan_steps(h_of_t, rates, times[k - 1], times[k], ctrl)
        for lo in range(0, len(hs), chunk):
            props = kin.propagator(np.array(hs[lo:lo + chunk]), rates, np.array(dts[lo:lo + chunk]))
            for prop in props:
                v = prop @ v
        if states is not None:
            states[k] = kin.unvec(v[:-1])
    return kin.unvec(v[:-1])


def steady_state(h: np.ndarray, rates: KsmRates) -> np.ndarray:
    """Solve 0 = L rho + (G/dim) I for the stationary pair density."""
    if not (rates.r_S + rates.d > 0 and rates.r_T + rates.d > 0):
        raise SteadyStateError("no steady state: need r_S + d > 0 and r_T + d > 0")
    if not rates.G > 0:
        raise SteadyStateError("no steady state without generation (G > 0)")
    h = np.asarray(h, dtype=complex)
    kin = kinetics_for(_system_for(h.shape[0]))
    gen = kin.liouvillian(h, rates)
    src = rates.G / kin.dim * kin._vec_eye
    cond = np.linalg.cond(gen)
    if not np.isfinite(cond) or cond > 1e14:
        raise SteadyStateError(f"generator is singular or ill-conditioned (cond = {cond:.3e})")
    v = np.linalg.solve(gen, -src)
    rho = _hermitize(kin.unvec(v))
    return rho


def steady_state_residual(h: np.ndarray, rates: KsmRates, rho: np.ndarray) -> float:
    kin = kinetics_for(_system_for(np.shape(h)[0]))
    gen = kin.liouvillian(np.asarray(h, dtype=complex), rates)
    r = gen @ kin.vec(rho) + rates.G / kin.dim * kin._vec_eye
    return float(np.linalg.norm(r))


def normalized(rho: np.ndarray) -> np.ndarray:
    return rho / np.trace(rho).real
