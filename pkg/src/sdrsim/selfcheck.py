"""Invariant suites run by ``sdrsim selfcheck``.

Each suite returns a SuiteResult with the worst observed deviation and the
tolerance it was held to.  All inputs are fixed or drawn from a seeded
generator so a suite is itself reproducible.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hamiltonians import (
    DriveParams,
    ExchangeRamp,
    PairParams,
    ReadoutSpinParams,
    mhz,
    readout_hamiltonian,
    rotating_pair_hamiltonian,
)
from .propagator import OFF, KsmRates, StepControl, evolve, kinetics_for, steady_state, steady_state_residual
from .readout import adiabatic_sweep, thermal_initial_state
from .spin import PAIR, READOUT, ket_to_dm, pair_projectors, total_sz


@dataclass(frozen=True)
class SuiteResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tolerance)


def _random_pair_hamiltonian(rng) -> np.ndarray:
    p = PairParams(mhz(rng.uniform(-50, 50)), mhz(rng.uniform(-50, 50)), mhz(rng.uniform(0, 5)))
    return rotating_pair_hamiltonian(p, DriveParams(mhz(rng.uniform(1, 20)), rng.uniform(0, 360)))


def _random_density(rng, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def trace_preservation(seed: int = 0) -> SuiteResult:
    """Trace stays 1 with every rate off, for pair pulses and the readout ramp."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        traj = evolve(_random_density(rng, 4), _random_pair_hamiltonian(rng), OFF, 0.0, 500e-9, StepControl(samples=20))
        worst = max(worst, float(np.max(np.abs(traj.observables["trace"] - 1.0))))
    spins = ReadoutSpinParams()
    for bit in ("up", "down"):
        sw = adiabatic_sweep(thermal_initial_state(spins, 0.02, bit), spins, ExchangeRamp(tau_slope=50e-9, hold=0.0))
        worst = max(worst, abs(float(np.trace(sw.rho).real) - 1.0))
    return SuiteResult("trace_preservation", worst, 1e-9)


def trace_monotone(seed: int = 1) -> SuiteResult:
    """With G = 0 the trace never increases; worst = largest step-to-step rise."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        rates = KsmRates(r_S=rng.uniform(1e6, 1e7), r_T=rng.uniform(0, 1e5), d=rng.uniform(0, 1e5), G=0.0)
        traj = evolve(_random_density(rng, 4), _random_pair_hamiltonian(rng), rates, 0.0, 1e-6, StepControl(samples=200))
        worst = max(worst, float(np.max(np.diff(traj.observables["trace"]), initial=0.0)))
    return SuiteResult("trace_monotone_G0", max(worst, 0.0), 0.0)


def projector_algebra() -> SuiteResult:
    """P_i P_j = delta_ij P_i and sum P_i = 1 on the pair and readout spaces."""
    worst = 0.0
    for system, a, b in ((PAIR, 0, 1), (READOUT, READOUT.index("electron-P"), READOUT.index("electron-db"))):
        ps = pair_projectors(system, a, b)
        eye = np.eye(system.dim)
        worst = max(worst, float(np.max(np.abs(sum(ps) - eye))))
        for i, pi in enumerate(ps):
            for j, pj in enumerate(ps):
                target = pi if i == j else 0.0
                worst = max(worst, float(np.max(np.abs(pi @ pj - target))))
    return SuiteResult("projector_algebra", worst, 1e-12)


def jz_commutation(seed: int = 2) -> SuiteResult:
    """[H, J_z] = 0 for the readout Hamiltonian at any exchange."""
    rng = np.random.default_rng(seed)
    jz = total_sz(READOUT)
    worst = 0.0
    for _ in range(50):
        spins = ReadoutSpinParams(mhz(rng.uniform(1e3, 1e4)), mhz(rng.uniform(1e3, 1e4)),
                                  mhz(rng.uniform(0, 100)), mhz(rng.uniform(0, 200)))
        h = readout_hamiltonian(spins, mhz(rng.uniform(0, 2e4)))
        worst = max(worst, float(np.max(np.abs(h @ jz - jz @ h))))
    return SuiteResult("jz_commutation", worst, 1e-13)


def steady_state_checks(seed: int = 3) -> list[SuiteResult]:
    """Residual of the solved steady state and the H = 0 closed form."""
    rng = np.random.default_rng(seed)
    res = 0.0
    for _ in range(10):
        rates = KsmRates(r_S=rng.uniform(1e6, 1e7), r_T=rng.uniform(1e2, 1e4), d=rng.uniform(1e3, 1e5),
                         G=rng.uniform(1e3, 1e5))
        h = _random_pair_hamiltonian(rng)
        res = max(res, steady_state_residual(h, rates, steady_state(h, rates)) / rates.G)

    closed = 0.0
    kin = kinetics_for(PAIR)
    for _ in range(10):
        rates = KsmRates(r_S=rng.uniform(1e6, 1e7), r_T=rng.uniform(1e2, 1e4), d=rng.uniform(1e3, 1e5),
                         G=rng.uniform(1e3, 1e5))
        rho = steady_state(np.zeros((4, 4)), rates)
        want = (rates.G / 4) * (kin.P_S / (rates.r_S + rates.d) + kin.P_T / (rates.r_T + rates.d))
        closed = max(closed, float(np.max(np.abs(rho - want)) / np.max(np.abs(want))))
    return [SuiteResult("steady_state_residual_per_G", res, 1e-10),
            SuiteResult("steady_state_closed_form", closed, 1e-12)]


def step_halving() -> SuiteResult:
    """Time-dependent drive: halving the step bound moves the final state by <= 1e-8."""
    p = PairParams(mhz(20.0), mhz(-5.0), 0.0)
    rates = KsmRates(r_S=5e6, r_T=1e3, d=1e4, G=0.0)
    t1 = 200e-9

    static = rotating_pair_hamiltonian(p, DriveParams(0.0))
    drive = rotating_pair_hamiltonian(PairParams(0.0, 0.0), DriveParams(mhz(10.0)))

    def h_of_t(t):
        return static + math.sin(math.pi * t / t1) ** 2 * drive

    rho0 = ket_to_dm(np.array([0, 0, 0, 1], dtype=complex))
    ctrl = StepControl(samples=1, eps=2e-3)
    coarse = evolve(rho0, h_of_t, rates, 0.0, t1, ctrl).states[-1]
    fine = evolve(rho0, h_of_t, rates, 0.0, t1, StepControl(samples=1, eps=1e-3)).states[-1]
    return SuiteResult("step_halving", float(np.max(np.abs(coarse - fine))), 1e-8)


def byte_identical_reruns() -> SuiteResult:
    """Two fresh CLI runs with one config and seed write identical data files."""
    from .cli import main

    argsets = [["echo-scan"], ["fidelity"]]
    doc = '{"run": {"echo": {"stop_total_ns": 220.0, "step_ns": 5.0}, "fidelity": {"n_trials": 200, "n_pairs": [10]}}}'
    mismatches = 0
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text(doc)
        for args in argsets:
            outs = []
            for k in range(2):
                out = Path(tmp) / f"{args[0]}-{k}"
                code = main(["--config", str(cfg), "--out", str(out), "--seed", "11", *args])
                if code != 0:
                    return SuiteResult("byte_identical_reruns", math.inf, 0.0)
                outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
            if outs[0] != outs[1] or not outs[0]:
                mismatches += 1
    return SuiteResult("byte_identical_reruns", float(mismatches), 0.0)


def run_all() -> list[SuiteResult]:
    results = [trace_preservation(), trace_monotone(), projector_algebra(), jz_commutation()]
    results += steady_state_checks()
    results += [step_halving(), byte_identical_reruns()]
    return results
