"""Pulse programs and the pulsed-resonance experiments on the CE-db pair.

Every ensemble member sees the same pulse program with its own detunings
and Rabi scale; all members are propagated together as one batch of
exact segment propagators.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import BroadeningSpec, build_ensemble, ensemble_average, member_arrays
from .hamiltonians import DriveParams, PairParams
from .propagator import KsmRates, Trajectory, kinetics_for, steady_state, _hermitize
from .spin import PAIR, check_density, ket_to_dm, pair_states, spin_operator

EXPM_CHUNK = 4096

_SXA, _SYA, _SZA = (spin_operator(PAIR, 0, ax) for ax in "xyz")
_SXB, _SYB, _SZB = (spin_operator(PAIR, 1, ax) for ax in "xyz")
_SASB = sum(a @ b for a, b in zip((_SXA, _SYA, _SZA), (_SXB, _SYB, _SZB)))


@dataclass(frozen=True)
class PulseSegment:
    duration: float
    rabi_omega1: float
    phase_deg: float = 0.0
    label: str = ""

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError("segment duration must be >= 0")


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[PulseSegment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)


def phase_reversal(tau: float, second: float, omega1: float, phase_deg: float = 0.0) -> PulseSequence:
    return PulseSequence((
        PulseSegment(tau, omega1, phase_deg, "first"),
        PulseSegment(second, omega1, phase_deg + 180.0, "reversed"),
    ))


@dataclass
class ScanResult:
    abscissa_name: str
    abscissa: np.ndarray  # seconds
    pop_Tminus: np.ndarray
    pop_S: np.ndarray
    Q: np.ndarray
    trace: np.ndarray
    initial: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.abscissa)
        for name in ("pop_Tminus", "pop_S", "Q", "trace"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"series {name} has wrong length")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.abscissa_name, "pop_Tminus", "pop_S", "Q"])
            for k in range(len(self.abscissa)):
                row = (self.abscissa[k] * 1e9, self.pop_Tminus[k], self.pop_S[k], self.Q[k])
                w.writerow([f"{v:.17g}" for v in row])


def member_hamiltonians(pair: PairParams, members, omega1: float, phase_deg: float) -> np.ndarray:
    """Rotating-frame Hamiltonians for every member, shape (M, 4, 4)."""
    da, db, scale, _ = member_arrays(members)
    phi = math.radians(phase_deg)
    drive = math.cos(phi) * (_SXA + _SXB) + math.sin(phi) * (_SYA + _SYB)
    h = (
        (pair.detuning_a + da)[:, None, None] * _SZA
        + (pair.detuning_b + db)[:, None, None] * _SZB
        + (omega1 * scale)[:, None, None] * drive
        + pair.exchange_J * _SASB
    )
    return h


def initial_states(init, pair: PairParams, members, rates: KsmRates) -> np.ndarray:
    """Per-member initial density matrices, shape (M, 4, 4).

    ``init`` is an explicit density matrix, ``"tminus"`` for the pure
    |T-> state, or ``"steady"`` for each member's normalized microwave-off
    steady state at ``rates``.
    """
    m = len(members)
    if isinstance(init, str):
        if init == "tminus":
            rho = ket_to_dm(pair_states()["T-"])
            return np.broadcast_to(rho, (m, 4, 4)).copy()
        if init == "steady":
            h0 = member_hamiltonians(pair, members, 0.0, 0.0)
            out = np.empty((m, 4, 4), dtype=complex)
            for i in range(m):
                rho = steady_state(h0[i], rates)
                out[i] = rho / np.trace(rho).real
            return out
        raise ValueError(f"unknown initial state {init!r}")
    rho = check_density(init, 4)
    return np.broadcast_to(rho, (m, 4, 4)).copy()


def _batched_segment(h, rates, dts, v0, functional):
    """Propagate vectors v0 (B, n) through segments h (B, 4, 4) of lengths dts (B,).

    Returns (v1, integral of functional along the way), both batched.
    """
    kin = kinetics_for(PAIR)
    b = h.shape[0]
    v1 = np.empty_like(v0)
    q = np.empty(b)
    for lo in range(0, b, EXPM_CHUNK):
        hi = min(b, lo + EXPM_CHUNK)
        e, row = kin.propagator_with_rate_integral(h[lo:hi], rates, dts[lo:hi], functional)
        v1[lo:hi] = np.einsum("bij,bj->bi", e, v0[lo:hi])
        q[lo:hi] = np.einsum("bj,bj->b", row, v0[lo:hi]).real
    return v1, q


def _vec_states(rhos):
    v = rhos.transpose(0, 2, 1).reshape(rhos.shape[0], -1)
    return np.concatenate([v, np.ones((v.shape[0], 1), dtype=complex)], axis=1)


def _unvec_states(v):
    n = 4
    return v[..., :-1].reshape(v.shape[:-1] + (n, n)).swapaxes(-1, -2)


def run_sequence(
    rho0,
    seq: PulseSequence,
    pair: PairParams,
    rates: KsmRates,
    ens: BroadeningSpec,
    samples_per_segment: int = 1,
    init_rates: KsmRates | None = None,
    probe_rates: KsmRates | None = None,
) -> Trajectory:
    """Ensemble-averaged trajectory of a pulse program.

    The trajectory carries an extra observable ``Q``: the recombination
    deficit integrated from the start, int (R(0) - R(t)) dt, per unit
    initial pair population.  ``probe_rates`` (default ``rates``) define
    R; passing them with ``rates`` off gives the weak-recombination limit.
    """
    if seq.duration <= 0:
        raise ValueError("sequence has zero total duration")
    members = build_ensemble(ens)
    kin = kinetics_for(PAIR)
    rho_init = initial_states(rho0, pair, members, init_rates or rates)
    v = _vec_states(rho_init)
    c = kin.rate_functional(probe_rates or rates)
    r0 = (v @ c).real
    m = len(members)

    times = [0.0]
    per_member = [v.copy()]
    q_acc = np.zeros(m)
    q_series = [q_acc.copy()]
    t = 0.0
    for seg in seq.segments:
        if seg.duration == 0:
            continue
        h = member_hamiltonians(pair, members, seg.rabi_omega1, seg.phase_deg)
        dt = seg.duration / samples_per_segment
        e, row = [], []
        for lo in range(0, m, EXPM_CHUNK):
            ee, rr = kin.propagator_with_rate_integral(h[lo:lo + EXPM_CHUNK], rates, np.full(min(m, lo + EXPM_CHUNK) - lo, dt), c)
            e.append(ee)
            row.append(rr)
        e = np.concatenate(e)
        row = np.concatenate(row)
        for _ in range(samples_per_segment):
            q_acc = q_acc + r0 * dt - np.einsum("bj,bj->b", row, v).real
            v = np.einsum("bij,bj->bi", e, v)
            t += dt
            times.append(t)
            per_member.append(v.copy())
            q_series.append(q_acc.copy())

    stacked = np.stack(per_member, axis=1)  # (M, T, n+1)
    states_m = _hermitize(_unvec_states(stacked))
    states = ensemble_average(members, list(states_m))
    obs = kin.observables(states, probe_rates or rates)
    obs["Q"] = ensemble_average(members, list(np.stack(q_series, axis=1)))
    return Trajectory(np.array(times), states, obs)


def _scan(first, second_grid, pair, rates, ens, drive, rho0, init_rates, probe_rates=None):
    """Terminal observables of [first segment] + [second segment of each grid length].

    ``first`` is a PulseSegment or None.  Returns per-grid-point averaged
    (pop_T-, pop_S, Q, trace) and the initial-state averages.
    """
    members = build_ensemble(ens)
    kin = kinetics_for(PAIR)
    rho_init = initial_states(rho0, pair, members, init_rates or rates)
    v0 = _vec_states(rho_init)
    c = kin.rate_functional(probe_rates or rates)
    r0 = (v0 @ c).real
    m = len(members)
    grid = np.asarray(second_grid, dtype=float)
    s = len(grid)

    if first is not None and first.duration > 0:
        h1 = member_hamiltonians(pair, members, first.rabi_omega1, first.phase_deg)
        v1, q1 = _batched_segment(h1, rates, np.full(m, first.duration), v0, c)
        t1 = first.duration
    else:
        v1, q1, t1 = v0, np.zeros(m), 0.0

    phase2 = drive.phase_deg if first is None else first.phase_deg + 180.0
    h2 = member_hamiltonians(pair, members, drive.rabi_omega1, phase2)
    hb = np.repeat(h2, s, axis=0)
    vb = np.repeat(v1, s, axis=0)
    dtb = np.tile(grid, m)
    v2, q2 = _batched_segment(hb, rates, dtb, vb, c)
    v2 = v2.reshape(m, s, -1)
    q2 = q2.reshape(m, s)
    q_total = r0[:, None] * (t1 + grid)[None, :] - q1[:, None] - q2

    rho_end = _hermitize(_unvec_states(v2))  # (M, S, 4, 4)
    obs_m = kin.observables(rho_end, probe_rates or rates)
    init_obs = kin.observables(rho_init, probe_rates or rates)

    def avg(series):
        return ensemble_average(members, list(series))

    return (
        avg(obs_m["pop_T-"]),
        avg(obs_m["pop_S"]),
        avg(q_total),
        avg(obs_m["trace"]),
        {
            "pop_Tminus": float(avg(init_obs["pop_T-"])),
            "pop_S": float(avg(init_obs["pop_S"])),
            "trace": float(avg(init_obs["trace"])),
        },
    )


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("grid must be a non-empty 1-d sequence")
    if np.any(grid < 0):
        raise ValueError("grid durations must be >= 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    return grid


def echo_scan(
    tau_180: float,
    second_duration_grid,
    pair: PairParams,
    rates: KsmRates,
    ens: BroadeningSpec,
    drive: DriveParams,
    rho0="steady",
    axis: str = "total",
    init_rates: KsmRates | None = None,
    probe_rates: KsmRates | None = None,
) -> ScanResult:
    """Phase-reversal recombination echo: [tau_180, phi] + [s, phi + 180] for each s."""
    grid = _check_grid(second_duration_grid)
    if axis not in ("total", "second"):
        raise ValueError("axis must be 'total' or 'second'")
    first = PulseSegment(tau_180, drive.rabi_omega1, drive.phase_deg, "first")
    p_tm, p_s, q, tr, init = _scan(first, grid, pair, rates, ens, drive, rho0, init_rates, probe_rates)
    absc = grid + tau_180 if axis == "total" else grid
    name = "total_ns" if axis == "total" else "second_ns"
    return ScanResult(name, absc, p_tm, p_s, q, tr, init)


def rabi_scan(
    duration_grid,
    pair: PairParams,
    rates: KsmRates,
    ens: BroadeningSpec,
    drive: DriveParams,
    rho0="steady",
    init_rates: KsmRates | None = None,
    probe_rates: KsmRates | None = None,
) -> ScanResult:
    """Terminal observables after a single pulse of each duration."""
    grid = _check_grid(duration_grid)
    p_tm, p_s, q, tr, init = _scan(None, grid, pair, rates, ens, drive, rho0, init_rates, probe_rates)
    return ScanResult("duration_ns", grid, p_tm, p_s, q, tr, init)


def echo_width(scan: ScanResult, around: float | None = None) -> float:
    """Full width at half depth of the echo crest in ``pop_Tminus``.

    The crest is the maximum (nearest ``around`` if given, within the scan);
    depth is measured down to the scan minimum and the half-depth crossings
    on either side are linearly interpolated.
    """
    x, y = scan.abscissa, scan.pop_Tminus
    if around is None:
        k = int(np.argmax(y))
    else:
        win = np.abs(x - around) <= 0.1 * (x[-1] - x[0])
        idx = np.flatnonzero(win)
        k = int(idx[np.argmax(y[idx])])
    peak, floor = y[k], float(np.min(y))
    half = peak - 0.5 * (peak - floor)

    def crossing(step):
        i = k
        while 0 <= i + step < len(y):
            if y[i + step] < half:
                x0, x1, y0, y1 = x[i], x[i + step], y[i], y[i + step]
                return x0 + (half - y0) * (x1 - x0) / (y1 - y0)
            i += step
        return math.nan

    return float(crossing(1) - crossing(-1))
