import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdrsim.hamiltonians import DriveParams, PairParams, mhz, rotating_pair_hamiltonian
from sdrsim.propagator import (
    OFF,
    KsmRates,
    SelfCheckError,
    SteadyStateError,
    StepControl,
    StepControlError,
    evolve,
    kinetics_for,
    recombination_rate,
    steady_state,
    steady_state_residual,
)
from sdrsim.spin import PAIR, ket_to_dm, maximally_mixed, pair_projectors, pair_states, product_ket

KIN = kinetics_for(PAIR)
TMINUS = ket_to_dm(pair_states()["T-"])
SINGLET = ket_to_dm(pair_states()["S"])


def test_rates_validation():
    with pytest.raises(ValueError):
        KsmRates(r_S=-1.0)
    with pytest.raises(ValueError):
        KsmRates(r_S=1.0, r_T=2.0)
    with pytest.raises(ValueError):
        KsmRates(G=math.inf)


def test_zero_hamiltonian_no_rates_is_identity():
    rho0 = 0.7 * TMINUS + 0.3 * maximally_mixed(4)
    traj = evolve(rho0, np.zeros((4, 4)), OFF, 0.0, 1e-6, StepControl(samples=10))
    for rho in traj.states:
        np.testing.assert_allclose(rho, rho0, atol=1e-15)


@pytest.mark.parametrize("w1", [mhz(5.0), mhz(17.0)])
def test_two_spin_rabi_sin4(w1):
    h = rotating_pair_hamiltonian(PairParams(0.0, 0.0), DriveParams(w1))
    traj = evolve(TMINUS, h, OFF, 0.0, 300e-9, StepControl(samples=60))
    uu = ket_to_dm(product_ket("u", "u"))
    pop = np.einsum("ij,kji->k", uu, traj.states).real
    np.testing.assert_allclose(pop, np.sin(w1 * traj.times / 2) ** 4, atol=1e-10)


def test_singlet_scalar_decay():
    rates = KsmRates(r_S=3e6, r_T=0.0, d=2e5, G=0.0)
    traj = evolve(SINGLET, np.zeros((4, 4)), rates, 0.0, 2e-6, StepControl(samples=40))
    np.testing.assert_allclose(traj.observables["trace"], np.exp(-(rates.r_S + rates.d) * traj.times), rtol=1e-10)


def test_generation_fills_from_empty():
    rates = KsmRates(r_S=2e6, r_T=1e3, d=1e4, G=5e4)
    traj = evolve(np.zeros((4, 4)), np.zeros((4, 4)), rates, 0.0, 5e-6, StepControl(samples=5))
    ks, kt = rates.r_S + rates.d, rates.r_T + rates.d
    t = traj.times
    np.testing.assert_allclose(traj.observables["pop_S"], rates.G / (4 * ks) * (1 - np.exp(-ks * t)), rtol=1e-9)
    np.testing.assert_allclose(traj.observables["pop_T-"], rates.G / (4 * kt) * (1 - np.exp(-kt * t)), rtol=1e-9)


def test_dephasing_rates():
    gamma = 1e6
    rates = KsmRates(0.0, 0.0, 0.0, 0.0, dephasing=gamma)
    ket = (product_ket("u", "u") + product_ket("u", "d") + product_ket("d", "d")) / math.sqrt(3)
    traj = evolve(ket_to_dm(ket), np.zeros((4, 4)), rates, 0.0, 1e-6, StepControl(samples=4))
    t = traj.times
    # one spin differs: decay gamma; both differ: 2 gamma
    np.testing.assert_allclose(traj.states[:, 0, 1].real, np.exp(-gamma * t) / 3, rtol=1e-10)
    np.testing.assert_allclose(traj.states[:, 0, 3].real, np.exp(-2 * gamma * t) / 3, rtol=1e-10)
    np.testing.assert_allclose(traj.observables["trace"], 1.0, atol=1e-12)


def test_steady_state_zero_hamiltonian():
    rates = KsmRates()
    rho = steady_state(np.zeros((4, 4)), rates)
    p_s, p_tp, p_t0, p_tm = pair_projectors(PAIR, 0, 1)
    assert np.trace(p_s @ rho).real == pytest.approx(rates.G / (4 * (rates.r_S + rates.d)), rel=1e-12)
    for p in (p_tp, p_t0, p_tm):
        assert np.trace(p @ rho).real == pytest.approx(rates.G / (4 * (rates.r_T + rates.d)), rel=1e-12)
    ratio = np.trace(p_s @ rho).real / np.trace(p_tm @ rho).real
    assert ratio == pytest.approx((rates.r_T + rates.d) / (rates.r_S + rates.d), rel=1e-12)


def test_steady_state_residual_and_fixed_point():
    rates = KsmRates()
    h = rotating_pair_hamiltonian(PairParams(mhz(30.0), mhz(1.0), mhz(0.5)), DriveParams(mhz(2.0), 30.0))
    rho = steady_state(h, rates)
    assert steady_state_residual(h, rates, rho) <= 1e-10 * rates.G
    traj = evolve(rho, h, rates, 0.0, 50e-6, StepControl(samples=5))
    assert np.max(np.abs(traj.states - rho)) <= 1e-8


def test_drive_increases_steady_recombination():
    rates = KsmRates()
    p = PairParams(mhz(300.0), 0.0)
    off = steady_state(rotating_pair_hamiltonian(p, DriveParams(0.0)), rates)
    on = steady_state(rotating_pair_hamiltonian(p, DriveParams(mhz(1.0))), rates)
    assert recombination_rate(on, rates) > recombination_rate(off, rates)


def test_steady_state_preconditions():
    with pytest.raises(SteadyStateError):
        steady_state(np.zeros((4, 4)), KsmRates(r_S=1e6, r_T=0.0, d=0.0, G=1.0))
    with pytest.raises(SteadyStateError):
        steady_state(np.zeros((4, 4)), KsmRates(G=0.0))


def test_recombination_rate_examples():
    rates = KsmRates(r_S=5e6, r_T=2e3, d=0.0, G=0.0)
    assert recombination_rate(TMINUS, rates) == pytest.approx(rates.r_T)
    assert recombination_rate(SINGLET, rates) == pytest.approx(rates.r_S)
    assert recombination_rate(maximally_mixed(4), rates) == pytest.approx((rates.r_S + 3 * rates.r_T) / 4)


def test_rate_integral_against_closed_form():
    rates = KsmRates(r_S=4e6, r_T=0.0, d=1e5, G=0.0)
    t = 300e-9
    e, row = KIN.propagator_with_rate_integral(np.zeros((4, 4)), rates, t, KIN.rate_functional(rates))
    v0 = np.append(KIN.vec(SINGLET), 1.0)
    k = rates.r_S + rates.d
    assert (row @ v0).real == pytest.approx(rates.r_S / k * (1 - math.exp(-k * t)), rel=1e-10)
    np.testing.assert_allclose(e, KIN.propagator(np.zeros((4, 4)), rates, t), atol=1e-14)


def _random_state(rng):
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-9, 10e-6))
def test_unitary_limit_piecewise_constant(seed, t_end):
    rng = np.random.default_rng(seed)
    rho = _random_state(rng)
    for _ in range(3):
        p = PairParams(mhz(rng.uniform(-300, 300)), mhz(rng.uniform(-30, 30)), mhz(rng.uniform(0, 5)))
        h = rotating_pair_hamiltonian(p, DriveParams(mhz(rng.uniform(0, 20)), rng.uniform(0, 360)))
        traj = evolve(rho, h, OFF, 0.0, t_end / 3, StepControl(samples=4))
        assert np.max(np.abs(traj.observables["trace"] - 1.0)) <= 1e-9
        assert np.max(np.abs(traj.states - traj.states.conj().swapaxes(1, 2))) <= 1e-10
        assert min(np.linalg.eigvalsh(s).min() for s in traj.states) >= -1e-9
        rho = traj.states[-1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trace_monotone_without_generation(seed):
    rng = np.random.default_rng(seed)
    rates = KsmRates(r_S=rng.uniform(0, 1e7), r_T=0.0, d=rng.uniform(0, 1e5), G=0.0)
    h = rotating_pair_hamiltonian(PairParams(mhz(rng.uniform(-50, 50)), 0.0), DriveParams(mhz(rng.uniform(0, 20))))
    traj = evolve(_random_state(rng), h, rates, 0.0, 1e-6, StepControl(samples=100))
    assert np.all(np.diff(traj.observables["trace"]) <= 1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    r1, r2 = _random_state(rng), _random_state(rng)
    rates = KsmRates(r_S=1e7, r_T=1e3, d=1e4, G=0.0)
    h = rotating_pair_hamiltonian(PairParams(mhz(20.0), mhz(1.0)), DriveParams(mhz(10.0)))
    ev = lambda r: evolve(r, h, rates, 0.0, 500e-9, StepControl(samples=3)).states
    mix = ev(alpha * r1 + (1 - alpha) * r2)
    assert np.max(np.abs(mix - (alpha * ev(r1) + (1 - alpha) * ev(r2)))) <= 1e-8


def test_time_dependent_matches_constant():
    h = rotating_pair_hamiltonian(PairParams(mhz(5.0), 0.0), DriveParams(mhz(10.0)))
    rates = KsmRates(G=0.0)
    exact = evolve(TMINUS, h, rates, 0.0, 200e-9, StepControl(samples=4))
    stepped = evolve(TMINUS, lambda t: h, rates, 0.0, 200e-9, StepControl(samples=4))
    np.testing.assert_allclose(stepped.states, exact.states, atol=1e-12)


def _chirp(t):
    return rotating_pair_hamiltonian(PairParams(mhz(20.0) * (1 - 2e7 * t), 0.0), DriveParams(mhz(5.0)))


def test_step_halving_self_check():
    rates = KsmRates(G=0.0)
    ctrl = StepControl(samples=2, eps=0.01, self_check=True, check_tol=1e-5)
    evolve(TMINUS, _chirp, rates, 0.0, 100e-9, ctrl)
    with pytest.raises(SelfCheckError):
        evolve(TMINUS, _chirp, rates, 0.0, 100e-9, StepControl(samples=2, eps=0.05, self_check=True, check_tol=1e-14))


def test_step_control_failure_reports_time():
    with pytest.raises(StepControlError) as info:
        evolve(TMINUS, _chirp, OFF, 0.0, 100e-9, StepControl(samples=2, eps=0.05, min_step=1e-9))
    assert info.value.t == 0.0


def test_evolve_rejects_bad_input():
    with pytest.raises(ValueError):
        evolve(TMINUS, np.zeros((4, 4)), OFF, 1.0, 1.0)
    with pytest.raises(ValueError):
        evolve(2 * TMINUS, np.zeros((4, 4)), OFF, 0.0, 1.0)


def test_trajectory_csv(tmp_path):
    traj = evolve(TMINUS, np.zeros((4, 4)), OFF, 0.0, 1e-6, StepControl(samples=3))
    path = tmp_path / "traj.csv"
    traj.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,trace,pop_S,pop_Tminus,pop_T0,pop_Tplus,recomb_rate"
    assert len(lines) == 5
    assert float(lines[-1].split(",")[3]) == 1.0


def test_readout_space_evolution():
    from sdrsim.hamiltonians import ReadoutSpinParams, readout_hamiltonian
    from sdrsim.spin import READOUT

    h = readout_hamiltonian(ReadoutSpinParams(), mhz(100.0))
    rho0 = ket_to_dm(product_ket("d", "d", "u"))
    traj = evolve(rho0, h, OFF, 0.0, 1e-8, StepControl(samples=2))
    assert traj.states.shape == (3, READOUT.dim, READOUT.dim)
    assert np.max(np.abs(traj.observables["trace"] - 1)) < 1e-9
