import numpy as np
import pytest
from scipy import integrate, stats

from sdrsim.ensemble import (
    NONE,
    BroadeningSpec,
    EnsembleMember,
    build_ensemble,
    ensemble_average,
    member_arrays,
    write_members_csv,
)
from sdrsim.hamiltonians import DriveParams, PairParams, mhz
from sdrsim.propagator import OFF
from sdrsim.sequences import echo_scan, rabi_scan


def test_single_node_and_unbroadened():
    for spec in (BroadeningSpec(n_nodes=1), BroadeningSpec(0.0, 0.0, 0.0, 31), NONE):
        members = build_ensemble(spec)
        assert members == [EnsembleMember(0.0, 0.0, 1.0, 1.0)]


@pytest.mark.parametrize("field,index", [("sigma_detuning_a", 0), ("sigma_detuning_b", 1), ("sigma_rabi_rel", 2)])
def test_gauss_hermite_moments(field, index):
    sigma = mhz(3.0) if index < 2 else 0.2
    kw = {"sigma_detuning_a": 0.0, "sigma_detuning_b": 0.0, "sigma_rabi_rel": 0.0, field: sigma}
    members = build_ensemble(BroadeningSpec(n_nodes=21, **kw))
    assert len(members) <= 21
    cols = member_arrays(members)
    x, w = cols[index], cols[3]
    centre = 1.0 if index == 2 else 0.0
    mean = np.sum(w * (x - centre))
    var = np.sum(w * (x - centre) ** 2)
    assert abs(mean) <= 1e-12 * max(sigma, 1.0)
    assert var == pytest.approx(sigma**2, rel=1e-10)
    assert np.sum(w) == pytest.approx(1.0, abs=1e-12)
    assert np.all(w > 0)


def test_tensor_grid_is_pruned_and_normalized():
    members = build_ensemble(BroadeningSpec(mhz(1.0), mhz(3.0), 0.2, n_nodes=21))
    w = member_arrays(members)[3]
    assert len(members) < 21**3
    assert abs(w.sum() - 1.0) <= 1e-12
    # fourth moment of one dimension stays Gaussian (3 sigma^4)
    db = member_arrays(members)[1]
    assert np.sum(w * db**4) == pytest.approx(3 * mhz(3.0) ** 4, rel=1e-6)


def test_monte_carlo_is_seeded():
    spec = BroadeningSpec(scheme="monte-carlo", n_nodes=500, seed=42)
    a, b = build_ensemble(spec), build_ensemble(spec)
    assert a == b
    c = build_ensemble(BroadeningSpec(scheme="monte-carlo", n_nodes=500, seed=43))
    assert a != c
    w = member_arrays(a)[3]
    assert np.all(w == 1 / 500)


def test_quadrature_is_deterministic():
    spec = BroadeningSpec()
    a = member_arrays(build_ensemble(spec))
    b = member_arrays(build_ensemble(spec))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_overflow_and_validation():
    with pytest.raises(ValueError):
        build_ensemble(BroadeningSpec(mhz(1.0), mhz(1.0), 0.0, n_nodes=1001))
    with pytest.raises(ValueError):
        BroadeningSpec(sigma_rabi_rel=-0.1)
    with pytest.raises(ValueError):
        BroadeningSpec(n_nodes=0)
    with pytest.raises(ValueError):
        BroadeningSpec(scheme="sobol")


def test_average_examples():
    one = [EnsembleMember(0.0, 0.0, 1.0, 1.0)]
    series = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(ensemble_average(one, [series]), series)
    two = [EnsembleMember(0.0, 0.0, 1.0, 0.5), EnsembleMember(0.0, 0.0, 1.0, 0.5)]
    np.testing.assert_array_equal(ensemble_average(two, [np.zeros(4), np.full(4, 2.0)]), np.ones(4))
    np.testing.assert_array_equal(ensemble_average(two, lambda m: np.full(2, m.weight)), np.full(2, 0.5))
    with pytest.raises(ValueError):
        ensemble_average(two, [np.zeros(3), np.zeros(4)])
    with pytest.raises(ValueError):
        ensemble_average(two, [np.zeros(3)])


def test_average_bit_identical():
    members = build_ensemble(BroadeningSpec())
    rng = np.random.default_rng(0)
    series = [rng.standard_normal(50) for _ in members]
    a = ensemble_average(members, series)
    b = ensemble_average(members, [s.copy() for s in series])
    assert a.tobytes() == b.tobytes()


def test_nutation_average_matches_direct_quadrature():
    # both spins on resonance from |T->: pop_T-(t) = cos^4(s w1 t / 2) per member
    w1, sigma = mhz(10.0), 0.2
    grid = np.linspace(0, 120e-9, 13)
    scan = rabi_scan(grid, PairParams(0.0, 0.0), OFF, BroadeningSpec(0.0, 0.0, sigma, 21), DriveParams(w1), rho0="tminus")
    pdf = stats.norm(1.0, sigma).pdf
    for t, got in zip(grid, scan.pop_Tminus):
        want, _ = integrate.quad(lambda s: np.cos(s * w1 * t / 2) ** 4 * pdf(s), 1 - 10 * sigma, 1 + 10 * sigma,
                                 epsabs=1e-13, limit=200)
        assert got == pytest.approx(want, abs=1e-6)


def test_node_doubling_convergence():
    grid = np.arange(0, 201e-9, 5e-9)
    kw = dict(pair=PairParams(), rates=OFF, drive=DriveParams(), rho0="tminus")
    a = echo_scan(100e-9, grid, ens=BroadeningSpec(n_nodes=21), **kw)
    b = echo_scan(100e-9, grid, ens=BroadeningSpec(n_nodes=42), **kw)
    assert np.max(np.abs(a.pop_Tminus - b.pop_Tminus)) <= 1e-4


def test_members_csv(tmp_path):
    members = build_ensemble(BroadeningSpec(n_nodes=5))
    path = tmp_path / "m.csv"
    write_members_csv(members, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "detuning_a,detuning_b,rabi_scale,weight"
    assert len(lines) == len(members) + 1
