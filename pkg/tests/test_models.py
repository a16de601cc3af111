import numpy as np
import pytest
from conftest import smooth_random_field

from csav.errors import ConfigurationError
from csav.grid import PeriodicGrid
from csav.models import (
    build_allen_cahn,
    build_allen_cahn_split,
    build_cahn_hilliard,
    build_diblock,
    build_mbe,
    build_model,
    build_multi_term,
    build_pfc,
    mbe_flux_pairing,
    polynomial_term,
    total_energy,
)

TWO_PI = 2 * np.pi


@pytest.fixture
def g32():
    return PeriodicGrid(TWO_PI, TWO_PI, 32, 32)


def _all_models(grid):
    return [
        build_allen_cahn(0.1, 1.0, grid=grid),
        build_cahn_hilliard(0.1, 0.5, grid=grid),
        build_mbe(0.1, grid=grid),
        build_pfc(1.0, 0.25, 0.5, s=0.1, grid=grid),
        build_diblock(0.1, 1.0, 5.0, 0.1, grid=grid),
        build_allen_cahn_split(0.1, 1.0, grid=grid),
    ]


@pytest.mark.parametrize("c", [0.0, 0.3, -1.0, 1.7])
def test_constant_state_energies(g32, c):
    phi = np.full(g32.shape, c)
    area = g32.area
    well = 0.25 * (c * c - 1) ** 2 * area
    assert total_energy(build_allen_cahn(0.2, 1.0, s=3.0, grid=g32), phi) == pytest.approx(well, rel=1e-13, abs=1e-13)
    assert total_energy(build_cahn_hilliard(0.2, 1.0, grid=g32), phi) == pytest.approx(well, rel=1e-13, abs=1e-13)
    assert total_energy(build_allen_cahn_split(0.2, 1.0, grid=g32), phi) == pytest.approx(well, rel=1e-13, abs=1e-13)
    pfc = build_pfc(0.8, 0.3, 1.0, s=0.5, grid=g32)
    expected = (0.5 * 0.64 * c * c + 0.25 * c**4 - 0.15 * c * c) * area
    assert total_energy(pfc, phi) == pytest.approx(expected, rel=1e-13, abs=1e-13)
    # A flat film only carries the slope penalty 1/4 per unit area.
    assert total_energy(build_mbe(0.1, s=4.0, grid=g32), phi) == pytest.approx(0.25 * area, rel=1e-13)


def test_interface_energy_of_cosine(g32):
    eps = 0.3
    phi = 0.5 * np.cos(2 * g32.X)
    m = build_allen_cahn(eps, 1.0, s=0.0, grid=g32)
    # 1/2 eps^2 |grad phi|^2 integrates to eps^2 * 0.25 * 4 * area / 4.
    grad_part = 0.5 * eps**2 * 0.25 * 4 * g32.area / 2
    bulk = g32.integrate(0.25 * (phi**2 - 1) ** 2)
    assert total_energy(m, phi) == pytest.approx(grad_part + bulk, rel=1e-13)


def test_diblock_nonlocal_energy(g32):
    sigma = 3.0
    phi = np.cos(2 * g32.X)
    m = build_diblock(0.1, 1.0, sigma, 0.0, s=0.0, grid=g32)
    base = build_cahn_hilliard(0.1, 1.0, s=0.0, grid=g32)
    extra = 0.5 * sigma / 4.0 * g32.area / 2
    assert total_energy(m, phi) - total_energy(base, phi) == pytest.approx(extra, rel=1e-13)
    # The mean mode carries no nonlocal energy.
    flat = np.full(g32.shape, 0.4)
    assert total_energy(m, flat) == pytest.approx(total_energy(base, flat), rel=1e-14)


def test_diblock_without_sigma_is_cahn_hilliard(g32):
    d = build_diblock(0.1, 0.7, 0.0, 0.3, s=2.0, grid=g32)
    c = build_cahn_hilliard(0.1, 0.7, s=2.0, grid=g32)
    for attr in ("mobility", "implicit_symbol", "energy_symbol"):
        np.testing.assert_array_equal(getattr(d, attr), getattr(c, attr))
    assert d.extra_forcing == 0.0


def test_diblock_implicit_term_matches_nonlocal_energy(g32):
    d = build_diblock(0.1, 0.7, 4.0, 0.0, grid=g32)
    nz = g32.k2 > 0
    # G * K reproduces lam * sigma on every non-mean mode.
    np.testing.assert_allclose((d.mobility * d.nonlocal_symbol)[nz], 0.7 * 4.0)
    np.testing.assert_allclose(d.extra_linear, 0.7 * 4.0)


@pytest.mark.parametrize("idx", range(6))
def test_force_is_variational_derivative(idx):
    grid = PeriodicGrid(TWO_PI, TWO_PI, 32, 32)
    model = _all_models(grid)[idx]
    rng = np.random.default_rng(idx)
    phi = smooth_random_field(grid, rng, kmax=3, amp=0.8)
    psi = smooth_random_field(grid, rng, kmax=3, amp=1.0)
    exact = grid.inner(model.g(phi), psi)
    errs = []
    hs = [1e-2, 5e-3, 2.5e-3]
    for h in hs:
        fd = (model.E0(phi + h * psi) - model.E0(phi - h * psi)) / (2 * h)
        errs.append(abs(fd - exact))
    slopes = np.log(np.array(errs[:-1]) / np.array(errs[1:])) / np.log(2)
    assert np.all(slopes > 1.9), slopes
    assert errs[-1] < 1e-3 * max(1.0, abs(exact))


@pytest.mark.parametrize("s", [0.0, 4.0])
def test_mbe_force_of_sine(g32, s):
    m = build_mbe(0.1, s=s, grid=g32)
    phi = np.sin(g32.X)
    x = g32.X
    expected = 3 * np.cos(x) ** 2 * np.sin(x) - (1 + s) * np.sin(x)
    np.testing.assert_allclose(m.g(phi), expected, atol=1e-12)
    if s == 0:
        np.testing.assert_allclose(m.g(phi), 2 * np.sin(x) * np.cos(x) ** 2 - np.sin(x) ** 3, atol=1e-12)


def test_mbe_force_pairing_by_parts(g32, rng):
    s = 4.0
    m = build_mbe(0.1, s=s, grid=g32)
    phi = smooth_random_field(g32, rng, kmax=3, amp=0.6)
    psi = smooth_random_field(g32, rng, kmax=3, amp=1.0)
    lhs = g32.inner(m.g(phi), psi)
    rhs = mbe_flux_pairing(g32, phi, psi, s)
    assert lhs == pytest.approx(rhs, abs=1e-11 * max(1.0, abs(rhs)))


def test_mbe_stabilization_and_offset(g32):
    m = build_mbe(0.2, s=3.0, grid=g32)
    np.testing.assert_array_equal(m.stabilization, 3.0 * g32.kd2)
    assert m.energy_offset == pytest.approx((1.5 + 2.25) * g32.area)
    np.testing.assert_allclose(m.linear, 0.2 * g32.k2**2)


def test_stabilization_does_not_change_the_energy(g32, rng):
    phi = smooth_random_field(g32, rng, kmax=3, amp=0.9)
    for build in (build_allen_cahn, build_cahn_hilliard, build_allen_cahn_split):
        e = [total_energy(build(0.1, 1.0, s=s, grid=g32), phi) for s in (0.0, 2.0, 7.5)]
        assert np.ptp(e) < 1e-12 * abs(e[0])
    e = [total_energy(build_mbe(0.1, s=s, grid=g32), phi) for s in (0.0, 4.0)]
    assert abs(e[1] - e[0]) < 1e-12 * abs(e[0])
    e = [total_energy(build_pfc(1.0, 0.2, 1.0, s=s, grid=g32), phi) for s in (0.0, 0.5)]
    assert abs(e[1] - e[0]) < 1e-12 * abs(e[0])


def test_stabilization_does_not_change_the_dynamics_symbol(g32, rng):
    phi = smooth_random_field(g32, rng, kmax=3, amp=0.9)
    a = build_allen_cahn(0.1, 1.0, s=0.0, grid=g32)
    b = build_allen_cahn(0.1, 1.0, s=4.0, grid=g32)
    # (L + S) phi + g(phi) is independent of s.
    mu_a = g32.apply_symbol(a.linear + a.stabilization, phi) + a.g(phi)
    mu_b = g32.apply_symbol(b.linear + b.stabilization, phi) + b.g(phi)
    np.testing.assert_allclose(mu_a, mu_b, atol=1e-12)


def test_split_model_matches_single_term(g32, rng):
    phi = smooth_random_field(g32, rng, kmax=3, amp=0.9)
    single = build_allen_cahn(0.1, 1.0, s=4.0, grid=g32)
    split = build_allen_cahn_split(0.1, 1.0, s=4.0, grid=g32)
    assert split.n_terms == 2 and single.n_terms == 1
    assert split.s == single.s
    np.testing.assert_allclose(split.g(phi), single.g(phi), atol=1e-13)
    assert split.E0(phi) == pytest.approx(single.E0(phi), rel=1e-13)
    np.testing.assert_array_equal(split.implicit_symbol, single.implicit_symbol)
    np.testing.assert_array_equal(split.energy_symbol, single.energy_symbol)


def test_multi_term_sums(g32, rng):
    phi = smooth_random_field(g32, rng, kmax=2)
    t1 = polynomial_term(g32, [0.0, 1.0, 0.5], s=1.0, name="a")
    t2 = polynomial_term(g32, [0.0, 0.0, 0.0, 2.0], s=0.5, name="b")
    m = build_multi_term(g32.k2, 1.0, [t1, t2], g32, mass_conserving=False)
    np.testing.assert_allclose(m.g(phi), t1.force(phi) + t2.force(phi))
    assert m.E0(phi) == pytest.approx(t1.energy(phi) + t2.energy(phi), rel=1e-14)
    np.testing.assert_array_equal(m.stabilization, 1.5 * np.ones(g32.spectral_shape))
    np.testing.assert_allclose(t1.force(phi), 1.0 + phi - phi)
    np.testing.assert_allclose(t2.force(phi), 6 * phi**2 - 0.5 * phi)


def test_mass_conserving_flags(g32):
    flags = [m.mass_conserving for m in _all_models(g32)]
    assert flags == [False, True, False, True, False, False]


def test_cahn_hilliard_rate_sits_in_mobility(g32):
    m = build_cahn_hilliard(0.1, 0.125, s=2.0, grid=g32)
    np.testing.assert_allclose(m.mobility, 0.125 * g32.k2)
    np.testing.assert_allclose(m.implicit_symbol, 0.125 * g32.k2 * (0.01 * g32.k2 + 2.0))


def test_energy_is_resolution_independent_for_band_limited_fields():
    def field(g):
        return 0.4 * np.cos(g.X + 2 * g.Y) + 0.3 * np.sin(3 * g.X) - 0.2 * np.cos(g.Y - g.X)

    coarse = PeriodicGrid(TWO_PI, TWO_PI, 32, 32)
    fine = PeriodicGrid(TWO_PI, TWO_PI, 128, 128)
    for build in (build_allen_cahn, build_cahn_hilliard, build_mbe):
        ec = total_energy(build(0.1, 1.0, grid=coarse) if build is not build_mbe else build(0.1, grid=coarse),
                          field(coarse))
        ef = total_energy(build(0.1, 1.0, grid=fine) if build is not build_mbe else build(0.1, grid=fine),
                          field(fine))
        assert ec == pytest.approx(ef, rel=1e-12)


@pytest.mark.parametrize(
    "call",
    [
        lambda g: build_allen_cahn(-0.1, 1.0, grid=g),
        lambda g: build_allen_cahn(0.1, 0.0, grid=g),
        lambda g: build_cahn_hilliard(0.1, 1.0, s=-1.0, grid=g),
        lambda g: build_mbe(0.0, grid=g),
        lambda g: build_pfc(1.0, 0.2, -1.0, grid=g),
        lambda g: build_diblock(0.1, 1.0, -2.0, 0.0, grid=g),
        lambda g: build_allen_cahn(0.1, 1.0, grid=None),
        lambda g: build_model("navier_stokes", g),
        lambda g: build_multi_term(g.k2, 1.0, [], g),
        lambda g: build_allen_cahn(float("nan"), 1.0, grid=g),
    ],
)
def test_invalid_parameters_rejected(g32, call):
    with pytest.raises(ConfigurationError):
        call(g32)


def test_build_model_by_name(g32):
    m = build_model("pfc", g32, a0=1.0, b0=0.25, lam=1.0)
    assert m.name == "pfc"
    assert m.describe() == {"name": "pfc", "a0": 1.0, "b0": 0.25, "lam": 1.0, "s": 0.0}
