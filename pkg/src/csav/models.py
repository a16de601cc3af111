"""Gradient-flow model definitions.

A model is the triplet (mobility, linear operator, nonlinear energy) written
as Fourier symbols plus one or more nonlinear terms. Every builder uses the
same convention: the mobility symbol carries the rate constant ``lam`` and the
chemical potential is ``lam``-free,

    phi_t = -G mu - X phi + c,    mu = (L + S) phi + sum_i r_i g_i(phi),

where ``S`` is the stabilization symbol moved into the implicit part, ``g_i``
the stabilized nonlinear forces, ``X`` an optional extra implicit linear
term and ``c`` a constant source (both only used by the diblock model).
"""

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .grid import PeriodicGrid


@dataclass(frozen=True)
class NonlinearTerm:
    """One nonlinear energy piece ``E_i = int F_i - 1/2 phi S_i phi``.

    ``force`` is the variational derivative of ``energy``. ``s`` is the
    scalar stabilization coefficient and ``stabilization`` its symbol
    (``s`` for potentials, ``s*|k|^2`` for gradient energies).
    """

    name: str
    energy: Callable[[np.ndarray], float]
    force: Callable[[np.ndarray], np.ndarray]
    s: float
    stabilization: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    name: str
    grid: PeriodicGrid
    mobility: np.ndarray
    linear: np.ndarray
    terms: tuple[NonlinearTerm, ...]
    extra_linear: np.ndarray = None
    extra_forcing: float = 0.0
    nonlocal_symbol: np.ndarray = None
    energy_offset: float = 0.0
    mass_conserving: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.terms:
            raise ConfigurationError("a model needs at least one nonlinear term")
        zero = np.zeros(self.grid.spectral_shape)
        if self.extra_linear is None:
            object.__setattr__(self, "extra_linear", zero)
        if self.nonlocal_symbol is None:
            object.__setattr__(self, "nonlocal_symbol", zero)
        stab = sum(np.broadcast_to(t.stabilization, self.grid.spectral_shape) for t in self.terms)
        object.__setattr__(self, "stabilization", np.asarray(stab, dtype=float))
        object.__setattr__(self, "energy_symbol", self.linear + self.stabilization + self.nonlocal_symbol)
        object.__setattr__(
            self, "implicit_symbol", self.mobility * (self.linear + self.stabilization) + self.extra_linear
        )

    @property
    def n_terms(self):
        return len(self.terms)

    @property
    def s(self):
        return sum(t.s for t in self.terms)

    def E0(self, phi):
        """Total nonlinear (stabilized) energy."""
        return sum(t.energy(phi) for t in self.terms)

    def g(self, phi):
        """Total nonlinear force."""
        out = self.terms[0].force(phi)
        for t in self.terms[1:]:
            out = out + t.force(phi)
        return out

    def describe(self):
        return {"name": self.name, **self.params}


def _require_grid(grid):
    if not isinstance(grid, PeriodicGrid):
        raise ConfigurationError("a PeriodicGrid is required to build a model")


def _require_positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ConfigurationError(f"{k} must be positive, got {v!r}")


def _require_nonnegative(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v >= 0):
            raise ConfigurationError(f"{k} must be non-negative, got {v!r}")


def double_well_term(grid, s, shift=1.0, name="double_well"):
    """``F = 1/4 (phi^2 - 1)^2`` with stabilization ``s``.

    ``shift`` is the coefficient of the linear part of the force, so the
    returned force is ``phi^3 - shift*phi - s*phi``. Every builder in this
    module uses ``shift=1``.
    """

    def energy(phi):
        p2 = phi * phi
        return grid.integrate(0.25 * (p2 - 1.0) ** 2 - 0.5 * s * p2)

    def force(phi):
        return phi * phi * phi - (shift + s) * phi

    return NonlinearTerm(name, energy, force, float(s), grid.constant_symbol(s))


def build_allen_cahn(epsilon, lam, s=4.0, grid=None):
    """Allen-Cahn: ``phi_t = -lam (-eps^2 Lap phi + phi^3 - phi)``.

    ``lam`` sits in the (constant) mobility symbol; ``mu`` is ``lam``-free.
    """
    _require_grid(grid)
    _require_positive(epsilon=epsilon, lam=lam)
    _require_nonnegative(s=s)
    return ModelSpec(
        name="allen_cahn",
        grid=grid,
        mobility=grid.constant_symbol(lam),
        linear=epsilon**2 * grid.k2,
        terms=(double_well_term(grid, s),),
        params={"epsilon": epsilon, "lam": lam, "s": s},
    )


def build_cahn_hilliard(epsilon, lam, s=4.0, grid=None):
    """Cahn-Hilliard: ``phi_t = lam Lap (-eps^2 Lap phi + phi^3 - phi)``.

    Mobility ``lam |k|^2``; ``mu`` is ``lam``-free like the Allen-Cahn model.
    """
    _require_grid(grid)
    _require_positive(epsilon=epsilon, lam=lam)
    _require_nonnegative(s=s)
    return ModelSpec(
        name="cahn_hilliard",
        grid=grid,
        mobility=lam * grid.k2,
        linear=epsilon**2 * grid.k2,
        terms=(double_well_term(grid, s),),
        mass_conserving=True,
        params={"epsilon": epsilon, "lam": lam, "s": s},
    )


def build_mbe(epsilon2, s=4.0, grid=None):
    """Thin-film epitaxy with slope selection.

    ``E = int eps^2/2 (Lap phi)^2 + 1/4 (|grad phi|^2 - 1)^2``, mobility 1.
    The stabilized gradient energy is ``1/4 int (|grad phi|^2 - 1 - s)^2``
    with force ``-div((|grad phi|^2 - 1 - s) grad phi)``; the split moves
    ``-s Lap`` into the implicit operator. That form of the nonlinear energy
    differs from ``int F - s/2 |grad phi|^2`` by ``(s/2 + s^2/4)|Omega|``,
    recorded as ``energy_offset``.
    """
    _require_grid(grid)
    _require_positive(epsilon2=epsilon2)
    _require_nonnegative(s=s)

    def slope_factor(grad):
        gx, gy = grad
        return gx * gx + gy * gy - 1.0 - s

    def energy(phi):
        a = slope_factor(grid.gradient(phi))
        return 0.25 * grid.integrate(a * a)

    def force(phi):
        gx, gy = grid.gradient(phi)
        a = slope_factor((gx, gy))
        return -grid.divergence((a * gx, a * gy))

    term = NonlinearTerm("slope_selection", energy, force, float(s), s * grid.kd2)
    return ModelSpec(
        name="mbe",
        grid=grid,
        mobility=grid.constant_symbol(1.0),
        linear=epsilon2 * grid.k2**2,
        terms=(term,),
        energy_offset=(0.5 * s + 0.25 * s * s) * grid.area,
        params={"epsilon2": epsilon2, "s": s},
    )


def mbe_flux_pairing(grid, phi, psi, s):
    """``int (|grad phi|^2 - 1 - s) grad phi . grad psi`` (by-parts partner of the MBE force)."""
    gx, gy = grid.gradient(phi)
    px, py = grid.gradient(psi)
    a = gx * gx + gy * gy - 1.0 - s
    return grid.integrate(a * (gx * px + gy * py))


def build_pfc(a0, b0, lam, s=0.0, grid=None):
    """Phase-field crystal: ``E = int 1/2 phi (a0+Lap)^2 phi + phi^4/4 - b0/2 phi^2``."""
    _require_grid(grid)
    _require_positive(lam=lam)
    _require_nonnegative(s=s)

    def energy(phi):
        p2 = phi * phi
        return grid.integrate(0.25 * p2 * p2 - 0.5 * (b0 + s) * p2)

    def force(phi):
        return phi * phi * phi - (b0 + s) * phi

    term = NonlinearTerm("pfc_bulk", energy, force, float(s), grid.constant_symbol(s))
    return ModelSpec(
        name="pfc",
        grid=grid,
        mobility=lam * grid.k2,
        linear=grid.shifted_square_symbol(a0),
        terms=(term,),
        mass_conserving=True,
        params={"a0": a0, "b0": b0, "lam": lam, "s": s},
    )


def build_diblock(epsilon, lam, sigma, phi_hat0, s=4.0, grid=None):
    """Phase-field diblock copolymer: ``phi_t = lam [Lap mu - sigma (phi - phi_hat0)]``.

    The ``lam*sigma`` relaxation is implicit (``extra_linear``) and its source
    ``lam*sigma*phi_hat0`` explicit. The nonlocal energy
    ``sigma/2 sum_{k != 0} |phi_k|^2 / |k|^2`` enters energies through
    ``nonlocal_symbol``; with mobility ``lam |k|^2`` it reproduces the
    implicit term on every nonzero mode.
    """
    _require_grid(grid)
    _require_positive(epsilon=epsilon, lam=lam)
    _require_nonnegative(sigma=sigma, s=s)
    k2 = grid.k2
    nonlocal_symbol = np.zeros_like(k2)
    nz = k2 > 0
    nonlocal_symbol[nz] = sigma / k2[nz]
    return ModelSpec(
        name="diblock",
        grid=grid,
        mobility=lam * k2,
        linear=epsilon**2 * k2,
        terms=(double_well_term(grid, s),),
        extra_linear=grid.constant_symbol(lam * sigma),
        extra_forcing=lam * sigma * phi_hat0,
        nonlocal_symbol=nonlocal_symbol,
        params={"epsilon": epsilon, "lam": lam, "sigma": sigma, "phi_hat0": phi_hat0, "s": s},
    )


def build_multi_term(linear, mobility, terms, grid, name="multi_term", mass_conserving=False, params=None):
    """Model with several independently tracked nonlinear terms."""
    _require_grid(grid)
    terms = tuple(terms)
    if not terms:
        raise ConfigurationError("build_multi_term needs at least one NonlinearTerm")
    return ModelSpec(
        name=name,
        grid=grid,
        mobility=np.broadcast_to(mobility, grid.spectral_shape).astype(float),
        linear=np.broadcast_to(linear, grid.spectral_shape).astype(float),
        terms=terms,
        mass_conserving=mass_conserving,
        params=dict(params or {}),
    )


def polynomial_term(grid, coeffs, s=0.0, name="poly"):
    """Term with ``F(phi) = sum_k coeffs[k] phi^k``, stabilized by ``s``."""
    c = np.asarray(coeffs, dtype=float)
    dc = np.polynomial.polynomial.polyder(c) if len(c) > 1 else np.zeros(1)

    def energy(phi):
        return grid.integrate(np.polynomial.polynomial.polyval(phi, c) - 0.5 * s * phi * phi)

    def force(phi):
        return np.polynomial.polynomial.polyval(phi, dc) - s * phi

    return NonlinearTerm(name, energy, force, float(s), grid.constant_symbol(s))


def build_allen_cahn_split(epsilon, lam, s=4.0, grid=None):
    """Allen-Cahn with the double well split as ``F1 = phi^4/4 + 1/4`` (stabilized by ``s``)
    and ``F2 = -phi^2/2`` (unstabilized), each with its own auxiliary scalar."""
    _require_grid(grid)
    _require_positive(epsilon=epsilon, lam=lam)
    terms = (
        polynomial_term(grid, [0.25, 0.0, 0.0, 0.0, 0.25], s=s, name="quartic"),
        polynomial_term(grid, [0.0, 0.0, -0.5], s=0.0, name="quadratic"),
    )
    return build_multi_term(
        epsilon**2 * grid.k2, lam, terms, grid, name="allen_cahn_split",
        params={"epsilon": epsilon, "lam": lam, "s": s},
    )


def total_energy(model, phi):
    """Original free energy ``1/2 <phi, L phi> + int F(phi)`` (plus the diblock nonlocal part)."""
    grid = model.grid
    phih = grid.fft(grid.check(phi))
    return 0.5 * grid.quadratic_form(model.energy_symbol, phih) + model.E0(phi) - model.energy_offset


BUILDERS = {
    "allen_cahn": build_allen_cahn,
    "cahn_hilliard": build_cahn_hilliard,
    "mbe": build_mbe,
    "pfc": build_pfc,
    "diblock": build_diblock,
    "allen_cahn_split": build_allen_cahn_split,
}


def build_model(name, grid, **params):
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; choose from {sorted(BUILDERS)}") from None
    return builder(grid=grid, **params)
