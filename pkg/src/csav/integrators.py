"""Time steppers for the auxiliary-variable schemes.

Every stepper is a pure function ``(model, cfg, state) -> StepReport``. The
linear part is always a single diagonal solve in Fourier space,

    (I + c*dt*P) phi_hat = rhs,    P = G (L + S) + X,

with ``c = 1`` (BDF1), ``1/2`` (CN) or ``2/3`` (BDF2). CSAV schemes treat the
nonlinear force fully explicitly and update the scalar(s) ``r`` afterwards,
so they need one solve per step; SAV schemes couple ``q`` implicitly and
eliminate it with a rank-one splitting that costs two solves.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BootstrapRequiredError,
    ConfigurationError,
    DivergenceError,
    SingularOperatorError,
)
from .grid import solve_spectral

SCHEMES = (
    "csav_bdf1",
    "csav_cn",
    "csav_bdf2",
    "sav_bdf1",
    "sav_cn",
    "rsav_cn",
    "mcsav_bdf1",
    "mcsav_cn",
    "sicn_ref",
)
TWO_STEP = {"csav_cn", "csav_bdf2", "sav_cn", "rsav_cn", "mcsav_cn", "sicn_ref"}
SAV_FAMILY = {"sav_bdf1", "sav_cn", "rsav_cn"}
BOOTSTRAP_POLICIES = ("bdf1", "substep10")
EXTRAPOLATIONS = ("midpoint", "endpoint")


def canonical_scheme(name):
    """Normalize ``"CSAV-CN"``, ``"csav_cn"`` etc. to the canonical key."""
    key = str(name).strip().lower().replace("-", "_")
    if key not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {name!r}; choose from {list(SCHEMES)}")
    return key


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str
    dt: float
    alpha: float = 0.0
    C0: float = 1.0
    eta: float = 0.99
    bootstrap: str = "bdf1"
    extrapolation: str = "midpoint"

    def __post_init__(self):
        object.__setattr__(self, "scheme", canonical_scheme(self.scheme))
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha!r}")
        if not np.isfinite(self.C0):
            raise ConfigurationError("C0 must be finite")
        if not (0.0 <= self.eta <= 1.0):
            raise ConfigurationError(f"eta must lie in [0, 1], got {self.eta!r}")
        if self.bootstrap not in BOOTSTRAP_POLICIES:
            raise ConfigurationError(
                f"bootstrap must be one of {BOOTSTRAP_POLICIES}, got {self.bootstrap!r}"
            )
        if self.extrapolation not in EXTRAPOLATIONS:
            raise ConfigurationError(
                f"extrapolation must be one of {EXTRAPOLATIONS}, got {self.extrapolation!r}"
            )

    def describe(self):
        return {
            "scheme": self.scheme, "dt": self.dt, "alpha": self.alpha,
            "C0": self.C0, "eta": self.eta, "bootstrap": self.bootstrap,
            "extrapolation": self.extrapolation,
        }


@dataclass
class IntegratorState:
    """Time level ``n`` (and ``n-1`` for two-step schemes).

    ``r`` and ``r_prev`` are arrays with one entry per tracked nonlinear
    term (a single entry for the plain CSAV schemes). ``q`` is the SAV
    scalar, ``nan`` when unused. States are treated as immutable.
    """

    phi: np.ndarray
    r: np.ndarray
    q: float = float("nan")
    phi_prev: np.ndarray = None
    r_prev: np.ndarray = None
    step: int = 0
    t: float = 0.0

    def __post_init__(self):
        self.r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if self.r_prev is not None:
            self.r_prev = np.atleast_1d(np.asarray(self.r_prev, dtype=float))


@dataclass
class StepReport:
    """Result of one step plus the diagnostics it produced along the way."""

    state: IntegratorState
    mu_hat: np.ndarray
    dissipation: float
    ratio: float = float("nan")
    q_tilde: float = float("nan")
    xi0: float = float("nan")
    budget: float = float("nan")
    E0_new: float = float("nan")
    solve_residual: float = 0.0
    extras: dict = field(default_factory=dict)

    def mu(self, grid):
        """Chemical potential used in the step, in physical space."""
        return grid.ifft(self.mu_hat)


def _per_term(scheme):
    return scheme.startswith("mcsav")


def n_scalars(model, scheme):
    return model.n_terms if _per_term(canonical_scheme(scheme)) else 1


def sav_scalar(model, phi, C0):
    """``sqrt(E0(phi) + C0)``; raises if the shift is too small."""
    val = model.E0(phi) + C0
    if not val > 0:
        raise ConfigurationError(
            f"E0(phi) + C0 = {val:.6g} <= 0; increase C0 so the SAV square root is defined"
        )
    return float(np.sqrt(val))


def init_state(model, cfg, phi0, t0=0.0):
    """Level-0 state: ``r = 1`` for every tracked term, ``q = sqrt(E0 + C0)``."""
    phi0 = np.array(model.grid.check(phi0, "initial field"), dtype=float)
    if not np.all(np.isfinite(phi0)):
        raise ConfigurationError("initial field contains non-finite values")
    q = sav_scalar(model, phi0, cfg.C0) if cfg.scheme in SAV_FAMILY else float("nan")
    return IntegratorState(phi=phi0, r=np.ones(n_scalars(model, cfg.scheme)), q=q, t=float(t0))


# -- shared pieces -----------------------------------------------------------


def _groups(model, per_term):
    """(energy, force) callables for each tracked scalar."""
    if per_term:
        return [(t.energy, t.force) for t in model.terms]
    return [(model.E0, model.g)]


def _solve(shift, rhs_hat):
    sol = solve_spectral(shift, rhs_hat)
    scale = np.max(np.abs(rhs_hat))
    resid = np.max(np.abs((1.0 + shift) * sol - rhs_hat))
    return sol, float(resid / scale) if scale > 0 else float(resid)


def _check_finite(step_index, state, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DivergenceError(
                f"non-finite value produced at step {step_index}", step=step_index, last_state=state
            )


def _require_history(state, scheme):
    if state.phi_prev is None:
        raise BootstrapRequiredError(
            f"{scheme} needs two time levels; run bootstrap_first_step first"
        )


def _dissipation(model, mu_hat):
    return model.grid.quadratic_form(model.mobility, mu_hat)


def _advance_state(state, phi_new, r_new, q_new, dt):
    return IntegratorState(
        phi=phi_new, r=r_new, q=q_new, phi_prev=state.phi, r_prev=state.r,
        step=state.step + 1, t=state.t + dt,
    )


# -- CSAV family -------------------------------------------------------------


def _csav_core(model, cfg, state, kind, per_term, freeze_r=False):
    """One CSAV step. ``kind`` is ``"bdf1"``, ``"cn"`` or ``"bdf2"``."""
    grid = model.grid
    dt, alpha = cfg.dt, cfg.alpha
    groups = _groups(model, per_term)
    if len(state.r) != len(groups):
        raise ConfigurationError(
            f"state carries {len(state.r)} scalars, scheme tracks {len(groups)}"
        )
    phi = state.phi
    if kind == "bdf1":
        phi_bar, r_bar = phi, state.r
    else:
        _require_history(state, cfg.scheme)
        # BDF2 may extrapolate to t_{n+1} instead of t_{n+1/2}; the midpoint
        # form keeps the same energy law but is only first-order consistent.
        w = 2.0 if (kind == "bdf2" and cfg.extrapolation == "endpoint") else 1.5
        phi_bar = w * phi - (w - 1.0) * state.phi_prev
        if freeze_r:
            r_bar = np.ones_like(state.r)
        else:
            r_bar = w * state.r - (w - 1.0) * state.r_prev

    forces = [f(phi_bar) for _, f in groups]
    weighted = r_bar[0] * forces[0]
    for ri, gi in zip(r_bar[1:], forces[1:]):
        weighted = weighted + ri * gi
    g_hat = grid.fft(weighted)
    phi_hat = grid.fft(phi)
    P = model.implicit_symbol
    G = model.mobility

    if kind == "bdf1":
        c = dt
        rhs = phi_hat - dt * G * g_hat
    elif kind == "cn":
        c = 0.5 * dt
        rhs = phi_hat - c * P * phi_hat - dt * G * g_hat
    else:
        c = 2.0 * dt / 3.0
        rhs = (4.0 * phi_hat - grid.fft(state.phi_prev)) / 3.0 - c * G * g_hat
    forcing_scale = {"bdf1": dt, "cn": dt, "bdf2": c}[kind]
    if model.extra_forcing:
        rhs[0, 0] += forcing_scale * model.extra_forcing * grid.Nx * grid.Ny
    new_hat, resid = _solve(c * P, rhs)
    phi_new = grid.ifft(new_hat)
    _check_finite(state.step + 1, state, phi_new)

    E_old = [e(phi) for e, _ in groups]
    E_new = [e(phi_new) for e, _ in groups]
    r_new = state.r.copy()
    if not freeze_r and alpha > 0:
        if kind == "bdf2":
            increment = 3.0 * phi_new - 4.0 * phi + state.phi_prev
            E_prev = [e(state.phi_prev) for e, _ in groups]
            for i in range(len(groups)):
                dE = 3.0 * E_new[i] - 4.0 * E_old[i] + E_prev[i]
                r_new[i] = (4.0 * state.r[i] - state.r_prev[i]) / 3.0 + alpha / 3.0 * (
                    -dE + r_bar[i] * grid.inner(forces[i], increment)
                )
        else:
            increment = phi_new - phi
            for i in range(len(groups)):
                r_new[i] = state.r[i] + alpha * (
                    -(E_new[i] - E_old[i]) + r_bar[i] * grid.inner(forces[i], increment)
                )
    _check_finite(state.step + 1, state, r_new)

    # Chemical potential of the step, including the nonlocal part.
    if kind == "bdf1" or kind == "bdf2":
        lin_hat = new_hat
    else:
        lin_hat = 0.5 * (new_hat + phi_hat)
    mu_hat = (model.linear + model.stabilization + model.nonlocal_symbol) * lin_hat + g_hat

    return StepReport(
        state=_advance_state(state, phi_new, r_new, state.q, cfg.dt),
        mu_hat=mu_hat,
        dissipation=_dissipation(model, mu_hat),
        ratio=float(r_bar[0]),
        E0_new=float(sum(E_new)),
        solve_residual=resid,
        extras={"r_bar": r_bar.copy(), "E_terms_new": E_new},
    )


def csav_bdf1_step(model, cfg, state):
    """First-order CSAV: one solve, then the explicit ``r`` update."""
    return _csav_core(model, cfg, state, "bdf1", per_term=False)


def csav_cn_step(model, cfg, state):
    """Second-order CSAV Crank-Nicolson with extrapolated ``phi`` and ``r``."""
    return _csav_core(model, cfg, state, "cn", per_term=False)


def csav_bdf2_step(model, cfg, state):
    """CSAV BDF2 with one solve per step.

    With ``cfg.extrapolation == "midpoint"`` the explicit force uses
    ``3/2 phi^n - 1/2 phi^{n-1}``, which limits the scheme to first order;
    ``"endpoint"`` uses ``2 phi^n - phi^{n-1}`` and is second order.
    Both satisfy the same discrete energy law.
    """
    return _csav_core(model, cfg, state, "bdf2", per_term=False)


def mcsav_bdf1_step(model, cfg, state):
    """CSAV-BDF1 with one scalar per nonlinear term of the model."""
    return _csav_core(model, cfg, state, "bdf1", per_term=True)


def mcsav_cn_step(model, cfg, state):
    """CSAV-CN with one scalar per nonlinear term of the model."""
    return _csav_core(model, cfg, state, "cn", per_term=True)


def semi_implicit_cn_step(model, cfg, state):
    """Linearly implicit CN with the nonlinear coefficient frozen at 1.

    Identical to :func:`csav_cn_step` with ``alpha = 0``; used to generate
    accurate reference solutions and energies.
    """
    return _csav_core(model, cfg, state, "cn", per_term=False, freeze_r=True)


# -- SAV family --------------------------------------------------------------


def _sav_solve(model, cfg, state, kind):
    """Rank-one elimination shared by SAV-BDF1, SAV-CN and RSAV step 1.

    Returns ``(phi_new, new_hat, phi_hat, q_new, b, Ebar, resid)``.
    """
    grid = model.grid
    dt = cfg.dt
    phi = state.phi
    phi_bar = phi if kind == "bdf1" else 1.5 * phi - 0.5 * state.phi_prev
    Ebar_shift = model.E0(phi_bar) + cfg.C0
    if not Ebar_shift > 0:
        raise ConfigurationError(
            f"E0 + C0 = {Ebar_shift:.6g} <= 0 at step {state.step + 1}; increase C0"
        )
    b = model.g(phi_bar) / (2.0 * np.sqrt(Ebar_shift))
    b_hat = grid.fft(b)
    phi_hat = grid.fft(phi)
    P, G = model.implicit_symbol, model.mobility
    b_phi = grid.inner(b, phi)

    if kind == "bdf1":
        c = dt
        rhs1 = phi_hat - dt * G * 2.0 * b_hat * (state.q - b_phi)
        rhs2 = -dt * G * 2.0 * b_hat
    else:
        c = 0.5 * dt
        rhs1 = phi_hat - c * P * phi_hat - dt * G * 2.0 * b_hat * (state.q - 0.5 * b_phi)
        rhs2 = -dt * G * b_hat
    if model.extra_forcing:
        rhs1[0, 0] += dt * model.extra_forcing * grid.Nx * grid.Ny
    h1, res1 = _solve(c * P, rhs1)
    h2, res2 = _solve(c * P, rhs2)
    denom = 1.0 - grid.spectral_inner(b_hat, h2)
    if abs(denom) < 1e-14:
        raise SingularOperatorError(f"degenerate SAV elimination at step {state.step + 1}")
    gamma = grid.spectral_inner(b_hat, h1) / denom
    new_hat = h1 + gamma * h2
    phi_new = grid.ifft(new_hat)
    q_new = state.q + grid.inner(b, phi_new - phi)
    _check_finite(state.step + 1, state, phi_new, q_new)
    return phi_new, new_hat, phi_hat, q_new, b_hat, Ebar_shift, max(res1, res2)


def _sav_mu(model, kind, new_hat, phi_hat, q_old, q_new, b_hat):
    lin_hat = new_hat if kind == "bdf1" else 0.5 * (new_hat + phi_hat)
    coef = 2.0 * q_new if kind == "bdf1" else q_old + q_new
    return (model.linear + model.stabilization + model.nonlocal_symbol) * lin_hat + coef * b_hat


def sav_bdf1_step(model, cfg, state):
    """First-order SAV; ``q`` is implicit and eliminated with two solves."""
    phi_new, new_hat, phi_hat, q_new, b_hat, Eb, resid = _sav_solve(model, cfg, state, "bdf1")
    mu_hat = _sav_mu(model, "bdf1", new_hat, phi_hat, state.q, q_new, b_hat)
    return StepReport(
        state=_advance_state(state, phi_new, state.r, q_new, cfg.dt),
        mu_hat=mu_hat,
        dissipation=_dissipation(model, mu_hat),
        ratio=q_new / np.sqrt(Eb),
        E0_new=model.E0(phi_new),
        solve_residual=resid,
    )


def sav_cn_step(model, cfg, state):
    """Second-order SAV Crank-Nicolson with extrapolated nonlinear coefficient."""
    _require_history(state, cfg.scheme)
    phi_new, new_hat, phi_hat, q_new, b_hat, Eb, resid = _sav_solve(model, cfg, state, "cn")
    mu_hat = _sav_mu(model, "cn", new_hat, phi_hat, state.q, q_new, b_hat)
    return StepReport(
        state=_advance_state(state, phi_new, state.r, q_new, cfg.dt),
        mu_hat=mu_hat,
        dissipation=_dissipation(model, mu_hat),
        ratio=0.5 * (state.q + q_new) / np.sqrt(Eb),
        E0_new=model.E0(phi_new),
        solve_residual=resid,
    )


def relax_xi(q_tilde, E0val, C0, budget):
    """Smallest ``xi`` in [0, 1] with ``(xi*q~ + (1-xi)*Q)^2 - q~^2 <= budget``.

    ``Q = sqrt(E0val + C0)``. ``xi = 1`` is always feasible, so the result
    always exists.
    """
    if not E0val + C0 > 0:
        raise ConfigurationError("relax_xi needs E0 + C0 > 0")
    if budget < 0:
        raise ConfigurationError("relaxation budget must be non-negative")
    Q = np.sqrt(E0val + C0)
    d = q_tilde - Q
    a = d * d
    b = 2.0 * d * Q
    c = Q * Q - q_tilde * q_tilde - budget
    if a < 1e-14 * max(1.0, q_tilde * q_tilde):
        if c <= 0:
            return 0.0
        if b == 0:
            return 1.0
        return float(min(1.0, max(0.0, -c / b)))
    disc = max(b * b - 4.0 * a * c, 0.0)
    sq = np.sqrt(disc)
    # Smaller root without cancellation.
    if b >= 0:
        root = (-b - sq) / (2.0 * a)
    else:
        denom = -b + sq
        root = 2.0 * c / denom if denom != 0 else 0.0
    return float(min(1.0, max(0.0, root)))


def rsav_cn_step(model, cfg, state):
    """SAV-CN followed by the relaxation of ``q`` toward ``sqrt(E0 + C0)``."""
    _require_history(state, cfg.scheme)
    phi_new, new_hat, phi_hat, q_tilde, b_hat, Eb, resid = _sav_solve(model, cfg, state, "cn")
    mu_hat = _sav_mu(model, "cn", new_hat, phi_hat, state.q, q_tilde, b_hat)
    dissipation = _dissipation(model, mu_hat)
    budget = cfg.dt * cfg.eta * dissipation
    E0_new = model.E0(phi_new)
    xi0 = relax_xi(q_tilde, E0_new, cfg.C0, budget)
    Q = np.sqrt(E0_new + cfg.C0)
    q_new = xi0 * q_tilde + (1.0 - xi0) * Q
    _check_finite(state.step + 1, state, q_new)
    return StepReport(
        state=_advance_state(state, phi_new, state.r, q_new, cfg.dt),
        mu_hat=mu_hat,
        dissipation=dissipation,
        ratio=0.5 * (state.q + q_tilde) / np.sqrt(Eb),
        q_tilde=q_tilde,
        xi0=xi0,
        budget=budget,
        E0_new=E0_new,
        solve_residual=resid,
    )


# -- dispatch ----------------------------------------------------------------

STEPPERS = {
    "csav_bdf1": csav_bdf1_step,
    "csav_cn": csav_cn_step,
    "csav_bdf2": csav_bdf2_step,
    "sav_bdf1": sav_bdf1_step,
    "sav_cn": sav_cn_step,
    "rsav_cn": rsav_cn_step,
    "mcsav_bdf1": mcsav_bdf1_step,
    "mcsav_cn": mcsav_cn_step,
    "sicn_ref": semi_implicit_cn_step,
}

_STARTER = {
    "csav_cn": "csav_bdf1",
    "csav_bdf2": "csav_bdf1",
    "sicn_ref": "csav_bdf1",
    "mcsav_cn": "mcsav_bdf1",
    "sav_cn": "sav_bdf1",
    "rsav_cn": "sav_bdf1",
}


def _bootstrap_report(model, cfg, state):
    if state.step != 0:
        raise ConfigurationError("bootstrap applies to the initial level only")
    starter = _STARTER.get(cfg.scheme, cfg.scheme)
    alpha = 0.0 if cfg.scheme == "sicn_ref" else cfg.alpha
    if cfg.bootstrap == "bdf1":
        sub = replace(cfg, scheme=starter, alpha=alpha)
        report = STEPPERS[starter](model, sub, state)
        report.extras["bootstrap"] = "bdf1"
        return report
    m = 10
    sub = replace(cfg, scheme=starter, alpha=alpha, dt=cfg.dt / m)
    s = state
    for _ in range(m):
        report = STEPPERS[starter](model, sub, s)
        s = report.state
    report.state = IntegratorState(
        phi=s.phi, r=s.r, q=s.q, phi_prev=state.phi, r_prev=state.r,
        step=state.step + 1, t=state.t + cfg.dt,
    )
    report.extras["bootstrap"] = "substep10"
    return report


def bootstrap_first_step(model, cfg, state):
    """Produce level 1 for a two-step scheme from level 0.

    Policy ``"bdf1"`` takes one first-order step of the matching family at
    the same ``dt``; ``"substep10"`` takes ten first-order steps at ``dt/10``.
    """
    return _bootstrap_report(model, cfg, state).state


def step(model, cfg, state):
    """Advance one step with ``cfg.scheme``, bootstrapping two-step schemes."""
    if cfg.scheme in TWO_STEP and state.phi_prev is None:
        return _bootstrap_report(model, cfg, state)
    return STEPPERS[cfg.scheme](model, cfg, state)


def advance(model, cfg, state, n_steps):
    """Take ``n_steps`` steps and return the final state."""
    for _ in range(int(n_steps)):
        state = step(model, cfg, state).state
    return state
