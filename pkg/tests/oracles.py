"""Dense linear-algebra reference implementations used by the tests.

Operators are assembled as explicit matrices from full-lattice DFT matrices
(no FFT calls, no half-spectrum bookkeeping) and solved with
``numpy.linalg.solve``. Fields are flattened row-major.
"""

import numpy as np

from csav.models import (
    build_allen_cahn,
    build_cahn_hilliard,
    build_diblock,
    build_mbe,
    build_pfc,
)


def wavenumbers(N, L):
    """Full-lattice wavenumbers in standard DFT order."""
    m = np.array([j if j < N // 2 else j - N for j in range(N)], dtype=float)
    return 2 * np.pi * m / L


def dft_matrix(N):
    j = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(j, j) / N)


class DenseOps:
    def __init__(self, Lx, Ly, Nx, Ny):
        self.Lx, self.Ly, self.Nx, self.Ny = Lx, Ly, Nx, Ny
        self.n = Nx * Ny
        self.h2 = (Lx / Nx) * (Ly / Ny)
        F = np.kron(dft_matrix(Nx), dft_matrix(Ny))
        self.F = F
        self.Finv = F.conj().T / self.n
        kx = wavenumbers(Nx, Lx)
        ky = wavenumbers(Ny, Ly)
        self.KX, self.KY = np.meshgrid(kx, ky, indexing="ij")
        self.K2 = self.KX**2 + self.KY**2
        # First derivatives drop the Nyquist wavenumber.
        kxd = kx.copy()
        kxd[Nx // 2] = 0.0
        kyd = ky.copy()
        kyd[Ny // 2] = 0.0
        self.KXD, self.KYD = np.meshgrid(kxd, kyd, indexing="ij")

    def matrix(self, symbol):
        """Real matrix of the Fourier multiplier with full-lattice ``symbol``."""
        sym = np.broadcast_to(symbol, (self.Nx, self.Ny)).ravel()
        M = self.Finv @ (sym[:, None] * self.F)
        return M.real if np.allclose(M.imag, 0, atol=1e-12) else M

    def identity(self):
        return np.eye(self.n)

    def dx(self):
        return self.matrix(1j * self.KXD)

    def dy(self):
        return self.matrix(1j * self.KYD)

    def inner(self, u, v):
        return self.h2 * float(np.dot(u.ravel(), v.ravel()))

    def integrate(self, u):
        return self.h2 * float(np.sum(u))


def ac_force(phi, s):
    return phi**3 - phi - s * phi


def ac_energy(ops, phi, s):
    return ops.integrate(0.25 * (phi**2 - 1) ** 2 - 0.5 * s * phi**2)


def csav_oracle(ops, phi, phi_prev, r, r_prev, dt, alpha, G, LS, force, energy, kind,
                X=None, F0=0.0, freeze=False):
    """One CSAV step with dense matrices; ``force``/``energy`` are lists per scalar.

    ``G``, ``LS``, ``X`` are dense matrices; returns ``(phi_new, r_new)``.
    """
    I = ops.identity()
    X = np.zeros_like(I) if X is None else X
    P = G @ LS + X
    u = phi.ravel()
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if kind == "bdf1":
        ubar, rbar = u, r
    else:
        up = phi_prev.ravel()
        w = 2.0 if kind == "bdf2_end" else 1.5
        ubar = w * u - (w - 1) * up
        rbar = np.ones_like(r) if freeze else w * r - (w - 1) * np.atleast_1d(r_prev)
    shape = phi.shape
    gs = [f(ubar.reshape(shape)).ravel() for f in force]
    gw = sum(ri * gi for ri, gi in zip(rbar, gs))
    f0 = np.full(ops.n, F0)
    if kind == "bdf1":
        A = I + dt * P
        b = u - dt * G @ gw + dt * f0
    elif kind == "cn":
        A = I + 0.5 * dt * P
        b = (I - 0.5 * dt * P) @ u - dt * G @ gw + dt * f0
    else:
        c = 2 * dt / 3
        A = I + c * P
        b = (4 * u - up) / 3 - c * G @ gw + c * f0
    unew = np.linalg.solve(A, b)
    phin = unew.reshape(shape)
    rnew = r.copy()
    if not freeze and alpha > 0:
        for i, (e, g) in enumerate(zip(energy, gs)):
            if kind.startswith("bdf2"):
                pp = phi_prev
                dE = 3 * e(phin) - 4 * e(phi) + e(pp)
                inc = 3 * unew - 4 * u + up
                rnew[i] = (4 * r[i] - r_prev[i]) / 3 + alpha / 3 * (-dE + rbar[i] * ops.h2 * g @ inc)
            else:
                dE = e(phin) - e(phi)
                rnew[i] = r[i] + alpha * (-dE + rbar[i] * ops.h2 * g @ (unew - u))
    return phin, rnew


def sav_oracle(ops, phi, phi_prev, q, dt, G, LS, force, energy, C0, kind, X=None, F0=0.0):
    """Coupled (N+1)-unknown solve for ``(phi_new, q_new)``."""
    n = ops.n
    I = ops.identity()
    X = np.zeros_like(I) if X is None else X
    P = G @ LS + X
    u = phi.ravel()
    ubar = u if kind == "bdf1" else 1.5 * u - 0.5 * phi_prev.ravel()
    Eb = energy(ubar.reshape(phi.shape)) + C0
    b = force(ubar.reshape(phi.shape)).ravel() / (2 * np.sqrt(Eb))
    M = np.zeros((n + 1, n + 1))
    rhs = np.zeros(n + 1)
    f0 = np.full(n, F0)
    if kind == "bdf1":
        M[:n, :n] = I + dt * P
        M[:n, n] = dt * G @ (2 * b)
        rhs[:n] = u + dt * f0
    else:
        M[:n, :n] = I + 0.5 * dt * P
        M[:n, n] = dt * G @ b
        rhs[:n] = (I - 0.5 * dt * P) @ u - dt * G @ b * q + dt * f0
    # q' - <b, phi'> = q - <b, phi>
    M[n, :n] = -ops.h2 * b
    M[n, n] = 1.0
    rhs[n] = q - ops.h2 * b @ u
    sol = np.linalg.solve(M, rhs)
    return sol[:n].reshape(phi.shape), sol[n], b, Eb


def scan_min_feasible(a, b, c, n=10**6, refine=True):
    """Smallest xi in [0, 1] with a xi^2 + b xi + c <= 0 via grid scans.

    A first scan of ``n`` points brackets the answer; a second scan of ``n``
    points inside the bracket refines it to ``~1/n^2``.
    """
    xs = np.linspace(0.0, 1.0, n)
    ok = a * xs * xs + b * xs + c <= 0
    idx = int(np.argmax(ok))
    if idx == 0:
        return 0.0
    if not refine:
        return float(xs[idx])
    xs2 = np.linspace(xs[idx - 1], xs[idx], n)
    ok2 = a * xs2 * xs2 + b * xs2 + c <= 0
    return float(xs2[int(np.argmax(ok2))])


def dense_model_case(name, ops, grid):
    """Library model plus an independent dense description of the same model."""
    eps, lam, s = 0.3, 0.8, 2.0
    I = ops.identity()
    K2 = ops.K2

    def well_force(u):
        return u**3 - u - s * u

    def well_energy(u):
        return ops.integrate(0.25 * (u**2 - 1) ** 2 - 0.5 * s * u**2)

    if name == "allen_cahn":
        model = build_allen_cahn(eps, lam, s=s, grid=grid)
        return model, dict(G=lam * I, LS=ops.matrix(eps**2 * K2 + s), force=well_force, energy=well_energy)
    if name == "cahn_hilliard":
        model = build_cahn_hilliard(eps, lam, s=s, grid=grid)
        return model, dict(G=ops.matrix(lam * K2), LS=ops.matrix(eps**2 * K2 + s), force=well_force,
                           energy=well_energy)
    if name == "diblock":
        sigma, phi0 = 3.0, 0.1
        model = build_diblock(eps, lam, sigma, phi0, s=s, grid=grid)
        return model, dict(G=ops.matrix(lam * K2), LS=ops.matrix(eps**2 * K2 + s), force=well_force,
                           energy=well_energy, X=lam * sigma * I, F0=lam * sigma * phi0)
    if name == "pfc":
        a0, b0 = 1.0, 0.25
        model = build_pfc(a0, b0, lam, s=s, grid=grid)
        return model, dict(
            G=ops.matrix(lam * K2), LS=ops.matrix((a0 - K2) ** 2 + s),
            force=lambda u: u**3 - (b0 + s) * u,
            energy=lambda u: ops.integrate(0.25 * u**4 - 0.5 * (b0 + s) * u**2),
        )
    if name == "mbe":
        e2 = 0.1
        model = build_mbe(e2, s=s, grid=grid)
        Dx, Dy = ops.dx().real, ops.dy().real
        KD2 = ops.KXD**2 + ops.KYD**2

        def parts(u):
            v = u.ravel()
            gx, gy = Dx @ v, Dy @ v
            return gx, gy, gx * gx + gy * gy - 1 - s

        def force(u):
            gx, gy, a = parts(u)
            return -(Dx @ (a * gx) + Dy @ (a * gy)).reshape(u.shape)

        def energy(u):
            a = parts(u)[2]
            return 0.25 * ops.h2 * float(np.sum(a * a))

        return model, dict(G=I, LS=ops.matrix(e2 * K2**2 + s * KD2), force=force, energy=energy)
    raise KeyError(name)
