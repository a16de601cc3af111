"""Uniform periodic grids and Fourier pseudospectral operators.

Layout conventions
------------------
* A scalar field is a real ``ndarray`` of shape ``(Nx, Ny)`` with
  ``u[i, j] = u(x_i, y_j)``, ``x_i = i*hx``, ``y_j = j*hy`` (``ij`` indexing).
  Flattened, the layout is row-major with ``i`` as the slow index.
* A vector field is a pair ``(ux, uy)`` of scalar fields.
* Transforms are real-to-complex (``rfft2`` over both axes), so spectral
  arrays and symbols live on the half lattice of shape ``(Nx, Ny//2 + 1)``:
  ``kx`` in standard FFT ordering along axis 0, ``ky >= 0`` along axis 1.
  Inverse transforms return real fields by construction.
* Even symbols (``|k|^2``, ``|k|^4``, constants) use the full wavenumbers.
  First-derivative multipliers ``i*kx``, ``i*ky`` drop the Nyquist wavenumber,
  which keeps the discrete gradient real and exactly skew-adjoint; the
  ``laplacian`` below is their composition, so ``divergence(gradient(u))``
  equals ``laplacian(u)`` for every field.
"""

import struct

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, GridMismatchError, SingularOperatorError

SNAPSHOT_MAGIC = b"CSAVFLD1"
_HEADER = struct.Struct("<8siidd")  # 32 bytes: magic, Nx, Ny, Lx, Ly


class PeriodicGrid:
    """Uniform grid on ``[0, Lx) x [0, Ly)`` with precomputed wavenumbers.

    Parameters
    ----------
    Lx, Ly : float
        Domain lengths.
    Nx, Ny : int
        Even resolutions, at least 4.
    dealias : bool
        If true, :meth:`dealias` applies 2/3-rule truncation. Off by default.
    """

    def __init__(self, Lx, Ly, Nx, Ny, dealias=False):
        for name, n in (("Nx", Nx), ("Ny", Ny)):
            if int(n) != n or n < 4 or n % 2:
                raise ConfigurationError(f"{name} must be an even integer >= 4, got {n!r}")
        for name, length in (("Lx", Lx), ("Ly", Ly)):
            if not np.isfinite(length) or length <= 0:
                raise ConfigurationError(f"{name} must be positive, got {length!r}")
        self.Lx, self.Ly = float(Lx), float(Ly)
        self.Nx, self.Ny = int(Nx), int(Ny)
        self.dealias_enabled = bool(dealias)
        self.hx = self.Lx / self.Nx
        self.hy = self.Ly / self.Ny
        self.cell = self.hx * self.hy
        self.area = self.Lx * self.Ly
        self.shape = (self.Nx, self.Ny)
        self.spectral_shape = (self.Nx, self.Ny // 2 + 1)

        self.x = np.arange(self.Nx) * self.hx
        self.y = np.arange(self.Ny) * self.hy
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")

        kx = 2 * np.pi * sfft.fftfreq(self.Nx, d=self.hx)
        ky = 2 * np.pi * sfft.rfftfreq(self.Ny, d=self.hy)
        self.kx = kx[:, None]
        self.ky = ky[None, :]
        self.k2 = self.kx**2 + self.ky**2

        kxd = kx.copy()
        kxd[self.Nx // 2] = 0.0
        kyd = ky.copy()
        kyd[-1] = 0.0
        self.kxd = kxd[:, None]
        self.kyd = kyd[None, :]
        self.kd2 = self.kxd**2 + self.kyd**2

        # Half-spectrum multiplicities for Parseval sums.
        w = np.full(self.Ny // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self.weights = w[None, :]
        self._parseval = self.cell / (self.Nx * self.Ny)

        kmax_x = np.abs(kx).max()
        kmax_y = np.abs(ky).max()
        self._dealias_mask = (np.abs(self.kx) < 2.0 / 3.0 * kmax_x) & (
            np.abs(self.ky) < 2.0 / 3.0 * kmax_y
        )

    def __repr__(self):
        return f"PeriodicGrid(Lx={self.Lx}, Ly={self.Ly}, Nx={self.Nx}, Ny={self.Ny})"

    def __eq__(self, other):
        if not isinstance(other, PeriodicGrid):
            return NotImplemented
        return (self.Lx, self.Ly, self.Nx, self.Ny) == (other.Lx, other.Ly, other.Nx, other.Ny)

    def __hash__(self):
        return hash((self.Lx, self.Ly, self.Nx, self.Ny))

    def describe(self):
        return {"Lx": self.Lx, "Ly": self.Ly, "Nx": self.Nx, "Ny": self.Ny}

    # -- validation ---------------------------------------------------------

    def check(self, u, name="field"):
        u = np.asarray(u)
        if u.shape != self.shape:
            raise GridMismatchError(f"{name} has shape {u.shape}, grid expects {self.shape}")
        return u

    def check_symbol(self, sym):
        sym = np.asarray(sym)
        try:
            np.broadcast_shapes(sym.shape, self.spectral_shape)
        except ValueError:
            raise GridMismatchError(
                f"symbol shape {sym.shape} does not broadcast to {self.spectral_shape}"
            ) from None
        return sym

    # -- transforms ---------------------------------------------------------

    def fft(self, u):
        return sfft.rfft2(u)

    def ifft(self, uh):
        return sfft.irfft2(uh, s=self.shape)

    def dealias(self, uh):
        """2/3-rule truncation of a spectral array (identity when disabled)."""
        if not self.dealias_enabled:
            return uh
        return uh * self._dealias_mask

    # -- symbols ------------------------------------------------------------

    def constant_symbol(self, c):
        return np.full(self.spectral_shape, float(c))

    def neg_laplacian_symbol(self):
        """Symbol of ``-Delta``: ``|k|^2``."""
        return self.k2.copy()

    def biharmonic_symbol(self):
        """Symbol of ``Delta^2``: ``|k|^4``."""
        return self.k2**2

    def shifted_square_symbol(self, a0):
        """Symbol of ``(a0 + Delta)^2``: ``(a0 - |k|^2)^2``."""
        return (a0 - self.k2) ** 2

    # -- quadrature ---------------------------------------------------------

    def integrate(self, u):
        return self.cell * float(np.sum(u))

    def inner(self, u, v):
        """L2 pairing ``hx*hy*sum(u*v)``; exact for periodic trigonometric data."""
        return self.cell * float(np.vdot(np.ravel(u), np.ravel(v)))

    def mean(self, u):
        return float(np.mean(u))

    def l2_norm(self, u):
        return float(np.sqrt(self.inner(u, u)))

    def spectral_inner(self, uh, vh):
        """``inner(ifft(uh), ifft(vh))`` evaluated on the half spectrum."""
        return self._parseval * float(np.sum(self.weights * (uh.real * vh.real + uh.imag * vh.imag)))

    def quadratic_form(self, sym, uh):
        """``inner(u, A u)`` for a real symbol ``sym`` of A, from ``uh = fft(u)``."""
        return self._parseval * float(np.sum(self.weights * sym * (uh.real**2 + uh.imag**2)))

    # -- operators ----------------------------------------------------------

    def apply_symbol(self, sym, u):
        u = self.check(u)
        sym = self.check_symbol(sym)
        return self.ifft(sym * self.fft(u))

    def solve_shifted_diagonal(self, shift, rhs):
        """Solve ``(I + A) u = rhs`` where ``shift`` is the symbol of ``A``."""
        rhs = self.check(rhs)
        shift = self.check_symbol(shift)
        return self.ifft(solve_spectral(shift, self.fft(rhs)))

    def gradient(self, u):
        uh = self.fft(self.check(u))
        return self.ifft(1j * self.kxd * uh), self.ifft(1j * self.kyd * uh)

    def divergence(self, v):
        vx, vy = v
        vx = self.check(vx, "x-component")
        vy = self.check(vy, "y-component")
        return self.ifft(1j * self.kxd * self.fft(vx) + 1j * self.kyd * self.fft(vy))

    def laplacian(self, u):
        return self.ifft(-self.kd2 * self.fft(self.check(u)))

    # -- snapshot I/O -------------------------------------------------------

    def write_snapshot(self, path, u):
        """Binary snapshot: 32-byte header then little-endian float64, row-major."""
        u = np.ascontiguousarray(self.check(u), dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(SNAPSHOT_MAGIC, self.Nx, self.Ny, self.Lx, self.Ly))
            fh.write(u.tobytes(order="C"))

    def write_snapshot_csv(self, path, u):
        u = self.check(u)
        ii, jj = np.meshgrid(np.arange(self.Nx), np.arange(self.Ny), indexing="ij")
        table = np.column_stack(
            [ii.ravel(), jj.ravel(), self.X.ravel(), self.Y.ravel(), u.ravel()]
        )
        np.savetxt(
            path, table, delimiter=",", header="i,j,x,y,value", comments="",
            fmt=["%d", "%d", "%.17g", "%.17g", "%.17g"],
        )


def read_snapshot(path):
    """Inverse of :meth:`PeriodicGrid.write_snapshot`; returns ``(grid, field)``."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, Nx, Ny, Lx, Ly = _HEADER.unpack(header)
        if magic != SNAPSHOT_MAGIC:
            raise ConfigurationError(f"{path}: not a field snapshot")
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = PeriodicGrid(Lx, Ly, Nx, Ny)
    return grid, data.reshape(Nx, Ny).astype(float)


def solve_spectral(shift, rhs_hat):
    denom = 1.0 + shift
    if np.any(np.abs(denom) < 1e-300):
        raise SingularOperatorError("1 + shift symbol vanishes; invalid model/time step combination")
    return rhs_hat / denom


def make_grid(Lx, Ly, Nx, Ny, dealias=False):
    return PeriodicGrid(Lx, Ly, Nx, Ny, dealias=dealias)


# Module-level conveniences mirroring the grid methods.

def inner_product(grid, u, v):
    return grid.inner(grid.check(u), grid.check(v))


def integrate(grid, u):
    return grid.integrate(grid.check(u))


def mean(grid, u):
    return grid.mean(grid.check(u))


def l2_norm(grid, u):
    return grid.l2_norm(grid.check(u))
