"""scikit-learn style facade over the time loop.

The natural unit of this library is a simulation, not a fitted statistical
model, so the facade is thin: ``fit`` integrates from an initial field and
stores the trajectory summary, ``transform`` maps an initial field to its
state at ``T_final``.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigurationError, GridMismatchError
from .grid import PeriodicGrid
from .harness import run_simulation
from .integrators import SchemeConfig
from .models import build_model


def check_field(X, grid=None):
    """Validate a scalar field: 2-D, finite, real and (optionally) on ``grid``."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise GridMismatchError(f"expected a 2-D field, got shape {X.shape}")
    if np.iscomplexobj(X):
        raise ConfigurationError("fields must be real")
    X = X.astype(float, copy=False)
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("field contains non-finite values")
    if grid is not None:
        grid.check(X)
    return X


class PhaseFieldSolver(BaseEstimator, TransformerMixin):
    """Integrate a phase-field model from the field passed to ``fit``/``transform``.

    Parameters
    ----------
    model : str
        Registered model name (``"allen_cahn"``, ``"cahn_hilliard"``, ...).
    model_params : dict or None
        Keyword arguments of the model builder.
    scheme, dt, alpha, C0, eta, bootstrap
        Time-stepping options, see :class:`csav.integrators.SchemeConfig`.
    T_final : float
        Integration horizon.
    Lx, Ly : float
        Domain lengths; the resolution is taken from the input field.
    """

    def __init__(self, model="allen_cahn", model_params=None, scheme="csav_cn", dt=1e-2, alpha=1e-4,
                 C0=1.0, eta=0.99, bootstrap="bdf1", T_final=1.0, Lx=2 * math.pi, Ly=2 * math.pi):
        self.model = model
        self.model_params = model_params
        self.scheme = scheme
        self.dt = dt
        self.alpha = alpha
        self.C0 = C0
        self.eta = eta
        self.bootstrap = bootstrap
        self.T_final = T_final
        self.Lx = Lx
        self.Ly = Ly

    def _setup(self, X):
        X = check_field(X)
        grid = PeriodicGrid(self.Lx, self.Ly, *X.shape)
        params = dict(self.model_params or {})
        if self.model == "diblock":
            params.setdefault("phi_hat0", float(X.mean()))
        model = build_model(self.model, grid, **params)
        cfg = SchemeConfig(self.scheme, self.dt, self.alpha, self.C0, self.eta, self.bootstrap)
        return X, model, cfg

    def fit(self, X, y=None):
        """Run from ``X`` and keep the final field, scalars and energy trace."""
        X, model, cfg = self._setup(X)
        result = run_simulation(model, cfg, X, self.T_final)
        self.model_ = model
        self.config_ = cfg
        self.trace_ = result.trace
        self.phi_ = result.phi
        self.r_ = result.state.r.copy()
        self.q_ = result.state.q
        self.n_steps_ = result.state.step
        return self

    def transform(self, X):
        """Final field obtained from initial field ``X`` with the fitted settings."""
        check_is_fitted(self, "config_")
        X = check_field(X, self.model_.grid)
        return run_simulation(self.model_, self.config_, X, self.T_final, record=False).phi

    def energy(self):
        """Original free energy along the fitted trajectory."""
        check_is_fitted(self, "trace_")
        return self.trace_.column("t"), self.trace_.column("E_original")
