"""Energy functionals, auxiliary-variable bookkeeping and run traces."""

import csv
import hashlib
import json
import math

import numpy as np

from .errors import BootstrapRequiredError, ConfigurationError
from .integrators import SAV_FAMILY, canonical_scheme
from .models import total_energy

TRACE_COLUMNS = (
    "t", "E_original", "E_CM_discrete", "r", "q", "xi0", "ratio", "mass", "dissipation",
)
EXTRA_COLUMNS = ("E_CM", "E_M", "q_tilde", "budget")


def _xsum(a):
    # Extended-precision accumulation for energies compared at 1e-10 slack.
    return float(np.sum(a, dtype=np.longdouble))


def _quadratic(model, sym, phi_hat):
    grid = model.grid
    vals = grid.weights * sym * (phi_hat.real**2 + phi_hat.imag**2)
    return grid._parseval * _xsum(vals)


def _half_quadratic(model, phi):
    return 0.5 * _quadratic(model, model.energy_symbol, model.grid.fft(phi))


def original_energy(model, phi):
    """Free energy of the unmodified system."""
    return total_energy(model, phi)


def csav_reported_energy(model, phi, r, alpha):
    """Return ``(E_CM - sum(r)/alpha, E_CM)``.

    The first entry is the original energy, which is what energy curves
    are compared on. With ``alpha = 0`` there is no modified energy and
    ``(E, None)`` is returned.
    """
    E = original_energy(model, phi)
    if alpha == 0:
        return E, None
    shift = float(np.sum(np.atleast_1d(r))) / alpha
    E_cm = E + shift
    return E_cm - shift, E_cm


def discrete_energy(scheme, model, state, alpha=None, C0=None):
    """Discrete Lyapunov functional that the given scheme dissipates.

    * CSAV BDF1/CN (and the multi-term variants):
      ``1/2 <phi, (L+S) phi> + E0(phi) + sum(r)/alpha``.
    * CSAV BDF2: the two-level form
      ``1/4 [<phi^n,(L+S)phi^n> + <psi,(L+S)psi>] + (3r^n - r^{n-1})/(2 alpha)
      + (3 E0(phi^n) - E0(phi^{n-1}))/2`` with ``psi = 2 phi^n - phi^{n-1}``.
    * SAV/RSAV: ``1/2 <phi, (L+S) phi> + q^2 - C0``.
    * The frozen-coefficient reference scheme (and any CSAV run with
      ``alpha = 0``) drops the ``r/alpha`` term.

    ``alpha`` and ``C0`` may also be passed through a ``SchemeConfig`` as
    ``scheme``.
    """
    if hasattr(scheme, "scheme"):
        alpha = scheme.alpha if alpha is None else alpha
        C0 = scheme.C0 if C0 is None else C0
        scheme = scheme.scheme
    scheme = canonical_scheme(scheme)
    phi = state.phi
    offset = model.energy_offset
    if scheme in SAV_FAMILY:
        if C0 is None:
            raise ConfigurationError("the SAV modified energy needs C0")
        return _half_quadratic(model, phi) + state.q**2 - C0 - offset
    r_term = 0.0
    if alpha:
        r_term = float(np.sum(state.r)) / alpha
    if scheme == "csav_bdf2":
        if state.phi_prev is None or state.r_prev is None:
            raise BootstrapRequiredError("the BDF2 energy needs two time levels")
        psi = 2.0 * phi - state.phi_prev
        quad = 0.5 * (_half_quadratic(model, phi) + _half_quadratic(model, psi))
        if alpha:
            r_term = float(np.sum(3.0 * state.r - state.r_prev)) / (2.0 * alpha)
        e0 = 0.5 * (3.0 * model.E0(phi) - model.E0(state.phi_prev))
        return quad + e0 - offset + r_term
    return _half_quadratic(model, phi) + model.E0(phi) - offset + r_term


def sav_consistency_ratio(q_half, E0bar, C0):
    """Coefficient multiplying the explicit force relative to its exact value 1."""
    val = E0bar + C0
    if not val > 0:
        raise ConfigurationError("consistency ratio needs E0 + C0 > 0")
    return q_half / math.sqrt(val)


def energy_balance_residual(E_new, E_old, dt, dissipation):
    """``|E_new - E_old + dt * dissipation|`` for the Crank-Nicolson energy law."""
    return abs(E_new - E_old + dt * dissipation)


def monotonicity_violations(values, rel_slack=1e-10, abs_slack=0.0):
    """Indices ``n`` where ``values[n+1] - values[n]`` exceeds the allowed slack."""
    v = np.asarray(values, dtype=float)
    inc = np.diff(v)
    tol = rel_slack * np.abs(v[:-1]) + abs_slack
    return [int(i) for i in np.nonzero(inc > tol)[0]]


def is_monotone(values, rel_slack=1e-10, abs_slack=0.0):
    return not monotonicity_violations(values, rel_slack, abs_slack)


def max_r_deviation(trace):
    """``max_n |r^n - 1|`` over every tracked scalar of a trace."""
    cols = [c for c in trace.columns if c == "r" or c.startswith("r_")]
    devs = [np.nanmax(np.abs(trace.column(c) - 1.0)) for c in cols]
    return float(max(devs)) if devs else float("nan")


def make_record(model, cfg, state, report=None):
    """All per-step diagnostics of ``state`` as a flat dict."""
    scheme = cfg.scheme
    nan = float("nan")
    grid = model.grid
    phi_hat = grid.fft(state.phi)
    quad = 0.5 * _quadratic(model, model.energy_symbol, phi_hat)
    E0 = report.E0_new if report is not None and np.isfinite(report.E0_new) else model.E0(state.phi)
    E = quad + E0 - model.energy_offset
    rec = {
        "t": state.t,
        "E_original": E,
        "mass": grid.mean(state.phi),
        "r": nan, "q": nan, "xi0": nan, "ratio": nan, "dissipation": nan,
        "E_CM": nan, "E_M": nan, "q_tilde": nan, "budget": nan,
    }
    if scheme in SAV_FAMILY:
        rec["q"] = state.q
        rec["E_M"] = quad + state.q**2 - cfg.C0 - model.energy_offset
        rec["E_CM_discrete"] = rec["E_M"]
    else:
        rec["r"] = float(state.r[0])
        for i, ri in enumerate(state.r[1:], start=2):
            rec[f"r_{i}"] = float(ri)
        if cfg.alpha > 0 and scheme != "sicn_ref":
            rec["E_CM"] = E + float(np.sum(state.r)) / cfg.alpha
        if scheme == "csav_bdf2":
            rec["E_CM_discrete"] = (
                discrete_energy(cfg, model, state) if state.phi_prev is not None else nan
            )
        elif scheme == "sicn_ref" or cfg.alpha == 0:
            rec["E_CM_discrete"] = E
        else:
            rec["E_CM_discrete"] = rec["E_CM"]
    if report is not None:
        rec["ratio"] = float(report.ratio)
        rec["dissipation"] = float(report.dissipation)
        rec["xi0"] = float(report.xi0)
        rec["q_tilde"] = float(report.q_tilde)
        rec["budget"] = float(report.budget)
    return rec


class EnergyTrace:
    """Per-step diagnostic records with a fixed CSV column order."""

    def __init__(self, records=None):
        self.records = []
        for rec in records or ():
            self.append(rec)

    def __len__(self):
        return len(self.records)

    def append(self, record):
        if self.records and not record["t"] > self.records[-1]["t"]:
            raise ValueError("trace times must be strictly increasing")
        for k, v in record.items():
            if isinstance(v, float) and math.isinf(v):
                raise FloatingPointError(f"infinite value recorded for {k!r} at t={record['t']}")
        self.records.append(dict(record))

    @property
    def columns(self):
        extra = sorted(
            {k for rec in self.records for k in rec if k.startswith("r_")},
            key=lambda c: int(c[2:]),
        )
        return list(TRACE_COLUMNS) + list(EXTRA_COLUMNS) + extra

    def column(self, name):
        return np.array([rec.get(name, np.nan) for rec in self.records], dtype=float)

    def last(self):
        return self.records[-1]

    def to_csv(self, path, decimation=1):
        """Write every ``decimation``-th record (the last one is always kept)."""
        decimation = max(1, int(decimation))
        cols = self.columns
        n = len(self.records)
        keep = [i for i in range(n) if i % decimation == 0 or i == n - 1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i in keep:
                rec = self.records[i]
                writer.writerow([_fmt(rec.get(c)) for c in cols])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([{k: float(v) if v != "" else float("nan") for k, v in row.items()} for row in rows])


def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def content_hash(obj):
    """sha256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def build_manifest(config, seeds=None, references=None, extra=None):
    from . import __version__

    manifest = {
        "version": __version__,
        "config": config,
        "config_hash": content_hash(config),
        "seeds": list(seeds or []),
        "references": list(references or []),
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
