"""Experiment drivers: initial conditions, the time loop, and studies built on it."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .errors import ConfigurationError, DivergenceError
from .integrators import SchemeConfig, init_state, step

# -- initial conditions ------------------------------------------------------

TWO_BUBBLE_PRESETS = {
    "example1": {"radii": [1.4, 0.5], "centers": [[math.pi - 0.8, math.pi], [math.pi + 1.7, math.pi]]},
    "example3": {"radii": [0.19, 0.19], "centers": [[0.3, 0.5], [0.7, 0.5]]},
}

CRYSTALLITE_DEFAULTS = {
    "phi0": 0.285,
    "C1": 0.446,
    "C2": 0.66,
    "side": 40.0,
    "centers": [[350.0, 400.0], [200.0, 200.0], [600.0, 300.0]],
    "angles": [-math.pi / 4, 0.0, math.pi / 4],
}


def _need(params, *names):
    missing = [n for n in names if n not in params]
    if missing:
        raise ConfigurationError(f"initial condition is missing parameters: {missing}")


def uniform_noise(grid, seed):
    """Uniform samples on [-1, 1] from a seeded PCG64 generator, one per grid point."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=grid.shape)


def two_bubbles(grid, epsilon, radii, centers, offset=-1.0):
    """``sum_i tanh((|x - c_i| - R_i) / (sqrt(2) eps)) + offset``.

    With ``offset = -1`` the field is about -1 inside the bubbles and +1
    outside.
    """
    out = np.full(grid.shape, float(offset))
    w = math.sqrt(2.0) * epsilon
    for R, (cx, cy) in zip(radii, centers):
        d = np.sqrt((grid.X - cx) ** 2 + (grid.Y - cy) ** 2)
        out += np.tanh((d - R) / w)
    return out


def flower(grid, epsilon):
    """Six-petal interface ``tanh((1.5 + 1.2 cos 6 theta - 2 pi r) / (sqrt(2) eps))``."""
    dx = grid.X - 0.5 * grid.Lx
    dy = grid.Y - 0.5 * grid.Ly
    theta = np.arctan2(dy, dx)
    r = np.sqrt(dx * dx + dy * dy)
    return np.tanh((1.5 + 1.2 * np.cos(6.0 * theta) - 2.0 * math.pi * r) / (math.sqrt(2.0) * epsilon))


def mbe_sine(grid, amplitude=0.1):
    x, y = grid.X, grid.Y
    return amplitude * (np.sin(3 * x) * np.sin(2 * y) + np.sin(5 * x) * np.sin(5 * y))


def crystallites(grid, phi0, C1, C2, side, centers, angles):
    """Rotated hexagonal patches on a uniform liquid of density ``phi0``."""
    out = np.full(grid.shape, float(phi0))
    s3 = math.sqrt(3.0)
    for (cx, cy), th in zip(centers, angles):
        mask = (np.abs(grid.X - cx) <= 0.5 * side) & (np.abs(grid.Y - cy) <= 0.5 * side)
        x, y = grid.X[mask], grid.Y[mask]
        xl = x * math.sin(th) + y * math.cos(th)
        yl = -x * math.cos(th) + y * math.sin(th)
        out[mask] = phi0 + C1 * (np.cos(C2 / s3 * yl) * np.cos(C2 * xl) - 0.5 * np.cos(2 * C2 / s3 * yl))
    return out


_EXPR_NAMES = {
    n: getattr(np, n)
    for n in ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "cosh", "sinh", "arctan2", "abs", "pi")
}


def expression(grid, expr):
    """Evaluate a numpy expression in ``x``, ``y``, ``Lx``, ``Ly``."""
    scope = dict(_EXPR_NAMES, x=grid.X, y=grid.Y, Lx=grid.Lx, Ly=grid.Ly)
    try:
        val = eval(compile(expr, "<initial>", "eval"), {"__builtins__": {}}, scope)
    except Exception as exc:
        raise ConfigurationError(f"cannot evaluate initial expression {expr!r}: {exc}") from None
    return np.broadcast_to(np.asarray(val, dtype=float), grid.shape).copy()


INITIAL_KINDS = (
    "constant", "two_bubbles", "flower", "mbe_sine", "pfc_random",
    "pfc_crystallites", "diblock_random", "expression",
)


def build_initial(kind, params, grid, seed=None):
    """Initial field of the given kind; random kinds need ``seed``."""
    params = dict(params or {})
    if kind == "constant":
        _need(params, "c")
        return np.full(grid.shape, float(params["c"]))
    if kind == "two_bubbles":
        variant = params.pop("variant", None)
        if variant is not None:
            if variant not in TWO_BUBBLE_PRESETS:
                raise ConfigurationError(f"unknown two_bubbles variant {variant!r}")
            params = {**TWO_BUBBLE_PRESETS[variant], **params}
        _need(params, "epsilon", "radii", "centers")
        return two_bubbles(grid, params["epsilon"], params["radii"], params["centers"],
                           params.get("offset", -1.0))
    if kind == "flower":
        _need(params, "epsilon")
        return flower(grid, params["epsilon"])
    if kind == "mbe_sine":
        return mbe_sine(grid, params.get("amplitude", 0.1))
    if kind in ("pfc_random", "diblock_random"):
        _need(params, "mean")
        if seed is None:
            raise ConfigurationError(f"{kind} needs a seed")
        amp = params.get("amplitude", 0.01 if kind == "pfc_random" else 0.001)
        return params["mean"] + amp * uniform_noise(grid, seed)
    if kind == "pfc_crystallites":
        p = {**CRYSTALLITE_DEFAULTS, **params}
        return crystallites(grid, p["phi0"], p["C1"], p["C2"], p["side"], p["centers"], p["angles"])
    if kind == "expression":
        _need(params, "expr")
        return expression(grid, params["expr"])
    raise ConfigurationError(f"unknown initial condition kind {kind!r}; choose from {INITIAL_KINDS}")


@dataclass(frozen=True)
class InitialCondition:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = None

    def build(self, grid):
        return build_initial(self.kind, self.params, grid, self.seed)

    def describe(self):
        return {"kind": self.kind, "params": self.params, "seed": self.seed}


def _initial_field(init, grid):
    if isinstance(init, InitialCondition):
        return init.build(grid)
    return np.array(grid.check(init, "initial field"), dtype=float)


def _describe_initial(init):
    if isinstance(init, InitialCondition):
        return init.describe()
    arr = np.ascontiguousarray(init, dtype=float)
    return {"array_sha256": diagnostics.content_hash(arr.tobytes().hex())}


# -- time loop -------------------------------------------------------------------


@dataclass
class SimulationResult:
    trace: diagnostics.EnergyTrace
    snapshots: dict
    state: object
    reports: list = None

    @property
    def phi(self):
        return self.state.phi


def n_steps_for(T_final, dt):
    """Number of steps needed to reach ``T_final`` (tolerant to rounding)."""
    return int(math.ceil(T_final / dt - 1e-9))


def run_simulation(model, cfg, init, T_final, snapshot_times=(), callback=None, keep_reports=False,
                   record=True):
    """Integrate from ``init`` until ``t >= T_final``.

    Snapshots are taken at the completed step nearest to each requested
    time. ``callback(report, record)`` is invoked after every step. On
    divergence the :class:`DivergenceError` carries the trace so far and the
    last finite state.
    """
    if T_final < 0:
        raise ConfigurationError("T_final must be non-negative")
    for ts in snapshot_times:
        if ts < 0 or ts > T_final + 1e-12:
            raise ConfigurationError(f"snapshot time {ts} outside [0, {T_final}]")
    phi0 = _initial_field(init, model.grid)
    state = init_state(model, cfg, phi0)
    n_steps = n_steps_for(T_final, cfg.dt) if T_final > 0 else 0
    wanted = {}
    for ts in snapshot_times:
        wanted.setdefault(min(n_steps, int(round(ts / cfg.dt))), []).append(ts)
    trace = diagnostics.EnergyTrace()
    snapshots = {}
    reports = [] if keep_reports else None
    if record:
        trace.append(diagnostics.make_record(model, cfg, state))
    for ts in wanted.get(0, []):
        snapshots[ts] = state.phi.copy()
    for n in range(1, n_steps + 1):
        try:
            report = step(model, cfg, state)
        except DivergenceError as exc:
            exc.trace = trace
            if exc.last_state is None:
                exc.last_state = state
            raise
        state = report.state
        rec = diagnostics.make_record(model, cfg, state, report) if record else None
        if record:
            trace.append(rec)
        if keep_reports:
            reports.append(report)
        if callback is not None:
            callback(report, rec)
        for ts in wanted.get(n, []):
            snapshots[ts] = state.phi.copy()
    return SimulationResult(trace=trace, snapshots=snapshots, state=state, reports=reports)


# -- reference caching -------------------------------------------------------


class ReferenceCache:
    """Content-addressed store of reference final fields.

    Keys are sha256 hashes of the full run description, so a cached field is
    reused only when model, grid, initial data, scheme, step and ``alpha``
    all match. With ``directory=None`` the cache lives in memory only.
    """

    def __init__(self, directory=None):
        self.directory = directory
        self._memory = {}
        if directory:
            os.makedirs(directory, exist_ok=True)

    @staticmethod
    def key(model, cfg, init, T_final):
        desc = {
            "model": model.describe(),
            "grid": model.grid.describe(),
            "init": _describe_initial(init),
            "scheme": cfg.describe(),
            "T_final": T_final,
        }
        return diagnostics.content_hash(desc), desc

    def get_or_run(self, model, cfg, init, T_final):
        key, desc = self.key(model, cfg, init, T_final)
        if key in self._memory:
            return self._memory[key], desc
        path = os.path.join(self.directory, key + ".npy") if self.directory else None
        if path and os.path.exists(path):
            phi = np.load(path)
        else:
            phi = run_simulation(model, cfg, init, T_final, record=False).phi
            if path:
                tmp = path + f".{os.getpid()}.tmp.npy"
                np.save(tmp, phi)
                os.replace(tmp, path)
        self._memory[key] = phi
        desc = dict(desc, sha256=key)
        return phi, desc


def _map(fn, items, jobs):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- studies -----------------------------------------------------------------


def observed_orders(dts, errors):
    """``log(e_i / e_{i+1}) / log(dt_i / dt_{i+1})`` for adjacent pairs."""
    return [
        math.log(errors[i] / errors[i + 1]) / math.log(dts[i] / dts[i + 1])
        for i in range(len(errors) - 1)
    ]


@dataclass
class ConvergenceResult:
    dts: list
    errors: list
    orders: list
    r_deviation: list
    reference: dict

    def rows(self):
        out = []
        for i, (dt, err) in enumerate(zip(self.dts, self.errors)):
            out.append({
                "dt": dt, "error": err,
                "order": self.orders[i - 1] if i > 0 else float("nan"),
                "r_deviation": self.r_deviation[i],
            })
        return out

    def orders_within(self, lo, hi):
        return all(lo <= p <= hi for p in self.orders)


def convergence_study(model, scheme, dt_list, alpha, init, T_final, ref_dt=None, ref_alpha=1e-5,
                      ref_scheme=None, scheme_options=None, cache=None, jobs=1):
    """Self-convergence in time at ``T_final``.

    The reference uses ``ref_scheme`` (default: the same scheme) at
    ``ref_dt`` (default ``min(dt_list)/4``) and ``ref_alpha``. Errors are L2
    norms of the final-field difference.
    """
    dts = [float(d) for d in dt_list]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ConfigurationError("dt_list must be strictly decreasing")
    for d in dts:
        if abs(T_final / d - round(T_final / d)) > 1e-6:
            raise ConfigurationError(f"dt={d} does not divide T_final={T_final}")
    opts = dict(scheme_options or {})
    ref_dt = min(dts) / 4.0 if ref_dt is None else float(ref_dt)
    ref_cfg = SchemeConfig(ref_scheme or scheme, ref_dt, ref_alpha, **opts)
    cache = cache or ReferenceCache()
    ref_phi, ref_desc = cache.get_or_run(model, ref_cfg, init, T_final)

    def one(dt):
        cfg = SchemeConfig(scheme, dt, alpha, **opts)
        res = run_simulation(model, cfg, init, T_final, record=False)
        err = model.grid.l2_norm(res.phi - ref_phi)
        return err, float(np.max(np.abs(res.state.r - 1.0)))

    out = _map(one, dts, jobs)
    errors = [e for e, _ in out]
    return ConvergenceResult(
        dts=dts, errors=errors, orders=observed_orders(dts, errors),
        r_deviation=[d for _, d in out], reference=ref_desc,
    )


@dataclass
class AlphaSweepResult:
    alphas: list
    deviations: list

    @property
    def ratios(self):
        """``dev(alpha_i) / dev(alpha_{i+1})`` for adjacent entries."""
        return [
            self.deviations[i] / self.deviations[i + 1] if self.deviations[i + 1] > 0 else float("inf")
            for i in range(len(self.deviations) - 1)
        ]

    def rows(self):
        return [{"alpha": a, "max_r_deviation": d} for a, d in zip(self.alphas, self.deviations)]


def alpha_sweep(model, scheme, dt, alpha_list, init, T_final, scheme_options=None, jobs=1):
    """``max_n |r^n - 1|`` for each ``alpha``."""
    alphas = [float(a) for a in alpha_list]
    if any(b > a for a, b in zip(alphas, alphas[1:])):
        raise ConfigurationError("alpha_list must be descending")
    opts = dict(scheme_options or {})

    def one(alpha):
        cfg = SchemeConfig(scheme, dt, alpha, **opts)
        dev = [0.0]

        def track(report, _rec):
            dev[0] = max(dev[0], float(np.max(np.abs(report.state.r - 1.0))))

        run_simulation(model, cfg, init, T_final, callback=track, record=False)
        return dev[0]

    return AlphaSweepResult(alphas=alphas, deviations=_map(one, alphas, jobs))


@dataclass
class StabilityEntry:
    dt: float
    passed: bool
    violations: list
    max_increase: float
    n_steps: int


def stability_sweep(model, scheme, dt_list, alpha, init, T_final, rel_slack=1e-10, scheme_options=None,
                    jobs=1):
    """Check that the scheme's discrete energy never increases, per ``dt``."""
    opts = dict(scheme_options or {})

    def one(dt):
        cfg = SchemeConfig(scheme, dt, alpha, **opts)
        trace = run_simulation(model, cfg, init, T_final).trace
        E = trace.column("E_CM_discrete")
        E = E[np.isfinite(E)]
        viol = diagnostics.monotonicity_violations(E, rel_slack)
        inc = float(np.max(np.diff(E))) if len(E) > 1 else 0.0
        return StabilityEntry(dt=dt, passed=not viol, violations=viol, max_increase=inc,
                              n_steps=len(trace) - 1)

    return _map(one, [float(d) for d in dt_list], jobs)


@dataclass
class ComparisonEntry:
    scheme: str
    final_error: float = float("nan")
    max_ratio_deviation: float = float("nan")
    max_energy_deviation: float = float("nan")
    max_original_energy_deviation: float = float("nan")
    diverged: bool = False
    message: str = ""
    trace: object = None


def modified_energy_curve(trace, cfg):
    """The energy curve each scheme family reports.

    CSAV: ``E_CM - 1/alpha`` (the discrete modified energy shifted by the
    constant ``r^0/alpha``); SAV/RSAV: ``E_M``; reference: original energy.
    """
    if cfg.scheme in ("sav_bdf1", "sav_cn", "rsav_cn"):
        return trace.column("E_M")
    if cfg.alpha > 0 and cfg.scheme != "sicn_ref":
        n_r = len([c for c in trace.columns if c == "r" or c.startswith("r_")])
        return trace.column("E_CM_discrete") - n_r / cfg.alpha
    return trace.column("E_original")


def scheme_comparison(model, cfg_base, schemes, init, T_final, ref_dt=1e-5, jobs=1):
    """Run several schemes from the same data and compare them to a frozen-coefficient reference.

    The reference is the semi-implicit CN scheme at ``ref_dt``; ``ref_dt``
    must divide ``cfg_base.dt`` so both traces share sample times.
    """
    ratio = cfg_base.dt / ref_dt
    stride = int(round(ratio))
    if abs(ratio - stride) > 1e-6:
        raise ConfigurationError("ref_dt must divide the comparison time step")
    ref_cfg = SchemeConfig("sicn_ref", ref_dt, 0.0, C0=cfg_base.C0)
    ref = run_simulation(model, ref_cfg, init, T_final)
    E_ref = ref.trace.column("E_original")[::stride]

    def one(name):
        cfg = SchemeConfig(name, cfg_base.dt, cfg_base.alpha, C0=cfg_base.C0, eta=cfg_base.eta,
                           bootstrap=cfg_base.bootstrap)
        entry = ComparisonEntry(scheme=cfg.scheme)
        try:
            res = run_simulation(model, cfg, init, T_final)
        except DivergenceError as exc:
            entry.diverged, entry.message = True, str(exc)
            return entry
        tr = res.trace
        n = min(len(tr), len(E_ref))
        entry.trace = tr
        entry.final_error = model.grid.l2_norm(res.phi - ref.phi)
        entry.max_ratio_deviation = float(np.nanmax(np.abs(tr.column("ratio")[1:] - 1.0)))
        entry.max_energy_deviation = float(np.max(np.abs(modified_energy_curve(tr, cfg)[:n] - E_ref[:n])))
        entry.max_original_energy_deviation = float(
            np.max(np.abs(tr.column("E_original")[:n] - E_ref[:n]))
        )
        return entry

    entries = _map(one, schemes, jobs)
    return {"reference": ref, "entries": entries, "reference_times": ref.trace.column("t")[::stride]}
