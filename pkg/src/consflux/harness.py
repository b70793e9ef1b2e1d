"""Scenario catalogue and experiment drivers.

Every study runs the same pipeline: CG pressure, face flux ``U``,
optional conservative correction ``V``, then upwind transport with one
of the fluxes. The drivers here only wire the pieces together and
collect metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import DirichletMode, FlowProblem, FlowSolver, compute_errors
from .flux import (AveragingScheme, FaceField, exact_flux, extract_flux, face_norm_error,
                   integrate_flux_on_line)
from .linalg import SolverConfig, cg_solve
from .mesh import (Mesh, build_cartesian, build_tensor, distort, refine_cells, refine_global)
from .postprocess import (PostProcessor, SourceSpec, WeightScheme, assemble_pp_matrix, conservation_report,
                          net_outflow)
from .transport import (TransportProblem, TransportSolver, concentration_error, overshoot, production_rate)

SCENARIOS = (
    "consistency-uniform1d",
    "consistency-nonuniform1d",
    "consistency-uniform2d",
    "consistency-distorted",
    "consistency-nonmatching",
    "convergence-smooth",
    "convergence-distorted-family",
    "barrier",
    "channel",
    "wellpair",
)

# reconstructed geometry, aligned with any grid whose 1/h is a multiple of 8
BARRIER_BLOCKS = (((0.375, 0.625), (0.25, 0.75)),)
CHANNEL_SEGMENTS = (
    ((0.0, 0.625), (0.625, 0.875)),
    ((0.375, 0.625), (0.125, 0.875)),
    ((0.375, 1.0), (0.125, 0.375)),
)
CHANNEL_INLET = (0.625, 0.875)
WELL_SIZE = 1.0 / 32.0
WELL_RATE = 100.0

_DEFAULTS = {
    "convergence-smooth": dict(n=4, T=0.1),
    "convergence-distorted-family": dict(n=4, T=0.1),
    "barrier": dict(n=32, dt=0.01, T=2.0, k_low=1e-3),
    "channel": dict(n=32, dt=0.005, T=2.0, k_low=1e-5),
    "wellpair": dict(n=32, dt=0.01, T=10.0, k_low=1e-3),
}

_NEUMANN_TOP_BOTTOM = {"top": "neumann", "bottom": "neumann"}
_ALL_NEUMANN = {s: "neumann" for s in ("bottom", "right", "top", "left")}


@dataclass(frozen=True)
class CaseSpec:
    """One experiment: scenario, method ``CG(mode, averaging)`` or
    ``PP(mode, averaging, weights)``, grid and time stepping.

    ``weights=None`` means the CG flux is used without correction. ``n`` is
    the number of cells per side of the (base) grid; ``dt=None`` picks the
    scenario's default time step. ``solver`` drives the pressure solve and
    ``pp_solver`` the correction solve. ``blocks`` lists the axis-aligned
    boxes ``((x0, x1), (y0, y1))`` of the barrier or the channel, ``inlet``
    the ``(y0, y1)`` span of the channel inflow.
    """

    scenario: str
    mode: DirichletMode = DirichletMode.STRONG
    averaging: AveragingScheme = AveragingScheme.CENTRAL
    weights: WeightScheme | None = None
    n: int | None = None
    dt: float | None = None
    T: float | None = None
    sigma: float = 10.0
    k_low: float | None = None
    blocks: tuple | None = None
    inlet: tuple | None = None
    snapshot_times: tuple = ()
    solver: SolverConfig | None = None
    pp_solver: SolverConfig | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        object.__setattr__(self, "mode", DirichletMode.parse(self.mode))
        object.__setattr__(self, "averaging", AveragingScheme.parse(self.averaging))
        if self.weights is not None:
            object.__setattr__(self, "weights", WeightScheme.parse(self.weights))
        for name, value in _DEFAULTS.get(self.scenario, {}).items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if self.n is not None and int(self.n) < 1:
            raise ValueError("n must be a positive integer")
        for name in ("dt", "T", "k_low"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.scenario == "wellpair" and self.mode is not DirichletMode.STRONG:
            # pure Neumann problem: the Dirichlet treatment is irrelevant
            object.__setattr__(self, "mode", DirichletMode.STRONG)
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        if self.blocks is None:
            default = {"barrier": BARRIER_BLOCKS, "channel": CHANNEL_SEGMENTS}.get(self.scenario)
            object.__setattr__(self, "blocks", default)
        else:
            boxes = tuple(((float(a), float(b)), (float(c), float(d))) for (a, b), (c, d) in self.blocks)
            if any(a >= b or c >= d for (a, b), (c, d) in boxes):
                raise ValueError("every block needs x0 < x1 and y0 < y1")
            object.__setattr__(self, "blocks", boxes)
        if self.inlet is None and self.scenario == "channel":
            object.__setattr__(self, "inlet", CHANNEL_INLET)
        if self.solver is None:
            # the pure-Neumann well pair has O(100) pressures; 1e-12 is below roundoff there.
            # Recovered boundary fluxes inherit the algebraic error of p, so solve tighter.
            tol = 1e-10 if self.scenario == "wellpair" else 1e-12
            if self.mode is DirichletMode.RECOVERY:
                tol = 1e-14
            object.__setattr__(self, "solver", SolverConfig(tolerance=tol, max_iterations=100000))
        if self.pp_solver is None:
            object.__setattr__(self, "pp_solver", SolverConfig(tolerance=1e-13))

    @property
    def postprocess(self) -> bool:
        return self.weights is not None

    @property
    def label(self) -> str:
        theta = "1/2" if self.averaging is AveragingScheme.CENTRAL else "theta"
        mode = self.mode.name[0] + "D"
        if self.weights is None:
            return f"CG({mode},{theta})"
        lam = "L2" if self.weights is WeightScheme.UNIFORM else "wL2"
        return f"PP({mode},{theta},{lam})"


# ---------------------------------------------------------------------------
# analytic data


def analytic_case(t, x, y, normal=None) -> dict:
    """Manufactured smooth solution with ``alpha = t + x - y``.

    Returns ``p``, ``c``, ``q``, ``f`` and the velocity ``u`` (last axis of
    length 2); with ``normal=(nx, ny)`` also ``un = u . n``.
    """
    a = np.asarray(t) + np.asarray(x) - np.asarray(y)
    s, co = np.sin(a), np.cos(a)
    out = {
        "p": co,
        "c": s,
        "q": 2.0 * co - s,
        "f": (1.0 + 4.0 * s) * co,
        "u": np.stack([s, -s], axis=-1),
    }
    if normal is not None:
        out["un"] = s * (normal[0] - normal[1])
    return out


def _alpha(x, y, t):
    return t + x - y


def _smooth_pressure(x, y, t):
    return np.cos(_alpha(x, y, t))


def _smooth_gradient(x, y, t):
    s = np.sin(_alpha(x, y, t))
    return np.stack([-s, s], axis=-1)


def _smooth_velocity(x, y, t):
    s = np.sin(_alpha(x, y, t))
    return np.stack([s, -s], axis=-1)


def _smooth_source(x, y, t):
    a = _alpha(x, y, t)
    return 2.0 * np.cos(a) - np.sin(a)


def _smooth_neumann(x, y, t, nx, ny):
    return np.sin(_alpha(x, y, t)) * (nx - ny)


def _smooth_concentration(x, y, t):
    return np.sin(_alpha(x, y, t))


def _smooth_transport_source(x, y, t):
    a = _alpha(x, y, t)
    return (1.0 + 4.0 * np.sin(a)) * np.cos(a)


# ---------------------------------------------------------------------------
# consistency


@dataclass(frozen=True)
class ConsistencyRow:
    label: str
    residual_U: float
    residual_V: float
    flux_error_U: float
    flux_error_V: float
    imbalance_U: float
    imbalance_V: float
    line_integrals_U: dict
    line_integrals_V: dict

    def columns(self) -> dict:
        cols = {
            "method": [self.label],
            "residual_U": [self.residual_U],
            "residual_V": [self.residual_V],
            "flux_error_U": [self.flux_error_U],
            "flux_error_V": [self.flux_error_V],
        }
        for x, v in self.line_integrals_U.items():
            cols[f"line_U_x{x:g}"] = [v]
        for x, v in self.line_integrals_V.items():
            cols[f"line_V_x{x:g}"] = [v]
        return cols


def consistency_grid(scenario: str) -> Mesh:
    """The fixed grids of the consistency study (top and bottom are no-flow)."""
    bc = _NEUMANN_TOP_BOTTOM
    if scenario == "consistency-uniform1d":
        return build_cartesian(4, 1, bc_markers=bc)
    if scenario == "consistency-nonuniform1d":
        return build_tensor([0.0, 0.15, 0.4, 0.7, 1.0], [0.0, 1.0], bc_markers=bc)
    if scenario == "consistency-uniform2d":
        return build_cartesian(4, 4, bc_markers=bc)
    if scenario == "consistency-distorted":
        return distort(build_cartesian(4, 4, bc_markers=bc), 0.3, seed=7)
    if scenario == "consistency-nonmatching":
        return refine_cells(build_cartesian(2, 2, bc_markers=bc), [0, 3])
    raise ValueError(f"{scenario!r} is not a consistency scenario")


def run_consistency(spec: CaseSpec, mesh: Mesh | None = None) -> ConsistencyRow:
    """Stationary 1D-like problem ``p = 1 - x^2`` with exact flux ``u = (2x, 0)``.

    The flux errors use the plain (not h-weighted) face norm. Line
    integrals are reported at ``x = 0, 0.5, 1`` when those are mesh lines.
    """
    mesh = consistency_grid(spec.scenario) if mesh is None else mesh
    problem = FlowProblem(mesh, K=1.0, q=2.0, p_B=lambda x, y, t: 1.0 - x**2, u_B=0.0, sigma=spec.sigma)
    fs = FlowSolver(problem, spec.mode, spec.solver)
    p = fs.solve()
    U = extract_flux(mesh, p, problem, spec.mode, spec.averaging, flow_solver=fs)
    source = SourceSpec.from_function(mesh, problem.q)
    weights = spec.weights or WeightScheme.UNIFORM
    pp = PostProcessor(mesh, weights, problem.K, spec.pp_solver, fix_dirichlet=spec.mode is DirichletMode.RECOVERY)
    V, _, rep_V = pp(U, source)
    rep_U = conservation_report(U, source, mesh)

    def velocity(x, y, t):
        return np.stack([2.0 * x, np.zeros_like(x)], axis=-1)

    lines_U, lines_V = {}, {}
    for x in (0.0, 0.5, 1.0):
        try:
            lines_U[x] = integrate_flux_on_line(U, mesh, x)
            lines_V[x] = integrate_flux_on_line(V, mesh, x)
        except ValueError:
            pass
    return ConsistencyRow(
        label=replace(spec, weights=spec.weights or WeightScheme.UNIFORM).label,
        residual_U=rep_U.norm,
        residual_V=rep_V.norm,
        flux_error_U=face_norm_error(U, velocity, mesh),
        flux_error_V=face_norm_error(V, velocity, mesh),
        imbalance_U=rep_U.global_imbalance,
        imbalance_V=rep_V.global_imbalance,
        line_integrals_U=lines_U,
        line_integrals_V=lines_V,
    )


# ---------------------------------------------------------------------------
# convergence


def compute_rates(errors, hs) -> np.ndarray:
    """``log(e[k-1]/e[k]) / log(h[k-1]/h[k])``; nan where an error is zero."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.shape != h.shape or e.ndim != 1:
        raise ValueError("errors and hs must be 1D arrays of equal length")
    if np.any(np.diff(h) >= 0):
        raise ValueError("h must be strictly decreasing")
    rates = np.full(len(e), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    ok = (e[:-1] > 0) & (e[1:] > 0)
    rates[1:] = np.where(ok, r, np.nan)
    return rates


CONVERGENCE_COLUMNS = ("energy", "flux_U", "flux_V", "residual_U", "residual_V",
                       "conc_exact", "conc_U", "conc_V")


@dataclass
class ConvergenceTable:
    """Errors per level; ``rates(name)`` gives the observed orders."""

    label: str
    h: list = field(default_factory=list)
    errors: dict = field(default_factory=lambda: {k: [] for k in CONVERGENCE_COLUMNS})

    def add(self, h: float, **values):
        self.h.append(float(h))
        for k in CONVERGENCE_COLUMNS:
            self.errors[k].append(float(values.get(k, np.nan)))

    def __len__(self):
        return len(self.h)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.errors[name])

    def rates(self, name: str) -> np.ndarray:
        return compute_rates(self.column(name), self.h)

    def columns(self) -> dict:
        cols = {"h": list(self.h)}
        for k in CONVERGENCE_COLUMNS:
            e = self.column(k)
            if np.all(np.isnan(e)):
                continue
            cols[k] = list(e)
            cols[f"{k}_rate"] = list(self.rates(k))
        return cols


def distorted_base_grid() -> Mesh:
    """Base grid of the distorted family: a 4x4 grid with two refined
    cells (hanging nodes), then randomly perturbed interior nodes."""
    base = refine_cells(build_cartesian(4, 4, bc_markers=_NEUMANN_TOP_BOTTOM), [5, 10])
    return distort(base, 0.25, seed=3)


def convergence_level(spec: CaseSpec, level: int):
    """``(mesh, dt, steps)`` of one level of a convergence study."""
    if spec.scenario == "convergence-smooth":
        n = spec.n * 2**level
        mesh = build_cartesian(n, n, bc_markers=_NEUMANN_TOP_BOTTOM)
        dt = spec.dt if spec.dt is not None else 0.8 / n**2
    elif spec.scenario == "convergence-distorted-family":
        mesh = distorted_base_grid()
        for _ in range(level):
            mesh = refine_global(mesh)
        dt = spec.dt if spec.dt is not None else 1.0 / (5.0 * 4 ** (level + 1))
    else:
        raise ValueError(f"{spec.scenario!r} is not a convergence scenario")
    steps = max(1, int(round(spec.T / dt)))
    return mesh, dt, steps


def run_convergence(spec: CaseSpec, levels: int, transport: bool = True) -> ConvergenceTable:
    """Coupled flow/transport runs on successively refined grids.

    Per time step: pressure, ``U``, ``V``, then three transport solves
    driven by the exact flux, ``U`` and ``V``. Flow errors are measured at
    the final time; flux errors use the h-weighted face norm.
    """
    if levels < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    table = ConvergenceTable(spec.label if spec.postprocess else replace(spec, weights=WeightScheme.UNIFORM).label)
    for level in range(levels):
        mesh, dt, steps = convergence_level(spec, level)
        table.add(mesh.element_max_edges.max(), **_convergence_run(spec, mesh, dt, steps, transport))
    return table


def _convergence_run(spec: CaseSpec, mesh: Mesh, dt: float, steps: int, transport: bool) -> dict:
    problem = FlowProblem(mesh, K=1.0, beta=1.0, q=_smooth_source, p_B=_smooth_pressure, u_B=_smooth_neumann,
                          p0=lambda x, y: _smooth_pressure(x, y, 0.0), sigma=spec.sigma)
    fs = FlowSolver(problem, spec.mode, spec.solver)
    pp = PostProcessor(mesh, spec.weights or WeightScheme.UNIFORM, problem.K, spec.pp_solver,
                       fix_dirichlet=spec.mode is DirichletMode.RECOVERY)
    if transport:
        tp = TransportProblem(mesh, 1.0, c_B=_smooth_concentration,
                              c0=lambda x, y: _smooth_concentration(x, y, 0.0), f=_smooth_transport_source)
        solvers = {k: TransportSolver(tp) for k in ("exact", "U", "V")}
        states = {k: tp.initial_state() for k in solvers}

    p = fs.initial()
    t = 0.0
    for k in range(steps):
        p_prev, t = p, (k + 1) * dt
        p = fs.step(p_prev, t, dt)
        if not transport and k < steps - 1:
            continue
        U = extract_flux(mesh, p, problem, spec.mode, spec.averaging, t=t, dt=dt, p_prev=p_prev, flow_solver=fs)
        source = SourceSpec.transient(mesh, problem.q, t, p, p_prev, dt, problem.beta)
        V, _, rep_V = pp(U, source)
        if transport:
            fluxes = {"exact": exact_flux(mesh, _smooth_velocity, t), "U": U, "V": V}
            for key, solver in solvers.items():
                states[key] = solver.step(states[key], fluxes[key], dt)

    errs = compute_errors(mesh, p, _smooth_pressure, _smooth_gradient, 1.0, t)
    out = {
        "energy": errs["energy"],
        "flux_U": face_norm_error(U, _smooth_velocity, mesh, weighted=True, t=t),
        "flux_V": face_norm_error(V, _smooth_velocity, mesh, weighted=True, t=t),
        "residual_U": conservation_report(U, source, mesh).norm,
        "residual_V": rep_V.norm,
    }
    if transport:
        for key in ("exact", "U", "V"):
            out[f"conc_{key}"] = concentration_error(states[key].c, _smooth_concentration, mesh, t, order=4)
    return out


# ---------------------------------------------------------------------------
# scenarios


def _cells_in(mesh: Mesh, boxes) -> np.ndarray:
    c = mesh.element_centroids
    mask = np.zeros(mesh.num_elements, dtype=bool)
    for (x0, x1), (y0, y1) in boxes:
        mask |= (c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)
    return mask


def barrier_mask(mesh: Mesh, blocks=BARRIER_BLOCKS) -> np.ndarray:
    """Cells whose centroid lies in the low-permeability block."""
    return _cells_in(mesh, blocks)


def channel_mask(mesh: Mesh, blocks=CHANNEL_SEGMENTS) -> np.ndarray:
    """Cells whose centroid lies in the Z-shaped channel."""
    return _cells_in(mesh, blocks)


def _well_density(x, y, t=0.0):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    inj = (x <= WELL_SIZE) & (y <= WELL_SIZE)
    prod = (x >= 1.0 - WELL_SIZE) & (y >= 1.0 - WELL_SIZE)
    return WELL_RATE * inj.astype(float) - WELL_RATE * prod.astype(float)


def _inlet_indicator(span):
    y0, y1 = span

    def c_B(x, y, t=0.0):
        y = np.asarray(y, dtype=float)
        return ((y >= y0) & (y <= y1)).astype(float)

    return c_B


def scenario_setup(spec: CaseSpec):
    """``(mesh, flow problem, transport problem)`` of a flow/transport scenario."""
    n = int(spec.n)
    if spec.scenario == "barrier":
        mesh = build_cartesian(n, n, bc_markers=_NEUMANN_TOP_BOTTOM)
        k = np.where(barrier_mask(mesh, spec.blocks), spec.k_low, 1.0)
        flow = FlowProblem(mesh, K=k, p_B=lambda x, y, t: 1.0 - x, u_B=0.0, sigma=spec.sigma)
        tp = TransportProblem(mesh, 1.0, c_B=1.0, c0=0.0)
    elif spec.scenario == "channel":
        mesh = build_cartesian(n, n, bc_markers=_NEUMANN_TOP_BOTTOM)
        k = np.where(channel_mask(mesh, spec.blocks), 1.0, spec.k_low)
        flow = FlowProblem(mesh, K=k, p_B=lambda x, y, t: 1.0 - x, u_B=0.0, sigma=spec.sigma)
        tp = TransportProblem(mesh, 1.0, c_B=_inlet_indicator(spec.inlet), c0=0.0)
    elif spec.scenario == "wellpair":
        mesh = build_cartesian(n, n, bc_markers=_ALL_NEUMANN)
        k = np.where(mesh.element_centroids[:, 0] <= 0.5, 1.0, spec.k_low)
        flow = FlowProblem(mesh, K=k, q=_well_density, u_B=0.0)
        tp = TransportProblem(mesh, 1.0, c_B=0.0, c_w=1.0, c0=0.0, q=_well_density)
    else:
        raise ValueError(f"{spec.scenario!r} is not a flow/transport scenario")
    return mesh, flow, tp


@dataclass
class ScenarioResult:
    spec: CaseSpec
    mesh: Mesh
    permeability: np.ndarray
    flux: FaceField
    residual: float  # conservation residual norm of the flux used for transport
    times: np.ndarray
    overshoot: np.ndarray
    c_min: np.ndarray
    c_max: np.ndarray
    production: np.ndarray
    concentration: np.ndarray
    snapshots: dict
    pp_iterations: int = 0

    def region_mean(self, mask, c=None) -> float:
        """Area-weighted mean of ``c`` (default: final state) over ``mask``."""
        c = self.concentration if c is None else c
        a = self.mesh.element_areas[mask]
        return float(np.sum(a * np.asarray(c)[mask]) / np.sum(a))

    def breakthrough_time(self, fraction: float = 0.01) -> float:
        """First time with ``|PR| > fraction * max |PR|``; nan without production."""
        pr = np.abs(self.production)
        if not np.any(pr > 0):
            return float("nan")
        hit = np.flatnonzero(pr > fraction * pr.max())
        return float(self.times[hit[0]])

    def columns(self) -> dict:
        return {"time": list(self.times), "overshoot": list(self.overshoot), "min_c": list(self.c_min),
                "max_c": list(self.c_max), "production_rate": list(self.production)}


def run_scenario(spec: CaseSpec, transport_solver: SolverConfig | None = None) -> ScenarioResult:
    """Stationary flow, optional correction, then the transport time loop."""
    mesh, flow, tp = scenario_setup(spec)
    fs = FlowSolver(flow, spec.mode, spec.solver)
    p = fs.solve()
    U = extract_flux(mesh, p, flow, spec.mode, spec.averaging, flow_solver=fs)
    source = SourceSpec.from_function(mesh, flow.q)
    its = 0
    if spec.postprocess:
        pp = PostProcessor(mesh, spec.weights, flow.K, spec.pp_solver,
                           fix_dirichlet=spec.mode is DirichletMode.RECOVERY)
        flux, _, report = pp(U, source)
        its = pp.iterations
    else:
        flux, report = U, conservation_report(U, source, mesh)

    # the flux is frozen, so one factorisation serves every step
    ts = TransportSolver(tp, transport_solver or SolverConfig(method="direct"))
    state = tp.initial_state()
    steps = int(round(spec.T / spec.dt))
    c_bar = tp.c_bar
    has_sink = tp.q is not None
    times, over, lo, hi, prod = [], [], [], [], []
    snapshots = {}
    wanted = {round(s / spec.dt): s for s in spec.snapshot_times}
    for k in range(1, steps + 1):
        state = ts.step(state, flux, spec.dt)
        c = state.c
        times.append(state.time)
        over.append(overshoot(c, c_bar, mesh))
        lo.append(c.min())
        hi.append(c.max())
        prod.append(production_rate(c, tp, state.time) if has_sink else 0.0)
        if k in wanted:
            snapshots[wanted[k]] = c.copy()
    return ScenarioResult(
        spec=spec,
        mesh=mesh,
        permeability=flow.K.tensors[:, 0, 0].copy(),
        flux=flux,
        residual=report.norm,
        times=np.asarray(times),
        overshoot=np.asarray(over),
        c_min=np.asarray(lo),
        c_max=np.asarray(hi),
        production=np.asarray(prod),
        concentration=state.c,
        snapshots=snapshots,
        pp_iterations=its,
    )


# ---------------------------------------------------------------------------
# linear-solver study


def solver_study(n: int = 64, k_low: float = 1e-3, preconditioner=None, tolerance: float = 1e-12) -> dict:
    """CG iteration counts on the barrier problem for the flow system and the
    two correction systems (harmonic averaging, strong Dirichlet data).

    Returns ``{label: (dofs, iterations)}``.
    """
    spec = CaseSpec("barrier", averaging=AveragingScheme.HARMONIC, n=n, k_low=k_low)
    mesh, flow, _ = scenario_setup(spec)
    cfg = SolverConfig(tolerance=tolerance, preconditioner=preconditioner, max_iterations=100000)
    fs = FlowSolver(flow, DirichletMode.STRONG, SolverConfig(tolerance=1e-13))
    A, b = fs.reduced_system()
    out = {}
    _, its = cg_solve(A, b, cfg)
    out["CG(SD,theta)"] = (A.n, its)
    U = extract_flux(mesh, fs.solve(), flow, DirichletMode.STRONG, AveragingScheme.HARMONIC, flow_solver=fs)
    rhs = SourceSpec.zero(mesh).integrals - net_outflow(U, mesh)
    for lam, tag in ((WeightScheme.UNIFORM, "L2"), (WeightScheme.INVERSE_PERMEABILITY, "wL2")):
        M = assemble_pp_matrix(mesh, lam, flow.K)
        _, its = cg_solve(M, rhs, cfg)
        out[f"PP(SD,theta,{tag})"] = (M.n, its)
    return out
