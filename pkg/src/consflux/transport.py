"""Implicit upwind finite-volume (piecewise-constant DG) transport.

Solves ``d(phi c)/dt + div(u c) = q c* + f`` with backward Euler, where
``q c* = q c`` in sinks and ``q c_w`` in sources. The face flux enters only
through its face mean; a face is outflow for its owner when the mean is
``>= 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .fem import element_quadrature
from .flux import FaceField
from .linalg import SolverConfig, assemble, bicgstab_solve
from .mesh import Mesh
from .quadrature import FACE_GAUSS_T, FACE_GAUSS_W


def _as_function(value):
    if value is None or callable(value):
        return value
    v = float(value)
    return lambda x, *args: np.full(np.shape(x), v)


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Transport data.

    ``c_B``, ``c_w``, ``q`` and ``f`` are callables ``(x, y, t)`` or numbers;
    ``c0`` may also be a per-element array.
    """

    mesh: Mesh
    porosity: object = 1.0
    c_B: object = 0.0
    c_w: object = 1.0
    c0: object = 0.0
    q: object = None
    f: object = None

    def __post_init__(self):
        phi = np.broadcast_to(np.asarray(self.porosity, dtype=float), (self.mesh.num_elements,)).copy()
        if np.any(phi <= 0):
            raise ValueError("porosity must be positive")
        object.__setattr__(self, "porosity", phi)
        for name in ("c_B", "c_w", "q", "f"):
            object.__setattr__(self, name, _as_function(getattr(self, name)))

    def initial_state(self) -> "TransportState":
        c0 = self.c0
        if callable(c0):
            quad = element_quadrature(self.mesh, 2)
            vals = c0(quad.points[..., 0], quad.points[..., 1])
            c = np.sum(vals * quad.weights, axis=1) / np.sum(quad.weights, axis=1)
        else:
            c = np.broadcast_to(np.asarray(c0, dtype=float), (self.mesh.num_elements,)).copy()
        return TransportState(0.0, c)

    @property
    def c_bar(self) -> float:
        """Upper physical bound ``max(c_B, c_w, c0)`` over the data."""
        mesh = self.mesh
        bounds = [float(np.max(self.initial_state().c))]
        pts = mesh.face_midpoints[mesh.boundary_faces]
        if self.c_B is not None and len(pts):
            bounds.append(float(np.max(self.c_B(pts[:, 0], pts[:, 1], 0.0))))
        if self.q is not None and self.c_w is not None:
            c = mesh.element_centroids
            bounds.append(float(np.max(self.c_w(c[:, 0], c[:, 1], 0.0))))
        return max(bounds)


@dataclass(frozen=True)
class TransportState:
    time: float
    c: np.ndarray


def classify_boundary(flux: FaceField, mesh: Mesh):
    """Boundary faces and a mask that is True for inflow (mean flux < 0)."""
    faces = mesh.boundary_faces
    return faces, flux.mean[faces] < 0


def _source_split(problem: TransportProblem, t: float):
    """Per-element ``int q^-`` and ``int q^+ c_w`` (pointwise split)."""
    mesh = problem.mesh
    M = mesh.num_elements
    if problem.q is None:
        return np.zeros(M), np.zeros(M)
    quad = element_quadrature(mesh, 2)
    x, y = quad.points[..., 0], quad.points[..., 1]
    q = np.broadcast_to(problem.q(x, y, t), x.shape)
    q_minus = np.sum(np.minimum(q, 0.0) * quad.weights, axis=1)
    cw = np.broadcast_to(problem.c_w(x, y, t), x.shape) if problem.c_w is not None else 0.0
    q_plus = np.sum(np.maximum(q, 0.0) * cw * quad.weights, axis=1)
    return q_minus, q_plus


class TransportSolver:
    """Backward Euler stepper for a fixed problem; caches the matrix per flux."""

    def __init__(self, problem: TransportProblem, solver: SolverConfig | None = None):
        self.problem = problem
        self.mesh = problem.mesh
        self.solver = solver or SolverConfig(tolerance=1e-13, preconditioner="jacobi")
        self._key = None
        self._matrix = None

    def _matrix_for(self, U: np.ndarray, dt: float, q_minus: np.ndarray):
        key = (U.tobytes(), dt, q_minus.tobytes())
        if key == self._key:
            return self._matrix
        mesh = self.mesh
        F = mesh.face_measures * U
        own, nb = mesh.face_owner, mesh.face_neighbor
        interior = nb >= 0
        out_owner = U >= 0
        # owner-upwind faces: owner loses F c_owner, neighbor gains it
        fo = np.flatnonzero(interior & out_owner)
        fn = np.flatnonzero(interior & ~out_owner)
        fb = np.flatnonzero(~interior & out_owner)
        M = mesh.num_elements
        diag = mesh.element_areas * self.problem.porosity / dt - q_minus
        rows = np.concatenate([np.arange(M), own[fo], nb[fo], own[fn], nb[fn], own[fb]])
        cols = np.concatenate([np.arange(M), own[fo], own[fo], nb[fn], nb[fn], own[fb]])
        vals = np.concatenate([diag, F[fo], -F[fo], F[fn], -F[fn], F[fb]])
        self._matrix = assemble(M, rows=rows, cols=cols, vals=vals)
        self._key = key
        return self._matrix

    def step(self, state: TransportState, flux: FaceField, dt: float) -> TransportState:
        if not dt > 0:
            raise ValueError("dt must be positive")
        mesh, prob = self.mesh, self.problem
        t_new = state.time + dt
        U = flux.mean
        if not np.all(np.isfinite(U)):
            raise ValueError("flux must be finite")
        q_minus, q_plus_cw = _source_split(prob, t_new)
        A = self._matrix_for(U, dt, q_minus)
        rhs = mesh.element_areas * prob.porosity * state.c / dt + q_plus_cw
        faces, inflow = classify_boundary(flux, mesh)
        fin = faces[inflow]
        if len(fin):
            pts = mesh.face_points(FACE_GAUSS_T)[fin]
            cB = prob.c_B(pts[..., 0], pts[..., 1], t_new) if prob.c_B is not None else np.zeros(pts.shape[:2])
            cB_mean = np.sum(np.broadcast_to(cB, pts.shape[:2]) * FACE_GAUSS_W, axis=1)
            np.add.at(rhs, mesh.face_owner[fin], -mesh.face_measures[fin] * U[fin] * cB_mean)
        if prob.f is not None:
            quad = element_quadrature(mesh, 2)
            fv = prob.f(quad.points[..., 0], quad.points[..., 1], t_new)
            rhs += np.sum(fv * quad.weights, axis=1)
        c, _ = bicgstab_solve(A, rhs, self.solver, x0=state.c)
        return TransportState(t_new, c)


def advance_transport(state: TransportState, flux: FaceField, problem: TransportProblem, dt: float,
                      solver: SolverConfig | None = None) -> TransportState:
    """One implicit upwind step; prefer :class:`TransportSolver` in loops."""
    return TransportSolver(problem, solver).step(state, flux, dt)


def overshoot(c, c_bar: float, mesh: Mesh) -> float:
    """L2 norm of the part of ``c`` outside ``[0, c_bar]``."""
    c = np.asarray(c, dtype=float)
    excess = np.maximum(c - c_bar, 0.0) + np.maximum(-c, 0.0)
    return float(np.sqrt(np.sum(mesh.element_areas * excess**2)))


def production_rate(c, problem: TransportProblem, t: float) -> float:
    """``sum_E c_E int_E q^-`` at time ``t`` (negative when producing)."""
    q_minus, _ = _source_split(problem, t)
    if not np.any(q_minus < 0):
        warnings.warn("no sink region; production rate is zero", stacklevel=2)
        return 0.0
    return float(np.sum(np.asarray(c) * q_minus))


def concentration_error(c, exact, mesh: Mesh, t: float, order: int = 2) -> float:
    """Broken L2 error of a cell-wise constant field against ``exact(x, y, t)``."""
    quad = element_quadrature(mesh, order)
    e = exact(quad.points[..., 0], quad.points[..., 1], t) - np.asarray(c)[:, None]
    return float(np.sqrt(np.sum(quad.weights * e * e)))
