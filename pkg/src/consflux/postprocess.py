"""Locally conservative correction of face fluxes.

Given a face flux ``U`` and per-element sources, the corrected flux

    V = U + [y] / w      on non-Neumann faces,    V = U on Neumann faces,

is the ``w``-weighted least-squares smallest face-constant correction whose
discrete divergence removes the conservation residual. ``y`` is a cell-wise
constant potential solving ``A y = r`` with the graph-Laplacian-like matrix

    A_ii = sum_F |F| / w_F  (faces of E_i not on the Neumann boundary),
    A_ij = -|F| / w_F       (face shared by E_i and E_j).

The jump is ``[y] = y_owner - y_neighbor`` (``y_owner`` on boundary faces).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .fem import element_quadrature, integrate_cells
from .flow import PermeabilityField, _as_function
from .flux import FaceField, face_permeability
from .linalg import SolverConfig, SparseMatrix, assemble, cg_solve, solve_singular_spd
from .mesh import FaceMarker, Mesh


class IncompatibleSourceError(ValueError):
    """Pure-Neumann correction requested for data violating global balance."""


class WeightScheme(str, enum.Enum):
    UNIFORM = "l2"
    INVERSE_PERMEABILITY = "wl2"

    @classmethod
    def parse(cls, value) -> "WeightScheme":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"l2": cls.UNIFORM, "uniform": cls.UNIFORM,
                   "wl2": cls.INVERSE_PERMEABILITY, "inverse_permeability": cls.INVERSE_PERMEABILITY}
        if key not in aliases:
            raise ValueError(f"unknown weight scheme {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class SourceSpec:
    """Per-element integrated source ``int_E q~``."""

    integrals: np.ndarray

    def __post_init__(self):
        v = np.array(self.integrals, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("source integrals must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "integrals", v)

    @classmethod
    def zero(cls, mesh: Mesh) -> "SourceSpec":
        return cls(np.zeros(mesh.num_elements))

    @classmethod
    def from_function(cls, mesh: Mesh, q, t: float = 0.0) -> "SourceSpec":
        if q is None:
            return cls.zero(mesh)
        return cls(integrate_cells(mesh, _as_function(q), t))

    @classmethod
    def from_density(cls, mesh: Mesh, density) -> "SourceSpec":
        return cls(np.asarray(density, dtype=float) * mesh.element_areas)

    @classmethod
    def transient(cls, mesh: Mesh, q, t, p_new, p_old, dt, beta_new, beta_old=None) -> "SourceSpec":
        """``q^n - (beta^n p^n - beta^{n-1} p^{n-1}) / dt`` integrated per element."""
        beta_old = beta_new if beta_old is None else beta_old
        quad = element_quadrature(mesh, 2)
        pn = np.einsum("pa,ma->mp", quad.values, np.asarray(p_new)[mesh.elements])
        po = np.einsum("pa,ma->mp", quad.values, np.asarray(p_old)[mesh.elements])
        rate = (np.asarray(beta_new)[:, None] * pn - np.asarray(beta_old)[:, None] * po) / dt
        storage = np.sum(rate * quad.weights, axis=1)
        base = cls.from_function(mesh, q, t).integrals
        return cls(base - storage)


@dataclass(frozen=True)
class ConservationReport:
    residual: np.ndarray  # density per element
    norm: float  # sqrt(sum |E| R^2)
    global_imbalance: float
    max_abs: float

    def is_conservative(self, tol: float = 1e-10) -> bool:
        return self.max_abs <= tol


def face_signs(mesh: Mesh):
    """Yield (element, face, sign) arrays for both face sides."""
    interior = mesh.face_neighbor >= 0
    elems = np.concatenate([mesh.face_owner, mesh.face_neighbor[interior]])
    faces = np.concatenate([np.arange(mesh.num_faces), np.flatnonzero(interior)])
    signs = np.concatenate([np.ones(mesh.num_faces), -np.ones(interior.sum())])
    return elems, faces, signs


def net_outflow(field: FaceField, mesh: Mesh) -> np.ndarray:
    """``sum_F mean_F |F| n_F . n_E`` for every element."""
    elems, faces, signs = face_signs(mesh)
    out = np.zeros(mesh.num_elements)
    np.add.at(out, elems, signs * field.mean[faces] * mesh.face_measures[faces])
    return out


def discrete_divergence(field: FaceField, mesh: Mesh) -> np.ndarray:
    """Element-wise net outflow per unit area."""
    return net_outflow(field, mesh) / mesh.element_areas


def residual(field: FaceField, source: SourceSpec, mesh: Mesh) -> np.ndarray:
    """Conservation residual density ``(int_E q~ - net outflow) / |E|``."""
    return (source.integrals - net_outflow(field, mesh)) / mesh.element_areas


def cell_norm(values, mesh: Mesh) -> float:
    return float(np.sqrt(np.sum(mesh.element_areas * np.asarray(values) ** 2)))


def conservation_report(field: FaceField, source: SourceSpec, mesh: Mesh) -> ConservationReport:
    R = residual(field, source, mesh)
    b = mesh.boundary_faces
    boundary_out = np.sum(field.mean[b] * mesh.face_measures[b])
    imbalance = abs(boundary_out - np.sum(source.integrals))
    return ConservationReport(R, cell_norm(R, mesh), float(imbalance), float(np.max(np.abs(R))))


def face_weights(mesh: Mesh, weights, K=None) -> np.ndarray:
    """Minimisation weight ``w_F`` per face."""
    weights = WeightScheme.parse(weights)
    if weights is WeightScheme.UNIFORM:
        return np.ones(mesh.num_faces)
    if K is None:
        raise ValueError("inverse-permeability weights need K")
    _, ke = face_permeability(mesh, K)
    return 1.0 / ke


def active_faces(mesh: Mesh, fix_dirichlet: bool = False) -> np.ndarray:
    """Mask of faces whose flux may be corrected."""
    active = mesh.face_marker != FaceMarker.NEUMANN
    if fix_dirichlet:
        active &= mesh.face_marker != FaceMarker.DIRICHLET
    return active


def assemble_pp_matrix(mesh: Mesh, weights, K=None, fix_dirichlet: bool = False) -> SparseMatrix:
    """Correction-system matrix for the given weights."""
    w = face_weights(mesh, weights, K)
    active = active_faces(mesh, fix_dirichlet)
    coef = mesh.face_measures / w
    f_all = np.flatnonzero(active)
    f_int = f_all[mesh.face_neighbor[f_all] >= 0]
    i, j = mesh.face_owner[f_int], mesh.face_neighbor[f_int]
    c_int = coef[f_int]
    f_bnd = f_all[mesh.face_neighbor[f_all] < 0]
    rows = np.concatenate([i, j, i, j, mesh.face_owner[f_bnd]])
    cols = np.concatenate([i, j, j, i, mesh.face_owner[f_bnd]])
    vals = np.concatenate([c_int, c_int, -c_int, -c_int, coef[f_bnd]])
    return assemble(mesh.num_elements, rows=rows, cols=cols, vals=vals, symmetric=True)


def is_singular(mesh: Mesh, fix_dirichlet: bool = False) -> bool:
    active = active_faces(mesh, fix_dirichlet)
    return not np.any(active & (mesh.face_neighbor < 0))


def correction_field(y: np.ndarray, mesh: Mesh, w: np.ndarray, active: np.ndarray) -> FaceField:
    """Face-constant field ``[y] / w`` on active faces, zero elsewhere."""
    y_nb = np.where(mesh.face_neighbor >= 0, y[np.maximum(mesh.face_neighbor, 0)], 0.0)
    jump = y[mesh.face_owner] - y_nb
    return FaceField.constant_per_face(np.where(active, jump / w, 0.0))


class PostProcessor:
    """Reusable correction operator for one mesh, weight scheme and K.

    The matrix is assembled once and reused for every flux, e.g. across
    time steps.
    """

    def __init__(self, mesh: Mesh, weights=WeightScheme.UNIFORM, K=None, solver: SolverConfig | None = None,
                 fix_dirichlet: bool = False, balance_rtol: float = 1e-8):
        self.mesh = mesh
        self.weights = WeightScheme.parse(weights)
        self.solver = solver or SolverConfig(tolerance=1e-12)
        self.fix_dirichlet = fix_dirichlet
        self.balance_rtol = balance_rtol
        self.w = face_weights(mesh, self.weights, K)
        self.active = active_faces(mesh, fix_dirichlet)
        self.matrix = assemble_pp_matrix(mesh, self.weights, K, fix_dirichlet)
        self.singular = is_singular(mesh, fix_dirichlet)
        self.iterations = 0

    def solve_potential(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``A y = rhs``; singular systems get a zero-mean ``y``."""
        rhs = np.asarray(rhs, dtype=float)
        if self.singular:
            y, its = solve_singular_spd(self.matrix, rhs, self.solver)
        else:
            y, its = cg_solve(self.matrix, rhs, self.solver)
        self.iterations = its
        return y

    def correction(self, y: np.ndarray) -> FaceField:
        return correction_field(y, self.mesh, self.w, self.active)

    def __call__(self, field: FaceField, source: SourceSpec):
        """Return ``(V, y, report)`` for the corrected flux ``V``."""
        mesh = self.mesh
        rhs = source.integrals - net_outflow(field, mesh)
        if self.singular:
            scale = np.sum(np.abs(source.integrals)) + np.sum(np.abs(field.mean) * mesh.face_measures)
            if abs(rhs.sum()) > self.balance_rtol * max(scale, 1e-300):
                raise IncompatibleSourceError(
                    "global balance violated: boundary flux and total source differ by "
                    f"{abs(rhs.sum()):.3e}; the pure-Neumann correction has no solution"
                )
        y = self.solve_potential(rhs)
        V = field + self.correction(y)
        return V, y, conservation_report(V, source, mesh)


def postprocess_flux(field: FaceField, source: SourceSpec, mesh: Mesh, weights=WeightScheme.UNIFORM, K=None,
                     solver: SolverConfig | None = None, fix_dirichlet: bool = False):
    """One-shot correction; see :class:`PostProcessor`."""
    return PostProcessor(mesh, weights, K, solver, fix_dirichlet)(field, source)
