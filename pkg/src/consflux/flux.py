"""Face fluxes from a CG pressure, face norms and line integrals.

A :class:`FaceField` stores one normal flux per face, sampled at the two
face Gauss points and oriented along the face normal (out of the owner).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fem import face_quadrature
from .flow import DirichletMode, FlowProblem, FlowSolver, PermeabilityField
from .linalg import SolverConfig, cg_solve, from_scipy
from .mesh import FaceMarker, Mesh
from .quadrature import FACE_GAUSS_T, gauss_1d


@dataclass(frozen=True, eq=False)
class FaceField:
    """Normal flux per face at the two face Gauss points (``values[K, 2]``)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("face values must have shape (K, 2)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def __len__(self):
        return len(self.values)

    def __add__(self, other):
        if isinstance(other, FaceField):
            return FaceField(self.values + other.values)
        return FaceField(self.values + np.asarray(other, dtype=float).reshape(-1, 1))

    def __sub__(self, other):
        return FaceField(self.values - other.values)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "FaceField":
        return cls(np.zeros((mesh.num_faces, 2)))

    @classmethod
    def constant_per_face(cls, means) -> "FaceField":
        means = np.asarray(means, dtype=float)
        return cls(np.repeat(means[:, None], 2, axis=1))


class AveragingScheme(str, enum.Enum):
    CENTRAL = "central"
    HARMONIC = "harmonic"

    @classmethod
    def parse(cls, value) -> "AveragingScheme":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"central": cls.CENTRAL, "1/2": cls.CENTRAL, "half": cls.CENTRAL,
                   "harmonic": cls.HARMONIC, "theta": cls.HARMONIC}
        if key not in aliases:
            raise ValueError(f"unknown averaging scheme {value!r}")
        return aliases[key]


def effective_face_permeability(K_owner, K_neighbor, normal):
    """Harmonic face weights from the normal permeability components.

    Returns ``(theta, k_e)`` where ``theta`` weights the owner side. With
    ``K_neighbor=None`` (boundary face) the owner alone defines both.
    Arguments broadcast: tensors ``[..., 2, 2]``, normals ``[..., 2]``.
    """
    n = np.asarray(normal, dtype=float)
    d_i = np.einsum("...i,...ij,...j->...", n, np.asarray(K_owner, dtype=float), n)
    if np.any(d_i <= 0):
        raise ValueError("normal permeability must be positive")
    if K_neighbor is None:
        return np.ones_like(d_i), d_i
    d_j = np.einsum("...i,...ij,...j->...", n, np.asarray(K_neighbor, dtype=float), n)
    if np.any(d_j <= 0):
        raise ValueError("normal permeability must be positive")
    return d_j / (d_i + d_j), 2.0 * d_i * d_j / (d_i + d_j)


def face_permeability(mesh: Mesh, K: PermeabilityField):
    """``(theta, k_e)`` for every face; boundary faces use the owner alone."""
    if not isinstance(K, PermeabilityField):
        K = PermeabilityField.isotropic(K, mesh.num_elements)
    n = mesh.face_normals
    Ki = K.tensors[mesh.face_owner]
    nb = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
    theta, ke = effective_face_permeability(Ki, K.tensors[nb], n)
    boundary = mesh.face_neighbor < 0
    d_i = np.einsum("ki,kij,kj->k", n, Ki, n)
    theta = np.where(boundary, 1.0, theta)
    ke = np.where(boundary, d_i, ke)
    return theta, ke


def _side_normal_flux(mesh, K, side, p):
    """``-K grad p . n_F`` at face Gauss points from one side -> ``[K, 2]``."""
    elems = np.where(side.elems >= 0, side.elems, mesh.face_owner)
    grad = np.einsum("kgai,ka->kgi", side.grads, p[mesh.elements[elems]])
    Kn = np.einsum("kij,kj->ki", K.tensors[elems], mesh.face_normals)
    return -np.einsum("kgi,ki->kg", grad, Kn)


def extract_flux(
    mesh: Mesh,
    p_h,
    problem: FlowProblem,
    mode=DirichletMode.STRONG,
    averaging=AveragingScheme.CENTRAL,
    t: float = 0.0,
    dt: float | None = None,
    p_prev=None,
    flow_solver: FlowSolver | None = None,
) -> FaceField:
    """Face flux ``U_h`` of a CG pressure.

    Interior faces take the (central or harmonic) average of the two
    one-sided fluxes, Neumann faces the datum ``u_B``. On Dirichlet faces
    the flux is one-sided (Strong), penalised (Weak) or recovered
    (Recovery); the latter needs ``dt`` and ``p_prev`` for transient runs.
    """
    mode = DirichletMode.parse(mode)
    averaging = AveragingScheme.parse(averaging)
    p = np.asarray(p_h, dtype=float)
    K = problem.K
    fq = flow_solver.fquad if flow_solver is not None else face_quadrature(mesh)
    own = _side_normal_flux(mesh, K, fq.owner, p)
    nbr = _side_normal_flux(mesh, K, fq.neighbor, p)
    if averaging is AveragingScheme.HARMONIC:
        theta, _ = face_permeability(mesh, K)
    else:
        theta = np.where(mesh.face_neighbor >= 0, 0.5, 1.0)
    values = theta[:, None] * own + (1.0 - theta[:, None]) * nbr

    neumann = mesh.face_marker == FaceMarker.NEUMANN
    if np.any(neumann):
        pts = fq.points[neumann]
        n = mesh.face_normals[neumann]
        if problem.u_B is None:
            values[neumann] = 0.0
        else:
            values[neumann] = problem.u_B(pts[..., 0], pts[..., 1], t, n[:, None, 0], n[:, None, 1])

    dirichlet = np.flatnonzero(mesh.face_marker == FaceMarker.DIRICHLET)
    if len(dirichlet):
        if mode is DirichletMode.WEAK:
            pts = fq.points[dirichlet]
            trace = np.einsum("fga,fa->fg", fq.owner.values[dirichlet], p[mesh.elements[mesh.face_owner[dirichlet]]])
            pen = problem.sigma[dirichlet] / mesh.face_measures[dirichlet]
            values[dirichlet] = own[dirichlet] + pen[:, None] * (trace - problem.p_B(pts[..., 0], pts[..., 1], t))
        elif mode is DirichletMode.RECOVERY:
            values[dirichlet] = recover_dirichlet_flux(
                mesh, p, problem, t=t, dt=dt, p_prev=p_prev, flow_solver=flow_solver
            )
        else:
            values[dirichlet] = own[dirichlet]
    return FaceField(values)


def recover_dirichlet_flux(
    mesh: Mesh,
    p_h,
    problem: FlowProblem,
    t: float = 0.0,
    dt: float | None = None,
    p_prev=None,
    flow_solver: FlowSolver | None = None,
    solver: SolverConfig = SolverConfig(tolerance=1e-14, max_iterations=2000),
) -> np.ndarray:
    """Variationally recovered flux on Dirichlet faces -> ``[n_dirichlet_faces, 2]``.

    Solves the boundary mass system ``M U = -(a(p, phi) - l(phi) + time term)``
    over the Dirichlet nodes and samples the nodal trace at the face
    Gauss points.
    """
    faces = np.flatnonzero(mesh.face_marker == FaceMarker.DIRICHLET)
    if len(faces) == 0:
        raise ValueError("recovery needs a nonempty Dirichlet boundary")
    fs = flow_solver if flow_solver is not None else FlowSolver(problem, DirichletMode.STRONG)
    if (dt is None) != (p_prev is None):
        raise ValueError("dt and p_prev must be given together")
    residual = fs.variational_residual(np.asarray(p_h, dtype=float), t, dt, p_prev)
    nodes = np.unique(mesh.face_nodes[faces])
    where = np.searchsorted(fs.nonhanging_nodes, nodes)
    rhs = -residual[where]

    local_index = np.full(mesh.num_nodes, -1)
    local_index[nodes] = np.arange(len(nodes))
    fn = local_index[mesh.face_nodes[faces]]
    L = mesh.face_measures[faces]
    block = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    rows = np.repeat(fn[:, :, None], 2, axis=2).ravel()
    cols = np.repeat(fn[:, None, :], 2, axis=1).ravel()
    vals = (L[:, None, None] * block).ravel()
    M = from_scipy(sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), len(nodes))), symmetric=True)
    U, _ = cg_solve(M, rhs, solver)
    t_g = FACE_GAUSS_T
    return U[fn[:, :1]] * (1.0 - t_g) + U[fn[:, 1:]] * t_g


def exact_flux(mesh: Mesh, velocity, t: float = 0.0) -> FaceField:
    """Sample ``velocity(x, y, t) . n_F`` at face Gauss points."""
    pts = mesh.face_points(FACE_GAUSS_T)
    u = velocity(pts[..., 0], pts[..., 1], t)
    return FaceField(np.einsum("kgi,ki->kg", u, mesh.face_normals))


def face_norm_error(field: FaceField, velocity, mesh: Mesh, weighted: bool = False, t: float = 0.0,
                    order: int | None = 4, skip_neumann: bool = True) -> float:
    """Face-norm distance between ``field`` and the exact normal flux.

    ``weighted=True`` gives the h-weighted norm ``(sum_F h_F ||.||_F^2)^(1/2)``
    with ``h_F`` the longest edge of the elements sharing ``F``. The field
    is extended linearly along each face from its two Gauss values and
    integrated with an ``order``-point rule (``order=None`` uses the stored
    values directly). Neumann faces carry the boundary datum itself and
    are skipped unless ``skip_neumann`` is False.
    """
    if order is None:
        tq, wq = FACE_GAUSS_T, gauss_1d(2)[1]
        vals = field.values
    else:
        tq, wq = gauss_1d(order)
        g0, g1 = FACE_GAUSS_T
        slope = (field.values[:, 1] - field.values[:, 0]) / (g1 - g0)
        vals = field.values[:, :1] + slope[:, None] * (tq[None, :] - g0)
    pts = mesh.face_points(tq)
    u = velocity(pts[..., 0], pts[..., 1], t)
    exact = np.einsum("kgi,ki->kg", u, mesh.face_normals)
    sq = mesh.face_measures * np.sum(wq * (exact - vals) ** 2, axis=1)
    if skip_neumann:
        sq = np.where(mesh.face_marker == FaceMarker.NEUMANN, 0.0, sq)
    if weighted:
        sq = sq * face_h(mesh)
    return float(np.sqrt(np.sum(sq)))


def face_h(mesh: Mesh) -> np.ndarray:
    d = mesh.element_max_edges
    nb = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
    return np.maximum(d[mesh.face_owner], d[nb])


def face_norm(field: FaceField, mesh: Mesh, weights=None) -> float:
    """Plain (or ``weights``-weighted) L2 norm over all faces."""
    wq = gauss_1d(2)[1]
    sq = mesh.face_measures * np.sum(wq * field.values**2, axis=1)
    if weights is not None:
        sq = sq * weights
    return float(np.sqrt(np.sum(sq)))


def line_faces(mesh: Mesh, x: float, tol: float = 1e-10) -> np.ndarray:
    """Faces lying on the vertical line through ``x``; must tile the domain height."""
    fx = mesh.nodes[mesh.face_nodes, 0]
    on = np.all(np.abs(fx - x) <= tol, axis=1)
    faces = np.flatnonzero(on)
    ys = mesh.nodes[mesh.face_nodes[faces], 1]
    height = mesh.nodes[:, 1].max() - mesh.nodes[:, 1].min()
    covered = np.sum(np.abs(ys[:, 1] - ys[:, 0]))
    if len(faces) == 0 or abs(covered - height) > 1e-9 * max(height, 1.0):
        raise ValueError(f"faces at x = {x} do not tile a vertical mesh line")
    return faces


def integrate_flux_on_line(field: FaceField, mesh: Mesh, x: float) -> float:
    """Total flux in the +x direction across the vertical mesh line at ``x``."""
    faces = line_faces(mesh, x)
    sign = np.sign(mesh.face_normals[faces, 0])
    return float(np.sum(field.mean[faces] * mesh.face_measures[faces] * sign))


# ---------------------------------------------------------------------------
# CSV exchange format

CSV_HEADER = ["face_id", "x_mid", "y_mid", "nx", "ny", "measure", "mean", "g0", "g1"]


def save_face_field(field: FaceField, mesh: Mesh, path) -> None:
    """Write one row per face; ``path`` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_face_rows(field, mesh, path)
        return
    with open(path, "w", newline="") as fh:
        _write_face_rows(field, mesh, fh)


def _write_face_rows(field: FaceField, mesh: Mesh, fh) -> None:
    mid = mesh.face_midpoints
    n = mesh.face_normals
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k in range(mesh.num_faces):
        nums = (mid[k, 0], mid[k, 1], n[k, 0], n[k, 1], mesh.face_measures[k],
                field.mean[k], field.values[k, 0], field.values[k, 1])
        w.writerow([k] + [f"{v:.17g}" for v in nums])


def load_face_field(path, mesh: Mesh | None = None) -> FaceField:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    try:
        ids = np.array([int(r[0]) for r in body])
        data = np.array([[float(v) for v in r[1:]] for r in body]).reshape(-1, 8)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    if not np.array_equal(np.sort(ids), np.arange(len(ids))):
        raise ValueError(f"{path}: face ids must be 0..K-1")
    order = np.argsort(ids)
    data = data[order]
    if mesh is not None and len(data) != mesh.num_faces:
        raise ValueError(f"{path}: {len(data)} faces but mesh has {mesh.num_faces}")
    values = data[:, 6:8]
    if not np.allclose(values.mean(axis=1), data[:, 5], rtol=1e-12, atol=1e-12):
        raise ValueError(f"{path}: mean column inconsistent with Gauss values")
    return FaceField(values)
