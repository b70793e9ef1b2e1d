"""Continuous Galerkin (bilinear) solver for ``d(beta p)/dt - div(K grad p) = q``.

Dirichlet data may be imposed strongly (nodal interpolation), weakly
(symmetric Nitsche penalty) or strongly with a later boundary-flux
recovery, see :class:`DirichletMode`. Hanging nodes are eliminated by
condensation onto their parent nodes.

Data functions are vectorised callables: ``q(x, y, t)``, ``p_B(x, y, t)``,
``u_B(x, y, t, nx, ny)`` and ``p0(x, y)``. Plain numbers are accepted and
treated as constants.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import element_quadrature, face_quadrature, scatter_matrix, scatter_vector
from .linalg import SolverConfig, cg_solve, from_scipy, solve_singular_spd
from .mesh import FaceMarker, Mesh


class DirichletMode(str, enum.Enum):
    STRONG = "sd"
    WEAK = "wd"
    RECOVERY = "rd"

    @classmethod
    def parse(cls, value) -> "DirichletMode":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        for mode in cls:
            if key in (mode.value, mode.name.lower()):
                return mode
        raise ValueError(f"unknown Dirichlet mode {value!r}")


def constant(value: float):
    """Wrap a number as a vectorised data function."""
    value = float(value)

    def func(x, *args):
        return np.full(np.shape(x), value)

    return func


def _as_function(value):
    if value is None or callable(value):
        return value
    return constant(value)


@dataclass(frozen=True, eq=False)
class PermeabilityField:
    """Per-element symmetric positive definite 2x2 tensors."""

    tensors: np.ndarray

    def __post_init__(self):
        K = np.array(self.tensors, dtype=float)
        if K.ndim != 3 or K.shape[1:] != (2, 2):
            raise ValueError("permeability tensors must have shape (M, 2, 2)")
        if not np.allclose(K, np.swapaxes(K, 1, 2), rtol=1e-12, atol=0.0):
            raise ValueError("permeability tensors must be symmetric")
        if np.any(np.linalg.eigvalsh(K)[:, 0] <= 0):
            raise ValueError("permeability tensors must be positive definite")
        K.setflags(write=False)
        object.__setattr__(self, "tensors", K)

    @classmethod
    def isotropic(cls, values, num_elements: int | None = None) -> "PermeabilityField":
        values = np.asarray(values, dtype=float)
        if values.ndim == 0:
            if num_elements is None:
                raise ValueError("num_elements needed for a scalar permeability")
            values = np.full(num_elements, float(values))
        return cls(values[:, None, None] * np.eye(2))

    def __len__(self):
        return len(self.tensors)

    def normal_component(self, normals: np.ndarray, elems: np.ndarray) -> np.ndarray:
        """``n^T K n`` for each normal and its element."""
        return np.einsum("ki,kij,kj->k", normals, self.tensors[elems], normals)


@dataclass(frozen=True, eq=False)
class FlowProblem:
    """Data of a Darcy flow problem on a fixed mesh.

    Parameters
    ----------
    mesh : Mesh
    K : PermeabilityField or scalar
    beta : per-element array, scalar, or callable ``beta(t) -> array``
    q, p_B, u_B, p0 : data functions (see module docstring)
    sigma : Nitsche penalty, scalar or per-face array
    """

    mesh: Mesh
    K: PermeabilityField | float = 1.0
    beta: object = 0.0
    q: object = None
    p_B: object = None
    u_B: object = None
    p0: object = None
    sigma: object = 10.0
    s_form: int = field(default=1, init=False)

    def __post_init__(self):
        M = self.mesh.num_elements
        K = self.K
        if not isinstance(K, PermeabilityField):
            K = np.asarray(K, dtype=float)
            K = PermeabilityField(K) if K.ndim == 3 else PermeabilityField.isotropic(K, M)
        if len(K) != M:
            raise ValueError("one permeability tensor per element required")
        object.__setattr__(self, "K", K)
        if not callable(self.beta):
            beta = np.broadcast_to(np.asarray(self.beta, dtype=float), (M,)).copy()
            if np.any(beta < 0):
                raise ValueError("beta must be non-negative")
            object.__setattr__(self, "beta", beta)
        for name in ("q", "p_B", "u_B", "p0"):
            object.__setattr__(self, name, _as_function(getattr(self, name)))
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (self.mesh.num_faces,)).copy()
        if np.any(sigma[self.mesh.face_marker == FaceMarker.DIRICHLET] <= 0):
            raise ValueError("penalty must be positive on Dirichlet faces")
        object.__setattr__(self, "sigma", sigma)
        if self.p_B is None and np.any(self.mesh.face_marker == FaceMarker.DIRICHLET):
            object.__setattr__(self, "p_B", constant(0.0))

    def beta_at(self, t: float) -> np.ndarray:
        if callable(self.beta):
            return np.broadcast_to(np.asarray(self.beta(t), dtype=float), (self.mesh.num_elements,))
        return self.beta

    @property
    def is_transient(self) -> bool:
        return callable(self.beta) or bool(np.any(self.beta > 0))

    @property
    def has_dirichlet(self) -> bool:
        return bool(np.any(self.mesh.face_marker == FaceMarker.DIRICHLET))


def hanging_resolution(mesh: Mesh) -> sp.csr_matrix:
    """Matrix mapping non-hanging nodal values to values at all nodes."""
    N = mesh.num_nodes
    parents = {int(m): (int(a), int(b)) for m, a, b in mesh.constraints}
    rows: dict[int, dict[int, float]] = {}

    def resolve(i):
        if i in rows:
            return rows[i]
        if i not in parents:
            rows[i] = {i: 1.0}
            return rows[i]
        out: dict[int, float] = {}
        for par in parents[i]:
            for j, w in resolve(par).items():
                out[j] = out.get(j, 0.0) + 0.5 * w
        rows[i] = out
        return out

    r, c, v = [], [], []
    for i in range(N):
        for j, w in resolve(i).items():
            r.append(i)
            c.append(j)
            v.append(w)
    return sp.csr_matrix((v, (r, c)), shape=(N, N))


def interpolate(mesh: Mesh, func, t=None) -> np.ndarray:
    """Nodal interpolant with hanging nodes set to their constrained values."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    vals = func(x, y) if t is None else func(x, y, t)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (mesh.num_nodes,))
    return hanging_resolution(mesh) @ vals


class FlowSolver:
    """Assembled CG system for one problem and Dirichlet mode.

    Matrices depending only on the mesh and coefficients are assembled once;
    :meth:`solve` and :meth:`step` reuse them.
    """

    def __init__(self, problem: FlowProblem, mode=DirichletMode.STRONG, solver: SolverConfig | None = None):
        self.problem = problem
        self.mode = DirichletMode.parse(mode)
        self.solver = solver or SolverConfig(tolerance=1e-12)
        mesh = problem.mesh
        self.mesh = mesh
        self.quad = element_quadrature(mesh, 2)
        self.fquad = face_quadrature(mesh)
        q = self.quad

        KG = np.einsum("mij,mpaj->mpai", problem.K.tensors, q.grads)
        local_a = np.einsum("mp,mpai,mpbi->mab", q.weights, q.grads, KG)
        self.stiffness = scatter_matrix(mesh, local_a).tocsr()
        self._unit_mass_local = np.einsum("mp,pa,pb->mab", q.weights, q.values, q.values)

        self.dirichlet_faces = mesh.faces_with_marker(FaceMarker.DIRICHLET)
        self.neumann_faces = mesh.faces_with_marker(FaceMarker.NEUMANN)
        self.dirichlet_nodes = np.unique(mesh.face_nodes[self.dirichlet_faces])

        self.system = self.stiffness
        if self.mode is DirichletMode.WEAK and len(self.dirichlet_faces):
            self.system = (self.stiffness + self._nitsche_matrix()).tocsr()

        H = hanging_resolution(mesh)
        hanging = np.zeros(mesh.num_nodes, dtype=bool)
        hanging[mesh.constraints[:, 0]] = True
        fixed = np.zeros(mesh.num_nodes, dtype=bool)
        if self.mode is not DirichletMode.WEAK:
            fixed[self.dirichlet_nodes] = True
        self.free_nodes = np.flatnonzero(~hanging & ~fixed)
        self.fixed_nodes = np.flatnonzero(fixed)
        self.P = H[:, self.free_nodes].tocsr()
        self.G = H[:, self.fixed_nodes].tocsr()
        self.H_all = H[:, np.flatnonzero(~hanging)].tocsr()
        self.nonhanging_nodes = np.flatnonzero(~hanging)
        self._reduced_cache: dict = {}

    # -- assembly pieces -------------------------------------------------
    def _owner_face_data(self, faces):
        fq = self.fquad
        own = fq.owner
        elems = self.mesh.face_owner[faces]
        v = own.values[faces]  # [F, G, 4]
        Kn = np.einsum("fij,fj->fi", self.problem.K.tensors[elems], self.mesh.face_normals[faces])
        g = np.einsum("fgai,fi->fga", own.grads[faces], Kn)  # K grad phi . n
        return elems, v, g, fq.weights[faces]

    def _nitsche_matrix(self):
        faces = self.dirichlet_faces
        elems, v, g, w = self._owner_face_data(faces)
        pen = (self.problem.sigma[faces] / self.mesh.face_measures[faces])[:, None]
        local = (
            np.einsum("fg,fga,fgb->fab", w * pen, v, v)
            - np.einsum("fg,fga,fgb->fab", w, v, g)
            - self.problem.s_form * np.einsum("fg,fga,fgb->fab", w, g, v)
        )
        return scatter_matrix(self.mesh, local, elems)

    def mass_matrix(self, beta: np.ndarray) -> sp.csr_matrix:
        return scatter_matrix(self.mesh, beta[:, None, None] * self._unit_mass_local).tocsr()

    def load_vector(self, t: float) -> np.ndarray:
        """``l(phi)`` (plus the weak Dirichlet terms in Weak mode) at time ``t``."""
        mesh, prob, q = self.mesh, self.problem, self.quad
        b = np.zeros(mesh.num_nodes)
        if prob.q is not None:
            qv = prob.q(q.points[..., 0], q.points[..., 1], t)
            b += scatter_vector(mesh, np.einsum("mp,mp,pa->ma", q.weights, qv, q.values))
        fq = self.fquad
        if prob.u_B is not None and len(self.neumann_faces):
            faces = self.neumann_faces
            elems, v, _, w = self._owner_face_data(faces)
            pts = fq.points[faces]
            n = mesh.face_normals[faces]
            uB = prob.u_B(pts[..., 0], pts[..., 1], t, n[:, None, 0], n[:, None, 1])
            b -= scatter_vector(mesh, np.einsum("fg,fg,fga->fa", w, uB, v), elems)
        if self.mode is DirichletMode.WEAK and len(self.dirichlet_faces):
            faces = self.dirichlet_faces
            elems, v, g, w = self._owner_face_data(faces)
            pts = fq.points[faces]
            pB = prob.p_B(pts[..., 0], pts[..., 1], t)
            pen = (prob.sigma[faces] / mesh.face_measures[faces])[:, None]
            local = np.einsum("fg,fg,fga->fa", w * pen, pB, v) - prob.s_form * np.einsum(
                "fg,fg,fga->fa", w, pB, g
            )
            b += scatter_vector(mesh, local, elems)
        return b

    def dirichlet_values(self, t: float) -> np.ndarray:
        x = self.mesh.nodes[self.fixed_nodes]
        if len(x) == 0:
            return np.zeros(0)
        return np.broadcast_to(self.problem.p_B(x[:, 0], x[:, 1], t), (len(x),)).astype(float)

    # -- solves ----------------------------------------------------------
    def _reduced(self, key, matrix):
        if key not in self._reduced_cache:
            if len(self._reduced_cache) > 4:
                self._reduced_cache.clear()
            red = (self.P.T @ matrix @ self.P).tocsr()
            self._reduced_cache[key] = from_scipy(red, symmetric=True)
        return self._reduced_cache[key]

    def _solve(self, matrix, rhs, t, key, singular):
        g = self.G @ self.dirichlet_values(t)
        b = self.P.T @ (rhs - matrix @ g)
        A = self._reduced(key, matrix)
        if singular:
            x, _ = solve_singular_spd(A, b, self.solver)
        else:
            x, _ = cg_solve(A, b, self.solver)
        p = self.P @ x + g
        if singular:
            p = p - self.mean(p)
        return p

    def reduced_system(self, t: float = 0.0):
        """Stationary system on the free dofs -> ``(SparseMatrix, rhs)``."""
        g = self.G @ self.dirichlet_values(t)
        b = self.P.T @ (self.load_vector(t) - self.system @ g)
        return self._reduced(("stationary",), self.system), b

    def solve(self, t: float = 0.0) -> np.ndarray:
        """Stationary solve (``beta`` ignored) at time ``t``."""
        singular = not self.problem.has_dirichlet
        return self._solve(self.system, self.load_vector(t), t, ("stationary",), singular)

    def step(self, p_prev: np.ndarray, t_new: float, dt: float) -> np.ndarray:
        """One backward Euler step from ``t_new - dt`` to ``t_new``."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        beta_new = self.problem.beta_at(t_new)
        beta_old = self.problem.beta_at(t_new - dt)
        M_new = self.mass_matrix(beta_new)
        matrix = (self.system + M_new / dt).tocsr()
        if beta_old is beta_new or np.array_equal(beta_old, beta_new):
            M_old = M_new
        else:
            M_old = self.mass_matrix(beta_old)
        rhs = self.load_vector(t_new) + M_old @ p_prev / dt
        singular = not self.problem.has_dirichlet and not np.any(beta_new > 0)
        key = ("step", dt, beta_new.tobytes())
        return self._solve(matrix, rhs, t_new, key, singular)

    def initial(self) -> np.ndarray:
        if self.problem.p0 is None:
            return np.zeros(self.mesh.num_nodes)
        return interpolate(self.mesh, self.problem.p0)

    def mean(self, p: np.ndarray) -> float:
        vals = np.einsum("pi,mi->mp", self.quad.values, p[self.mesh.elements])
        return float(np.sum(vals * self.quad.weights) / np.sum(self.quad.weights))

    def variational_residual(self, p, t, dt=None, p_prev=None) -> np.ndarray:
        """``a(p, phi_i) - l(phi_i) + (time term, phi_i)`` for each constrained basis function.

        Returned per non-hanging node (hanging contributions are folded onto
        parents), indexed like :attr:`nonhanging_nodes`.
        """
        r = self.stiffness @ p - self._plain_load(t)
        if dt is not None:
            beta_new = self.problem.beta_at(t)
            beta_old = self.problem.beta_at(t - dt)
            r += (self.mass_matrix(beta_new) @ p - self.mass_matrix(beta_old) @ p_prev) / dt
        return self.H_all.T @ r

    def _plain_load(self, t):
        if self.mode is DirichletMode.WEAK:
            saved = self.mode
            self.mode = DirichletMode.STRONG
            try:
                return self.load_vector(t)
            finally:
                self.mode = saved
        return self.load_vector(t)


def solve_stationary(problem: FlowProblem, mode=DirichletMode.STRONG, solver: SolverConfig | None = None, t=0.0):
    """Solve the stationary problem; returns the nodal pressure."""
    return FlowSolver(problem, mode, solver).solve(t)


def advance_timestep(problem: FlowProblem, mode, p_prev, t_new, dt, solver: SolverConfig | None = None):
    """One backward Euler step; prefer :class:`FlowSolver` inside loops."""
    return FlowSolver(problem, mode, solver).step(np.asarray(p_prev, dtype=float), t_new, dt)


def compute_errors(mesh: Mesh, p_h, exact, exact_gradient, K=1.0, t=0.0, order: int = 3) -> dict:
    """L2 and energy-norm errors of a nodal field against an exact solution.

    ``exact(x, y, t)`` and ``exact_gradient(x, y, t) -> [..., 2]``.
    """
    if not isinstance(K, PermeabilityField):
        K = np.asarray(K, dtype=float)
        K = PermeabilityField(K) if K.ndim == 3 else PermeabilityField.isotropic(K, mesh.num_elements)
    q = element_quadrature(mesh, order)
    x, y = q.points[..., 0], q.points[..., 1]
    pe = mesh.elements
    ph = np.einsum("pa,ma->mp", q.values, p_h[pe])
    gh = np.einsum("mpai,ma->mpi", q.grads, p_h[pe])
    e = exact(x, y, t) - ph
    ge = exact_gradient(x, y, t) - gh
    energy = np.einsum("mp,mpi,mij,mpj->", q.weights, ge, K.tensors, ge)
    return {"l2": float(np.sqrt(np.sum(q.weights * e * e))), "energy": float(np.sqrt(max(energy, 0.0)))}
