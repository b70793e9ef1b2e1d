"""Quadrature data on a mesh: element and face points, weights and Q1 bases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import (
    FACE_GAUSS_T,
    FACE_GAUSS_W,
    edge_to_reference,
    gauss_1d,
    gauss_square,
    map_points,
    physical_gradients,
    shape_values,
)


@dataclass(frozen=True)
class ElementQuadrature:
    points: np.ndarray  # [M, P, 2]
    weights: np.ndarray  # [M, P], includes |det J|
    values: np.ndarray  # [P, 4]
    grads: np.ndarray  # [M, P, 4, 2]


def element_quadrature(mesh: Mesh, n: int = 2) -> ElementQuadrature:
    """``n x n`` Gauss data on every element, memoised on the (immutable) mesh."""
    cache = mesh.__dict__.setdefault("_element_quadrature", {})
    if n not in cache:
        ref, w = gauss_square(n)
        grads, det = physical_gradients(mesh.element_coords, ref)
        quad = ElementQuadrature(map_points(mesh.element_coords, ref), det * w, shape_values(ref), grads)
        for arr in (quad.points, quad.weights, quad.values, quad.grads):
            arr.setflags(write=False)
        cache[n] = quad
    return cache[n]


@dataclass(frozen=True)
class FaceSide:
    """Traces of one side's Q1 basis at face quadrature points.

    ``elems`` is ``-1`` where the side does not exist (boundary neighbor).
    """

    elems: np.ndarray  # [K]
    values: np.ndarray  # [K, G, 4]
    grads: np.ndarray  # [K, G, 4, 2]


@dataclass(frozen=True)
class FaceQuadrature:
    t: np.ndarray  # [G] parameters along each face
    weights: np.ndarray  # [K, G], includes |F|
    points: np.ndarray  # [K, G, 2]
    owner: FaceSide
    neighbor: FaceSide


def _side(mesh: Mesh, side: str, t: np.ndarray) -> FaceSide:
    edge, tt = mesh.face_local(side)
    elems = mesh.face_owner if side == "owner" else mesh.face_neighbor
    safe = np.where(elems >= 0, elems, mesh.face_owner)
    edge = np.where(elems >= 0, edge, mesh.face_local("owner")[0])
    params = tt[:, :1] + (tt[:, 1:] - tt[:, :1]) * t[None, :]
    if side == "neighbor":
        own_t = mesh.face_local("owner")[1]
        own_params = own_t[:, :1] + (own_t[:, 1:] - own_t[:, :1]) * t[None, :]
        params = np.where((elems >= 0)[:, None], params, own_params)
    ref = edge_to_reference(edge[:, None], params)  # [K, G, 2]
    grads, _ = physical_gradients(mesh.element_coords[safe], ref)
    return FaceSide(elems, shape_values(ref), grads)


def face_quadrature(mesh: Mesh, n: int | None = None) -> FaceQuadrature:
    """Face Gauss rule; the default 2-point rule is the FaceField sampling rule."""
    if n is None:
        t, w = FACE_GAUSS_T, FACE_GAUSS_W
    else:
        t, w = gauss_1d(n)
    return FaceQuadrature(
        t,
        mesh.face_measures[:, None] * w[None, :],
        mesh.face_points(t),
        _side(mesh, "owner", t),
        _side(mesh, "neighbor", t),
    )


def scatter_matrix(mesh: Mesh, local: np.ndarray, elems=None, n=None) -> sp.csr_matrix:
    """Assemble per-element 4x4 blocks ``local[k]`` for elements ``elems``."""
    elems = np.arange(mesh.num_elements) if elems is None else np.asarray(elems)
    dofs = mesh.elements[elems]
    rows = np.repeat(dofs[:, :, None], 4, axis=2).ravel()
    cols = np.repeat(dofs[:, None, :], 4, axis=1).ravel()
    n = mesh.num_nodes if n is None else n
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def scatter_vector(mesh: Mesh, local: np.ndarray, elems=None) -> np.ndarray:
    elems = np.arange(mesh.num_elements) if elems is None else np.asarray(elems)
    out = np.zeros(mesh.num_nodes)
    np.add.at(out, mesh.elements[elems].ravel(), local.ravel())
    return out


def integrate_cells(mesh: Mesh, func, t=0.0, n: int = 2) -> np.ndarray:
    """Per-element integrals of ``func(x, y, t)``."""
    quad = element_quadrature(mesh, n)
    vals = np.broadcast_to(func(quad.points[..., 0], quad.points[..., 1], t), quad.weights.shape)
    return np.sum(vals * quad.weights, axis=1)


def nodal_values_at(mesh: Mesh, p: np.ndarray, quad: ElementQuadrature) -> np.ndarray:
    """Evaluate a nodal field at element quadrature points -> ``[M, P]``."""
    return np.einsum("pi,mi->mp", quad.values, p[mesh.elements])
