"""Gauss rules and bilinear (Q1) shape functions on the reference square.

The reference element is [-1, 1]^2 with vertices numbered counter-clockwise
starting at (-1, -1). Local edge ``k`` runs from vertex ``k`` to vertex
``k + 1`` and is parametrised by ``t`` in [0, 1].
"""

from functools import lru_cache

import numpy as np

REF_VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@lru_cache(maxsize=None)
def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1] (weights sum to 1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_square(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on [-1, 1]^2; weights sum to 4."""
    x, w = np.polynomial.legendre.leggauss(n)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    wts = np.outer(w, w).ravel()
    return pts, wts


# Two-point rule on a face, shared by every FaceField.
FACE_GAUSS_T, FACE_GAUSS_W = gauss_1d(2)


def shape_values(ref: np.ndarray) -> np.ndarray:
    """Q1 basis values at reference points ``ref[..., 2]`` -> ``[..., 4]``."""
    xi = ref[..., 0, None]
    eta = ref[..., 1, None]
    return 0.25 * (1.0 + xi * REF_VERTICES[:, 0]) * (1.0 + eta * REF_VERTICES[:, 1])


def shape_derivatives(ref: np.ndarray) -> np.ndarray:
    """Reference gradients of the Q1 basis -> ``[..., 4, 2]``."""
    xi = ref[..., 0, None]
    eta = ref[..., 1, None]
    sx = REF_VERTICES[:, 0]
    sy = REF_VERTICES[:, 1]
    d_xi = 0.25 * sx * (1.0 + eta * sy)
    d_eta = 0.25 * sy * (1.0 + xi * sx)
    return np.stack([d_xi, d_eta], axis=-1)


def edge_to_reference(edge: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Map edge parameters to reference coordinates.

    ``edge`` and ``t`` broadcast against each other; the result has a
    trailing axis of length 2.
    """
    edge = np.asarray(edge)
    t = np.asarray(t, dtype=float)
    edge, t = np.broadcast_arrays(edge, t)
    start = REF_VERTICES[edge]
    stop = REF_VERTICES[(edge + 1) % 4]
    return start + (stop - start) * t[..., None]


def map_points(coords: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Physical coordinates of reference points.

    ``coords`` is ``[M, 4, 2]`` and ``ref`` is ``[M, P, 2]`` or ``[P, 2]``.
    """
    N = shape_values(ref)
    if N.ndim == 2:
        return np.einsum("pi,mid->mpd", N, coords)
    return np.einsum("mpi,mid->mpd", N, coords)


def physical_gradients(coords: np.ndarray, ref: np.ndarray):
    """Basis gradients and Jacobian determinants at reference points.

    Returns ``(grads [M, P, 4, 2], detJ [M, P])``.
    """
    dN = shape_derivatives(ref)
    if dN.ndim == 3:
        J = np.einsum("mid,pie->mpde", coords, dN)
        dN = np.broadcast_to(dN, (coords.shape[0],) + dN.shape)
    else:
        J = np.einsum("mid,mpie->mpde", coords, dN)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    # grad N_i = J^{-T} dN_i/dref
    grads = np.einsum("mpie,mpef->mpif", dN, inv)
    return grads, det
