"""Two-dimensional quadrilateral meshes with oriented faces.

A :class:`Mesh` stores nodes, counter-clockwise quadrilaterals, and an
explicit face list. Every face carries an owner (the lower element index)
and, for interior faces, a neighbor; its unit normal points out of the
owner. Local refinement produces 1-irregular meshes: a coarse edge next to
refined cells is represented only by its two half-length sub-faces, and the
midpoint node is recorded as a hanging-node constraint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .quadrature import REF_VERTICES, gauss_square, physical_gradients


class FaceMarker(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


SIDES = ("bottom", "right", "top", "left")


class MeshError(ValueError):
    """Invalid mesh construction request or inconsistent mesh data."""


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MeshValidationError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable quadrilateral mesh.

    Attributes
    ----------
    nodes : (N, 2) float array
    elements : (M, 4) int array, vertices counter-clockwise
    face_nodes : (K, 2) int array, ordered counter-clockwise w.r.t. the owner
    face_owner, face_neighbor : (K,) int arrays; neighbor is -1 on the boundary
    face_marker : (K,) int array of :class:`FaceMarker` values
    constraints : (C, 3) int array of ``(node, parent0, parent1)``
    """

    nodes: np.ndarray
    elements: np.ndarray
    face_nodes: np.ndarray
    face_owner: np.ndarray
    face_neighbor: np.ndarray
    face_marker: np.ndarray
    constraints: np.ndarray

    def __post_init__(self):
        for name, dtype in (
            ("nodes", float),
            ("elements", np.int64),
            ("face_nodes", np.int64),
            ("face_owner", np.int64),
            ("face_neighbor", np.int64),
            ("face_marker", np.int64),
            ("constraints", np.int64),
        ):
            arr = np.array(getattr(self, name), dtype=dtype)
            if name == "constraints":
                arr = arr.reshape(-1, 3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- sizes -----------------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def num_faces(self) -> int:
        return len(self.face_nodes)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.elements, other.elements)
            and np.array_equal(self.face_nodes, other.face_nodes)
            and np.array_equal(self.face_owner, other.face_owner)
            and np.array_equal(self.face_neighbor, other.face_neighbor)
            and np.array_equal(self.face_marker, other.face_marker)
            and np.array_equal(self.constraints, other.constraints)
        )

    __hash__ = object.__hash__

    # -- geometry --------------------------------------------------------
    @cached_property
    def element_coords(self) -> np.ndarray:
        return self.nodes[self.elements]

    @cached_property
    def element_areas(self) -> np.ndarray:
        # shoelace; exact for straight-sided quadrilaterals
        x = self.element_coords[..., 0]
        y = self.element_coords[..., 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    @cached_property
    def element_centroids(self) -> np.ndarray:
        return self.element_coords.mean(axis=1)

    @cached_property
    def element_diameters(self) -> np.ndarray:
        c = self.element_coords
        d = np.linalg.norm(c[:, :, None, :] - c[:, None, :, :], axis=-1)
        return d.max(axis=(1, 2))

    @cached_property
    def element_max_edges(self) -> np.ndarray:
        c = self.element_coords
        return np.linalg.norm(np.roll(c, -1, axis=1) - c, axis=-1).max(axis=1)

    @property
    def h(self) -> float:
        """Maximum element diameter."""
        return float(self.element_diameters.max())

    @cached_property
    def face_vectors(self) -> np.ndarray:
        return self.nodes[self.face_nodes[:, 1]] - self.nodes[self.face_nodes[:, 0]]

    @cached_property
    def face_measures(self) -> np.ndarray:
        return np.linalg.norm(self.face_vectors, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        v = self.face_vectors
        return np.column_stack([v[:, 1], -v[:, 0]]) / self.face_measures[:, None]

    @cached_property
    def face_midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[self.face_nodes[:, 0]] + self.nodes[self.face_nodes[:, 1]])

    def face_points(self, t: np.ndarray) -> np.ndarray:
        """Points at parameters ``t`` along every face -> ``[K, len(t), 2]``."""
        p0 = self.nodes[self.face_nodes[:, 0]]
        return p0[:, None, :] + self.face_vectors[:, None, :] * np.asarray(t)[None, :, None]

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor >= 0)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor < 0)

    def faces_with_marker(self, marker: FaceMarker) -> np.ndarray:
        return np.flatnonzero(self.face_marker == marker)

    @cached_property
    def element_faces(self) -> list[np.ndarray]:
        """Face indices of each element, ordered by local edge."""
        owner_edge, _, nb_edge, _ = self._face_local
        rows = []
        for side_elem, side_edge in (
            (self.face_owner, owner_edge),
            (self.face_neighbor, nb_edge),
        ):
            mask = side_elem >= 0
            rows.append(np.column_stack([side_elem[mask], side_edge[mask], np.flatnonzero(mask)]))
        table = np.vstack(rows)
        table = table[np.lexsort((table[:, 2], table[:, 1], table[:, 0]))]
        split = np.searchsorted(table[:, 0], np.arange(1, self.num_elements))
        return [chunk[:, 2] for chunk in np.split(table, split)]

    @cached_property
    def _face_local(self):
        """Local edge index and edge parameters of each face on both sides.

        Returns ``(owner_edge, owner_t, neighbor_edge, neighbor_t)`` where the
        ``*_t`` arrays are ``[K, 2]`` parameters of the face endpoints along
        the element's local edge (``t = 0`` at vertex ``k``).
        """
        owner_edge, owner_t = _locate_on_edges(self, self.face_owner)
        nb = np.where(self.face_neighbor >= 0, self.face_neighbor, self.face_owner)
        nb_edge, nb_t = _locate_on_edges(self, nb)
        nb_edge = np.where(self.face_neighbor >= 0, nb_edge, -1)
        return owner_edge, owner_t, nb_edge, nb_t

    def face_local(self, side: str):
        """``(edge, t)`` arrays locating each face on its owner or neighbor."""
        owner_edge, owner_t, nb_edge, nb_t = self._face_local
        if side == "owner":
            return owner_edge, owner_t
        if side == "neighbor":
            return nb_edge, nb_t
        raise ValueError(f"unknown side {side!r}")

    @cached_property
    def hanging_nodes(self) -> np.ndarray:
        return self.constraints[:, 0].copy()

    def boundary_marker_map(self) -> dict[tuple[int, int], int]:
        out = {}
        for f in self.boundary_faces:
            a, b = self.face_nodes[f]
            out[(min(a, b), max(a, b))] = int(self.face_marker[f])
        return out

    def jacobian_determinants(self, n: int = 2) -> np.ndarray:
        pts, _ = gauss_square(n)
        _, det = physical_gradients(self.element_coords, pts)
        return det

    def validate(self) -> None:
        """Check topological and geometric invariants; raise on violation."""
        _validate(self)


# ---------------------------------------------------------------------------
# face bookkeeping


def _locate_on_edges(mesh: Mesh, elems: np.ndarray):
    coords = mesh.nodes[mesh.elements[elems]]  # [K, 4, 2]
    a = coords
    b = np.roll(coords, -1, axis=1)
    ab = b - a  # [K, 4, 2]
    L2 = np.einsum("kjd,kjd->kj", ab, ab)
    p = mesh.nodes[mesh.face_nodes]  # [K, 2, 2]
    ap = p[:, None, :, :] - a[:, :, None, :]  # [K, 4, 2(endpoint), 2]
    t = np.einsum("kjed,kjd->kje", ap, ab) / L2[..., None]
    foot = a[:, :, None, :] + t[..., None] * ab[:, :, None, :]
    dist = np.linalg.norm(p[:, None, :, :] - foot, axis=-1).max(axis=-1)
    dist = dist / np.sqrt(L2)
    outside = np.maximum(-t, t - 1.0).max(axis=-1)
    score = dist + np.maximum(outside, 0.0)
    edge = np.argmin(score, axis=1)
    rows = np.arange(len(elems))
    return edge, t[rows, edge]


def _assemble_faces(nodes, elements, boundary_markers):
    """Derive the face list of a (possibly 1-irregular) quadrilateral mesh.

    ``boundary_markers`` maps sorted node pairs of boundary edges to their
    marker. Unmatched element edges that are not boundary edges must be
    resolvable as a coarse edge split in two by a midpoint node; anything
    else violates 1-irregularity.
    """
    nodes = np.asarray(nodes, dtype=float)
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for e, verts in enumerate(elements):
        for k in range(4):
            a, b = int(verts[k]), int(verts[(k + 1) % 4])
            edges.setdefault((min(a, b), max(a, b)), []).append((e, k))

    for key, users in edges.items():
        if len(users) > 2:
            raise MeshError(f"edge {key} shared by {len(users)} elements")

    unmatched = {key for key, users in edges.items() if len(users) == 1}
    candidates = [key for key in unmatched if key not in boundary_markers]
    incident: dict[int, list[tuple[int, int]]] = {}
    for key in candidates:
        for n in key:
            incident.setdefault(n, []).append(key)

    coarse_split: dict[tuple[int, int], int] = {}
    fine_parent: dict[tuple[int, int], tuple[int, int]] = {}
    for key in candidates:
        a, b = key
        mid = 0.5 * (nodes[a] + nodes[b])
        length = np.linalg.norm(nodes[b] - nodes[a])
        for other in incident.get(a, []):
            if other == key:
                continue
            m = other[0] if other[1] == a else other[1]
            second = (min(m, b), max(m, b))
            if second in unmatched and second not in boundary_markers and second != key:
                if np.linalg.norm(nodes[m] - mid) <= 1e-10 * length:
                    coarse_split[key] = m
                    fine_parent[other] = key
                    fine_parent[second] = key
                    break
    for key in candidates:
        if key not in coarse_split and key not in fine_parent:
            raise MeshError(
                f"edge {key} is neither matched, on the boundary, nor a 1-irregular "
                "hanging-node split"
            )
    for key in coarse_split:
        if key in fine_parent:
            raise MeshError(f"edge {key} would be more than 1-irregular")

    face_nodes, owners, neighbors, markers = [], [], [], []
    emitted: set[tuple[int, int]] = set()

    def emit(key, e_first, k_first, sub=None):
        # sub: (start, end) node pair along element e_first's ccw edge
        if key in emitted:
            return
        emitted.add(key)
        users = edges.get(key)
        if key in fine_parent:
            fine_e = users[0][0]
            coarse_e = edges[fine_parent[key]][0][0]
            side = sorted((fine_e, coarse_e))
            owner, neighbor = side
        elif users is not None and len(users) == 2:
            owner, neighbor = sorted(u[0] for u in users)
        else:
            owner, neighbor = users[0][0], -1
        # orient endpoints ccw with respect to the owner
        start, end = sub
        if owner != e_first:
            start, end = end, start
        face_nodes.append((start, end))
        owners.append(owner)
        neighbors.append(neighbor)
        markers.append(boundary_markers[key] if neighbor < 0 else FaceMarker.INTERIOR)

    for e, verts in enumerate(elements):
        for k in range(4):
            a, b = int(verts[k]), int(verts[(k + 1) % 4])
            key = (min(a, b), max(a, b))
            if key in coarse_split:
                m = coarse_split[key]
                emit((min(a, m), max(a, m)), e, k, (a, m))
                emit((min(m, b), max(m, b)), e, k, (m, b))
            else:
                emit(key, e, k, (a, b))

    constraints = [(m, a, b) for (a, b), m in sorted(coarse_split.items(), key=lambda kv: kv[1])]
    return (
        np.array(face_nodes, dtype=np.int64).reshape(-1, 2),
        np.array(owners, dtype=np.int64),
        np.array(neighbors, dtype=np.int64),
        np.array(markers, dtype=np.int64),
        np.array(constraints, dtype=np.int64).reshape(-1, 3),
    )


def _make_mesh(nodes, elements, boundary_markers) -> Mesh:
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, 4)
    fn, own, nb, mk, cons = _assemble_faces(nodes, elements, boundary_markers)
    mesh = Mesh(nodes, elements, fn, own, nb, mk, cons)
    _validate(mesh)
    return mesh


def _validate(mesh: Mesh) -> None:
    M = mesh.num_elements
    if M == 0:
        raise MeshValidationError("mesh has no elements")
    if mesh.elements.min() < 0 or mesh.elements.max() >= mesh.num_nodes:
        raise MeshValidationError("element references a missing node")
    if np.any((mesh.face_owner < 0) | (mesh.face_owner >= M)) or np.any(mesh.face_neighbor >= M):
        raise MeshValidationError("face references a missing element")
    interior = mesh.face_neighbor >= 0
    if np.any(mesh.face_owner[interior] >= mesh.face_neighbor[interior]):
        raise MeshValidationError("interior face owner must have the lower element index")
    if np.any((mesh.face_marker == FaceMarker.INTERIOR) != interior):
        raise MeshValidationError("interior marker must coincide with having a neighbor")
    if np.any(~np.isin(mesh.face_marker, [0, 1, 2])):
        raise MeshValidationError("unknown face marker")
    if np.any(mesh.face_measures <= 0):
        raise MeshValidationError("degenerate face")
    if np.any(mesh.element_areas <= 0):
        raise MeshValidationError("element with non-positive area (not counter-clockwise?)")
    det = mesh.jacobian_determinants(2)
    if np.any(det <= 0):
        raise MeshValidationError("element with non-positive Jacobian determinant")

    # faces must lie on the edges they claim and point out of the owner
    for side in ("owner", "neighbor"):
        elems = mesh.face_owner if side == "owner" else mesh.face_neighbor
        edge, t = mesh.face_local(side)
        mask = elems >= 0
        if not np.any(mask):
            continue
        coords = mesh.nodes[mesh.elements[elems[mask]]]
        a = coords[np.arange(mask.sum()), edge[mask]]
        b = coords[np.arange(mask.sum()), (edge[mask] + 1) % 4]
        pts = mesh.nodes[mesh.face_nodes[mask]]
        expect = a[:, None, :] + t[mask][..., None] * (b - a)[:, None, :]
        scale = np.linalg.norm(b - a, axis=1)
        if np.any(np.linalg.norm(pts - expect, axis=-1).max(axis=1) > 1e-9 * scale):
            raise MeshValidationError(f"face does not lie on an edge of its {side}")
        if np.any((t[mask] < -1e-9) | (t[mask] > 1 + 1e-9)):
            raise MeshValidationError(f"face extends beyond an edge of its {side}")
        if side == "owner" and np.any(t[mask, 1] <= t[mask, 0]):
            raise MeshValidationError("face endpoints must be counter-clockwise w.r.t. the owner")
        if side == "neighbor" and np.any(t[mask, 1] >= t[mask, 0]):
            raise MeshValidationError("face endpoints must be clockwise w.r.t. the neighbor")

    # each element edge tiled by one full face or two halves (1-irregular)
    owner_edge, owner_t, nb_edge, nb_t = mesh._face_local
    cover = np.zeros((M, 4))
    count = np.zeros((M, 4), dtype=int)
    np.add.at(cover, (mesh.face_owner, owner_edge), np.abs(owner_t[:, 1] - owner_t[:, 0]))
    np.add.at(count, (mesh.face_owner, owner_edge), 1)
    nbm = mesh.face_neighbor >= 0
    np.add.at(cover, (mesh.face_neighbor[nbm], nb_edge[nbm]), np.abs(nb_t[nbm, 1] - nb_t[nbm, 0]))
    np.add.at(count, (mesh.face_neighbor[nbm], nb_edge[nbm]), 1)
    if np.any(np.abs(cover - 1.0) > 1e-9):
        raise MeshValidationError("element edges are not tiled exactly by faces")
    if np.any(count > 2):
        raise MeshValidationError("mesh is not 1-irregular: an edge carries more than two faces")
    for side_t, side_e, elems in ((owner_t, owner_edge, mesh.face_owner),
                                  (nb_t[nbm], nb_edge[nbm], mesh.face_neighbor[nbm])):
        half = count[elems, side_e] == 2
        if np.any(np.abs(np.abs(side_t[half, 1] - side_t[half, 0]) - 0.5) > 1e-9):
            raise MeshValidationError("hanging-node sub-face is not half of its edge")

    for node, p0, p1 in mesh.constraints:
        mid = 0.5 * (mesh.nodes[p0] + mesh.nodes[p1])
        if np.linalg.norm(mesh.nodes[node] - mid) > 1e-9 * np.linalg.norm(mesh.nodes[p1] - mesh.nodes[p0]):
            raise MeshValidationError(f"hanging node {node} is not at its parent-edge midpoint")
    # one constraint per coarse edge carrying two sub-faces
    if len(mesh.constraints) != np.sum(count == 2):
        raise MeshValidationError("hanging-node constraints do not match split edges")


# ---------------------------------------------------------------------------
# builders


def build_tensor(xs, ys, bc_markers=None) -> Mesh:
    """Tensor-product mesh on the node lines ``xs`` x ``ys``.

    ``bc_markers`` maps side names (``bottom``, ``right``, ``top``,
    ``left``) to :class:`FaceMarker` values or the strings
    ``"dirichlet"``/``"neumann"``; unspecified sides are Dirichlet.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or len(ys) < 2:
        raise MeshError("need at least one cell in each direction")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise MeshError("node lines must be strictly increasing")
    markers = _side_markers(bc_markers)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    bmap = {}
    for i in range(nx):
        bmap[_key(i, i + 1)] = markers["bottom"]
        top = ny * (nx + 1)
        bmap[_key(top + i, top + i + 1)] = markers["top"]
    for j in range(ny):
        left = j * (nx + 1)
        bmap[_key(left, left + nx + 1)] = markers["left"]
        bmap[_key(left + nx, left + 2 * nx + 1)] = markers["right"]
    return _make_mesh(nodes, elements, bmap)


def build_cartesian(nx: int, ny: int, bounds=((0.0, 1.0), (0.0, 1.0)), bc_markers=None) -> Mesh:
    """Uniform ``nx`` x ``ny`` grid on ``bounds = ((x0, x1), (y0, y1))``.

    Elements are numbered row-major from the bottom-left corner.
    """
    if int(nx) < 1 or int(ny) < 1:
        raise MeshError("nx and ny must be positive")
    (x0, x1), (y0, y1) = bounds
    if not (x1 > x0 and y1 > y0):
        raise MeshError("bounds must be a non-degenerate rectangle")
    return build_tensor(np.linspace(x0, x1, int(nx) + 1), np.linspace(y0, y1, int(ny) + 1), bc_markers)


def _key(a, b):
    return (min(a, b), max(a, b))


def _side_markers(bc_markers):
    out = {side: FaceMarker.DIRICHLET for side in SIDES}
    for side, value in (bc_markers or {}).items():
        if side not in SIDES:
            raise MeshError(f"unknown side {side!r}")
        if isinstance(value, str):
            value = {"dirichlet": FaceMarker.DIRICHLET, "neumann": FaceMarker.NEUMANN}[value.lower()]
        value = FaceMarker(value)
        if value == FaceMarker.INTERIOR:
            raise MeshError("boundary sides must be Dirichlet or Neumann")
        out[side] = value
    return out


def refine_cells(mesh: Mesh, cells) -> Mesh:
    """Split the given cells into four children each.

    Children replace their parent in the element ordering. Existing
    hanging nodes on a refined cell's edges are reused. A request that
    would leave an edge with more than one level of difference raises
    :class:`MeshError`.
    """
    cells = sorted({int(c) for c in cells})
    if not cells:
        return mesh
    if cells[0] < 0 or cells[-1] >= mesh.num_elements:
        raise MeshError("cell index out of range")
    nodes = [tuple(p) for p in mesh.nodes]
    midpoint: dict[tuple[int, int], int] = {
        _key(int(p0), int(p1)): int(m) for m, p0, p1 in mesh.constraints
    }
    bmap = mesh.boundary_marker_map()

    def mid(a, b):
        key = _key(a, b)
        if key not in midpoint:
            nodes.append(tuple(0.5 * (mesh.nodes[a] + mesh.nodes[b])))
            midpoint[key] = len(nodes) - 1
            if key in bmap:
                marker = bmap.pop(key)
                bmap[_key(a, midpoint[key])] = marker
                bmap[_key(midpoint[key], b)] = marker
        return midpoint[key]

    selected = set(cells)
    new_elements = []
    for e, verts in enumerate(mesh.elements):
        if e not in selected:
            new_elements.append(tuple(int(v) for v in verts))
            continue
        v0, v1, v2, v3 = (int(v) for v in verts)
        m01, m12, m23, m30 = mid(v0, v1), mid(v1, v2), mid(v2, v3), mid(v3, v0)
        nodes.append(tuple(mesh.nodes[[v0, v1, v2, v3]].mean(axis=0)))
        c = len(nodes) - 1
        new_elements += [(v0, m01, c, m30), (m01, v1, m12, c), (c, m12, v2, m23), (m30, c, m23, v3)]
    try:
        return _make_mesh(np.array(nodes), new_elements, bmap)
    except MeshValidationError:
        raise
    except MeshError as exc:
        raise MeshError(f"refinement violates 1-irregularity: {exc}") from exc


def refine_global(mesh: Mesh) -> Mesh:
    """Split every cell into four by joining edge midpoints."""
    return refine_cells(mesh, range(mesh.num_elements))


def distort(mesh: Mesh, magnitude: float, seed: int = 0, max_halvings: int = 5) -> Mesh:
    """Randomly perturb node positions while keeping the domain fixed.

    Interior nodes move by at most ``magnitude`` times their shortest
    incident edge; boundary nodes slide along their boundary segment and
    corners stay fixed. Hanging nodes are re-centred on their parent edge.
    Non-convex results trigger retries with halved magnitude.
    """
    if not 0.0 <= magnitude < 0.5:
        raise MeshError("magnitude must lie in [0, 0.5)")
    if magnitude == 0.0:
        return mesh
    N = mesh.num_nodes
    a = mesh.elements
    edge_pairs = np.vstack([np.column_stack([a[:, k], a[:, (k + 1) % 4]]) for k in range(4)])
    edge_len = np.linalg.norm(mesh.nodes[edge_pairs[:, 0]] - mesh.nodes[edge_pairs[:, 1]], axis=1)
    hmin = np.full(N, np.inf)
    np.minimum.at(hmin, edge_pairs[:, 0], edge_len)
    np.minimum.at(hmin, edge_pairs[:, 1], edge_len)
    # hanging nodes are not element vertices of the coarse side; use face lengths too
    fl = mesh.face_measures
    np.minimum.at(hmin, mesh.face_nodes[:, 0], fl)
    np.minimum.at(hmin, mesh.face_nodes[:, 1], fl)

    tangent = np.zeros((N, 2))
    n_dirs = np.zeros(N, dtype=int)
    on_boundary = np.zeros(N, dtype=bool)
    for f in mesh.boundary_faces:
        d = mesh.face_vectors[f] / mesh.face_measures[f]
        for n in mesh.face_nodes[f]:
            on_boundary[n] = True
            if n_dirs[n] == 0:
                tangent[n] = d
                n_dirs[n] = 1
            elif abs(abs(np.dot(tangent[n], d)) - 1.0) > 1e-12:
                n_dirs[n] = 2
    hanging = np.zeros(N, dtype=bool)
    hanging[mesh.constraints[:, 0]] = True
    interior = ~on_boundary & ~hanging
    sliding = on_boundary & (n_dirs == 1) & ~hanging

    rng = np.random.default_rng(seed)
    radius = rng.uniform(0.0, 1.0, N)
    angle = rng.uniform(0.0, 2.0 * np.pi, N)
    slide = rng.uniform(-1.0, 1.0, N)

    scale = magnitude
    for _ in range(max_halvings + 1):
        nodes = mesh.nodes.copy()
        r = scale * hmin * radius
        nodes[interior] += (r[:, None] * np.column_stack([np.cos(angle), np.sin(angle)]))[interior]
        nodes[sliding] += (scale * hmin * slide)[sliding, None] * tangent[sliding]
        _recentre_hanging(nodes, mesh.constraints)
        candidate = Mesh(nodes, mesh.elements, mesh.face_nodes, mesh.face_owner,
                         mesh.face_neighbor, mesh.face_marker, mesh.constraints)
        if _is_convex(candidate):
            _validate(candidate)
            return candidate
        scale *= 0.5
    raise MeshError("could not produce a convex distortion; reduce magnitude")


def _recentre_hanging(nodes, constraints):
    # parents may themselves be hanging; iterate to a fixed point
    for _ in range(len(constraints) + 1):
        moved = False
        for m, p0, p1 in constraints:
            target = 0.5 * (nodes[p0] + nodes[p1])
            if not np.allclose(nodes[m], target, rtol=0, atol=0):
                nodes[m] = target
                moved = True
        if not moved:
            return


def _is_convex(mesh: Mesh) -> bool:
    c = mesh.element_coords
    e1 = np.roll(c, -1, axis=1) - c
    e0 = c - np.roll(c, 1, axis=1)
    cross = e0[..., 0] * e1[..., 1] - e0[..., 1] * e1[..., 0]
    return bool(np.all(cross > 0) and np.all(mesh.jacobian_determinants(2) > 0))


# ---------------------------------------------------------------------------
# text format


def save_mesh(mesh: Mesh, path) -> None:
    lines = ["MESH2D v1", f"NODES {mesh.num_nodes}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines.append(f"ELEMS {mesh.num_elements}")
    lines += [" ".join(str(int(v)) for v in verts) for verts in mesh.elements]
    lines.append(f"FACES {mesh.num_faces}")
    for f in range(mesh.num_faces):
        n0, n1 = mesh.face_nodes[f]
        lines.append(f"{n0} {n1} {mesh.face_owner[f]} {mesh.face_neighbor[f]} {mesh.face_marker[f]}")
    lines.append(f"CONSTRAINTS {len(mesh.constraints)}")
    lines += [f"{m} {p0} {p1}" for m, p0, p1 in mesh.constraints]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    raw = Path(path).read_text().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw) if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file", len(raw) + 1)
        item = lines[pos]
        pos += 1
        return item

    lineno, header = next_line()
    if header != "MESH2D v1":
        raise MeshParseError(f"expected header 'MESH2D v1', got {header!r}", lineno)

    def section(name, width, conv):
        lineno, text = next_line()
        parts = text.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshParseError(f"expected '{name} <count>'", lineno)
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshParseError(f"bad count {parts[1]!r}", lineno) from None
        if count < 0:
            raise MeshParseError("negative count", lineno)
        rows = []
        for _ in range(count):
            lineno, text = next_line()
            parts = text.split()
            if len(parts) != width:
                raise MeshParseError(f"expected {width} values, got {len(parts)}", lineno)
            try:
                rows.append([conv(p) for p in parts])
            except ValueError:
                raise MeshParseError(f"cannot parse {text!r}", lineno) from None
            yield lineno, rows[-1]

    nodes = [row for _, row in section("NODES", 2, float)]
    elems = [row for _, row in section("ELEMS", 4, int)]
    faces = []
    for lineno, row in section("FACES", 5, int):
        if row[4] not in (0, 1, 2):
            raise MeshParseError(f"face marker must be 0, 1 or 2, got {row[4]}", lineno)
        faces.append(row)
    cons = [row for _, row in section("CONSTRAINTS", 3, int)]
    if pos != len(lines):
        raise MeshParseError("trailing content", lines[pos][0])

    faces = np.array(faces, dtype=np.int64).reshape(-1, 5)
    nodes_arr = np.array(nodes, dtype=float).reshape(-1, 2)
    elems_arr = np.array(elems, dtype=np.int64).reshape(-1, 4)
    n_nodes = len(nodes_arr)
    for arr, what in ((elems_arr, "element"), (faces[:, :2], "face"),
                      (np.array(cons, dtype=np.int64).reshape(-1, 3), "constraint")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
            raise MeshValidationError(f"{what} references a missing node")
    mesh = Mesh(nodes_arr, elems_arr, faces[:, :2], faces[:, 2], faces[:, 3], faces[:, 4], cons)
    _validate(mesh)
    return mesh
