"""Background mesh of bilinear quadrilaterals.

Provides the immutable :class:`Mesh` container, bilinear shape-function
evaluation, tensor-product Gauss-Legendre quadrature rules, and point
location by Newton inversion of the bilinear map.  The mesh never changes
during a simulation; cracks live on top of it as independent geometry.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "Mesh",
    "QuadratureRule",
    "ShapeEval",
    "MeshFormatError",
    "load_mesh",
    "dump_mesh",
    "read_mesh",
    "write_mesh",
    "shape_eval",
    "gauss_rule",
    "locate_point",
    "locate_points",
    "reference_shape",
]

# Reference-square corner coordinates in CCW connectivity order.
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class MeshFormatError(ValueError):
    """Raised when a mesh document is malformed or describes a bad mesh."""


def reference_shape(xi, eta):
    """Bilinear shape values and reference-coordinate gradients.

    Parameters
    ----------
    xi, eta : array_like
        Reference coordinates; any broadcastable shape.

    Returns
    -------
    values : ndarray, shape (..., 4)
    grads : ndarray, shape (..., 4, 2)
        d(N_i)/d(xi, eta).
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    xi, eta = np.broadcast_arrays(xi, eta)
    sx = _CORNERS[:, 0]
    sy = _CORNERS[:, 1]
    values = 0.25 * (1.0 + xi[..., None] * sx) * (1.0 + eta[..., None] * sy)
    grads = np.empty(values.shape + (2,))
    grads[..., 0] = 0.25 * sx * (1.0 + eta[..., None] * sy)
    grads[..., 1] = 0.25 * sy * (1.0 + xi[..., None] * sx)
    return values, grads


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Legendre rule on the reference square [-1,1]^2."""

    points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)
        if abs(self.weights.sum() - 4.0) > 1e-12:
            raise ValueError("quadrature weights must sum to the reference area 4.0")
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@lru_cache(maxsize=None)
def _gauss_1d(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_rule(points_target: int) -> QuadratureRule:
    """Smallest tensor-product Gauss-Legendre rule with >= ``points_target`` points.

    A target of 35 yields the 36-point (6x6) rule; 40 yields 49 (7x7);
    4 yields the plain 2x2 rule.
    """
    if points_target < 1:
        raise ValueError("points_target must be >= 1")
    n = int(np.ceil(np.sqrt(points_target)))
    x, w = _gauss_1d(n)
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wi, wj = np.meshgrid(w, w, indexing="ij")
    points = np.column_stack([xi.ravel(), eta.ravel()])
    weights = (wi * wj).ravel()
    return QuadratureRule(points=points, weights=weights)


@dataclass(frozen=True)
class ShapeEval:
    """Shape-function data at one point of one element.

    Attributes
    ----------
    values : ndarray, shape (4,)
        Bilinear shape-function values; sum to 1.
    gradients : ndarray, shape (4, 2)
        Physical-coordinate gradients d(N_i)/d(x, y); rows sum to zero.
    jacobian_det : float
        Determinant of the reference-to-physical Jacobian; positive for
        valid elements.
    """

    values: np.ndarray
    gradients: np.ndarray
    jacobian_det: float


@dataclass
class Mesh:
    """Immutable background mesh of counter-clockwise bilinear quads.

    Attributes
    ----------
    nodes : ndarray, shape (n_nodes, 2)
        Node coordinates in meters.
    elements : ndarray, shape (n_elements, 4)
        Node indices per element, counter-clockwise.
    boundary_tags : dict[str, ndarray]
        Named groups of boundary node indices.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_tags: dict[str, np.ndarray] = field(default_factory=dict)
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshFormatError("nodes must be an (n, 2) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 4:
            raise MeshFormatError("elements must be an (m, 4) array")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshFormatError("node coordinates must be finite")
        bad = (self.elements < 0) | (self.elements >= self.n_nodes)
        if np.any(bad):
            eid = int(np.nonzero(bad.any(axis=1))[0][0])
            raise MeshFormatError(
                f"element {eid} references node index outside 0..{self.n_nodes - 1}"
            )
        tags = {}
        for name, ids in self.boundary_tags.items():
            ids = np.ascontiguousarray(ids, dtype=np.int64)
            if ids.size and (ids.min() < 0 or ids.max() >= self.n_nodes):
                raise MeshFormatError(f"boundary '{name}' references an invalid node index")
            ids.setflags(write=False)
            tags[name] = ids
        self.boundary_tags = tags
        # Positive corner Jacobians rule out inverted and degenerate quads.
        jdet = _corner_jacobians(self.nodes, self.elements)
        bad = jdet.min(axis=1) <= 0.0
        if np.any(bad):
            eid = int(np.nonzero(bad)[0][0])
            raise MeshFormatError(f"element {eid} is degenerate or inverted (non-positive Jacobian)")
        self.nodes.setflags(write=False)
        self.elements.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_coords(self, eids=None) -> np.ndarray:
        """Corner coordinates, shape (len(eids), 4, 2)."""
        if eids is None:
            return self.nodes[self.elements]
        return self.nodes[self.elements[np.asarray(eids, dtype=np.int64)]]

    def element_centroids(self) -> np.ndarray:
        return self.element_coords().mean(axis=1)

    def element_sizes(self) -> np.ndarray:
        """Per-element diameter (max of the two diagonals)."""
        xy = self.element_coords()
        d1 = np.linalg.norm(xy[:, 2] - xy[:, 0], axis=1)
        d2 = np.linalg.norm(xy[:, 3] - xy[:, 1], axis=1)
        return np.maximum(d1, d2)

    def bbox(self):
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    # -- adjacency (built lazily, cached; the mesh itself never changes) ---
    def node_to_elements(self) -> list[np.ndarray]:
        """Incident element ids per node (the node's support)."""
        cached = getattr(self, "_node_elems", None)
        if cached is not None:
            return cached
        lists: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for eid, quad in enumerate(self.elements):
            for n in quad:
                lists[n].append(eid)
        out = [np.array(v, dtype=np.int64) for v in lists]
        object.__setattr__(self, "_node_elems", out)
        return out

    def edge_to_elements(self) -> dict[tuple[int, int], list[int]]:
        """Map from sorted corner-node pair to the elements sharing that edge."""
        cached = getattr(self, "_edge_elems", None)
        if cached is not None:
            return cached
        edges: dict[tuple[int, int], list[int]] = {}
        for eid, quad in enumerate(self.elements):
            for k in range(4):
                a, b = int(quad[k]), int(quad[(k + 1) % 4])
                key = (a, b) if a < b else (b, a)
                edges.setdefault(key, []).append(eid)
        object.__setattr__(self, "_edge_elems", edges)
        return edges

    def boundary_edges(self) -> list[tuple[int, int]]:
        """Edges owned by exactly one element (outer and hole boundaries)."""
        return [pair for pair, owners in self.edge_to_elements().items() if len(owners) == 1]

    # -- spatial index -----------------------------------------------------
    def _ensure_index(self):
        if self._index is not None:
            return self._index
        xy = self.element_coords()
        lo = xy.min(axis=1)  # (m, 2)
        hi = xy.max(axis=1)
        gmin, gmax = self.bbox()
        span = np.maximum(gmax - gmin, 1e-300)
        # Aim for on the order of one element per grid cell.
        ncell = max(1, int(np.sqrt(self.n_elements)))
        nx = max(1, int(round(ncell * np.sqrt(span[0] / span[1]))))
        ny = max(1, int(round(ncell * np.sqrt(span[1] / span[0]))))
        cell = span / (nx, ny)
        ilo = np.clip(((lo - gmin) / cell).astype(int), 0, (nx - 1, ny - 1))
        ihi = np.clip(((hi - gmin) / cell).astype(int), 0, (nx - 1, ny - 1))
        cells: dict[tuple[int, int], list[int]] = {}
        for eid in range(self.n_elements):
            for ix in range(ilo[eid, 0], ihi[eid, 0] + 1):
                for iy in range(ilo[eid, 1], ihi[eid, 1] + 1):
                    cells.setdefault((ix, iy), []).append(eid)
        index = {
            "origin": gmin,
            "cell": cell,
            "shape": (nx, ny),
            "cells": {k: np.array(v, dtype=np.int64) for k, v in cells.items()},
        }
        object.__setattr__(self, "_index", index)
        return index

    def candidate_elements(self, x: np.ndarray) -> np.ndarray:
        """Element ids whose bounding box may contain physical point ``x``."""
        idx = self._ensure_index()
        rel = (np.asarray(x, dtype=float) - idx["origin"]) / idx["cell"]
        nx, ny = idx["shape"]
        ix = int(np.clip(np.floor(rel[0]), 0, nx - 1))
        iy = int(np.clip(np.floor(rel[1]), 0, ny - 1))
        return idx["cells"].get((ix, iy), np.empty(0, dtype=np.int64))


def _corner_jacobians(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Jacobian determinants at the four reference corners of every element."""
    _, dref = reference_shape(_CORNERS[:, 0], _CORNERS[:, 1])  # (4, 4, 2)
    xy = nodes[elements]  # (m, 4, 2)
    # J[m, corner, a, b] = sum_i xy[m, i, a] * dref[corner, i, b]
    J = np.einsum("mia,cib->mcab", xy, dref)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def shape_eval(mesh: Mesh, element_id: int, local) -> ShapeEval:
    """Evaluate shape functions of one element at reference point ``local``.

    Returns values, physical-coordinate gradients, and the Jacobian
    determinant of the bilinear map.
    """
    xi, eta = float(local[0]), float(local[1])
    values, dref = reference_shape(xi, eta)
    xy = mesh.nodes[mesh.elements[element_id]]  # (4, 2)
    J = xy.T @ dref  # (2, 2): J[a, b] = d x_a / d xi_b
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if det <= 0.0:
        raise MeshFormatError(
            f"element {element_id} has non-positive Jacobian {det:g} at ({xi:g}, {eta:g})"
        )
    Jinv = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
    gradients = dref @ Jinv  # dN_i/dx_a = dN_i/dxi_b * dxi_b/dx_a
    return ShapeEval(values=values, gradients=gradients, jacobian_det=float(det))


def map_to_physical(mesh: Mesh, element_id: int, local) -> np.ndarray:
    """Forward bilinear map from reference coordinates to physical ones."""
    values, _ = reference_shape(float(local[0]), float(local[1]))
    return values @ mesh.nodes[mesh.elements[element_id]]


def _newton_invert(xy: np.ndarray, targets: np.ndarray, max_iter: int = 30,
                   tol: float = 1e-12):
    """Invert the bilinear map for a batch of (element corners, target) pairs.

    Parameters
    ----------
    xy : ndarray, shape (p, 4, 2)
        Corner coordinates per pair.
    targets : ndarray, shape (p, 2)
        Physical points to invert.

    Returns
    -------
    local : ndarray, shape (p, 2)
    converged : ndarray of bool, shape (p,)
    """
    p = targets.shape[0]
    local = np.zeros((p, 2))
    converged = np.zeros(p, dtype=bool)
    for _ in range(max_iter):
        values, dref = reference_shape(local[:, 0], local[:, 1])
        pos = np.einsum("pi,pia->pa", values, xy)
        J = np.einsum("pia,pib->pab", xy, dref)
        res = pos - targets
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        step = np.empty_like(res)
        step[:, 0] = (J[:, 1, 1] * res[:, 0] - J[:, 0, 1] * res[:, 1]) / det
        step[:, 1] = (-J[:, 1, 0] * res[:, 0] + J[:, 0, 0] * res[:, 1]) / det
        local -= step
        converged = np.max(np.abs(step), axis=1) < tol
        if converged.all():
            break
    return local, converged


def locate_point(mesh: Mesh, x, tol: float = 1e-9):
    """Find the element containing physical point ``x``.

    Returns ``(element_id, (xi, eta))`` or ``None`` when the point lies in
    no element.  Points on shared edges resolve to the lowest element id.
    """
    x = np.asarray(x, dtype=float)
    cands = np.sort(mesh.candidate_elements(x))
    if cands.size == 0:
        return None
    xy = mesh.element_coords(cands)
    local, ok = _newton_invert(xy, np.broadcast_to(x, (cands.size, 2)).copy())
    inside = ok & (np.max(np.abs(local), axis=1) <= 1.0 + tol)
    hits = np.nonzero(inside)[0]
    if hits.size == 0:
        return None
    k = hits[0]  # candidates sorted, so the first hit has the lowest id
    return int(cands[k]), (float(local[k, 0]), float(local[k, 1]))


def containing_elements(mesh: Mesh, x, tol: float = 1e-9) -> np.ndarray:
    """All element ids whose closed hull contains ``x`` (sorted ascending)."""
    x = np.asarray(x, dtype=float)
    cands = np.sort(mesh.candidate_elements(x))
    if cands.size == 0:
        return cands
    xy = mesh.element_coords(cands)
    local, ok = _newton_invert(xy, np.broadcast_to(x, (cands.size, 2)).copy())
    inside = ok & (np.max(np.abs(local), axis=1) <= 1.0 + tol)
    return cands[inside]


def locate_points(mesh: Mesh, xs: np.ndarray, tol: float = 1e-9):
    """Batch :func:`locate_point`.

    Returns ``(eids, locals)``; ``eids[i] == -1`` marks not-found points.
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.shape[0]
    pair_pt: list[int] = []
    pair_eid: list[np.ndarray] = []
    for i in range(n):
        c = mesh.candidate_elements(xs[i])
        pair_pt.extend([i] * c.size)
        pair_eid.append(c)
    eids_out = np.full(n, -1, dtype=np.int64)
    locals_out = np.zeros((n, 2))
    if not pair_pt:
        return eids_out, locals_out
    pair_pt = np.array(pair_pt, dtype=np.int64)
    pair_eid = np.concatenate(pair_eid)
    xy = mesh.element_coords(pair_eid)
    local, ok = _newton_invert(xy, xs[pair_pt])
    inside = ok & (np.max(np.abs(local), axis=1) <= 1.0 + tol)
    # Among containing elements of each point, keep the lowest element id.
    order = np.lexsort((pair_eid, pair_pt))
    for k in order[inside[order]][::-1]:
        i = pair_pt[k]
        eids_out[i] = pair_eid[k]
        locals_out[i] = local[k]
    return eids_out, locals_out


# -- mesh document I/O -----------------------------------------------------

def load_mesh(source: str) -> Mesh:
    """Parse a mesh document.

    The document is UTF-8 text: a ``xfem-mesh 1`` magic line, a
    ``<node_count> <element_count>`` line, node coordinate lines, element
    connectivity lines (0-based, counter-clockwise), then optional
    ``boundary <name> <k>`` blocks each followed by ``k`` node indices.
    ``#`` starts a comment.
    """
    lines = []  # (lineno, tokens)
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text.split()))
    if not lines:
        raise MeshFormatError("empty mesh document")
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of mesh document")
        item = lines[pos]
        pos += 1
        return item

    lineno, tokens = take()
    if tokens != ["xfem-mesh", "1"]:
        raise MeshFormatError(f"line {lineno}: expected magic 'xfem-mesh 1'")
    lineno, tokens = take()
    try:
        n_nodes, n_elems = (int(t) for t in tokens)
    except ValueError:
        raise MeshFormatError(f"line {lineno}: expected '<node_count> <element_count>'") from None
    if n_nodes < 0 or n_elems < 0:
        raise MeshFormatError(f"line {lineno}: counts must be non-negative")

    nodes = np.empty((n_nodes, 2))
    for i in range(n_nodes):
        lineno, tokens = take()
        if len(tokens) != 2:
            raise MeshFormatError(f"line {lineno}: node {i} needs exactly two coordinates")
        try:
            nodes[i] = [float(tokens[0]), float(tokens[1])]
        except ValueError:
            raise MeshFormatError(f"line {lineno}: node {i} has a non-numeric coordinate") from None

    elements = np.empty((n_elems, 4), dtype=np.int64)
    for e in range(n_elems):
        lineno, tokens = take()
        if len(tokens) != 4:
            raise MeshFormatError(f"line {lineno}: element {e} needs exactly four node indices")
        try:
            elements[e] = [int(t) for t in tokens]
        except ValueError:
            raise MeshFormatError(f"line {lineno}: element {e} has a non-integer index") from None
        if np.any(elements[e] < 0) or np.any(elements[e] >= n_nodes):
            raise MeshFormatError(
                f"line {lineno}: element {e} references node index outside 0..{n_nodes - 1}"
            )

    boundary_tags: dict[str, np.ndarray] = {}
    while pos < len(lines):
        lineno, tokens = take()
        if tokens[0] != "boundary" or len(tokens) != 3:
            raise MeshFormatError(f"line {lineno}: expected 'boundary <name> <count>'")
        name = tokens[1]
        try:
            k = int(tokens[2])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: boundary '{name}' has a non-integer count") from None
        if name in boundary_tags:
            raise MeshFormatError(f"line {lineno}: duplicate boundary '{name}'")
        ids: list[int] = []
        while len(ids) < k:
            lineno, tokens = take()
            for t in tokens:
                try:
                    ids.append(int(t))
                except ValueError:
                    raise MeshFormatError(
                        f"line {lineno}: boundary '{name}' has a non-integer node index"
                    ) from None
        if len(ids) != k:
            raise MeshFormatError(f"line {lineno}: boundary '{name}' lists more than {k} indices")
        boundary_tags[name] = np.array(ids, dtype=np.int64)

    return Mesh(nodes=nodes, elements=elements, boundary_tags=boundary_tags)


def dump_mesh(mesh: Mesh) -> str:
    """Serialize a mesh to document text that :func:`load_mesh` round-trips."""
    out = ["xfem-mesh 1", f"{mesh.n_nodes} {mesh.n_elements}"]
    for x, y in mesh.nodes:
        out.append(f"{x:.17g} {y:.17g}")
    for quad in mesh.elements:
        out.append(" ".join(str(int(i)) for i in quad))
    for name, ids in mesh.boundary_tags.items():
        out.append(f"boundary {name} {ids.size}")
        for start in range(0, ids.size, 16):
            out.append(" ".join(str(int(i)) for i in ids[start:start + 16]))
    return "\n".join(out) + "\n"


def read_mesh(path) -> Mesh:
    """Load a mesh document from a file."""
    with open(os.fspath(path), "r", encoding="utf-8") as handle:
        return load_mesh(handle.read())


def write_mesh(mesh: Mesh, path) -> None:
    """Write a mesh document to a file."""
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as handle:
        handle.write(dump_mesh(mesh))
