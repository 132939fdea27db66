"""Enrichment classification and enriched-field evaluation.

Takes the fixed background mesh plus the crack set and decides, node by
node, which extra discontinuous (Heaviside) and singular (branch) degrees
of freedom exist.  Also provides the enrichment functions themselves —
the shifted Heaviside factor M and the four crack-tip branch functions —
and the reconstruction of displacements/gradients from a solved triplet
of nodal fields.

Two enrichment modes are supported.  With tip enrichment, the element
containing each live tip carries branch functions.  Without it, each
crack is virtually extended along its tangent to the far edge of the
element containing the tip, so the modeled crack is fully fractured up to
element edges; the resulting effective half-length is reported so results
can be compared against the matching closed-form value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from xfem2d.cracks import (
    CrackGeometryError,
    CrackPath,
    TipFrame,
    extend_crack,
    heaviside,
    nearest_point,
    signed_distance_batch,
    tip_frame,
)
from xfem2d.mesh import (
    Mesh,
    QuadratureRule,
    containing_elements,
    gauss_rule,
    locate_point,
    locate_points,
    reference_shape,
)

__all__ = [
    "STANDARD",
    "HEAVISIDE",
    "TIP",
    "EnrichmentError",
    "CrackMeshDegeneracyError",
    "TipInfo",
    "FieldTriplet",
    "EnrichmentMap",
    "classify_enrichment",
    "classify_with_remedy",
    "shifted_heaviside",
    "branch_eval",
    "branch_theta",
    "branch_frame",
    "total_displacement",
    "crack_opening",
    "psi_at",
    "evaluate_fields",
]

STANDARD, HEAVISIDE, TIP = 0, 1, 2

_COINCIDENCE_TOL = 1e-12  # meters; crack feature on mesh feature
_PERTURB = 1e-9  # meters; remedy displacement


class EnrichmentError(ValueError):
    """Raised for unsupported crack/mesh configurations (junctions etc.)."""


class CrackMeshDegeneracyError(EnrichmentError):
    """A crack vertex/segment coincides with a mesh node or element edge."""

    def __init__(self, message: str, crack_ids: set[int]):
        super().__init__(message)
        self.crack_ids = crack_ids


@dataclass(frozen=True)
class TipInfo:
    """One live crack tip: owning crack, endpoint id, local frame, element.

    ``virtual_extension`` is the extra length added when running without
    tip enrichment (zero otherwise); the frame origin then sits at the
    virtually extended endpoint on the element edge.
    """

    crack_id: int
    tip_id: int
    frame: TipFrame
    element: int
    virtual_extension: float = 0.0


@dataclass
class FieldTriplet:
    """Nodal coefficients of the three displacement fields.

    Arrays are dense over all nodes; rows where the corresponding
    enrichment is absent are exactly zero.
    """

    u_cont: np.ndarray  # (n_nodes, 2)
    u_disc: np.ndarray  # (n_nodes, 2)
    u_tip: np.ndarray  # (n_nodes, 4, 2)

    @classmethod
    def zeros(cls, n_nodes: int) -> "FieldTriplet":
        return cls(
            u_cont=np.zeros((n_nodes, 2)),
            u_disc=np.zeros((n_nodes, 2)),
            u_tip=np.zeros((n_nodes, 4, 2)),
        )


@dataclass
class EnrichmentMap:
    """Result of enrichment classification over one mesh + crack set.

    Attributes
    ----------
    status : ndarray of int8
        Per-node enrichment kind: STANDARD, HEAVISIDE, or TIP.
    node_crack : ndarray of int
        Enriching crack id per node (-1 for standard nodes).
    node_tip : ndarray of int
        Index into ``tips`` for TIP nodes (-1 otherwise).
    node_sign : ndarray
        Heaviside of the signed distance at each enriched node.
    cut_elements : dict
        Element id -> crack id for fully bisected elements.
    tip_elements : dict
        Element id -> tuple of tip indices (an element may hold both tips
        of one short crack; empty without tip enrichment).
    tips : tuple of TipInfo
        All live tips (present in both enrichment modes).
    cracks : tuple of CrackPath
        Effective cracks used for field evaluation; these include the
        virtual tip extensions when tip enrichment is off.
    source_cracks : tuple of CrackPath
        The cracks as supplied (after any degeneracy perturbation).
    demotions : tuple
        (node, ratio, reason) records for the run log.
    """

    status: np.ndarray
    node_crack: np.ndarray
    node_tip: np.ndarray
    node_sign: np.ndarray
    cut_elements: dict[int, int]
    tip_elements: dict[int, tuple[int, ...]]
    tips: tuple[TipInfo, ...]
    cracks: tuple[CrackPath, ...]
    source_cracks: tuple[CrackPath, ...]
    tip_enrichment: bool
    delta: float
    demotions: tuple = ()
    _crack_index: dict[int, CrackPath] = field(default=None, repr=False)

    def __post_init__(self):
        self._crack_index = {c.id: c for c in self.cracks}

    @property
    def psi(self) -> np.ndarray:
        """0/1 indicator of enriched nodes."""
        return (self.status != STANDARD).astype(float)

    def crack_by_id(self, crack_id: int) -> CrackPath:
        return self._crack_index[crack_id]

    @property
    def n_heaviside(self) -> int:
        return int(np.count_nonzero(self.status == HEAVISIDE))

    @property
    def n_tip(self) -> int:
        return int(np.count_nonzero(self.status == TIP))

    def heaviside_nodes(self) -> np.ndarray:
        return np.nonzero(self.status == HEAVISIDE)[0]

    def tip_nodes(self) -> np.ndarray:
        return np.nonzero(self.status == TIP)[0]

    def effective_half_length(self, crack_id: int) -> float:
        """Half of the crack's total length including virtual extensions."""
        return self.crack_by_id(crack_id).length / 2.0

    def element_kinds(self, mesh: Mesh):
        """Per-element integration class.

        Returns an int array: 0 = plain 2x2, 1 = enriched at standard
        order (Heaviside blending: M is piecewise constant and vanishes on
        uncut elements, so no elevation is needed), 2 = cut (bisected),
        3 = singular (contains a tip or any branch-enriched node).
        """
        kinds = np.zeros(mesh.n_elements, dtype=np.int8)
        node_enr = self.status != STANDARD
        has_enr = node_enr[mesh.elements].any(axis=1)
        kinds[has_enr] = 1
        kinds[list(self.cut_elements)] = 2
        node_tip = self.status == TIP
        has_tip = node_tip[mesh.elements].any(axis=1)
        kinds[has_tip] = 3
        kinds[list(self.tip_elements)] = 3
        return kinds


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def _clip_segment_to_quad(quad: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Parameter interval of segment a->b inside a convex CCW quad, or None."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for k in range(4):
        v0 = quad[k]
        e = quad[(k + 1) % 4] - v0
        # inside condition: cross(e, x - v0) >= 0
        c = e[0] * (a[1] - v0[1]) - e[1] * (a[0] - v0[0])
        m = e[0] * d[1] - e[1] * d[0]
        if abs(m) < 1e-300:
            if c < 0.0:
                return None
            continue
        t = -c / m
        if m > 0.0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    return t0, t1


def _ray_exit_distance(quad: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> float:
    """Distance from origin (inside quad) to the quad boundary along direction."""
    diam = float(np.max(quad.max(axis=0) - quad.min(axis=0))) * 4.0
    clip = _clip_segment_to_quad(quad, origin, origin + diam * direction)
    if clip is None:
        return 0.0
    return clip[1] * diam


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    t = float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _point_on_quad_boundary(quad: np.ndarray, p: np.ndarray, tol: float) -> bool:
    for k in range(4):
        if _point_segment_distance(p, quad[k], quad[(k + 1) % 4]) <= tol:
            return True
    return False


def _edge_of_point(quad: np.ndarray, p: np.ndarray, tol: float):
    """Index of the quad edge the point sits on (within tol), else None."""
    best, best_d = None, tol
    for k in range(4):
        d = _point_segment_distance(p, quad[k], quad[(k + 1) % 4])
        if d <= best_d:
            best, best_d = k, d
    return best


def _element_bboxes(mesh: Mesh):
    cached = getattr(mesh, "_el_bboxes", None)
    if cached is None:
        xy = mesh.element_coords()
        cached = (xy.min(axis=1), xy.max(axis=1))
        object.__setattr__(mesh, "_el_bboxes", cached)
    return cached


def _near_elements(mesh: Mesh, crack: CrackPath, margin: float = 0.0) -> np.ndarray:
    """Elements whose bounding box meets the crack's inflated bounding box."""
    lo, hi = _element_bboxes(mesh)
    clo = crack.vertices.min(axis=0) - margin
    chi = crack.vertices.max(axis=0) + margin
    mask = np.all(lo <= chi, axis=1) & np.all(hi >= clo, axis=1)
    return np.nonzero(mask)[0]


def _crack_chunks(quad: np.ndarray, crack: CrackPath):
    """Maximal arc-length intervals of the crack polyline inside one quad.

    Returns a list of (s0, s1, p0, p1) with arc lengths measured from the
    crack start and p0/p1 the chunk end points.
    """
    v = crack.vertices
    seg = np.diff(v, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    raw = []
    for j in range(len(lens)):
        clip = _clip_segment_to_quad(quad, v[j], v[j + 1])
        if clip is None:
            continue
        t0, t1 = clip
        if t1 - t0 <= 0.0:
            continue
        raw.append((cum[j] + t0 * lens[j], cum[j] + t1 * lens[j],
                    v[j] + t0 * seg[j], v[j] + t1 * seg[j]))
    if not raw:
        return []
    # Merge chunks that continue through a polyline vertex inside the quad.
    merged = [list(raw[0])]
    join_tol = 1e-12 * max(1.0, float(cum[-1]))
    for s0, s1, p0, p1 in raw[1:]:
        if s0 - merged[-1][1] <= join_tol:
            merged[-1][1] = s1
            merged[-1][3] = p1
        else:
            merged.append([s0, s1, p0, p1])
    return [tuple(c) for c in merged]


def _on_domain_boundary(mesh: Mesh, p: np.ndarray, tol: float) -> bool:
    owners = containing_elements(mesh, p)
    if owners.size == 0:
        return True  # outside the mesh counts as "not interior"
    boundary = set(mesh.boundary_edges())
    for eid in owners:
        quad = mesh.elements[eid]
        for k in range(4):
            a, b = int(quad[k]), int(quad[(k + 1) % 4])
            key = (a, b) if a < b else (b, a)
            if key in boundary:
                if _point_segment_distance(p, mesh.nodes[a], mesh.nodes[b]) <= tol:
                    return True
    return False


def _detect_coincidences(mesh: Mesh, cracks) -> None:
    """Raise when crack features sit on mesh features within tolerance."""
    edge_owners = mesh.edge_to_elements()
    problems = []
    bad_cracks: set[int] = set()
    for crack in cracks:
        near = _near_elements(mesh, crack, margin=1e-9)
        if near.size == 0:
            continue
        near_nodes = np.unique(mesh.elements[near])
        v = crack.vertices
        # mesh node on a crack segment (level-set sign would be ambiguous)
        for j in range(crack.n_segments):
            a, b = v[j], v[j + 1]
            ab = b - a
            L2 = float(ab @ ab)
            rel = mesh.nodes[near_nodes] - a
            t = np.clip((rel @ ab) / L2, 0.0, 1.0)
            d = np.linalg.norm(rel - t[:, None] * ab, axis=1)
            hits = np.nonzero(d <= _COINCIDENCE_TOL)[0]
            for h in hits:
                problems.append(
                    f"crack {crack.id} segment {j} passes through mesh node {near_nodes[h]}"
                )
                bad_cracks.add(crack.id)
        # crack vertex on an element edge; endpoints that are not tips may
        # legitimately sit on the domain boundary (crack mouths)
        edges = set()
        for eid in near:
            quad = mesh.elements[eid]
            for k in range(4):
                a, b = int(quad[k]), int(quad[(k + 1) % 4])
                edges.add((a, b) if a < b else (b, a))
        for vi in range(v.shape[0]):
            is_mouth = (vi == 0 and not crack.tip_start) or (
                vi == v.shape[0] - 1 and not crack.tip_end
            )
            for a, b in edges:
                interior_edge = len(edge_owners[(a, b)]) == 2
                if is_mouth and not interior_edge:
                    continue
                if _point_segment_distance(v[vi], mesh.nodes[a], mesh.nodes[b]) <= _COINCIDENCE_TOL:
                    problems.append(
                        f"crack {crack.id} vertex {vi} lies on mesh edge ({a},{b})"
                    )
                    bad_cracks.add(crack.id)
                    break
        # segment collinear with an edge over a finite overlap
        for j in range(crack.n_segments):
            a, b = v[j], v[j + 1]
            ab = b - a
            Ls = float(np.linalg.norm(ab))
            for e0, e1 in edges:
                p0, p1 = mesh.nodes[e0], mesh.nodes[e1]
                ed = p1 - p0
                Le = float(np.linalg.norm(ed))
                if abs(ab[0] * ed[1] - ab[1] * ed[0]) > _COINCIDENCE_TOL * Ls * Le:
                    continue
                # parallel: perpendicular distance of the edge from the segment line
                off = p0 - a
                dist = abs(ab[0] * off[1] - ab[1] * off[0]) / Ls
                if dist > _COINCIDENCE_TOL:
                    continue
                t0 = float((p0 - a) @ ab) / (Ls * Ls)
                t1 = float((p1 - a) @ ab) / (Ls * Ls)
                lo, hi = min(t0, t1), max(t0, t1)
                if min(hi, 1.0) - max(lo, 0.0) > _COINCIDENCE_TOL / Ls:
                    problems.append(
                        f"crack {crack.id} segment {j} runs along mesh edge ({e0},{e1})"
                    )
                    bad_cracks.add(crack.id)
                    break
    if problems:
        raise CrackMeshDegeneracyError(
            "crack/mesh coincidence: " + "; ".join(problems[:5]),
            crack_ids=bad_cracks,
        )


def _perturbed(crack: CrackPath, attempt: int) -> CrackPath:
    """Remedy displacement of all vertices: off the coincident feature."""
    v = crack.vertices
    seg = np.diff(v, axis=0)
    unit = seg / np.linalg.norm(seg, axis=1, keepdims=True)
    normals = np.column_stack([-unit[:, 1], unit[:, 0]])
    vn = np.empty_like(v)
    vn[0] = normals[0]
    vn[-1] = normals[-1]
    for i in range(1, v.shape[0] - 1):
        m = normals[i - 1] + normals[i]
        vn[i] = m / np.linalg.norm(m)
    if attempt == 0:
        shift = _PERTURB * vn
    else:
        vt = np.empty_like(v)
        vt[0] = unit[0]
        vt[-1] = unit[-1]
        for i in range(1, v.shape[0] - 1):
            m = unit[i - 1] + unit[i]
            vt[i] = m / np.linalg.norm(m)
        shift = _PERTURB * (vn - vt) / np.sqrt(2.0)
    return CrackPath(
        vertices=v + shift,
        tip_start=crack.tip_start,
        tip_end=crack.tip_end,
        id=crack.id,
    )


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def classify_enrichment(
    mesh: Mesh,
    cracks,
    delta: float = 0.002,
    rule: QuadratureRule | None = None,
    tip_enrichment: bool = True,
) -> EnrichmentMap:
    """Classify nodes and elements for the given crack set.

    An element is *cut* when a crack polyline enters and leaves it through
    two distinct boundary points away from live tips; the element holding
    a live tip is a *tip element*.  Nodes of cut elements become Heaviside
    candidates; a candidate is dropped when a crack endpoint lies strictly
    inside its support (the jump must close there) or when the smaller of
    its two support areas, measured by Jacobian-weighted quadrature-point
    counting with ``rule``, falls below the fraction ``delta``.

    Raises :class:`CrackMeshDegeneracyError` for crack features coincident
    with mesh features (see :func:`classify_with_remedy`) and
    :class:`EnrichmentError` for unsupported topologies (two cracks
    claiming one node, multiple crossings of one element, ...).
    """
    if not 0.0 <= delta < 0.5:
        raise EnrichmentError(f"delta must be in [0, 0.5), got {delta}")
    rule = rule if rule is not None else gauss_rule(35)
    cracks = list(cracks)
    ids = [c.id for c in cracks]
    if len(set(ids)) != len(ids):
        raise EnrichmentError("crack ids must be unique")
    _detect_coincidences(mesh, cracks)

    size_tol = 1e-9 * float(np.max(mesh.element_sizes(), initial=1.0))

    # Live tips; without tip enrichment each crack grows virtually to the
    # far edge of its tip's element.
    eff_cracks: list[CrackPath] = []
    tips: list[TipInfo] = []
    for crack in cracks:
        effective = crack
        homes = {}
        extensions = {}
        for tid in crack.active_tips():
            origin = crack.tip_coord(tid)
            owners = containing_elements(mesh, origin)
            if owners.size == 0:
                raise EnrichmentError(
                    f"crack {crack.id} tip {tid} at ({origin[0]:g}, {origin[1]:g}) "
                    "lies outside the mesh"
                )
            homes[tid] = int(owners[0])
            if not tip_enrichment:
                frame = tip_frame(crack, tid)
                quad = mesh.element_coords([homes[tid]])[0]
                t_exit = _ray_exit_distance(quad, origin, frame.tangent)
                extensions[tid] = t_exit
                if t_exit > _COINCIDENCE_TOL:
                    effective = extend_crack(effective, tid, 0.0, t_exit)
        eff_cracks.append(effective)
        for tid in crack.active_tips():
            tips.append(
                TipInfo(
                    crack_id=crack.id,
                    tip_id=tid,
                    frame=tip_frame(effective, tid),
                    element=homes[tid],
                    virtual_extension=extensions.get(tid, 0.0),
                )
            )

    # Tip elements (only with tip enrichment) and cut elements.  An
    # element may host both tips of one short crack; tips of different
    # cracks in one element are a junction-scale configuration we reject.
    tip_elements: dict[int, tuple[int, ...]] = {}
    if tip_enrichment:
        for gti, tinfo in enumerate(tips):
            existing = tip_elements.get(tinfo.element)
            if existing is not None:
                other = tips[existing[0]]
                if other.crack_id != tinfo.crack_id:
                    raise EnrichmentError(
                        f"element {tinfo.element} contains tips of cracks "
                        f"{other.crack_id} and {tinfo.crack_id}; refine the mesh"
                    )
                tip_elements[tinfo.element] = existing + (gti,)
            else:
                tip_elements[tinfo.element] = (gti,)

    cut_elements: dict[int, int] = {}
    for crack in eff_cracks:
        for eid in _near_elements(mesh, crack, margin=size_tol):
            quad = mesh.element_coords([eid])[0]
            chunks = _crack_chunks(quad, crack)
            chunks = [c for c in chunks if c[1] - c[0] > _COINCIDENCE_TOL]
            if not chunks:
                continue
            if int(eid) in tip_elements:
                owner = tips[tip_elements[int(eid)][0]]
                if owner.crack_id != crack.id:
                    raise EnrichmentError(
                        f"element {eid} is the tip element of crack {owner.crack_id} "
                        f"but is also crossed by crack {crack.id} (junctions unsupported)"
                    )
                continue
            if len(chunks) > 1:
                raise EnrichmentError(
                    f"crack {crack.id} crosses element {eid} more than once; "
                    "refine the mesh or coarsen the crack"
                )
            s0, s1, p0, p1 = chunks[0]
            edge0 = _edge_of_point(quad, p0, size_tol)
            edge1 = _edge_of_point(quad, p1, size_tol)
            if (edge0 is None or edge1 is None or edge0 == edge1
                    or np.linalg.norm(p1 - p0) <= size_tol):
                # Full crossings enter and leave through distinct edges; a
                # chunk ending inside (crack terminates without being a
                # live tip here) or returning through its entry edge does
                # not bisect the element.
                continue
            if int(eid) in cut_elements and cut_elements[int(eid)] != crack.id:
                raise EnrichmentError(
                    f"element {eid} is cut by cracks {cut_elements[int(eid)]} "
                    f"and {crack.id} (junctions unsupported)"
                )
            cut_elements[int(eid)] = crack.id

    # Heaviside candidates: nodes of cut elements.
    candidates: dict[int, int] = {}
    for eid in sorted(cut_elements):
        cid = cut_elements[eid]
        for n in mesh.elements[eid]:
            n = int(n)
            if n in candidates and candidates[n] != cid:
                raise EnrichmentError(
                    f"node {n} has its support cut by cracks {candidates[n]} and {cid} "
                    "(junction enrichment unsupported)"
                )
            candidates[n] = cid

    # Tip statuses win over Heaviside candidacy for the same crack.  When
    # two tips of one crack reach the same node, the lower tip index keeps
    # it; tips of different cracks meeting at a node are rejected.
    tip_claim: dict[int, int] = {}
    for eid in sorted(tip_elements):
        for gti in tip_elements[eid]:
            tinfo = tips[gti]
            for n in mesh.elements[eid]:
                n = int(n)
                prev = tip_claim.get(n)
                if prev is not None:
                    other = tips[prev]
                    if other.crack_id != tinfo.crack_id:
                        raise EnrichmentError(
                            f"node {n} belongs to tip elements of cracks "
                            f"{other.crack_id} and {tinfo.crack_id}; refine the mesh"
                        )
                    continue
                if n in candidates and candidates[n] != tinfo.crack_id:
                    raise EnrichmentError(
                        f"node {n} is claimed by crack {candidates[n]} (Heaviside) and "
                        f"crack {tinfo.crack_id} (tip); junctions unsupported"
                    )
                tip_claim[n] = gti
                candidates.pop(n, None)

    demotions: list[tuple[int, float, str]] = []

    # A candidate whose support strictly contains a crack endpoint cannot
    # carry a full jump; the opening must close at that endpoint.
    interior_endpoints: list[np.ndarray] = []
    for crack in eff_cracks:
        for p in (crack.vertices[0], crack.vertices[-1]):
            if not _on_domain_boundary(mesh, p, size_tol):
                interior_endpoints.append(p)
    endpoint_owners = [set(int(e) for e in containing_elements(mesh, p))
                       for p in interior_endpoints]
    node_elems = mesh.node_to_elements()
    for n in sorted(candidates):
        support = set(int(e) for e in node_elems[n])
        for owners in endpoint_owners:
            if owners and owners <= support:
                demotions.append((n, 0.0, "crack endpoint inside support"))
                del candidates[n]
                break

    # Remark-style support-area demotion.
    crack_lookup = {c.id: c for c in eff_cracks}
    qpts, qd = reference_shape(rule.points[:, 0], rule.points[:, 1])
    for n in sorted(candidates):
        crack = crack_lookup[candidates[n]]
        a_pos = a_neg = 0.0
        for eid in node_elems[n]:
            xy = mesh.element_coords([eid])[0]
            phys = qpts @ xy  # (nq, 2)
            J = np.einsum("ia,qib->qab", xy, qd)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            w = rule.weights * det
            phi = signed_distance_batch(crack, phys)
            a_pos += float(w[phi >= 0.0].sum())
            a_neg += float(w[phi < 0.0].sum())
        ratio = min(a_pos, a_neg) / (a_pos + a_neg)
        if ratio < delta:
            demotions.append((n, ratio, "support area ratio below delta"))
            del candidates[n]

    # Build the per-node arrays.
    status = np.zeros(mesh.n_nodes, dtype=np.int8)
    node_crack = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_tip = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_sign = np.zeros(mesh.n_nodes)
    for n, cid in candidates.items():
        status[n] = HEAVISIDE
        node_crack[n] = cid
    for n, gti in tip_claim.items():
        status[n] = TIP
        node_crack[n] = tips[gti].crack_id
        node_tip[n] = gti
    enriched = np.nonzero(status != STANDARD)[0]
    for n in enriched:
        crack = crack_lookup[int(node_crack[n])]
        node_sign[n] = heaviside(signed_distance_batch(crack, mesh.nodes[n][None])[0])

    return EnrichmentMap(
        status=status,
        node_crack=node_crack,
        node_tip=node_tip,
        node_sign=node_sign,
        cut_elements=cut_elements,
        tip_elements=tip_elements,
        tips=tuple(tips),
        cracks=tuple(eff_cracks),
        source_cracks=tuple(cracks),
        tip_enrichment=tip_enrichment,
        delta=delta,
        demotions=tuple(demotions),
    )


def classify_with_remedy(
    mesh: Mesh,
    cracks,
    delta: float = 0.002,
    rule: QuadratureRule | None = None,
    tip_enrichment: bool = True,
):
    """Classification with the standard coincidence remedy.

    When a crack feature coincides with a mesh feature, the offending
    cracks are nudged off it (first along the local normal, then along
    normal-minus-tangent) and classification is retried.  Returns
    ``(map, cracks)`` where ``cracks`` are the possibly perturbed inputs.
    """
    original = {c.id: c for c in cracks}
    current = list(cracks)
    for attempt in range(2):
        try:
            return classify_enrichment(mesh, current, delta, rule, tip_enrichment), current
        except CrackMeshDegeneracyError as exc:
            current = [
                _perturbed(original[c.id], attempt) if c.id in exc.crack_ids else c
                for c in current
            ]
    return classify_enrichment(mesh, current, delta, rule, tip_enrichment), current


# ---------------------------------------------------------------------------
# enrichment functions
# ---------------------------------------------------------------------------

def shifted_heaviside(node_sign, phi_at_x):
    """Shifted Heaviside factor M = H(phi(x)) - H(phi(node)), in {-2, 0, +2}."""
    return heaviside(phi_at_x) - np.asarray(node_sign)


def branch_eval(r, theta):
    """Four crack-tip branch functions and their tip-local gradients.

    Parameters
    ----------
    r, theta : array_like
        Polar coordinates in the tip frame, r > 0, theta in (-pi, pi]
        with +/-pi on the crack faces.

    Returns
    -------
    values : ndarray (..., 4)
        sqrt(r) * {sin(t/2), cos(t/2), sin(t/2) sin t, cos(t/2) sin t}.
    gradients : ndarray (..., 4, 2)
        d F / d(x', y') in tip-local Cartesian coordinates.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("branch functions are singular at r = 0")
    r, theta = np.broadcast_arrays(r, theta)
    sr = np.sqrt(r)
    s2, c2 = np.sin(theta / 2.0), np.cos(theta / 2.0)
    st, ct = np.sin(theta), np.cos(theta)

    values = np.stack([sr * s2, sr * c2, sr * s2 * st, sr * c2 * st], axis=-1)

    f_r = np.stack([s2, c2, s2 * st, c2 * st], axis=-1) / (2.0 * sr[..., None])
    f_t = np.stack(
        [
            sr * c2 / 2.0,
            -sr * s2 / 2.0,
            sr * (c2 * st / 2.0 + s2 * ct),
            sr * (-s2 * st / 2.0 + c2 * ct),
        ],
        axis=-1,
    )
    dx = f_r * ct[..., None] - f_t * (st / r)[..., None]
    dy = f_r * st[..., None] + f_t * (ct / r)[..., None]
    return values, np.stack([dx, dy], axis=-1)


def branch_theta(tinfo: TipInfo, crack: CrackPath, xs: np.ndarray):
    """Tip-polar coordinates with theta's sign taken from the crack side.

    The branch discontinuity must fall exactly on the crack face, so the
    angle magnitude comes from the tip frame while its sign comes from the
    signed distance to the (possibly kinked) crack polyline.
    """
    xs = np.atleast_2d(xs)
    rel = xs - tinfo.frame.origin
    xp = rel @ tinfo.frame.tangent
    yp = rel @ tinfo.frame.normal
    r = np.hypot(xp, yp)
    theta = np.abs(np.arctan2(yp, xp))
    side = heaviside(signed_distance_batch(crack, xs))
    return r, side * theta


def branch_frame(tinfo: TipInfo) -> np.ndarray:
    """Local-to-global rotation of the axes the branch angle is measured in.

    The signed angle of :func:`branch_theta` is positive on the crack's
    positive-distance side.  At the end tip that side coincides with the
    frame normal; at the start tip (whose tangent reverses the first
    segment) it is the opposite of the frame normal, so the local y axis
    used for gradients must be mirrored there.
    """
    flip = 1.0 if tinfo.tip_id == 1 else -1.0
    return np.column_stack([tinfo.frame.tangent, flip * tinfo.frame.normal])


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------

def _element_field_eval(mesh, emap, fields, eid, locs, xs, want_grad=True):
    """Displacement (and gradient) of the total field inside one element."""
    conn = mesh.elements[eid]
    xy = mesh.nodes[conn]
    values, dref = reference_shape(locs[:, 0], locs[:, 1])  # (k,4), (k,4,2)
    J = np.einsum("ia,kib->kab", xy, dref)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / det
    Jinv[:, 0, 1] = -J[:, 0, 1] / det
    Jinv[:, 1, 0] = -J[:, 1, 0] / det
    Jinv[:, 1, 1] = J[:, 0, 0] / det
    dN = np.einsum("kib,kba->kia", dref, Jinv)  # physical gradients

    u = np.einsum("ki,ia->ka", values, fields.u_cont[conn])
    grad = np.einsum("kib,ia->kab", dN, fields.u_cont[conn]) if want_grad else None

    for li in range(4):
        n = int(conn[li])
        st = emap.status[n]
        if st == STANDARD:
            continue
        crack = emap.crack_by_id(int(emap.node_crack[n]))
        if st == HEAVISIDE:
            phi = signed_distance_batch(crack, xs)
            M = shifted_heaviside(emap.node_sign[n], phi)  # (k,)
            u += (values[:, li] * M)[:, None] * fields.u_disc[n]
            if want_grad:
                grad += np.einsum("k,kb,a->kab", M, dN[:, li], fields.u_disc[n])
        else:  # TIP
            tinfo = emap.tips[int(emap.node_tip[n])]
            r, theta = branch_theta(tinfo, crack, xs)
            F, dF_local = branch_eval(np.maximum(r, 1e-30), theta)
            u += np.einsum("k,kj,ja->ka", values[:, li], F, fields.u_tip[n])
            if want_grad:
                Q = branch_frame(tinfo)
                dF = np.einsum("kjb,ab->kja", dF_local, Q)
                G = F[..., None] * dN[:, li, None, :] + values[:, li, None, None] * dF
                grad += np.einsum("kjb,ja->kab", G, fields.u_tip[n])
    return u, grad


def evaluate_fields(xs, mesh: Mesh, emap: EnrichmentMap, fields: FieldTriplet,
                    want_grad: bool = True):
    """Total displacement and displacement gradient at arbitrary points.

    Returns ``(u, grad)`` with shapes (n, 2) and (n, 2, 2); ``grad`` is
    ``None`` when not requested.  Points must lie inside the mesh.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    eids, locs = locate_points(mesh, xs)
    if np.any(eids < 0):
        bad = xs[eids < 0][0]
        raise ValueError(f"point ({bad[0]:g}, {bad[1]:g}) is outside the mesh")
    u = np.empty_like(xs)
    grad = np.empty((xs.shape[0], 2, 2)) if want_grad else None
    for eid in np.unique(eids):
        sel = np.nonzero(eids == eid)[0]
        ue, ge = _element_field_eval(mesh, emap, fields, int(eid), locs[sel], xs[sel],
                                     want_grad)
        u[sel] = ue
        if want_grad:
            grad[sel] = ge
    return u, grad


def total_displacement(x, fields: FieldTriplet, mesh: Mesh, emap: EnrichmentMap):
    """Total displacement vector at one point."""
    u, _ = evaluate_fields(np.asarray(x, dtype=float)[None, :], mesh, emap, fields,
                           want_grad=False)
    return u[0]


def crack_opening(x_on_crack, fields: FieldTriplet, mesh: Mesh, emap: EnrichmentMap,
                  crack_id: int) -> float:
    """Opening displacement (normal jump) at a point of the crack polyline.

    The jump is carried entirely by the discontinuous field: every shifted
    Heaviside factor changes by exactly 2 across the face, so the jump is
    2 * sum(N_i * u_disc_i) projected on the face normal.
    """
    x = np.asarray(x_on_crack, dtype=float)
    crack = emap.crack_by_id(crack_id)
    if abs(signed_distance_batch(crack, x[None])[0]) > 1e-6 * max(1.0, crack.length):
        raise ValueError("point does not lie on the crack polyline")
    hit = locate_point(mesh, x)
    if hit is None:
        raise ValueError("point is outside the mesh")
    eid, loc = hit
    conn = mesh.elements[eid]
    values, _ = reference_shape(loc[0], loc[1])
    jump = np.zeros(2)
    for li in range(4):
        n = int(conn[li])
        if emap.status[n] == HEAVISIDE and emap.node_crack[n] == crack_id:
            jump += 2.0 * values[li] * fields.u_disc[n]
    _, normal, _ = nearest_point(crack, x)
    return float(jump @ normal)


def psi_at(emap: EnrichmentMap, mesh: Mesh, x) -> float:
    """Bilinear interpolation of the 0/1 enriched-node indicator."""
    hit = locate_point(mesh, np.asarray(x, dtype=float))
    if hit is None:
        raise ValueError("point is outside the mesh")
    eid, loc = hit
    values, _ = reference_shape(loc[0], loc[1])
    return float(values @ emap.psi[mesh.elements[eid]])
