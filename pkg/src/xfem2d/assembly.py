"""Stiffness assembly, boundary conditions, and the sparse solve.

The global system couples three nodal fields: the standard bilinear
displacement, the shifted-Heaviside jump field, and the four-fold branch
field at crack tips.  Degrees of freedom exist only where the enrichment
map grants them, so the jump/branch constraint is structural rather than
penalized.

Integration strategy: every element is first integrated with the plain
2x2 rule in one vectorized pass; elements that carry a jump or branch
contribution are then corrected in place so that their full block (all
field couplings including the standard one) is integrated with a single
elevated rule — one rule per element class.  Uncut elements holding a
Heaviside node need no correction at all: the shifted factor
M = H(phi(x)) - H(phi(node)) is identically zero on them, since the node
and the whole element sit on the same side of the crack.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from xfem2d.cracks import signed_distance_batch
from xfem2d.enrichment import (
    HEAVISIDE,
    STANDARD,
    TIP,
    EnrichmentMap,
    FieldTriplet,
    branch_eval,
    branch_frame,
    branch_theta,
    evaluate_fields,
    shifted_heaviside,
)
from xfem2d.mesh import Mesh, QuadratureRule, gauss_rule, reference_shape

__all__ = [
    "AssemblyError",
    "SolverError",
    "MaterialModel",
    "BoundaryCondition",
    "QuadratureSet",
    "DofLayout",
    "LinearSystem",
    "SolutionState",
    "elasticity_matrix",
    "assemble",
    "apply_constraints",
    "solve",
    "stress_strain_at",
    "stress_strain_batch",
]


class AssemblyError(ValueError):
    """Inconsistent discretization detected during assembly."""


class SolverError(RuntimeError):
    """Linear solve failed or did not meet the residual contract."""


@dataclass(frozen=True)
class MaterialModel:
    """Isotropic linear elastic material under plane strain or stress."""

    E: float
    nu: float
    plane_strain: bool = True
    body_force: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.E > 0.0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must be in (-1, 0.5), got {self.nu}")

    @property
    def E_effective(self) -> float:
        """Modulus relating energy release rate and SIFs: E/(1-nu^2) or E."""
        return self.E / (1.0 - self.nu**2) if self.plane_strain else self.E

    @property
    def kolosov(self) -> float:
        return 3.0 - 4.0 * self.nu if self.plane_strain else (3.0 - self.nu) / (1.0 + self.nu)

    @property
    def shear_modulus(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))


@dataclass(frozen=True)
class BoundaryCondition:
    """One condition on a tagged boundary node set.

    ``kind`` is 'traction' (value = force per unit length vector) or
    'displacement' (value components may be None for unconstrained /
    roller directions).  ``scaled`` marks values that the load schedule
    multiplies by the current load factor before assembly.
    """

    boundary: str
    kind: str
    value: tuple
    scaled: bool = False

    def __post_init__(self):
        if self.kind not in ("traction", "displacement"):
            raise ValueError(f"unknown boundary condition kind '{self.kind}'")
        if len(self.value) != 2:
            raise ValueError("boundary condition value needs two components")
        if self.kind == "traction" and any(v is None for v in self.value):
            raise ValueError("traction components cannot be free")

    def at_load_factor(self, lam: float) -> "BoundaryCondition":
        if not self.scaled:
            return self
        value = tuple(None if v is None else v * lam for v in self.value)
        return BoundaryCondition(self.boundary, self.kind, value, scaled=False)


@dataclass(frozen=True)
class QuadratureSet:
    """Element rules per class: plain, cut (jump), and tip (branch).

    The tip rule is always a tensor rule with an even per-axis count:
    odd rules sample the element center, which coincides with the crack
    tip whenever a crack is aligned with element-center rows, and the
    branch gradient is singular there.
    """

    standard: QuadratureRule
    cut: QuadratureRule
    tip: QuadratureRule

    @classmethod
    def from_targets(cls, standard: int = 4, cut: int = 35,
                     tip: int = 40) -> "QuadratureSet":
        n = int(np.ceil(np.sqrt(tip)))
        n += n % 2
        return cls(
            standard=gauss_rule(standard),
            cut=gauss_rule(cut),
            tip=gauss_rule(n * n),
        )

    @classmethod
    def default(cls, cut_points: int = 35, tip_points: int = 40) -> "QuadratureSet":
        return cls.from_targets(4, cut_points, tip_points)


@dataclass(frozen=True)
class DofLayout:
    """Global indexing: standard pairs first, then jump pairs, then branch."""

    n_nodes: int
    disc_slot: np.ndarray  # (n_nodes,) slot id or -1
    tip_slot: np.ndarray  # (n_nodes,) slot id or -1
    n_disc: int
    n_tip: int

    @classmethod
    def build(cls, emap: EnrichmentMap) -> "DofLayout":
        n = emap.status.shape[0]
        disc_slot = np.full(n, -1, dtype=np.int64)
        tip_slot = np.full(n, -1, dtype=np.int64)
        hs = np.nonzero(emap.status == HEAVISIDE)[0]
        ts = np.nonzero(emap.status == TIP)[0]
        disc_slot[hs] = np.arange(hs.size)
        tip_slot[ts] = np.arange(ts.size)
        return cls(n_nodes=n, disc_slot=disc_slot, tip_slot=tip_slot,
                   n_disc=hs.size, n_tip=ts.size)

    @property
    def total_dofs(self) -> int:
        return 2 * self.n_nodes + 2 * self.n_disc + 8 * self.n_tip

    def cont_dof(self, node: int, comp: int) -> int:
        return 2 * node + comp

    def disc_dof(self, node: int, comp: int) -> int:
        slot = self.disc_slot[node]
        if slot < 0:
            raise KeyError(f"node {node} has no jump degrees of freedom")
        return 2 * self.n_nodes + 2 * int(slot) + comp

    def tip_dof(self, node: int, branch: int, comp: int) -> int:
        slot = self.tip_slot[node]
        if slot < 0:
            raise KeyError(f"node {node} has no branch degrees of freedom")
        return 2 * self.n_nodes + 2 * self.n_disc + 8 * int(slot) + 2 * branch + comp

    def scatter(self, u: np.ndarray) -> FieldTriplet:
        """Spread a flat solution vector into dense per-node field arrays."""
        fields = FieldTriplet.zeros(self.n_nodes)
        fields.u_cont[:] = u[: 2 * self.n_nodes].reshape(-1, 2)
        hs = np.nonzero(self.disc_slot >= 0)[0]
        base = 2 * self.n_nodes
        fields.u_disc[hs] = u[base: base + 2 * self.n_disc].reshape(-1, 2)
        ts = np.nonzero(self.tip_slot >= 0)[0]
        base += 2 * self.n_disc
        fields.u_tip[ts] = u[base: base + 8 * self.n_tip].reshape(-1, 4, 2)
        return fields


@dataclass
class LinearSystem:
    """Assembled stiffness, load vector, and prescribed-value map."""

    K: sp.csr_matrix
    f: np.ndarray
    fixed: dict[int, float]
    layout: DofLayout


@dataclass
class SolutionState:
    """Solved displacement fields at one load factor."""

    fields: FieldTriplet
    load_factor: float
    layout: DofLayout
    u: np.ndarray
    residual: float


def elasticity_matrix(material: MaterialModel) -> np.ndarray:
    """3x3 Voigt constitutive matrix (order: xx, yy, xy with engineering shear)."""
    E, nu = material.E, material.nu
    if material.plane_strain:
        c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return np.array(
            [
                [c * (1.0 - nu), c * nu, 0.0],
                [c * nu, c * (1.0 - nu), 0.0],
                [0.0, 0.0, c * (1.0 - 2.0 * nu) / 2.0],
            ]
        )
    c = E / (1.0 - nu**2)
    return np.array(
        [
            [c, c * nu, 0.0],
            [c * nu, c, 0.0],
            [0.0, 0.0, c * (1.0 - nu) / 2.0],
        ]
    )


# ---------------------------------------------------------------------------
# element-level machinery
# ---------------------------------------------------------------------------

def _element_geometry(xy: np.ndarray, rule: QuadratureRule):
    """Shape data at one element's quadrature points.

    Returns (values (q,4), dN physical (q,4,2), wdet (q,), phys (q,2)).
    """
    values, dref = reference_shape(rule.points[:, 0], rule.points[:, 1])
    J = np.einsum("ia,qib->qab", xy, dref)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / det
    Jinv[:, 0, 1] = -J[:, 0, 1] / det
    Jinv[:, 1, 0] = -J[:, 1, 0] / det
    Jinv[:, 1, 1] = J[:, 0, 0] / det
    dN = np.einsum("qib,qba->qia", dref, Jinv)
    return values, dN, rule.weights * det, values @ xy


def _element_scalars(mesh: Mesh, emap: EnrichmentMap, layout: DofLayout, eid: int,
                     values: np.ndarray, dN: np.ndarray, phys: np.ndarray):
    """Scalar shape functions of one element, one per dof pair.

    Returns (dofs, vals (q, S), grads (q, S, 2)) where scalar k spawns the
    x/y dof pair dofs[2k], dofs[2k+1].
    """
    conn = mesh.elements[eid]
    nq = values.shape[0]
    vals = [values[:, li] for li in range(4)]
    grads = [dN[:, li, :] for li in range(4)]
    dofs: list[int] = []
    for li in range(4):
        n = int(conn[li])
        dofs += [layout.cont_dof(n, 0), layout.cont_dof(n, 1)]
    for li in range(4):
        n = int(conn[li])
        status = emap.status[n]
        if status == HEAVISIDE:
            crack = emap.crack_by_id(int(emap.node_crack[n]))
            M = shifted_heaviside(emap.node_sign[n], signed_distance_batch(crack, phys))
            vals.append(values[:, li] * M)
            grads.append(M[:, None] * dN[:, li, :])
            dofs += [layout.disc_dof(n, 0), layout.disc_dof(n, 1)]
        elif status == TIP:
            tinfo = emap.tips[int(emap.node_tip[n])]
            crack = emap.crack_by_id(tinfo.crack_id)
            r, theta = branch_theta(tinfo, crack, phys)
            if np.any(r < 1e-14):
                raise AssemblyError(
                    f"a quadrature point of element {eid} coincides with the "
                    f"tip of crack {tinfo.crack_id}; change the rule or mesh"
                )
            F, dF_local = branch_eval(r, theta)
            Q = branch_frame(tinfo)
            dF = np.einsum("qjb,ab->qja", dF_local, Q)
            for j in range(4):
                vals.append(values[:, li] * F[:, j])
                grads.append(F[:, j, None] * dN[:, li, :]
                             + values[:, li, None] * dF[:, j, :])
                dofs += [layout.tip_dof(n, j, 0), layout.tip_dof(n, j, 1)]
    return dofs, np.stack(vals, axis=1), np.stack(grads, axis=1)


def _strain_matrix(grads: np.ndarray) -> np.ndarray:
    """Voigt B matrix (q, 3, 2S) from scalar gradients (q, S, 2)."""
    nq, S, _ = grads.shape
    B = np.zeros((nq, 3, 2 * S))
    B[:, 0, 0::2] = grads[..., 0]
    B[:, 1, 1::2] = grads[..., 1]
    B[:, 2, 0::2] = grads[..., 1]
    B[:, 2, 1::2] = grads[..., 0]
    return B


def _element_matrix(B: np.ndarray, D: np.ndarray, wdet: np.ndarray) -> np.ndarray:
    return np.einsum("qri,rs,qsj,q->ij", B, D, B, wdet, optimize=True)


def _standard_pass(mesh: Mesh, D: np.ndarray, rule: QuadratureRule):
    """Vectorized 2x2 standard-field stiffness of every element."""
    values, dref = reference_shape(rule.points[:, 0], rule.points[:, 1])
    xy = mesh.element_coords()  # (m, 4, 2)
    J = np.einsum("mia,qib->mqab", xy, dref)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    Jinv = np.empty_like(J)
    Jinv[..., 0, 0] = J[..., 1, 1] / det
    Jinv[..., 0, 1] = -J[..., 0, 1] / det
    Jinv[..., 1, 0] = -J[..., 1, 0] / det
    Jinv[..., 1, 1] = J[..., 0, 0] / det
    dN = np.einsum("qib,mqba->mqia", dref, Jinv)  # (m, q, 4, 2)
    m, nq = det.shape
    B = np.zeros((m, nq, 3, 8))
    B[..., 0, 0::2] = dN[..., 0]
    B[..., 1, 1::2] = dN[..., 1]
    B[..., 2, 0::2] = dN[..., 1]
    B[..., 2, 1::2] = dN[..., 0]
    wdet = rule.weights[None, :] * det
    K = np.einsum("mqri,rs,mqsj,mq->mij", B, D, B, wdet, optimize=True)
    return K


def _cont_dofs_all(mesh: Mesh) -> np.ndarray:
    d = np.empty((mesh.n_elements, 8), dtype=np.int64)
    d[:, 0::2] = 2 * mesh.elements
    d[:, 1::2] = 2 * mesh.elements + 1
    return d


def _crossing_params(pa: np.ndarray, pb: np.ndarray, crack) -> list[float]:
    """Parameters t in (0,1) where segment pa->pb crosses the crack."""
    out = []
    d = pb - pa
    v = crack.vertices
    for j in range(crack.n_segments):
        c0, c1 = v[j], v[j + 1]
        e = c1 - c0
        denom = d[0] * e[1] - d[1] * e[0]
        if abs(denom) < 1e-300:
            continue
        rel = c0 - pa
        t = (rel[0] * e[1] - rel[1] * e[0]) / denom
        s = (rel[0] * d[1] - rel[1] * d[0]) / denom
        if 0.0 < t < 1.0 and 0.0 <= s <= 1.0:
            out.append(float(t))
    return out


def _traction_contributions(mesh: Mesh, emap: EnrichmentMap, layout: DofLayout,
                            bcs, f: np.ndarray) -> None:
    """Accumulate edge tractions, including jump/branch edge terms.

    Integration splits each loaded edge at crack crossings so the
    piecewise-constant jump factor is integrated exactly.
    """
    gp, gw = np.polynomial.legendre.leggauss(6)
    boundary = mesh.boundary_edges()
    for bc in bcs:
        if bc.kind != "traction":
            continue
        if bc.boundary not in mesh.boundary_tags:
            raise AssemblyError(f"unknown boundary tag '{bc.boundary}'")
        tagged = set(int(n) for n in mesh.boundary_tags[bc.boundary])
        tvec = np.asarray(bc.value, dtype=float)
        n_loaded = 0
        for a, b in boundary:
            if a not in tagged or b not in tagged:
                continue
            n_loaded += 1
            pa, pb = mesh.nodes[a], mesh.nodes[b]
            length = float(np.linalg.norm(pb - pa))
            breaks = {0.0, 1.0}
            for crack in emap.cracks:
                breaks.update(_crossing_params(pa, pb, crack))
            knots = sorted(breaks)
            for t0, t1 in zip(knots[:-1], knots[1:]):
                if t1 - t0 < 1e-14:
                    continue
                ts = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * gp
                ws = 0.5 * (t1 - t0) * gw * length
                xs = pa[None, :] + ts[:, None] * (pb - pa)[None, :]
                for node, shape in ((a, 1.0 - ts), (b, ts)):
                    base = np.sum(shape * ws)
                    f[layout.cont_dof(node, 0)] += base * tvec[0]
                    f[layout.cont_dof(node, 1)] += base * tvec[1]
                    status = emap.status[node]
                    if status == HEAVISIDE:
                        crack = emap.crack_by_id(int(emap.node_crack[node]))
                        M = shifted_heaviside(
                            emap.node_sign[node], signed_distance_batch(crack, xs)
                        )
                        w_enr = np.sum(shape * M * ws)
                        f[layout.disc_dof(node, 0)] += w_enr * tvec[0]
                        f[layout.disc_dof(node, 1)] += w_enr * tvec[1]
                    elif status == TIP:
                        tinfo = emap.tips[int(emap.node_tip[node])]
                        crack = emap.crack_by_id(tinfo.crack_id)
                        r, theta = branch_theta(tinfo, crack, xs)
                        F, _ = branch_eval(np.maximum(r, 1e-30), theta)
                        for j in range(4):
                            w_enr = np.sum(shape * F[:, j] * ws)
                            f[layout.tip_dof(node, j, 0)] += w_enr * tvec[0]
                            f[layout.tip_dof(node, j, 1)] += w_enr * tvec[1]
        if n_loaded == 0:
            raise AssemblyError(
                f"traction on '{bc.boundary}' matched no boundary edges"
            )


def _body_force_contributions(mesh: Mesh, emap: EnrichmentMap, layout: DofLayout,
                              material: MaterialModel, rules: QuadratureSet,
                              kinds: np.ndarray, f: np.ndarray) -> None:
    b = np.asarray(material.body_force, dtype=float)
    rule_of_kind = {0: rules.standard, 1: rules.standard, 2: rules.cut, 3: rules.tip}
    for eid in range(mesh.n_elements):
        rule = rule_of_kind[int(kinds[eid])]
        xy = mesh.nodes[mesh.elements[eid]]
        values, dN, wdet, phys = _element_geometry(xy, rule)
        dofs, vals, _ = _element_scalars(mesh, emap, layout, eid, values, dN, phys)
        weights = vals.T @ wdet  # (S,)
        fe = np.empty(2 * weights.size)
        fe[0::2] = weights * b[0]
        fe[1::2] = weights * b[1]
        np.add.at(f, np.asarray(dofs), fe)


def assemble(mesh: Mesh, emap: EnrichmentMap, material: MaterialModel,
             rules: QuadratureSet | None = None, bcs=()) -> LinearSystem:
    """Build the global stiffness, load vector, and prescribed-value map.

    Traction conditions enter the load vector here; displacement
    conditions populate ``fixed`` (standard dof values, plus zeros on all
    enrichment dofs of constrained nodes — the constrained boundary is
    assumed uncracked).  Apply them with :func:`apply_constraints`.
    """
    rules = rules if rules is not None else QuadratureSet.default()
    layout = DofLayout.build(emap)
    D = elasticity_matrix(material)
    kinds = emap.element_kinds(mesh)

    K_std = _standard_pass(mesh, D, rules.standard)
    cont_dofs = _cont_dofs_all(mesh)
    rows = [np.repeat(cont_dofs, 8, axis=1).ravel()]
    cols = [np.tile(cont_dofs, (1, 8)).ravel()]
    data = [K_std.ravel()]

    # Correct cut/tip elements: replace their whole block with the
    # elevated-rule integral over all coupled fields.
    for eid in range(mesh.n_elements):
        kind = int(kinds[eid])
        if kind < 2:
            continue
        rule = rules.cut if kind == 2 else rules.tip
        xy = mesh.nodes[mesh.elements[eid]]
        values, dN, wdet, phys = _element_geometry(xy, rule)
        # A cut element whose quadrature points all sample one side (the
        # crack clips a corner sliver below rule resolution) is still
        # integrated: the jump factors are then constant over the element,
        # which is exactly the limit of a vanishing sliver.  Nodes whose
        # whole support samples one-sided are removed during
        # classification, so no dof can end up without jump stiffness.
        dofs, vals, grads = _element_scalars(mesh, emap, layout, eid, values, dN, phys)
        B = _strain_matrix(grads)
        Ke = _element_matrix(B, D, wdet)
        Ke[:8, :8] -= K_std[eid]
        dofs = np.asarray(dofs)
        rows.append(np.repeat(dofs, dofs.size))
        cols.append(np.tile(dofs, dofs.size))
        data.append(Ke.ravel())

    K = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(layout.total_dofs, layout.total_dofs),
    ).tocsr()
    if not np.all(np.isfinite(K.data)):
        raise AssemblyError("non-finite stiffness entry")

    f = np.zeros(layout.total_dofs)
    _traction_contributions(mesh, emap, layout, bcs, f)
    if any(material.body_force):
        _body_force_contributions(mesh, emap, layout, material, rules, kinds, f)

    fixed: dict[int, float] = {}
    for bc in bcs:
        if bc.kind != "displacement":
            continue
        if bc.boundary not in mesh.boundary_tags:
            raise AssemblyError(f"unknown boundary tag '{bc.boundary}'")
        for n in mesh.boundary_tags[bc.boundary]:
            n = int(n)
            for comp in (0, 1):
                v = bc.value[comp]
                if v is None:
                    continue
                dof = layout.cont_dof(n, comp)
                if dof in fixed and fixed[dof] != v:
                    raise AssemblyError(
                        f"conflicting prescribed values on node {n} "
                        f"component {comp}: {fixed[dof]} vs {v}"
                    )
                fixed[dof] = float(v)
            if emap.status[n] == HEAVISIDE:
                for comp in (0, 1):
                    fixed.setdefault(layout.disc_dof(n, comp), 0.0)
            elif emap.status[n] == TIP:
                for j in range(4):
                    for comp in (0, 1):
                        fixed.setdefault(layout.tip_dof(n, j, comp), 0.0)
    return LinearSystem(K=K, f=f, fixed=fixed, layout=layout)


def apply_constraints(system: LinearSystem, extra=None) -> LinearSystem:
    """Symmetric elimination of prescribed dofs.

    Rows and columns of fixed dofs are zeroed, their diagonal is set to
    the mean original diagonal (conditioning-neutral), and the load
    vector absorbs the prescribed values so the solve returns them
    exactly.
    """
    fixed = dict(system.fixed)
    for dof, value in (extra or {}).items():
        if dof in fixed and fixed[dof] != value:
            raise AssemblyError(f"conflicting prescribed values on dof {dof}")
        fixed[dof] = float(value)
    if not fixed:
        return LinearSystem(system.K, system.f.copy(), {}, system.layout)
    n = system.layout.total_dofs
    idx = np.fromiter(fixed.keys(), dtype=np.int64)
    vals = np.fromiter(fixed.values(), dtype=float)
    if idx.min() < 0 or idx.max() >= n:
        raise AssemblyError("prescribed dof index out of range")
    x_fix = np.zeros(n)
    x_fix[idx] = vals
    f = system.f - system.K @ x_fix
    free = np.ones(n)
    free[idx] = 0.0
    P = sp.diags(free)
    diag_scale = float(system.K.diagonal().mean())
    pinned = np.zeros(n)
    pinned[idx] = diag_scale
    K = (P @ system.K @ P + sp.diags(pinned)).tocsr()
    f = free * f
    f[idx] = diag_scale * vals
    return LinearSystem(K=K, f=f, fixed=fixed, layout=system.layout)


def solve(system: LinearSystem, load_factor: float = 1.0) -> SolutionState:
    """Direct sparse solve with an infinity-norm residual check."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            u = spla.spsolve(system.K.tocsc(), system.f)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SolverError(
            "linear solve produced non-finite values (singular or "
            "indefinite system; check constraints and enrichment)"
        )
    residual_vec = system.K @ u - system.f
    fmax = float(np.abs(system.f).max())
    rmax = float(np.abs(residual_vec).max())
    residual = rmax / fmax if fmax > 0.0 else rmax
    if residual > 1e-9:
        raise SolverError(f"solver residual {residual:.3e} exceeds 1e-9")
    return SolutionState(
        fields=system.layout.scatter(u),
        load_factor=load_factor,
        layout=system.layout,
        u=u,
        residual=residual,
    )


def stress_strain_at(x, state: SolutionState, mesh: Mesh, emap: EnrichmentMap,
                     material: MaterialModel):
    """Voigt strain and stress at one point (not on a crack face)."""
    eps, sig = stress_strain_batch(np.asarray(x, dtype=float)[None, :], state,
                                   mesh, emap, material)
    return eps[0], sig[0]


def stress_strain_batch(xs, state: SolutionState, mesh: Mesh,
                        emap: EnrichmentMap, material: MaterialModel):
    """Voigt strains (n,3) and stresses (n,3) at arbitrary points."""
    xs = np.asarray(xs, dtype=float)
    for crack in emap.cracks:
        dist = np.abs(signed_distance_batch(crack, xs))
        if np.any(dist < 1e-12 * max(1.0, crack.length)):
            raise ValueError(
                "stress evaluation point lies on a crack face where the "
                "side is ambiguous; offset it off the face"
            )
    _, grad = evaluate_fields(xs, mesh, emap, state.fields)
    eps = np.stack(
        [grad[:, 0, 0], grad[:, 1, 1], grad[:, 0, 1] + grad[:, 1, 0]], axis=1
    )
    sig = eps @ elasticity_matrix(material).T
    return eps, sig
