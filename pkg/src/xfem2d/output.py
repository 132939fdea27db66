"""Result emission: SIF/COD tables, visualization dumps, and run logs.

All writers are deterministic: identical inputs produce byte-identical
files.  Tables use comma separators, ``.`` decimals, LF line endings,
and 9 significant digits; the field dump is a legacy-ASCII
unstructured-grid file in which every bisected element is split into
two polygons with private copies of the points on the crack faces, so
the displacement jump renders as an actual gap.
"""

from __future__ import annotations

import csv
import math
import os

import numpy as np

from xfem2d.assembly import (
    MaterialModel,
    QuadratureSet,
    SolutionState,
    elasticity_matrix,
    _element_geometry,
)
from xfem2d.cracks import signed_distance_batch
from xfem2d.driver import RunHistory, cod_profile
from xfem2d.enrichment import (
    EnrichmentMap,
    FieldTriplet,
    evaluate_fields,
    _crack_chunks,
    _edge_of_point,
    _element_field_eval,
)
from xfem2d.mesh import Mesh

__all__ = [
    "write_sif_csv",
    "read_sif_csv",
    "write_cod_csv",
    "write_field_dump",
    "write_run_log",
]

SIF_HEADER = "step,load_factor,crack_id,tip_id,K_I,K_II,J,theta_c_deg,a_eff"
COD_HEADER = "step,load_factor,crack_id,s,x,y,opening"


def _fmt(value: float) -> str:
    """Number at 9 significant digits without trailing noise."""
    return format(float(value), ".9g")


# ---------------------------------------------------------------------------
# tabular artifacts
# ---------------------------------------------------------------------------

def write_sif_csv(history: RunHistory, path) -> None:
    """Stress intensity table: one row per extracted tip per load step.

    Columns: step, load_factor, crack_id, tip_id, K_I, K_II, J,
    theta_c_deg (kink angle in degrees), a_eff (effective half length
    in meters).  All values SI.
    """
    if not history.steps:
        raise ValueError("the run history holds no solved steps")
    lines = [SIF_HEADER]
    for rec in history.steps:
        for res in rec.sifs:
            lines.append(",".join([
                str(rec.step),
                _fmt(rec.load_factor),
                str(res.crack_id),
                str(res.tip_id),
                _fmt(res.K_I),
                _fmt(res.K_II),
                _fmt(res.J),
                _fmt(math.degrees(res.theta_c)),
                _fmt(res.a_eff),
            ]))
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def read_sif_csv(path) -> list[dict]:
    """Parse a stress intensity table back into one dict per row."""
    with open(os.fspath(path), "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != SIF_HEADER.split(","):
            raise ValueError(
                f"unexpected header {reader.fieldnames}; "
                f"expected {SIF_HEADER.split(',')}"
            )
        rows = []
        for raw in reader:
            row: dict = {}
            for key, text in raw.items():
                if key in ("step", "crack_id", "tip_id"):
                    row[key] = int(text)
                else:
                    row[key] = float(text)
            rows.append(row)
    return rows


def write_cod_csv(state: SolutionState, mesh: Mesh, emap: EnrichmentMap,
                  path, step: int = 0, n_samples: int = 101) -> None:
    """Opening profiles for every crack that bisects at least one element.

    Columns: step, load_factor, crack_id, s (arc length from the crack
    start), x, y (sample position), opening (normal displacement jump).
    Cracks contained in a single element have no opening profile and are
    skipped.
    """
    lines = [COD_HEADER]
    for crack in sorted(emap.source_cracks, key=lambda c: c.id):
        try:
            profile = cod_profile(state, mesh, emap, crack.id,
                                  n_samples=n_samples)
        except ValueError:
            continue
        vertices = crack.vertices
        seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        xs = np.interp(profile[:, 0], cum, vertices[:, 0])
        ys = np.interp(profile[:, 0], cum, vertices[:, 1])
        for i in range(profile.shape[0]):
            lines.append(",".join([
                str(step),
                _fmt(state.load_factor),
                str(crack.id),
                _fmt(profile[i, 0]),
                _fmt(xs[i]),
                _fmt(ys[i]),
                _fmt(profile[i, 1]),
            ]))
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# visualization dump
# ---------------------------------------------------------------------------

def _perimeter_coord(quad: np.ndarray, p: np.ndarray, tol: float):
    """Position of a boundary point as edge index plus edge fraction."""
    k = _edge_of_point(quad, p, tol)
    if k is None:
        return None
    a = quad[k]
    e = quad[(k + 1) % 4] - a
    t = float(np.clip(np.dot(p - a, e) / np.dot(e, e), 0.0, 1.0))
    return k + t


def _corners_between(start: float, stop: float) -> list[int]:
    """Corner indices strictly inside the CCW perimeter arc start->stop."""
    span = (stop - start) % 4.0
    found = []
    for j in range(4):
        off = (j - start) % 4.0
        if 1e-9 < off < span - 1e-9:
            found.append((off, j))
    return [j for _, j in sorted(found)]


def _chain_normals(chain: list[np.ndarray]) -> list[np.ndarray]:
    """Left unit normal at each point of an open polyline."""
    tangents = []
    for a, b in zip(chain[:-1], chain[1:]):
        d = b - a
        norm = float(np.linalg.norm(d))
        tangents.append(d / norm if norm > 0.0 else np.array([1.0, 0.0]))
    normals = []
    for i in range(len(chain)):
        if i == 0:
            t = tangents[0]
        elif i == len(chain) - 1:
            t = tangents[-1]
        else:
            t = tangents[i - 1] + tangents[i]
            norm = float(np.linalg.norm(t))
            t = t / norm if norm > 0.0 else tangents[i]
        normals.append(np.array([-t[1], t[0]]))
    return normals


def _split_cut_element(quad: np.ndarray, crack):
    """Two CCW polygons of a bisected quad, split along the crack.

    Returns ``(chain, poly_plus, poly_minus)`` where ``chain`` is the
    crack polyline inside the quad and each polygon lists mixed entries:
    ints are quad corner indices, ``("c", i)`` refers to chain point i.
    ``None`` when the element is not cleanly bisected.
    """
    chunks = _crack_chunks(quad, crack)
    if not chunks:
        return None
    s0, s1, p0, p1 = chunks[0]
    v = crack.vertices
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    slack = 1e-12 * max(1.0, float(cum[-1]))
    inner = [np.asarray(v[j], dtype=float) for j in range(1, len(v) - 1)
             if s0 + slack < cum[j] < s1 - slack]
    chain = [np.asarray(p0, dtype=float)] + inner + [np.asarray(p1, dtype=float)]

    h = float(np.max(quad.max(axis=0) - quad.min(axis=0)))
    start = _perimeter_coord(quad, chain[0], 1e-9 * h)
    stop = _perimeter_coord(quad, chain[-1], 1e-9 * h)
    if start is None or stop is None:
        return None
    corners_ab = _corners_between(start, stop)
    corners_ba = _corners_between(stop, start)
    if not corners_ab or not corners_ba:
        return None

    last = len(chain) - 1
    # Walking the perimeter CCW and returning along the crack keeps both
    # polygons counter-clockwise.
    poly_ab = [("c", 0)] + corners_ab + [("c", last)] \
        + [("c", i) for i in range(last - 1, 0, -1)]
    poly_ba = [("c", last)] + corners_ba + [("c", 0)] \
        + [("c", i) for i in range(1, last)]

    def side_of(corners: list[int]) -> float:
        d = signed_distance_batch(crack, quad[corners])
        return 1.0 if d[np.argmax(np.abs(d))] > 0.0 else -1.0

    if side_of(corners_ab) > 0.0:
        return chain, poly_ab, poly_ba
    return chain, poly_ba, poly_ab


def _voigt(grad: np.ndarray) -> np.ndarray:
    return np.stack(
        [grad[:, 0, 0], grad[:, 1, 1], grad[:, 0, 1] + grad[:, 1, 0]], axis=1
    )


def _von_mises(sig: np.ndarray, material: MaterialModel) -> np.ndarray:
    sxx, syy, sxy = sig[:, 0], sig[:, 1], sig[:, 2]
    szz = material.nu * (sxx + syy) if material.plane_strain else 0.0
    return np.sqrt(
        0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2)
        + 3.0 * sxy ** 2
    )


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (weights[:, None] * values).sum(axis=0) / weights.sum()


def write_field_dump(state: SolutionState, mesh: Mesh, emap: EnrichmentMap,
                     material: MaterialModel, path,
                     rules: QuadratureSet | None = None) -> None:
    """Legacy-ASCII unstructured-grid file of the solved configuration.

    Plain elements appear as quads; every bisected element is split into
    the two polygons on either side of the crack, each with its own
    copies of the crack-face points, so the displacement jump renders.
    Nodal total displacement plus per-cell averaged stress components
    and von Mises stress are attached.
    """
    if rules is None:
        rules = QuadratureSet.from_targets()
    rule_by_kind = {0: rules.standard, 1: rules.standard,
                    2: rules.cut, 3: rules.tip}
    kinds = emap.element_kinds(mesh)
    D = elasticity_matrix(material)

    node_disp, _ = evaluate_fields(mesh.nodes, mesh, emap, state.fields,
                                   want_grad=False)

    # Differentiate against the mean-shifted field: gradients are invariant
    # under a constant translation, but the shift removes the cancellation
    # noise that the stiffness scale would otherwise amplify into spurious
    # stresses (a rigid translation must dump as exactly stress-free).
    grad_fields = FieldTriplet(
        u_cont=state.fields.u_cont - state.fields.u_cont.mean(axis=0),
        u_disc=state.fields.u_disc,
        u_tip=state.fields.u_tip,
    )

    extra_pos: list[np.ndarray] = []   # geometric position of private points
    extra_probe: list[np.ndarray] = []  # offset position for evaluation
    cells: list[list[int]] = []
    cell_types: list[int] = []
    cell_sig: list[np.ndarray] = []
    cell_vm: list[float] = []

    for eid in range(mesh.n_elements):
        quad = mesh.nodes[mesh.elements[eid]]
        rule = rule_by_kind[int(kinds[eid])]
        _, _, wdet, phys = _element_geometry(quad, rule)
        _, grad = _element_field_eval(mesh, emap, grad_fields, eid,
                                      rule.points, phys, want_grad=True)
        sig = _voigt(grad) @ D.T
        vm = _von_mises(sig, material)

        split = None
        if eid in emap.cut_elements:
            crack = emap.crack_by_id(emap.cut_elements[eid])
            split = _split_cut_element(quad, crack)
        if split is None:
            cells.append([int(i) for i in mesh.elements[eid]])
            cell_types.append(9)
            cell_sig.append(_weighted_mean(sig, wdet))
            cell_vm.append(float(np.dot(wdet, vm) / wdet.sum()))
            continue

        chain, poly_plus, poly_minus = split
        normals = _chain_normals(chain)
        h = float(np.max(quad.max(axis=0) - quad.min(axis=0)))
        eps = 1e-6 * h
        side_pts = signed_distance_batch(crack, phys) > 0.0
        for sign, poly in ((1.0, poly_plus), (-1.0, poly_minus)):
            ids = []
            for entry in poly:
                if isinstance(entry, tuple):
                    i = entry[1]
                    ids.append(mesh.n_nodes + len(extra_pos))
                    extra_pos.append(chain[i])
                    extra_probe.append(chain[i] + sign * eps * normals[i])
                else:
                    ids.append(int(mesh.elements[eid][entry]))
            cells.append(ids)
            cell_types.append(7)
            mask = side_pts if sign > 0.0 else ~side_pts
            if mask.any():
                cell_sig.append(_weighted_mean(sig[mask], wdet[mask]))
                cell_vm.append(
                    float(np.dot(wdet[mask], vm[mask]) / wdet[mask].sum())
                )
            else:
                cell_sig.append(_weighted_mean(sig, wdet))
                cell_vm.append(float(np.dot(wdet, vm) / wdet.sum()))

    if extra_probe:
        extra_disp, _ = evaluate_fields(np.array(extra_probe), mesh, emap,
                                        state.fields, want_grad=False)
        points = np.vstack([mesh.nodes, np.array(extra_pos)])
        disp = np.vstack([node_disp, extra_disp])
    else:
        points = mesh.nodes
        disp = node_disp

    lines = [
        "# vtk DataFile Version 3.0",
        "xfem2d field dump",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {points.shape[0]} double",
    ]
    for p in points:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} 0")
    total = sum(len(c) + 1 for c in cells)
    lines.append(f"CELLS {len(cells)} {total}")
    for c in cells:
        lines.append(" ".join([str(len(c))] + [str(i) for i in c]))
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.extend(str(t) for t in cell_types)
    lines.append(f"POINT_DATA {points.shape[0]}")
    lines.append("VECTORS displacement double")
    for u in disp:
        lines.append(f"{_fmt(u[0])} {_fmt(u[1])} 0")
    lines.append(f"CELL_DATA {len(cells)}")
    for name, values in (
        ("stress_xx", [s[0] for s in cell_sig]),
        ("stress_yy", [s[1] for s in cell_sig]),
        ("stress_xy", [s[2] for s in cell_sig]),
        ("von_mises", cell_vm),
    ):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in values)
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# run log
# ---------------------------------------------------------------------------

def _log_float(value: float) -> str:
    return format(float(value), ".6g")


def write_run_log(config, mesh: Mesh, history: RunHistory, path) -> None:
    """Structured text audit of one run.

    Records mesh statistics, the material, per-step enriched-node counts
    (|m_disc| jump-enriched, |m_tip| branch-enriched), degree-of-freedom
    totals, solver residuals, the nodes demoted to standard
    approximation with the measured support ratios, every extraction,
    growth increment, and tip deactivation, and the stop reason.
    """
    material = config.material
    lo, hi = mesh.bbox()
    lines = [
        f"mesh: {mesh.n_nodes} nodes, {mesh.n_elements} elements, "
        f"bbox [{_log_float(lo[0])}, {_log_float(hi[0])}] x "
        f"[{_log_float(lo[1])}, {_log_float(hi[1])}]",
        "boundary tags: " + ", ".join(
            f"{tag}({mesh.boundary_tags[tag].size})"
            for tag in sorted(mesh.boundary_tags)
        ),
        f"material: E = {_log_float(material.E)} Pa, "
        f"nu = {_log_float(material.nu)}, "
        + ("plane strain" if material.plane_strain else "plane stress"),
        f"enrichment: delta = {_log_float(getattr(config, 'delta', 0.002))}, "
        "tip enrichment "
        + ("on" if getattr(config, "tip_enrichment", False) else "off"),
    ]
    quadrature = getattr(config, "quadrature", None)
    if quadrature is not None:
        lines.append(
            "quadrature targets: standard "
            f"{quadrature[0]}, cut {quadrature[1]}, tip {quadrature[2]}"
        )
    for rec in history.steps:
        lines.append("")
        lines.append(f"step {rec.step}: load factor {_log_float(rec.load_factor)}")
        lines.append(
            f"  enriched nodes: |m_disc| = {rec.n_heaviside}, "
            f"|m_tip| = {rec.n_tip}"
        )
        lines.append(f"  dofs: {rec.n_dofs}")
        lines.append(f"  residual: {rec.residual:.6e}")
        if rec.demotions:
            lines.append(f"  demotions: {len(rec.demotions)}")
            for node, ratio, reason in rec.demotions:
                lines.append(
                    f"    node {node}: {reason} (ratio = {_log_float(ratio)})"
                )
        else:
            lines.append("  demotions: none")
        for res in rec.sifs:
            lines.append(
                f"  crack {res.crack_id} tip {res.tip_id}: "
                f"K_I = {_log_float(res.K_I)}, K_II = {_log_float(res.K_II)}, "
                f"J = {_log_float(res.J)}, "
                f"theta_c = {_log_float(math.degrees(res.theta_c))} deg, "
                f"a_eff = {_log_float(res.a_eff)}"
            )
        for ev in rec.extensions:
            lines.append(
                f"  extension: crack {ev.crack_id} tip {ev.tip_id} grew "
                f"{_log_float(ev.delta_a)} m at "
                f"{_log_float(math.degrees(ev.theta_c))} deg -> "
                f"({_log_float(ev.new_tip[0])}, {_log_float(ev.new_tip[1])})"
            )
        for ev in rec.frozen:
            lines.append(
                f"  deactivated: crack {ev.crack_id} tip {ev.tip_id} -- "
                f"{ev.reason}"
            )
    lines.append("")
    lines.append(f"stop: {history.stop_reason}")
    if history.error:
        lines.append(f"error: {history.error}")
    lines.append(f"growth steps applied: {history.n_increments}")
    with open(os.fspath(path), "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
