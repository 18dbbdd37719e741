"""Multiresolution isosurface extraction over occupancy fields.

Starts from a coarse grid on [-1, 1]^3, repeatedly subdivides cells whose
corners straddle the iso level (dilated by one cell to catch surface bulges
between lattice points), then runs marching cubes over the active fine
cells. Crossing-edge vertices are refined by batched bisection (8 rounds).
Vertices are deduplicated per lattice edge, so the triangulation is
shared-edge consistent across neighboring cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .nets import occupancy_probe_np
from .render import GATE_CUT

__all__ = [
    "Mesh",
    "MeshError",
    "extract_mesh",
    "object_occupancy",
    "part_occupancy",
    "sample_surface",
    "mesh_to_obj",
    "merge_meshes",
    "dense_marching_cubes",
]

# cube corner offsets in the Lorensen/Bourke numbering
CORNERS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=np.int64,
)
EDGE_CORNERS = np.array(
    [
        (0, 1), (1, 2), (2, 3), (3, 0),
        (4, 5), (5, 6), (6, 7), (7, 4),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ],
    dtype=np.int64,
)
_TRI_TABLE = np.asarray(TRI_TABLE, dtype=np.int64)
_EDGE_TABLE = np.asarray(EDGE_TABLE, dtype=np.int64)


class MeshError(RuntimeError):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int
    part_ids: np.ndarray | None = None  # (T,) optional per-triangle part

    @property
    def empty(self):
        return len(self.triangles) == 0

    def triangle_areas(self):
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def surface_area(self):
        return float(self.triangle_areas().sum())


# -- occupancy field composition -----------------------------------------------


def part_occupancy(weights, part):
    """Joint occupancy h = o * g of one part as a plain field function."""
    frame = part.frame()
    qs = np.asarray(part.query_scale, dtype=np.float64)

    def field(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        local = frame.to_local(pts)
        f = ((local / frame.s) ** 2).sum(axis=-1)
        g = _sigmoid(100.0 * (1.0 - f))
        out = np.zeros(len(pts))
        live = g > GATE_CUT
        if live.any():
            o = occupancy_probe_np(
                weights, part.z_s.data, (local[live] / qs).astype(part.z_s.dtype)
            )
            out[live] = o * g[live]
        if not np.isfinite(out).all():
            bad = np.argwhere(~np.isfinite(out))[0]
            raise MeshError(f"occupancy field non-finite at {pts[bad[0]]}")
        return out

    return field


def object_occupancy(weights, parts):
    """Union of the active parts' fields: O(x) = max_m h_m(x)."""
    fields = [part_occupancy(weights, p) for p in parts]
    if not fields:
        raise MeshError("no active parts to mesh")

    def field(pts):
        out = fields[0](pts)
        for f in fields[1:]:
            np.maximum(out, f(pts), out=out)
        return out

    return field


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# -- cached lattice evaluation ----------------------------------------------------


class _GridEval:
    """Dense cached field evaluation on the finest lattice [0, res]^3."""

    def __init__(self, field, res, lo=-1.0, hi=1.0):
        self.field = field
        self.res = res
        self.lo = lo
        self.scale = (hi - lo) / res
        n = res + 1
        self.vals = np.zeros((n, n, n))
        self.known = np.zeros((n, n, n), dtype=bool)

    def points(self, coords):
        return self.lo + np.asarray(coords, dtype=np.float64) * self.scale

    def values(self, coords):
        """Field values at integer lattice coords (n, 3); batched + cached."""
        coords = np.atleast_2d(coords)
        xs, ys, zs = coords[:, 0], coords[:, 1], coords[:, 2]
        missing = ~self.known[xs, ys, zs]
        if missing.any():
            todo = coords[missing]
            uniq, inv = np.unique(todo, axis=0, return_inverse=True)
            vals = self.field(self.points(uniq))
            self.vals[uniq[:, 0], uniq[:, 1], uniq[:, 2]] = vals
            self.known[uniq[:, 0], uniq[:, 1], uniq[:, 2]] = True
        return self.vals[xs, ys, zs]


# -- MISE driver ---------------------------------------------------------------------


def _straddling(ge, cells, size, iso):
    """Boolean per cell: corners disagree about inside/outside."""
    corners = (cells[:, None, :] + CORNERS[None, :, :] * size).reshape(-1, 3)
    v = ge.values(corners).reshape(len(cells), 8)
    above = v >= iso
    return above.any(axis=1) & (~above).any(axis=1)


def _dilate_cells(cells, size, final_res):
    """Union of cells with their 6 face neighbors (clamped to the grid)."""
    offs = np.array(
        [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=np.int64,
    )
    grown = (cells[:, None, :] + offs[None, :, :] * size).reshape(-1, 3)
    ok = ((grown >= 0) & (grown <= final_res - size)).all(axis=1)
    return np.unique(grown[ok], axis=0)


def extract_mesh(field, initial_res=32, refinement_levels=1, iso=0.5, refine_steps=8,
                 part_id=None):
    """MISE + marching cubes + bisection refinement on [-1, 1]^3."""
    final_res = initial_res * (2**refinement_levels)
    ge = _GridEval(field, final_res)
    size = 2**refinement_levels

    base = np.arange(initial_res, dtype=np.int64) * size
    gx, gy, gz = np.meshgrid(base, base, base, indexing="ij")
    cells = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    cells = cells[_straddling(ge, cells, size, iso)]
    cells = _dilate_cells(cells, size, final_res)

    while size > 1:
        half = size // 2
        children = (cells[:, None, :] + CORNERS[None, :, :] * half).reshape(-1, 3)
        size = half
        if len(children) == 0:
            cells = children
            break
        keep = _straddling(ge, children, size, iso)
        # non-straddling dilation neighbors emit no triangles later; they only
        # guard against surface bulges between lattice points
        cells = _dilate_cells(children[keep], size, final_res)

    return _march_cells(ge, cells, iso, refine_steps, part_id)


def dense_marching_cubes(field, res=64, iso=0.5, refine_steps=8):
    """Reference path: marching cubes over every cell of the full grid."""
    ge = _GridEval(field, res)
    axes = np.arange(res + 1)
    gx, gy, gz = np.meshgrid(axes, axes, axes, indexing="ij")
    ge.values(np.stack([gx, gy, gz], axis=-1).reshape(-1, 3))
    base = np.arange(res, dtype=np.int64)
    gx, gy, gz = np.meshgrid(base, base, base, indexing="ij")
    cells = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    return _march_cells(ge, cells, iso, refine_steps, None)


def _march_cells(ge, cells, iso, refine_steps, part_id):
    """Vectorized marching cubes over unit cells (min-corner lattice coords)."""
    empty = Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), None)
    if len(cells) == 0:
        return empty
    corner_coords = cells[:, None, :] + CORNERS[None, :, :]
    v = ge.values(corner_coords.reshape(-1, 3)).reshape(len(cells), 8)
    case = ((v >= iso) << np.arange(8)).sum(axis=1)
    live = _EDGE_TABLE[case] != 0
    if not live.any():
        return empty
    cells, v, case = cells[live], v[live], case[live]

    # gather (cell, edge) pairs used by the triangle table
    rows = _TRI_TABLE[case]  # (C, 16)
    tri_cell, tri_edges = [], []
    for t in range(0, 15, 3):
        valid = rows[:, t] >= 0
        if not valid.any():
            continue
        tri_cell.append(np.nonzero(valid)[0])
        tri_edges.append(rows[valid][:, t : t + 3])
    if not tri_cell:
        return empty
    tri_cell = np.concatenate(tri_cell)
    tri_edges = np.concatenate(tri_edges)  # (T, 3) edge ids in their cells

    n = ge.res + 1
    ca = cells[tri_cell][:, None, :] + CORNERS[EDGE_CORNERS[tri_edges][..., 0]]
    cb = cells[tri_cell][:, None, :] + CORNERS[EDGE_CORNERS[tri_edges][..., 1]]
    ia = (ca[..., 0] * n + ca[..., 1]) * n + ca[..., 2]
    ib = (cb[..., 0] * n + cb[..., 1]) * n + cb[..., 2]
    lo_id = np.minimum(ia, ib)
    hi_id = np.maximum(ia, ib)
    keys = lo_id * (n**3) + hi_id  # (T, 3) unique per lattice edge

    uniq, inverse = np.unique(keys.reshape(-1), return_inverse=True)
    triangles = inverse.reshape(-1, 3)

    lo_u = uniq // (n**3)
    hi_u = uniq % (n**3)
    ca_u = np.stack([lo_u // (n * n), (lo_u // n) % n, lo_u % n], axis=1)
    cb_u = np.stack([hi_u // (n * n), (hi_u // n) % n, hi_u % n], axis=1)
    pa = ge.points(ca_u)
    pb = ge.points(cb_u)
    va = ge.values(ca_u)
    vb = ge.values(cb_u)
    vertices = _refine_vertices(ge.field, pa, pb, va, vb, iso, refine_steps)

    # drop degenerate triangles (iso exactly through a corner)
    dup = (
        (triangles[:, 0] == triangles[:, 1])
        | (triangles[:, 1] == triangles[:, 2])
        | (triangles[:, 0] == triangles[:, 2])
    )
    triangles = triangles[~dup]
    areas = 0.5 * np.linalg.norm(
        np.cross(
            vertices[triangles[:, 1]] - vertices[triangles[:, 0]],
            vertices[triangles[:, 2]] - vertices[triangles[:, 0]],
        ),
        axis=1,
    )
    triangles = triangles[areas > 0.0]
    pid = None if part_id is None else np.full(len(triangles), part_id, dtype=np.int64)
    return Mesh(vertices, triangles, pid)


def _refine_vertices(field, pa, pb, va, vb, iso, steps):
    """Batched bisection along crossing edges toward field == iso."""
    pa = pa.astype(np.float64)
    pb = pb.astype(np.float64)
    crossing = (va >= iso) != (vb >= iso)
    # linear interpolation fallback for non-crossing (dilated) edges
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(vb != va, (iso - va) / (vb - va), 0.5)
    t = np.clip(np.where(np.isfinite(t), t, 0.5), 0.0, 1.0)
    fallback = pa + t[:, None] * (pb - pa)
    if not crossing.any():
        return fallback
    lo = pa[crossing].copy()
    hi = pb[crossing].copy()
    flo_sign = va[crossing] >= iso
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        fmid = field(mid) >= iso
        same = fmid == flo_sign
        lo[same] = mid[same]
        hi[~same] = mid[~same]
    out = fallback
    out[crossing] = 0.5 * (lo + hi)
    return out


# -- sampling and export -----------------------------------------------------------


def sample_surface(mesh, n, rng=None, seed=0):
    """Area-weighted uniform surface samples; deterministic given the seed."""
    if mesh.empty:
        raise MeshError("cannot sample an empty mesh")
    rng = rng or np.random.default_rng(np.random.SeedSequence(seed))
    areas = mesh.triangle_areas()
    probs = areas / areas.sum()
    tri = rng.choice(len(probs), size=n, p=probs)
    u = rng.random((n, 1))
    v = rng.random((n, 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    return a + u * (b - a) + v * (c - a)


def mesh_to_obj(mesh, groups=False):
    """OBJ text: v/f lines with 1-based indices; optional per-part g groups."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    if groups and mesh.part_ids is not None:
        order = np.argsort(mesh.part_ids, kind="stable")
        current = None
        for ti in order:
            pid = mesh.part_ids[ti]
            if pid != current:
                lines.append(f"g part_{pid}")
                current = pid
            t = mesh.triangles[ti]
            lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    else:
        for t in mesh.triangles:
            lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    return "\n".join(lines) + "\n"


def merge_meshes(meshes, part_ids=None):
    """Concatenate meshes, offsetting indices; tags triangles per source."""
    verts, tris, pids = [], [], []
    offset = 0
    for i, m in enumerate(meshes):
        if m.empty:
            continue
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        tag = part_ids[i] if part_ids is not None else i
        pids.append(np.full(len(m.triangles), tag, dtype=np.int64))
        offset += len(m.vertices)
    if not verts:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), None)
    return Mesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(pids))
