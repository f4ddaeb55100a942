"""Meshes and discrete calculus on punctured radial and 2D tensor domains.

Values live at nodes, gradients at cell midpoints (one-point midpoint
quadrature per cell).  Radial meshes carry the reduced measure
omega_{n-1} r^{n-1} dr so that n-dimensional radial problems run as 1D
computations; tensor2d meshes are axis-aligned grids, optionally with a
rectangular hole whose rim is tagged as an inner boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

INTERIOR = 0
OUTER_BOUNDARY = 1
INNER_BOUNDARY = 2
TAG_NAMES = {INTERIOR: "interior", OUTER_BOUNDARY: "outer_boundary",
             INNER_BOUNDARY: "inner_boundary"}


def sphere_area(n_dim: int) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n.

    n_dim = 1 is the flat-interval convention (unit weight, not the
    two-point S^0 measure) so plain 1D model problems carry Lebesgue
    measure.
    """
    if n_dim == 1:
        return 1.0
    return 2.0 * math.pi ** (n_dim / 2.0) / math.gamma(n_dim / 2.0)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Discretization of a punctured domain.

    kind          : "radial" or "tensor2d"
    n_dim         : ambient dimension (radial weight r^{n-1})
    nodes         : (N,) radii for radial, (N, 2) coordinates for tensor2d
    boundary_tags : (N,) ints, one of INTERIOR/OUTER_BOUNDARY/INNER_BOUNDARY
    cell_nodes    : (C, m) node indices per cell (m=2 radial, m=4 tensor2d)
    cell_measures : (C,) cell volumes, radial weight included
    cell_grad     : (C, m, d) gradient coefficients of the nodal hat
                    functions evaluated at the cell midpoint
    cell_mid      : (C, d) cell midpoint coordinates
    aux           : kind-specific bookkeeping (grid shape, parent maps)
    """
    kind: str
    n_dim: int
    nodes: np.ndarray
    boundary_tags: np.ndarray
    cell_nodes: np.ndarray
    cell_measures: np.ndarray
    cell_grad: np.ndarray
    cell_mid: np.ndarray
    aux: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("radial", "tensor2d"):
            raise MeshError(f"unknown mesh kind {self.kind!r}")
        if self.n_dim < 1:
            raise MeshError("n_dim must be >= 1")
        if np.any(self.cell_measures <= 0):
            raise MeshError("all cell measures must be positive")
        if len(self.boundary_tags) != self.n_nodes:
            raise MeshError("one boundary tag per node required")
        if not np.isin(self.boundary_tags,
                       list(TAG_NAMES)).all():
            raise MeshError("invalid boundary tag")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cell_nodes.shape[0]

    @property
    def dim(self) -> int:
        """Dimension of gradient vectors (1 radial, 2 tensor2d)."""
        return self.cell_grad.shape[2]

    @property
    def interior(self) -> np.ndarray:
        return self.boundary_tags == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.boundary_tags != INTERIOR

    def lumped_measures(self) -> np.ndarray:
        """Per-node measure: sum of adjacent cell measures weighted by 1/m."""
        m = self.cell_nodes.shape[1]
        lump = np.zeros(self.n_nodes)
        np.add.at(lump, self.cell_nodes,
                  np.repeat(self.cell_measures[:, None] / m, m, axis=1))
        return lump

    def coordinates(self) -> np.ndarray:
        """Node coordinates as an (N, d) array."""
        if self.kind == "radial":
            return self.nodes[:, None]
        return self.nodes


@dataclass(frozen=True)
class ScalarField:
    """Nodal values of a function on a mesh."""
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=float))
        if self.values.shape != (self.mesh.n_nodes,):
            raise MeshError("field length must equal node count")
        if not np.all(np.isfinite(self.values)):
            raise MeshError("field values must be finite")

    def cell_averages(self) -> np.ndarray:
        return self.values[self.mesh.cell_nodes].mean(axis=1)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.mesh, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorFieldOnCells:
    """One gradient vector per cell, evaluated at the cell midpoint."""
    mesh: Mesh
    vectors: np.ndarray  # (C, d)

    def __post_init__(self):
        if self.vectors.shape != (self.mesh.n_cells, self.mesh.dim):
            raise MeshError("one vector of mesh dimension per cell required")


@dataclass(frozen=True)
class LevelSet:
    """Crossings of a scalar field with a level t.

    Radial: `points` is an array of crossing radii.  tensor2d: `polylines`
    is a list of (m, 2) vertex arrays; `segments` the raw (S, 2, 2) segment
    endpoints with `segment_cells` the index of the cell each segment cuts.
    """
    level: float
    points: np.ndarray | None = None
    polylines: list | None = None
    segments: np.ndarray | None = None
    segment_cells: np.ndarray | None = None

    def total_length(self) -> float:
        if self.segments is None:
            raise MeshError("length only defined for tensor2d level sets")
        d = self.segments[:, 1, :] - self.segments[:, 0, :]
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


def build_radial_mesh(n_dim: int, r_min: float, r_max: float,
                      num_cells: int, grading: str = "uniform",
                      ratio: float | None = None) -> Mesh:
    """Radial mesh on [r_min, r_max] with measure omega_{n-1} r^{n-1} dr.

    grading "uniform" gives equal spacing; "geometric" gives node spacing
    growing by `ratio` per cell (log-uniform nodes when ratio is None).
    """
    if r_min <= 0 and n_dim >= 2:
        raise MeshError("r_min must be positive: the singularity at 0 is "
                        "never meshed")
    if r_min < 0:
        raise MeshError("r_min must be nonnegative")
    if r_min >= r_max:
        raise MeshError("r_min must be below r_max")
    if num_cells < 8:
        raise MeshError("num_cells must be at least 8")
    if grading == "uniform":
        r = np.linspace(r_min, r_max, num_cells + 1)
    elif grading == "geometric":
        if ratio is None:
            r = r_min * (r_max / r_min) ** (np.arange(num_cells + 1)
                                            / num_cells)
        else:
            if ratio <= 0:
                raise MeshError("geometric ratio must be positive")
            steps = ratio ** np.arange(num_cells)
            dr = (r_max - r_min) * steps / steps.sum()
            r = np.concatenate([[r_min], r_min + np.cumsum(dr)])
        r[-1] = r_max
    else:
        raise MeshError(f"unknown grading {grading!r}")

    tags = np.full(num_cells + 1, INTERIOR, dtype=int)
    tags[0] = INNER_BOUNDARY
    tags[-1] = OUTER_BOUNDARY

    dr = np.diff(r)
    r_mid = 0.5 * (r[:-1] + r[1:])
    measures = sphere_area(n_dim) * r_mid ** (n_dim - 1) * dr
    cells = np.column_stack([np.arange(num_cells),
                             np.arange(1, num_cells + 1)])
    grad = np.stack([-1.0 / dr, 1.0 / dr], axis=1)[:, :, None]
    return Mesh(kind="radial", n_dim=n_dim, nodes=r, boundary_tags=tags,
                cell_nodes=cells, cell_measures=measures, cell_grad=grad,
                cell_mid=r_mid[:, None])


def build_tensor_mesh(x_bounds, y_bounds, nx: int, ny: int,
                      hole=None) -> Mesh:
    """Tensor-product grid with nx*ny cells; `hole` is an optional
    (x0, x1, y0, y1) box whose interior nodes are removed and whose rim is
    tagged inner_boundary."""
    x0, x1 = map(float, x_bounds)
    y0, y1 = map(float, y_bounds)
    if not (x0 < x1 and y0 < y1):
        raise MeshError("degenerate bounds")
    if nx < 8 or ny < 8:
        raise MeshError("nx and ny must be at least 8")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    dx, dy = xs[1] - xs[0], ys[1] - ys[0]
    gx, gy = np.meshgrid(xs, ys, indexing="xy")  # shape (ny+1, nx+1)

    active = np.ones(gx.shape, bool)
    if hole is not None:
        hx0, hx1, hy0, hy1 = hole
        # strict interior with a float-fuzz guard so nodes landing exactly
        # on the hole boundary survive as the rim
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        active &= ~((gx > hx0 + tol) & (gx < hx1 - tol)
                    & (gy > hy0 + tol) & (gy < hy1 - tol))

    # cells are active iff all four corners are
    c_act = (active[:-1, :-1] & active[:-1, 1:]
             & active[1:, :-1] & active[1:, 1:])
    # drop nodes that belong to no active cell
    n_act = np.zeros_like(active)
    n_act[:-1, :-1] |= c_act
    n_act[:-1, 1:] |= c_act
    n_act[1:, :-1] |= c_act
    n_act[1:, 1:] |= c_act
    active = n_act

    node_id = -np.ones(active.shape, int)
    node_id[active] = np.arange(active.sum())
    nodes = np.column_stack([gx[active], gy[active]])

    tags = np.full(active.sum(), INTERIOR, dtype=int)
    edge = np.zeros(active.shape, bool)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    tags[node_id[active & edge]] = OUTER_BOUNDARY
    if hole is not None:
        # rim: active nodes adjacent to an inactive cell corner position
        iy, ix = np.where(active & ~edge)
        for j, i in zip(iy, ix):
            neigh = active[max(j - 1, 0):j + 2, max(i - 1, 0):i + 2]
            if not neigh.all():
                tags[node_id[j, i]] = INNER_BOUNDARY

    cy, cx = np.where(c_act)
    sw = node_id[cy, cx]
    se = node_id[cy, cx + 1]
    nw = node_id[cy + 1, cx]
    ne = node_id[cy + 1, cx + 1]
    cells = np.column_stack([sw, se, nw, ne])
    n_cells = cells.shape[0]
    measures = np.full(n_cells, dx * dy)
    grad = np.empty((n_cells, 4, 2))
    grad[:, :, 0] = np.array([-1, 1, -1, 1]) / (2 * dx)
    grad[:, :, 1] = np.array([-1, -1, 1, 1]) / (2 * dy)
    mid = np.column_stack([xs[cx] + dx / 2, ys[cy] + dy / 2])
    aux = {"xs": xs, "ys": ys, "node_id": node_id, "active": active,
           "cell_ij": np.column_stack([cx, cy])}
    return Mesh(kind="tensor2d", n_dim=2, nodes=nodes, boundary_tags=tags,
                cell_nodes=cells, cell_measures=measures, cell_grad=grad,
                cell_mid=mid, aux=aux)


def gradient(f: ScalarField) -> VectorFieldOnCells:
    """Per-cell midpoint gradient from the adjacent nodal values."""
    mesh = f.mesh
    vecs = np.einsum("cmd,cm->cd", mesh.cell_grad,
                     f.values[mesh.cell_nodes])
    return VectorFieldOnCells(mesh, vecs)


def nodal_gradient(f: ScalarField) -> np.ndarray:
    """Per-node gradient by central differences (one-sided at boundaries).

    Returns (N, d).  Used where a nodal closed-form expression such as
    |grad G|/G is wanted; cell gradients remain the quadrature workhorse.
    """
    mesh = f.mesh
    if mesh.kind == "radial":
        g = np.gradient(f.values, mesh.nodes)
        return g[:, None]
    node_id = mesh.aux["node_id"]
    xs, ys = mesh.aux["xs"], mesh.aux["ys"]
    grid = np.full(node_id.shape, np.nan)
    grid[node_id >= 0] = f.values[node_id[node_id >= 0]]
    out = np.zeros((mesh.n_nodes, 2))
    for comp, (axis, coords) in enumerate(((1, xs), (0, ys))):
        g = _masked_gradient(grid, coords, axis)
        out[:, comp] = g[node_id >= 0]
    return out


def _masked_gradient(grid: np.ndarray, coords: np.ndarray,
                     axis: int) -> np.ndarray:
    """np.gradient along one axis, falling back to one-sided differences
    next to NaN (hole) entries."""
    g = np.gradient(grid, coords, axis=axis)
    if not np.isnan(grid).any():
        return g
    arr = np.moveaxis(grid, axis, 0)
    gg = np.moveaxis(g, axis, 0)
    n = arr.shape[0]
    h = coords[1] - coords[0]
    for i in range(n):
        bad = np.isnan(gg[i]) & ~np.isnan(arr[i])
        if not bad.any():
            continue
        fwd = (i + 1 < n)
        bwd = (i - 1 >= 0)
        if fwd:
            ok = bad & ~np.isnan(arr[i + 1])
            gg[i][ok] = (arr[i + 1][ok] - arr[i][ok]) / h
            bad &= ~ok
        if bwd and bad.any():
            ok = bad & ~np.isnan(arr[i - 1])
            gg[i][ok] = (arr[i][ok] - arr[i - 1][ok]) / h
    return np.moveaxis(gg, 0, axis)


def integrate(cell_values: np.ndarray, mesh: Mesh) -> float:
    """Midpoint quadrature: sum of value * cell_measure."""
    cell_values = np.asarray(cell_values, dtype=float)
    if cell_values.shape != (mesh.n_cells,):
        raise MeshError("one value per cell required")
    return float(np.dot(cell_values, mesh.cell_measures))


def level_set(f: ScalarField, t: float) -> LevelSet:
    """Level-t crossings of the linear interpolant of f."""
    vmin, vmax = f.values.min(), f.values.max()
    if not (vmin < t < vmax):
        raise MeshError(f"level {t} outside field range ({vmin}, {vmax})")
    if f.mesh.kind == "radial":
        r = f.mesh.nodes
        v = f.values
        a, b = v[:-1], v[1:]
        cross = ((a - t) * (b - t) <= 0) & (a != b)
        idx = np.where(cross)[0]
        pts = r[idx] + (t - v[idx]) / (v[idx + 1] - v[idx]) * np.diff(r)[idx]
        return LevelSet(level=t, points=np.unique(pts))
    return _marching_squares(f, t)


_MS_EDGES = {  # case -> list of (edge_a, edge_b) segments; edges 0=S,1=E,2=N,3=W
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)],
    5: [(3, 0), (1, 2)], 6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)],
    9: [(0, 2)], 10: [(0, 1), (2, 3)], 11: [(1, 2)], 12: [(1, 3)],
    13: [(0, 1)], 14: [(3, 0)],
}


def _marching_squares(f: ScalarField, t: float) -> LevelSet:
    mesh = f.mesh
    node_id = mesh.aux["node_id"]
    xs, ys = mesh.aux["xs"], mesh.aux["ys"]
    grid = np.full(node_id.shape, np.nan)
    grid[node_id >= 0] = f.values[node_id[node_id >= 0]]

    segs, seg_cells = [], []
    cell_ij = mesh.aux["cell_ij"]
    for c, (i, j) in enumerate(cell_ij):
        vsw, vse = grid[j, i], grid[j, i + 1]
        vnw, vne = grid[j + 1, i], grid[j + 1, i + 1]
        case = int((vsw > t) + 2 * (vse > t) + 4 * (vne > t) + 8 * (vnw > t))
        if case in (0, 15):
            continue
        x0, x1 = xs[i], xs[i + 1]
        y0, y1 = ys[j], ys[j + 1]

        def edge_point(e):
            if e == 0:  # south
                s = (t - vsw) / (vse - vsw)
                return (x0 + s * (x1 - x0), y0)
            if e == 1:  # east
                s = (t - vse) / (vne - vse)
                return (x1, y0 + s * (y1 - y0))
            if e == 2:  # north
                s = (t - vnw) / (vne - vnw)
                return (x0 + s * (x1 - x0), y1)
            s = (t - vsw) / (vnw - vsw)  # west
            return (x0, y0 + s * (y1 - y0))

        for ea, eb in _MS_EDGES[case]:
            segs.append([edge_point(ea), edge_point(eb)])
            seg_cells.append(c)

    segments = np.asarray(segs)
    polylines = _chain_segments(segments) if len(segs) else []
    return LevelSet(level=t, polylines=polylines, segments=segments,
                    segment_cells=np.asarray(seg_cells, dtype=int))


def _chain_segments(segments: np.ndarray) -> list:
    """Join marching-squares segments into polylines by endpoint matching."""
    def key(pt):
        return (round(pt[0], 12), round(pt[1], 12))

    adj: dict = {}
    for s, (a, b) in enumerate(segments):
        adj.setdefault(key(a), []).append((s, 1))
        adj.setdefault(key(b), []).append((s, 0))
    used = np.zeros(len(segments), bool)
    polylines = []
    for s0 in range(len(segments)):
        if used[s0]:
            continue
        used[s0] = True
        line = [segments[s0, 0], segments[s0, 1]]
        # extend forward then backward
        for end, prepend in ((1, False), (0, True)):
            cur = key(line[-1] if not prepend else line[0])
            while True:
                nxt = [(s, e) for s, e in adj.get(cur, []) if not used[s]]
                if not nxt:
                    break
                s, e = nxt[0]
                used[s] = True
                pt = segments[s, e]
                if prepend:
                    line.insert(0, pt)
                else:
                    line.append(pt)
                cur = key(pt)
        polylines.append(np.asarray(line))
    return polylines


def exhaustion(mesh: Mesh, k: int, K: int) -> Mesh:
    """Nested sub-mesh Omega_k: inner bound shrinking to the full mesh's
    and outer bound growing to it as k -> K.  Omega_K is the full mesh and
    node sets are nested in k.  aux carries parent node/cell index maps."""
    if not (1 <= k <= K):
        raise MeshError("require 1 <= k <= K")
    if mesh.kind == "radial":
        r = mesh.nodes
        if k == K:
            lo_idx, hi_idx = 0, mesh.n_nodes - 1
        elif r[0] <= 0:  # flat interval: shrink by index margins
            n = mesh.n_nodes
            lo_idx = int(round((n // 4) * (1.0 - k / K)))
            hi_idx = n - 1 - int(round((n // 4) * (1.0 - k / K)))
        else:
            span = math.log(r[-1] / r[0])
            r_in = r[0] * math.exp(span * 0.3 * (1.0 - k / K))
            r_out = r[-1] * math.exp(-span * 0.3 * (1.0 - k / K))
            lo_idx = int(np.searchsorted(r, r_in, side="left"))
            hi_idx = int(np.searchsorted(r, r_out, side="right") - 1)
            hi_idx = max(hi_idx, lo_idx + 8)
        node_map = np.arange(lo_idx, hi_idx + 1)
        cell_map = np.arange(lo_idx, hi_idx)
        tags = np.full(len(node_map), INTERIOR, dtype=int)
        tags[0], tags[-1] = INNER_BOUNDARY, OUTER_BOUNDARY
        sub = Mesh(kind="radial", n_dim=mesh.n_dim, nodes=r[node_map],
                   boundary_tags=tags,
                   cell_nodes=mesh.cell_nodes[cell_map] - lo_idx,
                   cell_measures=mesh.cell_measures[cell_map],
                   cell_grad=mesh.cell_grad[cell_map],
                   cell_mid=mesh.cell_mid[cell_map],
                   aux={"parent_nodes": node_map, "parent_cells": cell_map})
        return sub
    # tensor2d: shrink an index margin from every outer side
    xs, ys = mesh.aux["xs"], mesh.aux["ys"]
    nmax = min(len(xs), len(ys)) // 4
    margin = int(round(nmax * (1.0 - k / K)))
    if margin == 0:
        sub = replace(mesh, aux=dict(mesh.aux))
        sub.aux["parent_nodes"] = np.arange(mesh.n_nodes)
        sub.aux["parent_cells"] = np.arange(mesh.n_cells)
        return sub
    cell_ij = mesh.aux["cell_ij"]
    nx, ny = len(xs) - 1, len(ys) - 1
    keep = ((cell_ij[:, 0] >= margin) & (cell_ij[:, 0] < nx - margin)
            & (cell_ij[:, 1] >= margin) & (cell_ij[:, 1] < ny - margin))
    cell_map = np.where(keep)[0]
    node_map = np.unique(mesh.cell_nodes[cell_map])
    renum = -np.ones(mesh.n_nodes, int)
    renum[node_map] = np.arange(len(node_map))
    cells = renum[mesh.cell_nodes[cell_map]]
    counts = np.zeros(len(node_map), int)
    np.add.at(counts, cells, 1)
    tags = mesh.boundary_tags[node_map].copy()
    tags[(counts < 4) & (tags == INTERIOR)] = OUTER_BOUNDARY
    node_id = -np.ones(mesh.aux["node_id"].shape, int)
    old_id = mesh.aux["node_id"]
    sel = np.isin(old_id, node_map) & (old_id >= 0)
    node_id[sel] = renum[old_id[sel]]
    aux = {"xs": xs, "ys": ys, "node_id": node_id,
           "active": node_id >= 0, "cell_ij": cell_ij[cell_map],
           "parent_nodes": node_map, "parent_cells": cell_map}
    return Mesh(kind="tensor2d", n_dim=mesh.n_dim, nodes=mesh.nodes[node_map],
                boundary_tags=tags, cell_nodes=cells,
                cell_measures=mesh.cell_measures[cell_map],
                cell_grad=mesh.cell_grad[cell_map],
                cell_mid=mesh.cell_mid[cell_map], aux=aux)
