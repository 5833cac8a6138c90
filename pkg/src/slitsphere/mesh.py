"""Symmetric latitude-ring triangulations of the sphere with slit dofs.

The geometric mesh depends only on the ring count ``n``: latitude rings
sit at colatitudes ``k pi / n`` and ring ``k`` holds ``6 m_k`` nodes with
``m_k = max(1, round(n sin(k pi / n) / 3))``.  One lune of azimuthal width
pi/3 (between C1 and the mid-meridian of the neighbouring sector) is
triangulated and copied onto the other five by alternate reflections, so
the mesh is invariant under the rotation R and the reflection sigma and no
edge crosses a cut circle.

Degrees of freedom are attached to (vertex, wedge) pairs, where the wedges
of a vertex are the groups of incident triangles that remain connected
once the cut edges are removed:

=====================  ==========================
vertex                 dofs
=====================  ==========================
off the cuts           1
interior of an arc     2 (one per side)
arc tip                1
north pole, 3 arcs     3 (one per sector)
north pole, 2 arcs     2
north pole, 1 arc      1 (free end of the cut)
south pole, arc = pi   1
=====================  ==========================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import (ARC_AZIMUTHS, REFLECTION, ROTATION, CutSpec, arc_frame,
                       geodesic_distance, sphere_point)

# lunes 0,1 lie in the sector between C1 and C2, 2,3 between C2 and C3, ...
LUNE_SECTOR = (-1, -1, 0, 0, 1, 1)


def ring_counts(n: int) -> np.ndarray:
    """Nodes per lune on each ring; entries 0 and n (the poles) are 0."""
    k = np.arange(n + 1)
    m = np.maximum(1, np.rint(n * np.sin(k * np.pi / n) / 3.0)).astype(int)
    m[0] = m[n] = 0
    return m


def admissible_deltas(n: int) -> np.ndarray:
    """Interior arc lengths ``k pi / n`` (k = 1..n-1) that land on a ring.

    The degenerate values 0 (no arc) and pi (full meridian) are also
    accepted by :func:`build_symmetric_mesh` but are not listed here.
    """
    if n < 4:
        raise ValueError("need at least 4 rings")
    return np.arange(1, n) * np.pi / n


DEGENERATE_DELTAS = (0.0, math.pi)


def ring_index(delta: float, n: int, tol: float = 1e-9) -> int:
    k = delta * n / math.pi
    kr = int(round(k))
    if abs(k - kr) > tol or not (0 <= kr <= n):
        raise ValueError(f"arc length {delta!r} is not admissible for n={n}")
    return kr


def snap_delta(delta: float, n: int, tol: float = 1e-4) -> float:
    """Replace ``delta`` by the ring latitude ``k pi / n`` it approximates."""
    k = int(round(delta * n / math.pi))
    snapped = k * math.pi / n
    if abs(snapped - delta) > tol or not (0 <= k <= n):
        raise ValueError(f"arc length {delta!r} is not within {tol} of a ring latitude for n={n}")
    return snapped


def _strip(a, b):
    """Triangles between two ring segments with node lists ``a`` and ``b``."""
    ma, mb = len(a) - 1, len(b) - 1
    i = j = 0
    tris = []
    while i < ma or j < mb:
        if j == mb or (i < ma and (i + 1) * mb <= (j + 1) * ma):
            tris.append((a[i], a[i + 1], b[j]))
            i += 1
        else:
            tris.append((a[i], b[j + 1], b[j]))
            j += 1
    return tris


@dataclass(frozen=True, eq=False)
class SphereMesh:
    """Cut-independent geometric triangulation for a given ring count."""

    n: int
    m: np.ndarray
    vertices: np.ndarray
    ring: np.ndarray
    gidx: np.ndarray
    triangles: np.ndarray
    lune: np.ndarray
    sigma_vertex: np.ndarray
    rot_vertex: np.ndarray
    sigma_tri: np.ndarray
    rot_tri: np.ndarray
    edges: np.ndarray
    edge_tris: np.ndarray  # (E, 2) adjacent triangles
    _offsets: np.ndarray = field(repr=False)

    @property
    def sector(self) -> np.ndarray:
        return np.asarray(LUNE_SECTOR)[self.lune]

    def vid(self, k: int, g: int) -> int:
        if k == 0:
            return 0
        if k == self.n:
            return len(self.vertices) - 1
        return int(self._offsets[k] + g % (6 * self.m[k]))

    def meridian_vertex(self, k: int, arc: int) -> int:
        return self.vid(k, 2 * arc * (self.m[k] if 0 < k < self.n else 0))

    @property
    def h(self) -> float:
        v = self.vertices
        return float(np.max(geodesic_distance(v[self.edges[:, 0]], v[self.edges[:, 1]])))

    def edge_index(self, u: int, v: int) -> int:
        key = (min(u, v), max(u, v))
        return self._edge_lookup()[key]

    @lru_cache(maxsize=None)
    def _edge_lookup(self) -> dict:
        return {(int(a), int(b)): e for e, (a, b) in enumerate(self.edges)}


@lru_cache(maxsize=16)
def sphere_mesh(n: int) -> SphereMesh:
    if n < 4:
        raise ValueError("need at least 4 rings")
    m = ring_counts(n)
    offsets = np.zeros(n + 1, dtype=int)
    count = 1
    for k in range(1, n):
        offsets[k] = count
        count += 6 * m[k]
    nv = count + 1
    verts = np.zeros((nv, 3))
    ring = np.zeros(nv, dtype=int)
    gidx = np.zeros(nv, dtype=int)
    verts[0] = (0.0, 0.0, 1.0)
    verts[-1] = (0.0, 0.0, -1.0)
    ring[-1] = n
    for k in range(1, n):
        g = np.arange(6 * m[k])
        az = -np.pi / 2 + g * np.pi / (3 * m[k])
        sl = slice(offsets[k], offsets[k] + 6 * m[k])
        verts[sl] = sphere_point(np.full(g.shape, k * np.pi / n), az)
        ring[sl] = k
        gidx[sl] = g

    # lune-local triangulation in (ring, j) coordinates, j = 0..m_k
    local = []
    cap = [(1, j) for j in range(m[1] + 1)]
    for j in range(m[1]):
        local.append(((0, 0), cap[j], cap[j + 1]))
    for k in range(1, n - 1):
        a = [(k, j) for j in range(m[k] + 1)]
        b = [(k + 1, j) for j in range(m[k + 1] + 1)]
        local.extend(_strip(a, b))
    last = [(n - 1, j) for j in range(m[n - 1] + 1)]
    for j in range(m[n - 1]):
        local.append((last[j + 1], last[j], (n, 0)))

    def to_global(k, j, lune):
        if k in (0, n):
            return 0 if k == 0 else nv - 1
        mk = m[k]
        g = lune * mk + j if lune % 2 == 0 else (lune + 1) * mk - j
        return int(offsets[k] + g % (6 * mk))

    tris = []
    lunes = []
    for lune in range(6):
        for tri in local:
            tris.append([to_global(k, j, lune) for (k, j) in tri])
            lunes.append(lune)
    tris = np.asarray(tris, dtype=np.int64)
    lunes = np.asarray(lunes, dtype=np.int64)
    p = verts[tris]
    orient = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.sum(axis=1))
    flip = orient < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    # vertex permutations (combinatorial, checked against coordinates in tests)
    sig_v = np.zeros(nv, dtype=np.int64)
    rot_v = np.zeros(nv, dtype=np.int64)
    sig_v[-1] = rot_v[-1] = nv - 1
    for k in range(1, n):
        mk = 6 * m[k]
        g = np.arange(mk)
        sig_v[offsets[k] + g] = offsets[k] + (mk - g) % mk
        rot_v[offsets[k] + g] = offsets[k] + (g + 2 * m[k]) % mk

    key = {tuple(sorted(t)): i for i, t in enumerate(tris.tolist())}

    def tri_perm(vperm):
        out = np.empty(len(tris), dtype=np.int64)
        for i, t in enumerate(vperm[tris].tolist()):
            out[i] = key[tuple(sorted(t))]
        return out

    sig_t = tri_perm(sig_v)
    rot_t = tri_perm(rot_v)

    # edges and their adjacent triangles
    e_all = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    owner = np.tile(np.arange(len(tris)), 3)
    e_sorted = np.sort(e_all, axis=1)
    edges, inv = np.unique(e_sorted, axis=0, return_inverse=True)
    inv = inv.ravel()
    edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
    order = np.argsort(inv, kind="stable")
    edge_tris[inv[order[0::2]], 0] = owner[order[0::2]]
    edge_tris[inv[order[1::2]], 1] = owner[order[1::2]]

    return SphereMesh(n, m, verts, ring, gidx, tris, lunes, sig_v, rot_v, sig_t, rot_t,
                      edges, edge_tris, offsets)


# ---------------------------------------------------------------------------
# slit dofs


@dataclass(frozen=True)
class Chain:
    """Meridian nodes of one arc, ordered from the north pole to the tip."""

    arc: int
    vertices: np.ndarray      # K+1 geometric vertices
    plus: np.ndarray          # K dofs on the theta -> 0+ side (nodes 0..K-1)
    minus: np.ndarray         # K dofs on the theta -> 2pi- side
    tip_dof: int
    radii: np.ndarray         # geodesic distance of each node to the tip

    @property
    def K(self) -> int:
        return len(self.vertices) - 1


@dataclass(frozen=True, eq=False)
class SlitMesh:
    geom: SphereMesh
    spec: CutSpec
    tri_dofs: np.ndarray
    dof_vertex: np.ndarray
    dof_sector: np.ndarray
    cut_edges: np.ndarray
    chains: Tuple[Optional[Chain], ...]
    sigma_dof: Optional[np.ndarray]
    rot_dof: Optional[np.ndarray]

    @property
    def n(self) -> int:
        return self.geom.n

    @property
    def h(self) -> float:
        return self.geom.h

    @property
    def vertices(self) -> np.ndarray:
        return self.geom.vertices

    @property
    def triangles(self) -> np.ndarray:
        return self.geom.triangles

    @property
    def n_vertices(self) -> int:
        return len(self.geom.vertices)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_vertex)


def _cut_edge_mask(geom: SphereMesh, spec: CutSpec) -> np.ndarray:
    mask = np.zeros(len(geom.edges), dtype=bool)
    for arc in range(3):
        K = ring_index(spec.delta[arc], geom.n)
        for k in range(K):
            e = geom.edge_index(geom.meridian_vertex(k, arc), geom.meridian_vertex(k + 1, arc))
            mask[e] = True
    return mask


def _corner_of(tris: np.ndarray, t: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.argmax(tris[t] == v[:, None], axis=1)


def _corner_dofs(geom: SphereMesh, cut: np.ndarray) -> np.ndarray:
    """Union triangle corners across non-cut edges; returns (T, 3) dof ids."""
    tris = geom.triangles
    nt = len(tris)
    interior = np.nonzero((~cut) & (geom.edge_tris[:, 1] >= 0))[0]
    t0, t1 = geom.edge_tris[interior, 0], geom.edge_tris[interior, 1]
    rows, cols = [], []
    for end in (0, 1):
        v = geom.edges[interior, end]
        rows.append(3 * t0 + _corner_of(tris, t0, v))
        cols.append(3 * t1 + _corner_of(tris, t1, v))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(3 * nt, 3 * nt))
    _, labels = connected_components(graph, directed=False)
    # canonical numbering: by vertex, then by smallest incident triangle
    order = np.lexsort((np.repeat(np.arange(nt), 3), tris.ravel()))
    _, first = np.unique(labels[order], return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[labels].reshape(nt, 3)


def _map_dofs(geom: SphereMesh, tri_dofs: np.ndarray, vperm, tperm, ndof) -> Optional[np.ndarray]:
    """dof permutation induced by a symmetry, or None if cuts are not invariant."""
    tris = geom.triangles
    nt = len(tris)
    t = np.repeat(np.arange(nt), 3)
    timg = tperm[t]
    c_img = _corner_of(tris, timg, vperm[tris.ravel()])
    src = tri_dofs.ravel()
    dst = tri_dofs[timg, c_img]
    perm = np.full(ndof, -1, dtype=np.int64)
    perm[src] = dst
    if np.any(perm[src] != dst) or np.any(perm < 0) or len(np.unique(perm)) != ndof:
        return None
    return perm


def build_symmetric_mesh(n: int, spec: CutSpec) -> SlitMesh:
    """Triangulate the sphere with ``n`` rings and duplicate dofs along the arcs."""
    geom = sphere_mesh(n)
    for d in spec.delta:
        ring_index(d, n)
    cut = _cut_edge_mask(geom, spec)
    tri_dofs = _corner_dofs(geom, cut)
    ndof = int(tri_dofs.max()) + 1
    dof_vertex = np.zeros(ndof, dtype=np.int64)
    dof_sector = np.zeros(ndof, dtype=np.int64)
    sector = geom.sector
    dof_vertex[tri_dofs.ravel()] = geom.triangles.ravel()
    dof_sector[tri_dofs.ravel()] = np.repeat(sector, 3)

    chains: List[Optional[Chain]] = []
    for arc in range(3):
        K = ring_index(spec.delta[arc], n)
        if K == 0:
            chains.append(None)
            continue
        frame = arc_frame(arc, spec.delta[arc])
        verts = np.array([geom.meridian_vertex(k, arc) for k in range(K + 1)])
        plus = np.zeros(K, dtype=np.int64)
        minus = np.zeros(K, dtype=np.int64)
        for k in range(K):
            e = geom.edge_index(verts[k], verts[k + 1])
            for t in geom.edge_tris[e]:
                c = geom.vertices[geom.triangles[t]].mean(axis=0)
                _, theta = frame.polar(c / np.linalg.norm(c))
                corner = int(np.nonzero(geom.triangles[t] == verts[k])[0][0])
                if theta < np.pi:
                    plus[k] = tri_dofs[t, corner]
                else:
                    minus[k] = tri_dofs[t, corner]
        tip_dofs = np.unique(tri_dofs[geom.triangles == verts[K]])
        radii = geodesic_distance(geom.vertices[verts], frame.tip)
        chains.append(Chain(arc, verts, plus, minus, int(tip_dofs[0]), radii))

    sigma_dof = rot_dof = None
    if spec.mirror_symmetric:
        sigma_dof = _map_dofs(geom, tri_dofs, geom.sigma_vertex, geom.sigma_tri, ndof)
    if spec.rotation_symmetric:
        rot_dof = _map_dofs(geom, tri_dofs, geom.rot_vertex, geom.rot_tri, ndof)
    return SlitMesh(geom, spec, tri_dofs, dof_vertex, dof_sector, np.nonzero(cut)[0],
                    tuple(chains), sigma_dof, rot_dof)


# ---------------------------------------------------------------------------
# diagnostics and export


def triangle_quality(points: np.ndarray) -> np.ndarray:
    """Normalized ratio 2 r_in / r_circ of the chordal triangles (1 = equilateral)."""
    a = np.linalg.norm(points[:, 1] - points[:, 2], axis=1)
    b = np.linalg.norm(points[:, 2] - points[:, 0], axis=1)
    c = np.linalg.norm(points[:, 0] - points[:, 1], axis=1)
    s = 0.5 * (a + b + c)
    area = np.sqrt(np.maximum(s * (s - a) * (s - b) * (s - c), 0.0))
    r_in = area / s
    r_circ = a * b * c / (4 * area)
    return 2 * r_in / r_circ


@dataclass
class MeshReport:
    n_vertices: int
    n_triangles: int
    n_edges: int
    n_dofs: int
    euler: int
    duplicated: int
    quality_min: float
    quality_max: float
    edge_ratio: float
    h: float
    violations: List[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def _sector_span(sector: int) -> Tuple[float, float]:
    lo = ARC_AZIMUTHS[(sector + 1) % 3]
    return lo, lo + 2 * np.pi / 3


def validate_mesh(mesh: SlitMesh, triangles: Optional[np.ndarray] = None,
                  min_quality: float = 0.3) -> MeshReport:
    """Itemized checks of a slit mesh; never raises on a bad mesh."""
    geom = mesh.geom
    tris = geom.triangles if triangles is None else np.asarray(triangles)
    verts = geom.vertices
    violations: List[str] = []

    e = np.unique(np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1), axis=0)
    euler = len(verts) - len(e) + len(tris)
    if euler != 2:
        violations.append(f"Euler characteristic {euler} != 2")

    # each triangle inside the closure of one sector
    az = np.arctan2(verts[:, 1], verts[:, 0])
    polar = np.abs(verts[:, 2]) > 1 - 1e-12
    bad = []
    for t, tri in enumerate(tris):
        inside_any = False
        for sector in (-1, 0, 1):
            lo, _ = _sector_span(sector)
            ok = True
            for v in tri:
                if polar[v]:
                    continue
                rel = (az[v] - lo) % (2 * np.pi)
                if rel > 2 * np.pi - 1e-9:
                    rel = 0.0
                if rel > 2 * np.pi / 3 + 1e-9:
                    ok = False
                    break
            if ok:
                inside_any = True
                break
        if not inside_any:
            bad.append(t)
    if bad:
        violations.append(f"{len(bad)} triangle(s) cross a cut circle, first {bad[0]}")

    # symmetry closure
    key = {tuple(sorted(t)) for t in tris.tolist()}
    for name, vp in (("R", geom.rot_vertex), ("sigma", geom.sigma_vertex)):
        for P, label in ((ROTATION, "R"), (REFLECTION, "sigma")):
            if label != name:
                continue
            if not np.allclose(verts[vp], verts @ P.T, atol=1e-12):
                violations.append(f"{name} vertex table does not match coordinates")
        missing = sum(tuple(sorted(t)) not in key for t in vp[tris].tolist())
        if missing:
            violations.append(f"{name} maps {missing} triangle(s) outside the mesh")
    if mesh.spec.mirror_symmetric and mesh.sigma_dof is None:
        violations.append("sigma does not induce a dof permutation")

    q = triangle_quality(verts[tris])
    if q.min() < min_quality:
        violations.append(f"minimum quality {q.min():.3f} < {min_quality}")
    lengths = geodesic_distance(verts[e[:, 0]], verts[e[:, 1]])
    duplicated = mesh.n_dofs - len(verts)
    if any(mesh.spec.present) and duplicated <= 0:
        violations.append("slit mesh has no duplicated dofs")
    return MeshReport(len(verts), len(tris), len(e), mesh.n_dofs, euler, duplicated,
                      float(q.min()), float(q.max()), float(lengths.max() / lengths.min()),
                      float(lengths.max()), violations)


def tip_star(mesh: SlitMesh, vertex: int) -> np.ndarray:
    """Sorted side lengths of every triangle incident to ``vertex``."""
    geom = mesh.geom
    tris = geom.triangles[np.any(geom.triangles == vertex, axis=1)]
    p = geom.vertices[tris]
    sides = np.stack([np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
                      np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
                      np.linalg.norm(p[:, 0] - p[:, 1], axis=1)], axis=1)
    sides.sort(axis=1)
    return sides[np.lexsort(sides.T[::-1])]


def write_off(mesh: SlitMesh, path) -> None:
    """OFF text export; the dof table goes into a leading comment block."""
    geom = mesh.geom
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"# n={mesh.n} delta={','.join(repr(d) for d in mesh.spec.delta)}\n")
        fh.write("# dof vertex sector\n")
        for d, (v, s) in enumerate(zip(mesh.dof_vertex, mesh.dof_sector)):
            fh.write(f"# {d} {v} {s}\n")
        fh.write(f"{len(geom.vertices)} {len(geom.triangles)} 0\n")
        for x, y, z in geom.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in geom.triangles:
            fh.write(f"3 {a} {b} {c}\n")
