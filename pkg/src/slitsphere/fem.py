"""P1 finite elements on the radially projected polyhedron.

A basis function is linear on a flat chordal triangle and is transported
to the sphere by the radial projection ``X -> X/|X|``.  Element integrals
are evaluated on the flat triangle with the exact projection Jacobian
``d / |X|^3`` (``d`` the distance of the face plane to the origin) and the
surface gradient of the degree-0 homogeneous extension of the flat basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.io import mmwrite
from scipy.sparse import bmat, coo_matrix, csr_matrix, diags

from .geometry import SIDE_MINUS, SIDE_PLUS, SingularTip, geodesic_distance
from .mesh import SlitMesh, SphereMesh
from .singular import SingularFunction


class DegenerateElement(ValueError):
    pass


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle (area 1/2)."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 0.5) > 1e-14:
            raise ValueError("weights must be positive and sum to the reference area")


def _sym7() -> QuadratureRule:
    s15 = math.sqrt(15.0)
    a, b = (6 - s15) / 21, (6 + s15) / 21
    wa, wb = (155 - s15) / 1200, (155 + s15) / 1200
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9 / 40]
    for c, w in ((a, wa), (b, wb)):
        for k in range(3):
            p = [c, c, c]
            p[k] = 1 - 2 * c
            pts.append(tuple(p))
            wts.append(w)
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), 5)


def _mid3() -> QuadratureRule:
    pts = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    return QuadratureRule(pts, np.full(3, 1 / 6), 2)


def quadrature_rule(order: int = 5) -> QuadratureRule:
    """Symmetric rule exact for polynomials up to ``order`` (2 or 5)."""
    if order <= 2:
        return _mid3()
    if order <= 5:
        return _sym7()
    raise ValueError("rules up to order 5 are available")


# ---------------------------------------------------------------------------
# element kernels


def _face_data(P: np.ndarray):
    """Unit normal, plane offset and flat area of chordal triangles ``P`` (T,3,3)."""
    cr = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    area2 = np.linalg.norm(cr, axis=1)
    if np.any(0.5 * area2 < 1e-14):
        raise DegenerateElement("triangle with area below 1e-14")
    nrm = cr / area2[:, None]
    d = np.einsum("ij,ij->i", nrm, P[:, 0])
    return nrm, d, 0.5 * area2


def _flat_gradients(P: np.ndarray, nrm: np.ndarray, area: np.ndarray) -> np.ndarray:
    """Gradients (T,3,3) of the three barycentric functions in the face plane."""
    g = np.empty_like(P)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        g[:, a] = np.cross(nrm, P[:, c] - P[:, b]) / (2 * area[:, None])
    return g


def surface_gradient(g: np.ndarray, y: np.ndarray, nrm: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Tangential gradient at sphere point ``y`` of a flat-linear function with gradient ``g``.

    The pulled-back function is ``x -> phi(d x / (x.n))``; its gradient is
    ``d [g/(y.n) - n (g.y)/(y.n)^2]``.
    """
    yn = np.sum(y * nrm, axis=-1)[..., None]
    gy = np.sum(g * y, axis=-1)[..., None]
    return d[..., None] * (g / yn - nrm * gy / yn ** 2)


def element_points(P, nrm, d, area, bary, weights):
    """Sphere points (T,Q,3) and weights (T,Q) for barycentric rule nodes."""
    X = np.einsum("qa,tai->tqi", bary, P)
    rx = np.linalg.norm(X, axis=-1)
    jac = d[:, None] / rx ** 3
    w = 2.0 * area[:, None] * weights[None, :] * jac
    return X / rx[..., None], w


@lru_cache(maxsize=8)
def _local_matrices(n: int, order: int = 5):
    from .mesh import sphere_mesh

    geom = sphere_mesh(n)
    return local_matrices(geom, quadrature_rule(order))


def local_matrices(geom: SphereMesh, quad: QuadratureRule):
    """Element stiffness and mass matrices (T,3,3), independent of the cuts."""
    P = geom.vertices[geom.triangles]
    nrm, d, area = _face_data(P)
    g = _flat_gradients(P, nrm, area)
    y, w = element_points(P, nrm, d, area, quad.points, quad.weights)
    # grads (T,Q,3 basis,3)
    G = surface_gradient(g[:, None, :, :], y[:, :, None, :], nrm[:, None, None, :], d[:, None, None])
    Kl = np.einsum("tq,tqai,tqbi->tab", w, G, G)
    Ml = np.einsum("tq,qa,qb->tab", w, quad.points, quad.points)
    return Kl, Ml


def _scatter(tri_dofs: np.ndarray, local: np.ndarray, ndof: int) -> csr_matrix:
    rows = np.repeat(tri_dofs, 3, axis=1).ravel()
    cols = np.tile(tri_dofs, (1, 3)).ravel()
    return coo_matrix((local.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()


def assemble_fe_blocks(mesh: SlitMesh, quad: Optional[QuadratureRule] = None):
    """FE stiffness and mass over the slit dof space."""
    if quad is None:
        Kl, Ml = _local_matrices(mesh.n, 5)
    else:
        if quad.order < 2:
            raise ValueError("quadrature order must be at least 2")
        Kl, Ml = local_matrices(mesh.geom, quad)
    K = _scatter(mesh.tri_dofs, Kl, mesh.n_dofs)
    M = _scatter(mesh.tri_dofs, Ml, mesh.n_dofs)
    return K, M


# ---------------------------------------------------------------------------
# enrichment


@dataclass
class SupportQuadrature:
    """Quadrature points covering the support of one singular function."""

    tri: np.ndarray      # (Q,) element of each point
    bary: np.ndarray     # (Q,3) element barycentric coordinates
    points: np.ndarray   # (Q,3) points on the sphere
    weights: np.ndarray  # (Q,) spherical area weights
    n_leaves: int
    annulus_elements: int


def _split(B: np.ndarray, tipc: np.ndarray):
    m01 = 0.5 * (B[:, 0] + B[:, 1])
    m12 = 0.5 * (B[:, 1] + B[:, 2])
    m20 = 0.5 * (B[:, 2] + B[:, 0])
    kids = [np.stack([B[:, 0], m01, m20], 1), np.stack([m01, B[:, 1], m12], 1),
            np.stack([m20, m12, B[:, 2]], 1), np.stack([m01, m12, m20], 1)]
    tips = [np.where(tipc == k, k, -1) for k in range(3)] + [np.full_like(tipc, -1)]
    return kids, tips


def support_quadrature(geom: SphereMesh, tip: SingularTip, quad: QuadratureRule,
                       tip_levels: int = 12, annulus_res: int = 32, max_levels: int = 6) -> SupportQuadrature:
    """Adaptive element quadrature over ``{r < rho}`` around ``tip``.

    Sub-triangles close to the tip (closer than twice their size) are split
    ``tip_levels`` times, and those meeting the cutoff annulus are split
    until their size is at most ``rho / annulus_res``.
    """
    rho = tip.rho
    V = geom.vertices
    tris = geom.triangles
    dist = geodesic_distance(V, tip.frame.tip)
    P_all = V[tris]
    nrm_all, d_all, area_all = _face_data(P_all)
    side = geodesic_distance(P_all, np.roll(P_all, 1, axis=1)).max(axis=1)
    dmin = dist[tris].min(axis=1)
    cand = np.nonzero(dmin - side < rho)[0]
    tipv = int(np.argmin(dist))
    if dist[tipv] > 1e-12:
        raise ValueError("tip is not a mesh vertex")

    elem = cand
    B = np.broadcast_to(np.eye(3), (len(cand), 3, 3)).copy()
    tipc = np.where(np.any(tris[cand] == tipv, axis=1), np.argmax(tris[cand] == tipv, axis=1), -1)
    leaves_e, leaves_B = [], []
    n_annulus = 0
    level = 0
    while len(elem):
        X = np.einsum("lab,lbi->lai", B, P_all[elem])
        Y = X / np.linalg.norm(X, axis=-1, keepdims=True)
        r = geodesic_distance(Y, tip.frame.tip)
        diam = geodesic_distance(Y, np.roll(Y, 1, axis=1)).max(axis=1)
        rlo = np.maximum(r.min(axis=1) - diam, 0.0)
        rhi = r.max(axis=1) + diam
        keep = rlo < rho
        near = (r.min(axis=1) < 2.0 * diam) & (level < tip_levels)
        annulus = (rhi > 0.5 * rho) & (rlo < rho)
        if level == 0:
            n_annulus = int(np.count_nonzero(annulus & keep))
        ann_split = annulus & (diam > rho / annulus_res) & (level < max_levels)
        split = keep & (near | ann_split)
        leaf = keep & ~split
        leaves_e.append(elem[leaf])
        leaves_B.append(B[leaf])
        if not np.any(split):
            break
        kids, ktips = _split(B[split], tipc[split])
        elem = np.concatenate([elem[split]] * 4)
        B = np.concatenate(kids)
        tipc = np.concatenate(ktips)
        level += 1

    le = np.concatenate(leaves_e)
    lB = np.concatenate(leaves_B)
    # rule nodes in element barycentrics
    bary = np.einsum("qa,lab->lqb", quad.points, lB)
    P = P_all[le]
    X = np.einsum("lqa,lai->lqi", bary, P)
    rx = np.linalg.norm(X, axis=-1)
    sub_area = area_all[le] * np.abs(np.linalg.det(lB))
    w = 2.0 * sub_area[:, None] * quad.weights[None, :] * d_all[le][:, None] / rx ** 3
    Q = bary.shape[1]
    return SupportQuadrature(np.repeat(le, Q), bary.reshape(-1, 3), (X / rx[..., None]).reshape(-1, 3),
                             w.ravel(), len(le), n_annulus)


def coupling_by_gradient(mesh: SlitMesh, tip: SingularTip, quad: Optional[QuadratureRule] = None,
                         tip_levels: int = 12, annulus_res: int = 32) -> np.ndarray:
    """``int grad s . grad phi_j`` by direct element quadrature (check of the -Lap route)."""
    quad = quad or quadrature_rule(5)
    geom = mesh.geom
    sq = support_quadrature(geom, tip, quad, tip_levels, annulus_res)
    P = geom.vertices[geom.triangles[sq.tri]]
    nrm, d, area = _face_data(P)
    g = _flat_gradients(P, nrm, area)
    G = surface_gradient(g, sq.points[:, None, :], nrm[:, None, :], d[:, None])
    gs = SingularFunction(tip).grad(sq.points)
    vals = sq.weights[:, None] * np.einsum("qai,qi->qa", G, gs)
    return np.bincount(mesh.tri_dofs[sq.tri].ravel(), vals.ravel(), minlength=mesh.n_dofs)


@dataclass
class EnrichmentBlocks:
    coupling_K: np.ndarray      # (ntips, nfe)
    coupling_M: np.ndarray
    diag_K: np.ndarray          # (ntips,)
    diag_M: np.ndarray
    integral: np.ndarray        # int s_i, 1D
    dual_load: np.ndarray       # (ntips, nfe): int Lap(S_i) phi_j
    dual_pair: np.ndarray       # (ntips, nfe): int S_i phi_j
    dual_load_self: np.ndarray  # int Lap(S_i) s_i
    dual_pair_self: np.ndarray  # int S_i s_i
    diagnostics: Dict[str, float] = field(default_factory=dict)


def assemble_enrichment(mesh: SlitMesh, tips: Sequence[SingularTip], quad: Optional[QuadratureRule] = None,
                        tip_levels: int = 12, annulus_res: int = 32) -> EnrichmentBlocks:
    """Coupling rows between singular functions and FE basis functions."""
    quad = quad or quadrature_rule(5)
    nfe = mesh.n_dofs
    nt = len(tips)
    out = {k: np.zeros((nt, nfe)) for k in ("K", "M", "L", "P")}
    dK, dM, integ, lself, pself = (np.zeros(nt) for _ in range(5))
    diag: Dict[str, float] = {}
    for i, tip in enumerate(tips):
        s = SingularFunction(tip)
        S = s.dual()
        sq = support_quadrature(mesh.geom, tip, quad, tip_levels, annulus_res)
        if sq.annulus_elements < 4:
            warnings.warn(f"cutoff annulus of tip {tip.label} meets only {sq.annulus_elements} elements",
                          stacklevel=2)
        r, theta = tip.frame.polar(sq.points)
        lap_s = s.laplacian_polar(r, theta)
        val_s = s.value_polar(r, theta)
        lap_S = S.laplacian_polar(r, theta)
        val_S = S.value_polar(r, theta)
        dofs = mesh.tri_dofs[sq.tri]  # (Q,3)
        for key, vals in (("K", -lap_s), ("M", val_s), ("L", lap_S), ("P", val_S)):
            contrib = (sq.weights * vals)[:, None] * sq.bary
            out[key][i] = np.bincount(dofs.ravel(), contrib.ravel(), minlength=nfe)
        dK[i] = s.energy()
        dM[i] = s.mass()
        integ[i] = s.integral()
        lself[i] = S.pair(s, laplacian=True)
        pself[i] = S.pair(s)
        g_r, g_t = s.grad_polar(r, theta)
        diag[f"energy2d_{tip.label}"] = float(np.sum(sq.weights * (g_r ** 2 + g_t ** 2)))
        diag[f"integral2d_{tip.label}"] = float(np.sum(sq.weights * val_s))
        diag[f"mass2d_{tip.label}"] = float(np.sum(sq.weights * val_s ** 2))
        diag[f"quad_points_{tip.label}"] = float(len(sq.weights))
    return EnrichmentBlocks(out["K"], out["M"], dK, dM, integ, out["L"], out["P"], lself, pself, diag)


@dataclass(eq=False)
class EnrichedSystem:
    """Stiffness/mass over FE dofs followed by one dof per singular function."""

    mesh: SlitMesh
    tips: Tuple[SingularTip, ...]
    K: csr_matrix
    M: csr_matrix
    n_fe: int
    dual_load: np.ndarray   # (ntips, N)
    dual_pair: np.ndarray   # (ntips, N)
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(t.label for t in self.tips)

    @property
    def constant_vector(self) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[: self.n_fe] = 1.0
        return u

    @property
    def mean_weights(self) -> np.ndarray:
        return self.M @ self.constant_vector

    def fe_part(self, v: np.ndarray) -> np.ndarray:
        return v[: self.n_fe]


def assemble_system(mesh: SlitMesh, enrich: bool = True, quad: Optional[QuadratureRule] = None,
                    tips: Optional[Sequence[SingularTip]] = None, **kw) -> EnrichedSystem:
    """Full system; with ``enrich=False`` only the FE blocks are kept."""
    K_fe, M_fe = assemble_fe_blocks(mesh, quad)
    nfe = mesh.n_dofs
    if not enrich:
        return EnrichedSystem(mesh, (), K_fe, M_fe, nfe, np.zeros((0, nfe)), np.zeros((0, nfe)), {})
    tips = tuple(mesh.spec.tips if tips is None else tips)
    eb = assemble_enrichment(mesh, tips, quad, **kw)
    m = np.asarray(M_fe.sum(axis=1)).ravel()
    diag = dict(eb.diagnostics)
    cK = eb.coupling_K.copy()
    for i, t in enumerate(tips):
        # constants must stay in the kernel: remove the quadrature defect
        defect = cK[i].sum()
        cK[i] -= defect * m / m.sum()
        diag[f"kernel_defect_{t.label}"] = float(defect)
        diag[f"dual_load_sum_{t.label}"] = float(eb.dual_load[i].sum())
    nt = len(tips)
    Kc = csr_matrix(cK)
    Mc = csr_matrix(eb.coupling_M)
    K = bmat([[K_fe, Kc.T], [Kc, diags(eb.diag_K)]], format="csr")
    M = bmat([[M_fe, Mc.T], [Mc, diags(eb.diag_M)]], format="csr")
    dual_load = np.hstack([eb.dual_load, np.diag(eb.dual_load_self).reshape(nt, nt)])
    dual_pair = np.hstack([eb.dual_pair, np.diag(eb.dual_pair_self).reshape(nt, nt)])
    return EnrichedSystem(mesh, tips, K, M, nfe, dual_load, dual_pair, diag)


# ---------------------------------------------------------------------------
# constraints


@dataclass
class ConstraintSet:
    """Embedding ``C`` of reduced dofs into full dofs plus an optional deflation.

    ``deflation = (u, w)`` restricts to ``w . v = 0`` where ``u`` spans the
    kernel direction removed (the constant) and ``w = M u``.
    """

    embedding: Optional[csr_matrix]
    n_full: int
    kinds: Dict[str, int] = field(default_factory=dict)
    deflation: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def n_reduced(self) -> int:
        return self.n_full if self.embedding is None else self.embedding.shape[1]

    @property
    def dimension(self) -> int:
        return self.n_reduced - (1 if self.deflation is not None else 0)

    def expand(self, y: np.ndarray) -> np.ndarray:
        return y if self.embedding is None else self.embedding @ y


def build_zero_mean_constraint(system: EnrichedSystem) -> ConstraintSet:
    u = system.constant_vector
    return ConstraintSet(None, system.n_dofs, {"mean_zero": 1}, (u, system.M @ u))


def build_antisymmetry_constraint(system: EnrichedSystem) -> ConstraintSet:
    """Restrict to functions odd under the reflection x -> -x."""
    mesh = system.mesh
    perm = mesh.sigma_dof
    if perm is None:
        raise ValueError("mesh is not invariant under the reflection")
    if np.any(perm[perm] != np.arange(len(perm))):
        raise ValueError("reflection dof map is not an involution")
    nfe = system.n_fe
    d = np.arange(nfe)
    lead = d[d < perm]
    fixed = int(np.count_nonzero(d == perm))
    rows = [lead, perm[lead]]
    cols = [np.arange(len(lead))] * 2
    vals = [np.ones(len(lead)), -np.ones(len(lead))]
    ncol = len(lead)
    labels = list(system.labels)
    tied = free = 0
    seen = set()
    for k, lab in enumerate(labels):
        if lab in seen:
            continue
        if lab in ("2", "3"):
            other = "3" if lab == "2" else "2"
            if other not in labels:
                raise ValueError("mirror image of a singular function is missing")
            j = labels.index(other)
            rows.append(np.array([nfe + k, nfe + j]))
            cols.append(np.array([ncol, ncol]))
            vals.append(np.ones(2))
            seen.update((lab, other))
            tied += 1
        else:
            if system.tips[k].arc != 0:
                raise ValueError(f"singular function {lab} is not odd under the reflection")
            rows.append(np.array([nfe + k]))
            cols.append(np.array([ncol]))
            vals.append(np.ones(1))
            seen.add(lab)
            free += 1
        ncol += 1
    C = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(system.n_dofs, ncol)).tocsr()
    return ConstraintSet(C, system.n_dofs,
                         {"signed_pair": len(lead), "fixed_zero": fixed, "tied": tied, "free": free})


def apply_constraints(K, M, C: ConstraintSet):
    if C.embedding is None:
        return K, M
    E = C.embedding
    if E.shape[0] != K.shape[0]:
        raise ValueError("embedding does not match the matrix size")
    if np.any(np.asarray(abs(E).sum(axis=0)).ravel() == 0):
        raise ValueError("embedding is rank deficient")
    Kc = (E.T @ K @ E).tocsr()
    Mc = (E.T @ M @ E).tocsr()
    return Kc, Mc


def dof_sides(mesh: SlitMesh) -> np.ndarray:
    """Cut-side tag of every dof (``SIDE_PLUS``/``SIDE_MINUS`` on the arcs, 0 elsewhere)."""
    side = np.zeros(mesh.n_dofs, dtype=np.int64)
    for chain in mesh.chains:
        if chain is None:
            continue
        side[chain.plus[1:]] = SIDE_PLUS
        side[chain.minus[1:]] = SIDE_MINUS
    return side


def nodal_interpolant(mesh: SlitMesh, fn) -> np.ndarray:
    """FE coefficients of ``fn(points, side)`` sampled at every dof.

    ``side`` carries the cut side so that functions with a jump across an
    arc take their one-sided limits on the duplicated nodes.
    """
    return np.asarray(fn(mesh.vertices[mesh.dof_vertex], dof_sides(mesh)), dtype=float)


def export_matrix_market(path, A, comment: str = "") -> None:
    mmwrite(str(path), A, comment=comment, symmetry="symmetric")
