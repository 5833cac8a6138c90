"""Grid sweeps, the lambda = 3/4 curve, convergence studies and the general scan."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .eigen import EigenPair, SolverOptions, smallest_eigenpairs
from .fem import (EnrichedSystem, _face_data, assemble_system, apply_constraints,
                  build_antisymmetry_constraint, build_zero_mean_constraint, element_points,
                  quadrature_rule)
from .geometry import CutSpec, make_cut_spec, warn_small_rho
from .mesh import SlitMesh, build_symmetric_mesh
from .singular import SingularFunction, extract_moussaoui, extract_trace_jump, solve_dual_correctors

TARGET = 0.75
CSV_FIELDS = ("n", "h", "delta1", "delta2", "delta3", "lambda1A", "lambda2A", "alpha1", "alpha2",
              "alpha3", "alpha1_ef", "alpha2_ef", "ratio_moussaoui", "ratio_ef", "eig_residual",
              "flags", "wall_ms")
#: range in which the enriched method is considered reliable
SFM_RANGE = (0.1, 3.04)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@dataclass
class RunOptions:
    rho_policy: object = "auto"
    tol: float = 1e-8
    seed: int = 0
    k: int = 2
    trace_jump: bool = True
    timing: bool = False


@dataclass
class SweepRecord:
    n: int
    h: float
    delta1: float
    delta2: float
    delta3: float
    lambda1A: float
    lambda2A: float
    alpha1: float
    alpha2: float
    alpha3: float
    alpha1_ef: float
    alpha2_ef: float
    ratio_moussaoui: float
    ratio_ef: float
    eig_residual: float
    flags: str = ""
    wall_ms: int = 0
    lambda_fe: float = math.nan
    corrector_residual: float = math.nan
    n_fe: int = 0
    n_dofs: int = 0

    def csv_row(self) -> List[str]:
        return [_fmt(getattr(self, f)) for f in CSV_FIELDS]

    @classmethod
    def from_csv(cls, row: Dict[str, str]) -> "SweepRecord":
        kw = {}
        for f in CSV_FIELDS:
            v = row[f]
            if f in ("n", "wall_ms"):
                kw[f] = int(v)
            elif f == "flags":
                kw[f] = v
            else:
                kw[f] = float(v)
        return cls(**kw)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


def _ratio(a1: float, a2: float) -> Tuple[float, bool]:
    if not (abs(a1) > 1e-12):
        return math.nan, True
    return abs(a2) / abs(a1), False


# ---------------------------------------------------------------------------
# single solves


@dataclass
class AntisymmetricSolution:
    mesh: SlitMesh
    system: EnrichedSystem
    pairs: List[EigenPair]
    vectors: List[np.ndarray]   # expanded to the full enriched space


def solve_antisymmetric(mesh: SlitMesh, enrich: bool = True, k: int = 2, tol: float = 1e-8,
                        seed: int = 0) -> AntisymmetricSolution:
    system = assemble_system(mesh, enrich=enrich)
    C = build_antisymmetry_constraint(system)
    Kc, Mc = apply_constraints(system.K, system.M, C)
    pairs = smallest_eigenpairs(Kc, Mc, SolverOptions(k=k, tol=tol, seed=seed))
    return AntisymmetricSolution(mesh, system, pairs, [C.expand(p.vector) for p in pairs])


def run_single(spec: CutSpec, n: int, options: Optional[RunOptions] = None) -> SweepRecord:
    """Mesh, assemble, solve and extract both coefficient estimates at one point."""
    opts = options or RunOptions()
    t0 = time.perf_counter()
    flags = []
    try:
        mesh = build_symmetric_mesh(n, spec)
    except Exception as exc:
        raise StageError("mesh", exc) from exc
    h = mesh.h
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        warn_small_rho(spec, h)
        try:
            sol = solve_antisymmetric(mesh, True, opts.k, opts.tol, opts.seed)
        except Exception as exc:
            raise StageError("eigen", exc) from exc
    if any("cutoff radius" in str(w.message) for w in caught):
        flags.append("rho_small")
    if any("annulus" in str(w.message) for w in caught):
        flags.append("annulus_coarse")
    p1 = sol.pairs[0]
    lam2 = sol.pairs[1].value if len(sol.pairs) > 1 else math.nan
    if not all(p.converged for p in sol.pairs):
        flags.append("eig_unconverged")
    try:
        correctors = solve_dual_correctors(sol.system)
        ex = extract_moussaoui(sol.vectors[0], p1.value, correctors, sol.system)
    except Exception as exc:
        raise StageError("extraction", exc) from exc
    cres = max((c.residual for c in correctors), default=math.nan)
    if cres > 1e-8:
        flags.append("corrector_residual")
    a1, a2, a3 = ex.alpha
    ratio_m, bad = _ratio(a1, a2)
    if bad:
        flags.append("alpha1_small")

    a1e = a2e = ratio_e = lam_fe = math.nan
    if opts.trace_jump:
        try:
            fe = solve_antisymmetric(mesh, False, 1, opts.tol, opts.seed)
            tj = extract_trace_jump(fe.vectors[0], mesh)
        except Exception as exc:
            raise StageError("trace_jump", exc) from exc
        lam_fe = fe.pairs[0].value
        a1e, a2e = tj.alpha[0], tj.alpha[1]
        ratio_e, bad = _ratio(a1e, a2e)
        if bad:
            flags.append("alpha1_ef_small")
    d = spec.delta
    if any(0 < x and not (SFM_RANGE[0] < x < SFM_RANGE[1]) for x in d):
        flags.append("outside_sfm_range")
    wall = int(round(1000 * (time.perf_counter() - t0))) if opts.timing else 0
    return SweepRecord(n, h, d[0], d[1], d[2], p1.value, lam2, a1, a2, a3, a1e, a2e, ratio_m, ratio_e,
                       max(p.residual for p in sol.pairs), ";".join(flags), wall, lam_fe, cres,
                       sol.system.n_fe, sol.system.n_dofs)


# ---------------------------------------------------------------------------
# sweeps


def sweep_grid(n: int, lo: float = 0.14, hi: float = 3.0) -> List[Tuple[float, float]]:
    """Admissible ``(delta1, delta2)`` pairs in ``(lo, hi)^2``; delta2 is the slow index."""
    ks = [k for k in range(1, n) if lo < k * math.pi / n < hi]
    vals = [k * math.pi / n for k in ks]
    return [(d1, d2) for d2 in vals for d1 in vals]


def _task(args):
    (d1, d2), n, opts = args
    try:
        spec = make_cut_spec(d1, d2, d2, opts.rho_policy)
        return run_single(spec, n, opts)
    except Exception as exc:
        stage = getattr(exc, "stage", "setup")
        nan = math.nan
        return SweepRecord(n, nan, d1, d2, d2, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan,
                           f"failed:{stage}")


def _key(d1, d2):
    return (f"{d1:.12g}", f"{d2:.12g}")


def run_sweep(grid: Sequence[Tuple[float, float]], n: int, workers: int = 1,
              options: Optional[RunOptions] = None, checkpoint: Optional[str] = None) -> List[SweepRecord]:
    """Solve every grid point; results are returned (and checkpointed) in grid order."""
    opts = options or RunOptions()
    done: Dict[Tuple[str, str], SweepRecord] = {}
    if checkpoint and os.path.exists(checkpoint):
        with open(checkpoint, newline="") as fh:
            for row in csv.DictReader(fh):
                rec = SweepRecord.from_csv(row)
                if rec.n == n:
                    done[_key(rec.delta1, rec.delta2)] = rec
    todo = [g for g in grid if _key(*g) not in done]
    fh = None
    if checkpoint:
        new = not os.path.exists(checkpoint) or os.path.getsize(checkpoint) == 0
        fh = open(checkpoint, "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(CSV_FIELDS)
    try:
        args = [(g, n, opts) for g in todo]
        if workers > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_task, args, chunksize=1)
                for g, rec in zip(todo, results):
                    done[_key(*g)] = rec
                    if fh:
                        writer.writerow(rec.csv_row())
                        fh.flush()
        else:
            for a in args:
                rec = _task(a)
                done[_key(*a[0])] = rec
                if fh:
                    writer.writerow(rec.csv_row())
                    fh.flush()
    finally:
        if fh:
            fh.close()
    return [done[_key(*g)] for g in grid]


def write_csv(records: Iterable[SweepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow(r.csv_row())


def read_csv(path) -> List[SweepRecord]:
    with open(path, newline="") as fh:
        return [SweepRecord.from_csv(row) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# curve and verdict


@dataclass
class CurvePoint:
    delta2: float
    delta1: float
    bracket: Tuple[float, float]
    lam_bracket: Tuple[float, float]
    ratio_moussaoui: float
    ratio_ef: float


def find_curve(records: Sequence[SweepRecord], target: float = TARGET) -> List[CurvePoint]:
    """Crossings of ``lambda1A = target`` along each delta2 row, by linear interpolation."""
    rows: Dict[float, List[SweepRecord]] = {}
    for r in records:
        if not math.isnan(r.lambda1A):
            rows.setdefault(r.delta2, []).append(r)
    out = []
    for d2 in sorted(rows):
        row = sorted(rows[d2], key=lambda r: r.delta1)
        for j, (a, b) in enumerate(zip(row, row[1:])):
            fa, fb = a.lambda1A - target, b.lambda1A - target
            last = j == len(row) - 2
            if fa * fb < 0:
                t = fa / (fa - fb)
            elif fa == 0.0:
                t = 0.0
            elif fb == 0.0 and last:
                t = 1.0
            else:
                continue
            out.append(CurvePoint(
                d2, a.delta1 + t * (b.delta1 - a.delta1), (a.delta1, b.delta1), (a.lambda1A, b.lambda1A),
                a.ratio_moussaoui + t * (b.ratio_moussaoui - a.ratio_moussaoui),
                a.ratio_ef + t * (b.ratio_ef - a.ratio_ef)))
    return out


def hypothesis_report(curve: Sequence[CurvePoint], margin: float = 0.1) -> Dict[str, object]:
    """Summary of the coefficient ratio along the curve with a verdict string."""
    if not curve:
        return {"points": 0, "verdict": "no crossing", "margin": margin}
    rep: Dict[str, object] = {"points": len(curve), "margin": margin}
    for name in ("ratio_moussaoui", "ratio_ef"):
        vals = np.array([getattr(c, name) for c in curve], dtype=float)
        ok = ~np.isnan(vals)
        if not ok.any():
            rep[name] = None
            continue
        i = int(np.nanargmax(vals))
        rep[name] = {"max": float(vals[i]), "min": float(np.nanmin(vals)),
                     "argmax": [curve[i].delta1, curve[i].delta2], "nan_points": int((~ok).sum())}
    m = rep.get("ratio_moussaoui")
    if m is None:
        rep["verdict"] = "inconclusive: no finite ratio on the curve"
    elif m["max"] < 1 - margin:
        rep["verdict"] = "negative: |alpha2| < |alpha1| strictly along the whole curve"
    else:
        rep["verdict"] = "inconclusive: ratio within the margin of 1 somewhere on the curve"
    return rep


def write_report(rep: Dict[str, object], path) -> None:
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# cross-mesh evaluation and convergence


def locate_points(mesh: SlitMesh, points: np.ndarray, k: int = 16):
    """Element index and flat barycentric coordinates of sphere points."""
    geom = mesh.geom
    P = geom.vertices[geom.triangles]
    nrm, d, _ = _face_data(P)
    cen = P.mean(axis=1)
    cen /= np.linalg.norm(cen, axis=1, keepdims=True)
    tree = cKDTree(cen)
    tri = np.full(len(points), -1, dtype=np.int64)
    bary = np.zeros((len(points), 3))
    pending = np.arange(len(points))
    kk = k
    while len(pending):
        kk = min(kk, len(cen))
        _, cand = tree.query(points[pending], k=kk)
        cand = np.atleast_2d(cand)
        best = np.full(len(pending), -np.inf)
        for j in range(kk):
            t = cand[:, j]
            y = points[pending]
            X = y * (d[t] / np.einsum("ij,ij->i", y, nrm[t]))[:, None]
            b = np.linalg.solve(np.transpose(P[t], (0, 2, 1)), X[..., None])[..., 0]
            score = b.min(axis=1)
            upd = score > best
            best[upd] = score[upd]
            tri[pending[upd]] = t[upd]
            bary[pending[upd]] = b[upd]
        found = best > -1e-9
        pending = pending[~found]
        if kk >= len(cen):
            break
        kk *= 4
    return tri, bary


def evaluate(system: EnrichedSystem, coeffs: np.ndarray, points: np.ndarray,
             tri: Optional[np.ndarray] = None, bary: Optional[np.ndarray] = None) -> np.ndarray:
    """Value of the discrete function ``coeffs`` at sphere points."""
    mesh = system.mesh
    if tri is None:
        tri, bary = locate_points(mesh, points)
    vals = np.einsum("qa,qa->q", bary, coeffs[mesh.tri_dofs[tri]])
    for i, tip in enumerate(system.tips):
        s = SingularFunction(tip)
        r = np.arccos(np.clip(points @ tip.frame.tip, -1.0, 1.0))
        near = r < tip.rho
        if np.any(near):
            rr, th = tip.frame.polar(points[near])
            vals[near] += coeffs[system.n_fe + i] * s.value_polar(rr, th)
    return vals


def l2_difference(ref: EnrichedSystem, ref_coeffs: np.ndarray, other: EnrichedSystem,
                  other_coeffs: np.ndarray) -> float:
    """``min over sign of ||u_ref - (+-)u_other||`` by quadrature on the reference mesh."""
    geom = ref.mesh.geom
    P = geom.vertices[geom.triangles]
    nrm, d, area = _face_data(P)
    quad = quadrature_rule(5)
    y, w = element_points(P, nrm, d, area, quad.points, quad.weights)
    T, Q = w.shape
    pts = y.reshape(-1, 3)
    tri = np.repeat(np.arange(T), Q)
    bary = np.tile(quad.points, (T, 1))
    u = evaluate(ref, ref_coeffs, pts, tri, bary)
    v = evaluate(other, other_coeffs, pts)
    w = w.ravel()
    return float(min(np.sqrt(np.sum(w * (u - v) ** 2)), np.sqrt(np.sum(w * (u + v) ** 2))))


def _slope(h, err) -> float:
    h, err = np.asarray(h, float), np.asarray(err, float)
    ok = err > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


@dataclass
class ConvergenceTable:
    delta: Tuple[float, float, float]
    n_ref: int
    rows: List[Dict[str, float]]
    slopes: Dict[str, float]
    reference: Dict[str, float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys = list(self.rows[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in keys])
        return buf.getvalue()


def convergence_study(delta: Sequence[float], n_list: Sequence[int], n_ref: int,
                      options: Optional[RunOptions] = None) -> ConvergenceTable:
    """Errors against a fine enriched reference and their log-log slopes in h."""
    opts = options or RunOptions()
    if n_ref <= max(n_list):
        raise ValueError("reference must be finer than every studied mesh")
    spec = make_cut_spec(*delta, rho_policy=opts.rho_policy)

    def enriched(n):
        sol = solve_antisymmetric(build_symmetric_mesh(n, spec), True, 1, opts.tol, opts.seed)
        ex = extract_moussaoui(sol.vectors[0], sol.pairs[0].value, solve_dual_correctors(sol.system), sol.system)
        return sol, ex

    ref, ref_ex = enriched(n_ref)
    lam_ref = ref.pairs[0].value
    a_ref = [abs(a) for a in ref_ex.alpha]
    rows = []
    for n in n_list:
        sol, ex = enriched(n)
        fe = solve_antisymmetric(sol.mesh, False, 1, opts.tol, opts.seed)
        e_l2 = l2_difference(ref.system, ref.vectors[0], fe.system, fe.vectors[0])
        lam_fe = fe.pairs[0].value
        # |u - u_h|_1^2 = (lam_h - lam) + lam ||u - u_h||^2 for normalized eigenfunctions
        h1 = math.sqrt(max(lam_fe - lam_ref + lam_ref * e_l2 ** 2, 0.0))
        rows.append({
            "n": n, "h": sol.mesh.h, "lambda": sol.pairs[0].value,
            "alpha1": abs(ex.alpha[0]), "alpha2": abs(ex.alpha[1]),
            "err_lambda": abs(sol.pairs[0].value - lam_ref),
            "err_alpha1": abs(abs(ex.alpha[0]) - a_ref[0]),
            "err_alpha2": abs(abs(ex.alpha[1]) - a_ref[1]) if not math.isnan(a_ref[1]) else math.nan,
            "lambda_fe": lam_fe, "err_l2_fe": e_l2, "err_h1_fe": h1,
        })
    hs = [r["h"] for r in rows]
    slopes = {k: _slope(hs, [r[k] for r in rows]) for k in ("err_lambda", "err_alpha1", "err_alpha2", "err_h1_fe")}
    reference = {"lambda": lam_ref, "alpha1": a_ref[0], "alpha2": a_ref[1], "h": ref.mesh.h}
    return ConvergenceTable(tuple(spec.delta), n_ref, rows, slopes, reference)


# ---------------------------------------------------------------------------
# general scan without the mirror symmetry


@dataclass
class GeneralHit:
    delta: Tuple[float, float, float]
    eigenvalues: Tuple[float, ...]
    cluster: Tuple[int, ...]
    alpha: Tuple[float, float, float]
    spread: float   # max pairwise ||a_i| - |a_j|| / max |a_i|


@dataclass
class GeneralRecord:
    delta: Tuple[float, float, float]
    eigenvalues: Tuple[float, ...]
    candidates: List[GeneralHit]
    residual: float


def canonical_triples(values: Sequence[float]) -> List[Tuple[float, float, float]]:
    """One representative per orbit of the arc permutations (sorted triples)."""
    return [tuple(t) for t in itertools.combinations_with_replacement(sorted(values), 3)]


def _spread(alpha) -> float:
    m = np.abs(np.asarray(alpha, float))
    top = m.max()
    if not top > 0:
        return math.inf
    return float((m.max() - m.min()) / top)


def _cluster_indices(vals, tol=1e-6):
    groups, cur = [], [0]
    for i in range(1, len(vals)):
        if abs(vals[i] - vals[cur[-1]]) <= tol * max(1.0, abs(vals[i])):
            cur.append(i)
        else:
            groups.append(cur)
            cur = [i]
    groups.append(cur)
    return groups


def general_solve(delta, n: int, k: int = 6, window: float = 1e-2, options: Optional[RunOptions] = None,
                  n_angles: int = 720) -> GeneralRecord:
    opts = options or RunOptions()
    spec = make_cut_spec(*delta, rho_policy=opts.rho_policy)
    mesh = build_symmetric_mesh(n, spec)
    system = assemble_system(mesh)
    zc = build_zero_mean_constraint(system)
    pairs = smallest_eigenpairs(system.K, system.M, SolverOptions(k=k, tol=opts.tol, seed=opts.seed),
                                deflation=zc.deflation)
    vals = [p.value for p in pairs]
    correctors = solve_dual_correctors(system)
    hits = []
    for group in _cluster_indices(vals):
        if not any(abs(vals[i] - TARGET) <= window for i in group):
            continue
        A = []
        for i in group:
            ex = extract_moussaoui(pairs[i].vector, pairs[i].value, correctors, system)
            A.append(ex.alpha)
        A = np.array(A).T  # (3, g)
        if A.shape[1] == 1:
            best = (_spread(A[:, 0]), A[:, 0])
        else:
            # scan unit combinations inside the degenerate eigenspace
            best = (math.inf, None)
            rng = np.random.default_rng(opts.seed)
            if A.shape[1] == 2:
                ang = np.linspace(0, math.pi, n_angles, endpoint=False)
                C = np.stack([np.cos(ang), np.sin(ang)])
            else:
                C = rng.standard_normal((A.shape[1], 20 * n_angles))
                C /= np.linalg.norm(C, axis=0)
            for c in C.T:
                a = A @ c
                s = _spread(a)
                if s < best[0]:
                    best = (s, a)
        hits.append(GeneralHit(tuple(spec.delta), tuple(vals[i] for i in group), tuple(group),
                               tuple(float(x) for x in best[1]), best[0]))
    return GeneralRecord(tuple(spec.delta), tuple(vals), hits, max(p.residual for p in pairs))


def _general_task(args):
    delta, n, k, window, opts = args
    return general_solve(delta, n, k, window, opts)


def run_general_check(grid3: Sequence[Tuple[float, float, float]], n: int, k: int = 6, window: float = 1e-2,
                      workers: int = 1, options: Optional[RunOptions] = None) -> List[GeneralRecord]:
    opts = options or RunOptions()
    args = [(d, n, k, window, opts) for d in grid3]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_general_task, args, chunksize=1))
    return [_general_task(a) for a in args]


def equal_magnitude_hits(records: Sequence[GeneralRecord], threshold: float = 0.1) -> List[GeneralHit]:
    return [h for r in records for h in r.candidates if h.spread < threshold]
