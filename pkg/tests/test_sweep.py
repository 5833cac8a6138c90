import math

import numpy as np
import pytest

from slitsphere.geometry import make_cut_spec
from slitsphere.sweep import (CSV_FIELDS, CurvePoint, RunOptions, SweepRecord, _spread, canonical_triples,
                              equal_magnitude_hits, evaluate, find_curve, general_solve, hypothesis_report,
                              l2_difference, locate_points, read_csv, run_single, run_sweep, sweep_grid,
                              write_csv)

from conftest import HALF, cached_mesh, cached_system


def _rec(d1, d2, lam, ratio=0.5, ratio_ef=0.55):
    return SweepRecord(20, 0.27, d1, d2, d2, lam, 3.0, 0.5, 0.25, 0.25, 0.4, 0.2, ratio, ratio_ef, 1e-12)


class TestCurve:
    def test_constant_lambda_gives_empty_curve(self):
        recs = [_rec(a, b, 1.0) for b in (0.5, 1.0) for a in (0.5, 1.0, 1.5)]
        assert find_curve(recs) == []

    def test_linear_in_delta1(self):
        # lambda = 1.2 - 0.3 d1 crosses 3/4 at d1 = 1.5
        d1s = [0.4, 0.9, 1.4, 1.9, 2.4]
        recs = [_rec(a, b, 1.2 - 0.3 * a, ratio=a / 4) for b in (0.7, 1.3) for a in d1s]
        curve = find_curve(recs)
        assert len(curve) == 2
        for c in curve:
            assert c.delta1 == pytest.approx(1.5, abs=1e-12)
            assert c.bracket == (1.4, 1.9)
            assert c.ratio_moussaoui == pytest.approx(1.5 / 4, abs=1e-12)

    def test_exact_hit_counted_once(self):
        recs = [_rec(a, 1.0, lam) for a, lam in ((0.5, 1.0), (1.0, 0.75), (1.5, 0.5))]
        curve = find_curve(recs)
        assert [c.delta1 for c in curve] == [1.0]

    def test_report_verdicts(self):
        assert hypothesis_report([])["verdict"] == "no crossing"
        low = [CurvePoint(1.0, 1.0, (0.9, 1.1), (0.8, 0.7), 0.6, 0.62)]
        assert hypothesis_report(low)["verdict"].startswith("negative")
        high = low + [CurvePoint(1.2, 0.8, (0.7, 0.9), (0.8, 0.7), 1.0, 0.98)]
        rep = hypothesis_report(high)
        assert rep["verdict"].startswith("inconclusive")
        assert rep["ratio_moussaoui"]["max"] == 1.0
        assert rep["ratio_moussaoui"]["argmax"] == [0.8, 1.2]

    def test_row_half_crosses_once(self):
        n = 20
        d2 = math.pi / 2
        recs = [run_single(make_cut_spec(k * math.pi / n, d2, d2), n, RunOptions(trace_jump=False))
                for k in range(2, n - 1)]
        lam = [r.lambda1A for r in recs]
        assert all(a > b for a, b in zip(lam, lam[1:]))
        curve = find_curve(recs)
        assert len(curve) == 1
        assert curve[0].delta1 > math.pi / 2


class TestGridAndCsv:
    def test_grid(self):
        g = sweep_grid(40)
        assert len(g) == 37 ** 2
        assert g[0] == (2 * math.pi / 40, 2 * math.pi / 40)
        assert g[1][1] == g[0][1]  # delta2 is the slow index
        assert all(0.14 < a < 3.0 and 0.14 < b < 3.0 for a, b in g)

    def test_single_point_matches_run_single(self, tmp_path):
        n = 10
        pt = (3 * math.pi / 10, 7 * math.pi / 10)
        recs = run_sweep([pt], n)
        ref = run_single(make_cut_spec(pt[0], pt[1], pt[1]), n)
        write_csv(recs, tmp_path / "a.csv")
        write_csv([ref], tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_workers_do_not_change_output(self, tmp_path):
        grid = sweep_grid(8, 0.5, 2.8)
        write_csv(run_sweep(grid, 8, workers=1), tmp_path / "w1.csv")
        write_csv(run_sweep(grid, 8, workers=3), tmp_path / "w3.csv")
        assert (tmp_path / "w1.csv").read_bytes() == (tmp_path / "w3.csv").read_bytes()

    def test_checkpoint_resume(self, tmp_path):
        grid = sweep_grid(8, 0.5, 2.8)
        ck = tmp_path / "ck.csv"
        first = run_sweep(grid[:3], 8, checkpoint=str(ck))
        full = run_sweep(grid, 8, checkpoint=str(ck))
        assert [r.csv_row() for r in full[:3]] == [r.csv_row() for r in first]
        write_csv(full, tmp_path / "resumed.csv")
        write_csv(run_sweep(grid, 8), tmp_path / "fresh.csv")
        assert (tmp_path / "resumed.csv").read_bytes() == (tmp_path / "fresh.csv").read_bytes()

    def test_csv_round_trip(self, tmp_path):
        rec = run_single(make_cut_spec(*HALF), 10)
        write_csv([rec], tmp_path / "r.csv")
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header == ",".join(CSV_FIELDS)
        back = read_csv(tmp_path / "r.csv")[0]
        assert back.csv_row() == rec.csv_row()

    def test_failures_are_recorded(self):
        # pi/3 is not a ring latitude for n = 8
        recs = run_sweep([(math.pi / 3, math.pi / 2)], 8)
        assert recs[0].flags.startswith("failed:")
        assert math.isnan(recs[0].lambda1A)

    def test_wall_time_off_by_default(self):
        assert run_single(make_cut_spec(*HALF), 10).wall_ms == 0
        assert run_single(make_cut_spec(*HALF), 10, RunOptions(timing=True)).wall_ms >= 0


class TestRunSingle:
    def test_equator(self):
        rec = run_single(make_cut_spec(*HALF), 20)
        assert rec.alpha2 == pytest.approx(rec.alpha3, rel=1e-8)
        assert rec.ratio_moussaoui == pytest.approx(0.5, abs=1e-6)
        assert rec.ratio_ef == pytest.approx(0.5, abs=1e-6)
        assert rec.lambda1A < rec.lambda_fe
        assert rec.lambda2A >= 1.95
        assert "rho_small" in rec.flags

    def test_cracktip_has_no_ratio(self):
        rec = run_single(make_cut_spec(math.pi, 0, 0), 20)
        assert math.isnan(rec.ratio_moussaoui)
        assert "alpha1_small" not in rec.flags
        assert rec.lambda1A == pytest.approx(0.75, rel=5e-2)


class TestCrossMesh:
    def test_locate_reproduces_vertices(self, rng):
        mesh = cached_mesh(10, HALF)
        x = rng.standard_normal((300, 3))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        tri, bary = locate_points(mesh, x)
        assert np.all(tri >= 0)
        assert np.all(bary > -1e-9)
        P = mesh.vertices[mesh.triangles[tri]]
        X = np.einsum("qa,qai->qi", bary, P)
        np.testing.assert_allclose(X / np.linalg.norm(X, axis=1, keepdims=True), x, atol=1e-12)

    def test_evaluate_linear_function(self, rng):
        system = cached_system(10, (0.0, 0.0, 0.0), False)
        mesh = system.mesh
        z = mesh.vertices[mesh.dof_vertex, 2]
        x = mesh.vertices[:50]
        np.testing.assert_allclose(evaluate(system, z, x), x[:, 2], atol=1e-12)

    def test_l2_difference_of_coordinate(self):
        # interpolants of z on two meshes differ by O(h^2)
        a = cached_system(20, (0.0, 0.0, 0.0), False)
        b = cached_system(10, (0.0, 0.0, 0.0), False)
        za = a.mesh.vertices[a.mesh.dof_vertex, 2]
        zb = b.mesh.vertices[b.mesh.dof_vertex, 2]
        d = l2_difference(a, za, b, zb)
        c = cached_system(40, (0.0, 0.0, 0.0), False)
        zc = c.mesh.vertices[c.mesh.dof_vertex, 2]
        d2 = l2_difference(c, zc, a, za)
        assert math.log2(d / d2) == pytest.approx(2.0, abs=0.2)
        assert l2_difference(a, za, a, za) == pytest.approx(0.0, abs=1e-14)


class TestGeneral:
    def test_canonical_triples(self):
        t = canonical_triples([1.0, 2.0, 3.0])
        assert len(t) == 10
        assert all(a <= b <= c for a, b, c in t)

    def test_spread(self):
        assert _spread([1.0, -1.0, 1.0]) == 0.0
        assert _spread([0.5, 1.0, 0.75]) == pytest.approx(0.5)

    def test_infinite_window_returns_ascending_spectrum(self):
        rec = general_solve(HALF, 10, k=6, window=math.inf)
        vals = list(rec.eigenvalues)
        assert vals == sorted(vals)
        assert len(vals) == 6
        assert sum(len(h.cluster) for h in rec.candidates) == 6

    def test_symmetric_triple_contains_antisymmetric_branch(self):
        n = 20
        rec = general_solve(HALF, n, k=6, window=math.inf)
        lam_a = run_single(make_cut_spec(*HALF), n, RunOptions(trace_jump=False)).lambda1A
        assert min(abs(v - lam_a) for v in rec.eigenvalues) < 1e-8

    def test_equal_magnitude_filter(self):
        rec = general_solve(HALF, 10, k=6, window=math.inf)
        hits = equal_magnitude_hits([rec], threshold=math.inf)
        assert len(hits) == len(rec.candidates)
