"""Exact-anchor suite: configurations whose eigenvalue or coefficients are known."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

from .geometry import make_cut_spec
from .mesh import build_symmetric_mesh
from .singular import extract_moussaoui, solve_dual_correctors
from .sweep import solve_antisymmetric

CRACKTIP_ALPHA = math.sqrt(2.0) / math.pi
WEDGE_LIMIT = 21.0 / 16.0


@dataclass
class Anchor:
    name: str
    value: float
    expected: float
    rel_tol: Optional[float] = None
    abs_tol: Optional[float] = None

    @property
    def error(self) -> float:
        return abs(self.value - self.expected)

    @property
    def passed(self) -> bool:
        if self.rel_tol is not None:
            return self.error <= self.rel_tol * abs(self.expected)
        return self.error <= self.abs_tol

    def line(self) -> str:
        tol = f"rel {self.rel_tol:g}" if self.rel_tol is not None else f"abs {self.abs_tol:g}"
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name:<38s} value={self.value:.6f} "
                f"expected={self.expected:.6f} ({tol})")


def enriched_values(delta, n: int, k: int = 1):
    """``(lambda1A, |alpha1|, |alpha2|)`` with enrichment on the antisymmetric subspace."""
    spec = make_cut_spec(*delta)
    sol = solve_antisymmetric(build_symmetric_mesh(n, spec), True, k)
    lam = sol.pairs[0].value
    if not sol.system.tips:
        return lam, math.nan, math.nan
    ex = extract_moussaoui(sol.vectors[0], lam, solve_dual_correctors(sol.system), sol.system)
    return lam, abs(ex.alpha[0]), abs(ex.alpha[1])


def aitken(values: Sequence[float]) -> float:
    """Limit of three successive values of a geometrically converging sequence."""
    a, b, c = values[-3:]
    den = (c - b) - (b - a)
    if den == 0.0:
        return c
    return c - (c - b) ** 2 / den


def wedge_sequence(n_list: Sequence[int]) -> List[float]:
    out = []
    for n in n_list:
        h = math.pi / n
        out.append(enriched_values((h, math.pi - h, math.pi - h), n)[0])
    return out


def run_anchors(n: int = 40, log: Optional[Callable[[str], None]] = None) -> List[Anchor]:
    anchors = []
    lam, _, _ = enriched_values((0.0, 0.0, 0.0), n)
    anchors.append(Anchor("unslit lambda1A = 2", lam, 2.0, rel_tol=1e-2))
    lam, a1, _ = enriched_values((math.pi, 0.0, 0.0), n)
    anchors.append(Anchor("cracktip lambda1A = 3/4", lam, 0.75, rel_tol=5e-3))
    anchors.append(Anchor("cracktip |alpha1| = sqrt(2)/pi", a1, CRACKTIP_ALPHA, rel_tol=2e-2))
    seq = wedge_sequence([n // 2, n, 2 * n])
    anchors.append(Anchor("(h, pi-h, pi-h) extrapolated = 21/16", aitken(seq), WEDGE_LIMIT, rel_tol=1e-2))
    lam, a1, a2 = enriched_values((math.pi / 2,) * 3, n)
    anchors.append(Anchor("(pi/2)^3 lambda1A = 0.795", lam, 0.795, abs_tol=0.010))
    anchors.append(Anchor("(pi/2)^3 |alpha1| = 0.54", a1, 0.54, abs_tol=0.02))
    anchors.append(Anchor("(pi/2)^3 |alpha2| = 0.27", a2, 0.27, abs_tol=0.02))
    if log:
        for a in anchors:
            log(a.line())
    return anchors
