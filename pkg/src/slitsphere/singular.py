"""Crack-tip singular functions, dual functions and coefficient extraction.

The primal singular function at a tip is ``s = f(r) cos(theta/2) psi(r/rho)``
with ``f(r) = (2 tan(r/2))**0.5``; the dual one uses ``1/f``.  Both radial
profiles are the stereographic images of the planar ``t**(+-1/2)`` crack
modes, so ``f(r) cos(theta/2)`` is exactly harmonic for the sphere's
Laplace-Beltrami operator and the Laplacian of ``s`` only lives in the
cutoff annulus ``rho/2 <= r <= rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.sparse import bmat, csr_matrix
from scipy.sparse.linalg import splu

from .geometry import CutoffProfile, SingularTip, cutoff_eval

_GL_X, _GL_W = leggauss(64)


def radial_profile(r, power: float = 0.5):
    """``(f, f', f'')`` for ``f(r) = (2 tan(r/2))**power``."""
    r = np.asarray(r, dtype=float)
    t = 2.0 * np.tan(0.5 * r)
    dt = 1.0 + 0.25 * t * t
    ddt = 0.5 * t * dt
    f = t ** power
    df = power * t ** (power - 1.0) * dt
    ddf = power * (power - 1.0) * t ** (power - 2.0) * dt * dt + power * t ** (power - 1.0) * ddt
    return f, df, ddf


@dataclass(frozen=True)
class SingularFunction:
    """``f(r_i) cos(theta_i/2) psi(r_i/rho_i)`` at one tip.

    ``power=+0.5`` is the primal function ``s_i``; ``power=-0.5`` gives the
    dual function ``S_i`` used by the extraction formula.
    """

    tip: SingularTip
    power: float = 0.5
    cutoff: CutoffProfile = field(default_factory=CutoffProfile)

    @property
    def rho(self) -> float:
        return self.tip.rho

    def dual(self) -> "SingularFunction":
        return SingularFunction(self.tip, -self.power, self.cutoff)

    # -- pointwise ---------------------------------------------------------

    def polar(self, x, side=None):
        return self.tip.frame.polar(x, side)

    def value_polar(self, r, theta):
        f, _, _ = radial_profile(r, self.power)
        psi, _, _ = cutoff_eval(self.cutoff, np.asarray(r) / self.rho)
        return f * np.cos(0.5 * theta) * psi

    def laplacian_polar(self, r, theta):
        r = np.asarray(r, dtype=float)
        f, df, _ = radial_profile(r, self.power)
        _, dpsi, ddpsi = cutoff_eval(self.cutoff, r / self.rho)
        rho = self.rho
        radial = f * (ddpsi / rho ** 2 + dpsi / (rho * np.tan(r))) + 2.0 * df * dpsi / rho
        # the harmonic part cancels; keep exact zeros outside the annulus
        radial = np.where(dpsi == 0.0, 0.0, radial)
        return np.cos(0.5 * theta) * radial

    def grad_polar(self, r, theta):
        """Components ``(d/dr, (1/sin r) d/dtheta)`` of the surface gradient."""
        r = np.asarray(r, dtype=float)
        f, df, _ = radial_profile(r, self.power)
        psi, dpsi, _ = cutoff_eval(self.cutoff, r / self.rho)
        g_r = (df * psi + f * dpsi / self.rho) * np.cos(0.5 * theta)
        g_t = -0.5 * f * psi * np.sin(0.5 * theta) / np.sin(r)
        return g_r, g_t

    def __call__(self, x, side=None):
        r, theta = self.polar(x, side)
        return self.value_polar(r, theta)

    def laplacian(self, x, side=None):
        r, theta = self.polar(x, side)
        return self.laplacian_polar(r, theta)

    def grad(self, x, side=None):
        r, theta = self.polar(x, side)
        g_r, g_t = self.grad_polar(r, theta)
        e_r, e_t = self.tip.frame.polar_basis(r, theta)
        return g_r[..., None] * e_r + g_t[..., None] * e_t

    # -- radial integrals (theta integrated in closed form) -----------------

    def _radial_nodes(self, annulus_only: bool = False):
        pieces = [(0.5 * self.rho, self.rho)] if annulus_only else [(0.0, 0.5 * self.rho), (0.5 * self.rho, self.rho)]
        rs, ws = [], []
        for a, b in pieces:
            rs.append(0.5 * (b - a) * _GL_X + 0.5 * (a + b))
            ws.append(0.5 * (b - a) * _GL_W)
        return np.concatenate(rs), np.concatenate(ws)

    def energy(self) -> float:
        """``int |grad s|^2`` over the slit disk."""
        r, w = self._radial_nodes()
        f, df, _ = radial_profile(r, self.power)
        psi, dpsi, _ = cutoff_eval(self.cutoff, r / self.rho)
        g = f * psi
        dg = df * psi + f * dpsi / self.rho
        return float(math.pi * np.sum(w * (dg * dg + g * g / (4.0 * np.sin(r) ** 2)) * np.sin(r)))

    def mass(self) -> float:
        """``int s^2``."""
        r, w = self._radial_nodes()
        f, _, _ = radial_profile(r, self.power)
        psi, _, _ = cutoff_eval(self.cutoff, r / self.rho)
        return float(math.pi * np.sum(w * (f * psi) ** 2 * np.sin(r)))

    def integral(self) -> float:
        """``int s``; the angular factor ``int cos(theta/2)`` vanishes."""
        return 0.0

    def pair(self, other: "SingularFunction", laplacian: bool = False) -> float:
        """``int self * other`` (or ``int Lap(self) * other``) at the same tip."""
        if other.tip is not self.tip and other.tip.label != self.tip.label:
            return 0.0
        r, w = self._radial_nodes(annulus_only=laplacian)
        if laplacian:
            f, df, _ = radial_profile(r, self.power)
            _, dpsi, ddpsi = cutoff_eval(self.cutoff, r / self.rho)
            rho = self.rho
            a = f * (ddpsi / rho ** 2 + dpsi / (rho * np.tan(r))) + 2.0 * df * dpsi / rho
        else:
            f, _, _ = radial_profile(r, self.power)
            psi, _, _ = cutoff_eval(self.cutoff, r / self.rho)
            a = f * psi
        g, _, _ = radial_profile(r, other.power)
        psi_o, _, _ = cutoff_eval(other.cutoff, r / other.rho)
        return float(math.pi * np.sum(w * a * g * psi_o * np.sin(r)))


class SolvabilityError(RuntimeError):
    pass


@dataclass
class DualCorrector:
    """Discrete Neumann corrector ``p~_i`` over the enriched space."""

    tip: SingularTip
    coeffs: np.ndarray
    residual: float
    mean: float
    load_defect: float


@dataclass
class ExtractionResult:
    alpha: Tuple[float, float, float]
    method: str
    extra: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        a1, a2 = abs(self.alpha[0]), abs(self.alpha[1])
        return a2 / a1 if a1 > 1e-12 else math.nan


def _neumann_factor(system):
    """Sparse LU of the stiffness bordered by the zero-mean row."""
    w = system.mean_weights
    border = csr_matrix(w.reshape(1, -1))
    A = bmat([[system.K, border.T], [border, None]], format="csc")
    return splu(A)


def solve_dual_corrector(index: int, system, factor=None, solvability_tol: float = 1e-8) -> DualCorrector:
    """Solve ``-Lap p~ = Lap S_i`` with zero Neumann data and zero mean."""
    tip = system.tips[index]
    b = np.array(system.dual_load[index], dtype=float)
    w = system.mean_weights
    ones = system.constant_vector
    defect = float(ones @ b)
    scale = float(np.abs(b).sum()) or 1.0
    if abs(defect) > solvability_tol * max(scale, 1.0):
        raise SolvabilityError(f"load of tip {tip.label} has total {defect:.3e}")
    b = b - w * (defect / float(ones @ w))
    lu = factor if factor is not None else _neumann_factor(system)
    sol = lu.solve(np.concatenate([b, [0.0]]))
    p = sol[:-1]
    res = float(np.linalg.norm(system.K @ p + sol[-1] * w - b) / max(np.linalg.norm(b), 1e-300))
    return DualCorrector(tip, p, res, float(w @ p), defect)


def solve_dual_correctors(system) -> List[DualCorrector]:
    if not system.tips:
        return []
    lu = _neumann_factor(system)
    return [solve_dual_corrector(i, system, lu) for i in range(len(system.tips))]


def _alpha_by_arc(system, values, label_prefix="") -> Tuple[Tuple[float, float, float], Dict[str, float]]:
    alpha = [math.nan, math.nan, math.nan]
    extra = {}
    for tip, a in zip(system.tips, values):
        if tip.label in "123":
            alpha[int(tip.label) - 1] = float(a)
        else:
            extra[label_prefix + tip.label] = float(a)
    return tuple(alpha), extra


def extract_moussaoui(sigma, lam, correctors: Sequence[DualCorrector], system,
                      load: Optional[np.ndarray] = None, load_dual: Optional[np.ndarray] = None) -> ExtractionResult:
    """Singular coefficients ``alpha_i = (1/pi) int (S_i + p~_i) f``.

    With an eigenvector ``sigma`` (``int sigma^2 = 1``) the load is
    ``f = lam * sigma``.  For a manufactured right-hand side pass ``load``
    (the vector ``int f v`` over the enriched basis) and ``load_dual``
    (``int S_i f`` per tip) instead.
    """
    vals = []
    flags = {}
    for i, corr in enumerate(correctors):
        if load is None:
            a = lam / math.pi * (system.dual_pair[i] @ sigma + corr.coeffs @ (system.M @ sigma))
        else:
            a = (load_dual[i] + corr.coeffs @ load) / math.pi
        vals.append(a)
        flags[f"corrector_residual_{corr.tip.label}"] = corr.residual
    alpha, extra = _alpha_by_arc(system, vals)
    return ExtractionResult(alpha, "moussaoui", extra, flags)


def extract_trace_jump(sigma_fe, mesh) -> ExtractionResult:
    """FE-only coefficient proxy from the jump at the last chain node before the tip."""
    alpha = [math.nan, math.nan, math.nan]
    diag = {}
    for chain in mesh.chains:
        if chain is None:
            continue
        if chain.K + 1 < 2:
            raise ValueError(f"chain of arc {chain.arc + 1} is too short")
        k = chain.K - 1
        r = float(chain.radii[k])
        f, _, _ = radial_profile(r)
        jump = sigma_fe[chain.plus[k]] - sigma_fe[chain.minus[k]]
        alpha[chain.arc] = float(jump / (2.0 * f))
        diag[f"node_{chain.arc + 1}"] = int(chain.vertices[k])
    return ExtractionResult(tuple(alpha), "trace_jump", {}, diag)
