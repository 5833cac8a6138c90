"""Spherical primitives for the three-arc slit sphere.

Points of the unit sphere are plain ``numpy`` arrays of shape ``(3,)`` or
``(N, 3)``.  The three cut circles are half meridians through the north
pole at azimuths -pi/2, pi/6 and 5pi/6; arc ``i`` runs from the pole down
to colatitude ``delta[i]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = np.array([0.0, 0.0, -1.0])

#: azimuths of the cut circles C1, C2, C3
ARC_AZIMUTHS = (-math.pi / 2, math.pi / 6, 5 * math.pi / 6)

_c, _s = math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)
#: rotation of angle 2pi/3 about the z axis, maps C1 -> C2 -> C3
ROTATION = np.array([[_c, -_s, 0.0], [_s, _c, 0.0], [0.0, 0.0, 1.0]])
#: reflection across the plane x = 0, fixes C1 and swaps C2 <-> C3
REFLECTION = np.diag([-1.0, 1.0, 1.0])

# side tags for points lying exactly on a cut
SIDE_PLUS = 1   # theta -> 0+
SIDE_MINUS = -1  # theta -> 2pi-
_ON_CUT = 1e-12  # angular tolerance for points lying on a cut ray


class DegenerateInput(ValueError):
    """Raised when a point coincides with a tip."""


def unit(v) -> np.ndarray:
    """Renormalize ``v`` (shape ``(3,)`` or ``(N, 3)``) onto the sphere."""
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sphere_point(colatitude, azimuth) -> np.ndarray:
    colatitude = np.asarray(colatitude, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    s = np.sin(colatitude)
    return np.stack([s * np.cos(azimuth), s * np.sin(azimuth), np.cos(colatitude)], axis=-1)


def geodesic_distance(a, b) -> np.ndarray:
    """Great-circle distance between points of the unit sphere.

    Uses ``atan2(|a x b|, a . b)``, which equals the clamped arccos of the
    dot product but keeps full precision for nearby and antipodal points.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


def distance_to_arc(x, azimuth: float, delta: float) -> np.ndarray:
    """Distance from ``x`` to the meridian arc of colatitudes ``[0, delta]``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
    a = x @ u
    b = x[:, 2]
    # x . q(c) = a sin c + b cos c is maximal at c = atan2(a, b)
    cstar = np.clip(np.arctan2(a, b), 0.0, delta)
    best = np.max(
        np.stack([b, a * math.sin(delta) + b * math.cos(delta),
                  a * np.sin(cstar) + b * np.cos(cstar)]),
        axis=0,
    )
    return np.arccos(np.clip(best, -1.0, 1.0))


# ---------------------------------------------------------------------------
# tip frames


@dataclass(frozen=True)
class TipFrame:
    """Geodesic polar frame at a crack tip.

    ``e1`` is the unit tangent pointing along the cut and ``e2 = e1 x tip``,
    so that on a meridian cut the east side has ``theta -> 0+`` and the
    west side ``theta -> 2pi-``.  A point at distance ``r`` and angle
    ``theta`` is ``cos r tip + sin r (cos theta e1 + sin theta e2)``.
    """

    tip: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @classmethod
    def from_direction(cls, tip, direction) -> "TipFrame":
        tip = unit(tip)
        d = np.asarray(direction, dtype=float)
        d = unit(d - np.dot(d, tip) * tip)
        return cls(tip, d, np.cross(d, tip))

    def polar(self, x, side=None) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(r, theta)`` with ``theta`` in ``(0, 2pi)``.

        ``side`` (scalar or array of ``SIDE_PLUS``/``SIDE_MINUS``/0) decides
        the branch for points lying exactly on the cut ray.
        """
        x = np.asarray(x, dtype=float)
        r = geodesic_distance(self.tip, x)
        if np.any(r < 1e-14):
            raise DegenerateInput("point coincides with the tip")
        theta = np.arctan2(x @ self.e2, x @ self.e1)
        theta = np.where(theta < 0.0, theta + 2 * math.pi, theta)
        if side is not None:
            side = np.broadcast_to(np.asarray(side), theta.shape)
            on_cut = (theta < _ON_CUT) | (theta > 2 * math.pi - _ON_CUT)
            theta = np.where(on_cut & (side == SIDE_MINUS), 2 * math.pi, theta)
            theta = np.where(on_cut & (side == SIDE_PLUS), 0.0, theta)
        return r, theta

    def point(self, r, theta) -> np.ndarray:
        r = np.asarray(r, dtype=float)[..., None]
        theta = np.asarray(theta, dtype=float)[..., None]
        return np.cos(r) * self.tip + np.sin(r) * (np.cos(theta) * self.e1 + np.sin(theta) * self.e2)

    def polar_basis(self, r, theta) -> Tuple[np.ndarray, np.ndarray]:
        """Unit tangent vectors along increasing ``r`` and ``theta``."""
        r = np.asarray(r, dtype=float)[..., None]
        theta = np.asarray(theta, dtype=float)[..., None]
        radial = np.cos(theta) * self.e1 + np.sin(theta) * self.e2
        e_r = np.cos(r) * radial - np.sin(r) * self.tip
        e_t = -np.sin(theta) * self.e1 + np.cos(theta) * self.e2
        return e_r, e_t


def tip_polar(frame: TipFrame, x, side=None):
    return frame.polar(x, side)


def arc_frame(arc: int, delta: float) -> TipFrame:
    """Frame at the lower end of arc ``arc``; the cut points back to the pole."""
    az = ARC_AZIMUTHS[arc]
    tip = sphere_point(delta, az)
    north_tangent = np.array([-math.cos(delta) * math.cos(az),
                              -math.cos(delta) * math.sin(az),
                              math.sin(delta)])
    return TipFrame.from_direction(tip, north_tangent)


def north_frame(arc: int) -> TipFrame:
    """Frame at the north pole when it is the free end of a lone arc."""
    az = ARC_AZIMUTHS[arc]
    return TipFrame.from_direction(NORTH, [math.cos(az), math.sin(az), 0.0])


# ---------------------------------------------------------------------------
# cutoff


@dataclass(frozen=True)
class CutoffProfile:
    """C^2 cutoff: 1 on [0, lo], 0 on [hi, inf), quintic smoothstep between."""

    lo: float = 0.5
    hi: float = 1.0

    @property
    def breakpoints(self) -> Tuple[float, float]:
        return (self.lo, self.hi)

    def __call__(self, t):
        return cutoff_eval(self, t)


def cutoff_eval(psi: CutoffProfile, t):
    """Return ``(psi(t), psi'(t), psi''(t))``."""
    t = np.asarray(t, dtype=float)
    w = psi.hi - psi.lo
    u = np.clip((t - psi.lo) / w, 0.0, 1.0)
    inside = (t > psi.lo) & (t < psi.hi)
    smooth = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    d1 = 30.0 * u * u * (1.0 - u) ** 2
    d2 = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)
    val = 1.0 - smooth
    der = np.where(inside, -d1 / w, 0.0)
    der2 = np.where(inside, -d2 / (w * w), 0.0)
    return val, der, der2


# ---------------------------------------------------------------------------
# cut configurations


@dataclass(frozen=True)
class SingularTip:
    """A crack tip that carries a singular enrichment function."""

    label: str          # "1", "2", "3" for arc ends, "N"/"S" for pole tips
    arc: int            # arc whose endpoint this is
    frame: TipFrame
    rho: float


@dataclass(frozen=True)
class CutSpec:
    delta: Tuple[float, float, float]
    rho: Tuple[float, float, float]
    tips: Tuple[SingularTip, ...] = field(default=())

    @property
    def present(self) -> Tuple[bool, bool, bool]:
        return tuple(d > 0.0 for d in self.delta)

    @property
    def mirror_symmetric(self) -> bool:
        return self.delta[1] == self.delta[2]

    @property
    def rotation_symmetric(self) -> bool:
        return self.delta[0] == self.delta[1] == self.delta[2]

    def tip_point(self, arc: int) -> np.ndarray:
        return sphere_point(self.delta[arc], ARC_AZIMUTHS[arc])

    def arc_tip(self, arc: int) -> Optional[SingularTip]:
        for t in self.tips:
            if t.label == str(arc + 1):
                return t
        return None

    def arc_points(self, arc: int, count: int = 64) -> np.ndarray:
        c = np.linspace(0.0, self.delta[arc], count)
        return sphere_point(c, np.full_like(c, ARC_AZIMUTHS[arc]))


def _singular_points(delta) -> list:
    """(label, arc, frame) for every free cut end."""
    present = [i for i in range(3) if delta[i] > 0.0]
    out = []
    reaching_south = [i for i in present if delta[i] >= math.pi]
    for i in present:
        if delta[i] < math.pi or len(reaching_south) == 1:
            out.append((str(i + 1), i, arc_frame(i, delta[i])))
    if len(present) == 1:
        out.append(("N", present[0], north_frame(present[0])))
    return out


def _separation(delta, label, arc, frame, others) -> float:
    """Largest admissible cutoff radius before the 0.9 safety factor."""
    x = frame.tip
    cands = []
    for j in range(3):
        if delta[j] > 0.0 and j != arc:
            cands.append(float(distance_to_arc(x, ARC_AZIMUTHS[j], delta[j])[0]))
    if label == "N":
        cands.append(delta[arc])
    else:
        cands.append(float(geodesic_distance(x, NORTH)))
    for o in others:
        cands.append(0.5 * float(geodesic_distance(x, o.tip)))
    return min(cands)


def make_cut_spec(d1: float, d2: float, d3: float, rho_policy="auto") -> CutSpec:
    """Build the cut geometry for arc lengths ``(d1, d2, d3)``.

    ``rho_policy`` is ``"auto"`` or an explicit triple of cutoff radii for
    the three arc tips (entries for absent arcs are ignored).
    """
    delta = (float(d1), float(d2), float(d3))
    for d in delta:
        if not (0.0 <= d <= math.pi) or not math.isfinite(d):
            raise ValueError(f"arc length {d!r} outside [0, pi]")
    points = _singular_points(delta)
    frames = [p[2] for p in points]
    limits = []
    for k, (label, arc, frame) in enumerate(points):
        others = frames[:k] + frames[k + 1:]
        limits.append(_separation(delta, label, arc, frame, others))

    # mirror/rotation images must get bit-identical radii
    labels = [p[0] for p in points]
    if delta[1] == delta[2] and "2" in labels and "3" in labels:
        i2, i3 = labels.index("2"), labels.index("3")
        limits[i2] = limits[i3] = min(limits[i2], limits[i3])
        if delta[0] == delta[1] and "1" in labels:
            i1 = labels.index("1")
            limits[i1] = limits[i2] = limits[i3] = min(limits[i1], limits[i2])

    rho = [math.nan, math.nan, math.nan]
    tips = []
    for (label, arc, frame), limit in zip(points, limits):
        r_auto = min(0.9 * limit, math.pi / 2)
        if label in "123" and not (isinstance(rho_policy, str) and rho_policy == "auto"):
            r = float(rho_policy[arc])
            if not (0.0 < r < limit):
                raise ValueError(
                    f"cutoff radius {r} for arc {arc + 1} violates the separation bound {limit:.6g}")
        else:
            r = r_auto
        if not r > 1e-12:
            raise ValueError(f"arc lengths {delta} leave no room for a cutoff at tip {label}")
        if label in "123":
            rho[arc] = r
        tips.append(SingularTip(label, arc, frame, r))
    if not (isinstance(rho_policy, str)):
        # explicit radii must keep supports disjoint
        for a in range(len(tips)):
            for b in range(a + 1, len(tips)):
                gap = float(geodesic_distance(tips[a].frame.tip, tips[b].frame.tip))
                if tips[a].rho + tips[b].rho >= gap:
                    raise ValueError("explicit cutoff radii give overlapping supports")
    return CutSpec(delta, tuple(rho), tuple(tips))


def warn_small_rho(spec: CutSpec, h: float) -> None:
    for t in spec.tips:
        if t.rho < 4 * h:
            warnings.warn(
                f"cutoff radius {t.rho:.4g} at tip {t.label} spans fewer than 4 mesh layers (h={h:.4g})",
                stacklevel=3,
            )


def rotate(x, times: int = 1) -> np.ndarray:
    return np.asarray(x) @ np.linalg.matrix_power(ROTATION, times).T


def reflect(x) -> np.ndarray:
    return np.asarray(x) @ REFLECTION.T
