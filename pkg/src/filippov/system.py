"""Two-zone piecewise-smooth planar systems and pointwise analysis of the
switching set.

A system is a pair of smooth vector fields glued along the zero set of a
switching function with 0 as a regular value.  This module classifies
switching-set points (sewing / escaping / sliding / folds / pseudo
equilibria), evaluates the sliding (Filippov) field, and computes the
direction function that encodes the sliding orientation.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import expr as ex
from .expr import Expr

__all__ = [
    "NonSmoothSystem", "SigmaClass", "Region", "Stability",
    "AxisChart", "TracedChart", "sigma_chart",
    "classify_point", "sliding_field", "filippov_combination",
    "tangential_speed", "direction_function", "direction_samples",
    "pseudo_equilibria",
    "NotSlidingError", "DegenerateFrameError", "DirectionUndefinedError",
    "AnalysisError",
]

UPPER = "upper"
LOWER = "lower"

TANGENCY_TOL = 1e-9          # relative band for "a Lie derivative vanishes"
STABILITY_TOL = 1e-6         # |dH/ds| below this -> non-hyperbolic
DOUBLE_ZERO_TOL = 1e-10      # |H| at a refined minimum counting as a zero


class AnalysisError(Exception):
    pass


class NotSlidingError(AnalysisError):
    pass


class DegenerateFrameError(AnalysisError):
    pass


class DirectionUndefinedError(AnalysisError):
    pass


class Region(Enum):
    SEWING = "Sewing"
    ESCAPING = "Escaping"
    SLIDING = "Sliding"
    FOLD = "Fold"
    PSEUDO_EQUILIBRIUM = "PseudoEquilibrium"
    DEGENERATE = "Degenerate"


class Stability(Enum):
    SIGMA_SADDLE = "SigmaSaddle"
    SIGMA_ATTRACTOR = "SigmaAttractor"
    SIGMA_REPELLER = "SigmaRepeller"
    NON_HYPERBOLIC = "NonHyperbolic"


@dataclass(frozen=True)
class SigmaClass:
    region: Region
    which: str | None = None        # fold owner: "upper" | "lower"
    visible: bool | None = None
    stability: Stability | None = None
    reason: str = ""

    @property
    def is_fold(self) -> bool:
        return self.region is Region.FOLD

    def __str__(self):
        if self.region is Region.FOLD:
            vis = "Visible" if self.visible else "Invisible"
            return f"Fold{vis}({self.which})"
        if self.region is Region.PSEUDO_EQUILIBRIUM:
            return f"PseudoEquilibrium({self.stability.value})"
        if self.region is Region.DEGENERATE:
            return f"Degenerate({self.reason})"
        return self.region.value


@dataclass(frozen=True)
class NonSmoothSystem:
    """The triple (upper field, lower field, switching function).

    The upper field governs {switching >= 0}, the lower one {switching <= 0}.
    First and second Lie derivatives of the switching function along both
    fields are derived symbolically once and cached.
    """

    upper: tuple[Expr, Expr]
    lower: tuple[Expr, Expr]
    switching: Expr

    @staticmethod
    def from_strings(upper, lower, switching="y") -> "NonSmoothSystem":
        return NonSmoothSystem(
            (ex.parse(upper[0]), ex.parse(upper[1])),
            (ex.parse(lower[0]), ex.parse(lower[1])),
            ex.parse(switching),
        )

    @cached_property
    def gradient(self) -> tuple[Expr, Expr]:
        return (self.switching.diff("x"), self.switching.diff("y"))

    def _lie(self, which: str, of: Expr) -> Expr:
        fx, fy = of.diff("x"), of.diff("y")
        gx, gy = self.upper if which == UPPER else self.lower
        return ex.add(ex.mul(fx, gx), ex.mul(fy, gy))

    @cached_property
    def _lie_table(self) -> dict[tuple[str, int], Expr]:
        first = {w: self._lie(w, self.switching) for w in (UPPER, LOWER)}
        return {
            (UPPER, 1): first[UPPER],
            (LOWER, 1): first[LOWER],
            (UPPER, 2): self._lie(UPPER, first[UPPER]),
            (LOWER, 2): self._lie(LOWER, first[LOWER]),
        }

    def lie_derivative(self, which: str, order: int = 1) -> Expr:
        """Directional derivative of the switching function along a field,
        iterated `order` times (order 1 or 2)."""
        return self._lie_table[(which, order)]

    # -- compiled accessors -------------------------------------------------
    def field_fn(self, which: str, vector: bool = False):
        gx, gy = self.upper if which == UPPER else self.lower
        return ex.compiled(gx, vector), ex.compiled(gy, vector)

    def field_at(self, which: str, q) -> np.ndarray:
        fx, fy = self.field_fn(which)
        return np.array([fx(q[0], q[1]), fy(q[0], q[1])])

    def switching_at(self, q) -> float:
        return ex.compiled(self.switching)(q[0], q[1])

    def gradient_at(self, q) -> np.ndarray:
        gx, gy = self.gradient
        return np.array([ex.compiled(gx)(q[0], q[1]), ex.compiled(gy)(q[0], q[1])])

    def lie_at(self, which: str, q, order: int = 1) -> float:
        return ex.compiled(self.lie_derivative(which, order))(q[0], q[1])


# ---------------------------------------------------------------------------
# switching-set charts

class AxisChart:
    """Chart for a bare coordinate switching function (f = x or f = y):
    the other coordinate parameterizes the switching line exactly."""

    closed = False
    span = None

    def __init__(self, switch_axis: str):
        self.switch_axis = switch_axis

    def point(self, z: float) -> np.ndarray:
        return np.array([z, 0.0]) if self.switch_axis == "y" else np.array([0.0, z])

    def tangent(self, z: float) -> np.ndarray:
        return np.array([1.0, 0.0]) if self.switch_axis == "y" else np.array([0.0, 1.0])

    def param_of(self, q) -> float:
        return float(q[0] if self.switch_axis == "y" else q[1])

    def points(self, zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        zero = np.zeros_like(zs)
        return (zs, zero) if self.switch_axis == "y" else (zero, zs)


def _project_to_sigma(sys: NonSmoothSystem, q, tol=1e-13, max_iter=25) -> np.ndarray:
    q = np.asarray(q, dtype=float).copy()
    for _ in range(max_iter):
        fv = sys.switching_at(q)
        if abs(fv) <= tol * (1.0 + float(np.abs(q).max())):
            return q
        g = sys.gradient_at(q)
        n2 = float(g @ g)
        if n2 == 0.0:
            raise DegenerateFrameError(f"vanishing gradient near {tuple(q)}")
        q -= fv * g / n2
    return q


class TracedChart:
    """Arclength chart for a general switching function, built by numerical
    continuation of the zero set from a seed point.

    The tracing direction is the gradient rotated clockwise, so the upper
    zone lies to the left of increasing parameter.
    """

    def __init__(self, sys: NonSmoothSystem, seed, step=1e-2, max_points=200_000,
                 bound=1e3):
        self.sys = sys
        q = _project_to_sigma(sys, np.asarray(seed, dtype=float))
        pts = [q.copy()]
        params = [0.0]

        def unit_tangent(p):
            g = sys.gradient_at(p)
            ng = float(np.hypot(*g))
            if ng < 1e-12:
                raise DegenerateFrameError(f"vanishing gradient at {tuple(p)}")
            return np.array([g[1], -g[0]]) / ng

        closed = False
        for direction in (+1.0, -1.0):
            p = q.copy()
            s = 0.0
            for _ in range(max_points):
                t = unit_tangent(p) * direction
                p = _project_to_sigma(sys, p + step * t)
                s += direction * step
                if direction > 0:
                    pts.append(p.copy())
                    params.append(s)
                else:
                    pts.insert(0, p.copy())
                    params.insert(0, s)
                if np.abs(p).max() > bound:
                    break
                if direction > 0 and s > 2 * step and np.hypot(*(p - q)) < 0.75 * step:
                    closed = True
                    break
            if closed:
                break

        self.points_arr = np.asarray(pts)
        self.params_arr = np.asarray(params)
        self.closed = closed
        self.span = (float(self.params_arr[0]), float(self.params_arr[-1]))

    def point(self, z: float) -> np.ndarray:
        zs = self.params_arr
        z = float(np.clip(z, zs[0], zs[-1]))
        i = min(np.searchsorted(zs, z), len(zs) - 1)
        if i == 0:
            i = 1
        w = (z - zs[i - 1]) / (zs[i] - zs[i - 1])
        guess = (1 - w) * self.points_arr[i - 1] + w * self.points_arr[i]
        return _project_to_sigma(self.sys, guess)

    def tangent(self, z: float) -> np.ndarray:
        g = self.sys.gradient_at(self.point(z))
        return np.array([g[1], -g[0]]) / float(np.hypot(*g))

    def param_of(self, q) -> float:
        d = np.hypot(*(self.points_arr - np.asarray(q)).T)
        return float(self.params_arr[int(np.argmin(d))])

    def points(self, zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.array([self.point(z) for z in zs])
        return pts[:, 0], pts[:, 1]


def sigma_chart(sys: NonSmoothSystem, seed=None, **kwargs):
    """Pick the natural chart: exact coordinate chart when the switching
    function is a bare variable, traced arclength chart otherwise."""
    if isinstance(sys.switching, ex.Var):
        return AxisChart(sys.switching.name)
    if seed is None:
        raise AnalysisError("general switching function needs a seed point")
    return TracedChart(sys, seed, **kwargs)


# ---------------------------------------------------------------------------
# pointwise classification

def _rotated_tangent(sys: NonSmoothSystem, q) -> np.ndarray:
    g = sys.gradient_at(q)
    ng = float(np.hypot(*g))
    if ng < 1e-12:
        raise DegenerateFrameError(f"vanishing gradient at {tuple(q)}")
    return np.array([g[1], -g[0]]) / ng


def filippov_combination(sys: NonSmoothSystem, q) -> np.ndarray:
    """Convex combination of the two fields tangent to the switching set,
    evaluated without any region check (the formula extends continuously
    past fold points, which the integrators rely on)."""
    l1 = sys.lie_at(UPPER, q)
    l2 = sys.lie_at(LOWER, q)
    x1 = sys.field_at(UPPER, q)
    x2 = sys.field_at(LOWER, q)
    den = l2 - l1
    if den == 0.0:
        if np.allclose(x1, x2):
            return x1
        raise DirectionUndefinedError("equal normal components")
    return (l2 * x1 - l1 * x2) / den


def sliding_field(sys: NonSmoothSystem, q) -> np.ndarray:
    """Filippov sliding/escaping field at a point of those regions."""
    l1 = sys.lie_at(UPPER, q)
    l2 = sys.lie_at(LOWER, q)
    x1 = sys.field_at(UPPER, q)
    x2 = sys.field_at(LOWER, q)
    ngrad = float(np.hypot(*sys.gradient_at(q)))
    tol1 = TANGENCY_TOL * (1.0 + np.hypot(*x1) * ngrad)
    tol2 = TANGENCY_TOL * (1.0 + np.hypot(*x2) * ngrad)
    tangent1, tangent2 = abs(l1) <= tol1, abs(l2) <= tol2
    if tangent1 != tangent2:
        raise NotSlidingError(
            f"fold point {tuple(np.asarray(q))} (L1={l1:.3g}, L2={l2:.3g})")
    if not tangent1 and l1 * l2 > 0:
        raise NotSlidingError(
            f"point {tuple(np.asarray(q))} lies in a sewing region "
            f"(L1={l1:.3g}, L2={l2:.3g})")
    return filippov_combination(sys, q)


def tangential_speed(sys: NonSmoothSystem, q, tangent) -> float:
    return float(filippov_combination(sys, q) @ np.asarray(tangent))


def direction_function(sys: NonSmoothSystem, z: float, chart) -> float:
    """Signed displacement p(z) - z of the segment construction in the chart
    frame.  Negative values orient the sliding flow toward decreasing
    parameter, zeros are pseudo equilibria."""
    q = chart.point(z)
    g = sys.gradient_at(q)
    ng = float(np.hypot(*g))
    if ng < 1e-12:
        raise DegenerateFrameError(f"vanishing gradient at {tuple(q)}")
    n = g / ng
    t = chart.tangent(z)
    x1 = sys.field_at(UPPER, q)
    x2 = sys.field_at(LOWER, q)
    d1, d2 = float(x1 @ t), float(x1 @ n)
    e1, e2 = float(x2 @ t), float(x2 @ n)
    if abs(e2 - d2) < 1e-14 * (1.0 + abs(d2) + abs(e2)):
        raise DirectionUndefinedError(f"normal components coincide at z={z}")
    p = ((d1 + z) * e2 - d2 * (e1 + z)) / (e2 - d2)
    return p - z


def direction_samples(sys: NonSmoothSystem, zs: np.ndarray, chart) -> np.ndarray:
    """Vectorized direction function over chart parameters (nan where the
    frame degenerates)."""
    if isinstance(chart, AxisChart):
        xs, ys = chart.points(np.asarray(zs, dtype=float))
        gxe, gye = sys.gradient
        gx = ex.compiled(gxe, vector=True)(xs, ys) + 0.0 * xs
        gy = ex.compiled(gye, vector=True)(xs, ys) + 0.0 * xs
        ng = np.hypot(gx, gy)
        u1x, u1y = sys.field_fn(UPPER, vector=True)
        u2x, u2y = sys.field_fn(LOWER, vector=True)
        f1 = np.array([u1x(xs, ys) + 0.0 * xs, u1y(xs, ys) + 0.0 * xs])
        f2 = np.array([u2x(xs, ys) + 0.0 * xs, u2y(xs, ys) + 0.0 * xs])
        if chart.switch_axis == "y":
            tx, ty = np.ones_like(xs), np.zeros_like(xs)
        else:
            tx, ty = np.zeros_like(xs), np.ones_like(xs)
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = f1[0] * tx + f1[1] * ty
            d2 = (f1[0] * gx + f1[1] * gy) / ng
            e1 = f2[0] * tx + f2[1] * ty
            e2 = (f2[0] * gx + f2[1] * gy) / ng
            return (d1 * e2 - d2 * e1) / (e2 - d2)
    out = np.empty(len(zs))
    for i, z in enumerate(zs):
        try:
            out[i] = direction_function(sys, z, chart)
        except AnalysisError:
            out[i] = np.nan
    return out


def _direction_slope(sys, q, step=None) -> float:
    """Arclength derivative of the direction function at a switching point,
    by central differences along the projected switching set."""
    t = _rotated_tangent(sys, q)
    h = step or 1e-5 * (1.0 + float(np.abs(q).max()))

    def h_at(p):
        p = _project_to_sigma(sys, p)
        tt = _rotated_tangent(sys, p)
        g = sys.gradient_at(p)
        n = g / float(np.hypot(*g))
        x1 = sys.field_at(UPPER, p)
        x2 = sys.field_at(LOWER, p)
        d1, d2 = float(x1 @ tt), float(x1 @ n)
        e1, e2 = float(x2 @ tt), float(x2 @ n)
        return (d1 * e2 - d2 * e1) / (e2 - d2)

    return (h_at(q + h * t) - h_at(q - h * t)) / (2.0 * h)


def classify_point(sys: NonSmoothSystem, q, *, tol: float = TANGENCY_TOL,
                   stability_tol: float = STABILITY_TOL) -> SigmaClass:
    """Classify a point of the switching set.

    Folds are tangencies of a single field (first Lie derivative inside the
    tolerance band, second one outside); the fold of the upper field is
    visible when its second Lie derivative is positive, of the lower field
    when negative.  Pseudo equilibria are zeros of the sliding field inside
    the sliding/escaping region, typed by the sliding-flow stability.
    """
    q = np.asarray(q, dtype=float)
    grad = sys.gradient_at(q)
    ngrad = float(np.hypot(*grad))
    l1, l2 = sys.lie_at(UPPER, q), sys.lie_at(LOWER, q)
    x1, x2 = sys.field_at(UPPER, q), sys.field_at(LOWER, q)
    tol1 = tol * (1.0 + np.hypot(*x1) * ngrad)
    tol2 = tol * (1.0 + np.hypot(*x2) * ngrad)
    tangent1, tangent2 = abs(l1) <= tol1, abs(l2) <= tol2

    if tangent1 and tangent2:
        return SigmaClass(Region.DEGENERATE, reason="both fields tangent")
    if tangent1 or tangent2:
        which = UPPER if tangent1 else LOWER
        second = sys.lie_at(which, q, order=2)
        tol_second = tol * (1.0 + np.hypot(*(x1 if tangent1 else x2)) ** 2)
        if abs(second) <= tol_second:
            return SigmaClass(Region.DEGENERATE, which=which,
                              reason="first and second Lie derivatives vanish")
        visible = second > 0 if which == UPPER else second < 0
        return SigmaClass(Region.FOLD, which=which, visible=visible)

    if l1 * l2 > 0:
        return SigmaClass(Region.SEWING)

    region = Region.ESCAPING if l1 > 0 else Region.SLIDING
    den = l2 - l1
    if den == 0.0:
        return SigmaClass(Region.DEGENERATE, reason="equal normal components")
    slide = (l2 * x1 - l1 * x2) / den
    if np.hypot(*slide) > tol * (1.0 + max(np.hypot(*x1), np.hypot(*x2))):
        return SigmaClass(region)

    slope = _direction_slope(sys, q)
    if abs(slope) < stability_tol:
        stab = Stability.NON_HYPERBOLIC
    elif slope < 0:  # attractor of the sliding flow
        stab = Stability.SIGMA_SADDLE if region is Region.ESCAPING else Stability.SIGMA_ATTRACTOR
    else:            # repeller
        stab = Stability.SIGMA_REPELLER if region is Region.ESCAPING else Stability.SIGMA_SADDLE
    return SigmaClass(Region.PSEUDO_EQUILIBRIUM, stability=stab,
                      reason=region.value.lower())


def pseudo_equilibria(sys: NonSmoothSystem, interval, chart, *,
                      resolution: int | None = None):
    """All zeros of the sliding direction inside a chart interval.

    Simple zeros come from a sign scan plus bisection; double zeros (no sign
    change) are caught as refined local minima of |H| below the double-zero
    tolerance.  Returns [(point, classification)] ordered by parameter.
    """
    a, b = float(interval[0]), float(interval[1])
    n = resolution or 1001
    zs = np.linspace(a, b, n)
    hs = direction_samples(sys, zs, chart)

    def h_of(z):
        return direction_function(sys, z, chart)

    roots: list[float] = []
    finite = np.isfinite(hs)
    for i in range(n - 1):
        if not (finite[i] and finite[i + 1]):
            continue
        if hs[i] == 0.0:
            roots.append(zs[i])
        elif hs[i] * hs[i + 1] < 0:
            roots.append(brentq(h_of, zs[i], zs[i + 1], xtol=1e-12))
    if finite[-1] and hs[-1] == 0.0:
        roots.append(zs[-1])

    # double zeros: interior minima of |H| that never change sign
    mag = np.abs(hs)
    for i in range(1, n - 1):
        if not (finite[i - 1] and finite[i] and finite[i + 1]):
            continue
        if mag[i] < mag[i - 1] and mag[i] < mag[i + 1] and hs[i - 1] * hs[i + 1] > 0:
            res = minimize_scalar(lambda z: abs(h_of(z)),
                                  bounds=(zs[i - 1], zs[i + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            if res.fun < DOUBLE_ZERO_TOL:
                roots.append(float(res.x))

    out = []
    dedupe = max(1e-6 * (1 + max(abs(a), abs(b))), (b - a) / (10.0 * n))
    for z in sorted(roots):
        if out and abs(z - out[-1][0]) < dedupe:
            continue
        q = chart.point(z)
        cls = classify_point(sys, q)
        if cls.region is Region.PSEUDO_EQUILIBRIUM:
            out.append((z, q, cls))
    return [(q, cls) for _, q, cls in out]
