"""Canard-cycle detection, kind classification, hyperbolicity certificates
and one-parameter scans for the sigma-loop bifurcation.

For systems with a single visible fold the detector runs two independent
routes: the three geometric conditions (focal return arc, opposite normal
components, linear independence) and the zero-freeness of the direction
function; their verdicts are asserted to agree.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import expr as ex
from .system import (
    UPPER, LOWER, NonSmoothSystem, Region, SigmaClass, AnalysisError,
    classify_point, direction_function, direction_samples, sigma_chart,
)
from .flow import SLIDING, ArcKind, arc_kind, fold_census, hybrid_section_return, Section

__all__ = [
    "TaggedCycle", "CycleSegment", "CanardReport", "SystemFamily", "ScanRow",
    "ScanResult", "detect_canard_one_fold", "classify_kind", "is_hyperbolic",
    "sigma_loop_scan", "CycleError",
]

DET_TOL = 1e-10          # linear-independence threshold, relative
DOUBLE_ZERO_TOL = 1e-10
CLOSURE_TOL = 1e-8
ETA_TOL = 1e-3           # |return-map slope - 1| below this -> not hyperbolic


class CycleError(AnalysisError):
    pass


@dataclass
class CycleSegment:
    regime: str              # "upper" | "lower" | "sliding"
    points: np.ndarray       # (n, 2)


@dataclass
class TaggedCycle:
    segments: list[CycleSegment]

    def vertices(self) -> np.ndarray:
        chunks = [s.points[:-1] for s in self.segments[:-1]]
        chunks.append(self.segments[-1].points)
        return np.vstack(chunks)

    def scale(self) -> float:
        v = self.vertices()
        return 1.0 + float(np.abs(v).max())

    def closure_gap(self) -> float:
        v = self.vertices()
        return float(np.hypot(*(v[-1] - v[0])))


@dataclass
class CanardReport:
    found: bool
    kind: str | None = None                    # "I" | "II" | "III"
    cycle: TaggedCycle | None = None
    fold_points: list[np.ndarray] = field(default_factory=list)
    contact_interval: tuple[float, float] | None = None
    hyperbolic: bool | None = None
    certificate: dict = field(default_factory=dict)
    verdict_conditions: bool | None = None
    verdict_direction: bool | None = None
    zeros: list[tuple[float, SigmaClass | None]] = field(default_factory=list)
    direction_grid: tuple[np.ndarray, np.ndarray] | None = None
    diagnostics: list[str] = field(default_factory=list)


def _direction_zeros(sys, chart, lo, hi, samples):
    """Zeros of the direction function on [lo, hi]: sign changes plus
    refined |H| minima below the double-zero tolerance.  Returns
    (zs, hs, simple, double)."""
    zs = np.linspace(lo, hi, samples)
    hs = direction_samples(sys, zs, chart)

    def h_of(z):
        return direction_function(sys, z, chart)

    simple: list[float] = []
    double: list[float] = []
    finite = np.isfinite(hs)
    for i in range(samples - 1):
        if not (finite[i] and finite[i + 1]):
            continue
        if hs[i] == 0.0 and lo < zs[i]:
            simple.append(zs[i])
        elif hs[i] * hs[i + 1] < 0:
            simple.append(brentq(h_of, zs[i], zs[i + 1], xtol=1e-13))
    mag = np.abs(hs)
    for i in range(1, samples - 1):
        if not (finite[i - 1] and finite[i] and finite[i + 1]):
            continue
        if mag[i] < mag[i - 1] and mag[i] < mag[i + 1] and hs[i - 1] * hs[i + 1] > 0:
            res = minimize_scalar(lambda z: abs(h_of(z)),
                                  bounds=(zs[i - 1], zs[i + 1]), method="bounded",
                                  options={"xatol": 1e-13})
            if res.fun < DOUBLE_ZERO_TOL:
                double.append(float(res.x))
    merged: list[float] = []
    for z in sorted(simple):
        if not merged or abs(z - merged[-1]) > 1e-6 * (1 + abs(z)):
            merged.append(z)
    dedup_double = [z for z in double
                    if all(abs(z - s) > 1e-6 * (1 + abs(z)) for s in merged)]
    return zs, hs, merged, sorted(dedup_double)


def detect_canard_one_fold(sys: NonSmoothSystem, window, *, chart=None,
                           samples: int = 2000, t_max: float = 1e3) -> CanardReport:
    """Decide existence of a canard cycle for a system with a single visible
    fold inside the census window, and assemble it on success (kind III)."""
    chart = chart or sigma_chart(sys)
    census = fold_census(sys, window, chart)
    if len(census) != 1:
        raise CycleError(f"fold census found {len(census)} tangency points "
                         f"in {tuple(window)}, need exactly 1")
    z_fold, fcls = census[0]
    if not (fcls.is_fold and fcls.visible):
        raise CycleError(f"the single tangency is not a visible fold: {fcls}")
    a_point = chart.point(z_fold)

    akr = arc_kind(sys, a_point, chart=chart, t_max=t_max)
    b_point = akr.return_point
    za, zb = chart.param_of(a_point), chart.param_of(b_point)
    lo, hi = min(za, zb), max(za, zb)

    report = CanardReport(found=False, fold_points=[a_point],
                          contact_interval=(lo, hi))

    # route 1: focal arc, opposite normal components on (A,B], independence on [A,B]
    zs_open = np.linspace(lo, hi, samples)
    mask_open = np.abs(zs_open - z_fold) > (hi - lo) * 1e-6
    pts = np.array([chart.point(z) for z in zs_open])
    l1 = np.array([sys.lie_at(UPPER, p) for p in pts])
    l2 = np.array([sys.lie_at(LOWER, p) for p in pts])
    x1 = np.array([sys.field_at(UPPER, p) for p in pts])
    x2 = np.array([sys.field_at(LOWER, p) for p in pts])
    dets = x1[:, 0] * x2[:, 1] - x1[:, 1] * x2[:, 0]
    det_scale = DET_TOL * (1.0 + np.hypot(*x1.T) * np.hypot(*x2.T))
    cond_focal = akr.kind is ArcKind.FOCAL
    cond_signs = bool(np.all((l1 * l2)[mask_open] < 0))
    cond_indep = bool(np.all(np.abs(dets) > det_scale))
    if cond_indep:
        # grid thresholding misses zeros between samples: reject on a sign
        # change or on a refined interior minimum of |det| under the threshold
        def det_of(z):
            q = chart.point(z)
            u, w = sys.field_at(UPPER, q), sys.field_at(LOWER, q)
            return u[0] * w[1] - u[1] * w[0]

        if np.any(dets[:-1] * dets[1:] < 0):
            cond_indep = False
        else:
            mag = np.abs(dets)
            for i in range(1, samples - 1):
                if mag[i] < mag[i - 1] and mag[i] < mag[i + 1]:
                    res = minimize_scalar(lambda z: abs(det_of(z)),
                                          bounds=(zs_open[i - 1], zs_open[i + 1]),
                                          method="bounded", options={"xatol": 1e-13})
                    if res.fun <= det_scale[i]:
                        cond_indep = False
                        break
    verdict_conditions = cond_focal and cond_signs and cond_indep

    # route 2: the direction function is defined and zero-free on [A,B]
    zs, hs, simple, double = _direction_zeros(sys, chart, lo, hi, samples)
    defined = bool(np.all(np.isfinite(hs)))
    verdict_direction = defined and not simple and not double

    report.verdict_conditions = verdict_conditions
    report.verdict_direction = verdict_direction
    report.direction_grid = (zs, hs)
    if verdict_conditions != verdict_direction:
        raise AnalysisError(
            f"criterion disagreement: conditions={verdict_conditions} "
            f"(focal={cond_focal}, signs={cond_signs}, independent={cond_indep}) "
            f"vs direction-function={verdict_direction}")

    if not verdict_direction:
        if not cond_focal:
            report.diagnostics.append(f"return arc is {akr.kind.value} "
                                      f"({akr.intermediate_folds} folds in between)")
        if not defined:
            report.diagnostics.append("direction function undefined inside the interval")
        for z in simple + double:
            cls = classify_point(sys, chart.point(z))
            report.zeros.append((z, cls))
            report.diagnostics.append(f"direction function has a zero at {z:.12g} ({cls})")
        return report

    m = max(256, samples // 4)
    slide_pts = np.array([chart.point(z) for z in np.linspace(zb, za, m)])
    cycle = TaggedCycle([
        CycleSegment(akr.arc.regime, akr.arc.points),
        CycleSegment(SLIDING, slide_pts),
    ])
    report.found = True
    report.kind = "III"
    report.cycle = cycle
    mid = classify_point(sys, chart.point(0.5 * (lo + hi)))
    report.hyperbolic, report.certificate = is_hyperbolic(sys, cycle, "III", chart=chart)
    report.diagnostics.append(f"contact interval is {mid.region.value.lower()}")
    return report


# ---------------------------------------------------------------------------
# kind classification and hyperbolicity

def _on_sigma_band(sys, q) -> bool:
    return abs(sys.switching_at(q)) <= 1e-8 * (1.0 + float(np.abs(np.asarray(q)).max()))


def _junction_ok(sys, r1: str, r2: str, q) -> tuple[bool, str]:
    cls = classify_point(sys, q) if _on_sigma_band(sys, q) else None
    if SLIDING in (r1, r2):
        if cls is None:
            return False, "sliding junction off the switching set"
        if cls.region in (Region.SLIDING, Region.ESCAPING,
                          Region.PSEUDO_EQUILIBRIUM) or cls.is_fold:
            return True, ""
        return False, f"sliding junction at {cls}"
    if r1 != r2:
        if cls is None or cls.region is not Region.SEWING:
            return False, f"field-to-field junction not at a sewing point ({cls})"
        return True, ""
    if cls is not None and not (cls.is_fold and cls.visible):
        return False, f"same-field touch of the switching set at {cls}"
    return True, ""


def classify_kind(sys: NonSmoothSystem, cycle: TaggedCycle, *, chart=None) -> str:
    """Kind of a regime-tagged closed polyline: I meets the switching set only
    at sewing points, II coincides with it, III carries a visible fold."""
    verts = cycle.vertices()
    scale = cycle.scale()
    if cycle.closure_gap() > CLOSURE_TOL * scale:
        raise CycleError(f"cycle is not closed (gap {cycle.closure_gap():.3g})")

    segs = cycle.segments
    for i, seg in enumerate(segs):
        nxt = segs[(i + 1) % len(segs)]
        gap = float(np.hypot(*(nxt.points[0] - seg.points[-1])))
        if gap > CLOSURE_TOL * scale:
            raise CycleError(f"segment junction gap {gap:.3g} at index {i}")
        ok, why = _junction_ok(sys, seg.regime, nxt.regime, seg.points[-1])
        if not ok:
            raise CycleError(f"junction {i}: {why}")
        fvals = np.array([sys.switching_at(p) for p in seg.points])
        band = 1e-8 * scale
        if seg.regime == UPPER and fvals.min() < -band:
            raise CycleError(f"upper segment {i} leaves the upper zone")
        if seg.regime == LOWER and fvals.max() > band:
            raise CycleError(f"lower segment {i} leaves the lower zone")
        if seg.regime == SLIDING and np.abs(fvals).max() > band:
            raise CycleError(f"sliding segment {i} drifts off the switching set")

    all_on_sigma = all(_on_sigma_band(sys, p) for p in verts[::max(1, len(verts) // 512)])
    if all_on_sigma and all(s.regime == SLIDING for s in segs):
        if chart is None or getattr(chart, "closed", False):
            return "II"
        raise CycleError("cycle lies on a non-compact switching set; "
                         "kind II needs a closed switching curve")

    has_slide = any(s.regime == SLIDING for s in segs)
    visible_fold = False
    for i, seg in enumerate(segs):
        q = seg.points[-1]
        if _on_sigma_band(sys, q):
            cls = classify_point(sys, q)
            if cls.is_fold and cls.visible:
                visible_fold = True
    if has_slide:
        if not visible_fold:
            raise CycleError("sliding contact without a visible fold on the cycle")
        return "III"
    if visible_fold:
        return "III"
    # sewing-only cycle
    for i, seg in enumerate(segs):
        cls = classify_point(sys, seg.points[-1])
        if cls.region is not Region.SEWING:
            raise CycleError(f"contact {i} is {cls}, not a sewing point")
    return "I"


def _return_slope(sys, cycle: TaggedCycle, t_max=1e3) -> tuple[float, float]:
    """Return-map derivative at a transversal section through the cycle point
    farthest from the switching set (two-offset central differences with a
    Richardson combine)."""
    verts = cycle.vertices()
    fvals = np.array([abs(sys.switching_at(p)) for p in verts])
    anchor = verts[int(np.argmax(fvals))]
    which = UPPER if sys.switching_at(anchor) > 0 else LOWER
    v = sys.field_at(which, anchor)
    nv = float(np.hypot(*v))
    if nv == 0:
        raise CycleError("field vanishes on the cycle")
    perp = np.array([-v[1], v[0]]) / nv
    half = 0.05 * cycle.scale()
    section = Section(anchor - half * perp, anchor + half * perp)
    direction = int(np.sign(v @ section.normal))
    s0 = section.coord(anchor)

    def ret(s):
        q, _ = hybrid_section_return(sys, section, section.point(s),
                                     t_max=t_max, direction=direction)
        return section.coord(q)

    d: dict[float, float] = {}
    for h in (1e-4, 2e-4):
        d[h] = (ret(s0 + h * half) - ret(s0 - h * half)) / (2 * h * half)
    slope = (4 * d[1e-4] - d[2e-4]) / 3.0
    err = abs(d[1e-4] - d[2e-4]) / 3.0
    return slope, err


def is_hyperbolic(sys: NonSmoothSystem, cycle: TaggedCycle, kind: str, *,
                  chart=None) -> tuple[bool, dict]:
    """Hyperbolicity with a certificate: return-map slope for kind I, trivial
    for kind II, purity of the non-sewing contact (all sliding or all
    escaping) for kind III."""
    if kind == "II":
        return True, {"reason": "kind II"}
    if kind == "I":
        slope, err = _return_slope(sys, cycle)
        return abs(slope - 1.0) > max(ETA_TOL, 3 * err), \
            {"return_slope": slope, "error": err}
    regions = set()
    for seg in cycle.segments:
        if seg.regime != SLIDING:
            continue
        for p in seg.points[1:-1:max(1, len(seg.points) // 64)]:
            cls = classify_point(sys, p)
            if cls.region in (Region.SLIDING, Region.ESCAPING):
                regions.add(cls.region.value)
            elif cls.region is Region.PSEUDO_EQUILIBRIUM:
                regions.add("PseudoEquilibrium")
    pure = regions <= {"Sliding"} or regions <= {"Escaping"}
    return pure, {"contact_regions": sorted(regions)}


# ---------------------------------------------------------------------------
# one-parameter families and the sigma-loop bifurcation

@dataclass(frozen=True)
class SystemFamily:
    """Textual one-parameter family: the literal `mu` in any component is
    substituted before parsing."""

    upper: tuple[str, str]
    lower: tuple[str, str]
    switching: str = "y"

    def member(self, mu: float) -> NonSmoothSystem:
        literal = repr(float(mu))
        def sub(text):
            return re.sub(r"\bmu\b", f"({literal})", text)
        return NonSmoothSystem.from_strings(
            (sub(self.upper[0]), sub(self.upper[1])),
            (sub(self.lower[0]), sub(self.lower[1])),
            sub(self.switching),
        )


@dataclass
class ScanRow:
    mu: float
    n_zeros: int
    sign_h_at_b: int
    verdict: str


@dataclass
class ScanResult:
    rows: list[ScanRow]
    bifurcation_mu: float | None = None
    bifurcation_z: float | None = None


def _family_interval(family, mu, window, samples, t_max):
    sys = family.member(mu)
    chart = sigma_chart(sys)
    census = fold_census(sys, window, chart)
    if len(census) != 1 or not census[0][1].visible:
        raise CycleError(f"family member mu={mu} has no single visible fold")
    akr = arc_kind(sys, chart.point(census[0][0]), chart=chart, t_max=t_max)
    za = census[0][0]
    zb = chart.param_of(akr.return_point)
    zs, hs, simple, double = _direction_zeros(sys, chart, min(za, zb),
                                              max(za, zb), samples)
    h_b = direction_function(sys, zb, chart)
    return sys, chart, zs, hs, simple, double, h_b, (za, zb)


def _classify_row(mu, simple, double, h_b, h_scale) -> ScanRow:
    tol_b = 1e-9 * (1 + h_scale)
    n = len(simple) + len(double)
    sign_b = int(np.sign(h_b)) if abs(h_b) > tol_b else 0
    if n == 0:
        verdict = "canard" if sign_b != 0 else "boundary_zero"
    elif double and not simple:
        verdict = "sigma_loop"
    elif len(simple) == 1 and not double:
        verdict = "sigma_loop_unstable" if h_b < 0 else "sigma_loop_stable"
    elif n == 2:
        verdict = "pseudo_pair"
    else:
        verdict = f"multiple_zeros_{n}"
    return ScanRow(mu, n, sign_b, verdict)


def sigma_loop_scan(family: SystemFamily, mu_values, window, *,
                    samples: int = 2000, t_max: float = 1e3,
                    locate: bool = True) -> ScanResult:
    """Scan a family for the transition between a zero-free direction
    function (canard) and a pair of pseudo equilibria, and bisect the double
    zero where the two regimes meet."""
    rows: list[ScanRow] = []
    cache: dict[float, tuple] = {}
    for mu in mu_values:
        _, _, zs, hs, simple, double, h_b, _ = cache.setdefault(
            float(mu), _family_interval(family, mu, window, samples, t_max))
        rows.append(_classify_row(mu, simple, double, h_b,
                                  float(np.nanmax(np.abs(hs)))))

    result = ScanResult(rows)
    if not locate:
        return result

    # extremal value of H nearest the axis, signed to cross zero at the
    # double-zero parameter
    def extremal(mu):
        sys, chart, zs, hs, simple, double, h_b, _ = cache.get(float(mu)) or \
            _family_interval(family, mu, window, samples, t_max)
        s = 1.0 if h_b >= 0 else -1.0
        flipped = -s * hs
        i = int(np.nanargmax(flipped))
        lo = zs[max(0, i - 1)]
        hi = zs[min(len(zs) - 1, i + 1)]
        res = minimize_scalar(
            lambda z: s * direction_function(sys, z, chart),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        return -s * float(res.fun), float(res.x)

    bracket = None
    for r0, r1 in zip(rows, rows[1:]):
        zero0, zero1 = r0.n_zeros == 0, r1.n_zeros == 0
        if zero0 != zero1:
            bracket = (r0.mu, r1.mu)
            break
    if bracket is None:
        return result

    lo_mu, hi_mu = bracket
    g_lo, _ = extremal(lo_mu)
    for _ in range(80):
        mid = 0.5 * (lo_mu + hi_mu)
        g_mid, z_mid = extremal(mid)
        if g_mid == 0.0 or hi_mu - lo_mu < 1e-9 * (1 + abs(mid)):
            break
        if (g_mid > 0) == (g_lo > 0):
            lo_mu, g_lo = mid, g_mid
        else:
            hi_mu = mid
    result.bifurcation_mu = 0.5 * (lo_mu + hi_mu)
    _, result.bifurcation_z = extremal(result.bifurcation_mu)
    return result
