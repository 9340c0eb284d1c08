"""Event-driven integration of two-zone systems under Filippov semantics.

Smooth arcs run in their own closed half-plane until a localized crossing of
the switching set; sliding arcs integrate the tangential Filippov speed in a
switching-set chart, so the polyline never drifts off the manifold.  The
orbit assembler glues arcs by the sewing / sliding-entry / fold-exit rules.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from . import expr as ex
from .system import (
    UPPER, LOWER, NonSmoothSystem, Region, classify_point, sigma_chart,
    tangential_speed, _project_to_sigma, AnalysisError,
)

__all__ = [
    "Arc", "HybridOrbit", "StopReason", "Section", "ArcKindResult",
    "integrate_arc", "hybrid_orbit", "arc_kind", "fold_census",
    "hybrid_section_return", "FlowError", "NoReturnError",
]

RTOL = 1e-10
ATOL = 1e-12
T_MAX_DEFAULT = 1e3
DOMAIN_BOUND = 1e6
MAX_POLYLINE = 100_000
ARM_BAND = 1e-7          # event functions stay biased until the orbit clears
                         # this relative band around their zero set
SLIDING = "sliding"


class FlowError(AnalysisError):
    pass


class NoReturnError(FlowError):
    pass


class StopReason(Enum):
    CROSSED_SIGMA = "CrossedSigma"
    HIT_FOLD = "HitFold"
    HIT_PSEUDO_EQUILIBRIUM = "HitPseudoEquilibrium"
    TIME_BUDGET = "TimeBudget"
    LEFT_DOMAIN = "LeftDomain"
    HIT_SECTION = "HitSection"


@dataclass
class Arc:
    regime: str                  # "upper" | "lower" | "sliding"
    times: np.ndarray
    points: np.ndarray          # (n, 2)
    stop: StopReason
    stop_detail: str = ""

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @property
    def elapsed(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass
class HybridOrbit:
    arcs: list[Arc]
    transitions: list[tuple[str, np.ndarray]] = field(default_factory=list)
    diagnostic: str = ""

    @property
    def end(self) -> np.ndarray:
        return self.arcs[-1].end


@dataclass
class Section:
    """Oriented transversal segment for return maps."""

    base: np.ndarray
    tip: np.ndarray

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        self.tip = np.asarray(self.tip, dtype=float)
        chord = self.tip - self.base
        self.length = float(np.hypot(*chord))
        if self.length == 0:
            raise ValueError("degenerate section")
        self.direction = chord / self.length
        self.normal = np.array([-self.direction[1], self.direction[0]])

    def signed_dist(self, q) -> float:
        return float((np.asarray(q) - self.base) @ self.normal)

    def coord(self, q) -> float:
        return float((np.asarray(q) - self.base) @ self.direction)

    def contains_projection(self, q) -> bool:
        return -1e-12 <= self.coord(q) <= self.length + 1e-12

    def point(self, s: float) -> np.ndarray:
        return self.base + s * self.direction


def _armed(fn, bias: float, scale: float):
    """Wrap an event function so it stays at `bias` until the trajectory has
    cleared the arming band once; prevents refiring at an on-manifold start."""
    state = {"on": False}

    def evt(t, q):
        v = fn(t, q)
        if not state["on"]:
            if abs(v) > ARM_BAND * scale:
                state["on"] = True
            else:
                return bias
        return v

    return evt


def _resample(sol, t_end: float, cap: int = 4096):
    n = min(cap, MAX_POLYLINE, max(96, 6 * len(sol.t)))
    ts = np.linspace(0.0, t_end, n)
    return ts, sol.sol(ts).T


def _field_arc(sys: NonSmoothSystem, which: str, q0, t_max: float, *,
               backward=False, domain_bound=DOMAIN_BOUND, section: Section | None = None,
               section_direction=0, max_step=np.inf):
    fx, fy = sys.field_fn(which)
    sgn = -1.0 if backward else 1.0
    fsw = ex.compiled(sys.switching)
    scale = 1.0 + float(np.abs(q0).max())

    def rhs(t, q):
        return (sgn * fx(q[0], q[1]), sgn * fy(q[0], q[1]))

    crossing = _armed(lambda t, q: fsw(q[0], q[1]),
                      1.0 if which == UPPER else -1.0, scale)
    crossing.terminal = True
    crossing.direction = -1 if which == UPPER else 1

    def escape(t, q):
        return q[0] * q[0] + q[1] * q[1] - domain_bound * domain_bound
    escape.terminal = True

    events = [crossing, escape]
    if section is not None:
        def sec(t, q):
            return section.signed_dist(q)
        sec.terminal = True
        sec.direction = section_direction
        events.append(sec)

    sol = solve_ivp(rhs, (0.0, t_max), np.asarray(q0, dtype=float),
                    method="DOP853", rtol=RTOL, atol=ATOL, events=events,
                    dense_output=True, max_step=max_step)
    if sol.status == -1:
        raise FlowError(f"integration failed: {sol.message}")

    if sol.status == 0:
        stop, t_end, q_end = StopReason.TIME_BUDGET, t_max, sol.y[:, -1]
    else:
        hits = [(ev[0], i) for i, ev in enumerate(sol.t_events) if len(ev)]
        t_end, idx = min(hits)
        q_end = sol.sol(t_end)
        if idx == 0:
            stop = StopReason.CROSSED_SIGMA
            q_end = _project_to_sigma(sys, q_end)
        elif idx == 1:
            stop = StopReason.LEFT_DOMAIN
        else:
            stop = StopReason.HIT_SECTION
    ts, pts = _resample(sol, t_end)
    pts[-1] = q_end
    return Arc(which, ts, pts, stop)


def _sliding_arc(sys: NonSmoothSystem, q0, t_max: float, chart, *,
                 stop_tol_base=1e-10):
    z0 = chart.param_of(q0)
    l1 = ex.compiled(sys.lie_derivative(UPPER))
    l2 = ex.compiled(sys.lie_derivative(LOWER))

    def speed(z):
        q = chart.point(z)
        return tangential_speed(sys, q, chart.tangent(z))

    stop_tol = stop_tol_base * (1.0 + abs(speed(z0)))

    def rhs(t, z):
        return (speed(z[0]),)

    def fold_upper(t, z):
        q = chart.point(z[0])
        return l1(q[0], q[1])
    fold_upper.terminal = True

    def fold_lower(t, z):
        q = chart.point(z[0])
        return l2(q[0], q[1])
    fold_lower.terminal = True

    def stuck(t, z):
        return abs(speed(z[0])) - stop_tol
    stuck.terminal = True
    stuck.direction = -1

    events = [fold_upper, fold_lower, stuck]
    span = getattr(chart, "span", None)
    if span is not None and not chart.closed:
        def leave(t, z):
            return (z[0] - span[0]) * (span[1] - z[0])
        leave.terminal = True
        events.append(leave)

    sol = solve_ivp(rhs, (0.0, t_max), [z0], method="RK45", rtol=RTOL,
                    atol=ATOL, events=events, dense_output=True)
    if sol.status == -1:
        raise FlowError(f"sliding integration failed: {sol.message}")

    detail = ""
    if sol.status == 0:
        stop, t_end = StopReason.TIME_BUDGET, t_max
    else:
        hits = [(ev[0], i) for i, ev in enumerate(sol.t_events) if len(ev)]
        t_end, idx = min(hits)
        if idx in (0, 1):
            stop = StopReason.HIT_FOLD
            detail = UPPER if idx == 0 else LOWER
        elif idx == 2:
            stop = StopReason.HIT_PSEUDO_EQUILIBRIUM
        else:
            stop = StopReason.LEFT_DOMAIN
    n = min(2048, max(64, 4 * len(sol.t)))
    ts = np.linspace(0.0, t_end, n)
    zs = sol.sol(ts)[0]
    pts = np.array([chart.point(z) for z in zs])
    return Arc(SLIDING, ts, pts, stop, detail)


def integrate_arc(sys: NonSmoothSystem, regime: str, q0, t_max: float = T_MAX_DEFAULT,
                  *, chart=None, backward=False, domain_bound=DOMAIN_BOUND) -> Arc:
    """One arc of a single regime with event-localized termination."""
    if regime == SLIDING:
        if backward:
            raise FlowError("backward sliding arcs are not supported")
        chart = chart or sigma_chart(sys)
        return _sliding_arc(sys, q0, t_max, chart)
    return _field_arc(sys, regime, q0, t_max, backward=backward,
                      domain_bound=domain_bound)


def _landing_regime(sys: NonSmoothSystem, arriving_from: str, q):
    """Filippov continuation after a smooth arc reaches the switching set:
    sliding entry when the opposite field pushes back, sewing crossing when
    it agrees, diagnostic on a tangency of the opposite field."""
    other = LOWER if arriving_from == UPPER else UPPER
    l_other = sys.lie_at(other, q)
    x = sys.field_at(other, q)
    g = np.hypot(*sys.gradient_at(q))
    tol = 1e-9 * (1.0 + np.hypot(*x) * g)
    if abs(l_other) <= tol:
        return None, f"reached a tangency of the {other} field at {tuple(q)}"
    inward = l_other > 0 if other == LOWER else l_other < 0
    return (SLIDING, "") if inward else (other, "")


def hybrid_orbit(sys: NonSmoothSystem, q0, t_max: float = T_MAX_DEFAULT, *,
                 chart=None, max_arcs: int = 500) -> HybridOrbit:
    """Forward orbit through crossings, sliding segments and fold exits."""
    q = np.asarray(q0, dtype=float)
    chart = chart or sigma_chart(sys)
    fval = sys.switching_at(q)
    band = 1e-9 * (1.0 + float(np.abs(q).max()))
    if abs(fval) <= band:
        cls = classify_point(sys, q)
        if cls.region is Region.SEWING:
            regime = UPPER if sys.lie_at(UPPER, q) > 0 else LOWER
        elif cls.region in (Region.SLIDING, Region.ESCAPING):
            regime = SLIDING
        else:
            raise FlowError(f"orbit started at a singular point: {cls}")
    else:
        regime = UPPER if fval > 0 else LOWER

    arcs: list[Arc] = []
    transitions: list[tuple[str, np.ndarray]] = []
    diagnostic = ""
    budget = t_max
    while budget > 1e-12 and len(arcs) < max_arcs:
        arc = integrate_arc(sys, regime, q, budget, chart=chart)
        arcs.append(arc)
        budget -= arc.elapsed
        q = arc.end
        if arc.stop in (StopReason.TIME_BUDGET, StopReason.LEFT_DOMAIN):
            break
        if arc.stop is StopReason.HIT_PSEUDO_EQUILIBRIUM:
            transitions.append(("pseudo-equilibrium", q))
            break
        if arc.stop is StopReason.CROSSED_SIGMA:
            own_l = sys.lie_at(regime, q)
            own_tol = 1e-9 * (1.0 + np.hypot(*sys.field_at(regime, q)))
            if abs(own_l) <= own_tol:
                cls = classify_point(sys, q)
                if cls.is_fold and cls.visible and cls.which == regime:
                    transitions.append(("fold-graze", q))
                    continue
            nxt, why = _landing_regime(sys, regime, q)
            if nxt is None:
                diagnostic = why
                break
            if nxt == SLIDING:
                transitions.append(("sliding-entry", q))
            else:
                cls = classify_point(sys, q)
                if cls.region is not Region.SEWING:
                    raise FlowError(f"crossing at a non-sewing point: {cls} at {tuple(q)}")
                transitions.append(("sewing-crossing", q))
            regime = nxt
            continue
        if arc.stop is StopReason.HIT_FOLD:
            cls = classify_point(sys, q)
            if cls.is_fold and cls.visible:
                transitions.append(("fold-exit", q))
                regime = cls.which
                continue
            diagnostic = f"sliding reached a non-exit point: {cls} at {tuple(q)}"
            break
    return HybridOrbit(arcs, transitions, diagnostic)


# ---------------------------------------------------------------------------
# fold census and fold-to-return arcs

def fold_census(sys: NonSmoothSystem, interval, chart, resolution: int = 2001):
    """Tangency points of either field on a chart interval, refined by
    bisection and classified.  Returns [(param, SigmaClass)]."""
    from scipy.optimize import brentq

    a, b = float(interval[0]), float(interval[1])
    zs = np.linspace(a, b, resolution)
    found: list[float] = []
    for which in (UPPER, LOWER):
        lie = sys.lie_derivative(which)
        if hasattr(chart, "switch_axis"):
            xs, ys = chart.points(zs)
            vals = ex.compiled(lie, vector=True)(xs, ys) + 0.0 * zs
        else:
            f = ex.compiled(lie)
            vals = np.array([f(*chart.point(z)) for z in zs])

        def lie_of(z, f=ex.compiled(lie)):
            q = chart.point(z)
            return f(q[0], q[1])

        for i in range(resolution - 1):
            if vals[i] == 0.0:
                found.append(zs[i])
            elif vals[i] * vals[i + 1] < 0:
                found.append(brentq(lie_of, zs[i], zs[i + 1], xtol=1e-13))
        if vals[-1] == 0.0:
            found.append(zs[-1])

    out = []
    dedupe = max(1e-9, (b - a) * 1e-7)
    for z in sorted(found):
        if out and abs(z - out[-1][0]) < dedupe:
            continue
        cls = classify_point(sys, chart.point(z))
        if cls.is_fold or cls.region is Region.DEGENERATE:
            out.append((z, cls))
    return out


class ArcKind(Enum):
    FOCAL = "Focal"
    GRAPHIC = "Graphic"
    NEITHER = "Neither"


@dataclass
class ArcKindResult:
    kind: ArcKind
    intermediate_folds: int
    return_point: np.ndarray
    arc: Arc
    forward: bool


def arc_kind(sys: NonSmoothSystem, fold_point, *, chart=None,
             t_max: float = T_MAX_DEFAULT) -> ArcKindResult:
    """Classify the arc from a visible fold to its transversal return: focal
    with no tangency strictly in between on the switching set, graphic with
    exactly one."""
    chart = chart or sigma_chart(sys)
    q_fold = np.asarray(fold_point, dtype=float)
    cls = classify_point(sys, q_fold)
    if not (cls.is_fold and cls.visible):
        raise FlowError(f"not a visible fold: {cls} at {tuple(q_fold)}")
    which = cls.which

    arc = _field_arc(sys, which, q_fold, t_max)
    forward = True
    if arc.stop is not StopReason.CROSSED_SIGMA:
        arc = _field_arc(sys, which, q_fold, t_max, backward=True)
        forward = False
    if arc.stop is not StopReason.CROSSED_SIGMA:
        raise NoReturnError("the fold arc does not return to the switching set")
    q_ret = arc.end
    if abs(sys.lie_at(which, q_ret)) <= 1e-9 * (1 + np.hypot(*sys.field_at(which, q_ret))):
        raise NoReturnError("the fold arc returns tangentially")

    za, zb = chart.param_of(q_fold), chart.param_of(q_ret)
    lo, hi = min(za, zb), max(za, zb)
    margin = 1e-7 * (1.0 + hi - lo)
    folds = [z for z, _ in fold_census(sys, (lo, hi), chart)
             if lo + margin < z < hi - margin]
    kind = {0: ArcKind.FOCAL, 1: ArcKind.GRAPHIC}.get(len(folds), ArcKind.NEITHER)
    return ArcKindResult(kind, len(folds), q_ret, arc, forward)


def hybrid_section_return(sys: NonSmoothSystem, section: Section, q0, *,
                          t_max: float = T_MAX_DEFAULT, direction=0,
                          max_crossings: int = 64):
    """First return to a transversal section, sewing crossings allowed along
    the way (sliding would collapse the map and is treated as failure)."""
    q = np.asarray(q0, dtype=float)
    fval = sys.switching_at(q)
    regime = UPPER if fval >= 0 else LOWER
    elapsed = 0.0
    for _ in range(max_crossings):
        scale = 1.0 + float(np.abs(q).max())
        while abs(section.signed_dist(q)) <= 1e-8 * scale:
            # nudge off the section line so the crossing event cannot refire
            v = sys.field_at(regime, q)
            speed = float(np.hypot(*v)) or 1.0
            dt = 1e-7 * scale / speed
            pre = solve_ivp(lambda t, p: sys.field_at(regime, p), (0.0, dt), q,
                            method="RK45", rtol=RTOL, atol=ATOL)
            q = pre.y[:, -1]
            elapsed += dt
        arc = _field_arc(sys, regime, q, t_max - elapsed, section=section,
                         section_direction=direction)
        elapsed += arc.elapsed
        q = arc.end
        if arc.stop is StopReason.HIT_SECTION:
            return q, elapsed
        if arc.stop is not StopReason.CROSSED_SIGMA:
            raise NoReturnError(f"no section return ({arc.stop.value})")
        nxt, why = _landing_regime(sys, regime, q)
        if nxt in (None, SLIDING):
            raise NoReturnError(why or "orbit entered a sliding segment")
        regime = nxt
    raise NoReturnError("too many crossings before returning to the section")
