"""Smooth blending of a two-zone system across a strip around the switching
set, limit-cycle location for the blended field, and Hausdorff-distance
convergence studies of those cycles against a reference cycle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import expr as ex
from .system import UPPER, LOWER, NonSmoothSystem, AnalysisError
from .flow import Section, _armed

__all__ = [
    "TransitionFunction", "RegularizedField", "CycleEstimate",
    "find_limit_cycle", "hausdorff", "resample_polyline",
    "convergence_study", "StudyRow", "SectionTangencyError", "ConvergenceError",
]


class SectionTangencyError(AnalysisError):
    pass


class ConvergenceError(AnalysisError):
    pass


class TransitionFunction:
    """Monotone ramp equal to -1 left of -1 and +1 right of +1.

    Families: "quintic" (default, C^2 at the clamp points), "cubic", or a
    custom monotone table interpolated with a shape-preserving cubic.
    """

    def __init__(self, family: str = "quintic", table=None):
        self.family = family
        self._interp = None
        if family == "table":
            from scipy.interpolate import PchipInterpolator

            if table is None:
                raise ValueError("table family needs (points, values)")
            us, vs = np.asarray(table[0], float), np.asarray(table[1], float)
            if us[0] > -1.0 or us[-1] < 1.0:
                raise ValueError("custom table must cover [-1, 1]")
            if np.any(np.diff(vs) <= 0):
                raise ValueError("custom table must be strictly increasing")
            if abs(np.interp(-1.0, us, vs) + 1.0) > 1e-12 or \
               abs(np.interp(1.0, us, vs) - 1.0) > 1e-12:
                raise ValueError("custom table must reach -1 and 1 at the ends")
            self._interp = PchipInterpolator(us, vs)
        elif family not in ("quintic", "cubic"):
            raise ValueError(f"unknown transition family {family!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        out = np.empty_like(u)
        low, high = u <= -1.0, u >= 1.0
        mid = ~(low | high)
        out[low], out[high] = -1.0, 1.0
        um = u[mid]
        if self.family == "quintic":
            out[mid] = (15.0 * um - 10.0 * um ** 3 + 3.0 * um ** 5) / 8.0
        elif self.family == "cubic":
            out[mid] = (3.0 * um - um ** 3) / 2.0
        else:
            out[mid] = self._interp(um)
        return float(out[0]) if scalar else out

    def scalar(self, u: float) -> float:
        if u <= -1.0:
            return -1.0
        if u >= 1.0:
            return 1.0
        if self.family == "quintic":
            return (15.0 * u - 10.0 * u ** 3 + 3.0 * u ** 5) / 8.0
        if self.family == "cubic":
            return (3.0 * u - u ** 3) / 2.0
        return float(self._interp(u))


@dataclass
class RegularizedField:
    """Convex blend of the two fields through the transition ramp on the
    strip |switching| <= epsilon; identical to the respective field outside
    (the blend weight is exactly 1 or 0 there)."""

    system: NonSmoothSystem
    epsilon: float
    phi: TransitionFunction = field(default_factory=TransitionFunction)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self._fsw = ex.compiled(self.system.switching)
        self._up = self.system.field_fn(UPPER)
        self._dn = self.system.field_fn(LOWER)
        fsw, eps, phis = self._fsw, self.epsilon, self.phi.scalar
        ux, uy = self._up
        dx, dy = self._dn

        def rhs(t, q):  # allocation-light hot path for the integrators
            x, yy = q[0], q[1]
            fv = fsw(x, yy)
            if fv >= eps:
                return (ux(x, yy), uy(x, yy))
            if fv <= -eps:
                return (dx(x, yy), dy(x, yy))
            w = 0.5 + 0.5 * phis(fv / eps)
            wm = 1.0 - w
            return (w * ux(x, yy) + wm * dx(x, yy),
                    w * uy(x, yy) + wm * dy(x, yy))

        self.rhs = rhs

    def weight(self, q) -> float:
        u = self._fsw(q[0], q[1]) / self.epsilon
        if u >= 1.0:
            return 1.0
        if u <= -1.0:
            return 0.0
        return 0.5 + 0.5 * self.phi(u)

    def __call__(self, q) -> np.ndarray:
        w = self.weight(q)
        ux, uy = self._up
        if w == 1.0:
            return np.array([ux(q[0], q[1]), uy(q[0], q[1])])
        dx, dy = self._dn
        if w == 0.0:
            return np.array([dx(q[0], q[1]), dy(q[0], q[1])])
        return np.array([w * ux(q[0], q[1]) + (1 - w) * dx(q[0], q[1]),
                         w * uy(q[0], q[1]) + (1 - w) * dy(q[0], q[1])])


@dataclass
class CycleEstimate:
    points: np.ndarray
    period: float
    multiplier: float
    multiplier_error: float
    section: Section
    fixed_coord: float

    @property
    def hyperbolic(self) -> bool:
        return abs(abs(self.multiplier) - 1.0) > 3.0 * self.multiplier_error

    def closure_gap(self) -> float:
        return float(np.hypot(*(self.points[-1] - self.points[0])))


def _section_return(field: RegularizedField, section: Section, q0, *,
                    direction: int, t_max: float, dense: bool = False):
    """Integrate to the next same-direction crossing of the section segment.

    The step size is capped at epsilon/10 only while |switching| <= 2 eps
    (the stiff strip), by chunking the integration at the strip boundary.
    Starts on the section are pre-rolled off the line so that the stateless
    crossing event cannot refire immediately.
    """
    q = np.asarray(q0, dtype=float)
    eps = field.epsilon
    strip2 = (2.0 * eps) ** 2
    fsw = field._fsw
    elapsed = 0.0
    polys = []
    found = 0

    def crossing(t, p):
        return section.signed_dist(p)
    crossing.terminal = True
    crossing.direction = direction

    scale = 1.0 + float(np.abs(q).max())
    while abs(section.signed_dist(q)) <= 1e-8 * scale:
        speed = float(np.hypot(*field(q))) or 1.0
        dt = 1e-7 * scale / speed
        pre = solve_ivp(field.rhs, (0.0, dt), q, method="LSODA",
                        rtol=1e-10, atol=1e-12, max_step=eps / 10.0,
                        dense_output=dense)
        if dense:
            polys.append(pre.sol(np.linspace(0.0, dt, 8)).T)
        q = pre.y[:, -1]
        elapsed += dt

    # hysteresis radii so boundary events cannot refire at a chunk start:
    # inside chunks run capped up to slightly beyond |f| = 2 eps, outside
    # chunks run uncapped down to exactly |f| = 2 eps
    strip_out2 = strip2 * (1.0 + 1e-6) ** 2
    strip_mid2 = strip2 * (1.0 + 0.5e-6) ** 2
    for _ in range(4096):
        inside = fsw(q[0], q[1]) ** 2 < strip_mid2

        if inside:
            def boundary(t, p):
                return fsw(p[0], p[1]) ** 2 - strip_out2
            boundary.direction = 1
        else:
            def boundary(t, p):
                return fsw(p[0], p[1]) ** 2 - strip2
            boundary.direction = -1
        boundary.terminal = True

        sol = solve_ivp(field.rhs, (0.0, t_max - elapsed), q, method="LSODA",
                        rtol=1e-10, atol=1e-12,
                        max_step=(eps / 10.0 if inside else np.inf),
                        events=[crossing, boundary], dense_output=dense)
        if sol.status == -1:
            raise AnalysisError(f"integration failed: {sol.message}")
        if dense:
            # sample at solver steps plus midpoints: dense where stiff
            ts = np.sort(np.concatenate([sol.t, 0.5 * (sol.t[:-1] + sol.t[1:])]))
            if len(ts) > 20000:
                ts = ts[:: int(np.ceil(len(ts) / 20000))]
            polys.append(sol.sol(ts).T)
        if sol.status == 0:
            raise AnalysisError("no return to the section within the time budget")
        if len(sol.t_events[0]):
            t_hit = sol.t_events[0][0]
            q = sol.y_events[0][0]
            elapsed += t_hit
            if section.contains_projection(q):
                return q, elapsed, (np.vstack(polys) if dense else None)
            found += 1
            if found > 16:
                raise AnalysisError("crossings keep missing the section segment")
            scale = 1.0 + float(np.abs(q).max())
            while abs(section.signed_dist(q)) <= 1e-8 * scale:
                speed = float(np.hypot(*field(q))) or 1.0
                dt = 1e-7 * scale / speed
                pre = solve_ivp(field.rhs, (0.0, dt), q, method="LSODA",
                                rtol=1e-10, atol=1e-12, max_step=eps / 10.0,
                                dense_output=dense)
                if dense:
                    polys.append(pre.sol(np.linspace(0.0, dt, 8)).T)
                q = pre.y[:, -1]
                elapsed += dt
        else:
            q = sol.y_events[1][0]
            elapsed += sol.t_events[1][0]
    raise AnalysisError("strip chunking did not converge")


def find_limit_cycle(field: RegularizedField, section: Section, guess, *,
                     max_iter: int = 50, tol: float = 1e-10,
                     t_max: float = 500.0) -> CycleEstimate:
    """Fixed point of the first-return map on the section by secant
    iteration; the multiplier comes from two-offset divided differences with
    a Richardson combine."""
    guess = np.asarray(guess, dtype=float)
    v = field(guess)
    nv = float(np.hypot(*v))
    if nv == 0.0 or abs(v @ section.normal) < 1e-6 * nv:
        raise SectionTangencyError("section is tangent to the field at the guess")
    direction = int(np.sign(v @ section.normal))

    def ret(s):
        q, t, _ = _section_return(field, section, section.point(s),
                                  direction=direction, t_max=t_max)
        return section.coord(q), t

    s0 = section.coord(guess)
    r0, _ = ret(s0)
    s1, g0 = r0, r0 - s0
    scale = 1.0 + abs(s0)
    if abs(g0) <= tol * scale:
        s_star = s0
    else:
        s_star = None
        for _ in range(max_iter):
            r1, _ = ret(s1)
            g1 = r1 - s1
            if abs(g1) <= tol * scale:
                s_star = s1
                break
            if g1 == g0:
                raise ConvergenceError("secant iteration stalled")
            s2 = s1 - g1 * (s1 - s0) / (g1 - g0)
            lo, hi = -0.25 * section.length, 1.25 * section.length
            if not (lo <= s2 <= hi) or not np.isfinite(s2):
                raise ConvergenceError("secant iteration diverged off the section")
            s0, g0, s1 = s1, g1, s2
        if s_star is None:
            raise ConvergenceError(f"no fixed point after {max_iter} secant steps")

    _, period = ret(s_star)
    h = 1e-4 * (1.0 + abs(s_star))
    d = {}
    for k, hh in ((1, h), (2, 2 * h)):
        rp, _ = ret(s_star + hh)
        rm, _ = ret(s_star - hh)
        d[k] = (rp - rm) / (2 * hh)
    multiplier = (4 * d[1] - d[2]) / 3.0
    mult_err = abs(d[1] - d[2]) / 3.0

    q_end, period, poly = _section_return(
        field, section, section.point(s_star), direction=direction,
        t_max=t_max, dense=True)
    poly[-1] = q_end
    return CycleEstimate(poly, period, multiplier, mult_err, section, s_star)


# ---------------------------------------------------------------------------
# polyline geometry

def resample_polyline(points: np.ndarray, max_seg: float) -> np.ndarray:
    """Insert points so no segment is longer than max_seg (arclength-uniform
    within each original segment)."""
    pts = np.asarray(points, dtype=float)
    a, b = pts[:-1], pts[1:]
    lengths = np.hypot(*(b - a).T)
    counts = np.maximum(1, np.ceil(lengths / max_seg).astype(int))
    total = int(counts.sum())
    seg_idx = np.repeat(np.arange(len(a)), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
    within = (np.arange(total) - np.repeat(offsets, counts) + 1) / np.repeat(counts, counts)
    out = a[seg_idx] + (b - a)[seg_idx] * within[:, None]
    return np.vstack([pts[:1], out])


def _seg_distance(pp: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distances from points pp to the polyline q, exact segment projection."""
    a, b = q[:-1], q[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom[denom == 0.0] = 1.0
    best = np.full(len(pp), np.inf)
    chunk = max(1, int(2e6 / max(1, len(a))))
    for i in range(0, len(pp), chunk):
        block = pp[i:i + chunk]
        ap = block[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("ikj,kj->ik", ap, ab) / denom[None, :], 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d2 = np.sum((block[:, None, :] - closest) ** 2, axis=2)
        best[i:i + chunk] = np.sqrt(d2.min(axis=1))
    return best


def _directed_hausdorff(p: np.ndarray, q: np.ndarray) -> float:
    """max over vertices of p of the distance to the segments of q.

    Large inputs are pre-filtered exactly: the vertex-to-vertex distance d
    brackets the segment distance within half of q's longest segment, so
    only vertices with d above (max d) - (longest q segment)/2 can realize
    the maximum.
    """
    if len(p) * len(q) > 500_000 and len(q) > 1:
        from scipy.spatial import cKDTree

        seg_len = float(np.hypot(*(q[1:] - q[:-1]).T).max())
        d_vv, _ = cKDTree(q).query(p)
        keep = d_vv >= d_vv.max() - 0.5 * seg_len
        return float(_seg_distance(p[keep], q).max())
    return float(_seg_distance(p, q).max())


def hausdorff(p: np.ndarray, q: np.ndarray) -> float:
    """Symmetric Hausdorff distance between polylines, vertices of one
    against segments of the other in both directions."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("empty polyline")
    if len(p) == 1 or len(q) == 1:
        pv = p if len(q) > 1 else q
        sv = q if len(q) > 1 else p
        if len(sv) == 1:
            return float(np.hypot(*(p[0] - q[0])))
        return _directed_hausdorff(pv, sv)
    return max(_directed_hausdorff(p, q), _directed_hausdorff(q, p))


# ---------------------------------------------------------------------------
# convergence study

@dataclass
class StudyRow:
    epsilon: float
    distance: float
    multiplier: float
    period: float
    note: str = ""


def auto_section(sys: NonSmoothSystem, cycle_points: np.ndarray,
                 halflength: float | None = None) -> Section:
    """Transversal section through the cycle point farthest from the
    switching set, perpendicular to the governing field there."""
    pts = np.asarray(cycle_points, dtype=float)
    fvals = np.array([abs(sys.switching_at(p)) for p in pts])
    anchor = pts[int(np.argmax(fvals))]
    which = UPPER if sys.switching_at(anchor) > 0 else LOWER
    v = sys.field_at(which, anchor)
    perp = np.array([-v[1], v[0]]) / float(np.hypot(*v))
    half = halflength or 0.02 * (1.0 + float(np.abs(pts).max()))
    return Section(anchor - half * perp, anchor + half * perp)


def convergence_study(sys: NonSmoothSystem, reference_cycle: np.ndarray,
                      epsilons, *, phi: TransitionFunction | None = None,
                      section: Section | None = None, t_max: float = 500.0,
                      resample: float | None = None) -> list[StudyRow]:
    """Limit cycles of the blended field for a decreasing list of strip
    widths, seeded by continuation, with Hausdorff distance to the reference
    cycle per row.  Raises if the distances fail to decrease strictly."""
    phi = phi or TransitionFunction()
    ref = np.asarray(reference_cycle, dtype=float)
    diameter = float(np.ptp(ref, axis=0).max())
    seg = resample or diameter / 2000.0
    ref_dense = resample_polyline(ref, seg)
    section = section or auto_section(sys, ref)

    guess = None
    for p in ref:
        if section.contains_projection(p) and abs(section.signed_dist(p)) < seg:
            guess = p
            break
    if guess is None:
        i = int(np.argmin([abs(section.signed_dist(p)) +
                           (0 if section.contains_projection(p) else 1e9)
                           for p in ref]))
        guess = ref[i]

    rows: list[StudyRow] = []
    seed = guess
    for eps in epsilons:
        field_eps = RegularizedField(sys, float(eps), phi)
        try:
            est = find_limit_cycle(field_eps, section, seed, t_max=t_max)
        except AnalysisError as err:
            rows.append(StudyRow(float(eps), np.nan, np.nan, np.nan, str(err)))
            continue
        dist = hausdorff(est.points, ref_dense)
        rows.append(StudyRow(float(eps), dist, est.multiplier, est.period))
        seed = section.point(est.fixed_coord)

    finite = [r.distance for r in rows if np.isfinite(r.distance)]
    if len(finite) >= 2 and np.any(np.diff(finite) >= 0):
        raise ConvergenceError(
            "hausdorff distances are not strictly decreasing: "
            + ", ".join(f"{r.epsilon:g}:{r.distance:.3e}" for r in rows))
    return rows
