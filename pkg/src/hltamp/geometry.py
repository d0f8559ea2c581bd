"""Convex geometry in joint configuration space: halfspace polytopes,
projections, Chebyshev centers, and Bezier segments.

Polytopes are stored as A x <= b with unit-normalized rows where possible.
Feasibility and Chebyshev centers go through scipy's linprog (HiGHS), which
is deterministic and comfortably handles the dense, small systems this
planner produces (dimension <= 16, a few hundred rows).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .errors import EmptyPolytopeError, NumericalFailure

EMPTINESS_TOL = 1e-7
PROJECTION_TOL = 1e-6
PROJECTION_MAX_ITERS = 10_000


class HPolytope:
    """Halfspace-represented convex set {x : A x <= b}."""

    def __init__(self, A, b, interior_point=None, normalize=True):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b row counts differ")
        if normalize and A.size:
            norms = np.linalg.norm(A, axis=1)
            keep = norms > 1e-12
            A, b, norms = A[keep], b[keep], norms[keep]
            A = A / norms[:, None]
            b = b / norms
        self.A = A
        self.b = b
        self._interior = None if interior_point is None else np.asarray(interior_point, float)

    @staticmethod
    def box(lo, hi):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        if np.any(hi < lo):
            raise EmptyPolytopeError(f"box with hi < lo: {lo} {hi}")
        m = lo.size
        A = np.vstack([np.eye(m), -np.eye(m)])
        b = np.concatenate([hi, -lo])
        return HPolytope(A, b, interior_point=(lo + hi) / 2)

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def box_bounds(self):
        """(lo, hi) when every row is axis-aligned, else None."""
        if not hasattr(self, "_box_bounds"):
            lo = np.full(self.dim, -np.inf)
            hi = np.full(self.dim, np.inf)
            ok = True
            for row, off in zip(self.A, self.b):
                nz = np.nonzero(np.abs(row) > 1e-12)[0]
                if nz.size != 1:
                    ok = False
                    break
                k = nz[0]
                if row[k] > 0:
                    hi[k] = min(hi[k], off / row[k])
                else:
                    lo[k] = max(lo[k], off / row[k])
            self._box_bounds = (lo, hi) if ok else None
        return self._box_bounds

    @property
    def interior_point(self):
        if self._interior is None:
            self._interior, _ = chebyshev_center(self)
        return self._interior

    def contains(self, x, tol=EMPTINESS_TOL):
        x = np.asarray(x, float)
        return bool(np.all(self.A @ x <= self.b + tol))

    def margin(self, x):
        """Smallest slack over all halfspaces; negative outside."""
        return float(np.min(self.b - self.A @ np.asarray(x, float)))

    def with_rows(self, A_extra, b_extra):
        A2 = np.vstack([self.A, np.atleast_2d(np.asarray(A_extra, float))])
        b2 = np.concatenate([self.b, np.atleast_1d(np.asarray(b_extra, float))])
        return HPolytope(A2, b2)

    def bounding_box(self):
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for k in range(self.dim):
            c = np.zeros(self.dim)
            c[k] = 1.0
            res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=(None, None), method="highs")
            if res.status != 0:
                raise EmptyPolytopeError("bounding box of empty or unbounded polytope")
            lo[k] = res.fun
            res = linprog(-c, A_ub=self.A, b_ub=self.b, bounds=(None, None), method="highs")
            if res.status != 0:
                raise EmptyPolytopeError("bounding box of empty or unbounded polytope")
            hi[k] = -res.fun
        return lo, hi

    def sample(self, rng, n=1, burn_in=30):
        """Hit-and-run samples from the interior; needs a nonempty interior."""
        x = np.array(self.interior_point, float)
        out = np.empty((n, self.dim))
        total = burn_in + n
        for it in range(total):
            d = rng.normal(size=self.dim)
            d /= np.linalg.norm(d)
            Ad = self.A @ d
            slack = self.b - self.A @ x
            lo, hi = -np.inf, np.inf
            pos = Ad > 1e-12
            neg = Ad < -1e-12
            if np.any(pos):
                hi = np.min(slack[pos] / Ad[pos])
            if np.any(neg):
                lo = np.max(slack[neg] / Ad[neg])
            if not np.isfinite(lo) or not np.isfinite(hi):
                raise NumericalFailure("hit-and-run on unbounded polytope")
            if hi < lo:
                lo = hi = 0.0
            t = rng.uniform(lo, hi)
            x = x + t * d
            if it >= burn_in:
                out[it - burn_in] = x
        return out if n > 1 else out[0]

    def to_json(self):
        return {"halfspaces": [[row.tolist(), float(off)]
                               for row, off in zip(self.A, self.b)]}

    @staticmethod
    def from_json(obj):
        if "box" in obj:
            lo, hi = obj["box"]
            return HPolytope.box(lo, hi)
        rows = obj["halfspaces"]
        A = np.array([r[0] for r in rows], float)
        b = np.array([r[1] for r in rows], float)
        return HPolytope(A, b)

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, rows={self.A.shape[0]})"


def chebyshev_center(poly, bound=1e6):
    """Center and radius of the largest inscribed ball, via one LP."""
    A, b = poly.A, poly.b
    m = poly.dim
    norms = np.linalg.norm(A, axis=1)
    A_lp = np.hstack([A, norms[:, None]])
    c = np.zeros(m + 1)
    c[-1] = -1.0
    bounds = [(-bound, bound)] * m + [(0, bound)]
    res = linprog(c, A_ub=A_lp, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise EmptyPolytopeError("chebyshev center of empty polytope")
    x = res.x[:m]
    r = res.x[-1]
    if r < -EMPTINESS_TOL:
        raise EmptyPolytopeError("polytope is empty beyond tolerance")
    return x, float(r)


def is_empty(poly, tol=EMPTINESS_TOL):
    """Feasibility of A x <= b + tol; shared facets count as nonempty."""
    try:
        _, r = chebyshev_center(poly)
    except EmptyPolytopeError:
        return True
    return r < -tol


class Empty:
    """Marker for an empty intersection."""

    def __bool__(self):
        return False


EMPTY = Empty()


def intersect(P, Q, tol=EMPTINESS_TOL):
    """Intersection polytope, or EMPTY when infeasible beyond tol."""
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch")
    R = HPolytope(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b]), normalize=False)
    try:
        x, r = chebyshev_center(R)
    except EmptyPolytopeError:
        return EMPTY
    if r < -tol:
        return EMPTY
    R._interior = x
    return R


def project(poly, x, tol=PROJECTION_TOL, max_iters=PROJECTION_MAX_ITERS):
    """Euclidean projection onto the polytope by Dykstra's alternating
    projections over the halfspaces; exact in one pass for a single
    halfspace and cheap for boxes.
    """
    x = np.asarray(x, float)
    box = poly.box_bounds
    if box is not None:
        return np.clip(x, box[0], box[1])
    if poly.contains(x, tol=0.0):
        return x.copy()
    A, b = poly.A, poly.b
    m = A.shape[0]
    if m == 1:
        viol = A[0] @ x - b[0]
        return x - viol * A[0]

    y = x.copy()
    corrections = np.zeros((m, x.size))
    for it in range(max_iters):
        max_move = 0.0
        for i in range(m):
            z = y + corrections[i]
            viol = A[i] @ z - b[i]
            if viol > 0:
                y_new = z - viol * A[i]
            else:
                y_new = z
            corrections[i] = z - y_new
            max_move = max(max_move, float(np.linalg.norm(y_new - y)))
            y = y_new
        if poly.contains(y, tol=tol) and max_move < tol:
            return y
    if poly.contains(y, tol=10 * tol):
        return y
    raise NumericalFailure(f"projection did not converge after {max_iters} sweeps")


def set_distance(P, Q, iters=200):
    """Minimum distance between two polytopes by alternating projections."""
    x = np.array(P.interior_point, float)
    y = np.array(Q.interior_point, float)
    for _ in range(iters):
        x_new = project(P, y)
        y_new = project(Q, x_new)
        if np.linalg.norm(x_new - x) < 1e-9 and np.linalg.norm(y_new - y) < 1e-9:
            x, y = x_new, y_new
            break
        x, y = x_new, y_new
    return float(np.linalg.norm(x - y))


def contains_polytope(outer, inner, tol=1e-9):
    """Whether every point of `inner` satisfies `outer`, via support LPs."""
    for row, off in zip(outer.A, outer.b):
        res = linprog(-row, A_ub=inner.A, b_ub=inner.b, bounds=(None, None), method="highs")
        if res.status != 0:
            raise EmptyPolytopeError("containment test against empty/unbounded set")
        if -res.fun > off + tol:
            return False
    return True


# ---------------------------------------------------------------------------
# Bezier curves


class BezierSegment:
    """Polynomial curve in Bernstein form over t in [0, 1], with a duration
    used to scale derivatives. Control points inside a convex set certify
    the whole curve stays inside it.
    """

    def __init__(self, control_points, duration=1.0):
        pts = np.atleast_2d(np.asarray(control_points, float))
        if pts.shape[0] < 2:
            raise ValueError("a segment needs at least two control points")
        if duration <= 0:
            raise ValueError("duration must be positive")
        self.control_points = pts
        self.duration = float(duration)

    @property
    def degree(self):
        return self.control_points.shape[0] - 1

    @property
    def dim(self):
        return self.control_points.shape[1]

    def eval(self, t):
        """De Casteljau evaluation at parameter t in [0, 1]."""
        pts = self.control_points.copy()
        n = pts.shape[0]
        for r in range(1, n):
            pts[:n - r] = (1 - t) * pts[:n - r] + t * pts[1:n - r + 1]
        return pts[0]

    def derivative(self, order=1):
        """Derivative curve w.r.t. time (parameter scaled by duration)."""
        pts = self.control_points
        dur = self.duration
        for _ in range(order):
            n = pts.shape[0] - 1
            if n == 0:
                pts = np.zeros((1, self.dim))
                break
            pts = n * (pts[1:] - pts[:-1]) / dur
        if pts.shape[0] < 2:
            pts = np.vstack([pts, pts])
        return BezierSegment(pts, dur)

    def to_json(self):
        return {"control_points": self.control_points.tolist(),
                "duration": self.duration}


def bezier_eval(segment, t):
    return segment.eval(t)


def bezier_derivative(segment, order=1):
    return segment.derivative(order)


def quintic_hermite_segment(p0, v0, a0, p1, v1, a1, duration):
    """Quintic Bezier matching position, velocity, and acceleration at both
    endpoints; the standard Hermite-to-Bernstein conversion."""
    p0, v0, a0 = (np.asarray(z, float) for z in (p0, v0, a0))
    p1, v1, a1 = (np.asarray(z, float) for z in (p1, v1, a1))
    T = float(duration)
    b0 = p0
    b1 = p0 + (T / 5.0) * v0
    b2 = p0 + (2 * T / 5.0) * v0 + (T * T / 20.0) * a0
    b3 = p1 - (2 * T / 5.0) * v1 + (T * T / 20.0) * a1
    b4 = p1 - (T / 5.0) * v1
    b5 = p1
    return BezierSegment([b0, b1, b2, b3, b4, b5], T)
