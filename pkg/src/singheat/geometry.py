"""Canonical domains with the singular point pinned at the origin on the boundary.

Three geometries are supported, all with closed-form distance function,
boundary projection and normals:

* ``interval``     -- (0, L) in 1-D, singularity at x = 0;
* ``tangent_disk`` -- disk of radius R centered at (0, R), tangent to the
  origin from above, outward normal (0, -1) there;
* ``parabola_cap`` -- cap {x2 > beta*x1**2} intersected with the ball
  B(0, r1), used for projection and tangency experiments near the origin.

Every domain exposes the constants the weight construction needs:
``R_omega`` (sup of |x| over the closure), ``beta0`` (unique-projection
collar width), ``C_omega`` (tangency constant, |x.n| <= C_omega |x|^2 on
the boundary) and ``E_omega`` (projection growth, |pr(x)| <= E_omega |x|
in the collar near the origin).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

# Safety factor applied to all sampled suprema before they are used as
# certified constants.
SAFETY = 1.1

# Fixed seed for the internal sampling that estimates geometric constants,
# so that a given geometry always carries bit-identical constants.
_CONST_SEED = 20240817


class GeometryError(ValueError):
    """Base class for geometry failures."""


class OutsideDomainError(GeometryError):
    """A point was not inside the closed domain."""


class NonUniqueProjectionError(GeometryError):
    """Boundary projection requested outside the unique-projection collar."""


class BoundaryMembershipError(GeometryError):
    """A point claimed to be on the boundary is not, within tolerance."""


class RegionError(GeometryError):
    """Invalid control-region layout."""


def _as_points(x, dim: int) -> np.ndarray:
    """Coerce scalars / vectors / stacks to an (m, dim) float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        if dim != 1:
            raise GeometryError(f"scalar point given for a {dim}-dimensional domain")
        return a.reshape(1, 1)
    if a.ndim == 1:
        if dim == 1:
            return a.reshape(-1, 1)
        if a.shape[0] != dim:
            raise GeometryError(f"expected a point with {dim} coordinates, got {a.shape[0]}")
        return a.reshape(1, dim)
    if a.ndim == 2 and a.shape[1] == dim:
        return a
    raise GeometryError(f"cannot interpret array of shape {a.shape} as points in R^{dim}")


# ----------------------------------------------------------------------------
# Region descriptors


@dataclass(frozen=True)
class Ball:
    """Open ball, used as a control-region descriptor in 2-D."""

    center: tuple
    radius: float

    def contains(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.sum((x - c) ** 2, axis=-1) < self.radius**2

    def max_abs(self) -> float:
        return float(np.linalg.norm(self.center) + self.radius)

    def min_abs(self) -> float:
        return max(0.0, float(np.linalg.norm(self.center) - self.radius))


@dataclass(frozen=True)
class Interval1D:
    """Open interval (a, b), the 1-D control-region descriptor."""

    a: float
    b: float

    def contains(self, x: np.ndarray) -> np.ndarray:
        xs = x[..., 0] if x.ndim > 1 else x
        return (xs > self.a) & (xs < self.b)

    def max_abs(self) -> float:
        return max(abs(self.a), abs(self.b))

    def min_abs(self) -> float:
        if self.a <= 0.0 <= self.b:
            return 0.0
        return min(abs(self.a), abs(self.b))


class RegionLabel(Enum):
    NEAR_SINGULARITY = "near_singularity"
    CONTROL_CORE = "control_core"
    BULK = "bulk"
    CONTROL_RING = "control_ring"


@dataclass(frozen=True)
class Regions:
    """Control set omega, its core omega0 and the singular radius r0.

    ``r0`` is chosen later by the weights module; until then it is None.
    """

    omega: Ball | Interval1D
    omega0: Ball | Interval1D
    r0: float | None = None
    unit_ball_clear: bool = field(default=True, compare=False)

    def with_r0(self, r0: float) -> "Regions":
        if r0 <= 0:
            raise RegionError(f"r0 must be positive, got {r0}")
        return replace(self, r0=r0)


def make_regions(geometry: "DomainGeometry", omega, omega0, strict: bool = False) -> Regions:
    """Validate the control-region layout against a domain.

    Raises unless ``closure(omega0)`` is inside ``omega`` and the origin is
    away from ``closure(omega)``.  The normalization ``Omega & B1(0) & closure(omega)``
    empty is recorded as a flag; in strict mode it is enforced.  (Desk-scale
    scenarios on domains contained in the unit ball cannot satisfy it; they
    stand for the rescaled picture.)
    """
    if type(omega) is not type(omega0):
        raise RegionError("omega and omega0 must use the same descriptor type")
    if isinstance(omega, Interval1D):
        if geometry.dim != 1:
            raise RegionError("interval regions require a 1-D domain")
        inside = omega.a < omega0.a and omega0.b < omega.b
        zero_clear = omega.a > 0
        in_domain = omega.a >= 0 and omega.b <= geometry.L
    else:
        if geometry.dim != 2:
            raise RegionError("ball regions require a 2-D domain")
        gap = np.linalg.norm(np.asarray(omega.center) - np.asarray(omega0.center))
        inside = gap + omega0.radius < omega.radius
        zero_clear = omega.min_abs() > 0
        in_domain = True  # checked by sampling below
        pts = sample_region_boundary_probe(omega)
        in_domain = bool(np.all(geometry.contains(pts, tol=1e-12)))
    if not inside:
        raise RegionError("closure(omega0) must be contained in omega")
    if not zero_clear:
        raise RegionError("the singular point x=0 must stay out of closure(omega)")
    if not in_domain:
        raise RegionError("omega must be contained in the domain")
    unit_clear = omega.min_abs() > 1.0
    if strict and not unit_clear:
        raise RegionError(
            "strict mode: omega intersects the closed unit ball around the singularity"
        )
    return Regions(omega=omega, omega0=omega0, unit_ball_clear=unit_clear)


def sample_region_boundary_probe(ball: Ball, n: int = 64) -> np.ndarray:
    ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    c = np.asarray(ball.center, dtype=float)
    return c + ball.radius * np.stack([np.sin(ang), np.cos(ang)], axis=1)


def region_classify(geometry: "DomainGeometry", regions: Regions, x) -> list[RegionLabel]:
    """Classify points into the partition near_singularity / omega0 / bulk.

    ``control_ring`` labels the residual null set closure(omega0) \\ omega0.
    """
    if regions.r0 is None:
        raise RegionError("regions.r0 has not been set")
    pts = _as_points(x, geometry.dim)
    if not np.all(geometry.contains(pts, tol=1e-12)):
        raise OutsideDomainError("region_classify: point outside the domain")
    r = np.linalg.norm(pts, axis=1)
    out = []
    in_core = regions.omega0.contains(pts)
    in_closure = _closure_contains(regions.omega0, pts)
    for i in range(len(pts)):
        if r[i] < regions.r0:
            out.append(RegionLabel.NEAR_SINGULARITY)
        elif in_core[i]:
            out.append(RegionLabel.CONTROL_CORE)
        elif in_closure[i]:
            out.append(RegionLabel.CONTROL_RING)
        else:
            out.append(RegionLabel.BULK)
    return out


def _closure_contains(desc, pts: np.ndarray) -> np.ndarray:
    if isinstance(desc, Ball):
        c = np.asarray(desc.center, dtype=float)
        return np.sum((pts - c) ** 2, axis=-1) <= desc.radius**2
    xs = pts[..., 0] if pts.ndim > 1 else pts
    return (xs >= desc.a) & (xs <= desc.b)


# ----------------------------------------------------------------------------
# Domain geometry


@dataclass(frozen=True)
class DomainGeometry:
    """Immutable description of one canonical domain.

    All evaluators are pure and vectorized over stacks of points.
    """

    kind: str
    dim: int
    # shape parameters (unused ones stay at 0)
    L: float = 0.0
    R: float = 0.0
    beta_curv: float = 0.0
    r1: float = 0.0
    # derived constants
    R_omega: float = 0.0
    beta0: float = 0.0
    C_omega: float = 0.0
    E_omega: float = 0.0

    # -- membership ---------------------------------------------------------

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        pts = _as_points(x, self.dim)
        if self.kind == "interval":
            xs = pts[:, 0]
            return (xs >= -tol) & (xs <= self.L + tol)
        if self.kind == "tangent_disk":
            c = self._center()
            return np.sum((pts - c) ** 2, axis=1) <= (self.R + tol) ** 2
        # parabola cap
        x1, x2 = pts[:, 0], pts[:, 1]
        above = x2 >= self.beta_curv * x1**2 - tol
        inside = np.sum(pts**2, axis=1) <= (self.r1 + tol) ** 2
        return above & inside

    def _center(self) -> np.ndarray:
        return np.array([0.0, self.R])

    # -- distance function --------------------------------------------------

    def rho(self, x) -> np.ndarray:
        """Distance to the boundary; zero exactly on the boundary."""
        pts = _as_points(x, self.dim)
        if not np.all(self.contains(pts, tol=1e-10)):
            raise OutsideDomainError("rho: point outside the closed domain")
        return self._rho_raw(pts)

    def _rho_raw(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "interval":
            xs = pts[:, 0]
            return np.minimum(xs, self.L - xs)
        if self.kind == "tangent_disk":
            # R - |x - c| rationalized to stay accurate near the origin
            c = self._center()
            d = np.linalg.norm(pts - c, axis=1)
            num = 2.0 * pts @ c - np.sum(pts**2, axis=1)
            return num / (self.R + d)
        d_par = self._parabola_distance(pts)[0]
        d_arc = self.r1 - np.linalg.norm(pts, axis=1)
        return np.minimum(d_par, d_arc)

    def grad_rho(self, x) -> np.ndarray:
        """Analytic gradient of the distance function (collar points)."""
        pts = _as_points(x, self.dim)
        if self.kind == "interval":
            g = np.where(pts[:, 0] < self.L / 2.0, 1.0, -1.0)
            return g.reshape(-1, 1)
        if self.kind == "tangent_disk":
            c = self._center()
            v = pts - c
            d = np.linalg.norm(v, axis=1, keepdims=True)
            return -v / d
        d_par, a_opt = self._parabola_distance(pts)
        d_arc = self.r1 - np.linalg.norm(pts, axis=1)
        g = np.empty_like(pts)
        for i in range(len(pts)):
            if d_par[i] <= d_arc[i]:
                p = np.array([a_opt[i], self.beta_curv * a_opt[i] ** 2])
                n = self._parabola_normal(a_opt[i])
                # grad rho = (x - pr)/rho = -n(pr)
                g[i] = -n
            else:
                g[i] = -pts[i] / np.linalg.norm(pts[i])
        return g

    # -- boundary projection -------------------------------------------------

    def project(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        r = self.rho(pts)
        if np.any(r >= self.beta0):
            raise NonUniqueProjectionError(
                f"projection requested at rho >= beta0 = {self.beta0}"
            )
        return self._project_raw(pts)

    def _project_raw(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "interval":
            xs = pts[:, 0]
            return np.where(xs < self.L / 2.0, 0.0, self.L).reshape(-1, 1)
        if self.kind == "tangent_disk":
            c = self._center()
            v = pts - c
            d = np.linalg.norm(v, axis=1, keepdims=True)
            return c + self.R * v / d
        d_par, a_opt = self._parabola_distance(pts)
        d_arc = self.r1 - np.linalg.norm(pts, axis=1)
        out = np.empty_like(pts)
        for i in range(len(pts)):
            if d_par[i] <= d_arc[i]:
                out[i] = (a_opt[i], self.beta_curv * a_opt[i] ** 2)
            else:
                out[i] = self.r1 * pts[i] / np.linalg.norm(pts[i])
        return out

    # -- outward normal -------------------------------------------------------

    def normal(self, p) -> np.ndarray:
        pts = _as_points(p, self.dim)
        tol = 1e-8 * max(1.0, self.R_omega)
        if self.kind == "interval":
            xs = pts[:, 0]
            on_bd = (np.abs(xs) <= tol) | (np.abs(xs - self.L) <= tol)
            if not np.all(on_bd):
                raise BoundaryMembershipError("normal: point not on the boundary")
            return np.where(xs < self.L / 2.0, -1.0, 1.0).reshape(-1, 1)
        if self.kind == "tangent_disk":
            c = self._center()
            v = pts - c
            d = np.linalg.norm(v, axis=1)
            if not np.all(np.abs(d - self.R) <= tol):
                raise BoundaryMembershipError("normal: point not on the circle")
            return v / d[:, None]
        x1, x2 = pts[:, 0], pts[:, 1]
        on_par = np.abs(x2 - self.beta_curv * x1**2) <= tol
        on_arc = np.abs(np.sqrt(x1**2 + x2**2) - self.r1) <= tol
        if not np.all(on_par | on_arc):
            raise BoundaryMembershipError("normal: point not on the cap boundary")
        out = np.empty_like(pts)
        for i in range(len(pts)):
            if on_par[i]:
                out[i] = self._parabola_normal(x1[i])
            else:
                out[i] = pts[i] / np.linalg.norm(pts[i])
        return out

    def _parabola_normal(self, a: float) -> np.ndarray:
        b = self.beta_curv
        n = np.array([2.0 * b * a, -1.0])
        return n / np.sqrt(1.0 + 4.0 * b * b * a * a)

    # -- parabola helpers ------------------------------------------------------

    def _parabola_distance(self, pts: np.ndarray):
        """Distance to the parabola x2 = beta*x1^2 and the minimizing abscissa.

        The stationarity condition is the cubic
        ``2 b^2 a^3 + (1 - 2 b x2) a - x1 = 0``.
        """
        b = self.beta_curv
        x1, x2 = pts[:, 0], pts[:, 1]
        if b == 0.0:
            return np.abs(x2), x1.copy()
        d = np.empty(len(pts))
        a_opt = np.empty(len(pts))
        for i in range(len(pts)):
            roots = np.roots([2.0 * b * b, 0.0, 1.0 - 2.0 * b * x2[i], -x1[i]])
            cand = roots[np.abs(roots.imag) < 1e-9 * (1 + np.abs(roots.real))].real
            if cand.size == 0:  # numerical guard; fall back to a dense scan
                cand = np.linspace(-self._parabola_amax(), self._parabola_amax(), 2001)
            f = (x1[i] - cand) ** 2 + (x2[i] - b * cand**2) ** 2
            j = int(np.argmin(f))
            d[i] = np.sqrt(f[j])
            a_opt[i] = cand[j]
        return d, a_opt

    def _parabola_amax(self) -> float:
        """Largest |a| with (a, beta a^2) still inside the closed cap ball."""
        b = self.beta_curv
        if b == 0.0:
            return self.r1
        return float(np.sqrt((np.sqrt(1.0 + 4.0 * b * b * self.r1**2) - 1.0) / (2.0 * b * b)))

    # -- deterministic sampling ------------------------------------------------

    def boundary_sample(self, n: int = 2048, log_refine: bool = True):
        """Deterministic boundary points and outward normals, origin excluded.

        For the parabola cap only the parabola branch is sampled; the closing
        arc is a truncation artifact, not part of the modeled boundary patch.
        """
        if self.kind == "interval":
            pts = np.array([[0.0], [self.L]])
            nrm = np.array([[-1.0], [1.0]])
            keep = pts[:, 0] > 0
            return pts[keep], nrm[keep]
        if self.kind == "tangent_disk":
            t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)[1:]
            if log_refine:
                small = np.concatenate([2.0 ** (-np.arange(1, 40, dtype=float)),
                                        -(2.0 ** (-np.arange(1, 40, dtype=float)))])
                t = np.concatenate([t, np.mod(small, 2.0 * np.pi)])
            p = np.stack([self.R * np.sin(t), 2.0 * self.R * np.sin(t / 2.0) ** 2], axis=1)
            c = self._center()
            nrm = (p - c) / self.R
            return p, nrm
        amax = 0.95 * self._parabola_amax()
        a = np.linspace(-amax, amax, n)
        a = a[np.abs(a) > 1e-12]
        if log_refine:
            small = amax * 2.0 ** (-np.arange(1, 40, dtype=float))
            a = np.concatenate([a, small, -small])
        p = np.stack([a, self.beta_curv * a**2], axis=1)
        nrm = np.stack([self._parabola_normal(ai) for ai in a], axis=0)
        return p, nrm

    def interior_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform rejection sample of the open domain."""
        if self.kind == "interval":
            return rng.uniform(0.0, self.L, size=(n, 1))
        out = []
        need = n
        if self.kind == "tangent_disk":
            c = self._center()
            while need > 0:
                u = rng.uniform(-1.0, 1.0, size=(2 * need + 16, 2)) * self.R
                cand = c + u
                keep = np.sum(u**2, axis=1) < self.R**2
                out.append(cand[keep][:need])
                need -= len(out[-1])
            return np.concatenate(out, axis=0)
        while need > 0:
            cand = rng.uniform(-self.r1, self.r1, size=(4 * need + 16, 2))
            keep = self.contains(cand, tol=-1e-12)
            out.append(cand[keep][:need])
            need -= len(out[-1])
        return np.concatenate(out, axis=0)

    def near_origin_sample(self, n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
        """Uniform sample of the domain clipped to |x| < radius.

        Membership near the origin is decided by the sign of the rationalized
        distance function, which stays exact at radii far below machine scale.
        """
        if self.kind == "interval":
            return (radius * rng.uniform(0.0, 1.0, size=n)).reshape(-1, 1)
        out = []
        need = n
        guard = 0
        while need > 0 and guard < 400:
            guard += 1
            m = 4 * need + 16
            r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=m))
            if self.kind == "tangent_disk":
                phi = rng.uniform(0.05, np.pi - 0.05, size=m)
                cand = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
            else:
                phi = rng.uniform(0.0, 2.0 * np.pi, size=m)
                cand = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
            keep = self._near_origin_inside(cand)
            out.append(cand[keep][:need])
            need -= len(out[-1])
        if need > 0:
            raise GeometryError("near-origin sampling failed")
        return np.concatenate(out, axis=0)

    def _near_origin_inside(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "interval":
            return (pts[:, 0] > 0) & (pts[:, 0] < self.L)
        if self.kind == "tangent_disk":
            c = self._center()
            num = 2.0 * pts @ c - np.sum(pts**2, axis=1)
            return num > 0
        x1, x2 = pts[:, 0], pts[:, 1]
        return (x2 > self.beta_curv * x1**2) & (np.sum(pts**2, axis=1) < self.r1**2)

    def collar_sample(self, n: int, rng: np.random.Generator,
                      width: float | None = None,
                      near_origin: float | None = None) -> np.ndarray:
        """Points with rho < width, optionally restricted to |x| < near_origin."""
        width = self.beta0 if width is None else width
        out = []
        need = n
        guard = 0
        while need > 0 and guard < 200:
            guard += 1
            cand = self.interior_sample(4 * need + 32, rng)
            r = self._rho_raw(cand)
            keep = (r > 0) & (r < width)
            if near_origin is not None:
                keep &= np.linalg.norm(cand, axis=1) < near_origin
            sel = cand[keep]
            out.append(sel[:need])
            need -= len(out[-1])
        if need > 0:
            raise GeometryError("collar sampling failed to fill the request")
        return np.concatenate(out, axis=0)


# ----------------------------------------------------------------------------
# Constant estimation and factories


def _tangency_sup(geom: DomainGeometry, n: int = 4096) -> float:
    pts, nrm = geom.boundary_sample(n)
    r2 = np.sum(pts**2, axis=1)
    keep = r2 > 0
    ratio = np.abs(np.sum(pts * nrm, axis=1))[keep] / r2[keep]
    return float(np.max(ratio)) if ratio.size else 0.0


def _projection_growth_sup(geom: DomainGeometry, n: int = 4096) -> float:
    """Raw sup of |pr(x)|/|x| over collar points near the origin."""
    rng = np.random.default_rng(_CONST_SEED)
    near = geom.beta0 if geom.kind != "parabola_cap" else 0.3 * geom.r1
    pts = geom.collar_sample(n, rng, width=geom.beta0, near_origin=near)
    pr = geom._project_raw(pts)
    ratio = np.linalg.norm(pr, axis=1) / np.linalg.norm(pts, axis=1)
    return float(np.max(ratio))


def _parabola_cap_beta0(geom: DomainGeometry) -> float:
    """Largest collar width (from a dyadic sweep) with unique projections.

    Validated on the patch |x| < 0.6 r1 where the working boundary is the
    parabola branch; nearer the closing arc the cap has corner artifacts.
    """
    rng = np.random.default_rng(_CONST_SEED + 1)
    for k in (2, 3, 4, 5, 6):
        cand = geom.r1 / (2.0**k)
        g = replace(geom, beta0=cand)
        try:
            pts = g.collar_sample(512, rng, width=cand, near_origin=0.6 * geom.r1)
        except GeometryError:
            continue
        d_par = g._parabola_distance(pts)[0]
        d_arc = geom.r1 - np.linalg.norm(pts, axis=1)
        # unique projection onto the parabola branch: the arc never ties
        if np.all(d_arc - d_par > 1e-9 * geom.r1):
            return cand
    raise GeometryError("no collar width with unique projection found for the cap")


def make_interval(L: float) -> DomainGeometry:
    if L <= 0:
        raise GeometryError("interval length must be positive")
    g = DomainGeometry(kind="interval", dim=1, L=L, R_omega=L, beta0=L / 2.0)
    g = replace(g, C_omega=SAFETY * _tangency_sup(g))  # sup = 1/L at x = L
    return replace(g, E_omega=max(1.0, SAFETY * _projection_growth_sup(g)))


def make_tangent_disk(R: float) -> DomainGeometry:
    if R <= 0:
        raise GeometryError("disk radius must be positive")
    g = DomainGeometry(kind="tangent_disk", dim=2, R=R, R_omega=2.0 * R, beta0=R / 2.0)
    g = replace(g, C_omega=SAFETY * _tangency_sup(g))
    return replace(g, E_omega=max(1.0, SAFETY * _projection_growth_sup(g)))


def make_parabola_cap(beta_curv: float, r1: float) -> DomainGeometry:
    if r1 <= 0:
        raise GeometryError("cap radius must be positive")
    g = DomainGeometry(kind="parabola_cap", dim=2, beta_curv=beta_curv, r1=r1,
                       R_omega=r1, beta0=r1 / 4.0)
    g = replace(g, beta0=_parabola_cap_beta0(g))
    g = replace(g, C_omega=SAFETY * _tangency_sup(g))
    return replace(g, E_omega=max(1.0, SAFETY * _projection_growth_sup(g)))


def make_geometry(kind: str, **kw) -> DomainGeometry:
    if kind == "interval":
        return make_interval(kw["L"])
    if kind == "tangent_disk":
        return make_tangent_disk(kw["R"])
    if kind == "parabola_cap":
        return make_parabola_cap(kw["beta_curv"], kw["r1"])
    raise GeometryError(f"unknown geometry kind {kind!r}")
