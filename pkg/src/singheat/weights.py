"""Carleman weight construction.

Builds the boundary-distance profile ``psi1``, the inflated weight
``psi = delta*(psi1 + 1)``, and the space-time weight

    sigma(t, x) = theta(t) * (C_lambda - |x|^2 psi - (|x|/r0)^lambda e^(lambda psi)),
    theta(t)    = (t (T - t))^(-k),   k = 1 + 2/gamma,

together with the parameter recipes for delta, r0 and C_lambda and analytic
derivatives of every spatial factor (the split tau = tau_x2 + tau_phi).

Numerical note: the recipes routinely produce delta in the hundreds, so
e^(lambda psi) overflows IEEE doubles.  Raw evaluators therefore return
extended-precision (``np.longdouble``) values; inequality audits should use
the factored coefficient interface (``psi_bundle`` / ``log_gauge``) which
never forms the exponential explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    Ball,
    DomainGeometry,
    GeometryError,
    Interval1D,
    Regions,
    _as_points,
)

_VALIDATION_SEED = 77003917


class ConstructionError(GeometryError):
    """psi1 cannot be built for the requested control-core placement."""


class InvalidKitError(ValueError):
    pass


class InvalidGammaError(ValueError):
    pass


class InvalidConstantError(ValueError):
    pass


class OutOfTimeWindowError(ValueError):
    pass


# ----------------------------------------------------------------------------
# C^4 smoothstep machinery (degree-9 "smootherstep": first four derivatives
# vanish at both ends, so piecewise profiles glue to global C^4 regularity).

_S9_DERIV_MAX = 630.0 / 256.0  # max of s9' at t = 1/2


def _s9(t):
    return t**5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t))))


def _s9p(t):
    return 630.0 * t**4 * (1.0 - t) ** 4


def _s9pp(t):
    return 2520.0 * t**3 * (1.0 - t) ** 3 * (1.0 - 2.0 * t)


def _S9int(t):
    return t**6 * (21.0 + t * (-60.0 + t * (67.5 + t * (-35.0 + 7.0 * t))))


def smoothstep5(t):
    return t**3 * (10.0 + t * (-15.0 + 6.0 * t))


def smoothstep5_d1(t):
    return 30.0 * t**2 * (1.0 - t) ** 2


def smoothstep5_d2(t):
    return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


# ----------------------------------------------------------------------------
# Interval psi1: integrated slope profile


class _IntervalPsi1:
    """Unimodal C^4 spline equal to the boundary distance on both collars.

    The derivative profile is piecewise {constant | degree-9 ramp}; the zero
    crossing of the profile (the peak of psi1) lands inside omega0 by
    construction and the integral balance pins the steep-side slope so that
    psi1 vanishes at both endpoints.
    """

    def __init__(self, L: float, a: float, b: float):
        m = 0.5 * (a + b)
        # steep descent on the right of omega0
        f1 = b + 0.3 * (L - b)
        f2 = b + 0.7 * (L - b)
        den = 0.5 * (b - m) + (f1 - b) + 0.5 * (f2 - f1)
        num = a + 0.5 * (m - a) - 0.5 * (f2 - f1) - (L - f2)
        g_steep = num / den
        if 0.2 <= g_steep <= 50.0:
            pieces = [
                (0.0, a, "const", 1.0, 1.0),
                (a, m, "ramp", 1.0, 0.0),
                (m, b, "ramp", 0.0, -g_steep),
                (b, f1, "const", -g_steep, -g_steep),
                (f1, f2, "ramp", -g_steep, -1.0),
                (f2, L, "const", -1.0, -1.0),
            ]
            collar = min(a, L - f2)
            floor = min(1.0, g_steep)
        else:
            e1 = 0.3 * a
            e2 = 0.7 * a
            den = 0.5 * (e2 - e1) + (a - e2) + 0.5 * (m - a)
            num = 0.5 * (b - m) + (L - b) - e1 - 0.5 * (e2 - e1)
            g_steep = num / den
            if not (0.2 <= g_steep <= 50.0):
                raise ConstructionError(
                    "interval psi1: no slope profile balances for omega0 "
                    f"({a}, {b}) in (0, {L})"
                )
            pieces = [
                (0.0, e1, "const", 1.0, 1.0),
                (e1, e2, "ramp", 1.0, g_steep),
                (e2, a, "const", g_steep, g_steep),
                (a, m, "ramp", g_steep, 0.0),
                (m, b, "ramp", 0.0, -1.0),
                (b, L, "const", -1.0, -1.0),
            ]
            collar = min(e1, L - b)
            floor = min(1.0, g_steep)
        self.L = L
        self.peak_location = m
        self.pieces = pieces
        self.breaks = np.array([p[0] for p in pieces] + [L])
        self.collar = min(collar, 0.49 * L)
        self.slope_floor = floor
        # cumulative psi1 at the left end of each piece
        acc = [0.0]
        for (xs, xe, kind, v1, v2) in pieces:
            w = xe - xs
            if kind == "const":
                acc.append(acc[-1] + v1 * w)
            else:
                acc.append(acc[-1] + v1 * w + (v2 - v1) * w * 0.5)
        self._acc = np.array(acc)
        self.peak_value = float(self(np.array([[m]]))[0])
        ramp_slopes = [
            abs(v2 - v1) * _S9_DERIV_MAX / (xe - xs)
            for (xs, xe, kind, v1, v2) in pieces
            if kind == "ramp"
        ]
        self.sup_psi1 = self.peak_value
        self.sup_dpsi1 = max(abs(v) for (_, _, _, v1, v2) in pieces for v in (v1, v2))
        self.sup_d2psi1 = max(ramp_slopes)

    def _locate(self, x):
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, len(self.pieces) - 1)
        return idx

    def _eval(self, x, order):
        x = np.asarray(x, dtype=float)
        idx = self._locate(x)
        out = np.empty_like(x)
        for j, (xs, xe, kind, v1, v2) in enumerate(self.pieces):
            sel = idx == j
            if not np.any(sel):
                continue
            xi = x[sel]
            if kind == "const":
                if order == 0:
                    out[sel] = self._acc[j] + v1 * (xi - xs)
                elif order == 1:
                    out[sel] = v1
                else:
                    out[sel] = 0.0
            else:
                w = xe - xs
                t = (xi - xs) / w
                if order == 0:
                    out[sel] = self._acc[j] + v1 * (xi - xs) + (v2 - v1) * w * _S9int(t)
                elif order == 1:
                    out[sel] = v1 + (v2 - v1) * _s9(t)
                else:
                    out[sel] = (v2 - v1) * _s9p(t) / w
        return out

    def __call__(self, pts):
        return self._eval(pts[:, 0], 0)

    def grad(self, pts):
        return self._eval(pts[:, 0], 1).reshape(-1, 1)

    def hess(self, pts):
        return self._eval(pts[:, 0], 2).reshape(-1, 1, 1)

    def radial_deficit(self, pts):
        x = pts[:, 0]
        return x * self._eval(x, 1) - self._eval(x, 0)


# ----------------------------------------------------------------------------
# Tangent-disk psi1: radially smoothed distance function


class _DiskPsi1:
    """psi1 = R - q(|x - c|): the distance function with its center kink
    replaced by the fourth-order Taylor polynomial of sqrt(s) in s = r^2.

    The only critical point is the disk center, which the construction
    requires to sit inside omega0 (with room for the smoothing ball).
    """

    def __init__(self, R: float, omega0: Ball):
        self.R = R
        self.c = np.array([0.0, R])
        dist = float(np.linalg.norm(np.asarray(omega0.center) - self.c))
        avail = omega0.radius - dist
        if avail <= 0.0:
            raise ConstructionError(
                "disk psi1: the critical point of the smoothed distance sits at "
                f"the disk center {tuple(self.c)}, outside omega0"
            )
        self.r_sm = min(0.8 * avail, 0.45 * R)
        s0 = self.r_sm**2
        rt = math.sqrt(s0)
        # Taylor coefficients of sqrt(s) about s0 (in powers of s - s0)
        self._q = np.array([rt, 0.5 / rt, -0.125 / rt**3, 0.0625 / rt**5, -0.0390625 / rt**7])
        self._s0 = s0
        self.collar = min(0.5 * R, R - self.r_sm)
        self.slope_floor = 1.0
        self.peak_value = R - self._qval(0.0)
        self.sup_psi1 = self.peak_value
        grid = np.linspace(0.0, s0, 4001)
        qp = self._qp(grid)
        qpp = self._qpp(grid)
        self.sup_dpsi1 = max(1.0, float(np.max(2.0 * np.sqrt(grid) * qp)))
        # per-entry sups of the Hessian, summed over the N^2 entries
        inner_diag = np.maximum(np.abs(2.0 * qp), np.abs(2.0 * qp + 4.0 * qpp * grid))
        inner_off = 2.0 * np.abs(qpp) * grid
        d_in = float(np.max(inner_diag))
        o_in = float(np.max(inner_off))
        d_out = 1.0 / self.r_sm
        o_out = 0.5 / self.r_sm
        self.sup_d2psi1 = 2.0 * max(d_in, d_out) + 2.0 * max(o_in, o_out)
        self.peak_location = self.c.copy()

    def _powers(self, s):
        v = s - self._s0
        return v

    def _qval(self, s):
        v = np.asarray(s, dtype=float) - self._s0
        q = self._q
        return q[0] + v * (q[1] + v * (q[2] + v * (q[3] + v * q[4])))

    def _qp(self, s):
        v = np.asarray(s, dtype=float) - self._s0
        q = self._q
        return q[1] + v * (2 * q[2] + v * (3 * q[3] + v * 4 * q[4]))

    def _qpp(self, s):
        v = np.asarray(s, dtype=float) - self._s0
        q = self._q
        return 2 * q[2] + v * (6 * q[3] + v * 12 * q[4])

    def __call__(self, pts):
        v = pts - self.c
        s = np.sum(v * v, axis=1)
        out = np.empty(len(pts))
        inner = s < self._s0
        out[inner] = self.R - self._qval(s[inner])
        # rationalized R - |x - c|, exact near the origin
        num = 2.0 * pts[~inner] @ self.c - np.sum(pts[~inner] ** 2, axis=1)
        out[~inner] = num / (self.R + np.sqrt(s[~inner]))
        return out

    def grad(self, pts):
        v = pts - self.c
        s = np.sum(v * v, axis=1)
        out = np.empty_like(pts)
        inner = s < self._s0
        out[inner] = -2.0 * self._qp(s[inner])[:, None] * v[inner]
        r = np.sqrt(s[~inner])[:, None]
        out[~inner] = -v[~inner] / r
        return out

    def hess(self, pts):
        v = pts - self.c
        s = np.sum(v * v, axis=1)
        out = np.empty((len(pts), 2, 2))
        inner = s < self._s0
        if np.any(inner):
            qp = self._qp(s[inner])
            qpp = self._qpp(s[inner])
            vi = v[inner]
            outer_prod = vi[:, :, None] * vi[:, None, :]
            out[inner] = -2.0 * qp[:, None, None] * np.eye(2) - 4.0 * qpp[:, None, None] * outer_prod
        if np.any(~inner):
            vo = v[~inner]
            r = np.sqrt(s[~inner])
            u = vo / r[:, None]
            proj = np.eye(2) - u[:, :, None] * u[:, None, :]
            out[~inner] = -proj / r[:, None, None]
        return out

    def radial_deficit(self, pts):
        """x . grad(psi1) - psi1, evaluated cancellation-free near the origin."""
        v = pts - self.c
        s = np.sum(v * v, axis=1)
        out = np.empty(len(pts))
        inner = s < self._s0
        if np.any(inner):
            pi = pts[inner]
            out[inner] = (
                -2.0 * self._qp(s[inner]) * np.sum(pi * v[inner], axis=1)
                - self.R
                + self._qval(s[inner])
            )
        if np.any(~inner):
            # deficit = ((R - d) (x.c) - R |x|^2) / (d (R + d)) with R - d = rho
            # taken in its rationalized form, so nothing cancels near the origin
            po = pts[~inner]
            d = np.sqrt(s[~inner])
            xc = po @ self.c
            x2 = np.sum(po * po, axis=1)
            rho = (2.0 * xc - x2) / (self.R + d)
            out[~inner] = (rho * xc - self.R * x2) / (d * (self.R + d))
        return out


# ----------------------------------------------------------------------------
# PsiKit


@dataclass(frozen=True)
class PsiKit:
    """psi1 with analytic derivatives plus the constants the recipes need.

    ``delta0`` is the sampled gradient floor over the domain minus the
    control core, ``d_psi1`` the padded supremum of
    |x . grad(psi1) - psi1| / |x|^2 over the domain.
    """

    geometry: DomainGeometry
    omega0: object
    impl: object
    delta0: float
    d_psi1: float
    sup_psi1: float
    sup_dpsi1: float
    sup_d2psi1: float
    beta0_eff: float
    delta: float | None = None

    def psi1(self, x):
        return self.impl(_as_points(x, self.geometry.dim))

    def grad_psi1(self, x):
        return self.impl.grad(_as_points(x, self.geometry.dim))

    def hess_psi1(self, x):
        return self.impl.hess(_as_points(x, self.geometry.dim))

    def lap_psi1(self, x):
        h = self.hess_psi1(x)
        return np.trace(h, axis1=1, axis2=2)

    def radial_deficit(self, x):
        return self.impl.radial_deficit(_as_points(x, self.geometry.dim))

    def with_delta(self, delta: float) -> "PsiKit":
        return replace(self, delta=delta)

    # -- inflated weight ------------------------------------------------------

    def _need_delta(self):
        if self.delta is None:
            raise InvalidKitError("delta has not been chosen for this kit")

    def psi(self, x):
        self._need_delta()
        return self.delta * (self.psi1(x) + 1.0)

    def grad_psi(self, x):
        self._need_delta()
        return self.delta * self.grad_psi1(x)

    def hess_psi(self, x):
        self._need_delta()
        return self.delta * self.hess_psi1(x)

    @property
    def sup_psi(self):
        self._need_delta()
        return self.delta * (self.sup_psi1 + 1.0)

    @property
    def sup_dpsi(self):
        self._need_delta()
        return self.delta * self.sup_dpsi1

    @property
    def sup_d2psi(self):
        self._need_delta()
        return self.delta * self.sup_d2psi1


def build_psi(geometry: DomainGeometry, regions: Regions, n_check: int = 10_000) -> PsiKit:
    """Construct psi1 for the supported geometries and verify its contract.

    Raises ConstructionError if the control core omega0 misses the critical
    point of the smoothed distance, or if any sampled point violates the
    collar/floor conditions.
    """
    if geometry.kind == "interval":
        if not isinstance(regions.omega0, Interval1D):
            raise ConstructionError("interval geometry needs an Interval1D omega0")
        impl = _IntervalPsi1(geometry.L, regions.omega0.a, regions.omega0.b)
    elif geometry.kind == "tangent_disk":
        if not isinstance(regions.omega0, Ball):
            raise ConstructionError("tangent disk needs a Ball omega0")
        impl = _DiskPsi1(geometry.R, regions.omega0)
    else:
        raise ConstructionError(
            f"psi1 construction is not available for geometry kind {geometry.kind!r}; "
            "use interval or tangent_disk"
        )
    kit = PsiKit(
        geometry=geometry,
        omega0=regions.omega0,
        impl=impl,
        delta0=impl.slope_floor,
        d_psi1=0.0,
        sup_psi1=impl.sup_psi1,
        sup_dpsi1=impl.sup_dpsi1,
        sup_d2psi1=impl.sup_d2psi1,
        beta0_eff=impl.collar,
    )
    kit = replace(kit, d_psi1=_estimate_d_psi1(kit))
    _validate_psi1(kit, n_check)
    return kit


def _psi_sample_points(geom: DomainGeometry, n: int, rng) -> np.ndarray:
    pts = geom.interior_sample(n, rng)
    # refine towards the singular corner; that is where every estimate bites
    radii = geom.R_omega * 2.0 ** (-np.arange(2, 42, dtype=float))
    extra = geom.collar_sample(len(radii) * 4, rng, width=geom.beta0)
    near = []
    for r in radii:
        try:
            near.append(geom.collar_sample(4, rng, width=geom.beta0, near_origin=r))
        except GeometryError:
            break
    if near:
        extra = np.concatenate([extra] + near, axis=0)
    return np.concatenate([pts, extra], axis=0)


def _estimate_d_psi1(kit: PsiKit, n: int = 8192) -> float:
    rng = np.random.default_rng(_VALIDATION_SEED)
    pts = _psi_sample_points(kit.geometry, n, rng)
    r2 = np.sum(pts**2, axis=1)
    keep = r2 > 0
    ratio = np.abs(kit.radial_deficit(pts[keep])) / r2[keep]
    sup = float(np.max(ratio))
    if kit.geometry.kind == "tangent_disk":
        # the far pole and the center are the usual maximizers; pin them
        R = kit.geometry.R
        for special in ([0.0, 2.0 * R - 1e-12], [0.0, R]):
            p = np.array([special])
            sup = max(sup, float(np.abs(kit.radial_deficit(p))[0] / np.sum(p**2)))
    return 1.1 * sup


def _validate_psi1(kit: PsiKit, n: int) -> None:
    rng = np.random.default_rng(_VALIDATION_SEED + 1)
    geom = kit.geometry
    pts = geom.interior_sample(n, rng)
    rho = geom.rho(pts)
    psi1 = kit.psi1(pts)
    beta = kit.beta0_eff
    collar = rho < beta
    scale = max(1.0, geom.R_omega)
    if np.any(collar):
        err = np.max(np.abs(psi1[collar] - rho[collar]))
        if err > 1e-9 * scale:
            raise ConstructionError(f"psi1 != rho on the collar (max error {err:.3e})")
    outside = rho > beta * (1.0 + 1e-12)
    if np.any(psi1[outside] <= beta * (1.0 - 1e-12)):
        bad = pts[outside][np.argmin(psi1[outside])]
        raise ConstructionError(f"psi1 <= beta0 outside the collar at {bad}")
    in_core = kit.omega0.contains(pts)
    g = np.linalg.norm(kit.grad_psi1(pts[~in_core]), axis=1)
    gmin = float(np.min(g))
    if gmin < 1e-6:
        bad = pts[~in_core][np.argmin(g)]
        raise ConstructionError(
            f"critical point of psi1 detected outside closure(omega0), near {bad}"
        )
    object.__setattr__(kit, "delta0", min(kit.delta0, gmin))


# ----------------------------------------------------------------------------
# Parameter recipes


def choose_delta(kit: PsiKit, geometry: DomainGeometry | None = None):
    """Exact maximum of the five delta clauses; C'_Omega is taken as 2 C_Omega.

    Returns (delta, clauses) where clauses maps a short name to its value.
    """
    geometry = geometry or kit.geometry
    if kit.delta0 <= 0:
        raise InvalidKitError("delta0 must be positive")
    d0 = kit.delta0
    clauses = {
        "one": 1.0,
        "boundary_sign": 2.0 * (2.0 * geometry.C_omega) / d0,
        "curvature_far": 24.0 * kit.d_psi1 * geometry.R_omega**2 / d0**2,
        "gradient": 2.0 / d0,
        "hessian_sum": (1.0 + 4.0 * kit.d_psi1 + kit.sup_dpsi1 + 2.0 * kit.sup_d2psi1) / d0**2,
    }
    name = max(clauses, key=clauses.get)
    return clauses[name], clauses, name


def choose_r0(
    *,
    sup_dpsi: float,
    sup_d2psi: float,
    sup_psi: float,
    gamma: float,
    mu: float,
    C3: float,
    d_psi1: float,
    delta0: float,
    beta0: float,
):
    """Exact minimum of the eleven r0 clauses from the weight recipe.

    A vanishing mu drops the mu-clause (it is formally +inf).  Returns
    (r0, clauses, binding_name).
    """
    if not (1.0 < gamma < 2.0):
        raise InvalidGammaError(f"gamma must lie in (1, 2), got {gamma}")
    if C3 <= 0:
        raise InvalidConstantError(f"C3 must be positive, got {C3}")
    p = 1.0 / (gamma - 1.0)
    clauses = {
        "one": 1.0,
        "collar": beta0 / 2.0,
        "gamma_gradient": 1.0 / ((2.0 - gamma) * (sup_dpsi + sup_d2psi)),
        "quadratic_form": 1.0 / math.sqrt(2.0 * (3.0 * sup_dpsi**2 + sup_d2psi)),
        "cross_term": 1.0 / (sup_dpsi * math.sqrt(8.0 * sup_psi**2 + 2.0)),
        "hardy_gradient": (C3 / (8.0 * sup_dpsi**2 + 8.0 * sup_d2psi)) ** p,
        "hardy_potential": math.inf if mu == 0.0 else (C3 / (abs(mu) * sup_dpsi)) ** p,
        "gradient_lower": 1.0 / math.sqrt(3.0 * sup_dpsi),
        "peak_product": 1.0 / (2.0 * sup_psi * sup_dpsi),
        "deficit": 1.0 / math.sqrt(8.0 * d_psi1 * sup_dpsi / delta0 + 3.0 * sup_d2psi),
        "hessian_margin": 2.0 / (4.0 * sup_dpsi + sup_d2psi),
    }
    name = min(clauses, key=clauses.get)
    return clauses[name], clauses, name


def choose_C_lambda(lam: float, kit: PsiKit, r0: float, n: int = 8192):
    """Padded supremum of |x|^2 psi + (|x|/r0)^lambda e^(lambda psi) plus one.

    Returned as an extended-precision scalar (it overflows doubles for the
    recipe parameters); the natural log of the supremum accompanies it.
    """
    rng = np.random.default_rng(_VALIDATION_SEED + 2)
    pts = _psi_sample_points(kit.geometry, n, rng)
    psi = kit.psi(pts)
    r = np.linalg.norm(pts, axis=1)
    keep = r > 0
    log_phi_term = lam * psi[keep] + lam * (np.log(r[keep]) - math.log(r0))
    x2psi = r[keep] ** 2 * psi[keep]
    tau = x2psi.astype(np.longdouble) + np.exp(log_phi_term.astype(np.longdouble))
    sup = np.max(tau)
    c_lambda = np.longdouble(1.05) * sup + np.longdouble(1.0)
    return c_lambda, float(np.log(sup))


def theta(t, T: float, k: float):
    """Time weight (t(T-t))^(-k); blows up at both endpoints."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0) or np.any(t >= T):
        raise OutOfTimeWindowError(f"t must lie strictly inside (0, {T})")
    return (t * (T - t)) ** (-k)


def theta_dt(t, T: float, k: float):
    t = np.asarray(t, dtype=float)
    g = t * (T - t)
    return -k * g ** (-k - 1.0) * (T - 2.0 * t)


def theta_dtt(t, T: float, k: float):
    t = np.asarray(t, dtype=float)
    g = t * (T - t)
    return k * (k + 1.0) * g ** (-k - 2.0) * (T - 2.0 * t) ** 2 + 2.0 * k * g ** (-k - 1.0)


def alpha(x, r0: float, dim: int):
    """Radial plateau cutoff: 0 inside |x| <= r0/2, 1/N outside |x| >= r0.

    Quintic smoothstep in |x| between the plateaus, C^2 at both joints.
    """
    pts = _as_points(x, dim)
    r = np.linalg.norm(pts, axis=1)
    t = np.clip((r - 0.5 * r0) / (0.5 * r0), 0.0, 1.0)
    return smoothstep5(t) / dim


# ----------------------------------------------------------------------------
# The assembled weight kit


@dataclass(frozen=True)
class WeightKit:
    """Everything sigma needs: geometry, regions (with r0), psi, parameters."""

    geometry: DomainGeometry
    regions: Regions
    psikit: PsiKit
    gamma: float
    T: float
    mu: float
    C3: float
    lam: float
    s: float
    r0: float
    C_lambda: object  # extended-precision scalar
    log_sup_tau: float
    delta_clauses: dict
    delta_binding: str
    r0_clauses: dict
    r0_binding: str

    @property
    def k(self) -> float:
        return 1.0 + 2.0 / self.gamma

    @property
    def delta(self) -> float:
        return self.psikit.delta

    @property
    def delta0(self) -> float:
        return self.psikit.delta0

    def theta(self, t):
        return theta(t, self.T, self.k)

    def theta_dt(self, t):
        return theta_dt(t, self.T, self.k)

    def theta_dtt(self, t):
        return theta_dtt(t, self.T, self.k)

    def alpha(self, x):
        return alpha(x, self.r0, self.geometry.dim)

    # -- factored data for overflow-free audits -------------------------------

    def psi_bundle(self, x) -> dict:
        """Pointwise psi data: values, gradient, Hessian, Laplacian, and the
        cancellation-safe combinations x.grad(psi) and x.grad(psi) - delta psi1."""
        pts = _as_points(x, self.geometry.dim)
        d = self.psikit.delta
        g1 = self.psikit.grad_psi1(pts)
        h1 = self.psikit.hess_psi1(pts)
        psi1 = self.psikit.psi1(pts)
        return {
            "x": pts,
            "psi1": psi1,
            "psi": d * (psi1 + 1.0),
            "grad": d * g1,
            "hess": d * h1,
            "lap": d * np.trace(h1, axis1=1, axis2=2),
            "xdotg": d * (self.psikit.radial_deficit(pts) + psi1),
            "deficit": d * self.psikit.radial_deficit(pts),
        }

    def log_gauge(self, x, lam: float | None = None):
        """ln E with E = lam * phi_hat * |x|^(lam-2), the factored exponential
        scale of every phi-bearing term."""
        lam = self.lam if lam is None else lam
        pts = _as_points(x, self.geometry.dim)
        psi = self.psikit.psi(pts)
        r = np.linalg.norm(pts, axis=1)
        return math.log(lam) + lam * psi + (lam - 2.0) * np.log(r) - lam * math.log(self.r0)

    # -- raw evaluators (extended precision) ----------------------------------

    def tau_eval(self, x, lam: float | None = None) -> "TauDerivatives":
        lam = self.lam if lam is None else lam
        return tau_eval(self, x, lam)

    def sigma_eval(self, t, x, lam: float | None = None) -> "SigmaDerivatives":
        lam = self.lam if lam is None else lam
        return sigma_eval(self, t, x, lam)


@dataclass(frozen=True)
class TauDerivatives:
    """Raw values and derivatives of the weight split tau = tau_x2 + tau_phi."""

    tau_x2: np.ndarray
    tau_phi: np.ndarray
    grad_x2: np.ndarray
    grad_phi: np.ndarray
    hess_x2: np.ndarray
    hess_phi: np.ndarray
    lap_x2: np.ndarray
    lap_phi: np.ndarray

    @property
    def tau(self):
        return self.tau_x2 + self.tau_phi

    @property
    def grad(self):
        return self.grad_x2 + self.grad_phi

    @property
    def hess(self):
        return self.hess_x2 + self.hess_phi

    @property
    def lap(self):
        return self.lap_x2 + self.lap_phi


@dataclass(frozen=True)
class SigmaDerivatives:
    sigma: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    lap: np.ndarray
    dt: np.ndarray
    dtt: np.ndarray


def tau_eval(kit: WeightKit, x, lam: float) -> TauDerivatives:
    """Analytic derivatives of tau_x2 = |x|^2 psi and tau_phi = (|x|/r0)^lam e^(lam psi).

    Extended precision throughout; at x = 0 the analytic limits are returned
    (all tau_phi derivatives vanish for lam > 4).
    """
    geom = kit.geometry
    pts = _as_points(x, geom.dim)
    n, N = pts.shape
    b = kit.psi_bundle(pts)
    ld = np.longdouble
    X = pts.astype(ld)
    psi = b["psi"].astype(ld)
    g = b["grad"].astype(ld)
    H = b["hess"].astype(ld)
    lapbpsi = b["lap"].astype(ld)
    r2 = np.sum(X * X, axis=1)
    eye = np.eye(N, dtype=ld)

    tau_x2 = r2 * psi
    grad_x2 = 2.0 * psi[:, None] * X + r2[:, None] * g
    hess_x2 = (
        2.0 * psi[:, None, None] * eye
        + 2.0 * (X[:, :, None] * g[:, None, :] + g[:, :, None] * X[:, None, :])
        + r2[:, None, None] * H
    )
    lap_x2 = 2.0 * N * psi + 4.0 * np.sum(X * g, axis=1) + r2 * lapbpsi

    tau_phi = np.zeros(n, dtype=ld)
    grad_phi = np.zeros((n, N), dtype=ld)
    hess_phi = np.zeros((n, N, N), dtype=ld)
    lap_phi = np.zeros(n, dtype=ld)
    pos = r2 > 0
    if np.any(pos):
        rp2 = r2[pos]
        logtau = lam * psi[pos] + (ld(lam) / 2.0) * np.log(rp2) - lam * ld(math.log(kit.r0))
        tphi = np.exp(logtau)
        tau_phi[pos] = tphi
        xd = X[pos]
        gd = g[pos]
        grad_phi[pos] = lam * tphi[:, None] * (xd / rp2[:, None] + gd)
        xg = np.sum(xd * gd, axis=1)
        quad = (
            eye / rp2[:, None, None]
            + (lam - 2.0) * (xd[:, :, None] * xd[:, None, :]) / (rp2**2)[:, None, None]
            + lam * (xd[:, :, None] * gd[:, None, :] + gd[:, :, None] * xd[:, None, :]) / rp2[:, None, None]
            + H[pos]
            + lam * gd[:, :, None] * gd[:, None, :]
        )
        hess_phi[pos] = lam * tphi[:, None, None] * quad
        lap_phi[pos] = lam * tphi * (
            (lam + N - 2.0) / rp2 + 2.0 * lam * xg / rp2 + lapbpsi[pos] + lam * np.sum(gd * gd, axis=1)
        )
    return TauDerivatives(tau_x2, tau_phi, grad_x2, grad_phi, hess_x2, hess_phi, lap_x2, lap_phi)


def sigma_eval(kit: WeightKit, t, x, lam: float) -> SigmaDerivatives:
    """sigma = theta(t) (C_lambda - tau) at one time, many points."""
    t = float(t)
    td = tau_eval(kit, x, lam)
    th = np.longdouble(kit.theta(t))
    thp = np.longdouble(kit.theta_dt(t))
    thpp = np.longdouble(kit.theta_dtt(t))
    gap = np.longdouble(kit.C_lambda) - td.tau
    return SigmaDerivatives(
        sigma=th * gap,
        grad=-th * td.grad,
        hess=-th * td.hess,
        lap=-th * td.lap,
        dt=thp * gap,
        dtt=thpp * gap,
    )


def build_weight_kit(
    geometry: DomainGeometry,
    regions: Regions,
    *,
    gamma: float,
    T: float,
    mu: float,
    C3: float,
    lam: float = 6.0,
    s: float = 1.0,
    delta_override: float | None = None,
    r0_override: float | None = None,
    c_lambda_override: float | None = None,
    n_check: int = 10_000,
) -> WeightKit:
    """Run the full recipe: psi1, delta, r0, C_lambda, assembled into one kit."""
    psikit = build_psi(geometry, regions, n_check=n_check)
    if delta_override is not None:
        delta, clauses, binding = delta_override, {}, "override"
    else:
        delta, clauses, binding = choose_delta(psikit, geometry)
    psikit = psikit.with_delta(delta)
    if r0_override is not None:
        r0, r0_clauses, r0_binding = r0_override, {}, "override"
    else:
        r0, r0_clauses, r0_binding = choose_r0(
            sup_dpsi=psikit.sup_dpsi,
            sup_d2psi=psikit.sup_d2psi,
            sup_psi=psikit.sup_psi,
            gamma=gamma,
            mu=mu,
            C3=C3,
            d_psi1=psikit.d_psi1,
            delta0=psikit.delta0,
            beta0=psikit.beta0_eff,
        )
    regions = regions.with_r0(r0)
    kit = WeightKit(
        geometry=geometry,
        regions=regions,
        psikit=psikit,
        gamma=gamma,
        T=T,
        mu=mu,
        C3=C3,
        lam=lam,
        s=s,
        r0=r0,
        C_lambda=np.longdouble(0.0),
        log_sup_tau=0.0,
        delta_clauses=clauses,
        delta_binding=binding,
        r0_clauses=r0_clauses,
        r0_binding=r0_binding,
    )
    if c_lambda_override is not None:
        c_lam, log_sup = np.longdouble(c_lambda_override), float(np.log(np.longdouble(c_lambda_override)))
    else:
        c_lam, log_sup = choose_C_lambda(lam, psikit, r0)
    return replace(kit, C_lambda=c_lam, log_sup_tau=log_sup)
