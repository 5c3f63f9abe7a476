"""Analytic refractive-index models.

Every model has the separable form

    n(x, y, z) = 1 + a * Z(z) * Wx(x) * Wy(y)

where Z is a quintic smoothstep in depth (so n = 1 and dn/dz = 0 at z = 0)
and Wx, Wy are transverse factors.  Closed-form first and second derivatives
are available for all models, so nothing downstream differentiates n
numerically.
"""

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ValidationFailure

MODELS = ("constant", "layered", "windowed", "bump")

_DEFAULTS = {
    "constant": {},
    "layered": {"amplitude": 0.2, "z_start": 0.0, "z_end": 1.0},
    "windowed": {"amplitude": 0.1, "z_start": 0.0, "z_end": 1.0, "inner": None},
    "bump": {"amplitude": 0.1, "z_start": 0.0, "z_end": 1.0, "radius": None,
             "cx": 0.0, "cy": 0.0},
}


def smoothstep(u):
    """Quintic smoothstep s(u) = u^3 (10 - 15u + 6u^2), clamped to [0, 1].

    Returns (s, s', s'').  Value, slope and curvature match the constants
    0 and 1 at both ends, so the profile is C^2 on the whole line.
    """
    u = np.asarray(u, dtype=float)
    c = np.clip(u, 0.0, 1.0)
    inside = (u > 0.0) & (u < 1.0)
    s = c**3 * (10.0 - 15.0 * c + 6.0 * c**2)
    d1 = np.where(inside, 30.0 * c**2 * (1.0 - c) ** 2, 0.0)
    d2 = np.where(inside, 60.0 * c * (1.0 - c) * (1.0 - 2.0 * c), 0.0)
    return s, d1, d2


def _depth_factor(z, z_start, z_end):
    L = z_end - z_start
    s, d1, d2 = smoothstep((z - z_start) / L)
    return s, d1 / L, d2 / L**2


def _window_factor(x, inner, X):
    width = X - inner
    r = np.abs(x)
    s, d1, d2 = smoothstep((r - inner) / width)
    sgn = np.sign(x)
    return 1.0 - s, -d1 * sgn / width, -d2 / width**2


def _bump_factor(x, c, R):
    r = (x - c) / R
    q = np.clip(1.0 - r**2, 0.0, None)
    inside = np.abs(r) < 1.0
    f = np.where(inside, q**4, 0.0)
    d1 = np.where(inside, -8.0 * r * q**3 / R, 0.0)
    d2 = np.where(inside, (-8.0 * q**3 + 48.0 * r**2 * q**2) / R**2, 0.0)
    return f, d1, d2


def _unit(x):
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    return one, zero, zero


@dataclass(frozen=True)
class MediumSpec:
    """Refractive index model together with its admissibility constants.

    ``model`` is one of :data:`MODELS`; ``params`` holds the named model
    parameters (missing ones take defaults).  ``n0`` bounds n from above,
    ``n00`` bounds its C^2 norm, ``X`` is the transverse half-width and
    ``monotone_z`` declares dn/dz >= 0.
    """

    model: str = "constant"
    params: Mapping = field(default_factory=dict)
    n0: float = 1.2
    n00: float = 1.5
    X: float = 1.125
    monotone_z: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown medium model {self.model!r}")
        unknown = set(self.params) - set(_DEFAULTS[self.model])
        if unknown:
            raise ValueError(f"unknown parameters for {self.model}: {sorted(unknown)}")
        merged = dict(_DEFAULTS[self.model])
        merged.update(self.params)
        if self.model == "windowed" and merged["inner"] is None:
            merged["inner"] = 0.25 * self.X
        if self.model == "bump" and merged["radius"] is None:
            merged["radius"] = 0.8 * self.X
        object.__setattr__(self, "params", merged)

    @property
    def diagnostic(self):
        """True for transversally unbounded profiles (layered mode)."""
        return self.model == "layered"

    @property
    def transversally_invariant(self):
        return self.model in ("constant", "layered")

    @property
    def amplitude(self):
        return float(self.params.get("amplitude", 0.0))

    def to_dict(self):
        return {"model": self.model, "params": dict(self.params), "n0": self.n0,
                "n00": self.n00, "X": self.X, "monotone_z": self.monotone_z}


def constant_medium(**kw):
    return MediumSpec("constant", {}, **kw)


def layered_medium(amplitude=0.2, z_start=0.0, z_end=1.0, **kw):
    return MediumSpec("layered", {"amplitude": amplitude, "z_start": z_start,
                                  "z_end": z_end}, **kw)


def windowed_medium(amplitude=0.1, inner=None, z_start=0.0, z_end=1.0, **kw):
    return MediumSpec("windowed", {"amplitude": amplitude, "inner": inner,
                                   "z_start": z_start, "z_end": z_end}, **kw)


def bump_medium(amplitude=0.1, radius=None, cx=0.0, cy=0.0, z_start=0.0, z_end=1.0, **kw):
    return MediumSpec("bump", {"amplitude": amplitude, "radius": radius, "cx": cx,
                               "cy": cy, "z_start": z_start, "z_end": z_end}, **kw)


def _factors(medium, x):
    x = np.asarray(x, dtype=float)
    xs, ys, zs = x[..., 0], x[..., 1], x[..., 2]
    p = medium.params
    if medium.model == "constant":
        return 0.0, _unit(zs), _unit(xs), _unit(ys)
    fz = _depth_factor(zs, p["z_start"], p["z_end"])
    if medium.model == "layered":
        fx, fy = _unit(xs), _unit(ys)
    elif medium.model == "windowed":
        fx = _window_factor(xs, p["inner"], medium.X)
        fy = _window_factor(ys, p["inner"], medium.X)
    else:
        fx = _bump_factor(xs, p["cx"], p["radius"])
        fy = _bump_factor(ys, p["cy"], p["radius"])
    return p["amplitude"], fz, fx, fy


def eval_n(medium, x):
    a, fz, fx, fy = _factors(medium, x)
    return 1.0 + a * fz[0] * fx[0] * fy[0]


def eval_grad_n(medium, x):
    return eval_n_grad(medium, x)[1]


def eval_n_grad(medium, x):
    """Return (n, grad n) with a single evaluation of the model factors."""
    a, (Z, Z1, _), (P, P1, _), (Q, Q1, _) = _factors(medium, x)
    n = 1.0 + a * Z * P * Q
    g = a * np.stack([Z * P1 * Q, Z * P * Q1, Z1 * P * Q], axis=-1)
    return np.broadcast_to(n, np.shape(x)[:-1]).astype(float), g


def eval_hess_n(medium, x):
    return eval_all(medium, x)[2]


def eval_all(medium, x):
    """Return (n, grad n, Hessian of n) at points ``x`` of shape (..., 3)."""
    a, (Z, Z1, Z2), (P, P1, P2), (Q, Q1, Q2) = _factors(medium, x)
    n = 1.0 + a * Z * P * Q
    g = a * np.stack([Z * P1 * Q, Z * P * Q1, Z1 * P * Q], axis=-1)
    hxx = Z * P2 * Q
    hyy = Z * P * Q2
    hzz = Z2 * P * Q
    hxy = Z * P1 * Q1
    hxz = Z1 * P1 * Q
    hyz = Z1 * P * Q1
    H = a * np.stack([np.stack([hxx, hxy, hxz], -1),
                      np.stack([hxy, hyy, hyz], -1),
                      np.stack([hxz, hyz, hzz], -1)], -2)
    n = np.broadcast_to(n, np.shape(x)[:-1]).astype(float)
    return n, g, H


@dataclass
class Check:
    name: str
    status: str  # "pass" | "fail" | "waived"
    worst: float
    location: tuple

    @property
    def passed(self):
        return self.status != "fail"


@dataclass
class ValidationReport:
    medium: MediumSpec
    checks: list
    diagnostic: bool

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def raise_if_failed(self):
        for c in self.checks:
            if not c.passed:
                raise ValidationFailure(c.name, c.location, c.worst)

    def to_dict(self):
        return {
            "passed": self.passed,
            "diagnostic": self.diagnostic,
            "checks": [{"name": c.name, "status": c.status, "worst": c.worst,
                        "location": list(c.location)} for c in self.checks],
        }


def sample_points(medium, sample_density, margin=0.25):
    """Uniform sample lattice over the transverse box and z in [-margin, 1 + margin]."""
    L = medium.X + margin

    def axis(lo, hi):
        return np.linspace(lo, hi, int(np.ceil((hi - lo) * sample_density)) + 1)

    xs = axis(-L, L)
    zs = axis(-margin, 1.0 + margin)
    X, Y, Z = np.meshgrid(xs, xs, zs, indexing="ij")
    return np.stack([X, Y, Z], axis=-1).reshape(-1, 3)


def validate_medium(medium, sample_density=8, tol=1e-12):
    """Check the admissibility conditions on a sample lattice.

    Returns a :class:`ValidationReport`; call ``raise_if_failed`` to turn the
    first failing check into :class:`ValidationFailure`.
    """
    if sample_density < 8:
        raise ValueError("sample_density must be >= 8 points per unit length")
    pts = sample_points(medium, sample_density)
    n, g, H = eval_all(medium, pts)
    checks = []

    def add(name, violation, where=None):
        # violation: array, > 0 means violated
        k = int(np.argmax(violation))
        worst = float(violation[k])
        status = "fail" if worst > tol else "pass"
        if where is not None and not where.any():
            status, worst, loc = "pass", 0.0, (np.nan,) * 3
        else:
            loc = tuple(pts[k])
        checks.append(Check(name, status, worst, loc))

    const_ok = 1.0 < medium.n0 < medium.n00
    checks.append(Check("constants 1 < n0 < n00", "pass" if const_ok else "fail",
                        float(medium.n0), (np.nan,) * 3))
    add("n >= 1", 1.0 - n)
    add("n <= n0", n - medium.n0)

    below = pts[:, 2] <= 0.0
    add("n = 1 for z <= 0", np.where(below, np.abs(n - 1.0), 0.0))
    outside = np.maximum(np.abs(pts[:, 0]), np.abs(pts[:, 1])) >= medium.X
    viol = np.where(outside, np.abs(n - 1.0), 0.0)
    add("n = 1 outside transverse box", viol)
    if medium.diagnostic and checks[-1].status == "fail":
        checks[-1].status = "waived"

    d1 = np.abs(g).max(axis=-1)
    d2 = np.abs(H).reshape(len(pts), 9).max(axis=-1)
    add("|grad n| <= n00", d1 - medium.n00)
    add("|hess n| <= n00", d2 - medium.n00)

    if medium.monotone_z:
        add("dn/dz >= 0", -g[:, 2])
    else:
        checks.append(Check("dn/dz >= 0", "waived", 0.0, (np.nan,) * 3))

    xs = np.unique(pts[:, 0])
    Xg, Yg = np.meshgrid(xs, xs, indexing="ij")
    surf = np.stack([Xg.ravel(), Yg.ravel(), np.zeros(Xg.size)], -1)
    gz0 = eval_grad_n(medium, surf)[:, 2]
    k = int(np.argmax(np.abs(gz0)))
    worst = float(abs(gz0[k]))
    checks.append(Check("dn/dz = 0 on z = 0", "fail" if worst > tol else "pass",
                        worst, tuple(surf[k])))
    return ValidationReport(medium, checks, medium.diagnostic)
