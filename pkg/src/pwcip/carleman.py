"""Carleman-weighted functionals and their empirical verification.

The weight is exp(-2 lam (z + alpha t)).  For a field v on Q we evaluate the
left side of each estimate (weighted square of L v with L = Lap - xi d_zt, or
of the Laplacian alone) and, separately, each bracket on the right side
without the unknown constant.  ``verify_estimate`` turns those numbers into
an empirical constant and threshold lam0.
"""

from dataclasses import dataclass

import numpy as np

from . import fdgrid
from .errors import DomainMismatch
from .fdgrid import GridSpec, interior

C4_GROUPS = ("Pos_interior", "Pos_t0", "Neg_terminal", "Neg_theta", "Neg_gamma")
C6_GROUPS = ("Pos_interior", "Neg_theta", "Neg_gamma")


@dataclass(frozen=True)
class CarlemanParams:
    lam: float = 5.0
    alpha: float = None
    xi: object = 1.0
    xi0: float = 1.0
    xi1: float = 1.0
    xi2: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.xi0 <= self.xi1:
            raise ValueError("require 0 < xi0 <= xi1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.alpha0)
        if not 0.0 < self.alpha <= self.alpha0 * (1 + 1e-12):
            raise ValueError(f"alpha={self.alpha} outside (0, alpha0={self.alpha0:.6g}]")
        xi = np.asarray(self.xi, dtype=float)
        if xi.size and (xi.min() < self.xi0 - 1e-12 or xi.max() > self.xi1 + 1e-12):
            raise ValueError("xi leaves [xi0, xi1]")

    @property
    def alpha0(self):
        return 2.0 / (3.0 * self.xi1)

    def with_lambda(self, lam):
        return CarlemanParams(lam, self.alpha, self.xi, self.xi0, self.xi1, self.xi2)


def alpha0(xi1):
    return 2.0 / (3.0 * xi1)


def weight(z, t, params):
    """exp(-2 lam (z + alpha t))."""
    return np.exp(-2.0 * params.lam * (np.asarray(z) + params.alpha * np.asarray(t)))


def _check_q(v, grid):
    v = np.asarray(v, dtype=float)
    if v.shape != grid.shape_t:
        raise DomainMismatch(f"field shape {v.shape} does not match Q shape {grid.shape_t}")
    return v


def _weighted_q(f, grid, params):
    """sum_ij h^2 int int f * weight dz dt for f on interior nodes."""
    W = weight(grid.z[:, None], grid.t[None, :], params)
    inner = np.trapezoid(np.trapezoid(f * W, dx=grid.dt, axis=-1), dx=grid.dz, axis=-1)
    return float(grid.h**2 * inner.sum())


def _xi_interior(params, grid):
    xi = np.asarray(params.xi, dtype=float)
    if xi.ndim == 0:
        return xi
    if xi.shape != grid.shape:
        raise DomainMismatch("xi must be scalar or an Omega field")
    return interior(xi)[..., None]


def operator_c4(v, grid, params):
    """L v = Lap_h v - xi v_zt at interior nodes."""
    v = _check_q(v, grid)
    return fdgrid.laplacian_h(v, grid) - _xi_interior(params, grid) * interior(fdgrid.dzt(v, grid))


def lhs_c4(v, grid, params):
    return _weighted_q(operator_c4(v, grid, params) ** 2, grid, params)


def lhs_c6(v, grid, params):
    v = _check_q(v, grid)
    return _weighted_q(fdgrid.laplacian_h(v, grid) ** 2, grid, params)


def _pieces(v, grid, params):
    lam = params.lam
    vi = interior(v)
    vz = interior(fdgrid.dz(v, grid))
    vt = interior(fdgrid.dt(v, grid))
    out = {"vz2": _weighted_q(vz**2, grid, params),
           "vt2": _weighted_q(vt**2, grid, params),
           "v2": _weighted_q(vi**2, grid, params)}
    wz = np.exp(-2.0 * lam * grid.z)
    out["t0"] = float(grid.h**2 * np.trapezoid((vz[..., 0] ** 2 + lam**2 * vi[..., 0] ** 2) * wz,
                                               dx=grid.dz, axis=-1).sum())
    vT = v[..., -1]
    out["terminal"] = (fdgrid.norm(fdgrid.dz(vT, grid), grid, "L2h_Omega", squared=True)
                       + lam**2 * fdgrid.norm(vT, grid, "L2h_Omega", squared=True))
    out["theta"] = fdgrid.norm(v, grid, "L2h_Theta", squared=True)
    vz_full = fdgrid.dz(v, grid)
    out["gamma_vz_h1"] = fdgrid.norm(vz_full[:, :, 0], grid, "H1h_Gamma", squared=True)
    out["gamma_vz_l2"] = fdgrid.norm(vz_full[:, :, 0], grid, "L2h_Gamma", squared=True)
    out["gamma_v"] = fdgrid.norm(v[:, :, 0], grid, "L2h_Gamma", squared=True)
    return out


def rhs_groups_c4(v, grid, params):
    """The five brackets of the first estimate, each with its lam factors."""
    v = _check_q(v, grid)
    lam = params.lam
    p = _pieces(v, grid, params)
    return {
        "Pos_interior": lam * (p["vz2"] + p["vt2"] + lam**2 * p["v2"]),
        "Pos_t0": lam * p["t0"],
        "Neg_terminal": lam * np.exp(-2.0 * lam * params.alpha * grid.T1) * p["terminal"],
        "Neg_theta": p["theta"],
        "Neg_gamma": lam * (p["gamma_vz_h1"] + lam**2 * p["gamma_v"]),
    }


def rhs_groups_c6(v, grid, params):
    v = _check_q(v, grid)
    lam = params.lam
    p = _pieces(v, grid, params)
    return {
        "Pos_interior": lam * (p["vz2"] + lam**2 * p["v2"]),
        "Neg_theta": p["theta"],
        "Neg_gamma": lam * (p["gamma_vz_l2"] + lam**2 * p["gamma_v"]),
    }


def weighted_h1(v, grid, params, which="C4"):
    """Interior weighted group without its leading lam factor."""
    lam = params.lam
    p = _pieces(_check_q(v, grid), grid, params)
    base = p["vz2"] + lam**2 * p["v2"]
    return base + p["vt2"] if which == "C4" else base


def dominance(groups):
    """W = positive groups minus negative groups."""
    return sum(v for k, v in groups.items() if k.startswith("Pos")) - sum(
        v for k, v in groups.items() if k.startswith("Neg"))


# test-field suite --------------------------------------------------------------

def _poly_bump(x, X):
    return (1.0 - (x / X) ** 2) ** 2


def _cos_bump(x, X):
    return np.cos(0.5 * np.pi * x / X) ** 2


def field_suite(grid, families=("clean", "gamma", "theta")):
    """Tensor-product test fields grouped by which boundary traces they excite.

    Returns a list of (name, family, field).  "clean" fields vanish with
    their z-derivative on z = 0, on the side faces and with their z-derivative
    at t = T1; "gamma" fields are nonzero on z = 0 and "theta" fields on the
    side faces.
    """
    x, z, t, T1, X = grid.x, grid.z, grid.t, grid.T1, grid.X
    Xg, Yg = np.meshgrid(x, grid.y, indexing="ij")
    specs = {
        "clean": [
            ("poly", _poly_bump, z**2 * (1 - z) ** 2, (T1 - t) ** 2),
            ("poly-tilt", _poly_bump, z**2 * (1 - z), (T1 - t) ** 2 * (1 + t)),
            ("trig", _cos_bump, z**2 * np.exp(z), (T1 - t) ** 2 * np.cos(t)),
            ("cubic", _cos_bump, z**3, (T1 - t) ** 3),
        ],
        "gamma": [
            ("gamma-poly", _poly_bump, (1 - z) ** 2, (T1 - t) ** 2),
            ("gamma-slope", _cos_bump, z * (1 - z), (T1 - t) ** 2),
        ],
        "theta": [
            ("theta-poly", lambda s, X: 1.0 + 0.5 * (s / X) ** 2, z**2 * (1 - z) ** 2, (T1 - t) ** 2),
        ],
    }
    out = []
    for fam in families:
        for name, bump, fz, ft in specs[fam]:
            b = bump(Xg, X) * bump(Yg, X)
            v = b[:, :, None, None] * fz[None, None, :, None] * ft[None, None, None, :]
            out.append((name, fam, v))
    return out


def carleman_grid(X=1.125, N=8, z_samples=241, t_samples=161, T1=1.5, h0=0.1):
    """Finely sampled grid on which weighted integrals resolve lam up to ~40."""
    return GridSpec(N=N, X=X, h0=h0, z_samples=z_samples, t_samples=t_samples, T1=T1, t1=T1)


@dataclass
class VerificationReport:
    which: str
    lambdas: list
    rows: list
    rho_min: list
    lambda0: float
    C: float
    slopes: dict
    dominated: list = None

    @property
    def min_slope(self):
        return min(self.slopes.values()) if self.slopes else float("nan")

    @property
    def passed(self):
        return bool(np.isfinite(self.lambda0) and self.C > 0)

    def to_dict(self):
        return {"which": self.which, "lambdas": self.lambdas, "rows": self.rows,
                "rho_min": self.rho_min, "lambda0": self.lambda0, "C": self.C,
                "slopes": self.slopes, "dominated": self.dominated, "min_slope": self.min_slope, "passed": self.passed}


def verify_estimate(which, suite, lambda_grid, params, grid):
    """Empirical constant search over a suite of fields and an ascending lam grid.

    For each field and lam: lhs, groups, W = Pos - Neg and rho = lhs / W when
    W > 0.  A field with W <= 0 satisfies lhs >= C W for every C > 0, so
    rho_min(lam) runs over the dominated fields only.  lam0 is the smallest
    grid value from which on rho_min stays finite and stops decreasing (1%
    slack), i.e. where the ratio has entered its large-lam regime; C is the smallest rho_min at lam >= lam0.  The
    ``dominated`` list flags, per lam, whether every field had W > 0.
    Slopes are least-squares
    fits of log(lhs / weighted H1 group) against log(lam) for clean fields.
    """
    if which not in ("C4", "C6"):
        raise ValueError("which must be 'C4' or 'C6'")
    lams = [float(l) for l in lambda_grid]
    if lams != sorted(lams) or lams[0] < 1.0:
        raise ValueError("lambda_grid must be ascending and >= 1")
    lhs_f = lhs_c4 if which == "C4" else lhs_c6
    grp_f = rhs_groups_c4 if which == "C4" else rhs_groups_c6
    rows = []
    ok = np.ones(len(lams), dtype=bool)
    rho_min = []
    ratios = {}
    for a, lam in enumerate(lams):
        p = params.with_lambda(lam)
        rhos = []
        for name, fam, v in suite:
            lhs = lhs_f(v, grid, p)
            g = grp_f(v, grid, p)
            W = dominance(g)
            W = float(W)
            rho = lhs / W if W > 0 else float("nan")
            if W <= 0:
                ok[a] = False
            else:
                rhos.append(rho)
            rows.append({"field": name, "family": fam, "lambda": lam, "lhs": lhs,
                         "W": W, "rho": rho, **g})
            if fam == "clean":
                ratios.setdefault(name, []).append(lhs / weighted_h1(v, grid, p, which))
        rho_min.append(float(min(rhos)) if rhos else float("nan"))
    # fields with W <= 0 satisfy lhs >= C W for any C > 0 and impose nothing;
    # a lam with no dominated field at all counts as below lam0
    rm = np.array(rho_min, dtype=float)
    lam0, C = float("inf"), 0.0
    for a in range(len(lams)):
        tail = rm[a:]
        if np.isfinite(tail).all() and np.all(np.diff(tail) >= -0.01 * tail[:-1]):
            lam0, C = lams[a], float(tail.min())
            break
    slopes = {}
    if len(lams) > 1:
        for name, r in ratios.items():
            slopes[name] = float(np.polyfit(np.log(lams), np.log(r), 1)[0])
    return VerificationReport(which, lams, rows, rho_min, lam0, C, slopes, ok.tolist())
