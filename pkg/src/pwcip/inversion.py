"""Recovering tau (and hence n) from the reduced boundary data.

The unknowns are the reduced field w on Q and q = d tau / dz on Omega; tau is
the cumulative trapezoid of q in z, so tau = 0 on z = 0 holds by
construction.  The objective is the Carleman-weighted least-squares misfit of
the two residual equations plus penalised boundary mismatches.  Its gradient
is assembled by hand from the adjoints of the finite-difference stencils.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from . import fdgrid
from .errors import FloorViolation, NonDecrease
from .fdgrid import interior
from .forward import theta_mask


@dataclass(frozen=True)
class AdmissibleSet:
    M: float = 10.0
    n0: float = 1.2
    A0: float = 3.875e-3

    def to_dict(self):
        return {"M": self.M, "n0": self.n0, "A0": self.A0}


@dataclass
class InversionProblem:
    data: object  # forward.TransformedData
    grid: fdgrid.GridSpec
    lam: float
    alpha: float
    bounds: AdmissibleSet
    rho1: float = 1.0
    rho2: float = 1.0
    beta: float = None
    q_theta: np.ndarray = None

    def __post_init__(self):
        if self.beta is None:
            self.beta = 100.0 * self.lam**3
        if abs(self.grid.T1 - 3.0 / self.alpha) > 1e-9 * self.grid.T1:
            raise ValueError(f"T1={self.grid.T1} must equal 3/alpha={3.0 / self.alpha}")
        if self.q_theta is None:
            # tau = z on the side faces
            self.q_theta = np.ones((int(theta_mask(self.grid).sum()), self.grid.z_samples))


@dataclass
class InversionResult:
    w_hat: np.ndarray
    tau_hat: np.ndarray
    n_hat: np.ndarray
    diagnostics: dict
    trace: list = field(default_factory=list)


def lambda_for_noise(delta, cap=10.0):
    """lam(delta) = (1/3) ln(1/delta), clipped to [1, cap]."""
    return float(max(1.0, min(cap, np.log(1.0 / delta) / 3.0)))


# 1-D operators along the continuous axes -------------------------------------

def _gradient_matrix(n, step):
    return np.gradient(np.eye(n), step, axis=0, edge_order=2)


def _second_matrix(n, step):
    D = np.zeros((n, n))
    for k in range(1, n - 1):
        D[k, k - 1:k + 2] = [1.0, -2.0, 1.0]
    D[0, :4] = [2.0, -5.0, 4.0, -1.0]
    D[-1, -4:] = [-1.0, 4.0, -5.0, 2.0]
    return D / step**2


def _cumtrapz_matrix(n, step):
    C = np.zeros((n, n))
    for k in range(1, n):
        C[k, :k + 1] = step
        C[k, 0] = C[k, k] = 0.5 * step
    return C


def _trap_weights(n, step):
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


def _apply(Mat, a, axis):
    return np.moveaxis(np.tensordot(Mat, a, axes=([1], [axis])), 0, axis)


def _dx_T(a, h):
    out = np.zeros((a.shape[0] + 2, a.shape[1] + 2) + a.shape[2:])
    out[2:, 1:-1] += a / (2 * h)
    out[:-2, 1:-1] -= a / (2 * h)
    return out


def _dy_T(a, h):
    out = np.zeros((a.shape[0] + 2, a.shape[1] + 2) + a.shape[2:])
    out[1:-1, 2:] += a / (2 * h)
    out[1:-1, :-2] -= a / (2 * h)
    return out


def _dxx_T(a, h):
    out = np.zeros((a.shape[0] + 2, a.shape[1] + 2) + a.shape[2:])
    out[2:, 1:-1] += a / h**2
    out[1:-1, 1:-1] -= 2 * a / h**2
    out[:-2, 1:-1] += a / h**2
    return out


def _dyy_T(a, h):
    out = np.zeros((a.shape[0] + 2, a.shape[1] + 2) + a.shape[2:])
    out[1:-1, 2:] += a / h**2
    out[1:-1, 1:-1] -= 2 * a / h**2
    out[1:-1, :-2] += a / h**2
    return out


def _embed(a):
    out = np.zeros((a.shape[0] + 2, a.shape[1] + 2) + a.shape[2:])
    out[1:-1, 1:-1] = a
    return out


class _Ops:
    """Stencils and quadrature weights for one grid."""

    def __init__(self, grid):
        self.grid = grid
        self.h = grid.h
        nz, nt = grid.z_samples, grid.t_samples
        self.Dz = _gradient_matrix(nz, grid.dz)
        self.Dzz = _second_matrix(nz, grid.dz)
        self.Dt = _gradient_matrix(nt, grid.dt)
        self.Cz = _cumtrapz_matrix(nz, grid.dz)
        self.wz = _trap_weights(nz, grid.dz)
        self.wt = _trap_weights(nt, grid.dt)
        self.theta = theta_mask(grid)
        # L2 on the side faces counts corner columns once per face
        m = np.zeros((grid.N + 2, grid.N + 2))
        m[0, :] += 1
        m[-1, :] += 1
        m[:, 0] += 1
        m[:, -1] += 1
        self.theta_mult = m

    def dx(self, s):
        return fdgrid.dx(s, self.grid)

    def dy(self, s):
        return fdgrid.dy(s, self.grid)

    def lap(self, s):
        return (fdgrid.dxx(s, self.grid) + fdgrid.dyy(s, self.grid)
                + interior(_apply(self.Dzz, s, 2)))

    def lap_T(self, a):
        return _dxx_T(a, self.h) + _dyy_T(a, self.h) + _apply(self.Dzz.T, _embed(a), 2)


def residuals(w, tau, grid, A0=None, ops=None):
    """(R1, R2) at interior nodes; R1 over all (z, t), R2 over z."""
    ops = ops or _Ops(grid)
    w0 = w[..., 0]
    if A0 is not None and w0.min() < A0:
        raise FloorViolation(f"w(., 0) = {w0.min():.4g} below A0 = {A0:.4g}")
    if w0.min() <= 0:
        raise FloorViolation("w(., 0) must be positive")
    return _forward(w, tau, ops)[:2]


def _forward(w, tau, ops):
    h = ops.h
    lw = np.log(w[..., 0])
    Tx, Ty = ops.dx(tau), ops.dy(tau)
    Tz = interior(_apply(ops.Dz, tau, 2))
    Gx, Gy = ops.dx(lw), ops.dy(lw)
    Gz = interior(_apply(ops.Dz, lw, 2))
    S = Gx * Tx + Gy * Ty + Gz * Tz
    R2 = ops.lap(tau) + 2.0 * S
    Wt = _apply(ops.Dt, w, 3)
    Wzt = interior(_apply(ops.Dz, Wt, 2))
    Wtx, Wty = ops.dx(Wt), ops.dy(Wt)
    R1 = (ops.lap(w) - 2.0 * Tz[..., None] * Wzt - 2.0 * Wtx * Tx[..., None]
          - 2.0 * Wty * Ty[..., None] + 2.0 * interior(Wt) * S[..., None])
    cache = dict(Tx=Tx, Ty=Ty, Tz=Tz, Gx=Gx, Gy=Gy, Gz=Gz, S=S, Wt=Wt, Wzt=Wzt,
                 Wtx=Wtx, Wty=Wty, lw=lw)
    return R1, R2, cache


def truncation_source(alphas, grid):
    """Lap_h alpha_r * t^r / r! at interior nodes: what a truncated expansion leaves in R1."""
    r = len(alphas)
    lap = fdgrid.laplacian_h(alphas[-1], grid)
    return lap[..., None] * grid.t ** r / factorial(r)


def residual_norms(R1, R2, grid):
    """Unweighted L2h norms of R1 over Q and R2 over Omega (interior nodes)."""
    q = np.trapezoid(np.trapezoid(R1**2, dx=grid.dt, axis=-1), dx=grid.dz, axis=-1)
    o = np.trapezoid(R2**2, dx=grid.dz, axis=-1)
    return float(np.sqrt(grid.h**2 * q.sum())), float(np.sqrt(grid.h**2 * o.sum()))


def recover_n(tau_hat, grid):
    """n_hat = |grad_h tau_hat| at interior nodes; also flags zero-gradient nodes."""
    g = fdgrid.grad_h(tau_hat, grid)
    n = np.sqrt((g**2).sum(axis=0))
    return n


class Objective:
    """Carleman-weighted least-squares functional and its exact gradient.

    The packed unknown vector holds all of w followed by the free entries of
    q (interior columns, z > 0).  q is 1 on z = 0 and ``problem.q_theta`` on
    the side faces.
    """

    def __init__(self, problem):
        self.p = problem
        g = problem.grid
        self.grid = g
        self.ops = _Ops(g)
        self.nw = int(np.prod(g.shape_t))
        free = np.zeros(g.shape, dtype=bool)
        free[1:-1, 1:-1, 1:] = True
        self.free = free
        self.nq = int(free.sum())
        lam, alpha = problem.lam, problem.alpha
        z, t = g.z, g.t
        self.c1 = (problem.rho1 * g.h**2 * np.outer(self.ops.wz, self.ops.wt)
                   * np.exp(-2.0 * lam * (z[:, None] + alpha * t[None, :])))
        self.c2 = problem.rho2 * g.h**2 * self.ops.wz * np.exp(-2.0 * lam * z)
        self.q_fixed = np.ones(g.shape)
        self.q_fixed[self.ops.theta] = problem.q_theta
        self.nfev = 0

    # packing ----------------------------------------------------------------
    def pack(self, w, q):
        return np.concatenate([w.ravel(), q[self.free]])

    def unpack(self, x):
        w = x[: self.nw].reshape(self.grid.shape_t)
        q = self.q_fixed.copy()
        q[self.free] = x[self.nw:]
        return w, q

    def tau_of(self, q):
        return _apply(self.ops.Cz, q, 2)

    def bounds(self):
        b = self.p.bounds
        g = self.grid
        lo = np.full(g.shape_t, -b.M)
        lo[..., 0] = b.A0
        hi = np.full(g.shape_t, b.M)
        return (np.concatenate([lo.ravel(), np.ones(self.nq)]),
                np.concatenate([hi.ravel(), np.full(self.nq, b.n0)]))

    # value and gradient ------------------------------------------------------
    def _boundary(self, w):
        d = self.p.data
        B0 = interior(w[:, :, 0, :] - d.g0)
        B0t = _apply(self.ops.Dt, B0, 2)
        B1 = interior(_apply(self.ops.Dz, w, 2)[:, :, 0, :] - d.g1)
        B2 = np.where(self.ops.theta[:, :, None, None], w - d.g2, 0.0)
        return B0, B0t, B1, B2

    def _boundary_weights(self):
        ops, h, beta = self.ops, self.grid.h, self.p.beta
        return (beta * h**2 * ops.wt, beta * h**2 * ops.wt, beta * h * ops.wt,
                beta * h * ops.theta_mult[:, :, None, None] * np.outer(ops.wz, ops.wt))

    def terms(self, w, tau):
        """Unweighted-by-beta pieces of J, keyed by residual or datum."""
        R1, R2, _ = _forward(w, tau, self.ops)
        B0, B0t, B1, B2 = self._boundary(w)
        k0, _, k1, k2 = self._boundary_weights()
        beta = self.p.beta
        return {
            "R1": float(np.sum(self.c1 * R1**2)),
            "R2": float(np.sum(self.c2 * R2**2)),
            "g0": float(np.sum(k0 * (B0**2 + B0t**2)) / beta),
            "g1": float(np.sum(k1 * B1**2) / beta),
            "g2": float(np.sum(k2 * B2**2) / beta),
        }

    def value(self, x):
        w, q = self.unpack(x)
        t = self.terms(w, self.tau_of(q))
        return t["R1"] + t["R2"] + self.p.beta * (t["g0"] + t["g1"] + t["g2"])

    def _vjp(self, w, c, r1, r2, s0, s0t, s1, s2):
        """Transpose of the residual Jacobian applied to seeds on R1, R2, B0, B0t, B1, B2."""
        ops, h = self.ops, self.grid.h
        gw = ops.lap_T(r1)
        gWt = _apply(ops.Dz.T, _embed(-2.0 * c["Tz"][..., None] * r1), 2)
        gWt += _dx_T(-2.0 * c["Tx"][..., None] * r1, h)
        gWt += _dy_T(-2.0 * c["Ty"][..., None] * r1, h)
        gWt += _embed(2.0 * c["S"][..., None] * r1)
        gw += _apply(ops.Dt.T, gWt, 3)
        # S enters both residuals
        gS = 2.0 * np.sum(interior(c["Wt"]) * r1, axis=-1) + 2.0 * r2
        gTz = -2.0 * np.sum(c["Wzt"] * r1, axis=-1) + c["Gz"] * gS
        gTx = -2.0 * np.sum(c["Wtx"] * r1, axis=-1) + c["Gx"] * gS
        gTy = -2.0 * np.sum(c["Wty"] * r1, axis=-1) + c["Gy"] * gS
        gtau = (ops.lap_T(r2) + _dx_T(gTx, h) + _dy_T(gTy, h)
                + _apply(ops.Dz.T, _embed(gTz), 2))
        glw = (_dx_T(c["Tx"] * gS, h) + _dy_T(c["Ty"] * gS, h)
               + _apply(ops.Dz.T, _embed(c["Tz"] * gS), 2))
        gw[..., 0] += glw / w[..., 0]
        gw[1:-1, 1:-1, 0, :] += s0 + _apply(ops.Dt.T, s0t, 2)
        tmp = np.zeros_like(w)
        tmp[1:-1, 1:-1, 0, :] = s1
        gw += _apply(ops.Dz.T, tmp, 2)
        gw += s2
        gq = _apply(ops.Cz.T, gtau, 2)
        return np.concatenate([gw.ravel(), gq[self.free]])

    def __call__(self, x):
        """Return (J, dJ/dx)."""
        self.nfev += 1
        w, q = self.unpack(x)
        R1, R2, c = _forward(w, self.tau_of(q), self.ops)
        B = self._boundary(w)
        K = self._boundary_weights()
        J = (np.sum(self.c1 * R1**2) + np.sum(self.c2 * R2**2)
             + sum(float(np.sum(k * b**2)) for k, b in zip(K, B)))
        seeds = [2.0 * k * b for k, b in zip(K, B)]
        return float(J), self._vjp(w, c, 2.0 * self.c1 * R1, 2.0 * self.c2 * R2, *seeds)

    def gauss_newton_diagonal(self, x, probes=16, seed=0):
        """Hutchinson estimate of diag(J^T J) for the weighted residual vector."""
        rng = np.random.default_rng(seed)
        w, q = self.unpack(x)
        R1, R2, c = _forward(w, self.tau_of(q), self.ops)
        B = self._boundary(w)
        K = self._boundary_weights()
        acc = np.zeros(self.nw + self.nq)
        for _ in range(probes):
            sign = lambda a: rng.choice([-1.0, 1.0], size=np.shape(a))
            r1 = np.sqrt(self.c1) * sign(R1)
            r2 = np.sqrt(self.c2) * sign(R2)
            seeds = [np.sqrt(k) * sign(b) for k, b in zip(K, B)]
            acc += self._vjp(w, c, r1, r2, *seeds) ** 2
        return acc / probes


def initial_guess(problem, kind="flat"):
    """Constant-medium start (tau = z, w constant) or extension of the data in z."""
    g = problem.grid
    d = problem.data
    A0 = problem.bounds.A0
    q = np.ones(g.shape)
    q[theta_mask(g)] = problem.q_theta
    if kind == "flat":
        w = np.full(g.shape_t, max(float(interior(d.g0).mean()), A0))
    elif kind == "data-extension":
        w = np.repeat(d.g0[:, :, None, :], g.z_samples, axis=2)
        m = theta_mask(g)
        w[m] = d.g2[m]
    else:
        raise ValueError(f"unknown initialization {kind!r}")
    w[..., 0] = np.maximum(w[..., 0], A0)
    w = np.clip(w, -problem.bounds.M, problem.bounds.M)
    return w, q


def minimize(problem, initial="flat", max_iter=3000, gtol=1e-10, ftol=1e-15, history=10,
             precondition=True, probes=16, seed=0):
    """Projected quasi-Newton (L-BFGS-B) descent over the admissible box.

    With ``precondition`` the unknowns are rescaled by a Hutchinson estimate
    of the Gauss-Newton diagonal at the start point (Jacobi scaling), which
    evens out the several orders of magnitude the Carleman weight spans.
    """
    obj = Objective(problem)
    w0, q0 = initial_guess(problem, initial)
    lo, hi = obj.bounds()
    x0 = np.clip(obj.pack(w0, q0), lo, hi)
    if precondition:
        d = obj.gauss_newton_diagonal(x0, probes=probes, seed=seed)
        d = np.maximum(d, 1e-12 * d.max())
        scale = 1.0 / np.sqrt(d)
    else:
        scale = np.ones_like(x0)

    last = {}

    def fun(y):
        J, g = obj(y * scale)
        last["y"], last["J"] = y.copy(), J
        return J, g * scale

    trace = []

    def cb(yk):
        same = "y" in last and np.array_equal(yk, last["y"])
        trace.append(last["J"] if same else obj.value(yk * scale))

    J0 = obj.value(x0)
    trace.append(J0)
    res = _scipy_minimize(fun, x0 / scale, jac=True, method="L-BFGS-B",
                          bounds=list(zip(lo / scale, hi / scale)), callback=cb,
                          options={"maxiter": max_iter, "gtol": gtol, "ftol": ftol,
                                   "maxcor": history})
    tr = np.array(trace)
    if np.any(np.diff(tr) > 1e-12 * max(abs(tr[0]), 1e-300)):
        raise NonDecrease("objective increased between accepted iterates", trace=trace)
    x = np.clip(res.x * scale, lo, hi)
    w, q = obj.unpack(x)
    tau = obj.tau_of(q)
    n_hat = recover_n(tau, problem.grid)
    terms = obj.terms(w, tau)
    R1, R2 = residuals(w, tau, problem.grid, ops=obj.ops)
    diag = {
        "J": float(res.fun), "J0": float(J0), "iterations": int(res.nit), "nfev": int(res.nfev),
        "status": int(res.status), "message": str(res.message), "terms": terms,
        "R1_max": float(np.abs(R1).max()), "R2_max": float(np.abs(R2).max()),
        "active_lower": int(np.sum(x <= lo)), "active_upper": int(np.sum(x >= hi)),
        "zero_gradient_nodes": int(np.sum(n_hat == 0.0)),
        "lam": problem.lam, "beta": problem.beta,
    }
    return InversionResult(w, tau, n_hat, diag, trace)
