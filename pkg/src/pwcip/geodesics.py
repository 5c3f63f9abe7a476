"""Ray tracing for the metric n|dx|: travel times, curvature transport, amplitudes.

Rays start on the plane z = 0 with momentum (0, 0, 1) and are parametrized by
travel time s, so that

    dx/ds = p / n^2,    dp/ds = grad n / n,

and the Hessian kappa of the travel time obeys the matrix Riccati equation

    dkappa/ds = (grad n grad n^T + n Hess n - kappa kappa) / n^2.

All marching is classical RK4 on whole bundles of rays at once.  Each ray in a
bundle takes the same number of steps M; its own step is s_end / M.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import fdgrid
from .errors import BlowupDetected, FloorViolation, RegularityViolation, StepFailure
from .medium import eval_all, eval_n, eval_n_grad

DEFAULT_DS = 1e-3
KAPPA_CAP = 1e3


def amplitude_floor(n0, n00):
    """Lower bound 0.5 * exp(-1.5 * n00^2 * n0^2) on the leading amplitude."""
    return 0.5 * np.exp(-1.5 * n00**2 * n0**2)


@dataclass
class _March:
    x: np.ndarray
    p: np.ndarray
    kappa: np.ndarray = None
    log_a: np.ndarray = None
    integrals: list = field(default_factory=list)
    max_defect: float = 0.0
    max_rate: float = -np.inf
    rate_location: tuple = None
    history: dict = None


def _march(medium, xy0, s_end, M, kappa=False, sources=(), cap=KAPPA_CAP, record=False):
    """Integrate a bundle of K rays launched at ``xy0`` (K, 2) up to ``s_end`` (K,).

    With ``kappa`` the Riccati system is carried along, the log-amplitude
    log(1/2) - 1/2 int tr(kappa)/n^2 ds is accumulated by the trapezoid rule on
    the RK nodes, and for every callable in ``sources`` the integral
    int src(x) / (2 n^2 A) ds is accumulated the same way.
    """
    xy0 = np.atleast_2d(np.asarray(xy0, dtype=float))
    K = len(xy0)
    hk = np.broadcast_to(np.asarray(s_end, dtype=float), (K,)) / M
    x = np.column_stack([xy0, np.zeros(K)])
    p = np.tile([0.0, 0.0, 1.0], (K, 1))
    k = np.zeros((K, 3, 3)) if kappa else None

    def rhs(x, p, k):
        if k is None:
            n, g = eval_n_grad(medium, x)
            return n, None, p / (n * n)[:, None], g / n[:, None], None
        n, g, H = eval_all(medium, x)
        n2 = n * n
        dk = (np.einsum("ki,kj->kij", g, g) + n[:, None, None] * H
              - np.einsum("kij,kjl->kil", k, k)) / n2[:, None, None]
        return n, g, p / n2[:, None], g / n[:, None], dk

    out = _March(x, p)
    hist = {"x": [], "p": [], "kappa": [], "rate": []} if record else None
    log_a = np.full(K, np.log(0.5))
    integrals = [np.zeros(K) for _ in sources]
    prev_q = prev_src = None
    h2 = hk[:, None]
    for m in range(M + 1):
        n, g, kx, kp, kk = rhs(x, p, k)
        defect = np.abs(np.einsum("ki,ki->k", p, p) - n * n).max()
        out.max_defect = max(out.max_defect, float(defect))
        if kappa:
            q = np.trace(k, axis1=1, axis2=2) / (n * n)
            if prev_q is not None:
                log_a = log_a - 0.25 * hk * (prev_q + q)
            prev_q = q
            amp = np.exp(log_a)
            src = [f(x) / (2.0 * n * n * amp) for f in sources]
            if prev_src is not None:
                for a, b, acc in zip(prev_src, src, integrals):
                    acc += 0.5 * hk * (a + b)
            prev_src = src
            rate = np.trace(kk, axis1=1, axis2=2)
            j = int(np.argmax(rate))
            if rate[j] > out.max_rate:
                out.max_rate = float(rate[j])
                out.rate_location = tuple(x[j])
            big = np.abs(k).reshape(K, 9).max(axis=1)
            if big.max() > cap:
                j = int(np.argmax(big))
                raise BlowupDetected(
                    f"curvature entry {big[j]:.3g} exceeds cap {cap:g} (caustic)",
                    location=tuple(x[j]))
        if record:
            hist["x"].append(x.copy())
            hist["p"].append(p.copy())
            if kappa:
                hist["kappa"].append(k.copy())
                hist["rate"].append(rate.copy())
        if m == M:
            break
        # classical RK4, first stage reused from the node evaluation above
        x2, p2 = x + 0.5 * h2 * kx, p + 0.5 * h2 * kp
        k2 = None if k is None else k + 0.5 * hk[:, None, None] * kk
        _, _, bx, bp, bk = rhs(x2, p2, k2)
        x3, p3 = x + 0.5 * h2 * bx, p + 0.5 * h2 * bp
        k3 = None if k is None else k + 0.5 * hk[:, None, None] * bk
        _, _, cx, cp, ck = rhs(x3, p3, k3)
        x4, p4 = x + h2 * cx, p + h2 * cp
        k4 = None if k is None else k + hk[:, None, None] * ck
        _, _, ex, ep, ek = rhs(x4, p4, k4)
        x = x + h2 / 6.0 * (kx + 2 * bx + 2 * cx + ex)
        p = p + h2 / 6.0 * (kp + 2 * bp + 2 * cp + ep)
        if k is not None:
            k = k + hk[:, None, None] / 6.0 * (kk + 2 * bk + 2 * ck + ek)
    out.x, out.p, out.kappa = x, p, k
    if kappa:
        out.log_a = log_a
        out.integrals = integrals
    if record:
        out.history = {key: np.array(v) for key, v in hist.items() if v}
    return out


# single rays -----------------------------------------------------------------

@dataclass
class GeodesicPath:
    """One traced ray: nodes (s, x, p) with s equal to the travel time."""

    s: np.ndarray
    x: np.ndarray
    p: np.ndarray
    origin: np.ndarray
    ds: float
    defect: np.ndarray

    @property
    def max_defect(self):
        return float(np.abs(self.defect).max())

    @property
    def tau(self):
        return self.s

    def euclidean_travel_time(self, medium):
        """Travel time recomputed as the integral of n over Euclidean arc length.

        Uses chord lengths between RK nodes, so it is independent of the
        parametrization by s; compare with ``s[-1]``.
        """
        n = eval_n(medium, self.x)
        seg = np.linalg.norm(np.diff(self.x, axis=0), axis=1)
        return float(np.sum(0.5 * (n[1:] + n[:-1]) * seg))


def trace_geodesic(medium, x0, s_max, ds=DEFAULT_DS, tol=1e-6):
    """Trace the ray from ``x0`` on the plane z = 0 up to travel time ``s_max``."""
    if ds <= 0:
        raise ValueError("ds must be positive")
    if s_max > medium.n0 + 1e-12:
        raise ValueError(f"s_max={s_max} exceeds n0={medium.n0}")
    x0 = np.asarray(x0, dtype=float)
    M = max(1, int(np.ceil(s_max / ds - 1e-9)))
    res = _march(medium, x0[None, :2], np.array([s_max]), M, record=True)
    xs, ps = res.history["x"][:, 0], res.history["p"][:, 0]
    defect = np.einsum("ki,ki->k", ps, ps) - eval_n(medium, xs) ** 2
    path = GeodesicPath(np.linspace(0.0, s_max, M + 1), xs, ps,
                        np.array([x0[0], x0[1], 0.0]), s_max / M, defect)
    if path.max_defect > tol:
        raise StepFailure(f"eikonal defect {path.max_defect:.3g} exceeds {tol:g}; reduce ds")
    return path


@dataclass
class CurvatureTrace:
    """Travel-time Hessian transported along a path."""

    s: np.ndarray
    kappa: np.ndarray
    rate: np.ndarray
    max_rate: float
    log_amplitude: float

    @property
    def trace(self):
        return np.trace(self.kappa, axis1=1, axis2=2)

    @property
    def asymmetry(self):
        return float(np.abs(self.kappa - np.swapaxes(self.kappa, 1, 2)).max())


def transport_curvature(medium, path, cap=KAPPA_CAP, tol=1e-6):
    """Integrate the Riccati system along ``path`` from kappa(0) = 0."""
    if path.max_defect > tol:
        raise StepFailure(f"path eikonal defect {path.max_defect:.3g} exceeds {tol:g}")
    M = len(path.s) - 1
    res = _march(medium, path.origin[None, :2], np.array([path.s[-1]]), M,
                 kappa=True, cap=cap, record=True)
    return CurvatureTrace(path.s, res.history["kappa"][:, 0], res.history["rate"][:, 0],
                          res.max_rate, float(res.log_a[0]))


# grid fields -----------------------------------------------------------------

@dataclass
class TravelTimeField:
    """Travel time at the grid nodes, with the ray data that produced it.

    ``p`` is the ray momentum at each node, i.e. the exact gradient of tau;
    ``launch`` holds the (x, y) launch point on z = 0 and ``M`` the common
    number of RK steps used for every ray.
    """

    grid: fdgrid.GridSpec
    tau: np.ndarray
    p: np.ndarray
    launch: np.ndarray
    M: int
    ds: float
    residual: float
    iterations: int
    max_defect: float

    @property
    def dz_tau(self):
        return self.p[..., 2]

    @property
    def grad(self):
        """Finite-difference gradient of tau at interior nodes."""
        return fdgrid.grad_h(self.tau, self.grid)


@dataclass
class AmplitudeField:
    grid: fdgrid.GridSpec
    A: np.ndarray
    A0: float
    kappa: np.ndarray
    max_rate: float
    rate_location: tuple
    alphas: list = field(default_factory=list)

    @property
    def laplacian_tau(self):
        return np.trace(self.kappa, axis1=-2, axis2=-1)


def _vertical_guess(medium, pts, n_sub=32):
    """Travel time along the vertical through each point (initial Newton guess)."""
    u = np.linspace(0.0, 1.0, n_sub + 1)
    col = pts[:, None, :] * np.array([1.0, 1.0, 0.0]) + pts[:, None, 2:3] * u[None, :, None] * np.array([0, 0, 1.0])
    n = eval_n(medium, col)
    return np.trapezoid(n, u, axis=1) * pts[:, 2]


def _targets(medium, grid):
    nodes = grid.nodes()
    if medium.transversally_invariant:
        # every column is identical, trace one interior column and broadcast
        return nodes[1, 1], True
    return nodes.reshape(-1, 3), False


def _broadcast(vals, grid, invariant):
    if invariant:
        shape = (grid.N + 2, grid.N + 2) + vals.shape
        return np.broadcast_to(vals, shape).copy()
    return vals.reshape(grid.shape + vals.shape[1:])


def _shoot(medium, targets, ds, tol, det_floor, max_iter, eta, damping=0.25):
    """Solve xi(s, x0) = target for every target with z > 0 by damped Newton."""
    K = len(targets)
    xy0 = targets[:, :2].copy()
    s = _vertical_guess(medium, targets)
    J = None
    total_iter = 0
    for stage_ds, chord in ((10.0 * ds, False), (ds, True)):
        M = max(1, int(np.ceil(s.max() / stage_ds - 1e-9)))
        for it in range(max_iter):
            base = _march(medium, xy0, s, M)
            r = base.x - targets
            err = np.linalg.norm(r, axis=1)
            if err.max() < tol:
                break
            total_iter += 1
            if J is None or not chord:
                bx = _march(medium, xy0 + [eta, 0.0], s, M).x
                by = _march(medium, xy0 + [0.0, eta], s, M).x
                n = eval_n(medium, base.x)
                J = np.stack([(bx - base.x) / eta, (by - base.x) / eta,
                              base.p / (n * n)[:, None]], axis=-1)
                det = np.linalg.det(J)
                bad = np.abs(det) < det_floor
                if bad.any():
                    j = int(np.argmin(np.abs(det)))
                    raise RegularityViolation(
                        f"shooting Jacobian near-singular (det={det[j]:.3g})",
                        location=tuple(targets[j]))
            step = -np.linalg.solve(J, r[..., None])[..., 0]
            size = np.linalg.norm(step, axis=1)
            scale = np.minimum(1.0, damping / np.maximum(size, 1e-300))
            step *= scale[:, None]
            xy0 = xy0 + step[:, :2]
            s = s + step[:, 2]
        else:
            j = int(np.argmax(err))
            raise RegularityViolation(
                f"shooting did not converge (residual {err[j]:.3g})", location=tuple(targets[j]))
    return xy0, s, M, base, float(err.max()), total_iter


def travel_time_field(medium, grid, ds=DEFAULT_DS, tol=1e-8, det_floor=1e-3,
                      max_iter=40, eta=1e-6, defect_tol=1e-6):
    """Travel time at every grid node by shooting rays from the plane z = 0.

    Newton runs first with a ten times coarser step and is then polished at
    step ``ds`` using the coarse Jacobian.  Converged when every endpoint is
    within ``tol * X`` of its node.
    """
    targets, invariant = _targets(medium, grid)
    flat = targets.reshape(-1, 3)
    live = flat[:, 2] > 0.0
    tau = np.zeros(len(flat))
    p = np.tile([0.0, 0.0, 1.0], (len(flat), 1))
    launch = flat[:, :2].copy()
    xy0, s, M, base, resid, iters = _shoot(medium, flat[live], ds, tol * grid.X,
                                           det_floor, max_iter, eta)
    if base.max_defect > defect_tol:
        raise StepFailure(f"eikonal defect {base.max_defect:.3g} exceeds {defect_tol:g}")
    tau[live], p[live], launch[live] = s, base.p, xy0
    return TravelTimeField(grid, _broadcast(tau, grid, invariant),
                           _broadcast(p, grid, invariant),
                           _broadcast(launch, grid, invariant), M, ds, resid, iters,
                           base.max_defect)


def _ray_pass(medium, tau_field, sources=(), cap=KAPPA_CAP):
    grid = tau_field.grid
    invariant = medium.transversally_invariant
    launch = tau_field.launch[1, 1] if invariant else tau_field.launch.reshape(-1, 2)
    s = tau_field.tau[1, 1] if invariant else tau_field.tau.reshape(-1)
    res = _march(medium, launch, s, tau_field.M, kappa=True, sources=sources, cap=cap)
    return res, invariant


def amplitude_field(medium, grid, tau_field, cap=KAPPA_CAP):
    """Leading amplitude A = 1/2 exp(-1/2 int tr(kappa)/n^2 ds) at every node."""
    res, invariant = _ray_pass(medium, tau_field, cap=cap)
    A = _broadcast(np.exp(res.log_a), grid, invariant)
    kappa = _broadcast(res.kappa, grid, invariant)
    A0 = amplitude_floor(medium.n0, medium.n00)
    if A.min() < A0:
        raise FloorViolation(f"amplitude {A.min():.4g} fell below the floor {A0:.4g}")
    return AmplitudeField(grid, A, A0, kappa, res.max_rate, res.rate_location)


def _laplacian_interpolant(field_, grid):
    lap = fdgrid.laplacian_full(field_, grid)
    interp = RegularGridInterpolator((grid.x, grid.y, grid.z), lap, method="linear",
                                     bounds_error=False, fill_value=None)
    return interp


def higher_amplitudes(medium, grid, A_field, tau_field, r_trunc=1):
    """Coefficients alpha_1..alpha_r of the progressing-wave expansion.

    alpha_k = A * int Lap(alpha_{k-1}) / (2 n^2 A) ds along each ray, with the
    Laplacian taken on the grid and interpolated linearly to the ray.
    """
    if r_trunc not in (1, 2):
        raise ValueError("r_trunc must be 1 or 2")
    alphas = []
    prev = A_field.A
    for _ in range(r_trunc):
        res, invariant = _ray_pass(medium, tau_field, sources=[_laplacian_interpolant(prev, grid)])
        ak = _broadcast(np.exp(res.log_a) * res.integrals[0], grid, invariant)
        ak[:, :, 0] = 0.0
        alphas.append(ak)
        prev = ak
    A_field.alphas = alphas
    return alphas


# regularity ------------------------------------------------------------------

@dataclass
class RegularityReport:
    passed: bool
    floor: float
    min_det: float
    location: tuple
    per_ray_min: np.ndarray
    fan: np.ndarray

    def to_dict(self):
        return {"passed": self.passed, "floor": self.floor, "min_det": self.min_det,
                "location": [float(c) for c in self.location]}


def default_fan(medium, count=9):
    u = np.linspace(-medium.X, medium.X, count)
    X, Y = np.meshgrid(u, u, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def check_regularity(medium, fan=None, s_max=None, floor=0.1, ds=DEFAULT_DS, eta=1e-6):
    """Minimum determinant of the shooting Jacobian d xi / d(x0, y0, s) over a fan.

    Columns come from differencing neighbouring rays of the bundle and from
    dx/ds = p/n^2.  The check passes iff the determinant stays above ``floor``
    at every RK node of every ray.
    """
    fan = default_fan(medium) if fan is None else np.atleast_2d(np.asarray(fan, float))
    s_max = medium.n0 if s_max is None else s_max
    M = max(1, int(np.ceil(s_max / ds - 1e-9)))
    s = np.full(len(fan), s_max)
    base = _march(medium, fan, s, M, record=True).history
    bx = _march(medium, fan + [eta, 0.0], s, M, record=True).history["x"]
    by = _march(medium, fan + [0.0, eta], s, M, record=True).history["x"]
    n = eval_n(medium, base["x"])
    J = np.stack([(bx - base["x"]) / eta, (by - base["x"]) / eta,
                  base["p"] / (n * n)[..., None]], axis=-1)
    det = np.linalg.det(J)
    per_ray = det.min(axis=0)
    m, k = np.unravel_index(np.argmin(det), det.shape)
    return RegularityReport(bool(det.min() > floor), floor, float(det.min()),
                            tuple(base["x"][m, k]), per_ray, fan)


@dataclass
class CurvatureSurvey:
    rays: int
    max_rate: float
    rate_location: tuple
    min_amplitude: float
    bound: float

    @property
    def passed(self):
        return bool(self.max_rate <= self.bound + 1e-6)

    def to_dict(self):
        return {"rays": self.rays, "max_rate": self.max_rate,
                "rate_location": [float(c) for c in self.rate_location], "min_amplitude": self.min_amplitude,
                "bound": self.bound, "passed": self.passed}


def curvature_survey(medium, fan=None, s_max=None, ds=DEFAULT_DS, cap=KAPPA_CAP):
    """Largest d tr(kappa)/ds over a fan of rays, compared with 6 n00^2."""
    fan = default_fan(medium, 17) if fan is None else np.atleast_2d(np.asarray(fan, float))
    s_max = medium.n0 if s_max is None else s_max
    M = max(1, int(np.ceil(s_max / ds - 1e-9)))
    res = _march(medium, fan, np.full(len(fan), s_max), M, kappa=True, cap=cap)
    return CurvatureSurvey(len(fan), res.max_rate, res.rate_location,
                           float(np.exp(res.log_a).min()), 6.0 * medium.n00**2)
