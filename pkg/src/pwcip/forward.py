"""Forward data for a plane wave launched from z = 0, and the travel-time transforms.

Two independent routes produce the wave field u:

* ``optics_forward`` sums the truncated progressing-wave expansion
  u = sum_k alpha_k (t - tau)^k / k! H(t - tau), exact at the front;
* ``fdtd_forward`` solves n^2 u_tt = Lap u + delta_eps(z) delta_eps(t) by
  leapfrog, splitting u into the analytic incident plane wave and a
  scattered part driven by (1 - n^2) u_inc_tt.

``transform_chain`` then integrates u in time, shifts by tau and
differentiates, giving the reduced field w and the boundary data g0, g1, g2.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.special import ndtr

from . import fdgrid
from .errors import BudgetExceeded, CFLViolation, DomainMismatch, HorizonTooShort
from .medium import eval_n

FDTD_BUDGET = 2e9
# samples within this many time steps of the front count as behind it
FRONT_TOL = 1e-9


@dataclass
class WaveField:
    """u at the grid nodes on a uniform time axis ``t`` (last array axis).

    ``uz0`` is u_z on z = 0, shape (N+2, N+2, len(t)).  For optics provenance
    ``tau`` and ``front`` hold the front time and the value u(tau+) so time
    integrals can treat the jump exactly.
    """

    grid: fdgrid.GridSpec
    u: np.ndarray
    t: np.ndarray
    uz0: np.ndarray
    provenance: str
    eps: float = 0.0
    tau: np.ndarray = None
    front: np.ndarray = None
    energy: np.ndarray = None
    energy_drift: float = float("nan")

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])


@dataclass
class CIPData:
    """Measured traces: f0 = u and f1 = u_z on z = 0, f2 = u on the side faces."""

    f0: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    t: np.ndarray


@dataclass
class TransformedData:
    """Reduced field and boundary data on Q = Omega x (0, T1).

    g0, g1 have shape (N+2, N+2, nt) (only interior columns are data);
    g2 has the full Q shape with zeros away from the side faces.
    """

    grid: fdgrid.GridSpec
    g0: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    T1: float
    w: np.ndarray = None
    A: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def copy(self):
        return TransformedData(self.grid, self.g0.copy(), self.g1.copy(), self.g2.copy(),
                               self.T1, None if self.w is None else self.w.copy(),
                               None if self.A is None else self.A.copy(), dict(self.meta))


def theta_mask(grid):
    """Boolean (N+2, N+2) mask of the boundary columns i or j in {0, N+1}."""
    m = np.zeros((grid.N + 2, grid.N + 2), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def time_axis(grid, T):
    """Uniform axis with the grid's time step covering [0, T]."""
    L = int(np.ceil(T / grid.dt - 1e-9))
    return grid.dt * np.arange(L + 1)


# optics route ----------------------------------------------------------------

def optics_forward(medium, grid, tau_field, A_field, alphas, T):
    """Truncated progressing-wave field on the grid nodes for t in [0, T].

    u_z on z = 0 comes from the transport equations there: tau = 0,
    Lap tau = 0 and alpha_k = 0 for k >= 1, so d alpha_k / dz = Lap alpha_{k-1} / 2.
    """
    t = time_axis(grid, T)
    tau = tau_field.tau
    coeffs = [A_field.A] + list(alphas)
    theta = t[None, None, None, :] - tau[..., None]
    on = theta >= -FRONT_TOL * grid.dt
    u = np.zeros(theta.shape)
    for k, a in enumerate(coeffs):
        u += a[..., None] * theta**k / factorial(k)
    u = np.where(on, u, 0.0)
    uz0 = np.zeros(grid.shape[:2] + t.shape)
    for k in range(1, len(coeffs)):
        dak = 0.5 * fdgrid.laplacian_full(coeffs[k - 1], grid)[:, :, 0]
        uz0 += dak[..., None] * t**k / factorial(k)
    return WaveField(grid, u, t, uz0, "optics", 0.0, tau.copy(), A_field.A.copy())


# FDTD route ------------------------------------------------------------------

def incident_wave(z, t, eps, order=64):
    """Mollified plane wave for n = 1 and its second time derivative.

    u_inc(z, t) = 1/2 int phi(z') Phi(t - |z - z'|) dz', with phi a Gaussian of
    standard deviation eps/3 and Phi the matching Gaussian distribution
    function in time.  The z' integral is split at z' = z (where |z - z'|
    has its kink) and done by Gauss-Legendre on +-8 sigma.
    """
    sig = eps / 3.0
    z = np.asarray(z, dtype=float)[:, None]
    t = np.asarray(t, dtype=float)[None, :]
    xg, wg = np.polynomial.legendre.leggauss(order)
    lo, hi = -8.0 * sig, 8.0 * sig
    u = np.zeros(np.broadcast(z, t).shape)
    utt = np.zeros_like(u)
    zc = np.clip(z, lo, hi)
    for a, b in ((lo, zc), (zc, hi)):
        half = 0.5 * (b - a)
        for xi, wi in zip(xg, wg):
            zp = a + half * (xi + 1.0)
            phi = np.exp(-0.5 * (zp / sig) ** 2) / (sig * np.sqrt(2 * np.pi))
            arg = t - np.abs(z - zp)
            psi = np.exp(-0.5 * (arg / sig) ** 2) / (sig * np.sqrt(2 * np.pi))
            u += 0.5 * wi * half * phi * ndtr(arg / sig)
            utt += 0.5 * wi * half * phi * (-arg / sig**2) * psi
    return u, utt


def _lattice_index(coord, origin, step):
    k = np.rint((coord - origin) / step).astype(int)
    if np.abs(origin + k * step - coord).max() > 1e-9:
        raise DomainMismatch("grid nodes do not lie on the FDTD lattice")
    return k


def fdtd_forward(medium, grid, T, eps=0.1, cfl=0.5, dx=0.025, margin=0.1,
                 budget=FDTD_BUDGET, t_start=None):
    """Leapfrog solution on a padded lattice, sampled at the grid nodes.

    The lattice is periodic transversally (a single cell when the medium does
    not depend on x, y) and Dirichlet at both z ends, padded so that nothing
    reflected or wrapped can reach the grid before time T.
    """
    dt = cfl * dx
    if cfl > 0.5 + 1e-12:
        raise CFLViolation(f"cfl={cfl} exceeds 0.5")
    if eps < 3 * dt - 1e-12:
        raise CFLViolation(f"eps={eps} is below 3*dt={3 * dt}")
    t_start = -5.0 * eps if t_start is None else t_start
    reach = 0.5 * T + eps
    cells = lambda length: int(np.ceil(length / dx - 1e-9))
    z_lo = -cells(reach + margin) * dx
    z_hi = cells(1.0 + reach + margin) * dx
    zs = z_lo + dx * np.arange(cells(z_hi - z_lo) + 1)
    if medium.transversally_invariant:
        xs = np.array([0.0])
    else:
        half = grid.X + cells(reach) * dx
        xs = -half + dx * np.arange(2 * cells(half))
    steps = int(np.ceil((T - t_start) / dt - 1e-9))
    ncell = len(xs) ** 2 * len(zs)
    if ncell * steps > budget:
        raise BudgetExceeded(f"{ncell} cells x {steps} steps exceeds budget {budget:g}")

    kz = _lattice_index(grid.z, z_lo, dx)
    if medium.transversally_invariant:
        kx = np.zeros(grid.N + 2, dtype=int)
    else:
        kx = _lattice_index(grid.x, xs[0], dx)
    X, Y, Z = np.meshgrid(xs, xs, zs, indexing="ij")
    n2 = eval_n(medium, np.stack([X, Y, Z], -1)) ** 2
    coef = dt**2 / n2
    contrast = 1.0 - n2
    active = np.flatnonzero(np.abs(contrast).max(axis=(0, 1)) > 0.0)

    times = t_start + dt * np.arange(steps + 1)
    u_inc, utt_inc = incident_wave(zs, times, eps)
    prev = np.zeros_like(n2)
    cur = np.zeros_like(n2)
    samples = np.empty((steps + 1, grid.N + 2, grid.N + 2, len(grid.z)))
    dz0 = np.empty((steps + 1, grid.N + 2, grid.N + 2))
    energy = np.empty(steps)
    ii, jj = np.meshgrid(kx, kx, indexing="ij")
    k0 = kz[0]

    def lap(v):
        out = np.zeros_like(v)
        out[:, :, 1:-1] = v[:, :, 2:] - 2 * v[:, :, 1:-1] + v[:, :, :-2]
        if len(xs) > 1:
            out += np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1) + np.roll(v, -1, 1) - 4 * v
        return out / dx**2

    def record(m, v):
        col = v[ii, jj] + u_inc[None, None, :, m]
        samples[m] = col[:, :, kz]
        dz0[m] = (-3 * col[:, :, k0] + 4 * col[:, :, k0 + 1] - col[:, :, k0 + 2]) / (2 * dx)

    def grad_dot(a, b):
        s = np.sum(np.diff(a, axis=2) * np.diff(b, axis=2))
        if len(xs) > 1:
            for ax in (0, 1):
                s += np.sum((np.roll(a, -1, ax) - a) * (np.roll(b, -1, ax) - b))
        return s / dx**2

    record(0, cur)
    for m in range(steps):
        nxt = 2 * cur - prev + coef * lap(cur)
        nxt[:, :, 0] = nxt[:, :, -1] = 0.0
        if active.size:
            nxt[:, :, active] += coef[:, :, active] * contrast[:, :, active] * utt_inc[active, m]
        energy[m] = 0.5 * dx**3 * (np.sum(n2 * (nxt - cur) ** 2) / dt**2 + grad_dot(nxt, cur))
        prev, cur = cur, nxt
        record(m + 1, cur)

    # forcing is negligible once the incident front has passed the medium
    zmax = zs[active].max() if active.size else 0.0
    off = times[1:] > zmax + 10 * eps / 3.0
    drift = float("nan")
    if off.sum() > 2:
        e = energy[off]
        drift = float(np.abs(e - e[0]).max() / max(abs(e[0]), 1e-300))
    u = np.moveaxis(samples, 0, -1)
    uz0 = np.moveaxis(dz0, 0, -1)
    return WaveField(grid, u, times, uz0, "fdtd", eps, energy=energy, energy_drift=drift)


# data and transforms ---------------------------------------------------------

def extract_cip_data(wave, grid):
    """f0 = u and f1 = u_z on z = 0, f2 = u on the side faces (zero elsewhere)."""
    if wave.u.shape[:3] != grid.shape:
        raise DomainMismatch("wave field does not match the grid")
    f2 = np.where(theta_mask(grid)[:, :, None, None], wave.u, 0.0)
    return CIPData(wave.u[:, :, 0, :].copy(), wave.uz0.copy(), f2, wave.t.copy())


def _running_integral(wave):
    """v = int_0^t u dt' on the wave's time axis.

    For optics fields the cell containing the front is integrated only from
    tau on, with u(tau+) extrapolated linearly from the next two samples.
    """
    t, u = wave.t, wave.u
    dt = wave.dt
    i0 = int(np.argmin(np.abs(t))) if t[0] < 0 else 0
    cells = 0.5 * dt * (u[..., 1:] + u[..., :-1])
    cells[..., : max(i0, 0)] = 0.0
    if wave.provenance == "optics":
        # j: first sample behind the front; cell j-1 holds the front
        j = np.sum(t < wave.tau[..., None] - FRONT_TOL * dt, axis=-1)
        jj = np.clip(j, 0, len(t) - 2)
        u1 = np.take_along_axis(u, jj[..., None], -1)[..., 0]
        u2 = np.take_along_axis(u, (jj + 1)[..., None], -1)[..., 0]
        u_front = u1 + (u2 - u1) * (wave.tau - t[jj]) / dt
        seg = 0.5 * np.maximum(t[jj] - wave.tau, 0.0) * (u_front + u1)
        idx = np.arange(len(t) - 1)
        cells = np.where(idx < (j - 1)[..., None], 0.0, cells)
        cells = np.where(idx == (j - 1)[..., None], seg[..., None], cells)
    v = np.concatenate([np.zeros(u.shape[:-1] + (1,)), np.cumsum(cells, axis=-1)], axis=-1)
    return v


def cubic_shift(values, t_axis, shift, t_out, branch_start=None, derivative=False):
    """Evaluate values(t_out + shift) by 4-point Lagrange interpolation.

    ``values`` has time on its last axis; ``shift`` broadcasts against the
    leading axes.  With ``branch_start`` the stencil only uses samples at
    times >= branch_start so it never straddles a jump.  Returns the
    interpolant and, if requested, its exact t-derivative.
    """
    dt = t_axis[1] - t_axis[0]
    L = len(t_axis)
    shift = np.asarray(shift, dtype=float)[..., None]
    theta = t_out + shift
    pos = (theta - t_axis[0]) / dt
    start = np.floor(pos).astype(int) - 1
    if branch_start is not None:
        first = np.ceil((np.asarray(branch_start)[..., None] - t_axis[0]) / dt - FRONT_TOL).astype(int)
        start = np.maximum(start, first)
    start = np.clip(start, 0, L - 4)
    r = pos - start
    nodes = np.arange(4.0)
    val = np.zeros(np.broadcast(r, values[..., :1]).shape)
    der = np.zeros_like(val)
    for a in range(4):
        others = [b for b in range(4) if b != a]
        denom = np.prod([nodes[a] - nodes[b] for b in others])
        la = np.prod([r - nodes[b] for b in others], axis=0) / denom
        sample = np.take_along_axis(values, np.broadcast_to(start + a, val.shape), -1)
        val += la * sample
        if derivative:
            dla = sum(np.prod([r - nodes[c] for c in others if c != b], axis=0)
                      for b in others) / denom
            der += dla * sample / dt
    return (val, der) if derivative else val


def transform_chain(cip, tau_field, T, wave=None, n0=None):
    """Reduced data on Q = Omega x (0, T1) with T1 the grid horizon.

    g0(t) = f0(tau + t), g1 = f1(tau + t) + d_t g0 * tau_z on z = 0 and
    g2 = f2(tau + t) on the side faces.  With ``wave`` also computes the
    reduced field w = d/dt v(x, t + tau(x)) everywhere, v = int_0^t u.
    """
    grid = tau_field.grid
    n0 = float(tau_field.tau.max()) if n0 is None else n0
    if T <= n0:
        raise HorizonTooShort(f"T={T} must exceed n0={n0}")
    if grid.T1 > T - n0 + 1e-9:
        raise DomainMismatch(f"grid horizon T1={grid.T1} exceeds T - n0 = {T - n0}")
    t_out = grid.t
    tau = tau_field.tau
    tau0 = tau[:, :, 0]
    g0 = cubic_shift(cip.f0, cip.t, tau0, t_out, branch_start=tau0)
    g0t = np.gradient(g0, grid.dt, axis=-1, edge_order=2)
    g1 = cubic_shift(cip.f1, cip.t, tau0, t_out, branch_start=tau0) + g0t * tau_field.dz_tau[:, :, 0, None]
    mask = theta_mask(grid)
    g2 = np.zeros(grid.shape_t)
    g2[mask] = cubic_shift(cip.f2[mask], cip.t, tau[mask], t_out, branch_start=tau[mask])
    out = TransformedData(grid, g0, g1, g2, grid.T1)
    if wave is not None:
        v = _running_integral(wave)
        start = tau if wave.provenance == "optics" else None
        _, w = cubic_shift(v, wave.t, tau, t_out, branch_start=start, derivative=True)
        out.w = w
        out.A = w[..., 0].copy()
    return out


# cross-checks ------------------------------------------------------------------

def front_arrival(wave, A):
    """First time u reaches half the local jump A, by linear interpolation."""
    u, t = wave.u, wave.t
    level = 0.5 * np.asarray(A)[..., None]
    above = u >= level
    idx = np.clip(np.argmax(above, axis=-1), 1, len(t) - 1)
    lo = np.take_along_axis(u, (idx - 1)[..., None], -1)[..., 0]
    hi = np.take_along_axis(u, idx[..., None], -1)[..., 0]
    frac = (level[..., 0] - lo) / np.where(hi != lo, hi - lo, 1.0)
    arrival = t[idx - 1] + frac * wave.dt
    return np.where(above.any(axis=-1), arrival, np.inf)


def post_front_amplitude(wave, tau, offsets=(3.0, 4.5)):
    """u just behind the mollified front, extrapolated linearly back to t = tau.

    Samples are taken at tau + c * eps for the two ``offsets`` c, where the
    mollifier (standard deviation eps/3) has decayed to below 1e-15.
    """
    e = wave.eps
    a, b = (c * e for c in offsets)
    ua = cubic_shift(wave.u, wave.t, tau + a, np.array([0.0]))[..., 0]
    ub = cubic_shift(wave.u, wave.t, tau + b, np.array([0.0]))[..., 0]
    return ua - (ub - ua) / (b - a) * a


@dataclass
class CrossCheck:
    arrival_error: np.ndarray
    arrival_tol: float
    arrival_fraction: float
    plateau_error: np.ndarray
    plateau_max: float
    probes: int
    energy_drift: float

    @property
    def passed(self):
        return bool(self.arrival_fraction >= 0.95 and self.plateau_max <= 0.05)

    def to_dict(self):
        return {"arrival_tol": self.arrival_tol, "arrival_fraction": self.arrival_fraction,
                "arrival_max_error": float(np.max(self.arrival_error)),
                "plateau_max_rel_error": self.plateau_max, "probes": self.probes,
                "energy_drift": self.energy_drift, "passed": self.passed}


def crosscheck(wave, grid, tau_field, A_field):
    """Compare FDTD front arrival with tau and the plateau with A at the probe nodes.

    Probes are the nodes with z > 0 whose plateau samples fit in the record.
    """
    tau, A = tau_field.tau, A_field.A
    probe = (grid.nodes()[..., 2] > 0) & (tau + 4.5 * wave.eps + 2 * wave.dt <= wave.t[-1])
    arr = front_arrival(wave, A)
    err = np.abs(arr - tau)[probe]
    tol = 2 * wave.dt + wave.eps
    plat = np.abs(post_front_amplitude(wave, tau) - A)[probe] / A[probe]
    return CrossCheck(err, tol, float(np.mean(err <= tol)), plat, float(plat.max()),
                      int(probe.sum()), wave.energy_drift)
