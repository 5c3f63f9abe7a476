"""Semi-discrete grid: finite differences in (x, y), continuous sampling in (z, t).

Fields are plain ndarrays indexed ``[i, j, k]`` (time independent, on the
full node set i, j = 0..N+1 and z-samples k) or ``[i, j, k, l]`` with an
extra time index.  Transverse difference operators return values at the
interior nodes i, j = 1..N only; z and t derivatives keep the full shape.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainMismatch

NORMS = ("H2h_Q", "H1h_Q", "H1h_Omega", "L2h_Omega", "H1h_Gamma", "L2h_Gamma",
         "L2h_Theta", "C2h", "Cnh")


@dataclass(frozen=True)
class GridSpec:
    N: int = 8
    X: float = 1.125
    h0: float = 0.1
    z_samples: int = 41
    t_samples: int = 61
    T1: float = 5.4
    t1: float = 1.8

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if not 0.0 < self.h0 <= self.h:
            raise ValueError(f"grid step h={self.h:.4g} is below the floor h0={self.h0:.4g}")
        if self.z_samples < 4 or self.t_samples < 3:
            raise ValueError("need at least 4 z-samples and 3 t-samples")
        if not 0.0 < self.t1 <= self.T1:
            raise ValueError("require 0 < t1 <= T1")

    @property
    def h(self):
        return 2.0 * self.X / (self.N + 1)

    @property
    def x(self):
        return -self.X + self.h * np.arange(self.N + 2)

    y = x

    @property
    def z(self):
        return np.linspace(0.0, 1.0, self.z_samples)

    @property
    def t(self):
        return np.linspace(0.0, self.T1, self.t_samples)

    @property
    def dz(self):
        return 1.0 / (self.z_samples - 1)

    @property
    def dt(self):
        return self.T1 / (self.t_samples - 1)

    @property
    def shape(self):
        return (self.N + 2, self.N + 2, self.z_samples)

    @property
    def shape_t(self):
        return self.shape + (self.t_samples,)

    def t_index(self, t):
        """Index of a time that lies on the sampling (to within 1e-9)."""
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * max(1.0, self.T1):
            raise DomainMismatch(f"t={t} is not on the time sampling (dt={self.dt})")
        return k

    def nodes(self):
        """Node coordinates, shape (N+2, N+2, nz, 3)."""
        X, Y, Z = np.meshgrid(self.x, self.y, self.z, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def refined(self, z_factor=2, t_factor=2):
        """Same transverse grid with the z and t samplings refined."""
        return GridSpec(self.N, self.X, self.h0, (self.z_samples - 1) * z_factor + 1,
                        (self.t_samples - 1) * t_factor + 1, self.T1, self.t1)

    def to_dict(self):
        return {"N": self.N, "X": self.X, "h0": self.h0, "z_samples": self.z_samples,
                "t_samples": self.t_samples, "T1": self.T1, "t1": self.t1}


def _check(s, grid, ndim=None):
    s = np.asarray(s, dtype=float)
    if s.shape[:2] != (grid.N + 2, grid.N + 2):
        raise DomainMismatch(f"field shape {s.shape} lacks boundary layers for N={grid.N}")
    if ndim is not None and s.ndim not in ndim:
        raise DomainMismatch(f"field has {s.ndim} dims, expected one of {ndim}")
    return s


def interior(s):
    return np.asarray(s)[1:-1, 1:-1]


# transverse operators -------------------------------------------------------

def dx(s, grid):
    s = _check(s, grid)
    return (s[2:, 1:-1] - s[:-2, 1:-1]) / (2.0 * grid.h)


def dy(s, grid):
    s = _check(s, grid)
    return (s[1:-1, 2:] - s[1:-1, :-2]) / (2.0 * grid.h)


def dxx(s, grid):
    s = _check(s, grid)
    return (s[2:, 1:-1] - 2.0 * s[1:-1, 1:-1] + s[:-2, 1:-1]) / grid.h**2


def dyy(s, grid):
    s = _check(s, grid)
    return (s[1:-1, 2:] - 2.0 * s[1:-1, 1:-1] + s[1:-1, :-2]) / grid.h**2


# continuous-axis operators --------------------------------------------------

def dz(s, grid):
    """Centered first difference in z, second-order one-sided at z = 0 and 1."""
    return np.gradient(np.asarray(s, dtype=float), grid.dz, axis=2, edge_order=2)


def dzz(s, grid):
    """Three-point second difference in z; four-point one-sided at the faces."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    h2 = grid.dz**2
    out[:, :, 1:-1] = (s[:, :, 2:] - 2.0 * s[:, :, 1:-1] + s[:, :, :-2]) / h2
    out[:, :, 0] = (2 * s[:, :, 0] - 5 * s[:, :, 1] + 4 * s[:, :, 2] - s[:, :, 3]) / h2
    out[:, :, -1] = (2 * s[:, :, -1] - 5 * s[:, :, -2] + 4 * s[:, :, -3] - s[:, :, -4]) / h2
    return out


def dt(s, grid):
    return np.gradient(np.asarray(s, dtype=float), grid.dt, axis=3, edge_order=2)


def dzt(s, grid):
    return dt(dz(s, grid), grid)


def laplacian_h(s, grid):
    """Partial finite-difference Laplacian at interior nodes."""
    return dxx(s, grid) + dyy(s, grid) + interior(dzz(s, grid))


def grad_h(s, grid):
    """(dx, dy, dz) at interior nodes, stacked on a new leading axis."""
    return np.stack([dx(s, grid), dy(s, grid), interior(dz(s, grid))])


def _second_full(s, h, axis):
    s = np.moveaxis(np.asarray(s, dtype=float), axis, 0)
    out = np.empty_like(s)
    out[1:-1] = (s[2:] - 2.0 * s[1:-1] + s[:-2]) / h**2
    out[0] = (2 * s[0] - 5 * s[1] + 4 * s[2] - s[3]) / h**2
    out[-1] = (2 * s[-1] - 5 * s[-2] + 4 * s[-3] - s[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def laplacian_full(s, grid):
    """Laplacian on every node, one-sided second differences on the faces."""
    s = _check(s, grid)
    return _second_full(s, grid.h, 0) + _second_full(s, grid.h, 1) + dzz(s, grid)


# norms -----------------------------------------------------------------------

def _int_z(f, grid):
    return np.trapezoid(f, dx=grid.dz, axis=2)


def _int_t(f, grid, axis=-1):
    return np.trapezoid(f, dx=grid.dt, axis=axis)


def _window(s, grid, t_window, axis):
    if t_window is None:
        return s, grid
    k = grid.t_index(t_window)
    sub = GridSpec(grid.N, grid.X, grid.h0, grid.z_samples, k + 1, t_window,
                   min(grid.t1, t_window))
    return np.take(s, np.arange(k + 1), axis=axis), sub


def _trace_interior(s, grid):
    s = np.asarray(s, dtype=float)
    if s.shape[:2] == (grid.N + 2, grid.N + 2):
        return s[1:-1, 1:-1]
    if s.shape[:2] == (grid.N, grid.N):
        return s
    raise DomainMismatch(f"trace shape {s.shape} does not match N={grid.N}")


def norm(s, grid, which, squared=False, t_window=None, order=2):
    """Semi-discrete norms on Q, Omega, Gamma and Theta.

    Q-fields have shape (N+2, N+2, nz, nt), Omega-fields (N+2, N+2, nz) and
    Gamma-traces (N+2, N+2, nt) or (N, N, nt).  ``t_window`` restricts the
    time integral to [0, t_window].  Sums over interior nodes carry weight
    h^2 except the L2 trace norms on Gamma and Theta, which carry h.
    ``order`` is the z-derivative order used by ``Cnh``.
    """
    if which not in NORMS:
        raise DomainMismatch(f"unknown norm {which!r}")
    h = grid.h
    if which in ("H2h_Q", "H1h_Q", "L2h_Theta", "C2h"):
        s = _check(s, grid, ndim=(4,))
        if s.shape[2:] != (grid.z_samples, grid.t_samples):
            raise DomainMismatch(f"Q-field shape {s.shape} does not match the grid")
        s, g = _window(s, grid, t_window, axis=3)
        if which == "C2h":
            vals = [s, dz(s, g), dzz(s, g), dzt(s, g)]
            return max(float(np.abs(v).max()) for v in vals)
        if which == "L2h_Theta":
            sq = s**2
            faces = (sq[0, :].sum(0) + sq[-1, :].sum(0) + sq[:, 0].sum(0) + sq[:, -1].sum(0))
            val = h * _int_t(_int_z(faces[None, None], g), g)[0, 0]
        else:
            si = interior(s)
            integrand = si**2 + interior(dz(s, g)) ** 2 + interior(dt(s, g)) ** 2
            if which == "H2h_Q":
                # the literal definition lists s^2 in both of its sums
                integrand = (integrand + si**2 + interior(dzz(s, g)) ** 2
                             + interior(dzt(s, g)) ** 2)
            val = h**2 * _int_t(_int_z(integrand, g), g).sum()
    elif which in ("H1h_Omega", "L2h_Omega", "Cnh"):
        s = _check(s, grid, ndim=(3,))
        if s.shape[2] != grid.z_samples:
            raise DomainMismatch(f"Omega-field shape {s.shape} does not match the grid")
        if which == "Cnh":
            vals = [s, dz(s, grid), dzz(s, grid)][: order + 1]
            return max(float(np.abs(v).max()) for v in vals)
        si = interior(s)
        integrand = si**2
        if which == "H1h_Omega":
            integrand = integrand + interior(dz(s, grid)) ** 2
        val = h**2 * _int_z(integrand, grid).sum()
    else:
        s = _trace_interior(s, grid)
        if s.ndim != 3:
            raise DomainMismatch("Gamma traces have shape (i, j, t)")
        if t_window is not None:
            k = grid.t_index(t_window)
            s = s[..., : k + 1]
        if s.shape[-1] != (grid.t_samples if t_window is None else k + 1):
            raise DomainMismatch(f"trace shape {s.shape} does not match the t-sampling")
        if which == "H1h_Gamma":
            st = np.gradient(s, grid.dt, axis=-1, edge_order=2)
            val = h**2 * _int_t(s**2 + st**2, grid).sum()
        else:
            val = h * _int_t(s**2, grid).sum()
    val = float(val)
    return val if squared else float(np.sqrt(val))
