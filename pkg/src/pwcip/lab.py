"""Experiment configuration, persistence, noise injection and drivers.

Configs are flat ``key = value`` text with dotted sections (``medium.*``,
``grid.*``, ``forward.*``, ``carleman.*``, ``solver.*``, ``sweep.*``).  Values
are Python literals; bare words are read as strings.  Every driver writes
only deterministic content (no timings, no absolute paths) so that a fixed
config and seed reproduce byte-identical files.
"""

import ast
import csv
import json
import re
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad, solve_ivp

from . import carleman, fdgrid, forward, geodesics, inversion
from .errors import ConfigError
from .fdgrid import GridSpec, interior
from .medium import MediumSpec, eval_all, eval_n, validate_medium

# key -> default; None means "derived" (see ExperimentConfig)
SCHEMA = {
    "medium.model": "layered",
    "medium.amplitude": None,
    "medium.inner": None,
    "medium.radius": None,
    "medium.cx": None,
    "medium.cy": None,
    "medium.z_start": None,
    "medium.z_end": None,
    "medium.n0": 1.2,
    "medium.n00": 1.5,
    "medium.X": 1.125,
    "medium.monotone_z": True,
    "grid.N": 8,
    "grid.h0": 0.1,
    "grid.z_samples": 41,
    "grid.t_samples": 61,
    "forward.T": None,
    "forward.r_trunc": 1,
    "forward.eps": 0.1,
    "forward.cfl": 0.5,
    "forward.dx": 0.025,
    "forward.fdtd_T": 1.6,
    "geodesics.ds": 1e-3,
    "geodesics.fan": 17,
    "carleman.xi": 1.0,
    "carleman.alpha": None,
    "carleman.lambdas": [5.0, 10.0, 20.0, 40.0],
    "carleman.families": ["clean"],
    "carleman.z_samples": 241,
    "carleman.t_samples": 161,
    "carleman.T1": 1.5,
    "solver.alpha": None,
    "solver.lam": 2.0,
    "solver.rho1": 1.0,
    "solver.rho2": 1.0,
    "solver.beta": None,
    "solver.M": 10.0,
    "solver.initial": "flat",
    "solver.max_iter": 3000,
    "solver.precondition": True,
    "solver.q_theta": "auto",
    "sweep.deltas": [1e-1, 1e-2, 1e-3, 1e-4],
    "sweep.seed": 0,
    "sweep.floor_subtract": True,
    "sweep.max_iter": 1000,
    "sweep.lambda_cap": 10.0,
}

_MEDIUM_PARAMS = ("amplitude", "inner", "radius", "cx", "cy", "z_start", "z_end")
_BARE = re.compile(r"^[A-Za-z_][\w\-]*$")


# configuration -----------------------------------------------------------------

def parse_config(text):
    """Parse ``key = value`` lines into a dict; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            if value in ("true", "false"):
                out[key] = value == "true"
            elif _BARE.match(value):
                out[key] = value
            else:
                raise ConfigError(key, f"cannot parse value {value!r}") from None
    return out


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        values = parse_config(text)
    values.update(overrides or {})
    return ExperimentConfig(values)


def _num(key, v, kind=float, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(key, f"expected an integer, got {v!r}")
    v = kind(v)
    if positive and v <= 0:
        raise ConfigError(key, "must be positive")
    return v


@dataclass
class ExperimentConfig:
    """Validated configuration with the derived horizons.

    The inversion horizon is T1 = 3 / alpha with alpha defaulting to
    2 / (3 n0); the error window is t1 = 1 / alpha; the forward horizon T
    defaults to T1 + n0.
    """

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in self.values:
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
        v = dict(SCHEMA)
        v.update(self.values)
        self.v = v
        self._validate()

    def __getitem__(self, key):
        return self.v[key]

    def _validate(self):
        v = self.v
        for key in ("medium.n0", "medium.n00", "medium.X", "grid.h0", "forward.eps",
                    "forward.cfl", "forward.dx", "forward.fdtd_T", "geodesics.ds", "carleman.xi",
                    "carleman.T1", "solver.lam", "solver.M", "sweep.lambda_cap"):
            v[key] = _num(key, v[key], positive=True)
        for key in ("solver.rho1", "solver.rho2"):
            v[key] = _num(key, v[key])
            if v[key] < 0:
                raise ConfigError(key, "must be non-negative")
        for key in ("grid.N", "grid.z_samples", "grid.t_samples", "forward.r_trunc", "geodesics.fan",
                    "carleman.z_samples", "carleman.t_samples", "solver.max_iter", "sweep.max_iter",
                    "sweep.seed"):
            v[key] = _num(key, v[key], kind=int)
        if v["sweep.seed"] < 0:
            raise ConfigError("sweep.seed", "must be non-negative")
        if v["medium.model"] not in ("constant", "layered", "windowed", "bump"):
            raise ConfigError("medium.model", f"unknown model {v['medium.model']!r}")
        if v["forward.r_trunc"] not in (1, 2):
            raise ConfigError("forward.r_trunc", "must be 1 or 2")
        if v["solver.initial"] not in ("flat", "data-extension"):
            raise ConfigError("solver.initial", "must be 'flat' or 'data-extension'")
        if v["solver.q_theta"] not in ("auto", "literal", "data"):
            raise ConfigError("solver.q_theta", "must be 'auto', 'literal' or 'data'")
        deltas = v["sweep.deltas"]
        if not isinstance(deltas, (list, tuple)) or not deltas:
            raise ConfigError("sweep.deltas", "expected a non-empty list")
        for d in deltas:
            d = _num("sweep.deltas", d)
            if not 0.0 < d < 1.0:
                raise ConfigError("sweep.deltas", f"delta={d} outside (0, 1)")
        lams = v["carleman.lambdas"]
        if not isinstance(lams, (list, tuple)) or not lams:
            raise ConfigError("carleman.lambdas", "expected a non-empty list")
        if list(lams) != sorted(lams) or min(lams) < 1:
            raise ConfigError("carleman.lambdas", "must be ascending and >= 1")
        fams = v["carleman.families"]
        if not isinstance(fams, (list, tuple)) or not set(fams) <= {"clean", "gamma", "theta"}:
            raise ConfigError("carleman.families", "subset of clean, gamma, theta")
        for key in ("medium.monotone_z", "solver.precondition", "sweep.floor_subtract"):
            if not isinstance(v[key], bool):
                raise ConfigError(key, "expected true or false")
        if v["solver.beta"] is not None:
            v["solver.beta"] = _num("solver.beta", v["solver.beta"])
        alpha0 = 2.0 / (3.0 * v["medium.n0"])
        if v["solver.alpha"] is None:
            v["solver.alpha"] = alpha0
        a = _num("solver.alpha", v["solver.alpha"], positive=True)
        if a > alpha0 * (1 + 1e-12):
            raise ConfigError("solver.alpha", f"must not exceed 2/(3 n0) = {alpha0:.6g}")
        if v["forward.T"] is None:
            v["forward.T"] = 3.0 / a + v["medium.n0"]
        T = _num("forward.T", v["forward.T"], positive=True)
        if T <= v["medium.n0"]:
            raise ConfigError("forward.T", f"must exceed n0 = {v['medium.n0']}")
        if 3.0 / a > T - v["medium.n0"] + 1e-9:
            raise ConfigError("forward.T", "must be at least T1 + n0 = 3/alpha + n0")
        try:
            self.medium()
            self.grid()
        except ValueError as exc:
            raise ConfigError("medium/grid", str(exc)) from None

    # derived objects ------------------------------------------------------------
    def medium(self):
        v = self.v
        params = {k: v[f"medium.{k}"] for k in _MEDIUM_PARAMS if v[f"medium.{k}"] is not None}
        model = v["medium.model"]
        allowed = {"constant": (), "layered": ("amplitude", "z_start", "z_end"),
                   "windowed": ("amplitude", "inner", "z_start", "z_end"),
                   "bump": _MEDIUM_PARAMS}[model]
        for k in params:
            if k not in allowed:
                raise ConfigError(f"medium.{k}", f"not a parameter of the {model} model")
        return MediumSpec(model, params, v["medium.n0"], v["medium.n00"], v["medium.X"],
                          v["medium.monotone_z"])

    @property
    def alpha(self):
        return float(self.v["solver.alpha"])

    @property
    def T(self):
        return float(self.v["forward.T"])

    def grid(self):
        v = self.v
        return GridSpec(v["grid.N"], v["medium.X"], v["grid.h0"], v["grid.z_samples"],
                        v["grid.t_samples"], 3.0 / self.alpha, 1.0 / self.alpha)

    def carleman_grid(self):
        v = self.v
        return carleman.carleman_grid(v["medium.X"], v["grid.N"], v["carleman.z_samples"],
                                      v["carleman.t_samples"], v["carleman.T1"], v["grid.h0"])

    def carleman_params(self):
        xi = self.v["carleman.xi"]
        return carleman.CarlemanParams(alpha=self.v["carleman.alpha"], xi=xi, xi0=xi, xi1=xi)

    def to_dict(self):
        return {k: self.v[k] for k in sorted(self.v)}


# persistence -------------------------------------------------------------------

MAGIC = b"PWCIP1"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, rows, columns=None):
    rows = [_plain(r) for r in rows]
    columns = columns or (sorted({k for r in rows for k in r}) if rows else [])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in columns])


def write_field(path, array, grid, name=""):
    """Binary dump: magic, uint32 header length, JSON header, little-endian float64 data."""
    a = np.ascontiguousarray(array, dtype="<f8")
    header = json.dumps({"name": name, "grid": grid.to_dict(), "shape": list(a.shape)},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(a.tobytes(order="C"))


def read_field(path):
    """Inverse of :func:`write_field`; returns (array, GridSpec, name)."""
    raw = Path(path).read_bytes()
    if raw[:6] != MAGIC:
        raise ValueError(f"{path}: not a field dump")
    (n,) = struct.unpack("<I", raw[6:10])
    header = json.loads(raw[10:10 + n])
    data = np.frombuffer(raw[10 + n:], dtype="<f8").reshape(header["shape"])
    return data.copy(), GridSpec(**header["grid"]), header["name"]


# forward data ------------------------------------------------------------------

@dataclass
class CleanData:
    medium: MediumSpec
    grid: GridSpec
    tau_field: object
    A_field: object
    alphas: list
    data: forward.TransformedData
    n_true: np.ndarray


def clean_data(config):
    """Optics-route data and the true fields for the configured medium."""
    m, g = config.medium(), config.grid()
    ds = config["geodesics.ds"]
    tf = geodesics.travel_time_field(m, g, ds=ds)
    af = geodesics.amplitude_field(m, g, tf)
    al = geodesics.higher_amplitudes(m, g, af, tf, config["forward.r_trunc"])
    wave = forward.optics_forward(m, g, tf, af, al, config.T)
    td = forward.transform_chain(forward.extract_cip_data(wave, g), tf, config.T, wave=wave, n0=m.n0)
    return CleanData(m, g, tf, af, al, td, eval_n(m, g.nodes()))


def layered_oracle(medium, z, rtol=1e-12):
    """Travel time and amplitude on a vertical ray, by quadrature and a scalar Riccati ODE.

    Along x = y = 0 the only nonzero curvature entry k = tau_zz obeys
    dk/dz = (n_z^2 + n n_zz - k^2) / n and d(log A)/dz = -k / (2 n).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))

    def nz(zz):
        n, g, H = eval_all(medium, np.array([[0.0, 0.0, zz]]))
        return n[0], g[0, 2], H[0, 2, 2]

    tau = np.array([quad(lambda s: nz(s)[0], 0.0, zi, epsabs=1e-14, epsrel=1e-13)[0] for zi in z])

    def rhs(zz, y):
        n, n1, n2 = nz(zz)
        return [(n1 * n1 + n * n2 - y[0] ** 2) / n, -0.5 * y[0] / n]

    sol = solve_ivp(rhs, (0.0, max(float(z.max()), 1e-12)), [0.0, np.log(0.5)], method="DOP853",
                    t_eval=np.sort(np.unique(z)), rtol=rtol, atol=1e-14)
    logA = np.interp(z, sol.t, sol.y[1])
    return tau, np.exp(logA)


# noise -------------------------------------------------------------------------

def _smooth_noise(rng, coords, modes=6, kmax=3):
    """Sum of random separable cosines in the given normalised coordinates."""
    shape = np.broadcast(*coords).shape
    out = np.zeros(shape)
    for _ in range(modes):
        amp = rng.standard_normal()
        term = np.ones(shape)
        for c in coords:
            k = rng.integers(0, kmax + 1)
            term = term * np.cos(np.pi * k * c + rng.uniform(0, 2 * np.pi))
        out += amp * term
    return out


def inject_noise(data, delta, seed):
    """Add smooth random perturbations of size 0.9 delta to g0, g1 and g2.

    g0 is scaled in H1h(Gamma), g1 in L2h(Gamma) and g2 in L2h(Theta); the
    perturbations live on the nodes that carry data.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta={delta} outside (0, 1)")
    g = data.grid
    rng = np.random.default_rng(seed)
    xs = (g.x + g.X) / (2 * g.X)
    zs = g.z
    ts = g.t / g.T1
    X_, Y_ = xs[:, None, None], xs[None, :, None]
    T_ = ts[None, None, :]
    out = data.copy()
    m = np.zeros(g.shape[:2])
    m[1:-1, 1:-1] = 1.0
    n0 = _smooth_noise(rng, (X_, Y_, T_)) * m[..., None]
    n1 = _smooth_noise(rng, (X_, Y_, T_)) * m[..., None]
    th = forward.theta_mask(g)[:, :, None, None]
    n2 = _smooth_noise(rng, (X_[..., None], Y_[..., None], zs[None, None, :, None],
                             ts[None, None, None, :])) * th
    target = 0.9 * delta
    out.g0 = data.g0 + n0 * target / fdgrid.norm(n0, g, "H1h_Gamma")
    out.g1 = data.g1 + n1 * target / fdgrid.norm(n1, g, "L2h_Gamma")
    out.g2 = data.g2 + n2 * target / fdgrid.norm(n2, g, "L2h_Theta")
    out.meta = dict(data.meta, delta=float(delta), seed=int(seed))
    return out


# inversion ---------------------------------------------------------------------

def q_theta_for(config, data):
    """Side-face values of d tau/dz: 1 (tau = z there), or read from the data.

    For a layered medium the side faces see the same profile as the
    interior; along a vertical ray A = A(0) sqrt(n(0) / n), so
    n = (A(0) / A)^2 with A = g2(., 0) on the faces.
    """
    mode = config["solver.q_theta"]
    if mode == "auto":
        mode = "data" if config.medium().diagnostic else "literal"
    if mode == "literal":
        return None
    A = data.g2[forward.theta_mask(data.grid)][:, :, 0]
    return np.clip((A[:, :1] / A) ** 2, 1.0, config["medium.n0"])


def build_problem(config, data, lam=None):
    lam = config["solver.lam"] if lam is None else lam
    m = config.medium()
    bounds = inversion.AdmissibleSet(config["solver.M"], m.n0,
                                     geodesics.amplitude_floor(m.n0, m.n00))
    return inversion.InversionProblem(data, data.grid, lam, config.alpha, bounds,
                                      config["solver.rho1"], config["solver.rho2"],
                                      config["solver.beta"], q_theta_for(config, data))


def solve(config, data, lam=None, max_iter=None):
    problem = build_problem(config, data, lam)
    return inversion.minimize(problem, initial=config["solver.initial"],
                              max_iter=max_iter or config["solver.max_iter"],
                              precondition=config["solver.precondition"],
                              seed=config["sweep.seed"])


def relative_n_error(n_hat, n_true):
    """||n_hat - n|| / ||n|| in L2h(Omega) over the interior nodes."""
    ni = interior(n_true)
    return float(np.sqrt(np.trapezoid(((n_hat - ni) ** 2).sum((0, 1)), axis=-1)
                         / np.trapezoid((ni**2).sum((0, 1)), axis=-1)))


def stability_errors(result, clean, t1):
    """The three error norms, w on Q_{h, t1} and tau, n on Omega_h."""
    g = clean.grid
    dn = np.zeros(g.shape)
    dn[1:-1, 1:-1] = result.n_hat - interior(clean.n_true)
    return {
        "w": fdgrid.norm(result.w_hat - clean.data.w, g, "H1h_Q", t_window=t1),
        "tau": fdgrid.norm(result.tau_hat - clean.tau_field.tau, g, "H1h_Omega"),
        "n": fdgrid.norm(dn, g, "L2h_Omega"),
    }


def holder_bound(delta):
    return float(delta ** (1.0 / 3.0) * np.log(1.0 / delta))


@dataclass
class StabilityRecord:
    delta: float
    lam: float
    errors: dict
    floor_subtracted: dict
    bound: float
    iterations: int
    J: float

    def row(self):
        r = {"delta": self.delta, "lambda": self.lam, "bound": self.bound,
             "iterations": self.iterations, "J": self.J}
        for k in ("w", "tau", "n"):
            r[f"err_{k}"] = self.errors[k]
            r[f"net_{k}"] = self.floor_subtracted[k]
        return r


def fit_holder(records, key):
    """Least-squares slope and intercept of log(error) against log(bound).

    C2 is the smallest constant with error <= C2 * bound^slope at every
    point, i.e. the fitted line shifted up to envelope the data.
    """
    pts = [(r.bound, r.floor_subtracted[key]) for r in records if r.floor_subtracted[key] > 0]
    errs = [r.floor_subtracted[key] for r in records]
    monotone = bool(all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:])))
    if len(pts) < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "C2": float("nan"),
                "monotone": monotone, "points": len(pts), "below_curve": False}
    B, E = np.log(np.array(pts)).T
    slope, intercept = np.polyfit(B, E, 1)
    C2 = float(np.max(np.exp(E - slope * B)))
    below = bool(np.all(np.exp(E) <= C2 * np.exp(slope * B) * (1 + 1e-12)))
    return {"slope": float(slope), "intercept": float(intercept), "C2": C2,
            "monotone": monotone, "points": len(pts), "below_curve": below,
            "in_range": bool(0.6 <= slope <= 1.4)}


def _sweep_entry(args):
    config, clean, delta, lam = args
    noisy = clean.data if delta is None else inject_noise(clean.data, delta, config["sweep.seed"])
    res = solve(config, noisy, lam=lam, max_iter=config["sweep.max_iter"])
    return res.diagnostics, stability_errors(res, clean, 1.0 / config.alpha)


def run_stability_sweep(config, threads=1, clean=None):
    """Invert noiseless and noisy data for every delta and fit the Holder law.

    Each delta uses lam(delta); its floor is the noiseless inversion at the
    same lam, so the subtracted error isolates the effect of the noise.  The
    noiseless run at ``solver.lam`` is reported as the baseline.
    """
    clean = clean or clean_data(config)
    deltas = sorted((float(d) for d in config["sweep.deltas"]), reverse=True)
    cap = config["sweep.lambda_cap"]
    lams = [inversion.lambda_for_noise(d, cap) for d in deltas]
    floor_lams = sorted(set(lams) | {float(config["solver.lam"])})
    jobs = [(config, clean, None, lam) for lam in floor_lams]
    jobs += [(config, clean, d, lam) for d, lam in zip(deltas, lams)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_sweep_entry, jobs))
    else:
        outs = [_sweep_entry(j) for j in jobs]
    floors = {lam: out for lam, out in zip(floor_lams, outs)}
    sub = config["sweep.floor_subtract"]
    records = []
    for d, lam, (diag, errs) in zip(deltas, lams, outs[len(floor_lams):]):
        floor = floors[lam][1]
        net = {k: max(errs[k] - floor[k], 0.0) if sub else errs[k] for k in errs}
        records.append(StabilityRecord(d, lam, errs, net, holder_bound(d),
                                       diag["iterations"], diag["J"]))
    fits = {k: fit_holder(records, k) for k in ("w", "tau", "n")}
    base = floors[float(config["solver.lam"])]
    extra = {"floor": base[1], "floor_J": base[0]["J"],
             "floors_by_lambda": [{"lambda": lam, **floors[lam][1]} for lam in floor_lams]}
    return records, fits, extra


# drivers -----------------------------------------------------------------------

def _out(out):
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def run_validate_medium(config, out):
    out = _out(out)
    rep = validate_medium(config.medium())
    write_json(out / "validation.json", {"medium": config.medium().to_dict(), **rep.to_dict()})
    return rep


def run_geodesic_report(config, out):
    """Travel times, amplitudes, regularity and curvature survey for one medium."""
    out = _out(out)
    m, g = config.medium(), config.grid()
    rep = {"medium": m.to_dict(), "grid": g.to_dict()}
    tf = geodesics.travel_time_field(m, g, ds=config["geodesics.ds"])
    af = geodesics.amplitude_field(m, g, tf)
    rep["travel_time"] = {"residual": tf.residual, "iterations": tf.iterations,
                          "max_defect": tf.max_defect, "tau_max": float(tf.tau.max()),
                          "dz_tau_min": float(tf.dz_tau.min()), "dz_tau_max": float(tf.dz_tau.max())}
    rep["amplitude"] = {"min": float(af.A.min()), "max": float(af.A.max()), "floor": af.A0,
                        "above_floor": bool(af.A.min() >= af.A0), "max_rate": af.max_rate}
    rep["regularity"] = geodesics.check_regularity(m, ds=config["geodesics.ds"]).to_dict()
    fan = geodesics.default_fan(m, config["geodesics.fan"])
    rep["curvature"] = geodesics.curvature_survey(m, fan, ds=config["geodesics.ds"]).to_dict()
    rows = []
    if m.transversally_invariant:
        tau_o, A_o = layered_oracle(m, g.z)
        rep["oracle"] = {"tau_max_error": float(np.abs(tf.tau[1, 1] - tau_o).max()),
                         "A_max_error": float(np.abs(af.A[1, 1] - A_o).max())}
        rows = [{"z": float(z), "tau": float(a), "tau_oracle": float(b), "A": float(c),
                 "A_oracle": float(d)} for z, a, b, c, d in zip(g.z, tf.tau[1, 1], tau_o,
                                                                af.A[1, 1], A_o)]
    else:
        c = g.N // 2 + 1
        rows = [{"z": float(z), "tau": float(a), "A": float(b)}
                for z, a, b in zip(g.z, tf.tau[c, c], af.A[c, c])]
    write_json(out / "geodesics.json", rep)
    write_csv(out / "profile.csv", rows)
    write_field(out / "tau.bin", tf.tau, g, "tau")
    write_field(out / "A.bin", af.A, g, "A")
    return rep


def run_forward_crosscheck(config, out):
    """Optics data plus an FDTD run over a short horizon, compared node by node."""
    out = _out(out)
    clean = clean_data(config)
    m, g = clean.medium, clean.grid
    wave = forward.fdtd_forward(m, g, config["forward.fdtd_T"], eps=config["forward.eps"],
                                cfl=config["forward.cfl"], dx=config["forward.dx"])
    cc = forward.crosscheck(wave, g, clean.tau_field, clean.A_field)
    td = clean.data
    rep = {"medium": m.to_dict(), "grid": g.to_dict(), "T": config.T,
           "fdtd_T": config["forward.fdtd_T"], "crosscheck": cc.to_dict(),
           "w_minus_A_at_t0": float(np.abs(td.w[..., 0] - clean.A_field.A).max())}
    write_json(out / "forward.json", rep)
    write_csv(out / "gamma_data.csv", [{"t": float(t), "g0": float(a), "g1": float(b)}
                                       for t, a, b in zip(g.t, td.g0[1, 1], td.g1[1, 1])])
    write_field(out / "w.bin", td.w, g, "w")
    return rep


def run_carleman_report(config, out):
    out = _out(out)
    g = config.carleman_grid()
    params = config.carleman_params()
    suite = carleman.field_suite(g, tuple(config["carleman.families"]))
    rep = {}
    for which in ("C4", "C6"):
        r = carleman.verify_estimate(which, suite, config["carleman.lambdas"], params, g)
        d = r.to_dict()
        write_csv(out / f"{which}_rows.csv", d.pop("rows"))
        rep[which] = d
    write_json(out / "carleman.json", rep)
    return rep


def run_inversion(config, out):
    out = _out(out)
    clean = clean_data(config)
    res = solve(config, clean.data)
    g = clean.grid
    diag = dict(res.diagnostics)
    diag["relative_n_error"] = relative_n_error(res.n_hat, clean.n_true)
    diag["errors"] = stability_errors(res, clean, 1.0 / config.alpha)
    diag["config"] = config.to_dict()
    write_json(out / "inversion.json", diag)
    write_csv(out / "trace.csv", [{"iteration": i, "J": float(j)} for i, j in enumerate(res.trace)],
              ["iteration", "J"])
    write_field(out / "w_hat.bin", res.w_hat, g, "w_hat")
    write_field(out / "tau_hat.bin", res.tau_hat, g, "tau_hat")
    write_field(out / "n_hat.bin", res.n_hat, g, "n_hat")
    return res, diag


def run_sweep(config, out, threads=1):
    out = _out(out)
    records, fits, floor = run_stability_sweep(config, threads)
    write_csv(out / "records.csv", [r.row() for r in records])
    write_json(out / "fit.json", {"fits": fits, **floor, "config": config.to_dict()})
    return records, fits, floor


# figures -----------------------------------------------------------------------

def render_figures(kind, out):
    """Optional PNGs next to the CSV outputs (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out)

    def rows(name):
        with open(out / name) as fh:
            return list(csv.DictReader(fh))

    made = []
    if kind == "geodesics":
        r = rows("profile.csv")
        fig, ax = plt.subplots(1, 2, figsize=(8, 3))
        z = [float(a["z"]) for a in r]
        for j, key in enumerate(("tau", "A")):
            ax[j].plot(z, [float(a[key]) for a in r], label=key)
            if f"{key}_oracle" in r[0]:
                ax[j].plot(z, [float(a[f"{key}_oracle"]) for a in r], "--", label="oracle")
            ax[j].set_xlabel("z")
            ax[j].legend()
        made.append("profile.png")
    elif kind == "forward":
        r = rows("gamma_data.csv")
        fig, ax = plt.subplots(figsize=(5, 3))
        t = [float(a["t"]) for a in r]
        for key in ("g0", "g1"):
            ax.plot(t, [float(a[key]) for a in r], label=key)
        ax.set_xlabel("t")
        ax.legend()
        made.append("gamma_data.png")
    elif kind == "carleman":
        fig, ax = plt.subplots(figsize=(5, 3))
        for which in ("C4", "C6"):
            r = rows(f"{which}_rows.csv")
            lam = sorted({float(a["lambda"]) for a in r})
            rho = [min(float(a["rho"]) for a in r if float(a["lambda"]) == l and a["rho"] != "nan")
                   for l in lam]
            ax.loglog(lam, rho, "o-", label=which)
        ax.set_xlabel("lambda")
        ax.set_ylabel("min lhs / W")
        ax.legend()
        made.append("carleman.png")
    elif kind == "invert":
        r = rows("trace.csv")
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.semilogy([int(a["iteration"]) for a in r], [float(a["J"]) for a in r])
        ax.set_xlabel("iteration")
        ax.set_ylabel("J")
        made.append("trace.png")
    elif kind == "sweep":
        r = rows("records.csv")
        fig, ax = plt.subplots(figsize=(5, 3))
        B = [float(a["bound"]) for a in r]
        for key in ("w", "tau", "n"):
            ax.loglog(B, [float(a[f"net_{key}"]) for a in r], "o-", label=key)
        ax.set_xlabel("delta^(1/3) ln(1/delta)")
        ax.set_ylabel("error")
        ax.legend()
        made.append("sweep.png")
    else:
        return []
    fig.tight_layout()
    fig.savefig(out / made[0], dpi=100)
    plt.close(fig)
    return made
