"""Scenario configs and the end-to-end pipeline behind the command line.

A scenario is one JSON document::

    {
      "scenario": "free_packet" | "harmonic" | "coherent" | "barrier" | "two_packet",
      "grid": {"n_points": 512, "q_min": -40.0, "q_max": 40.0},
      "physics": {
        "mass": 1.0, "hbar_eff": 1.0,
        "potential": {"kind": "none" | "harmonic" | "gaussian_barrier" | "cosine", ...},
        "vector_potential": {"kind": "none" | "constant" | "sine", ...},
        "packet": {"kind": "gaussian" | "coherent" | "two_gaussian" | "eigenstate", ...}
      },
      "run": {"dt": 0.01, "n_steps": 100, "snapshot_stride": 10},
      "ensemble": {"n_particles": 10000, "gamma": 50.0, "master_seed": 0, ...},
      "checks": {"<check name>": <threshold override>},
      "boundary_leak_tol": 1e-8,
      "output_dir": "out/free_packet"
    }

``ensemble`` may be omitted to run the wave stages only. Relative output
directories are resolved against the current working directory.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.signal

from . import __version__
from .ensemble import EnsembleConfig, born_distance, run as run_ensemble, sample_initial, write_density_csv
from .grid import Grid
from .madelung import decompose, identity_check, write_fields_csv
from .quantizer import ClassicalHamiltonianSpec, DiscretizationError, build_operator
from .schrodinger import (PropagationError, Snapshot, WaveField, check_dt_guard, init_gaussian, stream,
                          superpose, write_snapshots_csv)
from .verify import (ResidualReport, constraint_residual, hj_residual, stationary_hj_residual,
                     substitution_rules_check, symmetrization_consistency, velocity_averaging_defect)

SCENARIOS = ("free_packet", "harmonic", "coherent", "barrier", "two_packet")


class ConfigError(ValueError):
    """The scenario config is invalid (exit status 2)."""


class NumericalError(RuntimeError):
    """A numerical stage failed (exit status 3)."""


NUMERICAL_ERRORS = (NumericalError, PropagationError, DiscretizationError, FloatingPointError)

# default thresholds; a check passes when ``value <op> threshold``
DEFAULT_CHECKS = {
    "norm_drift": ("<", 1e-10),
    "velocity_averaging": ("<", 1e-14),
    "symmetrization": ("<", 1e-13),
    "identity_l2": ("<", 1e-8),
    "identity_l2_evolved": ("<", None),
    "constraint_l2": ("<", None),
    "hamilton_jacobi_l2": ("<", None),
    "dispersion_rel_err": ("<", 1e-3),
    "stationary_density_dev": ("<", 1e-8),
    "stationary_hj_max": ("<", 1e-6),
    "mean_position_err": ("<", 1e-3),
    "born_tv_max": ("<", 0.03),
    "sign_split_tv": (">", 0.1),
    "transmission_in_range": ("<=", 0.0),
    "transmission_diff_sigmas": ("<=", 3.0),
    "fringe_offset_bins": ("<=", 1.0),
}


# -- config ------------------------------------------------------------------

def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing '{key}' in {where}")
    return d[key]


def _positive(value, name: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return v


def _number(value, name: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    return v


def _count(value, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


@dataclass
class ScenarioConfig:
    raw: dict
    path: Path | None = None

    @property
    def scenario(self) -> str:
        return self.raw["scenario"]

    @property
    def name(self) -> str:
        return self.raw.get("name", self.scenario)

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    @property
    def physics(self) -> dict:
        return self.raw["physics"]

    @property
    def ensemble(self) -> dict | None:
        return self.raw.get("ensemble")

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def validate_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = copy.deepcopy(raw)
    sc = _require(raw, "scenario", "config")
    if sc not in SCENARIOS:
        raise ConfigError(f"unknown scenario {sc!r}; expected one of {', '.join(SCENARIOS)}")
    g = _require(raw, "grid", "config")
    n = _count(_require(g, "n_points", "grid"), "grid.n_points", 16)
    if n % 2 or n > 4096:
        raise ConfigError(f"grid.n_points must be even and <= 4096, got {n}")
    if not _number(_require(g, "q_max", "grid"), "grid.q_max") > _number(_require(g, "q_min", "grid"), "grid.q_min"):
        raise ConfigError("grid.q_max must exceed grid.q_min")
    ph = _require(raw, "physics", "config")
    _positive(_require(ph, "mass", "physics"), "physics.mass")
    _positive(_require(ph, "hbar_eff", "physics"), "physics.hbar_eff")
    ph.setdefault("potential", {"kind": "none"})
    ph.setdefault("vector_potential", {"kind": "none"})
    _validate_potential(ph["potential"])
    _validate_vector_potential(ph["vector_potential"])
    _validate_packet(_require(ph, "packet", "physics"), ph["potential"])
    r = _require(raw, "run", "config")
    _positive(_require(r, "dt", "run"), "run.dt")
    _count(_require(r, "n_steps", "run"), "run.n_steps", 1)
    r["snapshot_stride"] = _count(r.get("snapshot_stride", r["n_steps"]), "run.snapshot_stride", 1)
    ens = raw.get("ensemble")
    if ens is not None:
        _validate_ensemble(ens, raw)
    checks = raw.setdefault("checks", {})
    for k, v in checks.items():
        if k not in DEFAULT_CHECKS:
            raise ConfigError(f"unknown check {k!r}")
        if v is not None:
            _number(v, f"checks.{k}")
    raw["boundary_leak_tol"] = _positive(raw.get("boundary_leak_tol", 1e-8), "boundary_leak_tol")
    if not isinstance(raw.get("output_dir", f"out/{raw.get('name', sc)}"), str):
        raise ConfigError("output_dir must be a string")
    raw.setdefault("output_dir", f"out/{raw.get('name', sc)}")
    if sc == "barrier" and ph["potential"]["kind"] != "gaussian_barrier":
        raise ConfigError("barrier scenario needs a gaussian_barrier potential")
    if sc in ("harmonic", "coherent") and ph["potential"]["kind"] != "harmonic":
        raise ConfigError(f"{sc} scenario needs a harmonic potential")
    if sc == "two_packet" and ph["packet"]["kind"] != "two_gaussian":
        raise ConfigError("two_packet scenario needs a two_gaussian packet")
    if sc == "free_packet" and (ph["potential"]["kind"] != "none" or ph["packet"]["kind"] != "gaussian"):
        raise ConfigError("free_packet scenario needs potential 'none' and a gaussian packet")
    return ScenarioConfig(raw)


def _validate_potential(p: dict):
    kind = _require(p, "kind", "physics.potential")
    if kind == "none":
        return
    if kind == "harmonic":
        _positive(_require(p, "omega", "potential"), "potential.omega")
        _number(p.setdefault("center", 0.0), "potential.center")
    elif kind == "gaussian_barrier":
        _positive(_require(p, "height", "potential"), "potential.height")
        _positive(_require(p, "width", "potential"), "potential.width")
        _number(p.setdefault("center", 0.0), "potential.center")
    elif kind == "cosine":
        _number(_require(p, "amplitude", "potential"), "potential.amplitude")
        _number(p.setdefault("wavenumber", 1.0), "potential.wavenumber")
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")


def _validate_vector_potential(p: dict):
    kind = _require(p, "kind", "physics.vector_potential")
    if kind == "none":
        return
    if kind == "constant":
        _number(_require(p, "value", "vector_potential"), "vector_potential.value")
    elif kind == "sine":
        _number(_require(p, "amplitude", "vector_potential"), "vector_potential.amplitude")
        _number(p.setdefault("wavenumber", 1.0), "vector_potential.wavenumber")
    else:
        raise ConfigError(f"unknown vector_potential kind {kind!r}")


def _validate_packet(p: dict, potential: dict):
    kind = _require(p, "kind", "physics.packet")
    if kind == "gaussian":
        _number(_require(p, "q0", "packet"), "packet.q0")
        _positive(_require(p, "sigma0", "packet"), "packet.sigma0")
        _number(p.setdefault("p0", 0.0), "packet.p0")
    elif kind == "coherent":
        if potential["kind"] != "harmonic":
            raise ConfigError("a coherent packet needs a harmonic potential")
        _number(_require(p, "q0", "packet"), "packet.q0")
    elif kind == "two_gaussian":
        _positive(_require(p, "separation", "packet"), "packet.separation")
        _positive(_require(p, "sigma0", "packet"), "packet.sigma0")
        _number(p.setdefault("center", 0.0), "packet.center")
        _number(p.setdefault("p0", 0.0), "packet.p0")
    elif kind == "eigenstate":
        _count(_require(p, "index", "packet"), "packet.index")
    else:
        raise ConfigError(f"unknown packet kind {kind!r}")


def _validate_ensemble(e: dict, raw: dict):
    cfg = {k: e[k] for k in ("n_particles", "gamma", "integrator", "interpolation", "master_seed") if k in e}
    try:
        EnsembleConfig(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ensemble: {exc}") from None
    _count(e.get("n_particles", 10_000), "ensemble.n_particles", 100)
    _count(e.get("master_seed", 0), "ensemble.master_seed")
    dt = float(raw["run"]["dt"])
    gamma = float(e.get("gamma", 0.0))
    if gamma * dt > 0.1 * (1 + 1e-12):
        raise ConfigError(f"flip guard violated: gamma*dt = {gamma * dt:.3g} > 0.1")
    bins = _count(e.setdefault("bins", 64), "ensemble.bins", 2)
    lo, hi = e.setdefault("bin_range", [raw["grid"]["q_min"], raw["grid"]["q_max"]])
    if not (_number(lo, "bin_range") < _number(hi, "bin_range")):
        raise ConfigError("ensemble.bin_range must be increasing")
    if lo < raw["grid"]["q_min"] or hi > raw["grid"]["q_max"]:
        raise ConfigError("ensemble.bin_range must lie inside the grid")
    e["bins"] = bins
    for k, d in (("density_stride", raw["run"]["snapshot_stride"]), ("record_stride", raw["run"]["snapshot_stride"]),
                 ("record_every_particle", 100)):
        e[k] = _count(e.get(k, d), f"ensemble.{k}")


def load_config(path) -> ScenarioConfig:
    """Read a scenario JSON, or the config echoed in a run manifest."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if isinstance(raw, dict) and "artifacts" in raw and "config" in raw:
        raw = raw["config"]
    cfg = validate_config(raw)
    cfg.path = path
    return cfg


def apply_overrides(cfg: ScenarioConfig, seed=None, particles=None, gamma=None, hbar_eff=None,
                    output_dir=None) -> ScenarioConfig:
    raw = cfg.to_dict()
    if hbar_eff is not None:
        raw["physics"]["hbar_eff"] = hbar_eff
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    if any(v is not None for v in (seed, particles, gamma)):
        if raw.get("ensemble") is None:
            raise ConfigError(f"scenario {cfg.name!r} has no ensemble stage to override")
        for key, v in (("master_seed", seed), ("n_particles", particles), ("gamma", gamma)):
            if v is not None:
                raw["ensemble"][key] = v
    out = validate_config(raw)
    out.path = cfg.path
    return out


# -- construction --------------------------------------------------------------

@dataclass
class Setup:
    grid: Grid
    spec: ClassicalHamiltonianSpec
    operator: object
    initial: WaveField
    energy: float | None = None


def _potential(p: dict, mass: float):
    kind = p["kind"]
    if kind == "none":
        return None
    if kind == "harmonic":
        w, c = float(p["omega"]), float(p["center"])
        return lambda q: 0.5 * mass * w**2 * (q - c) ** 2
    if kind == "gaussian_barrier":
        h, s, c = float(p["height"]), float(p["width"]), float(p["center"])
        return lambda q: h * np.exp(-((q - c) ** 2) / (2 * s**2))
    a, k = float(p["amplitude"]), float(p["wavenumber"])
    return lambda q: a * np.cos(k * q)


def _vector_potential(p: dict):
    kind = p["kind"]
    if kind == "none":
        return None
    if kind == "constant":
        a = float(p["value"])
        return lambda q: np.full_like(q, a)
    a, k = float(p["amplitude"]), float(p["wavenumber"])
    return lambda q: a * np.sin(k * q)


def build(cfg: ScenarioConfig) -> Setup:
    g = cfg.raw["grid"]
    ph = cfg.physics
    m, hbar = float(ph["mass"]), float(ph["hbar_eff"])
    try:
        grid = Grid(int(g["n_points"]), float(g["q_min"]), float(g["q_max"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spec = ClassicalHamiltonianSpec.from_functions(grid, m, _vector_potential(ph["vector_potential"]),
                                                  _potential(ph["potential"], m))
    op = build_operator(spec, hbar)
    try:
        check_dt_guard(op, float(cfg.raw["run"]["dt"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    pk = ph["packet"]
    energy = None
    try:
        if pk["kind"] == "gaussian":
            psi0 = init_gaussian(grid, float(pk["q0"]), float(pk["sigma0"]), float(pk["p0"]), hbar)
        elif pk["kind"] == "coherent":
            w = float(ph["potential"]["omega"])
            sigma = math.sqrt(hbar / (2 * m * w))
            psi0 = init_gaussian(grid, float(pk["q0"]), sigma, 0.0, hbar)
        elif pk["kind"] == "two_gaussian":
            c, d, s = float(pk["center"]), float(pk["separation"]), float(pk["sigma0"])
            a = init_gaussian(grid, c - d / 2, s, float(pk["p0"]), hbar)
            b = init_gaussian(grid, c + d / 2, s, -float(pk["p0"]), hbar)
            psi0 = superpose(a, b)
        else:
            idx = int(pk["index"])
            if idx >= grid.n_points:
                raise ConfigError("packet.index exceeds the number of grid states")
            w, v = op.eigh()
            energy = float(w[idx])
            vec = v[:, idx]
            # fix the global phase so the state is reproducible across LAPACK builds
            j = int(np.argmax(np.abs(vec)))
            psi0 = WaveField(grid, vec * abs(vec[j]) / vec[j], 0.0, hbar).normalized()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"packet: {exc}") from None
    return Setup(grid, spec, op, psi0, energy)


# -- checks ----------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float | None
    op: str = "<"
    note: str = ""

    @property
    def passed(self) -> bool | None:
        if self.threshold is None:
            return None
        v, t = self.value, self.threshold
        if not math.isfinite(v):
            return False
        return {"<": v < t, "<=": v <= t, ">": v > t, ">=": v >= t}[self.op]

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]
        bound = "" if self.threshold is None else f" {self.op} {self.threshold:.3g}"
        note = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name:<26} {self.value:.6g}{bound}{note}"


def _check(cfg: ScenarioConfig, name: str, value: float, note: str = "") -> CheckResult:
    op, default = DEFAULT_CHECKS[name]
    threshold = cfg.raw["checks"].get(name, default)
    return CheckResult(name, float(value), None if threshold is None else float(threshold), op, note)


def merge_reports(name: str, reports: list[ResidualReport]) -> ResidualReport:
    """Combine per-window reports: rms of the L2 norms, max of the max norms."""
    if not reports:
        return ResidualReport(name, 0.0, 0.0, 0.0, {"n_windows": 0})
    meta = dict(reports[0].metadata)
    meta["n_windows"] = len(reports)
    return ResidualReport(
        name,
        float(np.sqrt(np.mean([r.l2_residual**2 for r in reports]))),
        float(max(r.max_residual for r in reports)),
        float(np.mean([r.masked_fraction for r in reports])),
        meta,
    )


def fringe_offsets(heights: np.ndarray, centers: np.ndarray, omega: np.ndarray, grid: Grid, n_particles: int,
                   n_fringes: int = 5, center: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the n_fringes density maxima nearest ``center`` and the offset of the closest histogram peak.

    Exact maxima are refined by a parabola through the three grid samples.
    Histogram peaks must stand out by four Poisson standard deviations.
    """
    lo, hi = centers[0], centers[-1]
    idx, _ = scipy.signal.find_peaks(omega)
    exact = []
    for j in idx:
        y0, y1, y2 = omega[j - 1], omega[j], omega[(j + 1) % grid.n_points]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        qj = grid.q[j] + shift * grid.dq
        if lo <= qj <= hi:
            exact.append(qj)
    exact = np.array(sorted(exact, key=lambda x: abs(x - center))[:n_fringes])
    if len(exact) < n_fringes:
        raise NumericalError(f"only {len(exact)} density maxima inside the histogram range")
    width = centers[1] - centers[0]
    noise = np.sqrt(max(heights.max(), 0.0) / (n_particles * width))
    peaks, _ = scipy.signal.find_peaks(heights, prominence=4 * noise)
    if peaks.size == 0:
        return np.sort(exact), np.full(len(exact), np.inf)
    found = centers[peaks]
    offsets = np.array([np.min(np.abs(found - x)) for x in exact])
    order = np.argsort(exact)
    return exact[order], offsets[order]


# -- pipeline ----------------------------------------------------------------------

@dataclass
class ScenarioResult:
    config: ScenarioConfig
    checks: list[CheckResult]
    artifacts: dict[str, str]
    manifest_path: Path
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"hjlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


class _Monitor:
    """Observes every wave state: norm drift, boundary density, snapshot windows."""

    def __init__(self, setup: Setup, cfg: ScenarioConfig, h: float, snap_every: int):
        self.setup, self.cfg, self.h, self.snap_every = setup, cfg, h, snap_every
        self.norm0 = setup.initial.norm()
        self.norm_drift = 0.0
        self.boundary = 0.0
        self.snapshots: list[WaveField] = []
        self.windows: list[list[WaveField]] = []
        self.prev = None
        self.pending = None
        self.k = 0
        self.rho0 = setup.initial.density
        self.density_dev = 0.0
        self.final = setup.initial

    def __call__(self, st: WaveField):
        self.norm_drift = max(self.norm_drift, abs(st.norm() - self.norm0))
        rho = st.density
        peak = rho.max()
        self.boundary = max(self.boundary, rho[0] / peak, rho[-1] / peak)
        if self.setup.energy is not None:
            self.density_dev = max(self.density_dev, float(np.max(np.abs(rho - self.rho0))))
        if self.pending is not None:
            self.windows.append([self.pending[0], self.pending[1], st])
            self.pending = None
        if self.k % self.snap_every == 0:
            self.snapshots.append(st)
            if self.prev is not None:
                self.pending = (self.prev, st)
        self.prev = st
        self.final = st
        self.k += 1

    def observe(self, states):
        for st in states:
            self(st)
            yield st


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Execute every stage of a scenario and write its artifacts; checks are evaluated, never raised."""
    t_start = time.time()
    setup = build(cfg)
    run = cfg.raw["run"]
    dt, n_steps, stride = float(run["dt"]), int(run["n_steps"]), int(run["snapshot_stride"])
    ens_cfg = cfg.ensemble
    sub = 2 if ens_cfg is not None and ens_cfg.get("integrator", "rk4") == "rk4" else 1
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    grid, spec, hbar = setup.grid, setup.spec, setup.initial.hbar_eff
    checks: list[CheckResult] = []
    warnings: list[str] = []
    monitor = _Monitor(setup, cfg, dt / sub, stride * sub)
    states = monitor.observe(stream(setup.initial, setup.operator, dt / sub, n_steps * sub))
    ens_result = None
    with np.errstate(over="raise", invalid="ignore", divide="ignore"):
        if ens_cfg is not None:
            econf = EnsembleConfig(**{k: ens_cfg[k] for k in ("n_particles", "gamma", "integrator",
                                                               "interpolation", "master_seed") if k in ens_cfg})
            edges = np.linspace(*ens_cfg["bin_range"], ens_cfg["bins"] + 1)
            ensemble = sample_initial(setup.initial.density, grid, econf)
            ens_result = run_ensemble(ensemble, states, spec, dt, n_steps, econf, edges,
                                      density_stride=ens_cfg["density_stride"],
                                      record_stride=ens_cfg["record_stride"],
                                      record_every_particle=ens_cfg["record_every_particle"])
        else:
            for _ in states:
                pass
    final = monitor.final
    if not np.isfinite(final.psi).all():
        raise NumericalError("wave field became non-finite")

    # wave-level checks
    checks.append(_check(cfg, "norm_drift", monitor.norm_drift))
    avg = max(velocity_averaging_defect(s, spec) for s in monitor.snapshots)
    checks.append(_check(cfg, "velocity_averaging", avg, f"{len(monitor.snapshots)} snapshots"))
    sym = symmetrization_consistency(monitor.snapshots, spec)
    checks.append(_check(cfg, "symmetrization", sym.max_residual))
    checks.append(_check(cfg, "identity_l2", identity_check(decompose(setup.initial)).l2_residual, "initial state"))
    # evolved far tails carry propagator noise that the ratios amplify; reported only
    ident = max(identity_check(decompose(s)).l2_residual for s in monitor.snapshots)
    checks.append(_check(cfg, "identity_l2_evolved", ident, "worst snapshot"))
    reports = [sym]
    if monitor.windows:
        con = merge_reports("constraint", [constraint_residual(w, spec) for w in monitor.windows])
        hj = merge_reports("hamilton_jacobi", [hj_residual(w, spec) for w in monitor.windows])
        subs = [substitution_rules_check(w, spec).reports() for w in monitor.windows]
        reports += [con, hj] + [merge_reports(rs[0].name, list(rs)) for rs in zip(*subs)]
        checks.append(_check(cfg, "constraint_l2", con.l2_residual, f"time step {dt / sub:g}"))
        checks.append(_check(cfg, "hamilton_jacobi_l2", hj.l2_residual, "density-weighted"))

    sc = cfg.scenario
    ph = cfg.physics
    if sc == "free_packet":
        pk = ph["packet"]
        s0, m = float(pk["sigma0"]), float(ph["mass"])
        T = final.t - setup.initial.t
        want = s0 * math.sqrt(1 + (hbar * T / (2 * m * s0**2)) ** 2)
        got = math.sqrt(final.position_variance())
        checks.append(_check(cfg, "dispersion_rel_err", abs(got - want) / want, f"sigma(T)={got:.8g}, analytic {want:.8g}"))
    if setup.energy is not None:
        checks.append(_check(cfg, "stationary_density_dev", monitor.density_dev))
        plus, minus = stationary_hj_residual(setup.initial, spec, setup.energy)
        if plus.max_residual != minus.max_residual:
            raise NumericalError("stationary Hamilton-Jacobi residual depends on the sign of lambda")
        checks.append(_check(cfg, "stationary_hj_max", plus.max_residual, f"E={setup.energy:.12g}"))
        reports += [plus, minus]
    if ph["packet"]["kind"] == "coherent":
        w = float(ph["potential"]["omega"])
        q0 = float(ph["packet"]["q0"]) - float(ph["potential"]["center"])
        err = max(abs(s.mean_position() - float(ph["potential"]["center"]) - q0 * math.cos(w * s.t))
                  for s in monitor.snapshots)
        checks.append(_check(cfg, "mean_position_err", err / max(abs(q0), 1e-300), "relative to q0"))

    if ens_result is not None:
        n = ens_cfg["n_particles"]
        tvs = [born_distance(d, om, grid) for d, om in zip(ens_result.densities, ens_result.exact)]
        note = f"N={n}, gamma={ens_cfg.get('gamma', 0.0):g}, {len(tvs)} times, frozen steps {ens_result.frozen_total}"
        if ens_cfg.get("gamma", 0.0) > 0:
            checks.append(_check(cfg, "born_tv_max", max(tvs), note))
        else:
            plus, minus = ens_result.densities_by_sign[-1]
            om = ens_result.exact[-1]
            split = min(born_distance(plus, om, grid), born_distance(minus, om, grid))
            checks.append(_check(cfg, "sign_split_tv", split, "smaller of the two sign subensembles at the end"))
            checks.append(CheckResult("born_tv_max", max(tvs), None, "<", note))
        if sc == "barrier":
            c = float(ph["potential"]["center"])
            p = float(grid.integrate(np.where(grid.q > c, final.density, 0.0)))
            frac = float(np.mean(ens_result.ensemble.q > c))
            sigma = math.sqrt(p * (1 - p) / n)
            checks.append(_check(cfg, "transmission_in_range", max(0.1 - p, p - 0.5, 0.0), f"p={p:.6f}"))
            checks.append(_check(cfg, "transmission_diff_sigmas", abs(frac - p) / sigma,
                                 f"ensemble {frac:.6f} vs wave {p:.6f}, sigma {sigma:.2g}"))
        if sc == "two_packet":
            est = ens_result.densities[-1]
            exact, offs = fringe_offsets(est.heights, est.centers, ens_result.exact[-1], grid, n,
                                         center=float(ph["packet"]["center"]))
            width = float(est.widths[0])
            checks.append(_check(cfg, "fringe_offset_bins", float(np.max(offs)) / width,
                                 "maxima at " + ", ".join(f"{x:.3f}" for x in exact)))
    elif sc in ("barrier", "two_packet") or cfg.raw["checks"].get("born_tv_max") is not None:
        warnings.append(f"scenario {sc} without an ensemble stage skips its ensemble checks")

    if monitor.boundary > cfg.raw["boundary_leak_tol"]:
        warnings.append(f"boundary density {monitor.boundary:.3g} of peak exceeds {cfg.raw['boundary_leak_tol']:g}")

    # artifacts
    artifacts = {}

    def written(name):
        artifacts[name] = str(out / name)
        return out / name

    write_snapshots_csv(written("wave_snapshots.csv"), [Snapshot(s.t, s.psi) for s in monitor.snapshots], grid)
    write_fields_csv(written("fields.csv"), [(s.t, decompose(s, spec=spec)) for s in monitor.snapshots])
    if ens_result is not None:
        ens_result.trajectories.write_csv(written("trajectories.csv"))
        write_density_csv(written("densities.csv"), ens_result.densities, ens_result.exact, grid)
    with open(written("residuals.json"), "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in reports], fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(written("checks.json"), "w", encoding="utf-8") as fh:
        json.dump([c.to_dict() for c in checks], fh, indent=1, sort_keys=True)
        fh.write("\n")
    manifest = {
        "config": cfg.to_dict(),
        "config_path": None if cfg.path is None else str(cfg.path),
        "versions": _versions(),
        "seeds": {"master_seed": None if ens_cfg is None else ens_cfg.get("master_seed", 0)},
        "threads": {k: os.environ.get(k) for k in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS")},
        "wall_clock_s": time.time() - t_start,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t_start)),
        "argv": sys.argv,
        "warnings": warnings,
        "passed": all(c.passed is not False for c in checks),
        "artifacts": {k: {"path": os.path.basename(v), "sha256": _sha256(Path(v)), "bytes": os.path.getsize(v)}
                      for k, v in artifacts.items()},
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return ScenarioResult(cfg, checks, artifacts, manifest_path, warnings)
