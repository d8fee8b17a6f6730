"""Sweep orchestration: run experiment kinds from a resolved config.

Each eta job is a pure module-level function (safe for process pools);
failures are isolated per row and recorded instead of aborting the sweep.
Aggregation is single-threaded in a deterministic order, so identical
configs and seeds give byte-identical CSVs.
"""

from __future__ import annotations

import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import advdiff, mhd3d, stochastic, topology
from ..spectral import Grid, ParameterError, SpectralField, VectorField
from .config import ConfigError, format_config, validate_config
from .fits import fit_reconnection_scaling

__all__ = ["SweepRow", "SweepResult", "run_experiment", "composite_reduced_field"]


@dataclass
class SweepRow:
    eta: float
    values: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class SweepResult:
    kind: str
    rows: list[SweepRow]
    fits: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    config_text: str = ""

    def ok_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.error is None]

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.resolved"), "w") as fh:
            fh.write(self.config_text)
        keys: list[str] = []
        for r in self.rows:
            for k in r.values:
                if k not in keys:
                    keys.append(k)
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            prov = " ".join(f"{k}={v}" for k, v in sorted(self.provenance.items()))
            fh.write(f"# {prov}\n")
            fh.write(",".join(["eta"] + keys + ["error"]) + "\n")
            for r in self.rows:
                cells = [f"{r.eta:.17g}"]
                for k in keys:
                    v = r.values.get(k)
                    if v is None:
                        cells.append("")
                    elif isinstance(v, float):
                        cells.append(f"{v:.17g}")
                    else:
                        cells.append(str(v))
                cells.append(r.error or "")
                fh.write(",".join(cells) + "\n")
        with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
            fh.write(f"experiment: {self.kind}\n")
            for k, v in sorted(self.fits.items()):
                fh.write(f"{k}: {v}\n")


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _provenance(cfg: dict, t0: float) -> dict:
    return {
        "git": _git_hash(),
        "seed": cfg.get("seed", 0),
        "wall_seconds": round(time.time() - t0, 3),
    }


# ----------------------------------------------------------------------
# Shared builders
# ----------------------------------------------------------------------

def _grid2(cfg: dict) -> Grid:
    n = cfg["grid_n"]
    return Grid((n, n))


def _sin_x1(grid: Grid) -> SpectralField:
    x1, _ = grid.meshgrid()
    return SpectralField.from_physical(grid, np.sin(x1))


def _flow_of(cfg: dict):
    if cfg.get("flow", "kolmogorov") == "none":
        return None
    return advdiff.KolmogorovFlow(cfg.get("amplitude", 1.0), cfg.get("wavenumber", 1))


def _velocity_or_zero(flow, grid: Grid) -> VectorField:
    if flow is None:
        return VectorField.zero(grid, 2)
    return advdiff.velocity_of(flow, grid)


def _auto_dt(cfg: dict, grid: Grid, flow) -> float:
    if cfg.get("dt"):
        return float(cfg["dt"])
    return advdiff._default_dt(_velocity_or_zero(flow, grid), grid) \
        if flow is not None else 1.0      # pure diffusion: the factor is exact at any dt


def composite_reduced_field(rho: SpectralField, eps: float, x_star, n3: int = 8) -> VectorField:
    """3D magnetic field (eps sin(x2-x2*), eps sin(x3-x3*), M + rho) for tracking.

    ``rho`` is the 2D mean-shifted vertical component carrying the mean M in
    its k = 0 mode; the transverse perturbation is held at its initial shape
    (its drift is O(eps) on the tracked window).
    """
    g2 = rho.grid
    grid3 = Grid(g2.sizes + (n3,), g2.periods + (2.0 * math.pi,))
    b1 = np.zeros(grid3.sizes, dtype=np.complex128)
    b2 = np.zeros(grid3.sizes, dtype=np.complex128)
    b3 = np.zeros(grid3.sizes, dtype=np.complex128)
    b3[:, :, 0] = rho.coeff
    # eps*sin(x2 - x2*): modes (0, +-1, 0); eps*sin(x3 - x3*): modes (0, 0, +-1)
    phase2 = np.exp(-1j * x_star[1])
    b1[0, 1, 0] = eps * phase2 / 2.0j
    b1[0, -1, 0] = np.conj(b1[0, 1, 0])
    phase3 = np.exp(-1j * x_star[2])
    b2[0, 0, 1] = eps * phase3 / 2.0j
    b2[0, 0, -1] = np.conj(b2[0, 0, 1])
    return VectorField(grid3, np.stack([b1, b2, b3]))


# ----------------------------------------------------------------------
# Per-eta jobs (module level: picklable for process pools)
# ----------------------------------------------------------------------

def _job_advdiff_rate(args) -> dict:
    eta, cfg = args
    grid = _grid2(cfg)
    flow = _flow_of(cfg)
    rho0 = _sin_x1(grid)
    if flow is not None:
        rho0 = advdiff.project_streamline_average(rho0, flow)
    dt = _auto_dt(cfg, grid, flow)
    U = _velocity_or_zero(flow, grid)
    t_dis = advdiff.dissipation_time(rho0, U, eta, dt, cadence=cfg.get("cadence", 10))
    return {"t_dis": t_dis, "dt": dt}


def _job_hs_constant(args) -> dict:
    eta, cfg = args
    grid = _grid2(cfg)
    flow = advdiff.KolmogorovFlow()
    rho0 = advdiff.project_streamline_average(_sin_x1(grid), flow)
    U = advdiff.velocity_of(flow, grid)
    dt = _auto_dt(cfg, grid, flow)
    t_dis = advdiff.dissipation_time(rho0, U, eta, dt)
    out = {"t_dis": t_dis}
    horizon = cfg.get("horizon_factor", 2.0) * t_dis
    for s in cfg["s_list"]:
        res = advdiff.hs_decay_constant(rho0, U, eta, float(s), T=horizon, dt=dt)
        out[f"const_s{s:g}"] = res["constant"]
        out[f"lambda_s{s:g}"] = res["lambda"]
    return out


def _positivity_time_from_run(rho0: SpectralField, U: VectorField, eta: float, dt: float,
                              M: float, slack: float, horizon: float,
                              snap_every: float) -> float | None:
    """Reduced-mode reconnection time: advect the fluctuation, watch sup|rho| < M.

    Keeps a rolling pre-crossing snapshot so long sweeps stay memory-lean;
    the crossing bracket is handed to the bisection refiner.
    """
    stepper = advdiff.AdvDiffStepper(U, eta, dt, True)
    coeff = rho0.coeff.copy()
    t = 0.0
    prev = (0.0, SpectralField(rho0.grid, coeff).shifted_mean(M))
    nsteps = int(math.ceil(horizon / dt))
    snap_stride = max(1, int(round(snap_every / dt)))
    bracket = None
    for i in range(nsteps):
        coeff = stepper.step(coeff)
        t += dt
        if (i + 1) % snap_stride == 0:
            b3 = SpectralField(rho0.grid, coeff).shifted_mean(M)
            ok, _ = topology.positivity_criterion(b3, M, slack)
            if ok:
                bracket = (prev, (t, b3))
                break
            prev = (t, b3)
    if bracket is None:
        return None

    def advance(payload: SpectralField, t0: float, t1: float) -> SpectralField:
        c = payload.coeff.copy()
        for _ in range(int(round((t1 - t0) / dt))):
            c = stepper.step(c)
        return SpectralField(payload.grid, c)

    report = topology.reconnection_time(list(bracket), "positivity_b3", M, slack,
                                        advance=advance)
    return report.t_first_no_zero


def _job_reconnect_shear(args) -> dict:
    eta, cfg = args
    grid = _grid2(cfg)
    M = cfg["m_mean"]
    eps = cfg["eps"]
    x_star = tuple(cfg["x_star"]) if cfg.get("x_star") else (math.pi, math.pi, math.pi)
    slack = cfg.get("slack", 0.0)
    d = mhd3d.NullPointData(M=M, eps=eps, x_star=x_star)
    rho0 = mhd3d.null_point_b3(d, grid).shifted_mean(0.0)

    flow = advdiff.KolmogorovFlow()
    U = advdiff.velocity_of(flow, grid)
    dt = _auto_dt(cfg, grid, flow)
    horizon = 1.5 * abs(math.log(eta)) / math.sqrt(eta)

    out: dict = {"dt": dt}

    # small-time persistence of the tracked null on the composite 3D field
    stepper = advdiff.AdvDiffStepper(U, eta, dt, True)
    coeff = rho0.coeff.copy()
    t = 0.0
    snaps3d = [(0.0, composite_reduced_field(
        SpectralField(grid, coeff).shifted_mean(M), eps, x_star))]
    t_persist = cfg.get("persistence_horizon", 0.1)
    snap_stride = max(1, int(round(0.01 / dt)))
    while t < t_persist - 1e-12:
        coeff = stepper.step(coeff)
        t += dt
        if int(round(t / dt)) % snap_stride == 0:
            snaps3d.append((t, composite_reduced_field(
                SpectralField(grid, coeff).shifted_mean(M), eps, x_star)))
    maintained, track = topology.persistence_check(snaps3d, x_star, radius=0.2)
    out["persist_ok"] = int(maintained)
    out["persist_window"] = track[-1][0] if track else 0.0
    if track:
        drift = topology._torus_distance(track[-1][1], x_star, (2 * math.pi,) * 3)
        out["zero_drift"] = drift

    # reconnection times: stirred vs diffusion-only
    t_star = _positivity_time_from_run(rho0, U, eta, dt, M, slack, horizon,
                                       snap_every=max(horizon / 80.0, dt))
    out["t_star"] = t_star if t_star is not None else float("nan")
    U0 = VectorField.zero(grid, 2)
    heat_horizon = 1.2 * math.log(2.0 / max(1.0 - slack, 1e-6)) / eta
    t_star0 = _positivity_time_from_run(rho0, U0, eta, 1.0, M, slack, heat_horizon,
                                        snap_every=max(heat_horizon / 200.0, 1.0))
    out["t_star_heat"] = t_star0 if t_star0 is not None else float("nan")
    if t_star is not None and t_star0 is not None:
        out["speedup"] = t_star0 / t_star
    return out


def _job_reconnect_full(args) -> dict:
    """Full-3D confirmation: strict zero-set criterion on the MHD evolution."""
    eta, cfg = args
    n3 = cfg.get("grid_n3", 32)
    grid = Grid((n3, n3, n3))
    M, eps = cfg["m_mean"], cfg["eps"]
    x_star = tuple(cfg["x_star"]) if cfg.get("x_star") else (math.pi, math.pi, math.pi)
    d = mhd3d.NullPointData(M=M, eps=eps, x_star=x_star)
    u0, b0 = mhd3d.make_null_point_data(d, grid)
    horizon = 1.5 * abs(math.log(eta)) / math.sqrt(eta)
    dt = cfg.get("dt") or 5e-3
    params = mhd3d.MHDParams(eta=eta, dt=dt, T=horizon,
                             hyper_coeff=0.65, cadence=max(1, int(0.5 / dt)))
    state = mhd3d.MHDState(u0, b0)
    snaps = []

    def watch(s: mhd3d.MHDState):
        snaps.append((s.time, s.b))

    def positive(s: mhd3d.MHDState) -> bool:
        ok, _ = topology.positivity_criterion(s.b.component(2), M, slack=0.0)
        return ok

    mhd3d.run_mhd(state, params, observer=watch, stop_when=positive)
    report = topology.reconnection_time(snaps, "strict_zero_set", M)
    return {"t_star_strict": report.t_first_no_zero
            if report.t_first_no_zero is not None else float("nan"),
            "dt": dt}


def _job_reconnect_stochastic(cfg: dict) -> stochastic.UniformDecayResult:
    grid = _grid2(cfg)
    M = cfg["m_mean"]
    noise = stochastic.NoiseSpec(alpha=cfg["alpha"], seed=cfg["seed"],
                                 amplitude=cfg["amplitude"])
    x1, _ = grid.meshgrid()
    rho0 = SpectralField.from_physical(grid, -2.0 * M * np.cos(x1 - math.pi / 3.0))
    return stochastic.uniform_decay_experiment(
        noise, cfg["eta_list"], rho0, horizon=cfg["horizon"], dt=cfg["dt"], M=M)


# ----------------------------------------------------------------------
# Dispatcher
# ----------------------------------------------------------------------

def _run_rows(job, etas, cfg: dict) -> list[SweepRow]:
    threads = cfg.get("threads", 1)
    args = [(float(e), cfg) for e in etas]
    rows: list[SweepRow] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(job, a) for a in args]
            for (eta, _), fut in zip(args, futures):
                try:
                    rows.append(SweepRow(eta, fut.result()))
                except Exception as exc:   # isolate per-eta failures
                    rows.append(SweepRow(eta, error=f"{type(exc).__name__}: {exc}"))
    else:
        for a in args:
            try:
                rows.append(SweepRow(a[0], job(a)))
            except Exception as exc:
                rows.append(SweepRow(a[0], error=f"{type(exc).__name__}: {exc}"))
    return rows


def run_experiment(cfg: dict) -> SweepResult:
    """Validate, run, aggregate, and fit one experiment; does not write files."""
    cfg = validate_config(cfg)
    kind = cfg["experiment"]
    t0 = time.time()
    etas = sorted(cfg.get("eta_list", []), reverse=True)

    if kind == "advdiff_rate":
        rows = _run_rows(_job_advdiff_rate, etas, cfg)
        fits = {}
        good = [(r.eta, r.values["t_dis"]) for r in rows if r.error is None]
        if len(good) >= 2:
            e, td = np.array([g[0] for g in good]), np.array([g[1] for g in good])
            slope, intercept, r2 = advdiff._lsq_line(np.log(1.0 / e), np.log(td))
            fits = {"exponent": slope, "intercept": intercept, "r2": r2}
        return SweepResult(kind, rows, fits, _provenance(cfg, t0), format_config(cfg))

    if kind == "hs_constant":
        rows = _run_rows(_job_hs_constant, etas, cfg)
        fits = {}
        for s in cfg["s_list"]:
            key = f"const_s{s:g}"
            good = [(r.eta, r.values[key]) for r in rows if r.error is None]
            if len(good) >= 2:
                e = np.array([g[0] for g in good])
                c = np.array([g[1] for g in good])
                slope, _, r2 = advdiff._lsq_line(np.log(1.0 / e), np.log(c))
                fits[f"growth_exponent_s{s:g}"] = slope
                fits[f"r2_s{s:g}"] = r2
        return SweepResult(kind, rows, fits, _provenance(cfg, t0), format_config(cfg))

    if kind == "reconnect_shear":
        job = _job_reconnect_full if cfg.get("mode") == "full" else _job_reconnect_shear
        rows = _run_rows(job, etas, cfg)
        fits: dict = {}
        key = "t_star_strict" if cfg.get("mode") == "full" else "t_star"
        good = [(r.eta, r.values[key]) for r in rows
                if r.error is None and math.isfinite(r.values.get(key, float("nan")))]
        if len(good) >= 4:
            sf = fit_reconnection_scaling([g[0] for g in good], [g[1] for g in good],
                                          models=("accelerated", "diffusive"))
            fits.update({
                "best_model": sf.best_model,
                "c2_accelerated": sf.coefficients["accelerated"],
                "r2_accelerated": sf.r2["accelerated"],
                "r2_diffusive": sf.r2["diffusive"],
                "eta_tstar_decreasing": sf.accelerated_check,
            })
        if cfg.get("mode") != "full":
            windows = [r.values.get("persist_window", 0.0) for r in rows if r.error is None]
            if windows:
                fits["persist_window_variation"] = (
                    (max(windows) - min(windows)) / max(max(windows), 1e-30))
        return SweepResult(kind, rows, fits, _provenance(cfg, t0), format_config(cfg))

    if kind == "reconnect_stochastic":
        res = _job_reconnect_stochastic(cfg)
        rows = []
        for eta in res.etas:
            rows.append(SweepRow(float(eta), {
                "rate": res.rates[eta],
                "prefactor": res.prefactors[eta],
                "t_star": res.positivity_times[eta]
                if res.positivity_times[eta] is not None else float("nan"),
            }))
        fits: dict = {"rate_spread": res.rate_spread()}
        good = [(float(e), res.positivity_times[e]) for e in res.etas
                if res.positivity_times[e] is not None]
        if len(good) >= 4:
            sf = fit_reconnection_scaling([g[0] for g in good], [g[1] for g in good],
                                          models=("fast", "accelerated"))
            fits.update({
                "best_model": sf.best_model,
                "c2_fast": sf.coefficients["fast"],
                "r2_fast": sf.r2["fast"],
                "r2_accelerated": sf.r2["accelerated"],
            })
        return SweepResult(kind, rows, fits, _provenance(cfg, t0), format_config(cfg))

    if kind == "sns_energy":
        grid = _grid2(cfg)
        base = stochastic.NoiseSpec(alpha=cfg["alpha"], seed=cfg["seed"],
                                    amplitude=cfg["amplitude"])
        paths = []
        for p in range(cfg["paths"]):
            spec = stochastic.NoiseSpec(alpha=base.alpha, K=base.K,
                                        seed=base.seed + p, amplitude=base.amplitude)
            paths.append(stochastic.run_sns_path(grid, spec, cfg["dt"], cfg["t_final"]))
        solver = stochastic.SNSSolver(grid, base, cfg["dt"])
        resid, se = stochastic.energy_balance_check(paths, cfg["t_final"], solver.C0)
        rows = [SweepRow(0.0, {"residual": resid, "stderr": se,
                               "paths": cfg["paths"], "C0": solver.C0})]
        fits = {"residual_over_stderr": resid / se if se > 0 else float("inf")}
        return SweepResult(kind, rows, fits, _provenance(cfg, t0), format_config(cfg))

    raise ConfigError(f"key 'experiment': unhandled kind {kind!r}")
