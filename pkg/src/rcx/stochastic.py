"""Stochastically forced 2D Navier-Stokes and the eta-uniform mixing experiment.

The forcing is white in time and spectrally colored in space, built on the
divergence-free trigonometric basis indexed by the half lattice (sin family)
and its negative (cos family), with per-mode amplitudes q_k = amp * |k|^-alpha.
The solver uses an exponential-Euler step at unit viscosity with the noise
integrated exactly against the heat semigroup (per-mode Ornstein-Uhlenbeck
variance), which removes the dt-bias from the energy balance.

Passive scalars are advected by a frozen realization of the velocity, several
diffusivities sharing one path, to expose the eta-uniform decay rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .advdiff import AdvDiffStepper, fit_decay_rate, _lsq_line
from .spectral import Grid, ParameterError, SpectralField, VectorField

__all__ = [
    "NoiseSpec",
    "SNSState",
    "SNSSolver",
    "PathTrace",
    "basis_field",
    "sample_noise_increment",
    "step_sns",
    "run_sns_path",
    "energy_balance_check",
    "uniform_decay_experiment",
    "UniformDecayResult",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Coloring |k|^-alpha on modes 0 < |k| <= K, alpha > 5 for d = 2."""

    alpha: float = 6.0
    K: float = 0.0                 # 0 -> defaults to the dealias radius of the grid
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.alpha <= 5.0:
            raise ParameterError("coloring exponent must satisfy alpha > 5 in 2D")
        if self.amplitude < 0:
            raise ParameterError("amplitude must be non-negative")

    def truncation(self, grid: Grid) -> float:
        return self.K if self.K > 0 else grid.sizes[0] / 3.0 - 1.0

    def q_of(self, kabs: np.ndarray) -> np.ndarray:
        return self.amplitude * np.asarray(kabs, dtype=float) ** (-self.alpha)

    def c_ell(self, ell: float, grid: Grid) -> float:
        """sum over the truncated lattice of |k|^(2 ell) q_k^2 (both families)."""
        if ell >= self.alpha - 1:
            raise ParameterError("c_ell is finite only for ell < alpha - 1")
        pts = _half_lattice(self.truncation(grid))
        kabs = np.sqrt((pts**2).sum(1))
        return float(2.0 * np.sum(kabs ** (2.0 * ell) * self.q_of(kabs) ** 2))

    def tail_bound(self, grid: Grid) -> float:
        """Upper bound for the discarded part of sum q_k^2 beyond the truncation."""
        K = self.truncation(grid)
        # sum_{|k|>K} |k|^(-2a) <= 2 pi int_K^inf r^(1-2a) dr
        a = self.alpha
        return float(self.amplitude**2 * 2.0 * math.pi * K ** (2.0 - 2.0 * a) / (2.0 * a - 2.0))


def _half_lattice(K: float) -> np.ndarray:
    """Points of {k2 > 0} u {k1 > 0, k2 = 0} with |k| <= K."""
    Ki = int(math.floor(K))
    pts = []
    for k1 in range(-Ki, Ki + 1):
        for k2 in range(0, Ki + 1):
            if k1 == 0 and k2 == 0:
                continue
            if k2 == 0 and k1 < 0:
                continue
            if k1 * k1 + k2 * k2 <= K * K:
                pts.append((k1, k2))
    if not pts:
        raise ParameterError(f"no lattice modes inside truncation K={K}")
    return np.array(pts, dtype=int)


def basis_field(k: tuple[int, int], grid: Grid) -> VectorField:
    """Divergence-free trigonometric basis field for lattice point k != 0.

    Direction k_perp/|k|; sin(k.x) on the upper half lattice, cos(k.x) on the
    lower one.  Normalized numerically to unit L2 under the mean-normalized
    measure (the textbook 1/sqrt(pi) prefactor presumes a different measure
    convention).
    """
    k1, k2 = int(k[0]), int(k[1])
    if k1 == 0 and k2 == 0:
        raise ParameterError("basis fields are indexed by nonzero lattice points")
    if grid.dim != 2:
        raise ParameterError("basis fields live on 2D grids")
    upper = (k2 > 0) or (k2 == 0 and k1 > 0)
    x1, x2 = grid.meshgrid()
    phase = k1 * x1 + k2 * x2
    wave = np.sin(phase) if upper else np.cos(phase)
    kabs = math.hypot(k1, k2)
    direction = np.array([-k2, k1], dtype=float) / kabs
    vals = np.stack([direction[0] * wave, direction[1] * wave])
    out = VectorField.from_physical(grid, vals)
    return out * (1.0 / out.l2())


# ----------------------------------------------------------------------
# Mode tables and the solver
# ----------------------------------------------------------------------

class _ModeTable:
    """Precomputed lattice bookkeeping for vectorized noise synthesis."""

    def __init__(self, spec: NoiseSpec, grid: Grid):
        n1, n2 = grid.sizes
        self.pts = _half_lattice(spec.truncation(grid))
        if np.any(np.abs(self.pts) >= np.array([n1 // 2, n2 // 2])):
            raise ParameterError("noise truncation exceeds the grid Nyquist")
        kabs = np.sqrt((self.pts**2).sum(1))
        self.kabs = kabs
        self.q = spec.q_of(kabs)
        kperp = np.stack([-self.pts[:, 1], self.pts[:, 0]], axis=1).astype(float)
        self.dirs = kperp / kabs[:, None]
        self.flat_plus = (self.pts[:, 0] % n1) * n2 + (self.pts[:, 1] % n2)
        self.flat_minus = ((-self.pts[:, 0]) % n1) * n2 + ((-self.pts[:, 1]) % n2)

    def synth(self, zsin: np.ndarray, zcos: np.ndarray, grid: Grid) -> np.ndarray:
        """Coefficients of sum_j (zsin_j e_sin,j + zcos_j e_cos,j).

        Unit-L2 basis fields: e_sin = sqrt(2) dir sin(k.x) has coefficients
        -i sqrt(2)/2 dir at +k (conjugate at -k); e_cos analogously with the
        direction of the mirrored point, (-k)_perp/|k| = -dir.
        """
        amp = (math.sqrt(2.0) / 2.0) * (-zcos - 1j * zsin)   # weight at +k times dir
        out = np.zeros((2, grid.npoints), dtype=np.complex128)
        for c in range(2):
            np.add.at(out[c], self.flat_plus, amp * self.dirs[:, c])
            np.add.at(out[c], self.flat_minus, np.conj(amp) * self.dirs[:, c])
        return out.reshape((2,) + grid.sizes)


@dataclass(eq=False)
class SNSState:
    """Velocity path state; owns the path's random generator."""

    u: VectorField
    time: float
    noise: NoiseSpec
    rng: np.random.Generator

    @classmethod
    def initial(cls, grid: Grid, noise: NoiseSpec, u0: VectorField | None = None) -> "SNSState":
        u = u0 if u0 is not None else VectorField.zero(grid, 2)
        if u.ncomp != 2 or u.grid.dim != 2:
            raise ParameterError("SNS runs 2-component fields on 2D grids")
        div = u.divergence().l2()
        if div > 1e-12 * max(1.0, u.l2()):
            raise ParameterError("initial velocity must be divergence-free")
        return cls(u, 0.0, noise, np.random.default_rng(noise.seed))


def sample_noise_increment(spec: NoiseSpec, grid: Grid, dt: float,
                           rng: np.random.Generator) -> VectorField:
    """One Wiener increment sum q_k e_k xi_k sqrt(dt); divergence- and mean-free."""
    if dt < 0:
        raise ParameterError("dt must be non-negative")
    table = _ModeTable(spec, grid)
    xi = rng.standard_normal((2, len(table.pts)))
    std = table.q * math.sqrt(dt)
    coeff = table.synth(std * xi[0], std * xi[1], grid)
    return VectorField(grid, coeff)


class SNSSolver:
    """Exponential-Euler integrator at unit viscosity with exact OU noise."""

    def __init__(self, grid: Grid, noise: NoiseSpec, dt: float):
        if grid.dim != 2:
            raise ParameterError("SNS solver runs on 2D grids")
        if dt <= 0:
            raise ParameterError("dt must be positive")
        self.grid = grid
        self.noise = noise
        self.dt = dt
        self.table = _ModeTable(noise, grid)
        self.kx, self.ky = grid.kmesh
        self.mask = grid.dealias_mask
        self.E = np.exp(-grid.k2 * dt)
        kk = self.table.kabs
        self.ou_std = self.table.q * np.sqrt((1.0 - np.exp(-2.0 * kk**2 * dt)) / (2.0 * kk**2))
        k2 = grid.k2.copy()
        k2[0, 0] = 1.0
        self._k2safe = k2
        self.C0 = 2.0 * float(np.sum(self.table.q**2))

    def _nonlinear(self, uc: np.ndarray, up: np.ndarray) -> np.ndarray:
        out = np.empty_like(uc)
        for c in range(2):
            gx = np.fft.ifft2(1j * self.kx * uc[c]).real * self.grid.npoints
            gy = np.fft.ifft2(1j * self.ky * uc[c]).real * self.grid.npoints
            out[c] = -np.fft.fft2(up[0] * gx + up[1] * gy) / self.grid.npoints
            out[c] *= self.mask
        # Leray projection absorbs the pressure gradient
        dot = (self.kx * out[0] + self.ky * out[1]) / self._k2safe
        out[0] -= self.kx * dot
        out[1] -= self.ky * dot
        out[:, 0, 0] = 0.0
        return out

    def step_coeff(self, uc: np.ndarray, rng: np.random.Generator,
                   up: np.ndarray | None = None) -> np.ndarray:
        if up is None:
            up = np.fft.ifft2(uc).real * self.grid.npoints
        N = self._nonlinear(uc, up)
        xi = rng.standard_normal((2, len(self.table.pts)))
        noise = self.table.synth(self.ou_std * xi[0], self.ou_std * xi[1], self.grid)
        out = self.E * (uc + self.dt * N) + noise
        out[:, 0, 0] = 0.0
        if not np.all(np.isfinite(out.view(float))):
            raise FloatingPointError("SNS step produced non-finite values")
        return out


def step_sns(s: SNSState, dt: float) -> SNSState:
    """Advance the path one step; consumes the state's generator."""
    solver = SNSSolver(s.u.grid, s.noise, dt)
    uc = solver.step_coeff(s.u.coeff.copy(), s.rng)
    return SNSState(VectorField(s.u.grid, uc), s.time + dt, s.noise, s.rng)


# ----------------------------------------------------------------------
# Paths, ensembles, energy balance
# ----------------------------------------------------------------------

@dataclass
class PathTrace:
    times: np.ndarray
    energy: np.ndarray          # ||u||_L2^2
    enstrophy: np.ndarray       # ||grad u||_L2^2
    l2_rho: np.ndarray | None = None
    seed: int | None = None

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# seed={self.seed}\n")
            fh.write("t,l2_u,h1_u,l2_rho\n")
            for i, t in enumerate(self.times):
                rho = self.l2_rho[i] if self.l2_rho is not None else float("nan")
                fh.write(f"{t:.17g},{math.sqrt(self.energy[i]):.17g},"
                         f"{math.sqrt(self.enstrophy[i]):.17g},{rho:.17g}\n")


def run_sns_path(grid: Grid, noise: NoiseSpec, dt: float, T: float,
                 u0: VectorField | None = None, cadence: int = 1) -> PathTrace:
    """Integrate one path, recording energy and enstrophy at the cadence."""
    solver = SNSSolver(grid, noise, dt)
    state = SNSState.initial(grid, noise, u0)
    uc = state.u.coeff.copy()
    rng = state.rng
    nsteps = int(math.ceil(T / dt - 1e-12))
    times = [0.0]
    energy = [float(np.sum(np.abs(uc) ** 2))]
    enstrophy = [float(np.sum(grid.k2 * (np.abs(uc[0]) ** 2 + np.abs(uc[1]) ** 2)))]
    t = 0.0
    for i in range(nsteps):
        uc = solver.step_coeff(uc, rng)
        t += dt
        if (i + 1) % cadence == 0 or i == nsteps - 1:
            times.append(t)
            energy.append(float(np.sum(np.abs(uc) ** 2)))
            enstrophy.append(float(np.sum(grid.k2 * (np.abs(uc[0]) ** 2 + np.abs(uc[1]) ** 2))))
    return PathTrace(np.array(times), np.array(energy), np.array(enstrophy), seed=noise.seed)


def energy_balance_check(paths: list[PathTrace], t: float, C0: float) -> tuple[float, float]:
    """Monte-Carlo residual of the L2 energy balance at time t.

    residual = E||u(t)||^2 + 2 int_0^t E||grad u||^2 - ||u(0)||^2 - C0 t,
    trapezoidal in time; returns (mean residual, standard error).
    """
    if len(paths) < 2:
        raise ParameterError("energy balance needs at least 2 paths")
    per_path = []
    for p in paths:
        if t > p.times[-1] + 1e-12:
            raise ParameterError("requested time beyond the recorded trace")
        m = p.times <= t + 1e-12
        ts, ens = p.times[m], p.enstrophy[m]
        integral = float(np.trapezoid(ens, ts))
        e_t = float(np.interp(t, p.times, p.energy))
        per_path.append(e_t + 2.0 * integral - p.energy[0] - C0 * t)
    per_path = np.asarray(per_path)
    mean = float(per_path.mean())
    stderr = float(per_path.std(ddof=1) / math.sqrt(len(per_path)))
    return mean, stderr


# ----------------------------------------------------------------------
# Frozen-path uniform decay experiment
# ----------------------------------------------------------------------

@dataclass
class UniformDecayResult:
    etas: np.ndarray
    rates: dict[float, float]
    prefactors: dict[float, float]       # empirical envelope amplitude at t = 0
    positivity_times: dict[float, float | None]
    traces: dict[float, "np.ndarray"]    # per-eta columns (t, l2, sup)
    meta: dict = field(default_factory=dict)

    def rate_spread(self) -> float:
        vals = [v for v in self.rates.values() if np.isfinite(v)]
        if len(vals) < 2:
            return float("nan")
        return max(vals) / min(vals)


def uniform_decay_experiment(noise: NoiseSpec, eta_list, rho0: SpectralField,
                             horizon: float, dt: float = 0.02,
                             M: float | None = None, slack: float = 0.01,
                             cadence: int = 25,
                             fit_levels: tuple[float, float] = (0.3, 1e-4)) -> UniformDecayResult:
    """Advect rho0 by one frozen velocity realization for every eta in the list.

    All diffusivities share the same path (same seed, co-evolved in one pass)
    so the comparison isolates eta.  Decay rates are fitted on the window
    where each scalar's relative L2 norm lies inside ``fit_levels``; when M
    is given, the first time sup|rho| < M (with the oversampled-sup slack) is
    recorded as the positivity-criterion time.
    """
    etas = sorted(set(float(e) for e in eta_list), reverse=True)
    if not etas:
        raise ParameterError("empty eta list")
    if abs(rho0.mean) > 1e-10 * max(rho0.l2(), 1e-300):
        raise ParameterError("scalar must be mean-free")
    grid = rho0.grid
    solver = SNSSolver(grid, noise, dt)
    rng = np.random.default_rng(noise.seed)
    uc = np.zeros((2,) + grid.sizes, dtype=np.complex128)

    steppers = {}
    for eta in etas:
        st = AdvDiffStepper(VectorField(grid, uc), eta, dt, dealias=True, check_cfl=False)
        steppers[eta] = st
    scal = {eta: rho0.coeff.copy() for eta in etas}
    l20 = rho0.l2()

    nsteps = int(math.ceil(horizon / dt - 1e-12))
    rows = {eta: [[0.0, 1.0, float(np.max(np.abs(rho0.physical())))]] for eta in etas}
    tpos = {eta: None for eta in etas}
    t = 0.0
    for i in range(nsteps):
        up = np.fft.ifft2(uc).real * grid.npoints
        for eta in etas:
            st = steppers[eta]
            st.set_velocity_physical(up[0], up[1], check_cfl=False)
            scal[eta] = st.step(scal[eta])
        uc = solver.step_coeff(uc, rng, up)
        t += dt
        if (i + 1) % cadence == 0 or i == nsteps - 1:
            for eta in etas:
                f = SpectralField(grid, scal[eta])
                rel = f.l2() / l20
                sup = f.linf(2)
                rows[eta].append([t, rel, sup])
                if M is not None and tpos[eta] is None and (M - sup) > slack * M:
                    tpos[eta] = t

    rates, prefs, traces = {}, {}, {}
    for eta in etas:
        arr = np.array(rows[eta])
        traces[eta] = arr
        m = (arr[:, 1] <= fit_levels[0]) & (arr[:, 1] >= fit_levels[1])
        if m.sum() >= 10:
            slope, intercept, _ = _lsq_line(arr[m, 0], np.log(arr[m, 1]))
            rates[eta] = -slope
            prefs[eta] = math.exp(intercept)
        else:
            rates[eta] = float("nan")
            prefs[eta] = float("nan")
    return UniformDecayResult(
        etas=np.array(etas), rates=rates, prefactors=prefs,
        positivity_times=tpos, traces=traces,
        meta={"seed": noise.seed, "dt": dt, "horizon": horizon,
              "grid": "x".join(map(str, grid.sizes)), "amplitude": noise.amplitude},
    )
