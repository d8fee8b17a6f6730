"""3D incompressible resistive MHD on the torus, plus its 2.5D reference family.

The solver advances velocity/magnetic fields pseudo-spectrally (strict 2/3
dealiasing, Leray projection absorbing the pressure gradient, exact
integrating factors for the resistive and viscous terms, optional high-order
spectral filter for long inviscid runs).  The module also composes the
x3-independent reference states whose magnetic component reduces to a 2D
advected scalar, builds the perturbed initial data carrying a hyperbolic
null point, and evaluates the quantitative lifespan estimate for perturbed
strong solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .advdiff import CFL_MAX, FlowSpec, StepSizeError, velocity_of
from .spectral import Grid, ParameterError, SpectralField, VectorField

__all__ = [
    "MHDParams",
    "MHDState",
    "NullPointData",
    "BlowUpError",
    "compose_reference",
    "make_null_point_data",
    "perturbation_budget",
    "leray_project",
    "step_mhd",
    "MHDStepper",
    "run_mhd",
    "lifespan_bound",
]

DIV_TOL = 1e-11
STATIONARITY_TOL = 1e-8


class BlowUpError(RuntimeError):
    """NaN detected during time stepping; carries the last valid time."""

    def __init__(self, msg: str, last_time: float):
        super().__init__(msg)
        self.last_time = last_time


@dataclass(frozen=True)
class MHDParams:
    """Resistivity eta > 0; nu = 0 is the inviscid model, nu > 0 the viscous one."""

    eta: float
    nu: float = 0.0
    dt: float = 1e-3
    T: float = 1.0
    dealias: bool = True
    hyper_order: int = 8
    hyper_coeff: float = 0.0      # per-step filter strength; 0 disables
    cadence: int = 10

    def __post_init__(self):
        if self.eta <= 0:
            raise ParameterError("eta must be positive")
        if self.nu < 0 or self.hyper_coeff < 0:
            raise ParameterError("nu and hyper_coeff must be non-negative")
        if self.dt <= 0:
            raise ParameterError("dt must be positive")


@dataclass(frozen=True, eq=False)
class MHDState:
    u: VectorField
    b: VectorField
    time: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.b.grid:
            raise ParameterError("velocity and magnetic field live on different grids")
        if self.u.grid.dim != 3 or self.u.ncomp != 3 or self.b.ncomp != 3:
            raise ParameterError("MHD states are 3-component fields on 3D grids")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def energy(self) -> float:
        return 0.5 * (self.u.l2() ** 2 + self.b.l2() ** 2)

    def max_divergence(self) -> float:
        return max(self.u.divergence().l2(), self.b.divergence().l2())


def leray_project(v: VectorField) -> VectorField:
    """Remove the gradient part: v_hat(k) -> v_hat(k) - k (k.v_hat)/|k|^2.

    The mean mode is untouched.
    """
    grid = v.grid
    k2 = grid.k2.copy()
    k2[(0,) * grid.dim] = 1.0
    dot = np.zeros(grid.sizes, dtype=np.complex128)
    for axis, km in enumerate(grid.kmesh):
        dot += km * v.coeff[axis]
    dot /= k2
    out = v.coeff.copy()
    for axis, km in enumerate(grid.kmesh):
        out[axis] -= km * dot
    return VectorField(grid, out)


# ----------------------------------------------------------------------
# Reference solutions and initial data
# ----------------------------------------------------------------------

def _embed_2d_scalar(coeff2: np.ndarray, grid3: Grid) -> np.ndarray:
    """Place a 2D coefficient array on the k3 = 0 plane of a 3D lattice."""
    out = np.zeros(grid3.sizes, dtype=np.complex128)
    out[:, :, 0] = coeff2
    return out


def stationarity_residual(U: VectorField) -> float:
    """L2 norm of the divergence-free part of (U.grad)U.

    Vanishes exactly when U is a stationary 2D Euler flow, i.e. when the
    self-advection term is a pressure gradient.
    """
    grid = U.grid
    phys = U.physical()
    adv = np.empty_like(U.coeff)
    for c in range(U.ncomp):
        acc = np.zeros(grid.sizes)
        for axis, km in enumerate(grid.kmesh):
            g = np.fft.ifftn(1j * km * U.coeff[c]).real * grid.npoints
            acc += phys[axis] * g
        adv[c] = np.fft.fftn(acc) / grid.npoints * grid.dealias_mask
    proj = leray_project(VectorField(grid, adv))
    coeff = proj.coeff.copy()
    coeff[(slice(None),) + (0,) * grid.dim] = 0.0
    return float(np.sqrt(np.sum(np.abs(coeff) ** 2)))


def compose_reference(flow: FlowSpec, b3: SpectralField, grid3: Grid | None = None) -> MHDState:
    """2.5D reference state: u = (U1, U2, 0), b = (0, 0, b3), x3-independent.

    ``flow`` must be a stationary 2D Euler solution (checked through the
    projected self-advection residual); the b3 scalar then obeys the 2D
    advection-diffusion equation under the full 3D dynamics.
    """
    if b3.grid.dim != 2:
        raise ParameterError("the vertical magnetic component must be a 2D scalar")
    grid2 = b3.grid
    U = velocity_of(flow, grid2)
    resid = stationarity_residual(U)
    if resid > STATIONARITY_TOL:
        raise ParameterError(
            f"flow is not a stationary Euler solution (residual {resid:.2e} > {STATIONARITY_TOL:g})"
        )
    if grid3 is None:
        grid3 = Grid(grid2.sizes + (8,), grid2.periods + (TWO_PI,))
    if grid3.sizes[:2] != grid2.sizes or grid3.periods[:2] != grid2.periods:
        raise ParameterError("3D grid must extend the 2D grid in the first two axes")
    zeros = np.zeros(grid3.sizes, dtype=np.complex128)
    u = VectorField(grid3, np.stack([
        _embed_2d_scalar(U.coeff[0], grid3),
        _embed_2d_scalar(U.coeff[1], grid3),
        zeros,
    ]))
    b = VectorField(grid3, np.stack([
        zeros, zeros, _embed_2d_scalar(b3.coeff, grid3),
    ]))
    return MHDState(u, b, 0.0)


TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class NullPointData:
    """Parameters of the perturbed initial datum with a hyperbolic null point.

    M sets the mean vertical field, eps the perturbation amplitude, x_star
    the null location, r the Sobolev index of the perturbation class.
    """

    M: float = 1.0
    eps: float = 0.01
    x_star: tuple[float, float, float] = (math.pi, math.pi, math.pi)
    r: float = 3.0

    def __post_init__(self):
        if self.M <= 0 or self.eps <= 0:
            raise ParameterError("M and eps must be positive")
        if self.eps > self.M / 100.0 + 1e-15:
            raise ParameterError("eps must satisfy eps <= M/100")
        if self.r <= 2.5:
            raise ParameterError("Sobolev index r must exceed 5/2")


def null_point_b3(d: NullPointData, grid2: Grid) -> SpectralField:
    """Vertical component M - 2M cos(x1 - pi/3 - x1*); vanishes at x1* with slope ~ M."""
    x1, _ = grid2.meshgrid()
    vals = d.M - 2.0 * d.M * np.cos(x1 - math.pi / 3.0 - d.x_star[0])
    return SpectralField.from_physical(grid2, vals)


def make_null_point_data(d: NullPointData, grid: Grid) -> tuple[VectorField, VectorField]:
    """Initial (u, b): Kolmogorov shear and a vertical field plus an O(eps) twist.

    b has an isolated hyperbolic zero at x_star whose Jacobian is
    [[0, eps, 0], [0, 0, eps], [-sqrt(3) M, 0, 0]].
    """
    if grid.dim != 3:
        raise ParameterError("null-point data lives on a 3D grid")
    x1, x2, x3 = grid.meshgrid()
    u_vals = np.stack([np.sin(x2), np.zeros_like(x2), np.zeros_like(x2)])
    b_vals = np.stack([
        d.eps * np.sin(x2 - d.x_star[1]),
        d.eps * np.sin(x3 - d.x_star[2]),
        d.M - 2.0 * d.M * np.cos(x1 - math.pi / 3.0 - d.x_star[0]),
    ])
    return VectorField.from_physical(grid, u_vals), VectorField.from_physical(grid, b_vals)


class Budget(NamedTuple):
    value: float
    log_value: float          # natural log, finite even when value underflows


def perturbation_budget(M: float, eta: float, r: float, T: float, C: float,
                        prefactor: float = 1.0) -> Budget:
    """Perturbation size M exp(-C M eta^(-r/2)) exp(-M T) keeping the solution
    alive past the reconnection time.

    Astronomically small for small eta; the log is always returned so callers
    can rescale instead of reading a flushed-to-zero float.
    """
    if min(M, eta, C, prefactor) < 0 or M <= 0 or eta <= 0 or r <= 0 or T < 0:
        raise ParameterError("budget arguments must be positive (T, C >= 0)")
    log_value = math.log(prefactor * M) - C * M * eta ** (-r / 2.0) - M * T
    value = math.exp(log_value) if log_value > -745.0 else 0.0
    return Budget(value, log_value)


# ----------------------------------------------------------------------
# Time stepping
# ----------------------------------------------------------------------

class MHDStepper:
    """Integrating-factor RK4 for the coupled momentum/induction system.

    Nonlinear terms (u.grad)u - (b.grad)b and (u.grad)b - (b.grad)u are formed
    pseudo-spectrally with the strict 2/3 mask; the velocity tendency is
    Leray-projected (this realizes the pressure gradient), the magnetic
    tendency is projected as well to pin divergence-free drift at rounding
    level.  Means of u and b are frozen.
    """

    def __init__(self, grid: Grid, p: MHDParams):
        if grid.dim != 3:
            raise ParameterError("MHDStepper runs on 3D grids")
        self.grid = grid
        self.p = p
        self.kmesh = grid.kmesh
        self.mask = grid.dealias_mask if p.dealias else np.ones(grid.sizes, bool)
        self.Eb = np.exp(-p.eta * grid.k2 * p.dt / 2.0)
        self.Eu = np.exp(-p.nu * grid.k2 * p.dt / 2.0)
        if p.hyper_coeff > 0.0:
            knyq = grid.max_wavenumber
            self.filter = np.exp(-p.hyper_coeff * (grid.kabs / knyq) ** (2 * p.hyper_order))
        else:
            self.filter = None
        k2 = grid.k2.copy()
        k2[(0, 0, 0)] = 1.0
        self._k2safe = k2

    # -- helpers over stacked (3, n, n, n) arrays ------------------------

    def _to_phys(self, coeff: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coeff, axes=(1, 2, 3)).real * self.grid.npoints

    def _advect(self, adv_phys: np.ndarray, target: np.ndarray) -> np.ndarray:
        """(adv . grad) target, dealiased, in coefficient space.

        Transforms run batched over the three components per axis.
        """
        acc = np.zeros((3,) + self.grid.sizes)
        for axis, km in enumerate(self.kmesh):
            g = np.fft.ifftn(1j * km[None] * target, axes=(1, 2, 3)).real
            acc += adv_phys[axis][None] * g
        out = np.fft.fftn(acc, axes=(1, 2, 3))
        out *= self.mask[None]
        return out

    def _project(self, coeff: np.ndarray) -> np.ndarray:
        dot = np.zeros(self.grid.sizes, dtype=np.complex128)
        for axis, km in enumerate(self.kmesh):
            dot += km * coeff[axis]
        dot /= self._k2safe
        for axis, km in enumerate(self.kmesh):
            coeff[axis] = coeff[axis] - km * dot
        return coeff

    def _tendency(self, uc: np.ndarray, bc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        up = self._to_phys(uc)
        bp = self._to_phys(bc)
        du = self._project(self._advect(bp, bc) - self._advect(up, uc))
        db = self._project(self._advect(bp, uc) - self._advect(up, bc))
        du[:, 0, 0, 0] = 0.0
        db[:, 0, 0, 0] = 0.0
        return du, db

    def step(self, uc: np.ndarray, bc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dt = self.p.dt
        Eu, Eb = self.Eu, self.Eb
        Eu2, Eb2 = Eu * Eu, Eb * Eb
        umean, bmean = uc[:, 0, 0, 0].copy(), bc[:, 0, 0, 0].copy()

        ku1, kb1 = self._tendency(uc, bc)
        ku2, kb2 = self._tendency(Eu * (uc + 0.5 * dt * ku1), Eb * (bc + 0.5 * dt * kb1))
        ku3, kb3 = self._tendency(Eu * uc + 0.5 * dt * ku2, Eb * bc + 0.5 * dt * kb2)
        ku4, kb4 = self._tendency(Eu2 * uc + dt * Eu * ku3, Eb2 * bc + dt * Eb * kb3)

        un = Eu2 * uc + (dt / 6.0) * (Eu2 * ku1 + 2.0 * Eu * (ku2 + ku3) + ku4)
        bn = Eb2 * bc + (dt / 6.0) * (Eb2 * kb1 + 2.0 * Eb * (kb2 + kb3) + kb4)
        if self.filter is not None:
            un *= self.filter
            bn *= self.filter
        un[:, 0, 0, 0] = umean
        bn[:, 0, 0, 0] = bmean
        return un, bn

    def check_cfl(self, uc: np.ndarray, bc: np.ndarray) -> None:
        vmax = max(float(np.max(np.abs(self._to_phys(uc)))),
                   float(np.max(np.abs(self._to_phys(bc)))))
        h = min(self.grid.spacing)
        if vmax > 0 and vmax * self.p.dt / h > CFL_MAX:
            raise StepSizeError(
                f"CFL violated: max(|u|,|b|)*dt/h = {vmax * self.p.dt / h:.3f} > {CFL_MAX}",
                suggested_dt=CFL_MAX * h / vmax,
            )


def step_mhd(s: MHDState, p: MHDParams) -> MHDState:
    """One RK4 step of the full system."""
    stepper = MHDStepper(s.grid, p)
    stepper.check_cfl(s.u.coeff, s.b.coeff)
    un, bn = stepper.step(s.u.coeff.copy(), s.b.coeff.copy())
    return MHDState(VectorField(s.grid, un), VectorField(s.grid, bn), s.time + p.dt)


def run_mhd(s: MHDState, p: MHDParams, observer=None, stop_when=None) -> list[MHDState]:
    """Advance to the horizon; returns states sampled every ``cadence`` steps.

    ``observer(state)`` is invoked at each sample when given; a truthy
    ``stop_when(state)`` ends the run at that sample.  NaNs raise BlowUpError
    carrying the last valid time.
    """
    stepper = MHDStepper(s.grid, p)
    stepper.check_cfl(s.u.coeff, s.b.coeff)
    uc, bc = s.u.coeff.copy(), s.b.coeff.copy()
    t = s.time
    out = [s]
    if observer is not None:
        observer(s)
    nsteps = int(math.ceil(p.T / p.dt - 1e-12))
    for i in range(nsteps):
        uc, bc = stepper.step(uc, bc)
        t += p.dt
        if (i + 1) % p.cadence == 0 or i == nsteps - 1:
            if not (np.all(np.isfinite(uc.view(float))) and np.all(np.isfinite(bc.view(float)))):
                raise BlowUpError(f"solution lost finiteness after t={out[-1].time:g}",
                                  last_time=out[-1].time)
            state = MHDState(VectorField(s.grid, uc), VectorField(s.grid, bc), t)
            out.append(state)
            if observer is not None:
                observer(state)
            if stop_when is not None and stop_when(state):
                break
    return out


# ----------------------------------------------------------------------
# Lifespan functional
# ----------------------------------------------------------------------

@dataclass
class LifespanResult:
    T_guaranteed: float
    times: np.ndarray
    f_trace: np.ndarray
    bound_trace: np.ndarray      # a-priori energy bound where f > 0, inf beyond
    exceeded_mesh: bool          # f still positive at the last mesh point


def lifespan_bound(e_r0: float, times, F_samples, C: float) -> LifespanResult:
    """Guaranteed existence time from the initial H^r distance and norm history.

    Computes f(t) = e_r0^{-1/2} - (C/2) * int_0^t exp((C/2) int_0^s F) ds with
    trapezoidal quadrature and returns sup{t : f(t) >= 0}, bisected between
    mesh points, together with the a-priori bound exp(C int_0^t F) / f(t)^2.
    """
    if e_r0 <= 0:
        raise ParameterError("initial energy distance must be positive")
    if C <= 0:
        raise ParameterError("stability constant C must be positive")
    times = np.asarray(times, dtype=float)
    F = np.asarray(F_samples, dtype=float)
    if times.ndim != 1 or times.shape != F.shape or len(times) < 2:
        raise ParameterError("need matching 1D time/F meshes with >= 2 points")
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ParameterError("time mesh must start at 0 and increase")
    if np.any(F < 0):
        raise ParameterError("F samples must be non-negative")

    intF = np.concatenate([[0.0], np.cumsum(0.5 * (F[1:] + F[:-1]) * np.diff(times))])
    g = np.exp(0.5 * C * intF)
    intg = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(times))])
    f = e_r0 ** (-0.5) - 0.5 * C * intg

    with np.errstate(divide="ignore", over="ignore"):
        bound = np.where(f > 0, np.exp(C * intF) / np.maximum(f, 1e-300) ** 2, np.inf)

    if f[-1] >= 0.0:
        return LifespanResult(times[-1], times, f, bound, exceeded_mesh=True)
    idx = int(np.argmax(f < 0.0))
    if idx == 0:
        return LifespanResult(0.0, times, f, bound, exceeded_mesh=False)

    # bisection between mesh points, interpolating F linearly on the interval
    t0, t1 = times[idx - 1], times[idx]
    f0 = f[idx - 1]
    g0 = g[idx - 1]
    F0, F1 = F[idx - 1], F[idx]

    def f_at(t: float) -> float:
        h = t - t0
        Ft = F0 + (F1 - F0) * h / (t1 - t0)
        gt = g0 * math.exp(0.5 * C * 0.5 * (F0 + Ft) * h)
        return f0 - 0.5 * C * 0.5 * (g0 + gt) * h

    lo, hi = t0, t1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_at(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, hi):
            break
    return LifespanResult(lo, times, f, bound, exceeded_mesh=False)
