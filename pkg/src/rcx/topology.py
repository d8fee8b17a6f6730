"""Equilibrium points of periodic vector fields and reconnection detection.

Zeros are located by a coarse scan of |b| on a refined uniform grid followed
by damped Newton iteration on the trigonometric interpolant, classified
through the eigenvalues of the interpolant's exact Jacobian, and tracked in
time.  Reconnection is detected either by disappearance of the zero set or by
the sufficient positivity criterion on the vertical field component.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid, ParameterError, SpectralField, VectorField

log = logging.getLogger(__name__)

__all__ = [
    "ZeroRecord",
    "ZeroFinderConfig",
    "ReconnectionReport",
    "eval_field_at",
    "find_zeros",
    "classify_zero",
    "cubic_eigenvalues",
    "positivity_criterion",
    "reconnection_time",
    "persistence_check",
    "write_zero_csv",
    "write_zero_jsonl",
]


@dataclass(frozen=True)
class ZeroFinderConfig:
    zero_tol: float = 1e-9
    scan_factor: int = 2
    capture_factor: float = 10.0      # seeds: coarse minima below capture_factor * global min
    dedup_radius: float = 1e-4
    max_iters: int = 60
    hyp_tol: float = 1e-6             # relative to ||J||_F
    degen_tol: float = 1e-6


@dataclass
class ZeroRecord:
    location: tuple[float, ...]
    residual: float
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    clazz: str                         # hyperbolic | nondegenerate_nonhyperbolic | degenerate
    newton_iters: int

    def as_dict(self) -> dict:
        return {
            "location": list(self.location),
            "residual": self.residual,
            "jacobian": self.jacobian.tolist(),
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "class": self.clazz,
            "newton_iters": self.newton_iters,
        }


# ----------------------------------------------------------------------
# Evaluation of the trigonometric interpolant
# ----------------------------------------------------------------------

def _phase_vectors(grid: Grid, x) -> list[np.ndarray]:
    x = np.asarray(x, dtype=float)
    return [np.exp(1j * k * xi) for k, xi in zip(grid.wavenumbers, x)]


class _FieldJet:
    """Cached (field, gradient) coefficient stack for repeated point evaluation.

    The first (largest) contraction is staged once as a contiguous matrix so
    each evaluation is a short chain of BLAS products.
    """

    def __init__(self, b: VectorField):
        self.grid = b.grid
        self.ncomp = b.ncomp
        stacks = [b.coeff]
        for km in b.grid.kmesh:
            stacks.append(1j * km * b.coeff)
        allc = np.concatenate(stacks, axis=0)
        m = allc.shape[0]
        dim = b.grid.dim
        perm = (0,) + tuple(range(2, dim + 1)) + (1,)
        rest = int(np.prod(b.grid.sizes[1:])) if dim > 1 else 1
        self._m = m
        self._stage1 = np.ascontiguousarray(
            allc.transpose(perm).reshape(m * rest, b.grid.sizes[0]))

    def eval(self, x) -> tuple[np.ndarray, np.ndarray]:
        phases = _phase_vectors(self.grid, x)
        r = (self._stage1 @ phases[0]).reshape((self._m,) + self.grid.sizes[1:])
        for a in range(1, self.grid.dim):
            r = np.moveaxis(r, 1, -1)
            flat = r.reshape(-1, r.shape[-1])
            r = (flat @ phases[a]).reshape(r.shape[:-1])
        value = r[:self.ncomp].real
        jac = r[self.ncomp:].real.reshape(self.grid.dim, self.ncomp).T
        return value, jac


def eval_field_at(b: VectorField, x) -> tuple[np.ndarray, np.ndarray]:
    """Exact value and Jacobian of the interpolant at an arbitrary point.

    Direct Fourier summation through per-axis contractions; cost is linear in
    the number of modes.  Returns (value[ncomp], jacobian[ncomp, dim]).
    """
    grid = b.grid
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.dim,):
        raise ParameterError(f"point must have {grid.dim} coordinates")
    return _FieldJet(b).eval(x)


def _field_norm_refined(b: VectorField, factor: int) -> np.ndarray:
    comps = [b.component(i).physical_refined(factor) for i in range(b.ncomp)]
    return np.sqrt(sum(c**2 for c in comps))


def _torus_distance(x, y, periods) -> float:
    d2 = 0.0
    for xi, yi, L in zip(x, y, periods):
        delta = abs((xi - yi) % L)
        d2 += min(delta, L - delta) ** 2
    return math.sqrt(d2)


# ----------------------------------------------------------------------
# Eigenvalues and classification
# ----------------------------------------------------------------------

def cubic_eigenvalues(J: np.ndarray) -> np.ndarray:
    """Eigenvalues of a real 3x3 matrix from the characteristic cubic in closed form.

    Cardano with the trigonometric branch for three real roots; complex pairs
    come from the single-real-root branch.
    """
    J = np.asarray(J, dtype=float)
    if J.shape != (3, 3):
        raise ParameterError("expected a 3x3 matrix")
    if not np.all(np.isfinite(J)):
        raise ParameterError("Jacobian must be finite")
    tr = J[0, 0] + J[1, 1] + J[2, 2]
    m = (
        J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        + J[0, 0] * J[2, 2] - J[0, 2] * J[2, 0]
        + J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1]
    )
    det = float(np.linalg.det(J))
    # lambda^3 - tr lambda^2 + m lambda - det = 0; shift lambda = y + tr/3
    p = m - tr**2 / 3.0
    q = -det + tr * m / 3.0 - 2.0 * tr**3 / 27.0
    shift = tr / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    scale = max(abs(p) ** 1.5, abs(q), 1e-300)
    if disc <= 1e-14 * scale**2 and p < 0:
        # three real roots (trigonometric form)
        rho = 2.0 * math.sqrt(-p / 3.0)
        arg = np.clip(3.0 * q / (p * rho), -1.0, 1.0)
        theta = math.acos(arg) / 3.0
        roots = [rho * math.cos(theta - 2.0 * math.pi * k / 3.0) + shift for k in range(3)]
        return np.sort(np.array(roots, dtype=complex))
    # one real root + complex pair
    sq = math.sqrt(max(disc, 0.0))
    u = np.cbrt(-q / 2.0 + sq)
    v = np.cbrt(-q / 2.0 - sq)
    y1 = u + v
    re = -(u + v) / 2.0
    im = (u - v) * math.sqrt(3.0) / 2.0
    roots = np.array([y1 + shift, re + shift + 1j * im, re + shift - 1j * im])
    return roots[np.argsort(roots.real)]


def classify_zero(J: np.ndarray, hyp_tol: float = 1e-6, degen_tol: float = 1e-6) -> str:
    """degenerate if some |eig| ~ 0, hyperbolic if all real parts stay off zero."""
    J = np.asarray(J, dtype=float)
    eigs = cubic_eigenvalues(J)
    scale = float(np.linalg.norm(J, "fro"))
    if scale == 0.0:
        return "degenerate"
    if np.min(np.abs(eigs)) <= degen_tol * scale:
        return "degenerate"
    if np.min(np.abs(eigs.real)) > hyp_tol * scale:
        return "hyperbolic"
    return "nondegenerate_nonhyperbolic"


# ----------------------------------------------------------------------
# Zero finding
# ----------------------------------------------------------------------

def _local_minima_nd(a: np.ndarray) -> np.ndarray:
    """Boolean mask of strict-or-flat local minima under periodic shifts."""
    mask = np.ones_like(a, dtype=bool)
    for axis in range(a.ndim):
        mask &= a <= np.roll(a, 1, axis)
        mask &= a <= np.roll(a, -1, axis)
    return mask


def _newton_polish(jet: "_FieldJet", x0: np.ndarray, cfg: ZeroFinderConfig,
                   zero_tol: float) -> tuple[np.ndarray, float, int] | None:
    """Damped Newton on the interpolant, run to stagnation.

    Steps come from a least-squares solve so that singular Jacobians
    (degenerate/touching zeros) degrade to the normal-equation direction,
    which still converges geometrically for quadratic-order zeros; running
    past ``zero_tol`` buys position accuracy for those flat zeros.
    """
    x = np.array(x0, dtype=float)
    periods = np.array(jet.grid.periods)
    floor = 1e-5 * zero_tol
    val, jac = jet.eval(x)
    res = float(np.linalg.norm(val))
    iters = 0
    slow_progress = 0
    for it in range(1, cfg.max_iters + 1):
        if res <= floor:
            break
        step, *_ = np.linalg.lstsq(jac, -val, rcond=1e-12)
        norm = float(np.linalg.norm(step))
        if norm == 0.0 or not np.all(np.isfinite(step)):
            break
        cap = 0.25 * float(min(periods))
        if norm > cap:
            step *= cap / norm
        # backtracking on |b|; stagnation ends the polish
        lam = 1.0
        improved = False
        for _ in range(12):
            xn = x + lam * step
            valn, jacn = jet.eval(xn)
            resn = float(np.linalg.norm(valn))
            if resn < res:
                slow_progress = slow_progress + 1 if resn > 0.9 * res else 0
                x, val, jac, res = xn, valn, jacn, resn
                improved = True
                iters = it
                break
            lam *= 0.5
        if not improved or slow_progress >= 3:
            break
    if res <= zero_tol:
        return x % periods, res, iters
    return None


def find_zeros(b: VectorField, zero_tol: float | None = None,
               cfg: ZeroFinderConfig = ZeroFinderConfig()) -> list[ZeroRecord]:
    """All equilibrium points of the interpolated field, classified.

    The scan refines the FFT grid by ``cfg.scan_factor``; every local minimum
    of |b| below the capture threshold seeds a Newton iteration; converged
    points are deduplicated on the torus keeping the smallest residual.
    """
    grid = b.grid
    if zero_tol is None:
        scale = max(float(np.max(np.abs(b.physical()))), 1e-300)
        zero_tol = cfg.zero_tol * scale
    mag = _field_norm_refined(b, cfg.scan_factor)
    gmin = float(mag.min())
    capture = max(cfg.capture_factor * gmin, 2.0 * zero_tol)
    # a zero within one fine cell of a node forces |b(node)| <= lip * diameter
    lip = math.sqrt(sum(
        float(np.sum(grid.kabs * np.abs(b.coeff[c]))) ** 2 for c in range(b.ncomp)))
    cell = math.sqrt(sum((L / (n * cfg.scan_factor)) ** 2
                         for L, n in zip(grid.periods, grid.sizes)))
    reach = lip * cell + 2.0 * zero_tol
    seeds_mask = _local_minima_nd(mag) & (mag <= min(capture, reach))
    seed_idx = np.argwhere(seeds_mask)
    fine_sizes = [n * cfg.scan_factor for n in grid.sizes]
    jet = _FieldJet(b)
    records: list[ZeroRecord] = []
    for idx in seed_idx:
        x0 = np.array([grid.periods[a] * idx[a] / fine_sizes[a] for a in range(grid.dim)])
        polished = _newton_polish(jet, x0, cfg, zero_tol)
        if polished is None:
            log.debug("Newton candidate at %s dropped (no convergence)", x0)
            continue
        x, res, iters = polished
        dup = None
        for rec in records:
            if _torus_distance(x, rec.location, grid.periods) <= cfg.dedup_radius:
                dup = rec
                break
        if dup is not None:
            if res < dup.residual:
                records.remove(dup)
            else:
                continue
        _, jac = jet.eval(x)
        eigs = cubic_eigenvalues(jac) if grid.dim == 3 and b.ncomp == 3 \
            else np.linalg.eigvals(jac)
        records.append(ZeroRecord(
            location=tuple(float(v) for v in x),
            residual=res,
            jacobian=jac,
            eigenvalues=eigs,
            clazz=classify_zero(jac, cfg.hyp_tol, cfg.degen_tol)
            if jac.shape == (3, 3) else "unclassified",
            newton_iters=iters,
        ))
    records.sort(key=lambda r: r.location)
    return records


# ----------------------------------------------------------------------
# Reconnection criteria
# ----------------------------------------------------------------------

def positivity_criterion(b3: SpectralField, M: float, slack: float = 0.01,
                         oversample: int = 2) -> tuple[bool, float]:
    """Whether sup|b3 - M| < M, evaluated on an oversampled grid.

    True implies b3 > 0 everywhere, hence the field has no zeros regardless
    of the other components.  The sup over a refined grid underestimates the
    continuum sup for band-limited fields, so the margin must additionally
    exceed ``slack * M`` before the criterion reports true.
    """
    if M <= 0:
        raise ParameterError("positivity criterion needs a positive mean M")
    fluct = b3.shifted_mean(b3.mean - M)
    sup = fluct.linf(oversample)
    margin = M - sup
    return bool(margin > slack * M), float(margin)


@dataclass
class ReconnectionReport:
    t_first_no_zero: float | None
    criterion: str                     # strict_zero_set | positivity_b3
    times: np.ndarray
    zero_counts: np.ndarray
    min_field: np.ndarray
    margins: np.ndarray
    first_zero: list = field(default_factory=list)    # per-snapshot (location, class) or None
    meta: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        head = " ".join(f"{k}={v}" for k, v in self.meta.items())
        with open(path, "w") as fh:
            fh.write(f"# {head}\n")
            fh.write("t,criterion,n_zeros,min_abs_b,margin,first_zero_x1,first_zero_x2,first_zero_x3,class\n")
            for i, (t, nz, mn, mg) in enumerate(
                    zip(self.times, self.zero_counts, self.min_field, self.margins)):
                fz = self.first_zero[i] if i < len(self.first_zero) else None
                if fz is None:
                    loc, clazz = ",,", ""
                else:
                    loc = ",".join(f"{v:.17g}" for v in fz[0])
                    clazz = fz[1]
                fh.write(f"{t:.17g},{self.criterion},{int(nz)},{mn:.17g},{mg:.17g},{loc},{clazz}\n")


def _criterion_holds(payload, criterion: str, M: float, slack: float):
    """(holds, margin, n_zeros, min|b|, first_zero) for one snapshot payload."""
    if criterion == "positivity_b3":
        if not isinstance(payload, SpectralField):
            raise ParameterError("positivity criterion expects scalar b3 snapshots")
        ok, margin = positivity_criterion(payload, M, slack)
        mag = payload.physical_refined(2)
        return ok, margin, -1, float(np.min(np.abs(mag))), None
    if criterion == "strict_zero_set":
        if not isinstance(payload, VectorField):
            raise ParameterError("strict criterion expects vector field snapshots")
        zeros = find_zeros(payload)
        mag = _field_norm_refined(payload, 2)
        first = (zeros[0].location, zeros[0].clazz) if zeros else None
        return len(zeros) == 0, float(np.min(mag)), len(zeros), float(np.min(mag)), first
    raise ParameterError(f"unknown criterion {criterion!r}")


def reconnection_time(snapshots, criterion: str, M: float, slack: float = 0.01,
                      advance=None, refine_rtol: float = 1e-2,
                      meta: dict | None = None) -> ReconnectionReport:
    """First snapshot time at which the chosen criterion holds.

    ``snapshots`` is a time-ordered sequence of (t, payload) with payload a
    scalar b3 field (positivity) or the full vector field (strict).  When an
    ``advance(payload, t0, t1)`` replay callback is supplied, the crossing is
    bisection-refined by re-solving from the nearest earlier snapshot to
    relative tolerance ``refine_rtol``.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise ParameterError("no snapshots supplied")
    times = np.array([t for t, _ in snapshots], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ParameterError("snapshots must be strictly time-ordered")

    margins, counts, minfield, firsts = [], [], [], []
    first_idx = None
    for i, (t, payload) in enumerate(snapshots):
        ok, margin, nz, mn, first = _criterion_holds(payload, criterion, M, slack)
        margins.append(margin)
        counts.append(nz)
        minfield.append(mn)
        firsts.append(first)
        if ok and first_idx is None:
            first_idx = i

    t_star: float | None = None
    if first_idx is not None:
        t_star = float(times[first_idx])
        if first_idx > 0 and advance is not None:
            lo_t, lo_payload = snapshots[first_idx - 1]
            hi_t = t_star
            while (hi_t - lo_t) > refine_rtol * max(hi_t, 1e-30):
                mid = 0.5 * (lo_t + hi_t)
                mid_payload = advance(lo_payload, lo_t, mid)
                ok, *_ = _criterion_holds(mid_payload, criterion, M, slack)
                if ok:
                    hi_t = mid
                else:
                    lo_t, lo_payload = mid, mid_payload
            t_star = hi_t

    return ReconnectionReport(
        t_first_no_zero=t_star,
        criterion=criterion,
        times=times,
        zero_counts=np.array(counts),
        min_field=np.array(minfield),
        margins=np.array(margins),
        first_zero=firsts,
        meta=meta or {},
    )


def persistence_check(snapshots, x_star, radius: float,
                      cfg: ZeroFinderConfig = ZeroFinderConfig()) -> tuple[bool, list]:
    """Track a zero from x_star across snapshots; fails when the track is lost.

    Each snapshot must contain a zero within ``radius`` of the previous
    location.  Returns (maintained, track) where track holds (t, location)
    up to the last good snapshot.
    """
    if radius <= 0:
        raise ParameterError("tracking radius must be positive")
    track = []
    current = np.asarray(x_star, dtype=float)
    for t, payload in snapshots:
        if not isinstance(payload, VectorField):
            raise ParameterError("persistence check expects vector-field snapshots")
        polished = _newton_polish(_FieldJet(payload), current, cfg,
                                  zero_tol=cfg.zero_tol * max(1.0, payload.l2()))
        if polished is None:
            return False, track
        x, _, _ = polished
        if _torus_distance(x, current, payload.grid.periods) > radius:
            return False, track
        current = x
        track.append((float(t), tuple(float(v) for v in x)))
    return True, track


# ----------------------------------------------------------------------
# Report writers
# ----------------------------------------------------------------------

def write_zero_csv(path, t: float, records: list[ZeroRecord]) -> None:
    with open(path, "w") as fh:
        fh.write("t,x1,x2,x3,residual,class,newton_iters\n")
        for r in records:
            loc = ",".join(f"{v:.17g}" for v in r.location)
            fh.write(f"{t:.17g},{loc},{r.residual:.17g},{r.clazz},{r.newton_iters}\n")


def write_zero_jsonl(path, records: list[ZeroRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.as_dict()) + "\n")
