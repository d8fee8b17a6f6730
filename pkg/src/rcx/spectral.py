"""FFT-backed periodic fields and Fourier multiplier operators.

Shared substrate for every solver in the package: real scalar/vector fields on
rectangular tori stored as complex Fourier coefficients, Sobolev and Besov
norms, Littlewood-Paley projections, dealiasing, and a binary snapshot format.

Conventions
-----------
* The reference torus is ``[0, 2*pi)^d`` with integer wavenumbers; other
  periods rescale the wavenumbers to ``2*pi*m/L``.
* Coefficients are stored in the normalized Fourier-series convention
  ``f(x) = sum_k c_k exp(i k.x)`` on the full (fftn-ordered) lattice, with
  Hermitian symmetry ``c_{-k} = conj(c_k)`` so the field is real.
* All L2-based norms use the mean-normalized measure ``dx / vol`` so that
  ``norm(1) == 1`` and constants are grid-independent: ``norm(f)**2`` is just
  ``sum(|c_k|**2)``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "SpectralField",
    "VectorField",
    "MultiplierSpec",
    "ParameterError",
    "apply_multiplier",
    "multiplier_symbol",
    "derivative",
    "sobolev_norm",
    "besov_norm",
    "lp_project",
    "lp_project_leq",
    "lp_project_gt",
    "lp_blocks",
    "smooth_cutoff",
    "CUTOFF_TABLE",
    "save_field",
    "load_field",
]


class ParameterError(ValueError):
    """Invalid parameter passed to a spectral operation."""


TWO_PI = 2.0 * math.pi


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Rectangular periodic grid with power-of-two sizes.

    ``dim`` 2 and 3 are the solver domains; dim 1 is admitted so shear
    profiles f(x2) can live in the same representation.
    """

    sizes: tuple[int, ...]
    periods: tuple[float, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not 1 <= len(sizes) <= 3:
            raise ParameterError(f"grid dimension must be 1, 2 or 3, got {len(sizes)}")
        for n in sizes:
            if n < 8 or not _is_power_of_two(n):
                raise ParameterError(f"grid sizes must be powers of two >= 8, got {sizes}")
        periods = self.periods or tuple(TWO_PI for _ in sizes)
        periods = tuple(float(p) for p in periods)
        if len(periods) != len(sizes):
            raise ParameterError("periods must match the number of axes")
        if any(p <= 0 for p in periods):
            raise ParameterError(f"periods must be positive, got {periods}")
        object.__setattr__(self, "periods", periods)

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Per-axis wavenumber arrays in fftn ordering (2*pi*m/L)."""
        return tuple(
            TWO_PI / L * np.fft.fftfreq(n, d=1.0 / n)
            for n, L in zip(self.sizes, self.periods)
        )

    @cached_property
    def kmesh(self) -> tuple[np.ndarray, ...]:
        """Broadcastable wavenumber meshes, one per axis."""
        out = []
        for axis, k in enumerate(self.wavenumbers):
            shape = [1] * self.dim
            shape[axis] = self.sizes[axis]
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 on the full lattice."""
        out = np.zeros(self.sizes)
        for km in self.kmesh:
            out = out + km**2
        return out

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Strict 2/3-rule mask: keep |m_i| < n_i/3 (integer index per axis).

        With both factors of a product so truncated, aliased images of the
        product land strictly outside the retained modes, so retained modes
        are alias-free.
        """
        mask = np.ones(self.sizes, dtype=bool)
        for axis, n in enumerate(self.sizes):
            m = np.fft.fftfreq(n, d=1.0 / n)  # integer indices
            shape = [1] * self.dim
            shape[axis] = n
            mask &= (np.abs(m) < n / 3).reshape(shape)
        return mask

    @property
    def max_wavenumber(self) -> float:
        """Largest |k| on the lattice."""
        return math.sqrt(sum((TWO_PI / L * (n // 2)) ** 2 for n, L in zip(self.sizes, self.periods)))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for n, L in zip(self.sizes, self.periods))

    def axis_points(self, axis: int) -> np.ndarray:
        n, L = self.sizes[axis], self.periods[axis]
        return L * np.arange(n) / n

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        pts = [self.axis_points(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*pts, indexing="ij"))


def _hermitian_error(coeff: np.ndarray) -> float:
    rev = coeff
    for axis in range(coeff.ndim):
        rev = np.flip(np.roll(rev, -1, axis=axis), axis=axis)
    denom = np.max(np.abs(coeff))
    if denom == 0.0:
        return 0.0
    return float(np.max(np.abs(coeff - np.conj(rev))) / denom)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real periodic scalar field stored as complex Fourier coefficients.

    Immutable value type: every operation returns a new field. ``label``
    tags the field (plain scalar vs. a named vector component).
    """

    grid: Grid
    coeff: np.ndarray
    label: str = "scalar"

    def __post_init__(self):
        coeff = np.asarray(self.coeff, dtype=np.complex128)
        if coeff.shape != self.grid.sizes:
            raise ParameterError(
                f"coefficient shape {coeff.shape} does not match grid {self.grid.sizes}"
            )
        coeff = coeff.copy()
        coeff.flags.writeable = False
        object.__setattr__(self, "coeff", coeff)

    # -- constructors -------------------------------------------------

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray, label: str = "scalar") -> "SpectralField":
        values = np.asarray(values, dtype=float)
        if values.shape != grid.sizes:
            raise ParameterError(f"value shape {values.shape} does not match grid {grid.sizes}")
        coeff = np.fft.fftn(values) / grid.npoints
        return cls(grid, coeff, label)

    @classmethod
    def from_coeff(cls, grid: Grid, coeff: np.ndarray, label: str = "scalar",
                   check_hermitian: bool = True) -> "SpectralField":
        f = cls(grid, coeff, label)
        if check_hermitian:
            err = _hermitian_error(f.coeff)
            if err > 1e-10:
                raise ParameterError(f"coefficients break Hermitian symmetry (rel err {err:.2e})")
        return f

    @classmethod
    def zero(cls, grid: Grid, label: str = "scalar") -> "SpectralField":
        return cls(grid, np.zeros(grid.sizes, dtype=np.complex128), label)

    # -- representation -----------------------------------------------

    def physical(self) -> np.ndarray:
        """Field values on the grid nodes."""
        return np.fft.ifftn(self.coeff).real * self.grid.npoints

    def physical_refined(self, factor: int) -> np.ndarray:
        """Values on a ``factor``-times refined uniform grid (zero-padded FFT)."""
        if factor < 1 or int(factor) != factor:
            raise ParameterError("refinement factor must be a positive integer")
        if factor == 1:
            return self.physical()
        fine = tuple(n * factor for n in self.grid.sizes)
        out = np.zeros(fine, dtype=np.complex128)
        idx = []
        for n, nf in zip(self.grid.sizes, fine):
            src = np.fft.fftfreq(n, d=1.0 / n).astype(int)
            idx.append(src % nf)
        mesh = np.ix_(*idx)
        out[mesh] = self.coeff
        return np.fft.ifftn(out).real * int(np.prod(fine))

    def hermitian_error(self) -> float:
        return _hermitian_error(self.coeff)

    @property
    def mean(self) -> float:
        return float(self.coeff[(0,) * self.grid.dim].real)

    def l2(self) -> float:
        """Mean-normalized L2 norm, sqrt(sum |c_k|^2)."""
        return float(np.sqrt(np.sum(np.abs(self.coeff) ** 2)))

    def linf(self, oversample: int = 1) -> float:
        return float(np.max(np.abs(self.physical_refined(oversample))))

    # -- arithmetic ----------------------------------------------------

    def _like(self, coeff: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeff, self.label)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_grid(other)
        return self._like(self.coeff + other.coeff)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_grid(other)
        return self._like(self.coeff - other.coeff)

    def __mul__(self, scalar: float) -> "SpectralField":
        return self._like(self.coeff * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self._like(-self.coeff)

    def _check_same_grid(self, other: "SpectralField") -> None:
        if other.grid != self.grid:
            raise ParameterError("fields live on different grids")

    def shifted_mean(self, new_mean: float) -> "SpectralField":
        coeff = self.coeff.copy()
        coeff[(0,) * self.grid.dim] = new_mean
        return self._like(coeff)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Real vector field: stacked component coefficients, shape (ncomp, *sizes)."""

    grid: Grid
    coeff: np.ndarray

    def __post_init__(self):
        coeff = np.asarray(self.coeff, dtype=np.complex128)
        if coeff.ndim != self.grid.dim + 1 or coeff.shape[1:] != self.grid.sizes:
            raise ParameterError(
                f"vector coefficient shape {coeff.shape} does not match grid {self.grid.sizes}"
            )
        coeff = coeff.copy()
        coeff.flags.writeable = False
        object.__setattr__(self, "coeff", coeff)

    @property
    def ncomp(self) -> int:
        return self.coeff.shape[0]

    @classmethod
    def from_components(cls, components: list[SpectralField]) -> "VectorField":
        grid = components[0].grid
        for c in components[1:]:
            if c.grid != grid:
                raise ParameterError("vector components live on different grids")
        return cls(grid, np.stack([c.coeff for c in components]))

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> "VectorField":
        values = np.asarray(values, dtype=float)
        coeff = np.fft.fftn(values, axes=tuple(range(1, values.ndim))) / grid.npoints
        return cls(grid, coeff)

    @classmethod
    def zero(cls, grid: Grid, ncomp: int | None = None) -> "VectorField":
        ncomp = grid.dim if ncomp is None else ncomp
        return cls(grid, np.zeros((ncomp,) + grid.sizes, dtype=np.complex128))

    def component(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.coeff[i], label=f"component{i}")

    def physical(self) -> np.ndarray:
        axes = tuple(range(1, self.coeff.ndim))
        return np.fft.ifftn(self.coeff, axes=axes).real * self.grid.npoints

    def l2(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeff) ** 2)))

    def divergence(self) -> SpectralField:
        if self.ncomp != self.grid.dim:
            raise ParameterError("divergence needs one component per axis")
        out = np.zeros(self.grid.sizes, dtype=np.complex128)
        for axis, km in enumerate(self.grid.kmesh):
            out = out + 1j * km * self.coeff[axis]
        return SpectralField(self.grid, out, label="divergence")

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.coeff + other.coeff)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.coeff - other.coeff)

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField(self.grid, self.coeff * float(scalar))

    __rmul__ = __mul__


# ----------------------------------------------------------------------
# Smooth Littlewood-Paley cutoff
# ----------------------------------------------------------------------

def _bump(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_cutoff(xi) -> np.ndarray:
    """Smooth step: 1 for |xi| <= 1, 0 for |xi| >= 2, exp(-1/x)-type in between.

    This is the fixed cutoff used by every Littlewood-Paley projection;
    CUTOFF_TABLE pins its 16 reference values so block norms are
    bit-stable across platforms.
    """
    xi = np.abs(np.asarray(xi, dtype=float))
    t = xi - 1.0
    up, down = _bump(t), _bump(1.0 - t)
    denom = up + down
    denom[denom == 0.0] = 1.0
    out = 1.0 - up / denom
    out = np.where(xi <= 1.0, 1.0, out)
    out = np.where(xi >= 2.0, 0.0, out)
    return out


# smooth_cutoff(1 + i/16) for i = 0..15, frozen for regression.
CUTOFF_TABLE = tuple(
    float(v) for v in smooth_cutoff(1.0 + np.arange(16) / 16.0)
)


# ----------------------------------------------------------------------
# Multipliers
# ----------------------------------------------------------------------

_MULTIPLIER_KINDS = ("inhomogeneous", "homogeneous", "heat", "lp_low", "lp_block", "dealias")


@dataclass(frozen=True)
class MultiplierSpec:
    """Fourier multiplier description.

    kind:
      inhomogeneous  (1 + |k|^2)^(s/2)        -- <D>^s
      homogeneous    |k|^s, 0 at k = 0        -- D^s
      heat           exp(-param |k|^2)        -- param = eta * t
      lp_low         smooth_cutoff(|k|/N)     -- param = N (dyadic)
      lp_block       low(N) - low(N/2)        -- param = N (dyadic)
      dealias        strict 2/3-rule mask
    """

    kind: str
    order: float = 0.0
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in _MULTIPLIER_KINDS:
            raise ParameterError(f"unknown multiplier kind {self.kind!r}")
        if not math.isfinite(self.order):
            raise ParameterError("multiplier order must be finite")
        if self.kind == "heat" and (not math.isfinite(self.param) or self.param < 0):
            raise ParameterError("heat multiplier needs param = eta*t >= 0")
        if self.kind in ("lp_low", "lp_block"):
            n = self.param
            if n < 1 or n != int(n) or not _is_power_of_two(int(n)):
                raise ParameterError("LP cutoffs need dyadic param N in {1, 2, 4, ...}")


def multiplier_symbol(spec: MultiplierSpec, grid: Grid) -> np.ndarray:
    kind = spec.kind
    if kind == "inhomogeneous":
        return (1.0 + grid.k2) ** (spec.order / 2.0)
    if kind == "homogeneous":
        sym = np.zeros(grid.sizes)
        nz = grid.k2 > 0
        sym[nz] = grid.kabs[nz] ** spec.order
        return sym
    if kind == "heat":
        return np.exp(-spec.param * grid.k2)
    if kind == "lp_low":
        return smooth_cutoff(grid.kabs / spec.param)
    if kind == "lp_block":
        n = spec.param
        return smooth_cutoff(grid.kabs / n) - smooth_cutoff(grid.kabs / (n / 2.0))
    if kind == "dealias":
        return grid.dealias_mask.astype(float)
    raise ParameterError(f"unknown multiplier kind {kind!r}")


def apply_multiplier(f: SpectralField, spec: MultiplierSpec) -> SpectralField:
    """Multiply coefficients pointwise by the (real, even) symbol."""
    sym = multiplier_symbol(spec, f.grid)
    return SpectralField(f.grid, f.coeff * sym, f.label)


def derivative(f: SpectralField, axis: int) -> SpectralField:
    return SpectralField(f.grid, 1j * f.grid.kmesh[axis] * f.coeff, f.label)


# ----------------------------------------------------------------------
# Norms
# ----------------------------------------------------------------------

def sobolev_norm(f: SpectralField, s: float, homogeneous: bool = False) -> float:
    """H^s (or homogeneous H^s) norm under the mean-normalized measure."""
    if not math.isfinite(s):
        raise ParameterError("Sobolev order must be finite")
    a2 = np.abs(f.coeff) ** 2
    if homogeneous:
        nz = f.grid.k2 > 0
        return float(np.sqrt(np.sum(f.grid.k2[nz] ** s * a2[nz])))
    return float(np.sqrt(np.sum((1.0 + f.grid.k2) ** s * a2)))


def lp_blocks(grid: Grid) -> list[int]:
    """Dyadic block indices N = 2, 4, ... needed to cover the lattice."""
    out = []
    n = 2
    while n / 2.0 < grid.max_wavenumber:
        out.append(n)
        n *= 2
    return out


def lp_project_leq(f: SpectralField, N: int) -> SpectralField:
    _check_dyadic(f.grid, N, allow_one=True)
    return apply_multiplier(f, MultiplierSpec("lp_low", param=N))


def lp_project(f: SpectralField, N: int) -> SpectralField:
    _check_dyadic(f.grid, N)
    return apply_multiplier(f, MultiplierSpec("lp_block", param=N))


def lp_project_gt(f: SpectralField, N: int) -> SpectralField:
    _check_dyadic(f.grid, N, allow_one=True)
    low = multiplier_symbol(MultiplierSpec("lp_low", param=N), f.grid)
    return SpectralField(f.grid, f.coeff * (1.0 - low), f.label)


def _check_dyadic(grid: Grid, N: int, allow_one: bool = False) -> None:
    if N < (1 if allow_one else 2) or not _is_power_of_two(int(N)):
        raise ParameterError(f"N must be dyadic (>= {1 if allow_one else 2}), got {N}")
    if N / 2.0 >= grid.max_wavenumber:
        warnings.warn(
            f"LP block N={N} lies above the grid Nyquist; projection is empty",
            RuntimeWarning,
            stacklevel=3,
        )


def besov_norm(f: SpectralField, s: float, q: float) -> float:
    """B^s_{inf,q} norm, q in {2, inf}: l^q over {|P_<=1 f|_inf} u {N^s |P_N f|_inf}."""
    if q not in (2, float("inf")):
        raise ParameterError("only q in {2, inf} are supported (p = inf Besov norms)")
    terms = [lp_project_leq(f, 1).linf()]
    for n in lp_blocks(f.grid):
        terms.append(n**s * lp_project(f, n).linf())
    terms = np.asarray(terms)
    if q == 2:
        return float(np.sqrt(np.sum(terms**2)))
    return float(np.max(terms))


# ----------------------------------------------------------------------
# Binary snapshot format (RCXF)
# ----------------------------------------------------------------------
#
#   magic   4 bytes  b"RCXF"
#   version u16      currently 1
#   dim     u8
#   sizes   dim * u32
#   period  dim * f64
#   data    2 * prod(sizes) * f64, interleaved (re, im), row-major lattice
#
# All integers and floats little-endian.

_RCXF_MAGIC = b"RCXF"
_RCXF_VERSION = 1


def save_field(path, f: SpectralField) -> None:
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_RCXF_MAGIC)
        fh.write(struct.pack("<HB", _RCXF_VERSION, g.dim))
        fh.write(struct.pack(f"<{g.dim}I", *g.sizes))
        fh.write(struct.pack(f"<{g.dim}d", *g.periods))
        inter = np.empty(g.npoints * 2, dtype="<f8")
        flat = f.coeff.reshape(-1)
        inter[0::2] = flat.real
        inter[1::2] = flat.imag
        fh.write(inter.tobytes())


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _RCXF_MAGIC:
            raise ParameterError(f"not an RCXF file (magic {magic!r})")
        version, dim = struct.unpack("<HB", fh.read(3))
        if version != _RCXF_VERSION:
            raise ParameterError(f"unsupported RCXF version {version}")
        sizes = struct.unpack(f"<{dim}I", fh.read(4 * dim))
        periods = struct.unpack(f"<{dim}d", fh.read(8 * dim))
        n = int(np.prod(sizes))
        inter = np.frombuffer(fh.read(16 * n), dtype="<f8")
        coeff = (inter[0::2] + 1j * inter[1::2]).reshape(sizes)
    grid = Grid(tuple(sizes), tuple(periods))
    return SpectralField.from_coeff(grid, coeff, check_hermitian=False)
