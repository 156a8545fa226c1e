"""Periodic grids, spectral transforms, differential operators and norms.

Fields live on the periodic box [-L, L)^3 sampled with n points per axis.
All derivatives are taken in Fourier space, so they are exact for
band-limited data.  Internally the real-to-complex FFT layout is used;
`forward_transform` exposes the full complex spectrum for callers that
want it.
"""

from __future__ import annotations

import functools
import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import scipy.fft as sfft

from .errors import (
    GridMismatchError,
    InsufficientRangeError,
    InvalidFieldError,
    NotFreeSpaceError,
)

_AXES = (-3, -2, -1)


@dataclass(frozen=True)
class GridSpec:
    """Cubic periodic grid on [-half_width, half_width)^3."""

    n: int
    half_width: float = math.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 8, got {self.n}")
        if not (math.isfinite(self.half_width) and self.half_width > 0):
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    def coords(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.coords()
        return tuple(np.meshgrid(x, x, x, indexing="ij"))

    def radius(self) -> np.ndarray:
        x, y, z = self.mesh()
        return np.sqrt(x * x + y * y + z * z)


class _Spectral:
    """Wavenumber tables for one grid in rfftn layout."""

    def __init__(self, grid: GridSpec):
        n = grid.n
        scale = math.pi / grid.half_width
        full = np.fft.fftfreq(n, 1.0 / n)
        half = np.fft.rfftfreq(n, 1.0 / n)
        self.int_k = (full[:, None, None], full[None, :, None], half[None, None, :])
        self.k = tuple(scale * k for k in self.int_k)
        # first derivatives drop the Nyquist plane to keep real output real
        odd = []
        for kk, ik in zip(self.k, self.int_k):
            ko = kk.copy()
            ko[np.abs(ik) == n // 2] = 0.0
            odd.append(ko)
        self.k_odd = tuple(odd)
        self.k2 = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        with np.errstate(divide="ignore"):
            inv = 1.0 / self.k2
        inv[0, 0, 0] = 0.0
        self.inv_k2 = inv
        keep = [3 * np.abs(ik) < n for ik in self.int_k]
        self.dealias = (keep[0] & keep[1] & keep[2]).astype(float)
        w = np.full(n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self.parseval = w[None, None, :]
        self.norm = grid.cell_volume / n**3

    def power(self, axis: int, order: int) -> np.ndarray:
        """(i k)^order along one axis, Nyquist-safe for odd orders."""
        if order == 0:
            return np.ones(1)
        base = self.k_odd[axis] if order % 2 else self.k[axis]
        return (1j) ** order * base**order


@functools.lru_cache(maxsize=16)
def spectral(grid: GridSpec) -> _Spectral:
    return _Spectral(grid)


def multi_indices(m: int) -> list[tuple[int, int, int]]:
    """All 3-D multi-indices alpha with |alpha| <= m."""
    return [a for a in itertools.product(range(m + 1), repeat=3) if sum(a) <= m]


@functools.lru_cache(maxsize=32)
def sobolev_weight(grid: GridSpec, m: int) -> np.ndarray:
    """sum over |alpha| <= m of |xi^alpha|^2, in rfft layout."""
    sp = spectral(grid)
    w = np.zeros((grid.n, grid.n, grid.n // 2 + 1))
    for a in multi_indices(m):
        term = np.ones(1)
        for ax, order in enumerate(a):
            term = term * np.abs(sp.power(ax, order)) ** 2
        w = w + term
    return w


def rfft(a: np.ndarray) -> np.ndarray:
    return sfft.rfftn(a, axes=_AXES)


def irfft(a: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(a, s=(n, n, n), axes=_AXES)


def _check_finite(a: np.ndarray, what: str = "field"):
    if not np.all(np.isfinite(a)):
        raise InvalidFieldError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real component sampled on the grid, shape (n, n, n)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            if v.size != self.grid.n**3:
                raise InvalidFieldError(
                    f"expected {self.grid.n ** 3} values, got {v.size}")
            v = v.reshape(self.grid.shape)
        _check_finite(v)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __add__(self, other):
        _same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Three components on a shared grid, stored as one (3, n, n, n) array."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape != (3,) + self.grid.shape:
            raise InvalidFieldError(
                f"vector data must have shape {(3,) + self.grid.shape}, got {d.shape}")
        _check_finite(d)
        object.__setattr__(self, "data", d)

    @classmethod
    def from_components(cls, components: Sequence[ScalarField]) -> "VectorField":
        if len(components) != 3:
            raise InvalidFieldError("a vector field has exactly three components")
        grid = components[0].grid
        for c in components[1:]:
            _same_grid(components[0], c)
        return cls(grid, np.stack([c.values for c in components]))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        return cls(grid, np.zeros((3,) + grid.shape))

    @property
    def components(self) -> tuple[ScalarField, ScalarField, ScalarField]:
        return tuple(ScalarField(self.grid, c) for c in self.data)

    def __add__(self, other):
        _same_grid(self, other)
        return VectorField(self.grid, self.data + other.data)

    def __sub__(self, other):
        _same_grid(self, other)
        return VectorField(self.grid, self.data - other.data)

    def __mul__(self, c):
        return VectorField(self.grid, self.data * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return VectorField(self.grid, self.data / c)

    def __neg__(self):
        return VectorField(self.grid, -self.data)


Field = Union[ScalarField, VectorField]


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Full complex spectrum of a scalar field (numpy fftn ordering)."""

    grid: GridSpec
    coeffs: np.ndarray

    def wavevectors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = math.pi / self.grid.half_width * np.fft.fftfreq(self.grid.n, 1.0 / self.grid.n)
        return tuple(np.meshgrid(k, k, k, indexing="ij"))


def forward_transform(f: ScalarField) -> SpectralField:
    return SpectralField(f.grid, np.fft.fftn(f.values))


def inverse_transform(s: SpectralField) -> ScalarField:
    return ScalarField(s.grid, np.fft.ifftn(s.coeffs).real)


@dataclass(frozen=True, eq=False)
class LocalTrajectory:
    """A vector field at the M+1 equispaced local times of step l.

    `data` has shape (M+1, 3, n, n, n); node j sits at tau = (l-1) + j/M.
    """

    grid: GridSpec
    data: np.ndarray
    l: int = 1

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 5 or d.shape[1:] != (3,) + self.grid.shape:
            raise InvalidFieldError(f"bad trajectory shape {d.shape}")
        if d.shape[0] < 3:
            raise InvalidFieldError("a trajectory needs M >= 2 (at least 3 nodes)")
        _check_finite(d, "trajectory")
        object.__setattr__(self, "data", d)

    @classmethod
    def from_states(cls, states: Sequence[VectorField], l: int = 1) -> "LocalTrajectory":
        grid = states[0].grid
        for s in states[1:]:
            _same_grid(states[0], s)
        return cls(grid, np.stack([s.data for s in states]), l)

    @classmethod
    def constant(cls, f: VectorField, M: int, l: int = 1) -> "LocalTrajectory":
        return cls(f.grid, np.broadcast_to(f.data, (M + 1,) + f.data.shape).copy(), l)

    @property
    def M(self) -> int:
        return self.data.shape[0] - 1

    @property
    def nodes(self) -> np.ndarray:
        return (self.l - 1) + np.arange(self.M + 1) / self.M

    @property
    def states(self) -> tuple[VectorField, ...]:
        return tuple(VectorField(self.grid, s) for s in self.data)

    def state(self, j: int) -> VectorField:
        return VectorField(self.grid, self.data[j])

    def __add__(self, other):
        _same_grid(self, other)
        return LocalTrajectory(self.grid, self.data + other.data, self.l)

    def __sub__(self, other):
        _same_grid(self, other)
        return LocalTrajectory(self.grid, self.data - other.data, self.l)


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def _unpack(f) -> tuple[GridSpec, np.ndarray]:
    """Return the grid and a (components, n, n, n) view."""
    if isinstance(f, ScalarField):
        return f.grid, f.values[None]
    if isinstance(f, VectorField):
        return f.grid, f.data
    raise TypeError(f"expected ScalarField or VectorField, got {type(f).__name__}")


def hat_sobolev_sq(hat: np.ndarray, grid: GridSpec, m: int) -> np.ndarray:
    """Squared H^m norms of spectra, reduced over the last three axes."""
    sp = spectral(grid)
    w = sobolev_weight(grid, m) * sp.parseval
    return sp.norm * np.einsum("...ijk,ijk->...", np.abs(hat) ** 2, w)


def sobolev_norm(f: Field, m: int) -> float:
    """H^m norm; for vector fields the max over components."""
    if m < 0 or m > 4:
        raise ValueError(f"Sobolev order must be in 0..4, got {m}")
    grid, a = _unpack(f)
    _check_finite(a)
    return float(np.sqrt(hat_sobolev_sq(rfft(a), grid, m).max()))


def derivative(f: ScalarField, alpha: tuple[int, int, int]) -> ScalarField:
    sp = spectral(f.grid)
    mult = sp.power(0, alpha[0]) * sp.power(1, alpha[1]) * sp.power(2, alpha[2])
    return ScalarField(f.grid, irfft(rfft(f.values) * mult, f.grid.n))


def cm_sup_norm(f: Field, m: int) -> float:
    """max over components of sum_{|alpha|<=m} sup |D^alpha f|."""
    grid, a = _unpack(f)
    _check_finite(a)
    sp = spectral(grid)
    hat = rfft(a)
    total = np.zeros(a.shape[0])
    for alpha in multi_indices(m):
        if alpha == (0, 0, 0):
            total += np.abs(a).max(axis=_AXES)
            continue
        mult = sp.power(0, alpha[0]) * sp.power(1, alpha[1]) * sp.power(2, alpha[2])
        total += np.abs(irfft(hat * mult, grid.n)).max(axis=_AXES)
    return float(total.max())


def hm_cm_norm(f: Field, m: int) -> float:
    """The H^m-and-C^m norm, realized as the larger of the two parts."""
    return max(sobolev_norm(f, m), cm_sup_norm(f, m))


def c0_traj_norm(t: LocalTrajectory, m: int) -> float:
    """sup over nodes of the H^m norm."""
    return float(np.sqrt(hat_sobolev_sq(rfft(t.data), t.grid, m).max()))


def time_derivative(t: LocalTrajectory) -> np.ndarray:
    """d/dtau at every node: centered inside, one-sided at the ends."""
    return np.gradient(t.data, 1.0 / t.M, axis=0, edge_order=1)


def c1_traj_norm(t: LocalTrajectory, m: int) -> float:
    dt = time_derivative(t)
    d_norm = float(np.sqrt(hat_sobolev_sq(rfft(dt), t.grid, m).max()))
    return c0_traj_norm(t, m) + d_norm


def divergence(v: VectorField) -> ScalarField:
    sp = spectral(v.grid)
    hat = rfft(v.data)
    div = sum(sp.power(i, 1) * hat[i] for i in range(3))
    return ScalarField(v.grid, irfft(div, v.grid.n))


def l2_norm(f: Field) -> float:
    """Plain L^2 norm over the box (max over components)."""
    grid, a = _unpack(f)
    return float(np.sqrt((a**2).sum(axis=_AXES).max() * grid.cell_volume))


def boundary_ratio(f: Field) -> float:
    """sup on the outermost grid layer divided by the global sup (all components)."""
    a = np.abs(_unpack(f)[1])
    top = a.max()
    if top == 0.0:
        return 0.0
    shell = max(a[:, 0].max(), a[:, -1].max(), a[:, :, 0].max(), a[:, :, -1].max(),
                a[..., 0].max(), a[..., -1].max())
    return float(shell / top)


def decay_exponent(f: ScalarField, fit_range: tuple[float, float], *,
                   boundary_tol: float | None = 1e-6, max_exponent: float = 12.0,
                   shell_width: float | None = None) -> float:
    """Polynomial decay order fitted from radial shell maxima.

    Shell maxima of |f| are regressed in log-log coordinates against the
    radius where each maximum is attained; the negated slope is returned,
    capped at `max_exponent`.  Shells whose maximum underflows to zero mean
    super-polynomial decay and also return the cap.
    """
    a = np.abs(f.values)
    _check_finite(a)
    if boundary_tol is not None and boundary_ratio(f) >= boundary_tol:
        raise NotFreeSpaceError(
            f"boundary sup ratio {boundary_ratio(f):.3g} exceeds {boundary_tol:g}")
    top = a.max()
    if top == 0.0:
        return max_exponent
    a = a / top  # makes the fit blind to the overall scale
    r0, r1 = fit_range
    width = shell_width or f.grid.spacing
    r = f.grid.radius().reshape(-1)
    vals = a.reshape(-1)
    sel = (r >= r0) & (r < r1)
    r, vals = r[sel], vals[sel]
    shell = np.floor((r - r0) / width).astype(int)
    order = np.lexsort((vals, shell))
    shell, r, vals = shell[order], r[order], vals[order]
    last = np.flatnonzero(np.r_[shell[1:] != shell[:-1], True]) if shell.size else shell
    if last.size < 4:
        raise InsufficientRangeError(
            f"only {last.size} radial shells in range {fit_range}; need 4")
    peak, at = vals[last], r[last]
    if np.any(peak == 0.0):
        return max_exponent
    slope = np.polyfit(np.log(at), np.log(peak), 1)[0]
    return float(min(-slope, max_exponent))


# -- checkpoints --------------------------------------------------------------

MAGIC = b"LRSF"
VERSION = 1
_HEADER = struct.Struct("<4sIdd")


def save_field(path, f: Field) -> None:
    """Write magic, version (u32), n and L (f64), then f64 components."""
    grid, a = _unpack(f)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, float(grid.n), float(grid.half_width)))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_field(path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidFieldError(f"{path}: truncated header")
    magic, version, n, half_width = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InvalidFieldError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise InvalidFieldError(f"{path}: unsupported version {version}")
    if not (math.isfinite(n) and n == int(n)):
        raise InvalidFieldError(f"{path}: grid size {n} is not an integer")
    grid = GridSpec(int(n), half_width)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    ncomp, rem = divmod(body.size, grid.n**3)
    if rem or ncomp not in (1, 3):
        raise InvalidFieldError(f"{path}: payload size does not match n={grid.n}")
    body = body.reshape((ncomp,) + grid.shape).astype(float)
    if ncomp == 1:
        return ScalarField(grid, body[0])
    return VectorField(grid, body)
