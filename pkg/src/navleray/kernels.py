"""Heat kernel propagation, Duhamel integrals and the nonlinear source terms.

The heat kernel of d/dtau - rho*nu*Laplacian acts diagonally in Fourier
space.  The pressure (Leray) term, convolution of q with the gradient of
the Laplacian fundamental solution, becomes the multiplier -i xi / |xi|^2
on the periodic box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import InsufficientNodesError
from .fields import (
    GridSpec,
    ScalarField,
    VectorField,
    _check_finite,
    _unpack,
    irfft,
    rfft,
    spectral,
)


@dataclass(frozen=True)
class HeatParams:
    nu: float
    rho: float

    def __post_init__(self):
        for name in ("nu", "rho"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val}")

    @property
    def diffusivity(self) -> float:
        """rho * nu, the diffusion coefficient in local time."""
        return self.rho * self.nu


@dataclass(frozen=True)
class SchemeConstants:
    c_g: float
    c_k: float
    c_s: float
    c_n: int
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if min(self.c_g, self.c_k, self.c_s) < 1:
            raise ValueError("C_G, C_K and C_s are clamped to be >= 1")
        if int(self.c_n) != self.c_n or self.c_n < 1:
            raise ValueError(f"c_n must be a positive integer, got {self.c_n}")

    def as_dict(self) -> dict:
        return {"c_g": self.c_g, "c_k": self.c_k, "c_s": self.c_s,
                "c_n": int(self.c_n), "raw": dict(self.raw)}


def heat_multiplier(grid: GridSpec, diffusivity: float, dt: float) -> np.ndarray:
    return np.exp(-diffusivity * dt * spectral(grid).k2)


def heat_propagate(f, p: HeatParams, dt: float):
    """Convolve with the local heat kernel over a local-time increment dt."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    if dt == 0:
        return f
    grid, a = _unpack(f)
    _check_finite(a)
    out = irfft(rfft(a) * heat_multiplier(grid, p.diffusivity, dt), grid.n)
    if isinstance(f, ScalarField):
        return ScalarField(grid, out[0])
    return VectorField(grid, out)


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def duhamel_step(sources: Sequence, times: Sequence[float], p: HeatParams, tau: float):
    """Composite-trapezoid value of the integral of G(tau - s) * S(s) ds.

    `sources[j]` is the source at local time `times[j]`; the integral runs
    over [times[0], times[-1]] and every source is propagated to `tau`.
    """
    if len(sources) < 2:
        raise InsufficientNodesError("Duhamel quadrature needs at least two source nodes")
    t = np.asarray(times, dtype=float)
    if len(t) != len(sources):
        raise ValueError("one time per source node is required")
    if np.any(np.diff(t) < 0) or t[-1] > tau + 1e-12:
        raise ValueError("source times must be increasing and not exceed tau")
    grid, _ = _unpack(sources[0])
    w = trapezoid_weights(t)
    acc = None
    for s, wj, tj in zip(sources, w, t):
        _, a = _unpack(s)
        term = wj * rfft(a) * heat_multiplier(grid, p.diffusivity, max(tau - tj, 0.0))
        acc = term if acc is None else acc + term
    out = irfft(acc, grid.n)
    if isinstance(sources[0], ScalarField):
        return ScalarField(grid, out[0])
    return VectorField(grid, out)


def duhamel_nodes(source_hats: np.ndarray, grid: GridSpec, diffusivity: float,
                  h: float) -> np.ndarray:
    """Trapezoid Duhamel integrals at every node of an equispaced trajectory.

    Uses I_j = E I_{j-1} + h/2 (E S_{j-1} + S_j) with E the one-node heat
    multiplier; algebraically identical to `duhamel_step` node by node.
    """
    E = heat_multiplier(grid, diffusivity, h)
    out = np.zeros_like(source_hats)
    for j in range(1, source_hats.shape[0]):
        out[j] = E * (out[j - 1] + 0.5 * h * source_hats[j - 1]) + 0.5 * h * source_hats[j]
    return out


def nonlinear_hats(v_hat: np.ndarray, grid: GridSpec, dealias: bool = True,
                   conv_from: np.ndarray | None = None):
    """Spectra of the convection term and the Leray term of one field.

    v_hat has shape (3, n, n, n//2+1).  Convection is -(w . grad) v with
    w = v unless `conv_from` (physical advecting velocity) is given.
    """
    sp = spectral(grid)
    n = grid.n
    u = irfft(v_hat, n) if conv_from is None else conv_from
    grads = [irfft(v_hat * sp.power(j, 1), n) for j in range(3)]  # grads[j][i] = d_j v_i
    conv = -(u[0] * grads[0] + u[1] * grads[1] + u[2] * grads[2])
    q = sum(grads[j][m] * grads[m][j] for j in range(3) for m in range(3))
    conv_hat = rfft(conv)
    q_hat = rfft(q)
    if dealias:
        conv_hat *= sp.dealias
        q_hat *= sp.dealias
    leray_hat = np.stack([-1j * sp.k_odd[i] * sp.inv_k2 * q_hat for i in range(3)])
    return conv_hat, leray_hat


def leray_hat_from(v_hat: np.ndarray, grid: GridSpec, dealias: bool = True) -> np.ndarray:
    return nonlinear_hats(v_hat, grid, dealias)[1]


def leray_source(v: VectorField, dealias: bool = True) -> VectorField:
    """Pressure term: convolution of sum_jm d_j v_m d_m v_j with grad K_3."""
    _, leray = nonlinear_hats(rfft(v.data), v.grid, dealias)
    return VectorField(v.grid, irfft(leray, v.grid.n))


def convection_source(v: VectorField, dealias: bool = True) -> VectorField:
    """Component i is -sum_j v_j d_j v_i (the rho factor is the caller's)."""
    conv, _ = nonlinear_hats(rfft(v.data), v.grid, dealias)
    return VectorField(v.grid, irfft(conv, v.grid.n))


# -- a priori constants -------------------------------------------------------

def _heat_mass(diffusivity: float) -> float:
    """int_0^1 int_R3 |G(tau, y)| dy dtau by nested quadrature."""

    def spatial(tau):
        # r = sqrt(4 a tau) s turns the Gaussian into a fixed profile
        width = math.sqrt(4 * diffusivity * tau)
        norm = (4 * math.pi * diffusivity * tau) ** -1.5

        def radial(s):
            r = width * s
            return 4 * math.pi * r * r * norm * math.exp(-s * s) * width

        return integrate.quad(radial, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]

    return integrate.quad(spatial, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)[0]


def _laplace_gradient_norms() -> tuple[float, float]:
    """L^1 on the unit ball and L^2 outside it of K_{3,i}(z) = z_i / (4 pi |z|^3)."""
    # angular parts with the polar axis along z_i; the azimuth contributes 2 pi
    ang1 = 2 * math.pi * integrate.quad(lambda t: abs(math.cos(t)) * math.sin(t), 0, math.pi,
                                        points=[math.pi / 2])[0]
    ang2 = 2 * math.pi * integrate.quad(lambda t: math.cos(t) ** 2 * math.sin(t), 0, math.pi)[0]
    inner = ang1 * integrate.quad(lambda r: r * r / (4 * math.pi * r * r), 0.0, 1.0)[0]
    outer = ang2 * integrate.quad(lambda r: r * r / (16 * math.pi**2 * r**4), 1.0, np.inf)[0]
    return inner, outer


def _weight_l2() -> float:
    """L^2 norm over R^3 of (1 + |y|^2)^-1."""
    sq = integrate.quad(lambda r: 4 * math.pi * r * r / (1 + r * r) ** 2, 0.0, np.inf,
                        epsabs=1e-13, epsrel=1e-12)[0]
    return math.sqrt(sq)


def compute_constants(p: HeatParams, grid: GridSpec | None = None, c_n: int = 16) -> SchemeConstants:
    """C_G, C_K, C_s and c(3) for the step-size bound.

    The grid is accepted for bookkeeping only: the constants are free-space
    quantities and do not depend on the truncation.
    """
    g_raw = _heat_mass(p.diffusivity)
    inner, outer = _laplace_gradient_norms()
    k_raw = inner + math.sqrt(outer)
    s_raw = _weight_l2()
    raw = {"c_g": g_raw, "c_k": k_raw, "c_k_ball_l1": inner,
           "c_k_outer_l2": math.sqrt(outer), "c_s": s_raw}
    if grid is not None:
        raw["half_width"] = grid.half_width
    return SchemeConstants(max(g_raw, 1.0), max(k_raw, 1.0), max(s_raw, 1.0), int(c_n), raw)
