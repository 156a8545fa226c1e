"""Independent reference computations used by the tests.

Nothing here calls the library's spectral machinery: fields are evaluated
from closed forms, integrals use Gauss rules from numpy, and the pressure
convolution is done directly in real space on a zero-padded grid.
"""

import math

import numpy as np
from scipy.signal import fftconvolve


# -- closed forms ----------------------------------------------------------------

def taylor_green_pressure_gradient(x, y, z):
    """-grad p for p = (cos 2x + cos 2y)(cos 2z + 2) / 16, the Taylor-Green pressure."""
    return np.stack([
        np.sin(2 * x) * (np.cos(2 * z) + 2) / 8,
        np.sin(2 * y) * (np.cos(2 * z) + 2) / 8,
        (np.cos(2 * x) + np.cos(2 * y)) * np.sin(2 * z) / 8,
    ])


def taylor_green_q(x, y, z):
    """sum_jm d_j v_m d_m v_j from hand-differentiated Taylor-Green gradients."""
    sx, cx, sy, cy, sz, cz = np.sin(x), np.cos(x), np.sin(y), np.cos(y), np.sin(z), np.cos(z)
    J = np.zeros((3, 3) + x.shape)  # J[i, j] = d_j v_i
    J[0, 0] = cx * cy * cz
    J[0, 1] = -sx * sy * cz
    J[0, 2] = -sx * cy * sz
    J[1, 0] = sx * sy * cz
    J[1, 1] = -cx * cy * cz
    J[1, 2] = cx * sy * sz
    return sum(J[m, j] * J[j, m] for j in range(3) for m in range(3))


def gaussian_vortex_q(x, y, z, s):
    """q for v = curl(0, 0, exp(-|x|^2 / 2 s^2)), from analytic gradients."""
    a = 1.0 / s**2
    psi = np.exp(-(x * x + y * y + z * z) * a / 2)
    d = [-c * a * psi for c in (x, y, z)]
    J = np.zeros((3, 3) + x.shape)
    J[0, 0], J[0, 1], J[0, 2] = -a * y * d[0], -a * psi - a * y * d[1], -a * y * d[2]
    J[1, 0], J[1, 1], J[1, 2] = a * psi + a * x * d[0], a * x * d[1], a * x * d[2]
    return sum(J[m, j] * J[j, m] for j in range(3) for m in range(3))


def gaussian_heat_solution(x, y, z, sigma2, t_diff):
    """exp(-|x|^2/2 s^2) evolved by the heat equation for diffusivity*time t_diff."""
    s2 = sigma2 + 2 * t_diff
    return (sigma2 / s2) ** 1.5 * np.exp(-(x * x + y * y + z * z) / (2 * s2))


# -- real-space pressure convolution -----------------------------------------------

def _padded_grad_k3_conv(q, n, h):
    k = np.arange(-n, n) * h
    X, Y, Z = np.meshgrid(k, k, k, indexing="ij")
    R = np.sqrt(X * X + Y * Y + Z * Z)
    R[n, n, n] = 1.0
    out = []
    for C in (X, Y, Z):
        K = C / (4 * np.pi * R**3)
        K[n, n, n] = 0.0  # odd kernel: principal value of the self cell
        full = fftconvolve(q, K, mode="full") * h**3
        out.append(full[n:2 * n, n:2 * n, n:2 * n])
    return np.array(out)


def free_space_leray(q_of_xyz, n, L):
    """Direct convolution of q with grad K_3 on [-L, L)^3, zero-padded to 2n.

    Sampled at n and 2n points per axis and Richardson-extrapolated on the
    coarse grid (the singular-kernel sum converges at second order).
    """
    out = []
    for m in (n, 2 * n):
        h = 2 * L / m
        c = -L + h * np.arange(m)
        x, y, z = np.meshgrid(c, c, c, indexing="ij")
        out.append(_padded_grad_k3_conv(q_of_xyz(x, y, z), m, h))
    coarse, fine = out[0], out[1][:, ::2, ::2, ::2]
    return (4 * fine - coarse) / 3


# -- constants by Gauss rules ---------------------------------------------------------

def _legendre(f, a, b, deg=200):
    t, w = np.polynomial.legendre.leggauss(deg)
    x = 0.5 * (b - a) * t + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.sum(w * f(x)))


def heat_kernel_mass(diffusivity, deg=40):
    """int_0^1 int |G| dy dtau with the 3-D mass as a product of 1-D Gauss-Hermite masses."""
    u, w = np.polynomial.hermite.hermgauss(deg)

    def mass(tau):
        # int exp(-x^2 / 4 a tau) / sqrt(4 pi a tau) dx with x = sqrt(4 a tau) u
        one_d = np.sum(w) / math.sqrt(math.pi)
        return np.full_like(tau, one_d**3)

    return _legendre(mass, 0.0, 1.0, 20)


def laplace_gradient_constant():
    """(int_{B1} |K_3,i|, int_{|z|>1} |K_3,i|^2) with r = 1/t mapping outside the ball."""
    # |z_i| / (4 pi |z|^3) over the ball: radial part int_0^1 dr, angular 2 pi int |cos|
    ang1 = 2 * math.pi * 2 * _legendre(lambda c: c, 0.0, 1.0)
    inner = ang1 / (4 * math.pi) * _legendre(np.ones_like, 0.0, 1.0)
    ang2 = 2 * math.pi * _legendre(lambda c: c * c, -1.0, 1.0)
    # int_1^inf r^2 / (16 pi^2 r^4) dr = int_0^1 dt / (16 pi^2) with t = 1/r
    outer = ang2 * _legendre(lambda t: np.full_like(t, 1 / (16 * math.pi**2)), 0.0, 1.0)
    return inner, outer


def weight_l2():
    """L^2 norm of (1+|y|^2)^-1 on R^3 via r = tan(theta)."""
    sq = _legendre(lambda th: 4 * math.pi * np.sin(th) ** 2, 0.0, math.pi / 2)
    return math.sqrt(sq)


# -- per-mode time integrals ----------------------------------------------------------

def constant_source_mode(a, T=1.0):
    """int_0^T exp(-a (T - s)) ds for one Fourier mode with decay rate a."""
    return T if a == 0 else (1 - math.exp(-a * T)) / a


def frozen_source_picard_mode(u0, a, s, tau):
    """Mode with decay rate a, datum u0 and time-constant source s at local time tau."""
    return u0 * math.exp(-a * tau) + s * constant_source_mode(a, tau)
