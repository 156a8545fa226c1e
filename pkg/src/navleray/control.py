"""Control-function increments that steer the controlled velocity.

Every increment is returned as a LocalTrajectory that vanishes at the
first node of the step; the global loop adds it to the uncontrolled
solution (computed from controlled data) and to the running control r.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import GridSpec, LocalTrajectory, VectorField, hm_cm_norm, irfft, rfft
from .kernels import HeatParams, duhamel_nodes

CONTROL_KINDS = ("none", "simple", "neg_first_increment", "consumption", "foresight")


@dataclass(frozen=True)
class ControlMode:
    kind: str = "none"
    C: float | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise ValueError(f"unknown control mode {self.kind!r}; expected one of {CONTROL_KINDS}")
        if self.kind in ("simple", "consumption", "foresight"):
            if self.C is None or not self.C > 0:
                raise ValueError(f"control mode {self.kind} needs C > 0")
        if self.kind == "foresight" and (self.eps is None or not self.eps > 0):
            raise ValueError("foresight control needs eps > 0")


@dataclass
class ControlState:
    r: VectorField
    r_norm_history: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class SignPartition:
    """Boolean masks (3, n, n, n), one set of five per velocity component."""

    v_pos_r_pos: np.ndarray
    v_pos_r_neg: np.ndarray
    v_neg_r_pos: np.ndarray
    v_neg_r_neg: np.ndarray
    zero: np.ndarray

    @property
    def equal_sign(self) -> np.ndarray:
        return self.v_pos_r_pos | self.v_neg_r_neg

    @property
    def different_sign(self) -> np.ndarray:
        return self.v_pos_r_neg | self.v_neg_r_pos


def _check_C(C):
    if C is None or not C > 0:
        raise ValueError(f"control scale C must be positive, got {C}")


def _const_source_trajectory(source: np.ndarray, grid: GridSpec, p: HeatParams,
                             nodes: np.ndarray) -> LocalTrajectory:
    """Trapezoid Duhamel integrals of a time-constant source at each node."""
    nodes = np.asarray(nodes, dtype=float)
    M = len(nodes) - 1
    h = (nodes[-1] - nodes[0]) / M
    hat = rfft(source)
    src = np.broadcast_to(hat, (M + 1,) + hat.shape)
    out = irfft(duhamel_nodes(src, grid, p.diffusivity, h), grid.n)
    out[0] = 0.0
    return LocalTrajectory(grid, out, int(round(nodes[0])) + 1)


def control_simple(v_prev: VectorField, C: float, p: HeatParams, nodes) -> LocalTrajectory:
    """Heat-smoothed integral of the damping source -v_prev / C."""
    _check_C(C)
    return _const_source_trajectory(-(v_prev.data / C), v_prev.grid, p, nodes)


def control_neg_first_increment(traj_k1: LocalTrajectory, data: VectorField) -> LocalTrajectory:
    """Negated first Picard increment, node by node."""
    return LocalTrajectory(traj_k1.grid, -(traj_k1.data - data.data[None]), traj_k1.l)


def control_consumption(v_prev: VectorField, r_prev: VectorField, C: float, p: HeatParams,
                        traj_k1: LocalTrajectory, data: VectorField) -> LocalTrajectory:
    """Negated first increment plus the consumption source -v/C - r/C^2."""
    _check_C(C)
    first = control_neg_first_increment(traj_k1, data)
    source = -(v_prev.data / C) - r_prev.data / C**2
    damp = _const_source_trajectory(source, v_prev.grid, p, traj_k1.nodes)
    return LocalTrajectory(first.grid, first.data + damp.data, first.l)


def sign_partition(v_fore: VectorField, r_prev: VectorField) -> SignPartition:
    """Classify grid points by the signs of v at tau = l and r at tau = l-1.

    Points where r_prev vanishes but v_fore does not join the equal-sign set
    matching the sign of v_fore.
    """
    v, r = v_fore.data, r_prev.data
    zero = v == 0.0
    vp, vn = v > 0.0, v < 0.0
    rz = r == 0.0
    return SignPartition(
        v_pos_r_pos=vp & ((r > 0.0) | rz),
        v_pos_r_neg=vp & (r < 0.0),
        v_neg_r_pos=vn & (r > 0.0),
        v_neg_r_neg=vn & ((r < 0.0) | rz),
        zero=zero,
    )


def _dilate(mask: np.ndarray) -> np.ndarray:
    """One-cell periodic dilation over face neighbours of the last three axes."""
    out = mask.copy()
    for ax in (-3, -2, -1):
        out |= np.roll(mask, 1, axis=ax) | np.roll(mask, -1, axis=ax)
    return out


def foresight_source(v_fore: VectorField, r_prev: VectorField, C: float) -> np.ndarray:
    part = sign_partition(v_fore, r_prev)
    v, r = v_fore.data, r_prev.data
    equal = _dilate(part.equal_sign)
    return np.where(equal, v / C + r / C**2, 2.0 * v + r / C**2)


def control_foresight(local_uncontrolled: LocalTrajectory, r_prev: VectorField, C: float,
                      p: HeatParams) -> LocalTrajectory:
    """Increment built from a look at the uncontrolled solution at tau = l."""
    _check_C(C)
    v_fore = local_uncontrolled.state(local_uncontrolled.M)
    g = foresight_source(v_fore, r_prev, C)
    return _const_source_trajectory(-g, v_fore.grid, p, local_uncontrolled.nodes)


def foresight_step_size(eps: float, C: float, nu: float, c_kp: float = 1.0, n: int = 3) -> float:
    """Step size that bounds the one-step velocity change by eps."""
    return eps / (nu * n * (C + 1) + n * (C + 1) ** 2 + n**2 * c_kp * (C + 1) ** 2)


def apply_control(traj_uncontrolled: LocalTrajectory, incr: LocalTrajectory,
                  state: ControlState, m: int = 2) -> tuple[LocalTrajectory, ControlState]:
    controlled = LocalTrajectory(traj_uncontrolled.grid, traj_uncontrolled.data + incr.data,
                                 traj_uncontrolled.l)
    r_new = VectorField(state.r.grid, state.r.data + incr.data[-1])
    history = list(state.r_norm_history) + [hm_cm_norm(r_new, m)]
    return controlled, ControlState(r_new, history)


def init_control(h: VectorField, mode: ControlMode) -> ControlState:
    if mode.kind in ("none", "neg_first_increment"):
        return ControlState(VectorField.zeros(h.grid))
    return ControlState(VectorField(h.grid, h.data / mode.C))
