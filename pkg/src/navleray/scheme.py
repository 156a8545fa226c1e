"""Picard sub-iterations, step-size selection and the global time loop.

Each time step l works in rescaled local time tau in [l-1, l] with physical
step rho_l.  The iterate v^k is obtained from v^(k-1) through the Duhamel
representation: heat-propagated data plus the time integral of the
heat-propagated source rho * (convection + Leray term) of v^(k-1).
"""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import control as ctl
from .errors import (
    BlowUpError,
    DivergenceError,
    GridMismatchError,
    NoContractionError,
    NonstarInnerDivergenceError,
    SchemeError,
)
from .fields import (
    GridSpec,
    LocalTrajectory,
    VectorField,
    cm_sup_norm,
    divergence,
    hat_sobolev_sq,
    irfft,
    l2_norm,
    rfft,
    sobolev_norm,
    spectral,
)
from .kernels import (
    HeatParams,
    SchemeConstants,
    compute_constants,
    duhamel_nodes,
    nonlinear_hats,
)

log = logging.getLogger(__name__)

STEP_POLICIES = ("theorem", "fixed", "adaptive", "foresight")


@dataclass
class SchemeConfig:
    grid: GridSpec = field(default_factory=lambda: GridSpec(32))
    nu: float = 1.0
    m: int = 2
    # None: feed ||v^r(l-1)||^2_{H^m} to the step formula; else use C + (l-1) C
    c_bound: float | None = None
    c_n: int = 16
    max_subiter: int = 40
    tol: float = 1e-9
    M: int = 16
    step_policy: str = "theorem"
    rho: float | None = None
    control: ctl.ControlMode = field(default_factory=ctl.ControlMode)
    dealias: bool = True
    c_kp: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.m < 2:
            raise ValueError("Sobolev order m must be >= 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.max_subiter < 2:
            raise ValueError("max_subiter must be >= 2")
        if self.step_policy not in STEP_POLICIES:
            raise ValueError(f"step_policy must be one of {STEP_POLICIES}")
        if self.step_policy in ("fixed", "adaptive") and not (self.rho and self.rho > 0):
            raise ValueError(f"step_policy {self.step_policy} needs rho > 0")
        if self.step_policy == "foresight" and self.control.kind != "foresight":
            raise ValueError("step_policy foresight needs a foresight control mode")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"] = {"n": self.grid.n, "half_width": self.grid.half_width}
        return d


@dataclass
class SubIterationState:
    k: int
    traj_prev: LocalTrajectory
    traj_curr: LocalTrajectory
    delta_norm: float


@dataclass
class LocalSolution:
    trajectory: LocalTrajectory
    ratios: list
    n_subiter: int
    squared_ratios: list = field(default_factory=list)
    delta_norms: list = field(default_factory=list)
    first_iterate: LocalTrajectory | None = None
    end_increments: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    status: str = "converged"
    rho: float = float("nan")

    @property
    def first_increment_norm(self) -> float:
        return self.delta_norms[0] if self.delta_norms else 0.0


@dataclass
class StepReport:
    l: int
    rho: float
    ratios: list
    squared_ratios: list
    n_subiter: int
    status: str
    first_increment_norm: float
    c_prev: float
    hm_norm_end: float
    cm_norm_end: float
    control_hm_norm: float
    control_cm_norm: float
    velocity_sq_norm: float
    leray_sup: float
    leray_sup_controlled: float
    div_norm: float
    elapsed_time: float

    @property
    def control_norm(self) -> float:
        return max(self.control_hm_norm, self.control_cm_norm)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["control_norm"] = self.control_norm
        return d


# -- sub-iterations -------------------------------------------------------------

def _trajectory_norm(hats: np.ndarray, grid: GridSpec, m: int) -> float:
    """sup over nodes, max over components, of the H^m norm."""
    return float(np.sqrt(hat_sobolev_sq(hats, grid, m).max()))


def _heat_of_data(data_hat: np.ndarray, grid: GridSpec, diffusivity: float, M: int) -> np.ndarray:
    k2 = spectral(grid).k2
    return np.stack([data_hat * np.exp(-diffusivity * (j / M) * k2) for j in range(M + 1)])


def _picard_hat(prev_hat, heat_data, grid, cfg, rho):
    """One star-scheme sub-iteration on spectra of shape (M+1, 3, ...)."""
    M = prev_hat.shape[0] - 1
    src = np.empty_like(prev_hat)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(M + 1):
            conv, ler = nonlinear_hats(prev_hat[j], grid, cfg.dealias)
            src[j] = rho * (conv + ler)
            if not np.all(np.isfinite(src[j])):
                raise BlowUpError("non-finite source in Picard sub-iteration", node=j)
        out = heat_data + duhamel_nodes(src, grid, rho * cfg.nu, 1.0 / M)
    return out


def _to_trajectory(hats, data: VectorField, l: int) -> LocalTrajectory:
    phys = irfft(hats, data.grid.n)
    phys[0] = data.data
    if not np.all(np.isfinite(phys)):
        bad = int(np.flatnonzero(~np.isfinite(phys).reshape(phys.shape[0], -1).all(axis=1))[0])
        raise BlowUpError("non-finite trajectory", node=bad)
    return LocalTrajectory(data.grid, phys, l)


def _check_same(traj: LocalTrajectory, data: VectorField):
    if traj.grid != data.grid:
        raise GridMismatchError(f"trajectory grid {traj.grid} vs data grid {data.grid}")


def picard_substep(traj_prev: LocalTrajectory, data: VectorField, cfg: SchemeConfig,
                   rho: float) -> LocalTrajectory:
    """v^k from v^(k-1): heat-propagated data plus the Duhamel source integral."""
    _check_same(traj_prev, data)
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    grid = data.grid
    heat = _heat_of_data(rfft(data.data), grid, rho * cfg.nu, traj_prev.M)
    out = _picard_hat(rfft(traj_prev.data), heat, grid, cfg, rho)
    return _to_trajectory(out, data, traj_prev.l)


def _iterate(data: VectorField, cfg: SchemeConfig, rho: float, l: int, step_fn,
             keep_increments: bool, keep_trajectories: bool = False) -> LocalSolution:
    """Shared driver for the star and non-star sub-iterations."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    grid, M = data.grid, cfg.M
    data_hat = rfft(data.data)
    heat = _heat_of_data(data_hat, grid, rho * cfg.nu, M)
    prev = np.broadcast_to(data_hat, (M + 1,) + data_hat.shape).copy()
    threshold = cfg.tol * (1.0 + math.sqrt(hat_sobolev_sq(data_hat, grid, cfg.m).max()))
    ratios, sq_ratios, norms, increments, traj_increments = [], [], [], [], []
    first = None
    above = 0
    status = "max_subiter"
    for k in range(1, cfg.max_subiter + 1):
        cur = step_fn(prev, heat)
        delta = cur - prev
        dn = _trajectory_norm(delta, grid, cfg.m)
        if not math.isfinite(dn):
            raise BlowUpError(f"increment norm not finite at sub-iteration {k}")
        norms.append(dn)
        if k == 1:
            first = cur
        if keep_increments:
            increments.append(VectorField(grid, irfft(delta[-1], grid.n)))
        if keep_trajectories:
            full = irfft(delta, grid.n)
            full[0] = 0.0
            traj_increments.append(LocalTrajectory(grid, full, l))
        if k >= 2 and norms[-2] > 0:
            ratio = dn / norms[-2]
            ratios.append(ratio)
            sq_ratios.append(ratio**2)
            above = above + 1 if ratio > 1 else 0
            if above >= 2:
                raise DivergenceError(
                    f"contraction ratio above 1 twice in a row at k={k} "
                    f"(last {ratio:.3g}); reduce rho")
        prev = cur
        if dn <= threshold:
            status = "converged"
            break
    else:
        warnings.warn(f"sub-iteration cap {cfg.max_subiter} reached before tolerance",
                      RuntimeWarning, stacklevel=3)
    return LocalSolution(
        trajectory=_to_trajectory(prev, data, l),
        ratios=ratios,
        n_subiter=k,
        squared_ratios=sq_ratios,
        delta_norms=norms,
        first_iterate=_to_trajectory(first, data, l),
        end_increments=increments,
        increments=traj_increments,
        status=status,
        rho=rho,
    )


def local_solve(data: VectorField, cfg: SchemeConfig, rho: float, *, l: int = 1,
                keep_increments: bool = False,
                keep_trajectories: bool = False) -> LocalSolution:
    """Iterate the star scheme from the time-constant data until the
    H^m trajectory norm of the increment drops below tol * (1 + ||data||).

    `keep_increments` stores each increment at tau = l (`end_increments`);
    `keep_trajectories` stores every increment at all nodes (`increments`).
    """
    grid = data.grid

    def step(prev, heat):
        return _picard_hat(prev, heat, grid, cfg, rho)

    return _iterate(data, cfg, rho, l, step, keep_increments, keep_trajectories)


def _nonstar_hat(prev_hat, heat, grid, cfg, rho):
    """Solve the linear problem with advection frozen at v^(k-1) by an
    inner fixed point on the same Duhamel representation."""
    M = prev_hat.shape[0] - 1
    n = grid.n
    adv = irfft(prev_hat, n)
    leray = np.empty_like(prev_hat)
    for j in range(M + 1):
        leray[j] = nonlinear_hats(prev_hat[j], grid, cfg.dealias)[1]
    data_norm = math.sqrt(hat_sobolev_sq(heat[0], grid, cfg.m).max())
    inner_tol = cfg.tol / 10 * (1.0 + data_norm)
    w = prev_hat
    src = np.empty_like(prev_hat)
    for _ in range(20):
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(M + 1):
                conv = nonlinear_hats(w[j], grid, cfg.dealias, conv_from=adv[j])[0]
                src[j] = rho * (conv + leray[j])
            new = heat + duhamel_nodes(src, grid, rho * cfg.nu, 1.0 / M)
        d = _trajectory_norm(new - w, grid, cfg.m)
        if not math.isfinite(d):
            raise NonstarInnerDivergenceError("inner iterate became non-finite")
        w = new
        if d <= inner_tol:
            return w
    raise NonstarInnerDivergenceError(f"inner iteration did not reach {inner_tol:.3g} in 20 steps")


def nonstar_substep(traj_prev: LocalTrajectory, data: VectorField, cfg: SchemeConfig,
                    rho: float) -> LocalTrajectory:
    """Sub-iteration of the reference scheme, implicit in the advected field."""
    _check_same(traj_prev, data)
    grid = data.grid
    heat = _heat_of_data(rfft(data.data), grid, rho * cfg.nu, traj_prev.M)
    out = _nonstar_hat(rfft(traj_prev.data), heat, grid, cfg, rho)
    return _to_trajectory(out, data, traj_prev.l)


def nonstar_local_solve(data: VectorField, cfg: SchemeConfig, rho: float, *,
                        l: int = 1) -> LocalSolution:
    grid = data.grid

    def step(prev, heat):
        return _nonstar_hat(prev, heat, grid, cfg, rho)

    return _iterate(data, cfg, rho, l, step, False)


# -- step sizes -----------------------------------------------------------------

def step_size_theorem(c_prev: float, k: SchemeConstants) -> float:
    if c_prev < 0:
        raise ValueError(f"C^(l-1) must be non-negative, got {c_prev}")
    return 1.0 / (k.c_n * (c_prev + 1.0) * k.c_g * k.c_k * k.c_s)


def step_size_adaptive(data: VectorField, cfg: SchemeConfig, rho0: float) -> float:
    """Halve rho until the first measured contraction ratio is at most 1/2."""
    grid, M = data.grid, cfg.M
    data_hat = rfft(data.data)
    const = np.broadcast_to(data_hat, (M + 1,) + data_hat.shape).copy()
    rho = rho0
    for _ in range(21):
        heat = _heat_of_data(data_hat, grid, rho * cfg.nu, M)
        try:
            t1 = _picard_hat(const, heat, grid, cfg, rho)
            d1 = _trajectory_norm(t1 - const, grid, cfg.m)
            if d1 == 0.0:
                return rho
            t2 = _picard_hat(t1, heat, grid, cfg, rho)
            d2 = _trajectory_norm(t2 - t1, grid, cfg.m)
        except BlowUpError:
            d1, d2 = 1.0, math.inf
        if math.isfinite(d2) and d2 <= 0.5 * d1:
            return rho
        rho /= 2
    raise NoContractionError(f"no contraction after 20 halvings of rho0={rho0}")


# -- global loop ----------------------------------------------------------------

def _control_increment(mode: ctl.ControlMode, sol: LocalSolution, data: VectorField,
                       state: ctl.ControlState, p: HeatParams) -> LocalTrajectory:
    traj = sol.trajectory
    if mode.kind == "none":
        return LocalTrajectory(traj.grid, np.zeros_like(traj.data), traj.l)
    if mode.kind == "simple":
        return ctl.control_simple(data, mode.C, p, traj.nodes)
    if mode.kind == "neg_first_increment":
        return ctl.control_neg_first_increment(sol.first_iterate, data)
    if mode.kind == "consumption":
        return ctl.control_consumption(data, state.r, mode.C, p, sol.first_iterate, data)
    return ctl.control_foresight(traj, state.r, mode.C, p)


def select_rho(cfg: SchemeConfig, c_prev: float, consts: SchemeConstants,
               data: VectorField) -> float:
    if cfg.step_policy == "theorem":
        return step_size_theorem(c_prev, consts)
    if cfg.step_policy == "fixed":
        return cfg.rho
    if cfg.step_policy == "adaptive":
        return step_size_adaptive(data, cfg, cfg.rho)
    return ctl.foresight_step_size(cfg.control.eps, cfg.control.C, cfg.nu, cfg.c_kp)


def run_global(h: VectorField, n_steps: int, cfg: SchemeConfig, *, on_step=None):
    """Advance the controlled velocity for n_steps unit local-time steps.

    `on_step(l, v_r, r)` is called after every step (checkpointing hook) and
    may return a reference that is stored in the ledger.
    """
    from .diagnostics import RunLedger, leray_sup

    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if h.grid != cfg.grid:
        raise GridMismatchError(f"data grid {h.grid} differs from config grid {cfg.grid}")
    h1 = sobolev_norm(h, 1)
    div0 = l2_norm(divergence(h))
    if div0 > 1e-8 * h1:
        raise ValueError(f"initial data not divergence-free: |div h| = {div0:.3g}")
    consts = compute_constants(HeatParams(cfg.nu, 1.0), cfg.grid, cfg.c_n)
    state = ctl.init_control(h, cfg.control)
    ledger = RunLedger(config=cfg.to_dict(), constants=consts.as_dict())
    vr = h
    elapsed = 0.0
    for l in range(1, n_steps + 1):
        if cfg.c_bound is None:
            c_prev = sobolev_norm(vr, cfg.m) ** 2
        else:
            c_prev = l * cfg.c_bound
        try:
            rho = select_rho(cfg, c_prev, consts, vr)
            sol = local_solve(vr, cfg, rho, l=l)
        except SchemeError as exc:
            exc.step = l
            exc.args = (f"step {l}: {exc.args[0]}",)
            raise
        p = HeatParams(cfg.nu, rho)
        incr = _control_increment(cfg.control, sol, vr, state, p)
        controlled, state = ctl.apply_control(sol.trajectory, incr, state, cfg.m)
        vr = controlled.state(controlled.M)
        v = vr - state.r
        elapsed += rho
        report = StepReport(
            l=l,
            rho=rho,
            ratios=list(sol.ratios),
            squared_ratios=list(sol.squared_ratios),
            n_subiter=sol.n_subiter,
            status=sol.status,
            first_increment_norm=sol.first_increment_norm,
            c_prev=c_prev,
            hm_norm_end=sobolev_norm(vr, cfg.m),
            cm_norm_end=cm_sup_norm(vr, cfg.m),
            control_hm_norm=sobolev_norm(state.r, cfg.m),
            control_cm_norm=cm_sup_norm(state.r, cfg.m),
            velocity_sq_norm=sobolev_norm(v, cfg.m) ** 2,
            leray_sup=leray_sup(v, cfg.dealias),
            leray_sup_controlled=leray_sup(vr, cfg.dealias),
            div_norm=l2_norm(divergence(vr)),
            elapsed_time=elapsed,
        )
        ledger.reports.append(report)
        log.info("step %d rho=%.3g subiter=%d |v^r|=%.6g", l, rho, sol.n_subiter,
                 report.hm_norm_end)
        if on_step is not None:
            ref = on_step(l, vr, state.r)
            if ref is not None:
                ledger.checkpoints[l] = ref
    ledger.final_velocity = vr
    ledger.final_control = state.r
    return ledger
