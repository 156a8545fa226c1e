import math

import numpy as np
import pytest

import oracles
from navleray.control import ControlMode
from navleray.errors import (
    DivergenceError,
    GridMismatchError,
    InvalidFieldError,
    NoContractionError,
)
from navleray.fields import (
    GridSpec,
    LocalTrajectory,
    VectorField,
    c0_traj_norm,
    divergence,
    hm_cm_norm,
    l2_norm,
    sobolev_norm,
)
from navleray.kernels import HeatParams, SchemeConstants, compute_constants
from navleray.presets import abc_flow, gaussian_vortex, taylor_green
from navleray.scheme import (
    SchemeConfig,
    local_solve,
    nonstar_local_solve,
    nonstar_substep,
    picard_substep,
    run_global,
    step_size_adaptive,
    step_size_theorem,
)

G16 = GridSpec(16)  # resolves Taylor-Green and its quadratic products exactly
G32 = GridSpec(32)
CONSTS = compute_constants(HeatParams(1.0, 1.0), None, 16)


def theorem_rho(v, m=2):
    return step_size_theorem(sobolev_norm(v, m) ** 2, CONSTS)


class TestSchemeConfig:
    @pytest.mark.parametrize("kw", [dict(nu=0.0), dict(m=1), dict(tol=0.0), dict(M=1),
                                    dict(max_subiter=1), dict(step_policy="bogus"),
                                    dict(step_policy="fixed"),
                                    dict(step_policy="foresight")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SchemeConfig(**kw)

    def test_to_dict_is_plain(self):
        d = SchemeConfig(grid=G16).to_dict()
        assert d["grid"] == {"n": 16, "half_width": math.pi}
        assert d["control"]["kind"] == "none"


class TestPicardSubstep:
    def test_zero(self):
        cfg = SchemeConfig(grid=G16, M=4)
        z = VectorField.zeros(G16)
        out = picard_substep(LocalTrajectory.constant(z, 4), z, cfg, 0.1)
        assert not np.any(out.data)

    def test_constant(self):
        cfg = SchemeConfig(grid=G16, M=4)
        c = VectorField(G16, np.ones((3,) + G16.shape) * np.array([1.0, -2.0, 0.5])[:, None, None, None])
        out = picard_substep(LocalTrajectory.constant(c, 4), c, cfg, 0.1)
        assert np.abs(out.data - c.data[None]).max() <= 1e-14

    def test_grid_mismatch(self):
        cfg = SchemeConfig(grid=G16, M=4)
        with pytest.raises(GridMismatchError):
            picard_substep(LocalTrajectory.constant(VectorField.zeros(GridSpec(8)), 4),
                           VectorField.zeros(G16), cfg, 0.1)

    def test_first_substep_matches_frozen_source_oracle(self):
        # per-mode exact solution with the time-constant source rho (conv + Leray)
        # of the data, built from closed-form Taylor-Green derivatives
        rho = 0.5
        x, y, z = G16.mesh()
        v = taylor_green(G16)
        J = np.zeros((3, 3) + x.shape)
        J[0] = [np.cos(x) * np.cos(y) * np.cos(z), -np.sin(x) * np.sin(y) * np.cos(z),
                -np.sin(x) * np.cos(y) * np.sin(z)]
        J[1] = [np.sin(x) * np.sin(y) * np.cos(z), -np.cos(x) * np.cos(y) * np.cos(z),
                np.cos(x) * np.sin(y) * np.sin(z)]
        conv = -np.einsum("jxyz,ijxyz->ixyz", v.data, J)
        src = rho * (conv + oracles.taylor_green_pressure_gradient(x, y, z))
        k = np.fft.fftfreq(16, 1 / 16)
        k2 = k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2
        a = rho * k2
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = np.where(a == 0, 1.0, -np.expm1(-a) / a)
        exact = math.exp(-3 * rho) * v.data + np.fft.ifftn(
            np.fft.fftn(src, axes=(1, 2, 3)) * gain, axes=(1, 2, 3)).real
        errs = []
        for M in (8, 16):
            cfg = SchemeConfig(grid=G16, M=M, dealias=False)
            out = picard_substep(LocalTrajectory.constant(v, M), v, cfg, rho)
            assert out.data[0].tobytes() == v.data.tobytes()
            errs.append(np.abs(out.data[-1] - exact).max())
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
        assert errs[1] <= 1e-3 * np.abs(exact).max()


class TestLocalSolve:
    def test_zero_data_converges_immediately(self):
        sol = local_solve(VectorField.zeros(G16), SchemeConfig(grid=G16), 0.1)
        assert sol.n_subiter == 1
        assert sol.ratios == []
        assert not np.any(sol.trajectory.data)

    @pytest.mark.parametrize("preset", [taylor_green, abc_flow])
    def test_theorem_step_contracts(self, preset):
        v = preset(G32)
        sol = local_solve(v, SchemeConfig(grid=G32), theorem_rho(v))
        assert sol.status == "converged"
        assert all(q <= 0.5 for q in sol.ratios)
        assert all(q2 <= 0.5 for q2 in sol.squared_ratios)

    def test_gaussian_vortex_theorem_step_contracts(self):
        g = GridSpec(32, 8.0)
        v = gaussian_vortex(g)
        sol = local_solve(v, SchemeConfig(grid=g), theorem_rho(v))
        assert sol.ratios and all(q <= 0.5 for q in sol.ratios)

    def test_initial_node_is_data(self):
        v = taylor_green(G16)
        sol = local_solve(v, SchemeConfig(grid=G16), 0.05)
        assert sol.trajectory.data[0].tobytes() == v.data.tobytes()
        assert sol.first_iterate.data[0].tobytes() == v.data.tobytes()

    def test_divergence_preserved_at_every_node(self):
        v = taylor_green(G32)
        sol = local_solve(v, SchemeConfig(grid=G32), 0.05)
        bound = 1e-6 * sobolev_norm(v, 2) ** 2
        assert max(l2_norm(divergence(s)) for s in sol.trajectory.states) <= bound

    def test_large_step_raises_divergence_error(self):
        # at 32^3 the ratios stay below 1 up to rho of order 50 for this data;
        # 1e7 times the theorem value (rho ~ 640) is firmly unstable
        v = taylor_green(G32)
        with pytest.raises(DivergenceError):
            local_solve(v, SchemeConfig(grid=G32), theorem_rho(v) * 1e7)

    def test_cap_warns_and_returns(self):
        v = taylor_green(G16)
        with pytest.warns(RuntimeWarning):
            sol = local_solve(v, SchemeConfig(grid=G16, max_subiter=2), 0.2)
        assert sol.status == "max_subiter"
        assert sol.n_subiter == 2

    def test_refinement_is_second_order(self):
        v = taylor_green(G16)
        ends = {M: local_solve(v, SchemeConfig(grid=G16, M=M, tol=1e-13), 0.2).trajectory
                for M in (8, 16, 32)}
        d1 = sobolev_norm(ends[8].state(8) - ends[16].state(16), 2)
        d2 = sobolev_norm(ends[16].state(16) - ends[32].state(32), 2)
        assert d1 / d2 == pytest.approx(4.0, rel=0.1)

    def test_increments_are_kept(self):
        v = taylor_green(G16)
        sol = local_solve(v, SchemeConfig(grid=G16), 0.05, keep_increments=True,
                          keep_trajectories=True)
        assert len(sol.end_increments) == len(sol.increments) == sol.n_subiter
        total = sum((t.data for t in sol.increments), np.zeros_like(sol.trajectory.data))
        assert np.abs(v.data[None] + total - sol.trajectory.data).max() <= 1e-12


class TestNonstar:
    def test_zero_and_constant(self):
        cfg = SchemeConfig(grid=G16, M=4)
        z = VectorField.zeros(G16)
        assert not np.any(nonstar_substep(LocalTrajectory.constant(z, 4), z, cfg, 0.1).data)
        c = VectorField(G16, np.full((3,) + G16.shape, 0.75))
        out = nonstar_substep(LocalTrajectory.constant(c, 4), c, cfg, 0.1)
        assert np.abs(out.data - 0.75).max() <= 1e-14

    @pytest.mark.parametrize("preset", [taylor_green, abc_flow])
    @pytest.mark.parametrize("rho", [None, 0.05])
    def test_same_limit_as_star_scheme(self, preset, rho):
        v = preset(G16)
        rho = rho or theorem_rho(v)
        cfg = SchemeConfig(grid=G16, tol=1e-12)
        a = local_solve(v, cfg, rho).trajectory
        b = nonstar_local_solve(v, cfg, rho).trajectory
        assert c0_traj_norm(a - b, 2) <= 1e-6


class TestStepSize:
    def test_theorem_examples(self):
        k = SchemeConstants(1.0, 1.0, math.pi, 16)
        assert step_size_theorem(1.0, k) == 1 / (32 * math.pi)
        assert step_size_theorem(1.0, k) == pytest.approx(0.009947, abs=1e-6)
        assert step_size_theorem(3.0, k) == pytest.approx(0.004974, abs=1e-6)
        assert step_size_theorem(0.0, SchemeConstants(1.0, 1.0, 1.0, 1)) == 1.0

    def test_theorem_rejects_negative(self):
        with pytest.raises(ValueError):
            step_size_theorem(-1.0, CONSTS)

    def test_taylor_green_theorem_value(self):
        # ||TG||_{H^2}^2 = 10 pi^3; rho = 1 / (16 (10 pi^3 + 1) pi)
        v = taylor_green(G32)
        assert sobolev_norm(v, 2) ** 2 == pytest.approx(10 * math.pi**3, rel=1e-12)
        assert theorem_rho(v) == pytest.approx(1 / (16 * (10 * math.pi**3 + 1) * math.pi),
                                               rel=1e-9)

    def test_adaptive_zero_data(self):
        assert step_size_adaptive(VectorField.zeros(G16), SchemeConfig(grid=G16), 0.7) == 0.7

    def test_adaptive_taylor_green(self):
        # measured: the first ratio is already below 1/2 at rho0 = 1
        v = taylor_green(G16)
        cfg = SchemeConfig(grid=G16)
        rho = step_size_adaptive(v, cfg, 1.0)
        assert rho == 1.0
        with pytest.warns(RuntimeWarning):
            two = local_solve(v, SchemeConfig(grid=G16, max_subiter=2), rho)
        assert two.ratios[0] <= 0.5

    def test_adaptive_halves_until_contracting(self):
        v = taylor_green(G16)
        rho = step_size_adaptive(v, SchemeConfig(grid=G16), 1e4)
        assert rho == 1e4 / 2**9  # measured
        with pytest.warns(RuntimeWarning):
            two = local_solve(v, SchemeConfig(grid=G16, max_subiter=2), rho)
        assert two.ratios[0] <= 0.5

    def test_adaptive_gives_up(self):
        v = taylor_green(G16)
        with pytest.raises(NoContractionError):
            step_size_adaptive(v, SchemeConfig(grid=G16), 1e30)

    def test_adaptive_non_finite_data(self):
        bad = np.zeros((3,) + G16.shape)
        bad[0, 0, 0, 0] = np.inf
        with pytest.raises(InvalidFieldError):
            step_size_adaptive(VectorField(G16, bad), SchemeConfig(grid=G16), 1.0)


class TestRunGlobal:
    def test_zero_data(self):
        cfg = SchemeConfig(grid=G16, control=ControlMode("simple", C=2.0))
        led = run_global(VectorField.zeros(G16), 3, cfg)
        assert [r.l for r in led.reports] == [1, 2, 3]
        assert all(r.hm_norm_end == 0 and r.control_norm == 0 for r in led.reports)
        assert not np.any(led.final_control.data)

    def test_rejects_divergent_data(self):
        x, y, z = G16.mesh()
        v = VectorField(G16, np.stack([np.sin(x), 0 * x, 0 * x]))
        with pytest.raises(ValueError, match="divergence"):
            run_global(v, 1, SchemeConfig(grid=G16))

    def test_rejects_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            run_global(taylor_green(G16), 1, SchemeConfig(grid=G32))

    def test_divergence_error_is_annotated(self):
        cfg = SchemeConfig(grid=G32, step_policy="fixed", rho=640.0)
        with pytest.raises(DivergenceError) as info:
            run_global(taylor_green(G32), 2, cfg)
        assert info.value.step == 1
        assert str(info.value).startswith("step 1")

    def test_physical_time_and_ordering(self):
        cfg = SchemeConfig(grid=G16, step_policy="fixed", rho=0.01)
        led = run_global(taylor_green(G16), 3, cfg)
        assert led.physical_time == pytest.approx(0.03, rel=1e-15)
        assert [r.l for r in led.reports] == [1, 2, 3]

    @pytest.mark.slow
    def test_simple_control_twenty_steps(self):
        h = taylor_green(G16)
        C = 2 * hm_cm_norm(h, 2)
        led = run_global(h, 20, SchemeConfig(grid=G16, control=ControlMode("simple", C=C)))
        r0 = hm_cm_norm(h / C, 2)
        for r in led.reports:
            assert max(r.hm_norm_end, r.cm_norm_end) <= C
            assert r.control_norm <= r0 + 1.1 * r.l

    @pytest.mark.slow
    def test_uncontrolled_squared_norm_linear_bound(self):
        h = taylor_green(G16)
        led = run_global(h, 20, SchemeConfig(grid=G16))
        C = sobolev_norm(h, 2) ** 2
        assert all(s <= C + r.l * C for s, r in zip(led.series("velocity_sq_norm"), led.reports))
