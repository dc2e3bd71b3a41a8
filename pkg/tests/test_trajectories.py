import numpy as np
import pytest

import veeqsd as vq
from veeqsd import (
    OUChannel,
    TimeGrid,
    build_covariance,
    ensemble_density,
    evolve_linear,
    evolve_nonlinear,
    exp_integral_Q,
    level_state,
    ou_kernel,
    run_ensemble,
    sample_noise,
    single_channel_params,
    solve_F_ou,
    solve_master,
    superposition_states,
)
from veeqsd.errors import VeeQSDError


def zero_path(grid, channels=2):
    return np.zeros((channels, grid.n_points), complex)


def populations(est):
    return np.real(np.einsum("kii->ki", est.mean))


class TestEvolveLinear:
    def test_free_evolution(self, vee_nondeg):
        kern = ou_kernel(OUChannel(0.0, 1.0, 0.3), OUChannel(0.0, 1.5, 0.2))
        grid = TimeGrid(dt=0.005, n_steps=400)
        field = solve_F_ou(vee_nondeg, kern, grid)
        psi0 = np.array([0.6, 0.8j, 0.0])
        traj = evolve_linear(vee_nondeg, field, zero_path(grid), psi0)
        phases = np.exp(-1j * np.outer(grid.times, [*vee_nondeg.energies, 0.0]))
        assert np.abs(traj.psi - phases * psi0[None, :]).max() < 1e-10

    def test_zero_noise_bright_state_decay(self, vee, single_channel_kernel):
        grid = TimeGrid(dt=0.002, n_steps=2000)
        field = solve_F_ou(vee, single_channel_kernel, grid)
        kk = np.sqrt(0.5)
        plus, _ = superposition_states(vee, [kk, kk])
        traj = evolve_linear(vee, field, zero_path(grid), plus)
        params = single_channel_params(vee, single_channel_kernel)
        expected = exp_integral_Q(params, grid.times) * np.exp(-1j * grid.times)
        amp = np.einsum("a,ka->k", plus.vector.conj(), traj.psi)
        assert np.abs(amp - expected).max() < 1e-10

    def test_ensemble_mean_matches_master(self, vee, multi_kernel):
        grid = TimeGrid(dt=0.01, n_steps=150)
        field = solve_F_ou(vee, multi_kernel, grid)
        factor = build_covariance(multi_kernel, grid)
        batch = sample_noise(factor, seed=7, count=3000)
        plus, _ = superposition_states(vee, [0.7, 0.5])
        trajs = [evolve_linear(vee, field, batch.path(i), plus) for i in range(512)]
        est = ensemble_density(trajs)
        sol = solve_master(vee, multi_kernel, plus.density(), grid)
        dev = np.abs(est.mean - sol.rho)
        bound = 4 * est.stderr + 1e-9
        assert (dev <= bound).mean() > 0.995  # 4-sigma entrywise, allowing rare tails


class TestEvolveNonlinear:
    def test_ground_state_stationary(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=200)
        field = solve_F_ou(vee, fig2_kernel, grid)
        factor = build_covariance(fig2_kernel, grid)
        batch = sample_noise(factor, seed=3, count=1)
        traj = evolve_nonlinear(vee, field, batch.path(0), level_state(vee, 3), fig2_kernel)
        pops = np.abs(traj.psi) ** 2
        assert np.abs(pops - pops[0]).max() < 1e-12

    def test_zero_coupling_reduces_to_schroedinger(self, vee_nondeg):
        kern = ou_kernel(OUChannel(0.0, 1.0, 0.3), OUChannel(0.0, 1.5, 0.2))
        grid = TimeGrid(dt=0.005, n_steps=200)
        field = solve_F_ou(vee_nondeg, kern, grid)
        psi0 = np.array([0.6, 0.8, 0.0], complex)
        traj = evolve_nonlinear(vee_nondeg, field, zero_path(grid), psi0, kern)
        phases = np.exp(-1j * np.outer(grid.times, [*vee_nondeg.energies, 0.0]))
        assert np.abs(traj.psi - phases * psi0[None, :]).max() < 1e-10

    def test_norm_preserved_each_step(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=300)
        field = solve_F_ou(vee, fig2_kernel, grid)
        factor = build_covariance(fig2_kernel, grid)
        batch = sample_noise(factor, seed=12, count=1)
        traj = evolve_nonlinear(vee, field, batch.path(0), level_state(vee, 1), fig2_kernel)
        norms = np.linalg.norm(traj.psi, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-9

    def test_deterministic_for_fixed_path(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=100)
        field = solve_F_ou(vee, fig2_kernel, grid)
        factor = build_covariance(fig2_kernel, grid)
        batch = sample_noise(factor, seed=8, count=1)
        t1 = evolve_nonlinear(vee, field, batch.path(0), level_state(vee, 1), fig2_kernel)
        t2 = evolve_nonlinear(vee, field, batch.path(0), level_state(vee, 1), fig2_kernel)
        np.testing.assert_array_equal(t1.psi, t2.psi)


class TestEnsembleDensity:
    def test_two_identical_trajectories(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=50)
        field = solve_F_ou(vee, fig2_kernel, grid)
        factor = build_covariance(fig2_kernel, grid)
        batch = sample_noise(factor, seed=5, count=1)
        traj = evolve_nonlinear(vee, field, batch.path(0), level_state(vee, 1), fig2_kernel)
        est = ensemble_density([traj, traj])
        outer = np.einsum("ki,kj->kij", traj.psi, traj.psi.conj())
        np.testing.assert_allclose(est.mean, outer, atol=1e-15)
        assert np.abs(est.stderr).max() == 0.0

    def test_merge_reproduces_pooled_estimate(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=50)
        field = solve_F_ou(vee, fig2_kernel, grid)
        factor = build_covariance(fig2_kernel, grid)
        batch = sample_noise(factor, seed=5, count=8)
        trajs = [
            evolve_nonlinear(vee, field, batch.path(i), level_state(vee, 1), fig2_kernel)
            for i in range(8)
        ]
        pooled = ensemble_density(trajs)
        merged = ensemble_density(trajs[:4]).merge(ensemble_density(trajs[4:]))
        # the pooled reduction is a half-split tree, so the half split is bitwise
        np.testing.assert_array_equal(merged.sum1, pooled.sum1)
        np.testing.assert_array_equal(merged.sum2, pooled.sum2)
        assert merged.count == pooled.count
        # non-aligned splits agree to reassociation roundoff
        other = ensemble_density(trajs[:3]).merge(ensemble_density(trajs[3:]))
        np.testing.assert_allclose(other.mean, pooled.mean, atol=1e-13)

    def test_count_weighting(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=20)
        field = solve_F_ou(vee, fig2_kernel, grid)
        factor = build_covariance(fig2_kernel, grid)
        batch = sample_noise(factor, seed=6, count=6)
        trajs = [
            evolve_nonlinear(vee, field, batch.path(i), level_state(vee, 1), fig2_kernel)
            for i in range(6)
        ]
        a = ensemble_density(trajs[:2])
        b = ensemble_density(trajs[2:])
        merged = a.merge(b)
        expected = (2 * a.mean + 4 * b.mean) / 6
        np.testing.assert_allclose(merged.mean, expected, atol=1e-15)

    def test_requires_two_trajectories(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=20)
        field = solve_F_ou(vee, fig2_kernel, grid)
        traj = evolve_linear(vee, field, zero_path(grid), level_state(vee, 1))
        with pytest.raises(VeeQSDError):
            ensemble_density([traj])

    def test_mode_and_grid_mismatch_rejected(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=20)
        field = solve_F_ou(vee, fig2_kernel, grid)
        lin = evolve_linear(vee, field, zero_path(grid), level_state(vee, 1))
        non = evolve_nonlinear(vee, field, zero_path(grid), level_state(vee, 1), fig2_kernel)
        with pytest.raises(VeeQSDError):
            ensemble_density([lin, non])
        grid2 = TimeGrid(dt=0.01, n_steps=10)
        field2 = solve_F_ou(vee, fig2_kernel, grid2)
        lin2 = evolve_linear(vee, field2, zero_path(grid2), level_state(vee, 1))
        with pytest.raises(VeeQSDError):
            lin_est = ensemble_density([lin, lin])
            lin2_est = ensemble_density([lin2, lin2])
            lin_est.merge(lin2_est)

    def test_novikov_identity(self, vee, multi_kernel):
        # noise-weighted ensemble mean equals the memory-operator-weighted mean
        grid = TimeGrid(dt=0.01, n_steps=120)
        field = solve_F_ou(vee, multi_kernel, grid)
        factor = build_covariance(multi_kernel, grid)
        count = 6000
        batch = sample_noise(factor, seed=17, count=count)
        plus, _ = superposition_states(vee, [0.7, 0.5])
        hists = vq.trajectories._evolve_batch(
            vee, field, batch.paths, plus.vector, "linear", keep_history=True
        )
        k = 100
        z_at_k = batch.paths[:, :, k].conj()
        P = np.einsum("bi,bj->bij", hists[:, k], hists[:, k].conj())
        rho_hat = P.mean(axis=0)
        for m in range(2):
            samples = P * z_at_k[:, m, None, None]
            lhs = samples.mean(axis=0)
            se = samples.std(axis=0) / np.sqrt(count)
            qbar = np.zeros((3, 3), complex)
            qbar[2, :2] = field.values[k][m]
            rhs = qbar @ rho_hat
            assert (np.abs(lhs - rhs) <= 4 * se + 1e-12).all()


class TestRunEnsemble:
    def test_single_path_free_evolution(self, vee):
        kern = ou_kernel(OUChannel(0.0, 1.0, 0.5), OUChannel(0.0, 1.0, 0.5))
        grid = TimeGrid(dt=0.01, n_steps=100)
        psi0 = level_state(vee, 1)
        est = run_ensemble(vee, kern, psi0, grid, count=1, seed=1, mode="nonlinear")
        phases = np.exp(-1j * np.outer(grid.times, [1.0, 1.0, 0.0]))
        expected = np.einsum("ka,kb->kab", phases * psi0.vector[None], (phases * psi0.vector[None]).conj())
        assert np.abs(est.mean - expected).max() < 1e-10

    def test_bit_identical_reruns(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=100)
        a = run_ensemble(vee, fig2_kernel, level_state(vee, 1), grid, count=96, seed=42, mode="nonlinear")
        b = run_ensemble(vee, fig2_kernel, level_state(vee, 1), grid, count=96, seed=42, mode="nonlinear")
        np.testing.assert_array_equal(a.sum1, b.sum1)
        np.testing.assert_array_equal(a.sum2, b.sum2)

    def test_chunking_agrees_to_roundoff(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=60)
        a = run_ensemble(vee, fig2_kernel, level_state(vee, 1), grid, count=100, seed=42,
                         mode="nonlinear", chunk_size=32)
        b = run_ensemble(vee, fig2_kernel, level_state(vee, 1), grid, count=100, seed=42,
                         mode="nonlinear", chunk_size=1000)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-13)

    def test_dark_state_ensemble_stays_dark(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=200)
        _, minus = superposition_states(vee, [1.0, 1.0])
        est = run_ensemble(vee, fig2_kernel, minus, grid, count=128, seed=13, mode="nonlinear")
        pops = populations(est)
        se = np.einsum("kii->ki", est.stderr)
        assert (np.abs(pops[:, 0] - 0.5) <= 4 * se[:, 0] + 1e-6).all()
        assert (np.abs(pops[:, 1] - 0.5) <= 4 * se[:, 1] + 1e-6).all()
        assert (pops[:, 2] <= 4 * se[:, 2] + 1e-6).all()

    def test_short_time_agreement_both_modes(self, vee, multi_kernel):
        # the raw linear mean and the normalized nonlinear mean both
        # estimate rho directly, so 5 standard errors bound the deviation
        grid = TimeGrid(dt=0.01, n_steps=10)
        sol = solve_master(vee, multi_kernel, level_state(vee, 1).density(), grid)
        for mode in ("linear", "nonlinear"):
            est = run_ensemble(vee, multi_kernel, level_state(vee, 1), grid,
                               count=200, seed=23, mode=mode)
            dev = np.abs(est.mean - sol.rho)
            bound = 5 * est.stderr + 5e-7
            assert (dev <= bound).all()

    def test_count_validated(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=10)
        with pytest.raises(VeeQSDError):
            run_ensemble(vee, fig2_kernel, level_state(vee, 1), grid, count=0, seed=1, mode="linear")

    def test_unknown_mode_rejected(self, vee, fig2_kernel):
        grid = TimeGrid(dt=0.01, n_steps=10)
        with pytest.raises(VeeQSDError):
            run_ensemble(vee, fig2_kernel, level_state(vee, 1), grid, count=1, seed=1, mode="jumpy")
