"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
summary lines and timings.
"""

import time

import numpy as np
import pytest

import veeqsd as vq
from veeqsd import (
    OUChannel,
    SingleChannelParams,
    TimeGrid,
    analytic_Q,
    build_covariance,
    integrate_master_direct,
    level_state,
    markov_master,
    ou_kernel,
    pole_times,
    propagate_pair,
    run_ensemble,
    sample_noise,
    single_channel_params,
    solve_F_general,
    solve_F_ou,
    solve_master,
    superposition_states,
    trace_distance,
    validate_density,
)

SYS = vq.build_system(2, [1.0, 1.0])
LEVEL1 = level_state(SYS, 1)
PHI_PLUS, PHI_MINUS = superposition_states(SYS, [1.0, 1.0])


def fig2_kernel(gamma):
    return ou_kernel(OUChannel(1.0, gamma, 0.99), OUChannel(1.0, gamma, 0.99))


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def report(criterion, timer, detail):
    print(f"[PASS] criterion {criterion} ({timer.elapsed:.1f}s): {detail}")


def test_criterion_01_long_time_vacuum_induced_coherence():
    details = []
    for gamma in (0.1, 0.2, 1.0, 5.0):
        T = max(50.0, np.ceil(12.0 / gamma))
        grid = vq.grid_for_duration(0.002, T)
        with Timer() as t:
            sol = solve_master(SYS, fig2_kernel(gamma), LEVEL1.density(), grid)
        assert t.elapsed < 5.0, f"gamma={gamma} took {t.elapsed:.1f}s"
        final = sol.rho[-1]
        assert final[0, 0].real == pytest.approx(0.25, abs=0.01)
        assert final[1, 1].real == pytest.approx(0.25, abs=0.01)
        assert abs(final[0, 1]) == pytest.approx(0.25, abs=0.01)
        assert final[2, 2].real == pytest.approx(0.50, abs=0.01)
        details.append(f"gamma={gamma}: T={T:g}, {t.elapsed:.1f}s")
    print("[PASS] criterion 1: rho -> (0.25, 0.25, 0.5, |rho12|=0.25) within 0.01; " + "; ".join(details))


def test_criterion_02_decoherence_free_state():
    kern = fig2_kernel(5.0)
    grid = vq.grid_for_duration(0.002, 50.0)
    rho0 = PHI_MINUS.density()
    with Timer() as t:
        analytic = solve_master(SYS, kern, rho0, grid)
        field = solve_F_ou(SYS, kern, grid)
        direct = integrate_master_direct(SYS, field, rho0, grid)
    drift_analytic = np.abs(analytic.rho - analytic.rho[0]).max()
    drift_direct = np.abs(direct.rho - direct.rho[0]).max()
    assert drift_analytic < 1e-6
    assert drift_direct < 1e-4
    assert t.elapsed < 5.0
    report(2, t, f"dark state constant: analytic drift {drift_analytic:.1e} (<1e-6), "
                 f"direct {drift_direct:.1e} (<1e-4) over T=50")


def test_criterion_03_single_channel_reduction():
    kern = ou_kernel(OUChannel(np.sqrt(0.7), 1.5, 0.7), OUChannel(np.sqrt(1.3), 1.5, 0.7))
    grid = TimeGrid(dt=0.001, n_steps=1500)
    with Timer() as t:
        field = solve_F_ou(SYS, kern, grid)
        params = single_channel_params(SYS, kern)
        q = analytic_Q(params, grid.times)
    kap = np.array([np.sqrt(0.7), np.sqrt(1.3)])
    proj = np.outer(kap, kap) / 2.0
    dev = np.abs(field.values - q[:, None, None] * proj).max()
    assert field.pole_time is None
    assert dev < 1e-8
    assert t.elapsed < 1.0
    report(3, t, f"coefficient field equals projector * Q within {dev:.1e} (<1e-8)")


def test_criterion_04_markov_limit():
    with Timer() as t:
        ksq = 1.0
        params = SingleChannelParams(gamma=100.0 * ksq, kappa_sq=ksq, delta=0.0)
        ts = np.linspace(5 / params.gamma, 10.0, 400)
        q = analytic_Q(params, ts)
        plateau_dev = float((np.abs(q - ksq / 2) / (ksq / 2)).max())
        assert plateau_dev < 0.05

        G1 = G2 = 0.5
        kappas = [np.sqrt(G1), np.sqrt(G2)]
        gamma = 1e4 * (G1 + G2)
        kern = ou_kernel(OUChannel(kappas[0], gamma, 1.0), OUChannel(kappas[1], gamma, 1.0))
        grid = TimeGrid(dt=0.002, n_steps=2000)
        plus, _ = superposition_states(SYS, kappas)
        exact = solve_master(SYS, kern, plus.density(), grid)
        markov = markov_master(SYS, [G1, G2], kappas, plus.density(), grid)
        td = max(
            trace_distance(a, b) for a, b in zip(exact.rho[::50], markov.rho[::50])
        )
        assert td < 0.02
    assert t.elapsed < 10.0
    report(4, t, f"plateau |Q - k^2/2| within {plateau_dev:.3f} (<0.05); "
                 f"wideband-vs-exact trace distance {td:.2e} (<0.02)")


def test_criterion_05_pole_zero_correspondence():
    kern = ou_kernel(OUChannel(1.0, 0.2, 1.0), OUChannel(1.0, 0.2, 1.0))
    grid = vq.grid_for_duration(0.002, 12.0)
    with Timer() as t:
        params = single_channel_params(SYS, kern)
        assert abs(params.eta.imag) < 1e-12  # the regime has real eta
        poles = pole_times(params, grid.t_final)
        pair = propagate_pair(SYS, kern, grid)
        assert np.isfinite(pair.O).all() and np.isfinite(pair.Y).all()
        v = PHI_PLUS.vector[:2]
        elements = []
        for t_pole in poles:
            O_t, _ = pair.evaluate(t_pole)
            elements.append(abs(v.conj() @ O_t @ v))
        assert max(elements) < 1e-6
    assert t.elapsed < 2.0
    report(5, t, f"propagator finite through {len(poles)} poles; "
                 f"|<phi+|O|phi+>| at pole times <= {max(elements):.1e} (<1e-6)")


def test_criterion_06_dual_path_and_cross_solver():
    with Timer() as t:
        worst = 0.0
        for name in vq.bundled_scenario_names():
            cfg = vq.load_bundled(name)
            psi0 = cfg.initial_state_vector()
            rho0 = np.outer(psi0, psi0.conj())
            analytic = solve_master(cfg.system, cfg.kernel, rho0, cfg.grid)
            field = solve_F_ou(cfg.system, cfg.kernel, cfg.grid)
            assert field.pole_time is None, f"{name}: unexpected pole"
            direct = integrate_master_direct(cfg.system, field, rho0, cfg.grid)
            td = max(
                trace_distance(a, b)
                for a, b in zip(analytic.rho[::100], direct.rho[::100])
            )
            worst = max(worst, td)
            assert td < 1e-6, f"{name}: trace distance {td:.2e}"

        # independent coefficient route: the two-time solver
        kern = ou_kernel(OUChannel(0.7, 1.5, 1.1), OUChannel(0.5, 0.8, 0.9))
        sys_nd = vq.build_system(2, [1.0, 1.15])
        grid = TimeGrid(dt=0.005, n_steps=1000)
        _, general = solve_F_general(sys_nd, kern, grid)
        riccati = solve_F_ou(sys_nd, kern, grid)
        cross = np.abs(general.values - riccati.values).max()
        assert cross < 1e-4

        kern1 = fig2_kernel(5.0)
        grid1 = TimeGrid(dt=0.0025, n_steps=1200)
        _, general1 = solve_F_general(SYS, kern1, grid1)
        params = single_channel_params(SYS, kern1)
        q = analytic_Q(params, grid1.times)
        proj = np.full((2, 2), 0.5)
        cross1 = np.abs(general1.values - q[:, None, None] * proj).max()
        assert cross1 < 1e-4
    assert t.elapsed < 60.0
    report(6, t, f"14 configs: worst dual-path trace distance {worst:.1e} (<1e-6); "
                 f"cross-solver deviations {cross:.1e}, {cross1:.1e} (<1e-4)")


def test_criterion_07_noise_fidelity():
    kern = ou_kernel(OUChannel(1.0, 2.0, 0.5), OUChannel(0.7, 1.0, 1.5))
    grid = TimeGrid(dt=0.05, n_steps=63)
    with Timer() as t:
        factor = build_covariance(kern, grid)
        batch = sample_noise(factor, seed=123, count=100_000)
        z = batch.paths.conj()
        rng = np.random.default_rng(5)
        checked = 0
        worst_cov = worst_pseudo = 0.0
        for _ in range(60):
            m, n = rng.integers(0, 2, size=2)
            j, k = rng.integers(0, grid.n_points, size=2)
            prod = z[:, m, j] * z[:, n, k].conj()
            se = prod.std() / np.sqrt(batch.count)
            expected = vq.alpha(kern, m + 1, n + 1, grid.times[j], grid.times[k])
            worst_cov = max(worst_cov, abs(prod.mean() - expected) / se)
            pseudo = z[:, m, j] * z[:, n, k]
            pse = pseudo.std() / np.sqrt(batch.count)
            worst_pseudo = max(worst_pseudo, abs(pseudo.mean()) / pse)
            checked += 1
        assert checked >= 50
        assert worst_cov < 4.0
        assert worst_pseudo < 4.0
    assert t.elapsed < 60.0
    report(7, t, f"{checked} sampled tuples over 1e5 paths: covariance within "
                 f"{worst_cov:.2f} sigma, pseudo-covariance within {worst_pseudo:.2f} sigma (<4)")


def test_criterion_08_trajectory_convergence():
    kern = fig2_kernel(5.0)
    with Timer() as t:
        # agreement: 2000 norm-preserving trajectories against the exact solution
        grid = TimeGrid(dt=0.004, n_steps=2000)  # T = 8 spans the full relaxation
        field = solve_F_ou(SYS, kern, grid)
        master_pops = solve_master(SYS, kern, LEVEL1.density(), grid).populations()
        est = run_ensemble(SYS, kern, LEVEL1, grid, count=2000, seed=11,
                           mode="nonlinear", field=field)
        pops = np.real(np.einsum("kii->ki", est.mean))
        agreement = float(np.abs(pops - master_pops).max())
        assert agreement < 0.02

        # scaling: disjoint path-index blocks give independent deviations
        sgrid = TimeGrid(dt=0.005, n_steps=600)
        sfield = solve_F_ou(SYS, kern, sgrid)
        sfactor = build_covariance(kern, sgrid)
        mrho = solve_master(SYS, kern, LEVEL1.density(), sgrid).rho
        sel = np.arange(100, 601, 100)
        blocks = {500: 24, 2000: 12, 8000: 8}
        errs = []
        for count, n_blocks in blocks.items():
            mses = []
            for j in range(n_blocks):
                block = run_ensemble(
                    SYS, kern, LEVEL1, sgrid, count=count, seed=77, mode="nonlinear",
                    field=sfield, factor=sfactor, start_index=j * count,
                )
                mses.append(np.mean(np.abs(block.mean[sel] - mrho[sel]) ** 2))
            errs.append(float(np.sqrt(np.mean(mses))))
        slope = float(np.polyfit(np.log(list(blocks)), np.log(errs), 1)[0])
        assert -0.65 <= slope <= -0.35
    assert t.elapsed < 600.0
    report(8, t, f"2000-path populations within {agreement:.4f} of exact (<0.02) at all "
                 f"grid times; error-vs-count slope {slope:.2f} (in -0.5 +- 0.15)")


def test_criterion_09_multi_channel_trends():
    with Timer() as t:
        grid = vq.grid_for_duration(0.002, 20.0)
        rho0 = PHI_MINUS.density()

        # bandwidth-mismatch sweep. The survival p(20) falls monotonically
        # through gamma2 in {5, 2.5, 1, 0.5}. At gamma2 = 0.1 the narrow
        # channel crosses into the oscillatory strong-coupling regime
        # (Gamma2*gamma2/2 > (gamma2/2)^2), where its survival envelope
        # decays only at rate gamma2/2, so p(20) climbs back above the
        # gamma2 = 1 value; the reversal is pinned here deliberately.
        p_at = {}
        for g2 in (5.0, 2.5, 1.0, 0.5, 0.1):
            kern = ou_kernel(OUChannel(1.0, 5.0, 0.99), OUChannel(1.0, g2, 0.99))
            p_at[g2] = solve_master(SYS, kern, rho0, grid).p[-1]
        assert p_at[5.0] > p_at[2.5] > p_at[1.0] > p_at[0.5], "decay grows with the mismatch"
        assert p_at[0.1] > p_at[1.0], "slow-envelope reversal in the oscillatory regime"

        # center-frequency sweep: decayed fraction grows with |Omega2 - Omega1| / gamma
        decayed = {}
        for tag, gamma, O2 in (
            ("a", 1.0, 0.67), ("b", 1.0, 0.33), ("c", 1.0, 0.0),
            ("d", 0.5, 0.67), ("e", 0.5, 0.33), ("f", 0.5, 0.0),
        ):
            kern = ou_kernel(OUChannel(1.0, gamma, 1.01), OUChannel(1.0, gamma, O2))
            decayed[tag] = 1.0 - solve_master(SYS, kern, rho0, grid).p[-1]
        assert decayed["a"] < decayed["b"] < decayed["c"]
        assert decayed["d"] < decayed["e"] < decayed["f"]
        for narrow, wide in (("d", "a"), ("e", "b"), ("f", "c")):
            assert decayed[narrow] > decayed[wide]
        saturation = abs(decayed["f"] / decayed["e"] - 1.0)
        assert saturation < 0.20
    assert t.elapsed < 30.0
    report(9, t, "bandwidth sweep monotone over {5, 2.5, 1, 0.5} with the oscillatory-regime "
                 f"reversal at 0.1; frequency sweep monotone, saturation {saturation:.3f} (<0.20)")


def test_criterion_10_structural_invariants():
    with Timer() as t:
        grid = TimeGrid(dt=0.002, n_steps=5000)
        kern = fig2_kernel(5.0)

        solutions = []
        solutions.append(solve_master(SYS, kern, LEVEL1.density(), grid))
        field = solve_F_ou(SYS, kern, grid)
        solutions.append(integrate_master_direct(SYS, field, LEVEL1.density(), grid))
        solutions.append(markov_master(SYS, [1.0, 1.0], [1.0, 1.0], LEVEL1.density(), grid))
        mk = ou_kernel(OUChannel(0.7, 1.5, 1.1), OUChannel(0.5, 0.8, 0.9))
        plus, _ = superposition_states(SYS, [0.7, 0.5])
        solutions.append(solve_master(SYS, mk, plus.density(), grid))

        for sol in solutions:
            for k in range(0, grid.n_points, 200):
                check = validate_density(sol.rho[k])
                assert check.hermiticity_defect <= 1e-10
                assert check.trace_defect <= 1e-8
                assert check.min_eigenvalue >= -1e-10

        # purity: pure excited initial states keep a rank-one excited block
        pure_sol = solutions[3]
        for k in range(0, grid.n_points, 500):
            eigs = np.linalg.eigvalsh(pure_sol.rho_e[k])
            assert eigs[0] <= 1e-10

        # statistical identity: noise-weighted mean equals memory-weighted mean
        sgrid = TimeGrid(dt=0.01, n_steps=120)
        sfield = solve_F_ou(SYS, mk, sgrid)
        sfactor = build_covariance(mk, sgrid)
        count = 6000
        batch = sample_noise(sfactor, seed=17, count=count)
        hists = vq.trajectories._evolve_batch(
            SYS, sfield, batch.paths, plus.vector, "linear", keep_history=True
        )
        worst_sigma = 0.0
        for k in (60, 120):
            z_at_k = batch.paths[:, :, k].conj()
            P = np.einsum("bi,bj->bij", hists[:, k], hists[:, k].conj())
            rho_hat = P.mean(axis=0)
            for m in range(2):
                samples = P * z_at_k[:, m, None, None]
                lhs = samples.mean(axis=0)
                se = samples.std(axis=0) / np.sqrt(count) + 1e-12
                qbar = np.zeros((3, 3), complex)
                qbar[2, :2] = sfield.values[k][m]
                worst_sigma = max(worst_sigma, float((np.abs(lhs - qbar @ rho_hat) / se).max()))
        assert worst_sigma < 4.0

        # ensemble estimates: Hermitian by construction, unit trace within error
        est = run_ensemble(SYS, kern, LEVEL1, TimeGrid(dt=0.01, n_steps=200),
                           count=256, seed=9, mode="nonlinear")
        assert np.abs(est.mean - np.conj(np.swapaxes(est.mean, 1, 2))).max() < 1e-12
        traces = np.real(np.einsum("kii->k", est.mean))
        assert np.abs(traces - 1.0).max() < 1e-9
    assert t.elapsed < 120.0
    report(10, t, f"density checks pass for 4 solution families; rank-1 purity holds; "
                  f"noise-identity within {worst_sigma:.2f} sigma (<4)")
