import numpy as np
import pytest
from scipy import stats

import oracles
from smc2nx import pf
from smc2nx.errors import ConfigurationError, ParameterError
from smc2nx.kernels import (Island, ProposalCov, ThetaUpdate, csmc_regenerate, fresh_pf,
                            particle_gibbs, pmmh_step, proposal_covariance, select_trajectory)
from smc2nx.models import LinearGaussian, StateSpaceModel, simulate
from smc2nx.rng import rebuild_history, restore, snapshot

THETA_SV = np.array([-1.0, 0.9, 0.1])


def make_island(model, theta, n_x, ys, seed=0, log_weight=0.0):
    gen = np.random.default_rng(seed)
    fr, j = fresh_pf(model, theta, n_x, ys, gen)
    return Island(np.array(theta, dtype=float), log_weight, fr, j, gen)


def test_covariance_two_points():
    cov = proposal_covariance(np.array([[0.0, 0.0], [2.0, 0.0]]), 1.0)
    assert cov.sigma[0, 0] == pytest.approx(2.0)
    assert cov.sigma[0, 1] == 0.0 and cov.sigma[1, 0] == 0.0
    assert 0.0 < cov.sigma[1, 1] < 1e-6
    assert np.allclose(cov.chol @ cov.chol.T, cov.sigma)


def test_covariance_scales_linearly():
    X = np.random.default_rng(0).normal(size=(50, 3))
    a, b = proposal_covariance(X, 1.0), proposal_covariance(X, 0.5)
    assert np.allclose(b.sigma, 0.5 * a.sigma)


def test_covariance_estimate_of_identity():
    X = np.random.default_rng(1).normal(size=(10 ** 4, 3))
    assert np.max(np.abs(proposal_covariance(X, 1.0).sigma - np.eye(3))) < 0.1


def test_covariance_degenerate_cloud_falls_back():
    cov = proposal_covariance(np.ones((5, 2)), 2.0)
    assert np.allclose(cov.sigma, 2e-4 * np.eye(2))


def test_pmmh_rejects_out_of_support(sv, sv_data):
    isl = make_island(sv, THETA_SV, 10, sv_data[:5])
    before = (isl.theta.copy(), isl.frontier, isl.journal, isl.log_weight)
    # the proposal lands at rho = 1.2
    shift = np.array([0.0, 0.3, 0.0])
    chol = np.diag(shift)
    rng = np.random.default_rng(0)

    class Fixed:
        def standard_normal(self, d):
            return np.ones(d)

        def __getattr__(self, name):
            return getattr(rng, name)

    _, accepted = pmmh_step(isl, ProposalCov(chol @ chol.T, chol), sv, sv_data, 10, rng=Fixed())
    assert not accepted
    assert np.array_equal(isl.theta, before[0]) and isl.frontier is before[1]
    assert isl.journal is before[2] and isl.log_weight == before[3]
    assert isl.work == 0


def test_pmmh_accepts_when_ratio_is_one(lgssm, lgssm_data):
    # zero proposal step plus a stream positioned so the proposal PF
    # reproduces the current estimate exactly: r = 1
    d = 1
    g = np.random.default_rng(3)
    s0 = snapshot(g)
    g.standard_normal(d)
    fr, j = fresh_pf(lgssm, lgssm.theta0, 12, lgssm_data, g)
    isl = Island(lgssm.theta0.copy(), -3.5, fr, j, restore(s0))
    zero = ProposalCov(np.zeros((1, 1)), np.zeros((1, 1)))
    _, accepted = pmmh_step(isl, zero, lgssm, lgssm_data, 12)
    assert accepted
    assert isl.frontier.cum_loglik == fr.cum_loglik
    assert isl.log_weight == -3.5


def test_pmmh_log_ratio_has_no_overflow(lgssm, lgssm_data):
    isl = make_island(lgssm, lgssm.theta0, 5, lgssm_data)
    isl.frontier.cum_loglik = -1e4  # current estimate absurdly small
    cov = proposal_covariance(np.array([[0.85], [0.95]]), 1.0)
    _, accepted = pmmh_step(isl, cov, lgssm, lgssm_data, 5)
    assert accepted


def test_select_single_particle_path(lgssm, lgssm_data):
    _, h = pf.run_pass(lgssm, lgssm.theta0, 1, lgssm_data, np.random.default_rng(0), collect=True)
    assert np.array_equal(select_trajectory(h, np.random.default_rng(1)), h.x[:, 0])


def test_select_point_mass_follows_ancestry(lgssm, lgssm_data):
    _, h = pf.run_pass(lgssm, lgssm.theta0, 6, lgssm_data, np.random.default_rng(0), collect=True)
    k = 4
    h.W[-1] = np.eye(6)[k]
    path = select_trajectory(h, np.random.default_rng(1))
    b = k
    for s in range(h.t, -1, -1):
        assert path[s] == h.x[s, b]
        b = h.ancestors[s, b]


def test_select_terminal_frequencies():
    W = np.array([0.1, 0.2, 0.3, 0.4])
    x = np.tile(np.arange(4.0), (2, 1))
    h = pf.ParticleHistory(x, np.array([[-1] * 4, [0, 1, 2, 3]]), np.log(np.tile(W, (2, 1))),
                           np.tile(W, (2, 1)))
    rng = np.random.default_rng(2)
    counts = np.bincount([int(select_trajectory(h, rng)[-1]) for _ in range(10 ** 5)], minlength=4)
    assert stats.chisquare(counts, 10 ** 5 * W).pvalue > 0.001


def test_csmc_pins_particle_zero(sv, sv_data):
    pinned = np.linspace(-2, 0, 12)
    rng = np.random.default_rng(0)
    snap = snapshot(rng)
    fr, j = csmc_regenerate(sv, THETA_SV, pinned, 7, sv_data[:12], rng)
    h = rebuild_history(j, sv, THETA_SV, sv_data[:12])
    assert np.array_equal(h.x[:, 0], pinned)
    assert np.all(h.ancestors[1:, 0] == 0)
    assert np.all(np.isfinite(h.logw[:, 0]))
    assert fr.n_x == 7 and snapshot(restore(snap)) == snap


def test_csmc_collapses_with_degenerate_dynamics():
    m = LinearGaussian(0.5, 1e-10, 1.0)
    pinned = np.zeros(4)
    fr, _ = csmc_regenerate(m, m.theta0, pinned, 2, np.array([0.1, -0.3, 0.2, 0.0]),
                            np.random.default_rng(0))
    assert abs(fr.x[1] - fr.x[0]) < 1e-8
    assert fr.W == pytest.approx([0.5, 0.5], abs=1e-8)


def test_csmc_validates_arguments(lgssm, lgssm_data):
    with pytest.raises(ParameterError):
        csmc_regenerate(lgssm, lgssm.theta0, np.zeros(len(lgssm_data)), 1, lgssm_data,
                        np.random.default_rng(0))
    with pytest.raises(ParameterError):
        csmc_regenerate(lgssm, lgssm.theta0, np.zeros(3), 4, lgssm_data, np.random.default_rng(0))


def test_partial_pg_keeps_theta_and_pins_selection(sv, sv_data):
    ys = sv_data[:8]
    isl = make_island(sv, THETA_SV, 10, ys, log_weight=-1.25)
    hist = rebuild_history(isl.journal, sv, isl.theta, ys)
    # replicate the selection draw to know which path must be pinned
    expected = select_trajectory(hist, restore(snapshot(isl.rng)))
    particle_gibbs(isl, sv, sv_data, ThetaUpdate.Partial, 10)
    assert np.array_equal(isl.theta, THETA_SV)
    assert np.array_equal(isl.journal.pinned_trajectory, expected)
    assert isl.log_weight == -1.25


def test_pg_changes_size_and_journal(sv, sv_data):
    ys = sv_data[:8]
    isl = make_island(sv, THETA_SV, 10, ys)
    particle_gibbs(isl, sv, sv_data, "full", 25)
    assert isl.frontier.n_x == 25
    h = rebuild_history(isl.journal, sv, isl.theta, ys)
    assert h.n_x == 25 and h.t == 7
    assert h.log_increments.sum() == pytest.approx(isl.frontier.cum_loglik, abs=1e-12)


def test_full_pg_needs_gibbs_sampler(lgssm_data):
    class NoGibbs(LinearGaussian):
        gibbs_capable = False

        def gibbs_theta(self, *a, **k):
            return StateSpaceModel.gibbs_theta(self, *a, **k)

    m = NoGibbs(0.9, 1.0, 0.5)
    isl = make_island(m, m.theta0, 5, lgssm_data)
    with pytest.raises(ConfigurationError):
        particle_gibbs(isl, m, lgssm_data, ThetaUpdate.Full, 5)
    particle_gibbs(isl, m, lgssm_data, ThetaUpdate.Partial, 5)


def exact_extended_draw(m, y, n, rng):
    """Island distributed exactly as the extended target: a smoothing path
    drawn from the Kalman smoother, then conditional SMC around it."""
    path = oracles.sample_lgssm_smoothing_path(y, m.rho, m.sigma_x, m.sigma_y, rng)[0]
    fr, j = csmc_regenerate(m, m.theta0, path, n, y, rng)
    return Island(m.theta0.copy(), 0.0, fr, j, rng)


def test_pg_preserves_extended_target_small():
    m = LinearGaussian(0.9, 1.0, 0.5)
    _, y = simulate(m, m.theta0, 3, np.random.default_rng(0))
    n, reps = 5, 2000
    ref = [exact_extended_draw(m, y, n, np.random.default_rng(r)).frontier.cum_loglik
           for r in range(reps)]
    moved, plain = [], []
    for r in range(reps):
        isl = exact_extended_draw(m, y, n, np.random.default_rng(10 ** 6 + r))
        particle_gibbs(isl, m, y, ThetaUpdate.Partial, n)
        moved.append(isl.frontier.cum_loglik)
        plain.append(pf.run_pass(m, m.theta0, n, y, np.random.default_rng(2 * 10 ** 6 + r)).cum_loglik)
    assert stats.ks_2samp(ref, moved).pvalue > 0.001
    # power check: unconditioned filter runs follow a different (non size-biased) law
    assert stats.ks_2samp(ref, plain).pvalue < 0.001


def test_full_pg_chain_has_no_drift(sv):
    _, y = simulate(sv, THETA_SV, 5, np.random.default_rng(11))
    isl = make_island(sv, THETA_SV, 8, y, seed=1)
    thetas = []
    for _ in range(1000):  # burn-in
        particle_gibbs(isl, sv, y, ThetaUpdate.Full, 8)
    for _ in range(8000):
        particle_gibbs(isl, sv, y, ThetaUpdate.Full, 8)
        thetas.append(isl.theta.copy())
    batches = np.array(thetas).reshape(40, 200, 3).mean(axis=1)
    for j in range(3):
        p = stats.ttest_ind(batches[:20, j], batches[20:, j], equal_var=False).pvalue
        assert p > 0.05 / 3
