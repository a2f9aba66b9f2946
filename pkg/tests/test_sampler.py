import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lggp.exceptions import InvalidInputError
from lggp.sampler import (
    HmcConfig,
    DualAveraging,
    TargetFn,
    draw_momentum,
    dual_averaging_adapt,
    effective_sample_size,
    export_chain,
    hamiltonian,
    leapfrog,
    nuts_draw,
    run_chain,
    summarize_draws,
    warmup_windows,
)


def _std_normal(q, args):
    return -0.5 * float(q @ q), -q


def _gaussian(q, args):
    mean, prec = args
    r = q - mean
    g = -(prec @ r)
    return 0.5 * float(r @ g), g


def std_normal(dim):
    return TargetFn(_std_normal, (), dim, initial=np.zeros(dim))


def gaussian(mean, cov):
    mean = np.asarray(mean, dtype=float)
    return TargetFn(_gaussian, (mean, np.linalg.inv(cov)), mean.size, initial=np.zeros(mean.size))


class TestConfig:
    def test_presets(self):
        assert (HmcConfig.long().n_samples, HmcConfig.long().n_warmup) == (20_000, 10_000)
        assert (HmcConfig.short().n_samples, HmcConfig.short().n_warmup) == (1000, 1200)
        assert HmcConfig.short(seed=4).seed == 4

    @pytest.mark.parametrize(
        "kw",
        [
            {"target_accept": 1.0},
            {"target_accept": 0.0},
            {"max_tree_depth": 0},
            {"mass_matrix_mode": "full"},
            {"n_samples": 0, "n_warmup": 0},
            {"n_warmup": -1},
            {"initial_step_size": 0.0},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(InvalidInputError):
            HmcConfig(**kw)


class TestLeapfrog:
    def test_energy_conservation(self, rng):
        target = std_normal(5)
        q0, p0 = rng.normal(size=5), rng.normal(size=5)
        h0 = hamiltonian(target(q0)[0], p0, np.ones(5))
        q, p, lp = leapfrog(target, q0, p0, 0.1, n_steps=100)
        assert abs(hamiltonian(lp, p, np.ones(5)) - h0) <= 1e-3 * max(1.0, abs(h0))

    def test_reversibility(self, rng):
        target = gaussian([0.5, -1.0], [[1.0, 0.6], [0.6, 2.0]])
        q0, p0 = rng.normal(size=2), rng.normal(size=2)
        q1, p1, _ = leapfrog(target, q0, p0, 0.2, n_steps=25)
        q2, p2, _ = leapfrog(target, q1, -p1, 0.2, n_steps=25)
        np.testing.assert_allclose(q2, q0, atol=1e-12)
        np.testing.assert_allclose(-p2, p0, atol=1e-12)

    def test_volume_preservation(self, rng):
        target = gaussian([0.0, 0.0], [[1.0, 0.3], [0.3, 0.5]])
        z0 = rng.normal(size=4)
        h = 1e-6
        jac = np.empty((4, 4))
        for i in range(4):
            dz = np.zeros(4)
            dz[i] = h
            hi = np.concatenate(leapfrog(target, (z0 + dz)[:2], (z0 + dz)[2:], 0.3, n_steps=7)[:2])
            lo = np.concatenate(leapfrog(target, (z0 - dz)[:2], (z0 - dz)[2:], 0.3, n_steps=7)[:2])
            jac[:, i] = (hi - lo) / (2 * h)
        assert np.linalg.det(jac) == pytest.approx(1.0, abs=1e-6)

    def test_second_order_error(self, rng):
        target = std_normal(3)
        q0, p0 = rng.normal(size=3), rng.normal(size=3)
        h0 = hamiltonian(target(q0)[0], p0, np.ones(3))

        def err(eps):
            n = int(round(1.0 / eps))
            q, p, lp = leapfrog(target, q0, p0, eps, n_steps=n)
            return abs(hamiltonian(lp, p, np.ones(3)) - h0)

        ratio = err(0.1) / err(0.05)
        assert 3.0 < ratio < 5.0

    def test_dense_metric_matches_diagonal(self, rng):
        target = gaussian([0.0, 0.0, 0.0], np.diag([1.0, 2.0, 3.0]))
        q0, p0 = rng.normal(size=3), rng.normal(size=3)
        diag = np.array([0.5, 1.5, 2.0])
        a = leapfrog(target, q0, p0, 0.1, diag, n_steps=10)
        b = leapfrog(target, q0, p0, 0.1, np.diag(diag), n_steps=10)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-13)

    def test_non_finite_reported(self):
        def wall(q, args):
            if q[0] > 1.0:
                return -np.inf, np.full(1, np.nan)
            return -0.5 * q[0] ** 2, -q

        q, p, lp = leapfrog(TargetFn(wall, (), 1), [0.9], [10.0], 0.5, n_steps=3)
        assert lp == -np.inf


class TestMomentum:
    def test_dense_covariance(self):
        rng = np.random.default_rng(0)
        inv_mass = np.array([[2.0, 0.5], [0.5, 1.0]])
        draws = np.array([draw_momentum(inv_mass, rng) for _ in range(20_000)])
        # p ~ N(0, M) with M the inverse of inv_mass
        np.testing.assert_allclose(np.cov(draws.T), np.linalg.inv(inv_mass), atol=0.04)

    def test_diagonal_covariance(self):
        rng = np.random.default_rng(1)
        draws = np.array([draw_momentum(np.array([4.0, 0.25]), rng) for _ in range(20_000)])
        np.testing.assert_allclose(draws.var(axis=0), [0.25, 4.0], rtol=0.05)


class TestDualAveraging:
    def test_constant_acceptance_above_target_grows_step(self):
        steps = dual_averaging_adapt(np.full(200, 0.99), 0.8, 0.1)
        assert steps[-1] > steps[0]

    def test_constant_acceptance_below_target_shrinks_step(self):
        steps = dual_averaging_adapt(np.full(200, 0.2), 0.8, 0.1)
        assert steps[-1] < 0.1

    @given(st.floats(0.05, 0.95))
    def test_at_target_stays_at_anchor(self, target):
        da = DualAveraging(0.3, target)
        for _ in range(50):
            da.update(target)
        assert da.step_size == pytest.approx(3.0, rel=1e-12)

    def test_constant_target_acceptance_converges(self):
        steps = dual_averaging_adapt(np.full(1000, 0.8), 0.8, 0.5)
        tail = steps[-100:]
        assert (tail.max() - tail.min()) / tail.mean() < 0.01

    def test_all_accepted_strictly_increases(self):
        steps = dual_averaging_adapt(np.ones(300), 0.8, 0.1)
        assert np.all(np.diff(steps) > 0)

    def test_higher_target_gives_smaller_step(self):
        cfg = dict(n_samples=10, n_warmup=500, seed=2)
        hi = run_chain(std_normal(3), HmcConfig(target_accept=0.99, **cfg)).step_size
        lo = run_chain(std_normal(3), HmcConfig(target_accept=0.8, **cfg)).step_size
        assert hi < lo

    def test_restart(self):
        da = DualAveraging(1.0, 0.8)
        da.update(0.1)
        da.restart(0.5)
        assert da.t == 0 and da.step_size == pytest.approx(0.5)


class TestWindows:
    def test_stan_schedule_1000(self):
        assert warmup_windows(1000) == [100, 150, 250, 450, 950]

    def test_short_warmup(self):
        ends = warmup_windows(100)
        assert ends == [90]

    def test_tiny(self):
        assert warmup_windows(10) == []

    @given(st.integers(20, 20_000))
    def test_monotone_and_bounded(self, n):
        ends = warmup_windows(n)
        assert ends == sorted(set(ends))
        assert all(0 < e <= n for e in ends)


class TestNuts:
    def test_five_dimensional_normal(self):
        target = std_normal(5)
        chain = run_chain(target, HmcConfig(n_samples=4000, n_warmup=1000, target_accept=0.9, seed=3))
        d = chain.draws
        for i in range(5):
            ess = effective_sample_size(d[:, i])
            assert abs(d[:, i].mean()) < 3 * d[:, i].std() / np.sqrt(ess)
        assert np.all(np.abs(d.var(axis=0) - 1.0) < 0.1)
        assert chain.divergences == 0
        for i in range(5):
            # thin to reduce autocorrelation before the KS test
            assert stats.kstest(d[::4, i], "norm").pvalue > 1e-3

    @pytest.mark.parametrize("mode", ["identity", "diagonal", "dense"])
    def test_correlated_gaussian(self, mode):
        cov = np.array([[1.0, 0.9], [0.9, 1.0]])
        chain = run_chain(gaussian([1.0, -1.0], cov),
                          HmcConfig(n_samples=3000, n_warmup=1000, target_accept=0.8,
                                    mass_matrix_mode=mode, seed=5))
        d = chain.draws
        np.testing.assert_allclose(d.mean(axis=0), [1.0, -1.0], atol=0.15)
        assert np.corrcoef(d.T)[0, 1] == pytest.approx(0.9, abs=0.05)
        if mode == "dense":
            assert chain.inv_mass.shape == (2, 2)
            np.testing.assert_allclose(chain.inv_mass, cov, atol=0.2)
        if mode == "identity":
            np.testing.assert_array_equal(chain.inv_mass, 1.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_one_dimensional_no_divergences(self, seed):
        chain = run_chain(std_normal(1), HmcConfig(n_samples=500, n_warmup=300, seed=seed))
        assert chain.divergences == 0

    def test_scaled_metric_adapts(self):
        chain = run_chain(gaussian([0.0, 0.0], np.diag([100.0, 0.01])),
                          HmcConfig(n_samples=500, n_warmup=1000, target_accept=0.8, seed=1))
        assert chain.inv_mass[0] / chain.inv_mass[1] > 1000

    def test_deterministic(self):
        cfg = HmcConfig(n_samples=50, n_warmup=50, seed=9)
        a = run_chain(std_normal(3), cfg)
        b = run_chain(std_normal(3), cfg)
        np.testing.assert_array_equal(a.draws, b.draws)
        assert a.step_size == b.step_size

    def test_non_finite_initial(self):
        with pytest.raises(InvalidInputError):
            run_chain(std_normal(2), HmcConfig(n_samples=5, n_warmup=5), initial=[np.nan, 0.0])

    def test_wrong_initial_shape(self):
        with pytest.raises(InvalidInputError):
            run_chain(std_normal(2), HmcConfig(n_samples=5, n_warmup=5), initial=[0.0])

    def test_sampling_only(self):
        chain = run_chain(std_normal(2), HmcConfig(n_samples=20, n_warmup=0, initial_step_size=0.5))
        assert chain.draws.shape == (20, 2) and chain.step_size == 0.5

    def test_warmup_only(self):
        chain = run_chain(std_normal(2), HmcConfig(n_samples=0, n_warmup=30))
        assert chain.draws.shape == (0, 2) and chain.final_state.shape == (2,)

    def test_tree_depth_cap(self, rng):
        target = std_normal(2)
        _, st_ = nuts_draw(target, np.zeros(2), 1e-4, np.ones(2), rng, max_depth=3)
        assert st_["tree_depth"] <= 3 and st_["n_leapfrog"] <= 7

    def test_divergence_flag(self, rng):
        _, st_ = nuts_draw(std_normal(2), np.ones(2), 50.0, np.ones(2), rng, max_depth=4)
        assert st_["diverging"]

    @settings(max_examples=10)
    @given(seed=st.integers(0, 2**31))
    def test_draws_finite(self, seed):
        chain = run_chain(std_normal(2), HmcConfig(n_samples=20, n_warmup=20, seed=seed))
        assert np.all(np.isfinite(chain.draws))
        assert np.all((chain.accept_stats >= 0) & (chain.accept_stats <= 1))


class TestDiagnostics:
    def test_ess_iid(self, rng):
        ess = effective_sample_size(rng.normal(size=4000))
        assert 3000 < ess < 5200

    def test_ess_ar1(self, rng):
        x = np.empty(20_000)
        x[0] = 0
        for i in range(1, x.size):
            x[i] = 0.9 * x[i - 1] + rng.normal()
        # tau = (1 + 0.9) / (1 - 0.9) = 19
        assert 20_000 / 30 < effective_sample_size(x) < 20_000 / 12

    def test_ess_constant(self):
        assert effective_sample_size(np.ones(10)) == 10.0

    def test_summary(self):
        s = summarize_draws(np.arange(101.0)[:, None], ["a"])
        assert s["a"]["q50"] == 50.0 and s["a"]["q05"] == 5.0 and s["a"]["mean"] == 50.0

    def test_export(self, tmp_path):
        chain = run_chain(std_normal(2), HmcConfig(n_samples=10, n_warmup=10))
        export_chain(chain, tmp_path / "c.csv", tmp_path / "c.json")
        rows = (tmp_path / "c.csv").read_text().splitlines()
        assert rows[0] == "x0,x1,log_density,accept_stat,tree_depth,n_leapfrog"
        assert len(rows) == 11
        assert float(rows[1].split(",")[0]) == chain.draws[0, 0]
        summary = json.loads((tmp_path / "c.json").read_text())
        assert set(summary["parameters"]) == {"x0", "x1"}
