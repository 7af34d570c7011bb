import numpy as np
import pytest
import sympy as sp

from dualfuse.diffusion import (FINAL, GaussianMixture, NoiseSchedule, cfg_combine, ddim_step,
                                eps_predict, forward_noise, posterior_x0, sample_ddim)
from dualfuse.oracles import fd_score, random_mixture


class FixedAlpha:
    """Schedule stand-in exposing a single alpha_bar at index 0."""

    def __init__(self, alpha_bar):
        self.value = alpha_bar

    def alpha_bar_at(self, t):
        return 1.0 if t == FINAL else self.value


@pytest.fixture(scope="module")
def schedule():
    return NoiseSchedule()


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestSchedule:
    def test_alpha_bar(self, schedule):
        ab = schedule.alpha_bar
        assert ab.shape == (1000,)
        assert np.all(np.diff(ab) < 0)
        assert np.all((ab > 0) & (ab < 1))
        assert schedule.betas[0] == 1e-4 and schedule.betas[-1] == 0.02

    def test_step_indices(self, schedule):
        idx = schedule.step_indices
        assert len(idx) == 50
        assert np.all(np.diff(idx) < 0)
        assert schedule.alpha_bar[idx[0]] == schedule.alpha_bar[idx].min()
        assert idx[-1] == 0

    def test_transitions_end_clean(self, schedule):
        tr = schedule.transitions()
        assert len(tr) == 50 and tr[-1] == (0, FINAL)

    def test_bad_index(self, schedule):
        with pytest.raises(IndexError):
            schedule.alpha_bar_at(1000)


class TestMixture:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([0.5, 0.6]), np.zeros((2, 1, 2, 2)), 1.0)

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([1.0]), np.zeros((1, 1, 2, 2)), -1.0)


class TestForwardNoise:
    def test_clean_limit(self, schedule, rng):
        x0, eps = rng.standard_normal((2, 3, 4, 4))
        assert np.array_equal(forward_noise(x0, FINAL, eps, schedule), x0)
        np.testing.assert_allclose(forward_noise(x0, 0, eps, schedule), x0, atol=0.05)

    def test_zero_noise(self, schedule, rng):
        x0 = rng.standard_normal((3, 4, 4))
        out = forward_noise(x0, 500, np.zeros_like(x0), schedule)
        assert np.array_equal(out, np.sqrt(schedule.alpha_bar[500]) * x0)

    def test_scalar_formula(self, schedule, rng):
        x0, eps = rng.standard_normal((2, 2, 3, 3))
        out = forward_noise(x0, 500, eps, schedule)
        ab = float(schedule.alpha_bar[500])
        for i, (a, e) in enumerate(zip(x0.ravel(), eps.ravel())):
            assert abs(out.ravel()[i] - (ab**0.5 * a + (1 - ab) ** 0.5 * e)) <= 1e-12


def quadrature_posterior_mean(x_t, gm, alpha_bar, points=40):
    """E[x0 | x_t] by brute-force tensor-grid integration over x0 (4 dims)."""
    a, s2 = np.sqrt(alpha_bar), 1.0 - alpha_bar
    flat_means = gm.means.reshape(gm.n_components, -1)
    d = flat_means.shape[1]
    post_sd = np.sqrt(gm.variance * s2 / (s2 + alpha_bar * gm.variance))
    lo = min(flat_means.min(), x_t.min() / a) - 10 * max(post_sd, np.sqrt(gm.variance))
    hi = max(flat_means.max(), x_t.max() / a) + 10 * max(post_sd, np.sqrt(gm.variance))
    axis = np.linspace(lo, hi, points)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    log_prior = np.stack([
        np.log(w) - ((pts - m) ** 2).sum(axis=1) / (2 * gm.variance)
        for w, m in zip(gm.weights, flat_means)
    ])
    log_prior = np.logaddexp.reduce(log_prior, axis=0)
    log_lik = -((x_t.ravel() - a * pts) ** 2).sum(axis=1) / (2 * s2)
    logw = log_prior + log_lik
    w = np.exp(logw - logw.max())
    return (w[:, None] * pts).sum(axis=0) / w.sum()


class TestPosterior:
    def test_degenerate_prior(self, schedule, rng):
        mu = rng.standard_normal((1, 2, 2, 2))
        x_t = rng.standard_normal((2, 2, 2))
        for var in (0.0, 1e-14):
            out = posterior_x0(x_t, 300, GaussianMixture(np.array([1.0]), mu, var), schedule)
            np.testing.assert_allclose(out, mu[0], atol=1e-12)

    def test_single_gaussian_gain_symbolic(self, rng):
        # E[x0|x_t] for x0 ~ N(mu, s0), x_t = a x0 + sqrt(1 - a^2) e, derived by completing the square
        x0, xt, mu, a, s0 = sp.symbols("x0 x_t mu a s0", positive=True)
        log_joint = -(x0 - mu) ** 2 / (2 * s0) - (xt - a * x0) ** 2 / (2 * (1 - a**2))
        mode = sp.solve(sp.diff(log_joint, x0), x0)[0]
        gain = sp.simplify(sp.diff(mode, xt))
        value = gain.subs({a: 1 / sp.sqrt(2), s0: 1})
        assert sp.simplify(value - 1 / sp.sqrt(2)) == 0

        mu_v = rng.standard_normal((1, 1, 2, 2))
        gm = GaussianMixture(np.array([1.0]), mu_v, 1.0)
        x_t = rng.standard_normal((1, 2, 2))
        expect = mu_v[0] + (1 / np.sqrt(2)) * (x_t - mu_v[0] / np.sqrt(2))
        np.testing.assert_allclose(posterior_x0(x_t, 0, gm, FixedAlpha(0.5)), expect, rtol=1e-14)

    @pytest.mark.parametrize("alpha_bar", [0.3, 0.7])
    def test_two_components_quadrature(self, rng, alpha_bar):
        gm = GaussianMixture(np.array([0.3, 0.7]), rng.standard_normal((2, 1, 2, 2)), 0.5)
        x_t = np.sqrt(alpha_bar) * gm.means[1] + 0.5 * rng.standard_normal((1, 2, 2))
        got = posterior_x0(x_t, 0, gm, FixedAlpha(alpha_bar)).ravel()
        expect = quadrature_posterior_mean(x_t, gm, alpha_bar)
        np.testing.assert_allclose(got, expect, rtol=1e-6)

    def test_tower_property(self, schedule):
        rng = np.random.default_rng(11)
        gm = random_mixture(rng, 3, shape=(1, 2, 2))
        n, t = 10_000, 400
        ks = rng.choice(3, size=n, p=gm.weights)
        x0 = gm.means[ks] + np.sqrt(gm.variance) * rng.standard_normal((n, 1, 2, 2))
        noise = rng.standard_normal((n, 1, 2, 2))
        est = np.stack([posterior_x0(forward_noise(x0[i], t, noise[i], schedule), t, gm, schedule)
                        for i in range(n)])
        target = np.tensordot(gm.weights, gm.means, axes=1)
        se = est.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(est.mean(axis=0) - target) <= 3 * se + 1e-12)


class TestEpsPredict:
    def test_noiseless_center(self, schedule, rng):
        mu = rng.standard_normal((1, 3, 4, 4))
        gm = GaussianMixture(np.array([1.0]), mu, 0.0)
        x_t = np.sqrt(schedule.alpha_bar[250]) * mu[0]
        np.testing.assert_allclose(eps_predict(x_t, 250, gm, schedule), 0.0, atol=1e-12)

    def test_single_gaussian_affine(self, schedule, rng):
        mu = rng.standard_normal((1, 1, 3, 3))
        gm = GaussianMixture(np.array([1.0]), mu, 0.3)
        t = 420
        ab = schedule.alpha_bar[t]
        v = (1 - ab) + ab * 0.3
        x_t = rng.standard_normal((1, 3, 3))
        expect = (1 - ab) / (np.sqrt(1 - ab) * v) * (x_t - np.sqrt(ab) * mu[0])
        np.testing.assert_allclose(eps_predict(x_t, t, gm, schedule), expect, rtol=1e-12)

    def test_three_component_finite_difference(self, schedule):
        rng = np.random.default_rng(3)
        gm = random_mixture(rng, 3, shape=(1, 4, 4))
        for t in (50, 400, 900):
            x_t = forward_noise(gm.means[0], t, rng.standard_normal((1, 4, 4)), schedule)
            numeric = -np.sqrt(1 - schedule.alpha_bar[t]) * fd_score(x_t, t, gm, schedule)
            got = eps_predict(x_t, t, gm, schedule)
            assert np.linalg.norm(got - numeric) / np.linalg.norm(numeric) <= 1e-4

    def test_rejects_clean_level(self, schedule):
        gm = GaussianMixture(np.array([1.0]), np.zeros((1, 1, 2, 2)), 1.0)
        with pytest.raises(ValueError):
            eps_predict(np.zeros((1, 2, 2)), FINAL, gm, schedule)


class TestCfg:
    def test_identities(self, rng):
        c, u = rng.standard_normal((2, 3, 4))
        assert np.array_equal(cfg_combine(c, u, 1.0), c)
        assert np.array_equal(cfg_combine(c, u, 0.0), u)
        for w in (0.0, 2.5, 7.0):
            assert np.array_equal(cfg_combine(c, c, w), c)


class TestDdim:
    def test_final_step_returns_x0_estimate(self, schedule, rng):
        x, e = rng.standard_normal((2, 3, 4))
        ab = schedule.alpha_bar[0]
        expect = (x - np.sqrt(1 - ab) * e) / np.sqrt(ab)
        np.testing.assert_allclose(ddim_step(x, e, 0, FINAL, schedule), expect, rtol=1e-15)

    def test_zero_eps(self, schedule, rng):
        x = rng.standard_normal((3, 4))
        out = ddim_step(x, np.zeros_like(x), 500, 480, schedule)
        ratio = np.sqrt(schedule.alpha_bar[480] / schedule.alpha_bar[500])
        np.testing.assert_allclose(out, ratio * x, rtol=1e-14)

    def test_rejects_wrong_direction(self, schedule, rng):
        x = rng.standard_normal(3)
        with pytest.raises(ValueError):
            ddim_step(x, x, 480, 500, schedule)

    def test_contraction(self, schedule):
        rng = np.random.default_rng(0)
        mu = rng.standard_normal((1, 3, 8, 8))
        gm = GaussianMixture(np.array([1.0]), mu, 0.0)
        x = sample_ddim(lambda x, t: eps_predict(x, t, gm, schedule),
                        rng.standard_normal((3, 8, 8)), schedule)
        assert np.max(np.abs(x - mu[0])) <= 1e-6
