import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmcme import gmm
from gmmcme.complex_linalg import default_ridge, standard_complex_normal
from gmmcme.errors import CorruptFile, DegenerateComponent, DimensionMismatch

from conftest import random_psd


def random_model(rng, k, n, spread=2.0):
    weights = rng.dirichlet(np.ones(k))
    means = spread * standard_complex_normal(rng, (k, n))
    covs = np.stack([random_psd(rng, n) / n for _ in range(k)])
    return gmm.GmmModel(weights, means, covs)


def naive_log_likelihood(model, x):
    """Direct density sum with explicit inverses and determinants (no log-sum-exp)."""
    total = 0.0
    n = model.dim
    for h in x:
        dens = 0.0
        for w, mu, c in zip(model.weights, model.means, model.covariances):
            d = h - mu
            quad = np.real(d.conj() @ np.linalg.inv(c) @ d)
            dens += w * np.exp(-quad) / (np.pi**n * np.real(np.linalg.det(c)))
        total += np.log(dens)
    return total


class TestModel:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            gmm.GmmModel([0.5, 0.6], np.zeros((2, 1)), np.ones((2, 1, 1)))
        with pytest.raises(DimensionMismatch):
            gmm.GmmModel([1.0], np.zeros((1, 2)), np.ones((1, 3, 3)))


class TestLogLikelihood:
    def test_standard_at_origin(self):
        model = gmm.GmmModel([1.0], np.zeros((1, 1)), np.ones((1, 1, 1)))
        assert gmm.log_likelihood(model, np.zeros((1, 1))) == pytest.approx(-np.log(np.pi), abs=1e-15)

    def test_identical_components_collapse(self, rng):
        one = random_model(rng, 1, 3)
        two = gmm.GmmModel([0.5, 0.5], np.repeat(one.means, 2, 0), np.repeat(one.covariances, 2, 0))
        x = standard_complex_normal(rng, (20, 3))
        assert gmm.log_likelihood(two, x) == pytest.approx(gmm.log_likelihood(one, x), rel=1e-13)

    def test_against_naive_sum(self, rng):
        model = random_model(rng, 3, 2)
        x = gmm.sample_gmm(model, rng, 10)
        assert gmm.log_likelihood(model, x) == pytest.approx(naive_log_likelihood(model, x), abs=1e-9)

    def test_no_underflow_in_high_dimension(self, rng):
        model = random_model(rng, 2, 64, spread=20.0)
        x = gmm.sample_gmm(model, rng, 5) + 30.0
        assert np.isfinite(gmm.log_likelihood(model, x))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            gmm.log_likelihood(random_model(rng, 2, 3), np.zeros((4, 2)))


class TestResponsibilities:
    def test_single_component(self, rng):
        model = random_model(rng, 1, 3)
        np.testing.assert_array_equal(gmm.responsibilities(model, np.ones(3), np.eye(3)), [1.0])

    def test_separated_means(self):
        mu = np.array([6.0 + 2j, -3.0 + 4j])
        model = gmm.GmmModel([0.5, 0.5], np.stack([mu, -mu]), np.stack([np.eye(2)] * 2))
        noise = 0.1 * np.eye(2)
        r = gmm.responsibilities(model, mu, noise)
        # exponents differ by |2 mu|^2 / 1.1 (independent closed form)
        expected_first = 1.0 / (1.0 + np.exp(-4 * np.vdot(mu, mu).real / 1.1))
        assert r[0] > 0.99
        assert r[0] == pytest.approx(expected_first, rel=1e-12)

    def test_zero_weight(self, rng):
        base = random_model(rng, 3, 2)
        model = gmm.GmmModel([0.4, 0.0, 0.6], base.means, base.covariances)
        y = standard_complex_normal(rng, (50, 2))
        r = gmm.responsibilities(model, y, 0.3 * np.eye(2))
        assert np.all(r[:, 1] == 0.0)
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
    def test_weight_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        model = random_model(rng, 4, 3)
        scaled = model.weights * scale
        model2 = gmm.GmmModel(scaled / scaled.sum(), model.means, model.covariances)
        y = standard_complex_normal(rng, (5, 3)) * 2
        r1 = gmm.responsibilities(model, y, 0.5 * np.eye(3))
        r2 = gmm.responsibilities(model2, y, 0.5 * np.eye(3))
        np.testing.assert_allclose(r1, r2, rtol=1e-10, atol=1e-300)
        np.testing.assert_array_equal(r1.argmax(axis=1), r2.argmax(axis=1))


class TestReceivePdf:
    def test_zero_noise(self, rng):
        model = random_model(rng, 2, 3)
        out = gmm.receive_pdf(model, np.zeros((3, 3)))
        np.testing.assert_array_equal(out.covariances, model.covariances)
        np.testing.assert_array_equal(out.means, model.means)

    def test_isotropic_noise(self, rng):
        model = random_model(rng, 3, 4)
        out = gmm.receive_pdf(model, 0.25 * np.eye(4))
        for a, b in zip(out.covariances, model.covariances):
            np.testing.assert_array_equal(np.diag(a), np.diag(b) + 0.25)

    def test_monte_carlo_convolution(self):
        rng = np.random.default_rng(17)
        model = gmm.GmmModel([0.3, 0.7], np.array([[-1.5 + 0.5j], [1.0 - 0.2j]]), np.array([[[0.4]], [[0.9]]]))
        sigma_sq = 0.5
        h = gmm.sample_gmm(model, rng, 100_000)
        y = (h + np.sqrt(sigma_sq) * standard_complex_normal(rng, (100_000, 1)))[:, 0]
        edges = np.linspace(-6, 6, 51)
        emp, _ = np.histogram(y.real, bins=edges)
        emp = emp / len(y)
        # 50-bin histogram of Re(y) vs. receive_pdf density integrated over Im and each bin
        recv = gmm.receive_pdf(model, sigma_sq * np.eye(1))
        t_re = np.linspace(-6, 6, 50 * 40 + 1)
        t_im = np.linspace(-8, 8, 801)
        re, im = np.meshgrid(t_re, t_im, indexing="ij")
        pts = (re + 1j * im).reshape(-1, 1)
        lw = np.stack([np.log(w) + gmm.component_log_densities(pts, recv.means[k:k + 1], recv.factors()[k:k + 1])[:, 0]
                       for k, w in enumerate(recv.weights)])
        dens = np.exp(np.logaddexp.reduce(lw, axis=0)).reshape(re.shape)
        marginal = np.trapezoid(dens, t_im, axis=1)
        probs = np.array([np.trapezoid(marginal[40 * i:40 * i + 41], t_re[40 * i:40 * i + 41]) for i in range(50)])
        tv = 0.5 * np.sum(np.abs(emp - probs))
        assert tv < 0.05


class TestSampling:
    def test_single_component_matches_gaussian(self, rng):
        model = random_model(rng, 1, 3)
        x = gmm.sample_gmm(model, np.random.default_rng(1), 20_000)
        emp = (x - model.means[0]).T @ (x - model.means[0]).conj() / len(x)
        assert np.linalg.norm(emp - model.covariances[0]) / np.linalg.norm(model.covariances[0]) < 0.05

    def test_zero_weight_never_drawn(self, rng):
        base = random_model(rng, 2, 1)
        model = gmm.GmmModel([1.0, 0.0], base.means, base.covariances)
        _, labels = gmm.sample_gmm(model, rng, 100_000, return_labels=True)
        assert np.all(labels == 0)

    def test_frequencies(self, rng):
        base = random_model(rng, 3, 1)
        model = gmm.GmmModel([0.2, 0.5, 0.3], base.means, base.covariances)
        _, labels = gmm.sample_gmm(model, rng, 100_000, return_labels=True)
        freq = np.bincount(labels, minlength=3) / 100_000
        np.testing.assert_allclose(freq, model.weights, atol=0.02)

    def test_deterministic(self, rng):
        model = random_model(rng, 3, 2)
        a = gmm.sample_gmm(model, np.random.default_rng(4), 100)
        b = gmm.sample_gmm(model, np.random.default_rng(4), 100)
        assert a.tobytes() == b.tobytes()


class TestFitEm:
    def test_single_component_closed_form(self, rng):
        x = gmm.sample_gmm(random_model(rng, 1, 3), rng, 500)
        model = gmm.fit_em(x, 1).model
        mean = x.mean(axis=0)
        cov = (x - mean).T @ (x - mean).conj() / len(x)
        cov = cov + default_ridge(cov) * np.eye(3)
        np.testing.assert_array_equal(model.weights, [1.0])
        np.testing.assert_allclose(model.means[0], mean, rtol=1e-12)
        np.testing.assert_allclose(model.covariances[0], cov, rtol=1e-10, atol=1e-13)

    def test_single_component_init_independent(self, rng):
        x = gmm.sample_gmm(random_model(rng, 1, 4), rng, 300)
        fits = [
            gmm.fit_em(x, 1, gmm.EmConfig(seed=s, init_strategy=init)).model
            for s, init in itertools.product([0, 1], list(gmm.InitStrategy))
        ]
        for f in fits[1:]:
            np.testing.assert_allclose(f.means, fits[0].means, rtol=1e-12)
            np.testing.assert_allclose(f.covariances, fits[0].covariances, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("init", list(gmm.InitStrategy))
    def test_recovers_separated_mixture(self, init):
        rng = np.random.default_rng(8)
        true_means = np.array([[5.0 + 5.0j, 5.0 - 2.0j], [-5.0 - 3.0j, -4.0 + 5.0j]])
        truth = gmm.GmmModel([0.3, 0.7], true_means, np.stack([np.eye(2)] * 2))
        x = gmm.sample_gmm(truth, rng, 2000)
        fit = gmm.fit_em(x, 2, gmm.EmConfig(seed=3, init_strategy=init)).model
        order = np.argsort(fit.means[:, 0].real)[::-1]
        for k, j in enumerate(order):
            assert np.linalg.norm(fit.means[j] - true_means[k]) / np.linalg.norm(true_means[k]) < 0.05
            assert abs(fit.weights[j] - truth.weights[k]) < 0.05

    @pytest.mark.parametrize("seed", range(6))
    def test_trace_monotone(self, seed):
        rng = np.random.default_rng(seed)
        n, k = 1 + seed % 4, 1 + seed % 3 + 1
        x = gmm.sample_gmm(random_model(rng, k, n), rng, 400)
        result = gmm.fit_em(x, k, gmm.EmConfig(seed=seed))
        trace = np.array(result.log_likelihood_trace)
        assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))
        assert result.log_likelihood_trace[-1] == pytest.approx(gmm.log_likelihood(result.model, x) / len(x), rel=1e-12)

    def test_fitted_model_invariants(self, rng):
        x = gmm.sample_gmm(random_model(rng, 3, 3), rng, 600)
        model = gmm.fit_em(x, 3, gmm.EmConfig(seed=1)).model
        assert model.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(model.weights >= 0)
        model.factors()

    def test_collapsed_component_is_reseeded(self, caplog):
        rng = np.random.default_rng(0)
        x = np.repeat(rng.standard_normal((2, 2)) + 0j, [20, 20], axis=0) + 1e-3 * rng.standard_normal((40, 2))
        with caplog.at_level(logging.WARNING):
            result = gmm.fit_em(x, 8, gmm.EmConfig(seed=0))
        assert result.reinitialized
        assert "re-seeding" in caplog.text
        assert result.model.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_repeated_collapse_raises(self, monkeypatch, rng):
        real = gmm._weighted_log_densities

        def starve_last(model, x, factors):
            out = real(model, x, factors)
            out[:, -1] = -np.inf
            return out

        monkeypatch.setattr(gmm, "_weighted_log_densities", starve_last)
        x = standard_complex_normal(rng, (50, 2))
        with pytest.raises(DegenerateComponent):
            gmm.fit_em(x, 3, gmm.EmConfig(seed=0))

    def test_needs_enough_samples(self):
        with pytest.raises(ValueError):
            gmm.fit_em(np.zeros((2, 3)), 3)
        with pytest.raises(ValueError):
            gmm.EmConfig(rel_tolerance=1.5)


class TestPersistence:
    def test_roundtrip(self, tmp_path, rng):
        model = random_model(rng, 3, 4)
        gmm.save_model(model, tmp_path / "m.cgmm")
        back = gmm.load_model(tmp_path / "m.cgmm")
        for attr in ("weights", "means", "covariances"):
            assert getattr(back, attr).tobytes() == getattr(model, attr).tobytes()

    def test_header(self, tmp_path, rng):
        gmm.save_model(random_model(rng, 2, 3), tmp_path / "m.cgmm")
        raw = (tmp_path / "m.cgmm").read_bytes()
        assert raw[:4] == b"CGMM"
        assert np.frombuffer(raw, "<u4", 3, 4).tolist() == [1, 2, 3]
        assert len(raw) == 16 + 8 * 2 + 16 * 2 * 3 + 16 * 2 * 6

    def test_wrong_magic(self, tmp_path, rng):
        gmm.save_model(random_model(rng, 2, 2), tmp_path / "m.cgmm")
        raw = (tmp_path / "m.cgmm").read_bytes()
        (tmp_path / "bad").write_bytes(b"CHDS" + raw[4:])
        with pytest.raises(CorruptFile):
            gmm.load_model(tmp_path / "bad")
        (tmp_path / "short").write_bytes(raw[:-3])
        with pytest.raises(CorruptFile):
            gmm.load_model(tmp_path / "short")

    def test_likelihood_identical_after_reload(self, tmp_path, rng):
        x = gmm.sample_gmm(random_model(rng, 2, 3), rng, 300)
        model = gmm.fit_em(x, 2, gmm.EmConfig(seed=2)).model
        gmm.save_model(model, tmp_path / "m.cgmm")
        assert gmm.log_likelihood(gmm.load_model(tmp_path / "m.cgmm"), x) == gmm.log_likelihood(model, x)
