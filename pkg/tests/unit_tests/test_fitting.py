import pytest
import numpy as np
from unittest import TestCase
from pairlab.fitting import (nlls_fit, poisson_fit, poisson_sigma, derived_uncertainty, model_eval,
                             get_model, MODELS)


class TestFitting(TestCase):

    def test_model_catalog(self):
        for name, model in MODELS.items():
            assert get_model(name) is model
            assert get_model(model) is model
        with pytest.raises(ValueError):
            get_model('lorentzian')

    def test_model_jacobians_match_finite_differences(self):
        x = np.linspace(0.05, 3, 40)
        params = {
            'gaussian': [100., 1.2, 0.4, 3.],
            'triple_gaussian': [10., 30., 12., 1.5, 0.8, 0.2, 2.],
            'sinusoid': [50., 0.8, 3.1, 0.4],
            'harmonic': [10., 1., -2.],
            'quadratic': [149e6],
            'sigmoid': [6.],
            'power_law': [2., 1.7, 0.5],
        }
        for name, p in params.items():
            p = np.array(p, dtype=float)
            _, jac = model_eval(name, p, x)
            for i in range(len(p)):
                h = 1e-6 * max(abs(p[i]), 1.)
                up, down = p.copy(), p.copy()
                up[i] += h
                down[i] -= h
                numeric = (model_eval(name, up, x)[0] - model_eval(name, down, x)[0]) / (2 * h)
                np.testing.assert_allclose(jac[:, i], numeric, rtol=1e-4, atol=1e-6 * np.abs(numeric).max(),
                                           err_msg=f'{name} derivative {i}')

    def test_gaussian_exact_recovery(self):
        x = np.linspace(-1000, 1000, 201)
        truth = {'amplitude': 100., 'center': 30., 'sigma': 120., 'floor': 5.}
        y, _ = model_eval('gaussian', truth, x)

        fit = nlls_fit('gaussian', x, y, 1., {'amplitude': 80., 'center': 0., 'sigma': 200., 'floor': 0.})

        assert fit.converged
        for name, value in truth.items():
            assert fit.param(name) == pytest.approx(value, rel=1e-6, abs=1e-6)
        assert fit.chi2 < 1e-12
        assert fit.dof == 201 - 4

    def test_quadratic_closed_form(self):
        p = np.array([0.01, 0.02, 0.04, 0.08])
        y = 149e6 * p ** 2
        sigma = 0.01 * y

        fit = nlls_fit('quadratic', p, y, sigma, {'R': 1e8})

        assert fit.param('R') == pytest.approx(149e6, rel=1e-9)
        # linear model: var(R) = 1 / sum(p^4 / sigma^2)
        expected_err = 1 / np.sqrt((p ** 4 / sigma ** 2).sum())
        assert fit.err('R') == pytest.approx(expected_err, rel=1e-6)

    def test_sigma_scaling_leaves_parameters(self):
        rng = np.random.default_rng(3)
        x = np.linspace(0, 4 * np.pi, 48)
        y = model_eval('harmonic', [100., 20., -5.], x)[0] + rng.normal(0, 2, len(x))

        fit = nlls_fit('harmonic', x, y, 2., [90., 0., 0.])
        scaled = nlls_fit('harmonic', x, y, 20., [90., 0., 0.])

        np.testing.assert_allclose(fit.values, scaled.values, rtol=1e-8)
        np.testing.assert_allclose(np.sqrt(np.diag(scaled.covariance)),
                                   10 * np.sqrt(np.diag(fit.covariance)), rtol=1e-8)

    def test_scale_covariance(self):
        rng = np.random.default_rng(4)
        x = np.linspace(0, 4 * np.pi, 60)
        y = model_eval('harmonic', [50., 5., 5.], x)[0] + rng.normal(0, 3, len(x))

        plain = nlls_fit('harmonic', x, y, 1., [50., 0., 0.])
        scaled = nlls_fit('harmonic', x, y, 1., [50., 0., 0.], scale_covariance=True)

        np.testing.assert_allclose(scaled.covariance, plain.covariance * plain.reduced_chi2, rtol=1e-8)

    def test_bounded_fit_keeps_constraints(self):
        x = np.linspace(0, 2 * np.pi, 24, endpoint=False)
        y = model_eval('sinusoid', [1000., 0.97, np.pi, 0.3], x)[0]

        fit = nlls_fit('sinusoid', x, y, np.sqrt(y), {'amplitude': 900., 'visibility': 0.5, 'period': np.pi,
                                                      'phase': 0.}, bounded=True)

        assert 0 <= fit.param('visibility') <= 1
        assert fit.param('visibility') == pytest.approx(0.97, abs=1e-6)
        assert fit.param('period') == pytest.approx(np.pi, rel=1e-6)

    def test_sigmoid_stays_positive(self):
        p = np.array([0.03, 0.05, 0.07, 0.1, 0.12])
        y = model_eval('sigmoid', [6.], p)[0]

        fit = nlls_fit('sigmoid', p, y, 0.1 * y, {'a': 0.5}, bounded=True)

        assert fit.param('a') > 0
        assert fit.param('a') == pytest.approx(6., rel=1e-6)

    def test_invalid_inputs(self):
        x = np.arange(5, dtype=float)
        y = x ** 2
        with pytest.raises(ValueError):
            nlls_fit('quadratic', x, y, 0., {'R': 1.})
        with pytest.raises(ValueError):
            nlls_fit('quadratic', x, np.r_[y[:-1], np.nan], 1., {'R': 1.})
        with pytest.raises(ValueError):
            nlls_fit('quadratic', x, y[:-1], 1., {'R': 1.})
        with pytest.raises(ValueError):
            nlls_fit('gaussian', x[:3], y[:3], 1., [1., 0., 1., 0.])
        with pytest.raises(ValueError):
            nlls_fit('gaussian', x, y, 1., {'amplitude': 1.})

    def test_poisson_sigma(self):
        np.testing.assert_array_equal(poisson_sigma([0, 1, 4, 9]), [1., 1., 2., 3.])

    def test_poisson_fit_recovers_low_count_floor(self):
        rng = np.random.default_rng(1550)
        x = np.arange(-5000., 5000., 80.) + 40.
        truth = {'amplitude': 40., 'center': 120., 'sigma': 140., 'floor': 0.8}
        counts = rng.poisson(model_eval('gaussian', truth, x)[0])

        fit = poisson_fit('gaussian', x, counts, {'amplitude': counts.max(), 'center': 0., 'sigma': 100.,
                                                  'floor': 1.}, bounded=True)

        assert fit.converged
        for name in ('center', 'sigma', 'floor'):
            assert abs(fit.param(name) - truth[name]) < 4 * fit.err(name)

    def test_derived_uncertainty(self):
        p = np.array([0.01, 0.02, 0.04])
        y = 2. * p ** 2
        fit = nlls_fit('quadratic', p, y, 0.05 * y, {'R': 1.})

        assert derived_uncertainty(fit, [3.]) == pytest.approx(3 * fit.err('R'))
        assert derived_uncertainty(fit, [0.]) == 0.

    def test_to_dict(self):
        p = np.array([0.01, 0.02, 0.04])
        fit = nlls_fit('quadratic', p, 5 * p ** 2, 1e-6, {'R': 1.})
        out = fit.to_dict()
        assert out['model'] == 'quadratic'
        assert out['params']['R'] == pytest.approx(5.)
        assert set(out) >= {'std_errs', 'reduced_chi2', 'converged', 'iterations'}

    def test_pull_distribution(self):
        rng = np.random.default_rng(500)
        x = np.linspace(-600, 600, 61)
        truth = np.array([50., 20., 140., 5.])
        clean = model_eval('gaussian', truth, x)[0]
        pulls = []
        for _ in range(500):
            y = clean + rng.normal(0, 2., len(x))
            fit = nlls_fit('gaussian', x, y, 2., truth * 1.1)
            pulls.append((fit.values - truth) / np.sqrt(np.diag(fit.covariance)))
        pulls = np.array(pulls)
        np.testing.assert_allclose(pulls.mean(axis=0), 0, atol=0.1)
        np.testing.assert_allclose(pulls.var(axis=0), 1, atol=0.2)
