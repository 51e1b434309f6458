import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bathscatter.emitter import (EmitterParams, EmitterResponse, LorentzianFit, fit_lorentzians,
                                 gamma_kernel, response_freq, response_time)
from oracles import one_sided_fourier, random_fit, random_response, time_samples

W0 = 0.35 * 2 * np.pi


def lorentz_sum(terms, w):
    return sum(p / ((w - wn) ** 2 + g ** 2) for p, wn, g in terms)


def test_fit_recovers_two_peaks():
    w = np.linspace(2.0, 2.4, 401)
    truth = [(1e-4, 2.1, 0.01), (4e-5, 2.3, 0.004)]
    fit = fit_lorentzians(w, lorentz_sum(truth, w))
    assert fit.converged and fit.n_terms == 2
    for (p, wn, g), (pf, wf, gf) in zip(truth, fit.terms):
        assert wf == pytest.approx(wn, abs=1e-6)
        assert gf == pytest.approx(g, rel=1e-4)
        assert pf == pytest.approx(p, rel=1e-4)


@settings(max_examples=15)
@given(st.integers(0, 2 ** 32 - 1))
def test_fit_residual_small_for_exact_models(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    centers = np.sort(rng.choice(np.linspace(2.05, 2.35, 7), n, replace=False))
    truth = [(rng.uniform(0.5, 2) * g ** 2, c, g)
             for c, g in zip(centers, rng.uniform(0.005, 0.02, n))]
    w = np.linspace(2.0, 2.4, 400)
    fit = fit_lorentzians(w, lorentz_sum(truth, w), tol=1e-4)
    assert fit.residual < 1e-4
    assert fit.n_terms <= n


def test_fit_is_positive_and_in_window():
    w = np.linspace(2.0, 2.4, 200)
    y = lorentz_sum([(1e-3, 2.2, 0.05)], w) + 0.1 * np.exp(-((w - 2.3) / 0.03) ** 2)
    fit = fit_lorentzians(w, y, max_terms=4)
    for p, wn, g in fit.terms:
        assert p > 0 and g > 0 and 2.0 <= wn <= 2.4


@pytest.mark.parametrize("w,y", [
    (np.linspace(1, 2, 10), np.ones(10)),
    (np.linspace(1, 2, 60)[::-1], np.ones(60)),
    (np.linspace(1, 2, 60), -np.ones(60)),
    (np.linspace(1, 2, 60), np.zeros(60)),
])
def test_fit_rejects_bad_input(w, y):
    with pytest.raises(ValueError):
        fit_lorentzians(w, y)


def test_fit_warns_on_low_q():
    w = np.linspace(0.2, 3.0, 200)
    with pytest.warns(RuntimeWarning):
        fit_lorentzians(w, lorentz_sum([(1.0, 1.0, 0.4)], w))


def test_fit_json_roundtrip():
    fit = LorentzianFit(((1e-4, 2.1, 0.01), (2e-4, 2.3, 0.02)), (2.0, 2.4), 1e-5)
    assert LorentzianFit.from_json(fit.to_json()) == fit


def test_fit_rejects_nonpositive_terms():
    with pytest.raises(ValueError):
        LorentzianFit(((-1.0, 2.0, 0.1),), (1.0, 3.0))


def test_ww_response_closed_form():
    resp = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.2), 0.01)
    nu = np.linspace(2.1, 2.3, 7)
    np.testing.assert_allclose(response_freq(resp, nu), 1 / (1j * (W0 - nu) + 0.005), rtol=1e-15)


def test_from_im_green_sign():
    resp = EmitterResponse.from_im_green(EmitterParams(W0, 0.3), -0.25)
    assert resp.gamma == pytest.approx(2 * 0.09 * 0.25)


def test_decoupled_emitter_diverges_on_resonance():
    resp = EmitterResponse.non_markovian(EmitterParams(W0, 0.0), random_fit(np.random.default_rng(1)))
    assert response_freq(resp, W0) == complex(np.inf, 0)
    assert np.isfinite(response_freq(resp, W0 + 0.1))


def test_response_validation():
    with pytest.raises(ValueError):
        EmitterResponse(EmitterParams(W0, 0.1), mode="weisskopf_wigner")
    with pytest.raises(ValueError):
        EmitterResponse(EmitterParams(W0, 0.1), mode="non_markovian")
    with pytest.raises(ValueError):
        EmitterParams(-1.0, 0.1)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_poles_are_causal(seed):
    resp = random_response(np.random.default_rng(seed))
    s, _ = resp.poles
    assert np.all(s.imag < 0)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32 - 1))
def test_amplitude_bounded_and_residues_sum_to_one(seed):
    resp = random_response(np.random.default_rng(seed))
    t = np.linspace(0, 400, 2001)
    a = response_time(resp, t)
    assert a[0] == 1
    assert np.all(np.abs(a) <= 1 + 1e-9)
    _, c = resp.poles
    assert abs(np.sum(c) - 1) < 1e-10


def test_pole_expansion_matches_ode():
    resp = random_response(np.random.default_rng(7))
    t = np.linspace(0, 200, 801)
    s, c = resp.poles
    direct = np.exp(-1j * np.outer(t, s)) @ c
    np.testing.assert_allclose(response_time(resp, t), direct, atol=1e-10)


def test_fourier_transform_of_time_response():
    resp = random_response(np.random.default_rng(11))
    t, a = time_samples(resp)
    nu = W0 + np.linspace(-0.3, 0.3, 5)
    np.testing.assert_allclose(one_sided_fourier(t, a, nu), response_freq(resp, nu), rtol=1e-6)


def test_gamma_kernel_paths_agree():
    resp = random_response(np.random.default_rng(3))
    E = 2 * W0 + np.linspace(-0.4, 0.4, 9)
    np.testing.assert_allclose(gamma_kernel(resp, E, confluent=False),
                               gamma_kernel(resp, E, confluent=True), rtol=1e-10)


def test_gamma_kernel_ww():
    resp = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.2), 0.02)
    E = np.array([2 * W0, 2 * W0 + 0.05])
    np.testing.assert_allclose(gamma_kernel(resp, E), 1 / (1j * (2 * W0 - E) + 0.02), rtol=1e-15)


def test_confluent_generator_detected():
    # tune one auxiliary mode onto the emitter so two eigenvalues merge
    p, w, g = 1e-3, W0, 0.05
    V0 = np.sqrt(g ** 2 * np.pi / (4 * np.pi * p / g)) * 1.0
    resp = EmitterResponse.non_markovian(EmitterParams(W0, V0),
                                         LorentzianFit(((p, w, g),), (2.0, 2.4)))
    M = resp.generator
    disc = (M[0, 0] - M[1, 1]) ** 2 + 4 * M[0, 1] * M[1, 0]
    assert abs(disc) < 1e-12
    assert resp.is_confluent()
    E = 2 * W0 + np.array([-0.1, 0.0, 0.1])
    t, a = time_samples(resp, T=2000.0, n=80001)
    from scipy.integrate import simpson
    ref = np.array([simpson(a ** 2 * np.exp(1j * e * t), x=t) for e in E])
    np.testing.assert_allclose(gamma_kernel(resp, E), ref, rtol=1e-6)


def test_weak_coupling_limit():
    # with the emitter on a broad bath resonance the Lamb shift vanishes, so the
    # relative distance to the Lorentzian shrinks with every halving of V0
    fit = LorentzianFit(((0.02 * 0.5 ** 2, W0, 0.5),), (1.0, 3.5))
    dists = []
    for V0 in (0.16, 0.08, 0.04, 0.02, 0.01):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            resp = EmitterResponse.non_markovian(EmitterParams(W0, V0), fit)
        ww = resp.weak_coupling_limit()
        assert ww.gamma == pytest.approx(2 * V0 ** 2 * 0.02)
        nu = W0 + ww.gamma * np.linspace(-10, 10, 401)
        ref = response_freq(ww, nu)
        dists.append(np.linalg.norm(response_freq(resp, nu) - ref) / np.linalg.norm(ref))
    assert np.all(np.diff(dists) < 0)
    assert dists[-1] < 1e-4
