import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bathscatter import fdfd, smatrix, twophoton
from bathscatter.emitter import EmitterParams, EmitterResponse
from bathscatter.twophoton import GaussianInput, WindowError
from oracles import random_response

W0 = 0.35 * 2 * np.pi


def ww(V0=0.3):
    return EmitterResponse.weisskopf_wigner(EmitterParams(W0, V0), V0 ** 2 / 2)


def small_kernel(resp=None, n_omega=41, n_theta=12, tau=220 / W0):
    return twophoton.homogeneous_kernel(resp or ww(), GaussianInput(W0, tau), 1.0, n_omega, n_theta)


def test_input_validation():
    with pytest.raises(ValueError):
        GaussianInput(W0, -1.0)
    with pytest.raises(ValueError):
        GaussianInput(W0, 10.0, (1.0, 1.0))
    inp = GaussianInput(W0, 100.0)
    assert inp.mass_outside(inp.window()) < 1e-10
    assert inp.mass_outside((W0, W0 + 1)) == pytest.approx(0.5)


def test_window_check():
    inp = GaussianInput(W0, 100.0)
    f = np.ones((4, 5))
    with pytest.raises(WindowError):
        twophoton.kernel_from_far_fields(ww(), inp, np.linspace(W0 - 0.005, W0 + 0.005, 5),
                                         np.arange(4) * np.pi / 2, f, 1.0)


def test_kernel_exchange_symmetry_exact():
    K = small_kernel(random_response(np.random.default_rng(5))).dense()
    assert np.array_equal(K, K.T)


def test_kernel_antidiagonal_matches_connected_lineshape():
    resp = ww()
    kern = small_kernel(resp, n_omega=61)
    w = kern.freqs
    i = np.arange(w.size)
    j = i[::-1]  # omega_i + omega_j = 2 omega0 on a symmetric grid
    vals = np.array([kern.value(0, a, 0, b) for a, b in zip(i, j)])
    vals /= fdfd.homogeneous_far_field(w[i]) * fdfd.homogeneous_far_field(w[j])
    ref = np.array([smatrix.ww_connected_green2((w[a], w[b]), (W0, W0), W0, resp.gamma)
                    for a, b in zip(i, j)])
    ratio = vals / ref
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)


def test_takagi_random_symmetric():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 30)) + 1j * rng.normal(size=(30, 30))
    A = X + X.T
    s, Q = twophoton.takagi(A)
    assert np.all(np.diff(s) <= 1e-12) and np.all(s >= 0)
    np.testing.assert_allclose(Q.conj().T @ Q, np.eye(30), atol=1e-12)
    np.testing.assert_allclose((Q * s) @ Q.T, A, atol=1e-11)


def test_takagi_degenerate():
    rng = np.random.default_rng(1)
    U = np.linalg.qr(rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))[0]
    A = (U * np.array([3, 3, 3, 1, 1, 0.5])) @ U.T
    s, Q = twophoton.takagi(A)
    np.testing.assert_allclose(s, [3, 3, 3, 1, 1, 0.5], atol=1e-12)
    np.testing.assert_allclose((Q * s) @ Q.T, A, atol=1e-12)


def test_schmidt_normalization_and_residual():
    res = twophoton.schmidt(small_kernel(), n_modes=200)
    assert np.sum(res.lambdas ** 2) == pytest.approx(1.0, abs=1e-12)
    assert res.residual < 1e-10
    assert np.all(np.diff(res.lambdas) <= 1e-15)


def test_structured_matches_dense():
    kern = small_kernel(random_response(np.random.default_rng(2)), n_omega=25, n_theta=8)
    a = twophoton.schmidt(kern, 5)
    b = twophoton.schmidt(kern, 5, method="dense")
    np.testing.assert_allclose(a.lambdas, b.lambdas, rtol=1e-9)
    assert b.residual < 1e-8
    # modes agree up to sign
    for k in range(3):
        ov = abs(np.sum(np.conj(a.modes[k]) * b.modes[k] * a.weights))
        assert ov == pytest.approx(1.0, abs=1e-8)


def test_modes_orthonormal():
    res = twophoton.schmidt(small_kernel(), 5)
    v = (res.modes * np.sqrt(res.weights)).reshape(5, -1)
    np.testing.assert_allclose(v.conj() @ v.T, np.eye(5), atol=1e-10)


def test_reconstruction_with_all_modes():
    kern = small_kernel(n_omega=21, n_theta=6)
    res = twophoton.schmidt(kern, n_modes=kern.freqs.size * kern.angles.size)
    M = kern.dense(weighted=True) / res.norm
    assert np.linalg.norm(twophoton.reconstruct(res) - M) < 1e-8 * np.linalg.norm(M)


@settings(max_examples=10)
@given(st.complex_numbers(min_magnitude=1e-6, max_magnitude=1e6, allow_nan=False,
                          allow_infinity=False))
def test_rescaling_invariance(c):
    kern = small_kernel()
    a = twophoton.schmidt(kern, 5)
    b = twophoton.schmidt(kern.scaled(c), 5)
    np.testing.assert_allclose(a.lambdas, b.lambdas, rtol=1e-10)
    Sa, Aa = twophoton.marginals(a)
    Sb, Ab = twophoton.marginals(b)
    np.testing.assert_allclose(Sa, Sb, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(Aa, Ab, rtol=1e-8, atol=1e-12)


def test_marginals_unit_integral():
    res = twophoton.schmidt(small_kernel(), 3)
    S, A = twophoton.marginals(res)
    w_w = twophoton.trapezoid_weights(res.freqs)
    assert np.allclose(S @ w_w, 1.0)
    assert np.allclose(A.sum(axis=1) * 2 * np.pi / res.angles.size, 1.0)
    # homogeneous bath: isotropic emission
    np.testing.assert_allclose(A, 1 / (2 * np.pi), rtol=1e-10)


def test_zero_kernel_rejected():
    kern = small_kernel().scaled(0.0)
    with pytest.raises(ValueError):
        twophoton.schmidt(kern)


def test_outputs(tmp_path):
    res = twophoton.schmidt(small_kernel(), 4)
    doc = json.loads(res.to_json())
    assert len(doc["lambdas"]) == 4
    res.write_csv(tmp_path / "s.csv", tmp_path / "a.csv")
    S = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert S.shape == (res.freqs.size, 5)


def test_dense_size_guard():
    with pytest.raises(MemoryError):
        small_kernel(n_omega=101, n_theta=100).dense()


def test_far_field_interpolation():
    coarse = np.linspace(1.0, 2.0, 5)
    Fc = np.stack([coarse * (1 + 1j), 2 * coarse], axis=0)
    out = twophoton.interpolate_far_fields(coarse, Fc, [1.5, 1.25])
    np.testing.assert_allclose(out, [[1.5 + 1.5j, 1.25 + 1.25j], [3.0, 2.5]])


def test_resolved_size():
    window = (2.0, 2.1)
    assert twophoton.resolved_size([], window) == 257
    # a pole outside the window does not count
    assert twophoton.resolved_size([3.0 - 1e-6j], window) == 257
    n = twophoton.resolved_size([2.05 - 1e-4j], window)
    assert n % 2 == 1 and (window[1] - window[0]) / (n - 1) <= 1e-4
    with pytest.warns(RuntimeWarning, match="capped"):
        assert twophoton.resolved_size([2.05 - 1e-8j], window) == 8193


def test_pole_aware_interpolation():
    z = np.array([2.043 - 2e-4j])
    coarse = np.linspace(2.0, 2.1, 16)
    fine = np.linspace(2.0, 2.1, 1001)

    def F(w):
        w = np.atleast_1d(w)
        return np.stack([(0.3 + 0.1 * k) / (w - z[0]) + 1.0 + 0.5j * w for k in range(4)])
    exact = F(fine)
    plain = twophoton.interpolate_far_fields(coarse, F(coarse), fine)
    aware = twophoton.interpolate_far_fields(coarse, F(coarse), fine, z)
    err = lambda a: np.max(np.abs(a - exact)) / np.max(np.abs(exact))
    assert err(plain) > 0.5
    # the remainder is quadratic in w, so only curvature is lost
    assert err(aware) < 1e-4
    checks = twophoton.check_frequencies(coarse, 3, z)
    assert 2.043 in checks and checks.size == 4


def test_build_kernel_raises_grid_for_narrow_bath(small_homogeneous):
    from bathscatter.emitter import LorentzianFit
    fit = LorentzianFit(((1e-6, W0 + 0.003, 1e-4),), (W0 - 0.1, W0 + 0.1))
    resp = EmitterResponse.non_markovian(EmitterParams(W0, 0.05), fit)
    inp = GaussianInput(W0, 220 / W0)
    idx = small_homogeneous.grid.nearest_index((0, 0))
    kern = twophoton.build_kernel(resp, small_homogeneous, inp, idx, 65, 180, n_coarse=8)
    lo, hi = inp.window()
    assert kern.freqs.size > 65
    assert (hi - lo) / (kern.freqs.size - 1) <= np.min(-twophoton.emitter_poles(resp).imag)
    assert kern.info["check_frequencies"] == 4


def test_spectrum_holds_every_weight():
    res = twophoton.schmidt(small_kernel(), 3)
    assert res.lambdas.size == 3 and res.spectrum.size == 41
    np.testing.assert_array_equal(res.spectrum[:3], res.lambdas)
    assert np.sum(res.spectrum ** 2) == pytest.approx(1.0, abs=1e-12)
