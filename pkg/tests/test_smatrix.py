import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import hankel1

from bathscatter import fdfd, smatrix
from bathscatter.emitter import EmitterParams, EmitterResponse, response_freq
from bathscatter.smatrix import (Constraint, EnergyConservationError, FrequencyMismatchError,
                                 HomogeneousFields, SolvedFields, Term)
from oracles import random_response

W0 = 0.35 * 2 * np.pi


def ww(V0=0.3, eps0=1.0):
    # uniform 2D medium: gamma = -2 V0^2 Im G(0) = V0^2 / 2
    return EmitterResponse.weisskopf_wigner(EmitterParams(W0, V0), V0 ** 2 / 2)


points = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).filter(lambda p: np.hypot(*p) > 0.1)
angles = st.floats(0, 2 * np.pi)
detunings = st.floats(-0.2, 0.2)


@given(points, angles, detunings)
def test_single_particle_homogeneous(x, theta, dnu):
    r = ww()
    nu = W0 + dnu
    got = smatrix.single_particle(r, HomogeneousFields(), x, theta, nu)
    ref = smatrix.ww_single_particle(x, theta, nu, W0, r.gamma, r.params.V0)
    assert got == pytest.approx(ref, rel=1e-13)


def test_single_particle_3d():
    V0 = 0.2
    r = EmitterResponse.weisskopf_wigner(EmitterParams(W0, V0), V0 ** 2 * W0)
    f = HomogeneousFields(dim=3)
    x = np.array([0.3, -1.0, 2.0])
    d = np.array([0.0, 0.6, 0.8])
    got = smatrix.single_particle(r, f, x, d, W0 + 0.01)
    ref = smatrix.ww_single_particle(x, d, W0 + 0.01, W0, r.gamma, V0, dim=3)
    assert got == pytest.approx(ref, rel=1e-13)


@given(detunings)
def test_emitter_scattering_conserves_flux(dnu):
    # optical theorem for the emitter-scattered wave in 2D
    r = ww()
    nu = W0 + dnu
    f = -1j * r.params.V0 ** 2 * response_freq(r, nu) * fdfd.homogeneous_far_field(nu)
    sca = 2 * np.pi * abs(f) ** 2
    ext = -np.sqrt(8 * np.pi / nu) * np.real(f * np.exp(0.25j * np.pi))
    assert sca == pytest.approx(ext, rel=1e-12)
    # the closed form uses 4 / omega0 where the flux carries 4 / nu
    assert sca * nu == pytest.approx(smatrix.ww_sigma_2d(nu, W0, r.gamma) * W0, rel=1e-12)


def test_sigma_anchors():
    assert smatrix.ww_sigma_2d(W0, W0, 0.1) == pytest.approx(4 / W0)
    assert smatrix.ww_sigma_2d(W0, W0, 0.1, eps0=2.25) == pytest.approx(4 / (W0 * 1.5))
    assert smatrix.ww_sigma_3d(W0, W0, 0.3) == pytest.approx(1 / (np.pi ** 2 * W0 ** 2))


def test_n0():
    assert HomogeneousFields().n0(2.0) == 1.0
    assert HomogeneousFields(dim=3).n0(2.0) == pytest.approx(np.sqrt(2.0 / (16 * np.pi ** 3)))


def test_green_homogeneous_values():
    assert smatrix.green_homogeneous(1.0, 2.0) == pytest.approx(-0.25j * hankel1(0, 2.0))
    g3 = smatrix.green_homogeneous(1.5, 2.0, dim=3)
    assert g3 == pytest.approx(-np.exp(3j) / (4 * np.pi * 1.5))


def test_connected_ww_anchor():
    g = 0.05
    r = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.3), g)
    val = smatrix.connected_green2(r, (W0, W0), (W0, W0))
    assert val == pytest.approx(-64 * np.pi / g ** 3, rel=1e-13)


@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
def test_connected_ww_closed_form(a, b, c):
    g = 0.05
    r = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.3), g)
    om = (W0 + a, W0 + b)
    nu = (W0 + c, W0 + a + b - c)
    got = smatrix.connected_green2(r, om, nu)
    assert got == pytest.approx(smatrix.ww_connected_green2(om, nu, W0, g), rel=1e-12)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2),
       st.floats(-0.2, 0.2))
def test_connected_exchange_symmetry(seed, a, b, c):
    r = random_response(np.random.default_rng(seed))
    om = (W0 + a, W0 + b)
    nu = (W0 + c, W0 + a + b - c)
    v = smatrix.connected_green2(r, om, nu)
    assert smatrix.connected_green2(r, om[::-1], nu) == pytest.approx(v, rel=1e-12)
    assert smatrix.connected_green2(r, om, nu[::-1]) == pytest.approx(v, rel=1e-12)


def test_two_particle_energy_conservation():
    with pytest.raises(EnergyConservationError):
        smatrix.two_particle_connected(ww(), HomogeneousFields(), [(1, 0), (0, 1)],
                                       (W0, W0), (0.0, 0.0), (W0, W0 + 0.1))


def test_two_particle_full_structure():
    res = smatrix.two_particle_full(ww(), HomogeneousFields(), [(1, 0), (0, 1)],
                                    (W0 + 0.01, W0 - 0.01), (0.0, 1.0), (W0, W0))
    keys = {t.key for t in res["disconnected"]}
    assert keys == {frozenset({Constraint((0,), (0,)), Constraint((1,), (1,))}),
                    frozenset({Constraint((0,), (1,)), Constraint((1,), (0,))})}
    assert res["connected"].connected


def test_assemble_one_photon():
    r = ww()
    f = HomogeneousFields()
    terms = smatrix.assemble_N(1, r, f, [(1.0, 0.5)], [W0], [0.3], [W0])
    c = smatrix.collect(terms)
    assert set(c) == {frozenset({Constraint((0,), (0,))})}
    ref = smatrix.single_particle(r, f, (1.0, 0.5), 0.3, W0)
    assert c[frozenset({Constraint((0,), (0,))})] == pytest.approx(ref, rel=1e-13)


def test_assemble_three_needs_connected_three():
    r = ww()
    args = ([(1, 0), (0, 1), (-1, 0)], [W0] * 3, [0.0, 0.5, 1.0], [W0] * 3)
    with pytest.raises(NotImplementedError):
        smatrix.assemble_N(3, r, HomogeneousFields(), *args)
    terms = smatrix.assemble_N(3, r, HomogeneousFields(), *args, connected={3: lambda w, v: 1.0})
    kinds = {tuple(sorted(len(c.outputs) for c in t.constraints)) for t in terms}
    assert kinds == {(1, 1, 1), (1, 2), (3,)}


def test_assemble_three_matches_pairwise_products_when_decoupled():
    # with V0 = 0 the emitter is invisible and S3 is the sum over permutations
    r = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.0), 0.01)
    f = HomogeneousFields()
    xs = [(1, 0), (0, 1), (-1, 0.5)]
    ds = [0.0, 0.5, 1.0]
    nus = [W0, W0 + 0.01, W0 - 0.02]
    c = smatrix.collect(smatrix.assemble_N(3, r, f, xs, nus, ds, nus,
                                           connected={3: lambda w, v: 0.0}))
    nonzero = {k: v for k, v in c.items() if v != 0}
    assert len(nonzero) == 6
    for key, v in nonzero.items():
        ref = np.prod([f.incident(xs[con.outputs[0]], ds[con.inputs[0]], nus[con.inputs[0]])
                       for con in key])
        assert v == pytest.approx(ref, rel=1e-13)


def test_assemble_validates():
    with pytest.raises(ValueError):
        smatrix.assemble_N(4, ww(), HomogeneousFields(), [0] * 4, [W0] * 4, [0] * 4, [W0] * 4)
    with pytest.raises(ValueError):
        smatrix.assemble_N(2, ww(), HomogeneousFields(), [(0, 1)], [W0] * 2, [0] * 2, [W0] * 2)


def test_constraint_and_collect():
    with pytest.raises(ValueError):
        Constraint((), (0,))
    a = Term((Constraint((1, 0), (0, 1)),), 1.0)
    b = Term((Constraint((0, 1), (1, 0)),), 2.0)
    assert smatrix.collect([a, b]) == {a.key: 3.0}
    assert a.constraints[0].mismatch([1.0, 2.0], [0.5, 2.5]) == 0.0


@pytest.fixture(scope="module")
def solved(small_homogeneous):
    idx = small_homogeneous.grid.nearest_index((0.0, 0.0))
    return SolvedFields.solve(small_homogeneous, idx, [W0, W0 + 0.05], directions=[0.0])


def test_solved_fields_match_closed_form(solved):
    x = (0.75, 0.5)
    ref = HomogeneousFields().green(x, W0)
    assert solved.green(x, W0) == pytest.approx(ref, rel=2e-2)
    assert solved.total(x, 0.0, W0) == pytest.approx(np.exp(1j * W0 * 0.75), rel=1e-12)


def test_solved_fields_frequency_mismatch(solved):
    with pytest.raises(FrequencyMismatchError):
        solved.green((0.5, 0.5), W0 + 0.01)
    with pytest.raises(FrequencyMismatchError):
        solved.total((0.5, 0.5), np.pi / 2, W0)


def test_cross_section_csv_roundtrip(tmp_path):
    s = smatrix.CrossSectionSpectrum([1.0, 2.0], [0.1 / 3, 0.2], [0.0, 0.0], [0.1 / 3, 0.2])
    s.to_csv(tmp_path / "s.csv")
    back = smatrix.CrossSectionSpectrum.from_csv(tmp_path / "s.csv")
    assert np.array_equal(back.sigma_tls, s.sigma_tls)


def test_cross_section_rejects_negative():
    with pytest.raises(ValueError):
        smatrix.CrossSectionSpectrum([1.0], [-1.0], [0.0], [0.0])
