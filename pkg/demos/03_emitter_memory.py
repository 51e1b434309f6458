"""Non-Markovian emission into the photonic-crystal cavity.

The local density of states ``-Im G(x_d, x_d; omega)`` of the defect crystal
is swept with adaptive refinement around its resonances and fitted with a
sum of Lorentzians. Each Lorentzian becomes an auxiliary mode, so the
emitter amplitude ``A_e`` follows a small linear ODE and its spectrum
``G0(nu)`` is rational. At weak coupling the emitter decays exponentially
with the Weisskopf-Wigner rate; at stronger coupling it exchanges energy
with the cavity mode and ``|G0|`` splits. Takes about two minutes.
"""

import warnings

import numpy as np

from bathscatter import fdfd
from bathscatter.emitter import (EmitterParams, EmitterResponse, fit_lorentzians,
                                 gamma_kernel, response_freq, response_time)
from bathscatter.media import CylinderLattice, Grid, build_crystal, emitter_site
from scipy.signal import find_peaks

W0 = 0.35 * 2 * np.pi


def main():
    pmap = build_crystal(CylinderLattice(), Grid.centered(11.5, resolution=16))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        idx = emitter_site(pmap, (0.0, 0.5))
    w, J = fdfd.refined_im_green_spectrum(pmap, idx, 0.33 * 2 * np.pi, 0.37 * 2 * np.pi)
    fit = fit_lorentzians(w, J)
    print(f"{w.size} solves, fit with {fit.n_terms} terms, residual {fit.residual:.1e}")
    for (p, wn, g), q in zip(fit.terms, fit.quality_factors()):
        print(f"  mode at omega = {wn:.5f} (freq {wn / 2 / np.pi:.5f}), half-width {g:.2e}, Q {q:.0f}")

    t = np.linspace(0, 20000, 4001)
    nus = np.linspace(w[0], w[-1], 4001)
    for V0 in (0.001, 0.05):
        resp = EmitterResponse.non_markovian(EmitterParams(W0, V0), fit)
        ww = resp.weak_coupling_limit()
        pop = np.abs(response_time(resp, t)) ** 2
        g0 = np.abs(response_freq(resp, nus))
        peaks, _ = find_peaks(g0, prominence=0.05 * g0.max())
        print(f"V0 = {V0}: WW rate {ww.gamma:.2e}, |A_e|^2 at t = 2e4: {pop[-1]:.3f} "
              f"(WW {np.exp(-ww.gamma * t[-1]):.3f}), |G0| peaks at {np.round(nus[peaks], 4)}")
        s, _ = resp.poles
        print("  poles", np.round(s, 6))
        print("  Gamma(2 omega0) =", np.round(complex(gamma_kernel(resp, 2 * W0)), 2))


if __name__ == "__main__":
    main()
