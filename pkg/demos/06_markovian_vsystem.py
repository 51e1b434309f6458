"""Correlation functions of a few-level emitter in the Markovian limit.

Once the bath is replaced by a decay rate, any finite-level system
evolves between operator insertions with ``H_eff = H - (i gamma / 2)
sigma^dag sigma``. For a two-level system this reproduces the
Weisskopf-Wigner amplitude. A V system with two transitions shows quantum
beats in ``<sigma(t) sigma^dag(0)>``. Finally the two-photon connected
function of the two-level system is rebuilt from time-ordered four-point
correlators, with the harmonic oscillator subtracted as the free reference.
"""

import itertools

import numpy as np

from bathscatter import smatrix
from bathscatter.emitter import EmitterParams, EmitterResponse, response_freq
from bathscatter.markovian import (LevelSystem, correlation, effective_hamiltonian,
                                   green_single, ordered_transform)

W0 = 0.35 * 2 * np.pi
GAMMA = 0.05


def four_point(sys_, omegas, nus):
    lo, up = sys_.sigma, sys_.sigma.conj().T
    legs = [(lo, omegas[0]), (lo, omegas[1]), (up, -nus[0]), (up, -nus[1])]
    total = 0j
    for order in itertools.permutations(legs):
        if np.any(order[0][0] @ sys_.ground_state):
            total += ordered_transform(sys_, GAMMA, [o for o, _ in order], [f for _, f in order],
                                       horizon=40 / GAMMA, panels=1500)
    return total


def main():
    tls = LevelSystem.two_level(W0)
    ww = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.3), GAMMA)
    nu = W0 + 0.02
    print("TLS green_single vs WW:", np.round(green_single(tls, GAMMA, nu), 6),
          np.round(response_freq(ww, nu), 6))

    vs = LevelSystem.v_system(W0 - 0.05, W0 + 0.05)
    print("V system H_eff eigenvalues:", np.round(np.linalg.eigvals(effective_hamiltonian(vs, GAMMA)), 4))
    s, sd = vs.sigma, vs.sigma.conj().T
    for t in np.linspace(0.0, 80.0, 9):
        c = correlation(vs, GAMMA, [(s, t), (sd, 0.0)])
        print(f"  t = {t:5.1f}  |<sigma(t) sigma^dag(0)>| = {abs(c):.4f}")

    omegas, nus = (W0 + 0.01, W0 - 0.02), (W0 - 0.005, W0 - 0.005)
    conn = four_point(tls, omegas, nus) - four_point(LevelSystem.harmonic(W0, 3), omegas, nus)
    ref = smatrix.connected_green2(ww, omegas, nus) / (2 * np.pi)
    print(f"connected four-point: quadrature {conn:.6e}")
    print(f"                      closed form {ref:.6e}")


if __name__ == "__main__":
    main()
