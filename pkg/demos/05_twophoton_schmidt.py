"""Entanglement of the two photons scattered by the emitter.

Two photons in identical Gaussian pulses (duration 220 / omega0) hit the
emitter. The connected part of the output state is a symmetric kernel
over (angle, frequency) pairs; its Schmidt decomposition gives the weights
``lambda_k`` and the mode spectra. In a uniform medium the angular part is
isotropic and only the spectra carry structure. The last section checks
the weights under grid doubling and under rescaling of the kernel.
"""

import numpy as np

from bathscatter import twophoton
from bathscatter.emitter import EmitterParams, EmitterResponse
from bathscatter.twophoton import GaussianInput

W0 = 0.35 * 2 * np.pi


def main():
    inp = GaussianInput(W0, 220 / W0)
    lo, hi = inp.window()
    print(f"pulse window [{lo:.4f}, {hi:.4f}], mass outside {inp.mass_outside((lo, hi)):.1e}")
    for V0 in (0.1, 0.3, 0.6):
        resp = EmitterResponse.weisskopf_wigner(EmitterParams(W0, V0), V0 ** 2 / 2)
        kern = twophoton.homogeneous_kernel(resp, inp, n_omega=257, n_theta=256)
        res = twophoton.schmidt(kern, 5)
        k_eff = 1 / np.sum(res.spectrum ** 4)
        print(f"V0 = {V0}: gamma tau = {resp.gamma * inp.tau:5.2f}, "
              f"lambda = {np.round(res.lambdas, 4)}, Schmidt number {k_eff:.2f}")

    resp = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.3), 0.045)
    res = twophoton.schmidt(twophoton.homogeneous_kernel(resp, inp), 5)
    S, A = twophoton.marginals(res)
    for k in range(3):
        top = res.freqs[np.argmax(S[k])]
        print(f"mode {k + 1}: spectrum peaks at omega0 {top - W0:+.4f}, "
              f"angular spread {np.ptp(A[k]) / A[k].mean():.1e}")

    fine = twophoton.schmidt(twophoton.homogeneous_kernel(resp, inp, 1.0, 513, 512), 5)
    print("grid doubling changes lambda by", f"{np.max(np.abs(fine.lambdas / res.lambdas - 1)):.1e}")
    scaled = twophoton.schmidt(twophoton.homogeneous_kernel(resp, inp).scaled(1e6j), 5)
    print("rescaled kernel, same weights:", np.allclose(scaled.lambdas, res.lambdas, rtol=1e-12))


if __name__ == "__main__":
    main()
