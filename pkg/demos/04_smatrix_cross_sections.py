"""Single- and two-photon scattering off an emitter in a uniform 2D medium.

The emitter decay rate is taken from the numerically solved ``Im G`` at the
emitter, then the scattering cross section of the emitter alone is
computed from FDFD dipole and plane-wave solves. On resonance it is
``4 / omega0`` whatever the coupling strength. The two-photon S-matrix is
assembled from its cluster expansion and split into the disconnected
products and the connected part.
"""

import numpy as np

from bathscatter import fdfd, smatrix
from bathscatter.emitter import EmitterParams, EmitterResponse
from bathscatter.media import Grid, build_homogeneous
from bathscatter.smatrix import HomogeneousFields

W0 = 0.35 * 2 * np.pi


def main():
    pmap = build_homogeneous(Grid.centered(4.0, resolution=32))
    idx = pmap.grid.nearest_index((0.0, 0.0))
    im_g = fdfd.solve_green(fdfd.HelmholtzOperator(pmap, W0), idx).at(idx).imag
    print(f"Im G(0, 0; omega0) = {im_g:.5f}")
    for V0 in (0.1, 0.2, 0.4):
        resp = EmitterResponse.from_im_green(EmitterParams(W0, V0), im_g)
        nus = W0 + np.array([-2, -1, 0, 1, 2]) * resp.gamma / 2
        spec = smatrix.cross_sections(resp, pmap, (1.0, 0.0), nus, idx)
        closed = smatrix.ww_sigma_2d(nus, W0, resp.gamma)
        print(f"V0 = {V0}: gamma = {resp.gamma:.4f}")
        print("   sigma_TLS  ", np.round(spec.sigma_tls, 4))
        print("   closed form", np.round(closed, 4))

    resp = EmitterResponse.weisskopf_wigner(EmitterParams(W0, 0.3), 0.045)
    g = resp.gamma
    print("connected coefficient at omega0: ",
          np.round(smatrix.connected_green2(resp, (W0, W0), (W0, W0)) * g ** 3 / np.pi, 6),
          "pi / gamma^3")

    fields = HomogeneousFields()
    xs = [(2.0, 0.0), (0.0, 3.0)]
    omegas, nus = (W0 + 0.01, W0 - 0.02), (W0 - 0.005, W0 - 0.005)
    terms = smatrix.collect(smatrix.assemble_N(2, resp, fields, xs, omegas, (0.0, 0.0), nus))
    for key, val in terms.items():
        label = " ".join("d(" + "+".join(f"w{i + 1}" for i in c.outputs)
                         + "".join(f"-v{j + 1}" for j in c.inputs) + ")"
                         for c in sorted(key, key=lambda c: c.outputs))
        print(f"  {label:22s} {val:.4e}")


if __name__ == "__main__":
    main()
