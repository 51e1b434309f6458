"""Green's functions from the FDFD solver, checked against the analytic Hankel function.

A unit point source at the origin of a uniform map is solved at
omega = 0.35 (2 pi c / a). The field over the annulus one to three
wavelengths from the source is compared with ``-(i/4) H0(k r)``; the local
density of states ``-Im G(0, 0)`` should be 1/4, and the radiated far-field
power must equal ``-Im G / k``. A plane wave on a single rod then checks
the optical theorem.
"""

import time

import numpy as np

from bathscatter import fdfd
from bathscatter.media import CylinderLattice, Grid, build_crystal, build_homogeneous

W0 = 0.35 * 2 * np.pi
LAM = 2 * np.pi / W0


def hankel_check(resolution):
    t = time.perf_counter()
    pmap = build_homogeneous(Grid.centered(6 * LAM + 1.0, resolution=resolution))
    g = pmap.grid
    idx = g.nearest_index((0.0, 0.0))
    sol = fdfd.solve_green(fdfd.HelmholtzOperator(pmap, W0), idx)
    X, Y = g.mesh()
    r = np.hypot(X, Y)
    ring = (r >= LAM) & (r <= 3 * LAM)
    ref = fdfd.green_2d(r[ring], W0)
    err = np.linalg.norm(sol.u[ring] - ref) / np.linalg.norm(ref)
    return err, time.perf_counter() - t, sol, idx


def main():
    prev = None
    for res in (16, 32, 64):
        err, secs, sol, idx = hankel_check(res)
        ratio = "" if prev is None else f"  (error ratio {prev / err:.2f})"
        print(f"{res:2d} px/a: rel. L2 error {err:.2e} in {secs:.1f} s{ratio}")
        prev = err
    print("-Im G(0,0) =", round(-sol.at(idx).imag, 5), "(expected 0.25)")
    ff = fdfd.far_field(sol, n_angles=360)
    print("radiated power / (-Im G / k) =", round(ff.radiated_power() * W0 / -sol.at(idx).imag, 5))

    # optical theorem for one eps = 8.9 rod of radius 0.3a
    rod = CylinderLattice(rows=1, cols=1, rod_radius=0.3, defect_radius=0.3)
    pmap = build_crystal(rod, Grid.centered(4.0, resolution=32))
    sol = fdfd.solve_planewave(fdfd.HelmholtzOperator(pmap, W0), (1.0, 0.0))
    ff = fdfd.far_field(sol, n_angles=720)
    k = W0
    forward = ff.amplitude[0]
    ext = -np.sqrt(8 * np.pi / k) * np.real(forward * np.exp(0.25j * np.pi))
    print(f"rod: scattered power {ff.radiated_power():.5f}, "
          f"extinction from forward amplitude {ext:.5f}")


if __name__ == "__main__":
    main()
