"""Connected two-photon output state for a Gaussian two-photon input, and its Schmidt modes.

The output wavefunction is represented in the far field on a grid of angles
and frequencies,

    K((t1, w1), (t2, w2)) = C f(t1, w1) f(t2, w2) h(w1 + w2),

with ``f(t, w) = G0(w) F_G(t; w)`` built from the emitter response and the
dipole far-field amplitude, ``h(E) = exp(-(E - 2 wc)^2 tau^2) / Gamma(E)`` and
``C = -(V0^4 / 4 pi^2) E(x_d)^2 G0(wc)^2``.

The Schmidt (Takagi) decomposition of the quadrature-weighted kernel
``M = W^1/2 K W^1/2 = sum_k lam_k psi_k psi_k^T`` is computed exactly through
an ``n_omega x n_omega`` core matrix, so the full ``(n_theta n_omega)^2``
kernel is never formed unless asked for.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import sqrtm
from scipy.special import erfc

from . import fdfd
from .emitter import EmitterResponse, LorentzianFit, gamma_kernel, response_freq
from .media import PermittivityMap


class WindowError(ValueError):
    """The frequency window cuts off too much of the input pulse."""


@dataclass(frozen=True)
class GaussianInput:
    """Two identical photons with spectral amplitude ``exp(-(nu - center)^2 tau^2 / 2)``.

    Attributes:
        center: Carrier frequency.
        tau: Pulse duration; ``center * tau`` should be large.
        direction: Propagation direction of both photons.
    """

    center: float
    tau: float
    direction: Tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.center > 0:
            raise ValueError("center frequency must be positive")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or abs(np.linalg.norm(d) - 1) > 1e-12:
            raise ValueError("direction must be a 2D unit vector")
        object.__setattr__(self, "direction", (float(d[0]), float(d[1])))

    def window(self, half_width: Optional[float] = None) -> Tuple[float, float]:
        hw = 5.0 / self.tau if half_width is None else half_width
        return (self.center - hw, self.center + hw)

    def mass_outside(self, window: Tuple[float, float]) -> float:
        """Fraction of ``|amplitude|^2`` that falls outside ``window``."""
        lo, hi = window
        return 0.5 * (erfc((self.center - lo) * self.tau) + erfc((hi - self.center) * self.tau))


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x, dtype=float)
    d = np.diff(x)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass(eq=False)
class TwoPhotonKernel:
    """Factorized two-photon kernel on an (angle x frequency) grid.

    Attributes:
        freqs: Frequency grid, shape ``(n_omega,)``.
        angles: Uniform angle grid on ``[0, 2 pi)``, shape ``(n_theta,)``.
        f: Single-photon factor ``f(theta, omega)``, shape ``(n_theta, n_omega)``.
        h: Pair factor ``h(omega_i + omega_j)``, shape ``(n_omega, n_omega)``.
        prefactor: Overall constant ``C``.
    """

    freqs: np.ndarray
    angles: np.ndarray
    f: np.ndarray
    h: np.ndarray
    prefactor: complex = 1.0
    info: Dict = field(default_factory=dict)

    def __post_init__(self):
        n_t, n_w = self.angles.size, self.freqs.size
        if self.f.shape != (n_t, n_w):
            raise ValueError(f"f has shape {self.f.shape}, expected {(n_t, n_w)}")
        if self.h.shape != (n_w, n_w):
            raise ValueError("h must be n_omega x n_omega")
        if not np.array_equal(self.h, self.h.T):
            raise ValueError("pair factor must be symmetric")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.angles.size, self.freqs.size)

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights ``w_theta * w_omega`` on the ``(theta, omega)`` grid."""
        w_t = np.full(self.angles.size, 2 * np.pi / self.angles.size)
        return np.outer(w_t, trapezoid_weights(self.freqs))

    def scaled(self, factor: complex) -> "TwoPhotonKernel":
        return TwoPhotonKernel(self.freqs, self.angles, self.f, self.h,
                               self.prefactor * factor, dict(self.info))

    def value(self, t1: int, i1: int, t2: int, i2: int) -> complex:
        return complex(self.prefactor * self.f[t1, i1] * self.f[t2, i2] * self.h[i1, i2])

    def dense(self, weighted: bool = False, max_size: int = 8192) -> np.ndarray:
        """Full kernel matrix over flattened ``(theta, omega)`` pairs, theta-major."""
        n = self.angles.size * self.freqs.size
        if n > max_size:
            raise MemoryError(f"dense kernel of size {n}^2 exceeds max_size={max_size}")
        a = self.f * (np.sqrt(self.weights) if weighted else 1.0)
        n_t, n_w = self.shape
        H = np.tile(self.h, (n_t, n_t))
        av = a.ravel()
        K = self.prefactor * np.outer(av, av) * H
        # vectorized complex products are not bitwise commutative
        return 0.5 * (K + K.T)


def kernel_from_far_fields(resp: EmitterResponse, inp: GaussianInput, freqs, angles,
                           far_fields: np.ndarray, field_at_emitter: complex,
                           check_window: bool = True) -> TwoPhotonKernel:
    """Assemble the kernel from dipole far-field amplitudes sampled on the grid.

    Args:
        far_fields: ``F_G(theta; omega)``, shape ``(n_theta, n_omega)``.
        field_at_emitter: Total field of the incident plane wave at the emitter
            site, at the pulse center.
    """
    freqs = np.asarray(freqs, dtype=float)
    angles = np.asarray(angles, dtype=float)
    if check_window:
        lost = inp.mass_outside((freqs[0], freqs[-1]))
        if lost > 1e-6:
            raise WindowError(f"frequency window loses {lost:.3g} of the input pulse")
    wc = inp.center
    V0 = resp.params.V0
    f = response_freq(resp, freqs)[None, :] * np.asarray(far_fields, dtype=complex)
    E = freqs[:, None] + freqs[None, :]
    h = np.exp(-((E - 2 * wc) * inp.tau) ** 2) / gamma_kernel(resp, E)
    h = 0.5 * (h + h.T)
    C = -(V0 ** 4) / (4 * np.pi ** 2) * field_at_emitter ** 2 * response_freq(resp, wc) ** 2
    return TwoPhotonKernel(freqs, angles, f, h, complex(C))


def bath_poles(fit: Optional[LorentzianFit]) -> np.ndarray:
    """Complex poles ``omega_n - i gamma_n`` of the bath Green's function implied by a fit."""
    if fit is None:
        return np.zeros(0, complex)
    return np.array([w - 1j * g for _, w, g in fit.terms], dtype=complex)


def emitter_poles(resp: EmitterResponse) -> np.ndarray:
    """Poles of ``G0(omega)`` in the lower half plane."""
    if resp.is_markovian:
        return np.array([resp.params.omega0 - 0.5j * resp.gamma])
    return resp.poles[0]


def resolved_size(poles, window: Tuple[float, float], n_min: int = 257,
                  points_per_width: float = 1.0, n_max: int = 8193) -> int:
    """Odd grid size that puts ``points_per_width`` samples in the narrowest half-width.

    Only poles whose real part lies inside ``window`` count. The result is
    at least ``n_min`` and at most ``n_max``; hitting the cap warns.
    """
    lo, hi = window
    z = np.atleast_1d(np.asarray(poles, dtype=complex))
    z = z[(z.real >= lo) & (z.real <= hi) & (z.imag < 0)]
    n = int(n_min)
    if z.size:
        h = float(np.min(-z.imag)) / points_per_width
        n = max(n, int(np.ceil((hi - lo) / h)) + 1)
    n += 1 - n % 2
    if n > n_max:
        warnings.warn(f"frequency grid capped at {n_max} points; the narrowest feature "
                      f"needs {n}", RuntimeWarning)
        n = n_max
    return n


def _pole_factor(poles: np.ndarray, w) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    return np.prod(w[None, :] - poles[:, None], axis=0) if poles.size else np.ones(w.size)


def dipole_far_fields(pmap: PermittivityMap, emitter_index, freqs, n_theta: int = 256,
                      n_coarse: int = 64, n_check: int = 3,
                      solver: Optional[Callable[[float], fdfd.FieldSolution]] = None,
                      poles=()) -> Tuple[np.ndarray, Dict]:
    """Dipole far fields on a fine frequency grid by linear interpolation of coarse solves.

    Args:
        solver: Optional ``omega -> FieldSolution`` returning the dipole
            solution at the emitter node, e.g. a cached sweep. Defaults to a
            direct solve.
        poles: Complex resonance poles of the bath. They are divided out
            before interpolating and restored afterwards, so resonances much
            narrower than the coarse spacing survive.

    Returns:
        ``(F, info)`` with ``F`` of shape ``(n_theta, len(freqs))`` and ``info``
        holding the worst relative interpolation error seen at the check
        frequencies (see ``check_frequencies``).
    """
    freqs = np.asarray(freqs, dtype=float)
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    n_coarse = min(n_coarse, freqs.size)
    coarse = np.linspace(freqs[0], freqs[-1], n_coarse)
    if solver is None:
        def solver(w):
            return fdfd.solve_green(fdfd.HelmholtzOperator(pmap, w), emitter_index)

    def exact(w):
        return fdfd.far_field(solver(w), n_angles=n_theta).amplitude

    Fc = np.stack([exact(w) for w in coarse], axis=1)
    F = interpolate_far_fields(coarse, Fc, freqs, poles)
    err = 0.0
    checks = check_frequencies(coarse, n_check, poles) if n_coarse > 1 else np.zeros(0)
    if checks.size:
        Fi = interpolate_far_fields(coarse, Fc, checks, poles)
        for k, w in enumerate(checks):
            Fe = exact(w)
            err = max(err, float(np.linalg.norm(Fi[:, k] - Fe) / np.linalg.norm(Fe)))
    return F, {"coarse_frequencies": n_coarse, "check_frequencies": int(checks.size),
               "interpolation_error": err}


def check_frequencies(coarse: np.ndarray, n_check: int, poles=()) -> np.ndarray:
    """Frequencies used to audit the interpolation.

    ``n_check`` midpoints between coarse frequencies, plus the real part of
    every pole inside the coarse range, where interpolation is hardest.
    """
    out = []
    if n_check and coarse.size > 1:
        picks = np.linspace(0, coarse.size - 2, n_check).round().astype(int)
        out += list(0.5 * (coarse[picks] + coarse[picks + 1]))
    for z in np.atleast_1d(np.asarray(poles, dtype=complex)):
        if coarse[0] < z.real < coarse[-1] and not np.any(coarse == z.real):
            out.append(float(z.real))
    return np.array(sorted(set(out)), dtype=float)


def interpolate_far_fields(coarse: np.ndarray, Fc: np.ndarray, targets, poles=()) -> np.ndarray:
    """Linear interpolation in frequency of far fields ``Fc[theta, k]`` sampled at ``coarse``.

    With ``poles`` the smooth remainder ``F(w) prod (w - z_n)`` is interpolated
    and the pole factor is divided back out at the targets.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    R = Fc * _pole_factor(poles, coarse)[None, :]
    out = np.empty((Fc.shape[0], targets.size), complex)
    for t in range(Fc.shape[0]):
        out[t] = np.interp(targets, coarse, R[t].real) + 1j * np.interp(targets, coarse, R[t].imag)
    return out / _pole_factor(poles, targets)[None, :]


def build_kernel(resp: EmitterResponse, pmap: PermittivityMap, inp: GaussianInput,
                 emitter_index, n_omega: int = 257, n_theta: int = 256,
                 n_coarse: int = 64, poles=None, points_per_width: Optional[float] = 1.0
                 ) -> TwoPhotonKernel:
    """Kernel for a structured bath, with all classical inputs computed by FDFD.

    Args:
        n_omega: Minimum number of frequencies; raised so that the narrowest
            emitter or bath resonance in the window is resolved, unless
            ``points_per_width`` is None.
        poles: Bath poles for the far-field interpolation. Defaults to the
            poles of the response's Lorentzian fit, if any.
    """
    if poles is None:
        poles = bath_poles(resp.fit)
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    window = inp.window()
    if points_per_width is not None:
        n_omega = resolved_size(np.concatenate([emitter_poles(resp), poles]), window, n_omega,
                                points_per_width)
    freqs = np.linspace(*window, n_omega)
    angles = 2 * np.pi * np.arange(n_theta) / n_theta
    F, info = dipole_far_fields(pmap, emitter_index, freqs, n_theta, n_coarse, poles=poles)
    op = fdfd.HelmholtzOperator(pmap, inp.center)
    E_d = fdfd.solve_planewave(op, inp.direction).total_at(tuple(emitter_index))
    kern = kernel_from_far_fields(resp, inp, freqs, angles, F, E_d)
    kern.info.update(info)
    return kern


def homogeneous_kernel(resp: EmitterResponse, inp: GaussianInput, eps0: float = 1.0,
                       n_omega: int = 257, n_theta: int = 256) -> TwoPhotonKernel:
    """Kernel for a uniform 2D medium, using the exact isotropic dipole far field."""
    freqs = np.linspace(*inp.window(), n_omega)
    angles = 2 * np.pi * np.arange(n_theta) / n_theta
    F = np.tile(fdfd.homogeneous_far_field(freqs, eps0), (n_theta, 1))
    return kernel_from_far_fields(resp, inp, freqs, angles, F, 1.0)


# ---------------------------------------------------------------------------
# Takagi / Schmidt decomposition


def _fix_sign(q: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(q)))
    return -q if q[k].real < 0 else q


def takagi(A: np.ndarray, cluster_rtol: float = 1e-10) -> Tuple[np.ndarray, np.ndarray]:
    """Takagi factorization ``A = Q diag(s) Q^T`` of a complex-symmetric matrix.

    Starts from the SVD and reconciles left and right singular vectors. Within
    each cluster of equal singular values ``Q_c = U_c sqrtm(V_c^H conj(U_c))``.
    Each column is then fixed up to sign so that its largest-magnitude entry
    has non-negative real part.

    Returns:
        ``(s, Q)`` with ``s`` non-increasing and ``Q`` having orthonormal columns.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale and np.max(np.abs(A - A.T)) > 1e-12 * scale:
        raise ValueError("matrix is not complex symmetric")
    U, s, Vh = np.linalg.svd(A)
    n = s.size
    Q = np.empty_like(U)
    smax = s[0] if n else 0.0
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and s[start] - s[stop] <= cluster_rtol * smax:
            stop += 1
        Uc = U[:, start:stop]
        if s[start] <= cluster_rtol * smax:
            Q[:, start:stop] = Uc
        elif stop - start == 1:
            z = Vh[start] @ U[:, start].conj()
            Q[:, start] = Uc[:, 0] * np.sqrt(z)
        else:
            Z = Vh[start:stop] @ Uc.conj()
            Z = 0.5 * (Z + Z.T)
            Q[:, start:stop] = Uc @ sqrtm(Z)
        start = stop
    for k in range(n):
        Q[:, k] = _fix_sign(Q[:, k])
    return s, Q


@dataclass
class SchmidtResult:
    """Leading Schmidt modes of a two-photon kernel.

    Attributes:
        lambdas: Schmidt weights, non-increasing, normalized so that the full
            (untruncated) set has unit sum of squares.
        modes: ``psi_k(theta, omega)``, shape ``(n_modes, n_theta, n_omega)``,
            orthonormal under the quadrature weights.
        norm: Quadrature (Frobenius) norm of the kernel before normalization.
        residual: Relative reconstruction error of the retained decomposition
            when all modes are kept; ``nan`` when not computed.
        spectrum: Every normalized Schmidt weight, not only the retained ones.
    """

    lambdas: np.ndarray
    modes: np.ndarray
    angles: np.ndarray
    freqs: np.ndarray
    weights: np.ndarray
    norm: float
    residual: float = float("nan")
    spectrum: Optional[np.ndarray] = None

    @property
    def n_modes(self) -> int:
        return self.lambdas.size

    def to_json(self) -> str:
        return json.dumps({"lambdas": [float(f"{x:.17g}") for x in self.lambdas],
                           "norm": self.norm, "residual": self.residual}, indent=2)

    def write_csv(self, spectra_path, angular_path) -> None:
        S, A = marginals(self)
        for path, grid, data, name in ((spectra_path, self.freqs, S, "omega"),
                                       (angular_path, self.angles, A, "theta")):
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow([name] + [f"mode_{k + 1}" for k in range(self.n_modes)])
                for i, x in enumerate(grid):
                    w.writerow([f"{x:.17g}"] + [f"{v:.17g}" for v in data[:, i]])


def schmidt(kernel: TwoPhotonKernel, n_modes: int = 5, method: str = "structured",
            check: bool = True) -> SchmidtResult:
    """Schmidt decomposition of the quadrature-weighted kernel.

    Args:
        kernel: Exchange-symmetric two-photon kernel.
        n_modes: Number of leading modes to return.
        method: ``"structured"`` factors the kernel through its frequency core
            (exact, cheap); ``"dense"`` runs a Takagi factorization on the full
            weighted matrix and is meant for small grids and cross-checks.
        check: Compute the full reconstruction residual.
    """
    if kernel.prefactor == 0 or not np.any(kernel.f) or not np.any(kernel.h):
        raise ValueError("kernel is identically zero")
    n_t, n_w = kernel.shape
    if n_modes < 1:
        raise ValueError("n_modes must be positive")
    # the structured core has rank at most n_w
    n_modes = min(n_modes, n_t * n_w if method == "dense" else n_w)
    W = kernel.weights
    a = kernel.f * np.sqrt(W)
    if method == "dense":
        M = kernel.dense(weighted=True)
        s, Q = takagi(M)
        vecs = Q.T[:n_modes].reshape(-1, n_t, n_w)
        resid = np.nan
        if check:
            resid = float(np.linalg.norm(M - (Q * s) @ Q.T) / np.linalg.norm(M))
    elif method == "structured":
        col = np.linalg.norm(a, axis=0)
        safe = np.where(col > 0, col, 1.0)
        u = a / safe[None, :]
        B = kernel.prefactor * (col[:, None] * kernel.h * col[None, :])
        B = 0.5 * (B + B.T)
        s, Qb = takagi(B)
        # mode k at (theta, omega_i) = u_i(theta) Qb[i, k]
        vecs = np.einsum("ti,ik->kti", u, Qb[:, :n_modes])
        resid = np.nan
        if check:
            resid = float(np.linalg.norm(B - (Qb * s) @ Qb.T) / np.linalg.norm(B))
    else:
        raise ValueError(f"unknown method {method!r}")
    total = float(np.sqrt(np.sum(s ** 2)))
    if total == 0:
        raise ValueError("kernel is identically zero")
    modes = vecs / np.sqrt(W)[None, :, :]
    return SchmidtResult(s[:n_modes] / total, modes, kernel.angles, kernel.freqs, W, total,
                         resid, s / total)


def reconstruct(result: SchmidtResult) -> np.ndarray:
    """Weighted kernel ``sum_k lam_k psi_k psi_k^T`` (normalized) from the retained modes."""
    v = (result.modes * np.sqrt(result.weights)[None]).reshape(result.n_modes, -1)
    return (v.T * result.lambdas) @ v


def marginals(result: SchmidtResult) -> Tuple[np.ndarray, np.ndarray]:
    """Frequency spectra ``S_k(omega)`` and angular distributions ``A_k(theta)``.

    Both are densities with unit integral under the grid quadrature.
    """
    w_t = result.weights[:, 0] / result.weights[0, 0] * (2 * np.pi / result.angles.size)
    w_w = result.weights[0, :] / (2 * np.pi / result.angles.size)
    p = np.abs(result.modes) ** 2
    S = np.einsum("t,kti->ki", w_t, p)
    A = np.einsum("i,kti->kt", w_w, p)
    S /= (S @ w_w)[:, None]
    A /= (A @ w_t)[:, None]
    return S, A
