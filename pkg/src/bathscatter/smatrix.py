"""Few-photon scattering matrices of an emitter embedded in a dielectric bath.

Frequency delta functions are never sampled. Every matrix element is returned
as a list of :class:`Term` objects, each a product of delta constraints
``delta(sum omega_out - sum nu_in)`` times a complex coefficient. Indices in
constraints are zero-based positions in the output (``omega``) and input
(``nu``) argument lists.

Classical inputs come from a :class:`Fields` object: the total field
``E(x, Omega, nu)`` of a unit plane wave and the Green's function
``G(x, x_d; omega)`` from the emitter site. :class:`HomogeneousFields` gives
them in closed form (2D or 3D), :class:`SolvedFields` reads them from FDFD
solutions.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import hankel1

from . import fdfd
from .emitter import EmitterResponse, gamma_kernel, response_freq
from .media import PermittivityMap


class FrequencyMismatchError(ValueError):
    """No cached field solution exists at the requested frequency."""


class EnergyConservationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# classical fields


def _as_direction(direction, dim: int) -> np.ndarray:
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if d.size == 1 and dim == 2:
        d = np.array([np.cos(d[0]), np.sin(d[0])])
    if d.shape != (dim,):
        raise ValueError(f"direction must be a {dim}-vector or an angle")
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-9:
        raise ValueError("direction must have unit length")
    return d / n


class Fields:
    """Classical fields needed by the scattering matrix.

    Subclasses provide ``green(x, omega)`` for ``G(x, x_d; omega)``,
    ``total(x, direction, nu)`` for ``E(x, Omega, nu)`` and
    ``total_at_emitter(direction, nu)``.
    """

    dim: int = 2
    eps0: float = 1.0
    x_d: np.ndarray

    def k0(self, omega: float) -> float:
        return omega * math.sqrt(self.eps0)

    def n0(self, nu: float) -> float:
        """Per-photon normalization; 1 in 2D."""
        if self.dim == 3:
            return math.sqrt(nu * math.sqrt(self.eps0) / (16 * math.pi ** 3))
        return 1.0

    def incident(self, x, direction, nu) -> complex:
        d = _as_direction(direction, self.dim)
        return complex(np.exp(1j * self.k0(nu) * np.dot(d, np.asarray(x, float))))

    def green(self, x, omega: float) -> complex:
        raise NotImplementedError

    def total(self, x, direction, nu: float) -> complex:
        raise NotImplementedError

    def total_at_emitter(self, direction, nu: float) -> complex:
        return self.total(self.x_d, direction, nu)


class HomogeneousFields(Fields):
    """Closed-form fields of a uniform medium ``eps0`` in 2D or 3D."""

    def __init__(self, eps0: float = 1.0, x_d=None, dim: int = 2):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if not eps0 > 0:
            raise ValueError("eps0 must be positive")
        self.dim = dim
        self.eps0 = float(eps0)
        self.x_d = np.zeros(dim) if x_d is None else np.asarray(x_d, dtype=float)

    def green(self, x, omega: float) -> complex:
        r = float(np.linalg.norm(np.asarray(x, float) - self.x_d))
        return complex(green_homogeneous(r, omega, self.eps0, self.dim))

    def total(self, x, direction, nu: float) -> complex:
        return self.incident(x, direction, nu)


class SolvedFields(Fields):
    """Fields read from FDFD dipole and plane-wave solutions.

    Args:
        green_solutions: Dipole solutions at the emitter node, one per frequency.
        planewave_solutions: Scattered-field solutions keyed by
            ``(omega, (dx, dy))``.
        rtol: Relative tolerance when matching requested frequencies to cached ones.
    """

    dim = 2

    def __init__(self, green_solutions: Iterable[fdfd.FieldSolution],
                 planewave_solutions: Iterable[fdfd.FieldSolution] = (), rtol: float = 1e-12):
        self._green = {}
        self._pw = {}
        self.rtol = rtol
        index = None
        for sol in green_solutions:
            if sol.kind != "dipole":
                raise ValueError("green_solutions must be dipole solutions")
            if index is not None and tuple(sol.source["index"]) != index:
                raise ValueError("dipole solutions have different source nodes")
            index = tuple(sol.source["index"])
            self._green[sol.omega] = sol
        for sol in planewave_solutions:
            if sol.kind != "planewave":
                raise ValueError("planewave_solutions must be plane-wave solutions")
            self._pw[(sol.omega, tuple(np.round(sol.source["direction"], 12)))] = sol
        if index is None:
            raise ValueError("at least one dipole solution is required")
        any_sol = next(iter(self._green.values()))
        self.pmap = any_sol.pmap
        self.eps0 = self.pmap.eps_background
        self.emitter_index = index
        self.x_d = self.pmap.grid.position(index)

    @classmethod
    def solve(cls, pmap: PermittivityMap, emitter_index, omegas, directions=()) -> "SolvedFields":
        """Run the dipole and plane-wave solves, sharing one factorization per frequency."""
        greens, pws = [], []
        for w in omegas:
            op = fdfd.HelmholtzOperator(pmap, w)
            greens.append(fdfd.solve_green(op, emitter_index))
            for d in directions:
                pws.append(fdfd.solve_planewave(op, _as_direction(d, 2)))
        return cls(greens, pws)

    def _match(self, table: Dict, omega: float):
        for w in table:
            if abs(w - omega) <= self.rtol * max(abs(omega), 1.0):
                return w
        raise FrequencyMismatchError(f"no field solution at omega={omega!r}")

    def _green_sol(self, omega):
        return self._green[self._match(self._green, omega)]

    def _pw_sol(self, direction, nu):
        d = tuple(np.round(_as_direction(direction, 2), 12))
        keys = {w: None for (w, dd) in self._pw if dd == d}
        if not keys:
            raise FrequencyMismatchError(f"no plane-wave solution along {d}")
        return self._pw[(self._match(keys, nu), d)]

    @staticmethod
    def _sample(sol: fdfd.FieldSolution, u: np.ndarray, x) -> complex:
        g = sol.grid
        x = np.asarray(x, float)
        fi = (x - np.asarray(g.origin)) / g.dx
        node = np.rint(fi)
        if np.all(np.abs(fi - node) < 1e-9):
            i, j = int(node[0]), int(node[1])
            if not (0 <= i < g.nx and 0 <= j < g.ny):
                raise ValueError("point lies outside the grid")
            return complex(u[i, j])
        re = RegularGridInterpolator((g.x, g.y), u.real)(x[None, :])[0]
        im = RegularGridInterpolator((g.x, g.y), u.imag)(x[None, :])[0]
        return complex(re, im)

    def green(self, x, omega: float) -> complex:
        sol = self._green_sol(omega)
        return self._sample(sol, sol.u, x)

    def total(self, x, direction, nu: float) -> complex:
        sol = self._pw_sol(direction, nu)
        return self._sample(sol, sol.u, x) + self.incident(x, direction, nu)

    def total_at_emitter(self, direction, nu: float) -> complex:
        return self._pw_sol(direction, nu).total_at(self.emitter_index)

    def green_solution(self, omega: float) -> fdfd.FieldSolution:
        return self._green_sol(omega)

    def planewave_solution(self, direction, nu: float) -> fdfd.FieldSolution:
        return self._pw_sol(direction, nu)


# ---------------------------------------------------------------------------
# delta-constraint bookkeeping


@dataclass(frozen=True)
class Constraint:
    """``delta(sum_{i in outputs} omega_i - sum_{j in inputs} nu_j)``."""

    outputs: Tuple[int, ...]
    inputs: Tuple[int, ...]

    def __post_init__(self):
        if not self.outputs or not self.inputs:
            raise ValueError("a constraint needs at least one output and one input")
        object.__setattr__(self, "outputs", tuple(sorted(self.outputs)))
        object.__setattr__(self, "inputs", tuple(sorted(self.inputs)))

    def mismatch(self, omegas, nus) -> float:
        return float(sum(omegas[i] for i in self.outputs) - sum(nus[j] for j in self.inputs))


@dataclass
class Term:
    constraints: Tuple[Constraint, ...]
    coefficient: complex

    @property
    def key(self) -> frozenset:
        return frozenset(self.constraints)

    @property
    def connected(self) -> bool:
        return any(len(c.outputs) > 1 for c in self.constraints)


def _check_conservation(term: Term, n: int):
    outs = sorted(i for c in term.constraints for i in c.outputs)
    ins = sorted(j for c in term.constraints for j in c.inputs)
    if outs != list(range(n)) or ins != list(range(n)):
        raise AssertionError(f"term does not conserve energy: {term.constraints}")


def collect(terms: Iterable[Term]) -> Dict[frozenset, complex]:
    """Sum coefficients of terms sharing the same constraint set."""
    out: Dict[frozenset, complex] = {}
    for t in terms:
        out[t.key] = out.get(t.key, 0.0) + t.coefficient
    return out


# ---------------------------------------------------------------------------
# emitter Green's functions


# The connected two-excitation function is the full time-ordered transform
# minus the free-boson (Wick) pairings. Only the orderings with both
# creations before both annihilations differ; for the boson they carry a
# factor 2 from a^dag a^dag |0>, and the four such orderings sum to
# -2 G0^4 / Gamma. With the 2 pi from the overall delta this gives -4 pi.
CONNECTED_PREFACTOR = -4.0 * np.pi


def connected_green2(resp: EmitterResponse, omegas, nus) -> complex:
    """Coefficient of ``delta(w1 + w2 - v1 - v2)`` in the connected two-excitation Green's function.

    Equals ``-4 pi G0(v1) G0(v2) G0(w1) G0(w2) / Gamma(w1 + w2)``.
    """
    w1, w2 = omegas
    v1, v2 = nus
    g = response_freq(resp, np.array([v1, v2, w1, w2], dtype=float))
    return complex(CONNECTED_PREFACTOR * np.prod(g) / gamma_kernel(resp, w1 + w2))


ConnectedGreen = Callable[[Sequence[float], Sequence[float]], complex]


def _partitions(outs: Tuple[int, ...], ins: Tuple[int, ...]):
    """Ways to split matched output/input index sets into equal-size clusters."""
    if not outs:
        yield []
        return
    first, rest_out = outs[0], outs[1:]
    for size in range(1, len(outs) + 1):
        for others in itertools.combinations(rest_out, size - 1):
            block_out = (first,) + others
            rem_out = tuple(o for o in rest_out if o not in others)
            for block_in in itertools.combinations(ins, size):
                rem_in = tuple(i for i in ins if i not in block_in)
                for tail in _partitions(rem_out, rem_in):
                    yield [(block_out, block_in)] + tail


def emitter_green_terms(resp: EmitterResponse, outs: Tuple[int, ...], ins: Tuple[int, ...],
                        omegas, nus, connected: Optional[Dict[int, ConnectedGreen]] = None
                        ) -> List[Term]:
    """Cluster expansion of the ``m``-excitation emitter Green's function.

    Each cluster of size 1 contributes ``2 pi delta(w - v) G0(v)``, size 2 the
    connected two-excitation part. Larger clusters need a user-supplied
    function in ``connected`` keyed by cluster size.
    """
    connected = dict(connected or {})
    connected.setdefault(2, lambda w, v: connected_green2(resp, w, v))
    terms = []
    for part in _partitions(tuple(outs), tuple(ins)):
        coef = 1.0 + 0j
        cons = []
        for bo, bi in part:
            if len(bo) == 1:
                coef *= 2 * np.pi * response_freq(resp, nus[bi[0]])
            else:
                if len(bo) not in connected:
                    raise NotImplementedError(
                        f"connected {len(bo)}-excitation Green's function is not available")
                coef *= connected[len(bo)]([omegas[i] for i in bo], [nus[j] for j in bi])
            cons.append(Constraint(bo, bi))
        terms.append(Term(tuple(cons), complex(coef)))
    return terms


# ---------------------------------------------------------------------------
# scattering matrices


def _emission_factor(resp: EmitterResponse, fields: Fields, x, omega) -> complex:
    return resp.params.V0 ** 2 / (2j * np.pi) * fields.green(x, omega)


def single_particle(resp: EmitterResponse, fields: Fields, x, direction, nu: float) -> complex:
    """Amplitude ``s`` with ``S1(x, w; Omega, nu) = N0(nu) s delta(w - nu)``.

    ``s = exp(i k0 Omega.x) + E_s(x) - i V0^2 E(x_d) G(x, x_d; nu) G0(nu)``.
    """
    E_d = fields.total_at_emitter(direction, nu)
    emitted = -1j * resp.params.V0 ** 2 * E_d * fields.green(x, nu) * response_freq(resp, nu)
    return complex(fields.total(x, direction, nu) + emitted)


def two_particle_connected(resp: EmitterResponse, fields: Fields, xs, omegas, directions, nus,
                           atol: float = 1e-9) -> complex:
    """Coefficient of ``delta(w1 + w2 - v1 - v2)`` in the connected two-photon S-matrix."""
    if abs(sum(omegas) - sum(nus)) > atol * max(1.0, abs(sum(nus))):
        raise EnergyConservationError("w1 + w2 must equal v1 + v2")
    pref = -(resp.params.V0 ** 4) / (4 * np.pi ** 2)
    for i in range(2):
        pref *= fields.n0(nus[i]) * fields.total_at_emitter(directions[i], nus[i])
        pref *= fields.green(xs[i], omegas[i])
    return complex(pref * connected_green2(resp, omegas, nus))


def two_particle_full(resp: EmitterResponse, fields: Fields, xs, omegas, directions, nus,
                      atol: float = 1e-9) -> Dict[str, object]:
    """Two-photon S-matrix split into disconnected and connected pieces.

    Returns:
        ``{"disconnected": [Term, Term], "connected": Term}``. The disconnected
        terms are the two pairings of single-photon amplitudes.
    """
    disc = []
    for perm in itertools.permutations(range(2)):
        coef = 1.0 + 0j
        for i in range(2):
            j = perm[i]
            coef *= fields.n0(nus[j]) * single_particle(resp, fields, xs[i], directions[j], nus[j])
        disc.append(Term(tuple(Constraint((i,), (perm[i],)) for i in range(2)), coef))
    conn = Term((Constraint((0, 1), (0, 1)),),
                two_particle_connected(resp, fields, xs, omegas, directions, nus, atol))
    return {"disconnected": disc, "connected": conn}


def assemble_N(N: int, resp: EmitterResponse, fields: Fields, xs, omegas, directions, nus,
               connected: Optional[Dict[int, ConnectedGreen]] = None) -> List[Term]:
    """N-photon S-matrix as a list of delta-constrained terms.

    Sums over the number ``k`` of photons that pass through the bath without
    exciting the emitter, over which outputs and inputs they are, and over
    the bijections between them. The remaining ``N - k`` photons carry
    ``(V0^2 / 2 pi i) G(x, x_d; w) E(x_d, Omega, v)`` factors and the
    ``(N - k)``-excitation emitter Green's function.

    Args:
        N: Photon number, 1 to 3.
        connected: Optional connected Green's functions keyed by cluster size,
            each called as ``f(omegas, nus)``. Size 3 is needed for the fully
            scattered ``N = 3`` term.
    """
    if N < 1 or N > 3:
        raise ValueError("assemble_N supports 1 <= N <= 3")
    for arr in (xs, omegas, directions, nus):
        if len(arr) != N:
            raise ValueError("all argument lists must have length N")
    idx = tuple(range(N))
    norm = np.prod([fields.n0(v) for v in nus])
    terms: List[Term] = []
    for k in range(N, -1, -1):
        for B in itertools.combinations(idx, k):
            Bbar = tuple(i for i in idx if i not in B)
            for D in itertools.combinations(idx, k):
                Dbar = tuple(j for j in idx if j not in D)
                drive = 1.0 + 0j
                for d in Dbar:
                    drive *= fields.total_at_emitter(directions[d], nus[d])
                if Bbar:
                    green_terms = emitter_green_terms(resp, Bbar, Dbar, omegas, nus, connected)
                else:
                    green_terms = [Term((), 1.0 + 0j)]
                for gt in green_terms:
                    # on the support of a single-photon constraint the output
                    # frequency equals its input frequency
                    w_eff = dict()
                    for c in gt.constraints:
                        for b in c.outputs:
                            w_eff[b] = nus[c.inputs[0]] if len(c.outputs) == 1 else omegas[b]
                    gt.coefficient *= drive * np.prod(
                        [_emission_factor(resp, fields, xs[b], w_eff[b]) for b in Bbar])
                for perm in itertools.permutations(D):
                    passc = 1.0 + 0j
                    cons = []
                    for b, d in zip(B, perm):
                        passc *= fields.total(xs[b], directions[d], nus[d])
                        cons.append(Constraint((b,), (d,)))
                    for gt in green_terms:
                        t = Term(tuple(cons) + gt.constraints,
                                 complex(norm * passc * gt.coefficient))
                        _check_conservation(t, N)
                        terms.append(t)
    return terms


# ---------------------------------------------------------------------------
# cross sections


@dataclass
class CrossSectionSpectrum:
    """Total scattering cross sections (2D, units of length) versus frequency."""

    omegas: np.ndarray
    sigma_tls: np.ndarray
    sigma_bath: np.ndarray
    sigma_full: np.ndarray

    def __post_init__(self):
        for name in ("omegas", "sigma_tls", "sigma_bath", "sigma_full"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        for s in (self.sigma_tls, self.sigma_bath, self.sigma_full):
            if s.shape != self.omegas.shape:
                raise ValueError("cross-section arrays must match omegas")
            if np.any(s < 0):
                raise ValueError("cross sections must be non-negative")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["omega", "sigma_tls", "sigma_bath", "sigma_full"])
            for row in zip(self.omegas, self.sigma_tls, self.sigma_bath, self.sigma_full):
                w.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "CrossSectionSpectrum":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*data.T)


def cross_section_point(resp: EmitterResponse, green_sol: fdfd.FieldSolution,
                        planewave_sol: fdfd.FieldSolution, n_angles: int = 360,
                        contour: Optional[fdfd.Contour] = None) -> Tuple[float, float, float]:
    """``(sigma_TLS, sigma_bath, sigma_full)`` at one frequency from two field solutions."""
    if green_sol.omega != planewave_sol.omega:
        raise FrequencyMismatchError("dipole and plane-wave solutions differ in frequency")
    nu = green_sol.omega
    idx = tuple(green_sol.source["index"])
    E_d = planewave_sol.total_at(idx)
    FG = fdfd.far_field(green_sol, contour, n_angles)
    dtheta = 2 * np.pi / n_angles
    if planewave_sol.pmap.is_homogeneous:
        Fs = np.zeros(n_angles, complex)
    else:
        Fs = fdfd.far_field(planewave_sol, contour, n_angles).amplitude
    tls = -1j * resp.params.V0 ** 2 * E_d * response_freq(resp, nu) * FG.amplitude
    s_tls = float(np.sum(np.abs(tls) ** 2) * dtheta)
    s_bath = float(np.sum(np.abs(Fs) ** 2) * dtheta)
    s_full = float(np.sum(np.abs(Fs + tls) ** 2) * dtheta)
    return s_tls, s_bath, s_full


def cross_sections(resp: EmitterResponse, pmap: PermittivityMap, direction, omegas,
                   emitter_index, n_angles: int = 360) -> CrossSectionSpectrum:
    """Cross-section spectrum, one dipole and one plane-wave solve per frequency."""
    d = _as_direction(direction, 2)
    rows = []
    for w in omegas:
        op = fdfd.HelmholtzOperator(pmap, w)
        rows.append(cross_section_point(resp, fdfd.solve_green(op, emitter_index),
                                        fdfd.solve_planewave(op, d), n_angles))
    rows = np.array(rows).reshape(-1, 3)
    return CrossSectionSpectrum(np.asarray(omegas, float), rows[:, 0], rows[:, 1], rows[:, 2])


# ---------------------------------------------------------------------------
# closed forms for a uniform medium in the Weisskopf-Wigner regime


def green_homogeneous(r, omega: float, eps0: float = 1.0, dim: int = 2):
    """Outgoing Green's function of ``lap + k0^2`` with a ``+delta`` source."""
    k = omega * np.sqrt(eps0)
    r = np.asarray(r, dtype=float)
    if dim == 2:
        return -0.25j * hankel1(0, k * r)
    if dim == 3:
        return -np.exp(1j * k * r) / (4 * np.pi * r)
    raise ValueError("dim must be 2 or 3")


def ww_green0(nu, omega0: float, gamma: float):
    return 1.0 / (1j * (omega0 - np.asarray(nu, dtype=float)) + gamma / 2)


def ww_gamma_kernel(E, omega0: float, gamma: float):
    return 1.0 / (1j * (2 * omega0 - np.asarray(E, dtype=float)) + gamma)


def ww_connected_green2(omegas, nus, omega0: float, gamma: float) -> complex:
    """Closed form of the connected two-excitation coefficient for a Lorentzian emitter.

    ``4 i pi (w1 + w2 - 2 w0 + i gamma) / prod (x - w0 + i gamma/2)`` over all
    four frequencies; ``-64 pi / gamma^3`` when every frequency equals ``w0``.
    """
    E = sum(omegas)
    den = np.prod([x - omega0 + 0.5j * gamma for x in list(omegas) + list(nus)])
    return complex(-1j * CONNECTED_PREFACTOR * (E - 2 * omega0 + 1j * gamma) / den)


def ww_sigma_2d(nu, omega0: float, gamma: float, eps0: float = 1.0):
    """Emitter cross section in 2D, ``4/(omega0 sqrt(eps0))`` times a Lorentzian of half-width ``gamma/2``.

    The radiated flux itself scales as ``1/nu`` rather than ``1/omega0``;
    the difference is of order ``(nu - omega0) / omega0`` and vanishes on
    resonance.
    """
    nu = np.asarray(nu, dtype=float)
    return 4.0 / (omega0 * np.sqrt(eps0)) * (gamma ** 2 / 4) / ((nu - omega0) ** 2 + gamma ** 2 / 4)


def ww_sigma_3d(nu, omega0: float, V0: float, eps0: float = 1.0):
    """3D emitter cross section ``V0^4 |G0(nu)|^2 / (4 pi^2)`` with ``gamma = V0^2 omega0 sqrt(eps0)``."""
    gamma = V0 ** 2 * omega0 * np.sqrt(eps0)
    return V0 ** 4 * np.abs(ww_green0(nu, omega0, gamma)) ** 2 / (4 * np.pi ** 2)


def ww_single_particle(x, direction, nu: float, omega0: float, gamma: float, V0: float,
                       eps0: float = 1.0, x_d=None, dim: int = 2) -> complex:
    """Plane wave plus the outgoing wave radiated by the emitter in a uniform medium."""
    x = np.asarray(x, dtype=float)
    x_d = np.zeros(dim) if x_d is None else np.asarray(x_d, dtype=float)
    d = _as_direction(direction, dim)
    k = nu * np.sqrt(eps0)
    inc = np.exp(1j * k * d @ x)
    E_d = np.exp(1j * k * d @ x_d)
    G = green_homogeneous(np.linalg.norm(x - x_d), nu, eps0, dim)
    return complex(inc - 1j * V0 ** 2 * E_d * G * ww_green0(nu, omega0, gamma))
