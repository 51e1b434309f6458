"""Single-excitation dynamics of a two-level emitter in a structured bath.

The bath enters only through ``J(omega) = -Im G(x_d, x_d; omega)``, which is
approximated by a sum of Lorentzians ``sum_n p_n / ((omega - omega_n)^2 + gamma_n^2)``.
With that form the excited-state amplitude has the rational transform

    A_e(omega) = 1 / [i (omega0 - omega) + V0^2 sum_n (p_n/gamma_n) / (i (omega_n - omega) + gamma_n)]

and the time-domain amplitude follows from a small linear ODE with one
auxiliary variable per Lorentzian. Conventions: ``A_e(omega) = int_0^inf
A_e(t) exp(i omega t) dt`` and ``A_e(t = 0) = 1``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares
from scipy.signal import find_peaks, peak_widths

WEISSKOPF_WIGNER = "weisskopf_wigner"
NON_MARKOVIAN = "non_markovian"


@dataclass(frozen=True)
class EmitterParams:
    """Bare emitter parameters.

    Attributes:
        omega0: Transition frequency.
        V0: Coupling constant; ``V0**2 * J`` is a rate.
        x_d: Emitter position, kept for bookkeeping.
    """

    omega0: float
    V0: float
    x_d: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if not self.V0 >= 0:
            raise ValueError("V0 must be non-negative")


@dataclass(frozen=True)
class LorentzianFit:
    """Sum-of-Lorentzians model of ``-Im G`` over a fitting window.

    ``terms`` holds ``(p, omega, gamma)`` triples with ``p, gamma > 0``.
    """

    terms: Tuple[Tuple[float, float, float], ...]
    window: Tuple[float, float]
    residual: float = 0.0
    converged: bool = True

    def __post_init__(self):
        terms = tuple((float(p), float(w), float(g)) for p, w, g in self.terms)
        for p, _, g in terms:
            if not (p > 0 and g > 0):
                raise ValueError("Lorentzian weights and widths must be positive")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "window", (float(self.window[0]), float(self.window[1])))

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def evaluate(self, omega):
        omega = np.asarray(omega, dtype=float)
        out = np.zeros_like(omega)
        for p, w, g in self.terms:
            out = out + p / ((omega - w) ** 2 + g ** 2)
        return out

    def quality_factors(self) -> np.ndarray:
        return np.array([w / g for _, w, g in self.terms])

    def to_dict(self) -> dict:
        return {"terms": [{"p": p, "omega": w, "gamma": g} for p, w, g in self.terms],
                "window": list(self.window), "residual": self.residual,
                "converged": self.converged}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "LorentzianFit":
        return cls(tuple((t["p"], t["omega"], t["gamma"]) for t in d["terms"]),
                   tuple(d["window"]), d.get("residual", 0.0), d.get("converged", True))

    @classmethod
    def from_json(cls, text: str) -> "LorentzianFit":
        return cls.from_dict(json.loads(text))


def _pack(terms):
    return np.concatenate([[np.log(p), w, np.log(g)] for p, w, g in terms])


def _unpack(x):
    x = np.asarray(x).reshape(-1, 3)
    return [(float(np.exp(a)), float(b), float(np.exp(c))) for a, b, c in x]


def _model(x, omega):
    x = x.reshape(-1, 3)
    p, w, g = np.exp(x[:, 0]), x[:, 1], np.exp(x[:, 2])
    return np.sum(p[:, None] / ((omega[None, :] - w[:, None]) ** 2 + g[:, None] ** 2), axis=0)


def _seed_at(omega, y, k):
    """Initial ``(p, omega_n, gamma_n)`` for a peak at sample ``k``."""
    height = max(y[k], 1e-300)
    pos = np.arange(omega.size)
    try:
        with warnings.catch_warnings():
            # residual maxima at the window edge have no measurable width
            warnings.filterwarnings("ignore", "some peaks have", RuntimeWarning)
            _, _, left, right = peak_widths(y, [k], rel_height=0.5)
        width = np.interp(right[0], pos, omega) - np.interp(left[0], pos, omega)
    except ValueError:
        width = 0.0
    local = np.diff(omega[max(k - 1, 0):k + 2]).min()
    gamma = max(0.5 * width, 0.5 * local)
    return (height * gamma ** 2, float(omega[k]), gamma)


def fit_lorentzians(omega: Sequence[float], spectrum: Sequence[float], max_terms: int = 6,
                    tol: float = 1e-3) -> LorentzianFit:
    """Fit ``sum_n p_n / ((omega - omega_n)^2 + gamma_n^2)`` to a sampled spectrum.

    Terms are added greedily at the largest remaining positive misfit and the
    whole set is refined jointly after each addition. Weights and widths are
    optimized in log space so they stay positive.

    Args:
        omega: Sample frequencies, sorted, at least 50 of them.
        spectrum: Non-negative samples of ``-Im G``.
        max_terms: Upper bound on the number of Lorentzians.
        tol: Target relative L2 residual.

    Returns:
        The best fit found. ``converged`` is False when ``tol`` was not reached.
    """
    omega = np.asarray(omega, dtype=float)
    y = np.asarray(spectrum, dtype=float)
    if omega.shape != y.shape or omega.ndim != 1:
        raise ValueError("omega and spectrum must be 1D arrays of equal length")
    if omega.size < 50:
        raise ValueError("need at least 50 spectrum samples")
    if np.any(np.diff(omega) <= 0):
        raise ValueError("omega must be strictly increasing")
    scale = np.max(np.abs(y))
    if not np.all(np.isfinite(y)) or np.any(y < -1e-9 * scale):
        raise ValueError("spectrum must be finite and non-negative")
    if scale == 0:
        raise ValueError("spectrum is identically zero")
    norm = np.linalg.norm(y)
    window = (float(omega[0]), float(omega[-1]))

    # widths below the sample spacing would let a term hide between samples
    log_gmin = np.log(0.5 * np.min(np.diff(omega)))

    def refine(terms):
        x0 = _pack(terms)
        n = len(terms)
        lower = np.tile([-np.inf, window[0], log_gmin], n)
        upper = np.tile([np.inf, window[1], np.inf], n)
        x0 = np.clip(x0, lower + 1e-12, upper - 1e-12)
        sol = least_squares(lambda x: (_model(x, omega) - y) / norm, x0, method="trf",
                            bounds=(lower, upper), x_scale="jac",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000 * x0.size)
        return _unpack(sol.x), float(np.linalg.norm(_model(sol.x, omega) - y) / norm)

    peaks, props = find_peaks(y, prominence=1e-3 * scale)
    order = np.argsort(props["prominences"])[::-1] if peaks.size else []
    seeds = [int(peaks[i]) for i in order]

    terms, best = [], None
    best_res = np.inf
    while len(terms) < max_terms:
        if seeds:
            k = seeds.pop(0)
        else:
            miss = y - (_model(_pack(terms), omega) if terms else 0.0)
            k = int(np.argmax(miss))
            if miss[k] <= 0:
                break
        trial, res = refine(terms + [_seed_at(omega, y if not terms else
                                              np.clip(y - _model(_pack(terms), omega), 0, None),
                                              k)])
        terms = trial
        # fewer terms win on ties
        if res < best_res * (1 - 1e-9):
            best, best_res = list(trial), res
        if best_res < tol:
            break
    if best is None:
        raise RuntimeError("Lorentzian fit produced no terms")
    fit = LorentzianFit(tuple(sorted(best, key=lambda t: t[1])), window, best_res,
                        converged=bool(best_res < tol))
    if np.any(fit.quality_factors() < 10):
        warnings.warn("fitted Lorentzian with omega_n/gamma_n < 10; the rational response "
                      "extends the fit to negative frequencies", RuntimeWarning)
    return fit


@dataclass(frozen=True)
class EmitterResponse:
    """Excited-state amplitude of the emitter, either non-Markovian or Weisskopf-Wigner."""

    params: EmitterParams
    fit: Optional[LorentzianFit] = None
    mode: str = NON_MARKOVIAN
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.mode == WEISSKOPF_WIGNER:
            if self.gamma is None or not self.gamma >= 0:
                raise ValueError("Weisskopf-Wigner mode needs a non-negative gamma")
        elif self.mode == NON_MARKOVIAN:
            if self.fit is None:
                raise ValueError("non-Markovian mode needs a Lorentzian fit")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def weisskopf_wigner(cls, params: EmitterParams, gamma: float) -> "EmitterResponse":
        return cls(params, mode=WEISSKOPF_WIGNER, gamma=float(gamma))

    @classmethod
    def from_im_green(cls, params: EmitterParams, im_green: float) -> "EmitterResponse":
        """WW response with ``gamma = -2 V0^2 Im G(x_d, x_d; omega0)``."""
        return cls.weisskopf_wigner(params, -2.0 * params.V0 ** 2 * im_green)

    @classmethod
    def non_markovian(cls, params: EmitterParams, fit: LorentzianFit) -> "EmitterResponse":
        return cls(params, fit=fit, mode=NON_MARKOVIAN)

    def weak_coupling_limit(self) -> "EmitterResponse":
        """WW response with the decay rate implied by the fit at ``omega0``."""
        if self.mode == WEISSKOPF_WIGNER:
            return self
        j0 = float(self.fit.evaluate(self.params.omega0))
        return self.weisskopf_wigner(self.params, 2.0 * self.params.V0 ** 2 * j0)

    @property
    def is_markovian(self) -> bool:
        return self.mode == WEISSKOPF_WIGNER

    @cached_property
    def generator(self) -> np.ndarray:
        """Matrix ``M`` with ``d/dt (A_e, xi_1, ...) = M (A_e, xi_1, ...)``."""
        w0, V0 = self.params.omega0, self.params.V0
        if self.is_markovian:
            return np.array([[-1j * w0 - 0.5 * self.gamma]])
        n = self.fit.n_terms
        M = np.zeros((n + 1, n + 1), complex)
        M[0, 0] = -1j * w0
        for k, (p, w, g) in enumerate(self.fit.terms, start=1):
            M[0, k] = -V0 ** 2 / np.pi
            M[k, 0] = np.pi * p / g
            M[k, k] = -(1j * w + g)
        return M

    @cached_property
    def poles(self) -> Tuple[np.ndarray, np.ndarray]:
        """Poles ``s_k`` and residues ``c_k`` with ``A_e(t) = sum_k c_k exp(-i s_k t)``."""
        lam, V = np.linalg.eig(self.generator)
        Vinv = np.linalg.inv(V)
        return 1j * lam, V[0, :] * Vinv[:, 0]

    def is_confluent(self, cond_limit: float = 1e3) -> bool:
        """True when the generator is (nearly) defective and residues are unreliable.

        Partial-fraction errors grow like ``eps * cond(V)^2`` in the condition
        number of the eigenvector matrix, hence the low default limit.
        """
        _, V = np.linalg.eig(self.generator)
        return bool(np.linalg.cond(V) > cond_limit)


def _scalar_or_array(out):
    out = np.asarray(out, dtype=complex)
    return out if out.ndim else complex(out)


def response_freq(resp: EmitterResponse, omega):
    """``A_e(omega)`` by direct rational evaluation.

    A decoupled emitter returns complex infinity at ``omega == omega0``.
    """
    w = np.asarray(omega, dtype=float)
    w0, V0 = resp.params.omega0, resp.params.V0
    if resp.is_markovian:
        d = 1j * (w0 - w) + 0.5 * resp.gamma
    else:
        d = 1j * (w0 - w) + 0j
        for p, wn, g in resp.fit.terms:
            d = d + V0 ** 2 * (p / g) / (1j * (wn - w) + g)
    d = np.asarray(d, dtype=complex)
    out = np.full(d.shape, complex(np.inf, 0.0))
    nz = d != 0
    out[nz] = 1.0 / d[nz]
    return _scalar_or_array(out)


def response_time(resp: EmitterResponse, t_grid, rtol: float = 1e-12,
                  atol: float = 1e-14) -> np.ndarray:
    """``A_e(t)`` sampled on ``t_grid`` by integrating the auxiliary-mode ODE.

    Integration runs in the frame rotating at ``omega0`` with an adaptive
    8th-order Runge-Kutta scheme.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0.0:
        raise ValueError("t_grid must be a 1D array starting at 0")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    w0 = resp.params.omega0
    M = resp.generator + 1j * w0 * np.eye(resp.generator.shape[0])
    y0 = np.zeros(M.shape[0], complex)
    y0[0] = 1.0
    if t.size == 1:
        return np.ones(1, complex)
    sol = solve_ivp(lambda _, y: M @ y, (0.0, t[-1]), y0, method="DOP853", t_eval=t,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"time integration failed: {sol.message}")
    return sol.y[0] * np.exp(-1j * w0 * t)


def gamma_kernel(resp: EmitterResponse, E, confluent: Optional[bool] = None):
    """``Gamma(E) = int_0^inf A_e(t)^2 exp(i E t) dt``.

    Uses partial fractions over the poles of ``A_e``. Near-defective
    generators, or ``confluent=True``, switch to the Kronecker-sum resolvent
    ``-(e1 x e1)^T (M (+) M + i E)^{-1} (e1 x e1)``, which needs no residues.
    """
    E_arr = np.asarray(E, dtype=float)
    if resp.is_markovian:
        out = 1.0 / (1j * (2 * resp.params.omega0 - E_arr) + resp.gamma)
        return _scalar_or_array(out)
    if confluent is None:
        confluent = resp.is_confluent()
    if not confluent:
        s, c = resp.poles
        out = np.zeros(E_arr.shape, complex)
        # one pole pair at a time keeps memory at the size of E
        for j in range(s.size):
            for k in range(s.size):
                out += 1j * (c[j] * c[k]) / (E_arr - (s[j] + s[k]))
        return _scalar_or_array(out)
    M = resp.generator
    n = M.shape[0]
    K = np.kron(M, np.eye(n)) + np.kron(np.eye(n), M)
    e = np.zeros(n * n, complex)
    e[0] = 1.0
    vals = [-np.linalg.solve(K + 1j * e_ * np.eye(n * n), e)[0] for e_ in E_arr.ravel()]
    out = np.asarray(vals, complex).reshape(E_arr.shape)
    return _scalar_or_array(out)
