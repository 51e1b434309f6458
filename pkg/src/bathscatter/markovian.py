"""Time-ordered correlation functions of a finite-level system coupled Markovianly to the bath.

Within the Markovian approximation the bath can be traced out exactly for
vacuum expectation values: the system simply evolves under the non-Hermitian
Hamiltonian ``H_eff = H_sys - (i gamma / 2) sigma^dag sigma`` with
``gamma = -2 V0^2 Im G(x_d, x_d; omega0)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import expm


@dataclass(frozen=True, eq=False)
class LevelSystem:
    """Finite-dimensional emitter.

    Attributes:
        H: Hermitian system Hamiltonian, ``d x d``.
        sigma: Lowering-type operator that couples to the bath.
        ground: Index of the ground state in the basis of ``H``.
    """

    H: np.ndarray
    sigma: np.ndarray
    ground: int = 0

    def __post_init__(self):
        H = np.array(self.H, dtype=complex)
        s = np.array(self.sigma, dtype=complex)
        d = H.shape[0]
        if H.shape != (d, d) or s.shape != (d, d):
            raise ValueError("H and sigma must be square matrices of equal size")
        if d > 32:
            raise ValueError("level systems are limited to 32 levels")
        if np.max(np.abs(H - H.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise ValueError("H must be Hermitian")
        if not 0 <= self.ground < d:
            raise ValueError("ground index out of range")
        H.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "sigma", s)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def ground_energy(self) -> float:
        return float(self.H[self.ground, self.ground].real)

    @property
    def ground_state(self) -> np.ndarray:
        v = np.zeros(self.dim, complex)
        v[self.ground] = 1.0
        return v

    @classmethod
    def two_level(cls, omega0: float) -> "LevelSystem":
        return cls(np.diag([0.0, omega0]), np.array([[0, 1], [0, 0]]))

    @classmethod
    def harmonic(cls, omega0: float, levels: int = 3) -> "LevelSystem":
        """Truncated harmonic oscillator, ``sigma`` the annihilation operator."""
        a = np.diag(np.sqrt(np.arange(1, levels)), 1)
        return cls(np.diag(omega0 * np.arange(levels)), a)

    @classmethod
    def v_system(cls, omega1: float, omega2: float, c1: float = 1.0,
                 c2: float = 1.0) -> "LevelSystem":
        """Ground state coupled to two excited levels through one operator."""
        s = np.zeros((3, 3))
        s[0, 1], s[0, 2] = c1, c2
        return cls(np.diag([0.0, omega1, omega2]), s)

    def to_json(self) -> str:
        def enc(m):
            return [[[float(z.real), float(z.imag)] for z in row] for row in m]
        return json.dumps({"H": enc(self.H), "sigma": enc(self.sigma), "ground": self.ground})

    @classmethod
    def from_json(cls, text: str) -> "LevelSystem":
        d = json.loads(text)

        def dec(m):
            a = np.asarray(m, dtype=float)
            if a.ndim != 3 or a.shape[2] != 2:
                raise ValueError("matrices must be nested [re, im] pairs")
            return a[..., 0] + 1j * a[..., 1]
        return cls(dec(d["H"]), dec(d["sigma"]), int(d.get("ground", 0)))


def effective_hamiltonian(sys: LevelSystem, gamma: float) -> np.ndarray:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    s = sys.sigma
    return sys.H - 0.5j * gamma * (s.conj().T @ s)


def propagator(H_eff: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H_eff t)`` for ``t >= 0``."""
    if t < 0:
        raise ValueError("propagation time must be non-negative")
    return expm(-1j * np.asarray(H_eff) * t)


def _is_raising(sys: LevelSystem, op: np.ndarray) -> int:
    """+1 for energy-raising operators, -1 for lowering, 0 otherwise."""
    E = np.diag(sys.H).real
    up = E[:, None] > E[None, :]
    down = E[:, None] < E[None, :]
    r = float(np.sum(np.abs(op[up]) ** 2))
    l = float(np.sum(np.abs(op[down]) ** 2))
    return (r > l) - (l > r)


def time_order(sys: LevelSystem, ops: Sequence[Tuple[np.ndarray, float]]) -> List[Tuple[np.ndarray, float]]:
    """Operators sorted earliest first.

    At coincident times raising operators act first, i.e. they sit to the
    right in the time-ordered product.
    """
    keyed = [(t, -_is_raising(sys, np.asarray(c)), n, (np.asarray(c, complex), float(t)))
             for n, (c, t) in enumerate(ops)]
    keyed.sort(key=lambda k: k[:3])
    return [k[3] for k in keyed]


def correlation(sys: LevelSystem, gamma: float, ops: Sequence[Tuple[np.ndarray, float]]) -> complex:
    """``<g| T[c_1(t_1) ... c_M(t_M)] |g>`` under the effective evolution.

    Args:
        ops: ``(operator, time)`` pairs in any order.
    """
    if not ops:
        return 1.0 + 0j
    H_eff = effective_hamiltonian(sys, gamma)
    ordered = time_order(sys, ops)
    psi = sys.ground_state
    t_prev = ordered[0][1]
    for c, t in ordered:
        if not np.isfinite(t):
            raise ValueError("operator times must be finite")
        psi = c @ (propagator(H_eff, t - t_prev) @ psi)
        t_prev = t
    phase = np.exp(1j * sys.ground_energy * (ordered[-1][1] - ordered[0][1]))
    return complex(phase * psi[sys.ground])


def green_single(sys: LevelSystem, gamma: float, nu) -> complex:
    """``<g| sigma [i (H_eff - E_g - nu)]^-1 sigma^dag |g>``, the one-sided transform of ``<T sigma(t) sigma^dag(0)>``."""
    H_eff = effective_hamiltonian(sys, gamma)
    g = sys.ground_state
    d = sys.dim
    left = g @ sys.sigma
    right = sys.sigma.conj().T @ g

    def one(v):
        return complex(left @ np.linalg.solve(1j * (H_eff - (sys.ground_energy + v) * np.eye(d)), right))
    nu_arr = np.asarray(nu, dtype=float)
    if nu_arr.ndim == 0:
        return one(float(nu_arr))
    return np.array([one(v) for v in nu_arr.ravel()]).reshape(nu_arr.shape)


def ordered_transform(sys: LevelSystem, gamma: float, ops: Sequence[np.ndarray],
                      freqs: Sequence[float], horizon: float, panels: int = 2000,
                      order: int = 16) -> complex:
    """Fourier integral of one time-ordered sector by quadrature.

    Integrates ``<g| c_M(t_M) ... c_1(t_1) |g> exp(i sum_k f_k t_k)`` over
    ``0 = t_1 <= t_2 <= ... <= t_M`` with every gap ``t_{k+1} - t_k`` truncated
    at ``horizon``. The frequencies must sum to zero so the integrand is
    translation invariant. Each gap is integrated independently with
    composite Gauss-Legendre quadrature.

    Args:
        ops: Operators ``c_1 ... c_M``, earliest first.
        freqs: ``f_1 ... f_M``.
    """
    if len(ops) != len(freqs) or not ops:
        raise ValueError("ops and freqs must be non-empty and of equal length")
    if abs(sum(freqs)) > 1e-9 * max(1.0, max(abs(f) for f in freqs)):
        raise ValueError("frequencies must sum to zero")
    H = effective_hamiltonian(sys, gamma) - sys.ground_energy * np.eye(sys.dim)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, horizon, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    lam, V = np.linalg.eig(H)
    Vinv = np.linalg.inv(V)
    decay = np.exp(-1j * np.outer(nodes, lam))

    psi = np.asarray(ops[0], complex) @ sys.ground_state
    for k in range(1, len(ops)):
        F = sum(freqs[k:])
        # int_0^L exp(i F g) exp(-i H g) dg, built from its sampled integrand
        coeff = weights @ (np.exp(1j * F * nodes)[:, None] * decay)
        psi = np.asarray(ops[k], complex) @ (V @ (coeff * (Vinv @ psi)))
    return complex(psi[sys.ground])
