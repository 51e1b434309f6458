"""Configuration-driven runs with cached field solves.

One JSON file declares the geometry, the grid, the emitter and a single
experiment::

    python -m bathscatter run config.json [--cache-dir DIR] [--threads N]
                                          [--force-recompute] [--emit-manifest-only]

Frequencies in the config are angular (``omega0``, ``omega_window``, ...) or,
with a ``freq`` prefix instead of ``omega``, in units of ``2 pi c / a``.
Emitted files always use angular frequency. Every run writes
``manifest.json`` next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 fit did not converge (outputs written but flagged partial).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import logging
import sys
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from . import fdfd, markovian, smatrix, twophoton
from .emitter import (NON_MARKOVIAN, WEISSKOPF_WIGNER, EmitterParams, EmitterResponse,
                      LorentzianFit, fit_lorentzians, response_freq)
from .media import (CylinderLattice, GeometryError, PermittivityMap, PmlSpec, Grid,
                    build_crystal, build_homogeneous, emitter_site, load_raster)

log = logging.getLogger("bathscatter")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_FIT = 0, 2, 3, 4
EXPERIMENTS = ("imG_sweep", "single_scattering", "cross_sections", "two_photon_schmidt",
               "markovian_demo")
TWO_PI = 2.0 * np.pi


class ConfigError(ValueError):
    """The configuration file is missing, malformed or inconsistent."""


class SweepError(RuntimeError):
    """One or more field solves failed; ``failures`` lists them."""

    def __init__(self, failures: List[Dict]):
        super().__init__(f"{len(failures)} solve task(s) failed")
        self.failures = failures


# ---------------------------------------------------------------------------
# configuration


def _check_keys(block: Dict, allowed: Sequence[str], where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


def _number(block: Dict, key: str, where: str, default=None, positive=False,
            integer=False, minimum=None):
    if key not in block:
        if default is None:
            raise ConfigError(f"{where}.{key} is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key} must be an integer")
    if not np.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{where}.{key} must be {'positive' if positive else 'finite'}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}")
    return int(v) if integer else float(v)


def _angular(block: Dict, name: str, where: str, default=None):
    """Read ``omega<name>`` (angular) or ``freq<name>`` (units of 2 pi / a)."""
    k_om, k_fr = "omega" + name, "freq" + name
    if k_om in block and k_fr in block:
        raise ConfigError(f"{where}: give only one of {k_om} and {k_fr}")
    if k_fr in block:
        return _convert(block[k_fr], f"{where}.{k_fr}", TWO_PI)
    if k_om in block:
        return _convert(block[k_om], f"{where}.{k_om}", 1.0)
    if default is None:
        raise ConfigError(f"{where}.{k_om} (or {k_fr}) is required")
    return default


def _convert(v, where: str, scale: float):
    arr = np.asarray(v, dtype=object)
    try:
        vals = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be numeric") from None
    if arr.dtype == bool or not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise ConfigError(f"{where} must be positive")
    if vals.ndim == 0:
        return float(vals) * scale
    return [float(x) * scale for x in vals]


def _window(block: Dict, where: str, name: str = "_window", required=True):
    w = _angular(block, name, where, default=None if required else False)
    if w is False:
        return None
    if not isinstance(w, list) or len(w) != 2 or not w[0] < w[1]:
        raise ConfigError(f"{where}: window must be [low, high] with 0 < low < high")
    return float(w[0]), float(w[1])


def _direction(block: Dict, where: str) -> Tuple[float, float]:
    t = np.deg2rad(_number(block, "direction_deg", where, default=0.0))
    return float(np.cos(t)), float(np.sin(t))


_TOP_KEYS = ("geometry", "grid", "emitter", "experiment", "output", "bath")
_EXPERIMENT_KEYS = {
    "imG_sweep": ("omega_window", "freq_window", "count", "refine", "max_terms", "tol",
                  "prominence", "points_per_peak"),
    "single_scattering": ("omega_window", "freq_window", "count", "n_angles",
                          "omega_angular", "freq_angular", "direction_deg"),
    "cross_sections": ("omega_window", "freq_window", "count", "n_angles", "direction_deg"),
    "two_photon_schmidt": ("tau_omega0", "n_omega", "n_theta", "n_coarse", "n_check",
                           "n_modes", "direction_deg", "window_halfwidth_tau",
                           "points_per_width"),
    "markovian_demo": ("omega_window", "freq_window", "count", "system", "t_max_gamma",
                       "n_times"),
}


@dataclass
class ExperimentConfig:
    """Validated run configuration. See the module docstring for the file layout."""

    path: Path
    raw: Dict
    kind: str
    geometry: Dict
    grid: Dict
    omega0: float
    V0: List[float]
    x_d: Tuple[float, float]
    model: str
    experiment: Dict
    output: Path
    bath: Optional[Dict] = None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_dict(raw, path)

    @classmethod
    def from_dict(cls, raw: Dict, path: Path = Path("config.json")) -> "ExperimentConfig":
        _check_keys(raw, _TOP_KEYS, "config")
        for key in ("geometry", "emitter", "experiment"):
            if key not in raw:
                raise ConfigError(f"config.{key} is required")
        base = Path(path).resolve().parent

        _check_keys(raw["geometry"], ("kind", "eps0", "rows", "cols", "rod_radius", "defect_radius",
                                      "rod_eps", "lattice_constant", "subpixel", "path"), "geometry")
        geo = dict(raw["geometry"])
        kind = geo.get("kind")
        if kind not in ("homogeneous", "crystal", "raster"):
            raise ConfigError("geometry.kind must be homogeneous, crystal or raster")
        geo["eps0"] = _number(geo, "eps0", "geometry", default=1.0, positive=True)
        if kind == "raster":
            if "path" not in geo:
                raise ConfigError("geometry.path is required for a raster")
            p = (base / geo["path"]).resolve()
            if not p.is_file():
                raise ConfigError(f"raster file {p} does not exist")
            geo["path"] = str(p)

        grid = dict(raw.get("grid", {}))
        _check_keys(grid, ("width", "height", "resolution", "pml"), "grid")
        if kind == "raster" and set(grid) - {"pml"}:
            raise ConfigError("a raster fixes its own grid; only grid.pml may be given")
        for key in ("width", "height"):
            if key in grid:
                _number(grid, key, "grid", positive=True)
        if "resolution" in grid:
            _number(grid, "resolution", "grid", integer=True, minimum=4)
        if "pml" in grid:
            _check_keys(grid["pml"], ("thickness_cells", "polynomial_order",
                                      "target_reflection"), "grid.pml")

        em = raw["emitter"]
        _check_keys(em, ("omega0", "freq0", "V0", "x_d", "model"), "emitter")
        omega0 = _angular(em, "0", "emitter")
        V0 = em.get("V0")
        if isinstance(V0, (int, float)) and not isinstance(V0, bool):
            V0 = [V0]
        if not isinstance(V0, list) or not V0:
            raise ConfigError("emitter.V0 must be a non-empty list")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 for v in V0):
            raise ConfigError("emitter.V0 entries must be positive numbers")
        x_d = em.get("x_d", [0.0, 0.5] if kind == "crystal" else [0.0, 0.0])
        if not (isinstance(x_d, list) and len(x_d) == 2 and all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in x_d)):
            raise ConfigError("emitter.x_d must be [x, y]")
        model = em.get("model", WEISSKOPF_WIGNER)
        if model not in (WEISSKOPF_WIGNER, NON_MARKOVIAN):
            raise ConfigError(f"emitter.model must be {WEISSKOPF_WIGNER} or {NON_MARKOVIAN}")

        _check_keys(raw["experiment"], ("kind",) + tuple(
            k for v in _EXPERIMENT_KEYS.values() for k in v), "experiment")
        exp = dict(raw["experiment"])
        ekind = exp.pop("kind", None)
        if ekind not in EXPERIMENTS:
            raise ConfigError(f"experiment.kind must be one of {list(EXPERIMENTS)}")
        _check_keys(exp, _EXPERIMENT_KEYS[ekind], f"experiment ({ekind})")
        if ekind in ("imG_sweep", "single_scattering", "cross_sections", "markovian_demo"):
            _window(exp, "experiment")
            _number(exp, "count", "experiment", integer=True, minimum=1)
        if ekind == "imG_sweep" and exp["count"] < 50:
            raise ConfigError("experiment.count must be >= 50 for a Lorentzian fit")
        for key in ("n_omega", "n_theta", "n_coarse", "n_modes", "n_angles", "n_times",
                    "max_terms", "points_per_peak"):
            if key in exp:
                _number(exp, key, "experiment", integer=True, minimum=1)
        if "n_angles" in exp and exp["n_angles"] < 180:
            raise ConfigError("experiment.n_angles must be >= 180")
        if "n_theta" in exp and exp["n_theta"] < 180:
            raise ConfigError("experiment.n_theta must be >= 180")
        if exp.get("points_per_width") is not None:
            _number(exp, "points_per_width", "experiment", positive=True)

        bath = raw.get("bath")
        if bath is not None:
            _check_keys(bath, ("omega_window", "freq_window", "count", "refine", "max_terms",
                               "tol", "prominence", "points_per_peak"), "bath")
            _window(bath, "bath")
            _number(bath, "count", "bath", integer=True, minimum=50)
        if model == NON_MARKOVIAN and bath is None and ekind != "imG_sweep":
            raise ConfigError("the non_markovian model needs a bath block to fit -Im G")

        output = Path(raw.get("output", "out"))
        if not output.is_absolute():
            output = base / output
        return cls(Path(path), raw, ekind, geo, grid, float(omega0),
                   [float(v) for v in V0], (float(x_d[0]), float(x_d[1])), model, exp,
                   output, bath)

    def pml(self) -> PmlSpec:
        p = self.grid.get("pml", {})
        try:
            return PmlSpec(**p)
        except (TypeError, GeometryError) as exc:
            raise ConfigError(f"grid.pml: {exc}") from None

    def build_map(self) -> PermittivityMap:
        g, geo = self.grid, self.geometry
        try:
            if geo["kind"] == "raster":
                return load_raster(geo["path"], self.pml(), geo["eps0"])
            if geo["kind"] == "homogeneous":
                grid = Grid.centered(g.get("width", 4.0), g.get("height"),
                                     int(g.get("resolution", 32)), self.pml())
                return build_homogeneous(grid, geo["eps0"])
            spec = CylinderLattice(**{k: geo[k] for k in ("rows", "cols", "rod_radius",
                                                           "defect_radius", "rod_eps",
                                                           "lattice_constant") if k in geo})
            a = spec.lattice_constant
            width = g.get("width", spec.cols * a + 2.5)
            height = g.get("height", spec.rows * a + 2.5)
            grid = Grid.centered(width, height, int(g.get("resolution", 16)), self.pml())
            return build_crystal(spec, grid, geo["eps0"], int(geo.get("subpixel", 8)))
        except (GeometryError, TypeError, ValueError) as exc:
            raise ConfigError(f"geometry: {exc}") from None


# ---------------------------------------------------------------------------
# cached sweeps


def _source_dict(source) -> Dict:
    kind, value = source
    if kind == "dipole":
        return {"kind": "dipole", "index": [int(value[0]), int(value[1])]}
    return {"kind": "planewave", "direction": [float(value[0]), float(value[1])]}


def cache_key(pmap: PermittivityMap, omega: float, source) -> str:
    """Content hash of (geometry, grid, frequency, source)."""
    g = pmap.grid
    blob = json.dumps({"geometry": pmap.content_hash(),
                       "grid": [g.nx, g.ny, float(g.dx).hex(), [float(o).hex() for o in g.origin],
                                [g.pml.thickness_cells, g.pml.polynomial_order,
                                 float(g.pml.target_reflection).hex()]],
                       "omega": float(omega).hex(), "source": _source_dict(source)},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class SweepContext:
    """Shared state for cached solves: the permittivity map and the cache policy."""

    pmap: PermittivityMap
    cache_dir: Path
    threads: int = 1
    force: bool = False
    hits: int = 0
    misses: int = 0
    rejected: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _count(self, name: str):
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)

    def _solve_frequency(self, omega: float, sources) -> Dict:
        out, todo = {}, []
        for src in sources:
            path = self.cache_dir / f"{cache_key(self.pmap, omega, src)}.bsf"
            if not self.force and path.exists():
                try:
                    out[src] = fdfd.load_solution(path, self.pmap, omega, _source_dict(src))
                    self._count("hits")
                    continue
                except (fdfd.CacheError, OSError, ValueError) as exc:
                    log.warning("discarding cache entry: %s", exc)
                    self._count("rejected")
            todo.append((src, path))
        if todo:
            op = fdfd.HelmholtzOperator(self.pmap, omega)
            for src, path in todo:
                kind, value = src
                if kind == "dipole":
                    sol = fdfd.solve_green(op, value)
                else:
                    sol = fdfd.solve_planewave(op, value)
                fdfd.save_solution(sol, path)
                self._count("misses")
                out[src] = sol
        return out

    def sweep(self, omegas: Sequence[float], sources) -> Dict:
        """Field solutions keyed by ``(omega, source)`` for every pair requested.

        Sources are ``("dipole", (i, j))`` or ``("planewave", (dx, dy))``. All
        sources at one frequency share a factorization. Failed frequencies are
        collected and raised together as a ``SweepError`` after every other
        task has finished (and been cached).
        """
        omegas = sorted(set(float(w) for w in omegas))
        sources = [(k, tuple(v)) for k, v in sources]
        if not omegas or not sources:
            return {}
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        results, failures = {}, []

        def task(w):
            try:
                return w, self._solve_frequency(w, sources), None
            except Exception as exc:  # noqa: BLE001 - reported per task
                return w, None, f"{type(exc).__name__}: {exc}"

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                done = list(pool.map(task, omegas))
        else:
            done = [task(w) for w in omegas]
        for w, sols, err in done:
            if err is not None:
                failures.append({"omega": w, "error": err})
                continue
            for src, sol in sols.items():
                results[(w, src)] = sol
        if failures:
            raise SweepError(failures)
        return results

    def green(self, omegas, index) -> List[fdfd.FieldSolution]:
        src = ("dipole", tuple(index))
        res = self.sweep(omegas, [src])
        return [res[(float(w), src)] for w in omegas]

    def im_green(self, omegas, index) -> np.ndarray:
        return np.array([-s.at(index).imag for s in self.green(omegas, index)])


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def write_csv(path: Path, header: Sequence[str], columns: Sequence[Sequence[float]]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def count_peaks(y: np.ndarray, prominence: float = 0.05) -> int:
    y = np.asarray(y, float)
    peaks, _ = find_peaks(y, prominence=prominence * y.max())
    return int(peaks.size)


@dataclass
class Output:
    name: str
    description: str
    params: Dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# experiments


class Experiment:
    """Base class: ``planned()`` lists the files, ``run()`` writes them."""

    def __init__(self, cfg: ExperimentConfig, ctx: Optional[SweepContext], pmap: PermittivityMap):
        self.cfg = cfg
        self.ctx = ctx
        self.pmap = pmap
        self.e = cfg.experiment
        self.fit_converged = True
        self.fit: Optional[LorentzianFit] = None
        self.notes: Dict = {}
        self._index = None

    # shared pieces
    def emitter_index(self) -> Tuple[int, int]:
        if self._index is not None:
            return self._index
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                idx = emitter_site(self.pmap, self.cfg.x_d)
            except GeometryError as exc:
                raise ConfigError(f"emitter.x_d: {exc}") from None
        for w in caught:
            log.warning("%s", w.message)
        self._index = idx
        return idx

    def omegas(self) -> np.ndarray:
        lo, hi = _window(self.e, "experiment")
        return np.linspace(lo, hi, int(self.e["count"]))

    def v0_tag(self, n: int) -> str:
        return f"V0-{n}"

    def bath_fit(self, block: Dict) -> Tuple[np.ndarray, np.ndarray, LorentzianFit]:
        lo, hi = _window(block, "bath")
        idx = self.emitter_index()
        count = int(block["count"])

        def evaluate(ws):
            return self.ctx.im_green(ws, idx)
        if block.get("refine", True):
            w, J = fdfd.refined_im_green_spectrum(
                self.pmap, idx, lo, hi, n_initial=count,
                points_per_peak=int(block.get("points_per_peak", 41)),
                prominence=float(block.get("prominence", 0.02)), evaluate=evaluate)
        else:
            w = np.linspace(lo, hi, count)
            J = evaluate(w)
        try:
            fit = fit_lorentzians(w, J, max_terms=int(block.get("max_terms", 6)),
                                  tol=float(block.get("tol", 1e-3)))
        except ValueError as exc:
            log.error("Lorentzian fit failed: %s", exc)
            fit = None
        if fit is None or not fit.converged:
            self.fit_converged = False
        self.fit = fit
        return w, J, fit

    def responses(self) -> List[EmitterResponse]:
        cfg = self.cfg
        if cfg.model == NON_MARKOVIAN:
            _, _, fit = self.bath_fit(cfg.bath)
            if fit is None:
                raise SweepError([{"omega": None, "error": "no usable Lorentzian fit"}])
            return [EmitterResponse.non_markovian(EmitterParams(cfg.omega0, v, cfg.x_d), fit)
                    for v in cfg.V0]
        idx = self.emitter_index()
        im_g = -float(self.ctx.im_green([cfg.omega0], idx)[0])
        self.notes["im_green_omega0"] = im_g
        return [EmitterResponse.from_im_green(EmitterParams(cfg.omega0, v, cfg.x_d), im_g)
                for v in cfg.V0]

    def planned(self) -> List[Output]:
        raise NotImplementedError

    def run(self):
        raise NotImplementedError


class ImGSweep(Experiment):
    def planned(self):
        lo, hi = _window(self.e, "experiment")
        p = {"omega_window": [lo, hi], "count": self.e["count"],
             "refine": bool(self.e.get("refine", True))}
        return [Output("imG_spectrum.csv", "-Im G(x_d, x_d; omega) at the emitter node", p),
                Output("lorentzian_fit.json", "sum-of-Lorentzians fit of -Im G", p)]

    def run(self):
        w, J, fit = self.bath_fit(self.e)
        out = self.cfg.output
        write_csv(out / "imG_spectrum.csv", ["omega", "minus_im_green"], [w, J])
        doc = {"converged": bool(fit is not None and fit.converged),
               "peaks_in_spectrum": count_peaks(J, float(self.e.get("prominence", 0.02)))}
        if fit is not None:
            doc.update(fit.to_dict())
            doc["quality_factors"] = [float(q) for q in fit.quality_factors()]
        write_json(out / "lorentzian_fit.json", doc)


class SingleScattering(Experiment):
    def angular_omegas(self) -> List[float]:
        w = _angular(self.e, "_angular", "experiment", default=[self.cfg.omega0])
        return [w] if isinstance(w, float) else list(w)

    def planned(self):
        outs = [Output("green0_spectrum.csv", "|G0(nu)| for every V0",
                       {"V0": self.cfg.V0, "model": self.cfg.model})]
        for k, w in enumerate(self.angular_omegas()):
            outs.append(Output(f"far_field_{k}.csv",
                               "|F|^2 versus angle: bath, emitter and total scattering",
                               {"omega": w, "V0": self.cfg.V0,
                                "direction": list(_direction(self.e, "experiment"))}))
        return outs

    def run(self):
        resps = self.responses()
        nus = self.omegas()
        cols, header = [nus], ["omega"]
        for n, r in enumerate(resps):
            cols.append(np.abs(response_freq(r, nus)))
            header.append(f"abs_green0_{self.v0_tag(n)}")
        self.notes["green0_peak_counts"] = [count_peaks(c) for c in cols[1:]]
        out = self.cfg.output
        write_csv(out / "green0_spectrum.csv", header, cols)

        idx = self.emitter_index()
        d = _direction(self.e, "experiment")
        n_ang = int(self.e.get("n_angles", 360))
        ws = self.angular_omegas()
        sols = self.ctx.sweep(ws, [("dipole", idx), ("planewave", d)])
        for k, w in enumerate(ws):
            g = sols[(w, ("dipole", idx))]
            pw = sols[(w, ("planewave", d))]
            FG = fdfd.far_field(g, n_angles=n_ang)
            if self.pmap.is_homogeneous:
                Fs = np.zeros(n_ang, complex)
            else:
                Fs = fdfd.far_field(pw, n_angles=n_ang).amplitude
            E_d = pw.total_at(idx)
            cols, header = [FG.angles, np.abs(Fs) ** 2], ["theta", "bath"]
            for n, r in enumerate(resps):
                tls = -1j * r.params.V0 ** 2 * E_d * response_freq(r, w) * FG.amplitude
                cols += [np.abs(tls) ** 2, np.abs(Fs + tls) ** 2]
                header += [f"emitter_{self.v0_tag(n)}", f"total_{self.v0_tag(n)}"]
            write_csv(out / f"far_field_{k}.csv", header, cols)


class CrossSections(Experiment):
    def planned(self):
        lo, hi = _window(self.e, "experiment")
        return [Output(f"cross_sections_{self.v0_tag(n)}.csv",
                       "total cross sections: emitter only, bath only, full",
                       {"V0": v, "omega_window": [lo, hi], "count": self.e["count"],
                        "model": self.cfg.model,
                        "direction": list(_direction(self.e, "experiment"))})
                for n, v in enumerate(self.cfg.V0)]

    def run(self):
        resps = self.responses()
        idx = self.emitter_index()
        d = _direction(self.e, "experiment")
        n_ang = int(self.e.get("n_angles", 360))
        ws = [float(w) for w in self.omegas()]
        sols = self.ctx.sweep(ws, [("dipole", idx), ("planewave", d)])
        for n, r in enumerate(resps):
            rows = [smatrix.cross_section_point(r, sols[(w, ("dipole", idx))],
                                                sols[(w, ("planewave", d))], n_ang)
                    for w in ws]
            rows = np.array(rows).reshape(-1, 3)
            smatrix.CrossSectionSpectrum(np.array(ws), *rows.T).to_csv(
                self.cfg.output / f"cross_sections_{self.v0_tag(n)}.csv")


class TwoPhotonSchmidt(Experiment):
    def pulse(self) -> twophoton.GaussianInput:
        tau = _number(self.e, "tau_omega0", "experiment", default=220.0, positive=True)
        return twophoton.GaussianInput(self.cfg.omega0, tau / self.cfg.omega0,
                                       _direction(self.e, "experiment"))

    def planned(self):
        inp = self.pulse()
        outs = []
        for n, v in enumerate(self.cfg.V0):
            p = {"V0": v, "tau": inp.tau, "n_omega_min": int(self.e.get("n_omega", 257)),
                 "n_theta": int(self.e.get("n_theta", 256)), "model": self.cfg.model}
            tag = self.v0_tag(n)
            outs += [Output(f"schmidt_{tag}.json", "Schmidt weights", p),
                     Output(f"schmidt_spectra_{tag}.csv", "Schmidt mode spectra", p),
                     Output(f"schmidt_angular_{tag}.csv", "Schmidt mode angular distributions", p),
                     Output(f"connected_green2_{tag}.csv",
                            "connected two-excitation function at total energy 2 omega0", p)]
        return outs

    def run(self):
        resps = self.responses()
        inp = self.pulse()
        idx = self.emitter_index()
        n_theta = int(self.e.get("n_theta", 256))
        n_check = int(self.e.get("n_check", 3))
        hw = float(self.e.get("window_halfwidth_tau", 5.0)) / inp.tau
        lo, hi = inp.window(hw)
        if self.fit is None and self.cfg.bath:
            self.bath_fit(self.cfg.bath)
        poles = twophoton.bath_poles(self.fit)
        if poles.size == 0 and not self.pmap.is_homogeneous:
            log.warning("no bath fit available: far fields are interpolated without "
                        "resonance poles; check far_field_interpolation_error")
        n_omega = int(self.e.get("n_omega", 257))
        ppw = self.e.get("points_per_width", 1.0)
        if ppw is not None:
            every = np.concatenate([poles] + [twophoton.emitter_poles(r) for r in resps])
            n_omega = twophoton.resolved_size(every, (lo, hi), n_omega, float(ppw))
        self.notes["n_omega_used"] = n_omega
        freqs = np.linspace(lo, hi, n_omega)
        n_coarse = min(int(self.e.get("n_coarse", 64)), n_omega)
        coarse = np.linspace(freqs[0], freqs[-1], n_coarse)
        needed = list(coarse) + list(twophoton.check_frequencies(coarse, n_check, poles))
        src = ("dipole", tuple(idx))
        sols = self.ctx.sweep(needed, [src])
        pw = self.ctx.sweep([inp.center], [("planewave", inp.direction)])
        E_d = pw[(inp.center, ("planewave", inp.direction))].total_at(idx)
        F, info = twophoton.dipole_far_fields(self.pmap, idx, freqs, n_theta, n_coarse, n_check,
                                              solver=lambda w: sols[(float(w), src)],
                                              poles=poles)
        self.notes["far_field_interpolation_error"] = info["interpolation_error"]
        angles = 2 * np.pi * np.arange(n_theta) / n_theta
        out = self.cfg.output
        delta = np.linspace(-2 * hw, 2 * hw, n_omega)
        w0 = self.cfg.omega0
        for n, r in enumerate(resps):
            tag = self.v0_tag(n)
            kern = twophoton.kernel_from_far_fields(r, inp, freqs, angles, F, E_d)
            res = twophoton.schmidt(kern, int(self.e.get("n_modes", 5)))
            doc = json.loads(res.to_json())
            doc["lambda_squared_sum_retained"] = float(np.sum(res.lambdas ** 2))
            doc["n_omega"] = n_omega
            write_json(out / f"schmidt_{tag}.json", doc)
            res.write_csv(out / f"schmidt_spectra_{tag}.csv", out / f"schmidt_angular_{tag}.csv")
            g2 = np.array([smatrix.connected_green2(r, (w0 + x / 2, w0 - x / 2), (w0, w0))
                           for x in delta])
            write_csv(out / f"connected_green2_{tag}.csv",
                      ["delta_omega", "re", "im", "abs"], [delta, g2.real, g2.imag, np.abs(g2)])


class MarkovianDemo(Experiment):
    def system(self) -> markovian.LevelSystem:
        s = self.e.get("system", {"kind": "two_level"})
        where = "experiment.system"
        if not isinstance(s, dict):
            raise ConfigError(f"{where} must be an object")
        kind = s.get("kind", "two_level")
        w0 = self.cfg.omega0
        try:
            if kind == "two_level":
                return markovian.LevelSystem.two_level(w0)
            if kind == "harmonic":
                return markovian.LevelSystem.harmonic(w0, int(s.get("levels", 3)))
            if kind == "v_system":
                return markovian.LevelSystem.v_system(
                    _angular(s, "1", where, default=w0), _angular(s, "2", where),
                    float(s.get("c1", 1.0)), float(s.get("c2", 1.0)))
            if kind == "file":
                p = (self.cfg.path.resolve().parent / s["path"])
                return markovian.LevelSystem.from_json(p.read_text())
        except (KeyError, OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
        raise ConfigError(f"{where}.kind must be two_level, harmonic, v_system or file")

    def planned(self):
        outs = []
        for n, v in enumerate(self.cfg.V0):
            p = {"V0": v, "system": self.e.get("system", {"kind": "two_level"})}
            outs += [Output(f"markovian_green_{self.v0_tag(n)}.csv",
                            "single-excitation response of the level system", p),
                     Output(f"markovian_decay_{self.v0_tag(n)}.csv",
                            "<T sigma(t) sigma^dag(0)> versus t", p)]
        return outs

    def run(self):
        sys_ = self.system()
        idx = self.emitter_index()
        im_g = -float(self.ctx.im_green([self.cfg.omega0], idx)[0])
        self.notes["im_green_omega0"] = im_g
        nus = self.omegas()
        out = self.cfg.output
        for n, v in enumerate(self.cfg.V0):
            gamma = -2.0 * v ** 2 * im_g
            g = markovian.green_single(sys_, gamma, nus)
            write_csv(out / f"markovian_green_{self.v0_tag(n)}.csv",
                      ["omega", "re", "im", "abs"], [nus, g.real, g.imag, np.abs(g)])
            t_max = float(self.e.get("t_max_gamma", 10.0)) / gamma
            ts = np.linspace(0.0, t_max, int(self.e.get("n_times", 201)))
            s, sd = sys_.sigma, sys_.sigma.conj().T
            c = np.array([markovian.correlation(sys_, gamma, [(s, t), (sd, 0.0)]) for t in ts])
            write_csv(out / f"markovian_decay_{self.v0_tag(n)}.csv",
                      ["t", "re", "im", "abs"], [ts, c.real, c.imag, np.abs(c)])


_RUNNERS = {"imG_sweep": ImGSweep, "single_scattering": SingleScattering,
            "cross_sections": CrossSections, "two_photon_schmidt": TwoPhotonSchmidt,
            "markovian_demo": MarkovianDemo}


# ---------------------------------------------------------------------------
# entry points


def _manifest(cfg: ExperimentConfig, pmap: PermittivityMap, outputs: List[Output],
              status: str, failures=(), notes=None) -> Dict:
    cfg_text = json.dumps(cfg.raw, sort_keys=True)
    return {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "experiment": cfg.kind,
        "config": cfg.raw,
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "geometry_hash": pmap.content_hash(),
        "grid": {"nx": pmap.grid.nx, "ny": pmap.grid.ny, "dx": pmap.grid.dx},
        "omega0": cfg.omega0,
        "status": status,
        "partial": status != "ok",
        "files": [{"path": o.name, "description": o.description, "params": o.params}
                  for o in outputs],
        "failures": list(failures),
        "notes": notes or {},
    }


def run(config_path, cache_dir=None, threads: int = 1, force_recompute: bool = False,
        emit_manifest_only: bool = False) -> int:
    """Execute one configuration file and return the process exit code."""
    try:
        cfg = ExperimentConfig.load(config_path)
        pmap = cfg.build_map()
        cfg.output.mkdir(parents=True, exist_ok=True)
        cache = Path(cache_dir) if cache_dir else cfg.output / "cache"
        ctx = SweepContext(pmap, cache, max(1, int(threads)), force_recompute)
        exp = _RUNNERS[cfg.kind](cfg, ctx, pmap)
        outputs = exp.planned()
        exp.emitter_index()
    except (ConfigError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG

    manifest_path = cfg.output / "manifest.json"
    if emit_manifest_only:
        write_json(manifest_path, _manifest(cfg, pmap, outputs, "planned"))
        return EXIT_OK

    try:
        exp.run()
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except SweepError as exc:
        for f in exc.failures:
            log.error("solve failed at omega=%r: %s", f["omega"], f["error"])
        write_json(manifest_path, _manifest(cfg, pmap, outputs, "solver_failure",
                                            exc.failures, exp.notes))
        return EXIT_SOLVER
    except fdfd.SolverError as exc:
        log.error("solver failure: %s", exc)
        write_json(manifest_path, _manifest(cfg, pmap, outputs, "solver_failure",
                                            [{"omega": None, "error": str(exc)}], exp.notes))
        return EXIT_SOLVER
    log.info("cache: %d hits, %d solves, %d rejected entries",
             ctx.hits, ctx.misses, ctx.rejected)
    status = "ok" if exp.fit_converged else "fit_not_converged"
    write_json(manifest_path, _manifest(cfg, pmap, outputs, status, (), exp.notes))
    return EXIT_OK if exp.fit_converged else EXIT_FIT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bathscatter",
                                description="Run a bath-scattering experiment from a JSON config.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute one configuration file")
    r.add_argument("config", help="path to the JSON configuration")
    r.add_argument("--cache-dir", default=None, help="field cache directory (default: <output>/cache)")
    r.add_argument("--threads", type=int, default=1, help="parallel solve tasks")
    r.add_argument("--force-recompute", action="store_true", help="ignore cached fields")
    r.add_argument("--emit-manifest-only", action="store_true",
                   help="validate the config and write the planned manifest without solving")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_CONFIG
    return run(args.config, args.cache_dir, args.threads, args.force_recompute,
               args.emit_manifest_only)
