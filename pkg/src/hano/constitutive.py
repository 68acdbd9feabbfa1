"""Ground-truth material models and loading-path samplers.

Two material point models are provided:

* 1D elastoplasticity with linear kinematic (Prager) hardening, integrated
  with the classical elastic-predictor / plastic-corrector return map.
* An orthotropic brittle material with four Hashin-type damage modes
  (fibre tension/compression, matrix tension/compression) acting on a
  fibre/matrix split of the elastic stiffness.

Units follow the datasets they generate: GPa for the 1D model, MPa for the
damage model (elastic constants are given in GPa and converted).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ModelDefinitionError,
    NumericDomainError,
    SimulationError,
)

VOIGT = ("xx", "yy", "zz", "xy", "xz", "yz")
MODES = ("FT", "FC", "MT", "MC")

# ---------------------------------------------------------------------------
# 1D elastoplasticity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElastoplasticParams:
    """Linear elastic, kinematically hardening bar (GPa)."""

    youngs_modulus: float = 200.0
    yield_stress: float = 0.2
    hardening_modulus: float = 20.0

    def __post_init__(self):
        if not (self.youngs_modulus > 0 and self.yield_stress > 0 and self.hardening_modulus >= 0):
            raise ModelDefinitionError(f"invalid elastoplastic parameters: {self}")


@dataclass(frozen=True)
class ElastoplasticState:
    stress: float = 0.0
    back_stress: float = 0.0
    plastic_strain: float = 0.0


def ep1d_update(
    params: ElastoplasticParams,
    state: ElastoplasticState,
    d_eps: float,
    flow: str = "prager",
) -> tuple[ElastoplasticState, float]:
    """One return-mapping step for a strain increment ``d_eps``.

    ``flow="prager"`` uses sign(trial - back_stress) as the flow direction;
    ``flow="literal"`` uses sign(trial), which only agrees with the former
    while the trial stress and the relative stress share a sign.
    """
    if not (math.isfinite(d_eps) and math.isfinite(state.stress) and math.isfinite(state.back_stress)):
        raise NumericDomainError("non-finite input to ep1d_update")
    E, sy, H = params.youngs_modulus, params.yield_stress, params.hardening_modulus
    trial = state.stress + E * d_eps
    rel = trial - state.back_stress
    if abs(rel) <= sy:
        return replace(state, stress=trial), trial
    if flow == "prager":
        direction = math.copysign(1.0, rel)
    elif flow == "literal":
        direction = float(np.sign(trial))
    else:
        raise ValueError(f"unknown flow rule {flow!r}")
    d_ep = (abs(rel) - sy) / (E + H) * direction
    stress = trial - E * d_ep
    new = ElastoplasticState(
        stress=stress,
        back_stress=state.back_stress + H * d_ep,
        plastic_strain=state.plastic_strain + d_ep,
    )
    return new, stress


def ep_state_from_pair(params: ElastoplasticParams, strain: float, stress: float) -> ElastoplasticState:
    """Recover the internal state from one observed (strain, stress) pair.

    Valid for paths starting from the virgin state: the back stress is then
    always ``H * plastic_strain``.
    """
    eps_p = strain - stress / params.youngs_modulus
    return ElastoplasticState(stress=stress, back_stress=params.hardening_modulus * eps_p, plastic_strain=eps_p)


# ---------------------------------------------------------------------------
# Orthotropic Hashin damage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HashinParams:
    """Elastic constants (GPa), strengths (MPa), fracture energies (J/mm^2), l_c (mm)."""

    E_xx: float = 198.2
    E_yy: float = 11.2
    E_zz: float = 11.2
    nu_xy: float = 0.29
    nu_xz: float = 0.29
    nu_yz: float = 0.50
    G_xy: float = 8.6
    G_xz: float = 8.6
    G_yz: float = 3.7
    X_T: float = 4222.0
    X_C: float = 3800.0
    Y_T: float = 122.0
    Y_C: float = 122.0
    S_l: float = 81.0
    S_t: float = 8.7
    G_FT: float = 12.5
    G_FC: float = 12.5
    G_MT: float = 1.0
    G_MC: float = 1.0
    char_length: float = 1.0

    def __post_init__(self):
        bad = [k for k, v in asdict(self).items() if not (math.isfinite(v) and v > 0)]
        if bad:
            raise ModelDefinitionError(f"Hashin parameters must be strictly positive: {bad}")

    def fracture_energy(self, mode: str) -> float:
        """Fracture energy in MPa*mm (1 J/mm^2 = 1000 N/mm)."""
        return 1000.0 * getattr(self, f"G_{mode}")


def assemble_orthotropic_stiffness(params: HashinParams) -> np.ndarray:
    """6x6 Voigt stiffness (MPa) from engineering constants.

    Shear strains are engineering (gamma) strains, so the shear block is
    diag(G_xy, G_xz, G_yz).
    """
    p = params
    Ex, Ey, Ez = 1e3 * p.E_xx, 1e3 * p.E_yy, 1e3 * p.E_zz
    normal = np.array(
        [
            [1.0 / Ex, -p.nu_xy / Ex, -p.nu_xz / Ex],
            [-p.nu_xy / Ex, 1.0 / Ey, -p.nu_yz / Ey],
            [-p.nu_xz / Ex, -p.nu_yz / Ey, 1.0 / Ez],
        ]
    )
    sign, logdet = np.linalg.slogdet(normal)
    if sign <= 0 or not np.isfinite(logdet):
        raise ModelDefinitionError("compliance is not positive definite (inconsistent Poisson ratios)")
    C = np.zeros((6, 6))
    C[:3, :3] = np.linalg.inv(normal)
    C[:3, :3] = 0.5 * (C[:3, :3] + C[:3, :3].T)
    C[3, 3] = 1e3 * p.G_xy
    C[4, 4] = 1e3 * p.G_xz
    C[5, 5] = 1e3 * p.G_yz
    if np.linalg.eigvalsh(C).min() <= 0:
        raise ModelDefinitionError("assembled stiffness is not positive definite")
    return C


def split_fiber_matrix(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partition C into fibre (row/column xx) and matrix (remainder) parts."""
    Cf = np.zeros_like(C)
    Cf[0, :] = C[0, :]
    Cf[:, 0] = C[:, 0]
    return Cf, C - Cf


def eval_hashin_criteria(sigma, params: HashinParams) -> tuple[float, float, float, float]:
    """Return (F_FT, F_FC, F_MT, F_MC) for a Voigt stress vector (MPa)."""
    s = np.asarray(sigma, dtype=float)
    if s.shape != (6,) or not np.all(np.isfinite(s)):
        raise NumericDomainError(f"stress must be a finite 6-vector, got {s!r}")
    xx, yy, zz, xy, xz, yz = s
    p = params
    long_shear = (xy**2 + xz**2) / p.S_l**2
    trans = (yz**2 - yy * zz) / p.S_t**2
    f_ft = (xx / p.X_T) ** 2 + long_shear
    f_fc = (xx / p.X_C) ** 2
    f_mt = ((yy + zz) / p.Y_T) ** 2 + trans + long_shear
    f_mc = (
        ((p.Y_C / (2 * p.S_t)) ** 2 - 1.0) * (yy + zz) / p.Y_C
        + (yy + zz) ** 2 / (4 * p.S_t**2)
        + trans
        + long_shear
    )
    return float(f_ft), float(f_fc), float(f_mt), float(f_mc)


def equivalent_weights(params: HashinParams) -> np.ndarray:
    """Per-mode diagonal weights S_I for the equivalent displacement (4 x 6)."""
    p = params
    inv_l, inv_t = 1.0 / p.S_l**2, 1.0 / p.S_t**2
    return np.array(
        [
            [1 / p.X_T**2, 0, 0, inv_l, inv_l, 0],
            [1 / p.X_C**2, 0, 0, 0, 0, 0],
            [0, 1 / p.Y_T**2, 1 / p.Y_T**2, inv_l, inv_l, -inv_t],
            [0, inv_t / 4, inv_t / 4, inv_l, inv_l, inv_t],
        ]
    )


@dataclass
class HashinState:
    """Damage state at one material point.

    ``delta0`` / ``delta_f`` are NaN until the corresponding mode first
    activates; afterwards they stay frozen.
    """

    damage: np.ndarray = field(default_factory=lambda: np.zeros(4))
    delta0: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))
    delta_f: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))
    strain: np.ndarray = field(default_factory=lambda: np.zeros(6))
    stress: np.ndarray = field(default_factory=lambda: np.zeros(6))

    @property
    def fiber_integrity(self) -> float:
        d = self.damage
        return float((1 - d[0]) * (1 - d[1]))

    @property
    def matrix_integrity(self) -> float:
        d = self.damage
        return float((1 - d[2]) * (1 - d[3]))

    def copy(self) -> "HashinState":
        return HashinState(*(a.copy() for a in (self.damage, self.delta0, self.delta_f, self.strain, self.stress)))


class HashinModel:
    """Caches the stiffness partition and weights for repeated updates."""

    def __init__(self, params: HashinParams | None = None):
        self.params = params or HashinParams()
        self.C = assemble_orthotropic_stiffness(self.params)
        self.Cf, self.Cm = split_fiber_matrix(self.C)
        self.weights = equivalent_weights(self.params)
        self._support = self.weights != 0
        self._energies = np.array([self.params.fracture_energy(m) for m in MODES])

    def degraded_stiffness(self, state: HashinState) -> np.ndarray:
        return state.fiber_integrity * self.Cf + state.matrix_integrity * self.Cm

    def update(self, state: HashinState, eps_new) -> tuple[HashinState, np.ndarray]:
        eps = np.asarray(eps_new, dtype=float)
        if eps.shape != (6,) or not np.all(np.isfinite(eps)):
            raise NumericDomainError("strain must be a finite 6-vector")
        new = state.copy()
        trial = self.C @ eps
        F = eval_hashin_criteria(trial, self.params)
        for i in range(4):
            if F[i] < 1.0:
                continue
            d_eq2 = float(self.weights[i] @ trial**2)
            if d_eq2 <= 0.0:
                # the MT weights carry a negative yz term; no softening measure here
                continue
            d_eq = math.sqrt(d_eq2)
            if np.isnan(new.delta0[i]):
                d0 = d_eq / math.sqrt(F[i])
                # equivalent stress taken at the initiation point, not at the overshooting trial
                sig0 = float(np.linalg.norm(trial[self._support[i]])) * d0 / d_eq
                df = 2.0 * self._energies[i] / (sig0 * self.params.char_length)
                if df <= d0:
                    raise ConfigurationError(
                        f"mode {MODES[i]}: failure displacement {df:.4g} <= initiation {d0:.4g}; "
                        "fracture energy too small for the element size"
                    )
                new.delta0[i], new.delta_f[i] = d0, df
            d0, df = new.delta0[i], new.delta_f[i]
            d = df * (d_eq - d0) / (d_eq * (df - d0))
            new.damage[i] = min(max(new.damage[i], d, 0.0), 1.0)
        sigma = self.degraded_stiffness(new) @ eps
        new.strain, new.stress = eps, sigma
        return new, sigma


def hashin_update(params: HashinParams, state: HashinState, eps_new) -> tuple[HashinState, np.ndarray]:
    """Functional form of :meth:`HashinModel.update` (rebuilds the stiffness)."""
    return HashinModel(params).update(state, eps_new)


# ---------------------------------------------------------------------------
# Loading paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathConfig:
    mode: str = "cyclic-1d"
    increments_per_cycle: int = 50
    cycle_count: int = 2
    e_load: tuple[float, float] = (0.008, 0.015)
    e_unload: tuple[float, float] = (0.003, 0.007)
    eps_max: float = 0.05
    d_eps_max: float = 0.01
    d_eps_min: float = 0.005
    theta: float = 0.5
    # each random-walk increment is applied in this many equal sub-steps
    substeps: int = 10
    max_increments: int = 10_000

    def __post_init__(self):
        if self.mode not in ("cyclic-1d", "random-walk-6d"):
            raise ConfigurationError(f"unknown path mode {self.mode!r}")
        if self.increments_per_cycle < 2 or self.cycle_count < 1:
            raise ConfigurationError("need increments_per_cycle >= 2 and cycle_count >= 1")
        if not (self.e_load[0] < self.e_load[1] and self.e_unload[0] < self.e_unload[1]):
            raise ConfigurationError("amplitude ranges must have lower < upper")
        if not (0 < self.d_eps_min <= self.d_eps_max):
            raise ConfigurationError("need 0 < d_eps_min <= d_eps_max")
        if not (0 <= self.theta <= 1) or self.substeps < 1 or self.eps_max <= 0:
            raise ConfigurationError("invalid random-walk settings")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PathConfig":
        data = dict(data)
        for key in ("e_load", "e_unload"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def draw_cyclic_amplitudes(cfg: PathConfig, rng: np.random.Generator, cycles: int | None = None) -> np.ndarray:
    """Independent (e_load, e_unload) draws, one row per cycle."""
    n = cfg.cycle_count if cycles is None else cycles
    out = np.empty((n, 2))
    for c in range(n):
        out[c, 0] = rng.uniform(*cfg.e_load)
        out[c, 1] = rng.uniform(*cfg.e_unload)
    return out


def _allocate(lengths: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` steps, proportional to ``lengths``, min 1 each."""
    if total < len(lengths):
        raise ConfigurationError("fewer increments than path segments")
    share = lengths / lengths.sum() * (total - len(lengths))
    counts = np.floor(share).astype(int) + 1
    rem = total - counts.sum()
    order = np.argsort(-(share - np.floor(share)), kind="stable")
    counts[order[:rem]] += 1
    return counts


def cyclic_path_from_amplitudes(amplitudes: np.ndarray, increments_per_cycle: int) -> np.ndarray:
    """Piecewise-linear strain path 0 -> load_1 -> unload_1 -> load_2 -> ...

    Returns ``cycles * increments_per_cycle + 1`` strain values including the
    starting zero.
    """
    amps = np.atleast_2d(np.asarray(amplitudes, dtype=float))
    points = [0.0]
    for load, unload in amps:
        points += [load, unload]
    points = np.array(points)
    pieces = [points[:1]]
    for c in range(len(amps)):
        seg = points[2 * c : 2 * c + 3]
        counts = _allocate(np.abs(np.diff(seg)), increments_per_cycle)
        for j in range(2):
            a, b = seg[j], seg[j + 1]
            seg_pts = a + (b - a) * np.arange(1, counts[j] + 1) / counts[j]
            seg_pts[-1] = b  # land exactly on the turning point
            pieces.append(seg_pts)
    return np.concatenate(pieces)


def sample_cyclic_path(cfg: PathConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.mode != "cyclic-1d":
        raise ConfigurationError("sample_cyclic_path requires mode='cyclic-1d'")
    return cyclic_path_from_amplitudes(draw_cyclic_amplitudes(cfg, rng), cfg.increments_per_cycle)


def random_walk_increment(r1, r2, cfg: PathConfig) -> np.ndarray:
    """sgn(r1 - theta) * (d_min + r2 (d_max - d_min)), with sgn(0) = +1."""
    r1, r2 = np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)
    sign = np.where(r1 - cfg.theta >= 0, 1.0, -1.0)
    return sign * (cfg.d_eps_min + r2 * (cfg.d_eps_max - cfg.d_eps_min))


def sample_random_walk_path(cfg: PathConfig, rng: np.random.Generator, dim: int = 6) -> np.ndarray:
    """Random-walk strain path, shape (T, dim), starting at zero.

    Stops at the first emitted point whose Euclidean norm reaches eps_max.
    """
    if cfg.mode != "random-walk-6d":
        raise ConfigurationError("sample_random_walk_path requires mode='random-walk-6d'")
    eps = np.zeros(dim)
    points = [eps.copy()]
    for _ in range(cfg.max_increments):
        r1 = rng.uniform(size=dim)
        r2 = rng.uniform(size=dim)
        step = random_walk_increment(r1, r2, cfg) / cfg.substeps
        for _ in range(cfg.substeps):
            eps = eps + step
            points.append(eps.copy())
            if np.linalg.norm(eps) >= cfg.eps_max:
                return np.array(points)
    raise ConfigurationError("random walk did not reach eps_max within max_increments")


# ---------------------------------------------------------------------------
# Sequence simulation
# ---------------------------------------------------------------------------


def params_digest(params) -> str:
    blob = json.dumps(asdict(params), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def simulate_sequence(model: str, params, strain, seed=None, meta=None, seq_id: int = 0, flow: str = "prager"):
    """Drive a material model along ``strain`` and return a StrainStressSequence.

    ``strain`` is (T,) or (T, 1) for ``"elastoplastic"`` and (T, 6) for
    ``"hashin"``; the first row is the state the material starts from.
    """
    from .dataio import StrainStressSequence

    eps = np.asarray(strain, dtype=float)
    if model == "elastoplastic":
        eps = eps.reshape(-1, 1)
        params = params or ElastoplasticParams()
        stress = np.empty_like(eps)
        state = ElastoplasticState()
        # first point is taken as elastic from the virgin state
        state, stress[0, 0] = ep1d_update(params, state, float(eps[0, 0]), flow=flow)
        increments = np.diff(eps[:, 0])
        for t, de in enumerate(increments, start=1):
            try:
                state, stress[t, 0] = ep1d_update(params, state, float(de), flow=flow)
            except Exception as exc:
                raise SimulationError(str(exc), step=t) from exc
        units = "GPa"
    elif model == "hashin":
        if eps.ndim != 2 or eps.shape[1] != 6:
            raise ConfigurationError("hashin model needs a (T, 6) strain path")
        params = params or HashinParams()
        hm = HashinModel(params)
        state = HashinState()
        stress = np.empty_like(eps)
        for t in range(len(eps)):
            try:
                state, stress[t] = hm.update(state, eps[t])
            except ConfigurationError:
                raise
            except Exception as exc:
                raise SimulationError(str(exc), step=t) from exc
        units = "MPa"
    else:
        raise ConfigurationError(f"unknown material model {model!r}")
    return StrainStressSequence(
        strain=eps,
        stress=stress,
        model_id=model,
        units=units,
        seed=seed,
        params_digest=params_digest(params),
        seq_id=seq_id,
        meta=dict(meta or {}),
    )


def generate_sequences(
    model: str,
    count: int,
    cfg: PathConfig,
    seed: int,
    params=None,
) -> list:
    """Sample ``count`` paths and simulate them; sequence i uses seed + i."""
    seqs = []
    for i in range(count):
        rng = np.random.default_rng(seed + i)
        if model == "elastoplastic":
            if cfg.mode != "cyclic-1d":
                raise ConfigurationError("elastoplastic data uses cyclic-1d paths")
            amps = draw_cyclic_amplitudes(cfg, rng)
            path = cyclic_path_from_amplitudes(amps, cfg.increments_per_cycle)
            meta = {"amplitudes": amps.tolist(), "increments_per_cycle": cfg.increments_per_cycle}
        elif model == "hashin":
            if cfg.mode != "random-walk-6d":
                raise ConfigurationError("hashin data uses random-walk-6d paths")
            seqs.append(_hashin_with_redraws(cfg, params, rng, seed + i, i))
            continue
        else:
            raise ConfigurationError(f"unknown material model {model!r}")
        seqs.append(simulate_sequence(model, params, path, seed=seed + i, meta=meta, seq_id=i))
    return seqs


def _hashin_with_redraws(cfg: PathConfig, params, rng, seed: int, seq_id: int, max_redraws: int = 20):
    # a path whose first activation violates delta_f > delta_0 is redrawn from the same stream
    for redraws in range(max_redraws + 1):
        path = sample_random_walk_path(cfg, rng)
        try:
            return simulate_sequence("hashin", params, path, seed=seed, meta={"redraws": redraws}, seq_id=seq_id)
        except ConfigurationError:
            if redraws == max_redraws:
                raise


def check_plastic_dissipation(states: Sequence[ElastoplasticState]) -> float:
    """Smallest (sigma - alpha) * d_eps_p over consecutive states; >= 0 for admissible flow."""
    worst = math.inf
    for a, b in zip(states[:-1], states[1:]):
        d_ep = b.plastic_strain - a.plastic_strain
        if d_ep != 0.0:
            worst = min(worst, (b.stress - b.back_stress) * d_ep)
    return worst
