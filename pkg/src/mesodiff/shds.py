"""Multi-scale stochastic hybrid diffusion model.

Each community carries a fully-mixed SDE (Σ_H: P, M, E or Σ_B: P, M1, M2, E);
a continuous-time Markov chain over "community has adopters" bits couples
them.  Inactive community ``j`` activates at rate

    λ · Σ_{i active, (i, j) ∈ E_sc} M_i · size_i / Σ sizes

and is then seeded with an ``ε`` fraction of adopters.  Integration is
Euler–Maruyama with per-step thinning for the chain.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .netstruct import CommunityGraph
from .poly import Polynomial
from .rng import stream

SIGMA_H, SIGMA_B = "H", "B"
STATE_NAMES = {SIGMA_H: ("P", "M", "E"), SIGMA_B: ("P", "M1", "M2", "E")}
ADOPTER = 1  # x_1j, the adopter coordinate, for both dynamics
DEFAULT_DT = 1e-2
T_MAX = 1e4
ABSORB_TOL = 1e-12
NOISE_CHUNK = 256


@dataclass(frozen=True)
class SigmaHParams:
    beta: float
    delta1: float
    delta2: float

    def __post_init__(self):
        _check_rates(self)

    def as_array(self):
        return np.array([self.beta, self.delta1, self.delta2])


@dataclass(frozen=True)
class SigmaBParams:
    beta1: float
    beta2: float
    delta1: float
    delta2: float

    def __post_init__(self):
        _check_rates(self)

    def as_array(self):
        return np.array([self.beta1, self.beta2, self.delta1, self.delta2])


def _check_rates(p):
    for k, v in vars(p).items():
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"{k} must be a finite non-negative rate, got {v}")


# --------------------------------------------------------------------------
# meso-scale fields; all accept stacked states (..., d) and broadcastable params

def _unpack(params, n):
    if isinstance(params, (SigmaHParams, SigmaBParams)):
        return tuple(params.as_array())
    arr = np.asarray(params, dtype=np.float64)
    return tuple(arr[..., i] for i in range(n))


def _rates_h(x, params):
    beta, d1, d2 = _unpack(params, 3)
    p, m, e = x[..., 0], x[..., 1], x[..., 2]
    return beta * p * m, d1 * m * e, d2 * m


def drift_h(state, params) -> np.ndarray:
    """(−βPM, βPM − δ1ME − δ2M, δ1ME + δ2M)."""
    x = np.asarray(state, dtype=np.float64)
    a, b, c = _rates_h(x, params)
    return np.stack([-a, a - b - c, b + c], axis=-1)


def diffusion_h(state, params) -> np.ndarray:
    """Columns ±√(βPM), ±√(δ1ME), ±√(δ2M); each column sums to zero."""
    x = np.asarray(state, dtype=np.float64)
    a, b, c = (np.sqrt(np.maximum(r, 0.0)) for r in _rates_h(x, params))
    z = np.zeros_like(a)
    rows = [[-a, z, z], [a, -b, -c], [z, b, c]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _rates_b(x, params):
    b1, b2, d1, d2 = _unpack(params, 4)
    p, m1, m2 = x[..., 0], x[..., 1], x[..., 2]
    return b1 * p * m1, b2 * p * m2, d1 * m1, d2 * m2


def drift_b(state, params) -> np.ndarray:
    """(−β1PM1 − β2PM2, β1PM1 − δ1M1, β2PM2 − δ2M2, δ1M1 + δ2M2)."""
    x = np.asarray(state, dtype=np.float64)
    r1, r2, r3, r4 = _rates_b(x, params)
    return np.stack([-r1 - r2, r1 - r3, r2 - r4, r3 + r4], axis=-1)


def diffusion_b(state, params) -> np.ndarray:
    x = np.asarray(state, dtype=np.float64)
    a, b, c, d = (np.sqrt(np.maximum(r, 0.0)) for r in _rates_b(x, params))
    z = np.zeros_like(a)
    rows = [[-a, -b, z, z], [a, z, -c, z], [z, b, z, -d], [z, z, c, d]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


FIELDS = {SIGMA_H: (drift_h, diffusion_h), SIGMA_B: (drift_b, diffusion_b)}

# monomials of each drift coordinate over (state..., rates...): (sign, state index, other factor, rate index)
_DRIFT_TERMS = {
    SIGMA_H: [[(-1, 0, 1, 0)],
              [(1, 0, 1, 0), (-1, 1, 2, 1), (-1, 1, None, 2)],
              [(1, 1, 2, 1), (1, 1, None, 2)]],
    SIGMA_B: [[(-1, 0, 1, 0), (-1, 0, 2, 1)],
              [(1, 0, 1, 0), (-1, 1, None, 2)],
              [(1, 0, 2, 1), (-1, 2, None, 3)],
              [(1, 1, None, 2), (1, 2, None, 3)]],
}


def drift_polynomials(kind: str) -> list[Polynomial]:
    """Drift coordinates as polynomials in the state followed by the rates.

    Σ_H uses variables (P, M, E, β, δ1, δ2); Σ_B uses
    (P, M1, M2, E, β1, β2, δ1, δ2).
    """
    d = len(STATE_NAMES[kind])
    n = d + (3 if kind == SIGMA_H else 4)
    out = []
    for coord in _DRIFT_TERMS[kind]:
        terms = []
        for sign, a, b, r in coord:
            e = [0] * n
            e[a] += 1
            if b is not None:
                e[b] += 1
            e[d + r] += 1
            terms.append((tuple(e), float(sign)))
        out.append(Polynomial(n, terms))
    return out


def drift_sum_polynomial(kind: str) -> Polynomial:
    """Σ_i f_i collected term by term; zero terms are dropped."""
    polys = drift_polynomials(kind)
    return Polynomial(polys[0].nvars, [t for p in polys for t in p.terms.items()])


def project_simplex(x: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and renormalize each state to sum one."""
    x = np.maximum(x, 0.0)
    total = x.sum(axis=-1, keepdims=True)
    off = total != 1.0
    if np.any(off):
        x = np.where(off, x / np.where(total > 0, total, 1.0), x)
    return x


def integrate_step(state, drift, diffusion, dt: float, noise=None, clamp: bool = True) -> np.ndarray:
    """One Euler–Maruyama step ``x + f dt + G ξ √dt`` with standard normals ξ."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=np.float64)
    f = np.asarray(drift, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(f))):
        raise ValueError("non-finite state or drift")
    out = x + f * dt
    if noise is not None:
        g = np.asarray(diffusion, dtype=np.float64)
        xi = np.asarray(noise, dtype=np.float64)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(xi))):
            raise ValueError("non-finite diffusion or noise")
        out = out + np.einsum("...ij,...j->...i", g, xi) * math.sqrt(dt)
    return project_simplex(out) if clamp else out


# --------------------------------------------------------------------------
# the hybrid model

@dataclass(frozen=True)
class DiscreteState:
    active: tuple[bool, ...]

    @property
    def bits(self) -> str:
        return "".join("1" if a else "0" for a in self.active)

    @classmethod
    def from_bits(cls, bits: str):
        return cls(tuple(ch == "1" for ch in bits))


@dataclass(frozen=True)
class SHDSModel:
    community_graph: CommunityGraph
    dynamics_kind: str
    params: tuple  # one SigmaHParams / SigmaBParams per community
    noise_on: bool = True
    interaction_rate: float = 0.0
    injection: tuple[float, ...] | None = None
    # per-community multiplier on the noise columns; None means 1/sqrt(size)
    noise_scale: tuple[float, ...] | None = None
    # Σ_B only: share of the injected ε that goes to M2
    injection_split: float = 0.0
    # exogenous input: dx += H u dt in active communities, u piecewise constant
    input_gain: tuple[tuple[float, ...], ...] | None = None
    input_schedule: tuple[tuple[float, tuple[float, ...]], ...] = ()

    def __post_init__(self):
        k = self.community_graph.community_count
        if self.dynamics_kind not in FIELDS:
            raise ValueError(f"unknown dynamics kind {self.dynamics_kind!r}")
        want = SigmaHParams if self.dynamics_kind == SIGMA_H else SigmaBParams
        if len(self.params) == 1 and k > 1:
            object.__setattr__(self, "params", tuple(self.params) * k)
        if len(self.params) != k or not all(isinstance(p, want) for p in self.params):
            raise ValueError(f"need one {want.__name__} per community")
        if not (math.isfinite(self.interaction_rate) and self.interaction_rate >= 0):
            raise ValueError("interaction_rate must be finite and non-negative")
        for eps in self.injection_fractions:
            if not 0.0 < eps <= 0.1:
                raise ValueError(f"injection fraction {eps} outside (0, 0.1]")
        if not 0.0 <= self.injection_split <= 1.0:
            raise ValueError("injection_split must lie in [0, 1]")

    @classmethod
    def uniform(cls, community_graph, dynamics_kind, params, **kw):
        return cls(community_graph, dynamics_kind, (params,) * community_graph.community_count, **kw)

    @property
    def K(self) -> int:
        return self.community_graph.community_count

    @property
    def d(self) -> int:
        return len(STATE_NAMES[self.dynamics_kind])

    @property
    def noise_dim(self) -> int:
        return self.d

    @property
    def sizes(self) -> np.ndarray:
        return np.asarray(self.community_graph.sizes, dtype=np.float64)

    @property
    def injection_fractions(self) -> tuple[float, ...]:
        if self.injection is not None:
            return tuple(self.injection)
        return tuple(5.0 / s for s in self.community_graph.sizes)

    @property
    def noise_factors(self) -> np.ndarray:
        if self.noise_scale is not None:
            return np.asarray(self.noise_scale, dtype=np.float64)
        return 1.0 / np.sqrt(self.sizes)

    @property
    def param_matrix(self) -> np.ndarray:
        return np.stack([p.as_array() for p in self.params])

    def potential_state(self) -> np.ndarray:
        x = np.zeros(self.d)
        x[0] = 1.0
        return x

    def injected_state(self, j: int) -> np.ndarray:
        return self.seeded_state(j, self.injection_fractions[j])

    def seeded_state(self, j: int, eps: float) -> np.ndarray:
        x = self.potential_state()
        x[0] = 1.0 - eps
        if self.dynamics_kind == SIGMA_B:
            x[1] = eps * (1.0 - self.injection_split)
            x[2] = eps * self.injection_split
        else:
            x[1] = eps
        return x

    def member_coords(self) -> list[int]:
        return [1, 2] if self.dynamics_kind == SIGMA_B else [1]

    def input_at(self, t: float) -> np.ndarray | None:
        if self.input_gain is None or not self.input_schedule:
            return None
        u = None
        for start, val in self.input_schedule:
            if t >= start:
                u = np.asarray(val, dtype=np.float64)
        return u

    def drift(self, x):
        f, _ = FIELDS[self.dynamics_kind]
        return f(x, self.param_matrix)

    def diffusion(self, x):
        _, g = FIELDS[self.dynamics_kind]
        out = g(x, self.param_matrix)
        return out * self.noise_factors[:, None, None] if out.ndim >= 3 else out

    def initial(self, seeds: dict[int, float]):
        """Continuous and discrete initial state with ``seeds[j]`` adopters
        (fraction of community ``j``) in the listed communities."""
        x = np.tile(self.potential_state(), (self.K, 1))
        active = [False] * self.K
        for j, eps in seeds.items():
            if eps > 0:
                x[j] = self.seeded_state(j, eps)
                active[j] = True
        return x, DiscreteState(tuple(active))


def chain_rate(model: SHDSModel, x, q: DiscreteState) -> dict[int, float]:
    """Activation rate of every inactive community (the q → q+e_j entries)."""
    x = np.asarray(x, dtype=np.float64).reshape(model.K, model.d)
    active = np.asarray(q.active, dtype=bool)
    if len(active) != model.K:
        raise ValueError("discrete state has the wrong number of bits")
    contrib = np.where(active, x[:, ADOPTER] * model.sizes, 0.0)
    rates = model.interaction_rate * (contrib @ model.community_graph.meta_adjacency) / model.sizes.sum()
    return {j: float(rates[j]) for j in range(model.K) if not active[j]}


# --------------------------------------------------------------------------
# simulation kernel (batched over independent runs, one RNG stream per run)

@dataclass
class BatchResult:
    hit: np.ndarray
    hit_time: np.ndarray
    final_x: np.ndarray
    final_active: np.ndarray
    end_time: np.ndarray
    absorbed: np.ndarray
    ever_adopted: np.ndarray  # max over time of 1 − P per community
    records: list | None = None


def _noise_chunk(gens, model, steps):
    normals = []
    uniforms = []
    for g in gens:
        normals.append(g.standard_normal((steps, model.K, model.noise_dim)) if model.noise_on else None)
        uniforms.append(g.random((steps, model.K)))
    n = np.stack(normals, axis=1) if model.noise_on else None
    return n, np.stack(uniforms, axis=1)


def run_batch(model: SHDSModel, x0, active0, horizon: float, dt: float, seed, run_ids,
              hit_fn: Callable | None = None, record_stride: int | None = None,
              stop_on_hit: bool = True, absorb: bool = True, rate_scale=None) -> BatchResult:
    """Simulate ``len(run_ids)`` independent paths.

    Run ``i`` draws only from ``stream(seed, run_ids[i])``, so its result does
    not depend on which other runs share the batch.  ``hit_fn(x, active)``
    receives states of shape (R, K, d) and returns a bool mask; it is checked
    at t = 0 and after every step.  ``rate_scale`` (R,) multiplies λ per run.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    if dt >= horizon:
        raise ValueError("dt must be smaller than the horizon")
    if not np.all(np.isfinite(model.param_matrix)):
        raise ValueError("non-finite parameters")
    x = np.array(x0, dtype=np.float64)
    active = np.array(active0, dtype=bool)
    R = len(run_ids)
    if x.ndim == 2:
        x = np.broadcast_to(x, (R,) + x.shape).copy()
    if active.ndim == 1:
        active = np.broadcast_to(active, (R, model.K)).copy()
    if x.shape != (R, model.K, model.d):
        raise ValueError(f"initial states must have shape {(R, model.K, model.d)}")
    members = model.member_coords()
    if np.any(~active & (x[..., members].sum(axis=-1) > 0)):
        raise ValueError("inactive communities must have no adopters")

    n_steps = int(math.ceil(horizon / dt - 1e-9))
    adj = model.community_graph.meta_adjacency
    lam = np.full(R, model.interaction_rate / model.sizes.sum())
    if rate_scale is not None:
        scale_r = np.asarray(rate_scale, dtype=np.float64)
        if scale_r.shape != (R,) or np.any(scale_r < 0) or not np.all(np.isfinite(scale_r)):
            raise ValueError("rate_scale must be R finite non-negative values")
        lam = lam * scale_r
    sizes = model.sizes
    pm = model.param_matrix
    fdrift, fdiff = FIELDS[model.dynamics_kind]
    scale = model.noise_factors[:, None, None]
    inject = np.stack([model.injected_state(j) for j in range(model.K)])
    gain = None if model.input_gain is None else np.asarray(model.input_gain, dtype=np.float64)
    can_absorb = absorb and (gain is None or not model.input_schedule)
    sqdt = math.sqrt(dt)

    hit = np.zeros(R, dtype=bool)
    hit_time = np.full(R, np.nan)
    end_time = np.full(R, float(n_steps) * dt)
    absorbed = np.zeros(R, dtype=bool)
    final_x = x.copy()
    final_active = active.copy()
    ever = 1.0 - x[..., 0]
    records = [] if record_stride else None

    alive = np.arange(R)
    gens = [stream(seed, int(r)) for r in run_ids]

    def retire(mask, t):
        idx = alive[mask]
        final_x[idx] = x[mask]
        final_active[idx] = active[mask]
        end_time[idx] = t
        return ~mask

    if hit_fn is not None:
        h = np.asarray(hit_fn(x, active), dtype=bool)
        hit[h] = True
        hit_time[h] = 0.0
        if stop_on_hit and h.any():
            keep = retire(h, 0.0)
            alive, x, active = alive[keep], x[keep], active[keep]
            gens = [g for g, k in zip(gens, keep) if k]
    if records is not None:
        records.append((0.0, x.copy(), active.copy()))

    k = 0
    while k < n_steps and len(alive):
        chunk = min(NOISE_CHUNK, n_steps - k)
        normals, uniforms = _noise_chunk(gens, model, chunk)
        done = np.zeros(len(alive), dtype=bool)
        for s in range(chunk):
            t = (k + s) * dt
            live = ~done
            contrib = np.where(active, x[..., ADOPTER] * sizes, 0.0)
            rates = lam[alive, None] * (contrib @ adj)
            jump = ~active & (uniforms[s] < rates * dt) & live[:, None]
            f = fdrift(x, pm)
            if gain is not None:
                u = model.input_at(t)
                if u is not None:
                    f = f + np.where(active[..., None], gain @ u, 0.0)
            nx = x + f * dt
            if model.noise_on:
                g = fdiff(x, pm) * scale
                nx = nx + np.einsum("rkij,rkj->rki", g, normals[s]) * sqdt
            nx = project_simplex(nx)
            if jump.any():
                nx = np.where(jump[..., None], inject[None], nx)
                active = active | jump
            x = np.where(live[:, None, None], nx, x)
            ever[alive] = np.maximum(ever[alive], 1.0 - x[..., 0])
            t_new = (k + s + 1) * dt
            if hit_fn is not None:
                h = np.asarray(hit_fn(x, active), dtype=bool) & live & ~hit[alive]
                if h.any():
                    hit[alive[h]] = True
                    hit_time[alive[h]] = t_new
                    if stop_on_hit:
                        newly = h & ~done
                        final_x[alive[newly]] = x[newly]
                        final_active[alive[newly]] = active[newly]
                        end_time[alive[newly]] = t_new
                        done |= h
            if can_absorb:
                extinct = (x[..., members].sum(axis=(-1, -2)) <= ABSORB_TOL) & ~done
                if extinct.any():
                    absorbed[alive[extinct]] = True
                    final_x[alive[extinct]] = x[extinct]
                    final_active[alive[extinct]] = active[extinct]
                    end_time[alive[extinct]] = t_new
                    done |= extinct
            if records is not None and (k + s + 1) % record_stride == 0:
                records.append((t_new, x.copy(), active.copy()))
            if done.all():
                break
        k += chunk
        still = ~done
        if k >= n_steps:
            final_x[alive[still]] = x[still]
            final_active[alive[still]] = active[still]
        alive, x, active = alive[still], x[still], active[still]
        gens = [g for g, st in zip(gens, still) if st]
    return BatchResult(hit, hit_time, final_x, final_active, end_time, absorbed, ever, records)


# --------------------------------------------------------------------------
# single trajectories

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (T, K, d)
    active: np.ndarray  # (T, K) bool
    jumps: list[tuple[float, int, int]] = field(default_factory=list)
    dynamics_kind: str = SIGMA_H

    def discrete_states(self) -> list[DiscreteState]:
        return [DiscreteState(tuple(bool(b) for b in row)) for row in self.active]

    def adopted(self) -> np.ndarray:
        """Ever-adopted fraction 1 − P per community over time."""
        return 1.0 - self.states[..., 0]


def simulate(model: SHDSModel, initial_states, initial_discrete: DiscreteState, horizon: float,
             dt: float = DEFAULT_DT, seed=0, record_stride: int = 1, absorb: bool = False) -> Trajectory:
    """One sample path; identical to run 0 of ``run_batch`` with the same seed."""
    active0 = np.asarray(initial_discrete.active, dtype=bool)
    res = run_batch(model, np.asarray(initial_states, dtype=np.float64)[None], active0[None],
                    horizon, dt, seed, [0], record_stride=record_stride, absorb=absorb)
    times = np.array([r[0] for r in res.records])
    states = np.stack([r[1][0] for r in res.records])
    active = np.stack([r[2][0] for r in res.records])
    jumps = []
    adj = model.community_graph.meta_adjacency
    for k in range(1, len(times)):
        for j in np.flatnonzero(active[k] & ~active[k - 1]):
            prev = states[k - 1]
            contrib = np.where(active[k - 1], prev[:, ADOPTER] * model.sizes, 0.0) * adj[:, j]
            jumps.append((float(times[k]), int(j), int(np.argmax(contrib))))
    return Trajectory(times, states, active, jumps, model.dynamics_kind)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    cols = ["t", "q_bits", "community", "P", "M", "E"] + (["M2"] if traj.dynamics_kind == SIGMA_B else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for t, x, q in zip(traj.times, traj.states, traj.active):
            bits = "".join("1" if b else "0" for b in q)
            for j, row in enumerate(x):
                if traj.dynamics_kind == SIGMA_B:
                    vals = [row[0], row[1], row[3], row[2]]
                else:
                    vals = list(row)
                w.writerow([repr(float(t)), bits, j] + [repr(float(v)) for v in vals])


# --------------------------------------------------------------------------
# config files

def model_from_config(cfg: dict) -> SHDSModel:
    """Build a model from the JSON schema documented in the README."""
    cg = cfg["community_graph"]
    graph = CommunityGraph(len(cg["sizes"]), tuple(int(s) for s in cg["sizes"]),
                           tuple((int(a), int(b)) for a, b in cg.get("edges", [])))
    kind = cfg.get("dynamics", SIGMA_H)
    cls = SigmaHParams if kind == SIGMA_H else SigmaBParams
    raw = cfg["params"]
    plist = [cls(**p) for p in raw] if isinstance(raw, list) else [cls(**raw)] * graph.community_count
    gain = cfg.get("input_gain")
    return SHDSModel(
        graph, kind, tuple(plist),
        noise_on=bool(cfg.get("noise_on", True)),
        interaction_rate=float(cfg.get("interaction_rate", 0.0)),
        injection=None if cfg.get("injection") is None else tuple(float(e) for e in cfg["injection"]),
        noise_scale=None if cfg.get("noise_scale") is None else tuple(float(e) for e in cfg["noise_scale"]),
        injection_split=float(cfg.get("injection_split", 0.0)),
        input_gain=None if gain is None else tuple(tuple(float(v) for v in row) for row in gain),
        input_schedule=tuple((float(t), tuple(float(v) for v in u)) for t, u in cfg.get("input_schedule", [])),
    )


def model_to_config(model: SHDSModel) -> dict:
    cg = model.community_graph
    return {
        "dynamics": model.dynamics_kind,
        "community_graph": {"sizes": list(cg.sizes), "edges": [list(e) for e in cg.meta_edges]},
        "params": [vars(p) for p in model.params],
        "noise_on": model.noise_on,
        "interaction_rate": model.interaction_rate,
        "injection": None if model.injection is None else list(model.injection),
        "noise_scale": None if model.noise_scale is None else list(model.noise_scale),
        "injection_split": model.injection_split,
        "input_gain": None if model.input_gain is None else [list(r) for r in model.input_gain],
        "input_schedule": [[t, list(u)] for t, u in model.input_schedule],
    }


def load_model(path) -> SHDSModel:
    with open(path) as fh:
        return model_from_config(json.load(fh))
