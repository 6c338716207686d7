"""Stochastic reachability: Monte Carlo estimates, altitude-function checks,
ES predictability and reach-warning regions.

Certificates are *verified* on sample points, never synthesized; a passing
check is sampled evidence for the bound, not a proof of it.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from . import shds
from .poly import Polynomial
from .rng import stream

EVIDENCE_NOTE = "sampled evidence, not proof"
CONDITION_TOL = 1e-9
GENERIC_DT = 1e-3


# --------------------------------------------------------------------------
# regions

@dataclass(frozen=True)
class StateRegion:
    """Box ∩ {g_k(x) ≥ 0} with optional discrete-state filters.

    ``simplex_block = d`` declares that coordinates come in consecutive
    blocks of ``d`` summing to one (the SHDS state space); sampling then
    stays on the product of simplices.  ``active_any`` / ``active_all`` filter
    SHDS activation bits; ``discrete`` lists allowed discrete-state indices.
    """
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    inequalities: tuple[Polynomial, ...] = ()
    simplex_block: int | None = None
    discrete: tuple[int, ...] | None = None
    active_any: tuple[int, ...] | None = None
    active_all: tuple[int, ...] | None = None
    tol: float = 1e-12

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("empty box: lower exceeds upper")
        for g in self.inequalities:
            if g.nvars != self.dim:
                raise ValueError("inequality dimension does not match region")

    @classmethod
    def box(cls, lower, upper, **kw):
        return cls(tuple(float(v) for v in lower), tuple(float(v) for v in upper), **kw)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains_continuous(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        ok = np.all((x >= lo - self.tol) & (x <= hi + self.tol), axis=-1)
        for g in self.inequalities:
            ok &= g(x) >= -self.tol
        return ok

    def discrete_ok(self, q=None, active=None) -> np.ndarray | bool:
        ok = True
        if self.discrete is not None and q is not None:
            ok = np.isin(q, self.discrete)
        if active is not None:
            a = np.asarray(active, dtype=bool)
            if self.active_any is not None:
                ok = ok & np.any(a[..., list(self.active_any)], axis=-1)
            if self.active_all is not None:
                ok = ok & np.all(a[..., list(self.active_all)], axis=-1)
        return ok

    def contains(self, x, q=None, active=None) -> np.ndarray:
        return self.contains_continuous(x) & self.discrete_ok(q, active)

    def allowed_states(self, n_states: int, bits: int | None = None) -> list[int]:
        qs = list(range(n_states)) if self.discrete is None else [q for q in self.discrete if q < n_states]
        if bits is not None:
            act = [np.array([(q >> j) & 1 for j in range(bits)], dtype=bool) for q in qs]
            qs = [q for q, a in zip(qs, act) if bool(self.discrete_ok(None, a))]
        return qs

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """Low-discrepancy points plus box corners, filtered by the inequalities."""
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if self.simplex_block:
            b = self.simplex_block
            blocks = self.dim // b
            u = _sobol(blocks * (b - 1), n, seed)
            pts = _to_simplices(u, blocks, b)
            verts = np.stack([np.tile(np.eye(b)[v], blocks) for v in range(b)])
            pts = np.vstack([verts, pts])
        else:
            free = hi > lo
            pts = np.tile(lo, (n, 1))
            if free.any():
                pts[:, free] = lo[free] + _sobol(int(free.sum()), n, seed) * (hi - lo)[free]
            if self.dim <= 12:
                corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=np.float64)
                pts = np.vstack([np.unique(corners, axis=0), pts])
        return pts[self.contains_continuous(pts)]

    def to_config(self) -> dict:
        return {
            "lower": list(self.lower), "upper": list(self.upper),
            "inequalities": [g.to_terms() for g in self.inequalities],
            "simplex_block": self.simplex_block,
            "discrete": None if self.discrete is None else list(self.discrete),
            "active_any": None if self.active_any is None else list(self.active_any),
            "active_all": None if self.active_all is None else list(self.active_all),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "StateRegion":
        n = len(cfg["lower"])
        tup = lambda k: None if cfg.get(k) is None else tuple(int(v) for v in cfg[k])
        return cls.box(cfg["lower"], cfg["upper"],
                       inequalities=tuple(Polynomial.from_terms(n, t) for t in cfg.get("inequalities", [])),
                       simplex_block=cfg.get("simplex_block"),
                       discrete=tup("discrete"), active_any=tup("active_any"), active_all=tup("active_all"))


def _sobol(dim: int, n: int, seed: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((n, 0))
    m = max(1, math.ceil(math.log2(max(n, 2))))
    pts = qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)
    return pts[:n]


def _to_simplices(u: np.ndarray, blocks: int, b: int) -> np.ndarray:
    """Uniform spacings: sorted uniforms in each block give a simplex point."""
    n = len(u)
    u = u.reshape(n, blocks, b - 1)
    s = np.sort(u, axis=-1)
    edges = np.concatenate([np.zeros((n, blocks, 1)), s, np.ones((n, blocks, 1))], axis=-1)
    return np.diff(edges, axis=-1).reshape(n, blocks * b)


def shds_state_space(model: shds.SHDSModel, **kw) -> StateRegion:
    n = model.K * model.d
    return StateRegion.box([0.0] * n, [1.0] * n, simplex_block=model.d, **kw)


def adopted_fraction_region(model: shds.SHDSModel, threshold: float, communities=None, **kw) -> StateRegion:
    """{Σ_{j∈C} size_j (1 − P_j) / Σ_{j∈C} size_j ≥ threshold}."""
    comms = range(model.K) if communities is None else list(communities)
    sizes = model.sizes
    total = sum(sizes[j] for j in comms)
    coefs = np.zeros(model.K * model.d)
    for j in comms:
        coefs[j * model.d] = -sizes[j] / total
    g = Polynomial.linear(coefs, 1.0 - threshold)
    return shds_state_space(model, inequalities=(g,), **kw)


# --------------------------------------------------------------------------
# hybrid systems in generator form

@dataclass
class HybridSystem:
    """dx = (f_q + H_q u) dt + G_q dw on X, with a chain of x-dependent rates.

    ``transitions(x, q, p)`` returns ``[(q2, rate, x_after)]``; ``x_after``
    is the continuous state right after the jump (``None`` means unchanged).
    All callables accept stacked states (..., n).
    """
    dim: int
    noise_dim: int
    n_states: int
    drift: Callable
    diffusion: Callable
    state_space: StateRegion
    transitions: Callable | None = None
    input_gain: Callable | None = None
    input_dim: int = 0
    params: np.ndarray | None = None
    param_box: tuple[np.ndarray, np.ndarray] | None = None
    input_box: tuple[np.ndarray, np.ndarray] | None = None
    bits: int | None = None  # discrete states encode activation bits when set

    def param_corners(self) -> list:
        if self.param_box is None:
            return [self.params]
        lo, hi = self.param_box
        return [np.array(c) for c in itertools.product(*zip(lo, hi))]

    def input_corners(self) -> list:
        if self.input_box is None:
            return [None]
        lo, hi = self.input_box
        return [np.array(c) for c in itertools.product(*zip(lo, hi))]


def pure_diffusion(sigma: float, lower: float = 0.0, upper: float = 1.0) -> HybridSystem:
    """dx = σ dw on [lower, upper], stopped at the boundary."""
    return HybridSystem(
        dim=1, noise_dim=1, n_states=1,
        drift=lambda x, q, p: np.zeros_like(np.asarray(x, dtype=np.float64)),
        diffusion=lambda x, q, p: np.full(np.shape(x) + (1,), float(sigma)),
        state_space=StateRegion.box([lower], [upper]),
    )


def hybrid_view(model: shds.SHDSModel, param_box=None) -> HybridSystem:
    """The SHDS as a hybrid system over x = (x_1, …, x_K) flattened.

    Discrete state ``q`` encodes activation bits (bit j ↔ community j);
    inactive communities are frozen.  The parameter vector is ``[λ]``.
    """
    K, d = model.K, model.d
    n = K * d
    adj = model.community_graph.meta_adjacency
    sizes = model.sizes
    total = sizes.sum()
    fdrift, fdiff = shds.FIELDS[model.dynamics_kind]
    pm = model.param_matrix
    scale = model.noise_factors
    inject = [model.injected_state(j) for j in range(K)]

    def act(q):
        return np.array([(q >> j) & 1 for j in range(K)], dtype=bool)

    def drift(x, q, p=None):
        xr = np.asarray(x, dtype=np.float64).reshape(np.shape(x)[:-1] + (K, d))
        f = fdrift(xr, pm) * act(q)[:, None]
        return f.reshape(np.shape(x))

    def diffusion(x, q, p=None):
        lead = np.shape(x)[:-1]
        g = np.zeros(lead + (n, n))
        if not model.noise_on:
            return g
        xr = np.asarray(x, dtype=np.float64).reshape(lead + (K, d))
        blocks = fdiff(xr, pm) * (scale * act(q))[:, None, None]
        for j in range(K):
            g[..., j * d:(j + 1) * d, j * d:(j + 1) * d] = blocks[..., j, :, :]
        return g

    def transitions(x, q, p=None):
        lam = model.interaction_rate if p is None else float(np.asarray(p)[0])
        a = act(q)
        xr = np.asarray(x, dtype=np.float64).reshape(np.shape(x)[:-1] + (K, d))
        contrib = np.where(a, xr[..., shds.ADOPTER] * sizes, 0.0)
        rates = lam * (contrib @ adj) / total
        out = []
        for j in np.flatnonzero(~a):
            after = xr.copy()
            after[..., j, :] = inject[j]
            out.append((q | (1 << int(j)), rates[..., j], after.reshape(np.shape(x))))
        return out

    gain = None
    if model.input_gain is not None:
        h = np.asarray(model.input_gain, dtype=np.float64)

        def gain(x, q, p=None):
            a = act(q)
            out = np.zeros((n, h.shape[1]))
            for j in np.flatnonzero(a):
                out[j * d:(j + 1) * d] = h
            return out

    return HybridSystem(
        dim=n, noise_dim=n, n_states=2**K, drift=drift, diffusion=diffusion,
        state_space=shds_state_space(model), transitions=transitions, input_gain=gain,
        input_dim=0 if model.input_gain is None else len(model.input_gain[0]),
        params=np.array([model.interaction_rate]), param_box=param_box, bits=K,
    )


def as_system(model) -> HybridSystem:
    return hybrid_view(model) if isinstance(model, shds.SHDSModel) else model


# --------------------------------------------------------------------------
# certificates and the generator

@dataclass
class AltitudeCertificate:
    """Polynomial A_q per discrete state (``default`` for unlisted states).

    With ``time_augmented`` the last polynomial variable is time.
    """
    gamma: float
    nvars: int
    polys: dict[int, Polynomial] = field(default_factory=dict)
    default: Polynomial | None = None
    time_augmented: bool = False
    max_degree: int | None = None

    def __post_init__(self):
        for p in list(self.polys.values()) + ([self.default] if self.default else []):
            if p.nvars != self.nvars:
                raise ValueError("certificate polynomial dimension mismatch")
            if self.max_degree is not None and p.degree > self.max_degree:
                raise ValueError(f"polynomial degree {p.degree} exceeds bound {self.max_degree}")
        if not self.polys and self.default is None:
            raise ValueError("certificate has no polynomials")

    @property
    def state_dim(self) -> int:
        return self.nvars - 1 if self.time_augmented else self.nvars

    def poly(self, q: int) -> Polynomial:
        p = self.polys.get(int(q), self.default)
        if p is None:
            raise ValueError(f"no altitude polynomial for discrete state {q}")
        return p

    @classmethod
    def single(cls, poly: Polynomial, gamma: float, time_augmented=False):
        return cls(gamma, poly.nvars, {}, poly, time_augmented)

    def to_config(self) -> dict:
        return {
            "gamma": self.gamma, "nvars": self.nvars, "time_augmented": self.time_augmented,
            "max_degree": self.max_degree,
            "states": {str(q): p.to_terms() for q, p in sorted(self.polys.items())},
            "default": None if self.default is None else self.default.to_terms(),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "AltitudeCertificate":
        n = int(cfg["nvars"])
        polys = {int(q): Polynomial.from_terms(n, t) for q, t in cfg.get("states", {}).items()}
        default = None if cfg.get("default") is None else Polynomial.from_terms(n, cfg["default"])
        return cls(float(cfg["gamma"]), n, polys, default, bool(cfg.get("time_augmented", False)),
                   cfg.get("max_degree"))


def load_certificate(path) -> AltitudeCertificate:
    with open(path) as fh:
        return AltitudeCertificate.from_config(json.load(fh))


def save_certificate(cert: AltitudeCertificate, path) -> None:
    with open(path, "w") as fh:
        json.dump(cert.to_config(), fh, indent=2, sort_keys=True)


def _augment(x, t, cert):
    if not cert.time_augmented:
        return x
    t = np.broadcast_to(np.asarray(t if t is not None else 0.0, dtype=np.float64), x.shape[:-1])
    return np.concatenate([x, t[..., None]], axis=-1)


def generator_apply(cert: AltitudeCertificate, model, x, q: int = 0, u=None, p=None, t=None) -> np.ndarray:
    """BA_q(x) = ∂A_q/∂x (f_q + H_q u) + ½ tr(G_qᵀ ∂²A_q/∂x² G_q)
    + Σ_{q'} λ_{qq'} (A_{q'}(x⁺) − A_q(x)) [+ ∂A_q/∂t].

    ``x⁺`` is the post-jump state; the jump sum equals Σ_{q'} λ_{qq'} A_{q'}
    with λ_qq = −Σ_{q'≠q} λ_{qq'} whenever jumps leave x unchanged.
    """
    sys = as_system(model)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != sys.dim or cert.state_dim != sys.dim:
        raise ValueError(f"dimension mismatch: state {x.shape[-1]}, system {sys.dim}, certificate {cert.state_dim}")
    p = sys.params if p is None else p
    n = sys.dim
    A = cert.poly(q)
    z = _augment(x, t, cert)
    grad = A.gradient(z)
    hess = A.hessian(z)[..., :n, :n]
    f = np.asarray(sys.drift(x, q, p), dtype=np.float64)
    if sys.input_gain is not None and u is not None:
        f = f + sys.input_gain(x, q, p) @ np.asarray(u, dtype=np.float64)
    g = np.asarray(sys.diffusion(x, q, p), dtype=np.float64)
    out = np.einsum("...i,...i->...", grad[..., :n], f)
    out = out + 0.5 * np.einsum("...ji,...jk,...ki->...", g, hess, g)
    if cert.time_augmented:
        out = out + grad[..., n]
    if sys.transitions is not None:
        here = A(z)
        for q2, rate, after in sys.transitions(x, q, p):
            xa = x if after is None else np.asarray(after)
            out = out + np.asarray(rate) * (cert.poly(q2)(_augment(xa, t, cert)) - here)
    return out


# --------------------------------------------------------------------------
# sampled certificate checks

@dataclass(frozen=True)
class SamplePlan:
    n_state_space: int = 10_000
    n_initial: int = 1_000
    n_target: int = 1_000
    tol: float = CONDITION_TOL
    seed: int = 0


@dataclass
class ConditionResult:
    name: str
    passed: bool
    worst_margin: float
    witness: dict | None
    samples: int


@dataclass
class CheckReport:
    conditions: list[ConditionResult]
    gamma: float
    plan: SamplePlan
    horizon: float | None
    note: str = EVIDENCE_NOTE

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def summary(self) -> str:
        kind = "infinite" if self.horizon is None else f"finite T={self.horizon!r}"
        lines = [f"certificate check ({kind} horizon): {'PASS' if self.passed else 'FAIL'}; "
                 f"gamma={self.gamma!r} ({self.note})"]
        for c in self.conditions:
            lines.append(f"  {c.name}: {'pass' if c.passed else 'FAIL'} samples={c.samples} "
                         f"worst_margin={c.worst_margin!r} witness={c.witness}")
        lines.append(f"  plan: X={self.plan.n_state_space} X0={self.plan.n_initial} "
                     f"Xs={self.plan.n_target} tol={self.plan.tol!r} seed={self.plan.seed}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["condition", "passed", "worst_margin", "samples", "witness"])
            for c in self.conditions:
                w.writerow([c.name, int(c.passed), repr(c.worst_margin), c.samples,
                            json.dumps(c.witness, sort_keys=True)])


def _witness(x, q, p=None, u=None, t=None):
    w = {"x": [float(v) for v in np.atleast_1d(x)], "q": int(q)}
    if p is not None:
        w["p"] = [float(v) for v in np.atleast_1d(p)]
    if u is not None:
        w["u"] = [float(v) for v in np.atleast_1d(u)]
    if t is not None:
        w["t"] = float(t)
    return w


def _times(n, horizon, seed):
    if horizon is None:
        return None
    s = _sobol(1, n, seed + 7)[:, 0] * horizon
    s[:2] = [0.0, horizon][:len(s[:2])]
    return s


def check_certificate(cert: AltitudeCertificate, model, X0: StateRegion, Xs: StateRegion,
                      X: StateRegion | None = None, plan: SamplePlan = SamplePlan(),
                      horizon: float | None = None) -> CheckReport:
    """Evaluate the four altitude-function conditions on a sample plan.

    ``horizon=None`` checks the infinite-horizon form; a finite ``horizon``
    requires a time-augmented certificate and checks condition 1 at t = 0
    and conditions 2-4 over t ∈ [0, horizon].
    """
    sys = as_system(model)
    X = sys.state_space if X is None else X
    if horizon is not None and not cert.time_augmented:
        raise ValueError("finite-horizon checks need a time-augmented certificate")
    tol = plan.tol
    x0 = X0.sample(plan.n_initial, plan.seed)
    xs = Xs.sample(plan.n_target, plan.seed + 1)
    xx = X.sample(plan.n_state_space, plan.seed + 2)
    for name, pts in (("X0", x0), ("Xs", xs), ("X", xx)):
        if len(pts) == 0:
            raise ValueError(f"degenerate region {name}: no sample points generated")
    ts = _times(len(xs), horizon, plan.seed)
    tx = _times(len(xx), horizon, plan.seed + 1)
    t0 = None if horizon is None else np.zeros(len(x0))

    def scan(name, pts, states, values, times=None, extra=None):
        worst, wit, count = math.inf, None, 0
        for q in states:
            for p, u in (extra or [(None, None)]):
                v = values(pts, q, p, u, times)
                count += len(v)
                i = int(np.argmin(v))
                if v[i] < worst:
                    worst = float(v[i])
                    wit = _witness(pts[i], q, p, u, None if times is None else times[i])
        return ConditionResult(name, worst >= -tol, worst, wit if worst < -tol else None, count)

    all_q = X.allowed_states(sys.n_states, sys.bits)
    q0 = X0.allowed_states(sys.n_states, sys.bits)
    qs = Xs.allowed_states(sys.n_states, sys.bits)
    pu = [(p, u) for p in sys.param_corners() for u in sys.input_corners()]
    ev = lambda pts, q, times: cert.poly(q)(_augment(pts, times, cert))
    conds = [
        scan("1: A <= gamma on X0", x0, q0, lambda pts, q, p, u, tm: cert.gamma - ev(pts, q, tm), t0),
        scan("2: A >= 1 on Xs", xs, qs, lambda pts, q, p, u, tm: ev(pts, q, tm) - 1.0, ts),
        scan("3: A >= 0 on X", xx, all_q, lambda pts, q, p, u, tm: ev(pts, q, tm), tx),
        scan("4: BA <= 0 on X", xx, all_q,
             lambda pts, q, p, u, tm: -generator_apply(cert, sys, pts, q, u, p, tm), tx, pu),
    ]
    return CheckReport(conds, cert.gamma, plan, horizon)


# --------------------------------------------------------------------------
# Monte Carlo reachability

@dataclass(frozen=True)
class ReachEstimate:
    kind: str  # "mc_estimate" | "certified_upper_bound"
    value: float
    half_width: float | None
    runs: int | None
    horizon_kind: str  # "infinite-surrogate" | "finite"
    horizon: float
    z: float | None = None
    capped: int = 0
    note: str = ""

    def row(self) -> dict:
        return {"kind": self.kind, "value": repr(self.value),
                "half_width": "" if self.half_width is None else repr(self.half_width),
                "runs": "" if self.runs is None else self.runs,
                "horizon_kind": self.horizon_kind, "horizon": repr(self.horizon),
                "z": "" if self.z is None else repr(self.z), "capped": self.capped, "note": self.note}

    def write_csv(self, path) -> None:
        row = self.row()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            w.writeheader()
            w.writerow(row)


def binomial_estimate(hits: int, runs: int, horizon, z=1.96, capped=0) -> ReachEstimate:
    p = hits / runs
    kind = "infinite-surrogate" if horizon is None else "finite"
    h = shds.T_MAX if horizon is None else float(horizon)
    return ReachEstimate("mc_estimate", p, z * math.sqrt(p * (1.0 - p) / runs), runs, kind, h, z, capped)


def _draw_starts(start_sampler, runs, seed):
    if start_sampler is None:
        raise ValueError("empty CSS sampler")
    starts = []
    for r in range(runs):
        s = start_sampler(stream(seed, 1, r)) if callable(start_sampler) else start_sampler
        if s is None:
            raise ValueError("empty CSS sampler")
        starts.append(s)
    return starts


def _sim_seed(seed) -> int:
    return int(stream(seed, 0).integers(2**62))


def mc_reach(model, start_sampler, target: StateRegion, horizon: float | None = None,
             dt: float | None = None, runs: int = 1000, seed: int = 0, z: float = 1.96,
             state_space: StateRegion | None = None, p=None, u=None,
             return_hits: bool = False, rate_scale=None):
    """Fraction of independent paths entering ``target`` before the horizon.

    ``start_sampler(rng)`` draws one CSS point: ``(x, q)`` with ``x`` of shape
    (K, d) and ``q`` a DiscreteState for an SHDSModel, or a flat ``x`` and an
    integer ``q`` for a HybridSystem.  ``horizon=None`` simulates to
    absorption or the cap ``T_MAX``.  Paths of generic systems are stopped
    on leaving the state space.  ``rate_scale`` (runs,) multiplies the
    interaction rate of each SHDSModel path.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    if horizon is not None and horizon <= 0:
        raise ValueError("horizon must be positive")
    starts = _draw_starts(start_sampler, runs, seed)
    T = shds.T_MAX if horizon is None else float(horizon)
    if isinstance(model, shds.SHDSModel):
        dt = shds.DEFAULT_DT if dt is None else dt
        x0 = np.stack([np.asarray(s[0], dtype=np.float64).reshape(model.K, model.d) for s in starts])
        a0 = np.stack([np.asarray(s[1].active if isinstance(s[1], shds.DiscreteState) else s[1], dtype=bool)
                       for s in starts])
        nflat = model.K * model.d

        def hit_fn(x, active):
            return target.contains(x.reshape(len(x), nflat), _bits_to_q(active), active)

        res = shds.run_batch(model, x0, a0, T, dt, _sim_seed(seed), range(runs), hit_fn=hit_fn,
                             rate_scale=rate_scale)
        hits = res.hit
        capped = int(np.sum(~res.hit & ~res.absorbed))
    else:
        if rate_scale is not None:
            raise ValueError("rate_scale applies only to SHDS models")
        dt = GENERIC_DT if dt is None else dt
        hits, capped = _mc_generic(model, starts, target, T, dt, _sim_seed(seed), state_space, p, u)
    est = binomial_estimate(int(hits.sum()), runs, horizon, z, capped)
    return (est, hits) if return_hits else est


def _bits_to_q(active) -> np.ndarray:
    a = np.asarray(active, dtype=np.int64)
    return a @ (1 << np.arange(a.shape[-1]))


def _mc_generic(sys: HybridSystem, starts, target, T, dt, seed, X, p, u):
    X = sys.state_space if X is None else X
    p = sys.params if p is None else p
    runs = len(starts)
    x = np.stack([np.atleast_1d(np.asarray(s[0], dtype=np.float64)) for s in starts])
    q = np.array([int(s[1]) for s in starts])
    if sys.transitions is not None:
        hits = np.array([_path_with_jumps(sys, x[r], q[r], target, T, dt, stream(seed, r), X, p, u)
                         for r in range(runs)])
        return hits, 0
    hits = target.contains(x, q)
    alive = np.flatnonzero(~hits & X.contains(x, q))
    xa, qa = x[alive], q[alive]
    gens = [stream(seed, int(r)) for r in alive]
    n_steps = int(math.ceil(T / dt - 1e-9))
    sq = math.sqrt(dt)
    k = 0
    while k < n_steps and len(alive):
        chunk = min(shds.NOISE_CHUNK, n_steps - k)
        xi = np.stack([g.standard_normal((chunk, sys.noise_dim)) for g in gens], axis=1)
        stop = np.zeros(len(alive), dtype=bool)
        for s in range(chunk):
            live = ~stop
            f = _batched(sys.drift, xa, qa, p)
            if sys.input_gain is not None and u is not None:
                f = f + np.stack([sys.input_gain(xa[i], qa[i], p) @ u for i in range(len(xa))])
            g = _batched(sys.diffusion, xa, qa, p)
            nx = xa + f * dt + np.einsum("rij,rj->ri", g, xi[s]) * sq
            xa = np.where(live[:, None], nx, xa)
            h = live & target.contains(xa, qa)
            hits[alive[h]] = True
            stop |= h | (live & ~X.contains(xa, qa))
            if stop.all():
                break
        k += chunk
        keep = ~stop
        alive, xa, qa = alive[keep], xa[keep], qa[keep]
        gens = [g for g, kk in zip(gens, keep) if kk]
    capped = len(alive)
    return hits, capped


def _batched(fn, xa, qa, p):
    out = None
    for q in np.unique(qa):
        m = qa == q
        v = np.asarray(fn(xa[m], int(q), p), dtype=np.float64)
        if out is None:
            out = np.zeros((len(xa),) + v.shape[1:])
        out[m] = v
    return out


def _path_with_jumps(sys, x, q, target, T, dt, rng, X, p, u) -> bool:
    n_steps = int(math.ceil(T / dt - 1e-9))
    sq = math.sqrt(dt)
    for _ in range(n_steps + 1):
        if target.contains(x, q):
            return True
        if not X.contains(x, q):
            return False
        f = np.asarray(sys.drift(x, q, p), dtype=np.float64)
        if sys.input_gain is not None and u is not None:
            f = f + sys.input_gain(x, q, p) @ u
        g = np.asarray(sys.diffusion(x, q, p), dtype=np.float64)
        xi = rng.standard_normal(sys.noise_dim)
        jumps = sys.transitions(x, q, p)
        uj = rng.random(len(jumps)) if jumps else ()
        x = x + f * dt + g @ xi * sq
        for (q2, rate, after), v in zip(jumps, uj):
            if v < float(rate) * dt:
                q = q2
                if after is not None:
                    x = np.asarray(after, dtype=np.float64)
                break
    return False


# --------------------------------------------------------------------------
# ES predictability and warning regions

@dataclass(frozen=True)
class PredictabilityVerdict:
    gamma1: float
    gamma2: float
    delta: float
    predictable: bool
    method: str
    estimates: tuple = ()


def regions_overlap(a: StateRegion, b: StateRegion, n: int = 2000, seed: int = 0) -> bool:
    """Sampled intersection test (discrete filters and box overlap first)."""
    if a.discrete is not None and b.discrete is not None and not set(a.discrete) & set(b.discrete):
        return False
    lo = np.maximum(a.lower, b.lower)
    hi = np.minimum(a.upper, b.upper)
    if np.any(lo > hi + max(a.tol, b.tol)):
        return False
    for r1, r2, s in ((a, b, seed), (b, a, seed + 1)):
        pts = r1.sample(n, s)
        if len(pts) and np.any(r2.contains_continuous(pts)):
            return True
    return False


def es_predictability(model, start_sampler, Xs1: StateRegion, Xs2: StateRegion, delta: float,
                      method: str = "mc", certificates=None, X0: StateRegion | None = None,
                      plan: SamplePlan = SamplePlan(), **mc_kw) -> PredictabilityVerdict:
    """ES-predictable iff |γ1 − γ2| > δ.

    ``method="mc"`` estimates both reach probabilities by simulation;
    ``method="certificate"`` takes γ1, γ2 from a pair of certificates that
    must both pass ``check_certificate`` over ``X0``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if regions_overlap(Xs1, Xs2):
        raise ValueError("SSI sets overlap")
    if method == "mc":
        e1 = mc_reach(model, start_sampler, Xs1, **mc_kw)
        e2 = mc_reach(model, start_sampler, Xs2, **mc_kw)
        g1, g2, ests = e1.value, e2.value, (e1, e2)
    elif method == "certificate":
        if certificates is None or X0 is None:
            raise ValueError("certificate method needs two certificates and X0")
        reports = [check_certificate(c, model, X0, xs, plan=plan) for c, xs in zip(certificates, (Xs1, Xs2))]
        for r in reports:
            if not r.passed:
                raise ValueError("certificate check failed:\n" + r.summary())
        g1, g2, ests = certificates[0].gamma, certificates[1].gamma, tuple(reports)
    else:
        raise ValueError(f"unknown method {method!r}")
    return PredictabilityVerdict(g1, g2, delta, abs(g1 - g2) > delta, method, ests)


@dataclass
class WarningRegion:
    cells: list
    probabilities: np.ndarray
    alpha: float

    @property
    def flagged(self) -> np.ndarray:
        return self.probabilities >= self.alpha

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "x", "q", "p_hat", "flagged"])
            for i, ((x, q), pr, f) in enumerate(zip(self.cells, self.probabilities, self.flagged)):
                xs = ";".join(repr(float(v)) for v in np.ravel(x))
                qs = q.bits if isinstance(q, shds.DiscreteState) else str(q)
                w.writerow([i, xs, qs, repr(float(pr)), int(f)])


def grid_cells(lower: float, upper: float, n: int, q=0) -> list:
    """Centres of ``n`` equal cells on a 1-D interval."""
    w = (upper - lower) / n
    return [(np.array([lower + (i + 0.5) * w]), q) for i in range(n)]


def warning_region(model, target: StateRegion, alpha: float, cells, runs_per_cell: int = 200,
                   seed: int = 0, **mc_kw) -> WarningRegion:
    """Flag every cell whose MC reach probability to ``target`` is ≥ α.

    Cells already inside the target are flagged without simulation.  Each
    cell uses its own seed path, so flags are monotone in α.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not len(cells):
        raise ValueError("empty grid")
    probs = np.zeros(len(cells))
    for i, (x, q) in enumerate(cells):
        if _inside(model, target, x, q):
            probs[i] = 1.0
            continue
        probs[i] = mc_reach(model, (x, q), target, runs=runs_per_cell,
                            seed=int(stream(seed, 2, i).integers(2**62)), **mc_kw).value
    return WarningRegion(list(cells), probs, alpha)


def _inside(model, target, x, q) -> bool:
    x = np.ravel(np.asarray(x, dtype=np.float64))
    if isinstance(model, shds.SHDSModel):
        a = np.asarray(q.active if isinstance(q, shds.DiscreteState) else q, dtype=bool)
        return bool(target.contains(x, _bits_to_q(a), a))
    return bool(target.contains(x, q))
