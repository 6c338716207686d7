"""Experiment drivers: ABM vs S-HDS cascade curves, threshold and
seed-dispersion sweeps, and a synthetic early-warning corpus."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

from . import abm, learn, netstruct as ns, reach, shds, signals
from .rng import stream

Z95 = 1.96


# --------------------------------------------------------------------------
# ABM vs S-HDS two-community cascade curves

@dataclass(frozen=True)
class Fig6Config:
    n: int = 500
    p_i: float = 0.1
    ratios: tuple[float, ...] = tuple(float(r) for r in np.round(np.geomspace(500.0, 40000.0, 10), 6))
    realizations: int = 20
    trials: int = 20
    seeds_per_trial: int = 5
    beta_p: float = abm.REFERENCE_PARAMS.beta_p
    delta1_p: float = abm.REFERENCE_PARAMS.delta1_p
    delta2_p: float = abm.REFERENCE_PARAMS.delta2_p
    shds_runs: int | None = None  # default: realizations × trials
    dt: float = 0.01
    calibrate: bool = True
    offset: float = 2.0  # λ / (β'·expected cross edges) when not calibrating
    calibration_index: int | None = None  # default: len(ratios) // 2
    seed: int = 0

    @property
    def abm_params(self) -> abm.ABMParams:
        return abm.ABMParams(self.beta_p, self.delta1_p, self.delta2_p)

    @property
    def runs(self) -> int:
        return self.shds_runs or self.realizations * self.trials

    @property
    def midpoint(self) -> int:
        return len(self.ratios) // 2 if self.calibration_index is None else self.calibration_index


def fig6_model(cfg: Fig6Config, ratio: float, offset: float) -> shds.SHDSModel:
    """Two-community Σ_H surrogate of the planted-partition ABM.

    Per-step ABM probabilities become rates scaled by the mean within-block
    degree; λ is ``offset`` times β' times the expected cross-edge count.
    ``_fig6_rate_scale`` swaps in each realization's actual count.
    """
    half = cfg.n // 2
    k_in = cfg.p_i * (half - 1)
    p = shds.SigmaHParams(cfg.beta_p * k_in, cfg.delta1_p * k_in, cfg.delta2_p)
    p_e = 0.0 if math.isinf(ratio) else cfg.p_i / ratio
    lam = offset * cfg.beta_p * p_e * half * half
    cg = ns.CommunityGraph(2, (half, cfg.n - half), ((0, 1),))
    return shds.SHDSModel.uniform(cg, shds.SIGMA_H, p, interaction_rate=lam)


@lru_cache(maxsize=256)
def _fig6_cross_edges(cfg: Fig6Config, index: int) -> np.ndarray:
    """Cross-edge count of every ABM graph realization at one grid point."""
    ratio = cfg.ratios[index]
    p_e = 0.0 if math.isinf(ratio) else cfg.p_i / ratio
    half = cfg.n // 2
    out = np.zeros(cfg.realizations)
    for r in range(cfg.realizations):
        # same graph seeds as abm.cascade_probability
        gseed = int(stream(cfg.seed, 0, index, r).integers(2**62))
        g = ns.generate_planted_partition(cfg.n, cfg.p_i, p_e, gseed)
        e = np.asarray(g.edges, dtype=np.int64).reshape(-1, 2)
        out[r] = np.sum((e[:, 0] < half) != (e[:, 1] < half))
    return out


def _fig6_rate_scale(cfg: Fig6Config, index: int) -> np.ndarray:
    """Per-run λ multiplier: actual over expected cross edges of the
    realization that run belongs to (runs go ``trials`` per realization)."""
    ratio = cfg.ratios[index]
    half = cfg.n // 2
    expected = 0.0 if math.isinf(ratio) else cfg.p_i / ratio * half * (cfg.n - half)
    if expected == 0.0:
        return np.ones(cfg.runs)
    which = (np.arange(cfg.runs) // cfg.trials) % cfg.realizations
    return _fig6_cross_edges(cfg, index)[which] / expected


def _fig6_hits(cfg: Fig6Config, ratio: float, offset: float, index: int) -> np.ndarray:
    model = fig6_model(cfg, ratio, offset)
    x0, q0 = model.initial({1: cfg.seeds_per_trial / model.community_graph.sizes[1]})
    target = reach.shds_state_space(model, active_all=(0,))
    # the run seed depends only on the grid index: common random numbers across offsets
    _, hits = reach.mc_reach(model, (x0, q0), target, horizon=None, dt=cfg.dt, runs=cfg.runs,
                             seed=int(stream(cfg.seed, 2, index).integers(2**62)), return_hits=True,
                             rate_scale=_fig6_rate_scale(cfg, index))
    return hits


def shds_cascade_curve(cfg: Fig6Config, offset: float) -> list[abm.CascadeResult]:
    return [abm.CascadeResult.from_counts(r, int(_fig6_hits(cfg, r, offset, i).sum()), cfg.runs)
            for i, r in enumerate(cfg.ratios)]


def calibrate_offset(cfg: Fig6Config, target_p: float, lo: float = 0.0, hi: float = 64.0,
                     iters: int = 30) -> float:
    """Smallest offset whose S-HDS estimate at the midpoint reaches ``target_p``.

    With common random numbers every run's hit is monotone in λ, so the
    estimate is a nondecreasing step function of the offset.
    """
    i = cfg.midpoint
    r = cfg.ratios[i]
    f = lambda c: _fig6_hits(cfg, r, c, i).mean()
    while f(hi) < target_p and hi < 1e6:
        lo, hi = hi, hi * 4
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) >= target_p:
            hi = mid
        else:
            lo = mid
    # pick whichever bracket end lands closer to the target
    return hi if abs(f(hi) - target_p) <= abs(f(lo) - target_p) else lo


def ci_overlap(a: abm.CascadeResult, b: abm.CascadeResult, z: float = Z95) -> bool:
    return (a.probability_estimate - z * a.standard_error <= b.probability_estimate + z * b.standard_error
            and b.probability_estimate - z * b.standard_error <= a.probability_estimate + z * a.standard_error)


def monotone_nonincreasing(curve, slack_se: float = 2.0) -> bool:
    for a, b in zip(curve, curve[1:]):
        tol = slack_se * math.hypot(a.standard_error, b.standard_error)
        if b.probability_estimate > a.probability_estimate + tol:
            return False
    return True


@dataclass
class Fig6Result:
    config: Fig6Config
    abm_curve: list
    shds_curve: list
    offset: float
    overlaps: list[bool]  # per scored ratio (midpoint excluded)

    @property
    def overlap_count(self) -> int:
        return sum(self.overlaps)

    @property
    def scored(self) -> int:
        return len(self.overlaps)

    def summary(self) -> dict:
        return {"offset": self.offset, "overlap_count": self.overlap_count, "scored_ratios": self.scored,
                "abm_monotone": monotone_nonincreasing(self.abm_curve),
                "shds_monotone": monotone_nonincreasing(self.shds_curve),
                "calibration_ratio": self.config.ratios[self.config.midpoint]}


def run_fig6(cfg: Fig6Config = Fig6Config()) -> Fig6Result:
    curve = abm.cascade_probability(list(cfg.ratios), cfg.realizations, cfg.trials, cfg.abm_params,
                                    cfg.n, cfg.p_i, cfg.seeds_per_trial, cfg.seed)
    mid = cfg.midpoint
    offset = calibrate_offset(cfg, curve[mid].probability_estimate) if cfg.calibrate else cfg.offset
    sh = shds_cascade_curve(cfg, offset)
    overlaps = [ci_overlap(a, b) for i, (a, b) in enumerate(zip(curve, sh)) if i != mid]
    return Fig6Result(cfg, curve, sh, offset, overlaps)


# --------------------------------------------------------------------------
# K-community threshold and seed-dispersion sweeps

@dataclass(frozen=True)
class Fig7Config:
    K: int = 10
    edge_prob: float = 0.3
    size_exponent: float = 2.0
    min_size: int = 50
    graph_seed: int = 0
    delta1: float = 0.5
    delta2: float = 1.0
    b_params: tuple[float, float, float, float] = (2.0, 1.6, 1.0, 1.0)
    b_split: float = 0.5
    seed_fraction: float = 0.01
    theta: float = 0.5
    R_values: tuple[float, ...] = (2.0, 0.5)
    lambdas: tuple[float, ...] = (0.0,) + tuple(float(v) for v in np.round(np.geomspace(0.1, 1000.0, 13), 6))
    lambda0_level: float = 0.1
    dispersion_R: float = 2.0
    dispersion_lambda: float = 1.0
    runs: int = 1000
    dt: float = 0.02
    seed: int = 0


def connected(cg: ns.CommunityGraph) -> bool:
    a = cg.meta_adjacency > 0
    seen, todo = {0}, [0]
    while todo:
        i = todo.pop()
        for j in np.flatnonzero(a[i]):
            if int(j) not in seen:
                seen.add(int(j))
                todo.append(int(j))
    return len(seen) == cg.community_count


def fig7_graph(cfg: Fig7Config) -> ns.CommunityGraph:
    """First connected meta-graph at or after ``graph_seed``."""
    for s in range(cfg.graph_seed, cfg.graph_seed + 1000):
        cg = ns.generate_community_graph(cfg.K, cfg.edge_prob, cfg.size_exponent, cfg.min_size, s)
        if connected(cg):
            return cg
    raise RuntimeError("no connected community graph found")


def fig7_model(cfg: Fig7Config, cg, kind: str, R: float, lam: float) -> shds.SHDSModel:
    if kind == shds.SIGMA_H:
        p = shds.SigmaHParams(R * cfg.delta2, cfg.delta1, cfg.delta2)
        return shds.SHDSModel.uniform(cg, kind, p, interaction_rate=lam)
    b1, b2, d1, d2 = cfg.b_params
    scale = R / 2.0  # b_params are the R = 2 point
    p = shds.SigmaBParams(b1 * scale, b2 * scale, d1, d2)
    return shds.SHDSModel.uniform(cg, kind, p, interaction_rate=lam, injection_split=cfg.b_split)


def dispersed_seeds(model: shds.SHDSModel, k: int, fraction: float):
    """Sampler spreading ``fraction`` of the population evenly over ``k``
    communities drawn uniformly per run."""
    if not 1 <= k <= model.K:
        raise ValueError("k must lie in 1..K")
    sizes = model.sizes
    total = fraction * sizes.sum()

    def sample(rng):
        comms = rng.choice(model.K, size=k, replace=False)
        return model.initial({int(j): min(1.0, total / k / sizes[j]) for j in comms})
    return sample


def global_probability(cfg: Fig7Config, model, k: int, index: tuple) -> reach.ReachEstimate:
    target = reach.adopted_fraction_region(model, cfg.theta)
    return reach.mc_reach(model, dispersed_seeds(model, k, cfg.seed_fraction), target, horizon=None,
                          dt=cfg.dt, runs=cfg.runs, seed=int(stream(cfg.seed, *index).integers(2**62)))


@dataclass
class LambdaSweep:
    R: float
    lambdas: list[float]
    estimates: list
    lambda0: float | None
    at_10x: object | None  # estimate at 10·λ0

    def rows(self):
        for lam, e in zip(self.lambdas, self.estimates):
            yield self.R, lam, e


def lambda_sweep(cfg: Fig7Config, kind: str = shds.SIGMA_H) -> list[LambdaSweep]:
    cg = fig7_graph(cfg)
    out = []
    for ri, R in enumerate(cfg.R_values):
        ests = [global_probability(cfg, fig7_model(cfg, cg, kind, R, lam), 1, (3, ri, li))
                for li, lam in enumerate(cfg.lambdas)]
        lam0 = next((lam for lam, e in zip(cfg.lambdas, ests) if e.value >= cfg.lambda0_level), None)
        at10 = None
        if lam0 is not None:
            at10 = global_probability(cfg, fig7_model(cfg, cg, kind, R, 10 * lam0), 1, (4, ri))
        out.append(LambdaSweep(R, list(cfg.lambdas), ests, lam0, at10))
    return out


@dataclass
class DispersionSweep:
    kind: str
    counts: list[int]
    estimates: list

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    def spearman(self) -> float:
        return float(stats.spearmanr(self.counts, self.probabilities)[0])

    def linear_r2(self) -> float:
        return float(stats.linregress(self.counts, self.probabilities).rvalue ** 2)


def dispersion_sweep(cfg: Fig7Config, kind: str) -> DispersionSweep:
    cg = fig7_graph(cfg)
    model = fig7_model(cfg, cg, kind, cfg.dispersion_R, cfg.dispersion_lambda)
    tag = 5 if kind == shds.SIGMA_H else 6
    counts = list(range(1, cfg.K + 1))
    return DispersionSweep(kind, counts, [global_probability(cfg, model, k, (tag, k)) for k in counts])


# --------------------------------------------------------------------------
# synthetic early-warning corpus

@dataclass(frozen=True)
class EWConfig:
    blocks: int = 10
    block_size: int = 50
    p_in: float = 0.2
    p_out: float = 0.004
    events_per_class: int = 100
    R_grid: tuple[float, ...] = (1.5, 2.5, 4.0)
    lambda_grid: tuple[float, ...] = (0.3, 3.0, 30.0)
    delta1: float = 0.5
    delta2: float = 1.0
    seed_members: int = 5
    hours_per_unit: float = 4.0
    horizon_units: float = 20.0
    dt: float = 0.02
    record_hours: float = 0.5
    posts_per_adopter: float = 1.0
    intensity_sigma: float = 0.75
    wide_reach: float = 0.3  # adopted fraction outside the seed community
    contained_reach: float = 0.05
    taus: tuple[float, ...] = (12.0, 24.0, 48.0)
    folds: int = 10
    trees: int = 100
    max_depth: int = 6
    min_leaf: int = 2
    seed: int = 0


@dataclass
class EWCorpus:
    graph: ns.Graph
    blocks: np.ndarray  # generative block of each vertex
    events: list
    reach: np.ndarray


def ew_graph(cfg: EWConfig, seed: int) -> tuple[ns.Graph, np.ndarray]:
    g = ns.generate_block_graph([cfg.block_size] * cfg.blocks, cfg.p_in, cfg.p_out, seed)
    g = g.with_labels([f"blog{i:04d}" for i in range(g.vertex_count)])
    return g, np.repeat(np.arange(cfg.blocks), cfg.block_size)


def generate_ew_corpus(cfg: EWConfig = EWConfig(), seed: int | None = None) -> EWCorpus:
    """Balanced corpus of S-HDS events with posts drawn from new adopters.

    Events cycle through a grid of (R, λ); each is labelled by its final
    adopted fraction outside the seed community ("wide" above
    ``wide_reach``, "contained" below ``contained_reach``, others dropped).
    """
    seed = cfg.seed if seed is None else seed
    graph, blocks = ew_graph(cfg, int(stream(seed, 0).integers(2**62)))
    members = [np.flatnonzero(blocks == b) for b in range(cfg.blocks)]
    # generative community graph: blocks joined wherever an edge crosses
    e = graph.edge_array
    pairs = sorted({(min(a, b), max(a, b)) for a, b in zip(blocks[e[:, 0]], blocks[e[:, 1]]) if a != b})
    cg = ns.CommunityGraph(cfg.blocks, (cfg.block_size,) * cfg.blocks, tuple((int(a), int(b)) for a, b in pairs))
    combos = [(R, lam) for R in cfg.R_grid for lam in cfg.lambda_grid]
    per_batch = 24
    stride = max(1, int(round(cfg.record_hours / cfg.hours_per_unit / cfg.dt)))
    want = cfg.events_per_class
    wide, contained = [], []
    batch = 0
    while len(wide) < want or len(contained) < want:
        if batch > 200:
            raise RuntimeError("corpus generation did not balance; adjust the parameter grid")
        R, lam = combos[batch % len(combos)]
        p = shds.SigmaHParams(R * cfg.delta2, cfg.delta1, cfg.delta2)
        model = shds.SHDSModel.uniform(cg, shds.SIGMA_H, p, interaction_rate=lam)
        brng = stream(seed, 1, batch)
        origin = brng.integers(0, cfg.blocks, size=per_batch)
        x0 = np.zeros((per_batch, cfg.blocks, 3))
        x0[..., 0] = 1.0
        a0 = np.zeros((per_batch, cfg.blocks), dtype=bool)
        eps = cfg.seed_members / cfg.block_size
        x0[np.arange(per_batch), origin] = [1.0 - eps, eps, 0.0]
        a0[np.arange(per_batch), origin] = True
        res = shds.run_batch(model, x0, a0, cfg.horizon_units, cfg.dt, int(brng.integers(2**62)),
                             range(per_batch), record_stride=stride, absorb=False)
        times = np.array([r[0] for r in res.records]) * cfg.hours_per_unit
        adopted = np.stack([1.0 - r[1][..., 0] for r in res.records])  # (T, runs, K)
        adopted = np.maximum.accumulate(adopted, axis=0)
        for i in range(per_batch):
            outside = np.delete(adopted[-1, i], origin[i]).mean()
            label = (signals.ALARMING if outside >= cfg.wide_reach
                     else signals.NOT_ALARMING if outside <= cfg.contained_reach else None)
            if label is None:
                continue
            bucket = wide if label == signals.ALARMING else contained
            if len(bucket) >= want:
                continue
            erng = stream(seed, 2, batch, i)
            ev = _posts_from_adoption(f"ev{batch:03d}_{i:02d}", label, times, adopted[:, i], origin[i],
                                      members, graph, cfg, erng)
            bucket.append((ev, outside))
        batch += 1
    chosen = wide + contained
    order = stream(seed, 3).permutation(len(chosen))
    events = [chosen[i][0] for i in order]
    return EWCorpus(graph, blocks, events, np.array([chosen[i][1] for i in order]))


def _posts_from_adoption(event_id, label, times, adopted, origin, members, graph, cfg, rng):
    sizes = np.array([len(m) for m in members], dtype=np.float64)
    intensity = cfg.posts_per_adopter * math.exp(cfg.intensity_sigma * rng.standard_normal())
    labels = graph.vertex_labels
    mentions = [(0.0, labels[int(rng.choice(members[origin]))])]  # the detection post
    for k in range(1, len(times)):
        new = np.maximum(adopted[k] - adopted[k - 1], 0.0) * sizes
        counts = rng.poisson(intensity * new)
        for j in np.flatnonzero(counts):
            ts = rng.uniform(times[k - 1], times[k], size=counts[j])
            sites = rng.choice(members[j], size=counts[j])
            mentions.extend((float(t) * signals.SECONDS_PER_HOUR, labels[int(v)]) for t, v in zip(ts, sites))
    return signals.EventTimeSeries.from_mentions(event_id, mentions, label)


@dataclass
class EWResult:
    features: list  # FeatureVector per (event, τ)
    reports: dict  # τ -> CVReport
    partition: ns.CommunityPartition
    shells: ns.KShellDecomposition
    alerts: list  # (event_id, τ, label) from models trained on all events


def ew_pipeline(graph: ns.Graph, events, taus=(12.0, 24.0, 48.0), folds: int = 10, trees: int = 100,
                max_depth: int = 6, min_leaf: int = 2, seed: int = 0, lexicons=(), documents=None,
                stratify: bool = False, partition=None, shells=None) -> EWResult:
    """Partition the blog graph, k-shells, features per τ, CV and alerts."""
    partition = ns.partition_communities(graph) if partition is None else partition
    shells = ns.k_shell_decomposition(graph) if shells is None else shells
    feats, reports, alerts = [], {}, []
    for ti, tau in enumerate(taus):
        rows = [signals.extract_features(ev, graph, partition, shells, tau, lexicons,
                                         None if documents is None else documents.get(ev.event_id))
                for ev in events]
        feats.extend(rows)
        labelled = [r for r in rows if r.label is not None]
        if len(labelled) < folds or len({r.label for r in labelled}) < 2:
            continue
        data = learn.Dataset(np.array([r.values() for r in labelled]),
                             np.array([learn.label_to_int(r.label) for r in labelled]),
                             tuple(labelled[0].names()))
        csub = int(stream(seed, ti).integers(2**62))
        reports[tau] = learn.cross_validate(data, folds, trees, max_depth, min_leaf, csub, stratify)
        ens = learn.train_ensemble(data, trees, max_depth, min_leaf, csub)
        pred = ens.predict(np.array([r.values() for r in rows]))
        alerts.extend((r.event_id, tau, learn.int_to_label(int(p))) for r, p in zip(rows, pred))
    return EWResult(feats, reports, partition, shells, alerts)
