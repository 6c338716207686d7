"""Agent-based ground truth: Potential / Member / Ex labels on a network.

Updates are synchronous.  A Potential vertex with ``m`` Member neighbours joins
w.p. ``1-(1-β')^m``; a Member with ``e`` Ex neighbours leaves w.p.
``1-(1-δ1')^e (1-δ2')``; Ex is absorbing.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .netstruct import Graph, generate_planted_partition
from .rng import stream

POTENTIAL, MEMBER, EX = 0, 1, 2


@dataclass(frozen=True)
class ABMParams:
    beta_p: float
    delta1_p: float
    delta2_p: float

    def __post_init__(self):
        for name in ("beta_p", "delta1_p", "delta2_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


REFERENCE_PARAMS = ABMParams(0.5, 0.01, 0.1)


@dataclass(frozen=True)
class ABMState:
    labels: np.ndarray
    step_count: int = 0

    @classmethod
    def seeded(cls, n: int, members) -> "ABMState":
        labels = np.zeros(n, dtype=np.int8)
        labels[np.asarray(list(members), dtype=np.int64)] = MEMBER
        return cls(labels, 0)

    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.labels, minlength=3)
        return int(c[0]), int(c[1]), int(c[2])


@dataclass(frozen=True)
class CascadeResult:
    ratio: float
    probability_estimate: float
    standard_error: float
    runs: int

    @classmethod
    def from_counts(cls, ratio, hits, runs):
        p = hits / runs
        return cls(float(ratio), p, math.sqrt(p * (1.0 - p) / runs), int(runs))


def abm_step(state: ABMState, graph: Graph, params: ABMParams, rng: np.random.Generator) -> ABMState:
    labels = state.labels
    if len(labels) != graph.vertex_count:
        raise ValueError("state size does not match graph")
    member = (labels == MEMBER).astype(np.float64)
    ex = (labels == EX).astype(np.float64)
    adj = graph.adjacency
    m_nbr = adj @ member
    e_nbr = adj @ ex
    u = rng.random(len(labels))
    join = (labels == POTENTIAL) & (u < 1.0 - (1.0 - params.beta_p) ** m_nbr)
    leave = (labels == MEMBER) & (
        u < 1.0 - (1.0 - params.delta1_p) ** e_nbr * (1.0 - params.delta2_p))
    new = labels.copy()
    new[join] = MEMBER
    new[leave] = EX
    return ABMState(new, state.step_count + 1)


def simulate_abm(graph: Graph, params: ABMParams, seed_vertices, steps: int, seed) -> np.ndarray:
    """(P, M, E) counts for steps 0..steps; stops early once no Members remain
    and pads with the absorbed counts."""
    rng = stream(seed, 0)
    state = ABMState.seeded(graph.vertex_count, seed_vertices)
    out = np.zeros((steps + 1, 3), dtype=np.int64)
    out[0] = state.counts()
    for k in range(1, steps + 1):
        if out[k - 1, 1] == 0:
            out[k:] = out[k - 1]
            break
        state = abm_step(state, graph, params, rng)
        out[k] = state.counts()
    return out


def run_cascade_trial(graph: Graph, params: ABMParams, seed_vertices, target_set,
                      max_steps: int | None = None, seed=0, target_fraction: float | None = None) -> bool:
    """True iff the target set is reached before the Members die out.

    Reaching means one target vertex becoming Member, or, with
    ``target_fraction``, at least that fraction of the target set having been
    Member at some step.
    """
    seeds = np.unique(np.asarray(list(seed_vertices), dtype=np.int64))
    targets = np.unique(np.asarray(list(target_set), dtype=np.int64))
    if len(seeds) == 0:
        raise ValueError("seed set is empty")
    if np.intersect1d(seeds, targets).size:
        raise ValueError("seed and target sets must be disjoint")
    n = graph.vertex_count
    max_steps = 10 * n if max_steps is None else max_steps
    need = 1 if target_fraction is None else max(1, math.ceil(target_fraction * len(targets)))
    rng = stream(seed, 0)
    state = ABMState.seeded(n, seeds)
    ever = np.zeros(n, dtype=bool)
    while state.step_count < max_steps:
        state = abm_step(state, graph, params, rng)
        member = state.labels == MEMBER
        ever |= member
        if np.count_nonzero(ever[targets]) >= need:
            return True
        if not member.any():
            return False
    return False


def cascade_probability(p_ratio_grid, realizations_per_ratio: int, trials_per_realization: int,
                        params: ABMParams, n: int, p_i: float, seeds_per_trial: int = 5,
                        master_seed: int = 0, max_steps: int | None = None,
                        target_fraction: float | None = None) -> list[CascadeResult]:
    """Global-cascade probability per p_i/p_e ratio; seeds in R, target L.

    A ratio of ``inf`` means ``p_e = 0``.
    """
    if len(p_ratio_grid) == 0:
        raise ValueError("ratio grid is empty")
    if realizations_per_ratio < 1 or trials_per_realization < 1:
        raise ValueError("counts must be at least 1")
    half = n // 2
    left = np.arange(half)
    out = []
    for ri, ratio in enumerate(p_ratio_grid):
        p_e = 0.0 if math.isinf(ratio) else p_i / ratio
        hits = 0
        for r in range(realizations_per_ratio):
            gseed = int(stream(master_seed, 0, ri, r).integers(2**62))
            graph = generate_planted_partition(n, p_i, p_e, gseed)
            for t in range(trials_per_realization):
                pick = stream(master_seed, 1, ri, r, t)
                seeds = half + pick.choice(half, size=seeds_per_trial, replace=False)
                hits += run_cascade_trial(graph, params, seeds, left, max_steps,
                                          seed=int(pick.integers(2**62)),
                                          target_fraction=target_fraction)
        out.append(CascadeResult.from_counts(ratio, hits, realizations_per_ratio * trials_per_realization))
    return out


def write_cascade_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "p_hat", "stderr", "runs"])
        for r in results:
            w.writerow([repr(r.ratio), repr(r.probability_estimate), repr(r.standard_error), r.runs])
