"""NSGA-II over the unit box, maximization convention.

Candidates are touched only through the supplied objective function, which
must map a batch of points (m, d) to objective triples (m, n_obj) and be
deterministic for the duration of one ``evolve`` call.  Non-finite
objective values are replaced by WORST so the offending candidate sinks to
the last front while the run continues.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WORST = -1e30
DEDUP_TOL = 1e-9
DEGENERATE_RANGE = 1e-12


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 100
    generations: int = 50
    crossover_prob: float = 0.9
    crossover_eta: float = 15.0
    mutation_prob: float | None = None  # defaults to 1/d
    mutation_eta: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ValueError("population size must be even and >= 4")


@dataclass
class ParetoArchive:
    """Final nondominated set: points, their objectives, and per-generation
    maxima of each objective (for elitism diagnostics)."""

    points: np.ndarray
    objectives: np.ndarray
    generation_max: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __len__(self):
        return self.points.shape[0]


def _domination_matrix(objs: np.ndarray) -> np.ndarray:
    """dom[i, j] True iff i dominates j (>= everywhere, > somewhere)."""
    ge = (objs[:, None, :] >= objs[None, :, :]).all(-1)
    gt = (objs[:, None, :] > objs[None, :, :]).any(-1)
    return ge & gt


def nondominated_sort(objs) -> list[list[int]]:
    """Partition indices into fronts; front 0 is the maximal nondominated set."""
    objs = np.atleast_2d(np.asarray(objs, dtype=np.float64))
    n = objs.shape[0]
    dom = _domination_matrix(objs)
    n_dominators = dom.sum(axis=0)
    fronts = []
    remaining = np.ones(n, dtype=bool)
    while remaining.any():
        current = np.flatnonzero(remaining & (n_dominators == 0))
        if current.size == 0:  # cannot happen with a strict partial order
            current = np.flatnonzero(remaining)
        fronts.append(current.tolist())
        remaining[current] = False
        n_dominators = n_dominators - dom[current].sum(axis=0)
    return fronts


def crowding_distance(objs) -> np.ndarray:
    """Crowding of one front: boundary points get +inf per objective,
    interior points accumulate normalized neighbor gaps.  Objectives whose
    range is below DEGENERATE_RANGE contribute nothing."""
    objs = np.atleast_2d(np.asarray(objs, dtype=np.float64))
    n, m = objs.shape
    dist = np.zeros(n)
    for k in range(m):
        order = np.argsort(objs[:, k], kind="stable")
        lo, hi = objs[order[0], k], objs[order[-1], k]
        span = hi - lo
        if span < DEGENERATE_RANGE:
            continue
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        gaps = (objs[order[2:], k] - objs[order[:-2], k]) / span
        dist[order[1:-1]] += gaps
    return dist


def _rank_and_crowd(objs):
    fronts = nondominated_sort(objs)
    rank = np.empty(objs.shape[0], dtype=np.int64)
    crowd = np.empty(objs.shape[0])
    for r, front in enumerate(fronts):
        rank[front] = r
        crowd[front] = crowding_distance(objs[front])
    return fronts, rank, crowd


def _tournament(rank, crowd, rng, count):
    a = rng.integers(0, rank.size, size=count)
    b = rng.integers(0, rank.size, size=count)
    better_b = (rank[b] < rank[a]) | ((rank[b] == rank[a]) & (crowd[b] > crowd[a]))
    return np.where(better_b, b, a)


def _sbx_pair(p1, p2, eta, rng):
    u = rng.uniform(size=p1.size)
    beta = np.where(u <= 0.5,
                    (2.0 * u) ** (1.0 / (eta + 1.0)),
                    (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)))
    swap = rng.uniform(size=p1.size) < 0.5
    c1 = 0.5 * ((1 + beta) * p1 + (1 - beta) * p2)
    c2 = 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)
    c1s = np.where(swap, c2, c1)
    c2s = np.where(swap, c1, c2)
    return np.clip(c1s, 0.0, 1.0), np.clip(c2s, 0.0, 1.0)


def _polynomial_mutation(x, prob, eta, rng):
    x = x.copy()
    mask = rng.uniform(size=x.shape) < prob
    u = rng.uniform(size=x.shape)
    lo = (2 * u) ** (1.0 / (eta + 1.0)) - 1.0
    hi = 1.0 - (2 * (1 - u)) ** (1.0 / (eta + 1.0))
    delta = np.where(u < 0.5, lo, hi)
    x[mask] = np.clip(x[mask] + delta[mask], 0.0, 1.0)
    return x


def _sanitize(objs):
    objs = np.asarray(objs, dtype=np.float64)
    bad = ~np.isfinite(objs)
    if bad.any():
        objs = np.where(bad, WORST, objs)
    return objs


def evolve(objective_fn, dim: int, config: EvolutionConfig | None = None,
           seed_points: np.ndarray | None = None) -> ParetoArchive:
    """Run NSGA-II on the unit box; returns the deduplicated final front.

    ``seed_points`` are injected into the initial population (clipped to the
    box, at most half the population); selection discards them immediately
    if the objectives rank them poorly.
    """
    cfg = config or EvolutionConfig()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.population
    pm = cfg.mutation_prob if cfg.mutation_prob is not None else 1.0 / dim

    pop = rng.uniform(size=(n, dim))
    if seed_points is not None and len(seed_points):
        take = min(len(seed_points), n // 2)
        pop[:take] = np.clip(np.asarray(seed_points, dtype=np.float64)[:take],
                             0.0, 1.0)
    objs = _sanitize(objective_fn(pop))
    gen_max = [objs.max(axis=0)]

    for _ in range(cfg.generations):
        _, rank, crowd = _rank_and_crowd(objs)
        parents = _tournament(rank, crowd, rng, n)
        offspring = np.empty_like(pop)
        for i in range(0, n, 2):
            p1, p2 = pop[parents[i]], pop[parents[i + 1]]
            if rng.uniform() < cfg.crossover_prob:
                c1, c2 = _sbx_pair(p1, p2, cfg.crossover_eta, rng)
            else:
                c1, c2 = p1.copy(), p2.copy()
            offspring[i] = _polynomial_mutation(c1, pm, cfg.mutation_eta, rng)
            offspring[i + 1] = _polynomial_mutation(c2, pm, cfg.mutation_eta, rng)
        off_objs = _sanitize(objective_fn(offspring))

        all_pop = np.vstack([pop, offspring])
        all_objs = np.vstack([objs, off_objs])
        fronts, _, _ = _rank_and_crowd(all_objs)
        keep: list[int] = []
        for front in fronts:
            if len(keep) + len(front) <= n:
                keep.extend(front)
            else:
                crowd_f = crowding_distance(all_objs[front])
                order = np.argsort(-crowd_f, kind="stable")
                keep.extend(np.asarray(front)[order[: n - len(keep)]].tolist())
                break
        pop, objs = all_pop[keep], all_objs[keep]
        gen_max.append(objs.max(axis=0))

    front0 = nondominated_sort(objs)[0]
    points, triples = _dedup(pop[front0], objs[front0])
    return ParetoArchive(points=points, objectives=triples,
                         generation_max=np.asarray(gen_max))


def _dedup(points, objs):
    keep = []
    for i in range(points.shape[0]):
        if all(np.max(np.abs(points[i] - points[j])) > DEDUP_TOL for j in keep):
            keep.append(i)
    return points[keep], objs[keep]
