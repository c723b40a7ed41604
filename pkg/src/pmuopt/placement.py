"""PMU placement: Jacobian-discrepancy objective, genetic search, exhaustive oracle, baselines."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from pmuopt.jacobian import FILL_MODES, OperatingPoint, dp_dtheta
from pmuopt.netmodel import Network, adjacency, build_ybus, bus_degrees
from pmuopt.sampling import AngleSampleSet, RandomStream

# Comparison placements on the 39-bus New England system (bus ids).
BASELINE_PLACEMENTS_39 = {
    "scattered": (1, 2, 5, 7, 9, 11, 13, 14, 16, 17, 19, 21, 23, 24, 26, 27, 30, 32, 34, 37),
    "tree": (2, 3, 4, 5, 7, 8, 9, 11, 12, 13, 14, 15, 16, 17, 18, 19, 21, 26, 27, 28),
    "degree": (1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 13, 14, 16, 17, 19, 22, 23, 25, 26, 29),
    "ga": (2, 3, 4, 5, 8, 10, 11, 12, 14, 15, 16, 17, 18, 21, 22, 23, 24, 25, 27, 35),
}

EXHAUSTIVE_LIMIT = 10**6


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class Placement:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise PlacementError("placement bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_mask(cls, mask) -> "Placement":
        return cls(tuple(int(b) for b in np.asarray(mask, dtype=bool)))

    @classmethod
    def from_buses(cls, net: Network, bus_ids) -> "Placement":
        idx = net.index
        bits = [0] * net.n_bus
        for b in bus_ids:
            if b not in idx:
                raise PlacementError(f"bus {b} is not in the network")
            bits[idx[b]] = 1
        return cls(tuple(bits))

    @classmethod
    def full(cls, n: int) -> "Placement":
        return cls((1,) * n)

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool)

    @property
    def n_p(self) -> int:
        return sum(self.bits)

    def buses(self, net: Network) -> list[int]:
        return [b.id for b, x in zip(net.buses, self.bits) if x]

    def __len__(self):
        return len(self.bits)


@dataclass
class FitnessReport:
    placement: Placement
    delta: float
    per_sample: np.ndarray


class Objective:
    """Mean absolute gap between full and PMU-masked Jacobian Frobenius norms.

    Full-deployment norms are computed once; each call only rebuilds the
    masked Jacobians for the sample set.
    """

    def __init__(self, net: Network, base: OperatingPoint, samples: AngleSampleSet, fill: str = "zero"):
        if len(samples) == 0:
            raise ValueError("empty sample set")
        if fill not in FILL_MODES:
            raise ValueError(f"fill must be one of {FILL_MODES}")
        self.fill = fill
        ybus = build_ybus(net)
        self._mag = ybus.magnitude
        self._ang = ybus.angle
        self._ref = net.reference_index
        self._base = base
        self._theta = samples.theta
        self._vmag = samples.vmag
        self.n_bus = net.n_bus
        self.full_norms = self._norms(self._theta, self._vmag)

    def _norms(self, theta, vmag, observed=None) -> np.ndarray:
        d = dp_dtheta(self._mag, self._ang, theta, vmag, observed)
        keep = np.arange(self.n_bus) != self._ref
        d = d[:, keep][:, :, keep]
        return np.sqrt(np.sum(d * d, axis=(1, 2)))

    def per_sample(self, mask) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        if self.fill == "zero":
            return np.abs(self.full_norms - self._norms(self._theta, self._vmag, mask))
        theta = np.where(mask, self._theta, self._base.theta)
        vmag = np.where(mask, self._vmag, self._base.vmag)
        return np.abs(self.full_norms - self._norms(theta, vmag))

    def __call__(self, mask) -> float:
        return float(np.mean(self.per_sample(mask)))


def objective_delta(net: Network, base: OperatingPoint, samples: AngleSampleSet,
                    placement: Placement, fill: str = "zero") -> FitnessReport:
    per = Objective(net, base, samples, fill).per_sample(placement.mask)
    return FitnessReport(placement, float(np.mean(per)), per)


# --------------------------------------------------------------------------- GA


@dataclass(frozen=True)
class GAConfig:
    generations: int = 50
    population: int = 100
    initial_count: int = 100
    mutate_prob: float = 0.2
    shuffle_prob: float = 0.05
    tournament_size: int = 3
    crossover_prob: float = 0.0
    exclude_reference: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("generations", "population", "initial_count", "tournament_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("mutate_prob", "shuffle_prob", "crossover_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class GAResult:
    placement: Placement
    delta: float
    history: list[float]
    final_population: list[Placement] = field(default_factory=list)
    final_fitness: list[float] = field(default_factory=list)

    def top(self, k: int = 30) -> list[float]:
        return sorted(self.final_fitness)[:k]


def _allowed_mask(net: Network, exclude_reference: bool) -> np.ndarray:
    allowed = np.ones(net.n_bus, dtype=bool)
    if exclude_reference:
        allowed[net.reference_index] = False
    return allowed


def _random_individual(rng: np.random.Generator, allowed_idx: np.ndarray, n: int, n_p: int) -> np.ndarray:
    ind = np.zeros(n, dtype=bool)
    ind[rng.choice(allowed_idx, size=n_p, replace=False)] = True
    return ind


def shuffle_mutation(ind: np.ndarray, rng: np.random.Generator, shuffle_prob: float,
                     allowed_idx: np.ndarray | None = None) -> np.ndarray:
    """Swap each position, with probability ``shuffle_prob``, with another random position.

    Swapping equal digits is a no-op, so the PMU count never changes.
    """
    ind = ind.copy()
    pos = np.arange(ind.size) if allowed_idx is None else allowed_idx
    m = pos.size
    if m < 2:
        return ind
    hits = np.flatnonzero(rng.random(m) < shuffle_prob)
    partners = rng.integers(m - 1, size=hits.size)
    for k, j in zip(hits, partners):
        if j >= k:
            j += 1
        a, b = pos[k], pos[j]
        if ind[a] != ind[b]:
            ind[a], ind[b] = ind[b], ind[a]
    return ind


def count_preserving_crossover(p1: np.ndarray, p2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Child keeps the PMUs both parents share and fills the rest from either parent at random."""
    child = p1 & p2
    pool = np.flatnonzero(p1 ^ p2)
    need = int(p1.sum() - child.sum())
    if need:
        child[rng.choice(pool, size=need, replace=False)] = True
    return child


def ga_optimize(net: Network, base: OperatingPoint, samples: AngleSampleSet, n_p: int,
                cfg: GAConfig = GAConfig(), objective=None, fill: str = "zero") -> GAResult:
    """Mutation-driven genetic search over placements with exactly ``n_p`` PMUs."""
    n = net.n_bus
    allowed = _allowed_mask(net, cfg.exclude_reference)
    allowed_idx = np.flatnonzero(allowed)
    if not 0 <= n_p <= allowed_idx.size:
        raise PlacementError(f"n_p must lie in [0, {allowed_idx.size}], got {n_p}")
    if objective is None:
        objective = Objective(net, base, samples, fill)
    rng = RandomStream(cfg.seed).generator()
    cache: dict[bytes, float] = {}

    def fitness(ind: np.ndarray) -> float:
        key = ind.tobytes()
        if key not in cache:
            cache[key] = objective(ind)
        return cache[key]

    pop = [_random_individual(rng, allowed_idx, n, n_p) for _ in range(cfg.initial_count)]
    best, best_fit = None, math.inf
    history: list[float] = []

    def track(fits):
        nonlocal best, best_fit
        for ind, f in zip(pop, fits):
            if f < best_fit:
                best, best_fit = ind.copy(), float(f)
        history.append(best_fit)

    for _ in range(cfg.generations):
        fits = np.array([fitness(ind) for ind in pop])
        track(fits)
        contenders = rng.integers(len(pop), size=(cfg.population, cfg.tournament_size))
        winners = contenders[np.arange(cfg.population), np.argmin(fits[contenders], axis=1)]
        pop = [pop[w].copy() for w in winners]
        if cfg.crossover_prob > 0:
            for i in range(1, len(pop), 2):
                if rng.random() < cfg.crossover_prob:
                    pop[i - 1], pop[i] = (count_preserving_crossover(pop[i - 1], pop[i], rng),
                                          count_preserving_crossover(pop[i], pop[i - 1], rng))
        for i, ind in enumerate(pop):
            if rng.random() < cfg.mutate_prob:
                pop[i] = shuffle_mutation(ind, rng, cfg.shuffle_prob, allowed_idx)

    fits = np.array([fitness(ind) for ind in pop])
    track(fits)
    return GAResult(
        Placement.from_mask(best), best_fit, history,
        [Placement.from_mask(ind) for ind in pop], [float(f) for f in fits],
    )


def exhaustive_search(net: Network, base: OperatingPoint, samples: AngleSampleSet, n_p: int,
                      exclude_reference: bool = False, objective=None,
                      fill: str = "zero") -> tuple[Placement, float]:
    """Global minimum over every placement with ``n_p`` PMUs.

    Ties go to the lexicographically smallest bit vector.
    """
    allowed_idx = np.flatnonzero(_allowed_mask(net, exclude_reference))
    if not 0 <= n_p <= allowed_idx.size:
        raise PlacementError(f"n_p must lie in [0, {allowed_idx.size}], got {n_p}")
    total = math.comb(allowed_idx.size, n_p)
    if total > EXHAUSTIVE_LIMIT:
        raise PlacementError(f"{total} candidate placements exceed the exhaustive limit {EXHAUSTIVE_LIMIT}")
    if objective is None:
        objective = Objective(net, base, samples, fill)
    best_key, best = None, None
    for combo in itertools.combinations(allowed_idx, n_p):
        mask = np.zeros(net.n_bus, dtype=bool)
        mask[list(combo)] = True
        key = (objective(mask), tuple(mask.astype(int)))
        if best_key is None or key < best_key:
            best_key, best = key, mask
    return Placement.from_mask(best), float(best_key[0])


# --------------------------------------------------------------------------- baselines


def strategy_scattered(net: Network, n_p: int, stream: RandomStream) -> Placement:
    if not 0 <= n_p <= net.n_bus:
        raise PlacementError(f"n_p must lie in [0, {net.n_bus}]")
    rng = stream.generator()
    return Placement.from_mask(_random_individual(rng, np.arange(net.n_bus), net.n_bus, n_p))


def is_induced_tree(net: Network, placement: Placement) -> bool:
    """True if the selected buses induce a connected acyclic subgraph."""
    adj = adjacency(net)
    chosen = set(np.flatnonzero(placement.mask).tolist())
    if not chosen:
        return True
    edges = sum(len(adj[u] & chosen) for u in chosen) // 2
    if edges != len(chosen) - 1:
        return False
    start = next(iter(chosen))
    seen, stack = {start}, [start]
    while stack:
        u = stack.pop()
        for v in adj[u] & chosen:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(chosen)


def strategy_tree(net: Network, n_p: int, stream: RandomStream, max_tries: int = 200) -> Placement:
    """Random induced tree of ``n_p`` buses grown from a random root."""
    n = net.n_bus
    if not 0 <= n_p <= n:
        raise PlacementError(f"n_p must lie in [0, {n}]")
    if n_p == 0:
        return Placement((0,) * n)
    adj = adjacency(net)
    rng = stream.generator()
    for _ in range(max_tries):
        chosen = {int(rng.integers(n))}
        while len(chosen) < n_p:
            # a node touching exactly one chosen bus keeps the induced graph a tree
            frontier = sorted({v for u in chosen for v in adj[u]
                               if v not in chosen and len(adj[v] & chosen) == 1})
            if not frontier:
                break
            chosen.add(frontier[int(rng.integers(len(frontier)))])
        if len(chosen) == n_p:
            mask = np.zeros(n, dtype=bool)
            mask[list(chosen)] = True
            return Placement.from_mask(mask)
    raise PlacementError(f"could not grow an induced tree of {n_p} buses after {max_tries} tries")


def strategy_degree(net: Network, n_p: int) -> Placement:
    if not 0 <= n_p <= net.n_bus:
        raise PlacementError(f"n_p must lie in [0, {net.n_bus}]")
    ranked = sorted(bus_degrees(net), key=lambda item: (-item[1], item[0]))
    return Placement.from_buses(net, [bid for bid, _ in ranked[:n_p]])


def strategy_full(net: Network) -> Placement:
    return Placement.full(net.n_bus)
