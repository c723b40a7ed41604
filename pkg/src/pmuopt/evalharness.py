"""Monte Carlo evaluation of placements: outage heatmaps, strategy comparison, PMU-count sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from pmuopt.detection import build_scenarios, full_covariances, run_batch, threshold
from pmuopt.jacobian import OperatingPoint
from pmuopt.netmodel import Network
from pmuopt.placement import GAConfig, Objective, Placement, ga_optimize
from pmuopt.sampling import (
    DEFAULT_DT,
    DEFAULT_SAMPLES,
    DEFAULT_SIGMA,
    RandomStream,
    psd_factor,
    sample_operating_points,
)

log = logging.getLogger(__name__)

DEFAULT_COUNTS = (10, 15, 20, 25, 30)
TOP_K = 30


def sig6(x: float) -> float:
    return float(f"{x:.6g}")


@dataclass(frozen=True)
class EvalConfig:
    replications: int = 100
    pre_outage_samples: int = 60
    post_outage_horizon: int = 300
    sigma: float = DEFAULT_SIGMA
    dt: float = DEFAULT_DT
    arl0: float = 10_000.0
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.pre_outage_samples < 0 or self.post_outage_horizon < 1:
            raise ValueError("need pre_outage_samples >= 0 and post_outage_horizon >= 1")
        if self.sigma <= 0 or self.dt <= 0 or self.arl0 <= 0:
            raise ValueError("sigma, dt and arl0 must be positive")


@dataclass
class HeatmapReport:
    """Empirical identification likelihoods, one row per true outage line.

    ``top3[i][0]`` is the missed-detection fraction for ``lines[i]``;
    ``top3[i][1 + j]`` the fraction of replications where ``lines[j]`` was
    among the three lines identified. ``top1`` credits only the leading line.
    Lines are 1-based branch numbers in case-file order.
    """

    lines: list[int]
    placement: list[int]
    threshold: float
    top3: np.ndarray
    top1: np.ndarray
    detection_rate: np.ndarray
    false_alarm_rate: np.ndarray
    mean_delay: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def top3_accuracy(self) -> np.ndarray:
        return np.diag(self.top3[:, 1:]).copy()

    @property
    def top1_accuracy(self) -> np.ndarray:
        return np.diag(self.top1[:, 1:]).copy()

    def summary(self) -> dict:
        if not self.lines:
            return dict(n_pmus=len(self.placement), mean_top3=0.0, mean_top1=0.0, mean_detection=0.0)
        return dict(
            n_pmus=len(self.placement),
            mean_top3=sig6(self.top3_accuracy.mean()),
            mean_top1=sig6(self.top1_accuracy.mean()),
            mean_detection=sig6(self.detection_rate.mean()),
        )

    def to_dict(self) -> dict:
        def rows(a):
            return [[sig6(v) for v in row] for row in np.asarray(a)]

        return {
            "lines": list(self.lines),
            "placement": list(self.placement),
            "threshold": sig6(self.threshold),
            "columns": ["missed"] + [str(li) for li in self.lines],
            "top3": rows(self.top3),
            "top1": rows(self.top1),
            "detection_rate": [sig6(v) for v in self.detection_rate],
            "false_alarm_rate": [sig6(v) for v in self.false_alarm_rate],
            "mean_delay": [None if np.isnan(v) else sig6(v) for v in self.mean_delay],
            "top3_accuracy": [sig6(v) for v in self.top3_accuracy],
            "top1_accuracy": [sig6(v) for v in self.top1_accuracy],
            "summary": self.summary(),
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self, which: str = "top3") -> str:
        mat = self.top3 if which == "top3" else self.top1
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["line", "missed"] + [str(li) for li in self.lines])
        for li, row in zip(self.lines, mat):
            w.writerow([str(li)] + [f"{v:.6g}" for v in row])
        return buf.getvalue()


def _simulate_line(args):
    """Replications for one true outage: returns (stop times, top-3 positions)."""
    bank, c, f0, fl, seed, line, reps, pre, post = args
    rng = RandomStream(seed).child(line).generator()
    z = rng.standard_normal((reps, pre + post, f0.shape[0]))
    x = np.concatenate([z[:, :pre] @ f0.T, z[:, pre:] @ fl.T], axis=1)
    return run_batch(bank, c, x[..., bank.coords])


def evaluate_placement(net: Network, base: OperatingPoint, placement: Placement,
                       cfg: EvalConfig = EvalConfig(), full=None, jobs: int = 1) -> HeatmapReport:
    """Per-line outage replications scored by detection and top-3 identification.

    Increments are drawn in the full (N-1)-dimensional angle space from one
    stream per true line and then restricted to the observed buses, so
    different placements see the same underlying disturbances.
    """
    full = full if full is not None else full_covariances(net, base, cfg.sigma, cfg.dt)
    bank = build_scenarios(net, base, placement, cfg.sigma, cfg.dt, full=full)
    c = threshold(cfg.arl0, max(placement.n_p, 1))
    cov0, lines, covs, _ = full
    f0 = psd_factor(cov0)
    pre, post, reps = cfg.pre_outage_samples, cfg.post_outage_horizon, cfg.replications
    tasks = [(bank, c, f0, psd_factor(covs[j]), cfg.seed, li, reps, pre, post)
             for j, li in enumerate(lines)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_simulate_line, tasks))
    else:
        results = [_simulate_line(t) for t in tasks]

    n_l = len(lines)
    top3 = np.zeros((n_l, n_l + 1))
    top1 = np.zeros((n_l, n_l + 1))
    det = np.zeros(n_l)
    fa = np.zeros(n_l)
    delay = np.full(n_l, np.nan)
    for j, (stop, top) in enumerate(results):
        hit = stop > 0
        n_hit = int(hit.sum())
        det[j] = n_hit / reps
        fa[j] = int((hit & (stop <= pre)).sum()) / reps
        late = stop[stop > pre]
        if late.size:
            delay[j] = float(np.mean(late - pre))
        top3[j, 0] = (reps - n_hit) / reps
        top1[j, 0] = (reps - n_hit) / reps
        credits3 = np.bincount(top[hit].ravel()[top[hit].ravel() >= 0], minlength=n_l)
        credits1 = np.bincount(top[hit, 0], minlength=n_l)
        top3[j, 1:] = credits3 / reps
        top1[j, 1:] = credits1 / reps
    log.info("evaluated %d outage lines x %d replications, threshold %.4f", n_l, reps, c)
    return HeatmapReport(
        lines=[li + 1 for li in lines],
        placement=placement.buses(net),
        threshold=c,
        top3=top3,
        top1=top1,
        detection_rate=det,
        false_alarm_rate=fa,
        mean_delay=delay,
        config=asdict(cfg),
    )


def null_run_lengths(bank, c: float, cov0: np.ndarray, runs: int, stream: RandomStream,
                     max_steps: int = 10**6, chunk: int = 2000) -> np.ndarray:
    """Samples to the first (false) alarm under no-outage data, one per run.

    ``cov0`` is the unmarginalized null covariance; runs still silent after
    ``max_steps`` report ``max_steps`` (so averages are lower bounds).
    """
    rng = stream.generator()
    f0 = psd_factor(cov0)
    lengths = np.full(runs, max_steps, dtype=int)
    w = np.zeros((runs, bank.n_scenarios))
    live = np.arange(runs)
    done = 0
    while live.size and done < max_steps:
        steps = min(chunk, max_steps - done)
        z = rng.standard_normal((live.size, steps, f0.shape[0]))
        x = (z @ f0.T)[..., bank.coords]
        stop, _, w_new = run_batch(bank, c, x, w0=w[live], return_state=True)
        fired = stop > 0
        lengths[live[fired]] = done + stop[fired]
        w[live] = w_new
        live = live[~fired]
        done += steps
    return lengths


def compare_strategies(net: Network, base: OperatingPoint, strategies, cfg: EvalConfig = EvalConfig(),
                       jobs: int = 1):
    """Evaluate named placements; ranked by mean top-3 accuracy (best first).

    All placements share the seed, hence the same simulated disturbances.
    """
    full = full_covariances(net, base, cfg.sigma, cfg.dt)
    out = []
    for name, placement in strategies:
        report = evaluate_placement(net, base, placement, cfg, full=full, jobs=jobs)
        out.append((name, report, report.summary()))
    out.sort(key=lambda item: -item[2]["mean_top3"])
    return out


@dataclass
class SweepReport:
    counts: list[int]
    objectives: dict[int, list[float]]  # sorted top-30 final-generation values per count
    best: dict[int, float]
    placements: dict[int, list[int]]

    def to_dict(self) -> dict:
        return {
            "counts": list(self.counts),
            "best": {str(k): sig6(v) for k, v in self.best.items()},
            "placements": {str(k): v for k, v in self.placements.items()},
            "objectives": {str(k): [sig6(v) for v in vals] for k, vals in self.objectives.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _sweep_one(args):
    net, base, samples, n_p, ga_cfg, fill = args
    res = ga_optimize(net, base, samples, n_p, ga_cfg, fill=fill)
    return n_p, res


def sweep_pmu_count(net: Network, base: OperatingPoint, counts, ga_cfg: GAConfig = GAConfig(),
                    sigma: float = DEFAULT_SIGMA, dt: float = DEFAULT_DT, m: int = DEFAULT_SAMPLES,
                    samples=None, fill: str = "zero", jobs: int = 1) -> SweepReport:
    """GA per PMU count on one shared sample set and one GA seed."""
    counts = list(counts)
    if not counts:
        raise ValueError("counts must be nonempty")
    if samples is None:
        samples = sample_operating_points(net, base, sigma, dt, m, RandomStream(ga_cfg.seed, stream_id=1))
    tasks = [(net, base, samples, n_p, ga_cfg, fill) for n_p in counts]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    objectives, best, placements = {}, {}, {}
    for n_p, res in results:
        objectives[n_p] = res.top(TOP_K)
        best[n_p] = res.delta
        placements[n_p] = res.placement.buses(net)
    return SweepReport(counts, objectives, best, placements)


def objective_for(net: Network, base: OperatingPoint, sigma=DEFAULT_SIGMA, dt=DEFAULT_DT,
                  m=DEFAULT_SAMPLES, seed: int = 0, fill: str = "zero"):
    """Sample set and objective as used by the optimizer for ``seed``."""
    samples = sample_operating_points(net, base, sigma, dt, m, RandomStream(seed, stream_id=1))
    return samples, Objective(net, base, samples, fill)
