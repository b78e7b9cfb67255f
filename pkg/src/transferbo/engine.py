"""Outer optimization loop: batched constrained BO with a two-armed
selective-transfer split.

Each iteration refreshes two surrogates on the target data (a transfer
model aligned to a source problem, and a target-only GP with a trainable
kernel), runs the feasibility-scaled acquisition ensemble through NSGA-II
for each, and splits the evaluation batch between the two proposal fronts
in proportion to bandit weights.  Weights grow by the number of evaluated
points per arm that beat the pre-iteration incumbent, so an unhelpful
source loses its share of the budget over time.

All values in traces follow the maximization convention: metrics whose
direction is "min" appear negated in the objective/incumbent columns.
Runs are deterministic given (config, seed): every random draw flows from
one seeded generator, including derived seeds for model fitting and the
evolutionary search.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .acquisition import AcquisitionContext
from .benchmarks import (
    EvaluationError,
    FomSpec,
    ProblemSpec,
    build_fom_spec,
    evaluate,
)
from .gp import GpModel
from .neural_kernel import NeuralKernel
from .nsga2 import EvolutionConfig, evolve
from .transfer import (TransferGp, gp_from_dict, gp_to_dict,
                       transfer_from_dict, transfer_to_dict)

# Arm labels used in trace files.
ARM_TRANSFER = "KAT"
ARM_TARGET = "NEUK"
ARM_INIT = "INIT"
ARM_RANDOM = "RANDOM"

DUPLICATE_TOL = 1e-6

MODE_FOM = "fom"
MODE_CONSTRAINED = "constrained"


class RunConfigError(ValueError):
    """The run configuration is inconsistent."""


@dataclass
class BanditState:
    """Arm weights, incumbent, and progress bookkeeping."""

    w1: float
    w2: float
    incumbent_value: float | None = None
    incumbent_point: np.ndarray | None = None
    min_violation: float = math.inf
    iteration: int = 0
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "w1": self.w1, "w2": self.w2,
            "incumbent_value": self.incumbent_value,
            "incumbent_point": None if self.incumbent_point is None
            else self.incumbent_point.tolist(),
            "min_violation": self.min_violation if np.isfinite(self.min_violation)
            else None,
            "iteration": self.iteration,
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BanditState":
        return cls(
            w1=d["w1"], w2=d["w2"],
            incumbent_value=d["incumbent_value"],
            incumbent_point=None if d["incumbent_point"] is None
            else np.asarray(d["incumbent_point"]),
            min_violation=math.inf if d["min_violation"] is None else d["min_violation"],
            iteration=d["iteration"], history=list(d["history"]))


@dataclass
class RunConfig:
    problem: ProblemSpec
    batch_size: int = 4
    n_iterations: int = 30
    n_initial: int = 10
    mode: str = MODE_CONSTRAINED
    transfer: bool = False
    seed: int = 0
    output_dir: str | None = None
    fit_steps: int = 200
    fit_restarts: int = 3
    refresh_steps: int = 200
    transfer_fit_steps: int = 200
    transfer_refresh_steps: int = 200
    population: int = 100
    generations: int = 50
    ucb_beta: float = 2.0
    fom_samples: int = 1000
    fom_seed: int = 0
    fom_cache_dir: str | None = None
    checkpoint_every: int = 0   # 0 = no checkpoints

    def validate(self, source_given: bool) -> None:
        if self.mode not in (MODE_FOM, MODE_CONSTRAINED):
            raise RunConfigError(f"mode must be fom|constrained, got {self.mode!r}")
        if self.transfer and self.batch_size < 2:
            raise RunConfigError("transfer runs need batch_size >= 2")
        if self.transfer != source_given:
            raise RunConfigError("a source model is required iff transfer is on")
        if self.n_initial < 2:
            raise RunConfigError("need at least 2 initial samples")
        if self.n_iterations < 0 or self.batch_size < 1:
            raise RunConfigError("budgets must be nonnegative")
        if self.mode == MODE_CONSTRAINED and not self.problem.constraint_indices:
            raise RunConfigError("constrained mode needs at least one constraint")


@dataclass
class TraceRow:
    iteration: int
    arm: str
    point: np.ndarray          # unit-cube coordinates
    metrics: np.ndarray        # raw metric vector (nan on failure)
    feasible: bool
    value: float               # objective-or-FOM, maximization convention
    incumbent: float | None    # running best-so-far, maximization convention


@dataclass
class RunResult:
    rows: list[TraceRow]
    state: BanditState
    x: np.ndarray
    metrics: np.ndarray
    failed: np.ndarray

    @property
    def incumbent_trace(self) -> np.ndarray:
        return np.array([np.nan if r.incumbent is None else r.incumbent
                         for r in self.rows])

    @property
    def best_value(self) -> float | None:
        return self.state.incumbent_value

    @property
    def best_point(self) -> np.ndarray | None:
        return self.state.incumbent_point

    @property
    def n_evaluations(self) -> int:
        return len(self.rows)


# ---------------------------------------------------------------------------
# figure of merit
# ---------------------------------------------------------------------------

def compute_fom(metrics: np.ndarray, spec: FomSpec) -> np.ndarray | float:
    """Weighted sum of clipped, range-normalized metrics.

    fom = sum_i w_i (min(f_i, bound_i) - fmin_i) / (fmax_i - fmin_i)
    """
    metrics = np.asarray(metrics, dtype=np.float64)
    single = metrics.ndim == 1
    m = np.atleast_2d(metrics)
    clipped = np.minimum(m, spec.bounds)
    normalized = (clipped - spec.fmin) / (spec.fmax - spec.fmin)
    out = normalized @ spec.weights
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# improvement accounting
# ---------------------------------------------------------------------------

def constraint_violation(problem: ProblemSpec, metrics: np.ndarray) -> np.ndarray:
    """Direction-adjusted total violation; +inf for failed evaluations."""
    m = np.atleast_2d(np.asarray(metrics, dtype=np.float64))
    total = np.zeros(m.shape[0])
    for i in problem.constraint_indices:
        spec = problem.metrics[i]
        if spec.direction == "max":
            total += np.maximum(0.0, spec.threshold - m[:, i])
        else:
            total += np.maximum(0.0, m[:, i] - spec.threshold)
    total[~np.isfinite(m).all(axis=1)] = math.inf
    return total


@dataclass
class EvaluatedBatch:
    """One arm's evaluated points with derived engine-side values."""

    points: np.ndarray
    values: np.ndarray       # objective-or-FOM, maximization convention
    feasible: np.ndarray
    violations: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "EvaluatedBatch":
        return cls(points=np.zeros((0, dim)), values=np.zeros(0),
                   feasible=np.zeros(0, dtype=bool), violations=np.zeros(0))

    def improvement_count(self, state: BanditState, mode: str) -> int:
        """Points beating the pre-iteration incumbent (or reducing violation
        when no feasible incumbent exists yet)."""
        if mode == MODE_FOM:
            if state.incumbent_value is None:
                return int(np.isfinite(self.values).sum())
            return int((self.values > state.incumbent_value).sum())
        if state.incumbent_value is not None:
            return int((self.feasible & (self.values > state.incumbent_value)).sum())
        return int((self.violations < state.min_violation).sum())


def update_weights(state: BanditState, batch_1: EvaluatedBatch,
                   batch_2: EvaluatedBatch, mode: str) -> BanditState:
    """Grow each arm's weight by its improvement count, then update the
    incumbent from the union (weights always count against the incumbent
    from before this iteration's batch)."""
    n1 = batch_1.improvement_count(state, mode)
    n2 = batch_2.improvement_count(state, mode)
    new = replace(state, w1=state.w1 + n1, w2=state.w2 + n2)
    for batch in (batch_1, batch_2):
        new = _absorb_batch(new, batch, mode)
    new.history.append({"iteration": state.iteration, "improved_1": n1,
                        "improved_2": n2, "n1": len(batch_1.values),
                        "n2": len(batch_2.values)})
    return new


def _absorb_batch(state: BanditState, batch: EvaluatedBatch, mode: str) -> BanditState:
    if len(batch.values) == 0:
        return state
    if mode == MODE_FOM:
        candidates = np.where(np.isfinite(batch.values), batch.values, -math.inf)
    else:
        candidates = np.where(batch.feasible, batch.values, -math.inf)
    best = int(np.argmax(candidates))
    if np.isfinite(candidates[best]) and (state.incumbent_value is None
                                          or candidates[best] > state.incumbent_value):
        state = replace(state, incumbent_value=float(candidates[best]),
                        incumbent_point=batch.points[best].copy())
    finite_viol = batch.violations[np.isfinite(batch.violations)]
    if finite_viol.size:
        state = replace(state, min_violation=min(state.min_violation,
                                                 float(finite_viol.min())))
    return state


# ---------------------------------------------------------------------------
# surrogate bundles
# ---------------------------------------------------------------------------

class _MetricColumn:
    """Adapter giving a per-metric ``posterior`` view over a GpModel list."""

    def __init__(self, models: list[GpModel], index: int):
        self.models = models
        self.index = index

    def posterior(self, x):
        return self.models[self.index].posterior(x)


class _StandardizedObjective:
    """Maps an objective posterior to zero-mean/unit-scale units.

    The variance-weighted confidence bound of the ensemble is only
    meaningful when mean and variance share a scale; standardizing by the
    current data moments makes the acquisition balance unit-free.  The sign
    folds minimization into maximization.
    """

    def __init__(self, view, sign: float, center: float, scale: float):
        self.view = view
        self.sign = sign
        self.center = center
        self.scale = scale

    def standardize_value(self, value: float) -> float:
        return (value - self.center) / self.scale

    def posterior(self, x):
        post = self.view.posterior(x)
        from .gp import GaussianPosterior
        return GaussianPosterior(
            mean=(self.sign * post.mean - self.center) / self.scale,
            variance=post.variance / self.scale**2)


class TargetSurrogates:
    """One GP with a trainable composite kernel per modeled metric."""

    def __init__(self, dim: int):
        self.dim = dim
        self.models: list[GpModel] | None = None

    def refresh(self, x: np.ndarray, targets: np.ndarray, cfg: RunConfig,
                seed: int, first: bool) -> None:
        targets = np.atleast_2d(targets.T).T  # (n, k)
        models = []
        for j in range(targets.shape[1]):
            if first or self.models is None:
                kernel = NeuralKernel.initialize(self.dim, seed=seed + 7 * j)
                models.append(GpModel.fit(x, targets[:, j], kernel,
                                          steps=cfg.fit_steps,
                                          restarts=cfg.fit_restarts,
                                          seed=seed + 7 * j))
            else:
                models.append(self.models[j].refit(x, targets[:, j],
                                                   steps=cfg.refresh_steps))
        self.models = models

    def view(self, index: int) -> _MetricColumn:
        return _MetricColumn(self.models, index)


def fit_transfer_model(source_models: list[GpModel], target_dim: int,
                       n_metrics: int, x_t, y_t, *, steps: int, restarts: int,
                       seed: int) -> TransferGp:
    """Initial transfer fit: encoder/decoder restarts over cloned sources."""
    best_model = None
    best_ll = -math.inf
    for attempt in range(max(1, restarts)):
        sources = [gp_from_dict(gp_to_dict(m)) for m in source_models]
        candidate = TransferGp(sources, target_dim, n_metrics,
                               seed=seed + 101 * attempt)
        candidate.set_target_data(x_t, y_t)
        candidate.train(steps=steps)
        ll = candidate.log_likelihood()
        if np.isfinite(ll) and ll > best_ll:
            best_ll = ll
            best_model = candidate
    if best_model is None:  # every restart diverged; keep an untrained one
        sources = [gp_from_dict(gp_to_dict(m)) for m in source_models]
        best_model = TransferGp(sources, target_dim, n_metrics, seed=seed)
        best_model.set_target_data(x_t, y_t)
        best_model.degraded = True
    return best_model


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def run_optimization(cfg: RunConfig, source_models: list[GpModel] | None = None,
             resume_from: str | None = None) -> RunResult:
    """Run the full selective-transfer BO loop; returns the evaluation trace.

    ``source_models`` are per-metric GPs of the source problem (see
    ``transfer.load_source``); required iff ``cfg.transfer`` is set.
    """
    torch.set_num_threads(1)  # tiny dense problems; keeps runs reproducible
    cfg.validate(source_given=source_models is not None)
    problem = cfg.problem
    d = problem.dimension
    obj_sign = 1.0 if problem.objective.direction == "max" else -1.0

    fom_spec = None
    if cfg.mode == MODE_FOM:
        fom_spec = build_fom_spec(problem, cfg.fom_samples, cfg.fom_seed,
                                  cache_dir=cfg.fom_cache_dir)

    resumed_models = None
    if resume_from is not None:
        (rng, state, rows, x_all, metrics_all, failed_all,
         resumed_models) = _load_run_checkpoint(resume_from, problem)
    else:
        rng = np.random.default_rng(cfg.seed)
        x_all = rng.uniform(size=(cfg.n_initial, d))
        metrics_all, failed_all = _evaluate_points(problem, x_all)
        state = BanditState(w1=float(cfg.n_initial), w2=float(cfg.n_initial))
        rows: list[TraceRow] = []
        init_batch = _make_batch(problem, x_all, metrics_all, failed_all,
                                 obj_sign, fom_spec, cfg.mode)
        state = _absorb_batch(state, init_batch, cfg.mode)
        _append_rows(rows, 0, ARM_INIT, init_batch, problem, metrics_all)

    target_surrogates = TargetSurrogates(d)
    transfer_model: TransferGp | None = None
    if resumed_models is not None:
        target_surrogates.models, transfer_model = resumed_models
    mode_constrained = cfg.mode == MODE_CONSTRAINED
    source_elite = None
    if cfg.transfer:
        source_elite = _source_elite_points(problem, source_models,
                                            cap=cfg.population // 4)

    while state.iteration < cfg.n_iterations:
        iteration = state.iteration + 1
        ok = ~failed_all
        x_fit = x_all[ok]
        if mode_constrained:
            fit_targets = metrics_all[ok]
        else:
            fit_targets = np.asarray(compute_fom(metrics_all[ok], fom_spec))[:, None]

        seed_fit = int(rng.integers(0, 2**31 - 1))
        first = target_surrogates.models is None
        target_surrogates.refresh(x_fit, fit_targets, cfg, seed_fit, first=first)

        if cfg.transfer:
            if transfer_model is None:
                transfer_model = fit_transfer_model(
                    source_models, d, fit_targets.shape[1], x_fit, fit_targets,
                    steps=cfg.transfer_fit_steps, restarts=cfg.fit_restarts,
                    seed=seed_fit)
            else:
                transfer_model.set_target_data(x_fit, fit_targets)
                # refresh adapts encoder/decoder/noise only; the full fit at
                # iteration 0 already trained the source kernels
                transfer_model.train(steps=cfg.transfer_refresh_steps,
                                     train_source_kernels=False)

        # proposal fronts (posteriors frozen during the evolutionary search)
        # engine-side acquisition values live in standardized objective units
        if mode_constrained:
            engine_values = obj_sign * fit_targets[:, problem.objective_index]
        else:
            engine_values = fit_targets[:, 0]
        value_center = float(engine_values.mean())
        value_scale = float(engine_values.std())
        if value_scale < 1e-12:
            value_scale = 1.0
        seed_evo_1 = int(rng.integers(0, 2**31 - 1))
        seed_evo_2 = int(rng.integers(0, 2**31 - 1))
        # the transfer arm's search is seeded with the source's elite designs
        # (the knowledge being transferred); the target-only arm runs the
        # plain evolutionary search
        front_2 = _propose(target_surrogates.view, problem, state, cfg,
                           obj_sign, mode_constrained, seed_evo_2,
                           value_center, value_scale)
        front_1 = None
        if cfg.transfer:
            front_1 = _propose(transfer_model.metric_view, problem, state, cfg,
                               obj_sign, mode_constrained, seed_evo_1,
                               value_center, value_scale,
                               seed_points=source_elite)

        picks_1, picks_2, picks_rand = _select_batch(
            rng, cfg, state, front_1, front_2, x_all, d)

        batches = []
        new_rows = []
        for arm, picks in ((ARM_TRANSFER, picks_1), (ARM_TARGET, picks_2),
                           (ARM_RANDOM, picks_rand)):
            if picks.shape[0] == 0:
                batches.append(EvaluatedBatch.empty(d))
                continue
            m, failed = _evaluate_points(problem, picks)
            batch = _make_batch(problem, picks, m, failed, obj_sign, fom_spec,
                                cfg.mode)
            batches.append(batch)
            new_rows.append((arm, batch, m))
            x_all = np.vstack([x_all, picks])
            metrics_all = np.vstack([metrics_all, m])
            failed_all = np.concatenate([failed_all, failed])

        state = replace(state, iteration=iteration)
        state = update_weights(state, batches[0], batches[1], cfg.mode)
        state = _absorb_batch(state, batches[2], cfg.mode)
        for arm, batch, m in new_rows:
            _append_rows(rows, iteration, arm, batch, problem, m)

        if cfg.checkpoint_every and cfg.output_dir \
                and iteration % cfg.checkpoint_every == 0:
            _save_run_checkpoint(os.path.join(cfg.output_dir, "checkpoint.json"),
                                 rng, state, rows, x_all, metrics_all, failed_all,
                                 target_surrogates, transfer_model)

    return RunResult(rows=rows, state=state, x=x_all, metrics=metrics_all,
                     failed=failed_all)


def _source_elite_points(problem: ProblemSpec, source_models: list[GpModel],
                         cap: int) -> np.ndarray | None:
    """Source designs ranked by the source observations (feasible under the
    target thresholds first, then by objective).  They enter the transfer
    arm's search population as-is (the input alignment starts near the
    identity); the transfer model's own scoring decides whether they
    survive selection."""
    x = source_models[0].x.numpy()
    if len(source_models) != len(problem.metrics):
        return np.asarray(x[:cap])
    y = np.column_stack([m.y_raw for m in source_models])
    feasible = problem.feasible(y)
    sign = 1.0 if problem.objective.direction == "max" else -1.0
    value = sign * y[:, problem.objective_index]
    rank = np.lexsort((-value, ~feasible))
    return x[rank[:cap]]


def _propose(view_fn, problem: ProblemSpec, state: BanditState, cfg: RunConfig,
             obj_sign: float, constrained: bool, seed: int,
             value_center: float, value_scale: float,
             seed_points: np.ndarray | None = None) -> np.ndarray:
    if constrained:
        cons = [view_fn(i) for i in problem.constraint_indices]
        thresholds = [problem.metrics[i].threshold for i in problem.constraint_indices]
        directions = [">=" if problem.metrics[i].direction == "max" else "<="
                      for i in problem.constraint_indices]
        raw_view = view_fn(problem.objective_index)
    else:
        cons, thresholds, directions = [], [], []
        raw_view = view_fn(0)
    objective = _StandardizedObjective(raw_view, obj_sign if constrained else 1.0,
                                       value_center, value_scale)
    incumbent = None
    if state.incumbent_value is not None:
        incumbent = objective.standardize_value(state.incumbent_value)
    ctx = AcquisitionContext(objective=objective, constraints=cons,
                             thresholds=thresholds, directions=directions,
                             incumbent=incumbent, beta=cfg.ucb_beta,
                             objective_sign=1.0)
    archive = evolve(ctx.score, problem.dimension,
                     EvolutionConfig(population=cfg.population,
                                     generations=cfg.generations, seed=seed),
                     seed_points=seed_points)
    return archive.points


def _select_batch(rng, cfg: RunConfig, state: BanditState,
                  front_1: np.ndarray | None, front_2: np.ndarray,
                  x_seen: np.ndarray, d: int):
    """Split the batch between fronts by weight quota, without replacement.

    A front too small to fill its quota donates the shortfall to the other
    arm; when both are exhausted the remainder is uniform random.  Any pick
    within DUPLICATE_TOL of an already-evaluated (or already-picked) point
    is replaced by a fresh uniform sample but keeps its arm slot.
    """
    n_b = cfg.batch_size
    if cfg.transfer:
        quota_1 = int(math.floor(state.w1 / (state.w1 + state.w2) * n_b))
    else:
        quota_1 = 0
    quota_2 = n_b - quota_1

    # members indistinguishable from evaluated points are dropped up front:
    # re-running a deterministic evaluation wastes budget, and swapping such
    # picks for uniform noise would starve refinement around the incumbent
    if front_1 is not None:
        front_1 = _drop_evaluated(front_1, x_seen)
    front_2 = _drop_evaluated(front_2, x_seen)

    size_1 = 0 if front_1 is None else len(front_1)
    take_1 = min(quota_1, size_1)
    take_2 = min(quota_2, len(front_2))
    spill = n_b - take_1 - take_2
    if spill > 0 and size_1 > take_1:
        extra = min(spill, size_1 - take_1)
        take_1 += extra
        spill -= extra
    if spill > 0 and len(front_2) > take_2:
        extra = min(spill, len(front_2) - take_2)
        take_2 += extra
        spill -= extra

    picks_1 = _draw(rng, front_1, take_1) if front_1 is not None else np.zeros((0, d))
    picks_2 = _draw(rng, front_2, take_2)
    picks_rand = rng.uniform(size=(spill, d)) if spill > 0 else np.zeros((0, d))

    seen = [x_seen]
    out = []
    for picks in (picks_1, picks_2, picks_rand):
        cleaned = picks.copy()
        for i in range(cleaned.shape[0]):
            guard = 0
            while _is_duplicate(cleaned[i], seen, out, cleaned[:i]) and guard < 100:
                cleaned[i] = rng.uniform(size=d)
                guard += 1
        out.append(cleaned)
        seen.append(cleaned)
    return out[0], out[1], out[2]


def _drop_evaluated(front: np.ndarray, x_seen: np.ndarray) -> np.ndarray:
    if len(front) == 0 or len(x_seen) == 0:
        return front
    dup = np.array([np.any(np.max(np.abs(x_seen - p), axis=1) < DUPLICATE_TOL)
                    for p in front])
    return front[~dup]


def _draw(rng, front: np.ndarray, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros((0, front.shape[1] if front.ndim == 2 else 0))
    idx = rng.choice(len(front), size=count, replace=False)
    return front[np.sort(idx)]


def _is_duplicate(point, seen_groups, done_groups, current_prefix) -> bool:
    for group in list(seen_groups) + list(done_groups) + [current_prefix]:
        if len(group) and np.any(np.max(np.abs(group - point), axis=1) < DUPLICATE_TOL):
            return True
    return False


def _evaluate_points(problem: ProblemSpec, points: np.ndarray):
    metrics = np.full((points.shape[0], len(problem.metrics)), np.nan)
    failed = np.zeros(points.shape[0], dtype=bool)
    if problem.evaluator_kind == "analytic":
        metrics[:] = evaluate(problem, points)
        return metrics, failed
    for i, row in enumerate(points):
        try:
            metrics[i] = evaluate(problem, row)
        except EvaluationError:
            failed[i] = True
    return metrics, failed


def _make_batch(problem: ProblemSpec, points, metrics, failed, obj_sign,
                fom_spec, mode) -> EvaluatedBatch:
    if mode == MODE_FOM:
        values = np.asarray(compute_fom(metrics, fom_spec), dtype=np.float64)
        values[failed] = -math.inf
        feasible = np.isfinite(values)
    else:
        values = obj_sign * metrics[:, problem.objective_index]
        feasible = problem.feasible(metrics) & ~failed
    violations = constraint_violation(problem, metrics)
    return EvaluatedBatch(points=np.atleast_2d(points), values=values,
                          feasible=feasible, violations=violations)


def _append_rows(rows: list, iteration: int, arm: str, batch: EvaluatedBatch,
                 problem: ProblemSpec, metrics: np.ndarray) -> None:
    running = rows[-1].incumbent if rows else None
    for i in range(len(batch.values)):
        value = batch.values[i]
        if batch.feasible[i] and np.isfinite(value):
            if running is None or value > running:
                running = float(value)
        rows.append(TraceRow(iteration=iteration, arm=arm,
                             point=batch.points[i].copy(),
                             metrics=metrics[i].copy(),
                             feasible=bool(batch.feasible[i]),
                             value=float(value), incumbent=running))


# ---------------------------------------------------------------------------
# trace and checkpoint IO
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def trace_header(problem: ProblemSpec) -> list[str]:
    return (["iteration", "arm"]
            + [f"x{i}" for i in range(problem.dimension)]
            + [f"m_{m.name}" for m in problem.metrics]
            + ["feasible", "objective", "incumbent"])


def write_trace(path: str, result: RunResult, problem: ProblemSpec) -> None:
    """CSV trace: one row per evaluation, deterministic byte-for-byte."""
    lines = [",".join(trace_header(problem))]
    for r in result.rows:
        cells = [str(r.iteration), r.arm]
        cells += [_fmt(v) for v in r.point]
        cells += [_fmt(v) for v in r.metrics]
        cells.append("true" if r.feasible else "false")
        cells.append(_fmt(r.value))
        cells.append("" if r.incumbent is None else _fmt(r.incumbent))
        lines.append(",".join(cells))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path: str) -> dict:
    """Parse a trace CSV into columns (floats where possible)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    cols: dict[str, list] = {h: [] for h in header}
    for row in rows:
        for h, cell in zip(header, row):
            cols[h].append(cell)
    out: dict[str, np.ndarray] = {}
    for h, cells in cols.items():
        if h == "arm":
            out[h] = np.asarray(cells)
        elif h == "feasible":
            out[h] = np.asarray([c == "true" for c in cells])
        elif h == "incumbent":
            out[h] = np.asarray([math.nan if c == "" else float(c) for c in cells])
        elif h == "iteration":
            out[h] = np.asarray([int(c) for c in cells])
        else:
            out[h] = np.asarray([float(c) for c in cells])
    return out


def evaluations_to_reach(incumbent: np.ndarray, level: float) -> int | None:
    """1-based index of the first evaluation whose incumbent reaches level."""
    ok = np.flatnonzero(np.nan_to_num(incumbent, nan=-math.inf) >= level)
    return int(ok[0]) + 1 if ok.size else None


def _save_run_checkpoint(path, rng, state, rows, x_all, metrics_all, failed_all,
                         surrogates=None, transfer_model=None):
    payload = {
        "format_version": 1,
        "kind": "run-checkpoint",
        "rng_state": rng.bit_generator.state,
        "state": state.to_dict(),
        "x": x_all.tolist(),
        "metrics": metrics_all.tolist(),
        "failed": failed_all.tolist(),
        "rows": [{"iteration": r.iteration, "arm": r.arm,
                  "point": r.point.tolist(), "metrics": r.metrics.tolist(),
                  "feasible": r.feasible, "value": r.value,
                  "incumbent": r.incumbent} for r in rows],
        "surrogates": None if surrogates is None or surrogates.models is None
        else [gp_to_dict(m) for m in surrogates.models],
        "transfer_model": None if transfer_model is None
        else transfer_to_dict(transfer_model),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def _load_run_checkpoint(path, problem):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != "run-checkpoint":
        raise RunConfigError(f"not a run checkpoint: {path}")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = payload["rng_state"]
    state = BanditState.from_dict(payload["state"])
    rows = [TraceRow(iteration=r["iteration"], arm=r["arm"],
                     point=np.asarray(r["point"]),
                     metrics=np.asarray(r["metrics"]),
                     feasible=r["feasible"], value=r["value"],
                     incumbent=r["incumbent"]) for r in payload["rows"]]
    x = np.asarray(payload["x"]).reshape(-1, problem.dimension)
    metrics = np.asarray(payload["metrics"]).reshape(-1, len(problem.metrics))
    failed = np.asarray(payload["failed"], dtype=bool)
    surrogate_models = None
    if payload.get("surrogates") is not None:
        surrogate_models = [gp_from_dict(d) for d in payload["surrogates"]]
    t_model = None
    if payload.get("transfer_model") is not None:
        t_model = transfer_from_dict(payload["transfer_model"])
    return rng, state, rows, x, metrics, failed, (surrogate_models, t_model)
