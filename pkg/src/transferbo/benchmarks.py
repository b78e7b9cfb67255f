"""Synthetic constrained benchmark problems and the evaluation contract.

Problems are smooth analytic stand-ins for circuit-sizing tasks: each
metric is a sum of a bowl, a linear trend, a saturating ramp, and mild
sinusoidal ripple over the unit cube.  A family ships several variants
(``target``, ``source``, ``adversarial``) that differ by a declared input
shift and per-metric output scale/offset, emulating a change of technology
or topology: the source optimum sits at the target optimum minus the shift.

Design points are handled on the unit cube; physical box bounds exist for
declaration/IO and for external evaluators, which speak physical units over
a line-delimited JSON protocol (one request/response pair per evaluation):

    stdin:  {"x": [..physical coords..]}\n
    stdout: {"metrics": {"name": value, ...}}\n
"""

from __future__ import annotations

import json
import os
import selectors
import subprocess
from dataclasses import dataclass, field

import numpy as np


class SpecError(ValueError):
    """A problem or FOM specification is invalid."""


class EvaluationError(RuntimeError):
    """Evaluating a design point failed."""


class EvaluationTimeout(EvaluationError):
    """The external evaluator did not answer in time."""


class MalformedResponseError(EvaluationError):
    """The external evaluator answered with something unparseable or non-finite."""


class MissingMetricError(EvaluationError):
    """The external evaluator omitted a declared metric."""


# ---------------------------------------------------------------------------
# metric functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothMetric:
    """offset + lin.u + quad * mean((u-c)^2) + ripple + sat * tanh(2(s.u - m))"""

    offset: float
    lin: np.ndarray
    quad_weight: float
    quad_center: np.ndarray
    sin_amp: np.ndarray
    sin_freq: np.ndarray
    sin_phase: np.ndarray
    sat_weight: float
    sat_dir: np.ndarray
    sat_mid: float

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        quad = ((u - self.quad_center) ** 2).mean(axis=1)
        ripple = np.sin(2 * np.pi * self.sin_freq * u + self.sin_phase) @ self.sin_amp
        sat = np.tanh(2.0 * (u @ self.sat_dir - self.sat_mid))
        return (self.offset + u @ self.lin + self.quad_weight * quad
                + ripple + self.sat_weight * sat)

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothMetric":
        arrays = {"lin", "quad_center", "sin_amp", "sin_freq", "sin_phase", "sat_dir"}
        return cls(**{k: (np.asarray(v, dtype=np.float64) if k in arrays else float(v))
                      for k, v in d.items()})


def _ripple(rng: np.random.Generator, d: int, amp: float) -> tuple[np.ndarray, ...]:
    amps = amp / d * rng.uniform(0.5, 1.0, size=d)
    freqs = rng.choice([0.5, 1.0, 1.5], size=d)
    phases = rng.uniform(0, 2 * np.pi, size=d)
    return amps, freqs, phases


def _metric(rng, d, offset, lin=None, quad=0.0, center=0.5, ripple=0.0,
            sat=0.0, sat_dims=None, sat_mid=0.5) -> SmoothMetric:
    lin_vec = np.zeros(d) if lin is None else np.asarray(lin, dtype=np.float64)
    center_vec = np.full(d, center) if np.isscalar(center) else np.asarray(center)
    amps, freqs, phases = _ripple(rng, d, ripple) if ripple else (np.zeros(d),) * 3
    sat_dir = np.zeros(d)
    if sat and sat_dims is not None:
        sat_dir[list(sat_dims)] = 1.0 / len(sat_dims)
    return SmoothMetric(offset=float(offset), lin=lin_vec, quad_weight=float(quad),
                        quad_center=center_vec, sin_amp=amps,
                        sin_freq=freqs if ripple else np.ones(d),
                        sin_phase=phases, sat_weight=float(sat),
                        sat_dir=sat_dir, sat_mid=float(sat_mid))


# ---------------------------------------------------------------------------
# problem specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSpec:
    name: str
    unit: str
    direction: str              # "max" or "min"
    threshold: float | None = None   # constraint level, None = unconstrained

    def __post_init__(self):
        if self.direction not in ("max", "min"):
            raise SpecError(f"metric {self.name}: direction must be max|min")
        if self.threshold is not None and not np.isfinite(self.threshold):
            raise SpecError(f"metric {self.name}: threshold must be finite")


@dataclass(frozen=True)
class FomSpec:
    """Weighted clipped-normalized scalarization parameters, one per metric."""

    weights: np.ndarray    # +1 maximize, -1 minimize
    bounds: np.ndarray     # clip level per metric
    fmin: np.ndarray
    fmax: np.ndarray

    def __post_init__(self):
        if np.any(self.fmax <= self.fmin):
            bad = int(np.argmax(self.fmax <= self.fmin))
            raise SpecError(f"degenerate metric range at index {bad}: "
                            f"max {self.fmax[bad]} <= min {self.fmin[bad]}")

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bounds": self.bounds.tolist(),
                "fmin": self.fmin.tolist(), "fmax": self.fmax.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FomSpec":
        return cls(**{k: np.asarray(d[k], dtype=np.float64)
                      for k in ("weights", "bounds", "fmin", "fmax")})


@dataclass(frozen=True)
class AnalyticFamily:
    """Per-metric smooth functions plus the variant transform parameters."""

    metrics: tuple[SmoothMetric, ...]
    input_shift: np.ndarray        # added to unit coords before the base eval
    output_scale: np.ndarray       # per metric
    output_offset: np.ndarray      # per metric

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=np.float64)) + self.input_shift
        cols = [m(u) for m in self.metrics]
        return np.column_stack(cols) * self.output_scale + self.output_offset

    def to_dict(self) -> dict:
        return {"metrics": [m.to_dict() for m in self.metrics],
                "input_shift": self.input_shift.tolist(),
                "output_scale": self.output_scale.tolist(),
                "output_offset": self.output_offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticFamily":
        return cls(metrics=tuple(metric_from_dict(m) for m in d["metrics"]),
                   input_shift=np.asarray(d["input_shift"], dtype=np.float64),
                   output_scale=np.asarray(d["output_scale"], dtype=np.float64),
                   output_offset=np.asarray(d["output_offset"], dtype=np.float64))


@dataclass(frozen=True)
class SubprocessDescriptor:
    command: tuple[str, ...]
    timeout: float = 30.0


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    metrics: tuple[MetricSpec, ...]
    objective_index: int
    family: AnalyticFamily | None = None
    subprocess_desc: SubprocessDescriptor | None = None
    variant: str = "target"

    def __post_init__(self):
        if not (0 <= self.objective_index < len(self.metrics)):
            raise SpecError("objective index out of range")
        if self.metrics[self.objective_index].threshold is not None:
            raise SpecError("the objective metric must not carry a threshold")
        if sum(m.threshold is None for m in self.metrics) != 1:
            raise SpecError("exactly one metric (the objective) may be unconstrained")
        if np.any(self.upper <= self.lower):
            raise SpecError("upper bounds must exceed lower bounds")
        if (self.family is None) == (self.subprocess_desc is None):
            raise SpecError("exactly one evaluator (analytic or subprocess) required")

    @property
    def evaluator_kind(self) -> str:
        return "analytic" if self.family is not None else "subprocess"

    @property
    def objective(self) -> MetricSpec:
        return self.metrics[self.objective_index]

    @property
    def constraint_indices(self) -> list[int]:
        return [i for i, m in enumerate(self.metrics) if m.threshold is not None]

    @property
    def metric_names(self) -> list[str]:
        return [m.name for m in self.metrics]

    def to_physical(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u) * (self.upper - self.lower)

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.lower) / (self.upper - self.lower)

    def feasible(self, metrics: np.ndarray) -> np.ndarray:
        """Row-wise feasibility of raw metric vectors."""
        metrics = np.atleast_2d(metrics)
        ok = np.ones(metrics.shape[0], dtype=bool)
        for i in self.constraint_indices:
            m = self.metrics[i]
            if m.direction == "max":
                ok &= metrics[:, i] > m.threshold
            else:
                ok &= metrics[:, i] < m.threshold
        ok &= np.isfinite(metrics).all(axis=1)
        return ok


def evaluate(problem: ProblemSpec, u: np.ndarray) -> np.ndarray:
    """Metric matrix for unit-cube points; (n_metrics,) for a single point."""
    single = np.asarray(u).ndim == 1
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if u.shape[1] != problem.dimension:
        raise SpecError(f"expected dimension {problem.dimension}, got {u.shape[1]}")
    if np.any(u < -1e-12) or np.any(u > 1 + 1e-12):
        raise SpecError("design point outside the unit box")
    if problem.family is not None:
        out = problem.family.evaluate(u)
    else:
        runner = _get_worker(problem.subprocess_desc)
        rows = [runner.evaluate(problem.to_physical(row), problem.metric_names)
                for row in u]
        out = np.vstack(rows)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# FOM spec construction
# ---------------------------------------------------------------------------

def build_fom_spec(problem: ProblemSpec, n_samples: int = 1000, seed: int = 0,
                   cache_dir: str | None = None) -> FomSpec:
    """Empirical normalization ranges from uniform random samples.

    Results are cached on disk keyed by (problem, n, seed) when a cache
    directory is given.
    """
    if n_samples < 100:
        raise SpecError("FOM normalization needs at least 100 samples")
    cache_path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        cache_path = os.path.join(
            cache_dir, f"fom_{problem.name}_{problem.variant}_{n_samples}_{seed}.json")
        if os.path.exists(cache_path):
            with open(cache_path) as fh:
                return FomSpec.from_dict(json.load(fh))
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(n_samples, problem.dimension))
    values = evaluate(problem, u)
    fmin = values.min(axis=0)
    fmax = values.max(axis=0)
    if np.any(fmax - fmin < 1e-12):
        bad = problem.metrics[int(np.argmax(fmax - fmin < 1e-12))].name
        raise SpecError(f"metric {bad!r} is constant over the sampled box")
    weights = np.array([1.0 if m.direction == "max" else -1.0 for m in problem.metrics])
    spec = FomSpec(weights=weights, bounds=fmax.copy(), fmin=fmin, fmax=fmax)
    if cache_path is not None:
        with open(cache_path, "w") as fh:
            json.dump(spec.to_dict(), fh)
    return spec


# ---------------------------------------------------------------------------
# subprocess evaluator
# ---------------------------------------------------------------------------

class SubprocessWorker:
    """One external evaluator child speaking the line-delimited protocol.

    The child is started lazily and reused across calls (the protocol is
    stateless per line).  A timeout kills and reaps the child; the next
    call starts a fresh one.
    """

    def __init__(self, desc: SubprocessDescriptor):
        self.desc = desc
        self.proc: subprocess.Popen | None = None

    def _ensure_child(self):
        if self.proc is None or self.proc.poll() is not None:
            self.proc = subprocess.Popen(
                list(self.desc.command), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, text=True, bufsize=1)

    def close(self):
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()
        self.proc = None

    def _read_line_with_timeout(self) -> str:
        sel = selectors.DefaultSelector()
        sel.register(self.proc.stdout, selectors.EVENT_READ)
        try:
            if not sel.select(timeout=self.desc.timeout):
                self.close()
                raise EvaluationTimeout(
                    f"evaluator gave no response within {self.desc.timeout}s")
        finally:
            sel.close()
        return self.proc.stdout.readline()

    def evaluate(self, x_physical: np.ndarray, metric_names: list[str]) -> np.ndarray:
        self._ensure_child()
        request = json.dumps({"x": [float(v) for v in np.asarray(x_physical)]})
        try:
            self.proc.stdin.write(request + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.close()
            raise EvaluationError(f"evaluator pipe failed: {exc}") from exc
        line = self._read_line_with_timeout()
        if not line:
            self.close()
            raise MalformedResponseError("evaluator closed its output stream; "
                                         f"request was {request!r}")
        try:
            payload = json.loads(line)
            metrics = payload["metrics"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedResponseError(
                f"unparseable evaluator response {line!r}") from exc
        values = []
        for name in metric_names:
            if name not in metrics:
                raise MissingMetricError(
                    f"metric {name!r} missing from response {line!r}")
            v = metrics[name]
            if not isinstance(v, (int, float)) or not np.isfinite(v):
                raise MalformedResponseError(
                    f"metric {name!r} is non-finite in response {line!r}")
            values.append(float(v))
        return np.asarray(values)


_WORKERS: dict[tuple, SubprocessWorker] = {}


def _get_worker(desc: SubprocessDescriptor) -> SubprocessWorker:
    key = (desc.command, desc.timeout)
    if key not in _WORKERS:
        _WORKERS[key] = SubprocessWorker(desc)
    return _WORKERS[key]


def shutdown_workers() -> None:
    for worker in _WORKERS.values():
        worker.close()
    _WORKERS.clear()


# ---------------------------------------------------------------------------
# problem IO
# ---------------------------------------------------------------------------

def problem_to_dict(problem: ProblemSpec) -> dict:
    d = {
        "name": problem.name,
        "variant": problem.variant,
        "dimension": problem.dimension,
        "lower": problem.lower.tolist(),
        "upper": problem.upper.tolist(),
        "objective_index": problem.objective_index,
        "metrics": [{"name": m.name, "unit": m.unit, "direction": m.direction,
                     "threshold": m.threshold} for m in problem.metrics],
    }
    if problem.family is not None:
        d["family"] = problem.family.to_dict()
    else:
        d["subprocess"] = {"command": list(problem.subprocess_desc.command),
                           "timeout": problem.subprocess_desc.timeout}
    return d


def problem_from_dict(d: dict) -> ProblemSpec:
    family = AnalyticFamily.from_dict(d["family"]) if "family" in d else None
    sub = None
    if "subprocess" in d:
        sub = SubprocessDescriptor(command=tuple(d["subprocess"]["command"]),
                                   timeout=d["subprocess"]["timeout"])
    return ProblemSpec(
        name=d["name"], variant=d.get("variant", "target"),
        dimension=d["dimension"],
        lower=np.asarray(d["lower"], dtype=np.float64),
        upper=np.asarray(d["upper"], dtype=np.float64),
        metrics=tuple(MetricSpec(m["name"], m["unit"], m["direction"],
                                 m["threshold"]) for m in d["metrics"]),
        objective_index=d["objective_index"],
        family=family, subprocess_desc=sub)


def save_problem(path: str, problem: ProblemSpec) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh, indent=1)


def load_problem(path: str) -> ProblemSpec:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# shipped families
# ---------------------------------------------------------------------------

def _variant_arrays(n_metrics: int, d: int, variant: str,
                    shift: np.ndarray, scale: np.ndarray,
                    offset: np.ndarray, objective_index: int):
    if variant == "target":
        return np.zeros(d), np.ones(n_metrics), np.zeros(n_metrics)
    if variant == "source":
        return shift, scale, offset
    if variant == "adversarial":
        s = scale.copy()
        o = offset.copy()
        s[objective_index] = -1.0
        o[objective_index] = 0.0
        return shift, s, o
    raise SpecError(f"unknown variant {variant!r}")


def _two_stage_analog(variant: str) -> ProblemSpec:
    d = 10
    rng = np.random.default_rng(20101)
    bowl_center = np.array([0.78, 0.74, 0.77, 0.73, 0.78,
                            0.30, 0.45, 0.40, 0.48, 0.38])
    current = _metric(rng, d, offset=55.0, quad=350.0, center=bowl_center, ripple=4.0)
    pm = _metric(rng, d, offset=58.0, ripple=3.0,
                 sat=36.0, sat_dims=range(0, 5), sat_mid=0.70)
    gbw = _metric(rng, d, offset=5.0, quad=-14.0,
                  center=np.array([0.5] * 3 + [0.55] * 4 + [0.5] * 3), ripple=0.35)
    gain = _metric(rng, d, offset=52.0,
                   lin=np.array([0.0] * 6 + [6.5] * 4), ripple=2.5)
    metrics = (
        MetricSpec("current", "uA-analog", "min", None),
        MetricSpec("pm", "deg-analog", "max", 60.0),
        MetricSpec("gbw", "MHz-analog", "max", 4.0),
        MetricSpec("gain", "dB-analog", "max", 60.0),
    )
    shift = np.array([0.04, -0.04, 0.04, -0.04, 0.04, -0.04, 0.04, -0.04, 0.04, -0.04])
    scale = np.array([1.15, 1.0, 1.0, 1.0])
    offset = np.array([6.0, 0.0, 0.0, 0.0])
    ishift, oscale, ooffset = _variant_arrays(4, d, variant, shift, scale, offset, 0)
    return ProblemSpec(
        name="two_stage_analog", variant=variant, dimension=d,
        lower=np.concatenate([np.full(4, 0.18e-6), [1e-12, 5e3], np.full(4, 1e-5)]),
        upper=np.concatenate([np.full(4, 2.0e-6), [8e-12, 5e4], np.full(4, 4e-4)]),
        metrics=metrics, objective_index=0,
        family=AnalyticFamily(metrics=(current, pm, gbw, gain),
                              input_shift=ishift, output_scale=oscale,
                              output_offset=ooffset))


def _three_stage_analog(variant: str) -> ProblemSpec:
    d = 12
    rng = np.random.default_rng(30303)
    current = _metric(rng, d, offset=230.0, quad=520.0, center=0.2, ripple=12.0)
    pm = _metric(rng, d, offset=56.0, ripple=2.5,
                 sat=30.0, sat_dims=range(0, 6), sat_mid=0.72)
    gbw = _metric(rng, d, offset=3.1, quad=-9.0,
                  center=np.array([0.5] * 4 + [0.6] * 4 + [0.5] * 4), ripple=0.25)
    gain = _metric(rng, d, offset=74.0,
                   lin=np.array([0.0] * 8 + [9.0] * 4), ripple=2.0)
    metrics = (
        MetricSpec("current", "uA-analog", "min", None),
        MetricSpec("pm", "deg-analog", "max", 60.0),
        MetricSpec("gbw", "MHz-analog", "max", 2.0),
        MetricSpec("gain", "dB-analog", "max", 80.0),
    )
    shift = np.full(d, 0.05) * np.where(np.arange(d) % 2 == 0, 1.0, -1.0)
    scale = np.array([1.25, 1.0, 1.0, 1.0])
    offset = np.array([30.0, 0.0, 0.0, 0.0])
    ishift, oscale, ooffset = _variant_arrays(4, d, variant, shift, scale, offset, 0)
    return ProblemSpec(
        name="three_stage_analog", variant=variant, dimension=d,
        lower=np.concatenate([np.full(6, 0.18e-6), [1e-12, 1e-12], np.full(4, 1e-5)]),
        upper=np.concatenate([np.full(6, 2.0e-6), [9e-12, 9e-12], np.full(4, 5e-4)]),
        metrics=metrics, objective_index=0,
        family=AnalyticFamily(metrics=(current, pm, gbw, gain),
                              input_shift=ishift, output_scale=oscale,
                              output_offset=ooffset))


def _bandgap_analog(variant: str) -> ProblemSpec:
    d = 6
    rng = np.random.default_rng(60606)
    tc = _metric(rng, d, offset=9.0, quad=55.0, center=0.62, ripple=1.2)
    i_total = _metric(rng, d, offset=3.0,
                      lin=np.array([2.4, 2.4, 2.4, 0.0, 0.0, 0.0]), ripple=0.3)
    psrr = _metric(rng, d, offset=42.0,
                   lin=np.array([0.0, 0.0, 0.0, 6.8, 6.8, 6.8]), ripple=1.5)
    metrics = (
        MetricSpec("tc", "ppm_per_C-analog", "min", None),
        MetricSpec("i_total", "uA-analog", "min", 6.0),
        MetricSpec("psrr", "dB-analog", "max", 50.0),
    )
    shift = np.array([0.05, -0.05, 0.05, -0.05, 0.05, -0.05])
    scale = np.array([1.2, 1.0, 1.0])
    offset = np.array([2.0, 0.0, 0.0])
    ishift, oscale, ooffset = _variant_arrays(3, d, variant, shift, scale, offset, 0)
    return ProblemSpec(
        name="bandgap_analog", variant=variant, dimension=d,
        lower=np.concatenate([np.full(3, 0.3e-6), np.full(3, 1e3)]),
        upper=np.concatenate([np.full(3, 3.0e-6), np.full(3, 9e4)]),
        metrics=metrics, objective_index=0,
        family=AnalyticFamily(metrics=(tc, i_total, psrr),
                              input_shift=ishift, output_scale=oscale,
                              output_offset=ooffset))


def _branin_like(u: np.ndarray) -> np.ndarray:
    """Classic two-dimensional three-basin valley function on the unit box."""
    x1 = -5.0 + 15.0 * u[:, 0]
    x2 = 15.0 * u[:, 1]
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5 / np.pi
    r, s, t = 6.0, 10.0, 1 / (8 * np.pi)
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s


class _BraninObjective(SmoothMetric):
    """Valley objective; keeps the SmoothMetric interface for serialization."""

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.offset + _branin_like(np.atleast_2d(u))

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["builtin"] = "branin"
        return d


def _make_branin_metric(offset: float = 30.0) -> SmoothMetric:
    zeros = np.zeros(2)
    return _BraninObjective(offset=offset, lin=zeros, quad_weight=0.0,
                            quad_center=zeros, sin_amp=zeros,
                            sin_freq=np.ones(2), sin_phase=zeros,
                            sat_weight=0.0, sat_dir=zeros, sat_mid=0.5)


def metric_from_dict(d: dict) -> SmoothMetric:
    if d.get("builtin") == "branin":
        return _make_branin_metric(offset=d.get("offset", 30.0))
    return SmoothMetric.from_dict(d)


def _constrained_branin_2d(variant: str) -> ProblemSpec:
    loss = _make_branin_metric()
    margin = SmoothMetric(
        offset=60.0, lin=np.zeros(2), quad_weight=0.0,
        quad_center=np.full(2, 0.5), sin_amp=np.array([6.0, 45.0]),
        sin_freq=np.array([1.0, 1.0 / 0.9]), sin_phase=np.array([0.0, -np.pi * 0.55 / 0.45]),
        sat_weight=0.0, sat_dir=np.zeros(2), sat_mid=0.5)
    metrics = (
        MetricSpec("loss", "value-analog", "min", None),
        MetricSpec("margin", "deg-analog", "max", 60.0),
    )
    shift = np.array([0.05, -0.05])
    scale = np.array([1.2, 1.0])
    offset = np.array([3.0, 0.0])
    ishift, oscale, ooffset = _variant_arrays(2, 2, variant, shift, scale, offset, 0)
    return ProblemSpec(
        name="constrained_branin_2d", variant=variant, dimension=2,
        lower=np.array([-5.0, 0.0]), upper=np.array([10.0, 15.0]),
        metrics=metrics, objective_index=0,
        family=AnalyticFamily(metrics=(loss, margin), input_shift=ishift,
                              output_scale=oscale, output_offset=ooffset))


_FAMILIES = {
    "two_stage_analog": _two_stage_analog,
    "three_stage_analog": _three_stage_analog,
    "bandgap_analog": _bandgap_analog,
    "constrained_branin_2d": _constrained_branin_2d,
}


def make_problem(name: str, variant: str = "target") -> ProblemSpec:
    if name not in _FAMILIES:
        raise SpecError(f"unknown problem {name!r}; known: {sorted(_FAMILIES)}")
    return _FAMILIES[name](variant)


def problem_names() -> list[str]:
    return sorted(_FAMILIES)
