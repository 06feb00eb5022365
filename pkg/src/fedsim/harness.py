"""Assemble objective, schedule and algorithm from a config; run and record.

A trace file is JSON lines: one :class:`~fedsim.core.MetricRecord` per
``eval_every`` rounds followed by a single footer line ``{"footer": {...}}``.
The only non-deterministic field is ``wall_ms``; :func:`trace_digest` hashes
everything else, so reruns of one config produce equal digests.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import analysis
from .algorithms import (
    fedavg_round,
    fedlaavg_round,
    fedlaavg_step,
    fedsgd_step,
    init_fedlaavg,
    seqsgd_round,
    seqsgd_steps_per_round,
)
from .availability import (
    Alternating,
    AlwaysOn,
    Custom,
    Schedule,
    SleepWindow,
    diurnal_from_labels,
    load_custom_schedule,
    validate_min_availability,
)
from .core import BoundInputs, MetricRecord, RangeError, RunConfig, SchemaError, derive_stream, resolve_learning_rate
from .objectives import (
    LogisticProblem,
    QuadraticProblem,
    load_csv_dataset,
    partition_by_label,
    partition_label_skew,
    partition_synthetic,
    sleep_window_positive_share,
)

_TOP_KEYS = {
    "algorithm": "algorithm",
    "clients": "num_clients",
    "select_frac": "select_frac",
    "local_iters": "local_iters",
    "rounds": "rounds",
    "lr": "learning_rate",
    "seed": "master_seed",
    "prox_mu": "prox_mu",
    "batch_size": "batch_size",
    "eval_every": "eval_every",
    "strict_selection": "strict_selection",
    "objective": "objective",
    "availability": "availability",
    "output": "output_path",
}
_REQUIRED = ("algorithm", "clients", "select_frac", "local_iters", "rounds", "lr", "objective", "availability")

_OBJECTIVE_KEYS = {
    "quadratic": {"kind", "means", "noise_sigma", "x0"},
    "logistic": {
        "kind", "num_classes", "dim", "total_samples", "sample_sigma", "center_scale", "csv", "data_seed",
    },
}
_AVAILABILITY_KEYS = {
    "always_on": {"kind"},
    "alternating": {"kind", "t1", "t2", "group1", "group2"},
    "diurnal": {"kind", "block_len", "D"},
    "sleep_window": {"kind", "rounds_per_day", "alpha"},
    "custom": {"kind", "path", "rows"},
}


def _check_section(doc: Any, name: str, allowed: dict[str, set[str]]) -> dict[str, Any]:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise SchemaError(name, "must be an object with a 'kind'")
    kind = doc["kind"]
    if kind not in allowed:
        raise SchemaError(f"{name}.kind", f"unknown kind {kind!r}")
    for key in doc:
        if key not in allowed[kind]:
            raise SchemaError(f"{name}.{key}", f"not a valid key for kind {kind!r}")
    return dict(doc)


def config_from_dict(doc: dict[str, Any]) -> RunConfig:
    if not isinstance(doc, dict):
        raise SchemaError("<root>", "config must be a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise SchemaError(key, "unknown key")
    for key in _REQUIRED:
        if key not in doc:
            raise SchemaError(key, "missing required key")
    kwargs = {_TOP_KEYS[k]: v for k, v in doc.items()}
    types = {
        "num_clients": int, "local_iters": int, "rounds": int, "batch_size": int,
        "eval_every": int, "master_seed": int, "select_frac": (int, float), "prox_mu": (int, float),
        "strict_selection": bool, "algorithm": str, "learning_rate": (int, float, str),
    }
    inverse = {v: k for k, v in _TOP_KEYS.items()}
    for name, typ in types.items():
        if name in kwargs:
            value = kwargs[name]
            if isinstance(value, bool) and typ is not bool:
                raise SchemaError(inverse[name], "expected a number, got a boolean")
            if not isinstance(value, typ):
                raise SchemaError(inverse[name], f"wrong type {type(value).__name__}")
    kwargs["objective"] = _check_section(doc["objective"], "objective", _OBJECTIVE_KEYS)
    kwargs["availability"] = _check_section(doc["availability"], "availability", _AVAILABILITY_KEYS)
    if isinstance(kwargs["learning_rate"], int):
        kwargs["learning_rate"] = float(kwargs["learning_rate"])
    if "prox_mu" not in kwargs and doc["algorithm"] == "fedprox":
        # 1.0 for the convex objectives, 0.01 otherwise
        kwargs["prox_mu"] = 1.0 if kwargs["objective"]["kind"] in ("quadratic", "logistic") else 0.01
    kwargs["select_frac"] = float(kwargs["select_frac"])
    kwargs.setdefault("prox_mu", 0.0)
    kwargs["prox_mu"] = float(kwargs["prox_mu"])
    return RunConfig(**kwargs)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<document>", f"invalid JSON: {exc}") from None
    return config_from_dict(doc)


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    inverse = {v: k for k, v in _TOP_KEYS.items()}
    d = asdict(config)
    d.pop("extra")
    return {inverse[k]: v for k, v in d.items() if not (k == "output_path" and v is None)}


# --------------------------------------------------------------------------
# assembly


def _quadratic_means(spec: dict[str, Any], N: int) -> tuple[float, ...]:
    means = [float(m) for m in spec["means"]]
    if not means:
        raise SchemaError("objective.means", "must be non-empty")
    if N % len(means):
        raise RangeError(f"{N} clients cannot be split into {len(means)} equal mean groups")
    per = N // len(means)
    return tuple(means[i // per] for i in range(N))


def _sleep_starts(config: RunConfig) -> tuple[int, ...]:
    spec = config.availability
    schedule = SleepWindow.random(
        config.num_clients, int(spec["rounds_per_day"]), derive_stream(config.master_seed, "windows")
    )
    return schedule.window_starts


def build_problem(config: RunConfig):
    spec = config.objective
    N = config.num_clients
    if spec["kind"] == "quadratic":
        if "means" not in spec:
            raise SchemaError("objective.means", "missing required key")
        return QuadraticProblem(_quadratic_means(spec, N), float(spec.get("noise_sigma", 0.0)), float(spec.get("x0", 0.0)))
    data_seed = int(spec.get("data_seed", config.master_seed))
    stream = derive_stream(data_seed, "data")
    opts = dict(
        dim=int(spec.get("dim", 20)),
        sample_sigma=float(spec.get("sample_sigma", 1.0)),
        center_scale=float(spec.get("center_scale", 3.0)),
    )
    total = int(spec.get("total_samples", 100 * N))
    if "csv" in spec:
        features, labels = load_csv_dataset(spec["csv"])
        num_classes = int(spec.get("num_classes", labels.max() + 1))
        datasets = partition_by_label(features, labels, N, stream)
    elif config.availability["kind"] == "sleep_window":
        num_classes = int(spec.get("num_classes", 2))
        if num_classes != 2:
            raise RangeError("sleep-window label skew needs a binary task (num_classes = 2)")
        share = sleep_window_positive_share(
            _sleep_starts(config), int(config.availability["rounds_per_day"]), float(config.availability.get("alpha", 0.0))
        )
        datasets = partition_label_skew(share, total, stream, **opts)
    else:
        num_classes = int(spec.get("num_classes", 10))
        datasets = partition_synthetic(N, num_classes, total, stream, **opts)
    return LogisticProblem(datasets, num_classes, config.batch_size)


def build_schedule(config: RunConfig, problem) -> Schedule:
    spec = config.availability
    N = config.num_clients
    kind = spec["kind"]
    if kind == "always_on":
        return AlwaysOn(N)
    if kind == "alternating":
        if "group1" in spec:
            g1 = frozenset(int(i) for i in spec["group1"])
            g2 = frozenset(int(i) for i in spec.get("group2", set(range(1, N + 1)) - g1))
        else:
            g1 = frozenset(range(1, N // 2 + 1))
            g2 = frozenset(range(N // 2 + 1, N + 1))
        return Alternating(int(spec["t1"]), int(spec["t2"]), g1, g2)
    if kind == "diurnal":
        return diurnal_from_labels(int(spec["block_len"]), problem.client_labels(), int(spec.get("D", 1)))
    if kind == "sleep_window":
        return SleepWindow(int(spec["rounds_per_day"]), _sleep_starts(config))
    if "path" in spec:
        schedule = load_custom_schedule(spec["path"])
    elif "rows" in spec:
        schedule = Custom(np.array([[c == "1" for c in row] for row in spec["rows"]], dtype=bool))
    else:
        raise SchemaError("availability.path", "custom schedules need 'path' or 'rows'")
    if schedule.num_clients != N:
        raise RangeError(f"custom schedule covers {schedule.num_clients} clients, config has {N}")
    return schedule


# --------------------------------------------------------------------------
# running


@dataclass
class TraceFile:
    records: list[MetricRecord]
    footer: dict[str, Any]
    bound_reports: list[dict[str, Any]] = field(default_factory=list)
    path: Path | None = None

    def lines(self) -> list[str]:
        out = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        out.append(json.dumps({"footer": self.footer}, sort_keys=True))
        return out

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text("\n".join(self.lines()) + "\n")
        if self.bound_reports:
            bounds_path = path.with_name(path.name + ".bounds.json")
            bounds_path.write_text(json.dumps(self.bound_reports, indent=2, sort_keys=True) + "\n")
        self.path = path
        return path


def _records_digest(records: list[MetricRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        d = r.to_dict()
        d.pop("wall_ms")
        h.update(json.dumps(d, sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def params_digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()


def trace_digest(path: str | Path) -> str:
    """SHA-256 of a trace file with the ``wall_ms`` timings removed."""
    h = hashlib.sha256()
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        d.pop("wall_ms", None)
        h.update(json.dumps(d, sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def _bound_inputs(config: RunConfig, problem, schedule: Schedule) -> BoundInputs | None:
    if not isinstance(problem, QuadraticProblem):
        return None
    c = problem.bound_constants()
    return BoundInputs(
        L=c["L"], G=c["G"], sigma=c["sigma"], B=c["B"], N=config.num_clients, K=config.K,
        E=schedule.declared_E, T=config.total_iterations, R=config.rounds, C=config.local_iters,
    )


def _learning_rate(config: RunConfig, problem, schedule: Schedule) -> float:
    if config.learning_rate == "auto":
        inputs = _bound_inputs(config, problem, schedule)
        if inputs is None:
            raise RangeError("lr 'auto' needs a quadratic objective with known smoothness")
        return resolve_learning_rate(config, inputs)
    return resolve_learning_rate(config)


def _bound_reports(config, problem, schedule, gamma, stats) -> list[dict[str, Any]]:
    if config.algorithm != "fedlaavg" or not isinstance(problem, QuadraticProblem):
        return []
    inputs = replace(_bound_inputs(config, problem, schedule), gamma=gamma)
    reports = []
    T = config.total_iterations
    if isinstance(schedule, Alternating) and problem.num_clients == 2 and problem.noise_sigma == 0 and config.local_iters == 1:
        x0, xs = problem.x0, problem.optimum[0]
        G = max(2 * abs(x0 - xs), abs(problem.means[0] - problem.means[1]))
        B0 = problem.loss(problem.initial_params()) - problem.loss(problem.optimum)
        I = max(schedule.t1, schedule.t2)
        value = analysis.theorem2_bound(T, I, G, B0)
        bound_in = {"T": T, "I": I, "G": G, "B0": B0, "gamma": gamma}
        reports.append(analysis.BoundReport("theorem2_min_iterate", bound_in, value, stats["min_sq_error"]).to_dict())
        reports.append(analysis.BoundReport("theorem2_average", bound_in, value, stats["mean_excess_loss"]).to_dict())
    try:
        if config.local_iters == 1:
            value = analysis.theorem3_bound(inputs)
            name = "theorem3"
        else:
            value = analysis.theorem4_bound_shape(inputs)
            name = "theorem4"
    except analysis.RateTooLarge:
        return reports
    bound_in = {k: v for k, v in asdict(inputs).items() if v is not None}
    bound_in["I"] = analysis.staleness_bound(inputs.N, inputs.K, inputs.E)
    reports.append(analysis.BoundReport(name, bound_in, value, stats["mean_grad_norm_sq"]).to_dict())
    return reports


def run_experiment(config: RunConfig, *, write: bool = True) -> TraceFile:
    """Execute one run and return its trace; also written to ``output_path`` if set."""
    problem = build_problem(config)
    schedule = build_schedule(config, problem)
    gamma = _learning_rate(config, problem, schedule)
    K, C, R, seed = config.K, config.local_iters, config.rounds, config.master_seed

    violations = validate_min_availability(schedule, schedule.declared_E, R) if R >= schedule.declared_E else []
    if violations:
        warnings.warn(
            f"schedule does not satisfy minimal availability with E={schedule.declared_E}; "
            f"first violation: client {violations[0][0]} at {violations[0][1]}",
            stacklevel=2,
        )

    x = problem.initial_params()
    state = caches = None
    if config.algorithm == "fedlaavg":
        state, caches = init_fedlaavg(x, problem.num_clients)
    seq_steps = seqsgd_steps_per_round(config.select_frac, config.num_clients, C)
    f_star = problem.loss(problem.optimum) if isinstance(problem, QuadraticProblem) else None

    initial_loss = problem.loss(x)
    grad_sq_sum = excess_sum = 0.0
    min_loss, min_round, min_params = initial_loss, 0, x.copy()
    records: list[MetricRecord] = []
    g = problem.gradient(x)
    loss = initial_loss
    for r in range(1, R + 1):
        tic = time.perf_counter()
        # running sums over round-start iterates x^{(r-1)C}
        grad_sq_sum += float(g @ g)
        if f_star is not None:
            excess_sum += loss - f_star
        available = schedule.available(r)
        if config.algorithm == "fedlaavg":
            if C == 1:
                outcome = fedlaavg_step(state, caches, available, problem, gamma, K, seed, config.strict_selection)
            else:
                outcome = fedlaavg_round(state, caches, available, problem, gamma, K, C, seed, config.strict_selection)
            x = state.params
            n_avail, n_sel = outcome.available_count, len(outcome)
        elif config.algorithm == "fedsgd":
            x, outcome = fedsgd_step(x, available, problem, gamma, K, seed, r, config.strict_selection)
            n_avail, n_sel = outcome.available_count, len(outcome)
        elif config.algorithm in ("fedavg", "fedprox"):
            mu = config.prox_mu if config.algorithm == "fedprox" else 0.0
            x, outcome = fedavg_round(x, available, problem, gamma, K, C, seed, r, mu, config.strict_selection)
            n_avail, n_sel = outcome.available_count, len(outcome)
        else:
            x = seqsgd_round(x, problem, gamma, seq_steps, seed, r)
            n_avail, n_sel = config.num_clients, 0
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"parameters diverged to non-finite values in round {r}")
        loss = problem.loss(x)
        g = problem.gradient(x)
        if loss < min_loss:
            min_loss, min_round, min_params = loss, r, x.copy()
        if r % config.eval_every == 0:
            wall_ms = (time.perf_counter() - tic) * 1e3
            records.append(MetricRecord(r, r * C, loss, float(g @ g), n_avail, n_sel, wall_ms))

    stats: dict[str, Any] = {"mean_grad_norm_sq": grad_sq_sum / R}
    if f_star is not None:
        stats["mean_excess_loss"] = excess_sum / R
        stats["min_sq_error"] = float(np.sum((min_params - problem.optimum) ** 2))
    footer = {
        "config": config_to_dict(config),
        "seed": seed,
        "learning_rate": gamma,
        "K": K,
        "iterations": config.total_iterations,
        "initial_loss": initial_loss,
        "final_loss": loss,
        "final_grad_norm_sq": float(g @ g),
        "final_params": x.tolist(),
        "final_params_sha256": params_digest(x),
        "min_loss": min_loss,
        "min_loss_round": min_round,
        "records_sha256": _records_digest(records),
        "schedule": {
            **schedule.describe(),
            "horizon": R,
            "validation_ok": not violations,
            "violations": [list(v) for v in violations[:10]],
        },
        **stats,
    }
    trace = TraceFile(records, footer)
    trace.bound_reports = _bound_reports(config, problem, schedule, gamma, stats)
    if write and config.output_path:
        trace.write(config.output_path)
    return trace


# --------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("N", "beta", "E", "D", "alpha", "T", "algorithm")
_AXIS_ALIASES = {"β": "beta", "α": "alpha"}
SUMMARY_COLUMNS = ("axis_value", "seed", "final_loss", "min_loss", "rounds_to_target", "slope")


@dataclass(frozen=True)
class SweepSpec:
    base: RunConfig
    axis: str
    values: tuple
    seeds: tuple[int, ...] = (0,)
    target_loss: float | None = None

    def __post_init__(self):
        axis = _AXIS_ALIASES.get(self.axis, self.axis)
        if axis not in SWEEP_AXES:
            raise SchemaError("axis", f"must be one of {SWEEP_AXES}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        for value in self.values:
            self.derive(value, self.seeds[0])

    def derive(self, value, seed: int) -> RunConfig:
        doc = config_to_dict(self.base)
        doc.pop("output", None)
        doc["seed"] = seed
        avail = dict(doc["availability"])
        if self.axis == "N":
            doc["clients"] = value
        elif self.axis == "beta":
            doc["select_frac"] = value
        elif self.axis == "T":
            doc["rounds"] = value
        elif self.axis == "algorithm":
            doc["algorithm"] = value
            if value == "fedsgd":
                doc["local_iters"] = 1
            if value == "fedprox" and self.base.algorithm != "fedprox":
                # let the objective-dependent default apply instead of the base's 0
                doc.pop("prox_mu", None)
        elif self.axis == "E":
            key = {"diurnal": "block_len", "sleep_window": "rounds_per_day", "alternating": "t1"}.get(avail["kind"])
            if key is None:
                raise SchemaError("axis", f"E cannot be swept for availability kind {avail['kind']!r}")
            avail[key] = value
        elif self.axis == "D":
            avail["D"] = value
        elif self.axis == "alpha":
            avail["alpha"] = value
        doc["availability"] = avail
        return config_from_dict(doc)


def sweep_from_dict(doc: dict[str, Any]) -> SweepSpec:
    for key in ("base", "axis", "values"):
        if key not in doc:
            raise SchemaError(key, "missing required sweep key")
    base = doc["base"]
    base_cfg = config_from_dict(base) if isinstance(base, dict) else parse_config(Path(base).read_text())
    return SweepSpec(
        base_cfg, doc["axis"], tuple(doc["values"]), tuple(doc.get("seeds", [base_cfg.master_seed])), doc.get("target_loss")
    )


def _cell(config: RunConfig) -> dict[str, Any]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trace = run_experiment(config, write=False)
    return {"footer": trace.footer, "losses": [(r.round, r.train_loss) for r in trace.records]}


def _threads() -> int:
    env = os.environ.get("FEDSIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def rounds_to_target(losses: list[tuple[int, float]], target: float | None) -> int | None:
    if target is None:
        return None
    for r, loss in losses:
        if loss <= target:
            return r
    return None


def run_sweep(spec: SweepSpec, output: str | Path | None = None, threads: int | None = None) -> list[dict[str, Any]]:
    """Run every (axis value, seed) cell and summarize one row per cell.

    The ``slope`` column is the log-log slope, across the swept axis, of the
    per-seed convergence measure (time-averaged excess loss when the optimum
    is known, time-averaged squared gradient norm otherwise). It is blank for
    non-numeric axes or fewer than three values.
    """
    cells = [(v, s) for v in spec.values for s in spec.seeds]
    configs = [spec.derive(v, s) for v, s in cells]
    workers = min(threads or _threads(), len(configs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell, configs))
    else:
        results = [_cell(c) for c in configs]

    rows = []
    for (value, seed), res in zip(cells, results):
        f = res["footer"]
        rows.append({
            "axis_value": value,
            "seed": seed,
            "final_loss": f["final_loss"],
            "min_loss": f["min_loss"],
            "rounds_to_target": rounds_to_target(res["losses"], spec.target_loss),
            "slope": None,
            "_measure": f.get("mean_excess_loss", f["mean_grad_norm_sq"]),
        })
    numeric = spec.axis != "algorithm" and len(spec.values) >= 3
    if numeric:
        for seed in spec.seeds:
            mine = [row for row in rows if row["seed"] == seed]
            try:
                slope = analysis.loglog_slope([(float(r["axis_value"]), r["_measure"]) for r in mine])
            except analysis.NonPositiveValue:
                slope = None
            for row in mine:
                row["slope"] = slope
    for row in rows:
        row.pop("_measure")
    if output is not None:
        Path(output).write_text(summary_csv(rows))
    return rows


def summary_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()
