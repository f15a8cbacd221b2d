"""Experiment runners and round-log serialization.

Two entry points: run_experiment drives full training runs (one CSV per
seed plus a summary JSON), run_rate_convergence drives the selection-only
loop and compares time-averaged participation rates against the region
oracle.  All file output is deterministic: float cells carry 9 significant
digits, wall-clock time never reaches the CSV, and the summary statistics
are computed from the serialized (rounded) cell values so that recomputing
them from the CSV reproduces the JSON bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from ..availability import (
    AvailabilityModel,
    CapacitySchedule,
    ConfigurationDistribution,
    ConfigurationSample,
    derive_client_probs,
    independent_distribution,
    periodic_mixture_distribution,
    sample_round,
    two_client_example,
)
from ..data_models import (
    FederatedDataset,
    GlmModel,
    TaskKind,
    generate_synthetic_alpha,
    generate_synthetic_iid,
    lognormal_client_sizes,
)
from ..fedtrain import (
    LearningRateSchedule,
    Policy,
    ServerOptimizer,
    TrainState,
    run_round,
)
from ..rate_region import RateRegionModel, membership, optimal_rate, rate_of_policy
from ..records import RoundRecord
from ..rng import AVAILABILITY_STATIC, DATA, availability_rng, batch_rng, data_rng, policy_rng, substream
from ..selection import (
    CorrelationMode,
    HObjective,
    ParticipationRate,
    PolicyTable,
    f3ast_select,
    smooth_update,
)
from .config import ConfigError, ExperimentConfig

CSV_COLUMNS = (
    "round",
    "policy",
    "seed",
    "skipped",
    "n_available",
    "n_selected",
    "selected",
    "per_sample_loss",
    "per_sample_acc",
    "per_user_loss",
    "per_user_acc",
    "rate_snapshot",
)

METRIC_COLUMNS = ("per_sample_loss", "per_sample_acc", "per_user_loss", "per_user_acc")


def _fmt(x: float) -> str:
    """Serialize a float metric with 9 significant digits ('' for missing)."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".9g")


def write_round_csv(path: str, records: list[RoundRecord], policy: str, seed: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            snapshot = ""
            if rec.rate_snapshot is not None:
                snapshot = "|".join(format(float(v), ".9g") for v in rec.rate_snapshot)
            writer.writerow(
                [
                    rec.round,
                    policy,
                    seed,
                    int(rec.skipped),
                    rec.n_available,
                    len(rec.selected),
                    "|".join(str(k) for k in rec.selected),
                    _fmt(rec.per_sample_loss),
                    _fmt(rec.per_sample_acc),
                    _fmt(rec.per_user_loss),
                    _fmt(rec.per_user_acc),
                    snapshot,
                ]
            )


class RoundLogError(ValueError):
    """A stored round CSV does not follow the expected format."""


def read_round_csv(path: str) -> list[dict]:
    """Parse a round CSV back into typed rows (metrics None when missing)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise RoundLogError(f"{path}: unexpected header {header}")
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(CSV_COLUMNS):
                raise RoundLogError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} cells")
            raw = dict(zip(CSV_COLUMNS, cells))
            try:
                row = {
                    "round": int(raw["round"]),
                    "policy": raw["policy"],
                    "seed": int(raw["seed"]),
                    "skipped": bool(int(raw["skipped"])),
                    "n_available": int(raw["n_available"]),
                    "n_selected": int(raw["n_selected"]),
                    "selected": tuple(int(k) for k in raw["selected"].split("|") if k),
                    "rate_snapshot": tuple(
                        float(v) for v in raw["rate_snapshot"].split("|") if v
                    ),
                }
                for col in METRIC_COLUMNS:
                    row[col] = float(raw[col]) if raw[col] else None
            except ValueError as exc:
                raise RoundLogError(f"{path}:{lineno}: {exc}") from exc
            rows.append(row)
    return rows


def final_window_means(rows: list[dict], window: int = 100) -> dict:
    """Mean metrics over the last ``window`` evaluated rounds of a run."""
    evaluated = [r for r in rows if r["per_sample_loss"] is not None]
    tail = evaluated[-window:]
    if not tail:
        raise RoundLogError("run contains no evaluated rounds")
    out = {col: float(np.mean([r[col] for r in tail])) for col in METRIC_COLUMNS}
    out["n_window"] = len(tail)
    out["last_round"] = tail[-1]["round"]
    return out


@dataclass
class AvailabilityContext:
    """Uniform sampling interface over model-based and enumerated processes."""

    model: AvailabilityModel | None
    dist: ConfigurationDistribution | None
    capacity: CapacitySchedule

    @property
    def n_clients(self) -> int:
        return self.model.n_clients if self.model is not None else self.dist.n_clients

    def sample(self, run_seed: int, t: int) -> ConfigurationSample:
        rng = availability_rng(run_seed, t)
        if self.dist is not None:
            return self.dist.sample(t, rng)
        return sample_round(self.model, self.capacity, t, rng)


def build_dataset(cfg: ExperimentConfig, run_seed: int) -> FederatedDataset:
    ds = cfg.dataset
    if ds is None:
        raise ConfigError(["dataset: required for this command"])
    seed = ds.seed if ds.seed is not None else run_seed
    if ds.kind == "synthetic_iid":
        task = TaskKind.LEAST_SQUARES if ds.task == "least_squares" else TaskKind.SOFTMAX
        return generate_synthetic_iid(
            data_rng(seed),
            task,
            ds.n_clients,
            ds.samples_per_client,
            ds.dim,
            ds.classes,
            ds.val_fraction,
        )
    if ds.client_sizes == "lognormal":
        sizes = lognormal_client_sizes(substream(seed, DATA, 1), ds.n_clients)
    elif ds.client_sizes == "ramp":
        # deterministic unbalanced sizes: linear from half to 5x the nominal count
        lo = max(2, ds.samples_per_client // 2)
        hi = 5 * ds.samples_per_client
        sizes = np.round(np.linspace(lo, hi, ds.n_clients)).astype(int)
    else:
        sizes = ds.samples_per_client
    return generate_synthetic_alpha(
        ds.alpha,
        ds.beta,
        ds.n_clients,
        sizes,
        ds.dim,
        ds.classes,
        data_rng(seed),
        ds.val_fraction,
    )


def build_availability(
    cfg: ExperimentConfig, run_seed: int, weights: np.ndarray | None = None
) -> AvailabilityContext:
    """Instantiate the availability process for one run.

    The static per-client probabilities (lognormal draws) come from a
    dedicated stream of the run seed, so different seeds see different
    device populations while every policy under the same seed sees the
    same one.  The two-client fixture carries its own capacity.
    """
    spec = cfg.availability
    if cfg.capacity.kind == "constant":
        capacity = CapacitySchedule.constant(cfg.capacity.value)
    else:
        capacity = CapacitySchedule.listed(cfg.capacity.schedule)
    if spec.kind == "two_client":
        return AvailabilityContext(None, two_client_example(), capacity)
    if weights is not None:
        n = len(weights)
    elif spec.n_clients is not None:
        n = spec.n_clients
    else:
        raise ConfigError(["availability.n_clients: required without a dataset"])
    if spec.kind == "always":
        model = AvailabilityModel.always(n)
    elif spec.kind == "scarce":
        model = AvailabilityModel.scarce(n, spec.q)
    elif spec.kind == "home_devices":
        model = AvailabilityModel.home_devices(n, spec.sigma if spec.sigma is not None else 0.5)
    elif spec.kind == "smartphones":
        model = AvailabilityModel.smartphones(
            n,
            spec.sigma if spec.sigma is not None else 0.25,
            spec.amplitude,
            spec.offset,
            spec.period,
        )
    elif spec.kind == "uneven":
        model = AvailabilityModel.uneven(n, spec.mean_q)
    else:  # pragma: no cover - config validation rejects earlier
        raise ConfigError([f"availability.kind: unknown {spec.kind!r}"])
    derive_client_probs(model, weights=weights, rng=substream(run_seed, AVAILABILITY_STATIC))
    return AvailabilityContext(model, None, capacity)


def fixed_table_by_name(name: str) -> PolicyTable:
    """Built-in static policies on the two-client fixture."""
    pats = {"both": (0, 1), "zero": (0,), "one": (1,), "none": ()}
    if name == "two_client_priority":
        # client 0 whenever present, client 1 only alone: rates (0.375, 0.5)
        return PolicyTable.deterministic(
            2,
            {
                (pats["both"], 1): (0,),
                (pats["zero"], 1): (0,),
                (pats["one"], 1): (1,),
                (pats["none"], 1): (),
            },
        )
    if name == "two_client_split":
        # fair coin when both are present: rates (0.225, 0.65)
        return PolicyTable(
            2,
            {
                (pats["both"], 1): (((0,), 0.5), ((1,), 0.5)),
                (pats["zero"], 1): (((0,), 1.0),),
                (pats["one"], 1): (((1,), 1.0),),
                (pats["none"], 1): (((), 1.0),),
            },
        )
    raise ConfigError([f"fixed_table: unknown table {name!r}"])


def build_policy(cfg: ExperimentConfig, p: np.ndarray, ctx: AvailabilityContext) -> Policy:
    if cfg.policy == "f3ast":
        mode = (
            CorrelationMode.UNCORRELATED
            if cfg.correlation_mode == "uncorrelated"
            else CorrelationMode.POSITIVELY_CORRELATED
        )
        return Policy.f3ast(p, mode)
    if cfg.policy == "fedavg":
        return Policy.fedavg()
    if cfg.policy == "poc":
        return Policy.poc(cfg.poc_candidates)
    table = fixed_table_by_name(cfg.fixed_table)
    if ctx.dist is None:
        raise ConfigError(["fixed_table: built-in tables need two_client availability"])
    model = RateRegionModel.from_distribution(ctx.dist)
    return Policy.fixed(table, rate_of_policy(model, table))


def build_schedule(cfg: ExperimentConfig) -> LearningRateSchedule:
    if cfg.schedule.kind == "constant":
        return LearningRateSchedule.constant(cfg.schedule.eta0)
    return LearningRateSchedule.inverse_time(cfg.schedule.mu, cfg.schedule.gamma)


def build_server_opt(cfg: ExperimentConfig) -> ServerOptimizer:
    s = cfg.server_optimizer
    if s.kind == "sgd":
        return ServerOptimizer.sgd()
    return ServerOptimizer.adam(s.lr, s.beta1, s.beta2, s.eps)


def new_train_state(cfg: ExperimentConfig, fed: FederatedDataset) -> TrainState:
    model = GlmModel.zeros(
        fed.task, fed.dim, fed.num_classes, l2_reg=cfg.dataset.l2_reg if cfg.dataset else 1e-4
    )
    rate = None
    if cfg.policy == "f3ast":
        rate = ParticipationRate.uniform(fed.n_clients, cfg.beta, cfg.r_min)
    return TrainState(model=model, server_opt=build_server_opt(cfg), rate=rate)


def run_single_seed(cfg: ExperimentConfig, seed: int) -> list[RoundRecord]:
    """One full training run; returns the per-round records."""
    fed = build_dataset(cfg, seed)
    ctx = build_availability(cfg, seed, weights=fed.p)
    policy = build_policy(cfg, fed.p, ctx)
    state = new_train_state(cfg, fed)
    schedule = build_schedule(cfg)
    prng = policy_rng(seed)
    records = []
    for t in range(cfg.rounds):
        sample = ctx.sample(seed, t)
        eval_now = (t % cfg.eval_every == 0) or (t == cfg.rounds - 1)
        rec = run_round(
            state,
            policy,
            sample,
            fed,
            cfg.local_steps,
            cfg.batch_size,
            schedule,
            prng,
            lambda t_, k_: batch_rng(seed, t_, k_),
            eval_now=eval_now,
            record_rate=eval_now and cfg.policy == "f3ast",
        )
        records.append(rec)
    return records


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every seed of the configured experiment and write artifacts.

    Writes ``<policy>_seed<seed>.csv`` per seed and ``summary_<policy>.json``
    into ``cfg.out_dir``; returns the summary plus file paths and the total
    wall-clock time (kept out of the files on purpose).
    """
    if cfg.dataset is None:
        raise ConfigError(["dataset: required for training runs"])
    started = time.perf_counter()
    os.makedirs(cfg.out_dir, exist_ok=True)
    csv_paths = []
    runs = []
    for seed in cfg.seeds:
        records = run_single_seed(cfg, seed)
        path = os.path.join(cfg.out_dir, f"{cfg.policy}_seed{seed}.csv")
        write_round_csv(path, records, cfg.policy, seed)
        csv_paths.append(path)
        rows = read_round_csv(path)
        evaluated = any(r["per_sample_loss"] is not None for r in rows)
        final = final_window_means(rows) if evaluated else None
        runs.append({"seed": seed, "csv": os.path.basename(path), "final": final})
    finals = [r["final"] for r in runs if r["final"] is not None]
    final_mean = (
        {col: float(np.mean([f[col] for f in finals])) for col in METRIC_COLUMNS}
        if finals
        else None
    )
    summary = {
        "policy": cfg.policy,
        "rounds": cfg.rounds,
        "eval_every": cfg.eval_every,
        "seeds": list(cfg.seeds),
        "runs": runs,
        "final_mean": final_mean,
    }
    summary_path = os.path.join(cfg.out_dir, f"summary_{cfg.policy}.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {
        "summary": summary,
        "summary_path": summary_path,
        "csv_paths": csv_paths,
        "wall_clock_s": time.perf_counter() - started,
    }


def _context_and_weights(cfg: ExperimentConfig, seed: int):
    """Availability context plus the weight vector used by the objective."""
    if cfg.dataset is not None:
        fed = build_dataset(cfg, seed)
        ctx = build_availability(cfg, seed, weights=fed.p)
        return ctx, fed.p
    ctx = build_availability(cfg, seed)
    n = ctx.n_clients
    return ctx, np.full(n, 1.0 / n)


def enumerable_model(cfg: ExperimentConfig, ctx: AvailabilityContext) -> RateRegionModel:
    """Exact outcome distribution of the configured process, when tractable.

    Independent processes enumerate 2^N patterns (N <= 16); the diurnal
    smartphones process enumerates the uniform mixture over its period
    (N <= 12); the two-client fixture is already a distribution.  Anything
    larger is refused rather than approximated.
    """
    if ctx.dist is not None:
        return RateRegionModel.from_distribution(ctx.dist)
    if ctx.capacity.constant_value is None:
        raise ConfigError(["capacity: the region oracle needs a constant capacity"])
    cap = ctx.capacity.value_at(0)
    model = ctx.model
    try:
        if model.kind.value == "smartphones":
            dist = periodic_mixture_distribution(model, cap)
        else:
            dist = independent_distribution(model.per_client_q, cap)
    except ValueError as exc:
        raise ConfigError([f"availability: {exc}"]) from exc
    return RateRegionModel.from_distribution(dist)


def run_rate_convergence(cfg: ExperimentConfig) -> dict:
    """Selection-only loop versus the region oracle.

    Runs the rate-tracking policy for cfg.rounds rounds, discards a
    burn-in of ceil(10 / beta) rounds (overridable), time-averages the
    smoothed rates afterwards, and reports the sup-norm gap to the
    oracle's optimal rate.
    """
    started = time.perf_counter()
    seed = cfg.seeds[0]
    ctx, p = _context_and_weights(cfg, seed)
    region = enumerable_model(cfg, ctx)
    mode = (
        CorrelationMode.UNCORRELATED
        if cfg.correlation_mode == "uncorrelated"
        else CorrelationMode.POSITIVELY_CORRELATED
    )
    obj = HObjective(p, mode)
    opt = optimal_rate(region, obj, tol=cfg.oracle_tol, r_floor=cfg.r_min)
    burn = cfg.effective_burn_in()
    if burn >= cfg.rounds:
        raise ConfigError(
            [f"rounds: need more than the burn-in ({burn}) rounds, got {cfg.rounds}"]
        )
    n = len(p)
    rate = ParticipationRate.uniform(n, cfg.beta, cfg.r_min)
    acc = np.zeros(n)
    kept = 0
    for t in range(cfg.rounds):
        sample = ctx.sample(seed, t)
        result = f3ast_select(obj, rate, sample)
        rate = smooth_update(rate, result.selected)
        if t >= burn:
            acc += rate.r
            kept += 1
    average = acc / kept
    gap = float(np.max(np.abs(average - opt.rate)))
    return {
        "n_clients": n,
        "rounds": cfg.rounds,
        "burn_in": burn,
        "beta": cfg.beta,
        "seed": seed,
        "optimal_rate": [float(v) for v in opt.rate],
        "average_rate": [float(v) for v in average],
        "sup_gap": gap,
        "tolerance": cfg.rate_tolerance,
        "passed": bool(gap <= cfg.rate_tolerance),
        "h_optimal": opt.h_value,
        "oracle_duality_gap": opt.duality_gap,
        "oracle_excluded": [int(k) for k in opt.excluded],
        "wall_clock_s": time.perf_counter() - started,
    }


def oracle_report(cfg: ExperimentConfig) -> dict:
    """Region-oracle computations for the configured availability process."""
    seed = cfg.seeds[0]
    ctx, p = _context_and_weights(cfg, seed)
    region = enumerable_model(cfg, ctx)
    mode = (
        CorrelationMode.UNCORRELATED
        if cfg.correlation_mode == "uncorrelated"
        else CorrelationMode.POSITIVELY_CORRELATED
    )
    obj = HObjective(p, mode)
    opt = optimal_rate(region, obj, tol=cfg.oracle_tol, r_floor=cfg.r_min)
    mem = membership(region, opt.rate, tol=cfg.oracle_tol)
    return {
        "n_clients": region.n_clients,
        "n_outcomes": len(region.probs),
        "weights": [float(v) for v in p],
        "max_rates": [float(v) for v in region.max_rates()],
        "optimal_rate": [float(v) for v in opt.rate],
        "h_optimal": opt.h_value,
        "duality_gap": opt.duality_gap,
        "iterations": opt.iterations,
        "converged": opt.converged,
        "excluded": [int(k) for k in opt.excluded],
        "optimum_membership_residual": mem.distance,
        "optimum_inside": mem.inside,
    }
