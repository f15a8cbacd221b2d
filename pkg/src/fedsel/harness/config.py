"""Experiment configuration: JSON schema, validation, dataclasses.

A config file is one JSON object.  Validation is strict and total: unknown
keys anywhere are rejected, and every problem found is reported in a single
ConfigError rather than failing on the first one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

POLICIES = ("f3ast", "fedavg", "poc", "fixed")
AVAILABILITY_KINDS = (
    "always",
    "scarce",
    "home_devices",
    "smartphones",
    "uneven",
    "two_client",
)
DATASET_KINDS = ("synthetic_iid", "synthetic_alpha")
TASKS = ("least_squares", "softmax")
CORRELATION_MODES = ("uncorrelated", "positively_correlated")
FIXED_TABLES = ("two_client_priority", "two_client_split")


class ConfigError(ValueError):
    """Raised when a config is invalid; .problems lists every violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        lines = "\n".join("  - " + p for p in self.problems)
        super().__init__("invalid config:\n" + lines)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic_alpha"
    task: str = "softmax"
    n_clients: int = 30
    samples_per_client: int = 100
    client_sizes: str = "equal"  # "equal" or "lognormal"
    alpha: float = 1.0
    beta: float = 1.0
    dim: int = 60
    classes: int = 10
    val_fraction: float = 0.2
    l2_reg: float = 1e-4
    seed: int | None = None  # None: derive from the run seed


@dataclass(frozen=True)
class AvailabilitySpec:
    kind: str = "always"
    n_clients: int | None = None  # needed only when no dataset is configured
    q: float = 0.2
    sigma: float | None = None  # default depends on kind
    amplitude: float = 0.4
    offset: float = 0.5
    period: int = 24
    mean_q: float = 0.5


@dataclass(frozen=True)
class CapacitySpec:
    kind: str = "constant"
    value: int = 10
    schedule: tuple[int, ...] = ()


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    eta0: float = 0.01
    mu: float = 1.0
    gamma: float = 1.0


@dataclass(frozen=True)
class ServerOptSpec:
    kind: str = "sgd"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    availability: AvailabilitySpec
    dataset: DatasetSpec | None = None
    capacity: CapacitySpec = field(default_factory=CapacitySpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    server_optimizer: ServerOptSpec = field(default_factory=ServerOptSpec)
    policy: str = "f3ast"
    correlation_mode: str = "uncorrelated"
    beta: float = 0.001
    r_min: float = 1e-4
    rounds: int = 500
    local_steps: int = 5
    batch_size: int = 20
    poc_candidates: int | None = None
    fixed_table: str | None = None
    eval_every: int = 10
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "results"
    rate_tolerance: float = 0.02
    oracle_tol: float = 1e-6
    burn_in: int | None = None  # None: ceil(10 / beta)

    def effective_burn_in(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return int(math.ceil(10.0 / self.beta))


class _Checker:
    """Accumulates validation problems while pulling typed values."""

    def __init__(self) -> None:
        self.problems: list[str] = []

    def fail(self, msg: str) -> None:
        self.problems.append(msg)

    def section(self, raw: dict, key: str, allowed: set[str]) -> dict:
        sub = raw.get(key)
        if sub is None:
            return {}
        if not isinstance(sub, dict):
            self.fail(f"{key}: expected an object")
            return {}
        for k in sub:
            if k not in allowed:
                self.fail(f"{key}.{k}: unknown key")
        return sub

    def value(
        self,
        raw: dict,
        where: str,
        key: str,
        kinds: tuple[type, ...],
        default: Any,
        choices: tuple | None = None,
        low: float | None = None,
        high: float | None = None,
        low_open: bool = False,
    ) -> Any:
        if key not in raw:
            return default
        v = raw[key]
        label = f"{where}.{key}" if where else key
        if isinstance(v, bool) and bool not in kinds:
            self.fail(f"{label}: expected {kinds[0].__name__}, got bool")
            return default
        if not isinstance(v, kinds):
            names = "/".join(k.__name__ for k in kinds)
            self.fail(f"{label}: expected {names}, got {type(v).__name__}")
            return default
        if choices is not None and v not in choices:
            self.fail(f"{label}: must be one of {sorted(choices)}, got {v!r}")
            return default
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            if low is not None and (v <= low if low_open else v < low):
                op = ">" if low_open else ">="
                self.fail(f"{label}: must be {op} {low}, got {v}")
                return default
            if high is not None and v > high:
                self.fail(f"{label}: must be <= {high}, got {v}")
                return default
        return v


_TOP_KEYS = {
    "dataset",
    "availability",
    "capacity",
    "schedule",
    "server_optimizer",
    "policy",
    "correlation_mode",
    "beta",
    "r_min",
    "rounds",
    "local_steps",
    "batch_size",
    "poc_candidates",
    "fixed_table",
    "eval_every",
    "seeds",
    "out_dir",
    "rate_tolerance",
    "oracle_tol",
    "burn_in",
}

_DATASET_KEYS = {
    "kind",
    "task",
    "n_clients",
    "samples_per_client",
    "client_sizes",
    "alpha",
    "beta",
    "dim",
    "classes",
    "val_fraction",
    "l2_reg",
    "seed",
}

_AVAIL_KEYS = {"kind", "n_clients", "q", "sigma", "amplitude", "offset", "period", "mean_q"}
_CAPACITY_KEYS = {"kind", "value", "schedule"}
_SCHEDULE_KEYS = {"kind", "eta0", "mu", "gamma"}
_SERVER_KEYS = {"kind", "lr", "beta1", "beta2", "eps"}


def _parse_dataset(c: _Checker, raw: dict) -> DatasetSpec | None:
    if "dataset" not in raw or raw["dataset"] is None:
        return None
    sub = c.section(raw, "dataset", _DATASET_KEYS)
    kind = c.value(sub, "dataset", "kind", (str,), "synthetic_alpha", DATASET_KINDS)
    task = c.value(sub, "dataset", "task", (str,), None, TASKS)
    if task is None:
        task = "softmax" if kind == "synthetic_alpha" else "least_squares"
    elif kind == "synthetic_alpha" and task != "softmax":
        c.fail("dataset.task: synthetic_alpha only supports softmax")
        task = "softmax"
    default_dim = 60 if kind == "synthetic_alpha" else 100
    seed = sub.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        c.fail("dataset.seed: expected int or null")
        seed = None
    return DatasetSpec(
        kind=kind,
        task=task,
        n_clients=c.value(sub, "dataset", "n_clients", (int,), 30, low=2),
        samples_per_client=c.value(
            sub, "dataset", "samples_per_client", (int,), 100, low=2
        ),
        client_sizes=c.value(
            sub, "dataset", "client_sizes", (str,), "equal", ("equal", "lognormal", "ramp")
        ),
        alpha=c.value(sub, "dataset", "alpha", (int, float), 1.0, low=0.0),
        beta=c.value(sub, "dataset", "beta", (int, float), 1.0, low=0.0),
        dim=c.value(sub, "dataset", "dim", (int,), default_dim, low=1),
        classes=c.value(sub, "dataset", "classes", (int,), 10, low=2),
        val_fraction=c.value(
            sub, "dataset", "val_fraction", (int, float), 0.2, low=0.0, high=0.9
        ),
        l2_reg=c.value(sub, "dataset", "l2_reg", (int, float), 1e-4, low=0.0),
        seed=seed,
    )


def _parse_availability(c: _Checker, raw: dict) -> AvailabilitySpec:
    if "availability" not in raw:
        c.fail("availability: required section is missing")
        return AvailabilitySpec()
    sub = c.section(raw, "availability", _AVAIL_KEYS)
    sigma = sub.get("sigma")
    if sigma is not None and (
        isinstance(sigma, bool) or not isinstance(sigma, (int, float))
    ):
        c.fail("availability.sigma: expected number or null")
        sigma = None
    if sigma is not None and sigma <= 0:
        c.fail("availability.sigma: must be > 0")
        sigma = None
    n_clients = sub.get("n_clients")
    if n_clients is not None:
        if isinstance(n_clients, bool) or not isinstance(n_clients, int) or n_clients < 2:
            c.fail("availability.n_clients: expected int >= 2 or null")
            n_clients = None
    return AvailabilitySpec(
        kind=c.value(sub, "availability", "kind", (str,), "always", AVAILABILITY_KINDS),
        n_clients=n_clients,
        q=c.value(sub, "availability", "q", (int, float), 0.2, low=0.0, high=1.0, low_open=True),
        sigma=None if sigma is None else float(sigma),
        amplitude=c.value(sub, "availability", "amplitude", (int, float), 0.4, low=0.0),
        offset=c.value(sub, "availability", "offset", (int, float), 0.5, low=0.0),
        period=c.value(sub, "availability", "period", (int,), 24, low=1),
        mean_q=c.value(
            sub, "availability", "mean_q", (int, float), 0.5, low=0.0, high=1.0, low_open=True
        ),
    )


def _parse_capacity(c: _Checker, raw: dict) -> CapacitySpec:
    sub = c.section(raw, "capacity", _CAPACITY_KEYS)
    kind = c.value(sub, "capacity", "kind", (str,), "constant", ("constant", "per_round"))
    value = c.value(sub, "capacity", "value", (int,), 10, low=1)
    schedule: tuple[int, ...] = ()
    if kind == "per_round":
        seq = sub.get("schedule")
        if not isinstance(seq, list) or not seq:
            c.fail("capacity.schedule: per_round capacity needs a non-empty list")
        else:
            bad = [v for v in seq if isinstance(v, bool) or not isinstance(v, int) or v < 0]
            if bad:
                c.fail("capacity.schedule: entries must be ints >= 0")
            else:
                schedule = tuple(seq)
    elif "schedule" in sub:
        c.fail("capacity.schedule: only valid when kind is per_round")
    return CapacitySpec(kind=kind, value=value, schedule=schedule)


def _parse_schedule(c: _Checker, raw: dict) -> ScheduleSpec:
    sub = c.section(raw, "schedule", _SCHEDULE_KEYS)
    kind = c.value(
        sub, "schedule", "kind", (str,), "constant", ("constant", "inverse_time")
    )
    spec = ScheduleSpec(
        kind=kind,
        eta0=c.value(sub, "schedule", "eta0", (int, float), 0.01, low=0.0, low_open=True),
        mu=c.value(sub, "schedule", "mu", (int, float), 1.0, low=0.0, low_open=True),
        gamma=c.value(sub, "schedule", "gamma", (int, float), 1.0, low=0.0, low_open=True),
    )
    if kind == "constant" and ("mu" in sub or "gamma" in sub):
        c.fail("schedule: mu/gamma only apply to inverse_time")
    if kind == "inverse_time" and "eta0" in sub:
        c.fail("schedule.eta0: only applies to the constant schedule")
    return spec


def _parse_server(c: _Checker, raw: dict) -> ServerOptSpec:
    sub = c.section(raw, "server_optimizer", _SERVER_KEYS)
    kind = c.value(sub, "server_optimizer", "kind", (str,), "sgd", ("sgd", "adam"))
    if kind == "sgd":
        for k in ("lr", "beta1", "beta2", "eps"):
            if k in sub:
                c.fail(f"server_optimizer.{k}: only applies to adam")
        return ServerOptSpec(kind="sgd")
    return ServerOptSpec(
        kind="adam",
        lr=c.value(sub, "server_optimizer", "lr", (int, float), 0.01, low=0.0, low_open=True),
        beta1=c.value(sub, "server_optimizer", "beta1", (int, float), 0.9, low=0.0, high=1.0),
        beta2=c.value(sub, "server_optimizer", "beta2", (int, float), 0.999, low=0.0, high=1.0),
        eps=c.value(sub, "server_optimizer", "eps", (int, float), 1e-8, low=0.0, low_open=True),
    )


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw JSON object; raises ConfigError listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a JSON object"])
    c = _Checker()
    for k in raw:
        if k not in _TOP_KEYS:
            c.fail(f"{k}: unknown key")

    dataset = _parse_dataset(c, raw)
    availability = _parse_availability(c, raw)
    capacity = _parse_capacity(c, raw)
    schedule = _parse_schedule(c, raw)
    server = _parse_server(c, raw)

    policy = c.value(raw, "", "policy", (str,), "f3ast", POLICIES)
    fixed_table = raw.get("fixed_table")
    if fixed_table is not None and (
        not isinstance(fixed_table, str) or fixed_table not in FIXED_TABLES
    ):
        c.fail(f"fixed_table: must be one of {sorted(FIXED_TABLES)} or null")
        fixed_table = None
    if policy == "fixed" and fixed_table is None:
        c.fail("fixed_table: required when policy is fixed")
    if policy != "fixed" and fixed_table is not None:
        c.fail("fixed_table: only valid when policy is fixed")
    if fixed_table is not None and availability.kind != "two_client":
        c.fail("fixed_table: built-in tables assume two_client availability")

    poc_candidates = raw.get("poc_candidates")
    if poc_candidates is not None:
        if isinstance(poc_candidates, bool) or not isinstance(poc_candidates, int):
            c.fail("poc_candidates: expected int or null")
            poc_candidates = None
        elif poc_candidates < 1:
            c.fail("poc_candidates: must be >= 1")
            poc_candidates = None
    if poc_candidates is not None and policy != "poc":
        c.fail("poc_candidates: only valid when policy is poc")

    seeds_raw = raw.get("seeds", [0])
    seeds: tuple[int, ...] = (0,)
    if not isinstance(seeds_raw, list) or not seeds_raw:
        c.fail("seeds: expected a non-empty list of ints")
    elif any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds_raw):
        c.fail("seeds: entries must be ints >= 0")
    elif len(set(seeds_raw)) != len(seeds_raw):
        c.fail("seeds: entries must be distinct")
    else:
        seeds = tuple(seeds_raw)

    burn_in = raw.get("burn_in")
    if burn_in is not None:
        if isinstance(burn_in, bool) or not isinstance(burn_in, int) or burn_in < 0:
            c.fail("burn_in: expected int >= 0 or null")
            burn_in = None

    cfg = ExperimentConfig(
        availability=availability,
        dataset=dataset,
        capacity=capacity,
        schedule=schedule,
        server_optimizer=server,
        policy=policy,
        correlation_mode=c.value(
            raw, "", "correlation_mode", (str,), "uncorrelated", CORRELATION_MODES
        ),
        beta=c.value(raw, "", "beta", (int, float), 0.001, low=0.0, high=1.0, low_open=True),
        r_min=c.value(raw, "", "r_min", (int, float), 1e-4, low=0.0, low_open=True),
        rounds=c.value(raw, "", "rounds", (int,), 500, low=0),
        local_steps=c.value(raw, "", "local_steps", (int,), 5, low=1),
        batch_size=c.value(raw, "", "batch_size", (int,), 20, low=1),
        poc_candidates=poc_candidates,
        fixed_table=fixed_table,
        eval_every=c.value(raw, "", "eval_every", (int,), 10, low=1),
        seeds=seeds,
        out_dir=c.value(raw, "", "out_dir", (str,), "results"),
        rate_tolerance=c.value(
            raw, "", "rate_tolerance", (int, float), 0.02, low=0.0, low_open=True
        ),
        oracle_tol=c.value(raw, "", "oracle_tol", (int, float), 1e-6, low=0.0, low_open=True),
        burn_in=burn_in,
    )

    if dataset is not None and availability.kind == "two_client" and dataset.n_clients != 2:
        c.fail("dataset.n_clients: two_client availability requires exactly 2 clients")
    if availability.kind == "uneven" and dataset is None:
        c.fail("availability: uneven derives its probabilities from dataset weights")
    if (
        dataset is not None
        and availability.n_clients is not None
        and availability.n_clients != dataset.n_clients
    ):
        c.fail("availability.n_clients: conflicts with dataset.n_clients")
    if dataset is None and availability.kind not in ("two_client", "uneven"):
        if availability.n_clients is None:
            c.fail("availability.n_clients: required when no dataset is configured")

    if c.problems:
        raise ConfigError(c.problems)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path} is not valid JSON: {exc}"]) from exc
    return parse_config(raw)
