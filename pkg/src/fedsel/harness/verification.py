"""Executable checks of the library's headline guarantees.

Each check runs a frozen configuration and compares measured behaviour
against an independently computed reference: exhaustive enumeration,
closed-form optima, or Monte Carlo with explicit error bars.  The suite
backs ``fedsel verify`` and the acceptance tests; every check is
deterministic (all randomness is seeded) so a pass is reproducible.

``fast=True`` shrinks the budgets for a quick smoke pass; the stated
tolerances apply to the full budgets only.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from ..availability import (
    AvailabilityModel,
    ConfigurationDistribution,
    ConfigurationSample,
    derive_client_probs,
    independent_distribution,
    sample_round,
    two_client_example,
)
from ..data_models import (
    GlmModel,
    TaskKind,
    generate_synthetic_alpha,
    generate_synthetic_iid,
)
from ..fedtrain import (
    LearningRateSchedule,
    Policy,
    RoundRecord,
    ServerOptimizer,
    TrainState,
    aggregate_debias,
    client_local_sgd,
    recommended_gamma,
    run_round,
    server_step,
)
from ..rate_region import (
    RateRegionModel,
    debiased_rows,
    membership,
    optimal_rate,
    random_policy_table,
    rate_of_policy,
    sampling_variance_exact,
    selection_covariance,
    variance_bounds,
)
from ..rng import availability_rng, batch_rng, policy_rng
from ..selection import (
    CorrelationMode,
    HObjective,
    ParticipationRate,
    PolicyTable,
    f3ast_select,
    h_value,
    smooth_update,
)
from .config import parse_config
from .plots import emit_plots
from .runner import (
    final_window_means,
    read_round_csv,
    run_experiment,
    run_rate_convergence,
    write_round_csv,
)

TWO_CLIENT_OPTIMUM = np.array([0.375, 0.5])

# sha256 of the SVGs rendered from the synthetic fixture in _fixture_records
PLOT_HASHES = {
    "per_sample_acc.svg": "76910c01622b6d475145d47f5523b277e8a68979371967da40563e0a3dcd9603",
    "per_sample_loss.svg": "fe19f116ebe90598b5f50f21da11657fa5db857c63dc92e481a358a904ad448a",
    "per_user_acc.svg": "d05a84b5caac5c24a71b0ce3f58f4dfde0d6394d575db9b31ba4cbdffdcfe200",
    "per_user_loss.svg": "195056c5d796b9d9c896be295f5cf2a5c7b5d58edb4b486e304cb1b5891689a9",
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    details: str
    seconds: float


_REGISTRY: list[tuple[str, object]] = []


def _check(name: str):
    def wrap(fn):
        _REGISTRY.append((name, fn))
        return fn

    return wrap


def check_names() -> tuple[str, ...]:
    return tuple(name for name, _ in _REGISTRY)


def run_checks(fast: bool = False, only: list[str] | None = None) -> list[CheckResult]:
    """Run the verification suite; failures never raise, they report."""
    results = []
    for name, fn in _REGISTRY:
        if only and name not in only:
            continue
        started = time.perf_counter()
        try:
            passed, details = fn(fast)
        except Exception as exc:  # noqa: BLE001 - a crash is a failed check
            passed, details = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, passed, details, time.perf_counter() - started))
    return results


# ---------------------------------------------------------------------------
# 1. The tracked rates of the greedy policy converge to the region optimum.


@_check("rate_tracking")
def check_rate_tracking(fast: bool = False) -> tuple[bool, str]:
    raw = {
        "availability": {"kind": "two_client"},
        "capacity": {"value": 1},
        "policy": "f3ast",
        "beta": 0.005 if fast else 0.001,
        "rounds": 6000 if fast else 50_000,
        "rate_tolerance": 0.03 if fast else 0.02,
        "seeds": [0],
    }
    report = run_rate_convergence(parse_config(raw))
    ok = report["passed"] and np.allclose(report["optimal_rate"], TWO_CLIENT_OPTIMUM, atol=1e-6)
    avg = ", ".join(f"{v:.4f}" for v in report["average_rate"])
    return ok, (
        f"time-averaged rate ({avg}) vs optimum (0.375, 0.5), "
        f"sup gap {report['sup_gap']:.4f} <= {report['tolerance']}, "
        f"{report['rounds']} rounds in {report['wall_clock_s']:.1f}s"
    )


# ---------------------------------------------------------------------------
# 2. De-biased aggregation is unbiased for the full-participation update.


def _updates_for(subset, v) -> list:
    from ..fedtrain import ClientUpdate

    return [ClientUpdate(k, v[k], 1) for k in subset]


def _exact_mean_aggregate(dist, table, p, r, v) -> np.ndarray:
    total = np.zeros(v.shape[1])
    for pattern, cap, prob in dist.outcomes:
        for subset, f in table.entries[(pattern, cap)]:
            if prob * f == 0.0:
                continue
            agg = aggregate_debias(_updates_for(subset, v), p, r, dim=v.shape[1])
            total += prob * f * agg.delta
    return total


@_check("unbiased_aggregation")
def check_unbiased_aggregation(fast: bool = False) -> tuple[bool, str]:
    worst_exact = 0.0
    # exact enumeration at two and three clients
    for n, dist, seed in (
        (2, two_client_example(), 5),
        (3, independent_distribution(np.array([0.6, 0.35, 0.8]), 2), 6),
    ):
        model = RateRegionModel.from_distribution(dist)
        rng = np.random.default_rng(seed)
        table = random_policy_table(model, rng)
        r = rate_of_policy(model, table)
        p = rng.dirichlet(np.ones(n))
        v = rng.standard_normal((n, 4))
        vbar = p @ v
        mean = _exact_mean_aggregate(dist, table, p, r, v)
        worst_exact = max(worst_exact, float(np.linalg.norm(mean - vbar)))
    exact_ok = worst_exact <= 1e-12

    # Monte Carlo on the deterministic two-client priority policy
    dist = two_client_example()
    model = RateRegionModel.from_distribution(dist)
    table = PolicyTable.deterministic(
        2, {((0, 1), 1): (0,), ((0,), 1): (0,), ((1,), 1): (1,), ((), 1): ()}
    )
    r = rate_of_policy(model, table)
    p = np.array([0.5, 0.5])
    rng = np.random.default_rng(7)
    v = rng.standard_normal((2, 3))
    vbar = p @ v
    atoms = []
    for pattern, cap, prob in dist.outcomes:
        for subset, f in table.entries[(pattern, cap)]:
            agg = aggregate_debias(_updates_for(subset, v), p, r, dim=3)
            atoms.append((prob * f, agg.delta))
    probs = np.array([a[0] for a in atoms])
    deltas = np.stack([a[1] for a in atoms])
    draws = 10_000 if fast else 100_000
    counts = rng.multinomial(draws, probs)
    mean = counts @ deltas / draws
    second = counts @ (deltas**2) / draws
    se = np.sqrt(np.maximum(second - mean**2, 0.0) / draws)
    mc_ok = bool(np.all(np.abs(mean - vbar) <= 4.0 * se))
    mc_gap = float(np.max(np.abs(mean - vbar) / np.maximum(se, 1e-300)))
    return exact_ok and mc_ok, (
        f"exact |E[delta] - vbar| {worst_exact:.2e} <= 1e-12 (n=2,3); "
        f"MC at {draws} draws within {mc_gap:.2f} SE (limit 4) per coordinate"
    )


# ---------------------------------------------------------------------------
# 3. The sampling-variance identity Tr(Y Y^T Sigma) matches reality.


@_check("variance_identity")
def check_variance_identity(fast: bool = False) -> tuple[bool, str]:
    dist = independent_distribution(np.array([0.7, 0.4, 0.55]), 2)
    model = RateRegionModel.from_distribution(dist)
    rng = np.random.default_rng(11)
    table = random_policy_table(model, rng)
    r = rate_of_policy(model, table)
    p = rng.dirichlet(np.ones(3))
    v = rng.standard_normal((3, 4))
    vbar = p @ v
    cov = selection_covariance(model, table)
    formula = sampling_variance_exact(debiased_rows(v, p, r), cov)

    atoms = []
    for pattern, cap, prob in dist.outcomes:
        for subset, f in table.entries[(pattern, cap)]:
            agg = aggregate_debias(_updates_for(subset, v), p, r, dim=4)
            atoms.append((prob * f, float(np.sum((agg.delta - vbar) ** 2))))
    probs = np.array([a[0] for a in atoms])
    sq = np.array([a[1] for a in atoms])
    exact = float(probs @ sq)
    exact_gap = abs(exact - formula)
    exact_ok = exact_gap <= 1e-10

    draws = 100_000 if fast else 1_000_000
    counts = rng.multinomial(draws, probs)
    mc = float(counts @ sq) / draws
    rel = abs(mc - formula) / formula
    mc_ok = rel <= 0.05 if fast else rel <= 0.02
    return exact_ok and mc_ok, (
        f"exact E||delta - vbar||^2 {exact:.6f} vs Tr(YY'Sigma) {formula:.6f} "
        f"(|diff| {exact_gap:.1e} <= 1e-10); MC at {draws} draws off by {rel:.2%} (limit 2%)"
    )


# ---------------------------------------------------------------------------
# 4. Closed-form variance ceilings hold on random instances.


def _random_joint_distribution(n: int, cap: int, rng: np.random.Generator):
    patterns = [tuple(sorted(s)) for m in range(n + 1) for s in itertools.combinations(range(n), m)]
    probs = rng.dirichlet(np.ones(len(patterns)))
    return ConfigurationDistribution(
        n, tuple((pat, cap, float(q)) for pat, q in zip(patterns, probs))
    )


def _select_all_table(dist: ConfigurationDistribution) -> PolicyTable:
    return PolicyTable.deterministic(
        dist.n_clients, {(pat, cap): pat for pat, cap, _ in dist.outcomes}
    )


@_check("variance_bounds")
def check_variance_bounds(fast: bool = False) -> tuple[bool, str]:
    rng = np.random.default_rng(2024)
    instances = 25 if fast else 100
    local_steps, dim = 3, 5
    violations = 0
    worst_margin = np.inf
    for i in range(instances):
        n = int(rng.integers(2, 6))
        case = i % 3
        if case == 0:
            # independent coins, select everyone: indicators are independent
            q = rng.uniform(0.25, 0.95, size=n)
            dist = independent_distribution(q, n)
            table = _select_all_table(dist)
            both = True
        elif case == 1:
            # arbitrary joint availability, random policy: general bound only
            dist = _random_joint_distribution(n, int(rng.integers(1, n + 1)), rng)
            model = RateRegionModel.from_distribution(dist)
            table = random_policy_table(model, rng)
            both = False
        else:
            # capacity one: at most one indicator fires, negative correlation
            dist = _random_joint_distribution(n, 1, rng)
            model = RateRegionModel.from_distribution(dist)
            table = random_policy_table(model, rng)
            both = True
        model = RateRegionModel.from_distribution(dist)
        cov = selection_covariance(model, table)
        r = cov.rate
        live = r > 0
        p = rng.dirichlet(np.ones(n))
        p[~live] = 0.0
        p = p / p.sum()
        grads = rng.standard_normal((n, local_steps, dim))
        v = -grads.sum(axis=1)
        grad_bound = float(np.max(np.linalg.norm(grads, axis=2)))
        r_eval = np.where(live, r, 1.0)
        actual = sampling_variance_exact(debiased_rows(v, p, r_eval), cov)
        bounds = variance_bounds(p[live], r[live], local_steps, grad_bound)
        limits = [bounds.general] + ([bounds.uncorrelated] if both else [])
        for limit in limits:
            worst_margin = min(worst_margin, limit - actual)
            if actual > limit + 1e-9:
                violations += 1
    ok = violations == 0
    return ok, (
        f"{instances} random instances (general + uncorrelated ceilings where "
        f"they apply): {violations} violations, smallest slack {worst_margin:.3g}"
    )


# ---------------------------------------------------------------------------
# 5. Greedy selection equals the exhaustive subset argmax.


@_check("greedy_optimality")
def check_greedy_optimality(fast: bool = False) -> tuple[bool, str]:
    rng = np.random.default_rng(99)
    instances = 200 if fast else 1000
    mismatches = 0
    for i in range(instances):
        n = int(rng.integers(2, 13))
        cap = int(rng.integers(1, 5))
        avail = tuple(sorted(rng.choice(n, size=rng.integers(1, n + 1), replace=False).tolist()))
        mode = CorrelationMode.UNCORRELATED if i % 2 == 0 else CorrelationMode.POSITIVELY_CORRELATED
        obj = HObjective(rng.dirichlet(np.ones(n)) + 1e-3, mode)
        rate = ParticipationRate(rng.uniform(1e-3, 1.0, size=n), r_min=1e-6)
        sample = ConfigurationSample(i, avail, cap)
        got = f3ast_select(obj, rate, sample).selected
        util = obj.p**2 / rate.r**2 if mode is CorrelationMode.UNCORRELATED else obj.p / rate.r**2
        m = min(cap, len(avail))
        best = max(
            itertools.combinations(avail, m),
            key=lambda s: util[list(s)].sum(),
        )
        if got != tuple(sorted(best)):
            mismatches += 1
    ok = mismatches == 0
    return ok, f"{instances} random instances (n <= 12, capacity <= 4): {mismatches} mismatches"


# ---------------------------------------------------------------------------
# 6. The rate-region oracle returns an achievable minimizer of H.


@_check("rate_region_oracle")
def check_rate_region_oracle(fast: bool = False) -> tuple[bool, str]:
    dist = two_client_example()
    model = RateRegionModel.from_distribution(dist)
    obj = HObjective(np.array([0.5, 0.5]))
    res = optimal_rate(model, obj, tol=1e-6)
    inside = membership(model, res.rate, tol=1e-6).inside
    at_optimum = bool(np.max(np.abs(res.rate - TWO_CLIENT_OPTIMUM)) <= 1e-6)
    h_star = res.h_value

    rng = np.random.default_rng(17)
    samples = 200 if fast else 1000
    dominated = 0
    for _ in range(samples):
        r = rate_of_policy(model, random_policy_table(model, rng))
        if np.any((obj.p > 0) & (r <= 0)):
            dominated += 1  # H(r) is +inf there
            continue
        if h_value(obj, r) >= h_star - 1e-9:
            dominated += 1
    point_checks = (
        membership(model, np.array([0.375, 0.0]), tol=1e-6).inside
        and membership(model, np.array([0.375, 0.5]), tol=1e-6).inside
        and not membership(model, np.array([0.5, 0.5]), tol=1e-6).inside
    )
    ok = inside and at_optimum and dominated == samples and point_checks
    return ok, (
        f"optimum ({res.rate[0]:.4f}, {res.rate[1]:.4f}) inside region, H* {h_star:.6f}; "
        f"dominates {dominated}/{samples} random achievable rates; "
        f"boundary points classified correctly: {point_checks}"
    )


# ---------------------------------------------------------------------------
# 7. Training under the decaying schedule contracts like O(1/T).


@_check("convergence_rate")
def check_convergence_rate(fast: bool = False) -> tuple[bool, str]:
    fed = generate_synthetic_iid(
        2026, TaskKind.LEAST_SQUARES, n_clients=100, samples_per_client=100, dim=100
    )
    l2 = 1e-4
    dim = fed.dim
    a = l2 * np.eye(dim)
    b = np.zeros(dim)
    c = 0.0
    for pk, client in zip(fed.p, fed.clients):
        x, y = client.train.features, client.train.labels
        a += pk * (x.T @ x) / client.train.n
        b += pk * (x.T @ y) / client.train.n
        c += pk * 0.5 * float(y @ y) / client.train.n
    w_star = np.linalg.solve(a, b)
    f_star = 0.5 * float(w_star @ a @ w_star) - float(b @ w_star) + c
    eigs = np.linalg.eigvalsh(a)
    mu, smooth = float(eigs[0]), float(eigs[-1])
    local_steps = 5
    schedule = LearningRateSchedule.inverse_time(mu, recommended_gamma(mu, smooth, local_steps))

    horizon, window = 300, 50
    seeds = range(4) if fast else range(12)
    sample = lambda t: ConfigurationSample(t, tuple(range(fed.n_clients)), 10)
    sum_first = sum_second = 0.0
    for seed in seeds:
        state = TrainState(
            GlmModel.zeros(TaskKind.LEAST_SQUARES, dim, l2_reg=l2), ServerOptimizer.sgd()
        )
        prng = policy_rng(seed)
        brng = lambda t, k: batch_rng(seed, t, k)
        gaps = np.empty(2 * horizon)
        for t in range(2 * horizon):
            run_round(
                state, Policy.fedavg(), sample(t), fed, local_steps, 100, schedule, prng, brng
            )
            w = state.model.flat_weights()
            gaps[t] = 0.5 * float(w @ a @ w) - float(b @ w) + c - f_star
        sum_first += gaps[horizon - window : horizon].mean()
        sum_second += gaps[2 * horizon - window :].mean()
    ratio = sum_first / sum_second
    lo, hi = (1.05, 3.2) if fast else (1.25, 2.6)
    ok = lo <= ratio <= hi
    return ok, (
        f"suboptimality ratio f(T)/f(2T) = {ratio:.2f} in [{lo}, {hi}] "
        f"(T={horizon}, window {window}, {len(list(seeds))} seeds)"
    )


# ---------------------------------------------------------------------------
# 8. Rate tracking beats uniform sampling under intermittent availability.


@_check("availability_gap")
def check_availability_gap(fast: bool = False) -> tuple[bool, str]:
    rounds = 200 if fast else 500
    threshold = 0.0 if fast else 0.02
    parts = []
    ok = True
    with tempfile.TemporaryDirectory() as root:
        for avail in ({"kind": "smartphones"}, {"kind": "uneven"}):
            accs = {}
            for policy in ("f3ast", "fedavg"):
                out = os.path.join(root, f"{avail['kind']}_{policy}")
                cfg = parse_config(
                    {
                        "dataset": {
                            "kind": "synthetic_alpha",
                            "n_clients": 100,
                            "samples_per_client": 100,
                            "client_sizes": "lognormal",
                            "alpha": 1.0,
                            "beta": 1.0,
                            "dim": 60,
                            "classes": 10,
                            "seed": 12,
                        },
                        "availability": avail,
                        "capacity": {"value": 10},
                        "policy": policy,
                        "rounds": rounds,
                        "eval_every": 10,
                        "seeds": [0, 1, 2],
                        "local_steps": 5,
                        "batch_size": 20,
                        "beta": 0.001,
                        "schedule": {"kind": "constant", "eta0": 0.01},
                        "out_dir": out,
                    }
                )
                run_experiment(cfg)
                per_seed = []
                for seed in cfg.seeds:
                    rows = read_round_csv(os.path.join(out, f"{policy}_seed{seed}.csv"))
                    per_seed.append(final_window_means(rows, window=100)["per_sample_acc"])
                accs[policy] = float(np.mean(per_seed))
            gap = accs["f3ast"] - accs["fedavg"]
            ok = ok and gap >= threshold
            parts.append(
                f"{avail['kind']}: {accs['f3ast']:.3f} vs {accs['fedavg']:.3f} "
                f"(gap {gap:+.3f}, need >= +{threshold})"
            )
    return ok, "; ".join(parts)


# ---------------------------------------------------------------------------
# 9. Local updates respect the step-size norm ceiling.


@_check("update_norm_bound")
def check_update_norm_bound(fast: bool = False) -> tuple[bool, str]:
    fed = generate_synthetic_alpha(1.0, 1.0, n_clients=10, n_per_client=100, dim=20, classes=5, seed=7)
    avail = AvailabilityModel.smartphones(10)
    derive_client_probs(avail, rng=21)
    local_steps, batch = 5, 10
    mu, gamma = 1.0, 200.0
    schedule = LearningRateSchedule.inverse_time(mu, gamma)
    obj = HObjective(fed.p)
    rate = ParticipationRate.uniform(10)
    model = GlmModel.zeros(TaskKind.SOFTMAX, 20, num_classes=5)
    opt = ServerOptimizer.sgd()
    rounds = 200 if fast else 1000
    seed = 3
    norms = []  # (round, ||v_k||) pairs
    grad_max = 0.0
    for t in range(rounds):
        sample = sample_round(avail, 3, t, availability_rng(seed, t))
        result = f3ast_select(obj, rate, sample)
        rate = smooth_update(rate, result.selected)
        if not result.selected:
            continue
        updates = [
            client_local_sgd(
                model, fed.clients[k].train, local_steps, schedule, batch, t,
                batch_rng(seed, t, k), client_id=k,
            )
            for k in result.selected
        ]
        for u in updates:
            norms.append((t, float(np.linalg.norm(u.delta))))
            grad_max = max(grad_max, u.max_grad_norm)
        agg = aggregate_debias(updates, fed.p, rate.r, rate.r_min, model.flat_weights().size)
        model.assign_flat(server_step(opt, model.flat_weights(), agg))
    violations = 0
    worst = 0.0
    for t, norm in norms:
        limit = 2.0 * schedule.rate(t * local_steps + local_steps) * local_steps * grad_max
        worst = max(worst, norm / limit)
        if norm > limit + 1e-12:
            violations += 1
    ok = violations == 0 and len(norms) > 0
    return ok, (
        f"{len(norms)} client updates over {rounds} rounds: {violations} violations "
        f"of ||v_k|| <= 2 eta_end E G (tightest ratio {worst:.3f})"
    )


# ---------------------------------------------------------------------------
# 10. Identical configurations reproduce byte-identical outputs.


def _fixture_records(policy: str, seed: int) -> list[RoundRecord]:
    out = []
    for t in range(50):
        evald = t % 10 == 0 or t == 49
        base = 0.55 if policy == "f3ast" else 0.50
        acc = base + 0.35 * (1 - math.exp(-t / 18.0)) + 0.01 * math.sin(t + seed)
        loss = 2.2 * math.exp(-t / 15.0) + 0.3 + 0.02 * math.cos(t + seed)
        rec = RoundRecord(
            round=t, skipped=False, n_available=5 + (t + seed) % 3, selected=(0, 1 + t % 3)
        )
        if evald:
            rec.per_sample_loss = loss
            rec.per_sample_acc = min(acc, 0.97)
            rec.per_user_loss = loss * 1.08
            rec.per_user_acc = min(acc - 0.015, 0.96)
        out.append(rec)
    return out


def render_fixture_plots(out_dir: str) -> list[str]:
    """Render the frozen plot fixture; returns the SVG paths."""
    csv_dir = os.path.join(out_dir, "rounds")
    os.makedirs(csv_dir, exist_ok=True)
    paths = []
    for policy in ("f3ast", "fedavg"):
        for seed in (0, 1):
            path = os.path.join(csv_dir, f"{policy}_seed{seed}.csv")
            write_round_csv(path, _fixture_records(policy, seed), policy, seed)
            paths.append(path)
    return emit_plots(paths, os.path.join(out_dir, "plots"))


@_check("determinism")
def check_determinism(fast: bool = False) -> tuple[bool, str]:
    raw = {
        "dataset": {
            "kind": "synthetic_alpha",
            "n_clients": 8,
            "samples_per_client": 60,
            "alpha": 1.0,
            "beta": 1.0,
            "dim": 12,
            "classes": 4,
        },
        "availability": {"kind": "smartphones"},
        "capacity": {"value": 3},
        "policy": "f3ast",
        "rounds": 15 if fast else 40,
        "eval_every": 5,
        "seeds": [0, 1],
        "local_steps": 3,
        "batch_size": 10,
    }
    with tempfile.TemporaryDirectory() as root:
        outputs = []
        for run in ("a", "b"):
            out = os.path.join(root, run)
            run_experiment(parse_config({**raw, "out_dir": out}))
            blobs = {}
            for name in sorted(os.listdir(out)):
                with open(os.path.join(out, name), "rb") as fh:
                    blobs[name] = fh.read()
            outputs.append(blobs)
        same_names = set(outputs[0]) == set(outputs[1])
        identical = same_names and all(outputs[0][k] == outputs[1][k] for k in outputs[0])

        svgs = render_fixture_plots(os.path.join(root, "plots_fixture"))
        hash_ok = True
        for path in svgs:
            digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
            if PLOT_HASHES.get(os.path.basename(path)) != digest:
                hash_ok = False
    ok = identical and hash_ok
    return ok, (
        f"two runs produced {len(outputs[0])} files each, byte-identical: {identical}; "
        f"{len(svgs)} fixture SVGs match their frozen sha256 digests: {hash_ok}"
    )
