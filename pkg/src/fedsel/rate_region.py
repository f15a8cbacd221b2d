"""The achievable region of long-term participation rates.

For an enumerable configuration distribution, a static policy f maps every
(availability pattern, capacity) outcome to a distribution over feasible
subsets; its long-term rate is r_k = sum_C pi(C) sum_S f_{C,S} [k in S].
The set R of rates achievable this way is a convex polytope.  It is never
materialized by facets: everything here goes through the linear
maximization oracle (greedy per outcome), which powers a Frank-Wolfe
solver for the rate minimizing the variance surrogate H and a min-norm
point projection deciding membership.

The solver and projection only certify tolerances; the constants of the
underlying convergence theory (heterogeneity gap, strong convexity and
smoothness moduli, per-client gradient noise) are inputs the caller knows,
not quantities estimated here.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple

import numpy as np

from .availability import ConfigurationDistribution, two_client_example  # noqa: F401
from .selection import (
    CorrelationMode,
    HObjective,
    Pattern,
    PatternKey,
    PolicyIncompleteError,
    PolicyTable,
)


@dataclass
class RateRegionModel:
    """Enumerable outcome distribution with cached pattern arrays."""

    dist: ConfigurationDistribution
    avail: np.ndarray  # (M, N) bool
    caps: np.ndarray  # (M,) int
    probs: np.ndarray  # (M,) float

    @classmethod
    def from_distribution(cls, dist: ConfigurationDistribution) -> "RateRegionModel":
        m, n = len(dist.outcomes), dist.n_clients
        avail = np.zeros((m, n), dtype=bool)
        caps = np.zeros(m, dtype=int)
        probs = np.zeros(m)
        for i, (pattern, cap, prob) in enumerate(dist.outcomes):
            avail[i, list(pattern)] = True
            caps[i] = cap
            probs[i] = prob
        return cls(dist, avail, caps, probs)

    @property
    def n_clients(self) -> int:
        return self.dist.n_clients

    def feasible_sets(self, outcome_index: int) -> Iterator[Pattern]:
        """All subsets S of the outcome's pattern with |S| <= capacity.

        Generated lazily; the count is combinatorial, so callers that
        materialize it should stick to small instances.  The empty set is
        always feasible.
        """
        pattern, cap, _ = self.dist.outcomes[outcome_index]
        for size in range(min(cap, len(pattern)) + 1):
            yield from itertools.combinations(pattern, size)

    def max_rates(self) -> np.ndarray:
        """Per-client upper bound: selected whenever available and K_t >= 1."""
        return self.probs @ (self.avail & (self.caps >= 1)[:, None])


def rate_of_policy(model: RateRegionModel, table: PolicyTable) -> np.ndarray:
    """Exact long-term rate of a static policy (no sampling)."""
    if table.n_clients != model.n_clients:
        raise ValueError("table and model disagree on the number of clients")
    r = np.zeros(model.n_clients)
    for pattern, cap, prob in model.dist.outcomes:
        if prob == 0.0:
            continue
        rows = table.entries.get((pattern, cap))
        if rows is None:
            raise PolicyIncompleteError(f"no table entry for outcome {(pattern, cap)}")
        for subset, f in rows:
            if f and subset:
                r[list(subset)] += prob * f
    return r


def linear_max_oracle(model: RateRegionModel, g: np.ndarray) -> np.ndarray:
    """Achievable rate maximizing g . r.

    Decomposes per outcome: take the available clients with the largest
    strictly positive g, up to capacity (ties toward lower ids).  The
    result is a vertex of the region.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (model.n_clients,) or not np.all(np.isfinite(g)):
        raise ValueError("g must be a finite vector of length n_clients")
    masked = np.where(model.avail, g, -np.inf)
    order = np.argsort(-masked, axis=1, kind="stable")
    ranked = np.take_along_axis(masked, order, axis=1)
    take = (np.arange(model.n_clients)[None, :] < model.caps[:, None]) & (ranked > 0.0)
    chosen = np.zeros_like(model.avail)
    np.put_along_axis(chosen, order, take, axis=1)
    return model.probs @ chosen


def linear_argmax_table(model: RateRegionModel, g: np.ndarray) -> PolicyTable:
    """The deterministic policy behind :func:`linear_max_oracle`."""
    g = np.asarray(g, dtype=float)
    mapping: dict[PatternKey, Pattern] = {}
    for pattern, cap, _ in model.dist.outcomes:
        ids = np.array(pattern, dtype=int)
        pos = ids[g[ids] > 0.0]
        order = np.lexsort((pos, -g[pos]))
        mapping[(pattern, cap)] = tuple(sorted(int(k) for k in pos[order[:cap]]))
    return PolicyTable.deterministic(model.n_clients, mapping)


class VarianceBounds(NamedTuple):
    general: float
    uncorrelated: float


def variance_bounds(p: np.ndarray, r: np.ndarray, local_steps: int, grad_bound: float) -> VarianceBounds:
    """Closed-form ceilings for the de-biased sampling variance.

    general: 4 E^2 G^2 (sum p_k/r_k - 1), any availability correlation.
    uncorrelated: 4 E^2 G^2 (sum p_k^2/r_k + sum p_k^2), valid when
    selection indicators are uncorrelated or negatively correlated.
    Both are stated per unit learning rate (no 1/eta^2 factor).
    """
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    if p.shape != r.shape:
        raise ValueError("p and r must share a shape")
    if np.any(r <= 0):
        raise ValueError("rates must be strictly positive")
    scale = 4.0 * local_steps**2 * grad_bound**2
    general = scale * float(np.sum(p / r) - 1.0)
    uncorrelated = scale * float(np.sum(p**2 / r) + np.sum(p**2))
    return VarianceBounds(general, uncorrelated)


@dataclass(frozen=True)
class SelectionCovariance:
    """Covariance of the selection indicator vector under a static policy."""

    sigma: np.ndarray
    rate: np.ndarray


def selection_covariance(model: RateRegionModel, table: PolicyTable) -> SelectionCovariance:
    """Exact Sigma = E[X X^T] - r r^T by enumeration over the table."""
    n = model.n_clients
    second = np.zeros((n, n))
    r = np.zeros(n)
    for pattern, cap, prob in model.dist.outcomes:
        if prob == 0.0:
            continue
        rows = table.entries.get((pattern, cap))
        if rows is None:
            raise PolicyIncompleteError(f"no table entry for outcome {(pattern, cap)}")
        for subset, f in rows:
            if not f or not subset:
                continue
            idx = list(subset)
            r[idx] += prob * f
            second[np.ix_(idx, idx)] += prob * f
    return SelectionCovariance(second - np.outer(r, r), r)


def debiased_rows(v: np.ndarray, p: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Stack the de-biased update rows Y with Y_k = (p_k/r_k) v_k."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("rates must be strictly positive")
    if v.shape[0] != p.shape[0] or p.shape != r.shape:
        raise ValueError("v, p, r disagree on the number of clients")
    return (p / r)[:, None] * v


def sampling_variance_exact(y_rows: np.ndarray, cov: SelectionCovariance) -> float:
    """Tr(Y Y^T Sigma) = E ||Y^T X - Y^T r||^2, per unit learning rate."""
    y = np.asarray(y_rows, dtype=float)
    n = cov.sigma.shape[0]
    if y.ndim != 2 or y.shape[0] != n:
        raise ValueError(f"y_rows must be (n_clients, dim), got {y.shape}")
    return float(np.sum((y @ y.T) * cov.sigma))


# ---------------------------------------------------------------------------
# Frank-Wolfe solver for min H over the region


@dataclass(frozen=True)
class OptimalRateResult:
    rate: np.ndarray
    h_value: float
    duality_gap: float
    iterations: int
    converged: bool
    excluded: tuple[int, ...]


def _floored_h_and_grad(p: np.ndarray, mode: CorrelationMode, r: np.ndarray, floor: float):
    rf = np.maximum(r, floor)
    if mode is CorrelationMode.UNCORRELATED:
        return float(np.sum(p**2 / rf)), -(p**2) / rf**2
    return float(np.sum(p / rf)), -p / rf**2


def _line_search(p, mode, x, d, gamma_hi):
    """Exact minimization of H(x + gamma d) on [0, gamma_hi].

    H is convex on the strictly positive domain, so its directional
    derivative is nondecreasing; bisect on its sign.  The domain cap keeps
    every component that H depends on strictly positive.
    """
    live = p > 0
    shrink = live & (d < 0)
    if np.any(shrink):
        gamma_hi = min(gamma_hi, float(np.min(0.999999 * x[shrink] / -d[shrink])))
    if gamma_hi <= 0:
        return 0.0

    def slope(gamma):
        # the floor must survive squaring; 1e-300 squared underflows to 0
        # and turns zero-weight coordinates into 0/0
        rf = np.maximum(x + gamma * d, 1e-12)
        if mode is CorrelationMode.UNCORRELATED:
            return float(np.sum(-(p**2) * d / rf**2))
        return float(np.sum(-p * d / rf**2))

    if slope(gamma_hi) <= 0:
        return gamma_hi
    lo, hi = 0.0, gamma_hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if slope(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def optimal_rate(
    model: RateRegionModel,
    obj: HObjective,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    r_floor: float = 1e-4,
    step_rule: str = "line_search",
) -> OptimalRateResult:
    """Minimize H over the achievable region by conditional gradient.

    Stops when the Frank-Wolfe duality gap grad . (r - s) drops to ``tol``,
    which certifies H(r) - min H <= tol.  ``step_rule`` selects between
    away-step Frank-Wolfe with exact line search (default; converges
    linearly on this polytope) and the classic open-loop 2/(k+2) schedule.
    Clients with positive weight but zero achievable rate make H unbounded;
    they are excluded with a warning and reported in the result.

    H is evaluated with the same r_min-style floor as the selection module,
    keeping the open-loop iterates inside the domain even when a step lands
    on a vertex with zero components.
    """
    if obj.n_clients != model.n_clients:
        raise ValueError("objective and model disagree on the number of clients")
    if step_rule not in ("line_search", "open_loop"):
        raise ValueError(f"unknown step_rule {step_rule!r}")
    r_max = model.max_rates()
    p = obj.p.copy()
    starved = np.flatnonzero((p > 0) & (r_max <= 0))
    if starved.size:
        warnings.warn(
            f"clients {starved.tolist()} have positive weight but can never be "
            "selected; H is unbounded in their rates, excluding them",
            RuntimeWarning,
        )
        p[starved] = 0.0
    live = np.flatnonzero(p > 0)
    if live.size == 0:
        zero = np.zeros(model.n_clients)
        return OptimalRateResult(zero, 0.0, 0.0, 0, True, tuple(int(k) for k in starved))

    # Barycenter of the per-client extreme points r_max[k] e_k: strictly
    # positive on every live client, and an explicit convex combination.
    x = np.zeros(model.n_clients)
    x[live] = r_max[live] / live.size
    active: dict[bytes, tuple[np.ndarray, float]] = {}
    for k in live:
        v = np.zeros(model.n_clients)
        v[k] = r_max[k]
        active[v.tobytes()] = (v, 1.0 / live.size)

    gap = np.inf
    iterations = 0
    for it in range(max_iter):
        iterations = it + 1
        h, grad = _floored_h_and_grad(p, obj.mode, x, r_floor)
        s = linear_max_oracle(model, -grad)
        gap = float(grad @ (x - s))
        if gap <= tol:
            return OptimalRateResult(x, h, gap, iterations, True, tuple(int(k) for k in starved))
        if step_rule == "open_loop":
            x = x + (2.0 / (it + 2.0)) * (s - x)
            continue
        # Away-step variant: compare the forward direction with moving mass
        # off the worst active vertex.
        away_key = max(active, key=lambda key: float(grad @ active[key][0]))
        v_away, w_away = active[away_key]
        fw_gain = gap
        away_gain = float(grad @ (v_away - x))
        if fw_gain >= away_gain or w_away >= 1.0 - 1e-15:
            d = s - x
            gamma = _line_search(p, obj.mode, x, d, 1.0)
            x = x + gamma * d
            skey = s.tobytes()
            if gamma >= 1.0 - 1e-15:
                active = {skey: (s, 1.0)}
            else:
                active = {k: (v, w * (1.0 - gamma)) for k, (v, w) in active.items()}
                sv, sw = active.get(skey, (s, 0.0))
                active[skey] = (sv, sw + gamma)
        else:
            # x + gamma (x - v_away): every weight scales by (1 + gamma),
            # the away vertex additionally sheds gamma.
            d = x - v_away
            gamma_max = w_away / (1.0 - w_away)
            gamma = _line_search(p, obj.mode, x, d, gamma_max)
            x = x + gamma * d
            active = {k: (v, w * (1.0 + gamma)) for k, (v, w) in active.items()}
            av, aw = active[away_key]
            active[away_key] = (av, aw - gamma)
        active = {k: vw for k, vw in active.items() if vw[1] > 1e-15}

    h, _ = _floored_h_and_grad(p, obj.mode, x, r_floor)
    warnings.warn(
        f"optimal_rate stopped at duality gap {gap:.3e} > tol {tol:.3e} "
        f"after {max_iter} iterations",
        RuntimeWarning,
    )
    return OptimalRateResult(x, h, gap, iterations, False, tuple(int(k) for k in starved))


# ---------------------------------------------------------------------------
# Membership by min-norm-point projection


@dataclass(frozen=True)
class MembershipResult:
    inside: bool
    distance: float
    projection: np.ndarray
    direction: np.ndarray | None
    violation: float


def _affine_minimizer(vertices: list[np.ndarray], y: np.ndarray) -> np.ndarray:
    """Coefficients alpha (sum 1, sign-free) minimizing ||sum a_i v_i - y||."""
    b = np.stack(vertices, axis=1)
    m = b.shape[1]
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = b.T @ b
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.concatenate([b.T @ y, [1.0]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:m]


def _project_onto_region(model: RateRegionModel, y: np.ndarray, max_major: int | None = None):
    """Wolfe's min-norm-point scheme: project y onto the region.

    Maintains a corral of vertices from the linear oracle and repeatedly
    replaces the iterate by the best point of the corral's convex hull;
    terminates when no vertex improves the support function, i.e. at the
    exact projection up to floating point.
    """
    n = model.n_clients
    if max_major is None:
        max_major = 16 * n + 64
    x = linear_max_oracle(model, y)
    vertices = [x]
    lam = np.array([1.0])
    scale = max(1.0, float(y @ y))
    for _ in range(max_major):
        g = x - y
        v = linear_max_oracle(model, -g)
        if float(g @ x) - float(g @ v) <= 1e-12 * scale:
            break
        if any(np.array_equal(v, u) for u in vertices):
            break  # numerically stalled; x is as good as the corral gets
        vertices.append(v)
        lam = np.append(lam, 0.0)
        while True:
            alpha = _affine_minimizer(vertices, y)
            if np.all(alpha >= -1e-12):
                lam = np.clip(alpha, 0.0, None)
                lam /= lam.sum()
                break
            shrink = lam - alpha
            mask = (alpha < 0) & (shrink > 1e-15)
            theta = float(np.min(lam[mask] / shrink[mask]))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-14
            if keep.sum() == 0:
                keep[int(np.argmax(lam))] = True
            vertices = [v for v, k in zip(vertices, keep) if k]
            lam = lam[keep]
            lam = np.clip(lam, 0.0, None)
            lam /= lam.sum()
        x = np.stack(vertices, axis=1) @ lam
    return x


def membership(model: RateRegionModel, r: np.ndarray, tol: float = 1e-6) -> MembershipResult:
    """Decide whether r is an achievable rate (within tol, Euclidean).

    Projects r onto the region; if the residual exceeds ``tol`` the result
    carries a separating direction d with d . r > max over the region of
    d . r', and the size of that violation.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (model.n_clients,) or not np.all(np.isfinite(r)):
        raise ValueError("r must be a finite vector of length n_clients")
    x = _project_onto_region(model, r)
    dist = float(np.linalg.norm(r - x))
    if dist <= tol:
        return MembershipResult(True, dist, x, None, 0.0)
    d = (r - x) / dist
    best = linear_max_oracle(model, d)
    violation = float(d @ r) - float(d @ best)
    return MembershipResult(False, dist, x, d, violation)


# ---------------------------------------------------------------------------
# Policy-table builders (fixtures for tests and verification)


def random_policy_table(
    model: RateRegionModel, rng: np.random.Generator, max_sets_per_outcome: int = 512
) -> PolicyTable:
    """Dirichlet-random policy over every outcome's feasible subsets."""
    entries: dict[PatternKey, tuple[tuple[Pattern, float], ...]] = {}
    for i, (pattern, cap, _) in enumerate(model.dist.outcomes):
        sets = list(itertools.islice(model.feasible_sets(i), max_sets_per_outcome + 1))
        if len(sets) > max_sets_per_outcome:
            raise ValueError("outcome has too many feasible subsets for a dense table")
        weights = rng.dirichlet(np.ones(len(sets)))
        entries[(pattern, cap)] = tuple(zip(sets, (float(w) for w in weights)))
    return PolicyTable(model.n_clients, entries)


def mix_tables(a: PolicyTable, b: PolicyTable, weight: float) -> PolicyTable:
    """Pointwise convex mixture weight*a + (1-weight)*b."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    if a.n_clients != b.n_clients:
        raise ValueError("tables disagree on the number of clients")
    if set(a.entries) != set(b.entries):
        raise ValueError("tables cover different configurations")
    entries: dict[PatternKey, tuple[tuple[Pattern, float], ...]] = {}
    for key in a.entries:
        acc: dict[Pattern, float] = {}
        for subset, f in a.entries[key]:
            acc[subset] = acc.get(subset, 0.0) + weight * f
        for subset, f in b.entries[key]:
            acc[subset] = acc.get(subset, 0.0) + (1.0 - weight) * f
        entries[key] = tuple(sorted(acc.items()))
    return PolicyTable(a.n_clients, entries)
