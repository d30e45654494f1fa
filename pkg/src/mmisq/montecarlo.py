"""Path sampling, conditional and importance-sampling estimators.

The exceedance probability equals the expectation of the deterministic
Poisson tail evaluated at the random parameter, so every run scores
``tail(ceil(N a), N f(path))`` instead of sampling the count itself.
That conditional estimator is logarithmically efficient on its own; the
importance-sampling variant additionally conditions on a tube of paths
hugging the maximizing trajectory, sampling sojourns from truncated
exponentials and reweighting with an explicit likelihood ratio.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    BracketFailureError,
    DZeroError,
    InvalidWindowsError,
    NotRegularError,
)
from .functionals import (
    ExtremalPathInfo,
    PathRealization,
    extremal_path,
    phi_batch,
    psi_batch,
)
from .model import ValidatedModel, Variant, initial_weights
from .asymptotics import exact_asymptotic, exceedance_count, poisson_tail, rate

#: fixed shard size; results are bit-identical for any thread count
SHARD_SIZE = 1 << 18

_Z95 = 1.959963984540054
_Z99 = 2.5758293035489004


@dataclass(frozen=True)
class RngStream:
    """Reproducible random source: (seed, stream) pins the sequence."""

    seed: int
    stream: int = 0

    def generator(self, *subkeys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed,
                                    spawn_key=(self.stream, *subkeys))
        return np.random.default_rng(ss)


def _as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(seed=int(rng))


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a normal-approximation confidence interval."""

    mean: float
    half_width_95: float
    n_samples: int
    second_moment: float

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean ** 2, 0.0)

    @property
    def rel_half_width(self) -> float:
        return self.half_width_95 / self.mean if self.mean > 0 else math.inf

    def ci(self, z: float = _Z95) -> tuple[float, float]:
        hw = self.half_width_95 * z / _Z95
        return (max(self.mean - hw, 0.0), self.mean + hw)

    def overlaps(self, other: "Estimate", z: float = _Z95) -> bool:
        lo_a, hi_a = self.ci(z)
        lo_b, hi_b = other.ci(z)
        return lo_a <= hi_b and lo_b <= hi_a


def _estimate_from_moments(total: float, total_sq: float, n: int) -> Estimate:
    mean = total / n
    second = total_sq / n
    var = max(second - mean * mean, 0.0) * (n / max(n - 1, 1))
    hw = _Z95 * math.sqrt(var / n)
    return Estimate(mean=mean, half_width_95=hw, n_samples=n, second_moment=second)


# ---------------------------------------------------------------------------
# Background-chain sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathBatch:
    """Padded batch of trajectories on [0, t].

    ``edges[:, 0] = 0`` and trailing segments are padded to zero length;
    ``last_sojourn`` is the uncensored draw of the sojourn in progress at
    the horizon, which the tube membership test needs.
    """

    t: float
    states: np.ndarray        # (n, K)
    edges: np.ndarray         # (n, K + 1)
    n_jumps: np.ndarray       # (n,)
    last_sojourn: np.ndarray  # (n,)


def sample_path_batch(model: ValidatedModel, t: float, n: int,
                      rng: np.random.Generator) -> PathBatch:
    """Sample ``n`` independent trajectories, vectorized in waves."""
    d = model.d
    w0 = initial_weights(model)
    q = model.q
    jump_cum = None
    if d > 1:
        P = model.Q.copy()
        np.fill_diagonal(P, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            P = P / q[:, None]
        P[q == 0] = 0.0
        jump_cum = np.cumsum(P, axis=1)

    cur = rng.choice(d, size=n, p=w0) if d > 1 else np.zeros(n, dtype=np.int64)
    clock = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    state_cols = [cur.copy()]
    edge_cols = [np.zeros(n)]
    n_jumps = np.zeros(n, dtype=np.int64)
    last_sojourn = np.full(n, np.inf)

    while np.any(alive):
        idx = np.flatnonzero(alive)
        qs = q[cur[idx]]
        u = np.full(idx.shape[0], np.inf)
        pos = qs > 0
        u[pos] = rng.exponential(1.0 / qs[pos])
        t_next = clock[idx] + u
        crossed = t_next >= t
        done = idx[crossed]
        last_sojourn[done] = u[crossed]
        alive[done] = False

        moving = idx[~crossed]
        if moving.size == 0:
            break
        r = rng.random(moving.shape[0])
        nxt = (jump_cum[cur[moving]] > r[:, None]).argmax(axis=1)
        clock[moving] = t_next[~crossed]
        cur[moving] = nxt
        n_jumps[moving] += 1

        # pad finished paths by repeating their final state at the horizon
        col_state = state_cols[-1].copy()
        col_state[moving] = nxt
        col_edge = np.full(n, t)
        col_edge[moving] = clock[moving]
        state_cols.append(col_state)
        edge_cols.append(col_edge)

    states = np.stack(state_cols, axis=1)
    edges_mid = np.stack(edge_cols[1:], axis=1) if len(edge_cols) > 1 \
        else np.empty((n, 0))
    edges = np.concatenate([np.zeros((n, 1)), edges_mid, np.full((n, 1), t)], axis=1)
    return PathBatch(t=t, states=states, edges=edges, n_jumps=n_jumps,
                     last_sojourn=last_sojourn)


def sample_path(model: ValidatedModel, t: float, rng) -> PathRealization:
    """Sample one trajectory: exponential sojourns, embedded-chain jumps."""
    gen = rng if isinstance(rng, np.random.Generator) else _as_stream(rng).generator()
    batch = sample_path_batch(model, t, 1, gen)
    k = int(batch.n_jumps[0])
    return PathRealization(t=t, epochs=batch.edges[0, 1:k + 1],
                           states=batch.states[0, :k + 1])


def parameter_values(model: ValidatedModel, batch: PathBatch) -> np.ndarray:
    """Poisson parameters of a path batch under the model's variant."""
    if model.variant is Variant.I:
        return phi_batch(model, batch.states, batch.edges)
    return psi_batch(model, batch.states, batch.edges)


# ---------------------------------------------------------------------------
# Sharded reduction
# ---------------------------------------------------------------------------

def _sharded_moments(total_runs: int, shard_fn, threads: int = 1):
    """Sum and sum of squares of a scoring function over fixed shards.

    ``shard_fn(shard_index, shard_size)`` returns a score vector.  Shards
    have a fixed size, so the result is independent of ``threads``.
    """
    sizes = []
    remaining = total_runs
    while remaining > 0:
        sizes.append(min(SHARD_SIZE, remaining))
        remaining -= sizes[-1]

    def run(k):
        scores = shard_fn(k, sizes[k])
        return float(scores.sum()), float(np.square(scores).sum())

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]
    total = math.fsum(p[0] for p in parts)
    total_sq = math.fsum(p[1] for p in parts)
    return total, total_sq


# ---------------------------------------------------------------------------
# Conditional (mixed-Poisson) estimator
# ---------------------------------------------------------------------------

def naive_estimator(model: ValidatedModel, N: float, a: float, t: float,
                    M: int, rng, threads: int = 1,
                    debug_checks: bool = False) -> Estimate:
    """Average the Poisson tail at the sampled parameter over M paths."""
    if M < 2:
        raise ValueError("need at least two runs")
    stream = _as_stream(rng)
    k_level = exceedance_count(N, a)
    cap = None
    if debug_checks:
        cap = poisson_tail(k_level, N * extremal_path(model, t, "max").bound)

    def shard(idx, size):
        gen = stream.generator(0, idx)
        batch = sample_path_batch(model, t, size, gen)
        values = parameter_values(model, batch)
        scores = poisson_tail(k_level, N * values)
        if cap is not None and np.any(scores > cap * (1 + 1e-12) + 1e-300):
            raise AssertionError("per-run score exceeded the deterministic bound")
        return scores

    total, total_sq = _sharded_moments(M, shard, threads)
    return _estimate_from_moments(total, total_sq, M)


# ---------------------------------------------------------------------------
# Importance sampling on the tube around the maximizing path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ISConfig:
    """Tube half-width and run counts for the two-term estimator."""

    delta: float
    m1: int
    m2: int

    def __post_init__(self):
        if self.delta <= 0:
            raise InvalidWindowsError("delta must be positive")
        if self.m1 < 2 or self.m2 < 2:
            raise ValueError("need at least two runs per term")


def default_delta(info: ExtremalPathInfo) -> float:
    """Conservative tube half-width from the switch-epoch spacing."""
    if info.D == 0:
        raise DZeroError("the maximizing path does not jump")
    sbar = np.diff(np.concatenate(([0.0], info.switch_epochs)))
    gaps = np.concatenate((sbar, [info.horizon - info.switch_epochs[-1]]))
    return float(min(0.1 * sbar.min(), 0.45 * gaps.min() / 2.0))


def default_is_config(info: ExtremalPathInfo, m1: int, m2: int) -> ISConfig:
    return ISConfig(delta=default_delta(info), m1=m1, m2=m2)


@dataclass(frozen=True)
class _Tube:
    """Precomputed geometry of the sampling tube."""

    info: ExtremalPathInfo
    sbar: np.ndarray        # target sojourn lengths, length D
    lo: np.ndarray
    hi: np.ndarray
    final_min: float        # lower bound on the closing sojourn
    sigmas: np.ndarray      # window weights, length D + 1
    weight: float           # likelihood ratio, constant over the tube


def _build_tube(model: ValidatedModel, info: ExtremalPathInfo,
                cfg: ISConfig) -> _Tube:
    if info.D == 0:
        raise DZeroError("the maximizing path does not jump; "
                         "use the conditional estimator")
    if not info.regular:
        raise NotRegularError("zero transition rate along the maximizing path")
    t = info.horizon
    states = info.states
    sbar = np.diff(np.concatenate(([0.0], info.switch_epochs)))
    if np.any(sbar <= 2 * cfg.delta):
        raise InvalidWindowsError(
            "switch-epoch gaps must exceed twice the window half-width")
    lo = sbar - cfg.delta
    hi = sbar + cfg.delta
    final_min = t - info.switch_epochs[-1] + info.D * cfg.delta
    qs = model.q[states]
    sigmas = np.empty(info.D + 1)
    sigmas[:info.D] = np.exp(-qs[:info.D] * lo) - np.exp(-qs[:info.D] * hi)
    sigmas[info.D] = math.exp(-qs[info.D] * final_min)

    w0 = initial_weights(model)
    weight = float(w0[states[0]])
    for k in range(info.D):
        weight *= model.Q[states[k], states[k + 1]] / model.q[states[k]]
    weight *= float(np.prod(sigmas))
    return _Tube(info=info, sbar=sbar, lo=lo, hi=hi, final_min=final_min,
                 sigmas=sigmas, weight=weight)


def _sample_tube_parameters(model, tube, n, gen):
    """Draw tube sojourns (truncated exponentials, inverse CDF) and return
    the parameter value of each resulting path."""
    info = tube.info
    D = info.D
    states = info.states
    qs = model.q[states[:D]]
    u = gen.random((n, D))
    e_lo = np.exp(-qs * tube.lo)
    sojourns = -np.log(e_lo - u * (e_lo - np.exp(-qs * tube.hi))) / qs
    jump_times = np.cumsum(sojourns, axis=1)
    edges = np.concatenate([np.zeros((n, 1)), jump_times,
                            np.full((n, 1), info.horizon)], axis=1)
    states_rep = np.broadcast_to(states, (n, D + 1))
    if model.variant is Variant.I:
        return phi_batch(model, states_rep, edges)
    return psi_batch(model, states_rep, edges)


def _tube_membership(tube: _Tube, batch: PathBatch) -> np.ndarray:
    """Which sampled paths fall inside the tube.

    Membership constrains the first D sojourns to the windows, the
    visited sequence to the maximizing one, and the closing sojourn
    (uncensored) to run at least to the horizon plus slack; paths with
    extra jumps violate that automatically.
    """
    info = tube.info
    D = info.D
    n = batch.states.shape[0]
    member = batch.n_jumps == D
    if not np.any(member):
        return member
    K = batch.states.shape[1]
    if K < D + 1:
        return np.zeros(n, dtype=bool)
    seq_ok = np.all(batch.states[:, :D + 1] == tube.info.states[None, :], axis=1)
    member &= seq_ok
    sojourns = np.diff(batch.edges[:, :D + 1], axis=1)
    member &= np.all((sojourns > tube.lo) & (sojourns < tube.hi), axis=1)
    member &= batch.last_sojourn >= tube.final_min
    return member


def is_estimator(model: ValidatedModel, N: float, a: float, t: float,
                 cfg: ISConfig | None, rng, threads: int = 1,
                 info: ExtremalPathInfo | None = None,
                 debug_checks: bool = False) -> Estimate:
    """Two-term estimator: plain runs off the tube, tilted runs on it.

    Off-tube paths are sampled under the model law and scored with the
    tube indicator zeroed out; on-tube paths are generated with the
    deterministic maximizing state sequence and windowed sojourns, and
    carry the constant likelihood ratio of the tube.  The terms add up
    to an unbiased estimate with a combined confidence interval.
    """
    stream = _as_stream(rng)
    if info is None:
        info = extremal_path(model, t, "max")
    if cfg is None:
        cfg = default_is_config(info, m1=1 << 17, m2=1 << 17)
    tube = _build_tube(model, info, cfg)
    k_level = exceedance_count(N, a)
    cap = poisson_tail(k_level, N * info.bound)

    def shard_plain(idx, size):
        gen = stream.generator(0, idx)
        batch = sample_path_batch(model, t, size, gen)
        values = parameter_values(model, batch)
        scores = poisson_tail(k_level, N * values)
        scores[_tube_membership(tube, batch)] = 0.0
        return scores

    def shard_tilted(idx, size):
        gen = stream.generator(1, idx)
        values = _sample_tube_parameters(model, tube, size, gen)
        if debug_checks and np.any(values > info.bound * (1 + 1e-9)):
            raise AssertionError("tube path exceeded the attainable maximum")
        return poisson_tail(k_level, N * values) * tube.weight

    tot1, sq1 = _sharded_moments(cfg.m1, shard_plain, threads)
    tot2, sq2 = _sharded_moments(cfg.m2, shard_tilted, threads)
    e1 = _estimate_from_moments(tot1, sq1, cfg.m1)
    e2 = _estimate_from_moments(tot2, sq2, cfg.m2)
    if debug_checks and not (0.0 < tube.weight <= 1.0 + 1e-12):
        raise AssertionError("likelihood ratio escaped (0, 1]")
    if debug_checks and e1.mean > cap * (1 + 1e-12):
        raise AssertionError("off-tube mean exceeded the deterministic bound")

    mean = e1.mean + e2.mean
    var = e1.variance / cfg.m1 + e2.variance / cfg.m2
    hw = _Z95 * math.sqrt(var)
    second = e1.second_moment + 2.0 * e1.mean * e2.mean + e2.second_moment
    return Estimate(mean=mean, half_width_95=hw,
                    n_samples=cfg.m1 + cfg.m2, second_moment=second)


def combined_estimator(model: ValidatedModel, N: float, a: float, t: float,
                       cfg: ISConfig | None, rng, threads: int = 1,
                       info: ExtremalPathInfo | None = None) -> Estimate:
    """Paired form: each run adds an off-tube score and a tilted score."""
    stream = _as_stream(rng)
    if info is None:
        info = extremal_path(model, t, "max")
    if cfg is None:
        cfg = default_is_config(info, m1=1 << 17, m2=1 << 17)
    if cfg.m1 != cfg.m2:
        raise ValueError("the paired form uses a single run count, m1 == m2")
    tube = _build_tube(model, info, cfg)
    k_level = exceedance_count(N, a)

    def shard(idx, size):
        gen_p = stream.generator(0, idx)
        batch = sample_path_batch(model, t, size, gen_p)
        values = parameter_values(model, batch)
        scores = poisson_tail(k_level, N * values)
        scores[_tube_membership(tube, batch)] = 0.0
        gen_q = stream.generator(1, idx)
        tilted = _sample_tube_parameters(model, tube, size, gen_q)
        return scores + poisson_tail(k_level, N * tilted) * tube.weight

    total, total_sq = _sharded_moments(cfg.m1, shard, threads)
    return _estimate_from_moments(total, total_sq, cfg.m1)


# ---------------------------------------------------------------------------
# Efficiency diagnostics and capacity search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EfficiencyDiagnostic:
    """Fitted exponential decay rates of an estimator across N.

    ``mean_rate`` and ``second_moment_rate`` divide out the known
    polynomial orders before fitting, so they estimate the pure
    exponential rates; the ``raw`` variants fit the bare logarithms.
    Logarithmic efficiency corresponds to
    ``second_moment_rate >= 2 * mean_rate`` up to tolerance.
    """

    N_values: tuple[float, ...]
    estimates: tuple[Estimate, ...]
    mean_power: float
    second_moment_power: float
    mean_rate: float
    second_moment_rate: float
    mean_rate_raw: float
    second_moment_rate_raw: float

    def rows(self):
        for N, est in zip(self.N_values, self.estimates):
            yield (N, est.mean, est.half_width_95, est.rel_half_width,
                   est.second_moment)


def _fit_rate(N_arr, values, power):
    y = np.log(values) + power * np.log(N_arr)
    slope = np.polyfit(N_arr, y, 1)[0]
    return -float(slope)


def efficiency_diagnostic(model: ValidatedModel, a: float, t: float,
                          N_values, rng, M: int = 1 << 18,
                          method: str = "naive",
                          cfg: ISConfig | None = None,
                          threads: int = 1) -> EfficiencyDiagnostic:
    """Estimate p(N) across ``N_values`` and fit the decay rates."""
    N_arr = np.asarray(sorted(float(N) for N in N_values))
    if N_arr.shape[0] < 3:
        raise ValueError("need at least three N values for a fit")
    stream = _as_stream(rng)
    info = extremal_path(model, t, "max")
    D = info.D

    estimates = []
    for j, N in enumerate(N_arr):
        sub = RngStream(seed=stream.seed, stream=stream.stream + 1000 + j)
        if method == "naive":
            est = naive_estimator(model, N, a, t, M, sub, threads=threads)
        elif method == "is":
            est = is_estimator(model, N, a, t, cfg, sub, threads=threads, info=info)
        elif method == "combined":
            est = combined_estimator(model, N, a, t, cfg, sub, threads=threads,
                                     info=info)
        else:
            raise ValueError("unknown method %r" % method)
        estimates.append(est)

    mean_power = (D + 1) / 2.0
    sm_power = (D + 2) / 2.0
    means = np.array([e.mean for e in estimates])
    seconds = np.array([e.second_moment for e in estimates])
    return EfficiencyDiagnostic(
        N_values=tuple(N_arr), estimates=tuple(estimates),
        mean_power=mean_power, second_moment_power=sm_power,
        mean_rate=_fit_rate(N_arr, means, mean_power),
        second_moment_rate=_fit_rate(N_arr, seconds, sm_power),
        mean_rate_raw=_fit_rate(N_arr, means, 0.0),
        second_moment_rate_raw=_fit_rate(N_arr, seconds, 0.0))


@dataclass(frozen=True)
class CapacityResult:
    """Smallest integer capacity whose exceedance estimate is below eps."""

    a: float
    servers: int
    epsilon: float
    evaluations: tuple[tuple[int, float, float], ...]  # (k, estimate, half-width)


def _estimate_at_level(model, N, k, t, stream, substream, method, cfg, info,
                       runs, max_runs, epsilon, threads):
    """Adaptive estimate of p at integer level k: double runs until the
    confidence interval clears the target (or the budget is exhausted)."""
    a_level = k / N
    if method == "asymptotic":
        p = exact_asymptotic(model, t, a_level).approx_prob(N)
        return p, 0.0
    m = runs
    attempt = 0
    while True:
        sub = RngStream(seed=stream.seed,
                        stream=stream.stream + 7919 * substream + attempt)
        if method == "is":
            try:
                cfg_m = cfg if cfg is not None else default_is_config(info, m, m)
                cfg_m = ISConfig(delta=cfg_m.delta, m1=m, m2=m)
                est = is_estimator(model, N, a_level, t, cfg_m, sub,
                                   threads=threads, info=info)
            except DZeroError:
                est = naive_estimator(model, N, a_level, t, m, sub, threads=threads)
        else:
            est = naive_estimator(model, N, a_level, t, m, sub, threads=threads)
        clear = est.mean + est.half_width_95 < epsilon \
            or est.mean - est.half_width_95 > epsilon
        if clear or 2 * m > max_runs:
            return est.mean, est.half_width_95
        m *= 2
        attempt += 1


def capacity_search(model: ValidatedModel, N: float, epsilon: float, t: float,
                    rng, cfg: ISConfig | None = None, method: str = "is",
                    a_hi: float | None = None, runs: int = 1 << 16,
                    max_runs: int = 1 << 21, threads: int = 1) -> CapacityResult:
    """Smallest level a (and integer count N a) with P(exceedance) < eps.

    The exceedance probability is a step function of the integer
    threshold, so the search bisects on the count k = ceil(N a).  The
    upper bracket comes from the exponential bound unless ``a_hi`` is
    supplied, in which case it is checked and rejected if too low.
    """
    if not (0 < epsilon < 1):
        raise ValueError("epsilon must lie in (0, 1)")
    stream = _as_stream(rng)
    info = extremal_path(model, t, "max")
    a_plus = info.bound

    k_lo = int(math.floor(N * a_plus)) + 1
    evaluations = []

    def p_at(k, substream):
        est, hw = _estimate_at_level(model, N, k, t, stream, substream, method,
                                     cfg, info, runs, max_runs, epsilon, threads)
        evaluations.append((int(k), float(est), float(hw)))
        return est

    if p_at(k_lo, 0) < epsilon:
        return CapacityResult(a=k_lo / N, servers=k_lo, epsilon=epsilon,
                              evaluations=tuple(evaluations))

    if a_hi is not None:
        k_hi = exceedance_count(N, a_hi)
        if p_at(k_hi, 1) >= epsilon:
            raise BracketFailureError(
                "estimate at the upper bracket is still above epsilon")
    else:
        # exponential upper bound guarantees the bracket
        k_hi = k_lo + 1
        while math.exp(-N * rate(k_hi / N, a_plus).I) >= 0.1 * epsilon:
            k_hi = max(k_hi + 1, int(1.05 * k_hi))

    lo, hi = k_lo, k_hi
    substream = 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if p_at(mid, substream) < epsilon:
            hi = mid
        else:
            lo = mid
        substream += 1
    return CapacityResult(a=hi / N, servers=int(hi), epsilon=epsilon,
                          evaluations=tuple(evaluations))
