"""Poisson-parameter functionals, extremal paths, and atom bookkeeping.

The random Poisson parameter of the queue is a path functional of the
background chain: ``phi`` for variant I (hazard follows the current
state) and ``psi`` for variant II (hazard frozen at arrival).  This
module evaluates the functionals in closed form, constructs the paths
attaining their extreme values, and derives the local geometry at the
upper boundary: curvature coefficients, boundary-layer prefactors, and
the catalog of point masses produced by jump-free trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotRegularError, TieUnresolvedError, UnsupportedDegeneracyError
from .model import ValidatedModel, Variant, initial_weights

#: relative tolerance treating two (lam, mu) pairs as coinciding curves
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class PathRealization:
    """Piecewise-constant background trajectory on [0, t].

    ``epochs`` are the jump times, strictly increasing inside (0, t);
    ``states`` lists the visited states (0-based), one longer than
    ``epochs``.
    """

    t: float
    epochs: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        epochs = np.atleast_1d(np.asarray(self.epochs, dtype=float)).reshape(-1)
        states = np.atleast_1d(np.asarray(self.states, dtype=np.int64)).reshape(-1)
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "states", states)
        if self.t < 0:
            raise ValueError("horizon must be nonnegative")
        if states.shape[0] != epochs.shape[0] + 1:
            raise ValueError("need exactly one more state than jump epochs")
        if epochs.size:
            if np.any(np.diff(epochs) <= 0):
                raise ValueError("jump epochs must be strictly increasing")
            if epochs[0] <= 0 or epochs[-1] >= self.t:
                raise ValueError("jump epochs must lie strictly inside (0, t)")
            if np.any(states[1:] == states[:-1]):
                raise ValueError("consecutive states must differ")
        if np.any(states < 0):
            raise ValueError("states are 0-based nonnegative indices")

    @property
    def n_jumps(self) -> int:
        return self.epochs.shape[0]


@dataclass(frozen=True)
class ExtremalPathInfo:
    """Path attaining the extreme value of the parameter functional.

    ``states`` is the visited sequence in time order (0-based original
    labels), ``switch_epochs`` the D change points, ``bound`` the extreme
    parameter value, and ``regular`` records whether every transition
    along the sequence has positive rate.  ``omegas`` holds the boundary
    curvature coefficients for variant-II maximizing paths with D >= 1.
    """

    direction: str
    variant: Variant
    horizon: float
    switch_epochs: np.ndarray
    states: np.ndarray
    bound: float
    regular: bool
    omegas: np.ndarray | None = None

    @property
    def D(self) -> int:
        return self.switch_epochs.shape[0]

    def to_path(self) -> PathRealization:
        return PathRealization(t=self.horizon, epochs=self.switch_epochs.copy(),
                               states=self.states.copy())

    def to_dict(self) -> dict:
        """JSON-ready form; states are reported 1-based as in model files."""
        return {
            "direction": self.direction,
            "variant": self.variant.value,
            "t": self.horizon,
            "D": int(self.D),
            "switch_epochs": [float(s) for s in self.switch_epochs],
            "states": [int(s) + 1 for s in self.states],
            "bound": float(self.bound),
            "regular": bool(self.regular),
            "omegas": None if self.omegas is None else [float(w) for w in self.omegas],
        }


def extremal_info_from_dict(doc: dict) -> ExtremalPathInfo:
    """Inverse of :meth:`ExtremalPathInfo.to_dict`."""
    omegas = doc.get("omegas")
    return ExtremalPathInfo(
        direction=doc["direction"],
        variant=Variant(doc["variant"]),
        horizon=float(doc["t"]),
        switch_epochs=np.asarray(doc["switch_epochs"], dtype=float),
        states=np.asarray(doc["states"], dtype=np.int64) - 1,
        bound=float(doc["bound"]),
        regular=bool(doc["regular"]),
        omegas=None if omegas is None else np.asarray(omegas, dtype=float),
    )


@dataclass(frozen=True)
class BoundaryPrefactors:
    """Leading coefficients of the law near the upper boundary.

    ``kappa_bar`` multiplies delta^(D/2) in the tail probability of the
    parameter being within delta of its maximum; ``kappa_hat`` is the
    matching density coefficient, (D/2) * kappa_bar.
    """

    kappa_bar: float
    kappa_hat: float


@dataclass(frozen=True)
class Atom:
    """Point mass of the parameter law from a jump-free scenario."""

    state: int
    location: float
    mass: float


@dataclass(frozen=True)
class AtomCatalog:
    """All point masses of the parameter distribution at one horizon."""

    variant: Variant
    horizon: float
    atoms: tuple[Atom, ...]

    @property
    def total_mass(self) -> float:
        return float(sum(a.mass for a in self.atoms))

    def mass_at(self, location: float, rtol: float = 1e-9) -> float:
        """Total mass sitting at ``location`` (relative tolerance match)."""
        tol = rtol * max(abs(location), 1.0)
        return float(sum(a.mass for a in self.atoms
                         if abs(a.location - location) <= tol))

    def mass_from(self, a: float) -> float:
        """Total mass at locations >= a."""
        return float(sum(at.mass for at in self.atoms if at.location >= a))

    def to_dicts(self) -> list[dict]:
        return [{"state": a.state + 1, "location": float(a.location),
                 "mass": float(a.mass)} for a in self.atoms]


def atom_catalog_from_dicts(variant, horizon, docs) -> AtomCatalog:
    atoms = tuple(Atom(state=int(d["state"]) - 1, location=float(d["location"]),
                       mass=float(d["mass"])) for d in docs)
    return AtomCatalog(variant=Variant(variant), horizon=float(horizon), atoms=atoms)


# ---------------------------------------------------------------------------
# Functional evaluation
# ---------------------------------------------------------------------------

def _segments(path: PathRealization):
    """Yield (state, start, end) covering [0, t]."""
    edges = np.concatenate(([0.0], path.epochs, [path.t]))
    return path.states, edges


def phi(path: PathRealization, model: ValidatedModel) -> float:
    """Variant-I parameter: arrivals discounted by the running hazard.

    Each constant segment contributes (lam/mu)(1 - exp(-mu ds)) further
    discounted by the hazard accumulated over the remaining segments, so
    the evaluation is exact up to floating point.
    """
    states, edges = _segments(path)
    total = 0.0
    suffix = 0.0  # hazard integral from the segment end to t
    for k in range(states.shape[0] - 1, -1, -1):
        i = states[k]
        ds = edges[k + 1] - edges[k]
        lam_i, mu_i = model.lam[i], model.mu[i]
        total += (lam_i / mu_i) * (1.0 - math.exp(-mu_i * ds)) * math.exp(-suffix)
        suffix += mu_i * ds
    return total


def psi(path: PathRealization, model: ValidatedModel) -> float:
    """Variant-II parameter: arrivals discounted at their frozen rate."""
    states, edges = _segments(path)
    t = path.t
    total = 0.0
    for k in range(states.shape[0]):
        i = states[k]
        lam_i, mu_i = model.lam[i], model.mu[i]
        total += (lam_i / mu_i) * (math.exp(-mu_i * (t - edges[k + 1]))
                                   - math.exp(-mu_i * (t - edges[k])))
    return total


def phi_batch(model, states, edges):
    """Vectorized ``phi`` over padded path arrays.

    ``states`` has shape (n, K); ``edges`` has shape (n, K + 1) with
    edges[:, 0] = 0 and trailing segments padded to zero length.
    """
    lam = model.lam[states]
    mu = model.mu[states]
    ds = edges[:, 1:] - edges[:, :-1]
    mu_ds = mu * ds
    # hazard accumulated strictly after each segment
    suffix = np.cumsum(mu_ds[:, ::-1], axis=1)[:, ::-1] - mu_ds
    seg = (lam / mu) * (-np.expm1(-mu_ds)) * np.exp(-suffix)
    return seg.sum(axis=1)


def psi_batch(model, states, edges):
    """Vectorized ``psi`` over padded path arrays (see ``phi_batch``)."""
    lam = model.lam[states]
    mu = model.mu[states]
    t = edges[:, -1:]
    seg = (lam / mu) * (np.exp(-mu * (t - edges[:, 1:]))
                        - np.exp(-mu * (t - edges[:, :-1])))
    return seg.sum(axis=1)


def parameter_functional(model: ValidatedModel):
    """The functional matching the model variant (phi for I, psi for II)."""
    return phi if model.variant is Variant.I else psi


# ---------------------------------------------------------------------------
# Extremal paths
# ---------------------------------------------------------------------------

def _near_duplicate_partners(model):
    """States whose (lam, mu) pair coincides with another within 1e-12."""
    lam, mu = model.lam, model.mu
    d = model.d
    flagged = set()
    for i in range(d):
        for j in range(i + 1, d):
            scale_l = max(abs(lam[i]), abs(lam[j]), 1.0)
            scale_m = max(abs(mu[i]), abs(mu[j]), 1.0)
            if abs(lam[i] - lam[j]) <= _TIE_RTOL * scale_l \
                    and abs(mu[i] - mu[j]) <= _TIE_RTOL * scale_m:
                flagged.add(i)
                flagged.add(j)
    return flagged


def _envelope_in_remaining_time(model, t, direction):
    """Breakpoints of the extremal envelope of lam_i * exp(-mu_i u).

    Works in u = time remaining, where the curves are lines in log space.
    Returns segments [(u_k, state_k)] meaning state_k is extremal on
    (u_k, u_{k+1}), with u_0 = 0 and an implicit final edge at u = t.
    """
    lam, mu = model.lam, model.mu
    d = model.d
    maximize = direction == "max"

    candidates = np.flatnonzero(lam > 0)
    zero_states = np.flatnonzero(lam == 0)
    if not maximize and zero_states.size:
        if zero_states.size > 1:
            raise TieUnresolvedError(
                "states %s all have zero arrival rate" % list(zero_states))
        return [(0.0, int(zero_states[0]))]
    if candidates.size == 0:
        if d > 1:
            raise TieUnresolvedError("all states have zero arrival rate")
        return [(0.0, 0)]

    logl = np.log(lam[candidates])

    # at u -> 0+ the extremal state has extreme lam; among (near-)equal lam
    # the winner for u > 0 has the extreme decay rate
    order = sorted(
        range(candidates.size),
        key=lambda k: ((-logl[k] if maximize else logl[k]),
                       (mu[candidates[k]] if maximize else -mu[candidates[k]])))
    cur = order[0]
    segments = [(0.0, int(candidates[cur]))]
    u_cur = 0.0
    guard = 0
    while guard <= d:
        guard += 1
        best_u = None
        best_k = None
        ci = candidates[cur]
        for k in range(candidates.size):
            cj = candidates[k]
            if cj == ci:
                continue
            overtakes = mu[cj] < mu[ci] if maximize else mu[cj] > mu[ci]
            if not overtakes:
                continue
            u_x = (logl[cur] - logl[k]) / (mu[ci] - mu[cj])
            if u_x <= u_cur + 1e-15 * max(t, 1.0) or u_x >= t:
                continue
            if best_u is None or u_x < best_u - 1e-15 * max(t, 1.0):
                best_u, best_k = u_x, k
            elif abs(u_x - best_u) <= 1e-15 * max(t, 1.0):
                # simultaneous crossing: keep the eventual winner
                bj = candidates[best_k]
                if (mu[cj] < mu[bj]) if maximize else (mu[cj] > mu[bj]):
                    best_k = k
        if best_u is None:
            break
        cur = best_k
        u_cur = best_u
        segments.append((float(u_cur), int(candidates[cur])))
    return segments


def _tube_value(lam_i, mu_i, u_lo, u_hi):
    """Integral of lam_i exp(-mu_i u) over [u_lo, u_hi]."""
    return (lam_i / mu_i) * (math.exp(-mu_i * u_lo) - math.exp(-mu_i * u_hi))


def _is_regular(model, states) -> bool:
    return all(model.Q[states[k], states[k + 1]] > 0
               for k in range(len(states) - 1))


def extremal_path_model2(model: ValidatedModel, t: float,
                         direction: str = "max") -> ExtremalPathInfo:
    """Extremal path of the variant-II functional on [0, t].

    The pointwise envelope of the curves lam_i exp(-(t-s) mu_i) attains
    the extreme; switch epochs are pairwise curve intersections filtered
    to where the envelope actually changes state.  Raises
    ``TieUnresolvedError`` when two distinct states share the envelope on
    an interval of positive length.
    """
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    if t <= 0:
        raise ValueError("horizon must be positive")
    segments = _envelope_in_remaining_time(model, t, direction)

    flagged = _near_duplicate_partners(model)
    for _, state in segments:
        if state in flagged:
            raise TieUnresolvedError(
                "state %d shares its rate pair with another state on the envelope"
                % state)

    bound = 0.0
    us = [u for u, _ in segments] + [t]
    for k, (_, state) in enumerate(segments):
        bound += _tube_value(model.lam[state], model.mu[state], us[k], us[k + 1])

    # convert remaining-time segments to a forward-time trajectory
    states_time = np.array([s for _, s in segments[::-1]], dtype=np.int64)
    switch_epochs = np.array([t - u for u, _ in segments[:0:-1]], dtype=float)

    info = ExtremalPathInfo(
        direction=direction, variant=Variant.II, horizon=float(t),
        switch_epochs=switch_epochs, states=states_time, bound=float(bound),
        regular=_is_regular(model, states_time))
    if direction == "max" and info.D >= 1:
        info = ExtremalPathInfo(
            direction=info.direction, variant=info.variant, horizon=info.horizon,
            switch_epochs=info.switch_epochs, states=info.states,
            bound=info.bound, regular=info.regular,
            omegas=_omega_values(info, model, check=True))
    return info


def extremal_path_model1(model: ValidatedModel, t: float,
                         direction: str = "max") -> ExtremalPathInfo:
    """Extremal path of the variant-I functional on [0, t].

    Solves the greedy feedback dynamics x' = max_i (lam_i - mu_i x)
    (min for direction 'min'), x(0) = 0, whose pointwise optimal control
    is overall optimal because the flow preserves order.  Every piece is
    integrated in closed form and switch times are the exact crossings
    of the control breakpoints, so no step-size control is needed.
    """
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    if t <= 0:
        raise ValueError("horizon must be positive")
    lam, mu = model.lam, model.mu
    d = model.d
    maximize = direction == "max"

    def slopes(x):
        return lam - mu * x

    def pick(x):
        vals = slopes(x)
        best = np.max(vals) if maximize else np.min(vals)
        tied = np.flatnonzero(np.abs(vals - best) <= 1e-14 * max(1.0, abs(best)))
        if tied.size == 1:
            return int(tied[0])
        # the state keeping the lead as x grows has extremal decay
        key = mu[tied]
        idx = np.argmin(key) if maximize else np.argmax(key)
        return int(tied[idx])

    x = 0.0
    s = 0.0
    cur = pick(0.0)
    states = [cur]
    switches: list[float] = []
    for _ in range(d + 1):
        x_inf = lam[cur] / mu[cur]
        if abs(x_inf - x) <= 1e-300:
            break  # resting at the fixed point of the active piece
        # first breakpoint ahead where another line overtakes the active one
        best_xb = None
        for j in range(d):
            if j == cur:
                continue
            overtakes = mu[j] < mu[cur] if maximize else mu[j] > mu[cur]
            if not overtakes:
                continue
            xb = (lam[j] - lam[cur]) / (mu[j] - mu[cur])
            if xb <= x + 1e-15 * max(1.0, abs(x)) or xb >= x_inf:
                continue
            if best_xb is None or xb < best_xb[0]:
                best_xb = (xb, j)
            elif xb == best_xb[0]:
                better = mu[j] < mu[best_xb[1]] if maximize else mu[j] > mu[best_xb[1]]
                if better:
                    best_xb = (xb, j)
        if best_xb is None:
            break
        xb, j = best_xb
        ds = -math.log((x_inf - xb) / (x_inf - x)) / mu[cur]
        if s + ds >= t:
            break
        s += ds
        x = xb
        switches.append(s)
        states.append(j)
        cur = j
    x_inf = lam[cur] / mu[cur]
    x_final = x_inf - (x_inf - x) * math.exp(-mu[cur] * (t - s))

    states_arr = np.array(states, dtype=np.int64)
    return ExtremalPathInfo(
        direction=direction, variant=Variant.I, horizon=float(t),
        switch_epochs=np.array(switches, dtype=float), states=states_arr,
        bound=float(x_final), regular=_is_regular(model, states_arr))


def extremal_path(model: ValidatedModel, t: float,
                  direction: str = "max") -> ExtremalPathInfo:
    """Extremal path for the model's own variant."""
    if model.variant is Variant.I:
        return extremal_path_model1(model, t, direction)
    return extremal_path_model2(model, t, direction)


def attainable_range(model: ValidatedModel, t: float) -> tuple[float, float]:
    """Smallest and largest value the parameter functional can attain."""
    return (extremal_path(model, t, "min").bound,
            extremal_path(model, t, "max").bound)


# ---------------------------------------------------------------------------
# Boundary geometry
# ---------------------------------------------------------------------------

def _omega_values(info: ExtremalPathInfo, model: ValidatedModel,
                  check: bool) -> np.ndarray:
    lam, mu = model.lam, model.mu
    t = info.horizon
    out = np.empty(info.D)
    for k in range(info.D):
        i, j = info.states[k], info.states[k + 1]
        s_k = info.switch_epochs[k]
        w = 0.5 * lam[j] * (mu[j] - mu[i]) * math.exp(-mu[j] * (t - s_k))
        if check:
            w_alt = 0.5 * lam[i] * (mu[j] - mu[i]) * math.exp(-mu[i] * (t - s_k))
            if abs(w - w_alt) > 1e-9 * max(abs(w), abs(w_alt), 1e-300):
                raise ValueError(
                    "switch %d violates the envelope crossing identity" % k)
        if w < 0:
            raise ValueError("negative curvature coefficient at switch %d" % k)
        out[k] = w
    return out


def omega_coefficients(info: ExtremalPathInfo, model: ValidatedModel) -> np.ndarray:
    """Curvature coefficients of the functional at the upper boundary.

    Defined for variant-II maximizing paths.  The two equivalent closed
    forms (written with the pre- and post-switch rates) are required to
    agree within 1e-9 relative, which holds exactly at true envelope
    crossings.
    """
    if info.variant is not Variant.II or info.direction != "max":
        raise ValueError("curvatures are defined for variant-II maximizing paths")
    return _omega_values(info, model, check=True)


def unit_neighborhood_volume(omegas: np.ndarray) -> float:
    """Volume constant V1 of {x : sum omega_i x_i^2 < delta} per delta^(D/2).

    The set is an ellipsoid with semi-axes sqrt(delta / omega_i), hence
    V(delta) = V1 * delta^(D/2) with V1 = pi^(D/2) / Gamma(D/2 + 1) /
    sqrt(prod omega_i).
    """
    D = omegas.shape[0]
    return math.pi ** (D / 2.0) / math.gamma(D / 2.0 + 1.0) \
        / math.sqrt(float(np.prod(omegas)))


def _prefactors(info: ExtremalPathInfo, model: ValidatedModel,
                weights: np.ndarray, check_omegas: bool) -> BoundaryPrefactors:
    if info.D < 1:
        raise ValueError("prefactors need at least one switch (D >= 1)")
    if info.direction != "max":
        raise ValueError("prefactors describe the upper boundary only")
    if not info.regular:
        seq = [int(s) + 1 for s in info.states]
        raise NotRegularError(
            "a transition along the extremal sequence %s has zero rate" % seq)
    omegas = info.omegas if info.omegas is not None \
        else _omega_values(info, model, check=check_omegas)
    v1 = unit_neighborhood_volume(omegas)
    states = info.states
    edges = np.concatenate(([0.0], info.switch_epochs, [info.horizon]))
    sojourns = np.diff(edges)
    rate_prod = 1.0
    for k in range(info.D):
        rate_prod *= model.Q[states[k], states[k + 1]]
    hold_exp = math.exp(-float(np.dot(model.q[states], sojourns)))
    kappa_bar = float(weights[states[0]]) * rate_prod * hold_exp * v1
    return BoundaryPrefactors(kappa_bar=kappa_bar,
                              kappa_hat=0.5 * info.D * kappa_bar)


def boundary_prefactors(info: ExtremalPathInfo, model: ValidatedModel,
                        pi) -> BoundaryPrefactors:
    """Boundary-layer prefactors for a variant-II maximizing path.

    ``pi`` is the initial-state law (a :class:`StationaryLaw` or a plain
    probability vector).  Requires a regular path (all transition rates
    along the visited sequence positive) with D >= 1; otherwise
    ``NotRegularError`` is raised and only the empirical boundary slope
    is available by simulation.
    """
    if info.variant is not Variant.II:
        raise ValueError("prefactors are derived for variant II")
    weights = np.asarray(getattr(pi, "pi", pi), dtype=float)
    return _prefactors(info, model, weights, check_omegas=True)


# ---------------------------------------------------------------------------
# Atoms
# ---------------------------------------------------------------------------

def constant_path_value(model: ValidatedModel, state: int, t: float) -> float:
    """Parameter value of the jump-free path in ``state`` (same for both
    variants)."""
    return _tube_value(model.lam[state], model.mu[state], 0.0, t)


def _pair_adjusted_mass(model, i, j, t):
    """No-jump mass plus the single-swap correction for a duplicate pair."""
    qi, qj = model.q[i], model.q[j]
    base = math.exp(-qi * t)
    if abs(qi - qj) < 1e-14 * max(qi, qj, 1.0):
        extra = model.Q[i, j] * t * math.exp(-qi * t)
    else:
        extra = model.Q[i, j] * (math.exp(-qj * t) - math.exp(-qi * t)) / (qi - qj)
    return base + extra


def atom_catalog(model: ValidatedModel, t: float) -> AtomCatalog:
    """Point masses of the parameter law at horizon ``t``.

    Each initial state with positive weight contributes a point mass at
    its constant-path value, of size weight * exp(-q_i t).  When the
    initial state has exactly one duplicate partner the mass is enlarged
    by the swap-and-freeze scenario; larger duplicate groups, or several
    active duplicate pairs at once, are rejected.
    """
    if t <= 0:
        raise ValueError("horizon must be positive")
    weights = initial_weights(model)
    group_of = {}
    for g in model.duplicate_groups:
        for i in g:
            group_of[i] = g

    active_pairs = {g for i, g in group_of.items() if weights[i] > 0 and len(g) >= 2}
    if any(len(g) >= 3 for g in active_pairs):
        raise UnsupportedDegeneracyError(
            "duplicate group of size >= 3 involves the initial law")
    if len(active_pairs) >= 2:
        raise UnsupportedDegeneracyError(
            "several duplicate pairs involve the initial law")

    atoms = []
    for i in range(model.d):
        if weights[i] <= 0:
            continue
        g = group_of[i]
        if len(g) == 1:
            mass = weights[i] * math.exp(-model.q[i] * t)
        else:
            j = g[0] if g[1] == i else g[1]
            mass = weights[i] * _pair_adjusted_mass(model, i, j, t)
        atoms.append(Atom(state=i, location=constant_path_value(model, i, t),
                          mass=float(mass)))
    return AtomCatalog(variant=model.variant, horizon=float(t), atoms=tuple(atoms))
