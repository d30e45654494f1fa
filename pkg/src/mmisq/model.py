"""Model specification, validation, and background-chain linear algebra.

A model is a finite-state irreducible continuous-time Markov chain (the
background process) together with per-state arrival rates ``lam`` and
service rates ``mu``.  Two service disciplines are supported: under
variant I each job's hazard rate follows the current background state,
under variant II the hazard rate is frozen at the job's arrival epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    NonGeneratorError,
    NonpositiveServiceError,
    ReducibleError,
    SingularError,
)

#: absolute tolerance on generator row sums; inputs beyond it are rejected
ROW_SUM_TOL = 1e-12

#: largest uniformization horizon before scaling-and-squaring kicks in
_UNIFORMIZATION_MAX = 64.0

#: truncation target for the uniformized series
_SERIES_TAIL = 1e-14


class Variant(str, Enum):
    """Service discipline: hazard tracks the state (I) or is frozen (II)."""

    I = "I"
    II = "II"


@dataclass
class ModelSpec:
    """Raw problem input before validation.

    Parameters
    ----------
    Q : array_like, shape (d, d)
        Generator of the background chain (off-diagonal rates, zero row sums).
    lam : array_like, shape (d,)
        Arrival rate per state, >= 0.
    mu : array_like, shape (d,)
        Service rate per state, > 0.
    variant : Variant or str
        Service discipline, "I" or "II".
    initial : int or None
        Fixed initial state (0-based) or None for the stationary law.
    """

    Q: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    variant: Variant = Variant.II
    initial: int | None = None

    def __post_init__(self):
        self.Q = np.array(self.Q, dtype=float)
        self.lam = np.atleast_1d(np.array(self.lam, dtype=float))
        self.mu = np.atleast_1d(np.array(self.mu, dtype=float))
        self.variant = Variant(self.variant)

    @property
    def d(self) -> int:
        return self.lam.shape[0]


@dataclass(frozen=True)
class ValidatedModel:
    """A checked model with derived quantities cached.

    Arrays are read-only; instances are safe to share across threads.
    """

    Q: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    variant: Variant
    initial: int | None
    q: np.ndarray                       # exit rates q_i = -Q[i, i]
    duplicate_groups: tuple[tuple[int, ...], ...]

    @property
    def d(self) -> int:
        return self.lam.shape[0]

    def describe(self) -> str:
        kind = "fixed state %d" % self.initial if self.initial is not None \
            else "stationary start"
        return "%d-state variant-%s model, %s" % (self.d, self.variant.value, kind)


@dataclass(frozen=True)
class StationaryLaw:
    """Invariant probability vector of the background chain."""

    pi: np.ndarray


def validate(spec: ModelSpec) -> ValidatedModel:
    """Check generator/rate invariants and cache derived quantities.

    Raises
    ------
    NonGeneratorError
        Negative off-diagonal entries or row sums beyond ``ROW_SUM_TOL``.
    ReducibleError
        The transition graph is not strongly connected.
    NonpositiveServiceError
        Some ``mu`` entry is not strictly positive.
    """
    Q = np.array(spec.Q, dtype=float)
    lam = np.array(spec.lam, dtype=float)
    mu = np.array(spec.mu, dtype=float)
    d = lam.shape[0]

    if Q.shape != (d, d):
        raise ValueError("Q must be %dx%d, got %r" % (d, d, Q.shape))
    if mu.shape != (d,):
        raise ValueError("mu must have length %d" % d)
    if np.any(lam < 0):
        raise ValueError("arrival rates must be nonnegative")
    if np.any(mu <= 0):
        raise NonpositiveServiceError("service rates must be strictly positive")

    off = Q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        raise NonGeneratorError("negative off-diagonal entry in Q")
    row_sums = Q.sum(axis=1)
    if np.any(np.abs(row_sums) > ROW_SUM_TOL):
        worst = int(np.argmax(np.abs(row_sums)))
        raise NonGeneratorError(
            "row %d of Q sums to %.3e (tolerance %.0e)"
            % (worst, row_sums[worst], ROW_SUM_TOL))

    if d > 1:
        graph = csr_matrix((off > 0).astype(np.int8))
        n_comp, _ = connected_components(graph, directed=True, connection="strong")
        if n_comp != 1:
            raise ReducibleError("background chain has %d communicating classes" % n_comp)

    if spec.initial is not None and not (0 <= int(spec.initial) < d):
        raise ValueError("initial state %r outside 0..%d" % (spec.initial, d - 1))

    q = -np.diag(Q).copy()
    q[np.abs(q) <= ROW_SUM_TOL] = 0.0

    groups: list[list[int]] = []
    for i in range(d):
        for g in groups:
            j = g[0]
            if lam[i] == lam[j] and mu[i] == mu[j]:
                g.append(i)
                break
        else:
            groups.append([i])

    for arr in (Q, lam, mu, q):
        arr.setflags(write=False)
    return ValidatedModel(
        Q=Q, lam=lam, mu=mu, variant=Variant(spec.variant),
        initial=None if spec.initial is None else int(spec.initial),
        q=q, duplicate_groups=tuple(tuple(g) for g in groups))


def duplicate_groups(model: ValidatedModel) -> tuple[tuple[int, ...], ...]:
    """Partition of states by identical (lam, mu) pairs.

    Groups with two or more members flag the degenerate-atom regime.
    """
    return model.duplicate_groups


def stationary(model: ValidatedModel) -> StationaryLaw:
    """Invariant law pi of the background chain, pi Q = 0, sum(pi) = 1.

    Solved densely with one balance equation replaced by the
    normalization; the state space is small by assumption.
    """
    d = model.d
    if d == 1:
        return StationaryLaw(pi=np.array([1.0]))
    A = model.Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(d)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by validate
        raise SingularError("stationary solve failed: %s" % exc) from exc
    residual = pi @ model.Q
    if np.max(np.abs(residual)) > 1e-10 or np.any(pi < -1e-12):
        raise SingularError("stationary solve produced an invalid law")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    pi.setflags(write=False)
    return StationaryLaw(pi=pi)


def initial_weights(model: ValidatedModel) -> np.ndarray:
    """Distribution of the background state at time zero."""
    if model.initial is None:
        return stationary(model).pi
    w = np.zeros(model.d)
    w[model.initial] = 1.0
    return w


def _uniformized(Q: np.ndarray, q_max: float, t: float) -> np.ndarray:
    """Poisson-weighted power series for exp(Qt), q_max * t <= 64."""
    d = Q.shape[0]
    P = np.eye(d) + Q / q_max
    m = q_max * t
    weight = np.exp(-m)
    term = np.eye(d)
    out = weight * term
    cum = weight
    k = 0
    while 1.0 - cum > _SERIES_TAIL:
        k += 1
        term = term @ P
        weight *= m / k
        out += weight * term
        cum += weight
        if k > 10_000:  # pragma: no cover - tail bound guarantees termination
            break
    return out


def transient_matrix(model: ValidatedModel, t: float) -> np.ndarray:
    """Row-stochastic matrix exp(Qt) via uniformization.

    The series is truncated at a Poisson-tail bound of 1e-14 and rows are
    renormalized, giving absolute accuracy well below 1e-12.  Horizons with
    q_max * t > 64 are handled by scaling and squaring, which is stable
    because powers of a stochastic matrix stay stochastic.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    d = model.d
    q_max = float(model.q.max()) if d else 0.0
    if q_max * t == 0.0:
        return np.eye(d)
    n_halvings = 0
    th = t
    while q_max * th > _UNIFORMIZATION_MAX:
        th /= 2.0
        n_halvings += 1
    E = _uniformized(model.Q, q_max, th)
    E /= E.sum(axis=1, keepdims=True)
    for _ in range(n_halvings):
        E = E @ E
        E /= E.sum(axis=1, keepdims=True)
    return E


def model_spec_from_dict(doc: dict) -> ModelSpec:
    """Build a spec from the JSON file layout (1-based state indices)."""
    try:
        d = int(doc["d"])
        Q = np.array(doc["Q"], dtype=float)
        lam = np.array(doc["lambda"], dtype=float)
        mu = np.array(doc["mu"], dtype=float)
        variant = Variant(doc.get("variant", "II"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError("malformed model document: %s" % exc) from exc
    if lam.shape != (d,) or mu.shape != (d,):
        raise ValueError("lambda/mu lengths do not match d=%d" % d)
    initial_doc = doc.get("initial", "stationary")
    if initial_doc == "stationary":
        initial = None
    elif isinstance(initial_doc, dict) and "fixed" in initial_doc:
        initial = int(initial_doc["fixed"]) - 1
    else:
        raise ValueError('initial must be "stationary" or {"fixed": i}')
    return ModelSpec(Q=Q, lam=lam, mu=mu, variant=variant, initial=initial)


def model_spec_to_dict(spec: ModelSpec | ValidatedModel) -> dict:
    """Serialize to the JSON file layout (1-based state indices)."""
    initial = "stationary" if spec.initial is None else {"fixed": int(spec.initial) + 1}
    return {
        "d": spec.d,
        "Q": [[float(x) for x in row] for row in np.asarray(spec.Q)],
        "lambda": [float(x) for x in np.asarray(spec.lam)],
        "mu": [float(x) for x in np.asarray(spec.mu)],
        "variant": Variant(spec.variant).value,
        "initial": initial,
    }


def load_model(path) -> ValidatedModel:
    """Read a model JSON file and validate it."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return validate(model_spec_from_dict(doc))
