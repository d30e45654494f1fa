"""Shared model fixtures and independent numerical oracles."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from mmisq import ModelSpec, PathRealization, validate

#: closed-form reference values for the two-state showcase model
#: (lam = (1, 2), mu = (1, 5), q_1 = q_2 = 1, t = 1)
A_PLUS = 2.0 ** -0.25 - math.exp(-1) + 0.4 * (1 - 2.0 ** -1.25)
A_MINUS = 0.4 * (2.0 ** -1.25 - math.exp(-5)) + 1 - 2.0 ** -0.25
S1 = 1 - math.log(2) / 4
OMEGA1 = 4 * 2.0 ** -1.25
KAPPA_BAR = (0.5 * math.exp(-1) * (2 * math.sqrt(2) / math.sqrt(2 * 4))
             * 0.5 ** ((1 - 1 + 2.5) / (1 - 5)))
ATOM_LOCS = (1 - math.exp(-1), 0.4 * (1 - math.exp(-5)))
ATOM_MASS = 0.5 * math.exp(-1)


@pytest.fixture(scope="session")
def ex3():
    """Two-state frozen-hazard model with symmetric switching."""
    return validate(ModelSpec(Q=[[-1, 1], [1, -1]], lam=[1, 2], mu=[1, 5],
                              variant="II", initial=None))


@pytest.fixture(scope="session")
def ex3_model1():
    """Same rates under the tracking-hazard discipline, started in state 0."""
    return validate(ModelSpec(Q=[[-1, 1], [1, -1]], lam=[1, 2], mu=[1, 5],
                              variant="I", initial=0))


@pytest.fixture(scope="session")
def ex2_nonregular():
    """Three states where 1 -> 2 is only reachable through state 3."""
    Q = [[-1.0, 0.0, 1.0],
         [1.0, -1.0, 0.0],
         [0.5, 0.5, -1.0]]
    return validate(ModelSpec(Q=Q, lam=[1, 2, 0.5], mu=[1, 5, 4],
                              variant="II", initial=None))


@pytest.fixture(scope="session")
def single_state():
    return validate(ModelSpec(Q=[[0.0]], lam=[1.0], mu=[1.0],
                              variant="II", initial=None))


@pytest.fixture(scope="session")
def asym_rates():
    """Like ex3 but with unequal exit rates, q = (1, 2)."""
    return validate(ModelSpec(Q=[[-1, 1], [2, -2]], lam=[1, 2], mu=[1, 5],
                              variant="II", initial=None))


@pytest.fixture(scope="session")
def three_state_two_switches():
    """d = 3 with a maximizing path that switches twice."""
    Q = [[-2.0, 1.0, 1.0],
         [1.0, -2.0, 1.0],
         [0.5, 0.5, -1.0]]
    return validate(ModelSpec(Q=Q, lam=[1, 2, 4], mu=[1, 5, 30],
                              variant="II", initial=None))


def random_model(rng, d=None, variant="II"):
    """Random irreducible model with generic (distinct) rate pairs."""
    d = d or int(rng.integers(1, 6))
    Q = rng.uniform(0.0, 2.0, size=(d, d))
    Q[rng.random((d, d)) < 0.3] = 0.0
    for i in range(d):
        Q[i, (i + 1) % d] = max(Q[i, (i + 1) % d], 0.1)  # ring keeps it irreducible
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    lam = rng.uniform(0.05, 3.0, size=d)
    mu = rng.uniform(0.2, 4.0, size=d)
    return validate(ModelSpec(Q=Q, lam=lam, mu=mu, variant=variant,
                              initial=None))


def phi_quadrature(path: PathRealization, model, tol=1e-13):
    """Adaptive quadrature of the tracking-hazard integrand.

    The running hazard integral is evaluated directly from the piecewise
    rates, so this does not share the per-segment antiderivatives with
    the closed-form implementation under test.
    """
    edges = np.concatenate(([0.0], path.epochs, [path.t]))
    states = path.states
    mu_seg = model.mu[states]
    seg_haz = mu_seg * np.diff(edges)
    suffix = np.concatenate((np.cumsum(seg_haz[::-1])[::-1], [0.0]))

    total = 0.0
    for k in range(states.shape[0]):
        lam_k, mu_k = model.lam[states[k]], model.mu[states[k]]

        def integrand(s, k=k, lam_k=lam_k, mu_k=mu_k):
            hazard = mu_k * (edges[k + 1] - s) + suffix[k + 1]
            return lam_k * math.exp(-hazard)

        val, _ = quad(integrand, edges[k], edges[k + 1],
                      epsabs=tol, epsrel=tol)
        total += val
    return total


def psi_quadrature(path: PathRealization, model, tol=1e-13):
    """Adaptive quadrature of the frozen-hazard integrand."""
    edges = np.concatenate(([0.0], path.epochs, [path.t]))
    total = 0.0
    for k in range(path.states.shape[0]):
        lam_k, mu_k = model.lam[path.states[k]], model.mu[path.states[k]]

        def integrand(s, lam_k=lam_k, mu_k=mu_k):
            return lam_k * math.exp(-(path.t - s) * mu_k)

        val, _ = quad(integrand, edges[k], edges[k + 1],
                      epsabs=tol, epsrel=tol)
        total += val
    return total


def random_path(rng, d, t):
    """Random piecewise-constant trajectory with 0..4 jumps."""
    k = int(rng.integers(0, 5)) if d > 1 else 0
    epochs = np.sort(rng.uniform(0.0, t, size=k))
    epochs = epochs[(epochs > 1e-9) & (epochs < t - 1e-9)]
    epochs = np.unique(epochs)
    states = [int(rng.integers(0, d))]
    for _ in range(epochs.shape[0]):
        nxt = int(rng.integers(0, d - 1))
        if nxt >= states[-1]:
            nxt += 1
        states.append(nxt)
    return PathRealization(t=t, epochs=epochs, states=np.array(states))
