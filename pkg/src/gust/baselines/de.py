"""Differential evolution (DE/rand/1/bin) for bound-constrained minimization."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .._validation import check_random_state
from ..exceptions import OptimizerStallWarning


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    generations: int
    nfev: int
    converged: bool
    stalled: bool
    trace: list = field(default_factory=list)


def differential_evolution(objective, bounds, pop_size=20, F_weight=0.8, crossover=0.9,
                           max_gen=200, seed=None, tol=1e-12, patience=50, x0=None):
    """Minimize ``objective`` over the box ``bounds`` (a list of ``(low, high)``).

    Classic DE/rand/1/bin: every generation each target vector ``x_i`` gets a
    mutant ``a + F * (b - c)`` from three distinct other members, a binomial
    crossover with at least one mutant coordinate, and is replaced only if the
    trial is no worse.  Mutants leaving the box are reflected back inside.

    The search stops early once the population's objective spread falls
    below ``tol`` (converged) or when the best value has not improved for
    ``patience`` generations while the spread is still large (stalled; a
    warning is issued and the best point so far is returned).  ``trace``
    records the best value after each generation.
    """
    rng = check_random_state(seed)
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be a finite (d, 2) array")
    if np.any(bounds[:, 1] < bounds[:, 0]):
        raise ValueError("each bound needs low <= high")
    if pop_size < 4:
        raise ValueError("pop_size must be >= 4")
    low, high = bounds[:, 0], bounds[:, 1]
    d = len(bounds)
    pop = low + rng.random((pop_size, d)) * (high - low)
    if x0 is not None:
        pop[0] = np.clip(x0, low, high)
    fit = np.array([objective(p) for p in pop], dtype=np.float64)
    nfev = pop_size
    best = int(np.argmin(fit))
    trace = [float(fit[best])]
    since_improve = 0
    converged = stalled = False
    gen = 0
    for gen in range(1, max_gen + 1):
        prev_best = fit[best]
        for i in range(pop_size):
            choices = [j for j in range(pop_size) if j != i]
            a, b, c = pop[rng.choice(choices, size=3, replace=False)]
            mutant = a + F_weight * (b - c)
            # reflect into the box
            mutant = np.where(mutant < low, 2 * low - mutant, mutant)
            mutant = np.where(mutant > high, 2 * high - mutant, mutant)
            mutant = np.clip(mutant, low, high)
            cross = rng.random(d) < crossover
            cross[rng.integers(d)] = True
            trial = np.where(cross, mutant, pop[i])
            f = float(objective(trial))
            nfev += 1
            if f <= fit[i]:
                pop[i], fit[i] = trial, f
        best = int(np.argmin(fit))
        trace.append(float(fit[best]))
        since_improve = 0 if fit[best] < prev_best else since_improve + 1
        if np.ptp(fit) <= tol:
            converged = True
            break
        if since_improve >= patience:
            stalled = True
            warnings.warn(f"differential evolution stalled after {gen} generations "
                          f"without improvement", OptimizerStallWarning)
            break
    return DEResult(pop[best].copy(), float(fit[best]), gen, nfev, converged, stalled, trace)
