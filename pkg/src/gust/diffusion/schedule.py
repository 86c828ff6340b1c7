"""Noise schedules and the closed-form forward process."""

from dataclasses import dataclass

import numpy as np

from ..exceptions import InvalidSchedule


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion constants for timesteps ``t = 1..T``.

    ``betas[t - 1]`` and ``alphas[t - 1]`` hold the per-step values;
    ``alpha_bars`` has length ``T + 1`` with ``alpha_bars[0] == 1`` so that
    ``alpha_bars[t]`` is the cumulative product up to step ``t``.
    """

    betas: np.ndarray
    kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) == 0:
            raise InvalidSchedule("betas must be a non-empty vector")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise InvalidSchedule("every beta must lie in (0, 1)")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)

    @property
    def T(self):
        return len(self.betas)

    @property
    def alphas(self):
        return 1.0 - self.betas

    @property
    def alpha_bars(self):
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    def to_dict(self):
        return {"T": self.T, "kind": self.kind,
                "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, d):
        return make_schedule(d["T"], d["beta_start"], d["beta_end"], d.get("kind", "linear"))


def make_schedule(T, beta_start=1e-4, beta_end=0.02, kind="linear"):
    """Linearly spaced betas from ``beta_start`` to ``beta_end``."""
    if kind != "linear":
        raise InvalidSchedule(f"unsupported schedule kind {kind!r}")
    if int(T) != T or T < 1:
        raise InvalidSchedule(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidSchedule("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return NoiseSchedule(betas, kind=kind, beta_start=float(beta_start), beta_end=float(beta_end))


def to_signal(cell):
    """Map a {0, 1} cell to {-1, +1}."""
    return 2.0 * np.asarray(cell, dtype=np.float64) - 1.0


def from_signal(x):
    """Threshold a real-valued sample back to a binary cell."""
    return (np.asarray(x) > 0).astype(np.uint8)


def forward_sample(x0, t, eps, schedule):
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``.

    Integer or boolean inputs are treated as binary cells and mapped to
    [-1, 1] first.  ``t = 0`` returns ``x0`` unchanged.
    """
    x0 = np.asarray(x0)
    if x0.dtype.kind in "biu":
        x0 = to_signal(x0)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} shapes differ")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t must lie in [0, {schedule.T}], got {t}")
    abar = schedule.alpha_bars[t]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
