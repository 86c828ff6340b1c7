"""scikit-learn style wrapper around the conditional DDPM."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_cells, derived_seed
from .checkpoint import Checkpoint
from .schedule import make_schedule
from .training import (FREEZE_PRESETS, FreezeSpec, TrainConfig, finetune, mc_property_uq,
                       pretrain, sample)
from .unet import DenoiserConfig


class ConditionalDDPM(BaseEstimator):
    """Conditional diffusion model of fabricated geometry given a nominal design.

    ``fit(X_nom, X_fab)`` trains from scratch on aligned pairs;
    :meth:`finetune` adapts a fitted model to new pairs while freezing part
    of the network; :meth:`sample` draws Monte Carlo geometries.

    Parameters
    ----------
    T, beta_start, beta_end : diffusion schedule (linear betas).
    levels, base_channels, channel_mults, attention_levels, time_embed_dim,
    spade_hidden : denoiser architecture, see :class:`DenoiserConfig`.
    iterations, batch_size, learning_rate, decay_factor, decay_every, lr_floor,
    loss : optimization settings, see :class:`TrainConfig`.
    random_state : int

    Attributes
    ----------
    checkpoint_ : Checkpoint
    loss_curve_ : list of float
        Per-iteration training losses of the latest fit/finetune call.
    """

    def __init__(self, T=1000, beta_start=1e-4, beta_end=0.02, levels=3, base_channels=32,
                 channel_mults=None, attention_levels=None, time_embed_dim=64, spade_hidden=32,
                 iterations=2000, batch_size=16, learning_rate=8e-4, decay_factor=0.9,
                 decay_every=5000, lr_floor=1e-6, loss="l1", random_state=0):
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.levels = levels
        self.base_channels = base_channels
        self.channel_mults = channel_mults
        self.attention_levels = attention_levels
        self.time_embed_dim = time_embed_dim
        self.spade_hidden = spade_hidden
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.lr_floor = lr_floor
        self.loss = loss
        self.random_state = random_state

    def _denoiser_config(self):
        mults = self.channel_mults
        if mults is None:
            mults = tuple([1] + [2] * (self.levels - 1))
        attn = self.attention_levels if self.attention_levels is not None else (self.levels,)
        return DenoiserConfig(levels=self.levels, base_channels=self.base_channels,
                              channel_mults=tuple(mults), attention_levels=tuple(attn),
                              time_embed_dim=self.time_embed_dim, spade_hidden=self.spade_hidden)

    def _train_config(self, iterations=None, seed=None, **overrides):
        kw = dict(iterations=self.iterations if iterations is None else iterations,
                  batch_size=self.batch_size, initial_lr=self.learning_rate,
                  decay_factor=self.decay_factor, decay_every=self.decay_every,
                  lr_floor=self.lr_floor, loss_kind=self.loss,
                  seed=self.random_state if seed is None else seed)
        kw.update(overrides)
        return TrainConfig(**kw)

    def fit(self, X, y):
        """Train from scratch; ``X`` are nominal cells, ``y`` the fabricated ones."""
        X, y = check_cells(X, "X"), check_cells(y, "y")
        schedule = make_schedule(self.T, self.beta_start, self.beta_end)
        ckpt = pretrain((X, y), schedule, self._denoiser_config(), self._train_config())
        self._set(ckpt)
        return self

    def finetune(self, X, y, freeze="none", iterations=None, decay_every=None, seed=None):
        """Adapt the fitted model to new pairs; ``freeze`` is a FreezeSpec or preset name."""
        check_is_fitted(self, "checkpoint_")
        X, y = check_cells(X, "X"), check_cells(y, "y")
        spec = FREEZE_PRESETS[freeze] if isinstance(freeze, str) else freeze
        if not isinstance(spec, FreezeSpec):
            raise TypeError("freeze must be a FreezeSpec or a preset name")
        over = {} if decay_every is None else {"decay_every": decay_every}
        tcfg = self._train_config(iterations, seed, **over)
        self._set(finetune(self.checkpoint_, (X, y), spec, tcfg))
        return self

    def _set(self, ckpt):
        self.checkpoint_ = ckpt
        self.loss_curve_ = list(getattr(ckpt, "trace", []) or [])
        self.resolution_ = tuple(ckpt.meta["resolution"])

    @classmethod
    def from_checkpoint(cls, ckpt):
        if not isinstance(ckpt, Checkpoint):
            ckpt = Checkpoint.load(ckpt)
        d = ckpt.meta["denoiser"]
        s = ckpt.meta["schedule"]
        est = cls(T=s["T"], beta_start=s["beta_start"], beta_end=s["beta_end"],
                  levels=d["levels"], base_channels=d["base_channels"],
                  channel_mults=tuple(d["channel_mults"]),
                  attention_levels=tuple(d["attention_levels"]),
                  time_embed_dim=d["time_embed_dim"], spade_hidden=d["spade_hidden"],
                  random_state=ckpt.meta.get("seed", 0))
        est._set(ckpt)
        return est

    def sample(self, x_nom, n=1, random_state=None):
        """``n`` generated cells for one nominal, shape ``(n, H, W)``."""
        check_is_fitted(self, "checkpoint_")
        seed = self.random_state if random_state is None else random_state
        return sample(self.checkpoint_, x_nom, n, rng=seed)

    def predict(self, X, random_state=None):
        """One generated cell per nominal in ``X``."""
        X = check_cells(X, "X")
        seed = self.random_state if random_state is None else random_state
        return np.stack([self.sample(x, 1, random_state=derived_seed(seed, i))[0]
                         for i, x in enumerate(X)])

    def property_uq(self, x_nom, n, property_fn, kappa=1.645, random_state=None):
        check_is_fitted(self, "checkpoint_")
        seed = self.random_state if random_state is None else random_state
        return mc_property_uq(self.checkpoint_, x_nom, n, property_fn, kappa=kappa, rng=seed)
