"""Pretraining, fine-tuning with parameter freezing, and ancestral sampling."""

import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .._validation import check_cell, check_random_state, derived_seed
from ..exceptions import NonFiniteLoss, ShapeMismatch, UnknownBlockIndex
from .checkpoint import Checkpoint
from .schedule import NoiseSchedule, from_signal, make_schedule, to_signal
from .unet import SPADE, ConditionalUNet, DenoiserConfig, SelfAttention

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    initial_lr: float = 8e-4
    decay_factor: float = 0.9
    decay_every: int = 5000
    lr_floor: float = 1e-6
    loss_kind: str = "l1"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("iterations must be >= 0; batch_size and decay_every >= 1")
        if not 0 < self.lr_floor <= self.initial_lr:
            raise ValueError("need 0 < lr_floor <= initial_lr")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.loss_kind not in ("l1", "l2"):
            raise ValueError(f"loss_kind must be 'l1' or 'l2', got {self.loss_kind!r}")

    def lr_at(self, iteration):
        """Step-decayed learning rate for 0-based ``iteration``."""
        lr = self.initial_lr * self.decay_factor ** (iteration // self.decay_every)
        return max(lr, self.lr_floor)

    @classmethod
    def full_pretrain(cls, seed=0):
        return cls(iterations=180_000, batch_size=64, initial_lr=8e-4, decay_factor=0.9,
                   decay_every=5000, lr_floor=1e-6, loss_kind="l1", seed=seed)

    @classmethod
    def full_finetune(cls, seed=0):
        return cls(iterations=38_400, batch_size=64, initial_lr=8e-4, decay_factor=0.9,
                   decay_every=960, lr_floor=1e-6, loss_kind="l1", seed=seed)


LAYER_KINDS = ("attention", "conditional-normalization", "all-in-block", "bottleneck")


@dataclass(frozen=True)
class FreezeSpec:
    """Which parameters stay fixed during fine-tuning.

    ``blocks`` holds 1-based symmetric block indices: block ``i`` is the
    ``i``-th encoder block together with the ``i``-th-from-last decoder block
    (the pair sharing a resolution).  ``kinds`` restricts freezing within those
    blocks to the listed layer kinds; with no blocks it applies across all
    blocks.  ``"bottleneck"`` freezes the bottleneck MLP.  ``everything``
    freezes every parameter.
    """

    blocks: frozenset = frozenset()
    kinds: frozenset = frozenset()
    everything: bool = False

    def __post_init__(self):
        object.__setattr__(self, "blocks", frozenset(int(b) for b in self.blocks))
        object.__setattr__(self, "kinds", frozenset(self.kinds))
        bad = self.kinds - set(LAYER_KINDS)
        if bad:
            raise ValueError(f"unknown layer kinds {sorted(bad)}")

    def to_dict(self):
        return {"blocks": sorted(self.blocks), "kinds": sorted(self.kinds),
                "everything": self.everything}

    @classmethod
    def from_dict(cls, d):
        return cls(frozenset(d.get("blocks", ())), frozenset(d.get("kinds", ())),
                   bool(d.get("everything", False)))


# transfer configurations: symmetric block pairs, the bottleneck MLP and
# layer-type groups
FREEZE_PRESETS = {
    "none": FreezeSpec(),
    "first_last_blocks": FreezeSpec(blocks={1}),
    "second_blocks": FreezeSpec(blocks={2}),
    "fourth_blocks": FreezeSpec(blocks={4}),
    "fifth_blocks": FreezeSpec(blocks={5}),
    "mlp": FreezeSpec(kinds={"bottleneck"}),
    "spade_attention": FreezeSpec(kinds={"conditional-normalization", "attention"}),
    "attention": FreezeSpec(kinds={"attention"}),
    "everything": FreezeSpec(everything=True),
}


def _module_kind(module):
    if isinstance(module, SelfAttention):
        return "attention"
    if isinstance(module, SPADE):
        return "conditional-normalization"
    return None


def frozen_parameter_names(model, spec):
    """Names of the parameters ``spec`` freezes in ``model``."""
    names = [n for n, _ in model.named_parameters()]
    if spec.everything:
        return set(names)
    levels = model.cfg.levels
    for b in spec.blocks:
        if not 1 <= b <= levels:
            raise UnknownBlockIndex(f"block {b} outside 1..{levels}")
    layer_kinds = spec.kinds - {"all-in-block", "bottleneck"}
    frozen = set()
    if "bottleneck" in spec.kinds:
        frozen |= {n for n in names if n.startswith("mid.")}
    if spec.blocks and not layer_kinds:
        prefixes = tuple(f"{side}.{b - 1}." for b in spec.blocks for side in ("enc", "dec"))
        frozen |= {n for n in names if n.startswith(prefixes)}
    elif layer_kinds:
        for path, module in model.named_modules():
            if _module_kind(module) not in layer_kinds:
                continue
            parts = path.split(".")
            if spec.blocks and (parts[0] not in ("enc", "dec") or int(parts[1]) + 1 not in spec.blocks):
                continue
            frozen |= {f"{path}.{n}" for n, _ in module.named_parameters()}
    return frozen


# ---------------------------------------------------------------------------
# model <-> checkpoint


def _config_hash(*parts):
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_model(ckpt, dtype=torch.float32):
    cfg = DenoiserConfig.from_dict(ckpt.meta["denoiser"])
    model = ConditionalUNet(cfg)
    state = {k: torch.from_numpy(v.copy()) for k, v in ckpt.tensors.items()}
    model.load_state_dict(state)
    return model.to(dtype)


def init_model(dcfg, seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ConditionalUNet(dcfg)


def model_checkpoint(model, meta):
    tensors = {k: v.detach().to(torch.float32).cpu().numpy() for k, v in model.state_dict().items()}
    return Checkpoint(tensors, meta)


def schedule_of(ckpt):
    return NoiseSchedule.from_dict(ckpt.meta["schedule"])


# ---------------------------------------------------------------------------
# training


def diffusion_loss(model, x_nom, x_fab, t, eps, alpha_bars, kind="l1"):
    """Noise-prediction loss on a batch; images are ``(B, 1, H, W)`` in [-1, 1]."""
    ab = alpha_bars[t].to(x_fab.dtype)[:, None, None, None]
    x_t = ab.sqrt() * x_fab + (1 - ab).sqrt() * eps
    err = eps - model(x_t, t, x_nom)
    return err.abs().mean() if kind == "l1" else (err * err).mean()


def _pairs_tensor(dataset_or_pairs):
    if isinstance(dataset_or_pairs, tuple):
        x_nom, x_fab = dataset_or_pairs
    else:
        x_nom, x_fab = dataset_or_pairs.pairs()
    x_nom = np.asarray(x_nom)
    x_fab = np.asarray(x_fab)
    if x_nom.shape != x_fab.shape or x_nom.ndim != 3 or len(x_nom) == 0:
        raise ShapeMismatch("need matching non-empty (n, H, W) nominal and fabricated stacks")
    as_t = lambda a: torch.from_numpy(to_signal(a).astype(np.float32))[:, None]
    return as_t(x_nom), as_t(x_fab)


def _train(model, x_nom, x_fab, schedule, tcfg, frozen=frozenset(), callback=None):
    params = [p for n, p in model.named_parameters() if n not in frozen]
    for n, p in model.named_parameters():
        p.requires_grad_(n not in frozen)
    trace = []
    if tcfg.iterations == 0 or not params:
        return trace
    opt = torch.optim.Adam(params, lr=tcfg.initial_lr, betas=(0.9, 0.999), eps=1e-8)
    gen = torch.Generator().manual_seed(int(tcfg.seed))
    alpha_bars = torch.from_numpy(schedule.alpha_bars)
    n = len(x_fab)
    model.train()
    for it in range(tcfg.iterations):
        lr = tcfg.lr_at(it)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = torch.randint(n, (tcfg.batch_size,), generator=gen)
        t = torch.randint(1, schedule.T + 1, (tcfg.batch_size,), generator=gen)
        eps = torch.randn(x_fab[idx].shape, generator=gen)
        loss = diffusion_loss(model, x_nom[idx], x_fab[idx], t, eps, alpha_bars, tcfg.loss_kind)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value} at iteration {it} (lr={lr:.3g}, "
                                f"last finite={trace[-1] if trace else None})")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        trace.append(value)
        if callback is not None:
            callback(it, value)
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return trace


def pretrain(dataset, schedule, dcfg, tcfg, callback=None):
    """Train a randomly initialized denoiser on paired data.

    ``dataset`` is a :class:`~gust.perturb.PairedDataset` or a tuple
    ``(x_nom, x_fab)`` of aligned cell stacks.  The loss trace is attached to
    the returned checkpoint as ``ckpt.trace``.
    """
    x_nom, x_fab = _pairs_tensor(dataset)
    dcfg.check_resolution(x_fab.shape[-2:])
    model = init_model(dcfg, tcfg.seed)
    trace = _train(model, x_nom, x_fab, schedule, tcfg, callback=callback)
    meta = {
        "denoiser": dcfg.to_dict(),
        "schedule": schedule.to_dict(),
        "resolution": list(x_fab.shape[-2:]),
        "seed": int(tcfg.seed),
        "iterations": tcfg.iterations,
        "stages": [{"stage": "pretrain", "train": asdict(tcfg), "n_pairs": len(x_fab)}],
        "config_hash": _config_hash(dcfg.to_dict(), schedule.to_dict(), asdict(tcfg)),
    }
    ckpt = model_checkpoint(model, meta)
    ckpt.trace = trace
    return ckpt


def finetune(ckpt, dataset, freeze, tcfg, callback=None):
    """Continue training ``ckpt`` on new pairs with the ``freeze`` parameters held fixed."""
    x_nom, x_fab = _pairs_tensor(dataset)
    if list(x_fab.shape[-2:]) != list(ckpt.meta["resolution"]):
        raise ShapeMismatch(f"dataset resolution {tuple(x_fab.shape[-2:])} differs from "
                            f"checkpoint {tuple(ckpt.meta['resolution'])}")
    model = build_model(ckpt)
    frozen = frozen_parameter_names(model, freeze)
    schedule = schedule_of(ckpt)
    trace = _train(model, x_nom, x_fab, schedule, tcfg, frozen=frozen, callback=callback)
    meta = json.loads(json.dumps(ckpt.meta))
    meta["iterations"] = int(meta.get("iterations", 0)) + tcfg.iterations
    meta["stages"] = meta.get("stages", []) + [
        {"stage": "finetune", "train": asdict(tcfg), "freeze": freeze.to_dict(),
         "n_pairs": len(x_fab)}]
    meta["config_hash"] = _config_hash(meta["config_hash"], asdict(tcfg), freeze.to_dict())
    out = model_checkpoint(model, meta)
    # untouched tensors are copied bit-for-bit from the input
    for name in frozen:
        out.tensors[name] = ckpt.tensors[name].copy()
    out.trace = trace
    return out


# ---------------------------------------------------------------------------
# sampling


def ancestral_sample(eps_fn, schedule, x_T, noise):
    """Reverse chain from ``x_T`` down to ``x_0`` with ``sigma_t^2 = beta_t``.

    ``eps_fn(x, t)`` predicts the noise for a batch at integer step ``t``;
    ``noise(t)`` returns the standard normal draw used at step ``t > 1``.
    Works on numpy arrays or torch tensors alike.
    """
    x = x_T
    betas, alphas, abar = schedule.betas, schedule.alphas, schedule.alpha_bars
    for t in range(schedule.T, 0, -1):
        a_t = alphas[t - 1]
        coef = (1.0 - a_t) / math.sqrt(1.0 - abar[t])
        x = (x - coef * eps_fn(x, t)) / math.sqrt(a_t)
        if t > 1:
            x = x + math.sqrt(betas[t - 1]) * noise(t)
    return x


def _base_seed(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return 0 if rng is None else int(rng)
    return int(check_random_state(rng).integers(2**63 - 1))


def sample(ckpt, x_nom, count, rng=None, batch_size=256, return_signal=False):
    """Draw ``count`` fabricated geometries for one nominal design.

    Sample ``i`` uses its own stream derived from ``(seed, i)``, so it does
    not depend on ``count`` or on ``batch_size``.
    """
    x_nom = check_cell(x_nom, "x_nom")
    if count < 1:
        raise ValueError("count must be >= 1")
    res = tuple(ckpt.meta["resolution"])
    if x_nom.shape != res:
        raise ShapeMismatch(f"nominal {x_nom.shape} does not match checkpoint resolution {res}")
    seed = _base_seed(rng)
    model = build_model(ckpt).eval()
    schedule = schedule_of(ckpt)
    cond = torch.from_numpy(to_signal(x_nom).astype(np.float32))[None, None]
    out = []
    with torch.no_grad(), model.fixed_condition(cond, res):
        for start in range(0, count, batch_size):
            ids = range(start, min(count, start + batch_size))
            gens = [torch.Generator().manual_seed(derived_seed(seed, i)) for i in ids]
            draw = lambda: torch.stack([torch.randn((1, *res), generator=g) for g in gens])
            x_T = draw()
            c = cond.expand(len(gens), -1, -1, -1)

            def eps_fn(x, t, c=c):
                return model(x, torch.full((len(x),), t, dtype=torch.long), c)

            x0 = ancestral_sample(eps_fn, schedule, x_T, lambda t: draw())
            out.append(x0[:, 0].numpy())
    x0 = np.concatenate(out)
    return x0 if return_signal else from_signal(x0)


def predict_noise(ckpt, x_t, t, x_nom, model=None):
    """Single denoiser evaluation on one noisy grid; returns the predicted noise."""
    x_nom = check_cell(x_nom, "x_nom")
    x_t = np.asarray(x_t, dtype=np.float32)
    if x_t.shape != x_nom.shape or list(x_t.shape) != list(ckpt.meta["resolution"]):
        raise ShapeMismatch(f"x_t {x_t.shape} / x_nom {x_nom.shape} do not match "
                            f"resolution {tuple(ckpt.meta['resolution'])}")
    T = ckpt.meta["schedule"]["T"]
    if not 1 <= t <= T:
        raise ValueError(f"t must lie in [1, {T}]")
    model = build_model(ckpt).eval() if model is None else model
    with torch.no_grad():
        out = model(torch.from_numpy(x_t)[None, None], torch.tensor([int(t)]),
                    torch.from_numpy(to_signal(x_nom).astype(np.float32))[None, None])
    return out[0, 0].numpy()


# ---------------------------------------------------------------------------
# Monte Carlo uncertainty propagation


COMPONENTS = ("C11", "C12", "C22", "C33")


@dataclass
class UQResult:
    samples: list
    values: np.ndarray
    stats: dict
    n_excluded: int = 0
    errors: list = field(default_factory=list)


def _as_components(value):
    if hasattr(value, "components"):
        return np.asarray(value.components(), dtype=np.float64)
    return np.atleast_1d(np.asarray(value, dtype=np.float64))


def summarize(values, names=None, kappa=1.645):
    """Per-column mean, std (ddof=1), 5/95% quantiles and ``mean - kappa * std``."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    names = names or [f"p{i}" for i in range(values.shape[1])]
    stats = {}
    for j, name in enumerate(names):
        col = values[:, j]
        mean = float(np.mean(col))
        std = float(np.std(col, ddof=1)) if len(col) > 1 else 0.0
        stats[name] = {"mean": mean, "std": std,
                       "q05": float(np.quantile(col, 0.05)), "q95": float(np.quantile(col, 0.95)),
                       "lcb": mean - kappa * std}
    return stats


def mc_property_uq(ckpt, x_nom, n, property_fn, kappa=1.645, rng=None, cells=None):
    """Sample ``n`` geometries, map each through ``property_fn`` and summarize.

    Samples whose property evaluation raises are excluded and counted.
    ``cells`` bypasses sampling (used to evaluate other generators).
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    cells = sample(ckpt, x_nom, n, rng=rng) if cells is None else cells
    values, kept, errors = [], [], []
    for i, cell in enumerate(cells):
        try:
            v = property_fn(cell)
        except Exception as exc:  # noqa: BLE001 - failures are reported per sample
            errors.append((i, repr(exc)))
            continue
        values.append(_as_components(v))
        kept.append(v)
    if len(values) < 2:
        raise ValueError(f"only {len(values)} of {len(cells)} samples produced properties")
    if errors:
        warnings.warn(f"{len(errors)} samples excluded from property statistics")
    values = np.stack(values)
    names = list(COMPONENTS) if values.shape[1] == 4 else None
    return UQResult(kept, values, summarize(values, names, kappa), len(errors), errors)
