"""Experiment configuration: packaged profiles, user overrides and hashing.

The ``paper`` profile holds the full-scale reference settings; ``desk`` is a
delta applied on top of it for CPU-sized runs.
"""

import copy
import hashlib
import json
from importlib import resources

from ..diffusion import FREEZE_PRESETS, DenoiserConfig, FreezeSpec, TrainConfig
from ..exceptions import ConfigError

PROFILES = ("paper", "desk")


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _defaults():
    text = resources.files("gust.pipeline").joinpath("defaults.json").read_text()
    return json.loads(text)


def profile_config(profile="desk"):
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
    d = _defaults()
    return d["paper"] if profile == "paper" else deep_merge(d["paper"], d[profile])


def load_config(path=None, profile="desk", seed=None, overrides=None):
    """Profile defaults, then the JSON file at ``path``, then ``overrides``, then ``seed``."""
    cfg = profile_config(profile)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = deep_merge(cfg, user)
    if overrides:
        cfg = deep_merge(cfg, overrides)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def config_hash(cfg):
    """Hash of the canonical JSON form; independent of key order."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def denoiser_config(cfg):
    return DenoiserConfig(**cfg["denoiser"])


def train_config(cfg, section, **extra):
    kw = dict(cfg[section])
    kw.update({k: v for k, v in extra.items() if v is not None})
    kw.setdefault("seed", cfg["seed"])
    return TrainConfig(**kw)


def freeze_spec(cfg):
    f = cfg["freeze"]
    if isinstance(f, str):
        if f not in FREEZE_PRESETS:
            raise ConfigError(f"unknown freeze preset {f!r}")
        return FREEZE_PRESETS[f]
    return FreezeSpec.from_dict(f)


def validate_config(cfg):
    try:
        res = cfg["resolution"]
        if not isinstance(res, int) or res < 4 or res % 2:
            raise ConfigError(f"resolution must be an even integer >= 4, got {res!r}")
        dcfg = denoiser_config(cfg)
        dcfg.check_resolution((res, res))
        train_config(cfg, "pretrain")
        train_config(cfg, "finetune")
        freeze_spec(cfg)
        noms = cfg["nominals"]
        for key in ("pretrain", "finetune", "eval"):
            if int(noms[key]) < 1:
                raise ConfigError(f"nominals.{key} must be >= 1")
        if noms.get("source") is not None:
            import os

            if not os.path.isdir(noms["source"]):
                raise ConfigError(f"nominal source directory {noms['source']} does not exist")
        unknown = set(cfg["baselines"]["methods"]) - {"dt", "grf", "mle"}
        if unknown:
            raise ConfigError(f"unknown baseline methods {sorted(unknown)}")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
