"""Run manifest: which stages finished, what they wrote, under which config."""

import hashlib
import json
import os

from ..diffusion import Checkpoint
from ..exceptions import ConfigMismatch, FormatError
from .config import config_hash
from .io import read_dataset

MANIFEST_NAME = "manifest.json"


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class Manifest:
    """JSON record kept at ``<out>/manifest.json``.

    Stage entries hold output paths relative to ``out``, wall-clock seconds
    and the seed used.  A manifest is bound to one configuration hash.
    """

    def __init__(self, out, cfg, data=None):
        self.out = os.fspath(out)
        self.cfg = cfg
        self.data = data or {"config_hash": config_hash(cfg), "config": cfg, "stages": {},
                             "report": None}

    @classmethod
    def open(cls, out, cfg):
        """Load the manifest in ``out`` or start a new one; refuses a different config."""
        path = os.path.join(out, MANIFEST_NAME)
        if not os.path.exists(path):
            os.makedirs(out, exist_ok=True)
            return cls(out, cfg)
        with open(path) as fh:
            data = json.load(fh)
        if data.get("config_hash") != config_hash(cfg) and data.get("stages"):
            raise ConfigMismatch(
                f"{path} was produced with config {data.get('config_hash')}, "
                f"current config hashes to {config_hash(cfg)}")
        data["config_hash"] = config_hash(cfg)
        data["config"] = cfg
        return cls(out, cfg, data)

    @property
    def stages(self):
        return self.data["stages"]

    def path(self, rel):
        return os.path.join(self.out, rel)

    def outputs(self, stage):
        return self.stages[stage]["outputs"]

    def output_path(self, stage, key):
        return self.path(self.outputs(stage)[key])

    def completed(self, stage):
        entry = self.stages.get(stage)
        if entry is None:
            return False
        try:
            for rel in _flatten(entry["outputs"]):
                validate_artifact(self.path(rel))
        except (OSError, FormatError):
            return False
        return True

    def record(self, stage, outputs, seconds, seed, extra=None):
        entry = {"outputs": outputs, "seconds": round(float(seconds), 3), "seed": seed}
        if extra:
            entry.update(extra)
        self.stages[stage] = entry

    def save(self):
        tmp = self.path(MANIFEST_NAME + ".tmp")
        with open(tmp, "w") as fh:
            fh.write(json.dumps(self.data, sort_keys=True, indent=1))
        os.replace(tmp, self.path(MANIFEST_NAME))

    def hash(self):
        return hashlib.sha256(_canonical(self.data).encode()).hexdigest()


def _flatten(outputs):
    if isinstance(outputs, str):
        yield outputs
    elif isinstance(outputs, dict):
        for v in outputs.values():
            yield from _flatten(v)
    else:
        for v in outputs:
            yield from _flatten(v)


def validate_artifact(path):
    """Raise if ``path`` is missing or, for known binary formats, malformed."""
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    if path.endswith(".gust"):
        read_dataset(path)
    elif path.endswith(".gckp"):
        Checkpoint.load(path)
    elif path.endswith(".json"):
        with open(path) as fh:
            try:
                json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: {exc}") from exc
