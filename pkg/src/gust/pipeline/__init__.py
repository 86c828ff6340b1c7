"""Experiment orchestration: configuration, file formats, nominal designs, stages, CLI."""

from .config import PROFILES, config_hash, deep_merge, load_config, profile_config
from .io import dumps_dataset, loads_dataset, read_dataset, write_dataset
from .manifest import Manifest, validate_artifact
from .nominals import (FAMILIES, gen_nominal, gen_nominals, import_cells, import_image,
                       is_valid_nominal, nearest_indices)
from .stages import (DEPENDENCIES, STAGES, design_metrics, emit_report, read_metrics_raw,
                     run_all, run_stage, summarize_metrics, worker_count)

__all__ = [
    "DEPENDENCIES", "FAMILIES", "Manifest", "PROFILES", "STAGES", "config_hash", "deep_merge",
    "design_metrics", "dumps_dataset", "emit_report", "gen_nominal", "gen_nominals",
    "import_cells", "import_image", "is_valid_nominal", "load_config", "loads_dataset",
    "nearest_indices", "profile_config", "read_dataset", "read_metrics_raw", "run_all",
    "run_stage", "summarize_metrics", "validate_artifact", "worker_count", "write_dataset",
]
