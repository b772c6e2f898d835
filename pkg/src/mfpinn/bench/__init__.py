"""Benchmark cases, metrics, run orchestration and the command line interface."""
from .config import SCHEMA_VERSION, BenchmarkCase, ConfigError, case_from_dict, case_to_dict, load_config, with_overrides
from .heatmap import export_heatmap, read_minmax, read_pgm
from .metrics import Metrics, compute_metrics, delta_keff_pcm
from .registry import shipped_configs, shipped_path
from .runner import get_reference, recompute_metrics, run_eigen, run_reference, run_source

__all__ = [
    "SCHEMA_VERSION", "BenchmarkCase", "ConfigError", "case_from_dict", "case_to_dict", "load_config",
    "with_overrides", "export_heatmap", "read_minmax", "read_pgm", "Metrics", "compute_metrics", "delta_keff_pcm", "shipped_configs",
    "shipped_path", "get_reference", "recompute_metrics", "run_eigen", "run_reference", "run_source",
]
