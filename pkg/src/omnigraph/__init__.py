"""Heterogeneous-graph multimodal learning with prompt-based modality completion."""

from .config import RunConfig, load_config
from .data import SubjectRecord, apply_missing, generate_synthetic, import_subjects
from .model import GraphModel
from .training import run_eval, run_train

__version__ = "0.1.0"

__all__ = ["GraphModel", "RunConfig", "SubjectRecord", "apply_missing", "generate_synthetic",
           "import_subjects", "load_config", "run_eval", "run_train"]
