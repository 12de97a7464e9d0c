"""Run configuration and its defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .tasks import build_variant


@dataclass
class RunConfig:
    task: str = "grading"
    variant: str = "full"
    # model
    d: int = 64
    heads: int = 4
    layers: int = 2
    hops: int = 2
    n_prompts: int = 5
    n_bank: int = 5
    dropout: float = 0.2
    n_classes: int = 3
    n_bins: int = 4
    tie_kv: bool = False
    residual: bool = False
    layer_norm: bool = False
    kqv_bias: bool = False
    path_edges: bool = True
    intra_modal_topology: str = "complete"
    cell_gcn_dim: int = 16
    # optimisation
    lr: float = 1e-3
    prompt_lr: float = 2e-4
    weight_decay: float = 1e-5
    decoupled_weight_decay: bool = True
    epochs: int = 150
    patience: int = 25
    min_delta: float = 1e-4
    batch_size: int = 8
    val_fraction: float = 0.15
    # augmentation
    augment: bool = True
    edge_drop: float = 0.1
    node_drop: float = 0.05
    feature_noise: float = 0.01
    # data and protocol
    missing: dict = field(default_factory=dict)
    folds: int = 5
    max_folds: int | None = None
    seed: int = 0
    data: str = "synthetic"
    n_subjects: int = 300
    cell_graphs: bool = False

    def validate(self):
        if self.task not in ("grading", "survival"):
            raise ValueError(f"unknown task {self.task!r}")
        build_variant(self.variant)
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if not 1 <= self.hops <= 2:
            raise ValueError("hops must be 1 or 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for m, eta in self.missing.items():
            if m.upper() not in "GICT" or not 0.0 <= float(eta) <= 1.0:
                raise ValueError(f"bad missing ratio {m}={eta}")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def updated(self, **changes):
        out = self.to_dict()
        out.update(changes)
        return RunConfig.from_dict(out)


def load_config(path, base=None):
    """Overlay a JSON config file on ``base`` (defaults if omitted)."""
    obj = json.loads(Path(path).read_text())
    merged = (base or RunConfig()).to_dict()
    merged.update(obj)
    return RunConfig.from_dict(merged).validate()


def save_config(config, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


DEFAULT_CONFIG_PATH = Path(__file__).with_name("configs") / "default.json"
