"""Cross-validated training with two Adam groups and early stopping."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core import Adam, Tape
from .data import apply_missing, generate_synthetic, import_subjects, make_fold_plan, modality_dims
from .model import GraphModel, drop_incomplete_modalities

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class FoldResult:
    fold: int
    metrics: dict
    epoch_best: int
    history: list = field(default_factory=list)
    model: GraphModel | None = None


def fold_seed(seed, fold):
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def load_dataset(config: RunConfig):
    if config.data == "synthetic":
        return generate_synthetic(config.n_subjects, class_count=config.n_classes, seed=config.seed,
                                  cell_graphs=config.cell_graphs)
    return import_subjects(config.data)


def prepare(config: RunConfig, dataset):
    """Fold plan plus the missingness and drop-variant transforms the config asks for."""
    plan = make_fold_plan(dataset, config.folds, seed=config.seed, strata=[s.grade for s in dataset])
    for m, eta in sorted(config.missing.items()):
        dataset = apply_missing(dataset, m, float(eta), seed=config.seed, fold_plan=plan)
    if config.variant == "no_completion_drop":
        dataset = drop_incomplete_modalities(dataset)
    return dataset, plan


def split_validation(train_idx, dataset, fraction, rng):
    if fraction <= 0 or len(train_idx) < 10:
        return train_idx, train_idx
    by_grade = {}
    for i in train_idx:
        by_grade.setdefault(dataset[i].grade, []).append(i)
    val = []
    for g in sorted(by_grade):
        members = rng.permutation(by_grade[g])
        val.extend(members[: max(1, int(round(fraction * len(members))))].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    train = np.setdiff1d(train_idx, val)
    return train, val


def train_model(config: RunConfig, train_set, val_set, seed, epochs=None, verbose=False):
    """Fit one model; returns it restored to the best-validation epoch plus the history."""
    rng = np.random.default_rng(seed)
    dims = modality_dims(train_set + val_set)
    model = GraphModel(config, dims, train_set, rng)
    opt_main = Adam(model.main_parameters(), lr=config.lr, weight_decay=config.weight_decay,
                    decoupled=config.decoupled_weight_decay)
    prompt_params = model.prompt_parameters()
    opt_prompt = Adam(prompt_params, lr=config.prompt_lr, weight_decay=config.weight_decay,
                      decoupled=config.decoupled_weight_decay) if prompt_params else None

    epochs = config.epochs if epochs is None else epochs
    best_loss, best_epoch, best_state, stale = np.inf, 0, model.state_dict(), 0
    history = []
    n = len(train_set)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            with Tape() as tape:
                out = model.forward(batch, training=True, rng=rng)
                loss = model.loss(out, batch)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            grads = tape.backward(loss)
            opt_main.step(grads)
            if opt_prompt is not None:
                opt_prompt.step(grads)
            total += value * len(batch)
        val = model.evaluate(val_set)
        row = {"epoch": epoch, "train_loss": total / n, **{f"val_{k}": v for k, v in val.items()}}
        history.append(row)
        if verbose:
            log.info("epoch %d %s", epoch, row)
        if val["loss"] < best_loss - config.min_delta:
            best_loss, best_epoch, best_state, stale = val["loss"], epoch, model.state_dict(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    return model, history, best_epoch


def run_fold(config, dataset, plan, fold, epochs=None):
    seed = fold_seed(config.seed, fold)
    rng = np.random.default_rng([seed, 1])
    train_idx, val_idx = split_validation(plan.train(fold), dataset, config.val_fraction, rng)
    train_set = [dataset[i] for i in train_idx]
    val_set = [dataset[i] for i in val_idx]
    test_set = [dataset[i] for i in plan.test(fold)]
    model, history, best = train_model(config, train_set, val_set, seed, epochs=epochs)
    metrics = model.evaluate(test_set)
    return FoldResult(fold, metrics, best, history, model)


def metrics_record(config, fold, metrics, epoch_best):
    return {
        "variant": config.variant, "fold": fold,
        "auc": metrics.get("auc"), "acc": metrics.get("acc"), "c_index": metrics.get("c_index"),
        "seed": config.seed, "epoch_best": epoch_best,
    }


def mean_record(config, records):
    out = {"variant": config.variant, "fold": "mean", "seed": config.seed}
    for key in ("auc", "acc", "c_index", "epoch_best"):
        vals = [r[key] for r in records if r[key] is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


def run_train(config: RunConfig, dataset=None, out_dir=None, epochs=None):
    """Train every fold (up to ``max_folds``); optionally write checkpoints and logs."""
    config.validate()
    dataset = load_dataset(config) if dataset is None else dataset
    dataset, plan = prepare(config, dataset)
    n_run = len(plan) if config.max_folds is None else min(config.max_folds, len(plan))
    results = [run_fold(config, dataset, plan, k, epochs=epochs) for k in range(n_run)]
    records = [metrics_record(config, r.fold, r.metrics, r.epoch_best) for r in results]
    report = {"folds": records, "mean": mean_record(config, records)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        for r in results:
            r.model.save(out / f"fold{r.fold}.npz")
        (out / "log.json").write_text(json.dumps(
            {"history": {r.fold: r.history for r in results}, **report}, indent=2))
    return results, report


def run_eval(checkpoint_dir, dataset=None):
    """Re-evaluate saved fold checkpoints on their test splits."""
    ckpt = Path(checkpoint_dir)
    config = RunConfig.from_dict(json.loads((ckpt / "config.json").read_text()))
    dataset = load_dataset(config) if dataset is None else dataset
    dataset, plan = prepare(config, dataset)
    log_obj = json.loads((ckpt / "log.json").read_text()) if (ckpt / "log.json").exists() else {}
    best = {r["fold"]: r["epoch_best"] for r in log_obj.get("folds", [])}
    records = []
    for path in sorted(ckpt.glob("fold*.npz")):
        fold = int(path.stem[4:])
        model = GraphModel.load(path)
        dims = modality_dims(dataset)
        for m, d in dims.items():
            if model.input_dims.get(m, d) != d:
                raise ValueError(f"checkpoint expects dim {model.input_dims[m]} for {m.name}, data has {d}")
        metrics = model.evaluate([dataset[i] for i in plan.test(fold)])
        records.append(metrics_record(config, fold, metrics, best.get(fold)))
    if not records:
        raise FileNotFoundError(f"no fold checkpoints in {ckpt}")
    return {"folds": records, "mean": mean_record(config, records)}
