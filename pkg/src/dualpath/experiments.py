"""Experiment orchestration: multi-seed runs, ablation grid, noise sweep.

Every run is a pure function of its config, and report files contain no
timestamps or timings, so identical (config, seeds) produce identical
bytes. Wall-clock lives only in the in-memory TrainHistory.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from dualpath.fusion import Ablation, Model, ModelConfig
from dualpath.losses import LossConfig
from dualpath.metrics import Metrics, evaluate, gating_summary, predict
from dualpath.perception import REPORT_COLUMNS
from dualpath.rng import Rng
from dualpath.synthdata import (Dataset, DatasetConfig, dataset_digest, generate,
                                inject_noise_dataset)
from dualpath.trainer import TrainConfig, TrainHistory, train

ABLATION_FLAGS = ("no_int", "no_rea", "no_sim", "no_diff", "no_uni", "no_rea_loss")

DEFAULT_SIGMAS = (0.0, 0.1, 0.3, 0.5, 0.7)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    hidden_dim: int | None = None       # None -> feature_dim
    temperature: float = 1.0
    share_shared_encoder: bool = False
    no_int: bool = False
    no_rea: bool = False
    no_sim: bool = False
    no_diff: bool = False
    no_uni: bool = False
    no_rea_loss: bool = False
    sigmas: tuple = DEFAULT_SIGMAS
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"

    def validate(self) -> None:
        self.dataset.validate()
        self.train.validate()
        self.loss.validate()
        if self.no_int and self.no_rea:
            raise ValueError("no_int and no_rea cannot both be set")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("sigmas must be >= 0")
        if not self.seeds:
            raise ValueError("need at least one seed")

    def model_config(self, seed: int) -> ModelConfig:
        return ModelConfig(
            feature_dim=self.dataset.feature_dim,
            num_classes=self.dataset.num_classes,
            hidden_dim=self.hidden_dim or self.dataset.feature_dim,
            temperature=self.temperature,
            dropout=self.train.dropout,
            share_shared_encoder=self.share_shared_encoder,
            init_seed=seed,
        )

    def effective_loss(self) -> LossConfig:
        kw = asdict(self.loss)
        if self.no_rea or self.no_rea_loss:
            kw["reasoning_weight"] = 0.0
        if self.no_uni:
            kw["unimodal_weight"] = 0.0
        if self.no_diff:
            kw["orthogonality_weight"] = 0.0
        if self.no_sim:
            kw["alignment_weight"] = 0.0
        return LossConfig(**kw)

    def ablation(self) -> Ablation | None:
        if self.no_int or self.no_rea:
            return Ablation(no_int=self.no_int, no_rea=self.no_rea)
        return None

    def as_dict(self) -> dict:
        d = asdict(self)
        d["sigmas"] = list(self.sigmas)
        d["seeds"] = list(self.seeds)
        return d


def load_experiment_config(source) -> ExperimentConfig:
    """Build a config from a JSON file path or an already-parsed dict.

    Unknown keys are rejected so typos fail loudly.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            raw = json.load(fh)
    else:
        raw = dict(source)
    kwargs: dict = {}
    for section, cls in (("dataset", DatasetConfig), ("train", TrainConfig),
                         ("loss", LossConfig)):
        block = raw.pop(section, {})
        known = cls.__dataclass_fields__
        bad = set(block) - set(known)
        if bad:
            raise ValueError(f"unknown {section} config keys: {sorted(bad)}")
        kwargs[section] = cls(**block)
    model_block = raw.pop("model", {})
    allowed_model = {"hidden_dim", "temperature", "share_shared_encoder"}
    bad = set(model_block) - allowed_model
    if bad:
        raise ValueError(f"unknown model config keys: {sorted(bad)}")
    kwargs.update(model_block)
    for key in ("sigmas", "seeds"):
        if key in raw:
            kwargs[key] = tuple(raw.pop(key))
    for key in ABLATION_FLAGS + ("out_dir",):
        if key in raw:
            kwargs[key] = raw.pop(key)
    if raw:
        raise ValueError(f"unknown config keys: {sorted(raw)}")
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


# -- deterministic report writing ------------------------------------------

def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(render_csv(header, rows))


def _mean_std(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def _aggregate(rows: list[dict], keys: list[str]) -> dict:
    out = {}
    for key in keys:
        vals = [r[key] for r in rows if r[key] is not None]
        out[key] = _mean_std(vals) if vals else None
    return out


METRIC_KEYS = ["acc", "macro_f1", "macro_precision", "macro_recall",
               "weighted_f1", "weighted_precision",
               "conflict_subset_acc", "consistent_subset_acc"]


# -- single run --------------------------------------------------------------

def train_single(cfg: ExperimentConfig, seed: int,
                 splits: tuple[Dataset, Dataset, Dataset] | None = None,
                 ) -> tuple[Model, TrainHistory, Metrics, dict]:
    """Train one model at one seed; returns it with metrics on test."""
    cfg.validate()
    if splits is None:
        splits = generate(cfg.dataset)
    train_data, val_data, test_data = splits
    model = Model(cfg.model_config(seed))
    ablation = cfg.ablation()
    tc = replace(cfg.train, seed=seed)
    history = train(model, train_data, val_data, tc, cfg.effective_loss(),
                    ablation=ablation)
    metrics = evaluate(model, test_data, ablation)
    gating = gating_summary(model, test_data, ablation)
    return model, history, metrics, gating


def _seed_row(seed: int, metrics: Metrics, gating: dict) -> dict:
    row = {"seed": seed}
    row.update(metrics.as_dict())
    row.update(gating)
    return row


# -- experiments -------------------------------------------------------------

def run_main(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Multi-seed training of the configured variant; reports per-seed and
    aggregate metrics plus gate behavior on conflicted vs consistent
    test subsets."""
    cfg.validate()
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    splits = generate(cfg.dataset)
    test_data = splits[2]
    rows = []
    gating_rows = []
    for seed in cfg.seeds:
        model, history, metrics, gating = train_single(cfg, seed, splits)
        rows.append(_seed_row(seed, metrics, gating))
        out_batch = model.forward_batch(test_data.text, test_data.video,
                                        test_data.audio, train=False,
                                        ablation=cfg.ablation())
        per_sample = out_batch.report.rows()
        for i in range(len(test_data)):
            gating_rows.append([seed, i, int(test_data.conflict_flag[i] >= 0)]
                               + [float(x) for x in per_sample[i]])
    gate_conf = [r["gate_mean_conflicted"] for r in rows]
    gate_cons = [r["gate_mean_consistent"] for r in rows]
    higher = [int(a is not None and b is not None and a > b)
              for a, b in zip(gate_conf, gate_cons)]
    report = {
        "experiment": "main",
        "config": cfg.as_dict(),
        "dataset_digest": {
            "train": dataset_digest(splits[0], cfg.dataset),
            "val": dataset_digest(splits[1], cfg.dataset),
            "test": dataset_digest(splits[2], cfg.dataset),
        },
        "per_seed": rows,
        "aggregate": _aggregate(rows, METRIC_KEYS + ["gate_mean_conflicted",
                                                     "gate_mean_consistent"]),
        "gate_higher_on_conflict_seeds": int(sum(higher)),
        "n_seeds": len(cfg.seeds),
    }
    write_json(os.path.join(out, "main_report.json"), report)
    write_csv(os.path.join(out, "main_metrics.csv"),
              ["seed"] + METRIC_KEYS,
              [[r["seed"]] + [r[k] for k in METRIC_KEYS] for r in rows])
    write_csv(os.path.join(out, "gating.csv"),
              ["seed", "sample", "conflicted"] + list(REPORT_COLUMNS),
              gating_rows)
    return report


def run_ablation(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Full model plus each single-flag ablation on byte-identical data."""
    cfg.validate()
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    splits = generate(cfg.dataset)
    digest = dataset_digest(splits[0], cfg.dataset)
    variants = [("full", {})] + [(flag, {flag: True}) for flag in ABLATION_FLAGS]
    variant_rows = []
    for name, flags in variants:
        cleared = {f: False for f in ABLATION_FLAGS}
        cleared.update(flags)
        vcfg = replace(cfg, **cleared)
        seed_rows = []
        for seed in cfg.seeds:
            _, _, metrics, gating = train_single(vcfg, seed, splits)
            seed_rows.append(_seed_row(seed, metrics, gating))
        variant_rows.append({
            "variant": name,
            "dataset_digest": digest,
            "per_seed": seed_rows,
            "aggregate": _aggregate(seed_rows, METRIC_KEYS + ["gate_mean"]),
        })
    report = {
        "experiment": "ablation",
        "config": cfg.as_dict(),
        "variants": variant_rows,
    }
    write_json(os.path.join(out, "ablation_report.json"), report)
    csv_rows = []
    for vr in variant_rows:
        for r in vr["per_seed"]:
            csv_rows.append([vr["variant"], r["seed"]]
                            + [r[k] for k in METRIC_KEYS] + [r["gate_mean"]])
    write_csv(os.path.join(out, "ablation.csv"),
              ["variant", "seed"] + METRIC_KEYS + ["gate_mean"], csv_rows)
    return report


def run_robustness(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Train on clean data; evaluate with Gaussian noise injected into the
    text features at each sigma. Noise draws depend only on the dataset
    seed and sigma, so reports are reproducible."""
    cfg.validate()
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    splits = generate(cfg.dataset)
    test_data = splits[2]
    noisy_tests = {}
    for si, sigma in enumerate(cfg.sigmas):
        rng = Rng(cfg.dataset.seed, "robust/noise", si)
        noisy_tests[sigma] = inject_noise_dataset(test_data, sigma, "text", rng)
    per_seed = []
    for seed in cfg.seeds:
        model, _, clean_metrics, _ = train_single(cfg, seed, splits)
        sigma_rows = []
        for sigma in cfg.sigmas:
            m = evaluate(model, noisy_tests[sigma], cfg.ablation())
            sigma_rows.append({"sigma": sigma, **m.as_dict()})
        per_seed.append({"seed": seed, "clean": clean_metrics.as_dict(),
                         "by_sigma": sigma_rows})
    by_sigma_mean = []
    for si, sigma in enumerate(cfg.sigmas):
        rows = [ps["by_sigma"][si] for ps in per_seed]
        by_sigma_mean.append({"sigma": sigma,
                              **{k: _mean_std([r[k] for r in rows])
                                 for k in ("acc", "macro_f1", "weighted_f1")}})
    report = {
        "experiment": "robustness",
        "config": cfg.as_dict(),
        "noise_modality": "text",
        "per_seed": per_seed,
        "by_sigma_mean": by_sigma_mean,
    }
    write_json(os.path.join(out, "robustness_report.json"), report)
    csv_rows = []
    for ps in per_seed:
        for r in ps["by_sigma"]:
            csv_rows.append([ps["seed"], r["sigma"], r["acc"], r["macro_f1"],
                             r["weighted_f1"]])
    write_csv(os.path.join(out, "robustness.csv"),
              ["seed", "sigma", "acc", "macro_f1", "weighted_f1"], csv_rows)
    return report
