"""Experiment configuration: one JSON document drives every CLI command."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

MODELS = ("gaussian", "logistic")
INIT_MODES = ("perturbed", "kmeans", "warm_start", "zero", "jitter")
DATA_SOURCES = ("lowdim", "highdim", "logistic_demo", "csv")

# Field documentation rendered into the generated schema file.
FIELD_DOCS = {
    "model": "Model kind: gaussian (continuous targets) or logistic (classes).",
    "n_experts": "Number of experts K.",
    "n_covariates": "Covariate dimension P (generators only; CSV infers it).",
    "n_targets": "Target dimension Q for the Gaussian model.",
    "n_classes": "Class count M for the logistic model.",
    "gating_degree": "Polynomial degree of the gating scores.",
    "mean_degree": "Polynomial degree of the expert means / class scores.",
    "gamma0": "Step-size scale; gamma_n = gamma0 * n^(-alpha), in (0,1).",
    "alpha": "Step-size decay exponent in (1/2, 1].",
    "epsilon_star": "Ridge added to the curvature bounds; must be positive.",
    "init": "Initialization: perturbed | kmeans | warm_start | zero | jitter.",
    "init_jitter": "Std of the expert-coefficient offsets for jitter init.",
    "noise_scale": "Std of the per-coordinate noise for perturbed init.",
    "kmeans_restarts": "Random-centroid restarts for the k-means init.",
    "iterations": "Streaming iteration budget N (capped by available data).",
    "polyak_start": "First iteration entering the Polyak average.",
    "seeds": "Seed list; every seed yields one full run.",
    "optimizers": "Methods to run: mm plus any of sgd/adam/adamw/rmsprop/sophia.",
    "learning_rates": "Optional per-method learning-rate overrides.",
    "data_source": "lowdim | highdim | logistic_demo generators, or csv.",
    "csv_path": "Dataset path when data_source is csv.",
    "n_samples": "Generated dataset size.",
    "covariate_law": "Generator covariate law: uniform on (-1,1) or normal.",
    "truth_seed": "Seed of the highdim truth generator.",
    "split_fraction": "Training fraction of the train/test split, in (0,1).",
    "warmup": "Leading samples averaged into the initial statistic s0.",
    "replay_warmup": "Whether warm-up samples re-enter the training stream.",
    "snapshot_stride": "Keep every m-th parameter snapshot in reports.",
    "eval_points": "Number of points for the estimation-error protocol.",
    "out_dir": "Output directory for datasets, reports and exports.",
}


@dataclass
class ExperimentConfig:
    model: str = "gaussian"
    n_experts: int = 2
    n_covariates: int = 2
    n_targets: int = 1
    n_classes: int = 2
    gating_degree: int = 1
    mean_degree: int = 1
    gamma0: float = 0.9
    alpha: float = 0.6
    epsilon_star: float = 1e-6
    init: str = "kmeans"
    init_jitter: float = 0.1
    noise_scale: float = 0.005
    kmeans_restarts: int = 10
    iterations: int = 1600
    polyak_start: int = 100
    seeds: list = field(default_factory=lambda: [0])
    optimizers: list = field(
        default_factory=lambda: ["mm", "sgd", "adam", "adamw", "rmsprop", "sophia"]
    )
    learning_rates: dict = field(default_factory=dict)
    data_source: str = "lowdim"
    csv_path: str | None = None
    n_samples: int = 2000
    covariate_law: str = "uniform"
    truth_seed: int = 1
    split_fraction: float = 0.8
    warmup: int = 85
    replay_warmup: bool = False
    snapshot_stride: int = 1
    eval_points: int = 2000
    out_dir: str = "runs"

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.data_source not in DATA_SOURCES:
            raise ValueError(f"data_source must be one of {DATA_SOURCES}")
        for name in ("n_experts", "n_covariates", "n_targets", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.iterations < 0 or self.warmup < 1:
            raise ValueError("iterations must be >= 0 and warmup >= 1")
        if self.data_source == "csv" and not self.csv_path:
            raise ValueError("csv data_source requires csv_path")
        if self.model == "logistic" and self.data_source in ("lowdim", "highdim"):
            raise ValueError(f"{self.data_source} generates continuous targets")
        if self.model == "gaussian" and self.data_source == "logistic_demo":
            raise ValueError("logistic_demo generates class targets")
        if self.model == "logistic" and self.init in ("kmeans", "warm_start"):
            raise ValueError("logistic model supports init zero, jitter or perturbed")
        return self

    @classmethod
    def from_dict(cls, payload):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload).validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def canonical_json(self):
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def content_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def to_dict(self):
        return asdict(self)


def config_schema():
    """Schema document: every field with its default and a one-line doc."""
    defaults = asdict(ExperimentConfig())
    return {
        name: {"default": defaults[name], "doc": FIELD_DOCS[name]} for name in defaults
    }


def write_schema(path):
    with open(path, "w") as fh:
        json.dump(config_schema(), fh, indent=2, sort_keys=True)
        fh.write("\n")
