"""Run configuration and stage manifests for the pipeline CLI.

One JSON config drives every stage. Each stage writes a manifest recording
the config snapshot, the input files it read, and sha256 digests of the
files it wrote, so a run can be audited after the fact. Manifests carry no
timestamps: reruns of the same config must produce byte-identical output.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .data import SplitSpec, SyntheticDomainConfig, make_benchmark
from .errors import ConfigError
from .expansion import Hyperparams
from .fusion import FUSION_METHODS


def _from_mapping(cls, raw: dict, section: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(
            f"unknown keys in section {section!r}: {sorted(unknown)}"
        )
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


@dataclass
class DataConfig:
    """Synthetic benchmark knobs plus the split policy."""

    num_classes: int = 5
    feature_dim: int = 10
    samples_per_class: int = 200
    mean_scale: float = 1.5
    noise_std: float = 1.0
    source_rotations_deg: list[float] = field(default_factory=lambda: [15.0, 55.0, 85.0])
    source_shift_sigmas: list[float] = field(default_factory=lambda: [0.5, 1.25, 2.0])
    new_rotation_deg: float = 0.0
    new_shift_sigma: float = 1.0
    plane_signal_fraction: float = 0.5
    train_fraction: float = 0.70
    standardize: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )

    def benchmark(self):
        return make_benchmark(
            num_classes=self.num_classes,
            feature_dim=self.feature_dim,
            samples_per_class=self.samples_per_class,
            mean_scale=self.mean_scale,
            noise_std=self.noise_std,
            source_rotations_deg=tuple(self.source_rotations_deg),
            source_shift_sigmas=tuple(self.source_shift_sigmas),
            new_rotation_deg=self.new_rotation_deg,
            new_shift_sigma=self.new_shift_sigma,
            plane_signal_fraction=self.plane_signal_fraction,
            seed=self.seed,
        )

    def split_spec(self) -> SplitSpec:
        return SplitSpec(train_fraction=self.train_fraction, seed=self.seed)

    @property
    def num_sources(self) -> int:
        return len(self.source_rotations_deg)


@dataclass
class ModelConfig:
    # One hidden layer of 1000 relu units is the reference shallow setting.
    hidden_units: list[int] = field(default_factory=lambda: [1000])

    def __post_init__(self):
        if any(int(h) < 1 for h in self.hidden_units):
            raise ConfigError(f"hidden_units must be positive, got {self.hidden_units}")
        self.hidden_units = [int(h) for h in self.hidden_units]


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        # epochs = 0 is legal and leaves the freshly initialized model as is.
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("pretrain needs epochs >= 0, batch_size >= 1, lr > 0")


@dataclass
class EvaluateConfig:
    methods: list[str] = field(default_factory=lambda: list(FUSION_METHODS))

    def __post_init__(self):
        bad = [m for m in self.methods if m not in FUSION_METHODS]
        if bad:
            raise ConfigError(f"unknown fusion methods {bad}; valid: {FUSION_METHODS}")


@dataclass
class GradcheckConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("gradcheck needs at least one seed")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    expansion: Hyperparams = field(default_factory=Hyperparams)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        sections = {
            "data": DataConfig,
            "model": ModelConfig,
            "pretrain": PretrainConfig,
            "expansion": Hyperparams,
            "evaluate": EvaluateConfig,
            "gradcheck": GradcheckConfig,
        }
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {
            name: _from_mapping(section_cls, raw.get(name, {}), name)
            for name, section_cls in sections.items()
        }
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a config file; a missing path means all defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)


@dataclass
class OutputLayout:
    """Canonical file locations inside one run directory."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def models_dir(self) -> Path:
        return self.root / "models"

    @property
    def expanded_dir(self) -> Path:
        return self.root / "expanded"

    @property
    def eval_dir(self) -> Path:
        return self.root / "eval"

    @property
    def checks_dir(self) -> Path:
        return self.root / "checks"

    def domain_csv(self, domain: str, part: str) -> Path:
        return self.data_dir / f"{domain}_{part}.csv"

    @property
    def new_unlabelled_csv(self) -> Path:
        return self.data_dir / "new_unlabelled.csv"

    def original_model(self, index: int) -> Path:
        return self.models_dir / f"original_{index}.json"

    def updated_model(self, index: int) -> Path:
        return self.expanded_dir / f"updated_{index}.json"

    @property
    def training_log(self) -> Path:
        return self.expanded_dir / "training_log.ndjson"

    @property
    def report_json(self) -> Path:
        return self.eval_dir / "report.json"

    @property
    def results_table(self) -> Path:
        return self.eval_dir / "results_table.txt"

    @property
    def gradcheck_json(self) -> Path:
        return self.checks_dir / "gradcheck.json"

    def manifest(self, stage: str) -> Path:
        return self.root / f"{stage}_manifest.json"


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    layout: OutputLayout,
    stage: str,
    cfg: RunConfig,
    inputs: list[Path],
    outputs: list[Path],
) -> Path:
    """Record what a stage consumed and produced, digesting every output."""

    def rel(p: Path) -> str:
        p = Path(p)
        try:
            return p.resolve().relative_to(layout.root.resolve()).as_posix()
        except ValueError:
            return p.as_posix()

    payload: dict[str, Any] = {
        "stage": stage,
        "config": cfg.to_dict(),
        "inputs": [rel(p) for p in inputs],
        "outputs": [{"path": rel(p), "sha256": sha256_file(p)} for p in outputs],
    }
    path = layout.manifest(stage)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def read_manifest(layout: OutputLayout, stage: str) -> dict:
    return json.loads(layout.manifest(stage).read_text())
