"""Experiment configuration: one INI section per stage, validated into frozen pydantic models.

Example::

    [experiment]
    seed = 3
    out_dir = runs

    [triggers]
    type = fgsm
    labels = multi

    [attack]
    tiers = small, big
"""

from __future__ import annotations

import configparser
import contextlib
import io
import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..attacks import ExtractAttack, FinetuneAttack
from ..embedding import JointPoison, LayerRotation, SmoothedGrad, TrainConfig
from ..nn import CosineSchedule, ModelKind, ModelSpec
from ..protocols import BlendConfig, LrTier, RestoreConfig, attack_lr_for, restore_lr_for
from ..triggers import ContentTrigger, FgsmTrigger, MultiLabel, NoiseTrigger, SingleLabel, UnrelatedTrigger

log = logging.getLogger(__name__)

SECTIONS = ("experiment", "data", "model", "triggers", "pretrain", "embed", "attack", "restore", "blend", "extract", "landscape")


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ExperimentSection(_Section):
    """Run identity and output location."""

    name: str = "run"
    seed: int = 0
    out_dir: str = "runs"
    record_wall_time: bool = False
    workers: int = Field(default=1, ge=1)
    alpha: float = Field(default=1e-6, gt=0, lt=1)


class DataSection(_Section):
    """Dataset source: IDX files when paths are given, synthetic otherwise."""

    source: Literal["synthetic", "idx"] = "synthetic"
    num_classes: int = Field(default=10, ge=2)
    per_class: int = Field(default=600, ge=1)
    image_size: int = Field(default=28, ge=12)
    ood_per_class: int = Field(default=40, ge=1)
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    ood_images: str | None = None
    ood_labels: str | None = None
    test_size: int = Field(default=1000, ge=1)
    trigger_size: int = Field(default=200, ge=1)
    pretrain_ratio: float = Field(default=0.7, gt=0, lt=1)

    @model_validator(mode="after")
    def check_paths(self) -> DataSection:
        if self.source == "idx" and not (self.train_images and self.train_labels):
            raise ValueError("data.source = idx needs train_images and train_labels")
        return self


class ModelSection(_Section):
    """Architecture; widths default to 256/128 (mlp) or 8/16 channels (small_cnn)."""

    kind: ModelKind = ModelKind.MLP
    widths: list[int] | None = None

    @field_validator("widths", mode="before")
    @classmethod
    def listify_widths(cls, value: Any) -> Any:
        return [value] if isinstance(value, int) else value

    def spec(self, input_shape: tuple[int, int, int], num_classes: int) -> ModelSpec:
        """Build the :class:`ModelSpec` for a dataset."""
        if self.kind is ModelKind.MLP:
            return ModelSpec.mlp(input_shape, num_classes, tuple(self.widths) if self.widths is not None else (256, 128))
        channels = tuple(self.widths) if self.widths is not None else (8, 16)
        return ModelSpec(kind=ModelKind.SMALL_CNN, input_shape=input_shape, num_classes=num_classes, widths=channels)


class TriggersSection(_Section):
    """Trigger family and labeling scheme."""

    type: Literal["noise", "content", "unrelated", "fgsm"] = "noise"
    labels: Literal["single", "multi"] = "single"
    target: int = Field(default=0, ge=0)
    noise_strength: float = Field(default=0.15, gt=0)
    epsilon: float = Field(default=0.1, gt=0, le=0.5)
    patch_size: int = Field(default=6, ge=1)
    patch_value: float = Field(default=1.0, gt=0, le=1)

    def trigger(self) -> NoiseTrigger | ContentTrigger | UnrelatedTrigger | FgsmTrigger:
        """The trigger family with its parameters."""
        if self.type == "noise":
            return NoiseTrigger(strength=self.noise_strength)
        if self.type == "content":
            return ContentTrigger(patch_size=self.patch_size, value=self.patch_value)
        if self.type == "unrelated":
            return UnrelatedTrigger()
        return FgsmTrigger(epsilon=self.epsilon)

    def scheme(self) -> SingleLabel | MultiLabel:
        """The labeling scheme."""
        return SingleLabel(target=self.target) if self.labels == "single" else MultiLabel()


class PretrainSection(_Section):
    """Clean pretraining."""

    enabled: bool = True
    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=128, ge=1)
    lr_start: float = Field(default=1e-3, gt=0)
    lr_end: float = Field(default=1e-5, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)


class EmbedSection(_Section):
    """Watermark embedding."""

    strategy: Literal["joint", "rotation", "smoothed"] = "joint"
    init: Literal["fresh", "pretrained"] = "fresh"
    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=128, ge=1)
    wm_batch_size: int = Field(default=32, ge=1)
    lr_start: float = Field(default=1e-3, gt=0)
    lr_end: float = Field(default=1e-5, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    n_copies: int = Field(default=50, ge=1)
    noise_std: float = Field(default=0.01, gt=0)

    def embed_strategy(self) -> JointPoison | LayerRotation | SmoothedGrad:
        """The strategy model."""
        if self.strategy == "rotation":
            return LayerRotation()
        if self.strategy == "smoothed":
            return SmoothedGrad(n_copies=self.n_copies, noise_std=self.noise_std)
        return JointPoison()


class AttackSection(_Section):
    """Fine-tuning attack grid."""

    tiers: list[LrTier] = Field(default_factory=lambda: [LrTier.SMALL, LrTier.MED, LrTier.BIG])
    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=128, ge=1)
    weight_decay: float = Field(default=1e-4, ge=0)

    @field_validator("tiers", mode="before")
    @classmethod
    def listify_tiers(cls, value: Any) -> Any:
        return [value] if isinstance(value, str) else value


class RestoreSection(_Section):
    """Clean retraining after each attack, plus the never-watermarked control."""

    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=128, ge=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    control: bool = True


class BlendSection(_Section):
    """Blended fine-tuning."""

    enabled: bool = True
    train_batch: int = Field(default=128, ge=1)
    finetune_batch: int = Field(default=128, ge=1)
    mix_interval: int = Field(default=2, ge=1)
    epochs: int = Field(default=50, ge=1)
    lr: float = Field(default=5e-4, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)


class ExtractSection(_Section):
    """Extraction attack and the follow-up retrain of the surrogate."""

    enabled: bool = True
    surrogate_kind: ModelKind | None = None
    epochs: int = Field(default=50, ge=1)
    batch_size: int = Field(default=128, ge=1)
    lr_start: float = Field(default=1e-3, gt=0)
    lr_end: float = Field(default=1e-5, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    query_budget: int | None = Field(default=None, ge=1)
    retrain_tier: LrTier = LrTier.SMALL


class LandscapeSection(_Section):
    """Loss-surface grid and trajectory projection."""

    enabled: bool = True
    tier: LrTier = LrTier.SMALL
    scenario: Literal["finetune", "extract"] = "finetune"
    mode: Literal["pca", "random"] = "pca"
    span: float = Field(default=1.0, gt=0)
    resolution: int = Field(default=41, ge=3)
    fit_trajectory: bool = True
    save_trajectory: bool = True


class ExperimentConfig(_Section):
    """Everything one run needs; one config fully determines one run."""

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    triggers: TriggersSection = Field(default_factory=TriggersSection)
    pretrain: PretrainSection = Field(default_factory=PretrainSection)
    embed: EmbedSection = Field(default_factory=EmbedSection)
    attack: AttackSection = Field(default_factory=AttackSection)
    restore: RestoreSection = Field(default_factory=RestoreSection)
    blend: BlendSection = Field(default_factory=BlendSection)
    extract: ExtractSection = Field(default_factory=ExtractSection)
    landscape: LandscapeSection = Field(default_factory=LandscapeSection)

    @model_validator(mode="after")
    def check_stages(self) -> ExperimentConfig:
        if self.triggers.type == "fgsm" and not self.pretrain.enabled:
            raise ValueError("fgsm triggers need the clean pretrain stage (pretrain.enabled = true)")
        if self.embed.init == "pretrained" and not self.pretrain.enabled:
            raise ValueError("embed.init = pretrained needs pretrain.enabled = true")
        if self.landscape.enabled and self.landscape.scenario == "finetune" and self.landscape.tier not in self.attack.tiers:
            raise ValueError(f"landscape tier {self.landscape.tier} is not in attack.tiers")
        if self.landscape.enabled and self.landscape.scenario == "extract" and not self.extract.enabled:
            raise ValueError("landscape.scenario = extract needs extract.enabled = true")
        return self

    @property
    def run_id(self) -> str:
        """Stable run identifier built from the grid coordinates."""
        e = self.experiment
        return f"{e.name}-{self.model.kind}-{self.triggers.type}-{self.triggers.labels}-{self.embed.strategy}-s{e.seed}"

    @property
    def run_dir(self) -> Path:
        """Per-run artifact directory."""
        return Path(self.experiment.out_dir) / self.run_id

    def pretrain_config(self) -> TrainConfig:
        """Training config of the clean pretrain stage."""
        p = self.pretrain
        return TrainConfig(
            epochs=p.epochs,
            batch_size=p.batch_size,
            schedule=CosineSchedule(lr_start=p.lr_start, lr_end=p.lr_end),
            weight_decay=p.weight_decay,
            seed=self.experiment.seed,
        )

    def embed_config(self) -> TrainConfig:
        """Training config of the embedding stage."""
        m = self.embed
        return TrainConfig(
            epochs=m.epochs,
            batch_size=m.batch_size,
            wm_batch_size=m.wm_batch_size,
            schedule=CosineSchedule(lr_start=m.lr_start, lr_end=m.lr_end),
            weight_decay=m.weight_decay,
            seed=self.experiment.seed,
        )

    def finetune_attack(self, tier: LrTier | str) -> FinetuneAttack:
        """Fine-tune attack at ``tier``."""
        a = self.attack
        return FinetuneAttack(lr=attack_lr_for(tier), epochs=a.epochs, weight_decay=a.weight_decay, batch_size=a.batch_size, seed=self.experiment.seed)

    def restore_config(self, tier: LrTier | str) -> RestoreConfig:
        """Retraining paired with an attack tier."""
        r = self.restore
        return RestoreConfig(lr=restore_lr_for(tier), epochs=r.epochs, weight_decay=r.weight_decay, batch_size=r.batch_size, seed=self.experiment.seed)

    def blend_config(self) -> BlendConfig:
        """Blended fine-tuning config."""
        b = self.blend
        return BlendConfig(
            train_batch=b.train_batch,
            finetune_batch=b.finetune_batch,
            mix_interval=b.mix_interval,
            epochs=b.epochs,
            lr=b.lr,
            weight_decay=b.weight_decay,
            seed=self.experiment.seed,
        )

    def blend_plain_attack(self) -> FinetuneAttack:
        """Plain fine-tune at the blend learning rate, the un-blended comparison run."""
        b = self.blend
        return FinetuneAttack(lr=b.lr, epochs=b.epochs, weight_decay=b.weight_decay, batch_size=b.finetune_batch, seed=self.experiment.seed)

    def surrogate_spec(self, input_shape: tuple[int, int, int], num_classes: int) -> ModelSpec:
        """Extraction surrogate architecture; defaults to the victim's."""
        kind = self.extract.surrogate_kind or self.model.kind
        section = self.model if kind == self.model.kind else ModelSection(kind=kind)
        return section.spec(input_shape, num_classes)

    def extract_attack(self, surrogate: ModelSpec | None = None) -> ExtractAttack:
        """Extraction attack config."""
        x = self.extract
        return ExtractAttack(
            surrogate=surrogate,
            schedule=CosineSchedule(lr_start=x.lr_start, lr_end=x.lr_end),
            epochs=x.epochs,
            weight_decay=x.weight_decay,
            batch_size=x.batch_size,
            query_budget=x.query_budget,
            seed=self.experiment.seed,
        )


def parse_value(raw: str) -> Any:
    """Parse a config/CLI literal: bool, null, int, float, JSON list/object, comma list or string."""
    text = raw.strip()
    if not text:
        return None

    lowered = text.lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    if lowered in {"null", "none"}:
        return None

    try:
        return int(text)
    except ValueError:
        pass

    try:
        return float(text)
    except ValueError:
        pass

    if (text.startswith("{") and text.endswith("}")) or (text.startswith("[") and text.endswith("]")):
        with contextlib.suppress(Exception):
            return json.loads(text)

    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]

    return text


def config_from_mapping(data: Mapping[str, Mapping[str, Any]]) -> ExperimentConfig:
    """Validate a section→key→value mapping.

    Raises:
        pydantic.ValidationError: On unknown keys or invalid values.
    """
    return ExperimentConfig.model_validate({k: dict(v) for k, v in data.items()})


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse INI text into an :class:`ExperimentConfig`.

    Raises:
        ValueError: On an unknown section.
        pydantic.ValidationError: On unknown keys or invalid values.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    data: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        data[section] = {key: parse_value(value) for key, value in parser.items(section)}
    return config_from_mapping(data)


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Load a config file, or the documented defaults when ``path`` is ``None``."""
    if path is None:
        return ExperimentConfig()
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def apply_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """Return a new config with ``section.key`` overrides applied and re-validated.

    Example:
        >>> apply_overrides(ExperimentConfig(), {"experiment.seed": 7}).experiment.seed
        7
    """
    data = config.model_dump(mode="json")
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ValueError(f"override key must be <section>.<key>, got {dotted!r}")
        data.setdefault(section, {})[key] = value
    return ExperimentConfig.model_validate(data)


def render_config(config: ExperimentConfig) -> str:
    """Render a config back to INI text (round-trips through :func:`parse_config_text`)."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in config.model_dump(mode="json").items():
        parser[section] = {}
        for key, value in values.items():
            if value is None:
                continue
            parser[section][key] = json.dumps(value) if isinstance(value, list) else str(value).lower() if isinstance(value, bool) else str(value)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
