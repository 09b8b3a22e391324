"""Verification results and the per-run summary consumed by reports."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator


class VerifyResult(BaseModel):
    """Outcome of a black-box ownership check on a trigger set."""

    trigger_acc: float = Field(ge=0, le=1)
    hits: int = Field(ge=0)
    n: int = Field(ge=1)
    chance: float = Field(gt=0, le=1)
    p_value: float = Field(ge=0, le=1)
    alpha: float = Field(gt=0, lt=1)
    watermarked: bool
    restoration_gain: float | None = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_decision(self) -> VerifyResult:
        if self.watermarked != (self.p_value < self.alpha):
            raise ValueError("decision must equal p_value < alpha")
        return self


class AttackSummary(BaseModel):
    """Fine-tune attack at one lr tier followed by clean retraining."""

    tier: str
    attack_lr: float
    restore_lr: float
    post_attack_trigger_acc: float
    post_attack_test_acc: float
    restore_max_trigger_acc: float | None = None
    restoration_gain: float | None = None
    verify_after_attack: VerifyResult | None = None
    verify_after_restore: VerifyResult | None = None


class ControlSummary(BaseModel):
    """Never-watermarked model pushed through the same attack and restore schedule."""

    tier: str
    trigger_acc: float
    restoration_gain: float | None
    verify: VerifyResult | None = None


class BlendSummary(BaseModel):
    """Blended fine-tuning against plain fine-tuning at the same learning rate."""

    lr: float
    mix_interval: int
    blended_final_trigger_acc: float
    plain_final_trigger_acc: float
    blended_final_test_acc: float
    plain_final_test_acc: float


class ExtractSummary(BaseModel):
    """Extraction attack plus the follow-up retrain of the surrogate."""

    agreement: float
    trigger_acc: float
    test_acc: float
    retrain_max_trigger_acc: float | None = None
    restoration_gain: float | None = None


class LandscapeSummary(BaseModel):
    """Grid endpoints and PCA quality for the landscape stage."""

    scenario: str
    mode: str
    explained_variance: list[float]
    attack_endpoint_loss: float | None = None
    retrain_endpoint_loss: float | None = None
    center_loss: float


class RunSummary(BaseModel):
    """Every headline number of one run, derived from trace rows and verify results."""

    run_id: str
    seed: int
    model_kind: str
    trigger: str
    labels: str
    strategy: str
    clean_test_acc: float | None = None
    clean_trigger_acc: float | None = None
    embed_test_acc: float
    embed_trigger_acc: float
    verify_embedded: VerifyResult | None = None
    attacks: dict[str, AttackSummary] = Field(default_factory=dict)
    control: ControlSummary | None = None
    blend: BlendSummary | None = None
    extract: ExtractSummary | None = None
    landscape: LandscapeSummary | None = None
