"""Request/response models shared by the HTTP service and the CLI client."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict

from ..harness.config import TrainConfig


class TrainSettings(BaseModel):
    """Mirror of TrainConfig; every field optional so requests only carry
    what they override."""

    model_config = ConfigDict(extra="forbid")

    epochs: Optional[int] = None
    classes_per_batch: Optional[int] = None
    samples_per_class: Optional[int] = None
    lr: Optional[float] = None
    gamma: Optional[float] = None
    lam: Optional[float] = None
    eps: Optional[float] = None
    alpha: Optional[float] = None
    pgd_steps: Optional[int] = None
    eval_pgd_steps: Optional[int] = None
    defense: Optional[str] = None
    source: Optional[str] = None
    destination: Optional[str] = None
    seed: Optional[int] = None
    u: Optional[float] = None
    xi: Optional[float] = None
    hidden: Optional[list[int]] = None
    embed_dim: Optional[int] = None

    def to_config(self, base: Optional[TrainConfig] = None) -> TrainConfig:
        base = base if base is not None else TrainConfig()
        overrides = {k: v for k, v in self.model_dump().items() if v is not None}
        if "hidden" in overrides:
            overrides["hidden"] = tuple(overrides["hidden"])
        return base.with_overrides(**overrides)


class GenDataRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_path: str
    classes: int = 8
    dim: int = 16
    per_class_train: int = 64
    per_class_eval: int = 32
    sigma: float = 0.05
    seed: int = 0


class GenDataResponse(BaseModel):
    out_path: str
    classes: int
    dim: int
    train_rows: int
    eval_rows: int


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: str
    out_dir: str
    config_file: Optional[str] = None
    settings: TrainSettings = TrainSettings()


class TrainResponse(BaseModel):
    status: str
    label: str
    out_dir: str
    checkpoint: str
    summary: str
    epochs_run: int
    cost_per_iteration: int
    r_at_1: Optional[float] = None
    ers: Optional[float] = None


class EvaluateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    dataset: str


class EvaluateResponse(BaseModel):
    r_at_1: float
    r_at_2: float
    map: float


class AttackRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    dataset: str
    eps: float = 8.0 / 255.0
    alpha: float = 1.0 / 255.0
    pgd_steps: int = 32
    seed: int = 0
    out_path: Optional[str] = None


class AttackResponse(BaseModel):
    report: dict
    out_path: Optional[str] = None


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: str
    out_dir: str
    config_file: Optional[str] = None
    settings: TrainSettings = TrainSettings()
    etas: Optional[list[int]] = None
    defenses: Optional[list[str]] = None
    seeds: Optional[list[int]] = None
    workers: int = 1


class SweepResponse(BaseModel):
    runs: list[TrainResponse]


class ReportRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    runs: list[str]
    out_dir: str


class ReportResponse(BaseModel):
    table: str
    paths: list[str]
