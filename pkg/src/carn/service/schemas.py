"""Request/response models for the experiment service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class GenerateRequest(BaseModel):
    out_dir: str
    n: int = 200
    image_h: int = 128
    image_w: int = 64
    pixel_spacing: Optional[float] = None  # default: full-scale field of view
    latent_dim: int = 4
    noise_sigma: float = 0.02
    ambiguity_prob: float = 0.1
    seed: int = 0
    train_fraction: float = 0.8


class GenerateResponse(BaseModel):
    manifest_path: str
    n: int
    image_hw: list[int]
    pixel_spacing: float
    n_train: int
    n_test: int


class TrainRequest(BaseModel):
    dataset: str
    out_dir: str
    variant: str = "carn"
    loss: str = "loss_t"
    seed: int = 0
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_l: float = 1.0
    lambda_p: float = 1e-4
    k: int = 5
    squared_weight_norm: bool = False
    stem_channels: int = 8
    cl_schedule: list[int] = Field(default_factory=lambda: [8, 8, 16, 16, 32, 32])
    head_channels: int = 64
    eval_batch_size: int = 64


class GroupMetrics(BaseModel):
    mae_mm: float
    std_mm: float


class MetricsPayload(BaseModel):
    train: dict[str, GroupMetrics]
    test: dict[str, GroupMetrics]


class TrainResponse(BaseModel):
    checkpoint: str
    training_log: str
    metrics_csv: str
    report_txt: str
    metrics: MetricsPayload


class EvaluateRequest(BaseModel):
    checkpoint: str
    dataset: str
    out_dir: Optional[str] = None  # when set, metrics.csv/report.txt are written


class EvaluateResponse(BaseModel):
    metrics: MetricsPayload
    metrics_csv: Optional[str] = None
    report_txt: Optional[str] = None


class AblationRequest(BaseModel):
    dataset: str
    out_dir: str
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-3
    lambda_l: float = 1.0
    lambda_p: float = 1e-4
    k: int = 5
    stem_channels: int = 8
    cl_schedule: list[int] = Field(default_factory=lambda: [8, 8, 16, 16, 32, 32])
    head_channels: int = 64
    eval_batch_size: int = 64


class AblationCell(BaseModel):
    config: str
    split: str
    group: str
    mae_mm: float
    std_mm: float


class AblationResponse(BaseModel):
    cells: list[AblationCell]
    findings: dict[str, bool]
    report_txt: str
    csv_path: str


class GradcheckRequest(BaseModel):
    scope: str = "all"
    seed: int = 20240817


class GradcheckGroup(BaseModel):
    name: str
    max_rel_err: float
    checked: int
    degenerate: int
    passed: bool


class GradcheckResponse(BaseModel):
    scope: str
    passed: bool
    worst: float
    seconds: float
    groups: list[GradcheckGroup]


class HealthResponse(BaseModel):
    status: str
    version: str
