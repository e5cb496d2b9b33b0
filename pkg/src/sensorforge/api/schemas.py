"""Pydantic request models for the HTTP API.

Responses are emitted as canonical JSON of the core domain types, so only
inbound bodies are modelled here.
"""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field


class RoleConfigIn(BaseModel):
    model_id: str
    temperature: float = Field(ge=0.0, le=1.0)


class ModelConfigIn(BaseModel):
    criterion_role: Optional[RoleConfigIn] = None
    verdict_role: Optional[RoleConfigIn] = None


class SmoothingIn(BaseModel):
    window_k: int = Field(ge=1)
    threshold_m: int = Field(ge=1)


class SensorCreate(BaseModel):
    goal: str = Field(min_length=1)
    interval: float = 3.0
    window_size: int = Field(default=3, ge=1)
    capture_rate: float = Field(default=1.0, gt=0)
    verdict_mode: str = "model"
    smoothing: Optional[SmoothingIn] = None
    models: Optional[ModelConfigIn] = None
    active: bool = False


class SensorPatch(BaseModel):
    goal: Optional[str] = Field(default=None, min_length=1)
    interval: Optional[float] = None
    window_size: Optional[int] = Field(default=None, ge=1)
    capture_rate: Optional[float] = Field(default=None, gt=0)
    verdict_mode: Optional[str] = None
    smoothing: Optional[SmoothingIn] = None
    clear_smoothing: bool = False
    models: Optional[ModelConfigIn] = None
    active: Optional[bool] = None


class AnnotationIn(BaseModel):
    rect: List[float] = Field(min_length=4, max_length=4)
    label: str


class ExampleIn(BaseModel):
    kind: str  # "text_note" | "image"
    text: Optional[str] = None
    frame_ref: Optional[str] = None
    image_b64: Optional[str] = None  # alternative to frame_ref: upload bytes
    annotations: List[AnnotationIn] = Field(default_factory=list)


class CriterionCreate(BaseModel):
    question: str = Field(min_length=1)
    title: Optional[str] = None  # auto-named when absent
    enabled: bool = True
    provenance: str = "manual"
    examples: List[ExampleIn] = Field(default_factory=list)


class CriterionPatch(BaseModel):
    question: Optional[str] = Field(default=None, min_length=1)
    title: Optional[str] = None
    enabled: Optional[bool] = None
    examples: Optional[List[ExampleIn]] = None


class DiffCategoryIn(BaseModel):
    label: str = Field(min_length=1)
    frame_refs: List[str] = Field(min_length=1, max_length=8)


class DiffRequest(BaseModel):
    categories: List[DiffCategoryIn] = Field(min_length=2, max_length=2)
