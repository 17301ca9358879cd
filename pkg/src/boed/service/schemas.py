"""Request/response bodies for the live session API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ApiError(BaseModel):
    code: str
    message: str
    detail: str = ""


class CreateSessionRequest(BaseModel):
    model: str
    checkpoint: str
    mode: str = Field(pattern="^(live|simulated)$")
    seed: int = 0
    n_particles: int = Field(default=1000, ge=1)


class DesignOut(BaseModel):
    kind: str  # "continuous" | "index"
    values: list[float]


class CreateSessionResponse(BaseModel):
    session_id: str
    step: int
    design: DesignOut


class OutcomeRequest(BaseModel):
    # Omitted y in simulated mode asks the server to draw the outcome itself.
    y: float | None = None


class HistoryRow(BaseModel):
    step: int
    design: DesignOut
    outcome: float


class StepResponse(BaseModel):
    session_id: str
    step: int
    done: bool
    design: DesignOut | None = None
    outcome: float
    gain_trace: list[float] | None = None


class SessionView(BaseModel):
    session_id: str
    model: str
    checkpoint: str
    mode: str
    step: int
    horizon: int
    done: bool
    pending_design: DesignOut | None
    history: list[HistoryRow]
    n_particles: int
    outcome_hint: str
    gain_trace: list[float] | None = None


class PosteriorPoint(BaseModel):
    theta: list[float]
    weight: float


class PosteriorResponse(BaseModel):
    session_id: str
    n: int
    ess: float
    points: list[PosteriorPoint]


class CheckpointInfo(BaseModel):
    id: str
    status: str  # "ok" | "invalid"
    model: str | None = None
    policy_kind: str | None = None
    meta: dict | None = None


class CheckpointCatalog(BaseModel):
    checkpoints: list[CheckpointInfo]


class HealthResponse(BaseModel):
    status: str
    sessions: int
