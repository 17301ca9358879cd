"""Live sequential-design session service.

Serves trained policies to a human experimenter: each session walks the
propose-design / record-outcome loop of one experiment run, keeps a SNIS
particle approximation of the posterior over the latent parameters, and in
simulated mode draws outcomes from a hidden prior sample so the whole loop
can be demonstrated without a lab.

Session state is a pure function of (checkpoint, seed, mode, posted
outcomes); every event is appended to a journal file and replayed on startup,
so a crash never loses an in-progress experiment.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..agents import NetworkPolicy, make_policy_net
from ..autodiff import CheckpointError, load_checkpoint
from ..estimators import posterior_snis
from ..models import Model, get_model
from ..trainer import MODEL_DEFAULTS
from . import schemas as S

_RNG_TAG = 0x5E55


class ApiException(Exception):
    def __init__(self, status: int, code: str, message: str, detail: str = ""):
        self.status = status
        self.error = S.ApiError(code=code, message=message, detail=detail)


class Session:
    """One sequential experiment run; requests are serialized per session."""

    def __init__(self, session_id: str, model: Model, net, checkpoint_id: str,
                 mode: str, seed: int, n_particles: int, horizon: int):
        self.id = session_id
        self.model = model
        self.policy = NetworkPolicy(model, net)
        self.checkpoint_id = checkpoint_id
        self.mode = mode
        self.seed = seed
        self.n_particles = n_particles
        self.horizon = horizon
        self.lock = threading.Lock()
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, _RNG_TAG]))
        # Same draw layout as an evaluation rollout with L = n_particles, so a
        # simulated session reproduces the rollout for the same seed.
        block = model.sample_theta(self.rng, n_particles + 1)
        self.theta0 = block[0] if mode == "simulated" else None
        self.particles = block[1:]
        self.ell = np.zeros(n_particles)
        self.ell0 = 0.0
        self.summary = self.policy.initial_state(1, self.rng)
        self.designs: list = []
        self.outcomes: list[float] = []
        self.gain_trace: list[float] = []
        self.pending = self._propose()

    def _propose(self):
        d = self.policy.propose(self.summary, self.rng, explore=False)
        if self.model.design_kind == "index":
            return int(d[0])
        return np.asarray(d[0], dtype=np.float64)

    @property
    def step(self) -> int:
        return len(self.outcomes) + 1

    @property
    def done(self) -> bool:
        return len(self.outcomes) >= self.horizon

    def design_out(self, d) -> S.DesignOut:
        if self.model.design_kind == "index":
            return S.DesignOut(kind="index", values=[float(d)])
        return S.DesignOut(kind="continuous", values=[float(v) for v in np.atleast_1d(d)])

    def outcome_hint(self) -> str:
        m = self.model.model_id
        if m == "prey":
            n0 = self.pending if self.pending is not None else "N0"
            return f"integer count of consumed prey in [0, {n0}]"
        if m == "ces":
            return "rating in [eps, 1-eps] with eps = 2^-22"
        if m in ("source", "source1d"):
            return "observed log-intensity (finite real)"
        return "finite real outcome"

    def validate_outcome(self, y: float) -> None:
        m = self.model.model_id
        if not np.isfinite(y):
            raise ApiException(422, "invalid_outcome", "outcome must be finite",
                               self.outcome_hint())
        if m == "prey":
            n0 = int(self.pending)
            if y != int(y) or not 0 <= y <= n0:
                raise ApiException(
                    422, "invalid_outcome",
                    f"prey outcome must be an integer in [0, {n0}]",
                    f"got {y}")
        elif m == "ces":
            eps = self.model.eps
            if not eps <= y <= 1.0 - eps:
                raise ApiException(
                    422, "invalid_outcome",
                    f"ces outcome must lie in [{eps:.3e}, {1 - eps:.10f}]",
                    f"got {y}")

    def post_outcome(self, y: float | None):
        if self.done or self.pending is None:
            raise ApiException(409, "no_pending_design",
                               "session already finished" if self.done else
                               "no pending design")
        design = self.pending
        if y is None:
            if self.mode != "simulated":
                raise ApiException(422, "missing_outcome",
                                   "outcome y is required in live mode",
                                   self.outcome_hint())
            if self.model.design_kind == "index":
                y = float(self.model.sample_outcome(
                    self.rng, self.theta0[None, :], np.asarray([design]))[0])
            else:
                y = float(self.model.sample_outcome(
                    self.rng, self.theta0[None, :], np.asarray(design)[None, :])[0])
        else:
            y = float(y)
            self.validate_outcome(y)
        self.ell = self.ell + self.model.log_likelihood(self.particles, design, y)
        if self.theta0 is not None:
            self.ell0 += float(self.model.log_likelihood(self.theta0, design, y))
            full = np.concatenate([[self.ell0], self.ell])
            g = float(full[0] - _logsumexp(full) + np.log(self.n_particles + 1))
            self.gain_trace.append(g)
        self.summary = self.policy.advance(
            self.summary,
            np.asarray([design]) if self.model.design_kind == "index"
            else np.asarray(design)[None, :],
            np.asarray([y]),
        )
        self.designs.append(design)
        self.outcomes.append(y)
        self.pending = None if self.done else self._propose()
        return design, y

    def posterior(self, n: int | None):
        _, w, ess = posterior_snis(self.particles, self.ell)
        if ess < 5:
            raise ApiException(
                503, "degenerate_posterior",
                f"effective sample size {ess:.2f} < 5",
                "recreate the session with a larger n_particles")
        if n is None or n >= self.n_particles:
            idx = np.arange(self.n_particles)
        else:
            idx = np.arange(n)
        ws = w[idx]
        ws = ws / ws.sum()
        return [(self.particles[i].tolist(), float(ws[k])) for k, i in enumerate(idx)], ess


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


class Catalog:
    def __init__(self, directory: Path):
        self.directory = directory

    def list(self) -> list[S.CheckpointInfo]:
        out = []
        for path in sorted(self.directory.glob("*.ckpt")):
            try:
                _, meta = load_checkpoint(path)
                out.append(S.CheckpointInfo(
                    id=path.stem, status="ok", model=meta.get("model"),
                    policy_kind=meta.get("policy_kind"), meta=meta))
            except (CheckpointError, OSError):
                out.append(S.CheckpointInfo(id=path.stem, status="invalid"))
        return out

    def load(self, checkpoint_id: str):
        path = self.directory / f"{checkpoint_id}.ckpt"
        if not path.exists():
            raise ApiException(404, "unknown_checkpoint",
                               f"no checkpoint {checkpoint_id!r}",
                               str(self.directory))
        try:
            return load_checkpoint(path)
        except CheckpointError as e:
            raise ApiException(404, "unknown_checkpoint",
                               f"checkpoint {checkpoint_id!r} is invalid", str(e))


def create_app(checkpoint_dir: Path, journal_path: Path | None = None) -> FastAPI:
    app = FastAPI(title="boed session service")
    catalog = Catalog(Path(checkpoint_dir))
    sessions: dict[str, Session] = {}
    journal = journal_path or Path(checkpoint_dir) / "sessions.journal"
    journal_lock = threading.Lock()

    def record(event: dict) -> None:
        with journal_lock:
            with open(journal, "a") as f:
                f.write(json.dumps(event) + "\n")

    def build_session(session_id: str, req: S.CreateSessionRequest) -> Session:
        params, meta = catalog.load(req.checkpoint)
        if meta.get("model") != req.model:
            raise ApiException(
                422, "model_mismatch",
                f"checkpoint {req.checkpoint!r} was trained for model "
                f"{meta.get('model')!r}, not {req.model!r}")
        model = get_model(req.model)
        net = make_policy_net(model, np.random.default_rng(0))
        for k, t in net.params.items():
            t.data[...] = params[k]
        horizon = int(meta.get("horizon") or MODEL_DEFAULTS[req.model]["horizon"])
        return Session(session_id, model, net, req.checkpoint, req.mode,
                       req.seed, req.n_particles, horizon)

    def replay_journal() -> None:
        if not journal.exists():
            return
        with open(journal) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    ev = json.loads(line)
                    if ev["event"] == "create":
                        req = S.CreateSessionRequest(**ev["request"])
                        sessions[ev["session_id"]] = build_session(ev["session_id"], req)
                    elif ev["event"] == "outcome":
                        # a server-drawn outcome is replayed as a draw so the
                        # rng stream ends up in the same state it had before
                        # the restart; determinism makes the value identical
                        sessions[ev["session_id"]].post_outcome(
                            None if ev.get("drawn") else ev["y"])
                except (KeyError, ApiException, json.JSONDecodeError):
                    continue  # sessions with missing checkpoints are dropped

    replay_journal()

    @app.exception_handler(ApiException)
    async def api_exception_handler(request: Request, exc: ApiException):
        return JSONResponse(status_code=exc.status, content=exc.error.model_dump())

    def get_session(session_id: str) -> Session:
        s = sessions.get(session_id)
        if s is None:
            raise ApiException(404, "unknown_session", f"no session {session_id!r}")
        return s

    @app.post("/api/sessions", response_model=S.CreateSessionResponse)
    def create_session(req: S.CreateSessionRequest) -> S.CreateSessionResponse:
        session_id = uuid.uuid4().hex[:12]
        s = build_session(session_id, req)
        sessions[session_id] = s
        record({"event": "create", "session_id": session_id,
                "request": req.model_dump()})
        return S.CreateSessionResponse(
            session_id=session_id, step=1, design=s.design_out(s.pending))

    @app.post("/api/sessions/{session_id}/outcomes", response_model=S.StepResponse)
    def post_outcome(session_id: str, req: S.OutcomeRequest) -> S.StepResponse:
        s = get_session(session_id)
        with s.lock:
            design, y = s.post_outcome(req.y)
            record({"event": "outcome", "session_id": session_id, "y": y,
                    "drawn": req.y is None})
            return S.StepResponse(
                session_id=s.id,
                step=s.step if not s.done else s.horizon,
                done=s.done,
                design=None if s.done else s.design_out(s.pending),
                outcome=y,
                gain_trace=s.gain_trace if s.mode == "simulated" else None,
            )

    @app.get("/api/sessions/{session_id}", response_model=S.SessionView)
    def get_session_view(session_id: str) -> S.SessionView:
        s = get_session(session_id)
        history = [
            S.HistoryRow(step=i + 1, design=s.design_out(d), outcome=y)
            for i, (d, y) in enumerate(zip(s.designs, s.outcomes))
        ]
        return S.SessionView(
            session_id=s.id, model=s.model.model_id, checkpoint=s.checkpoint_id,
            mode=s.mode, step=min(s.step, s.horizon), horizon=s.horizon,
            done=s.done,
            pending_design=None if s.pending is None else s.design_out(s.pending),
            history=history, n_particles=s.n_particles,
            outcome_hint=s.outcome_hint(),
            gain_trace=s.gain_trace if s.mode == "simulated" else None,
        )

    @app.get("/api/sessions/{session_id}/posterior", response_model=S.PosteriorResponse)
    def get_posterior(session_id: str, n: int | None = None) -> S.PosteriorResponse:
        s = get_session(session_id)
        with s.lock:
            points, ess = s.posterior(n)
        return S.PosteriorResponse(
            session_id=s.id, n=len(points), ess=ess,
            points=[S.PosteriorPoint(theta=t, weight=w) for t, w in points],
        )

    @app.get("/api/checkpoints", response_model=S.CheckpointCatalog)
    def list_checkpoints() -> S.CheckpointCatalog:
        return S.CheckpointCatalog(checkpoints=catalog.list())

    @app.get("/api/health", response_model=S.HealthResponse)
    def health() -> S.HealthResponse:
        return S.HealthResponse(status="ok", sessions=len(sessions))

    return app
