"""FastAPI application wrapping the operations layer.

Error mapping: schema problems are FastAPI's own 422; configuration
semantics (bad topology, unknown bus) also map to 422 with a message;
numerical failures (no equilibrium, divergence, singular resolvent) map
to 500 so clients can tell a bad request from a failed computation.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, ops
from ..config import ConfigError, NetworkConfig, resolve_config
from ..netsim import DivergenceError, EventGridError, SteadyStateError
from ..smallsignal import ConvergenceError, FrequencyResponseError
from . import schemas
from .schemas import none_if_nonfinite

_NUMERICAL_ERRORS = (
    ConvergenceError,
    FrequencyResponseError,
    SteadyStateError,
    DivergenceError,
    np.linalg.LinAlgError,
)


def _resolve(model) -> NetworkConfig:
    try:
        return resolve_config(model)
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


def create_app() -> FastAPI:
    app = FastAPI(title="hacpass", version=__version__)

    @app.exception_handler(ConvergenceError)
    @app.exception_handler(FrequencyResponseError)
    @app.exception_handler(SteadyStateError)
    @app.exception_handler(DivergenceError)
    @app.exception_handler(np.linalg.LinAlgError)
    async def _numerical(request, exc):  # noqa: ARG001 - FastAPI signature
        from fastapi.responses import JSONResponse

        return JSONResponse(
            status_code=500,
            content={"detail": f"numerical failure: {exc}"},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/certify", response_model=schemas.CertifyResponse)
    def certify(req: schemas.CertifyRequest):
        cfg = _resolve(req.config)
        try:
            outcome = ops.certify_network(
                cfg, synthesize=req.synthesize, eta=req.eta, gamma=req.gamma
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.CertifyResponse(
            all_feasible=outcome.all_feasible,
            entries=[
                schemas.CertifyEntryOut(
                    bus=e.bus,
                    feasible=e.feasible,
                    synthesized=e.synthesized,
                    margins=e.margins,
                    q_min_eig=e.q_min_eig,
                    eps1=e.eps1,
                    eps2=e.eps2,
                    lam=e.lam,
                    infeasibility=e.infeasibility,
                )
                for e in outcome.entries
            ],
        )

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        cfg = _resolve(req.config)
        if req.n_points == 1:
            grid = np.array([req.omega_min])
        else:
            grid = np.logspace(
                np.log10(req.omega_min), np.log10(req.omega_max), req.n_points
            )
        try:
            outcome = ops.sweep_inverter(
                cfg, req.bus, grid,
                i_load_dq=(req.i_load_d, req.i_load_q),
                i_dc_ref=req.i_dc_ref,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.SweepResponse(
            bus=outcome.bus,
            omega=[float(w) for w in outcome.omega],
            freq_hz=[float(w) / (2.0 * np.pi) for w in outcome.omega],
            ifp=[none_if_nonfinite(v) for v in outcome.ifp],
            ofp=[none_if_nonfinite(v) for v in outcome.ofp],
            gaps=[float(w) for w in outcome.gaps],
            all_positive=outcome.all_positive,
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        cfg = _resolve(req.config)
        t_end = cfg.sim.t_end if req.t_end is None else req.t_end
        dt = cfg.sim.dt if req.dt is None else req.dt
        if t_end / dt > 2_000_000:
            raise HTTPException(
                status_code=422,
                detail=f"t_end/dt = {t_end / dt:.3g} exceeds the 2e6 step budget",
            )
        try:
            outcome = ops.simulate_network(cfg, out_dir=None, t_end=t_end, dt=dt)
        except EventGridError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.SimulateResponse(
            settled=outcome.settled,
            peak_metric=outcome.peak_metric,
            final_metric=outcome.final_metric,
            pre_event_load_powers={
                str(b): pq for b, pq in outcome.pre_event_load_powers.items()
            },
            applied_events=[schemas.EventOut(**ev) for ev in outcome.applied_events],
            skipped_events=[schemas.EventOut(**ev) for ev in outcome.skipped_events],
            n_samples=outcome.n_samples,
            t_end=outcome.t_end,
            dt=outcome.dt,
        )

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def verify(req: schemas.VerifyRequest):
        cfg = _resolve(req.config)
        seeds = list(range(req.seed_start, req.seed_start + req.seeds))
        try:
            outcome, _pairs = ops.verify_inverter(
                cfg, req.bus, seeds, lam=req.lam, t_end=req.t_end, dt=req.dt
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return schemas.VerifyResponse(
            bus=outcome.bus,
            lam=outcome.lam,
            all_satisfied=outcome.all_satisfied,
            entries=[
                schemas.VerifyEntryOut(
                    seed=e.seed,
                    slack=e.slack,
                    tol=e.tol,
                    satisfied=e.satisfied,
                    storage_start=e.storage_start,
                    storage_end=e.storage_end,
                    supplied_integral=e.supplied_integral,
                    pointwise_fraction_ok=e.pointwise_fraction_ok,
                    largest_rho=none_if_nonfinite(e.largest_rho),
                    reference_in_envelope=e.reference_in_envelope,
                )
                for e in outcome.entries
            ],
        )

    return app
