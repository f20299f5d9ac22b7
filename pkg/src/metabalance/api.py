"""HTTP service for profile-conditional estimation.

One immutable dataset per process, loaded at startup. Each request
solves fresh against that shared state, so identical requests return
identical bodies and concurrent requests never interfere.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutTimeout
from pathlib import Path
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .basis import evaluate_basis, identity_spec
from .diagnostics import bundle_summary
from .errors import DimensionMismatch, Infeasible, MetabalanceError
from .model import TargetProfile, read_ad_csv, read_id_csv, \
    target_profile_from_means
from .workflow import fit_ad_workflow, fit_id_workflow

SOLVE_TIMEOUT_S = 10.0

_pool = ThreadPoolExecutor(max_workers=8)


@dataclass
class SessionState:
    kind: str                      # "id" | "ad"
    id_data: Optional[object] = None
    ad_data: Optional[object] = None
    spec: Optional[object] = None
    summary: dict = field(default_factory=dict)


def _id_summary(data) -> dict:
    cov = {}
    for j, name in enumerate(data.covariate_names):
        col = data.x[:, j]
        cov[name] = {"min": float(col.min()), "max": float(col.max()),
                     "mean": float(col.mean()),
                     "sd": float(col.std(ddof=1))}
    return {
        "kind": "id", "n": data.n, "m": data.m,
        "covariates": cov,
        "study_sizes": {str(data.original_labels[i - 1]):
                        int((data.study == i).sum())
                        for i in range(1, data.m + 1)},
        "arm_counts": [
            {"study": str(data.original_labels[i - 1]),
             "control": int(((data.study == i) & (data.z == 0)).sum()),
             "treated": int(((data.study == i) & (data.z == 1)).sum())}
            for i in range(1, data.m + 1)],
    }


def _ad_summary(data) -> dict:
    bm = data.basis_matrix()
    cols = {}
    for j in range(bm.shape[1]):
        col = bm[:, j]
        cols[f"b{j + 1}"] = {"min": float(col.min()),
                             "max": float(col.max()),
                             "mean": float(col.mean()),
                             "sd": float(col.std(ddof=1))
                             if len(col) > 1 else 0.0}
    return {
        "kind": "ad", "m": data.m,
        "covariates": cols,
        "study_sizes": {str(r.study_id): r.n_i for r in data.rows},
        "study_basis_means": {str(r.study_id): [float(v)
                                                for v in r.basis_means]
                              for r in data.rows},
    }


def build_state(data_path, kind: str = "id", basis_arg=None,
                scale: str = "sigma2") -> SessionState:
    if kind == "ad":
        data = read_ad_csv(data_path, scale=scale)
        return SessionState(kind="ad", ad_data=data,
                            summary=_ad_summary(data))
    data = read_id_csv(data_path)
    if basis_arg is not None:
        from .cli import _load_basis
        spec = _load_basis(basis_arg, data.p)
    else:
        spec = identity_spec(data.p, standardize=True)
    evaluate_basis(data, spec)   # fail fast on a bad basis
    return SessionState(kind="id", id_data=data, spec=spec,
                        summary=_id_summary(data))


class EstimateRequest(BaseModel):
    profile: dict
    bounded: bool = True
    method: Optional[str] = None
    level: float = Field(default=0.95, gt=0.0, lt=1.0)


def _parse_profile(obj: dict) -> TargetProfile:
    if "means" in obj:
        return target_profile_from_means(
            obj["means"], tolerances=obj.get("tolerances"),
            n_star=obj.get("n_star"), alpha=obj.get("alpha"))
    return TargetProfile.from_json(json.dumps(obj))


def _error_body(name: str, err: Exception) -> dict:
    return {"error": name, "message": str(err)}


def create_app(state: Optional[SessionState] = None) -> FastAPI:
    app = FastAPI(title="metabalance", version="0.1.0")
    from fastapi.middleware.cors import CORSMiddleware
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.session = state

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/dataset/summary")
    def dataset_summary():
        sess = app.state.session
        if sess is None:
            return JSONResponse(status_code=409, content=_error_body(
                "NotLoaded", ValueError("no dataset loaded")))
        return sess.summary

    @app.get("/dataset/units")
    def dataset_units():
        """Per-unit covariate rows, for client-side plotting. The
        client joins these with per-request weights by unit index."""
        sess = app.state.session
        if sess is None:
            return JSONResponse(status_code=409, content=_error_body(
                "NotLoaded", ValueError("no dataset loaded")))
        if sess.kind == "ad":
            return {"kind": "ad",
                    "covariates": [f"b{j + 1}" for j in range(
                        sess.ad_data.rows[0].basis_means.shape[0])],
                    "x": sess.ad_data.basis_matrix().tolist(),
                    "study": [str(r.study_id)
                              for r in sess.ad_data.rows]}
        data = sess.id_data
        return {"kind": "id",
                "covariates": list(data.covariate_names),
                "x": data.x.tolist(),
                "study": data.study.tolist(),
                "z": data.z.tolist()}

    @app.post("/estimate")
    def estimate(req: EstimateRequest, request: Request):
        sess = app.state.session
        if sess is None:
            return JSONResponse(status_code=409, content=_error_body(
                "NotLoaded", ValueError("no dataset loaded")))
        try:
            profile = _parse_profile(req.profile)
        except (MetabalanceError, ValueError, KeyError) as err:
            return JSONResponse(status_code=400,
                                content=_error_body("BadProfile", err))

        expected = (sess.spec and len(sess.spec.terms)) if \
            sess.kind == "id" else \
            sess.ad_data.rows[0].basis_means.shape[0] + 1
        if profile.k != expected:
            return JSONResponse(status_code=400, content=_error_body(
                "DimensionMismatch", DimensionMismatch(
                    f"profile has {profile.k} entries, basis expects "
                    f"{expected}")))

        def solve():
            if sess.kind == "id":
                report, sol1, sol0, bundle = fit_id_workflow(
                    sess.id_data, sess.spec, profile,
                    bounded=req.bounded, level=req.level)
                diag = bundle_summary(bundle)
                diag["weights"] = bundle.weight_records
                diag["asmd"] = bundle.asmd
                return report, diag
            report, sol = fit_ad_workflow(sess.ad_data, profile,
                                          bounded=req.bounded,
                                          level=req.level)
            diag = {
                "weights": [
                    {"study": str(r.study_id), "weight": float(w),
                     "retained": bool(w > 0)}
                    for r, w in zip(sess.ad_data.rows, sol.weights)],
                "retained": int(len(sol.retained)),
                "lambda_dual": sol.lambda_dual.tolist(),
            }
            return report, diag

        future = _pool.submit(solve)
        try:
            report, diag = future.result(timeout=SOLVE_TIMEOUT_S)
        except FutTimeout:
            return JSONResponse(status_code=503, content={
                "error": "Timeout",
                "message": f"solve exceeded {SOLVE_TIMEOUT_S:.0f}s",
                "partial": {"dataset": sess.summary}})
        except Infeasible as err:
            cert = err.certificate
            if cert is not None and not isinstance(cert, dict):
                cert = {"values": [float(v) for v in np.ravel(cert)]}
            return JSONResponse(status_code=422, content={
                "error": "InfeasibleProfile",
                "message": str(err),
                "certificate": cert})
        except MetabalanceError as err:
            return JSONResponse(status_code=400,
                                content=_error_body(type(err).__name__,
                                                    err))
        return {"estimate": json.loads(report.to_json()),
                "diagnostics": diag}

    dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if dist.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(dist), html=True),
                  name="explorer")

    return app
