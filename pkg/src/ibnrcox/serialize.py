"""JSON round trip of fitted models and prediction results.

Output uses sorted keys and fixed indentation so that equal inputs give
byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .delay_continuous import DayFeatures, LogLogisticDelayModel
from .em.common import FitOptions, FitResult
from .em.continuous import ContinuousParams
from .em.dirichlet import DirichletParams
from .em.multinomial import MultinomialParams

SCHEMA_VERSION = 1


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def delay_model_to_dict(model: LogLogisticDelayModel) -> dict:
    return {
        "coef": model.coef,
        "log_shape": model.log_shape,
        "n_policy_features": model.n_policy_features,
        "day_features": {
            "kinds": list(model.day_features.kinds),
            "month_levels": model.day_features.month_levels,
            "weekday_levels": model.day_features.weekday_levels,
        },
        "converged": model.converged,
        "loglik": model.loglik,
        "truncated": model.truncated,
        "message": model.message,
    }


def delay_model_from_dict(d: dict) -> LogLogisticDelayModel:
    df = d["day_features"]
    return LogLogisticDelayModel(
        coef=np.asarray(d["coef"], dtype=float),
        log_shape=float(d["log_shape"]),
        n_policy_features=int(d["n_policy_features"]),
        day_features=DayFeatures(tuple(df["kinds"]), list(df["month_levels"]), list(df["weekday_levels"])),
        converged=bool(d["converged"]),
        loglik=float("nan") if d["loglik"] is None else float(d["loglik"]),
        truncated=bool(d["truncated"]),
        message=d["message"],
    )


def fit_to_dict(fit: FitResult, freq_names=None, delay_names=None) -> dict:
    """Model kind, HMM parameters, coefficient blocks with names, options and trace."""
    p = fit.params
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": fit.kind,
        "g": int(p.pi.size),
        "pi": p.pi,
        "gamma": p.gamma,
        "theta": p.theta,
        "freq_feature_names": list(freq_names) if freq_names is not None else None,
        "delay_feature_names": list(delay_names) if delay_names is not None else None,
        "loglik_trace": list(fit.loglik_trace),
        "loglik": fit.loglik,
        "n_iter": fit.n_iter,
        "converged": fit.converged,
        "n_params": fit.n_params,
        "n_obs": fit.n_obs,
        "aic": fit.aic,
        "bic": fit.bic,
        "options": dataclasses.asdict(fit.options),
        "messages": list(fit.messages),
    }
    if isinstance(p, MultinomialParams):
        out.update(delta=p.delta, delta_shape=list(p.delta.shape), link=p.link, link_d1=p.link_d1)
    elif isinstance(p, DirichletParams):
        out.update(dirichlet_coef=p.coef)
    elif isinstance(p, ContinuousParams):
        out.update(delay=delay_model_to_dict(p.delay) if p.delay is not None else None)
    return out


def fit_from_dict(d: dict) -> FitResult:
    kind = d["kind"]
    pi = np.asarray(d["pi"], dtype=float)
    gamma = np.asarray(d["gamma"], dtype=float)
    theta = np.asarray(d["theta"], dtype=float)
    if kind == "mm":
        delta = np.asarray(d["delta"], dtype=float).reshape(d["delta_shape"])
        params = MultinomialParams(pi, gamma, theta, delta, d["link"], d["link_d1"])
    elif kind == "dm":
        params = DirichletParams(pi, gamma, theta, np.asarray(d["dirichlet_coef"], dtype=float))
    elif kind == "cm":
        delay = delay_model_from_dict(d["delay"]) if d.get("delay") else None
        params = ContinuousParams(pi, gamma, theta, delay)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return FitResult(
        kind=kind,
        params=params,
        loglik_trace=[float(v) for v in d["loglik_trace"]],
        n_iter=int(d["n_iter"]),
        converged=bool(d["converged"]),
        n_params=int(d["n_params"]),
        n_obs=int(d["n_obs"]),
        u_hat=None,
        v_hat=None,
        options=FitOptions(**d["options"]),
        messages=list(d["messages"]),
    )
