"""Checkpoint files: JSON, schema-versioned, human-diffable. Matrices are
stored row-major as nested lists at full double precision; loading re-derives
the explicit matrices from the stored free parameters and refuses checkpoints
where the two disagree."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import Activation, Certificate, Dims, ExplicitParams, SupplyRate, ValidationError
from .gradients import ModelSpec, explicit_and_cert
from .parametrization import _EXPLICIT_FIELDS
from .sysid import OptimConfig, _atomic_write
from .integrators import SolverConfig

SCHEMA_VERSION = 1


@dataclass
class Checkpoint:
    spec: ModelSpec
    free: dict
    params: ExplicitParams
    cert: Certificate | None
    solver: SolverConfig
    optim: OptimConfig
    metadata: dict


def _mat(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def save_checkpoint(path: str, spec: ModelSpec, free: dict,
                    solver: SolverConfig, optim: OptimConfig,
                    metadata: dict | None = None) -> None:
    params, cert = explicit_and_cert(spec, free)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "mode": spec.mode,
        "dims": {"n": spec.dims.n, "q": spec.dims.q, "m": spec.dims.m, "p": spec.dims.p},
        "activation": spec.activation.value,
        "epsilon": spec.epsilon,
        "epsilon_P": spec.epsilon_P,
        "min_rate": spec.min_rate,
        "supply_rate": None if spec.sr is None else {
            "property": spec.sr.property_name,
            "param": spec.sr.property_param,
            "Q": _mat(spec.sr.Q), "S": _mat(spec.sr.S), "R": _mat(spec.sr.R),
            "delta": spec.sr.delta,
        },
        "free_params": {k: _mat(v) for k, v in sorted(free.items())},
        "explicit": {k: _mat(getattr(params, k)) for k in _EXPLICIT_FIELDS},
        "certificate": None if cert is None else {"P": _mat(cert.P),
                                                  "Lambda": _mat(cert.Lambda)},
        "solver": {"method": solver.method, "steps": solver.steps,
                   "rtol": solver.rtol, "atol": solver.atol,
                   "max_steps": solver.max_steps, "t_span": list(solver.t_span)},
        "optimizer": {"epochs": optim.epochs, "lr": optim.lr, "beta1": optim.beta1,
                      "beta2": optim.beta2, "eps_adam": optim.eps_adam},
        "metadata": metadata or {},
    }
    _atomic_write(path, json.dumps(doc, indent=1))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    dims = Dims(**doc["dims"])
    sr = None
    if doc["supply_rate"] is not None:
        d = doc["supply_rate"]
        sr = SupplyRate(Q=np.array(d["Q"]), S=np.array(d["S"]), R=np.array(d["R"]),
                        delta=d["delta"], property_name=d["property"],
                        property_param=d["param"])
    spec = ModelSpec(mode=doc["mode"], dims=dims,
                     activation=Activation(doc["activation"]),
                     epsilon=doc["epsilon"], epsilon_P=doc["epsilon_P"],
                     min_rate=doc["min_rate"], sr=sr)
    free = {k: np.array(v, dtype=float) for k, v in doc["free_params"].items()}
    params, cert = explicit_and_cert(spec, free)
    for k in _EXPLICIT_FIELDS:
        stored = np.array(doc["explicit"][k], dtype=float)
        derived = np.asarray(getattr(params, k), dtype=float)
        scale = max(1.0, float(np.abs(stored).max(initial=0.0)))
        if np.abs(stored - derived).max(initial=0.0) > 1e-12 * scale:
            raise ValidationError(
                f"checkpoint field {k}: stored explicit matrices do not match "
                "the ones re-derived from the stored free parameters")
    s = doc["solver"]
    solver = SolverConfig(method=s["method"], steps=s["steps"], rtol=s["rtol"],
                          atol=s["atol"], max_steps=s["max_steps"],
                          t_span=tuple(s["t_span"]))
    o = doc["optimizer"]
    optim = OptimConfig(epochs=o["epochs"], lr=o["lr"], beta1=o["beta1"],
                        beta2=o["beta2"], eps_adam=o["eps_adam"])
    return Checkpoint(spec=spec, free=free, params=params, cert=cert,
                      solver=solver, optim=optim, metadata=doc["metadata"])
