"""Model files: JSON documents that rebuild bit-identically.

A classical model stores the spot grid, the high-frequency transition matrix
(row-major) with its time step, the substep count k, the grouping mode, the
initial distribution, and the scheme edges; the emission matrix is stored
redundantly for audit and cross-checked against the rebuild on load. A quantum
model stores the ansatz shape and angle vectors, with the Kraus operators
(row-major [re, im] pairs) as the audit copy.

JSON floats use Python's shortest round-trip representation, so reload ->
re-evaluate reproduces stored likelihoods exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .chmm import ClassicalHmm, build_classical_hmm
from .errors import ValidationError
from .qhmm import AnsatzSpec, QhmmModel, build_qhmm
from .volgrid import ObservationScheme, SpotGrid, TransitionMatrix

_AUDIT_TOL = 1e-12


def classical_to_dict(model: ClassicalHmm) -> dict:
    return {
        "model_type": "classical",
        "grid": model.grid.values.tolist(),
        "a_hf": model.a_hf.probs.tolist(),
        "dt_hf": model.a_hf.dt,
        "k": model.table.k,
        "mode": model.table.mode,
        "x0": model.x0.tolist(),
        "scheme_edges": model.scheme.edges.tolist(),
        "emission": model.emission.probs.tolist(),
    }


def classical_from_dict(doc: dict) -> ClassicalHmm:
    grid = SpotGrid(values=np.array(doc["grid"], dtype=float))
    a_hf = TransitionMatrix(probs=np.array(doc["a_hf"], dtype=float), dt=float(doc["dt_hf"]))
    scheme = ObservationScheme(edges=np.array(doc["scheme_edges"], dtype=float))
    model = build_classical_hmm(
        grid, a_hf, int(doc["k"]), scheme, mode=doc["mode"],
        x0=np.array(doc["x0"], dtype=float),
    )
    stored = np.array(doc["emission"], dtype=float)
    if stored.shape != model.emission.probs.shape or np.max(
        np.abs(stored - model.emission.probs)
    ) > _AUDIT_TOL:
        raise ValidationError("stored emission matrix does not match the rebuilt model")
    return model


def qhmm_to_dict(model: QhmmModel) -> dict:
    kraus = [
        [[[z.real, z.imag] for z in row] for row in op]
        for op in model.kraus
    ]
    return {
        "model_type": "qhmm",
        "spec": {
            "latent_qubits": model.spec.latent_qubits,
            "observed_qubits": model.spec.observed_qubits,
            "reps": model.spec.reps,
            "entanglement": model.spec.entanglement,
        },
        "theta": model.theta.tolist(),
        "theta_init": model.theta_init.tolist(),
        "kraus": kraus,
    }


def qhmm_from_dict(doc: dict) -> QhmmModel:
    spec_doc = doc["spec"]
    spec = AnsatzSpec(
        latent_qubits=int(spec_doc["latent_qubits"]),
        observed_qubits=int(spec_doc["observed_qubits"]),
        reps=int(spec_doc["reps"]),
        entanglement=spec_doc["entanglement"],
    )
    model = build_qhmm(spec, np.array(doc["theta"], dtype=float),
                       np.array(doc["theta_init"], dtype=float))
    stored = np.array(
        [[[complex(re, im) for re, im in row] for row in op] for op in doc["kraus"]]
    )
    if stored.shape != model.kraus.shape or np.max(np.abs(stored - model.kraus)) > _AUDIT_TOL:
        raise ValidationError("stored Kraus operators do not match the rebuilt model")
    return model


def model_to_dict(model) -> dict:
    if isinstance(model, ClassicalHmm):
        return classical_to_dict(model)
    if isinstance(model, QhmmModel):
        return qhmm_to_dict(model)
    raise ValidationError(f"unsupported model type {type(model).__name__}")


def model_from_dict(doc: dict):
    kind = doc.get("model_type")
    if kind == "classical":
        return classical_from_dict(doc)
    if kind == "qhmm":
        return qhmm_from_dict(doc)
    raise ValidationError(f"unknown model_type {kind!r}")


def dump_json(obj, path):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def save_model(model, path):
    dump_json(model_to_dict(model), path)


def load_model(path):
    return model_from_dict(load_json(path))
