"""Experiment configuration: a JSON document checked against a published schema."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema
import numpy as np

from ..plant import FourTankParams, NoiseSpec, StateSpaceModel, four_tank_linear
from ..solver.qp import SolverSettings

ESTIMATORS = ("dd-nominal", "dd-robust", "model-based")


class ConfigSchemaError(ValueError):
    """Configuration rejected; ``messages`` holds one line per offending field."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {m}" for m in self.messages))


def load_schema() -> dict:
    return json.loads(resources.files("ddmhe.data").joinpath("experiment.schema.json").read_text())


def _field_path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate_document(doc: dict) -> None:
    validator = jsonschema.Draft7Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigSchemaError(f"{_field_path(e)}: {e.message}" for e in errors)


def _weight(w, dim: int, name: str) -> np.ndarray:
    if isinstance(w, (int, float)):
        return float(w) * np.eye(dim)
    M = np.asarray(w, dtype=float)
    if M.shape != (dim, dim):
        raise ConfigSchemaError([f"{name}: expected a {dim}x{dim} matrix, got shape {M.shape}"])
    return M


def _noise(d: Optional[dict]) -> NoiseSpec:
    if d is None:
        return NoiseSpec.none()
    try:
        return NoiseSpec(**d)
    except ValueError as exc:
        raise ConfigSchemaError([str(exc)]) from None


def _bounds(v, n: int, fill: float, name: str) -> np.ndarray:
    if v is None:
        return np.full(n, fill)
    if len(v) != n:
        raise ConfigSchemaError([f"{name}: expected {n} entries, got {len(v)}"])
    return np.array([fill if b is None else float(b) for b in v])


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    plant_kind: str
    plant: Union[StateSpaceModel, FourTankParams]
    N: int
    L: int
    rho: float
    P_weight: np.ndarray
    R_settings: dict
    offline_input: NoiseSpec
    offline_state_noise: NoiseSpec
    offline_output_noise: NoiseSpec
    eps_x_bound: float
    eps_y_bound: float
    c_alpha: float
    c_sigma_x: float
    state_lower: np.ndarray
    state_upper: np.ndarray
    seeds: tuple
    T: int
    x0: np.ndarray
    prior0: np.ndarray
    online_noise: NoiseSpec
    input_offset: float
    input_amplitude: float
    input_period: float
    estimators: tuple
    observer: str = "lmi"
    lyap_Q: Optional[np.ndarray] = None
    u_max: Optional[float] = None
    x_max: Optional[float] = None
    radius_margin: float = 1.1
    steady_state_fraction: float = 0.5
    settings: SolverSettings = field(default_factory=SolverSettings)
    offline_x0: Optional[np.ndarray] = None
    plots: bool = True
    output_dir: str = "out"
    source: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def m(self) -> int:
        return self.plant.m

    @property
    def p(self) -> int:
        return self.plant.p


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate ``doc`` against the schema, then check dimensions."""
    validate_document(doc)
    pk = doc["plant"]
    if pk["kind"] == "linear":
        if "params" in pk:
            raise ConfigSchemaError(["plant/params: only valid for the nonlinear plant"])
        plant = four_tank_linear()
    else:
        base = FourTankParams.default().__dict__.copy()
        base.update(pk.get("params", {}))
        try:
            plant = FourTankParams(**base)
        except ValueError as exc:
            raise ConfigSchemaError([f"plant/params: {exc}"]) from None
    n, p = plant.n, plant.p
    online = doc["online"]
    msgs = []
    for key in ("x0", "prior0"):
        if len(online[key]) != n:
            msgs.append(f"online/{key}: expected {n} entries, got {len(online[key])}")
    if "offline_x0" in pk and len(pk["offline_x0"]) != n:
        msgs.append(f"plant/offline_x0: expected {n} entries")
    if doc["L"] + 2 > doc["N"]:
        msgs.append(f"L: horizon {doc['L']} too long for N = {doc['N']}")
    if msgs:
        raise ConfigSchemaError(msgs)
    state_noise = _noise(doc.get("offline_state_noise"))
    output_noise = _noise(doc.get("offline_output_noise"))
    eps_x = doc.get("eps_x_bound")
    eps_y = doc.get("eps_y_bound")
    eps_x = state_noise.declared_bound if eps_x is None else float(eps_x)
    eps_y = output_noise.declared_bound if eps_y is None else float(eps_y)
    if not (np.isfinite(eps_x) and np.isfinite(eps_y)):
        raise ConfigSchemaError(["eps_x_bound/eps_y_bound: required when the offline noise is unbounded"])
    inp = online.get("input", {})
    radii = doc.get("radii", {})
    solver = doc.get("solver", {})
    lq = doc.get("lyap_Q")
    try:
        settings = SolverSettings(**solver)
    except ValueError as exc:
        raise ConfigSchemaError([f"solver: {exc}"]) from None
    return ExperimentConfig(
        name=doc.get("name", "experiment"),
        plant_kind=pk["kind"],
        plant=plant,
        N=int(doc["N"]),
        L=int(doc["L"]),
        rho=float(doc["rho"]),
        P_weight=_weight(doc["P_weight"], n, "P_weight"),
        R_settings={k: _weight(v, p, f"R_settings/{k}") for k, v in doc["R_settings"].items()},
        offline_input=_noise(doc["offline_input"]),
        offline_state_noise=state_noise,
        offline_output_noise=output_noise,
        eps_x_bound=eps_x,
        eps_y_bound=eps_y,
        c_alpha=float(doc.get("c_alpha", 2000.0)),
        c_sigma_x=float(doc.get("c_sigma_x", 600.0)),
        state_lower=_bounds(doc.get("state_lower"), n, -np.inf, "state_lower"),
        state_upper=_bounds(doc.get("state_upper"), n, np.inf, "state_upper"),
        seeds=tuple(int(s) for s in doc["seeds"]),
        T=int(online["T"]),
        x0=np.asarray(online["x0"], dtype=float),
        prior0=np.asarray(online["prior0"], dtype=float),
        online_noise=_noise(online.get("noise")),
        input_offset=float(inp.get("offset", 10.0)),
        input_amplitude=float(inp.get("amplitude", 5.0)),
        input_period=float(inp.get("period", 50.0)),
        estimators=tuple(doc["estimators"]),
        observer=doc.get("observer", "lmi"),
        lyap_Q=None if lq is None else _weight(lq, n, "lyap_Q"),
        u_max=radii.get("u_max"),
        x_max=radii.get("x_max"),
        radius_margin=float(radii.get("margin", 1.1)),
        steady_state_fraction=float(doc.get("steady_state_fraction", 0.5)),
        settings=settings,
        offline_x0=None if "offline_x0" not in pk else np.asarray(pk["offline_x0"], dtype=float),
        plots=bool(doc.get("plots", True)),
        output_dir=doc.get("output_dir", "out"),
        source=doc,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigSchemaError([f"<file>: not valid JSON ({exc})"]) from None
    return config_from_dict(doc)


def shipped_config(name: str) -> Path:
    """Path of a configuration bundled with the package (``linear_fourtank.json`` ...)."""
    return Path(str(resources.files("ddmhe.data").joinpath(name)))
