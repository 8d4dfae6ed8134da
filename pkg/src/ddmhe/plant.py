"""Ground-truth plants, noise models and offline/online data generation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .trajectories import Trajectory, as_trajectory

NOISE_KINDS = ("none", "uniform", "gaussian", "truncated_gaussian")


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, A.shape[0])
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else np.asarray(self.D, dtype=float)
        D = D.reshape(C.shape[0], B.shape[1])
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D)):
            mat.flags.writeable = False
            object.__setattr__(self, name, mat)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


def four_tank_linear() -> StateSpaceModel:
    """Linearized, open-loop stable four-tank benchmark (outputs: levels 1 and 2)."""
    A = [[0.921, 0, 0.041, 0],
         [0, 0.918, 0, 0.033],
         [0, 0, 0.924, 0],
         [0, 0, 0, 0.937]]
    B = [[0.017, 0.001],
         [0.001, 0.023],
         [0, 0.061],
         [0.072, 0]]
    C = [[1, 0, 0, 0],
         [0, 1, 0, 0]]
    return StateSpaceModel(A, B, C, np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# noise

@dataclass(frozen=True)
class NoiseSpec:
    """Distribution of i.i.d. vector noise (or of random inputs).

    ``uniform`` uses ``a``/``b``; ``gaussian`` uses ``mean``/``stddev``;
    ``truncated_gaussian`` additionally ``bound`` (half-width around ``mean``).
    """

    kind: str = "none"
    a: float = 0.0
    b: float = 1.0
    mean: float = 0.0
    stddev: float = 1.0
    bound: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind == "uniform" and not self.a <= self.b:
            raise ValueError(f"uniform noise needs a <= b, got ({self.a}, {self.b})")
        if self.kind in ("gaussian", "truncated_gaussian") and not self.stddev >= 0:
            raise ValueError(f"stddev must be nonnegative, got {self.stddev}")
        if self.kind == "truncated_gaussian":
            if not (self.bound > 0 and math.isfinite(self.bound)):
                raise ValueError(f"truncated_gaussian needs a finite bound > 0, got {self.bound}")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls("none")

    @classmethod
    def uniform(cls, a: float, b: float, seed: int = 0) -> "NoiseSpec":
        return cls("uniform", a=a, b=b, seed=seed)

    @classmethod
    def gaussian(cls, mean: float, stddev: float, seed: int = 0) -> "NoiseSpec":
        return cls("gaussian", mean=mean, stddev=stddev, seed=seed)

    @classmethod
    def truncated_gaussian(cls, mean: float, stddev: float, bound: float, seed: int = 0) -> "NoiseSpec":
        return cls("truncated_gaussian", mean=mean, stddev=stddev, bound=bound, seed=seed)

    def with_seed(self, seed: int) -> "NoiseSpec":
        return replace(self, seed=int(seed))

    @property
    def declared_bound(self) -> float:
        """Sure bound on ``|sample|_inf``."""
        if self.kind == "none":
            return 0.0
        if self.kind == "uniform":
            return max(abs(self.a), abs(self.b))
        if self.kind == "truncated_gaussian":
            return abs(self.mean) + self.bound
        return math.inf

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "uniform":
            d.update(a=self.a, b=self.b)
        elif self.kind in ("gaussian", "truncated_gaussian"):
            d.update(mean=self.mean, stddev=self.stddev)
            if self.kind == "truncated_gaussian":
                d["bound"] = self.bound
        return d


def sample_noise(spec: NoiseSpec, count: int, dim: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """``count`` i.i.d. draws of a ``dim``-vector, shape ``(count, dim)``.

    Truncation is done by rejection, so no probability mass piles up at the
    bounds. Without an explicit ``rng`` the stream is seeded from ``spec.seed``.
    """
    if count < 0 or dim < 1:
        raise ValueError(f"invalid sample shape ({count}, {dim})")
    if spec.kind == "none":
        return np.zeros((count, dim))
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform":
        return rng.uniform(spec.a, spec.b, size=(count, dim))
    if spec.kind == "gaussian":
        return rng.normal(spec.mean, spec.stddev, size=(count, dim))
    out = rng.normal(spec.mean, spec.stddev, size=(count, dim))
    bad = np.abs(out - spec.mean) > spec.bound
    while bad.any():
        out[bad] = rng.normal(spec.mean, spec.stddev, size=int(bad.sum()))
        bad = np.abs(out - spec.mean) > spec.bound
    return out


# ---------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class SimRecord:
    u: Trajectory
    x: Trajectory
    y_clean: Trajectory
    y_measured: Trajectory
    v: Trajectory


def simulate_lti(model: StateSpaceModel, x0, u_seq, noise: NoiseSpec = NoiseSpec()) -> SimRecord:
    """Run ``x(t+1) = A x + B u`` for ``len(u_seq)`` samples; noise enters outputs only."""
    u = as_trajectory(u_seq)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if u.dim != model.m:
        raise ValueError(f"input dim {u.dim} != model m={model.m}")
    if x0.shape[0] != model.n:
        raise ValueError(f"x0 has size {x0.shape[0]}, model n={model.n}")
    T = u.length
    x = np.empty((T, model.n))
    x[0] = x0
    for t in range(T - 1):
        x[t + 1] = model.A @ x[t] + model.B @ u.samples[t]
    y = x @ model.C.T + u.samples @ model.D.T
    v = sample_noise(noise, T, model.p)
    return SimRecord(u, Trajectory(x), Trajectory(y), Trajectory(y + v), Trajectory(v))


@dataclass(frozen=True)
class FourTankParams:
    """Physical parameters of the nonlinear four-tank process (levels in cm)."""

    a1: float
    a2: float
    a3: float
    a4: float
    A1: float
    A2: float
    A3: float
    A4: float
    gamma1: float
    gamma2: float
    g: float = 981.0
    dt: float = 1.0

    def __post_init__(self):
        areas = (self.a1, self.a2, self.a3, self.a4, self.A1, self.A2, self.A3, self.A4)
        if not all(a > 0 for a in areas):
            raise ValueError("all tank and outlet areas must be positive")
        if not (0 < self.gamma1 < 1 and 0 < self.gamma2 < 1):
            raise ValueError("valve splits must lie in (0, 1)")
        if not (self.dt > 0 and self.g > 0):
            raise ValueError("dt and g must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "FourTankParams":
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: float(v) for k, v in d.items() if k in keys})

    @classmethod
    def default(cls) -> "FourTankParams":
        """Representative values shipped with the package (not from the benchmark literature verbatim)."""
        text = resources.files("ddmhe.data").joinpath("fourtank_nonlinear_params.json").read_text()
        return cls.from_dict(json.loads(text)["params"])

    @property
    def n(self) -> int:
        return 4

    @property
    def m(self) -> int:
        return 2

    @property
    def p(self) -> int:
        return 2

    @property
    def C(self) -> np.ndarray:
        return np.eye(2, 4)


def four_tank_vector_field(params: FourTankParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    h = np.sqrt(2.0 * params.g * np.maximum(x, 0.0))
    q = params
    return np.array([
        -q.a1 / q.A1 * h[0] + q.a3 / q.A1 * h[2] + q.gamma1 / q.A1 * u[0],
        -q.a2 / q.A2 * h[1] + q.a4 / q.A2 * h[3] + q.gamma2 / q.A2 * u[1],
        -q.a3 / q.A3 * h[2] + (1 - q.gamma2) / q.A3 * u[1],
        -q.a4 / q.A4 * h[3] + (1 - q.gamma1) / q.A4 * u[0],
    ])


def four_tank_nonlinear_step(params: FourTankParams, x, u) -> np.ndarray:
    """One RK4 step of length ``params.dt``; negative levels are clamped inside the square root."""
    x = np.asarray(x, dtype=float).reshape(4)
    u = np.asarray(u, dtype=float).reshape(2)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("nonfinite state or input")
    dt = params.dt
    k1 = four_tank_vector_field(params, x, u)
    k2 = four_tank_vector_field(params, x + 0.5 * dt * k1, u)
    k3 = four_tank_vector_field(params, x + 0.5 * dt * k2, u)
    k4 = four_tank_vector_field(params, x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def four_tank_equilibrium(params: FourTankParams, u) -> np.ndarray:
    """Levels at which outflow balances the constant inflow ``u``."""
    u1, u2 = np.asarray(u, dtype=float)
    q = params
    lvl = lambda flow, a: (flow / a) ** 2 / (2 * q.g)  # noqa: E731
    x3 = lvl((1 - q.gamma2) * u2, q.a3)
    x4 = lvl((1 - q.gamma1) * u1, q.a4)
    x1 = lvl(q.gamma1 * u1 + (1 - q.gamma2) * u2, q.a1)
    x2 = lvl(q.gamma2 * u2 + (1 - q.gamma1) * u1, q.a2)
    return np.array([x1, x2, x3, x4])


def simulate_nonlinear(params: FourTankParams, x0, u_seq, noise: NoiseSpec = NoiseSpec()) -> SimRecord:
    u = as_trajectory(u_seq)
    T = u.length
    x = np.empty((T, 4))
    x[0] = np.asarray(x0, dtype=float).reshape(4)
    for t in range(T - 1):
        x[t + 1] = four_tank_nonlinear_step(params, x[t], u.samples[t])
    y = x[:, :2].copy()
    v = sample_noise(noise, T, 2)
    return SimRecord(u, Trajectory(x), Trajectory(y), Trajectory(y + v), Trajectory(v))


Plant = Union[StateSpaceModel, FourTankParams]


def simulate(plant: Plant, x0, u_seq, noise: NoiseSpec = NoiseSpec()) -> SimRecord:
    if isinstance(plant, FourTankParams):
        return simulate_nonlinear(plant, x0, u_seq, noise)
    return simulate_lti(plant, x0, u_seq, noise)


def sinusoidal_input(T: int, m: int = 2, offset: float = 10.0, amplitude: float = 5.0,
                     period: float = 50.0) -> np.ndarray:
    """``offset + amplitude * sin(2 pi t / period)`` on every channel, shape ``(T, m)``."""
    t = np.arange(T, dtype=float)
    return np.repeat((offset + amplitude * np.sin(2 * np.pi * t / period))[:, None], m, axis=1)


# ---------------------------------------------------------------------------
# offline data

@dataclass(frozen=True)
class DataSet:
    u_d: Trajectory
    x_d_noisy: Trajectory
    y_d_noisy: Trajectory
    x_d_true: Optional[Trajectory] = None
    y_d_true: Optional[Trajectory] = None
    eps_x_bound: float = 0.0
    eps_y_bound: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def N(self) -> int:
        return self.u_d.length

    @property
    def n(self) -> int:
        return self.x_d_noisy.dim

    @property
    def m(self) -> int:
        return self.u_d.dim

    @property
    def p(self) -> int:
        return self.y_d_noisy.dim

    @property
    def eps_bar(self) -> float:
        return max(self.eps_x_bound, self.eps_y_bound)

    def clean(self) -> "DataSet":
        """Copy whose 'noisy' channels are the clean ones (requires clean copies)."""
        if self.x_d_true is None or self.y_d_true is None:
            raise ValueError("data set carries no clean copies")
        return replace(self, x_d_noisy=self.x_d_true, y_d_noisy=self.y_d_true,
                       eps_x_bound=0.0, eps_y_bound=0.0)


def collect_offline_data(plant: Plant, input_spec: NoiseSpec, N: int,
                         state_noise: NoiseSpec = NoiseSpec(), output_noise: NoiseSpec = NoiseSpec(),
                         x0=None) -> DataSet:
    """Excite ``plant`` with i.i.d. inputs for ``N`` samples and record noisy measurements.

    The declared bounds come from the noise specs (truncation half-width, 0 for
    ``none``). Each spec carries its own seed, so the result is reproducible.
    """
    if N < 2:
        raise ValueError(f"need N >= 2 samples, got {N}")
    n, m = plant.n, plant.m
    u = sample_noise(input_spec, N, m)
    x0 = np.zeros(n) if x0 is None else x0
    rec = simulate(plant, x0, u)
    x_true, y_true = rec.x.samples, rec.y_clean.samples
    ex = sample_noise(state_noise, N, x_true.shape[1])
    ey = sample_noise(output_noise, N, y_true.shape[1])
    meta = {
        "seed_input": input_spec.seed,
        "seed_state_noise": state_noise.seed,
        "seed_output_noise": output_noise.seed,
    }
    return DataSet(
        u_d=rec.u,
        x_d_noisy=Trajectory(x_true + ex),
        y_d_noisy=Trajectory(y_true + ey),
        x_d_true=rec.x,
        y_d_true=rec.y_clean,
        eps_x_bound=state_noise.declared_bound,
        eps_y_bound=output_noise.declared_bound,
        meta=meta,
    )


def write_dataset(ds: DataSet, path: Union[str, Path]) -> tuple[Path, Path]:
    """CSV (``t, u_*, x_*, y_*`` noisy channels) plus a ``key=value`` sidecar ``<path>.meta``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (["t"] + [f"u_{i + 1}" for i in range(ds.m)] + [f"x_{i + 1}" for i in range(ds.n)]
              + [f"y_{i + 1}" for i in range(ds.p)])
    lines = [",".join(header)]
    for t in range(ds.N):
        row = np.concatenate([ds.u_d.samples[t], ds.x_d_noisy.samples[t], ds.y_d_noisy.samples[t]])
        lines.append(",".join([str(t)] + [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n")
    meta = {"N": ds.N, "n": ds.n, "m": ds.m, "p": ds.p,
            "eps_x_bound": repr(float(ds.eps_x_bound)), "eps_y_bound": repr(float(ds.eps_y_bound))}
    meta.update(ds.meta)
    meta_path = path.with_name(path.name + ".meta")
    meta_path.write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return path, meta_path


def read_dataset(path: Union[str, Path]) -> DataSet:
    path = Path(path)
    meta = {}
    for line in path.with_name(path.name + ".meta").read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    n, m, p = int(meta["n"]), int(meta["m"]), int(meta["p"])
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != 1 + m + n + p:
        raise ValueError(f"{path}: expected {1 + m + n + p} columns, found {table.shape[1]}")
    extra = {k: v for k, v in meta.items() if k not in ("N", "n", "m", "p", "eps_x_bound", "eps_y_bound")}
    return DataSet(
        u_d=Trajectory(table[:, 1:1 + m]),
        x_d_noisy=Trajectory(table[:, 1 + m:1 + m + n]),
        y_d_noisy=Trajectory(table[:, 1 + m + n:]),
        eps_x_bound=float(meta["eps_x_bound"]),
        eps_y_bound=float(meta["eps_y_bound"]),
        meta=extra,
    )
