"""Line-oriented ``key = value`` experiment configuration with validation."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import (
    ConfigError,
    ConstraintViolated,
    IntensityAssumptionViolated,
    TypeMismatch,
    UnknownKey,
)
from .models import (
    ConstantScore,
    HamiltonianSpec,
    HardCore,
    Indicator,
    KWise,
    NeighborCount,
    Strauss,
    TruncatedHardCore,
    TupleScore,
)
from .samplers import McmcConfig
from .torus import TorusWindow, unit_ball_volume

MODEL_KINDS = ("strauss", "kwise", "hardcore", "truncated_hardcore", "ideal")
SCORE_KINDS = ("none", "neighbor_count", "clique", "indicator", "constant")
BC_KINDS = ("periodic", "boundary1", "boundary2")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _b_value(text: str):
    return "auto" if str(text).strip() == "auto" else int(text)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


# key -> (parser, default); None default means "unset"
SCHEMA: dict[str, tuple[Any, Any]] = {
    "model.kind": (str, None),
    "model.gamma": (float, 0.5),
    "model.r": (float, 0.5),
    "model.R": (float, 0.3),
    "model.k": (int, 3),
    "model.c": (float, 1.0),
    "model.phi": (str, "constant"),
    "model.s_cap": (float, 1.0),
    "model.truncate": (float, math.inf),
    "score.kind": (str, "neighbor_count"),
    "score.r": (float, 0.5),
    "score.k": (int, 3),
    "score.c": (float, 1.0),
    "window.lambda": (float, 1.0),
    "window.d": (int, 2),
    "window.n": (int, 64),
    "window.ladder": (_int_list, [8, 16, 32, 64, 128, 256, 512]),
    "sampler.burn_in": (int, 200),
    "sampler.thinning": (int, 10),
    "sampler.samples": (int, 100),
    "sampler.proposal": (str, "uniform"),
    "sampler.grid_points": (int, 0),
    "sampler.kind": (str, "mcmc"),
    "task.samples": (int, 10**5),
    "task.method": (str, "auto"),
    "task.replicas": (int, 16),
    "task.beta_nodes": (int, 21),
    "task.eps": (float, 0.1),
    "task.delta": (float, 0.1),
    "task.b": (_b_value, "auto"),
    "task.trials": (int, 1000),
    "task.plant": (int, 0),
    "task.threshold": (_float_list, [math.inf]),
    "task.direction": (str, "<="),
    "task.profile": (str, "partition"),
    "task.plot": (_bool, True),
    "bc.kind": (str, "periodic"),
    "bc.points_file": (str, ""),
    "seed": (int, 0),
    "stream": (int, 0),
    "output": (str, "out"),
}

REQUIRED = ("model.kind",)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def echo(self) -> str:
        """Fully resolved configuration, one ``key = value`` per line, sorted."""
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, list):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()[:16]

    # -- derived objects ---------------------------------------------------

    def window(self, n: Optional[int] = None) -> TorusWindow:
        return TorusWindow(self["window.d"], self["window.lambda"], n or self["window.n"])

    def model(self):
        kind = self["model.kind"]
        cap = self["model.truncate"]
        if kind == "strauss":
            V = Strauss(self["model.gamma"], self["model.r"], cap=cap)
        elif kind == "kwise":
            V = KWise(self["model.k"], self["model.r"], self["model.c"], self["model.phi"], cap=cap)
        elif kind == "hardcore":
            V = HardCore(self["model.R"])
        elif kind == "truncated_hardcore":
            V = TruncatedHardCore(self["model.R"], self["model.s_cap"], cap=cap)
        else:
            V = Strauss(1.0, self["model.r"])
        return V

    def score(self):
        kind = self["score.kind"]
        r = self["score.r"]
        if kind == "neighbor_count":
            return NeighborCount(r)
        if kind == "clique":
            return TupleScore(self["score.k"], r, self["score.c"])
        if kind == "indicator":
            return Indicator(r, self["score.c"])
        if kind == "constant":
            return ConstantScore(self["score.c"])
        return None

    def mcmc(self, beta: float = 1.0) -> McmcConfig:
        return McmcConfig(self["sampler.burn_in"], self["sampler.thinning"], self["sampler.samples"],
                          self["sampler.proposal"], self["sampler.grid_points"], beta)

    def hamiltonian_spec(self) -> HamiltonianSpec:
        kind = self["bc.kind"]
        if kind == "periodic":
            return HamiltonianSpec.periodic()
        path = self["bc.points_file"]
        if not path:
            return HamiltonianSpec(kind, None)  # raises MissingBoundaryCondition
        pts = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return HamiltonianSpec(kind, pts)


def read_config_file(path) -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        raw[key] = value
    return raw


def parse_config(path=None, overrides: Optional[dict] = None, require_model: bool = True) -> ExperimentConfig:
    """Merge file values and flag overrides (flags win), convert types and validate."""
    raw: dict[str, Any] = {}
    if path:
        raw.update(read_config_file(path))
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise UnknownKey(f"unknown configuration key(s): {', '.join(unknown)}")
    values = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            v = raw[key]
            try:
                values[key] = v if not isinstance(v, str) else parser(v)
            except (TypeError, ValueError):
                raise TypeMismatch(f"{key}: cannot parse {v!r} as {getattr(parser, '__name__', parser)}") from None
        else:
            values[key] = default
    if require_model:
        for key in REQUIRED:
            if values[key] is None:
                raise ConstraintViolated(f"missing required key {key}")
    elif values["model.kind"] is None:
        values["model.kind"] = "ideal"
    cfg = ExperimentConfig(values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    kind = v["model.kind"]
    if kind not in MODEL_KINDS:
        raise ConstraintViolated(f"model.kind must be one of {MODEL_KINDS}, got {kind!r}")
    if v["score.kind"] not in SCORE_KINDS:
        raise ConstraintViolated(f"score.kind must be one of {SCORE_KINDS}")
    if v["bc.kind"] not in BC_KINDS:
        raise ConstraintViolated(f"bc.kind must be one of {BC_KINDS}")
    if not 0.0 < v["model.gamma"] <= 1.0:
        raise ConstraintViolated(f"model.gamma must lie in (0, 1], got {v['model.gamma']}")
    if not 2 <= v["model.k"] <= 4 or not 2 <= v["score.k"] <= 4:
        raise ConstraintViolated("tuple order k must lie in [2, 4]")
    for key in ("model.r", "model.R", "score.r", "window.lambda"):
        if not v[key] > 0:
            raise ConstraintViolated(f"{key} must be positive")
    if v["window.d"] < 2 or v["window.n"] < 1:
        raise ConstraintViolated("need window.d >= 2 and window.n >= 1")
    if not v["window.ladder"] or any(b <= a for a, b in zip(v["window.ladder"], v["window.ladder"][1:])):
        raise ConstraintViolated("window.ladder must be strictly increasing")
    for key in ("task.eps", "task.delta"):
        if not 0.0 < v[key] < 1.0:
            raise ConstraintViolated(f"{key} must lie in (0, 1)")
    if v["task.direction"] not in ("<=", "<", ">", ">="):
        raise ConstraintViolated("task.direction must be one of <=, <, >, >=")
    if v["task.method"] not in ("auto", "naive", "ti"):
        raise ConstraintViolated("task.method must be auto, naive or ti")
    if v["sampler.kind"] not in ("mcmc", "binomial", "poisson"):
        raise ConstraintViolated("sampler.kind must be mcmc, binomial or poisson")
    lam, d = v["window.lambda"], v["window.d"]
    if kind == "hardcore":
        eta = lam * unit_ball_volume(d) * v["model.R"] ** d
        if not eta < 1.0:
            raise IntensityAssumptionViolated(
                f"hard-core intensity assumption lambda * v_d * R^d < 1 violated: {eta:.4g}"
            )
    check_radii(cfg, [v["window.n"]])


def check_radii(cfg: ExperimentConfig, ns) -> None:
    """Reject interaction or score radii with 2r >= window side at any of the given n."""
    v = cfg.values
    kind = v["model.kind"]
    lam, d = v["window.lambda"], v["window.d"]
    radius = v["model.R"] if kind in ("hardcore", "truncated_hardcore") else v["model.r"]
    for n in ns:
        side = (n / lam) ** (1.0 / d)
        for name, rho in (("interaction radius", radius), ("score radius", v["score.r"])):
            if 2 * rho >= side:
                raise ConstraintViolated(f"{name} {rho} needs 2r < window side {side:.4g} at n = {n}")
