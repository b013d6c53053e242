"""Interaction functions, score functions and Hamiltonians.

An interaction ``V`` or score ``xi`` is a local function of a configuration
seen from a focal point placed at the origin.  All concrete families here
depend only on points inside a closed ball of ``locality_radius``; their
values are computed by the compiled kernels from neighbour lists.

Energies are plain floats; the hard-core value is ``math.inf`` and
``math.exp(-math.inf) == 0.0`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import (
    ConfigError,
    IntensityAssumptionViolated,
    MissingBoundaryCondition,
    PointOutsideWindow,
    WrongPointCount,
)
from .torus import CellIndex, Configuration, TorusWindow, unit_ball_volume

INF = math.inf
MAX_TUPLE_ORDER = 4


class LocalFunction:
    """Shared behaviour of interaction and score families."""

    code: int
    cap: float
    shift: float

    @property
    def locality_radius(self) -> float:
        raise NotImplementedError

    @property
    def coefficient(self) -> float:
        return 0.0

    @property
    def order(self) -> int:
        return 0

    def kernel_params(self) -> np.ndarray:
        return np.array(
            [self.code, self.locality_radius, self.coefficient, self.order, self.cap],
            dtype=np.float64,
        )

    @property
    def bounded_by(self) -> Optional[float]:
        """A constant c with |h| <= c, or None when unbounded."""
        raw = self._raw_bound()
        if math.isfinite(self.cap):
            raw = self.cap if raw is None else min(raw, self.cap)
        return None if raw is None else raw + abs(self.shift)

    def _raw_bound(self) -> Optional[float]:
        return None

    @property
    def is_increasing(self) -> bool:
        return True

    @property
    def is_nonnegative(self) -> bool:
        return self.coefficient >= 0.0 and self.shift >= 0.0 and self.cap >= 0.0

    def cardinality_bound(self, b: int) -> Optional[float]:
        """M_b: a bound on the value over configurations with at most b points."""
        raw = self._raw_cardinality_bound(b)
        if raw is None:
            return None
        return min(raw, self.cap) + self.shift

    def _raw_cardinality_bound(self, b: int) -> Optional[float]:
        return None

    @property
    def linear_in_count(self) -> bool:
        return self.code == K.CODE_PAIR and not math.isfinite(self.cap)

    def truncated(self, M: float):
        """The truncation min(h, M)."""
        return replace(self, cap=min(self.cap, float(M)))

    def shifted(self, c: float):
        return replace(self, shift=self.shift + float(c))

    def value(self, rel: np.ndarray, origin: bool = True) -> float:
        """Value on the configuration ``rel`` (points relative to the focal point).

        ``rel`` must exclude the origin; ``origin`` says whether the origin
        itself belongs to the configuration.  Points outside the locality
        ball are ignored.
        """
        rel = np.asarray(rel, dtype=float).reshape(-1, rel.shape[-1] if np.ndim(rel) > 1 else 1)
        if rel.size:
            keep = np.einsum("ij,ij->i", rel, rel) <= self.locality_radius ** 2
            rel = np.ascontiguousarray(rel[keep])
        P = self.kernel_params()
        if self.code == K.CODE_TUPLE_CLIQUE:
            v = K.clique_value(P, rel, len(rel))
        else:
            v = K.count_value(P, len(rel), origin)
        if origin or len(rel):
            v += self.shift
        return float(v)


# ---------------------------------------------------------------------------
# interaction families


class InteractionModel(LocalFunction):
    pass


@dataclass(frozen=True)
class Strauss(InteractionModel):
    """Pairwise penalty: half of log(1/gamma) per neighbour within ``r``."""

    gamma: float
    r: float
    cap: float = INF
    shift: float = 0.0
    code: int = field(default=K.CODE_PAIR, init=False, repr=False)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"Strauss gamma must lie in (0, 1], got {self.gamma}")
        if not self.r > 0:
            raise ConfigError("Strauss radius must be positive")

    @property
    def locality_radius(self):
        return self.r

    @property
    def coefficient(self):
        return 0.5 * math.log(1.0 / self.gamma)

    def _raw_bound(self):
        return 0.0 if self.gamma == 1.0 else None

    def _raw_cardinality_bound(self, b):
        return self.coefficient * b


@dataclass(frozen=True)
class KWise(InteractionModel):
    """k-wise interaction: sum of phi over (k-1)-subsets of neighbours within ``r``.

    ``phi="constant"`` takes phi == c; ``phi="clique"`` takes
    phi == c * 1[the subset is pairwise within r], i.e. counts k-cliques
    through the focal point.
    """

    k: int
    r: float
    c: float = 1.0
    phi: str = "constant"
    cap: float = INF
    shift: float = 0.0

    def __post_init__(self):
        if int(self.k) != self.k or not 2 <= self.k <= MAX_TUPLE_ORDER:
            raise ConfigError(f"k must be an integer in [2, {MAX_TUPLE_ORDER}], got {self.k}")
        if self.phi not in ("constant", "clique"):
            raise ConfigError(f"unknown tuple potential {self.phi!r}")
        if not self.c >= 0:
            raise ConfigError("tuple potential bound c must be nonnegative")
        if not self.r > 0:
            raise ConfigError("radius must be positive")

    @property
    def code(self):
        return K.CODE_TUPLE_CONST if self.phi == "constant" else K.CODE_TUPLE_CLIQUE

    @property
    def locality_radius(self):
        return self.r

    @property
    def coefficient(self):
        return self.c

    @property
    def order(self):
        return self.k

    def _raw_bound(self):
        return 0.0 if self.c == 0 else None

    def _raw_cardinality_bound(self, b):
        return self.c * b ** self.k


@dataclass(frozen=True)
class HardCore(InteractionModel):
    """Infinite energy whenever another point lies within ``R``."""

    R: float
    cap: float = INF
    shift: float = 0.0
    code: int = field(default=K.CODE_HARDCORE, init=False, repr=False)

    def __post_init__(self):
        if not self.R > 0:
            raise ConfigError("hard-core radius must be positive")

    @property
    def locality_radius(self):
        return self.R

    def packing_fraction(self, intensity: float, d: int) -> float:
        return intensity * unit_ball_volume(d) * self.R ** d

    def check_intensity(self, intensity: float, d: int) -> None:
        eta = self.packing_fraction(intensity, d)
        if not eta < 1.0:
            raise IntensityAssumptionViolated(
                f"hard-core model needs lambda * v_d * R^d < 1, got {eta:.4g}"
            )


@dataclass(frozen=True)
class TruncatedHardCore(InteractionModel):
    """Bounded relaxation s * 1[another point within R]."""

    R: float
    s: float
    cap: float = INF
    shift: float = 0.0
    code: int = field(default=K.CODE_INDICATOR, init=False, repr=False)

    def __post_init__(self):
        if not self.R > 0 or not self.s >= 0:
            raise ConfigError("need R > 0 and s >= 0")

    @property
    def locality_radius(self):
        return self.R

    @property
    def coefficient(self):
        return self.s

    def _raw_bound(self):
        return self.s

    def _raw_cardinality_bound(self, b):
        return self.s


# ---------------------------------------------------------------------------
# score families


class ScoreModel(LocalFunction):
    pass


@dataclass(frozen=True)
class NeighborCount(ScoreModel):
    r: float
    cap: float = INF
    shift: float = 0.0
    code: int = field(default=K.CODE_PAIR, init=False, repr=False)

    @property
    def locality_radius(self):
        return self.r

    @property
    def coefficient(self):
        return 1.0

    def _raw_cardinality_bound(self, b):
        return float(b)


@dataclass(frozen=True)
class TupleScore(ScoreModel):
    """Clique or tuple counts through the focal point (k <= 4)."""

    k: int
    r: float
    c: float = 1.0
    phi: str = "clique"
    cap: float = INF
    shift: float = 0.0

    def __post_init__(self):
        if int(self.k) != self.k or not 2 <= self.k <= MAX_TUPLE_ORDER:
            raise ConfigError(f"k must be an integer in [2, {MAX_TUPLE_ORDER}]")

    @property
    def code(self):
        return K.CODE_TUPLE_CONST if self.phi == "constant" else K.CODE_TUPLE_CLIQUE

    @property
    def locality_radius(self):
        return self.r

    @property
    def coefficient(self):
        return self.c

    @property
    def order(self):
        return self.k

    def _raw_cardinality_bound(self, b):
        return self.c * b ** self.k


@dataclass(frozen=True)
class Indicator(ScoreModel):
    """c * 1[some other point within r]; bounded by c."""

    r: float
    c: float = 1.0
    cap: float = INF
    shift: float = 0.0
    code: int = field(default=K.CODE_INDICATOR, init=False, repr=False)

    @property
    def locality_radius(self):
        return self.r

    @property
    def coefficient(self):
        return self.c

    def _raw_bound(self):
        return abs(self.c)

    def _raw_cardinality_bound(self, b):
        return self.c


@dataclass(frozen=True)
class ConstantScore(ScoreModel):
    c: float = 1.0
    r: float = 1e-9
    cap: float = INF
    shift: float = 0.0
    code: int = field(default=K.CODE_CONST, init=False, repr=False)

    @property
    def locality_radius(self):
        return self.r

    @property
    def coefficient(self):
        return self.c

    def _raw_bound(self):
        return abs(self.c)

    def _raw_cardinality_bound(self, b):
        return self.c


# ---------------------------------------------------------------------------
# Hamiltonians

PERIODIC = "periodic"
BOUNDARY1 = "boundary1"
BOUNDARY2 = "boundary2"


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Energy convention: periodic, or one of the two boundary-condition variants."""

    convention: str = PERIODIC
    boundary_points: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.convention not in (PERIODIC, BOUNDARY1, BOUNDARY2):
            raise ConfigError(f"unknown Hamiltonian convention {self.convention!r}")
        if self.convention != PERIODIC:
            if self.boundary_points is None:
                raise MissingBoundaryCondition(f"{self.convention} needs boundary points")
            bc = np.array(self.boundary_points, dtype=float, copy=True)
            bc = bc.reshape(-1, bc.shape[-1]) if bc.size else bc.reshape(0, 0)
            bc.flags.writeable = False
            object.__setattr__(self, "boundary_points", bc)

    @classmethod
    def periodic(cls):
        return cls(PERIODIC)

    @classmethod
    def boundary1(cls, points):
        return cls(BOUNDARY1, points)

    @classmethod
    def boundary2(cls, points):
        return cls(BOUNDARY2, points)

    @property
    def is_periodic(self) -> bool:
        return self.convention == PERIODIC

    def boundary_in_annulus(self, w: TorusWindow, r: float) -> np.ndarray:
        """Boundary points outside the window but within ``r`` of it (box metric)."""
        bc = self.boundary_points
        if bc is None or bc.size == 0:
            return np.empty((0, w.dim))
        if bc.shape[1] != w.dim:
            raise ConfigError("boundary points have the wrong dimension")
        outside = ~np.all((bc >= -w.half) & (bc < w.half), axis=1)
        near = np.all(np.abs(bc) <= w.half + r, axis=1)
        return bc[outside & near]

    def check_model(self, V: InteractionModel) -> None:
        if self.is_periodic:
            return
        if isinstance(V, HardCore):
            raise ConfigError("boundary-condition Hamiltonians are not supported for the hard-core model")
        if V.value(np.empty((0, 1)), origin=True) != 0.0:
            raise ConfigError("boundary-condition Hamiltonians need V({0}) = 0")


def embedding_side(w: TorusWindow, r: float) -> float:
    """Side of a periodic box in which window + annulus sit without wrap-around contacts."""
    return w.side + 4.0 * r


def _combined(spec: HamiltonianSpec, omega: Configuration, r: float):
    w = omega.window
    if spec.is_periodic:
        return omega.points, w.side
    bc = spec.boundary_in_annulus(w, r)
    return np.vstack([omega.points, bc]), embedding_side(w, r)


def focal_values(h: LocalFunction, omega: Configuration, spec: HamiltonianSpec = None):
    """Per point: h seen from that point under ``spec``, and the boundary-only term.

    Shifts are not included.
    """
    spec = spec or HamiltonianSpec.periodic()
    r = h.locality_radius
    n = len(omega)
    if n == 0:
        return np.empty(0), np.empty(0)
    if spec.is_periodic:
        indptr, indices = omega.neighbor_lists(r)
        pts = omega.points
        side = omega.window.side
    else:
        pts, side = _combined(spec, omega, r)
        indptr, indices = CellIndex.build(pts, side, r).neighbor_csr(r)
    return K.focal_values(np.ascontiguousarray(pts), n, side, h.kernel_params(), indptr, indices)


def local_energies(V: LocalFunction, omega: Configuration, spec: HamiltonianSpec = None) -> np.ndarray:
    spec = spec or HamiltonianSpec.periodic()
    if spec.is_periodic:
        omega.window.check_radius(V.locality_radius)
    v_all, v_bc = focal_values(V, omega, spec)
    out = v_all + V.shift
    if spec.convention == BOUNDARY2:
        out = out + v_bc
    return out


def eval_interaction(V: LocalFunction, omega: Configuration, focal: int) -> float:
    """V(omega^(n) - x) for the point with id ``focal``."""
    if not 0 <= focal < len(omega):
        raise ConfigError(f"invalid point id {focal}")
    w = omega.window
    r = V.locality_radius
    w.check_radius(r)
    x = omega.points[focal]
    ids = omega.cell_index(r).query(x, r, exclude=focal)
    rel = w.wrap(omega.points[ids] - x)
    return V.value(rel.reshape(-1, w.dim), origin=True)


def _safe_sum(values: np.ndarray) -> float:
    if values.size and np.isinf(values).any():
        return INF
    return math.fsum(values.tolist())


def hamiltonian(spec: HamiltonianSpec, V: InteractionModel, omega: Configuration) -> float:
    """Total energy of ``omega`` under the chosen convention (``math.inf`` if forbidden)."""
    spec = spec or HamiltonianSpec.periodic()
    spec.check_model(V)
    n = len(omega)
    if spec.is_periodic:
        omega.window.check_radius(V.locality_radius)
        if V.linear_in_count:
            total = int(omega.neighbor_counts(V.locality_radius).sum())
            return V.coefficient * total + n * V.shift
    v_all, v_bc = focal_values(V, omega, spec)
    H = _safe_sum(v_all)
    if spec.convention == BOUNDARY2:
        H = H + _safe_sum(v_bc) if math.isfinite(H) else H
    return H + n * V.shift if math.isfinite(H) else H


def gibbs_weight(H: float) -> float:
    return 0.0 if H == INF else math.exp(-H)


def pair_count_Sr(omega: Configuration, r: float) -> int:
    """Number of unordered pairs at torus distance <= r."""
    omega.window.check_radius(r)
    return int(omega.neighbor_counts(r).sum()) // 2


def _as_scores(xi) -> list:
    if isinstance(xi, LocalFunction):
        return [xi]
    return list(xi)


def score_average(xi, omega: Configuration) -> np.ndarray:
    """Per-point average of each score over the configuration (one entry per score)."""
    w = omega.window
    if len(omega) != w.point_budget:
        raise WrongPointCount(f"need exactly n = {w.point_budget} points, got {len(omega)}")
    scores = _as_scores(xi)
    out = np.empty(len(scores))
    for j, s in enumerate(scores):
        out[j] = math.fsum(local_energies(s, omega).tolist()) / w.point_budget
    return out


def empirical_field_apply(omega: Configuration, g: LocalFunction) -> float:
    """(1/|W_n|) * sum over points of g seen from that point."""
    w = omega.window
    w.check_radius(g.locality_radius)
    if len(omega) == 0:
        return 0.0
    vals = local_energies(g, omega)
    return w.intensity / w.point_budget * math.fsum(vals.tolist())


def local_energy_at(V: LocalFunction, omega: Configuration, x) -> float:
    """V((omega^(n) + {x}) - x) for an arbitrary location x (used for insertion tests)."""
    w = omega.window
    x = np.asarray(x, dtype=float)
    if not w.contains(x):
        raise PointOutsideWindow("location outside the window")
    r = V.locality_radius
    ids = omega.cell_index(r).query(x, r) if len(omega) else np.empty(0, dtype=int)
    rel = w.wrap(omega.points[ids] - x)
    rel = rel[np.any(rel != 0.0, axis=1)]
    return V.value(rel.reshape(-1, w.dim), origin=True)
