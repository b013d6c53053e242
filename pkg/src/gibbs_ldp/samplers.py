"""Reference samplers, the canonical Metropolis chain and the two coupling constructions."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .diagnostics import (
    RConstants,
    SparseCubeSet,
    constants_for,
    dense_mask,
    hc_violations,
    sparse_cubes,
)
from .errors import (
    ConfigError,
    DensityExceedsCubes,
    InfeasibleStart,
    NonFiniteEnergy,
    PreconditionViolated,
)
from .models import (
    BOUNDARY2,
    PERIODIC,
    HamiltonianSpec,
    HardCore,
    InteractionModel,
    embedding_side,
    hamiltonian,
)
from .torus import CellIndex, Configuration, TorusWindow

CHUNK_STEPS = 1 << 20


class RngStream:
    """A seeded numpy generator addressed by ``(seed, stream)``; children add path components."""

    def __init__(self, seed: int, stream: int = 0, _path: tuple = ()):
        self.seed = int(seed)
        self.stream = int(stream)
        self.path = (self.stream,) + tuple(_path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.stream, self.path[1:] + (int(k),))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("GIBBS_LDP_THREADS", "1")))
    except ValueError:
        return 1


def map_replicas(fn: Callable, args: Sequence, threads: Optional[int] = None) -> list:
    """Apply ``fn`` to each argument, possibly concurrently; results keep argument order."""
    threads = threads or thread_count()
    if threads <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, args))


def uniform_points(w: TorusWindow, count: int, gen: np.random.Generator) -> np.ndarray:
    pts = gen.uniform(-w.half, w.half, size=(count, w.dim))
    return w.wrap(pts)


def sample_binomial(w: TorusWindow, rng) -> Configuration:
    """n i.i.d. uniform points in the window."""
    return Configuration(w, uniform_points(w, w.point_budget, _gen(rng)))


def sample_poisson(w: TorusWindow, rng, intensity: Optional[float] = None) -> Configuration:
    """Poisson process of the given intensity (default: the window's) on the window."""
    gen = _gen(rng)
    lam = w.intensity if intensity is None else intensity
    count = int(gen.poisson(lam * w.volume))
    return Configuration(w, uniform_points(w, count, gen))


# ---------------------------------------------------------------------------
# Metropolis chain


@dataclass(frozen=True)
class McmcConfig:
    """Sweep-based schedule; one sweep is n proposals."""

    burn_in: int = 200
    thinning: int = 10
    samples: int = 100
    proposal: str = "uniform"
    grid_points: int = 0
    beta: float = 1.0

    def __post_init__(self):
        if self.burn_in < 1 or self.thinning < 1 or self.samples < 1:
            raise ConfigError("burn_in, thinning and samples must all be >= 1")
        if self.proposal not in ("uniform", "grid"):
            raise ConfigError(f"unknown proposal {self.proposal!r}")
        if self.proposal == "grid" and self.grid_points < 2:
            raise ConfigError("grid proposals need grid_points >= 2")
        if not self.beta >= 0:
            raise ConfigError("beta must be nonnegative")


def grid_coordinates(w: TorusWindow, m: int) -> np.ndarray:
    return -w.half + np.arange(m) * (w.side / m)


def hardcore_start(w: TorusWindow, R: float, gen: np.random.Generator) -> np.ndarray:
    """Dart throwing with up to 100 n candidates, then a square-lattice fallback."""
    n = w.point_budget
    cands = uniform_points(w, 100 * n, gen)
    pts = K.dart_throw(cands, w.side, float(R), n)
    if len(pts) == n:
        return pts
    m = math.ceil(n ** (1.0 / w.dim) - 1e-9)
    spacing = w.side / m
    if spacing <= R:
        raise InfeasibleStart(
            f"could not place {n} points with pairwise distance > {R} (lattice spacing {spacing:.4g})"
        )
    axes = [grid_coordinates(w, m)] * w.dim
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, w.dim)
    return np.ascontiguousarray(lattice[:n])


class MetropolisChain:
    """Single-point uniform relocation Metropolis chain targeting exp(-beta H) dB_n.

    The chain owns its state; boundary points (for the boundary conventions)
    are stored after the n movable points and never move.
    """

    def __init__(self, V: InteractionModel, spec: Optional[HamiltonianSpec], start: Configuration,
                 rng, beta: float = 1.0, proposal: str = "uniform", grid_points: int = 0):
        spec = spec or HamiltonianSpec.periodic()
        spec.check_model(V)
        w = start.window
        r = V.locality_radius
        if spec.is_periodic:
            w.check_radius(r)
        if len(start) != w.point_budget:
            raise ConfigError("chain start must hold exactly n points")
        self.V, self.spec, self.window = V, spec, w
        self.gen = _gen(rng)
        self.beta = float(beta)
        self.proposal = proposal
        self.grid_points = int(grid_points)
        self.n = w.point_budget
        if spec.is_periodic:
            bc = np.empty((0, w.dim))
            self.side = w.side
        else:
            bc = spec.boundary_in_annulus(w, r)
            self.side = embedding_side(w, r)
        self.pos = np.ascontiguousarray(np.vstack([start.points, bc]))
        self.conv = {PERIODIC: K.CONV_PERIODIC, BOUNDARY2: K.CONV_B2}.get(spec.convention, K.CONV_B1)
        self.P = V.kernel_params()
        self.g = K.grid_size(self.side, r, len(self.pos), w.dim)
        self.offsets = K.neighbor_offsets(self.g, w.dim)
        self.head, self.nxt, self.prv, self.cell_of = K.ll_build(self.pos, self.side, self.g)
        indptr, indices = CellIndex.build(self.pos, self.side, r).neighbor_csr(r)
        deg = np.diff(indptr)
        rows = np.repeat(np.arange(len(self.pos)), deg)
        bc_counts = np.bincount(rows[indices >= self.n], minlength=len(self.pos))
        self.cnt_bc = np.ascontiguousarray(bc_counts[: self.n], dtype=np.int64)
        self.cnt_win = np.ascontiguousarray(deg[: self.n] - self.cnt_bc, dtype=np.int64)
        H = hamiltonian(spec, V, start)
        if not math.isfinite(H):
            if isinstance(V, HardCore):
                raise InfeasibleStart("start configuration violates the hard core")
            raise NonFiniteEnergy("non-hard-core model produced an infinite energy")
        self._H = H - self.n * V.shift
        self.steps_done = 0
        self.accepted = 0

    @property
    def H(self) -> float:
        """Current energy, constant shift included."""
        return self._H + self.n * self.V.shift

    def configuration(self) -> Configuration:
        return Configuration(self.window, self.pos[: self.n].copy())

    def _proposals(self, k: int) -> np.ndarray:
        w = self.window
        if self.proposal == "grid":
            coords = grid_coordinates(w, self.grid_points)
            return np.ascontiguousarray(coords[self.gen.integers(0, self.grid_points, size=(k, w.dim))])
        return np.ascontiguousarray(uniform_points(w, k, self.gen))

    def run(self, steps: int, record_every: int = 0, trace_every: int = 0):
        """Advance ``steps`` proposals; returns (energies, positions) recorded along the way.

        Energies are recorded every ``record_every`` steps and positions every
        ``trace_every`` steps, counted from the start of this call.
        """
        steps = int(steps)
        rec = [] if record_every else None
        tr = [] if trace_every else None
        unit = math.lcm(record_every or 1, trace_every or 1)
        chunk = max(unit, (CHUNK_STEPS // unit) * unit)
        done = 0
        while done < steps:
            k = min(chunk, steps - done)
            idx = self.gen.integers(0, self.n, size=k)
            prop = self._proposals(k)
            unif = self.gen.random(k)
            n_rec = k // record_every if record_every else 0
            n_tr = k // trace_every if trace_every else 0
            rec_H = np.empty(n_rec)
            trace = np.empty((n_tr, self.n, self.window.dim))
            H, acc = K.mcmc_chunk(self.pos, self.n, self.side, self.P, self.conv, self.beta,
                                  self.g, self.offsets, self.head, self.nxt, self.prv, self.cell_of,
                                  self.cnt_win, self.cnt_bc, self._H, idx, prop, unif,
                                  record_every, rec_H, trace_every, trace)
            self._H = H
            self.accepted += acc
            self.steps_done += k
            done += k
            if rec is not None:
                rec.append(rec_H + self.n * self.V.shift)
            if tr is not None:
                tr.append(trace)
        energies = np.concatenate(rec) if rec is not None else None
        positions = np.concatenate(tr) if tr is not None else None
        return energies, positions

    def sweep(self, count: int = 1, record: bool = False):
        energies, _ = self.run(count * self.n, record_every=self.n if record else 0)
        return energies


def initial_configuration(V: InteractionModel, w: TorusWindow, gen, cfg: McmcConfig) -> Configuration:
    if isinstance(V, HardCore):
        V.check_intensity(w.intensity, w.dim)
        return Configuration(w, hardcore_start(w, V.R, gen))
    if cfg.proposal == "grid":
        m = cfg.grid_points
        if m ** w.dim < w.point_budget:
            raise InfeasibleStart("grid has fewer sites than points")
        flat = gen.choice(m ** w.dim, size=w.point_budget, replace=False)
        coords = grid_coordinates(w, m)
        idx = np.stack(np.unravel_index(flat, (m,) * w.dim), axis=1)
        return Configuration(w, coords[idx])
    return sample_binomial(w, gen)


def mcmc_chain(V, spec, w: TorusWindow, cfg: McmcConfig, rng, start: Optional[Configuration] = None):
    gen = _gen(rng)
    start = start or initial_configuration(V, w, gen, cfg)
    return MetropolisChain(V, spec, start, gen, beta=cfg.beta, proposal=cfg.proposal,
                           grid_points=cfg.grid_points)


def mcmc_canonical(V: InteractionModel, spec: Optional[HamiltonianSpec], w: TorusWindow,
                   cfg: McmcConfig, rng) -> list[Configuration]:
    """Retained samples of the canonical Gibbs process after burn-in, every ``thinning`` sweeps."""
    chain = mcmc_chain(V, spec, w, cfg, rng)
    chain.sweep(cfg.burn_in)
    out = []
    for _ in range(cfg.samples):
        chain.sweep(cfg.thinning)
        out.append(chain.configuration())
    return out


# ---------------------------------------------------------------------------
# resample coupling


@dataclass(frozen=True, eq=False)
class ResampleCoupling:
    """Base points X_i, marks U_i, fresh points X''_i; X'_i = X''_i exactly when U_i < epsilon."""

    base: Configuration
    marks: np.ndarray = field(repr=False)
    replacements: np.ndarray = field(repr=False)
    epsilon: float = 0.0

    def __post_init__(self):
        n = len(self.base)
        if self.marks.shape != (n,) or self.replacements.shape != self.base.points.shape:
            raise ConfigError("marks and replacements must match the base configuration")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")

    @property
    def replaced(self) -> np.ndarray:
        return self.marks < self.epsilon

    @property
    def partner_points(self) -> np.ndarray:
        return np.where(self.replaced[:, None], self.replacements, self.base.points)

    @property
    def partner(self) -> Configuration:
        return self.base.replace_points(self.partner_points)

    def dump_rows(self, dense: Optional[np.ndarray] = None) -> tuple[list[str], np.ndarray]:
        d = self.base.window.dim
        dense = np.zeros(len(self.base), dtype=bool) if dense is None else dense
        header = [f"x{a}" for a in range(d)] + ["u_mark", "replaced", "dense"]
        rows = np.column_stack([self.partner_points, self.marks, self.replaced, dense])
        return header, rows


def build_resample_coupling(base: Configuration, eps: float, rng) -> ResampleCoupling:
    w = base.window
    if len(base) != w.point_budget:
        raise ConfigError("base must hold exactly n points")
    if not 0.0 < eps < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)")
    gen = _gen(rng)
    marks = gen.random(len(base))
    repl = uniform_points(w, len(base), gen)
    return ResampleCoupling(base, marks, repl, float(eps))


@dataclass(frozen=True, eq=False)
class MoveContext:
    """Dense/sparse split of a base configuration and its sparse cubes."""

    consts: RConstants
    b: int
    dense: np.ndarray = field(repr=False)
    cubes: SparseCubeSet = field(repr=False)

    @property
    def N(self) -> int:
        return int(self.dense.sum())

    @property
    def s_n(self) -> int:
        return self.cubes.s_n


def move_context(base: Configuration, b: int, r: float, consts: Optional[RConstants] = None,
                 require_min_window: bool = True) -> MoveContext:
    consts = consts or constants_for(base.window, r)
    if consts.r != r:
        raise ConfigError("constants were derived for a different radius")
    if not b > consts.K_r:
        raise PreconditionViolated(f"need b > K_r = {consts.K_r}, got b = {b}")
    if require_min_window and base.window.point_budget < consts.n_r:
        raise PreconditionViolated(f"need n >= n_r = {consts.n_r}, got n = {base.window.point_budget}")
    cubes = sparse_cubes(base, consts, require_min_window=False)
    return MoveContext(consts, int(b), dense_mask(base, r, b), cubes)


def sample_conditioned_resample(base: Configuration, eps: float, ctx: MoveContext, rng) -> ResampleCoupling:
    """Draw the coupling conditionally on the move event.

    Dense marks are uniform on (0, eps), sparse marks uniform on [eps, 1);
    dense replacements go to a uniformly chosen injective assignment of small
    cubes Q_r(z), z sparse, uniformly inside each cube.  Sparse replacements
    are unconditioned uniform points.
    """
    gen = _gen(rng)
    w = base.window
    n, d = len(base), w.dim
    N = ctx.N
    if N > ctx.s_n:
        raise DensityExceedsCubes(f"{N} dense points but only {ctx.s_n} sparse cubes")
    u = gen.random(n)
    marks = np.where(ctx.dense, eps * u, eps + (1.0 - eps) * u)
    marks = np.where(ctx.dense & (marks >= eps), np.nextafter(eps, 0.0), marks)
    repl = uniform_points(w, n, gen)
    if N:
        r = ctx.consts.r
        chosen = gen.choice(ctx.s_n, size=N, replace=False)
        centers = ctx.cubes.centers[chosen]
        offs = gen.uniform(-0.5 * r, 0.5 * r, size=(N, d))
        repl[ctx.dense] = centers + offs
    return ResampleCoupling(base, marks, repl, float(eps))


@dataclass
class MoveEventReport:
    holds: bool
    clause_i: bool
    clause_ii: bool
    clause_iii: bool
    N: int
    s_n: int
    sparse_moved: int
    dense_kept: int
    dense_outside: int
    max_per_cube: int

    def failed_clauses(self) -> list[str]:
        return [name for name, ok in (("i", self.clause_i), ("ii", self.clause_ii),
                                      ("iii", self.clause_iii)) if not ok]


def detect_event_E_move(c: ResampleCoupling, b: int, r: float, consts: Optional[RConstants] = None,
                        require_min_window: bool = True, ctx: Optional[MoveContext] = None) -> MoveEventReport:
    """Decide the move event: sparse points kept, dense points moved into distinct small sparse cubes."""
    ctx = ctx or move_context(c.base, b, r, consts, require_min_window)
    moved = c.replaced
    dense = ctx.dense
    sparse_moved = int(np.count_nonzero(moved & ~dense))
    dense_kept = int(np.count_nonzero(dense & ~moved))
    cube = ctx.cubes.small_cube_of(c.replacements[dense]) if dense.any() else np.empty(0, np.int64)
    dense_outside = int(np.count_nonzero(cube < 0))
    hits = np.bincount(cube[cube >= 0], minlength=1) if len(cube) else np.zeros(1, np.int64)
    max_per_cube = int(hits.max()) if hits.size else 0
    clause_i = sparse_moved == 0
    clause_ii = dense_kept == 0 and dense_outside == 0
    clause_iii = max_per_cube <= 1
    return MoveEventReport(clause_i and clause_ii and clause_iii, clause_i, clause_ii, clause_iii,
                           ctx.N, ctx.s_n, sparse_moved, dense_kept, dense_outside, max_per_cube)


# ---------------------------------------------------------------------------
# thinning and sprinkling


@dataclass(frozen=True, eq=False)
class ThinSprinkleCoupling:
    """Poisson base with marks; points with U < delta are deleted and a Poisson(delta n) sprinkle is added."""

    base: Configuration
    marks: np.ndarray = field(repr=False)
    sprinkle: np.ndarray = field(repr=False)
    delta: float = 0.0

    @property
    def deleted(self) -> np.ndarray:
        return self.marks < self.delta

    @property
    def retained(self) -> Configuration:
        return self.base.replace_points(self.base.points[~self.deleted])

    @property
    def combined(self) -> Configuration:
        return self.base.replace_points(np.vstack([self.base.points[~self.deleted], self.sprinkle]))

    def dump_rows(self, dense: Optional[np.ndarray] = None):
        d = self.base.window.dim
        dense = np.zeros(len(self.base), dtype=bool) if dense is None else dense
        header = [f"x{a}" for a in range(d)] + ["u_mark", "replaced", "dense"]
        rows = np.column_stack([self.base.points, self.marks, self.deleted, dense])
        return header, rows


def build_thin_sprinkle(w: TorusWindow, delta: float, rng, base: Optional[Configuration] = None) -> ThinSprinkleCoupling:
    if not 0.0 <= delta < 1.0:
        raise ConfigError("delta must lie in [0, 1)")
    gen = _gen(rng)
    base = base if base is not None else sample_poisson(w, gen)
    marks = gen.random(len(base))
    m = int(gen.poisson(delta * w.intensity * w.volume))
    return ThinSprinkleCoupling(base, marks, uniform_points(w, m, gen), float(delta))


def violation_mask(omega: Configuration, R: float) -> np.ndarray:
    mask = np.zeros(len(omega), dtype=bool)
    mask[hc_violations(omega, R).ids] = True
    return mask


def detect_event_E_delete(c: ThinSprinkleCoupling, R: float) -> bool:
    """True iff exactly the base points with an R-neighbour are deleted."""
    bad = violation_mask(c.base, R)
    return bool(np.array_equal(c.deleted, bad))
