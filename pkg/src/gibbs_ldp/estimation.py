"""Finite-n Monte Carlo estimates: log partition functions, tail log-probabilities and their ladders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .diagnostics import boundary_count, stirling_log_prob
from .errors import AllZeroWeights, ConfigError, InvariantViolation, NonFiniteEnergy, ZeroHits
from .models import (
    HamiltonianSpec,
    HardCore,
    InteractionModel,
    LocalFunction,
    focal_values,
    hamiltonian,
    score_average,
)
from .samplers import (
    McmcConfig,
    RngStream,
    _gen,
    map_replicas,
    mcmc_chain,
    uniform_points,
)
from .torus import Configuration, TorusWindow

DEFAULT_REPLICAS = 16
BATCH = 1 << 15
BRUTE_MAX_N = 64


@dataclass
class Estimate:
    """A point estimate with its standard error; ``normalized`` is the (lambda/n)-scaled value."""

    value: float
    std_error: float
    n_samples: int
    method: str
    normalized: float = math.nan
    normalized_std_error: float = math.nan
    extra: dict = field(default_factory=dict)


def _streams(rng, replicas: int) -> list[RngStream]:
    if isinstance(rng, RngStream):
        return [rng.child(k) for k in range(replicas)]
    base = int(_gen(rng).integers(0, 2**63 - 1))
    return [RngStream(base, k) for k in range(replicas)]


def _is_trivial(V: Optional[InteractionModel]) -> bool:
    return V is None or (V.bounded_by == 0.0 and V.shift == 0.0)


def _normalize(est: Estimate, w: TorusWindow) -> Estimate:
    scale = w.intensity / w.point_budget
    est.normalized = scale * est.value
    est.normalized_std_error = scale * est.std_error
    return est


def sample_energies(V: InteractionModel, spec: Optional[HamiltonianSpec], w: TorusWindow,
                    count: int, gen: np.random.Generator) -> np.ndarray:
    """Energies of ``count`` independent binomial configurations."""
    spec = spec or HamiltonianSpec.periodic()
    n, d = w.point_budget, w.dim
    out = np.empty(count)
    if spec.is_periodic and n <= BRUTE_MAX_N:
        w.check_radius(V.locality_radius)
        P = V.kernel_params()
        done = 0
        while done < count:
            k = min(BATCH, count - done)
            batch = uniform_points(w, k * n, gen).reshape(k, n, d)
            out[done:done + k] = K.batch_energy(batch, w.side, P) + n * V.shift
            done += k
        return out
    for s in range(count):
        out[s] = hamiltonian(spec, V, Configuration(w, uniform_points(w, n, gen)))
    return out


def estimate_log_partition_naive(V: InteractionModel, spec: Optional[HamiltonianSpec], w: TorusWindow,
                                 samples: int, rng, replicas: int = DEFAULT_REPLICAS) -> Estimate:
    """log of the binomial average of exp(-H), with a between-replica delta-method error."""
    if samples < 1000:
        raise ConfigError("the naive estimator needs at least 1000 samples")
    if isinstance(V, HardCore):
        V.check_intensity(w.intensity, w.dim)
    replicas = max(1, min(replicas, samples))
    sizes = [samples // replicas + (1 if k < samples % replicas else 0) for k in range(replicas)]
    streams = _streams(rng, replicas)

    def run(k):
        H = sample_energies(V, spec, w, sizes[k], streams[k].generator)
        weights = np.where(np.isinf(H), 0.0, np.exp(-np.where(np.isinf(H), 0.0, H)))
        return weights.mean(), np.count_nonzero(weights)

    res = map_replicas(run, list(range(replicas)))
    means = np.array([m for m, _ in res])
    nonzero = int(sum(c for _, c in res))
    if nonzero == 0:
        raise AllZeroWeights("every sampled configuration had infinite energy")
    mean = float(np.dot(means, sizes) / samples)
    se_mean = float(means.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else math.nan
    est = Estimate(math.log(mean), se_mean / mean, samples, "naive",
                   extra={"mean_weight": mean, "acceptance": nonzero / samples, "replicas": replicas})
    return _with_poisson_reference(_normalize(_check_sign(est, V), w), w)


def _check_sign(est: Estimate, V: InteractionModel) -> Estimate:
    # weights exp(-H) <= 1 whenever V >= 0
    if V.is_nonnegative and est.value > 0.0:
        raise InvariantViolation(f"positive log partition estimate {est.value} for a nonnegative interaction")
    return est


def _with_poisson_reference(est: Estimate, w: TorusWindow) -> Estimate:
    logp, _ = stirling_log_prob(w.point_budget, w.intensity)
    est.extra["log_Z_poisson_ref"] = est.value + logp
    est.extra["normalized_log_Z_poisson_ref"] = w.intensity / w.point_budget * (est.value + logp)
    return est


def chebyshev_lobatto(nodes: int) -> np.ndarray:
    """Chebyshev extreme points mapped to [0, 1], ascending; nested under doubling of intervals."""
    if nodes < 2:
        raise ConfigError("a beta grid needs at least 2 nodes")
    k = np.arange(nodes)
    return np.sort(0.5 * (1.0 - np.cos(np.pi * k / (nodes - 1))))


def _trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def estimate_log_partition_ti(V: InteractionModel, spec: Optional[HamiltonianSpec], w: TorusWindow,
                              beta_grid: Optional[Sequence[float]], cfg: McmcConfig, rng,
                              replicas: int = DEFAULT_REPLICAS) -> Estimate:
    """Thermodynamic integration: log Z = -int_0^1 E_beta[H] d beta.

    Each replica anneals through the grid in increasing beta, spending
    ``burn_in`` sweeps at every node and then recording H after each of
    ``samples * thinning`` sweeps.
    """
    if isinstance(V, HardCore):
        raise NonFiniteEnergy("thermodynamic integration needs a finite-valued interaction")
    betas = chebyshev_lobatto(21) if beta_grid is None else np.asarray(sorted(beta_grid), dtype=float)
    if betas[0] != 0.0 or betas[-1] != 1.0:
        raise ConfigError("beta grid must contain 0 and 1")
    streams = _streams(rng, replicas)
    sweeps = cfg.samples * cfg.thinning

    def run(k):
        gen = streams[k].generator
        chain = mcmc_chain(V, spec, w, cfg, gen)
        means = np.empty(len(betas))
        for j, beta in enumerate(betas):
            chain.beta = float(beta)
            chain.sweep(cfg.burn_in)
            means[j] = chain.sweep(sweeps, record=True).mean()
        return means

    curves = np.array(map_replicas(run, list(range(replicas))))
    mean_curve = curves.mean(axis=0)
    per_rep = np.array([-_trapezoid(betas, c) for c in curves])
    value = float(per_rep.mean())
    se = float(per_rep.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else math.nan
    quad = math.nan
    if len(betas) >= 5 and len(betas) % 2 == 1:
        coarse = -_trapezoid(betas[::2], mean_curve[::2])
        quad = abs(value - coarse)
    est = Estimate(value, se, replicas * sweeps * len(betas), "ti",
                   extra={"betas": betas.tolist(), "mean_energy": mean_curve.tolist(),
                          "quadrature_error": quad, "replicas": replicas})
    return _with_poisson_reference(_normalize(_check_sign(est, V), w), w)


# ---------------------------------------------------------------------------
# tails

_DIRECTIONS = {
    "<=": np.less_equal,
    "<": np.less,
    ">": np.greater,
    ">=": np.greater_equal,
}


def tail_hits(values: np.ndarray, a: Sequence[float], direction: str) -> np.ndarray:
    """Rows of ``values`` (samples x scores) lying in the tail region, componentwise."""
    if direction not in _DIRECTIONS:
        raise ConfigError(f"unknown tail direction {direction!r}")
    a = np.asarray(a, dtype=float)
    values = np.atleast_2d(values)
    if values.shape[1] != a.size:
        raise ConfigError("threshold vector length must match the number of scores")
    return np.all(_DIRECTIONS[direction](values, a), axis=1)


def wilson_interval(hits: int, total: int, z: float = 1.0) -> tuple[float, float]:
    p = hits / total
    denom = 1.0 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return max(centre - half, 0.0), min(centre + half, 1.0)


def sample_scores(V: Optional[InteractionModel], spec: Optional[HamiltonianSpec], xi, w: TorusWindow,
                  samples: int, rng, cfg: Optional[McmcConfig] = None,
                  replicas: int = DEFAULT_REPLICAS) -> np.ndarray:
    """Score averages (samples x scores) under the canonical Gibbs process."""
    scores = [xi] if isinstance(xi, LocalFunction) else list(xi)
    replicas = max(1, min(replicas, samples))
    sizes = [samples // replicas + (1 if k < samples % replicas else 0) for k in range(replicas)]
    streams = _streams(rng, replicas)
    trivial = _is_trivial(V)
    cfg = cfg or McmcConfig()

    def run(k):
        gen = streams[k].generator
        out = np.empty((sizes[k], len(scores)))
        if trivial:
            for s in range(sizes[k]):
                omega = Configuration(w, uniform_points(w, w.point_budget, gen))
                out[s] = score_average(scores, omega)
            return out
        chain = mcmc_chain(V, spec, w, cfg, gen)
        chain.sweep(cfg.burn_in)
        for s in range(sizes[k]):
            chain.sweep(cfg.thinning)
            out[s] = score_average(scores, chain.configuration())
        return out

    return np.vstack(map_replicas(run, list(range(replicas))))


def estimate_tail_logprob(V: Optional[InteractionModel], spec: Optional[HamiltonianSpec], xi,
                          a: Sequence[float], direction: str, w: TorusWindow, samples: int, rng,
                          cfg: Optional[McmcConfig] = None, replicas: int = DEFAULT_REPLICAS,
                          values: Optional[np.ndarray] = None) -> Estimate:
    """(lambda/n) log of the empirical frequency of the tail event, with a Wilson-interval error."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if values is None:
        values = sample_scores(V, spec, xi, w, samples, rng, cfg, replicas)
    hits_mask = tail_hits(values, a, direction)
    hits = int(hits_mask.sum())
    total = len(values)
    if hits == 0:
        raise ZeroHits(f"no sample out of {total} fell in the tail region; the event is too rare")
    p = hits / total
    lo, hi = wilson_interval(hits, total)
    se = 0.5 * (math.log(hi) - math.log(lo)) if lo > 0 else math.inf
    method = "binomial" if _is_trivial(V) else "mcmc"
    est = Estimate(math.log(p), se, total, method, extra={"hits": hits, "frequency": p})
    return _normalize(est, w)


# ---------------------------------------------------------------------------
# ladders


@dataclass
class ConvergenceProfile:
    task: str
    entries: list  # (n, Estimate)

    def __post_init__(self):
        ns = [n for n, _ in self.entries]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("the n ladder must be strictly increasing")

    @property
    def ladder(self) -> list[int]:
        return [n for n, _ in self.entries]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.normalized for _, e in self.entries])

    @property
    def differences(self) -> np.ndarray:
        return np.diff(self.values)

    def cauchy_statistic(self, rungs: int = 3) -> float:
        """Largest |successive difference| among the last ``rungs`` rungs."""
        diffs = np.abs(self.differences[-(rungs - 1):])
        return float(diffs.max()) if diffs.size else 0.0

    def shrinking(self, rungs: int = 3) -> bool:
        diffs = np.abs(self.differences[-(rungs - 1):])
        return bool(np.all(diffs[1:] < diffs[:-1]))

    def rows(self) -> list[tuple]:
        return [(n, e.normalized, e.normalized_std_error, e.n_samples, e.method) for n, e in self.entries]


def doubling_ladder(lo: int = 8, hi: int = 4096) -> list[int]:
    out = []
    n = lo
    while n <= hi:
        out.append(n)
        n *= 2
    return out


def convergence_profile(task: str, n_ladder: Sequence[int], lam: float, d: int, rng,
                        V: Optional[InteractionModel] = None, spec: Optional[HamiltonianSpec] = None,
                        method: str = "auto", samples: int = 10**5, cfg: Optional[McmcConfig] = None,
                        beta_grid=None, replicas: int = DEFAULT_REPLICAS, xi=None, a=None,
                        direction: str = "<=", max_n: int = 4096,
                        rung_configs: Optional[dict] = None) -> ConvergenceProfile:
    """Estimates along an n ladder sharing the model, intensity and dimension.

    ``rung_configs`` maps selected n to their own MCMC schedule, e.g. to
    spend more sweeps on the rungs whose differences are being compared.
    """
    ladder = [int(n) for n in n_ladder]
    if max(ladder) > max_n:
        raise ConfigError(f"ladder exceeds the resource budget max n = {max_n}")
    root = rng if isinstance(rng, RngStream) else RngStream(int(_gen(rng).integers(0, 2**63 - 1)))
    entries = []
    for i, n in enumerate(ladder):
        w = TorusWindow(d, lam, n)
        sub = root.child(i)
        if task == "stirling":
            logp, norm = stirling_log_prob(n, lam)
            est = Estimate(logp, 0.0, 0, "exact", norm, 0.0)
        elif task == "partition":
            m = method
            if m == "auto":
                m = "naive" if isinstance(V, HardCore) or _is_trivial(V) else "ti"
            if m == "naive":
                est = estimate_log_partition_naive(V, spec, w, samples, sub, replicas)
            else:
                rung_cfg = (rung_configs or {}).get(n, cfg or McmcConfig())
                est = estimate_log_partition_ti(V, spec, w, beta_grid, rung_cfg, sub, replicas)
        elif task == "tail":
            est = estimate_tail_logprob(V, spec, xi, a, direction, w, samples, sub, cfg, replicas)
        else:
            raise ConfigError(f"unknown profile task {task!r}")
        entries.append((n, est))
    return ConvergenceProfile(task, entries)


# ---------------------------------------------------------------------------
# boundary-condition Hamiltonians


@dataclass
class VariantGapSummary:
    samples: int
    restricted: int
    eps: float
    cap_constant: Optional[float]
    max_gap1: float
    max_gap2: float
    violations1: int
    violations2: int
    sharp_violations: int

    @property
    def ok(self) -> bool:
        return self.violations1 == 0 and self.violations2 == 0 and self.sharp_violations == 0


def sample_annulus_poisson(w: TorusWindow, width: float, rng, intensity: Optional[float] = None) -> np.ndarray:
    """Poisson points in the box of half-side w/2 + width, outside the window."""
    gen = _gen(rng)
    lam = w.intensity if intensity is None else intensity
    half = w.half + width
    count = int(gen.poisson(lam * (2 * half) ** w.dim))
    pts = gen.uniform(-half, half, size=(count, w.dim))
    inside = np.all((pts >= -w.half) & (pts < w.half), axis=1)
    return pts[~inside]


def hamiltonian_variant_gap(V: InteractionModel, bc_points: np.ndarray, w: TorusWindow, samples: int,
                            rng, eps: float = 0.2) -> VariantGapSummary:
    """Compare periodic and boundary-condition energies on binomial samples with few boundary points.

    The constant c is the declared bound of V when it has one; otherwise the
    largest |V| term met in the three energies of that sample.
    """
    gen = _gen(rng)
    spec1 = HamiltonianSpec.boundary1(bc_points)
    spec2 = HamiltonianSpec.boundary2(bc_points)
    spec1.check_model(V)
    r = V.locality_radius
    n = w.point_budget
    declared = V.bounded_by
    restricted = 0
    max1 = max2 = 0.0
    v1 = v2 = sharp = 0
    cap_seen = declared
    for _ in range(samples):
        omega = Configuration(w, uniform_points(w, n, gen))
        count = boundary_count(omega, r)
        if count > n * eps:
            continue
        restricted += 1
        per, _ = focal_values(V, omega)
        b1, bc_only = focal_values(V, omega, spec1)
        H = math.fsum(per.tolist())
        H1 = math.fsum(b1.tolist())
        H2 = H1 + math.fsum(bc_only.tolist())
        c = declared
        if c is None:
            c = float(max(np.abs(per).max(), np.abs(b1).max(), np.abs(bc_only).max(), 0.0))
            cap_seen = c if cap_seen is None else max(cap_seen, c)
        g1, g2 = abs(H - H1), abs(H - H2)
        max1, max2 = max(max1, g1), max(max2, g2)
        tol = 1e-9 * (1.0 + abs(H))
        v1 += g1 > 2 * c * n * eps + tol
        v2 += g2 > 3 * c * n * eps + tol
        sharp += (g1 > 2 * c * count + tol) or (g2 > 3 * c * count + tol)
    return VariantGapSummary(samples, restricted, eps, cap_seen, max1, max2, int(v1), int(v2), int(sharp))
