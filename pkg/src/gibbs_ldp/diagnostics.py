"""Dense points, sparse cubes, derived constants and the concentration bounds built on them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .errors import (
    ConfigError,
    DensityExceedsCubes,
    OutOfRegime,
    WindowTooSmall,
)
from .torus import Configuration, TorusWindow, unit_ball_volume


# ---------------------------------------------------------------------------
# dense points and hard-core violations


@dataclass(frozen=True, eq=False)
class DenseReport:
    radius: float
    b: int
    ids: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(len(self.ids))


def count_b_dense(omega: Configuration, rho: float, b: int) -> DenseReport:
    """Points whose closed periodic rho-ball holds at least b points, the point itself included."""
    if int(b) != b or b < 1:
        raise ConfigError(f"b must be a positive integer, got {b}")
    omega.window.check_radius(rho)
    if len(omega) == 0:
        return DenseReport(float(rho), int(b), np.empty(0, dtype=np.int64))
    occupancy = omega.neighbor_counts(rho) + 1
    return DenseReport(float(rho), int(b), np.flatnonzero(occupancy >= b))


def dense_mask(omega: Configuration, rho: float, b: int) -> np.ndarray:
    mask = np.zeros(len(omega), dtype=bool)
    mask[count_b_dense(omega, rho, b).ids] = True
    return mask


@dataclass(frozen=True, eq=False)
class HcViolationReport:
    R: float
    ids: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(len(self.ids))


def hc_violations(omega: Configuration, R: float) -> HcViolationReport:
    """Points having at least one other point within closed distance R."""
    omega.window.check_radius(R)
    if len(omega) == 0:
        return HcViolationReport(float(R), np.empty(0, dtype=np.int64))
    return HcViolationReport(float(R), np.flatnonzero(omega.neighbor_counts(R) >= 1))


# ---------------------------------------------------------------------------
# constants tied to a radius


@dataclass(frozen=True)
class RConstants:
    intensity: float
    dim: int
    r: float
    n_r: int
    K_r: int
    A_r: float
    overridden: bool = False

    @property
    def cube_side(self) -> float:
        return 6.0 * self.r


def _smallest_int_above(x: float) -> int:
    return int(math.floor(x)) + 1


def derive_r_constants(lam: float, d: int, r: float, n_r: Optional[int] = None,
                       K_r: Optional[int] = None) -> RConstants:
    """Minimal window size n_r, sparse-cube threshold K_r and sparse-cube rate A_r.

    ``n_r`` and ``K_r`` may be overridden upward; the override is recorded.
    """
    if not (r > 0 and lam > 0):
        raise ConfigError("need r > 0 and lambda > 0")
    n_min = _smallest_int_above(lam * (18.0 * r) ** d)
    if n_r is None:
        n_r = n_min
    elif n_r < n_min:
        raise ConfigError(f"n_r override {n_r} is below the minimal value {n_min}")
    spacing = lam ** (-1.0 / d) - 12.0 * r / n_r ** (1.0 / d)
    K_min = _smallest_int_above((6.0 * r / spacing) ** d)
    if K_r is None:
        K_r = K_min
    elif K_r < K_min:
        raise ConfigError(f"K_r override {K_r} is below the minimal value {K_min}")
    A_r = (spacing / (6.0 * r)) ** d - 1.0 / K_r
    assert A_r > 0, "sparse-cube rate must be positive"
    return RConstants(float(lam), int(d), float(r), int(n_r), int(K_r), float(A_r),
                      overridden=(n_r != n_min or K_r != K_min))


def constants_for(window: TorusWindow, r: float, **overrides) -> RConstants:
    return derive_r_constants(window.intensity, window.dim, r, **overrides)


# ---------------------------------------------------------------------------
# sparse cubes


@dataclass(frozen=True, eq=False)
class SparseCubeSet:
    """Interior cubes of side 6r on the grid 6r * Z^d with at most K_r - 1 points."""

    r: float
    K_r: int
    k_max: int
    grid_index: np.ndarray = field(repr=False)  # (s_n, d) integer grid coordinates
    occupancy: np.ndarray = field(repr=False)  # points per sparse cube
    interior_count: int = 0

    @property
    def s_n(self) -> int:
        return int(len(self.grid_index))

    @property
    def centers(self) -> np.ndarray:
        return self.grid_index * (6.0 * self.r)

    def lookup(self) -> dict:
        return {tuple(int(v) for v in k): i for i, k in enumerate(self.grid_index)}

    def small_cube_of(self, x: np.ndarray) -> np.ndarray:
        """Index into this set of the cube Q_r(z) holding each row of x, or -1."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        step = 6.0 * self.r
        k = np.floor(x / step + 0.5).astype(np.int64)
        rel = x - k * step
        inside = np.all((rel >= -0.5 * self.r) & (rel < 0.5 * self.r), axis=1)
        table = self.lookup()
        out = np.full(len(x), -1, dtype=np.int64)
        for i in np.flatnonzero(inside):
            out[i] = table.get(tuple(int(v) for v in k[i]), -1)
        return out


def interior_cube_radius(window: TorusWindow, r: float) -> int:
    """Largest k with the cube of side 6r centred at 6rk lying inside the window."""
    return int(math.floor((window.side - 6.0 * r) / (12.0 * r)))


def sparse_cubes(omega: Configuration, consts: RConstants, require_min_window: bool = True) -> SparseCubeSet:
    """Enumerate the sparse interior cubes of ``omega``.

    With ``require_min_window=False`` the n >= n_r check is skipped; only
    the existence of at least one interior cube is required then.
    """
    w = omega.window
    n = w.point_budget
    if require_min_window and n < consts.n_r:
        raise WindowTooSmall(f"need n >= n_r = {consts.n_r}, got n = {n}")
    r = consts.r
    k_max = interior_cube_radius(w, r)
    if k_max < 0:
        raise WindowTooSmall("window too small to hold a single interior cube of side 6r")
    d = w.dim
    m = 2 * k_max + 1
    counts = np.zeros((m,) * d, dtype=np.int64)
    if len(omega):
        k = np.floor((omega.points + 3.0 * r) / (6.0 * r)).astype(np.int64)
        inside = np.all(np.abs(k) <= k_max, axis=1)
        np.add.at(counts, tuple((k[inside] + k_max).T), 1)
    sparse = np.argwhere(counts <= consts.K_r - 1)
    occ = counts[tuple(sparse.T)] if len(sparse) else np.empty(0, dtype=np.int64)
    return SparseCubeSet(r, consts.K_r, k_max, (sparse - k_max).astype(np.int64), occ, m ** d)


# ---------------------------------------------------------------------------
# bounds


def event_E_log_bound(N: int, s_n: int, eps: float, n: int, r: float, lam: float, d: int) -> float:
    """Log of the lower bound (1-eps)^n eps^N (lam r^d (s_n - N) / n)^N."""
    if N >= s_n:
        raise DensityExceedsCubes(f"need N < s_n, got N = {N}, s_n = {s_n}")
    out = n * math.log1p(-eps)
    if N:
        out += N * math.log(eps) + N * math.log(lam * r ** d * (s_n - N) / n)
    return out


def event_E_probability_bound(N: int, s_n: int, eps: float, n: int, r: float, lam: float, d: int) -> float:
    return math.exp(event_E_log_bound(N, s_n, eps, n, r, lam, d))


def event_E_log_probability(N: int, s_n: int, eps: float, n: int, r: float, lam: float, d: int) -> float:
    """Exact log P(E | base): marks times the ordered choice of distinct small cubes."""
    if N > s_n:
        return -math.inf
    out = (n - N) * math.log1p(-eps)
    for k in range(N):
        out += math.log(eps) + math.log(lam * r ** d * (s_n - k) / n)
    return out


def binomial_tail_bound(n_trials: int, p: float, k: float) -> float:
    """exp(-(k/2) log(k / (n_trials p))), an upper bound on P(Bin(n_trials, p) >= k)."""
    mean = n_trials * p
    if k < math.e ** 2 * mean:
        raise OutOfRegime(f"bound needs k >= e^2 * n * p = {math.e ** 2 * mean:.6g}, got k = {k}")
    if k <= 0:
        return 1.0
    if mean == 0:
        return 0.0
    return math.exp(-0.5 * k * math.log(k / mean))


def binomial_tail_exact(n_trials: int, p: float, k: float) -> float:
    """P(Bin(n_trials, p) >= k)."""
    from scipy.stats import binom

    kk = math.ceil(k)
    if kk <= 0:
        return 1.0
    return float(binom.sf(kk - 1, n_trials, p))


def a_r_eps(r: float, eps: float, lam: float, d: int) -> float:
    return 1.5 * r ** d * unit_ball_volume(d) * lam * eps * (1.0 + 0.5 * eps)


def p_eps(r: float, eps: float, lam: float, d: int) -> float:
    return eps * lam * r ** d * unit_ball_volume(d)


def boundary_mask(omega: Configuration, r: float) -> np.ndarray:
    w = omega.window
    w.check_radius(r)
    if len(omega) == 0:
        return np.zeros(0, dtype=bool)
    return np.any(np.abs(omega.points) >= w.half - r, axis=1)


def boundary_count(omega: Configuration, r: float) -> int:
    """Points within distance r of the window's faces."""
    return int(np.count_nonzero(boundary_mask(omega, r)))


def boundary_fraction(n: int, lam: float, d: int, r: float) -> float:
    return 1.0 - (1.0 - 2.0 * r * (lam / n) ** (1.0 / d)) ** d


def stirling_log_prob(n: int, lam: float = 1.0) -> tuple[float, float]:
    """log P(Poisson(n) = n) and its normalized value (lam/n) * log P."""
    if int(n) != n or n < 1:
        raise ConfigError("n must be a positive integer")
    logp = -n + n * math.log(n) - float(gammaln(n + 1))
    return logp, lam / n * logp


def stirling_approx(n: int, lam: float = 1.0) -> float:
    """Leading-order normalized value -lam * log(2 pi n) / (2n)."""
    return -lam * math.log(2.0 * math.pi * n) / (2.0 * n)


# ---------------------------------------------------------------------------
# reports


@dataclass
class DiagnosticReport:
    n: int
    lam: float
    d: int
    r: float
    b: int
    N_r: int
    N_2r: Optional[int]
    s_n: int
    A_r: float
    K_r: int
    n_r: int
    bound_log: Optional[float]
    event_E: Optional[bool]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def diagnostic_report(omega: Configuration, r: float, b: int, eps: float,
                      consts: Optional[RConstants] = None, event_E: Optional[bool] = None,
                      require_min_window: bool = True) -> DiagnosticReport:
    w = omega.window
    consts = consts or constants_for(w, r)
    N_r = count_b_dense(omega, r, b).count
    N_2r = count_b_dense(omega, 2 * r, b).count if 4 * r < w.side else None
    s_n = sparse_cubes(omega, consts, require_min_window).s_n
    bound = (event_E_log_bound(N_r, s_n, eps, w.point_budget, r, w.intensity, w.dim)
             if N_r < s_n else None)
    return DiagnosticReport(w.point_budget, w.intensity, w.dim, r, int(b), N_r, N_2r, s_n,
                            consts.A_r, consts.K_r, consts.n_r, bound, event_E)


# ---------------------------------------------------------------------------
# trajectory bounds for the move coupling


@dataclass
class TrajectoryCheck:
    N_r: int
    N_2r: int
    clause_i: Optional[bool]
    diff_i: float
    bound_i: float
    clause_ii: Optional[bool]
    lhs_ii: float
    bound_ii: float
    partner_dense: int

    @property
    def passed(self) -> bool:
        return self.clause_i is not False and self.clause_ii is not False and self.partner_dense == 0

    @property
    def slack_i(self) -> float:
        return self.bound_i - self.diff_i

    @property
    def slack_ii(self) -> float:
        return self.lhs_ii - self.bound_ii


def _energy_sum(h, omega: Configuration) -> float:
    from .models import local_energies

    return math.fsum(local_energies(h, omega).tolist())


def trajectory_bound_check(c, h, consts: RConstants, b: int, require_min_window: bool = True,
                           ctx=None) -> TrajectoryCheck:
    """Evaluate both sides of the two trajectory inequalities for a coupling on the move event.

    Clause (i) uses the declared bound of ``h``; an unbounded ``h`` is
    replaced by its truncation at M_b, which is bounded by M_b.  Clause (ii)
    applies to nonnegative increasing cardinality-bounded ``h`` and compares
    truncations at M_b.  A clause that does not apply is reported as None.
    """
    from .errors import EventNotSatisfied
    from .samplers import detect_event_E_move

    r = consts.r
    if h.locality_radius > r:
        raise ConfigError("h must be local with the radius the constants were derived for")
    report = detect_event_E_move(c, b, r, consts, require_min_window, ctx=ctx)
    if not report.holds:
        raise EventNotSatisfied(f"move event fails clause(s) {report.failed_clauses()}")
    base, partner = c.base, c.partner
    N_r = count_b_dense(base, r, b).count
    N_2r = count_b_dense(base, 2 * r, b).count
    K_r = consts.K_r
    M_b = h.cardinality_bound(b)

    clause_i, diff_i, bound_i = None, 0.0, math.inf
    bound_c = h.bounded_by
    h_i = h
    if bound_c is None and M_b is not None:
        h_i, bound_c = h.truncated(M_b), M_b
    if bound_c is not None:
        diff_i = abs(_energy_sum(h_i, base) - _energy_sum(h_i, partner))
        bound_i = 2.0 * bound_c * (K_r + 1) * N_2r
        clause_i = diff_i <= bound_i

    clause_ii, lhs_ii, bound_ii = None, 0.0, -math.inf
    M_K = h.cardinality_bound(K_r)
    if h.is_increasing and M_b is not None and M_K is not None:
        hM = h.truncated(M_b)
        lhs_ii = _energy_sum(hM, base) - _energy_sum(hM, partner)
        bound_ii = -M_K * K_r * N_r
        clause_ii = lhs_ii >= bound_ii

    partner_dense = count_b_dense(partner, r, b).count
    return TrajectoryCheck(N_r, N_2r, clause_i, diff_i, bound_i, clause_ii, lhs_ii, bound_ii, partner_dense)
