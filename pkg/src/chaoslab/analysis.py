"""Law-of-large-numbers exceedances, chaos sets, Wasserstein-1 distances and log-log rate fits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DegenerateFit, GridMismatch, LengthMismatch, OutOfDomain
from .kernels import KernelSpec, LipschitzEnvelope, RegularizedKernel, envelope_forces, interaction_forces
from .pde import GridDensity, InitialDensity, PdeSolution, step_convolution
from .stochastics import SeedSpec, sample_initial

# ---------------------------------------------------------------------------
# bounded test functions


@dataclass(frozen=True)
class StepFunction:
    """``h(x) = sum_k c_k 1_{[a_k, b_k]}(x)``."""

    pieces: tuple[tuple[float, float, float], ...] = ()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for a, b, c in self.pieces:
            out += c * ((x >= a) & (x <= b))
        return out

    @property
    def support(self) -> tuple[float, float]:
        if not self.pieces:
            return (0.0, 0.0)
        return (min(a for a, _, _ in self.pieces), max(b for _, b, _ in self.pieces))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted({p for a, b, _ in self.pieces for p in (a, b)}))

    @property
    def sup(self) -> float:
        pts = np.array(self.breakpoints) if self.pieces else np.zeros(1)
        mids = 0.5 * (pts[:-1] + pts[1:]) if pts.size > 1 else pts
        return float(np.max(np.abs(self(np.concatenate([pts, mids])))))

    @classmethod
    def from_kernel(cls, spec: KernelSpec) -> "StepFunction":
        pieces = spec.step_pieces()
        if pieces is None:
            raise ConfigError(f"kernel {spec} is not piecewise constant", "kernel.h")
        return cls(tuple(pieces))


@dataclass(frozen=True)
class BoundedFunction:
    """A vectorized bounded ``fn`` vanishing outside ``support``, smooth between ``breakpoints``."""

    fn: Callable
    support: tuple[float, float]
    breakpoints: tuple[float, ...] = ()
    sup: float = 1.0

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# law of large numbers

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def convolve_density(h, density: InitialDensity, z, max_panel: float = 0.125) -> np.ndarray:
    """``(h * u)(z) = int h(v) u(z - v) dv`` by panelwise Gauss-Legendre quadrature.

    Panels break at the discontinuities of ``h`` and of ``u(z - .)``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    hlo, hhi = h.support
    ulo, uhi = density.support()
    out = np.zeros_like(z)
    if hhi <= hlo:
        return out
    for k, zk in enumerate(z):
        lo, hi = max(hlo, zk - uhi), min(hhi, zk - ulo)
        if hi <= lo:
            continue
        cuts = [lo, hi] + [p for p in h.breakpoints if lo < p < hi]
        cuts += [zk - p for p in density.breakpoints() if lo < zk - p < hi]
        cuts = np.unique(cuts)
        edges = [cuts[0]]
        for a, b in zip(cuts[:-1], cuts[1:]):
            m = max(1, int(np.ceil((b - a) / max_panel)))
            edges.extend(np.linspace(a, b, m + 1)[1:])
        edges = np.asarray(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
        half = 0.5 * (edges[1:] - edges[:-1])[:, None]
        v = mid + half * _GL_X[None, :]
        out[k] = np.sum(half * _GL_W[None, :] * h(v) * density.pdf(zk - v))
    return out


@dataclass
class ConditionalMean:
    """Tabulated ``z -> (h * u)(z)`` on the support of ``u``, linear between nodes."""

    z: np.ndarray
    values: np.ndarray

    @classmethod
    def build(cls, h, density: InitialDensity, n_points: int = 4097) -> "ConditionalMean":
        lo, hi = density.support()
        kinks = [p + b for p in density.breakpoints() for b in h.breakpoints]
        z = np.union1d(np.linspace(lo, hi, n_points), [k for k in kinks if lo <= k <= hi])
        return cls(z, convolve_density(h, density, z))

    def __call__(self, x):
        return np.interp(x, self.z, self.values)


def pairwise_sums(h, Z: np.ndarray) -> np.ndarray:
    """``sum_{j != i} h(Z_i - Z_j)`` for every ``i``."""
    Z = np.asarray(Z, dtype=float)
    if isinstance(h, StepFunction):
        Zs = np.sort(Z)
        out = np.zeros_like(Z)
        for a, b, c in h.pieces:
            # Z_i - Z_j in [a, b]  <=>  Z_j in [Z_i - b, Z_i - a]
            cnt = np.searchsorted(Zs, Z - a, side="right") - np.searchsorted(Zs, Z - b, side="left")
            out += c * cnt
        return out - float(h(0.0))
    out = np.empty_like(Z)
    chunk = max(1, 2**22 // max(Z.size, 1))
    for s in range(0, Z.size, chunk):
        d = Z[s : s + chunk, None] - Z[None, :]
        vals = h(d)
        rows = np.arange(vals.shape[0])
        vals[rows, rows + s] = 0.0
        out[s : s + chunk] = vals.sum(axis=1)
    return out


def lln_deviation(h, Z: np.ndarray, cond: ConditionalMean) -> float:
    """``sup_i |H_i(Z) - E_(-i) H_i(Z)|`` with ``H_i = (1/N) sum_{j != i} h(Z_i - Z_j)``."""
    N = Z.size
    H = pairwise_sums(h, Z) / N
    E = (N - 1) / N * cond(Z)
    return float(np.max(np.abs(H - E)))


@dataclass
class LlnResult:
    N: int
    reps: int
    threshold: float
    devs: np.ndarray = field(repr=False)

    @property
    def exceedance_fraction(self) -> float:
        return float(np.mean(self.devs >= self.threshold))

    @property
    def exceedances(self) -> int:
        return int(np.sum(self.devs >= self.threshold))

    @property
    def median_dev(self) -> float:
        return float(np.median(self.devs))


def lln_exceedance(
    h,
    density: InitialDensity,
    N: int,
    alpha: float,
    delta: float,
    reps: int,
    seed: SeedSpec | int = 0,
    cond: ConditionalMean | None = None,
) -> LlnResult:
    """Monte Carlo estimate of ``P(sup_i |H_i - E_(-i) H_i| >= N^-(delta+alpha))``."""
    if not (alpha > 0 and delta > 0 and alpha + delta < 0.5):
        raise ConfigError(f"need alpha, delta > 0 and alpha + delta < 1/2, got {alpha} + {delta}", "delta")
    if N < 2:
        raise ConfigError("N must be >= 2", "N")
    master = seed.master_seed if isinstance(seed, SeedSpec) else int(seed)
    cond = ConditionalMean.build(h, density) if cond is None else cond
    devs = np.empty(reps)
    for r in range(reps):
        Z = sample_initial(density, N, SeedSpec(master, r))
        devs[r] = lln_deviation(h, Z, cond)
    return LlnResult(N, reps, N ** (-(delta + alpha)), devs)


# ---------------------------------------------------------------------------
# chaos sets


@dataclass
class ChaosSets:
    in_B1: bool
    in_B2: bool
    dev_K: float
    dev_L: float
    threshold: float


def chaos_sets(
    Y,
    rk: RegularizedKernel,
    env: LipschitzEnvelope,
    sol: PdeSolution,
    t: float,
    alpha: float,
    delta: float,
) -> ChaosSets:
    """Membership of mean-field positions ``Y`` (at time ``t``) in the good sets B1 and B2.

    B1: ``|K^eps(Y) - Kbar_t(Y)|_inf <= N^-(delta+alpha)``; B2: ``|L^eps(Y) - Lbar_t(Y)|_inf <= 1``.
    """
    if rk.eps != sol.rk.eps or env.eps != rk.eps:
        raise GridMismatch(f"cutoffs differ: kernel {rk.eps}, envelope {env.eps}, PDE {sol.rk.eps}")
    Y = np.asarray(Y, dtype=float)
    N = Y.size
    K = interaction_forces(rk, Y)
    Kbar = sol.drift_at(t, Y)
    L = envelope_forces(env, Y)
    pieces = env.pieces()
    Lbar = step_convolution(pieces, sol.density_at(t), Y) if pieces else np.zeros_like(Y)
    dK = float(np.max(np.abs(K - Kbar)))
    dL = float(np.max(np.abs(L - Lbar)))
    thr = N ** (-(delta + alpha))
    return ChaosSets(dK <= thr, dL <= 1.0, dK, dL, thr)


# ---------------------------------------------------------------------------
# Wasserstein-1


def wasserstein1_sorted(a, b) -> float:
    """W1 between two equal-size empirical measures via the monotone coupling."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"samples must be 1D of equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def wasserstein1_vs_density(sample, rho: GridDensity) -> float:
    """``int |F_emp - F_rho| dx`` with ``F_rho`` the piecewise-linear cdf of ``rho``.

    Exact: on each interval between consecutive cell edges and sample points the gap is linear.
    """
    s = np.sort(np.asarray(sample, dtype=float))
    lo, hi = rho.grid.x_min, rho.grid.x_max
    if s.size == 0:
        raise LengthMismatch("empty sample")
    if s[0] < lo or s[-1] > hi:
        raise OutOfDomain(f"sample outside grid [{lo}, {hi}]")
    e, cm = rho.cumulative()
    cm = cm / cm[-1]
    p = np.union1d(e, s)
    Femp = np.searchsorted(s, p[:-1], side="right") / s.size
    d0 = np.interp(p[:-1], e, cm) - Femp
    d1 = np.interp(p[1:], e, cm) - Femp
    w = np.diff(p)
    a0, a1 = np.abs(d0), np.abs(d1)
    same = d0 * d1 >= 0
    tot = np.where(a0 + a1 > 0, a0 + a1, 1.0)
    area = np.where(same, 0.5 * (a0 + a1) * w, 0.5 * w * (d0 * d0 + d1 * d1) / tot)
    return float(area.sum())


# ---------------------------------------------------------------------------
# rate fits


@dataclass
class RateFit:
    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    r2: float
    stderr: float
    censored: list = field(default_factory=list)

    def band(self, level: float = 0.95) -> tuple[float, float]:
        dof = self.x.size - 2
        if dof <= 0 or not np.isfinite(self.stderr):
            return (self.slope, self.slope)
        q = stats.t.ppf(0.5 + level / 2, dof)
        return (self.slope - q * self.stderr, self.slope + q * self.stderr)

    def to_dict(self) -> dict:
        lo, hi = self.band()
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "stderr": self.stderr,
            "slope_ci95": [lo, hi],
            "n_points": int(self.x.size),
            "censored_N": [float(n) for n in self.censored],
        }


def fit_rate(points: Sequence[tuple[float, float]], censor_zeros: bool = False) -> RateFit:
    """Least squares of ``log statistic`` on ``log N``.

    Zero statistics are dropped and listed in ``censored`` when ``censor_zeros`` is set;
    negative ones (or zeros otherwise) raise :class:`DegenerateFit`.
    """
    pts = [(float(n), float(s)) for n, s in points]
    censored = []
    keep = []
    for n, s in pts:
        if s < 0 or (s == 0 and not censor_zeros) or not np.isfinite(s):
            raise DegenerateFit(f"statistic {s} at N={n} cannot be log-transformed")
        if s == 0:
            censored.append(n)
        else:
            keep.append((n, s))
    if len(keep) < 3:
        raise DegenerateFit(f"need >= 3 positive points, have {len(keep)} (censored: {censored})")
    x = np.log([n for n, _ in keep])
    y = np.log([s for _, s in keep])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise DegenerateFit("all N are equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sst = float(np.sum((y - ym) ** 2))
    sse = float(np.sum(resid**2))
    r2 = 1.0 if sst == 0 else 1.0 - sse / sst
    dof = x.size - 2
    stderr = float(np.sqrt(sse / dof / sxx)) if dof > 0 else float("nan")
    return RateFit(x, y, slope, intercept, r2, stderr, censored)
