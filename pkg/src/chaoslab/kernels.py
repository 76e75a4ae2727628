"""Bounded interaction kernels, their C^2 regularizations and local Lipschitz envelopes.

Two kernel families are supported:

* bounded confidence (``bcm``): ``k(x) = 1_{[0,R]}(|x|) h(x)`` with ``h`` a polynomial,
* uniform (``uniform``): ``k(x) = -1_{[-R,0]}(x) + 1_{[0,R]}(x)``.

The regularization replaces each indicator by a smooth plateau function built from the
quintic smoothstep, with ramps of half-width ``2*eps`` centred on the jumps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError

BCM = "bcm"
UNIFORM = "uniform"

_H_ALIASES = {"one": (1.0,), "linear": (0.0, 1.0), "zero": (0.0,)}


def smoothstep(t):
    """Quintic smoothstep ``t^3 (10 - 15 t + 6 t^2)`` on ``t`` already clipped to [0, 1]."""
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def smoothstep_prime(t):
    return 30.0 * t * t * (1.0 - t) * (1.0 - t)


def _poly_eval(coeffs, x):
    out = np.zeros_like(np.asarray(x, dtype=float))
    for c in reversed(coeffs):
        out = out * x + c
    return out


def _poly_absmax(coeffs, lo: float, hi: float) -> float:
    """max |p| on [lo, hi] from endpoints and real critical points."""
    cands = [lo, hi]
    der = np.polynomial.polynomial.polyder(np.asarray(coeffs, dtype=float))
    if der.size and np.any(der != 0):
        for r in np.polynomial.polynomial.polyroots(der):
            if abs(r.imag) < 1e-12 and lo <= r.real <= hi:
                cands.append(r.real)
    return float(np.max(np.abs(_poly_eval(coeffs, np.asarray(cands)))))


@dataclass(frozen=True)
class Mollifier:
    """Smooth approximation of ``1_{[a,b]}`` with ramps on ``[a-2eps, a+2eps]`` and ``[b-2eps, b+2eps]``."""

    a: float
    b: float
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}", "eps")
        if not self.b - self.a > 4 * self.eps:
            raise ConfigError(
                f"ramps overlap: need b - a > 4*eps, got b - a = {self.b - self.a}, eps = {self.eps}",
                "eps",
            )

    def _ts(self, x):
        w = 4.0 * self.eps
        x = np.asarray(x, dtype=float)
        t1 = np.clip((x - self.a + 2.0 * self.eps) / w, 0.0, 1.0)
        t2 = np.clip((x - self.b + 2.0 * self.eps) / w, 0.0, 1.0)
        return t1, t2

    def __call__(self, x):
        t1, t2 = self._ts(x)
        return smoothstep(t1) * (1.0 - smoothstep(t2))

    def derivative(self, x):
        t1, t2 = self._ts(x)
        w = 4.0 * self.eps
        return smoothstep_prime(t1) / w * (1.0 - smoothstep(t2)) - smoothstep(t1) * smoothstep_prime(t2) / w


def eval_mollifier(m: Mollifier, x):
    return m(x)


@dataclass(frozen=True)
class KernelSpec:
    """An unregularized bounded kernel.

    ``h`` holds ascending polynomial coefficients and is ignored for the uniform kernel.
    """

    kind: str
    R: float
    h: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.kind not in (BCM, UNIFORM):
            raise ConfigError(f"unknown kernel kind {self.kind!r}", "kernel.kind")
        if not self.R > 0:
            raise ConfigError(f"R must be positive, got {self.R}", "kernel.R")
        object.__setattr__(self, "h", tuple(float(c) for c in self.h))
        if self.kind == BCM and len(self.h) == 0:
            raise ConfigError("h needs at least one coefficient", "kernel.h")

    @classmethod
    def bcm(cls, R: float = 1.0, h="one") -> "KernelSpec":
        if isinstance(h, str):
            if h not in _H_ALIASES:
                raise ConfigError(f"unknown h {h!r}; use one of {sorted(_H_ALIASES)} or coefficients", "kernel.h")
            h = _H_ALIASES[h]
        return cls(BCM, R, tuple(h))

    @classmethod
    def uniform(cls, R: float = 1.0) -> "KernelSpec":
        return cls(UNIFORM, R, ())

    @classmethod
    def zero(cls, R: float = 1.0) -> "KernelSpec":
        return cls(BCM, R, (0.0,))

    @property
    def is_zero(self) -> bool:
        return self.kind == BCM and all(c == 0.0 for c in self.h)

    @property
    def norm_inf(self) -> float:
        if self.kind == UNIFORM:
            return 1.0
        return _poly_absmax(self.h, -self.R, self.R)

    @property
    def discontinuities(self) -> tuple[float, ...]:
        if self.kind == UNIFORM:
            return (-self.R, 0.0, self.R)
        return (-self.R, self.R)

    def __call__(self, x):
        return eval_kernel(self, x)

    def step_pieces(self):
        """``(a, b, value)`` triples if the kernel is a finite sum of closed-interval indicators."""
        if self.kind == UNIFORM:
            return ((-self.R, 0.0, -1.0), (0.0, self.R, 1.0))
        if all(c == 0.0 for c in self.h[1:]):
            return ((-self.R, self.R, self.h[0]),) if self.h[0] != 0.0 else ()
        return None


def eval_kernel(spec: KernelSpec, x):
    x = np.asarray(x, dtype=float)
    if spec.kind == UNIFORM:
        left = ((x >= -spec.R) & (x <= 0.0)).astype(float)
        right = ((x >= 0.0) & (x <= spec.R)).astype(float)
        return right - left
    inside = (np.abs(x) <= spec.R).astype(float)
    return inside * _poly_eval(spec.h, x)


@dataclass(frozen=True)
class RegularizedKernel:
    """``k^eps`` built from ``base`` with cutoff ``eps``; ``lip_const`` scales its envelope."""

    base: KernelSpec
    eps: float
    lip_const: float = 1.0
    window: float = 3.0
    _parts: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.base.kind == UNIFORM:
            parts = (Mollifier(-self.base.R, 0.0, self.eps), Mollifier(0.0, self.base.R, self.eps))
        else:
            parts = (Mollifier(-self.base.R, self.base.R, self.eps),)
        object.__setattr__(self, "_parts", parts)

    def __call__(self, x):
        return eval_regularized(self, x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.base.kind == UNIFORM:
            left, right = self._parts
            return right.derivative(x) - left.derivative(x)
        (psi,) = self._parts
        h = self.base.h
        dh = np.polynomial.polynomial.polyder(np.asarray(h)) if len(h) > 1 else (0.0,)
        return psi.derivative(x) * _poly_eval(h, x) + psi(x) * _poly_eval(tuple(dh), x)

    @property
    def norm_bound(self) -> float:
        """Upper bound on ``sup |k^eps|``."""
        if self.base.kind == UNIFORM:
            return 1.0
        r = self.base.R + 2.0 * self.eps
        return _poly_absmax(self.base.h, -r, r)

    def envelope(self, C: float | None = None) -> "LipschitzEnvelope":
        c = self.lip_const if C is None else C
        if self.base.is_zero:
            c = 0.0
        return LipschitzEnvelope(self.eps, self.base.kind, self.base.R, c, self.window)

    def with_lip_const(self, C: float) -> "RegularizedKernel":
        return dataclasses.replace(self, lip_const=float(C))

    def numba_args(self):
        kind = 1 if self.base.kind == UNIFORM else 0
        coeffs = np.asarray(self.base.h if self.base.h else (0.0,), dtype=float)
        return kind, float(self.base.R), float(self.eps), coeffs


def eval_regularized(rk: RegularizedKernel, x):
    x = np.asarray(x, dtype=float)
    if rk.base.kind == UNIFORM:
        left, right = rk._parts
        return right(x) - left(x)
    (psi,) = rk._parts
    return psi(x) * _poly_eval(rk.base.h, x)


@dataclass(frozen=True)
class LipschitzEnvelope:
    """Piecewise-constant local Lipschitz rate ``l^eps``.

    bcm: ``C/eps`` on NBR = [-R-4eps, -R+4eps] u [R-4eps, R+4eps], else ``C 1_{[-R-window, R+window]}``.
    uniform: ``C/eps`` on NBR u [-4eps, 4eps], else 0.
    """

    eps: float
    kind: str
    R: float
    C: float
    window: float = 3.0

    def _near(self, y):
        y = np.asarray(y, dtype=float)
        near = (np.abs(y + self.R) <= 4 * self.eps) | (np.abs(y - self.R) <= 4 * self.eps)
        if self.kind == UNIFORM:
            near |= np.abs(y) <= 4 * self.eps
        return near

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        far = 0.0 if self.kind == UNIFORM else self.C * (np.abs(y) <= self.R + self.window)
        return np.where(self._near(y), self.C / self.eps, far)

    def pieces(self) -> list[tuple[float, float, float]]:
        """Disjoint ``(a, b, value)`` intervals whose indicators sum to this envelope (a.e.)."""
        w = 4 * self.eps
        pts = {-self.R - w, -self.R + w, self.R - w, self.R + w}
        if self.kind == UNIFORM:
            pts |= {-w, w}
        else:
            pts |= {-self.R - self.window, self.R + self.window}
        pts = np.array(sorted(pts))
        out = []
        for a, b in zip(pts[:-1], pts[1:]):
            v = float(self(0.5 * (a + b)))
            if v != 0.0:
                out.append((float(a), float(b), v))
        return out


def eval_envelope(env: LipschitzEnvelope, y):
    return env(y)


@numba.njit(cache=True, inline="always")
def _ramp_down(s, lo, w):
    # 1 - S(clip((s - lo) / w)) for the falling edge of a plateau
    t = (s - lo) / w
    if t <= 0.0:
        return 1.0
    if t >= 1.0:
        return 0.0
    return 1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


@numba.njit(cache=True)
def _forces_bcm(x, R, eps, coeffs):
    # psi_{-R,R} is even, so each unordered pair shares one mollifier evaluation
    n = x.size
    w = 4.0 * eps
    lo = R - 2.0 * eps
    cut = R + 2.0 * eps
    nc = coeffs.size
    acc = np.zeros(n)
    for i in range(n):
        xi = x[i]
        # self term: psi(0) = 1 because R > 2 eps
        acc[i] += coeffs[0]
        for j in range(i + 1, n):
            d = xi - x[j]
            ad = abs(d)
            if ad >= cut:
                continue
            psi = _ramp_down(ad, lo, w)
            hp = 0.0
            hm = 0.0
            for k in range(nc - 1, -1, -1):
                hp = hp * d + coeffs[k]
                hm = hm * (-d) + coeffs[k]
            acc[i] += psi * hp
            acc[j] += psi * hm
    return -acc / n


@numba.njit(cache=True)
def _forces_uniform(x, R, eps):
    # k^eps(d) = -psi_{-R,0}(d) + psi_{0,R}(d) is odd; for d >= 0 it equals
    # S(clip((d + 2eps)/w)) * ramp_down(d; R - 2eps) - (1 - ramp_down(d; -2eps))
    n = x.size
    w = 4.0 * eps
    acc = np.zeros(n)
    for i in range(n):
        xi = x[i]
        for j in range(i + 1, n):
            d = xi - x[j]
            ad = abs(d)
            if ad >= R + 2.0 * eps:
                continue
            up = 1.0 - _ramp_down(ad, -2.0 * eps, w)
            right = up * _ramp_down(ad, R - 2.0 * eps, w)
            left = (1.0 - _ramp_down(ad, -R - 2.0 * eps, w)) * _ramp_down(ad, -2.0 * eps, w)
            k = right - left
            if d < 0.0:
                k = -k
            acc[i] += k
            acc[j] -= k
    return -acc / n


def interaction_forces(rk: RegularizedKernel, positions) -> np.ndarray:
    """All ``K_i^eps(x) = -(1/N) sum_j k^eps(x_i - x_j)``, self term included (compiled loop)."""
    x = np.ascontiguousarray(positions, dtype=float)
    if rk.base.is_zero:
        return np.zeros_like(x)
    kind, R, eps, coeffs = rk.numba_args()
    if kind == 1:
        return _forces_uniform(x, R, eps)
    return _forces_bcm(x, R, eps, coeffs)


def interaction_forces_reference(rk, positions, kernel=None) -> np.ndarray:
    """Dense numpy version of :func:`interaction_forces`; ``kernel`` overrides ``k^eps``."""
    x = np.asarray(positions, dtype=float)
    f = rk if kernel is None else kernel
    return -np.mean(f(x[:, None] - x[None, :]), axis=1)


def assemble_interaction_force(rk: RegularizedKernel, positions, i: int) -> float:
    x = np.asarray(positions, dtype=float)
    return float(-np.mean(rk(x[i] - x)))


def envelope_forces(env: LipschitzEnvelope, positions) -> np.ndarray:
    """All ``L_i^eps(y) = (1/N) sum_j l^eps(y_i - y_j)``."""
    y = np.asarray(positions, dtype=float)
    return np.mean(env(y[:, None] - y[None, :]), axis=1)


def assemble_envelope_force(env: LipschitzEnvelope, positions, i: int) -> float:
    y = np.asarray(positions, dtype=float)
    return float(np.mean(env(y[i] - y)))


@dataclass
class ViolationReport:
    kind: str
    eps: float
    n_samples: int
    C: float
    violations: int
    worst_ratio: float
    calibrated_C: float
    window: tuple[float, float]
    seed: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def verify_local_lipschitz(
    rk: RegularizedKernel,
    env: LipschitzEnvelope | None = None,
    n_samples: int = 100_000,
    seed: int = 0,
    window: tuple[float, float] | None = None,
    func=None,
) -> ViolationReport:
    """Check ``|f(x) - f(y)| <= l(y) |x - y|`` on random pairs with ``|x - y| <= 2 eps``.

    ``f`` is ``rk`` unless ``func`` is given (e.g. the unregularized kernel). ``y`` is uniform on
    ``window`` (default ``[-R-1, R+1]``) and ``x - y`` uniform on ``[-2eps, 2eps]``.
    ``calibrated_C`` is the smallest constant giving zero violations on these pairs
    (``inf`` when a pair jumps where the envelope vanishes).
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1", "n_samples")
    env = rk.envelope() if env is None else env
    R = rk.base.R
    lo, hi = window if window is not None else (-R - 1.0, R + 1.0)
    if not hi > lo:
        raise ConfigError(f"empty sampling window [{lo}, {hi}]", "window")
    f = rk if func is None else func
    rng = np.random.Generator(np.random.Philox(seed))
    y = rng.uniform(lo, hi, n_samples)
    x = y + rng.uniform(-2 * rk.eps, 2 * rk.eps, n_samples)
    diff = np.abs(f(x) - f(y))
    gap = np.abs(x - y)
    tol = 1e-13
    bound = env(y) * gap
    bad = diff > bound + tol
    ratio = np.where(bound > 0, diff / np.where(bound > 0, bound, 1.0), np.where(diff > tol, np.inf, 0.0))
    shape = dataclasses.replace(env, C=1.0)(y) * gap
    need = np.where(shape > 0, diff / np.where(shape > 0, shape, 1.0), np.where(diff > tol, np.inf, 0.0))
    return ViolationReport(
        kind=rk.base.kind,
        eps=rk.eps,
        n_samples=int(n_samples),
        C=float(env.C),
        violations=int(bad.sum()),
        worst_ratio=float(ratio.max()),
        calibrated_C=float(need.max()),
        window=(float(lo), float(hi)),
        seed=int(seed),
    )


def calibrate_lip_const(rk: RegularizedKernel, n_samples: int = 100_000, seed: int = 0, margin: float = 0.0) -> float:
    rep = verify_local_lipschitz(rk, rk.envelope(1.0), n_samples=n_samples, seed=seed)
    return rep.calibrated_C * (1.0 + margin)


def mvt_constant(rk: RegularizedKernel, n_grid: int = 200_001) -> float:
    """Envelope constant from the mean value theorem: ``max(eps * sup|k'|, sup_{|z|<=R} |h'|)``."""
    R = rk.base.R
    z = np.linspace(-R - 3 * rk.eps, R + 3 * rk.eps, n_grid)
    c = rk.eps * float(np.max(np.abs(rk.derivative(z))))
    if rk.base.kind == BCM and len(rk.base.h) > 1:
        dh = tuple(np.polynomial.polynomial.polyder(np.asarray(rk.base.h)))
        c = max(c, _poly_absmax(dh, -R, R))
    return c
