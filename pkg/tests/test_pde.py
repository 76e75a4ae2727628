import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from chaoslab.errors import CflViolation, ConfigError, DomainTooSmall, GridMismatch
from chaoslab.kernels import KernelSpec, RegularizedKernel
from chaoslab.pde import (
    ConvolutionOperator,
    Gaussian,
    Grid1D,
    GridDensity,
    Mixture,
    TridiagonalSolver,
    UniformBox,
    diagnostics,
    drift_field,
    envelope_bound_series,
    solve,
    step,
    step_convolution,
    upwind_update,
    weak_convergence_gap,
)

ZERO = RegularizedKernel(KernelSpec.zero(), 0.1)
BCM = RegularizedKernel(KernelSpec.bcm(1.0), 0.1)
UNI = RegularizedKernel(KernelSpec.uniform(1.0), 0.1)


# -- initial densities and projection


@pytest.mark.parametrize(
    "rho0",
    [Gaussian(0.3, 0.7), UniformBox(-1.0, 2.0), Mixture((0.3, 0.7), (Gaussian(-1, 0.5), UniformBox(0, 1)))],
)
def test_density_cdf_ppf_roundtrip(rho0):
    u = np.linspace(0.001, 0.999, 101)
    assert np.allclose(rho0.cdf(rho0.ppf(u)), u, atol=1e-10)
    x = np.linspace(*rho0.support(), 20001)
    assert integrate.trapezoid(rho0.pdf(x), x) == pytest.approx(1.0, abs=1e-3)


def test_mixture_weights_must_sum_to_one():
    with pytest.raises(ConfigError):
        Mixture((0.5, 0.6), (Gaussian(), Gaussian()))


def test_projection_is_exact_cell_average():
    g = Grid1D.symmetric(6.0, 64)
    rho = GridDensity.project(Gaussian(), g)
    e = g.edges
    assert np.allclose(rho.values * g.dx, norm.cdf(e[1:]) - norm.cdf(e[:-1]), atol=1e-15)
    assert rho.mass == pytest.approx(1.0, abs=1e-14)


def test_projection_flags_lost_mass():
    with pytest.raises(DomainTooSmall):
        GridDensity.project(Gaussian(), Grid1D.symmetric(2.0, 64))


def test_grid_validation():
    with pytest.raises(ConfigError):
        Grid1D(0.0, 1.0, 8)
    with pytest.raises(ConfigError):
        Grid1D(1.0, 0.0, 32)


# -- drift


def test_drift_zero_kernel():
    rho = GridDensity.project(Gaussian(), Grid1D.symmetric(8, 256))
    assert np.all(drift_field(ZERO, rho) == 0.0)


def test_drift_vanishes_at_centre_for_odd_kernel():
    g = Grid1D.symmetric(8, 1025)
    rho = GridDensity.project(Gaussian(), g)
    b = drift_field(UNI, rho)
    assert abs(b[512]) < 1e-14
    assert np.allclose(b, -b[::-1], atol=1e-14)


def test_drift_against_adaptive_quadrature():
    rk = RegularizedKernel(KernelSpec.uniform(1.0), 0.05)
    g = Grid1D.symmetric(8, 1024)
    b = drift_field(rk, GridDensity.project(UniformBox(-0.5, 0.5), g))
    x = g.centers
    sel = np.flatnonzero(np.abs(x - 1.0) < 0.1)

    def oracle(xx):
        kinks = [xx + s for s in (-1.1, -0.9, -0.1, 0.1, 0.9, 1.1)]
        pts = [p for p in kinks if -0.5 < p < 0.5] or None
        return -integrate.quad(lambda y: rk(xx - y), -0.5, 0.5, points=pts, limit=200, epsabs=1e-13)[0]

    exact = np.array([oracle(xx) for xx in x[sel]])
    assert np.max(np.abs(b[sel] - exact)) < 1e-8
    g2 = Grid1D.symmetric(8, 2048)
    b2 = drift_field(rk, GridDensity.project(UniformBox(-0.5, 0.5), g2))
    assert np.max(np.abs(b[sel] - np.interp(x[sel], g2.centers, b2))) < 1e-8


@pytest.mark.parametrize("rk", [BCM, UNI, RegularizedKernel(KernelSpec.bcm(1.0, "linear"), 0.05)])
def test_fft_path_matches_direct(rk):
    g = Grid1D.symmetric(8, 2048)
    rho = GridDensity.project(Mixture((0.5, 0.5), (Gaussian(-1, 0.6), Gaussian(1.5, 0.4))), g)
    d = ConvolutionOperator(rk, g, "direct")(rho.values)
    f = ConvolutionOperator(rk, g, "fft")(rho.values)
    assert np.max(np.abs(d - f)) < 1e-10


@pytest.mark.parametrize("rk", [BCM, UNI])
def test_drift_bounded_by_kernel_norm(rk):
    rho = GridDensity.project(Gaussian(0, 0.2), Grid1D.symmetric(8, 512))
    assert np.max(np.abs(drift_field(rk, rho))) <= rk.norm_bound * rho.mass + 1e-12


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(0.05, 2.0), st.floats(-8, 8))
def test_step_convolution_matches_quadrature(a, w, x):
    g = Grid1D.symmetric(8, 256)
    rho = GridDensity.project(Gaussian(0.2, 0.9), g)
    pieces = [(a, a + w, 1.7)]
    got = float(step_convolution(pieces, rho, np.array([x]))[0])
    # rho is piecewise constant: integrate 1.7 * rho(x - v) over v in [a, a+w]
    f = lambda v: 1.7 * _pc(rho, x - v)  # noqa: E731
    pts = [x - e for e in g.edges if a < x - e < a + w]
    exact = integrate.quad(f, a, a + w, points=pts[:50] or None, limit=500)[0]
    assert got == pytest.approx(exact, abs=1e-6)


def _pc(rho, y):
    g = rho.grid
    j = int(np.floor((y - g.x_min) / g.dx))
    return rho.values[j] if 0 <= j < g.M else 0.0


# -- single step


def test_tridiagonal_solver_matches_dense():
    rng = np.random.default_rng(0)
    tri = TridiagonalSolver(50, 0.37)
    f = rng.normal(size=50)
    assert np.allclose(tri.solve(f), np.linalg.solve(tri.dense(), f), atol=1e-13)
    # zero-flux rows: columns of the matrix sum to one, so the solve conserves sum
    assert tri.solve(f).sum() == pytest.approx(f.sum(), abs=1e-12)


def test_step_dt_zero_is_identity():
    rho = GridDensity.project(Gaussian(), Grid1D.symmetric(8, 128))
    out = step(rho, BCM, 0.5, 0.0)
    assert np.array_equal(out.values, rho.values) and out is not rho


def test_heat_step_against_exact_solution():
    g = Grid1D.symmetric(8, 1024)
    s0 = GridDensity.project(Gaussian(), g)
    errs = []
    for dt in (1e-3, 5e-4):
        exact = GridDensity.project(Gaussian(0, np.sqrt(1 + dt)), g).values
        errs.append(np.max(np.abs(step(s0, ZERO, 1.0, dt).values - exact)))
    assert errs[0] < 2e-7
    assert errs[1] < errs[0] / 3


def test_symmetry_preserved_without_noise():
    rho = GridDensity.project(Gaussian(), Grid1D.symmetric(8, 512))
    out = step(rho, UNI, 0.0, 1e-3)
    assert np.max(np.abs(out.values - out.values[::-1])) < 1e-13


def test_cfl_violation():
    rho = GridDensity.project(Gaussian(), Grid1D.symmetric(8, 512))
    with pytest.raises(CflViolation):
        step(rho, BCM, 0.5, 1.0)


@settings(max_examples=50)
@given(
    st.lists(st.floats(0, 5), min_size=32, max_size=32),
    st.sampled_from([BCM, UNI]),
    st.floats(0, 1.0),
    st.floats(0.01, 1.0),
)
def test_step_conserves_mass_and_sign(vals, rk, sigma, courant):
    g = Grid1D(-4.0, 4.0, 32)
    v = np.array(vals)
    v[0] = v[-1] = 0.0
    if v.sum() == 0:
        v[10] = 1.0
    v /= v.sum() * g.dx
    dt = 0.5 * courant * g.dx / rk.norm_bound
    out = step(GridDensity(g, v), rk, sigma, dt)
    assert out.mass == pytest.approx(1.0, abs=1e-12)
    assert out.values.min() >= -1e-14


def test_upwind_update_is_conservative():
    rng = np.random.default_rng(1)
    v = rng.uniform(0, 1, 40)
    b = rng.uniform(-1, 1, 40)
    out = upwind_update(v, b, 0.01, 0.1)
    assert out.sum() == pytest.approx(v.sum(), abs=1e-13)


# -- solve and diagnostics


def test_heat_variance_growth():
    s0, sigma, T = 0.8, 0.7, 1.0
    sol = solve(Gaussian(0, s0), ZERO, sigma, T, Grid1D.symmetric(10, 1024), 1e-3, save_every=100)
    x, rho = sol.grid.centers, sol.densities[-1]
    var = sol.grid.dx * np.sum(x**2 * rho)
    assert var == pytest.approx(s0**2 + sigma**2 * T, rel=0.01)


def test_zero_horizon_single_snapshot():
    g = Grid1D.symmetric(8, 256)
    sol = solve(Gaussian(), BCM, 0.5, 0.0, g, 1e-3)
    assert len(sol) == 1
    assert np.array_equal(sol.densities[0], GridDensity.project(Gaussian(), g).values)


def test_domain_too_small_detected():
    with pytest.raises(DomainTooSmall):
        solve(Gaussian(0, 0.5), ZERO, 2.0, 2.0, Grid1D.symmetric(3.5, 256), 1e-3)


def test_snapshot_times_cover_horizon():
    sol = solve(Gaussian(), BCM, 0.5, 0.37, Grid1D.symmetric(8, 256), 1e-2, save_every=4)
    assert sol.times[0] == 0.0 and sol.times[-1] == pytest.approx(0.37)
    assert np.all(np.diff(sol.times) > 0)


def test_diagnostics_examples():
    g = Grid1D.symmetric(8, 2048)
    d = diagnostics(solve(Gaussian(), ZERO, 0.5, 0.0, g, 1e-3))[0]
    assert d["abs_moment"] == pytest.approx(np.sqrt(2 / np.pi), abs=1e-5)
    assert d["mass"] == pytest.approx(1.0, abs=1e-10)
    box = diagnostics(solve(UniformBox(-0.5, 0.5), ZERO, 0.5, 0.0, Grid1D.symmetric(4, 1024), 1e-3))[0]
    assert box["linf"] == pytest.approx(1.0, abs=1e-12)
    assert box["l2"] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("rk", [BCM, UNI, RegularizedKernel(KernelSpec.bcm(1.0, "linear"), 0.05)])
def test_solution_mass_and_sign(rk):
    sol = solve(Gaussian(), rk, 0.5, 1.0, Grid1D.symmetric(8, 512), 2e-3, save_every=10)
    for d in diagnostics(sol):
        assert abs(d["mass"] - 1) <= 1e-8
        assert d["min"] >= -1e-14


def test_self_convergence_first_order():
    # refine dx and dt together; successive differences should shrink by about 2 or more
    sols = []
    for M in (256, 512, 1024):
        g = Grid1D.symmetric(8, M)
        sols.append(solve(Gaussian(), BCM, 0.5, 0.25, g, 0.5 * 16 / M / 4, save_every=10**9).densities[-1])
    coarse = lambda v: v.reshape(-1, 2).mean(axis=1)  # noqa: E731
    e1 = np.max(np.abs(coarse(sols[1]) - sols[0]))
    e2 = np.max(np.abs(coarse(sols[2]) - sols[1]))
    assert e1 / e2 > 1.7


# -- weak gap and envelope bound


def test_weak_gap_basics():
    g = Grid1D.symmetric(8, 256)
    a = solve(Gaussian(), BCM, 0.5, 0.5, g, 1e-2, save_every=5)
    b = solve(Gaussian(), RegularizedKernel(KernelSpec.bcm(1.0), 0.05), 0.5, 0.5, g, 1e-2, save_every=5)
    assert weak_convergence_gap(a, a, np.tanh) == 0.0
    assert weak_convergence_gap(a, b, np.ones_like) <= 2e-8
    c = solve(Gaussian(), BCM, 0.5, 0.5, g, 1e-2, save_every=10)
    with pytest.raises(GridMismatch):
        weak_convergence_gap(a, c, np.tanh)


@pytest.mark.parametrize("rk", [BCM.with_lip_const(0.5), UNI.with_lip_const(0.9)])
def test_envelope_bound_series_is_exact_max(rk):
    sol = solve(Gaussian(), rk, 0.5, 0.2, Grid1D.symmetric(8, 256), 1e-2, save_every=10)
    env = rk.envelope()
    got = envelope_bound_series(sol, env)
    x = np.linspace(-8, 8, 40001)
    for n in range(len(sol)):
        dense = np.max(step_convolution(env.pieces(), sol.snapshot(n), x))
        assert dense <= got[n] + 1e-12
        assert dense == pytest.approx(got[n], rel=2e-3)


def test_drift_interpolation_is_exact_on_nodes():
    sol = solve(Gaussian(), BCM, 0.5, 0.2, Grid1D.symmetric(8, 256), 1e-2)
    x = sol.grid.centers[100:110]
    assert np.array_equal(sol.drift_at(sol.times[3], x), sol.drift(3)[100:110])
    with pytest.raises(GridMismatch):
        sol.drift_at(0.5, x)
