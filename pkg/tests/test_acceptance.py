"""End-to-end acceptance checks; each records one PASS/FAIL line in the terminal summary."""

import itertools

import numpy as np

from conftest import record
from transnoise.cli import main
from transnoise.correlations import (
    debiased_average_fidelity_complement,
    discord_bell_diagonal,
    discord_brute_force,
    negativity_from_correlations,
    optimize_gamma_rtn,
    reference_evolution,
)
from transnoise.montecarlo import MIDPOINT, THREADS_ENV, evolve_single_mc
from transnoise.noise import OU, RTN, EnsembleConfig, TimeGrid, default_grid, ou_values
from transnoise.nonmarkov import blp_measure, rhp_measure
from transnoise.rtn import (
    FAST,
    SLOW,
    cubic_residual,
    eigen_cubics,
    eta_coefficients,
    limiting_decay_time,
    mu_coefficients,
    real_region_boundaries,
    transfer_single_series,
    transfer_two_ce,
    transfer_two_ce_series,
    transfer_two_ie_series,
)
from transnoise.states import (
    ModelParams,
    bell_diagonal_state,
    bloch_from_density,
    density_from_bloch,
    generalized_bloch_from_density,
    werner_state,
)

PSI_PLUS = np.zeros((4, 4))
PSI_PLUS[np.ix_([0, 3], [0, 3])] = 0.5
# a measure is taken to vanish below this value
VANISHING = 1e-5


def multiset_distance(x, y):
    return min(np.abs(x - y[list(perm)]).max() for perm in itertools.permutations(range(len(y))))


def test_criterion_1_analytic_matches_monte_carlo():
    rho0 = density_from_bloch([0.6, 0.0, 0.8])
    ens = EnsembleConfig(100_000)
    worst, ok = [], True
    for gamma, omega in itertools.product([0.1, 0.5, 1.0, 10.0], [0.1, 1.0]):
        p = ModelParams(omega, gamma)
        grid = TimeGrid.covering(5.0 / max(1.0, gamma, omega), 5.0 / max(1.0, gamma, omega) / 100)
        mc = evolve_single_mc(p, RTN, rho0, grid, ens, sampling=MIDPOINT)
        T = transfer_single_series(p, grid.dt, grid.n_steps)
        exact = np.array([density_from_bloch(v) for v in T @ bloch_from_density(rho0)])
        dev = np.abs(mc.states - exact).max()
        bound = max(3 * mc.stderr_max, 5e-3)
        ok &= bool(dev <= bound)
        worst.append(dev / bound)
    record(1, ok, f"max deviation / bound = {max(worst):.3f} over 8 parameter pairs")
    assert ok


def test_criterion_2_eigenvalue_cubics():
    rng = np.random.default_rng(2)
    omegas = 10 ** rng.uniform(-3, 3, 10_000)
    gammas = 10 ** rng.uniform(-3, 3, 10_000)
    res, mapped = 0.0, 0.0
    for omega, gamma in zip(omegas, gammas):
        p = ModelParams(omega, gamma)
        roots = eigen_cubics(p)
        res = max(res, cubic_residual(mu_coefficients(p), roots.mu).max(),
                  cubic_residual(eta_coefficients(p), roots.eta).max())
        mapped = max(mapped, multiset_distance(-roots.mu - 2 * gamma, roots.eta) / max(1.0, gamma))
    ok = res <= 1e-10 and mapped <= 1e-9
    record(2, ok, f"max relative residual {res:.1e}, max root-map error {mapped:.1e} (scaled by max(1, gamma))")
    assert ok


def test_criterion_3_real_eigenvalue_region():
    g1, _ = real_region_boundaries(1e-3)
    lo, hi = real_region_boundaries(1 / (2 * np.sqrt(2)))
    a, b = real_region_boundaries(0.1)
    mid = max(np.abs(eigen_cubics(ModelParams(0.1, 0.5 * (a + b))).all.imag))
    below = max(np.abs(eigen_cubics(ModelParams(0.1, 0.9 * a)).all.imag))
    above = max(np.abs(eigen_cubics(ModelParams(0.1, 1.1 * b)).all.imag))
    ok = abs(g1 - 2) <= 0.01 and abs(hi - lo) <= 1e-6 * hi and mid < 1e-9 and below > 1e-6 and above > 1e-6
    record(3, ok, f"gamma1(1e-3) = {g1:.6f}; threshold bounds {lo:.6f}, {hi:.6f}; "
                  f"max|Im| inside {mid:.1e}, outside {min(below, above):.1e}")
    assert ok


def _envelope_decay_time(p, tau):
    dt = min(0.01, tau / 2000)
    n = int(round(4 * tau / dt))
    norm = np.linalg.norm(transfer_single_series(p, dt, n), 2, axis=(1, 2))
    t = dt * np.arange(n + 1)
    win = int(np.ceil(np.pi / dt))
    idx = np.nonzero(t >= 2 * tau)[0]
    env = np.array([norm[i - win:i + 1].max() for i in idx])
    return -1.0 / np.polyfit(t[idx], np.log(env), 1)[0], norm[-1]


def test_criterion_4_fixed_points():
    errors, ok = [], True
    for omega, gamma, regime in [(1.0, 100.0, FAST), (2.0, 0.01, SLOW)]:
        p = ModelParams(omega, gamma)
        tau = limiting_decay_time(p, regime)
        fitted, last = _envelope_decay_time(p, tau)
        errors.append(abs(fitted / tau - 1))
        ok &= bool(errors[-1] <= 0.1 and last < 0.05)
    p = ModelParams(1.0, 0.5)
    drift = 0.0
    for w in [0.0, 0.3, 1.0]:
        v = generalized_bloch_from_density(werner_state(w)).to_array()
        for t in np.linspace(0, 50, 26):
            drift = max(drift, np.abs(transfer_two_ce(p, t) @ v - v).max())
    ok &= drift <= 1e-8
    record(4, ok, f"decay-time errors fast {errors[0]:.1e}, slow {errors[1]:.1e}; Werner drift {drift:.1e}")
    assert ok


def test_criterion_5_discord_oracle():
    rng = np.random.default_rng(5)
    vertices = np.array([[-1, -1, -1], [-1, 1, 1], [1, -1, 1], [1, 1, -1]], dtype=float)
    points = rng.dirichlet(np.ones(4), 200) @ vertices
    err = max(abs(discord_bell_diagonal(c) - discord_brute_force(bell_diagonal_state(c))) for c in points)
    axis = max(discord_bell_diagonal(np.roll([s, 0.0, 0.0], k)) for s in (-0.9, -0.4, 0.5) for k in range(3))
    ok = err <= 1e-6 and axis <= 1e-12
    record(5, ok, f"max |closed form - brute force| {err:.1e} on 200 points; max axis discord {axis:.1e}")
    assert ok


def _sudden_deaths(E, revive=1e-3):
    """Onset indices of zero-negativity intervals and the number of revivals above ``revive``."""
    dead = E <= 0
    onsets = np.nonzero(dead[1:] & ~dead[:-1])[0] + 1
    rebirths = sum(1 for k in onsets if (E[k:] > revive).any())
    return onsets, rebirths


def _psi_plus_negativities(p, dt, n):
    v = generalized_bloch_from_density(PSI_PLUS).to_array()
    out = {}
    for name, series in (("ie", transfer_two_ie_series), ("ce", transfer_two_ce_series)):
        C = (series(p, dt, n) @ v)[:, 6:].reshape(-1, 3, 3)
        out[name] = negativity_from_correlations(C)
    return out


def test_criterion_6_correlation_phenomenology():
    slow = _psi_plus_negativities(ModelParams(1.0, 0.01), 0.01, 5000)
    fast = _psi_plus_negativities(ModelParams(1.0, 100.0), 0.05, 20000)
    details, ok = [], True
    spacing = {}
    for env in ("ie", "ce"):
        onsets, rebirths = _sudden_deaths(slow[env])
        spacing[env] = np.diff(onsets).mean() * 0.01
        ok &= bool(len(onsets) >= 2 and rebirths >= 2)
        fast_onsets, _ = _sudden_deaths(fast[env])
        ok &= bool(len(fast_onsets) == 1 and fast[env][fast_onsets[0]:].max() <= 0)
        details.append(f"{env}: {len(onsets)} deaths/{rebirths} rebirths slow, {len(fast_onsets)} death fast")
    ratio = spacing["ie"] / spacing["ce"]
    ok &= abs(ratio - 2) <= 0.2
    record(6, ok, "; ".join(details) + f"; CE/IE frequency ratio {ratio:.3f}")
    assert ok


def test_criterion_7_rtn_reproduces_ou():
    p_ou = ModelParams(1.0, 1.0)
    rho0 = density_from_bloch([1.0, 0.0, 0.0])
    grid = default_grid(p_ou, 10.0)
    ens = EnsembleConfig(100_000)
    fit = optimize_gamma_rtn(p_ou, rho0, 10.0, grid=grid, ens=ens)
    arm = reference_evolution(p_ou, rho0, grid, ens, OU, split=True)
    at_one, _ = debiased_average_fidelity_complement(ModelParams(1.0, 1.0), rho0, grid, arm)
    below = fit.value - 3 * fit.spread < 1e-4
    ratio = at_one / fit.value
    ok = bool(below and ratio >= 100)
    record(7, ok, f"optimum gamma_RTN = {fit.gamma_star:.4f}, F_T = {fit.value:.2e} (spread {fit.spread:.1e}), "
                  f"F_T(gamma_RTN = 1) / F_T(optimum) = {ratio:.1f} (needs >= 100)")
    assert ok


def _vanishing_rate(measure, lo=1.0, hi=3.0, tol=1e-3):
    """Smallest gamma in ``[lo, hi]`` above which ``measure`` stays below the vanishing level."""
    if measure(lo) <= VANISHING or measure(hi) > VANISHING:
        return np.nan
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if measure(mid) > VANISHING else (lo, mid)
    return 0.5 * (lo + hi)


def test_criterion_8_non_markovianity():
    gammas = np.geomspace(0.01, 100, 9)
    blp = [blp_measure(ModelParams(1.0, g)) for g in gammas]
    rhp = np.array([rhp_measure(ModelParams(1.0, g)).value for g in gammas])
    blp_values = np.array([r.value for r in blp])
    nz = max(abs(n[2]) for r in blp for n in r.optimal_pair)
    zero = rhp == 0
    threshold_ok = zero.any() and (~zero).any() and np.all(np.diff(zero.astype(int)) >= 0)

    slope_gammas = np.geomspace(0.01, 0.1, 5)
    blp_slope = np.polyfit(np.log(slope_gammas), np.log([blp_measure(ModelParams(1.0, g)).value
                                                         for g in slope_gammas]), 1)[0]
    rhp_slope = np.polyfit(np.log(slope_gammas), np.log([rhp_measure(ModelParams(1.0, g)).value
                                                         for g in slope_gammas]), 1)[0]

    g_blp = _vanishing_rate(lambda g: blp_measure(ModelParams(0.01, g)).value)
    g_rhp = _vanishing_rate(lambda g: rhp_measure(ModelParams(0.01, g)).value)

    parts = {
        "BLP > 0 on [0.01, 100]": bool(np.all(blp_values > 0)),
        "equatorial pair": bool(nz < 1e-3),
        "RHP threshold": bool(threshold_ok),
        "BLP slope": bool(abs(blp_slope + 1) <= 0.1),
        "RHP slope": bool(abs(rhp_slope + 1) <= 0.1),
        "BLP vanishes at 2": bool(abs(g_blp - 2) <= 0.1),
        "RHP vanishes at 2": bool(abs(g_rhp - 2) <= 0.1),
    }
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    record(8, ok, f"min BLP {blp_values.min():.1e}, max|n_z| {nz:.1e}, RHP zero from gamma = "
                  f"{gammas[np.argmax(zero)]:.3g}, slopes BLP {blp_slope:.3f} RHP {rhp_slope:.3f}, "
                  f"omega = 0.01 vanishing at BLP {g_blp:.3f} RHP {g_rhp:.3f}"
                  + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok


def test_criterion_9_ou_statistics():
    n, worst, ok = 100_000, 0.0, True
    for gamma in (0.1, 1.0, 10.0):
        grid = TimeGrid(0.05 / gamma, 20)
        x = ou_values(gamma, grid, 9, np.arange(n))
        prods = x[:, [0]] * x[:, 1:]
        se = prods.std(axis=0, ddof=1) / np.sqrt(n)
        z = np.abs(prods.mean(axis=0) - np.exp(-2 * gamma * grid.times[1:])) / se
        worst = max(worst, z.max())
        ok &= bool(np.all(z <= 3))
    record(9, ok, f"max deviation {worst:.2f} standard errors over 20 lags x 3 rates")
    assert ok


CLI_RUNS = [
    ["simulate", "--solver", "mc", "--noise", "ou", "--realizations", "10000", "--t-max", "1"],
    ["simulate", "--state", "werner:0.7", "--env", "independent", "--t-max", "2"],
    ["correlations", "--noise", "rtn", "--solver", "mc", "--realizations", "9000", "--t-max", "1"],
    ["nonmark", "--gamma-list", "0.3,3", "--measure", "both"],
    ["compare", "--gamma-rtn-list", "0.5,1", "--realizations", "9000", "--t-max", "2"],
    ["region", "--omega-range", "0..0.4:5"],
    ["trajectory", "--noise", "ou", "--gamma", "2", "--t-max", "3"],
]


def test_criterion_10_determinism(tmp_path, monkeypatch):
    mismatched = []
    for i, argv in enumerate(CLI_RUNS):
        outputs = []
        for threads, use_config in [(1, False), (3, False), (2, True)]:
            monkeypatch.setenv(THREADS_ENV, str(threads))
            out = tmp_path / f"{i}-{threads}.csv"
            args = [argv[0], "--config", str(tmp_path / f"{i}-1.csv")] if use_config else argv
            assert main([*args, "-o", str(out)]) == 0
            outputs.append(out.read_bytes())
        if len(set(outputs)) != 1:
            mismatched.append(argv[0])
    ok = not mismatched
    record(10, ok, f"{len(CLI_RUNS)} runs repeated with 1 and 3 threads and from their own header"
                   + (f"; mismatched: {mismatched}" if mismatched else ""))
    assert ok
