"""Closed-form quench bounds for the projected dynamics.

For z = 1 - u with homogeneous Robin data, ``v_t = e^{kappa W_t} z_t(phi)`` is
dominated pathwise by the solution B(t) of a Bernoulli equation, and the
event that B never vanishes reduces, after a Brownian time change, to a
tail event of the exponential functional

    A_inf = int_0^inf exp(2 (W_s + mu s)) ds  ~  1 / (2 Z),   Z ~ Gamma(-mu),

which is how the no-quench probabilities become regularized incomplete
gamma functions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy import integrate, optimize, stats

from .fem import BoundaryCondition, Grid1D, ModelSpec, simulate_path
from .noise import derive_seed, make_generator, sample_scalar_brownian, ScalarBrownianPath
from .special import gammainc_pair

__all__ = [
    "EigenPair",
    "BernoulliBound",
    "ProbabilityResult",
    "DufresneReport",
    "OrderingReport",
    "principal_eigenpair",
    "v0_inner",
    "bernoulli_bound",
    "no_quench_shape",
    "prob_no_quench_gamma",
    "prob_no_quench_quadrature",
    "flipped_sign_no_quench_formula",
    "prob_bounds_general",
    "constant_C_bounded",
    "rho_parameter",
    "sample_exponential_functional",
    "mc_no_quench_probability",
    "tail_safe_horizon",
    "dufresne_mc_check",
    "pathwise_ordering_check",
    "write_curve_csv",
]

TAIL_LEVEL = 1e-6


@dataclass(frozen=True)
class EigenPair:
    """Principal eigenvalue and unit-integral eigenfunction on a grid ``x``."""

    lam1: float
    x: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    bc: BoundaryCondition

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.phi)

    @property
    def normalization_residual(self) -> float:
        return abs(float(integrate.simpson(self.phi, x=self.x)) - 1.0)


def _robin_root(beta: float, tolerance: float) -> float:
    # s sin(s/2) - beta cos(s/2) = 0 is s tan(s/2) = beta without the pole
    f = lambda s: s * math.sin(s / 2) - beta * math.cos(s / 2)
    lo, hi = 0.0, math.pi
    if not f(lo) < 0 < f(hi):
        raise ArithmeticError(f"no sign change of the Robin characteristic equation on [{lo}, {hi}]")
    return optimize.brentq(f, lo, hi, xtol=tolerance, rtol=4 * np.finfo(float).eps)


def principal_eigenpair(bc: BoundaryCondition, tolerance: float = 1e-14,
                        n_quad: int = 2001) -> EigenPair:
    """Smallest eigenpair of ``-phi'' = lam1 phi`` with ``int phi = 1``.

    ``n_quad`` points (made odd for Simpson) tabulate phi on [0, 1].
    """
    if n_quad < 3:
        raise ValueError("need at least 3 quadrature points")
    n_quad += 1 - n_quad % 2
    x = np.linspace(0.0, 1.0, n_quad)
    if bc.is_dirichlet:
        lam1 = math.pi**2
        phi = (math.pi / 2) * np.sin(math.pi * x)
    elif bc.beta == 0:
        lam1 = 0.0
        phi = np.ones_like(x)
    else:
        s = _robin_root(bc.beta, tolerance)
        lam1 = s * s
        phi = np.cos(s * (x - 0.5)) / ((2.0 / s) * math.sin(s / 2))
    return EigenPair(lam1, x, phi, bc)


def v0_inner(z0, eig: EigenPair) -> float:
    """``int_0^1 z0 phi dx`` by composite Simpson on the eigenfunction grid.

    ``z0`` is a callable or an array of values on ``eig.x``.
    """
    vals = z0(eig.x) if callable(z0) else np.asarray(z0, dtype=float)
    vals = np.broadcast_to(vals, eig.x.shape)
    if vals.shape != eig.x.shape:
        raise ValueError(f"z0 has shape {vals.shape}, quadrature grid has {eig.x.shape}")
    if np.any(vals <= 0):
        raise ValueError("z0 must be positive on [0, 1]")
    return float(integrate.simpson(vals * eig.phi, x=eig.x))


@dataclass
class BernoulliBound:
    """Pathwise supersolution B(t) along a Brownian path.

    ``values`` is NaN from the first grid point where the bracket is no
    longer positive. ``tau`` is ``None`` when the bracket stays positive up
    to the end of the path.
    """

    times: np.ndarray = field(repr=False)
    bracket: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    tau: float | None
    lam: float
    kappa: float
    gamma: float
    lam1: float
    B0: float

    @property
    def beyond_horizon(self) -> bool:
        return self.tau is None


def bernoulli_bound(path: ScalarBrownianPath, lam: float, kappa: float, gamma: float,
                    lam1: float, B0: float) -> BernoulliBound:
    if not B0 > 0:
        raise ValueError(f"B0 must be > 0, got {B0}")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    t = np.asarray(path.times, dtype=float)
    W = np.asarray(path.values, dtype=float)
    expo = np.exp(3.0 * ((lam1 - gamma + 0.5 * kappa**2) * t + kappa * W))
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (expo[1:] + expo[:-1]) * np.diff(t))])
    bracket = B0**3 - 3.0 * lam * integral
    tau = None
    values = np.full(t.shape, np.nan)
    nonpos = np.nonzero(bracket <= 0)[0]
    stop = nonpos[0] if nonpos.size else t.size
    values[:stop] = np.exp(-(lam1 + 0.5 * kappa**2) * t[:stop]) * np.cbrt(bracket[:stop])
    if nonpos.size:
        k = nonpos[0]
        b0, b1 = bracket[k - 1], bracket[k]
        tau = float(t[k - 1] + b0 / (b0 - b1) * (t[k] - t[k - 1]))
    return BernoulliBound(t, bracket, values, tau, lam, kappa, gamma, lam1, B0)


@dataclass(frozen=True)
class ProbabilityResult:
    value: float
    kind: str
    params: dict
    error_estimate: float = 0.0
    complement_kind: str = ""

    def complement(self) -> "ProbabilityResult":
        return ProbabilityResult(1.0 - self.value, self.complement_kind, self.params,
                                 self.error_estimate, self.kind)


def no_quench_shape(kappa: float, gamma: float, lam1: float) -> float:
    """Gamma shape ``-mu = (2 gamma - 2 lam1 - kappa^2) / (3 kappa^2)``."""
    return (2.0 * gamma - 2.0 * lam1 - kappa**2) / (3.0 * kappa**2)


def _check_no_quench_args(lam, kappa, gamma, lam1, v0):
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    if not lam > 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    if not v0 > 0:
        raise ValueError(f"v0 must be > 0, got {v0}")
    if gamma < lam1 + 0.5 * kappa**2:
        raise ValueError(
            f"gamma = {gamma} < lam1 + kappa^2/2 = {lam1 + 0.5 * kappa**2}: "
            "the damped source cannot prevent quenching, which then happens almost surely")


def _no_quench_density(y, lam, kappa, gamma, lam1):
    # law of 2 / (9 kappa^2 Z) with Z ~ Gamma(a)
    a = no_quench_shape(kappa, gamma, lam1)
    w = 2.0 / (9.0 * kappa**2 * y)
    return np.exp(a * np.log(w) - w - math.lgamma(a)) / y


def prob_no_quench_quadrature(lam: float, kappa: float, gamma: float, lam1: float,
                              v0: float) -> tuple[float, float]:
    """Adaptive quadrature of the no-quench density over ``(0, v0^3 / (3 lam)]``.

    Integrates in ``log y`` so the essential singularity at 0 and the
    peak are both resolved. Returns ``(value, abserr)``.
    """
    _check_no_quench_args(lam, kappa, gamma, lam1, v0)
    a = no_quench_shape(kappa, gamma, lam1)
    if a == 0:
        return 0.0, 0.0
    c = v0**3 / (3.0 * lam)
    f = lambda s: _no_quench_density(math.exp(s), lam, kappa, gamma, lam1) * math.exp(s)
    # mode of the density in log y sits where w = a; start far below it
    mode = math.log(2.0 / (9.0 * kappa**2 * a))
    lo = min(mode, math.log(c)) - 50.0 / max(a, 1e-3) ** 0.5 - 10.0
    pts = [p for p in (mode,) if lo < p < math.log(c)]
    val, err = integrate.quad(f, lo, math.log(c), points=pts or None, limit=500,
                              epsabs=0.0, epsrel=1e-12)
    return val, err


def prob_no_quench_gamma(lam: float, kappa: float, gamma: float, lam1: float, v0: float,
                         cross_check: bool = True) -> ProbabilityResult:
    """Probability that the damped problem never quenches.

    Equals ``Q(a, 2 / (9 kappa^2 c))`` with ``a = -mu`` and ``c = v0^3 / (3 lam)``;
    :meth:`ProbabilityResult.complement` gives the quench lower bound.
    """
    _check_no_quench_args(lam, kappa, gamma, lam1, v0)
    a = no_quench_shape(kappa, gamma, lam1)
    c = v0**3 / (3.0 * lam)
    params = dict(lam=lam, kappa=kappa, gamma=gamma, lam1=lam1, v0=v0, mu=-a, c=c)
    if a == 0:
        p = 0.0
    else:
        p = gammainc_pair(a, 2.0 / (9.0 * kappa**2 * c))[1]
    err = 0.0
    if cross_check and a > 0:
        q, qerr = prob_no_quench_quadrature(lam, kappa, gamma, lam1, v0)
        err = abs(q - p) + qerr
    return ProbabilityResult(p, "no_quench", params, err, "quench_lower_bound")


def flipped_sign_no_quench_formula(lam: float, kappa: float, gamma: float, lam1: float,
                              v0: float) -> float:
    """The variant with density ``(9 kappa^2 y / 2)^{+a} / (y Gamma(a)) e^{-2/(9 kappa^2 y)}``.

    Kept only to locate the interior maximum it produces in ``gamma``; it is
    not a probability (it exceeds 1 for some parameters).
    """
    _check_no_quench_args(lam, kappa, gamma, lam1, v0)
    a = no_quench_shape(kappa, gamma, lam1)
    c = v0**3 / (3.0 * lam)
    k = 9.0 * kappa**2
    f = lambda y: math.exp(a * math.log(k * y / 2.0) - 2.0 / (k * y) - math.lgamma(a)) / y
    val, _ = integrate.quad(f, 0.0, c, limit=500, epsrel=1e-12)
    return val


def rho_parameter(v0: float, lam: float, omega: float) -> float:
    """``rho = v0^3 / (3 lam omega)`` with ``omega`` the maximum of h."""
    if not (v0 > 0 and lam > 0 and omega > 0):
        raise ValueError("v0, lam and omega must be > 0")
    return v0**3 / (3.0 * lam * omega)


def constant_C_bounded(L: float) -> float:
    """Constant for a noise amplitude bounded by ``L``: ``C = 1 / L^2``."""
    if not L > 0:
        raise ValueError(f"L must be > 0, got {L}")
    return 1.0 / L**2


def prob_bounds_general(lam1: float, rho: float, C: float) -> ProbabilityResult:
    """Upper bound on the no-quench probability of the general model.

    ``Q(-mu, 2C / (9 rho))`` with ``mu = (1 - lam1) / 3``; the complement is
    the quench lower bound.
    """
    if not lam1 > 1:
        raise ValueError(f"lam1 = {lam1} <= 1: quenching happens almost surely")
    if not rho > 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    if not C > 0:
        raise ValueError(f"C must be > 0, got {C}")
    a = (lam1 - 1.0) / 3.0
    x = 2.0 * C / (9.0 * rho)
    p = gammainc_pair(a, x)[1]
    q, qerr = integrate.quad(lambda y: math.exp((a - 1) * math.log(y) - y - math.lgamma(a)),
                             x, math.inf, limit=500, epsrel=1e-12)
    return ProbabilityResult(p, "general_no_quench_upper_bound",
                             dict(lam1=lam1, rho=rho, C=C, mu=-a, x=x),
                             abs(q - p) + qerr, "general_quench_lower_bound")


def tail_safe_horizon(drift: float, vol: float, level: float = TAIL_LEVEL) -> float:
    """Smallest H with ``exp(drift H + 6 vol sqrt(H)) <= level``.

    Past H the integrand is below ``level`` times its starting value except
    on a six-sigma event of the driving motion.
    """
    if not drift < 0:
        raise ValueError(f"drift must be < 0 for a finite integral, got {drift}")
    L = -math.log(level)
    s = (6.0 * vol + math.sqrt(36.0 * vol**2 + 4.0 * abs(drift) * L)) / (2.0 * abs(drift))
    return s * s


@njit(cache=True)
def _accumulate(Z, cols, X, prev, A, sq, drift_dt, half_dt):
    """Advance the paths ``cols`` through the steps of ``Z`` (rows are steps)."""
    for j in range(cols.size):
        c = cols[j]
        x = X[c]
        e0 = prev[c]
        acc = A[c]
        for k in range(Z.shape[0]):
            x += sq * Z[k, c] + drift_dt
            e1 = math.exp(x)
            acc += half_dt * (e0 + e1)
            e0 = e1
        X[c] = x
        prev[c] = e0
        A[c] = acc


def sample_exponential_functional(drift: float, vol: float, n_paths: int, dt: float,
                                  horizon: float, seed: int, stop_above: float | None = None,
                                  batch: int = 10_000, chunk: int = 200) -> np.ndarray:
    """Trapezoid samples of ``int_0^H exp(vol W_s + drift s) ds``.

    Batch ``b`` of paths draws from ``derive_seed(seed, b)``. With
    ``stop_above``, paths are frozen once their running integral exceeds
    it (only the event ``A <= stop_above`` is then meaningful); the draws
    do not depend on which paths are frozen.
    """
    if horizon < tail_safe_horizon(drift, vol):
        raise ValueError(
            f"horizon {horizon} too short: tail exp(drift H + 6 vol sqrt(H)) exceeds {TAIL_LEVEL}")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    n_steps = int(math.ceil(horizon / dt))
    out = np.empty(n_paths)
    sq = vol * math.sqrt(dt)
    for b, start in enumerate(range(0, n_paths, batch)):
        n = min(batch, n_paths - start)
        gen = make_generator(derive_seed(seed, b))
        X = np.zeros(n)
        prev = np.ones(n)
        A = np.zeros(n)
        live = np.arange(n)
        done = 0
        while done < n_steps and live.size:
            k = min(chunk, n_steps - done)
            _accumulate(gen.standard_normal((k, n)), live, X, prev, A, sq, drift * dt, 0.5 * dt)
            done += k
            if stop_above is not None:
                live = live[A[live] <= stop_above]
        out[start:start + n] = A
    return out


def mc_no_quench_probability(lam: float, kappa: float, gamma: float, lam1: float, v0: float,
                             n_paths: int, dt: float, seed: int,
                             horizon: float | None = None) -> tuple[float, float]:
    """Direct MC of ``P[int_0^inf exp(3 kappa W + 3 (lam1 - gamma + kappa^2/2) s) ds <= c]``.

    Returns ``(estimate, binomial standard error)``.
    """
    _check_no_quench_args(lam, kappa, gamma, lam1, v0)
    drift = 3.0 * (lam1 - gamma + 0.5 * kappa**2)
    vol = 3.0 * kappa
    c = v0**3 / (3.0 * lam)
    H = tail_safe_horizon(drift, vol) if horizon is None else horizon
    A = sample_exponential_functional(drift, vol, n_paths, dt, H, seed, stop_above=c)
    p = float(np.mean(A <= c))
    return p, math.sqrt(max(p * (1 - p), 1e-300) / n_paths)


@dataclass
class DufresneReport:
    mu: float
    n_paths: int
    horizon: float
    dt: float
    seed: int
    ks_statistic: float
    p_value: float
    samples: np.ndarray = field(repr=False, default=None)


def dufresne_mc_check(mu: float, n_paths: int = 100_000, horizon: float | None = None,
                      dt: float = 0.01, seed: int = 0) -> DufresneReport:
    """KS distance between sampled ``int_0^H e^{2(W_s + mu s)} ds`` and ``1/(2 Z_{-mu})``.

    The default horizon is ``max(50, 25/|mu|)``, lengthened if the tail rule
    of :func:`tail_safe_horizon` needs more.
    """
    if not mu < 0:
        raise ValueError(f"mu must be < 0, got {mu}")
    need = tail_safe_horizon(2.0 * mu, 2.0)
    if horizon is None:
        horizon = max(50.0, 25.0 / abs(mu), need)
    A = sample_exponential_functional(2.0 * mu, 2.0, n_paths, dt, horizon, seed)
    law = stats.invgamma(-mu, scale=0.5)
    res = stats.kstest(A, law.cdf)
    return DufresneReport(mu, n_paths, horizon, dt, seed, float(res.statistic),
                          float(res.pvalue), A)


@dataclass
class OrderingReport:
    holds: bool
    max_violation: float
    tol: float
    T_q: float | None
    tau_bound: float | None
    n_checked: int
    quench_before_bound: bool
    times: np.ndarray = field(repr=False, default=None)
    lhs: np.ndarray = field(repr=False, default=None)
    bound: np.ndarray = field(repr=False, default=None)


def pathwise_ordering_check(spec: ModelSpec, grid: Grid1D, N: int, T: float, seed: int,
                            tol: float | None = None, quad_refine: int = 10) -> OrderingReport:
    """Compare ``e^{kappa W_t} z_t(phi)`` from a simulation with B(t) on the same path.

    Needs Robin data with ``beta_c = beta`` and spatially constant noise.
    ``z_t(phi)`` is integrated exactly enough by Simpson on a grid refining
    every element ``quad_refine`` times.
    """
    if spec.bc.is_dirichlet or spec.bc.beta_c != spec.bc.beta:
        raise ValueError("ordering check needs Robin data with beta_c == beta")
    if spec.noise_kind != "scalar":
        raise ValueError("ordering check needs spatially constant (scalar) noise")
    if spec.kappa_fn is not None or spec.time_dependent_g or spec.h_exponent not in (None, 0):
        raise ValueError("ordering check needs constant g, h and kappa")
    dt = T / N
    dx = grid.dx
    tol = 10.0 * (dt + dx * dx) if tol is None else tol
    eig = principal_eigenpair(spec.bc, n_quad=grid.M * 2 * quad_refine + 1)
    path = sample_scalar_brownian(N, T, seed)
    realization = simulate_path(spec, grid, N, 1, T, seed, snapshot_every=1, record_max=False)

    def z_phi(u):
        return float(integrate.simpson((1.0 - np.interp(eig.x, grid.nodes, u)) * eig.phi, x=eig.x))

    B0 = z_phi(realization.snapshots[0][1])
    bb = bernoulli_bound(path, spec.lam, spec.kappa, spec.gamma, eig.lam1, B0)
    times, lhs, bound = [], [], []
    for t, u in realization.snapshots:
        if realization.quenched and t >= realization.T_q:
            break
        n = int(round(t / dt))
        times.append(t)
        lhs.append(math.exp(spec.kappa * path.values[n]) * z_phi(u))
        bound.append(bb.values[n])
    lhs = np.array(lhs)
    bound = np.array(bound)
    # past tau the bound has vanished, so any positive z violates it
    gap = lhs - np.where(np.isnan(bound), 0.0, bound)
    max_violation = float(np.max(gap)) if gap.size else -math.inf
    quench_ok = (realization.quenched and bb.tau is not None
                 and realization.T_q <= bb.tau + dt)
    return OrderingReport(bool(max_violation <= tol), max_violation, tol, realization.T_q,
                          bb.tau, len(times), bool(quench_ok), np.array(times), lhs, bound)


def write_curve_csv(path, param: str, values: Sequence[float],
                    results: Sequence[ProbabilityResult], header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["param", "value", "p_no_quench", "p_quench_lb"])
        for v, r in zip(values, results):
            w.writerow([param, repr(float(v)), repr(r.value), repr(1.0 - r.value)])
