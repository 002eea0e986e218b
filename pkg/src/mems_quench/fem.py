"""Linear finite elements and the semi-implicit Euler scheme on [0, 1].

The u-equation

    du = (g(t) u_xx + lam e^{-3 gamma t} h(x) / (1 - u)^2) dt + kappa(t) (1 - u) dW

is discretized with hat functions on a uniform grid. Diffusion is implicit,
the singular source and the multiplicative noise are explicit:

    (A + dt g(t_n) B) a^{n+1} = A a^n + dt (b(a^n, t_n) + b_bc) + b_s(a^n, dW^n)

where ``A`` is the mass matrix, ``B`` the stiffness matrix, ``b`` the
Galerkin projection of the source, ``b_bc`` the Robin boundary data and
``b_s`` the projection of sigma(u_h) dW_h. The increment dW already carries
its sqrt(dt) scaling, so ``b_s`` enters without a dt factor.

Dirichlet problems carry the M - 1 interior nodal values; Robin problems
carry all M + 1 nodes.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from .noise import IncrementStream, build_qwiener_spec, sample_scalar_brownian
from .tridiag import fused_step, ldl_factor, ldl_solve

__all__ = [
    "Grid1D",
    "BoundaryCondition",
    "ModelSpec",
    "SolverState",
    "PathRealization",
    "BlockResult",
    "SymTridiag",
    "Quenched",
    "SingularSystemError",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_reaction",
    "assemble_noise_load",
    "boundary_load",
    "step",
    "simulate_path",
    "run_block",
    "write_snapshots_csv",
    "write_realizations_csv",
]

# 3-point Gauss-Legendre on the reference element [0, 1]
GAUSS_NODES = 0.5 + np.array([-np.sqrt(15.0) / 10.0, 0.0, np.sqrt(15.0) / 10.0])
GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


class Quenched(Exception):
    """Raised when a nodal value reaches the quench threshold."""

    def __init__(self, max_value: float, threshold: float):
        super().__init__(f"max nodal value {max_value:.6g} >= threshold {threshold:.6g}")
        self.max_value = max_value
        self.threshold = threshold


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Grid1D:
    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 3:
            raise ValueError(f"grid needs M >= 3 intervals, got {self.M}")
        object.__setattr__(self, "M", int(self.M))

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M

    @property
    def gauss_points(self) -> np.ndarray:
        """Quadrature points, shape ``(M, 3)``."""
        left = np.arange(self.M)[:, None] / self.M
        return left + GAUSS_NODES[None, :] * self.dx


@dataclass(frozen=True)
class BoundaryCondition:
    """Homogeneous Dirichlet, or Robin ``du/dnu + beta u = beta_c``."""

    kind: str = "dirichlet"
    beta: float = 0.0
    beta_c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin"):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.beta_c < 0:
            raise ValueError(f"beta_c must be >= 0, got {self.beta_c}")

    @classmethod
    def dirichlet(cls) -> "BoundaryCondition":
        return cls("dirichlet")

    @classmethod
    def robin(cls, beta: float, beta_c: float | None = None) -> "BoundaryCondition":
        return cls("robin", float(beta), float(beta if beta_c is None else beta_c))

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == "dirichlet"

    def dofs(self, grid: Grid1D) -> slice:
        return slice(1, grid.M) if self.is_dirichlet else slice(0, grid.M + 1)

    def n_dofs(self, grid: Grid1D) -> int:
        return grid.M - 1 if self.is_dirichlet else grid.M + 1


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients, initial profile and noise of one stochastic problem.

    ``g(t) = g0 + g1 cos(g_omega t)``; ``h(x) = x ** h_exponent`` (``None`` for
    h = 1); the noise amplitude is ``kappa`` unless ``kappa_fn`` is given.
    The initial profile is ``u0_amplitude * x (1 - x)`` unless ``u0_nodal``
    tabulates nodal values.
    """

    lam: float
    kappa: float = 0.0
    gamma: float = 0.0
    bc: BoundaryCondition = field(default_factory=BoundaryCondition.dirichlet)
    g0: float = 1.0
    g1: float = 0.0
    g_omega: float = 0.0
    h_exponent: float | None = None
    kappa_fn: Callable[[float], float] | None = None
    u0_amplitude: float = 0.1
    u0_nodal: tuple | None = None
    quench_delta: float = 0.01
    noise_kind: str = "qwiener"
    noise_regularity: float = 0.1
    noise_epsilon: float = 0.01
    noise_modes: int | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.quench_delta < 1:
            raise ValueError(f"quench threshold must lie in (0, 1), got {self.quench_delta}")
        if self.g0 - abs(self.g1) <= 0:
            raise ValueError("g(t) = g0 + g1 cos(omega t) must stay positive")
        if self.h_exponent is not None and self.h_exponent < 0:
            raise ValueError("h exponent must be >= 0")
        if self.noise_kind not in ("qwiener", "scalar"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.u0_nodal is not None:
            object.__setattr__(self, "u0_nodal", tuple(float(v) for v in self.u0_nodal))

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)

    @property
    def threshold(self) -> float:
        return 1.0 - self.quench_delta

    @property
    def time_dependent_g(self) -> bool:
        return self.g1 != 0.0 and self.g_omega != 0.0

    def g(self, t: float) -> float:
        return self.g0 + self.g1 * np.cos(self.g_omega * t)

    def kappa_at(self, t: float) -> float:
        return float(self.kappa_fn(t)) if self.kappa_fn is not None else self.kappa

    def h(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.h_exponent is None:
            return np.ones_like(x)
        return x**self.h_exponent

    def initial_nodal(self, grid: Grid1D) -> np.ndarray:
        if self.u0_nodal is not None:
            u0 = np.array(self.u0_nodal)
            if u0.shape != (grid.M + 1,):
                raise ValueError(f"tabulated u0 has {u0.size} values, grid has {grid.M + 1} nodes")
        else:
            x = grid.nodes
            u0 = self.u0_amplitude * x * (1.0 - x)
        if self.bc.is_dirichlet:
            u0 = u0.copy()
            u0[0] = u0[-1] = 0.0
        if np.any(u0 < 0) or np.any(u0 >= 1):
            raise ValueError("initial profile must satisfy 0 <= u0 < 1")
        return u0

    def qwiener(self, grid: Grid1D):
        J = grid.M - 1 if self.noise_modes is None else self.noise_modes
        return build_qwiener_spec(J, self.noise_regularity, self.noise_epsilon)


@dataclass(frozen=True)
class SymTridiag:
    """Symmetric tridiagonal matrix stored by its diagonal and off-diagonal."""

    diag: np.ndarray
    off: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.size

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Row-wise product; ``x`` may be a batch of shape ``(..., n)``."""
        y = self.diag * x
        y[..., :-1] += self.off * x[..., 1:]
        y[..., 1:] += self.off * x[..., :-1]
        return y

    def plus(self, c: float, other: "SymTridiag") -> "SymTridiag":
        return SymTridiag(self.diag + c * other.diag, self.off + c * other.off)

    def factor(self):
        """LDL^T factor ``(l, d)``; raises if the matrix is not positive definite."""
        l, d = ldl_factor(np.ascontiguousarray(self.diag, dtype=float),
                          np.ascontiguousarray(self.off, dtype=float))
        if not np.all(d > 0):
            raise SingularSystemError("tridiagonal system is not positive definite")
        return l, d

    def solve(self, rhs: np.ndarray, factor=None) -> np.ndarray:
        l, d = self.factor() if factor is None else factor
        return ldl_solve(l, d, np.ascontiguousarray(rhs, dtype=float))


def assemble_mass(grid: Grid1D, bc: BoundaryCondition) -> SymTridiag:
    n = bc.n_dofs(grid)
    dx = grid.dx
    diag = np.full(n, 2.0 * dx / 3.0)
    if not bc.is_dirichlet:
        diag[0] = diag[-1] = dx / 3.0
    return SymTridiag(diag, np.full(n - 1, dx / 6.0))


def assemble_stiffness(grid: Grid1D, bc: BoundaryCondition) -> SymTridiag:
    n = bc.n_dofs(grid)
    dx = grid.dx
    diag = np.full(n, 2.0 / dx)
    if not bc.is_dirichlet:
        diag[0] = diag[-1] = 1.0 / dx + bc.beta
    return SymTridiag(diag, np.full(n - 1, -1.0 / dx))


def _full(a: np.ndarray, bc: BoundaryCondition, grid: Grid1D) -> np.ndarray:
    if not bc.is_dirichlet:
        return a
    U = np.zeros(a.shape[:-1] + (grid.M + 1,))
    U[..., 1:-1] = a
    return U


def _at_gauss(U: np.ndarray) -> np.ndarray:
    """Interpolate nodal values to the quadrature points, ``(..., M, 3)``."""
    return U[..., :-1, None] * (1.0 - GAUSS_NODES) + U[..., 1:, None] * GAUSS_NODES


# per-element weights of the left and right hat function at the Gauss points
_W_LEFT = GAUSS_WEIGHTS * (1.0 - GAUSS_NODES)
_W_RIGHT = GAUSS_WEIGHTS * GAUSS_NODES


def _project(f: np.ndarray, dx: float) -> np.ndarray:
    """Integrate Gauss-point values ``f`` against every hat function."""
    left = (f[..., 0] * _W_LEFT[0] + f[..., 1] * _W_LEFT[1] + f[..., 2] * _W_LEFT[2]) * dx
    right = (f[..., 0] * _W_RIGHT[0] + f[..., 1] * _W_RIGHT[1] + f[..., 2] * _W_RIGHT[2]) * dx
    out = np.zeros(f.shape[:-2] + (f.shape[-2] + 1,))
    out[..., :-1] += left
    out[..., 1:] += right
    return out


def assemble_reaction(a_u: np.ndarray, spec: ModelSpec, t: float, grid: Grid1D,
                      h_gauss: np.ndarray | None = None) -> np.ndarray:
    """Galerkin projection of ``lam e^{-3 gamma t} h(x) / (1 - u_h)^2``."""
    a_u = np.asarray(a_u, dtype=float)
    if a_u.shape[-1] != spec.bc.n_dofs(grid):
        raise ValueError("coefficient vector does not match the grid")
    U = _full(a_u, spec.bc, grid)
    peak = float(np.max(U))
    if not peak < spec.threshold:
        raise Quenched(peak, spec.threshold)
    return _reaction(U, spec, t, grid, h_gauss)[..., spec.bc.dofs(grid)]


def _reaction(U, spec, t, grid, h_gauss=None):
    if h_gauss is None:
        h_gauss = spec.h(grid.gauss_points)
    coef = spec.lam * np.exp(-3.0 * spec.gamma * t) if spec.gamma else spec.lam
    Ug = _at_gauss(U)
    return _project(coef * h_gauss / (1.0 - Ug) ** 2, grid.dx)


def assemble_noise_load(a_u: np.ndarray, kappa: float, dW: np.ndarray, grid: Grid1D,
                        bc: BoundaryCondition) -> np.ndarray:
    """Projection of ``kappa (1 - u_h) dW_h`` with dW_h the nodal interpolant."""
    a_u = np.asarray(a_u, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] != grid.M + 1:
        raise ValueError(f"increment row has {dW.shape[-1]} entries, grid has {grid.M + 1} nodes")
    if a_u.shape[-1] != bc.n_dofs(grid):
        raise ValueError("coefficient vector does not match the grid")
    U = _full(a_u, bc, grid)
    return _noise(U, kappa, dW, grid)[..., bc.dofs(grid)]


def _noise(U, kappa, dW, grid):
    return _project(kappa * (1.0 - _at_gauss(U)) * _at_gauss(dW), grid.dx)


def boundary_load(spec: ModelSpec, grid: Grid1D, t: float) -> np.ndarray:
    """Robin data ``g(t) beta_c`` at the two end nodes (zero for Dirichlet)."""
    b = np.zeros(spec.bc.n_dofs(grid))
    if not spec.bc.is_dirichlet:
        b[0] = b[-1] = spec.g(t) * spec.bc.beta_c
    return b


@dataclass
class SolverState:
    a: np.ndarray
    t: float = 0.0
    n: int = 0


def step(state: SolverState, A: SymTridiag, B: SymTridiag, spec: ModelSpec, grid: Grid1D,
         dW: np.ndarray, dt: float) -> SolverState:
    """Advance one semi-implicit Euler step of length ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    b = assemble_reaction(state.a, spec, state.t, grid) + boundary_load(spec, grid, state.t)
    bs = assemble_noise_load(state.a, spec.kappa_at(state.t), dW, grid, spec.bc)
    K = A.plus(dt * spec.g(state.t), B)
    rhs = A.matvec(state.a) + dt * b + bs
    return SolverState(K.solve(rhs), state.t + dt, state.n + 1)


class _ScalarStream:
    """Spatially constant noise driven by one scalar Brownian motion."""

    def __init__(self, n_nodes: int, N: int, m: int, T: float, seed: int):
        path = sample_scalar_brownian(N * m, T, seed)
        self._dW = np.diff(path.values[::m])
        self._ref = np.diff(path.values)
        self.m = m
        self.n_nodes = n_nodes
        self._pos = 0

    def take(self, n_coarse: int):
        s = slice(self._pos, self._pos + n_coarse)
        coarse = np.repeat(self._dW[s, None], self.n_nodes, axis=1)
        r = self._ref[self._pos * self.m:(self._pos + n_coarse) * self.m]
        ref = np.repeat(r[:, None], self.n_nodes, axis=1)
        self._pos += n_coarse
        return coarse, ref, None


def _make_stream(spec: ModelSpec, grid: Grid1D, N: int, m: int, T: float, seed: int,
                 keep_reference: bool):
    if spec.noise_kind == "scalar":
        return _ScalarStream(grid.M + 1, N, m, T, seed)
    return IncrementStream(spec.qwiener(grid), grid.M, T / (N * m), m, seed,
                           keep_reference=keep_reference)


class _Integrator:
    """Batched scheme on full nodal arrays ``(R, M + 1)``; rows are independent."""

    def __init__(self, spec: ModelSpec, grid: Grid1D, g_rtol: float = 1e-12):
        self.spec = spec
        self.grid = grid
        self.A = assemble_mass(grid, spec.bc)
        self.B = assemble_stiffness(grid, spec.bc)
        self.lo = 1 if spec.bc.is_dirichlet else 0
        self.h_gauss = np.ascontiguousarray(spec.h(grid.gauss_points))
        self.g_rtol = g_rtol
        self._factors = {}

    def _factor(self, dt: float, g: float):
        cached = self._factors.get(dt)
        if cached is not None and abs(cached[0] - g) <= self.g_rtol * abs(g):
            return cached[1]
        fac = self.A.plus(dt * g, self.B).factor()
        self._factors[dt] = (g, fac)
        return fac

    def advance(self, U: np.ndarray, t: float, dt: float, dW: np.ndarray) -> np.ndarray:
        spec = self.spec
        coef = dt * spec.lam * (np.exp(-3.0 * spec.gamma * t) if spec.gamma else 1.0)
        g = spec.g(t)
        bnd = 0.0 if spec.bc.is_dirichlet else dt * g * spec.bc.beta_c
        l, d = self._factor(dt, g)
        out = np.zeros_like(U)
        fused_step(U, dW, self.h_gauss, float(coef), float(spec.kappa_at(t)), self.grid.dx,
                   self.lo, self.A.diag, self.A.off, float(bnd), l, d, out)
        return out

    def peak(self, U: np.ndarray) -> np.ndarray:
        return np.max(U, axis=-1)


@dataclass
class BlockResult:
    seeds: np.ndarray
    quenched: np.ndarray
    T_q: np.ndarray
    max_u: np.ndarray
    nonfinite: np.ndarray
    snapshots: list = field(default_factory=list)
    max_history: tuple | None = None
    final_states: np.ndarray | None = None


def run_block(spec: ModelSpec, grid: Grid1D, N: int, m: int, T: float, seeds: Sequence[int],
              *, snapshot_every: int = 0, record_max: bool = False, chunk: int = 64,
              refine_above: float | None = None) -> BlockResult:
    """Integrate one realization per seed, vectorized across realizations.

    Quench is declared at the first step whose maximum nodal value reaches
    ``1 - quench_delta``; ``T_q`` is the time at the end of that step. A
    non-finite state is counted as quenched at the last valid time and
    flagged in ``nonfinite``. Finished rows are dropped from the batch;
    every row evolves exactly as it would alone.

    ``refine_above`` switches a step to ``m`` reference substeps for rows
    whose maximum already exceeds that value (has no effect when m = 1).
    Snapshots (``snapshot_every > 0``) and the max history are recorded for
    the first row only. ``final_states`` holds the nodal values at ``T`` of
    the rows that did not quench (NaN rows otherwise).
    """
    if not T > 0:
        raise ValueError(f"horizon must be > 0, got {T}")
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if int(m) != m or m < 1:
        raise ValueError(f"refinement m must be a positive integer, got {m}")
    N, m = int(N), int(m)
    seeds = np.asarray(seeds, dtype=np.uint64)
    R = seeds.size
    dt = T / N
    dt_ref = T / (N * m)
    refine = refine_above is not None and m > 1
    integ = _Integrator(spec, grid)
    threshold = spec.threshold

    u0 = spec.initial_nodal(grid)
    if u0.max() >= threshold:
        raise ValueError("initial profile is already above the quench threshold")
    streams = [_make_stream(spec, grid, N, m, T, int(s), keep_reference=refine) for s in seeds]

    quenched = np.zeros(R, dtype=bool)
    nonfinite = np.zeros(R, dtype=bool)
    T_q = np.full(R, np.nan)
    max_u = np.full(R, u0.max())
    idx = np.arange(R)
    a = np.tile(u0, (R, 1))

    snapshots = []
    hist_t, hist_m = ([0.0], [u0.max()]) if record_max else (None, None)
    track = snapshot_every > 0 or record_max
    if snapshot_every > 0:
        snapshots.append((0.0, u0.copy()))

    n = 0
    while n < N and idx.size:
        C = min(chunk, N - n)
        coarse = np.empty((idx.size, C, grid.M + 1))
        ref = np.empty((idx.size, C, m, grid.M + 1)) if refine else None
        for row, r in enumerate(idx):
            c_inc, r_inc, _ = streams[r].take(C)
            coarse[row] = c_inc
            if refine:
                ref[row] = r_inc.reshape(C, m, grid.M + 1)
        for k in range(C):
            t = (n + k) * dt
            t_next = (n + k + 1) * dt
            a_new = integ.advance(a, t, dt, coarse[:, k])
            hit_time = np.full(idx.size, t_next)
            if refine:
                sel = np.nonzero(integ.peak(a) >= refine_above)[0]
                if sel.size:
                    a_sub, t_hit = _substeps(integ, a[sel], t, dt_ref, ref[sel, k], threshold)
                    a_new[sel] = a_sub
                    hit_time[sel] = np.where(np.isnan(t_hit), t_next, t_hit)
            peak = integ.peak(a_new)
            bad = ~np.isfinite(peak)
            hit = bad | (peak >= threshold)
            if track and idx.size and idx[0] == 0:
                if record_max:
                    hist_t.append(t_next)
                    hist_m.append(float(peak[0]))
                if snapshot_every > 0 and (hit[0] or (n + k + 1) % snapshot_every == 0
                                           or n + k + 1 == N):
                    snapshots.append((t_next, a_new[0].copy()))
            if hit.any():
                rows = idx[hit]
                quenched[rows] = True
                nonfinite[rows] = bad[hit]
                T_q[rows] = np.where(bad[hit], t, hit_time[hit])
                max_u[rows] = np.where(bad[hit], max_u[rows], peak[hit])
                keep = ~hit
                idx, a, a_new, peak = idx[keep], a[keep], a_new[keep], peak[keep]
                coarse = coarse[keep]
                if refine:
                    ref = ref[keep]
            a = a_new
            max_u[idx] = peak
            if not idx.size:
                break
        n += C

    final = np.full((R, grid.M + 1), np.nan)
    final[idx] = a
    result = BlockResult(seeds, quenched, T_q, max_u, nonfinite, snapshots, final_states=final)
    if record_max:
        result.max_history = (np.array(hist_t), np.array(hist_m))
    return result


def _substeps(integ: _Integrator, a: np.ndarray, t: float, dt_ref: float, ref: np.ndarray,
              threshold: float):
    t_hit = np.full(a.shape[0], np.nan)
    live = np.ones(a.shape[0], dtype=bool)
    for s in range(ref.shape[1]):
        a_next = integ.advance(a, t + s * dt_ref, dt_ref, ref[:, s])
        a = np.where(live[:, None], a_next, a)
        peak = integ.peak(a)
        newly = live & ~(peak < threshold)
        t_hit[newly] = t + (s + 1) * dt_ref
        live &= ~newly
        if not live.any():
            break
    return a, t_hit


@dataclass
class PathRealization:
    quenched: bool
    T_q: float | None
    final_max: float
    seed: int
    nonfinite: bool = False
    snapshots: list = field(default_factory=list)
    max_history: tuple | None = None

    @property
    def z_view(self) -> list:
        """Snapshots of z = 1 - u."""
        return [(t, 1.0 - u) for t, u in self.snapshots]


def simulate_path(spec: ModelSpec, grid: Grid1D, N: int, m: int, T: float, seed: int, *,
                  snapshot_every: int = 0, record_max: bool = True,
                  refine_above: float | None = None) -> PathRealization:
    """One realization from ``u0``; deterministic given its arguments."""
    res = run_block(spec, grid, N, m, T, [seed], snapshot_every=snapshot_every,
                    record_max=record_max, refine_above=refine_above)
    q = bool(res.quenched[0])
    return PathRealization(
        quenched=q,
        T_q=float(res.T_q[0]) if q else None,
        final_max=float(res.max_u[0]),
        seed=int(seed),
        nonfinite=bool(res.nonfinite[0]),
        snapshots=res.snapshots,
        max_history=res.max_history,
    )


def write_snapshots_csv(path, realization: PathRealization, grid: Grid1D, header: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for t, u in realization.snapshots:
            for x, val in zip(grid.nodes, u):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(val))])


def write_realizations_csv(path, rows: Sequence[PathRealization], header: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["seed", "quenched", "T_q", "max_u"])
        for r in rows:
            w.writerow([r.seed, int(r.quenched), "" if r.T_q is None else repr(r.T_q),
                        repr(r.final_max)])
