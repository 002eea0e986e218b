"""Q-Wiener space-time noise and scalar Brownian paths.

The noise is the truncated expansion

    W_h(x, t) = sum_j sqrt(q_j) chi_j(x) beta_j(t),   chi_j(x) = sqrt(2) sin(j pi x)

sampled on the nodes of a uniform grid. Every realization owns one
sequential PCG64 stream seeded from a 64-bit integer; the stream is consumed
in blocks of ``mode_count`` standard normals per *reference* step, so the
draws attached to reference step ``k`` depend only on ``(seed, k)``. Coarse
increments are sums of ``m`` consecutive reference increments, which makes a
path sampled with refinement ``m`` the exact aggregate of the same seed
sampled at the reference resolution.

Mode synthesis uses a type-I discrete sine transform: on the nodes
``x_i = i / M`` the matrix ``sqrt(2) sin(j pi x_i)`` for ``i, j = 1..M-1`` is a
scaled DST-I, and the transform is evaluated row by row, so results do not
depend on how many rows are processed together.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import fft

if TYPE_CHECKING:
    from .fem import Grid1D

__all__ = [
    "QWienerSpec",
    "NoisePath",
    "ScalarBrownianPath",
    "IncrementStream",
    "build_qwiener_spec",
    "sample_increments",
    "sample_scalar_brownian",
    "derive_seed",
    "make_generator",
    "write_noise_csv",
]


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit seed of realization ``index`` under ``master_seed``.

    Uses ``SeedSequence`` spawn keys, so seeds of different indices are
    statistically independent and do not depend on any execution order.
    """
    if index < 0:
        raise ValueError(f"realization index must be >= 0, got {index}")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class QWienerSpec:
    """Spectral description of the noise covariance.

    ``eigenvalues[j - 1]`` is q_j. The first mode carries no energy; modes
    ``2l`` and ``2l + 1`` share the value ``l ** -(2 r + 1 + epsilon)``.
    """

    mode_count: int
    regularity: float
    epsilon: float
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    def eigenfunctions(self, x: np.ndarray) -> np.ndarray:
        """chi_j(x) for j = 1..J, shape ``(J, len(x))``."""
        j = np.arange(1, self.mode_count + 1)
        return np.sqrt(2.0) * np.sin(np.pi * np.outer(j, np.asarray(x, dtype=float)))

    def pointwise_variance(self, x: np.ndarray, dt: float) -> np.ndarray:
        """Variance of a coarse increment of length ``dt`` at points ``x``."""
        chi = self.eigenfunctions(x)
        return dt * (self.eigenvalues @ chi**2)


def build_qwiener_spec(mode_count: int, regularity: float = 0.1,
                       epsilon: float = 0.01) -> QWienerSpec:
    if int(mode_count) != mode_count or mode_count < 1:
        raise ValueError(f"mode count must be a positive integer, got {mode_count}")
    if not regularity > 0:
        raise ValueError(f"regularity must be > 0, got {regularity}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    mode_count = int(mode_count)
    j = np.arange(1, mode_count + 1)
    l = (j // 2).astype(float)
    q = np.zeros(mode_count)
    nz = j >= 2
    q[nz] = l[nz] ** (-(2.0 * regularity + 1.0 + epsilon))
    q.setflags(write=False)
    return QWienerSpec(mode_count, float(regularity), float(epsilon), q)


class IncrementStream:
    """Sequential producer of nodal increments for one realization.

    ``take(n)`` returns the next ``n`` coarse increments, shape
    ``(n, M + 1)``; boundary nodes are always zero because every chi_j
    vanishes there.
    """

    def __init__(self, spec: QWienerSpec, n_intervals: int, dt_ref: float,
                 refinement: int, seed: int, keep_reference: bool = False):
        if spec.mode_count > n_intervals - 1:
            raise ValueError(
                f"mode count {spec.mode_count} exceeds the {n_intervals - 1} "
                f"interior nodes of the grid")
        if refinement < 1:
            raise ValueError(f"refinement must be >= 1, got {refinement}")
        if not dt_ref > 0:
            raise ValueError(f"reference step must be > 0, got {dt_ref}")
        self.spec = spec
        self.M = int(n_intervals)
        self.m = int(refinement)
        self.dt_ref = float(dt_ref)
        self.seed = int(seed)
        self.keep_reference = keep_reference
        self._gen = make_generator(seed)
        # sqrt(2)/2 turns the DST-I kernel 2 sin(.) into chi_j = sqrt(2) sin(.)
        self._scale = np.sqrt(self.dt_ref) * np.sqrt(spec.eigenvalues) * (np.sqrt(2.0) / 2.0)
        self.reference_steps_drawn = 0

    def reference_normals(self, n_ref: int) -> np.ndarray:
        xi = self._gen.standard_normal((n_ref, self.spec.mode_count))
        self.reference_steps_drawn += n_ref
        return xi

    def synthesize(self, xi: np.ndarray) -> np.ndarray:
        """Nodal increments for rows of mode coefficients ``xi``."""
        n_ref = xi.shape[0]
        coef = np.zeros((n_ref, self.M - 1))
        coef[:, : self.spec.mode_count] = xi * self._scale
        out = np.zeros((n_ref, self.M + 1))
        out[:, 1:-1] = fft.dst(coef, type=1, axis=-1)
        return out

    def take(self, n_coarse: int):
        """Return ``(coarse, reference, xi)`` for the next ``n_coarse`` steps.

        ``reference`` and ``xi`` are ``None`` unless ``keep_reference``.
        """
        xi = self.reference_normals(n_coarse * self.m)
        ref = self.synthesize(xi)
        coarse = aggregate(ref, self.m)
        if self.keep_reference:
            return coarse, ref, xi
        return coarse, None, None


def aggregate(reference: np.ndarray, m: int) -> np.ndarray:
    """Sum consecutive groups of ``m`` reference rows, left to right."""
    if m == 1:
        return reference
    if reference.shape[0] % m:
        raise ValueError("reference row count is not a multiple of m")
    grouped = reference.reshape(reference.shape[0] // m, m, *reference.shape[1:])
    acc = grouped[:, 0].copy()
    for k in range(1, m):
        acc += grouped[:, k]
    return acc


@dataclass
class NoisePath:
    dt: float
    refinement: int
    dt_ref: float
    increments: np.ndarray
    seed: int
    nodes: np.ndarray
    reference_increments: np.ndarray | None = None
    mode_coefficients: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    def aggregated(self, m: int) -> np.ndarray:
        """Coarsen this path's increments by a further factor ``m``."""
        return aggregate(self.increments, m)


def sample_increments(spec: QWienerSpec, grid: "Grid1D", N: int, m: int, T: float,
                      seed: int, keep_reference: bool = True) -> NoisePath:
    """Sample ``N`` coarse increments over ``[0, T]`` with refinement ``m``."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if not T > 0:
        raise ValueError(f"horizon must be > 0, got {T}")
    dt_ref = T / (N * m)
    stream = IncrementStream(spec, grid.M, dt_ref, m, seed, keep_reference=keep_reference)
    coarse, ref, xi = stream.take(N)
    return NoisePath(dt=T / N, refinement=m, dt_ref=dt_ref, increments=coarse,
                     seed=int(seed), nodes=grid.nodes.copy(),
                     reference_increments=ref, mode_coefficients=xi)


@dataclass
class ScalarBrownianPath:
    times: np.ndarray
    values: np.ndarray
    seed: int

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def quadratic_variation(self) -> float:
        return float(np.sum(self.increments**2))

    def at_stride(self, m: int) -> "ScalarBrownianPath":
        return ScalarBrownianPath(self.times[::m], self.values[::m], self.seed)


def sample_scalar_brownian(N: int, T: float, seed: int) -> ScalarBrownianPath:
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if not T > 0:
        raise ValueError(f"horizon must be > 0, got {T}")
    N = int(N)
    dt = T / N
    dW = np.sqrt(dt) * make_generator(seed).standard_normal(N)
    values = np.empty(N + 1)
    values[0] = 0.0
    np.cumsum(dW, out=values[1:])
    return ScalarBrownianPath(np.arange(N + 1) * dt, values, int(seed))


def write_noise_csv(path, noise: NoisePath) -> None:
    """Dump ``n,t,x,index,dW`` with one row per (step, node)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "x", "index", "dW"])
        for n, row in enumerate(noise.increments):
            t = repr(n * noise.dt)
            for i, (x, dw) in enumerate(zip(noise.nodes, row)):
                w.writerow([n, t, repr(float(x)), i, repr(float(dw))])
