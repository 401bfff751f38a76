"""2x2 matrix loops in the spectral parameter.

A loop is stored twice: as samples on a circle ``|lambda| = r`` (where all
ODE work happens, one independent problem per sample) and, optionally, as a
truncated Laurent series ``sum_k c_k lambda^k`` (where differentiation and
factorization happen).  Arrays of shape ``(..., 2, 2)`` stand in for
``ComplexMatrix2`` throughout the package.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceError,
    NoInterpolantError,
    PositivityError,
    ResolutionError,
    UnderResolvedWarning,
)

DEFAULT_N = 512
DET_TOL = 1e-9
FFT_TOL = 1e-10
SPEC_TOL = 1e-7
UNIT_TOL = 1e-7
TAIL_TOL = 1e-8
MAX_ITERS = 200

ID2 = np.eye(2, dtype=complex)
SIGMA3 = np.diag([1.0 + 0j, -1.0])


def diag(u, v):
    return np.array([[u, 0], [0, v]], dtype=complex)


def off(u, v):
    return np.array([[0, u], [v, 0]], dtype=complex)


def mat_norm(a):
    """Frobenius norm over the trailing 2x2 axes."""
    return np.linalg.norm(np.asarray(a), axis=(-2, -1))


def det2(a):
    a = np.asarray(a)
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def inv2(a):
    """Closed-form inverse of stacked 2x2 matrices."""
    a = np.asarray(a)
    d = det2(a)
    out = np.empty_like(a, dtype=complex)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 1, 1] = a[..., 0, 0]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    return out / d[..., None, None]


def dagger(a):
    return np.conj(np.swapaxes(np.asarray(a), -1, -2))


@dataclass(frozen=True)
class CircleGrid:
    """Equispaced points ``r * exp(2 pi i j / N)``."""

    N: int = DEFAULT_N
    radius: float = 1.0

    def __post_init__(self):
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError(f"sample count must be a power of two, got {self.N}")
        if not 0.0 < self.radius <= 1.0:
            raise ValueError(f"radius must lie in (0, 1], got {self.radius}")

    @property
    def points(self) -> np.ndarray:
        j = np.arange(self.N)
        return self.radius * np.exp(2j * np.pi * j / self.N)

    def index_of(self, lam: complex, tol: float = 1e-12) -> Optional[int]:
        pts = self.points
        j = int(np.argmin(np.abs(pts - lam)))
        return j if abs(pts[j] - lam) <= tol * max(1.0, abs(lam)) else None


@dataclass(frozen=True, eq=False)
class MatrixLoop:
    """Samples on ``grid`` plus optional Laurent coefficients.

    ``laurent[k + K]`` holds ``c_k`` for ``k`` in ``[-K, K]``.
    """

    grid: CircleGrid
    samples: np.ndarray
    laurent: Optional[np.ndarray] = None
    under_resolved: bool = False
    tail: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.shape != (self.grid.N, 2, 2):
            raise ValueError(f"samples must have shape ({self.grid.N}, 2, 2), got {s.shape}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.laurent is not None:
            c = np.asarray(self.laurent, dtype=complex)
            c.setflags(write=False)
            object.__setattr__(self, "laurent", c)

    @property
    def K(self) -> Optional[int]:
        return None if self.laurent is None else (len(self.laurent) - 1) // 2

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    def coefficient(self, k: int) -> np.ndarray:
        K = self.K
        if K is None:
            raise NoInterpolantError("loop carries no Laurent data")
        if abs(k) > K:
            return np.zeros((2, 2), dtype=complex)
        return self.laurent[k + K]

    # pointwise algebra, all on the sample grid
    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("loops live on different grids")

    def __matmul__(self, other):
        if isinstance(other, MatrixLoop):
            self._check(other)
            return MatrixLoop(self.grid, self.samples @ other.samples)
        return MatrixLoop(self.grid, self.samples @ np.asarray(other, dtype=complex))

    def __rmatmul__(self, other):
        return MatrixLoop(self.grid, np.asarray(other, dtype=complex) @ self.samples)

    def inverse(self) -> "MatrixLoop":
        return MatrixLoop(self.grid, inv2(self.samples))

    def dagger(self) -> "MatrixLoop":
        return MatrixLoop(self.grid, dagger(self.samples))

    def det(self) -> np.ndarray:
        return det2(self.samples)

    def trace(self) -> np.ndarray:
        return self.samples[:, 0, 0] + self.samples[:, 1, 1]

    @classmethod
    def from_function(cls, func, grid: CircleGrid, K: Optional[int] = None) -> "MatrixLoop":
        """Sample ``func(lam) -> (2, 2)`` (vectorized or not) on ``grid``."""
        pts = grid.points
        try:
            vals = np.asarray(func(pts), dtype=complex)
            if vals.shape != (grid.N, 2, 2):
                raise ValueError
        except (ValueError, TypeError):
            vals = np.array([func(p) for p in pts], dtype=complex)
        loop = cls(grid, vals)
        return to_laurent(loop, K) if K is not None else loop

    @classmethod
    def constant(cls, m, grid: CircleGrid, K: Optional[int] = None) -> "MatrixLoop":
        vals = np.broadcast_to(np.asarray(m, dtype=complex), (grid.N, 2, 2)).copy()
        loop = cls(grid, vals)
        return to_laurent(loop, K) if K is not None else loop

    @classmethod
    def from_laurent(cls, coeffs: dict, grid: CircleGrid, K: Optional[int] = None) -> "MatrixLoop":
        """Build from ``{k: c_k}``; samples are the evaluated series."""
        if K is None:
            K = max([abs(k) for k in coeffs] + [grid.N // 4])
        lau = np.zeros((2 * K + 1, 2, 2), dtype=complex)
        for k, c in coeffs.items():
            lau[k + K] = np.asarray(c, dtype=complex)
        samples = _eval_series(lau, K, grid.points)
        return cls(grid, samples, lau)


def _eval_series(lau: np.ndarray, K: int, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    ks = np.arange(-K, K + 1)
    powers = lam[..., None] ** ks
    return np.einsum("...k,kij->...ij", powers, lau)


def to_laurent(loop: MatrixLoop, K: Optional[int] = None, tail_tol: float = TAIL_TOL) -> MatrixLoop:
    """Fill the Laurent coefficients of ``loop`` by an entrywise DFT."""
    N = loop.grid.N
    if K is None:
        K = N // 4
    if N < 2 * K + 2:
        raise ValueError(f"need N >= 2K+2, got N={N}, K={K}")
    r = loop.grid.radius
    spec = np.fft.fft(loop.samples, axis=0) / N
    ks = np.arange(-K, K + 1)
    lau = spec[ks % N] / (r ** ks)[:, None, None]
    norms = mat_norm(lau)
    peak = float(norms.max()) if norms.size else 0.0
    tail = float(norms[0] + norms[-1])
    flagged = peak > 0 and tail > tail_tol * peak
    if flagged:
        warnings.warn(
            UnderResolvedWarning(f"Laurent tail {tail:.3e} exceeds {tail_tol:g} x peak {peak:.3e}", tail)
        )
    return MatrixLoop(loop.grid, loop.samples, lau, flagged, tail, dict(loop.meta))


def eval_loop(loop: MatrixLoop, lam: complex) -> np.ndarray:
    j = loop.grid.index_of(lam)
    if j is not None:
        return np.array(loop.samples[j])
    if loop.laurent is None:
        raise NoInterpolantError(f"lambda={lam} is off-grid and the loop has no Laurent data")
    if lam == 0:
        K = loop.K
        if mat_norm(loop.laurent[:K]).max(initial=0.0) > 0:
            raise NoInterpolantError("lambda=0 is a pole: the loop has negative Laurent coefficients")
        return np.array(loop.laurent[K])
    return _eval_series(loop.laurent, loop.K, lam)


def resample(loop: MatrixLoop, grid: CircleGrid) -> MatrixLoop:
    if loop.laurent is None:
        raise NoInterpolantError("resampling needs Laurent data")
    return MatrixLoop(grid, _eval_series(loop.laurent, loop.K, grid.points), loop.laurent)


def lambda_derivatives_at(loop: MatrixLoop, lam0: complex, order: int = 2) -> list:
    """``[d^m loop / d lambda^m (lam0) for m = 0..order]`` from the Laurent series."""
    if loop.laurent is None:
        raise NoInterpolantError("lambda derivatives need Laurent data")
    if loop.under_resolved:
        raise ResolutionError(f"loop is under-resolved (tail {loop.tail:.3e})")
    if order > 4:
        raise ValueError("order must be <= 4")
    K = loop.K
    ks = np.arange(-K, K + 1).astype(float)
    out = []
    fall = np.ones_like(ks)
    for m in range(order + 1):
        if m:
            fall = fall * (ks - (m - 1))
        w = fall * complex(lam0) ** (ks - m)
        out.append(np.einsum("k,kij->ij", w, loop.laurent))
    return out


def is_plus_loop(loop: MatrixLoop, tol: float = 1e-9) -> bool:
    """True when the negative-index coefficients are negligible."""
    lau = loop.laurent if loop.laurent is not None else to_laurent(loop).laurent
    K = (len(lau) - 1) // 2
    norms = mat_norm(lau)
    return bool(norms[:K].max(initial=0.0) <= tol * max(1.0, norms.max()))


def _check_positive(P: MatrixLoop):
    s = P.samples
    herm = mat_norm(s - dagger(s))
    scale = np.maximum(1.0, mat_norm(s))
    bad = np.nonzero(herm > 1e-9 * scale)[0]
    if bad.size:
        j = int(bad[0])
        raise PositivityError(f"sample at lambda={P.points[j]:.6g} is not Hermitian", P.points[j])
    eig = np.linalg.eigvalsh(0.5 * (s + dagger(s)))
    floor = 1e-13 * scale
    bad = np.nonzero(eig[:, 0] <= floor)[0]
    if bad.size:
        j = int(bad[0])
        raise PositivityError(
            f"sample at lambda={P.points[j]:.6g} is not positive definite (min eigenvalue {eig[j, 0]:.3e})",
            P.points[j],
        )


def _toeplitz_solve(pk: np.ndarray, N: int, m: int) -> np.ndarray:
    """Solve ``sum_j P_{k-j} y_j = delta_k0`` for ``k, j = 0..m`` by Cholesky."""
    idx = np.arange(m + 1)
    diff = (idx[:, None] - idx[None, :]) % N
    blocks = pk[diff]  # (m+1, m+1, 2, 2)
    T = blocks.transpose(0, 2, 1, 3).reshape(2 * (m + 1), 2 * (m + 1))
    T = 0.5 * (T + T.conj().T)
    rhs = np.zeros((2 * (m + 1), 2), dtype=complex)
    rhs[:2, :2] = ID2
    try:
        cf = scipy.linalg.cho_factor(T, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise PositivityError(f"block Toeplitz section of size {m + 1} is not positive definite") from exc
    y = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    return y.reshape(m + 1, 2, 2)


def _factor_from_section(P: MatrixLoop, pk: np.ndarray, m: int):
    N = P.grid.N
    y = _toeplitz_solve(pk, N, m)
    y0 = 0.5 * (y[0] + dagger(y[0]))
    R = np.linalg.cholesky(np.linalg.inv(y0)).conj().T  # y0^{-1} = R* R, R upper
    padded = np.zeros((N, 2, 2), dtype=complex)
    padded[: m + 1] = y
    # Y(mu_j) = sum_k y_k mu_j^k with mu on the unit circle
    Y = np.fft.ifft(padded, axis=0) * N
    return Y, R


def spectral_factorize(P: MatrixLoop, tol: float = SPEC_TOL, max_iters: int = MAX_ITERS, K: Optional[int] = None):
    """Plus loop ``B`` with ``B* B = P`` on the grid and ``B(0)`` upper triangular.

    The sample circle is treated as the unit circle (``mu = lambda / r``).
    Returns ``(B, Y, R)`` where ``Y = B^{-1} (R*)^{-1}`` is the solution of
    the block Toeplitz system; callers that only need ``B`` ignore the rest.
    """
    _check_positive(P)
    N = P.grid.N
    pk = np.fft.fft(P.samples, axis=0) / N
    target = P.samples
    scale = float(mat_norm(target).max())
    m = min(16, N // 2 - 1)
    last = None
    residual = np.inf
    for _ in range(max_iters):
        Y, R = _factor_from_section(P, pk, m)
        Binv = Y @ dagger(R)[None]  # B^{-1} = Y R*
        B = inv2(Binv)
        residual = float(mat_norm(dagger(B) @ B - target).max()) / max(1.0, scale)
        change = np.inf if last is None else float(mat_norm(B - last).max())
        if residual <= tol and change <= tol:
            break
        if m >= N // 2 - 1:
            break
        last = B
        m = min(2 * m + 1, N // 2 - 1)
    if residual > tol:
        raise ConvergenceError(f"spectral factorization residual {residual:.3e} > {tol:g}", residual)
    Bloop = to_laurent(MatrixLoop(P.grid, B), K)
    return Bloop, Y, R


def iwasawa(phi: MatrixLoop, tol: float = SPEC_TOL, unit_tol: float = UNIT_TOL, K: Optional[int] = None):
    """Split ``phi = F B`` with ``F`` unitary on the circle and ``B`` a plus loop.

    ``B(0)`` is upper triangular with positive real diagonal.
    """
    s = phi.samples
    P = MatrixLoop(phi.grid, dagger(s) @ s)
    B, Y, R = spectral_factorize(P, tol=tol, K=K)
    F = s @ Y @ dagger(R)[None]
    unit = float(mat_norm(F @ dagger(F) - ID2).max())
    if unit > unit_tol:
        raise ConvergenceError(f"unitary factor off by {unit:.3e}", unit)
    Floop = to_laurent(MatrixLoop(phi.grid, F), K)
    return Floop, B


def unitarity_residual(loop: MatrixLoop) -> float:
    s = loop.samples
    return float(mat_norm(s @ dagger(s) - ID2).max())


def dump_loop(loop: MatrixLoop) -> dict:
    if loop.laurent is None:
        loop = to_laurent(loop)
    K = loop.K
    coeffs = []
    for k in range(-K, K + 1):
        c = loop.laurent[k + K]
        coeffs.append([k, [[[c[i, j].real, c[i, j].imag] for j in range(2)] for i in range(2)]])
    return {"radius": loop.grid.radius, "N": loop.grid.N, "K": K, "coefficients": coeffs}


def load_loop(data) -> MatrixLoop:
    if isinstance(data, str):
        data = json.loads(data)
    grid = CircleGrid(int(data["N"]), float(data["radius"]))
    K = int(data["K"])
    coeffs = {}
    for k, c in data["coefficients"]:
        coeffs[int(k)] = np.array([[complex(*c[i][j]) for j in range(2)] for i in range(2)])
    return MatrixLoop.from_laurent(coeffs, grid, K)
