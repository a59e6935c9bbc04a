"""Dense matrix building blocks for the AR(1) panel model.

Everything here is a pure function of its arguments. Matrices are small
(T rarely exceeds 20) so plain dense numpy is used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


@dataclass(frozen=True)
class ModelMatrices:
    """B (the AR filter), its inverse D = I - rho*J, the shift J and centering H."""

    B: Array
    D: Array
    J: Array
    H: Array
    T: int
    rho: float


@dataclass(frozen=True)
class FMatrices:
    F0: Array
    F1: Array
    F2: Array
    rho: float


@dataclass(frozen=True)
class InvariantStats:
    """Invariant summary of an N x T outcome block.

    ``W`` is Y'Y for the unconditional invariant and Y'M_x Y when the data
    are conditioned on a column ``x``; in the latter case ``Z1`` holds
    (x'x)^{-1/2} x'Y and ``x_norm`` holds ||x||.
    """

    W: Array
    N: int
    Z1: Optional[Array] = None
    x_norm: Optional[float] = None

    @property
    def T(self) -> int:
        return self.W.shape[0]

    @property
    def conditional(self) -> bool:
        return self.Z1 is not None


def shift_matrix(T: int) -> Array:
    return np.eye(T, k=-1)


def centering_matrix(T: int) -> Array:
    return np.eye(T) - np.full((T, T), 1.0 / T)


def _lag_index(T: int) -> NDArray[np.int64]:
    i = np.arange(T)
    return i[:, None] - i[None, :]


def build_model_matrices(rho: float, T: int) -> ModelMatrices:
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if not np.isfinite(rho):
        raise ValueError("rho must be finite")
    T = int(T)
    rho = float(rho)
    k = _lag_index(T)
    lower = k >= 0
    B = np.zeros((T, T))
    # 0.0**0 == 1.0 so rho = 0 gives the identity
    B[lower] = rho ** k[lower].astype(float)
    J = shift_matrix(T)
    D = np.eye(T) - rho * J
    return ModelMatrices(B=B, D=D, J=J, H=centering_matrix(T), T=T, rho=rho)


def build_f_matrices(rho: float, T: int) -> FMatrices:
    """F0[i, j] = rho^k / k with k = i - j >= 1, and its first two rho-derivatives.

    F2 is evaluated analytically, (k - 1) rho^(k - 2) for k >= 2.
    """
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    rho = float(rho)
    k = _lag_index(T)
    F0 = np.zeros((T, T))
    F1 = np.zeros((T, T))
    F2 = np.zeros((T, T))
    m1 = k >= 1
    kf = k[m1].astype(float)
    F0[m1] = rho**kf / kf
    F1[m1] = rho ** (kf - 1.0)
    m2 = k >= 2
    kf2 = k[m2].astype(float)
    F2[m2] = (kf2 - 1.0) * rho ** (kf2 - 2.0)
    return FMatrices(F0=F0, F1=F1, F2=F2, rho=rho)


def ones_quad(M: Array) -> float:
    """1'M1."""
    return float(M.sum())


def maximal_invariant(Y: Array) -> InvariantStats:
    """W = Y'Y, the maximal invariant under Y -> gY for orthogonal g."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("Y must be a 2-d array")
    N, T = Y.shape
    if N < T:
        raise ValueError(f"need N >= T for a nonsingular Y'Y, got N={N}, T={T}")
    W = Y.T @ Y
    W = 0.5 * (W + W.T)
    return InvariantStats(W=W, N=N)


def conditional_invariant(Y: Array, x: Array) -> InvariantStats:
    """Maximal invariant (Z1, Y'M_x Y) under rotations g with g x = x."""
    Y = np.asarray(Y, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    N, T = Y.shape
    if x.shape[0] != N:
        raise ValueError(f"x has length {x.shape[0]}, expected {N}")
    if N < T + 1:
        raise ValueError(f"need N >= T + 1, got N={N}, T={T}")
    x_norm = float(np.linalg.norm(x))
    if x_norm == 0.0:
        raise ValueError("conditioning vector x is identically zero")
    Z1 = (x @ Y)[None, :] / x_norm
    W = Y.T @ Y - Z1.T @ Z1
    W = 0.5 * (W + W.T)
    return InvariantStats(W=W, N=N, Z1=Z1, x_norm=x_norm)


def _haar(n: int, rng: np.random.Generator) -> Array:
    if n == 0:
        return np.zeros((0, 0))
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d[None, :]


def householder_to_e1(v: Array) -> Array:
    """Symmetric orthogonal H with H v = ||v|| e1."""
    v = np.asarray(v, dtype=float).ravel()
    n = v.shape[0]
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("cannot reflect the zero vector")
    u = v / nv
    w = u.copy()
    w[0] -= 1.0
    ww = w @ w
    if ww < 1e-30:
        return np.eye(n)
    return np.eye(n) - 2.0 * np.outer(w, w) / ww


def sample_orthogonal(N: int, seed: int, fix: Optional[Array] = None) -> Array:
    """Haar-distributed N x N orthogonal matrix.

    With ``fix`` given, the draw is Haar on the subgroup {g : g fix = fix},
    built as Hh diag(1, G) Hh with Hh the Householder reflection taking fix
    to the first axis and G Haar on O(N - 1).
    """
    rng = np.random.default_rng(seed)
    if fix is None:
        return _haar(N, rng)
    fix = np.asarray(fix, dtype=float).ravel()
    if fix.shape[0] != N:
        raise ValueError(f"fix has length {fix.shape[0]}, expected {N}")
    if np.linalg.norm(fix) == 0.0:
        raise ValueError("fix must be nonzero")
    Hh = householder_to_e1(fix)
    inner = np.eye(N)
    inner[1:, 1:] = _haar(N - 1, rng)
    return Hh @ inner @ Hh
