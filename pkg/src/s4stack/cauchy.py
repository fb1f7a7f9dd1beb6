"""Cauchy kernel products ``w_i = sum_j v_j / (omega_i - lambda_j)``.

Only the direct O(M N) product is implemented. Nodes are processed in blocks
whose size is chosen so that a block never holds more than ``BLOCK_ENTRIES``
matrix entries; auxiliary memory is therefore O(M + N), independent of M*N.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SingularKernelError
from .ssm_core import _frozen

BLOCK_ENTRIES = 1 << 13  # 128 KiB of complex entries; stays in L2
MIN_SEPARATION = 1e-12


class CauchyBackend(enum.Enum):
    NAIVE = "naive"


@dataclass(frozen=True)
class CauchyNodes:
    omega: np.ndarray   # evaluation nodes, length M
    lambda_: np.ndarray  # poles, length N

    @property
    def m(self) -> int:
        return self.omega.shape[0]

    @property
    def n(self) -> int:
        return self.lambda_.shape[0]


def make_nodes(omega, lambda_) -> CauchyNodes:
    omega = np.atleast_1d(np.asarray(omega, dtype=complex))
    lam = np.atleast_1d(np.asarray(lambda_, dtype=complex))
    if omega.ndim != 1 or lam.ndim != 1:
        raise DimensionError("nodes and poles must be vectors")
    return CauchyNodes(_frozen(omega), _frozen(lam))


def _blocks(m, n):
    step = max(1, BLOCK_ENTRIES // max(n, 1))
    for start in range(0, m, step):
        yield slice(start, min(start + step, m))


def _inverse_block(nodes, sl):
    diff = nodes.omega[sl, None] - nodes.lambda_[None, :]
    mag = np.abs(diff)
    if mag.size and mag.min() < MIN_SEPARATION:
        i, j = np.unravel_index(np.argmin(mag), mag.shape)
        i += sl.start
        raise SingularKernelError(f"node {i} coincides with pole {j}", index=(int(i), int(j)))
    return np.reciprocal(diff, out=diff)


def cauchy_forms(nodes: CauchyNodes, left, right, backend=CauchyBackend.NAIVE) -> np.ndarray:
    """All quadratic forms ``sum_j conj(left[j, a]) right[j, b] / (omega - lambda_j)``.

    ``left`` is (N, p), ``right`` is (N, q); the result has shape (M, p, q).
    The p*q forms share one pass over the kernel.
    """
    if backend is not CauchyBackend.NAIVE:
        raise NotImplementedError(backend)
    left = np.asarray(left, dtype=complex)
    right = np.asarray(right, dtype=complex)
    if left.ndim == 1:
        left = left[:, None]
    if right.ndim == 1:
        right = right[:, None]
    if left.shape[0] != nodes.n or right.shape[0] != nodes.n:
        raise DimensionError(f"weights must have {nodes.n} rows", field="weights")
    p, q = left.shape[1], right.shape[1]
    weights = (left.conj()[:, :, None] * right[:, None, :]).reshape(nodes.n, p * q)
    out = np.empty((nodes.m, p * q), dtype=complex)
    for sl in _blocks(nodes.m, nodes.n):
        out[sl] = _inverse_block(nodes, sl) @ weights
    return out.reshape(nodes.m, p, q)


def cauchy_matvec_naive(nodes: CauchyNodes, v) -> np.ndarray:
    """``w_i = sum_j v_j / (omega_i - lambda_j)`` without forming the matrix."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    if v.shape != (nodes.n,):
        raise DimensionError(f"v must have length {nodes.n}", field="v")
    out = np.empty(nodes.m, dtype=complex)
    for sl in _blocks(nodes.m, nodes.n):
        out[sl] = _inverse_block(nodes, sl) @ v
    return out


def cauchy_quad(nodes: CauchyNodes, a, b) -> np.ndarray:
    """``sum_j conj(a_j) b_j / (omega - lambda_j)`` at every node."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    b = np.asarray(b, dtype=complex).reshape(-1)
    if a.shape != (nodes.n,) or b.shape != (nodes.n,):
        raise DimensionError(f"a and b must have length {nodes.n}")
    return cauchy_matvec_naive(nodes, a.conj() * b)


def cauchy_matrix(nodes: CauchyNodes) -> np.ndarray:
    """Dense M x N Cauchy matrix. Reference only; O(M N) memory."""
    return 1.0 / (nodes.omega[:, None] - nodes.lambda_[None, :])
