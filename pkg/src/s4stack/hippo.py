"""HiPPO state matrices and their normal-plus-low-rank decompositions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ExactOverflowError, NumericalError, ValidationError
from .ssm_core import DplrSpec, _frozen, make_dplr_spec


class HippoFamily(str, enum.Enum):
    LEGS = "legs"
    LEGT = "legt"
    LAGT = "lagt"

    @classmethod
    def parse(cls, value) -> "HippoFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown HiPPO family {value!r}", field="family") from None


def _check_size(n):
    if int(n) != n or n < 1:
        raise ValidationError(f"state size must be a positive integer, got {n!r}", field="n")
    return int(n)


def hippo_matrix(family, n, lagt_diagonal=-0.5) -> np.ndarray:
    """Dense real HiPPO matrix for ``family`` with indices 0..n-1.

    LegT uses the symmetric scaling ``sqrt(2n+1) sqrt(2k+1)`` with the
    alternating signs above the diagonal. ``lagt_diagonal`` selects the
    generalized-Laguerre variant; the plain LagT value is -1/2.
    """
    family = HippoFamily.parse(family)
    n = _check_size(n)
    idx = np.arange(n)
    row, col = np.meshgrid(idx, idx, indexing="ij")
    r = np.sqrt(2 * idx + 1.0)
    if family is HippoFamily.LEGS:
        a = np.where(row > col, r[:, None] * r[None, :], 0.0)
        a = -(a + np.diag(idx + 1.0)) + 0.0
    elif family is HippoFamily.LEGT:
        sign = np.where(row >= col, 1.0, (-1.0) ** (row - col))
        a = -(r[:, None] * sign * r[None, :])
    else:
        a = np.where(row > col, -1.0, 0.0) + lagt_diagonal * np.eye(n)
    return a


def lowrank_factor(family, n) -> np.ndarray:
    """Real factor P (N x r) with ``A + P P^T`` normal."""
    family = HippoFamily.parse(family)
    n = _check_size(n)
    idx = np.arange(n)
    if family is HippoFamily.LEGS:
        return np.sqrt(idx + 0.5)[:, None]
    if family is HippoFamily.LEGT:
        r = np.sqrt(2 * idx + 1.0)
        even = np.where(idx % 2 == 0, r, 0.0)
        odd = np.where(idx % 2 == 1, r, 0.0)
        return np.stack([even, odd], axis=1)
    return np.full((n, 1), math.sqrt(0.5))


@dataclass(frozen=True)
class NplrDecomposition:
    """``A = v diag(lambda_) v^H - p_real q_real^T`` with unitary ``v``."""

    v: np.ndarray
    lambda_: np.ndarray
    p_real: np.ndarray
    q_real: np.ndarray
    family: HippoFamily
    shift: float

    @property
    def rank(self) -> int:
        return self.p_real.shape[1]

    @property
    def n(self) -> int:
        return self.lambda_.shape[0]

    @property
    def p(self) -> np.ndarray:
        return self.v.conj().T @ self.p_real

    @property
    def q(self) -> np.ndarray:
        return self.v.conj().T @ self.q_real

    def dense(self) -> np.ndarray:
        return (self.v * self.lambda_) @ self.v.conj().T - self.p_real @ self.q_real.T

    def to_dplr(self, b, c) -> DplrSpec:
        """Conjugate ``(A, b, c)`` by ``v`` into DPLR form.

        ``b`` and ``c`` are given in the original basis; the result is flagged
        conjugate-symmetric when both are real.
        """
        b = np.asarray(b)
        c = np.asarray(c)
        vh = self.v.conj().T
        real = not (np.iscomplexobj(b) and np.any(b.imag)) and not (
            np.iscomplexobj(c) and np.any(c.imag))
        return make_dplr_spec(self.lambda_, self.p, self.q, vh @ b, vh @ c, conjugate_symmetric=real)


def nplr_decompose(family, n, lagt_diagonal=-0.5) -> NplrDecomposition:
    """Normal plus low-rank decomposition of a HiPPO matrix.

    The normal part is ``shift * I + K`` with ``K`` real skew-symmetric. ``K``
    is diagonalized through the Hermitian matrix ``iK`` so that ``v`` is
    unitary to working precision. Eigenvalues are ordered by imaginary part,
    then real part.
    """
    family = HippoFamily.parse(family)
    n = _check_size(n)
    a = hippo_matrix(family, n, lagt_diagonal=lagt_diagonal)
    p = lowrank_factor(family, n)
    normal = a + p @ p.T
    skew = 0.5 * (normal - normal.T)
    sym = normal - skew
    shift = {HippoFamily.LEGS: -0.5, HippoFamily.LEGT: 0.0}.get(family, lagt_diagonal + 0.5)
    if np.max(np.abs(sym - shift * np.eye(n))) > 1e-12 * max(1.0, np.abs(a).max()):
        raise NumericalError(f"{family.value} normal part is not shift*I + skew")

    mu, v = np.linalg.eigh(1j * skew)
    lam = shift - 1j * mu
    resid = np.linalg.norm(skew @ v - v * (lam - shift)) / max(np.linalg.norm(skew), 1.0)
    if not np.isfinite(resid) or resid > 1e-10:
        raise NumericalError(f"eigendecomposition residual {resid:.3g} too large", residual=resid)
    order = np.lexsort((lam.real, lam.imag))
    lam = lam[order]
    v = v[:, order]

    # Every family's correction is symmetric, so Q = P (the PP* form) here.
    q = p.copy()
    return NplrDecomposition(_frozen(v), _frozen(lam), _frozen(p, float), _frozen(q, float),
                             family, shift)


def legs_eigenvector_matrix(n, dtype=np.int64) -> np.ndarray:
    """Lower-triangular ``V[i, j] = binom(i + j, i - j)``.

    With ``dtype=object`` entries are exact Python integers of unbounded size;
    fixed-width dtypes raise :class:`ExactOverflowError` naming the first
    entry that does not fit.
    """
    n = _check_size(n)
    limit = None if dtype is object else np.iinfo(dtype).max
    out = np.zeros((n, n), dtype=dtype)
    for i in range(n):
        for j in range(i + 1):
            value = math.comb(i + j, i - j)
            if limit is not None and value > limit:
                raise ExactOverflowError(f"V[{i}, {j}] = {value} exceeds {np.dtype(dtype).name}",
                                         index=(i, j))
            out[i, j] = value
    return out


def default_b_vector(family, n) -> np.ndarray:
    """Input vector used alongside :func:`hippo_matrix`.

    LegS and LegT use ``sqrt(2n+1)``; LagT uses ones. These follow the HiPPO
    framework's conventions and are not fixed by the decomposition itself.
    """
    family = HippoFamily.parse(family)
    n = _check_size(n)
    if family is HippoFamily.LAGT:
        return np.ones(n)
    return np.sqrt(2 * np.arange(n) + 1.0)


def default_c_vector(n, seed) -> np.ndarray:
    """Complex standard-normal output vector, deterministic in ``seed``."""
    n = _check_size(n)
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def hippo_dplr(family, n, c=None, seed=0) -> DplrSpec:
    """Convenience: HiPPO system in DPLR form with default B and a real C.

    ``c`` is given in the original (real) basis; when omitted it is the real
    part of :func:`default_c_vector`, keeping the system real.
    """
    decomp = nplr_decompose(family, n)
    if c is None:
        c = default_c_vector(n, seed).real
    return decomp.to_dplr(default_b_vector(family, n), c)
