"""Exact-integer demonstrations of two numerically hopeless routes.

1. Diagonalizing the LegS matrix directly: its eigenvector matrix
   ``V[i, j] = binom(i + j, i - j)`` has entries growing like ``2^(4n/3)``.
2. The characteristic-polynomial route: already for ``A_bar = I`` the series
   ``(1 - x)^-N mod x^L`` has coefficients ``binom(N + L - 2, L - 1)``.

Everything here uses Python integers; no floating point enters a result
except the reported log2 magnitudes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExactOverflowError, ValidationError
from .hippo import legs_eigenvector_matrix

DOUBLE_EXACT_LIMIT = 2 ** 53
MAX_EXACT_N = 64


class GrowthContext(str, enum.Enum):
    EIGVEC_MATRIX = "eigvec_matrix"
    CHARPOLY_INVERSE = "charpoly_inverse"


@dataclass(frozen=True)
class GrowthReport:
    n: int
    max_entry: int
    threshold_exceeded: bool
    context: GrowthContext
    details: dict = field(default_factory=dict)

    @property
    def log2_max(self) -> float:
        return math.log2(self.max_entry)

    def to_dict(self) -> dict:
        return {
            "context": self.context.value,
            "n": self.n,
            "max_entry": str(self.max_entry),  # exact; may exceed JSON number range
            "log2_max": self.log2_max,
            "threshold_exceeded": self.threshold_exceeded,
            **{k: (str(v) if isinstance(v, int) and v > DOUBLE_EXACT_LIMIT else v)
               for k, v in self.details.items()},
        }


def _positive(n, name, least=1):
    if int(n) != n or n < least:
        raise ValidationError(f"{name} must be an integer >= {least}, got {n!r}", field=name)
    return int(n)


def eigvec_growth(n) -> GrowthReport:
    """Largest entry of the exact ``n x n`` LegS eigenvector matrix."""
    n = _positive(n, "n")
    v = legs_eigenvector_matrix(n, dtype=object)
    flat = int(np.argmax(v))
    i, j = divmod(flat, n)
    best = int(v[i, j])
    return GrowthReport(n, best, best > DOUBLE_EXACT_LIMIT, GrowthContext.EIGVEC_MATRIX,
                        {"argmax": [i, j]})


def lssl_inverse_series(n, l) -> list[int]:
    """Coefficients of ``(1 - x)^-n mod x^l``, built by ``c_k = c_{k-1} (n + k - 1) / k``."""
    n = _positive(n, "n")
    l = _positive(l, "l")
    out = [1]
    for k in range(1, l):
        prev = out[-1] * (n + k - 1)
        if prev % k:
            raise ArithmeticError("series recurrence left a remainder")
        out.append(prev // k)
    return out


def lssl_charpoly_inverse_coeffs(n, l) -> GrowthReport:
    """Largest coefficient of ``(1 - x)^-n mod x^l`` and of ``(1 - x)^n`` itself.

    The first is ``binom(n + l - 2, l - 1)``, the last term of the series.
    """
    n = _positive(n, "n", least=2)
    l = _positive(l, "l")
    series = lssl_inverse_series(n, l)
    best = max(series)
    if best != math.comb(n + l - 2, l - 1):
        raise ArithmeticError("series maximum disagrees with the closed form")
    charpoly_max = math.comb(n, n // 2)
    return GrowthReport(n, best, best > DOUBLE_EXACT_LIMIT, GrowthContext.CHARPOLY_INVERSE,
                        {"l": l, "charpoly_max": charpoly_max})


def legs_sign_variant(n) -> np.ndarray:
    """Exact integer matrix ``A[i, k] = (-1)^(i-k) (2k+1)`` below the diagonal, ``k+1`` on it.

    It equals the LegS matrix up to sign and a diagonal similarity.
    """
    n = _positive(n, "n")
    a = np.zeros((n, n), dtype=object)
    for i in range(n):
        for k in range(i):
            a[i, k] = (-1) ** (i - k) * (2 * k + 1)
        a[i, i] = i + 1
    return a


def verify_legs_eigenpairs_exact(n, v=None) -> bool:
    """True iff every column ``j`` of ``v`` satisfies ``A v_j = (j + 1) v_j`` exactly.

    ``v`` defaults to :func:`legs_eigenvector_matrix` and may be given to
    check a modified matrix. Sizes above 64 are refused.
    """
    n = _positive(n, "n")
    if n > MAX_EXACT_N:
        raise ExactOverflowError(f"exact eigenpair check is limited to n <= {MAX_EXACT_N}",
                                 index=n)
    a = legs_sign_variant(n)
    v = legs_eigenvector_matrix(n, dtype=object) if v is None else np.asarray(v, dtype=object)
    if v.shape != (n, n):
        raise ValidationError(f"v must have shape {(n, n)}", field="v")
    av = a.dot(v)
    for j in range(n):
        for i in range(n):
            if av[i, j] != (j + 1) * v[i, j]:
                return False
    return True


def growth_slope(ns, reports=None) -> float:
    """Least-squares slope of ``log2(max_entry)`` against ``n``."""
    ns = [int(n) for n in ns]
    if reports is None:
        reports = [eigvec_growth(n) for n in ns]
    y = [r.log2_max for r in reports]
    return float(np.polyfit(ns, y, 1)[0])


def render_table(reports) -> str:
    rows = [("context", "n", "log2(max)", "> 2^53", "max_entry")]
    for r in reports:
        digits = str(r.max_entry)
        if len(digits) > 24:
            digits = f"{digits[:10]}...({len(digits)} digits)"
        rows.append((r.context.value, str(r.n), f"{r.log2_max:.2f}",
                     "yes" if r.threshold_exceeded else "no", digits))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                     for row in rows)
