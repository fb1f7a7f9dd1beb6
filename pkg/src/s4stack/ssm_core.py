"""Core SSM containers, dense reference operations and change of basis.

Convention: the output vector ``c`` is stored as a column, and every output in
this package is ``y = c^H x + d u`` (conjugate transpose applied at the use
site). For real systems ``c^H x == c^T x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, DimensionError, ValidationError

PARAMS_FORMAT = "s4-params-v1"
MAX_CONDITION = 1e8


def _frozen(x, dtype=complex):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries", field=name)


@dataclass(frozen=True)
class ContinuousSSM:
    """x' = a x + b u,  y = c^H x + d u."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float = 0.0

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class DplrSpec:
    """Diagonal plus low-rank system ``A = diag(lambda_) - p q^H``.

    ``p`` and ``q`` have shape (N, r). ``conjugate_symmetric`` records that the
    materialized system is similar to a real one, so its kernel is real.
    """

    lambda_: np.ndarray
    p: np.ndarray
    q: np.ndarray
    b: np.ndarray
    c: np.ndarray
    conjugate_symmetric: bool = False

    @property
    def n(self) -> int:
        return self.lambda_.shape[0]

    @property
    def rank(self) -> int:
        return self.p.shape[1]

    def replace(self, **changes) -> "DplrSpec":
        kw = dict(lambda_=self.lambda_, p=self.p, q=self.q, b=self.b, c=self.c,
                  conjugate_symmetric=self.conjugate_symmetric)
        kw.update(changes)
        return make_dplr_spec(**kw)


@dataclass(frozen=True)
class DiscreteDense:
    """Dense discrete system ``x_k = a_bar x_{k-1} + b_bar u_k``."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    delta: float
    d: float = 0.0
    real_output: bool = field(default=False, compare=False)

    @property
    def n(self) -> int:
        return self.a_bar.shape[0]


def make_continuous_ssm(a, b, c, d=0.0) -> ContinuousSSM:
    a = np.asarray(a)
    b = np.asarray(b).reshape(-1) if np.ndim(b) else np.asarray(b)
    c = np.asarray(c).reshape(-1) if np.ndim(c) else np.asarray(c)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"a must be square, got shape {a.shape}", field="a")
    n = a.shape[0]
    if n < 1:
        raise DimensionError("state size must be at least 1", field="a")
    if b.shape != (n,):
        raise DimensionError(f"b must have length {n}, got shape {b.shape}", field="b")
    if c.shape != (n,):
        raise DimensionError(f"c must have length {n}, got shape {c.shape}", field="c")
    if np.ndim(d) != 0 or np.iscomplexobj(d):
        raise ValidationError("d must be a real scalar", field="d")
    for name, arr in (("a", a), ("b", b), ("c", c)):
        _check_finite(arr, name)
    if not np.isfinite(d):
        raise ValidationError("d is not finite", field="d")
    return ContinuousSSM(_frozen(a), _frozen(b), _frozen(c), float(d))


def make_dplr_spec(lambda_, p, q, b, c, conjugate_symmetric=False) -> DplrSpec:
    lam = np.asarray(lambda_, dtype=complex).reshape(-1)
    n = lam.shape[0]
    if n < 1:
        raise DimensionError("state size must be at least 1", field="lambda")

    def lowrank(x, name):
        x = np.asarray(x, dtype=complex)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != n:
            raise DimensionError(f"{name} must have shape ({n}, r), got {x.shape}", field=name)
        return x

    p = lowrank(p, "p")
    q = lowrank(q, "q")
    if p.shape != q.shape:
        raise DimensionError(f"p {p.shape} and q {q.shape} differ", field="q")
    b = np.asarray(b, dtype=complex).reshape(-1)
    c = np.asarray(c, dtype=complex).reshape(-1)
    if b.shape != (n,):
        raise DimensionError(f"b must have length {n}", field="b")
    if c.shape != (n,):
        raise DimensionError(f"c must have length {n}", field="c")
    for name, arr in (("lambda", lam), ("p", p), ("q", q), ("b", b), ("c", c)):
        _check_finite(arr, name)
    return DplrSpec(_frozen(lam), _frozen(p), _frozen(q), _frozen(b), _frozen(c),
                    bool(conjugate_symmetric))


def make_discrete_dense(a_bar, b_bar, c_bar, delta, d=0.0, real_output=False) -> DiscreteDense:
    a_bar = np.asarray(a_bar, dtype=complex)
    n = a_bar.shape[0]
    if a_bar.shape != (n, n):
        raise DimensionError("a_bar must be square", field="a_bar")
    b_bar = np.asarray(b_bar, dtype=complex).reshape(-1)
    c_bar = np.asarray(c_bar, dtype=complex).reshape(-1)
    if b_bar.shape != (n,):
        raise DimensionError(f"b_bar must have length {n}", field="b_bar")
    if c_bar.shape != (n,):
        raise DimensionError(f"c_bar must have length {n}", field="c_bar")
    return DiscreteDense(_frozen(a_bar), _frozen(b_bar), _frozen(c_bar), float(delta),
                         float(d), bool(real_output))


def conjugate(ssm: ContinuousSSM, v) -> ContinuousSSM:
    """Change of basis ``x = v x~``: returns (v^-1 a v, v^-1 b, v^H c, d).

    The returned system computes the same input/output map.
    """
    v = np.asarray(v, dtype=complex)
    if v.shape != (ssm.n, ssm.n):
        raise DimensionError(f"v must have shape {(ssm.n, ssm.n)}, got {v.shape}", field="v")
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ConditioningError(f"change of basis has condition number {cond:.3g} "
                                f"(limit {MAX_CONDITION:.0e})", condition=cond)
    a = np.linalg.solve(v, ssm.a @ v)
    b = np.linalg.solve(v, ssm.b)
    c = v.conj().T @ ssm.c
    return ContinuousSSM(_frozen(a), _frozen(b), _frozen(c), ssm.d)


def conjugate_discrete(disc: DiscreteDense, v) -> DiscreteDense:
    """Discrete counterpart of :func:`conjugate` (same basis change)."""
    v = np.asarray(v, dtype=complex)
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ConditioningError(f"change of basis has condition number {cond:.3g}", condition=cond)
    return make_discrete_dense(np.linalg.solve(v, disc.a_bar @ v), np.linalg.solve(v, disc.b_bar),
                               v.conj().T @ disc.c_bar, disc.delta, disc.d, disc.real_output)


def dplr_to_dense(spec: DplrSpec) -> np.ndarray:
    """Materialize ``diag(lambda) - p q^H``."""
    return np.diag(spec.lambda_) - spec.p @ spec.q.conj().T


def pp_star(spec: DplrSpec) -> DplrSpec:
    """Tie ``q := p`` so that ``A = diag(lambda) - p p^H``.

    With ``Re(lambda) <= 0`` the Hermitian part of A is then negative
    semidefinite, which rules out eigenvalues in the right half-plane.
    """
    return spec.replace(q=spec.p)


def dplr_to_ssm(spec: DplrSpec, d=0.0) -> ContinuousSSM:
    return make_continuous_ssm(dplr_to_dense(spec), spec.b, spec.c, d)


# -- s4-params-v1 serialization ------------------------------------------------

def _enc(x):
    x = np.asarray(x, dtype=complex)
    if x.ndim == 0:
        return [float(x.real), float(x.imag)]
    return [_enc(v) for v in x]


def _dec(x):
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != 2:
        raise ValidationError("complex entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_params(spec: DplrSpec, delta=None, **extra) -> dict:
    """Encode a DPLR system as an ``s4-params-v1`` JSON-ready dict.

    Complex numbers become ``[re, im]`` pairs; ``p`` and ``q`` are nested as
    N rows of r pairs. Extra keyword fields (e.g. ``family``) are copied in.
    """
    out = {
        "format": PARAMS_FORMAT,
        "lambda": _enc(spec.lambda_),
        "p": _enc(spec.p),
        "q": _enc(spec.q),
        "b": _enc(spec.b),
        "c": _enc(spec.c),
        "rank": spec.rank,
        "delta": None if delta is None else float(delta),
        "conjugate_symmetric": spec.conjugate_symmetric,
    }
    out.update(extra)
    return out


def decode_params(obj: dict):
    """Inverse of :func:`encode_params`; returns ``(spec, delta, extras)``."""
    if obj.get("format") != PARAMS_FORMAT:
        raise ValidationError(f"expected format {PARAMS_FORMAT!r}, got {obj.get('format')!r}",
                              field="format")
    n = len(obj["lambda"])
    rank = int(obj["rank"])

    def lowrank(key):
        arr = np.asarray(obj[key], dtype=float)
        if arr.size == 0:
            return np.zeros((n, rank), dtype=complex)
        return _dec(arr).reshape(n, rank)

    spec = make_dplr_spec(_dec(obj["lambda"]), lowrank("p"), lowrank("q"), _dec(obj["b"]),
                          _dec(obj["c"]), obj.get("conjugate_symmetric", False))
    if spec.rank != rank:
        raise DimensionError(f"rank field {rank} disagrees with p", field="rank")
    known = {"format", "lambda", "p", "q", "b", "c", "rank", "delta", "conjugate_symmetric"}
    extras = {k: v for k, v in obj.items() if k not in known}
    delta = obj.get("delta")
    return spec, (None if delta is None else float(delta)), extras
