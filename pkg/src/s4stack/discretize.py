"""Bilinear discretization, dense and in closed DPLR form, plus stepping.

For ``A = diag(lambda) - p q^H`` the bilinear transform factors as
``A_bar = A1 A0`` and ``B_bar = 2 A1 B`` where

    A0 = 2/delta + diag(lambda) - p q^H
    A1 = D - D p (I + q^H D p)^-1 q^H D,    D = diag(2/delta - lambda)^-1

Both factors are applied matrix-free, so a step costs O(N r).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, NumericalError, PoleError, RankCorrectionError, ValidationError
from .ssm_core import (ContinuousSSM, DiscreteDense, DplrSpec, _frozen, dplr_to_dense,
                       make_continuous_ssm, make_discrete_dense)

POLE_TOL = 1e-12
IMAG_RESIDUE_TOL = 1e-8

# Hidden state x_k: a complex array of shape (..., N). Leading axes batch
# independent recurrences that share one system.
SsmState = np.ndarray


def _check_delta(delta):
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise ValidationError(f"step size must be positive, got {delta}", field="delta")
    return delta


def bilinear_discretize_dense(ssm: ContinuousSSM, delta) -> DiscreteDense:
    """Dense bilinear transform; the verification path for everything else."""
    delta = _check_delta(delta)
    n = ssm.n
    back = np.eye(n) - (delta / 2) * ssm.a
    cond = np.linalg.cond(back)
    if not np.isfinite(cond) or cond > 1e14:
        eig = np.linalg.eigvals(ssm.a)
        worst = eig[np.argmin(np.abs(eig - 2 / delta))]
        raise PoleError(f"I - delta/2 A is singular: eigenvalue {worst} at 2/delta = {2 / delta}",
                        eigenvalue=worst)
    a_bar = np.linalg.solve(back, np.eye(n) + (delta / 2) * ssm.a)
    b_bar = np.linalg.solve(back, delta * ssm.b)
    real = not np.any(np.iscomplex(ssm.a)) and not np.any(np.iscomplex(ssm.b)) \
        and not np.any(np.iscomplex(ssm.c))
    return make_discrete_dense(a_bar, b_bar, ssm.c, delta, ssm.d, real_output=real)


def _small_inverse(m):
    """Closed-form inverse for 1x1 and 2x2, LU otherwise."""
    r = m.shape[0]
    if r == 0:
        return m.copy()
    if r == 1:
        det = m[0, 0]
        inv = np.array([[1.0 / det]]) if det != 0 else None
    elif r == 2:
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det if det != 0 else None
    else:
        det = np.linalg.det(m)
        inv = np.linalg.inv(m) if det != 0 else None
    scale = max(1.0, float(np.abs(m).max()))
    if inv is None or abs(det) < 1e-12 * scale ** r:
        raise RankCorrectionError(f"rank-correction core is singular (det={det})")
    return inv


@dataclass(frozen=True)
class DiscreteDplr:
    lambda_: np.ndarray
    p: np.ndarray
    q: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: float
    d_vec: np.ndarray          # (2/delta - lambda)^-1
    woodbury_core: np.ndarray  # (I + q^H D p)^-1, r x r
    b_bar: np.ndarray          # 2 A1 b, hoisted out of the step
    conjugate_symmetric: bool = False

    @property
    def n(self) -> int:
        return self.lambda_.shape[0]

    @property
    def rank(self) -> int:
        return self.p.shape[1]

    def apply_a0(self, x):
        """``(2/delta + diag(lambda) - p q^H) x`` along the last axis."""
        return _cmul(2.0 / self.delta + self.lambda_, x) - _outer(_inner(self.q, x), self.p)

    def apply_a1(self, x):
        """``(D - D p W q^H D) x`` along the last axis."""
        return _apply_a1(self.d_vec, self.p, self.q, self.woodbury_core, x)


# Row-wise reductions instead of BLAS products, and complex products spelled
# out in real arithmetic (numpy's complex multiply may take FMA or plain SIMD
# paths depending on loop length): a batch of states then gives bitwise the
# same result as stepping each state on its own.

def _cmul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    re = ar * br
    re -= ai * bi
    out = np.empty(re.shape, dtype=complex)
    out.real = re
    re = ar * bi
    re += ai * br
    out.imag = re
    return out


def _inner(w, x):
    """``w^H x`` for each column of ``w`` (N, r); result shape (..., r)."""
    if w.shape[1] == 0:
        return np.zeros(x.shape[:-1] + (0,), dtype=complex)
    return np.stack([_cmul(x, w[:, j].conj()).sum(axis=-1) for j in range(w.shape[1])], axis=-1)


def _outer(coef, w):
    """``sum_j coef[..., j] w[:, j]`` for ``w`` (N, r)."""
    out = np.zeros(coef.shape[:-1] + w.shape[:1], dtype=complex)
    for j in range(w.shape[1]):
        out += _cmul(coef[..., j, None], w[:, j])
    return out


def _apply_a1(d_vec, p, q, core, x):
    dx = _cmul(d_vec, x)
    proj = _inner(q, dx)
    corr = np.zeros_like(proj)
    for k in range(core.shape[1]):
        corr += _cmul(proj[..., k, None], core[:, k])
    return dx - _cmul(d_vec, _outer(corr, p))


def dplr_discretize(spec: DplrSpec, delta) -> DiscreteDplr:
    delta = _check_delta(delta)
    gap = 2.0 / delta - spec.lambda_
    hit = np.abs(gap) < POLE_TOL
    if np.any(hit):
        worst = spec.lambda_[np.argmax(hit)]
        raise PoleError(f"eigenvalue {worst} sits on the pole 2/delta = {2 / delta}",
                        eigenvalue=worst)
    d_vec = 1.0 / gap
    core_in = np.eye(spec.rank) + spec.q.conj().T @ (d_vec[:, None] * spec.p)
    core = _small_inverse(core_in)
    if spec.rank and np.abs(core @ core_in - np.eye(spec.rank)).max() > 1e-10:
        raise RankCorrectionError("rank-correction core is too ill-conditioned to invert")
    b_bar = 2.0 * _apply_a1(d_vec, spec.p, spec.q, core, spec.b)
    return DiscreteDplr(spec.lambda_, spec.p, spec.q, spec.b, spec.c, delta, _frozen(d_vec),
                        _frozen(core), _frozen(b_bar), spec.conjugate_symmetric)


def dplr_discrete_to_dense(disc: DiscreteDplr) -> DiscreteDense:
    """Materialize ``A1 A0`` column by column through the matrix-free operators."""
    eye = np.eye(disc.n, dtype=complex)
    # rows of eye are basis vectors; operators act on the last axis
    a_bar = disc.apply_a1(disc.apply_a0(eye)).T
    return make_discrete_dense(a_bar, disc.b_bar, disc.c, disc.delta,
                               real_output=disc.conjugate_symmetric)


def dplr_discretize_reference(spec: DplrSpec, delta) -> DiscreteDense:
    """Dense bilinear transform of the materialized DPLR matrix."""
    disc = bilinear_discretize_dense(make_continuous_ssm(dplr_to_dense(spec), spec.b, spec.c),
                                     delta)
    return make_discrete_dense(disc.a_bar, disc.b_bar, disc.c_bar, disc.delta,
                               real_output=spec.conjugate_symmetric)


def _output(c, x, u, d, check_real, step):
    y = _cmul(x, c.conj()).sum(axis=-1)
    if check_real:
        bad = np.abs(y.imag) > IMAG_RESIDUE_TOL * (np.abs(y.real) + 1)
        if np.any(bad):
            raise NumericalError(f"output of a real system has imaginary part "
                                 f"{np.max(np.abs(y.imag)):.3g} at step {step}")
    return y.real + d * np.asarray(u, dtype=float)


def _check_state(x, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"state diverged at step {step}", step=step)


def recurrent_step(disc: DiscreteDplr, state: SsmState, u, d=0.0, step=None):
    """One O(N r) step: ``x_k = A1 A0 x_{k-1} + B_bar u_k``, ``y = Re(c^H x_k) + d u``.

    ``state`` may carry leading batch axes with ``u`` broadcasting against them.
    """
    state = np.asarray(state)
    if state.shape[-1] != disc.n:
        raise ValidationError(f"state must have trailing length {disc.n}", field="state")
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):  # surfaced as DivergenceError
        x = disc.apply_a1(disc.apply_a0(state)) + _cmul(u[..., None], disc.b_bar)
    _check_state(x, step)
    return x, _output(disc.c, x, u, d, disc.conjugate_symmetric, step)


def dense_step(disc: DiscreteDense, state: SsmState, u, step=None):
    """Literal ``x_k = A_bar x_{k-1} + B_bar u_k``; ``y = Re(c_bar^H x_k) + d u``."""
    state = np.asarray(state)
    if state.shape[-1] != disc.n:
        raise ValidationError(f"state must have trailing length {disc.n}", field="state")
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        x = state @ disc.a_bar.T + u[..., None] * disc.b_bar
    _check_state(x, step)
    return x, _output(disc.c_bar, x, u, disc.d, disc.real_output, step)


def zero_state(n, batch_shape=()) -> SsmState:
    return np.zeros(tuple(batch_shape) + (n,), dtype=complex)


def run_recurrence(disc, u, state=None, d=0.0):
    """Step ``disc`` over ``u`` (time on the last axis); returns ``(y, final_state)``.

    Works with either :class:`DiscreteDplr` or :class:`DiscreteDense`.
    """
    u = np.asarray(u, dtype=float)
    if state is None:
        state = zero_state(disc.n, u.shape[:-1])
    ys = np.empty(u.shape)
    for k in range(u.shape[-1]):
        if isinstance(disc, DiscreteDplr):
            state, y = recurrent_step(disc, state, u[..., k], d=d, step=k)
        else:
            state, y = dense_step(disc, state, u[..., k], step=k)
        ys[..., k] = y
    return ys, state
