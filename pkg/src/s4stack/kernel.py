"""SSM convolution kernels: brute-force Krylov oracle and the fast DPLR path.

The fast path evaluates the truncated generating function

    K_hat(w) = sum_{i<L} c^H A_bar^i B_bar w^i

at the roots of unity ``w_k = exp(2 pi i k / L)`` through a diagonal resolvent,
a rank-r Woodbury correction and Cauchy products, then recovers the kernel
with ``K_j = (1/L) sum_k K_hat_k exp(-2 pi i j k / L)``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import cauchy
from .discretize import POLE_TOL, DiscreteDplr, dplr_discrete_to_dense, dplr_discretize
from .errors import (DivergenceError, DimensionError, NumericalError, PoleError,
                     RankCorrectionError, ValidationError)
from .ssm_core import DiscreteDense, DplrSpec, _frozen

SINGULAR_NODE_TOL = 1e-12
IMAG_RESIDUE_TOL = 1e-8
KERNEL_MAGIC = b"S4K1"
_HEADER = struct.Struct("<4sIII")  # magic, length, two reserved words


@dataclass(frozen=True)
class ConvKernel:
    k: np.ndarray
    delta: float

    @property
    def length(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class NodeGrid:
    omega: np.ndarray          # exp(2 pi i k / L)
    g: np.ndarray              # (2/delta) (1 - omega) / (1 + omega); 0 where masked
    singular_mask: np.ndarray  # |1 + omega| < SINGULAR_NODE_TOL

    @property
    def length(self) -> int:
        return self.omega.shape[0]


@dataclass(frozen=True)
class CTilde:
    c_tilde: np.ndarray


def _check_length(l):
    if int(l) != l or l < 1:
        raise ValidationError(f"kernel length must be a positive integer, got {l!r}", field="l")
    return int(l)


def make_kernel(k, delta) -> ConvKernel:
    k = np.asarray(k, dtype=float).reshape(-1)
    if k.size < 1 or not np.all(np.isfinite(k)):
        raise ValidationError("kernel must be non-empty and finite", field="k")
    return ConvKernel(_frozen(k, float), float(delta))


def make_node_grid(l, delta) -> NodeGrid:
    l = _check_length(l)
    omega = np.exp(2j * np.pi * np.arange(l) / l)
    mask = np.zeros(l, dtype=bool)
    if l % 2 == 0:
        mask[l // 2] = True
    # (1 - w) / (1 + w) = -i tan(theta / 2) on the unit circle
    with np.errstate(all="ignore"):
        g = (-2j / delta) * np.tan(np.pi * np.arange(l) / l)
    g[mask] = 0
    return NodeGrid(_frozen(omega), _frozen(g), _frozen(mask, bool))


# -- FFT backend -----------------------------------------------------------------

def dft_naive(x, sign=-1):
    """Quadratic DFT ``X_j = sum_k x_k exp(sign 2 pi i j k / L)``."""
    x = np.asarray(x, dtype=complex)
    l = x.shape[-1]
    idx = np.arange(l)
    w = np.exp(sign * 2j * np.pi * np.outer(idx, idx) / l)
    return x @ w.T


def _dft(x, backend):
    if backend == "numpy":
        return np.fft.fft(x)
    if backend == "naive":
        return dft_naive(x, -1)
    raise ValidationError(f"unknown FFT backend {backend!r}", field="fft_backend")


# -- Brute-force oracle -------------------------------------------------------------

def krylov_kernel_complex(disc: DiscreteDense, l) -> np.ndarray:
    """``(c^H A_bar^i B_bar)_{i<L}`` by iterated matrix-vector products."""
    l = _check_length(l)
    out = np.empty(l, dtype=complex)
    x = np.array(disc.b_bar)
    a = disc.a_bar
    c = disc.c_bar.conj()
    for i in range(l):
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"Krylov power diverged at index {i}", step=i)
        out[i] = c @ x
        x = a @ x
    return out


def krylov_kernel_naive(disc: DiscreteDense, l) -> ConvKernel:
    """Verification oracle: ``K_i = Re(c^H A_bar^i B_bar)``, O(N^2 L)."""
    return make_kernel(krylov_kernel_complex(disc, l).real, disc.delta)


# -- Truncation correction ----------------------------------------------------------

def _as_discrete(spec, delta):
    return spec if isinstance(spec, DiscreteDplr) else dplr_discretize(spec, delta)


def _truncation_factor(spec, delta, l):
    disc = _as_discrete(spec, delta)
    a_bar = dplr_discrete_to_dense(disc).a_bar
    power = np.linalg.matrix_power(a_bar, l)  # binary exponentiation
    if not np.all(np.isfinite(power)):
        raise DivergenceError(f"A_bar^{l} is not finite")
    return np.eye(spec.n) - power


def c_tilde_from_c(spec: DplrSpec, delta, l, c=None) -> CTilde:
    """``c~ = (I - A_bar^L)^H c`` with ``c`` defaulting to ``spec.c``."""
    l = _check_length(l)
    c = spec.c if c is None else np.asarray(c, dtype=complex)
    factor = _truncation_factor(spec, delta, l)
    return CTilde(_frozen(factor.conj().T @ c))


def c_from_c_tilde(spec: DplrSpec, delta, l, c_tilde) -> np.ndarray:
    """Inverse map ``c = (I - A_bar^L)^{-H} c~``."""
    l = _check_length(l)
    ct = c_tilde.c_tilde if isinstance(c_tilde, CTilde) else np.asarray(c_tilde, dtype=complex)
    factor = _truncation_factor(spec, delta, l).conj().T
    cond = np.linalg.cond(factor)
    if not np.isfinite(cond) or cond > 1e14:
        raise PoleError(f"I - A_bar^L is singular (condition {cond:.3g})")
    return np.linalg.solve(factor, ct)


# -- Generating function -------------------------------------------------------------

def truncated_generating_function(disc: DiscreteDense, z, l) -> complex:
    """Dense closed form ``c^H (I - A_bar^L z^L)(I - A_bar z)^-1 B_bar``."""
    l = _check_length(l)
    n = disc.n
    res = np.eye(n) - disc.a_bar * z
    cond = np.linalg.cond(res)
    if not np.isfinite(cond) or cond > 1e14:
        raise PoleError(f"I - A_bar z is singular at z = {z}")
    x = np.linalg.solve(res, disc.b_bar)
    x = x - np.linalg.matrix_power(disc.a_bar, l) @ x * z ** l
    return complex(disc.c_bar.conj() @ x)


def _woodbury_combine(k00, k01, k10, k11, idx):
    """``k00 - k01 (I + k11)^-1 k10`` per node; ``idx`` maps rows to node numbers."""
    r = k11.shape[-1]
    if r == 0:
        return k00
    if r == 1:
        den = 1 + k11[:, 0, 0]
        det = den
        corr = k01[:, 0] * k10[:, 0] / np.where(den == 0, 1, den)
    elif r == 2:
        a = 1 + k11[:, 0, 0]
        b = k11[:, 0, 1]
        c = k11[:, 1, 0]
        d = 1 + k11[:, 1, 1]
        det = a * d - b * c
        safe = np.where(det == 0, 1, det)
        s0 = (d * k10[:, 0] - b * k10[:, 1]) / safe
        s1 = (-c * k10[:, 0] + a * k10[:, 1]) / safe
        corr = k01[:, 0] * s0 + k01[:, 1] * s1
    else:
        core = np.eye(r) + k11
        det = np.linalg.det(core)
        corr = np.einsum("mr,mr->m", k01, np.linalg.solve(
            np.where((det == 0)[:, None, None], np.eye(r), core), k10[..., None])[..., 0])
    bad = np.abs(det) < SINGULAR_NODE_TOL
    if np.any(bad):
        node = int(idx[np.argmax(bad)])
        raise RankCorrectionError(f"Woodbury core vanishes at node {node}", node=node)
    return k00 - corr


def gf_dplr_eval(spec: DplrSpec, delta, c_tilde, nodes: NodeGrid, mirror=False) -> np.ndarray:
    """Truncated generating function at every node via Woodbury and Cauchy products.

    The node ``w = -1`` (present for even L) is filled with its analytic limit
    ``(delta/2) c~^H B``. With ``mirror=True`` only nodes ``k <= L/2`` are
    evaluated and the rest filled from ``K_hat(conj w) = conj K_hat(w)``,
    which holds exactly when the kernel is real. Node ``L-1`` is still
    evaluated directly as a spot check; a mismatch raises
    :class:`NumericalError`.
    """
    ct = c_tilde.c_tilde if isinstance(c_tilde, CTilde) else np.asarray(c_tilde, dtype=complex)
    if ct.shape != (spec.n,):
        raise DimensionError(f"c_tilde must have length {spec.n}", field="c_tilde")
    l = nodes.length
    half = l // 2 + 1
    probe = mirror and l >= 3
    todo = np.arange(half) if mirror else np.arange(l)
    if probe:
        todo = np.append(todo, l - 1)
    ok = todo[~nodes.singular_mask[todo]]
    left = np.concatenate([ct[:, None], spec.q], axis=1)
    right = np.concatenate([spec.b[:, None], spec.p], axis=1)
    forms = cauchy.cauchy_forms(cauchy.make_nodes(nodes.g[ok], spec.lambda_), left, right)
    val = _woodbury_combine(forms[:, 0, 0], forms[:, 0, 1:], forms[:, 1:, 0], forms[:, 1:, 1:], ok)
    val *= 2.0 / (1 + nodes.omega[ok])
    out = np.empty(l, dtype=complex)
    if probe:
        direct = val[-1]
        val, ok = val[:-1], ok[:-1]
    out[ok] = val
    out[nodes.singular_mask] = 0.5 * delta * (ct.conj() @ spec.b)
    if mirror:
        rest = np.arange(half, l)
        out[rest] = out[l - rest].conj()
    if probe:
        scale = max(np.abs(out).max(), 1e-12)
        if abs(direct - out[l - 1]) > IMAG_RESIDUE_TOL * scale:
            raise NumericalError("kernel spectrum is not conjugate-symmetric; "
                                 "the system is not similar to a real one")
    return out


def _check_poles(spec, delta):
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise ValidationError(f"step size must be positive, got {delta}", field="delta")
    gap = np.abs(2.0 / delta - spec.lambda_)
    if gap.min() < POLE_TOL:
        worst = spec.lambda_[np.argmin(gap)]
        raise PoleError(f"eigenvalue {worst} sits on the pole 2/delta = {2 / delta}",
                        eigenvalue=worst)
    return delta


def s4_kernel(spec: DplrSpec, delta, l, c_tilde=None, fft_backend="numpy",
              use_symmetry=None) -> ConvKernel:
    """Length-L kernel of the bilinear-discretized DPLR system.

    ``c_tilde`` may be supplied directly (e.g. when it is the stored
    parameter); otherwise it is derived from ``spec.c``. ``use_symmetry``
    defaults to ``spec.conjugate_symmetric`` and halves the node count.
    """
    l = _check_length(l)
    delta = _check_poles(spec, delta)
    if c_tilde is None:
        c_tilde = c_tilde_from_c(spec, delta, l)
    ct = c_tilde.c_tilde if isinstance(c_tilde, CTilde) else np.asarray(c_tilde, dtype=complex)
    if use_symmetry is None:
        use_symmetry = spec.conjugate_symmetric
    nodes = make_node_grid(l, delta)
    khat = gf_dplr_eval(spec, delta, ct, nodes, mirror=use_symmetry)
    k = _dft(khat, fft_backend) / l
    if spec.conjugate_symmetric:
        scale = max(np.abs(k.real).max(), 1e-12)
        resid = np.abs(k.imag).max()
        if resid > IMAG_RESIDUE_TOL * scale:
            raise NumericalError(f"kernel of a real system has imaginary residue {resid:.3g}")
    return make_kernel(k.real, delta)


def kernel_spectrum(kernel) -> np.ndarray:
    """``sum_k K_k w_j^k`` at ``w_j = exp(2 pi i j / L)``: the node values of K_hat."""
    k = kernel.k if isinstance(kernel, ConvKernel) else np.asarray(kernel)
    return np.fft.ifft(k) * k.shape[-1]


# -- Application ------------------------------------------------------------------------

def convolve(kernel, u) -> np.ndarray:
    """Causal convolution ``y_k = sum_{i<=k} K_i u_{k-i}`` along the last axis of ``u``."""
    k = kernel.k if isinstance(kernel, ConvKernel) else np.asarray(kernel, dtype=float)
    u = np.asarray(u, dtype=float)
    l = k.shape[-1]
    if u.shape[-1] != l:
        raise DimensionError(f"input length {u.shape[-1]} does not match kernel length {l}",
                             field="u")
    n = 1 << (2 * l - 1).bit_length()
    y = np.fft.irfft(np.fft.rfft(k, n) * np.fft.rfft(u, n), n)
    return y[..., :l]


def convolve_direct(kernel, u) -> np.ndarray:
    """O(L^2) reference for :func:`convolve`."""
    k = kernel.k if isinstance(kernel, ConvKernel) else np.asarray(kernel, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.convolve(k, u)[: k.shape[0]]


# -- Export ------------------------------------------------------------------------------

def write_kernel_binary(kernel: ConvKernel, path):
    """16-byte header (``S4K1``, u32 length, reserved zeros) then float64 LE values."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(KERNEL_MAGIC, kernel.length, 0, 0))
        fh.write(np.asarray(kernel.k, dtype="<f8").tobytes())


def read_kernel_binary(path, delta=float("nan")) -> ConvKernel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ValidationError("kernel file is truncated")
    magic, length, _, _ = _HEADER.unpack_from(data)
    if magic != KERNEL_MAGIC:
        raise ValidationError(f"bad magic {magic!r}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.shape[0] != length:
        raise ValidationError(f"header says {length} values, file has {body.shape[0]}")
    return make_kernel(body, delta)


def write_kernel_csv(kernel: ConvKernel, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "value"])
        for i, v in enumerate(kernel.k):
            writer.writerow([i, repr(float(v))])
