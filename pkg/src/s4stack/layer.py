"""A forward-only S4 layer: H single-input single-output SSMs plus mixing.

Every feature owns a full DPLR system (lambda, p, q, b, c), a step size and
a skip weight. At initialization the structural part (lambda, p, q) is the
same HiPPO decomposition for every feature; only b, c, delta and d differ.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .discretize import dplr_discretize, recurrent_step, zero_state
from .errors import S4Error, ValidationError
from .hippo import HippoFamily, default_b_vector, nplr_decompose
from .kernel import c_tilde_from_c, convolve, s4_kernel
from .ssm_core import DplrSpec, _frozen, decode_params, encode_params, make_dplr_spec

LAYER_FORMAT = "s4-layer-v1"
DELTA_MIN = 1e-3
DELTA_MAX = 1e-1


class Activation(str, enum.Enum):
    GELU = "gelu"
    RELU = "relu"
    IDENTITY = "identity"

    def __call__(self, x):
        if self is Activation.GELU:
            # tanh approximation
            return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        return x


class ParameterCount(NamedTuple):
    complex_: int
    real: int

    @property
    def real_scalars(self) -> int:
        return 2 * self.complex_ + self.real


@dataclass(frozen=True)
class S4LayerParams:
    """Parameters of one layer. Per-feature arrays lead with the H axis.

    Shapes: ``lambda_`` (H, N), ``p`` and ``q`` (H, N, r), ``b`` and ``c``
    (H, N), ``delta`` and ``d`` (H,), ``mix`` (H, H), ``bias`` (H,).
    """

    lambda_: np.ndarray
    p: np.ndarray
    q: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: np.ndarray
    d: np.ndarray
    mix: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.GELU
    family: str | None = None

    @property
    def h(self) -> int:
        return self.lambda_.shape[0]

    @property
    def n(self) -> int:
        return self.lambda_.shape[1]

    @property
    def rank(self) -> int:
        return self.p.shape[2]

    @property
    def shared_structure(self) -> bool:
        """True when every feature carries the same lambda, p and q."""
        return all(np.array_equal(x, x[:1].repeat(self.h, axis=0))
                   for x in (self.lambda_, self.p, self.q))

    def feature_spec(self, h) -> DplrSpec:
        return make_dplr_spec(self.lambda_[h], self.p[h], self.q[h], self.b[h], self.c[h])


def make_layer_params(lambda_, p, q, b, c, delta, d, mix, bias,
                      activation=Activation.GELU, family=None) -> S4LayerParams:
    lam = np.asarray(lambda_, dtype=complex)
    if lam.ndim != 2:
        raise ValidationError("lambda must have shape (H, N)", field="lambda")
    h, n = lam.shape
    p = np.asarray(p, dtype=complex)
    q = np.asarray(q, dtype=complex)
    if p.ndim == 2:
        p = p[..., None]
    if q.ndim == 2:
        q = q[..., None]
    checks = {"p": (p, (h, n, p.shape[-1])), "q": (q, p.shape), "b": (b, (h, n)),
              "c": (c, (h, n)), "delta": (delta, (h,)), "d": (d, (h,)), "mix": (mix, (h, h)),
              "bias": (bias, (h,))}
    for name, (arr, shape) in checks.items():
        if np.shape(arr) != shape:
            raise ValidationError(f"{name} must have shape {shape}, got {np.shape(arr)}",
                                  field=name)
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)) or np.any(delta <= 0):
        raise ValidationError("every step size must be positive", field="delta")
    for name, arr in (("mix", mix), ("bias", bias), ("d", d)):
        if np.iscomplexobj(arr):
            raise ValidationError(f"{name} must be real", field=name)
    return S4LayerParams(_frozen(lam), _frozen(p), _frozen(q), _frozen(b), _frozen(c),
                         _frozen(delta, float), _frozen(d, float), _frozen(mix, float),
                         _frozen(bias, float), Activation(activation), family)


def layer_init(h, n, family=HippoFamily.LEGS, seed=0,
               activation=Activation.GELU) -> S4LayerParams:
    """HiPPO-initialized layer, deterministic in ``seed``.

    b is the family's input vector moved to the DPLR basis. c is complex
    Gaussian in that basis; delta is log-uniform on [1e-3, 1e-1]; d is
    standard normal; mix is Gaussian scaled by 1/sqrt(H) and bias is zero.
    """
    if int(h) != h or h < 1:
        raise ValidationError(f"feature count must be a positive integer, got {h!r}", field="h")
    family = HippoFamily.parse(family)
    h = int(h)
    decomp = nplr_decompose(family, n)
    rng = np.random.default_rng(seed)
    b = decomp.v.conj().T @ default_b_vector(family, n)
    c = (rng.standard_normal((h, n)) + 1j * rng.standard_normal((h, n))) * math.sqrt(0.5)
    delta = np.exp(rng.uniform(math.log(DELTA_MIN), math.log(DELTA_MAX), h))
    d = rng.standard_normal(h)
    mix = rng.standard_normal((h, h)) / math.sqrt(h)

    def tile(x):
        return np.broadcast_to(x, (h,) + x.shape)

    return make_layer_params(tile(decomp.lambda_), tile(decomp.p), tile(decomp.q), tile(b), c,
                             delta, d, mix, np.zeros(h), activation, family.value)


def parameter_count(params: S4LayerParams) -> ParameterCount:
    """Trainable numbers: ``(3 + 2r) N`` complex plus delta and d per feature, then H^2 + H.

    For rank one that is the familiar 5N complex values per feature SSM.
    """
    per_feature = (3 + 2 * params.rank) * params.n
    return ParameterCount(params.h * per_feature, 2 * params.h + params.h ** 2 + params.h)


def _check_input(params, u):
    u = np.asarray(u, dtype=float)
    if u.ndim != 3 or u.shape[2] != params.h:
        raise ValidationError(f"input must have shape (batch, L, {params.h}), got {u.shape}",
                              field="u")
    if u.shape[1] < 1:
        raise ValidationError("sequence length must be at least 1", field="u")
    return u


def _annotate(err, h):
    err.feature = h
    err.args = (f"feature {h}: {err.args[0] if err.args else err}",) + err.args[1:]
    return err


def _finish(params, y):
    """Activation then ``mix @ y + bias`` per position.

    Accumulated column by column rather than through BLAS so that results do
    not depend on how many positions or batch items are processed together.
    """
    act = params.activation(y)
    out = np.broadcast_to(params.bias, act.shape).copy()
    for j in range(params.h):
        out += act[..., j, None] * params.mix[:, j]
    return out


def layer_kernels(params: S4LayerParams, l) -> np.ndarray:
    """All H convolution kernels stacked as an (H, L) array."""
    out = np.empty((params.h, l))
    for h in range(params.h):
        spec = params.feature_spec(h)
        try:
            out[h] = s4_kernel(spec, params.delta[h], l,
                               c_tilde=c_tilde_from_c(spec, params.delta[h], l)).k
        except S4Error as err:
            raise _annotate(err, h) from err
    return out


def layer_forward_conv(params: S4LayerParams, u) -> np.ndarray:
    """Convolution mode on input of shape (batch, L, H)."""
    u = _check_input(params, u)
    k = layer_kernels(params, u.shape[1])
    ut = np.swapaxes(u, 1, 2)  # (batch, H, L)
    y = convolve(k, ut) + params.d[:, None] * ut
    return _finish(params, np.swapaxes(y, 1, 2))


def recurrent_systems(params: S4LayerParams):
    """Discretized per-feature systems for :func:`layer_step`."""
    systems = []
    for h in range(params.h):
        try:
            systems.append(dplr_discretize(params.feature_spec(h), params.delta[h]))
        except S4Error as err:
            raise _annotate(err, h) from err
    return systems


def layer_state(params: S4LayerParams, batch) -> np.ndarray:
    """Zero state of shape (batch, H, N)."""
    return zero_state(params.n, (batch, params.h))


def layer_step(params: S4LayerParams, systems, state, u_t, step=None):
    """Advance one time step. ``u_t`` is (batch, H); returns ``(state, y_t)``.

    Memory and work per step are independent of the sequence length.
    """
    new = np.empty_like(state)
    y = np.empty(np.shape(u_t))
    for h, disc in enumerate(systems):
        try:
            new[:, h], y[:, h] = recurrent_step(disc, state[:, h], u_t[:, h], d=params.d[h],
                                                step=step)
        except S4Error as err:
            raise _annotate(err, h) from err
    return new, _finish(params, y)


def layer_forward_recurrent(params: S4LayerParams, u) -> np.ndarray:
    """Recurrent mode: the same map as :func:`layer_forward_conv`, one step at a time."""
    u = _check_input(params, u)
    systems = recurrent_systems(params)
    state = layer_state(params, u.shape[0])
    out = np.empty(u.shape[:2] + (params.h,))
    for k in range(u.shape[1]):
        state, out[:, k] = layer_step(params, systems, state, u[:, k], step=k)
    return out


def resample_delta(params: S4LayerParams, frequency_ratio) -> S4LayerParams:
    """Adapt to input sampled at ``frequency_ratio`` times the original rate.

    A ratio of 0.5 (half as many samples per unit time) doubles every step.
    """
    ratio = float(frequency_ratio)
    if not np.isfinite(ratio) or ratio <= 0:
        raise ValidationError(f"frequency ratio must be positive, got {frequency_ratio}",
                              field="frequency_ratio")
    return replace(params, delta=_frozen(params.delta / ratio, float))


def subsample_kernel_error(params: S4LayerParams, l, factor=2) -> np.ndarray:
    """Per-feature relative l2 gap between the coarse-step kernel and the fine one.

    The fine kernel has length ``factor * l``; keeping every ``factor``-th
    tap and scaling by ``factor`` (the kernel carries a factor of delta) should
    reproduce the kernel of :func:`resample_delta` ``(params, 1/factor)``.
    """
    factor = int(factor)
    if factor < 1:
        raise ValidationError("factor must be a positive integer", field="factor")
    fine = layer_kernels(params, factor * l)[:, ::factor] * factor
    coarse = layer_kernels(resample_delta(params, 1.0 / factor), l)
    return np.linalg.norm(coarse - fine, axis=1) / np.maximum(np.linalg.norm(coarse, axis=1),
                                                               1e-300)


# -- JSON manifest ---------------------------------------------------------------------

def to_manifest(params: S4LayerParams) -> dict:
    """JSON-ready manifest with one ``s4-params-v1`` block per feature."""
    return {
        "format": LAYER_FORMAT,
        "h": params.h,
        "n": params.n,
        "family": params.family,
        "activation": params.activation.value,
        "mix": params.mix.tolist(),
        "bias": params.bias.tolist(),
        "features": [encode_params(params.feature_spec(h), params.delta[h], d=float(params.d[h]))
                     for h in range(params.h)],
    }


def from_manifest(obj: dict) -> S4LayerParams:
    if obj.get("format") != LAYER_FORMAT:
        raise ValidationError(f"expected format {LAYER_FORMAT!r}, got {obj.get('format')!r}",
                              field="format")
    feats = [decode_params(block) for block in obj["features"]]
    if len(feats) != obj["h"]:
        raise ValidationError("feature count disagrees with h", field="features")
    specs = [f[0] for f in feats]
    return make_layer_params(
        np.stack([s.lambda_ for s in specs]), np.stack([s.p for s in specs]),
        np.stack([s.q for s in specs]), np.stack([s.b for s in specs]),
        np.stack([s.c for s in specs]), [f[1] for f in feats],
        [float(f[2].get("d", 0.0)) for f in feats], obj["mix"], obj["bias"],
        obj.get("activation", "gelu"), obj.get("family"))


def save_manifest(params: S4LayerParams, path):
    with open(path, "w") as fh:
        json.dump(to_manifest(params), fh)


def load_manifest(path) -> S4LayerParams:
    with open(path) as fh:
        return from_manifest(json.load(fh))
