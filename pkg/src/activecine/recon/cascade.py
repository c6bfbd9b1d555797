"""
Unrolled cascade of regularisation and data-consistency (DC) stages.

Each stage computes z = x + R_t(x) followed by the gradient step
x <- z - eta * lambda_t * A*(A z - f). The start point is the
density-compensated adjoint (the nuFFT-style baseline).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from activecine.recon import convnet
from activecine.recon.operators import adjoint_operator, dc_replace, normal_operator

REGULARIZERS = ("zero", "tv", "conv")
DC_MODES = ("gradient", "replace")


@dataclass(frozen=True)
class CascadeConfig:
    n_cascades: int = 5
    n_layers: int = 5
    lambdas: tuple | None = None
    lambda_init: float = 1.0
    eta: float = 1.0
    regularizer: str = "conv"
    # TV step for stage t is tv_strength * tv_decay**t
    tv_strength: float = 0.03
    tv_decay: float = 0.7
    tv_temporal: float = 1.0
    tv_eps: float = 1e-6
    channels: int = 16
    kernel_size: int = 3
    share_weights: bool = False
    dc_mode: str = "gradient"

    def __post_init__(self):
        if self.n_cascades < 1:
            raise ValueError("cascade depth must be >= 1")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.regularizer == "conv" and self.n_layers < 2:
            raise ValueError("a conv regularizer needs n_layers >= 2")
        if self.dc_mode not in DC_MODES:
            raise ValueError(f"unknown dc_mode {self.dc_mode!r}")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.tv_strength < 0:
            raise ValueError("TV strength must be nonnegative")
        lams = self.stage_lambdas()
        if np.any(lams < 0):
            raise ValueError("stage lambdas must be nonnegative")

    def stage_lambdas(self):
        if self.lambdas is None:
            return np.full(self.n_cascades, float(self.lambda_init))
        lams = np.asarray(self.lambdas, dtype=float)
        if lams.shape != (self.n_cascades,):
            raise ValueError(f"need one lambda per stage ({self.n_cascades}), got {lams.shape}")
        return lams

    def to_dict(self):
        d = asdict(self)
        if d["lambdas"] is not None:
            d["lambdas"] = list(d["lambdas"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("lambdas") is not None:
            d["lambdas"] = tuple(d["lambdas"])
        return cls(**d)


def tv_preset(**overrides):
    """Deterministic TV cascade used for training-free acquisition runs."""
    base = dict(n_cascades=10, regularizer="tv", tv_strength=0.03, tv_decay=0.7, tv_temporal=1.0)
    base.update(overrides)
    return CascadeConfig(**base)


@dataclass
class CascadeWeights:
    """Learned parameters: one conv net per stage (or one shared) and lambdas."""

    nets: list
    lambdas: np.ndarray
    config: CascadeConfig = field(default_factory=CascadeConfig)

    def net_for_stage(self, t):
        return self.nets[0] if len(self.nets) == 1 else self.nets[t]

    def copy(self):
        return CascadeWeights([n.copy() for n in self.nets], self.lambdas.copy(), self.config)


def init_cascade_weights(config, seed=0, zero_final=True):
    rng = np.random.default_rng(seed)
    n_nets = 1 if config.share_weights else config.n_cascades
    nets = [convnet.init_convnet(config.n_layers, config.channels, config.kernel_size,
                                 rng=rng, zero_final=zero_final) for _ in range(n_nets)]
    return CascadeWeights(nets, config.stage_lambdas().copy(), config)


# ---------------------------------------------------------------------------
# Regularisers
# ---------------------------------------------------------------------------


def tv_gradient(u, temporal=1.0, eps=1e-6):
    """Gradient of the smoothed isotropic TV energy sum sqrt(|Du|^2 + eps).

    Forward differences along x, y and (weighted by ``temporal``) t, with
    zero difference past the last sample. Works on complex stacks by
    treating real and imaginary parts jointly.
    """
    u = np.asarray(u)
    dx = np.zeros_like(u)
    dx[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    dy = np.zeros_like(u)
    dy[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    mag2 = dx.real ** 2 + dy.real ** 2 + eps
    if np.iscomplexobj(u):
        mag2 += dx.imag ** 2 + dy.imag ** 2
    dt = None
    if temporal and u.ndim == 3 and u.shape[0] > 1:
        dt = np.zeros_like(u)
        dt[:-1] = temporal * (u[1:] - u[:-1])
        mag2 += dt.real ** 2 + (dt.imag ** 2 if np.iscomplexobj(u) else 0)
    mag = np.sqrt(mag2)
    dx /= mag
    dy /= mag
    g = -dx - dy
    g[..., :, 1:] += dx[..., :, :-1]
    g[..., 1:, :] += dy[..., :-1, :]
    if dt is not None:
        dt /= mag
        g -= temporal * dt
        g[1:] += temporal * dt[:-1]
    return g


def tv_energy(u, temporal=1.0, eps=1e-6):
    u = np.asarray(u)
    dx = np.zeros(u.shape)
    dx[..., :, :-1] = np.abs(u[..., :, 1:] - u[..., :, :-1]) ** 2
    dy = np.zeros(u.shape)
    dy[..., :-1, :] = np.abs(u[..., 1:, :] - u[..., :-1, :]) ** 2
    total = dx + dy + eps
    if temporal and u.ndim == 3 and u.shape[0] > 1:
        total[:-1] += temporal ** 2 * np.abs(u[1:] - u[:-1]) ** 2
    return float(np.sum(np.sqrt(total)))


def regularizer_apply(x, config, weights=None, stage=0):
    """Stage residual R_t(x) added to x before the DC step."""
    kind = config.regularizer
    if kind == "zero":
        return np.zeros_like(x)
    if kind == "tv":
        step = config.tv_strength * config.tv_decay ** stage
        return -step * tv_gradient(x, config.tv_temporal, config.tv_eps)
    if weights is None:
        raise ValueError("conv regularizer needs cascade weights")
    net = weights.net_for_stage(stage)
    out, _ = convnet.net_forward(convnet.complex_to_channels(x), net)
    return convnet.channels_to_complex(out)


def _check_weights(config, weights):
    if config.regularizer != "conv":
        return
    if weights is None:
        raise ValueError("conv regularizer needs cascade weights")
    expected = 1 if config.share_weights else config.n_cascades
    if len(weights.nets) != expected:
        raise ValueError(f"expected {expected} conv nets, weights hold {len(weights.nets)}")
    for net in weights.nets:
        net.validate(2, 2)


def _stage_lambdas(config, weights):
    if weights is not None:
        lams = np.asarray(weights.lambdas, dtype=float)
        if lams.shape != (config.n_cascades,):
            raise ValueError("weights carry the wrong number of stage lambdas")
        return lams
    return config.stage_lambdas()


def reconstruct_cascade(kdata, config, weights=None):
    """Run the unrolled cascade on undersampled k-space."""
    out, _ = cascade_forward(kdata, config, weights, keep_tape=False)
    return out


def cascade_forward(kdata, config, weights=None, keep_tape=True):
    """Forward pass; the tape holds what the backward pass needs."""
    _check_weights(config, weights)
    lams = _stage_lambdas(config, weights)
    x = adjoint_operator(kdata, use_dcf=True)
    atf = adjoint_operator(kdata, use_dcf=False) if config.dc_mode == "gradient" else None
    tape = []
    for t in range(config.n_cascades):
        caches = None
        if config.regularizer == "conv":
            y, caches = convnet.net_forward(convnet.complex_to_channels(x), weights.net_for_stage(t))
            z = x + convnet.channels_to_complex(y)
        else:
            z = x + regularizer_apply(x, config, weights, stage=t)
        if config.dc_mode == "replace":
            x = dc_replace(z, kdata)
            r = None
        else:
            r = normal_operator(z, kdata.mask) - atf
            x = z - (config.eta * lams[t]) * r
        if keep_tape:
            tape.append({"caches": caches, "r": r})
    return x, tape


def cascade_backward(gout, tape, kdata, config, weights):
    """Gradients of a loss w.r.t. every net parameter and stage lambda.

    ``gout`` is dL/dRe(x) + i dL/dIm(x) at the cascade output. Returns
    (net_grads, lambda_grads) where net_grads[i] aligns with
    weights.nets[i].arrays().
    """
    if config.regularizer == "tv" or config.dc_mode != "gradient":
        raise ValueError("backpropagation supports conv or zero regularizers with gradient DC")
    lams = np.asarray(weights.lambdas, dtype=float)
    net_grads = [[np.zeros_like(a) for a in net.arrays()] for net in weights.nets]
    lam_grads = np.zeros_like(lams)
    g = gout
    for t in range(config.n_cascades - 1, -1, -1):
        entry = tape[t]
        step = config.eta * lams[t]
        lam_grads[t] = -config.eta * float(np.sum((np.conj(g) * entry["r"]).real))
        gz = g - step * normal_operator(g, kdata.mask)
        if config.regularizer == "zero":
            g = gz
            continue
        net_idx = 0 if len(weights.nets) == 1 else t
        gin, grads = convnet.net_backward(convnet.complex_to_channels(gz),
                                          weights.nets[net_idx], entry["caches"])
        for acc, gr in zip(net_grads[net_idx], grads):
            acc += gr
        g = gz + convnet.channels_to_complex(gin)
    return net_grads, lam_grads


def with_lambdas(config, lambdas):
    return replace(config, lambdas=tuple(float(v) for v in lambdas))
