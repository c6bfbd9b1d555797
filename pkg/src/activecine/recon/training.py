"""Training of the conv cascade and finite-difference gradient checking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from activecine.recon import convnet
from activecine.recon.cascade import (
    CascadeWeights,
    cascade_backward,
    cascade_forward,
    init_cascade_weights,
)

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss = {loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainResult:
    weights: CascadeWeights
    history: list = field(default_factory=list)  # training-set loss before epoch 1, then after each epoch
    best_epoch: int = 0


def pair_loss(output, reference):
    """Mean squared error over complex samples."""
    return float(np.mean(np.abs(output - reference) ** 2))


def loss_and_grads(kdata, reference, config, weights):
    out, tape = cascade_forward(kdata, config, weights)
    diff = out - reference
    loss = float(np.mean(np.abs(diff) ** 2))
    gout = (2.0 / diff.size) * diff
    net_grads, lam_grads = cascade_backward(gout, tape, kdata, config, weights)
    return loss, net_grads, lam_grads


def dataset_loss(pairs, config, weights):
    return float(np.mean([pair_loss(cascade_forward(k, config, weights, keep_tape=False)[0], ref)
                          for k, ref in pairs]))


def _quantize(weights):
    """Round parameters to float32 so a save/load round-trip is exact."""
    for net in weights.nets:
        for layer in net.layers:
            layer.kernel = layer.kernel.astype(np.float32).astype(np.float64)
            layer.bias = layer.bias.astype(np.float32).astype(np.float64)
    weights.lambdas = weights.lambdas.astype(np.float32).astype(np.float64)
    return weights


def train_cascade(pairs, config, lr=1e-3, epochs=100, batch=1, seed=0, momentum=0.9,
                  weights=None, zero_final=True, train_lambdas=True, callback=None):
    """Fit conv regularisers and stage lambdas by minibatch SGD with momentum.

    ``pairs`` is a sequence of (KSpaceData, reference image). Returns the
    parameters with the lowest training-set loss seen (never worse than the
    initialisation), rounded to float32.
    """
    if config.regularizer != "conv":
        raise ValueError("train_cascade needs a conv regularizer")
    if config.dc_mode != "gradient":
        raise ValueError("train_cascade needs gradient-descent data consistency")
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one training pair")
    rng = np.random.default_rng(seed)
    if weights is None:
        weights = init_cascade_weights(config, seed=seed, zero_final=zero_final)
    else:
        weights = weights.copy()

    params = [a for net in weights.nets for a in net.arrays()]
    velocity = [np.zeros_like(a) for a in params]
    lam_velocity = np.zeros_like(weights.lambdas)

    history = [dataset_loss(pairs, config, weights)]
    best = (history[0], weights.copy(), 0)
    for epoch in range(1, epochs + 1):
        try:
            loss = _epoch(pairs, config, weights, params, velocity, lam_velocity,
                          rng, batch, lr, momentum, train_lambdas)
        except ValueError as exc:
            if "non-finite" not in str(exc):
                raise
            raise TrainingDivergedError(epoch, float("nan")) from exc
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        history.append(loss)
        if loss < best[0]:
            best = (loss, weights.copy(), epoch)
        if callback is not None:
            callback(epoch, loss)
        log.debug("epoch %d loss %.6g", epoch, loss)

    return TrainResult(weights=_quantize(best[1]), history=history, best_epoch=best[2])


def _epoch(pairs, config, weights, params, velocity, lam_velocity, rng, batch, lr, momentum, train_lambdas):
    """One pass of momentum SGD; returns the training-set loss afterwards."""
    order = rng.permutation(len(pairs))
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            grads = [np.zeros_like(a) for a in params]
            lam_grad = np.zeros_like(weights.lambdas)
            for i in idx:
                _, net_grads, lg = loss_and_grads(*pairs[i], config, weights)
                for acc, g in zip(grads, (g for ng in net_grads for g in ng)):
                    acc += g / len(idx)
                lam_grad += lg / len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= momentum
                v -= lr * g
                p += v
            if train_lambdas:
                lam_velocity *= momentum
                lam_velocity -= lr * lam_grad
                weights.lambdas += lam_velocity
                np.maximum(weights.lambdas, 0.0, out=weights.lambdas)
        finite = all(np.all(np.isfinite(p)) for p in params) and np.all(np.isfinite(weights.lambdas))
        return dataset_loss(pairs, config, weights) if finite else float("nan")


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


def _param_slots(weights):
    slots = []
    for n, net in enumerate(weights.nets):
        for a, arr in enumerate(net.arrays()):
            slots.extend(("net", n, a, i) for i in range(arr.size))
    slots.extend(("lambda", 0, 0, i) for i in range(weights.lambdas.size))
    return slots


def _array_for(weights, slot):
    kind, n, a, _ = slot
    if kind == "lambda":
        return weights.lambdas
    return weights.nets[n].arrays()[a]


def _loss_and_pattern(kdata, reference, config, weights):
    out, tape = cascade_forward(kdata, config, weights)
    pattern = [m for entry in tape for m in convnet.activation_pattern(entry["caches"])]
    return pair_loss(out, reference), pattern


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(weights, config, sample, probes=25, seed=0, h=1e-3, return_details=False):
    """Max relative error between backprop and central finite differences.

    ``sample`` is one (KSpaceData, reference) pair. Probed parameters are
    drawn at random and always include at least one stage lambda. A probe
    whose +/- h perturbation flips a ReLU is redrawn, since the loss is not
    differentiable across the kink. The relative error's denominator is
    floored at 1e-6 of the largest gradient entry, so a parameter whose
    true gradient is zero is judged against the gradient's scale rather
    than against finite-difference round-off.
    """
    kdata, reference = sample
    weights = weights.copy()
    _, net_grads, lam_grads = loss_and_grads(kdata, reference, config, weights)
    _, base_pattern = _loss_and_pattern(kdata, reference, config, weights)
    scale = max([float(np.max(np.abs(lam_grads), initial=0.0))]
                + [float(np.max(np.abs(g))) for ng in net_grads for g in ng if g.size])
    floor = max(1e-6 * scale, 1e-300)

    slots = _param_slots(weights)
    lam_slots = [s for s in slots if s[0] == "lambda"]
    rng = np.random.default_rng(seed)
    details = []
    attempts = 0
    while len(details) < probes:
        attempts += 1
        if attempts > 50 * probes:
            raise RuntimeError("could not find enough kink-free probes")
        if not details and lam_slots:
            slot = lam_slots[rng.integers(len(lam_slots))]
        else:
            slot = slots[rng.integers(len(slots))]
        arr = _array_for(weights, slot)
        flat = arr.reshape(-1)
        i = slot[3]
        orig = flat[i]
        flat[i] = orig + h
        lp, pat_p = _loss_and_pattern(kdata, reference, config, weights)
        flat[i] = orig - h
        lm, pat_m = _loss_and_pattern(kdata, reference, config, weights)
        flat[i] = orig
        if not (_same_pattern(pat_p, base_pattern) and _same_pattern(pat_m, base_pattern)):
            continue
        numeric = (lp - lm) / (2 * h)
        if slot[0] == "lambda":
            analytic = float(lam_grads[i])
        else:
            analytic = float(net_grads[slot[1]][slot[2]].reshape(-1)[i])
        denom = max(abs(analytic), abs(numeric), floor)
        details.append({"slot": slot, "analytic": analytic, "numeric": numeric,
                        "rel_error": abs(analytic - numeric) / denom})
    worst = max(d["rel_error"] for d in details)
    return (worst, details) if return_details else worst
