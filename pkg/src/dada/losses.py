"""Differentiable losses for the class predictor, joint discriminators and SSL terms.

Every loss is a scalar :class:`~dada.autodiff.Tensor` averaged over the batch.
Model-level losses take the bundle and raw input arrays; pass ``feat`` (the
extractor output ``G(x)``) to reuse one forward pass across several losses.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, abs, add, clamp_min, grad, log, mul, reduce_sum, scale, softmax, sub
from .errors import ConfigError, ContractError, DimensionError
from .models import discriminate, features, predict

LOG_CLAMP = 1e-12

LABEL_MODES = ("source_true", "source_flipped", "target_pseudo", "target_flipped")
DISCREPANCY_MODES = ("full_2K", "paper_literal_K")
_MODE_ALIASES = {"full": "full_2K", "paper": "paper_literal_K"}


@dataclass(frozen=True)
class LossWeights:
    dsc1: float = 1.0
    dsc2: float = 1.0
    dtc1: float = 1.0
    dtc2: float = 1.0
    d: float = 1.0
    svat: float = 1.0
    tvat: float = 1.0
    te: float = 0.1
    dsa1: float = 0.1
    dta1: float = 0.1
    dsa2: float = 0.1
    dta2: float = 0.1
    eps_vat: float = 0.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {value}")
        if self.eps_vat <= 0:
            raise ConfigError(f"eps_vat must be > 0, got {self.eps_vat}")


def normalize_mode(mode):
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in DISCREPANCY_MODES:
        raise ConfigError(f"discrepancy range must be one of {DISCREPANCY_MODES}, got {mode!r}")
    return mode


def one_hot(labels, n):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= n):
        raise ContractError(f"labels must be a 1-D array of ints in [0, {n})")
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels] = 1.0
    return out


def joint_labels(labels, K, mode):
    """2K-wide one-hot rows.

    ``source_true`` / ``target_flipped`` put class k at column k, and
    ``source_flipped`` / ``target_pseudo`` put it at column K + k.
    """
    if mode not in LABEL_MODES:
        raise ValueError(f"unknown label mode {mode!r}")
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= K):
        raise ContractError(f"labels must lie in [0, {K})")
    offset = K if mode in ("source_flipped", "target_pseudo") else 0
    return one_hot(labels + offset, 2 * K)


def _check_batch(x):
    if x is None or (x.shape[0] if hasattr(x, "shape") else len(x)) == 0:
        raise ContractError("empty batch")


# ---------------------------------------------------------------------------
# probability-level losses


def cross_entropy(probs, targets):
    """Mean over rows of ``-<t, log p>``; ``p`` is clamped at 1e-12 before the log.

    ``targets`` may be one-hot or any fixed distribution (no gradient).
    """
    targets = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise DimensionError(f"cross_entropy: probs {probs.shape} vs targets {targets.shape}")
    _check_batch(probs.data)
    logp = log(clamp_min(probs, LOG_CLAMP))
    return scale(reduce_sum(mul(logp, Tensor(targets))), -1.0 / probs.shape[0])


def entropy(probs):
    _check_batch(probs.data)
    logp = log(clamp_min(probs, LOG_CLAMP))
    return scale(reduce_sum(mul(probs, logp)), -1.0 / probs.shape[0])


def discriminator_discrepancy(p1, p2, K, mode="full_2K"):
    """Mean absolute difference of two 2K-way probability rows, averaged over the batch.

    ``full_2K`` averages over all 2K columns; ``paper_literal_K`` only over
    the first K (the source-class block).
    """
    mode = normalize_mode(mode)
    if p1.shape != p2.shape or p1.data.ndim != 2 or p1.shape[1] != 2 * K:
        raise DimensionError(f"discrepancy: expected two [b, {2 * K}] tensors, got {p1.shape}, {p2.shape}")
    _check_batch(p1.data)
    diff = abs(sub(p1, p2))
    b = p1.shape[0]
    if mode == "full_2K":
        return scale(reduce_sum(diff), 1.0 / (2 * K * b))
    mask = np.zeros(p1.shape)
    mask[:, :K] = 1.0
    return scale(reduce_sum(mul(diff, Tensor(mask))), 1.0 / (K * b))


# ---------------------------------------------------------------------------
# model-level losses


def _feat(bundle, x, feat):
    _check_batch(x if feat is None else feat.data)
    return features(bundle, x) if feat is None else feat


def class_probs(bundle, x, feat=None):
    return softmax(predict(bundle, _feat(bundle, x, feat)))


def joint_probs(bundle, which, x, feat=None):
    return softmax(discriminate(bundle, which, _feat(bundle, x, feat)))


def source_cls_loss(bundle, xs, ys, feat=None):
    return cross_entropy(class_probs(bundle, xs, feat), one_hot(ys, bundle.K))


def pseudo_labels(bundle, xt, feat=None):
    """Argmax of the class predictor on target inputs; ties go to the smallest index."""
    logits = predict(bundle, _feat(bundle, xt, feat)).data
    return np.argmax(logits, axis=1)


def _joint_ce(bundle, which, x, labels, mode, feat):
    probs = joint_probs(bundle, which, x, feat)
    return cross_entropy(probs, joint_labels(labels, bundle.K, mode))


def disc_source_cls(bundle, which, xs, ys, feat=None):
    return _joint_ce(bundle, which, xs, ys, "source_true", feat)


def disc_target_cls(bundle, which, xt, yhat, feat=None):
    # routed through G like every other discriminator loss
    return _joint_ce(bundle, which, xt, yhat, "target_pseudo", feat)


def align_source(bundle, which, xs, ys, feat=None):
    return _joint_ce(bundle, which, xs, ys, "source_flipped", feat)


def align_target(bundle, which, xt, yhat, feat=None):
    return _joint_ce(bundle, which, xt, yhat, "target_flipped", feat)


def discrepancy_objective(bundle, xs, xt, mode="full_2K", feat_s=None, feat_t=None):
    """Discrepancy between D1 and D2 on the source batch plus on the target batch."""
    fs = _feat(bundle, xs, feat_s)
    ft = _feat(bundle, xt, feat_t)
    src = discriminator_discrepancy(joint_probs(bundle, "D1", xs, fs), joint_probs(bundle, "D2", xs, fs), bundle.K, mode)
    tgt = discriminator_discrepancy(joint_probs(bundle, "D1", xt, ft), joint_probs(bundle, "D2", xt, ft), bundle.K, mode)
    return add(src, tgt)


def entropy_loss(bundle, xt, feat=None):
    return entropy(class_probs(bundle, xt, feat))


def _unit_rows(d):
    norms = np.sqrt((d * d).sum(axis=1, keepdims=True))
    return d / norms, norms[:, 0]


def default_xi(x):
    """Finite-difference scale for the power iteration: 1e-6 times the input scale."""
    scale_ = float(np.sqrt((x * x).sum(axis=1)).mean()) if len(x) else 1.0
    return 1e-6 * max(1.0, scale_)


def vat_loss(bundle, x, eps, xi=None, power_iters=1, rng=None, direction=None,
             p_clean=None, return_perturbation=False):
    """Virtual adversarial loss of ``F(G(.))`` around the raw inputs ``x``.

    The adversarial direction is found by power iteration on the gradient of
    ``CE(f(x) || f(x + xi d))`` w.r.t. the perturbation; ``direction`` skips
    that search and uses the given per-row directions (normalised here).  The
    clean prediction ``f(x)`` is a constant (pass ``p_clean`` to reuse one
    already computed).  Parameter gradients flow only through the final
    ``f(x + r)`` term.
    """
    if eps <= 0:
        raise ConfigError(f"eps_vat must be > 0, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    _check_batch(x)
    if p_clean is None:
        p_clean = class_probs(bundle, x).data

    if direction is None:
        if power_iters < 1:
            raise ConfigError("power_iters must be >= 1")
        rng = np.random.default_rng(0) if rng is None else rng
        xi = default_xi(x) if xi is None else xi
        d, _ = _unit_rows(rng.standard_normal(x.shape))
        for _ in range(power_iters):
            r = Tensor(xi * d, requires_grad=True)
            div = cross_entropy(class_probs(bundle, add(Tensor(x), r)), p_clean)
            (g,) = grad(div, [r])
            norms = np.sqrt((g * g).sum(axis=1, keepdims=True))
            # a zero gradient gives no direction: keep the previous one
            d = np.where(norms > 0, g / np.where(norms > 0, norms, 1.0), d)
    else:
        d, _ = _unit_rows(np.asarray(direction, dtype=np.float64))

    r_adv = eps * d
    loss = cross_entropy(class_probs(bundle, x + r_adv), p_clean)
    return (loss, r_adv) if return_perturbation else loss
