"""Finite-difference checks over every autodiff op and every loss.

Each registry entry builds, from a random generator, a scalar function of one
tensor and the point to check it at.  :func:`run_registry` evaluates every
entry at ``configs`` random configurations.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as L
from .data import LabeledBatch, UnlabeledBatch
from .models import features, init_bundle
from .trainer import HyperParams, step1_objective, step2_objective, step3_objective

TOLERANCE = 1e-4
K_CHECK = 3


def _probs(rng, b, c):
    return ad.softmax(ad.Tensor(rng.normal(size=(b, c))))


def _weights_probe(w):
    """Random fixed weights so an op's output reduces to a generic scalar."""
    return ad.Tensor(w)


def _elementwise(fn, positive=False):
    def build(rng):
        x = rng.uniform(0.2, 2.0, size=(3, 4)) if positive else rng.normal(size=(3, 4))
        c = _weights_probe(rng.normal(size=(3, 4)))
        return (lambda t: ad.reduce_sum(ad.mul(fn(t), c))), x
    return build


def _binary(fn, side):
    def build(rng):
        other = ad.Tensor(rng.normal(size=(3, 4)))
        c = _weights_probe(rng.normal(size=(3, 4)))
        if side == 0:
            return (lambda t: ad.reduce_sum(ad.mul(fn(t, other), c))), rng.normal(size=(3, 4))
        return (lambda t: ad.reduce_sum(ad.mul(fn(other, t), c))), rng.normal(size=(3, 4))
    return build


def _scalar_operand(rng):
    other = ad.Tensor(rng.normal(size=(3, 4)))
    c = _weights_probe(rng.normal(size=(3, 4)))
    return (lambda t: ad.reduce_sum(ad.mul(ad.mul(other, t), c))), rng.normal(size=())


def _matmul(side):
    def build(rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        c = _weights_probe(rng.normal(size=(3, 2)))
        if side == 0:
            return (lambda t: ad.reduce_sum(ad.mul(ad.matmul(t, ad.Tensor(b)), c))), a
        return (lambda t: ad.reduce_sum(ad.mul(ad.matmul(ad.Tensor(a), t), c))), b
    return build


def _linear(arg, activation):
    def build(rng):
        vals = [rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)]
        c = _weights_probe(rng.normal(size=(5, 4)))

        def f(t):
            args = [ad.Tensor(v) for v in vals]
            args[arg] = t
            return ad.reduce_sum(ad.mul(ad.linear(*args, activation=activation), c))
        return f, vals[arg]
    return build


def _reduction(kind, axis):
    def build(rng):
        shape_out = {None: (), 0: (4,), 1: (3,)}[axis]
        c = _weights_probe(rng.normal(size=shape_out))
        return (lambda t: ad.reduce_sum(ad.mul(ad.reduce(kind, t, axis), c))), rng.normal(size=(3, 4))
    return build


def _softmax(rng):
    c = _weights_probe(rng.normal(size=(3, 4)))
    return (lambda t: ad.reduce_sum(ad.mul(ad.softmax(t), c))), rng.normal(size=(3, 4))


# ---------------------------------------------------------------------------
# loss entries


def _ce(rng):
    y = L.one_hot(rng.integers(0, 4, size=5), 4)
    return (lambda t: L.cross_entropy(ad.softmax(t), y)), rng.normal(size=(5, 4))


def _entropy(rng):
    return (lambda t: L.entropy(ad.softmax(t))), rng.normal(size=(5, 4))


def _discrepancy(mode):
    def build(rng):
        other = _probs(rng, 5, 2 * K_CHECK)
        return (lambda t: L.discriminator_discrepancy(ad.softmax(t), other, K_CHECK, mode)), rng.normal(size=(5, 2 * K_CHECK))
    return build


@dataclass
class _Setup:
    bundle: object
    hp: HyperParams
    sb: LabeledBatch
    tb: UnlabeledBatch


def _setup(rng, n=4):
    seed = int(rng.integers(0, 2**31))
    bundle = init_bundle(K_CHECK, seed, extractor_hidden=(8,), feature_dim=5,
                         predictor_hidden=(6,), discriminator_hidden=(6,), activation="tanh")
    hp = HyperParams(extractor_hidden=(8,), feature_dim=5, predictor_hidden=(6,),
                     discriminator_hidden=(6,), seed=seed)
    sb = LabeledBatch(rng.normal(size=(n, 2)), rng.integers(0, K_CHECK, size=n))
    tb = UnlabeledBatch(rng.normal(size=(n, 2)))
    return _Setup(bundle, hp, sb, tb)


def _param_fn(bundle, net, layer, which, loss_of_bundle):
    """Return ``f(t)`` that evaluates ``loss_of_bundle`` with one parameter replaced by ``t``."""
    mlp = getattr(bundle, net)

    def f(t):
        saved = mlp.layers[layer]
        pair = list(saved)
        pair[which] = t
        mlp.layers[layer] = tuple(pair)
        try:
            return loss_of_bundle(bundle)
        finally:
            mlp.layers[layer] = saved
    return f, mlp.layers[layer][which].data.copy()


def _model_loss(loss_of_setup, net="G", layer=0):
    def build(rng):
        s = _setup(rng)
        which = int(rng.integers(0, 2))
        return _param_fn(s.bundle, net, layer, which, lambda b: loss_of_setup(b, s))
    return build


def _input_features(rng):
    s = _setup(rng)
    c = _weights_probe(rng.normal(size=(4, 5)))
    return (lambda t: ad.reduce_sum(ad.mul(features(s.bundle, t), c))), s.sb.x


def _yhat(b, s):
    return L.pseudo_labels(b, s.tb.x)


# VAT's clean prediction is a stop-gradient constant; finite differences must
# hold it fixed as well, so these entries pin it at the unperturbed value.


def _frozen_vat(rng):
    s = _setup(rng)
    direction = rng.normal(size=s.tb.x.shape)
    p = L.class_probs(s.bundle, s.tb.x).data
    return _param_fn(s.bundle, "F", 0, int(rng.integers(0, 2)),
                     lambda b: L.vat_loss(b, s.tb.x, 0.5, direction=direction, p_clean=p))


def _vat_input(rng):
    # gradient w.r.t. the inputs themselves, perturbation direction frozen
    s = _setup(rng)
    direction = rng.normal(size=s.tb.x.shape)

    def f(t):
        p = L.class_probs(s.bundle, s.tb.x).data
        r = 0.5 * direction / np.sqrt((direction ** 2).sum(axis=1, keepdims=True))
        return L.cross_entropy(L.class_probs(s.bundle, ad.add(t, ad.Tensor(r))), p)
    return f, s.tb.x.copy()


def _step2(net):
    def build(rng):
        s = _setup(rng)
        dirs = (rng.normal(size=s.sb.x.shape), rng.normal(size=s.tb.x.shape))
        targets = (L.class_probs(s.bundle, s.sb.x).data, L.class_probs(s.bundle, s.tb.x).data)
        return _param_fn(s.bundle, net, 0, int(rng.integers(0, 2)),
                         lambda b: step2_objective(b, s.hp, s.sb, s.tb, True, vat_directions=dirs,
                                                   vat_targets=targets)[0])
    return build


def _step(objective, net):
    def build(rng):
        s = _setup(rng)
        if objective is step1_objective:
            fn = lambda b: objective(b, s.hp, s.sb)[0]  # noqa: E731
        else:
            fn = lambda b: objective(b, s.hp, s.sb, s.tb)[0]  # noqa: E731
        return _param_fn(s.bundle, net, 0, int(rng.integers(0, 2)), fn)
    return build


OPS = {
    "matmul[a]": _matmul(0),
    "matmul[b]": _matmul(1),
    **{f"linear{'' if act is None else '_' + act}[{name}]": _linear(i, act)
       for act in (None, "relu", "tanh") for i, name in enumerate("xwb")},
    "add": _binary(ad.add, 0),
    "sub[a]": _binary(ad.sub, 0),
    "sub[b]": _binary(ad.sub, 1),
    "mul": _binary(ad.mul, 0),
    "mul[scalar]": _scalar_operand,
    "scale": _elementwise(lambda t: ad.scale(t, -1.7)),
    "abs": _elementwise(ad.abs),
    "log": _elementwise(ad.log, positive=True),
    "exp": _elementwise(ad.exp),
    "relu": _elementwise(ad.relu),
    "tanh": _elementwise(ad.tanh),
    "clamp_min": _elementwise(lambda t: ad.clamp_min(t, 0.1)),
    "softmax": _softmax,
    "sum": _reduction("sum", None),
    "sum[axis=0]": _reduction("sum", 0),
    "sum[axis=1]": _reduction("sum", 1),
    "mean": _reduction("mean", None),
    "mean[axis=0]": _reduction("mean", 0),
    "mean[axis=1]": _reduction("mean", 1),
}

LOSSES = {
    "cross_entropy": _ce,
    "entropy": _entropy,
    "discrepancy[full_2K]": _discrepancy("full_2K"),
    "discrepancy[paper_literal_K]": _discrepancy("paper_literal_K"),
    "features[x]": _input_features,
    "source_cls[G]": _model_loss(lambda b, s: L.source_cls_loss(b, s.sb.x, s.sb.y)),
    "source_cls[F]": _model_loss(lambda b, s: L.source_cls_loss(b, s.sb.x, s.sb.y), "F", 1),
    "disc_source_cls[D1]": _model_loss(lambda b, s: L.disc_source_cls(b, "D1", s.sb.x, s.sb.y), "D1"),
    "disc_source_cls[G]": _model_loss(lambda b, s: L.disc_source_cls(b, "D2", s.sb.x, s.sb.y)),
    "disc_target_cls[D2]": _model_loss(lambda b, s: L.disc_target_cls(b, "D2", s.tb.x, _yhat(b, s)), "D2", 1),
    "align_source[G]": _model_loss(lambda b, s: L.align_source(b, "D1", s.sb.x, s.sb.y)),
    "align_target[G]": _model_loss(lambda b, s: L.align_target(b, "D2", s.tb.x, _yhat(b, s))),
    "discrepancy_objective[G]": _model_loss(lambda b, s: L.discrepancy_objective(b, s.sb.x, s.tb.x)),
    "discrepancy_objective[D1]": _model_loss(lambda b, s: L.discrepancy_objective(b, s.sb.x, s.tb.x), "D1"),
    "entropy_loss[F]": _model_loss(lambda b, s: L.entropy_loss(b, s.tb.x), "F"),
    "vat[F, frozen direction]": _frozen_vat,
    "vat[x, frozen direction]": _vat_input,
    "step1_objective[G]": _step(step1_objective, "G"),
    "step2_objective[F]": _step2("F"),
    "step2_objective[D1]": _step2("D1"),
    "step3_objective[G]": _step(step3_objective, "G"),
}

REGISTRY = {**OPS, **LOSSES}


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    configs: int

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE


def check_entry(name, seed=0, configs=10, h=1e-5):
    build = REGISTRY[name]
    rng = np.random.default_rng([seed, sum(name.encode())])
    worst = 0.0
    for _ in range(configs):
        f, x = build(rng)
        worst = max(worst, ad.grad_check(f, x, h=h))
    return CheckResult(name, worst, configs)


def run_registry(seed=0, configs=10, names=None):
    return [check_entry(n, seed, configs) for n in (names or REGISTRY)]


def format_report(results):
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<32} max rel err {r.max_rel_error:.2e}" for r in results]
    worst = max(r.max_rel_error for r in results)
    ok = all(r.passed for r in results)
    verdict = f"PASS (max rel err < {TOLERANCE:g})" if ok else f"FAIL (max rel err {worst:.2e} >= {TOLERANCE:g})"
    return "\n".join(lines + [verdict]) + "\n", ok


__all__ = ["REGISTRY", "OPS", "LOSSES", "check_entry", "run_registry", "format_report", "CheckResult",
           "TOLERANCE"]
