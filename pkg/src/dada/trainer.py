"""Three-step alternating training with momentum SGD and an annealed learning rate.

Step 1 fits all four networks on source data.  Afterwards every minibatch
pair runs step 2 (F, D1, D2 move; the discriminators ascend on their
discrepancy) followed by step 3 (only G moves, descending on the alignment
losses and the discrepancy).  A network that a step does not train is never
written to, so freezing holds bitwise.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses as L
from .autodiff import Tensor, add, grad, scale
from .data import batches
from .errors import ConfigError
from .losses import LossWeights
from .models import ACTIVATIONS, features, init_bundle, predict_labels

METRIC_KEYS = (
    "epoch", "phase", "lr", "lr_head",
    "loss_sc", "loss_dsc1", "loss_dsc2", "loss_dtc1", "loss_dtc2",
    "loss_d", "loss_d_paper", "loss_d_full",
    "loss_te", "loss_svat", "loss_tvat", "loss_dsa", "loss_dta",
    "acc_source", "acc_target",
)
HEAD_NETWORKS = ("F", "D1", "D2")


@dataclass(frozen=True)
class HyperParams:
    weights: LossWeights = field(default_factory=LossWeights)
    eta0: float = 0.04
    alpha: float = 10.0
    beta: float = 0.75
    momentum: float = 0.9
    head_lr_multiplier: float = 10.0
    batch_size: int = 64
    step1_epochs: int = 10
    joint_epochs: int = 30
    # epoch index (counted from the start of step 1) at which the target
    # classification terms switch on; None means "when joint training starts"
    warmup_epochs: int = None
    eq12_range: str = "full_2K"
    step2_repeats: int = 1
    vat_xi: float = None
    vat_power_iters: int = 1
    extractor_hidden: tuple = (64, 64)
    feature_dim: int = 16
    predictor_hidden: tuple = (32,)
    discriminator_hidden: tuple = (32,)
    # relu diverges under eta0 = 0.04 with 10x head rates at this scale
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "eq12_range", L.normalize_mode(self.eq12_range))
        for name in ("extractor_hidden", "predictor_hidden", "discriminator_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not self.eta0 > 0:
            raise ConfigError(f"eta0 must be > 0, got {self.eta0}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.head_lr_multiplier <= 0:
            raise ConfigError("head_lr_multiplier must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.step1_epochs < 0 or self.joint_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.step1_epochs + self.joint_epochs == 0:
            raise ConfigError("nothing to train: step1_epochs + joint_epochs == 0")
        if self.warmup_epochs is not None and not 0 <= self.warmup_epochs <= self.step1_epochs + self.joint_epochs:
            raise ConfigError("warmup_epochs must lie in [0, step1_epochs + joint_epochs]")
        if self.step2_repeats < 1 or self.vat_power_iters < 1:
            raise ConfigError("step2_repeats and vat_power_iters must be >= 1")
        if self.vat_xi is not None and self.vat_xi <= 0:
            raise ConfigError("vat_xi must be > 0")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def warmup(self):
        return self.step1_epochs if self.warmup_epochs is None else self.warmup_epochs

    def with_weights(self, **changes):
        return replace(self, weights=replace(self.weights, **changes))


def lr_schedule(p, eta0=0.04, alpha=10.0, beta=0.75):
    """Annealed rate ``eta0 * (1 + alpha p)^-beta`` for progress ``p`` in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"progress must lie in [0, 1], got {p}")
    return eta0 * (1.0 + alpha * p) ** (-beta)


def sgd_update(params, grads, lr, momentum, buffers):
    """Classical momentum: ``v <- m v + g`` then ``w <- w - lr v``.

    ``buffers`` is a list of arrays aligned with ``params`` and is updated in
    place.  Parameter arrays are replaced, never mutated, so graphs built
    earlier keep their values.
    """
    for i, (p, g) in enumerate(zip(params, grads)):
        v = buffers[i]
        v *= momentum
        v += g
        p.data = p.data - lr * v


@dataclass
class MetricsLog:
    records: list = field(default_factory=list)
    # one (update index, phase, progress, lr of G, lr of heads) tuple per update
    updates: list = field(default_factory=list)

    def to_ndjson(self):
        return "".join(json.dumps({k: rec.get(k) for k in METRIC_KEYS}) + "\n" for rec in self.records)

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_ndjson())

    @staticmethod
    def read(path):
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


@dataclass
class TrainState:
    bundle: object
    hp: HyperParams
    buffers: dict
    total_updates: int = 1
    update_index: int = 0
    progress: float = 0.0
    epoch: int = 0
    log: MetricsLog = field(default_factory=MetricsLog)
    vat_rng: np.random.Generator = None

    @classmethod
    def create(cls, bundle, hp, total_updates=1):
        buffers = {name: [np.zeros_like(p.data) for p in net.parameters()]
                   for name, net in bundle.networks().items()}
        return cls(bundle, hp, buffers, total_updates=max(1, total_updates),
                   vat_rng=np.random.Generator(np.random.PCG64([hp.seed, 7])))

    def learning_rates(self):
        lr = lr_schedule(self.progress, self.hp.eta0, self.hp.alpha, self.hp.beta)
        return lr, self.hp.head_lr_multiplier * lr

    def begin_update(self, phase):
        """Advance the progress counter and record the rates for this update."""
        n = self.total_updates
        self.progress = self.update_index / (n - 1) if n > 1 else 1.0
        lr, lr_head = self.learning_rates()
        self.log.updates.append((self.update_index, phase, self.progress, lr, lr_head))
        self.update_index += 1
        return lr, lr_head


def _apply(state, names, total, lr_by_name):
    """Differentiate ``total`` w.r.t. the networks in ``names`` and step them."""
    nets = {n: getattr(state.bundle, n) for n in names}
    params = [p for net in nets.values() for p in net.parameters()]
    grads = grad(total, params)
    i = 0
    for n, net in nets.items():
        k = len(net.parameters())
        sgd_update(net.parameters(), grads[i:i + k], lr_by_name[n], state.hp.momentum, state.buffers[n])
        i += k


def _weighted(terms):
    """Sum of ``w * loss`` over the (weight, loss) pairs with non-zero weight."""
    total = None
    for w, loss in terms:
        if w == 0 or loss is None:
            continue
        t = loss if w == 1 else scale(loss, w)
        total = t if total is None else add(total, t)
    return total


def _val(t):
    return None if t is None else t.item()


def step1_objective(bundle, hp, source_batch):
    """Losses of step 1 and their weighted total (all four networks trainable)."""
    w = hp.weights
    xs, ys = source_batch.x, source_batch.y
    feat = features(bundle, xs)
    out = {"loss_sc": L.source_cls_loss(bundle, xs, ys, feat)}
    out["loss_dsc1"] = L.disc_source_cls(bundle, "D1", xs, ys, feat) if w.dsc1 else None
    out["loss_dsc2"] = L.disc_source_cls(bundle, "D2", xs, ys, feat) if w.dsc2 else None
    total = _weighted([(1.0, out["loss_sc"]), (w.dsc1, out["loss_dsc1"]), (w.dsc2, out["loss_dsc2"])])
    return total, out


def step2_objective(bundle, hp, source_batch, target_batch, use_target_cls=True,
                    vat_rng=None, vat_directions=None, vat_targets=None):
    """Losses of step 2 and their weighted total.

    G's outputs enter as constants.  The discrepancy enters with weight
    ``-lambda_d``, so minimising the total pushes D1 and D2 apart.
    ``vat_directions`` (source, target) fixes the VAT perturbation directions
    and ``vat_targets`` (source, target) the clean predictions VAT compares
    against; both default to values computed from the batch.
    """
    w, K = hp.weights, bundle.K
    xs, ys, xt = source_batch.x, source_batch.y, target_batch.x
    fs = Tensor(features(bundle, xs).data)
    ft = Tensor(features(bundle, xt).data)

    ps = L.class_probs(bundle, xs, fs)
    pt = L.class_probs(bundle, xt, ft)
    yhat = np.argmax(pt.data, axis=1)
    ds, dt = vat_directions if vat_directions is not None else (None, None)
    qs, qt = vat_targets if vat_targets is not None else (ps.data, pt.data)
    vat_kw = dict(xi=hp.vat_xi, power_iters=hp.vat_power_iters, rng=vat_rng)
    out = {
        "loss_sc": L.cross_entropy(ps, L.one_hot(ys, K)),
        "loss_te": L.entropy(pt) if w.te else None,
        "loss_svat": L.vat_loss(bundle, xs, w.eps_vat, p_clean=qs, direction=ds, **vat_kw) if w.svat else None,
        "loss_tvat": L.vat_loss(bundle, xt, w.eps_vat, p_clean=qt, direction=dt, **vat_kw) if w.tvat else None,
    }
    probs = {(n, dom): L.joint_probs(bundle, n, None, f) for n in ("D1", "D2") for dom, f in (("s", fs), ("t", ft))}
    for i, n in ((1, "D1"), (2, "D2")):
        out[f"loss_dsc{i}"] = L.cross_entropy(probs[n, "s"], L.joint_labels(ys, K, "source_true"))
        out[f"loss_dtc{i}"] = (L.cross_entropy(probs[n, "t"], L.joint_labels(yhat, K, "target_pseudo"))
                               if use_target_cls else None)
    for key, mode in (("loss_d_full", "full_2K"), ("loss_d_paper", "paper_literal_K")):
        out[key] = add(
            L.discriminator_discrepancy(probs["D1", "s"], probs["D2", "s"], K, mode),
            L.discriminator_discrepancy(probs["D1", "t"], probs["D2", "t"], K, mode),
        )
    out["loss_d"] = out["loss_d_full"] if hp.eq12_range == "full_2K" else out["loss_d_paper"]

    total = _weighted([
        (1.0, out["loss_sc"]), (w.svat, out["loss_svat"]), (w.te, out["loss_te"]), (w.tvat, out["loss_tvat"]),
        (w.dsc1, out["loss_dsc1"]), (w.dtc1, out["loss_dtc1"]),
        (w.dsc2, out["loss_dsc2"]), (w.dtc2, out["loss_dtc2"]),
        (-w.d, out["loss_d"]),
    ])
    return total, out


def step3_objective(bundle, hp, source_batch, target_batch):
    """Losses of step 3 and their weighted total (only G is trained on it).

    Pseudo-labels come from the current ``F(G(x_t))``.
    """
    w, K = hp.weights, bundle.K
    xs, ys, xt = source_batch.x, source_batch.y, target_batch.x
    fs = features(bundle, xs)
    ft = features(bundle, xt)
    yhat = L.pseudo_labels(bundle, xt, ft)
    probs = {(n, dom): L.joint_probs(bundle, n, None, f) for n in ("D1", "D2") for dom, f in (("s", fs), ("t", ft))}
    out = {}
    for i, n in ((1, "D1"), (2, "D2")):
        out[f"loss_dsa{i}"] = L.cross_entropy(probs[n, "s"], L.joint_labels(ys, K, "source_flipped"))
        out[f"loss_dta{i}"] = L.cross_entropy(probs[n, "t"], L.joint_labels(yhat, K, "target_flipped"))
    out["loss_d"] = add(
        L.discriminator_discrepancy(probs["D1", "s"], probs["D2", "s"], K, hp.eq12_range),
        L.discriminator_discrepancy(probs["D1", "t"], probs["D2", "t"], K, hp.eq12_range),
    )
    total = _weighted([
        (w.dsa1, out["loss_dsa1"]), (w.dta1, out["loss_dta1"]),
        (w.dsa2, out["loss_dsa2"]), (w.dta2, out["loss_dta2"]),
        (w.d, out["loss_d"]),
    ])
    return total, out


def _values(out):
    return {k: _val(v) for k, v in out.items()}


def step1(state, source_batch, lrs=None):
    """One source-only update of G, F, D1 and D2."""
    lr, lr_head = state.begin_update("step1") if lrs is None else lrs
    total, out = step1_objective(state.bundle, state.hp, source_batch)
    names = ["G", "F"] + [n for n, k in (("D1", "loss_dsc1"), ("D2", "loss_dsc2")) if out[k] is not None]
    _apply(state, names, total, {"G": lr, "F": lr_head, "D1": lr_head, "D2": lr_head})
    return _values(out)


def step2(state, source_batch, target_batch, lrs=None, use_target_cls=True):
    """One update of F, D1 and D2 with G frozen."""
    lr, lr_head = state.begin_update("step2") if lrs is None else lrs
    total, out = step2_objective(state.bundle, state.hp, source_batch, target_batch,
                                 use_target_cls, vat_rng=state.vat_rng)
    _apply(state, HEAD_NETWORKS, total, {n: lr_head for n in HEAD_NETWORKS})
    return _values(out)


def step3(state, source_batch, target_batch, lrs=None):
    """One update of G with F, D1 and D2 frozen."""
    lr, lr_head = state.begin_update("step3") if lrs is None else lrs
    total, out = step3_objective(state.bundle, state.hp, source_batch, target_batch)
    if total is not None:
        _apply(state, ("G",), total, {"G": lr})
    vals = _values(out)
    return {
        "loss_dsa": 0.5 * (vals["loss_dsa1"] + vals["loss_dsa2"]),
        "loss_dta": 0.5 * (vals["loss_dta1"] + vals["loss_dta2"]),
        "loss_d_step3": vals["loss_d"],
    }


def accuracy_of(bundle, x, y):
    return float(np.mean(predict_labels(bundle, x) == y)) if len(y) else float("nan")


def _epoch_record(state, pair, phase, lr, lr_head, collected):
    rec = {"epoch": state.epoch, "phase": phase, "lr": lr, "lr_head": lr_head}
    for key, values in collected.items():
        vals = [v for v in values if v is not None]
        rec[key] = math.fsum(vals) / len(vals) if vals else None
    rec["acc_source"] = accuracy_of(state.bundle, pair.source_x, pair.source_y)
    rec["acc_target"] = accuracy_of(state.bundle, pair.target_x, pair.target_y_hidden)
    return rec


def n_batches(n, batch_size):
    return -(-n // batch_size)


def total_updates(pair, hp):
    per_joint = max(n_batches(pair.n_source, hp.batch_size), n_batches(pair.n_target, hp.batch_size))
    return hp.step1_epochs * n_batches(pair.n_source, hp.batch_size) + hp.joint_epochs * per_joint


def _epoch_seed(seed, epoch, stream):
    return [int(seed), int(epoch), stream]


def train(pair, hp, bundle=None, on_epoch=None):
    """Run step 1 for ``hp.step1_epochs`` then alternate steps 2/3 for ``hp.joint_epochs``.

    Returns ``(bundle, MetricsLog)``.  Target labels are used only for the
    logged accuracy.
    """
    if bundle is None:
        bundle = init_bundle(
            pair.K, hp.seed, input_dim=pair.source_x.shape[1],
            extractor_hidden=hp.extractor_hidden, feature_dim=hp.feature_dim,
            predictor_hidden=hp.predictor_hidden, discriminator_hidden=hp.discriminator_hidden,
            activation=hp.activation,
        )
    state = TrainState.create(bundle, hp, total_updates(pair, hp))
    source, target = pair.source(), pair.target_unlabeled()

    for _ in range(hp.step1_epochs):
        collected = {}
        lrs = None
        for sb in batches(source, hp.batch_size, _epoch_seed(hp.seed, state.epoch, 0)):
            lrs = state.begin_update("step1")
            for k, v in step1(state, sb, lrs).items():
                collected.setdefault(k, []).append(v)
        state.log.records.append(_epoch_record(state, pair, "step1", *lrs, collected))
        if on_epoch:
            on_epoch(state)
        state.epoch += 1

    for _ in range(hp.joint_epochs):
        collected = {}
        lrs = None
        sbs = list(batches(source, hp.batch_size, _epoch_seed(hp.seed, state.epoch, 0)))
        tbs = list(batches(target, hp.batch_size, _epoch_seed(hp.seed, state.epoch, 1)))
        warm = state.epoch >= hp.warmup
        for i in range(max(len(sbs), len(tbs))):
            sb, tb = sbs[i % len(sbs)], tbs[i % len(tbs)]
            lrs = state.begin_update("joint")
            for _ in range(hp.step2_repeats):
                out2 = step2(state, sb, tb, lrs, use_target_cls=warm)
            out3 = step3(state, sb, tb, lrs)
            out3.pop("loss_d_step3")
            for k, v in {**out2, **out3}.items():
                collected.setdefault(k, []).append(v)
        state.log.records.append(_epoch_record(state, pair, "joint", *lrs, collected))
        if on_epoch:
            on_epoch(state)
        state.epoch += 1

    return state.bundle, state.log


def hyperparams_dict(hp):
    """Flat, JSON-friendly view used for config echoes."""
    d = asdict(hp)
    weights = d.pop("weights")
    return {**{f"lambda_{k}" if k != "eps_vat" else k: v for k, v in weights.items()}, **d}
