"""The four networks: extractor G, class predictor F, joint discriminators D1/D2.

All four are plain MLPs.  A discriminator has ``2K`` outputs: the first ``K``
mean "source sample of class k", the last ``K`` "target sample of class k".
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, linear
from .errors import ConfigError, ParseError

ACTIVATIONS = ("relu", "tanh")
NETWORK_NAMES = ("G", "F", "D1", "D2")
# xor-ed into the master seed so every network draws from its own stream
SEED_OFFSETS = {"G": 0, "D1": 1, "D2": 2, "F": 3}

MAGIC = b"DADA"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) != d or d < 1 for d in dims):
            raise ConfigError(f"layer widths must be positive integers, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class MlpParams:
    """Weights ``[(W, b), ...]`` of one MLP; hidden layers share one activation."""

    config: MlpConfig
    layers: list = field(default_factory=list)

    @classmethod
    def init(cls, config):
        rng = np.random.default_rng(config.seed)
        layers = []
        dims = config.dims
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append((Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)))
        return cls(config, layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    @property
    def input_dim(self):
        return self.config.input_dim

    @property
    def output_dim(self):
        return self.config.output_dim

    def __call__(self, x):
        return mlp_forward(self, x)

    def copy(self):
        layers = [(Tensor(w.data.copy(), True), Tensor(b.data.copy(), True)) for w, b in self.layers]
        return MlpParams(self.config, layers)


def mlp_forward(params, x):
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != params.input_dim:
        raise ConfigError(f"expected input of shape [batch, {params.input_dim}], got {x.shape}")
    act = params.config.activation
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = linear(h, w, b, activation=None if i == last else act)
    return h


@dataclass
class ModelBundle:
    G: MlpParams
    F: MlpParams
    D1: MlpParams
    D2: MlpParams
    K: int

    def __post_init__(self):
        fdim = self.G.output_dim
        for name in ("F", "D1", "D2"):
            net = getattr(self, name)
            if net.input_dim != fdim:
                raise ConfigError(f"{name} input width {net.input_dim} != feature width {fdim}")
        if self.K < 2:
            raise ConfigError(f"need at least two classes, got K={self.K}")
        if self.F.output_dim != self.K:
            raise ConfigError(f"F must emit K={self.K} logits, has {self.F.output_dim}")
        for name in ("D1", "D2"):
            if getattr(self, name).output_dim != 2 * self.K:
                raise ConfigError(f"{name} must emit 2K={2 * self.K} logits")
        if self.D1.config.dims != self.D2.config.dims:
            raise ConfigError("D1 and D2 must share one architecture")

    def networks(self):
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def parameters(self):
        return [p for net in self.networks().values() for p in net.parameters()]

    def copy(self):
        return ModelBundle(self.G.copy(), self.F.copy(), self.D1.copy(), self.D2.copy(), self.K)


def init_bundle(K, master_seed, input_dim=2, extractor_hidden=(64, 64), feature_dim=16,
                predictor_hidden=(32,), discriminator_hidden=(32,), activation="relu"):
    """Build a freshly initialised bundle; fully determined by ``master_seed``."""
    master_seed = int(master_seed)
    if master_seed < 0:
        raise ConfigError("master_seed must be non-negative")

    def cfg(name, n_in, hidden, n_out):
        return MlpConfig(n_in, tuple(hidden), n_out, activation, master_seed ^ SEED_OFFSETS[name])

    return ModelBundle(
        G=MlpParams.init(cfg("G", input_dim, extractor_hidden, feature_dim)),
        F=MlpParams.init(cfg("F", feature_dim, predictor_hidden, K)),
        D1=MlpParams.init(cfg("D1", feature_dim, discriminator_hidden, 2 * K)),
        D2=MlpParams.init(cfg("D2", feature_dim, discriminator_hidden, 2 * K)),
        K=int(K),
    )


# forward helpers used throughout the losses


def features(bundle, x):
    return mlp_forward(bundle.G, x)


def predict(bundle, feat):
    return mlp_forward(bundle.F, feat)


def discriminate(bundle, which, feat):
    return mlp_forward(getattr(bundle, which), feat)


def predict_labels(bundle, x):
    """Argmax class of ``F(G(x))`` for a raw input array (no graph kept)."""
    logits = predict(bundle, features(bundle, np.asarray(x, dtype=np.float64))).data
    return np.argmax(logits, axis=1)  # ties go to the smallest index


# ---------------------------------------------------------------------------
# binary parameter files
#
# header: b"DADA", u32 version, u32 K, u32 network count, then per network
#   u32 activation code, u32 number of widths, u32 widths...
# body: little-endian f64 arrays, per network in G, F, D1, D2 order, per layer W then b.


def save_bundle(bundle, path):
    header = [MAGIC, struct.pack("<III", FORMAT_VERSION, bundle.K, len(NETWORK_NAMES))]
    for name in NETWORK_NAMES:
        cfg = getattr(bundle, name).config
        dims = cfg.dims
        header.append(struct.pack(f"<II{len(dims)}I", ACTIVATIONS.index(cfg.activation), len(dims), *dims))
    with open(path, "wb") as fh:
        fh.write(b"".join(header))
        for name in NETWORK_NAMES:
            for w, b in getattr(bundle, name).layers:
                fh.write(w.data.astype("<f8").tobytes())
                fh.write(b.data.astype("<f8").tobytes())


def load_bundle(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: not a DADA parameter file")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise ParseError(f"{path}: truncated file")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    version, K, count = take("<III")
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format version {version}")
    if count != len(NETWORK_NAMES):
        raise ParseError(f"{path}: expected {len(NETWORK_NAMES)} networks, found {count}")
    configs = {}
    for name in NETWORK_NAMES:
        act_code, n_dims = take("<II")
        if act_code >= len(ACTIVATIONS):
            raise ParseError(f"{path}: bad activation code {act_code}")
        dims = take(f"<{n_dims}I")
        configs[name] = MlpConfig(dims[0], dims[1:-1], dims[-1], ACTIVATIONS[act_code])
    nets = {}
    n_values = sum(
        a * b for cfg in configs.values() for a, b in zip(cfg.dims[:-1], cfg.dims[1:])
    ) + sum(sum(cfg.dims[1:]) for cfg in configs.values())
    if len(raw) - pos != 8 * n_values:
        raise ParseError(f"{path}: expected {8 * n_values} bytes of weights, found {len(raw) - pos}")
    for name in NETWORK_NAMES:
        dims = configs[name].dims
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            n = fan_in * fan_out
            w = np.frombuffer(raw, "<f8", n, pos).reshape(fan_in, fan_out)
            pos += 8 * n
            b = np.frombuffer(raw, "<f8", fan_out, pos)
            pos += 8 * fan_out
            layers.append((Tensor(w.astype(np.float64), True), Tensor(b.astype(np.float64), True)))
        nets[name] = MlpParams(configs[name], layers)
    return ModelBundle(K=K, **nets)
