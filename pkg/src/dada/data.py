"""Synthetic source/target datasets with a controlled covariate shift.

Randomness comes from NumPy's PCG64 bit generator.  Gaussian noise is drawn
with the Box-Muller transform on its uniform doubles (``log``, ``sqrt``,
``cos`` and ``sin`` are the only transcendentals on the sampling path), so a
``(spec, seed)`` pair always produces the same dataset.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError

GENERATORS = ("two_moons_rotation", "gaussian_blobs_shift")

# centre of the clean two-moons construction; the target is rotated about it
MOONS_CENTER = np.array([0.5, 0.25])
BLOB_RADIUS = 3.0


@dataclass(frozen=True)
class ShiftSpec:
    """Generator parameters.

    ``angle_deg`` rotates the target domain (about the moons' centre, or the
    origin for blobs).  ``mean_offset`` translates the blob means and is
    ignored by the moons generator.
    """

    generator: str = "two_moons_rotation"
    angle_deg: float = 40.0
    mean_offset: tuple = (0.0, 0.0)
    noise_std: float = 0.1
    n_source: int = 500
    n_target: int = 500
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean_offset", tuple(float(v) for v in self.mean_offset))
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if len(self.mean_offset) != 2:
            raise ConfigError("mean_offset must have two components")
        if not 0.0 <= self.angle_deg <= 90.0:
            raise ConfigError(f"angle_deg must lie in [0, 90], got {self.angle_deg}")
        if not self.noise_std > 0:
            raise ConfigError(f"noise_std must be > 0, got {self.noise_std}")
        if self.generator == "two_moons_rotation" and self.n_classes != 2:
            raise ConfigError("two_moons_rotation always has n_classes = 2")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if min(self.n_source, self.n_target) < self.n_classes:
            raise ConfigError("n_source and n_target must each be >= n_classes")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class LabeledBatch:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class UnlabeledBatch:
    x: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class DomainPair:
    """Labeled source data and target data whose labels are for evaluation only."""

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_y_hidden: np.ndarray
    K: int
    spec: ShiftSpec = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("source_x", "target_x"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise ConfigError(f"{name} must be a 2-D array")
            setattr(self, name, arr)
        self.source_y = np.asarray(self.source_y, dtype=np.int64)
        self.target_y_hidden = np.asarray(self.target_y_hidden, dtype=np.int64)
        if len(self.source_y) != len(self.source_x) or len(self.target_y_hidden) != len(self.target_x):
            raise ConfigError("feature and label counts differ")
        for labels in (self.source_y, self.target_y_hidden):
            if labels.size and (labels.min() < 0 or labels.max() >= self.K):
                raise ConfigError(f"labels outside [0, {self.K})")

    @property
    def n_source(self):
        return len(self.source_x)

    @property
    def n_target(self):
        return len(self.target_x)

    def source(self):
        return LabeledBatch(self.source_x, self.source_y)

    def target_unlabeled(self):
        return UnlabeledBatch(self.target_x)

    def target_eval(self):
        """Target data *with* labels; for accuracy evaluation only."""
        return LabeledBatch(self.target_x, self.target_y_hidden)

    def __eq__(self, other):
        if not isinstance(other, DomainPair):
            return NotImplemented
        return (
            self.K == other.K
            and np.array_equal(self.source_x, other.source_x)
            and np.array_equal(self.source_y, other.source_y)
            and np.array_equal(self.target_x, other.target_x)
            and np.array_equal(self.target_y_hidden, other.target_y_hidden)
        )


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def box_muller(rng, shape):
    """Standard normals from pairs of PCG64 uniforms."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]: keeps log finite
    u2 = rng.random(m)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * math.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
    return z.reshape(shape)


def rotation(angle_deg):
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def balanced_labels(n, K):
    """Class sizes differ by at most one."""
    return np.arange(n) % K


def _two_moons(rng, n, noise_std):
    y = balanced_labels(n, 2)
    t = math.pi * rng.random(n)
    x = np.empty((n, 2))
    upper = y == 0
    x[upper, 0] = np.cos(t[upper])
    x[upper, 1] = np.sin(t[upper])
    x[~upper, 0] = 1.0 - np.cos(t[~upper])
    x[~upper, 1] = 0.5 - np.sin(t[~upper])
    x += noise_std * box_muller(rng, (n, 2))
    return x, y


def blob_means(K):
    angles = 2.0 * math.pi * np.arange(K) / K
    return BLOB_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _blobs(rng, n, K, noise_std, means):
    y = balanced_labels(n, K)
    x = means[y] + noise_std * box_muller(rng, (n, 2))
    return x, y


def _shuffled(rng, x, y):
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def generate(spec):
    """Draw a :class:`DomainPair` from ``spec`` (deterministic in ``spec.seed``)."""
    rng = make_rng(spec.seed)
    if spec.generator == "two_moons_rotation":
        xs, ys = _two_moons(rng, spec.n_source, spec.noise_std)
        xt, yt = _two_moons(rng, spec.n_target, spec.noise_std)
        xt = (xt - MOONS_CENTER) @ rotation(spec.angle_deg).T + MOONS_CENTER
    else:
        means = blob_means(spec.n_classes)
        shifted = means @ rotation(spec.angle_deg).T + np.asarray(spec.mean_offset)
        xs, ys = _blobs(rng, spec.n_source, spec.n_classes, spec.noise_std, means)
        xt, yt = _blobs(rng, spec.n_target, spec.n_classes, spec.noise_std, shifted)
    xs, ys = _shuffled(rng, xs, ys)
    xt, yt = _shuffled(rng, xt, yt)
    return DomainPair(xs, ys, xt, yt, spec.n_classes, spec)


def batches(data, batch_size, epoch_seed):
    """Yield one epoch of shuffled minibatches; the last one may be short.

    ``data`` is a :class:`LabeledBatch` (yields LabeledBatch) or an
    :class:`UnlabeledBatch` (yields UnlabeledBatch).
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = make_rng(epoch_seed).permutation(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if isinstance(data, LabeledBatch):
            yield LabeledBatch(data.x[idx], data.y[idx])
        else:
            yield UnlabeledBatch(data.x[idx])


# ---------------------------------------------------------------------------
# CSV files: header ``domain,x1,x2,label``; floats written with 17 significant digits

CSV_HEADER = ["domain", "x1", "x2", "label"]


def fmt(v):
    return format(float(v), ".17g")


def save(pair, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for domain, xs, ys in (("source", pair.source_x, pair.source_y),
                               ("target", pair.target_x, pair.target_y_hidden)):
            for (a, b), y in zip(xs, ys):
                w.writerow([domain, fmt(a), fmt(b), int(y)])


def load(path, K=None):
    """Read a dataset CSV.  ``K`` defaults to one more than the largest label."""
    rows = {"source": ([], []), "target": ([], [])}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file", line=1)
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(CSV_HEADER)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: expected 4 fields, found {len(row)}", line=line)
            domain = row[0].strip()
            if domain not in rows:
                raise ParseError(f"{path}: unknown domain {domain!r}", line=line)
            try:
                x = (float(row[1]), float(row[2]))
                y = int(row[3])
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=line) from None
            if not all(math.isfinite(v) for v in x) or y < 0:
                raise ParseError(f"{path}: non-finite coordinate or negative label", line=line)
            rows[domain][0].append(x)
            rows[domain][1].append(y)
    (sx, sy), (tx, ty) = rows["source"], rows["target"]
    if not sy or not ty:
        raise ParseError(f"{path}: need at least one source and one target row")
    if K is None:
        K = max(max(sy), max(ty)) + 1
    return DomainPair(np.array(sx), np.array(sy), np.array(tx), np.array(ty), max(int(K), 2))
