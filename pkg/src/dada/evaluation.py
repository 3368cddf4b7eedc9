"""Accuracy, proxy A-distance, the SSL ablation, and feature export."""

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import fmt, make_rng
from .errors import ContractError, ParseError
from .models import features, predict_labels
from .trainer import hyperparams_dict, train

MIN_DOMAIN_SAMPLES = 20
VARIANTS = ("source_only", "dada_no_ssl", "dada_full")
SSL_WEIGHTS = ("te", "svat", "tvat")
ADAPTATION_WEIGHTS = ("dsc1", "dsc2", "dtc1", "dtc2", "d", "svat", "tvat", "te",
                      "dsa1", "dta1", "dsa2", "dta2")


def accuracy(bundle, x, y):
    """Fraction of rows whose argmax prediction equals ``y``."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean(predict_labels(bundle, x) == y))


def extract_features(bundle, x):
    return features(bundle, np.asarray(x, dtype=np.float64)).data


def _split(n, seed):
    perm = make_rng(seed).permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


def _logistic_fit(x, y, steps, lr):
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(steps):
        z = x @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free sigmoid
        r = p - y
        w -= lr * (x.T @ r) / n
        b -= lr * r.sum() / n
    return w, b


def a_distance_proxy(feat_source, feat_target, seed=0, steps=200, lr=0.1):
    """Proxy A-distance ``max(0, 2 (1 - 2 err))`` of a source-vs-target classifier.

    Each domain is split in half (same seeded permutation rule per domain);
    a logistic model is trained on the pooled first halves with ``steps``
    full-batch gradient steps and ``err`` is its error on the second halves.
    Features are standardised with training-half statistics.
    """
    fs = np.asarray(feat_source, dtype=np.float64)
    ft = np.asarray(feat_target, dtype=np.float64)
    if len(fs) < MIN_DOMAIN_SAMPLES or len(ft) < MIN_DOMAIN_SAMPLES:
        raise ContractError(f"need at least {MIN_DOMAIN_SAMPLES} samples per domain")
    s_tr, s_te = _split(len(fs), seed)
    t_tr, t_te = _split(len(ft), seed)
    x_tr = np.vstack([fs[s_tr], ft[t_tr]])
    y_tr = np.concatenate([np.zeros(len(s_tr)), np.ones(len(t_tr))])
    x_te = np.vstack([fs[s_te], ft[t_te]])
    y_te = np.concatenate([np.zeros(len(s_te)), np.ones(len(t_te))])

    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd == 0] = 1.0
    w, b = _logistic_fit((x_tr - mu) / sd, y_tr, steps, lr)
    pred = ((x_te - mu) / sd) @ w + b > 0
    err = float(np.mean(pred != y_te.astype(bool)))
    return a_distance_from_error(err)


def a_distance_from_error(err):
    return max(0.0, 2.0 * (1.0 - 2.0 * err))


# ---------------------------------------------------------------------------
# ablation


def variant_hyperparams(hp, variant):
    """``source_only``: step 1 only, for the same total number of epochs and
    with every adaptation weight zeroed.  ``dada_no_ssl``: the three SSL
    weights zeroed.  ``dada_full``: ``hp`` unchanged."""
    if variant == "dada_full":
        return hp
    if variant == "dada_no_ssl":
        return hp.with_weights(**{k: 0.0 for k in SSL_WEIGHTS})
    if variant == "source_only":
        base = replace(hp, step1_epochs=hp.step1_epochs + hp.joint_epochs, joint_epochs=0)
        return base.with_weights(**{k: 0.0 for k in ADAPTATION_WEIGHTS})
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class RunResult:
    variant: str
    seed: int
    acc_source: float
    acc_target: float
    a_distance: float


def run_variant(pair, hp, variant, seed):
    h = replace(variant_hyperparams(hp, variant), seed=seed)
    bundle, _ = train(pair, h)
    fs = extract_features(bundle, pair.source_x)
    ft = extract_features(bundle, pair.target_x)
    return RunResult(
        variant, seed,
        accuracy(bundle, pair.source_x, pair.source_y),
        accuracy(bundle, pair.target_x, pair.target_y_hidden),
        a_distance_proxy(fs, ft, seed=seed),
    )


def _run_job(job):
    return run_variant(*job)


@dataclass
class AblationTable:
    rows: list          # one dict per variant
    runs: list          # every RunResult, in (variant, seed) order

    def to_csv(self):
        buf = io.StringIO()
        cols = list(self.rows[0])
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    def to_text(self):
        cols = ["variant", "n_seeds", "acc_target_mean", "acc_target_std", "acc_source_mean",
                "a_distance_mean", "lambda_te", "lambda_svat", "lambda_tvat"]
        cells = [cols] + [[_cell(r[c]) for c in cols] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
        return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in cells) + "\n"

    def mean(self, variant, key="acc_target"):
        return next(r[f"{key}_mean"] for r in self.rows if r["variant"] == variant)


def _cell(v):
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def ablate(pair, hp, seeds=(0, 1, 2, 3, 4), variants=VARIANTS, workers=1):
    """Train every variant under the same seeds and summarise target accuracy."""
    jobs = [(pair, hp, v, s) for v in variants for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            runs = list(pool.map(_run_job, jobs))
    else:
        runs = [_run_job(j) for j in jobs]
    rows = []
    for v in variants:
        rs = [r for r in runs if r.variant == v]
        acc_t = np.array([r.acc_target for r in rs])
        config = hyperparams_dict(variant_hyperparams(hp, v))
        rows.append({
            "variant": v,
            "n_seeds": len(rs),
            "acc_target_mean": float(acc_t.mean()),
            "acc_target_std": float(acc_t.std()),
            "acc_source_mean": float(np.mean([r.acc_source for r in rs])),
            "a_distance_mean": float(np.mean([r.a_distance for r in rs])),
            **{k: v_ for k, v_ in config.items() if k.startswith("lambda_") or k in ("step1_epochs", "joint_epochs")},
        })
    return AblationTable(rows, runs)


# ---------------------------------------------------------------------------
# feature dump


def export_features(bundle, pair, path):
    """Write ``domain,label,f1..fn`` rows of extractor outputs (17 significant digits)."""
    fs = extract_features(bundle, pair.source_x)
    ft = extract_features(bundle, pair.target_x)
    n = fs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "label"] + [f"f{i + 1}" for i in range(n)])
        for domain, feats, labels in (("source", fs, pair.source_y), ("target", ft, pair.target_y_hidden)):
            for row, y in zip(feats, labels):
                w.writerow([domain, int(y)] + [fmt(v) for v in row])


def load_features(path):
    """Return ``(domains, labels, features)`` from an exported feature CSV."""
    domains, labels, feats = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["domain", "label"]:
            raise ParseError(f"{path}: bad feature header", line=1)
        for row in reader:
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields", line=reader.line_num)
            try:
                domains.append(row[0])
                labels.append(int(row[1]))
                feats.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=reader.line_num) from None
    return np.array(domains), np.array(labels), np.array(feats).reshape(len(feats), len(header) - 2)

