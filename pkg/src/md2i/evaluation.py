"""Metrics, baselines and the leave-one-domain-out / multi-task protocols."""
import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import BINARY, concat
from .errors import ParameterError
from .imputer import embed_dim
from .nn import MlpNet, SgdConfig, sgd_step, softmax
from .trainer import HyperParams, encode_dataset, impute_dataset, train_md2i

DOWNSTREAM_EPOCHS = 100
RESULT_COLUMNS = ("protocol", "run", "seed", "held_out_or_fold", "metric_name", "value")

# ---------------------------------------------------------------------------
# metrics


def accuracy(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.size == 0 or pred.shape != truth.shape:
        raise ParameterError("accuracy needs equal-length, non-empty label vectors")
    return float(np.mean(pred == truth))


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size == 0 or pred.shape != truth.shape:
        raise ParameterError("rmse needs equal-length, non-empty vectors")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def f1_positive(pred, truth):
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    tp = np.sum(pred & truth)
    fp = np.sum(pred & ~truth)
    fn = np.sum(~pred & truth)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return float(2 * p * r / (p + r)) if p + r else 0.0


# ---------------------------------------------------------------------------
# results


@dataclass
class ExperimentResult:
    protocol: str
    metric_name: str
    rows: list = field(default_factory=list)  # dicts keyed by RESULT_COLUMNS

    def add(self, run, seed, where, value):
        self.rows.append({"protocol": self.protocol, "run": run, "seed": seed,
                          "held_out_or_fold": where, "metric_name": self.metric_name,
                          "value": float(value)})

    @property
    def values(self):
        return np.array([r["value"] for r in self.rows])

    @property
    def n_runs(self):
        return len(self.rows)

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def std(self):
        return float(np.std(self.values))

    @property
    def seeds(self):
        return sorted({r["seed"] for r in self.rows})

    def write_csv(self, path, append=False):
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if not append:
                w.writerow(RESULT_COLUMNS)
            for r in self.rows:
                w.writerow([r[c] if c != "value" else repr(r[c]) for c in RESULT_COLUMNS])


def write_summary(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("protocol", "metric_name", "runs", "mean", "std"))
        for res in results:
            w.writerow((res.protocol, res.metric_name, res.n_runs, repr(res.mean), repr(res.std)))


# ---------------------------------------------------------------------------
# simple imputation and downstream networks


def mean_mode_stats(ds):
    """Column fill values: mean of observed continuous values, mode of observed binary ones."""
    fill = np.zeros(ds.d)
    for j, t in enumerate(ds.col_types):
        obs = ds.X[ds.M[:, j] == 1, j]
        if obs.size == 0:
            continue
        if t == BINARY:
            vals, counts = np.unique(obs, return_counts=True)
            fill[j] = vals[np.argmax(counts)]
        else:
            fill[j] = obs.mean()
    return fill


def mean_impute(ds, fill=None):
    fill = mean_mode_stats(ds) if fill is None else fill
    return replace(ds, X=np.where(ds.M == 1, ds.X, fill[None, :]), M=np.ones_like(ds.M))


class Downstream:
    """Two-hidden-layer ReLU network trained with momentum SGD.

    ``kind="classification"`` uses softmax cross-entropy; ``"regression"``
    has one linear output per task and is trained on squared error of the
    sample's own task output.
    """

    def __init__(self, n_in, n_out, kind, rng, hidden=None):
        hidden = hidden or embed_dim(n_in)
        self.kind = kind
        self.net = MlpNet.build([n_in, hidden, hidden, n_out], ["relu", "relu", "linear"], rng)

    def fit(self, X, Y, sgd, epochs, rng, tasks=None):
        n = X.shape[0]
        tasks = np.zeros(n, dtype=np.int64) if tasks is None else np.asarray(tasks)
        for _ in range(epochs):
            perm = rng.permutation(n)
            for i in range(0, n, sgd.batch_size):
                b = perm[i:i + sgd.batch_size]
                out = self.net.forward(X[b])
                if self.kind == "classification":
                    g = softmax(out) - Y[b]
                else:
                    g = np.zeros_like(out)
                    rows = np.arange(len(b))
                    g[rows, tasks[b]] = 2.0 * (out[rows, tasks[b]] - Y[b, 0])
                self.net.backward(g / len(b))
                sgd_step(self.net, sgd)
        return self

    def predict(self, X, tasks=None):
        out = self.net.forward(X)
        if self.kind == "classification":
            return softmax(out)
        tasks = np.zeros(X.shape[0], dtype=np.int64) if tasks is None else np.asarray(tasks)
        return out[np.arange(X.shape[0]), tasks][:, None]


def _hp_for(hp, seed, **kw):
    return replace(hp, seed=seed, **kw)


def train_imputer(ds, hp, seed):
    """The adversarial imputer alone: one pooled domain, no labels, no alignment."""
    G, _, _, _ = train_md2i([replace(ds, Y=None, y_kind=None)],
                            _hp_for(hp, seed, mode="unsupervised", lambda3=0.0))
    return G


# ---------------------------------------------------------------------------
# leave-one-domain-out (classification)


def _held_out_list(domains, held_out):
    if len(domains) < 2:
        raise ParameterError("leave-one-domain-out needs at least two domains")
    return list(range(len(domains))) if held_out is None else list(held_out)


def run_dg_protocol(domains, hp, repeats, method="md2i-s", held_out=None,
                    downstream_epochs=DOWNSTREAM_EPOCHS, callback=None):
    """Accuracy on each held-out domain after training on the others.

    ``method`` is ``"md2i-s"`` (shared head) or ``"md2i-u"`` (frozen encoder
    plus a downstream network trained on source encodings).
    """
    if method not in ("md2i-s", "md2i-u"):
        raise ParameterError(f"unknown method {method!r}")
    res = ExperimentResult(f"dg:{method}", "accuracy")
    targets = _held_out_list(domains, held_out)
    for r in range(repeats):
        seed = hp.seed + r
        for t in targets:
            src = [ds for i, ds in enumerate(domains) if i != t]
            tgt = domains[t]
            if method == "md2i-s":
                G, _, head, rep = train_md2i(src, _hp_for(hp, seed, mode="supervised"), [0] * len(src))
                pred = head.predict_labels(encode_dataset(G, tgt, seed), 0)
            else:
                G, _, _, rep = train_md2i(src, _hp_for(hp, seed, mode="unsupervised"))
                pool = concat(src)
                E = encode_dataset(G, pool, seed)
                rng = np.random.default_rng(seed)
                clf = Downstream(E.shape[1], pool.Y.shape[1], "classification", rng, hidden=G.d_e)
                clf.fit(E, pool.Y, hp.sgd, downstream_epochs, rng)
                pred = np.argmax(clf.predict(encode_dataset(G, tgt, seed)), axis=1)
            res.add(r, seed, t, accuracy(pred, tgt.labels))
            if callback:
                callback(method, r, t, rep)
    return res


def _baseline_features(kind, train, test, hp, seed):
    """Complete train/test feature matrices per the baseline's imputation scheme."""
    if kind.endswith("-DI"):
        G = train_imputer(train, hp, seed)
        return impute_dataset(G, train, seed).X, impute_dataset(G, test, seed).X
    fill = mean_mode_stats(train)
    return mean_impute(train, fill).X, mean_impute(test, fill).X


def _fit_classifier(X, Y, hp, seed, epochs):
    rng = np.random.default_rng(seed)
    return Downstream(X.shape[1], Y.shape[1], "classification", rng).fit(X, Y, hp.sgd, epochs, rng)


def run_baseline(kind, domains, hp, repeats, protocol="dg", held_out=None,
                 downstream_epochs=DOWNSTREAM_EPOCHS, split=0.5):
    """B1 (one network per domain), B2 (one pooled network), each optionally with
    adversarial imputation (``-DI``) instead of mean/mode imputation."""
    if kind not in ("B1", "B2", "B1-DI", "B2-DI"):
        raise ParameterError(f"unknown baseline {kind!r}")
    if protocol == "mtl":
        return _mtl_loop(domains, hp, repeats, kind, split, downstream_epochs)
    if protocol != "dg":
        raise ParameterError(f"unknown protocol {protocol!r}")
    res = ExperimentResult(f"dg:{kind}", "accuracy")
    for r in range(repeats):
        seed = hp.seed + r
        for t in _held_out_list(domains, held_out):
            src = [ds for i, ds in enumerate(domains) if i != t]
            tgt = domains[t]
            if kind.startswith("B2"):
                pool = concat(src)
                Xtr, Xte = _baseline_features(kind, pool, tgt, hp, seed)
                probs = _fit_classifier(Xtr, pool.Y, hp, seed, downstream_epochs).predict(Xte)
            else:
                # per-domain networks; the unseen domain gets their averaged probabilities
                probs = 0.0
                for ds in src:
                    Xtr, Xte = _baseline_features(kind, ds, tgt, hp, seed)
                    probs = probs + _fit_classifier(Xtr, ds.Y, hp, seed, downstream_epochs).predict(Xte)
            res.add(r, seed, t, accuracy(np.argmax(probs, axis=1), tgt.labels))
    return res


# ---------------------------------------------------------------------------
# multi-task regression


def split_tasks(domains, frac, rng):
    """Random per-task train/test split; returns two lists of datasets."""
    train, test = [], []
    for ds in domains:
        if ds.n < 2:
            raise ParameterError(f"task {ds.domain_id} has fewer than 2 samples")
        perm = rng.permutation(ds.n)
        k = min(max(1, int(round(frac * ds.n))), ds.n - 1)
        train.append(ds.subset(np.sort(perm[:k])))
        test.append(ds.subset(np.sort(perm[k:])))
    return train, test


def pooled_rmse(preds, truths):
    return rmse(np.concatenate([np.ravel(p) for p in preds]), np.concatenate([np.ravel(t) for t in truths]))


def _mtl_predict(method, train, test, hp, seed, epochs, on_report):
    if method == "md2i-s":
        G, _, head, rep = train_md2i(train, _hp_for(hp, seed, mode="supervised"))
        on_report(rep)
        return [head.predict(encode_dataset(G, ds, seed), t) for t, ds in enumerate(test)]
    if method == "md2i-u":
        G, _, _, rep = train_md2i(train, _hp_for(hp, seed, mode="unsupervised"))
        on_report(rep)
        enc = [encode_dataset(G, ds, seed) for ds in train]
        tasks = np.concatenate([np.full(ds.n, t) for t, ds in enumerate(train)])
        rng = np.random.default_rng(seed)
        net = Downstream(G.d_e, len(train), "regression", rng, hidden=G.d_e)
        net.fit(np.vstack(enc), np.vstack([ds.Y for ds in train]), hp.sgd, epochs, rng, tasks)
        return [net.predict(encode_dataset(G, ds, seed), np.full(ds.n, t)) for t, ds in enumerate(test)]
    # baselines
    rng = np.random.default_rng(seed)
    if method.startswith("B2"):
        pool_tr, pool_te = concat(train), concat(test)
        Xtr, Xte = _baseline_features(method, pool_tr, pool_te, hp, seed)
        net = Downstream(Xtr.shape[1], 1, "regression", rng).fit(Xtr, pool_tr.Y, hp.sgd, epochs, rng)
        pred = net.predict(Xte)
        return np.split(pred, np.cumsum([ds.n for ds in test])[:-1])
    out = []
    for tr, te in zip(train, test):
        Xtr, Xte = _baseline_features(method, tr, te, hp, seed)
        net = Downstream(Xtr.shape[1], 1, "regression", rng).fit(Xtr, tr.Y, hp.sgd, epochs, rng)
        out.append(net.predict(Xte))
    return out


def _mtl_loop(domains, hp, repeats, method, split, epochs, callback=None):
    res = ExperimentResult(f"mtl:{method}", "rmse")
    for r in range(repeats):
        seed = hp.seed + r
        train, test = split_tasks(domains, split, np.random.default_rng(seed))

        def on_report(rep):
            if callback:
                callback(method, r, "pooled", rep)

        preds = _mtl_predict(method, train, test, hp, seed, epochs, on_report)
        res.add(r, seed, "pooled", pooled_rmse(preds, [ds.Y for ds in test]))
    return res


def run_mtl_protocol(domains, hp, repeats, split=0.5, method="md2i-s",
                     downstream_epochs=DOWNSTREAM_EPOCHS, callback=None):
    """Pooled test RMSE over repeated per-task random splits."""
    if method not in ("md2i-s", "md2i-u"):
        raise ParameterError(f"unknown method {method!r}")
    return _mtl_loop(domains, hp, repeats, method, split, downstream_epochs, callback)
