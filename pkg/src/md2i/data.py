"""Multi-domain datasets: construction, corruption, file I/O and batching.

Missingness is carried entirely by the mask ``M`` (1 = observed). Corruption
functions return new datasets and only ever flip mask entries from 1 to 0.
"""
import csv
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import FormatError, ParameterError, ParseError

CONTINUOUS = "c"
BINARY = "b"
NOISE_HIGH = 0.01


@dataclass(frozen=True)
class DomainDataset:
    X: np.ndarray
    M: np.ndarray
    col_types: tuple
    Y: np.ndarray = None
    y_kind: str = None  # "class" (one-hot Y) or "regression" (n x 1 Y)
    domain_id: int = 0
    names: tuple = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise FormatError("X must be 2-D")
        M = np.asarray(self.M, dtype=np.float64)
        if M.shape != X.shape:
            raise FormatError(f"mask shape {M.shape} != data shape {X.shape}")
        if not np.all((M == 0.0) | (M == 1.0)):
            raise FormatError("mask entries must be 0 or 1")
        if len(self.col_types) != X.shape[1]:
            raise FormatError("one column type per column required")
        if any(t not in (CONTINUOUS, BINARY) for t in self.col_types):
            raise FormatError(f"column types must be {CONTINUOUS!r} or {BINARY!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "col_types", tuple(self.col_types))
        if self.Y is not None:
            Y = np.asarray(self.Y, dtype=np.float64)
            if Y.ndim == 1:
                Y = Y[:, None]
            if Y.shape[0] != X.shape[0]:
                raise FormatError("label row count differs from feature row count")
            kind = self.y_kind or "class"
            if kind not in ("class", "regression"):
                raise FormatError(f"unknown label kind {kind!r}")
            object.__setattr__(self, "Y", Y)
            object.__setattr__(self, "y_kind", kind)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{j}" for j in range(X.shape[1])))
        elif len(self.names) != X.shape[1]:
            raise FormatError("one name per column required")
        else:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def labels(self):
        """Class indices for classification data."""
        if self.Y is None or self.y_kind != "class":
            return None
        return np.argmax(self.Y, axis=1)

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], M=self.M[idx],
                       Y=None if self.Y is None else self.Y[idx])

    def with_domain(self, s):
        return replace(self, domain_id=s)


def one_hot(labels, k=None):
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if k is None else k
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def encode_categorical(values):
    """One-hot encode a categorical column; returns (binary columns, levels)."""
    levels, inv = np.unique(np.asarray(values), return_inverse=True)
    return one_hot(inv, len(levels)), levels


def minmax_normalize(ds):
    """Scale every continuous column to [0, 1] using its observed values."""
    X = ds.X.copy()
    for j, t in enumerate(ds.col_types):
        if t != CONTINUOUS:
            continue
        obs = X[ds.M[:, j] == 1, j]
        if obs.size == 0:
            continue
        lo, hi = obs.min(), obs.max()
        X[:, j] = (X[:, j] - lo) / (hi - lo) if hi > lo else 0.0
        X[:, j] = np.clip(X[:, j], 0.0, 1.0)
    return replace(ds, X=X)


def concat(datasets, domain_id=0):
    """Pool several domains into one dataset (labels must agree in kind)."""
    datasets = list(datasets)
    first = datasets[0]
    Y = None
    if all(ds.Y is not None for ds in datasets):
        Y = np.vstack([ds.Y for ds in datasets])
    return DomainDataset(np.vstack([ds.X for ds in datasets]), np.vstack([ds.M for ds in datasets]),
                         first.col_types, Y, first.y_kind if Y is not None else None, domain_id,
                         first.names)


# ---------------------------------------------------------------------------
# missingness


@dataclass(frozen=True)
class MissingSpec:
    mechanism: str  # "mcar_patch" | "mcar_uniform" | "mar_rule"
    side: int = 13
    rate: float = 0.3
    threshold: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in ("mcar_patch", "mcar_uniform", "mar_rule"):
            raise ParameterError(f"unknown missingness mechanism {self.mechanism!r}")
        if self.mechanism == "mcar_uniform" and not 0.0 < self.rate < 1.0:
            raise ParameterError("rate must lie in (0, 1)")
        if self.mechanism == "mar_rule" and not 0.0 <= self.threshold < 1.0:
            raise ParameterError("threshold must lie in [0, 1)")
        if self.mechanism == "mcar_patch" and self.side < 1:
            raise ParameterError("patch side must be >= 1")


def image_side(d):
    side = math.isqrt(d)
    if side * side != d:
        raise FormatError(f"row length {d} is not a square image")
    return side


def inject_mcar_patch(ds, spec):
    side = image_side(ds.d)
    p = spec.side
    if p > side:
        raise ParameterError(f"patch side {p} exceeds image side {side}")
    rng = np.random.default_rng(spec.seed)
    tops = rng.integers(0, side - p + 1, size=ds.n)
    lefts = rng.integers(0, side - p + 1, size=ds.n)
    patch = kernels.patch_mask(ds.n, side, p, tops.astype(np.int64), lefts.astype(np.int64))
    return replace(ds, M=ds.M * patch)


def inject_mcar_uniform(ds, spec):
    rng = np.random.default_rng(spec.seed)
    keep = (rng.uniform(size=ds.X.shape) >= spec.rate).astype(np.float64)
    return replace(ds, M=ds.M * keep)


def mar_condition(X, rng):
    """Draw the two condition columns and return (rows meeting the rule, j1, j2)."""
    n, d = X.shape
    j1, j2 = rng.choice(d, size=2, replace=False)
    mx1 = np.median(X[:, j1])
    mx2 = np.median(X[:, j2])
    return (X[:, j1] <= mx1) | (X[:, j2] >= mx2), j1, j2


def inject_mar(ds, spec):
    if ds.d < 2:
        raise ParameterError("MAR rule needs at least two columns")
    rng = np.random.default_rng(spec.seed)
    r = rng.uniform(size=ds.n)
    cond, _, _ = mar_condition(ds.X, rng)
    cols = rng.choice(ds.d, size=ds.d // 2, replace=False)
    rows = (r <= spec.threshold) & cond
    M = ds.M.copy()
    M[np.ix_(rows, cols)] = 0.0
    return replace(ds, M=M)


def apply_missing(ds, spec):
    return {"mcar_patch": inject_mcar_patch,
            "mcar_uniform": inject_mcar_uniform,
            "mar_rule": inject_mar}[spec.mechanism](ds, spec)


def make_tilde(X, M, rng):
    """Replace missing entries with fresh U[0, 0.01] noise; observed entries untouched."""
    Z = rng.uniform(0.0, NOISE_HIGH, size=X.shape)
    return np.where(M == 1.0, X, Z), M


# ---------------------------------------------------------------------------
# rotated digits


def synth_rotated_digits(base, angles):
    """One domain per angle (counter-clockwise, bilinear); angle 0 returns the base."""
    angles = list(angles)
    if not angles:
        raise ParameterError("need at least one angle")
    side = image_side(base.d)
    out = []
    for s, a in enumerate(angles):
        if a % 360 == 0:
            X = base.X.copy()
        else:
            X = np.clip(kernels.rotate_images(base.X, side, float(a)), 0.0, 1.0)
        out.append(replace(base, X=X, M=np.ones_like(X), domain_id=s))
    return out


def load_digit_base(per_class=100, seed=0, side=28):
    """A base digit view built from scikit-learn's bundled 8x8 digits.

    Each 8x8 glyph is upscaled bilinearly into a 20x20 box and centred on a
    ``side`` x ``side`` canvas, then scaled to [0, 1].
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    raw = load_digits()
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for k in range(10):
        idx = np.flatnonzero(raw.target == k)
        if per_class > idx.size:
            raise ParameterError(f"only {idx.size} images of class {k} available")
        idx = np.sort(rng.choice(idx, size=per_class, replace=False))
        for i in idx:
            img = zoom(raw.images[i] / 16.0, 20 / 8, order=1)
            canvas = np.zeros((side, side))
            off = (side - 20) // 2
            canvas[off:off + 20, off:off + 20] = np.clip(img, 0.0, 1.0)
            rows.append(canvas.ravel())
            labels.append(k)
    X = np.array(rows)
    names = tuple(f"p{j}" for j in range(side * side))
    return DomainDataset(X, np.ones_like(X), (CONTINUOUS,) * X.shape[1], one_hot(labels, 10), "class",
                         0, names)


# ---------------------------------------------------------------------------
# synthetic tabular data


def synth_linear_tabular(n=500, d=8, seed=0, latent=2, noise=0.05):
    """Columns are noisy linear mixtures of a few shared latent factors, scaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, latent))
    A = rng.normal(size=(latent, d))
    X = Z @ A + noise * rng.normal(size=(n, d))
    X = (X - X.min(0)) / (X.max(0) - X.min(0))
    return DomainDataset(X, np.ones_like(X), (CONTINUOUS,) * d)


def synth_blob_domains(n=200, d=8, shift=1.5, seed=0, n_domains=2):
    """Gaussian domains differing by a mean shift, with a shared linear label rule."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    out = []
    for s in range(n_domains):
        X = rng.normal(size=(n, d)) + s * shift
        y = ((X - s * shift) @ w > 0).astype(int)
        X = 1.0 / (1.0 + np.exp(-X / 2.0))
        out.append(DomainDataset(X, np.ones_like(X), (CONTINUOUS,) * d, one_hot(y, 2), "class", s))
    return out


def synth_school_like(n_tasks=20, n_per_task=60, n_cont=6, n_cat_levels=(3, 2, 4), seed=0,
                      noise=0.1):
    """Multi-task regression analogue of exam-grade data.

    Each task (school) shares a base coefficient vector plus a small
    task-specific perturbation and offset. Categorical attributes are one-hot
    encoded into binary columns. Targets are scaled to [0, 1] globally.
    """
    rng = np.random.default_rng(seed)
    cat_width = int(sum(n_cat_levels))
    d = n_cont + cat_width
    w0 = rng.normal(size=d)
    Xs, ys = [], []
    for _ in range(n_tasks):
        cont = rng.uniform(size=(n_per_task, n_cont))
        blocks = [one_hot(rng.integers(0, k, size=n_per_task), k) for k in n_cat_levels]
        X = np.hstack([cont] + blocks)
        w = w0 + 0.3 * rng.normal(size=d)
        y = X @ w + 0.3 * rng.normal() + noise * rng.normal(size=n_per_task)
        Xs.append(X)
        ys.append(y)
    lo = min(y.min() for y in ys)
    hi = max(y.max() for y in ys)
    types = (CONTINUOUS,) * n_cont + (BINARY,) * cat_width
    return [DomainDataset(X, np.ones_like(X), types, ((y - lo) / (hi - lo))[:, None], "regression", s)
            for s, (X, y) in enumerate(zip(Xs, ys))]


# ---------------------------------------------------------------------------
# batching


def batch_iter(n, batch_size, rng):
    """Yield index batches covering a fresh permutation of ``range(n)``.

    ``rng`` may be a seed or a Generator; reusing one Generator across calls
    reshuffles every epoch.
    """
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


# ---------------------------------------------------------------------------
# delimited text I/O

_TYPE_TAGS = (CONTINUOUS, BINARY, "label", "target")


def mask_path(path):
    return os.fspath(path) + ".mask"


def _fmt(v):
    return repr(float(v))


def save_tabular(ds, path):
    """Write ``name:type`` headed CSV plus a sibling ``.mask`` file."""
    header = [f"{nm}:{t}" for nm, t in zip(ds.names, ds.col_types)]
    if ds.Y is not None:
        header.append("label:label" if ds.y_kind == "class" else "label:target")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.X[i]]
            if ds.Y is not None:
                row.append(str(int(np.argmax(ds.Y[i]))) if ds.y_kind == "class" else _fmt(ds.Y[i, 0]))
            w.writerow(row)
    with open(mask_path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for i in range(ds.n):
            w.writerow(["1" if v else "0" for v in ds.M[i]])


def _parse_header(header):
    names, types, label_col, label_kind = [], [], None, None
    for j, cell in enumerate(header):
        if ":" not in cell:
            raise ParseError(f"header cell {cell!r} is not name:type", row=0, column=cell)
        nm, t = cell.rsplit(":", 1)
        if t not in _TYPE_TAGS:
            raise ParseError(f"unknown column type {t!r}", row=0, column=cell)
        if t in ("label", "target"):
            if label_col is not None:
                raise ParseError("more than one label column", row=0, column=cell)
            label_col, label_kind = j, ("class" if t == "label" else "regression")
        else:
            names.append(nm)
            types.append(t)
    return names, types, label_col, label_kind


def load_tabular(path, n_classes=None, domain_id=0):
    """Read a dataset written by :func:`save_tabular`.

    Empty or ``nan`` cells are treated as missing when no mask file exists.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("file is empty; a header row is required", row=0)
    names, types, label_col, label_kind = _parse_header(rows[0])
    width = len(rows[0])
    d = len(names)
    body = rows[1:]
    X = np.zeros((len(body), d))
    M = np.ones((len(body), d))
    labels = np.zeros(len(body))
    for i, row in enumerate(body, start=1):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", row=i)
        j = 0
        for k, cell in enumerate(row):
            cell = cell.strip()
            if k == label_col:
                try:
                    labels[i - 1] = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric label {cell!r}", row=i, column=rows[0][k]) from None
                continue
            if cell == "" or cell.lower() == "nan":
                M[i - 1, j] = 0.0
            else:
                try:
                    X[i - 1, j] = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=i, column=rows[0][k]) from None
                if not math.isfinite(X[i - 1, j]):
                    raise ParseError(f"non-finite cell {cell!r}", row=i, column=rows[0][k])
            j += 1
    mp = mask_path(path)
    if os.path.exists(mp):
        M = _load_mask(mp, names, len(body))
    Y, kind = None, None
    if label_col is not None:
        kind = label_kind
        if kind == "class":
            if np.any(labels != np.round(labels)) or np.any(labels < 0):
                raise ParseError("class labels must be non-negative integers")
            k = n_classes or (int(labels.max()) + 1 if len(labels) else 1)
            Y = one_hot(labels.astype(np.int64), k)
        else:
            Y = labels[:, None]
    return DomainDataset(X, M, tuple(types), Y, kind, domain_id, tuple(names))


def _load_mask(path, names, n):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != list(names):
        raise ParseError("mask header does not match data header", row=0)
    if len(rows) - 1 != n:
        raise ParseError(f"mask has {len(rows) - 1} rows, data has {n}")
    M = np.ones((n, len(names)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(names):
            raise ParseError(f"expected {len(names)} mask cells, found {len(row)}", row=i)
        for j, cell in enumerate(row):
            if cell.strip() not in ("0", "1"):
                raise ParseError(f"mask cell {cell!r} is not 0/1", row=i, column=names[j])
            M[i - 1, j] = float(cell)
    return M
