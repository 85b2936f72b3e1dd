"""Joint training: discriminator, generator, multi-task head and MMD alignment.

The imputation losses are summed over entries; for optimisation and
reporting they are averaged instead (L_rec and L_M over the batch's n_b * d
entries, L_D over the entries it selects, L_C over rows), so step sizes do
not grow with the data width. The MMD term is already an average.

The supervised step updates W and G together on the plain multi-task
objective; lambda2 weights L_C only where the phases are summed into the
reported generator loss.
"""
import csv
import time
from dataclasses import asdict, dataclass, field, replace
from types import SimpleNamespace

import numpy as np

from .data import batch_iter, make_tilde
from .errors import ConfigError, DimensionError
from .imputer import (Discriminator, Generator, disc_entries, discriminate, discriminator_input_grad, impute,
                      loss_disc_grad, loss_gen_adv_grad, loss_rec_grad, sample_hint)
from .mmd import KernelConfig, mmd_loss_grad
from .mtl import ClassifierHead, loss_mtl_grad
from .nn import SgdConfig, sgd_step

REPORT_COLUMNS = ("epoch", "domain", "l_rec", "l_m", "l_d", "l_c", "l_mmd", "total")


@dataclass
class HyperParams:
    lambda0: float = 1.0   # L_M
    lambda1: float = 0.1   # L_D
    lambda2: float = 0.1   # L_C
    lambda3: float = 2.0   # L_mmd
    sigma: float = 10.0
    sgd: SgdConfig = field(default_factory=SgdConfig)
    rho0: float = 1.0
    rho_l2: float = 0.1
    max_epochs: int = 300
    patience: int = 20
    window: int = 10
    convergence_tol: float = 1e-4
    mode: str = "supervised"
    seed: int = 0
    disc_variant: str = "hint"
    d_e: int = None

    def __post_init__(self):
        if isinstance(self.sgd, dict):
            self.sgd = SgdConfig(**self.sgd)
        for k in ("lambda0", "lambda1", "lambda2", "lambda3", "rho0", "rho_l2"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be nonnegative")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.mode not in ("supervised", "unsupervised"):
            raise ConfigError(f"mode must be supervised or unsupervised, not {self.mode!r}")
        if self.max_epochs < 1 or self.patience < 1 or self.window < 1:
            raise ConfigError("max_epochs, patience and window must be >= 1")
        if self.convergence_tol <= 0:
            raise ConfigError("convergence_tol must be positive")

    @property
    def supervised(self):
        return self.mode == "supervised"

    def as_flat_dict(self):
        out = asdict(self)
        sgd = out.pop("sgd")
        out.update({"learning_rate": sgd["learning_rate"], "momentum": sgd["momentum"],
                    "batch_size": sgd["batch_size"]})
        return out


def total_loss(components, hp):
    """Weighted objective: sum over domains of
    ``l_rec + lambda0 l_m + lambda1 l_d + lambda2 l_c`` plus ``lambda3 l_mmd``.

    ``components`` is a list of per-domain dicts with keys l_rec, l_m, l_d,
    l_c and an optional ``l_mmd`` float or key on the first entry.
    """
    total = 0.0
    l_mmd = 0.0
    for c in components:
        total += c["l_rec"] + hp.lambda0 * c["l_m"] + hp.lambda1 * c["l_d"]
        if hp.supervised:
            total += hp.lambda2 * c["l_c"]
        l_mmd = c.get("l_mmd", l_mmd)
    return total + hp.lambda3 * l_mmd


def aae_forward(G, X, M, rng):
    """Noise fill, generate, impute, hint. Returns a namespace of all intermediates."""
    X_tilde, M = make_tilde(X, M, rng)
    X_bar, E = G.generate(X_tilde, M)
    X_hat = impute(X_tilde, M, X_bar)
    H = sample_hint(M, rng)
    return SimpleNamespace(X_tilde=X_tilde, X_bar=X_bar, X_hat=X_hat, H=H, M=M, E=E)


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    seed: int = 0
    stopped_early: bool = False

    @property
    def epochs(self):
        return len(self.g_loss)

    def column(self, name, domain=None):
        return [r[name] for r in self.records if domain is None or r["domain"] == domain]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                w.writerow([r["epoch"], r["domain"]] + [repr(float(r[k])) for k in REPORT_COLUMNS[2:]])


class Md2iTrainer:
    """Holds G, D and the head and runs the four training phases."""

    def __init__(self, domains, hp, task_of_domain=None):
        domains = list(domains)
        if not domains:
            raise ConfigError("need at least one domain")
        d = domains[0].d
        if any(ds.d != d for ds in domains):
            raise ConfigError("all domains must share the feature width")
        if hp.supervised and any(ds.Y is None for ds in domains):
            raise ConfigError("supervised mode needs labels in every domain")
        self.domains = domains
        self.hp = hp
        self.task_of_domain = list(range(len(domains))) if task_of_domain is None else list(task_of_domain)
        if len(self.task_of_domain) != len(domains):
            raise ConfigError("one task index per domain required")
        init_ss, data_ss = np.random.SeedSequence(hp.seed).spawn(2)
        init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(data_ss)
        self.G = Generator.build(d, init_rng, hp.d_e)
        self.D = Discriminator.build(d, init_rng, self.G.d_e)
        self.head = ClassifierHead.build(self.G.d_e, self._task_specs(), init_rng, hp.rho0, hp.rho_l2)
        self.kernel = KernelConfig(hp.sigma)
        self.report = TrainReport(seed=hp.seed)

    def _task_specs(self):
        specs = {}
        for ds, t in zip(self.domains, self.task_of_domain):
            if ds.Y is None:
                spec = ("regression", 0)
            elif ds.y_kind == "class":
                spec = ("classification", ds.Y.shape[1])
            else:
                spec = ("regression", 0)
            if specs.setdefault(t, spec) != spec:
                raise ConfigError(f"domains mapped to task {t} disagree on the label type")
        if sorted(specs) != list(range(len(specs))):
            raise ConfigError("task indices must be 0..T-1")
        return [specs[t] for t in range(len(specs))]

    # -- phases ---------------------------------------------------------

    def d_phase(self, s):
        ds, hp = self.domains[s], self.hp
        losses = []
        for b in batch_iter(ds.n, hp.sgd.batch_size, self.rng):
            f = aae_forward(self.G, ds.X[b], ds.M[b], self.rng)
            M_hat = discriminate(self.D, f.X_hat, f.H)
            val, g = loss_disc_grad(f.M, M_hat, f.H, hp.disc_variant)
            count = max(disc_entries(f.M, f.H, hp.disc_variant).sum(), 1.0)
            self.D.net.backward(g / count)
            sgd_step(self.D, hp.sgd)
            losses.append(val / count)
        return float(np.mean(losses))

    def g_phase(self, s):
        ds, hp = self.domains[s], self.hp
        recs, advs = [], []
        for b in batch_iter(ds.n, hp.sgd.batch_size, self.rng):
            f = aae_forward(self.G, ds.X[b], ds.M[b], self.rng)
            M_hat = discriminate(self.D, f.X_hat, f.H)
            l_m, g_mhat = loss_gen_adv_grad(f.M, M_hat)
            g_xhat = discriminator_input_grad(self.D, g_mhat)
            l_rec, g_rec = loss_rec_grad(ds.X[b], f.X_bar, f.M, ds.col_types)
            g_xbar = g_rec + hp.lambda0 * (1.0 - f.M) * g_xhat
            count = f.M.size
            self.G.backward(grad_xbar=g_xbar / count)
            sgd_step(self.G, hp.sgd)
            recs.append(l_rec / count)
            advs.append(l_m / count)
        return float(np.mean(recs)), float(np.mean(advs))

    def mtl_phase(self, s):
        ds, hp = self.domains[s], self.hp
        b = next(batch_iter(ds.n, hp.sgd.batch_size, self.rng))
        f = aae_forward(self.G, ds.X[b], ds.M[b], self.rng)
        t = self.task_of_domain[s]
        # per-sample data term plus this batch's share of the penalty; W is
        # shared, so the shares of one epoch's S steps add up to one penalty
        n_b = len(b)
        share = n_b / sum(d.n for d in self.domains)
        val, gW, (gE,) = loss_mtl_grad(self.head, [f.E], [ds.Y[b]], [t], penalty_scale=share)
        self.head.gW += gW / n_b
        self.G.backward(grad_e=gE / n_b)
        sgd_step(self.head, hp.sgd)
        sgd_step(self.G, hp.sgd)
        return val / n_b

    def mmd_phase(self):
        hp = self.hp
        if len(self.domains) < 2:
            return 0.0
        parts, sizes = [], []
        for ds in self.domains:
            b = next(batch_iter(ds.n, hp.sgd.batch_size, self.rng))
            X_tilde, M = make_tilde(ds.X[b], ds.M[b], self.rng)
            parts.append(np.hstack([X_tilde, M]))
            sizes.append(len(b))
        E_all = self.G.encoder.forward(np.vstack(parts))
        encodings = np.split(E_all, np.cumsum(sizes)[:-1])
        val, grads = mmd_loss_grad(encodings, self.kernel)
        self.G.encoder.backward(hp.lambda3 * np.vstack(grads))
        sgd_step(self.G, hp.sgd)
        return val

    # -- loop -----------------------------------------------------------

    def run_epoch(self):
        hp = self.hp
        epoch = self.report.epochs + 1
        t0 = time.perf_counter()
        comps = []
        for s in range(len(self.domains)):
            l_d = self.d_phase(s)
            l_rec, l_m = self.g_phase(s)
            l_c = self.mtl_phase(s) if hp.supervised else 0.0
            comps.append({"l_rec": l_rec, "l_m": l_m, "l_d": l_d, "l_c": l_c})
        l_mmd = self.mmd_phase()
        g_loss = hp.lambda3 * l_mmd
        for s, c in enumerate(comps):
            c["l_mmd"] = l_mmd
            g_loss += c["l_rec"] + hp.lambda0 * c["l_m"] + (hp.lambda2 * c["l_c"] if hp.supervised else 0.0)
            total = (c["l_rec"] + hp.lambda0 * c["l_m"] + hp.lambda1 * c["l_d"]
                     + (hp.lambda2 * c["l_c"] if hp.supervised else 0.0) + hp.lambda3 * l_mmd)
            self.report.records.append(dict(c, epoch=epoch, domain=s, total=total))
        self.report.g_loss.append(float(g_loss))
        self.report.seconds.append(time.perf_counter() - t0)
        return g_loss

    def fit(self):
        hp = self.hp
        best, stale = np.inf, 0
        for _ in range(hp.max_epochs):
            self.run_epoch()
            if self.report.epochs < hp.window:
                continue
            w = float(np.mean(self.report.g_loss[-hp.window:]))
            if w < best - hp.convergence_tol * abs(best) or not np.isfinite(best):
                best, stale = w, 0
            else:
                stale += 1
                if stale >= hp.patience:
                    self.report.stopped_early = True
                    break
        return self


def train_md2i(domains, hp, task_of_domain=None):
    """Train and return ``(G, D, head, report)``."""
    tr = Md2iTrainer(domains, hp, task_of_domain).fit()
    return tr.G, tr.D, tr.head, tr.report


def _check_width(G, ds):
    if ds.d != G.d:
        raise DimensionError(f"model expects {G.d} columns, dataset has {ds.d}")


def impute_dataset(G, ds, seed=0):
    """Replace missing entries with the generator's imputations; mask becomes all ones."""
    _check_width(G, ds)
    rng = np.random.default_rng(seed)
    X_tilde, M = make_tilde(ds.X, ds.M, rng)
    X_bar, _ = G.generate(X_tilde, M)
    return replace(ds, X=impute(X_tilde, M, X_bar), M=np.ones_like(M))


def encode_dataset(G, ds, seed=0):
    _check_width(G, ds)
    rng = np.random.default_rng(seed)
    X_tilde, M = make_tilde(ds.X, ds.M, rng)
    return G.encode(X_tilde, M)
