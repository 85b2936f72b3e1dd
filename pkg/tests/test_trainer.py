import math
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from md2i.data import MissingSpec, inject_mcar_uniform, synth_blob_domains, synth_linear_tabular
from md2i.errors import ConfigError, DimensionError
from md2i.mmd import mmd2
from md2i.trainer import (REPORT_COLUMNS, HyperParams, Md2iTrainer, aae_forward, encode_dataset,
                          impute_dataset, total_loss, train_md2i)


def tabular(seed=0, n=500, d=8, rate=0.3):
    ds = synth_linear_tabular(n, d, seed=seed)
    return inject_mcar_uniform(ds, MissingSpec("mcar_uniform", rate=rate, seed=seed + 1))


def blobs(seed=0, n=120):
    doms = synth_blob_domains(n=n, d=8, shift=1.5, seed=seed)
    return [inject_mcar_uniform(d, MissingSpec("mcar_uniform", rate=0.2, seed=seed * 10 + i))
            for i, d in enumerate(doms)]


def snapshot(model):
    return [p.copy() for p in model.params()]


def same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def test_hyperparam_validation():
    with pytest.raises(ConfigError):
        HyperParams(lambda3=-1.0)
    with pytest.raises(ConfigError):
        HyperParams(mode="semi")
    with pytest.raises(ConfigError):
        HyperParams(sigma=0.0)
    hp = HyperParams(sgd={"learning_rate": 0.1, "momentum": 0.5, "batch_size": 8})
    assert hp.sgd.batch_size == 8
    assert hp.as_flat_dict()["learning_rate"] == 0.1


def test_total_loss_hand_sum():
    hp = HyperParams()
    c = {"l_rec": 2.0, "l_m": 3.0, "l_d": 5.0, "l_c": 7.0, "l_mmd": 11.0}
    # 2 + 1*3 + 0.1*5 + 0.1*7 + 2*11
    assert math.isclose(total_loss([c], hp), 28.2)
    zero = dict.fromkeys(c, 0.0)
    assert total_loss([zero, zero], hp) == 0.0


def test_total_loss_unsupervised_ignores_lc():
    hp = HyperParams(mode="unsupervised")
    a = {"l_rec": 1.0, "l_m": 1.0, "l_d": 1.0, "l_c": 0.0}
    assert total_loss([a], hp) == total_loss([dict(a, l_c=99.0)], hp)


def test_aae_forward_contracts(rng):
    ds = tabular(n=40)
    tr = Md2iTrainer([ds], HyperParams(mode="unsupervised"))
    f = aae_forward(tr.G, ds.X, ds.M, np.random.default_rng(1))
    for name in ("X_tilde", "X_bar", "X_hat", "H", "M"):
        assert getattr(f, name).shape == ds.X.shape
    assert f.E.shape == (40, tr.G.d_e)
    g = aae_forward(tr.G, ds.X, ds.M, np.random.default_rng(1))
    npt.assert_array_equal(f.X_hat, g.X_hat)
    npt.assert_array_equal(f.H, g.H)
    full = aae_forward(tr.G, ds.X, np.ones_like(ds.M), rng)
    npt.assert_array_equal(full.X_hat, ds.X)


def test_supervised_needs_labels():
    ds = replace(tabular(n=40), Y=None, y_kind=None)
    with pytest.raises(ConfigError):
        Md2iTrainer([ds], HyperParams())
    with pytest.raises(ConfigError):
        Md2iTrainer([], HyperParams(mode="unsupervised"))


def test_single_domain_has_no_mmd():
    _, _, _, rep = train_md2i([tabular(n=80)], HyperParams(mode="unsupervised", max_epochs=5))
    assert rep.column("l_mmd") == [0.0] * 5
    assert rep.epochs == 5


def test_unsupervised_never_touches_head():
    doms = blobs(n=60)
    tr = Md2iTrainer(doms, HyperParams(mode="unsupervised", max_epochs=4))
    W0 = tr.head.W.copy()
    tr.fit()
    npt.assert_array_equal(tr.head.W, W0)
    assert tr.report.column("l_c") == [0.0] * 8


def test_phase_separation():
    doms = blobs(n=60)
    tr = Md2iTrainer(doms, HyperParams(max_epochs=1))
    g0, d0, w0 = snapshot(tr.G), snapshot(tr.D), tr.head.W.copy()
    tr.d_phase(0)
    assert same(snapshot(tr.G), g0) and not same(snapshot(tr.D), d0)
    npt.assert_array_equal(tr.head.W, w0)
    g1, d1 = snapshot(tr.G), snapshot(tr.D)
    tr.g_phase(0)
    assert same(snapshot(tr.D), d1) and not same(snapshot(tr.G), g1)
    npt.assert_array_equal(tr.head.W, w0)
    d2 = snapshot(tr.D)
    tr.mtl_phase(0)
    assert same(snapshot(tr.D), d2)
    assert not np.array_equal(tr.head.W, w0)
    tr.mmd_phase()
    assert same(snapshot(tr.D), d2)


def test_determinism():
    doms = blobs(n=60)
    hp = HyperParams(max_epochs=6, seed=4)
    a = train_md2i(doms, hp)
    b = train_md2i(doms, hp)
    assert a[3].records == b[3].records
    assert same(snapshot(a[0]), snapshot(b[0]))
    npt.assert_array_equal(a[2].W, b[2].W)
    c = train_md2i(doms, replace(hp, seed=5))
    assert c[3].records != a[3].records


def test_training_progress():
    rep = train_md2i([tabular()], HyperParams(mode="unsupervised", max_epochs=50, patience=50))[3]
    assert rep.g_loss[49] < rep.g_loss[0]


def test_smoothed_loss_decreases():
    rep = train_md2i([tabular(seed=2)], HyperParams(mode="unsupervised", max_epochs=120, patience=120))[3]
    g = np.array(rep.g_loss)
    assert g[-10:].mean() < g[:10].mean()


def test_early_stop_bounded():
    rep = train_md2i([tabular(n=100)], HyperParams(mode="unsupervised", max_epochs=300, patience=3))[3]
    assert rep.epochs <= 300
    assert rep.stopped_early == (rep.epochs < 300)


def test_mmd_term_aligns_domains():
    doms = blobs(seed=1, n=150)
    out = []
    for l3 in (2.0, 0.0):
        G, *_ = train_md2i(doms, HyperParams(mode="unsupervised", lambda3=l3, max_epochs=60, patience=60, seed=1))
        out.append(mmd2(encode_dataset(G, doms[0]), encode_dataset(G, doms[1])))
    assert out[0] < out[1]


def test_impute_dataset_contract():
    ds = tabular(n=60)
    G = train_md2i([ds], HyperParams(mode="unsupervised", max_epochs=3))[0]
    out = impute_dataset(G, ds, seed=2)
    npt.assert_array_equal(out.M, 1.0)
    obs = ds.M == 1
    npt.assert_array_equal(out.X[obs], ds.X[obs])
    assert np.all((out.X >= 0) & (out.X <= 1))
    full = replace(ds, M=np.ones_like(ds.M))
    npt.assert_array_equal(impute_dataset(G, full).X, ds.X)
    npt.assert_array_equal(impute_dataset(G, ds, 2).X, out.X)


def test_encode_dataset_contract():
    ds = tabular(n=30)
    G = train_md2i([ds], HyperParams(mode="unsupervised", max_epochs=2))[0]
    E = encode_dataset(G, ds, 7)
    assert E.shape == (30, G.d_e)
    npt.assert_array_equal(E, encode_dataset(G, ds, 7))
    with pytest.raises(DimensionError):
        encode_dataset(G, synth_linear_tabular(10, 5))


def test_report_csv(tmp_path):
    rep = train_md2i(blobs(n=40), HyperParams(max_epochs=3))[3]
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 1 + 3 * 2
