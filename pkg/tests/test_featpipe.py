import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbangraph.featpipe import (
    DEGREE_COLUMN,
    ONEHOT_COLUMNS,
    FeatureMatrix,
    NonFinite,
    assemble_features,
    fit_stats,
    l1_logreg,
    logistic_loss,
    prune_correlated,
    select_features,
    standardize,
    write_selection,
)
from urbangraph.ingest import FACILITY_KINDS, Kind
from urbangraph.network import ShapeMismatch, build_proximity_graph, build_urban_network, hop_counts
from urbangraph.synth import SynthConfig, generate


def test_zscore_example():
    Z, stats = standardize(np.array([[1.0], [2.0], [3.0]]), slice(None))
    np.testing.assert_allclose(Z[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    assert not stats.constant[0]


def test_constant_column_flagged():
    Z, stats = standardize(np.array([[5.0, 1], [5.0, 2], [5.0, 3]]), slice(None))
    assert stats.constant.tolist() == [True, False]
    assert np.all(Z[:, 0] == 0)


def test_training_stats_only():
    X = np.array([[0.0], [2.0], [100.0]])
    Z, stats = standardize(X, [0, 1])
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
    assert Z[2, 0] == 99.0


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e4))
def test_scale_invariance(seed, c):
    X = np.random.default_rng(seed).normal(size=(20, 3)) * [1, 10, 100]
    X2 = X.copy()
    X2[:, 1] *= c
    np.testing.assert_allclose(standardize(X, slice(None))[0], standardize(X2, slice(None))[0], atol=1e-9)


def test_huge_lambda_zeroes_everything(rng):
    X = rng.normal(size=(40, 5))
    y = (X[:, 0] > 0).astype(float)
    fit = l1_logreg(X, y, 1e6)
    assert np.all(fit.coef == 0.0)


def test_separable_toy():
    X = np.array([[-2.0, -1], [-1, -2], [-1.5, -1.5], [1, 2], [2, 1], [1.5, 1.5]])
    y = np.array([0, 0, 0, 1, 1, 1.0])
    fit = l1_logreg(X, y, 0.0, max_iter=20000, tol=1e-14)
    assert logistic_loss(X, y, fit.coef, fit.intercept) < 0.01
    assert np.all(np.sign(fit.coef) == 1)


def test_objective_monotone(rng):
    X = rng.normal(size=(80, 6))
    y = (X @ rng.normal(size=6) + rng.normal(size=80) > 0).astype(float)
    for lam in (0.0, 0.01, 0.1):
        h = np.array(l1_logreg(X, y, lam).history)
        assert np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, np.abs(h[:-1])))


def test_nonfinite_input():
    X = np.array([[np.inf], [1.0]])
    with pytest.raises((NonFinite, FloatingPointError, ValueError)):
        l1_logreg(X, np.array([0.0, 1.0]), 0.1)


def test_subgradient_condition_single_feature(rng):
    x = rng.normal(size=(60, 1))
    y = (x[:, 0] + rng.normal(size=60) > 0.3).astype(float)
    # gradient w.r.t. w at w = 0 with the intercept at its optimum
    b0 = np.log(y.mean() / (1 - y.mean()))
    g0 = abs(float(x[:, 0] @ (1 / (1 + np.exp(-b0)) - y)) / len(y))
    assert np.all(l1_logreg(x, y, g0 * 1.01).coef == 0.0)
    assert np.all(l1_logreg(x, y, g0 * 0.5).coef != 0.0)


def test_duplicate_columns_one_survives(rng):
    z = rng.normal(size=200)
    X = np.column_stack([z, z, rng.normal(size=200)])
    y = (z + 0.3 * rng.normal(size=200) > 0).astype(int)
    rep = select_features(X, y, [f"t{i:03d}" for i in range(200)], ["a", "a_copy", "noise"], lambda_grid=[1e-3])
    assert len({"a", "a_copy"} & set(rep.names)) == 1


def test_pruning_keeps_stronger():
    Z = np.array([[1.0, 1.1, 0], [2, 2.1, 1], [3, 2.9, 0], [4, 4.2, 1]])
    kept, pruned = prune_correlated(Z, np.array([0.5, 0.9, 0.1]), [0, 1, 2], 0.8)
    assert kept == [1, 2] and pruned == [0]


def test_all_noise_empty_selection(rng):
    X = rng.normal(size=(100, 5))
    y = rng.integers(0, 2, 100)
    rep = select_features(X, y, [f"t{i}" for i in range(100)], list("abcde"), lambda_grid=[5.0])
    assert rep.names == () and all(not f.selected for f in rep.features)


def _synth_selection(seed, **kw):
    ds, gt = generate(SynthConfig(n_tracts=1000, seed=seed, **kw))
    rep = select_features(ds.socio, ds.labels, ds.tract_ids, ds.socio_names, seed=seed)
    return ds, gt, rep


def test_report_invariants_and_csv(tmp_path):
    ds, gt, rep = _synth_selection(3)
    for f in rep.features:
        assert not f.selected or f.coefficient != 0.0
        assert not f.pruned or f.selected
    assert [f.abs_rank for f in rep.features] == list(range(1, 41))
    write_selection(rep, tmp_path / "sel.csv", "h")
    rows = list(csv.reader(l for l in open(tmp_path / "sel.csv") if not l.startswith("#")))
    assert rows[0] == ["feature", "coefficient", "abs_rank", "selected", "pruned"]
    assert len(rows) == 41


def test_row_order_invariance(rng):
    ds, gt = generate(SynthConfig(n_tracts=600, seed=4))
    ids = ds.tract_ids
    a = select_features(ds.socio, ds.labels, ids, ds.socio_names, seed=1)
    p = rng.permutation(len(ids))
    b = select_features(ds.socio[p], ds.labels[p], [ids[i] for i in p], ds.socio_names, seed=1)
    assert set(a.names) == set(b.names)


def _pieces(n_tracts=60, **kw):
    ds, gt = generate(SynthConfig(n_tracts=n_tracts, n_schools=8, n_hospitals=4, n_subways=5, **kw))
    net = build_urban_network(ds, FACILITY_KINDS, 2)
    hops = hop_counts(build_proximity_graph(ds, FACILITY_KINDS, 3), ds)
    return ds, net, hops


def test_chicago_style_row_length():
    ds, net, hops = _pieces(n_tracts=400, n_socio_features=18, n_informative_socio=18, socio_effect=1.0)
    sel = select_features(ds.socio, ds.labels, ds.tract_ids, ds.socio_names, lambda_grid=[1e-6], corr_threshold=1.0)
    assert len(sel.names) == 18
    X = assemble_features(net, ds, sel, hops, ("onehot", "socio", "footprint", "hops"))
    assert X.values.shape[1] == 4 + 18 + 4 + 3 == 29


def test_facility_rows_and_onehot():
    ds, net, hops = _pieces()
    sel = select_features(ds.socio, ds.labels, ds.tract_ids, ds.socio_names, lambda_grid=[1e-4])
    X = assemble_features(net, ds, sel, hops, ("onehot", "socio", "footprint", "hops"))
    kinds = net.kinds()
    assert np.all(X.values[:, :4].sum(axis=1) == 1.0)
    school = np.nonzero(kinds == Kind.SCHOOL)[0][0]
    assert X.values[school].tolist() == [0, 1, 0, 0] + [0.0] * (X.values.shape[1] - 4)
    assert X.columns[:4] == ONEHOT_COLUMNS


def test_structure_only():
    ds, net, hops = _pieces()
    assert assemble_features(net, ds, include=("onehot",)).values.shape == (len(net), 4)
    X = assemble_features(net, ds, include=("onehot", "degree"))
    assert X.columns[-1] == DEGREE_COLUMN and X.values[:, -1].max() == 1.0


def test_hops_mismatch():
    ds, net, _ = _pieces()
    other, _ = generate(SynthConfig(n_tracts=30, n_schools=3, n_hospitals=3, n_subways=3, seed=9))
    bad = hop_counts(build_proximity_graph(other, FACILITY_KINDS, 3), other)
    with pytest.raises(ShapeMismatch):
        assemble_features(net, ds, hops=bad, include=("onehot", "hops"))


def test_feature_matrix_checks():
    ds, net, _ = _pieces()
    with pytest.raises(ValueError):
        FeatureMatrix(net.nodes, ("a", "a"), np.zeros((len(net), 2)))
    with pytest.raises(ValueError):
        FeatureMatrix(net.nodes, ("a",), np.full((len(net), 1), np.nan))
