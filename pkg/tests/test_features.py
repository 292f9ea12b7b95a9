import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sorbkit.features import (
    CATEGORIES,
    CLAMP,
    FeatureMatrix,
    FeaturePipeline,
    IsolationForest,
    RawInputs,
    detect_outliers,
    engineer,
    impute,
    mutual_information,
    scale,
    select,
    stratified_split,
)
from sorbkit.synth import GeneratorSpec, generate


def raw(p, t, ssa=100.0, pv=0.05, d=2.0, lith="clay"):
    n = np.size(p)
    full = lambda v: np.broadcast_to(np.asarray(v, float), (n,)).copy()
    return RawInputs(full(p), full(t), full(ssa), full(pv), full(d),
                     np.array([lith] * n, dtype=object), np.array([f"S{i}" for i in range(n)], dtype=object))


def matrix(values, mask=None):
    values = np.asarray(values, float)
    names = [f"f{j}" for j in range(values.shape[1])]
    mask = np.zeros(values.shape, bool) if mask is None else mask
    return FeatureMatrix(names, values, dict.fromkeys(names, "thermodynamic"), mask)


# --------------------------------------------------------------------------- engineering


def test_reduced_properties_and_confinement():
    fm = engineer(raw([13.13, 1.0], [331.9, 298.15]))
    assert fm.column("reduced_temperature")[0] == 10.0
    assert fm.column("reduced_pressure")[0] == 1.0
    assert fm.column("confinement")[0] == 50.0
    assert fm.column("inv_temperature")[1] == pytest.approx(1000 / 298.15)
    assert fm.column("sieving_ratio")[0] == pytest.approx(2.0 / 0.289)


def test_registry_covers_seven_categories_and_flags_missing():
    r = raw([0.0, 5.0], [300.0, 300.0])
    r = RawInputs(r.pressure, r.temperature, np.array([np.nan, 10.0]), r.pore_volume, r.pore_diameter,
                  r.lithology, r.sample_id)
    fm = engineer(r)
    assert set(fm.category.values()) == set(CATEGORIES) - {"classical_prior"}
    assert fm.mask[0, fm.names.index("log_ssa")] and not fm.mask[1, fm.names.index("log_ssa")]
    # knudsen undefined at zero pressure
    assert fm.mask[0, fm.names.index("knudsen")]


def test_classical_priors_are_added_per_sample():
    class Prior:
        kind = "langmuir"
        theta = np.array([1.5, 0.2])

    fm = engineer(raw([1.0, 2.0], [300.0, 300.0]), priors={"clay": Prior()})
    assert fm.column("prior_capacity").tolist() == [1.5, 1.5]
    assert fm.category["prior_capacity"] == "classical_prior"


def test_engineer_is_per_record():
    ds, _ = generate(GeneratorSpec(n_samples=15, seed=1))
    raw_all = RawInputs.from_dataset(ds)
    whole = engineer(raw_all)
    part = engineer(raw_all.take(np.arange(7, 20)))
    np.testing.assert_array_equal(whole.values[7:20], part.values)


# --------------------------------------------------------------------------- imputation


def test_complete_feature_is_unchanged():
    fm = matrix(np.arange(20.0).reshape(10, 2))
    out = impute(fm, ["clay"] * 10)
    np.testing.assert_array_equal(out.values, fm.values)


def test_group_median_for_heavy_missingness():
    vals = np.array([[2.0, 1], [2.0, 2], [np.nan, 3], [np.nan, 4], [4.0, 5], [4.0, 6], [np.nan, 7], [np.nan, 8]])
    mask = np.isnan(vals)
    groups = ["clay", "clay", "clay", "clay", "shale", "shale", "shale", "shale"]
    out = impute(matrix(vals, mask), groups)
    assert out.values[2, 0] == 2.0 and out.values[3, 0] == 2.0
    assert out.values[6, 0] == 4.0
    assert not out.mask.any()
    # non-missing cells untouched
    assert np.array_equal(out.values[~mask], vals[~mask])


def test_median_tier_and_all_missing_drop():
    vals = np.column_stack([np.arange(10.0), np.r_[np.nan, np.nan, np.arange(8.0)], np.full(10, np.nan)])
    with pytest.warns(UserWarning, match="missing everywhere"):
        out = impute(matrix(vals, np.isnan(vals)), ["coal"] * 10)
    assert out.names == ["f0", "f1"]
    assert out.values[0, 1] == 3.5


def test_knn_beats_median_on_linear_structure():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(200, 3))
        y = x @ np.array([1.0, -2.0, 0.5]) + 0.05 * rng.normal(size=200)
        vals = np.column_stack([x, y])
        mask = np.zeros_like(vals, bool)
        hole = rng.choice(200, 10, replace=False)
        mask[hole, 3] = True
        vals_missing = vals.copy()
        vals_missing[mask] = np.nan
        knn = impute(matrix(vals_missing, mask), ["clay"] * 200).values[hole, 3]
        med = np.median(np.delete(y, hole))
        wins += np.mean(np.abs(knn - y[hole])) < np.mean(np.abs(med - y[hole]))
    assert wins == 20


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_impute_never_touches_present_cells(seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(30, 4))
    mask = rng.random((30, 4)) < rng.uniform(0, 0.6, size=4)
    mask[:, 0] = False
    vals[mask] = np.nan
    out = impute(matrix(vals, mask), rng.choice(["clay", "shale"], 30))
    kept = [int(n[1:]) for n in out.names]
    assert np.array_equal(out.values[~mask[:, kept]], vals[:, kept][~mask[:, kept]])
    assert np.all(np.isfinite(out.values))


# --------------------------------------------------------------------------- outliers


def test_constant_column_yields_no_flags():
    rep = detect_outliers(np.ones((50, 1)), contamination=0.0)
    assert not rep.flags.any()


def test_injected_point_is_extreme():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 3))
    x[42, 1] = 10.0
    rep = detect_outliers(x, contamination=0.05)
    assert rep.extreme[42]
    assert rep.removal[42]


def test_contamination_fraction_is_exact():
    x = np.random.default_rng(1).normal(size=(200, 4))
    rep = detect_outliers(x, contamination=0.1)
    assert rep.multivariate.sum() == 20


def test_winsorization_clips_moderate_values():
    x = np.linspace(-1, 1, 101)[:, None].copy()
    x[0, 0] = -2.1  # beyond the 1.5 IQR fence, inside 3 robust sigma
    rep = detect_outliers(x, contamination=0.0)
    q1, q3 = np.percentile(x, [25, 75])
    assert not rep.extreme[0]
    assert rep.winsorized[0, 0] == pytest.approx(q1 - 1.5 * (q3 - q1))


def test_small_sample_skips_forest():
    with pytest.warns(UserWarning):
        rep = detect_outliers(np.random.default_rng(0).normal(size=(5, 2)))
    assert not rep.multivariate.any()


def test_isolation_forest_scores_isolated_point_highest():
    rng = np.random.default_rng(3)
    x = np.vstack([rng.normal(size=(300, 2)), [[6.0, 6.0]]])
    scores = IsolationForest(seed=0).fit(x).score(x)
    assert int(np.argmax(scores)) == 300
    assert np.all((scores > 0) & (scores < 1))


# --------------------------------------------------------------------------- scaling


def test_scaling_properties():
    rng = np.random.default_rng(2)
    train = matrix(np.column_stack([rng.lognormal(size=80), np.full(80, 3.0), rng.normal(size=80)]))
    scaled, state = scale(train)
    np.testing.assert_allclose(np.median(scaled.values, axis=0), 0.0, atol=1e-12)
    iqr = np.subtract(*np.percentile(scaled.values[:, [0, 2]], [75, 25], axis=0))
    np.testing.assert_allclose(iqr, 1.0, rtol=1e-12)
    assert np.all(scaled.column("f1") == 0.0) and state.zero_iqr == ["f1"]
    test = matrix(rng.normal(size=(20, 3)))
    np.testing.assert_allclose(state.inverse(state.apply(test).values), test.values, rtol=1e-12, atol=1e-12)


# --------------------------------------------------------------------------- selection


def test_copy_of_target_gets_all_votes():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(60, 6))
    rep = select(matrix(vals), vals[:, 3], k=2)
    assert rep.selected[0] == "f3" and rep.votes["f3"] == 4
    assert all(rep.ranks[m]["f3"] == 1 for m in rep.ranks)


def test_nonlinear_dependence_beats_noise():
    mi_wins = tree_wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=200)
        noise = rng.normal(size=200)
        rep = select(matrix(np.column_stack([x, noise])), x**2, k=1, seed=seed)
        mi_wins += rep.scores["mutual_information"]["f0"] > rep.scores["mutual_information"]["f1"]
        tree_wins += rep.scores["tree_importance"]["f0"] > rep.scores["tree_importance"]["f1"]
    assert mi_wins >= 18 and tree_wins >= 18


def test_selection_edge_cases():
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(30, 4))
    assert len(select(matrix(vals), vals[:, 0], k=10).selected) == 4
    with pytest.raises(ValueError):
        select(matrix(vals), np.ones(30))
    with pytest.raises(ValueError):
        select(matrix(vals[:10]), vals[:10, 0])


def test_votes_are_column_order_invariant():
    rng = np.random.default_rng(5)
    vals = rng.normal(size=(50, 5))
    y = vals[:, 0] + 0.5 * vals[:, 2] ** 2 + 0.1 * rng.normal(size=50)
    fm = matrix(vals)
    perm = [3, 1, 4, 0, 2]
    a = select(fm, y, k=2)
    b = select(fm.subset([fm.names[j] for j in perm]), y, k=2)
    assert a.votes == b.votes and a.selected == b.selected


def test_mutual_information_independent_is_small():
    rng = np.random.default_rng(0)
    assert mutual_information(rng.normal(size=5000), rng.normal(size=5000)) < 0.03


# --------------------------------------------------------------------------- splitting


def test_stratified_split_counts():
    labels = ["clay"] * 50 + ["shale"] * 60 + ["coal"] * 45
    train, test = stratified_split(labels, 0.2, seed=0)
    counts = {g: sum(labels[i] == g for i in test) for g in ("clay", "shale", "coal")}
    assert counts == {"clay": 10, "shale": 12, "coal": 9}
    assert set(train).isdisjoint(test) and len(train) + len(test) == 155
    again = stratified_split(labels, 0.2, seed=0)
    assert np.array_equal(again[1], test)
    assert len(stratified_split(labels, 0.0)[1]) == 0


def test_single_sample_group_goes_to_train():
    with pytest.warns(UserWarning):
        train, test = stratified_split(["clay"] * 5 + ["coal"], 0.2)
    assert 5 in train


# --------------------------------------------------------------------------- pipeline


def test_pipeline_transform_is_clamped_and_complete():
    ds, _ = generate(GeneratorSpec(n_samples=30, seed=4))
    r = RawInputs.from_dataset(ds)
    pipe = FeaturePipeline.fit(r.take(np.arange(200)), ds.column("uptake")[:200], k=12)
    x = pipe.transform(r.take(np.arange(200, len(r))))
    assert x.shape == (len(r) - 200, 12)
    assert np.all(np.isfinite(x)) and np.abs(x).max() <= CLAMP
