import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctganru.ctgan import CtganConfig
from ctganru.exceptions import ConfigError
from ctganru.resampling import (
    CTGANOverSampler,
    CTGANRUSampler,
    RandomUnderSampler,
    ResamplePlan,
    SMOTENC,
    ctgan_oversample,
    ctgan_ru,
    random_undersample,
    ratio_targets,
    resample,
    resolve_targets,
    smote_nc,
    smote_nc_to_targets,
)
from ctganru.tabular import Dataset, make_schema
from helpers import brute_force_smote_candidates, make_toy, on_segment, smote_fixture

TINY = CtganConfig(
    epochs=2, batch_size=40, pac=4, z_dim=8, generator_dims=(16, 16, 16, 8), discriminator_dims=(16, 16, 8, 8)
)


def _imbalanced(n0, n1, seed=0, n2=None):
    rng = np.random.default_rng(seed)
    counts = [n0, n1] + ([n2] if n2 is not None else [])
    kind = "binary" if n2 is None else "ordered"
    schema = make_schema(["x"], {"a": ["p", "q"], "y": [str(i) for i in range(len(counts))]}, "y", kind)
    y = np.repeat(np.arange(len(counts)), counts)
    n = len(y)
    return Dataset.from_columns(schema, {"x": rng.normal(size=n) + y, "a": rng.integers(0, 2, n), "y": y})


def test_ru_exact_counts():
    d = _imbalanced(317, 63)
    out = random_undersample(d, {"0": 63, "1": 63}, seed=1)
    assert out.class_counts() == {"0": 63, "1": 63}


def test_ru_at_full_scale():
    d = _imbalanced(109_899, 57)
    out = random_undersample(d, [57, 57], seed=0)
    assert out.class_counts() == {"0": 57, "1": 57}


def test_ru_identity_when_targets_match():
    d = _imbalanced(30, 10)
    out = random_undersample(d, [30, 10], seed=5)
    assert np.array_equal(out.values, d.values)


def test_ru_rows_are_a_subset():
    d = _imbalanced(100, 20, seed=3)
    out = random_undersample(d, {0: 20}, seed=9)
    original = {tuple(r) for r in d.values}
    assert all(tuple(r) in original for r in out.values)
    assert out.class_counts()["1"] == 20


def test_ru_rejects_growth():
    with pytest.raises(ConfigError):
        random_undersample(_imbalanced(10, 5), {1: 6})


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 1000))
def test_ru_counts_property(t0, t1, seed):
    d = _imbalanced(40, 40, seed=seed % 7)
    out = random_undersample(d, [t0, t1], seed=seed)
    assert out.class_counts() == {"0": t0, "1": t1}


def test_resolve_targets_forms():
    d = _imbalanced(20, 5)
    assert resolve_targets(d, None).tolist() == [20, 5]
    assert resolve_targets(d, {"1": 20}).tolist() == [20, 20]
    assert resolve_targets(d, {1: 9}).tolist() == [20, 9]
    assert resolve_targets(d, [7, 7]).tolist() == [7, 7]
    for bad in ({"2": 3}, [1, 2, 3], [0, 5]):
        with pytest.raises(ConfigError):
            resolve_targets(d, bad)


def test_ratio_targets_examples():
    assert ratio_targets([317, 15], [2, 1], 2).tolist() == [60, 30]
    assert ratio_targets([317, 63, 63], [1, 1, 1], 2).tolist() == [126, 126, 126]
    assert ratio_targets([109_899, 57], [2, 1], 1).tolist() == [114, 57]
    with pytest.raises(ConfigError):
        ratio_targets([3, 4], [1, 0])


def test_smote_matches_brute_force_enumeration():
    data = smote_fixture()
    k = 3
    out = smote_nc(data, "1", k_neighbors=k, n_synthetic=200, seed=4)
    new = out.take(np.arange(len(data), len(out)))
    cands, cont, nom = brute_force_smote_candidates(data, 1, k)
    for row in new.values:
        pt = np.array([row[data.schema.index(n)] for n in cont])
        nominal = {n: int(row[data.schema.index(n)]) for n in nom}
        matches = [c for c in cands if any(on_segment(pt, a, b) for a, b in c["segments"])]
        assert matches, f"{pt} lies on no seed-neighbour segment"
        assert any(c["votes"] == nominal for c in matches)
    assert np.all(new.labels == 1)
    u = new.column("u")
    assert u.min() >= 0.0 and u.max() <= 7.0


def test_smote_zero_synthetic_is_identity():
    d = smote_fixture()
    assert smote_nc(d, 1, 3, 0) is d


def test_smote_needs_enough_minority_rows():
    with pytest.raises(ConfigError):
        smote_nc(smote_fixture(), 0, k_neighbors=3, n_synthetic=5)


def test_smote_to_targets_and_determinism():
    d = _imbalanced(60, 12)
    a = smote_nc_to_targets(d, [60, 60], k_neighbors=5, seed=2)
    b = smote_nc_to_targets(d, [60, 60], k_neighbors=5, seed=2)
    assert a.class_counts() == {"0": 60, "1": 60}
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.values[: len(d)], d.values)


def test_ctgan_oversample_fills_minority():
    d = _imbalanced(200, 20)
    out = ctgan_oversample(d, "1", 200, TINY, seed=0)
    assert out.class_counts() == {"0": 200, "1": 200}
    assert np.array_equal(out.values[:220], d.values)
    assert np.all(out.labels[220:] == 1)


def test_ctgan_oversample_noop_at_target():
    d = _imbalanced(30, 10)
    assert ctgan_oversample(d, 1, 10, TINY) is d


def test_ctgan_ru_two_step_counts():
    d = _imbalanced(317, 15)
    out = ctgan_ru(d, [60, 15], [60, 30], TINY, seed=1)
    assert out.class_counts() == {"0": 60, "1": 30}


def test_ctgan_ru_three_class():
    d = _imbalanced(317, 63, n2=63)
    out = ctgan_ru(d, [126, 63, 63], [126, 126, 126], TINY, seed=0, train_on="full")
    assert out.class_counts() == {"0": 126, "1": 126, "2": 126}


def test_ctgan_ru_rejects_bad_plans():
    d = _imbalanced(40, 10)
    with pytest.raises(ConfigError):
        ctgan_ru(d, [20, 10], [15, 10], TINY)
    with pytest.raises(ConfigError):
        ctgan_ru(d, None, [20, 20], TINY, train_on="elsewhere")


def test_resample_dispatch_and_plan_validation():
    d = _imbalanced(40, 10)
    assert resample(d, ResamplePlan("none")) is d
    assert resample(d, ResamplePlan("ru", [10, 10], seed=1)).class_counts() == {"0": 10, "1": 10}
    assert resample(d, ResamplePlan("smote_nc", [40, 40], seed=1)).class_counts() == {"0": 40, "1": 40}
    with pytest.raises(ConfigError):
        ResamplePlan("bootstrap")
    with pytest.raises(ConfigError):
        ResamplePlan("smote_nc", k_neighbors=0)


def test_estimator_wrappers():
    d = _imbalanced(60, 12)
    assert RandomUnderSampler({0: 12}).fit_resample(d).class_counts() == {"0": 12, "1": 12}
    assert SMOTENC([60, 60], random_state=3).fit_resample(d).class_counts() == {"0": 60, "1": 60}
    assert CTGANOverSampler([60, 30], config=TINY).fit_resample(d).class_counts() == {"0": 60, "1": 30}
    out = CTGANRUSampler([24, 24], ru_targets=[24, 12], config=TINY).fit_resample(d)
    assert out.class_counts() == {"0": 24, "1": 24}
    assert RandomUnderSampler().get_params() == {"targets": None, "random_state": 0}
