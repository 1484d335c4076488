import numpy as np
import pytest
from scipy.stats import chi2_contingency

from pvcluster import synth
from pvcluster.ingest import load_metadata, load_table, normalize_by_capacity


def normalized(cfg):
    table, meta, labels = synth.generate(cfg)
    return normalize_by_capacity(table, meta), meta, labels


def test_bit_identical_per_seed():
    cfg = synth.SynthConfig(U=10, days=5, seed=3)
    a, b = synth.generate(cfg), synth.generate(cfg)
    np.testing.assert_array_equal(a[0].values, b[0].values)
    np.testing.assert_array_equal(a[2], b[2])
    assert a[1] == b[1]
    c = synth.generate(synth.SynthConfig(U=10, days=5, seed=4))
    assert not np.array_equal(a[0].values, c[0].values, equal_nan=True)


def test_no_missingness():
    table, _, _ = synth.generate(synth.SynthConfig(U=8, days=10, missing_day_rate=0.0))
    assert table.missing_count() == 0


def test_shapes_and_ids():
    table, meta, labels = synth.generate(synth.SynthConfig(U=12, days=4, groups=4, resolution=30))
    assert table.values.shape == (12, 4 * 48)
    assert table.resolution == 30
    assert table.system_ids[0] == "pv00" and set(meta) == set(table.system_ids)
    assert sorted(np.bincount(labels)) == [3, 3, 3, 3]


def test_nights_are_zero_and_range():
    norm, _, _ = normalized(synth.SynthConfig(U=20, days=40, seed=1))
    V = norm.values.reshape(20, 40, 96)
    hours = (np.arange(96) + 0.5) / 4
    night = (hours < 2.5) | (hours > 21.5)
    obs = V[..., night]
    assert np.all(obs[~np.isnan(obs)] == 0.0)
    finite = norm.values[~np.isnan(norm.values)]
    assert finite.min() >= 0.0 and finite.max() <= 1.2


def test_missing_day_rate_within_three_standard_errors():
    rate, U, days = 0.15, 80, 200
    norm, _, _ = normalized(synth.SynthConfig(U=U, days=days, missing_day_rate=rate, seed=2))
    gone = np.isnan(norm.values.reshape(U, days, -1)).all(axis=2)
    se = np.sqrt(rate * (1 - rate) / (U * days))
    assert abs(gone.mean() - rate) < 3 * se


def test_global_outage():
    norm, _, _ = normalized(synth.SynthConfig(U=6, days=10, missing_day_rate=0.0, global_outage=(3, 5)))
    V = norm.values.reshape(6, 10, -1)
    assert np.isnan(V[:, 3:5]).all()
    assert not np.isnan(V[:, :3]).any() and not np.isnan(V[:, 5:]).any()


def test_subday_gaps_keep_part_of_the_day():
    norm, _, _ = normalized(synth.SynthConfig(U=10, days=30, missing_day_rate=0.3, subday_gaps=True, seed=5))
    V = np.isnan(norm.values.reshape(10, 30, -1))
    assert V.any() and not V.all(axis=2).any()


def test_decoupled_angles_independent_of_groups():
    _, meta, labels = synth.generate(
        synth.SynthConfig(U=200, days=1, groups=2, angle_coupling="decoupled", seed=0)
    )
    tilt = np.array([m.tilt for m in meta.values()])
    az = np.array([m.azimuth for m in meta.values()])
    cell = 2 * (tilt > np.median(tilt)) + (az > np.median(az))
    table = np.zeros((2, 4))
    np.add.at(table, (labels, cell), 1)
    assert chi2_contingency(table)[1] > 0.01


def test_coupled_angles_follow_groups():
    _, meta, labels = synth.generate(synth.SynthConfig(U=60, days=1, groups=3, seed=0))
    tilt = np.array([m.tilt for m in meta.values()])
    for g in range(3):
        assert np.ptp(tilt[labels == g]) <= 4.0 + 1e-9


@pytest.mark.parametrize("kw", [
    dict(groups=1), dict(U=2, groups=3), dict(days=0), dict(resolution=7),
    dict(missing_day_rate=1.0), dict(global_outage=(5, 3)), dict(global_outage=(0, 99)),
    dict(angle_coupling="loose"),
])
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        synth.generate(synth.SynthConfig(**{"U": 10, "days": 5, **kw}))


def test_write_fleet_roundtrip(tmp_path):
    table, meta, labels = synth.generate(synth.SynthConfig(U=5, days=2, seed=9))
    paths = synth.write_fleet(table, meta, labels, tmp_path)
    back = load_table(paths["series"])
    np.testing.assert_array_equal(back.values, table.values)
    assert load_metadata(paths["metadata"]) == meta
    assert synth.load_ground_truth(paths["ground_truth"]) == dict(zip(table.system_ids, labels.tolist()))
