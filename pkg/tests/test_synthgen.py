"""Synthetic flow generation: determinism, mix accuracy, divergence behavior."""

from __future__ import annotations

import numpy as np
import pytest

from segfl.flowdata import (
    default_encoding,
    fit_scaler,
    parse_flow_csv,
    write_flow_csv,
    CANONICAL_COLUMN_MAP,
)
from segfl.synthgen import (
    DEFAULT_CLASS_MIX,
    generate,
    make_profile,
    make_scenario,
    to_records,
)


def test_generate_is_deterministic():
    profile = make_profile("A", divergence=0.3)
    a = generate(profile, 500, seed=11)
    b = generate(profile, 500, seed=11)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    c = generate(profile, 500, seed=12)
    assert not np.array_equal(a.features, c.features)


def test_class_counts_follow_the_mix_exactly():
    profile = make_profile("A", class_mix=(0.5, 0.3, 0.2))
    data = generate(profile, 10_000, seed=0)
    assert np.array_equal(np.bincount(data.labels, minlength=3), [5000, 3000, 2000])


def test_default_mix_is_seventeen_to_one_point_two_to_one():
    assert DEFAULT_CLASS_MIX[0] / DEFAULT_CLASS_MIX[2] == pytest.approx(17.0, abs=1e-12)
    assert DEFAULT_CLASS_MIX[1] / DEFAULT_CLASS_MIX[2] == pytest.approx(1.2, abs=1e-12)
    data = generate(make_profile("A"), 19_200, seed=4)
    counts = np.bincount(data.labels, minlength=3)
    assert np.array_equal(counts, [17_000, 1_200, 1_000])


def test_feature_invariants_hold():
    data = generate(make_profile("A", divergence=0.8), 3_000, seed=7)
    duration, protocol, src, dst, packets, nbytes, flags = data.features.T
    enc = default_encoding()
    assert np.all(duration >= 0)
    assert np.all((src >= 0) & (src <= 65535)) and np.all(src == np.round(src))
    assert np.all((dst >= 0) & (dst <= 65535)) and np.all(dst == np.round(dst))
    assert np.all(packets >= 0) and np.all(packets == np.round(packets))
    assert np.all(nbytes >= 0) and np.all(nbytes == np.round(nbytes))
    assert np.all(np.isin(protocol, list(enc.protocol_codes.values())))
    assert np.all(np.isin(flags, list(enc.flags_codes.values())))
    assert set(np.unique(data.labels)) <= {0, 1, 2}


def test_zero_divergence_profiles_are_interchangeable():
    # Two ids at divergence 0 use identical distributions, so per-feature
    # means differ only by sampling noise (checked against 3 standard errors).
    a = generate(make_profile("A", divergence=0.0), 6_000, seed=21)
    b = generate(make_profile("B", divergence=0.0), 6_000, seed=22)
    for col in range(7):
        xs, ys = a.features[:, col], b.features[:, col]
        pooled_se = np.sqrt(xs.var() / len(xs) + ys.var() / len(ys))
        assert abs(xs.mean() - ys.mean()) <= 3 * pooled_se, f"feature column {col}"


def test_divergence_monotonically_separates_class_signatures():
    # Distance between per-class feature centroids (on a shared 0-1 scale)
    # grows with the divergence knob.
    base = generate(make_profile("A", divergence=0.0), 8_000, seed=33)
    scaler = fit_scaler(base)

    def signature_distance(divergence: float) -> float:
        other = generate(make_profile("B", divergence), 8_000, seed=34)
        total = 0.0
        for cls in range(3):
            mine = scaler.transform(base.features[base.labels == cls]).mean(axis=0)
            theirs = scaler.transform(other.features[other.labels == cls]).mean(axis=0)
            total += float(np.linalg.norm(mine - theirs))
        return total

    d0, d_half, d_full = (signature_distance(t) for t in (0.0, 0.5, 1.0))
    assert d0 < d_half < d_full
    assert d_full > 3 * d0, "full divergence should dominate sampling noise"


def test_generated_data_round_trips_through_csv(tmp_path):
    data = generate(make_profile("A", divergence=0.5), 200, seed=9)
    path = tmp_path / "flows.csv"
    write_flow_csv(to_records(data), path)
    parsed = parse_flow_csv(path, CANONICAL_COLUMN_MAP)
    encoded = default_encoding().encode(parsed)
    assert np.array_equal(encoded.labels, data.labels)
    assert np.allclose(encoded.features, data.features, rtol=0, atol=0)


def test_generate_rejects_bad_sizes():
    with pytest.raises(ValueError, match="n must be"):
        generate(make_profile("A"), 0)


def test_profile_validation():
    with pytest.raises(ValueError, match="divergence"):
        make_profile("A", divergence=-0.5)
    with pytest.raises(ValueError, match="class_mix"):
        make_profile("A", class_mix=(0.9, 0.2, 0.2))


def test_scenario_spreads_knobs_by_first_appearance():
    scenario = make_scenario(4, ("A", "A", "B", "B"), sizes=(100, 100, 50, 50), divergence=0.8, seed=5)
    assert scenario.assignment == ("A", "A", "B", "B")
    assert scenario.profiles["A"].divergence == 0.0
    assert scenario.profiles["B"].divergence == pytest.approx(0.8, abs=0)
    assert [d.sample_count for d in scenario.datasets] == [100, 100, 50, 50]


def test_scenario_three_distinct_profiles_space_evenly():
    scenario = make_scenario(3, ("A", "B", "C"), sizes=60, divergence=1.0, seed=1)
    assert scenario.profiles["A"].divergence == 0.0
    assert scenario.profiles["B"].divergence == pytest.approx(0.5, abs=1e-15)
    assert scenario.profiles["C"].divergence == pytest.approx(1.0, abs=0)
    assert [d.sample_count for d in scenario.datasets] == [60, 60, 60]


def test_scenario_single_profile_sits_at_base():
    scenario = make_scenario(2, ("A",), sizes=40, divergence=1.0, seed=2)
    assert scenario.assignment == ("A", "A")
    assert scenario.profiles["A"].divergence == 0.0


def test_scenario_cycles_profiles_over_workers():
    scenario = make_scenario(5, ("A", "A", "A", "B", "B"), sizes=30, divergence=1.0, seed=3)
    assert scenario.assignment == ("A", "A", "A", "B", "B")
    base = [d for d, pid in zip(scenario.datasets, scenario.assignment) if pid == "A"]
    assert len(base) == 3


def test_scenario_workers_draw_independent_data():
    scenario = make_scenario(2, ("A", "A"), sizes=300, divergence=0.0, seed=6)
    assert not np.array_equal(scenario.datasets[0].features, scenario.datasets[1].features)


def test_scenario_is_deterministic_in_the_master_seed():
    a = make_scenario(3, ("A", "B"), sizes=80, divergence=1.0, seed=9)
    b = make_scenario(3, ("A", "B"), sizes=80, divergence=1.0, seed=9)
    for x, y in zip(a.datasets, b.datasets):
        assert np.array_equal(x.features, y.features)
        assert np.array_equal(x.labels, y.labels)


def test_scenario_validation():
    with pytest.raises(ValueError, match="n_workers"):
        make_scenario(0, ("A",), sizes=10)
    with pytest.raises(ValueError, match="non-empty"):
        make_scenario(2, (), sizes=10)
    with pytest.raises(ValueError, match="size"):
        make_scenario(2, ("A",), sizes=(10, 0))
