"""Parsing, encoding, scaling, splitting, and sharding of flow records."""

from __future__ import annotations

import numpy as np
import pytest

from segfl.flowdata import (
    CANONICAL_COLUMN_MAP,
    CLASS_CODES,
    CLASS_NAMES,
    FEATURE_NAMES,
    LabeledDataset,
    RawFlowRecord,
    _largest_remainder_counts,
    default_encoding,
    fit_encoding,
    fit_scaler,
    parse_flow_csv,
    partition_workers,
    scale_dataset,
    train_test_split,
    write_flow_csv,
)

# CIDDS-style export: extra address/date columns that the parser must ignore.
_HEADER = "Date first seen,Duration,Proto,Src IP Addr,Src Pt,Dst IP Addr,Dst Pt,Packets,Bytes,Flags,class"
_COLUMN_MAP = {
    "Duration": "duration",
    "Proto": "protocol",
    "Src Pt": "src_port",
    "Dst Pt": "dst_port",
    "Packets": "packets",
    "Bytes": "bytes",
    "Flags": "flags",
    "class": "class",
}

_ROWS = [
    "2017-03-15 00:01:16,0.5,TCP,192.168.100.5,52128,192.168.220.16,80,7,532,.AP.SF,normal",
    "2017-03-15 00:01:17,1.25,TCP,192.168.100.5,52129,192.168.220.16,80,11,2.1 M,.AP.SF,normal",
    "2017-03-15 00:01:18,0.01,TCP,192.168.220.9,44421,192.168.100.5,22,3,4.5 K,....S.,attacker",
    "2017-03-15 00:01:19,0.2,TCP,192.168.100.5,52130,192.168.220.16,80,4,300,.AP...,suspicious",
    "2017-03-15 00:01:20,0.2,UDP,192.168.100.5,52131,192.168.220.16,53,1,66,......,unknown",
    "2017-03-15 00:01:21,0.2,TCP,192.168.100.5,70000,192.168.220.16,80,4,300,.AP...,normal",
    "2017-03-15 00:01:22,abc,TCP,192.168.100.5,52132,192.168.220.16,80,4,300,.AP...,normal",
    "2017-03-15 00:01:23,0.8,ICMP,192.168.100.5,0,192.168.220.16,0,2,128,......,victim",
]


@pytest.fixture()
def flow_csv(tmp_path):
    path = tmp_path / "flows.csv"
    path.write_text(_HEADER + "\n" + "\n".join(_ROWS) + "\n")
    return path


def test_parse_accepts_and_coerces_good_rows(flow_csv):
    records = parse_flow_csv(flow_csv, _COLUMN_MAP)
    assert [r.label for r in records] == ["normal", "normal", "attacker", "victim"]
    first = records[0]
    assert first == RawFlowRecord(
        duration=0.5,
        protocol="TCP",
        src_port=52128,
        dst_port=80,
        packets=7,
        bytes=532,
        flags=".AP.SF",
        label="normal",
    )


def test_parse_expands_magnitude_suffixes(flow_csv):
    # Hand-expanded values: "2.1 M" -> 2_100_000 and "4.5 K" -> 4_500.
    records = parse_flow_csv(flow_csv, _COLUMN_MAP)
    assert records[1].bytes == 2_100_000
    assert records[2].bytes == 4_500


def test_parse_drops_unsupported_classes_and_records_rejects(flow_csv, tmp_path):
    rejects = tmp_path / "rejects.txt"
    records = parse_flow_csv(flow_csv, _COLUMN_MAP, rejects_path=rejects)
    assert len(records) == 4

    lines = rejects.read_text().splitlines()
    # Header is file line 1, so data row i sits on line i + 1.
    by_line = {int(line.split("\t")[0]): line.split("\t")[1] for line in lines}
    assert set(by_line) == {5, 6, 7, 8}
    assert "suspicious" in by_line[5]
    assert "unknown" in by_line[6]
    assert "port" in by_line[7]
    assert "duration" in by_line[8]


def test_parse_requires_complete_column_map(flow_csv):
    incomplete = {k: v for k, v in _COLUMN_MAP.items() if v != "flags"}
    with pytest.raises(ValueError, match="flags"):
        parse_flow_csv(flow_csv, incomplete)


def test_parse_missing_source_column(flow_csv):
    wrong = dict(_COLUMN_MAP)
    wrong["Dst Port"] = wrong.pop("Dst Pt")
    with pytest.raises(ValueError, match="Dst Port"):
        parse_flow_csv(flow_csv, wrong)


def test_parse_roundtrip_is_idempotent(flow_csv, tmp_path):
    records = parse_flow_csv(flow_csv, _COLUMN_MAP)
    rewritten = tmp_path / "rewritten.csv"
    write_flow_csv(records, rewritten)
    again = parse_flow_csv(rewritten, CANONICAL_COLUMN_MAP)
    assert again == records

    encoding = default_encoding()
    first, second = encoding.encode(records), encoding.encode(again)
    assert np.array_equal(first.features, second.features)
    assert np.array_equal(first.labels, second.labels)


def _records(protocols, flags=".AP.SF", label="normal"):
    return [
        RawFlowRecord(
            duration=0.1,
            protocol=proto,
            src_port=1000,
            dst_port=80,
            packets=1,
            bytes=64,
            flags=flags,
            label=label,
        )
        for proto in protocols
    ]


def test_fit_encoding_assigns_lexicographic_codes():
    encoding = fit_encoding(_records(["TCP", "UDP", "ICMP", "TCP"]))
    assert encoding.protocol_codes == {"ICMP": 0, "TCP": 1, "UDP": 2}


def test_label_codes_are_fixed_and_roundtrip():
    encoding = default_encoding()
    assert encoding.label_codes == {"normal": 0, "attacker": 1, "victim": 2}
    for name in CLASS_NAMES:
        assert encoding.decode_label(encoding.encode_label(name)) == name
    assert CLASS_CODES == {"normal": 0, "attacker": 1, "victim": 2}


def test_unseen_token_is_an_error_not_a_silent_code():
    encoding = fit_encoding(_records(["TCP", "UDP"]))
    with pytest.raises(ValueError, match="GRE"):
        encoding.encode_protocol("GRE")
    with pytest.raises(ValueError, match="unknown class"):
        encoding.encode_label("suspicious")


def test_fit_encoding_rejects_empty_input():
    with pytest.raises(ValueError, match="zero records"):
        fit_encoding([])


def _column_dataset(*columns):
    features = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    return LabeledDataset(features, np.zeros(len(features), dtype=np.int64))


def test_scaler_maps_min_max_and_midpoint():
    scaler = fit_scaler(_column_dataset([2.0, 4.0, 6.0]))
    out = scaler.transform(np.array([[2.0], [4.0], [6.0]]))
    assert out[:, 0] == pytest.approx([0.0, 0.5, 1.0], abs=0)


def test_scaler_constant_column_maps_to_zero():
    scaler = fit_scaler(_column_dataset([5.0, 5.0, 5.0]))
    assert np.all(scaler.transform(np.array([[5.0], [7.0]])) == 0.0)


def test_scaler_is_unclamped_outside_fit_range():
    scaler = fit_scaler(_column_dataset([2.0, 6.0]))
    assert scaler.transform(np.array([[10.0]]))[0, 0] == pytest.approx(2.0)
    assert scaler.transform(np.array([[0.0]]))[0, 0] == pytest.approx(-0.5)


def test_scale_dataset_keeps_fit_data_in_unit_range():
    rng = np.random.default_rng(11)
    data = LabeledDataset(rng.normal(size=(50, 4)) * 100, rng.integers(0, 3, size=50))
    scaled = scale_dataset(data, fit_scaler(data))
    assert scaled.features.min() >= 0.0
    assert scaled.features.max() <= 1.0
    assert np.array_equal(scaled.labels, data.labels)


def _random_dataset(rng, n, n_classes=3, n_features=2):
    return LabeledDataset(
        rng.normal(size=(n, n_features)),
        rng.integers(0, n_classes, size=n),
    )


def test_split_sizes_are_exact_for_round_fractions():
    data = _random_dataset(np.random.default_rng(0), 100)
    train, test = train_test_split(data, 0.1, seed=3)
    assert (train.sample_count, test.sample_count) == (90, 10)


def test_split_is_deterministic_per_seed():
    data = _random_dataset(np.random.default_rng(1), 200)
    a_train, a_test = train_test_split(data, 0.25, seed=42)
    b_train, b_test = train_test_split(data, 0.25, seed=42)
    assert np.array_equal(a_train.features, b_train.features)
    assert np.array_equal(a_test.features, b_test.features)
    c_train, _ = train_test_split(data, 0.25, seed=43)
    assert not np.array_equal(a_train.features, c_train.features)


def test_split_preserves_class_ratio_within_one_sample():
    # Brute-force count check across uneven class sizes and odd fractions.
    rng = np.random.default_rng(7)
    for trial in range(20):
        sizes = rng.integers(10, 80, size=3)
        labels = np.repeat(np.arange(3), sizes)
        data = LabeledDataset(rng.normal(size=(len(labels), 2)), labels)
        fraction = float(rng.uniform(0.1, 0.4))
        _, test = train_test_split(data, fraction, seed=trial)
        total_test = int(round(data.sample_count * fraction))
        for cls, size in enumerate(sizes):
            exact = total_test * size / data.sample_count
            got = int((test.labels == cls).sum())
            assert abs(got - exact) <= 1.0


def test_split_is_a_partition_of_the_input():
    rng = np.random.default_rng(5)
    data = LabeledDataset(
        np.arange(60, dtype=np.float64).reshape(60, 1), rng.integers(0, 3, size=60)
    )
    train, test = train_test_split(data, 0.3, seed=9)
    recombined = sorted(np.concatenate([train.features[:, 0], test.features[:, 0]]).tolist())
    assert recombined == data.features[:, 0].tolist()


def test_split_rejects_tiny_classes_and_bad_fractions():
    data = LabeledDataset(np.zeros((3, 1)), np.array([0, 0, 1]))
    with pytest.raises(ValueError, match="fewer than 2"):
        train_test_split(data, 0.5, seed=0)
    ok = LabeledDataset(np.zeros((4, 1)), np.array([0, 0, 1, 1]))
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError, match="test_fraction"):
            train_test_split(ok, bad, seed=0)


def test_partition_single_share_is_identity():
    data = _random_dataset(np.random.default_rng(2), 37)
    (shard,) = partition_workers(data, [1.0], seed=4)
    assert np.array_equal(np.sort(shard.features, axis=0), np.sort(data.features, axis=0))
    assert shard.sample_count == 37


def test_partition_shards_are_disjoint_and_exhaustive():
    # Unique feature values make multiset equality imply disjointness.
    rng = np.random.default_rng(31)
    data = LabeledDataset(
        np.arange(1000, dtype=np.float64).reshape(1000, 1),
        rng.integers(0, 3, size=1000),
    )
    for trial in range(10):
        raw = rng.uniform(0.5, 2.0, size=rng.integers(2, 6))
        shares = (raw / raw.sum()).tolist()
        shares[-1] = 1.0 - sum(shares[:-1])
        shards = partition_workers(data, shares, seed=trial)
        union = np.concatenate([s.features[:, 0] for s in shards])
        assert len(union) == 1000
        assert sorted(union.tolist()) == data.features[:, 0].tolist()
        for shard, share in zip(shards, shares):
            assert abs(shard.sample_count - 1000 * share) <= 1.0


def test_partition_validates_shares():
    data = _random_dataset(np.random.default_rng(3), 10)
    with pytest.raises(ValueError, match="non-empty"):
        partition_workers(data, [], seed=0)
    with pytest.raises(ValueError, match="sum to 1"):
        partition_workers(data, [0.5, 0.4], seed=0)
    with pytest.raises(ValueError, match="non-negative"):
        partition_workers(data, [1.5, -0.5], seed=0)


# Published per-node sizes for the four-worker corpus distribution, including
# the 90/10 split: node 1 ends up with 873,727 training and 97,081 test rows
# out of the 6,472,054-sample corpus.
_CORPUS_TOTAL = 6_472_054
_NODE_SHARES = [0.15, 0.35, 0.30, 0.20]
_NODE_TOTALS = [970_808, 2_265_219, 1_941_616, 1_294_411]


def test_partition_reproduces_published_node_counts():
    counts = _largest_remainder_counts(_CORPUS_TOTAL, np.asarray(_NODE_SHARES))
    assert counts.tolist() == _NODE_TOTALS

    # End to end on the full row count (single feature keeps memory small).
    data = LabeledDataset(
        np.zeros((_CORPUS_TOTAL, 1), dtype=np.float64),
        np.zeros(_CORPUS_TOTAL, dtype=np.int64),
    )
    shards = partition_workers(data, _NODE_SHARES, seed=0)
    assert [s.sample_count for s in shards] == _NODE_TOTALS

    train, test = train_test_split(shards[0], 0.10, seed=0)
    assert (train.sample_count, test.sample_count) == (873_727, 97_081)


def test_feature_layout_matches_declared_order():
    assert FEATURE_NAMES == (
        "duration",
        "protocol",
        "src_port",
        "dst_port",
        "packets",
        "bytes",
        "flags",
    )
    rec = RawFlowRecord(
        duration=2.5, protocol="UDP", src_port=5, dst_port=6, packets=7, bytes=8,
        flags="......", label="victim",
    )
    encoded = default_encoding().encode([rec])
    enc = default_encoding()
    assert encoded.features[0].tolist() == [
        2.5, enc.protocol_codes["UDP"], 5, 6, 7, 8, enc.flags_codes["......"],
    ]
    assert encoded.labels[0] == 2
