"""Flow-record ingestion: parsing, encoding, scaling, splitting, sharding.

A flow record carries seven usable attributes (duration, protocol, source and
destination port, packet count, byte count, TCP flags) plus a class label.
Only the classes ``normal``, ``attacker`` and ``victim`` are kept; address and
timestamp columns are ignored entirely.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np

logger = logging.getLogger(__name__)

# Canonical attribute order; feature matrices use these columns.
FEATURE_NAMES = ("duration", "protocol", "src_port", "dst_port", "packets", "bytes", "flags")
CLASS_COLUMN = "class"

# Label codes are fixed, not fitted: downstream models and reports rely on them.
CLASS_NAMES = ("normal", "attacker", "victim")
CLASS_CODES = {name: code for code, name in enumerate(CLASS_NAMES)}

# Magnitude suffixes seen in flow exports ("2.1 M" bytes).
_SUFFIX_FACTORS = {"K": 1e3, "M": 1e6}

_PORT_MAX = 65535

# Fixed vocabulary used when no corpus is available to fit on: the common IP
# protocols plus every six-position flag string over the UAPRSF alphabet.
_PROTOCOL_VOCAB = ("GRE", "ICMP", "IGMP", "TCP", "UDP")
_FLAG_LETTERS = "UAPRSF"
_FLAGS_VOCAB = tuple(
    sorted(
        "".join(letter if on else "." for letter, on in zip(_FLAG_LETTERS, bits))
        for bits in product((False, True), repeat=len(_FLAG_LETTERS))
    )
)


@dataclass(frozen=True)
class RawFlowRecord:
    """One accepted flow row, fields already coerced but not yet encoded."""

    duration: float
    protocol: str
    src_port: int
    dst_port: int
    packets: int
    bytes: int
    flags: str
    label: str


@dataclass
class LabeledDataset:
    """Numeric feature matrix (n, 7) float64 plus int64 label vector."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{len(self.features)} feature rows"
            )

    @property
    def sample_count(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx])


def concat_datasets(datasets: list[LabeledDataset]) -> LabeledDataset:
    if not datasets:
        raise ValueError("cannot concatenate zero datasets")
    return LabeledDataset(
        np.concatenate([d.features for d in datasets], axis=0),
        np.concatenate([d.labels for d in datasets], axis=0),
    )


@dataclass(frozen=True)
class EncodingMap:
    """Token-to-code tables for the categorical attributes.

    Codes are dense integers assigned in lexicographic token order, so the
    mapping is a pure function of the token sets.  Label codes are the fixed
    ``CLASS_CODES`` table, never fitted.
    """

    protocol_codes: dict[str, int]
    flags_codes: dict[str, int]
    label_codes: dict[str, int] = field(default_factory=lambda: dict(CLASS_CODES))

    def encode_protocol(self, token: str) -> int:
        try:
            return self.protocol_codes[token]
        except KeyError:
            raise ValueError(f"unseen protocol token {token!r}") from None

    def encode_flags(self, token: str) -> int:
        try:
            return self.flags_codes[token]
        except KeyError:
            raise ValueError(f"unseen flags token {token!r}") from None

    def encode_label(self, token: str) -> int:
        try:
            return self.label_codes[token]
        except KeyError:
            raise ValueError(f"unknown class token {token!r}") from None

    def decode_label(self, code: int) -> str:
        return CLASS_NAMES[code]

    def decode_protocol(self, code: int) -> str:
        return _inverse(self.protocol_codes)[code]

    def decode_flags(self, code: int) -> str:
        return _inverse(self.flags_codes)[code]

    def encode(self, records: list[RawFlowRecord]) -> LabeledDataset:
        """Turn accepted records into a numeric LabeledDataset."""
        n = len(records)
        features = np.empty((n, len(FEATURE_NAMES)), dtype=np.float64)
        labels = np.empty(n, dtype=np.int64)
        for i, rec in enumerate(records):
            features[i] = (
                rec.duration,
                self.encode_protocol(rec.protocol),
                rec.src_port,
                rec.dst_port,
                rec.packets,
                rec.bytes,
                self.encode_flags(rec.flags),
            )
            labels[i] = self.encode_label(rec.label)
        return LabeledDataset(features, labels)


def _inverse(codes: dict[str, int]) -> dict[int, str]:
    return {code: tok for tok, code in codes.items()}


def _lexicographic_codes(tokens) -> dict[str, int]:
    return {tok: code for code, tok in enumerate(sorted(set(tokens)))}


def fit_encoding(records: list[RawFlowRecord]) -> EncodingMap:
    """Build an EncodingMap from the tokens observed in ``records``."""
    if not records:
        raise ValueError("cannot fit an encoding on zero records")
    return EncodingMap(
        protocol_codes=_lexicographic_codes(r.protocol for r in records),
        flags_codes=_lexicographic_codes(r.flags for r in records),
    )


def default_encoding() -> EncodingMap:
    """The fixed shipped vocabulary, used when all sources share one encoder."""
    return EncodingMap(
        protocol_codes=_lexicographic_codes(_PROTOCOL_VOCAB),
        flags_codes=_lexicographic_codes(_FLAGS_VOCAB),
    )


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature affine min-max transform fitted on one data shard.

    ``transform`` maps the fitted minimum to 0 and maximum to 1 without
    clamping, so out-of-range values land outside [0, 1].  A constant feature
    maps to 0 everywhere.
    """

    mins: np.ndarray
    ranges: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        safe = np.where(self.ranges > 0, self.ranges, 1.0)
        scaled = (features - self.mins) / safe
        return np.where(self.ranges > 0, scaled, 0.0)


def fit_scaler(dataset: LabeledDataset) -> ScalerParams:
    if dataset.sample_count == 0:
        raise ValueError("cannot fit a scaler on an empty dataset")
    mins = dataset.features.min(axis=0)
    ranges = dataset.features.max(axis=0) - mins
    return ScalerParams(mins=mins, ranges=ranges)


def scale_dataset(dataset: LabeledDataset, scaler: ScalerParams) -> LabeledDataset:
    return LabeledDataset(scaler.transform(dataset.features), dataset.labels.copy())


def _expand_magnitude(token: str) -> int:
    """Parse a count that may carry a K/M suffix ("2.1 M" -> 2100000)."""
    text = token.strip()
    if not text:
        raise ValueError("empty count")
    factor = _SUFFIX_FACTORS.get(text[-1].upper())
    if factor is not None:
        text = text[:-1].strip()
    else:
        factor = 1.0
    value = float(text) * factor
    return int(round(value))


def _parse_port(token: str) -> int:
    port = int(token.strip())
    if not 0 <= port <= _PORT_MAX:
        raise ValueError(f"port {port} out of range")
    return port


def parse_flow_csv(
    path,
    column_map: dict[str, str],
    rejects_path=None,
) -> list[RawFlowRecord]:
    """Parse a delimited flow export into accepted records.

    Args:
        path: CSV file with a header row.
        column_map: mapping of source column names to canonical attribute
            names (the seven ``FEATURE_NAMES`` plus ``class``).  Columns not
            mentioned (addresses, timestamps, ...) are ignored.
        rejects_path: optional file that receives one ``<line_no>\\t<reason>``
            line per skipped row.

    Returns:
        The accepted records in file order.  Rows that fail to parse and rows
        whose class is outside {normal, attacker, victim} are skipped and
        recorded in the rejects report.
    """
    canonical_needed = set(FEATURE_NAMES) | {CLASS_COLUMN}
    mapped = set(column_map.values())
    missing = canonical_needed - mapped
    if missing:
        raise ValueError(f"column_map does not cover attributes: {sorted(missing)}")

    records: list[RawFlowRecord] = []
    rejects: list[tuple[int, str]] = []
    dropped_classes: dict[str, int] = {}

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, no header row") from None
        header = [col.strip() for col in header]
        positions: dict[str, int] = {}
        for source, canonical in column_map.items():
            if source not in header:
                raise ValueError(f"{path}: column {source!r} not in header")
            positions[canonical] = header.index(source)

        for row in reader:
            if not row:
                continue
            line_no = reader.line_num
            try:
                record = _coerce_row(row, positions)
            except (ValueError, IndexError) as exc:
                rejects.append((line_no, str(exc)))
                continue
            if record is None:
                continue
            label = row[positions[CLASS_COLUMN]].strip().lower()
            if label not in CLASS_CODES:
                rejects.append((line_no, f"unsupported class {label!r}"))
                dropped_classes[label] = dropped_classes.get(label, 0) + 1
                continue
            records.append(record)

    if rejects_path is not None:
        with open(rejects_path, "w") as out:
            for line_no, reason in rejects:
                out.write(f"{line_no}\t{reason}\n")
    if dropped_classes:
        logger.info("dropped rows by unsupported class: %s", dict(sorted(dropped_classes.items())))
    if rejects:
        logger.info("rejected %d of %d data rows", len(rejects), len(rejects) + len(records))
    return records


def _coerce_row(row: list[str], positions: dict[str, int]) -> RawFlowRecord | None:
    try:
        duration = float(row[positions["duration"]])
    except ValueError:
        raise ValueError(f"bad duration {row[positions['duration']]!r}") from None
    if not np.isfinite(duration) or duration < 0:
        raise ValueError(f"bad duration {row[positions['duration']]!r}")
    protocol = row[positions["protocol"]].strip()
    if not protocol:
        raise ValueError("empty protocol")
    flags = row[positions["flags"]].strip()
    if not flags:
        raise ValueError("empty flags")
    packets = _expand_magnitude(row[positions["packets"]])
    if packets < 0:
        raise ValueError(f"negative packets {packets}")
    nbytes = _expand_magnitude(row[positions["bytes"]])
    if nbytes < 0:
        raise ValueError(f"negative bytes {nbytes}")
    return RawFlowRecord(
        duration=duration,
        protocol=protocol,
        src_port=_parse_port(row[positions["src_port"]]),
        dst_port=_parse_port(row[positions["dst_port"]]),
        packets=packets,
        bytes=nbytes,
        flags=flags,
        label=row[positions[CLASS_COLUMN]].strip().lower(),
    )


def write_flow_csv(records: list[RawFlowRecord], path) -> None:
    """Serialize records in the canonical column layout parse_flow_csv reads."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(FEATURE_NAMES) + [CLASS_COLUMN])
        for rec in records:
            writer.writerow(
                [
                    repr(rec.duration),
                    rec.protocol,
                    rec.src_port,
                    rec.dst_port,
                    rec.packets,
                    rec.bytes,
                    rec.flags,
                    rec.label,
                ]
            )


CANONICAL_COLUMN_MAP = {name: name for name in FEATURE_NAMES + (CLASS_COLUMN,)}


def _largest_remainder_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Apportion ``total`` into integer counts proportional to ``weights``.

    Floors the exact shares, then hands the leftover units to the largest
    fractional parts (ties to the lower index), so the counts sum to exactly
    ``total`` and each is within 1 of its exact share.
    """
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = int(total - counts.sum())
    if remainder > 0:
        fractional = exact - counts
        order = np.lexsort((np.arange(len(weights)), -fractional))
        counts[order[:remainder]] += 1
    return counts


def train_test_split(
    dataset: LabeledDataset, test_fraction: float = 0.10, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; per-class test counts stay within 1 of the exact share."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    labels = dataset.labels
    classes = np.unique(labels)
    for cls in classes:
        if int((labels == cls).sum()) < 2:
            raise ValueError(f"class {cls} has fewer than 2 samples, cannot stratify")

    # Total test size rounds the exact fraction; per-class counts apportion it
    # proportionally so no class is off by more than one sample.
    n = dataset.sample_count
    total_test = int(round(n * test_fraction))
    class_sizes = np.array([(labels == cls).sum() for cls in classes], dtype=np.float64)
    per_class = _largest_remainder_counts(total_test, class_sizes)

    rng = np.random.default_rng(seed)
    test_idx = []
    for cls, take in zip(classes, per_class):
        members = np.flatnonzero(labels == cls)
        picked = rng.permutation(len(members))[:take]
        test_idx.append(members[picked])
    test_mask = np.zeros(n, dtype=bool)
    if test_idx:
        test_mask[np.concatenate(test_idx)] = True
    return dataset.subset(np.flatnonzero(~test_mask)), dataset.subset(np.flatnonzero(test_mask))


def partition_workers(
    dataset: LabeledDataset, shares: list[float], seed: int = 0
) -> list[LabeledDataset]:
    """Split a corpus into disjoint worker shards proportional to ``shares``.

    The shares must sum to 1 (within 1e-9).  Rows are shuffled once under the
    seed and dealt out contiguously, so the shards are disjoint and exhaustive.
    """
    if len(shares) == 0:
        raise ValueError("shares must be non-empty")
    weights = np.asarray(shares, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError(f"shares must be non-negative, got {shares}")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"shares must sum to 1, got {weights.sum()!r}")

    counts = _largest_remainder_counts(dataset.sample_count, weights)
    perm = np.random.default_rng(seed).permutation(dataset.sample_count)
    shards = []
    start = 0
    for count in counts:
        picked = np.sort(perm[start : start + count])
        shards.append(dataset.subset(picked))
        start += count
    return shards
