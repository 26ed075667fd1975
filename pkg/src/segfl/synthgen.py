"""Synthetic flow-record generation for desk-scale experiments.

Each environment profile fixes class-conditional distributions over the seven
flow attributes: log-normal duration/packet/byte magnitudes, normal port
concentrations, and categorical protocol/flag tables.  A divergence knob
interpolates every parameter linearly between a base environment and an
alternative one whose class signatures are rotated: class c adopts the shape
of class c+1, so the pooled feature distribution is unchanged but the
class-to-signature mapping conflicts.  At zero divergence all profiles
coincide; as the knob grows, a model fit to the base environment serves the
diverged one increasingly badly, which is exactly what drives segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from segfl.flowdata import (
    CLASS_NAMES,
    RawFlowRecord,
    LabeledDataset,
    default_encoding,
    _largest_remainder_counts,
)

# CIDDS-like imbalance: normal : attacker : victim = 17 : 1.2 : 1.
DEFAULT_CLASS_MIX = (17 / 19.2, 1.2 / 19.2, 1 / 19.2)

_PORT_MAX = 65535

# Categorical tables are indexed against the shipped fixed vocabulary.
_ENCODING = default_encoding()
_N_PROTO = len(_ENCODING.protocol_codes)
_N_FLAGS = len(_ENCODING.flags_codes)


def _proto_vector(table: dict[str, float]) -> np.ndarray:
    vec = np.zeros(_N_PROTO)
    for token, p in table.items():
        vec[_ENCODING.protocol_codes[token]] = p
    return vec / vec.sum()


def _flags_vector(table: dict[str, float]) -> np.ndarray:
    vec = np.zeros(_N_FLAGS)
    for token, p in table.items():
        vec[_ENCODING.flags_codes[token]] = p
    return vec / vec.sum()


@dataclass(frozen=True)
class FlowComponent:
    """One mode of a traffic class: client-side or server-side flows."""

    weight: float
    log_duration: tuple[float, float]  # lognormal (mu, sigma), seconds
    src_port: tuple[float, float]  # normal (center, spread)
    dst_port: tuple[float, float]
    log_packets: tuple[float, float]
    log_bytes: tuple[float, float]
    protocol_probs: np.ndarray
    flags_probs: np.ndarray


@dataclass(frozen=True)
class ClassParams:
    """Mixture of flow modes for one traffic class in one environment."""

    components: tuple[FlowComponent, ...]

    def weights(self) -> np.ndarray:
        w = np.asarray([c.weight for c in self.components], dtype=np.float64)
        return w / w.sum()


# Base environment.  Every class is a two-mode mixture — a client-side mode
# (high source port, low destination port) and a server-side mode (the
# reverse) — so all three classes put mass in both port quadrants and the
# class identity is carried by flag patterns, durations, and volumes rather
# than by disjoint port islands.  That interleaving matters: undersampling
# keeps the majority samples nearest to minority neighbourhoods, which only
# exist if the majority is actually present there.
_NORMAL_FLAGS = _flags_vector(
    {
        ".AP.SF": 0.5,
        ".AP...": 0.22,
        ".A..SF": 0.08,
        "......": 0.05,
        "....S.": 0.05,
        ".A....": 0.04,
        ".A.R..": 0.02,
        ".A...F": 0.03,
        ".APRSF": 0.01,
    }
)
_ATTACKER_FLAGS = _flags_vector(
    {
        "....S.": 0.58,
        "......": 0.18,
        ".APRSF": 0.07,
        ".A.R..": 0.05,
        ".A....": 0.04,
        ".AP.SF": 0.04,
        ".A...F": 0.02,
        ".A..SF": 0.01,
        ".AP...": 0.01,
    }
)
_VICTIM_FLAGS = _flags_vector(
    {
        ".A...F": 0.44,
        ".A....": 0.28,
        ".A.R..": 0.14,
        "......": 0.06,
        ".AP.SF": 0.03,
        "....S.": 0.02,
        ".A..SF": 0.02,
        ".AP...": 0.005,
        ".APRSF": 0.005,
    }
)
_NORMAL_PROTO = _proto_vector({"TCP": 0.78, "UDP": 0.16, "ICMP": 0.06})
_ATTACKER_PROTO = _proto_vector({"TCP": 0.68, "UDP": 0.16, "ICMP": 0.16})
_VICTIM_PROTO = _proto_vector({"TCP": 0.72, "UDP": 0.16, "ICMP": 0.12})

_BASE = (
    ClassParams(  # normal: web clients plus ordinary server responses
        components=(
            FlowComponent(
                weight=0.62,
                log_duration=(np.log(1.2), 0.7),
                src_port=(38000.0, 12000.0),
                dst_port=(4500.0, 4000.0),
                log_packets=(np.log(9.0), 0.7),
                log_bytes=(np.log(3500.0), 0.8),
                protocol_probs=_NORMAL_PROTO,
                flags_probs=_NORMAL_FLAGS,
            ),
            FlowComponent(
                weight=0.38,
                log_duration=(np.log(0.4), 0.7),
                src_port=(7500.0, 6500.0),
                dst_port=(26000.0, 12000.0),
                log_packets=(np.log(5.0), 0.7),
                log_bytes=(np.log(1500.0), 0.9),
                protocol_probs=_NORMAL_PROTO,
                flags_probs=_NORMAL_FLAGS,
            ),
        )
    ),
    ClassParams(  # attacker: port scans plus low-port exploit traffic
        components=(
            FlowComponent(
                weight=0.70,
                log_duration=(np.log(0.02), 0.7),
                src_port=(44000.0, 11000.0),
                dst_port=(9000.0, 7000.0),
                log_packets=(np.log(2.0), 0.5),
                log_bytes=(np.log(120.0), 0.7),
                protocol_probs=_ATTACKER_PROTO,
                flags_probs=_ATTACKER_FLAGS,
            ),
            FlowComponent(
                weight=0.30,
                log_duration=(np.log(0.05), 0.7),
                src_port=(9000.0, 7000.0),
                dst_port=(33000.0, 13000.0),
                log_packets=(np.log(3.0), 0.6),
                log_bytes=(np.log(300.0), 0.8),
                protocol_probs=_ATTACKER_PROTO,
                flags_probs=_ATTACKER_FLAGS,
            ),
        )
    ),
    ClassParams(  # victim: servers answering the scans, two response modes
        components=(
            FlowComponent(
                weight=0.70,
                log_duration=(np.log(0.5), 0.8),
                src_port=(4500.0, 4500.0),
                dst_port=(47000.0, 8000.0),
                log_packets=(np.log(4.0), 0.7),
                log_bytes=(np.log(1000.0), 0.8),
                protocol_probs=_VICTIM_PROTO,
                flags_probs=_VICTIM_FLAGS,
            ),
            FlowComponent(
                weight=0.30,
                log_duration=(np.log(0.8), 0.8),
                src_port=(35000.0, 13000.0),
                dst_port=(15000.0, 9000.0),
                log_packets=(np.log(5.0), 0.7),
                log_bytes=(np.log(1200.0), 0.9),
                protocol_probs=_VICTIM_PROTO,
                flags_probs=_VICTIM_FLAGS,
            ),
        )
    ),
)


# Alternative environment: every class takes the shape of the next class, so
# the class-to-signature mapping conflicts with the base while the pooled
# feature marginals stay identical.  A model can only satisfy one labelling.
_ALT = tuple(_BASE[(c + 1) % len(_BASE)] for c in range(len(_BASE)))


def _lerp(a: float, b: float, t: float) -> float:
    return (1.0 - t) * a + t * b


def _lerp_pair(a: tuple[float, float], b: tuple[float, float], t: float) -> tuple[float, float]:
    return (_lerp(a[0], b[0], t), max(_lerp(a[1], b[1], t), 1e-9))


def _lerp_probs(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    mixed = np.clip((1.0 - t) * a + t * b, 0.0, None)
    return mixed / mixed.sum()


@dataclass(frozen=True)
class EnvironmentProfile:
    """One worker environment: class mix plus per-class distributions."""

    profile_id: str
    divergence: float
    class_mix: tuple[float, float, float]
    class_params: tuple[ClassParams, ...]

    def __post_init__(self):
        if self.divergence < 0:
            raise ValueError(f"divergence must be >= 0, got {self.divergence}")
        mix = np.asarray(self.class_mix, dtype=np.float64)
        if len(mix) != len(CLASS_NAMES) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
            raise ValueError(f"class_mix must be {len(CLASS_NAMES)} non-negative shares summing to 1")


def _lerp_component(a: FlowComponent, b: FlowComponent, t: float) -> FlowComponent:
    return FlowComponent(
        weight=_lerp(a.weight, b.weight, t),
        log_duration=_lerp_pair(a.log_duration, b.log_duration, t),
        src_port=_lerp_pair(a.src_port, b.src_port, t),
        dst_port=_lerp_pair(a.dst_port, b.dst_port, t),
        log_packets=_lerp_pair(a.log_packets, b.log_packets, t),
        log_bytes=_lerp_pair(a.log_bytes, b.log_bytes, t),
        protocol_probs=_lerp_probs(a.protocol_probs, b.protocol_probs, t),
        flags_probs=_lerp_probs(a.flags_probs, b.flags_probs, t),
    )


def make_profile(
    profile_id: str,
    divergence: float = 0.0,
    class_mix: tuple[float, float, float] = DEFAULT_CLASS_MIX,
) -> EnvironmentProfile:
    """Interpolate the built-in base and alternative environments."""
    t = float(divergence)
    params = tuple(
        ClassParams(
            components=tuple(
                _lerp_component(a, b, t)
                for a, b in zip(_BASE[c].components, _ALT[c].components, strict=True)
            )
        )
        for c in range(len(CLASS_NAMES))
    )
    return EnvironmentProfile(
        profile_id=profile_id,
        divergence=t,
        class_mix=tuple(float(m) for m in class_mix),
        class_params=params,
    )


def generate(profile: EnvironmentProfile, n: int, seed: int = 0) -> LabeledDataset:
    """Draw ``n`` labelled flow records from the profile's distributions.

    Class counts follow the mix exactly (largest-remainder apportionment);
    row order is shuffled.  All feature values satisfy the flow-record
    invariants: ports in [0, 65535], non-negative integer counts,
    non-negative duration, categorical codes from the shipped vocabulary.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    counts = _largest_remainder_counts(n, np.asarray(profile.class_mix))

    blocks = []
    label_blocks = []
    for cls, count in enumerate(counts):
        if count == 0:
            continue
        params = profile.class_params[cls]
        comp_idx = rng.choice(len(params.components), size=count, p=params.weights())
        duration = np.empty(count)
        src_port = np.empty(count)
        dst_port = np.empty(count)
        packets = np.empty(count)
        nbytes = np.empty(count)
        protocol = np.empty(count)
        flags = np.empty(count)
        for k, comp in enumerate(params.components):
            mask = comp_idx == k
            m = int(mask.sum())
            if m == 0:
                continue
            duration[mask] = rng.lognormal(*comp.log_duration, size=m)
            src_port[mask] = np.clip(np.round(rng.normal(*comp.src_port, size=m)), 0, _PORT_MAX)
            dst_port[mask] = np.clip(np.round(rng.normal(*comp.dst_port, size=m)), 0, _PORT_MAX)
            packets[mask] = np.round(rng.lognormal(*comp.log_packets, size=m))
            nbytes[mask] = np.round(rng.lognormal(*comp.log_bytes, size=m))
            protocol[mask] = rng.choice(_N_PROTO, size=m, p=comp.protocol_probs)
            flags[mask] = rng.choice(_N_FLAGS, size=m, p=comp.flags_probs)
        blocks.append(
            np.column_stack([duration, protocol, src_port, dst_port, packets, nbytes, flags])
        )
        label_blocks.append(np.full(count, cls, dtype=np.int64))

    features = np.concatenate(blocks, axis=0)
    labels = np.concatenate(label_blocks)
    order = rng.permutation(len(labels))
    return LabeledDataset(features[order], labels[order])


def to_records(dataset: LabeledDataset) -> list[RawFlowRecord]:
    """Decode a generated dataset into parseable raw records."""
    enc = _ENCODING
    records = []
    for row, label in zip(dataset.features, dataset.labels):
        records.append(
            RawFlowRecord(
                duration=float(row[0]),
                protocol=enc.decode_protocol(int(row[1])),
                src_port=int(row[2]),
                dst_port=int(row[3]),
                packets=int(row[4]),
                bytes=int(row[5]),
                flags=enc.decode_flags(int(row[6])),
                label=CLASS_NAMES[label],
            )
        )
    return records


@dataclass(frozen=True)
class ScenarioData:
    """Per-worker datasets plus the profile id each worker was drawn from."""

    datasets: tuple[LabeledDataset, ...]
    assignment: tuple[str, ...]
    profiles: dict[str, EnvironmentProfile]


def make_scenario(
    n_workers: int,
    profiles: tuple[str, ...],
    sizes,
    divergence: float = 1.0,
    class_mix: tuple[float, float, float] = DEFAULT_CLASS_MIX,
    seed: int = 0,
) -> ScenarioData:
    """Build per-worker datasets with profiles assigned round-robin.

    Distinct profile ids are spread evenly over [0, divergence] in order of
    first appearance: the first id is the undiverged base and the last sits
    at the full knob value, so ("A", "A", "B", "B") gives two base workers
    and two fully diverged ones.

    Args:
        n_workers: number of worker datasets.
        profiles: profile ids cycled over the workers.
        sizes: per-worker sample counts (scalar or one per worker).
        divergence: knob value for the most diverged profile.
        class_mix: shared class shares.
        seed: master seed; every worker draws from an independent stream.
    """
    if n_workers < 1:
        raise ValueError(f"n_workers must be >= 1, got {n_workers}")
    if not profiles:
        raise ValueError("profiles must be non-empty")
    sizes = np.broadcast_to(np.asarray(sizes, dtype=np.int64), (n_workers,))
    if np.any(sizes < 1):
        raise ValueError("every worker size must be >= 1")

    distinct = list(dict.fromkeys(profiles))
    knobs = {
        pid: (divergence * i / (len(distinct) - 1) if len(distinct) > 1 else 0.0)
        for i, pid in enumerate(distinct)
    }
    built = {pid: make_profile(pid, knobs[pid], class_mix) for pid in distinct}

    assignment = tuple(profiles[i % len(profiles)] for i in range(n_workers))
    datasets = []
    for i, pid in enumerate(assignment):
        worker_seed = np.random.SeedSequence([int(seed), 7919, i]).generate_state(1)[0]
        datasets.append(generate(built[pid], int(sizes[i]), int(worker_seed)))
    return ScenarioData(datasets=tuple(datasets), assignment=assignment, profiles=built)
