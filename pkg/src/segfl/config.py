"""Experiment configuration files: flat YAML keyed by the protocol symbols.

Recognized keys (defaults in parentheses):

    mode            centralized | fl | segmented_fl (segmented_fl)
    J               federated rounds (15)
    N_t             trainers per group per round (whole member list)
    E, B, eta       local epochs (1), minibatch size (128), SGD step (0.01)
    alpha, beta, gamma   aggregation blend, must sum to 1 (0.2 / 0.6 / 0.2)
    h_f             threshold fineness (7)
    h_j             rounds between evaluations (3)
    R_e             validation window length (3)
    max_groups      live-group cap (3)
    seed            master seed (0)
    hidden_dims     hidden layer widths ([64, 32])
    test_fraction   per-worker holdout share (0.10)
    resample_k      NearMiss neighbour count (3)
    target_ratio    majority target over smallest class (2.0)
    out_dir         output root used when neither --out nor SEGFL_OUT is set
    data            nested mapping describing the data source

Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from segfl.aggregation import AggregationWeights
from segfl.nnet import TrainConfig
from segfl.orchestrator import MODES, DataSpec, ExperimentConfig
from segfl.resample import ResampleConfig
from segfl.segmentation import SegmentationConfig


class ConfigError(Exception):
    """Invalid configuration; carries the file line when it is known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


_TOP_LEVEL_KEYS = {
    "mode",
    "J",
    "N_t",
    "E",
    "B",
    "eta",
    "alpha",
    "beta",
    "gamma",
    "h_f",
    "h_j",
    "R_e",
    "max_groups",
    "seed",
    "hidden_dims",
    "test_fraction",
    "resample_k",
    "target_ratio",
    "out_dir",
    "data",
}

_DATA_KEYS = {
    "source",
    "n_workers",
    "profiles",
    "sizes",
    "divergence",
    "class_mix",
    "paths",
    "corpus",
    "shares",
    "column_map",
}

_DEFAULTS: dict[str, Any] = {
    "mode": "segmented_fl",
    "J": 15,
    "N_t": None,
    "E": 1,
    "B": 128,
    "eta": 0.01,
    "alpha": 0.2,
    "beta": 0.6,
    "gamma": 0.2,
    "h_f": 7,
    "h_j": 3,
    "R_e": 3,
    "max_groups": 3,
    "seed": 0,
    "hidden_dims": [64, 32],
    "test_fraction": 0.10,
    "resample_k": 3,
    "target_ratio": 2.0,
    "out_dir": None,
}


@dataclass
class LoadedConfig:
    """A validated config plus the raw snapshot it was built from."""

    experiment: ExperimentConfig
    snapshot: dict
    out_dir: Optional[str]


def _key_lines(path: Path) -> dict[str, int]:
    """Map config keys (top level and data.*) to their 1-based file lines."""
    lines: dict[str, int] = {}
    try:
        root = yaml.compose(path.read_text())
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for key_node, value_node in root.value:
        lines[key_node.value] = key_node.start_mark.line + 1
        if key_node.value == "data" and isinstance(value_node, yaml.MappingNode):
            for sub_key, _ in value_node.value:
                lines[f"data.{sub_key.value}"] = sub_key.start_mark.line + 1
    return lines


def load_config(path, overrides: Optional[dict] = None) -> LoadedConfig:
    """Load, validate, and resolve a config file.

    Args:
        path: YAML file with the keys documented above.
        overrides: optional key -> value replacements (e.g. a --seed flag),
            applied before validation and reflected in the snapshot.

    Returns:
        LoadedConfig holding the ExperimentConfig, the fully resolved
        snapshot dict (defaults applied), and the configured output root.

    Raises:
        ConfigError: naming the offending key(s) and, when the key appears
            in the file, its line number.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", None)
        raise ConfigError(f"not valid YAML: {exc}", None if line is None else line + 1) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a key-value mapping")

    lines = _key_lines(path)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    def fail(key: str, message: str):
        raise ConfigError(message, lines.get(key))

    unknown = sorted(set(raw) - _TOP_LEVEL_KEYS)
    if unknown:
        fail(unknown[0], f"unknown config key(s): {', '.join(unknown)}")

    resolved = dict(_DEFAULTS)
    resolved.update({k: v for k, v in raw.items() if k != "data"})

    for key in ("J", "E", "B", "h_f", "h_j", "R_e", "max_groups", "seed"):
        if not isinstance(resolved[key], int) or isinstance(resolved[key], bool):
            fail(key, f"{key} must be an integer, got {resolved[key]!r}")
    if resolved["N_t"] is not None and (
        not isinstance(resolved["N_t"], int) or resolved["N_t"] < 1
    ):
        fail("N_t", f"N_t must be a positive integer, got {resolved['N_t']!r}")
    for key in ("eta", "alpha", "beta", "gamma", "test_fraction", "target_ratio"):
        if not isinstance(resolved[key], (int, float)) or isinstance(resolved[key], bool):
            fail(key, f"{key} must be a number, got {resolved[key]!r}")

    if resolved["mode"] not in MODES:
        fail("mode", f"mode must be one of {', '.join(MODES)}; got {resolved['mode']!r}")
    if resolved["J"] < 1:
        fail("J", f"J must be >= 1, got {resolved['J']}")

    blend = resolved["alpha"] + resolved["beta"] + resolved["gamma"]
    if min(resolved["alpha"], resolved["beta"], resolved["gamma"]) < 0 or abs(blend - 1.0) > 1e-9:
        fail(
            "alpha",
            f"alpha, beta, gamma must be non-negative and sum to 1; "
            f"got alpha={resolved['alpha']}, beta={resolved['beta']}, "
            f"gamma={resolved['gamma']} (sum {blend!r})",
        )

    data_raw = raw.get("data") or {}
    if not isinstance(data_raw, dict):
        fail("data", "data must be a mapping")
    unknown_data = sorted(set(data_raw) - _DATA_KEYS)
    if unknown_data:
        fail(f"data.{unknown_data[0]}", f"unknown data key(s): {', '.join(unknown_data)}")

    try:
        data_spec = _build_data_spec(data_raw)
        experiment = ExperimentConfig(
            mode=resolved["mode"],
            rounds=resolved["J"],
            participants_per_round=resolved["N_t"],
            train=TrainConfig(
                epochs=resolved["E"],
                batch_size=resolved["B"],
                learning_rate=float(resolved["eta"]),
                seed=resolved["seed"],
            ),
            weights=AggregationWeights(
                alpha=float(resolved["alpha"]),
                beta=float(resolved["beta"]),
                gamma=float(resolved["gamma"]),
            ),
            segmentation=SegmentationConfig(
                fineness=resolved["h_f"],
                eval_every=resolved["h_j"],
                window=resolved["R_e"],
                max_groups=resolved["max_groups"],
            ),
            hidden_dims=tuple(resolved["hidden_dims"]),
            resample=ResampleConfig(
                neighbors_k=resolved["resample_k"],
                target_ratio=float(resolved["target_ratio"]),
            ),
            test_fraction=float(resolved["test_fraction"]),
            seed=resolved["seed"],
            data=data_spec,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    snapshot = {k: v for k, v in sorted(resolved.items()) if k != "out_dir"}
    snapshot["data"] = dict(sorted(_data_snapshot(data_spec).items()))
    if resolved["out_dir"] is not None:
        snapshot["out_dir"] = resolved["out_dir"]
    return LoadedConfig(experiment=experiment, snapshot=snapshot, out_dir=resolved["out_dir"])


def _build_data_spec(data_raw: dict) -> DataSpec:
    source = data_raw.get("source", "synthetic")
    if source == "synthetic":
        n_workers = int(data_raw.get("n_workers", 4))
        sizes = data_raw.get("sizes", 8000)
        if isinstance(sizes, (int, float)):
            sizes = [int(sizes)] * n_workers
        if len(sizes) != n_workers:
            raise ValueError(
                f"data.sizes has {len(sizes)} entries for {n_workers} workers"
            )
        profiles = tuple(str(p) for p in data_raw.get("profiles", ("A", "A", "B", "B")))
        class_mix = data_raw.get("class_mix")
        return DataSpec(
            source="synthetic",
            n_workers=n_workers,
            profiles=profiles,
            sizes=tuple(int(s) for s in sizes),
            divergence=float(data_raw.get("divergence", 1.0)),
            class_mix=None if class_mix is None else tuple(float(m) for m in class_mix),
        )
    if source == "files":
        paths = tuple(str(p) for p in data_raw.get("paths", ()))
        if not paths:
            raise ValueError("data.paths must list one flow file per worker")
        return DataSpec(source="files", paths=paths, column_map=data_raw.get("column_map"))
    if source == "corpus":
        corpus = str(data_raw.get("corpus", ""))
        shares = tuple(float(s) for s in data_raw.get("shares", ()))
        if not corpus or not shares:
            raise ValueError("data source 'corpus' needs data.corpus and data.shares")
        return DataSpec(
            source="corpus", corpus=corpus, shares=shares, column_map=data_raw.get("column_map")
        )
    raise ValueError(f"data.source must be synthetic, files, or corpus; got {source!r}")


def _data_snapshot(spec: DataSpec) -> dict:
    if spec.source == "synthetic":
        snapshot = {
            "source": spec.source,
            "n_workers": spec.n_workers,
            "profiles": list(spec.profiles),
            "sizes": list(spec.sizes),
            "divergence": spec.divergence,
        }
        if spec.class_mix is not None:
            snapshot["class_mix"] = list(spec.class_mix)
        return snapshot
    if spec.source == "files":
        snapshot = {"source": spec.source, "paths": list(spec.paths)}
    else:
        snapshot = {"source": spec.source, "corpus": spec.corpus, "shares": list(spec.shares)}
    if spec.column_map is not None:
        snapshot["column_map"] = dict(spec.column_map)
    return snapshot
